//! Kolmogorov and Gelfand width estimates.
//!
//! `d_k(M, X) = inf_{dim L <= k} sup_{x in M} inf_{y in L} ||x - y||_X`. For a
//! polytope the inner supremum is attained at a vertex, so the deviation of a
//! fixed subspace is a finite maximum of convex minimizations.
//!
//! Duality ties the two sides together: for `z in L^⊥`,
//! `||z||_{inf,1} / ||z||_{2,inf}` never exceeds the `ℓ_{2,1}` deviation of
//! `B_{1,inf}` from `L`. A witness built in `L^⊥` therefore gives a lower value
//! that any upper estimate on `L` must dominate.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::blocks::{mixed_norm_slice, parse_csv_vector, BlockStructure, BlockVector, Exponent, MixedNormSpec};
use crate::error::{Error, Result};
use crate::rng::{normal_vec, stream_rng};
use crate::subspace::Subspace;
use crate::witness::{verify_trace, WitnessParams, WitnessTrace};

/// Largest vertex list the enumerators will build.
pub const VERTEX_LIMIT: usize = 1_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WidthKind {
    Exact,
    Upper,
    Lower,
}

impl fmt::Display for WidthKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WidthKind::Exact => "exact",
            WidthKind::Upper => "upper",
            WidthKind::Lower => "lower",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WidthEstimate {
    pub value: f64,
    pub kind: WidthKind,
    pub method: String,
    pub details: BTreeMap<String, String>,
}

impl WidthEstimate {
    fn new(value: f64, kind: WidthKind, method: &str) -> Self {
        Self { value, kind, method: method.into(), details: BTreeMap::new() }
    }

    fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.details.insert(key.into(), value.to_string());
        self
    }
}

/// `d_k(B_1^N, ℓ_2^N) = sqrt(1 - k/N)`.
pub fn exact_width_b1_l2(ambient_dim: usize, k: usize) -> Result<WidthEstimate> {
    if ambient_dim == 0 || k > ambient_dim {
        return Err(Error::InvalidArgument(format!("need 0 <= k <= N with N >= 1, got N={ambient_dim}, k={k}")));
    }
    let value = (1.0 - k as f64 / ambient_dim as f64).sqrt();
    Ok(WidthEstimate::new(value, WidthKind::Exact, "identity").with("N", ambient_dim).with("k", k))
}

/// Settings for the smoothed first-order best-approximation solver.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinimizerOptions {
    pub starts: usize,
    /// Iterations per smoothing level.
    pub max_iter: usize,
    pub mu_start: f64,
    pub mu_end: f64,
}

impl Default for MinimizerOptions {
    fn default() -> Self {
        Self { starts: 5, max_iter: 300, mu_start: 1e-2, mu_end: 1e-8 }
    }
}

/// Result of `min_c ||x - Qc||`.
#[derive(Clone, Debug, PartialEq)]
pub struct Approximation {
    /// True (unsmoothed) norm of the residual at `coeffs`.
    pub value: f64,
    pub coeffs: Vec<f64>,
    /// Gradient of the norm at the residual; an approximate dual certificate.
    pub dual: Vec<f64>,
}

fn check_target(spec: MixedNormSpec) -> Result<()> {
    if !spec.is_basic() {
        return Err(Error::UnsupportedExponents { p: spec.p.to_string(), q: spec.q.to_string() });
    }
    Ok(())
}

fn is_euclidean(spec: MixedNormSpec) -> bool {
    spec.p.is_two() && spec.q.is_two()
}

// Smoothed |.|_p on one block; writes d value / d a into `grad`.
fn smooth_inner(a: &[f64], p: Exponent, mu: f64, grad: &mut [f64]) -> f64 {
    if p.is_one() {
        let mut v = 0.0;
        for (g, &x) in grad.iter_mut().zip(a) {
            let h = (x * x + mu * mu).sqrt();
            v += h;
            *g = x / h;
        }
        v
    } else if p.is_two() {
        let v = (a.iter().map(|x| x * x).sum::<f64>() + mu * mu).sqrt();
        for (g, &x) in grad.iter_mut().zip(a) {
            *g = x / v;
        }
        v
    } else {
        let top = a.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()));
        let mut sum = 0.0;
        for (g, &x) in grad.iter_mut().zip(a) {
            let up = ((x - top) / mu).exp();
            let down = ((-x - top) / mu).exp();
            sum += up + down;
            *g = up - down;
        }
        grad.iter_mut().for_each(|g| *g /= sum);
        top + mu * sum.ln()
    }
}

// Smoothed outer norm of the block values; writes the weights into `weights`.
fn smooth_outer(u: &[f64], q: Exponent, mu: f64, weights: &mut [f64]) -> f64 {
    if q.is_one() {
        weights.iter_mut().for_each(|w| *w = 1.0);
        u.iter().sum()
    } else if q.is_two() {
        let v = (u.iter().map(|x| x * x).sum::<f64>() + mu * mu).sqrt();
        for (w, &x) in weights.iter_mut().zip(u) {
            *w = x / v;
        }
        v
    } else {
        let top = u.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (w, &x) in weights.iter_mut().zip(u) {
            *w = ((x - top) / mu).exp();
            sum += *w;
        }
        weights.iter_mut().for_each(|w| *w /= sum);
        top + mu * sum.ln()
    }
}

struct Smoothed<'a> {
    structure: BlockStructure,
    spec: MixedNormSpec,
    x: &'a [f64],
    q: &'a DMatrix<f64>,
}

impl Smoothed<'_> {
    fn residual(&self, c: &DVector<f64>) -> Vec<f64> {
        let qc = self.q * c;
        self.x.iter().zip(qc.iter()).map(|(a, b)| a - b).collect()
    }

    fn true_norm(&self, r: &[f64]) -> f64 {
        mixed_norm_slice(r, self.structure, self.spec)
    }

    // value and gradient in residual space
    fn eval_residual(&self, r: &[f64], mu: f64, grad: &mut [f64]) -> f64 {
        let n = self.structure.n();
        let m = self.structure.m();
        let mut u = vec![0.0; m];
        for s in 0..m {
            let range = s * n..(s + 1) * n;
            u[s] = smooth_inner(&r[range.clone()], self.spec.p, mu, &mut grad[range]);
        }
        let mut weights = vec![0.0; m];
        let value = smooth_outer(&u, self.spec.q, mu, &mut weights);
        for s in 0..m {
            grad[s * n..(s + 1) * n].iter_mut().for_each(|g| *g *= weights[s]);
        }
        value
    }

    fn eval(&self, c: &DVector<f64>, mu: f64, grad_r: &mut [f64]) -> (f64, DVector<f64>, f64) {
        let r = self.residual(c);
        let f = self.eval_residual(&r, mu, grad_r);
        let g = -(self.q.tr_mul(&DVector::from_column_slice(grad_r)));
        (f, g, self.true_norm(&r))
    }
}

/// Best approximation of `x` from the column span of `q` (orthonormal columns)
/// in the mixed norm `spec`. Exact for `(2,2)`; otherwise a smoothed gradient
/// method with Barzilai-Borwein steps, Armijo backtracking and annealed
/// smoothing, reporting the true norm at the best iterate.
pub fn best_approximation(
    x: &[f64],
    q: &DMatrix<f64>,
    structure: BlockStructure,
    spec: MixedNormSpec,
    opts: &MinimizerOptions,
) -> Result<Approximation> {
    check_target(spec)?;
    structure.check_len(x.len())?;
    if q.nrows() != x.len() {
        return Err(Error::DimensionMismatch { expected: x.len(), got: q.nrows() });
    }
    let k = q.ncols();
    let proj = q.tr_mul(&DVector::from_column_slice(x));
    if is_euclidean(spec) || k == 0 {
        let c = if k == 0 { DVector::zeros(0) } else { proj };
        let problem = Smoothed { structure, spec, x, q };
        let r = problem.residual(&c);
        let value = problem.true_norm(&r);
        let mut dual = vec![0.0; x.len()];
        if value > 0.0 {
            problem.eval_residual(&r, 0.0_f64.max(1e-300), &mut dual);
        }
        return Ok(Approximation { value, coeffs: c.as_slice().to_vec(), dual });
    }

    let problem = Smoothed { structure, spec, x, q };
    let scale = problem.true_norm(x).max(f64::MIN_POSITIVE);
    let mut starts = vec![proj.clone(), DVector::zeros(k)];
    let mut rng = stream_rng(0x5eed_0f57_a7e5, 0);
    while starts.len() < opts.starts.max(1) {
        let noise = normal_vec(&mut rng, k);
        starts.push(&proj + DVector::from_vec(noise) * (0.1 * scale));
    }
    starts.truncate(opts.starts.max(1));

    let mut best: Option<(f64, DVector<f64>)> = None;
    let mut grad_r = vec![0.0; x.len()];
    for start in starts {
        let mut c = start;
        let track = |c: &DVector<f64>, value: f64, best: &mut Option<(f64, DVector<f64>)>| {
            if best.as_ref().is_none_or(|(b, _)| value < *b) {
                *best = Some((value, c.clone()));
            }
        };
        let mut mu = opts.mu_start * scale;
        let mu_end = opts.mu_end * scale;
        loop {
            let (mut f, mut g, tv) = problem.eval(&c, mu, &mut grad_r);
            track(&c, tv, &mut best);
            let mut step = mu;
            for _ in 0..opts.max_iter {
                let gg = g.norm_squared();
                if gg.sqrt() <= 1e-14 * scale.max(1.0) {
                    break;
                }
                let mut accepted = None;
                for _ in 0..60 {
                    let trial = &c - &g * step;
                    let (ft, gt, tvt) = problem.eval(&trial, mu, &mut grad_r);
                    if ft <= f - 1e-4 * step * gg {
                        accepted = Some((trial, ft, gt, tvt));
                        break;
                    }
                    step *= 0.5;
                }
                let Some((trial, ft, gt, tvt)) = accepted else { break };
                track(&trial, tvt, &mut best);
                let s = &trial - &c;
                let y = &gt - &g;
                let sy = s.dot(&y);
                let decrease = f - ft;
                step = if sy > 0.0 { s.norm_squared() / sy } else { step * 2.0 };
                c = trial;
                f = ft;
                g = gt;
                if decrease <= 1e-15 * f.abs().max(scale) {
                    break;
                }
            }
            if mu <= mu_end * (1.0 + 1e-12) {
                break;
            }
            mu = (mu * 0.1).max(mu_end);
        }
    }
    let (value, c) = best.expect("at least one start");
    let r = problem.residual(&c);
    let mut dual = vec![0.0; x.len()];
    problem.eval_residual(&r, opts.mu_end * scale, &mut dual);
    Ok(Approximation { value, coeffs: c.as_slice().to_vec(), dual })
}

fn vertex_distances(
    vertices: &[BlockVector],
    subspace: &Subspace,
    structure: BlockStructure,
    target: MixedNormSpec,
    opts: &MinimizerOptions,
) -> Result<Vec<Approximation>> {
    vertices
        .par_iter()
        .map(|v| {
            if v.structure() != structure {
                return Err(Error::InvalidStructure(format!("vertex has structure {:?}", v.structure())));
            }
            best_approximation(v.coords(), subspace.basis(), structure, target, opts)
        })
        .collect()
}

fn check_vertices(vertices: &[BlockVector], subspace: &Subspace) -> Result<BlockStructure> {
    let first = vertices.first().ok_or_else(|| Error::InvalidArgument("vertex list is empty".into()))?;
    let structure = first.structure();
    if subspace.ambient_dim() != structure.dim() {
        return Err(Error::DimensionMismatch { expected: structure.dim(), got: subspace.ambient_dim() });
    }
    Ok(structure)
}

/// `max_v min_{y in L} ||v - y||_target` over the vertex list.
pub fn deviation_from_subspace(vertices: &[BlockVector], subspace: &Subspace, target: MixedNormSpec) -> Result<WidthEstimate> {
    deviation_with(vertices, subspace, target, &MinimizerOptions::default())
}

pub fn deviation_with(
    vertices: &[BlockVector],
    subspace: &Subspace,
    target: MixedNormSpec,
    opts: &MinimizerOptions,
) -> Result<WidthEstimate> {
    check_target(target)?;
    let structure = check_vertices(vertices, subspace)?;
    let dists = vertex_distances(vertices, subspace, structure, target, opts)?;
    let (worst, value) = dists
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, a)| if a.value > acc.1 { (i, a.value) } else { acc });
    let closed = is_euclidean(target) || subspace.dim() == 0;
    let (kind, method) = if closed { (WidthKind::Exact, "projection") } else { (WidthKind::Upper, "smoothed-gradient") };
    Ok(WidthEstimate::new(value, kind, method)
        .with("target", target)
        .with("dim", subspace.dim())
        .with("vertices", vertices.len())
        .with("worst_vertex", worst))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeuristicOptions {
    pub max_iter: usize,
    pub initial_step: f64,
    pub min_step: f64,
    pub minimizer: MinimizerOptions,
}

impl Default for HeuristicOptions {
    fn default() -> Self {
        Self {
            max_iter: 300,
            initial_step: 0.5,
            min_step: 1e-4,
            minimizer: MinimizerOptions { starts: 1, max_iter: 60, ..MinimizerOptions::default() },
        }
    }
}

#[derive(Clone, Debug)]
pub struct HeuristicResult {
    pub estimate: WidthEstimate,
    pub subspace: Subspace,
}

/// Heuristic upper bound on `d_k(conv(vertices), X)`.
pub fn kolmogorov_upper_heuristic(
    vertices: &[BlockVector],
    structure: BlockStructure,
    target: MixedNormSpec,
    dim_k: usize,
    restarts: usize,
    seed: u64,
) -> Result<WidthEstimate> {
    kolmogorov_search(vertices, structure, target, dim_k, restarts, seed, &HeuristicOptions::default()).map(|r| r.estimate)
}

/// Alternating search over `k`-dimensional subspaces. Each round finds the
/// worst vertices of the current subspace, moves the basis along the
/// softmax-weighted descent direction `sum_v w_v g_v c_v^T` (with `c_v` the
/// coefficients of the best approximation and `g_v` its dual certificate),
/// and keeps the top `k` principal directions of the moved basis. Steps that
/// do not lower the worst distance are rejected and the step shrinks.
pub fn kolmogorov_search(
    vertices: &[BlockVector],
    structure: BlockStructure,
    target: MixedNormSpec,
    dim_k: usize,
    restarts: usize,
    seed: u64,
    opts: &HeuristicOptions,
) -> Result<HeuristicResult> {
    check_target(target)?;
    let big_n = structure.dim();
    if dim_k >= big_n {
        return Err(Error::InvalidArgument(format!("need k < N = {big_n}, got {dim_k}")));
    }
    check_vertices(vertices, &Subspace::trivial(big_n))?;
    if vertices[0].structure() != structure {
        return Err(Error::InvalidStructure("vertex structure differs from the target structure".into()));
    }
    if dim_k == 0 {
        let value = vertices.iter().map(|v| mixed_norm_slice(v.coords(), structure, target)).fold(0.0, f64::max);
        let estimate = WidthEstimate::new(value, WidthKind::Upper, "heuristic").with("k", 0).with("restarts", 0);
        return Ok(HeuristicResult { estimate, subspace: Subspace::trivial(big_n) });
    }
    let runs: Vec<Result<(f64, Subspace, usize)>> = (0..restarts.max(1) as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream_rng(seed, r);
            search_from(vertices, structure, target, Subspace::random(big_n, dim_k, &mut rng), opts)
        })
        .collect();
    let mut best: Option<(f64, Subspace, usize, usize)> = None;
    for (r, run) in runs.into_iter().enumerate() {
        let (value, subspace, iters) = run?;
        if best.as_ref().is_none_or(|b| value < b.0) {
            best = Some((value, subspace, iters, r));
        }
    }
    let (search_value, subspace, iters, restart) = best.expect("at least one restart");
    // both are upper values for the same subspace
    let value = if is_euclidean(target) {
        search_value
    } else {
        let full = vertex_distances(vertices, &subspace, structure, target, &MinimizerOptions::default())?;
        full.iter().map(|a| a.value).fold(f64::NEG_INFINITY, f64::max).min(search_value)
    };
    let estimate = WidthEstimate::new(value, WidthKind::Upper, "heuristic")
        .with("k", dim_k)
        .with("target", target)
        .with("restarts", restarts.max(1))
        .with("best_restart", restart)
        .with("accepted_steps", iters)
        .with("seed", seed);
    Ok(HeuristicResult { estimate, subspace })
}

fn search_from(
    vertices: &[BlockVector],
    structure: BlockStructure,
    target: MixedNormSpec,
    start: Subspace,
    opts: &HeuristicOptions,
) -> Result<(f64, Subspace, usize)> {
    let big_n = structure.dim();
    let k = start.dim();
    let worst = |d: &[Approximation]| d.iter().map(|a| a.value).fold(f64::NEG_INFINITY, f64::max);
    let mut current = start;
    let mut dists = vertex_distances(vertices, &current, structure, target, &opts.minimizer)?;
    let mut value = worst(&dists);
    let mut step = opts.initial_step;
    let mut accepted = 0;
    for _ in 0..opts.max_iter {
        if step < opts.min_step || value <= 0.0 {
            break;
        }
        let tau = 0.02 * value;
        let weights: Vec<f64> = dists.iter().map(|a| ((a.value - value) / tau).exp()).collect();
        let total: f64 = weights.iter().sum();
        let mut direction = DMatrix::<f64>::zeros(big_n, k);
        for (a, w) in dists.iter().zip(&weights) {
            let g = DVector::from_column_slice(&a.dual);
            let c = DVector::from_column_slice(&a.coeffs);
            direction.ger(w / total, &g, &c, 1.0);
        }
        let moved = current.basis() + direction * step;
        let Some(candidate) = principal_subspace(&moved, k) else { break };
        let cand_dists = vertex_distances(vertices, &candidate, structure, target, &opts.minimizer)?;
        let cand_value = worst(&cand_dists);
        if cand_value < value {
            current = candidate;
            dists = cand_dists;
            value = cand_value;
            accepted += 1;
            step = (step * 1.5).min(4.0);
        } else {
            step *= 0.5;
        }
    }
    Ok((value, current, accepted))
}

// Top-k left singular directions of `a`.
fn principal_subspace(a: &DMatrix<f64>, k: usize) -> Option<Subspace> {
    let svd = a.clone().svd(true, false);
    let u = svd.u?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]).then(i.cmp(&j)));
    let cols: Vec<Vec<f64>> = order.iter().take(k).map(|&i| u.column(i).iter().copied().collect()).collect();
    let s = Subspace::orthonormalize(a.nrows(), &cols).ok()?;
    (s.dim() == k).then_some(s)
}

/// The `2N` vertices `±e_i` of `B_1^N`.
pub fn b1_vertices(structure: BlockStructure) -> Vec<BlockVector> {
    let mut out = Vec::with_capacity(2 * structure.dim());
    for i in 0..structure.dim() {
        for sign in [1.0, -1.0] {
            let mut c = vec![0.0; structure.dim()];
            c[i] = sign;
            out.push(BlockVector::new(structure, c).expect("length matches"));
        }
    }
    out
}

/// All `(2n)^m` vertices of `B_{1,inf}^{n,m}`: one signed unit coordinate per block.
pub fn b1inf_vertices(structure: BlockStructure) -> Result<Vec<BlockVector>> {
    let per_block = 2 * structure.n();
    let count = (per_block as f64).powi(structure.m() as i32);
    if count > VERTEX_LIMIT as f64 {
        return Err(Error::VertexOverflow { count, limit: VERTEX_LIMIT });
    }
    let total = count as usize;
    let mut out = Vec::with_capacity(total);
    let mut digits = vec![0usize; structure.m()];
    for _ in 0..total {
        let mut c = vec![0.0; structure.dim()];
        for (s, &d) in digits.iter().enumerate() {
            let sign = if d % 2 == 0 { 1.0 } else { -1.0 };
            c[s * structure.n() + d / 2] = sign;
        }
        out.push(BlockVector::new(structure, c)?);
        for d in digits.iter_mut().rev() {
            *d += 1;
            if *d < per_block {
                break;
            }
            *d = 0;
        }
    }
    Ok(out)
}

/// Uniformly sampled vertices of `B_{1,inf}^{n,m}`, for sizes past the
/// enumeration limit. Deviations over a sample only see part of the polytope.
pub fn sampled_b1inf_vertices<R: Rng + ?Sized>(structure: BlockStructure, count: usize, rng: &mut R) -> Vec<BlockVector> {
    (0..count)
        .map(|_| {
            let mut c = vec![0.0; structure.dim()];
            for s in 0..structure.m() {
                let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
                c[s * structure.n() + rng.gen_range(0..structure.n())] = sign;
            }
            BlockVector::new(structure, c).expect("length matches")
        })
        .collect()
}

/// One vertex per non-empty, non-comment line.
pub fn load_vertices(path: &Path, structure: BlockStructure) -> Result<Vec<BlockVector>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| BlockVector::new(structure, parse_csv_vector(l)?))
        .collect()
}

const NORM_INF_1: MixedNormSpec = MixedNormSpec { p: Exponent::Infinity, q: Exponent::Finite(1.0) };
const NORM_2_INF: MixedNormSpec = MixedNormSpec { p: Exponent::Finite(2.0), q: Exponent::Infinity };

/// `||x||_{inf,1} / ||x||_{2,inf}` as a lower value.
pub fn certificate_ratio(x: &BlockVector) -> Result<WidthEstimate> {
    let structure = x.structure();
    let num = mixed_norm_slice(x.coords(), structure, NORM_INF_1);
    let den = mixed_norm_slice(x.coords(), structure, NORM_2_INF);
    if den == 0.0 {
        return Err(Error::Degenerate("witness vector is zero".into()));
    }
    Ok(WidthEstimate::new(num / den, WidthKind::Lower, "witness")
        .with("norm_inf1", num)
        .with("norm_2inf", den)
        .with("n", structure.n())
        .with("m", structure.m()))
}

/// Per-subspace certificate of a witness trace, recomputed from `x`.
pub fn gelfand_certificate_from_witness(trace: &WitnessTrace) -> Result<WidthEstimate> {
    certificate_ratio(&trace.x).map(|e| e.with("steps", trace.steps.len()).with("verified", false))
}

/// Runs the verifier first and refuses traces failing a structural check.
pub fn verified_certificate(trace: &WitnessTrace, subspace: &Subspace, params: &WitnessParams) -> Result<WidthEstimate> {
    let report = verify_trace(trace, subspace, trace.structure, params)?;
    if !report.structural_pass {
        let names: Vec<&str> = report.failed().iter().map(|c| c.name.as_str()).collect();
        return Err(Error::TraceMismatch(format!("failed checks: {}", names.join(", "))));
    }
    certificate_ratio(&trace.x).map(|e| e.with("steps", trace.steps.len()).with("verified", true))
}
