//! Witness vectors for the mixed-norm width of a product of octahedra.
//!
//! Given `L ⊂ R^N` with `dim L >= N/2`, [`run_witness`] builds unit vectors
//! `x_1, ..., x_l` in shrinking subspaces `Z_j ⊂ L`, each with one large
//! coordinate `|x_j(i_j)| >= 1/2`, and combines them with signs from the
//! balancing solver into `x = sum_j eps_j x_j` with `||x||_{2,inf}` bounded and
//! `||x||_{inf,1}` of order `m`.
//!
//! After step `j` the vanishing set `Λ_j` collects
//! 1. coordinates whose accumulated energy `sum_{k<=j} x_k(i)^2` reached `1/n`,
//! 2. the whole block of every large coordinate,
//! 3. every block whose accumulated energy `sum_{k<=j} |x_k[s]|^2` reached the cap,
//!
//! and `Z_{j+1} = {z in L : z(i) = 0 on Λ_j}`. Entry `x_j(i)` is large when
//! `i = i_j`, intermediate when it is the entry at which coordinate `i`
//! crosses `1/n`, and small otherwise. `v_j` keeps large and intermediate
//! entries, `w_j` the small ones.

use serde::{Deserialize, Serialize};

use crate::balance::{BalanceInstance, BalanceResult, Solver};
use crate::blocks::{mixed_norm, BlockStructure, BlockVector, Exponent, MixedNormSpec};
use crate::error::{Error, Result};
use crate::subspace::Subspace;

const NORM_INF_1: MixedNormSpec = MixedNormSpec { p: Exponent::Infinity, q: Exponent::Finite(1.0) };
const NORM_2_INF: MixedNormSpec = MixedNormSpec { p: Exponent::Finite(2.0), q: Exponent::Infinity };

/// Coordinates of a hit block must reach this in absolute value.
pub const HIT_THRESHOLD: f64 = 0.25;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WitnessParams {
    /// `None` runs adaptively until `dim Z_{j+1} < dim_floor_fraction * N`.
    pub max_steps: Option<usize>,
    pub large_threshold: f64,
    /// Defaults to `1/n` when `None`.
    pub intermediate_energy: Option<f64>,
    pub block_energy_cap: f64,
    pub dim_floor_fraction: f64,
    pub solver: Solver,
}

impl Default for WitnessParams {
    fn default() -> Self {
        Self {
            max_steps: None,
            large_threshold: 0.5,
            intermediate_energy: None,
            block_energy_cap: 1.0,
            dim_floor_fraction: 0.25,
            solver: Solver::default(),
        }
    }
}

impl WitnessParams {
    /// Fixed step budget `max(1, floor(m/12))`, the a-priori safe count.
    pub fn strict(structure: BlockStructure) -> Self {
        Self { max_steps: Some((structure.m() / 12).max(1)), ..Self::default() }
    }

    pub fn intermediate_energy_for(&self, structure: BlockStructure) -> f64 {
        self.intermediate_energy.unwrap_or(1.0 / structure.n() as f64)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.large_threshold > 0.0
            && self.block_energy_cap > 0.0
            && self.intermediate_energy.is_none_or(|e| e > 0.0)
            && self.dim_floor_fraction > 0.0
            && self.dim_floor_fraction <= 0.5;
        if !ok {
            return Err(Error::InvalidArgument(format!("invalid witness parameters {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// 1-based step index.
    pub j: usize,
    /// The unit vector `x_j`.
    pub x: Vec<f64>,
    /// 1-based large coordinate `i_j`.
    pub i_star: usize,
    /// Sorted 1-based vanishing set `Λ_j` after this step.
    pub lambda: Vec<usize>,
    /// `dim Z_j`.
    pub dim_z: usize,
    /// How many coordinates of `x_j` reached the large threshold.
    pub large_count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub norm_inf1: f64,
    pub norm_2inf: f64,
    /// `norm_inf1 / norm_2inf`, zero for `x = 0`.
    pub ratio: f64,
    pub blocks_hit: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WitnessTrace {
    pub structure: BlockStructure,
    pub params: WitnessParams,
    pub subspace_dim: usize,
    pub steps: Vec<StepRecord>,
    pub epsilon: BalanceResult,
    pub v: BlockVector,
    pub w: BlockVector,
    pub x: BlockVector,
    /// Large coordinates `i_1, ..., i_l` in step order.
    pub large_indices: Vec<usize>,
    /// `max_i |f_i|` over the small-entry columns.
    pub max_column_norm: f64,
    pub certificate: Certificate,
    pub stop_reason: String,
    pub warnings: Vec<String>,
}

impl WitnessTrace {
    pub fn steps_taken(&self) -> usize {
        self.steps.len()
    }

    /// `max_{i in I} |w(i)|`.
    pub fn max_w_on_large(&self) -> f64 {
        self.large_indices.iter().map(|&i| self.w.get(i).abs()).fold(0.0, f64::max)
    }
}

/// Large/intermediate split of the step array: `v_j` and `w_j` per step.
struct Split {
    v: Vec<Vec<f64>>,
    w: Vec<Vec<f64>>,
}

fn split_steps(steps: &[Vec<f64>], i_stars: &[usize], threshold: f64) -> Split {
    let n = steps.first().map_or(0, |x| x.len());
    let mut acc = vec![0.0; n];
    let mut v = Vec::with_capacity(steps.len());
    let mut w = Vec::with_capacity(steps.len());
    for (x, &istar) in steps.iter().zip(i_stars) {
        let mut vj = vec![0.0; n];
        let mut wj = vec![0.0; n];
        for i in 0..n {
            let before = acc[i];
            acc[i] += x[i] * x[i];
            let crossing = before < threshold && acc[i] >= threshold;
            if i + 1 == istar || crossing {
                vj[i] = x[i];
            } else {
                wj[i] = x[i];
            }
        }
        v.push(vj);
        w.push(wj);
    }
    Split { v, w }
}

fn combine(eps: &[i8], rows: &[Vec<f64>], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for (&e, row) in eps.iter().zip(rows) {
        if e != 0 {
            let e = e as f64;
            for (o, v) in out.iter_mut().zip(row) {
                *o += e * v;
            }
        }
    }
    out
}

fn certificate(x: &BlockVector, large: &[usize], eps: &[i8]) -> Certificate {
    let norm_inf1 = mixed_norm(x, NORM_INF_1);
    let norm_2inf = mixed_norm(x, NORM_2_INF);
    let ratio = if norm_2inf > 0.0 { norm_inf1 / norm_2inf } else { 0.0 };
    let blocks_hit = large
        .iter()
        .zip(eps)
        .filter(|(&i, &e)| e != 0 && x.get(i).abs() >= HIT_THRESHOLD)
        .count();
    Certificate { norm_inf1, norm_2inf, ratio, blocks_hit }
}

/// The balancing family: per block `{f_i : i in Δ_s}`, plus `{f_i / |f_i|}` for
/// every large coordinate with `f_i != 0`. `f_i = (w_j(i))_j`.
pub fn balance_family(structure: BlockStructure, w: &[Vec<f64>], large: &[usize]) -> Result<BalanceInstance> {
    let l = w.len();
    let column = |i: usize| -> Vec<f64> { w.iter().map(|wj| wj[i - 1]).collect() };
    let mut sets = Vec::with_capacity(structure.m() + large.len());
    for s in 1..=structure.m() {
        sets.push(structure.block_range(s).map(column).collect());
    }
    for &i in large {
        let f = column(i);
        let norm = f.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            sets.push(vec![f.iter().map(|v| v / norm).collect()]);
        }
    }
    BalanceInstance::new(l, sets)
}

/// Runs the step construction on `subspace` and balances the result.
pub fn run_witness(subspace: &Subspace, structure: BlockStructure, params: &WitnessParams) -> Result<WitnessTrace> {
    params.validate()?;
    let n_dim = structure.dim();
    if subspace.ambient_dim() != n_dim {
        return Err(Error::DimensionMismatch { expected: n_dim, got: subspace.ambient_dim() });
    }
    let floor = params.dim_floor_fraction * n_dim as f64;
    if (subspace.dim() as f64) < floor || subspace.dim() == 0 {
        return Err(Error::DimensionTooSmall { dim: subspace.dim(), needed: floor });
    }
    let mut warnings = Vec::new();
    if 2 * subspace.dim() < n_dim {
        warnings.push(format!("dim L = {} is below N/2 = {}", subspace.dim(), n_dim as f64 / 2.0));
    }

    let n = structure.n();
    let thr = params.intermediate_energy_for(structure);
    let mut in_lambda = vec![false; n_dim];
    let mut col_energy = vec![0.0; n_dim];
    let mut block_energy = vec![0.0; structure.m()];
    let mut z = subspace.clone();
    let mut steps: Vec<StepRecord> = Vec::new();
    let stop_reason;
    loop {
        if params.max_steps.is_some_and(|cap| steps.len() >= cap) {
            stop_reason = "max_steps reached".to_string();
            break;
        }
        if (z.dim() as f64) < floor || z.dim() == 0 {
            stop_reason = format!("dim Z = {} below floor {floor}", z.dim());
            break;
        }
        let (x, i_star) = z.peaky_unit_vector()?;
        if x[i_star - 1].abs() < params.large_threshold {
            stop_reason = format!("peak {} below the large threshold", x[i_star - 1].abs());
            break;
        }
        let large_count = x.iter().filter(|v| v.abs() >= params.large_threshold).count();
        let mut new_coords = Vec::new();
        let mark = |i: usize, in_lambda: &mut [bool], new_coords: &mut Vec<usize>| {
            if !in_lambda[i] {
                in_lambda[i] = true;
                new_coords.push(i + 1);
            }
        };
        for (i, v) in x.iter().enumerate() {
            col_energy[i] += v * v;
            block_energy[i / n] += v * v;
        }
        for i in 0..n_dim {
            if col_energy[i] >= thr {
                mark(i, &mut in_lambda, &mut new_coords);
            }
        }
        let star_block = structure.block_of(i_star);
        for s in 1..=structure.m() {
            if s == star_block || block_energy[s - 1] >= params.block_energy_cap {
                for i in structure.block_range(s) {
                    mark(i - 1, &mut in_lambda, &mut new_coords);
                }
            }
        }
        new_coords.sort_unstable();
        let dim_z = z.dim();
        z = z.restrict_to_vanishing(&new_coords)?;
        let lambda = (1..=n_dim).filter(|&i| in_lambda[i - 1]).collect();
        steps.push(StepRecord { j: steps.len() + 1, x, i_star, lambda, dim_z, large_count });
    }
    if steps.is_empty() {
        return Err(Error::Degenerate(format!("no step could be taken: {stop_reason}")));
    }

    let rows: Vec<Vec<f64>> = steps.iter().map(|s| s.x.clone()).collect();
    let large: Vec<usize> = steps.iter().map(|s| s.i_star).collect();
    let split = split_steps(&rows, &large, thr);
    let instance = balance_family(structure, &split.w, &large)?;
    let max_column_norm = (1..=n_dim)
        .map(|i| split.w.iter().map(|wj| wj[i - 1] * wj[i - 1]).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    let l = steps.len();
    let epsilon = params.solver.solve(&instance, l.div_ceil(2))?;
    let eps = &epsilon.epsilon;
    let x = BlockVector::new(structure, combine(eps, &rows, n_dim))?;
    let v = BlockVector::new(structure, combine(eps, &split.v, n_dim))?;
    let w = BlockVector::new(structure, combine(eps, &split.w, n_dim))?;
    let cert = certificate(&x, &large, eps);
    Ok(WitnessTrace {
        structure,
        params: params.clone(),
        subspace_dim: subspace.dim(),
        steps,
        epsilon,
        v,
        w,
        x,
        large_indices: large,
        max_column_norm,
        certificate: cert,
        stop_reason,
        warnings,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub bound: f64,
    pub pass: bool,
    /// Structural checks must pass for a valid trace; the others are reported
    /// flags (they may fail at small `n`).
    pub structural: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub checks: Vec<Check>,
    pub degenerate: bool,
    pub structural_pass: bool,
    pub max_block_w: f64,
    pub max_w_on_large: f64,
    pub norm_inf1: f64,
    pub norm_2inf: f64,
}

impl VerificationReport {
    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn failed(&self) -> Vec<&Check> {
        self.checks.iter().filter(|c| c.structural && !c.pass).collect()
    }
}

struct Checks(Vec<Check>);

impl Checks {
    // pass iff value <= bound
    fn at_most(&mut self, name: &str, value: f64, bound: f64, structural: bool) {
        let pass = value <= bound;
        self.0.push(Check { name: name.into(), value, bound, pass, structural });
    }

    fn at_least(&mut self, name: &str, value: f64, bound: f64, structural: bool) {
        let pass = value >= bound;
        self.0.push(Check { name: name.into(), value, bound, pass, structural });
    }

    fn flag(&mut self, name: &str, pass: bool) {
        self.0.push(Check { name: name.into(), value: pass as u8 as f64, bound: 1.0, pass, structural: true });
    }
}

fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Re-derives every claimed property of `trace` from the step vectors, the
/// signs and `subspace`, without using the stored `v`, `w` or certificate.
pub fn verify_trace(
    trace: &WitnessTrace,
    subspace: &Subspace,
    structure: BlockStructure,
    params: &WitnessParams,
) -> Result<VerificationReport> {
    let n_dim = structure.dim();
    if trace.structure != structure {
        return Err(Error::TraceMismatch(format!("structure {:?} vs {:?}", trace.structure, structure)));
    }
    if subspace.ambient_dim() != n_dim {
        return Err(Error::TraceMismatch(format!("subspace lives in R^{}, trace in R^{n_dim}", subspace.ambient_dim())));
    }
    let l = trace.steps.len();
    if trace.epsilon.epsilon.len() != l || trace.x.coords().len() != n_dim {
        return Err(Error::TraceMismatch("sign vector or witness has the wrong length".into()));
    }
    for s in &trace.steps {
        if s.x.len() != n_dim || s.i_star == 0 || s.i_star > n_dim {
            return Err(Error::TraceMismatch(format!("step {} is malformed", s.j)));
        }
    }
    let n = structure.n();
    let thr = params.intermediate_energy_for(structure);
    let mut c = Checks(Vec::new());
    let x = trace.x.coords();
    let x_norm = norm2(x);
    let eps = &trace.epsilon.epsilon;

    // membership of the final vector and the steps
    c.at_most("x_in_subspace", subspace.distance(x)?, 1e-8 * x_norm, true);
    let worst_step = trace.steps.iter().map(|s| subspace.distance(&s.x)).collect::<Result<Vec<_>>>()?;
    c.at_most("steps_in_subspace", worst_step.into_iter().fold(0.0, f64::max), 1e-8, true);
    let unit = trace.steps.iter().map(|s| (norm2(&s.x) - 1.0).abs()).fold(0.0, f64::max);
    c.at_most("steps_unit", unit, 1e-10, true);
    let min_peak = trace.steps.iter().map(|s| s.x[s.i_star - 1].abs()).fold(f64::INFINITY, f64::min);
    c.at_least("large_coordinates", min_peak, params.large_threshold, true);

    // recompute the vanishing sets and check each step vanishes on the previous one
    let mut in_lambda = vec![false; n_dim];
    let mut col_energy = vec![0.0; n_dim];
    let mut block_energy = vec![0.0; structure.m()];
    let mut lambda_ok = true;
    let mut vanish = 0.0_f64;
    for step in &trace.steps {
        for i in 0..n_dim {
            if in_lambda[i] {
                vanish = vanish.max(step.x[i].abs());
            }
        }
        for (i, v) in step.x.iter().enumerate() {
            col_energy[i] += v * v;
            block_energy[i / n] += v * v;
        }
        let star_block = structure.block_of(step.i_star);
        for i in 0..n_dim {
            let s = i / n + 1;
            if col_energy[i] >= thr || s == star_block || block_energy[s - 1] >= params.block_energy_cap {
                in_lambda[i] = true;
            }
        }
        let expected: Vec<usize> = (1..=n_dim).filter(|&i| in_lambda[i - 1]).collect();
        lambda_ok &= expected == step.lambda;
    }
    c.flag("lambda_consistent", lambda_ok);
    c.at_most("vanishing_on_lambda", vanish, 1e-10, true);
    let max_block_energy = block_energy.iter().copied().fold(0.0, f64::max);
    c.at_most("block_energy", max_block_energy, params.block_energy_cap + 1.0, true);

    let mut blocks_seen = vec![false; structure.m()];
    let mut distinct = true;
    for s in &trace.steps {
        let b = structure.block_of(s.i_star) - 1;
        distinct &= !blocks_seen[b];
        blocks_seen[b] = true;
    }
    c.flag("large_in_distinct_blocks", distinct);

    // recompute the split
    let rows: Vec<Vec<f64>> = trace.steps.iter().map(|s| s.x.clone()).collect();
    let large: Vec<usize> = trace.steps.iter().map(|s| s.i_star).collect();
    c.flag("large_indices_match", large == trace.large_indices);
    let split = split_steps(&rows, &large, thr);
    let single = (0..n_dim).all(|i| split.v.iter().filter(|vj| vj[i] != 0.0).count() <= 1);
    c.flag("v_columns_single_nonzero", single);
    let max_col2 = (0..n_dim).map(|i| split.w.iter().map(|wj| wj[i] * wj[i]).sum::<f64>()).fold(0.0, f64::max);
    c.at_most("column_energy", max_col2, thr + 1e-12, true);

    let eps_valid = eps.iter().all(|e| [-1, 0, 1].contains(e));
    let support = eps.iter().filter(|&&e| e != 0).count();
    c.flag("epsilon_valid", eps_valid && support == trace.epsilon.support);
    c.at_least("epsilon_support", support as f64, l.div_ceil(2) as f64, true);

    let v = combine(eps, &split.v, n_dim);
    let w = combine(eps, &split.w, n_dim);
    let x_re = combine(eps, &rows, n_dim);
    let scale = x_norm.max(1.0);
    c.at_most("x_equals_sum", max_abs_diff(&x_re, x), 1e-12 * scale, true);
    let vw: Vec<f64> = v.iter().zip(&w).map(|(a, b)| a + b).collect();
    c.at_most("x_equals_v_plus_w", max_abs_diff(&vw, x), 1e-12 * scale, true);

    let mut block_excess = f64::NEG_INFINITY;
    for s in 1..=structure.m() {
        let r = structure.block_slice_range(s);
        let lhs: f64 = v[r.clone()].iter().map(|a| a * a).sum();
        let rhs: f64 = split.v.iter().map(|vj| vj[r.clone()].iter().map(|a| a * a).sum::<f64>()).sum();
        block_excess = block_excess.max(lhs - rhs);
    }
    c.at_most("v_block_expansion", block_excess, 1e-10, true);

    let vb = BlockVector::new(structure, v)?;
    let v_inf1 = mixed_norm(&vb, NORM_INF_1);
    c.at_least("v_inf1_vs_support", v_inf1, params.large_threshold * support as f64 - 1e-12, true);

    let wb = BlockVector::new(structure, w)?;
    let max_block_w = mixed_norm(&wb, NORM_2_INF);
    let max_w_on_large = large.iter().map(|&i| wb.get(i).abs()).fold(0.0, f64::max);
    c.at_least("max_block_w", -max_block_w, f64::NEG_INFINITY, false);
    c.at_most("w_small_on_large", max_w_on_large, HIT_THRESHOLD - f64::EPSILON, false);
    let mut peak_ok = true;
    for (&i, &e) in large.iter().zip(eps) {
        if e != 0 {
            peak_ok &= x[i - 1].abs() >= params.large_threshold - wb.get(i).abs() - 1e-12;
        }
    }
    c.flag("large_survive_balancing", peak_ok);

    let xb = BlockVector::new(structure, x.to_vec())?;
    let cert = certificate(&xb, &large, eps);
    let stored = &trace.certificate;
    let cert_ok = (cert.norm_inf1 - stored.norm_inf1).abs() <= 1e-12 * cert.norm_inf1.max(1.0)
        && (cert.norm_2inf - stored.norm_2inf).abs() <= 1e-12 * cert.norm_2inf.max(1.0)
        && (cert.ratio - stored.ratio).abs() <= 1e-12 * cert.ratio.max(1.0)
        && cert.blocks_hit == stored.blocks_hit;
    c.flag("certificate_recomputed", cert_ok);

    let structural_pass = c.0.iter().filter(|k| k.structural).all(|k| k.pass);
    Ok(VerificationReport {
        checks: c.0,
        degenerate: x.iter().all(|&a| a == 0.0),
        structural_pass,
        max_block_w,
        max_w_on_large,
        norm_inf1: cert.norm_inf1,
        norm_2inf: cert.norm_2inf,
    })
}

/// A-priori size bound `|Λ_l| <= 3 l n` and whether it stays within `N/4`,
/// which keeps `dim Z_{l+1} >= N/4` for `dim L >= N/2`; equivalent to `l <= m/12`.
pub fn step_budget_check(structure: BlockStructure, l: usize) -> (usize, bool) {
    let bound = 3 * l * structure.n();
    (bound, 4 * bound <= structure.dim())
}
