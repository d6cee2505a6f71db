//! Signed selections `eps in {0, ±1}^d` with small quadratic forms.
//!
//! Each vector set `X_s` defines `h_s(v) = (sum_{x in X_s} <v, x>^2)^{1/2}`.
//! Given sets of energy at most one, the solvers look for `eps` with support at
//! least `min_support` minimising `max_s h_s(eps)`.

use std::cmp::Ordering;

use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{energy, random_vector_set};
use crate::rng::{fill_normal, stream_rng};

/// Largest dimension accepted by [`balance_exhaustive`].
pub const EXHAUSTIVE_MAX_D: usize = 16;

const ENERGY_SLACK: f64 = 1e-12;

/// Family of vector sets `X_1..X_m` in `R^d`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "InstanceFile", into = "InstanceFile")]
pub struct BalanceInstance {
    d: usize,
    sets: Vec<Vec<Vec<f64>>>,
    #[serde(skip)]
    forms: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct InstanceFile {
    d: usize,
    sets: Vec<Vec<Vec<f64>>>,
}

impl TryFrom<InstanceFile> for BalanceInstance {
    type Error = Error;
    fn try_from(f: InstanceFile) -> Result<Self> {
        BalanceInstance::new(f.d, f.sets)
    }
}

impl From<BalanceInstance> for InstanceFile {
    fn from(b: BalanceInstance) -> Self {
        InstanceFile { d: b.d, sets: b.sets }
    }
}

impl BalanceInstance {
    /// Validates dimensions and per-set energy `sum |x|^2 <= 1`. Zero vectors
    /// are dropped since they contribute nothing to `h_s`.
    pub fn new(d: usize, sets: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidArgument("balance dimension must be positive".into()));
        }
        let mut cleaned = Vec::with_capacity(sets.len());
        for (s, set) in sets.into_iter().enumerate() {
            for x in &set {
                if x.len() != d {
                    return Err(Error::DimensionMismatch { expected: d, got: x.len() });
                }
            }
            let set: Vec<Vec<f64>> = set.into_iter().filter(|x| x.iter().any(|&v| v != 0.0)).collect();
            let e = energy(&set);
            if e > 1.0 + ENERGY_SLACK {
                return Err(Error::InvalidArgument(format!("set {} has energy {e} > 1", s + 1)));
            }
            cleaned.push(set);
        }
        let forms = cleaned.iter().map(|set| gram(d, set)).collect();
        Ok(Self { d, sets: cleaned, forms })
    }

    /// `m` sets of `per_set` Gaussian vectors, each set rescaled to energy one.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, d: usize, m: usize, per_set: usize) -> Result<Self> {
        let sets = (0..m).map(|_| random_vector_set(rng, d, per_set, 1.0)).collect();
        Self::new(d, sets)
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn m(&self) -> usize {
        self.sets.len()
    }

    pub fn sets(&self) -> &[Vec<Vec<f64>>] {
        &self.sets
    }

    /// `v -> max_s h_s(v)^2` through the precomputed Gram matrices.
    fn max_form(&self, eps: &[i8]) -> f64 {
        let support: Vec<(usize, f64)> =
            eps.iter().enumerate().filter(|(_, &e)| e != 0).map(|(i, &e)| (i, e as f64)).collect();
        let d = self.d;
        let mut best = 0.0_f64;
        for a in &self.forms {
            let mut q = 0.0;
            for &(i, ei) in &support {
                let row = &a[i * d..(i + 1) * d];
                let mut r = 0.0;
                for &(j, ej) in &support {
                    r += row[j] * ej;
                }
                q += ei * r;
            }
            best = best.max(q);
        }
        best
    }
}

fn gram(d: usize, set: &[Vec<f64>]) -> Vec<f64> {
    let mut a = vec![0.0; d * d];
    for x in set {
        for i in 0..d {
            for j in 0..d {
                a[i * d + j] += x[i] * x[j];
            }
        }
    }
    a
}

/// `(h_1(v), ..., h_m(v))`, evaluated from the vectors themselves.
pub fn h_values(instance: &BalanceInstance, v: &[f64]) -> Result<Vec<f64>> {
    if v.len() != instance.d {
        return Err(Error::DimensionMismatch { expected: instance.d, got: v.len() });
    }
    Ok(instance.sets.iter().map(|set| crate::gaussian::quadratic_h(set, v)).collect())
}

/// `t(d, m) = max(1, sqrt(2 ln(14 m / (d ln 2))))`, the smallest `t` with
/// `exp(-2 m exp(-t^2/2)) >= 2^{-d/7}`.
pub fn target_t(d: usize, m: usize) -> Result<f64> {
    if d == 0 || m == 0 {
        return Err(Error::InvalidArgument(format!("target_t needs d, m >= 1 (d={d}, m={m})")));
    }
    let arg = 14.0 * m as f64 / (d as f64 * std::f64::consts::LN_2);
    let t2 = 2.0 * arg.ln();
    Ok(if t2 <= 1.0 { 1.0 } else { t2.sqrt() })
}

/// `8 t(d, m)`: a selection inside `4V`, `V = ∩_s 2t E_s`, has `h_s <= 8t`.
pub fn certified_threshold(d: usize, m: usize) -> Result<f64> {
    Ok(8.0 * target_t(d, m)?)
}

/// `ceil(d / 2)`.
pub fn default_min_support(d: usize) -> usize {
    d.div_ceil(2)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BalanceResult {
    pub epsilon: Vec<i8>,
    pub support: usize,
    /// `max_s h_s(epsilon)`.
    pub achieved: f64,
    pub solver: String,
    pub seed: Option<u64>,
}

impl BalanceResult {
    fn finish(instance: &BalanceInstance, epsilon: Vec<i8>, solver: &str, seed: Option<u64>) -> Self {
        let v: Vec<f64> = epsilon.iter().map(|&e| e as f64).collect();
        let achieved = h_values(instance, &v).expect("dimension checked").into_iter().fold(0.0, f64::max);
        let support = epsilon.iter().filter(|&&e| e != 0).count();
        Self { epsilon, support, achieved, solver: solver.to_string(), seed }
    }

    pub fn is_certified(&self, instance: &BalanceInstance) -> bool {
        certified_threshold(instance.d(), instance.m().max(1)).is_ok_and(|t| self.achieved <= t)
    }
}

/// Solver selection shared by the witness construction and the CLI.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Solver {
    Exhaustive,
    Random { trials: u64, seed: u64 },
    Greedy,
    /// Exhaustive up to `exhaustive_max_d`, randomized beyond.
    Auto { exhaustive_max_d: usize, trials: u64, seed: u64 },
}

impl Solver {
    pub fn solve(&self, instance: &BalanceInstance, min_support: usize) -> Result<BalanceResult> {
        match *self {
            Solver::Exhaustive => balance_exhaustive(instance, min_support),
            Solver::Random { trials, seed } => balance_randomized(instance, min_support, trials, seed),
            Solver::Greedy => balance_greedy(instance, min_support),
            Solver::Auto { exhaustive_max_d, trials, seed } => {
                if instance.d() <= exhaustive_max_d.min(EXHAUSTIVE_MAX_D) {
                    balance_exhaustive(instance, min_support)
                } else {
                    balance_randomized(instance, min_support, trials, seed)
                }
            }
        }
    }
}

impl Default for Solver {
    fn default() -> Self {
        Solver::Auto { exhaustive_max_d: 12, trials: 100_000, seed: 0 }
    }
}

fn check_support(instance: &BalanceInstance, min_support: usize) -> Result<()> {
    if min_support > instance.d {
        return Err(Error::InvalidArgument(format!(
            "min_support {min_support} exceeds dimension {}",
            instance.d
        )));
    }
    Ok(())
}

// Candidate ordering: smaller value, then larger support, then
// lexicographically smaller sign vector (-1 < 0 < 1). Values closer than a
// relative 1e-12 count as tied.
fn candidate_cmp(a_val: f64, a_eps: &[i8], b_val: f64, b_eps: &[i8]) -> Ordering {
    let tol = 1e-12 * a_val.abs().max(b_val.abs()).max(1.0);
    if a_val < b_val - tol {
        return Ordering::Less;
    }
    if a_val > b_val + tol {
        return Ordering::Greater;
    }
    let sa = a_eps.iter().filter(|&&e| e != 0).count();
    let sb = b_eps.iter().filter(|&&e| e != 0).count();
    sb.cmp(&sa).then_with(|| a_eps.cmp(b_eps))
}

#[derive(Clone)]
struct Best {
    value: f64,
    eps: Vec<i8>,
}

impl Best {
    fn offer(slot: &mut Option<Best>, value: f64, eps: &[i8]) {
        let better = match slot {
            None => true,
            Some(b) => candidate_cmp(value, eps, b.value, &b.eps) == Ordering::Less,
        };
        if better {
            *slot = Some(Best { value, eps: eps.to_vec() });
        }
    }

    fn merge(slot: &mut Option<Best>, other: Option<Best>) {
        if let Some(o) = other {
            Best::offer(slot, o.value, &o.eps);
        }
    }
}

/// Exact optimum over all `3^d` sign vectors (`d <= 16`) with support at least
/// `min_support`; ties go to larger support, then lexicographic order.
pub fn balance_exhaustive(instance: &BalanceInstance, min_support: usize) -> Result<BalanceResult> {
    let d = instance.d;
    if d > EXHAUSTIVE_MAX_D {
        return Err(Error::InvalidArgument(format!("exhaustive search needs d <= {EXHAUSTIVE_MAX_D}, got {d}")));
    }
    check_support(instance, min_support)?;
    // The leading `prefix` coordinates are fixed per task; the rest run through
    // a reflected ternary Gray code with incremental form updates.
    let prefix = d.saturating_sub(7).min(4);
    let tasks = 3usize.pow(prefix as u32);
    let partial: Vec<Option<Best>> = (0..tasks)
        .into_par_iter()
        .map(|task| {
            let mut eps = vec![-1i8; d];
            let mut code = task;
            for e in eps.iter_mut().take(prefix) {
                *e = (code % 3) as i8 - 1;
                code /= 3;
            }
            gray_search(instance, &mut eps, prefix, min_support)
        })
        .collect();
    let mut best = None;
    for p in partial {
        Best::merge(&mut best, p);
    }
    let best = best.ok_or_else(|| Error::SolverFailure("no candidate met the support bound".into()))?;
    Ok(BalanceResult::finish(instance, best.eps, "exhaustive", None))
}

fn gray_search(instance: &BalanceInstance, eps: &mut [i8], fixed: usize, min_support: usize) -> Option<Best> {
    let d = instance.d;
    let free = d - fixed;
    let sets = instance.forms.len();
    let mut r = vec![0.0; sets * d];
    let mut q = vec![0.0; sets];
    let recompute = |eps: &[i8], r: &mut [f64], q: &mut [f64]| {
        for (s, a) in instance.forms.iter().enumerate() {
            let rs = &mut r[s * d..(s + 1) * d];
            for i in 0..d {
                rs[i] = (0..d).map(|j| a[i * d + j] * eps[j] as f64).sum();
            }
            q[s] = (0..d).map(|i| eps[i] as f64 * rs[i]).sum();
        }
    };
    recompute(eps, &mut r, &mut q);
    let mut support = eps.iter().filter(|&&e| e != 0).count();
    let mut best = None;
    let consider = |eps: &[i8], q: &[f64], support: usize, best: &mut Option<Best>| {
        if support >= min_support {
            let v = q.iter().fold(0.0, |a: f64, &b| a.max(b));
            Best::offer(best, v, eps);
        }
    };
    consider(eps, &q, support, &mut best);
    let mut dir = vec![1i8; free];
    let total = 3u64.pow(free as u32);
    for k in 1..total {
        let mut j = 0;
        let mut kk = k;
        while kk % 3 == 0 {
            kk /= 3;
            j += 1;
        }
        let pos = fixed + j;
        let delta = dir[j];
        let old = eps[pos];
        let new = old + delta;
        eps[pos] = new;
        if new == -1 || new == 1 {
            dir[j] = -dir[j];
        }
        if old == 0 {
            support += 1;
        } else if new == 0 {
            support -= 1;
        }
        if k % 4096 == 0 {
            recompute(eps, &mut r, &mut q);
        } else {
            let df = delta as f64;
            for (s, a) in instance.forms.iter().enumerate() {
                let rs = &mut r[s * d..(s + 1) * d];
                q[s] += df * (2.0 * rs[pos] + df * a[pos * d + pos]);
                for (i, ri) in rs.iter_mut().enumerate() {
                    *ri += df * a[i * d + pos];
                }
            }
        }
        consider(eps, &q, support, &mut best);
    }
    best
}

const TRIAL_CHUNK: u64 = 1024;

// |N(0,1)| exceeds this with probability one half.
const HALF_MASS_CUT: f64 = 0.674_489_750_196_081_7;

/// Randomized search. Trial 0 is the all-ones vector; even trials draw a
/// uniform support size in `min_support..=d`, a uniform support and uniform
/// signs; odd trials sign-round a Gaussian vector at its median magnitude and
/// top the support up by largest magnitude. Trial `k` uses stream `k` of
/// `seed`, so the candidate stream depends only on `(d, min_support, seed)`.
pub fn balance_randomized(instance: &BalanceInstance, min_support: usize, trials: u64, seed: u64) -> Result<BalanceResult> {
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be at least 1".into()));
    }
    check_support(instance, min_support)?;
    let d = instance.d;
    let chunks = trials.div_ceil(TRIAL_CHUNK);
    let partial: Vec<Option<Best>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut best = None;
            let mut eps = vec![0i8; d];
            let mut g = vec![0.0; d];
            for k in c * TRIAL_CHUNK..((c + 1) * TRIAL_CHUNK).min(trials) {
                random_candidate(k, seed, min_support, &mut eps, &mut g);
                if eps.iter().filter(|&&e| e != 0).count() >= min_support {
                    Best::offer(&mut best, instance.max_form(&eps), &eps);
                }
            }
            best
        })
        .collect();
    let mut best = None;
    for p in partial {
        Best::merge(&mut best, p);
    }
    let best = best.ok_or_else(|| Error::SolverFailure("no candidate met the support bound".into()))?;
    Ok(BalanceResult::finish(instance, best.eps, "random", Some(seed)))
}

fn random_candidate(k: u64, seed: u64, min_support: usize, eps: &mut [i8], g: &mut [f64]) {
    let d = eps.len();
    if k == 0 {
        eps.iter_mut().for_each(|e| *e = 1);
        return;
    }
    let mut rng = stream_rng(seed, k);
    eps.iter_mut().for_each(|e| *e = 0);
    if k.is_multiple_of(2) {
        let size = rng.gen_range(min_support..=d);
        for i in sample(&mut rng, d, size) {
            eps[i] = if rng.gen::<bool>() { 1 } else { -1 };
        }
    } else {
        fill_normal(&mut rng, g);
        let mut support = 0;
        for (e, &v) in eps.iter_mut().zip(g.iter()) {
            if v.abs() > HALF_MASS_CUT {
                *e = if v > 0.0 { 1 } else { -1 };
                support += 1;
            }
        }
        if support < min_support {
            let mut rest: Vec<usize> = (0..d).filter(|&i| eps[i] == 0).collect();
            rest.sort_by(|&a, &b| g[b].abs().total_cmp(&g[a].abs()).then(a.cmp(&b)));
            for &i in rest.iter().take(min_support - support) {
                eps[i] = if g[i] >= 0.0 { 1 } else { -1 };
            }
        }
    }
}

/// Deterministic sequential assignment: coordinate `i` takes whichever of
/// `+1, -1` (and `0` while the zero budget `d - min_support` lasts) gives the
/// smallest `sum_s h_s(partial eps)^2`, earlier options winning ties.
pub fn balance_greedy(instance: &BalanceInstance, min_support: usize) -> Result<BalanceResult> {
    check_support(instance, min_support)?;
    let d = instance.d;
    let mut r = vec![vec![0.0; d]; instance.forms.len()];
    let mut eps = vec![0i8; d];
    let mut zeros_left = d - min_support;
    for i in 0..d {
        let mut choice = 0i8;
        let mut best = f64::INFINITY;
        for option in [1i8, -1, 0] {
            if option == 0 && zeros_left == 0 {
                continue;
            }
            let o = option as f64;
            // increase of sum_s q_s when eps_i goes from 0 to `option`
            let inc: f64 = instance.forms.iter().zip(&r).map(|(a, rs)| o * (2.0 * rs[i] + o * a[i * d + i])).sum();
            if inc < best {
                best = inc;
                choice = option;
            }
        }
        eps[i] = choice;
        if choice == 0 {
            zeros_left -= 1;
        } else {
            let c = choice as f64;
            for (a, rs) in instance.forms.iter().zip(r.iter_mut()) {
                for (j, rj) in rs.iter_mut().enumerate() {
                    *rj += c * a[j * d + i];
                }
            }
        }
    }
    Ok(BalanceResult::finish(instance, eps, "greedy", None))
}
