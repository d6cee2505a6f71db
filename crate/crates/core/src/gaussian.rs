//! Gaussian measure toolbox.
//!
//! `psi(t)` is the standard Gaussian measure of `(-t, t)`. Measures of
//! ellipsoids, strips and their intersections are estimated by hit-or-miss
//! Monte Carlo over a counter-based sample stream: samples are produced in
//! fixed blocks, block `b` drawing from stream `b` of the seed, so estimates do
//! not depend on how blocks are spread over threads.
//!
//! The `check_*` functions test inequalities that are theorems. They report
//! `Pass`, `Inconclusive` or `Fail` with 4-sigma decision margins; a `Fail`
//! points at a bug, not at a counterexample.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::balance::target_t;
use crate::error::{Error, Result};
use crate::rng::{fill_normal, normal_vec, stream_rng};

/// Decision margin in standard errors.
pub const SIGMAS: f64 = 4.0;

/// Samples per counter-based block.
pub const SAMPLE_BLOCK: u64 = 4096;

pub const MIN_SAMPLES: u64 = 1000;

/// `Psi(t) = P(|xi| < t)` for a standard normal `xi`.
pub fn psi(t: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    libm::erf(t / std::f64::consts::SQRT_2)
}

/// `t >= 0` with `psi(t) = g`, by bisection.
pub fn psi_inverse(g: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&g) {
        return Err(Error::InvalidArgument(format!("psi_inverse needs 0 <= g < 1, got {g}")));
    }
    if g == 0.0 {
        return Ok(0.0);
    }
    let mut hi = 1.0;
    while psi(hi) < g {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if psi(mid) < g {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Derivative of `psi`, twice the standard normal density.
pub fn psi_prime(t: f64) -> f64 {
    (2.0 / std::f64::consts::PI).sqrt() * (-0.5 * t * t).exp()
}

/// Hit-or-miss estimate of a Gaussian measure.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianEstimate {
    pub value: f64,
    pub std_error: f64,
    pub samples: u64,
    pub seed: u64,
}

impl GaussianEstimate {
    pub fn from_hits(hits: u64, samples: u64, seed: u64) -> Self {
        let value = hits as f64 / samples as f64;
        let std_error = (value * (1.0 - value) / samples as f64).sqrt();
        Self { value, std_error, samples, seed }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckStatus {
    Pass,
    Inconclusive,
    Fail,
}

impl CheckStatus {
    pub fn from_bool(ok: bool) -> Self {
        if ok {
            CheckStatus::Pass
        } else {
            CheckStatus::Fail
        }
    }

    pub fn is_fail(self) -> bool {
        self == CheckStatus::Fail
    }
}

/// `h(v) = (sum_x <v, x>^2)^{1/2}` over a finite vector set.
pub fn quadratic_h(set: &[Vec<f64>], v: &[f64]) -> f64 {
    set.iter()
        .map(|x| {
            let d: f64 = x.iter().zip(v).map(|(a, b)| a * b).sum();
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

pub fn energy(set: &[Vec<f64>]) -> f64 {
    set.iter().map(|x| x.iter().map(|v| v * v).sum::<f64>()).sum()
}

/// `scale * {v : h(v) <= 1}` for the quadratic form of a vector set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ellipsoid {
    pub generators: Vec<Vec<f64>>,
    pub scale: f64,
}

impl Ellipsoid {
    pub fn new(generators: Vec<Vec<f64>>) -> Self {
        Self { generators, scale: 1.0 }
    }

    /// Centered Euclidean ball of radius `r` in `R^d`.
    pub fn ball(d: usize, r: f64) -> Self {
        let generators = (0..d)
            .map(|i| {
                let mut e = vec![0.0; d];
                e[i] = 1.0 / r;
                e
            })
            .collect();
        Self { generators, scale: 1.0 }
    }

    /// The strip `|<w, v>| <= 1` as a one-generator ellipsoid.
    pub fn from_strip(strip: &Strip) -> Self {
        Self { generators: vec![strip.normal.clone()], scale: 1.0 }
    }

    pub fn dilate(&self, t: f64) -> Self {
        Self { generators: self.generators.clone(), scale: self.scale * t }
    }

    pub fn h(&self, v: &[f64]) -> f64 {
        quadratic_h(&self.generators, v)
    }

    pub fn contains(&self, v: &[f64]) -> bool {
        self.h(v) <= self.scale
    }
}

/// `{v : |<w, v>| <= 1}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Strip {
    pub normal: Vec<f64>,
}

impl Strip {
    pub fn contains(&self, v: &[f64]) -> bool {
        let d: f64 = self.normal.iter().zip(v).map(|(a, b)| a * b).sum();
        d.abs() <= 1.0
    }

    /// Exact measure `psi(1 / |w|)`.
    pub fn measure(&self) -> f64 {
        let w = self.normal.iter().map(|v| v * v).sum::<f64>().sqrt();
        if w == 0.0 {
            1.0
        } else {
            psi(1.0 / w)
        }
    }

    /// The strip with normal direction `direction` and Gaussian measure `g`,
    /// i.e. `|w| = 1 / psi_inverse(g)`.
    pub fn calibrated(direction: &[f64], g: f64) -> Result<Self> {
        let a = psi_inverse(g)?;
        let norm = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 || a == 0.0 {
            return Err(Error::Degenerate("strip needs a nonzero direction and measure".into()));
        }
        Ok(Self { normal: direction.iter().map(|v| v / (norm * a)).collect() })
    }
}

/// Runs `visit` over `samples` standard Gaussian vectors of `R^d`, one
/// accumulator per block, then merges block results in block order.
pub fn fold_samples<A, I, F, M>(d: usize, samples: u64, seed: u64, init: I, visit: F, merge: M) -> A
where
    A: Send,
    I: Fn() -> A + Sync,
    F: Fn(&mut A, &[f64]) + Sync,
    M: Fn(&mut A, A),
{
    let blocks = samples.div_ceil(SAMPLE_BLOCK);
    let partials: Vec<A> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = stream_rng(seed, b);
            let count = SAMPLE_BLOCK.min(samples - b * SAMPLE_BLOCK);
            let mut acc = init();
            let mut xi = vec![0.0; d];
            for _ in 0..count {
                fill_normal(&mut rng, &mut xi);
                visit(&mut acc, &xi);
            }
            acc
        })
        .collect();
    let mut total = init();
    for p in partials {
        merge(&mut total, p);
    }
    total
}

/// Hit counts of several bodies on one shared sample stream.
pub fn mc_hits<F>(d: usize, samples: u64, seed: u64, bodies: usize, classify: F) -> Vec<u64>
where
    F: Fn(&[f64], &mut [bool]) + Sync,
{
    fold_samples(
        d,
        samples,
        seed,
        || (vec![0u64; bodies], vec![false; bodies]),
        |(hits, flags), xi| {
            flags.iter_mut().for_each(|f| *f = false);
            classify(xi, flags);
            for (h, &f) in hits.iter_mut().zip(flags.iter()) {
                *h += f as u64;
            }
        },
        |(total, _), (part, _)| {
            for (t, p) in total.iter_mut().zip(part) {
                *t += p;
            }
        },
    )
    .0
}

fn check_samples(samples: u64) -> Result<()> {
    if samples < MIN_SAMPLES {
        return Err(Error::InvalidArgument(format!(
            "at least {MIN_SAMPLES} samples are required, got {samples}"
        )));
    }
    Ok(())
}

/// Hit-or-miss estimate of `gamma_d(body)`.
pub fn mc_measure<B>(body: B, d: usize, samples: u64, seed: u64) -> Result<GaussianEstimate>
where
    B: Fn(&[f64]) -> bool + Sync,
{
    check_samples(samples)?;
    let hits = mc_hits(d, samples, seed, 1, |xi, out| out[0] = body(xi));
    Ok(GaussianEstimate::from_hits(hits[0], samples, seed))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EboundReport {
    /// Estimate of `gamma_d(2E)`.
    pub gamma: GaussianEstimate,
    pub mean_h2: f64,
    pub mean_h2_std_error: f64,
    pub energy: f64,
    pub status: CheckStatus,
}

/// `gamma_d(2E) >= 1 - E h(xi)^2 / 4 >= 3/4` for a set of energy at most one.
pub fn check_ebound(set: &[Vec<f64>], d: usize, samples: u64, seed: u64) -> Result<EboundReport> {
    check_samples(samples)?;
    check_set(set, d)?;
    let (hits, sum, sum_sq) = fold_samples(
        d,
        samples,
        seed,
        || (0u64, 0.0f64, 0.0f64),
        |acc, xi| {
            let h2 = quadratic_h(set, xi).powi(2);
            acc.0 += (h2 <= 4.0) as u64;
            acc.1 += h2;
            acc.2 += h2 * h2;
        },
        |acc, p| {
            acc.0 += p.0;
            acc.1 += p.1;
            acc.2 += p.2;
        },
    );
    let n = samples as f64;
    let mean = sum / n;
    let var = (sum_sq / n - mean * mean).max(0.0);
    let mean_se = (var / n).sqrt();
    let gamma = GaussianEstimate::from_hits(hits, samples, seed);
    let ok = gamma.value >= 0.75 - SIGMAS * gamma.std_error && mean <= 1.0 + SIGMAS * mean_se;
    Ok(EboundReport {
        gamma,
        mean_h2: mean,
        mean_h2_std_error: mean_se,
        energy: energy(set),
        status: CheckStatus::from_bool(ok),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SInequalityReport {
    pub t: f64,
    /// Estimate of `gamma_d(K)`.
    pub gamma_k: GaussianEstimate,
    /// Estimate of `gamma_d(tK)`.
    pub gamma_tk: GaussianEstimate,
    /// Half-width `a = psi_inverse(gamma(K))` of the equal-measure strip.
    pub strip_half_width: f64,
    /// `psi(t a)`, the measure of the dilated strip.
    pub strip_value: f64,
    pub combined_std_error: f64,
    pub status: CheckStatus,
}

/// `gamma(tK) >= gamma(tP)` for `t >= 1`, `P` the strip with `gamma(P) = gamma(K)`.
///
/// The strip side `psi(t psi_inverse(g))` is evaluated in closed form at the
/// estimate `g`; its sampling error enters through the first-order
/// sensitivity `t exp(-(t^2 - 1) a^2 / 2)`.
pub fn check_s_inequality(k: &Ellipsoid, t: f64, d: usize, samples: u64, seed: u64) -> Result<SInequalityReport> {
    check_samples(samples)?;
    if t < 1.0 {
        return Err(Error::InvalidArgument(format!("S-inequality check needs t >= 1, got {t}")));
    }
    check_set(&k.generators, d)?;
    let scale = k.scale;
    let hits = mc_hits(d, samples, seed, 2, |xi, out| {
        let h = k.h(xi);
        out[0] = h <= scale;
        out[1] = h <= t * scale;
    });
    let gamma_k = GaussianEstimate::from_hits(hits[0], samples, seed);
    let gamma_tk = GaussianEstimate::from_hits(hits[1], samples, seed);
    let g = gamma_k.value;
    let degenerate = g - SIGMAS * gamma_k.std_error <= 0.0 || g + SIGMAS * gamma_k.std_error >= 1.0;
    if degenerate {
        return Ok(SInequalityReport {
            t,
            gamma_k,
            gamma_tk,
            strip_half_width: f64::NAN,
            strip_value: f64::NAN,
            combined_std_error: f64::NAN,
            status: CheckStatus::Inconclusive,
        });
    }
    let a = psi_inverse(g)?;
    let strip_value = psi(t * a);
    let sensitivity = t * psi_prime(t * a) / psi_prime(a);
    let combined = (gamma_tk.std_error.powi(2) + (sensitivity * gamma_k.std_error).powi(2)).sqrt();
    let ok = gamma_tk.value >= strip_value - SIGMAS * combined;
    Ok(SInequalityReport {
        t,
        gamma_k,
        gamma_tk,
        strip_half_width: a,
        strip_value,
        combined_std_error: combined,
        status: CheckStatus::from_bool(ok),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub gamma1: GaussianEstimate,
    pub gamma2: GaussianEstimate,
    pub gamma12: GaussianEstimate,
    pub product: f64,
    /// Delta-method standard error of `gamma12 - gamma1 * gamma2`.
    pub std_error: f64,
    pub status: CheckStatus,
}

/// `gamma(K1 ∩ K2) >= gamma(K1) gamma(K2)`, all three on shared samples.
pub fn check_correlation(k1: &Ellipsoid, k2: &Ellipsoid, d: usize, samples: u64, seed: u64) -> Result<CorrelationReport> {
    check_samples(samples)?;
    check_set(&k1.generators, d)?;
    check_set(&k2.generators, d)?;
    let hits = mc_hits(d, samples, seed, 3, |xi, out| {
        out[0] = k1.contains(xi);
        out[1] = k2.contains(xi);
        out[2] = out[0] && out[1];
    });
    let g1 = GaussianEstimate::from_hits(hits[0], samples, seed);
    let g2 = GaussianEstimate::from_hits(hits[1], samples, seed);
    let g12 = GaussianEstimate::from_hits(hits[2], samples, seed);
    let (p1, p2, p12) = (g1.value, g2.value, g12.value);
    // Influence of one sample on p12 - p1 p2: Z = 1_{12} - p2 1_1 - p1 1_2.
    let mean_z = p12 - 2.0 * p1 * p2;
    let mean_z2 = p12 + p2 * p2 * p1 + p1 * p1 * p2 - 2.0 * p2 * p12 - 2.0 * p1 * p12 + 2.0 * p1 * p2 * p12;
    let std_error = ((mean_z2 - mean_z * mean_z).max(0.0) / samples as f64).sqrt();
    let product = p1 * p2;
    let ok = p12 >= product - SIGMAS * std_error;
    Ok(CorrelationReport { gamma1: g1, gamma2: g2, gamma12: g12, product, std_error, status: CheckStatus::from_bool(ok) })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntersectionReport {
    pub t: f64,
    pub m: usize,
    pub d: usize,
    /// Estimate of `gamma_d(V)`, `V = ∩_s 2t E_s`.
    pub gamma_v: GaussianEstimate,
    /// `exp(-2 m exp(-t^2 / 2))`.
    pub product_bound: f64,
    pub product_status: CheckStatus,
    pub target_t: f64,
    /// `2^{-d/7}`, checked only when `t >= target_t(d, m)`.
    pub volume_bound: f64,
    pub volume_status: Option<CheckStatus>,
    pub status: CheckStatus,
}

/// `gamma_d(∩_s 2t E_s) >= exp(-2m exp(-t^2/2))`, plus `>= 2^{-d/7}` once
/// `t` reaches `target_t(d, m)`.
pub fn measure_intersection_lower_bound(
    sets: &[Vec<Vec<f64>>],
    t: f64,
    d: usize,
    samples: u64,
    seed: u64,
) -> Result<IntersectionReport> {
    check_samples(samples)?;
    if t < 1.0 {
        return Err(Error::InvalidArgument(format!("intersection check needs t >= 1, got {t}")));
    }
    for set in sets {
        check_set(set, d)?;
    }
    let radius = 2.0 * t;
    let gamma_v = mc_measure(|xi| sets.iter().all(|s| quadratic_h(s, xi) <= radius), d, samples, seed)?;
    let m = sets.len();
    let product_bound = (-2.0 * m as f64 * (-0.5 * t * t).exp()).exp();
    let margin = SIGMAS * gamma_v.std_error;
    let product_status = CheckStatus::from_bool(gamma_v.value >= product_bound - margin);
    let tt = target_t(d, m.max(1))?;
    let volume_bound = 2f64.powf(-(d as f64) / 7.0);
    let volume_status = (t >= tt).then(|| CheckStatus::from_bool(gamma_v.value >= volume_bound - margin));
    let failed = product_status.is_fail() || volume_status.is_some_and(|s| s.is_fail());
    Ok(IntersectionReport {
        t,
        m,
        d,
        gamma_v,
        product_bound,
        product_status,
        target_t: tt,
        volume_bound,
        volume_status,
        status: CheckStatus::from_bool(!failed),
    })
}

fn check_set(set: &[Vec<f64>], d: usize) -> Result<()> {
    for x in set {
        if x.len() != d {
            return Err(Error::DimensionMismatch { expected: d, got: x.len() });
        }
    }
    Ok(())
}

/// `count` Gaussian vectors of `R^d`, rescaled to total energy `energy`.
pub fn random_vector_set<R: Rng + ?Sized>(rng: &mut R, d: usize, count: usize, energy_target: f64) -> Vec<Vec<f64>> {
    let mut set: Vec<Vec<f64>> = (0..count).map(|_| normal_vec(rng, d)).collect();
    let e = energy(&set);
    if e > 0.0 {
        let f = (energy_target / e).sqrt();
        set.iter_mut().flat_map(|x| x.iter_mut()).for_each(|v| *v *= f);
    }
    set
}

/// A random ellipsoid of `R^d`: between 1 and `d + 1` generators with total
/// energy drawn log-uniformly from `[0.2, 5]`.
pub fn random_ellipsoid<R: Rng + ?Sized>(rng: &mut R, d: usize) -> Ellipsoid {
    let count = rng.gen_range(1..=d + 1);
    let energy_target = (rng.gen_range(0.2f64.ln()..5f64.ln())).exp();
    Ellipsoid::new(random_vector_set(rng, d, count, energy_target))
}
