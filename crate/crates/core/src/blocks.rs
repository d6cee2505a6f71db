//! Block coordinate structure and mixed norms `l_{p,q}^{n,m}`.
//!
//! `R^N` with `N = m n` is split into `m` consecutive blocks of size `n`.
//! The mixed norm takes the `l_p` norm inside every block and then the `l_q`
//! norm of the resulting `m` block values. Public indices are 1-based.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Partition of `{1..N}` into `m` blocks of `n` coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BlockStructure {
    n: usize,
    m: usize,
}

impl BlockStructure {
    pub fn new(n: usize, m: usize) -> Result<Self> {
        if n == 0 || m == 0 {
            return Err(Error::InvalidStructure(format!(
                "block size and block count must be positive (n={n}, m={m})"
            )));
        }
        n.checked_mul(m)
            .ok_or_else(|| Error::InvalidStructure("n*m overflows".into()))?;
        Ok(Self { n, m })
    }

    /// Block size.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of blocks.
    pub fn m(&self) -> usize {
        self.m
    }

    /// Ambient dimension `N = m n`.
    pub fn dim(&self) -> usize {
        self.n * self.m
    }

    /// 1-based block owning the 1-based coordinate `i`.
    pub fn block_of(&self, i: usize) -> usize {
        debug_assert!(i >= 1 && i <= self.dim());
        (i - 1) / self.n + 1
    }

    /// The 1-based coordinates `(s-1)n+1 ..= sn` of block `s`.
    pub fn block_range(&self, s: usize) -> std::ops::RangeInclusive<usize> {
        debug_assert!(s >= 1 && s <= self.m);
        (s - 1) * self.n + 1..=s * self.n
    }

    /// 0-based storage range of block `s` (1-based).
    pub(crate) fn block_slice_range(&self, s: usize) -> std::ops::Range<usize> {
        (s - 1) * self.n..s * self.n
    }

    pub(crate) fn check_len(&self, len: usize) -> Result<()> {
        if len != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: len });
        }
        Ok(())
    }
}

/// A vector of `R^N` together with its block structure.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockVector {
    structure: BlockStructure,
    coords: Vec<f64>,
}

impl BlockVector {
    pub fn new(structure: BlockStructure, coords: Vec<f64>) -> Result<Self> {
        structure.check_len(coords.len())?;
        Ok(Self { structure, coords })
    }

    pub fn zeros(structure: BlockStructure) -> Self {
        Self { structure, coords: vec![0.0; structure.dim()] }
    }

    /// Standard basis vector `e_i`, 1-based.
    pub fn basis(structure: BlockStructure, i: usize) -> Result<Self> {
        if i == 0 || i > structure.dim() {
            return Err(Error::IndexOutOfRange { index: i, dim: structure.dim() });
        }
        let mut v = Self::zeros(structure);
        v.coords[i - 1] = 1.0;
        Ok(v)
    }

    pub fn structure(&self) -> BlockStructure {
        self.structure
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn into_coords(self) -> Vec<f64> {
        self.coords
    }

    /// Coordinate `x(i)`, 1-based.
    pub fn get(&self, i: usize) -> f64 {
        self.coords[i - 1]
    }

    /// Restriction `x[s]` to block `s`, 1-based.
    pub fn block(&self, s: usize) -> &[f64] {
        &self.coords[self.structure.block_slice_range(s)]
    }

    pub fn blocks(&self) -> std::slice::Chunks<'_, f64> {
        self.coords.chunks(self.structure.n)
    }

    pub fn dot(&self, other: &BlockVector) -> f64 {
        dot(&self.coords, &other.coords)
    }
}

/// An exponent in `[1, inf]`, with infinity kept as a separate tag.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ExponentRepr", into = "ExponentRepr")]
pub enum Exponent {
    Finite(f64),
    Infinity,
}

impl Exponent {
    pub const ONE: Exponent = Exponent::Finite(1.0);
    pub const TWO: Exponent = Exponent::Finite(2.0);
    pub const INF: Exponent = Exponent::Infinity;

    pub fn finite(p: f64) -> Result<Self> {
        if p.is_finite() && p >= 1.0 {
            Ok(Exponent::Finite(p))
        } else {
            Err(Error::InvalidExponent(format!("{p} is not in [1, inf]")))
        }
    }

    /// Conjugate exponent `p / (p - 1)`.
    pub fn dual(self) -> Self {
        match self {
            Exponent::Infinity => Exponent::Finite(1.0),
            Exponent::Finite(p) if p == 1.0 => Exponent::Infinity,
            Exponent::Finite(p) => Exponent::Finite(p / (p - 1.0)),
        }
    }

    pub fn is_one(self) -> bool {
        self == Exponent::Finite(1.0)
    }

    pub fn is_two(self) -> bool {
        self == Exponent::Finite(2.0)
    }

    pub fn is_inf(self) -> bool {
        self == Exponent::Infinity
    }

    /// True for the exponents 1, 2 and inf.
    pub fn is_basic(self) -> bool {
        self.is_one() || self.is_two() || self.is_inf()
    }

    /// `1/p`, with `1/inf = 0`.
    pub fn reciprocal(self) -> f64 {
        match self {
            Exponent::Infinity => 0.0,
            Exponent::Finite(p) => 1.0 / p,
        }
    }
}

impl fmt::Display for Exponent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Exponent::Infinity => write!(f, "inf"),
            Exponent::Finite(p) => write!(f, "{p}"),
        }
    }
}

impl FromStr for Exponent {
    type Err = Error;

    /// Accepts `inf`, a decimal literal, or a fraction such as `4/3`.
    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        if matches!(t.to_ascii_lowercase().as_str(), "inf" | "infinity") || t == "∞" {
            return Ok(Exponent::Infinity);
        }
        let bad = || Error::InvalidExponent(format!("cannot parse `{s}`"));
        let value = match t.split_once('/') {
            Some((a, b)) => {
                let a: f64 = a.trim().parse().map_err(|_| bad())?;
                let b: f64 = b.trim().parse().map_err(|_| bad())?;
                a / b
            }
            None => t.parse().map_err(|_| bad())?,
        };
        Exponent::finite(value)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum ExponentRepr {
    Num(f64),
    Text(String),
}

impl TryFrom<ExponentRepr> for Exponent {
    type Error = Error;
    fn try_from(r: ExponentRepr) -> Result<Self> {
        match r {
            ExponentRepr::Num(p) => Exponent::finite(p),
            ExponentRepr::Text(s) => s.parse(),
        }
    }
}

impl From<Exponent> for ExponentRepr {
    fn from(e: Exponent) -> Self {
        match e {
            Exponent::Finite(p) => ExponentRepr::Num(p),
            Exponent::Infinity => ExponentRepr::Text("inf".into()),
        }
    }
}

/// Inner exponent `p` (per block) and outer exponent `q` (across blocks).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixedNormSpec {
    pub p: Exponent,
    pub q: Exponent,
}

impl MixedNormSpec {
    pub fn new(p: Exponent, q: Exponent) -> Self {
        Self { p, q }
    }

    pub fn is_basic(&self) -> bool {
        self.p.is_basic() && self.q.is_basic()
    }
}

impl fmt::Display for MixedNormSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{}", self.p, self.q)
    }
}

impl FromStr for MixedNormSpec {
    type Err = Error;

    /// Parses `p,q`, e.g. `2,1` or `1,inf`.
    fn from_str(s: &str) -> Result<Self> {
        let (p, q) = s
            .split_once(',')
            .ok_or_else(|| Error::InvalidExponent(format!("expected `p,q`, got `{s}`")))?;
        Ok(Self { p: p.parse()?, q: q.parse()? })
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Plain `l_p` norm of a slice.
pub fn lp_norm(x: &[f64], p: Exponent) -> f64 {
    match p {
        Exponent::Infinity => x.iter().fold(0.0_f64, |acc, v| acc.max(v.abs())),
        Exponent::Finite(p) if p == 1.0 => x.iter().map(|v| v.abs()).sum(),
        Exponent::Finite(p) if p == 2.0 => x.iter().map(|v| v * v).sum::<f64>().sqrt(),
        Exponent::Finite(p) => {
            // Scale by the max entry so large exponents do not overflow.
            let scale = x.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
            if scale == 0.0 {
                return 0.0;
            }
            scale * x.iter().map(|v| (v.abs() / scale).powf(p)).sum::<f64>().powf(1.0 / p)
        }
    }
}

/// Mixed norm on raw coordinates; `x.len()` must equal `structure.dim()`.
pub fn mixed_norm_slice(x: &[f64], structure: BlockStructure, spec: MixedNormSpec) -> f64 {
    let inner: Vec<f64> = x.chunks(structure.n()).map(|b| lp_norm(b, spec.p)).collect();
    lp_norm(&inner, spec.q)
}

/// `||x||_{p,q} = || (||x[s]||_p)_s ||_q`.
pub fn mixed_norm(x: &BlockVector, spec: MixedNormSpec) -> f64 {
    mixed_norm_slice(&x.coords, x.structure, spec)
}

/// The dual pair `(p', q')`.
pub fn dual_spec(spec: MixedNormSpec) -> MixedNormSpec {
    MixedNormSpec { p: spec.p.dual(), q: spec.q.dual() }
}

// Unit vector u in the dual l_{p'} norm with <z, u> = ||z||_p, for z != 0.
fn dual_direction(z: &[f64], p: Exponent, out: &mut [f64]) {
    match p {
        Exponent::Infinity => {
            let (k, _) = argmax_abs(z);
            out.iter_mut().for_each(|v| *v = 0.0);
            out[k] = z[k].signum();
        }
        Exponent::Finite(p) if p == 1.0 => {
            for (o, &v) in out.iter_mut().zip(z) {
                *o = if v == 0.0 { 0.0 } else { v.signum() };
            }
        }
        _ => {
            let norm = lp_norm(z, Exponent::TWO);
            for (o, &v) in out.iter_mut().zip(z) {
                *o = v / norm;
            }
        }
    }
}

/// Lowest index attaining `max |z_i|`.
pub(crate) fn argmax_abs(z: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (k, v) in z.iter().enumerate() {
        if v.abs() > best.1 {
            best = (k, v.abs());
        }
    }
    best
}

/// A Hölder equality witness: `y` with `||y||_{p',q'} = 1` and
/// `<x, y> = ||x||_{p,q}`. Only `p, q` in `{1, 2, inf}` are supported; ties for
/// maximal entries go to the lowest index.
pub fn extremal_dual_vector(x: &BlockVector, spec: MixedNormSpec) -> Result<BlockVector> {
    if !spec.is_basic() {
        return Err(Error::UnsupportedExponents { p: spec.p.to_string(), q: spec.q.to_string() });
    }
    if x.coords.iter().all(|&v| v == 0.0) {
        return Err(Error::ZeroVector);
    }
    let structure = x.structure;
    let block_norms: Vec<f64> = x.blocks().map(|b| lp_norm(b, spec.p)).collect();
    let mut weights = vec![0.0; structure.m()];
    dual_direction(&block_norms, spec.q, &mut weights);

    let mut y = vec![0.0; structure.dim()];
    for s in 1..=structure.m() {
        let a = weights[s - 1];
        if a == 0.0 || block_norms[s - 1] == 0.0 {
            continue;
        }
        let range = structure.block_slice_range(s);
        dual_direction(&x.coords[range.clone()], spec.p, &mut y[range.clone()]);
        y[range].iter_mut().for_each(|v| *v *= a);
    }
    BlockVector::new(structure, y)
}

/// Membership in `V_m^N = B_inf^N ∩ m B_1^N`.
pub fn in_generalized_octahedron(x: &BlockVector, m: usize) -> bool {
    lp_norm(&x.coords, Exponent::INF) <= 1.0 && lp_norm(&x.coords, Exponent::ONE) <= m as f64
}

/// Parses one CSV line of decimal literals.
pub fn parse_csv_vector(line: &str) -> Result<Vec<f64>> {
    line.split(',')
        .map(|t| {
            t.trim().parse::<f64>().map_err(|_| Error::Parse(format!("bad number `{}`", t.trim())))
        })
        .collect()
}

pub fn format_csv_vector(x: &[f64]) -> String {
    x.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}
