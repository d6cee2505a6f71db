//! Linear subspaces of `R^N` stored as orthonormal bases.
//!
//! Besides projection, the module provides the two services the witness
//! construction relies on: the peaky unit vector (a unit vector of `L` with a
//! coordinate of magnitude `max_i |P_L e_i|`) and restriction to the vectors
//! vanishing on a coordinate set.

use std::io::{BufRead, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector, QR, SVD};
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::fill_normal;

/// Input directions whose residual after re-orthogonalisation falls below
/// this (relative to their original length) are dropped as dependent.
pub const DROP_TOLERANCE: f64 = 1e-10;

/// Singular values below this count as zero when computing null spaces.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// A subspace of `R^N`, kept as an `N x dim` matrix with orthonormal columns.
#[derive(Clone, Debug, PartialEq)]
pub struct Subspace {
    basis: DMatrix<f64>,
}

impl Subspace {
    /// The trivial subspace `{0}` of `R^N`.
    pub fn trivial(ambient_dim: usize) -> Self {
        Self { basis: DMatrix::zeros(ambient_dim, 0) }
    }

    /// All of `R^N`.
    pub fn full(ambient_dim: usize) -> Self {
        Self { basis: DMatrix::identity(ambient_dim, ambient_dim) }
    }

    /// Span of the 1-based standard basis vectors `e_i`, `i` in `coords`.
    pub fn coordinate(ambient_dim: usize, coords: &[usize]) -> Result<Self> {
        let mut basis = DMatrix::zeros(ambient_dim, coords.len());
        for (c, &i) in coords.iter().enumerate() {
            if i == 0 || i > ambient_dim {
                return Err(Error::IndexOutOfRange { index: i, dim: ambient_dim });
            }
            basis[(i - 1, c)] = 1.0;
        }
        Ok(Self::orthonormalize_matrix(basis))
    }

    /// Wraps a matrix whose columns are already orthonormal (checked to 1e-10).
    pub fn from_orthonormal(basis: DMatrix<f64>) -> Result<Self> {
        let s = Self { basis };
        let dev = s.gram_deviation();
        if dev > 1e-10 {
            return Err(Error::InvalidArgument(format!(
                "columns are not orthonormal (Gram deviation {dev:e})"
            )));
        }
        Ok(s)
    }

    /// Haar-random subspace of dimension `dim`, from a Gaussian frame.
    pub fn random<R: Rng + ?Sized>(ambient_dim: usize, dim: usize, rng: &mut R) -> Self {
        let mut raw = DMatrix::zeros(ambient_dim, dim);
        fill_normal(rng, raw.as_mut_slice());
        Self::orthonormalize_matrix(raw)
    }

    pub fn ambient_dim(&self) -> usize {
        self.basis.nrows()
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    /// Basis vector `b` (0-based) as a slice.
    pub fn basis_vector(&self, b: usize) -> &[f64] {
        let n = self.ambient_dim();
        &self.basis.as_slice()[b * n..(b + 1) * n]
    }

    pub fn basis_vectors(&self) -> Vec<Vec<f64>> {
        (0..self.dim()).map(|b| self.basis_vector(b).to_vec()).collect()
    }

    /// Largest entrywise deviation of the Gram matrix from the identity.
    pub fn gram_deviation(&self) -> f64 {
        let gram = self.basis.tr_mul(&self.basis);
        let mut dev = 0.0_f64;
        for r in 0..gram.nrows() {
            for c in 0..gram.ncols() {
                let target = if r == c { 1.0 } else { 0.0 };
                dev = dev.max((gram[(r, c)] - target).abs());
            }
        }
        dev
    }

    fn check_vector(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.ambient_dim() {
            return Err(Error::DimensionMismatch { expected: self.ambient_dim(), got: x.len() });
        }
        Ok(())
    }

    /// Coefficients `<x, b>` against the basis.
    pub fn coefficients(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_vector(x)?;
        let xv = DVector::from_column_slice(x);
        Ok(self.basis.tr_mul(&xv).as_slice().to_vec())
    }

    /// Orthogonal projection `P_L x`.
    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_vector(x)?;
        let xv = DVector::from_column_slice(x);
        let c = self.basis.tr_mul(&xv);
        Ok((&self.basis * c).as_slice().to_vec())
    }

    /// `|x - P_L x|`.
    pub fn distance(&self, x: &[f64]) -> Result<f64> {
        let p = self.project(x)?;
        Ok(x.iter().zip(&p).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
    }

    /// `|P_L e_i|^2` for every coordinate, i.e. the squared row norms of the basis.
    pub fn leverage(&self) -> Vec<f64> {
        let n = self.ambient_dim();
        let mut out = vec![0.0; n];
        for b in 0..self.dim() {
            for (o, v) in out.iter_mut().zip(self.basis_vector(b)) {
                *o += v * v;
            }
        }
        out
    }

    /// The unit vector of `L` with the largest possible single coordinate.
    ///
    /// Returns `(x, i_star)` with `i_star` (1-based) maximising `|P_L e_i|`,
    /// lowest index on ties, and `x = P_L e_{i_star} / |P_L e_{i_star}|`, so
    /// that `x(i_star) = |P_L e_{i_star}| > 0`. Since the leverages sum to
    /// `dim L`, the peak is at least `sqrt(dim L / N)`.
    pub fn peaky_unit_vector(&self) -> Result<(Vec<f64>, usize)> {
        if self.dim() == 0 {
            return Err(Error::TrivialSubspace);
        }
        let lev = self.leverage();
        let mut i0 = 0;
        for (i, &v) in lev.iter().enumerate() {
            if v > lev[i0] {
                i0 = i;
            }
        }
        let row: DVector<f64> = self.basis.row(i0).transpose();
        let mut x = (&self.basis * row).as_slice().to_vec();
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        x.iter_mut().for_each(|v| *v /= norm);
        Ok((x, i0 + 1))
    }

    /// `{x in L : x(i) = 0 for all i in coords}`; `coords` are 1-based.
    ///
    /// Computed as the null space of the `|coords| x dim` matrix of basis rows,
    /// singular values below [`RANK_TOLERANCE`] counted as zero. The returned
    /// basis is set exactly to zero on `coords`.
    pub fn restrict_to_vanishing(&self, coords: &[usize]) -> Result<Subspace> {
        let n = self.ambient_dim();
        for &i in coords {
            if i == 0 || i > n {
                return Err(Error::IndexOutOfRange { index: i, dim: n });
            }
        }
        let k = self.dim();
        if coords.is_empty() || k == 0 {
            return Ok(self.clone());
        }
        // Columns of `rows_t` are the basis rows on `coords`; its column space
        // is the set of coefficient directions that do not vanish.
        let mut rows_t = DMatrix::zeros(k, coords.len());
        for (c, &i) in coords.iter().enumerate() {
            for b in 0..k {
                rows_t[(b, c)] = self.basis[(i - 1, b)];
            }
        }
        let svd = SVD::new(rows_t, true, false);
        let u = svd.u.as_ref().expect("u requested");
        let keep: Vec<usize> = svd
            .singular_values
            .iter()
            .enumerate()
            .filter(|(_, &s)| s > RANK_TOLERANCE)
            .map(|(j, _)| j)
            .collect();
        let rank = keep.len();
        if rank >= k {
            return Ok(Subspace::trivial(n));
        }
        let mut basis = if rank == 0 {
            self.basis.clone()
        } else {
            complement_in(&self.basis, u.select_columns(&keep))
        };
        for &i in coords {
            basis.row_mut(i - 1).fill(0.0);
        }
        Ok(Subspace { basis })
    }

    /// The orthogonal complement `L^perp` in `R^N`.
    pub fn orthogonal_complement(&self) -> Subspace {
        let n = self.ambient_dim();
        if self.dim() == 0 {
            return Subspace::full(n);
        }
        Subspace { basis: complement_in(&DMatrix::identity(n, n), self.basis.clone()) }
    }

    /// Orthonormal basis of the span of `raw`, using classical Gram–Schmidt
    /// with one full re-orthogonalisation pass.
    pub fn orthonormalize(ambient_dim: usize, raw: &[Vec<f64>]) -> Result<Subspace> {
        let mut m = DMatrix::zeros(ambient_dim, raw.len());
        for (c, v) in raw.iter().enumerate() {
            if v.len() != ambient_dim {
                return Err(Error::DimensionMismatch { expected: ambient_dim, got: v.len() });
            }
            m.column_mut(c).copy_from_slice(v);
        }
        Ok(Self::orthonormalize_matrix(m))
    }

    fn orthonormalize_matrix(raw: DMatrix<f64>) -> Subspace {
        let n = raw.nrows();
        let cap = raw.ncols().min(n);
        let mut q = DMatrix::<f64>::zeros(n, cap);
        let mut len = 0;
        for col in raw.column_iter() {
            if len == cap {
                break;
            }
            let original = col.norm();
            if original == 0.0 {
                continue;
            }
            let mut v: DVector<f64> = col.into_owned();
            if len > 0 {
                let done = q.columns(0, len);
                for _ in 0..2 {
                    let c = done.tr_mul(&v);
                    v.gemv(-1.0, &done, &c, 1.0);
                }
            }
            let residual = v.norm();
            if residual <= DROP_TOLERANCE * original {
                continue;
            }
            v /= residual;
            q.set_column(len, &v);
            len += 1;
        }
        Subspace { basis: q.columns(0, len).into_owned() }
    }

    /// Writes one basis vector per row, preceded by `# N=<N> dim=<k>`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "# N={} dim={}", self.ambient_dim(), self.dim())?;
        for b in 0..self.dim() {
            let row: Vec<String> = self.basis_vector(b).iter().map(|v| v.to_string()).collect();
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_csv(f)
    }

    /// Reads a basis file; rows are re-orthonormalised. Comment lines are
    /// skipped, except that `# N=<N>` supplies the ambient dimension when the
    /// file has no rows.
    pub fn read_csv<R: BufRead>(input: R) -> Result<Subspace> {
        let mut rows = Vec::new();
        let mut header_n = None;
        for line in input.lines() {
            let line = line?;
            let t = line.trim();
            if t.is_empty() {
                continue;
            }
            if let Some(comment) = t.strip_prefix('#') {
                header_n = comment
                    .split_whitespace()
                    .find_map(|tok| tok.strip_prefix("N=").and_then(|v| v.parse::<usize>().ok()));
                continue;
            }
            rows.push(crate::blocks::parse_csv_vector(t)?);
        }
        let n = match (rows.first(), header_n) {
            (Some(r), _) => r.len(),
            (None, Some(n)) => n,
            (None, None) => return Err(Error::Parse("empty subspace file without `# N=` header".into())),
        };
        Subspace::orthonormalize(n, &rows)
    }

    pub fn load_csv(path: &Path) -> Result<Subspace> {
        Subspace::read_csv(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

// Orthonormal basis of {basis * c : c orthogonal to columns of `directions`},
// where `basis` has orthonormal columns and `directions` (k x r) has
// orthonormal columns. Uses the full Householder factor of `directions`.
fn complement_in(basis: &DMatrix<f64>, directions: DMatrix<f64>) -> DMatrix<f64> {
    let k = basis.ncols();
    let r = directions.ncols();
    let qr = QR::new(directions);
    let mut bt = basis.transpose();
    qr.q_tr_mul(&mut bt);
    bt.rows(r, k - r).transpose()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;

    fn assert_close(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= tol, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn orthonormalize_axes() {
        let s = Subspace::orthonormalize(2, &[vec![2.0, 0.0], vec![0.0, 3.0]]).unwrap();
        assert_eq!(s.dim(), 2);
        assert_close(&s.basis_vector(0).iter().map(|v| v.abs()).collect::<Vec<_>>(), &[1.0, 0.0], 1e-15);
        assert_close(&s.basis_vector(1).iter().map(|v| v.abs()).collect::<Vec<_>>(), &[0.0, 1.0], 1e-15);
    }

    #[test]
    fn orthonormalize_drops_dependent() {
        let s = Subspace::orthonormalize(2, &[vec![1.0, 1.0], vec![2.0, 2.0]]).unwrap();
        assert_eq!(s.dim(), 1);
        let s = Subspace::orthonormalize(3, &[vec![0.0; 3]]).unwrap();
        assert_eq!(s.dim(), 0);
        assert!(Subspace::orthonormalize(3, &[vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn random_frames_are_orthonormal() {
        let mut rng = stream_rng(5, 0);
        for _ in 0..100 {
            let raw: Vec<Vec<f64>> = (0..16).map(|_| crate::rng::normal_vec(&mut rng, 32)).collect();
            let s = Subspace::orthonormalize(32, &raw).unwrap();
            assert_eq!(s.dim(), 16);
            // explicit Gram computation
            for a in 0..16 {
                for b in 0..16 {
                    let g: f64 = s.basis_vector(a).iter().zip(s.basis_vector(b)).map(|(x, y)| x * y).sum();
                    let target = if a == b { 1.0 } else { 0.0 };
                    assert!((g - target).abs() <= 1e-10);
                }
            }
        }
    }

    #[test]
    fn project_examples() {
        let l = Subspace::coordinate(2, &[1]).unwrap();
        assert_close(&l.project(&[3.0, 4.0]).unwrap(), &[3.0, 0.0], 1e-15);
        let full = Subspace::full(3);
        assert_close(&full.project(&[1.0, -2.0, 5.0]).unwrap(), &[1.0, -2.0, 5.0], 1e-15);
        assert!(matches!(l.project(&[1.0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn projection_pythagoras_and_idempotence() {
        let mut rng = stream_rng(6, 0);
        for _ in 0..50 {
            let l = Subspace::random(20, 7, &mut rng);
            let x = crate::rng::normal_vec(&mut rng, 20);
            let p = l.project(&x).unwrap();
            let pp = l.project(&p).unwrap();
            assert_close(&p, &pp, 1e-10);
            let r2: f64 = x.iter().zip(&p).map(|(a, b)| (a - b).powi(2)).sum();
            let p2: f64 = p.iter().map(|v| v * v).sum();
            let x2: f64 = x.iter().map(|v| v * v).sum();
            assert!((r2 + p2 - x2).abs() <= 1e-10 * x2.max(1.0));
        }
    }

    #[test]
    fn peaky_on_coordinate_subspace() {
        let l = Subspace::coordinate(8, &[3]).unwrap();
        let (x, i) = l.peaky_unit_vector().unwrap();
        assert_eq!(i, 3);
        assert!((x[2].abs() - 1.0).abs() < 1e-15);
        assert!(matches!(Subspace::trivial(4).peaky_unit_vector(), Err(Error::TrivialSubspace)));
    }

    #[test]
    fn peaky_ties_use_lowest_index() {
        let l = Subspace::coordinate(6, &[5, 2, 4]).unwrap();
        assert_eq!(l.peaky_unit_vector().unwrap().1, 2);
    }

    #[test]
    fn peaky_trace_oracle() {
        let mut rng = stream_rng(7, 0);
        for _ in 0..100 {
            let l = Subspace::random(16, 8, &mut rng);
            // trace oracle directly from the basis entries
            let b = l.basis();
            let mut total = 0.0;
            let mut best: f64 = 0.0;
            for i in 0..16 {
                let row: f64 = (0..8).map(|c| b[(i, c)] * b[(i, c)]).sum();
                total += row;
                best = best.max(row);
            }
            assert!((total - 8.0).abs() <= 1e-9);
            assert!(best >= 0.5);
            let (x, i) = l.peaky_unit_vector().unwrap();
            assert!(x[i - 1].abs() >= 0.5 - 1e-12);
            assert!((x[i - 1] - best.sqrt()).abs() < 1e-12);
            assert!(l.distance(&x).unwrap() < 1e-12);
        }
    }

    #[test]
    fn peaky_is_maximal() {
        let mut rng = stream_rng(8, 0);
        let l = Subspace::random(12, 5, &mut rng);
        let (x, i) = l.peaky_unit_vector().unwrap();
        for _ in 0..100 {
            let c = crate::rng::normal_vec(&mut rng, 5);
            let mut z = [0.0; 12];
            for (b, cb) in c.iter().enumerate() {
                for (zi, v) in z.iter_mut().zip(l.basis_vector(b)) {
                    *zi += cb * v;
                }
            }
            let norm: f64 = z.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(z[i - 1].abs() / norm <= x[i - 1].abs() + 1e-10);
        }
    }

    #[test]
    fn restrict_examples() {
        let l = Subspace::coordinate(4, &[1, 2]).unwrap();
        let r = l.restrict_to_vanishing(&[1]).unwrap();
        assert_eq!(r.dim(), 1);
        assert!((r.basis_vector(0)[1].abs() - 1.0).abs() < 1e-15);
        let same = l.restrict_to_vanishing(&[]).unwrap();
        assert_eq!(same, l);
        assert!(l.restrict_to_vanishing(&[5]).is_err());
        let gone = l.restrict_to_vanishing(&[1, 2]).unwrap();
        assert_eq!(gone.dim(), 0);
    }

    #[test]
    fn restrict_matches_rank_oracle() {
        let mut rng = stream_rng(9, 0);
        for _ in 0..30 {
            let l = Subspace::random(24, 12, &mut rng);
            let mut coords: Vec<usize> = (1..=24).collect();
            for k in 0..5 {
                let j = rng.gen_range(k..24);
                coords.swap(k, j);
            }
            let coords = &coords[..5];
            let r = l.restrict_to_vanishing(coords).unwrap();
            // rank oracle: generic 5 x 12 constraint matrix has rank 5
            let c = DMatrix::from_fn(5, 12, |a, b| l.basis()[(coords[a] - 1, b)]);
            let rank = c.rank(1e-10);
            assert_eq!(r.dim(), 12 - rank);
            assert!(r.dim() >= 7 && r.dim() <= 12);
            assert!(r.gram_deviation() <= 1e-10);
            for b in 0..r.dim() {
                for &i in coords {
                    assert!(r.basis_vector(b)[i - 1].abs() <= 1e-10);
                }
                assert!(l.distance(r.basis_vector(b)).unwrap() <= 1e-10);
            }
        }
    }

    #[test]
    fn restrict_is_monotone() {
        let mut rng = stream_rng(10, 0);
        let l = Subspace::random(20, 10, &mut rng);
        let small = l.restrict_to_vanishing(&[2, 7]).unwrap();
        let big = l.restrict_to_vanishing(&[2, 7, 11, 13]).unwrap();
        assert!(big.dim() <= small.dim());
        for b in 0..big.dim() {
            assert!(small.distance(big.basis_vector(b)).unwrap() <= 1e-9);
        }
        // incremental restriction agrees with restriction from scratch
        let stepwise = small.restrict_to_vanishing(&[11, 13]).unwrap();
        assert_eq!(stepwise.dim(), big.dim());
        for b in 0..big.dim() {
            assert!(stepwise.distance(big.basis_vector(b)).unwrap() <= 1e-9);
        }
    }

    #[test]
    fn complement_is_orthogonal() {
        let mut rng = stream_rng(11, 0);
        let l = Subspace::random(10, 4, &mut rng);
        let c = l.orthogonal_complement();
        assert_eq!(c.dim(), 6);
        assert!(c.gram_deviation() < 1e-12);
        for b in 0..6 {
            let coeffs = l.coefficients(c.basis_vector(b)).unwrap();
            assert!(coeffs.iter().all(|v| v.abs() < 1e-12));
        }
        assert_eq!(Subspace::trivial(3).orthogonal_complement().dim(), 3);
    }

    #[test]
    fn csv_round_trip() {
        let mut rng = stream_rng(12, 0);
        let l = Subspace::random(6, 3, &mut rng);
        let mut buf = Vec::new();
        l.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("# N=6 dim=3\n"));
        let back = Subspace::read_csv(&buf[..]).unwrap();
        assert_eq!(back.dim(), 3);
        for b in 0..3 {
            assert!(l.distance(back.basis_vector(b)).unwrap() < 1e-12);
        }
        let empty = Subspace::read_csv("# N=5 dim=0\n".as_bytes()).unwrap();
        assert_eq!((empty.ambient_dim(), empty.dim()), (5, 0));
    }
}
