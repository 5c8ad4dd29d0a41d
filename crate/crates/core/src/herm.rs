//! Hermitian operators and their canonical real coordinates.
//!
//! Every Hermitian `n x n` matrix is identified with a vector in `R^{n^2}`
//! through a fixed orthonormal basis (Hilbert-Schmidt inner product):
//! first the diagonal units `E_kk`, then for every pair `j < l` in
//! lexicographic order the symmetric element `(e_jl + e_lj)/sqrt(2)` followed by
//! the antisymmetric element `i(e_jl - e_lj)/sqrt(2)`. The coordinate map is a
//! linear isometry, and all scheme matrices are expressed in it.

use std::f64::consts::SQRT_2;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{all_finite, check_square, max_abs, CMatrix, C64, RMatrix};

/// Maximum Hermiticity violation absorbed by symmetrization on ingestion.
pub const HERMITICITY_TOL: f64 = 1e-10;
/// Default relative tolerance for numerical rank decisions.
pub const DEFAULT_REL_TOL: f64 = 1e-9;
/// Eigenvalue floor for positive semidefiniteness of states.
pub const PSD_TOL: f64 = 1e-9;
/// Trace tolerance for states.
pub const TRACE_TOL: f64 = 1e-10;

/// A Hermitian operator on `C^n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MatrixJson", into = "MatrixJson")]
pub struct HermitianMatrix {
    mat: CMatrix,
}

impl HermitianMatrix {
    /// Validates and symmetrizes `mat` with the default tolerance.
    pub fn new(mat: CMatrix) -> Result<Self> {
        Self::with_tolerance(mat, HERMITICITY_TOL)
    }

    /// Accepts `mat` if `max |X - X^dagger| <= tol`, storing `(X + X^dagger)/2`.
    pub fn with_tolerance(mat: CMatrix, tol: f64) -> Result<Self> {
        check_square(&mat)?;
        if !all_finite(&mat) {
            return Err(Error::NonFinite("Hermitian matrix"));
        }
        let adj = mat.adjoint();
        let dev = max_abs(&(&mat - &adj));
        if dev > tol {
            return Err(Error::NotHermitian(dev));
        }
        let mat = (mat + adj).unscale(2.0);
        Ok(Self { mat })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            mat: CMatrix::identity(n, n),
        }
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            mat: CMatrix::zeros(n, n),
        }
    }

    pub fn from_real_diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut mat = CMatrix::zeros(n, n);
        for (k, &d) in diag.iter().enumerate() {
            mat[(k, k)] = C64::new(d, 0.0);
        }
        Self { mat }
    }

    /// `G G^dagger` for an arbitrary `n x r` factor.
    pub fn gram(factor: &CMatrix) -> Self {
        Self::from_raw(factor * factor.adjoint())
    }

    /// Wraps a matrix that is Hermitian up to roundoff, re-symmetrizing it.
    pub(crate) fn from_raw(mat: CMatrix) -> Self {
        let adj = mat.adjoint();
        Self {
            mat: (mat + adj).unscale(2.0),
        }
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.mat
    }

    pub fn into_matrix(self) -> CMatrix {
        self.mat
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim()).map(|k| self.mat[(k, k)].re).sum()
    }

    /// Hilbert-Schmidt inner product `tr(X Y)`.
    pub fn inner(&self, other: &Self) -> f64 {
        self.mat
            .iter()
            .zip(other.mat.iter())
            .map(|(a, b)| (a * b.conj()).re)
            .sum()
    }

    /// Hilbert-Schmidt (Frobenius) norm.
    pub fn norm(&self) -> f64 {
        self.mat.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            mat: self.mat.scale(s),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        Self {
            mat: &self.mat + &other.mat,
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        Self {
            mat: &self.mat - &other.mat,
        }
    }

    /// Eigenvalues in ascending order with matching eigenvector columns.
    pub fn eigh(&self) -> (Vec<f64>, CMatrix) {
        let n = self.dim();
        if n == 0 {
            return (Vec::new(), CMatrix::zeros(0, 0));
        }
        let eig = self.mat.clone().symmetric_eigen();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
        let vectors = CMatrix::from_fn(n, n, |i, j| eig.eigenvectors[(i, order[j])]);
        (values, vectors)
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        self.eigh().0
    }

    /// Rebuilds `V diag(values) V^dagger`.
    pub fn from_eigen(values: &[f64], vectors: &CMatrix) -> Self {
        let n = vectors.nrows();
        let mut scaled = vectors.clone();
        for (j, &v) in values.iter().enumerate() {
            for i in 0..n {
                scaled[(i, j)] *= v;
            }
        }
        Self::from_raw(scaled * vectors.adjoint())
    }
}

/// A quantum state: positive semidefinite with unit trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DensityJson", into = "DensityJson")]
pub struct DensityMatrix {
    base: HermitianMatrix,
    rank_hint: Option<usize>,
}

impl DensityMatrix {
    pub fn new(base: HermitianMatrix, rank_hint: Option<usize>) -> Result<Self> {
        let trace = base.trace();
        if (trace - 1.0).abs() > TRACE_TOL {
            return Err(Error::InvalidTrace(trace));
        }
        let eigs = base.eigenvalues();
        if let Some(&min) = eigs.first() {
            if min < -PSD_TOL {
                return Err(Error::NotPsd {
                    index: 0,
                    min_eigenvalue: min,
                });
            }
        }
        if let Some(hint) = rank_hint {
            let rank = eigs.iter().filter(|&&e| e > PSD_TOL).count();
            if rank > hint {
                return Err(Error::RankHintViolated { rank, hint });
            }
        }
        Ok(Self { base, rank_hint })
    }

    /// The maximally mixed state `I/n`.
    pub fn maximally_mixed(n: usize) -> Self {
        Self {
            base: HermitianMatrix::identity(n).scale(1.0 / n as f64),
            rank_hint: None,
        }
    }

    /// Pure state `|psi><psi|` for a (not necessarily normalized) vector.
    pub fn pure(psi: &DVector<C64>) -> Result<Self> {
        let norm = psi.norm();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::InvalidArgument("zero or non-finite state vector".into()));
        }
        let v = psi.unscale(norm);
        let col = CMatrix::from_column_slice(v.len(), 1, v.as_slice());
        Ok(Self {
            base: HermitianMatrix::gram(&col),
            rank_hint: Some(1),
        })
    }

    pub fn dim(&self) -> usize {
        self.base.dim()
    }

    pub fn rank_hint(&self) -> Option<usize> {
        self.rank_hint
    }

    pub fn as_hermitian(&self) -> &HermitianMatrix {
        &self.base
    }

    pub fn into_hermitian(self) -> HermitianMatrix {
        self.base
    }
}

/// The ordered orthonormal basis of Hermitian matrices described in the module docs.
#[derive(Clone, Debug)]
pub struct HermBasis {
    n: usize,
    elements: Vec<HermitianMatrix>,
}

impl HermBasis {
    pub fn new(n: usize) -> Self {
        let elements = (0..n * n)
            .map(|a| {
                let mut v = DVector::zeros(n * n);
                v[a] = 1.0;
                coords_to_herm(n, &v)
            })
            .collect();
        Self { n, elements }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn elements(&self) -> &[HermitianMatrix] {
        &self.elements
    }

    /// Coordinates of `x`, checked against this basis' dimension.
    pub fn coordinates(&self, x: &HermitianMatrix) -> Result<DVector<f64>> {
        if x.dim() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: x.dim(),
            });
        }
        Ok(herm_to_vec(x))
    }

    pub fn matrix(&self, v: &DVector<f64>) -> Result<HermitianMatrix> {
        if v.len() != self.n * self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n * self.n,
                got: v.len(),
            });
        }
        Ok(coords_to_herm(self.n, v))
    }
}

/// Index of the symmetric coordinate of pair `(j, l)`, `j < l`; the
/// antisymmetric one follows it.
fn pair_offset(n: usize, j: usize, l: usize) -> usize {
    // pairs (0,1),(0,2),...,(0,n-1),(1,2),... each take two slots
    let before: usize = (0..j).map(|r| n - 1 - r).sum();
    n + 2 * (before + (l - j - 1))
}

/// Real coordinates of `x` in the canonical Hermitian basis.
pub fn herm_to_vec(x: &HermitianMatrix) -> DVector<f64> {
    let n = x.dim();
    let m = x.matrix();
    let mut v = DVector::zeros(n * n);
    for k in 0..n {
        v[k] = m[(k, k)].re;
    }
    for j in 0..n {
        for l in (j + 1)..n {
            let off = pair_offset(n, j, l);
            v[off] = SQRT_2 * m[(j, l)].re;
            v[off + 1] = SQRT_2 * m[(j, l)].im;
        }
    }
    v
}

/// Inverse of [`herm_to_vec`].
pub fn vec_to_herm(v: &DVector<f64>) -> Result<HermitianMatrix> {
    let len = v.len();
    let n = (len as f64).sqrt().round() as usize;
    if n * n != len {
        return Err(Error::BadLength(len));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("coordinate vector"));
    }
    Ok(coords_to_herm(n, v))
}

fn coords_to_herm(n: usize, v: &DVector<f64>) -> HermitianMatrix {
    let mut m = CMatrix::zeros(n, n);
    for k in 0..n {
        m[(k, k)] = C64::new(v[k], 0.0);
    }
    for j in 0..n {
        for l in (j + 1)..n {
            let off = pair_offset(n, j, l);
            let z = C64::new(v[off], v[off + 1]) / SQRT_2;
            m[(j, l)] = z;
            m[(l, j)] = z.conj();
        }
    }
    HermitianMatrix { mat: m }
}

/// Result of [`numerical_rank`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankInfo {
    pub rank: usize,
    /// All singular values, descending.
    pub singular_values: Vec<f64>,
}

/// Singular values of a real matrix in descending order.
pub fn singular_values(a: &RMatrix) -> Vec<f64> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Vec::new();
    }
    let mut sv: Vec<f64> = a.clone().svd(false, false).singular_values.iter().cloned().collect();
    sv.sort_by(|x, y| y.total_cmp(x));
    sv
}

/// Number of singular values above `rel_tol * sigma_max`.
pub fn numerical_rank(a: &RMatrix, rel_tol: f64) -> Result<RankInfo> {
    if !(rel_tol > 0.0 && rel_tol < 1.0) {
        return Err(Error::InvalidArgument(format!("rel_tol {rel_tol} outside (0, 1)")));
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("rank input"));
    }
    let singular_values = singular_values(a);
    let top = singular_values.first().copied().unwrap_or(0.0);
    let rank = if top == 0.0 {
        0
    } else {
        singular_values.iter().filter(|&&s| s > rel_tol * top).count()
    };
    Ok(RankInfo {
        rank,
        singular_values,
    })
}

/// Stacks coordinate vectors as rows of a real matrix.
pub fn rows_to_matrix(rows: &[DVector<f64>], ncols: usize) -> RMatrix {
    DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j])
}

/// JSON exchange form of a complex square matrix: `{"n", "re", "im"}` row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixJson {
    pub n: usize,
    pub re: Vec<Vec<f64>>,
    pub im: Vec<Vec<f64>>,
}

impl MatrixJson {
    pub fn from_complex(m: &CMatrix) -> Self {
        let n = m.nrows();
        Self {
            n,
            re: (0..n).map(|i| (0..n).map(|j| m[(i, j)].re).collect()).collect(),
            im: (0..n).map(|i| (0..n).map(|j| m[(i, j)].im).collect()).collect(),
        }
    }

    pub fn to_complex(&self) -> Result<CMatrix> {
        let n = self.n;
        let shape_ok = |rows: &Vec<Vec<f64>>| rows.len() == n && rows.iter().all(|r| r.len() == n);
        if !shape_ok(&self.re) || !shape_ok(&self.im) {
            return Err(Error::InvalidArgument(format!("matrix arrays are not {n}x{n}")));
        }
        let m = CMatrix::from_fn(n, n, |i, j| C64::new(self.re[i][j], self.im[i][j]));
        if !all_finite(&m) {
            return Err(Error::NonFinite("matrix JSON"));
        }
        Ok(m)
    }
}

impl TryFrom<MatrixJson> for HermitianMatrix {
    type Error = Error;
    fn try_from(j: MatrixJson) -> Result<Self> {
        HermitianMatrix::new(j.to_complex()?)
    }
}

impl From<HermitianMatrix> for MatrixJson {
    fn from(h: HermitianMatrix) -> Self {
        MatrixJson::from_complex(&h.mat)
    }
}

#[derive(Serialize, Deserialize)]
struct DensityJson {
    #[serde(flatten)]
    matrix: MatrixJson,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rank_hint: Option<usize>,
}

impl TryFrom<DensityJson> for DensityMatrix {
    type Error = Error;
    fn try_from(j: DensityJson) -> Result<Self> {
        DensityMatrix::new(HermitianMatrix::try_from(j.matrix)?, j.rank_hint)
    }
}

impl From<DensityMatrix> for DensityJson {
    fn from(d: DensityMatrix) -> Self {
        DensityJson {
            matrix: d.base.into(),
            rank_hint: d.rank_hint,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pauli_x() -> HermitianMatrix {
        let mut m = CMatrix::zeros(2, 2);
        m[(0, 1)] = C64::new(1.0, 0.0);
        m[(1, 0)] = C64::new(1.0, 0.0);
        HermitianMatrix::new(m).unwrap()
    }

    fn herm_from_seed(n: usize, vals: &[f64]) -> HermitianMatrix {
        let v = DVector::from_fn(n * n, |i, _| vals[i % vals.len()] * (1.0 + i as f64 * 0.1));
        vec_to_herm(&v).unwrap()
    }

    #[test]
    fn diagonal_unit_maps_to_first_coordinate() {
        let x = HermitianMatrix::from_real_diagonal(&[1.0, 0.0]);
        assert_eq!(herm_to_vec(&x).as_slice(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn pauli_x_coordinates() {
        // <B_2, sigma_x> = tr((e01 + e10)/sqrt2 * sigma_x) = 2/sqrt2
        let basis = HermBasis::new(2);
        let oracle: Vec<f64> = basis.elements().iter().map(|b| b.inner(&pauli_x())).collect();
        let v = herm_to_vec(&pauli_x());
        for (a, b) in v.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!((v[2] - SQRT_2).abs() < 1e-15);
        assert_eq!(v[0], 0.0);
        assert_eq!(v[3], 0.0);
    }

    #[test]
    fn basis_is_orthonormal_and_ordered() {
        for n in 1..=5 {
            let basis = HermBasis::new(n);
            let els = basis.elements();
            assert_eq!(els.len(), n * n);
            for a in 0..n * n {
                for b in 0..n * n {
                    let expect = if a == b { 1.0 } else { 0.0 };
                    assert!((els[a].inner(&els[b]) - expect).abs() < 1e-12);
                }
            }
            for el in &els[..n] {
                let m = el.matrix();
                for i in 0..n {
                    for j in 0..n {
                        if i != j {
                            assert_eq!(m[(i, j)], C64::new(0.0, 0.0));
                        }
                    }
                }
            }
        }
        // n = 3: pair (0,1) then (0,2) then (1,2)
        let b = HermBasis::new(3);
        assert!(b.elements()[5].matrix()[(0, 2)].re > 0.0);
        assert!(b.elements()[7].matrix()[(1, 2)].re > 0.0);
        assert!(b.elements()[8].matrix()[(1, 2)].im > 0.0);
    }

    #[test]
    fn basis_coordinates_reject_wrong_dimension() {
        let b = HermBasis::new(3);
        assert!(matches!(
            b.coordinates(&HermitianMatrix::identity(2)),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(b.matrix(&DVector::zeros(4)).is_err());
    }

    #[test]
    fn vec_to_herm_edge_cases() {
        let z = vec_to_herm(&DVector::zeros(9)).unwrap();
        assert_eq!(z, HermitianMatrix::zeros(3));
        assert!(matches!(vec_to_herm(&DVector::zeros(5)), Err(Error::BadLength(5))));
        let basis = HermBasis::new(3);
        for a in 0..9 {
            let mut e = DVector::zeros(9);
            e[a] = 1.0;
            assert_eq!(vec_to_herm(&e).unwrap(), basis.elements()[a]);
        }
    }

    #[test]
    fn ingestion_symmetrizes_or_rejects() {
        let mut m = CMatrix::identity(2, 2);
        m[(0, 1)] = C64::new(0.5, 1e-11);
        m[(1, 0)] = C64::new(0.5, 0.0);
        let h = HermitianMatrix::new(m.clone()).unwrap();
        assert_eq!(h.matrix()[(0, 1)], h.matrix()[(1, 0)].conj());
        m[(0, 1)] = C64::new(0.5, 1e-6);
        assert!(matches!(HermitianMatrix::new(m), Err(Error::NotHermitian(_))));
        let mut bad = CMatrix::identity(2, 2);
        bad[(0, 0)] = C64::new(f64::NAN, 0.0);
        assert!(matches!(HermitianMatrix::new(bad), Err(Error::NonFinite(_))));
    }

    #[test]
    fn density_matrix_validation() {
        assert!(DensityMatrix::new(HermitianMatrix::from_real_diagonal(&[0.5, 0.5]), None).is_ok());
        assert!(matches!(
            DensityMatrix::new(HermitianMatrix::from_real_diagonal(&[0.6, 0.6]), None),
            Err(Error::InvalidTrace(_))
        ));
        assert!(matches!(
            DensityMatrix::new(HermitianMatrix::from_real_diagonal(&[1.5, -0.5]), None),
            Err(Error::NotPsd { .. })
        ));
        assert!(matches!(
            DensityMatrix::new(HermitianMatrix::from_real_diagonal(&[0.5, 0.5]), Some(1)),
            Err(Error::RankHintViolated { rank: 2, hint: 1 })
        ));
    }

    #[test]
    fn rank_examples() {
        let r = numerical_rank(&RMatrix::zeros(4, 4), 1e-9).unwrap();
        assert_eq!(r.rank, 0);
        let r = numerical_rank(&RMatrix::identity(4, 4), 1e-9).unwrap();
        assert_eq!(r.rank, 4);
        assert!(r.singular_values.iter().all(|&s| (s - 1.0).abs() < 1e-15));
        let r = numerical_rank(&RMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1e-12])), 1e-9).unwrap();
        assert_eq!(r.rank, 1);
        assert_eq!(r.singular_values.len(), 2);
        let mut bad = RMatrix::zeros(2, 2);
        bad[(0, 0)] = f64::INFINITY;
        assert!(numerical_rank(&bad, 1e-9).is_err());
        assert!(numerical_rank(&RMatrix::identity(2, 2), 1.5).is_err());
    }

    #[test]
    fn matrix_json_round_trip() {
        let h = herm_from_seed(3, &[0.3, -1.2, 2.0, 0.7]);
        let s = serde_json::to_string(&h).unwrap();
        assert!(s.contains("\"n\":3"));
        let back: HermitianMatrix = serde_json::from_str(&s).unwrap();
        assert_eq!(back, h);
        let bad = r#"{"n":2,"re":[[1,0],[0,1]],"im":[[0,1],[0,0]]}"#;
        assert!(serde_json::from_str::<HermitianMatrix>(bad).is_err());
    }

    fn arb_coords(n: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-3.0f64..3.0, n * n)
    }

    proptest! {
        #[test]
        fn coordinate_round_trip(v in arb_coords(4)) {
            let v = DVector::from_vec(v);
            let h = vec_to_herm(&v).unwrap();
            let back = herm_to_vec(&h);
            prop_assert!((back - &v).norm() < 1e-12);
            let h2 = vec_to_herm(&herm_to_vec(&h)).unwrap();
            prop_assert!(h2.sub(&h).norm() < 1e-12);
        }

        #[test]
        fn coordinates_are_isometric(a in arb_coords(3), b in arb_coords(3)) {
            let x = vec_to_herm(&DVector::from_vec(a)).unwrap();
            let y = vec_to_herm(&DVector::from_vec(b)).unwrap();
            let dot = herm_to_vec(&x).dot(&herm_to_vec(&y));
            prop_assert!((x.inner(&y) - dot).abs() < 1e-10);
            prop_assert!((x.norm() - herm_to_vec(&x).norm()).abs() < 1e-10);
            let tr = herm_to_vec(&x).dot(&herm_to_vec(&HermitianMatrix::identity(3)));
            prop_assert!((x.trace() - tr).abs() < 1e-10);
        }

        #[test]
        fn rank_invariant_under_permutation_and_rotation(
            entries in proptest::collection::vec(-2.0f64..2.0, 15),
            angle in 0.0f64..std::f64::consts::TAU,
            shift in 0usize..5,
        ) {
            // rank-deficient 5x3 with a duplicated column direction
            let mut a = RMatrix::from_column_slice(5, 3, &entries);
            let c0 = a.column(0).clone_owned();
            a.set_column(2, &(c0 * 2.0));
            let r0 = numerical_rank(&a, 1e-9).unwrap();
            let perm = RMatrix::from_fn(5, 5, |i, j| if j == (i + shift) % 5 { 1.0 } else { 0.0 });
            let (c, s) = (angle.cos(), angle.sin());
            let rot = RMatrix::from_row_slice(3, 3, &[c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0]);
            let r1 = numerical_rank(&(perm * &a * rot), 1e-9).unwrap();
            prop_assert_eq!(r0.rank, r1.rank);
            for (x, y) in r0.singular_values.iter().zip(&r1.singular_values) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }
    }
}
