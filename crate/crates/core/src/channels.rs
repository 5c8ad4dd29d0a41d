//! Quantum channels as superoperators on vectorized `n x n` operators.
//!
//! The Heisenberg map (acting on effects, unital) is stored as the primary
//! superoperator; the Schrödinger map is its Hilbert-Schmidt adjoint. Spectra
//! are computed once at construction.

use nalgebra::{DVector, Schur};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::herm::{herm_to_vec, numerical_rank, rows_to_matrix, HermitianMatrix, MatrixJson, DEFAULT_REL_TOL};
use crate::linalg::{
    all_finite, check_square, max_abs, sandwich, unitarity_deviation, unvec_op, vec_op, CMatrix, C64, ONE,
};

/// Default clustering tolerance for eigenvalue multiplicities.
pub const DEFAULT_CLUSTER_TOL: f64 = 1e-7;
/// Default minimum spectral gap for feasibility verdicts.
pub const DEFAULT_GAP_TOL: f64 = 1e-7;

const UNITARY_TOL: f64 = 1e-9;
const KRAUS_TOL: f64 = 1e-8;
const UNITALITY_TOL: f64 = 1e-9;
const CHOI_TOL: f64 = 1e-8;
const EVOLVED_HERMITICITY_TOL: f64 = 1e-9;
const SCHUR_RESIDUAL_TOL: f64 = 1e-8;

/// Unital generator `L(X) = i[H, X] + sum_j (V_j X V_j - {V_j^2, X}/2)` with
/// Hermitian jump operators, in the Heisenberg direction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GeneratorJson", into = "GeneratorJson")]
pub struct Generator {
    hamiltonian: HermitianMatrix,
    jumps: Vec<HermitianMatrix>,
    superop: CMatrix,
}

impl Generator {
    pub fn new(hamiltonian: HermitianMatrix, jumps: Vec<HermitianMatrix>) -> Result<Self> {
        let n = hamiltonian.dim();
        if let Some(bad) = jumps.iter().find(|v| v.dim() != n) {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: bad.dim(),
            });
        }
        let id = CMatrix::identity(n, n);
        let i = C64::new(0.0, 1.0);
        let h = hamiltonian.matrix();
        let mut superop = (sandwich(h, &id) - sandwich(&id, h)) * i;
        for v in &jumps {
            let v = v.matrix();
            let v2 = v * v;
            superop += sandwich(v, v) - (sandwich(&v2, &id) + sandwich(&id, &v2)) * C64::new(0.5, 0.0);
        }
        let gen = Self {
            hamiltonian,
            jumps,
            superop,
        };
        let leak = max_abs(&unvec_op(&(&gen.superop * vec_op(&id)), n));
        if leak > UNITALITY_TOL {
            return Err(Error::InvalidChannel(format!("generator does not annihilate identity ({leak:e})")));
        }
        Ok(gen)
    }

    pub fn hamiltonian_only(hamiltonian: HermitianMatrix) -> Result<Self> {
        Self::new(hamiltonian, Vec::new())
    }

    pub fn dim(&self) -> usize {
        self.hamiltonian.dim()
    }

    pub fn hamiltonian(&self) -> &HermitianMatrix {
        &self.hamiltonian
    }

    pub fn jumps(&self) -> &[HermitianMatrix] {
        &self.jumps
    }

    pub fn superop(&self) -> &CMatrix {
        &self.superop
    }

    pub fn apply(&self, x: &HermitianMatrix) -> HermitianMatrix {
        HermitianMatrix::from_raw(unvec_op(&(&self.superop * vec_op(x.matrix())), self.dim()))
    }
}

#[derive(Serialize, Deserialize)]
struct GeneratorJson {
    hamiltonian: HermitianMatrix,
    jumps: Vec<HermitianMatrix>,
}

impl TryFrom<GeneratorJson> for Generator {
    type Error = Error;
    fn try_from(j: GeneratorJson) -> Result<Self> {
        Generator::new(j.hamiltonian, j.jumps)
    }
}

impl From<Generator> for GeneratorJson {
    fn from(g: Generator) -> Self {
        GeneratorJson {
            hamiltonian: g.hamiltonian,
            jumps: g.jumps,
        }
    }
}

/// How a channel was constructed.
#[derive(Clone, Debug, PartialEq)]
pub enum ChannelKind {
    Unitary(CMatrix),
    Kraus(Vec<CMatrix>),
    Semigroup { generator: Generator, t: f64 },
}

/// Direction in which a channel acts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    /// On states; trace preserving.
    Schrodinger,
    /// On effects; unital.
    Heisenberg,
}

/// A completely positive channel with cached spectrum.
#[derive(Clone, Debug)]
pub struct Channel {
    n: usize,
    kind: ChannelKind,
    heisenberg: CMatrix,
    schrodinger: CMatrix,
    spectrum: Vec<C64>,
    spectral_residual: f64,
}

/// `X -> U X U^dagger` in the Schrödinger direction.
pub fn unitary_channel(u: &CMatrix) -> Result<Channel> {
    check_square(u)?;
    if !all_finite(u) {
        return Err(Error::NonFinite("unitary"));
    }
    let dev = unitarity_deviation(u);
    if dev > UNITARY_TOL {
        return Err(Error::NonUnitary(dev));
    }
    let heisenberg = sandwich(&u.adjoint(), u);
    let lambdas = unitary_eigenvalues(u)?;
    let spectrum = lambdas
        .iter()
        .flat_map(|li| lambdas.iter().map(move |lj| li.conj() * lj))
        .collect();
    Channel::assemble(ChannelKind::Unitary(u.clone()), heisenberg, Some(spectrum))
}

/// `rho -> sum_i K_i rho K_i^dagger`.
pub fn cptp_from_kraus(kraus: &[CMatrix]) -> Result<Channel> {
    let first = kraus
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty Kraus list".into()))?;
    let n = check_square(first)?;
    let mut completeness = CMatrix::zeros(n, n);
    let mut heisenberg = CMatrix::zeros(n * n, n * n);
    for k in kraus {
        if k.nrows() != n || k.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: k.nrows().max(k.ncols()),
            });
        }
        if !all_finite(k) {
            return Err(Error::NonFinite("Kraus operator"));
        }
        completeness += k.adjoint() * k;
        heisenberg += sandwich(&k.adjoint(), k);
    }
    let dev = max_abs(&(completeness - CMatrix::identity(n, n)));
    if dev > KRAUS_TOL {
        return Err(Error::KrausIncomplete(dev));
    }
    Channel::assemble(ChannelKind::Kraus(kraus.to_vec()), heisenberg, None)
}

/// `T_t = exp(t L)` for a unital generator.
pub fn semigroup_channel(generator: &Generator, t: f64) -> Result<Channel> {
    if !t.is_finite() {
        return Err(Error::NonFinite("time"));
    }
    if t < 0.0 {
        return Err(Error::NegativeTime(t));
    }
    let heisenberg = (generator.superop() * C64::new(t, 0.0)).exp();
    Channel::assemble(
        ChannelKind::Semigroup {
            generator: generator.clone(),
            t,
        },
        heisenberg,
        None,
    )
}

/// Eigenvalues of a unitary from its complex Schur form (diagonal for normal matrices).
pub fn unitary_eigenvalues(u: &CMatrix) -> Result<Vec<C64>> {
    let (values, _) = eigen_schur(u)?;
    Ok(values)
}

/// Eigenvalues and eigenvectors of a unitary matrix; columns of the second
/// component are orthonormal eigenvectors.
pub fn unitary_eigen(u: &CMatrix) -> Result<(Vec<C64>, CMatrix)> {
    let n = check_square(u)?;
    let schur = Schur::try_new(u.clone(), f64::EPSILON, 1000 * n.max(1)).ok_or(Error::EigenNonConvergence)?;
    let (q, t) = schur.unpack();
    Ok(((0..n).map(|k| t[(k, k)]).collect(), q))
}

/// Eigenvalues from the diagonal of a complex Schur form, plus the relative
/// backward residual `|A - Q T Q^dagger| / |A|`.
fn eigen_schur(a: &CMatrix) -> Result<(Vec<C64>, f64)> {
    let n = check_square(a)?;
    let schur = Schur::try_new(a.clone(), f64::EPSILON, 1000 * n.max(1)).ok_or(Error::EigenNonConvergence)?;
    let (q, t) = schur.unpack();
    let mut values = Vec::with_capacity(n);
    let mut k = 0;
    let mut sub = 0.0f64;
    while k < n {
        // complex Schur forms can keep an unsplit 2x2 block
        if k + 1 < n && t[(k + 1, k)].norm() > f64::EPSILON * (t[(k, k)].norm() + t[(k + 1, k + 1)].norm() + 1.0) {
            let (a11, a12, a21, a22) = (t[(k, k)], t[(k, k + 1)], t[(k + 1, k)], t[(k + 1, k + 1)]);
            let half_tr = (a11 + a22) * 0.5;
            let det = a11 * a22 - a12 * a21;
            let disc = (half_tr * half_tr - det).sqrt();
            values.push(half_tr + disc);
            values.push(half_tr - disc);
            k += 2;
        } else {
            values.push(t[(k, k)]);
            k += 1;
        }
    }
    for i in 0..n {
        for j in 0..i.saturating_sub(1) {
            sub = sub.max(t[(i, j)].norm());
        }
    }
    let recon = &q * &t * q.adjoint();
    let scale = max_abs(a).max(f64::MIN_POSITIVE);
    let residual = (max_abs(&(recon - a)) / scale).max(sub / scale);
    Ok((values, residual))
}

impl Channel {
    fn assemble(kind: ChannelKind, heisenberg: CMatrix, spectrum: Option<Vec<C64>>) -> Result<Self> {
        let n = (heisenberg.nrows() as f64).sqrt().round() as usize;
        if !all_finite(&heisenberg) {
            return Err(Error::InvalidChannel("non-finite superoperator".into()));
        }
        let schrodinger = heisenberg.adjoint();
        let (spectrum, spectral_residual) = match spectrum {
            Some(s) => (s, 0.0),
            None => eigen_schur(&heisenberg)?,
        };
        let ch = Self {
            n,
            kind,
            heisenberg,
            schrodinger,
            spectrum,
            spectral_residual,
        };
        ch.validate()?;
        Ok(ch)
    }

    /// Unitality of the Heisenberg map and positivity of the Choi matrix.
    fn validate(&self) -> Result<()> {
        let n = self.n;
        let id = CMatrix::identity(n, n);
        let unital = max_abs(&(unvec_op(&(&self.heisenberg * vec_op(&id)), n) - &id));
        if unital > UNITALITY_TOL {
            return Err(Error::InvalidChannel(format!("Heisenberg map is not unital ({unital:e})")));
        }
        let min_choi = self.choi().eigenvalues().first().copied().unwrap_or(0.0);
        if min_choi < -CHOI_TOL {
            return Err(Error::InvalidChannel(format!("Choi matrix has eigenvalue {min_choi:e}")));
        }
        Ok(())
    }

    /// Choi matrix `sum_ij E_ij (x) S(E_ij)` of the Schrödinger map.
    pub fn choi(&self) -> HermitianMatrix {
        let n = self.n;
        let mut choi = CMatrix::zeros(n * n, n * n);
        for i in 0..n {
            for j in 0..n {
                let mut e = CMatrix::zeros(n, n);
                e[(i, j)] = ONE;
                let img = unvec_op(&(&self.schrodinger * vec_op(&e)), n);
                choi.view_mut((i * n, j * n), (n, n)).copy_from(&img);
            }
        }
        HermitianMatrix::from_raw(choi)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn kind(&self) -> &ChannelKind {
        &self.kind
    }

    pub fn is_unitary(&self) -> bool {
        matches!(self.kind, ChannelKind::Unitary(_))
    }

    pub fn heisenberg_superop(&self) -> &CMatrix {
        &self.heisenberg
    }

    pub fn schrodinger_superop(&self) -> &CMatrix {
        &self.schrodinger
    }

    /// Eigenvalues of the Heisenberg superoperator (`n^2` values, unclustered).
    pub fn spectrum(&self) -> &[C64] {
        &self.spectrum
    }

    /// Relative backward residual of the eigensolver (0 for unitary channels).
    pub fn spectral_residual(&self) -> f64 {
        self.spectral_residual
    }

    fn superop(&self, direction: Direction) -> &CMatrix {
        match direction {
            Direction::Schrodinger => &self.schrodinger,
            Direction::Heisenberg => &self.heisenberg,
        }
    }

    fn check_dim(&self, x: &HermitianMatrix) -> Result<()> {
        if x.dim() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: x.dim(),
            });
        }
        Ok(())
    }

    pub fn apply(&self, x: &HermitianMatrix, direction: Direction) -> Result<HermitianMatrix> {
        self.apply_power(x, 1, direction)
    }

    /// `j`-fold application; `j = 0` returns `x` unchanged.
    pub fn apply_power(&self, x: &HermitianMatrix, j: usize, direction: Direction) -> Result<HermitianMatrix> {
        self.check_dim(x)?;
        if j == 0 {
            return Ok(x.clone());
        }
        let op = self.superop(direction);
        let mut v = vec_op(x.matrix());
        for _ in 0..j {
            v = op * v;
        }
        HermitianMatrix::with_tolerance(unvec_op(&v, self.n), EVOLVED_HERMITICITY_TOL)
    }

    /// Heisenberg iterates `X, T(X), ..., T^{count-1}(X)`.
    pub fn heisenberg_orbit(&self, x: &HermitianMatrix, count: usize) -> Result<Vec<HermitianMatrix>> {
        self.check_dim(x)?;
        let mut out = Vec::with_capacity(count);
        let mut v: DVector<C64> = vec_op(x.matrix());
        for k in 0..count {
            if k > 0 {
                v = &self.heisenberg * v;
            }
            out.push(HermitianMatrix::with_tolerance(unvec_op(&v, self.n), EVOLVED_HERMITICITY_TOL)?);
        }
        Ok(out)
    }

    /// Eigenvalue multiset of the Heisenberg map, clustered at `tol`.
    pub fn superop_eigs(&self, tol: f64) -> EigenMultiset {
        EigenMultiset::cluster(&self.spectrum, tol)
    }

    /// Number of eigenvalues within `tol` of 1.
    pub fn fixed_space_dim(&self, tol: f64) -> usize {
        self.spectrum.iter().filter(|l| (*l - ONE).norm() <= tol).count()
    }

    /// Dimension of `span{T^j(X) : j < depth}` (Heisenberg direction).
    pub fn krylov_rank(&self, x: &HermitianMatrix, depth: usize) -> Result<usize> {
        if depth == 0 {
            return Err(Error::InvalidArgument("krylov depth must be at least 1".into()));
        }
        let rows: Vec<_> = self.heisenberg_orbit(x, depth)?.iter().map(herm_to_vec).collect();
        Ok(numerical_rank(&rows_to_matrix(&rows, self.n * self.n), DEFAULT_REL_TOL)?.rank)
    }

    /// Feasibility under the definition matching this channel's kind.
    pub fn feasibility(&self, tol: f64) -> FeasibilityReport {
        match &self.kind {
            ChannelKind::Unitary(u) => unitary_report(&self.spectrum, u.nrows(), tol),
            _ => feasibility_cptp(self, tol),
        }
    }
}

/// One cluster of numerically equal eigenvalues.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EigenCluster {
    pub value: C64,
    pub multiplicity: usize,
}

/// Eigenvalues grouped into clusters with multiplicities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EigenMultiset {
    pub clusters: Vec<EigenCluster>,
}

impl EigenMultiset {
    /// Single-linkage clustering: values closer than `tol` share a cluster.
    pub fn cluster(values: &[C64], tol: f64) -> Self {
        let k = values.len();
        let mut parent: Vec<usize> = (0..k).collect();
        fn find(p: &mut [usize], mut i: usize) -> usize {
            while p[i] != i {
                p[i] = p[p[i]];
                i = p[i];
            }
            i
        }
        for a in 0..k {
            for b in (a + 1)..k {
                if (values[a] - values[b]).norm() <= tol {
                    let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                    if ra != rb {
                        parent[rb.max(ra)] = ra.min(rb);
                    }
                }
            }
        }
        let mut clusters: Vec<(usize, C64, usize)> = Vec::new();
        for (i, &value) in values.iter().enumerate().take(k) {
            let root = find(&mut parent, i);
            match clusters.iter_mut().find(|c| c.0 == root) {
                Some(c) => {
                    c.1 += value;
                    c.2 += 1;
                }
                None => clusters.push((root, value, 1)),
            }
        }
        let mut clusters: Vec<EigenCluster> = clusters
            .into_iter()
            .map(|(_, sum, m)| EigenCluster {
                value: sum / m as f64,
                multiplicity: m,
            })
            .collect();
        clusters.sort_by(|a, b| b.value.re.total_cmp(&a.value.re).then(b.value.im.total_cmp(&a.value.im)));
        Self { clusters }
    }

    pub fn total(&self) -> usize {
        self.clusters.iter().map(|c| c.multiplicity).sum()
    }

    pub fn multiplicity_of(&self, value: C64, tol: f64) -> usize {
        self.clusters
            .iter()
            .filter(|c| (c.value - value).norm() <= tol)
            .map(|c| c.multiplicity)
            .sum()
    }
}

/// Why a channel was (not) found feasible.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeasibilityReason {
    Feasible,
    /// Fixed space dimension differs from `n` (unitary definition).
    FixedSpace,
    /// Two eigenvalues that must be distinct are closer than the tolerance.
    DegenerateSpectrum,
    /// An eigenvalue is within the tolerance of zero.
    NonInvertible,
    /// The eigensolver's backward residual is too large to trust the spectrum.
    EigensolverResidual,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub feasible: bool,
    pub eigenvalues: Vec<C64>,
    /// Smallest distance among the eigenvalues required to be distinct;
    /// `None` when fewer than two are constrained.
    pub min_pairwise_gap: Option<f64>,
    pub fixed_space_dim: usize,
    pub reason: FeasibilityReason,
    pub tolerance: f64,
}

fn min_gap<'a>(values: impl Iterator<Item = &'a C64> + Clone) -> Option<f64> {
    let vals: Vec<&C64> = values.collect();
    let mut best: Option<f64> = None;
    for a in 0..vals.len() {
        for b in (a + 1)..vals.len() {
            let d = (vals[a] - vals[b]).norm();
            best = Some(best.map_or(d, |x| x.min(d)));
        }
    }
    best
}

/// Feasibility of a unitary: fixed space of dimension exactly `n` and
/// pairwise distinct off-diagonal eigenvalues `conj(l_i) l_j`, `i != j`.
pub fn feasibility_unitary(u: &CMatrix, gap_tol: f64) -> Result<FeasibilityReport> {
    check_square(u)?;
    let dev = unitarity_deviation(u);
    if dev > UNITARY_TOL {
        return Err(Error::NonUnitary(dev));
    }
    let lambdas = unitary_eigenvalues(u)?;
    let spectrum: Vec<C64> = lambdas
        .iter()
        .flat_map(|li| lambdas.iter().map(move |lj| li.conj() * lj))
        .collect();
    Ok(unitary_report(&spectrum, u.nrows(), gap_tol))
}

fn unitary_report(spectrum: &[C64], n: usize, gap_tol: f64) -> FeasibilityReport {
    let fixed = spectrum.iter().filter(|l| (*l - ONE).norm() <= gap_tol).count();
    let off_diagonal = spectrum
        .iter()
        .enumerate()
        .filter(|(idx, _)| idx / n != idx % n)
        .map(|(_, l)| l);
    let gap = min_gap(off_diagonal);
    let reason = if fixed != n {
        FeasibilityReason::FixedSpace
    } else if gap.is_some_and(|g| g <= gap_tol) {
        FeasibilityReason::DegenerateSpectrum
    } else {
        FeasibilityReason::Feasible
    };
    FeasibilityReport {
        feasible: reason == FeasibilityReason::Feasible,
        eigenvalues: spectrum.to_vec(),
        min_pairwise_gap: gap,
        fixed_space_dim: fixed,
        reason,
        tolerance: gap_tol,
    }
}

/// Feasibility of a general channel: invertible with `n^2` simple eigenvalues.
pub fn feasibility_cptp(channel: &Channel, tol: f64) -> FeasibilityReport {
    let spectrum = channel.spectrum();
    let gap = min_gap(spectrum.iter());
    let min_abs = spectrum.iter().map(|l| l.norm()).fold(f64::INFINITY, f64::min);
    let reason = if channel.spectral_residual() > SCHUR_RESIDUAL_TOL {
        FeasibilityReason::EigensolverResidual
    } else if min_abs <= tol {
        FeasibilityReason::NonInvertible
    } else if gap.is_some_and(|g| g <= tol) {
        FeasibilityReason::DegenerateSpectrum
    } else {
        FeasibilityReason::Feasible
    };
    FeasibilityReport {
        feasible: reason == FeasibilityReason::Feasible,
        eigenvalues: spectrum.to_vec(),
        min_pairwise_gap: gap,
        fixed_space_dim: channel.fixed_space_dim(tol),
        reason,
        tolerance: tol,
    }
}

/// JSON exchange form of a channel, tagged by kind.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ChannelJson {
    Unitary { unitary: MatrixJson },
    Kraus { kraus: Vec<MatrixJson> },
    Semigroup { generator: Generator, t: f64 },
}

impl ChannelJson {
    pub fn from_channel(channel: &Channel) -> Self {
        match &channel.kind {
            ChannelKind::Unitary(u) => ChannelJson::Unitary {
                unitary: MatrixJson::from_complex(u),
            },
            ChannelKind::Kraus(ks) => ChannelJson::Kraus {
                kraus: ks.iter().map(MatrixJson::from_complex).collect(),
            },
            ChannelKind::Semigroup { generator, t } => ChannelJson::Semigroup {
                generator: generator.clone(),
                t: *t,
            },
        }
    }

    pub fn build(&self) -> Result<Channel> {
        match self {
            ChannelJson::Unitary { unitary } => unitary_channel(&unitary.to_complex()?),
            ChannelJson::Kraus { kraus } => {
                let ks = kraus.iter().map(|k| k.to_complex()).collect::<Result<Vec<_>>>()?;
                cptp_from_kraus(&ks)
            }
            ChannelJson::Semigroup { generator, t } => semigroup_channel(generator, *t),
        }
    }
}
