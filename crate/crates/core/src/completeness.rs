//! Completeness decisions for measurement schemes.
//!
//! Full informational completeness is a rank question. Completeness on
//! rank-`r` states asks whether `ker h_M` meets the differences of two rank-`r`
//! states; that is estimated by minimizing `|H vec(X)|` over unit-norm such
//! differences, which can only produce upper-bound evidence. For qubits an
//! exhaustive grid oracle gives an independent check.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::herm::{herm_to_vec, numerical_rank, vec_to_herm, DensityMatrix, HermitianMatrix};
use crate::linalg::{elimination_det, CMatrix, RMatrix, C64, ONE};
use crate::sampling::{random_state, SeededRng};
use crate::schemes::{RationalTimeGrid, SchemeMatrix};

/// Below this margin a violation is reported.
pub const VIOLATION_THRESHOLD: f64 = 1e-6;
/// Above this margin (with enough converged restarts) completeness is plausible.
pub const CANDIDATE_THRESHOLD: f64 = 1e-4;
/// Minimum share of converged restarts for a complete-candidate verdict.
pub const MIN_CONVERGED_FRACTION: f64 = 0.8;
/// Separation below which a sampled pair counts as indistinguishable.
pub const PAIR_FAILURE_THRESHOLD: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompletenessVerdict {
    pub rank: usize,
    pub target_rank: usize,
    pub singular_values: Vec<f64>,
    pub complete: bool,
    /// `sigma_{n^2}` of the scheme matrix when complete, else 0. Any scheme
    /// whose matrix lies closer than this in operator norm is also complete.
    pub stability_margin: f64,
}

/// Rank test of `H` against `n^2`.
pub fn informational_complete(h: &SchemeMatrix, rel_tol: f64) -> Result<CompletenessVerdict> {
    let target_rank = h.dim() * h.dim();
    let info = numerical_rank(h.matrix(), rel_tol)?;
    let complete = info.rank == target_rank;
    let stability_margin = if complete { info.singular_values[target_rank - 1] } else { 0.0 };
    Ok(CompletenessVerdict {
        rank: info.rank,
        target_rank,
        singular_values: info.singular_values,
        complete,
        stability_margin,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case")]
pub enum StepRule {
    /// Armijo backtracking; the step grows by `growth` after each accepted move.
    Backtracking { initial: f64, shrink: f64, growth: f64 },
    Fixed { step: f64 },
}

impl Default for StepRule {
    fn default() -> Self {
        StepRule::Backtracking {
            initial: 1.0,
            shrink: 0.5,
            growth: 2.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginOptions {
    pub restarts: usize,
    pub max_iters: usize,
    pub step: StepRule,
    pub seed: u64,
    /// Stationarity threshold on the gradient norm, relative to `|H|^2`.
    pub grad_tol: f64,
}

impl Default for MarginOptions {
    fn default() -> Self {
        Self {
            restarts: 16,
            max_iters: 20_000,
            step: StepRule::default(),
            seed: 0,
            grad_tol: 1e-8,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MarginVerdict {
    CompleteCandidate,
    ViolationFound,
    Inconclusive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginEstimate {
    /// Smallest `|H vec(X)|` found over unit-norm `X` in the difference set.
    pub value: f64,
    /// Unit-norm traceless minimizer `(A - B)/|A - B|`.
    pub witness: HermitianMatrix,
    /// The two rank-`r` states whose difference gives the witness.
    pub states: (DensityMatrix, DensityMatrix),
    pub restarts: usize,
    pub converged_fraction: f64,
    pub verdict: MarginVerdict,
    /// Final value of every restart, in restart order.
    pub restart_values: Vec<f64>,
}

/// Relative decrease per iteration below which progress counts as stalled.
const STALL_REL: f64 = 1e-10;
/// Consecutive stalled iterations that count as convergence.
const STALL_ITERS: usize = 25;

struct RestartOutcome {
    value_sq: f64,
    a: CMatrix,
    b: CMatrix,
    converged: bool,
}

/// Objective `|H d|^2 / |d|^2` of the difference `A - B` of two normalized factors.
struct DifferenceObjective<'a> {
    gram: &'a RMatrix,
    n: usize,
}

struct Evaluation {
    value: f64,
    grad_a: CMatrix,
    grad_b: CMatrix,
}

impl DifferenceObjective<'_> {
    fn difference(&self, a: &CMatrix, b: &CMatrix) -> DVector<f64> {
        let da = HermitianMatrix::gram(a);
        let db = HermitianMatrix::gram(b);
        herm_to_vec(&da.sub(&db))
    }

    fn value(&self, a: &CMatrix, b: &CMatrix) -> Option<f64> {
        let d = self.difference(a, b);
        let q = d.dot(&d);
        if q < 1e-20 {
            return None;
        }
        Some(d.dot(&(self.gram * &d)) / q)
    }

    fn evaluate(&self, a: &CMatrix, b: &CMatrix) -> Option<Evaluation> {
        let d = self.difference(a, b);
        let q = d.dot(&d);
        if q < 1e-20 {
            return None;
        }
        let gd = self.gram * &d;
        let value = d.dot(&gd) / q;
        let grad_d = (gd - d.scale(value)).scale(2.0 / q);
        let gamma = vec_to_herm(&grad_d).ok()?;
        let gm = gamma.matrix();
        let id = CMatrix::identity(self.n, self.n);
        // factors have unit Frobenius norm, so tr(A) = tr(B) = 1
        let tr_a = gamma.inner(&HermitianMatrix::gram(a));
        let tr_b = gamma.inner(&HermitianMatrix::gram(b));
        let grad_a = (gm - &id * C64::new(tr_a, 0.0)) * a * C64::new(2.0, 0.0);
        let grad_b = (gm - &id * C64::new(tr_b, 0.0)) * b * C64::new(-2.0, 0.0);
        Some(Evaluation { value, grad_a, grad_b })
    }
}

fn normalized(m: CMatrix) -> CMatrix {
    let norm = m.norm();
    m.unscale(norm)
}

fn frob_sq(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum()
}

fn run_restart(obj: &DifferenceObjective, r: usize, opts: &MarginOptions, scale: f64, mut rng: SeededRng) -> RestartOutcome {
    let n = obj.n;
    let mut a = normalized(rng.complex_gaussian_matrix(n, r));
    let mut b = normalized(rng.complex_gaussian_matrix(n, r));
    let mut step = match opts.step {
        StepRule::Backtracking { initial, .. } => initial / scale,
        StepRule::Fixed { step } => step / scale,
    };
    let mut converged = false;
    let mut stalled = 0;
    let mut current = match obj.evaluate(&a, &b) {
        Some(e) => e,
        None => {
            return RestartOutcome {
                value_sq: f64::INFINITY,
                a,
                b,
                converged: false,
            }
        }
    };
    for _ in 0..opts.max_iters {
        let gnorm_sq = frob_sq(&current.grad_a) + frob_sq(&current.grad_b);
        if current.value.sqrt() < VIOLATION_THRESHOLD * 1e-3 || gnorm_sq.sqrt() <= opts.grad_tol * scale {
            converged = true;
            break;
        }
        let mut accepted = None;
        match opts.step {
            StepRule::Backtracking { shrink, growth, .. } => {
                for _ in 0..60 {
                    let ta = normalized(&a - &current.grad_a * C64::new(step, 0.0));
                    let tb = normalized(&b - &current.grad_b * C64::new(step, 0.0));
                    match obj.value(&ta, &tb) {
                        Some(v) if v <= current.value - 1e-4 * step * gnorm_sq => {
                            accepted = Some((ta, tb));
                            break;
                        }
                        _ => step *= shrink,
                    }
                }
                if accepted.is_some() {
                    step *= growth;
                }
            }
            StepRule::Fixed { .. } => {
                accepted = Some((
                    normalized(&a - &current.grad_a * C64::new(step, 0.0)),
                    normalized(&b - &current.grad_b * C64::new(step, 0.0)),
                ));
            }
        }
        let Some((ta, tb)) = accepted else {
            // no descent step exists at working precision
            converged = true;
            break;
        };
        match obj.evaluate(&ta, &tb) {
            Some(e) => {
                if current.value - e.value <= STALL_REL * current.value {
                    stalled += 1;
                } else {
                    stalled = 0;
                }
                if stalled >= STALL_ITERS {
                    converged = true;
                }
                a = ta;
                b = tb;
                current = e;
            }
            None => break,
        }
        if converged {
            break;
        }
    }
    RestartOutcome {
        value_sq: current.value,
        a,
        b,
        converged,
    }
}

/// Estimates `min |H vec(X)|` over unit-norm differences of rank-`r` states.
pub fn rank_r_margin(h: &SchemeMatrix, r: usize, opts: &MarginOptions) -> Result<MarginEstimate> {
    let n = h.dim();
    if r < 1 || r > n {
        return Err(Error::InvalidArgument(format!("rank {r} outside 1..={n}")));
    }
    if opts.restarts == 0 {
        return Err(Error::InvalidArgument("restarts must be at least 1".into()));
    }
    let gram = h.matrix().transpose() * h.matrix();
    let scale = gram.iter().map(|x| x.abs()).fold(0.0, f64::max).max(1e-300) * (n * n) as f64;
    let obj = DifferenceObjective { gram: &gram, n };
    let root = SeededRng::new(opts.seed);
    let outcomes: Vec<RestartOutcome> = (0..opts.restarts)
        .into_par_iter()
        .map(|k| run_restart(&obj, r, opts, scale, root.derive(k as u64)))
        .collect();
    let best = outcomes
        .iter()
        .enumerate()
        .filter(|(_, o)| o.value_sq.is_finite())
        .min_by(|x, y| x.1.value_sq.total_cmp(&y.1.value_sq).then(x.0.cmp(&y.0)))
        .map(|(_, o)| o)
        .ok_or_else(|| Error::Numerical("every restart degenerated".into()))?;
    let state_a = HermitianMatrix::gram(&best.a);
    let state_b = HermitianMatrix::gram(&best.b);
    let diff = state_a.sub(&state_b);
    let witness = diff.scale(1.0 / diff.norm());
    let value = h.apply(&witness)?.norm();
    let converged_fraction = outcomes.iter().filter(|o| o.converged).count() as f64 / opts.restarts as f64;
    let verdict = if value < VIOLATION_THRESHOLD {
        MarginVerdict::ViolationFound
    } else if value > CANDIDATE_THRESHOLD && converged_fraction >= MIN_CONVERGED_FRACTION {
        MarginVerdict::CompleteCandidate
    } else {
        MarginVerdict::Inconclusive
    };
    Ok(MarginEstimate {
        value,
        witness,
        states: (
            DensityMatrix::new(state_a.scale(1.0 / state_a.trace()), Some(r))?,
            DensityMatrix::new(state_b.scale(1.0 / state_b.trace()), Some(r))?,
        ),
        restarts: opts.restarts,
        converged_fraction,
        verdict,
        restart_values: outcomes.iter().map(|o| o.value_sq.sqrt()).collect(),
    })
}

/// Brute-force qubit margin over differences of two pure states.
///
/// `|psi><psi| - |phi><phi| = (a - b).sigma / 2` for Bloch vectors `a`, `b`.
/// Every pair on a `grid_points_per_angle`-point polar/azimuth grid is
/// evaluated, then the best difference direction is refined by repeatedly
/// zooming a local tangent-plane grid around it.
pub fn qubit_margin_oracle(h: &SchemeMatrix, grid_points_per_angle: usize) -> Result<f64> {
    if h.dim() != 2 {
        return Err(Error::DimensionMismatch { expected: 2, got: h.dim() });
    }
    let g = grid_points_per_angle.max(2);
    let paulis = pauli_matrices();
    // images of sigma_k / 2
    let cols: Vec<DVector<f64>> = paulis.iter().map(|p| h.matrix() * herm_to_vec(&p.scale(0.5))).collect();
    let eval = |w: [f64; 3]| -> f64 {
        let norm = (w[0] * w[0] + w[1] * w[1] + w[2] * w[2]).sqrt();
        let img = &cols[0] * w[0] + &cols[1] * w[1] + &cols[2] * w[2];
        // |(a-b).sigma/2|_HS = |a-b| / sqrt(2)
        img.norm() / (norm / std::f64::consts::SQRT_2)
    };
    let bloch: Vec<[f64; 3]> = (0..g)
        .flat_map(|i| {
            let theta = std::f64::consts::PI * i as f64 / (g - 1) as f64;
            (0..g).map(move |j| {
                let phi = 2.0 * std::f64::consts::PI * j as f64 / g as f64;
                [theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos()]
            })
        })
        .collect();
    let mut best = f64::INFINITY;
    let mut best_dir = [0.0, 0.0, 1.0];
    for a in &bloch {
        for b in &bloch {
            let w = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
            if w.iter().map(|x| x * x).sum::<f64>() < 1e-12 {
                continue;
            }
            let v = eval(w);
            if v < best {
                best = v;
                best_dir = w;
            }
        }
    }
    // zoom refinement on the unit sphere of directions
    let mut u = unit(best_dir);
    let mut width = std::f64::consts::PI / g as f64;
    const LOCAL: i32 = 10;
    while width > 1e-13 {
        let (e1, e2) = tangent_frame(u);
        let mut local_best = (eval(u), u);
        for i in -LOCAL..=LOCAL {
            for j in -LOCAL..=LOCAL {
                let (s, t) = (width * i as f64 / LOCAL as f64, width * j as f64 / LOCAL as f64);
                let cand = unit([u[0] + s * e1[0] + t * e2[0], u[1] + s * e1[1] + t * e2[1], u[2] + s * e1[2] + t * e2[2]]);
                let v = eval(cand);
                if v < local_best.0 {
                    local_best = (v, cand);
                }
            }
        }
        u = local_best.1;
        best = best.min(local_best.0);
        width /= 4.0;
    }
    Ok(best)
}

fn unit(w: [f64; 3]) -> [f64; 3] {
    let n = (w[0] * w[0] + w[1] * w[1] + w[2] * w[2]).sqrt();
    [w[0] / n, w[1] / n, w[2] / n]
}

fn tangent_frame(u: [f64; 3]) -> ([f64; 3], [f64; 3]) {
    let helper = if u[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    let dot = helper[0] * u[0] + helper[1] * u[1] + helper[2] * u[2];
    let e1 = unit([helper[0] - dot * u[0], helper[1] - dot * u[1], helper[2] - dot * u[2]]);
    let e2 = [
        u[1] * e1[2] - u[2] * e1[1],
        u[2] * e1[0] - u[0] * e1[2],
        u[0] * e1[1] - u[1] * e1[0],
    ];
    (e1, e2)
}

/// Pauli x, y, z.
pub fn pauli_matrices() -> [HermitianMatrix; 3] {
    let z = C64::new(0.0, 0.0);
    let o = C64::new(1.0, 0.0);
    let i = C64::new(0.0, 1.0);
    let mk = |a: [C64; 4]| HermitianMatrix::new(CMatrix::from_row_slice(2, 2, &a)).expect("Pauli matrices are Hermitian");
    [mk([z, o, o, z]), mk([z, -i, i, z]), mk([o, z, z, -o])]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairDiscrimination {
    /// Smallest `|H vec(rho1 - rho2)| / |rho1 - rho2|` over evaluated pairs.
    pub min_separation: f64,
    pub failures: usize,
    /// Pairs skipped because the two states coincided.
    pub skipped: usize,
    pub evaluated: usize,
}

/// Normalized separation of two states under `H`, `None` when they coincide.
pub fn pair_separation(h: &SchemeMatrix, rho1: &DensityMatrix, rho2: &DensityMatrix) -> Result<Option<f64>> {
    let diff = rho1.as_hermitian().sub(rho2.as_hermitian());
    let norm = diff.norm();
    if norm < 1e-14 {
        return Ok(None);
    }
    Ok(Some(h.apply(&diff)?.norm() / norm))
}

/// Samples `count` pairs of random rank-`r` states and records how well `H` separates them.
pub fn pair_discrimination(h: &SchemeMatrix, r: usize, count: usize, seed: u64) -> Result<PairDiscrimination> {
    let n = h.dim();
    let mut rng = SeededRng::new(seed).derive(0x7061_6972);
    let mut out = PairDiscrimination {
        min_separation: f64::INFINITY,
        failures: 0,
        skipped: 0,
        evaluated: 0,
    };
    for _ in 0..count {
        let rho1 = random_state(n, r, &mut rng)?;
        let rho2 = random_state(n, r, &mut rng)?;
        out.record(pair_separation(h, &rho1, &rho2)?);
    }
    Ok(out)
}

impl PairDiscrimination {
    pub fn record(&mut self, separation: Option<f64>) {
        match separation {
            None => self.skipped += 1,
            Some(s) => {
                self.evaluated += 1;
                self.min_separation = self.min_separation.min(s);
                if s < PAIR_FAILURE_THRESHOLD {
                    self.failures += 1;
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VandermondeDet {
    /// `prod(weights) * prod_{o<p} (lambda_p - lambda_o)`.
    pub product_formula: C64,
    /// Elimination determinant of `M[m][c] = weights[m] * lambda_m^c`.
    pub direct: C64,
    /// `prod(weights) / prod_{m>=1} lambda_m` times the determinant of the
    /// matrix whose rows `m >= 1` carry powers `1..=2k+1`; agrees with
    /// `direct` by row scaling.
    pub shifted: C64,
}

/// Determinant of the weighted power matrix of `2k+1` eigenvalues (leading one equal to 1).
pub fn vandermonde_det(lambdas: &[C64], weights: &[C64]) -> Result<VandermondeDet> {
    let len = lambdas.len();
    if len == 0 || len != weights.len() {
        return Err(Error::InvalidArgument(format!(
            "need equal non-empty lengths, got {} eigenvalues and {} weights",
            len,
            weights.len()
        )));
    }
    if (lambdas[0] - ONE).norm() > 1e-12 {
        return Err(Error::InvalidArgument("leading eigenvalue must be 1".into()));
    }
    if let Some(pos) = lambdas.iter().skip(1).position(|l| *l == C64::new(0.0, 0.0)) {
        return Err(Error::ZeroEigenvalue(pos + 1));
    }
    let weight_prod: C64 = weights.iter().product();
    let mut vander = ONE;
    for p in 0..len {
        for o in 0..p {
            vander *= lambdas[p] - lambdas[o];
        }
    }
    let m = CMatrix::from_fn(len, len, |row, col| weights[row] * lambdas[row].powu(col as u32));
    let shifted_matrix = CMatrix::from_fn(len, len, |row, col| {
        if row == 0 {
            ONE
        } else {
            lambdas[row].powu(col as u32 + 1)
        }
    });
    let lambda_prod: C64 = lambdas.iter().skip(1).product();
    Ok(VandermondeDet {
        product_formula: weight_prod * vander,
        direct: elimination_det(&m),
        shifted: weight_prod / lambda_prod * elimination_det(&shifted_matrix),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RationalVandermonde {
    pub matrix: Vec<Vec<C64>>,
    pub invertible: bool,
    pub min_singular: f64,
}

/// Threshold on the smallest singular value for invertibility.
pub const RATIONAL_VANDERMONDE_TOL: f64 = 1e-10;

/// The `(l+1) x (l+1)` matrix with a row and column of ones and entries
/// `lambda_i^{t_j}`, powers taken through the principal `N`-th root of
/// `lambda_i` for the common denominator `N` of the grid.
pub fn rational_vandermonde(times: &RationalTimeGrid, lambdas: &[C64]) -> Result<RationalVandermonde> {
    let l = times.len();
    if lambdas.len() != l {
        return Err(Error::InvalidArgument(format!("{} eigenvalues for {} times", lambdas.len(), l)));
    }
    for (k, lam) in lambdas.iter().enumerate() {
        if lam.norm() == 0.0 || *lam == ONE {
            return Err(Error::InvalidArgument(format!("eigenvalue {k} is {lam}; must avoid 0 and 1")));
        }
    }
    let big_n = times.common_denominator();
    let numerators = times.numerators();
    let roots: Vec<C64> = lambdas.iter().map(|lam| principal_root(*lam, big_n)).collect();
    let m = CMatrix::from_fn(l + 1, l + 1, |row, col| {
        if row == 0 || col == 0 {
            ONE
        } else {
            roots[row - 1].powu(numerators[col - 1] as u32)
        }
    });
    let sv = complex_singular_values(&m);
    let min_singular = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(RationalVandermonde {
        matrix: (0..=l).map(|i| (0..=l).map(|j| m[(i, j)]).collect()).collect(),
        invertible: min_singular > RATIONAL_VANDERMONDE_TOL,
        min_singular,
    })
}

/// `|z|^{1/N} exp(i arg(z) / N)` with `arg` in `(-pi, pi]`.
pub fn principal_root(z: C64, big_n: u64) -> C64 {
    C64::from_polar(z.norm().powf(1.0 / big_n as f64), z.arg() / big_n as f64)
}

fn complex_singular_values(m: &CMatrix) -> Vec<f64> {
    m.clone().svd(false, false).singular_values.iter().cloned().collect()
}

/// Random perturbation of `H` of operator norm exactly `radius` whose rows
/// sum to zero within each block (so block-wise unitality is kept).
pub fn random_perturbation(h: &SchemeMatrix, radius: f64, rng: &mut SeededRng) -> Result<SchemeMatrix> {
    let (rows, cols) = h.matrix().shape();
    let m = h.outcomes();
    let mut e = RMatrix::from_fn(rows, cols, |_, _| rng.normal());
    for block in 0..h.blocks() {
        for c in 0..cols {
            let mean = (0..m).map(|i| e[(block * m + i, c)]).sum::<f64>() / m as f64;
            for i in 0..m {
                e[(block * m + i, c)] -= mean;
            }
        }
    }
    let norm = crate::linalg::spectral_norm(&e);
    if norm == 0.0 {
        return Err(Error::Numerical("zero perturbation direction".into()));
    }
    SchemeMatrix::from_parts(h.matrix() + e.scale(radius / norm), h.blocks(), m, h.dim())
}
