//! Forward simulation of outcome statistics and state recovery.
//!
//! Informationally complete schemes are inverted by a trace-constrained least
//! squares solve followed by a metric projection onto states. Bounded-rank
//! schemes use projected gradient with rank truncation, restarted from several
//! seeded points; each restart is then polished by Levenberg-Marquardt on a
//! rank-`r` factor, since plain projected gradient converges only linearly.

use nalgebra::DVector;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::herm::{herm_to_vec, numerical_rank, vec_to_herm, DensityMatrix, HermitianMatrix, DEFAULT_REL_TOL};
use crate::linalg::project_simplex;
use crate::linalg::{CMatrix, RMatrix, C64};
use crate::sampling::{random_state, SeededRng};
use crate::schemes::{scheme_matrix, MeasurementScheme, SchemeMatrix};

/// Probabilities below this are treated as an invalid scheme or state.
pub const NEGATIVE_PROBABILITY_TOL: f64 = 1e-9;
/// Residual below which bounded-rank recovery counts as a success.
pub const SUCCESS_RESIDUAL: f64 = 1e-8;
/// Levenberg-Marquardt iterations spent polishing each restart.
const REFINE_ITERS: usize = 100;

/// Per-block outcome probabilities or relative frequencies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutcomeData {
    pub blocks: Vec<Vec<f64>>,
    /// Shots per block; absent for exact probabilities.
    #[serde(default)]
    pub shots: Option<u64>,
}

impl OutcomeData {
    pub fn new(blocks: Vec<Vec<f64>>, shots: Option<u64>) -> Result<Self> {
        let data = Self { blocks, shots };
        data.validate()?;
        Ok(data)
    }

    pub fn validate(&self) -> Result<()> {
        let width = self.blocks.first().map_or(0, Vec::len);
        for block in &self.blocks {
            if block.len() != width || width == 0 {
                return Err(Error::DimensionMismatch {
                    expected: width,
                    got: block.len(),
                });
            }
            if block.iter().any(|p| !p.is_finite()) {
                return Err(Error::NonFinite("outcome data"));
            }
            if let Some(p) = block.iter().cloned().find(|p| *p < -1e-12) {
                return Err(Error::NegativeProbability(p));
            }
            let sum: f64 = block.iter().sum();
            if (sum - 1.0).abs() > 1e-8 {
                return Err(Error::InvalidArgument(format!("block sums to {sum}")));
            }
        }
        if self.shots == Some(0) {
            return Err(Error::InvalidArgument("shots must be at least 1".into()));
        }
        Ok(())
    }

    /// Blocks stacked into one vector, block-major.
    pub fn stacked(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.blocks.iter().map(Vec::len).sum(),
            self.blocks.iter().flatten().cloned(),
        )
    }

    fn check_against(&self, h: &SchemeMatrix) -> Result<DVector<f64>> {
        if self.blocks.len() != h.blocks() {
            return Err(Error::DimensionMismatch {
                expected: h.blocks(),
                got: self.blocks.len(),
            });
        }
        if let Some(b) = self.blocks.iter().find(|b| b.len() != h.outcomes()) {
            return Err(Error::DimensionMismatch {
                expected: h.outcomes(),
                got: b.len(),
            });
        }
        Ok(self.stacked())
    }
}

/// Outcome statistics of `rho` under `scheme`; multinomial frequencies when `shots` is given.
pub fn forward(scheme: &MeasurementScheme, rho: &DensityMatrix, shots: Option<u64>, seed: Option<u64>) -> Result<OutcomeData> {
    forward_matrix(&scheme_matrix(scheme), rho, shots, seed)
}

/// [`forward`] on an already assembled scheme matrix.
pub fn forward_matrix(h: &SchemeMatrix, rho: &DensityMatrix, shots: Option<u64>, seed: Option<u64>) -> Result<OutcomeData> {
    let p = h.apply(rho.as_hermitian())?;
    if let Some(min) = p.iter().cloned().reduce(f64::min) {
        if min < -NEGATIVE_PROBABILITY_TOL {
            return Err(Error::NegativeProbability(min));
        }
    }
    let m = h.outcomes();
    let exact: Vec<Vec<f64>> = (0..h.blocks())
        .map(|b| (0..m).map(|i| p[b * m + i].max(0.0)).collect())
        .collect();
    let blocks = match shots {
        None => exact,
        Some(0) => return Err(Error::InvalidArgument("shots must be at least 1".into())),
        Some(s) => {
            let mut rng = SeededRng::new(seed.unwrap_or(0));
            exact
                .iter()
                .map(|probs| multinomial(s, probs, &mut rng).map(|c| c.iter().map(|&k| k as f64 / s as f64).collect()))
                .collect::<Result<_>>()?
        }
    };
    Ok(OutcomeData { blocks, shots })
}

/// One multinomial draw by successive conditional binomials.
fn multinomial(shots: u64, probs: &[f64], rng: &mut SeededRng) -> Result<Vec<u64>> {
    let mut counts = vec![0; probs.len()];
    let mut remaining = shots;
    let mut mass: f64 = probs.iter().sum();
    for (i, &p) in probs.iter().enumerate() {
        if remaining == 0 {
            break;
        }
        if i + 1 == probs.len() {
            counts[i] = remaining;
            break;
        }
        let q = if mass > 0.0 { (p / mass).clamp(0.0, 1.0) } else { 0.0 };
        let k = Binomial::new(remaining, q)
            .map_err(|e| Error::Numerical(format!("binomial sampler: {e}")))?
            .sample(rng.inner());
        counts[i] = k;
        remaining -= k;
        mass -= p;
    }
    Ok(counts)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Reconstruction {
    pub estimate: DensityMatrix,
    /// `|H vec(estimate) - y|_2`.
    pub residual: f64,
    pub iterations: usize,
    pub success: bool,
}

/// `c/n + Z z` parametrization of unit-trace Hermitian coordinates.
fn trace_nullspace(n: usize) -> (DVector<f64>, RMatrix) {
    let d = n * n;
    let mut c = DVector::zeros(d);
    for i in 0..n {
        c[i] = 1.0 / n as f64;
    }
    let mut z = RMatrix::zeros(d, d - 1);
    // diagonal directions e_0 - e_i, off-diagonal coordinates unconstrained
    for i in 1..n {
        z[(0, i - 1)] = 1.0;
        z[(i, i - 1)] = -1.0;
    }
    for k in n..d {
        z[(k, k - 1)] = 1.0;
    }
    (c, z)
}

/// Minimum-norm trace-one least squares solution, unprojected.
fn constrained_lsq(h: &SchemeMatrix, y: &DVector<f64>) -> Result<HermitianMatrix> {
    let (c, z) = trace_nullspace(h.dim());
    let a = h.matrix() * &z;
    let rhs = y - h.matrix() * &c;
    let svd = a.svd(true, true);
    let cutoff = svd.singular_values.max() * 1e-12;
    let sol = svd.solve(&rhs, cutoff).map_err(|e| Error::Numerical(e.to_string()))?;
    vec_to_herm(&(c + z * sol))
}

/// Projects a Hermitian matrix onto states of rank at most `r` (Frobenius metric).
pub fn project_to_states(x: &HermitianMatrix, r: usize) -> Result<DensityMatrix> {
    let n = x.dim();
    let (values, vectors) = x.eigh();
    // eigenvalues ascending: keep the r largest
    let keep = r.min(n);
    let top: Vec<f64> = values[n - keep..].to_vec();
    let projected = project_simplex(&top);
    let mut full = vec![0.0; n];
    full[n - keep..].copy_from_slice(&projected);
    DensityMatrix::new(HermitianMatrix::from_eigen(&full, &vectors), None)
}

fn residual_of(h: &SchemeMatrix, rho: &HermitianMatrix, y: &DVector<f64>) -> f64 {
    (h.matrix() * herm_to_vec(rho) - y).norm()
}

/// Trace-constrained least squares with projection onto states.
pub fn lsq_reconstruct(h: &SchemeMatrix, y: &OutcomeData) -> Result<Reconstruction> {
    let yv = y.check_against(h)?;
    let target = h.dim() * h.dim();
    let info = numerical_rank(h.matrix(), DEFAULT_REL_TOL)?;
    if info.rank < target {
        return Err(Error::IllPosed { rank: info.rank, target });
    }
    let raw = constrained_lsq(h, &yv)?;
    let estimate = project_to_states(&raw, h.dim())?;
    let residual = residual_of(h, estimate.as_hermitian(), &yv);
    Ok(Reconstruction {
        estimate,
        residual,
        iterations: 1,
        success: true,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LowRankOptions {
    pub restarts: usize,
    pub iters: usize,
    /// Initial step as a multiple of `1/|H|_2^2`.
    pub step: f64,
    pub seed: u64,
}

impl Default for LowRankOptions {
    fn default() -> Self {
        Self {
            restarts: 10,
            iters: 2_000,
            step: 1.0,
            seed: 0,
        }
    }
}

struct Run {
    estimate: DensityMatrix,
    residual: f64,
    iterations: usize,
}

fn projected_gradient(h: &SchemeMatrix, y: &DVector<f64>, r: usize, start: DensityMatrix, opts: &LowRankOptions, lipschitz: f64) -> Result<Run> {
    let hm = h.matrix();
    let ht = hm.transpose();
    let mut x = start;
    let mut xv = herm_to_vec(x.as_hermitian());
    let mut res = hm * &xv - y;
    let mut f = 0.5 * res.norm_squared();
    let mut step = opts.step / lipschitz;
    let mut iterations = 0;
    while iterations < opts.iters {
        if res.norm() < SUCCESS_RESIDUAL * 1e-4 {
            break;
        }
        iterations += 1;
        let g = &ht * &res;
        let mut accepted = None;
        for _ in 0..50 {
            let trial = vec_to_herm(&(&xv - &g * step))?;
            let cand = project_to_states(&trial, r)?;
            let cv = herm_to_vec(cand.as_hermitian());
            let cres = hm * &cv - y;
            let cf = 0.5 * cres.norm_squared();
            let dx = &cv - &xv;
            // majorization test; guarantees monotone descent
            if cf <= f + g.dot(&dx) + dx.norm_squared() / (2.0 * step) + 1e-15 {
                accepted = Some((cand, cv, cres, cf, dx.norm()));
                break;
            }
            step *= 0.5;
        }
        let Some((cand, cv, cres, cf, moved)) = accepted else {
            break;
        };
        debug_assert!(cf <= f + 1e-12, "objective increased from {f} to {cf}");
        x = cand;
        xv = cv;
        res = cres;
        let stalled = moved < 1e-15;
        f = cf;
        step *= 1.5;
        if stalled {
            break;
        }
    }
    Ok(Run {
        residual: res.norm(),
        estimate: x,
        iterations,
    })
}

/// Levenberg-Marquardt on a factor `G` of `rho = G G^dag / tr(G G^dag)`,
/// started from `start`. Only residual-decreasing steps are taken.
fn factor_refine(h: &SchemeMatrix, y: &DVector<f64>, r: usize, start: &DensityMatrix, iters: usize) -> Result<Option<Run>> {
    let n = h.dim();
    let (values, vectors) = start.as_hermitian().eigh();
    let mut g = CMatrix::from_fn(n, r, |i, k| vectors[(i, n - 1 - k)] * values[n - 1 - k].max(0.0).sqrt());
    let hm = h.matrix();
    let state_of = |g: &CMatrix| -> Option<HermitianMatrix> {
        let t = g.norm_squared();
        (t > 1e-300).then(|| HermitianMatrix::gram(g).scale(1.0 / t))
    };
    let Some(mut rho) = state_of(&g) else {
        return Ok(None);
    };
    let mut res = hm * herm_to_vec(&rho) - y;
    let mut mu = 1e-3;
    let params = 2 * n * r;
    let mut done = 0;
    for _ in 0..iters {
        if res.norm() < SUCCESS_RESIDUAL * 1e-4 {
            break;
        }
        done += 1;
        let t = g.norm_squared();
        let mut jac = RMatrix::zeros(hm.nrows(), params);
        for p in 0..params {
            let mut e = CMatrix::zeros(n, r);
            let idx = p % (n * r);
            e[(idx % n, idx / n)] = if p < n * r { C64::new(1.0, 0.0) } else { C64::new(0.0, 1.0) };
            let cross = &e * g.adjoint();
            let dt = 2.0 * cross.trace().re;
            let d = (&cross + cross.adjoint()).unscale(t) - rho.matrix() * C64::new(dt / t, 0.0);
            jac.set_column(p, &(hm * herm_to_vec(&HermitianMatrix::with_tolerance(d, 1e-6)?)));
        }
        let jtj = jac.transpose() * &jac;
        let jtr = jac.transpose() * &res;
        let mut improved = false;
        for _ in 0..30 {
            let mut a = jtj.clone();
            for i in 0..params {
                a[(i, i)] += mu * (1.0 + jtj[(i, i)]);
            }
            let Some(chol) = a.cholesky() else {
                mu *= 10.0;
                continue;
            };
            let delta = chol.solve(&(-&jtr));
            let trial = CMatrix::from_fn(n, r, |i, k| {
                let idx = i + k * n;
                g[(i, k)] + C64::new(delta[idx], delta[idx + n * r])
            });
            if let Some(trho) = state_of(&trial) {
                let tres = hm * herm_to_vec(&trho) - y;
                if tres.norm() < res.norm() {
                    g = trial;
                    rho = trho;
                    res = tres;
                    mu = (mu / 3.0).max(1e-15);
                    improved = true;
                    break;
                }
            }
            mu *= 4.0;
        }
        if !improved {
            break;
        }
    }
    Ok(Some(Run {
        estimate: DensityMatrix::new(rho, None)?,
        residual: res.norm(),
        iterations: done,
    }))
}

/// Multi-start projected gradient over states of rank at most `r`.
pub fn low_rank_reconstruct(h: &SchemeMatrix, y: &OutcomeData, r: usize, opts: &LowRankOptions) -> Result<Reconstruction> {
    let n = h.dim();
    if r < 1 || r > n {
        return Err(Error::InvalidArgument(format!("rank {r} outside 1..={n}")));
    }
    if opts.restarts == 0 {
        return Err(Error::InvalidArgument("restarts must be at least 1".into()));
    }
    let yv = y.check_against(h)?;
    let lipschitz = crate::linalg::spectral_norm(h.matrix()).powi(2).max(1e-300);
    let root = SeededRng::new(opts.seed);
    let runs: Vec<Result<Run>> = (0..opts.restarts)
        .into_par_iter()
        .map(|k| {
            // restart 0 starts from the projected least squares solution
            let start = if k == 0 {
                project_to_states(&constrained_lsq(h, &yv)?, r)?
            } else {
                random_state(n, r, &mut root.derive(k as u64))?
            };
            let mut run = projected_gradient(h, &yv, r, start, opts, lipschitz)?;
            if run.residual >= SUCCESS_RESIDUAL * 1e-4 {
                if let Some(polished) = factor_refine(h, &yv, r, &run.estimate, REFINE_ITERS)? {
                    if polished.residual < run.residual {
                        run = Run {
                            iterations: run.iterations + polished.iterations,
                            ..polished
                        };
                    }
                }
            }
            Ok(run)
        })
        .collect();
    let mut best: Option<Run> = None;
    for run in runs {
        let run = run?;
        if best.as_ref().is_none_or(|b| run.residual < b.residual) {
            best = Some(run);
        }
    }
    let best = best.expect("at least one restart");
    Ok(Reconstruction {
        success: best.residual < SUCCESS_RESIDUAL,
        estimate: DensityMatrix::new(best.estimate.into_hermitian(), Some(r))?,
        residual: best.residual,
        iterations: best.iterations,
    })
}
