//! Seeded random ensembles: Haar unitaries, Ginibre POVMs, random channels,
//! bounded-rank states and unital generators.
//!
//! All samplers are pure functions of `(parameters, seed, stream)`. The
//! generator is ChaCha20, whose 64-bit stream id gives independent substreams
//! without shared state.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::channels::{cptp_from_kraus, Channel, Generator};
use crate::error::{Error, Result};
use crate::herm::{DensityMatrix, HermitianMatrix};
use crate::linalg::{CMatrix, C64};
use crate::schemes::{make_povm, Povm};

/// Seed plus stream id, the replay key embedded in every record.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StreamKey {
    pub seed: u64,
    pub stream: u64,
}

/// Counter-based generator addressed by `(seed, stream)`.
#[derive(Clone, Debug)]
pub struct SeededRng {
    key: StreamKey,
    rng: ChaCha20Rng,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self {
            key: StreamKey { seed, stream },
            rng,
        }
    }

    pub fn from_key(key: StreamKey) -> Self {
        Self::with_stream(key.seed, key.stream)
    }

    pub fn key(&self) -> StreamKey {
        self.key
    }

    /// Independent substream labelled by `label`; depends only on this
    /// generator's key, not on how many draws it has made.
    pub fn derive(&self, label: u64) -> Self {
        let stream = splitmix64(self.key.stream ^ splitmix64(label.wrapping_add(0x5851_f42d)));
        Self::with_stream(self.key.seed, stream)
    }

    pub fn normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// Standard complex Gaussian, `E|z|^2 = 1`.
    pub fn complex_normal(&mut self) -> C64 {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        C64::new(self.normal() * s, self.normal() * s)
    }

    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn below(&mut self, bound: u64) -> u64 {
        self.rng.random_range(0..bound)
    }

    pub fn complex_gaussian_matrix(&mut self, rows: usize, cols: usize) -> CMatrix {
        // column-major fill keeps the draw order independent of nalgebra internals
        let mut m = CMatrix::zeros(rows, cols);
        for j in 0..cols {
            for i in 0..rows {
                m[(i, j)] = self.complex_normal();
            }
        }
        m
    }

    pub(crate) fn inner(&mut self) -> &mut ChaCha20Rng {
        &mut self.rng
    }
}

/// QR of a Ginibre matrix with the phases of `R`'s diagonal absorbed into `Q`.
pub fn haar_unitary(n: usize, rng: &mut SeededRng) -> CMatrix {
    let g = rng.complex_gaussian_matrix(n, n);
    phase_fixed_q(g)
}

fn phase_fixed_q(g: CMatrix) -> CMatrix {
    let cols = g.ncols();
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..cols {
        let d = r[(j, j)];
        let phase = if d.norm() > 0.0 { d / d.norm() } else { C64::new(1.0, 0.0) };
        for i in 0..q.nrows() {
            q[(i, j)] *= phase;
        }
    }
    q
}

/// Random Hermitian matrix `(G + G^dagger)/2` with complex Gaussian `G`.
pub fn random_hermitian(n: usize, rng: &mut SeededRng) -> HermitianMatrix {
    let g = rng.complex_gaussian_matrix(n, n);
    herm_part(&g)
}

fn herm_part(g: &CMatrix) -> HermitianMatrix {
    HermitianMatrix::new((g + g.adjoint()).unscale(2.0)).expect("symmetrized matrix is Hermitian")
}

/// POVM with effects `S^{-1/2} G_i G_i^dagger S^{-1/2}`, `S = sum_i G_i G_i^dagger`.
pub fn ginibre_povm(n: usize, m: usize, rng: &mut SeededRng) -> Result<Povm> {
    if m == 0 || n == 0 {
        return Err(Error::InvalidArgument("POVM needs n >= 1 and m >= 1".into()));
    }
    for _attempt in 0..2 {
        let grams: Vec<HermitianMatrix> = (0..m)
            .map(|_| HermitianMatrix::gram(&rng.complex_gaussian_matrix(n, n)))
            .collect();
        let total = grams.iter().fold(HermitianMatrix::zeros(n), |acc, g| acc.add(g));
        let (vals, vecs) = total.eigh();
        if vals[0] <= 1e-12 * vals[n - 1] {
            continue;
        }
        let inv_sqrt = HermitianMatrix::from_eigen(&vals.iter().map(|v| v.powf(-0.5)).collect::<Vec<_>>(), &vecs);
        let s = inv_sqrt.matrix();
        let effects = grams
            .iter()
            .map(|g| HermitianMatrix::from_raw(s * g.matrix() * s))
            .collect();
        return make_povm(effects);
    }
    Err(Error::Numerical("singular Ginibre frame operator on two draws".into()))
}

/// Kraus operators sliced from a random `nk x n` isometry.
pub fn random_kraus(n: usize, kraus_count: usize, rng: &mut SeededRng) -> Result<Vec<CMatrix>> {
    if kraus_count < 1 {
        return Err(Error::InvalidArgument("kraus_count must be at least 1".into()));
    }
    let g = rng.complex_gaussian_matrix(n * kraus_count, n);
    let iso = phase_fixed_q(g);
    Ok((0..kraus_count)
        .map(|k| iso.view((k * n, 0), (n, n)).clone_owned())
        .collect())
}

pub fn random_cptp(n: usize, kraus_count: usize, rng: &mut SeededRng) -> Result<Channel> {
    cptp_from_kraus(&random_kraus(n, kraus_count, rng)?)
}

/// `G G^dagger / tr(G G^dagger)` with complex Gaussian `G` of shape `n x r`.
pub fn random_state(n: usize, r: usize, rng: &mut SeededRng) -> Result<DensityMatrix> {
    if r < 1 || r > n {
        return Err(Error::InvalidArgument(format!("rank {r} outside 1..={n}")));
    }
    let g = rng.complex_gaussian_matrix(n, r);
    let gram = HermitianMatrix::gram(&g);
    let tr = gram.trace();
    DensityMatrix::new(gram.scale(1.0 / tr), Some(r))
}

/// Haar-random pure state vector.
pub fn random_pure_vector(n: usize, rng: &mut SeededRng) -> DVector<C64> {
    let v = DVector::from_fn(n, |_, _| rng.complex_normal());
    let norm = v.norm();
    v.unscale(norm)
}

/// Random Hamiltonian plus `jump_count` random Hermitian jumps.
pub fn random_unital_generator(n: usize, jump_count: usize, rng: &mut SeededRng) -> Result<Generator> {
    let h = random_hermitian(n, rng);
    let jumps = (0..jump_count).map(|_| random_hermitian(n, rng).scale(JUMP_SCALE)).collect();
    Generator::new(h, jumps)
}

/// Scale applied to random jump operators.
const JUMP_SCALE: f64 = 0.5;
