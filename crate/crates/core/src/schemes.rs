//! POVMs and dynamical measurement schemes.
//!
//! A discrete scheme measures one POVM after `0, 1, ..., l-1` Heisenberg steps
//! of a channel (`l` blocks). A timed scheme measures it at `t = 0` and at each
//! time of a rational grid under a semigroup (`l + 1` blocks). Either way the
//! scheme induces a real linear map from Hermitian coordinates to stacked
//! outcome probabilities, represented by [`SchemeMatrix`].

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::channels::{semigroup_channel, Channel, ChannelJson, Direction, Generator};
use crate::error::{Error, Result};
use crate::herm::{herm_to_vec, HermitianMatrix};
use crate::linalg::{spectral_norm, RMatrix};

pub const POVM_PSD_TOL: f64 = 1e-9;
pub const POVM_SUM_TOL: f64 = 1e-8;
const EVOLVED_PSD_TOL: f64 = 1e-8;
const BLOCK_MATCH_TOL: f64 = 1e-8;

/// Positive operator valued measure: PSD effects summing to the identity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PovmJson", into = "PovmJson")]
pub struct Povm {
    effects: Vec<HermitianMatrix>,
}

#[derive(Serialize, Deserialize)]
struct PovmJson {
    effects: Vec<HermitianMatrix>,
}

impl TryFrom<PovmJson> for Povm {
    type Error = Error;
    fn try_from(j: PovmJson) -> Result<Self> {
        make_povm(j.effects)
    }
}

impl From<Povm> for PovmJson {
    fn from(p: Povm) -> Self {
        PovmJson { effects: p.effects }
    }
}

/// Validates a list of effects as a POVM.
pub fn make_povm(effects: Vec<HermitianMatrix>) -> Result<Povm> {
    validate_effects(effects, POVM_PSD_TOL)
}

fn validate_effects(effects: Vec<HermitianMatrix>, psd_tol: f64) -> Result<Povm> {
    let n = effects
        .first()
        .ok_or_else(|| Error::InvalidArgument("POVM needs at least one effect".into()))?
        .dim();
    let mut total = HermitianMatrix::zeros(n);
    for (index, e) in effects.iter().enumerate() {
        if e.dim() != n {
            return Err(Error::DimensionMismatch { expected: n, got: e.dim() });
        }
        let min = e.eigenvalues()[0];
        if min < -psd_tol {
            return Err(Error::NotPsd {
                index,
                min_eigenvalue: min,
            });
        }
        total = total.add(e);
    }
    let deviation = total.sub(&HermitianMatrix::identity(n));
    let deviation_norm = deviation.norm();
    if deviation_norm > POVM_SUM_TOL {
        return Err(Error::IncompletePovm {
            deviation_norm,
            deviation: Box::new(deviation),
        });
    }
    Ok(Povm { effects })
}

impl Povm {
    /// `(I/m, ..., I/m)`: carries no information about the state.
    pub fn trivial(n: usize, m: usize) -> Self {
        Self {
            effects: vec![HermitianMatrix::identity(n).scale(1.0 / m as f64); m],
        }
    }

    pub fn dim(&self) -> usize {
        self.effects[0].dim()
    }

    pub fn outcomes(&self) -> usize {
        self.effects.len()
    }

    pub fn effects(&self) -> &[HermitianMatrix] {
        &self.effects
    }

    /// Coordinate rows of the effects (the matrix of `h_P`).
    pub fn matrix(&self) -> RMatrix {
        let n2 = self.dim() * self.dim();
        let rows: Vec<DVector<f64>> = self.effects.iter().map(herm_to_vec).collect();
        RMatrix::from_fn(rows.len(), n2, |i, j| rows[i][j])
    }
}

/// A rational number `num/den`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Rational {
    pub num: u64,
    pub den: u64,
}

impl Rational {
    pub fn new(num: u64, den: u64) -> Result<Self> {
        if den == 0 {
            return Err(Error::InvalidTimeGrid("zero denominator".into()));
        }
        let g = gcd(num, den);
        Ok(Self {
            num: num / g,
            den: den / g,
        })
    }

    pub fn value(&self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

impl fmt::Display for Rational {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

impl FromStr for Rational {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidTimeGrid(format!("cannot parse rational '{s}'"));
        let (a, b) = s.trim().split_once('/').ok_or_else(bad)?;
        let num = a.trim().parse().map_err(|_| bad())?;
        let den = b.trim().parse().map_err(|_| bad())?;
        Rational::new(num, den)
    }
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a.max(1)
    } else {
        gcd(b, a % b)
    }
}

/// Strictly increasing rational times in the open interval `(0, 1)`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct RationalTimeGrid {
    times: Vec<Rational>,
}

impl RationalTimeGrid {
    pub fn new(times: Vec<Rational>) -> Result<Self> {
        for (k, t) in times.iter().enumerate() {
            if t.num == 0 || t.num >= t.den {
                return Err(Error::InvalidTimeGrid(format!("time {t} not in (0, 1)")));
            }
            if k > 0 && times[k - 1].value() >= t.value() {
                return Err(Error::InvalidTimeGrid(format!(
                    "times not strictly increasing at {} >= {t}",
                    times[k - 1]
                )));
            }
        }
        Ok(Self { times })
    }

    /// `k/(l+1)` for `k = 1..=l`.
    pub fn equispaced(l: usize) -> Self {
        let den = l as u64 + 1;
        Self {
            times: (1..=l as u64).map(|k| Rational::new(k, den).expect("nonzero denominator")).collect(),
        }
    }

    pub fn parse_list(s: &str) -> Result<Self> {
        if s.trim().is_empty() {
            return Self::new(Vec::new());
        }
        Self::new(s.split(',').map(Rational::from_str).collect::<Result<_>>()?)
    }

    pub fn times(&self) -> &[Rational] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Least common multiple of the denominators.
    pub fn common_denominator(&self) -> u64 {
        self.times.iter().fold(1, |acc, t| acc / gcd(acc, t.den) * t.den)
    }

    /// Numerators over the common denominator.
    pub fn numerators(&self) -> Vec<u64> {
        let big_n = self.common_denominator();
        self.times.iter().map(|t| t.num * (big_n / t.den)).collect()
    }
}

impl TryFrom<Vec<String>> for RationalTimeGrid {
    type Error = Error;
    fn try_from(v: Vec<String>) -> Result<Self> {
        Self::new(v.iter().map(|s| s.parse()).collect::<Result<_>>()?)
    }
}

impl From<RationalTimeGrid> for Vec<String> {
    fn from(g: RationalTimeGrid) -> Self {
        g.times.iter().map(|t| t.to_string()).collect()
    }
}

/// What a scheme was built from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum Provenance {
    Discrete { channel: ChannelJson, steps: usize },
    Timed { generator: Generator, times: RationalTimeGrid },
}

/// Ordered blocks of time-evolved copies of one POVM.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SchemeBundle", into = "SchemeBundle")]
pub struct MeasurementScheme {
    blocks: Vec<Povm>,
    provenance: Provenance,
}

/// On-disk form of a scheme.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SchemeBundle {
    pub provenance: Provenance,
    pub blocks: Vec<Vec<HermitianMatrix>>,
}

impl TryFrom<SchemeBundle> for MeasurementScheme {
    type Error = Error;
    fn try_from(b: SchemeBundle) -> Result<Self> {
        let source = b
            .blocks
            .first()
            .cloned()
            .ok_or_else(|| Error::InvalidArgument("scheme bundle has no blocks".into()))?;
        let rebuilt = rebuild(make_povm(source)?, &b.provenance)?;
        if rebuilt.blocks.len() != b.blocks.len() {
            return Err(Error::InvalidArgument(format!(
                "bundle has {} blocks, provenance implies {}",
                b.blocks.len(),
                rebuilt.blocks.len()
            )));
        }
        for (stored, fresh) in b.blocks.iter().zip(&rebuilt.blocks) {
            if stored.len() != fresh.outcomes() {
                return Err(Error::InvalidArgument("block sizes differ".into()));
            }
            for (a, e) in stored.iter().zip(fresh.effects()) {
                if a.dim() != e.dim() || a.sub(e).norm() > BLOCK_MATCH_TOL {
                    return Err(Error::InvalidArgument(
                        "stored block does not match its provenance".into(),
                    ));
                }
            }
        }
        Ok(rebuilt)
    }
}

impl From<MeasurementScheme> for SchemeBundle {
    fn from(s: MeasurementScheme) -> Self {
        SchemeBundle {
            provenance: s.provenance,
            blocks: s.blocks.into_iter().map(|p| p.effects).collect(),
        }
    }
}

fn rebuild(source: Povm, provenance: &Provenance) -> Result<MeasurementScheme> {
    match provenance {
        Provenance::Discrete { channel, steps } => dynamical_scheme(&source, &channel.build()?, *steps),
        Provenance::Timed { generator, times } => timed_scheme(&source, generator, times),
    }
}

fn evolve_block(source: &Povm, channel: &Channel, steps: usize) -> Result<Povm> {
    let effects = source
        .effects()
        .iter()
        .map(|e| channel.apply_power(e, steps, Direction::Heisenberg))
        .collect::<Result<Vec<_>>>()?;
    validate_effects(effects, EVOLVED_PSD_TOL)
}

/// Blocks `T^0(P), ..., T^{l-1}(P)` with the Heisenberg map of `channel`.
pub fn dynamical_scheme(povm: &Povm, channel: &Channel, l: usize) -> Result<MeasurementScheme> {
    if l == 0 {
        return Err(Error::InvalidArgument("scheme needs at least one step".into()));
    }
    if povm.dim() != channel.dim() {
        return Err(Error::DimensionMismatch {
            expected: channel.dim(),
            got: povm.dim(),
        });
    }
    let mut blocks = vec![povm.clone()];
    for _ in 1..l {
        let prev = blocks.last().expect("non-empty");
        blocks.push(evolve_block(prev, channel, 1)?);
    }
    Ok(MeasurementScheme {
        blocks,
        provenance: Provenance::Discrete {
            channel: ChannelJson::from_channel(channel),
            steps: l,
        },
    })
}

/// Blocks at `t = 0, t_1, ..., t_l` under `exp(t L)`.
pub fn timed_scheme(povm: &Povm, generator: &Generator, times: &RationalTimeGrid) -> Result<MeasurementScheme> {
    if povm.dim() != generator.dim() {
        return Err(Error::DimensionMismatch {
            expected: generator.dim(),
            got: povm.dim(),
        });
    }
    let mut blocks = vec![povm.clone()];
    for t in times.times() {
        let channel = semigroup_channel(generator, t.value())?;
        blocks.push(evolve_block(povm, &channel, 1)?);
    }
    Ok(MeasurementScheme {
        blocks,
        provenance: Provenance::Timed {
            generator: generator.clone(),
            times: times.clone(),
        },
    })
}

impl MeasurementScheme {
    pub fn dim(&self) -> usize {
        self.blocks[0].dim()
    }

    pub fn outcomes(&self) -> usize {
        self.blocks[0].outcomes()
    }

    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }

    pub fn blocks(&self) -> &[Povm] {
        &self.blocks
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn matrix(&self) -> SchemeMatrix {
        scheme_matrix(self)
    }
}

/// Real matrix of `h_M`: one row per evolved effect, block-major.
#[derive(Clone, Debug, PartialEq)]
pub struct SchemeMatrix {
    h: RMatrix,
    blocks: usize,
    outcomes: usize,
    n: usize,
}

pub fn scheme_matrix(scheme: &MeasurementScheme) -> SchemeMatrix {
    let n = scheme.dim();
    let rows: Vec<DVector<f64>> = scheme
        .blocks
        .iter()
        .flat_map(|b| b.effects().iter().map(herm_to_vec))
        .collect();
    SchemeMatrix {
        h: RMatrix::from_fn(rows.len(), n * n, |i, j| rows[i][j]),
        blocks: scheme.block_count(),
        outcomes: scheme.outcomes(),
        n,
    }
}

impl SchemeMatrix {
    /// Wraps a raw matrix with block metadata.
    pub fn from_parts(h: RMatrix, blocks: usize, outcomes: usize, n: usize) -> Result<Self> {
        if h.nrows() != blocks * outcomes || h.ncols() != n * n {
            return Err(Error::DimensionMismatch {
                expected: blocks * outcomes,
                got: h.nrows(),
            });
        }
        if h.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("scheme matrix"));
        }
        Ok(Self { h, blocks, outcomes, n })
    }

    pub fn matrix(&self) -> &RMatrix {
        &self.h
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn blocks(&self) -> usize {
        self.blocks
    }

    pub fn outcomes(&self) -> usize {
        self.outcomes
    }

    /// Outcome probabilities `H vec(X)`.
    pub fn apply(&self, x: &HermitianMatrix) -> Result<DVector<f64>> {
        if x.dim() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: x.dim(),
            });
        }
        Ok(&self.h * herm_to_vec(x))
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            h: self.h.scale(c),
            ..self.clone()
        }
    }

    /// Largest singular value of the difference of the two maps.
    pub fn distance(&self, other: &Self) -> Result<f64> {
        if self.h.shape() != other.h.shape() {
            return Err(Error::DimensionMismatch {
                expected: self.h.nrows(),
                got: other.h.nrows(),
            });
        }
        Ok(spectral_norm(&(&self.h - &other.h)))
    }

    /// CSV with one row per effect and 17 significant digits per entry.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        for i in 0..self.h.nrows() {
            let line: Vec<String> = (0..self.h.ncols()).map(|j| format!("{:.16e}", self.h[(i, j)])).collect();
            writeln!(out, "{}", line.join(","))?;
        }
        Ok(())
    }
}

/// Operator-norm distance between the induced maps of two schemes.
pub fn scheme_distance(a: &MeasurementScheme, b: &MeasurementScheme) -> Result<f64> {
    scheme_matrix(a).distance(&scheme_matrix(b))
}
