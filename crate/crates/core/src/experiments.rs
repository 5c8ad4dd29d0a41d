//! Threshold calculator, Monte Carlo sweeps and their reports.
//!
//! A sweep walks a grid of cells `(n, m, r, l)`; each trial draws a channel
//! (or generator) and a Ginibre POVM, builds the scheme and runs the task's
//! completeness test. Random draws of a trial depend on `(task, n, m, r,
//! trial)` but not on `l`, so schemes for growing `l` are nested and the
//! per-trial outcome is monotone in `l`.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channels::{feasibility_unitary, unitary_channel, Channel, DEFAULT_GAP_TOL};
use crate::completeness::{informational_complete, rank_r_margin, MarginOptions, MarginVerdict, StepRule};
use crate::error::{Error, Result};
use crate::herm::DEFAULT_REL_TOL;
use crate::sampling::{ginibre_povm, haar_unitary, random_cptp, random_unital_generator, SeededRng};
use crate::schemes::{dynamical_scheme, scheme_matrix, timed_scheme, RationalTimeGrid, SchemeMatrix};

pub const CONFIG_SCHEMA: u32 = 1;
/// Empirical success rate that counts as a transition.
pub const SUCCESS_THRESHOLD: f64 = 0.99;
/// Normal quantile of the reported binomial (Wilson) intervals.
pub const WILSON_Z: f64 = 1.96;
/// Draws attempted before giving up on finding a feasible channel.
const MAX_FEASIBLE_DRAWS: usize = 1000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    InfoCompleteUnitary,
    InfoCompleteCptp,
    RankRUnitary,
    RankRCptp,
    Timed,
}

impl Task {
    pub fn is_rank(self) -> bool {
        matches!(self, Task::RankRUnitary | Task::RankRCptp)
    }

    pub fn is_unitary(self) -> bool {
        matches!(self, Task::InfoCompleteUnitary | Task::RankRUnitary)
    }

    fn code(self) -> u64 {
        self as u64 + 1
    }

    pub fn name(self) -> &'static str {
        match self {
            Task::InfoCompleteUnitary => "info-complete-unitary",
            Task::InfoCompleteCptp => "info-complete-cptp",
            Task::RankRUnitary => "rank-r-unitary",
            Task::RankRCptp => "rank-r-cptp",
            Task::Timed => "timed",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        [
            Task::InfoCompleteUnitary,
            Task::InfoCompleteCptp,
            Task::RankRUnitary,
            Task::RankRCptp,
            Task::Timed,
        ]
        .into_iter()
        .find(|t| t.name() == s)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown task {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// Relative singular-value cutoff of the rank test.
    pub rank_rel_tol: f64,
    /// Spectral gap required of feasible channels.
    pub gap_tol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            rank_rel_tol: DEFAULT_REL_TOL,
            gap_tol: DEFAULT_GAP_TOL,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarginConfig {
    pub restarts: usize,
    pub max_iters: usize,
}

impl Default for MarginConfig {
    fn default() -> Self {
        let d = MarginOptions::default();
        Self {
            restarts: d.restarts,
            max_iters: d.max_iters,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema: u32,
    pub task: Task,
    pub n: Vec<usize>,
    pub m: Vec<usize>,
    /// Step counts; for timed tasks the equispaced grid `k/(l+1)` is used
    /// unless `times` is given.
    #[serde(default)]
    pub l: Vec<usize>,
    #[serde(default)]
    pub r: Vec<usize>,
    /// Explicit time grids for timed tasks.
    #[serde(default)]
    pub times: Vec<RationalTimeGrid>,
    pub trials: usize,
    pub seed: u64,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default = "default_kraus_count")]
    pub kraus_count: usize,
    #[serde(default = "default_jumps")]
    pub jumps: usize,
    #[serde(default)]
    pub margin: MarginConfig,
}

fn default_kraus_count() -> usize {
    2
}

fn default_jumps() -> usize {
    2
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.schema != CONFIG_SCHEMA {
            return bad(format!("unsupported config schema {}", self.schema));
        }
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        for (name, grid) in [("n", &self.n), ("m", &self.m)] {
            if grid.is_empty() || grid.contains(&0) {
                return bad(format!("grid {name} must be non-empty with entries >= 1"));
            }
        }
        if self.task == Task::Timed && !self.times.is_empty() {
            if !self.l.is_empty() {
                return bad("give either l or times, not both".into());
            }
        } else if self.l.is_empty() || self.l.contains(&0) {
            return bad("grid l must be non-empty with entries >= 1".into());
        } else if !self.times.is_empty() {
            return bad("times are only meaningful for the timed task".into());
        }
        if self.task.is_rank() {
            if self.r.is_empty() || self.r.contains(&0) {
                return bad("rank tasks need a non-empty r grid with entries >= 1".into());
            }
            let n_min = *self.n.iter().min().expect("non-empty");
            if let Some(r) = self.r.iter().find(|&&r| r > n_min) {
                return bad(format!("rank {r} exceeds dimension {n_min}"));
            }
        } else if !self.r.is_empty() {
            return bad("r is only meaningful for rank tasks".into());
        }
        if self.kraus_count == 0 {
            return bad("kraus_count must be at least 1".into());
        }
        if self.margin.restarts == 0 {
            return bad("margin restarts must be at least 1".into());
        }
        Ok(())
    }

    /// Cells in deterministic sweep order.
    pub fn cells(&self) -> Vec<Cell> {
        let ranks: Vec<Option<usize>> = if self.task.is_rank() {
            self.r.iter().map(|&r| Some(r)).collect()
        } else {
            vec![None]
        };
        let steps: Vec<(usize, Option<RationalTimeGrid>)> = if self.task == Task::Timed {
            if self.times.is_empty() {
                self.l.iter().map(|&l| (l, Some(RationalTimeGrid::equispaced(l)))).collect()
            } else {
                self.times.iter().map(|t| (t.len(), Some(t.clone()))).collect()
            }
        } else {
            self.l.iter().map(|&l| (l, None)).collect()
        };
        let mut cells = Vec::new();
        for &n in &self.n {
            for &m in &self.m {
                for &r in &ranks {
                    for (l, times) in &steps {
                        cells.push(Cell {
                            n,
                            m,
                            r,
                            l: *l,
                            times: times.clone(),
                        });
                    }
                }
            }
        }
        cells.sort_by_key(Cell::sort_key);
        cells.dedup();
        cells
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Cell {
    pub n: usize,
    pub m: usize,
    pub r: Option<usize>,
    pub l: usize,
    pub times: Option<RationalTimeGrid>,
}

impl Cell {
    fn sort_key(&self) -> (usize, usize, usize, usize, Vec<(u64, u64)>) {
        let times = self
            .times
            .iter()
            .flat_map(|g| g.times().iter().map(|t| (t.num, t.den)))
            .collect();
        (self.n, self.m, self.r.unwrap_or(0), self.l, times)
    }
}

/// Smallest `l` meeting the task's counting threshold.
///
/// Informational completeness needs `l(m-1) >= n^2 - 1`; rank-`r` tasks need
/// `l(m-1) >= 4r(n-r) - 1` when `2r <= n` and fall back to the informational
/// target otherwise. Timed schemes carry an extra block at `t = 0`, so they
/// need `(l+1)(m-1) >= n^2 - 1`. Unitary tasks require `m >= n`, all others
/// `m >= 2`.
pub fn predicted_min_steps(n: usize, m: usize, task: Task, r: Option<usize>) -> Result<usize> {
    if n == 0 {
        return Err(Error::InvalidArgument("dimension must be at least 1".into()));
    }
    let floor = if task.is_unitary() { n.max(2) } else { 2 };
    if m < floor {
        return Err(Error::InvalidArgument(format!(
            "{task} needs at least {floor} outcomes, got {m}"
        )));
    }
    let info_target = n * n - 1;
    let target = if task.is_rank() {
        let r = r.ok_or_else(|| Error::InvalidArgument(format!("{task} needs a rank")))?;
        if r == 0 || r > n {
            return Err(Error::InvalidArgument(format!("rank {r} outside 1..={n}")));
        }
        if 2 * r <= n {
            4 * r * (n - r) - 1
        } else {
            info_target
        }
    } else {
        info_target
    };
    let per_step = m - 1;
    let l = target.div_ceil(per_step);
    Ok(if task == Task::Timed { l.saturating_sub(1).max(1) } else { l.max(1) })
}

/// Smallest `l` with `l(m-1) > 2 dim`, the embedding bound for a state set of dimension `dim`.
pub fn whitney_min_steps(m: usize, dim: usize) -> Result<usize> {
    if m < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 outcomes, got {m}")));
    }
    Ok(2 * dim / (m - 1) + 1)
}

/// Wilson score interval for `successes` out of `trials`.
pub fn wilson_interval(successes: usize, trials: usize, z: f64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let center = (p + z2 / (2.0 * n)) / (1.0 + z2 / n);
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / (1.0 + z2 / n);
    // pin the endpoints so rounding never excludes the observed rate
    let low = if successes == 0 { 0.0 } else { (center - half).max(0.0) };
    let high = if successes == trials { 1.0 } else { (center + half).min(1.0) };
    (low, high)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub task: Task,
    pub n: usize,
    pub m: usize,
    #[serde(default)]
    pub r: Option<usize>,
    pub l: usize,
    #[serde(default)]
    pub times: Option<RationalTimeGrid>,
    pub trials: usize,
    pub success_count: usize,
    /// Trials that failed numerically; counted as unsuccessful.
    pub numerical_failures: usize,
    pub rate: f64,
    pub wilson_low: f64,
    pub wilson_high: f64,
    /// Smallest `sigma_{n^2}` (informational tasks) or margin value (rank tasks) over trials.
    pub margin_min: Option<f64>,
    pub margin_median: Option<f64>,
    pub predicted_l: Option<usize>,
    pub seed: u64,
    /// Stream of the cell; trial `k` uses the substream derived with label `k`.
    pub stream: u64,
}

/// Records plus per-cell wall times, which are kept out of the record file.
#[derive(Clone, Debug)]
pub struct SweepOutcome {
    pub records: Vec<SweepRecord>,
    pub wall_times: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecordFile {
    pub schema: u32,
    pub config: ExperimentConfig,
    pub records: Vec<SweepRecord>,
}

struct TrialResult {
    success: bool,
    margin: f64,
}

fn cell_rng(config: &ExperimentConfig, cell: &Cell) -> SeededRng {
    SeededRng::new(config.seed)
        .derive(config.task.code())
        .derive(cell.n as u64)
        .derive(cell.m as u64)
        .derive(cell.r.unwrap_or(0) as u64)
}

fn draw_feasible<T>(rng: &mut SeededRng, mut draw: impl FnMut(&mut SeededRng) -> Result<Option<T>>) -> Result<T> {
    for _ in 0..MAX_FEASIBLE_DRAWS {
        if let Some(found) = draw(rng)? {
            return Ok(found);
        }
    }
    Err(Error::Numerical(format!("no feasible draw in {MAX_FEASIBLE_DRAWS} attempts")))
}

/// Feasible Haar unitary channel.
pub fn draw_feasible_unitary(n: usize, gap_tol: f64, rng: &mut SeededRng) -> Result<Channel> {
    draw_feasible(rng, |rng| {
        let u = haar_unitary(n, rng);
        Ok(if feasibility_unitary(&u, gap_tol)?.feasible { Some(unitary_channel(&u)?) } else { None })
    })
}

/// Feasible random CPTP channel with `kraus_count` Kraus operators.
pub fn draw_feasible_cptp(n: usize, kraus_count: usize, tol: f64, rng: &mut SeededRng) -> Result<Channel> {
    draw_feasible(rng, |rng| {
        let c = random_cptp(n, kraus_count, rng)?;
        Ok(c.feasibility(tol).feasible.then_some(c))
    })
}

/// Scheme matrix of one trial; shared by sweeps and direct experiments.
pub fn trial_scheme(config: &ExperimentConfig, cell: &Cell, rng: &mut SeededRng) -> Result<SchemeMatrix> {
    let n = cell.n;
    let tol = config.tolerances.gap_tol;
    let scheme = match config.task {
        Task::InfoCompleteUnitary | Task::RankRUnitary => {
            let channel = draw_feasible_unitary(n, tol, rng)?;
            let povm = ginibre_povm(n, cell.m, rng)?;
            dynamical_scheme(&povm, &channel, cell.l)?
        }
        Task::InfoCompleteCptp | Task::RankRCptp => {
            let channel = draw_feasible_cptp(n, config.kraus_count, tol, rng)?;
            let povm = ginibre_povm(n, cell.m, rng)?;
            dynamical_scheme(&povm, &channel, cell.l)?
        }
        Task::Timed => {
            let generator = random_unital_generator(n, config.jumps, rng)?;
            let povm = ginibre_povm(n, cell.m, rng)?;
            let times = cell.times.clone().unwrap_or_else(|| RationalTimeGrid::equispaced(cell.l));
            timed_scheme(&povm, &generator, &times)?
        }
    };
    Ok(scheme_matrix(&scheme))
}

fn run_trial(config: &ExperimentConfig, cell: &Cell, mut rng: SeededRng) -> Result<TrialResult> {
    let h = trial_scheme(config, cell, &mut rng)?;
    if let Some(r) = cell.r {
        let opts = MarginOptions {
            restarts: config.margin.restarts,
            max_iters: config.margin.max_iters,
            step: StepRule::default(),
            seed: rng.derive(0x6d61_7267).key().stream,
            ..MarginOptions::default()
        };
        let est = rank_r_margin(&h, r, &opts)?;
        Ok(TrialResult {
            success: est.verdict == MarginVerdict::CompleteCandidate,
            margin: est.value,
        })
    } else {
        let verdict = informational_complete(&h, config.tolerances.rank_rel_tol)?;
        let target = verdict.target_rank;
        Ok(TrialResult {
            success: verdict.complete,
            margin: verdict.singular_values.get(target - 1).cloned().unwrap_or(0.0),
        })
    }
}

/// Runs one cell; trials run in parallel on derived streams.
pub fn run_cell(config: &ExperimentConfig, cell: &Cell) -> SweepRecord {
    let base = cell_rng(config, cell);
    let results: Vec<Result<TrialResult>> = (0..config.trials)
        .into_par_iter()
        .map(|k| run_trial(config, cell, base.derive(k as u64)))
        .collect();
    let mut margins = Vec::new();
    let mut success_count = 0;
    let mut numerical_failures = 0;
    for (k, res) in results.into_iter().enumerate() {
        match res {
            Ok(t) => {
                success_count += usize::from(t.success);
                margins.push(t.margin);
            }
            Err(e) => {
                log::warn!("{} n={} m={} l={} trial {k}: {e}", config.task, cell.n, cell.m, cell.l);
                numerical_failures += 1;
            }
        }
    }
    margins.sort_by(f64::total_cmp);
    let median = (!margins.is_empty()).then(|| {
        let mid = margins.len() / 2;
        if margins.len() % 2 == 1 {
            margins[mid]
        } else {
            0.5 * (margins[mid - 1] + margins[mid])
        }
    });
    let (wilson_low, wilson_high) = wilson_interval(success_count, config.trials, WILSON_Z);
    let key = base.key();
    SweepRecord {
        task: config.task,
        n: cell.n,
        m: cell.m,
        r: cell.r,
        l: cell.l,
        times: cell.times.clone().filter(|_| !config.times.is_empty()),
        trials: config.trials,
        success_count,
        numerical_failures,
        rate: success_count as f64 / config.trials as f64,
        wilson_low,
        wilson_high,
        margin_min: margins.first().cloned(),
        margin_median: median,
        predicted_l: predicted_min_steps(cell.n, cell.m, config.task, cell.r).ok(),
        seed: key.seed,
        stream: key.stream,
    }
}

fn partial_path(output: &Path) -> PathBuf {
    let mut name = output.file_name().map(|s| s.to_os_string()).unwrap_or_default();
    name.push(".partial.jsonl");
    output.with_file_name(name)
}

fn timing_path(output: &Path) -> PathBuf {
    let mut name = output.file_name().map(|s| s.to_os_string()).unwrap_or_default();
    name.push(".timing.json");
    output.with_file_name(name)
}

/// Runs every cell of `config` in order.
///
/// With an output path, each record is appended to `<output>.partial.jsonl`
/// as soon as its cell finishes; at the end the sorted record file is written
/// to `<output>` and the partial log removed. Wall times go to
/// `<output>.timing.json` so the record file replays byte for byte.
pub fn run_sweep(config: &ExperimentConfig) -> Result<SweepOutcome> {
    config.validate()?;
    let mut partial = match &config.output {
        Some(out) => {
            if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            let path = partial_path(out);
            Some(BufWriter::new(OpenOptions::new().create(true).write(true).truncate(true).open(path)?))
        }
        None => None,
    };
    let mut records = Vec::new();
    let mut wall_times = Vec::new();
    for cell in config.cells() {
        let start = Instant::now();
        let record = run_cell(config, &cell);
        let elapsed = start.elapsed().as_secs_f64();
        log::info!(
            "{} n={} m={} r={:?} l={}: {}/{} in {:.2}s",
            config.task,
            cell.n,
            cell.m,
            cell.r,
            cell.l,
            record.success_count,
            record.trials,
            elapsed
        );
        if let Some(w) = partial.as_mut() {
            serde_json::to_writer(&mut *w, &record)?;
            w.write_all(b"\n")?;
            w.flush()?;
        }
        records.push(record);
        wall_times.push(elapsed);
    }
    if let Some(out) = &config.output {
        drop(partial);
        write_records(out, config, &records)?;
        let timing: Vec<serde_json::Value> = records
            .iter()
            .zip(&wall_times)
            .map(|(r, t)| serde_json::json!({"n": r.n, "m": r.m, "r": r.r, "l": r.l, "wall_time_s": t}))
            .collect();
        fs::write(timing_path(out), serde_json::to_string_pretty(&timing)?)?;
        fs::remove_file(partial_path(out))?;
    }
    Ok(SweepOutcome { records, wall_times })
}

/// Writes the final record file.
pub fn write_records(path: &Path, config: &ExperimentConfig, records: &[SweepRecord]) -> Result<()> {
    let mut sorted = records.to_vec();
    sorted.sort_by_key(record_key);
    let file = RecordFile {
        schema: CONFIG_SCHEMA,
        config: config.clone(),
        records: sorted,
    };
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, &file)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_records(path: &Path) -> Result<RecordFile> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

fn record_key(r: &SweepRecord) -> (Task, usize, usize, usize, usize, Vec<(u64, u64)>) {
    let times = r
        .times
        .iter()
        .flat_map(|g| g.times().iter().map(|t| (t.num, t.den)))
        .collect();
    (r.task, r.n, r.m, r.r.unwrap_or(0), r.l, times)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ThresholdStatus {
    #[serde(rename = "agree")]
    Agree,
    #[serde(rename = "agree-or-better")]
    AgreeOrBetter,
    #[serde(rename = "disagree")]
    Disagree,
    #[serde(rename = "not-reached")]
    NotReached,
    #[serde(rename = "floor-violated, no transition")]
    FloorViolatedNoTransition,
    #[serde(rename = "floor-violated, transition observed")]
    FloorViolatedTransition,
}

impl ThresholdStatus {
    pub fn label(self) -> &'static str {
        match self {
            ThresholdStatus::Agree => "agree",
            ThresholdStatus::AgreeOrBetter => "agree-or-better",
            ThresholdStatus::Disagree => "disagree",
            ThresholdStatus::NotReached => "not-reached",
            ThresholdStatus::FloorViolatedNoTransition => "floor-violated, no transition",
            ThresholdStatus::FloorViolatedTransition => "floor-violated, transition observed",
        }
    }

    /// True when the observation contradicts the predicted threshold.
    pub fn is_failure(self) -> bool {
        matches!(self, ThresholdStatus::Disagree | ThresholdStatus::FloorViolatedTransition)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRow {
    pub task: Task,
    pub n: usize,
    pub m: usize,
    pub r: Option<usize>,
    pub predicted_l: Option<usize>,
    pub observed_l: Option<usize>,
    pub max_l_tested: usize,
    pub status: ThresholdStatus,
    /// `(l, rate, wilson_low, wilson_high)` per tested `l`.
    pub rates: Vec<(usize, f64, f64, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdReport {
    pub success_threshold: f64,
    pub wilson_z: f64,
    pub calibration: String,
    pub rows: Vec<ThresholdRow>,
}

/// Compares the empirical transition of each `(task, n, m, r)` group with the prediction.
pub fn threshold_report(records: &[SweepRecord]) -> Result<ThresholdReport> {
    if records.is_empty() {
        return Err(Error::InvalidArgument("no records to report on".into()));
    }
    let mut groups: BTreeMap<(Task, usize, usize, usize), Vec<&SweepRecord>> = BTreeMap::new();
    for rec in records {
        groups.entry((rec.task, rec.n, rec.m, rec.r.unwrap_or(0))).or_default().push(rec);
    }
    let rows = groups
        .into_values()
        .map(|mut group| {
            group.sort_by_key(|r| r.l);
            let first = group[0];
            let predicted_l = predicted_min_steps(first.n, first.m, first.task, first.r).ok();
            let observed_l = group.iter().find(|r| r.rate >= SUCCESS_THRESHOLD).map(|r| r.l);
            let max_l_tested = group.last().map_or(0, |r| r.l);
            let status = match (predicted_l, observed_l) {
                (None, None) => ThresholdStatus::FloorViolatedNoTransition,
                (None, Some(_)) => ThresholdStatus::FloorViolatedTransition,
                (Some(p), Some(o)) if o > p => ThresholdStatus::Disagree,
                (Some(p), Some(o)) if o == p && !first.task.is_rank() => ThresholdStatus::Agree,
                (Some(_), Some(_)) => ThresholdStatus::AgreeOrBetter,
                (Some(p), None) if max_l_tested >= p => ThresholdStatus::Disagree,
                (Some(_), None) => ThresholdStatus::NotReached,
            };
            ThresholdRow {
                task: first.task,
                n: first.n,
                m: first.m,
                r: first.r,
                predicted_l,
                observed_l,
                max_l_tested,
                status,
                rates: group.iter().map(|r| (r.l, r.rate, r.wilson_low, r.wilson_high)).collect(),
            }
        })
        .collect();
    Ok(ThresholdReport {
        success_threshold: SUCCESS_THRESHOLD,
        wilson_z: WILSON_Z,
        calibration: format!(
            "transition = smallest l with empirical rate >= {SUCCESS_THRESHOLD}; finite-sample calibration, \
             not a property of the underlying genericity statements; intervals are Wilson at z = {WILSON_Z}"
        ),
        rows,
    })
}

impl ThresholdReport {
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "# {}", self.calibration)?;
        writeln!(out, "task,n,m,r,predicted_l,observed_l,max_l_tested,status")?;
        let opt = |v: Option<usize>| v.map_or_else(String::new, |x| x.to_string());
        for row in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{},\"{}\"",
                row.task,
                row.n,
                row.m,
                opt(row.r),
                opt(row.predicted_l),
                opt(row.observed_l),
                row.max_l_tested,
                row.status.label()
            )?;
        }
        Ok(())
    }
}
