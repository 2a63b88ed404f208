//! Study runner: department sizes crossed with interventions, each paired
//! with its targeted baseline over seeded replications, plus the statistics
//! and CSV exports built from the results.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::config::{Baseline, ConfigError, EdSize, Resolved, SimConfig};
use crate::des_kernel::ResourceKind;
use crate::interventions::InterventionKind;
use crate::metrics::{MetricsError, RunSummary};
use crate::population::arrival_digest;
use crate::rng;
use crate::sim::Simulation;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum StatsError {
    #[error("each sample needs at least two values (got {0} and {1})")]
    TooFew(usize, usize),
    #[error("samples contain a non-finite value")]
    NonFinite,
    #[error("pooled standard deviation is zero")]
    ZeroVariance,
}

#[derive(Debug, thiserror::Error)]
pub enum StudyError {
    #[error("study matrix: {0}")]
    Matrix(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(
        "run failed: size {size}, {intervention} cell, {arm} arm, replication {rep} \
         (patient seed {patient_seed}, dynamics seed {dynamics_seed}): {message}"
    )]
    RunFailed {
        size: EdSize,
        intervention: InterventionKind,
        arm: Arm,
        rep: u32,
        patient_seed: u64,
        dynamics_seed: u64,
        message: String,
    },
    #[error("cannot build a pool of {0} worker threads: {1}")]
    Threads(usize, String),
    #[error("i/o error on {path}")]
    Io { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Export(#[from] MetricsError),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StudyError + '_ {
    move |source| StudyError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    Baseline,
    Intervention,
}

impl Arm {
    pub fn as_str(self) -> &'static str {
        match self {
            Arm::Baseline => "baseline",
            Arm::Intervention => "intervention",
        }
    }
}

impl std::fmt::Display for Arm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Sizes crossed with interventions. Each intervention runs against its
/// targeted baseline unless `baselines` overrides it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioMatrix {
    pub sizes: Vec<EdSize>,
    pub interventions: Vec<InterventionKind>,
    pub replications: u32,
    pub horizon_days: u32,
    pub master_seed: u64,
    /// Both arms of a replication share the dynamics seed as well as the
    /// patient seed.
    pub paired_dynamics: bool,
    pub baselines: BTreeMap<InterventionKind, Baseline>,
    /// Scenario files replacing the shipped preset for a size, relative to
    /// the matrix file.
    pub scenarios: BTreeMap<EdSize, PathBuf>,
    pub output: Option<PathBuf>,
    pub write_timeseries: bool,
}

pub const DEFAULT_MASTER_SEED: u64 = 20_240_917;

impl Default for ScenarioMatrix {
    fn default() -> Self {
        ScenarioMatrix::desk()
    }
}

/// One size and intervention pairing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Cell {
    pub size: EdSize,
    pub intervention: InterventionKind,
    pub baseline: Baseline,
}

impl Cell {
    /// Stable key for seed fan-out; independent of which other cells a
    /// matrix contains.
    pub fn key(&self) -> u64 {
        let size = EdSize::ALL
            .iter()
            .position(|s| *s == self.size)
            .unwrap_or(0) as u64;
        let kind = InterventionKind::ALL
            .iter()
            .position(|k| *k == self.intervention)
            .unwrap_or(0) as u64;
        size * 16 + kind
    }

    pub fn label(&self) -> String {
        format!("{}_{}", self.size.as_str(), self.intervention)
    }
}

impl ScenarioMatrix {
    /// Medium department only, ten replications of three days.
    pub fn desk() -> Self {
        ScenarioMatrix {
            sizes: vec![EdSize::Medium],
            interventions: InterventionKind::ALL.to_vec(),
            replications: 10,
            horizon_days: 3,
            master_seed: DEFAULT_MASTER_SEED,
            paired_dynamics: true,
            baselines: BTreeMap::new(),
            scenarios: BTreeMap::new(),
            output: None,
            write_timeseries: false,
        }
    }

    /// Every size, thirty replications.
    pub fn full() -> Self {
        ScenarioMatrix {
            sizes: EdSize::ALL.to_vec(),
            replications: 30,
            ..ScenarioMatrix::desk()
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "desk" => Some(Self::desk()),
            "full" => Some(Self::full()),
            _ => None,
        }
    }

    pub fn from_yaml(text: &str) -> Result<Self, StudyError> {
        serde_yaml::from_str(text).map_err(|e| StudyError::Matrix(e.to_string()))
    }

    /// Reads a matrix file and makes its scenario paths absolute.
    pub fn load(path: &Path) -> Result<Self, StudyError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let mut m = ScenarioMatrix::from_yaml(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in m.scenarios.values_mut() {
            *p = base.join(&*p);
        }
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), StudyError> {
        let bad = |m: &str| Err(StudyError::Matrix(m.to_string()));
        if self.sizes.is_empty() || self.interventions.is_empty() {
            return bad("sizes and interventions must be non-empty");
        }
        if self.replications == 0 {
            return bad("replications must be at least 1");
        }
        if self.horizon_days == 0 {
            return bad("horizon_days must be at least 1");
        }
        Ok(())
    }

    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for &size in &self.sizes {
            for &intervention in &self.interventions {
                let baseline = self
                    .baselines
                    .get(&intervention)
                    .copied()
                    .unwrap_or(Baseline::for_intervention(intervention));
                out.push(Cell {
                    size,
                    intervention,
                    baseline,
                });
            }
        }
        out
    }

    pub fn run_count(&self) -> usize {
        self.cells().len() * self.replications as usize * 2
    }

    /// Patient and dynamics seeds for one arm of one replication.
    pub fn seeds(&self, cell: &Cell, rep: u32, arm: Arm) -> (u64, u64) {
        let key = cell.key();
        let patient = rng::mix(&[self.master_seed, key, rep as u64, 0]);
        let dynamics = if self.paired_dynamics {
            rng::mix(&[self.master_seed, key, rep as u64, 1])
        } else {
            rng::mix(&[self.master_seed, key, rep as u64, 1, arm as u64])
        };
        (patient, dynamics)
    }

    fn base_config(&self, size: EdSize) -> Result<(SimConfig, Option<PathBuf>), StudyError> {
        match self.scenarios.get(&size) {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(io_err(path))?;
                Ok((
                    SimConfig::from_yaml(&text)?,
                    path.parent().map(Path::to_path_buf),
                ))
            }
            None => Ok((SimConfig::preset(size), None)),
        }
    }

    /// Configuration for one arm.
    pub fn config(&self, cell: &Cell, rep: u32, arm: Arm) -> Result<Resolved, StudyError> {
        let (base, dir) = self.base_config(cell.size)?;
        let (patient, dynamics) = self.seeds(cell, rep, arm);
        let mut c = base
            .with_baseline(cell.baseline)
            .with_seeds(patient, dynamics);
        c.horizon_days = self.horizon_days;
        c.horizon_minutes = None;
        if arm == Arm::Intervention {
            c = c.with_intervention(cell.intervention);
        }
        Ok(c.resolve(dir.as_deref())?)
    }
}

/// Outcome of one simulated arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub cell: Cell,
    pub arm: Arm,
    pub rep: u32,
    pub patient_seed: u64,
    pub dynamics_seed: u64,
    /// Digest of the patient-stream decisions; equal across the arms of a
    /// replication.
    pub arrival_digest: String,
    pub summary: RunSummary,
}

/// Statistical comparison of one metric between the arms of a cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatResult {
    pub size: EdSize,
    pub intervention: InterventionKind,
    pub baseline: Baseline,
    pub metric: String,
    pub n_baseline: usize,
    pub n_intervention: usize,
    pub mean_baseline: f64,
    pub mean_intervention: f64,
    pub relative_change_pct: Option<f64>,
    pub welch_t: Option<f64>,
    pub df: Option<f64>,
    pub p_value: Option<f64>,
    /// Positive when the intervention lowers the metric.
    pub cohens_d: Option<f64>,
}

pub struct StudyResults {
    pub matrix: ScenarioMatrix,
    /// Sorted by cell, replication and arm.
    pub runs: Vec<RunRecord>,
    pub stats: Vec<StatResult>,
}

impl StudyResults {
    pub fn arm(&self, cell: &Cell, arm: Arm) -> Vec<&RunRecord> {
        self.runs
            .iter()
            .filter(|r| r.cell == *cell && r.arm == arm)
            .collect()
    }

    pub fn stat(&self, cell: &Cell, metric: &str) -> Option<&StatResult> {
        self.stats.iter().find(|s| {
            s.size == cell.size
                && s.intervention == cell.intervention
                && s.baseline == cell.baseline
                && s.metric == metric
        })
    }

    pub fn patients_simulated(&self) -> u64 {
        self.runs.iter().map(|r| r.summary.arrivals).sum()
    }

    /// Recomputes the statistics from finished runs.
    pub fn from_runs(matrix: ScenarioMatrix, runs: Vec<RunRecord>) -> StudyResults {
        let stats = matrix
            .cells()
            .iter()
            .flat_map(|c| cell_stats(c, &runs))
            .collect();
        StudyResults {
            matrix,
            runs,
            stats,
        }
    }
}

pub const MATRIX_FILE: &str = "matrix.yaml";
pub const RUNS_FILE: &str = "runs.jsonl";

/// Writes the matrix, one JSON line per run and every export into `dir`.
pub fn save_study(results: &StudyResults, dir: &Path) -> Result<(), StudyError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let matrix = serde_yaml::to_string(&results.matrix).expect("matrix serializes");
    let path = dir.join(MATRIX_FILE);
    fs::write(&path, matrix).map_err(io_err(&path))?;
    let mut lines = String::new();
    for r in &results.runs {
        lines.push_str(&serde_json::to_string(r).expect("run record serializes"));
        lines.push('\n');
    }
    let path = dir.join(RUNS_FILE);
    fs::write(&path, lines).map_err(io_err(&path))?;
    write_exports(results, dir)
}

/// Reads a directory written by [`save_study`].
pub fn load_study(dir: &Path) -> Result<StudyResults, StudyError> {
    let path = dir.join(MATRIX_FILE);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let matrix = ScenarioMatrix::from_yaml(&text)?;
    let path = dir.join(RUNS_FILE);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let runs = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| StudyError::Matrix(format!("{} line {}: {e}", path.display(), i + 1)))
        })
        .collect::<Result<Vec<RunRecord>, _>>()?;
    Ok(StudyResults::from_runs(matrix, runs))
}

#[derive(Default)]
pub struct StudyOptions {
    /// Worker threads; 0 uses every core.
    pub jobs: usize,
    /// Directory for per-run time series CSVs.
    pub timeseries_dir: Option<PathBuf>,
}

fn panic_message(payload: Box<dyn std::any::Any + Send>) -> String {
    if let Some(s) = payload.downcast_ref::<&str>() {
        s.to_string()
    } else if let Some(s) = payload.downcast_ref::<String>() {
        s.clone()
    } else {
        "panic".to_string()
    }
}

/// Runs one arm to its horizon.
pub fn run_arm(
    matrix: &ScenarioMatrix,
    cell: &Cell,
    rep: u32,
    arm: Arm,
    series_dir: Option<&Path>,
) -> Result<RunRecord, StudyError> {
    let ctx = Arc::new(matrix.config(cell, rep, arm)?);
    let (patient_seed, dynamics_seed) = (ctx.config.seeds.patient, ctx.config.seeds.dynamics);
    let failed = |message: String| StudyError::RunFailed {
        size: cell.size,
        intervention: cell.intervention,
        arm,
        rep,
        patient_seed,
        dynamics_seed,
        message,
    };
    let outcome = catch_unwind(AssertUnwindSafe(|| {
        let mut sim = Simulation::new(ctx.clone());
        sim.world.record_series = series_dir.is_some();
        sim.run();
        sim.kernel.ledger.drain();
        sim
    }));
    let sim = outcome.map_err(|p| failed(panic_message(p)))?;
    if let Some(dir) = series_dir {
        let path = dir.join(format!("{}_{}_{rep}.csv", cell.label(), arm));
        let file = fs::File::create(&path).map_err(io_err(&path))?;
        sim.world.series.write_csv(io::BufWriter::new(file))?;
    }
    Ok(RunRecord {
        cell: *cell,
        arm,
        rep,
        patient_seed,
        dynamics_seed,
        arrival_digest: arrival_digest(sim.patients()),
        summary: sim.summary(),
    })
}

/// Runs every arm of every cell, in parallel over `options.jobs` threads.
/// `on_run` is called as each arm finishes, in completion order. Results
/// do not depend on the thread count.
pub fn run_study(
    matrix: &ScenarioMatrix,
    options: &StudyOptions,
    on_run: &(dyn Fn(&RunRecord) + Sync),
) -> Result<StudyResults, StudyError> {
    matrix.validate()?;
    if let Some(dir) = &options.timeseries_dir {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let mut tasks = Vec::new();
    for cell in matrix.cells() {
        for rep in 0..matrix.replications {
            for arm in [Arm::Baseline, Arm::Intervention] {
                tasks.push((cell, rep, arm));
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.jobs)
        .build()
        .map_err(|e| StudyError::Threads(options.jobs, e.to_string()))?;
    let results: Vec<Result<RunRecord, StudyError>> = pool.install(|| {
        tasks
            .par_iter()
            .map(|(cell, rep, arm)| {
                let r = run_arm(matrix, cell, *rep, *arm, options.timeseries_dir.as_deref());
                if let Ok(rec) = &r {
                    on_run(rec);
                }
                r
            })
            .collect()
    });
    let runs = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    Ok(StudyResults::from_runs(matrix.clone(), runs))
}

/// Metrics compared for every cell, with the per-run value each uses.
/// Extracts one per-run value from a summary.
pub type MetricFn = fn(&RunSummary) -> f64;

pub const METRICS: [(&str, MetricFn); 4] = [
    ("los", |s| s.los.mean.unwrap_or(0.0)),
    ("wait", |s| s.wait.mean.unwrap_or(0.0)),
    ("lwbs_pct", |s| s.lwbs_rate),
    ("mortality_pct", |s| s.mortality_rate),
];

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

fn check(a: &[f64], b: &[f64]) -> Result<(), StatsError> {
    if a.len() < 2 || b.len() < 2 {
        return Err(StatsError::TooFew(a.len(), b.len()));
    }
    if a.iter().chain(b).any(|x| !x.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WelchResult {
    pub t: f64,
    pub df: f64,
    /// Two-sided.
    pub p: f64,
}

/// Welch's unequal-variance t-test of `mean(a) - mean(b)`.
///
/// When both samples have zero variance the statistic is 0 with p = 1 for
/// equal means and infinite with p = 0 otherwise; df then falls back to
/// `n_a + n_b - 2`.
pub fn welch_t(a: &[f64], b: &[f64]) -> Result<WelchResult, StatsError> {
    check(a, b)?;
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (va, vb) = (variance(a) / na, variance(b) / nb);
    let diff = mean(a) - mean(b);
    let se2 = va + vb;
    if se2 == 0.0 {
        let df = na + nb - 2.0;
        return Ok(if diff == 0.0 {
            WelchResult { t: 0.0, df, p: 1.0 }
        } else {
            WelchResult {
                t: diff.signum() * f64::INFINITY,
                df,
                p: 0.0,
            }
        });
    }
    let t = diff / se2.sqrt();
    let df = se2 * se2 / (va * va / (na - 1.0) + vb * vb / (nb - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
    let p = (2.0 * dist.sf(t.abs())).clamp(0.0, 1.0);
    Ok(WelchResult { t, df, p })
}

/// `(mean(a) - mean(b)) / pooled SD`, pooling with `n - 1` weights.
pub fn cohens_d(a: &[f64], b: &[f64]) -> Result<f64, StatsError> {
    check(a, b)?;
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let pooled = (((na - 1.0) * variance(a) + (nb - 1.0) * variance(b)) / (na + nb - 2.0)).sqrt();
    if pooled == 0.0 {
        return Err(StatsError::ZeroVariance);
    }
    Ok((mean(a) - mean(b)) / pooled)
}

/// Compares baseline against intervention values of one metric.
pub fn compare(cell: &Cell, metric: &str, baseline: &[f64], intervention: &[f64]) -> StatResult {
    let mb = if baseline.is_empty() {
        f64::NAN
    } else {
        mean(baseline)
    };
    let mi = if intervention.is_empty() {
        f64::NAN
    } else {
        mean(intervention)
    };
    let welch = welch_t(baseline, intervention).ok();
    StatResult {
        size: cell.size,
        intervention: cell.intervention,
        baseline: cell.baseline,
        metric: metric.to_string(),
        n_baseline: baseline.len(),
        n_intervention: intervention.len(),
        mean_baseline: mb,
        mean_intervention: mi,
        relative_change_pct: (mb != 0.0 && mb.is_finite()).then(|| 100.0 * (mi - mb) / mb),
        welch_t: welch.map(|w| w.t),
        df: welch.map(|w| w.df),
        p_value: welch.map(|w| w.p),
        cohens_d: cohens_d(baseline, intervention).ok(),
    }
}

fn cell_stats(cell: &Cell, runs: &[RunRecord]) -> Vec<StatResult> {
    let values = |arm: Arm, f: MetricFn| -> Vec<f64> {
        runs.iter()
            .filter(|r| r.cell == *cell && r.arm == arm)
            .map(|r| f(&r.summary))
            .collect()
    };
    METRICS
        .iter()
        .map(|(name, f)| {
            compare(
                cell,
                name,
                &values(Arm::Baseline, *f),
                &values(Arm::Intervention, *f),
            )
        })
        .collect()
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>, StudyError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    Ok(csv::Writer::from_writer(file))
}

fn finish(mut w: csv::Writer<fs::File>) -> Result<(), StudyError> {
    w.flush()
        .map_err(|e| StudyError::Export(MetricsError::Io(e)))
}

fn row(w: &mut csv::Writer<fs::File>, fields: Vec<String>) -> Result<(), StudyError> {
    w.write_record(&fields)
        .map_err(|e| StudyError::Export(MetricsError::Csv(e)))
}

/// Writes `stat_results.csv`, `summary_table.csv`, `lwbs_heatmap.csv`,
/// `wait_breakdown.csv` and `runs.csv` into `dir`.
pub fn write_exports(results: &StudyResults, dir: &Path) -> Result<(), StudyError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let strs = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();

    let mut w = csv_writer(&dir.join("stat_results.csv"))?;
    row(
        &mut w,
        strs(&[
            "size",
            "intervention",
            "baseline",
            "metric",
            "n_baseline",
            "n_intervention",
            "mean_baseline",
            "mean_intervention",
            "relative_change_pct",
            "welch_t",
            "df",
            "p_value",
            "cohens_d",
        ]),
    )?;
    for s in &results.stats {
        row(
            &mut w,
            vec![
                s.size.short().into(),
                s.intervention.to_string(),
                s.baseline.as_str().into(),
                s.metric.clone(),
                s.n_baseline.to_string(),
                s.n_intervention.to_string(),
                s.mean_baseline.to_string(),
                s.mean_intervention.to_string(),
                opt(s.relative_change_pct),
                opt(s.welch_t),
                opt(s.df),
                opt(s.p_value),
                opt(s.cohens_d),
            ],
        )?;
    }
    finish(w)?;

    let cells = results.matrix.cells();
    let mut w = csv_writer(&dir.join("summary_table.csv"))?;
    row(
        &mut w,
        strs(&[
            "size",
            "intervention",
            "arm",
            "scenario",
            "runs",
            "patients",
            "los_mean",
            "wait_mean",
            "lwbs_pct",
            "mortality_pct",
            "fast_track_count",
            "nurse_ratio_blocked_count",
            "physician_triage_count",
        ]),
    )?;
    for cell in &cells {
        for arm in [Arm::Baseline, Arm::Intervention] {
            let runs = results.arm(cell, arm);
            if runs.is_empty() {
                continue;
            }
            let avg = |f: &dyn Fn(&RunSummary) -> f64| {
                mean(&runs.iter().map(|r| f(&r.summary)).collect::<Vec<_>>())
            };
            let scenario = if arm == Arm::Baseline {
                cell.baseline.as_str().to_string()
            } else {
                cell.intervention.to_string()
            };
            row(
                &mut w,
                vec![
                    cell.size.short().into(),
                    cell.intervention.to_string(),
                    arm.to_string(),
                    scenario,
                    runs.len().to_string(),
                    runs.iter()
                        .map(|r| r.summary.arrivals)
                        .sum::<u64>()
                        .to_string(),
                    avg(&METRICS[0].1).to_string(),
                    avg(&METRICS[1].1).to_string(),
                    avg(&METRICS[2].1).to_string(),
                    avg(&METRICS[3].1).to_string(),
                    avg(&|s| s.counters.fast_track_count as f64).to_string(),
                    avg(&|s| s.counters.nurse_ratio_blocked_count as f64).to_string(),
                    avg(&|s| s.counters.physician_triage_count as f64).to_string(),
                ],
            )?;
        }
    }
    finish(w)?;

    let mut w = csv_writer(&dir.join("lwbs_heatmap.csv"))?;
    row(
        &mut w,
        strs(&[
            "size",
            "intervention",
            "arm",
            "true_esi",
            "assigned_esi",
            "lwbs",
            "arrivals_at_true_esi",
        ]),
    )?;
    for cell in &cells {
        for arm in [Arm::Baseline, Arm::Intervention] {
            let runs = results.arm(cell, arm);
            let mut grid = [[0u64; 6]; 5];
            for r in &runs {
                for (i, line) in r.summary.lwbs_by_esi.iter().enumerate() {
                    for (j, v) in line.iter().enumerate() {
                        grid[i][j] += v;
                    }
                }
            }
            let arrivals: [u64; 5] =
                std::array::from_fn(|i| runs.iter().map(|r| r.summary.arrivals_by_esi[i]).sum());
            for (i, line) in grid.iter().enumerate() {
                for (j, v) in line.iter().enumerate() {
                    let assigned = if j == 5 {
                        "untriaged".to_string()
                    } else {
                        (j + 1).to_string()
                    };
                    row(
                        &mut w,
                        vec![
                            cell.size.short().into(),
                            cell.intervention.to_string(),
                            arm.to_string(),
                            (i + 1).to_string(),
                            assigned,
                            v.to_string(),
                            arrivals[i].to_string(),
                        ],
                    )?;
                }
            }
        }
    }
    finish(w)?;

    let mut w = csv_writer(&dir.join("wait_breakdown.csv"))?;
    row(
        &mut w,
        strs(&[
            "size",
            "intervention",
            "arm",
            "group",
            "resource",
            "mean_minutes",
        ]),
    )?;
    type Pick = fn(&RunSummary) -> &BTreeMap<ResourceKind, f64>;
    let groups: [(&str, Pick); 3] = [
        ("all", |s| &s.wait_breakdown),
        ("high_acuity", |s| &s.high_acuity_wait_breakdown),
        ("deceased", |s| &s.deceased_wait_breakdown),
    ];
    for cell in &cells {
        for arm in [Arm::Baseline, Arm::Intervention] {
            let runs = results.arm(cell, arm);
            for (group, pick) in groups {
                let mut sums: BTreeMap<ResourceKind, f64> = BTreeMap::new();
                for r in &runs {
                    for (k, v) in pick(&r.summary) {
                        *sums.entry(*k).or_default() += v;
                    }
                }
                for (k, v) in sums {
                    row(
                        &mut w,
                        vec![
                            cell.size.short().into(),
                            cell.intervention.to_string(),
                            arm.to_string(),
                            group.into(),
                            k.as_str().into(),
                            (v / runs.len() as f64).to_string(),
                        ],
                    )?;
                }
            }
        }
    }
    finish(w)?;

    let mut w = csv_writer(&dir.join("runs.csv"))?;
    row(
        &mut w,
        strs(&[
            "size",
            "intervention",
            "arm",
            "rep",
            "patient_seed",
            "dynamics_seed",
            "arrival_digest",
            "arrivals",
            "completed",
            "lwbs",
            "deceased",
            "in_progress",
            "los_mean",
            "wait_mean",
            "lwbs_pct",
            "mortality_pct",
            "fast_track_count",
            "nurse_ratio_blocked_count",
            "physician_triage_count",
        ]),
    )?;
    for r in &results.runs {
        let s = &r.summary;
        row(
            &mut w,
            vec![
                r.cell.size.short().into(),
                r.cell.intervention.to_string(),
                r.arm.to_string(),
                r.rep.to_string(),
                r.patient_seed.to_string(),
                r.dynamics_seed.to_string(),
                r.arrival_digest.clone(),
                s.arrivals.to_string(),
                s.completed.to_string(),
                s.lwbs.to_string(),
                s.deceased.to_string(),
                s.in_progress.to_string(),
                opt(s.los.mean),
                opt(s.wait.mean),
                s.lwbs_rate.to_string(),
                s.mortality_rate.to_string(),
                s.counters.fast_track_count.to_string(),
                s.counters.nurse_ratio_blocked_count.to_string(),
                s.counters.physician_triage_count.to_string(),
            ],
        )?;
    }
    finish(w)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_samples() {
        let a = [3.0, 4.0, 8.0];
        let w = welch_t(&a, &a).unwrap();
        assert_eq!((w.t, w.p), (0.0, 1.0));
        assert_eq!(cohens_d(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn too_few_values() {
        assert_eq!(welch_t(&[1.0], &[1.0, 2.0]), Err(StatsError::TooFew(1, 2)));
        assert_eq!(cohens_d(&[1.0, 2.0], &[]), Err(StatsError::TooFew(2, 0)));
    }

    #[test]
    fn zero_variance() {
        assert_eq!(
            cohens_d(&[2.0, 2.0], &[2.0, 2.0]),
            Err(StatsError::ZeroVariance)
        );
        let w = welch_t(&[1.0, 1.0], &[3.0, 3.0]).unwrap();
        assert_eq!((w.t, w.p), (f64::NEG_INFINITY, 0.0));
    }

    #[test]
    fn separated_samples() {
        let a = [0.0, 0.1, -0.1, 0.05, -0.05];
        let b = [100.0, 100.1, 99.9, 100.05, 99.95];
        assert!(welch_t(&a, &b).unwrap().p < 1e-6);
    }

    #[test]
    fn desk_matrix_has_sixty_runs() {
        assert_eq!(ScenarioMatrix::desk().run_count(), 60);
        assert_eq!(ScenarioMatrix::full().run_count(), 540);
    }

    #[test]
    fn seeds_pair_arms_and_ignore_matrix_shape() {
        let desk = ScenarioMatrix::desk();
        let full = ScenarioMatrix::full();
        let cell = desk.cells()[1];
        assert_eq!(
            desk.seeds(&cell, 3, Arm::Baseline),
            desk.seeds(&cell, 3, Arm::Intervention)
        );
        assert_eq!(
            desk.seeds(&cell, 3, Arm::Baseline),
            full.seeds(&cell, 3, Arm::Baseline)
        );
        let unpaired = ScenarioMatrix {
            paired_dynamics: false,
            ..desk.clone()
        };
        let (pb, db) = unpaired.seeds(&cell, 3, Arm::Baseline);
        let (pi, di) = unpaired.seeds(&cell, 3, Arm::Intervention);
        assert_eq!(pb, pi);
        assert_ne!(db, di);
    }

    #[test]
    fn matrix_yaml_round_trip() {
        let m = ScenarioMatrix {
            replications: 5,
            ..ScenarioMatrix::full()
        };
        let text = serde_yaml::to_string(&m).unwrap();
        assert_eq!(ScenarioMatrix::from_yaml(&text).unwrap(), m);
        let partial = ScenarioMatrix::from_yaml("replications: 2\nsizes: [large]\n").unwrap();
        assert_eq!(partial.replications, 2);
        assert_eq!(partial.interventions.len(), 3);
    }
}
