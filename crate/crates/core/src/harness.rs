//! Single runs and seeded experiment sweeps with CSV output.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detect::{BinCounts, DetectorConfig};
use crate::error::{usage, Error, Result};
use crate::oracle::{FunctionOracle, SubprocessOracle, TableOracle};
use crate::peel::{decode, DecodeOptions, DecodeResult};
use crate::plan::{default_b, PlanConfig, Regime, SamplingPlan, DEFAULT_GROUPS};
use crate::spectral::{nmse, SparseSpectrum};
use crate::synth::{synthesize, NoiseLevel, SyntheticSpec, ValueModel};

/// Coefficient tolerance for calling a recovery exact.
pub const EXACT_TOLERANCE: f64 = 1e-9;

/// Default NMSE below which a sweep trial counts as a success.
pub const DEFAULT_SUCCESS_NMSE: f64 = 0.1;

/// One experiment cell. Unset `b` and `p1` are derived from the others.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub q: u32,
    pub n: usize,
    pub sparsity: usize,
    pub b: Option<usize>,
    /// Target bins per coefficient when `b` is unset.
    pub eta: f64,
    pub c_groups: usize,
    pub p1: Option<usize>,
    pub degree_bound: usize,
    pub regime: Regime,
    pub gamma: f64,
    pub snr_db: Option<f64>,
    pub sigma2: Option<f64>,
    pub values: ValueModel,
    pub seed: u64,
    pub caching: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            q: 2,
            n: 8,
            sparsity: 4,
            b: None,
            eta: 1.0,
            c_groups: DEFAULT_GROUPS,
            p1: None,
            degree_bound: 1,
            regime: Regime::Noiseless,
            gamma: crate::detect::DEFAULT_GAMMA,
            snr_db: None,
            sigma2: None,
            values: ValueModel::Assumption2 { rho: 1.0, kappa: 4 },
            seed: 0,
            caching: true,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.snr_db.is_some() && self.sigma2.is_some() {
            return usage("give either snr_db or sigma2, not both");
        }
        if self.c_groups == 0 {
            return usage("c_groups must be at least 1");
        }
        if !(self.eta > 0.0) {
            return usage("eta must be positive");
        }
        if let Some(b) = self.b {
            if b > self.n {
                return usage(format!("b = {b} exceeds n = {}", self.n));
            }
        }
        if matches!(self.p1, Some(0)) && matches!(self.regime, Regime::RobustNearLinear | Regime::RobustSubLinear) {
            return usage("p1 must be at least 1");
        }
        DetectorConfig { gamma: self.gamma, ..DetectorConfig::new(self.regime) }.validate()
    }

    pub fn resolved_b(&self) -> usize {
        self.b.unwrap_or_else(|| default_b(self.q, self.n, self.sparsity, self.eta))
    }

    /// Offset count (near-linear) or block count (sub-linear); 0 otherwise.
    pub fn resolved_p1(&self) -> usize {
        match self.regime {
            Regime::RobustNearLinear | Regime::RobustSubLinear => self.p1.unwrap_or(2 * self.n),
            Regime::Noiseless | Regime::Coded => 0,
        }
    }

    pub fn plan_config(&self) -> PlanConfig {
        PlanConfig {
            q: self.q,
            n: self.n,
            b: self.resolved_b(),
            groups: self.c_groups,
            regime: self.regime,
            p1: self.resolved_p1(),
            degree_bound: self.degree_bound,
            seed: self.seed,
        }
    }

    pub fn noise(&self) -> NoiseLevel {
        match (self.sigma2, self.snr_db) {
            (Some(s), _) => NoiseLevel::Sigma2(s),
            (None, Some(db)) => NoiseLevel::SnrDb(db),
            (None, None) => NoiseLevel::Sigma2(0.0),
        }
    }

    pub fn synthetic_spec(&self) -> SyntheticSpec {
        let mut spec = SyntheticSpec::seeded(self.q, self.n, self.sparsity, self.values, self.noise(), self.seed);
        spec.caching = self.caching;
        spec
    }
}

/// Where function values come from.
#[derive(Clone, Debug, PartialEq)]
pub enum OracleBinding {
    Synthetic,
    Table(PathBuf),
    Command(String),
}

impl FromStr for OracleBinding {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "synthetic" {
            Ok(Self::Synthetic)
        } else if let Some(path) = s.strip_prefix("table:") {
            Ok(Self::Table(PathBuf::from(path)))
        } else if let Some(cmd) = s.strip_prefix("cmd:") {
            Ok(Self::Command(cmd.to_string()))
        } else {
            usage(format!("unknown oracle \"{s}\" (expected synthetic, table:PATH or cmd:TEMPLATE)"))
        }
    }
}

/// Diagnostics of one run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunReport {
    pub regime: Regime,
    pub q: u32,
    pub n: usize,
    pub b: usize,
    pub c_groups: usize,
    pub offsets_per_group: usize,
    pub sigma2: f64,
    pub samples_raw: u64,
    pub samples_unique: u64,
    pub iterations: usize,
    pub peels: usize,
    pub converged: bool,
    pub hit_iteration_cap: bool,
    pub initial_counts: BinCounts,
    pub final_counts: BinCounts,
    pub residual_energy: f64,
    pub nmse: Option<f64>,
    pub exact: Option<bool>,
    pub wall_time_s: f64,
    pub warnings: Vec<String>,
}

pub struct RunOutput {
    pub result: DecodeResult,
    pub truth: Option<SparseSpectrum>,
    pub report: RunReport,
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Use this plan instead of generating one from the config.
    pub plan: Option<SamplingPlan>,
    /// Reference spectrum for NMSE when the oracle is not synthetic.
    pub truth: Option<SparseSpectrum>,
    pub record_events: bool,
}

/// Builds the plan, binds the oracle and runs the decoder.
pub fn run_transform(cfg: &ExperimentConfig, binding: &OracleBinding, options: RunOptions) -> Result<RunOutput> {
    cfg.validate()?;
    let plan = match options.plan {
        Some(plan) => {
            if plan.q() != cfg.q || plan.n() != cfg.n || plan.regime() != cfg.regime {
                return usage("supplied plan does not match the configured q, n and regime");
            }
            plan.validate()?;
            plan
        }
        None => SamplingPlan::generate(&cfg.plan_config())?,
    };

    let mut warnings: Vec<String> = plan.coded().map(|c| c.warnings().to_vec()).unwrap_or_default();
    let mut truth = options.truth;
    let mut detector = DetectorConfig { gamma: cfg.gamma, ..DetectorConfig::new(cfg.regime) };
    let oracle: Box<dyn FunctionOracle> = match binding {
        OracleBinding::Synthetic => {
            let (t, oracle) = synthesize(&cfg.synthetic_spec())?;
            detector.sigma2 = oracle.sigma2();
            detector.constellation = cfg.values.constellation();
            truth = Some(t);
            Box::new(oracle)
        }
        external => {
            if cfg.snr_db.is_some() {
                return usage("snr_db needs a synthetic oracle; give sigma2 for external oracles");
            }
            detector.sigma2 = cfg.sigma2.unwrap_or(0.0);
            match external {
                OracleBinding::Table(path) => Box::new(TableOracle::open(path)?),
                OracleBinding::Command(template) => Box::new(SubprocessOracle::new(cfg.q, cfg.n, template)?),
                OracleBinding::Synthetic => unreachable!(),
            }
        }
    };
    if let (Some(t), true) = (&truth, detector.sigma2 > 0.0 && cfg.regime.is_robust()) {
        let snr = t.energy() / detector.sigma2;
        let eta = plan.bins() as f64 / cfg.sparsity.max(1) as f64;
        warnings.extend(detector.gamma_warning(snr, eta));
    }

    let decode_options = DecodeOptions {
        sparsity_hint: Some(cfg.sparsity),
        max_iterations: None,
        record_events: options.record_events,
    };
    let start = Instant::now();
    let result = decode(oracle.as_ref(), &plan, &detector, &decode_options)?;
    let wall_time_s = start.elapsed().as_secs_f64();

    let (nmse_value, exact) = match &truth {
        Some(t) if !t.is_empty() => (Some(nmse(&result.spectrum, t)?), Some(result.spectrum.matches(t, EXACT_TOLERANCE))),
        Some(t) => (None, Some(result.spectrum.matches(t, EXACT_TOLERANCE))),
        None => (None, None),
    };
    let report = RunReport {
        regime: cfg.regime,
        q: cfg.q,
        n: cfg.n,
        b: plan.b(),
        c_groups: plan.groups().len(),
        offsets_per_group: plan.group(0).offsets.len(),
        sigma2: detector.sigma2,
        samples_raw: result.samples_raw,
        samples_unique: result.samples_unique,
        iterations: result.iterations,
        peels: result.peels,
        converged: result.converged,
        hit_iteration_cap: result.hit_iteration_cap,
        initial_counts: result.initial_counts,
        final_counts: result.final_counts,
        residual_energy: result.residual_energy,
        nmse: nmse_value,
        exact,
        wall_time_s,
        warnings,
    };
    Ok(RunOutput { result, truth, report })
}

/// A grid of cells, each run for `trials` seeds `seed_base + trial`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub cells: Vec<ExperimentConfig>,
    pub trials: usize,
    #[serde(default)]
    pub seed_base: u64,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default = "default_success_nmse")]
    pub success_nmse: f64,
    /// Run the trials of a cell concurrently. Turn off for timing studies.
    #[serde(default = "default_parallel")]
    pub parallel: bool,
}

fn default_success_nmse() -> f64 {
    DEFAULT_SUCCESS_NMSE
}

fn default_parallel() -> bool {
    true
}

/// One CSV row per (cell, trial).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub cell: usize,
    pub trial: usize,
    pub seed: u64,
    pub q: u32,
    pub n: usize,
    pub sparsity: usize,
    pub b: usize,
    pub c_groups: usize,
    pub p1: usize,
    pub regime: Regime,
    pub snr_db: Option<f64>,
    pub sigma2: f64,
    pub samples_raw: u64,
    pub samples_unique: u64,
    pub iterations: usize,
    pub peels: usize,
    pub wall_time_s: f64,
    pub nmse: Option<f64>,
    pub exact: bool,
    pub converged: bool,
}

impl TrialRow {
    fn same_cell(&self, cell: &ExperimentConfig) -> bool {
        self.q == cell.q
            && self.n == cell.n
            && self.sparsity == cell.sparsity
            && self.b == cell.resolved_b()
            && self.c_groups == cell.c_groups
            && self.p1 == cell.resolved_p1()
            && self.regime == cell.regime
            && self.snr_db == cell.snr_db
    }
}

/// Per-cell aggregates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub cell: usize,
    pub q: u32,
    pub n: usize,
    pub sparsity: usize,
    pub b: usize,
    pub c_groups: usize,
    pub p1: usize,
    pub regime: Regime,
    pub snr_db: Option<f64>,
    pub trials: usize,
    pub mean_nmse: Option<f64>,
    pub success_rate: f64,
    pub exact_rate: f64,
    pub converged_rate: f64,
    pub mean_samples_raw: f64,
    pub mean_wall_time_s: f64,
}

#[derive(Clone, Debug)]
pub struct SweepOutcome {
    pub rows: Vec<TrialRow>,
    pub summary: Vec<SummaryRow>,
}

/// Runs one synthetic trial of `cell` with `seed`.
pub fn run_trial(cell: &ExperimentConfig, cell_index: usize, trial: usize, seed: u64) -> Result<TrialRow> {
    let cfg = ExperimentConfig { seed, ..cell.clone() };
    let out = run_transform(&cfg, &OracleBinding::Synthetic, RunOptions::default())?;
    Ok(TrialRow {
        cell: cell_index,
        trial,
        seed,
        q: cfg.q,
        n: cfg.n,
        sparsity: cfg.sparsity,
        b: out.report.b,
        c_groups: out.report.c_groups,
        p1: cfg.resolved_p1(),
        regime: cfg.regime,
        snr_db: cfg.snr_db,
        sigma2: out.report.sigma2,
        samples_raw: out.report.samples_raw,
        samples_unique: out.report.samples_unique,
        iterations: out.report.iterations,
        peels: out.report.peels,
        wall_time_s: out.report.wall_time_s,
        nmse: out.report.nmse,
        exact: out.report.exact.unwrap_or(false),
        converged: out.report.converged,
    })
}

/// Companion path of the aggregate CSV: `runs.csv` becomes `runs.summary.csv`.
pub fn summary_path(rows_path: &Path) -> PathBuf {
    rows_path.with_extension("summary.csv")
}

fn read_rows(path: &Path) -> Result<Vec<TrialRow>> {
    if !path.exists() || std::fs::metadata(path)?.len() == 0 {
        return Ok(Vec::new());
    }
    let mut reader = csv::Reader::from_path(path)?;
    reader.deserialize().map(|r| r.map_err(Error::from)).collect()
}

/// Runs every pending (cell, trial). With `output` set, rows are appended
/// to that CSV as each cell finishes, rows already present are kept and
/// not re-run, and the summary CSV is rewritten at the end.
pub fn run_sweep(spec: &SweepSpec) -> Result<SweepOutcome> {
    if spec.cells.is_empty() || spec.trials == 0 {
        return usage("a sweep needs at least one cell and one trial");
    }
    for (i, cell) in spec.cells.iter().enumerate() {
        cell.validate().map_err(|e| Error::Usage(format!("cell {i}: {e}")))?;
    }

    let mut done: HashMap<(usize, usize, u64), TrialRow> = HashMap::new();
    if let Some(path) = &spec.output {
        for row in read_rows(path)? {
            let Some(cell) = spec.cells.get(row.cell) else {
                return usage(format!("{} holds rows for cell {} which this sweep lacks", path.display(), row.cell));
            };
            if !row.same_cell(cell) {
                return usage(format!(
                    "{} holds rows for a different cell {}; use a fresh output file",
                    path.display(),
                    row.cell
                ));
            }
            done.insert((row.cell, row.trial, row.seed), row);
        }
    }
    let mut sink = match &spec.output {
        Some(path) => {
            let fresh = done.is_empty();
            let file = if fresh { File::create(path)? } else { OpenOptions::new().append(true).open(path)? };
            Some(csv::WriterBuilder::new().has_headers(fresh).from_writer(file))
        }
        None => None,
    };

    for (c, cell) in spec.cells.iter().enumerate() {
        let pending: Vec<(usize, u64)> = (0..spec.trials)
            .map(|t| (t, spec.seed_base.wrapping_add(t as u64)))
            .filter(|&(t, seed)| !done.contains_key(&(c, t, seed)))
            .collect();
        let run = |&(t, seed): &(usize, u64)| run_trial(cell, c, t, seed);
        let fresh: Vec<TrialRow> = if spec.parallel {
            pending.par_iter().map(run).collect::<Result<_>>()?
        } else {
            pending.iter().map(run).collect::<Result<_>>()?
        };
        for row in fresh {
            if let Some(w) = sink.as_mut() {
                w.serialize(&row)?;
            }
            done.insert((row.cell, row.trial, row.seed), row);
        }
        if let Some(w) = sink.as_mut() {
            w.flush()?;
        }
    }

    let mut rows: Vec<TrialRow> = done.into_values().collect();
    rows.sort_by_key(|r| (r.cell, r.trial));
    let summary = summarize(&spec.cells, &rows, spec.success_nmse);
    if let Some(path) = &spec.output {
        write_summary(&summary, File::create(summary_path(path))?)?;
    }
    Ok(SweepOutcome { rows, summary })
}

pub fn write_summary<W: std::io::Write>(rows: &[SummaryRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn summarize(cells: &[ExperimentConfig], rows: &[TrialRow], success_nmse: f64) -> Vec<SummaryRow> {
    cells
        .iter()
        .enumerate()
        .map(|(c, cell)| {
            let mine: Vec<&TrialRow> = rows.iter().filter(|r| r.cell == c).collect();
            let count = mine.len();
            let denom = count.max(1) as f64;
            let rate = |f: &dyn Fn(&TrialRow) -> bool| mine.iter().filter(|r| f(r)).count() as f64 / denom;
            let nmses: Vec<f64> = mine.iter().filter_map(|r| r.nmse).collect();
            SummaryRow {
                cell: c,
                q: cell.q,
                n: cell.n,
                sparsity: cell.sparsity,
                b: cell.resolved_b(),
                c_groups: cell.c_groups,
                p1: cell.resolved_p1(),
                regime: cell.regime,
                snr_db: cell.snr_db,
                trials: count,
                mean_nmse: (!nmses.is_empty()).then(|| nmses.iter().sum::<f64>() / nmses.len() as f64),
                success_rate: rate(&|r| r.nmse.is_some_and(|e| e < success_nmse)),
                exact_rate: rate(&|r| r.exact),
                converged_rate: rate(&|r| r.converged),
                mean_samples_raw: mine.iter().map(|r| r.samples_raw as f64).sum::<f64>() / denom,
                mean_wall_time_s: mine.iter().map(|r| r.wall_time_s).sum::<f64>() / denom,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn noiseless_cell() -> ExperimentConfig {
        ExperimentConfig {
            q: 3,
            n: 5,
            sparsity: 4,
            values: ValueModel::General { rho_min: 1.0, rho_max: 2.0 },
            ..Default::default()
        }
    }

    #[test]
    fn config_json_fills_defaults() {
        let cfg: ExperimentConfig = serde_json::from_str(r#"{"q": 4, "n": 8, "regime": "robust-sl", "snr_db": 10}"#).unwrap();
        assert_eq!(cfg.q, 4);
        assert_eq!(cfg.regime, Regime::RobustSubLinear);
        assert_eq!(cfg.resolved_p1(), 16);
        assert_eq!(cfg.c_groups, DEFAULT_GROUPS);
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"qq": 4}"#).is_err());
    }

    #[test]
    fn conflicting_noise_settings_rejected() {
        let cfg = ExperimentConfig { snr_db: Some(10.0), sigma2: Some(0.1), ..Default::default() };
        assert!(matches!(cfg.validate(), Err(Error::Usage(_))));
    }

    #[test]
    fn oracle_binding_parses() {
        assert_eq!("synthetic".parse::<OracleBinding>().unwrap(), OracleBinding::Synthetic);
        assert_eq!("table:/tmp/x".parse::<OracleBinding>().unwrap(), OracleBinding::Table("/tmp/x".into()));
        assert_eq!("cmd:echo 0".parse::<OracleBinding>().unwrap(), OracleBinding::Command("echo 0".into()));
        assert!("http://x".parse::<OracleBinding>().is_err());
    }

    #[test]
    fn noiseless_run_reports_zero_nmse() {
        let cfg = ExperimentConfig { seed: 3, ..noiseless_cell() };
        let out = run_transform(&cfg, &OracleBinding::Synthetic, RunOptions::default()).unwrap();
        if out.report.final_counts.multi_tons == 0 {
            assert_eq!(out.report.exact, Some(true));
            assert!(out.report.nmse.unwrap() < 1e-20);
        }
        assert_eq!(out.report.samples_raw, 3 * 6 * 9);
    }

    #[test]
    fn degenerate_sweep_equals_single_run() {
        let cell = noiseless_cell();
        let spec = SweepSpec { cells: vec![cell.clone()], trials: 1, seed_base: 7, output: None, success_nmse: 0.1, parallel: true };
        let out = run_sweep(&spec).unwrap();
        let single = run_transform(&ExperimentConfig { seed: 7, ..cell }, &OracleBinding::Synthetic, RunOptions::default()).unwrap();
        let row = &out.rows[0];
        assert_eq!(row.nmse, single.report.nmse);
        assert_eq!(row.samples_raw, single.report.samples_raw);
        assert_eq!(row.converged, single.report.converged);
        assert_eq!(out.summary[0].trials, 1);
    }

    #[test]
    fn sweep_resumes_without_rerunning() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("runs.csv");
        let mut spec = SweepSpec {
            cells: vec![noiseless_cell()],
            trials: 3,
            seed_base: 100,
            output: Some(path.clone()),
            success_nmse: 0.1,
            parallel: false,
        };
        run_sweep(&spec).unwrap();
        let first = std::fs::read_to_string(&path).unwrap();
        assert_eq!(first.lines().count(), 4);

        spec.trials = 5;
        let out = run_sweep(&spec).unwrap();
        let second = std::fs::read_to_string(&path).unwrap();
        assert!(second.starts_with(&first));
        assert_eq!(second.lines().count(), 6);
        assert_eq!(out.rows.len(), 5);
        assert!(summary_path(&path).exists());

        // a different cell cannot reuse the file
        spec.cells[0].sparsity = 5;
        assert!(matches!(run_sweep(&spec), Err(Error::Usage(_))));
    }

    #[test]
    fn sweep_rows_are_reproducible() {
        let cell = ExperimentConfig { regime: Regime::RobustSubLinear, snr_db: Some(10.0), p1: Some(4), ..noiseless_cell() };
        let spec = SweepSpec { cells: vec![cell], trials: 3, seed_base: 1, output: None, success_nmse: 0.1, parallel: true };
        let strip = |rows: Vec<TrialRow>| rows.into_iter().map(|r| TrialRow { wall_time_s: 0.0, ..r }).collect::<Vec<_>>();
        assert_eq!(strip(run_sweep(&spec).unwrap().rows), strip(run_sweep(&spec).unwrap().rows));
    }
}
