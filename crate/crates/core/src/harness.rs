//! Scenario generation, experiment dispatch, sweeps and training runs.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fl_sim::{
    self, estimate_curvature, partition, read_csv, run_dane, synthetic_linear, DaneConfig,
    LocalSolver, LocalStop, LossModel, PartitionMode, TrainingTrace, UserDataset,
};
use crate::model::{FlParams, NetworkScenario, UserParams};
use crate::report::SolveReport;
use crate::schemes::{self, SchemeKind, SchemeOptions};
use crate::units::{db_to_linear, dbm_to_watts};

/// Parameters of a random cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(rename = "K")]
    pub num_users: usize,
    /// Side of the square cell, m.
    pub cell_side: f64,
    /// `(intercept, slope)` of the path loss in dB, distance in km.
    pub pathloss: (f64, f64),
    /// Shadow fading standard deviation, dB.
    pub shadowing_sigma: f64,
    /// Noise power spectral density, dBm/Hz.
    #[serde(rename = "N0")]
    pub noise_psd_dbm: f64,
    /// Total bandwidth, Hz.
    #[serde(rename = "B")]
    pub bandwidth: f64,
    /// Upload size, bits.
    #[serde(rename = "s")]
    pub upload_bits: f64,
    pub kappa: f64,
    /// Cycles per sample are drawn uniformly from this interval.
    #[serde(rename = "C_range")]
    pub cycles_range: (f64, f64),
    #[serde(rename = "D_k")]
    pub samples: usize,
    /// Maximum transmit power, dBm.
    pub p_max: f64,
    /// Maximum CPU frequency, Hz.
    pub f_max: f64,
    /// Users closer than this to the base station are placed at this distance, m.
    pub min_distance: f64,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            num_users: 50,
            cell_side: 500.0,
            pathloss: (128.1, 37.6),
            shadowing_sigma: 8.0,
            noise_psd_dbm: -174.0,
            bandwidth: 20e6,
            upload_bits: 28.1e3,
            kappa: 1e-28,
            cycles_range: (1e4, 3e4),
            samples: 500,
            p_max: 10.0,
            f_max: 2e9,
            min_distance: 10.0,
            seed: 0,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = |x: f64| x > 0.0 && x.is_finite();
        if self.num_users == 0 || self.samples == 0 {
            return Err(Error::Config("K and D_k must be at least 1".into()));
        }
        if !(pos(self.cell_side)
            && pos(self.bandwidth)
            && pos(self.upload_bits)
            && pos(self.kappa)
            && pos(self.f_max)
            && pos(self.cycles_range.0)
            && self.cycles_range.1 >= self.cycles_range.0
            && self.shadowing_sigma >= 0.0
            && self.min_distance >= 0.0
            && self.p_max.is_finite()
            && self.noise_psd_dbm.is_finite()
            && self.pathloss.0.is_finite()
            && self.pathloss.1.is_finite())
        {
            return Err(Error::Config(format!("invalid scenario configuration: {self:?}")));
        }
        Ok(())
    }
}

/// Linear channel gain at distance `distance_m` with shadowing `shadow_db`.
pub fn channel_gain(pathloss: (f64, f64), distance_m: f64, shadow_db: f64) -> f64 {
    let loss_db = pathloss.0 + pathloss.1 * (distance_m / 1e3).log10();
    db_to_linear(-(loss_db + shadow_db))
}

/// Draws a cell: users uniform in the square around the base station.
pub fn gen_scenario(config: &ScenarioConfig) -> Result<NetworkScenario> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let shadow = Normal::new(0.0, config.shadowing_sigma)
        .map_err(|e| Error::Config(format!("shadowing: {e}")))?;
    let half = 0.5 * config.cell_side;
    let (c_lo, c_hi) = config.cycles_range;
    let users = (0..config.num_users)
        .map(|_| {
            let x = rng.random_range(-half..=half);
            let y = rng.random_range(-half..=half);
            let d = x.hypot(y).max(config.min_distance);
            let g = channel_gain(config.pathloss, d, shadow.sample(&mut rng));
            let c = if c_hi > c_lo {
                rng.random_range(c_lo..c_hi)
            } else {
                c_lo
            };
            UserParams {
                channel_gain: g,
                cycles_per_sample: c,
                samples: config.samples,
                f_max: config.f_max,
                p_max: dbm_to_watts(config.p_max),
            }
        })
        .collect();
    let scenario = NetworkScenario {
        users,
        total_bandwidth: config.bandwidth,
        noise_psd: dbm_to_watts(config.noise_psd_dbm),
        upload_bits: config.upload_bits,
        kappa: config.kappa,
    };
    scenario.validate()?;
    Ok(scenario)
}

/// Synthetic linear-regression task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticTask {
    pub users: usize,
    pub samples_per_user: usize,
    pub dim: usize,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticTask {
    fn default() -> Self {
        SyntheticTask {
            users: 10,
            samples_per_user: 500,
            dim: 5,
            noise: 0.5,
            seed: 1,
        }
    }
}

impl SyntheticTask {
    pub fn pool(&self) -> Vec<fl_sim::Sample> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        synthetic_linear(self.users * self.samples_per_user, self.dim, self.noise, &mut rng)
    }

    pub fn datasets(&self, mode: PartitionMode) -> Result<Vec<UserDataset>> {
        partition(self.pool(), self.users, mode, self.seed)
    }
}

/// Learning constants for the solver experiments. The curvature constants
/// are measured on `task` unless given explicitly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlConfig {
    pub xi: f64,
    pub step_size: f64,
    pub global_accuracy: f64,
    pub lipschitz: Option<f64>,
    pub strong_convexity: Option<f64>,
    pub local_accuracy_bounds: (f64, f64),
    pub task: SyntheticTask,
}

impl Default for FlConfig {
    fn default() -> Self {
        FlConfig {
            xi: 0.1,
            step_size: 0.1,
            global_accuracy: 1e-3,
            lipschitz: None,
            strong_convexity: None,
            local_accuracy_bounds: (1e-6, 1.0 - 1e-6),
            task: SyntheticTask::default(),
        }
    }
}

impl FlConfig {
    pub fn fl_params(&self) -> Result<FlParams> {
        let (lipschitz, strong_convexity) = match (self.lipschitz, self.strong_convexity) {
            (Some(l), Some(g)) => (l, g),
            (l, g) => {
                let data = self.task.datasets(PartitionMode::Iid)?;
                let c = estimate_curvature(&data, &LossModel::linear())?;
                (l.unwrap_or(c.lipschitz), g.unwrap_or(c.strong_convexity))
            }
        };
        let fl = FlParams {
            lipschitz,
            strong_convexity,
            xi: self.xi,
            step_size: self.step_size,
            global_accuracy: self.global_accuracy,
            local_accuracy_bounds: self.local_accuracy_bounds,
        };
        fl.validate()?;
        Ok(fl)
    }
}

/// Swept quantity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepVariable {
    /// Maximum transmit power, dBm.
    PMax,
    /// Completion-time budget, s.
    #[serde(rename = "T")]
    Deadline,
    /// Samples processed per local iteration.
    BatchSize,
    #[serde(rename = "K")]
    NumUsers,
}

impl SweepVariable {
    pub fn name(&self) -> &'static str {
        match self {
            SweepVariable::PMax => "p_max",
            SweepVariable::Deadline => "T",
            SweepVariable::BatchSize => "batch_size",
            SweepVariable::NumUsers => "K",
        }
    }
}

fn default_schemes() -> Vec<SchemeKind> {
    vec![SchemeKind::Proposed]
}

/// Monte Carlo sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub variable: SweepVariable,
    pub values: Vec<f64>,
    #[serde(default = "SweepSpec::default_runs")]
    pub runs: usize,
    #[serde(default = "default_schemes", with = "scheme_names")]
    pub schemes: Vec<SchemeKind>,
    /// Directory the CSV and JSON files are written to.
    #[serde(default = "SweepSpec::default_outputs")]
    pub outputs: PathBuf,
    /// Budget for the energy solves when the deadline is not the swept
    /// variable; without it only completion times are computed.
    #[serde(default)]
    pub deadline: Option<f64>,
}

impl SweepSpec {
    fn default_runs() -> usize {
        50
    }

    fn default_outputs() -> PathBuf {
        PathBuf::from("out")
    }

    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            return Err(Error::Config("a sweep needs at least one run".into()));
        }
        if self.values.is_empty() {
            return Err(Error::Config("a sweep needs at least one value".into()));
        }
        if self.schemes.is_empty() {
            return Err(Error::Config("a sweep needs at least one scheme".into()));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("sweep values must be finite".into()));
        }
        Ok(())
    }
}

/// Schemes serialized by their command-line names.
mod scheme_names {
    use serde::{de::Error as _, Deserialize, Deserializer, Serializer};

    use crate::schemes::SchemeKind;

    pub fn serialize<S: Serializer>(v: &[SchemeKind], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter().map(|k| k.to_string()))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<SchemeKind>, D::Error> {
        Vec::<String>::deserialize(d)?
            .iter()
            .map(|s| s.parse().map_err(D::Error::custom))
            .collect()
    }
}

/// Parses a comma-separated scheme list such as `proposed,tdma,rs:25`.
pub fn parse_schemes(list: &str) -> Result<Vec<SchemeKind>> {
    list.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(str::parse)
        .collect()
}

/// Federated training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSpec {
    /// CSV file with features then target per row; synthetic data when absent.
    pub dataset: Option<PathBuf>,
    pub normalize: bool,
    /// Number of users the data is split among.
    pub users: usize,
    pub partition: PartitionMode,
    pub synthetic: SyntheticTask,
    pub local_stop: LocalStop,
    /// Mini-batch sizes to compare; 0 is full-batch gradient descent.
    pub batch_sizes: Vec<usize>,
    pub max_rounds: usize,
    pub halve_xi_on_stall: bool,
}

impl Default for TrainingSpec {
    fn default() -> Self {
        TrainingSpec {
            dataset: None,
            normalize: true,
            users: 10,
            partition: PartitionMode::Iid,
            synthetic: SyntheticTask::default(),
            local_stop: LocalStop::AccuracyTarget(0.1),
            batch_sizes: vec![0],
            max_rounds: 1000,
            halve_xi_on_stall: false,
        }
    }
}

/// Everything a configuration file may set.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub scenario: ScenarioConfig,
    pub fl: FlConfig,
    pub sweep: Option<SweepSpec>,
    pub training: TrainingSpec,
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::from(e).context(format!("reading {}", path.display())))?;
        toml::from_str(&text).map_err(|e| Error::from(e).context(format!("parsing {}", path.display())))
    }
}

/// Solves `scheme` at deadline `deadline`, filling in the scheme's minimum
/// completion time when the solver did not.
pub fn run_experiment(
    scenario: &NetworkScenario,
    fl: &FlParams,
    scheme: SchemeKind,
    deadline: f64,
    opts: &SchemeOptions,
) -> Result<SolveReport> {
    let context = || format!("scheme {scheme} at T = {deadline:.6e} s");
    let (_, mut report) = schemes::solve_scheme(scheme, scenario, fl, deadline, opts)
        .map_err(|e| e.context(context()))?;
    if report.completion_time_min.is_none() {
        report.completion_time_min = Some(
            schemes::completion_time(scheme, scenario, fl, opts).map_err(|e| e.context(context()))?,
        );
    }
    Ok(report)
}

/// One `(value, run, scheme)` cell of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub value: f64,
    pub run: usize,
    pub seed: u64,
    pub scheme: String,
    pub completion_time: Option<f64>,
    pub deadline: Option<f64>,
    pub total_energy: Option<f64>,
    pub comp_energy: Option<f64>,
    pub tx_energy: Option<f64>,
    pub local_accuracy: Option<f64>,
    pub iterations: Option<usize>,
    pub error: Option<String>,
    #[serde(skip)]
    pub report: Option<SolveReport>,
}

/// Means over the successful runs of one `(value, scheme)` pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepAggregate {
    pub value: f64,
    pub scheme: String,
    pub runs: usize,
    pub completion_time_ok: usize,
    pub mean_completion_time: Option<f64>,
    pub energy_ok: usize,
    pub mean_total_energy: Option<f64>,
}

/// Output of [`run_sweep`].
#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub records: Vec<SweepRecord>,
    pub aggregates: Vec<SweepAggregate>,
}

/// File names written by [`write_sweep`].
pub const SWEEP_CSV: &str = "sweep.csv";
pub const SWEEP_AGGREGATE_CSV: &str = "sweep_aggregate.csv";
pub const SWEEP_SUMMARY_JSON: &str = "sweep_summary.json";

fn cell_config(base: &ScenarioConfig, variable: SweepVariable, value: f64, run: usize) -> ScenarioConfig {
    let mut c = base.clone();
    c.seed = base.seed.wrapping_add(run as u64);
    match variable {
        SweepVariable::PMax => c.p_max = value,
        SweepVariable::NumUsers => c.num_users = value.round() as usize,
        SweepVariable::BatchSize | SweepVariable::Deadline => {}
    }
    c
}

/// With mini-batches, a local iteration touches `batch` samples instead of
/// the whole local dataset.
fn apply_batch(scenario: &mut NetworkScenario, batch: f64) {
    let b = batch.round().max(1.0) as usize;
    for u in &mut scenario.users {
        u.samples = u.samples.min(b);
    }
}

fn run_cell(
    scenario: &NetworkScenario,
    fl: &FlParams,
    scheme: SchemeKind,
    deadline: Option<f64>,
    seed: u64,
    opts: &SchemeOptions,
) -> (Option<f64>, Option<SolveReport>, Option<String>) {
    let scheme = match scheme {
        SchemeKind::Rs { selected_count, .. } => SchemeKind::Rs {
            selected_count,
            seed,
        },
        other => other,
    };
    let t_star = match schemes::completion_time(scheme, scenario, fl, opts) {
        Ok(t) => t,
        Err(e) => return (None, None, Some(e.to_string())),
    };
    let Some(deadline) = deadline else {
        return (Some(t_star), None, None);
    };
    match run_experiment(scenario, fl, scheme, deadline, opts) {
        Ok(report) if report.violations.is_empty() => (Some(t_star), Some(report), None),
        Ok(report) => {
            let names: Vec<String> = report.violations.iter().map(|c| c.to_string()).collect();
            (
                Some(t_star),
                None,
                Some(format!("allocation violates {}", names.join("+"))),
            )
        }
        Err(e) => (Some(t_star), None, Some(e.to_string())),
    }
}

/// Runs every `(value, run, scheme)` cell; cells run in parallel and come
/// back ordered by value, then run, then scheme.
pub fn run_sweep(
    spec: &SweepSpec,
    base: &ScenarioConfig,
    fl: &FlParams,
    opts: &SchemeOptions,
) -> Result<SweepResult> {
    spec.validate()?;
    base.validate()?;
    let cells: Vec<(usize, usize)> = (0..spec.values.len())
        .flat_map(|v| (0..spec.runs).map(move |r| (v, r)))
        .collect();
    let records: Vec<Vec<SweepRecord>> = cells
        .par_iter()
        .map(|&(vi, run)| {
            let value = spec.values[vi];
            let config = cell_config(base, spec.variable, value, run);
            let deadline = match spec.variable {
                SweepVariable::Deadline => Some(value),
                _ => spec.deadline,
            };
            let blank = |scheme: &SchemeKind| SweepRecord {
                value,
                run,
                seed: config.seed,
                scheme: scheme.to_string(),
                completion_time: None,
                deadline,
                total_energy: None,
                comp_energy: None,
                tx_energy: None,
                local_accuracy: None,
                iterations: None,
                error: None,
                report: None,
            };
            let scenario = gen_scenario(&config).map(|mut s| {
                if spec.variable == SweepVariable::BatchSize {
                    apply_batch(&mut s, value);
                }
                s
            });
            let scenario = match scenario {
                Ok(s) => s,
                Err(e) => {
                    return spec
                        .schemes
                        .iter()
                        .map(|k| SweepRecord {
                            error: Some(e.to_string()),
                            ..blank(k)
                        })
                        .collect()
                }
            };
            spec.schemes
                .iter()
                .map(|k| {
                    let (t_star, report, error) =
                        run_cell(&scenario, fl, *k, deadline, config.seed, opts);
                    let bd = report.as_ref().and_then(|r| r.breakdown.as_ref());
                    SweepRecord {
                        completion_time: t_star,
                        total_energy: bd.map(|b| b.total_energy),
                        comp_energy: bd.map(|b| b.comp_energy.iter().sum()),
                        tx_energy: bd.map(|b| b.tx_energy.iter().sum()),
                        local_accuracy: report
                            .as_ref()
                            .and_then(|r| r.allocation.as_ref())
                            .map(|a| a.local_accuracy),
                        iterations: report.as_ref().map(|r| r.iterations),
                        error,
                        report,
                        ..blank(k)
                    }
                })
                .collect()
        })
        .collect();
    let records: Vec<SweepRecord> = records.into_iter().flatten().collect();
    if records.iter().all(|r| r.error.is_some()) {
        return Err(Error::Config(format!(
            "every sweep run failed; first error: {}",
            records[0].error.as_deref().unwrap_or("")
        )));
    }
    let aggregates = aggregate(spec, &records);
    Ok(SweepResult {
        records,
        aggregates,
    })
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

fn aggregate(spec: &SweepSpec, records: &[SweepRecord]) -> Vec<SweepAggregate> {
    let mut out = Vec::new();
    for &value in &spec.values {
        for scheme in &spec.schemes {
            let name = scheme.to_string();
            let rows: Vec<&SweepRecord> = records
                .iter()
                .filter(|r| r.value == value && r.scheme == name)
                .collect();
            let times: Vec<f64> = rows.iter().filter_map(|r| r.completion_time).collect();
            let energies: Vec<f64> = rows.iter().filter_map(|r| r.total_energy).collect();
            out.push(SweepAggregate {
                value,
                scheme: name,
                runs: rows.len(),
                completion_time_ok: times.len(),
                mean_completion_time: mean(&times),
                energy_ok: energies.len(),
                mean_total_energy: mean(&energies),
            });
        }
    }
    out
}

/// Float formatting used in every CSV file: 17 significant digits.
pub fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

fn opt_float(x: Option<f64>) -> String {
    x.map(fmt_float).unwrap_or_default()
}

/// Long-form sweep table, one row per `(value, run, scheme)`.
pub fn sweep_csv(variable: SweepVariable, records: &[SweepRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        variable.name(),
        "run",
        "seed",
        "scheme",
        "completion_time",
        "deadline",
        "total_energy",
        "comp_energy",
        "tx_energy",
        "local_accuracy",
        "iterations",
        "error",
    ])?;
    for r in records {
        w.write_record([
            fmt_float(r.value),
            r.run.to_string(),
            r.seed.to_string(),
            r.scheme.clone(),
            opt_float(r.completion_time),
            opt_float(r.deadline),
            opt_float(r.total_energy),
            opt_float(r.comp_energy),
            opt_float(r.tx_energy),
            opt_float(r.local_accuracy),
            r.iterations.map(|i| i.to_string()).unwrap_or_default(),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    into_string(w)
}

/// Per-`(value, scheme)` means.
pub fn aggregate_csv(variable: SweepVariable, rows: &[SweepAggregate]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        variable.name(),
        "scheme",
        "runs",
        "completion_time_ok",
        "mean_completion_time",
        "energy_ok",
        "mean_total_energy",
    ])?;
    for a in rows {
        w.write_record([
            fmt_float(a.value),
            a.scheme.clone(),
            a.runs.to_string(),
            a.completion_time_ok.to_string(),
            opt_float(a.mean_completion_time),
            a.energy_ok.to_string(),
            opt_float(a.mean_total_energy),
        ])?;
    }
    into_string(w)
}

fn into_string(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    String::from_utf8(bytes).map_err(|e| Error::Io(std::io::Error::other(e)))
}

#[derive(Serialize)]
struct SchemeSummary<'a> {
    scheme: &'a str,
    mean_completion_time: Option<f64>,
    mean_total_energy: Option<f64>,
    representative: Option<&'a SolveReport>,
}

/// JSON summary: per-scheme means over all values and runs, plus the first
/// successful report of each scheme.
pub fn summary_json(spec: &SweepSpec, records: &[SweepRecord]) -> Result<String> {
    let names: Vec<String> = spec.schemes.iter().map(|k| k.to_string()).collect();
    let summaries: Vec<SchemeSummary> = names
        .iter()
        .map(|name| {
            let rows: Vec<&SweepRecord> = records.iter().filter(|r| &r.scheme == name).collect();
            let times: Vec<f64> = rows.iter().filter_map(|r| r.completion_time).collect();
            let energies: Vec<f64> = rows.iter().filter_map(|r| r.total_energy).collect();
            SchemeSummary {
                scheme: name,
                mean_completion_time: mean(&times),
                mean_total_energy: mean(&energies),
                representative: rows.iter().find_map(|r| r.report.as_ref()),
            }
        })
        .collect();
    #[derive(Serialize)]
    struct Summary<'a> {
        spec: &'a SweepSpec,
        schemes: Vec<SchemeSummary<'a>>,
    }
    Ok(serde_json::to_string_pretty(&Summary {
        spec,
        schemes: summaries,
    })?)
}

/// Writes the long-form CSV, the aggregate CSV and the JSON summary into `dir`.
pub fn write_sweep(dir: &Path, spec: &SweepSpec, result: &SweepResult) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(SWEEP_CSV), sweep_csv(spec.variable, &result.records)?)?;
    fs::write(
        dir.join(SWEEP_AGGREGATE_CSV),
        aggregate_csv(spec.variable, &result.aggregates)?,
    )?;
    fs::write(dir.join(SWEEP_SUMMARY_JSON), summary_json(spec, &result.records)?)?;
    Ok(())
}

/// Loss curves of one training run per batch-size variant.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingResult {
    pub labels: Vec<String>,
    pub traces: Vec<TrainingTrace>,
}

/// Column label of a batch-size variant.
pub fn batch_label(batch: usize) -> String {
    match batch {
        0 => "full".into(),
        b => format!("b{b}"),
    }
}

/// Trains on the configured data once per batch-size variant.
pub fn run_training(
    spec: &TrainingSpec,
    fl: &FlParams,
    seed: u64,
) -> Result<TrainingResult> {
    let datasets = match &spec.dataset {
        Some(path) => {
            let pool = read_csv(path, spec.normalize)
                .map_err(|e| e.context(format!("reading {}", path.display())))?;
            partition(pool, spec.users, spec.partition, seed)?
        }
        None => {
            let mut task = spec.synthetic.clone();
            task.users = spec.users;
            task.seed = task.seed.wrapping_add(seed);
            partition(task.pool(), spec.users, spec.partition, task.seed)?
        }
    };
    let model = LossModel::linear();
    let mut labels = Vec::new();
    let mut traces = Vec::new();
    for &batch in &spec.batch_sizes {
        let config = DaneConfig {
            fl_params: *fl,
            local_solver: match batch {
                0 => LocalSolver::Gd,
                b => LocalSolver::Sgd { batch_size: b },
            },
            local_stop: spec.local_stop,
            max_rounds: spec.max_rounds,
            seed,
            halve_xi_on_stall: spec.halve_xi_on_stall,
        };
        labels.push(batch_label(batch));
        traces.push(
            run_dane(&datasets, &model, &config)
                .map_err(|e| e.context(format!("training with batch {}", batch_label(batch))))?,
        );
    }
    Ok(TrainingResult { labels, traces })
}

/// Wide table: the round, then loss and cumulative local computations for
/// every variant. Shorter runs leave their cells empty.
pub fn training_csv(result: &TrainingResult) -> Result<String> {
    let mut header = vec!["round".to_string()];
    for l in &result.labels {
        header.push(format!("loss_{l}"));
        header.push(format!("computations_{l}"));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&header)?;
    let rows = result.traces.iter().map(|t| t.global_loss.len()).max().unwrap_or(0);
    let computations: Vec<Vec<usize>> = result
        .traces
        .iter()
        .map(TrainingTrace::cumulative_computations)
        .collect();
    for n in 0..rows {
        let mut row = vec![n.to_string()];
        for (t, c) in result.traces.iter().zip(&computations) {
            row.push(t.global_loss.get(n).map(|&x| fmt_float(x)).unwrap_or_default());
            row.push(c.get(n).map(|x| x.to_string()).unwrap_or_default());
        }
        w.write_record(&row)?;
    }
    into_string(w)
}

/// Human-readable rendering of a scenario.
pub fn scenario_toml(config: &ScenarioConfig, scenario: &NetworkScenario) -> Result<String> {
    #[derive(Serialize)]
    struct File<'a> {
        config: &'a ScenarioConfig,
        scenario: &'a NetworkScenario,
    }
    toml::to_string_pretty(&File { config, scenario })
        .map_err(|e| Error::Config(format!("serializing scenario: {e}")))
}

/// Reads a scenario written by [`scenario_toml`].
pub fn read_scenario(path: &Path) -> Result<NetworkScenario> {
    #[derive(Deserialize)]
    struct File {
        scenario: NetworkScenario,
    }
    let text = fs::read_to_string(path)?;
    let file: File = toml::from_str(&text)?;
    file.scenario.validate()?;
    Ok(file.scenario)
}

/// Plain-text table of completion times, one line per scheme.
pub fn completion_table(rows: &[(SchemeKind, Result<f64>)]) -> String {
    let mut out = String::from("scheme,completion_time,error\n");
    for (k, r) in rows {
        match r {
            Ok(t) => writeln!(out, "{k},{},", fmt_float(*t)),
            Err(e) => writeln!(out, "{k},,{}", e.to_string().replace(',', ";")),
        }
        .expect("writing to a String");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_kilometre_loss() {
        let g = channel_gain((128.1, 37.6), 1000.0, 0.0);
        assert!((g / 10f64.powf(-12.81) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn scenarios_are_seeded() {
        let c = ScenarioConfig::default();
        let a = gen_scenario(&c).unwrap();
        assert_eq!(a, gen_scenario(&c).unwrap());
        let b = gen_scenario(&ScenarioConfig { seed: 1, ..c.clone() }).unwrap();
        assert_ne!(a, b);
        assert_eq!(a.num_users(), 50);
        for u in &a.users {
            assert!(u.cycles_per_sample >= 1e4 && u.cycles_per_sample < 3e4);
            assert!((u.p_max - 0.01).abs() < 1e-15);
        }
    }

    #[test]
    fn shadowing_is_centred() {
        let c = ScenarioConfig {
            num_users: 100_000,
            cell_side: 1e-9,
            min_distance: 1000.0,
            ..ScenarioConfig::default()
        };
        let s = gen_scenario(&c).unwrap();
        // at 1 km the gain in dB is −128.1 − X
        let n = s.num_users() as f64;
        let mean: f64 = s
            .users
            .iter()
            .map(|u| -10.0 * u.channel_gain.log10() - 128.1)
            .sum::<f64>()
            / n;
        assert!(mean.abs() <= 3.0 * 8.0 / n.sqrt(), "{mean}");
    }

    #[test]
    fn config_round_trips_through_toml() {
        let cfg = Config {
            sweep: Some(SweepSpec {
                variable: SweepVariable::PMax,
                values: vec![6.0, 8.0],
                runs: 2,
                schemes: vec![SchemeKind::Proposed, "rs:25".parse().unwrap()],
                outputs: "x".into(),
                deadline: Some(300.0),
            }),
            ..Config::default()
        };
        let text = toml::to_string(&cfg).unwrap();
        assert!(text.contains("K = 50"), "{text}");
        let back: Config = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        assert!(toml::from_str::<Config>("[scenario]\nbogus = 1\n").is_err());
    }

    #[test]
    fn single_cell_sweep_has_one_row() {
        let spec = SweepSpec {
            variable: SweepVariable::PMax,
            values: vec![10.0],
            runs: 1,
            schemes: vec![SchemeKind::Proposed],
            outputs: "unused".into(),
            deadline: None,
        };
        let base = ScenarioConfig {
            num_users: 5,
            ..ScenarioConfig::default()
        };
        let fl = FlConfig::default().fl_params().unwrap();
        let res = run_sweep(&spec, &base, &fl, &SchemeOptions::default()).unwrap();
        let csv = sweep_csv(spec.variable, &res.records).unwrap();
        assert_eq!(csv.lines().count(), 2);
        assert!(res.records[0].error.is_none());
    }

    #[test]
    fn measured_constants_are_moderate() {
        let fl = FlConfig::default().fl_params().unwrap();
        let ratio = fl.lipschitz / fl.strong_convexity;
        assert!(ratio > 1.0 && ratio < 4.0, "{ratio}");
        assert!(fl.xi <= 1.0 / ratio);
    }
}
