use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use eefl::harness::{
    self, completion_table, gen_scenario, parse_schemes, read_scenario, run_experiment,
    run_sweep, run_training, scenario_toml, training_csv, write_sweep, Config, SweepSpec,
    SweepVariable,
};
use eefl::model::NetworkScenario;
use eefl::schemes::{self, SchemeKind, SchemeOptions};

#[derive(Parser, Debug)]
#[command(name = "eefl", version, about = "Energy-efficient federated learning over a wireless cell")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// TOML file with `[scenario]`, `[fl]`, `[sweep]` and `[training]` tables.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; results go to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated schemes, e.g. `proposed,eb_fdma,fe_fdma,tdma,rs:25`.
    #[arg(long)]
    scheme: Option<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw a random cell and write it as a scenario file.
    Gen {
        #[command(flatten)]
        common: Common,
    },
    /// Minimize total energy under a completion-time budget.
    SolveEnergy {
        #[command(flatten)]
        common: Common,
        /// Scenario file written by `gen`; drawn from the config otherwise.
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// Completion-time budget in seconds.
        #[arg(long, conflicts_with = "slack")]
        deadline: Option<f64>,
        /// Budget as a multiple of the proposed scheme's minimum completion time.
        #[arg(long, default_value_t = 1.25)]
        slack: f64,
    },
    /// Minimum completion time of each scheme.
    SolveTime {
        #[command(flatten)]
        common: Common,
        /// Scenario file written by `gen`; drawn from the config otherwise.
        #[arg(long)]
        scenario: Option<PathBuf>,
    },
    /// Federated training on the configured data.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Monte Carlo sweep described by the `[sweep]` table.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Monte Carlo repetitions per value.
        #[arg(long)]
        runs: Option<usize>,
        /// Swept variable: p_max, T, batch_size or K.
        #[arg(long, requires = "values")]
        variable: Option<String>,
        /// Comma-separated sweep values.
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<f64>>,
        /// Budget for the energy solves when the deadline is not swept.
        #[arg(long)]
        deadline: Option<f64>,
    },
}

fn load_config(common: &Common) -> Result<Config> {
    let mut config = match &common.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    if let Some(seed) = common.seed {
        config.scenario.seed = seed;
    }
    Ok(config)
}

fn schemes_or(common: &Common, default: &[SchemeKind]) -> Result<Vec<SchemeKind>> {
    match &common.scheme {
        Some(list) => Ok(parse_schemes(list)?),
        None => Ok(default.to_vec()),
    }
}

fn load_scenario(path: Option<&Path>, config: &Config) -> Result<NetworkScenario> {
    match path {
        Some(p) => read_scenario(p).with_context(|| format!("reading scenario {}", p.display())),
        None => Ok(gen_scenario(&config.scenario)?),
    }
}

fn emit(out: Option<&Path>, file: &str, text: &str) -> Result<()> {
    match out {
        Some(dir) => {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            let path = dir.join(file);
            fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
            info!("wrote {}", path.display());
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn all_schemes() -> Vec<SchemeKind> {
    vec![
        SchemeKind::Proposed,
        SchemeKind::EbFdma,
        SchemeKind::FeFdma,
        SchemeKind::Tdma,
        SchemeKind::Rs { selected_count: 0, seed: 0 },
    ]
}

fn parse_variable(name: &str) -> Result<SweepVariable> {
    Ok(match name {
        "p_max" => SweepVariable::PMax,
        "T" | "deadline" => SweepVariable::Deadline,
        "batch_size" => SweepVariable::BatchSize,
        "K" | "users" => SweepVariable::NumUsers,
        other => bail!("unknown sweep variable `{other}`"),
    })
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let opts = SchemeOptions::default();
    match cli.command {
        Command::Gen { common } => {
            let config = load_config(&common)?;
            let scenario = gen_scenario(&config.scenario)?;
            emit(common.out.as_deref(), "scenario.toml", &scenario_toml(&config.scenario, &scenario)?)?;
        }
        Command::SolveEnergy {
            common,
            scenario,
            deadline,
            slack,
        } => {
            let config = load_config(&common)?;
            let fl = config.fl.fl_params()?;
            let scenario = load_scenario(scenario.as_deref(), &config)?;
            let deadline = match deadline {
                Some(t) => t,
                None => slack * schemes::completion_time(SchemeKind::Proposed, &scenario, &fl, &opts)?,
            };
            info!("deadline {deadline:.6e} s");
            let mut reports = Vec::new();
            for kind in schemes_or(&common, &[SchemeKind::Proposed])? {
                let kind = match kind {
                    SchemeKind::Rs { selected_count, .. } => SchemeKind::Rs {
                        selected_count,
                        seed: config.scenario.seed,
                    },
                    k => k,
                };
                match run_experiment(&scenario, &fl, kind, deadline, &opts) {
                    Ok(report) => {
                        info!("{kind}: {:.6e} J", report.total_energy().unwrap_or(f64::NAN));
                        reports.push(serde_json::to_value(&report)?);
                    }
                    Err(e) => {
                        log::warn!("{kind}: {e}");
                        reports.push(serde_json::json!({ "scheme": kind.to_string(), "error": e.to_string() }));
                    }
                }
            }
            emit(common.out.as_deref(), "reports.json", &(serde_json::to_string_pretty(&reports)? + "\n"))?;
        }
        Command::SolveTime { common, scenario } => {
            let config = load_config(&common)?;
            let fl = config.fl.fl_params()?;
            let scenario = load_scenario(scenario.as_deref(), &config)?;
            let rows: Vec<_> = schemes_or(&common, &all_schemes())?
                .into_iter()
                .map(|kind| (kind, schemes::completion_time(kind, &scenario, &fl, &opts)))
                .collect();
            emit(common.out.as_deref(), "completion_times.csv", &completion_table(&rows))?;
        }
        Command::Train { common } => {
            let config = load_config(&common)?;
            let fl = config.fl.fl_params()?;
            let result = run_training(&config.training, &fl, config.scenario.seed)?;
            for (label, trace) in result.labels.iter().zip(&result.traces) {
                info!(
                    "{label}: {} rounds, final loss {:.6e}",
                    trace.rounds(),
                    trace.global_loss.last().copied().unwrap_or(f64::NAN)
                );
            }
            emit(common.out.as_deref(), "training.csv", &training_csv(&result)?)?;
        }
        Command::Sweep {
            common,
            runs,
            variable,
            values,
            deadline,
        } => {
            let config = load_config(&common)?;
            let mut spec = match (config.sweep.clone(), variable) {
                (_, Some(name)) => SweepSpec {
                    variable: parse_variable(&name)?,
                    values: values.unwrap_or_default(),
                    runs: 50,
                    schemes: vec![SchemeKind::Proposed],
                    outputs: PathBuf::from("out"),
                    deadline: None,
                },
                (Some(spec), None) => spec,
                (None, None) => bail!("no [sweep] table in the config and no --variable given"),
            };
            if let Some(r) = runs {
                spec.runs = r;
            }
            if let Some(t) = deadline {
                spec.deadline = Some(t);
            }
            if let Some(list) = &common.scheme {
                spec.schemes = parse_schemes(list)?;
            }
            if let Some(dir) = &common.out {
                spec.outputs = dir.clone();
            }
            let fl = config.fl.fl_params()?;
            let result = run_sweep(&spec, &config.scenario, &fl, &opts)?;
            let failed = result.records.iter().filter(|r| r.error.is_some()).count();
            if failed > 0 {
                log::warn!("{failed} of {} cells failed; see the error column", result.records.len());
            }
            write_sweep(&spec.outputs, &spec, &result)?;
            info!(
                "wrote {} rows to {}",
                result.records.len(),
                spec.outputs.join(harness::SWEEP_CSV).display()
            );
        }
    }
    Ok(())
}
