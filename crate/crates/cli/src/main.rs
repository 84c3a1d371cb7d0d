use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{info, warn, LevelFilter, Log, Metadata, Record};

use regopt_core::generate::{plan, Goal, PlanConfig};
use regopt_core::ingest;
use regopt_core::learn::{self, ModelSet, TrainConfig};
use regopt_core::methodology::{run_loop, LoopConfig};
use regopt_core::metrics::{compare, ComparisonMetrics};
use regopt_core::ranking::{rank, selection_to_regression, Objective};
use regopt_core::report::{emit_comparison, ComparisonPlotData};
use regopt_core::synthdut::{generate_archive, replay_plan, DutSpec};
use regopt_core::{Error, Regression, Result};

/// Regression optimization for constrained-random verification.
#[derive(Parser)]
#[command(name = "regopt", version)]
struct Cli {
    /// Only log errors.
    #[arg(long, global = true)]
    quiet: bool,
    /// Emit log lines as JSON objects.
    #[arg(long, global = true)]
    json_logs: bool,
    /// Worker threads; 0 picks one per core.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate and merge regression archives.
    Ingest {
        #[arg(long = "input", required = true, num_args = 1..)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Drop invalid records instead of failing.
        #[arg(long)]
        skip_invalid: bool,
    },
    /// Run the synthetic testbench to produce an archive.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long, default_value_t = 10)]
        seeds_per_test: usize,
        #[arg(long, default_value_t = 0)]
        base_seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Greedily rank recorded runs by coverage contribution.
    Rank {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "cover_all")]
        objective: String,
        /// Archive of the selected runs, in pick order.
        #[arg(long)]
        out: PathBuf,
        /// Pick table as CSV; stdout when absent.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Train per-bin models.
    Train {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        training: TrainingArgs,
    },
    /// Rank input factors per learned bin.
    Analyze {
        #[arg(long)]
        models: PathBuf,
        /// CSV destination; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Plan an optimized regression.
    Generate {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        models: PathBuf,
        /// cov=C, runs=N or cpu=S
        #[arg(long)]
        goal: String,
        #[arg(long, default_value_t = 0)]
        plan_seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        planning: PlanningArgs,
    },
    /// Execute a plan on the synthetic testbench.
    Replay {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Coverage regain and compression between two archives.
    Metrics {
        #[arg(long)]
        original: PathBuf,
        #[arg(long)]
        optimized: PathBuf,
        /// CSV destination; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Optimize, replay and tighten until the regain threshold is met.
    Loop {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        goal: String,
        #[arg(long, default_value_t = 99.0)]
        threshold: f64,
        #[arg(long, default_value_t = 5)]
        max_iter: usize,
        #[arg(long, default_value_t = 0)]
        plan_seed: u64,
        #[arg(long)]
        state: Option<PathBuf>,
        #[command(flatten)]
        training: TrainingArgs,
        #[command(flatten)]
        planning: PlanningArgs,
    },
    /// Grouped-bar comparison charts and CSVs.
    Report {
        /// Plot data as JSON.
        #[arg(long, conflicts_with = "entries", required_unless_present = "entries")]
        data: Option<PathBuf>,
        /// SCENARIO,METHOD,METRICS_CSV; repeatable.
        #[arg(long = "entry")]
        entries: Vec<String>,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

#[derive(Args)]
struct TrainingArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 200)]
    epochs: u32,
    #[arg(long, default_value_t = 0.1)]
    learning_rate: f64,
    #[arg(long, default_value_t = 1e-4)]
    l2: f64,
    /// Hidden ReLU units; 0 trains logistic regression.
    #[arg(long, default_value_t = 0)]
    hidden: usize,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
}

impl TrainingArgs {
    fn config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            l2: self.l2,
            hidden: self.hidden,
            batch_size: self.batch_size,
        }
    }
}

#[derive(Args)]
struct PlanningArgs {
    /// Hard limit on planned runs.
    #[arg(long)]
    cap: Option<usize>,
    #[arg(long, default_value_t = 17)]
    grid_points: usize,
    #[arg(long, default_value_t = 2)]
    sweeps: usize,
    #[arg(long, default_value_t = 0.5)]
    narrowing: f64,
    #[arg(long, default_value_t = 0.9)]
    confidence: f64,
}

impl PlanningArgs {
    fn goal(&self, text: &str) -> Result<Goal> {
        let goal: Goal = text.parse()?;
        let goal = match self.cap {
            Some(cap) => goal.with_cap(cap),
            None => goal,
        };
        goal.validate()?;
        Ok(goal)
    }

    fn config(&self) -> PlanConfig {
        PlanConfig {
            grid_points: self.grid_points,
            sweeps: self.sweeps,
            narrowing_fraction: self.narrowing,
            confidence: self.confidence,
        }
    }
}

struct StderrLogger {
    json: bool,
    level: LevelFilter,
}

impl Log for StderrLogger {
    fn enabled(&self, metadata: &Metadata) -> bool {
        metadata.level() <= self.level
    }

    fn log(&self, record: &Record) {
        if !self.enabled(record.metadata()) {
            return;
        }
        let line = if self.json {
            serde_json::json!({
                "level": record.level().as_str().to_lowercase(),
                "message": record.args().to_string(),
                "target": record.target(),
            })
            .to_string()
        } else {
            format!("{}: {}", record.level().as_str().to_lowercase(), record.args())
        };
        let _ = writeln!(std::io::stderr().lock(), "{line}");
    }

    fn flush(&self) {}
}

fn init_logging(cli: &Cli) {
    let level = if cli.quiet { LevelFilter::Error } else { LevelFilter::Info };
    let logger = StderrLogger { json: cli.json_logs, level };
    if log::set_logger(Box::leak(Box::new(logger))).is_ok() {
        log::set_max_level(level);
    }
}

#[cfg(feature = "parallel")]
fn init_threads(threads: usize) -> Result<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Error::Validation(format!("cannot start worker pool: {e}")))
}

#[cfg(not(feature = "parallel"))]
fn init_threads(threads: usize) -> Result<()> {
    if threads > 1 {
        warn!("built without parallel support; ignoring --threads {threads}");
    }
    Ok(())
}

fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => ingest::write_text(path, text),
        None => std::io::stdout()
            .lock()
            .write_all(text.as_bytes())
            .map_err(|e| Error::Validation(format!("cannot write to stdout: {e}"))),
    }
}

fn load_models(path: &Path, regression: Option<&Regression>) -> Result<ModelSet> {
    let models: ModelSet = ingest::load_document(path)?;
    if let Some(reg) = regression {
        models.check_matches(reg)?;
    }
    Ok(models)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest { inputs, out, skip_invalid } => {
            let mut parts = Vec::with_capacity(inputs.len());
            for path in &inputs {
                let text = ingest::read_text(path)?;
                let reg = if skip_invalid {
                    let (reg, rejected) = ingest::parse_regression_lenient(&text)?;
                    for r in &rejected {
                        warn!("{}: skipped line {}: {}", path.display(), r.line, r.message);
                    }
                    reg
                } else {
                    ingest::parse_regression(&text).map_err(|e| Error::Validation(format!("{}: {e}", path.display())))?
                };
                parts.push(reg);
            }
            let merged = ingest::merge_regressions(&parts)?;
            info!("merged {} runs from {} archives", merged.runs.len(), inputs.len());
            ingest::save_regression(&merged, &out)
        }
        Command::Synth { spec, seeds_per_test, base_seed, out } => {
            let spec: DutSpec = ingest::load_document(&spec)?;
            let reg = generate_archive(&spec, seeds_per_test, base_seed)?;
            info!("simulated {} runs, coverage {}%", reg.runs.len(), reg.coverage_percent()?);
            ingest::save_regression(&reg, &out)
        }
        Command::Rank { input, objective, out, csv } => {
            let objective: Objective = objective.parse()?;
            let reg = ingest::load_regression(&input)?;
            let ranked = rank(&reg, objective)?;
            let mut table = String::from("rank,index,test,seed,gain,cumulative_coverage\n");
            for (k, &i) in ranked.indices.iter().enumerate() {
                let run = &reg.runs[i];
                table.push_str(&format!(
                    "{},{i},{},{},{},{}\n",
                    k + 1,
                    run.test,
                    run.seed,
                    ranked.gains[k],
                    ranked.cumulative_coverage[k]
                ));
            }
            info!(
                "selected {} of {} runs, coverage {}%",
                ranked.len(),
                reg.runs.len(),
                ranked.final_coverage()
            );
            ingest::save_regression(&selection_to_regression(&reg, &ranked.indices)?, &out)?;
            emit(&table, csv.as_deref())
        }
        Command::Train { input, out, training } => {
            let reg = ingest::load_regression(&input)?;
            let models = learn::train(&reg, &training.config())?;
            info!("trained {} of {} bins", models.learned_count(), models.bins.len());
            ingest::save_document(&models, &out)
        }
        Command::Analyze { models, out } => {
            let models = load_models(&models, None)?;
            emit(&learn::analyze(&models)?.to_csv(), out.as_deref())
        }
        Command::Generate { input, models, goal, plan_seed, out, planning } => {
            let goal = planning.goal(&goal)?;
            let reg = ingest::load_regression(&input)?;
            let models = load_models(&models, Some(&reg))?;
            let planned = plan(&models, goal, &reg, plan_seed, &planning.config())?;
            for w in &planned.warnings {
                warn!("{w}");
            }
            info!(
                "planned {} runs ({} replayed), expected coverage {}%",
                planned.runs.len(),
                planned.replay_count(),
                planned.expected_coverage_percent
            );
            ingest::save_document(&planned, &out)
        }
        Command::Replay { spec, plan, out } => {
            let spec: DutSpec = ingest::load_document(&spec)?;
            let planned = ingest::load_document(&plan)?;
            let reg = replay_plan(&spec, &planned)?;
            info!("replayed {} runs, coverage {}%", reg.runs.len(), reg.coverage_percent()?);
            ingest::save_regression(&reg, &out)
        }
        Command::Metrics { original, optimized, out } => {
            let a = ingest::load_regression(&original)?;
            let b = ingest::load_regression(&optimized)?;
            emit(&compare(&a, &b)?.to_csv(), out.as_deref())
        }
        Command::Loop {
            input,
            spec,
            goal,
            threshold,
            max_iter,
            plan_seed,
            state,
            training,
            planning,
        } => {
            let goal = planning.goal(&goal)?;
            let reg = ingest::load_regression(&input)?;
            let spec: DutSpec = ingest::load_document(&spec)?;
            let config = LoopConfig {
                regain_threshold_percent: threshold,
                max_iterations: max_iter,
                plan_seed,
                train: training.config(),
                plan: planning.config(),
            };
            let outcome = run_loop(&reg, &spec, goal, &config, state.as_deref())?;
            if outcome.cached {
                info!("inputs unchanged; reusing the stored outcome");
            }
            info!("{}", outcome.outcome.recommendation);
            emit(&ingest::serialize_document(&outcome.outcome)?, None)
        }
        Command::Report { data, entries, out_dir } => {
            let data = match data {
                Some(path) => {
                    let text = ingest::read_text(&path)?;
                    serde_json::from_str::<ComparisonPlotData>(&text)
                        .map_err(|source| Error::Document { path, source })?
                }
                None => {
                    let mut parsed = Vec::with_capacity(entries.len());
                    for entry in &entries {
                        let mut parts = entry.splitn(3, ',');
                        let (Some(s), Some(m), Some(p)) = (parts.next(), parts.next(), parts.next()) else {
                            return Err(Error::Validation(format!(
                                "entry `{entry}` must be SCENARIO,METHOD,METRICS_CSV"
                            )));
                        };
                        let metrics = ComparisonMetrics::from_csv(&ingest::read_text(Path::new(p))?)?;
                        parsed.push((s.to_string(), m.to_string(), metrics));
                    }
                    ComparisonPlotData::from_entries(&parsed)?
                }
            };
            for path in emit_comparison(&data, &out_dir)? {
                info!("wrote {}", path.display());
            }
            let mut table = String::from("scenario,method,regain,compression_runs,compression_cpu\n");
            let show = |v: Option<f64>| v.map_or_else(|| "undefined".to_string(), |v| v.to_string());
            for (i, scenario) in data.scenarios.iter().enumerate() {
                for m in &data.methods {
                    table.push_str(&format!(
                        "{scenario},{},{},{},{}\n",
                        m.name,
                        show(m.regain[i]),
                        show(m.compression_runs[i]),
                        show(m.compression_cpu[i])
                    ));
                }
            }
            emit(&table, None)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(&cli);
    let result = init_threads(cli.threads).and_then(|()| run(cli));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            if log::max_level() == LevelFilter::Off {
                eprintln!("error: {e}");
            }
            ExitCode::from(1)
        }
    }
}
