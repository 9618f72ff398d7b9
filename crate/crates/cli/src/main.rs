//! `agentprefs`: one binary for every stage of an experiment run.
//!
//! Each subcommand brings the stages it needs up to date first, so results
//! depend only on the run directory's configuration and master seed.

use std::path::PathBuf;
use std::process::ExitCode;

use agentprefs::config::{load_config, Config};
use agentprefs::harness::{default_grid, Method, MethodSpec, PreferenceSource};
use agentprefs::pipeline::{Run, Stage, StageEvent};
use agentprefs::probe::{InputSource, Variant};
use agentprefs::{Error, Result};
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(
    name = "agentprefs",
    version,
    about = "Train gridworld agents and probe them for the simulated human's preference state"
)]
struct Cli {
    /// Directory holding every artifact of the run and its manifest.
    #[arg(long, global = true, default_value = "run")]
    run_dir: PathBuf,
    /// Root of every derived seed.
    #[arg(long, global = true, default_value_t = 0)]
    master_seed: u64,
    /// Upper bound on worker threads for parallel jobs.
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,
    /// TOML configuration; missing keys take their defaults. AGENTPREFS_<SECTION>__<KEY> variables override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Start from the seconds-scale smoke profile, which exercises every stage with meaningless numbers.
    #[arg(long, global = true, conflicts_with = "config")]
    smoke: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the DQN sweep of one or both environment variants.
    TrainAgent {
        #[arg(long, value_enum, default_value_t = VariantArg::Both)]
        variant: VariantArg,
    },
    /// Collect labeled and unlabeled datasets from the top agents.
    Collect,
    /// Random search and final evaluation of a single results cell.
    Search {
        #[arg(long, value_enum)]
        input: InputArg,
        #[arg(long, value_enum)]
        variant: OneVariant,
        #[arg(long, value_enum)]
        method: MethodArg,
        /// Train and evaluate on label-shuffled data.
        #[arg(long)]
        shuffled: bool,
    },
    /// Greedy evaluation of a swept agent next to the scripted controls.
    Evaluate {
        #[arg(long, value_enum, default_value_t = OneVariant::Penalized)]
        variant: OneVariant,
        /// Agent id; defaults to the best agent of the sweep.
        #[arg(long)]
        agent: Option<String>,
    },
    /// Fill the whole results grid.
    Grid {
        /// Run the label-shuffled control grid instead.
        #[arg(long)]
        shuffled: bool,
    },
    /// Retrain the best agent with a preference term added to its reward.
    Bootstrap {
        #[arg(long, value_enum, default_value_t = SourceArg::Probe)]
        source: SourceArg,
    },
    /// Write results.csv, table.txt and report.txt from the grid.
    Report,
    /// Every stage enabled by the configuration, resuming completed ones.
    RunAll,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum VariantArg {
    Penalized,
    NoPenalty,
    Both,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum OneVariant {
    Penalized,
    NoPenalty,
}

impl From<OneVariant> for Variant {
    fn from(v: OneVariant) -> Self {
        match v {
            OneVariant::Penalized => Variant::Penalized,
            OneVariant::NoPenalty => Variant::NoPenalty,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum InputArg {
    Activations,
    Image,
    QValues,
    Autoencoder,
}

impl From<InputArg> for InputSource {
    fn from(i: InputArg) -> Self {
        match i {
            InputArg::Activations => InputSource::Activations,
            InputArg::Image => InputSource::Image,
            InputArg::QValues => InputSource::QValues,
            InputArg::Autoencoder => InputSource::AutoencoderCode,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum MethodArg {
    Nn,
    Single,
    ReduceNn,
    ReduceSingle,
    ClusterMajority,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Nn => Method::Nn,
            MethodArg::Single => Method::Single,
            MethodArg::ReduceNn => Method::ReduceNn,
            MethodArg::ReduceSingle => Method::ReduceSingle,
            MethodArg::ClusterMajority => Method::ClusterMajority,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum SourceArg {
    Probe,
    Oracle,
}

fn read_config(path: Option<&PathBuf>, smoke: bool) -> Result<Config> {
    let text = match path {
        Some(p) => std::fs::read_to_string(p)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?,
        None if smoke => Config::smoke().to_toml()?,
        None => String::new(),
    };
    load_config(&text, std::env::vars()).map_err(|e| match (e, path) {
        (Error::Parse { line, message }, Some(p)) => Error::Parse {
            line,
            message: format!("{}: {message}", p.display()),
        },
        (e, _) => e,
    })
}

fn log_progress(stage: Stage, event: StageEvent) {
    match event {
        StageEvent::Started => eprintln!("[{}] running", stage.name()),
        StageEvent::Skipped => eprintln!("[{}] up to date", stage.name()),
        StageEvent::Finished { seconds } => eprintln!("[{}] done in {seconds:.1}s", stage.name()),
    }
}

/// Stages needed for `targets`, deduplicated, in dependency order.
fn closure(targets: &[Stage]) -> Vec<Stage> {
    let mut out = Vec::new();
    for &t in targets {
        for s in Stage::with_upstream(t) {
            if !out.contains(&s) {
                out.push(s);
            }
        }
    }
    out
}

fn print_file(run: &Run, rel: &str) -> Result<()> {
    print!("{}", std::fs::read_to_string(run.dir().join(rel))?);
    Ok(())
}

fn execute(cli: Cli) -> Result<()> {
    let config = read_config(cli.config.as_ref(), cli.smoke)?;
    let mut run = Run::open(&cli.run_dir, config.clone(), cli.master_seed, cli.workers)?;
    match cli.command {
        Command::TrainAgent { variant } => {
            let stages = match variant {
                VariantArg::Penalized => vec![Stage::SweepPenalized],
                VariantArg::NoPenalty => vec![Stage::SweepNoPenalty],
                VariantArg::Both => vec![Stage::SweepPenalized, Stage::SweepNoPenalty],
            };
            run.run_with(&stages, log_progress)?;
            for v in Variant::ALL {
                if let Ok(ids) = run.ranking(v) {
                    println!("{}: {}", v.as_str(), ids.join(", "));
                }
            }
        }
        Command::Collect => {
            run.run_with(&closure(&[Stage::Collect]), log_progress)?;
        }
        Command::Search {
            input,
            variant,
            method,
            shuffled,
        } => {
            let spec = MethodSpec::new(input.into(), variant.into(), method.into());
            if !default_grid(true).contains(&spec) {
                return Err(Error::Config(format!(
                    "{} is not a cell of the results grid",
                    spec.key()
                )));
            }
            run.run_with(
                &closure(&[Stage::Collect, Stage::Autoencoder]),
                log_progress,
            )?;
            let name = if shuffled {
                format!("{}-shuffled", spec.key())
            } else {
                spec.key()
            };
            let grid = run.search_cells(&name, &[spec], shuffled)?;
            print!("{}", grid.render_table());
            if let Some(err) = grid.cells.iter().find_map(|c| c.error.clone()) {
                return Err(Error::Stage {
                    stage: "search".into(),
                    message: err,
                });
            }
        }
        Command::Evaluate { variant, agent } => {
            let variant = Variant::from(variant);
            let sweep = if variant == Variant::Penalized {
                Stage::SweepPenalized
            } else {
                Stage::SweepNoPenalty
            };
            run.run_with(&[sweep], log_progress)?;
            let (id, report) = run.evaluate_agent(variant, agent.as_deref())?;
            println!(
                "{id}: {:.2} +- {:.2} over {} greedy episodes",
                report.agent.mean, report.agent.std, report.agent.episodes
            );
            for c in &report.controls {
                println!(
                    "  {}: {:.2} +- {:.2} (z = {:.2})",
                    c.control, c.stats.mean, c.stats.std, c.z
                );
            }
        }
        Command::Grid { shuffled } => {
            let stage = if shuffled {
                Stage::NullGrid
            } else {
                Stage::Grid
            };
            run.run_with(&closure(&[stage]), log_progress)?;
            print_file(
                &run,
                if shuffled {
                    "null-grid/table.txt"
                } else {
                    "grid/table.txt"
                },
            )?;
        }
        Command::Bootstrap { source } => {
            let (stage, source) = match source {
                SourceArg::Probe => (Stage::BootstrapProbe, PreferenceSource::Probe),
                SourceArg::Oracle => (Stage::BootstrapOracle, PreferenceSource::Oracle),
            };
            run.run_with(&closure(&[stage]), log_progress)?;
            print!(
                "{}",
                String::from_utf8_lossy(&run.load_bootstrap(source)?.to_csv()?)
            );
        }
        Command::Report => {
            run.run_with(&closure(&[Stage::Report]), log_progress)?;
            print_file(&run, "report.txt")?;
        }
        Command::RunAll => {
            run.run_with(&Stage::plan(&config), log_progress)?;
            print_file(&run, "table.txt")?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match &e {
                Error::Parse { line, message } => {
                    eprintln!("error: configuration line {line}: {message}")
                }
                other => eprintln!("error: {other}"),
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
