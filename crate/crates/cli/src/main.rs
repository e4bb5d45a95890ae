use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use echolab::autodiff::gradcheck;
use echolab::eval::MetricReport;
use echolab::models::ModelKind;
use echolab::pipeline::blob::read_checkpoint;
use echolab::pipeline::{
    gen_dataset, open_or_generate, Dataset, ExperimentConfig, ExperimentName, Lab, SplitName,
};
use echolab::Error;

mod plot;

#[derive(Parser)]
#[command(name = "echolab", version, about = "Echoes as supervision for visual depth features")]
struct Cli {
    /// Progress messages on stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate scenes, renders, echoes and spectrograms.
    GenDataset {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one network on a dataset's train split.
    Train {
        #[arg(long)]
        task: ModelKind,
        /// `scratch`, or a checkpoint whose visual encoder initializes the network.
        #[arg(long, default_value = "scratch")]
        init: String,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on one split.
    Eval {
        #[arg(long)]
        task: ModelKind,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value = "test")]
        split: SplitName,
    },
    /// Run an experiment table, or `all` of them in dependency order.
    Experiment {
        #[arg(long)]
        name: String,
        #[arg(long)]
        config: PathBuf,
    },
    /// Finite-difference check of every layer in double precision.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Turn a report or training-log CSV into plot-ready TSV files.
    Plot {
        #[arg(long)]
        report: PathBuf,
        /// Output directory; defaults to the report's directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug)]
enum CliError {
    Lab(Error),
    Check(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Lab(e)
    }
}

fn kind_of(e: &Error) -> &'static str {
    match e {
        Error::Config(_) | Error::Toml { .. } => "config",
        Error::Geometry(_) => "geometry",
        Error::Aliasing { .. } | Error::Signal(_) => "signal",
        Error::Shape { .. } | Error::Graph(_) => "autodiff",
        Error::CheckpointMismatch { .. } => "checkpoint",
        Error::Dataset(_) => "dataset",
        Error::MissingArtifact(_) => "missing-artifact",
        Error::Metric(_) => "metric",
        Error::Blob(_) => "blob",
        Error::Io { .. } | Error::Json { .. } | Error::Csv(_) => "io",
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Lab(e)) => {
            eprintln!("error[{}]: {e}", kind_of(&e));
            ExitCode::from(1)
        }
        Err(CliError::Check(msg)) => {
            eprintln!("error[check]: {msg}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let verbose = cli.verbose;
    match cli.command {
        Command::GenDataset { config, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let s = gen_dataset(&cfg, &out)?;
            println!("{} scenes, {} positions, {} views -> {}", s.scenes, s.positions, s.views, out.display());
        }
        Command::Train { task, init, dataset, seed, out } => {
            let data = Dataset::open(&dataset)?;
            let mut lab = Lab::new(&data.config, &data, &out)?;
            lab.verbose = verbose;
            let (label, encoder) = if init == "scratch" {
                ("scratch".to_string(), None)
            } else {
                let path = Path::new(&init);
                if !path.exists() {
                    return Err(Error::MissingArtifact(format!("init checkpoint {}", path.display())).into());
                }
                let stem = path.file_stem().map_or("checkpoint".into(), |s| s.to_string_lossy().into_owned());
                (format!("from_{stem}"), Some(read_checkpoint(path)?))
            };
            let ckpt = out.join(format!("{task}_{label}_seed{seed}.veck"));
            let t = lab.train_model(task, seed, encoder.as_deref(), &ckpt)?;
            if let Some(r) = t.log.last("val") {
                println!("val loss {:.6} metric {:.6}", r.loss, r.metric.unwrap_or(f64::NAN));
            }
            println!("checkpoint {}", t.checkpoint.display());
        }
        Command::Eval { task, checkpoint, dataset, split } => {
            let data = Dataset::open(&dataset)?;
            let mut lab = Lab::new(&data.config, &data, &dataset)?;
            let net = lab.load_model(task, &checkpoint)?;
            let (metrics, samples) = lab.evaluate_split(&net, split)?;
            let report = MetricReport {
                task: task.to_string(),
                split: split.name().into(),
                condition: checkpoint.display().to_string(),
                seed: None,
                metrics,
                samples,
            };
            println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
        }
        Command::Experiment { name, config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let names: Vec<ExperimentName> = if name == "all" {
                ExperimentName::ALL.to_vec()
            } else {
                vec![name.parse()?]
            };
            let data = open_or_generate(&cfg, verbose)?;
            let mut lab = Lab::new(&cfg, &data, &cfg.output_dir)?;
            lab.verbose = verbose;
            for n in names {
                let report = lab.run(n)?;
                println!("== {n} ({})", cfg.output_dir.join(format!("{n}.csv")).display());
                for r in &report.rows {
                    let seed = r.seed.map_or("mean".to_string(), |s| s.to_string());
                    println!("{:<20} {:>5}  {:.4}", r.condition, seed, r.metrics.headline());
                }
            }
        }
        Command::Gradcheck { seed } => {
            let reports = gradcheck::layer_suite(seed)?;
            let failed = reports.iter().filter(|r| !r.passed).count();
            for r in &reports {
                println!("{r}");
            }
            if failed > 0 {
                return Err(CliError::Check(format!("{failed} of {} layers failed", reports.len())));
            }
            println!("all {} layers passed", reports.len());
        }
        Command::Plot { report, out } => {
            let dir = out.unwrap_or_else(|| report.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf));
            for path in plot::emit(&report, &dir)? {
                println!("{}", path.display());
            }
        }
    }
    Ok(())
}
