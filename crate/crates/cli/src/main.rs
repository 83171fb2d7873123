//! `hepimg`: collision events to images, datasets and a baseline classifier.
//!
//! Exit codes: 0 success, 1 validation or runtime failure, 2 configuration
//! error.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use hepimg::ingest;
use hepimg::pipeline::{self, Mode, PipelineConfig, PipelineError, RunOptions};
use hepimg::synth::GeneratorSpec;

#[derive(Parser)]
#[command(
    name = "hepimg",
    version,
    about = "Render collision events as images and train a baseline classifier"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Dimuon,
    Complex,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Dimuon => Mode::Dimuon,
            ModeArg::Complex => Mode::Complex,
        }
    }
}

/// Where the configuration comes from; flags override the file.
#[derive(Args)]
struct ConfigArgs {
    /// TOML (or JSON) run configuration.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Event file (line-delimited JSON).
    #[arg(long)]
    input: Option<PathBuf>,
    /// Run directory.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn load(&self) -> Result<PipelineConfig, PipelineError> {
        let mut cfg = match &self.config {
            Some(path) => PipelineConfig::load(path)?,
            None => PipelineConfig::default(),
        };
        if let Some(i) = &self.input {
            cfg.input = i.clone();
        }
        if let Some(o) = &self.output {
            cfg.output = o.clone();
        }
        if let Some(m) = self.mode {
            cfg.mode = m.into();
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if cfg.input.as_os_str().is_empty() {
            return Err(PipelineError::Config(
                "no input file given (--input or `input` in the config)".into(),
            ));
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic event file.
    Generate {
        #[arg(long, value_enum, default_value = "dimuon")]
        mode: ModeArg,
        /// Events per class.
        #[arg(long, default_value_t = 1000)]
        per_class: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Generator settings (TOML); defaults are used when absent.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Validate an event file and print a summary.
    Ingest {
        file: PathBuf,
        /// Exit 0 even when records are rejected.
        #[arg(long)]
        lenient: bool,
        /// Print the report as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Select, split, balance and render events into a dataset.
    Render {
        #[command(flatten)]
        config: ConfigArgs,
        /// Render workers (0: one per core).
        #[arg(long, default_value_t = 0)]
        threads: usize,
        /// Write the manifest but no images.
        #[arg(long)]
        dry_run: bool,
    },
    /// Train the feedforward baseline on the rendered dataset's splits.
    TrainFfn {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Predict the test split and write confusion matrices.
    Evaluate {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Score a predictions file `event_id,pred,prob_0,...` against a manifest.
    Report {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 0)]
        signal_class: usize,
        /// Output directory for the report files.
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Render, train and evaluate in one go.
    Run {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value_t = 0)]
        threads: usize,
    },
    /// Print the fully resolved configuration.
    ShowConfig {
        #[command(flatten)]
        config: ConfigArgs,
    },
}

enum Failure {
    Pipeline(PipelineError),
    Validation(String),
    Other(anyhow::Error),
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        Failure::Pipeline(e)
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Other(e)
    }
}

fn print_json<T: serde::Serialize>(value: &T) {
    println!(
        "{}",
        serde_json::to_string_pretty(value).expect("plain data serializes")
    );
}

fn print_report(r: &pipeline::ReportSummary) {
    println!("samples: {}", r.samples);
    println!("accuracy: {:.4}", r.accuracy);
    for (name, recall) in r.class_names.iter().zip(&r.per_class_recall) {
        println!("  recall {name}: {recall:.4}");
    }
    match r.efficiency {
        Some(e) => println!(
            "signal ({}) vs background efficiency: {e:.4}\n  definition: {}",
            r.class_names.get(r.signal_class).map_or("?", String::as_str),
            r.efficiency_definition
        ),
        None => println!("signal vs background efficiency: undefined (empty signal or background)"),
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Generate {
            mode,
            per_class,
            seed,
            spec,
            out,
        } => {
            let mut gen = match spec {
                Some(path) => {
                    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
                    toml::from_str::<GeneratorSpec>(&text).map_err(|e| PipelineError::ConfigParse {
                        path,
                        message: e.to_string(),
                    })?
                }
                None => GeneratorSpec::default(),
            };
            gen.seed = seed;
            let (header, events) = pipeline::generate(mode.into(), &gen, per_class)?;
            pipeline::write_events(&out, &header, &events)?;
            println!(
                "wrote {} events ({} classes) to {}",
                events.len(),
                header.class_names.len(),
                out.display()
            );
        }
        Command::Ingest { file, lenient, json } => {
            let f = fs::File::open(&file).with_context(|| format!("opening {}", file.display()))?;
            let report = ingest::summarize(f).map_err(PipelineError::from)?;
            if json {
                print_json(&report);
            } else {
                println!("source: {}", report.source);
                println!("parsed: {}", report.parsed);
                println!("rejected: {}", report.rejected);
                println!("unknown fields: {}", report.unknown_field_warnings);
                for (name, count) in report.class_names.iter().zip(&report.class_counts) {
                    println!("  {name}: {count}");
                }
            }
            for v in &report.first_violations {
                eprintln!("rejected: {v}");
            }
            if report.rejected > 0 && !lenient {
                return Err(Failure::Validation(format!("{} record(s) rejected", report.rejected)));
            }
        }
        Command::Render {
            config,
            threads,
            dry_run,
        } => {
            let cfg = config.load()?;
            let s = pipeline::run_render(&cfg, &RunOptions { threads, dry_run })?;
            print_json(&s);
        }
        Command::TrainFfn { config, epochs } => {
            let mut cfg = config.load()?;
            if let Some(e) = epochs {
                cfg.mlp.epochs = e;
            }
            let s = pipeline::run_train(&cfg)?;
            print_json(&s);
        }
        Command::Evaluate { config } => {
            let cfg = config.load()?;
            print_report(&pipeline::run_evaluate(&cfg)?);
        }
        Command::Report {
            predictions,
            manifest,
            signal_class,
            out,
        } => {
            print_report(&pipeline::run_report(&predictions, &manifest, signal_class, &out)?);
        }
        Command::Run { config, threads } => {
            let cfg = config.load()?;
            let r = pipeline::run_render(
                &cfg,
                &RunOptions {
                    threads,
                    dry_run: false,
                },
            )?;
            println!("rendered {} images", r.images_written);
            let t = pipeline::run_train(&cfg)?;
            println!("trained {} epochs", t.epochs_run);
            print_report(&pipeline::run_evaluate(&cfg)?);
        }
        Command::ShowConfig { config } => {
            let cfg = config.load()?.resolve()?;
            print!("{}", cfg.to_toml()?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Pipeline(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
        Err(Failure::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Other(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
