use std::path::PathBuf;
use std::process::ExitCode;

use ale_cli::bench_cmd::{self, GenerateArgs, RunArgs};
use ale_cli::config::{CliConfig, Overrides, CONFIG_ENV};
use ale_cli::{edit, report, CliError};
use ale_core::{BackendKind, EditType, EosStrategy};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "ale", version, about = "Multi-object image editing without attribute leakage")]
struct Cli {
    /// TOML config file, or a JSON sidecar from a previous edit.
    #[arg(long, global = true, env = CONFIG_ENV)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Edit one image.
    Edit(EditArgs),
    /// Benchmark scenario generation, runs and reports.
    #[command(subcommand)]
    Bench(BenchCommand),
}

#[derive(Args)]
struct EditArgs {
    #[arg(long)]
    image: PathBuf,
    /// Object prompt pair "source->target"; repeat once per object, in mask order.
    #[arg(long = "pair", required = true)]
    pairs: Vec<String>,
    /// Attribute-free prompt per object, used by `--eos-strategy ets`.
    #[arg(long = "stripped")]
    stripped: Vec<String>,
    /// Directory holding `<image stem>_obj<i>.png`.
    #[arg(long)]
    masks: Option<PathBuf>,
    #[arg(long)]
    segmenter_endpoint: Option<String>,
    #[command(flatten)]
    common: CommonFlags,
}

#[derive(Args)]
struct CommonFlags {
    #[arg(long)]
    steps: Option<usize>,
    /// Fraction of steps with self-attention injection.
    #[arg(long)]
    schedule: Option<f64>,
    #[arg(long, value_parser = parse_edit_type)]
    edit_type: Option<EditType>,
    #[arg(long, value_parser = parse_eos)]
    eos_strategy: Option<EosStrategy>,
    /// Mask dilation as a fraction of the image side.
    #[arg(long)]
    dilation: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = parse_backend)]
    backend: Option<BackendKind>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    debug: bool,
}

#[derive(Subcommand)]
enum BenchCommand {
    /// Write the scenario list for a manifest.
    Generate {
        #[arg(long)]
        manifest: PathBuf,
        /// JSON or YAML with `colors`, `objects` and `materials` lists.
        #[arg(long)]
        dictionaries: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "scenarios.json")]
        out: PathBuf,
        #[arg(long = "image")]
        images: Vec<String>,
        #[arg(long = "edit-type", value_parser = parse_edit_type)]
        edit_types: Vec<EditType>,
        #[arg(long = "k")]
        ks: Vec<usize>,
    },
    /// Edit and score scenarios; finished scenarios are skipped.
    Run {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "scenarios.json")]
        scenarios: PathBuf,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// Redo scenarios that already have a report.
        #[arg(long)]
        no_resume: bool,
        #[command(flatten)]
        common: CommonFlags,
    },
    /// Print per-type and per-K tables.
    Report {
        #[arg(long, default_value = "ale-out")]
        out: PathBuf,
    },
}

fn parse_edit_type(s: &str) -> Result<EditType, String> {
    s.parse().map_err(|e: ale_core::ConfigError| e.to_string())
}

fn parse_eos(s: &str) -> Result<EosStrategy, String> {
    s.parse().map_err(|e: ale_core::PromptError| e.to_string())
}

fn parse_backend(s: &str) -> Result<BackendKind, String> {
    s.parse().map_err(|e: ale_core::BackendError| e.to_string())
}

impl CommonFlags {
    fn overrides(&self) -> Overrides {
        Overrides {
            backend: self.backend,
            out: self.out.clone(),
            steps: self.steps,
            schedule: self.schedule,
            edit_type: self.edit_type,
            eos_strategy: self.eos_strategy,
            dilation: self.dilation,
            seed: self.seed,
            debug: self.debug,
            ..Overrides::default()
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    report(dispatch(cli))
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let file = || CliConfig::discover(cli.config.as_deref());
    match cli.command {
        Command::Edit(args) => {
            let cfg = file()?.apply(&Overrides {
                masks: args.masks.clone(),
                segmenter_endpoint: args.segmenter_endpoint.clone(),
                ..args.common.overrides()
            });
            let stripped = (!args.stripped.is_empty()).then(|| args.stripped.clone());
            let out = edit::run(&cfg, &args.image, &args.pairs, stripped)?;
            for w in &out.sidecar.warnings {
                eprintln!("warning: {w}");
            }
            println!("{}", out.paths.image.display());
            println!("{}", out.paths.sidecar.display());
            if let Some(t) = &out.paths.trace {
                println!("{}", t.display());
            }
            Ok(())
        }
        Command::Bench(BenchCommand::Generate {
            manifest,
            dictionaries,
            seed,
            out,
            images,
            edit_types,
            ks,
        }) => {
            let n = bench_cmd::generate(&GenerateArgs {
                manifest,
                dictionaries,
                seed,
                out: out.clone(),
                images,
                edit_types,
                ks,
            })?;
            println!("{n} scenarios written to {}", out.display());
            Ok(())
        }
        Command::Bench(BenchCommand::Run {
            manifest,
            scenarios,
            workers,
            no_resume,
            common,
        }) => {
            let cfg = file()?.apply(&common.overrides());
            let summary = bench_cmd::run(
                &cfg,
                &RunArgs {
                    manifest,
                    scenarios,
                    out: cfg.out.clone(),
                    workers,
                    resume: !no_resume,
                },
            )?;
            for f in &summary.failures {
                eprintln!("failed: {}: {}", f.scenario_id, f.error);
            }
            println!("{}", bench_cmd::summary_line(&summary));
            Ok(())
        }
        Command::Bench(BenchCommand::Report { out }) => {
            print!("{}", bench_cmd::report(&out)?);
            Ok(())
        }
    }
}
