//! `speechtraits` — reproducible curation, training, evaluation, cost
//! accounting, and experiments for the speaker age/gender model.

use clap::{Parser, Subcommand};
use speechtraits::commands;
use speechtraits::config::RunConfig;
use speechtraits::error::{CliError, CliResult};
use speechtraits_core::experiment::ExperimentKind;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "speechtraits",
    version,
    about = "Speaker age and gender modelling toolkit"
)]
struct Cli {
    /// Master seed; overrides every subsystem seed in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker bound (this build is serial; values > 1 are accepted).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Cap, balance, and split a manifest into speaker-disjoint lists.
    Curate {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Per-speaker sample cap.
        #[arg(long)]
        cap: Option<usize>,
        /// Maximum speakers per (decade, gender) cell.
        #[arg(long)]
        cell_max: Option<usize>,
        /// Test speakers per (decade, gender) cell.
        #[arg(long)]
        cell_test: Option<usize>,
        /// Fraction of training speakers moved to the development split.
        #[arg(long)]
        dev_frac: Option<f64>,
    },
    /// Generate the configured synthetic corpus as WAV files + manifest.
    Synth {
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Fine-tune and keep the best development-set checkpoint.
    Train {
        #[arg(long)]
        out_dir: PathBuf,
        /// Transformer depth override.
        #[arg(long)]
        layers: Option<usize>,
    },
    /// Evaluate a checkpoint on a split file.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        split: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Root directory holding the audio referenced by the split.
        #[arg(long)]
        audio_dir: Option<PathBuf>,
    },
    /// Report parameter and MAC counts for the configured model.
    Cost {
        /// Input duration in seconds for the MAC count.
        #[arg(long, default_value_t = 3.0)]
        duration_s: f64,
        /// Model preset override: `toy` or `paper_scale`.
        #[arg(long)]
        preset: Option<String>,
        /// Transformer depth override.
        #[arg(long)]
        layers: Option<usize>,
    },
    /// Run a packaged experiment and emit its result table as CSV.
    Experiment {
        #[arg(long)]
        out_dir: PathBuf,
        /// combined_vs_single, layer_sweep, or cross_corpus.
        #[arg(long)]
        kind: Option<String>,
    },
}

fn parse_kind(s: &str) -> CliResult<ExperimentKind> {
    match s {
        "combined_vs_single" => Ok(ExperimentKind::CombinedVsSingle),
        "layer_sweep" => Ok(ExperimentKind::LayerSweep),
        "cross_corpus" => Ok(ExperimentKind::CrossCorpus),
        other => Err(CliError::Usage(format!(
            "unknown experiment kind `{other}`; expected combined_vs_single, layer_sweep, or cross_corpus"
        ))),
    }
}

fn run(cli: Cli) -> CliResult<String> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };

    // Subcommand flags override config fields before seed resolution.
    match &cli.command {
        Command::Curate {
            cap,
            cell_max,
            cell_test,
            dev_frac,
            ..
        } => {
            if let Some(v) = cap {
                config.curation.cap = *v;
            }
            if let Some(v) = cell_max {
                config.curation.cell_max = *v;
            }
            if let Some(v) = cell_test {
                config.curation.cell_test = *v;
            }
            if let Some(v) = dev_frac {
                config.curation.dev_fraction = *v;
            }
        }
        Command::Train { layers, .. } => {
            if let Some(n) = layers {
                config.num_layers = Some(*n);
            }
        }
        Command::Cost { preset, layers, .. } => {
            if let Some(p) = preset {
                config.model_preset = p.clone();
                config.model = None;
            }
            if let Some(n) = layers {
                config.num_layers = Some(*n);
            }
        }
        Command::Eval { audio_dir, .. } => {
            if let Some(dir) = audio_dir {
                config.paths.audio_dir = Some(dir.clone());
            }
        }
        _ => {}
    }
    config.resolve(cli.seed, cli.threads)?;

    match &cli.command {
        Command::Curate {
            manifest, out_dir, ..
        } => commands::cmd_curate(&config, manifest, out_dir),
        Command::Synth { out_dir } => commands::cmd_synth(&config, out_dir),
        Command::Train { out_dir, .. } => commands::cmd_train(&config, out_dir),
        Command::Eval {
            checkpoint,
            split,
            out_dir,
            ..
        } => commands::cmd_eval(&config, checkpoint, split, out_dir),
        Command::Cost { duration_s, .. } => commands::cmd_cost(&config, *duration_s),
        Command::Experiment { out_dir, kind } => {
            let kind = match (kind, config.experiment.kind) {
                (Some(s), _) => parse_kind(s)?,
                (None, Some(k)) => k,
                (None, None) => {
                    return Err(CliError::Usage(
                        "no experiment kind: pass --kind or set experiment.kind".to_string(),
                    ))
                }
            };
            commands::cmd_experiment(&config, kind, out_dir)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(output) => {
            print!("{output}");
            if !output.ends_with('\n') {
                println!();
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
