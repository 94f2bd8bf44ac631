//! Subcommand implementations. Each command takes an already-resolved
//! [`RunConfig`] plus its own positional inputs, writes its outputs under an
//! output directory, and returns the text to print on success.

use speechtraits_core::cost::{count_macs, count_params, CostReport};
use speechtraits_core::curation::{curate, SampleRecord};
use speechtraits_core::experiment::{
    run_combined_vs_single, run_cross_corpus, run_layer_sweep, ExperimentConfig, ExperimentKind,
    ReportTable,
};
use speechtraits_core::model::Model;
use speechtraits_core::synth::{generate_synth_corpus, SynthCorpus};
use speechtraits_core::train::{evaluate_split, train, TrainData, WaveformSource};
use std::path::Path;

use crate::checkpoint;
use crate::config::{RunConfig, ARTIFACT_VERSION};
use crate::error::{io_err, CliError, CliResult};
use crate::io;

fn provenance(config: &RunConfig) -> checkpoint::Provenance {
    checkpoint::Provenance {
        version: ARTIFACT_VERSION.to_string(),
        config_hash: config.config_hash(),
        seed: config.seed.unwrap_or(0),
    }
}

/// Curate a manifest into speaker-disjoint split lists plus a summary.
pub fn cmd_curate(config: &RunConfig, manifest: &Path, out_dir: &Path) -> CliResult<String> {
    if !manifest.exists() {
        // A missing input file is a usage error by the exit-status contract.
        return Err(CliError::Usage(format!(
            "manifest not found: {}",
            manifest.display()
        )));
    }
    let records = io::load_manifest(manifest)?;
    let splits = curate(&records, &config.curation)?;
    io::emit_split_lists(&splits, out_dir, &config.provenance_line())?;
    Ok(splits.summary())
}

/// Generate the configured synthetic corpus: WAV files plus a manifest.
pub fn cmd_synth(config: &RunConfig, out_dir: &Path) -> CliResult<String> {
    let spec = config
        .synth
        .as_ref()
        .ok_or_else(|| CliError::Usage("synth requires a [synth] config section".to_string()))?;
    let corpus = generate_synth_corpus(spec)?;
    let audio_dir = out_dir.join("audio");
    std::fs::create_dir_all(&audio_dir).map_err(|e| io_err(&audio_dir, e))?;
    io::write_corpus_audio(&corpus, &audio_dir)?;
    io::write_manifest(
        &out_dir.join("manifest.csv"),
        &corpus.records,
        &config.provenance_line(),
    )?;
    Ok(format!(
        "wrote {} samples ({} speakers) under {}",
        corpus.records.len(),
        spec.total_speakers(),
        out_dir.display()
    ))
}

/// Split lists plus the waveform source backing them. The synthetic corpus
/// is kept in memory when no audio directory is involved.
enum SourceKind {
    Dir(io::DirSource),
    Memory(SynthCorpus),
}

impl SourceKind {
    fn as_source(&self) -> &dyn WaveformSource {
        match self {
            SourceKind::Dir(s) => s,
            SourceKind::Memory(c) => c,
        }
    }
}

struct ResolvedData {
    train: Vec<SampleRecord>,
    devel: Vec<SampleRecord>,
    test: Vec<SampleRecord>,
    source: SourceKind,
}

/// Assemble splits and a waveform source from paths or the synth section.
fn resolve_data(config: &RunConfig, sample_rate: u32) -> CliResult<ResolvedData> {
    let (train, devel, test) = match &config.paths.splits_dir {
        Some(dir) => (
            io::load_manifest(&dir.join("train.csv"))?,
            io::load_manifest(&dir.join("devel.csv"))?,
            io::load_manifest(&dir.join("test.csv"))?,
        ),
        None => {
            let spec = config.synth.as_ref().ok_or_else(|| {
                CliError::Usage(
                    "training needs either paths.splits_dir or a [synth] section".to_string(),
                )
            })?;
            let corpus = generate_synth_corpus(spec)?;
            let splits = curate(&corpus.records, &config.curation)?;
            let source = match &config.paths.audio_dir {
                Some(root) => SourceKind::Dir(io::DirSource::new(root.clone(), sample_rate)),
                None => SourceKind::Memory(corpus),
            };
            return Ok(ResolvedData {
                train: splits.train,
                devel: splits.devel,
                test: splits.test,
                source,
            });
        }
    };
    let source = match &config.paths.audio_dir {
        Some(root) => SourceKind::Dir(io::DirSource::new(root.clone(), sample_rate)),
        None => {
            let spec = config.synth.as_ref().ok_or_else(|| {
                CliError::Usage(
                    "training needs either paths.audio_dir or a [synth] section".to_string(),
                )
            })?;
            SourceKind::Memory(generate_synth_corpus(spec)?)
        }
    };
    Ok(ResolvedData {
        train,
        devel,
        test,
        source,
    })
}

/// Fine-tune, keep the best-dev checkpoint, and report on the test split.
pub fn cmd_train(config: &RunConfig, out_dir: &Path) -> CliResult<String> {
    let model_config = config.model_config()?;
    let data = resolve_data(config, model_config.sample_rate)?;
    let layers = model_config.num_layers;
    let model = Model::build(model_config, config.train.seed).map_err(CliError::from)?;
    let outcome = train(
        &model,
        &TrainData {
            train: &data.train,
            devel: &data.devel,
            source: data.source.as_source(),
        },
        &config.train,
    )
    .map_err(CliError::from)?;

    std::fs::create_dir_all(out_dir).map_err(|e| io_err(out_dir, e))?;
    let line = config.provenance_line();
    io::write_history(&out_dir.join("history.csv"), &outcome.history, &line, layers)?;
    checkpoint::save(
        &out_dir.join("checkpoint.bin"),
        &outcome.best_model,
        Some((&outcome.final_state, outcome.best_epoch, outcome.best_score)),
        &provenance(config),
    )?;
    if !data.test.is_empty() {
        let report = evaluate_split(&outcome.best_model, &data.test, data.source.as_source())
            .map_err(CliError::from)?;
        io::write_report(out_dir, "eval_test", &report, &cost_extras(config)?, &line)?;
    }
    Ok(format!(
        "best epoch {} (dev score {:.4}); outputs under {}",
        outcome.best_epoch,
        outcome.best_score,
        out_dir.display()
    ))
}

/// Parameter/MAC key-value lines appended to evaluation reports.
fn cost_extras(config: &RunConfig) -> CliResult<Vec<(String, String)>> {
    let model_config = config.model_config()?;
    let params = count_params(&model_config).map_err(CliError::from)?;
    let macs = count_macs(&model_config, 3.0).map_err(CliError::from)?;
    Ok(vec![
        ("total_params".to_string(), params.total_params.to_string()),
        ("total_macs_3s".to_string(), macs.total_macs.to_string()),
    ])
}

/// Evaluate a checkpoint on a split file.
pub fn cmd_eval(
    config: &RunConfig,
    checkpoint_path: &Path,
    split: &Path,
    out_dir: &Path,
) -> CliResult<String> {
    let loaded = checkpoint::load(checkpoint_path)?;
    let records = io::load_manifest(split)?;
    let sample_rate = loaded.model.config.sample_rate;
    let source: SourceKind = match &config.paths.audio_dir {
        Some(root) => SourceKind::Dir(io::DirSource::new(root.clone(), sample_rate)),
        None => {
            let spec = config.synth.as_ref().ok_or_else(|| {
                CliError::Usage(
                    "eval needs either paths.audio_dir or a [synth] section".to_string(),
                )
            })?;
            SourceKind::Memory(generate_synth_corpus(spec)?)
        }
    };
    let report =
        evaluate_split(&loaded.model, &records, source.as_source()).map_err(CliError::from)?;
    let params = count_params(&loaded.model.config).map_err(CliError::from)?;
    let macs = count_macs(&loaded.model.config, 3.0).map_err(CliError::from)?;
    let extras = vec![
        ("total_params".to_string(), params.total_params.to_string()),
        ("total_macs_3s".to_string(), macs.total_macs.to_string()),
    ];
    let stem = format!(
        "eval_{}",
        split
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("split")
    );
    io::write_report(out_dir, &stem, &report, &extras, &config.provenance_line())?;
    let mut text = report.to_key_value();
    for (k, v) in &extras {
        text.push_str(&format!("{k} {v}\n"));
    }
    Ok(text)
}

/// Render parameter and MAC totals with per-block breakdowns.
pub fn cmd_cost(config: &RunConfig, duration_s: f64) -> CliResult<String> {
    let model_config = config.model_config()?;
    let params = count_params(&model_config).map_err(CliError::from)?;
    let macs = count_macs(&model_config, duration_s).map_err(CliError::from)?;
    let merged = CostReport {
        total_params: params.total_params,
        params_by_block: params.params_by_block,
        total_macs: macs.total_macs,
        macs_by_block: macs.macs_by_block,
    };
    Ok(merged.render())
}

/// Run one of the three packaged experiments and emit its table as CSV.
pub fn cmd_experiment(
    config: &RunConfig,
    kind: ExperimentKind,
    out_dir: &Path,
) -> CliResult<String> {
    let spec = config.synth.as_ref().ok_or_else(|| {
        CliError::Usage("experiments require a [synth] config section".to_string())
    })?;
    let mut train_config = config.train.clone();
    if let Some(epochs) = config.experiment.epochs {
        train_config.epochs = epochs;
    }
    let experiment = ExperimentConfig {
        model: config.model_config()?,
        train: train_config,
        curation: config.curation.clone(),
        corpus: spec.clone(),
        shifted_corpus: config.experiment.shifted.clone(),
        layer_counts: config.experiment.layer_counts.clone(),
        sweep_seeds: config.experiment.sweep_seeds.clone(),
    };
    let (name, table): (&str, ReportTable) = match kind {
        ExperimentKind::CombinedVsSingle => (
            "combined_vs_single",
            run_combined_vs_single(&experiment).map_err(CliError::from)?.table,
        ),
        ExperimentKind::LayerSweep => (
            "layer_sweep",
            run_layer_sweep(&experiment).map_err(CliError::from)?.table,
        ),
        ExperimentKind::CrossCorpus => {
            let result = run_cross_corpus(&experiment).map_err(CliError::from)?;
            ("cross_corpus", result.table)
        }
    };
    std::fs::create_dir_all(out_dir).map_err(|e| io_err(out_dir, e))?;
    let path = out_dir.join(format!("experiment_{name}.csv"));
    let text = format!("{}\n{}", config.provenance_line(), table.to_csv());
    std::fs::write(&path, &text).map_err(|e| io_err(&path, e))?;
    Ok(text)
}
