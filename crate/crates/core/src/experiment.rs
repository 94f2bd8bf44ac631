//! Reproducible experiments over synthetic corpora: multi-task versus
//! single-task heads, truncation depth sweeps, and cross-corpus transfer.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::cost;
use crate::curation::{curate, CurationParams, SplitManifest};
use crate::metrics::EvalReport;
use crate::model::{Model, ModelConfig, Task};
use crate::synth::{generate_synth_corpus, SynthCorpus, SynthSpec};
use crate::train::{evaluate_split, train, TrainConfig, TrainData};
use crate::{Error, Result};

/// The supported experiment families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    /// Joint heads against age-only and gender-only baselines with an
    /// identical trunk initialization and identical data order.
    CombinedVsSingle,
    /// Accuracy and cost across transformer truncation depths.
    LayerSweep,
    /// Train on corpus A, evaluate on shifted corpus B, against an
    /// in-domain model trained on A and B together.
    CrossCorpus,
}

/// Everything an experiment needs; unused fields are ignored per kind.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub curation: CurationParams,
    pub corpus: SynthSpec,
    /// Second corpus for [`ExperimentKind::CrossCorpus`].
    pub shifted_corpus: Option<SynthSpec>,
    /// Depths for [`ExperimentKind::LayerSweep`].
    pub layer_counts: Vec<usize>,
    /// Initialization seeds averaged over in the sweep.
    pub sweep_seeds: Vec<u64>,
}

/// Column-labelled result table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl ReportTable {
    pub fn to_csv(&self) -> String {
        let mut out = self.columns.join(",");
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

/// Joint model against the two single-task baselines.
#[derive(Debug, Clone)]
pub struct CombinedVsSingleResult {
    pub combined: EvalReport,
    pub age_only: EvalReport,
    pub gender_only: EvalReport,
    pub table: ReportTable,
}

/// One depth of the truncation sweep, averaged over seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerSweepRow {
    pub layers: usize,
    pub params: u64,
    pub macs_1s: u64,
    pub mean_mae_years: f64,
    pub mean_uar: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerSweepResult {
    pub rows: Vec<LayerSweepRow>,
    pub table: ReportTable,
}

/// Transfer to a shifted corpus against an in-domain reference.
#[derive(Debug, Clone)]
pub struct CrossCorpusResult {
    /// A-trained model on A's test split.
    pub source_in_domain: EvalReport,
    /// A-trained model on B's test split.
    pub cross: EvalReport,
    /// (A ∪ B)-trained model on B's test split.
    pub target_in_domain: EvalReport,
    /// Mean predicted and mean true age on B's test split under the
    /// A-trained model, exposing the systematic transfer bias.
    pub cross_mean_pred_age: f64,
    pub cross_mean_true_age: f64,
    pub table: ReportTable,
}

fn prepare(spec: &SynthSpec, curation: &CurationParams) -> Result<(SynthCorpus, SplitManifest)> {
    let corpus = generate_synth_corpus(spec)?;
    let splits = curate(&corpus.records, curation)?;
    Ok((corpus, splits))
}

fn fmt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".to_string())
}

/// Train joint, age-only, and gender-only models from the same trunk
/// initialization on the same data, then evaluate all three on the test
/// split.
pub fn run_combined_vs_single(config: &ExperimentConfig) -> Result<CombinedVsSingleResult> {
    let (corpus, splits) = prepare(&config.corpus, &config.curation)?;
    let data = TrainData {
        train: &splits.train,
        devel: &splits.devel,
        source: &corpus,
    };
    let base = Model::build(config.model.clone(), config.train.seed)?;
    let variants = [
        ("combined", base.clone()),
        ("age_only", base.detach_head(Task::Gender)?),
        ("gender_only", base.detach_head(Task::Age)?),
    ];
    let mut reports = Vec::new();
    let mut table = ReportTable {
        columns: ["variant", "mae_years", "ccc", "gender_uar"]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        rows: Vec::new(),
    };
    for (name, model) in variants {
        let outcome = train(&model, &data, &config.train)?;
        let report = evaluate_split(&outcome.best_model, &splits.test, &corpus)?;
        table.rows.push(alloc::vec![
            name.to_string(),
            fmt(report.mae_years),
            fmt(report.ccc),
            fmt(report.gender_uar),
        ]);
        reports.push(report);
    }
    let mut it = reports.into_iter();
    Ok(CombinedVsSingleResult {
        combined: it.next().unwrap(),
        age_only: it.next().unwrap(),
        gender_only: it.next().unwrap(),
        table,
    })
}

/// Train truncated models at each requested depth and seed; report test MAE
/// and UAR averaged over seeds next to parameter and MAC counts.
pub fn run_layer_sweep(config: &ExperimentConfig) -> Result<LayerSweepResult> {
    if config.layer_counts.is_empty() || config.sweep_seeds.is_empty() {
        return Err(Error::InvalidArgument(
            "layer sweep needs at least one layer count and one seed".to_string(),
        ));
    }
    let (corpus, splits) = prepare(&config.corpus, &config.curation)?;
    let data = TrainData {
        train: &splits.train,
        devel: &splits.devel,
        source: &corpus,
    };
    let mut rows = Vec::new();
    for &layers in &config.layer_counts {
        let mut truncated_config = config.model.clone();
        truncated_config.num_layers = layers;
        let params = cost::count_params(&truncated_config)?.total_params;
        let macs_1s = cost::count_macs(&truncated_config, 1.0)?.total_macs;

        let mut mae_sum = 0.0;
        let mut uar_sum = 0.0;
        for &seed in &config.sweep_seeds {
            let full = Model::build(config.model.clone(), seed)?;
            let model = full.truncate_layers(layers)?;
            let mut train_config = config.train.clone();
            train_config.seed = seed;
            let outcome = train(&model, &data, &train_config)?;
            let report = evaluate_split(&outcome.best_model, &splits.test, &corpus)?;
            mae_sum += report.mae_years.unwrap_or(f64::NAN);
            uar_sum += report.gender_uar.unwrap_or(f64::NAN);
        }
        let n = config.sweep_seeds.len() as f64;
        rows.push(LayerSweepRow {
            layers,
            params,
            macs_1s,
            mean_mae_years: mae_sum / n,
            mean_uar: uar_sum / n,
        });
    }
    let table = ReportTable {
        columns: ["layers", "params", "macs_1s", "mean_mae_years", "mean_uar"]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        rows: rows
            .iter()
            .map(|r| {
                alloc::vec![
                    r.layers.to_string(),
                    r.params.to_string(),
                    r.macs_1s.to_string(),
                    format!("{:.4}", r.mean_mae_years),
                    format!("{:.4}", r.mean_uar),
                ]
            })
            .collect(),
    };
    Ok(LayerSweepResult { rows, table })
}

/// Merge two corpora generated at the same sample rate.
fn merge_corpora(a: &SynthCorpus, b: &SynthCorpus) -> Result<SynthCorpus> {
    if a.sample_rate != b.sample_rate {
        return Err(Error::InvalidArgument(format!(
            "cannot merge corpora with sample rates {} and {}",
            a.sample_rate, b.sample_rate
        )));
    }
    let mut merged = a.clone();
    merged.records.extend(b.records.iter().cloned());
    merged
        .waveforms
        .extend(b.waveforms.iter().map(|(k, v)| (k.clone(), v.clone())));
    Ok(merged)
}

/// Train on corpus A and evaluate on shifted corpus B, then train on A ∪ B
/// as the in-domain reference for B.
pub fn run_cross_corpus(config: &ExperimentConfig) -> Result<CrossCorpusResult> {
    let shifted = config.shifted_corpus.as_ref().ok_or_else(|| {
        Error::InvalidArgument("cross-corpus experiment needs a shifted corpus".to_string())
    })?;
    let (corpus_a, splits_a) = prepare(&config.corpus, &config.curation)?;
    let (corpus_b, splits_b) = prepare(shifted, &config.curation)?;
    let merged = merge_corpora(&corpus_a, &corpus_b)?;

    // A-trained model: in-domain on A's test, cross on B's test.
    let model = Model::build(config.model.clone(), config.train.seed)?;
    let outcome_a = train(
        &model,
        &TrainData {
            train: &splits_a.train,
            devel: &splits_a.devel,
            source: &corpus_a,
        },
        &config.train,
    )?;
    let source_in_domain = evaluate_split(&outcome_a.best_model, &splits_a.test, &corpus_a)?;
    let cross = evaluate_split(&outcome_a.best_model, &splits_b.test, &corpus_b)?;

    let cross_preds =
        crate::train::predict_split(&outcome_a.best_model, &splits_b.test, &corpus_b)?;
    let n = cross_preds.len() as f64;
    let cross_mean_pred_age = cross_preds
        .iter()
        .map(|p| p.age_years().unwrap_or(0.0))
        .sum::<f64>()
        / n;
    let cross_mean_true_age =
        splits_b.test.iter().map(|r| r.age_years as f64).sum::<f64>() / n;

    // In-domain reference: trained on the union of both training splits.
    let mut union_train = splits_a.train.clone();
    union_train.extend(splits_b.train.iter().cloned());
    let mut union_devel = splits_a.devel.clone();
    union_devel.extend(splits_b.devel.iter().cloned());
    let outcome_union = train(
        &model,
        &TrainData {
            train: &union_train,
            devel: &union_devel,
            source: &merged,
        },
        &config.train,
    )?;
    let target_in_domain = evaluate_split(&outcome_union.best_model, &splits_b.test, &merged)?;

    let table = ReportTable {
        columns: ["setting", "mae_years", "ccc", "gender_uar"]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        rows: alloc::vec![
            alloc::vec![
                "source_in_domain".to_string(),
                fmt(source_in_domain.mae_years),
                fmt(source_in_domain.ccc),
                fmt(source_in_domain.gender_uar),
            ],
            alloc::vec![
                "cross".to_string(),
                fmt(cross.mae_years),
                fmt(cross.ccc),
                fmt(cross.gender_uar),
            ],
            alloc::vec![
                "target_in_domain".to_string(),
                fmt(target_in_domain.mae_years),
                fmt(target_in_domain.ccc),
                fmt(target_in_domain.gender_uar),
            ],
        ],
    };
    Ok(CrossCorpusResult {
        source_in_domain,
        cross,
        target_in_domain,
        cross_mean_pred_age,
        cross_mean_true_age,
        table,
    })
}
