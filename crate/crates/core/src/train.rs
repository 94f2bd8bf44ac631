//! Joint fine-tuning loop: ADAM at a fixed learning rate, per-epoch dev
//! evaluation, and selection of the checkpoint with the best development
//! score. The convolutional feature stage stays frozen throughout.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::curation::SampleRecord;
use crate::loss;
use crate::metrics::{self, EvalReport};
use crate::model::{Mode, Model};
use crate::rng;
use crate::synth::SynthCorpus;
use crate::tensor::{Graph, Tensor};
use crate::{Error, Result};

/// Development metric used for checkpoint selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMetric {
    /// Mean of dev CCC (age) and dev UAR (gender), over the heads present.
    DevCombined,
    DevCcc,
    DevUar,
}

/// Optimizer and loop hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub selection_metric: SelectionMetric,
    /// Opt-in global gradient-norm clip; off by default.
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            epochs: 5,
            batch_size: 64,
            seed: 0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            selection_metric: SelectionMetric::DevCombined,
            grad_clip: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig {
                field: "learning_rate",
                message: format!("{} must be > 0", self.learning_rate),
            });
        }
        if self.epochs == 0 {
            return Err(Error::InvalidConfig {
                field: "epochs",
                message: "must be >= 1".to_string(),
            });
        }
        if self.batch_size < 2 {
            return Err(Error::InvalidConfig {
                field: "batch_size",
                message: "must be >= 2 (CCC needs at least two samples per batch)".to_string(),
            });
        }
        Ok(())
    }
}

/// ADAM moments per trainable parameter, plus the step counter.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainState {
    pub step: u64,
    /// `(first moment, second moment)` keyed by parameter index; entries
    /// exist only for trainable parameters.
    pub moments: BTreeMap<usize, (Vec<f64>, Vec<f64>)>,
}

impl TrainState {
    pub fn new(model: &Model) -> Self {
        let mut moments = BTreeMap::new();
        for (i, p) in model.params.iter().enumerate() {
            if p.trainable {
                moments.insert(i, (alloc::vec![0.0; p.tensor.len()], alloc::vec![0.0; p.tensor.len()]));
            }
        }
        TrainState { step: 0, moments }
    }
}

/// One bias-corrected ADAM update over the trainable parameters. Gradients
/// are keyed by parameter index; missing entries are treated as zero (their
/// moments still decay). A non-finite gradient rejects the whole step.
pub fn adam_step(
    model: &mut Model,
    grads: &BTreeMap<usize, Vec<f64>>,
    state: &mut TrainState,
    config: &TrainConfig,
) -> Result<()> {
    for (&idx, grad) in grads {
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient {
                param: model.params[idx].name.clone(),
            });
        }
        if !model.params[idx].trainable {
            return Err(Error::InvalidArgument(format!(
                "adam_step: gradient supplied for frozen parameter `{}`",
                model.params[idx].name
            )));
        }
    }
    let clip_scale = match config.grad_clip {
        Some(max_norm) => {
            let sq: f64 = grads.values().flatten().map(|g| g * g).sum();
            let norm = crate::fmath::sqrt(sq);
            if norm > max_norm {
                max_norm / norm
            } else {
                1.0
            }
        }
        None => 1.0,
    };
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - crate::fmath::pow(config.adam_beta1, t as f64);
    let bc2 = 1.0 - crate::fmath::pow(config.adam_beta2, t as f64);
    let zero: Vec<f64> = Vec::new();
    for (&idx, (m, v)) in state.moments.iter_mut() {
        let grad = grads.get(&idx).unwrap_or(&zero);
        let values = model.params[idx].tensor.values_mut();
        for i in 0..values.len() {
            let g = grad.get(i).copied().unwrap_or(0.0) * clip_scale;
            m[i] = config.adam_beta1 * m[i] + (1.0 - config.adam_beta1) * g;
            v[i] = config.adam_beta2 * v[i] + (1.0 - config.adam_beta2) * g * g;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            values[i] -= config.learning_rate * m_hat / (crate::fmath::sqrt(v_hat) + config.adam_eps);
        }
    }
    Ok(())
}

/// Source of waveforms for manifest records.
pub trait WaveformSource {
    fn load(&self, record: &SampleRecord) -> Result<Vec<f64>>;
}

impl WaveformSource for SynthCorpus {
    fn load(&self, record: &SampleRecord) -> Result<Vec<f64>> {
        self.waveforms
            .get(&record.file_path)
            .cloned()
            .ok_or_else(|| Error::InvalidArgument(format!("no waveform for `{}`", record.file_path)))
    }
}

/// Training inputs: manifest splits plus the audio source behind them.
pub struct TrainData<'a> {
    pub train: &'a [SampleRecord],
    pub devel: &'a [SampleRecord],
    pub source: &'a dyn WaveformSource,
}

/// Per-epoch history row.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_mae_years: Option<f64>,
    pub dev_ccc: Option<f64>,
    pub dev_uar: Option<f64>,
    pub selected: bool,
}

/// Outcome of a training run: the dev-selected checkpoint and bookkeeping.
pub struct TrainOutcome {
    pub best_model: Model,
    pub best_epoch: usize,
    pub best_score: f64,
    pub history: Vec<EpochRecord>,
    pub final_state: TrainState,
}

/// Render history rows as CSV.
pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,train_loss,dev_mae_years,dev_ccc,dev_uar,selected\n");
    let fmt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
    for h in history {
        out.push_str(&format!(
            "{},{:.6},{},{},{},{}\n",
            h.epoch,
            h.train_loss,
            fmt(h.dev_mae_years),
            fmt(h.dev_ccc),
            fmt(h.dev_uar),
            h.selected
        ));
    }
    out
}

/// Eval-mode predictions and metrics for a record list.
pub fn evaluate_split(
    model: &Model,
    records: &[SampleRecord],
    source: &dyn WaveformSource,
) -> Result<EvalReport> {
    let preds = predict_split(model, records, source)?;
    let truths: Vec<(f64, metrics::GenderLabel)> = records
        .iter()
        .map(|r| (r.age_years as f64, r.gender))
        .collect();
    metrics::evaluate(&preds, &truths)
}

/// Eval-mode predictions for a record list.
pub fn predict_split(
    model: &Model,
    records: &[SampleRecord],
    source: &dyn WaveformSource,
) -> Result<Vec<crate::model::Prediction>> {
    records
        .iter()
        .map(|r| {
            let wave = source.load(r)?;
            model.forward(&wave, Mode::Eval, None)
        })
        .collect()
}

fn selection_score(metric: SelectionMetric, report: &EvalReport) -> f64 {
    match metric {
        SelectionMetric::DevCcc => report.ccc.unwrap_or(0.0),
        SelectionMetric::DevUar => report.gender_uar.unwrap_or(0.0),
        SelectionMetric::DevCombined => {
            let parts: Vec<f64> = [report.ccc, report.gender_uar].into_iter().flatten().collect();
            if parts.is_empty() {
                0.0
            } else {
                parts.iter().sum::<f64>() / parts.len() as f64
            }
        }
    }
}

/// Run the fine-tuning loop and return the checkpoint that maximizes the
/// selection metric on the development set (ties break to the earliest
/// epoch). Deterministic for fixed `(data, config, seed)`.
pub fn train(model: &Model, data: &TrainData, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if data.train.is_empty() || data.devel.is_empty() {
        return Err(Error::InvalidArgument(
            "train: train and devel splits must be nonempty".to_string(),
        ));
    }
    let mut working = model.clone();
    let mut state = TrainState::new(&working);
    let mut history: Vec<EpochRecord> = Vec::new();
    let mut best: Option<(usize, f64, Model)> = None;

    for epoch in 1..=config.epochs {
        let mut order: Vec<usize> = (0..data.train.len()).collect();
        let mut shuffle_rng = rng::derive(config.seed, &format!("shuffle:{epoch}"));
        rng::shuffle(&mut shuffle_rng, &mut order);
        let mut dropout_rng = rng::derive(config.seed, &format!("dropout:{epoch}"));

        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            // CCC needs variance; a trailing singleton batch is dropped.
            if chunk.len() < 2 {
                continue;
            }
            let records: Vec<&SampleRecord> = chunk.iter().map(|&i| &data.train[i]).collect();
            let waves: Vec<Vec<f64>> = records
                .iter()
                .map(|r| data.source.load(r))
                .collect::<Result<_>>()?;
            let wave_refs: Vec<&[f64]> = waves.iter().map(|w| w.as_slice()).collect();

            let mut g = Graph::new();
            let out = working.forward_batch(&mut g, &wave_refs, Mode::Train, Some(&mut dropout_rng))?;

            let age_loss = match out.age {
                Some(age) => {
                    let targets: Vec<f64> =
                        records.iter().map(|r| r.age_years as f64 / 100.0).collect();
                    let t = g.constant(Tensor::vector(targets));
                    Some(loss::ccc_loss(&mut g, age, t)?)
                }
                None => None,
            };
            let gender_loss = match out.gender_logits {
                Some(logits) => {
                    let labels: Vec<usize> = records.iter().map(|r| r.gender.index()).collect();
                    Some(loss::ce_loss(&mut g, logits, &labels)?)
                }
                None => None,
            };
            let total = match (age_loss, gender_loss) {
                (Some(a), Some(gl)) => loss::combined_loss(&mut g, a, gl)?,
                (Some(a), None) => a,
                (None, Some(gl)) => gl,
                (None, None) => {
                    return Err(Error::InvalidArgument("train: model has no heads".to_string()))
                }
            };
            let loss_value = g.value(total).values()[0];
            if !loss_value.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "train: non-finite loss at epoch {epoch}, aborting"
                )));
            }
            g.backward(total)?;

            let mut grads: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
            for &(idx, node) in &out.param_nodes {
                if working.params[idx].trainable {
                    if let Some(grad) = g.grad(node) {
                        grads.insert(idx, grad.values().to_vec());
                    }
                }
            }
            adam_step(&mut working, &grads, &mut state, config)?;
            loss_sum += loss_value;
            batches += 1;
        }
        if batches == 0 {
            return Err(Error::InvalidArgument(
                "train: no batch had the required two samples".to_string(),
            ));
        }

        let report = evaluate_split(&working, data.devel, data.source)?;
        let score = selection_score(config.selection_metric, &report);
        let is_better = match &best {
            None => true,
            Some((_, best_score, _)) => score > *best_score,
        };
        if is_better {
            best = Some((epoch, score, working.clone()));
        }
        history.push(EpochRecord {
            epoch,
            train_loss: loss_sum / batches as f64,
            dev_mae_years: report.mae_years,
            dev_ccc: report.ccc,
            dev_uar: report.gender_uar,
            selected: false,
        });
    }

    let (best_epoch, best_score, best_model) = best.expect("at least one epoch ran");
    for h in history.iter_mut() {
        h.selected = h.epoch == best_epoch;
    }
    Ok(TrainOutcome {
        best_model,
        best_epoch,
        best_score,
        history,
        final_state: state,
    })
}
