//! The TOML run configuration: one document merging model, training,
//! curation, VAD, synthesis, experiment, and path settings. Unknown keys are
//! rejected; CLI flags override file values; one master seed feeds every
//! subsystem (streams are separated by FNV-1a hashing of labeled names).

use serde::{Deserialize, Serialize};
use speechtraits_core::curation::CurationParams;
use speechtraits_core::experiment::ExperimentKind;
use speechtraits_core::model::ModelConfig;
use speechtraits_core::rng;
use speechtraits_core::synth::SynthSpec;
use speechtraits_core::train::TrainConfig;
use speechtraits_core::vad::VadConfig;
use std::path::{Path, PathBuf};

use crate::error::{CliError, CliResult};

pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Input and output locations.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Where outputs are written.
    pub out_dir: Option<PathBuf>,
    /// Input manifest for curation.
    pub manifest: Option<PathBuf>,
    /// Root directory holding the audio referenced by manifests.
    pub audio_dir: Option<PathBuf>,
    /// Directory holding `train.csv` / `devel.csv` / `test.csv`.
    pub splits_dir: Option<PathBuf>,
}

/// Experiment-specific settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub kind: Option<ExperimentKind>,
    /// Depths for the layer sweep.
    pub layer_counts: Vec<usize>,
    /// Initialization seeds averaged over in the sweep.
    pub sweep_seeds: Vec<u64>,
    /// Second corpus for the cross-corpus experiment.
    pub shifted: Option<SynthSpec>,
    /// Epoch override for experiment training runs.
    pub epochs: Option<usize>,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            kind: None,
            layer_counts: vec![1, 2, 4],
            sweep_seeds: vec![0, 1, 2],
            shifted: None,
            epochs: None,
        }
    }
}

/// The full run configuration document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; when set it overrides every subsystem seed.
    pub seed: Option<u64>,
    /// Worker bound; this implementation is serial, values > 1 are accepted
    /// and treated as 1.
    pub threads: usize,
    /// Base model preset: `toy` or `paper_scale`.
    pub model_preset: String,
    /// Full model override; wins over the preset when present.
    pub model: Option<ModelConfig>,
    /// Transformer depth override applied after preset/model selection.
    pub num_layers: Option<usize>,
    /// Dropout override applied after preset/model selection.
    pub dropout_rate: Option<f64>,
    pub train: TrainConfig,
    pub curation: CurationParams,
    pub vad: VadConfig,
    /// Synthetic corpus to generate / train against.
    pub synth: Option<SynthSpec>,
    pub experiment: ExperimentSection,
    pub paths: Paths,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: None,
            threads: 1,
            model_preset: "toy".to_string(),
            model: None,
            num_layers: None,
            dropout_rate: None,
            train: TrainConfig::default(),
            curation: CurationParams::default(),
            vad: VadConfig::default(),
            synth: None,
            experiment: ExperimentSection::default(),
            paths: Paths::default(),
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let config: RunConfig = toml::from_str(&text)
            .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
        Ok(config)
    }

    /// Resolve the effective model configuration from preset + overrides.
    pub fn model_config(&self) -> CliResult<ModelConfig> {
        let mut config = match self.model.clone() {
            Some(m) => m,
            None => match self.model_preset.as_str() {
                "toy" => ModelConfig::toy(),
                "paper_scale" => ModelConfig::paper_scale(),
                other => {
                    return Err(CliError::Usage(format!(
                        "unknown model_preset `{other}`; expected `toy` or `paper_scale`"
                    )))
                }
            },
        };
        if let Some(n) = self.num_layers {
            config.num_layers = n;
        }
        if let Some(d) = self.dropout_rate {
            config.dropout_rate = d;
        }
        config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(config)
    }

    /// Propagate the master seed into every subsystem and validate the
    /// schema-level constraints. Called once, before any work.
    pub fn resolve(&mut self, seed_flag: Option<u64>, threads_flag: Option<usize>) -> CliResult<()> {
        if let Some(s) = seed_flag {
            self.seed = Some(s);
        }
        if let Some(t) = threads_flag {
            self.threads = t;
        }
        if self.threads == 0 {
            return Err(CliError::Usage("threads must be >= 1".to_string()));
        }
        if let Some(s) = self.seed {
            self.train.seed = s;
            self.curation.seed = s;
            if let Some(synth) = self.synth.as_mut() {
                synth.seed = s;
            }
            if let Some(shifted) = self.experiment.shifted.as_mut() {
                // The shifted corpus gets its own derived stream so the two
                // corpora never share waveforms.
                shifted.seed = rng::fnv1a(b"shifted-corpus") ^ s;
            }
        }
        self.model_config()?;
        self.train.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        self.vad.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        if let Some(synth) = &self.synth {
            synth.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        }
        Ok(())
    }

    /// Stable hash of the effective configuration, for provenance headers.
    pub fn config_hash(&self) -> String {
        let text = toml::to_string(self).expect("config serializes");
        format!("{:016x}", rng::fnv1a(text.as_bytes()))
    }

    /// Provenance line placed at the top of every produced file.
    pub fn provenance_line(&self) -> String {
        format!(
            "# speechtraits v{ARTIFACT_VERSION} config_hash={} seed={}",
            self.config_hash(),
            self.seed.unwrap_or(0)
        )
    }
}
