//! The encoder network: a frozen convolutional feature stage, a stack of
//! pre-norm transformer layers with multi-head self-attention, average
//! pooling over valid frames, and two task heads (age regression, 3-class
//! gender classification).
//!
//! Layers can be truncated from the top and either head can be detached,
//! preserving all retained weights verbatim.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::fmath;
use crate::metrics::GenderLabel;
use crate::rng;
use crate::tensor::{Graph, NodeId, Tensor};
use crate::{Error, Result};

/// Epsilon used by every layer norm in the network.
pub const LN_EPS: f64 = 1e-5;

/// One convolutional feature-stage layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvLayer {
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

/// Encoder and head hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Transformer depth.
    pub num_layers: usize,
    /// Model width.
    pub hidden_dim: usize,
    /// Feed-forward inner width.
    pub ffn_dim: usize,
    /// Attention heads; must divide `hidden_dim`.
    pub num_heads: usize,
    /// Hidden width of each task head.
    pub head_hidden: usize,
    /// Inverted-dropout rate applied inside the heads in training mode.
    pub dropout_rate: f64,
    /// Convolutional feature stage, applied to the raw waveform.
    pub conv_stage: Vec<ConvLayer>,
    /// Kernel of the grouped positional convolution.
    pub pos_kernel: usize,
    /// Groups of the positional convolution; must divide `hidden_dim`.
    pub pos_groups: usize,
    /// Input sample rate in Hz.
    pub sample_rate: u32,
}

impl ModelConfig {
    /// Paper-scale preset: 24 layers at width 1024, the reference 7-layer
    /// convolutional footprint with stride product 320 (one frame per 20 ms
    /// at 16 kHz), and 1024-wide heads.
    pub fn paper_scale() -> Self {
        let mut conv = vec![ConvLayer {
            channels: 512,
            kernel: 10,
            stride: 5,
        }];
        for _ in 0..4 {
            conv.push(ConvLayer {
                channels: 512,
                kernel: 3,
                stride: 2,
            });
        }
        for _ in 0..2 {
            conv.push(ConvLayer {
                channels: 512,
                kernel: 2,
                stride: 2,
            });
        }
        ModelConfig {
            num_layers: 24,
            hidden_dim: 1024,
            ffn_dim: 4096,
            num_heads: 16,
            head_hidden: 1024,
            dropout_rate: 0.1,
            conv_stage: conv,
            pos_kernel: 128,
            pos_groups: 16,
            sample_rate: 16_000,
        }
    }

    /// Small preset for desk-scale training on synthetic corpora.
    pub fn toy() -> Self {
        ModelConfig {
            num_layers: 2,
            hidden_dim: 32,
            ffn_dim: 64,
            num_heads: 4,
            head_hidden: 32,
            dropout_rate: 0.1,
            conv_stage: vec![
                ConvLayer {
                    channels: 32,
                    kernel: 10,
                    stride: 5,
                },
                ConvLayer {
                    channels: 32,
                    kernel: 4,
                    stride: 4,
                },
                ConvLayer {
                    channels: 32,
                    kernel: 4,
                    stride: 4,
                },
            ],
            pos_kernel: 9,
            pos_groups: 4,
            sample_rate: 4_000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_layers == 0 {
            return Err(Error::InvalidConfig {
                field: "num_layers",
                message: "must be >= 1".to_string(),
            });
        }
        if self.hidden_dim == 0 || self.ffn_dim == 0 || self.head_hidden == 0 {
            return Err(Error::InvalidConfig {
                field: "hidden_dim",
                message: "widths must be >= 1".to_string(),
            });
        }
        if self.num_heads == 0 || self.hidden_dim % self.num_heads != 0 {
            return Err(Error::InvalidConfig {
                field: "num_heads",
                message: format!(
                    "{} must be >= 1 and divide hidden_dim {}",
                    self.num_heads, self.hidden_dim
                ),
            });
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::InvalidConfig {
                field: "dropout_rate",
                message: format!("{} not in [0, 1)", self.dropout_rate),
            });
        }
        if self.conv_stage.is_empty() {
            return Err(Error::InvalidConfig {
                field: "conv_stage",
                message: "at least one conv layer required".to_string(),
            });
        }
        for (i, c) in self.conv_stage.iter().enumerate() {
            if c.channels == 0 || c.kernel == 0 || c.stride == 0 {
                return Err(Error::InvalidConfig {
                    field: "conv_stage",
                    message: format!("layer {i} has a zero extent"),
                });
            }
        }
        if self.pos_kernel == 0 || self.pos_groups == 0 || self.hidden_dim % self.pos_groups != 0 {
            return Err(Error::InvalidConfig {
                field: "pos_groups",
                message: format!(
                    "{} must be >= 1 and divide hidden_dim {}",
                    self.pos_groups, self.hidden_dim
                ),
            });
        }
        if self.sample_rate == 0 {
            return Err(Error::InvalidConfig {
                field: "sample_rate",
                message: "must be > 0".to_string(),
            });
        }
        Ok(())
    }

    /// Product of conv strides: input samples per output frame.
    pub fn frame_hop(&self) -> usize {
        self.conv_stage.iter().map(|c| c.stride).product()
    }

    /// Number of frames produced from `samples` waveform samples, applying
    /// `floor((len - kernel) / stride) + 1` per conv layer. Errors when any
    /// stage receives fewer samples than its kernel.
    pub fn frame_count(&self, samples: usize) -> Result<usize> {
        let mut len = samples;
        for (i, c) in self.conv_stage.iter().enumerate() {
            if len < c.kernel {
                return Err(Error::InvalidArgument(format!(
                    "waveform too short: conv layer {i} needs >= {} inputs, got {len}; \
                     minimum waveform length is {} samples",
                    c.kernel,
                    self.min_input_samples()
                )));
            }
            len = (len - c.kernel) / c.stride + 1;
        }
        Ok(len)
    }

    /// Smallest waveform length that yields one frame.
    pub fn min_input_samples(&self) -> usize {
        let mut need = 1usize;
        for c in self.conv_stage.iter().rev() {
            need = (need - 1) * c.stride + c.kernel;
        }
        need
    }

}

/// Train/eval switch; dropout is active only in training mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// The task a head serves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Task {
    Age,
    Gender,
}

/// One named parameter tensor with its trainable flag.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub tensor: Tensor,
    pub trainable: bool,
}

/// One utterance's outputs. `age_norm` is trained toward [0, 1] with 1
/// meaning one hundred years; `gender_scores` are softmax confidences in the
/// fixed order (child, female, male).
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub age_norm: Option<f64>,
    pub gender_scores: Option<[f64; 3]>,
}

impl Prediction {
    /// Reported age: `clamp(age_norm, 0, 1) * 100`.
    pub fn age_years(&self) -> Option<f64> {
        self.age_norm.map(|a| a.clamp(0.0, 1.0) * 100.0)
    }

    /// Argmax gender; ties break to the lowest class index.
    pub fn decided_gender(&self) -> Option<GenderLabel> {
        self.gender_scores.map(|scores| {
            let mut best = 0;
            for i in 1..3 {
                if scores[i] > scores[best] {
                    best = i;
                }
            }
            GenderLabel::from_index(best).expect("index in range")
        })
    }
}

/// Tape node handles produced by a batched forward pass.
pub struct BatchForward {
    /// `[batch]` raw age predictions, when the age head is present.
    pub age: Option<NodeId>,
    /// `[batch x 3]` gender logits, when the gender head is present.
    pub gender_logits: Option<NodeId>,
    /// `(param index, leaf node)` for every parameter inserted on the tape.
    pub param_nodes: Vec<(usize, NodeId)>,
}

/// Encoder plus heads. The conv stage is frozen after construction; the
/// transformer and heads are trainable.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: Vec<Param>,
    has_age_head: bool,
    has_gender_head: bool,
}

impl Model {
    /// Build a model with seeded scaled-uniform initialization. Each
    /// parameter draws from its own stream derived from `(seed, name)`, so
    /// construction is deterministic and order-independent.
    pub fn build(config: ModelConfig, seed: u64) -> Result<Model> {
        config.validate()?;
        let mut params = Vec::new();
        for spec in param_specs(&config, true, true) {
            let tensor = init_param(&spec, seed);
            params.push(Param {
                name: spec.name,
                tensor,
                trainable: spec.trainable,
            });
        }
        Ok(Model {
            config,
            params,
            has_age_head: true,
            has_gender_head: true,
        })
    }

    pub fn has_age_head(&self) -> bool {
        self.has_age_head
    }

    pub fn has_gender_head(&self) -> bool {
        self.has_gender_head
    }

    /// Total scalars across all parameter tensors.
    pub fn num_scalars(&self) -> u64 {
        self.params.iter().map(|p| p.tensor.len() as u64).sum()
    }

    pub fn param(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    fn param_index(&self, name: &str) -> usize {
        self.params
            .iter()
            .position(|p| p.name == name)
            .unwrap_or_else(|| panic!("missing parameter `{name}`"))
    }

    /// Keep the bottom `n` transformer layers and both heads; upper layers
    /// are dropped, all retained weights verbatim.
    pub fn truncate_layers(&self, n: usize) -> Result<Model> {
        if n == 0 || n > self.config.num_layers {
            return Err(Error::InvalidArgument(format!(
                "truncate_layers: n {n} outside 1..={}",
                self.config.num_layers
            )));
        }
        let mut config = self.config.clone();
        config.num_layers = n;
        let params = self
            .params
            .iter()
            .filter(|p| match layer_index(&p.name) {
                Some(i) => i < n,
                None => true,
            })
            .cloned()
            .collect();
        Ok(Model {
            config,
            params,
            has_age_head: self.has_age_head,
            has_gender_head: self.has_gender_head,
        })
    }

    /// Remove one head, leaving a single-task model with the shared trunk
    /// unchanged.
    pub fn detach_head(&self, task: Task) -> Result<Model> {
        let (present, prefix) = match task {
            Task::Age => (self.has_age_head, "head.age."),
            Task::Gender => (self.has_gender_head, "head.gender."),
        };
        if !present {
            return Err(Error::InvalidArgument(format!(
                "detach_head: {task:?} head already removed"
            )));
        }
        let other_present = match task {
            Task::Age => self.has_gender_head,
            Task::Gender => self.has_age_head,
        };
        if !other_present {
            return Err(Error::InvalidArgument(
                "detach_head: cannot remove the only remaining head".to_string(),
            ));
        }
        let params = self
            .params
            .iter()
            .filter(|p| !p.name.starts_with(prefix))
            .cloned()
            .collect();
        Ok(Model {
            config: self.config.clone(),
            params,
            has_age_head: task != Task::Age && self.has_age_head,
            has_gender_head: task != Task::Gender && self.has_gender_head,
        })
    }

    /// Single-utterance forward pass. Eval mode is deterministic; training
    /// mode needs a dropout stream.
    pub fn forward(
        &self,
        waveform: &[f64],
        mode: Mode,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Prediction> {
        let mut g = Graph::new();
        let out = self.forward_batch(&mut g, &[waveform], mode, rng)?;
        let age_norm = out.age.map(|id| g.value(id).values()[0]);
        let gender_scores = out.gender_logits.map(|id| {
            let sm = g.softmax(id);
            let v = g.value(sm).values();
            [v[0], v[1], v[2]]
        });
        Ok(Prediction {
            age_norm,
            gender_scores,
        })
    }

    /// Batched forward pass on a caller-owned tape. Trainable parameters are
    /// inserted as gradient-requiring leaves in training mode.
    pub fn forward_batch(
        &self,
        g: &mut Graph,
        waveforms: &[&[f64]],
        mode: Mode,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<BatchForward> {
        if waveforms.is_empty() {
            return Err(Error::InvalidArgument("forward_batch: empty batch".to_string()));
        }
        if mode == Mode::Train && self.config.dropout_rate > 0.0 && rng.is_none() {
            return Err(Error::InvalidArgument(
                "forward_batch: training mode with dropout needs an RNG".to_string(),
            ));
        }
        // Parameter leaves, one per model parameter.
        let mut param_nodes = Vec::with_capacity(self.params.len());
        let mut nodes = Vec::with_capacity(self.params.len());
        for (i, p) in self.params.iter().enumerate() {
            let requires = mode == Mode::Train && p.trainable;
            let id = g.input(p.tensor.clone(), requires);
            param_nodes.push((i, id));
            nodes.push(id);
        }
        let node_of = |name: &str| nodes[self.param_index(name)];

        let mut pooled = Vec::with_capacity(waveforms.len());
        for &w in waveforms {
            pooled.push(self.forward_trunk(g, w, &node_of)?);
        }
        let features = g.stack_rows(&pooled)?;
        let batch = waveforms.len();

        let run_head = |g: &mut Graph,
                            rng: &mut Option<&mut ChaCha8Rng>,
                            prefix: &str,
                            out_dim: usize|
         -> Result<NodeId> {
            let dense_w = node_of(&format!("{prefix}.dense.weight"));
            let dense_b = node_of(&format!("{prefix}.dense.bias"));
            let proj_w = node_of(&format!("{prefix}.proj.weight"));
            let proj_b = node_of(&format!("{prefix}.proj.bias"));
            let mut h = g.matmul(features, dense_w)?;
            h = g.add_row(h, dense_b)?;
            h = g.tanh(h);
            if mode == Mode::Train && self.config.dropout_rate > 0.0 {
                let rate = self.config.dropout_rate;
                let keep = 1.0 - rate;
                let rng = rng.as_mut().expect("checked above");
                let mask: Vec<f64> = (0..batch * self.config.head_hidden)
                    .map(|_| {
                        if rng::next_f64(*rng) < rate {
                            0.0
                        } else {
                            1.0 / keep
                        }
                    })
                    .collect();
                let mask = g.constant(Tensor::matrix(batch, self.config.head_hidden, mask)?);
                h = g.mul(h, mask)?;
            }
            let mut out = g.matmul(h, proj_w)?;
            out = g.add_row(out, proj_b)?;
            debug_assert_eq!(g.value(out).shape(), [batch, out_dim]);
            Ok(out)
        };

        let age = if self.has_age_head {
            let out = run_head(g, &mut rng, "head.age", 1)?;
            Some(g.reshape(out, vec![batch])?)
        } else {
            None
        };
        let gender_logits = if self.has_gender_head {
            Some(run_head(g, &mut rng, "head.gender", 3)?)
        } else {
            None
        };

        Ok(BatchForward {
            age,
            gender_logits,
            param_nodes,
        })
    }

    /// Conv stage, feature projection, positional conv, transformer stack,
    /// final norm, mean pool. Returns the pooled `[hidden_dim]` vector node.
    fn forward_trunk(
        &self,
        g: &mut Graph,
        waveform: &[f64],
        node_of: &dyn Fn(&str) -> NodeId,
    ) -> Result<NodeId> {
        let cfg = &self.config;
        // Frame-count check up front so short inputs fail with the minimum.
        cfg.frame_count(waveform.len())?;
        let mut x = g.constant(Tensor::matrix(waveform.len(), 1, waveform.to_vec())?);
        for (i, _) in cfg.conv_stage.iter().enumerate() {
            let w = node_of(&format!("conv.{i}.weight"));
            let b = node_of(&format!("conv.{i}.bias"));
            x = g.conv1d(x, w, b, cfg.conv_stage[i].stride, 1, (0, 0))?;
            let gain = node_of(&format!("conv.{i}.norm.gain"));
            let bias = node_of(&format!("conv.{i}.norm.bias"));
            x = g.layer_norm(x, gain, bias, LN_EPS)?;
            x = g.gelu(x);
        }
        // Feature projection into the transformer width.
        let gain = node_of("proj.norm.gain");
        let bias = node_of("proj.norm.bias");
        x = g.layer_norm(x, gain, bias, LN_EPS)?;
        x = g.matmul(x, node_of("proj.weight"))?;
        x = g.add_row(x, node_of("proj.bias"))?;
        // Relative positional information via a grouped convolution block.
        let k = cfg.pos_kernel;
        let pad = (k / 2, (k - 1) / 2);
        let mut pos = g.conv1d(
            x,
            node_of("pos.weight"),
            node_of("pos.bias"),
            1,
            cfg.pos_groups,
            pad,
        )?;
        pos = g.gelu(pos);
        x = g.add(x, pos)?;

        let head_dim = cfg.hidden_dim / cfg.num_heads;
        let scale = 1.0 / fmath::sqrt(head_dim as f64);
        for layer in 0..cfg.num_layers {
            let p = |suffix: &str| node_of(&format!("layer.{layer}.{suffix}"));
            // Pre-norm attention block.
            let h = g.layer_norm(x, p("norm1.gain"), p("norm1.bias"), LN_EPS)?;
            let q = g.matmul(h, p("attn.q.weight"))?;
            let q = g.add_row(q, p("attn.q.bias"))?;
            let key = g.matmul(h, p("attn.k.weight"))?;
            let key = g.add_row(key, p("attn.k.bias"))?;
            let v = g.matmul(h, p("attn.v.weight"))?;
            let v = g.add_row(v, p("attn.v.bias"))?;
            let mut contexts = Vec::with_capacity(cfg.num_heads);
            for head in 0..cfg.num_heads {
                let start = head * head_dim;
                let qh = g.slice_cols(q, start, head_dim)?;
                let kh = g.slice_cols(key, start, head_dim)?;
                let vh = g.slice_cols(v, start, head_dim)?;
                let kt = g.transpose(kh)?;
                let scores = g.matmul(qh, kt)?;
                let scores = g.scale(scores, scale);
                let attn = g.softmax(scores);
                contexts.push(g.matmul(attn, vh)?);
            }
            let ctx = g.concat_cols(&contexts)?;
            let out = g.matmul(ctx, p("attn.o.weight"))?;
            let out = g.add_row(out, p("attn.o.bias"))?;
            x = g.add(x, out)?;
            // Pre-norm feed-forward block.
            let h = g.layer_norm(x, p("norm2.gain"), p("norm2.bias"), LN_EPS)?;
            let f = g.matmul(h, p("ffn.w1.weight"))?;
            let f = g.add_row(f, p("ffn.w1.bias"))?;
            let f = g.gelu(f);
            let f = g.matmul(f, p("ffn.w2.weight"))?;
            let f = g.add_row(f, p("ffn.w2.bias"))?;
            x = g.add(x, f)?;
        }
        x = g.layer_norm(x, node_of("final_norm.gain"), node_of("final_norm.bias"), LN_EPS)?;
        let frames = g.value(x).shape()[0];
        g.mean_pool(x, frames)
    }
}

fn layer_index(name: &str) -> Option<usize> {
    let rest = name.strip_prefix("layer.")?;
    let end = rest.find('.')?;
    rest[..end].parse().ok()
}

enum InitKind {
    /// Uniform in ±sqrt(6 / (fan_in + fan_out)).
    ScaledUniform { fan_in: usize, fan_out: usize },
    Zeros,
    Ones,
}

struct ParamSpec {
    name: String,
    shape: Vec<usize>,
    trainable: bool,
    init: InitKind,
}

fn norm_specs(prefix: &str, dim: usize, trainable: bool, out: &mut Vec<ParamSpec>) {
    out.push(ParamSpec {
        name: format!("{prefix}.gain"),
        shape: vec![dim],
        trainable,
        init: InitKind::Ones,
    });
    out.push(ParamSpec {
        name: format!("{prefix}.bias"),
        shape: vec![dim],
        trainable,
        init: InitKind::Zeros,
    });
}

fn dense_specs(prefix: &str, rows: usize, cols: usize, out: &mut Vec<ParamSpec>) {
    out.push(ParamSpec {
        name: format!("{prefix}.weight"),
        shape: vec![rows, cols],
        trainable: true,
        init: InitKind::ScaledUniform {
            fan_in: rows,
            fan_out: cols,
        },
    });
    out.push(ParamSpec {
        name: format!("{prefix}.bias"),
        shape: vec![cols],
        trainable: true,
        init: InitKind::Zeros,
    });
}

/// The full parameter layout implied by a config, in construction order.
fn param_specs(config: &ModelConfig, age_head: bool, gender_head: bool) -> Vec<ParamSpec> {
    let mut out = Vec::new();
    let mut in_ch = 1usize;
    for (i, c) in config.conv_stage.iter().enumerate() {
        out.push(ParamSpec {
            name: format!("conv.{i}.weight"),
            shape: vec![c.channels, in_ch, c.kernel],
            trainable: false,
            init: InitKind::ScaledUniform {
                fan_in: in_ch * c.kernel,
                fan_out: c.channels * c.kernel,
            },
        });
        out.push(ParamSpec {
            name: format!("conv.{i}.bias"),
            shape: vec![c.channels],
            trainable: false,
            init: InitKind::Zeros,
        });
        norm_specs(&format!("conv.{i}.norm"), c.channels, false, &mut out);
        in_ch = c.channels;
    }
    let d = config.hidden_dim;
    norm_specs("proj.norm", in_ch, true, &mut out);
    dense_specs("proj", in_ch, d, &mut out);
    let group_ch = d / config.pos_groups;
    out.push(ParamSpec {
        name: "pos.weight".to_string(),
        shape: vec![d, group_ch, config.pos_kernel],
        trainable: true,
        init: InitKind::ScaledUniform {
            fan_in: group_ch * config.pos_kernel,
            fan_out: group_ch * config.pos_kernel,
        },
    });
    out.push(ParamSpec {
        name: "pos.bias".to_string(),
        shape: vec![d],
        trainable: true,
        init: InitKind::Zeros,
    });
    for layer in 0..config.num_layers {
        let p = |s: &str| format!("layer.{layer}.{s}");
        norm_specs(&p("norm1"), d, true, &mut out);
        for proj in ["attn.q", "attn.k", "attn.v", "attn.o"] {
            dense_specs(&p(proj), d, d, &mut out);
        }
        norm_specs(&p("norm2"), d, true, &mut out);
        dense_specs(&p("ffn.w1"), d, config.ffn_dim, &mut out);
        dense_specs(&p("ffn.w2"), config.ffn_dim, d, &mut out);
    }
    norm_specs("final_norm", d, true, &mut out);
    if age_head {
        dense_specs("head.age.dense", d, config.head_hidden, &mut out);
        dense_specs("head.age.proj", config.head_hidden, 1, &mut out);
    }
    if gender_head {
        dense_specs("head.gender.dense", d, config.head_hidden, &mut out);
        dense_specs("head.gender.proj", config.head_hidden, 3, &mut out);
    }
    out
}

fn init_param(spec: &ParamSpec, seed: u64) -> Tensor {
    let n: usize = spec.shape.iter().product();
    let values = match spec.init {
        InitKind::Zeros => vec![0.0; n],
        InitKind::Ones => vec![1.0; n],
        InitKind::ScaledUniform { fan_in, fan_out } => {
            let bound = fmath::sqrt(6.0 / (fan_in + fan_out) as f64);
            let mut stream = rng::derive(seed, &format!("init:{}", spec.name));
            (0..n).map(|_| rng::uniform(&mut stream, -bound, bound)).collect()
        }
    };
    Tensor::new(spec.shape.clone(), values).expect("consistent spec shape")
}

/// Total scalars implied by `param_specs`, used by the cost module.
pub(crate) fn spec_scalars(config: &ModelConfig, age_head: bool, gender_head: bool) -> u64 {
    param_specs(config, age_head, gender_head)
        .iter()
        .map(|s| s.shape.iter().product::<usize>() as u64)
        .sum()
}
