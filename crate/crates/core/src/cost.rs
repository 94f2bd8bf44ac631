//! Closed-form parameter and MAC accounting for a model config.
//!
//! Parameter counts agree exactly with the scalars [`crate::model::Model::build`]
//! allocates. MAC counts cover the multiply-accumulates of conv and dense
//! maps plus the quadratic attention score/context terms; element-wise work
//! (norms, activations, bias adds) is excluded.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};

use crate::model::ModelConfig;
use crate::{Error, Result};

/// Per-block cost breakdown. Block sums equal the totals exactly.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CostReport {
    pub total_params: u64,
    pub params_by_block: BTreeMap<String, u64>,
    pub total_macs: u64,
    pub macs_by_block: BTreeMap<String, u64>,
}

impl CostReport {
    /// Text rendering: totals followed by the per-block breakdown.
    pub fn render(&self) -> String {
        let mut out = String::new();
        if self.total_params > 0 {
            out.push_str(&alloc::format!("total_params {}\n", self.total_params));
            for (block, count) in &self.params_by_block {
                out.push_str(&alloc::format!("params.{block} {count}\n"));
            }
        }
        if self.total_macs > 0 {
            out.push_str(&alloc::format!("total_macs {}\n", self.total_macs));
            for (block, count) in &self.macs_by_block {
                out.push_str(&alloc::format!("macs.{block} {count}\n"));
            }
        }
        out
    }
}

fn put(map: &mut BTreeMap<String, u64>, block: &str, count: u64) {
    *map.entry(block.to_string()).or_insert(0) += count;
}

/// Exact parameter count per block.
pub fn count_params(config: &ModelConfig) -> Result<CostReport> {
    config.validate()?;
    let mut by_block = BTreeMap::new();
    let d = config.hidden_dim as u64;
    let f = config.ffn_dim as u64;
    let h = config.head_hidden as u64;

    let mut in_ch = 1u64;
    for c in &config.conv_stage {
        let ch = c.channels as u64;
        let k = c.kernel as u64;
        // conv weight + bias + per-conv layer norm
        put(&mut by_block, "conv_stage", ch * in_ch * k + ch + 2 * ch);
        in_ch = ch;
    }
    put(&mut by_block, "feature_projection", 2 * in_ch + in_ch * d + d);
    let group_ch = d / config.pos_groups as u64;
    put(
        &mut by_block,
        "positional",
        d * group_ch * config.pos_kernel as u64 + d,
    );
    // per layer: 4 attention maps, 2 norms, 2 ffn maps
    let per_layer = 4 * (d * d + d) + 2 * (2 * d) + (d * f + f) + (f * d + d);
    put(&mut by_block, "encoder", per_layer * config.num_layers as u64);
    put(&mut by_block, "final_norm", 2 * d);
    put(&mut by_block, "head_age", d * h + h + h + 1);
    put(&mut by_block, "head_gender", d * h + h + 3 * h + 3);

    let total = by_block.values().sum();
    let report = CostReport {
        total_params: total,
        params_by_block: by_block,
        total_macs: 0,
        macs_by_block: BTreeMap::new(),
    };
    debug_assert_eq!(
        report.total_params,
        crate::model::spec_scalars(config, true, true)
    );
    Ok(report)
}

/// MAC count for one input of `duration_s` seconds.
pub fn count_macs(config: &ModelConfig, duration_s: f64) -> Result<CostReport> {
    config.validate()?;
    if !(duration_s > 0.0) {
        return Err(Error::InvalidArgument(alloc::format!(
            "count_macs: duration {duration_s} s must be positive"
        )));
    }
    let samples = crate::fmath::round(duration_s * config.sample_rate as f64) as usize;
    // Propagates the too-short error with the required minimum.
    config.frame_count(samples)?;

    let mut by_block = BTreeMap::new();
    let d = config.hidden_dim as u64;
    let f = config.ffn_dim as u64;
    let h = config.head_hidden as u64;

    let mut len = samples as u64;
    let mut in_ch = 1u64;
    for c in &config.conv_stage {
        let ch = c.channels as u64;
        let k = c.kernel as u64;
        len = (len - k) / c.stride as u64 + 1;
        put(&mut by_block, "conv_stage", len * ch * in_ch * k);
        in_ch = ch;
    }
    let t = len; // frames entering the transformer
    put(&mut by_block, "feature_projection", t * in_ch * d);
    let group_ch = d / config.pos_groups as u64;
    put(
        &mut by_block,
        "positional",
        t * d * group_ch * config.pos_kernel as u64,
    );
    // attention dense maps + quadratic score/context terms + ffn maps
    let per_layer = t * 4 * d * d + 2 * t * t * d + t * 2 * d * f;
    put(&mut by_block, "encoder", per_layer * config.num_layers as u64);
    put(&mut by_block, "head_age", d * h + h);
    put(&mut by_block, "head_gender", d * h + 3 * h);

    let total = by_block.values().sum();
    Ok(CostReport {
        total_params: 0,
        params_by_block: BTreeMap::new(),
        total_macs: total,
        macs_by_block: by_block,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ConvLayer, Model};
    use alloc::vec;

    #[test]
    fn paper_scale_totals_match_published_figures() {
        let cfg = ModelConfig::paper_scale();
        let params = count_params(&cfg).unwrap();
        let m = params.total_params as f64 / 1e6;
        assert!((m - 317.5).abs() / 317.5 < 0.02, "got {m:.1}M");

        let mut six = cfg.clone();
        six.num_layers = 6;
        let p6 = count_params(&six).unwrap().total_params as f64 / 1e6;
        assert!((p6 - 90.8).abs() / 90.8 < 0.02, "got {p6:.1}M");
        let factor = m / p6;
        assert!((factor - 3.5).abs() < 0.1, "reduction factor {factor:.2}");

        let macs = count_macs(&cfg, 3.0).unwrap().total_macs as f64 / 1e9;
        assert!((macs - 53.8).abs() / 53.8 < 0.2, "got {macs:.1}G");
    }

    #[test]
    fn toy_config_matches_independent_enumeration() {
        // Oracle: enumerate every tensor of the layout by hand and sum.
        let cfg = ModelConfig {
            num_layers: 2,
            hidden_dim: 8,
            ffn_dim: 16,
            num_heads: 2,
            head_hidden: 8,
            dropout_rate: 0.0,
            conv_stage: vec![
                ConvLayer {
                    channels: 4,
                    kernel: 6,
                    stride: 3,
                },
                ConvLayer {
                    channels: 4,
                    kernel: 2,
                    stride: 2,
                },
            ],
            pos_kernel: 5,
            pos_groups: 2,
            sample_rate: 1000,
        };
        let conv = (4 * 1 * 6 + 4 + 8) + (4 * 4 * 2 + 4 + 8);
        let proj = 2 * 4 + 4 * 8 + 8;
        let pos = 8 * 4 * 5 + 8;
        let layer = 4 * (8 * 8 + 8) + 2 * 16 + (8 * 16 + 16) + (16 * 8 + 8);
        let final_norm = 16;
        let head_age = 8 * 8 + 8 + 8 + 1;
        let head_gender = 8 * 8 + 8 + 24 + 3;
        let expected = (conv + proj + pos + 2 * layer + final_norm + head_age + head_gender) as u64;
        let report = count_params(&cfg).unwrap();
        assert_eq!(report.total_params, expected);
        assert_eq!(
            report.params_by_block.values().sum::<u64>(),
            report.total_params
        );
        // and the formula equals the scalars actually allocated
        let model = Model::build(cfg, 0).unwrap();
        assert_eq!(model.num_scalars(), expected);
    }

    #[test]
    fn toy_macs_match_independent_enumeration() {
        let cfg = ModelConfig {
            num_layers: 1,
            hidden_dim: 8,
            ffn_dim: 16,
            num_heads: 2,
            head_hidden: 8,
            dropout_rate: 0.0,
            conv_stage: vec![ConvLayer {
                channels: 4,
                kernel: 6,
                stride: 3,
            }],
            pos_kernel: 5,
            pos_groups: 2,
            sample_rate: 100,
        };
        // 1 s -> 100 samples -> (100-6)/3+1 = 32 frames
        let t = 32u64;
        let conv = t * 4 * 1 * 6;
        let proj = t * 4 * 8;
        let pos = t * 8 * 4 * 5;
        let layer = t * 4 * 8 * 8 + 2 * t * t * 8 + t * 2 * 8 * 16;
        let heads = (8 * 8 + 8) + (8 * 8 + 24);
        let expected = conv + proj + pos + layer + heads;
        assert_eq!(count_macs(&cfg, 1.0).unwrap().total_macs, expected);
    }

    #[test]
    fn doubling_duration_more_than_doubles_transformer_macs() {
        let cfg = ModelConfig::paper_scale();
        let m3 = count_macs(&cfg, 3.0).unwrap().macs_by_block["encoder"];
        let m6 = count_macs(&cfg, 6.0).unwrap().macs_by_block["encoder"];
        assert!(m6 > 2 * m3);
    }

    #[test]
    fn too_short_duration_rejected() {
        let cfg = ModelConfig::paper_scale();
        assert!(count_macs(&cfg, 1e-4).is_err());
        assert!(count_macs(&cfg, 0.0).is_err());
    }
}
