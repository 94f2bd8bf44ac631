//! Property tests: numeric invariants of the tensor ops and metrics, and
//! structural invariants of the curation pipeline, the cost model, and
//! model surgery.

use proptest::prelude::*;
use rand_chacha::ChaCha8Rng;
use speechtraits_core::cost;
use speechtraits_core::curation::{
    cap_per_speaker, curate, CurationParams, SampleRecord, SplitManifest,
};
use speechtraits_core::metrics::{ccc, pearson, ConfusionMatrix, GenderLabel};
use speechtraits_core::model::{ConvLayer, Mode, Model, ModelConfig};
use speechtraits_core::rng;
use speechtraits_core::tensor::{Graph, Tensor};

proptest! {
    #[test]
    fn softmax_rows_sum_to_one(rows in 1usize..5, cols in 1usize..7, seed in 0u64..1000) {
        let mut r = rng::derive(seed, "prop:softmax");
        let values: Vec<f64> = (0..rows * cols).map(|_| rng::uniform(&mut r, -30.0, 30.0)).collect();
        let mut g = Graph::new();
        let x = g.constant(Tensor::matrix(rows, cols, values).unwrap());
        let y = g.softmax(x);
        for row in 0..rows {
            let sum: f64 = g.value(y).values()[row * cols..(row + 1) * cols].iter().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-12, "row {row} sums to {sum}");
        }
    }

    #[test]
    fn mean_pool_ignores_padding_rows(valid in 1usize..6, pad in 0usize..4, seed in 0u64..1000) {
        let cols = 3;
        let mut r = rng::derive(seed, "prop:meanpool");
        let base: Vec<f64> = (0..valid * cols).map(|_| rng::uniform(&mut r, -2.0, 2.0)).collect();
        let mut padded = base.clone();
        padded.extend((0..pad * cols).map(|_| rng::uniform(&mut r, -100.0, 100.0)));

        let mut g = Graph::new();
        let a = g.constant(Tensor::matrix(valid, cols, base).unwrap());
        let pa = g.mean_pool(a, valid).unwrap();
        let b = g.constant(Tensor::matrix(valid + pad, cols, padded).unwrap());
        let pb = g.mean_pool(b, valid).unwrap();
        prop_assert_eq!(g.value(pa).values(), g.value(pb).values());
    }

    #[test]
    fn ccc_never_exceeds_pearson_in_magnitude(seed in 0u64..1000, n in 2usize..40) {
        let mut r = rng::derive(seed, "prop:cccpearson");
        let p: Vec<f64> = (0..n).map(|_| rng::uniform(&mut r, -5.0, 5.0)).collect();
        let t: Vec<f64> = (0..n).map(|_| rng::uniform(&mut r, -5.0, 5.0)).collect();
        let c = ccc(&p, &t);
        let r_ = pearson(&p, &t);
        prop_assert!(c.abs() <= r_.abs() + 1e-9, "ccc {c} vs pearson {r_}");
    }

    #[test]
    fn uar_invariant_under_per_class_duplication(seed in 0u64..500, dup in 2u64..5) {
        // Duplicating every sample the same number of times per class leaves
        // recalls, and hence UAR, unchanged.
        let mut r = rng::derive(seed, "prop:uar");
        let mut cm = ConfusionMatrix::new(vec!["a".into(), "b".into(), "c".into()]);
        let mut scaled = ConfusionMatrix::new(vec!["a".into(), "b".into(), "c".into()]);
        for truth in 0..3 {
            for pred in 0..3 {
                let count = rng::index(&mut r, 6) as u64;
                cm.counts[truth][pred] = count;
                scaled.counts[truth][pred] = count * dup;
            }
        }
        let (u1, e1) = cm.uar();
        let (u2, e2) = scaled.uar();
        prop_assert!((u1 - u2).abs() <= 1e-12);
        prop_assert_eq!(e1, e2);
    }
}

fn random_manifest(seed: u64) -> Vec<SampleRecord> {
    let mut r = rng::derive(seed, "prop:manifest");
    let n_speakers = 8 + rng::index(&mut r, 16);
    let mut records = Vec::new();
    for s in 0..n_speakers {
        let age = rng::index(&mut r, 101) as u32;
        let gender = if age <= 14 {
            GenderLabel::Child
        } else if rng::index(&mut r, 2) == 0 {
            GenderLabel::Female
        } else {
            GenderLabel::Male
        };
        let dataset = if rng::index(&mut r, 2) == 0 { "cv" } else { "tm" };
        let files = 1 + rng::index(&mut r, 9);
        for k in 0..files {
            records.push(SampleRecord {
                file_path: format!("{dataset}/s{s:03}/{k:02}.wav"),
                speaker_id: format!("s{s:03}"),
                age_years: age,
                gender,
                dataset: dataset.to_string(),
                duration_s: rng::uniform(&mut r, 0.5, 10.0),
            });
        }
    }
    records
}

/// Criterion-4 style sweep: 100 seeded random manifests through the full
/// curation pipeline.
#[test]
fn curation_invariants_on_random_manifests() {
    let mut curated = 0usize;
    for seed in 0..100u64 {
        let records = random_manifest(seed);
        let params = CurationParams {
            cap: 1 + rng::index(&mut rng::derive(seed, "prop:cap"), 6),
            cell_max: 3,
            cell_test: 1,
            dev_fraction: 0.2,
            seed,
        };
        let result = curate(&records, &params);
        let again = curate(&records, &params);
        match (result, again) {
            (Ok(splits), Ok(splits2)) => {
                assert_eq!(splits, splits2, "seed {seed}: rerun differs");
                check_split_invariants(&records, &splits, &params, seed);
                curated += 1;
            }
            (Err(a), Err(b)) => assert_eq!(format!("{a}"), format!("{b}")),
            (a, b) => panic!("seed {seed}: rerun changed outcome: {a:?} vs {b:?}"),
        }
    }
    // The generator must actually exercise the pipeline, not just errors.
    assert!(curated >= 80, "only {curated} of 100 manifests curated");
}

fn check_split_invariants(
    records: &[SampleRecord],
    splits: &SplitManifest,
    params: &CurationParams,
    seed: u64,
) {
    assert!(splits.is_speaker_disjoint(), "seed {seed}: splits share speakers");

    let mut per_speaker: std::collections::BTreeMap<(&str, &str), usize> = Default::default();
    let mut per_cell: std::collections::BTreeMap<(u32, GenderLabel), std::collections::BTreeSet<&str>> =
        Default::default();
    let mut test_cell: std::collections::BTreeMap<(u32, GenderLabel), std::collections::BTreeSet<&str>> =
        Default::default();
    for (split_idx, split) in [&splits.train, &splits.devel, &splits.test].iter().enumerate() {
        for r in split.iter() {
            *per_speaker.entry((r.dataset.as_str(), r.speaker_id.as_str())).or_default() += 1;
            let cell = (r.age_years / 10, r.gender);
            per_cell.entry(cell).or_default().insert(&r.speaker_id);
            if split_idx == 2 {
                test_cell.entry(cell).or_default().insert(&r.speaker_id);
            }
        }
    }
    for ((dataset, speaker), count) in &per_speaker {
        assert!(
            *count <= params.cap,
            "seed {seed}: {dataset}/{speaker} kept {count} > cap {}",
            params.cap
        );
    }
    for (cell, speakers) in &per_cell {
        assert!(
            speakers.len() <= params.cell_max,
            "seed {seed}: cell {cell:?} has {} > {} speakers",
            speakers.len(),
            params.cell_max
        );
    }
    for (cell, speakers) in &test_cell {
        assert!(
            speakers.len() <= params.cell_test,
            "seed {seed}: cell {cell:?} has {} test speakers",
            speakers.len()
        );
    }
    // Every selected record exists verbatim in the input.
    for split in [&splits.train, &splits.devel, &splits.test] {
        for r in split.iter() {
            assert!(records.contains(r), "seed {seed}: fabricated record {r:?}");
        }
    }

    // Summary counts round-trip against independent counting.
    let summary = splits.summary();
    let count_of = |split: &[SampleRecord]| {
        let speakers: std::collections::BTreeSet<&str> =
            split.iter().map(|r| r.speaker_id.as_str()).collect();
        format!("{} ({})", split.len(), speakers.len())
    };
    let total_line = format!(
        "total: {} / {} / {}",
        count_of(&splits.train),
        count_of(&splits.devel),
        count_of(&splits.test)
    );
    assert!(summary.contains(&total_line), "seed {seed}: summary\n{summary}\nmissing `{total_line}`");
}

#[test]
fn cap_keeps_order_and_respects_limit() {
    for seed in 0..30u64 {
        let records = random_manifest(seed);
        let capped = cap_per_speaker(&records, 3, seed).unwrap();
        let mut cursor = 0usize;
        for r in &capped {
            // order preserved: every kept record appears later in the input
            let pos = records[cursor..].iter().position(|x| x == r).unwrap();
            cursor += pos + 1;
        }
    }
}

fn random_config(seed: u64) -> ModelConfig {
    let mut r = rng::derive(seed, "prop:config");
    let heads = [1usize, 2, 4][rng::index(&mut r, 3)];
    let hidden = heads * (2 + rng::index(&mut r, 6));
    let mut conv_stage = vec![ConvLayer {
        channels: 2 + rng::index(&mut r, 6),
        kernel: 4 + rng::index(&mut r, 5),
        stride: 2 + rng::index(&mut r, 3),
    }];
    if rng::index(&mut r, 2) == 0 {
        conv_stage.push(ConvLayer {
            channels: 2 + rng::index(&mut r, 6),
            kernel: 2 + rng::index(&mut r, 3),
            stride: 2,
        });
    }
    let groups = [1usize, 2][rng::index(&mut r, 2)];
    ModelConfig {
        num_layers: 1 + rng::index(&mut r, 3),
        hidden_dim: hidden.max(groups * 2) / groups * groups,
        ffn_dim: 2 * hidden,
        num_heads: heads,
        head_hidden: 4 + rng::index(&mut r, 12),
        dropout_rate: 0.1,
        conv_stage,
        pos_kernel: 3 + rng::index(&mut r, 5),
        pos_groups: groups,
        sample_rate: 1000,
    }
}

#[test]
fn count_params_equals_allocated_scalars() {
    let mut accepted = 0usize;
    for seed in 0..20u64 {
        let config = random_config(seed);
        if config.validate().is_err() {
            continue;
        }
        let model = Model::build(config.clone(), seed).unwrap();
        let report = cost::count_params(&config).unwrap();
        assert_eq!(
            report.total_params,
            model.num_scalars(),
            "seed {seed}: formula vs allocation for {config:?}"
        );
        let block_sum: u64 = report.params_by_block.values().sum();
        assert_eq!(block_sum, report.total_params);
        accepted += 1;
    }
    assert!(accepted >= 5, "only {accepted} random configs were valid");
}

#[test]
fn frame_count_formula_matches_conv_trace() {
    for seed in 0..5u64 {
        let config = random_config(seed);
        if config.validate().is_err() {
            continue;
        }
        let model = Model::build(config.clone(), seed).unwrap();
        for &samples in &[64usize, 100, 177, 256, 401] {
            let predicted = config.frame_count(samples);
            let traced = conv_trace_frames(&model, samples);
            match (predicted, traced) {
                (Ok(p), Ok(t)) => assert_eq!(p, t, "seed {seed} samples {samples}"),
                (Err(_), Err(_)) => {}
                (p, t) => panic!("seed {seed} samples {samples}: {p:?} vs {t:?}"),
            }
        }
    }
}

/// Run the waveform through the actual conv stage ops and count output rows.
fn conv_trace_frames(model: &Model, samples: usize) -> speechtraits_core::Result<usize> {
    let mut g = Graph::new();
    let wave: Vec<f64> = (0..samples).map(|i| (i as f64 * 0.01).sin()).collect();
    let mut x = g.constant(Tensor::matrix(samples, 1, wave)?);
    for (i, layer) in model.config.conv_stage.iter().enumerate() {
        let w = g.constant(model.param(&format!("conv.{i}.weight")).unwrap().tensor.clone());
        let b = g.constant(model.param(&format!("conv.{i}.bias")).unwrap().tensor.clone());
        x = g.conv1d(x, w, b, layer.stride, 1, (0, 0))?;
    }
    Ok(g.value(x).shape()[0])
}

#[test]
fn truncation_and_detachment_preserve_shared_computation() {
    let config = ModelConfig::toy();
    let model = Model::build(config, 9).unwrap();
    let mut r: ChaCha8Rng = rng::derive(9, "prop:surgery:wave");
    let wave: Vec<f64> = (0..4000).map(|_| rng::uniform(&mut r, -0.5, 0.5)).collect();

    // Detaching one head leaves the other head's output bit-identical.
    let full = model.forward(&wave, Mode::Eval, None).unwrap();
    let age_only = model
        .detach_head(speechtraits_core::model::Task::Gender)
        .unwrap();
    let p = age_only.forward(&wave, Mode::Eval, None).unwrap();
    assert_eq!(p.age_norm, full.age_norm);
    assert_eq!(p.gender_scores, None);

    // A truncated model equals a model built directly at that depth from
    // the same per-parameter streams.
    let truncated = model.truncate_layers(1).unwrap();
    let mut direct_config = ModelConfig::toy();
    direct_config.num_layers = 1;
    let direct = Model::build(direct_config, 9).unwrap();
    let a = truncated.forward(&wave, Mode::Eval, None).unwrap();
    let b = direct.forward(&wave, Mode::Eval, None).unwrap();
    assert_eq!(a.age_norm, b.age_norm);
    assert_eq!(a.gender_scores, b.gender_scores);
}
