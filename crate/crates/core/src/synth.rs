//! Deterministic synthetic speech corpora.
//!
//! Real corpora do not ship with the repository, so end-to-end runs use
//! generated audio whose labels are recoverable by construction: within each
//! gender class the fundamental-like periodicity and the spectral tilt are
//! injective functions of age, and the child class occupies a distinct
//! frequency band. Regeneration with the same seed is byte-identical.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::curation::SampleRecord;
use crate::fmath;
use crate::metrics::GenderLabel;
use crate::rng;
use crate::{Error, Result};

/// Mapping from (age, gender) to signal characteristics.
///
/// The fundamental slides from the top of the gender band at age 0 to the
/// bottom at age 100; spectral tilt (the high-band amplitude) rises linearly
/// with age. `age_offset` shifts the tilt mapping, letting two corpora
/// disagree systematically for cross-corpus experiments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
#[serde(deny_unknown_fields)]
pub struct VoiceBands {
    pub child_f0: (f64, f64),
    pub female_f0: (f64, f64),
    pub male_f0: (f64, f64),
    pub tilt_base: f64,
    pub tilt_slope_per_year: f64,
    pub age_offset_years: f64,
    /// High tone position as a fraction of the Nyquist frequency.
    pub high_freq_frac: f64,
}

impl Default for VoiceBands {
    fn default() -> Self {
        VoiceBands {
            child_f0: (300.0, 420.0),
            female_f0: (170.0, 280.0),
            male_f0: (80.0, 170.0),
            tilt_base: 0.1,
            tilt_slope_per_year: 0.008,
            age_offset_years: 0.0,
            high_freq_frac: 0.8,
        }
    }
}

impl VoiceBands {
    pub fn f0(&self, age_years: f64, gender: GenderLabel) -> f64 {
        let (lo, hi) = match gender {
            GenderLabel::Child => self.child_f0,
            GenderLabel::Female => self.female_f0,
            GenderLabel::Male => self.male_f0,
        };
        hi - (hi - lo) * (age_years / 100.0)
    }

    pub fn tilt(&self, age_years: f64) -> f64 {
        (self.tilt_base + self.tilt_slope_per_year * (age_years + self.age_offset_years))
            .clamp(0.02, 0.95)
    }
}

/// One balancing cell of the generated corpus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellSpec {
    pub decade: u32,
    pub gender: GenderLabel,
    pub n_speakers: usize,
}

/// Synthetic corpus specification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub dataset: String,
    pub cells: Vec<CellSpec>,
    pub samples_per_speaker: usize,
    pub duration_range_s: (f64, f64),
    pub noise_level: f64,
    pub sample_rate: u32,
    pub bands: VoiceBands,
    pub seed: u64,
}

impl SynthSpec {
    /// Default desk-scale corpus: one child cell plus four adult decades per
    /// gender, five speakers each (45 speakers).
    pub fn default_corpus(dataset: &str, seed: u64) -> Self {
        let mut cells = alloc::vec![CellSpec {
            decade: 0,
            gender: GenderLabel::Child,
            n_speakers: 5,
        }];
        for decade in 2..=5 {
            for gender in [GenderLabel::Female, GenderLabel::Male] {
                cells.push(CellSpec {
                    decade,
                    gender,
                    n_speakers: 5,
                });
            }
        }
        SynthSpec {
            dataset: dataset.to_string(),
            cells,
            samples_per_speaker: 6,
            duration_range_s: (0.8, 1.2),
            noise_level: 0.02,
            sample_rate: 4_000,
            bands: VoiceBands::default(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.cells.is_empty() || self.samples_per_speaker == 0 {
            return Err(Error::InvalidConfig {
                field: "cells",
                message: "corpus needs at least one cell and one sample per speaker".to_string(),
            });
        }
        let (lo, hi) = self.duration_range_s;
        if !(lo > 0.0 && hi >= lo) {
            return Err(Error::InvalidConfig {
                field: "duration_range_s",
                message: format!("invalid range ({lo}, {hi})"),
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

    pub fn total_speakers(&self) -> usize {
        self.cells.iter().map(|c| c.n_speakers).sum()
    }
}

/// Generated corpus: manifest records plus in-memory waveforms keyed by
/// `file_path`.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub records: Vec<SampleRecord>,
    pub waveforms: BTreeMap<String, Vec<f64>>,
    pub sample_rate: u32,
}

/// Generate the corpus described by `spec`, deterministically.
pub fn generate_synth_corpus(spec: &SynthSpec) -> Result<SynthCorpus> {
    spec.validate()?;
    let mut records = Vec::new();
    let mut waveforms = BTreeMap::new();
    for cell in &spec.cells {
        for s in 0..cell.n_speakers {
            let speaker_id = format!(
                "{}_{}d{}_{s:02}",
                spec.dataset,
                cell.gender.as_str(),
                cell.decade
            );
            let mut speaker_rng =
                rng::derive(spec.seed, &format!("synth:{}:{speaker_id}", spec.dataset));
            // Age stays inside the cell's decade; child ages start at 5 so
            // the class mapping is unambiguous.
            let age_years = if cell.decade == 0 {
                5 + rng::index(&mut speaker_rng, 5) as u32
            } else {
                cell.decade * 10 + rng::index(&mut speaker_rng, 10) as u32
            };
            for k in 0..spec.samples_per_speaker {
                let file_path = format!("{}/{speaker_id}/{k:02}.wav", spec.dataset);
                let mut sample_rng = rng::derive(
                    spec.seed,
                    &format!("synth:{}:{speaker_id}:{k}", spec.dataset),
                );
                let (lo, hi) = spec.duration_range_s;
                let duration_s = rng::uniform(&mut sample_rng, lo, hi);
                let wave = synth_waveform(
                    &spec.bands,
                    age_years as f64,
                    cell.gender,
                    duration_s,
                    spec.sample_rate,
                    spec.noise_level,
                    &mut sample_rng,
                );
                records.push(SampleRecord {
                    file_path: file_path.clone(),
                    speaker_id: speaker_id.clone(),
                    age_years,
                    gender: cell.gender,
                    dataset: spec.dataset.clone(),
                    duration_s,
                });
                waveforms.insert(file_path, wave);
            }
        }
    }
    Ok(SynthCorpus {
        records,
        waveforms,
        sample_rate: spec.sample_rate,
    })
}

fn synth_waveform(
    bands: &VoiceBands,
    age_years: f64,
    gender: GenderLabel,
    duration_s: f64,
    sample_rate: u32,
    noise_level: f64,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Vec<f64> {
    let n = (duration_s * sample_rate as f64) as usize;
    let sr = sample_rate as f64;
    let f0 = bands.f0(age_years, gender);
    let tilt = bands.tilt(age_years);
    let a_high = tilt;
    let a_low = 1.0 - tilt;
    let f_high = bands.high_freq_frac * sr / 2.0;
    let phase0 = rng::next_f64(rng);
    let phase_high = rng::next_f64(rng);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 / sr;
        // Band-unlimited sawtooth carries harmonics of the fundamental.
        let x = f0 * t + phase0;
        let saw = 2.0 * (x - fmath::floor(x)) - 1.0;
        let high = fmath::sin(2.0 * core::f64::consts::PI * (f_high * t + phase_high));
        let noise = noise_level * rng::normal(rng);
        out.push(0.45 * (a_low * saw + a_high * high) + noise);
    }
    out
}
