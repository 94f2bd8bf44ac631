//! Energy-based voice activity detection.
//!
//! Frame energies in dB are thresholded relative to the per-file median
//! frame energy. The raw median-plus-offset rule marks nothing in a file
//! that is speech throughout (every frame sits at the median), so the
//! effective threshold is `min(median + offset, peak - offset)`, with an
//! absolute silence floor that keeps all-silence files empty.

use alloc::string::ToString;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Frames at or below this energy are never speech (dB full scale).
pub const SILENCE_FLOOR_DB: f64 = -80.0;

/// VAD framing and segmentation parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
#[serde(deny_unknown_fields)]
pub struct VadConfig {
    pub frame_ms: f64,
    pub hop_ms: f64,
    /// Offset in dB applied to the per-file median frame energy.
    pub energy_threshold_db: f64,
    pub min_segment_s: f64,
    pub max_segment_s: f64,
}

impl Default for VadConfig {
    fn default() -> Self {
        VadConfig {
            frame_ms: 25.0,
            hop_ms: 10.0,
            energy_threshold_db: 6.0,
            min_segment_s: 0.5,
            max_segment_s: 20.0,
        }
    }
}

impl VadConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.hop_ms > 0.0) || self.frame_ms < self.hop_ms {
            return Err(Error::InvalidConfig {
                field: "hop_ms",
                message: "requires frame_ms >= hop_ms > 0".to_string(),
            });
        }
        if !(self.min_segment_s < self.max_segment_s) {
            return Err(Error::InvalidConfig {
                field: "min_segment_s",
                message: "requires min_segment_s < max_segment_s".to_string(),
            });
        }
        Ok(())
    }
}

/// Segment a waveform into speech regions `(start_s, end_s)`.
///
/// Frames above the threshold are speech; adjacent speech frames merge;
/// segments shorter than the minimum are dropped; segments longer than the
/// maximum are split at their lowest-energy interior frame. Returned
/// segments are disjoint and ordered.
pub fn vad_segment(waveform: &[f64], sample_rate: u32, config: &VadConfig) -> Result<Vec<(f64, f64)>> {
    config.validate()?;
    if waveform.is_empty() {
        return Err(Error::InvalidArgument("vad_segment: empty waveform".to_string()));
    }
    let sr = sample_rate as f64;
    let frame_len = ((config.frame_ms / 1000.0 * sr) as usize).max(1);
    let hop_len = ((config.hop_ms / 1000.0 * sr) as usize).max(1);
    let hop_s = hop_len as f64 / sr;

    let mut energies = Vec::new();
    let mut start = 0usize;
    loop {
        let end = (start + frame_len).min(waveform.len());
        let frame = &waveform[start..end];
        let power = frame.iter().map(|&x| x * x).sum::<f64>() / frame.len() as f64;
        energies.push(10.0 * crate::fmath::log10(power + 1e-12));
        if end == waveform.len() {
            break;
        }
        start += hop_len;
    }

    let mut sorted = energies.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite energies"));
    let median = sorted[(sorted.len() - 1) / 2];
    let peak = sorted[sorted.len() - 1];
    let threshold = (median + config.energy_threshold_db).min(peak - config.energy_threshold_db);
    let speech: Vec<bool> = energies
        .iter()
        .map(|&e| e > threshold && e > SILENCE_FLOOR_DB)
        .collect();

    // Merge adjacent speech frames into frame ranges [a, b].
    let mut runs: Vec<(usize, usize)> = Vec::new();
    let mut current: Option<(usize, usize)> = None;
    for (i, &s) in speech.iter().enumerate() {
        match (s, current) {
            (true, None) => current = Some((i, i)),
            (true, Some((a, _))) => current = Some((a, i)),
            (false, Some(run)) => {
                runs.push(run);
                current = None;
            }
            (false, None) => {}
        }
    }
    if let Some(run) = current {
        runs.push(run);
    }

    // Split over-long runs at their lowest-energy interior frame.
    let max_frames = (config.max_segment_s / hop_s) as usize;
    let mut queue = runs;
    let mut bounded: Vec<(usize, usize)> = Vec::new();
    while let Some((a, b)) = queue.pop() {
        if b - a + 1 <= max_frames.max(1) {
            bounded.push((a, b));
            continue;
        }
        let mut split = a + 1;
        for i in a + 1..b {
            if energies[i] < energies[split] {
                split = i;
            }
        }
        queue.push((a, split - 1));
        queue.push((split, b));
    }
    bounded.sort_unstable();

    let segments: Vec<(f64, f64)> = bounded
        .into_iter()
        .map(|(a, b)| (a as f64 * hop_s, (b + 1) as f64 * hop_s))
        .filter(|(s, e)| e - s >= config.min_segment_s)
        .collect();
    Ok(segments)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fmath;
    use alloc::vec;

    const SR: u32 = 8000;

    fn tone(duration_s: f64) -> Vec<f64> {
        let n = (duration_s * SR as f64) as usize;
        (0..n)
            .map(|i| fmath::sin(2.0 * core::f64::consts::PI * 220.0 * i as f64 / SR as f64))
            .collect()
    }

    #[test]
    fn all_zero_waveform_has_no_segments() {
        let silence = vec![0.0; SR as usize * 2];
        let segs = vad_segment(&silence, SR, &VadConfig::default()).unwrap();
        assert!(segs.is_empty());
    }

    #[test]
    fn constant_tone_is_one_full_segment() {
        let segs = vad_segment(&tone(3.0), SR, &VadConfig::default()).unwrap();
        assert_eq!(segs.len(), 1);
        let (s, e) = segs[0];
        assert!(s.abs() < 0.03, "start {s}");
        assert!((e - 3.0).abs() < 0.03, "end {e}");
    }

    #[test]
    fn tone_silence_tone_yields_two_segments() {
        let mut wave = tone(1.0);
        wave.extend(vec![0.0; SR as usize * 2]);
        wave.extend(tone(1.0));
        let segs = vad_segment(&wave, SR, &VadConfig::default()).unwrap();
        assert_eq!(segs.len(), 2, "{segs:?}");
        let hop = 0.010;
        assert!(segs[0].0 <= hop + 1e-9);
        assert!((segs[0].1 - 1.0).abs() <= hop + 0.025 + 1e-9, "{segs:?}");
        assert!((segs[1].0 - 3.0).abs() <= hop + 0.025 + 1e-9, "{segs:?}");
        assert!((segs[1].1 - 4.0).abs() <= hop + 0.025 + 1e-9, "{segs:?}");
    }

    #[test]
    fn long_segments_split_below_max() {
        let cfg = VadConfig {
            max_segment_s: 1.0,
            ..VadConfig::default()
        };
        let segs = vad_segment(&tone(3.5), SR, &cfg).unwrap();
        assert!(segs.len() >= 3, "{segs:?}");
        for window in segs.windows(2) {
            assert!(window[0].1 <= window[1].0, "overlap in {segs:?}");
        }
        for &(s, e) in &segs {
            assert!(e - s <= cfg.max_segment_s + 1e-9);
            assert!(e - s >= cfg.min_segment_s - 1e-9);
        }
    }

    #[test]
    fn short_blips_are_dropped() {
        let mut wave = vec![0.0; SR as usize];
        wave.extend(tone(0.1));
        wave.extend(vec![0.0; SR as usize]);
        let segs = vad_segment(&wave, SR, &VadConfig::default()).unwrap();
        assert!(segs.is_empty(), "{segs:?}");
    }
}
