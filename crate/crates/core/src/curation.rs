//! Dataset-curation procedures over sample manifests: per-speaker caps,
//! age-decade x gender balanced speaker selection, speaker-disjoint
//! train/devel/test splits, and split-list rendering with a summary of
//! sample and speaker counts.
//!
//! Every operation is a pure function of `(input, parameters, seed)`;
//! outputs are byte-identical across reruns.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::metrics::GenderLabel;
use crate::rng;
use crate::{Error, Result};

/// Manifest column set, fixed.
pub const MANIFEST_HEADER: &str = "file_path,speaker_id,age_years,gender,dataset,duration_s";

/// One audio sample's metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub file_path: String,
    pub speaker_id: String,
    pub age_years: u32,
    pub gender: GenderLabel,
    pub dataset: String,
    pub duration_s: f64,
}

impl SampleRecord {
    fn render(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.file_path, self.speaker_id, self.age_years, self.gender, self.dataset,
            self.duration_s
        )
    }
}

/// Parse and validate a delimited manifest with the canonical header.
///
/// Rejects malformed rows, unknown gender tokens, out-of-range ages,
/// duplicate file paths, and speakers whose age or gender varies within a
/// dataset. Errors carry 1-based line numbers.
pub fn parse_manifest(text: &str) -> Result<Vec<SampleRecord>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header == MANIFEST_HEADER => {}
        Some((_, header)) => {
            return Err(Error::Manifest {
                line: 1,
                message: format!("expected header `{MANIFEST_HEADER}`, got `{header}`"),
            })
        }
        None => {
            return Err(Error::Manifest {
                line: 1,
                message: "empty manifest".to_string(),
            })
        }
    }
    let mut records = Vec::new();
    let mut seen_paths: BTreeMap<&str, usize> = BTreeMap::new();
    let mut speaker_attrs: BTreeMap<(String, String), (u32, GenderLabel, usize)> = BTreeMap::new();
    for (idx, raw) in lines {
        let line = idx + 1;
        if raw.is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split(',').collect();
        if fields.len() != 6 {
            return Err(Error::Manifest {
                line,
                message: format!("expected 6 comma-separated fields, got {}", fields.len()),
            });
        }
        let age_years: u32 = fields[2].parse().map_err(|_| Error::Manifest {
            line,
            message: format!("age `{}` is not an integer", fields[2]),
        })?;
        if age_years > 100 {
            return Err(Error::Manifest {
                line,
                message: format!("age {age_years} outside 0..=100"),
            });
        }
        let gender = GenderLabel::parse(fields[3]).map_err(|e| Error::Manifest {
            line,
            message: format!("{e}"),
        })?;
        let duration_s: f64 = fields[5].parse().map_err(|_| Error::Manifest {
            line,
            message: format!("duration `{}` is not a number", fields[5]),
        })?;
        if !(duration_s > 0.0) {
            return Err(Error::Manifest {
                line,
                message: format!("duration {duration_s} must be > 0"),
            });
        }
        if let Some(prev) = seen_paths.insert(fields[0], line) {
            return Err(Error::Manifest {
                line,
                message: format!("duplicate file_path `{}` (first at line {prev})", fields[0]),
            });
        }
        let key = (fields[4].to_string(), fields[1].to_string());
        match speaker_attrs.get(&key) {
            Some(&(age, g, first)) if age != age_years || g != gender => {
                return Err(Error::Manifest {
                    line,
                    message: format!(
                        "speaker `{}` has inconsistent attributes (first seen at line {first})",
                        fields[1]
                    ),
                });
            }
            Some(_) => {}
            None => {
                speaker_attrs.insert(key, (age_years, gender, line));
            }
        }
        records.push(SampleRecord {
            file_path: fields[0].to_string(),
            speaker_id: fields[1].to_string(),
            age_years,
            gender,
            dataset: fields[4].to_string(),
            duration_s,
        });
    }
    Ok(records)
}

/// Render records back to the canonical manifest format (LF line endings).
pub fn render_manifest(records: &[SampleRecord]) -> String {
    let mut out = String::from(MANIFEST_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&r.render());
        out.push('\n');
    }
    out
}

/// Keep at most `cap` samples per `(dataset, speaker)`, choosing a seeded
/// uniform subset for speakers over the cap. Speakers at or below the cap
/// keep every sample. Input order is preserved for kept records.
pub fn cap_per_speaker(records: &[SampleRecord], cap: usize, seed: u64) -> Result<Vec<SampleRecord>> {
    if cap == 0 {
        return Err(Error::InvalidArgument("cap_per_speaker: cap must be >= 1".to_string()));
    }
    let mut by_speaker: BTreeMap<(String, String), Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        by_speaker
            .entry((r.dataset.clone(), r.speaker_id.clone()))
            .or_default()
            .push(i);
    }
    let mut keep = alloc::vec![true; records.len()];
    for ((dataset, speaker), indices) in &by_speaker {
        if indices.len() <= cap {
            continue;
        }
        let mut stream = rng::derive(seed, &format!("cap:{dataset}:{speaker}"));
        let kept: BTreeSet<usize> = rng::sample(&mut stream, indices, cap).into_iter().collect();
        for &i in indices {
            keep[i] = kept.contains(&i);
        }
    }
    Ok(records
        .iter()
        .enumerate()
        .filter(|(i, _)| keep[*i])
        .map(|(_, r)| r.clone())
        .collect())
}

fn speaker_cells(records: &[SampleRecord]) -> BTreeMap<(u32, GenderLabel), Vec<String>> {
    // First (sorted) occurrence fixes a speaker's attributes.
    let mut attrs: BTreeMap<String, (u32, GenderLabel)> = BTreeMap::new();
    for r in records {
        attrs
            .entry(r.speaker_id.clone())
            .or_insert((r.age_years, r.gender));
    }
    let mut cells: BTreeMap<(u32, GenderLabel), Vec<String>> = BTreeMap::new();
    for (speaker, (age, gender)) in attrs {
        cells.entry((age / 10, gender)).or_default().push(speaker);
    }
    cells
}

/// Balanced speaker selection over (age decade, gender) cells: per cell a
/// seeded sample of at most `max_speakers_per_cell` speakers, of which at
/// most `test_speakers_per_cell` go to the test set and the rest to the
/// training pool. Under-populated cells take what exists.
pub fn balanced_select(
    records: &[SampleRecord],
    max_speakers_per_cell: usize,
    test_speakers_per_cell: usize,
    seed: u64,
) -> Result<(BTreeSet<String>, BTreeSet<String>)> {
    if max_speakers_per_cell == 0 || test_speakers_per_cell == 0 {
        return Err(Error::InvalidArgument(
            "balanced_select: cell parameters must be >= 1".to_string(),
        ));
    }
    let mut test = BTreeSet::new();
    let mut pool = BTreeSet::new();
    for ((decade, gender), speakers) in speaker_cells(records) {
        let mut stream = rng::derive(seed, &format!("balance:{decade}:{gender}"));
        let selected = rng::sample(&mut stream, &speakers, max_speakers_per_cell);
        for (i, speaker) in selected.into_iter().enumerate() {
            if i < test_speakers_per_cell {
                test.insert(speaker);
            } else {
                pool.insert(speaker);
            }
        }
    }
    Ok((test, pool))
}

/// Seeded speaker-level split of the training pool into train and devel.
/// Devel size is `round(fraction * n)` (half-up), at least 1 and at most
/// `n - 1`.
pub fn split_dev(
    pool: &BTreeSet<String>,
    dev_fraction: f64,
    seed: u64,
) -> Result<(BTreeSet<String>, BTreeSet<String>)> {
    if !(dev_fraction > 0.0 && dev_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "split_dev: fraction {dev_fraction} not in (0, 1)"
        )));
    }
    let n = pool.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "split_dev: need at least 2 speakers, got {n}"
        )));
    }
    let mut speakers: Vec<String> = pool.iter().cloned().collect();
    let mut stream = rng::derive(seed, "dev_split");
    rng::shuffle(&mut stream, &mut speakers);
    let n_dev = (crate::fmath::floor(dev_fraction * n as f64 + 0.5) as usize)
        .max(1)
        .min(n - 1);
    let devel: BTreeSet<String> = speakers[..n_dev].iter().cloned().collect();
    let train: BTreeSet<String> = speakers[n_dev..].iter().cloned().collect();
    Ok((train, devel))
}

/// Speaker-disjoint train/devel/test record lists.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SplitManifest {
    pub train: Vec<SampleRecord>,
    pub devel: Vec<SampleRecord>,
    pub test: Vec<SampleRecord>,
}

impl SplitManifest {
    /// Assemble splits by speaker membership. Records of speakers outside
    /// all three sets are dropped; each split is sorted by
    /// `(speaker_id, file_path)`.
    pub fn from_speaker_sets(
        records: &[SampleRecord],
        train: &BTreeSet<String>,
        devel: &BTreeSet<String>,
        test: &BTreeSet<String>,
    ) -> Result<Self> {
        for (a, b, what) in [
            (train, devel, "train/devel"),
            (train, test, "train/test"),
            (devel, test, "devel/test"),
        ] {
            if a.intersection(b).next().is_some() {
                return Err(Error::InvalidArgument(format!(
                    "speaker sets overlap between {what}"
                )));
            }
        }
        let mut manifest = SplitManifest::default();
        for r in records {
            if train.contains(&r.speaker_id) {
                manifest.train.push(r.clone());
            } else if devel.contains(&r.speaker_id) {
                manifest.devel.push(r.clone());
            } else if test.contains(&r.speaker_id) {
                manifest.test.push(r.clone());
            }
        }
        for split in [&mut manifest.train, &mut manifest.devel, &mut manifest.test] {
            split.sort_by(|a, b| {
                (a.speaker_id.as_str(), a.file_path.as_str())
                    .cmp(&(b.speaker_id.as_str(), b.file_path.as_str()))
            });
        }
        Ok(manifest)
    }

    pub fn speaker_sets(&self) -> [BTreeSet<&str>; 3] {
        [&self.train, &self.devel, &self.test]
            .map(|split| split.iter().map(|r| r.speaker_id.as_str()).collect())
    }

    /// Speaker-disjointness across all three splits.
    pub fn is_speaker_disjoint(&self) -> bool {
        let [train, devel, test] = self.speaker_sets();
        train.intersection(&devel).next().is_none()
            && train.intersection(&test).next().is_none()
            && devel.intersection(&test).next().is_none()
    }

    /// Summary of `#samples (#speakers)` per dataset and split, one row per
    /// dataset plus a total row.
    pub fn summary(&self) -> String {
        let mut datasets: BTreeSet<&str> = BTreeSet::new();
        for split in [&self.train, &self.devel, &self.test] {
            for r in split.iter() {
                datasets.insert(&r.dataset);
            }
        }
        let count = |split: &[SampleRecord], dataset: Option<&str>| {
            let mut samples = 0usize;
            let mut speakers = BTreeSet::new();
            for r in split {
                if dataset.map_or(true, |d| r.dataset == d) {
                    samples += 1;
                    speakers.insert(&r.speaker_id);
                }
            }
            format!("{samples} ({})", speakers.len())
        };
        let mut out = String::from("dataset: train / devel / test\n");
        for d in &datasets {
            out.push_str(&format!(
                "{d}: {} / {} / {}\n",
                count(&self.train, Some(d)),
                count(&self.devel, Some(d)),
                count(&self.test, Some(d)),
            ));
        }
        out.push_str(&format!(
            "total: {} / {} / {}\n",
            count(&self.train, None),
            count(&self.devel, None),
            count(&self.test, None),
        ));
        out
    }
}

/// Curation pipeline parameters.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
#[serde(deny_unknown_fields)]
pub struct CurationParams {
    pub cap: usize,
    pub cell_max: usize,
    pub cell_test: usize,
    pub dev_fraction: f64,
    pub seed: u64,
}

impl Default for CurationParams {
    fn default() -> Self {
        CurationParams {
            cap: 20,
            cell_max: 20,
            cell_test: 7,
            dev_fraction: 0.1,
            seed: 0,
        }
    }
}

/// The full pipeline: cap, balanced selection, dev split, split assembly.
/// Samples are capped before speakers are balanced.
pub fn curate(records: &[SampleRecord], params: &CurationParams) -> Result<SplitManifest> {
    let capped = cap_per_speaker(records, params.cap, params.seed)?;
    let (test, pool) = balanced_select(&capped, params.cell_max, params.cell_test, params.seed)?;
    let (train, devel) = split_dev(&pool, params.dev_fraction, params.seed)?;
    SplitManifest::from_speaker_sets(&capped, &train, &devel, &test)
}
