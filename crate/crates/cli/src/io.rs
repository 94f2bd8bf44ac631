//! File-format plumbing: manifests and split lists with provenance
//! comments, history CSV, evaluation reports, and the disk-backed waveform
//! source.

use speechtraits_core::curation::{parse_manifest, render_manifest, SampleRecord, SplitManifest};
use speechtraits_core::metrics::EvalReport;
use speechtraits_core::synth::SynthCorpus;
use speechtraits_core::train::{EpochRecord, WaveformSource};
use std::path::{Path, PathBuf};

use crate::error::{io_err, CliError, CliResult};
use crate::wav;

/// Read a manifest or split file, skipping leading `#` provenance comments.
pub fn load_manifest(path: &Path) -> CliResult<Vec<SampleRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let body: String = text
        .lines()
        .filter(|line| !line.starts_with('#'))
        .map(|line| format!("{line}\n"))
        .collect();
    parse_manifest(&body).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

/// Write records as a manifest with the given provenance line on top.
pub fn write_manifest(path: &Path, records: &[SampleRecord], provenance: &str) -> CliResult<()> {
    let text = format!("{provenance}\n{}", render_manifest(records));
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

/// Emit `train.csv`, `devel.csv`, `test.csv`, and `summary.txt` into
/// `out_dir`.
pub fn emit_split_lists(splits: &SplitManifest, out_dir: &Path, provenance: &str) -> CliResult<()> {
    std::fs::create_dir_all(out_dir).map_err(|e| io_err(out_dir, e))?;
    for (name, records) in [
        ("train.csv", &splits.train),
        ("devel.csv", &splits.devel),
        ("test.csv", &splits.test),
    ] {
        write_manifest(&out_dir.join(name), records, provenance)?;
    }
    let summary = format!("{provenance}\n{}", splits.summary());
    std::fs::write(out_dir.join("summary.txt"), summary)
        .map_err(|e| io_err(&out_dir.join("summary.txt"), e))
}

/// Write the training history CSV. The provenance line also records the
/// effective transformer depth.
pub fn write_history(
    path: &Path,
    history: &[EpochRecord],
    provenance: &str,
    layers: usize,
) -> CliResult<()> {
    let text = format!(
        "{provenance} layers={layers}\n{}",
        speechtraits_core::train::history_csv(history)
    );
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

/// Write an evaluation report as `{stem}.txt` (key-value) and `{stem}.csv`
/// (tidy rows). Extra key-value lines (e.g. cost figures) are appended to
/// the text form.
pub fn write_report(
    out_dir: &Path,
    stem: &str,
    report: &EvalReport,
    extra: &[(String, String)],
    provenance: &str,
) -> CliResult<()> {
    std::fs::create_dir_all(out_dir).map_err(|e| io_err(out_dir, e))?;
    let mut text = format!("{provenance}\n{}", report.to_key_value());
    for (k, v) in extra {
        text.push_str(&format!("{k} {v}\n"));
    }
    let txt_path = out_dir.join(format!("{stem}.txt"));
    std::fs::write(&txt_path, text).map_err(|e| io_err(&txt_path, e))?;
    let csv_path = out_dir.join(format!("{stem}.csv"));
    let csv = format!("{provenance}\n{}", report.to_csv_rows());
    std::fs::write(&csv_path, csv).map_err(|e| io_err(&csv_path, e))
}

/// Waveform source reading WAV files under a root directory.
pub struct DirSource {
    root: PathBuf,
    expected_rate: u32,
}

impl DirSource {
    pub fn new(root: PathBuf, expected_rate: u32) -> Self {
        DirSource {
            root,
            expected_rate,
        }
    }
}

impl WaveformSource for DirSource {
    fn load(&self, record: &SampleRecord) -> speechtraits_core::Result<Vec<f64>> {
        let path = self.root.join(&record.file_path);
        let (samples, rate) = wav::read_wav(&path)
            .map_err(|e| speechtraits_core::Error::InvalidArgument(e.to_string()))?;
        if rate != self.expected_rate {
            return Err(speechtraits_core::Error::InvalidArgument(format!(
                "{}: sample rate {rate} but the model expects {}",
                path.display(),
                self.expected_rate
            )));
        }
        Ok(samples)
    }
}

/// Write every waveform of a generated corpus under `root`.
pub fn write_corpus_audio(corpus: &SynthCorpus, root: &Path) -> CliResult<()> {
    for (file_path, samples) in &corpus.waveforms {
        let path = root.join(file_path);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
        }
        wav::write_wav(&path, samples, corpus.sample_rate)?;
    }
    Ok(())
}
