pub mod eval;
pub mod features;
pub mod gradcheck;
pub mod params;
pub mod synth;
pub mod train;

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use rayon::prelude::*;
use singtech::audio::{load_wav, multi_res_spectrogram, segment_clips};
use singtech::data::DatasetIndex;
use singtech::Tensor;

/// Installs the global thread pool; `--threads 1` is the single-threaded
/// reproducibility mode (results are identical for any thread count).
pub fn setup_threads(threads: Option<usize>) -> Result<()> {
    if let Some(n) = threads {
        singtech::configure_threads(n.max(1)).context("configuring threads")?;
    }
    Ok(())
}

/// Decodes the given dataset entries, segments them into 3 s clips, and
/// computes raw (unstandardized) spectrogram stacks, in deterministic order.
pub fn clip_stacks(
    index: &DatasetIndex,
    subset: &[usize],
) -> Result<(Vec<Tensor<f32>>, Vec<usize>)> {
    let per_file: Result<Vec<(Vec<Tensor<f32>>, usize)>> = subset
        .par_iter()
        .map(|&i| {
            let entry = &index.entries[i];
            let wav = load_wav(&entry.path)?;
            let clips = segment_clips(
                &wav.samples,
                wav.sample_rate,
                &entry.path.display().to_string(),
                Some(entry.class),
            )?;
            let stacks: singtech::Result<Vec<Tensor<f32>>> =
                clips.iter().map(|c| multi_res_spectrogram(&c.samples)).collect();
            Ok((stacks?, entry.class))
        })
        .collect();
    let mut inputs = Vec::new();
    let mut labels = Vec::new();
    for (stacks, class) in per_file? {
        for s in stacks {
            inputs.push(s);
            labels.push(class);
        }
    }
    Ok((inputs, labels))
}

pub fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn ensure_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(())
}

pub fn warn_skipped(skipped: &[PathBuf]) {
    for path in skipped {
        eprintln!("warning: skipping {} (no known technique token)", path.display());
    }
}
