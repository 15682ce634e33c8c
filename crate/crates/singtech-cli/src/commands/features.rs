use std::io::Write;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use rayon::prelude::*;
use singtech::audio::{load_wav, multi_res_spectrogram, segment_clips, write_spec_cache};
use singtech::data::index_dataset;

#[derive(Args)]
pub struct FeaturesArgs {
    /// Corpus root to scan for WAV files.
    #[arg(long)]
    data: PathBuf,
    /// Cache directory; receives one .spec file per clip plus features.jsonl.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    threads: Option<usize>,
}

pub fn run(args: FeaturesArgs) -> Result<i32> {
    super::setup_threads(args.threads)?;
    super::ensure_dir(&args.out)?;
    let index = index_dataset(&args.data, None)?;
    super::warn_skipped(&index.skipped);
    let records: Result<Vec<Vec<serde_json::Value>>> = index
        .entries
        .par_iter()
        .map(|entry| {
            let wav = load_wav(&entry.path)?;
            let clips = segment_clips(
                &wav.samples,
                wav.sample_rate,
                &entry.path.display().to_string(),
                Some(entry.class),
            )?;
            let stem = entry.path.file_stem().unwrap_or_default().to_string_lossy().to_string();
            let mut rows = Vec::new();
            for clip in clips {
                let stack = multi_res_spectrogram(&clip.samples)?;
                let cache = args.out.join(format!("{stem}__c{:03}.spec", clip.segment));
                write_spec_cache(&cache, &stack)?;
                rows.push(serde_json::json!({
                    "cache": cache,
                    "source": entry.path,
                    "segment": clip.segment,
                    "singer": entry.singer,
                    "class": entry.class,
                }));
            }
            Ok(rows)
        })
        .collect();
    let manifest = args.out.join("features.jsonl");
    let mut f = std::fs::File::create(&manifest)
        .with_context(|| format!("creating {}", manifest.display()))?;
    let mut total = 0usize;
    for rows in records? {
        for row in rows {
            writeln!(f, "{row}")?;
            total += 1;
        }
    }
    println!("cached {} clip spectrograms under {}", total, args.out.display());
    Ok(0)
}
