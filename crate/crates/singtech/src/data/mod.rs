//! Corpus indexing (VocalSet layout) and class frequencies.

pub mod synth;

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use walkdir::WalkDir;

use crate::audio::{clip_count, wav_len, SAMPLE_RATE};
use crate::error::{AudioError, Error, Result};

/// The ten techniques in fixed class order.
pub const TECHNIQUES: [&str; 10] = [
    "belt",
    "breathy",
    "inhaled",
    "lip_trill",
    "spoken",
    "straight",
    "trill",
    "trillo",
    "vibrato",
    "vocal_fry",
];

pub fn technique_name(class: usize) -> &'static str {
    TECHNIQUES[class]
}

/// Parses the technique from underscore-separated filename tokens. Two-word
/// techniques are matched as adjacent token pairs before the single tokens,
/// so "trill" inside "lip_trill" never misfires.
pub fn technique_from_stem(stem: &str) -> Option<usize> {
    let lower = stem.to_ascii_lowercase();
    let tokens: Vec<&str> = lower.split(['_', '-', ' ']).filter(|t| !t.is_empty()).collect();
    for pair in tokens.windows(2) {
        match (pair[0], pair[1]) {
            ("lip", "trill") => return Some(3),
            ("vocal", "fry") => return Some(9),
            _ => {}
        }
    }
    for t in &tokens {
        match *t {
            "belt" | "belting" => return Some(0),
            "breathy" => return Some(1),
            "inhaled" => return Some(2),
            "spoken" => return Some(4),
            "straight" => return Some(5),
            "trill" => return Some(6),
            "trillo" => return Some(7),
            "vibrato" => return Some(8),
            _ => {}
        }
    }
    None
}

/// Normalizes singer ids so "female3" and "f3" compare equal.
fn normalize_singer(s: &str) -> String {
    let lower = s.trim().to_ascii_lowercase();
    if let Some(rest) = lower.strip_prefix("female") {
        return format!("f{rest}");
    }
    if let Some(rest) = lower.strip_prefix("male") {
        return format!("m{rest}");
    }
    lower
}

fn looks_like_singer(token: &str) -> bool {
    let alpha: String = token.chars().take_while(|c| c.is_ascii_alphabetic()).collect();
    let rest = &token[alpha.len()..];
    !alpha.is_empty() && alpha.len() <= 8 && !rest.is_empty() && rest.chars().all(|c| c.is_ascii_digit())
}

/// Singer id: the first filename token shaped like `f3`/`male10`/`s07`,
/// falling back to the first directory component under the root.
fn singer_of(root: &Path, path: &Path) -> String {
    if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
        if let Some(tok) = stem.split(['_', '-']).next() {
            if looks_like_singer(tok) {
                return normalize_singer(tok);
            }
        }
    }
    if let Ok(rel) = path.strip_prefix(root) {
        if let Some(first) = rel.components().next() {
            let name = first.as_os_str().to_string_lossy();
            if path.parent() != Some(root) {
                return normalize_singer(&name);
            }
        }
    }
    "unknown".into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub path: PathBuf,
    pub singer: String,
    pub class: usize,
}

#[derive(Debug, Clone)]
pub struct DatasetIndex {
    pub entries: Vec<DatasetEntry>,
    /// Indices into `entries` for the training singers.
    pub train: Vec<usize>,
    /// Singers absent from the split file.
    pub test: Vec<usize>,
    /// Files whose technique token was not one of the ten classes.
    pub skipped: Vec<PathBuf>,
}

/// Reads training singer ids, one per line; blank lines and `#` comments
/// are ignored.
pub fn read_split_file(path: &Path) -> Result<HashSet<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .flat_map(|l| l.split_whitespace())
        .map(normalize_singer)
        .collect())
}

/// Walks `root` for WAV files, parsing technique and singer from names.
/// With no split file every entry is a training entry.
pub fn index_dataset(root: &Path, split_file: Option<&Path>) -> Result<DatasetIndex> {
    let train_singers = split_file.map(read_split_file).transpose()?;
    let mut entries = Vec::new();
    let mut skipped = Vec::new();
    let mut walker: Vec<PathBuf> = WalkDir::new(root)
        .into_iter()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_type().is_file())
        .map(|e| e.into_path())
        .filter(|p| {
            p.extension().map(|x| x.eq_ignore_ascii_case("wav")).unwrap_or(false)
        })
        .collect();
    walker.sort();
    for path in walker {
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("");
        match technique_from_stem(stem) {
            Some(class) => {
                let singer = singer_of(root, &path);
                entries.push(DatasetEntry { path, singer, class });
            }
            None => skipped.push(path),
        }
    }
    if entries.is_empty() {
        return Err(Error::Data(format!("no usable WAV files under {}", root.display())));
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (i, e) in entries.iter().enumerate() {
        match &train_singers {
            Some(set) if !set.contains(&e.singer) => test.push(i),
            _ => train.push(i),
        }
    }
    Ok(DatasetIndex { entries, train, test, skipped })
}

/// Per-class counts over a subset of entries. With `after_segmentation` the
/// tally is 3-second clips (the unit the loss sees), otherwise files.
pub fn class_frequencies(
    index: &DatasetIndex,
    subset: &[usize],
    after_segmentation: bool,
) -> Result<Vec<u64>> {
    let mut counts = vec![0u64; TECHNIQUES.len()];
    for &i in subset {
        let entry = &index.entries[i];
        if after_segmentation {
            let (samples, rate) = wav_len(&entry.path)?;
            if rate != SAMPLE_RATE {
                return Err(AudioError::WrongRate { expected: SAMPLE_RATE, got: rate }.into());
            }
            counts[entry.class] += clip_count(samples) as u64;
        } else {
            counts[entry.class] += 1;
        }
    }
    Ok(counts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::write_wav_pcm16;

    #[test]
    fn technique_tokens_resolve_to_fixed_order() {
        assert_eq!(technique_from_stem("f1_arpeggios_vibrato_a"), Some(8));
        assert_eq!(technique_from_stem("m3_scales_lip_trill_c"), Some(3));
        assert_eq!(technique_from_stem("m3_scales_trill_c"), Some(6));
        assert_eq!(technique_from_stem("s01_vocal_fry_000"), Some(9));
        assert_eq!(technique_from_stem("f9_long_trillo_a"), Some(7));
        assert_eq!(technique_from_stem("f9_long_whistle_a"), None);
    }

    fn write_corpus(dir: &Path, names: &[&str], seconds: usize) {
        for name in names {
            write_wav_pcm16(&dir.join(name), 44100, &vec![0.01; 44100 * seconds]).unwrap();
        }
    }

    #[test]
    fn split_file_partitions_by_singer_without_leakage() {
        let dir = tempfile::tempdir().unwrap();
        write_corpus(
            dir.path(),
            &[
                "f1_straight_a.wav",
                "f1_vibrato_b.wav",
                "f2_belt_a.wav",
                "m1_trillo_a.wav",
                "m2_unknowntech_a.wav",
            ],
            3,
        );
        let split = dir.path().join("train_singers.txt");
        fs::write(&split, "f1\nm1\n").unwrap();
        let index = index_dataset(dir.path(), Some(&split)).unwrap();
        assert_eq!(index.entries.len(), 4);
        assert_eq!(index.skipped.len(), 1);
        let train_singers: HashSet<&str> =
            index.train.iter().map(|i| index.entries[*i].singer.as_str()).collect();
        let test_singers: HashSet<&str> =
            index.test.iter().map(|i| index.entries[*i].singer.as_str()).collect();
        assert!(train_singers.is_disjoint(&test_singers));
        assert_eq!(index.train.len(), 3);
        assert_eq!(index.test.len(), 1);
    }

    #[test]
    fn female_and_f_prefixes_normalize_together() {
        let dir = tempfile::tempdir().unwrap();
        write_corpus(dir.path(), &["female3_breathy_a.wav"], 3);
        let split = dir.path().join("split.txt");
        fs::write(&split, "f3\n").unwrap();
        let index = index_dataset(dir.path(), Some(&split)).unwrap();
        assert_eq!(index.train.len(), 1);
    }

    #[test]
    fn clip_frequencies_count_whole_clips() {
        let dir = tempfile::tempdir().unwrap();
        // 9 s -> 3 clips, 7 s -> 2 clips, 2 s -> 0 clips.
        write_corpus(dir.path(), &["f1_belt_a.wav"], 9);
        write_corpus(dir.path(), &["f1_belt_b.wav"], 7);
        write_corpus(dir.path(), &["f1_spoken_a.wav"], 2);
        let index = index_dataset(dir.path(), None).unwrap();
        let by_file = class_frequencies(&index, &index.train, false).unwrap();
        let by_clip = class_frequencies(&index, &index.train, true).unwrap();
        assert_eq!(by_file[0], 2);
        assert_eq!(by_clip[0], 5);
        assert_eq!(by_file[4], 1);
        assert_eq!(by_clip[4], 0);
    }

    #[test]
    fn empty_directory_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(index_dataset(dir.path(), None), Err(Error::Data(_))));
    }
}
