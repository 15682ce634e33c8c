//! Fixed-length clip segmentation.

use crate::error::{AudioError, Error, Result};

pub const SAMPLE_RATE: u32 = 44100;
pub const CLIP_SECONDS: usize = 3;
/// 3 s at 44.1 kHz.
pub const CLIP_SAMPLES: usize = SAMPLE_RATE as usize * CLIP_SECONDS;

/// One 3-second mono clip, the unit every later stage works with.
#[derive(Debug, Clone)]
pub struct AudioClip {
    pub samples: Vec<f32>,
    /// Source file plus segment index within it.
    pub source_id: String,
    pub segment: usize,
    pub label: Option<usize>,
}

impl AudioClip {
    pub fn new(samples: Vec<f32>, source_id: String, segment: usize, label: Option<usize>) -> Result<Self> {
        if samples.len() != CLIP_SAMPLES {
            return Err(Error::InvalidArg(format!(
                "clip must hold exactly {CLIP_SAMPLES} samples, got {}",
                samples.len()
            )));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::Numeric("non-finite sample in clip".into()));
        }
        Ok(AudioClip { samples, source_id, segment, label })
    }
}

/// Number of whole 3-second clips in a signal of `n` samples.
pub fn clip_count(n: usize) -> usize {
    n / CLIP_SAMPLES
}

/// Splits into consecutive non-overlapping 3-second windows; the final
/// remainder shorter than 3 s is dropped.
pub fn segment_clips(
    samples: &[f32],
    sample_rate: u32,
    source_id: &str,
    label: Option<usize>,
) -> Result<Vec<AudioClip>> {
    if sample_rate != SAMPLE_RATE {
        return Err(AudioError::WrongRate { expected: SAMPLE_RATE, got: sample_rate }.into());
    }
    (0..clip_count(samples.len()))
        .map(|k| {
            AudioClip::new(
                samples[k * CLIP_SAMPLES..(k + 1) * CLIP_SAMPLES].to_vec(),
                source_id.to_string(),
                k,
                label,
            )
        })
        .collect()
}
