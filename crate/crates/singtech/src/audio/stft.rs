//! Multi-resolution log-magnitude spectrograms.
//!
//! Three centered STFTs with window sizes 2048/1024/512, all zero-padded to
//! FFT length 2048 with hop 512, stacked along the channel axis. Centering
//! (reflect padding by 1024 on both ends) makes every resolution produce the
//! same frame count. Magnitudes are compressed as `ln(1 + |X|)`; per-channel
//! standardization against training-set statistics happens separately so the
//! statistics can be stored with the model.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::audio::clip::CLIP_SAMPLES;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const FFT_LEN: usize = 2048;
pub const HOP: usize = 512;
pub const WINDOW_SIZES: [usize; 3] = [2048, 1024, 512];
pub const FREQ_BINS: usize = FFT_LEN / 2 + 1;
/// `1 + floor(132300 / 512)`.
pub const FRAMES: usize = 1 + CLIP_SAMPLES / HOP;
pub const CHANNELS: usize = WINDOW_SIZES.len();

/// Stacked spectrogram shape: `[3, 1025, 259]`.
pub const STACK_SHAPE: [usize; 3] = [CHANNELS, FREQ_BINS, FRAMES];

/// Periodic Hann window.
fn hann(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / len as f64).cos())
        .collect()
}

/// Reflect padding without edge duplication: index -k reads x[k], index
/// N-1+k reads x[N-1-k].
fn reflect(signal: &[f32], idx: isize) -> f64 {
    let n = signal.len() as isize;
    let i = if idx < 0 {
        -idx
    } else if idx >= n {
        2 * (n - 1) - idx
    } else {
        idx
    };
    signal[i as usize] as f64
}

struct Stft {
    fft: Arc<dyn Fft<f64>>,
}

impl Stft {
    fn new() -> Self {
        Stft { fft: FftPlanner::new().plan_fft_forward(FFT_LEN) }
    }

    /// One channel: magnitudes as `ln(1 + |X|)`, written into
    /// `out[bin * FRAMES + frame]`.
    fn channel(&self, signal: &[f32], window_size: usize, out: &mut [f32]) {
        let win = hann(window_size);
        let off = (FFT_LEN - window_size) / 2;
        let mut buf = vec![Complex::new(0.0f64, 0.0); FFT_LEN];
        let mut scratch = vec![Complex::new(0.0f64, 0.0); self.fft.get_inplace_scratch_len()];
        let pad = (FFT_LEN / 2) as isize;
        for frame in 0..FRAMES {
            let start = frame as isize * HOP as isize - pad;
            buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
            for (k, w) in win.iter().enumerate() {
                buf[off + k] = Complex::new(reflect(signal, start + (off + k) as isize) * w, 0.0);
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for (bin, c) in buf.iter().take(FREQ_BINS).enumerate() {
                out[bin * FRAMES + frame] = (1.0 + c.norm()).ln() as f32;
            }
        }
    }
}

/// Single-resolution log-magnitude spectrogram `[1025, 259]` for one clip.
pub fn spectrogram_channel(samples: &[f32], window_size: usize) -> Result<Tensor<f32>> {
    if samples.len() != CLIP_SAMPLES {
        return Err(Error::InvalidArg(format!(
            "spectrogram input must be one clip of {CLIP_SAMPLES} samples, got {}",
            samples.len()
        )));
    }
    if !WINDOW_SIZES.contains(&window_size) {
        return Err(Error::InvalidArg(format!("window size {window_size} not in {WINDOW_SIZES:?}")));
    }
    let stft = Stft::new();
    let mut out = Tensor::zeros(&[FREQ_BINS, FRAMES]);
    stft.channel(samples, window_size, out.data_mut());
    Ok(out)
}

/// Raw (unstandardized) 3-channel log-magnitude stack for one 3-second clip.
pub fn multi_res_spectrogram(samples: &[f32]) -> Result<Tensor<f32>> {
    if samples.len() != CLIP_SAMPLES {
        return Err(Error::InvalidArg(format!(
            "spectrogram input must be one clip of {CLIP_SAMPLES} samples, got {}",
            samples.len()
        )));
    }
    let stft = Stft::new();
    let mut out = Tensor::zeros(&STACK_SHAPE);
    let plane = FREQ_BINS * FRAMES;
    for (ch, wsize) in WINDOW_SIZES.iter().enumerate() {
        stft.channel(samples, *wsize, &mut out.data_mut()[ch * plane..(ch + 1) * plane]);
    }
    Ok(out)
}

/// Per-channel standardization statistics, computed on the training set and
/// stored with the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: [f32; CHANNELS],
    pub std: [f32; CHANNELS],
}

impl NormStats {
    pub fn identity() -> Self {
        NormStats { mean: [0.0; CHANNELS], std: [1.0; CHANNELS] }
    }

    /// Global per-channel mean/std over a set of raw stacks.
    pub fn compute<'a>(stacks: impl Iterator<Item = &'a Tensor<f32>>) -> Result<Self> {
        let mut acc = StatsAccum::new();
        for stack in stacks {
            acc.add(stack)?;
        }
        acc.finish()
    }

    pub fn apply(&self, stack: &mut Tensor<f32>) {
        let plane = FREQ_BINS * FRAMES;
        for ch in 0..CHANNELS {
            let (m, s) = (self.mean[ch], self.std[ch]);
            for v in &mut stack.data_mut()[ch * plane..(ch + 1) * plane] {
                *v = (*v - m) / s;
            }
        }
    }
}

/// Streaming accumulator for [`NormStats`], for corpora too large to hold
/// in memory at once.
#[derive(Debug, Default)]
pub struct StatsAccum {
    sum: [f64; CHANNELS],
    sum_sq: [f64; CHANNELS],
    stacks: usize,
}

impl StatsAccum {
    pub fn new() -> Self {
        StatsAccum::default()
    }

    pub fn add(&mut self, stack: &Tensor<f32>) -> Result<()> {
        if stack.shape() != STACK_SHAPE {
            return Err(Error::Shape(format!("stack shape {:?}", stack.shape())));
        }
        let plane = FREQ_BINS * FRAMES;
        for ch in 0..CHANNELS {
            for v in &stack.data()[ch * plane..(ch + 1) * plane] {
                self.sum[ch] += *v as f64;
                self.sum_sq[ch] += (*v as f64) * (*v as f64);
            }
        }
        self.stacks += 1;
        Ok(())
    }

    pub fn finish(&self) -> Result<NormStats> {
        if self.stacks == 0 {
            return Err(Error::InvalidArg("no stacks to compute statistics from".into()));
        }
        let n = (self.stacks * FREQ_BINS * FRAMES) as f64;
        let mut mean = [0.0f32; CHANNELS];
        let mut std = [0.0f32; CHANNELS];
        for ch in 0..CHANNELS {
            let m = self.sum[ch] / n;
            mean[ch] = m as f32;
            std[ch] = (self.sum_sq[ch] / n - m * m).max(0.0).sqrt().max(1e-6) as f32;
        }
        Ok(NormStats { mean, std })
    }
}

/// Writes the cache format: 12-byte header of three little-endian u32
/// extents, then row-major little-endian f32 data.
pub fn write_spec_cache(path: &Path, stack: &Tensor<f32>) -> Result<()> {
    let [c, h, w] = *stack.shape() else {
        return Err(Error::Shape(format!("cache expects a 3-D stack, got {:?}", stack.shape())));
    };
    let mut bytes = Vec::with_capacity(12 + stack.len() * 4);
    for extent in [c, h, w] {
        bytes.extend_from_slice(&(extent as u32).to_le_bytes());
    }
    for v in stack.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn read_spec_cache(path: &Path) -> Result<Tensor<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    if bytes.len() < 12 {
        return Err(Error::Data(format!("{}: truncated cache header", path.display())));
    }
    let extent = |k: usize| {
        u32::from_le_bytes([bytes[4 * k], bytes[4 * k + 1], bytes[4 * k + 2], bytes[4 * k + 3]]) as usize
    };
    let shape = [extent(0), extent(1), extent(2)];
    let n: usize = shape.iter().product();
    if bytes.len() != 12 + 4 * n {
        return Err(Error::Data(format!(
            "{}: cache payload {} bytes, header implies {}",
            path.display(),
            bytes.len() - 12,
            4 * n
        )));
    }
    let data = bytes[12..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    Tensor::from_vec(&shape, data)
}
