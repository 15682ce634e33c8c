//! Synthetic long-tail corpus: ten deterministic signal recipes that mimic
//! the modulation signatures of the singing techniques, a feature extractor
//! for sanity probes, and peak-trajectory oracles used by the tests.

use std::f64::consts::PI;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audio::clip::{CLIP_SAMPLES, SAMPLE_RATE};
use crate::audio::stft::{spectrogram_channel, FRAMES, FREQ_BINS};
use crate::audio::write_wav_pcm16;
use crate::data::TECHNIQUES;
use crate::error::{Error, Result};

/// Recipe parameters for the generated corpus.
#[derive(Debug, Clone)]
pub struct SynthSpec {
    /// Clips per class, in the fixed technique order.
    pub counts: Vec<usize>,
    pub seed: u64,
}

impl SynthSpec {
    /// Long-tail defaults used by the desk-scale experiments (142 clips).
    pub fn long_tail(seed: u64) -> Self {
        SynthSpec { counts: vec![64, 32, 16, 8, 8, 4, 4, 2, 2, 2], seed }
    }

    pub fn balanced(per_class: usize, seed: u64) -> Self {
        SynthSpec { counts: vec![per_class; TECHNIQUES.len()], seed }
    }

    pub fn validate(&self) -> Result<()> {
        if self.counts.len() != TECHNIQUES.len() {
            return Err(Error::InvalidArg(format!(
                "need {} class counts, got {}",
                TECHNIQUES.len(),
                self.counts.len()
            )));
        }
        if self.counts.iter().any(|c| *c == 0) {
            return Err(Error::InvalidArg("every class needs at least one clip".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthEntry {
    pub path: PathBuf,
    pub singer: String,
    pub class: usize,
    pub clips: usize,
}

const FS: f64 = SAMPLE_RATE as f64;

fn semitones(f0: f64, st: f64) -> f64 {
    f0 * (st / 12.0).exp2()
}

/// Harmonic tone with per-sample fundamental frequency, phase-continuous.
fn harmonic_tone(
    freq_at: impl Fn(f64) -> f64,
    harmonics: usize,
    decay_pow: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let phases: Vec<f64> = (0..harmonics).map(|_| rng.gen_range(0.0..2.0 * PI)).collect();
    let mut phase = 0.0f64;
    let mut out = vec![0.0f64; CLIP_SAMPLES];
    for (i, o) in out.iter_mut().enumerate() {
        let t = i as f64 / FS;
        phase += 2.0 * PI * freq_at(t) / FS;
        let mut acc = 0.0;
        for (h, ph) in phases.iter().enumerate() {
            let k = (h + 1) as f64;
            acc += ((k * phase) + ph).sin() / k.powf(decay_pow);
        }
        *o = acc;
    }
    out
}

fn white_noise(rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..CLIP_SAMPLES).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Moving-average smoothing, used to shape noise into slow envelopes.
fn smooth(x: &[f64], half_width: usize) -> Vec<f64> {
    let n = x.len();
    let mut prefix = vec![0.0f64; n + 1];
    for i in 0..n {
        prefix[i + 1] = prefix[i] + x[i];
    }
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half_width);
            let hi = (i + half_width + 1).min(n);
            (prefix[hi] - prefix[lo]) / (hi - lo) as f64
        })
        .collect()
}

fn mix(into: &mut [f64], src: &[f64], gain: f64) {
    for (a, b) in into.iter_mut().zip(src.iter()) {
        *a += gain * b;
    }
}

fn normalize(samples: &mut [f64], peak: f64) {
    let max = samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if max > 0.0 {
        let g = peak / max;
        samples.iter_mut().for_each(|v| *v *= g);
    }
}

/// One clip of the given class. Deterministic in (seed, class, instance).
pub fn synth_clip(class: usize, seed: u64, instance: usize) -> Vec<f32> {
    let stream = seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add((class as u64) << 32)
        .wrapping_add(instance as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(stream);
    let mut s = vec![0.0f64; CLIP_SAMPLES];
    match class {
        // belt: high-energy upper harmonics, no modulation.
        0 => {
            let f0 = rng.gen_range(300.0..450.0);
            let tone = harmonic_tone(|_| f0, 14, 0.3, &mut rng);
            mix(&mut s, &tone, 1.0);
        }
        // breathy: soft harmonic stack plus broadband noise.
        1 => {
            let f0 = rng.gen_range(200.0..350.0);
            let tone = harmonic_tone(|_| f0, 6, 1.0, &mut rng);
            mix(&mut s, &tone, 0.6);
            let noise = white_noise(&mut rng);
            mix(&mut s, &noise, 0.45);
        }
        // inhaled: rising (time-reversed decay) envelope over noise + tone.
        2 => {
            let f0 = rng.gen_range(250.0..400.0);
            let tone = harmonic_tone(|_| f0, 3, 1.0, &mut rng);
            let noise = white_noise(&mut rng);
            mix(&mut s, &tone, 0.5);
            mix(&mut s, &noise, 0.5);
            for (i, v) in s.iter_mut().enumerate() {
                let u = i as f64 / CLIP_SAMPLES as f64;
                *v *= (3.0 * (u - 1.0)).exp();
            }
        }
        // lip_trill: combined AM + FM at 20-30 Hz.
        3 => {
            let f0 = rng.gen_range(150.0..250.0);
            let rate = rng.gen_range(20.0..30.0);
            let tone =
                harmonic_tone(|t| semitones(f0, 0.5 * (2.0 * PI * rate * t).sin()), 8, 1.0, &mut rng);
            mix(&mut s, &tone, 1.0);
            for (i, v) in s.iter_mut().enumerate() {
                let t = i as f64 / FS;
                *v *= 1.0 - 0.6 * (0.5 + 0.5 * (2.0 * PI * rate * t).sin());
            }
        }
        // spoken: formant-like noise bands with slow irregular envelopes.
        4 => {
            for (center, jitter, gain) in [(500.0, 60.0, 1.0), (1400.0, 120.0, 0.7), (2600.0, 180.0, 0.5)] {
                let fc: f64 = center + rng.gen_range(-jitter..jitter);
                let env = smooth(&white_noise(&mut rng), 2200); // ~50 ms
                let ph = rng.gen_range(0.0..2.0 * PI);
                for (i, v) in s.iter_mut().enumerate() {
                    let t = i as f64 / FS;
                    *v += gain * env[i] * (2.0 * PI * fc * t + ph).sin();
                }
            }
            let flutter = smooth(&white_noise(&mut rng), 8000);
            for (v, f) in s.iter_mut().zip(flutter.iter()) {
                *v *= 1.0 + 1.5 * f;
            }
        }
        // straight: plain harmonic tone.
        5 => {
            let f0 = rng.gen_range(220.0..440.0);
            let tone = harmonic_tone(|_| f0, 8, 1.0, &mut rng);
            mix(&mut s, &tone, 1.0);
        }
        // trill: pitch alternates between two notes two semitones apart.
        6 => {
            let f0 = rng.gen_range(300.0..500.0);
            let rate = rng.gen_range(10.0..14.0);
            let tone = harmonic_tone(
                |t| {
                    // Smoothed square wave between -1 and +1 semitones.
                    let sq = (8.0 * (2.0 * PI * rate * t).sin()).tanh();
                    semitones(f0, sq)
                },
                8,
                1.0,
                &mut rng,
            );
            mix(&mut s, &tone, 1.0);
        }
        // trillo: amplitude modulation at 8-12 Hz.
        7 => {
            let f0 = rng.gen_range(250.0..450.0);
            let rate = rng.gen_range(8.0..12.0);
            let tone = harmonic_tone(|_| f0, 8, 1.0, &mut rng);
            mix(&mut s, &tone, 1.0);
            for (i, v) in s.iter_mut().enumerate() {
                let t = i as f64 / FS;
                *v *= 1.0 - 0.8 * (0.5 + 0.5 * (2.0 * PI * rate * t).sin());
            }
        }
        // vibrato: FM at 5-7 Hz, depth one semitone.
        8 => {
            let f0 = rng.gen_range(300.0..500.0);
            let rate = rng.gen_range(5.0..7.0);
            let tone =
                harmonic_tone(|t| semitones(f0, (2.0 * PI * rate * t).sin()), 8, 1.0, &mut rng);
            mix(&mut s, &tone, 1.0);
        }
        // vocal_fry: sparse damped pulses at 30-60 Hz.
        9 => {
            let rate = rng.gen_range(30.0..60.0);
            let fc = rng.gen_range(300.0..600.0);
            let period = (FS / rate) as usize;
            let pulse_len = (0.008 * FS) as usize;
            let mut at = 0usize;
            while at + pulse_len < CLIP_SAMPLES {
                let ph = rng.gen_range(0.0..2.0 * PI);
                for k in 0..pulse_len {
                    let t = k as f64 / FS;
                    s[at + k] += (-t / 0.004).exp() * (2.0 * PI * fc * t + ph).sin();
                }
                let jitter = rng.gen_range(0.9..1.1);
                at += ((period as f64) * jitter) as usize;
            }
            let noise = white_noise(&mut rng);
            mix(&mut s, &noise, 0.03);
        }
        _ => unreachable!("class index out of range"),
    }
    normalize(&mut s, 0.75);
    s.into_iter().map(|v| v as f32).collect()
}

/// Writes the corpus (one 3 s WAV per clip) plus `manifest.jsonl`.
pub fn synth_generate(spec: &SynthSpec, out_dir: &Path) -> Result<Vec<SynthEntry>> {
    spec.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    let jobs: Vec<(usize, usize)> = spec
        .counts
        .iter()
        .enumerate()
        .flat_map(|(class, n)| (0..*n).map(move |k| (class, k)))
        .collect();
    let entries: Result<Vec<SynthEntry>> = jobs
        .par_iter()
        .map(|(class, k)| {
            let singer = format!("s{:02}", (class * 7 + k) % 12);
            let name = format!("{singer}_{}_{k:03}.wav", TECHNIQUES[*class]);
            let path = out_dir.join(&name);
            let samples = synth_clip(*class, spec.seed, *k);
            write_wav_pcm16(&path, SAMPLE_RATE, &samples)?;
            Ok(SynthEntry { path, singer, class: *class, clips: 1 })
        })
        .collect();
    let mut entries = entries?;
    entries.sort_by(|a, b| a.path.cmp(&b.path));
    let manifest_path = out_dir.join("manifest.jsonl");
    let mut f =
        fs::File::create(&manifest_path).map_err(|e| Error::io(manifest_path.display().to_string(), e))?;
    for e in &entries {
        let line = serde_json::to_string(e).map_err(|e| Error::Data(e.to_string()))?;
        writeln!(f, "{line}").map_err(|e| Error::io(manifest_path.display().to_string(), e))?;
    }
    Ok(entries)
}

// ---------------------------------------------------------------------------
// Oracles and probe features
// ---------------------------------------------------------------------------

/// Fractional peak-bin trajectory over interior frames of the 2048-window
/// spectrogram, refined by parabolic interpolation.
pub fn peak_trajectory(samples: &[f32]) -> Result<Vec<f64>> {
    let spec = spectrogram_channel(samples, 2048)?;
    let mut traj = Vec::new();
    for frame in 4..FRAMES - 4 {
        let mut best = (1usize, f32::NEG_INFINITY);
        for bin in 1..FREQ_BINS - 1 {
            let v = spec.data()[bin * FRAMES + frame];
            if v > best.1 {
                best = (bin, v);
            }
        }
        let b = best.0;
        let l = spec.data()[(b - 1) * FRAMES + frame] as f64;
        let c = spec.data()[b * FRAMES + frame] as f64;
        let r = spec.data()[(b + 1) * FRAMES + frame] as f64;
        let denom = l - 2.0 * c + r;
        let delta = if denom.abs() > 1e-12 { (0.5 * (l - r) / denom).clamp(-0.5, 0.5) } else { 0.0 };
        traj.push(b as f64 + delta);
    }
    Ok(traj)
}

pub fn trajectory_std(traj: &[f64]) -> f64 {
    let n = traj.len() as f64;
    let mean = traj.iter().sum::<f64>() / n;
    (traj.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
}

/// Dominant oscillation rate (Hz) of a series sampled at `rate_hz`, from the
/// magnitude of a direct DFT over the detrended series.
pub fn dominant_rate_hz(series: &[f64], rate_hz: f64, lo: f64, hi: f64) -> f64 {
    let n = series.len();
    let mean = series.iter().sum::<f64>() / n as f64;
    let mut best = (lo, 0.0f64);
    let mut f = lo;
    let step = rate_hz / n as f64;
    while f <= hi {
        let (mut re, mut im) = (0.0f64, 0.0f64);
        for (i, v) in series.iter().enumerate() {
            let ph = 2.0 * PI * f * i as f64 / rate_hz;
            let d = v - mean;
            re += d * ph.cos();
            im -= d * ph.sin();
        }
        let mag = (re * re + im * im).sqrt();
        if mag > best.1 {
            best = (f, mag);
        }
        f += step;
    }
    best.0
}

/// Fine-grained RMS envelope at 44100/64 ~ 689 Hz.
pub fn fine_envelope(samples: &[f32]) -> Vec<f64> {
    samples
        .chunks(64)
        .map(|w| (w.iter().map(|v| (*v as f64) * (*v as f64)).sum::<f64>() / w.len() as f64).sqrt())
        .collect()
}

pub const FEATURE_DIM: usize = 8;
pub const FEATURE_NAMES: [&str; FEATURE_DIM] = [
    "fm_depth",
    "fm_rate",
    "am_depth",
    "am_rate",
    "spectral_flatness",
    "hf_ratio",
    "env_slope",
    "fry_band",
];

/// Hand-crafted modulation features used by the linear-probe sanity check.
pub fn modulation_features(samples: &[f32]) -> Result<[f64; FEATURE_DIM]> {
    let traj = peak_trajectory(samples)?;
    let frame_rate = FS / 512.0;
    let fm_depth = trajectory_std(&traj);
    let fm_rate = dominant_rate_hz(&traj, frame_rate, 2.0, 40.0);

    let env = fine_envelope(samples);
    let env_rate = FS / 64.0;
    let mean_env = env.iter().sum::<f64>() / env.len() as f64;
    let std_env =
        (env.iter().map(|v| (v - mean_env) * (v - mean_env)).sum::<f64>() / env.len() as f64).sqrt();
    let am_depth = std_env / mean_env.max(1e-9);
    let am_rate = dominant_rate_hz(&env, env_rate, 2.0, 40.0);

    // Spectral flatness and high-frequency ratio from the 2048-window
    // channel, averaged over interior frames.
    let spec = spectrogram_channel(samples, 2048)?;
    let mut flatness = 0.0f64;
    let mut hf = 0.0f64;
    let mut frames_used = 0usize;
    for frame in (4..FRAMES - 4).step_by(8) {
        let mut log_sum = 0.0f64;
        let mut lin_sum = 0.0f64;
        let mut hf_sum = 0.0f64;
        for bin in 0..FREQ_BINS {
            let mag = (spec.data()[bin * FRAMES + frame] as f64).exp_m1().max(0.0);
            log_sum += (mag + 1e-9).ln();
            lin_sum += mag;
            if bin >= 186 {
                hf_sum += mag;
            }
        }
        flatness += (log_sum / FREQ_BINS as f64).exp() / (lin_sum / FREQ_BINS as f64 + 1e-9);
        hf += hf_sum / lin_sum.max(1e-9);
        frames_used += 1;
    }
    flatness /= frames_used as f64;
    hf /= frames_used as f64;

    // Normalized envelope slope: positive for rising (inhaled-style) energy.
    let n = env.len() as f64;
    let t_mean = (n - 1.0) / 2.0;
    let mut cov = 0.0f64;
    let mut var_t = 0.0f64;
    for (i, v) in env.iter().enumerate() {
        let dt = i as f64 - t_mean;
        cov += dt * (v - mean_env);
        var_t += dt * dt;
    }
    let env_slope = (cov / var_t) * n / mean_env.max(1e-9);

    // Fraction of detrended envelope spectrum in the 25-70 Hz pulse band.
    let fry_band = {
        let mut band = 0.0f64;
        let mut total = 0.0f64;
        let step = 1.0f64;
        let mut f = 2.0f64;
        while f <= 120.0 {
            let (mut re, mut im) = (0.0f64, 0.0f64);
            for (i, v) in env.iter().enumerate() {
                let ph = 2.0 * PI * f * i as f64 / env_rate;
                re += (v - mean_env) * ph.cos();
                im -= (v - mean_env) * ph.sin();
            }
            let p = re * re + im * im;
            total += p;
            if (25.0..=70.0).contains(&f) {
                band += p;
            }
            f += step;
        }
        band / total.max(1e-12)
    };

    Ok([fm_depth, fm_rate, am_depth, am_rate, flatness, hf, env_slope, fry_band])
}

/// Multinomial logistic regression on standardized features; returns the
/// training accuracy. Used to certify that the synthetic classes are
/// separable before any CNN enters the picture.
pub fn linear_probe_accuracy(features: &[[f64; FEATURE_DIM]], labels: &[usize], steps: usize) -> Result<f64> {
    use crate::ops::{linear, linear_backward, softmax_cross_entropy};
    use crate::optim::{Adam, AdamConfig};
    use crate::tensor::{GradPair, Tensor};

    let n = features.len();
    if n == 0 || labels.len() != n {
        return Err(Error::InvalidArg("probe needs matching features and labels".into()));
    }
    let classes = labels.iter().max().unwrap() + 1;
    // Standardize each feature dimension.
    let mut mean = [0.0f64; FEATURE_DIM];
    let mut var = [0.0f64; FEATURE_DIM];
    for f in features {
        for (d, v) in f.iter().enumerate() {
            mean[d] += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    for f in features {
        for (d, v) in f.iter().enumerate() {
            var[d] += (v - mean[d]) * (v - mean[d]);
        }
    }
    let std: Vec<f64> = var.iter().map(|v| (v / n as f64).sqrt().max(1e-9)).collect();
    let mut xdata = Vec::with_capacity(n * FEATURE_DIM);
    for f in features {
        for d in 0..FEATURE_DIM {
            xdata.push(((f[d] - mean[d]) / std[d]) as f32);
        }
    }
    let x = Tensor::from_vec(&[n, FEATURE_DIM], xdata)?;
    let mut w = GradPair::new(Tensor::<f32>::zeros(&[classes, FEATURE_DIM]));
    let mut b = GradPair::new(Tensor::<f32>::zeros(&[classes]));
    let mut adam = Adam::new(AdamConfig::with_lr(0.05));
    let unit = vec![1.0f32; n];
    for _ in 0..steps {
        let logits = linear(&x, &w.value, &b.value)?;
        let out = softmax_cross_entropy(&logits, labels, &unit)?;
        let (_, dw, db) = linear_backward(&x, &w.value, &out.grad_logits)?;
        w.grad.add_assign(&dw);
        b.grad.add_assign(&db);
        adam.step(&mut [&mut w, &mut b])?;
        w.zero_grad();
        b.zero_grad();
    }
    let logits = linear(&x, &w.value, &b.value)?;
    let mut correct = 0usize;
    for (i, l) in labels.iter().enumerate() {
        let row = &logits.data()[i * classes..(i + 1) * classes];
        let pred = row
            .iter()
            .enumerate()
            .fold((0usize, f32::NEG_INFINITY), |best, (k, v)| if *v > best.1 { (k, *v) } else { best })
            .0;
        if pred == *l {
            correct += 1;
        }
    }
    Ok(correct as f64 / n as f64)
}
