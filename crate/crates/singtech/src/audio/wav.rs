//! Minimal RIFF/WAVE reader and writer: PCM 16-bit and IEEE float 32,
//! mono or multi-channel (downmixed by averaging).

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{AudioError, Error, Result};

#[derive(Debug, Clone)]
pub struct WavData {
    /// Mono samples in [-1, 1]; multi-channel input is averaged.
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

const TAG_PCM: u16 = 1;
const TAG_IEEE_FLOAT: u16 = 3;

fn bad(msg: impl Into<String>) -> Error {
    AudioError::BadHeader(msg.into()).into()
}

fn read_u16(b: &[u8], at: usize) -> Result<u16> {
    b.get(at..at + 2)
        .map(|s| u16::from_le_bytes([s[0], s[1]]))
        .ok_or_else(|| bad("truncated chunk"))
}

fn read_u32(b: &[u8], at: usize) -> Result<u32> {
    b.get(at..at + 4)
        .map(|s| u32::from_le_bytes([s[0], s[1], s[2], s[3]]))
        .ok_or_else(|| bad("truncated chunk"))
}

struct Format {
    tag: u16,
    channels: u16,
    sample_rate: u32,
    bits_per_sample: u16,
}

/// Walks the chunk list and returns (fmt, data payload range).
fn parse_chunks(bytes: &[u8]) -> Result<(Format, std::ops::Range<usize>)> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(bad("missing RIFF/WAVE magic"));
    }
    let mut pos = 12usize;
    let mut fmt: Option<Format> = None;
    let mut data: Option<std::ops::Range<usize>> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = read_u32(bytes, pos + 4)? as usize;
        let body = pos + 8;
        if body + size > bytes.len() {
            return Err(bad(format!("chunk {:?} overruns file", String::from_utf8_lossy(id))));
        }
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(bad("fmt chunk too short"));
                }
                fmt = Some(Format {
                    tag: read_u16(bytes, body)?,
                    channels: read_u16(bytes, body + 2)?,
                    sample_rate: read_u32(bytes, body + 4)?,
                    bits_per_sample: read_u16(bytes, body + 14)?,
                });
            }
            b"data" => {
                data = Some(body..body + size);
            }
            _ => {}
        }
        pos = body + size + (size & 1); // chunks are word-aligned
    }
    let fmt = fmt.ok_or_else(|| bad("no fmt chunk"))?;
    let data = data.ok_or_else(|| bad("no data chunk"))?;
    Ok((fmt, data))
}

fn decode(fmt: &Format, payload: &[u8]) -> Result<Vec<f32>> {
    if fmt.channels == 0 {
        return Err(bad("zero channels"));
    }
    let ch = fmt.channels as usize;
    let interleaved: Vec<f32> = match (fmt.tag, fmt.bits_per_sample) {
        (TAG_PCM, 16) => payload
            .chunks_exact(2)
            .map(|b| i16::from_le_bytes([b[0], b[1]]) as f32 / 32768.0)
            .collect(),
        (TAG_IEEE_FLOAT, 32) => payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect(),
        (tag, bits) => {
            return Err(AudioError::UnsupportedCodec { format_tag: tag, bits_per_sample: bits }.into())
        }
    };
    if ch == 1 {
        return Ok(interleaved);
    }
    let frames = interleaved.len() / ch;
    let inv = 1.0 / ch as f32;
    Ok((0..frames)
        .map(|f| interleaved[f * ch..(f + 1) * ch].iter().sum::<f32>() * inv)
        .collect())
}

/// Reads a WAV file, downmixing to mono. The sample rate is returned
/// unchanged; callers needing a specific rate check it themselves.
pub fn load_wav(path: &Path) -> Result<WavData> {
    let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let (fmt, range) = parse_chunks(&bytes)?;
    let samples = decode(&fmt, &bytes[range])?;
    Ok(WavData { samples, sample_rate: fmt.sample_rate })
}

/// Header-only scan: (mono sample count, sample rate). Used for clip
/// counting without decoding the payload.
pub fn wav_len(path: &Path) -> Result<(usize, u32)> {
    let mut file = fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    // Chunk headers sit near the front; 64 KiB comfortably covers them.
    let mut head = vec![0u8; 65536];
    let n = file.read(&mut head).map_err(|e| Error::io(path.display().to_string(), e))?;
    head.truncate(n);
    // Re-walk chunks but tolerate a data chunk that extends past our prefix.
    if head.len() < 12 || &head[0..4] != b"RIFF" || &head[8..12] != b"WAVE" {
        return Err(bad("missing RIFF/WAVE magic"));
    }
    let mut pos = 12usize;
    let mut fmt: Option<Format> = None;
    while pos + 8 <= head.len() {
        let id = head[pos..pos + 4].to_vec();
        let size = read_u32(&head, pos + 4)? as usize;
        let body = pos + 8;
        if &id == b"fmt " {
            if body + 16 > head.len() {
                return Err(bad("fmt chunk too short"));
            }
            fmt = Some(Format {
                tag: read_u16(&head, body)?,
                channels: read_u16(&head, body + 2)?,
                sample_rate: read_u32(&head, body + 4)?,
                bits_per_sample: read_u16(&head, body + 14)?,
            });
        }
        if &id == b"data" {
            let fmt = fmt.ok_or_else(|| bad("data chunk before fmt"))?;
            let bytes_per_frame = (fmt.bits_per_sample as usize / 8) * fmt.channels as usize;
            if bytes_per_frame == 0 {
                return Err(bad("zero-size frames"));
            }
            return Ok((size / bytes_per_frame, fmt.sample_rate));
        }
        pos = body + size + (size & 1);
    }
    Err(bad("no data chunk"))
}

/// Writes mono 16-bit PCM.
pub fn write_wav_pcm16(path: &Path, sample_rate: u32, samples: &[f32]) -> Result<()> {
    write_wav_pcm16_channels(path, sample_rate, 1, samples)
}

/// Writes interleaved 16-bit PCM with the given channel count.
pub fn write_wav_pcm16_channels(
    path: &Path,
    sample_rate: u32,
    channels: u16,
    interleaved: &[f32],
) -> Result<()> {
    let data_len = interleaved.len() * 2;
    let block_align = channels as u32 * 2;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&TAG_PCM.to_le_bytes());
    out.extend_from_slice(&channels.to_le_bytes());
    out.extend_from_slice(&sample_rate.to_le_bytes());
    out.extend_from_slice(&(sample_rate * block_align).to_le_bytes());
    out.extend_from_slice(&(block_align as u16).to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for s in interleaved {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        out.extend_from_slice(&v.to_le_bytes());
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    file.write_all(&out).map_err(|e| Error::io(path.display().to_string(), e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_second_of_silence_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("silence.wav");
        write_wav_pcm16(&path, 44100, &vec![0.0; 44100]).unwrap();
        let wav = load_wav(&path).unwrap();
        assert_eq!(wav.sample_rate, 44100);
        assert_eq!(wav.samples.len(), 44100);
        assert!(wav.samples.iter().all(|s| *s == 0.0));
    }

    #[test]
    fn opposite_stereo_channels_cancel_on_downmix() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("stereo.wav");
        let interleaved: Vec<f32> = (0..2000).map(|i| if i % 2 == 0 { 0.5 } else { -0.5 }).collect();
        write_wav_pcm16_channels(&path, 44100, 2, &interleaved).unwrap();
        let wav = load_wav(&path).unwrap();
        assert_eq!(wav.samples.len(), 1000);
        assert!(wav.samples.iter().all(|s| s.abs() < 1e-4), "residual after downmix");
    }

    #[test]
    fn full_scale_sine_survives_the_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sine.wav");
        let sine: Vec<f32> = (0..44100)
            .map(|i| (2.0 * std::f32::consts::PI * 440.0 * i as f32 / 44100.0).sin())
            .collect();
        write_wav_pcm16(&path, 44100, &sine).unwrap();
        let wav = load_wav(&path).unwrap();
        let max_err = sine
            .iter()
            .zip(wav.samples.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        assert!(max_err < 1e-4, "round-trip error {max_err}");
    }

    #[test]
    fn malformed_and_unsupported_files_give_typed_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.wav");
        fs::write(&path, b"OGGSnot a wav file at all").unwrap();
        match load_wav(&path) {
            Err(Error::Audio(AudioError::BadHeader(_))) => {}
            other => panic!("expected BadHeader, got {other:?}"),
        }
        // 8-bit PCM is not supported.
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"RIFF");
        bytes.extend_from_slice(&(36u32 + 4).to_le_bytes());
        bytes.extend_from_slice(b"WAVEfmt ");
        bytes.extend_from_slice(&16u32.to_le_bytes());
        bytes.extend_from_slice(&1u16.to_le_bytes());
        bytes.extend_from_slice(&1u16.to_le_bytes());
        bytes.extend_from_slice(&44100u32.to_le_bytes());
        bytes.extend_from_slice(&44100u32.to_le_bytes());
        bytes.extend_from_slice(&1u16.to_le_bytes());
        bytes.extend_from_slice(&8u16.to_le_bytes());
        bytes.extend_from_slice(b"data");
        bytes.extend_from_slice(&4u32.to_le_bytes());
        bytes.extend_from_slice(&[0u8; 4]);
        let path8 = dir.path().join("pcm8.wav");
        fs::write(&path8, &bytes).unwrap();
        match load_wav(&path8) {
            Err(Error::Audio(AudioError::UnsupportedCodec { bits_per_sample: 8, .. })) => {}
            other => panic!("expected UnsupportedCodec, got {other:?}"),
        }
    }

    #[test]
    fn wav_len_reads_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("len.wav");
        write_wav_pcm16(&path, 44100, &vec![0.1; 123456]).unwrap();
        let (n, rate) = wav_len(&path).unwrap();
        assert_eq!(n, 123456);
        assert_eq!(rate, 44100);
    }
}
