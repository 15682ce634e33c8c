//! Versioned binary model checkpoints.
//!
//! Byte layout (all integers little-endian):
//!
//! ```text
//! magic      4 bytes  b"SGTC"
//! version    u32      currently 1
//! placement  u8       0 none, 1 all, 2 early, 3 late, 4 last
//! chan_div   u32      channel divisor (1 = published scale)
//! classes    u32
//! feat_dim   u32
//! in_chans   u32
//! seed       u64
//! stats      u8       0 or 1; if 1: 3 x f32 mean, 3 x f32 std
//! n_records  u32
//! record*    name_len u32, name bytes, ndim u32, ndim x u32 extents,
//!            prod(extents) x f32 data
//! ```
//!
//! Records cover every trainable tensor plus batchnorm running statistics;
//! save/load round-trips are bitwise.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::audio::NormStats;
use crate::error::{Error, Result};
use crate::model::{build_model, DCPlacement, Model, ModelConfig};
use crate::scalar::Scalar;

const MAGIC: &[u8; 4] = b"SGTC";
const VERSION: u32 = 1;

pub fn save_model<T: Scalar>(model: &Model<T>, path: &Path) -> Result<()> {
    let mut out: Vec<u8> = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(model.config.placement.tag());
    out.extend_from_slice(&(model.config.channel_div as u32).to_le_bytes());
    out.extend_from_slice(&(model.config.num_classes as u32).to_le_bytes());
    out.extend_from_slice(&(model.config.feature_dim as u32).to_le_bytes());
    out.extend_from_slice(&(model.config.in_channels as u32).to_le_bytes());
    out.extend_from_slice(&model.seed.to_le_bytes());
    match &model.norm_stats {
        Some(stats) => {
            out.push(1);
            for v in stats.mean.iter().chain(stats.std.iter()) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        None => out.push(0),
    }
    let tensors = model.named_tensors();
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, tensor) in tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(tensor.shape().len() as u32).to_le_bytes());
        for d in tensor.shape() {
            out.extend_from_slice(&(*d as u32).to_le_bytes());
        }
        for v in tensor.data() {
            out.extend_from_slice(&v.to_f32_().to_le_bytes());
        }
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    f.write_all(&out).map_err(|e| Error::io(path.display().to_string(), e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: String,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let s = self
            .bytes
            .get(self.pos..self.pos + n)
            .ok_or_else(|| Error::Checkpoint(format!("{}: truncated at byte {}", self.path, self.pos)))?;
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
    fn u64(&mut self) -> Result<u64> {
        let b = self.take(8)?;
        Ok(u64::from_le_bytes(b.try_into().unwrap()))
    }
    fn f32(&mut self) -> Result<f32> {
        let b = self.take(4)?;
        Ok(f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn load_model<T: Scalar>(path: &Path) -> Result<Model<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut r = Reader { bytes: &bytes, pos: 0, path: path.display().to_string() };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint(format!("{}: bad magic", r.path)));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("{}: unsupported version {version}", r.path)));
    }
    let placement = DCPlacement::from_tag(r.u8()?)?;
    let channel_div = r.u32()? as usize;
    let num_classes = r.u32()? as usize;
    let feature_dim = r.u32()? as usize;
    let in_channels = r.u32()? as usize;
    let seed = r.u64()?;
    let stats = if r.u8()? == 1 {
        let mut mean = [0.0f32; 3];
        let mut std = [0.0f32; 3];
        for m in &mut mean {
            *m = r.f32()?;
        }
        for s in &mut std {
            *s = r.f32()?;
        }
        Some(NormStats { mean, std })
    } else {
        None
    };

    let config = ModelConfig { placement, num_classes, feature_dim, in_channels, channel_div };
    let mut model = build_model::<T>(&config, seed);
    model.norm_stats = stats;

    let n_records = r.u32()? as usize;
    let mut records: Vec<(String, Vec<usize>, Vec<f32>)> = Vec::with_capacity(n_records);
    for _ in 0..n_records {
        let name_len = r.u32()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|_| Error::Checkpoint(format!("{}: non-utf8 record name", r.path)))?;
        let ndim = r.u32()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u32()? as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(r.f32()?);
        }
        records.push((name, shape, data));
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{}: trailing bytes", r.path)));
    }

    let mut targets = model.named_tensors_mut();
    if targets.len() != records.len() {
        return Err(Error::Checkpoint(format!(
            "{}: {} records, model needs {}",
            path.display(),
            records.len(),
            targets.len()
        )));
    }
    for (name, shape, data) in records {
        let slot = targets
            .iter_mut()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| Error::Checkpoint(format!("{}: unknown record '{name}'", path.display())))?;
        if slot.1.shape() != shape.as_slice() {
            return Err(Error::Checkpoint(format!(
                "{}: record '{name}' shape {shape:?}, model expects {:?}",
                path.display(),
                slot.1.shape()
            )));
        }
        for (dst, v) in slot.1.data_mut().iter_mut().zip(data) {
            *dst = T::from_f32(v);
        }
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::count_params;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let cfg = ModelConfig::reduced(DCPlacement::Late, 8);
        let mut model = build_model::<f32>(&cfg, 17);
        model.norm_stats = Some(NormStats { mean: [0.5, 0.25, 0.125], std: [1.5, 2.0, 0.75] });
        // Perturb some parameters away from the seeded init.
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (_, t) in model.named_tensors_mut() {
            for v in t.data_mut() {
                *v += rand::Rng::gen_range(&mut rng, -0.01..0.01f32);
            }
        }
        save_model(&model, &path).unwrap();
        let back = load_model::<f32>(&path).unwrap();
        assert_eq!(back.norm_stats, model.norm_stats);
        assert_eq!(count_params(&back).total, count_params(&model).total);
        for ((na, ta), (nb, tb)) in model.named_tensors().iter().zip(back.named_tensors().iter()) {
            assert_eq!(na, nb);
            let bits_a: Vec<u32> = ta.data().iter().map(|v| v.to_bits()).collect();
            let bits_b: Vec<u32> = tb.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(bits_a, bits_b, "{na} not bitwise identical");
        }
    }

    #[test]
    fn corrupted_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        std::fs::write(&path, b"NOPE").unwrap();
        assert!(matches!(load_model::<f32>(&path), Err(Error::Checkpoint(_))));
    }
}
