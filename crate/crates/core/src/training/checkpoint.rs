//! Binary tensor files.
//!
//! Layout: the 8-byte magic `TBLEMB01`; a u64 length followed by that many
//! bytes of UTF-8 JSON metadata; then tensors until end of file, each as a u64
//! name length, the name, a u64 rank, `rank` u64 dimensions, and the values as
//! f32 in row-major order. All integers and floats are little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corruption::CorruptionConfig;
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::params::{ModelParams, ParamSet};
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 8] = b"TBLEMB01";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

pub fn write_tensor_file<'a>(
    path: impl AsRef<Path>,
    meta: &serde_json::Value,
    tensors: impl IntoIterator<Item = (&'a str, &'a [usize], Vec<f32>)>,
) -> Result<()> {
    let path = path.as_ref();
    let tmp = path.with_extension("partial");
    let io = |e| Error::io(path, e);
    {
        let mut w = BufWriter::new(File::create(&tmp).map_err(io)?);
        let json = serde_json::to_vec(meta)?;
        w.write_all(MAGIC).map_err(io)?;
        w.write_all(&(json.len() as u64).to_le_bytes()).map_err(io)?;
        w.write_all(&json).map_err(io)?;
        for (name, shape, data) in tensors {
            w.write_all(&(name.len() as u64).to_le_bytes()).map_err(io)?;
            w.write_all(name.as_bytes()).map_err(io)?;
            w.write_all(&(shape.len() as u64).to_le_bytes()).map_err(io)?;
            for d in shape {
                w.write_all(&(*d as u64).to_le_bytes()).map_err(io)?;
            }
            for v in data {
                w.write_all(&v.to_le_bytes()).map_err(io)?;
            }
        }
        w.flush().map_err(io)?;
    }
    std::fs::rename(&tmp, path).map_err(io)
}

fn read_exact_or<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::Checkpoint(format!("truncated file while reading {what}")))
}

fn read_u64<R: Read>(r: &mut R, what: &str) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact_or(r, &mut b, what)?;
    Ok(u64::from_le_bytes(b))
}

const MAX_NAME: u64 = 4096;
const MAX_RANK: u64 = 8;

pub fn read_tensor_file(path: impl AsRef<Path>) -> Result<(serde_json::Value, Vec<NamedTensor>)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let file_len = file.metadata().map_err(|e| Error::io(path, e))?.len();
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 8];
    read_exact_or(&mut r, &mut magic, "magic")?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!("bad magic in {}", path.display())));
    }
    let json_len = read_u64(&mut r, "metadata length")?;
    if json_len > file_len {
        return Err(Error::Checkpoint("metadata length exceeds file size".into()));
    }
    let mut json = vec![0u8; json_len as usize];
    read_exact_or(&mut r, &mut json, "metadata")?;
    let meta: serde_json::Value =
        serde_json::from_slice(&json).map_err(|e| Error::Checkpoint(format!("metadata: {e}")))?;
    let mut tensors = Vec::new();
    loop {
        let mut first = [0u8; 8];
        match r.read(&mut first[..1]) {
            Ok(0) => break,
            Ok(_) => read_exact_or(&mut r, &mut first[1..], "tensor name length")?,
            Err(e) => return Err(Error::io(path, e)),
        }
        let name_len = u64::from_le_bytes(first);
        if name_len > MAX_NAME {
            return Err(Error::Checkpoint(format!("implausible tensor name length {name_len}")));
        }
        let mut name = vec![0u8; name_len as usize];
        read_exact_or(&mut r, &mut name, "tensor name")?;
        let name = String::from_utf8(name).map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
        let rank = read_u64(&mut r, "tensor rank")?;
        if rank > MAX_RANK {
            return Err(Error::Checkpoint(format!("tensor {name} has rank {rank}")));
        }
        let shape = (0..rank)
            .map(|_| read_u64(&mut r, "tensor dims").map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let count = shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
        let count = match count {
            Some(c) if (c as u64).saturating_mul(4) <= file_len => c,
            _ => return Err(Error::Checkpoint(format!("tensor {name} larger than the file"))),
        };
        let mut raw = vec![0u8; count * 4];
        read_exact_or(&mut r, &mut raw, &format!("tensor {name}"))?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        tensors.push(NamedTensor { name, shape, data });
    }
    Ok((meta, tensors))
}

/// Copies named tensors into `params`. Every parameter must be present with
/// the same shape; unknown names are rejected.
pub fn fill_params<T: Scalar, P: ParamSet<T>>(params: &mut P, tensors: &[NamedTensor]) -> Result<()> {
    let mut targets = params.tensors_mut();
    if targets.len() != tensors.len() {
        return Err(Error::Checkpoint(format!(
            "expected {} tensors, found {}",
            targets.len(),
            tensors.len()
        )));
    }
    for src in tensors {
        let dst = targets
            .iter_mut()
            .find(|t| t.name == src.name)
            .ok_or_else(|| Error::Checkpoint(format!("unexpected tensor {}", src.name)))?;
        if dst.shape != src.shape {
            return Err(Error::Checkpoint(format!(
                "tensor {} has shape {:?}, expected {:?}",
                src.name, src.shape, dst.shape
            )));
        }
        dst.data
            .iter_mut()
            .zip(&src.data)
            .for_each(|(d, &s)| *d = T::of(f64::from(s)));
    }
    Ok(())
}

pub fn tensors_as_f32<T: Scalar, P: ParamSet<T>>(params: &P) -> Vec<(String, Vec<usize>, Vec<f32>)> {
    params
        .tensors()
        .into_iter()
        .map(|t| {
            let data = t.data.iter().map(|x| x.as_f64() as f32).collect();
            (t.name, t.shape, data)
        })
        .collect()
}

pub fn write_params<T: Scalar, P: ParamSet<T>>(
    path: impl AsRef<Path>,
    meta: &serde_json::Value,
    params: &P,
) -> Result<()> {
    let tensors = tensors_as_f32(params);
    write_tensor_file(
        path,
        meta,
        tensors.iter().map(|(n, s, d)| (n.as_str(), s.as_slice(), d.clone())),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub kind: String,
    pub model: ModelConfig,
    #[serde(default)]
    pub corruption: Option<CorruptionConfig>,
    #[serde(default)]
    pub epochs_completed: usize,
}

pub fn save_checkpoint<T: Scalar>(
    path: impl AsRef<Path>,
    model: &Model<T>,
    corruption: Option<&CorruptionConfig>,
    epochs_completed: usize,
) -> Result<()> {
    let meta = CheckpointMeta {
        format_version: FORMAT_VERSION,
        kind: "pretrain".into(),
        model: model.config.clone(),
        corruption: corruption.cloned(),
        epochs_completed,
    };
    write_params(path, &serde_json::to_value(&meta)?, &model.params)
}

pub fn parse_meta(meta: &serde_json::Value) -> Result<CheckpointMeta> {
    let m: CheckpointMeta =
        serde_json::from_value(meta.clone()).map_err(|e| Error::Checkpoint(format!("metadata: {e}")))?;
    if m.format_version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {}",
            m.format_version
        )));
    }
    Ok(m)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(Model<f32>, CheckpointMeta)> {
    let (meta, tensors) = read_tensor_file(path)?;
    let meta = parse_meta(&meta)?;
    if meta.kind != "pretrain" {
        return Err(Error::Checkpoint(format!(
            "expected a pretrained encoder, found `{}`",
            meta.kind
        )));
    }
    let model = model_from_tensors(&meta.model, &tensors)?;
    Ok((model, meta))
}

pub(crate) fn model_from_tensors(config: &ModelConfig, tensors: &[NamedTensor]) -> Result<Model<f32>> {
    config.validate()?;
    let mut params = ModelParams::<f32>::init(
        &config.encoder,
        config.row_positions(),
        config.col_positions(),
        1.0,
        1.0,
        &mut <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0),
    );
    fill_params(&mut params, tensors)?;
    Model::from_parts(config.clone(), params)
}
