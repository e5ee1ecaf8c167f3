use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{AttentionWeights, ModelParams, ProjectionWeights};
use crate::error::{Error, Result};

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    /// Offset into the data file, in elements.
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    d: usize,
    h: usize,
    seed: u64,
    num_entities: usize,
    num_relations: usize,
    dtype: String,
    data_file: String,
    tensors: Vec<TensorEntry>,
}

fn data_path(header: &Path) -> PathBuf {
    header.with_extension("bin")
}

/// Writes a JSON header at `path` and the little-endian f64 tensors next
/// to it with a `.bin` extension.
pub fn save_model(p: &ModelParams, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bin = data_path(path);
    let mut tensors = vec![TensorEntry {
        name: "entities".into(),
        shape: vec![p.num_entities, 2 * p.d],
        offset: 0,
    }];
    let mut bytes: Vec<u8> = Vec::new();
    let mut push = |data: &[f64]| data.iter().for_each(|v| bytes.extend_from_slice(&v.to_le_bytes()));
    push(&p.entities);
    let mut offset = p.entities.len();
    for w in p.weights() {
        tensors.push(TensorEntry {
            name: w.name.into(),
            shape: w.shape.clone(),
            offset,
        });
        offset += w.data.len();
        push(w.data);
    }
    let header = Header {
        version: MODEL_FORMAT_VERSION,
        d: p.d,
        h: p.h,
        seed: p.seed,
        num_entities: p.num_entities,
        num_relations: p.num_relations,
        dtype: "f64le".into(),
        data_file: bin.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
        tensors,
    };
    fs::write(path, serde_json::to_string_pretty(&header)?)?;
    fs::write(bin, bytes)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelParams> {
    let path = path.as_ref();
    let header: Header = serde_json::from_str(&fs::read_to_string(path)?)?;
    if header.version != MODEL_FORMAT_VERSION {
        return Err(Error::Integrity(format!("unsupported model format version {}", header.version)));
    }
    let bin = path.with_file_name(&header.data_file);
    let raw = fs::read(bin)?;
    if raw.len() % 8 != 0 {
        return Err(Error::Integrity("model data is not a whole number of f64 values".into()));
    }
    let values: Vec<f64> = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    let take = |name: &str, want: &[usize]| -> Result<Vec<f64>> {
        let t = header
            .tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::Integrity(format!("model is missing tensor {name}")))?;
        if t.shape != want {
            return Err(Error::Integrity(format!("tensor {name} has shape {:?}, expected {want:?}", t.shape)));
        }
        let n: usize = want.iter().product();
        values
            .get(t.offset..t.offset + n)
            .map(<[f64]>::to_vec)
            .ok_or_else(|| Error::Integrity(format!("tensor {name} runs past the data file")))
    };
    let (r, e, h) = (header.num_relations, 2 * header.d, header.h);
    Ok(ModelParams {
        d: header.d,
        h,
        seed: header.seed,
        num_entities: header.num_entities,
        num_relations: r,
        entities: take("entities", &[header.num_entities, e])?,
        proj: ProjectionWeights {
            w1: take("proj.w1", &[r, e, h])?,
            b1: take("proj.b1", &[r, h])?,
            w2: take("proj.w2", &[r, h, h])?,
            b2: take("proj.b2", &[r, h])?,
            w3: take("proj.w3", &[r, h, e])?,
            b3: take("proj.b3", &[r, e])?,
        },
        att: AttentionWeights {
            w1: take("att.w1", &[e, h])?,
            b1: take("att.b1", &[h])?,
            w2: take("att.w2", &[h, e])?,
            b2: take("att.b2", &[e])?,
        },
    })
}
