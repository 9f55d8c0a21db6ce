//! Weight snapshots: `MARSWT01`, a little-endian u64 header length, a JSON
//! header (config, then tensor names/shapes/offsets), then every tensor as
//! little-endian f64 in header order. Offsets count f64 elements from the
//! start of the data section.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{LayerWeights, ModelConfig, Weights};
use crate::numeric::Matrix;

const MAGIC: &[u8; 8] = b"MARSWT01";

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

pub fn write_snapshot(weights: &Weights, mut out: impl Write) -> Result<()> {
    let tensors = weights.tensors();
    let mut offset = 0;
    let entries = tensors
        .iter()
        .map(|(name, shape, data)| {
            let e = TensorEntry {
                name: name.clone(),
                shape: shape.clone(),
                offset,
            };
            offset += data.len();
            e
        })
        .collect();
    let header = serde_json::to_vec(&Header {
        config: weights.config.clone(),
        tensors: entries,
    })?;
    out.write_all(MAGIC)?;
    out.write_all(&(header.len() as u64).to_le_bytes())?;
    out.write_all(&header)?;
    for (_, _, data) in &tensors {
        for x in *data {
            out.write_all(&x.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_snapshot(mut input: impl Read) -> Result<Weights> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Snapshot("bad magic".into()));
    }
    let mut len = [0u8; 8];
    input.read_exact(&mut len)?;
    let mut header = vec![0u8; u64::from_le_bytes(len) as usize];
    input.read_exact(&mut header)?;
    let header: Header = serde_json::from_slice(&header)?;
    header.config.validate()?;
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Snapshot("data section not a whole number of f64".into()));
    }
    let data: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();

    let tensor = |name: &str, shape: &[usize]| -> Result<Vec<f64>> {
        let e = header
            .tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::Snapshot(format!("missing tensor {name}")))?;
        if e.shape != shape {
            return Err(Error::Snapshot(format!(
                "{name}: shape {:?}, expected {shape:?}",
                e.shape
            )));
        }
        let n: usize = shape.iter().product();
        data.get(e.offset..e.offset + n)
            .map(<[f64]>::to_vec)
            .ok_or_else(|| Error::Snapshot(format!("{name}: data out of bounds")))
    };
    let matrix = |name: &str, rows: usize, cols: usize| -> Result<Matrix> {
        Matrix::new(rows, cols, tensor(name, &[rows, cols])?)
    };

    let c = &header.config;
    let (d, f, v) = (c.model_dim, c.ffn_dim(), c.vocab_size);
    let layers = (0..c.num_layers)
        .map(|l| {
            let p = |n: &str| format!("layers.{l}.{n}");
            Ok(LayerWeights {
                attn_norm: tensor(&p("attn_norm"), &[d])?,
                wq: matrix(&p("wq"), d, d)?,
                wk: matrix(&p("wk"), d, d)?,
                wv: matrix(&p("wv"), d, d)?,
                wo: matrix(&p("wo"), d, d)?,
                ffn_norm: tensor(&p("ffn_norm"), &[d])?,
                w_up: matrix(&p("w_up"), d, f)?,
                w_down: matrix(&p("w_down"), f, d)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Weights {
        embedding: matrix("embedding", v, d)?,
        layers,
        final_norm: tensor("final_norm", &[d])?,
        head: matrix("head", d, v)?,
        config: header.config,
    })
}

pub fn save_snapshot(weights: &Weights, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    write_snapshot(weights, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_snapshot(path: impl AsRef<Path>) -> Result<Weights> {
    read_snapshot(std::io::BufReader::new(std::fs::File::open(path)?))
}
