//! Versioned binary container used for model, method-state and memory
//! snapshots.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes  "FSRLABCK"
//! version  u32
//! header   u64 length + UTF-8 JSON document
//! arrays   u32 count, then per array: u64 length + length * f32 bits
//! ```
//!
//! Parameters are stored as raw `f32` bit patterns so a save/load cycle is
//! bit-exact.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Activation, DenseLayer, Model, MultiHeadMlp, Tensor};
use crate::rng::Rng;

pub const MAGIC: &[u8; 8] = b"FSRLABCK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub header: serde_json::Value,
    pub arrays: Vec<Vec<f32>>,
}

impl Container {
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_u32::<LittleEndian>(FORMAT_VERSION)?;
        let header = serde_json::to_vec(&self.header)?;
        w.write_u64::<LittleEndian>(header.len() as u64)?;
        w.write_all(&header)?;
        w.write_u32::<LittleEndian>(self.arrays.len() as u32)?;
        for a in &self.arrays {
            w.write_u64::<LittleEndian>(a.len() as u64)?;
            for &v in a {
                w.write_u32::<LittleEndian>(v.to_bits())?;
            }
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read, origin: &Path) -> Result<Self> {
        let bad = |m: &str| Error::format(origin, m.to_string());
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
        if &magic != MAGIC {
            return Err(bad("not a checkpoint (bad magic)"));
        }
        let version = r.read_u32::<LittleEndian>().map_err(|_| bad("truncated header"))?;
        if version != FORMAT_VERSION {
            return Err(bad(&format!("unsupported checkpoint version {version}")));
        }
        let hlen = r.read_u64::<LittleEndian>().map_err(|_| bad("truncated header"))? as usize;
        let mut hbuf = vec![0u8; hlen];
        r.read_exact(&mut hbuf).map_err(|_| bad("truncated header"))?;
        let header = serde_json::from_slice(&hbuf)?;
        let count = r.read_u32::<LittleEndian>().map_err(|_| bad("truncated array table"))?;
        let mut arrays = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let n = r.read_u64::<LittleEndian>().map_err(|_| bad("truncated array"))? as usize;
            let mut bytes = vec![0u8; n * 4];
            r.read_exact(&mut bytes).map_err(|_| bad("truncated array"))?;
            arrays.push(
                bytes
                    .chunks_exact(4)
                    .map(|c| f32::from_bits(u32::from_le_bytes([c[0], c[1], c[2], c[3]])))
                    .collect(),
            );
        }
        Ok(Self { header, arrays })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = File::open(path)?;
        Self::read_from(BufReader::new(f), path)
    }

    pub fn kind(&self) -> Option<&str> {
        self.header.get("kind").and_then(|v| v.as_str())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct LayerMeta {
    inputs: usize,
    outputs: usize,
    activation: Activation,
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelHeader {
    kind: String,
    trunk: Vec<LayerMeta>,
    heads: Vec<LayerMeta>,
    active_head: usize,
    #[serde(default)]
    rng_streams: BTreeMap<String, Rng>,
}

fn meta(l: &DenseLayer<f32>) -> LayerMeta {
    LayerMeta {
        inputs: l.inputs(),
        outputs: l.outputs(),
        activation: l.activation,
    }
}

/// Packs a model (plus optional RNG stream states) into a container.
pub fn model_container(model: &Model, rng_streams: &BTreeMap<String, Rng>) -> Result<Container> {
    let header = ModelHeader {
        kind: "model".into(),
        trunk: model.trunk().iter().map(meta).collect(),
        heads: model.heads().iter().map(meta).collect(),
        active_head: model.active_head(),
        rng_streams: rng_streams.clone(),
    };
    let arrays = (0..model.slot_count()).map(|s| model.slot(s).to_vec()).collect();
    Ok(Container {
        header: serde_json::to_value(header)?,
        arrays,
    })
}

pub fn model_from_container(c: &Container, origin: &Path) -> Result<(Model, BTreeMap<String, Rng>)> {
    let h: ModelHeader = serde_json::from_value(c.header.clone())?;
    if h.kind != "model" {
        return Err(Error::format(origin, format!("expected a model checkpoint, found {}", h.kind)));
    }
    let n_layers = h.trunk.len() + h.heads.len();
    if c.arrays.len() != 2 * n_layers {
        return Err(Error::format(origin, "array count does not match layer table"));
    }
    let mut arrays = c.arrays.iter();
    let mut build = |m: &LayerMeta| -> Result<DenseLayer<f32>> {
        let w = arrays.next().expect("counted").clone();
        let b = arrays.next().expect("counted").clone();
        DenseLayer::new(
            Tensor::matrix(m.outputs, m.inputs, w)?,
            Tensor::new(vec![m.outputs], b)?,
            m.activation,
        )
    };
    let trunk = h.trunk.iter().map(&mut build).collect::<Result<Vec<_>>>()?;
    let heads = h.heads.iter().map(&mut build).collect::<Result<Vec<_>>>()?;
    let mut model = MultiHeadMlp::new(trunk, heads)?;
    model.set_active_head(h.active_head)?;
    Ok((model, h.rng_streams))
}

pub fn save_model(path: &Path, model: &Model, rng_streams: &BTreeMap<String, Rng>) -> Result<()> {
    model_container(model, rng_streams)?.save(path)
}

pub fn load_model(path: &Path) -> Result<(Model, BTreeMap<String, Rng>)> {
    model_from_container(&Container::load(path)?, path)
}
