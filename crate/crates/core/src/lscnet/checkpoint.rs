//! Model checkpoint format.
//!
//! ```text
//! magic     8 bytes  "PSLSCNET"
//! version   u32 LE   (currently 1)
//! header    u64 LE length, then UTF-8 JSON:
//!           { "version", "spec", "config",
//!             "tensors": [{ "name", "rows", "cols" }], "buffers": [ same ] }
//! payload   every tensor, then every buffer, in header order, row-major f64 LE
//! ```
//!
//! `config` is free-form: the effective settings of the run that produced
//! the model.

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{ReadBytesExt, WriteBytesExt, LE};
use serde::{Deserialize, Serialize};

use super::model::{ModelSpec, Params};
use super::tape::Tensor;
use super::LscNet;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"PSLSCNET";
pub const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    spec: ModelSpec,
    config: serde_json::Value,
    tensors: Vec<TensorEntry>,
    buffers: Vec<TensorEntry>,
}

fn entries(p: &Params) -> Vec<TensorEntry> {
    p.names()
        .iter()
        .zip(p.tensors())
        .map(|(n, t)| TensorEntry {
            name: n.clone(),
            rows: t.rows,
            cols: t.cols,
        })
        .collect()
}

pub fn write_model(mut w: impl Write, net: &LscNet, config: &serde_json::Value) -> Result<()> {
    let header = Header {
        version: VERSION,
        spec: net.spec.clone(),
        config: config.clone(),
        tensors: entries(&net.params),
        buffers: entries(&net.buffers),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Format(e.to_string()))?;
    let io = |e: std::io::Error| Error::Format(format!("writing checkpoint: {e}"));
    w.write_all(MAGIC).map_err(io)?;
    w.write_u32::<LE>(VERSION).map_err(io)?;
    w.write_u64::<LE>(json.len() as u64).map_err(io)?;
    w.write_all(&json).map_err(io)?;
    for t in net.params.tensors().iter().chain(net.buffers.tensors()) {
        for &v in &t.data {
            w.write_f64::<LE>(v).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

/// Returns the model and the stored config echo.
pub fn read_model(mut r: impl Read) -> Result<(LscNet, serde_json::Value)> {
    let io = |e: std::io::Error| Error::Format(format!("reading checkpoint: {e}"));
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(io)?;
    if &magic != MAGIC {
        return Err(Error::Format("not a model checkpoint (bad magic)".into()));
    }
    let version = r.read_u32::<LE>().map_err(io)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let len = r.read_u64::<LE>().map_err(io)?;
    if len > 1 << 30 {
        return Err(Error::Format("checkpoint header too large".into()));
    }
    let mut json = vec![0u8; len as usize];
    r.read_exact(&mut json).map_err(io)?;
    let header: Header = serde_json::from_slice(&json).map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;
    let mut read_group = |list: Vec<TensorEntry>| -> Result<Params> {
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        for entry in list {
            let mut data = vec![0.0; entry.rows * entry.cols];
            r.read_f64_into::<LE>(&mut data).map_err(io)?;
            names.push(entry.name);
            tensors.push(Tensor::new(entry.rows, entry.cols, data));
        }
        Params::from_parts(names, tensors)
    };
    let params = read_group(header.tensors)?;
    let buffers = read_group(header.buffers)?;
    let mut rest = [0u8; 1];
    if r.read(&mut rest).map_err(io)? != 0 {
        return Err(Error::Format("trailing bytes after checkpoint payload".into()));
    }
    let net = LscNet::from_parts(header.spec, params, buffers).map_err(|e| Error::Format(e.to_string()))?;
    Ok((net, header.config))
}

pub fn save_model(net: &LscNet, config: &serde_json::Value, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_model(std::io::BufWriter::new(file), net, config)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<(LscNet, serde_json::Value)> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_model(std::io::BufReader::new(file))
}
