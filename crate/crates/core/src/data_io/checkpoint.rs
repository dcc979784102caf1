//! Binary model checkpoints.
//!
//! Layout: the 8-byte magic `GSWECKPT`, a little-endian `u32` format
//! version, a little-endian `u64` manifest length, the UTF-8 JSON manifest,
//! then every parameter tensor as raw little-endian `f64` in manifest order.

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind as IoKind, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diffgraph::Tensor;
use crate::error::{Error, Result};
use crate::nn::Parameters;
use crate::pool::{Model, ModelSpec};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"GSWECKPT";
const MAX_MANIFEST: u64 = 1 << 30;

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    spec: ModelSpec,
    shapes: Vec<Vec<usize>>,
    provenance: serde_json::Value,
}

/// A model together with free-form provenance (seed, effective config, ...).
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub provenance: serde_json::Value,
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(ckpt, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn write_checkpoint(ckpt: &Checkpoint, w: &mut impl Write) -> Result<()> {
    let params = ckpt.model.params();
    let manifest = Manifest {
        spec: ckpt.model.spec(),
        shapes: params.iter().map(|t| t.shape().to_vec()).collect(),
        provenance: ckpt.provenance.clone(),
    };
    let json = serde_json::to_vec(&manifest).expect("serializable manifest");
    w.write_all(MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    for t in params {
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    read_checkpoint(&mut BufReader::new(File::open(path)?))
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        IoKind::UnexpectedEof => Error::Data(format!("checkpoint truncated while reading {what}")),
        _ => Error::Io(e),
    })
}

pub fn read_checkpoint(r: &mut impl Read) -> Result<Checkpoint> {
    let mut magic = [0u8; 8];
    read_exact(r, &mut magic, "magic")?;
    if &magic != MAGIC {
        return Err(Error::Data("not a GSWE checkpoint (bad magic)".into()));
    }
    let mut b4 = [0u8; 4];
    read_exact(r, &mut b4, "version")?;
    let version = u32::from_le_bytes(b4);
    if version != CHECKPOINT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let mut b8 = [0u8; 8];
    read_exact(r, &mut b8, "manifest length")?;
    let len = u64::from_le_bytes(b8);
    if len > MAX_MANIFEST {
        return Err(Error::Data(format!("implausible manifest length {len}")));
    }
    let mut json = vec![0u8; len as usize];
    read_exact(r, &mut json, "manifest")?;
    let manifest: Manifest = serde_json::from_slice(&json)
        .map_err(|e| Error::Data(format!("bad checkpoint manifest: {e}")))?;

    let mut tensors = Vec::with_capacity(manifest.shapes.len());
    for (i, shape) in manifest.shapes.iter().enumerate() {
        let n: usize = shape.iter().product();
        let mut raw = vec![0u8; n * 8];
        read_exact(r, &mut raw, &format!("tensor {i}"))?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        tensors.push(Tensor::new(shape.clone(), data)?);
    }
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(Error::Data(
            "trailing bytes after checkpoint tensors".into(),
        ));
    }
    Ok(Checkpoint {
        model: Model::from_spec(&manifest.spec, tensors)?,
        provenance: manifest.provenance,
    })
}
