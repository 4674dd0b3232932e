//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        8 bytes  "VMCCKPT\0"
//! version      u32
//! header_len   u32
//! header       header_len bytes of JSON (architecture description)
//! n_params     u64
//! params       n_params x f64
//! ```

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"VMCCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

/// One entry of the architecture description stored in a checkpoint header.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerDesc {
    pub name: String,
    pub kind: String,
    pub dims: Vec<usize>,
}

pub fn write_checkpoint<W: Write, H: Serialize>(mut w: W, header: &H, params: &[f64]) -> Result<()> {
    let header = serde_json::to_vec(header)?;
    let header_len = u32::try_from(header.len())
        .map_err(|_| Error::Format("checkpoint header too large".into()))?;
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&header_len.to_le_bytes())?;
    w.write_all(&header)?;
    w.write_all(&(params.len() as u64).to_le_bytes())?;
    let mut buf = Vec::with_capacity(params.len() * 8);
    for p in params {
        buf.extend_from_slice(&p.to_le_bytes());
    }
    w.write_all(&buf)?;
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read, H: for<'de> Deserialize<'de>>(mut r: R) -> Result<(H, Vec<f64>)> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a checkpoint file (bad magic)".into()));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let version = u32::from_le_bytes(b4);
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})"
        )));
    }
    r.read_exact(&mut b4)?;
    let mut header = vec![0u8; u32::from_le_bytes(b4) as usize];
    r.read_exact(&mut header)?;
    let header: H = serde_json::from_slice(&header)?;
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    let n = u64::from_le_bytes(b8) as usize;
    let mut raw = vec![0u8; n * 8];
    r.read_exact(&mut raw)?;
    let params = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Ok((header, params))
}
