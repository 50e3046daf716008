//! Versioned on-disk parameter snapshots ("DNC1").
//!
//! Layout, all integers little-endian:
//!   magic "DNC1" | version u32 | depth u32 | width u32 | in_channels u32
//!   | epoch u32
//!   | per layer in stack order: conv weights, bias,
//!     then gamma, beta, running_mean, running_var where the layer has
//!     batch normalization — all raw f32 little-endian
//!   | CRC-32 (IEEE) of every preceding byte

use std::path::Path;

use crate::container::ByteReader;
use crate::conv::{ConvParams, KERNEL};
use crate::error::{Error, FileKind, Result};
use crate::model::{DnCnn, Layer};
use crate::tensor::Tensor4;
use crate::util::atomic_write;

pub const MAGIC: &[u8; 4] = b"DNC1";
pub const VERSION: u32 = 1;

/// Serializes the model and the epoch it was captured at.
pub fn checkpoint_to_bytes(model: &DnCnn<f32>, epoch: u32) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(model.depth() as u32).to_le_bytes());
    out.extend_from_slice(&(model.width() as u32).to_le_bytes());
    out.extend_from_slice(&(model.in_channels() as u32).to_le_bytes());
    out.extend_from_slice(&epoch.to_le_bytes());
    let mut push = |vals: &[f32]| {
        for v in vals {
            out.extend_from_slice(&v.to_le_bytes());
        }
    };
    for layer in model.layers() {
        push(layer.conv.weights().as_slice());
        push(layer.conv.bias());
        if let Some(bn) = &layer.bn {
            push(&bn.gamma);
            push(&bn.beta);
            push(&bn.running_mean);
            push(&bn.running_var);
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

/// Atomically writes a checkpoint file.
pub fn save_checkpoint(model: &DnCnn<f32>, epoch: u32, path: &Path) -> Result<()> {
    atomic_write(path, &checkpoint_to_bytes(model, epoch))
}

/// Parses a checkpoint, verifying magic, version, CRC, exact length and
/// architecture consistency.
pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<(DnCnn<f32>, u32)> {
    const KIND: FileKind = FileKind::Checkpoint;
    let mut r = ByteReader::new(bytes, KIND);
    if r.take(4)? != MAGIC {
        return Err(Error::BadMagic { kind: KIND });
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion {
            kind: KIND,
            version,
        });
    }
    let depth = r.u32()? as usize;
    let width = r.u32()? as usize;
    let in_channels = r.u32()? as usize;
    let epoch = r.u32()?;
    if depth < 3 {
        return Err(Error::ArchMismatch(format!(
            "checkpoint declares depth {depth}, the minimum is 3"
        )));
    }
    if width < 1 || in_channels < 1 {
        return Err(Error::ArchMismatch(
            "checkpoint declares a zero width or channel count".into(),
        ));
    }

    let floats = |r: &mut ByteReader, n: usize| -> Result<Vec<f32>> {
        let raw = r.take(n * 4)?;
        Ok(raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect())
    };

    let mut layers = Vec::with_capacity(depth);
    for k in 0..depth {
        let (c_in, c_out) = if k == 0 {
            (in_channels, width)
        } else if k == depth - 1 {
            (width, in_channels)
        } else {
            (width, width)
        };
        let weights = Tensor4::from_vec(
            c_out,
            c_in,
            KERNEL,
            KERNEL,
            floats(&mut r, c_out * c_in * KERNEL * KERNEL)?,
        )?;
        let bias = floats(&mut r, c_out)?;
        let conv = ConvParams::new(weights, bias)?;
        let interior = k > 0 && k < depth - 1;
        let bn = if interior {
            let mut bn = crate::batchnorm::BatchNormParams::identity(c_out);
            bn.gamma = floats(&mut r, c_out)?;
            bn.beta = floats(&mut r, c_out)?;
            bn.running_mean = floats(&mut r, c_out)?;
            bn.running_var = floats(&mut r, c_out)?;
            if bn.running_var.iter().any(|&v| v < 0.0) {
                return Err(Error::ArchMismatch(
                    "checkpoint contains a negative running variance".into(),
                ));
            }
            Some(bn)
        } else {
            None
        };
        layers.push(Layer {
            conv,
            bn,
            relu: k < depth - 1,
        });
    }
    let stored_crc = r.u32()?;
    r.expect_end()?;
    let computed = crc32fast::hash(&bytes[..bytes.len() - 4]);
    if stored_crc != computed {
        return Err(Error::CrcMismatch {
            kind: KIND,
            stored: stored_crc,
            computed,
        });
    }
    Ok((DnCnn::from_parts(depth, width, in_channels, layers), epoch))
}

pub fn load_checkpoint(path: &Path) -> Result<(DnCnn<f32>, u32)> {
    let bytes = std::fs::read(path)?;
    checkpoint_from_bytes(&bytes)
}
