//! Packed binary dataset container ("PAD1"): fixed-size 8-bit training
//! patches in one contiguous payload plus a provenance manifest.
//!
//! Layout, all integers little-endian:
//!   magic "PAD1" | version u32 | count u32 | patch_h u32 | patch_w u32
//!   | payload (count * patch_h * patch_w bytes)
//!   | manifest length u32 | manifest UTF-8 bytes
//!   | CRC-32 (IEEE) of every preceding byte
//!
//! The manifest is one line per source image: `<filename>\t<aug-tag>`.

use std::path::Path;

use crate::error::{Error, FileKind, Result};
use crate::image::ImageGray8;
use crate::pipeline::AugTag;
use crate::util::atomic_write;

pub const MAGIC: &[u8; 4] = b"PAD1";
pub const VERSION: u32 = 1;

/// Provenance of one augmented source image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub source: String,
    pub aug: AugTag,
}

/// In-memory dataset: `count` patches of `patch_h` x `patch_w` bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetContainer {
    patch_h: usize,
    patch_w: usize,
    payload: Vec<u8>,
    manifest: Vec<ManifestEntry>,
}

impl DatasetContainer {
    /// Packs uniform patches; every patch must be `patch_h` x `patch_w`.
    pub fn pack(
        patch_h: usize,
        patch_w: usize,
        patches: &[ImageGray8],
        manifest: Vec<ManifestEntry>,
    ) -> Result<Self> {
        if patch_h == 0 || patch_w == 0 {
            return Err(Error::InvalidArgument(
                "patch dimensions must be nonzero".into(),
            ));
        }
        let mut payload = Vec::with_capacity(patches.len() * patch_h * patch_w);
        for (i, p) in patches.iter().enumerate() {
            if p.width() != patch_w || p.height() != patch_h {
                return Err(Error::ShapeMismatch(format!(
                    "patch {i} is {}x{} but the container holds {patch_w}x{patch_h}",
                    p.width(),
                    p.height()
                )));
            }
            payload.extend_from_slice(p.pixels());
        }
        for e in &manifest {
            if e.source.contains('\t') || e.source.contains('\n') {
                return Err(Error::InvalidArgument(format!(
                    "manifest source name '{}' contains a separator character",
                    e.source
                )));
            }
        }
        Ok(DatasetContainer {
            patch_h,
            patch_w,
            payload,
            manifest,
        })
    }

    #[inline]
    pub fn patch_h(&self) -> usize {
        self.patch_h
    }
    #[inline]
    pub fn patch_w(&self) -> usize {
        self.patch_w
    }
    #[inline]
    pub fn count(&self) -> usize {
        self.payload.len() / (self.patch_h * self.patch_w)
    }
    pub fn manifest(&self) -> &[ManifestEntry] {
        &self.manifest
    }

    /// Raw bytes of patch `i`.
    pub fn patch_bytes(&self, i: usize) -> &[u8] {
        let sz = self.patch_h * self.patch_w;
        &self.payload[i * sz..(i + 1) * sz]
    }

    pub fn patch_image(&self, i: usize) -> ImageGray8 {
        ImageGray8::from_pixels(self.patch_w, self.patch_h, self.patch_bytes(i).to_vec())
            .expect("payload length is a multiple of the patch size")
    }

    /// Serializes to the PAD1 byte layout.
    pub fn to_bytes(&self) -> Vec<u8> {
        let manifest_text: String = self
            .manifest
            .iter()
            .map(|e| format!("{}\t{}\n", e.source, e.aug.as_str()))
            .collect();
        let manifest_bytes = manifest_text.as_bytes();

        let mut out = Vec::with_capacity(24 + self.payload.len() + manifest_bytes.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.count() as u32).to_le_bytes());
        out.extend_from_slice(&(self.patch_h as u32).to_le_bytes());
        out.extend_from_slice(&(self.patch_w as u32).to_le_bytes());
        out.extend_from_slice(&self.payload);
        out.extend_from_slice(&(manifest_bytes.len() as u32).to_le_bytes());
        out.extend_from_slice(manifest_bytes);
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    /// Atomically writes the container file.
    pub fn save(&self, path: &Path) -> Result<()> {
        atomic_write(path, &self.to_bytes())
    }

    /// Parses the PAD1 byte layout, checking magic, version, CRC and exact
    /// length.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        const KIND: FileKind = FileKind::Container;
        let mut r = ByteReader::new(bytes, KIND);
        let magic = r.take(4)?;
        if magic != MAGIC {
            return Err(Error::BadMagic { kind: KIND });
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::UnsupportedVersion {
                kind: KIND,
                version,
            });
        }
        let count = r.u32()? as usize;
        let patch_h = r.u32()? as usize;
        let patch_w = r.u32()? as usize;
        if patch_h == 0 || patch_w == 0 {
            return Err(Error::InvalidArgument(
                "container has zero patch dimensions".into(),
            ));
        }
        let payload = r.take(count * patch_h * patch_w)?.to_vec();
        let manifest_len = r.u32()? as usize;
        let manifest_bytes = r.take(manifest_len)?;
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
        let manifest_text = std::str::from_utf8(manifest_bytes).map_err(|_| Error::Truncated {
            kind: KIND,
            detail: "manifest is not valid UTF-8".into(),
        })?;
        let mut manifest = Vec::new();
        for line in manifest_text.lines() {
            let (source, tag) = line.split_once('\t').ok_or_else(|| Error::Truncated {
                kind: KIND,
                detail: format!("malformed manifest line '{line}'"),
            })?;
            manifest.push(ManifestEntry {
                source: source.to_string(),
                aug: AugTag::parse(tag)?,
            });
        }
        Ok(DatasetContainer {
            patch_h,
            patch_w,
            payload,
            manifest,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::from_bytes(&bytes)
    }
}

/// Cursor with truncation-aware reads, shared by the binary formats.
pub(crate) struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
    kind: FileKind,
}

impl<'a> ByteReader<'a> {
    pub fn new(bytes: &'a [u8], kind: FileKind) -> Self {
        ByteReader {
            bytes,
            pos: 0,
            kind,
        }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Truncated {
                kind: self.kind,
                detail: format!(
                    "needed {n} bytes at offset {}, file has {}",
                    self.pos,
                    self.bytes.len()
                ),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    pub fn expect_end(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::Truncated {
                kind: self.kind,
                detail: format!(
                    "{} trailing bytes after the checksum",
                    self.bytes.len() - self.pos
                ),
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn patches(n: usize, sz: usize) -> Vec<ImageGray8> {
        (0..n)
            .map(|i| {
                ImageGray8::from_pixels(
                    sz,
                    sz,
                    (0..sz * sz).map(|j| ((i * 31 + j) % 256) as u8).collect(),
                )
                .unwrap()
            })
            .collect()
    }

    fn manifest() -> Vec<ManifestEntry> {
        vec![
            ManifestEntry {
                source: "cells_001.png".into(),
                aug: AugTag::R0,
            },
            ManifestEntry {
                source: "cells_001.png".into(),
                aug: AugTag::R90,
            },
        ]
    }

    #[test]
    fn round_trip_preserves_everything() {
        let c = DatasetContainer::pack(8, 8, &patches(5, 8), manifest()).unwrap();
        let back = DatasetContainer::from_bytes(&c.to_bytes()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.count(), 5);
        assert_eq!(back.patch_image(3), patches(5, 8)[3]);
    }

    #[test]
    fn empty_container_is_valid() {
        let c = DatasetContainer::pack(16, 16, &[], vec![]).unwrap();
        let back = DatasetContainer::from_bytes(&c.to_bytes()).unwrap();
        assert_eq!(back.count(), 0);
    }

    #[test]
    fn corrupted_magic_reports_magic_error() {
        let mut bytes = DatasetContainer::pack(4, 4, &patches(2, 4), vec![])
            .unwrap()
            .to_bytes();
        bytes[0] = b'Q';
        assert!(matches!(
            DatasetContainer::from_bytes(&bytes),
            Err(Error::BadMagic { .. })
        ));
    }

    #[test]
    fn corrupted_payload_reports_crc_error() {
        let mut bytes = DatasetContainer::pack(4, 4, &patches(2, 4), vec![])
            .unwrap()
            .to_bytes();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0xff;
        assert!(matches!(
            DatasetContainer::from_bytes(&bytes),
            Err(Error::CrcMismatch { .. })
        ));
    }

    #[test]
    fn truncated_file_reports_truncation() {
        let bytes = DatasetContainer::pack(4, 4, &patches(2, 4), vec![])
            .unwrap()
            .to_bytes();
        assert!(matches!(
            DatasetContainer::from_bytes(&bytes[..bytes.len() - 7]),
            Err(Error::Truncated { .. })
        ));
    }

    #[test]
    fn wrong_version_rejected() {
        let mut bytes = DatasetContainer::pack(4, 4, &patches(1, 4), vec![])
            .unwrap()
            .to_bytes();
        bytes[4] = 9;
        // re-seal so the version check (not the CRC) fires
        let crc = crc32fast::hash(&bytes[..bytes.len() - 4]);
        let n = bytes.len();
        bytes[n - 4..].copy_from_slice(&crc.to_le_bytes());
        assert!(matches!(
            DatasetContainer::from_bytes(&bytes),
            Err(Error::UnsupportedVersion { version: 9, .. })
        ));
    }

    #[test]
    fn mixed_patch_sizes_rejected() {
        let mut ps = patches(2, 8);
        ps.push(ImageGray8::constant(4, 4, 0).unwrap());
        assert!(DatasetContainer::pack(8, 8, &ps, vec![]).is_err());
    }
}
