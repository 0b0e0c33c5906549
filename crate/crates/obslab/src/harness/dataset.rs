//! Dataset persistence: a fixed little-endian binary layout plus a JSON
//! sidecar for generation metadata.
//!
//! Layout: magic `OBSLAB1\0`; u32 width, u32 height; u64 count; `count`
//! label bytes (0 or 1); `count * width * height` f32 pixels (row-major per
//! image); finally a 64-bit FNV-1a checksum of every preceding byte. The
//! format is append-friendly, bit-exact, and parseable from any language
//! with a binary reader.
//!
//! Templates reuse the same container with `count = 1` and label 0, so a
//! learned template travels through the same read/write/checksum path as
//! the data it scores.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::config::fnv1a64;
use crate::observers::Template;
use crate::trainers::{LabeledImages, TrainError};

pub const DATASET_MAGIC: &[u8; 8] = b"OBSLAB1\0";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("bad magic: expected OBSLAB1, found {found:02x?}")]
    BadMagic { found: [u8; 8] },
    #[error("file truncated: needed {needed} bytes, found {found}")]
    Truncated { needed: usize, found: usize },
    #[error("checksum mismatch: stored {stored:016x}, computed {computed:016x}")]
    ChecksumMismatch { stored: u64, computed: u64 },
    #[error("label {value} at image {index} is not 0 or 1")]
    BadLabel { index: usize, value: u8 },
    #[error("pixel array holds {got} values but count*width*height = {expected}")]
    BadShape { expected: usize, got: usize },
    #[error("expected a single-image container, found count {count}")]
    NotSingleImage { count: usize },
    #[error("invalid sidecar {path}: {message}")]
    BadSidecar { path: String, message: String },
}

/// In-memory dataset: labeled images on one grid. Pixels are stored as f32
/// exactly as on disk, so a write/read round-trip is bit-exact.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    width: u32,
    height: u32,
    labels: Vec<u8>,
    pixels: Vec<f32>,
}

impl Dataset {
    pub fn new(
        width: u32,
        height: u32,
        labels: Vec<u8>,
        pixels: Vec<f32>,
    ) -> Result<Self, DatasetError> {
        let m = width as usize * height as usize;
        if pixels.len() != labels.len() * m {
            return Err(DatasetError::BadShape {
                expected: labels.len() * m,
                got: pixels.len(),
            });
        }
        if let Some((index, &value)) = labels.iter().enumerate().find(|(_, &l)| l > 1) {
            return Err(DatasetError::BadLabel { index, value });
        }
        Ok(Self { width, height, labels, pixels })
    }

    /// Empty dataset on the given grid (a valid header-only file).
    pub fn empty(width: u32, height: u32) -> Self {
        Self { width, height, labels: Vec::new(), pixels: Vec::new() }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels_per_image(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn count(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn image(&self, index: usize) -> &[f32] {
        let m = self.pixels_per_image();
        &self.pixels[index * m..(index + 1) * m]
    }

    pub fn image_f64(&self, index: usize) -> Vec<f64> {
        self.image(index).iter().map(|&p| f64::from(p)).collect()
    }

    /// Appends one image, rounding pixels to f32 (the storage precision).
    pub fn push(&mut self, label: u8, image: &[f64]) -> Result<(), DatasetError> {
        if image.len() != self.pixels_per_image() {
            return Err(DatasetError::BadShape {
                expected: self.pixels_per_image(),
                got: image.len(),
            });
        }
        if label > 1 {
            return Err(DatasetError::BadLabel { index: self.count(), value: label });
        }
        self.labels.push(label);
        self.pixels.extend(image.iter().map(|&p| p as f32));
        Ok(())
    }

    /// Splits into per-class training pools (class 0, then class 1).
    pub fn to_labeled_images(&self) -> Result<LabeledImages, TrainError> {
        let mut h0 = Vec::new();
        let mut h1 = Vec::new();
        for i in 0..self.count() {
            let img = self.image_f64(i);
            if self.labels[i] == 0 {
                h0.push(img);
            } else {
                h1.push(img);
            }
        }
        LabeledImages::new(h0, h1)
    }

    /// All images of one class as f64 vectors, in file order.
    pub fn class_images(&self, label: u8) -> Vec<Vec<f64>> {
        (0..self.count())
            .filter(|&i| self.labels[i] == label)
            .map(|i| self.image_f64(i))
            .collect()
    }

    fn to_bytes(&self) -> Vec<u8> {
        let mut bytes = Vec::with_capacity(24 + self.labels.len() + self.pixels.len() * 4 + 8);
        bytes.extend_from_slice(DATASET_MAGIC);
        bytes.extend_from_slice(&self.width.to_le_bytes());
        bytes.extend_from_slice(&self.height.to_le_bytes());
        bytes.extend_from_slice(&(self.labels.len() as u64).to_le_bytes());
        bytes.extend_from_slice(&self.labels);
        for p in &self.pixels {
            bytes.extend_from_slice(&p.to_le_bytes());
        }
        let checksum = fnv1a64(&bytes);
        bytes.extend_from_slice(&checksum.to_le_bytes());
        bytes
    }

    pub fn write(&self, path: &Path) -> Result<(), DatasetError> {
        let bytes = self.to_bytes();
        let mut file = fs::File::create(path).map_err(|source| DatasetError::Io {
            path: path.display().to_string(),
            source,
        })?;
        file.write_all(&bytes).map_err(|source| DatasetError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn read(path: &Path) -> Result<Self, DatasetError> {
        let bytes = fs::read(path).map_err(|source| DatasetError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DatasetError> {
        let need = |needed: usize| -> Result<(), DatasetError> {
            if bytes.len() < needed {
                Err(DatasetError::Truncated { needed, found: bytes.len() })
            } else {
                Ok(())
            }
        };
        need(24)?;
        let mut magic = [0u8; 8];
        magic.copy_from_slice(&bytes[..8]);
        if &magic != DATASET_MAGIC {
            return Err(DatasetError::BadMagic { found: magic });
        }
        let width = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        let height = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes"));
        let count = u64::from_le_bytes(bytes[16..24].try_into().expect("8 bytes")) as usize;
        let m = width as usize * height as usize;
        let pixel_bytes = count
            .checked_mul(m)
            .and_then(|n| n.checked_mul(4))
            .ok_or(DatasetError::Truncated { needed: usize::MAX, found: bytes.len() })?;
        let total = 24 + count + pixel_bytes + 8;
        need(total)?;

        let stored = u64::from_le_bytes(
            bytes[total - 8..total].try_into().expect("8 bytes"),
        );
        let computed = fnv1a64(&bytes[..total - 8]);
        if stored != computed {
            return Err(DatasetError::ChecksumMismatch { stored, computed });
        }

        let labels = bytes[24..24 + count].to_vec();
        let mut pixels = Vec::with_capacity(count * m);
        for chunk in bytes[24 + count..total - 8].chunks_exact(4) {
            pixels.push(f32::from_le_bytes(chunk.try_into().expect("4 bytes")));
        }
        Self::new(width, height, labels, pixels)
    }
}

/// Writes a template as a single-image dataset (count = 1, label 0).
pub fn write_template(
    path: &Path,
    template: &Template,
    width: u32,
    height: u32,
) -> Result<(), DatasetError> {
    let mut set = Dataset::empty(width, height);
    set.push(0, template.weights())?;
    set.write(path)
}

/// Reads a template back from a single-image dataset container.
pub fn read_template(path: &Path) -> Result<Template, DatasetError> {
    let set = Dataset::read(path)?;
    if set.count() != 1 {
        return Err(DatasetError::NotSingleImage { count: set.count() });
    }
    Ok(Template::new(set.image_f64(0)))
}

/// Generation metadata written next to each dataset file. The binary layout
/// has no metadata section, so provenance travels in this sidecar.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    /// Master seed of the generating run.
    pub seed: u64,
    /// Digest of the generating config, hex.
    pub config_digest: String,
    /// Stream tag used to derive this file's per-image streams.
    pub stream_tag: String,
    pub count: usize,
}

impl DatasetManifest {
    pub fn sidecar_path(dataset_path: &Path) -> std::path::PathBuf {
        let mut name = dataset_path.as_os_str().to_owned();
        name.push(".json");
        name.into()
    }

    pub fn write_for(&self, dataset_path: &Path) -> Result<(), DatasetError> {
        let path = Self::sidecar_path(dataset_path);
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(&path, text).map_err(|source| DatasetError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn read_for(dataset_path: &Path) -> Result<Self, DatasetError> {
        let path = Self::sidecar_path(dataset_path);
        let text = fs::read_to_string(&path).map_err(|source| DatasetError::Io {
            path: path.display().to_string(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| DatasetError::BadSidecar {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn sample() -> Dataset {
        let mut set = Dataset::empty(3, 2);
        set.push(0, &[0.0, 1.5, -2.25, 0.5, 3.0, -0.125]).unwrap();
        set.push(1, &[9.0, 8.0, 7.0, 6.0, 5.0, 4.0]).unwrap();
        set
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("set.bin");
        let set = sample();
        set.write(&path).unwrap();
        let back = Dataset::read(&path).unwrap();
        assert_eq!(set, back);
    }

    #[test]
    fn header_only_file_reads_as_empty() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("empty.bin");
        Dataset::empty(5, 4).write(&path).unwrap();
        let back = Dataset::read(&path).unwrap();
        assert_eq!(back.count(), 0);
        assert_eq!((back.width(), back.height()), (5, 4));
    }

    #[test]
    fn truncation_is_detected_without_partial_object() {
        let bytes = sample().to_bytes();
        for cut in [4usize, 20, bytes.len() - 9, bytes.len() - 1] {
            let err = Dataset::from_bytes(&bytes[..cut]).unwrap_err();
            assert!(matches!(err, DatasetError::Truncated { .. }), "cut {cut}: {err}");
        }
    }

    #[test]
    fn corruption_fails_the_checksum() {
        let mut bytes = sample().to_bytes();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        assert!(matches!(
            Dataset::from_bytes(&bytes).unwrap_err(),
            DatasetError::ChecksumMismatch { .. }
        ));
    }

    #[test]
    fn bad_magic_is_rejected() {
        let mut bytes = sample().to_bytes();
        bytes[0] = b'X';
        assert!(matches!(Dataset::from_bytes(&bytes).unwrap_err(), DatasetError::BadMagic { .. }));
    }

    #[test]
    fn labels_and_shape_are_validated() {
        assert!(matches!(
            Dataset::new(2, 1, vec![2], vec![0.0, 0.0]).unwrap_err(),
            DatasetError::BadLabel { index: 0, value: 2 }
        ));
        assert!(matches!(
            Dataset::new(2, 1, vec![0], vec![0.0]).unwrap_err(),
            DatasetError::BadShape { expected: 2, got: 1 }
        ));
        let mut set = Dataset::empty(2, 1);
        assert!(set.push(0, &[1.0]).is_err());
    }

    #[test]
    fn template_round_trips_through_the_container() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("template.bin");
        let t = Template::new(vec![0.5, -0.25, 0.125, 2.0]);
        write_template(&path, &t, 2, 2).unwrap();
        let back = read_template(&path).unwrap();
        assert_eq!(back.weights(), t.weights());

        let two = sample();
        let set_path = dir.path().join("two.bin");
        two.write(&set_path).unwrap();
        assert!(matches!(
            read_template(&set_path).unwrap_err(),
            DatasetError::NotSingleImage { count: 2 }
        ));
    }

    #[test]
    fn class_split_preserves_order_and_counts() {
        let set = sample();
        let pools = set.to_labeled_images().unwrap();
        assert_eq!(pools.class(0).len(), 1);
        assert_eq!(pools.class(1).len(), 1);
        assert_eq!(pools.class(1)[0][0], 9.0);
        assert_eq!(set.class_images(0).len(), 1);
    }

    #[test]
    fn manifest_sidecar_round_trips() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("set.bin");
        sample().write(&path).unwrap();
        let manifest = DatasetManifest {
            seed: 11,
            config_digest: "00ff00ff00ff00ff".into(),
            stream_tag: "gen-test".into(),
            count: 2,
        };
        manifest.write_for(&path).unwrap();
        assert_eq!(DatasetManifest::read_for(&path).unwrap(), manifest);
    }
}
