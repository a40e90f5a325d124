//! IDX file ingestion (the MNIST distribution format).
//!
//! Big-endian headers: images carry magic `0x00000803` and dims
//! `(n, rows, cols)` followed by unsigned bytes; labels carry magic
//! `0x00000801` and `n` bytes. Pixels are scaled to `[0, 1]` and images
//! flattened row-major for the dense backbone.

use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

use byteorder::{BigEndian, ReadBytesExt};

use crate::diffcore::Tensor2;
use crate::error::{Error, Result};

use super::dataset::Dataset;

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

/// Loads an image/label IDX pair into a dataset of flattened pixel rows.
/// Labels are kept as raw digit classes; open-set relabeling happens at
/// split time.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let (features, n_images) = read_images(images_path)?;
    let labels = read_labels(labels_path)?;
    if labels.len() != n_images {
        return Err(Error::Format(format!(
            "{} images but {} labels ({} vs {})",
            n_images,
            labels.len(),
            images_path.display(),
            labels_path.display()
        )));
    }
    Dataset::new(features, labels)
}

fn read_images(path: &Path) -> Result<(Tensor2, usize)> {
    let mut r = BufReader::new(File::open(path)?);
    let magic = r.read_u32::<BigEndian>()?;
    if magic != IMAGES_MAGIC {
        return Err(Error::Format(format!(
            "{}: images magic {magic:#010x}, expected {IMAGES_MAGIC:#010x}",
            path.display()
        )));
    }
    let n = r.read_u32::<BigEndian>()? as usize;
    let rows = r.read_u32::<BigEndian>()? as usize;
    let cols = r.read_u32::<BigEndian>()? as usize;
    let dim = rows * cols;
    let mut bytes = vec![0u8; n * dim];
    r.read_exact(&mut bytes).map_err(|e| {
        Error::Format(format!(
            "{}: truncated image payload ({} x {}x{}): {e}",
            path.display(),
            n,
            rows,
            cols
        ))
    })?;
    let data: Vec<f64> = bytes.iter().map(|&b| b as f64 / 255.0).collect();
    Ok((Tensor2::from_vec(n, dim, data)?, n))
}

fn read_labels(path: &Path) -> Result<Vec<usize>> {
    let mut r = BufReader::new(File::open(path)?);
    let magic = r.read_u32::<BigEndian>()?;
    if magic != LABELS_MAGIC {
        return Err(Error::Format(format!(
            "{}: labels magic {magic:#010x}, expected {LABELS_MAGIC:#010x}",
            path.display()
        )));
    }
    let n = r.read_u32::<BigEndian>()? as usize;
    let mut bytes = vec![0u8; n];
    r.read_exact(&mut bytes).map_err(|e| {
        Error::Format(format!(
            "{}: truncated label payload ({n} labels): {e}",
            path.display()
        ))
    })?;
    Ok(bytes.into_iter().map(|b| b as usize).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_file(path: &Path, bytes: &[u8]) {
        let mut f = File::create(path).unwrap();
        f.write_all(bytes).unwrap();
    }

    /// Two 2x2 images with known pixel bytes, built byte by byte.
    fn fixture(dir: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
        let images = dir.join("imgs.idx3");
        let labels = dir.join("labels.idx1");
        let mut img = Vec::new();
        img.extend(0x0000_0803u32.to_be_bytes());
        img.extend(2u32.to_be_bytes());
        img.extend(2u32.to_be_bytes());
        img.extend(2u32.to_be_bytes());
        img.extend([0u8, 51, 102, 153, 204, 255, 0, 128]);
        write_file(&images, &img);
        let mut lab = Vec::new();
        lab.extend(0x0000_0801u32.to_be_bytes());
        lab.extend(2u32.to_be_bytes());
        lab.extend([7u8, 3]);
        write_file(&labels, &lab);
        (images, labels)
    }

    #[test]
    fn fixture_round_trips_exact_pixels() {
        let dir = tempfile::tempdir().unwrap();
        let (images, labels) = fixture(dir.path());
        let ds = load_idx(&images, &labels).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.dim(), 4);
        assert_eq!(
            ds.features.row(0),
            &[0.0, 51.0 / 255.0, 102.0 / 255.0, 153.0 / 255.0]
        );
        assert_eq!(
            ds.features.row(1),
            &[204.0 / 255.0, 1.0, 0.0, 128.0 / 255.0]
        );
        assert_eq!(ds.labels, vec![7, 3]);
    }

    #[test]
    fn bad_images_magic_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let (images, labels) = fixture(dir.path());
        let mut bytes = std::fs::read(&images).unwrap();
        bytes[3] = 0x01; // corrupt the magic
        write_file(&images, &bytes);
        let err = load_idx(&images, &labels).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("magic"), "unexpected error: {msg}");
    }

    #[test]
    fn truncated_payload_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let (images, labels) = fixture(dir.path());
        let bytes = std::fs::read(&images).unwrap();
        write_file(&images, &bytes[..bytes.len() - 3]);
        let err = load_idx(&images, &labels).unwrap_err();
        assert!(err.to_string().contains("truncated"));
    }

    #[test]
    fn count_mismatch_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let (images, labels) = fixture(dir.path());
        let mut lab = Vec::new();
        lab.extend(0x0000_0801u32.to_be_bytes());
        lab.extend(3u32.to_be_bytes());
        lab.extend([7u8, 3, 1]);
        write_file(&labels, &lab);
        let err = load_idx(&images, &labels).unwrap_err();
        assert!(err.to_string().contains("labels"));
    }
}
