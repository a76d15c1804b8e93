//! Classification dataset loaders: MNIST-style IDX ubyte files and a CSV
//! fallback with one `label, features...` row per sample.

use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use crate::error::{Error, Result};

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone)]
pub struct Dataset {
    pub features: Vec<Vec<f32>>,
    pub labels: Vec<u32>,
    pub feature_dim: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// First `n` samples, for bounded sweeps.
    pub fn head(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        Dataset {
            features: self.features[..n].to_vec(),
            labels: self.labels[..n].to_vec(),
            feature_dim: self.feature_dim,
        }
    }
}

/// Load an IDX image/label pair. Pixels are scaled to `[0, 1]` by 255.
pub fn load_idx_dataset(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<Dataset> {
    let features = load_idx_images(open(images.as_ref())?)?;
    let labels = load_idx_labels(open(labels.as_ref())?)?;
    if features.len() != labels.len() {
        return Err(Error::Dataset(format!(
            "{} images but {} labels",
            features.len(),
            labels.len()
        )));
    }
    let feature_dim = features.first().map_or(0, Vec::len);
    Ok(Dataset { features, labels, feature_dim })
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).map_err(|e| {
        Error::Dataset(format!("cannot open {}: {e}", path.display()))
    })?))
}

pub fn load_idx_images<R: Read>(mut input: R) -> Result<Vec<Vec<f32>>> {
    let magic = read_u32_be(&mut input)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Dataset(format!(
            "bad image magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"
        )));
    }
    let count = read_u32_be(&mut input)? as usize;
    let rows = read_u32_be(&mut input)? as usize;
    let cols = read_u32_be(&mut input)? as usize;
    let pixels = rows
        .checked_mul(cols)
        .and_then(|p| p.checked_mul(count))
        .ok_or_else(|| Error::Dataset("image dimensions overflow".into()))?;
    let mut raw = vec![0u8; pixels];
    input
        .read_exact(&mut raw)
        .map_err(|e| Error::Dataset(format!("truncated image data ({e})")))?;
    Ok(raw
        .chunks_exact(rows * cols)
        .map(|img| img.iter().map(|&b| b as f32 / 255.0).collect())
        .collect())
}

pub fn load_idx_labels<R: Read>(mut input: R) -> Result<Vec<u32>> {
    let magic = read_u32_be(&mut input)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Dataset(format!(
            "bad label magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"
        )));
    }
    let count = read_u32_be(&mut input)? as usize;
    let mut raw = vec![0u8; count];
    input
        .read_exact(&mut raw)
        .map_err(|e| Error::Dataset(format!("truncated label data ({e})")))?;
    Ok(raw.iter().map(|&b| b as u32).collect())
}

/// Load a CSV with `label, f0, f1, ...` per line. Blank lines are skipped.
pub fn load_csv_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let reader = open(path.as_ref())?;
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(',').map(str::trim);
        let label = fields
            .next()
            .ok_or_else(|| Error::Dataset(format!("line {}: missing label", lineno + 1)))?;
        let label: u32 = label
            .parse()
            .map_err(|_| Error::Dataset(format!("line {}: bad label `{label}`", lineno + 1)))?;
        let row: Vec<f32> = fields
            .map(|f| {
                f.parse::<f32>().map_err(|_| {
                    Error::Dataset(format!("line {}: bad feature `{f}`", lineno + 1))
                })
            })
            .collect::<Result<_>>()?;
        labels.push(label);
        features.push(row);
    }
    let feature_dim = features.first().map_or(0, Vec::len);
    if features.iter().any(|r| r.len() != feature_dim) {
        return Err(Error::Dataset("ragged feature rows".into()));
    }
    Ok(Dataset { features, labels, feature_dim })
}

fn read_u32_be<R: Read>(input: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    input
        .read_exact(&mut buf)
        .map_err(|e| Error::Dataset(format!("truncated header ({e})")))?;
    Ok(u32::from_be_bytes(buf))
}

/// Serialize features (scaled back by 255, clamped) and labels as IDX bytes.
/// Used by tests and fixture tooling.
pub fn write_idx_images(features: &[Vec<f32>], rows: usize, cols: usize) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    out.extend_from_slice(&(features.len() as u32).to_be_bytes());
    out.extend_from_slice(&(rows as u32).to_be_bytes());
    out.extend_from_slice(&(cols as u32).to_be_bytes());
    for f in features {
        for &v in f {
            out.push((v * 255.0).round().clamp(0.0, 255.0) as u8);
        }
    }
    out
}

pub fn write_idx_labels(labels: &[u32]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    for &l in labels {
        out.push(l as u8);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn idx_round_trip() {
        let features = vec![vec![0.0, 1.0, 100.0 / 255.0, 0.5], vec![0.25, 0.75, 0.0, 1.0]];
        let labels = vec![3u32, 7];
        let img_bytes = write_idx_images(&features, 2, 2);
        let lab_bytes = write_idx_labels(&labels);
        let imgs = load_idx_images(img_bytes.as_slice()).unwrap();
        let labs = load_idx_labels(lab_bytes.as_slice()).unwrap();
        assert_eq!(labs, labels);
        assert_eq!(imgs.len(), 2);
        for (got, expect) in imgs.iter().zip(&features) {
            for (g, e) in got.iter().zip(expect) {
                assert!((g - e).abs() <= 0.5 / 255.0 + 1e-6);
            }
        }
    }

    #[test]
    fn idx_rejects_bad_magic() {
        let mut bytes = write_idx_images(&[vec![0.0]], 1, 1);
        bytes[3] = 0x01;
        assert!(load_idx_images(bytes.as_slice()).is_err());
    }

    #[test]
    fn idx_rejects_truncation() {
        let mut bytes = write_idx_images(&[vec![0.0, 0.0, 0.0, 0.0]], 2, 2);
        bytes.truncate(bytes.len() - 2);
        assert!(load_idx_images(bytes.as_slice()).is_err());
    }

    #[test]
    fn csv_parses_label_then_features() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        std::fs::write(&path, "1,0.5,0.25\n0, 1.0 ,0.0\n\n2,0.1,0.9\n").unwrap();
        let ds = load_csv_dataset(&path).unwrap();
        assert_eq!(ds.labels, vec![1, 0, 2]);
        assert_eq!(ds.feature_dim, 2);
        assert_eq!(ds.features[1], vec![1.0, 0.0]);
    }

    #[test]
    fn csv_rejects_ragged_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "1,0.5,0.25\n0,1.0\n").unwrap();
        assert!(load_csv_dataset(&path).is_err());
    }
}
