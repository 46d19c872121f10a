use std::path::Path;

use super::FeatureMatrix;
use crate::error::{Error, Result};

const IMAGE_MAGIC: u32 = 2051;
const LABEL_MAGIC: u32 = 2049;

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::data(format!("{}: truncated IDX header", path.display())))
}

fn check_magic(bytes: &[u8], want: u32, path: &Path) -> Result<()> {
    let magic = be_u32(bytes, 0, path)?;
    if magic == want {
        return Ok(());
    }
    let what = match magic {
        IMAGE_MAGIC => " (an image file)",
        LABEL_MAGIC => " (a label file)",
        _ => "",
    };
    Err(Error::data(format!(
        "{}: bad IDX magic {magic:#010x}{what}, expected {want:#010x}",
        path.display()
    )))
}

/// Parses an IDX image file (`n x rows x cols` unsigned bytes) into an
/// `n x (rows * cols)` matrix scaled to `[0, 1]`.
pub fn load_idx(path: impl AsRef<Path>) -> Result<FeatureMatrix> {
    let path = path.as_ref();
    let bytes = read(path)?;
    check_magic(&bytes, IMAGE_MAGIC, path)?;
    let n = be_u32(&bytes, 4, path)? as usize;
    let rows = be_u32(&bytes, 8, path)? as usize;
    let cols = be_u32(&bytes, 12, path)? as usize;
    let d = rows * cols;
    let payload = &bytes[16..];
    if payload.len() != n * d {
        return Err(Error::data(format!(
            "{}: expected {} pixel bytes for {n} images of {rows}x{cols}, found {}",
            path.display(),
            n * d,
            payload.len()
        )));
    }
    let values = payload.iter().map(|&b| b as f32 / 255.0).collect();
    let mut m = FeatureMatrix::new(n, d, values)?;
    m.provenance.push(path.display().to_string());
    Ok(m)
}

pub fn load_idx_labels(path: impl AsRef<Path>) -> Result<Vec<u8>> {
    let path = path.as_ref();
    let bytes = read(path)?;
    check_magic(&bytes, LABEL_MAGIC, path)?;
    let n = be_u32(&bytes, 4, path)? as usize;
    if bytes.len() - 8 != n {
        return Err(Error::data(format!(
            "{}: header declares {n} labels, found {}",
            path.display(),
            bytes.len() - 8
        )));
    }
    Ok(bytes[8..].to_vec())
}

/// Images with their digit labels attached.
pub fn load_mnist(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<FeatureMatrix> {
    let m = load_idx(images)?;
    let l = load_idx_labels(&labels)?;
    if l.len() != m.n() {
        return Err(Error::data(format!(
            "{} images but {} labels in {}",
            m.n(),
            l.len(),
            labels.as_ref().display()
        )));
    }
    m.with_labels(l.into_iter().map(i32::from).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image_file(n: u32, r: u32, c: u32, pixels: &[u8]) -> Vec<u8> {
        let mut b = vec![0x00, 0x00, 0x08, 0x03];
        for v in [n, r, c] {
            b.extend_from_slice(&v.to_be_bytes());
        }
        b.extend_from_slice(pixels);
        b
    }

    #[test]
    fn parses_images_and_scales_to_unit_interval() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("img");
        std::fs::write(&p, image_file(2, 1, 2, &[0, 255, 51, 102])).unwrap();
        let m = load_idx(&p).unwrap();
        assert_eq!((m.n(), m.d()), (2, 2));
        assert_eq!(m.values(), &[0.0, 1.0, 0.2, 0.4]);
    }

    #[test]
    fn label_file_is_rejected_as_images() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("lab");
        std::fs::write(&p, [0, 0, 8, 1, 0, 0, 0, 1, 7]).unwrap();
        let err = load_idx(&p).unwrap_err().to_string();
        assert!(err.contains("label file"), "{err}");
        assert_eq!(load_idx_labels(&p).unwrap(), vec![7]);
    }

    #[test]
    fn truncated_payload_and_count_mismatch_are_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("img");
        std::fs::write(&p, image_file(2, 2, 2, &[0; 7])).unwrap();
        assert!(load_idx(&p).is_err());
        std::fs::write(&p, image_file(2, 1, 1, &[0; 2])).unwrap();
        let l = dir.path().join("lab");
        std::fs::write(&l, [0, 0, 8, 1, 0, 0, 0, 3, 1, 2, 3]).unwrap();
        assert!(load_mnist(&p, &l).is_err());
    }
}
