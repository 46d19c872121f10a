//! Binary matrix container with a delimited-text fallback.
//!
//! ```text
//! VAE-NOVELTY-MATRIX 1
//! header_bytes = <len>
//! <TOML header of len bytes: n, d, endianness, dtype, labels, features>
//! <n * d little-endian f32 values, row-major>
//! <n little-endian i32 labels, if labels = true>
//! ```

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::FeatureMatrix;
use crate::error::{Error, Result};

const MAGIC: &str = "VAE-NOVELTY-MATRIX 1";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    n: usize,
    d: usize,
    endianness: String,
    dtype: String,
    labels: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    features: Option<Vec<String>>,
}

pub fn save_matrix(m: &FeatureMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let header = Header {
        n: m.n(),
        d: m.d(),
        endianness: "little".into(),
        dtype: "f32".into(),
        labels: m.labels().is_some(),
        features: m.feature_names().map(<[String]>::to_vec),
    };
    let text = toml::to_string(&header).map_err(|e| Error::data(e.to_string()))?;
    let mut out = Vec::with_capacity(text.len() + 64 + 4 * m.values().len());
    writeln!(out, "{MAGIC}").unwrap();
    writeln!(out, "header_bytes = {}", text.len()).unwrap();
    out.extend_from_slice(text.as_bytes());
    for v in m.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for l in m.labels().unwrap_or(&[]) {
        out.extend_from_slice(&l.to_le_bytes());
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads the binary container, or delimited text with a header row when the
/// magic line is absent. A text column named `label` becomes the labels.
pub fn load_matrix(path: impl AsRef<Path>) -> Result<FeatureMatrix> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut m = if bytes.starts_with(MAGIC.as_bytes()) {
        parse_container(&bytes).map_err(|e| Error::data(format!("{}: {e}", path.display())))?
    } else {
        parse_delimited(&bytes).map_err(|e| Error::data(format!("{}: {e}", path.display())))?
    };
    m.provenance.push(path.display().to_string());
    Ok(m)
}

fn take_line<'a>(bytes: &'a [u8], at: &mut usize) -> std::result::Result<&'a str, String> {
    let rest = &bytes[*at..];
    let end = rest.iter().position(|&b| b == b'\n').ok_or("truncated header")?;
    *at += end + 1;
    std::str::from_utf8(&rest[..end]).map_err(|e| e.to_string())
}

fn parse_container(bytes: &[u8]) -> std::result::Result<FeatureMatrix, String> {
    let mut at = 0;
    take_line(bytes, &mut at)?;
    let len_line = take_line(bytes, &mut at)?;
    let len: usize = len_line
        .strip_prefix("header_bytes = ")
        .and_then(|v| v.trim().parse().ok())
        .ok_or_else(|| format!("bad header length line {len_line:?}"))?;
    let text = bytes
        .get(at..at + len)
        .ok_or("truncated header")
        .and_then(|b| std::str::from_utf8(b).map_err(|_| "header is not UTF-8"))?;
    let h: Header = toml::from_str(text).map_err(|e| e.to_string())?;
    if h.endianness != "little" || h.dtype != "f32" {
        return Err(format!("unsupported payload {} {}", h.endianness, h.dtype));
    }
    let payload = &bytes[at + len..];
    let want = 4 * h.n * h.d + if h.labels { 4 * h.n } else { 0 };
    if payload.len() != want {
        return Err(format!(
            "header declares {} x {} values{} ({want} bytes), payload has {} bytes",
            h.n,
            h.d,
            if h.labels { " plus labels" } else { "" },
            payload.len()
        ));
    }
    let (vals, labs) = payload.split_at(4 * h.n * h.d);
    let values = vals
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let mut m = FeatureMatrix::new(h.n, h.d, values).map_err(|e| e.to_string())?;
    if h.labels {
        let labels = labs
            .chunks_exact(4)
            .map(|c| i32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        m = m.with_labels(labels).map_err(|e| e.to_string())?;
    }
    if let Some(f) = h.features {
        m = m.with_feature_names(f).map_err(|e| e.to_string())?;
    }
    Ok(m)
}

fn parse_delimited(bytes: &[u8]) -> std::result::Result<FeatureMatrix, String> {
    let text = std::str::from_utf8(bytes).map_err(|_| "neither a matrix container nor UTF-8 text")?;
    let first = text.lines().next().ok_or("empty file")?;
    let delim = if first.contains('\t') { b'\t' } else { b',' };
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(delim)
        .trim(csv::Trim::All)
        .from_reader(bytes);
    let headers = rdr.headers().map_err(|e| e.to_string())?.clone();
    let label_col = headers.iter().position(|h| h.eq_ignore_ascii_case("label"));
    let names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|&(i, _)| Some(i) != label_col)
        .map(|(_, h)| h.to_string())
        .collect();
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| e.to_string())?;
        for (i, field) in rec.iter().enumerate() {
            if Some(i) == label_col {
                labels.push(field.parse::<i32>().map_err(|_| format!("row {r}: bad label {field:?}"))?);
            } else {
                values.push(field.parse::<f32>().map_err(|_| format!("row {r}, column {i}: bad value {field:?}"))?);
            }
        }
    }
    let d = names.len();
    let n = values.len().checked_div(d).unwrap_or(0);
    let mut m = FeatureMatrix::new(n, d, values).map_err(|e| e.to_string())?;
    if label_col.is_some() {
        m = m.with_labels(labels).map_err(|e| e.to_string())?;
    }
    m.with_feature_names(names).map_err(|e| e.to_string())
}
