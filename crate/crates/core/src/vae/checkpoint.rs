//! Self-describing model files.
//!
//! ```text
//! VAE-NOVELTY-CHECKPOINT 1
//! header_bytes = <len>
//! <TOML header of len bytes: architecture, decoder family, seed,
//!  log-variance range, preprocessing statistics, tensor list>
//! <little-endian f32 blobs in tensor-list order>
//! ```
//!
//! Training keeps parameters on the `f32` grid, so a trained model survives
//! save and load bit for bit.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Architecture, DecoderFamily, VaeModel};
use crate::data::PreprocessStats;
use crate::error::{Error, Result};
use crate::gaussian::{LOG_VAR_MAX, LOG_VAR_MIN};
use crate::nn::{ParameterStore, Tensor};

pub const CHECKPOINT_MAGIC: &str = "VAE-NOVELTY-CHECKPOINT 1";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    decoder_family: DecoderFamily,
    seed: u64,
    log_var_range: [f64; 2],
    architecture: Architecture,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    preprocess: Option<PreprocessStats>,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

fn entries<'a>(prefix: &str, store: &'a ParameterStore) -> impl Iterator<Item = TensorEntry> + 'a {
    let prefix = prefix.to_string();
    store.names().iter().zip(store.tensors()).map(move |(n, t)| TensorEntry {
        name: format!("{prefix}.{n}"),
        shape: t.shape().to_vec(),
    })
}

pub fn save_checkpoint(model: &VaeModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let header = Header {
        decoder_family: model.family(),
        seed: model.seed(),
        log_var_range: [LOG_VAR_MIN, LOG_VAR_MAX],
        architecture: model.architecture().clone(),
        preprocess: model.preprocess().cloned(),
        tensors: entries("encoder", model.encoder_params())
            .chain(entries("decoder", model.decoder_params()))
            .collect(),
    };
    let text = toml::to_string(&header).map_err(|e| Error::config(format!("checkpoint header: {e}")))?;
    let n_values = model.encoder_params().num_values() + model.decoder_params().num_values();
    let mut out = Vec::with_capacity(text.len() + 64 + 4 * n_values);
    writeln!(out, "{CHECKPOINT_MAGIC}").unwrap();
    writeln!(out, "header_bytes = {}", text.len()).unwrap();
    out.extend_from_slice(text.as_bytes());
    for v in model.encoder_params().values().chain(model.decoder_params().values()) {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<VaeModel> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse(&bytes).map_err(|e| match e {
        Error::Data(msg) => Error::data(format!("{}: {msg}", path.display())),
        other => other,
    })
}

fn parse(bytes: &[u8]) -> Result<VaeModel> {
    let bad = |msg: &str| Error::data(format!("not a checkpoint: {msg}"));
    let rest = bytes
        .strip_prefix(CHECKPOINT_MAGIC.as_bytes())
        .and_then(|r| r.strip_prefix(b"\n"))
        .ok_or_else(|| bad("missing magic line"))?;
    let nl = rest.iter().position(|&b| b == b'\n').ok_or_else(|| bad("truncated header"))?;
    let len: usize = std::str::from_utf8(&rest[..nl])
        .ok()
        .and_then(|l| l.strip_prefix("header_bytes = "))
        .and_then(|v| v.trim().parse().ok())
        .ok_or_else(|| bad("bad header length line"))?;
    let rest = &rest[nl + 1..];
    let text = rest
        .get(..len)
        .and_then(|b| std::str::from_utf8(b).ok())
        .ok_or_else(|| bad("truncated header"))?;
    let h: Header = toml::from_str(text).map_err(|e| Error::data(format!("checkpoint header: {e}")))?;
    if h.log_var_range != [LOG_VAR_MIN, LOG_VAR_MAX] {
        return Err(Error::data(format!(
            "checkpoint uses log-variance range {:?}, this build clamps to [{LOG_VAR_MIN}, {LOG_VAR_MAX}]",
            h.log_var_range
        )));
    }
    let (encoder, decoder) = h.architecture.networks(h.decoder_family)?;
    let mut enc = encoder.zero_params();
    let mut dec = decoder.zero_params();
    let want: Vec<TensorEntry> = entries("encoder", &enc).chain(entries("decoder", &dec)).collect();
    if want.len() != h.tensors.len()
        || want.iter().zip(&h.tensors).any(|(a, b)| a.name != b.name || a.shape != b.shape)
    {
        return Err(Error::data("tensor list does not match the architecture"));
    }
    let blob = &rest[len..];
    let n_values = enc.num_values() + dec.num_values();
    if blob.len() != 4 * n_values {
        return Err(Error::data(format!(
            "expected {} weight bytes, found {}",
            4 * n_values,
            blob.len()
        )));
    }
    let mut values = blob.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64);
    for t in enc.tensors_mut().iter_mut().chain(dec.tensors_mut()) {
        fill(t, &mut values);
    }
    if !(enc.is_finite() && dec.is_finite()) {
        return Err(Error::data("checkpoint holds non-finite weights"));
    }
    VaeModel::from_parts(h.architecture, h.decoder_family, enc, dec, h.seed, h.preprocess)
}

fn fill(t: &mut Tensor, values: &mut impl Iterator<Item = f64>) {
    for v in t.data_mut() {
        *v = values.next().expect("blob length checked");
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vae::builtin_architecture;

    #[test]
    fn fresh_and_conv_models_round_trip_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        for (name, family) in [("dense46_z8", DecoderFamily::Gaussian), ("mnist_conv_z8", DecoderFamily::Bernoulli)] {
            let mut m = VaeModel::new(builtin_architecture(name, family).unwrap(), family, 17).unwrap();
            m.set_preprocess(Some(PreprocessStats {
                source_means: vec![0.1 + 0.2],
                channel_means: vec![1.0 / 3.0, 2.5e-7],
                fitted_on: vec!["a.bin".into()],
            }));
            let p = dir.path().join(format!("{name}.ckpt"));
            save_checkpoint(&m, &p).unwrap();
            let back = load_checkpoint(&p).unwrap();
            assert_eq!(back, m);
            assert_eq!(back.architecture(), m.architecture());
        }
    }

    #[test]
    fn corrupt_files_are_data_errors() {
        let dir = tempfile::tempdir().unwrap();
        let m = VaeModel::new(
            builtin_architecture("dense:4-3-2", DecoderFamily::Gaussian).unwrap(),
            DecoderFamily::Gaussian,
            1,
        )
        .unwrap();
        let p = dir.path().join("m.ckpt");
        save_checkpoint(&m, &p).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        bytes.pop();
        std::fs::write(&p, &bytes).unwrap();
        assert_eq!(load_checkpoint(&p).unwrap_err().exit_code(), 3);
        std::fs::write(&p, b"hello").unwrap();
        assert!(load_checkpoint(&p).unwrap_err().to_string().contains("magic"));
    }
}
