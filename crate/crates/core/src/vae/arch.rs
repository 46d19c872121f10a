use serde::{Deserialize, Serialize};

use super::DecoderFamily;
use crate::error::{Error, Result};
use crate::nn::{Activation, LayerSpec, Network};

/// Encoder and decoder layer stacks of a VAE.
///
/// The encoder ends in a `2 * latent_dim` head `[mean | log_var]`; the
/// decoder ends in the head of its [`DecoderFamily`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    /// Catalog name, or `custom` for explicit layer lists.
    pub name: String,
    pub input_shape: Vec<usize>,
    pub latent_dim: usize,
    pub encoder: Vec<LayerSpec>,
    pub decoder: Vec<LayerSpec>,
}

/// Names understood by [`builtin_architecture`].
pub const CATALOG: &[&str] = &[
    "dense46_z8",
    "dense46_z16",
    "dense46_z24",
    "dense:<in>-<hidden>-...-<latent>",
    "mnist_conv",
    "mnist_conv_z<latent>",
];

/// Default latent size of `mnist_conv`.
pub const MNIST_LATENT: usize = 64;

/// Looks up a named architecture and attaches the output head of `family`.
///
/// `dense46_z8` is `46-64-32-16-8` mirrored; `dense:` takes any such width
/// string. `mnist_conv` is the convolutional MNIST model, `mnist_conv_z<k>`
/// the same with latent size `k`.
pub fn builtin_architecture(name: &str, family: DecoderFamily) -> Result<Architecture> {
    let widths: Option<Vec<usize>> = match name {
        "dense46_z8" => Some(vec![46, 64, 32, 16, 8]),
        "dense46_z16" => Some(vec![46, 128, 64, 32, 16]),
        "dense46_z24" => Some(vec![46, 128, 64, 48, 24]),
        _ => match name.strip_prefix("dense:") {
            Some(spec) => Some(
                spec.split('-')
                    .map(|w| w.trim().parse::<usize>().ok().filter(|&w| w > 0))
                    .collect::<Option<Vec<_>>>()
                    .filter(|w| w.len() >= 2)
                    .ok_or_else(|| Error::config(format!("bad dense width string {spec:?}")))?,
            ),
            None => None,
        },
    };
    if let Some(w) = widths {
        return Ok(dense(name, &w, family));
    }
    let latent = match name {
        "mnist_conv" => Some(MNIST_LATENT),
        _ => name.strip_prefix("mnist_conv_z").and_then(|z| z.parse().ok()).filter(|&z| z > 0),
    };
    match latent {
        Some(z) => Ok(mnist_conv(name, z, family)),
        None => Err(Error::config(format!(
            "unknown architecture {name:?}; known: {}",
            CATALOG.join(", ")
        ))),
    }
}

fn dense(name: &str, widths: &[usize], family: DecoderFamily) -> Architecture {
    let (input, rest) = (widths[0], &widths[1..]);
    let latent = *rest.last().unwrap();
    let hidden = &rest[..rest.len() - 1];
    let mut encoder: Vec<LayerSpec> = hidden.iter().map(|&w| LayerSpec::dense(w, Activation::Relu)).collect();
    encoder.push(LayerSpec::dense(2 * latent, Activation::Identity));
    let mut decoder: Vec<LayerSpec> = hidden.iter().rev().map(|&w| LayerSpec::dense(w, Activation::Relu)).collect();
    decoder.push(LayerSpec::dense(family.head_len(input), Activation::Identity));
    Architecture {
        name: name.to_string(),
        input_shape: vec![input],
        latent_dim: latent,
        encoder,
        decoder,
    }
}

fn mnist_conv(name: &str, latent: usize, family: DecoderFamily) -> Architecture {
    use Activation::{Identity, Relu};
    let head_channels = family.head_len(1);
    Architecture {
        name: name.to_string(),
        input_shape: vec![1, 28, 28],
        latent_dim: latent,
        encoder: vec![
            LayerSpec::conv(16, 3, Relu),
            LayerSpec::Maxpool2d {
                filter: [2, 2],
                stride: [2, 2],
            },
            LayerSpec::conv(32, 3, Relu),
            LayerSpec::dense(2 * latent, Identity),
        ],
        decoder: vec![
            LayerSpec::dense(14 * 14, Relu),
            LayerSpec::Reshape { shape: vec![1, 14, 14] },
            LayerSpec::conv(32, 3, Relu),
            LayerSpec::TransposedConv2d {
                channels: 16,
                filter: [2, 2],
                stride: [2, 2],
                activation: Relu,
            },
            LayerSpec::conv(head_channels, 3, Identity),
        ],
    }
}

impl Architecture {
    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    /// Builds and validates both networks against the latent size and the
    /// decoder head of `family`.
    pub fn networks(&self, family: DecoderFamily) -> Result<(Network, Network)> {
        let encoder = Network::new(self.input_shape.clone(), self.encoder.clone())?;
        let decoder = Network::new(vec![self.latent_dim], self.decoder.clone())?;
        if encoder.output_len() != 2 * self.latent_dim {
            return Err(Error::config(format!(
                "encoder head has {} outputs, expected 2 * latent_dim = {}",
                encoder.output_len(),
                2 * self.latent_dim
            )));
        }
        let want = family.head_len(self.input_len());
        if decoder.output_len() != want {
            return Err(Error::config(format!(
                "decoder head has {} outputs, a {family} decoder over {} features needs {want}",
                decoder.output_len(),
                self.input_len()
            )));
        }
        Ok((encoder, decoder))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn widths(layers: &[LayerSpec]) -> Vec<usize> {
        layers
            .iter()
            .map(|l| match l {
                LayerSpec::Dense { features, .. } => *features,
                _ => panic!("not dense"),
            })
            .collect()
    }

    #[test]
    fn dense_z8_mirrors_its_widths() {
        let a = builtin_architecture("dense46_z8", DecoderFamily::Gaussian).unwrap();
        assert_eq!(widths(&a.encoder), vec![64, 32, 16, 16]);
        assert_eq!(widths(&a.decoder), vec![16, 32, 64, 92]);
        assert_eq!(a.latent_dim, 8);
        let (e, d) = a.networks(DecoderFamily::Gaussian).unwrap();
        assert_eq!(e.output_len(), 16);
        assert_eq!(d.output_len(), 92);
    }

    #[test]
    fn dense_width_strings() {
        let a = builtin_architecture("dense:10-6-3", DecoderFamily::Bernoulli).unwrap();
        assert_eq!(widths(&a.encoder), vec![6, 6]);
        assert_eq!(widths(&a.decoder), vec![6, 10]);
        assert!(builtin_architecture("dense:10-x", DecoderFamily::Gaussian).is_err());
        let err = builtin_architecture("resnet", DecoderFamily::Gaussian).unwrap_err().to_string();
        assert!(err.contains("mnist_conv"), "{err}");
    }

    #[test]
    fn mnist_conv_matches_the_layer_table() {
        let a = builtin_architecture("mnist_conv", DecoderFamily::Bernoulli).unwrap();
        let (e, d) = a.networks(DecoderFamily::Bernoulli).unwrap();
        assert_eq!(
            e.shapes(),
            &[vec![1, 28, 28], vec![16, 28, 28], vec![16, 14, 14], vec![32, 14, 14], vec![128]]
        );
        assert_eq!(
            d.shapes(),
            &[vec![64], vec![196], vec![1, 14, 14], vec![32, 14, 14], vec![16, 28, 28], vec![1, 28, 28]]
        );
        let g = builtin_architecture("mnist_conv_z24", DecoderFamily::Gaussian).unwrap();
        let (_, d) = g.networks(DecoderFamily::Gaussian).unwrap();
        assert_eq!(g.latent_dim, 24);
        assert_eq!(d.output_shape(), &[2, 28, 28]);
    }
}
