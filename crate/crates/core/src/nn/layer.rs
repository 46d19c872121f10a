use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Identity,
    Relu,
    Sigmoid,
}

impl Activation {
    #[inline]
    pub(crate) fn apply(self, v: &mut [f64]) {
        match self {
            Activation::Identity => {}
            Activation::Relu => v.iter_mut().for_each(|x| *x = x.max(0.0)),
            Activation::Sigmoid => v.iter_mut().for_each(|x| *x = sigmoid(*x)),
        }
    }

    /// Multiplies `grad` by the activation derivative, expressed through the
    /// activation's output.
    #[inline]
    pub(crate) fn backprop(self, output: &[f64], grad: &mut [f64]) {
        match self {
            Activation::Identity => {}
            Activation::Relu => {
                for (g, &y) in grad.iter_mut().zip(output) {
                    if y <= 0.0 {
                        *g = 0.0;
                    }
                }
            }
            Activation::Sigmoid => {
                for (g, &y) in grad.iter_mut().zip(output) {
                    *g *= y * (1.0 - y);
                }
            }
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// One layer of a feed-forward stack.
///
/// Convolutions zero-pad so that a stride-1 convolution preserves the spatial
/// extent; a transposed convolution with stride `s` multiplies it by `s`.
/// `Reshape` is a view change only and carries no parameters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense {
        features: usize,
        #[serde(default)]
        activation: Activation,
    },
    Conv2d {
        channels: usize,
        filter: [usize; 2],
        stride: [usize; 2],
        #[serde(default)]
        activation: Activation,
    },
    Maxpool2d {
        filter: [usize; 2],
        stride: [usize; 2],
    },
    TransposedConv2d {
        channels: usize,
        filter: [usize; 2],
        stride: [usize; 2],
        #[serde(default)]
        activation: Activation,
    },
    Activation {
        activation: Activation,
    },
    Reshape {
        shape: Vec<usize>,
    },
}

impl LayerSpec {
    pub fn dense(features: usize, activation: Activation) -> Self {
        LayerSpec::Dense {
            features,
            activation,
        }
    }

    pub fn conv(channels: usize, filter: usize, activation: Activation) -> Self {
        LayerSpec::Conv2d {
            channels,
            filter: [filter, filter],
            stride: [1, 1],
            activation,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::Maxpool2d { .. } => "maxpool2d",
            LayerSpec::TransposedConv2d { .. } => "transposed_conv2d",
            LayerSpec::Activation { .. } => "activation",
            LayerSpec::Reshape { .. } => "reshape",
        }
    }

    pub(crate) fn activation(&self) -> Activation {
        match self {
            LayerSpec::Dense { activation, .. }
            | LayerSpec::Conv2d { activation, .. }
            | LayerSpec::TransposedConv2d { activation, .. }
            | LayerSpec::Activation { activation } => *activation,
            _ => Activation::Identity,
        }
    }

    pub fn has_params(&self) -> bool {
        matches!(
            self,
            LayerSpec::Dense { .. } | LayerSpec::Conv2d { .. } | LayerSpec::TransposedConv2d { .. }
        )
    }

    /// Output shape of this layer for one sample of shape `input`.
    pub fn output_shape(&self, index: usize, input: &[usize]) -> Result<Vec<usize>> {
        let bad = |msg: String| Error::config(format!("layer {index} ({}): {msg}", self.kind()));
        let spatial = || -> Result<(usize, usize, usize)> {
            match *input {
                [c, h, w] => Ok((c, h, w)),
                _ => Err(bad(format!("expects a [channels, height, width] input, got {input:?}"))),
            }
        };
        let check_window = |filter: [usize; 2], stride: [usize; 2]| -> Result<()> {
            if filter.contains(&0) || stride.contains(&0) {
                Err(bad("filter and stride extents must be positive".into()))
            } else {
                Ok(())
            }
        };
        match self {
            LayerSpec::Dense { features, .. } => {
                if *features == 0 {
                    return Err(bad("feature count must be positive".into()));
                }
                Ok(vec![*features])
            }
            LayerSpec::Conv2d {
                channels,
                filter,
                stride,
                ..
            } => {
                check_window(*filter, *stride)?;
                let (_, h, w) = spatial()?;
                if *channels == 0 {
                    return Err(bad("channel count must be positive".into()));
                }
                Ok(vec![*channels, (h - 1) / stride[0] + 1, (w - 1) / stride[1] + 1])
            }
            LayerSpec::Maxpool2d { filter, stride } => {
                check_window(*filter, *stride)?;
                let (c, h, w) = spatial()?;
                if h < filter[0] || w < filter[1] {
                    return Err(bad(format!("pool window {filter:?} larger than input {input:?}")));
                }
                Ok(vec![c, (h - filter[0]) / stride[0] + 1, (w - filter[1]) / stride[1] + 1])
            }
            LayerSpec::TransposedConv2d {
                channels,
                filter,
                stride,
                ..
            } => {
                check_window(*filter, *stride)?;
                let (_, h, w) = spatial()?;
                if *channels == 0 {
                    return Err(bad("channel count must be positive".into()));
                }
                Ok(vec![*channels, h * stride[0], w * stride[1]])
            }
            LayerSpec::Activation { .. } => Ok(input.to_vec()),
            LayerSpec::Reshape { shape } => {
                let n: usize = input.iter().product();
                if shape.contains(&0) || shape.iter().product::<usize>() != n {
                    return Err(bad(format!("cannot view {input:?} as {shape:?}")));
                }
                Ok(shape.clone())
            }
        }
    }
}
