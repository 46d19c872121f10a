use rand::Rng;
use serde::{Deserialize, Serialize};

use super::kernels::{self, ConvGeom, PoolGeom};
use super::layer::{Activation, LayerSpec};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Named weight and bias tensors of a [`Network`], in layer order.
///
/// The same type holds gradients and optimizer moments, which always share
/// the shapes of the parameters they belong to.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParameterStore {
    pub fn new(names: Vec<String>, tensors: Vec<Tensor>) -> Result<Self> {
        if names.len() != tensors.len() {
            return Err(Error::config("parameter names and tensors differ in count"));
        }
        Ok(ParameterStore { names, tensors })
    }

    pub fn zeros_like(other: &ParameterStore) -> Self {
        ParameterStore {
            names: other.names.clone(),
            tensors: other.tensors.iter().map(|t| Tensor::zeros(t.shape())).collect(),
        }
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        let i = self.names.iter().position(|n| n == name)?;
        Some(&mut self.tensors[i])
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar values.
    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn same_shapes(&self, other: &ParameterStore) -> bool {
        self.tensors.len() == other.tensors.len()
            && self.tensors.iter().zip(&other.tensors).all(|(a, b)| a.shape() == b.shape())
    }

    pub fn add_assign(&mut self, other: &ParameterStore) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for t in &mut self.tensors {
            t.data_mut().iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    /// Rounds every value to the nearest `f32`, the checkpoint precision.
    pub fn round_to_f32(&mut self) {
        for t in &mut self.tensors {
            t.data_mut().iter_mut().for_each(|v| *v = *v as f32 as f64);
        }
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.tensors.iter().flat_map(|t| t.data().iter().copied())
    }
}

/// Per-layer activations recorded by [`Network::forward_trace`].
///
/// `activations[0]` is the input, `activations[i + 1]` the output of layer `i`.
#[derive(Debug, Clone)]
pub struct Trace {
    pub activations: Vec<Tensor>,
}

impl Trace {
    pub fn output(&self) -> &Tensor {
        self.activations.last().expect("trace holds at least the input")
    }

    pub fn into_output(mut self) -> Tensor {
        self.activations.pop().expect("trace holds at least the input")
    }
}

#[derive(Debug, Clone, Copy)]
enum Op {
    Dense { inputs: usize, outputs: usize },
    Conv(ConvGeom),
    TransposedConv(ConvGeom),
    Pool(PoolGeom),
    Pointwise,
}

/// A validated layer stack with resolved per-sample shapes.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "NetworkDef", into = "NetworkDef")]
pub struct Network {
    input_shape: Vec<usize>,
    layers: Vec<LayerSpec>,
    shapes: Vec<Vec<usize>>,
    ops: Vec<Op>,
    /// Index of the first parameter tensor of each layer, if it has any.
    param_slots: Vec<Option<usize>>,
}

#[derive(Serialize, Deserialize)]
struct NetworkDef {
    input_shape: Vec<usize>,
    layers: Vec<LayerSpec>,
}

impl TryFrom<NetworkDef> for Network {
    type Error = Error;
    fn try_from(d: NetworkDef) -> Result<Self> {
        Network::new(d.input_shape, d.layers)
    }
}

impl From<Network> for NetworkDef {
    fn from(n: Network) -> Self {
        NetworkDef {
            input_shape: n.input_shape,
            layers: n.layers,
        }
    }
}

impl PartialEq for Network {
    fn eq(&self, other: &Self) -> bool {
        self.input_shape == other.input_shape && self.layers == other.layers
    }
}

fn as3(shape: &[usize]) -> [usize; 3] {
    [shape[0], shape[1], shape[2]]
}

impl Network {
    pub fn new(input_shape: Vec<usize>, layers: Vec<LayerSpec>) -> Result<Self> {
        if input_shape.is_empty() || input_shape.contains(&0) {
            return Err(Error::config(format!("invalid network input shape {input_shape:?}")));
        }
        let mut shapes = vec![input_shape.clone()];
        let mut ops = Vec::with_capacity(layers.len());
        let mut param_slots = Vec::with_capacity(layers.len());
        let mut next_slot = 0;
        for (i, layer) in layers.iter().enumerate() {
            let input = shapes.last().unwrap().clone();
            let output = layer.output_shape(i, &input)?;
            let op = match layer {
                LayerSpec::Dense { features, .. } => Op::Dense {
                    inputs: input.iter().product(),
                    outputs: *features,
                },
                LayerSpec::Conv2d {
                    channels,
                    filter,
                    stride,
                    ..
                } => Op::Conv(ConvGeom::conv(as3(&input), *channels, *filter, *stride)),
                LayerSpec::TransposedConv2d {
                    channels,
                    filter,
                    stride,
                    ..
                } => Op::TransposedConv(ConvGeom::transposed(as3(&input), *channels, *filter, *stride)),
                LayerSpec::Maxpool2d { filter, stride } => Op::Pool(PoolGeom {
                    h_in: input[1],
                    w_in: input[2],
                    h_out: output[1],
                    w_out: output[2],
                    fh: filter[0],
                    fw: filter[1],
                    sh: stride[0],
                    sw: stride[1],
                }),
                LayerSpec::Activation { .. } | LayerSpec::Reshape { .. } => Op::Pointwise,
            };
            if layer.has_params() {
                param_slots.push(Some(next_slot));
                next_slot += 2;
            } else {
                param_slots.push(None);
            }
            ops.push(op);
            shapes.push(output);
        }
        Ok(Network {
            input_shape,
            layers,
            shapes,
            ops,
            param_slots,
        })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        self.shapes.last().unwrap()
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    pub fn output_len(&self) -> usize {
        self.output_shape().iter().product()
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    /// Per-sample shape entering each layer, followed by the final output shape.
    pub fn shapes(&self) -> &[Vec<usize>] {
        &self.shapes
    }

    fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        for (i, op) in self.ops.iter().enumerate() {
            let (w, b) = match op {
                Op::Dense { inputs, outputs } => (vec![*outputs, *inputs], vec![*outputs]),
                Op::Conv(g) => (vec![g.c_out, g.c_in, g.fh, g.fw], vec![g.c_out]),
                Op::TransposedConv(g) => (vec![g.c_out, g.c_in, g.fh, g.fw], vec![g.c_in]),
                _ => continue,
            };
            out.push((format!("layer{i}.weight"), w));
            out.push((format!("layer{i}.bias"), b));
        }
        out
    }

    /// All-zero parameters of the right shapes.
    pub fn zero_params(&self) -> ParameterStore {
        let (names, tensors) = self
            .param_shapes()
            .into_iter()
            .map(|(n, s)| (n, Tensor::zeros(&s)))
            .unzip();
        ParameterStore { names, tensors }
    }

    /// Uniform fan-in scaled initialization: weights in `±sqrt(6 / fan_in)`
    /// ahead of a ReLU and `±sqrt(3 / fan_in)` otherwise, zero biases. Values
    /// are drawn as `f32` so that a fresh model survives a checkpoint
    /// round-trip bit for bit.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> ParameterStore {
        let mut store = self.zero_params();
        for (i, op) in self.ops.iter().enumerate() {
            let Some(slot) = self.param_slots[i] else { continue };
            let fan_in = match op {
                Op::Dense { inputs, .. } => *inputs,
                Op::Conv(g) => g.patch_len(),
                Op::TransposedConv(g) => (g.c_out * g.fh * g.fw / (g.sh * g.sw)).max(1),
                _ => unreachable!(),
            };
            let gain = if self.layers[i].activation() == Activation::Relu { 6.0 } else { 3.0 };
            let bound = (gain / fan_in as f64).sqrt() as f32;
            for w in store.tensors[slot].data_mut() {
                *w = rng.random_range(-bound..bound) as f64;
            }
        }
        store
    }

    pub(crate) fn check_params(&self, params: &ParameterStore) -> Result<()> {
        let want = self.param_shapes();
        if want.len() != params.len() {
            return Err(Error::config(format!(
                "network expects {} parameter tensors, got {}",
                want.len(),
                params.len()
            )));
        }
        for ((name, shape), t) in want.iter().zip(params.tensors()) {
            if t.shape() != shape.as_slice() {
                return Err(Error::Shape {
                    context: format!("parameter {name}"),
                    expected: shape.clone(),
                    actual: t.shape().to_vec(),
                });
            }
        }
        Ok(())
    }

    fn check_input(&self, input: &Tensor) -> Result<usize> {
        let s = input.shape();
        let flat_ok = s.len() == 2 && s[1] == self.input_len();
        let full_ok = s.len() == self.input_shape.len() + 1 && s[1..] == self.input_shape[..];
        if !(flat_ok || full_ok) {
            let mut expected = vec![s[0]];
            expected.extend_from_slice(&self.input_shape);
            return Err(Error::Shape {
                context: "network input (layer 0)".into(),
                expected,
                actual: s.to_vec(),
            });
        }
        Ok(s[0])
    }

    /// Output of the network for a `[batch, ...]` input.
    pub fn forward(&self, params: &ParameterStore, input: &Tensor) -> Result<Tensor> {
        self.check_params(params)?;
        let batch = self.check_input(input)?;
        let mut x = input.data().to_vec();
        let mut scratch = Vec::new();
        for i in 0..self.layers.len() {
            x = self.layer_forward(i, params, batch, &x, &mut scratch);
        }
        let mut shape = vec![batch];
        shape.extend_from_slice(self.output_shape());
        Tensor::new(shape, x)
    }

    /// Forward pass that keeps every intermediate activation for [`Network::backward_trace`].
    pub fn forward_trace(&self, params: &ParameterStore, input: &Tensor) -> Result<Trace> {
        self.check_params(params)?;
        let batch = self.check_input(input)?;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        let mut shape0 = vec![batch];
        shape0.extend_from_slice(&self.input_shape);
        acts.push(Tensor::new(shape0, input.data().to_vec())?);
        let mut scratch = Vec::new();
        for i in 0..self.layers.len() {
            let y = self.layer_forward(i, params, batch, acts[i].data(), &mut scratch);
            let mut shape = vec![batch];
            shape.extend_from_slice(&self.shapes[i + 1]);
            acts.push(Tensor::new(shape, y)?);
        }
        Ok(Trace { activations: acts })
    }

    fn layer_forward(
        &self,
        i: usize,
        params: &ParameterStore,
        batch: usize,
        x: &[f64],
        scratch: &mut Vec<f64>,
    ) -> Vec<f64> {
        let out_len: usize = self.shapes[i + 1].iter().product();
        let in_len: usize = self.shapes[i].iter().product();
        let mut y = vec![0.0; batch * out_len];
        let wb = self.param_slots[i].map(|s| (params.tensors()[s].data(), params.tensors()[s + 1].data()));
        match self.ops[i] {
            Op::Dense { inputs, outputs } => {
                let (w, b) = wb.unwrap();
                kernels::gemm(batch, inputs, outputs, x, false, w, true, 0.0, &mut y);
                for row in y.chunks_mut(outputs) {
                    row.iter_mut().zip(b).for_each(|(v, bi)| *v += bi);
                }
            }
            Op::Conv(g) => {
                let (w, b) = wb.unwrap();
                let p = g.out_pixels();
                for n in 0..batch {
                    let yn = &mut y[n * out_len..(n + 1) * out_len];
                    kernels::conv_forward(&g, w, &x[n * in_len..(n + 1) * in_len], yn, scratch);
                    for (o, &bo) in b.iter().enumerate() {
                        yn[o * p..(o + 1) * p].iter_mut().for_each(|v| *v += bo);
                    }
                }
            }
            Op::TransposedConv(g) => {
                let (w, b) = wb.unwrap();
                let p = g.h_in * g.w_in;
                for n in 0..batch {
                    let yn = &mut y[n * out_len..(n + 1) * out_len];
                    kernels::conv_backward_input(&g, w, &x[n * in_len..(n + 1) * in_len], yn, scratch);
                    for (c, &bc) in b.iter().enumerate() {
                        yn[c * p..(c + 1) * p].iter_mut().for_each(|v| *v += bc);
                    }
                }
            }
            Op::Pool(g) => {
                for n in 0..batch {
                    kernels::maxpool_forward(
                        &g,
                        &x[n * in_len..(n + 1) * in_len],
                        &mut y[n * out_len..(n + 1) * out_len],
                    );
                }
            }
            Op::Pointwise => y.copy_from_slice(x),
        }
        self.layers[i].activation().apply(&mut y);
        y
    }

    /// Gradients of `<output_grad, forward(input)>`, recomputing the forward
    /// pass.
    pub fn backward(
        &self,
        params: &ParameterStore,
        input: &Tensor,
        output_grad: &Tensor,
    ) -> Result<(ParameterStore, Tensor)> {
        let trace = self.forward_trace(params, input)?;
        let (pg, ig) = self.backward_trace(params, &trace, output_grad, true, true)?;
        Ok((pg.unwrap(), ig.unwrap()))
    }

    /// Reverse pass over a recorded trace. Parameter and input gradients are
    /// only computed when requested.
    pub fn backward_trace(
        &self,
        params: &ParameterStore,
        trace: &Trace,
        output_grad: &Tensor,
        want_params: bool,
        want_input: bool,
    ) -> Result<(Option<ParameterStore>, Option<Tensor>)> {
        self.check_params(params)?;
        let out = trace.output();
        if output_grad.len() != out.len() || output_grad.batch() != out.batch() {
            return Err(Error::Shape {
                context: "output gradient".into(),
                expected: out.shape().to_vec(),
                actual: output_grad.shape().to_vec(),
            });
        }
        let batch = out.batch();
        let mut grads = want_params.then(|| self.zero_params());
        let mut g = output_grad.data().to_vec();
        let mut scratch = Vec::new();
        for i in (0..self.layers.len()).rev() {
            self.layers[i]
                .activation()
                .backprop(trace.activations[i + 1].data(), &mut g);
            let need_dx = i > 0 || want_input;
            let x = trace.activations[i].data();
            let in_len: usize = self.shapes[i].iter().product();
            let out_len: usize = self.shapes[i + 1].iter().product();
            let mut dx = if need_dx { vec![0.0; batch * in_len] } else { Vec::new() };
            let slot = self.param_slots[i];
            let w = slot.map(|s| params.tensors()[s].data());
            match self.ops[i] {
                Op::Dense { inputs, outputs } => {
                    if let (Some(gs), Some(s)) = (grads.as_mut(), slot) {
                        let (dw, db) = two_mut(gs.tensors_mut(), s);
                        kernels::gemm(outputs, batch, inputs, &g, true, x, false, 1.0, dw.data_mut());
                        for row in g.chunks(outputs) {
                            db.data_mut().iter_mut().zip(row).for_each(|(d, r)| *d += r);
                        }
                    }
                    if need_dx {
                        kernels::gemm(batch, outputs, inputs, &g, false, w.unwrap(), false, 0.0, &mut dx);
                    }
                }
                Op::Conv(cg) => {
                    let p = cg.out_pixels();
                    for n in 0..batch {
                        let gn = &g[n * out_len..(n + 1) * out_len];
                        let xn = &x[n * in_len..(n + 1) * in_len];
                        if let (Some(gs), Some(s)) = (grads.as_mut(), slot) {
                            let (dw, db) = two_mut(gs.tensors_mut(), s);
                            kernels::conv_backward_weight(&cg, xn, gn, dw.data_mut(), &mut scratch);
                            for (o, d) in db.data_mut().iter_mut().enumerate() {
                                *d += gn[o * p..(o + 1) * p].iter().sum::<f64>();
                            }
                        }
                        if need_dx {
                            kernels::conv_backward_input(
                                &cg,
                                w.unwrap(),
                                gn,
                                &mut dx[n * in_len..(n + 1) * in_len],
                                &mut scratch,
                            );
                        }
                    }
                }
                Op::TransposedConv(cg) => {
                    let p = cg.h_in * cg.w_in;
                    for n in 0..batch {
                        let gn = &g[n * out_len..(n + 1) * out_len];
                        let xn = &x[n * in_len..(n + 1) * in_len];
                        if let (Some(gs), Some(s)) = (grads.as_mut(), slot) {
                            let (dw, db) = two_mut(gs.tensors_mut(), s);
                            kernels::conv_backward_weight(&cg, gn, xn, dw.data_mut(), &mut scratch);
                            for (c, d) in db.data_mut().iter_mut().enumerate() {
                                *d += gn[c * p..(c + 1) * p].iter().sum::<f64>();
                            }
                        }
                        if need_dx {
                            kernels::conv_forward(
                                &cg,
                                w.unwrap(),
                                gn,
                                &mut dx[n * in_len..(n + 1) * in_len],
                                &mut scratch,
                            );
                        }
                    }
                }
                Op::Pool(pg) => {
                    if need_dx {
                        for n in 0..batch {
                            kernels::maxpool_backward(
                                &pg,
                                &x[n * in_len..(n + 1) * in_len],
                                &g[n * out_len..(n + 1) * out_len],
                                &mut dx[n * in_len..(n + 1) * in_len],
                            );
                        }
                    }
                }
                Op::Pointwise => {
                    if need_dx {
                        dx.copy_from_slice(&g);
                    }
                }
            }
            g = dx;
        }
        let input_grad = if want_input {
            Some(Tensor::new(trace.activations[0].shape().to_vec(), g)?)
        } else {
            None
        };
        Ok((grads, input_grad))
    }
}

fn two_mut(ts: &mut [Tensor], s: usize) -> (&mut Tensor, &mut Tensor) {
    let (a, b) = ts.split_at_mut(s + 1);
    (&mut a[s], &mut b[0])
}
