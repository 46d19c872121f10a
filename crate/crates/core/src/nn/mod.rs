//! Minimal reverse-mode engine for feed-forward stacks of dense, convolution,
//! max-pool and transposed-convolution layers.

mod adam;
mod kernels;
mod layer;
mod network;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use layer::{sigmoid, Activation, LayerSpec};
pub use network::{Network, ParameterStore, Trace};
pub use tensor::Tensor;

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Scalar loss `<g, f(x)>` and its central-difference derivatives.
    fn fd_check(net: &Network, params: &ParameterStore, x: &Tensor, rng: &mut ChaCha8Rng) -> f64 {
        let y = net.forward(params, x).unwrap();
        let g = random_tensor(rng, y.shape());
        let loss = |p: &ParameterStore, x: &Tensor| -> f64 {
            let y = net.forward(p, x).unwrap();
            y.data().iter().zip(g.data()).map(|(a, b)| a * b).sum()
        };
        let (pg, ig) = net.backward(params, x, &g).unwrap();
        let h = 1e-4;
        let mut worst: f64 = 0.0;
        let rel = |num: f64, ana: f64| (num - ana).abs() / num.abs().max(ana.abs()).max(1e-2);
        for (ti, t) in params.tensors().iter().enumerate() {
            for k in 0..t.len() {
                let mut p = params.clone();
                p.tensors_mut()[ti].data_mut()[k] += h;
                let up = loss(&p, x);
                p.tensors_mut()[ti].data_mut()[k] -= 2.0 * h;
                let down = loss(&p, x);
                worst = worst.max(rel((up - down) / (2.0 * h), pg.tensors()[ti].data()[k]));
            }
        }
        for k in 0..x.len() {
            let mut xp = x.clone();
            xp.data_mut()[k] += h;
            let up = loss(params, &xp);
            xp.data_mut()[k] -= 2.0 * h;
            let down = loss(params, &xp);
            worst = worst.max(rel((up - down) / (2.0 * h), ig.data()[k]));
        }
        worst
    }

    /// Shifts inputs away from ReLU kinks and pool ties so that central
    /// differences are smooth; returns parameters and input.
    fn setup(net: &Network, rng: &mut ChaCha8Rng, batch: usize) -> (ParameterStore, Tensor) {
        let params = {
            let mut p = net.init_params(rng);
            for t in p.tensors_mut() {
                for v in t.data_mut() {
                    *v += rng.random_range(-0.1..0.1);
                }
            }
            p
        };
        let mut shape = vec![batch];
        shape.extend_from_slice(net.input_shape());
        (params, random_tensor(rng, &shape))
    }

    #[test]
    fn finite_differences_agree_for_every_layer_kind() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let nets = [
            Network::new(vec![5], vec![LayerSpec::dense(4, Activation::Identity)]).unwrap(),
            Network::new(vec![6], vec![LayerSpec::dense(3, Activation::Sigmoid)]).unwrap(),
            Network::new(vec![2, 5, 4], vec![LayerSpec::conv(3, 3, Activation::Identity)]).unwrap(),
            Network::new(
                vec![2, 5, 6],
                vec![LayerSpec::Conv2d {
                    channels: 2,
                    filter: [3, 2],
                    stride: [2, 1],
                    activation: Activation::Identity,
                }],
            )
            .unwrap(),
            Network::new(
                vec![3, 3, 2],
                vec![LayerSpec::TransposedConv2d {
                    channels: 2,
                    filter: [2, 2],
                    stride: [2, 2],
                    activation: Activation::Identity,
                }],
            )
            .unwrap(),
            Network::new(
                vec![2, 4, 3],
                vec![LayerSpec::TransposedConv2d {
                    channels: 3,
                    filter: [3, 3],
                    stride: [1, 1],
                    activation: Activation::Sigmoid,
                }],
            )
            .unwrap(),
            Network::new(
                vec![2, 6, 6],
                vec![LayerSpec::Maxpool2d {
                    filter: [2, 2],
                    stride: [2, 2],
                }],
            )
            .unwrap(),
            Network::new(
                vec![1, 8, 8],
                vec![
                    LayerSpec::conv(3, 3, Activation::Relu),
                    LayerSpec::Maxpool2d {
                        filter: [2, 2],
                        stride: [2, 2],
                    },
                    LayerSpec::conv(2, 3, Activation::Relu),
                    LayerSpec::dense(5, Activation::Identity),
                    LayerSpec::Activation {
                        activation: Activation::Sigmoid,
                    },
                    LayerSpec::dense(16, Activation::Relu),
                    LayerSpec::Reshape { shape: vec![1, 4, 4] },
                    LayerSpec::TransposedConv2d {
                        channels: 2,
                        filter: [2, 2],
                        stride: [2, 2],
                        activation: Activation::Identity,
                    },
                ],
            )
            .unwrap(),
        ];
        for net in &nets {
            for _ in 0..3 {
                let (params, x) = setup(net, &mut rng, 2);
                let err = fd_check(net, &params, &x, &mut rng);
                assert!(err < 1e-4, "{:?}: rel err {err}", net.layers());
            }
        }
    }

    #[test]
    fn identity_dense_passes_input_through() {
        let net = Network::new(vec![3], vec![LayerSpec::dense(3, Activation::Identity)]).unwrap();
        let mut p = net.zero_params();
        for i in 0..3 {
            p.tensors_mut()[0].data_mut()[i * 3 + i] = 1.0;
        }
        let x = Tensor::new(vec![1, 3], vec![0.5, -2.0, 3.0]).unwrap();
        assert_eq!(net.forward(&p, &x).unwrap().data(), x.data());
    }

    #[test]
    fn centered_kernel_conv_is_identity() {
        let net = Network::new(vec![1, 4, 5], vec![LayerSpec::conv(1, 3, Activation::Identity)]).unwrap();
        let mut p = net.zero_params();
        p.tensors_mut()[0].data_mut()[4] = 1.0;
        let x = Tensor::new(vec![1, 1, 4, 5], (0..20).map(|i| i as f64 * 0.5 - 3.0).collect()).unwrap();
        let y = net.forward(&p, &x).unwrap();
        assert_eq!(y.shape(), &[1, 1, 4, 5]);
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn maxpool_takes_block_maxima() {
        let net = Network::new(
            vec![1, 4, 4],
            vec![LayerSpec::Maxpool2d {
                filter: [2, 2],
                stride: [2, 2],
            }],
        )
        .unwrap();
        let x = Tensor::new(
            vec![1, 1, 4, 4],
            vec![
                1., 5., 2., 3., //
                4., 0., 8., 6., //
                9., 7., 10., 14., //
                11., 12., 13., 15.,
            ],
        )
        .unwrap();
        let y = net.forward(&net.zero_params(), &x).unwrap();
        assert_eq!(y.data(), &[5., 8., 12., 15.]);
    }

    #[test]
    fn squared_norm_gradient_through_identity() {
        let net = Network::new(vec![4], vec![LayerSpec::Activation { activation: Activation::Identity }]).unwrap();
        let x = Tensor::new(vec![1, 4], vec![1.0, -2.0, 0.5, 3.0]).unwrap();
        // d/dx sum(x^2) = 2x, fed as the output gradient of the identity map
        let g = Tensor::new(vec![1, 4], x.data().iter().map(|v| 2.0 * v).collect()).unwrap();
        let (_, ig) = net.backward(&net.zero_params(), &x, &g).unwrap();
        assert_eq!(ig.data(), &[2.0, -4.0, 1.0, 6.0]);
    }

    #[test]
    fn relu_blocks_gradient_at_negative_preactivation() {
        let net = Network::new(vec![2], vec![LayerSpec::dense(2, Activation::Relu)]).unwrap();
        let mut p = net.zero_params();
        p.tensors_mut()[0].data_mut().copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
        let x = Tensor::new(vec![1, 2], vec![-0.5, 0.7]).unwrap();
        let (pg, ig) = net.backward(&p, &x, &Tensor::new(vec![1, 2], vec![1.0, 1.0]).unwrap()).unwrap();
        assert_eq!(ig.data(), &[0.0, 1.0]);
        assert_eq!(pg.tensors()[1].data(), &[0.0, 1.0]);
    }

    #[test]
    fn transposed_conv_is_adjoint_of_conv() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for (filter, stride, small) in [([3, 3], [1, 1], [3, 5, 4]), ([2, 2], [2, 2], [3, 4, 3]), ([3, 3], [2, 2], [2, 3, 3])] {
            let [c_small, h, w] = small;
            let c_big = 2;
            let tconv = Network::new(
                small.to_vec(),
                vec![LayerSpec::TransposedConv2d {
                    channels: c_big,
                    filter,
                    stride,
                    activation: Activation::Identity,
                }],
            )
            .unwrap();
            let big = tconv.output_shape().to_vec();
            let conv = Network::new(
                big.clone(),
                vec![LayerSpec::Conv2d {
                    channels: c_small,
                    filter,
                    stride,
                    activation: Activation::Identity,
                }],
            )
            .unwrap();
            assert_eq!(conv.output_shape(), &[c_small, h, w]);
            let mut pc = conv.init_params(&mut rng);
            pc.tensors_mut()[1].fill(0.0);
            let mut pt = tconv.zero_params();
            pt.tensors_mut()[0] = pc.tensors()[0].clone();
            let mut xs = vec![1];
            xs.extend_from_slice(&small);
            let x = random_tensor(&mut rng, &xs);
            let via_tconv = tconv.forward(&pt, &x).unwrap();
            let mut bs = vec![1];
            bs.extend_from_slice(&big);
            let (_, via_conv) = conv.backward(&pc, &Tensor::zeros(&bs), &x).unwrap();
            for (a, b) in via_tconv.data().iter().zip(via_conv.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn shape_errors_name_the_layer() {
        let err = Network::new(vec![10], vec![LayerSpec::dense(4, Activation::Relu), LayerSpec::conv(2, 3, Activation::Relu)])
            .unwrap_err();
        assert!(err.to_string().contains("layer 1 (conv2d)"), "{err}");
        let net = Network::new(vec![3], vec![LayerSpec::dense(2, Activation::Relu)]).unwrap();
        let bad = Tensor::zeros(&[1, 4]);
        assert!(net.forward(&net.zero_params(), &bad).is_err());
    }

    #[test]
    fn forward_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = Network::new(vec![1, 6, 6], vec![LayerSpec::conv(2, 3, Activation::Relu), LayerSpec::dense(3, Activation::Identity)]).unwrap();
        let (p, x) = setup(&net, &mut rng, 3);
        assert_eq!(net.forward(&p, &x).unwrap(), net.forward(&p, &x).unwrap());
    }
}
