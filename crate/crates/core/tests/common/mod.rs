//! Oracles shared by the integration test targets.

#![allow(dead_code)]

use leashed::nn::{Activation, Batch, LayerSpec, Network, NetworkSpec, Scalar, Shape, Workspace};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Largest parameter count of a generated network.
pub const MAX_TINY_DIM: usize = 200;

/// A random small network mixing convolution, pooling and dense layers,
/// with at most [`MAX_TINY_DIM`] parameters.
pub fn random_tiny_spec(rng: &mut impl Rng) -> NetworkSpec {
    loop {
        let convolutional = rng.gen_bool(0.6);
        let side = rng.gen_range(4..=7);
        let input = if convolutional {
            Shape::image(rng.gen_range(1..=2), side, side)
        } else {
            Shape::flat(rng.gen_range(2..=12))
        };
        let mut layers = Vec::new();
        if convolutional {
            let k = rng.gen_range(2..=3);
            layers.push(LayerSpec::Conv2d {
                filters: rng.gen_range(1..=3),
                kernel: (k, rng.gen_range(2..=3)),
                activation: if rng.gen_bool(0.7) {
                    Activation::Relu
                } else {
                    Activation::Linear
                },
            });
            if rng.gen_bool(0.6) {
                layers.push(LayerSpec::MaxPool {
                    window: (2, 2),
                    activation: Activation::Relu,
                });
            }
        }
        if rng.gen_bool(0.6) {
            layers.push(LayerSpec::Dense {
                out_neurons: rng.gen_range(2..=6),
                activation: if rng.gen_bool(0.8) {
                    Activation::Relu
                } else {
                    Activation::Linear
                },
            });
        }
        layers.push(LayerSpec::Dense {
            out_neurons: rng.gen_range(2..=4),
            activation: Activation::Softmax,
        });
        let spec = NetworkSpec::new(input, layers);
        if let Ok(net) = Network::new(spec.clone()) {
            if net.dim() <= MAX_TINY_DIM {
                return spec;
            }
        }
    }
}

pub fn random_vec(rng: &mut impl Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
}

pub fn random_batch(rng: &mut impl Rng, net: &Network, n: usize) -> Batch<f64> {
    let inputs = random_vec(rng, n * net.input_size(), 1.0);
    let labels = (0..n)
        .map(|_| rng.gen_range(0..net.classes()) as u8)
        .collect();
    Batch::new(inputs, labels)
}

fn cast<T: Scalar>(v: &[f64]) -> Vec<T> {
    v.iter().map(|&x| T::from_f64(x)).collect()
}

/// Worst relative error `|a - b| / max(|a|, |b|, 1e-3)` between the
/// backpropagated gradient at precision `T` and central differences of the
/// 64-bit loss at the same (rounded) parameters and inputs.
pub fn gradient_error<T: Scalar>(net: &Network, theta: &[f64], batch: &Batch<f64>) -> f64 {
    let theta_t: Vec<T> = cast(theta);
    let batch_t = Batch::new(cast::<T>(&batch.inputs), batch.labels.clone());
    let mut grad = vec![T::default(); net.dim()];
    let mut ws = Workspace::new();
    net.loss_and_gradient(&theta_t, &batch_t, &mut grad, &mut ws)
        .unwrap();

    let mut x: Vec<f64> = theta_t.iter().map(|v| v.to_f64()).collect();
    let inputs: Vec<f64> = batch_t.inputs.iter().map(|v| v.to_f64()).collect();
    let b64 = Batch::new(inputs, batch.labels.clone());
    let mut ws64 = Workspace::new();
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + h;
        let up = net.loss(&x, &b64, &mut ws64).unwrap();
        x[i] = orig - h;
        let down = net.loss(&x, &b64, &mut ws64).unwrap();
        x[i] = orig;
        let fd = (up - down) / (2.0 * h);
        let g = grad[i].to_f64();
        worst = worst.max((g - fd).abs() / g.abs().max(fd.abs()).max(1e-3));
    }
    worst
}

/// Worst 32-bit and 64-bit gradient errors over `count` random networks.
pub fn gradient_suite(count: usize, seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut e32, mut e64): (f64, f64) = (0.0, 0.0);
    for _ in 0..count {
        let net = Network::new(random_tiny_spec(&mut rng)).unwrap();
        let theta = random_vec(&mut rng, net.dim(), 0.5);
        let batch = random_batch(&mut rng, &net, 3);
        e64 = e64.max(gradient_error::<f64>(&net, &theta, &batch));
        e32 = e32.max(gradient_error::<f32>(&net, &theta, &batch));
    }
    (e32, e64)
}
