use std::ops::Range;

use super::layers::{
    conv2d_backward, conv2d_valid, cross_entropy, dense_backward, dense_forward, maxpool_into,
    softmax_in_place,
};
use super::spec::layer_params;
use super::{Activation, Batch, LayerSpec, NetworkSpec, NnError, Scalar, Shape};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Weights,
    Bias,
}

/// One contiguous block of the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamBlock {
    pub layer: usize,
    pub kind: ParamKind,
    pub offset: usize,
    pub len: usize,
}

/// Structured parameters of one layer.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LayerParams<T> {
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

#[derive(Debug, Clone)]
struct LayerPlan {
    spec: LayerSpec,
    input: Shape,
    output: Shape,
    weights: Range<usize>,
    bias: Range<usize>,
}

impl LayerPlan {
    fn activation(&self) -> Activation {
        match self.spec {
            LayerSpec::Dense { activation, .. }
            | LayerSpec::Conv2d { activation, .. }
            | LayerSpec::MaxPool { activation, .. } => activation,
        }
    }
}

/// A network spec bound to its flat parameter layout.
///
/// Parameters are laid out layer by layer, weights before bias. Dense
/// weights are row-major `[out][in]`, convolution weights
/// `[filter][channel][ky][kx]`.
#[derive(Debug, Clone)]
pub struct Network {
    spec: NetworkSpec,
    plans: Vec<LayerPlan>,
    dim: usize,
}

/// Per-layer activations of a forward pass (row-major over the batch) and
/// the output class distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct Forward<T> {
    pub activations: Vec<Vec<T>>,
    pub probabilities: Vec<T>,
}

/// Scratch buffers reused across forward/backward calls.
#[derive(Debug, Clone, Default)]
pub struct Workspace<T> {
    acts: Vec<Vec<T>>,
    argmax: Vec<Vec<usize>>,
    scratch: Vec<f64>,
    logits: Vec<f64>,
    grad: Vec<f64>,
    delta: Vec<f64>,
    delta_prev: Vec<f64>,
}

impl<T: Scalar> Workspace<T> {
    pub fn new() -> Self {
        Workspace {
            acts: Vec::new(),
            argmax: Vec::new(),
            scratch: Vec::new(),
            logits: Vec::new(),
            grad: Vec::new(),
            delta: Vec::new(),
            delta_prev: Vec::new(),
        }
    }
}

impl Network {
    pub fn new(spec: NetworkSpec) -> Result<Self, NnError> {
        let shapes = spec.shapes()?;
        let mut plans = Vec::with_capacity(spec.layers.len());
        let mut input = spec.input;
        let mut offset = 0;
        for (layer, &output) in spec.layers.iter().zip(&shapes) {
            let (nw, nb) = layer_params(layer, input);
            plans.push(LayerPlan {
                spec: *layer,
                input,
                output,
                weights: offset..offset + nw,
                bias: offset + nw..offset + nw + nb,
            });
            offset += nw + nb;
            input = output;
        }
        Ok(Network {
            spec,
            plans,
            dim: offset,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    /// Parameter dimension `d`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn input_size(&self) -> usize {
        self.spec.input.size()
    }

    pub fn classes(&self) -> usize {
        self.plans.last().map(|p| p.output.size()).unwrap_or(0)
    }

    pub fn layout(&self) -> Vec<ParamBlock> {
        let mut blocks = Vec::new();
        for (layer, p) in self.plans.iter().enumerate() {
            for (kind, r) in [(ParamKind::Weights, &p.weights), (ParamKind::Bias, &p.bias)] {
                if !r.is_empty() {
                    blocks.push(ParamBlock {
                        layer,
                        kind,
                        offset: r.start,
                        len: r.len(),
                    });
                }
            }
        }
        blocks
    }

    /// Splits a flat parameter vector into per-layer weights and biases.
    pub fn scatter<T: Scalar>(&self, theta: &[T]) -> Result<Vec<LayerParams<T>>, NnError> {
        self.check_theta(theta)?;
        Ok(self
            .plans
            .iter()
            .map(|p| LayerParams {
                weights: theta[p.weights.clone()].to_vec(),
                bias: theta[p.bias.clone()].to_vec(),
            })
            .collect())
    }

    /// Inverse of [`Network::scatter`].
    pub fn gather<T: Scalar>(&self, params: &[LayerParams<T>]) -> Result<Vec<T>, NnError> {
        let mut theta = vec![T::default(); self.dim];
        if params.len() != self.plans.len() {
            return Err(NnError::InvalidSpec(format!(
                "expected {} layers of parameters, got {}",
                self.plans.len(),
                params.len()
            )));
        }
        for (p, lp) in self.plans.iter().zip(params) {
            if lp.weights.len() != p.weights.len() || lp.bias.len() != p.bias.len() {
                return Err(NnError::ParamLength {
                    expected: p.weights.len() + p.bias.len(),
                    actual: lp.weights.len() + lp.bias.len(),
                });
            }
            theta[p.weights.clone()].copy_from_slice(&lp.weights);
            theta[p.bias.clone()].copy_from_slice(&lp.bias);
        }
        Ok(theta)
    }

    fn check_theta<T>(&self, theta: &[T]) -> Result<(), NnError> {
        if theta.len() != self.dim {
            return Err(NnError::ParamLength {
                expected: self.dim,
                actual: theta.len(),
            });
        }
        Ok(())
    }

    fn check_batch<T: Scalar>(&self, batch: &Batch<T>) -> Result<(), NnError> {
        if batch.is_empty() {
            return Err(NnError::EmptyBatch);
        }
        let per = batch.inputs.len() / batch.len();
        if per != self.input_size() || batch.inputs.len() != per * batch.len() {
            return Err(NnError::InputShape {
                expected: self.input_size(),
                actual: batch.inputs.len() / batch.len().max(1),
            });
        }
        let classes = self.classes();
        if let Some(&label) = batch.labels.iter().find(|&&l| l as usize >= classes) {
            return Err(NnError::LabelOutOfRange { label, classes });
        }
        Ok(())
    }

    /// Runs the forward pass, returning every layer's output.
    pub fn forward<T: Scalar>(&self, theta: &[T], batch: &Batch<T>) -> Result<Forward<T>, NnError> {
        self.check_theta(theta)?;
        self.check_batch(batch)?;
        let mut ws = Workspace::new();
        self.forward_pass(theta, &batch.inputs, batch.len(), &mut ws);
        let mut activations = ws.acts;
        activations.truncate(self.plans.len());
        let probabilities = activations.last().cloned().unwrap_or_default();
        Ok(Forward {
            activations,
            probabilities,
        })
    }

    /// Mean cross-entropy of `batch` under `theta`.
    pub fn loss<T: Scalar>(
        &self,
        theta: &[T],
        batch: &Batch<T>,
        ws: &mut Workspace<T>,
    ) -> Result<f64, NnError> {
        self.check_theta(theta)?;
        self.check_batch(batch)?;
        self.forward_pass(theta, &batch.inputs, batch.len(), ws);
        Ok(self.batch_loss(&batch.labels, ws))
    }

    /// Mean cross-entropy of `batch` and its gradient with respect to `theta`,
    /// written to `grad` in the flat layout.
    pub fn loss_and_gradient<T: Scalar>(
        &self,
        theta: &[T],
        batch: &Batch<T>,
        grad: &mut [T],
        ws: &mut Workspace<T>,
    ) -> Result<f64, NnError> {
        self.check_theta(theta)?;
        self.check_theta(grad)?;
        self.check_batch(batch)?;
        let n = batch.len();
        self.forward_pass(theta, &batch.inputs, n, ws);
        let loss = self.batch_loss(&batch.labels, ws);
        self.backward_pass(theta, &batch.inputs, &batch.labels, ws);
        for (g, acc) in grad.iter_mut().zip(&ws.grad) {
            *g = T::from_f64(*acc);
        }
        Ok(loss)
    }

    fn batch_loss<T: Scalar>(&self, labels: &[u8], ws: &Workspace<T>) -> f64 {
        let k = self.classes();
        let total: f64 = labels
            .iter()
            .enumerate()
            .map(|(b, &y)| cross_entropy(&ws.logits[b * k..(b + 1) * k], y as usize))
            .sum();
        total / labels.len() as f64
    }

    fn forward_pass<T: Scalar>(&self, theta: &[T], inputs: &[T], n: usize, ws: &mut Workspace<T>) {
        let layers = self.plans.len();
        ws.acts.resize_with(layers, Vec::new);
        ws.argmax.resize_with(layers, Vec::new);
        for (l, plan) in self.plans.iter().enumerate() {
            let (before, rest) = ws.acts.split_at_mut(l);
            let input: &[T] = if l == 0 { inputs } else { &before[l - 1] };
            let out = &mut rest[0];
            let in_size = plan.input.size();
            let out_size = plan.output.size();
            out.resize(n * out_size, T::default());
            let activation = plan.activation();
            let w = &theta[plan.weights.clone()];
            let bias = &theta[plan.bias.clone()];
            match plan.spec {
                LayerSpec::Dense { .. } | LayerSpec::Conv2d { .. } => {
                    if activation == Activation::Softmax {
                        ws.logits.resize(n * out_size, 0.0);
                    }
                    ws.scratch.resize(out_size, 0.0);
                    for b in 0..n {
                        let x = &input[b * in_size..(b + 1) * in_size];
                        let z = &mut ws.scratch[..];
                        match plan.spec {
                            LayerSpec::Conv2d { kernel, .. } => {
                                conv2d_valid(x, plan.input, w, bias, kernel, z)
                            }
                            _ => dense_forward(x, w, bias, z),
                        }
                        let o = &mut out[b * out_size..(b + 1) * out_size];
                        match activation {
                            Activation::Relu => {
                                for (dst, &v) in o.iter_mut().zip(z.iter()) {
                                    *dst = T::from_f64(v.max(0.0));
                                }
                            }
                            Activation::Linear => {
                                for (dst, &v) in o.iter_mut().zip(z.iter()) {
                                    *dst = T::from_f64(v);
                                }
                            }
                            Activation::Softmax => {
                                ws.logits[b * out_size..(b + 1) * out_size].copy_from_slice(z);
                                softmax_in_place(z);
                                for (dst, &v) in o.iter_mut().zip(z.iter()) {
                                    *dst = T::from_f64(v);
                                }
                            }
                        }
                    }
                }
                LayerSpec::MaxPool { window, .. } => {
                    let argmax = &mut ws.argmax[l];
                    argmax.resize(n * out_size, 0);
                    for b in 0..n {
                        let x = &input[b * in_size..(b + 1) * in_size];
                        let o = &mut out[b * out_size..(b + 1) * out_size];
                        maxpool_into(
                            x,
                            plan.input,
                            window,
                            o,
                            &mut argmax[b * out_size..(b + 1) * out_size],
                        );
                        if activation == Activation::Relu {
                            for v in o.iter_mut() {
                                *v = T::from_f64(v.to_f64().max(0.0));
                            }
                        }
                    }
                }
            }
        }
    }

    fn backward_pass<T: Scalar>(
        &self,
        theta: &[T],
        inputs: &[T],
        labels: &[u8],
        ws: &mut Workspace<T>,
    ) {
        let n = labels.len();
        let k = self.classes();
        let Workspace {
            acts,
            argmax,
            scratch,
            logits,
            grad,
            delta,
            delta_prev,
        } = ws;
        grad.clear();
        grad.resize(self.dim, 0.0);

        // d(mean CE)/d(logits) = (softmax - onehot) / n
        delta.resize(n * k, 0.0);
        scratch.resize(k, 0.0);
        let inv_n = 1.0 / n as f64;
        for (b, &y) in labels.iter().enumerate() {
            let p = &mut scratch[..k];
            p.copy_from_slice(&logits[b * k..(b + 1) * k]);
            softmax_in_place(p);
            let d = &mut delta[b * k..(b + 1) * k];
            for (j, (dj, &pj)) in d.iter_mut().zip(p.iter()).enumerate() {
                *dj = (pj - if j == y as usize { 1.0 } else { 0.0 }) * inv_n;
            }
        }

        for l in (0..self.plans.len()).rev() {
            let plan = &self.plans[l];
            let input: &[T] = if l == 0 { inputs } else { &acts[l - 1] };
            let in_size = plan.input.size();
            let out_size = plan.output.size();
            let need_input_grad = l > 0;
            if need_input_grad {
                delta_prev.resize(n * in_size, 0.0);
            }
            let w = &theta[plan.weights.clone()];
            let (gw, gb) = {
                let (head, tail) = grad.split_at_mut(plan.bias.start);
                (
                    &mut head[plan.weights.clone()],
                    &mut tail[..plan.bias.len()],
                )
            };
            for b in 0..n {
                let x = &input[b * in_size..(b + 1) * in_size];
                let d = &delta[b * out_size..(b + 1) * out_size];
                let din = if need_input_grad {
                    Some(&mut delta_prev[b * in_size..(b + 1) * in_size])
                } else {
                    None
                };
                match plan.spec {
                    LayerSpec::Dense { .. } => dense_backward(x, w, d, gw, gb, din),
                    LayerSpec::Conv2d { kernel, .. } => {
                        conv2d_backward(x, plan.input, w, kernel, d, gw, gb, din)
                    }
                    LayerSpec::MaxPool { .. } => {
                        if let Some(din) = din {
                            din.fill(0.0);
                            let am = &argmax[l][b * out_size..(b + 1) * out_size];
                            for (&g, &i) in d.iter().zip(am) {
                                din[i] += g;
                            }
                        }
                    }
                }
            }
            if need_input_grad {
                // Chain through the previous layer's activation.
                if self.plans[l - 1].activation() == Activation::Relu {
                    for (dp, a) in delta_prev.iter_mut().zip(&acts[l - 1]) {
                        if a.to_f64() <= 0.0 {
                            *dp = 0.0;
                        }
                    }
                }
                std::mem::swap(delta, delta_prev);
            }
        }
    }
}
