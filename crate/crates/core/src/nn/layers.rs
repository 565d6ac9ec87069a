//! Single-example layer kernels. Reductions accumulate in `f64`.

use super::{NnError, Scalar, Shape};

#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.to_f64() * y.to_f64()).sum()
}

/// `out[o] = b[o] + sum_i w[o, i] * x[i]` with `w` row-major `[out][in]`.
pub(crate) fn dense_forward<T: Scalar>(x: &[T], w: &[T], b: &[T], out: &mut [f64]) {
    let n_in = x.len();
    for (o, z) in out.iter_mut().enumerate() {
        *z = b[o].to_f64() + dot(&w[o * n_in..(o + 1) * n_in], x);
    }
}

/// Accumulates weight/bias gradients and, if requested, the input gradient
/// of a dense layer for one example.
pub(crate) fn dense_backward<T: Scalar>(
    x: &[T],
    w: &[T],
    delta: &[f64],
    grad_w: &mut [f64],
    grad_b: &mut [f64],
    delta_in: Option<&mut [f64]>,
) {
    let n_in = x.len();
    for (o, &d) in delta.iter().enumerate() {
        grad_b[o] += d;
        if d == 0.0 {
            continue;
        }
        for (g, xi) in grad_w[o * n_in..(o + 1) * n_in].iter_mut().zip(x) {
            *g += d * xi.to_f64();
        }
    }
    if let Some(din) = delta_in {
        din.fill(0.0);
        for (o, &d) in delta.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            for (di, wi) in din.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
                *di += d * wi.to_f64();
            }
        }
    }
}

/// Valid (unpadded) stride-1 2-D convolution of one example.
///
/// `w` is laid out `[filter][channel][ky][kx]`; `out` receives
/// `[filter][y][x]` pre-activations.
pub fn conv2d_valid<T: Scalar>(
    input: &[T],
    shape: Shape,
    w: &[T],
    b: &[T],
    kernel: (usize, usize),
    out: &mut [f64],
) {
    let (kh, kw) = kernel;
    let filters = b.len();
    let oh = shape.height - kh + 1;
    let ow = shape.width - kw + 1;
    let plane = shape.height * shape.width;
    for f in 0..filters {
        let wf = &w[f * shape.channels * kh * kw..(f + 1) * shape.channels * kh * kw];
        for y in 0..oh {
            for x in 0..ow {
                let mut acc = b[f].to_f64();
                for c in 0..shape.channels {
                    for ky in 0..kh {
                        let row = c * plane + (y + ky) * shape.width + x;
                        let wrow = (c * kh + ky) * kw;
                        acc += dot(&wf[wrow..wrow + kw], &input[row..row + kw]);
                    }
                }
                out[(f * oh + y) * ow + x] = acc;
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_backward<T: Scalar>(
    input: &[T],
    shape: Shape,
    w: &[T],
    kernel: (usize, usize),
    delta: &[f64],
    grad_w: &mut [f64],
    grad_b: &mut [f64],
    delta_in: Option<&mut [f64]>,
) {
    let (kh, kw) = kernel;
    let filters = grad_b.len();
    let oh = shape.height - kh + 1;
    let ow = shape.width - kw + 1;
    let plane = shape.height * shape.width;
    let fsize = shape.channels * kh * kw;
    for f in 0..filters {
        let gw = &mut grad_w[f * fsize..(f + 1) * fsize];
        for y in 0..oh {
            for x in 0..ow {
                let d = delta[(f * oh + y) * ow + x];
                grad_b[f] += d;
                if d == 0.0 {
                    continue;
                }
                for c in 0..shape.channels {
                    for ky in 0..kh {
                        let row = c * plane + (y + ky) * shape.width + x;
                        let wrow = (c * kh + ky) * kw;
                        for kx in 0..kw {
                            gw[wrow + kx] += d * input[row + kx].to_f64();
                        }
                    }
                }
            }
        }
    }
    if let Some(din) = delta_in {
        din.fill(0.0);
        for f in 0..filters {
            let wf = &w[f * fsize..(f + 1) * fsize];
            for y in 0..oh {
                for x in 0..ow {
                    let d = delta[(f * oh + y) * ow + x];
                    if d == 0.0 {
                        continue;
                    }
                    for c in 0..shape.channels {
                        for ky in 0..kh {
                            let row = c * plane + (y + ky) * shape.width + x;
                            let wrow = (c * kh + ky) * kw;
                            for kx in 0..kw {
                                din[row + kx] += d * wf[wrow + kx].to_f64();
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Pooled values plus, for every output, the flat input index it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolOutput<T> {
    pub shape: Shape,
    pub values: Vec<T>,
    pub argmax: Vec<usize>,
}

pub(crate) fn maxpool_into<T: Scalar>(
    input: &[T],
    shape: Shape,
    window: (usize, usize),
    out: &mut [T],
    argmax: &mut [usize],
) {
    let (ph, pw) = window;
    let oh = shape.height / ph;
    let ow = shape.width / pw;
    for c in 0..shape.channels {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = (c * shape.height + oy * ph) * shape.width + ox * pw;
                for dy in 0..ph {
                    for dx in 0..pw {
                        let idx = (c * shape.height + oy * ph + dy) * shape.width + ox * pw + dx;
                        if input[idx] > input[best] {
                            best = idx;
                        }
                    }
                }
                let o = (c * oh + oy) * ow + ox;
                out[o] = input[best];
                argmax[o] = best;
            }
        }
    }
}

/// Max-pools one example with stride equal to the window. Trailing rows and
/// columns that do not fill a whole window are dropped. Ties go to the first
/// position in row-major window order.
pub fn forward_maxpool<T: Scalar>(
    input: &[T],
    shape: Shape,
    window: (usize, usize),
) -> Result<PoolOutput<T>, NnError> {
    let (ph, pw) = window;
    if ph == 0 || pw == 0 || ph > shape.height || pw > shape.width {
        return Err(NnError::WindowTooLarge {
            window,
            input: (shape.height, shape.width),
        });
    }
    if input.len() != shape.size() {
        return Err(NnError::InputShape {
            expected: shape.size(),
            actual: input.len(),
        });
    }
    let out_shape = Shape::image(shape.channels, shape.height / ph, shape.width / pw);
    let mut values = vec![T::default(); out_shape.size()];
    let mut argmax = vec![0; out_shape.size()];
    maxpool_into(input, shape, window, &mut values, &mut argmax);
    Ok(PoolOutput {
        shape: out_shape,
        values,
        argmax,
    })
}

/// Routes each output gradient to the input position that produced the max.
pub fn backward_maxpool(grad_out: &[f64], argmax: &[usize], input_len: usize) -> Vec<f64> {
    let mut grad_in = vec![0.0; input_len];
    for (&g, &i) in grad_out.iter().zip(argmax) {
        grad_in[i] += g;
    }
    grad_in
}

/// Numerically stable softmax (max subtraction).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let mut out = logits.to_vec();
    softmax_in_place(&mut out);
    out
}

pub(crate) fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}

/// `-ln softmax(z)[label]`, computed without forming the probabilities.
pub(crate) fn cross_entropy(z: &[f64], label: usize) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    lse - (z[label] - max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pool_2x2() {
        let p = forward_maxpool(&[1.0f64, 2.0, 3.0, 4.0], Shape::image(1, 2, 2), (2, 2)).unwrap();
        assert_eq!(p.values, vec![4.0]);
        assert_eq!(p.argmax, vec![3]);
        assert_eq!(
            backward_maxpool(&[1.5], &p.argmax, 4),
            vec![0.0, 0.0, 0.0, 1.5]
        );
    }

    #[test]
    fn pool_floor_truncation() {
        let input: Vec<f64> = (0..121).map(|i| i as f64).collect();
        let p = forward_maxpool(&input, Shape::image(1, 11, 11), (2, 2)).unwrap();
        assert_eq!(p.shape, Shape::image(1, 5, 5));
        // Bottom-right of window (4,4) is input (9,9).
        assert_eq!(p.values[24], (9 * 11 + 9) as f64);
    }

    #[test]
    fn pool_window_too_large() {
        assert!(forward_maxpool(&[1.0f32; 4], Shape::image(1, 2, 2), (3, 3)).is_err());
        assert!(forward_maxpool(&[1.0f32; 4], Shape::image(1, 2, 2), (0, 1)).is_err());
    }

    #[test]
    fn softmax_shift_invariant() {
        let a = softmax(&[1.0, 2.0, -3.0, 0.5]);
        let b = softmax(&[101.0, 102.0, 97.0, 100.5]);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let p = softmax(&[0.0; 10]);
        assert!(p.iter().all(|&x| (x - 0.1).abs() < 1e-15));
    }

    #[test]
    fn cross_entropy_limits() {
        assert_eq!(cross_entropy(&[0.0, 1000.0, 0.0], 1), 0.0);
        assert!((cross_entropy(&[0.0; 10], 3) - 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn conv_matches_direct_summation() {
        // 2x2 kernel over a 3x3 image, one channel, one filter.
        let img = [1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0];
        let w = [1.0f64, -1.0, 0.5, 2.0];
        let b = [0.25f64];
        let mut out = [0.0; 4];
        conv2d_valid(&img, Shape::image(1, 3, 3), &w, &b, (2, 2), &mut out);
        // Direct: out(y,x) = b + sum_{ky,kx} w[ky][kx] * img[y+ky][x+kx].
        let expected = [
            0.25 + 1.0 - 2.0 + 0.5 * 4.0 + 2.0 * 5.0,
            0.25 + 2.0 - 3.0 + 0.5 * 5.0 + 2.0 * 6.0,
            0.25 + 4.0 - 5.0 + 0.5 * 7.0 + 2.0 * 8.0,
            0.25 + 5.0 - 6.0 + 0.5 * 8.0 + 2.0 * 9.0,
        ];
        assert_eq!(out, expected);
    }
}
