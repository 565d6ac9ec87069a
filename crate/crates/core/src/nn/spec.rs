use std::fmt;

use super::NnError;

/// Activation applied to a layer's output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Linear,
    /// Only valid on the final dense layer.
    Softmax,
}

/// Channels-first tensor shape of one example.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub fn flat(n: usize) -> Self {
        Shape {
            channels: n,
            height: 1,
            width: 1,
        }
    }

    pub fn image(channels: usize, height: usize, width: usize) -> Self {
        Shape {
            channels,
            height,
            width,
        }
    }

    pub fn size(&self) -> usize {
        self.channels * self.height * self.width
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.channels, self.height, self.width)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    Dense {
        out_neurons: usize,
        activation: Activation,
    },
    /// Valid padding, stride 1.
    Conv2d {
        filters: usize,
        kernel: (usize, usize),
        activation: Activation,
    },
    /// Non-overlapping windows, stride equal to the window, trailing
    /// rows/columns that do not fill a window are dropped.
    MaxPool {
        window: (usize, usize),
        activation: Activation,
    },
}

/// Layer-structured network definition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkSpec {
    pub input: Shape,
    pub layers: Vec<LayerSpec>,
}

impl NetworkSpec {
    pub fn new(input: Shape, layers: Vec<LayerSpec>) -> Self {
        NetworkSpec { input, layers }
    }

    /// 784 -> 3 x Dense(128, ReLU) -> Dense(10, softmax).
    pub fn mlp() -> Self {
        let mut layers = vec![
            LayerSpec::Dense {
                out_neurons: 128,
                activation: Activation::Relu,
            };
            3
        ];
        layers.push(LayerSpec::Dense {
            out_neurons: 10,
            activation: Activation::Softmax,
        });
        NetworkSpec::new(Shape::flat(784), layers)
    }

    /// 1x28x28 -> Conv(4, 3x3) -> Pool(2x2) -> Conv(8, 3x3) -> Pool(2x2)
    /// -> Dense(128) -> Dense(10, softmax), ReLU everywhere else.
    pub fn cnn() -> Self {
        use Activation::Relu;
        NetworkSpec::new(
            Shape::image(1, 28, 28),
            vec![
                LayerSpec::Conv2d {
                    filters: 4,
                    kernel: (3, 3),
                    activation: Relu,
                },
                LayerSpec::MaxPool {
                    window: (2, 2),
                    activation: Relu,
                },
                LayerSpec::Conv2d {
                    filters: 8,
                    kernel: (3, 3),
                    activation: Relu,
                },
                LayerSpec::MaxPool {
                    window: (2, 2),
                    activation: Relu,
                },
                LayerSpec::Dense {
                    out_neurons: 128,
                    activation: Relu,
                },
                LayerSpec::Dense {
                    out_neurons: 10,
                    activation: Activation::Softmax,
                },
            ],
        )
    }

    /// Small MLP for desk-scale experiments: one hidden ReLU layer.
    pub fn tiny(inputs: usize, hidden: usize, classes: usize) -> Self {
        NetworkSpec::new(
            Shape::flat(inputs),
            vec![
                LayerSpec::Dense {
                    out_neurons: hidden,
                    activation: Activation::Relu,
                },
                LayerSpec::Dense {
                    out_neurons: classes,
                    activation: Activation::Softmax,
                },
            ],
        )
    }

    /// Output shapes of every layer, validating the chain.
    pub fn shapes(&self) -> Result<Vec<Shape>, NnError> {
        if self.input.size() == 0 {
            return Err(NnError::InvalidSpec("input shape has zero size".into()));
        }
        let Some(last) = self.layers.last() else {
            return Err(NnError::InvalidSpec("network has no layers".into()));
        };
        if !matches!(
            last,
            LayerSpec::Dense {
                activation: Activation::Softmax,
                ..
            }
        ) {
            return Err(NnError::InvalidSpec(
                "last layer must be dense with softmax".into(),
            ));
        }
        let mut shape = self.input;
        let mut out = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let is_last = l + 1 == self.layers.len();
            shape = match *layer {
                LayerSpec::Dense {
                    out_neurons,
                    activation,
                } => {
                    if out_neurons == 0 {
                        return Err(NnError::InvalidSpec(format!("layer {l}: zero neurons")));
                    }
                    if activation == Activation::Softmax && !is_last {
                        return Err(NnError::InvalidSpec(format!(
                            "layer {l}: softmax only allowed on the output layer"
                        )));
                    }
                    Shape::flat(out_neurons)
                }
                LayerSpec::Conv2d {
                    filters,
                    kernel: (kh, kw),
                    activation,
                } => {
                    if filters == 0 || kh == 0 || kw == 0 {
                        return Err(NnError::InvalidSpec(format!(
                            "layer {l}: empty convolution"
                        )));
                    }
                    if activation == Activation::Softmax {
                        return Err(NnError::InvalidSpec(format!(
                            "layer {l}: softmax on convolution"
                        )));
                    }
                    if kh > shape.height || kw > shape.width {
                        return Err(NnError::InvalidSpec(format!(
                            "layer {l}: kernel {kh}x{kw} larger than input {shape}"
                        )));
                    }
                    Shape::image(filters, shape.height - kh + 1, shape.width - kw + 1)
                }
                LayerSpec::MaxPool {
                    window: (ph, pw),
                    activation,
                } => {
                    if ph == 0 || pw == 0 {
                        return Err(NnError::InvalidSpec(format!(
                            "layer {l}: empty pool window"
                        )));
                    }
                    if activation == Activation::Softmax {
                        return Err(NnError::InvalidSpec(format!("layer {l}: softmax on pool")));
                    }
                    if ph > shape.height || pw > shape.width {
                        return Err(NnError::WindowTooLarge {
                            window: (ph, pw),
                            input: (shape.height, shape.width),
                        });
                    }
                    Shape::image(shape.channels, shape.height / ph, shape.width / pw)
                }
            };
            out.push(shape);
        }
        Ok(out)
    }

    /// Number of trainable parameters.
    pub fn param_count(&self) -> Result<usize, NnError> {
        let shapes = self.shapes()?;
        let mut input = self.input;
        let mut d = 0;
        for (layer, out) in self.layers.iter().zip(&shapes) {
            d += layer_params(layer, input).0 + layer_params(layer, input).1;
            input = *out;
        }
        Ok(d)
    }
}

/// (weight count, bias count) of one layer given its input shape.
pub(crate) fn layer_params(layer: &LayerSpec, input: Shape) -> (usize, usize) {
    match *layer {
        LayerSpec::Dense { out_neurons, .. } => (out_neurons * input.size(), out_neurons),
        LayerSpec::Conv2d {
            filters,
            kernel: (kh, kw),
            ..
        } => (filters * input.channels * kh * kw, filters),
        LayerSpec::MaxPool { .. } => (0, 0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mlp_param_count() {
        assert_eq!(NetworkSpec::mlp().param_count().unwrap(), 134_794);
    }

    #[test]
    fn cnn_param_count() {
        assert_eq!(NetworkSpec::cnn().param_count().unwrap(), 27_354);
    }

    #[test]
    fn cnn_shapes_truncate_odd_pool_input() {
        let shapes = NetworkSpec::cnn().shapes().unwrap();
        assert_eq!(shapes[0], Shape::image(4, 26, 26));
        assert_eq!(shapes[1], Shape::image(4, 13, 13));
        assert_eq!(shapes[2], Shape::image(8, 11, 11));
        assert_eq!(shapes[3], Shape::image(8, 5, 5));
        assert_eq!(shapes[4], Shape::flat(128));
    }

    #[test]
    fn single_unit() {
        let spec = NetworkSpec::new(
            Shape::flat(1),
            vec![LayerSpec::Dense {
                out_neurons: 1,
                activation: Activation::Softmax,
            }],
        );
        assert_eq!(spec.param_count().unwrap(), 2);
    }

    #[test]
    fn rejects_bad_specs() {
        let no_softmax = NetworkSpec::new(
            Shape::flat(4),
            vec![LayerSpec::Dense {
                out_neurons: 2,
                activation: Activation::Relu,
            }],
        );
        assert!(no_softmax.param_count().is_err());

        let big_kernel = NetworkSpec::new(
            Shape::image(1, 2, 2),
            vec![
                LayerSpec::Conv2d {
                    filters: 1,
                    kernel: (3, 3),
                    activation: Activation::Relu,
                },
                LayerSpec::Dense {
                    out_neurons: 2,
                    activation: Activation::Softmax,
                },
            ],
        );
        assert!(big_kernel.param_count().is_err());

        let big_pool = NetworkSpec::new(
            Shape::image(1, 2, 2),
            vec![
                LayerSpec::MaxPool {
                    window: (3, 1),
                    activation: Activation::Linear,
                },
                LayerSpec::Dense {
                    out_neurons: 2,
                    activation: Activation::Softmax,
                },
            ],
        );
        assert!(matches!(
            big_pool.param_count(),
            Err(NnError::WindowTooLarge { .. })
        ));
    }
}
