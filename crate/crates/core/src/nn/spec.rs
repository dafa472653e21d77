//! Layer descriptions, shape inference and parameter accounting.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Linear,
    Relu,
    Softmax,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    /// Multiplies every input by `scale` (1/255 maps raw bytes to [0, 1]).
    Rescaling { scale: f64 },
    /// Placeholder for the augmentation sub-model. Identity inside the network;
    /// augmentation itself is applied to samples by the trainer.
    Augment,
    /// Valid (unpadded), stride-1 cross-correlation.
    Conv2D {
        filters: usize,
        kernel: [usize; 2],
        activation: Activation,
    },
    MaxPool2D { pool: [usize; 2], stride: usize },
    Dropout { rate: f64 },
    Flatten,
    Dense { units: usize, activation: Activation },
}

impl LayerSpec {
    pub fn conv(filters: usize) -> Self {
        LayerSpec::Conv2D {
            filters,
            kernel: [3, 3],
            activation: Activation::Relu,
        }
    }

    pub fn max_pool() -> Self {
        LayerSpec::MaxPool2D {
            pool: [2, 2],
            stride: 2,
        }
    }

    pub fn dense(units: usize, activation: Activation) -> Self {
        LayerSpec::Dense { units, activation }
    }

    /// Base name used for Keras-style layer naming (`conv2d_3`, `dense_1`, ...).
    pub fn kind_name(&self) -> &'static str {
        match self {
            LayerSpec::Rescaling { .. } => "rescaling",
            LayerSpec::Augment => "augment",
            LayerSpec::Conv2D { .. } => "conv2d",
            LayerSpec::MaxPool2D { .. } => "max_pooling2d",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::Flatten => "flatten",
            LayerSpec::Dense { .. } => "dense",
        }
    }

    pub fn has_params(&self) -> bool {
        matches!(self, LayerSpec::Conv2D { .. } | LayerSpec::Dense { .. })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_shape: [usize; 3],
    pub layers: Vec<LayerSpec>,
}

/// Dropout after the first and last convolutional blocks.
pub const CONV_BLOCK_DROPOUT: f64 = 0.25;
/// Dropout between the two fully connected layers.
pub const DENSE_DROPOUT: f64 = 0.5;

impl NetworkSpec {
    /// The 19-layer expression classifier for 48x48 grayscale faces.
    pub fn canonical() -> Self {
        Self::canonical_with_dropout(CONV_BLOCK_DROPOUT, DENSE_DROPOUT)
    }

    pub fn canonical_with_dropout(conv_dropout: f64, dense_dropout: f64) -> Self {
        use LayerSpec::*;
        NetworkSpec {
            input_shape: [48, 48, 1],
            layers: vec![
                Rescaling { scale: 1.0 / 255.0 },
                Augment,
                LayerSpec::conv(32),
                LayerSpec::conv(64),
                LayerSpec::max_pool(),
                Dropout { rate: conv_dropout },
                LayerSpec::conv(64),
                LayerSpec::conv(64),
                LayerSpec::conv(128),
                LayerSpec::max_pool(),
                LayerSpec::conv(128),
                LayerSpec::conv(256),
                LayerSpec::max_pool(),
                LayerSpec::max_pool(),
                Dropout { rate: conv_dropout },
                Flatten,
                LayerSpec::dense(1024, Activation::Relu),
                Dropout {
                    rate: dense_dropout,
                },
                LayerSpec::dense(7, Activation::Softmax),
            ],
        }
    }

    /// Copy of this spec with the dropout rates replaced: the final dropout layer
    /// gets `dense_dropout`, every earlier one gets `conv_dropout`.
    pub fn with_dropout_rates(&self, conv_dropout: f64, dense_dropout: f64) -> Self {
        let mut spec = self.clone();
        let last = spec
            .layers
            .iter()
            .rposition(|l| matches!(l, LayerSpec::Dropout { .. }));
        for (i, layer) in spec.layers.iter_mut().enumerate() {
            if let LayerSpec::Dropout { rate } = layer {
                *rate = if Some(i) == last {
                    dense_dropout
                } else {
                    conv_dropout
                };
            }
        }
        spec
    }

    /// Keras-style names, numbered per layer kind starting at 1.
    pub fn layer_names(&self) -> Vec<String> {
        let mut counts = std::collections::BTreeMap::<&str, usize>::new();
        self.layers
            .iter()
            .map(|layer| {
                let n = counts.entry(layer.kind_name()).or_default();
                *n += 1;
                format!("{}_{}", layer.kind_name(), n)
            })
            .collect()
    }

    pub fn output_classes(&self) -> Result<usize> {
        let shapes = self.infer_shapes()?;
        match shapes.last() {
            Some(s) if s.len() == 1 => Ok(s[0]),
            _ => Err(Error::Spec("network must end in a flat layer".into())),
        }
    }

    /// Checks per-layer invariants that do not depend on shapes.
    pub fn validate(&self) -> Result<()> {
        if self.input_shape.contains(&0) {
            return Err(Error::Spec(format!(
                "input shape {:?} has a zero dimension",
                self.input_shape
            )));
        }
        if self.layers.is_empty() {
            return Err(Error::Spec("network has no layers".into()));
        }
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            match *layer {
                LayerSpec::Rescaling { scale } if !scale.is_finite() => {
                    return Err(Error::Spec(format!("layer {i}: non-finite rescale")));
                }
                LayerSpec::Conv2D {
                    filters,
                    kernel,
                    activation,
                } => {
                    if kernel != [3, 3] {
                        return Err(Error::Spec(format!(
                            "layer {i}: convolution kernel must be 3x3, got {kernel:?}"
                        )));
                    }
                    if filters == 0 {
                        return Err(Error::Spec(format!("layer {i}: zero filters")));
                    }
                    if activation == Activation::Softmax {
                        return Err(Error::Spec(format!(
                            "layer {i}: softmax is only valid on the final dense layer"
                        )));
                    }
                }
                LayerSpec::MaxPool2D { pool, stride } => {
                    if pool != [2, 2] || stride != 2 {
                        return Err(Error::Spec(format!(
                            "layer {i}: max pooling must be 2x2 with stride 2"
                        )));
                    }
                }
                LayerSpec::Dropout { rate } => {
                    if !(0.0..1.0).contains(&rate) {
                        return Err(Error::Spec(format!(
                            "layer {i}: dropout rate {rate} outside [0, 1)"
                        )));
                    }
                }
                LayerSpec::Dense { units, activation } => {
                    if units == 0 {
                        return Err(Error::Spec(format!("layer {i}: zero units")));
                    }
                    if activation == Activation::Softmax && i != last {
                        return Err(Error::Spec(format!(
                            "layer {i}: softmax is only valid on the final dense layer"
                        )));
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Per-sample output shape of every layer.
    pub fn infer_shapes(&self) -> Result<Vec<Vec<usize>>> {
        self.validate()?;
        let mut current = self.input_shape.to_vec();
        let mut shapes = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            current = match *layer {
                LayerSpec::Rescaling { .. } | LayerSpec::Augment | LayerSpec::Dropout { .. } => {
                    current
                }
                LayerSpec::Conv2D {
                    filters, kernel, ..
                } => {
                    let [h, w, _] = spatial(&current, i)?;
                    if h < kernel[0] || w < kernel[1] {
                        return Err(Error::shape(format!(
                            "layer {i}: {h}x{w} input is smaller than the {}x{} kernel",
                            kernel[0], kernel[1]
                        )));
                    }
                    vec![h - kernel[0] + 1, w - kernel[1] + 1, filters]
                }
                LayerSpec::MaxPool2D { pool, stride } => {
                    let [h, w, c] = spatial(&current, i)?;
                    if h < pool[0] || w < pool[1] {
                        return Err(Error::shape(format!(
                            "layer {i}: {h}x{w} input is smaller than the pooling window"
                        )));
                    }
                    vec![(h - pool[0]) / stride + 1, (w - pool[1]) / stride + 1, c]
                }
                LayerSpec::Flatten => vec![current.iter().product()],
                LayerSpec::Dense { units, .. } => {
                    if current.len() != 1 {
                        return Err(Error::shape(format!(
                            "layer {i}: dense layer needs a flat input, got {current:?}"
                        )));
                    }
                    vec![units]
                }
            };
            shapes.push(current.clone());
        }
        Ok(shapes)
    }

    /// Trainable scalar count of every layer, plus the total.
    pub fn count_params(&self) -> Result<ParamCounts> {
        let shapes = self.infer_shapes()?;
        let mut per_layer = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let input = if i == 0 {
                self.input_shape.to_vec()
            } else {
                shapes[i - 1].clone()
            };
            let count = match param_shapes(layer, &input) {
                Some((kernel, bias)) => kernel.iter().product::<usize>() + bias.iter().product::<usize>(),
                None => 0,
            };
            per_layer.push(count);
        }
        let total = per_layer.iter().sum();
        Ok(ParamCounts { per_layer, total })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamCounts {
    pub per_layer: Vec<usize>,
    pub total: usize,
}

/// Kernel and bias shapes of a parameterised layer given its input shape.
pub(crate) fn param_shapes(layer: &LayerSpec, input: &[usize]) -> Option<(Vec<usize>, Vec<usize>)> {
    match *layer {
        LayerSpec::Conv2D {
            filters, kernel, ..
        } => Some((
            vec![kernel[0], kernel[1], input[2], filters],
            vec![filters],
        )),
        LayerSpec::Dense { units, .. } => Some((vec![input[0], units], vec![units])),
        _ => None,
    }
}

fn spatial(shape: &[usize], layer: usize) -> Result<[usize; 3]> {
    match *shape {
        [h, w, c] => Ok([h, w, c]),
        _ => Err(Error::shape(format!(
            "layer {layer}: expected an [H, W, C] input, got {shape:?}"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rescaling_preserves_shape() {
        let shapes = NetworkSpec::canonical().infer_shapes().unwrap();
        assert_eq!(shapes[0], vec![48, 48, 1]);
    }

    #[test]
    fn canonical_conv_and_pool_shapes() {
        let spec = NetworkSpec::canonical();
        let shapes = spec.infer_shapes().unwrap();
        let names = spec.layer_names();
        let at = |name: &str| shapes[names.iter().position(|n| n == name).unwrap()].clone();
        assert_eq!(at("conv2d_1"), vec![46, 46, 32]);
        assert_eq!(at("max_pooling2d_4"), vec![1, 1, 256]);
    }

    #[test]
    fn canonical_param_counts() {
        let counts = NetworkSpec::canonical().count_params().unwrap();
        assert_eq!(counts.per_layer[2], 320);
        assert_eq!(counts.per_layer[16], 263_168);
        assert_eq!(counts.total, 879_623);
    }

    #[test]
    fn shrinking_below_one_is_a_shape_error() {
        let spec = NetworkSpec {
            input_shape: [4, 4, 1],
            layers: vec![LayerSpec::conv(2), LayerSpec::conv(2)],
        };
        assert!(matches!(spec.infer_shapes(), Err(Error::Shape(_))));
    }

    #[test]
    fn invalid_layers_rejected() {
        let bad_rate = NetworkSpec {
            input_shape: [8, 8, 1],
            layers: vec![LayerSpec::Dropout { rate: 1.0 }],
        };
        assert!(matches!(bad_rate.validate(), Err(Error::Spec(_))));

        let bad_kernel = NetworkSpec {
            input_shape: [8, 8, 1],
            layers: vec![LayerSpec::Conv2D {
                filters: 2,
                kernel: [5, 5],
                activation: Activation::Relu,
            }],
        };
        assert!(bad_kernel.validate().is_err());

        let early_softmax = NetworkSpec {
            input_shape: [8, 8, 1],
            layers: vec![
                LayerSpec::Flatten,
                LayerSpec::dense(4, Activation::Softmax),
                LayerSpec::dense(2, Activation::Linear),
            ],
        };
        assert!(early_softmax.validate().is_err());
    }

    #[test]
    fn dropout_rates_replaced_by_position() {
        let spec = NetworkSpec::canonical().with_dropout_rates(0.1, 0.3);
        let rates: Vec<f64> = spec
            .layers
            .iter()
            .filter_map(|l| match l {
                LayerSpec::Dropout { rate } => Some(*rate),
                _ => None,
            })
            .collect();
        assert_eq!(rates, vec![0.1, 0.1, 0.3]);
    }
}
