use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One layer of a feed-forward network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    /// Valid (unpadded) 2-D convolution.
    Conv2d {
        out_channels: usize,
        kernel: usize,
        stride: usize,
    },
    Dense {
        out_dim: usize,
    },
    Relu,
    Sigmoid,
    Flatten,
}

/// Shape of a single sample flowing between layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleShape {
    Image {
        channels: usize,
        height: usize,
        width: usize,
    },
    Flat(usize),
}

impl SampleShape {
    pub fn len(&self) -> usize {
        match *self {
            SampleShape::Image {
                channels,
                height,
                width,
            } => channels * height * width,
            SampleShape::Flat(d) => d,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dims(&self) -> Vec<usize> {
        match *self {
            SampleShape::Image {
                channels,
                height,
                width,
            } => vec![channels, height, width],
            SampleShape::Flat(d) => vec![d],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input: SampleShape,
    pub layers: Vec<LayerSpec>,
}

impl NetworkSpec {
    pub fn new(input: SampleShape, layers: Vec<LayerSpec>) -> Result<Self> {
        let spec = Self { input, layers };
        spec.shapes()?;
        Ok(spec)
    }

    /// Multi-layer perceptron: `Dense(h) → ReLU` for each hidden width, then `Dense(out)`.
    pub fn mlp(input_dim: usize, hidden: &[usize], out_dim: usize) -> Result<Self> {
        let mut layers = Vec::new();
        for &h in hidden {
            layers.push(LayerSpec::Dense { out_dim: h });
            layers.push(LayerSpec::Relu);
        }
        layers.push(LayerSpec::Dense { out_dim });
        Self::new(SampleShape::Flat(input_dim), layers)
    }

    /// Output shape of every layer, in order. Validates the whole stack.
    pub fn shapes(&self) -> Result<Vec<SampleShape>> {
        if self.input.is_empty() {
            return Err(Error::Shape("network input is empty".into()));
        }
        if !self
            .layers
            .iter()
            .any(|l| matches!(l, LayerSpec::Dense { .. }))
        {
            return Err(Error::Shape(
                "network needs at least one dense layer".into(),
            ));
        }
        let mut cur = self.input;
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            cur = match (*layer, cur) {
                (
                    LayerSpec::Conv2d {
                        out_channels,
                        kernel,
                        stride,
                    },
                    SampleShape::Image { height, width, .. },
                ) => {
                    if out_channels == 0 || kernel == 0 || stride == 0 {
                        return Err(Error::Shape(format!(
                            "layer {i}: conv parameters must be positive"
                        )));
                    }
                    if kernel > height || kernel > width {
                        return Err(Error::Shape(format!(
                            "layer {i}: kernel {kernel} larger than input {height}x{width}"
                        )));
                    }
                    SampleShape::Image {
                        channels: out_channels,
                        height: (height - kernel) / stride + 1,
                        width: (width - kernel) / stride + 1,
                    }
                }
                (LayerSpec::Conv2d { .. }, SampleShape::Flat(_)) => {
                    return Err(Error::Shape(format!(
                        "layer {i}: conv needs an image input"
                    )));
                }
                (LayerSpec::Dense { out_dim }, SampleShape::Flat(_)) => {
                    if out_dim == 0 {
                        return Err(Error::Shape(format!(
                            "layer {i}: dense width must be positive"
                        )));
                    }
                    SampleShape::Flat(out_dim)
                }
                (LayerSpec::Dense { .. }, SampleShape::Image { .. }) => {
                    return Err(Error::Shape(format!(
                        "layer {i}: dense needs a flat input (add Flatten)"
                    )));
                }
                (LayerSpec::Relu | LayerSpec::Sigmoid, s) => s,
                (LayerSpec::Flatten, s) => SampleShape::Flat(s.len()),
            };
            out.push(cur);
        }
        Ok(out)
    }

    pub fn output_shape(&self) -> Result<SampleShape> {
        Ok(*self.shapes()?.last().expect("at least one layer"))
    }

    /// Index of the layer whose output feeds the final dense head, i.e. the
    /// last hidden layer. `None` for a network that is a single dense layer.
    pub fn last_hidden_layer(&self) -> Option<usize> {
        let head = self
            .layers
            .iter()
            .rposition(|l| matches!(l, LayerSpec::Dense { .. }))?;
        head.checked_sub(1)
    }

    /// Number of trainable values per layer.
    pub fn param_counts(&self) -> Result<Vec<usize>> {
        let shapes = self.shapes()?;
        let mut prev = self.input;
        let mut counts = Vec::with_capacity(self.layers.len());
        for (layer, out) in self.layers.iter().zip(shapes) {
            let n = match (*layer, prev) {
                (
                    LayerSpec::Conv2d {
                        out_channels,
                        kernel,
                        ..
                    },
                    SampleShape::Image { channels, .. },
                ) => out_channels * channels * kernel * kernel + out_channels,
                (LayerSpec::Dense { out_dim }, p) => out_dim * p.len() + out_dim,
                _ => 0,
            };
            counts.push(n);
            prev = out;
        }
        Ok(counts)
    }

    pub fn num_params(&self) -> Result<usize> {
        Ok(self.param_counts()?.iter().sum())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn agent_like() -> NetworkSpec {
        NetworkSpec::new(
            SampleShape::Image {
                channels: 3,
                height: 16,
                width: 28,
            },
            vec![
                LayerSpec::Conv2d {
                    out_channels: 8,
                    kernel: 3,
                    stride: 2,
                },
                LayerSpec::Relu,
                LayerSpec::Conv2d {
                    out_channels: 16,
                    kernel: 3,
                    stride: 2,
                },
                LayerSpec::Relu,
                LayerSpec::Flatten,
                LayerSpec::Dense { out_dim: 64 },
                LayerSpec::Relu,
                LayerSpec::Dense { out_dim: 3 },
            ],
        )
        .unwrap()
    }

    #[test]
    fn shapes_flow_through_conv_stack() {
        let s = agent_like().shapes().unwrap();
        assert_eq!(
            s[0],
            SampleShape::Image {
                channels: 8,
                height: 7,
                width: 13
            }
        );
        assert_eq!(
            s[2],
            SampleShape::Image {
                channels: 16,
                height: 3,
                width: 6
            }
        );
        assert_eq!(s[4], SampleShape::Flat(288));
        assert_eq!(s[7], SampleShape::Flat(3));
    }

    #[test]
    fn last_hidden_layer_is_relu_before_head() {
        assert_eq!(agent_like().last_hidden_layer(), Some(6));
    }

    #[test]
    fn incompatible_stacks_are_rejected() {
        let img = SampleShape::Image {
            channels: 1,
            height: 4,
            width: 4,
        };
        assert!(NetworkSpec::new(img, vec![LayerSpec::Dense { out_dim: 2 }]).is_err());
        assert!(NetworkSpec::new(SampleShape::Flat(4), vec![LayerSpec::Relu]).is_err());
        assert!(NetworkSpec::new(
            SampleShape::Flat(4),
            vec![
                LayerSpec::Conv2d {
                    out_channels: 1,
                    kernel: 1,
                    stride: 1
                },
                LayerSpec::Dense { out_dim: 1 }
            ]
        )
        .is_err());
    }

    #[test]
    fn spec_round_trips_through_json() {
        let spec = agent_like();
        let text = serde_json::to_string(&spec).unwrap();
        let back: NetworkSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(spec, back);
    }
}
