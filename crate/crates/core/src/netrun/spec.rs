//! Layer-by-layer network description.

use crate::accelsim::FilterCase;
use crate::error::{Error, Result};
use crate::tensor::{conv_output_side, PoolKind};

#[derive(Clone, Debug, PartialEq)]
pub struct ConvSpec {
    pub name: String,
    pub in_channels: usize,
    pub filters: usize,
    pub kernel: usize,
    pub case_hint: Option<FilterCase>,
    /// ReLU and truncation after the layer. Only the last layer may skip it.
    pub activation: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PoolSpec {
    pub kind: PoolKind,
    pub size: usize,
    pub stride: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FcSpec {
    pub name: String,
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub enum LayerSpec {
    Conv(ConvSpec),
    Pool(PoolSpec),
    Fc(FcSpec),
}

impl LayerSpec {
    /// Name of a layer that carries weights.
    pub fn weight_name(&self) -> Option<&str> {
        match self {
            LayerSpec::Conv(c) => Some(&c.name),
            LayerSpec::Fc(f) => Some(&f.name),
            LayerSpec::Pool(_) => None,
        }
    }
}

/// Shape flowing between layers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Shape {
    Map { channels: usize, height: usize, width: usize },
    Vector(usize),
}

impl Shape {
    pub fn len(self) -> usize {
        match self {
            Shape::Map { channels, height, width } => channels * height * width,
            Shape::Vector(n) => n,
        }
    }

    pub fn is_empty(self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkSpec {
    pub name: String,
    /// `(channels, height, width)` of the stored image.
    pub input: (usize, usize, usize),
    /// Zero border added before the first layer.
    pub input_pad: usize,
    pub layers: Vec<LayerSpec>,
    /// Upper clamp of hidden activations in the float reference, matching
    /// the 8-bit full scale of the integer path.
    pub activation_max: Option<f32>,
}

impl NetworkSpec {
    /// LeNet-5 on 28x28 digits placed in a 32x32 frame.
    pub fn lenet5() -> Self {
        let pool = LayerSpec::Pool(PoolSpec {
            kind: PoolKind::Max,
            size: 2,
            stride: 2,
        });
        NetworkSpec {
            name: "lenet5".into(),
            input: (1, 28, 28),
            input_pad: 2,
            layers: vec![
                LayerSpec::Conv(ConvSpec {
                    name: "conv1".into(),
                    in_channels: 1,
                    filters: 6,
                    kernel: 5,
                    case_hint: None,
                    activation: true,
                }),
                pool.clone(),
                LayerSpec::Conv(ConvSpec {
                    name: "conv2".into(),
                    in_channels: 6,
                    filters: 16,
                    kernel: 5,
                    case_hint: None,
                    activation: true,
                }),
                pool,
                fc("fc1", 400, 120, true),
                fc("fc2", 120, 84, true),
                fc("fc3", 84, 10, false),
            ],
            activation_max: Some(1.0),
        }
    }

    /// A one-conv, one-FC network on 12x12 inputs, for fixtures and tests.
    pub fn tiny() -> Self {
        NetworkSpec {
            name: "tiny".into(),
            input: (1, 12, 12),
            input_pad: 0,
            layers: vec![
                LayerSpec::Conv(ConvSpec {
                    name: "conv".into(),
                    in_channels: 1,
                    filters: 4,
                    kernel: 5,
                    case_hint: None,
                    activation: true,
                }),
                LayerSpec::Pool(PoolSpec {
                    kind: PoolKind::Max,
                    size: 2,
                    stride: 2,
                }),
                fc("fc", 64, 10, false),
            ],
            activation_max: Some(1.0),
        }
    }

    /// Sets the pooling kind of every pooling layer.
    pub fn with_pooling(mut self, kind: PoolKind) -> Self {
        for l in &mut self.layers {
            if let LayerSpec::Pool(p) = l {
                p.kind = kind;
            }
        }
        self
    }

    /// Shape of the padded input.
    pub fn input_shape(&self) -> Shape {
        let (c, h, w) = self.input;
        Shape::Map {
            channels: c,
            height: h + 2 * self.input_pad,
            width: w + 2 * self.input_pad,
        }
    }

    /// Output shape of every layer, checking that neighbours compose.
    pub fn shapes(&self) -> Result<Vec<Shape>> {
        let mut shape = self.input_shape();
        let mut out = Vec::with_capacity(self.layers.len());
        let last = self.layers.len().saturating_sub(1);
        for (i, layer) in self.layers.iter().enumerate() {
            shape = match (layer, shape) {
                (LayerSpec::Conv(c), Shape::Map { channels, height, width }) => {
                    if channels != c.in_channels {
                        return Err(Error::Shape(format!(
                            "{}: expects {} channels, gets {channels}",
                            c.name, c.in_channels
                        )));
                    }
                    if !c.activation && i != last {
                        return Err(Error::Config(format!(
                            "{}: only the last layer may skip the activation",
                            c.name
                        )));
                    }
                    Shape::Map {
                        channels: c.filters,
                        height: conv_output_side(height, c.kernel)?,
                        width: conv_output_side(width, c.kernel)?,
                    }
                }
                (LayerSpec::Pool(p), Shape::Map { channels, height, width }) => {
                    let side = |n: usize| {
                        if p.size == 0 || p.stride == 0 || n < p.size || !(n - p.size).is_multiple_of(p.stride) {
                            Err(Error::Shape(format!(
                                "pooling {}/{} does not divide side {n}",
                                p.size, p.stride
                            )))
                        } else {
                            Ok((n - p.size) / p.stride + 1)
                        }
                    };
                    Shape::Map {
                        channels,
                        height: side(height)?,
                        width: side(width)?,
                    }
                }
                (LayerSpec::Fc(f), s) => {
                    if s.len() != f.in_dim {
                        return Err(Error::Shape(format!(
                            "{}: expects {} inputs, gets {}",
                            f.name,
                            f.in_dim,
                            s.len()
                        )));
                    }
                    if !f.activation && i != last {
                        return Err(Error::Config(format!(
                            "{}: only the last layer may skip the activation",
                            f.name
                        )));
                    }
                    Shape::Vector(f.out_dim)
                }
                (l, Shape::Vector(_)) => {
                    return Err(Error::Shape(format!(
                        "{l:?} cannot follow a fully connected layer"
                    )))
                }
            };
            out.push(shape);
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Config("network has no layers".into()));
        }
        self.shapes().map(|_| ())
    }

    pub fn output_dim(&self) -> Result<usize> {
        Ok(self.shapes()?.last().map_or(0, |s| s.len()))
    }

    /// Expected weight and bias dimensions per weighted layer.
    pub fn weight_dims(&self) -> Vec<(String, Vec<u32>, usize)> {
        self.layers
            .iter()
            .filter_map(|l| match l {
                LayerSpec::Conv(c) => Some((
                    c.name.clone(),
                    vec![c.filters as u32, c.in_channels as u32, c.kernel as u32, c.kernel as u32],
                    c.filters,
                )),
                LayerSpec::Fc(f) => Some((f.name.clone(), vec![f.out_dim as u32, f.in_dim as u32], f.out_dim)),
                LayerSpec::Pool(_) => None,
            })
            .collect()
    }
}

fn fc(name: &str, in_dim: usize, out_dim: usize, activation: bool) -> LayerSpec {
    LayerSpec::Fc(FcSpec {
        name: name.into(),
        in_dim,
        out_dim,
        activation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lenet_shapes() {
        let s = NetworkSpec::lenet5().shapes().unwrap();
        assert_eq!(
            s[0],
            Shape::Map {
                channels: 6,
                height: 28,
                width: 28
            }
        );
        assert_eq!(s[3].len(), 400);
        assert_eq!(*s.last().unwrap(), Shape::Vector(10));
        NetworkSpec::tiny().validate().unwrap();
    }

    #[test]
    fn mismatched_layers_are_rejected() {
        let mut n = NetworkSpec::lenet5();
        if let LayerSpec::Fc(f) = &mut n.layers[4] {
            f.in_dim = 399;
        }
        assert!(matches!(n.validate(), Err(Error::Shape(_))));
        let mut n = NetworkSpec::tiny();
        if let LayerSpec::Conv(c) = &mut n.layers[0] {
            c.activation = false;
        }
        assert!(matches!(n.validate(), Err(Error::Config(_))));
    }
}
