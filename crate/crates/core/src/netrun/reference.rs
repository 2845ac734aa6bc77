//! Plain forward passes used as oracles: floating point, and integer with
//! the accelerator's post-processing.

use num_traits::Float;

use crate::accelsim::truncate_normalize;
use crate::error::{Error, Result};
use crate::tensor::{conv2d_valid, dense, pool2d, Fmap, Scalar};

use super::dnw::NetworkWeights;
use super::quant::{QuantLayer, QuantizedNetwork};
use super::spec::{LayerSpec, NetworkSpec, PoolSpec};

#[derive(Clone, Debug)]
enum FloatLayer<T> {
    Conv {
        filters: usize,
        kernel: usize,
        activation: bool,
        weights: Vec<T>,
        bias: Vec<T>,
    },
    Pool(PoolSpec),
    Fc {
        activation: bool,
        weights: Vec<T>,
        bias: Vec<T>,
    },
}

/// Floating-point network in scalar type `T`.
#[derive(Clone, Debug)]
pub struct FloatNetwork<T> {
    spec: NetworkSpec,
    layers: Vec<FloatLayer<T>>,
}

impl<T: Float + Scalar> FloatNetwork<T> {
    pub fn new(spec: &NetworkSpec, weights: &NetworkWeights) -> Result<Self> {
        spec.validate()?;
        weights.validate(spec)?;
        let cast = |v: &[f32]| -> Vec<T> { v.iter().map(|&x| T::from(x).expect("f32 fits")).collect() };
        let mut weighted = weights.layers.iter();
        let layers = spec
            .layers
            .iter()
            .map(|l| match l {
                LayerSpec::Conv(c) => {
                    let w = weighted.next().expect("validated");
                    FloatLayer::Conv {
                        filters: c.filters,
                        kernel: c.kernel,
                        activation: c.activation,
                        weights: cast(&w.weights),
                        bias: cast(&w.bias),
                    }
                }
                LayerSpec::Fc(f) => {
                    let w = weighted.next().expect("validated");
                    FloatLayer::Fc {
                        activation: f.activation,
                        weights: cast(&w.weights),
                        bias: cast(&w.bias),
                    }
                }
                LayerSpec::Pool(p) => FloatLayer::Pool(*p),
            })
            .collect();
        Ok(FloatNetwork {
            spec: spec.clone(),
            layers,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }
}

fn input_map<T: Copy + num_traits::Zero>(spec: &NetworkSpec, image: &[u8], f: impl Fn(u8) -> T) -> Result<Fmap<T>> {
    let (c, h, w) = spec.input;
    if image.len() != c * h * w {
        return Err(Error::Shape(format!(
            "image has {} pixels, {} expects {c}x{h}x{w}",
            image.len(),
            spec.name
        )));
    }
    Ok(Fmap::from_vec(c, h, w, image.iter().map(|&p| f(p)).collect())?.padded(spec.input_pad))
}

enum Value<T> {
    Map(Fmap<T>),
    Vector(Vec<T>),
}

impl<T: Copy> Value<T> {
    fn into_vec(self) -> Vec<T> {
        match self {
            Value::Map(m) => m.into_vec(),
            Value::Vector(v) => v,
        }
    }

    fn map_ref(&self) -> Result<&Fmap<T>> {
        match self {
            Value::Map(m) => Ok(m),
            Value::Vector(_) => Err(Error::Shape("layer needs a feature map".into())),
        }
    }
}

/// FP forward pass; pixels are scaled to `[0, 1]`.
pub fn reference_float_inference<T: Float + Scalar>(net: &FloatNetwork<T>, image: &[u8]) -> Result<Vec<T>> {
    let spec = &net.spec;
    let full = T::from(255.0).expect("255 fits");
    let top = spec.activation_max.map(|m| T::from(m).expect("f32 fits"));
    let act = |v: T| {
        let v = v.max(T::zero());
        match top {
            Some(m) => v.min(m),
            None => v,
        }
    };
    let mut x = Value::Map(input_map(spec, image, |p| T::from(p).expect("u8 fits") / full)?);
    for layer in &net.layers {
        x = match layer {
            FloatLayer::Conv {
                filters,
                kernel,
                activation,
                weights,
                bias,
            } => {
                let out = conv2d_valid(x.map_ref()?, weights, bias, *filters, *kernel)?;
                Value::Map(if *activation { out.map(act) } else { out })
            }
            FloatLayer::Pool(p) => Value::Map(pool2d(x.map_ref()?, p.kind, p.size, p.stride)?),
            FloatLayer::Fc {
                activation,
                weights,
                bias,
            } => {
                let out = dense(&x.into_vec(), weights, bias)?;
                Value::Vector(if *activation { out.into_iter().map(act).collect() } else { out })
            }
        };
    }
    Ok(x.into_vec())
}

/// Result of the integer oracle.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IntInference {
    pub logits: Vec<i64>,
    /// Pre-activation values outside the datapath's accumulator range; the
    /// oracle keeps them exact in 64 bits.
    pub wide_values: usize,
}

/// Integer forward pass with ReLU, truncation and 8-bit saturation on every
/// hidden layer.
pub fn reference_int_inference(net: &QuantizedNetwork, image: &[u8]) -> Result<IntInference> {
    let half = 1i64 << (net.datapath.acc_width - 1);
    let wide = std::cell::Cell::new(0usize);
    let post = |v: i64, activation: bool| {
        if v < -half || v >= half {
            wide.set(wide.get() + 1);
        }
        if activation {
            i64::from(truncate_normalize(v, net.shift))
        } else {
            v
        }
    };
    let mut x = Value::Map(input_map(&net.spec, image, i64::from)?);
    for layer in &net.layers {
        x = match layer {
            QuantLayer::Conv { spec, weights, bias } => {
                let w: Vec<i64> = weights.iter().map(|&v| i64::from(v)).collect();
                let out = conv2d_valid(x.map_ref()?, &w, bias, spec.filters, spec.kernel)?;
                Value::Map(out.map(|v| post(v, spec.activation)))
            }
            QuantLayer::Pool(p) => Value::Map(pool2d(x.map_ref()?, p.kind, p.size, p.stride)?),
            QuantLayer::Fc { spec, weights, bias } => {
                let w: Vec<i64> = weights.iter().map(|&v| i64::from(v)).collect();
                let out = dense(&x.into_vec(), &w, bias)?;
                Value::Vector(out.into_iter().map(|v| post(v, spec.activation)).collect())
            }
        };
    }
    Ok(IntInference {
        logits: x.into_vec(),
        wide_values: wide.get(),
    })
}

/// Index of the largest value; the first one wins a tie.
pub fn argmax<T: PartialOrd + Copy>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netrun::dnw::{LayerWeights, WeightKind};
    use crate::netrun::spec::FcSpec;

    fn toy_spec() -> NetworkSpec {
        NetworkSpec {
            name: "toy".into(),
            input: (1, 1, 2),
            input_pad: 0,
            layers: vec![
                LayerSpec::Fc(FcSpec {
                    name: "h".into(),
                    in_dim: 2,
                    out_dim: 2,
                    activation: true,
                }),
                LayerSpec::Fc(FcSpec {
                    name: "o".into(),
                    in_dim: 2,
                    out_dim: 2,
                    activation: false,
                }),
            ],
            activation_max: None,
        }
    }

    fn toy_weights() -> NetworkWeights {
        NetworkWeights {
            layers: vec![
                LayerWeights {
                    name: "h".into(),
                    kind: WeightKind::Fc,
                    dims: vec![2, 2],
                    weights: vec![1.0, -1.0, 0.5, 0.5],
                    bias: vec![0.0, -0.25],
                },
                LayerWeights {
                    name: "o".into(),
                    kind: WeightKind::Fc,
                    dims: vec![2, 2],
                    weights: vec![2.0, 0.0, -1.0, 4.0],
                    bias: vec![0.1, 0.0],
                },
            ],
        }
    }

    #[test]
    fn toy_network_by_hand() {
        let net = FloatNetwork::<f64>::new(&toy_spec(), &toy_weights()).unwrap();
        // x = (1, 0.2); h = relu(0.8, 0.35); o = (1.7, -0.8 + 1.4)
        let out = reference_float_inference(&net, &[255, 51]).unwrap();
        assert!((out[0] - 1.7).abs() < 1e-6);
        assert!((out[1] - 0.6).abs() < 1e-6);
        assert_eq!(argmax(&out), 0);
    }

    #[test]
    fn zero_image_and_weights_give_bias() {
        let mut w = toy_weights();
        for l in &mut w.layers {
            l.weights.iter_mut().for_each(|v| *v = 0.0);
        }
        let net = FloatNetwork::<f32>::new(&toy_spec(), &w).unwrap();
        let out = reference_float_inference(&net, &[0, 0]).unwrap();
        assert_eq!(out, vec![0.1, 0.0]);
        assert!(reference_float_inference(&net, &[0]).is_err());
    }

    #[test]
    fn argmax_prefers_first() {
        assert_eq!(argmax(&[1, 3, 3]), 1);
        assert_eq!(argmax(&[-1.0, -2.0]), 0);
    }
}
