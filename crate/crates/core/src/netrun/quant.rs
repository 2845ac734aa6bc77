//! Whole-network weight quantization.

use std::fmt;
use std::str::FromStr;

use crate::bitcore::DatapathConfig;
use crate::error::{Error, Result};
use crate::psiq::{check_scale, quantize_tensor, round_saturate, PsiConfig, QuantizationReport};

use super::dnw::{LayerWeights, NetworkWeights, WeightKind};
use super::spec::{ConvSpec, FcSpec, LayerSpec, NetworkSpec, PoolSpec};

/// Fixed-point value of a full-scale input or activation.
pub const INPUT_SCALE: i64 = 255;

/// Arithmetic used for an evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum QuantMode {
    Fp32,
    /// Plain `bits`-bit integers (5 or 8).
    Int { bits: u8 },
    Psi(PsiConfig),
}

impl QuantMode {
    /// The five modes compared in the accuracy table.
    pub fn table_modes() -> [QuantMode; 5] {
        [
            QuantMode::Fp32,
            QuantMode::Int { bits: 8 },
            QuantMode::Int { bits: 5 },
            QuantMode::Psi(PsiConfig::five_two()),
            QuantMode::Psi(PsiConfig::eight_three()),
        ]
    }

    pub fn bit_width(self) -> Option<u8> {
        match self {
            QuantMode::Fp32 => None,
            QuantMode::Int { bits } => Some(bits),
            QuantMode::Psi(c) => Some(c.bit_width()),
        }
    }

    /// 16 for 5-bit weights, 64 for 8-bit weights.
    pub fn default_scale(self) -> Option<u32> {
        match self.bit_width()? {
            5 => Some(16),
            _ => Some(64),
        }
    }
}

impl fmt::Display for QuantMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            QuantMode::Fp32 => write!(f, "fp32"),
            QuantMode::Int { bits } => write!(f, "int{bits}"),
            QuantMode::Psi(c) => write!(f, "psi({},{})", c.bit_width(), c.max_terms()),
        }
    }
}

impl FromStr for QuantMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        match s.as_str() {
            "fp32" | "float" => return Ok(QuantMode::Fp32),
            "int8" => return Ok(QuantMode::Int { bits: 8 }),
            "int5" => return Ok(QuantMode::Int { bits: 5 }),
            _ => {}
        }
        let inner = s
            .strip_prefix("psi")
            .map(|r| r.trim_matches(|c| c == '(' || c == ')' || c == ':'))
            .ok_or_else(|| Error::Config(format!("unknown mode `{s}`")))?;
        let (b, t) = inner
            .split_once(',')
            .ok_or_else(|| Error::Config(format!("mode `{s}` should look like psi(5,2)")))?;
        let parse = |v: &str| {
            v.trim()
                .parse::<u8>()
                .map_err(|_| Error::Config(format!("bad number in mode `{s}`")))
        };
        Ok(QuantMode::Psi(PsiConfig::new(parse(b)?, parse(t)?)?))
    }
}

/// A layer with integer weights and pre-scaled bias.
#[derive(Clone, Debug, PartialEq)]
pub enum QuantLayer {
    Conv {
        spec: ConvSpec,
        /// `[filter][channel][row][col]`, realized integer values.
        weights: Vec<i32>,
        bias: Vec<i64>,
    },
    Pool(PoolSpec),
    Fc {
        spec: FcSpec,
        /// `[output][input]`
        weights: Vec<i32>,
        bias: Vec<i64>,
    },
}

#[derive(Clone, Debug)]
pub struct QuantizedNetwork {
    pub spec: NetworkSpec,
    pub mode: QuantMode,
    pub scale: u32,
    /// Right shift applied to hidden activations.
    pub shift: u32,
    pub datapath: DatapathConfig,
    pub layers: Vec<QuantLayer>,
    /// Decomposition reports of weighted layers (signed power-of-two modes).
    pub reports: Vec<(String, QuantizationReport)>,
}

fn bias_to_int(b: f32, scale: u32) -> i64 {
    let v = (f64::from(b) * f64::from(scale) * INPUT_SCALE as f64).round();
    v.clamp(f64::from(i32::MIN), f64::from(i32::MAX)) as i64
}

/// Options for [`quantize_network`].
#[derive(Clone, Copy, Debug, Default)]
pub struct QuantOptions {
    pub scale: Option<u32>,
    pub shift: Option<u32>,
    pub datapath: Option<DatapathConfig>,
}

/// Quantizes every weighted layer of `weights` for `mode`.
pub fn quantize_network(
    spec: &NetworkSpec,
    weights: &NetworkWeights,
    mode: QuantMode,
    options: QuantOptions,
) -> Result<QuantizedNetwork> {
    spec.validate()?;
    weights.validate(spec)?;
    let Some(bits) = mode.bit_width() else {
        return Err(Error::Config("fp32 has no integer form".into()));
    };
    let scale = options.scale.or(mode.default_scale()).expect("integer mode");
    let scale_shift = check_scale(scale)?;
    let shift = options.shift.unwrap_or(scale_shift);
    let datapath = options.datapath.unwrap_or_default().validate()?;

    let mut layers = Vec::with_capacity(spec.layers.len());
    let mut reports = Vec::new();
    let mut weighted = weights.layers.iter();
    for layer in &spec.layers {
        let mut next = || -> Result<(&LayerWeights, Vec<i32>, Vec<i64>)> {
            let lw = weighted.next().expect("validated layer count");
            let ints = match mode {
                QuantMode::Psi(c) => {
                    let (psis, report) = quantize_tensor(&lw.weights, scale, c.bit_width(), c.max_terms())?;
                    reports.push((lw.name.clone(), report));
                    psis.iter().map(|p| p.reconstruct()).collect()
                }
                _ => lw.weights.iter().map(|&w| round_saturate(w, scale, bits)).collect(),
            };
            let bias = lw.bias.iter().map(|&b| bias_to_int(b, scale)).collect();
            Ok((lw, ints, bias))
        };
        layers.push(match layer {
            LayerSpec::Conv(c) => {
                let (_, weights, bias) = next()?;
                QuantLayer::Conv {
                    spec: c.clone(),
                    weights,
                    bias,
                }
            }
            LayerSpec::Fc(f) => {
                let (_, weights, bias) = next()?;
                QuantLayer::Fc {
                    spec: f.clone(),
                    weights,
                    bias,
                }
            }
            LayerSpec::Pool(p) => QuantLayer::Pool(*p),
        });
    }
    Ok(QuantizedNetwork {
        spec: spec.clone(),
        mode,
        scale,
        shift,
        datapath,
        layers,
        reports,
    })
}

impl QuantizedNetwork {
    /// Float weights equal to `integer / scale`, so that quantizing them
    /// again with the same settings is lossless.
    pub fn dequantized(&self) -> NetworkWeights {
        let s = self.scale as f32;
        let inv = |v: i64, extra: f32| v as f32 / (s * extra);
        let layers = self
            .layers
            .iter()
            .filter_map(|l| match l {
                QuantLayer::Conv { spec, weights, bias } => Some(LayerWeights {
                    name: spec.name.clone(),
                    kind: WeightKind::Conv,
                    dims: vec![
                        spec.filters as u32,
                        spec.in_channels as u32,
                        spec.kernel as u32,
                        spec.kernel as u32,
                    ],
                    weights: weights.iter().map(|&w| inv(i64::from(w), 1.0)).collect(),
                    bias: bias.iter().map(|&b| inv(b, INPUT_SCALE as f32)).collect(),
                }),
                QuantLayer::Fc { spec, weights, bias } => Some(LayerWeights {
                    name: spec.name.clone(),
                    kind: WeightKind::Fc,
                    dims: vec![spec.out_dim as u32, spec.in_dim as u32],
                    weights: weights.iter().map(|&w| inv(i64::from(w), 1.0)).collect(),
                    bias: bias.iter().map(|&b| inv(b, INPUT_SCALE as f32)).collect(),
                }),
                QuantLayer::Pool(_) => None,
            })
            .collect();
        NetworkWeights { layers }
    }

    /// Weight and bias words held by the accelerator.
    pub fn parameter_count(&self) -> u64 {
        self.layers
            .iter()
            .map(|l| match l {
                QuantLayer::Conv { weights, bias, .. } | QuantLayer::Fc { weights, bias, .. } => {
                    (weights.len() + bias.len()) as u64
                }
                QuantLayer::Pool(_) => 0,
            })
            .sum()
    }
}
