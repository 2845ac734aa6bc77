//! Bit-accurate model of a CNN inference accelerator built from barrel-shift
//! multipliers and carry-save multi-operand adders.
//!
//! * [`psiq`]: signed power-of-two weight decomposition and quantization.
//! * [`bitcore`]: MBS multiplier, MOA(PSUM)/MOA(CHSUM), neural element, tile.
//! * [`accelsim`]: four-tile system simulator, dataflow and cycle accounting.
//! * [`netrun`]: network description, weight/dataset files, reference
//!   inference and accuracy evaluation.
//! * [`hwcost`]: static gate-count and critical-path model.
//! * [`tensor`]: feature maps and plain layer operations, generic over the
//!   scalar type.

pub mod accelsim;
pub mod bitcore;
pub mod error;
pub mod hwcost;
pub mod netrun;
pub mod psiq;
pub mod tensor;

pub use error::{Error, Result};

/// Exact rational used for quantization error bounds.
pub type Rational = num_rational::Ratio<i64>;
/// 8-bit activation map as held in the input registers.
pub type FmapU8 = tensor::Fmap<u8>;
/// Wide integer map of the integer oracle.
pub type FmapI64 = tensor::Fmap<i64>;
pub type FmapF32 = tensor::Fmap<f32>;
pub type FmapF64 = tensor::Fmap<f64>;
/// Single-precision float reference network.
pub type FloatNetwork32 = netrun::FloatNetwork<f32>;
/// Double-precision float reference network.
pub type FloatNetwork64 = netrun::FloatNetwork<f64>;
