//! Network description, weight and dataset files, reference inference and
//! accuracy evaluation.

pub mod dnw;
pub mod eval;
pub mod mnist;
pub mod quant;
pub mod reference;
pub mod spec;

pub use dnw::{load_weights, LayerWeights, NetworkWeights, WeightKind};
pub use eval::{evaluate, evaluate_with, Engine, EvalOptions, EvalReport};
pub use mnist::{load_mnist, load_mnist_test, parse_idx_images, parse_idx_labels, Dataset};
pub use quant::{quantize_network, QuantLayer, QuantMode, QuantOptions, QuantizedNetwork, INPUT_SCALE};
pub use reference::{argmax, reference_float_inference, reference_int_inference, FloatNetwork, IntInference};
pub use spec::{ConvSpec, FcSpec, LayerSpec, NetworkSpec, PoolSpec, Shape};
