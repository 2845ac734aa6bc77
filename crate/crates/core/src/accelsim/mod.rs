//! Four-tile system model: filter cases, sweep dataflow, layer execution and
//! cycle accounting.

pub mod case;
pub mod engine;
pub mod report;
pub mod state;
pub mod system;

pub use case::{configure, Combine, FilterCase, LaneSource, TileMapping, TILES};
pub use engine::{
    conv_layer_clocks, fc_layer_clocks, fc_steps, pool, relu, run_conv_layer, run_fc_layer,
    step_convolution, truncate_normalize, Activation, BusEvent, ClockHook, ClockOutputs, ClockRecord,
    ConvProgram, FcProgram, FC_NOMINAL_INPUT, FC_STEP_ELEMENTS,
};
pub use report::{CycleReport, DramCounts, LayerCycles, LayerKind, DEFAULT_CLOCK_MHZ};
pub use state::{AcceleratorState, DataflowCounters, StepKind};
pub use system::{schedule_clocks, Accelerator, DramPolicy, Inference};
