//! Bit-exact models of the arithmetic datapath.

pub mod mbs;
pub mod moa;
pub mod tile;

pub use mbs::{mbs_multiply, PartialProducts};
pub use moa::{
    carry_save_sum, carry_save_sum_traced, compression_schedule, correction_stage, moa_chsum,
    moa_chsum_traced, moa_psum, sign_extension_correction, DatapathConfig, MoaOutcome, MoaWidths,
    ReductionTrace, StageRecord, WidthEvent, CHSUM_INPUTS, ELEMENT_LANES, PSUM_OPERANDS,
};
pub use tile::{
    neural_element, neural_element_outcome, tile_compute, TileInputs, TileOutput, TileWeights,
    TILE_LANES,
};
