//! Clock-level execution of convolution and fully connected layers.

use std::fmt::Write as _;

use crate::bitcore::{tile_compute, DatapathConfig, TileInputs, TileOutput, TileWeights};
use crate::bitcore::{CHSUM_INPUTS, ELEMENT_LANES, TILE_LANES};
use crate::error::{Error, Result};
use crate::psiq::PsiWeight;
use crate::tensor::{Fmap, PoolKind};

use super::case::{configure, FilterCase, TileMapping, TILES};
use super::report::{LayerCycles, LayerKind};
use super::state::{AcceleratorState, DataflowCounters, StepKind};

/// Vector elements covered by one FC step (NT1 + NT2).
pub const FC_STEP_ELEMENTS: usize = 2 * TILE_LANES;
/// Longest FC input handled in the nominal two steps.
pub const FC_NOMINAL_INPUT: usize = 2 * FC_STEP_ELEMENTS;

/// A convolution layer in accelerator form.
#[derive(Clone, Debug)]
pub struct ConvProgram {
    pub name: String,
    pub filters: usize,
    pub channels: usize,
    pub kernel: usize,
    /// `[filter][channel][row][col]`
    pub weights: Vec<PsiWeight>,
    pub bias: Vec<i64>,
}

/// A fully connected layer in accelerator form.
#[derive(Clone, Debug)]
pub struct FcProgram {
    pub name: String,
    pub outputs: usize,
    pub inputs: usize,
    /// `[output][input]`
    pub weights: Vec<PsiWeight>,
    pub bias: Vec<i64>,
}

impl ConvProgram {
    pub fn validate(&self) -> Result<()> {
        let n = self.filters * self.channels * self.kernel * self.kernel;
        if self.weights.len() != n || self.bias.len() != self.filters {
            return Err(Error::Shape(format!(
                "{}: {} weights / {} biases for {}x{}x{}x{}",
                self.name,
                self.weights.len(),
                self.bias.len(),
                self.filters,
                self.channels,
                self.kernel,
                self.kernel
            )));
        }
        Ok(())
    }

    fn filter(&self, f: usize) -> &[PsiWeight] {
        let n = self.channels * self.kernel * self.kernel;
        &self.weights[f * n..(f + 1) * n]
    }
}

impl FcProgram {
    pub fn validate(&self) -> Result<()> {
        if self.weights.len() != self.outputs * self.inputs || self.bias.len() != self.outputs {
            return Err(Error::Shape(format!(
                "{}: {} weights / {} biases for {}x{}",
                self.name,
                self.weights.len(),
                self.bias.len(),
                self.outputs,
                self.inputs
            )));
        }
        Ok(())
    }
}

/// Post-processing applied to layer outputs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    /// ReLU, then `>> shift`, saturated to 8 bits.
    Truncate { shift: u32 },
    /// Raw accumulator values (final layer).
    Linear,
}

impl Activation {
    pub fn apply(self, v: i64) -> i64 {
        match self {
            Activation::Truncate { shift } => i64::from(truncate_normalize(v, shift)),
            Activation::Linear => v,
        }
    }
}

pub fn relu(v: i64) -> i64 {
    v.max(0)
}

/// ReLU, arithmetic right shift, saturation to `0..=255`.
pub fn truncate_normalize(v: i64, shift: u32) -> u8 {
    let shifted = if shift >= 63 { 0 } else { relu(v) >> shift };
    shifted.min(255) as u8
}

/// Pooling of an 8-bit feature map.
pub fn pool(fmap: &Fmap<u8>, kind: PoolKind, size: usize, stride: usize) -> Result<Fmap<u8>> {
    crate::tensor::pool2d(fmap, kind, size, stride)
}

/// How the X-bus was touched on a traced clock.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BusEvent {
    Reload,
    Column,
    /// Later pass over an unchanged window.
    Hold,
    /// FC step; the X-bus is not used.
    Vector,
}

/// One traced clock.
#[derive(Clone, Debug, PartialEq)]
pub struct ClockRecord {
    pub clock: u64,
    pub layer: String,
    pub group: usize,
    pub pass: usize,
    pub row: usize,
    pub col: usize,
    pub bus: BusEvent,
    pub head: usize,
    pub addr: usize,
    pub tiles: [i64; TILES],
    /// Combined outputs, present on the last pass of a position.
    pub outputs: Vec<i64>,
}

impl ClockRecord {
    pub fn to_line(&self) -> String {
        let bus = match self.bus {
            BusEvent::Reload => "reload",
            BusEvent::Column => "column",
            BusEvent::Hold => "hold",
            BusEvent::Vector => "vector",
        };
        let mut s = format!(
            "clk={} layer={} group={} pass={} pos={},{} bus={bus} head={} addr={} tiles={},{},{},{}",
            self.clock,
            self.layer,
            self.group,
            self.pass,
            self.row,
            self.col,
            self.head,
            self.addr,
            self.tiles[0],
            self.tiles[1],
            self.tiles[2],
            self.tiles[3]
        );
        if !self.outputs.is_empty() {
            s.push_str(" out=");
            for (i, v) in self.outputs.iter().enumerate() {
                if i > 0 {
                    s.push(',');
                }
                let _ = write!(s, "{v}");
            }
        }
        s
    }
}

/// Outputs of one window position.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClockOutputs {
    /// One combined value per filter slot.
    pub values: Vec<i64>,
    /// Final value of each tile register.
    pub tiles: [i64; TILES],
    pub width_events: u32,
}

fn gather(
    state: &AcceleratorState,
    mapping: &TileMapping,
    pass: usize,
    tile: usize,
) -> (TileInputs, TileWeights) {
    let mut x = [[0u8; ELEMENT_LANES]; CHSUM_INPUTS];
    let mut w = [[PsiWeight::zero(8); ELEMENT_LANES]; CHSUM_INPUTS];
    let channels = state.channels();
    let slots = state.filter_slots();
    for (e, lanes) in mapping.tile_lanes(pass, tile).iter().enumerate() {
        for (l, src) in lanes.iter().enumerate() {
            let Some(src) = src else { continue };
            let (ch, slot) = (src.channel as usize, src.slot as usize);
            if ch >= channels || slot >= slots {
                continue;
            }
            let (r, c) = (src.row as usize, src.col as usize);
            x[e][l] = state.x(ch, r, c);
            w[e][l] = state.w(slot, ch, r, c);
        }
    }
    (x, w)
}

/// Called once per clock with the pass index and raw tile outputs.
pub type ClockHook<'a> = &'a mut dyn FnMut(usize, &[i64; TILES], &AcceleratorState);

/// Computes every tile for the current window and combines them per the
/// mapping. Costs `acc_passes` clocks.
///
/// `bias` has one entry per filter slot and is injected into the first tile
/// of each combine group on the first pass.
pub fn step_convolution(
    state: &mut AcceleratorState,
    mapping: &TileMapping,
    bias: &[i64],
    config: &DatapathConfig,
    mut on_clock: Option<ClockHook<'_>>,
) -> Result<ClockOutputs> {
    if state.position().is_none() {
        return Err(Error::Contract("no window position: call sweep_step first".into()));
    }
    let groups = mapping.groups();
    if bias.len() != groups.len() {
        return Err(Error::Contract(format!(
            "{} biases for {} filter slots",
            bias.len(),
            groups.len()
        )));
    }
    let mut regs: [Option<TileOutput>; TILES] = [None; TILES];
    for pass in 0..mapping.passes() {
        for (slot, group) in groups.iter().enumerate() {
            for (i, &tile) in group.iter().enumerate() {
                let (x, w) = gather(state, mapping, pass, tile);
                let b = if pass == 0 && i == 0 { bias[slot] } else { 0 };
                let out = tile_compute(&x, &w, b, regs[tile].as_ref(), pass > 0, config)?;
                regs[tile] = Some(out);
            }
        }
        state.counters_mut().clocks += 1;
        if let Some(cb) = on_clock.as_mut() {
            let tiles = regs.map(|r| r.map_or(0, |o| o.value));
            cb(pass, &tiles, state);
        }
    }
    let tiles = regs.map(|r| r.map_or(0, |o| o.value));
    let width_events = regs.iter().flatten().map(|o| o.width_events).sum();
    state.counters_mut().width_events += u64::from(width_events);
    let values = groups
        .iter()
        .map(|g| g.iter().map(|&t| tiles[t]).sum())
        .collect();
    Ok(ClockOutputs {
        values,
        tiles,
        width_events,
    })
}

/// Clocks the sweep model charges for a convolution layer.
pub fn conv_layer_clocks(out_h: usize, out_w: usize, filters: usize, case: FilterCase) -> u64 {
    let groups = filters.div_ceil(case.filters_per_clock());
    (groups * out_h * out_w * case.acc_passes()) as u64
}

/// FC steps per output neuron.
pub fn fc_steps(inputs: usize) -> usize {
    inputs.div_ceil(FC_STEP_ELEMENTS).max(2)
}

/// Clocks the model charges for a fully connected layer.
pub fn fc_layer_clocks(outputs: usize, inputs: usize) -> u64 {
    (outputs * fc_steps(inputs)) as u64
}

/// Runs a whole convolution: filter groups outermost, then a row-major sweep.
///
/// Returns the post-processed output map (raw accumulators for
/// [`Activation::Linear`]).
pub fn run_conv_layer(
    layer: &ConvProgram,
    ifmap: &Fmap<u8>,
    case_hint: Option<FilterCase>,
    activation: Activation,
    config: &DatapathConfig,
    mut trace: Option<&mut Vec<ClockRecord>>,
    clock_base: u64,
) -> Result<(Fmap<i64>, LayerCycles)> {
    layer.validate()?;
    if ifmap.channels() != layer.channels {
        return Err(Error::Shape(format!(
            "{}: input has {} channels, filters expect {}",
            layer.name,
            ifmap.channels(),
            layer.channels
        )));
    }
    let case = FilterCase::select(layer.kernel, layer.channels, case_hint)?;
    let mapping = configure(case);
    let per_clock = case.filters_per_clock();
    let mut state = AcceleratorState::new(ifmap.clone(), layer.kernel)?;
    let (oh, ow) = state.output_dims();
    let mut ofmap = Fmap::zeros(layer.filters, oh, ow);
    let group_count = layer.filters.div_ceil(per_clock);

    for group in 0..group_count {
        let first = group * per_clock;
        let slots: Vec<Option<&[PsiWeight]>> = (first..first + per_clock)
            .map(|f| (f < layer.filters).then(|| layer.filter(f)))
            .collect();
        let bias: Vec<i64> = (first..first + per_clock)
            .map(|f| layer.bias.get(f).copied().unwrap_or(0))
            .collect();
        state.load_filters(&slots)?;
        while state.has_next() {
            let kind = state.sweep_step()?;
            let (row, col) = state.position().expect("stepped");
            let out = match trace.as_deref_mut() {
                Some(records) => {
                    let mut pending = Vec::new();
                    let mut cb = |pass: usize, tiles: &[i64; TILES], st: &AcceleratorState| {
                        let bus = match (pass, kind) {
                            (0, StepKind::RowStart) => BusEvent::Reload,
                            (0, StepKind::MidRow) => BusEvent::Column,
                            _ => BusEvent::Hold,
                        };
                        pending.push(ClockRecord {
                            clock: clock_base + st.counters().clocks,
                            layer: layer.name.clone(),
                            group,
                            pass,
                            row,
                            col,
                            bus,
                            head: st.head(),
                            addr: st.addr(),
                            tiles: *tiles,
                            outputs: Vec::new(),
                        });
                    };
                    let out = step_convolution(&mut state, &mapping, &bias, config, Some(&mut cb))?;
                    if let Some(last) = pending.last_mut() {
                        last.outputs = out.values[..per_clock.min(layer.filters - first)].to_vec();
                    }
                    records.extend(pending);
                    out
                }
                None => step_convolution(&mut state, &mapping, &bias, config, None)?,
            };
            for (slot, &v) in out.values.iter().enumerate() {
                let f = first + slot;
                if f < layer.filters {
                    ofmap.set(f, row, col, activation.apply(v));
                }
            }
        }
    }

    let counters = *state.counters();
    Ok((
        ofmap,
        LayerCycles {
            name: layer.name.clone(),
            kind: LayerKind::Conv,
            case: Some(case),
            filter_groups: group_count as u64,
            passes: case.acc_passes() as u64,
            counters,
        },
    ))
}

/// Runs a fully connected layer on NT1 and NT2.
///
/// The vector sits in the input registers as consecutive 5x5 channel planes,
/// so element `i` lands in step `i / 400`, tile `(i % 400) / 200`, element
/// `(i % 200) / 25`, lane `i % 25`. Each step accumulates into the tile
/// registers through ACC_SEL; the last step adds NT1 and NT2.
pub fn run_fc_layer(
    layer: &FcProgram,
    input: &[u8],
    activation: Activation,
    config: &DatapathConfig,
    mut trace: Option<&mut Vec<ClockRecord>>,
    clock_base: u64,
) -> Result<(Vec<i64>, LayerCycles)> {
    layer.validate()?;
    if input.len() != layer.inputs {
        return Err(Error::Shape(format!(
            "{}: vector of {} for {} inputs",
            layer.name,
            input.len(),
            layer.inputs
        )));
    }
    let steps = fc_steps(layer.inputs);
    let mut counters = DataflowCounters::default();
    let mut outputs = Vec::with_capacity(layer.outputs);

    for neuron in 0..layer.outputs {
        let row = &layer.weights[neuron * layer.inputs..(neuron + 1) * layer.inputs];
        let mut regs: [Option<TileOutput>; 2] = [None; 2];
        for step in 0..steps {
            for (tile, reg) in regs.iter_mut().enumerate() {
                let mut x = [[0u8; ELEMENT_LANES]; CHSUM_INPUTS];
                let mut w = [[PsiWeight::zero(8); ELEMENT_LANES]; CHSUM_INPUTS];
                let base = step * FC_STEP_ELEMENTS + tile * TILE_LANES;
                for e in 0..CHSUM_INPUTS {
                    for l in 0..ELEMENT_LANES {
                        let i = base + e * ELEMENT_LANES + l;
                        if i < layer.inputs {
                            x[e][l] = input[i];
                            w[e][l] = row[i];
                        }
                    }
                }
                let b = if step == 0 && tile == 0 { layer.bias[neuron] } else { 0 };
                *reg = Some(tile_compute(&x, &w, b, reg.as_ref(), step > 0, config)?);
            }
            counters.clocks += 1;
            counters.fc_steps += 1;
            if let Some(records) = trace.as_deref_mut() {
                let t = regs.map(|r| r.map_or(0, |o| o.value));
                records.push(ClockRecord {
                    clock: clock_base + counters.clocks,
                    layer: layer.name.clone(),
                    group: neuron,
                    pass: step,
                    row: 0,
                    col: 0,
                    bus: BusEvent::Vector,
                    head: 0,
                    addr: step * FC_STEP_ELEMENTS,
                    tiles: [t[0], t[1], 0, 0],
                    outputs: if step + 1 == steps {
                        vec![t[0] + t[1]]
                    } else {
                        Vec::new()
                    },
                });
            }
        }
        let [a, b] = regs.map(|r| r.expect("at least two steps"));
        counters.width_events += u64::from(a.width_events + b.width_events);
        outputs.push(activation.apply(a.value + b.value));
    }

    Ok((
        outputs,
        LayerCycles {
            name: layer.name.clone(),
            kind: LayerKind::Fc,
            case: None,
            filter_groups: layer.outputs as u64,
            passes: steps as u64,
            counters,
        },
    ))
}
