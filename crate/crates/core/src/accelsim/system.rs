//! Whole-network execution on the four-tile system.

use crate::bitcore::DatapathConfig;
use crate::error::{Error, Result};
use crate::netrun::{NetworkSpec, QuantLayer, QuantizedNetwork, LayerSpec, Shape};
use crate::psiq::{Codebook, PsiConfig, PsiWeight, MAX_TERMS};
use crate::tensor::Fmap;

use super::case::FilterCase;
use super::engine::{
    conv_layer_clocks, fc_layer_clocks, run_conv_layer, run_fc_layer, Activation, ClockRecord,
    ConvProgram, FcProgram,
};
use super::report::{CycleReport, DramCounts, LayerCycles, LayerKind};
use super::state::DataflowCounters;
use crate::netrun::PoolSpec;

/// When weights and activations travel to and from DRAM.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum DramPolicy {
    /// Weights loaded once per session; activations stay on chip.
    #[default]
    Reuse,
    /// Weights reloaded for every inference and every layer output
    /// written out and read back.
    NoReuse,
}

#[derive(Clone, Debug)]
enum Stage {
    Conv {
        program: ConvProgram,
        hint: Option<FilterCase>,
        activation: Activation,
    },
    Pool(PoolSpec),
    Fc {
        program: FcProgram,
        activation: Activation,
    },
}

/// One inference on the accelerator.
#[derive(Clone, Debug)]
pub struct Inference {
    pub logits: Vec<i64>,
    pub report: CycleReport,
    /// Per-clock records, empty unless tracing is on.
    pub trace: Vec<ClockRecord>,
}

/// A quantized network loaded into the accelerator, plus session state.
#[derive(Clone, Debug)]
pub struct Accelerator {
    spec: NetworkSpec,
    stages: Vec<Stage>,
    datapath: DatapathConfig,
    policy: DramPolicy,
    tracing: bool,
    weights_resident: bool,
    inferences: u64,
    session_dram: DramCounts,
    session_counters: DataflowCounters,
}

fn to_psi(values: &[i32], book: &Codebook, layer: &str) -> Result<Vec<PsiWeight>> {
    values
        .iter()
        .map(|&v| {
            if book.contains(v) {
                book.decompose(v)
            } else {
                Err(Error::Config(format!(
                    "{layer}: weight {v} needs more than {MAX_TERMS} shift terms"
                )))
            }
        })
        .collect()
}

impl Accelerator {
    /// Converts every weight to its shift-term form. Plain 8-bit integer
    /// weights that need four terms are rejected.
    pub fn new(net: &QuantizedNetwork) -> Result<Self> {
        let bits = net
            .mode
            .bit_width()
            .ok_or_else(|| Error::Config("the accelerator needs integer weights".into()))?;
        let book = Codebook::new(PsiConfig::new(bits, MAX_TERMS as u8)?);
        let hidden = Activation::Truncate { shift: net.shift };
        let act = |on: bool| if on { hidden } else { Activation::Linear };
        let stages = net
            .layers
            .iter()
            .map(|l| {
                Ok(match l {
                    QuantLayer::Conv { spec, weights, bias } => Stage::Conv {
                        program: ConvProgram {
                            name: spec.name.clone(),
                            filters: spec.filters,
                            channels: spec.in_channels,
                            kernel: spec.kernel,
                            weights: to_psi(weights, &book, &spec.name)?,
                            bias: bias.clone(),
                        },
                        hint: spec.case_hint,
                        activation: act(spec.activation),
                    },
                    QuantLayer::Fc { spec, weights, bias } => Stage::Fc {
                        program: FcProgram {
                            name: spec.name.clone(),
                            outputs: spec.out_dim,
                            inputs: spec.in_dim,
                            weights: to_psi(weights, &book, &spec.name)?,
                            bias: bias.clone(),
                        },
                        activation: act(spec.activation),
                    },
                    QuantLayer::Pool(p) => Stage::Pool(*p),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Accelerator {
            spec: net.spec.clone(),
            stages,
            datapath: net.datapath,
            policy: DramPolicy::Reuse,
            tracing: false,
            weights_resident: false,
            inferences: 0,
            session_dram: DramCounts::default(),
            session_counters: DataflowCounters::default(),
        })
    }

    pub fn with_policy(mut self, policy: DramPolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn with_trace(mut self, on: bool) -> Self {
        self.tracing = on;
        self
    }

    pub fn with_datapath(mut self, datapath: DatapathConfig) -> Self {
        self.datapath = datapath;
        self
    }

    /// Weight and bias words of every layer.
    pub fn weight_words(&self) -> u64 {
        self.stages
            .iter()
            .map(|s| match s {
                Stage::Conv { program, .. } => (program.weights.len() + program.bias.len()) as u64,
                Stage::Fc { program, .. } => (program.weights.len() + program.bias.len()) as u64,
                Stage::Pool(_) => 0,
            })
            .sum()
    }

    pub fn inferences(&self) -> u64 {
        self.inferences
    }

    /// DRAM traffic accumulated over the session.
    pub fn dram_access_report(&self) -> DramCounts {
        self.session_dram
    }

    /// Dataflow counters accumulated over the session.
    pub fn session_counters(&self) -> DataflowCounters {
        self.session_counters
    }

    /// Runs one image through every layer.
    pub fn infer(&mut self, image: &[u8]) -> Result<Inference> {
        let (c, h, w) = self.spec.input;
        if image.len() != c * h * w {
            return Err(Error::Shape(format!(
                "image has {} pixels, {} expects {c}x{h}x{w}",
                image.len(),
                self.spec.name
            )));
        }
        let mut dram = DramCounts::default();
        let load_weights = match self.policy {
            DramPolicy::Reuse => !self.weights_resident,
            DramPolicy::NoReuse => true,
        };
        if load_weights {
            dram.weight_reads = self.weight_words();
        }
        dram.input_reads = image.len() as u64;

        let mut fmap = Fmap::from_vec(c, h, w, image.to_vec())?.padded(self.spec.input_pad);
        let mut vector: Option<Vec<i64>> = None;
        let mut layers = Vec::new();
        let mut trace = Vec::new();
        let mut clock = 0u64;
        let last = self.stages.len() - 1;
        let mut pools = 0;

        for (i, stage) in self.stages.iter().enumerate() {
            let sink = self.tracing.then_some(&mut trace);
            let out_len;
            match stage {
                Stage::Conv {
                    program,
                    hint,
                    activation,
                } => {
                    let (out, cycles) =
                        run_conv_layer(program, &fmap, *hint, *activation, &self.datapath, sink, clock)?;
                    clock += cycles.counters.clocks;
                    out_len = out.len();
                    if i == last {
                        vector = Some(out.into_vec());
                    } else {
                        fmap = out.map(|v| v as u8);
                    }
                    layers.push(cycles);
                }
                Stage::Pool(p) => {
                    fmap = super::engine::pool(&fmap, p.kind, p.size, p.stride)?;
                    out_len = fmap.len();
                    pools += 1;
                    layers.push(LayerCycles {
                        name: format!("pool{pools}"),
                        kind: LayerKind::Pool,
                        case: None,
                        filter_groups: 0,
                        passes: 0,
                        counters: DataflowCounters::default(),
                    });
                }
                Stage::Fc { program, activation } => {
                    let input: Vec<u8> = match vector.take() {
                        Some(v) => v.into_iter().map(|x| x as u8).collect(),
                        None => fmap.as_slice().to_vec(),
                    };
                    let (out, cycles) = run_fc_layer(program, &input, *activation, &self.datapath, sink, clock)?;
                    clock += cycles.counters.clocks;
                    out_len = out.len();
                    vector = Some(out);
                    layers.push(cycles);
                }
            }
            if i != last && self.policy == DramPolicy::NoReuse {
                dram.intermediate_writes += out_len as u64;
                dram.intermediate_reads += out_len as u64;
            }
        }
        let logits = vector.unwrap_or_else(|| fmap.as_slice().iter().map(|&v| i64::from(v)).collect());
        dram.output_writes = logits.len() as u64;

        self.weights_resident = true;
        self.inferences += 1;
        self.session_dram.add(&dram);
        let report = CycleReport { layers, dram };
        self.session_counters.add(&report.totals());
        Ok(Inference { logits, report, trace })
    }
}

/// Clocks per layer predicted by the schedule, without running anything.
pub fn schedule_clocks(spec: &NetworkSpec) -> Result<Vec<(String, u64)>> {
    let shapes = spec.shapes()?;
    let mut prev = spec.input_shape();
    let mut out = Vec::new();
    for (layer, &shape) in spec.layers.iter().zip(&shapes) {
        match (layer, shape) {
            (LayerSpec::Conv(c), Shape::Map { height, width, .. }) => {
                let case = FilterCase::select(c.kernel, c.in_channels, c.case_hint)?;
                out.push((c.name.clone(), conv_layer_clocks(height, width, c.filters, case)));
            }
            (LayerSpec::Fc(f), _) => out.push((f.name.clone(), fc_layer_clocks(f.out_dim, prev.len()))),
            _ => {}
        }
        prev = shape;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lenet_schedule() {
        let s = schedule_clocks(&NetworkSpec::lenet5()).unwrap();
        let clocks: Vec<u64> = s.iter().map(|(_, c)| *c).collect();
        assert_eq!(clocks, vec![1568, 400, 240, 168, 20]);
    }
}
