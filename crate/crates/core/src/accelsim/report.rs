//! Cycle and memory-access accounting.

use std::fmt::Write as _;

use super::case::FilterCase;
use super::state::DataflowCounters;

/// Clock frequency used for derived timings, in MHz.
pub const DEFAULT_CLOCK_MHZ: f64 = 25.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Conv,
    Pool,
    Fc,
}

impl LayerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LayerKind::Conv => "conv",
            LayerKind::Pool => "pool",
            LayerKind::Fc => "fc",
        }
    }
}

/// Counters of one executed layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerCycles {
    pub name: String,
    pub kind: LayerKind,
    pub case: Option<FilterCase>,
    /// Filter groups for convolutions, neurons for FC layers.
    pub filter_groups: u64,
    /// Clocks per window position (conv) or per neuron (FC).
    pub passes: u64,
    pub counters: DataflowCounters,
}

/// DRAM word transfers. Latency and bandwidth are not modelled.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct DramCounts {
    pub weight_reads: u64,
    pub input_reads: u64,
    pub intermediate_writes: u64,
    pub intermediate_reads: u64,
    pub output_writes: u64,
}

impl DramCounts {
    pub fn reads(&self) -> u64 {
        self.weight_reads + self.input_reads + self.intermediate_reads
    }

    pub fn writes(&self) -> u64 {
        self.intermediate_writes + self.output_writes
    }

    pub fn total(&self) -> u64 {
        self.reads() + self.writes()
    }

    pub fn add(&mut self, o: &DramCounts) {
        self.weight_reads += o.weight_reads;
        self.input_reads += o.input_reads;
        self.intermediate_writes += o.intermediate_writes;
        self.intermediate_reads += o.intermediate_reads;
        self.output_writes += o.output_writes;
    }
}

/// Per-layer and total clock counts of an inference.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CycleReport {
    pub layers: Vec<LayerCycles>,
    pub dram: DramCounts,
}

impl CycleReport {
    pub fn total_clocks(&self) -> u64 {
        self.layers.iter().map(|l| l.counters.clocks).sum()
    }

    /// Sum of every layer's counters.
    pub fn totals(&self) -> DataflowCounters {
        let mut t = DataflowCounters::default();
        for l in &self.layers {
            t.add(&l.counters);
        }
        t
    }

    pub fn clocks_of(&self, kind: LayerKind) -> u64 {
        self.layers
            .iter()
            .filter(|l| l.kind == kind)
            .map(|l| l.counters.clocks)
            .sum()
    }

    pub fn latency_us(&self, clock_mhz: f64) -> f64 {
        self.total_clocks() as f64 / clock_mhz
    }

    pub fn frames_per_second(&self, clock_mhz: f64) -> f64 {
        clock_mhz * 1e6 / self.total_clocks() as f64
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<8} {:<5} {:<8} {:>7} {:>6} {:>9} {:>8} {:>8} {:>9}",
            "layer", "kind", "case", "clocks", "passes", "positions", "reloads", "columns", "rotations"
        );
        for l in &self.layers {
            let case = l.case.map_or("-".to_string(), |c| format!("case{}", c.number()));
            let c = &l.counters;
            let _ = writeln!(
                s,
                "{:<8} {:<5} {:<8} {:>7} {:>6} {:>9} {:>8} {:>8} {:>9}",
                l.name,
                l.kind.as_str(),
                case,
                c.clocks,
                l.passes,
                c.positions,
                c.xbus_full_reloads,
                c.xbus_column_updates,
                c.wbank_rotations
            );
        }
        let t = self.totals();
        let _ = writeln!(
            s,
            "{:<8} {:<5} {:<8} {:>7} {:>6} {:>9} {:>8} {:>8} {:>9}",
            "total", "", "", t.clocks, "", t.positions, t.xbus_full_reloads, t.xbus_column_updates, t.wbank_rotations
        );
        s
    }

    /// `key=value` lines for scripts.
    pub fn to_key_values(&self) -> String {
        let mut s = String::new();
        for l in &self.layers {
            let _ = writeln!(s, "layer.{}.clocks={}", l.name, l.counters.clocks);
        }
        let t = self.totals();
        let _ = writeln!(s, "total_clocks={}", t.clocks);
        let _ = writeln!(s, "conv_clocks={}", self.clocks_of(LayerKind::Conv));
        let _ = writeln!(s, "fc_clocks={}", self.clocks_of(LayerKind::Fc));
        let _ = writeln!(s, "xbus_column_updates={}", t.xbus_column_updates);
        let _ = writeln!(s, "xbus_full_reloads={}", t.xbus_full_reloads);
        let _ = writeln!(s, "wbank_rotations={}", t.wbank_rotations);
        let _ = writeln!(s, "width_events={}", t.width_events);
        let _ = writeln!(s, "dram_reads={}", self.dram.reads());
        let _ = writeln!(s, "dram_writes={}", self.dram.writes());
        let _ = writeln!(s, "dram_intermediate_writes={}", self.dram.intermediate_writes);
        let _ = writeln!(s, "latency_us={:.2}", self.latency_us(DEFAULT_CLOCK_MHZ));
        let _ = writeln!(s, "frames_per_second={:.0}", self.frames_per_second(DEFAULT_CLOCK_MHZ));
        s
    }
}
