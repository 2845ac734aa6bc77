//! Static gate-count and critical-path model.
//!
//! Costs are counted structurally from the same compression schedule the
//! functional adders use. Gate counts are two-input-NAND equivalents and
//! delays are in gate delays; both come from a [`GateLibrary`].

use std::fmt::{self, Write as _};

use crate::error::{Error, Result};

/// Cost and delay of one library cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Cell {
    pub gates: u64,
    pub delay: u64,
}

impl Cell {
    pub const fn new(gates: u64, delay: u64) -> Self {
        Cell { gates, delay }
    }
}

/// Cells the model is built from.
///
/// A carry-lookahead adder of `w` bits is `ceil(w/4)` lookahead groups; its
/// delay is one XOR for propagate/generate, one `cla_group` delay per
/// lookahead level (`ceil(log4 w)` levels), and one XOR for the sum.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GateLibrary {
    pub full_adder: Cell,
    pub half_adder: Cell,
    pub mux2: Cell,
    pub inverter: Cell,
    pub and2: Cell,
    pub xor2: Cell,
    /// One 4-bit lookahead group.
    pub cla_group: Cell,
}

impl Default for GateLibrary {
    fn default() -> Self {
        GateLibrary {
            full_adder: Cell::new(9, 2),
            half_adder: Cell::new(5, 1),
            mux2: Cell::new(3, 1),
            inverter: Cell::new(1, 1),
            and2: Cell::new(2, 1),
            xor2: Cell::new(4, 1),
            cla_group: Cell::new(60, 2),
        }
    }
}

impl GateLibrary {
    /// Overrides defaults from `key=value` lines such as `fa.gates=9` or
    /// `cla_group.delay=2`. Blank lines and `#` comments are ignored.
    pub fn from_key_values(text: &str) -> Result<Self> {
        let mut lib = GateLibrary::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = || Error::Config(format!("gate library line {}: `{raw}`", n + 1));
            let (key, value) = line.split_once('=').ok_or_else(bad)?;
            let value: u64 = value.trim().parse().map_err(|_| bad())?;
            if value == 0 {
                return Err(Error::Config(format!(
                    "gate library line {}: costs and delays must be positive",
                    n + 1
                )));
            }
            let (cell, field) = key.trim().split_once('.').ok_or_else(bad)?;
            let cell = match cell {
                "fa" | "full_adder" => &mut lib.full_adder,
                "ha" | "half_adder" => &mut lib.half_adder,
                "mux" | "mux2" => &mut lib.mux2,
                "inv" | "inverter" => &mut lib.inverter,
                "and" | "and2" => &mut lib.and2,
                "xor" | "xor2" => &mut lib.xor2,
                "cla" | "cla_group" => &mut lib.cla_group,
                _ => return Err(bad()),
            };
            match field {
                "gates" => cell.gates = value,
                "delay" => cell.delay = value,
                _ => return Err(bad()),
            }
        }
        Ok(lib)
    }

    pub fn to_key_values(&self) -> String {
        let mut s = String::new();
        for (name, c) in [
            ("fa", self.full_adder),
            ("ha", self.half_adder),
            ("mux2", self.mux2),
            ("inv", self.inverter),
            ("and2", self.and2),
            ("xor2", self.xor2),
            ("cla_group", self.cla_group),
        ] {
            let _ = writeln!(s, "{name}.gates={}\n{name}.delay={}", c.gates, c.delay);
        }
        s
    }

    pub fn cla(&self, width: u32) -> Cell {
        if width == 0 {
            return Cell::new(0, 0);
        }
        let groups = u64::from(width.div_ceil(4));
        let mut levels = 1;
        while 4u64.pow(levels) < u64::from(width) {
            levels += 1;
        }
        Cell::new(
            groups * self.cla_group.gates,
            2 * self.xor2.delay + u64::from(levels) * self.cla_group.delay,
        )
    }
}

/// Gate count of one named block.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Block {
    pub name: String,
    pub gates: u64,
}

/// Gate totals with per-block breakdown and the critical path.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CostReport {
    pub name: String,
    pub blocks: Vec<Block>,
    pub critical_path: u64,
    /// Delay contributions along the critical path.
    pub path: Vec<(String, u64)>,
}

impl CostReport {
    fn new(name: impl Into<String>) -> Self {
        CostReport {
            name: name.into(),
            blocks: Vec::new(),
            critical_path: 0,
            path: Vec::new(),
        }
    }

    fn block(&mut self, name: impl Into<String>, gates: u64) {
        self.blocks.push(Block {
            name: name.into(),
            gates,
        });
    }

    fn step(&mut self, name: impl Into<String>, delay: u64) {
        self.path.push((name.into(), delay));
        self.critical_path += delay;
    }

    pub fn total_gates(&self) -> u64 {
        self.blocks.iter().map(|b| b.gates).sum()
    }

    /// Number of 3:2 compressor stages on the critical path.
    pub fn compressor_stage_count(&self) -> usize {
        self.path.iter().filter(|(n, _)| n.starts_with("stage ")).count()
    }

    pub fn block_gates(&self, name: &str) -> u64 {
        self.blocks.iter().filter(|b| b.name == name).map(|b| b.gates).sum()
    }

    fn absorb(&mut self, prefix: &str, other: &CostReport) {
        for b in &other.blocks {
            self.block(format!("{prefix}{}", b.name), b.gates);
        }
    }
}

impl fmt::Display for CostReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{}: {} gates, critical path {}", self.name, self.total_gates(), self.critical_path)?;
        for b in &self.blocks {
            writeln!(f, "  {:<28} {:>8}", b.name, b.gates)?;
        }
        Ok(())
    }
}

/// Relative savings of `a` over `b`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Reduction {
    pub gates: f64,
    pub path: f64,
}

/// `1 - a/b` for gates and for critical path.
pub fn compare(a: &CostReport, b: &CostReport) -> Reduction {
    let ratio = |x: u64, y: u64| if y == 0 { 0.0 } else { 1.0 - x as f64 / y as f64 };
    Reduction {
        gates: ratio(a.total_gates(), b.total_gates()),
        path: ratio(a.critical_path, b.critical_path),
    }
}

fn ceil_log2(n: usize) -> u32 {
    if n <= 1 {
        0
    } else {
        usize::BITS - (n - 1).leading_zeros()
    }
}

/// Operand counts entering each 3:2 stage until two remain.
pub fn compressor_stages(n: usize) -> Vec<usize> {
    let mut counts = Vec::new();
    let mut k = n;
    while k > 2 {
        counts.push(k);
        k = 2 * (k / 3) + k % 3;
    }
    counts
}

/// How negative operands are handled in a multi-operand adder.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SignHandling {
    /// Operands enter at their own width; a counter of negative operands
    /// feeds one two's-complement correction word.
    NumP,
    /// Every operand is sign-extended to the output width up front.
    FullExtension,
}

/// When the negative-operand count is produced.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum CorrectionTiming {
    /// Counted one clock ahead from the incoming X-bus window and the
    /// static weight signs; the word is waiting in a register.
    #[default]
    Pipelined,
    /// Counted in the same clock from the operands' sign flags; the
    /// injection stage waits for the counter if it is late.
    SameCycle,
}

/// Structural parameters of a multi-operand adder.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MoaShape {
    pub operands: usize,
    pub operand_width: u32,
    pub out_width: u32,
    pub sign: SignHandling,
    pub timing: CorrectionTiming,
}

impl MoaShape {
    /// Output wide enough for any sum of `operands` values.
    pub fn exact(operands: usize, operand_width: u32) -> Self {
        MoaShape {
            operands,
            operand_width,
            out_width: operand_width + ceil_log2(operands),
            sign: SignHandling::NumP,
            timing: CorrectionTiming::Pipelined,
        }
    }
}

/// Column-compression counter of `n` one-bit inputs: FAs on triples until
/// every column holds at most two bits, then a CLA.
fn popcount_cost(n: usize, lib: &GateLibrary) -> (u64, u64, u64, u32) {
    if n <= 1 {
        return (0, 0, 0, n as u32);
    }
    let out_bits = usize::BITS - n.leading_zeros();
    let mut heights = vec![0usize; out_bits as usize + 1];
    heights[0] = n;
    let (mut fas, mut passes) = (0u64, 0u64);
    while heights.iter().any(|&h| h > 2) {
        let mut next = vec![0usize; heights.len() + 1];
        for (col, &h) in heights.iter().enumerate() {
            let triples = h / 3;
            fas += triples as u64;
            next[col] += triples + h % 3;
            next[col + 1] += triples;
        }
        while next.len() > out_bits as usize && next.last() == Some(&0) {
            next.pop();
        }
        heights = next;
        passes += 1;
    }
    let cla = lib.cla(out_bits);
    let gates = fas * lib.full_adder.gates + cla.gates;
    let delay = passes * lib.full_adder.delay + cla.delay;
    (gates, delay, fas, out_bits)
}

/// Multi-operand adder of `shape.operands` signed operands.
pub fn moa_cost_with(shape: MoaShape, lib: &GateLibrary) -> CostReport {
    let MoaShape {
        operands: n,
        operand_width: w0,
        out_width: out,
        sign,
        timing,
    } = shape;
    let mut r = CostReport::new(format!("moa(n={n}, {w0}->{out} bits, {sign:?})"));
    if n <= 1 {
        r.block("compressor", 0);
        return r;
    }
    let stages = compressor_stages(n);
    // The correction word rides in the latest stage with a spare FA slot
    // so the depth does not grow; with none, it enters with the data.
    let inject = match sign {
        SignHandling::NumP => Some(stages.iter().rposition(|&k| k % 3 == 2).unwrap_or(0)),
        SignHandling::FullExtension => None,
    };
    let start_width = |s: usize| match sign {
        SignHandling::NumP => (w0 + s as u32).min(out),
        SignHandling::FullExtension => out,
    };

    let (counter_gates, counter_delay, _, count_bits) = popcount_cost(n, lib);
    let correction_bits = u64::from(out.saturating_sub(w0).min(count_bits));
    let neg_gates = correction_bits * (lib.inverter.gates + lib.half_adder.gates);
    let neg_delay = lib.inverter.delay + correction_bits * lib.half_adder.delay;

    let mut fa_gates = 0;
    let mut k = n;
    let mut time = 0u64;
    for s in 0.. {
        if Some(s) == inject {
            k += 1;
            let ready = counter_delay + neg_delay;
            if timing == CorrectionTiming::SameCycle && ready > time {
                r.step("correction arrival wait", ready - time);
                time = ready;
            }
        }
        if k <= 2 {
            break;
        }
        let groups = (k / 3) as u64;
        fa_gates += groups * u64::from(start_width(s)) * lib.full_adder.gates;
        k = 2 * (k / 3) + k % 3;
        time += lib.full_adder.delay;
        r.step(format!("stage {}", s + 1), lib.full_adder.delay);
    }
    r.block("compressor", fa_gates);
    if sign == SignHandling::NumP {
        r.block("num_p counter", counter_gates);
        r.block("twos complement", neg_gates);
    }
    let cla = lib.cla(out);
    r.block("final cla", cla.gates);
    r.step("final cla", cla.delay);
    r
}

/// Multi-operand adder with the NUM_P correction and exact output width.
pub fn moa_cost(n_operands: usize, operand_width: u32, lib: &GateLibrary) -> CostReport {
    moa_cost_with(MoaShape::exact(n_operands, operand_width), lib)
}

/// Balanced tree of CLAs; each level widens by one bit.
pub fn adder_tree_cost(n_operands: usize, width: u32, lib: &GateLibrary) -> CostReport {
    let mut r = CostReport::new(format!("adder tree(n={n_operands}, {width} bits)"));
    let mut k = n_operands;
    let mut level = 0u32;
    let mut gates = 0;
    let mut adders = 0;
    while k > 1 {
        let pairs = (k / 2) as u64;
        let cla = lib.cla(width + level);
        gates += pairs * cla.gates;
        adders += pairs;
        r.step(format!("level {} cla", level + 1), cla.delay);
        k = k / 2 + k % 2;
        level += 1;
    }
    r.block(format!("{adders} adders"), gates);
    r
}

/// Prior-art dot-product neurons.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MacBaseline {
    /// Radix-4 Booth multipliers feeding a CLA tree.
    BoothTree { weight_bits: u32 },
    /// One weight bit per clock: AND gates, a tree, and a shift-accumulator.
    Shift1Bit,
    /// Weights of one bit (`+x` or `-x`) feeding a CLA tree.
    BinaryWeight,
}

/// Cost of an `n`-input dot product with 8-bit activations.
pub fn mac_baseline_cost(kind: MacBaseline, n: usize, lib: &GateLibrary) -> CostReport {
    const ACT: u32 = 8;
    let n = n.max(1);
    match kind {
        MacBaseline::BoothTree { weight_bits } => {
            let mut r = CostReport::new(format!("booth tree (N={n}, {weight_bits}-bit)"));
            // Radix-4 recoding: one partial product per two weight bits.
            let pps = weight_bits.div_ceil(2) as usize;
            let pp_width = ACT + 2;
            let prod_width = ACT + weight_bits;
            let encoder = 3 * lib.xor2.gates + 2 * lib.and2.gates;
            let selector = u64::from(pp_width) * (2 * lib.mux2.gates + lib.xor2.gates);
            let per_mult_pp = pps as u64 * (encoder + selector);
            let inner = moa_cost_with(
                MoaShape {
                    operands: pps,
                    operand_width: pp_width,
                    out_width: prod_width,
                    sign: SignHandling::FullExtension,
                    timing: CorrectionTiming::Pipelined,
                },
                lib,
            );
            r.block("booth encoders+selectors", n as u64 * per_mult_pp);
            r.block("multiplier compressors", n as u64 * inner.total_gates());
            r.step("booth encode", lib.xor2.delay + lib.and2.delay);
            r.step("pp select", lib.mux2.delay * 2 + lib.xor2.delay);
            r.step("multiplier reduction", inner.critical_path);
            let tree = adder_tree_cost(n, prod_width, lib);
            r.absorb("tree ", &tree);
            r.step("adder tree", tree.critical_path);
            r
        }
        MacBaseline::Shift1Bit => {
            let mut r = CostReport::new(format!("bit-serial weights (N={n})"));
            r.block("and gates", n as u64 * u64::from(ACT) * lib.and2.gates);
            let tree = adder_tree_cost(n, ACT, lib);
            r.absorb("tree ", &tree);
            let acc_width = ACT + ceil_log2(n) + 8;
            let acc = lib.cla(acc_width);
            r.block("shift accumulator", acc.gates + u64::from(acc_width) * lib.mux2.gates);
            r.step("and", lib.and2.delay);
            r.step("adder tree", tree.critical_path);
            r.step("accumulator", acc.delay + lib.mux2.delay);
            r
        }
        MacBaseline::BinaryWeight => {
            let mut r = CostReport::new(format!("binary weights (N={n})"));
            let w = ACT + 1;
            r.block("conditional negation", n as u64 * u64::from(w) * (lib.xor2.gates + lib.half_adder.gates));
            let tree = adder_tree_cost(n, w, lib);
            r.absorb("tree ", &tree);
            r.step("negation", lib.xor2.delay + u64::from(w) * lib.half_adder.delay / 2);
            r.step("adder tree", tree.critical_path);
            r
        }
    }
}

/// Cost of the barrel-shift neural element: `n` MBS blocks with
/// `max_terms` shifters each, an MOA over `3n` partials and its CLA.
pub fn neural_element_cost(n: usize, bit_width: u8, max_terms: u8, lib: &GateLibrary) -> CostReport {
    const ACT: u32 = 8;
    let mut r = CostReport::new(format!("neural element (N={n}, {bit_width}-bit, {max_terms} terms)"));
    let max_shift = u32::from(bit_width) - 1;
    let shift_levels = ceil_log2(max_shift as usize + 1);
    let in_width = ACT + 1;
    let pp_width = in_width + max_shift;
    let terms = u64::from(max_terms);
    let negate = u64::from(in_width) * (lib.inverter.gates + lib.half_adder.gates);
    let select = terms * u64::from(in_width) * 2 * lib.mux2.gates;
    let shifters = terms * u64::from(shift_levels) * u64::from(pp_width) * lib.mux2.gates;
    r.block("negators", n as u64 * negate);
    r.block("term muxes", n as u64 * select);
    r.block("barrel shifters", n as u64 * shifters);
    let moa = moa_cost_with(
        MoaShape {
            operands: n * max_terms as usize,
            operand_width: pp_width,
            out_width: pp_width + ceil_log2(n * max_terms as usize),
            sign: SignHandling::NumP,
            timing: CorrectionTiming::Pipelined,
        },
        lib,
    );
    r.absorb("moa ", &moa);
    r.step("term mux", 2 * lib.mux2.delay);
    r.step("barrel shift", u64::from(shift_levels) * lib.mux2.delay);
    r.step("moa", moa.critical_path);
    r
}

/// One comparison row against published figures.
#[derive(Clone, Debug)]
pub struct TableRow {
    pub report: CostReport,
    pub published_gates: u64,
    pub published_path: u64,
}

impl TableRow {
    pub fn gate_deviation(&self) -> f64 {
        self.report.total_gates() as f64 / self.published_gates as f64 - 1.0
    }

    pub fn path_deviation(&self) -> f64 {
        self.report.critical_path as f64 / self.published_path as f64 - 1.0
    }
}

/// The four 25-input neurons with their published gate counts and paths.
pub fn comparison_table(lib: &GateLibrary) -> Vec<TableRow> {
    vec![
        TableRow {
            report: mac_baseline_cost(MacBaseline::BoothTree { weight_bits: 5 }, 25, lib),
            published_gates: 15_688,
            published_path: 57,
        },
        TableRow {
            report: mac_baseline_cost(MacBaseline::BinaryWeight, 25, lib),
            published_gates: 4_715,
            published_path: 40,
        },
        TableRow {
            report: neural_element_cost(25, 5, 2, lib),
            published_gates: 8_201,
            published_path: 41,
        },
        TableRow {
            report: neural_element_cost(25, 8, 3, lib),
            published_gates: 12_502,
            published_path: 46,
        },
    ]
}

/// MOA against a CLA tree and full sign extension against the NUM_P
/// correction, for `n` operands of `width` bits summed into `out_width`.
#[derive(Clone, Debug)]
pub struct MoaStudy {
    pub moa: CostReport,
    pub tree: CostReport,
    pub extended: CostReport,
    pub vs_tree: Reduction,
    /// The same MOA with the count computed in the adder's own clock.
    pub same_cycle: CostReport,
    pub same_cycle_vs_tree: Reduction,
    /// Extra area of full sign extension relative to the NUM_P design.
    pub extension_overhead: f64,
}

impl MoaStudy {
    pub fn to_text(&self) -> String {
        let pct = |v: f64| 100.0 * v;
        let mut s = String::new();
        for r in [&self.moa, &self.same_cycle, &self.tree, &self.extended] {
            let _ = write!(s, "{r}");
        }
        let _ = writeln!(
            s,
            "moa vs tree: path -{:.1}%, gates -{:.1}%",
            pct(self.vs_tree.path),
            pct(self.vs_tree.gates)
        );
        let _ = writeln!(
            s,
            "moa (same-cycle count) vs tree: path -{:.1}%, gates -{:.1}%",
            pct(self.same_cycle_vs_tree.path),
            pct(self.same_cycle_vs_tree.gates)
        );
        let _ = writeln!(s, "full sign extension area: +{:.1}%", pct(self.extension_overhead));
        s
    }
}

pub fn moa_study(n: usize, width: u32, out_width: u32, lib: &GateLibrary) -> MoaStudy {
    let shape = MoaShape {
        operands: n,
        operand_width: width,
        out_width,
        sign: SignHandling::NumP,
        timing: CorrectionTiming::Pipelined,
    };
    let moa = moa_cost_with(shape, lib);
    let same_cycle = moa_cost_with(
        MoaShape {
            timing: CorrectionTiming::SameCycle,
            ..shape
        },
        lib,
    );
    let extended = moa_cost_with(
        MoaShape {
            sign: SignHandling::FullExtension,
            ..shape
        },
        lib,
    );
    let tree = adder_tree_cost(n, width, lib);
    MoaStudy {
        vs_tree: compare(&moa, &tree),
        same_cycle_vs_tree: compare(&same_cycle, &tree),
        same_cycle,
        extension_overhead: extended.total_gates() as f64 / moa.total_gates() as f64 - 1.0,
        moa,
        tree,
        extended,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bitcore::{carry_save_sum_traced, compression_schedule, MoaWidths};

    #[test]
    fn stages_match_functional_schedule() {
        for n in 3..=200 {
            assert_eq!(compressor_stages(n), compression_schedule(n), "n={n}");
        }
    }

    #[test]
    fn stage_count_matches_reduction_trace() {
        let lib = GateLibrary::default();
        for n in 2..=120usize {
            let values: Vec<i64> = (0..n as i64).map(|i| if i % 2 == 0 { i } else { -i }).collect();
            let (_, trace) = carry_save_sum_traced(&values, MoaWidths::new(12, 22));
            let shape = MoaShape {
                operands: n,
                operand_width: 12,
                out_width: 22,
                sign: SignHandling::NumP,
                timing: CorrectionTiming::SameCycle,
            };
            assert_eq!(moa_cost_with(shape, &lib).compressor_stage_count(), trace.stage_count(), "n={n}");
        }
    }

    #[test]
    fn three_operand_hand_count() {
        // Three 4-bit operands into 6 bits: one FA row of 4, a 2-bit
        // popcount (one FA), two correction bits, a 6-bit CLA.
        let lib = GateLibrary::default();
        let r = moa_cost_with(
            MoaShape {
                operands: 3,
                operand_width: 4,
                out_width: 6,
                sign: SignHandling::NumP,
                timing: CorrectionTiming::Pipelined,
            },
            &lib,
        );
        // Correction joins stage 1, making four operands and two stages.
        assert_eq!(r.block_gates("compressor"), 9 * 4 + 9 * 5);
        assert_eq!(r.block_gates("num_p counter"), 9 + lib.cla(2).gates);
        assert_eq!(r.block_gates("twos complement"), 2 * (1 + 5));
        assert_eq!(r.block_gates("final cla"), 2 * 60);
        let ext = moa_cost_with(
            MoaShape {
                operands: 3,
                operand_width: 4,
                out_width: 6,
                sign: SignHandling::FullExtension,
                timing: CorrectionTiming::Pipelined,
            },
            &lib,
        );
        assert_eq!(ext.block_gates("compressor"), 9 * 6);
        assert_eq!(ext.critical_path, 2 + lib.cla(6).delay);
    }

    #[test]
    fn trivial_cases() {
        let lib = GateLibrary::default();
        assert_eq!(moa_cost(1, 8, &lib).total_gates(), 0);
        let two = adder_tree_cost(2, 8, &lib);
        assert_eq!(two.total_gates(), lib.cla(8).gates);
        let four = adder_tree_cost(4, 8, &lib);
        assert_eq!(four.path.len(), 2);
        assert_eq!(four.total_gates(), 2 * lib.cla(8).gates + lib.cla(9).gates);
        let one = mac_baseline_cost(MacBaseline::BinaryWeight, 1, &lib);
        assert_eq!(one.block_gates("conditional negation"), 9 * (4 + 5));
        let same = compare(&two, &two);
        assert_eq!((same.gates, same.path), (0.0, 0.0));
        let mut half = two.clone();
        half.blocks[0].gates *= 2;
        half.critical_path *= 2;
        let r = compare(&two, &half);
        assert_eq!((r.gates, r.path), (0.5, 0.5));
    }

    #[test]
    fn monotone_in_operands_and_width() {
        let lib = GateLibrary::default();
        for n in 2..100 {
            for w in [4, 8, 12] {
                let a = moa_cost(n, w, &lib);
                let b = moa_cost(n + 1, w, &lib);
                let c = moa_cost(n, w + 1, &lib);
                assert!(b.total_gates() >= a.total_gates(), "n={n} w={w}");
                assert!(c.total_gates() >= a.total_gates());
                assert!(b.critical_path >= a.critical_path, "n={n} w={w}");
                let t = adder_tree_cost(n, w, &lib);
                assert!(adder_tree_cost(n + 1, w, &lib).total_gates() >= t.total_gates());
                assert!(adder_tree_cost(n, w + 1, &lib).total_gates() >= t.total_gates());
            }
        }
    }

    #[test]
    fn totals_are_block_sums() {
        let lib = GateLibrary::default();
        for row in comparison_table(&lib) {
            let sum: u64 = row.report.blocks.iter().map(|b| b.gates).sum();
            assert_eq!(sum, row.report.total_gates());
            let path: u64 = row.report.path.iter().map(|p| p.1).sum();
            assert_eq!(path, row.report.critical_path);
        }
    }

    #[test]
    fn library_file_overrides() {
        let lib = GateLibrary::from_key_values("# custom\nfa.gates=10\ncla_group.delay = 3\n").unwrap();
        assert_eq!(lib.full_adder, Cell::new(10, 2));
        assert_eq!(lib.cla_group.delay, 3);
        assert_eq!(GateLibrary::from_key_values(&lib.to_key_values()).unwrap(), lib);
        assert!(GateLibrary::from_key_values("fa.gates=0").is_err());
        assert!(GateLibrary::from_key_values("bogus.gates=3").is_err());
    }
}

