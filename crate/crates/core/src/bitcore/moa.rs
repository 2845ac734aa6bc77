//! Multi-operand adders: 3:2 carry-save reduction finished by one
//! carry-propagate add.
//!
//! Operands enter the tree as `low` bit two's-complement patterns with no sign
//! extension. The extension bits of all negative operands are replaced by a
//! single word, `(-NUM_P mod 2^(out-low)) << low`, injected late in the tree.
//! Everything above is computed modulo `2^out` on raw bit vectors.

use std::fmt::{self, Write as _};

use crate::error::{Error, Result};

use super::mbs::PartialProducts;

/// Lanes per neural element.
pub const ELEMENT_LANES: usize = 25;
/// Operands entering MOA(PSUM): three partial products per lane.
pub const PSUM_OPERANDS: usize = ELEMENT_LANES * 3;
/// Neural elements summed by MOA(CHSUM).
pub const CHSUM_INPUTS: usize = 8;

const STACK_OPERANDS: usize = 128;

/// Operand (`low`) and result (`out`) widths of one adder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct MoaWidths {
    pub low: u32,
    pub out: u32,
}

impl MoaWidths {
    pub const fn new(low: u32, out: u32) -> Self {
        MoaWidths { low, out }
    }

    pub fn validate(self) -> Result<Self> {
        if self.low == 0 || self.low >= self.out || self.out > 62 {
            return Err(Error::Config(format!(
                "adder widths need 0 < low < out <= 62, got low={} out={}",
                self.low, self.out
            )));
        }
        Ok(self)
    }

    fn out_mask(self) -> u64 {
        (1u64 << self.out) - 1
    }

    fn low_mask(self) -> u64 {
        (1u64 << self.low) - 1
    }

    pub fn out_range(self) -> (i64, i64) {
        let half = 1i64 << (self.out - 1);
        (-half, half - 1)
    }
}

/// Widths used across the datapath.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct DatapathConfig {
    pub psum: MoaWidths,
    pub chsum: MoaWidths,
    /// Width of the ACC_SEL accumulation register.
    pub acc_width: u32,
}

impl DatapathConfig {
    /// Widths that cannot overflow for 8-bit inputs, 8-bit weights, and a
    /// 32-bit bias.
    pub const WIDE: DatapathConfig = DatapathConfig {
        psum: MoaWidths::new(16, 22),
        chsum: MoaWidths::new(32, 36),
        acc_width: 40,
    };

    /// The 12-to-18-bit MOA(PSUM) of the 5-bit-weight build.
    pub const NARROW: DatapathConfig = DatapathConfig {
        psum: MoaWidths::new(12, 18),
        chsum: MoaWidths::new(18, 22),
        acc_width: 24,
    };

    pub fn validate(self) -> Result<Self> {
        self.psum.validate()?;
        self.chsum.validate()?;
        if self.acc_width < 22 || self.acc_width > 62 {
            return Err(Error::Config(format!(
                "accumulator width must be in 22..=62, got {}",
                self.acc_width
            )));
        }
        Ok(self)
    }
}

impl Default for DatapathConfig {
    fn default() -> Self {
        DatapathConfig::WIDE
    }
}

/// A width violation caught by the model.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WidthEvent {
    /// An operand does not fit in `low` bits (sign carried by its flag).
    OperandOverflow { index: usize, value: i64, low: u32 },
    /// The true sum does not fit in `out` bits; the result was saturated.
    OutputOverflow { exact: i64, saturated: i64, out: u32 },
}

impl fmt::Display for WidthEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WidthEvent::OperandOverflow { index, value, low } => {
                write!(f, "operand_overflow index={index} value={value} low={low}")
            }
            WidthEvent::OutputOverflow {
                exact,
                saturated,
                out,
            } => write!(
                f,
                "output_overflow exact={exact} saturated={saturated} out={out}"
            ),
        }
    }
}

/// `(-num_p mod 2^(out_width - low_width)) << low_width`: the word that
/// stands in for the sign extension of every negative operand.
pub fn sign_extension_correction(num_p: u32, low_width: u32, out_width: u32) -> u64 {
    assert!(low_width < out_width && out_width <= 63);
    let field = out_width - low_width;
    let modulus_mask = (1u64 << field) - 1;
    (u64::from(num_p).wrapping_neg() & modulus_mask) << low_width
}

/// Operand counts entering each 3:2 stage for `n` operands, ending when two
/// remain.
pub fn compression_schedule(n: usize) -> Vec<usize> {
    let mut counts = Vec::new();
    let mut c = n;
    while c > 2 {
        counts.push(c);
        c = 2 * (c / 3) + c % 3;
    }
    counts
}

/// The stage that receives the correction word for `n` data operands.
///
/// The word goes into the latest stage whose operand count leaves a
/// partially filled full-adder group (`count % 3 == 2`), which keeps the stage
/// count unchanged. Returns `None` when no such stage exists; the word then
/// enters with the data operands.
pub fn correction_stage(n: usize) -> Option<usize> {
    compression_schedule(n)
        .iter()
        .rposition(|&c| c % 3 == 2)
}

/// Operand list entering one reduction stage.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StageRecord {
    pub operands: Vec<u64>,
    pub widths: Vec<u32>,
}

/// Stage-by-stage record of one carry-save reduction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReductionTrace {
    pub widths: MoaWidths,
    pub data_operands: usize,
    /// Operands entering each 3:2 stage; the correction word is included from
    /// `correction_stage` on.
    pub stages: Vec<StageRecord>,
    pub num_p: u32,
    pub correction_word: u64,
    /// Index into `stages` (0-based) where the correction word was injected.
    pub correction_stage: usize,
    /// The pair handed to the final carry-propagate adder.
    pub final_pair: (u64, u64),
    /// `out`-bit result of the final add, before sign decoding.
    pub result_bits: u64,
    pub value: i64,
    pub events: Vec<WidthEvent>,
}

impl ReductionTrace {
    pub fn stage_count(&self) -> usize {
        self.stages.len()
    }

    /// Line-oriented dump: one header line, one line per stage, the final
    /// pair, and any width events.
    pub fn to_text(&self) -> String {
        let w = (self.widths.out as usize).div_ceil(4);
        let mut s = String::new();
        let _ = writeln!(
            s,
            "moa low_width={} out_width={} operands={} stages={} num_p={} correction=0x{:0w$x} correction_stage={}",
            self.widths.low,
            self.widths.out,
            self.data_operands,
            self.stages.len(),
            self.num_p,
            self.correction_word,
            self.correction_stage + 1,
        );
        for (i, st) in self.stages.iter().enumerate() {
            let words: Vec<String> = st
                .operands
                .iter()
                .zip(&st.widths)
                .map(|(v, bw)| format!("{v:0w$x}/{bw}"))
                .collect();
            let _ = writeln!(
                s,
                "stage={} count={} operands={}",
                i + 1,
                st.operands.len(),
                words.join(",")
            );
        }
        let _ = writeln!(
            s,
            "final a=0x{:0w$x} b=0x{:0w$x} sum=0x{:0w$x} value={}",
            self.final_pair.0, self.final_pair.1, self.result_bits, self.value
        );
        for e in &self.events {
            let _ = writeln!(s, "event {e}");
        }
        s
    }
}

/// Result of one multi-operand add.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MoaOutcome {
    pub value: i64,
    pub events: u32,
    pub first_event: Option<WidthEvent>,
}

impl MoaOutcome {
    fn record(&mut self, e: WidthEvent) {
        if self.first_event.is_none() {
            self.first_event = Some(e);
        }
        self.events += 1;
    }
}

fn full_adder_row(a: u64, b: u64, c: u64, mask: u64) -> (u64, u64) {
    let sum = a ^ b ^ c;
    let carry = ((a & b) | (a & c) | (b & c)) << 1;
    (sum & mask, carry & mask)
}

/// Bit-level carry-save sum of signed operands.
///
/// `trace`, when given, receives the full stage record.
pub fn carry_save_sum(
    values: &[i64],
    widths: MoaWidths,
    mut trace: Option<&mut ReductionTrace>,
) -> MoaOutcome {
    let n = values.len();
    let mut heap;
    let mut stack = [0u64; STACK_OPERANDS];
    let buf: &mut [u64] = if n < STACK_OPERANDS {
        &mut stack[..]
    } else {
        heap = vec![0u64; n + 1];
        &mut heap[..]
    };
    let mut bw_heap;
    let mut bw_stack = [0u32; STACK_OPERANDS];
    let bws: &mut [u32] = if trace.is_none() {
        &mut bw_stack[..0]
    } else if n < STACK_OPERANDS {
        &mut bw_stack[..]
    } else {
        bw_heap = vec![0u32; n + 1];
        &mut bw_heap[..]
    };
    let tracing = trace.is_some();

    let mut outcome = MoaOutcome {
        value: 0,
        events: 0,
        first_event: None,
    };
    let out_mask = widths.out_mask();
    let low_mask = widths.low_mask();
    let lo_limit = 1i64 << widths.low;

    let mut all_events = Vec::new();
    let mut num_p = 0u32;
    let mut exact: i128 = 0;
    for (i, &v) in values.iter().enumerate() {
        if v < -lo_limit || v >= lo_limit {
            let e = WidthEvent::OperandOverflow {
                index: i,
                value: v,
                low: widths.low,
            };
            outcome.record(e);
            if tracing {
                all_events.push(e);
            }
        }
        if v < 0 {
            num_p += 1;
        }
        exact += i128::from(v);
        buf[i] = (v as u64) & low_mask;
        if tracing {
            bws[i] = widths.low;
        }
    }

    let correction = sign_extension_correction(num_p, widths.low, widths.out);
    let inject_at = correction_stage(n);
    let mut count = n;
    if inject_at.is_none() {
        buf[count] = correction;
        if tracing {
            bws[count] = widths.out;
        }
        count += 1;
    }

    if let Some(t) = trace.as_deref_mut() {
        t.widths = widths;
        t.data_operands = n;
        t.stages.clear();
        t.num_p = num_p;
        t.correction_word = correction;
        t.correction_stage = inject_at.unwrap_or(0);
        t.events.clear();
    }

    let mut stage = 0usize;
    while count > 2 {
        if Some(stage) == inject_at {
            buf[count] = correction;
            if tracing {
                bws[count] = widths.out;
            }
            count += 1;
        }
        if let Some(t) = trace.as_deref_mut() {
            t.stages.push(StageRecord {
                operands: buf[..count].to_vec(),
                widths: bws[..count].to_vec(),
            });
        }
        let groups = count / 3;
        for g in 0..groups {
            let (s, c) = full_adder_row(buf[3 * g], buf[3 * g + 1], buf[3 * g + 2], out_mask);
            buf[2 * g] = s;
            buf[2 * g + 1] = c;
            if tracing {
                let w = bws[3 * g].max(bws[3 * g + 1]).max(bws[3 * g + 2]);
                bws[2 * g] = w;
                bws[2 * g + 1] = (w + 1).min(widths.out);
            }
        }
        for r in 0..count % 3 {
            buf[2 * groups + r] = buf[3 * groups + r];
            if tracing {
                bws[2 * groups + r] = bws[3 * groups + r];
            }
        }
        count = 2 * groups + count % 3;
        stage += 1;
    }

    let (a, b) = match count {
        0 => (0, 0),
        1 => (buf[0], 0),
        _ => (buf[0], buf[1]),
    };
    let bits = a.wrapping_add(b) & out_mask;
    let sign_bit = 1u64 << (widths.out - 1);
    let decoded = if bits & sign_bit != 0 {
        bits as i64 - (1i64 << widths.out)
    } else {
        bits as i64
    };

    let (lo, hi) = widths.out_range();
    outcome.value = decoded;
    if exact < i128::from(lo) || exact > i128::from(hi) {
        let saturated = if exact < 0 { lo } else { hi };
        let e = WidthEvent::OutputOverflow {
            exact: exact.clamp(i128::from(i64::MIN), i128::from(i64::MAX)) as i64,
            saturated,
            out: widths.out,
        };
        outcome.record(e);
        all_events.push(e);
        outcome.value = saturated;
    }

    if let Some(t) = trace {
        t.final_pair = (a, b);
        t.result_bits = bits;
        t.value = outcome.value;
        t.events = all_events;
    }
    outcome
}

fn empty_trace(widths: MoaWidths) -> ReductionTrace {
    ReductionTrace {
        widths,
        data_operands: 0,
        stages: Vec::new(),
        num_p: 0,
        correction_word: 0,
        correction_stage: 0,
        final_pair: (0, 0),
        result_bits: 0,
        value: 0,
        events: Vec::new(),
    }
}

/// Carry-save sum with a full [`ReductionTrace`], including every width
/// event.
pub fn carry_save_sum_traced(values: &[i64], widths: MoaWidths) -> (MoaOutcome, ReductionTrace) {
    let mut trace = empty_trace(widths);
    let outcome = carry_save_sum(values, widths, Some(&mut trace));
    (outcome, trace)
}

/// MOA(PSUM): the 75 partial products of one neural element.
pub fn moa_psum(
    partials: &[PartialProducts],
    widths: MoaWidths,
) -> Result<(i64, ReductionTrace)> {
    if partials.len() != ELEMENT_LANES {
        return Err(Error::Contract(format!(
            "MOA(PSUM) takes {ELEMENT_LANES} partial-product triples, got {}",
            partials.len()
        )));
    }
    let values: Vec<i64> = partials.iter().flat_map(|p| *p.products()).collect();
    let (outcome, trace) = carry_save_sum_traced(&values, widths);
    Ok((outcome.value, trace))
}

/// MOA(CHSUM): eight neural-element outputs plus the bias.
pub fn moa_chsum(outputs: &[i64; CHSUM_INPUTS], bias: i64, widths: MoaWidths) -> MoaOutcome {
    let mut values = [0i64; CHSUM_INPUTS + 1];
    values[..CHSUM_INPUTS].copy_from_slice(outputs);
    values[CHSUM_INPUTS] = bias;
    carry_save_sum(&values, widths, None)
}

pub fn moa_chsum_traced(
    outputs: &[i64; CHSUM_INPUTS],
    bias: i64,
    widths: MoaWidths,
) -> (MoaOutcome, ReductionTrace) {
    let mut values = [0i64; CHSUM_INPUTS + 1];
    values[..CHSUM_INPUTS].copy_from_slice(outputs);
    values[CHSUM_INPUTS] = bias;
    carry_save_sum_traced(&values, widths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Oracle: every operand sign-extended to `out` bits, summed mod 2^out.
    fn sign_extended_sum(ops: &[i64], low: u32, out: u32) -> u64 {
        let mask = (1u64 << out) - 1;
        ops.iter().fold(0u64, |acc, &v| {
            let pattern = (v as u64) & ((1u64 << low) - 1);
            let ext = if v < 0 { mask & !((1u64 << low) - 1) } else { 0 };
            acc.wrapping_add(pattern | ext) & mask
        })
    }

    #[test]
    fn correction_examples() {
        assert_eq!(sign_extension_correction(0, 5, 8), 0);
        assert_eq!(sign_extension_correction(3, 5, 8), 0b101_00000);
        assert_eq!(sign_extension_correction(2, 12, 18), 62 << 12);
    }

    #[test]
    fn six_five_bit_operands_three_negative() {
        // Summing the extension fields directly: three fields of 0b111.
        let ops = [5i64, -3, 7, -8, 1, -16];
        let ext_fields: u64 = 3 * (0b111 << 5);
        assert_eq!(ext_fields & 0xff, sign_extension_correction(3, 5, 8));
        let plain: u64 = ops
            .iter()
            .map(|&v| (v as u64) & 0x1f)
            .sum::<u64>()
            .wrapping_add(sign_extension_correction(3, 5, 8))
            & 0xff;
        assert_eq!(plain, sign_extended_sum(&ops, 5, 8));
    }

    #[test]
    fn schedule_for_75_operands_has_ten_stages() {
        assert_eq!(
            compression_schedule(75),
            vec![75, 50, 34, 23, 16, 11, 8, 6, 4, 3]
        );
        // 8 operands leave two in a partial group.
        assert_eq!(correction_stage(75), Some(6));
        assert_eq!(correction_stage(3), None);
        assert_eq!(correction_stage(8), Some(0));
        assert_eq!(correction_stage(9), None);
    }

    #[test]
    fn psum_trace_shape() {
        let mut partials = [PartialProducts::ZERO; ELEMENT_LANES];
        let w = crate::psiq::decompose(-7, 8, 3).unwrap();
        partials[0] = super::super::mbs::mbs_multiply(5, &w);
        let (v, trace) = moa_psum(&partials, MoaWidths::new(12, 18)).unwrap();
        assert_eq!(v, -35);
        assert_eq!(trace.stage_count(), 10);
        assert_eq!(trace.num_p, 1);
        let counts: Vec<usize> = trace.stages.iter().map(|s| s.operands.len()).collect();
        assert_eq!(counts, vec![75, 50, 34, 23, 16, 11, 9, 6, 4, 3]);
        for w in trace.stages.windows(2) {
            let prev = w[0].operands.len();
            assert!(w[1].operands.len() <= (2 * prev).div_ceil(3) + 1);
        }
        assert!(trace.events.is_empty());
        assert!(trace.to_text().starts_with("moa low_width=12 out_width=18 operands=75"));
    }

    #[test]
    fn small_psum_example() {
        let values = [5i64, -3, -7];
        let mut ops = vec![0i64; PSUM_OPERANDS];
        ops[..3].copy_from_slice(&values);
        let (out, trace) = carry_save_sum_traced(&ops, MoaWidths::new(16, 22));
        assert_eq!(out.value, -5);
        assert_eq!(trace.num_p, 2);
    }

    #[test]
    fn all_zero_psum() {
        let (v, trace) = moa_psum(&[PartialProducts::ZERO; 25], MoaWidths::new(16, 22)).unwrap();
        assert_eq!(v, 0);
        assert_eq!(trace.num_p, 0);
        assert_eq!(trace.correction_word, 0);
    }

    #[test]
    fn psum_needs_25_triples() {
        assert!(matches!(
            moa_psum(&[PartialProducts::ZERO; 24], MoaWidths::new(16, 22)),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn chsum_examples() {
        let w = DatapathConfig::WIDE.chsum;
        assert_eq!(moa_chsum(&[0; 8], 0, w).value, 0);
        assert_eq!(moa_chsum(&[1, 2, 3, 4, 5, 6, 7, 8], -36, w).value, 0);
    }

    #[test]
    fn overflow_is_reported_and_saturated() {
        let widths = MoaWidths::new(12, 18);
        let ops = vec![4000i64; 75];
        let out = carry_save_sum(&ops, widths, None);
        assert_eq!(out.value, (1 << 17) - 1);
        assert!(matches!(
            out.first_event,
            Some(WidthEvent::OutputOverflow { exact: 300000, .. })
        ));

        let out = carry_save_sum(&[5000, 1], widths, None);
        assert!(matches!(
            out.first_event,
            Some(WidthEvent::OperandOverflow { index: 0, .. })
        ));
    }

    #[test]
    fn random_sums_match_plain_addition() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for widths in [MoaWidths::new(12, 18), MoaWidths::new(16, 22)] {
            let bound = 1i64 << widths.low;
            for _ in 0..2000 {
                let n = rng.gen_range(1..=90);
                // Keep the total inside the output range.
                let per = ((1i64 << (widths.out - 1)) / n as i64).min(bound);
                let ops: Vec<i64> = (0..n).map(|_| rng.gen_range(-per..per)).collect();
                let out = carry_save_sum(&ops, widths, None);
                assert_eq!(out.events, 0);
                assert_eq!(out.value, ops.iter().sum::<i64>());
            }
        }
    }

    #[test]
    fn lemma_holds_for_small_operand_sets() {
        // Every ordered tuple of up to three 5-bit operands; the six-operand
        // sweep is in the acceptance suite.
        for k in 1..=3u32 {
            for code in 0..32u32.pow(k) {
                let ops: Vec<i64> = (0..k)
                    .map(|i| i64::from((code >> (5 * i)) & 0x1f) - 16)
                    .collect();
                let neg = ops.iter().filter(|&&v| v < 0).count() as u32;
                let no_ext = ops
                    .iter()
                    .map(|&v| (v as u64) & 0x1f)
                    .sum::<u64>()
                    .wrapping_add(sign_extension_correction(neg, 5, 8))
                    & 0xff;
                assert_eq!(no_ext, sign_extended_sum(&ops, 5, 8));
            }
        }
    }
}
