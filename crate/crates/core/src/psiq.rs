//! Signed power-of-two weight quantization.
//!
//! A weight is stored as at most three "partial sub-integers", each of the
//! form `±2^n`. The hardware multiplies by such a weight with one barrel
//! shifter per term, so the number of terms (not the bit width) is what sets
//! the multiplier cost.
//!
//! Representable values are clipped to the *symmetric* signed range
//! `[-(2^(b-1) - 1), 2^(b-1) - 1]` so that the codebook, and therefore
//! [`decompose`], is odd-symmetric.

use std::collections::BTreeSet;
use std::fmt;

use num_rational::Ratio;
use num_traits::{Float, Zero};

use crate::error::{Error, Result};

/// Hard upper bound on the number of terms an MBS block can emit.
pub const MAX_TERMS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn value(self) -> i32 {
        match self {
            Sign::Plus => 1,
            Sign::Minus => -1,
        }
    }

    pub fn flip(self) -> Sign {
        match self {
            Sign::Plus => Sign::Minus,
            Sign::Minus => Sign::Plus,
        }
    }
}

/// One partial sub-integer `sign * 2^shift`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Term {
    pub sign: Sign,
    pub shift: u8,
}

impl Term {
    pub const fn plus(shift: u8) -> Self {
        Term {
            sign: Sign::Plus,
            shift,
        }
    }

    pub const fn minus(shift: u8) -> Self {
        Term {
            sign: Sign::Minus,
            shift,
        }
    }

    pub fn value(self) -> i32 {
        self.sign.value() << self.shift
    }
}

/// Sum of a raw term list, with no range or ordering checks.
pub fn sum_terms(terms: &[Term]) -> i64 {
    terms.iter().map(|t| i64::from(t.sign.value()) << t.shift).sum()
}

/// Validated `(bit_width, max_terms)` pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct PsiConfig {
    bit_width: u8,
    max_terms: u8,
}

impl PsiConfig {
    pub fn new(bit_width: u8, max_terms: u8) -> Result<Self> {
        if bit_width != 5 && bit_width != 8 {
            return Err(Error::Config(format!(
                "bit width must be 5 or 8, got {bit_width}"
            )));
        }
        if max_terms == 0 || max_terms as usize > MAX_TERMS {
            return Err(Error::Config(format!(
                "max_terms must be in 1..={MAX_TERMS}, got {max_terms}"
            )));
        }
        Ok(PsiConfig {
            bit_width,
            max_terms,
        })
    }

    /// 5-bit weights, two terms.
    pub fn five_two() -> Self {
        PsiConfig {
            bit_width: 5,
            max_terms: 2,
        }
    }

    /// 8-bit weights, three terms.
    pub fn eight_three() -> Self {
        PsiConfig {
            bit_width: 8,
            max_terms: 3,
        }
    }

    pub fn bit_width(self) -> u8 {
        self.bit_width
    }

    pub fn max_terms(self) -> u8 {
        self.max_terms
    }

    /// Largest magnitude in the symmetric signed range.
    pub fn limit(self) -> i32 {
        symmetric_limit(self.bit_width)
    }

    /// Full two's-complement range accepted as decomposition input.
    pub fn input_range(self) -> (i32, i32) {
        let half = 1i32 << (self.bit_width - 1);
        (-half, half - 1)
    }

    fn max_shift(self) -> u8 {
        self.bit_width - 1
    }
}

impl fmt::Display for PsiConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "psi({},{})", self.bit_width, self.max_terms)
    }
}

pub(crate) fn symmetric_limit(bit_width: u8) -> i32 {
    (1i32 << (bit_width - 1)) - 1
}

/// A weight expressed as at most [`MAX_TERMS`] signed powers of two.
///
/// Terms are kept in strictly descending shift order so that two weights with
/// the same decomposition compare equal structurally.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct PsiWeight {
    terms: [Term; MAX_TERMS],
    len: u8,
    bit_width: u8,
}

impl PsiWeight {
    pub fn zero(bit_width: u8) -> Self {
        PsiWeight {
            terms: [Term::plus(0); MAX_TERMS],
            len: 0,
            bit_width,
        }
    }

    /// Builds a weight from an explicit term list, checking canonical order,
    /// the term budget of `config`, and the reconstructed range.
    pub fn from_terms(terms: &[Term], config: PsiConfig) -> Result<Self> {
        if terms.len() > config.max_terms as usize {
            return Err(Error::Domain(format!(
                "{} terms exceed the budget of {}",
                terms.len(),
                config.max_terms
            )));
        }
        if terms.windows(2).any(|w| w[0].shift <= w[1].shift) {
            return Err(Error::Domain(
                "term shifts must be strictly decreasing".into(),
            ));
        }
        if let Some(t) = terms.iter().find(|t| t.shift > config.max_shift()) {
            return Err(Error::Domain(format!(
                "shift {} exceeds {} for {}-bit weights",
                t.shift,
                config.max_shift(),
                config.bit_width
            )));
        }
        let value = sum_terms(terms);
        let limit = i64::from(config.limit());
        if value.abs() > limit {
            return Err(Error::Domain(format!(
                "value {value} is outside the {}-bit range",
                config.bit_width
            )));
        }
        let mut w = PsiWeight::zero(config.bit_width);
        w.terms[..terms.len()].copy_from_slice(terms);
        w.len = terms.len() as u8;
        Ok(w)
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms[..self.len as usize]
    }

    pub fn bit_width(&self) -> u8 {
        self.bit_width
    }

    pub fn is_zero(&self) -> bool {
        self.len == 0
    }

    /// `Σ sign · 2^shift`.
    pub fn reconstruct(&self) -> i32 {
        self.terms().iter().map(|t| t.value()).sum()
    }

    /// Same shifts, every sign flipped.
    pub fn negated(&self) -> Self {
        let mut out = *self;
        for t in &mut out.terms[..self.len as usize] {
            t.sign = t.sign.flip();
        }
        out
    }
}

impl fmt::Debug for PsiWeight {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PsiWeight({} = [", self.reconstruct())?;
        for (i, t) in self.terms().iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            let s = if t.sign == Sign::Plus { '+' } else { '-' };
            write!(f, "{s}2^{}", t.shift)?;
        }
        f.write_str("])")
    }
}

impl fmt::Display for PsiWeight {
    /// Compact form used by dumps: `+3-0` for `8 - 1`, `0` for no terms.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.len == 0 {
            return f.write_str("0");
        }
        for t in self.terms() {
            let s = if t.sign == Sign::Plus { '+' } else { '-' };
            write!(f, "{s}{}", t.shift)?;
        }
        Ok(())
    }
}

/// Non-adjacent form of `v`: the unique signed-digit representation with no
/// two adjacent nonzero digits, which also has the minimum number of
/// nonzero digits. Returned in descending shift order.
fn non_adjacent_form(v: i32) -> Vec<Term> {
    let mut digits = Vec::new();
    let mut n = i64::from(v);
    let mut shift = 0u8;
    while n != 0 {
        if n & 1 != 0 {
            // n mod 4 picks the digit that leaves a multiple of 4 behind.
            let d = 2 - n.rem_euclid(4);
            n -= d;
            digits.push(Term {
                sign: if d > 0 { Sign::Plus } else { Sign::Minus },
                shift,
            });
        }
        n /= 2;
        shift += 1;
    }
    digits.reverse();
    digits
}

fn enumerate_sums(config: PsiConfig, out: &mut BTreeSet<i32>) {
    fn rec(depth: u8, max_depth: u8, top: i32, acc: i32, out: &mut BTreeSet<i32>) {
        out.insert(acc);
        if depth == max_depth {
            return;
        }
        for shift in (0..=top).rev() {
            rec(depth + 1, max_depth, shift - 1, acc + (1 << shift), out);
            rec(depth + 1, max_depth, shift - 1, acc - (1 << shift), out);
        }
    }
    rec(0, config.max_terms, i32::from(config.max_shift()), 0, out);
}

/// Sorted list of every integer expressible as a sum of at most
/// `max_terms` signed powers of two, clipped to the symmetric
/// `bit_width` range.
pub fn representable_values(bit_width: u8, max_terms: u8) -> Result<Vec<i32>> {
    let config = PsiConfig::new(bit_width, max_terms)?;
    Ok(Codebook::new(config).values().to_vec())
}

/// Precomputed nearest-value table for one [`PsiConfig`].
#[derive(Clone, Debug)]
pub struct Codebook {
    config: PsiConfig,
    values: Vec<i32>,
    // Indexed by `w - input_range().0`.
    nearest: Vec<PsiWeight>,
}

impl Codebook {
    pub fn new(config: PsiConfig) -> Self {
        let mut set = BTreeSet::new();
        enumerate_sums(config, &mut set);
        let limit = config.limit();
        let values: Vec<i32> = set.into_iter().filter(|v| v.abs() <= limit).collect();

        let (lo, hi) = config.input_range();
        let nearest = (lo..=hi)
            .map(|w| {
                let target = nearest_member(&values, w);
                let terms = non_adjacent_form(target);
                debug_assert!(terms.len() <= config.max_terms as usize);
                PsiWeight::from_terms(&terms, config)
                    .expect("NAF of a codebook member fits the term budget")
            })
            .collect();

        Codebook {
            config,
            values,
            nearest,
        }
    }

    pub fn config(&self) -> PsiConfig {
        self.config
    }

    pub fn values(&self) -> &[i32] {
        &self.values
    }

    pub fn contains(&self, v: i32) -> bool {
        self.values.binary_search(&v).is_ok()
    }

    pub fn decompose(&self, w: i32) -> Result<PsiWeight> {
        let (lo, hi) = self.config.input_range();
        if w < lo || w > hi {
            return Err(Error::Domain(format!(
                "{w} is outside the {}-bit signed range [{lo}, {hi}]",
                self.config.bit_width
            )));
        }
        Ok(self.nearest[(w - lo) as usize])
    }
}

/// Nearest member with the tie rule: smaller magnitude first, then the
/// negative candidate.
fn nearest_member(values: &[i32], w: i32) -> i32 {
    *values
        .iter()
        .min_by_key(|&&c| ((c - w).abs(), c.abs(), c))
        .expect("codebook always contains 0")
}

/// Decomposes `w` into the nearest representable [`PsiWeight`].
pub fn decompose(w: i32, bit_width: u8, max_terms: u8) -> Result<PsiWeight> {
    let config = PsiConfig::new(bit_width, max_terms)?;
    Codebook::new(config).decompose(w)
}

pub fn reconstruct(psi: &PsiWeight) -> i32 {
    psi.reconstruct()
}

/// Exhaustive worst-case `|w - q(w)| / |w|` over all nonzero inputs of the
/// `bit_width` signed range.
pub fn max_relative_error(bit_width: u8, max_terms: u8) -> Result<Ratio<i64>> {
    let codebook = Codebook::new(PsiConfig::new(bit_width, max_terms)?);
    let (lo, hi) = codebook.config.input_range();
    let mut worst = Ratio::zero();
    for w in (lo..=hi).filter(|&w| w != 0) {
        let q = codebook.decompose(w)?.reconstruct();
        let err = Ratio::new(i64::from((w - q).abs()), i64::from(w.abs()));
        if err > worst {
            worst = err;
        }
    }
    Ok(worst)
}

/// Round half away from zero, then saturate to the symmetric `bit_width`
/// range.
pub fn round_saturate<T: Float>(x: T, scale: u32, bit_width: u8) -> i32 {
    let limit = symmetric_limit(bit_width);
    let scaled = (x * T::from(scale).expect("scale fits any float")).round();
    if scaled.is_nan() {
        return 0;
    }
    let lim = T::from(limit).expect("limit fits any float");
    if scaled >= lim {
        limit
    } else if scaled <= -lim {
        -limit
    } else {
        scaled.to_i32().expect("in range")
    }
}

pub fn check_scale(scale: u32) -> Result<u32> {
    if scale == 0 || !scale.is_power_of_two() {
        return Err(Error::Config(format!(
            "weight scale must be a power of two, got {scale}"
        )));
    }
    Ok(scale.trailing_zeros())
}

/// Quantization error of one tensor element.
#[derive(Clone, Debug, PartialEq)]
pub struct ElementError {
    /// `round(scale · w)` after saturation.
    pub integer: i32,
    /// Value actually realized by the decomposed weight.
    pub quantized: i32,
    /// `|integer - quantized|`.
    pub abs_error: i32,
    /// `abs_error / |integer|`, zero when `integer == 0`.
    pub rel_error: Ratio<i64>,
    /// `|scale · w - quantized|` in the scaled floating domain.
    pub scaled_abs_error: f64,
}

#[derive(Clone, Debug)]
pub struct QuantizationReport {
    pub config: PsiConfig,
    pub scale_factor: u32,
    pub elements: Vec<ElementError>,
    pub max_relative_error: Ratio<i64>,
    /// Elements whose scaled value fell outside the range and were clipped.
    pub saturated: usize,
}

impl QuantizationReport {
    pub fn mean_abs_error(&self) -> f64 {
        if self.elements.is_empty() {
            return 0.0;
        }
        let sum: i64 = self.elements.iter().map(|e| i64::from(e.abs_error)).sum();
        sum as f64 / self.elements.len() as f64
    }

    pub fn nonzero_weights(&self) -> usize {
        self.elements.iter().filter(|e| e.quantized != 0).count()
    }

    /// Short human-readable summary.
    pub fn summary(&self) -> String {
        format!(
            "{} scale={} elements={} nonzero={} saturated={} mean_abs_error={:.4} max_relative_error={} ({:.4})",
            self.config,
            self.scale_factor,
            self.elements.len(),
            self.nonzero_weights(),
            self.saturated,
            self.mean_abs_error(),
            self.max_relative_error,
            ratio_to_f64(self.max_relative_error),
        )
    }
}

pub fn ratio_to_f64(r: Ratio<i64>) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

/// Scales, rounds, saturates, and decomposes every element of `weights`.
pub fn quantize_tensor<T: Float>(
    weights: &[T],
    scale: u32,
    bit_width: u8,
    max_terms: u8,
) -> Result<(Vec<PsiWeight>, QuantizationReport)> {
    let config = PsiConfig::new(bit_width, max_terms)?;
    check_scale(scale)?;
    let codebook = Codebook::new(config);
    quantize_with(&codebook, weights, scale)
}

pub(crate) fn quantize_with<T: Float>(
    codebook: &Codebook,
    weights: &[T],
    scale: u32,
) -> Result<(Vec<PsiWeight>, QuantizationReport)> {
    let config = codebook.config();
    let limit = f64::from(config.limit());
    let mut psis = Vec::with_capacity(weights.len());
    let mut elements = Vec::with_capacity(weights.len());
    let mut worst = Ratio::zero();
    let mut saturated = 0;
    for &w in weights {
        let scaled = w.to_f64().unwrap_or(0.0) * f64::from(scale);
        if scaled.round().abs() > limit {
            saturated += 1;
        }
        let integer = round_saturate(w, scale, config.bit_width());
        let psi = codebook.decompose(integer)?;
        let quantized = psi.reconstruct();
        let abs_error = (integer - quantized).abs();
        let rel_error = if integer == 0 {
            Ratio::zero()
        } else {
            Ratio::new(i64::from(abs_error), i64::from(integer.abs()))
        };
        if rel_error > worst {
            worst = rel_error;
        }
        elements.push(ElementError {
            integer,
            quantized,
            abs_error,
            rel_error,
            scaled_abs_error: (scaled - f64::from(quantized)).abs(),
        });
        psis.push(psi);
    }
    Ok((
        psis,
        QuantizationReport {
            config,
            scale_factor: scale,
            elements,
            max_relative_error: worst,
            saturated,
        },
    ))
}
