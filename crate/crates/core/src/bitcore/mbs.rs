//! Multiplication by barrel shift.

use crate::psiq::{PsiWeight, Sign, MAX_TERMS};

/// The shifted, possibly negated copies of one input produced by an MBS
/// block. Slots beyond `len` are zero, as the unused shifter outputs are in
/// hardware.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PartialProducts {
    products: [i64; MAX_TERMS],
    neg_flags: [bool; MAX_TERMS],
    len: u8,
}

impl PartialProducts {
    pub const ZERO: PartialProducts = PartialProducts {
        products: [0; MAX_TERMS],
        neg_flags: [false; MAX_TERMS],
        len: 0,
    };

    /// All three hardware slots, unused ones zero.
    pub fn products(&self) -> &[i64; MAX_TERMS] {
        &self.products
    }

    pub fn neg_flags(&self) -> &[bool; MAX_TERMS] {
        &self.neg_flags
    }

    /// Number of slots driven by a weight term.
    pub fn active_slots(&self) -> usize {
        self.len as usize
    }

    pub fn sum(&self) -> i64 {
        self.products.iter().sum()
    }

    pub fn negative_count(&self) -> u32 {
        self.neg_flags.iter().filter(|&&n| n).count() as u32
    }
}

/// Mux (`+x`, `-x`, or zero) followed by a left shift, once per weight term.
///
/// The negated leg is a 9-bit signed word, so `-255` is representable before
/// shifting.
pub fn mbs_multiply(x: u8, psi: &PsiWeight) -> PartialProducts {
    let positive = i64::from(x);
    let negated = -positive;
    let mut out = PartialProducts::ZERO;
    for (slot, term) in psi.terms().iter().enumerate() {
        let selected = match term.sign {
            Sign::Plus => positive,
            Sign::Minus => negated,
        };
        let p = selected << term.shift;
        out.products[slot] = p;
        out.neg_flags[slot] = p < 0;
    }
    out.len = psi.terms().len() as u8;
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::psiq::{Codebook, PsiConfig, Term};
    use proptest::prelude::*;

    #[test]
    fn three_times_seven() {
        let psi = PsiWeight::from_terms(&[Term::plus(3), Term::minus(0)], PsiConfig::eight_three())
            .unwrap();
        let pp = mbs_multiply(3, &psi);
        assert_eq!(pp.products(), &[24, -3, 0]);
        assert_eq!(pp.neg_flags(), &[false, true, false]);
        assert_eq!(pp.sum(), 21);
        assert_eq!(pp.active_slots(), 2);
    }

    #[test]
    fn zero_weight_gives_zero_slots() {
        let pp = mbs_multiply(255, &PsiWeight::zero(8));
        assert_eq!(pp.products(), &[0, 0, 0]);
        assert_eq!(pp.negative_count(), 0);
    }

    #[test]
    fn zero_input_never_flags_negative() {
        let psi = PsiWeight::from_terms(&[Term::minus(3)], PsiConfig::five_two()).unwrap();
        let pp = mbs_multiply(0, &psi);
        assert_eq!(pp.negative_count(), 0);
    }

    #[test]
    fn exhaustive_against_plain_multiply() {
        for config in [PsiConfig::five_two(), PsiConfig::eight_three()] {
            let book = Codebook::new(config);
            let (lo, hi) = config.input_range();
            for w in lo..=hi {
                let psi = book.decompose(w).unwrap();
                for x in 0..=255u8 {
                    let pp = mbs_multiply(x, &psi);
                    assert_eq!(pp.sum(), i64::from(x) * i64::from(psi.reconstruct()));
                    assert_eq!(pp.active_slots(), psi.terms().len());
                    for (p, n) in pp.products().iter().zip(pp.neg_flags()) {
                        assert_eq!(*n, *p < 0);
                        assert!(p.unsigned_abs() <= 255 << 7);
                    }
                }
            }
        }
    }

    proptest! {
        #[test]
        fn negated_weight_negates_slots(x in any::<u8>(), w in -127i32..=127) {
            let book = Codebook::new(PsiConfig::eight_three());
            let psi = book.decompose(w).unwrap();
            let a = mbs_multiply(x, &psi);
            let b = mbs_multiply(x, &psi.negated());
            for (p, q) in a.products().iter().zip(b.products()) {
                prop_assert_eq!(*p, -*q);
            }
        }
    }
}
