//! Neural elements and neural tiles.

use crate::error::{Error, Result};
use crate::psiq::PsiWeight;

use super::mbs::mbs_multiply;
use super::moa::{
    carry_save_sum, moa_chsum, DatapathConfig, MoaOutcome, WidthEvent, CHSUM_INPUTS,
    ELEMENT_LANES, PSUM_OPERANDS,
};

/// Inputs of one neural tile: eight channels of 25 lanes.
pub type TileInputs = [[u8; ELEMENT_LANES]; CHSUM_INPUTS];
/// Weights of one neural tile, laid out like [`TileInputs`].
pub type TileWeights = [[PsiWeight; ELEMENT_LANES]; CHSUM_INPUTS];

/// MAC lanes in one tile.
pub const TILE_LANES: usize = ELEMENT_LANES * CHSUM_INPUTS;

/// Output register of a neural tile.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct TileOutput {
    pub value: i64,
    pub acc_count: u32,
    /// Width events seen while producing `value` (including accumulated ones).
    pub width_events: u32,
}

/// Result of one neural element: the MOA(PSUM) outcome.
pub fn neural_element_outcome(
    x: &[u8; ELEMENT_LANES],
    w: &[PsiWeight; ELEMENT_LANES],
    config: &DatapathConfig,
) -> MoaOutcome {
    // An idle element sums 75 zero operands with NUM_P = 0: the result is 0
    // with no width event, so the reduction can be skipped.
    if x.iter().all(|&v| v == 0) || w.iter().all(PsiWeight::is_zero) {
        return MoaOutcome {
            value: 0,
            events: 0,
            first_event: None,
        };
    }
    let mut operands = [0i64; PSUM_OPERANDS];
    for (lane, (&xi, wi)) in x.iter().zip(w).enumerate() {
        let pp = mbs_multiply(xi, wi);
        operands[3 * lane..3 * lane + 3].copy_from_slice(pp.products());
    }
    carry_save_sum(&operands, config.psum, None)
}

/// 25-lane dot product through 25 MBS blocks and one MOA(PSUM).
pub fn neural_element(
    x: &[u8; ELEMENT_LANES],
    w: &[PsiWeight; ELEMENT_LANES],
    config: &DatapathConfig,
) -> i64 {
    neural_element_outcome(x, w, config).value
}

/// Eight neural elements, MOA(CHSUM) with the bias, and the optional
/// ACC_SEL accumulation of a previous output.
pub fn tile_compute(
    x: &TileInputs,
    w: &TileWeights,
    bias: i64,
    acc_in: Option<&TileOutput>,
    acc_sel: bool,
    config: &DatapathConfig,
) -> Result<TileOutput> {
    let prior = match (acc_sel, acc_in) {
        (true, Some(prev)) => Some(prev),
        (true, None) => {
            return Err(Error::Contract(
                "ACC_SEL is set but no prior tile output was supplied".into(),
            ))
        }
        (false, _) => None,
    };

    let mut events = 0;
    let mut element_out = [0i64; CHSUM_INPUTS];
    for (ch, out) in element_out.iter_mut().enumerate() {
        let o = neural_element_outcome(&x[ch], &w[ch], config);
        events += o.events;
        *out = o.value;
    }
    let ch = moa_chsum(&element_out, bias, config.chsum);
    events += ch.events;

    let (value, acc_count) = match prior {
        Some(prev) => {
            events += prev.width_events;
            (prev.value + ch.value, prev.acc_count + 1)
        }
        None => (ch.value, 1),
    };
    let half = 1i64 << (config.acc_width - 1);
    let value = if value < -half || value >= half {
        events += 1;
        value.clamp(-half, half - 1)
    } else {
        value
    };
    Ok(TileOutput {
        value,
        acc_count,
        width_events: events,
    })
}

/// First width event of a tile evaluation, for diagnostics.
pub fn first_tile_event(
    x: &TileInputs,
    w: &TileWeights,
    bias: i64,
    config: &DatapathConfig,
) -> Option<WidthEvent> {
    let mut element_out = [0i64; CHSUM_INPUTS];
    for (ch, out) in element_out.iter_mut().enumerate() {
        let o = neural_element_outcome(&x[ch], &w[ch], config);
        if o.first_event.is_some() {
            return o.first_event;
        }
        *out = o.value;
    }
    moa_chsum(&element_out, bias, config.chsum).first_event
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::psiq::{Codebook, PsiConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn one() -> PsiWeight {
        Codebook::new(PsiConfig::eight_three()).decompose(1).unwrap()
    }

    fn random_tile(rng: &mut ChaCha8Rng, book: &Codebook) -> (TileInputs, TileWeights) {
        let mut x = [[0u8; 25]; 8];
        let mut w = [[PsiWeight::zero(8); 25]; 8];
        for c in 0..8 {
            for l in 0..25 {
                x[c][l] = rng.gen();
                w[c][l] = book.decompose(rng.gen_range(-128..=127)).unwrap();
            }
        }
        (x, w)
    }

    fn dot(x: &TileInputs, w: &TileWeights) -> i64 {
        let mut s = 0;
        for c in 0..8 {
            for l in 0..25 {
                s += i64::from(x[c][l]) * i64::from(w[c][l].reconstruct());
            }
        }
        s
    }

    #[test]
    fn element_examples() {
        let cfg = DatapathConfig::WIDE;
        assert_eq!(neural_element(&[1; 25], &[one(); 25], &cfg), 25);
        assert_eq!(neural_element(&[0; 25], &[one(); 25], &cfg), 0);
    }

    #[test]
    fn random_elements_match_dot_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let book = Codebook::new(PsiConfig::eight_three());
        let cfg = DatapathConfig::WIDE;
        for _ in 0..2000 {
            let x: [u8; 25] = std::array::from_fn(|_| rng.gen());
            let w: [PsiWeight; 25] =
                std::array::from_fn(|_| book.decompose(rng.gen_range(-128..=127)).unwrap());
            let oracle: i64 = x
                .iter()
                .zip(&w)
                .map(|(&a, b)| i64::from(a) * i64::from(b.reconstruct()))
                .sum();
            let out = neural_element_outcome(&x, &w, &cfg);
            assert_eq!(out.events, 0);
            assert_eq!(out.value, oracle);
        }
    }

    #[test]
    fn five_bit_weights_fit_narrow_widths() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let book = Codebook::new(PsiConfig::five_two());
        let cfg = DatapathConfig::NARROW;
        for _ in 0..500 {
            let x: [u8; 25] = std::array::from_fn(|_| rng.gen());
            let w: [PsiWeight; 25] =
                std::array::from_fn(|_| book.decompose(rng.gen_range(-16..=15)).unwrap());
            let oracle: i64 = x
                .iter()
                .zip(&w)
                .map(|(&a, b)| i64::from(a) * i64::from(b.reconstruct()))
                .sum();
            let out = neural_element_outcome(&x, &w, &cfg);
            assert_eq!(out.events, 0);
            assert_eq!(out.value, oracle);
        }
    }

    #[test]
    fn tile_zero_and_random() {
        let cfg = DatapathConfig::WIDE;
        let zero = tile_compute(
            &[[0; 25]; 8],
            &[[PsiWeight::zero(8); 25]; 8],
            0,
            None,
            false,
            &cfg,
        )
        .unwrap();
        assert_eq!(zero.value, 0);
        assert_eq!(zero.acc_count, 1);

        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let book = Codebook::new(PsiConfig::eight_three());
        for _ in 0..200 {
            let (x, w) = random_tile(&mut rng, &book);
            let bias = rng.gen_range(-100_000..100_000);
            let out = tile_compute(&x, &w, bias, None, false, &cfg).unwrap();
            assert_eq!(out.value, dot(&x, &w) + bias);
            assert_eq!(out.width_events, 0);
        }
    }

    #[test]
    fn four_accumulated_quarters_equal_one_shot() {
        let cfg = DatapathConfig::WIDE;
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let book = Codebook::new(PsiConfig::eight_three());
        for _ in 0..50 {
            let quarters: Vec<_> = (0..4).map(|_| random_tile(&mut rng, &book)).collect();
            let bias = rng.gen_range(-5000..5000);
            let mut acc: Option<TileOutput> = None;
            for (i, (x, w)) in quarters.iter().enumerate() {
                let b = if i == 0 { bias } else { 0 };
                acc = Some(tile_compute(x, w, b, acc.as_ref(), i > 0, &cfg).unwrap());
            }
            let oracle: i64 = quarters.iter().map(|(x, w)| dot(x, w)).sum::<i64>() + bias;
            let acc = acc.unwrap();
            assert_eq!(acc.value, oracle);
            assert_eq!(acc.acc_count, 4);
        }
    }

    #[test]
    fn acc_sel_without_input_is_rejected() {
        let r = tile_compute(
            &[[0; 25]; 8],
            &[[PsiWeight::zero(8); 25]; 8],
            0,
            None,
            true,
            &DatapathConfig::WIDE,
        );
        assert!(matches!(r, Err(Error::Contract(_))));
    }
}
