//! Input registers, X-bus and w-bank of one convolution sweep.

use crate::error::{Error, Result};
use crate::psiq::PsiWeight;
use crate::tensor::Fmap;

/// What a sweep step did to the X-bus.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepKind {
    /// First position of a row: every column reloaded, w-bank reset.
    RowStart,
    /// One new column written over the oldest one, w-bank rotated.
    MidRow,
}

/// Running event counts. Every field only ever grows.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct DataflowCounters {
    pub clocks: u64,
    pub positions: u64,
    pub xbus_column_updates: u64,
    pub xbus_full_reloads: u64,
    pub wbank_rotations: u64,
    pub wbank_resets: u64,
    pub fc_steps: u64,
    pub width_events: u64,
}

impl DataflowCounters {
    pub fn add(&mut self, other: &DataflowCounters) {
        self.clocks += other.clocks;
        self.positions += other.positions;
        self.xbus_column_updates += other.xbus_column_updates;
        self.xbus_full_reloads += other.xbus_full_reloads;
        self.wbank_rotations += other.wbank_rotations;
        self.wbank_resets += other.wbank_resets;
        self.fc_steps += other.fc_steps;
        self.width_events += other.width_events;
    }

    /// True when no field of `self` is below the one in `earlier`.
    pub fn dominates(&self, earlier: &DataflowCounters) -> bool {
        self.clocks >= earlier.clocks
            && self.positions >= earlier.positions
            && self.xbus_column_updates >= earlier.xbus_column_updates
            && self.xbus_full_reloads >= earlier.xbus_full_reloads
            && self.wbank_rotations >= earlier.wbank_rotations
            && self.wbank_resets >= earlier.wbank_resets
            && self.fc_steps >= earlier.fc_steps
            && self.width_events >= earlier.width_events
    }
}

/// Sweep state of a stride-1 convolution over an 8-bit input map.
///
/// The X-bus holds `kernel` physical columns in a ring: a mid-row step
/// overwrites the column at `head` and advances it. The w-bank rotates along,
/// so physical column `p` always carries filter column `(p - head) mod kernel`.
#[derive(Clone, Debug)]
pub struct AcceleratorState {
    ifmap: Fmap<u8>,
    kernel: usize,
    out_h: usize,
    out_w: usize,
    position: Option<(usize, usize)>,
    head: usize,
    addr: usize,
    slots: usize,
    /// `[physical column][channel][row]`
    x_bus: Vec<u8>,
    /// `[slot][physical column][channel][row]`
    w_bank: Vec<PsiWeight>,
    /// `[slot][filter column][channel][row]`
    w_initial: Vec<PsiWeight>,
    counters: DataflowCounters,
}

impl AcceleratorState {
    pub fn new(ifmap: Fmap<u8>, kernel: usize) -> Result<Self> {
        let (c, h, w) = ifmap.shape();
        if kernel == 0 || kernel > h || kernel > w {
            return Err(Error::Shape(format!(
                "{kernel}x{kernel} window does not fit a {h}x{w} input"
            )));
        }
        if c == 0 {
            return Err(Error::Shape("input map has no channels".into()));
        }
        Ok(AcceleratorState {
            out_h: h - kernel + 1,
            out_w: w - kernel + 1,
            x_bus: vec![0; kernel * c * kernel],
            ifmap,
            kernel,
            position: None,
            head: 0,
            addr: 0,
            slots: 0,
            w_bank: Vec::new(),
            w_initial: Vec::new(),
            counters: DataflowCounters::default(),
        })
    }

    pub fn ifmap(&self) -> &Fmap<u8> {
        &self.ifmap
    }

    pub fn kernel(&self) -> usize {
        self.kernel
    }

    pub fn channels(&self) -> usize {
        self.ifmap.channels()
    }

    pub fn output_dims(&self) -> (usize, usize) {
        (self.out_h, self.out_w)
    }

    /// Current `(row, col)`, `None` before the first step.
    pub fn position(&self) -> Option<(usize, usize)> {
        self.position
    }

    pub fn head(&self) -> usize {
        self.head
    }

    /// Address of the most recently fetched input column. Column words are
    /// `kernel` pixels tall.
    pub fn addr(&self) -> usize {
        self.addr
    }

    pub fn counters(&self) -> &DataflowCounters {
        &self.counters
    }

    pub(crate) fn counters_mut(&mut self) -> &mut DataflowCounters {
        &mut self.counters
    }

    pub fn filter_slots(&self) -> usize {
        self.slots
    }

    /// Whether another `sweep_step` is possible.
    pub fn has_next(&self) -> bool {
        match self.position {
            None => true,
            Some((r, c)) => r + 1 < self.out_h || c + 1 < self.out_w,
        }
    }

    /// Loads one filter per slot into the w-bank and rewinds the sweep.
    ///
    /// Each filter is `[channel][row][col]`; a `None` slot is held at zero.
    pub fn load_filters(&mut self, filters: &[Option<&[PsiWeight]>]) -> Result<()> {
        let (k, c) = (self.kernel, self.channels());
        let size = c * k * k;
        self.slots = filters.len();
        self.w_initial = vec![PsiWeight::zero(8); self.slots * size];
        for (slot, f) in filters.iter().enumerate() {
            let Some(f) = f else { continue };
            if f.len() != size {
                return Err(Error::Shape(format!(
                    "filter has {} weights, window holds {size}",
                    f.len()
                )));
            }
            for ch in 0..c {
                for r in 0..k {
                    for s in 0..k {
                        self.w_initial[slot * size + (s * c + ch) * k + r] = f[(ch * k + r) * k + s];
                    }
                }
            }
        }
        self.w_bank = self.w_initial.clone();
        self.position = None;
        self.head = 0;
        Ok(())
    }

    /// Rewinds to before the first position without touching the w-bank.
    pub fn rewind(&mut self) {
        self.position = None;
    }

    fn column_addr(&self, row: usize, col: usize) -> usize {
        (row * self.ifmap.width() + col) * self.kernel
    }

    fn fetch_column(&mut self, phys: usize, row: usize, col: usize) {
        let (k, c) = (self.kernel, self.channels());
        for ch in 0..c {
            for r in 0..k {
                self.x_bus[(phys * c + ch) * k + r] = self.ifmap.get(ch, row + r, col);
            }
        }
        self.addr = self.column_addr(row, col);
    }

    /// Advances the window one column, or to the start of the next row.
    pub fn sweep_step(&mut self) -> Result<StepKind> {
        let next = match self.position {
            None => (0, 0),
            Some((r, c)) if c + 1 < self.out_w => (r, c + 1),
            Some((r, _)) if r + 1 < self.out_h => (r + 1, 0),
            Some(_) => {
                return Err(Error::Contract(
                    "sweep stepped past the last window position".into(),
                ))
            }
        };
        let (row, col) = next;
        let k = self.kernel;
        let kind = if col == 0 {
            self.head = 0;
            for s in 0..k {
                self.fetch_column(s, row, col + s);
            }
            self.w_bank.copy_from_slice(&self.w_initial);
            self.counters.xbus_full_reloads += 1;
            self.counters.wbank_resets += 1;
            StepKind::RowStart
        } else {
            let head = self.head;
            self.fetch_column(head, row, col + k - 1);
            self.head = (head + 1) % k;
            let column = self.channels() * k;
            let per_slot = column * k;
            for slot in self.w_bank.chunks_exact_mut(per_slot) {
                slot.rotate_right(column);
            }
            self.counters.xbus_column_updates += 1;
            self.counters.wbank_rotations += 1;
            StepKind::MidRow
        };
        self.position = Some(next);
        self.counters.positions += 1;
        Ok(kind)
    }

    /// Input at physical X-bus column `col`.
    #[inline]
    pub fn x(&self, channel: usize, row: usize, col: usize) -> u8 {
        self.x_bus[(col * self.channels() + channel) * self.kernel + row]
    }

    /// Weight of `slot` at physical X-bus column `col`.
    #[inline]
    pub fn w(&self, slot: usize, channel: usize, row: usize, col: usize) -> PsiWeight {
        let c = self.channels();
        let k = self.kernel;
        self.w_bank[slot * c * k * k + (col * c + channel) * k + row]
    }

    /// X-bus contents reordered to `[channel][row][window col]`.
    pub fn logical_window(&self) -> Vec<u8> {
        let (k, c) = (self.kernel, self.channels());
        let mut out = Vec::with_capacity(c * k * k);
        for ch in 0..c {
            for r in 0..k {
                for s in 0..k {
                    out.push(self.x(ch, r, (s + self.head) % k));
                }
            }
        }
        out
    }

    /// The window cut straight from the input map, `[channel][row][col]`.
    pub fn direct_window(&self) -> Option<Vec<u8>> {
        let (row, col) = self.position?;
        let (k, c) = (self.kernel, self.channels());
        let mut out = Vec::with_capacity(c * k * k);
        for ch in 0..c {
            for r in 0..k {
                for s in 0..k {
                    out.push(self.ifmap.get(ch, row + r, col + s));
                }
            }
        }
        Some(out)
    }

    /// Filter of `slot` as seen through the rotated w-bank, `[channel][row][col]`.
    pub fn logical_filter(&self, slot: usize) -> Vec<PsiWeight> {
        let (k, c) = (self.kernel, self.channels());
        let mut out = Vec::with_capacity(c * k * k);
        for ch in 0..c {
            for r in 0..k {
                for s in 0..k {
                    out.push(self.w(slot, ch, r, (s + self.head) % k));
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::psiq::{Codebook, PsiConfig};

    fn ramp(c: usize, h: usize, w: usize) -> Fmap<u8> {
        Fmap::from_vec(c, h, w, (0..c * h * w).map(|i| (i * 7 % 251) as u8).collect()).unwrap()
    }

    #[test]
    fn two_steps_track_direct_windows() {
        let mut st = AcceleratorState::new(ramp(2, 8, 8), 5).unwrap();
        assert_eq!(st.sweep_step().unwrap(), StepKind::RowStart);
        assert_eq!(st.logical_window(), st.direct_window().unwrap());
        assert_eq!(st.sweep_step().unwrap(), StepKind::MidRow);
        assert_eq!(st.logical_window(), st.direct_window().unwrap());
        assert_eq!(st.counters().xbus_column_updates, 1);
        assert_eq!(st.counters().xbus_full_reloads, 1);
    }

    #[test]
    fn full_sweep_counts_and_coherence() {
        let book = Codebook::new(PsiConfig::eight_three());
        let filter: Vec<_> = (0..3 * 25).map(|i| book.decompose(i % 50 - 25).unwrap()).collect();
        let mut st = AcceleratorState::new(ramp(3, 9, 11), 5).unwrap();
        st.load_filters(&[Some(&filter)]).unwrap();
        let mut addr_prev = None;
        while st.has_next() {
            let kind = st.sweep_step().unwrap();
            assert_eq!(st.logical_window(), st.direct_window().unwrap());
            assert_eq!(st.logical_filter(0), filter);
            if kind == StepKind::MidRow {
                assert_eq!(st.addr(), addr_prev.unwrap() + 5);
            }
            addr_prev = Some(st.addr());
        }
        let c = st.counters();
        assert_eq!(c.positions, 5 * 7);
        assert_eq!(c.xbus_full_reloads, 5);
        assert_eq!(c.xbus_column_updates, 5 * 6);
        assert_eq!(c.wbank_rotations, c.xbus_column_updates);
        assert!(matches!(st.sweep_step(), Err(Error::Contract(_))));
    }

    #[test]
    fn single_position_sweep() {
        let mut st = AcceleratorState::new(ramp(1, 5, 5), 5).unwrap();
        st.sweep_step().unwrap();
        assert!(!st.has_next());
        assert!(AcceleratorState::new(ramp(1, 4, 4), 5).is_err());
    }
}
