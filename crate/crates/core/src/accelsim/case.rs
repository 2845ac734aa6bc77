//! Filter cases and how each one spreads a filter over the four tiles.

use std::fmt;
use std::str::FromStr;

use crate::bitcore::{CHSUM_INPUTS, ELEMENT_LANES};
use crate::error::{Error, Result};

/// Number of neural tiles in the system.
pub const TILES: usize = 4;

/// The six supported ways of mapping a convolution onto the four tiles.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FilterCase {
    /// One 5x5x32 filter, split by depth.
    C1,
    /// One 7x7x16 filter, split by taps and depth.
    C2,
    /// One 9x9x8 filter, split by taps.
    C3,
    /// Four 5x5x8 filters side by side.
    C4,
    /// Two 7x7x8 filters, one per tile pair.
    C5,
    /// One 5x5x128 filter accumulated over four passes.
    C6,
}

/// How tile outputs are added by the CLA stage.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Combine {
    /// Three CLAs reduce all four tiles to one output.
    All,
    /// Tiles 1+2 and 3+4.
    Pairs,
    /// Every tile is its own output.
    None,
}

impl FilterCase {
    pub const ALL: [FilterCase; 6] = [
        FilterCase::C1,
        FilterCase::C2,
        FilterCase::C3,
        FilterCase::C4,
        FilterCase::C5,
        FilterCase::C6,
    ];

    pub fn number(self) -> u8 {
        match self {
            FilterCase::C1 => 1,
            FilterCase::C2 => 2,
            FilterCase::C3 => 3,
            FilterCase::C4 => 4,
            FilterCase::C5 => 5,
            FilterCase::C6 => 6,
        }
    }

    pub fn kernel(self) -> usize {
        match self {
            FilterCase::C1 | FilterCase::C4 | FilterCase::C6 => 5,
            FilterCase::C2 | FilterCase::C5 => 7,
            FilterCase::C3 => 9,
        }
    }

    /// Largest filter depth the case accepts.
    pub fn max_channels(self) -> usize {
        match self {
            FilterCase::C1 => 32,
            FilterCase::C2 => 16,
            FilterCase::C3 | FilterCase::C4 | FilterCase::C5 => 8,
            FilterCase::C6 => 128,
        }
    }

    /// Distinct filters evaluated per window position.
    pub fn filters_per_clock(self) -> usize {
        match self {
            FilterCase::C4 => 4,
            FilterCase::C5 => 2,
            _ => 1,
        }
    }

    /// Clocks spent on each window position.
    pub fn acc_passes(self) -> usize {
        match self {
            FilterCase::C6 => 4,
            _ => 1,
        }
    }

    pub fn combine(self) -> Combine {
        match self {
            FilterCase::C4 => Combine::None,
            FilterCase::C5 => Combine::Pairs,
            _ => Combine::All,
        }
    }

    /// Picks the case for a `kernel x kernel x channels` filter, honouring
    /// `hint` when it fits.
    pub fn select(kernel: usize, channels: usize, hint: Option<FilterCase>) -> Result<FilterCase> {
        if channels == 0 {
            return Err(Error::Config("filter depth must be positive".into()));
        }
        if let Some(case) = hint {
            if case.kernel() != kernel || channels > case.max_channels() {
                return Err(Error::Config(format!(
                    "{case} cannot hold a {kernel}x{kernel}x{channels} filter"
                )));
            }
            return Ok(case);
        }
        let case = match (kernel, channels) {
            (5, 1..=8) => FilterCase::C4,
            (5, 9..=32) => FilterCase::C1,
            (5, 33..=128) => FilterCase::C6,
            (7, 1..=8) => FilterCase::C5,
            (7, 9..=16) => FilterCase::C2,
            (9, 1..=8) => FilterCase::C3,
            _ => {
                return Err(Error::Config(format!(
                    "no filter case supports a {kernel}x{kernel}x{channels} filter"
                )))
            }
        };
        Ok(case)
    }
}

impl fmt::Display for FilterCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let shape = match self {
            FilterCase::C1 => "5x5x32",
            FilterCase::C2 => "7x7x16",
            FilterCase::C3 => "9x9x8",
            FilterCase::C4 => "4x5x5x8",
            FilterCase::C5 => "2x7x7x8",
            FilterCase::C6 => "5x5x128",
        };
        write!(f, "case{} ({shape})", self.number())
    }
}

impl FromStr for FilterCase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let digits = s
            .trim()
            .trim_start_matches("case")
            .trim_start_matches(['c', 'C']);
        let n: u8 = digits
            .parse()
            .map_err(|_| Error::Config(format!("unknown filter case `{s}`")))?;
        FilterCase::ALL
            .into_iter()
            .find(|c| c.number() == n)
            .ok_or_else(|| Error::Config(format!("unknown filter case `{s}`")))
    }
}

/// The filter tap driven by one MAC lane.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct LaneSource {
    /// Filter slot within the clock (0 unless several filters run at once).
    pub slot: u8,
    pub channel: u16,
    pub row: u8,
    /// Physical X-bus column.
    pub col: u8,
}

type TileLanes = [[Option<LaneSource>; ELEMENT_LANES]; CHSUM_INPUTS];

/// Wiring of filter taps to `(pass, tile, element, lane)` plus the combine
/// tree.
#[derive(Clone, Debug)]
pub struct TileMapping {
    case: FilterCase,
    lanes: Vec<[TileLanes; TILES]>,
    groups: Vec<Vec<usize>>,
}

impl TileMapping {
    pub fn case(&self) -> FilterCase {
        self.case
    }

    pub fn passes(&self) -> usize {
        self.lanes.len()
    }

    /// Source of `lane` of `element` in `tile` during `pass`, or `None` for
    /// a lane held at zero.
    pub fn lane(&self, pass: usize, tile: usize, element: usize, lane: usize) -> Option<LaneSource> {
        self.lanes[pass][tile][element][lane]
    }

    pub fn tile_lanes(&self, pass: usize, tile: usize) -> &TileLanes {
        &self.lanes[pass][tile]
    }

    /// Tiles summed into the output of each filter slot.
    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    /// Count of lanes that carry a filter tap.
    pub fn active_lanes(&self) -> usize {
        self.lanes
            .iter()
            .flat_map(|p| p.iter())
            .flat_map(|t| t.iter())
            .flat_map(|e| e.iter())
            .filter(|l| l.is_some())
            .count()
    }
}

fn tap(slot: usize, channel: usize, tap: usize, kernel: usize) -> Option<LaneSource> {
    Some(LaneSource {
        slot: slot as u8,
        channel: channel as u16,
        row: (tap / kernel) as u8,
        col: (tap % kernel) as u8,
    })
}

/// Builds the lane wiring and combine tree for `case`.
pub fn configure(case: FilterCase) -> TileMapping {
    let k = case.kernel();
    let taps = k * k;
    let mut lanes = vec![[[[None; ELEMENT_LANES]; CHSUM_INPUTS]; TILES]; case.acc_passes()];

    // (tile, element) -> (slot, channel, first tap, end tap)
    let span = |tile: usize, element: usize, pass: usize| -> (usize, usize, usize, usize) {
        match case {
            FilterCase::C1 => (0, 8 * tile + element, 0, taps),
            FilterCase::C6 => (0, 32 * pass + 8 * tile + element, 0, taps),
            FilterCase::C4 => (tile, element, 0, taps),
            FilterCase::C2 => {
                let start = (tile % 2) * ELEMENT_LANES;
                (0, 8 * (tile / 2) + element, start, (start + ELEMENT_LANES).min(taps))
            }
            FilterCase::C5 => {
                let start = (tile % 2) * ELEMENT_LANES;
                (tile / 2, element, start, (start + ELEMENT_LANES).min(taps))
            }
            FilterCase::C3 => {
                let start = tile * ELEMENT_LANES;
                (0, element, start, (start + ELEMENT_LANES).min(taps))
            }
        }
    };

    for (pass, pass_lanes) in lanes.iter_mut().enumerate() {
        for (tile, tile_lanes) in pass_lanes.iter_mut().enumerate() {
            for (element, element_lanes) in tile_lanes.iter_mut().enumerate() {
                let (slot, channel, start, end) = span(tile, element, pass);
                for (lane, out) in element_lanes.iter_mut().enumerate() {
                    let t = start + lane;
                    if t < end {
                        *out = tap(slot, channel, t, k);
                    }
                }
            }
        }
    }

    let groups = match case.combine() {
        Combine::All => vec![vec![0, 1, 2, 3]],
        Combine::Pairs => vec![vec![0, 1], vec![2, 3]],
        Combine::None => (0..TILES).map(|t| vec![t]).collect(),
    };
    TileMapping { case, lanes, groups }
}
