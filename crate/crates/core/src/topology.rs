//! Physical DIMM hierarchy: channels, ranks, chips and banks.
//!
//! Every bank hosts one processing element (PE). PEs are numbered linearly
//! with the chip index varying fastest, then bank, rank and channel. The
//! eight PEs that share `(channel, rank, bank)` form an *entangled group*:
//! one 64-bit bus transaction touches all of them at once, one byte lane
//! per chip.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Chips per rank. Each chip drives one byte lane of the 64-bit bus.
pub const CHIPS_PER_RANK: usize = 8;
/// Banks per chip.
pub const BANKS_PER_CHIP: usize = 8;
/// PEs per rank.
pub const PES_PER_RANK: usize = CHIPS_PER_RANK * BANKS_PER_CHIP;
/// Members of one entangled group (one per chip).
pub const GROUP_LANES: usize = CHIPS_PER_RANK;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TopologyError {
    #[error("topology needs at least one channel and one rank (got {channels} channels, {ranks} ranks)")]
    ZeroDimension { channels: usize, ranks: usize },
    #[error("PE {pe} is out of range for a machine with {total} PEs")]
    OutOfRange { pe: usize, total: usize },
    #[error("coordinate {0:?} does not exist in this topology")]
    BadCoord(PeCoord),
}

/// Linear PE index in `[0, total_pes)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PeId(pub usize);

/// Position of a PE in the DIMM hierarchy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PeCoord {
    pub channel: usize,
    pub rank: usize,
    pub bank: usize,
    pub chip: usize,
}

/// The eight PEs sharing `(channel, rank, bank)`; member `i` sits on chip `i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EntangledGroup {
    id: usize,
}

impl EntangledGroup {
    pub fn id(&self) -> usize {
        self.id
    }

    /// Members in lane order.
    pub fn members(&self) -> [PeId; GROUP_LANES] {
        std::array::from_fn(|lane| self.member(lane))
    }

    pub fn member(&self, lane: usize) -> PeId {
        debug_assert!(lane < GROUP_LANES);
        PeId(self.id * GROUP_LANES + lane)
    }

    /// Lane (chip index) of `pe` if it belongs to this group.
    pub fn lane_of(&self, pe: PeId) -> Option<usize> {
        (pe.0 / GROUP_LANES == self.id).then_some(pe.0 % GROUP_LANES)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Topology {
    channels: usize,
    ranks_per_channel: usize,
}

impl Topology {
    pub fn new(channels: usize, ranks: usize) -> Result<Self, TopologyError> {
        if channels == 0 || ranks == 0 {
            return Err(TopologyError::ZeroDimension { channels, ranks });
        }
        Ok(Self {
            channels,
            ranks_per_channel: ranks,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn ranks_per_channel(&self) -> usize {
        self.ranks_per_channel
    }

    pub fn chips_per_rank(&self) -> usize {
        CHIPS_PER_RANK
    }

    pub fn banks_per_chip(&self) -> usize {
        BANKS_PER_CHIP
    }

    pub fn total_pes(&self) -> usize {
        self.channels * self.ranks_per_channel * PES_PER_RANK
    }

    pub fn num_entangled_groups(&self) -> usize {
        self.total_pes() / GROUP_LANES
    }

    fn check(&self, pe: PeId) -> Result<(), TopologyError> {
        if pe.0 >= self.total_pes() {
            return Err(TopologyError::OutOfRange {
                pe: pe.0,
                total: self.total_pes(),
            });
        }
        Ok(())
    }

    pub fn decompose(&self, pe: PeId) -> Result<PeCoord, TopologyError> {
        self.check(pe)?;
        let l = pe.0;
        Ok(PeCoord {
            chip: l % CHIPS_PER_RANK,
            bank: (l / CHIPS_PER_RANK) % BANKS_PER_CHIP,
            rank: (l / PES_PER_RANK) % self.ranks_per_channel,
            channel: l / (PES_PER_RANK * self.ranks_per_channel),
        })
    }

    pub fn compose(&self, coord: PeCoord) -> Result<PeId, TopologyError> {
        if coord.chip >= CHIPS_PER_RANK
            || coord.bank >= BANKS_PER_CHIP
            || coord.rank >= self.ranks_per_channel
            || coord.channel >= self.channels
        {
            return Err(TopologyError::BadCoord(coord));
        }
        Ok(PeId(
            coord.chip
                + CHIPS_PER_RANK
                    * (coord.bank + BANKS_PER_CHIP * (coord.rank + self.ranks_per_channel * coord.channel)),
        ))
    }

    /// The entangled group containing `pe`, and the lane `pe` occupies in it.
    pub fn entangled_group_of(&self, pe: PeId) -> Result<(EntangledGroup, usize), TopologyError> {
        self.check(pe)?;
        Ok((
            EntangledGroup {
                id: pe.0 / GROUP_LANES,
            },
            pe.0 % GROUP_LANES,
        ))
    }

    pub fn entangled_group(&self, id: usize) -> Result<EntangledGroup, TopologyError> {
        if id >= self.num_entangled_groups() {
            return Err(TopologyError::OutOfRange {
                pe: id * GROUP_LANES,
                total: self.total_pes(),
            });
        }
        Ok(EntangledGroup { id })
    }

    pub fn entangled_groups(&self) -> impl Iterator<Item = EntangledGroup> {
        (0..self.num_entangled_groups()).map(|id| EntangledGroup { id })
    }

    pub fn pes(&self) -> impl Iterator<Item = PeId> {
        (0..self.total_pes()).map(PeId)
    }
}
