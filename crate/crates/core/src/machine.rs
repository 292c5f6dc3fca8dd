//! Simulated PIM machine: per-PE MRAM, burst transfers over entangled
//! groups, PE-side reorder kernels, a host staging area and the cost
//! counters that stand in for wall-clock time.
//!
//! Every codec operation a pipeline performs on the host goes through the
//! `host_*` methods here so that the counters see it.

use std::collections::HashMap;
use std::ops::Sub;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{self, Block64, CodecError, ElementType, LaneMask, ReduceOp, BLOCK_BYTES, LANES};
use crate::topology::{EntangledGroup, PeId, Topology, TopologyError};

/// Bytes each lane contributes to one burst.
pub const LANE_BYTES: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MachineError {
    #[error("offset {offset} is not a multiple of 8")]
    Misaligned { offset: usize },
    #[error("PE {pe} holds {have} bytes of MRAM, need {need}")]
    ShortMram { pe: usize, need: usize, have: usize },
    #[error("kernel region on PE {pe} ends at {end} but MRAM holds {len} bytes")]
    OutOfRegion { pe: usize, end: usize, len: usize },
    #[error("kernel block size {0} is invalid")]
    BadBlockSize(usize),
    #[error("rotate_by {rotate_by} must be below num_blocks {num_blocks}")]
    BadRotation { rotate_by: usize, num_blocks: usize },
    #[error("{0:?} is not a permutation")]
    NotAPermutation(Vec<usize>),
    #[error("unknown staging handle {0}")]
    UnknownHandle(u64),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Codec(#[from] CodecError),
}

/// Work counters. All are monotone between resets.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CostCounters {
    /// Bytes moved over the host-PIM bus.
    pub bus_bytes: u64,
    /// Domain transfers (8x8 byte transposes) on the host.
    pub dt_blocks: u64,
    /// Host-side word or lane rotations.
    pub host_rot_ops: u64,
    /// Host-side block reductions.
    pub host_reduce_ops: u64,
    /// Bytes spilled to host memory.
    pub host_staged_bytes: u64,
    /// Bytes moved by PE-side reorder kernels.
    pub pe_moved_bytes: u64,
    pub kernel_launches: u64,
}

impl CostCounters {
    /// Modeled host-side work in block units: rotations, reductions,
    /// staged 64-byte blocks and domain transfers.
    pub fn host_work(&self) -> u64 {
        self.host_rot_ops + self.host_reduce_ops + self.host_staged_bytes / BLOCK_BYTES as u64 + self.dt_blocks
    }
}

impl Sub for CostCounters {
    type Output = CostCounters;

    fn sub(self, rhs: Self) -> Self::Output {
        CostCounters {
            bus_bytes: self.bus_bytes - rhs.bus_bytes,
            dt_blocks: self.dt_blocks - rhs.dt_blocks,
            host_rot_ops: self.host_rot_ops - rhs.host_rot_ops,
            host_reduce_ops: self.host_reduce_ops - rhs.host_reduce_ops,
            host_staged_bytes: self.host_staged_bytes - rhs.host_staged_bytes,
            pe_moved_bytes: self.pe_moved_bytes - rhs.pe_moved_bytes,
            kernel_launches: self.kernel_launches - rhs.kernel_launches,
        }
    }
}

/// Handle to a buffer spilled to host memory.
#[derive(Debug, PartialEq, Eq, Hash)]
pub struct StageHandle(u64);

#[derive(Debug, Clone)]
pub struct PimMachine {
    topology: Topology,
    mram: Vec<Vec<u8>>,
    counters: CostCounters,
    staging: HashMap<u64, Vec<u8>>,
    next_handle: u64,
}

fn check_aligned(offset: usize) -> Result<(), MachineError> {
    if !offset.is_multiple_of(LANE_BYTES) {
        return Err(MachineError::Misaligned { offset });
    }
    Ok(())
}

impl PimMachine {
    pub fn new(topology: Topology) -> Self {
        Self {
            topology,
            mram: vec![Vec::new(); topology.total_pes()],
            counters: CostCounters::default(),
            staging: HashMap::new(),
            next_handle: 0,
        }
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    fn pe_index(&self, pe: PeId) -> Result<usize, MachineError> {
        self.topology.decompose(pe)?;
        Ok(pe.0)
    }

    pub fn mram(&self, pe: PeId) -> &[u8] {
        &self.mram[pe.0]
    }

    /// Places `data` in a PE's MRAM without touching the counters. Used to
    /// set up inputs the way a PE kernel would have produced them.
    pub fn load_mram(&mut self, pe: PeId, offset: usize, data: &[u8]) -> Result<(), MachineError> {
        let i = self.pe_index(pe)?;
        let m = &mut self.mram[i];
        if m.len() < offset + data.len() {
            m.resize(offset + data.len(), 0);
        }
        m[offset..offset + data.len()].copy_from_slice(data);
        Ok(())
    }

    /// PIM-domain burst: lane `i` carries bytes `[offset, offset + 8)` of
    /// member `i`.
    pub fn read_burst(&mut self, group: EntangledGroup, offset: usize) -> Result<Block64, MachineError> {
        check_aligned(offset)?;
        let mut out = Block64::ZERO;
        for (lane, pe) in group.members().into_iter().enumerate() {
            let m = self.mram.get(pe.0).ok_or(TopologyError::OutOfRange {
                pe: pe.0,
                total: self.topology.total_pes(),
            })?;
            if m.len() < offset + LANE_BYTES {
                return Err(MachineError::ShortMram {
                    pe: pe.0,
                    need: offset + LANE_BYTES,
                    have: m.len(),
                });
            }
            for beat in 0..LANE_BYTES {
                out.0[beat * LANES + lane] = m[offset + beat];
            }
        }
        self.counters.bus_bytes += BLOCK_BYTES as u64;
        Ok(out)
    }

    pub fn write_burst(&mut self, group: EntangledGroup, offset: usize, b: &Block64) -> Result<(), MachineError> {
        check_aligned(offset)?;
        self.topology.entangled_group(group.id())?;
        for (lane, pe) in group.members().into_iter().enumerate() {
            let m = &mut self.mram[pe.0];
            if m.len() < offset + LANE_BYTES {
                m.resize(offset + LANE_BYTES, 0);
            }
            for beat in 0..LANE_BYTES {
                m[offset + beat] = b.0[beat * LANES + lane];
            }
        }
        self.counters.bus_bytes += BLOCK_BYTES as u64;
        Ok(())
    }

    /// Runs `f` as one batch of PE kernels (a single launch across PEs).
    pub fn kernel_batch<R>(
        &mut self,
        f: impl FnOnce(&mut KernelBatch<'_>) -> Result<R, MachineError>,
    ) -> Result<R, MachineError> {
        self.counters.kernel_launches += 1;
        let mut batch = KernelBatch {
            topology: &self.topology,
            mram: &mut self.mram,
            counters: &mut self.counters,
        };
        f(&mut batch)
    }

    /// Rotates `num_blocks` blocks at `base` left by `rotate_by` slots.
    pub fn pe_kernel_block_rotate(
        &mut self,
        pe: PeId,
        base: usize,
        block_size: usize,
        num_blocks: usize,
        rotate_by: usize,
    ) -> Result<(), MachineError> {
        self.kernel_batch(|k| k.block_rotate(pe, base, block_size, num_blocks, rotate_by))
    }

    /// New slot `s` receives old block `perm[s]`.
    pub fn pe_kernel_permute(&mut self, pe: PeId, base: usize, block_size: usize, perm: &[usize]) -> Result<(), MachineError> {
        self.kernel_batch(|k| k.permute(pe, base, block_size, perm))
    }

    pub fn host_stage(&mut self, bytes: &[u8]) -> StageHandle {
        let h = self.next_handle;
        self.next_handle += 1;
        self.staging.insert(h, bytes.to_vec());
        self.counters.host_staged_bytes += bytes.len() as u64;
        StageHandle(h)
    }

    pub fn host_unstage(&mut self, handle: StageHandle) -> Result<Vec<u8>, MachineError> {
        self.staging.remove(&handle.0).ok_or(MachineError::UnknownHandle(handle.0))
    }

    pub fn snapshot_counters(&self) -> CostCounters {
        self.counters
    }

    pub fn reset_counters(&mut self) {
        self.counters = CostCounters::default();
    }

    pub fn host_dt(&mut self, b: &Block64) -> Block64 {
        self.counters.dt_blocks += 1;
        codec::domain_transfer(b)
    }

    pub fn host_rot_word(&mut self, b: &Block64, k: usize, mask: LaneMask) -> Result<Block64, MachineError> {
        let out = codec::rot_word_masked(b, k, mask)?;
        self.counters.host_rot_ops += 1;
        Ok(out)
    }

    pub fn host_rot_lane(&mut self, b: &Block64, k: usize, mask: LaneMask) -> Result<Block64, MachineError> {
        let out = codec::rot_lane_masked(b, k, mask)?;
        self.counters.host_rot_ops += 1;
        Ok(out)
    }

    pub fn host_reduce(&mut self, acc: &Block64, b: &Block64, dtype: ElementType, op: ReduceOp) -> Block64 {
        self.counters.host_reduce_ops += 1;
        codec::reduce_host_words(acc, b, dtype, op)
    }
}

/// PE-side kernels inside one launch. Each PE touches only its own MRAM.
pub struct KernelBatch<'a> {
    topology: &'a Topology,
    mram: &'a mut Vec<Vec<u8>>,
    counters: &'a mut CostCounters,
}

impl KernelBatch<'_> {
    fn region(&mut self, pe: PeId, base: usize, len: usize) -> Result<&mut [u8], MachineError> {
        self.topology.decompose(pe)?;
        let m = &mut self.mram[pe.0];
        if base + len > m.len() {
            return Err(MachineError::OutOfRegion {
                pe: pe.0,
                end: base + len,
                len: m.len(),
            });
        }
        Ok(&mut m[base..base + len])
    }

    pub fn block_rotate(
        &mut self,
        pe: PeId,
        base: usize,
        block_size: usize,
        num_blocks: usize,
        rotate_by: usize,
    ) -> Result<(), MachineError> {
        check_aligned(base)?;
        if block_size < LANE_BYTES || !block_size.is_multiple_of(LANE_BYTES) {
            return Err(MachineError::BadBlockSize(block_size));
        }
        if rotate_by >= num_blocks {
            return Err(MachineError::BadRotation { rotate_by, num_blocks });
        }
        let region = self.region(pe, base, block_size * num_blocks)?;
        region.rotate_left(rotate_by * block_size);
        self.counters.pe_moved_bytes += (block_size * num_blocks) as u64;
        Ok(())
    }

    pub fn permute(&mut self, pe: PeId, base: usize, block_size: usize, perm: &[usize]) -> Result<(), MachineError> {
        if block_size == 0 {
            return Err(MachineError::BadBlockSize(0));
        }
        let mut seen = vec![false; perm.len()];
        for &p in perm {
            if p >= perm.len() || std::mem::replace(&mut seen[p], true) {
                return Err(MachineError::NotAPermutation(perm.to_vec()));
            }
        }
        let region = self.region(pe, base, block_size * perm.len())?;
        let old = region.to_vec();
        for (slot, &src) in perm.iter().enumerate() {
            region[slot * block_size..(slot + 1) * block_size]
                .copy_from_slice(&old[src * block_size..(src + 1) * block_size]);
        }
        self.counters.pe_moved_bytes += (block_size * perm.len()) as u64;
        Ok(())
    }
}
