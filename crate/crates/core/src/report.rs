//! Per-run reports: JSON objects and CSV rows.

use serde::{Deserialize, Serialize};

use crate::codec::{ElementType, ReduceOp, BLOCK_BYTES};
use crate::collectives::{CommRequest, Primitive, TechniqueFlags};
use crate::hypercube::HypercubeConfig;
use crate::machine::CostCounters;

/// CSV columns, in order.
pub const CSV_HEADER: [&str; 15] = [
    "primitive",
    "dtype",
    "op",
    "dims",
    "mask",
    "group_size",
    "bytes_per_pe",
    "flags",
    "bus_bytes",
    "dt_blocks",
    "host_rot_ops",
    "host_reduce_ops",
    "host_staged_bytes",
    "pe_moved_bytes",
    "kernel_launches",
];

/// Cost split by where the work happens, in 64-byte block units.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Breakdown {
    pub pe_side_modulation: u64,
    pub bus_transfer: u64,
    pub domain_transfer: u64,
    pub host_rotation: u64,
    pub host_reduction: u64,
    pub host_staging: u64,
}

impl From<&CostCounters> for Breakdown {
    fn from(c: &CostCounters) -> Self {
        let blocks = |bytes: u64| bytes.div_ceil(BLOCK_BYTES as u64);
        Breakdown {
            pe_side_modulation: blocks(c.pe_moved_bytes),
            bus_transfer: blocks(c.bus_bytes),
            domain_transfer: c.dt_blocks,
            host_rotation: c.host_rot_ops,
            host_reduction: c.host_reduce_ops,
            host_staging: blocks(c.host_staged_bytes),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunReport {
    pub primitive: Primitive,
    pub dtype: ElementType,
    pub op: Option<ReduceOp>,
    pub dims: Vec<usize>,
    pub mask: String,
    pub group_size: usize,
    pub groups: usize,
    pub bytes_per_pe: usize,
    pub flags: TechniqueFlags,
    pub counters: CostCounters,
    pub breakdown: Breakdown,
}

impl RunReport {
    pub fn new(hc: &HypercubeConfig, req: &CommRequest, groups: usize, counters: CostCounters) -> Self {
        RunReport {
            primitive: req.primitive,
            dtype: req.dtype,
            op: if req.primitive.needs_op() { req.op } else { None },
            dims: hc.dims().to_vec(),
            mask: req.mask.to_string(),
            group_size: hc.group_size(&req.mask),
            groups,
            bytes_per_pe: req.bytes_per_pe,
            flags: req.flags,
            breakdown: Breakdown::from(&counters),
            counters,
        }
    }

    pub fn dims_label(&self) -> String {
        self.dims.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x")
    }

    /// Fields in [`CSV_HEADER`] order.
    pub fn csv_record(&self) -> Vec<String> {
        let c = &self.counters;
        vec![
            self.primitive.to_string(),
            self.dtype.to_string(),
            self.op.map(|o| o.to_string()).unwrap_or_default(),
            self.dims_label(),
            self.mask.clone(),
            self.group_size.to_string(),
            self.bytes_per_pe.to_string(),
            self.flags.label(),
            c.bus_bytes.to_string(),
            c.dt_blocks.to_string(),
            c.host_rot_ops.to_string(),
            c.host_reduce_ops.to_string(),
            c.host_staged_bytes.to_string(),
            c.pe_moved_bytes.to_string(),
            c.kernel_launches.to_string(),
        ]
    }
}
