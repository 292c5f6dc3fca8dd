//! Reference semantics of the eight primitives on plain per-member byte
//! arrays. Nothing here touches the machine or the codec; element decoding
//! and the reduction ops are reimplemented so that a codec bug cannot hide
//! a pipeline bug.

use thiserror::Error;

use crate::codec::{ElementType, ReduceOp};
use crate::collectives::{CommRequest, Primitive};
use crate::hypercube::HypercubeConfig;
use crate::machine::PimMachine;
use crate::topology::PeId;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OracleError {
    #[error("size mismatch: {0}")]
    SizeMismatch(String),
    #[error("{0} needs a reduction op")]
    MissingOp(Primitive),
    #[error("{0} needs a root buffer")]
    MissingRoot(Primitive),
}

/// Member buffers of one communication group, in member order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlainGroupState {
    pub members: Vec<Vec<u8>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OracleOutput {
    pub state: PlainGroupState,
    pub host: Option<Vec<u8>>,
}

fn width(dtype: ElementType) -> usize {
    match dtype {
        ElementType::U8 => 1,
        ElementType::U16 => 2,
        ElementType::U32 => 4,
        ElementType::U64 => 8,
    }
}

fn load(bytes: &[u8]) -> u64 {
    bytes.iter().rev().fold(0u64, |acc, &b| (acc << 8) | b as u64)
}

fn store(v: u64, out: &mut [u8]) {
    for (i, b) in out.iter_mut().enumerate() {
        *b = (v >> (8 * i)) as u8;
    }
}

fn combine(op: ReduceOp, a: u64, b: u64, w: usize) -> u64 {
    let keep = if w == 8 { u64::MAX } else { (1u64 << (8 * w)) - 1 };
    match op {
        ReduceOp::Sum => a.wrapping_add(b) & keep,
        ReduceOp::Min => a.min(b),
        ReduceOp::Max => a.max(b),
        ReduceOp::BitOr => a | b,
    }
}

/// Element-wise fold of equal-length arrays.
pub fn fold(arrays: &[&[u8]], dtype: ElementType, op: ReduceOp) -> Vec<u8> {
    let w = width(dtype);
    let mut out = arrays[0].to_vec();
    for a in &arrays[1..] {
        for (o, x) in out.chunks_mut(w).zip(a.chunks(w)) {
            let v = combine(op, load(o), load(x), w);
            store(v, o);
        }
    }
    out
}

impl PlainGroupState {
    pub fn new(members: Vec<Vec<u8>>) -> Result<Self, OracleError> {
        let len = members.first().map_or(0, Vec::len);
        if members.is_empty() || members.iter().any(|m| m.len() != len) || !len.is_multiple_of(8) {
            return Err(OracleError::SizeMismatch(
                "member arrays must be non-empty, of equal length and a multiple of 8 bytes".into(),
            ));
        }
        Ok(Self { members })
    }

    pub fn size(&self) -> usize {
        self.members.len()
    }

    fn len(&self) -> usize {
        self.members[0].len()
    }

    fn slot(&self, member: usize, s: usize) -> &[u8] {
        let n = self.len() / self.size();
        &self.members[member][s * n..(s + 1) * n]
    }
}

/// Runs `primitive` on one group. `root` is the host buffer for Scatter and
/// Broadcast; a Scatter or Broadcast state only supplies the group size.
pub fn oracle_run(
    primitive: Primitive,
    state: &PlainGroupState,
    dtype: ElementType,
    op: Option<ReduceOp>,
    root: Option<&[u8]>,
) -> Result<OracleOutput, OracleError> {
    let g = state.size();
    let need_op = || op.ok_or(OracleError::MissingOp(primitive));
    let need_root = || root.ok_or(OracleError::MissingRoot(primitive));
    let slotted = |len: usize| {
        if !len.is_multiple_of(8 * g) {
            return Err(OracleError::SizeMismatch(format!(
                "{primitive} needs a length divisible by 8 x {g}, got {len}"
            )));
        }
        Ok(())
    };
    let keep = |members| PlainGroupState { members };
    let out = match primitive {
        Primitive::AlltoAll => {
            slotted(state.len())?;
            let members = (0..g)
                .map(|p| (0..g).flat_map(|s| state.slot(s, p).to_vec()).collect())
                .collect();
            OracleOutput {
                state: keep(members),
                host: None,
            }
        }
        Primitive::ReduceScatter => {
            slotted(state.len())?;
            let op = need_op()?;
            let members = (0..g)
                .map(|p| {
                    let parts: Vec<&[u8]> = (0..g).map(|q| state.slot(q, p)).collect();
                    fold(&parts, dtype, op)
                })
                .collect();
            OracleOutput {
                state: keep(members),
                host: None,
            }
        }
        Primitive::AllGather => {
            let cat = state.members.concat();
            OracleOutput {
                state: keep(vec![cat; g]),
                host: None,
            }
        }
        Primitive::AllReduce => {
            let op = need_op()?;
            let parts: Vec<&[u8]> = state.members.iter().map(Vec::as_slice).collect();
            OracleOutput {
                state: keep(vec![fold(&parts, dtype, op); g]),
                host: None,
            }
        }
        Primitive::Scatter => {
            let root = need_root()?;
            slotted(root.len())?;
            let n = root.len() / g;
            OracleOutput {
                state: keep(root.chunks(n).map(<[u8]>::to_vec).collect()),
                host: None,
            }
        }
        Primitive::Gather => OracleOutput {
            state: state.clone(),
            host: Some(state.members.concat()),
        },
        Primitive::Reduce => {
            let op = need_op()?;
            let parts: Vec<&[u8]> = state.members.iter().map(Vec::as_slice).collect();
            OracleOutput {
                state: state.clone(),
                host: Some(fold(&parts, dtype, op)),
            }
        }
        Primitive::Broadcast => OracleOutput {
            state: keep(vec![need_root()?.to_vec(); g]),
            host: None,
        },
    };
    Ok(out)
}

/// Expected outcome of a request over every group of a hypercube.
#[derive(Debug, Clone)]
pub struct Expected {
    /// Expected bytes at `base_offset` for every node PE.
    pub pe_regions: Vec<Vec<u8>>,
    pub host: Option<Vec<Vec<u8>>>,
}

/// Runs the oracle for every group. `pe_inputs` holds each node PE's bytes
/// at `base_offset` before the call (ignored for Scatter and Broadcast).
pub fn expected_for_request(
    hc: &HypercubeConfig,
    req: &CommRequest,
    pe_inputs: &[Vec<u8>],
    host_buffers: Option<&[Vec<u8>]>,
) -> Result<Expected, OracleError> {
    let groups = hc.slice_groups(&req.mask);
    let g = hc.group_size(&req.mask);
    let mut pe_regions = vec![Vec::new(); hc.num_nodes()];
    let mut host = req.primitive.returns_host_buffers().then(Vec::new);
    for (gi, group) in groups.iter().enumerate() {
        let members = if req.primitive.takes_host_buffers() {
            vec![vec![0u8; 8]; g]
        } else {
            group.members.iter().map(|pe| pe_inputs[pe.0].clone()).collect()
        };
        let state = PlainGroupState::new(members)?;
        let root = match host_buffers {
            Some(b) => Some(b.get(gi).ok_or_else(|| OracleError::SizeMismatch("too few host buffers".into()))?),
            None => None,
        };
        let out = oracle_run(req.primitive, &state, req.dtype, req.op, root.map(Vec::as_slice))?;
        for (pe, bytes) in group.members.iter().zip(out.state.members) {
            pe_regions[pe.0] = bytes;
        }
        if let (Some(h), Some(o)) = (host.as_mut(), out.host) {
            h.push(o);
        }
    }
    Ok(Expected { pe_regions, host })
}

/// Compares the machine against `expected`; returns a description of the
/// first difference.
pub fn compare(
    m: &PimMachine,
    hc: &HypercubeConfig,
    req: &CommRequest,
    expected: &Expected,
    host_output: Option<&[Vec<u8>]>,
) -> Result<(), String> {
    let base = req.base_offset;
    for (pe, want) in expected.pe_regions.iter().enumerate().take(hc.num_nodes()) {
        let mram = m.mram(PeId(pe));
        let got = mram.get(base..base + want.len()).ok_or_else(|| {
            format!("PE {pe}: MRAM holds {} bytes, expected at least {}", mram.len(), base + want.len())
        })?;
        if got != want.as_slice() {
            let i = got.iter().zip(want).position(|(a, b)| a != b).unwrap_or(0);
            return Err(format!(
                "PE {pe}: byte {i} at offset {} is {:#04x}, expected {:#04x}",
                base + i,
                got[i],
                want[i]
            ));
        }
    }
    match (&expected.host, host_output) {
        (None, None) => Ok(()),
        (Some(want), Some(got)) => {
            if want.len() != got.len() {
                return Err(format!("{} host buffers returned, expected {}", got.len(), want.len()));
            }
            for (g, (w, h)) in want.iter().zip(got).enumerate() {
                if w != h {
                    let i = w.iter().zip(h).position(|(a, b)| a != b).unwrap_or(w.len().min(h.len()));
                    return Err(format!("host buffer {g} differs from the reference at byte {i}"));
                }
            }
            Ok(())
        }
        (Some(_), None) => Err("no host output returned".into()),
        (None, Some(_)) => Err("unexpected host output".into()),
    }
}
