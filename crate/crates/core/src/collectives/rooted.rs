//! Scatter, Gather and Broadcast. The host holds one buffer per group.
//!
//! With in-register modulation the host assembles or splits each burst
//! directly from or into the group buffers; no reordering on the PEs is
//! needed since every lane maps to a fixed (group, member) pair.

use crate::codec::{Block64, LANES};
use crate::machine::PimMachine;

use super::{baseline, CollectiveError, Ctx, Path};

type Result<T> = std::result::Result<T, CollectiveError>;

/// Writes host-domain bursts whose word for lane `lane` of EG `ei`, chunk `c`
/// is produced by `word`.
fn write_assembled(
    m: &mut PimMachine,
    ctx: &Ctx<'_>,
    chunks: usize,
    word: impl Fn(usize, usize) -> [u8; 8],
) -> Result<()> {
    for eg in ctx.lay.node_egs(ctx.hc) {
        for c in 0..chunks {
            let mut h = Block64::ZERO;
            for lane in 0..LANES {
                h.set_word(lane, &word(eg.member(lane).0, c));
            }
            let x = m.host_dt(&h);
            m.write_burst(eg, ctx.req.base_offset + c * 8, &x)?;
        }
    }
    Ok(())
}

fn chunk(buf: &[u8], off: usize) -> [u8; 8] {
    buf[off..off + 8].try_into().expect("8 bytes")
}

pub(super) fn scatter(m: &mut PimMachine, ctx: &Ctx<'_>, bufs: &[Vec<u8>]) -> Result<()> {
    if ctx.path == Path::Baseline {
        return baseline::scatter(m, ctx.hc, ctx, bufs);
    }
    let slot = ctx.req.bytes_per_pe / ctx.lay.group_size;
    write_assembled(m, ctx, slot / 8, |pe, c| {
        let (g, p) = ctx.lay.node_pos[pe];
        chunk(&bufs[g], p * slot + c * 8)
    })
}

pub(super) fn broadcast(m: &mut PimMachine, ctx: &Ctx<'_>, bufs: &[Vec<u8>]) -> Result<()> {
    write_assembled(m, ctx, ctx.req.bytes_per_pe / 8, |pe, c| {
        chunk(&bufs[ctx.lay.node_pos[pe].0], c * 8)
    })
}

pub(super) fn gather(m: &mut PimMachine, ctx: &Ctx<'_>) -> Result<Vec<Vec<u8>>> {
    if ctx.path == Path::Baseline {
        return baseline::gather(m, ctx.hc, ctx);
    }
    let bytes = ctx.req.bytes_per_pe;
    let mut out = vec![vec![0u8; bytes * ctx.lay.group_size]; ctx.lay.groups.len()];
    for eg in ctx.lay.node_egs(ctx.hc) {
        for c in 0..bytes / 8 {
            let x = m.read_burst(eg, ctx.req.base_offset + c * 8)?;
            let h = m.host_dt(&x);
            for lane in 0..LANES {
                let (g, p) = ctx.lay.node_pos[eg.member(lane).0];
                out[g][p * bytes + c * 8..][..8].copy_from_slice(&h.word(lane));
            }
        }
    }
    Ok(out)
}
