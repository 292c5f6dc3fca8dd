//! Host-centric pipelines: every burst is read, domain-transferred and
//! spilled to host memory, the data is reordered (and reduced) there, and
//! the result goes back through another staging pass and domain transfer.

use crate::codec::{Block64, BLOCK_BYTES, LANES};
use crate::hypercube::HypercubeConfig;
use crate::machine::PimMachine;

use super::{CollectiveError, Ctx};

type Result<T> = std::result::Result<T, CollectiveError>;

/// Reads `len` bytes at `base` from every node PE through one staged image.
fn read_image(m: &mut PimMachine, hc: &HypercubeConfig, base: usize, len: usize) -> Result<Vec<Vec<u8>>> {
    let chunks = len / 8;
    let egs: Vec<_> = hc.topology().entangled_groups().take(hc.num_entangled_groups()).collect();
    let mut image = Vec::with_capacity(egs.len() * chunks * BLOCK_BYTES);
    for &eg in &egs {
        for c in 0..chunks {
            let b = m.read_burst(eg, base + c * 8)?;
            image.extend_from_slice(m.host_dt(&b).as_bytes());
        }
    }
    let h = m.host_stage(&image);
    let image = m.host_unstage(h)?;
    let mut per_pe = vec![vec![0u8; len]; hc.num_nodes()];
    for (ei, _) in egs.iter().enumerate() {
        for c in 0..chunks {
            let block = &image[(ei * chunks + c) * BLOCK_BYTES..][..BLOCK_BYTES];
            for lane in 0..LANES {
                per_pe[ei * LANES + lane][c * 8..c * 8 + 8].copy_from_slice(&block[lane * 8..lane * 8 + 8]);
            }
        }
    }
    Ok(per_pe)
}

/// Writes each node PE's buffer at `base` through one staged image.
fn write_image(m: &mut PimMachine, hc: &HypercubeConfig, base: usize, per_pe: &[Vec<u8>]) -> Result<()> {
    let len = per_pe[0].len();
    let chunks = len / 8;
    let n_egs = hc.num_entangled_groups();
    let mut image = Vec::with_capacity(n_egs * chunks * BLOCK_BYTES);
    for ei in 0..n_egs {
        for c in 0..chunks {
            for lane in 0..LANES {
                image.extend_from_slice(&per_pe[ei * LANES + lane][c * 8..c * 8 + 8]);
            }
        }
    }
    let h = m.host_stage(&image);
    let image = m.host_unstage(h)?;
    for (ei, eg) in hc.topology().entangled_groups().take(n_egs).enumerate() {
        for c in 0..chunks {
            let host = Block64::from_slice(&image[(ei * chunks + c) * BLOCK_BYTES..][..BLOCK_BYTES]).expect("block");
            let pim = m.host_dt(&host);
            m.write_burst(eg, base + c * 8, &pim)?;
        }
    }
    Ok(())
}

/// Element-wise fold of equal-length host buffers. The operands are first
/// gathered into a staged reduction image.
fn fold(m: &mut PimMachine, ctx: &Ctx<'_>, operands: &[&[u8]]) -> Result<Vec<u8>> {
    let len = operands[0].len();
    let image: Vec<u8> = operands.concat();
    let h = m.host_stage(&image);
    let image = m.host_unstage(h)?;
    let mut out = vec![0u8; len];
    for start in (0..len).step_by(BLOCK_BYTES) {
        let n = BLOCK_BYTES.min(len - start);
        let block = |i: usize| {
            let mut b = Block64::ZERO;
            b.0[..n].copy_from_slice(&image[i * len + start..][..n]);
            b
        };
        let mut acc = block(0);
        for i in 1..operands.len() {
            acc = m.host_reduce(&acc, &block(i), ctx.req.dtype, ctx.op());
        }
        out[start..start + n].copy_from_slice(&acc.0[..n]);
    }
    Ok(out)
}

fn members(ctx: &Ctx<'_>, g: usize) -> Vec<usize> {
    ctx.lay.groups[g].members.iter().map(|p| p.0).collect()
}

pub(super) fn alltoall(m: &mut PimMachine, hc: &HypercubeConfig, ctx: &Ctx<'_>) -> Result<()> {
    let (base, bytes, g) = (ctx.req.base_offset, ctx.req.bytes_per_pe, ctx.lay.group_size);
    let slot = bytes / g;
    let input = read_image(m, hc, base, bytes)?;
    let mut out = vec![vec![0u8; bytes]; input.len()];
    for gi in 0..ctx.lay.groups.len() {
        let mem = members(ctx, gi);
        for (p, &dst) in mem.iter().enumerate() {
            for (s, &src) in mem.iter().enumerate() {
                out[dst][s * slot..(s + 1) * slot].copy_from_slice(&input[src][p * slot..(p + 1) * slot]);
            }
        }
    }
    write_image(m, hc, base, &out)
}

pub(super) fn all_gather(m: &mut PimMachine, hc: &HypercubeConfig, ctx: &Ctx<'_>) -> Result<()> {
    let (base, k) = (ctx.req.base_offset, ctx.req.bytes_per_pe);
    let input = read_image(m, hc, base, k)?;
    let mut out = vec![Vec::new(); input.len()];
    for gi in 0..ctx.lay.groups.len() {
        let mem = members(ctx, gi);
        let cat: Vec<u8> = mem.iter().flat_map(|&q| input[q].iter().copied()).collect();
        for &p in &mem {
            out[p] = cat.clone();
        }
    }
    write_image(m, hc, base, &out)
}

pub(super) fn reduce_scatter(m: &mut PimMachine, hc: &HypercubeConfig, ctx: &Ctx<'_>) -> Result<()> {
    let (base, bytes, g) = (ctx.req.base_offset, ctx.req.bytes_per_pe, ctx.lay.group_size);
    let slot = bytes / g;
    let input = read_image(m, hc, base, bytes)?;
    let mut out = vec![Vec::new(); input.len()];
    for gi in 0..ctx.lay.groups.len() {
        let mem = members(ctx, gi);
        for (p, &dst) in mem.iter().enumerate() {
            let ops: Vec<&[u8]> = mem.iter().map(|&q| &input[q][p * slot..(p + 1) * slot]).collect();
            out[dst] = fold(m, ctx, &ops)?;
        }
    }
    write_image(m, hc, base, &out)
}

pub(super) fn all_reduce(m: &mut PimMachine, hc: &HypercubeConfig, ctx: &Ctx<'_>) -> Result<()> {
    let (base, bytes) = (ctx.req.base_offset, ctx.req.bytes_per_pe);
    let input = read_image(m, hc, base, bytes)?;
    let mut out = vec![Vec::new(); input.len()];
    for gi in 0..ctx.lay.groups.len() {
        let mem = members(ctx, gi);
        let ops: Vec<&[u8]> = mem.iter().map(|&q| input[q].as_slice()).collect();
        let r = fold(m, ctx, &ops)?;
        for &p in &mem {
            out[p] = r.clone();
        }
    }
    write_image(m, hc, base, &out)
}

pub(super) fn reduce(m: &mut PimMachine, hc: &HypercubeConfig, ctx: &Ctx<'_>) -> Result<Vec<Vec<u8>>> {
    let (base, bytes) = (ctx.req.base_offset, ctx.req.bytes_per_pe);
    let input = read_image(m, hc, base, bytes)?;
    let mut out = Vec::with_capacity(ctx.lay.groups.len());
    for gi in 0..ctx.lay.groups.len() {
        let ops: Vec<&[u8]> = members(ctx, gi).iter().map(|&q| input[q].as_slice()).collect();
        let r = fold(m, ctx, &ops)?;
        let h = m.host_stage(&r);
        out.push(m.host_unstage(h)?);
    }
    Ok(out)
}

pub(super) fn gather(m: &mut PimMachine, hc: &HypercubeConfig, ctx: &Ctx<'_>) -> Result<Vec<Vec<u8>>> {
    let (base, bytes) = (ctx.req.base_offset, ctx.req.bytes_per_pe);
    let input = read_image(m, hc, base, bytes)?;
    Ok((0..ctx.lay.groups.len())
        .map(|gi| members(ctx, gi).iter().flat_map(|&q| input[q].iter().copied()).collect())
        .collect())
}

pub(super) fn scatter(m: &mut PimMachine, hc: &HypercubeConfig, ctx: &Ctx<'_>, bufs: &[Vec<u8>]) -> Result<()> {
    let slot = ctx.req.bytes_per_pe / ctx.lay.group_size;
    let per_pe: Vec<Vec<u8>> = (0..hc.num_nodes())
        .map(|pe| {
            let (g, p) = ctx.lay.node_pos[pe];
            bufs[g][p * slot..(p + 1) * slot].to_vec()
        })
        .collect();
    write_image(m, hc, ctx.req.base_offset, &per_pe)
}
