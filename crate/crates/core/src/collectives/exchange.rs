//! AlltoAll and AllGather.
//!
//! Buffers are split into `ge` partitions of `gl` slots, one partition per
//! destination entangled group. The pre-kernel rotates each partition of
//! member `j` left by `j`, which lines every burst column up so that a single
//! lane rotation by `(gl - s) % gl` delivers slot `s` to its destinations.
//! The post-kernel `newslot q := oldslot (j - q) mod gl` undoes the skew.

use crate::machine::PimMachine;

use super::{baseline, CollectiveError, Ctx, Path};

type Result<T> = std::result::Result<T, CollectiveError>;

/// `perm[q] = (j - q) mod gl`, repeated over `parts` partitions.
pub(super) fn unskew_perm(j: usize, gl: usize, parts: usize) -> Vec<usize> {
    (0..parts)
        .flat_map(|e| (0..gl).map(move |q| e * gl + (j + gl - q) % gl))
        .collect()
}

/// Pre-kernel shared by AlltoAll and the reductions: rotate each partition
/// of `gl` slots of member `j` left by `j` (or right by `j` when `undo`).
pub(super) fn skew_partitions(m: &mut PimMachine, ctx: &Ctx<'_>, undo: bool) -> Result<()> {
    let (base, gl, ge) = (ctx.req.base_offset, ctx.lay.gl, ctx.lay.ge);
    let slot = ctx.req.bytes_per_pe / ctx.lay.group_size;
    m.kernel_batch(|k| {
        for pe in ctx.lay.node_pes() {
            let j = ctx.lay.lane_index(pe);
            let by = if undo { (gl - j) % gl } else { j };
            for e in 0..ge {
                k.block_rotate(pe, base + e * gl * slot, slot, gl, by)?;
            }
        }
        Ok(())
    })?;
    Ok(())
}

pub(super) fn alltoall(m: &mut PimMachine, ctx: &Ctx<'_>) -> Result<()> {
    if ctx.path == Path::Baseline {
        return baseline::alltoall(m, ctx.hc, ctx);
    }
    let (base, gl, ge) = (ctx.req.base_offset, ctx.lay.gl, ctx.lay.ge);
    let slot = ctx.req.bytes_per_pe / ctx.lay.group_size;
    let at = |part: usize, s: usize, c: usize| base + (part * gl + s) * slot + c * 8;

    skew_partitions(m, ctx, false)?;
    for set in &ctx.lay.sets {
        for e in 0..ge {
            for e2 in e..ge {
                for s in 0..gl {
                    let k = (gl - s) % gl;
                    for c in 0..slot / 8 {
                        // Slot s of partition e2 on EG e swaps with slot s of
                        // partition e on EG e2.
                        let (here, there) = (at(e2, s, c), at(e, s, c));
                        let x = m.read_burst(set.egs[e], here)?;
                        if e == e2 {
                            let y = ctx.modulate(m, &x, k)?;
                            m.write_burst(set.egs[e], here, &y)?;
                        } else {
                            let y = m.read_burst(set.egs[e2], there)?;
                            let x2 = ctx.modulate(m, &x, k)?;
                            let y2 = ctx.modulate(m, &y, k)?;
                            m.write_burst(set.egs[e2], there, &x2)?;
                            m.write_burst(set.egs[e], here, &y2)?;
                        }
                    }
                }
            }
        }
    }
    m.kernel_batch(|k| {
        for pe in ctx.lay.node_pes() {
            let perm = unskew_perm(ctx.lay.lane_index(pe), gl, 1);
            for e in 0..ge {
                k.permute(pe, base + e * gl * slot, slot, &perm)?;
            }
        }
        Ok(())
    })?;
    Ok(())
}

pub(super) fn all_gather(m: &mut PimMachine, ctx: &Ctx<'_>) -> Result<()> {
    if ctx.path == Path::Baseline {
        return baseline::all_gather(m, ctx.hc, ctx);
    }
    let (base, gl, ge) = (ctx.req.base_offset, ctx.lay.gl, ctx.lay.ge);
    let contrib = ctx.req.bytes_per_pe;
    let mask = ctx.mask();

    // Output slot 0 overlaps the input, so chunk c of every EG is read before
    // EG 0 writes slot 0 chunk c.
    for set in &ctx.lay.sets {
        for c in (0..contrib / 8).rev() {
            for e in (0..ge).rev() {
                let x = m.read_burst(set.egs[e], base + c * 8)?;
                let host = if ctx.path == Path::CrossDomain {
                    None
                } else {
                    let h = m.host_dt(&x);
                    Some(ctx.spill(m, h)?)
                };
                for s in 0..gl {
                    let k = (gl - s) % gl;
                    let y = match host {
                        None if k == 0 => x,
                        None => m.host_rot_lane(&x, k, mask)?,
                        Some(h) if k == 0 => m.host_dt(&h),
                        Some(h) => {
                            let r = m.host_rot_word(&h, k, mask)?;
                            m.host_dt(&r)
                        }
                    };
                    let off = base + (e * gl + s) * contrib + c * 8;
                    for eg in &set.egs {
                        m.write_burst(*eg, off, &y)?;
                    }
                }
            }
        }
    }
    m.kernel_batch(|k| {
        for pe in ctx.lay.node_pes() {
            let perm = unskew_perm(ctx.lay.lane_index(pe), gl, ge);
            k.permute(pe, base, contrib, &perm)?;
        }
        Ok(())
    })?;
    Ok(())
}
