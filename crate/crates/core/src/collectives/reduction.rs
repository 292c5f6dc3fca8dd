//! ReduceScatter, AllReduce and Reduce.
//!
//! All three reuse the AlltoAll skew: after the pre-kernel, the `gl` bursts
//! of one partition column, each rotated by `(gl - s) % gl`, hold in lane `j`
//! exactly the operands destined to member `j`. The host folds them in a
//! register. At 8-bit width the fold is the same in either domain, so with
//! cross-domain modulation the block never leaves the PIM domain.

use crate::codec::{Block64, LANES};
use crate::machine::PimMachine;
use crate::topology::EntangledGroup;

use super::exchange::{skew_partitions, unskew_perm};
use super::{baseline, CollectiveError, Ctx, Path};

type Result<T> = std::result::Result<T, CollectiveError>;

impl Ctx<'_> {
    fn fold_in_pim_domain(&self) -> bool {
        self.path == Path::CrossDomain
    }

    /// Turns a burst into a fold operand rotated by `k`. Host domain unless
    /// folding in the PIM domain.
    fn operand(&self, m: &mut PimMachine, x: &Block64, k: usize) -> Result<Block64> {
        if self.fold_in_pim_domain() {
            return Ok(if k == 0 { *x } else { m.host_rot_lane(x, k, self.mask())? });
        }
        let h = m.host_dt(x);
        let h = self.spill(m, h)?;
        Ok(if k == 0 { h } else { m.host_rot_word(&h, k, self.mask())? })
    }

    /// Folds slot column `(part, *, c)` over every EG of the set.
    fn fold_column(&self, m: &mut PimMachine, egs: &[EntangledGroup], part: usize, c: usize) -> Result<Block64> {
        let (gl, base) = (self.lay.gl, self.req.base_offset);
        let slot = self.req.bytes_per_pe / self.lay.group_size;
        let mut acc: Option<Block64> = None;
        for eg in egs {
            for s in 0..gl {
                let x = m.read_burst(*eg, base + (part * gl + s) * slot + c * 8)?;
                let y = self.operand(m, &x, (gl - s) % gl)?;
                acc = Some(match acc {
                    None => y,
                    Some(a) => m.host_reduce(&a, &y, self.req.dtype, self.op()),
                });
            }
        }
        Ok(acc.expect("non-empty group"))
    }
}

pub(super) fn reduce_scatter(m: &mut PimMachine, ctx: &Ctx<'_>) -> Result<()> {
    if ctx.path == Path::Baseline {
        return baseline::reduce_scatter(m, ctx.hc, ctx);
    }
    let base = ctx.req.base_offset;
    let slot = ctx.req.bytes_per_pe / ctx.lay.group_size;
    skew_partitions(m, ctx, false)?;
    // Results land in partition 0 slot 0; chunk c there is read (as part of
    // target 0's column) before any EG writes it.
    for set in &ctx.lay.sets {
        for c in 0..slot / 8 {
            for (target, eg) in set.egs.iter().enumerate() {
                let r = ctx.fold_column(m, &set.egs, target, c)?;
                let r = if ctx.fold_in_pim_domain() { r } else { m.host_dt(&r) };
                m.write_burst(*eg, base + c * 8, &r)?;
            }
        }
    }
    Ok(())
}

pub(super) fn all_reduce(m: &mut PimMachine, ctx: &Ctx<'_>) -> Result<()> {
    if ctx.path == Path::Baseline {
        return baseline::all_reduce(m, ctx.hc, ctx);
    }
    let (base, gl, ge) = (ctx.req.base_offset, ctx.lay.gl, ctx.lay.ge);
    let slot = ctx.req.bytes_per_pe / ctx.lay.group_size;
    skew_partitions(m, ctx, false)?;
    for set in &ctx.lay.sets {
        for c in 0..slot / 8 {
            for part in 0..ge {
                let r = ctx.fold_column(m, &set.egs, part, c)?;
                let r = if ctx.fold_in_pim_domain() { r } else { m.host_dt(&r) };
                // Written back over the column just read, skewed like the
                // AlltoAll output so the same post-kernel applies.
                for s in 0..gl {
                    let k = (gl - s) % gl;
                    let y = if k == 0 { r } else { m.host_rot_lane(&r, k, ctx.mask())? };
                    for eg in &set.egs {
                        m.write_burst(*eg, base + (part * gl + s) * slot + c * 8, &y)?;
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

pub(super) fn reduce(m: &mut PimMachine, ctx: &Ctx<'_>) -> Result<Vec<Vec<u8>>> {
    match ctx.path {
        Path::Baseline => baseline::reduce(m, ctx.hc, ctx),
        Path::CrossDomain => reduce_bytewise(m, ctx),
        Path::PrStaged | Path::InRegister => reduce_wordwise(m, ctx),
    }
}

fn reduce_wordwise(m: &mut PimMachine, ctx: &Ctx<'_>) -> Result<Vec<Vec<u8>>> {
    let (bytes, gl) = (ctx.req.bytes_per_pe, ctx.lay.gl);
    let slot = bytes / ctx.lay.group_size;
    let mut out = vec![vec![0u8; bytes]; ctx.lay.groups.len()];
    skew_partitions(m, ctx, false)?;
    for set in &ctx.lay.sets {
        for c in 0..slot / 8 {
            for part in 0..ctx.lay.ge {
                let r = ctx.fold_column(m, &set.egs, part, c)?;
                for lane in 0..LANES {
                    let j = ctx.mask().compress(lane);
                    let off = (part * gl + j) * slot + c * 8;
                    out[set.lane_group[lane]][off..off + 8].copy_from_slice(&r.word(lane));
                }
            }
        }
    }
    skew_partitions(m, ctx, true)?;
    Ok(out)
}

/// Pre-kernel byte shuffle for the 8-bit reduce: within every run of
/// `8 * gl` bytes, byte `8t + beat` of member `j` takes old byte
/// `gl * beat + (j - t) mod gl`.
fn byte_shuffle(j: usize, gl: usize, len: usize) -> Vec<usize> {
    let run = 8 * gl;
    (0..len)
        .map(|i| {
            let (b, r) = (i / run, i % run);
            let (t, beat) = (r / 8, r % 8);
            b * run + gl * beat + (j + gl - t) % gl
        })
        .collect()
}

fn invert(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (s, &p) in perm.iter().enumerate() {
        inv[p] = s;
    }
    inv
}

/// 8-bit reduce without domain transfers. After the byte shuffle, burst `t`
/// of a run rotated by `t` holds in lane `i`, beat `beat` the byte
/// `gl * beat + i` of member `i + t`, so folding over `t` leaves the run's
/// result spread over the block in a fixed stride the host stores directly.
fn reduce_bytewise(m: &mut PimMachine, ctx: &Ctx<'_>) -> Result<Vec<Vec<u8>>> {
    let (base, bytes, gl) = (ctx.req.base_offset, ctx.req.bytes_per_pe, ctx.lay.gl);
    let run = 8 * gl;
    let mask = ctx.mask();
    let shuffles: Vec<Vec<usize>> = (0..gl).map(|j| byte_shuffle(j, gl, bytes)).collect();
    m.kernel_batch(|k| {
        for pe in ctx.lay.node_pes() {
            k.permute(pe, base, 1, &shuffles[ctx.lay.lane_index(pe)])?;
        }
        Ok(())
    })?;

    let mut out = vec![vec![0u8; bytes]; ctx.lay.groups.len()];
    for set in &ctx.lay.sets {
        for b in 0..bytes / run {
            let mut acc: Option<Block64> = None;
            for eg in &set.egs {
                for t in 0..gl {
                    let x = m.read_burst(*eg, base + b * run + 8 * t)?;
                    let y = if t == 0 { x } else { m.host_rot_lane(&x, t, mask)? };
                    acc = Some(match acc {
                        None => y,
                        Some(a) => m.host_reduce(&a, &y, ctx.req.dtype, ctx.op()),
                    });
                }
            }
            let r = acc.expect("non-empty group");
            for lane in 0..LANES {
                let i = mask.compress(lane);
                let dst = &mut out[set.lane_group[lane]];
                for beat in 0..8 {
                    dst[b * run + gl * beat + i] = r.0[beat * LANES + lane];
                }
            }
        }
    }

    let unshuffles: Vec<Vec<usize>> = shuffles.iter().map(|p| invert(p)).collect();
    m.kernel_batch(|k| {
        for pe in ctx.lay.node_pes() {
            k.permute(pe, base, 1, &unshuffles[ctx.lay.lane_index(pe)])?;
        }
        Ok(())
    })?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn byte_shuffle_is_a_permutation() {
        for gl in [1, 2, 4, 8] {
            for j in 0..gl {
                let p = byte_shuffle(j, gl, 16 * gl);
                let mut sorted = p.clone();
                sorted.sort_unstable();
                assert_eq!(sorted, (0..16 * gl).collect::<Vec<_>>());
                assert_eq!(invert(&invert(&p)), p);
            }
        }
    }
}
