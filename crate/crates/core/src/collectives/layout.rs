//! How communication groups sit on entangled groups.
//!
//! For every mask a hypercube can produce, each group member `p` splits as
//! `p = j + gl * e`: `j` picks one of `gl` lanes (the lanes of a group differ
//! only in the bits of a [`LaneMask`]) and `e` picks one of `ge` entangled
//! groups. Groups that share an entangled group also share the full ordered
//! list of entangled groups, so one burst always carries data of `8 / gl`
//! groups that can be rotated together.

use std::collections::HashSet;

use crate::codec::{LaneMask, LANES};
use crate::hypercube::{CommGroup, DimMask, HypercubeConfig};
use crate::topology::{EntangledGroup, PeId};

use super::CollectiveError;

const UNSET: usize = usize::MAX;

/// Entangled groups that a family of communication groups spans together.
pub(super) struct EgSet {
    /// Indexed by the `e` part of the member index.
    pub egs: Vec<EntangledGroup>,
    /// Communication group owning each lane across all of `egs`.
    pub lane_group: [usize; LANES],
}

pub(super) struct Layout {
    pub groups: Vec<CommGroup>,
    pub group_size: usize,
    pub gl: usize,
    pub ge: usize,
    pub mask: LaneMask,
    pub sets: Vec<EgSet>,
    /// `(group, member)` of every node PE.
    pub node_pos: Vec<(usize, usize)>,
}

fn lane(pe: PeId) -> usize {
    pe.0 % LANES
}

fn eg_id(pe: PeId) -> usize {
    pe.0 / LANES
}

impl Layout {
    pub fn new(hc: &HypercubeConfig, mask: &DimMask) -> Result<Self, CollectiveError> {
        let groups = hc.slice_groups(mask);
        let group_size = groups[0].size();
        let first = &groups[0].members;
        let l0 = lane(first[0]);
        let bits = first.iter().fold(0, |acc, &pe| acc | (lane(pe) ^ l0));
        let lane_mask = LaneMask::new(bits as u8);
        let gl = lane_mask.width();
        if !group_size.is_multiple_of(gl) {
            return Err(CollectiveError::Layout(format!(
                "group of {group_size} spans {gl} lanes unevenly"
            )));
        }
        let ge = group_size / gl;
        let topo = hc.topology();

        let mut node_pos = vec![(UNSET, UNSET); hc.num_nodes()];
        let mut set_of_eg = vec![UNSET; hc.num_entangled_groups()];
        let mut sets: Vec<EgSet> = Vec::new();
        for (gi, g) in groups.iter().enumerate() {
            let base = lane(g.members[0]);
            let egs: Vec<usize> = (0..ge).map(|e| eg_id(g.members[gl * e])).collect();
            for (p, &pe) in g.members.iter().enumerate() {
                node_pos[pe.0] = (gi, p);
                let (j, e) = (p % gl, p / gl);
                if lane(pe) != lane_mask.expand(j, base) || eg_id(pe) != egs[e] {
                    return Err(CollectiveError::Layout(format!(
                        "member {p} of group {gi} (PE {}) does not follow the lane pattern",
                        pe.0
                    )));
                }
            }
            if egs.iter().collect::<HashSet<_>>().len() != ge {
                return Err(CollectiveError::Layout(format!("group {gi} revisits an entangled group")));
            }
            let si = match set_of_eg[egs[0]] {
                UNSET => {
                    if egs.iter().any(|&id| set_of_eg[id] != UNSET) {
                        return Err(CollectiveError::Layout(format!(
                            "group {gi} straddles entangled-group families"
                        )));
                    }
                    let si = sets.len();
                    for &id in &egs {
                        set_of_eg[id] = si;
                    }
                    sets.push(EgSet {
                        egs: egs
                            .iter()
                            .map(|&id| topo.entangled_group(id))
                            .collect::<Result<_, _>>()
                            .map_err(|e| CollectiveError::Layout(e.to_string()))?,
                        lane_group: [UNSET; LANES],
                    });
                    si
                }
                si => {
                    if sets[si].egs.iter().map(|g| g.id()).ne(egs.iter().copied()) {
                        return Err(CollectiveError::Layout(format!(
                            "group {gi} orders its entangled groups differently from its neighbours"
                        )));
                    }
                    si
                }
            };
            for j in 0..gl {
                let slot = &mut sets[si].lane_group[lane_mask.expand(j, base)];
                if *slot != UNSET {
                    return Err(CollectiveError::Layout(format!("two groups claim a lane of group {gi}")));
                }
                *slot = gi;
            }
        }
        if sets.iter().any(|s| s.lane_group.contains(&UNSET)) {
            return Err(CollectiveError::Layout("an entangled group is only partly covered".into()));
        }
        Ok(Self {
            groups,
            group_size,
            gl,
            ge,
            mask: lane_mask,
            sets,
            node_pos,
        })
    }

    /// Rotating lane index `j` of a PE.
    pub fn lane_index(&self, pe: PeId) -> usize {
        self.mask.compress(lane(pe))
    }

    pub fn node_pes(&self) -> impl Iterator<Item = PeId> {
        (0..self.node_pos.len()).map(PeId)
    }

    /// Entangled groups covered by the hypercube, in id order.
    pub fn node_egs<'a>(&self, hc: &'a HypercubeConfig) -> impl Iterator<Item = EntangledGroup> + 'a {
        hc.topology().entangled_groups().take(hc.num_entangled_groups())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::Topology;

    fn layout(dims: &[usize], mask: &str, ch: usize, r: usize) -> Layout {
        let hc = HypercubeConfig::new(dims, Topology::new(ch, r).unwrap()).unwrap();
        let m = hc.parse_mask(mask).unwrap();
        Layout::new(&hc, &m).unwrap()
    }

    #[test]
    fn shapes() {
        let l = layout(&[8, 8], "10", 1, 1);
        assert_eq!((l.gl, l.ge, l.mask.bits(), l.sets.len()), (8, 1, 0b111, 8));
        let l = layout(&[8, 8], "01", 1, 1);
        assert_eq!((l.gl, l.ge, l.mask.bits(), l.sets.len()), (1, 8, 0, 1));
        assert_eq!(l.sets[0].lane_group, [0, 1, 2, 3, 4, 5, 6, 7]);
        let l = layout(&[4, 2, 4], "100", 1, 1);
        assert_eq!((l.gl, l.ge, l.mask.bits()), (4, 1, 0b011));
        let l = layout(&[4, 2, 4], "010", 1, 1);
        assert_eq!((l.gl, l.ge, l.mask.bits()), (2, 1, 0b100));
        let l = layout(&[4, 4, 4], "011", 1, 1);
        assert_eq!((l.gl, l.ge, l.mask.bits(), l.sets.len()), (2, 8, 0b100, 1));
        let l = layout(&[2, 12], "01", 1, 1);
        assert_eq!((l.gl, l.ge, l.mask.bits()), (4, 3, 0b110));
        let l = layout(&[32, 32], "11", 4, 4);
        assert_eq!((l.gl, l.ge, l.sets.len()), (8, 128, 1));
    }

    #[test]
    fn every_supported_shape_has_a_layout() {
        let t = Topology::new(2, 2).unwrap();
        let shapes: &[&[usize]] = &[
            &[8],
            &[2, 4],
            &[4, 2, 4],
            &[2, 2, 2, 32],
            &[16, 16],
            &[4, 64],
            &[2, 12],
            &[4, 6],
            &[8, 3],
            &[1, 8, 4],
        ];
        for dims in shapes {
            let hc = HypercubeConfig::new(dims, t).unwrap();
            for bits in 1..(1u32 << dims.len()) {
                let s: String = (0..dims.len()).map(|i| if bits >> i & 1 == 1 { '1' } else { '0' }).collect();
                let m = hc.parse_mask(&s).unwrap();
                let l = Layout::new(&hc, &m).unwrap_or_else(|e| panic!("{dims:?} {s}: {e}"));
                assert_eq!(l.gl * l.ge, hc.group_size(&m));
            }
        }
    }
}
