//! Virtual hypercube over the PEs of a [`Topology`].
//!
//! Node coordinates linearize with dimension 0 fastest and the linear index
//! is used directly as the PE id. Because PE ids run chip-fastest, the low
//! dimensions fill entangled groups first, then banks, ranks and channels.
//!
//! A [`DimMask`] selects dimensions; every assignment of the unselected
//! coordinates yields one [`CommGroup`], so one mask defines many disjoint
//! groups at once.

use std::fmt;

use thiserror::Error;

use crate::topology::{PeId, Topology, GROUP_LANES};

/// Smallest group accepted when strict group checking is on.
pub const STRICT_MIN_GROUP: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HypercubeError {
    #[error("hypercube needs at least one dimension")]
    EmptyDims,
    #[error("dimension {index} has length 0")]
    ZeroLength { index: usize },
    #[error("dimension {index} has length {len}, which is not a power of two (only the last dimension may be)")]
    NotPowerOfTwo { index: usize, len: usize },
    #[error("hypercube has {nodes} nodes but the machine only has {pes} PEs")]
    TooManyNodes { nodes: usize, pes: usize },
    #[error("hypercube has {nodes} nodes; the node count must fill whole entangled groups of 8 PEs")]
    PartialEntangledGroup { nodes: usize },
    #[error("coordinate {coord} is out of range for dimension {index} of length {len}")]
    CoordOutOfRange { index: usize, coord: usize, len: usize },
    #[error("expected {expected} coordinates, got {got}")]
    CoordCount { expected: usize, got: usize },
    #[error("mask `{mask}` has length {got}, expected {expected}")]
    BadLength { mask: String, expected: usize, got: usize },
    #[error("mask `{mask}` contains `{ch}`; only '0' and '1' are allowed")]
    BadChar { mask: String, ch: char },
    #[error("mask `{0}` selects no dimension")]
    EmptyMask(String),
    #[error("communication group of {size} PEs is smaller than {min} (strict group mode)")]
    GroupTooSmall { size: usize, min: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HypercubeConfig {
    dims: Vec<usize>,
    topology: Topology,
    strict_groups: bool,
}

impl HypercubeConfig {
    pub fn new(dims: &[usize], topology: Topology) -> Result<Self, HypercubeError> {
        if dims.is_empty() {
            return Err(HypercubeError::EmptyDims);
        }
        let last = dims.len() - 1;
        for (index, &len) in dims.iter().enumerate() {
            if len == 0 {
                return Err(HypercubeError::ZeroLength { index });
            }
            if index < last && !len.is_power_of_two() {
                return Err(HypercubeError::NotPowerOfTwo { index, len });
            }
        }
        let nodes = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .unwrap_or(usize::MAX);
        if nodes > topology.total_pes() {
            return Err(HypercubeError::TooManyNodes {
                nodes,
                pes: topology.total_pes(),
            });
        }
        if nodes % GROUP_LANES != 0 {
            return Err(HypercubeError::PartialEntangledGroup { nodes });
        }
        Ok(Self {
            dims: dims.to_vec(),
            topology,
            strict_groups: false,
        })
    }

    /// Rejects communication groups smaller than eight PEs when set.
    pub fn with_strict_groups(mut self, strict: bool) -> Self {
        self.strict_groups = strict;
        self
    }

    pub fn strict_groups(&self) -> bool {
        self.strict_groups
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn num_nodes(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn num_entangled_groups(&self) -> usize {
        self.num_nodes() / GROUP_LANES
    }

    /// `"32x32"`-style label.
    pub fn dims_label(&self) -> String {
        self.dims.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x")
    }

    pub fn map_node(&self, coords: &[usize]) -> Result<PeId, HypercubeError> {
        if coords.len() != self.dims.len() {
            return Err(HypercubeError::CoordCount {
                expected: self.dims.len(),
                got: coords.len(),
            });
        }
        let mut linear = 0;
        for (index, (&c, &len)) in coords.iter().zip(&self.dims).enumerate().rev() {
            if c >= len {
                return Err(HypercubeError::CoordOutOfRange { index, coord: c, len });
            }
            linear = linear * len + c;
        }
        Ok(PeId(linear))
    }

    /// Inverse of [`map_node`](Self::map_node) for nodes of this cube.
    pub fn node_coords(&self, pe: PeId) -> Option<Vec<usize>> {
        if pe.0 >= self.num_nodes() {
            return None;
        }
        let mut rest = pe.0;
        Some(
            self.dims
                .iter()
                .map(|&len| {
                    let c = rest % len;
                    rest /= len;
                    c
                })
                .collect(),
        )
    }

    pub fn parse_mask(&self, s: &str) -> Result<DimMask, HypercubeError> {
        let n = s.chars().count();
        if n != self.dims.len() {
            return Err(HypercubeError::BadLength {
                mask: s.to_string(),
                expected: self.dims.len(),
                got: n,
            });
        }
        let mut selected = Vec::with_capacity(n);
        for ch in s.chars() {
            match ch {
                '0' => selected.push(false),
                '1' => selected.push(true),
                ch => {
                    return Err(HypercubeError::BadChar {
                        mask: s.to_string(),
                        ch,
                    })
                }
            }
        }
        if !selected.iter().any(|&b| b) {
            return Err(HypercubeError::EmptyMask(s.to_string()));
        }
        Ok(DimMask { selected })
    }

    fn check_mask(&self, mask: &DimMask) {
        assert_eq!(
            mask.selected.len(),
            self.dims.len(),
            "mask was parsed for a hypercube with a different rank"
        );
    }

    pub fn group_size(&self, mask: &DimMask) -> usize {
        self.check_mask(mask);
        self.dims
            .iter()
            .zip(&mask.selected)
            .filter(|(_, &s)| s)
            .map(|(d, _)| d)
            .product()
    }

    pub fn num_groups(&self, mask: &DimMask) -> usize {
        self.num_nodes() / self.group_size(mask)
    }

    /// Applies the strict-mode minimum group size; in permissive mode small
    /// groups only log a warning.
    pub fn check_group_size(&self, mask: &DimMask) -> Result<(), HypercubeError> {
        let size = self.group_size(mask);
        if size < STRICT_MIN_GROUP {
            if self.strict_groups {
                return Err(HypercubeError::GroupTooSmall {
                    size,
                    min: STRICT_MIN_GROUP,
                });
            }
            log::warn!(
                "communication group of {size} PEs splits an entangled group; real hardware needs at least {STRICT_MIN_GROUP}"
            );
        }
        Ok(())
    }

    /// Group index and member index of `pe` under `mask`.
    pub fn locate(&self, mask: &DimMask, pe: PeId) -> Option<(usize, usize)> {
        let coords = self.node_coords(pe)?;
        let (mut group, mut gstride, mut member, mut mstride) = (0, 1, 0, 1);
        for ((&c, &len), &sel) in coords.iter().zip(&self.dims).zip(&mask.selected) {
            if sel {
                member += c * mstride;
                mstride *= len;
            } else {
                group += c * gstride;
                gstride *= len;
            }
        }
        Some((group, member))
    }

    /// All communication groups induced by `mask`. Groups are ordered by the
    /// unselected coordinates and members by the selected ones, first
    /// dimension fastest in both cases.
    pub fn slice_groups(&self, mask: &DimMask) -> Vec<CommGroup> {
        let size = self.group_size(mask);
        let count = self.num_nodes() / size;
        let mut groups = vec![
            CommGroup {
                members: vec![PeId(usize::MAX); size]
            };
            count
        ];
        for l in 0..self.num_nodes() {
            let (g, m) = self.locate(mask, PeId(l)).expect("node in range");
            groups[g].members[m] = PeId(l);
        }
        groups
    }
}

/// Dimension selection; character `i` of the text form is dimension `i`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DimMask {
    selected: Vec<bool>,
}

impl DimMask {
    pub fn is_selected(&self, dim: usize) -> bool {
        self.selected[dim]
    }

    pub fn len(&self) -> usize {
        self.selected.len()
    }

    pub fn is_empty(&self) -> bool {
        self.selected.is_empty()
    }
}

impl fmt::Display for DimMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &s in &self.selected {
            f.write_str(if s { "1" } else { "0" })?;
        }
        Ok(())
    }
}

/// One communication-group instance, members in group-rank order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommGroup {
    pub members: Vec<PeId>,
}

impl CommGroup {
    pub fn size(&self) -> usize {
        self.members.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn topo(ch: usize, r: usize) -> Topology {
        Topology::new(ch, r).unwrap()
    }

    #[test]
    fn construction_examples() {
        let hc = HypercubeConfig::new(&[4, 2, 4], topo(1, 1)).unwrap();
        assert_eq!(hc.num_nodes(), 32);
        assert_eq!(
            HypercubeConfig::new(&[3, 2], topo(1, 1)),
            Err(HypercubeError::NotPowerOfTwo { index: 0, len: 3 })
        );
        let hc = HypercubeConfig::new(&[8, 128], topo(4, 4)).unwrap();
        assert_eq!(hc.num_nodes(), 1024);
    }

    #[test]
    fn construction_errors() {
        assert_eq!(HypercubeConfig::new(&[], topo(1, 1)), Err(HypercubeError::EmptyDims));
        assert!(matches!(
            HypercubeConfig::new(&[8, 16], topo(1, 1)),
            Err(HypercubeError::TooManyNodes { nodes: 128, pes: 64 })
        ));
        assert!(matches!(
            HypercubeConfig::new(&[4], topo(1, 1)),
            Err(HypercubeError::PartialEntangledGroup { nodes: 4 })
        ));
        assert!(matches!(
            HypercubeConfig::new(&[8, 0], topo(1, 1)),
            Err(HypercubeError::ZeroLength { index: 1 })
        ));
        // The last dimension may be any length.
        assert!(HypercubeConfig::new(&[8, 3], topo(1, 1)).is_ok());
        assert!(HypercubeConfig::new(&[2, 12], topo(1, 1)).is_ok());
    }

    #[test]
    fn map_node_examples() {
        let hc = HypercubeConfig::new(&[4, 2, 4], topo(1, 1)).unwrap();
        assert_eq!(hc.map_node(&[0, 0, 0]).unwrap(), PeId(0));
        let pe = hc.map_node(&[3, 1, 0]).unwrap();
        assert_eq!(pe, PeId(7));
        assert_eq!(hc.topology().entangled_group_of(pe).unwrap().1, 7);
        assert!(matches!(
            hc.map_node(&[4, 0, 0]),
            Err(HypercubeError::CoordOutOfRange { index: 0, .. })
        ));

        let hc = HypercubeConfig::new(&[8, 8], topo(1, 1)).unwrap();
        let pe = hc.map_node(&[0, 1]).unwrap();
        assert_eq!(pe, PeId(8));
        let c = hc.topology().decompose(pe).unwrap();
        assert_eq!((c.channel, c.rank, c.bank, c.chip), (0, 0, 1, 0));
    }

    #[test]
    fn mask_examples() {
        let hc = HypercubeConfig::new(&[4, 2, 4], topo(1, 1)).unwrap();
        let m = hc.parse_mask("010").unwrap();
        assert!(!m.is_selected(0) && m.is_selected(1) && !m.is_selected(2));
        assert_eq!(m.to_string(), "010");
        let m = hc.parse_mask("111").unwrap();
        assert!((0..3).all(|i| m.is_selected(i)));
        assert!(matches!(hc.parse_mask("000"), Err(HypercubeError::EmptyMask(_))));
        assert!(matches!(hc.parse_mask("01"), Err(HypercubeError::BadLength { .. })));
        assert!(matches!(hc.parse_mask("0x1"), Err(HypercubeError::BadChar { ch: 'x', .. })));

        let hc2 = HypercubeConfig::new(&[8, 8], topo(1, 1)).unwrap();
        assert!(matches!(hc2.parse_mask("00"), Err(HypercubeError::EmptyMask(_))));
    }

    #[test]
    fn slicing_examples() {
        let hc = HypercubeConfig::new(&[4, 2, 4], topo(1, 1)).unwrap();
        let groups = hc.slice_groups(&hc.parse_mask("100").unwrap());
        assert_eq!(groups.len(), 8);
        assert!(groups.iter().all(|g| g.size() == 4));
        assert_eq!(groups[0].members, vec![PeId(0), PeId(1), PeId(2), PeId(3)]);

        let groups = hc.slice_groups(&hc.parse_mask("101").unwrap());
        assert_eq!(groups.len(), 2);
        assert!(groups.iter().all(|g| g.size() == 16));
        // Member order: x fastest, then z.
        assert_eq!(&groups[1].members[..5], &[PeId(4), PeId(5), PeId(6), PeId(7), PeId(12)]);

        let hc = HypercubeConfig::new(&[8], topo(1, 1)).unwrap();
        let groups = hc.slice_groups(&hc.parse_mask("1").unwrap());
        assert_eq!(groups.len(), 1);
        assert_eq!(groups[0].members, (0..8).map(PeId).collect::<Vec<_>>());
    }

    #[test]
    fn strict_groups() {
        let hc = HypercubeConfig::new(&[4, 2, 4], topo(1, 1)).unwrap();
        let m = hc.parse_mask("100").unwrap();
        assert!(hc.check_group_size(&m).is_ok());
        let strict = hc.clone().with_strict_groups(true);
        assert_eq!(
            strict.check_group_size(&m),
            Err(HypercubeError::GroupTooSmall { size: 4, min: 8 })
        );
        assert!(strict.check_group_size(&strict.parse_mask("110").unwrap()).is_ok());
    }

    fn cube_strategy() -> impl Strategy<Value = (Vec<usize>, Vec<bool>)> {
        // Up to three dims, power-of-two except possibly the last, <= 1024 nodes.
        (1usize..=3)
            .prop_flat_map(|n| {
                (
                    prop::collection::vec(0u32..=6, n - 1),
                    1usize..=24,
                    prop::collection::vec(any::<bool>(), n),
                )
            })
            .prop_filter_map("needs whole entangled groups", |(exps, last, sel)| {
                let mut dims: Vec<usize> = exps.iter().map(|e| 1usize << e).collect();
                dims.push(last);
                let n: usize = dims.iter().product();
                (n.is_multiple_of(8) && n <= 1024 && sel.iter().any(|&s| s)).then_some((dims, sel))
            })
    }

    proptest! {
        #[test]
        fn groups_partition_nodes((dims, sel) in cube_strategy()) {
            let hc = HypercubeConfig::new(&dims, topo(4, 4)).unwrap();
            let mask_str: String = sel.iter().map(|&s| if s { '1' } else { '0' }).collect();
            let mask = hc.parse_mask(&mask_str).unwrap();
            let groups = hc.slice_groups(&mask);
            let size = hc.group_size(&mask);
            prop_assert_eq!(groups.len() * size, hc.num_nodes());
            let mut seen = vec![false; hc.num_nodes()];
            for g in &groups {
                prop_assert_eq!(g.size(), size);
                for pe in &g.members {
                    prop_assert!(pe.0 < hc.num_nodes());
                    prop_assert!(!seen[pe.0]);
                    seen[pe.0] = true;
                }
            }
            prop_assert!(seen.iter().all(|&s| s));
            prop_assert_eq!(hc.slice_groups(&mask), groups);
        }

        #[test]
        fn map_node_is_bijection((dims, _sel) in cube_strategy()) {
            let hc = HypercubeConfig::new(&dims, topo(4, 4)).unwrap();
            let mut seen = vec![false; hc.num_nodes()];
            for l in 0..hc.num_nodes() {
                let coords = hc.node_coords(PeId(l)).unwrap();
                let pe = hc.map_node(&coords).unwrap();
                prop_assert_eq!(pe, PeId(l));
                prop_assert!(!seen[pe.0]);
                seen[pe.0] = true;
            }
        }

        #[test]
        fn x_selected_groups_hold_whole_entangled_groups((dims, sel) in cube_strategy()) {
            prop_assume!(dims[0] >= 8 && sel[0]);
            let hc = HypercubeConfig::new(&dims, topo(4, 4)).unwrap();
            let mask_str: String = sel.iter().map(|&s| if s { '1' } else { '0' }).collect();
            let mask = hc.parse_mask(&mask_str).unwrap();
            for g in hc.slice_groups(&mask) {
                let mut ids: Vec<usize> = g.members.iter().map(|p| p.0).collect();
                ids.sort_unstable();
                for run in ids.chunks(8) {
                    prop_assert_eq!(run[0] % 8, 0);
                    prop_assert!(run.windows(2).all(|w| w[1] == w[0] + 1));
                }
            }
        }
    }
}
