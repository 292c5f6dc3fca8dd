//! Byte-exact transforms on 64-byte bursts.
//!
//! A [`Block64`] is one DDR burst: 8 beats of 8 byte lanes. In the PIM domain
//! `bytes[beat * 8 + lane]` is byte `beat` of the 8-byte word held by the PE
//! on lane `lane`. In the host domain the same block holds eight contiguous
//! 8-byte words, word `i` belonging to lane `i`. [`domain_transfer`] converts
//! between the two (an 8x8 byte transpose, its own inverse).
//!
//! Rotations come in two flavours that are linked by the identity
//! `domain_transfer(rot_word(domain_transfer(x), k)) == rot_lane(x, k)`:
//! a word rotation in the host domain equals a lane rotation in the PIM
//! domain, so a data-movement-only pipeline never needs the transpose.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const BLOCK_BYTES: usize = 64;
pub const LANES: usize = 8;
pub const WORD_BYTES: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodecError {
    #[error("shift {shift} is out of range for a rotation of width {width}")]
    BadShift { shift: usize, width: usize },
    #[error("rotation width {0} is not one of 1, 2, 4, 8")]
    BadWidth(usize),
    #[error("byte length {0} is not a multiple of 8")]
    BadLength(usize),
    #[error("value {value} does not fit in {dtype}")]
    ValueOutOfRange { value: u64, dtype: ElementType },
    #[error("invalid hex block: {0}")]
    BadHex(String),
}

/// One 64-byte burst.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Block64(pub [u8; BLOCK_BYTES]);

impl Block64 {
    pub const ZERO: Block64 = Block64([0; BLOCK_BYTES]);

    pub fn from_slice(bytes: &[u8]) -> Option<Self> {
        bytes.try_into().ok().map(Block64)
    }

    pub fn as_bytes(&self) -> &[u8; BLOCK_BYTES] {
        &self.0
    }

    /// Host-domain view: the 8-byte word on `lane`.
    pub fn word(&self, lane: usize) -> [u8; WORD_BYTES] {
        self.0[lane * WORD_BYTES..(lane + 1) * WORD_BYTES].try_into().unwrap()
    }

    pub fn set_word(&mut self, lane: usize, word: &[u8]) {
        self.0[lane * WORD_BYTES..(lane + 1) * WORD_BYTES].copy_from_slice(word);
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self, CodecError> {
        let bytes = hex::decode(s).map_err(|e| CodecError::BadHex(e.to_string()))?;
        Block64::from_slice(&bytes).ok_or_else(|| CodecError::BadHex(format!("expected 64 bytes, got {}", bytes.len())))
    }
}

impl Default for Block64 {
    fn default() -> Self {
        Self::ZERO
    }
}

impl fmt::Debug for Block64 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Block64({})", self.to_hex())
    }
}

/// 8x8 byte transpose between the PIM and host domains.
pub fn domain_transfer(b: &Block64) -> Block64 {
    let mut out = [0u8; BLOCK_BYTES];
    for beat in 0..LANES {
        for lane in 0..LANES {
            out[lane * 8 + beat] = b.0[beat * 8 + lane];
        }
    }
    Block64(out)
}

/// Selects which of the three lane-index bits take part in a rotation.
///
/// A lane `l` splits into a rotating index `j` (the selected bits of `l`,
/// packed) and a fixed remainder (the unselected bits). Rotating by `k`
/// replaces `j` with `(j + k) mod width`, where `width = 2^popcount(mask)`.
/// The mask `0b111` rotates all eight lanes; `0b011` rotates within each
/// aligned run of four; `0b110` rotates among lanes of equal parity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct LaneMask(u8);

impl LaneMask {
    pub const ALL: LaneMask = LaneMask(0b111);

    pub fn new(bits: u8) -> Self {
        LaneMask(bits & 0b111)
    }

    /// Contiguous low lanes: width 1, 2, 4 or 8.
    pub fn contiguous(width: usize) -> Result<Self, CodecError> {
        match width {
            1 | 2 | 4 | 8 => Ok(LaneMask((width - 1) as u8)),
            _ => Err(CodecError::BadWidth(width)),
        }
    }

    pub fn bits(&self) -> u8 {
        self.0
    }

    pub fn width(&self) -> usize {
        1 << self.0.count_ones()
    }

    /// Rotating index of `lane`.
    pub fn compress(&self, lane: usize) -> usize {
        let mut j = 0;
        let mut out_bit = 0;
        for bit in 0..3 {
            if self.0 & (1 << bit) != 0 {
                j |= ((lane >> bit) & 1) << out_bit;
                out_bit += 1;
            }
        }
        j
    }

    /// Lane whose rotating index is `j` and whose fixed bits match `base`.
    pub fn expand(&self, j: usize, base: usize) -> usize {
        let mut lane = base & !(self.0 as usize) & 0b111;
        let mut in_bit = 0;
        for bit in 0..3 {
            if self.0 & (1 << bit) != 0 {
                lane |= ((j >> in_bit) & 1) << bit;
                in_bit += 1;
            }
        }
        lane
    }

    /// Source lane for output lane `lane` under a rotation by `k`.
    fn source(&self, lane: usize, k: usize) -> usize {
        self.expand((self.compress(lane) + k) % self.width(), lane)
    }
}

fn check_shift(k: usize, mask: LaneMask) -> Result<(), CodecError> {
    if k >= mask.width() {
        return Err(CodecError::BadShift {
            shift: k,
            width: mask.width(),
        });
    }
    Ok(())
}

/// Host-domain word rotation within the lane subgroups of `mask`:
/// output word `l` is input word `l` with its rotating index advanced by `k`.
pub fn rot_word_masked(b: &Block64, k: usize, mask: LaneMask) -> Result<Block64, CodecError> {
    check_shift(k, mask)?;
    let mut out = Block64::ZERO;
    for lane in 0..LANES {
        out.set_word(lane, &b.word(mask.source(lane, k)));
    }
    Ok(out)
}

/// PIM-domain lane rotation within the lane subgroups of `mask`, applied to
/// every beat.
pub fn rot_lane_masked(b: &Block64, k: usize, mask: LaneMask) -> Result<Block64, CodecError> {
    check_shift(k, mask)?;
    let mut out = [0u8; BLOCK_BYTES];
    for beat in 0..LANES {
        for lane in 0..LANES {
            out[beat * 8 + lane] = b.0[beat * 8 + mask.source(lane, k)];
        }
    }
    Ok(Block64(out))
}

/// `out word i == in word (i + k) mod 8`.
pub fn rot_word(b: &Block64, k: usize) -> Result<Block64, CodecError> {
    rot_word_masked(b, k, LaneMask::ALL)
}

/// `out[j*8 + i] == in[j*8 + (i + k) mod 8]` for every beat `j`.
pub fn rot_lane(b: &Block64, k: usize) -> Result<Block64, CodecError> {
    rot_lane_masked(b, k, LaneMask::ALL)
}

/// Word rotation inside each aligned run of `width` words.
pub fn rot_word_within(b: &Block64, k: usize, width: usize) -> Result<Block64, CodecError> {
    rot_word_masked(b, k, LaneMask::contiguous(width)?)
}

/// Lane rotation inside each aligned run of `width` lanes.
pub fn rot_lane_within(b: &Block64, k: usize, width: usize) -> Result<Block64, CodecError> {
    rot_lane_masked(b, k, LaneMask::contiguous(width)?)
}

/// Unsigned integer element types. Elements are little-endian.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ElementType {
    U8,
    U16,
    U32,
    U64,
}

impl ElementType {
    pub const ALL: [ElementType; 4] = [ElementType::U8, ElementType::U16, ElementType::U32, ElementType::U64];

    pub fn width_bytes(&self) -> usize {
        match self {
            ElementType::U8 => 1,
            ElementType::U16 => 2,
            ElementType::U32 => 4,
            ElementType::U64 => 8,
        }
    }

    pub fn max_value(&self) -> u64 {
        match self {
            ElementType::U64 => u64::MAX,
            _ => (1u64 << (8 * self.width_bytes())) - 1,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ElementType::U8 => "u8",
            ElementType::U16 => "u16",
            ElementType::U32 => "u32",
            ElementType::U64 => "u64",
        }
    }
}

impl fmt::Display for ElementType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ElementType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "u8" => Ok(ElementType::U8),
            "u16" => Ok(ElementType::U16),
            "u32" => Ok(ElementType::U32),
            "u64" => Ok(ElementType::U64),
            other => Err(format!("unknown dtype `{other}`")),
        }
    }
}

/// Associative, commutative reductions at element width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReduceOp {
    /// Wrapping addition.
    Sum,
    Min,
    Max,
    #[serde(alias = "or")]
    BitOr,
}

impl ReduceOp {
    pub const ALL: [ReduceOp; 4] = [ReduceOp::Sum, ReduceOp::Min, ReduceOp::Max, ReduceOp::BitOr];

    pub fn name(&self) -> &'static str {
        match self {
            ReduceOp::Sum => "sum",
            ReduceOp::Min => "min",
            ReduceOp::Max => "max",
            ReduceOp::BitOr => "bitor",
        }
    }

    /// Applies the op to two values already known to fit in `dtype`.
    pub fn apply(&self, a: u64, b: u64, dtype: ElementType) -> u64 {
        match self {
            ReduceOp::Sum => a.wrapping_add(b) & dtype.max_value(),
            ReduceOp::Min => a.min(b),
            ReduceOp::Max => a.max(b),
            ReduceOp::BitOr => a | b,
        }
    }
}

impl fmt::Display for ReduceOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ReduceOp {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "sum" => Ok(ReduceOp::Sum),
            "min" => Ok(ReduceOp::Min),
            "max" => Ok(ReduceOp::Max),
            "bitor" | "or" => Ok(ReduceOp::BitOr),
            other => Err(format!("unknown reduction op `{other}`")),
        }
    }
}

fn load(bytes: &[u8]) -> u64 {
    let mut buf = [0u8; 8];
    buf[..bytes.len()].copy_from_slice(bytes);
    u64::from_le_bytes(buf)
}

fn store(v: u64, out: &mut [u8]) {
    let n = out.len();
    out.copy_from_slice(&v.to_le_bytes()[..n]);
}

/// Element-wise `acc op b` over a host-domain block.
///
/// For `U8` the element grid is the byte grid, so the result is independent
/// of which domain the blocks are in.
pub fn reduce_host_words(acc: &Block64, b: &Block64, dtype: ElementType, op: ReduceOp) -> Block64 {
    let w = dtype.width_bytes();
    let mut out = *acc;
    for (o, x) in out.0.chunks_exact_mut(w).zip(b.0.chunks_exact(w)) {
        let v = op.apply(load(o), load(x), dtype);
        store(v, o);
    }
    out
}

/// Packs elements little-endian, back to back; the byte length must be a
/// whole number of 64-bit chunks.
pub fn pack_chunks(values: &[u64], dtype: ElementType) -> Result<Vec<u8>, CodecError> {
    let w = dtype.width_bytes();
    let len = values.len() * w;
    if !len.is_multiple_of(WORD_BYTES) {
        return Err(CodecError::BadLength(len));
    }
    let mut out = vec![0u8; len];
    for (v, slot) in values.iter().zip(out.chunks_exact_mut(w)) {
        if *v > dtype.max_value() {
            return Err(CodecError::ValueOutOfRange { value: *v, dtype });
        }
        store(*v, slot);
    }
    Ok(out)
}

pub fn unpack_chunks(bytes: &[u8], dtype: ElementType) -> Result<Vec<u64>, CodecError> {
    if !bytes.len().is_multiple_of(WORD_BYTES) {
        return Err(CodecError::BadLength(bytes.len()));
    }
    Ok(bytes.chunks_exact(dtype.width_bytes()).map(load).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn block_strategy() -> impl Strategy<Value = Block64> {
        prop::array::uniform32(any::<u8>())
            .prop_flat_map(|a| prop::array::uniform32(any::<u8>()).prop_map(move |b| (a, b)))
            .prop_map(|(a, b)| {
                let mut out = [0u8; 64];
                out[..32].copy_from_slice(&a);
                out[32..].copy_from_slice(&b);
                Block64(out)
            })
    }

    fn lane_constant() -> Block64 {
        let mut b = Block64::ZERO;
        for beat in 0..8 {
            for lane in 0..8 {
                b.0[beat * 8 + lane] = lane as u8;
            }
        }
        b
    }

    #[test]
    fn transpose_of_zero_is_zero() {
        assert_eq!(domain_transfer(&Block64::ZERO), Block64::ZERO);
    }

    #[test]
    fn transpose_index_matrix() {
        let mut b = Block64::ZERO;
        for beat in 0..8 {
            for lane in 0..8 {
                b.0[beat * 8 + lane] = (10 * lane + beat) as u8;
            }
        }
        let out = domain_transfer(&b);
        for lane in 0..8 {
            for beat in 0..8 {
                assert_eq!(out.0[lane * 8 + beat], (10 * lane + beat) as u8);
            }
        }
        // Host-domain words hold each lane contiguously.
        assert_eq!(out.word(3), [30, 31, 32, 33, 34, 35, 36, 37]);
    }

    #[test]
    fn rotation_examples() {
        let mut b = Block64::ZERO;
        for w in 0..8 {
            b.set_word(w, &[w as u8; 8]);
        }
        assert_eq!(rot_word(&b, 0).unwrap(), b);
        let r = rot_word(&b, 1).unwrap();
        for w in 0..8 {
            assert_eq!(r.word(w), [((w + 1) % 8) as u8; 8]);
        }

        let lc = lane_constant();
        assert_eq!(rot_lane(&lc, 0).unwrap(), lc);
        let r = rot_lane(&lc, 2).unwrap();
        for beat in 0..8 {
            for lane in 0..8 {
                assert_eq!(r.0[beat * 8 + lane], ((lane + 2) % 8) as u8);
            }
        }
    }

    #[test]
    fn bad_shift_rejected() {
        assert_eq!(
            rot_word(&Block64::ZERO, 8),
            Err(CodecError::BadShift { shift: 8, width: 8 })
        );
        assert!(rot_lane(&Block64::ZERO, 9).is_err());
        assert!(rot_lane_within(&Block64::ZERO, 4, 4).is_err());
        assert!(matches!(rot_lane_within(&Block64::ZERO, 0, 3), Err(CodecError::BadWidth(3))));
    }

    #[test]
    fn within_width_keeps_runs() {
        let lc = lane_constant();
        let r = rot_lane_within(&lc, 1, 2).unwrap();
        for lane in 0..8 {
            let expect = (lane & !1) | ((lane + 1) & 1);
            assert_eq!(r.0[lane], expect as u8);
        }
        let r = rot_lane_within(&lc, 3, 4).unwrap();
        for lane in 0..8 {
            let expect = (lane & !3) | ((lane + 3) & 3);
            assert_eq!(r.0[8 + lane], expect as u8);
        }
    }

    #[test]
    fn strided_mask_rotates_parity_classes() {
        let lc = lane_constant();
        let mask = LaneMask::new(0b110);
        assert_eq!(mask.width(), 4);
        let r = rot_lane_masked(&lc, 1, mask).unwrap();
        // Lanes of equal parity rotate among themselves: 0->2->4->6->0.
        assert_eq!(&r.0[..8], &[2, 3, 4, 5, 6, 7, 0, 1]);
    }

    #[test]
    fn lane_mask_compress_expand() {
        for bits in 0..8u8 {
            let m = LaneMask::new(bits);
            for lane in 0..8 {
                let j = m.compress(lane);
                assert!(j < m.width());
                assert_eq!(m.expand(j, lane), lane);
            }
        }
    }

    #[test]
    fn reduce_examples() {
        let x = Block64([17; 64]);
        assert_eq!(reduce_host_words(&Block64::ZERO, &x, ElementType::U32, ReduceOp::Sum), x);
        let r = reduce_host_words(&Block64([200; 64]), &Block64([100; 64]), ElementType::U8, ReduceOp::Sum);
        assert_eq!(r, Block64([44; 64]));

        let acc = Block64(pack_chunks(&[5; 16], ElementType::U32).unwrap().try_into().unwrap());
        let b = Block64(pack_chunks(&[3; 16], ElementType::U32).unwrap().try_into().unwrap());
        let r = reduce_host_words(&acc, &b, ElementType::U32, ReduceOp::Min);
        assert_eq!(unpack_chunks(&r.0, ElementType::U32).unwrap(), vec![3; 16]);
    }

    #[test]
    fn sum_wraps_at_element_width() {
        let a = pack_chunks(&[0xffff, 1, 0xfffe, 7], ElementType::U16).unwrap();
        let b = pack_chunks(&[1, 1, 3, 0], ElementType::U16).unwrap();
        let mut acc = Block64::ZERO;
        let mut x = Block64::ZERO;
        acc.0[..8].copy_from_slice(&a);
        x.0[..8].copy_from_slice(&b);
        let r = reduce_host_words(&acc, &x, ElementType::U16, ReduceOp::Sum);
        assert_eq!(unpack_chunks(&r.0[..8], ElementType::U16).unwrap(), vec![0, 2, 1, 7]);
    }

    #[test]
    fn pack_examples() {
        assert_eq!(pack_chunks(&[7], ElementType::U64).unwrap(), vec![7, 0, 0, 0, 0, 0, 0, 0]);
        assert_eq!(pack_chunks(&[1, 2], ElementType::U32).unwrap(), vec![1, 0, 0, 0, 2, 0, 0, 0]);
        assert_eq!(pack_chunks(&[1, 2, 3], ElementType::U16), Err(CodecError::BadLength(6)));
        assert!(matches!(
            pack_chunks(&[256; 8], ElementType::U8),
            Err(CodecError::ValueOutOfRange { .. })
        ));
        assert_eq!(unpack_chunks(&[0; 12], ElementType::U32), Err(CodecError::BadLength(12)));
    }

    #[test]
    fn hex_round_trip() {
        let mut b = Block64::ZERO;
        b.0[5] = 0xab;
        let s = b.to_hex();
        assert_eq!(s.len(), 128);
        assert_eq!(Block64::from_hex(&s).unwrap(), b);
        assert!(Block64::from_hex("00").is_err());
    }

    proptest! {
        #[test]
        fn transpose_is_involution(b in block_strategy()) {
            prop_assert_eq!(domain_transfer(&domain_transfer(&b)), b);
        }

        #[test]
        fn fusion_identity_all_masks(b in block_strategy(), bits in 0u8..8, k in 0usize..8) {
            let mask = LaneMask::new(bits);
            let k = k % mask.width();
            let fused = rot_lane_masked(&b, k, mask).unwrap();
            let unfused = domain_transfer(&rot_word_masked(&domain_transfer(&b), k, mask).unwrap());
            prop_assert_eq!(fused, unfused);
        }

        #[test]
        fn rotations_compose(b in block_strategy(), x in 0usize..8, y in 0usize..8) {
            let w = rot_word(&rot_word(&b, x).unwrap(), y).unwrap();
            prop_assert_eq!(w, rot_word(&b, (x + y) % 8).unwrap());
            let l = rot_lane(&rot_lane(&b, x).unwrap(), y).unwrap();
            prop_assert_eq!(l, rot_lane(&b, (x + y) % 8).unwrap());
        }

        #[test]
        fn u8_sum_is_bytewise_wrapping_add(a in block_strategy(), b in block_strategy()) {
            let r = reduce_host_words(&a, &b, ElementType::U8, ReduceOp::Sum);
            for i in 0..64 {
                prop_assert_eq!(r.0[i], a.0[i].wrapping_add(b.0[i]));
            }
        }

        #[test]
        fn u8_reduction_commutes_with_transpose(a in block_strategy(), b in block_strategy(), op in 0usize..4) {
            let op = ReduceOp::ALL[op];
            let pim = reduce_host_words(&a, &b, ElementType::U8, op);
            let host = reduce_host_words(&domain_transfer(&a), &domain_transfer(&b), ElementType::U8, op);
            prop_assert_eq!(domain_transfer(&host), pim);
        }

        #[test]
        fn pack_round_trip(vals in prop::collection::vec(any::<u64>(), 0..64), t in 0usize..4) {
            let dtype = ElementType::ALL[t];
            let per_chunk = 8 / dtype.width_bytes();
            let n = vals.len() / per_chunk * per_chunk;
            let vals: Vec<u64> = vals[..n].iter().map(|v| v & dtype.max_value()).collect();
            let bytes = pack_chunks(&vals, dtype).unwrap();
            prop_assert_eq!(unpack_chunks(&bytes, dtype).unwrap(), vals);
        }
    }
}
