//! Collective primitives over hypercube group slices.
//!
//! Every primitive has a baseline pipeline (host does all reordering in
//! staged host memory) and, where applicable, optimized pipelines selected by
//! [`TechniqueFlags`]:
//!
//! * PR: PE-side rotations before and after the host pass, so each burst the
//!   host reads needs only a register-local lane rotation.
//! * IM: the host keeps every burst in a register; nothing is staged.
//! * CM: word rotations are done as lane rotations in the PIM domain, which
//!   removes domain transfers for data movement (and, at 8-bit element
//!   width, for reductions too).

mod baseline;
mod exchange;
mod layout;
mod reduction;
mod rooted;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{Block64, ElementType, LaneMask, ReduceOp};
use crate::hypercube::{DimMask, HypercubeConfig, HypercubeError};
use crate::machine::{MachineError, PimMachine};
use crate::report::RunReport;

use layout::Layout;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Primitive {
    AlltoAll,
    ReduceScatter,
    AllGather,
    AllReduce,
    Scatter,
    Gather,
    Reduce,
    Broadcast,
}

impl Primitive {
    pub const ALL: [Primitive; 8] = [
        Primitive::AlltoAll,
        Primitive::ReduceScatter,
        Primitive::AllGather,
        Primitive::AllReduce,
        Primitive::Scatter,
        Primitive::Gather,
        Primitive::Reduce,
        Primitive::Broadcast,
    ];

    /// Primitives whose data moves between PEs.
    pub const INTER_PE: [Primitive; 4] = [
        Primitive::AlltoAll,
        Primitive::ReduceScatter,
        Primitive::AllGather,
        Primitive::AllReduce,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Primitive::AlltoAll => "alltoall",
            Primitive::ReduceScatter => "reducescatter",
            Primitive::AllGather => "allgather",
            Primitive::AllReduce => "allreduce",
            Primitive::Scatter => "scatter",
            Primitive::Gather => "gather",
            Primitive::Reduce => "reduce",
            Primitive::Broadcast => "broadcast",
        }
    }

    /// The host is the root endpoint.
    pub fn is_rooted(&self) -> bool {
        matches!(
            self,
            Primitive::Scatter | Primitive::Gather | Primitive::Reduce | Primitive::Broadcast
        )
    }

    pub fn needs_op(&self) -> bool {
        matches!(self, Primitive::ReduceScatter | Primitive::AllReduce | Primitive::Reduce)
    }

    /// Takes one host buffer per group as input.
    pub fn takes_host_buffers(&self) -> bool {
        matches!(self, Primitive::Scatter | Primitive::Broadcast)
    }

    /// Returns one host buffer per group as output.
    pub fn returns_host_buffers(&self) -> bool {
        matches!(self, Primitive::Gather | Primitive::Reduce)
    }

    /// `bytes_per_pe` must split into whole 8-byte chunks per member.
    pub fn needs_group_multiple(&self) -> bool {
        matches!(
            self,
            Primitive::AlltoAll
                | Primitive::ReduceScatter
                | Primitive::Scatter
                | Primitive::AllReduce
                | Primitive::Reduce
        )
    }

    /// Bytes each node PE must hold at `base_offset` before the call.
    pub fn input_len(&self, bytes_per_pe: usize) -> usize {
        match self {
            Primitive::Scatter | Primitive::Broadcast => 0,
            _ => bytes_per_pe,
        }
    }

    /// Bytes at `base_offset` that hold the result on each PE afterwards.
    pub fn output_len(&self, bytes_per_pe: usize, group_size: usize) -> usize {
        match self {
            Primitive::ReduceScatter | Primitive::Scatter => bytes_per_pe / group_size,
            Primitive::AllGather => bytes_per_pe * group_size,
            _ => bytes_per_pe,
        }
    }

    /// The techniques that apply to this primitive at element type `dtype`.
    pub fn applicable(&self, dtype: ElementType) -> TechniqueFlags {
        use Primitive::*;
        let pr = matches!(self, AlltoAll | ReduceScatter | AllReduce | AllGather | Reduce);
        let im = !matches!(self, Broadcast);
        let cm = match self {
            AlltoAll | AllGather => true,
            ReduceScatter | AllReduce | Reduce => dtype == ElementType::U8,
            _ => false,
        };
        TechniqueFlags { pr, im, cm }
    }
}

impl fmt::Display for Primitive {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Primitive {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s
            .chars()
            .filter(|c| !matches!(c, '_' | '-' | ' '))
            .flat_map(char::to_lowercase)
            .collect();
        Ok(match key.as_str() {
            "alltoall" | "aa" => Primitive::AlltoAll,
            "reducescatter" | "rs" => Primitive::ReduceScatter,
            "allgather" | "ag" => Primitive::AllGather,
            "allreduce" | "ar" => Primitive::AllReduce,
            "scatter" | "sc" => Primitive::Scatter,
            "gather" | "ga" => Primitive::Gather,
            "reduce" | "re" => Primitive::Reduce,
            "broadcast" | "br" => Primitive::Broadcast,
            _ => return Err(format!("unknown primitive `{s}`")),
        })
    }
}

impl TryFrom<String> for Primitive {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<Primitive> for String {
    fn from(p: Primitive) -> Self {
        p.name().to_string()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TechniqueFlags {
    /// PE-assisted reordering.
    pub pr: bool,
    /// In-register modulation.
    pub im: bool,
    /// Cross-domain modulation.
    pub cm: bool,
}

impl TechniqueFlags {
    pub const BASELINE: TechniqueFlags = TechniqueFlags {
        pr: false,
        im: false,
        cm: false,
    };

    pub fn new(pr: bool, im: bool, cm: bool) -> Self {
        Self { pr, im, cm }
    }

    pub fn is_baseline(&self) -> bool {
        !(self.pr || self.im || self.cm)
    }

    /// `baseline`, or the set techniques joined by `+`.
    pub fn label(&self) -> String {
        if self.is_baseline() {
            return "baseline".into();
        }
        [(self.pr, "pr"), (self.im, "im"), (self.cm, "cm")]
            .iter()
            .filter(|(on, _)| *on)
            .map(|(_, n)| *n)
            .collect::<Vec<_>>()
            .join("+")
    }

    fn intersect(self, other: TechniqueFlags) -> TechniqueFlags {
        TechniqueFlags {
            pr: self.pr && other.pr,
            im: self.im && other.im,
            cm: self.cm && other.cm,
        }
    }

    /// Checks these flags against the techniques that apply to `primitive`.
    pub fn validate(&self, primitive: Primitive, dtype: ElementType) -> Result<(), CollectiveError> {
        let app = primitive.applicable(dtype);
        let illegal = |reason: String| {
            Err(CollectiveError::IllegalFlags {
                primitive,
                flags: self.label(),
                reason,
            })
        };
        if self.pr && !app.pr {
            return illegal(format!("PE-assisted reordering does not apply to {primitive}"));
        }
        if self.im && !app.im {
            return illegal(format!("in-register modulation does not apply to {primitive}"));
        }
        if self.cm && !app.cm {
            return illegal(if primitive.needs_op() {
                format!("cross-domain modulation applies to {primitive} only for u8 elements, not {dtype}")
            } else {
                format!("cross-domain modulation does not apply to {primitive}")
            });
        }
        if self.im && app.pr && !self.pr {
            return illegal("in-register modulation requires PE-assisted reordering".into());
        }
        if self.cm && !self.im {
            return illegal("cross-domain modulation requires in-register modulation".into());
        }
        Ok(())
    }
}

impl fmt::Display for TechniqueFlags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// Cumulative technique presets used for ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum FlagPreset {
    Baseline,
    Pr,
    PrIm,
    Full,
}

impl FlagPreset {
    pub const ABLATION: [FlagPreset; 4] = [FlagPreset::Baseline, FlagPreset::Pr, FlagPreset::PrIm, FlagPreset::Full];

    pub fn name(&self) -> &'static str {
        match self {
            FlagPreset::Baseline => "baseline",
            FlagPreset::Pr => "pr",
            FlagPreset::PrIm => "pr+im",
            FlagPreset::Full => "full",
        }
    }

    /// The preset's techniques, dropping any that do not apply.
    pub fn resolve(&self, primitive: Primitive, dtype: ElementType) -> TechniqueFlags {
        let wanted = match self {
            FlagPreset::Baseline => TechniqueFlags::BASELINE,
            FlagPreset::Pr => TechniqueFlags::new(true, false, false),
            FlagPreset::PrIm => TechniqueFlags::new(true, true, false),
            FlagPreset::Full => TechniqueFlags::new(true, true, true),
        };
        wanted.intersect(primitive.applicable(dtype))
    }
}

impl fmt::Display for FlagPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FlagPreset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "baseline" | "none" => Ok(FlagPreset::Baseline),
            "pr" => Ok(FlagPreset::Pr),
            "pr+im" => Ok(FlagPreset::PrIm),
            "full" | "pr+im+cm" => Ok(FlagPreset::Full),
            _ => Err(format!("unknown flag preset `{s}` (expected baseline, pr, pr+im or full)")),
        }
    }
}

impl TryFrom<String> for FlagPreset {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<FlagPreset> for String {
    fn from(p: FlagPreset) -> Self {
        p.name().to_string()
    }
}

/// One collective call.
///
/// `bytes_per_pe` is the per-PE input length for the PE-to-PE primitives,
/// Gather and Reduce (for AllGather it is each member's contribution). For
/// Scatter and Broadcast it is the length of each group's host buffer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommRequest {
    pub primitive: Primitive,
    pub dtype: ElementType,
    pub op: Option<ReduceOp>,
    pub bytes_per_pe: usize,
    pub mask: DimMask,
    pub flags: TechniqueFlags,
    pub base_offset: usize,
}

impl CommRequest {
    pub fn new(primitive: Primitive, dtype: ElementType, mask: DimMask, bytes_per_pe: usize) -> Self {
        Self {
            primitive,
            dtype,
            op: None,
            bytes_per_pe,
            mask,
            flags: TechniqueFlags::BASELINE,
            base_offset: 0,
        }
    }

    pub fn with_op(mut self, op: ReduceOp) -> Self {
        self.op = Some(op);
        self
    }

    pub fn with_flags(mut self, flags: TechniqueFlags) -> Self {
        self.flags = flags;
        self
    }

    pub fn with_base_offset(mut self, offset: usize) -> Self {
        self.base_offset = offset;
        self
    }

    /// Checks everything that does not depend on MRAM contents or host
    /// buffers.
    pub fn validate(&self, hc: &HypercubeConfig) -> Result<(), CollectiveError> {
        if self.mask.len() != hc.dims().len() {
            return Err(HypercubeError::BadLength {
                mask: self.mask.to_string(),
                expected: hc.dims().len(),
                got: self.mask.len(),
            }
            .into());
        }
        hc.check_group_size(&self.mask)?;
        self.flags.validate(self.primitive, self.dtype)?;
        if self.primitive.needs_op() && self.op.is_none() {
            return Err(CollectiveError::MissingOp(self.primitive));
        }
        let bytes = self.bytes_per_pe;
        if bytes == 0 || !bytes.is_multiple_of(8) {
            return Err(CollectiveError::NotChunkAligned { bytes });
        }
        if self.primitive.needs_group_multiple() {
            let required = 8 * hc.group_size(&self.mask);
            if !bytes.is_multiple_of(required) {
                return Err(CollectiveError::NotGroupAligned {
                    primitive: self.primitive,
                    bytes,
                    required,
                });
            }
        }
        if !self.base_offset.is_multiple_of(8) {
            return Err(CollectiveError::BaseMisaligned {
                offset: self.base_offset,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CollectiveError {
    #[error("bytes_per_pe = {bytes} violates the 8-byte rule: data size must be a non-zero multiple of 8 bytes")]
    NotChunkAligned { bytes: usize },
    #[error(
        "bytes_per_pe = {bytes} violates the group-size rule for {primitive}: data size must be a multiple of communication group size x 8 = {required} bytes"
    )]
    NotGroupAligned {
        primitive: Primitive,
        bytes: usize,
        required: usize,
    },
    #[error("base_offset = {offset} must be a multiple of 8")]
    BaseMisaligned { offset: usize },
    #[error("flags `{flags}` are not legal for {primitive}: {reason}")]
    IllegalFlags {
        primitive: Primitive,
        flags: String,
        reason: String,
    },
    #[error("{0} needs a reduction op")]
    MissingOp(Primitive),
    #[error("{0} needs one host buffer per communication group")]
    MissingHostBuffers(Primitive),
    #[error("expected {expected} host buffers (one per communication group), got {got}")]
    BufferCountMismatch { expected: usize, got: usize },
    #[error("host buffer {group} holds {got} bytes, expected {expected}")]
    BufferLength { group: usize, expected: usize, got: usize },
    #[error("PE {pe} holds {have} bytes of MRAM but the request reads {need}")]
    ShortInput { pe: usize, need: usize, have: usize },
    #[error(transparent)]
    Hypercube(#[from] HypercubeError),
    #[error(transparent)]
    Machine(#[from] MachineError),
    #[error("internal layout error: {0}")]
    Layout(String),
}

impl CollectiveError {
    /// Rejections caused by the request itself (as opposed to internal
    /// faults).
    pub fn is_constraint_violation(&self) -> bool {
        !matches!(self, CollectiveError::Layout(_) | CollectiveError::Machine(_))
    }
}

/// How the host side of an optimized pipeline handles each burst.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Path {
    Baseline,
    /// PE reordering, but each burst is still spilled to host memory.
    PrStaged,
    InRegister,
    CrossDomain,
}

impl Path {
    fn of(flags: TechniqueFlags) -> Path {
        if flags.cm {
            Path::CrossDomain
        } else if flags.im {
            Path::InRegister
        } else if flags.pr {
            Path::PrStaged
        } else {
            Path::Baseline
        }
    }
}

/// Shared per-call context for the pipelines.
struct Ctx<'a> {
    hc: &'a HypercubeConfig,
    req: &'a CommRequest,
    lay: Layout,
    path: Path,
}

impl Ctx<'_> {
    fn mask(&self) -> LaneMask {
        self.lay.mask
    }

    fn op(&self) -> ReduceOp {
        self.req.op.expect("validated")
    }

    /// Round trip through host memory on the partially optimized path.
    fn spill(&self, m: &mut PimMachine, b: Block64) -> Result<Block64, CollectiveError> {
        if self.path != Path::PrStaged {
            return Ok(b);
        }
        let h = m.host_stage(b.as_bytes());
        let bytes = m.host_unstage(h)?;
        Ok(Block64::from_slice(&bytes).expect("64 bytes staged"))
    }

    /// Rotates a PIM-domain burst by `k` within the group lanes.
    fn modulate(&self, m: &mut PimMachine, b: &Block64, k: usize) -> Result<Block64, CollectiveError> {
        if self.path == Path::CrossDomain {
            return Ok(if k == 0 { *b } else { m.host_rot_lane(b, k, self.mask())? });
        }
        let mut h = m.host_dt(b);
        h = self.spill(m, h)?;
        if k != 0 {
            h = m.host_rot_word(&h, k, self.mask())?;
        }
        Ok(m.host_dt(&h))
    }
}

/// Result of a collective: the report and, for Gather and Reduce, one
/// host-domain buffer per group.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: RunReport,
    pub host_output: Option<Vec<Vec<u8>>>,
}

fn check_inputs(
    m: &PimMachine,
    hc: &HypercubeConfig,
    req: &CommRequest,
    num_groups: usize,
    host_buffers: Option<&[Vec<u8>]>,
) -> Result<(), CollectiveError> {
    let need = req.base_offset + req.primitive.input_len(req.bytes_per_pe);
    if need > req.base_offset {
        for pe in 0..hc.num_nodes() {
            let have = m.mram(crate::topology::PeId(pe)).len();
            if have < need {
                return Err(CollectiveError::ShortInput { pe, need, have });
            }
        }
    }
    if req.primitive.takes_host_buffers() {
        let bufs = host_buffers.ok_or(CollectiveError::MissingHostBuffers(req.primitive))?;
        if bufs.len() != num_groups {
            return Err(CollectiveError::BufferCountMismatch {
                expected: num_groups,
                got: bufs.len(),
            });
        }
        for (group, b) in bufs.iter().enumerate() {
            if b.len() != req.bytes_per_pe {
                return Err(CollectiveError::BufferLength {
                    group,
                    expected: req.bytes_per_pe,
                    got: b.len(),
                });
            }
        }
    }
    Ok(())
}

/// Validates `req`, runs it and reports the counter deltas it caused.
pub fn run_request(
    m: &mut PimMachine,
    hc: &HypercubeConfig,
    req: &CommRequest,
    host_buffers: Option<&[Vec<u8>]>,
) -> Result<RunOutcome, CollectiveError> {
    req.validate(hc)?;
    let lay = Layout::new(hc, &req.mask)?;
    check_inputs(m, hc, req, lay.groups.len(), host_buffers)?;
    let ctx = Ctx {
        hc,
        req,
        path: Path::of(req.flags),
        lay,
    };
    let before = m.snapshot_counters();
    let mut host_output = None;
    match req.primitive {
        Primitive::AlltoAll => exchange::alltoall(m, &ctx)?,
        Primitive::AllGather => exchange::all_gather(m, &ctx)?,
        Primitive::ReduceScatter => reduction::reduce_scatter(m, &ctx)?,
        Primitive::AllReduce => reduction::all_reduce(m, &ctx)?,
        Primitive::Reduce => host_output = Some(reduction::reduce(m, &ctx)?),
        Primitive::Scatter => rooted::scatter(m, &ctx, host_buffers.expect("checked"))?,
        Primitive::Broadcast => rooted::broadcast(m, &ctx, host_buffers.expect("checked"))?,
        Primitive::Gather => host_output = Some(rooted::gather(m, &ctx)?),
    }
    let counters = m.snapshot_counters() - before;
    Ok(RunOutcome {
        report: RunReport::new(hc, req, ctx.lay.groups.len(), counters),
        host_output,
    })
}

fn expect_primitive(req: &CommRequest, p: Primitive) -> Result<(), CollectiveError> {
    if req.primitive != p {
        return Err(CollectiveError::Layout(format!(
            "{} request passed to the {p} entry point",
            req.primitive
        )));
    }
    Ok(())
}

pub fn alltoall(m: &mut PimMachine, hc: &HypercubeConfig, req: &CommRequest) -> Result<RunReport, CollectiveError> {
    expect_primitive(req, Primitive::AlltoAll)?;
    Ok(run_request(m, hc, req, None)?.report)
}

pub fn reduce_scatter(m: &mut PimMachine, hc: &HypercubeConfig, req: &CommRequest) -> Result<RunReport, CollectiveError> {
    expect_primitive(req, Primitive::ReduceScatter)?;
    Ok(run_request(m, hc, req, None)?.report)
}

pub fn all_gather(m: &mut PimMachine, hc: &HypercubeConfig, req: &CommRequest) -> Result<RunReport, CollectiveError> {
    expect_primitive(req, Primitive::AllGather)?;
    Ok(run_request(m, hc, req, None)?.report)
}

pub fn all_reduce(m: &mut PimMachine, hc: &HypercubeConfig, req: &CommRequest) -> Result<RunReport, CollectiveError> {
    expect_primitive(req, Primitive::AllReduce)?;
    Ok(run_request(m, hc, req, None)?.report)
}

pub fn scatter(
    m: &mut PimMachine,
    hc: &HypercubeConfig,
    req: &CommRequest,
    host_buffers: &[Vec<u8>],
) -> Result<RunReport, CollectiveError> {
    expect_primitive(req, Primitive::Scatter)?;
    Ok(run_request(m, hc, req, Some(host_buffers))?.report)
}

pub fn broadcast(
    m: &mut PimMachine,
    hc: &HypercubeConfig,
    req: &CommRequest,
    host_buffers: &[Vec<u8>],
) -> Result<RunReport, CollectiveError> {
    expect_primitive(req, Primitive::Broadcast)?;
    Ok(run_request(m, hc, req, Some(host_buffers))?.report)
}

/// Returns each group's members' buffers concatenated in member order.
pub fn gather(
    m: &mut PimMachine,
    hc: &HypercubeConfig,
    req: &CommRequest,
) -> Result<(RunReport, Vec<Vec<u8>>), CollectiveError> {
    expect_primitive(req, Primitive::Gather)?;
    let out = run_request(m, hc, req, None)?;
    Ok((out.report, out.host_output.expect("gather output")))
}

/// Returns each group's element-wise reduction. Member buffers are left as
/// they were.
pub fn reduce(
    m: &mut PimMachine,
    hc: &HypercubeConfig,
    req: &CommRequest,
) -> Result<(RunReport, Vec<Vec<u8>>), CollectiveError> {
    expect_primitive(req, Primitive::Reduce)?;
    let out = run_request(m, hc, req, None)?;
    Ok((out.report, out.host_output.expect("reduce output")))
}
