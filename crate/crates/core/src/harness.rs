//! Seeded end-to-end runs with an optional oracle check.

use thiserror::Error;

use crate::collectives::{run_request, CollectiveError, CommRequest, RunOutcome};
use crate::data::DataGen;
use crate::hypercube::HypercubeConfig;
use crate::machine::PimMachine;
use crate::oracle::{self, OracleError};
use crate::topology::PeId;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Collective(#[from] CollectiveError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("result differs from the reference: {0}")]
    Mismatch(String),
}

/// Inputs placed on the machine (or handed to the host side) for one run.
#[derive(Debug, Clone)]
pub struct Inputs {
    /// Bytes at `base_offset` of every node PE.
    pub pe_inputs: Vec<Vec<u8>>,
    pub host_buffers: Option<Vec<Vec<u8>>>,
}

/// Generates inputs from `seed` and loads them into MRAM without touching
/// the counters. Node PEs are filled in id order, then host buffers in
/// group order.
pub fn prepare(
    m: &mut PimMachine,
    hc: &HypercubeConfig,
    req: &CommRequest,
    seed: u64,
) -> Result<Inputs, CollectiveError> {
    req.validate(hc)?;
    let mut gen = DataGen::new(seed);
    let len = req.primitive.input_len(req.bytes_per_pe);
    let mut pe_inputs = Vec::with_capacity(hc.num_nodes());
    for pe in 0..hc.num_nodes() {
        let bytes = gen.bytes(len);
        m.load_mram(PeId(pe), req.base_offset, &bytes)?;
        pe_inputs.push(bytes);
    }
    let host_buffers = req
        .primitive
        .takes_host_buffers()
        .then(|| (0..hc.num_groups(&req.mask)).map(|_| gen.bytes(req.bytes_per_pe)).collect());
    Ok(Inputs { pe_inputs, host_buffers })
}

/// Runs `req` on prepared inputs and, if `self_check`, compares the
/// machine against the oracle.
pub fn run_prepared(
    m: &mut PimMachine,
    hc: &HypercubeConfig,
    req: &CommRequest,
    inputs: &Inputs,
    self_check: bool,
) -> Result<RunOutcome, HarnessError> {
    let out = run_request(m, hc, req, inputs.host_buffers.as_deref())?;
    if self_check {
        let expected = oracle::expected_for_request(hc, req, &inputs.pe_inputs, inputs.host_buffers.as_deref())?;
        oracle::compare(m, hc, req, &expected, out.host_output.as_deref()).map_err(HarnessError::Mismatch)?;
    }
    Ok(out)
}

/// Fresh machine, seeded inputs, one run.
pub fn run_seeded(
    hc: &HypercubeConfig,
    req: &CommRequest,
    seed: u64,
    self_check: bool,
) -> Result<RunOutcome, HarnessError> {
    let mut m = PimMachine::new(*hc.topology());
    let inputs = prepare(&mut m, hc, req, seed)?;
    run_prepared(&mut m, hc, req, &inputs, self_check)
}
