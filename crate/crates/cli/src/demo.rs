//! Alternating-dimension demo on a 2-D cube of 64-bit sums.
//!
//! A host matrix is scattered one row block per node. Each layer scales
//! locally, reduce-scatters along one dimension, expands back to full width
//! with a second local scale, and all-reduces along the same dimension.
//! Layers alternate between the two dimensions. A final reduce over the
//! whole cube is compared with a dense host computation that indexes nodes
//! by their coordinates.

use std::fmt::Write as _;

use pim_collectives::codec::{ElementType, ReduceOp};
use pim_collectives::collectives::{CommRequest, Primitive};
use pim_collectives::data::DataGen;
use pim_collectives::harness::{run_prepared, Inputs};
use pim_collectives::hypercube::HypercubeConfig;
use pim_collectives::machine::{CostCounters, PimMachine};
use pim_collectives::topology::{PeId, Topology};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::DemoConfig;
use crate::{CliError, Options};

#[derive(Debug, Clone, Serialize)]
pub struct Phase {
    pub name: String,
    pub counters: CostCounters,
}

#[derive(Debug, Clone, Serialize)]
pub struct DemoRun {
    pub seed: u64,
    pub pass: bool,
    pub phases: Vec<Phase>,
}

impl DemoRun {
    pub fn total(&self) -> CostCounters {
        self.phases.iter().fold(CostCounters::default(), |acc, p| add(acc, p.counters))
    }
}

fn add(a: CostCounters, b: CostCounters) -> CostCounters {
    CostCounters {
        bus_bytes: a.bus_bytes + b.bus_bytes,
        dt_blocks: a.dt_blocks + b.dt_blocks,
        host_rot_ops: a.host_rot_ops + b.host_rot_ops,
        host_reduce_ops: a.host_reduce_ops + b.host_reduce_ops,
        host_staged_bytes: a.host_staged_bytes + b.host_staged_bytes,
        pe_moved_bytes: a.pe_moved_bytes + b.pe_moved_bytes,
        kernel_launches: a.kernel_launches + b.kernel_launches,
    }
}

/// Generated data for one seed.
struct Problem {
    /// Row `p` belongs to node `p`, `features` words each.
    input: Vec<Vec<u64>>,
    /// `a[layer][node][k]`, applied before the reduce-scatter.
    a: Vec<Vec<Vec<u64>>>,
    /// `b[layer][node][k]`, applied while expanding.
    b: Vec<Vec<Vec<u64>>>,
}

impl Problem {
    fn generate(cfg: &DemoConfig, nodes: usize, seed: u64) -> Self {
        let mut gen = DataGen::new(seed);
        let f = cfg.features;
        let input = (0..nodes).map(|_| (0..f).map(|_| gen.next_u64()).collect()).collect();
        let weights = |gen: &mut DataGen| -> Vec<Vec<Vec<u64>>> {
            (0..cfg.layers)
                .map(|_| {
                    (0..nodes)
                        .map(|_| (0..f).map(|_| if cfg.identity_weights { 1 } else { gen.next_u64() }).collect())
                        .collect()
                })
                .collect()
        };
        let a = weights(&mut gen);
        let b = weights(&mut gen);
        Problem { input, a, b }
    }
}

fn layer_dim(layer: usize) -> usize {
    // mask "01" selects dimension 1, "10" dimension 0
    if layer.is_multiple_of(2) {
        1
    } else {
        0
    }
}

fn words(bytes: &[u8]) -> Vec<u64> {
    bytes.chunks_exact(8).map(|c| u64::from_le_bytes(c.try_into().unwrap())).collect()
}

fn to_bytes(words: &[u64]) -> Vec<u8> {
    words.iter().flat_map(|w| w.to_le_bytes()).collect()
}

/// Dense reference: every node row is indexed by its (x, y) coordinates.
fn reference(cfg: &DemoConfig, pb: &Problem) -> Vec<u64> {
    let (nx, ny) = (cfg.dims[0], cfg.dims[1]);
    let f = cfg.features;
    let id = |x: usize, y: usize| x + nx * y;
    let mut rows = pb.input.clone();
    for l in 0..cfg.layers {
        let d = layer_dim(l);
        let g = cfg.dims[d];
        let chunk = f / g;
        let scaled: Vec<Vec<u64>> = rows
            .iter()
            .enumerate()
            .map(|(p, r)| r.iter().zip(&pb.a[l][p]).map(|(x, w)| x.wrapping_mul(*w)).collect())
            .collect();
        let mut next = vec![vec![0u64; f]; nx * ny];
        for x in 0..nx {
            for y in 0..ny {
                let me = id(x, y);
                let peers: Vec<usize> = (0..g).map(|i| if d == 1 { id(x, i) } else { id(i, y) }).collect();
                let idx = if d == 1 { y } else { x };
                let reduced: Vec<u64> = (0..chunk)
                    .map(|t| peers.iter().fold(0u64, |s, &q| s.wrapping_add(scaled[q][idx * chunk + t])))
                    .collect();
                next[me] = (0..f).map(|k| reduced[k % chunk].wrapping_mul(pb.b[l][me][k])).collect();
            }
        }
        rows = vec![vec![0u64; f]; nx * ny];
        for x in 0..nx {
            for y in 0..ny {
                let peers: Vec<usize> = (0..g).map(|i| if d == 1 { id(x, i) } else { id(i, y) }).collect();
                rows[id(x, y)] =
                    (0..f).map(|k| peers.iter().fold(0u64, |s, &q| s.wrapping_add(next[q][k]))).collect();
            }
        }
    }
    (0..f).map(|k| rows.iter().fold(0u64, |s, r| s.wrapping_add(r[k]))).collect()
}

fn validate(cfg: &DemoConfig) -> Result<(), CliError> {
    if cfg.dims.len() != 2 {
        return Err(CliError::Constraint(format!("demo needs a 2-D cube, got {} dimensions", cfg.dims.len())));
    }
    let nodes = cfg.dims[0] * cfg.dims[1];
    if cfg.features == 0 || !cfg.features.is_multiple_of(nodes) {
        return Err(CliError::Constraint(format!(
            "features ({}) must be a positive multiple of the node count ({nodes})",
            cfg.features
        )));
    }
    if cfg.seeds.is_empty() {
        return Err(CliError::Parse("demo needs at least one seed".into()));
    }
    Ok(())
}

struct Runner<'a> {
    cfg: &'a DemoConfig,
    hc: HypercubeConfig,
    m: PimMachine,
    self_check: bool,
    phases: Vec<Phase>,
}

impl Runner<'_> {
    fn request(&self, primitive: Primitive, mask: &str, bytes: usize) -> Result<CommRequest, CliError> {
        let mask = self.hc.parse_mask(mask).map_err(|e| CliError::Constraint(e.to_string()))?;
        let req = CommRequest::new(primitive, ElementType::U64, mask, bytes)
            .with_op(ReduceOp::Sum)
            .with_flags(self.cfg.flags.resolve(primitive, ElementType::U64));
        req.validate(&self.hc).map_err(|e| CliError::Constraint(e.to_string()))?;
        Ok(req)
    }

    fn run(
        &mut self,
        name: String,
        req: &CommRequest,
        host: Option<Vec<Vec<u8>>>,
    ) -> Result<Option<Vec<Vec<u8>>>, CliError> {
        let len = req.primitive.input_len(req.bytes_per_pe);
        let pe_inputs = if self.self_check {
            (0..self.hc.num_nodes()).map(|p| self.m.mram(PeId(p))[..len].to_vec()).collect()
        } else {
            Vec::new()
        };
        let inputs = Inputs {
            pe_inputs,
            host_buffers: host,
        };
        let out = run_prepared(&mut self.m, &self.hc, req, &inputs, self.self_check)?;
        self.phases.push(Phase {
            name,
            counters: out.report.counters,
        });
        Ok(out.host_output)
    }

    fn local(&mut self, f: impl Fn(usize, &[u64]) -> Vec<u64>) -> Result<(), CliError> {
        for p in 0..self.hc.num_nodes() {
            let row = words(&self.m.mram(PeId(p))[..8 * self.cfg.features]);
            let new = f(p, &row);
            self.m.load_mram(PeId(p), 0, &to_bytes(&new)).map_err(|e| CliError::Internal(e.to_string()))?;
        }
        Ok(())
    }
}

fn run_seed(cfg: &DemoConfig, opts: &Options, seed: u64) -> Result<DemoRun, CliError> {
    let topo = Topology::new(cfg.channels, cfg.ranks).map_err(|e| CliError::Constraint(e.to_string()))?;
    let hc = HypercubeConfig::new(&cfg.dims, topo)
        .map_err(|e| CliError::Constraint(e.to_string()))?
        .with_strict_groups(opts.strict_groups);
    let nodes = hc.num_nodes();
    let f = cfg.features;
    let pb = Problem::generate(cfg, nodes, seed);
    let mut r = Runner {
        cfg,
        m: PimMachine::new(*hc.topology()),
        hc,
        self_check: opts.self_check,
        phases: Vec::new(),
    };

    let sc = r.request(Primitive::Scatter, "11", 8 * nodes * f)?;
    let matrix: Vec<u64> = pb.input.concat();
    r.run("scatter".into(), &sc, Some(vec![to_bytes(&matrix)]))?;

    for l in 0..cfg.layers {
        let d = layer_dim(l);
        let mask = if d == 1 { "01" } else { "10" };
        let chunk = f / cfg.dims[d];
        r.local(|p, x| x.iter().zip(&pb.a[l][p]).map(|(v, w)| v.wrapping_mul(*w)).collect())?;
        let rs = r.request(Primitive::ReduceScatter, mask, 8 * f)?;
        r.run(format!("layer{l}/reduce_scatter"), &rs, None)?;
        r.local(|p, y| (0..f).map(|k| y[k % chunk].wrapping_mul(pb.b[l][p][k])).collect())?;
        let ar = r.request(Primitive::AllReduce, mask, 8 * f)?;
        r.run(format!("layer{l}/all_reduce"), &ar, None)?;
    }

    let re = r.request(Primitive::Reduce, "11", 8 * f)?;
    let out = r
        .run("reduce".into(), &re, None)?
        .ok_or_else(|| CliError::Internal("reduce returned no host buffer".into()))?;
    let got = words(&out[0]);
    let pass = got == reference(cfg, &pb);
    Ok(DemoRun {
        seed,
        pass,
        phases: r.phases,
    })
}

/// Runs every seed of `cfg`, in parallel, keeping seed order.
pub fn run_demo(cfg: &DemoConfig, opts: &Options) -> Result<Vec<DemoRun>, CliError> {
    validate(cfg)?;
    cfg.seeds.par_iter().map(|&s| run_seed(cfg, opts, s)).collect()
}

pub fn render(runs: &[DemoRun]) -> String {
    let mut s = String::new();
    for run in runs {
        let _ = writeln!(s, "seed {}: {}", run.seed, if run.pass { "PASS" } else { "FAIL" });
        let _ = writeln!(
            s,
            "  {:<22} {:>10} {:>8} {:>8} {:>8} {:>10} {:>10} {:>8}",
            "phase", "bus_bytes", "dt", "rot", "reduce", "staged", "pe_moved", "kernels"
        );
        let total = run.total();
        let rows = run.phases.iter().map(|p| (p.name.as_str(), p.counters)).chain([("total", total)]);
        for (name, c) in rows {
            let _ = writeln!(
                s,
                "  {:<22} {:>10} {:>8} {:>8} {:>8} {:>10} {:>10} {:>8}",
                name,
                c.bus_bytes,
                c.dt_blocks,
                c.host_rot_ops,
                c.host_reduce_ops,
                c.host_staged_bytes,
                c.pe_moved_bytes,
                c.kernel_launches
            );
        }
    }
    s
}
