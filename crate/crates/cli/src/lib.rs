//! Experiment runner for the simulated collectives: single runs, sweeps,
//! technique ablations and an alternating-dimension demo.

pub mod config;
pub mod demo;

use std::path::{Path, PathBuf};

use pim_collectives::collectives::FlagPreset;
use pim_collectives::harness::{run_seeded, HarnessError};
use pim_collectives::report::{RunReport, CSV_HEADER};
use rayon::prelude::*;
use thiserror::Error;

use config::{parse_run_configs, read_file, RunConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Parse(String),
    #[error("constraint violation: {0}")]
    Constraint(String),
    #[error("oracle mismatch: {0}")]
    Mismatch(String),
    #[error("demo failed: {0}")]
    DemoFailed(String),
    #[error("{0}")]
    Io(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Parse(_) => 2,
            CliError::Constraint(_) => 3,
            CliError::Mismatch(_) | CliError::DemoFailed(_) => 4,
            CliError::Io(_) | CliError::Internal(_) => 1,
        }
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Collective(c) if c.is_constraint_violation() => CliError::Constraint(c.to_string()),
            HarnessError::Mismatch(s) => CliError::Mismatch(s),
            other => CliError::Internal(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Options {
    pub out: Option<PathBuf>,
    pub csv: bool,
    pub self_check: bool,
    pub strict_groups: bool,
}

/// Runs every config (and every repeat, with seeds `seed + i`) in parallel.
/// All configs are validated before any run starts; reports keep config
/// order.
pub fn run_configs(configs: &[RunConfig], opts: &Options) -> Result<Vec<RunReport>, CliError> {
    let built = configs
        .iter()
        .map(|c| c.build(opts.strict_groups))
        .collect::<Result<Vec<_>, _>>()?;
    let jobs: Vec<(usize, u64)> = configs
        .iter()
        .enumerate()
        .flat_map(|(i, c)| (0..c.repeat as u64).map(move |r| (i, c.seed.wrapping_add(r))))
        .collect();
    jobs.par_iter()
        .map(|&(i, seed)| {
            let (hc, req) = &built[i];
            Ok(run_seeded(hc, req, seed, opts.self_check)?.report)
        })
        .collect()
}

/// Four runs per config, one per cumulative preset, all on the same seed.
pub fn ablation_reports(configs: &[RunConfig], opts: &Options) -> Result<Vec<RunReport>, CliError> {
    let expanded: Vec<RunConfig> = configs
        .iter()
        .flat_map(|c| {
            FlagPreset::ABLATION.into_iter().map(move |p| RunConfig {
                flags: config::FlagsSpec::Preset(p),
                repeat: 1,
                ..c.clone()
            })
        })
        .collect();
    run_configs(&expanded, opts)
}

/// One compact JSON object per line.
pub fn render_json(reports: &[RunReport]) -> Result<String, CliError> {
    let mut out = String::new();
    for r in reports {
        out.push_str(&serde_json::to_string(r).map_err(|e| CliError::Internal(e.to_string()))?);
        out.push('\n');
    }
    Ok(out)
}

pub fn render_csv(reports: &[RunReport], with_host_work: bool) -> Result<String, CliError> {
    let err = |e: csv::Error| CliError::Internal(e.to_string());
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<&str> = CSV_HEADER.to_vec();
    if with_host_work {
        header.push("host_work");
    }
    w.write_record(&header).map_err(err)?;
    for r in reports {
        let mut row = r.csv_record();
        if with_host_work {
            row.push(r.counters.host_work().to_string());
        }
        w.write_record(&row).map_err(err)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Internal(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| CliError::Internal(e.to_string()))
}

fn emit(text: &str, out: Option<&Path>) -> Result<String, CliError> {
    if let Some(path) = out {
        std::fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    }
    Ok(text.to_string())
}

/// `run`: JSON lines (or CSV with `--csv`). Returns the rendered text, also
/// written to `--out` if given.
pub fn cmd_run(config: &Path, opts: &Options) -> Result<String, CliError> {
    let configs = parse_run_configs(&read_file(config)?)?;
    let reports = run_configs(&configs, opts)?;
    let text = if opts.csv {
        render_csv(&reports, false)?
    } else {
        render_json(&reports)?
    };
    emit(&text, opts.out.as_deref())
}

/// `ablation`: CSV rows baseline, pr, pr+im, full per config, with a
/// trailing modeled host-work column.
pub fn cmd_ablation(config: &Path, opts: &Options) -> Result<String, CliError> {
    let configs = parse_run_configs(&read_file(config)?)?;
    let reports = ablation_reports(&configs, opts)?;
    for (chunk, c) in reports.chunks(4).zip(&configs) {
        let work: Vec<u64> = chunk.iter().map(|r| r.counters.host_work()).collect();
        if work.windows(2).any(|w| w[1] > w[0]) {
            log::warn!("host work increases along the ablation for {} {}: {work:?}", c.primitive, c.mask);
        }
    }
    let text = render_csv(&reports, true)?;
    emit(&text, opts.out.as_deref())
}

/// `demo-gnn`: text verdict and per-phase counters; `--out` receives the
/// same data as JSON. Fails with exit code 4 if any seed fails.
pub fn cmd_demo_gnn(config: &Path, opts: &Options) -> Result<String, CliError> {
    let cfg = config::parse_demo_config(&read_file(config)?)?;
    let runs = demo::run_demo(&cfg, opts)?;
    if let Some(path) = &opts.out {
        let json = serde_json::to_string_pretty(&runs).map_err(|e| CliError::Internal(e.to_string()))?;
        std::fs::write(path, json + "\n").map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    }
    let text = demo::render(&runs);
    if let Some(bad) = runs.iter().find(|r| !r.pass) {
        print!("{text}");
        return Err(CliError::DemoFailed(format!("seed {} differs from the dense reference", bad.seed)));
    }
    Ok(text)
}
