//! Run configuration files.
//!
//! A file holds one JSON object, or an array of objects for a sweep.

use std::path::Path;

use pim_collectives::codec::{ElementType, ReduceOp};
use pim_collectives::collectives::{CommRequest, FlagPreset, Primitive, TechniqueFlags};
use pim_collectives::hypercube::HypercubeConfig;
use pim_collectives::topology::Topology;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Either a preset name or explicit booleans.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FlagsSpec {
    Preset(FlagPreset),
    Explicit(TechniqueFlags),
}

impl Default for FlagsSpec {
    fn default() -> Self {
        FlagsSpec::Preset(FlagPreset::Full)
    }
}

impl FlagsSpec {
    /// Presets drop techniques that do not apply; explicit flags are taken
    /// as given and validated later.
    pub fn resolve(&self, primitive: Primitive, dtype: ElementType) -> TechniqueFlags {
        match self {
            FlagsSpec::Preset(p) => p.resolve(primitive, dtype),
            FlagsSpec::Explicit(f) => *f,
        }
    }
}

fn one() -> usize {
    1
}

fn default_dtype() -> ElementType {
    ElementType::U8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "one")]
    pub channels: usize,
    #[serde(default = "one")]
    pub ranks: usize,
    pub dims: Vec<usize>,
    pub mask: String,
    pub primitive: Primitive,
    #[serde(default = "default_dtype")]
    pub dtype: ElementType,
    #[serde(default)]
    pub op: Option<ReduceOp>,
    pub bytes_per_pe: usize,
    #[serde(default)]
    pub flags: FlagsSpec,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub strict_groups: bool,
    #[serde(default = "one")]
    pub repeat: usize,
    #[serde(default)]
    pub base_offset: usize,
}

impl RunConfig {
    /// Builds the cube and request; `strict` forces strict group checking.
    pub fn build(&self, strict: bool) -> Result<(HypercubeConfig, CommRequest), CliError> {
        if self.primitive.needs_op() && self.op.is_none() {
            return Err(CliError::Parse(format!("`op` is required for {}", self.primitive)));
        }
        let topo = Topology::new(self.channels, self.ranks).map_err(|e| CliError::Constraint(e.to_string()))?;
        let hc = HypercubeConfig::new(&self.dims, topo)
            .map_err(|e| CliError::Constraint(e.to_string()))?
            .with_strict_groups(strict || self.strict_groups);
        let mask = hc.parse_mask(&self.mask).map_err(|e| CliError::Constraint(e.to_string()))?;
        let mut req = CommRequest::new(self.primitive, self.dtype, mask, self.bytes_per_pe)
            .with_flags(self.flags.resolve(self.primitive, self.dtype))
            .with_base_offset(self.base_offset);
        req.op = self.op;
        req.validate(&hc).map_err(|e| CliError::Constraint(e.to_string()))?;
        Ok((hc, req))
    }
}

fn parse_list<T: DeserializeOwned>(text: &str) -> Result<Vec<T>, CliError> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| CliError::Parse(e.to_string()))?;
    match value {
        serde_json::Value::Array(items) => items
            .into_iter()
            .enumerate()
            .map(|(i, v)| serde_json::from_value(v).map_err(|e| CliError::Parse(format!("entry {i}: {e}"))))
            .collect(),
        v => Ok(vec![serde_json::from_value(v).map_err(|e| CliError::Parse(e.to_string()))?]),
    }
}

pub fn parse_run_configs(text: &str) -> Result<Vec<RunConfig>, CliError> {
    let list: Vec<RunConfig> = parse_list(text)?;
    if list.is_empty() {
        return Err(CliError::Parse("config array is empty".into()));
    }
    Ok(list)
}

pub fn read_file(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

/// Settings for the alternating-dimension demo.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemoConfig {
    #[serde(default = "one")]
    pub channels: usize,
    #[serde(default = "one")]
    pub ranks: usize,
    #[serde(default = "DemoConfig::default_dims")]
    pub dims: Vec<usize>,
    #[serde(default = "DemoConfig::default_layers")]
    pub layers: usize,
    /// 64-bit elements per PE.
    #[serde(default = "DemoConfig::default_features")]
    pub features: usize,
    #[serde(default = "DemoConfig::default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub flags: FlagsSpec,
    /// Makes every local multiply a multiply by one.
    #[serde(default)]
    pub identity_weights: bool,
}

impl DemoConfig {
    fn default_dims() -> Vec<usize> {
        vec![8, 8]
    }

    fn default_layers() -> usize {
        3
    }

    fn default_features() -> usize {
        64
    }

    fn default_seeds() -> Vec<u64> {
        vec![7]
    }
}

impl Default for DemoConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

pub fn parse_demo_config(text: &str) -> Result<DemoConfig, CliError> {
    let list: Vec<DemoConfig> = parse_list(text)?;
    match <[DemoConfig; 1]>::try_from(list) {
        Ok([c]) => Ok(c),
        Err(_) => Err(CliError::Parse("demo config must be a single object".into())),
    }
}
