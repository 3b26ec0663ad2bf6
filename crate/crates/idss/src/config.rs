//! Scenario files (TOML). Relative paths resolve against the file's directory.
//!
//! ```toml
//! peers = 8
//! fanout = 3
//! decay = "3/4"
//! seed = 1
//! strategy = "intermediate"     # or "initiator"
//! loss = 0.0
//! horizon = 1_000_000_000_000   # virtual ms
//! schema = "schema.toml"        # or inline [[table]] entries
//! placement = "round_robin"     # or "random"
//! merge_mutation = "none"       # "sum_takes_max", "drop_child_rows"
//!
//! [latency]
//! kind = "uniform"              # or "constant" with value_ms
//! min_ms = 5
//! max_ms = 50
//!
//! [[data]]
//! table = "tb_cpu_dynamic"
//! file = "cpu.csv"
//! peer = 2                      # optional: pin every row to one peer
//!
//! [generate]                    # optional random rows per table
//! rows = 100
//!
//! [[workload]]
//! time = 0
//! initiator = 0
//! sql = "SELECT * FROM tb_cpu_dynamic WHERE load > 0.1"
//! ttl = 2000
//!
//! [[churn]]
//! time = 500
//! action = "leave"              # or "join"
//! peer = 3
//!
//! [[faults]]
//! peer = 5
//! kind = "local_exec"
//! ```

use std::path::{Path, PathBuf};

use idss_core::merge::{DecayFactor, MergeMutation, Strategy};
use idss_core::overlay::LatencyModel;
use serde::{Deserialize, Serialize};

use crate::schema::TableSpec;
use crate::ConfigError;

pub const DEFAULT_HORIZON: u64 = 1_000_000_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub peers: usize,
    #[serde(default = "default_fanout")]
    pub fanout: usize,
    #[serde(default = "default_decay")]
    pub decay: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_strategy")]
    pub strategy: String,
    #[serde(default)]
    pub loss: f64,
    #[serde(default = "default_horizon")]
    pub horizon: u64,
    #[serde(default)]
    pub latency: LatencySpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub table: Vec<TableSpec>,
    #[serde(default = "default_placement")]
    pub placement: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub data: Vec<DataSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generate: Option<GenerateSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub workload: Vec<WorkloadSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub churn: Vec<ChurnSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub faults: Vec<FaultSpec>,
    #[serde(default = "default_mutation")]
    pub merge_mutation: String,
}

fn default_fanout() -> usize {
    3
}
fn default_decay() -> String {
    "3/4".into()
}
fn default_strategy() -> String {
    "intermediate".into()
}
fn default_horizon() -> u64 {
    DEFAULT_HORIZON
}
fn default_placement() -> String {
    "round_robin".into()
}
fn default_mutation() -> String {
    "none".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatencySpec {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_ms: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_ms: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value_ms: Option<u64>,
}

impl Default for LatencySpec {
    fn default() -> Self {
        LatencySpec { kind: "uniform".into(), min_ms: Some(5), max_ms: Some(50), value_ms: None }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSpec {
    pub table: String,
    pub file: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub peer: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateSpec {
    pub rows: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadSpec {
    #[serde(default)]
    pub time: u64,
    #[serde(default)]
    pub initiator: usize,
    pub sql: String,
    pub ttl: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChurnSpec {
    pub time: u64,
    pub action: String,
    pub peer: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultSpec {
    pub peer: usize,
    pub kind: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Placement {
    RoundRobin,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChurnAction {
    Join,
    Leave,
}

/// Typed view of the enumerated string fields.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Resolved {
    pub decay: DecayFactor,
    pub strategy: Strategy,
    pub latency: LatencyModel,
    pub placement: Placement,
    pub merge_mutation: MergeMutation,
}

impl ScenarioConfig {
    /// A lossless scenario with no data or workload.
    pub fn new(peers: usize) -> Self {
        toml::from_str(&format!("peers = {peers}")).expect("defaults deserialize")
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = crate::read_file(path)?;
        let mut cfg: ScenarioConfig = toml::from_str(&text).map_err(|e| ConfigError::parse(path, e))?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.rebase(base);
        cfg.resolve()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<(), ConfigError> {
        let text = toml::to_string(self).map_err(|e| ConfigError::field("<root>", e.to_string()))?;
        std::fs::write(path, text).map_err(|e| ConfigError::io(path, e))
    }

    /// Make relative paths absolute with respect to `base`.
    pub fn rebase(&mut self, base: &Path) {
        if let Some(s) = &mut self.schema {
            if s.is_relative() {
                *s = base.join(&*s);
            }
        }
        for d in &mut self.data {
            if d.file.is_relative() {
                d.file = base.join(&d.file);
            }
        }
    }

    /// Validate every field, reporting the first offending one by name.
    pub fn resolve(&self) -> Result<Resolved, ConfigError> {
        if self.peers == 0 {
            return Err(ConfigError::field("peers", "must be at least 1"));
        }
        if self.fanout == 0 {
            return Err(ConfigError::field("fanout", "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.loss) {
            return Err(ConfigError::field("loss", format!("{} is outside [0, 1]", self.loss)));
        }
        let decay = self.decay.parse::<DecayFactor>().map_err(|e| ConfigError::field("decay", e))?;
        let strategy = self.strategy.parse::<Strategy>().map_err(|e| ConfigError::field("strategy", e))?;
        let latency = match self.latency.kind.as_str() {
            "uniform" => {
                let min = self.latency.min_ms.unwrap_or(5);
                let max = self.latency.max_ms.unwrap_or(50);
                if min > max {
                    return Err(ConfigError::field("latency.min_ms", "must not exceed latency.max_ms"));
                }
                LatencyModel::Uniform { min, max }
            }
            "constant" => LatencyModel::Constant(
                self.latency.value_ms.ok_or_else(|| ConfigError::field("latency.value_ms", "required for constant latency"))?,
            ),
            other => return Err(ConfigError::field("latency.kind", format!("unknown kind {other:?}"))),
        };
        let placement = match self.placement.as_str() {
            "round_robin" => Placement::RoundRobin,
            "random" => Placement::Random,
            other => return Err(ConfigError::field("placement", format!("unknown placement {other:?}"))),
        };
        let merge_mutation = match self.merge_mutation.as_str() {
            "none" => MergeMutation::None,
            "sum_takes_max" => MergeMutation::SumTakesMax,
            "drop_child_rows" => MergeMutation::DropChildRows,
            other => return Err(ConfigError::field("merge_mutation", format!("unknown mutation {other:?}"))),
        };
        if self.schema.is_some() == !self.table.is_empty() {
            return Err(ConfigError::field("schema", "give exactly one of `schema` or inline [[table]] entries"));
        }
        let total = self.total_peers();
        for (i, d) in self.data.iter().enumerate() {
            if d.peer.is_some_and(|p| p >= self.peers) {
                return Err(ConfigError::field(format!("data[{i}].peer"), "no such initial peer"));
            }
        }
        for (i, w) in self.workload.iter().enumerate() {
            if w.initiator >= total {
                return Err(ConfigError::field(format!("workload[{i}].initiator"), "no such peer"));
            }
        }
        for (i, c) in self.churn.iter().enumerate() {
            churn_action(&c.action).map_err(|m| ConfigError::field(format!("churn[{i}].action"), m))?;
        }
        for (i, f) in self.faults.iter().enumerate() {
            if f.kind != "local_exec" {
                return Err(ConfigError::field(format!("faults[{i}].kind"), format!("unknown fault {:?}", f.kind)));
            }
            if f.peer >= total {
                return Err(ConfigError::field(format!("faults[{i}].peer"), "no such peer"));
            }
        }
        Ok(Resolved { decay, strategy, latency, placement, merge_mutation })
    }

    /// Initial peers plus any that join later.
    pub fn total_peers(&self) -> usize {
        self.churn.iter().filter(|c| c.action == "join").map(|c| c.peer + 1).fold(self.peers, usize::max)
    }
}

pub fn churn_action(s: &str) -> Result<ChurnAction, String> {
    match s {
        "join" => Ok(ChurnAction::Join),
        "leave" => Ok(ChurnAction::Leave),
        other => Err(format!("unknown action {other:?} (expected join or leave)")),
    }
}
