//! The `idss` command line. The whole overlay lives in this process: a state
//! directory holds a scenario file (schema, data, submitted workload) and
//! every command replays it on the simulator, so a node address is a peer
//! index and `fetch` is a deterministic poll.
//!
//! Exit codes: 0 ok, 1 oracle mismatch, 2 SQL parse/classify error or bad
//! ttl, 3 peer not reachable, 4 unknown uqi, 5 configuration or I/O error.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use idss_core::query_state::{State, Uqi};
use idss_core::sql::{plan, SqlError};

use crate::config::{DataSpec, ScenarioConfig, WorkloadSpec};
use crate::harness::{self, peer_id, Scenario};
use crate::schema::SchemaFile;
use crate::{csv_io, ConfigError};

pub const EXIT_MISMATCH: u8 = 1;
pub const EXIT_SQL: u8 = 2;
pub const EXIT_CONNECTIVITY: u8 = 3;
pub const EXIT_UNKNOWN_UQI: u8 = 4;
pub const EXIT_CONFIG: u8 = 5;

const STATE_FILE: &str = "idss.toml";

#[derive(Debug, Parser)]
#[command(name = "idss", version, about = "Peer-to-peer relational query service, simulated in-process")]
pub struct Cli {
    /// Overrides the seed stored in the state or scenario file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Create a state directory from a schema file.
    InitSchema {
        #[arg(long, default_value = ".idss")]
        state: PathBuf,
        #[arg(long)]
        schema: PathBuf,
        #[command(flatten)]
        overlay: OverlayArgs,
    },
    /// Load a CSV file into the overlay.
    Ingest {
        #[arg(long, default_value = ".idss")]
        state: PathBuf,
        #[arg(long)]
        table: String,
        #[arg(long)]
        data: PathBuf,
        /// Put every row on this peer instead of spreading them.
        #[arg(long)]
        peer: Option<usize>,
    },
    /// Submit a query and print its uqi.
    Submit {
        #[arg(long, default_value = ".idss")]
        state: PathBuf,
        /// Initiating peer index.
        #[arg(long, default_value_t = 0)]
        peer: usize,
        /// Time budget in virtual milliseconds.
        #[arg(long, default_value_t = 10_000)]
        ttl: u64,
        /// Virtual submission time; defaults to the latest earlier submission.
        #[arg(long)]
        at: Option<u64>,
        sql: String,
    },
    /// Print a query's state and, once completed, its result as CSV.
    Fetch {
        #[arg(long, default_value = ".idss")]
        state: PathBuf,
        #[arg(long)]
        uqi: String,
        /// Ask this peer instead of the initiator.
        #[arg(long)]
        peer: Option<usize>,
        /// Observe at this virtual time instead of at quiescence.
        #[arg(long)]
        at: Option<u64>,
    },
    /// Run a scenario file and compare every result with the oracle.
    Scenario {
        path: PathBuf,
        #[command(flatten)]
        overlay: OverlayArgs,
        /// Replace every workload ttl.
        #[arg(long)]
        ttl: Option<u64>,
        /// Write the event log here.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Write per-query metrics CSV here.
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Mean coverage and completion time per ttl.
    Sweep {
        path: PathBuf,
        #[command(flatten)]
        overlay: OverlayArgs,
        #[arg(long, value_delimiter = ',', required = true)]
        ttls: Vec<u64>,
        #[arg(long, default_value_t = 3)]
        repetitions: usize,
    },
}

#[derive(Debug, Clone, Default, Args)]
pub struct OverlayArgs {
    #[arg(long)]
    pub peers: Option<usize>,
    #[arg(long)]
    pub fanout: Option<usize>,
    /// Per-hop ttl decay, "3/4" or "0.75".
    #[arg(long)]
    pub decay: Option<String>,
    /// `initiator` or `intermediate`.
    #[arg(long)]
    pub strategy: Option<String>,
    #[arg(long)]
    pub loss: Option<f64>,
}

impl OverlayArgs {
    fn apply(&self, cfg: &mut ScenarioConfig, seed: Option<u64>) {
        if let Some(v) = self.peers {
            cfg.peers = v;
        }
        if let Some(v) = self.fanout {
            cfg.fanout = v;
        }
        if let Some(v) = &self.decay {
            cfg.decay = v.clone();
        }
        if let Some(v) = &self.strategy {
            cfg.strategy = v.clone();
        }
        if let Some(v) = self.loss {
            cfg.loss = v;
        }
        if let Some(v) = seed {
            cfg.seed = v;
        }
    }
}

/// A diagnostic and the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Failure { code, message: message.into() }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::new(EXIT_CONFIG, e.to_string())
    }
}

fn sql_failure(e: &SqlError) -> Failure {
    let kind = match e {
        SqlError::Syntax { .. } => "SyntaxError",
        SqlError::Unsupported(_) => "Unsupported",
        SqlError::TooDeepNesting { .. } => "TooDeepNesting",
        SqlError::MixedAggregateNesting => "MixedAggregateNesting",
        SqlError::HeterogeneousSubqueries => "HeterogeneousSubqueries",
        SqlError::CorrelatedSubquery { .. } => "CorrelatedSubquery",
        SqlError::NotNested => "NotNested",
        SqlError::UnboundSubquery(_) => "UnboundSubquery",
        SqlError::Catalog(_) => "SchemaError",
    };
    Failure::new(EXIT_SQL, format!("{kind}: {e}"))
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    ConfigError::io(path, e).into()
}

/// Run one invocation; on success returns the exit code (0, or 1 when a
/// scenario disagrees with the oracle).
pub fn run(cli: Cli, out: &mut dyn Write) -> Result<u8, Failure> {
    let seed = cli.seed;
    match cli.command {
        Command::InitSchema { state, schema, overlay } => init_schema(&state, &schema, &overlay, seed, out),
        Command::Ingest { state, table, data, peer } => ingest(&state, &table, &data, peer, seed),
        Command::Submit { state, peer, ttl, at, sql } => submit(&state, peer, ttl, at, &sql, seed, out),
        Command::Fetch { state, uqi, peer, at } => fetch(&state, &uqi, peer, at, seed, out),
        Command::Scenario { path, overlay, ttl, log, metrics } => {
            let mut cfg = ScenarioConfig::load(&path)?;
            overlay.apply(&mut cfg, seed);
            if let Some(t) = ttl {
                cfg.workload.iter_mut().for_each(|w| w.ttl = t);
            }
            let scenario = Scenario::from_config(cfg)?;
            let report = harness::run_scenario_logged(&scenario, log.is_some());
            if let Some(p) = &log {
                let mut text = report.log.join("\n");
                text.push('\n');
                std::fs::write(p, text).map_err(|e| io_failure(p, e))?;
            }
            if let Some(p) = &metrics {
                std::fs::write(p, report.metrics_csv()).map_err(|e| io_failure(p, e))?;
            }
            write!(out, "{}", report.summary()).map_err(|e| io_failure(Path::new("<stdout>"), e))?;
            Ok(if report.passed() { 0 } else { EXIT_MISMATCH })
        }
        Command::Sweep { path, overlay, ttls, repetitions } => {
            let mut cfg = ScenarioConfig::load(&path)?;
            overlay.apply(&mut cfg, seed);
            let scenario = Scenario::from_config(cfg)?;
            let rows = harness::sweep_ttl(&scenario, &ttls, repetitions)?;
            write!(out, "{}", harness::sweep_csv(&rows)).map_err(|e| io_failure(Path::new("<stdout>"), e))?;
            Ok(0)
        }
    }
}

fn state_file(dir: &Path) -> PathBuf {
    dir.join(STATE_FILE)
}

/// The state file as written, paths still relative to the directory.
fn load_state(dir: &Path) -> Result<ScenarioConfig, Failure> {
    let path = state_file(dir);
    let text = crate::read_file(&path)?;
    let cfg: ScenarioConfig = toml::from_str(&text).map_err(|e| ConfigError::parse(&path, e))?;
    Ok(cfg)
}

fn scenario_from_state(dir: &Path, mut cfg: ScenarioConfig, seed: Option<u64>) -> Result<Scenario, Failure> {
    cfg.rebase(dir);
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(Scenario::from_config(cfg)?)
}

fn init_schema(
    dir: &Path,
    schema: &Path,
    overlay: &OverlayArgs,
    seed: Option<u64>,
    out: &mut dyn Write,
) -> Result<u8, Failure> {
    let file = SchemaFile::load(schema)?;
    file.to_schemas()?;
    let mut cfg = ScenarioConfig::new(overlay.peers.unwrap_or(8));
    cfg.table = file.table;
    overlay.apply(&mut cfg, seed);
    cfg.resolve()?;
    std::fs::create_dir_all(dir).map_err(|e| io_failure(dir, e))?;
    cfg.save(&state_file(dir))?;
    writeln!(out, "{}", state_file(dir).display()).map_err(|e| io_failure(Path::new("<stdout>"), e))?;
    Ok(0)
}

fn ingest(dir: &Path, table: &str, data: &Path, peer: Option<usize>, seed: Option<u64>) -> Result<u8, Failure> {
    let mut cfg = load_state(dir)?;
    if let Some(p) = peer {
        if p >= cfg.peers {
            return Err(Failure::new(EXIT_CONNECTIVITY, format!("no peer {p} (the overlay has {})", cfg.peers)));
        }
    }
    let rel = PathBuf::from("data").join(format!("{:03}-{table}.csv", cfg.data.len()));
    let dest = dir.join(&rel);
    std::fs::create_dir_all(dest.parent().expect("joined")).map_err(|e| io_failure(dir, e))?;
    std::fs::copy(data, &dest).map_err(|e| io_failure(data, e))?;
    cfg.data.push(DataSpec { table: table.to_string(), file: rel, peer });
    // parse everything once so a bad file is refused now rather than on replay
    if let Err(e) = scenario_from_state(dir, cfg.clone(), seed) {
        let _ = std::fs::remove_file(&dest);
        return Err(e);
    }
    cfg.save(&state_file(dir))?;
    Ok(0)
}

fn submit(
    dir: &Path,
    peer: usize,
    ttl: u64,
    at: Option<u64>,
    sql: &str,
    seed: Option<u64>,
    out: &mut dyn Write,
) -> Result<u8, Failure> {
    let mut cfg = load_state(dir)?;
    let p = plan(sql).map_err(|e| sql_failure(&e))?;
    let scenario = scenario_from_state(dir, cfg.clone(), seed)?;
    p.check_against(&scenario.union).map_err(|e| sql_failure(&e))?;
    if ttl == 0 {
        return Err(Failure::new(EXIT_SQL, "InvalidTtl: ttl must be positive"));
    }
    if peer >= cfg.total_peers() {
        return Err(Failure::new(EXIT_CONNECTIVITY, format!("no peer {peer} (the overlay has {})", cfg.total_peers())));
    }
    let time = at.unwrap_or_else(|| cfg.workload.iter().map(|w| w.time).max().unwrap_or(0));
    cfg.workload.push(WorkloadSpec { time, initiator: peer, sql: sql.to_string(), ttl });
    let mut probe = scenario_from_state(dir, cfg.clone(), seed)?;
    probe.config.horizon = time;
    let rep = harness::replay(&probe, false);
    let uqi = match rep.submissions.last().expect("just pushed") {
        Ok(u) => *u,
        Err(e) => return Err(Failure::new(EXIT_CONNECTIVITY, format!("peer {peer} at time {time}: {e}"))),
    };
    cfg.save(&state_file(dir))?;
    writeln!(out, "{uqi}").map_err(|e| io_failure(Path::new("<stdout>"), e))?;
    Ok(0)
}

fn fetch(
    dir: &Path,
    uqi: &str,
    peer: Option<usize>,
    at: Option<u64>,
    seed: Option<u64>,
    out: &mut dyn Write,
) -> Result<u8, Failure> {
    let Some(uqi) = Uqi::parse_hex(uqi.trim()) else {
        return Err(Failure::new(EXIT_UNKNOWN_UQI, format!("unknown uqi {uqi:?}")));
    };
    let cfg = load_state(dir)?;
    let mut scenario = scenario_from_state(dir, cfg, seed)?;
    if let Some(t) = at {
        scenario.config.horizon = t;
    }
    let rep = harness::replay(&scenario, false);
    let entry = rep.submissions.iter().position(|s| s.as_ref().ok() == Some(&uqi));
    let asked = match (peer, entry) {
        (Some(p), _) => p,
        (None, Some(i)) => scenario.config.workload[i].initiator,
        (None, None) => return Err(Failure::new(EXIT_UNKNOWN_UQI, format!("unknown uqi {uqi}"))),
    };
    if asked >= scenario.config.total_peers() {
        return Err(Failure::new(EXIT_CONNECTIVITY, format!("no peer {asked}")));
    }
    let status = rep.sim.peer(peer_id(asked)).ok_or_else(|| Failure::new(EXIT_CONNECTIVITY, format!("peer {asked} has not joined")))?;
    let status =
        status.fetch_results(&uqi).map_err(|_| Failure::new(EXIT_UNKNOWN_UQI, format!("peer {asked} does not know uqi {uqi}")))?;
    let w = |e| io_failure(Path::new("<stdout>"), e);
    writeln!(out, "{}", status.state).map_err(w)?;
    if status.state == State::Failed {
        if let Some(f) = &status.failure {
            eprintln!("failure: {f}");
        }
    }
    if let (State::Completed, Some(rs)) = (status.state, &status.result) {
        let mut buf = Vec::new();
        csv_io::write_recordset(rs, &mut buf).map_err(|e| Failure::new(EXIT_CONFIG, e.to_string()))?;
        out.write_all(&buf).map_err(w)?;
    }
    Ok(0)
}
