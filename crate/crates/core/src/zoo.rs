//! Populations of trained CartPoleNets: building, binning, and persistence.
//!
//! Binary layout (all integers little-endian):
//!
//! ```text
//! 0   8  magic  "AGNTZOO\0"
//! 8   4  format version (u32)
//! 12  8  record count (u64)
//! 20  4  metadata length M (u32)
//! 24  M  metadata, UTF-8 JSON
//! 24+M   records, RECORD_BYTES each:
//!        id u64 | survival_time f32 | group u8 | seed u64 | budget u32 | 212 × f32 weights
//! ```

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::agent::{survival_time, train_agent_with_snapshots, TrainConfig, WeightVector, WEIGHT_DIM};
use crate::error::{Error, Result};
use crate::par;
use crate::rng::{child_seed, Rng};

pub const ZOO_MAGIC: &[u8; 8] = b"AGNTZOO\0";
pub const ZOO_VERSION: u32 = 1;
const HEADER_BYTES: usize = 24;
pub const RECORD_BYTES: usize = 8 + 4 + 1 + 8 + 4 + 4 * WEIGHT_DIM;

/// Survival-time bins: G1 = [1, 50], G2 = (50, 100], G3 = (100, 150], G4 = (150, 200].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Group {
    G1,
    G2,
    G3,
    G4,
}

impl Group {
    pub const ALL: [Group; 4] = [Group::G1, Group::G2, Group::G3, Group::G4];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Group> {
        Self::ALL.get(i).copied()
    }

    /// Inclusive-exclusive survival range `(lo, hi]` (G1 also includes 1).
    pub fn range(self) -> (f64, f64) {
        match self {
            Group::G1 => (1.0, 50.0),
            Group::G2 => (50.0, 100.0),
            Group::G3 => (100.0, 150.0),
            Group::G4 => (150.0, 200.0),
        }
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "G{}", self.index() + 1)
    }
}

impl FromStr for Group {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "G1" | "1" => Ok(Group::G1),
            "G2" | "2" => Ok(Group::G2),
            "G3" | "3" => Ok(Group::G3),
            "G4" | "4" => Ok(Group::G4),
            other => Err(Error::contract(format!("unknown group {other:?} (expected G1..G4)"))),
        }
    }
}

pub fn bin(survival_time: f64) -> Result<Group> {
    if !(1.0..=200.0).contains(&survival_time) {
        return Err(Error::contract(format!(
            "survival time {survival_time} outside [1, 200]"
        )));
    }
    Ok(if survival_time <= 50.0 {
        Group::G1
    } else if survival_time <= 100.0 {
        Group::G2
    } else if survival_time <= 150.0 {
        Group::G3
    } else {
        Group::G4
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentRecord {
    pub id: u64,
    pub weights: WeightVector,
    pub survival_time: f64,
    pub group: Group,
    pub seed: u64,
    #[serde(rename = "budget")]
    pub train_budget: u32,
}

impl AgentRecord {
    /// Builds a record at on-disk precision, deriving the group from the survival time.
    pub fn new(id: u64, weights: &[f64], survival_time: f64, seed: u64, train_budget: u32) -> Result<Self> {
        let weights = WeightVector::new(weights.to_vec())?.quantized();
        if !weights.is_finite() {
            return Err(Error::contract(format!("record {id} has non-finite weights")));
        }
        let survival_time = f64::from(survival_time as f32);
        Ok(Self {
            id,
            weights,
            survival_time,
            group: bin(survival_time)?,
            seed,
            train_budget,
        })
    }
}

/// How training budgets and hyperparameters are randomized per run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BudgetDistribution {
    pub min_steps: usize,
    pub max_steps: usize,
    /// One is picked uniformly per run.
    pub learning_rates: Vec<f64>,
    /// One is picked uniformly per run.
    pub discounts: Vec<f64>,
    /// Records kept per run, evenly spaced over the budget; the last is the final network.
    pub snapshots_per_run: usize,
}

impl Default for BudgetDistribution {
    fn default() -> Self {
        Self {
            min_steps: 2_000,
            max_steps: 25_000,
            learning_rates: vec![5e-4, 1e-3, 2e-3],
            discounts: vec![0.95, 0.99],
            snapshots_per_run: 1,
        }
    }
}

impl BudgetDistribution {
    pub fn validate(&self) -> Result<()> {
        if self.min_steps > self.max_steps {
            return Err(Error::contract("min_steps exceeds max_steps"));
        }
        if self.learning_rates.is_empty() || self.discounts.is_empty() {
            return Err(Error::contract("need at least one learning rate and one discount"));
        }
        if self.snapshots_per_run == 0 {
            return Err(Error::contract("snapshots_per_run must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ZooBuildConfig {
    pub runs: usize,
    pub seed: u64,
    pub budget: BudgetDistribution,
    /// Fields not randomized by `budget` come from here.
    pub base: TrainConfig,
    pub eval_episodes: usize,
}

impl Default for ZooBuildConfig {
    fn default() -> Self {
        Self {
            runs: 200,
            seed: 0,
            budget: BudgetDistribution::default(),
            base: TrainConfig::default(),
            eval_episodes: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildFailure {
    pub run: u64,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetInfo {
    pub group: Option<Group>,
    pub max_n: Option<usize>,
    pub seed: u64,
    pub parent_len: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ZooMeta {
    pub build: Option<ZooBuildConfig>,
    /// "final-only" or "checkpoints".
    pub record_mode: String,
    pub failures: Vec<BuildFailure>,
    pub bin_counts: BTreeMap<String, usize>,
    pub subset: Option<SubsetInfo>,
    /// Free-form provenance supplied by the caller (e.g. tool version, run config).
    pub extra: Option<serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Zoo {
    pub records: Vec<AgentRecord>,
    pub meta: ZooMeta,
}

impl Zoo {
    pub fn new(records: Vec<AgentRecord>, mut meta: ZooMeta) -> Result<Self> {
        let mut seen = HashSet::with_capacity(records.len());
        for r in &records {
            if !seen.insert(r.id) {
                return Err(Error::contract(format!("duplicate record id {}", r.id)));
            }
        }
        meta.bin_counts = bin_counts(&records);
        Ok(Self { records, meta })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: u64) -> Option<&AgentRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    pub fn ids(&self) -> Vec<u64> {
        self.records.iter().map(|r| r.id).collect()
    }

    pub fn group_counts(&self) -> [usize; 4] {
        let mut counts = [0; 4];
        for r in &self.records {
            counts[r.group.index()] += 1;
        }
        counts
    }

    pub fn in_group(&self, group: Group) -> impl Iterator<Item = &AgentRecord> {
        self.records.iter().filter(move |r| r.group == group)
    }

    pub fn survival_times(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.survival_time).collect()
    }
}

fn bin_counts(records: &[AgentRecord]) -> BTreeMap<String, usize> {
    let mut counts: BTreeMap<String, usize> = Group::ALL.iter().map(|g| (g.to_string(), 0)).collect();
    for r in records {
        *counts.entry(r.group.to_string()).or_default() += 1;
    }
    counts
}

fn run_seed(master: u64, run: u64) -> u64 {
    child_seed(master, run)
}

/// Trains `config.runs` agents with randomized budgets and hyperparameters,
/// evaluates each kept snapshot over `eval_episodes` episodes and bins it.
/// Record ids are `run × snapshots_per_run + k`. Failed runs are skipped and
/// listed in the metadata.
pub fn build_zoo(config: &ZooBuildConfig) -> Result<Zoo> {
    if config.runs == 0 {
        return Err(Error::contract("a zoo needs at least one run"));
    }
    config.budget.validate()?;
    config.base.validate()?;
    if config.eval_episodes == 0 {
        return Err(Error::contract("eval_episodes must be at least 1"));
    }
    let per_run = config.budget.snapshots_per_run;
    let results = par::map_range(config.runs, |run| build_run(config, run as u64));

    let mut records = Vec::with_capacity(config.runs * per_run);
    let mut failures = Vec::new();
    for (run, result) in results.into_iter().enumerate() {
        match result {
            Ok(mut rs) => records.append(&mut rs),
            Err(err) => failures.push(BuildFailure {
                run: run as u64,
                seed: run_seed(config.seed, run as u64),
                error: err.to_string(),
            }),
        }
    }
    let meta = ZooMeta {
        build: Some(config.clone()),
        record_mode: if per_run > 1 { "checkpoints" } else { "final-only" }.to_string(),
        failures,
        ..Default::default()
    };
    Zoo::new(records, meta)
}

fn build_run(config: &ZooBuildConfig, run: u64) -> Result<Vec<AgentRecord>> {
    let seed = run_seed(config.seed, run);
    let mut rng = Rng::new(seed);
    let dist = &config.budget;
    let budget = dist.min_steps + rng.below(dist.max_steps - dist.min_steps + 1);
    let train = TrainConfig {
        budget_steps: budget,
        learning_rate: dist.learning_rates[rng.below(dist.learning_rates.len())],
        discount: dist.discounts[rng.below(dist.discounts.len())],
        ..config.base
    };
    let per_run = dist.snapshots_per_run;
    let steps: Vec<usize> = (1..=per_run).map(|k| k * budget / per_run).collect();
    let mut train_rng = rng.fork_labeled("train");
    let outcome = train_agent_with_snapshots(&train, &steps, &mut train_rng)?;
    outcome
        .snapshots
        .iter()
        .enumerate()
        .map(|(k, (step, net))| {
            let mut eval_rng = rng.fork_labeled("eval").fork(k as u64);
            let w = net.vectorize().quantized();
            let quantized = crate::agent::CartPoleNet::devectorize(&w)?;
            let st = survival_time(&quantized, config.eval_episodes, &mut eval_rng);
            AgentRecord::new(run * per_run as u64 + k as u64, &w, st, seed, *step as u32)
        })
        .collect()
}

/// Filter by group, then draw at most `max_n` records without replacement.
/// Kept records stay in their original order.
pub fn subset(zoo: &Zoo, group: Option<Group>, max_n: Option<usize>, seed: u64) -> Zoo {
    let mut pool: Vec<&AgentRecord> = zoo
        .records
        .iter()
        .filter(|r| group.map_or(true, |g| r.group == g))
        .collect();
    if let Some(n) = max_n {
        if n < pool.len() {
            let mut picks = Rng::new(seed).sample_distinct(pool.len(), n);
            picks.sort_unstable();
            pool = picks.into_iter().map(|i| pool[i]).collect();
        }
    }
    let records: Vec<AgentRecord> = pool.into_iter().cloned().collect();
    let meta = ZooMeta {
        subset: Some(SubsetInfo {
            group,
            max_n,
            seed,
            parent_len: zoo.len(),
        }),
        ..zoo.meta.clone()
    };
    Zoo::new(records, meta).expect("ids stay unique under filtering")
}

pub fn encode_zoo(zoo: &Zoo) -> Result<Vec<u8>> {
    let meta = serde_json::to_vec(&zoo.meta)?;
    let mut out = Vec::with_capacity(HEADER_BYTES + meta.len() + zoo.len() * RECORD_BYTES);
    out.extend_from_slice(ZOO_MAGIC);
    out.extend_from_slice(&ZOO_VERSION.to_le_bytes());
    out.extend_from_slice(&(zoo.len() as u64).to_le_bytes());
    out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    out.extend_from_slice(&meta);
    for r in &zoo.records {
        out.extend_from_slice(&r.id.to_le_bytes());
        out.extend_from_slice(&(r.survival_time as f32).to_le_bytes());
        out.push(r.group.index() as u8 + 1);
        out.extend_from_slice(&r.seed.to_le_bytes());
        out.extend_from_slice(&r.train_budget.to_le_bytes());
        for &w in r.weights.iter() {
            out.extend_from_slice(&(w as f32).to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn err(&self, detail: impl Into<String>) -> Error {
        Error::Format {
            what: "zoo file",
            offset: self.pos as u64,
            detail: detail.into(),
        }
    }

    fn take(&mut self, n: usize, field: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.err(format!(
                "truncated while reading {field}: need {n} bytes, {} left",
                self.bytes.len() - self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, field: &str) -> Result<u8> {
        Ok(self.take(1, field)?[0])
    }

    fn u32(&mut self, field: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, field)?.try_into().unwrap()))
    }

    fn u64(&mut self, field: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, field)?.try_into().unwrap()))
    }

    fn f32(&mut self, field: &str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4, field)?.try_into().unwrap()))
    }
}

pub fn decode_zoo(bytes: &[u8]) -> Result<Zoo> {
    let mut c = Cursor { bytes, pos: 0 };
    let magic = c.take(8, "magic")?;
    if magic != ZOO_MAGIC {
        c.pos = 0;
        return Err(c.err("bad magic, not a zoo file"));
    }
    let version_at = c.pos;
    let version = c.u32("version")?;
    if version != ZOO_VERSION {
        c.pos = version_at;
        return Err(c.err(format!("unsupported format version {version}")));
    }
    let count = c.u64("record count")?;
    let meta_len = c.u32("metadata length")? as usize;
    let meta_at = c.pos;
    let meta: ZooMeta = serde_json::from_slice(c.take(meta_len, "metadata")?).map_err(|e| Error::Format {
        what: "zoo file",
        offset: meta_at as u64,
        detail: format!("metadata is not valid JSON: {e}"),
    })?;
    let expected = (count as u128) * RECORD_BYTES as u128;
    let remaining = (bytes.len() - c.pos) as u128;
    if remaining != expected {
        return Err(c.err(format!(
            "header declares {count} records ({expected} bytes) but {remaining} bytes follow"
        )));
    }
    let mut records = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let start = c.pos;
        let id = c.u64("id")?;
        let st = c.f32("survival_time")?;
        let group_at = c.pos;
        let code = c.u8("group")?;
        let seed = c.u64("seed")?;
        let budget = c.u32("budget")?;
        let mut w = Vec::with_capacity(WEIGHT_DIM);
        for _ in 0..WEIGHT_DIM {
            w.push(f64::from(c.f32("weights")?));
        }
        let group = code
            .checked_sub(1)
            .and_then(|i| Group::from_index(i as usize))
            .ok_or_else(|| Error::Format {
                what: "zoo file",
                offset: group_at as u64,
                detail: format!("invalid group code {code}"),
            })?;
        let record = AgentRecord::new(id, &w, f64::from(st), seed, budget).map_err(|e| Error::Format {
            what: "zoo file",
            offset: start as u64,
            detail: format!("record {id}: {e}"),
        })?;
        if record.group != group {
            return Err(Error::Format {
                what: "zoo file",
                offset: group_at as u64,
                detail: format!("record {id} stored in {group} but survival {st} bins to {}", record.group),
            });
        }
        records.push(record);
    }
    Zoo::new(records, meta).map_err(|e| Error::Format {
        what: "zoo file",
        offset: HEADER_BYTES as u64,
        detail: e.to_string(),
    })
}

/// Writes atomically through a sibling temp file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::contract(format!("{} is not a file path", path.display())))?;
    let mut tmp_name = file_name.to_os_string();
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    {
        let mut f = BufWriter::new(fs::File::create(&tmp)?);
        f.write_all(bytes)?;
        f.flush()?;
        f.get_ref().sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn save_zoo(zoo: &Zoo, path: &Path) -> Result<()> {
    write_atomic(path, &encode_zoo(zoo)?)
}

pub fn load_zoo(path: &Path) -> Result<Zoo> {
    decode_zoo(&fs::read(path)?)
}

/// One JSON object per record: `{id, survival_time, group, seed, budget, weights}`.
pub fn write_jsonl<W: Write>(zoo: &Zoo, mut out: W) -> Result<()> {
    for r in &zoo.records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jsonl(text: &str) -> Result<Vec<AgentRecord>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}
