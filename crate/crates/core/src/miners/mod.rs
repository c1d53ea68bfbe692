//! Fully automated baselines: prefix tree, kTails, red-blue and gkTail-lite,
//! registered by name behind the [`Miner`] trait.

mod automaton;
mod gktail;
mod ktails;
mod pta;
mod redblue;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{snapshot_diff, ConcreteTrace, EventKind, FieldMap, Fsm, ModelKind, ModelMeta, MonitorConfig};
use crate::trace::FilteredTrace;

pub use gktail::{enriched_label, gktail_lite, GkTailLite};
pub use ktails::{ktails, KTails};
pub use pta::build_pta;
pub use redblue::{redblue, RedBlue};

/// A selected call as the miners see it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledStep {
    #[serde(rename = "fn")]
    pub function: String,
    pub changed: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelTrace {
    pub id: String,
    pub steps: Vec<LabeledStep>,
}

impl LabelTrace {
    pub fn from_filtered(ft: &FilteredTrace) -> Self {
        LabelTrace {
            id: ft.origin.clone(),
            steps: ft
                .steps
                .iter()
                .map(|s| LabeledStep {
                    function: s.function.clone(),
                    changed: s.changed.clone(),
                })
                .collect(),
        }
    }

    pub fn from_labels<S: AsRef<str>>(id: &str, labels: &[S]) -> Self {
        LabelTrace {
            id: id.to_string(),
            steps: labels
                .iter()
                .map(|l| LabeledStep {
                    function: l.as_ref().to_string(),
                    changed: Vec::new(),
                })
                .collect(),
        }
    }

    /// Every call of a selected function, effective or not, in exit order,
    /// with the selected fields its endpoints differ on.
    pub fn from_raw(trace: &ConcreteTrace, config: &MonitorConfig) -> Result<Self> {
        let mut stack: Vec<FieldMap> = Vec::new();
        let mut steps = Vec::new();
        let select = |vars: &FieldMap| -> Result<FieldMap> {
            config
                .fields
                .iter()
                .map(|f| {
                    vars.get(f)
                        .map(|v| (f.clone(), *v))
                        .ok_or_else(|| Error::FilterFields(format!("trace `{}` has no field `{f}`", trace.id)))
                })
                .collect()
        };
        for e in &trace.events {
            match e.kind {
                EventKind::Enter => stack.push(select(&e.vars)?),
                EventKind::Exit => {
                    let before = stack.pop().ok_or_else(|| Error::TraceNesting {
                        seq: e.seq,
                        message: "exit without enter".into(),
                    })?;
                    if config.functions.contains(&e.function) {
                        let changed = snapshot_diff(&before, &select(&e.vars)?, config.eq_epsilon)?;
                        steps.push(LabeledStep {
                            function: e.function.clone(),
                            changed: config.fields.iter().filter(|f| changed.contains(*f)).cloned().collect(),
                        });
                    }
                }
            }
        }
        Ok(LabelTrace {
            id: trace.id.clone(),
            steps,
        })
    }

    pub fn labels(&self) -> Vec<String> {
        self.steps.iter().map(|s| s.function.clone()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinerParams {
    pub strategy: String,
    #[serde(default)]
    pub k: usize,
    #[serde(default)]
    pub careful_det: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timeout_ms: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub memory_budget: Option<u64>,
}

impl MinerParams {
    pub fn new(strategy: &str, k: usize, careful_det: bool) -> Self {
        MinerParams {
            strategy: strategy.to_string(),
            k,
            careful_det,
            timeout_ms: None,
            memory_budget: None,
        }
    }

    pub fn budget(&self) -> Budget {
        Budget {
            timeout: self.timeout_ms.map(Duration::from_millis),
            memory: self.memory_budget,
        }
    }
}

/// Limits for one mining run. Memory is the miner's own estimate of its
/// working set, not a measurement of the process.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Budget {
    pub timeout: Option<Duration>,
    pub memory: Option<u64>,
}

impl Budget {
    pub fn unlimited() -> Self {
        Budget::default()
    }

    pub(crate) fn start(&self) -> Meter {
        let start = Instant::now();
        Meter {
            start,
            deadline: self.timeout.map(|t| start + t),
            memory: self.memory,
            ticks: 0,
        }
    }
}

pub(crate) struct Meter {
    start: Instant,
    deadline: Option<Instant>,
    memory: Option<u64>,
    ticks: u32,
}

impl Meter {
    pub fn tick(&mut self) -> Result<()> {
        self.ticks = self.ticks.wrapping_add(1);
        if self.ticks.is_multiple_of(512) {
            self.check_time()
        } else {
            Ok(())
        }
    }

    pub fn check_time(&self) -> Result<()> {
        match self.deadline {
            Some(d) if Instant::now() >= d => Err(Error::MineTimeout {
                elapsed_ms: self.start.elapsed().as_millis() as u64,
            }),
            _ => Ok(()),
        }
    }

    pub fn check_memory(&self, bytes: u64) -> Result<()> {
        match self.memory {
            Some(budget) if bytes > budget => Err(Error::MineOom { budget }),
            _ => self.check_time(),
        }
    }
}

pub trait Miner: Send + Sync {
    fn name(&self) -> &'static str;

    /// Whether `k` affects the result.
    fn uses_k(&self) -> bool {
        false
    }

    fn mine(&self, traces: &[LabelTrace], params: &MinerParams, budget: &Budget) -> Result<Fsm>;
}

pub struct MinerRegistry {
    miners: IndexMap<&'static str, Box<dyn Miner>>,
}

impl MinerRegistry {
    pub fn empty() -> Self {
        MinerRegistry { miners: IndexMap::new() }
    }

    pub fn with_builtins() -> Self {
        let mut r = Self::empty();
        r.register(Box::new(KTails));
        r.register(Box::new(RedBlue));
        r.register(Box::new(GkTailLite));
        r
    }

    pub fn register(&mut self, miner: Box<dyn Miner>) {
        self.miners.insert(miner.name(), miner);
    }

    pub fn get(&self, name: &str) -> Result<&dyn Miner> {
        self.miners
            .get(name)
            .map(|m| m.as_ref())
            .ok_or_else(|| Error::UnknownStrategy(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.miners.keys().copied()
    }
}

pub fn builtin_miners() -> &'static MinerRegistry {
    static REGISTRY: std::sync::OnceLock<MinerRegistry> = std::sync::OnceLock::new();
    REGISTRY.get_or_init(MinerRegistry::with_builtins)
}

pub(crate) fn fsm_meta(traces: &[LabelTrace], params: &MinerParams, uses_k: bool) -> ModelMeta {
    let ids: BTreeSet<&str> = traces.iter().map(|t| t.id.as_str()).collect();
    ModelMeta {
        kind: ModelKind::Fsm,
        config: String::new(),
        constraints: Vec::new(),
        traces: ids.into_iter().map(str::to_string).collect(),
        strategy: Some(params.strategy.clone()),
        k: uses_k.then_some(params.k),
        careful_det: Some(params.careful_det),
    }
}

/// Runs the strategy named in `params` under its budget.
pub fn mine(traces: &[LabelTrace], params: &MinerParams) -> Result<Fsm> {
    let miner = builtin_miners().get(&params.strategy)?;
    miner.mine(traces, params, &params.budget())
}

/// Prefix-closed acceptance by subset simulation.
pub fn accepts<S: AsRef<str>>(fsm: &Fsm, seq: &[S]) -> bool {
    let Some(init) = fsm.initial else {
        return seq.is_empty();
    };
    let mut current = BTreeSet::from([init]);
    for label in seq {
        let label = label.as_ref();
        current = fsm
            .transitions
            .iter()
            .filter(|t| t.label == label && current.contains(&t.from))
            .map(|t| t.to)
            .collect();
        if current.is_empty() {
            return false;
        }
    }
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Ok,
    Timeout,
    Oom,
}

impl Outcome {
    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Ok => "ok",
            Outcome::Timeout => "timeout",
            Outcome::Oom => "oom",
        }
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub strategy: String,
    pub k: usize,
    pub careful_det: bool,
    pub outcome: Outcome,
    pub states: Option<usize>,
    pub transitions: Option<usize>,
    pub wall_ms: u64,
}

/// Cartesian grid of mining configurations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SweepGrid {
    pub strategies: Vec<String>,
    pub ks: Vec<usize>,
    pub careful_det: Vec<bool>,
}

impl Default for SweepGrid {
    fn default() -> Self {
        SweepGrid {
            strategies: builtin_miners().names().map(str::to_string).collect(),
            ks: vec![0, 1, 2],
            careful_det: vec![true, false],
        }
    }
}

impl FromStr for SweepGrid {
    type Err = Error;

    /// Parses `strategies=a,b k=0,1 careful_det=on,off`; omitted axes keep
    /// their defaults.
    fn from_str(s: &str) -> Result<Self> {
        let mut grid = SweepGrid::default();
        let bad = |m: String| Error::ConfigParse(m);
        for item in s.split_whitespace() {
            let (key, values) = item
                .split_once('=')
                .ok_or_else(|| bad(format!("grid item `{item}` is not key=values")))?;
            let values: Vec<&str> = values.split(',').filter(|v| !v.is_empty()).collect();
            match key {
                "strategies" | "strategy" => grid.strategies = values.iter().map(|v| v.to_string()).collect(),
                "k" => {
                    grid.ks = values
                        .iter()
                        .map(|v| v.parse().map_err(|_| bad(format!("`{v}` is not a k"))))
                        .collect::<Result<_>>()?
                }
                "careful_det" => {
                    grid.careful_det = values
                        .iter()
                        .map(|v| match *v {
                            "on" | "true" => Ok(true),
                            "off" | "false" => Ok(false),
                            other => Err(bad(format!("`{other}` is not on/off"))),
                        })
                        .collect::<Result<_>>()?
                }
                other => return Err(bad(format!("unknown grid axis `{other}`"))),
            }
        }
        Ok(grid)
    }
}

impl SweepGrid {
    pub fn configurations(&self) -> Vec<MinerParams> {
        let mut out = Vec::new();
        for s in &self.strategies {
            for &k in &self.ks {
                for &d in &self.careful_det {
                    out.push(MinerParams::new(s, k, d));
                }
            }
        }
        out
    }
}

/// Runs every grid configuration with its own budget on a pool sized to the
/// machine. Rows come back in grid order.
pub fn sweep(
    traces: &[LabelTrace],
    grid: &SweepGrid,
    timeout: Option<Duration>,
    memory_budget: Option<u64>,
) -> Result<Vec<SweepRow>> {
    let registry = builtin_miners();
    for s in &grid.strategies {
        registry.get(s)?;
    }
    let configs = grid.configurations();
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(configs.len().max(1));
    let next = AtomicUsize::new(0);
    let rows: Mutex<Vec<Option<Result<SweepRow>>>> = Mutex::new((0..configs.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(params) = configs.get(i) else { break };
                let mut params = params.clone();
                params.timeout_ms = timeout.map(|t| t.as_millis() as u64);
                params.memory_budget = memory_budget;
                let row = run_one(traces, &params);
                rows.lock().expect("no worker panics while holding the lock")[i] = Some(row);
            });
        }
    });
    rows.into_inner()
        .expect("workers have finished")
        .into_iter()
        .map(|r| r.expect("every configuration ran"))
        .collect()
}

fn run_one(traces: &[LabelTrace], params: &MinerParams) -> Result<SweepRow> {
    let started = Instant::now();
    let result = mine(traces, params);
    let wall_ms = started.elapsed().as_millis() as u64;
    let (outcome, states, transitions) = match result {
        Ok(fsm) => (Outcome::Ok, Some(fsm.state_count), Some(fsm.transitions.len())),
        Err(Error::MineTimeout { .. }) => (Outcome::Timeout, None, None),
        Err(Error::MineOom { .. }) => (Outcome::Oom, None, None),
        Err(other) => return Err(other),
    };
    Ok(SweepRow {
        strategy: params.strategy.clone(),
        k: params.k,
        careful_det: params.careful_det,
        outcome,
        states,
        transitions,
        wall_ms,
    })
}

/// Fixed-width results table, one row per configuration.
pub fn sweep_table(rows: &[SweepRow]) -> String {
    let mut s = format!(
        "{:<12} {:>2} {:>4} {:<8} {:>7} {:>11} {:>8}\n",
        "strategy", "k", "det", "outcome", "states", "transitions", "wall_ms"
    );
    let dash = |v: Option<usize>| v.map_or("-".to_string(), |n| n.to_string());
    for r in rows {
        s.push_str(&format!(
            "{:<12} {:>2} {:>4} {:<8} {:>7} {:>11} {:>8}\n",
            r.strategy,
            r.k,
            if r.careful_det { "on" } else { "off" },
            r.outcome,
            dash(r.states),
            dash(r.transitions),
            r.wall_ms
        ));
    }
    s
}
