#![allow(dead_code)]

use std::io::Read;

use rand::rngs::StdRng;
use rand::Rng;

use tracelens_core::constraint::parse_constraint;
use tracelens_core::demo::{run_scenario, FlightScenario, ScenarioName};
use tracelens_core::miners::{LabelTrace, LabeledStep};
use tracelens_core::model::{EventKind, FieldMap};
use tracelens_core::trace::ChangeRecord;
use tracelens_core::{ConcreteTrace, MonitorConfig, Scalar, TraceEvent};

pub fn demo(name: ScenarioName) -> ConcreteTrace {
    run_scenario(&FlightScenario::new(name)).unwrap()
}

pub fn config(name: &str, fields: &[&str], functions: &[&str], constraints: &[&str]) -> MonitorConfig {
    MonitorConfig {
        name: name.into(),
        fields: fields.iter().map(|s| s.to_string()).collect(),
        functions: functions.iter().map(|s| s.to_string()).collect(),
        constraints: constraints.iter().map(|c| parse_constraint(c).unwrap()).collect(),
        filters: vec![],
        eq_epsilon: 0.0,
    }
}

/// Sign of altitude over {accelerate, takeoff}.
pub fn sign_config() -> MonitorConfig {
    config("takeoff", &["altitude", "speed"], &["accelerate", "takeoff"], &["cmp(altitude, 0)"])
}

/// The three template examples over the six autopilot fields.
pub fn gear_config() -> MonitorConfig {
    config(
        "gear",
        &["gear", "speed", "takeOffSpeed", "altitude", "groundAlt", "safeAltForGearRetract"],
        &["accelerate", "takeoff", "retractGear"],
        &[
            "value_change(gear)",
            "cmp(speed, takeOffSpeed)",
            "range(altitude, groundAlt, safeAltForGearRetract)",
        ],
    )
}

pub const FIELDS: [&str; 3] = ["a", "b", "c"];

/// Random well-nested trace over six functions and three int fields.
pub fn random_nested_trace(rng: &mut StdRng, id: &str, max_depth: usize, events: usize) -> ConcreteTrace {
    let functions = ["f0", "f1", "f2", "f3", "f4", "f5"];
    let mut vals = [0i64; 3];
    let mut stack: Vec<&str> = Vec::new();
    let mut out = Vec::new();
    let snapshot = |vals: &[i64; 3]| -> FieldMap {
        FIELDS.iter().zip(vals).map(|(f, v)| (f.to_string(), Scalar::Int(*v))).collect()
    };
    let mut seq = 0;
    while out.len() < events || !stack.is_empty() {
        if rng.gen_bool(0.4) {
            vals[rng.gen_range(0..3)] = rng.gen_range(0..3);
        }
        seq += rng.gen_range(1..3);
        let enter = out.len() < events && (stack.is_empty() || (stack.len() < max_depth && rng.gen_bool(0.5)));
        if enter {
            let f = functions[rng.gen_range(0..functions.len())];
            out.push(TraceEvent {
                seq,
                kind: EventKind::Enter,
                function: f.into(),
                depth: stack.len() as u32,
                vars: snapshot(&vals),
                args: Default::default(),
            });
            stack.push(f);
        } else {
            let f = stack.pop().unwrap();
            out.push(TraceEvent {
                seq,
                kind: EventKind::Exit,
                function: f.into(),
                depth: stack.len() as u32,
                vars: snapshot(&vals),
                args: Default::default(),
            });
        }
    }
    ConcreteTrace {
        id: id.into(),
        events: out,
        monitored_fields: FIELDS.iter().map(|s| s.to_string()).collect(),
    }
}

/// Brute force: for every consecutive-snapshot difference, walk the spans
/// open across that boundary from the innermost outwards and pick the
/// first whose endpoints differ on the field; fall back to the innermost.
pub fn oracle_attribution(trace: &ConcreteTrace, fields: &[String]) -> Vec<ChangeRecord> {
    let ev = &trace.events;
    // matching exit index for every enter
    let mut exit_of = vec![usize::MAX; ev.len()];
    let mut open = Vec::new();
    for (i, e) in ev.iter().enumerate() {
        match e.kind {
            EventKind::Enter => open.push(i),
            EventKind::Exit => exit_of[open.pop().unwrap()] = i,
        }
    }
    let mut out = Vec::new();
    for i in 0..ev.len().saturating_sub(1) {
        for f in fields {
            if ev[i].vars[f] == ev[i + 1].vars[f] {
                continue;
            }
            // spans with enter <= i and exit >= i + 1, innermost first
            let mut spans: Vec<usize> = (0..=i)
                .filter(|&s| ev[s].kind == EventKind::Enter && exit_of[s] > i)
                .collect();
            spans.sort_by_key(|&s| std::cmp::Reverse(ev[s].depth));
            let pick = spans
                .iter()
                .find(|&&s| ev[s].vars[f] != ev[exit_of[s]].vars[f])
                .map(|&s| (s, true))
                .or_else(|| spans.first().map(|&s| (s, false)));
            out.push(ChangeRecord {
                field: f.clone(),
                seq: ev[i + 1].seq,
                function: pick.map(|(s, _)| ev[s].function.clone()),
                depth: pick.map(|(s, _)| ev[s].depth),
                enter_seq: pick.map(|(s, _)| ev[s].seq),
                endpoints_differ: pick.is_some_and(|(_, d)| d),
            });
        }
    }
    out.sort();
    out
}

/// Random label traces whose steps carry random change signatures.
pub fn random_label_traces(rng: &mut StdRng, n: usize, alphabet: usize, max_len: usize) -> Vec<LabelTrace> {
    (0..n)
        .map(|i| LabelTrace {
            id: format!("r{i}"),
            steps: (0..rng.gen_range(1..=max_len))
                .map(|_| LabeledStep {
                    function: format!("f{}", rng.gen_range(0..alphabet)),
                    changed: FIELDS
                        .iter()
                        .filter(|_| rng.gen_bool(0.3))
                        .map(|s| s.to_string())
                        .collect(),
                })
                .collect(),
        })
        .collect()
}

/// Generates a trace of exactly `events` lines on the fly, so the text is
/// never held in memory. Each tick is `tick → {accelerate, readSensors,
/// takeoff}` with nested no-op helpers.
pub struct SyntheticTrace {
    remaining: usize,
    seq: u64,
    tick: u64,
    queue: std::collections::VecDeque<String>,
    pending: Vec<u8>,
    pos: usize,
    speed: i64,
    altitude: i64,
}

impl SyntheticTrace {
    /// `events` is rounded down to a whole number of ticks.
    pub fn new(events: usize) -> Self {
        SyntheticTrace {
            remaining: events / 10,
            seq: 0,
            tick: 0,
            queue: Default::default(),
            pending: Vec::new(),
            pos: 0,
            speed: 0,
            altitude: -1,
        }
    }

    fn line(&mut self, kind: &str, f: &str, depth: u32) {
        self.seq += 1;
        let args = if kind == "enter" { ",\"args\":{}" } else { "" };
        self.queue.push_back(format!(
            "{{\"seq\":{},\"kind\":\"{kind}\",\"fn\":\"{f}\",\"depth\":{depth},\"vars\":{{\"speed\":{},\"altitude\":{}}}{args}}}\n",
            self.seq, self.speed, self.altitude
        ));
    }

    fn refill(&mut self) -> bool {
        if self.remaining == 0 {
            return false;
        }
        self.remaining -= 1;
        self.tick += 1;
        self.line("enter", "tick", 0);
        self.line("enter", "readSensors", 1);
        self.line("enter", "readAltimeter", 2);
        self.line("exit", "readAltimeter", 2);
        self.line("exit", "readSensors", 1);
        self.line("enter", "accelerate", 1);
        self.speed = (self.speed + 1) % 200;
        self.line("exit", "accelerate", 1);
        self.line("enter", "takeoff", 1);
        if self.tick.is_multiple_of(50) {
            self.altitude = if self.altitude < 0 { (self.tick % 400) as i64 } else { -1 };
        }
        self.line("exit", "takeoff", 1);
        self.line("exit", "tick", 0);
        true
    }
}

impl Read for SyntheticTrace {
    fn read(&mut self, buf: &mut [u8]) -> std::io::Result<usize> {
        while self.pos >= self.pending.len() {
            match self.queue.pop_front() {
                Some(l) => {
                    self.pending = l.into_bytes();
                    self.pos = 0;
                }
                None => {
                    if !self.refill() {
                        return Ok(0);
                    }
                }
            }
        }
        let n = buf.len().min(self.pending.len() - self.pos);
        buf[..n].copy_from_slice(&self.pending[self.pos..self.pos + n]);
        self.pos += n;
        Ok(n)
    }
}
