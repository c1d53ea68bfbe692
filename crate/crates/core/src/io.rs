//! Canonical model files, DOT export and config files.
//!
//! A model file is a JSON object with keys `meta`, `states`, `transitions`,
//! `warnings`, always emitted in that order. States are sorted by id and
//! transitions by `(from, label, to)`, so serializing is byte-deterministic.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    Component, Efsm, EfsmState, Fsm, ModelKind, ModelMeta, MonitorConfig, Segment, StateGraph, StateId, Transition,
    Valuation, Warning,
};

/// Either machine shape, as read from a model file.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Efsm(Efsm),
    Fsm(Fsm),
}

impl Model {
    pub fn meta(&self) -> &ModelMeta {
        match self {
            Model::Efsm(m) => &m.meta,
            Model::Fsm(m) => &m.meta,
        }
    }

    fn graph(&self) -> &dyn StateGraph {
        match self {
            Model::Efsm(m) => m,
            Model::Fsm(m) => m,
        }
    }

    pub fn into_efsm(self) -> Option<Efsm> {
        match self {
            Model::Efsm(m) => Some(m),
            Model::Fsm(_) => None,
        }
    }
}

impl StateGraph for Model {
    fn state_count(&self) -> usize {
        self.graph().state_count()
    }

    fn initial_states(&self) -> Vec<StateId> {
        self.graph().initial_states()
    }

    fn transitions(&self) -> &BTreeSet<Transition> {
        self.graph().transitions()
    }

    fn valuation(&self, id: StateId) -> Option<&Valuation> {
        self.graph().valuation(id)
    }

    fn state_label(&self, id: StateId) -> Option<&str> {
        self.graph().state_label(id)
    }

    fn warning_count(&self) -> usize {
        self.graph().warning_count()
    }
}

impl From<Efsm> for Model {
    fn from(m: Efsm) -> Self {
        Model::Efsm(m)
    }
}

impl From<Fsm> for Model {
    fn from(m: Fsm) -> Self {
        Model::Fsm(m)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StateRecord {
    id: String,
    valuation: IndexMap<String, String>,
    label: String,
    initial: bool,
    segments: Vec<(String, u64, u64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    accepting: Option<bool>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TransitionRecord {
    from: String,
    to: String,
    label: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    meta: ModelMeta,
    states: Vec<StateRecord>,
    transitions: Vec<TransitionRecord>,
    warnings: Vec<Warning>,
}

fn transition_records(ts: &BTreeSet<Transition>) -> Vec<TransitionRecord> {
    ts.iter()
        .map(|t| TransitionRecord {
            from: t.from.to_string(),
            to: t.to.to_string(),
            label: t.label.clone(),
        })
        .collect()
}

fn efsm_file(m: &Efsm) -> ModelFile {
    ModelFile {
        meta: m.meta.clone(),
        states: m
            .states
            .iter()
            .map(|s| StateRecord {
                id: s.id.to_string(),
                valuation: s
                    .valuation
                    .0
                    .iter()
                    .enumerate()
                    .map(|(i, c)| (i.to_string(), c.token()))
                    .collect(),
                label: s.label.clone(),
                initial: s.initial,
                segments: s.segments.iter().map(|g| (g.trace.clone(), g.start, g.end)).collect(),
                accepting: None,
            })
            .collect(),
        transitions: transition_records(&m.transitions),
        warnings: m.warnings.clone(),
    }
}

fn fsm_file(m: &Fsm) -> ModelFile {
    ModelFile {
        meta: m.meta.clone(),
        states: m
            .states()
            .map(|id| StateRecord {
                id: id.to_string(),
                valuation: IndexMap::new(),
                label: String::new(),
                initial: m.initial == Some(id),
                segments: Vec::new(),
                accepting: m.accepting.as_ref().map(|a| a.contains(&id)),
            })
            .collect(),
        transitions: transition_records(&m.transitions),
        warnings: Vec::new(),
    }
}

fn render(file: &ModelFile) -> String {
    let mut s = serde_json::to_string_pretty(file).expect("model files always serialize");
    s.push('\n');
    s
}

pub fn serialize_efsm(m: &Efsm) -> String {
    render(&efsm_file(m))
}

pub fn serialize_fsm(m: &Fsm) -> String {
    render(&fsm_file(m))
}

pub fn serialize_model(m: &Model) -> String {
    match m {
        Model::Efsm(e) => serialize_efsm(e),
        Model::Fsm(f) => serialize_fsm(f),
    }
}

fn invalid(message: String) -> Error {
    Error::ModelParse {
        line: 0,
        column: 0,
        message,
    }
}

fn state_id(text: &str, n: usize, what: &str) -> Result<StateId> {
    let id: StateId = text
        .parse()
        .map_err(|_| invalid(format!("{what}: `{text}` is not a state id")))?;
    if id.0 >= n {
        return Err(invalid(format!("{what}: `{text}` is not a declared state")));
    }
    Ok(id)
}

/// Parses a model file. Syntax and shape errors carry the line and column
/// of the offending text; consistency errors report line 0 and name the
/// record instead.
pub fn parse_model(text: &str) -> Result<Model> {
    let file: ModelFile = serde_json::from_str(text).map_err(Error::model_parse)?;
    let n = file.states.len();
    for (i, s) in file.states.iter().enumerate() {
        if state_id(&s.id, n, &format!("states[{i}]"))? != StateId(i) {
            return Err(invalid(format!("states[{i}]: expected id s{i}, found `{}`", s.id)));
        }
    }
    let mut transitions = BTreeSet::new();
    for (i, t) in file.transitions.iter().enumerate() {
        let what = format!("transitions[{i}]");
        transitions.insert(Transition {
            from: state_id(&t.from, n, &what)?,
            label: t.label.clone(),
            to: state_id(&t.to, n, &what)?,
        });
    }
    match file.meta.kind {
        ModelKind::Fsm => {
            let initial: Vec<StateId> = file.states.iter().enumerate().filter(|(_, s)| s.initial).map(|(i, _)| StateId(i)).collect();
            if initial.len() > 1 {
                return Err(invalid("an fsm has at most one initial state".into()));
            }
            let accepting = if file.states.iter().any(|s| s.accepting.is_some()) {
                Some(
                    file.states
                        .iter()
                        .enumerate()
                        .filter(|(_, s)| s.accepting == Some(true))
                        .map(|(i, _)| StateId(i))
                        .collect(),
                )
            } else {
                None
            };
            Ok(Model::Fsm(Fsm {
                meta: file.meta,
                state_count: n,
                initial: initial.first().copied(),
                transitions,
                accepting,
            }))
        }
        ModelKind::Efsm => {
            let width = file.meta.constraints.len();
            let mut states = Vec::with_capacity(n);
            for (i, s) in file.states.into_iter().enumerate() {
                if s.valuation.len() != width {
                    return Err(invalid(format!(
                        "states[{i}]: valuation has {} components, meta lists {width} constraints",
                        s.valuation.len()
                    )));
                }
                let mut comps = Vec::with_capacity(width);
                for (j, (key, token)) in s.valuation.iter().enumerate() {
                    if key != &j.to_string() {
                        return Err(invalid(format!("states[{i}]: valuation key `{key}` out of order")));
                    }
                    comps.push(Component::from_token(token).map_err(|e| invalid(format!("states[{i}]: {e}")))?);
                }
                states.push(EfsmState {
                    id: StateId(i),
                    valuation: Valuation(comps),
                    label: s.label,
                    initial: s.initial,
                    segments: s
                        .segments
                        .into_iter()
                        .map(|(trace, start, end)| Segment { trace, start, end })
                        .collect(),
                });
            }
            Efsm::from_parts(file.meta, states, transitions, file.warnings)
                .map(Model::Efsm)
                .map_err(invalid)
        }
    }
}

pub fn parse_efsm(text: &str) -> Result<Efsm> {
    match parse_model(text)? {
        Model::Efsm(m) => Ok(m),
        Model::Fsm(_) => Err(invalid("expected an efsm model, found an fsm".into())),
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DotOptions {
    pub show_valuations: bool,
    pub highlight: BTreeSet<StateId>,
}

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"").replace('\n', "\\n")
}

/// DOT digraph with one node per state and one edge per transition.
/// Initial states are double circles; highlighted states are filled.
pub fn export_dot<M: StateGraph + ?Sized>(model: &M, options: &DotOptions) -> String {
    let initial: BTreeSet<StateId> = model.initial_states().into_iter().collect();
    let mut s = String::from("digraph model {\n  rankdir=LR;\n  node [shape=circle];\n");
    for i in 0..model.state_count() {
        let id = StateId(i);
        let mut label = id.to_string();
        if let Some(l) = model.state_label(id).filter(|l| !l.is_empty()) {
            label.push('\n');
            label.push_str(l);
        }
        if options.show_valuations {
            if let Some(v) = model.valuation(id) {
                label.push('\n');
                label.push_str(&v.to_string());
            }
        }
        let mut attrs = vec![format!("label=\"{}\"", escape(&label))];
        if initial.contains(&id) {
            attrs.push("shape=doublecircle".into());
        }
        if options.highlight.contains(&id) {
            attrs.push("style=filled".into());
            attrs.push("fillcolor=\"#f4a582\"".into());
        }
        let _ = writeln!(s, "  {id} [{}];", attrs.join(", "));
    }
    for t in model.transitions() {
        let _ = writeln!(s, "  {} -> {} [label=\"{}\"];", t.from, t.to, escape(&t.label));
    }
    s.push_str("}\n");
    s
}

pub fn config_to_string(config: &MonitorConfig) -> String {
    to_json_text(config)
}

/// Pretty JSON with a trailing newline, the shape of every JSON report the
/// command line and the HTTP API emit.
pub fn to_json_text<T: Serialize + ?Sized>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("reports always serialize");
    s.push('\n');
    s
}

pub fn parse_config(text: &str) -> Result<MonitorConfig> {
    let config: MonitorConfig =
        serde_json::from_str(text).map_err(|e| Error::ConfigParse(format!("line {}: {e}", e.line())))?;
    if !(config.eq_epsilon >= 0.0) {
        return Err(Error::ConfigParse("eq_epsilon must be non-negative".into()));
    }
    Ok(config)
}

/// Renames states by a permutation, for isomorphism checks.
pub fn relabel(model: &Efsm, perm: &[usize]) -> Efsm {
    let map: HashMap<StateId, StateId> = (0..perm.len()).map(|i| (StateId(i), StateId(perm[i]))).collect();
    let mut states: Vec<EfsmState> = model
        .states
        .iter()
        .map(|s| EfsmState {
            id: map[&s.id],
            ..s.clone()
        })
        .collect();
    states.sort_by_key(|s| s.id);
    let transitions = model
        .transitions
        .iter()
        .map(|t| Transition {
            from: map[&t.from],
            label: t.label.clone(),
            to: map[&t.to],
        })
        .collect();
    Efsm::from_parts(model.meta.clone(), states, transitions, model.warnings.clone())
        .expect("a permutation keeps the model consistent")
}
