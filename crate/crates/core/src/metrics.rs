//! Model statistics, the EXAM score and valuation-keyed model diff.

use std::collections::{BTreeSet, VecDeque};
use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{Efsm, StateGraph, StateId, Valuation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ModelStats {
    pub states: usize,
    pub transitions: usize,
    pub initial: usize,
    pub warnings: usize,
}

pub fn model_stats<M: StateGraph + ?Sized>(model: &M) -> ModelStats {
    ModelStats {
        states: model.state_count(),
        transitions: model.transitions().len(),
        initial: model.initial_states().len(),
        warnings: model.warning_count(),
    }
}

/// Breadth-first examination order: initial states by (valuation, id), then
/// successors by (label, valuation, id). Valuations come before ids so the
/// order survives renumbering of valuation-keyed models.
pub fn examination_order<M: StateGraph + ?Sized>(model: &M) -> Vec<StateId> {
    let key = |s: StateId| (model.valuation(s).cloned(), s);
    let mut starts = model.initial_states();
    starts.sort_by_key(|s| key(*s));
    let mut out_edges: Vec<Vec<(&str, Option<Valuation>, StateId)>> = vec![Vec::new(); model.state_count()];
    for t in model.transitions() {
        out_edges[t.from.0].push((t.label.as_str(), model.valuation(t.to).cloned(), t.to));
    }
    for edges in &mut out_edges {
        edges.sort();
    }
    let mut seen = vec![false; model.state_count()];
    let mut order = Vec::new();
    let mut queue = VecDeque::new();
    for s in starts {
        if !seen[s.0] {
            seen[s.0] = true;
            queue.push_back(s);
        }
    }
    while let Some(s) = queue.pop_front() {
        order.push(s);
        for (_, _, t) in &out_edges[s.0] {
            if !seen[t.0] {
                seen[t.0] = true;
                queue.push_back(*t);
            }
        }
    }
    order
}

/// Number of states examined, in [`examination_order`], up to and including
/// the faulty one.
pub fn exam_score<M: StateGraph + ?Sized>(model: &M, faulty: StateId) -> Result<usize> {
    if faulty.0 >= model.state_count() {
        return Err(Error::UnknownState(faulty.to_string()));
    }
    examination_order(model)
        .iter()
        .position(|s| *s == faulty)
        .map(|i| i + 1)
        .ok_or_else(|| Error::ExamUnreachable(faulty.to_string()))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ExamReport {
    pub state: StateId,
    pub score: usize,
    /// States examined before and including `state`.
    pub examined: Vec<StateId>,
}

pub fn exam_report<M: StateGraph + ?Sized>(model: &M, faulty: StateId) -> Result<ExamReport> {
    let score = exam_score(model, faulty)?;
    let mut examined = examination_order(model);
    examined.truncate(score);
    Ok(ExamReport { state: faulty, score, examined })
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct DiffState {
    pub valuation: Vec<String>,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct DiffTransition {
    pub from: Vec<String>,
    pub label: String,
    pub to: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ModelDiff {
    pub states_only_in_a: Vec<DiffState>,
    pub states_only_in_b: Vec<DiffState>,
    pub shared_states: usize,
    pub transitions_only_in_a: Vec<DiffTransition>,
    pub transitions_only_in_b: Vec<DiffTransition>,
    pub shared_transitions: usize,
}

impl ModelDiff {
    pub fn is_empty(&self) -> bool {
        self.states_only_in_a.is_empty()
            && self.states_only_in_b.is_empty()
            && self.transitions_only_in_a.is_empty()
            && self.transitions_only_in_b.is_empty()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let state = |d: &DiffState| format!("({})  {}", d.valuation.join(", "), d.label);
        let edge = |d: &DiffTransition| format!("({}) -{}-> ({})", d.from.join(", "), d.label, d.to.join(", "));
        for (title, sign, items) in [
            ("states only in a", '-', self.states_only_in_a.iter().map(state).collect::<Vec<_>>()),
            ("states only in b", '+', self.states_only_in_b.iter().map(state).collect()),
            ("transitions only in a", '-', self.transitions_only_in_a.iter().map(edge).collect()),
            ("transitions only in b", '+', self.transitions_only_in_b.iter().map(edge).collect()),
        ] {
            let _ = writeln!(s, "{title}: {}", items.len());
            for i in items {
                let _ = writeln!(s, "  {sign} {i}");
            }
        }
        let _ = writeln!(
            s,
            "shared: {} states, {} transitions",
            self.shared_states, self.shared_transitions
        );
        s
    }

    pub fn to_json(&self) -> String {
        crate::io::to_json_text(self)
    }
}

/// Set differences of states and transitions, both keyed by valuation.
pub fn diff_models(a: &Efsm, b: &Efsm) -> Result<ModelDiff> {
    if a.meta.constraints != b.meta.constraints {
        return Err(Error::DiffConfigMismatch);
    }
    let states = |m: &Efsm| -> BTreeSet<DiffState> {
        m.states
            .iter()
            .map(|s| DiffState {
                valuation: s.valuation.tokens(),
                label: s.label.clone(),
            })
            .collect()
    };
    let edges = |m: &Efsm| -> BTreeSet<DiffTransition> {
        m.transitions
            .iter()
            .map(|t| DiffTransition {
                from: m.states[t.from.0].valuation.tokens(),
                label: t.label.clone(),
                to: m.states[t.to.0].valuation.tokens(),
            })
            .collect()
    };
    let (sa, sb) = (states(a), states(b));
    let (ea, eb) = (edges(a), edges(b));
    Ok(ModelDiff {
        states_only_in_a: sa.difference(&sb).cloned().collect(),
        states_only_in_b: sb.difference(&sa).cloned().collect(),
        shared_states: sa.intersection(&sb).count(),
        transitions_only_in_a: ea.difference(&eb).cloned().collect(),
        transitions_only_in_b: eb.difference(&ea).cloned().collect(),
        shared_transitions: ea.intersection(&eb).count(),
    })
}
