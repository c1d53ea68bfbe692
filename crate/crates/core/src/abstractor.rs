//! Folds filtered traces into a valuation-keyed EFSM and expands abstract
//! states back into the raw calls they cover.

use std::collections::BTreeSet;
use std::io::BufRead;

use serde::Serialize;

use crate::constraint::{admits, describe, evaluate};
use crate::error::{Error, Result};
use crate::model::{
    ConcreteTrace, Efsm, EventKind, FieldMap, ModelKind, ModelMeta, MonitorConfig, Segment, StateId, Transition,
    Warning,
};
use crate::trace::{EventReader, FilteredTrace, InitialSnapshot, Step, StreamingFilter};

/// Metadata of a fresh model built under `config`.
pub fn model_meta(config: &MonitorConfig) -> ModelMeta {
    ModelMeta {
        kind: ModelKind::Efsm,
        config: config.name.clone(),
        constraints: config.constraint_texts(),
        traces: Vec::new(),
        ..Default::default()
    }
}

fn check_config(model: &Efsm, config: &MonitorConfig) -> Result<()> {
    let fresh = model.states.is_empty() && model.meta.constraints.is_empty();
    let texts = config.constraint_texts();
    if !fresh && model.meta.constraints != texts {
        return Err(Error::AbstractConfigMismatch(format!(
            "model has [{}], config `{}` has [{}]",
            model.meta.constraints.join(", "),
            config.name,
            texts.join(", ")
        )));
    }
    Ok(())
}

/// Walk of one trace through a model under construction.
///
/// Feed the initial snapshot to [`TraceWalk::begin`], then every step in
/// order, then call [`TraceWalk::end`]. Memory is independent of trace
/// length.
pub struct TraceWalk<'c> {
    config: &'c MonitorConfig,
    trace: String,
    current: Option<StateId>,
    seg_start: u64,
}

impl<'c> TraceWalk<'c> {
    pub fn begin(
        model: &mut Efsm,
        trace: &str,
        initial: Option<&InitialSnapshot>,
        config: &'c MonitorConfig,
    ) -> Result<Self> {
        check_config(model, config)?;
        if model.states.is_empty() && model.meta.constraints.is_empty() {
            model.meta = model_meta(config);
        }
        if let Err(i) = model.meta.traces.binary_search_by(|t| t.as_str().cmp(trace)) {
            model.meta.traces.insert(i, trace.to_string());
        }
        let mut walk = TraceWalk {
            config,
            trace: trace.to_string(),
            current: None,
            seg_start: 0,
        };
        if let Some(init) = initial {
            walk.enter(model, &init.vars, init.seq)?;
        }
        Ok(walk)
    }

    fn admitted(&self, vars: &FieldMap) -> Result<bool> {
        admits(vars, &self.config.filters, self.config.eq_epsilon)
    }

    /// Starts a new entry point at `vars` if admitted; used for the initial
    /// snapshot and for re-entering the admitted region.
    fn enter(&mut self, model: &mut Efsm, vars: &FieldMap, seq: u64) -> Result<()> {
        if !self.admitted(vars)? {
            return Ok(());
        }
        let id = self.intern(model, vars)?;
        model.state_mut(id).initial = true;
        self.current = Some(id);
        self.seg_start = seq;
        Ok(())
    }

    fn intern(&self, model: &mut Efsm, vars: &FieldMap) -> Result<StateId> {
        let v = evaluate(vars, self.config)?;
        let config = self.config;
        Ok(model.intern(v.clone(), || describe(&v, config)))
    }

    fn close(&mut self, model: &mut Efsm, state: StateId, end: u64) {
        let seg = Segment {
            trace: self.trace.clone(),
            start: self.seg_start,
            end,
        };
        let segs = &mut model.state_mut(state).segments;
        if let Err(i) = segs.binary_search(&seg) {
            segs.insert(i, seg);
        }
    }

    pub fn step(&mut self, model: &mut Efsm, step: &Step) -> Result<()> {
        if !self.admitted(&step.vars)? {
            if let Some(cur) = self.current.take() {
                self.close(model, cur, step.end_seq);
            }
            return Ok(());
        }
        let Some(cur) = self.current else {
            return self.enter(model, &step.vars, step.end_seq);
        };
        let next = self.intern(model, &step.vars)?;
        model.transitions.insert(Transition {
            from: cur,
            label: step.function.clone(),
            to: next,
        });
        if next != cur {
            self.close(model, cur, step.end_seq);
            self.current = Some(next);
            self.seg_start = step.end_seq;
        }
        Ok(())
    }

    /// Closes the last segment (half-open, so it ends one past the last
    /// raw seq) and records the trace's unexplained changes.
    pub fn end(mut self, model: &mut Efsm, end_seq: Option<u64>, warnings: &[Warning]) {
        if let (Some(cur), Some(end)) = (self.current.take(), end_seq) {
            self.close(model, cur, end + 1);
        }
        for w in warnings {
            match model
                .warnings
                .iter_mut()
                .find(|x| x.trace == w.trace && x.function == w.function && x.field == w.field)
            {
                Some(existing) => *existing = w.clone(),
                None => model.warnings.push(w.clone()),
            }
        }
        model.warnings.sort();
    }
}

/// Appends one filtered trace. The input model is left untouched.
pub fn abstract_append(model: &Efsm, ft: &FilteredTrace, config: &MonitorConfig) -> Result<Efsm> {
    let mut out = model.clone();
    abstract_into(&mut out, ft, config)?;
    Ok(out)
}

/// Appends one filtered trace to `model` in place.
pub fn abstract_into(model: &mut Efsm, ft: &FilteredTrace, config: &MonitorConfig) -> Result<()> {
    let mut walk = TraceWalk::begin(model, &ft.origin, ft.initial.as_ref(), config)?;
    for s in &ft.steps {
        walk.step(model, s)?;
    }
    walk.end(model, ft.end_seq, &ft.unexplained);
    Ok(())
}

/// Folds [`abstract_append`] over the traces, starting from an empty model.
pub fn build_model(traces: &[FilteredTrace], config: &MonitorConfig) -> Result<Efsm> {
    let mut model = Efsm::new(model_meta(config));
    for ft in traces {
        abstract_into(&mut model, ft, config)?;
    }
    Ok(model)
}

/// Filters and abstracts a raw trace in a single forward pass without
/// materialising it.
pub fn abstract_stream<R: BufRead>(
    model: &mut Efsm,
    trace_id: &str,
    events: EventReader<R>,
    config: &MonitorConfig,
) -> Result<()> {
    check_config(model, config)?;
    let mut filter = StreamingFilter::new(trace_id, config);
    let mut walk = None;
    for event in events {
        let event = event?;
        let step = filter.push(&event)?;
        if walk.is_none() {
            walk = Some(TraceWalk::begin(model, trace_id, filter.initial(), config)?);
        }
        if let (Some(w), Some(s)) = (walk.as_mut(), step) {
            w.step(model, &s)?;
        }
    }
    let walk = match walk {
        Some(w) => w,
        None => TraceWalk::begin(model, trace_id, None, config)?,
    };
    walk.end(model, filter.end_seq(), &filter.unexplained());
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ZoomNode {
    pub seq: u64,
    pub kind: EventKind,
    #[serde(rename = "fn")]
    pub function: String,
    pub vars: FieldMap,
}

/// Edge between consecutive nodes of a path, labelled with the function
/// whose boundary separates them.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ZoomEdge {
    pub from: usize,
    pub to: usize,
    pub label: String,
}

/// The raw events of one residency segment, as a path.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ZoomPath {
    pub trace: String,
    pub start: u64,
    pub end: u64,
    pub nodes: Vec<ZoomNode>,
    pub edges: Vec<ZoomEdge>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ZoomView {
    pub state: StateId,
    pub label: String,
    pub paths: Vec<ZoomPath>,
}

impl ZoomView {
    pub fn node_count(&self) -> usize {
        self.paths.iter().map(|p| p.nodes.len()).sum()
    }

    pub fn edge_count(&self) -> usize {
        self.paths.iter().map(|p| p.edges.len()).sum()
    }

    /// The distinct function names seen inside the state.
    pub fn functions(&self) -> BTreeSet<&str> {
        self.paths
            .iter()
            .flat_map(|p| p.nodes.iter().map(|n| n.function.as_str()))
            .collect()
    }
}

/// Expands a state into the raw events of its residency segments, one
/// disjoint path per segment in segment order.
pub fn zoom(model: &Efsm, state: StateId, raw: &[ConcreteTrace]) -> Result<ZoomView> {
    let st = model
        .state(state)
        .ok_or_else(|| Error::UnknownState(state.to_string()))?;
    let mut paths = Vec::with_capacity(st.segments.len());
    for seg in &st.segments {
        let trace = raw
            .iter()
            .find(|t| t.id == seg.trace)
            .ok_or_else(|| Error::ZoomMissingTrace(seg.trace.clone()))?;
        let lo = trace.position(seg.start).unwrap_or_else(|i| i);
        let hi = trace.position(seg.end).unwrap_or_else(|i| i);
        let nodes: Vec<ZoomNode> = trace.events[lo..hi.max(lo)]
            .iter()
            .map(|e| ZoomNode {
                seq: e.seq,
                kind: e.kind,
                function: e.function.clone(),
                vars: e.vars.clone(),
            })
            .collect();
        let edges = (1..nodes.len())
            .map(|i| ZoomEdge {
                from: i - 1,
                to: i,
                label: nodes[i].function.clone(),
            })
            .collect();
        paths.push(ZoomPath {
            trace: seg.trace.clone(),
            start: seg.start,
            end: seg.end,
            nodes,
            edges,
        });
    }
    Ok(ZoomView {
        state,
        label: st.label.clone(),
        paths,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraint::parse_constraint;
    use crate::demo::{run_scenario, FlightScenario, ScenarioName};
    use crate::model::{Component, CmpOutcome, RangeFilter, StateGraph};
    use crate::trace::filter_trace;

    fn sign_config() -> MonitorConfig {
        MonitorConfig {
            name: "takeoff".into(),
            fields: vec!["altitude".into(), "speed".into()],
            functions: vec!["accelerate".into(), "takeoff".into()],
            constraints: vec![parse_constraint("cmp(altitude, 0)").unwrap()],
            filters: vec![],
            eq_epsilon: 0.0,
        }
    }

    fn demo(name: ScenarioName) -> ConcreteTrace {
        run_scenario(&FlightScenario::new(name)).unwrap()
    }

    #[test]
    fn altitude_sign_gives_two_states_three_transitions() {
        let cfg = sign_config();
        let ft = filter_trace(&demo(ScenarioName::Takeoff), &cfg).unwrap();
        let m = build_model(&[ft], &cfg).unwrap();
        assert_eq!(m.states.len(), 2);
        assert_eq!(m.states[0].valuation.0, vec![Component::Cmp(CmpOutcome::Lt)]);
        assert_eq!(m.states[1].valuation.0, vec![Component::Cmp(CmpOutcome::Gt)]);
        assert_eq!(m.states[0].label, "altitude<0");
        let t: Vec<_> = m.transitions.iter().map(|t| (t.from.0, t.label.as_str(), t.to.0)).collect();
        assert_eq!(t, vec![(0, "accelerate", 0), (0, "takeoff", 0), (0, "takeoff", 1)]);
        assert_eq!(m.initial_states(), vec![StateId(0)]);
    }

    #[test]
    fn empty_filtered_trace_gives_one_initial_state() {
        let cfg = sign_config();
        let mut ft = filter_trace(&demo(ScenarioName::Takeoff), &cfg).unwrap();
        ft.steps.clear();
        let m = abstract_append(&Efsm::default(), &ft, &cfg).unwrap();
        assert_eq!(m.states.len(), 1);
        assert!(m.states[0].initial);
        assert!(m.transitions.is_empty());
    }

    #[test]
    fn appending_twice_is_idempotent() {
        let cfg = sign_config();
        let ft = filter_trace(&demo(ScenarioName::Takeoff), &cfg).unwrap();
        let once = abstract_append(&Efsm::default(), &ft, &cfg).unwrap();
        let twice = abstract_append(&once, &ft, &cfg).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn zero_traces_give_an_empty_model() {
        let m = build_model(&[], &sign_config()).unwrap();
        assert!(m.states.is_empty() && m.transitions.is_empty());
    }

    #[test]
    fn mismatched_constraints_are_rejected() {
        let cfg = sign_config();
        let ft = filter_trace(&demo(ScenarioName::Takeoff), &cfg).unwrap();
        let m = build_model(std::slice::from_ref(&ft), &cfg).unwrap();
        let mut other = cfg.clone();
        other.constraints = vec![parse_constraint("cmp(altitude, 10)").unwrap()];
        assert_eq!(abstract_append(&m, &ft, &other).unwrap_err().code(), "ABSTRACT_CONFIG_MISMATCH");
    }

    #[test]
    fn zoom_on_onground_shows_the_ineffective_takeoffs() {
        let cfg = sign_config();
        let raw = demo(ScenarioName::Takeoff);
        let ft = filter_trace(&raw, &cfg).unwrap();
        let m = build_model(&[ft], &cfg).unwrap();
        let z = zoom(&m, StateId(0), std::slice::from_ref(&raw)).unwrap();
        assert!(z.functions().contains("readSensors"));
        let ineffective = z.paths[0]
            .nodes
            .windows(2)
            .filter(|w| w[1].function == "takeoff" && w[1].kind == EventKind::Exit && w[0].vars == w[1].vars)
            .count();
        assert!(ineffective >= 4);
        assert_eq!(zoom(&m, StateId(0), &[]).unwrap_err().code(), "ZOOM_MISSING_TRACE");
        assert_eq!(zoom(&m, StateId(9), &[raw]).unwrap_err().code(), "UNKNOWN_STATE");
    }

    #[test]
    fn zoom_segments_partition_the_trace() {
        let cfg = sign_config();
        let raw = demo(ScenarioName::FullFlight);
        let m = build_model(&[filter_trace(&raw, &cfg).unwrap()], &cfg).unwrap();
        let mut seqs: Vec<(u64, u64)> = Vec::new();
        for s in &m.states {
            for p in zoom(&m, s.id, std::slice::from_ref(&raw)).unwrap().paths {
                seqs.extend(p.nodes.iter().map(|n| (p.start, n.seq)));
            }
        }
        seqs.sort();
        let got: Vec<u64> = seqs.into_iter().map(|(_, s)| s).collect();
        let want: Vec<u64> = raw.events.iter().map(|e| e.seq).collect();
        assert_eq!(got, want);
    }

    #[test]
    fn filtered_gap_creates_a_second_entry_point() {
        let mut cfg = sign_config();
        cfg.constraints = vec![parse_constraint("value_change(altitude)").unwrap()];
        cfg.filters = vec![RangeFilter { x: "altitude".into(), lo: 0.0, hi: 30.0 }];
        cfg.functions.push("takeoff".into());
        let raw = demo(ScenarioName::TakeoffWithGear);
        let m = build_model(&[filter_trace(&raw, &cfg).unwrap()], &cfg).unwrap();
        // altitude −1 is filtered out; the walk starts at the liftoff value
        assert_eq!(m.states.len(), 1);
        assert!(m.states[0].initial);
        assert!(m.transitions.iter().all(|t| t.from == t.to));
    }

    #[test]
    fn streaming_matches_batch() {
        let cfg = sign_config();
        let raw = demo(ScenarioName::FullFlight);
        let batch = build_model(&[filter_trace(&raw, &cfg).unwrap()], &cfg).unwrap();
        let text = crate::trace::trace_to_string(&raw);
        let mut streamed = Efsm::new(model_meta(&cfg));
        abstract_stream(&mut streamed, &raw.id, EventReader::new(text.as_bytes()), &cfg).unwrap();
        assert_eq!(batch, streamed);
    }
}
