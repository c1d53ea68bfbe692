//! Trace logs: parsing, change attribution and the filtered trace.
//!
//! Everything here works in one forward pass. [`EventReader`] yields
//! validated events, [`AttributionTracker`] assigns each field change to an
//! invocation as frames close, and [`StreamingFilter`] turns closed
//! invocations into [`Step`]s. The batch functions are thin wrappers.

use std::borrow::Cow;
use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ConcreteTrace, EventKind, FieldMap, MonitorConfig, Scalar, TraceEvent, Warning};

/// Function name used for changes that happen between top-level calls.
pub const UNTRACED: &str = "<untraced>";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Line<'a> {
    seq: u64,
    kind: EventKind,
    #[serde(rename = "fn", borrow)]
    function: Cow<'a, str>,
    depth: u32,
    vars: Cow<'a, FieldMap>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    args: Option<Cow<'a, serde_json::Map<String, serde_json::Value>>>,
}

/// Writes one event in the line format, without the trailing newline.
pub fn write_event<W: Write>(out: &mut W, event: &TraceEvent) -> std::io::Result<()> {
    let line = Line {
        seq: event.seq,
        kind: event.kind,
        function: Cow::Borrowed(&event.function),
        depth: event.depth,
        vars: Cow::Borrowed(&event.vars),
        args: (event.kind == EventKind::Enter).then_some(Cow::Borrowed(&event.args)),
    };
    serde_json::to_writer(out, &line).map_err(std::io::Error::other)
}

pub fn write_trace<W: Write>(out: &mut W, trace: &ConcreteTrace) -> std::io::Result<()> {
    for e in &trace.events {
        write_event(out, e)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn trace_to_string(trace: &ConcreteTrace) -> String {
    let mut buf = Vec::new();
    write_trace(&mut buf, trace).expect("writing to a Vec cannot fail");
    String::from_utf8(buf).expect("serde_json emits UTF-8")
}

/// Parses a single line. `line_no` is 1-based and only used for errors.
pub fn parse_event(text: &str, line_no: usize) -> Result<TraceEvent> {
    let line: Line = serde_json::from_str(text).map_err(|e| Error::TraceParse {
        line: line_no,
        message: e.to_string(),
    })?;
    let args = match (line.kind, line.args) {
        (EventKind::Enter, Some(a)) => a.into_owned(),
        (EventKind::Enter, None) => {
            return Err(Error::TraceParse {
                line: line_no,
                message: "enter event without `args`".into(),
            })
        }
        (EventKind::Exit, None) => Default::default(),
        (EventKind::Exit, Some(_)) => {
            return Err(Error::TraceParse {
                line: line_no,
                message: "exit event carries `args`".into(),
            })
        }
    };
    Ok(TraceEvent {
        seq: line.seq,
        kind: line.kind,
        function: line.function.into_owned(),
        depth: line.depth,
        vars: line.vars.into_owned(),
        args,
    })
}

/// Validating iterator over the events of a trace log.
pub struct EventReader<R> {
    input: R,
    buf: String,
    line_no: usize,
    stack: Vec<(String, u32)>,
    last_seq: Option<u64>,
    fields: Option<Vec<String>>,
    done: bool,
}

impl<R: BufRead> EventReader<R> {
    pub fn new(input: R) -> Self {
        EventReader {
            input,
            buf: String::new(),
            line_no: 0,
            stack: Vec::new(),
            last_seq: None,
            fields: None,
            done: false,
        }
    }

    /// Field paths of the first event, once one has been read.
    pub fn monitored_fields(&self) -> Option<&[String]> {
        self.fields.as_deref()
    }

    pub fn last_seq(&self) -> Option<u64> {
        self.last_seq
    }

    fn check(&mut self, e: &TraceEvent) -> Result<()> {
        if let Some(prev) = self.last_seq {
            if e.seq <= prev {
                return Err(Error::TraceParse {
                    line: self.line_no,
                    message: format!("seq {} does not increase past {prev}", e.seq),
                });
            }
        }
        match &self.fields {
            None => self.fields = Some(e.vars.keys().cloned().collect()),
            Some(f) => {
                if f.len() != e.vars.len() || f.iter().any(|k| !e.vars.contains_key(k)) {
                    return Err(Error::TraceParse {
                        line: self.line_no,
                        message: "vars keys differ from the first event's".into(),
                    });
                }
            }
        }
        let nesting = |message: String| Error::TraceNesting { seq: e.seq, message };
        match e.kind {
            EventKind::Enter => {
                if e.depth as usize != self.stack.len() {
                    return Err(nesting(format!(
                        "enter of `{}` at depth {} but {} call(s) are open",
                        e.function,
                        e.depth,
                        self.stack.len()
                    )));
                }
                self.stack.push((e.function.clone(), e.depth));
            }
            EventKind::Exit => match self.stack.last() {
                Some((f, d)) if *f == e.function && *d == e.depth => {
                    self.stack.pop();
                }
                Some((f, d)) => {
                    return Err(nesting(format!(
                        "exit of `{}`@{} while `{f}`@{d} is open",
                        e.function, e.depth
                    )))
                }
                None => return Err(nesting(format!("exit of `{}` without a matching enter", e.function))),
            },
        }
        self.last_seq = Some(e.seq);
        Ok(())
    }
}

impl<R: BufRead> Iterator for EventReader<R> {
    type Item = Result<TraceEvent>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        loop {
            self.buf.clear();
            match self.input.read_line(&mut self.buf) {
                Err(e) => {
                    self.done = true;
                    return Some(Err(e.into()));
                }
                Ok(0) => {
                    self.done = true;
                    return self.stack.last().map(|(f, _)| {
                        Err(Error::TraceNesting {
                            seq: self.last_seq.unwrap_or(0),
                            message: format!("trace ends with `{f}` still open"),
                        })
                    });
                }
                Ok(_) => {}
            }
            self.line_no += 1;
            let text = self.buf.trim_end_matches(['\n', '\r']);
            if text.is_empty() {
                continue;
            }
            let res = parse_event(text, self.line_no).and_then(|e| self.check(&e).map(|_| e));
            if res.is_err() {
                self.done = true;
            }
            return Some(res);
        }
    }
}

/// Reads a whole trace into memory.
pub fn parse_trace<R: BufRead>(id: &str, input: R) -> Result<ConcreteTrace> {
    let mut reader = EventReader::new(input);
    let events = reader.by_ref().collect::<Result<Vec<_>>>()?;
    Ok(ConcreteTrace {
        id: id.to_string(),
        events,
        monitored_fields: reader.monitored_fields().map(<[_]>::to_vec).unwrap_or_default(),
    })
}

/// Id of the trace stored at `path`: the file name without its `.trc` or
/// `.ftrc` extension.
pub fn trace_id_for(path: &Path) -> String {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    for ext in [".ftrc", ".trc"] {
        if let Some(stem) = name.strip_suffix(ext) {
            return stem.to_string();
        }
    }
    name
}

pub fn load_trace(path: &Path) -> Result<ConcreteTrace> {
    let file = std::fs::File::open(path)?;
    parse_trace(&trace_id_for(path), std::io::BufReader::new(file))
}

/// One observed change of one field, credited to a single invocation.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ChangeRecord {
    pub field: String,
    /// Seq of the event right after the change boundary.
    pub seq: u64,
    /// `None` when the change happened outside every traced call.
    pub function: Option<String>,
    pub depth: Option<u32>,
    pub enter_seq: Option<u64>,
    /// Whether the credited invocation's enter and exit snapshots differ on
    /// the field. False only for transient changes no bracketing call kept.
    pub endpoints_differ: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ChangeAttribution {
    pub records: Vec<ChangeRecord>,
}

#[derive(Debug)]
struct CallIdent {
    function: String,
    depth: u32,
    enter_seq: u64,
}

#[derive(Debug)]
struct Frame {
    ident: Arc<CallIdent>,
    enter_vals: Vec<Scalar>,
    pending: Vec<Pending>,
}

#[derive(Debug, Clone)]
struct Pending {
    field: usize,
    seq: u64,
    innermost: Arc<CallIdent>,
}

/// A call that just returned, with the fields it is credited with.
#[derive(Debug, Clone)]
pub struct ClosedCall<'a> {
    pub function: &'a str,
    pub depth: u32,
    pub enter_seq: u64,
    pub exit_seq: u64,
    pub enter_vals: &'a [Scalar],
    /// Indices into the tracked field list.
    pub credited: Vec<usize>,
}

/// Incremental change attribution over a fixed list of fields.
///
/// A change observed between two consecutive events is parked on the
/// innermost open frame. When that frame closes, it keeps the change if its
/// own endpoints differ on the field, otherwise hands it to its parent. A
/// change that no bracketing frame keeps falls back to the innermost one.
pub struct AttributionTracker {
    fields: Vec<String>,
    eps: f64,
    prev: Option<Vec<Scalar>>,
    stack: Vec<Frame>,
}

impl AttributionTracker {
    pub fn new(fields: Vec<String>, eps: f64) -> Self {
        AttributionTracker {
            fields,
            eps,
            prev: None,
            stack: Vec::new(),
        }
    }

    pub fn fields(&self) -> &[String] {
        &self.fields
    }

    fn values(&self, vars: &FieldMap) -> Result<Vec<Scalar>> {
        self.fields
            .iter()
            .map(|f| vars.get(f).copied().ok_or_else(|| Error::FilterFields(format!("trace has no field `{f}`"))))
            .collect()
    }

    fn record(&self, field: usize, seq: u64, who: Option<&CallIdent>, endpoints_differ: bool) -> ChangeRecord {
        ChangeRecord {
            field: self.fields[field].clone(),
            seq,
            function: who.map(|w| w.function.clone()),
            depth: who.map(|w| w.depth),
            enter_seq: who.map(|w| w.enter_seq),
            endpoints_differ,
        }
    }

    /// Feeds the next event. Records that became final are appended to
    /// `out`; for exit events the closed call is passed to `on_close`
    /// together with the after-exit values.
    pub fn push<F>(&mut self, event: &TraceEvent, out: &mut Vec<ChangeRecord>, on_close: F) -> Result<()>
    where
        F: FnOnce(ClosedCall<'_>, &[Scalar]),
    {
        let cur = self.values(&event.vars)?;
        if let Some(prev) = &self.prev {
            for (i, (a, b)) in prev.iter().zip(&cur).enumerate() {
                if a.compare(*b, self.eps).is_eq() {
                    continue;
                }
                match self.stack.last_mut() {
                    None => out.push(self.record(i, event.seq, None, false)),
                    Some(top) => {
                        let innermost = Arc::clone(&top.ident);
                        top.pending.push(Pending {
                            field: i,
                            seq: event.seq,
                            innermost,
                        });
                    }
                }
            }
        }
        match event.kind {
            EventKind::Enter => {
                self.stack.push(Frame {
                    ident: Arc::new(CallIdent {
                        function: event.function.clone(),
                        depth: event.depth,
                        enter_seq: event.seq,
                    }),
                    enter_vals: cur.clone(),
                    pending: Vec::new(),
                });
            }
            EventKind::Exit => {
                let frame = self.stack.pop().ok_or_else(|| Error::TraceNesting {
                    seq: event.seq,
                    message: "exit without enter".into(),
                })?;
                let mut credited = Vec::new();
                let mut carried = Vec::new();
                for p in frame.pending {
                    if !frame.enter_vals[p.field].compare(cur[p.field], self.eps).is_eq() {
                        out.push(self.record(p.field, p.seq, Some(&frame.ident), true));
                        if !credited.contains(&p.field) {
                            credited.push(p.field);
                        }
                    } else {
                        carried.push(p);
                    }
                }
                match self.stack.last_mut() {
                    Some(parent) => parent.pending.extend(carried),
                    None => {
                        for p in carried {
                            out.push(self.record(p.field, p.seq, Some(&p.innermost), false));
                        }
                    }
                }
                credited.sort_unstable();
                on_close(
                    ClosedCall {
                        function: &frame.ident.function,
                        depth: frame.ident.depth,
                        enter_seq: frame.ident.enter_seq,
                        exit_seq: event.seq,
                        enter_vals: &frame.enter_vals,
                        credited,
                    },
                    &cur,
                );
            }
        }
        self.prev = Some(cur);
        Ok(())
    }
}

/// Credits every change of `fields` to the deepest invocation that brackets
/// it and whose endpoints differ on that field.
pub fn attribute_changes(trace: &ConcreteTrace, fields: &[String], eps: f64) -> Result<ChangeAttribution> {
    if let Some(missing) = fields.iter().find(|f| !trace.monitored_fields.contains(f)) {
        return Err(Error::FilterFields(format!("trace has no field `{missing}`")));
    }
    let mut tracker = AttributionTracker::new(fields.to_vec(), eps);
    let mut records = Vec::new();
    for e in &trace.events {
        tracker.push(e, &mut records, |_, _| {})?;
    }
    records.sort();
    Ok(ChangeAttribution { records })
}

/// A selected call that changed at least one selected field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    #[serde(rename = "fn")]
    pub function: String,
    pub start_seq: u64,
    pub end_seq: u64,
    /// After-exit values of the selected fields.
    pub vars: FieldMap,
    /// Selected fields whose enter and exit values differ.
    pub changed: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialSnapshot {
    pub seq: u64,
    pub vars: FieldMap,
}

/// The minimized view of one raw trace under a config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilteredTrace {
    pub id: String,
    /// Id of the raw trace this was derived from.
    pub origin: String,
    pub fields: Vec<String>,
    /// Before-enter snapshot of the first raw event.
    pub initial: Option<InitialSnapshot>,
    /// Seq of the last raw event.
    pub end_seq: Option<u64>,
    pub steps: Vec<Step>,
    /// Changes of selected fields credited to calls outside the selection.
    #[serde(default)]
    pub unexplained: Vec<Warning>,
}

impl FilteredTrace {
    pub fn labels(&self) -> Vec<String> {
        self.steps.iter().map(|s| s.function.clone()).collect()
    }
}

/// Single-pass filter: feed events, collect steps.
pub struct StreamingFilter {
    trace_id: String,
    config_fields: Vec<String>,
    functions: Vec<String>,
    tracker: Option<AttributionTracker>,
    eps: f64,
    initial: Option<InitialSnapshot>,
    end_seq: Option<u64>,
    records: Vec<ChangeRecord>,
    unexplained: BTreeMap<(String, String), (u64, u64)>,
}

impl StreamingFilter {
    pub fn new(trace_id: &str, config: &MonitorConfig) -> Self {
        StreamingFilter {
            trace_id: trace_id.to_string(),
            config_fields: config.fields.clone(),
            functions: config.functions.clone(),
            tracker: None,
            eps: config.eq_epsilon,
            initial: None,
            end_seq: None,
            records: Vec::new(),
            unexplained: BTreeMap::new(),
        }
    }

    pub fn initial(&self) -> Option<&InitialSnapshot> {
        self.initial.as_ref()
    }

    fn selected_vars(&self, vars: &FieldMap) -> FieldMap {
        self.config_fields
            .iter()
            .filter_map(|f| vars.get(f).map(|v| (f.clone(), *v)))
            .collect()
    }

    /// Feeds one event; returns a step when a selected call closes having
    /// changed a selected field.
    pub fn push(&mut self, event: &TraceEvent) -> Result<Option<Step>> {
        if self.tracker.is_none() {
            if let Some(missing) = self.config_fields.iter().find(|f| !event.vars.contains_key(*f)) {
                return Err(Error::FilterFields(format!("trace has no field `{missing}`")));
            }
            self.tracker = Some(AttributionTracker::new(self.config_fields.clone(), self.eps));
            self.initial = Some(InitialSnapshot {
                seq: event.seq,
                vars: self.selected_vars(&event.vars),
            });
        }
        let tracker = self.tracker.as_mut().expect("initialised above");
        let mut step = None;
        let functions = &self.functions;
        let fields = &self.config_fields;
        let eps = self.eps;
        tracker.push(event, &mut self.records, |call, exit_vals| {
            if call.credited.is_empty() || !functions.iter().any(|f| f == call.function) {
                return;
            }
            let changed = call
                .enter_vals
                .iter()
                .zip(exit_vals)
                .zip(fields)
                .filter(|((a, b), _)| !a.compare(**b, eps).is_eq())
                .map(|(_, f)| f.clone())
                .collect();
            step = Some(Step {
                function: call.function.to_string(),
                start_seq: call.enter_seq,
                end_seq: call.exit_seq,
                vars: fields.iter().cloned().zip(exit_vals.iter().copied()).collect(),
                changed,
            });
        })?;
        for r in self.records.drain(..) {
            let function = r.function.unwrap_or_else(|| UNTRACED.to_string());
            if self.functions.contains(&function) {
                continue;
            }
            let entry = self.unexplained.entry((function, r.field)).or_insert((0, r.seq));
            entry.0 += 1;
            entry.1 = entry.1.min(r.seq);
        }
        self.end_seq = Some(event.seq);
        Ok(step)
    }

    /// Warnings gathered so far, ordered by function then field.
    pub fn unexplained(&self) -> Vec<Warning> {
        self.unexplained
            .iter()
            .map(|((function, field), (count, first_seq))| Warning {
                trace: self.trace_id.clone(),
                function: function.clone(),
                field: field.clone(),
                count: *count,
                first_seq: *first_seq,
            })
            .collect()
    }

    pub fn end_seq(&self) -> Option<u64> {
        self.end_seq
    }

    pub fn finish(self, steps: Vec<Step>) -> FilteredTrace {
        let unexplained = self.unexplained();
        FilteredTrace {
            id: self.trace_id.clone(),
            origin: self.trace_id,
            fields: self.config_fields,
            initial: self.initial,
            end_seq: self.end_seq,
            steps,
            unexplained,
        }
    }
}

/// Keeps only the selected calls that change a selected field. The raw
/// trace is untouched and stays available for zoom.
pub fn filter_trace(trace: &ConcreteTrace, config: &MonitorConfig) -> Result<FilteredTrace> {
    if let Some(missing) = config.fields.iter().find(|f| !trace.monitored_fields.contains(f)) {
        return Err(Error::FilterFields(format!("trace `{}` has no field `{missing}`", trace.id)));
    }
    let mut filter = StreamingFilter::new(&trace.id, config);
    let mut steps = Vec::new();
    for e in &trace.events {
        steps.extend(filter.push(e)?);
    }
    Ok(filter.finish(steps))
}

pub fn filtered_to_string(ft: &FilteredTrace) -> String {
    let mut s = serde_json::to_string(ft).expect("filtered traces always serialize");
    s.push('\n');
    s
}

pub fn parse_filtered(text: &str) -> Result<FilteredTrace> {
    serde_json::from_str(text).map_err(|e| Error::TraceParse {
        line: e.line(),
        message: e.to_string(),
    })
}
