//! Shared domain types: symbols, monitor configs, traces, valuations and the
//! two machine shapes (valuation-keyed [`Efsm`] and plain [`Fsm`]).

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::hash::{Hash, Hasher};
use std::str::FromStr;

use indexmap::IndexMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::constraint;
use crate::error::{Error, Result};

/// A monitored value. Booleans and enums are stored as integers.
#[derive(Debug, Clone, Copy)]
pub enum Scalar {
    Int(i64),
    Float(f64),
}

impl Scalar {
    pub fn as_f64(self) -> f64 {
        match self {
            Scalar::Int(v) => v as f64,
            Scalar::Float(v) => v,
        }
    }

    pub fn is_float(self) -> bool {
        matches!(self, Scalar::Float(_))
    }

    /// Numeric comparison with an absolute tolerance that only applies when
    /// at least one side is a float.
    pub fn compare(self, other: Scalar, eps: f64) -> Ordering {
        match (self, other) {
            (Scalar::Int(a), Scalar::Int(b)) => a.cmp(&b),
            _ => {
                let (a, b) = (self.as_f64(), other.as_f64());
                if (a - b).abs() <= eps {
                    Ordering::Equal
                } else {
                    a.total_cmp(&b)
                }
            }
        }
    }

    fn norm_bits(v: f64) -> u64 {
        if v == 0.0 {
            0
        } else {
            v.to_bits()
        }
    }
}

impl PartialEq for Scalar {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Scalar::Int(a), Scalar::Int(b)) => a == b,
            (Scalar::Float(a), Scalar::Float(b)) => Self::norm_bits(*a) == Self::norm_bits(*b),
            _ => false,
        }
    }
}

impl Eq for Scalar {}

impl Hash for Scalar {
    fn hash<H: Hasher>(&self, state: &mut H) {
        match self {
            Scalar::Int(v) => {
                0u8.hash(state);
                v.hash(state);
            }
            Scalar::Float(v) => {
                1u8.hash(state);
                Self::norm_bits(*v).hash(state);
            }
        }
    }
}

impl Ord for Scalar {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (Scalar::Int(a), Scalar::Int(b)) => a.cmp(b),
            _ => self
                .as_f64()
                .total_cmp(&other.as_f64())
                .then_with(|| self.is_float().cmp(&other.is_float())),
        }
    }
}

impl PartialOrd for Scalar {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Scalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scalar::Int(v) => write!(f, "{v}"),
            // Debug keeps the trailing `.0`, so the value re-parses as a float.
            Scalar::Float(v) => write!(f, "{v:?}"),
        }
    }
}

impl FromStr for Scalar {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let s = s.trim();
        if let Ok(v) = s.parse::<i64>() {
            return Ok(Scalar::Int(v));
        }
        match s.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(Scalar::Float(v)),
            _ => Err(format!("`{s}` is not a finite number")),
        }
    }
}

impl Serialize for Scalar {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Scalar::Int(v) => serializer.serialize_i64(*v),
            Scalar::Float(v) => serializer.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for Scalar {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        struct Visitor;
        impl serde::de::Visitor<'_> for Visitor {
            type Value = Scalar;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a number")
            }

            fn visit_i64<E: serde::de::Error>(self, v: i64) -> std::result::Result<Scalar, E> {
                Ok(Scalar::Int(v))
            }

            fn visit_u64<E: serde::de::Error>(self, v: u64) -> std::result::Result<Scalar, E> {
                i64::try_from(v)
                    .map(Scalar::Int)
                    .map_err(|_| E::custom("integer out of range"))
            }

            fn visit_f64<E: serde::de::Error>(self, v: f64) -> std::result::Result<Scalar, E> {
                Ok(Scalar::Float(v))
            }

            fn visit_bool<E: serde::de::Error>(self, v: bool) -> std::result::Result<Scalar, E> {
                Ok(Scalar::Int(v as i64))
            }
        }
        deserializer.deserialize_any(Visitor)
    }
}

/// Field path → value, in the order the fields were first declared.
pub type FieldMap = IndexMap<String, Scalar>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScalarKind {
    Int,
    Float,
    Bool,
    Enum,
}

impl ScalarKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ScalarKind::Int => "int",
            ScalarKind::Float => "float",
            ScalarKind::Bool => "bool",
            ScalarKind::Enum => "enum",
        }
    }
}

impl FromStr for ScalarKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "int" => Ok(ScalarKind::Int),
            "float" => Ok(ScalarKind::Float),
            "bool" => Ok(ScalarKind::Bool),
            "enum" => Ok(ScalarKind::Enum),
            other => Err(format!("unknown scalar kind `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldDecl {
    pub path: String,
    pub kind: ScalarKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionDecl {
    pub name: String,
    pub file: String,
    pub line: usize,
}

/// Global fields (flattened to scalar leaves) and function definitions.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SymbolTable {
    pub fields: Vec<FieldDecl>,
    pub functions: Vec<FunctionDecl>,
}

impl SymbolTable {
    pub fn field(&self, path: &str) -> Option<&FieldDecl> {
        self.fields.iter().find(|f| f.path == path)
    }

    pub fn has_function(&self, name: &str) -> bool {
        self.functions.iter().any(|f| f.name == name)
    }

    /// Adds a field unless the path is already present. Returns whether it
    /// was inserted.
    pub fn add_field(&mut self, decl: FieldDecl) -> bool {
        if self.field(&decl.path).is_some() {
            return false;
        }
        self.fields.push(decl);
        true
    }

    pub fn add_function(&mut self, decl: FunctionDecl) -> bool {
        if self
            .functions
            .iter()
            .any(|f| f.name == decl.name && f.file == decl.file)
        {
            return false;
        }
        self.functions.push(decl);
        true
    }
}

/// Right-hand side of a comparison: another field or a literal.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Operand {
    Field(String),
    Const(Scalar),
}

impl fmt::Display for Operand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Operand::Field(path) => f.write_str(path),
            Operand::Const(v) => write!(f, "{v}"),
        }
    }
}

/// One abstraction constraint. `template` names an entry in the template
/// registry (`value_change`, `cmp`, `range`); `y` and `z` are used according
/// to the template's arity.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ConstraintSpec {
    pub template: String,
    pub x: String,
    pub y: Option<Operand>,
    pub z: Option<Operand>,
}

impl ConstraintSpec {
    pub fn value_change(x: &str) -> Self {
        ConstraintSpec {
            template: "value_change".into(),
            x: x.into(),
            y: None,
            z: None,
        }
    }

    pub fn compared_with(x: &str, y: Operand) -> Self {
        ConstraintSpec {
            template: "cmp".into(),
            x: x.into(),
            y: Some(y),
            z: None,
        }
    }

    pub fn compared_with_range(x: &str, y: Operand, z: Operand) -> Self {
        ConstraintSpec {
            template: "range".into(),
            x: x.into(),
            y: Some(y),
            z: Some(z),
        }
    }

    /// Every field path this constraint reads.
    pub fn fields(&self) -> impl Iterator<Item = &str> {
        let operands = [self.y.as_ref(), self.z.as_ref()];
        std::iter::once(self.x.as_str()).chain(operands.into_iter().flatten().filter_map(|o| {
            match o {
                Operand::Field(p) => Some(p.as_str()),
                Operand::Const(_) => None,
            }
        }))
    }
}

impl fmt::Display for ConstraintSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({}", self.template, self.x)?;
        for op in [&self.y, &self.z].into_iter().flatten() {
            write!(f, ", {op}")?;
        }
        f.write_str(")")
    }
}

impl FromStr for ConstraintSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        constraint::parse_constraint(s)
    }
}

impl TryFrom<String> for ConstraintSpec {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<ConstraintSpec> for String {
    fn from(c: ConstraintSpec) -> String {
        c.to_string()
    }
}

/// Drops every part of a trace whose `x` leaves `[lo, hi]` (inclusive).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct RangeFilter {
    pub x: String,
    pub lo: f64,
    pub hi: f64,
}

impl fmt::Display for RangeFilter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "filter({}, {}, {})",
            self.x,
            Scalar::Float(self.lo),
            Scalar::Float(self.hi)
        )
    }
}

impl FromStr for RangeFilter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        constraint::parse_filter(s)
    }
}

impl TryFrom<String> for RangeFilter {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<RangeFilter> for String {
    fn from(f: RangeFilter) -> String {
        f.to_string()
    }
}

/// The user's selection: what to monitor and how to abstract it. Saved
/// configs double as named aspects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorConfig {
    pub name: String,
    pub fields: Vec<String>,
    pub functions: Vec<String>,
    pub constraints: Vec<ConstraintSpec>,
    #[serde(default)]
    pub filters: Vec<RangeFilter>,
    #[serde(default)]
    pub eq_epsilon: f64,
}

impl MonitorConfig {
    pub fn constraint_texts(&self) -> Vec<String> {
        self.constraints.iter().map(ToString::to_string).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Finding {
    pub code: &'static str,
    pub message: String,
}

impl Finding {
    fn new(code: &'static str, message: impl Into<String>) -> Self {
        Finding {
            code,
            message: message.into(),
        }
    }
}

/// Checks a config against a symbol table. Findings are data; an empty list
/// means the config is usable.
pub fn validate_config(config: &MonitorConfig, symbols: &SymbolTable) -> Vec<Finding> {
    let mut findings = Vec::new();
    let mut seen = BTreeSet::new();
    for path in &config.fields {
        if !seen.insert(path.as_str()) {
            findings.push(Finding::new("DUPLICATE_FIELD", format!("field `{path}` selected twice")));
        }
        if symbols.field(path).is_none() {
            findings.push(Finding::new("UNKNOWN_FIELD", format!("field `{path}` is not in the symbol table")));
        }
    }
    for name in &config.functions {
        if !symbols.has_function(name) {
            findings.push(Finding::new(
                "UNKNOWN_FUNCTION",
                format!("function `{name}` is not in the symbol table"),
            ));
        }
    }
    let selected = |path: &str| config.fields.iter().any(|f| f == path);
    for spec in &config.constraints {
        match constraint::template(&spec.template) {
            None => findings.push(Finding::new(
                "UNKNOWN_TEMPLATE",
                format!("no constraint template named `{}`", spec.template),
            )),
            Some(t) => {
                let given = spec.y.is_some() as usize + spec.z.is_some() as usize;
                if given != t.operand_count() || (spec.y.is_none() && spec.z.is_some()) {
                    findings.push(Finding::new(
                        "TEMPLATE_ARITY",
                        format!("`{spec}` needs {} operand(s)", t.operand_count()),
                    ));
                }
            }
        }
        for path in spec.fields() {
            if !selected(path) {
                findings.push(Finding::new(
                    "FIELD_NOT_SELECTED",
                    format!("`{spec}` reads `{path}`, which is not a selected field"),
                ));
            }
        }
        if let (Some(Operand::Const(lo)), Some(Operand::Const(hi))) = (&spec.y, &spec.z) {
            if lo.compare(*hi, 0.0) != Ordering::Less {
                findings.push(Finding::new("RANGE_EMPTY", format!("`{spec}` has lower bound ≥ upper bound")));
            }
        }
    }
    for filter in &config.filters {
        if !selected(&filter.x) {
            findings.push(Finding::new(
                "FIELD_NOT_SELECTED",
                format!("`{filter}` reads `{}`, which is not a selected field", filter.x),
            ));
        }
        if !(filter.lo <= filter.hi) {
            findings.push(Finding::new("FILTER_EMPTY", format!("`{filter}` has lo > hi")));
        }
    }
    if !(config.eq_epsilon >= 0.0) {
        findings.push(Finding::new("NEGATIVE_EPSILON", "eq_epsilon must be non-negative"));
    }
    findings
}

/// Fields whose values differ between two snapshots over the same key set.
/// Floats differ iff `|a - b| > eps`; integers compare exactly.
pub fn snapshot_diff(before: &FieldMap, after: &FieldMap, eps: f64) -> Result<BTreeSet<String>> {
    if before.len() != after.len() || before.keys().any(|k| !after.contains_key(k)) {
        let a: BTreeSet<_> = before.keys().collect();
        let b: BTreeSet<_> = after.keys().collect();
        let odd: Vec<_> = a.symmetric_difference(&b).map(|s| s.as_str()).collect();
        return Err(Error::DiffKeyMismatch(odd.join(", ")));
    }
    Ok(before
        .iter()
        .filter(|(k, v)| v.compare(after[k.as_str()], eps) != Ordering::Equal)
        .map(|(k, _)| k.clone())
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Enter,
    Exit,
}

/// One function boundary with the monitored fields as seen there
/// (before-enter for `Enter`, after-exit for `Exit`).
#[derive(Debug, Clone, PartialEq)]
pub struct TraceEvent {
    pub seq: u64,
    pub kind: EventKind,
    pub function: String,
    pub depth: u32,
    pub vars: FieldMap,
    pub args: serde_json::Map<String, serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConcreteTrace {
    pub id: String,
    pub events: Vec<TraceEvent>,
    pub monitored_fields: Vec<String>,
}

impl ConcreteTrace {
    /// Index of the event with this seq. Seqs are strictly increasing.
    pub fn position(&self, seq: u64) -> std::result::Result<usize, usize> {
        self.events.binary_search_by_key(&seq, |e| e.seq)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CmpOutcome {
    Lt,
    Eq,
    Gt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RangePosition {
    Below,
    AtLo,
    Within,
    AtHi,
    Above,
}

/// Outcome of one constraint on one snapshot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Component {
    Value(Scalar),
    Cmp(CmpOutcome),
    Range(RangePosition),
}

impl Component {
    pub fn token(&self) -> String {
        match self {
            Component::Value(v) => v.to_string(),
            Component::Cmp(c) => match c {
                CmpOutcome::Lt => "LT",
                CmpOutcome::Eq => "EQ",
                CmpOutcome::Gt => "GT",
            }
            .to_string(),
            Component::Range(r) => match r {
                RangePosition::Below => "BELOW",
                RangePosition::AtLo => "AT_LO",
                RangePosition::Within => "WITHIN",
                RangePosition::AtHi => "AT_HI",
                RangePosition::Above => "ABOVE",
            }
            .to_string(),
        }
    }

    pub fn from_token(s: &str) -> std::result::Result<Self, String> {
        Ok(match s {
            "LT" => Component::Cmp(CmpOutcome::Lt),
            "EQ" => Component::Cmp(CmpOutcome::Eq),
            "GT" => Component::Cmp(CmpOutcome::Gt),
            "BELOW" => Component::Range(RangePosition::Below),
            "AT_LO" => Component::Range(RangePosition::AtLo),
            "WITHIN" => Component::Range(RangePosition::Within),
            "AT_HI" => Component::Range(RangePosition::AtHi),
            "ABOVE" => Component::Range(RangePosition::Above),
            other => Component::Value(other.parse()?),
        })
    }
}

/// Per-constraint outcomes in config order: the identity of an abstract state.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Valuation(pub Vec<Component>);

impl Valuation {
    pub fn tokens(&self) -> Vec<String> {
        self.0.iter().map(Component::token).collect()
    }
}

impl fmt::Display for Valuation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({})", self.tokens().join(", "))
    }
}

/// Dense state index, rendered as `s0`, `s1`, …
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StateId(pub usize);

impl fmt::Display for StateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "s{}", self.0)
    }
}

impl Serialize for StateId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for StateId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}

impl FromStr for StateId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        s.strip_prefix('s')
            .and_then(|n| n.parse().ok())
            .map(StateId)
            .ok_or_else(|| Error::UnknownState(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Transition {
    pub from: StateId,
    pub label: String,
    pub to: StateId,
}

/// Half-open seq interval `[start, end)` of one raw trace spent in a state.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Segment {
    pub trace: String,
    pub start: u64,
    pub end: u64,
}

/// A change of a monitored field made by a function outside the selection.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Warning {
    pub trace: String,
    pub function: String,
    pub field: String,
    pub count: u64,
    pub first_seq: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    #[default]
    Efsm,
    Fsm,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct ModelMeta {
    pub kind: ModelKind,
    pub config: String,
    pub constraints: Vec<String>,
    pub traces: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strategy: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub careful_det: Option<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EfsmState {
    pub id: StateId,
    pub valuation: Valuation,
    pub label: String,
    pub initial: bool,
    pub segments: Vec<Segment>,
}

/// Abstract machine whose states are identified by valuations.
#[derive(Debug, Clone, Default)]
pub struct Efsm {
    pub meta: ModelMeta,
    pub states: Vec<EfsmState>,
    pub transitions: BTreeSet<Transition>,
    pub warnings: Vec<Warning>,
    index: HashMap<Valuation, StateId>,
}

impl Efsm {
    pub fn new(meta: ModelMeta) -> Self {
        Efsm {
            meta,
            ..Default::default()
        }
    }

    /// Rebuilds a model from parts, checking the valuation-identity invariant.
    pub fn from_parts(
        meta: ModelMeta,
        states: Vec<EfsmState>,
        transitions: BTreeSet<Transition>,
        warnings: Vec<Warning>,
    ) -> std::result::Result<Self, String> {
        let mut index = HashMap::new();
        for (i, st) in states.iter().enumerate() {
            if st.id != StateId(i) {
                return Err(format!("state ids must be dense, found {} at position {i}", st.id));
            }
            if index.insert(st.valuation.clone(), st.id).is_some() {
                return Err(format!("two states share valuation {}", st.valuation));
            }
        }
        for t in &transitions {
            if t.from.0 >= states.len() || t.to.0 >= states.len() {
                return Err(format!("transition {} -{}-> {} has an undeclared endpoint", t.from, t.label, t.to));
            }
        }
        Ok(Efsm {
            meta,
            states,
            transitions,
            warnings,
            index,
        })
    }

    pub fn state_by_valuation(&self, v: &Valuation) -> Option<StateId> {
        self.index.get(v).copied()
    }

    pub fn state(&self, id: StateId) -> Option<&EfsmState> {
        self.states.get(id.0)
    }

    pub(crate) fn state_mut(&mut self, id: StateId) -> &mut EfsmState {
        &mut self.states[id.0]
    }

    /// Returns the state for `v`, creating it (with the next dense id) if new.
    pub(crate) fn intern(&mut self, v: Valuation, label: impl FnOnce() -> String) -> StateId {
        if let Some(id) = self.index.get(&v) {
            return *id;
        }
        let id = StateId(self.states.len());
        self.index.insert(v.clone(), id);
        self.states.push(EfsmState {
            id,
            valuation: v,
            label: label(),
            initial: false,
            segments: Vec::new(),
        });
        id
    }
}

impl PartialEq for Efsm {
    fn eq(&self, other: &Self) -> bool {
        self.meta == other.meta
            && self.states == other.states
            && self.transitions == other.transitions
            && self.warnings == other.warnings
    }
}

/// Plain labelled transition system produced by the baseline miners.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Fsm {
    pub meta: ModelMeta,
    pub state_count: usize,
    pub initial: Option<StateId>,
    pub transitions: BTreeSet<Transition>,
    /// `None` means every state accepts (prefix-closed trace languages).
    pub accepting: Option<BTreeSet<StateId>>,
}

impl Fsm {
    pub fn states(&self) -> impl Iterator<Item = StateId> {
        (0..self.state_count).map(StateId)
    }

    pub fn alphabet(&self) -> BTreeSet<&str> {
        self.transitions.iter().map(|t| t.label.as_str()).collect()
    }
}

/// Read-only view shared by both machine shapes, used by metrics and export.
pub trait StateGraph {
    fn state_count(&self) -> usize;
    fn initial_states(&self) -> Vec<StateId>;
    fn transitions(&self) -> &BTreeSet<Transition>;
    fn valuation(&self, _id: StateId) -> Option<&Valuation> {
        None
    }
    fn state_label(&self, _id: StateId) -> Option<&str> {
        None
    }
    fn warning_count(&self) -> usize {
        0
    }
}

impl StateGraph for Efsm {
    fn state_count(&self) -> usize {
        self.states.len()
    }

    fn initial_states(&self) -> Vec<StateId> {
        self.states.iter().filter(|s| s.initial).map(|s| s.id).collect()
    }

    fn transitions(&self) -> &BTreeSet<Transition> {
        &self.transitions
    }

    fn valuation(&self, id: StateId) -> Option<&Valuation> {
        self.state(id).map(|s| &s.valuation)
    }

    fn state_label(&self, id: StateId) -> Option<&str> {
        self.state(id).map(|s| s.label.as_str())
    }

    fn warning_count(&self) -> usize {
        self.warnings.len()
    }
}

impl StateGraph for Fsm {
    fn state_count(&self) -> usize {
        self.state_count
    }

    fn initial_states(&self) -> Vec<StateId> {
        self.initial.into_iter().collect()
    }

    fn transitions(&self) -> &BTreeSet<Transition> {
        &self.transitions
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(pairs: &[(&str, Scalar)]) -> FieldMap {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    fn symbols() -> SymbolTable {
        let mut t = SymbolTable::default();
        for (p, k) in [("gear", ScalarKind::Int), ("altitude", ScalarKind::Float), ("speed", ScalarKind::Float)] {
            t.add_field(FieldDecl { path: p.into(), kind: k, unit: None });
        }
        t.add_function(FunctionDecl { name: "takeoff".into(), file: "a.c".into(), line: 3 });
        t
    }

    fn config(constraints: Vec<ConstraintSpec>, functions: &[&str]) -> MonitorConfig {
        MonitorConfig {
            name: "t".into(),
            fields: vec!["gear".into(), "altitude".into()],
            functions: functions.iter().map(|s| s.to_string()).collect(),
            constraints,
            filters: vec![],
            eq_epsilon: 0.0,
        }
    }

    #[test]
    fn well_formed_config_has_no_findings() {
        let c = config(vec![ConstraintSpec::value_change("gear")], &["takeoff"]);
        assert!(validate_config(&c, &symbols()).is_empty());
    }

    #[test]
    fn degenerate_constant_range_is_flagged() {
        let c = config(
            vec![ConstraintSpec::compared_with_range(
                "altitude",
                Operand::Const(Scalar::Int(5)),
                Operand::Const(Scalar::Int(5)),
            )],
            &[],
        );
        let codes: Vec<_> = validate_config(&c, &symbols()).into_iter().map(|f| f.code).collect();
        assert_eq!(codes, vec!["RANGE_EMPTY"]);
    }

    #[test]
    fn unknown_function_is_flagged() {
        let c = config(vec![ConstraintSpec::value_change("gear")], &["takeoffX"]);
        let codes: Vec<_> = validate_config(&c, &symbols()).into_iter().map(|f| f.code).collect();
        assert_eq!(codes, vec!["UNKNOWN_FUNCTION"]);
    }

    #[test]
    fn constraint_on_unselected_field_is_flagged() {
        let c = config(vec![ConstraintSpec::value_change("speed")], &[]);
        let codes: Vec<_> = validate_config(&c, &symbols()).into_iter().map(|f| f.code).collect();
        assert_eq!(codes, vec!["FIELD_NOT_SELECTED"]);
    }

    #[test]
    fn gear_change_is_detected() {
        let d = snapshot_diff(&map(&[("gear", Scalar::Int(0))]), &map(&[("gear", Scalar::Int(1))]), 0.0).unwrap();
        assert_eq!(d.into_iter().collect::<Vec<_>>(), vec!["gear"]);
    }

    #[test]
    fn identical_snapshots_have_no_diff() {
        let m = map(&[("gear", Scalar::Int(0)), ("alt", Scalar::Float(3.5))]);
        assert!(snapshot_diff(&m, &m, 0.0).unwrap().is_empty());
    }

    #[test]
    fn float_diff_respects_tolerance() {
        let a = map(&[("alt", Scalar::Float(1.0))]);
        let b = map(&[("alt", Scalar::Float(1.0 + 1e-12))]);
        assert!(snapshot_diff(&a, &b, 1e-9).unwrap().is_empty());
        assert_eq!(snapshot_diff(&a, &b, 0.0).unwrap().len(), 1);
    }

    #[test]
    fn key_mismatch_is_an_error() {
        let a = map(&[("alt", Scalar::Float(1.0))]);
        let b = map(&[("gear", Scalar::Int(1))]);
        assert_eq!(snapshot_diff(&a, &b, 0.0).unwrap_err().code(), "DIFF_KEY_MISMATCH");
    }

    #[test]
    fn scalar_text_round_trips_keep_the_tag() {
        for s in ["1", "-1", "1.0", "0.25", "1e-12"] {
            let v: Scalar = s.parse().unwrap();
            assert_eq!(v.to_string().parse::<Scalar>().unwrap(), v);
        }
        assert_eq!("1.0".parse::<Scalar>().unwrap(), Scalar::Float(1.0));
        assert_ne!(Scalar::Int(1), Scalar::Float(1.0));
    }

    #[test]
    fn component_tokens_round_trip() {
        for c in [
            Component::Value(Scalar::Int(3)),
            Component::Value(Scalar::Float(2.5)),
            Component::Cmp(CmpOutcome::Eq),
            Component::Range(RangePosition::AtHi),
        ] {
            assert_eq!(Component::from_token(&c.token()).unwrap(), c);
        }
    }

    #[test]
    fn duplicate_valuations_are_rejected() {
        let st = |i| EfsmState {
            id: StateId(i),
            valuation: Valuation(vec![Component::Cmp(CmpOutcome::Lt)]),
            label: String::new(),
            initial: false,
            segments: vec![],
        };
        assert!(Efsm::from_parts(ModelMeta::default(), vec![st(0), st(1)], BTreeSet::new(), vec![]).is_err());
    }

    proptest::proptest! {
        #[test]
        fn snapshot_diff_is_symmetric(a in proptest::collection::vec(-5i64..5, 4), b in proptest::collection::vec(-5i64..5, 4)) {
            let names = ["w", "x", "y", "z"];
            let ma: FieldMap = names.iter().zip(&a).map(|(n, v)| (n.to_string(), Scalar::Int(*v))).collect();
            let mb: FieldMap = names.iter().zip(&b).map(|(n, v)| (n.to_string(), Scalar::Int(*v))).collect();
            proptest::prop_assert_eq!(snapshot_diff(&ma, &mb, 0.0).unwrap(), snapshot_diff(&mb, &ma, 0.0).unwrap());
            proptest::prop_assert!(snapshot_diff(&ma, &ma, 0.0).unwrap().is_empty());
        }
    }
}
