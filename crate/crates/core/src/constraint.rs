//! Constraint templates and the range filter.
//!
//! Templates live behind [`ConstraintTemplate`] and are looked up by name, so
//! a new template only needs an implementation and a registry entry.

use std::cmp::Ordering;
use std::sync::OnceLock;

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::model::{
    CmpOutcome, Component, ConstraintSpec, FieldMap, MonitorConfig, Operand, RangeFilter,
    RangePosition, Scalar, Valuation,
};

pub trait ConstraintTemplate: Send + Sync {
    /// Name used in the text form, e.g. `cmp`.
    fn name(&self) -> &'static str;
    /// Operands after `x`.
    fn operand_count(&self) -> usize;
    fn evaluate(&self, spec: &ConstraintSpec, snapshot: &FieldMap, eps: f64) -> Result<Component>;
    /// Human-readable invariant for a component, e.g. `speed<takeOffSpeed`.
    fn describe(&self, spec: &ConstraintSpec, component: &Component) -> String;
    /// Number of distinct components, when bounded.
    fn domain_size(&self) -> Option<usize>;
}

fn lookup(snapshot: &FieldMap, path: &str) -> Result<Scalar> {
    snapshot
        .get(path)
        .copied()
        .ok_or_else(|| Error::EvalMissingField(path.to_string()))
}

fn operand_value(op: Option<&Operand>, snapshot: &FieldMap) -> Result<Scalar> {
    match op {
        Some(Operand::Field(path)) => lookup(snapshot, path),
        Some(Operand::Const(v)) => Ok(*v),
        None => Err(Error::ConstraintSyntax {
            text: String::new(),
            message: "missing operand".into(),
        }),
    }
}

fn operand_text(op: Option<&Operand>) -> String {
    op.map(ToString::to_string).unwrap_or_default()
}

pub struct ValueChange;

impl ConstraintTemplate for ValueChange {
    fn name(&self) -> &'static str {
        "value_change"
    }

    fn operand_count(&self) -> usize {
        0
    }

    fn evaluate(&self, spec: &ConstraintSpec, snapshot: &FieldMap, _eps: f64) -> Result<Component> {
        lookup(snapshot, &spec.x).map(Component::Value)
    }

    fn describe(&self, spec: &ConstraintSpec, component: &Component) -> String {
        format!("{}=={}", spec.x, component.token())
    }

    fn domain_size(&self) -> Option<usize> {
        None
    }
}

pub struct ComparedWith;

impl ConstraintTemplate for ComparedWith {
    fn name(&self) -> &'static str {
        "cmp"
    }

    fn operand_count(&self) -> usize {
        1
    }

    fn evaluate(&self, spec: &ConstraintSpec, snapshot: &FieldMap, eps: f64) -> Result<Component> {
        let x = lookup(snapshot, &spec.x)?;
        let y = operand_value(spec.y.as_ref(), snapshot)?;
        Ok(Component::Cmp(match x.compare(y, eps) {
            Ordering::Less => CmpOutcome::Lt,
            Ordering::Equal => CmpOutcome::Eq,
            Ordering::Greater => CmpOutcome::Gt,
        }))
    }

    fn describe(&self, spec: &ConstraintSpec, component: &Component) -> String {
        let op = match component {
            Component::Cmp(CmpOutcome::Lt) => "<",
            Component::Cmp(CmpOutcome::Eq) => "==",
            _ => ">",
        };
        format!("{}{op}{}", spec.x, operand_text(spec.y.as_ref()))
    }

    fn domain_size(&self) -> Option<usize> {
        Some(3)
    }
}

pub struct ComparedWithRange;

impl ConstraintTemplate for ComparedWithRange {
    fn name(&self) -> &'static str {
        "range"
    }

    fn operand_count(&self) -> usize {
        2
    }

    fn evaluate(&self, spec: &ConstraintSpec, snapshot: &FieldMap, eps: f64) -> Result<Component> {
        let x = lookup(snapshot, &spec.x)?;
        let lo = operand_value(spec.y.as_ref(), snapshot)?;
        let hi = operand_value(spec.z.as_ref(), snapshot)?;
        let pos = match (x.compare(lo, eps), x.compare(hi, eps)) {
            (Ordering::Equal, _) => RangePosition::AtLo,
            (Ordering::Less, _) => RangePosition::Below,
            (_, Ordering::Equal) => RangePosition::AtHi,
            (_, Ordering::Greater) => RangePosition::Above,
            _ => RangePosition::Within,
        };
        Ok(Component::Range(pos))
    }

    fn describe(&self, spec: &ConstraintSpec, component: &Component) -> String {
        let (x, lo, hi) = (&spec.x, operand_text(spec.y.as_ref()), operand_text(spec.z.as_ref()));
        match component {
            Component::Range(RangePosition::Below) => format!("{x}<{lo}"),
            Component::Range(RangePosition::AtLo) => format!("{x}=={lo}"),
            Component::Range(RangePosition::Within) => format!("{lo}<{x}<{hi}"),
            Component::Range(RangePosition::AtHi) => format!("{x}=={hi}"),
            _ => format!("{x}>{hi}"),
        }
    }

    fn domain_size(&self) -> Option<usize> {
        Some(5)
    }
}

/// Name → template table.
pub struct TemplateRegistry {
    templates: IndexMap<&'static str, Box<dyn ConstraintTemplate>>,
}

impl TemplateRegistry {
    pub fn empty() -> Self {
        TemplateRegistry {
            templates: IndexMap::new(),
        }
    }

    pub fn with_builtins() -> Self {
        let mut r = Self::empty();
        r.register(Box::new(ValueChange));
        r.register(Box::new(ComparedWith));
        r.register(Box::new(ComparedWithRange));
        r
    }

    pub fn register(&mut self, template: Box<dyn ConstraintTemplate>) {
        self.templates.insert(template.name(), template);
    }

    pub fn get(&self, name: &str) -> Option<&dyn ConstraintTemplate> {
        self.templates.get(name).map(|t| t.as_ref())
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.templates.keys().copied()
    }
}

pub fn builtin_templates() -> &'static TemplateRegistry {
    static REGISTRY: OnceLock<TemplateRegistry> = OnceLock::new();
    REGISTRY.get_or_init(TemplateRegistry::with_builtins)
}

pub fn template(name: &str) -> Option<&'static dyn ConstraintTemplate> {
    builtin_templates().get(name)
}

fn resolve(spec: &ConstraintSpec) -> Result<&'static dyn ConstraintTemplate> {
    template(&spec.template).ok_or_else(|| Error::ConstraintSyntax {
        text: spec.to_string(),
        message: format!("no template named `{}`", spec.template),
    })
}

/// Maps a snapshot to its valuation, one component per constraint in order.
pub fn evaluate(snapshot: &FieldMap, config: &MonitorConfig) -> Result<Valuation> {
    config
        .constraints
        .iter()
        .map(|spec| resolve(spec)?.evaluate(spec, snapshot, config.eq_epsilon))
        .collect::<Result<Vec<_>>>()
        .map(Valuation)
}

/// The `&&`-joined invariant describing a valuation under `config`.
pub fn describe(valuation: &Valuation, config: &MonitorConfig) -> String {
    config
        .constraints
        .iter()
        .zip(&valuation.0)
        .map(|(spec, c)| match template(&spec.template) {
            Some(t) => t.describe(spec, c),
            None => c.token(),
        })
        .collect::<Vec<_>>()
        .join(" && ")
}

/// Whether every filter keeps the snapshot. Bounds are inclusive; float
/// values get `eps` slack at either end.
pub fn admits(snapshot: &FieldMap, filters: &[RangeFilter], eps: f64) -> Result<bool> {
    for f in filters {
        let v = lookup(snapshot, &f.x)?;
        let slack = if v.is_float() { eps } else { 0.0 };
        let x = v.as_f64();
        if x < f.lo - slack || x > f.hi + slack {
            return Ok(false);
        }
    }
    Ok(true)
}

fn syntax(text: &str, message: impl Into<String>) -> Error {
    Error::ConstraintSyntax {
        text: text.to_string(),
        message: message.into(),
    }
}

fn split_call(text: &str) -> Result<(&str, Vec<&str>)> {
    let t = text.trim();
    let open = t.find('(').ok_or_else(|| syntax(text, "expected `name(args)`"))?;
    if !t.ends_with(')') {
        return Err(syntax(text, "missing closing `)`"));
    }
    let name = t[..open].trim();
    let args: Vec<&str> = t[open + 1..t.len() - 1].split(',').map(str::trim).collect();
    if args.iter().any(|a| a.is_empty()) {
        return Err(syntax(text, "empty argument"));
    }
    Ok((name, args))
}

fn is_path(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && s.chars().all(|c| c.is_ascii_alphanumeric() || "_.[]".contains(c))
}

fn parse_operand(text: &str, arg: &str) -> Result<Operand> {
    if let Ok(v) = arg.parse::<Scalar>() {
        return Ok(Operand::Const(v));
    }
    if is_path(arg) {
        Ok(Operand::Field(arg.to_string()))
    } else {
        Err(syntax(text, format!("`{arg}` is neither a field path nor a number")))
    }
}

/// Parses `value_change(x)`, `cmp(x, y)`, `range(x, y, z)`; operands are
/// field paths or numeric literals.
pub fn parse_constraint(text: &str) -> Result<ConstraintSpec> {
    let (name, args) = split_call(text)?;
    let t = template(name).ok_or_else(|| syntax(text, format!("unknown template `{name}`")))?;
    if args.len() != t.operand_count() + 1 {
        return Err(syntax(
            text,
            format!("`{name}` takes {} argument(s)", t.operand_count() + 1),
        ));
    }
    if !is_path(args[0]) {
        return Err(syntax(text, format!("`{}` is not a field path", args[0])));
    }
    let mut ops = args[1..].iter().map(|a| parse_operand(text, a));
    Ok(ConstraintSpec {
        template: name.to_string(),
        x: args[0].to_string(),
        y: ops.next().transpose()?,
        z: ops.next().transpose()?,
    })
}

/// Parses `filter(x, lo, hi)`.
pub fn parse_filter(text: &str) -> Result<RangeFilter> {
    let (name, args) = split_call(text)?;
    if name != "filter" || args.len() != 3 {
        return Err(syntax(text, "expected `filter(x, lo, hi)`"));
    }
    if !is_path(args[0]) {
        return Err(syntax(text, format!("`{}` is not a field path", args[0])));
    }
    let num = |a: &str| {
        a.parse::<Scalar>()
            .map(Scalar::as_f64)
            .map_err(|e| syntax(text, e))
    };
    Ok(RangeFilter {
        x: args[0].to_string(),
        lo: num(args[1])?,
        hi: num(args[2])?,
    })
}
