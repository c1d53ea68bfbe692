//! Specification mining for debugging: function-level traces with field
//! snapshots are filtered, abstracted into valuation-keyed state machines,
//! and compared against automated baseline miners.

pub mod abstractor;
pub mod constraint;
pub mod demo;
pub mod error;
pub mod io;
pub mod metrics;
pub mod miners;
pub mod model;
pub mod symbols;
pub mod trace;

pub use error::{Error, Result};
pub use model::{
    ConcreteTrace, ConstraintSpec, Efsm, Fsm, MonitorConfig, Scalar, StateGraph, StateId, SymbolTable, TraceEvent,
    Valuation,
};
