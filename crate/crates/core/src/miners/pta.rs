use super::automaton::Automaton;
use super::Budget;
use crate::model::{Fsm, ModelKind, ModelMeta};

/// Tree-shaped acceptor of the prefix closure of `traces`, numbered
/// breadth-first with children in label order.
pub fn build_pta(traces: &[Vec<String>]) -> Fsm {
    let mut meter = Budget::unlimited().start();
    let mut aut = Automaton::pta(traces, &mut meter).expect("an unlimited budget never fails");
    let meta = ModelMeta {
        kind: ModelKind::Fsm,
        strategy: Some("pta".into()),
        ..Default::default()
    };
    aut.to_fsm(meta, &mut meter).expect("an unlimited budget never fails")
}
