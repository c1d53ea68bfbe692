use super::{fsm_meta, ktails, Budget, LabelTrace, LabeledStep, Miner, MinerParams};
use crate::error::Result;
use crate::model::Fsm;

/// `fn{a,b}` with the changed fields sorted, or plain `fn` when nothing
/// changed.
pub fn enriched_label(step: &LabeledStep) -> String {
    if step.changed.is_empty() {
        return step.function.clone();
    }
    let mut fields = step.changed.clone();
    fields.sort();
    fields.dedup();
    format!("{}{{{}}}", step.function, fields.join(","))
}

/// kTails over the alphabet enriched with changed-field signatures.
pub fn gktail_lite(traces: &[LabelTrace], k: usize, careful_det: bool, budget: &Budget) -> Result<Fsm> {
    let params = MinerParams::new("gktail_lite", k, careful_det);
    GkTailLite.mine(traces, &params, budget)
}

pub struct GkTailLite;

impl Miner for GkTailLite {
    fn name(&self) -> &'static str {
        "gktail_lite"
    }

    fn uses_k(&self) -> bool {
        true
    }

    fn mine(&self, traces: &[LabelTrace], params: &MinerParams, budget: &Budget) -> Result<Fsm> {
        let labels: Vec<Vec<String>> = traces
            .iter()
            .map(|t| t.steps.iter().map(enriched_label).collect())
            .collect();
        ktails::mine_labels(&labels, fsm_meta(traces, params, true), params, budget)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::miners::{mine, MinerParams};

    fn step(f: &str, changed: &[&str]) -> LabeledStep {
        LabeledStep {
            function: f.into(),
            changed: changed.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn change_sets_split_labels() {
        assert_ne!(enriched_label(&step("accelerate", &["speed"])), enriched_label(&step("accelerate", &[])));
        assert_eq!(enriched_label(&step("f", &["b", "a"])), "f{a,b}");
    }

    #[test]
    fn empty_change_sets_reduce_to_ktails() {
        let t = LabelTrace::from_labels("t", &["a", "b", "a", "b", "c"]);
        for k in 0..3 {
            for det in [false, true] {
                let g = gktail_lite(std::slice::from_ref(&t), k, det, &Budget::unlimited()).unwrap();
                let kt = mine(std::slice::from_ref(&t), &MinerParams::new("ktails", k, det)).unwrap();
                assert_eq!(g.transitions, kt.transitions);
                assert_eq!(g.state_count, kt.state_count);
            }
        }
    }
}
