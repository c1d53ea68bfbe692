use std::collections::BTreeSet;

use super::automaton::Automaton;
use super::{fsm_meta, Budget, LabelTrace, Meter, Miner, MinerParams};
use crate::error::Result;
use crate::model::Fsm;

/// Blue-fringe state merging with positive evidence only.
///
/// A candidate merge is scored by the number of transitions that overlap
/// while folding the blue state into the red one. Only merges with a
/// positive score are taken. If some blue state has no such merge, the
/// first of them is promoted to red; otherwise the best merge wins, ties
/// going to the smaller blue and then the smaller red id.
pub fn redblue(pta: &Fsm, budget: &Budget) -> Result<Fsm> {
    let mut meter = budget.start();
    let mut aut = Automaton::from_fsm(pta);
    run(&mut aut, &mut meter)?;
    aut.to_fsm(pta.meta.clone(), &mut meter)
}

pub(crate) fn run(aut: &mut Automaton, meter: &mut Meter) -> Result<()> {
    let mut red: BTreeSet<usize> = BTreeSet::from([aut.initial()]);
    loop {
        meter.check_memory(aut.estimated_bytes())?;
        red = red.iter().map(|&r| aut.find(r)).collect();
        let mut blue = BTreeSet::new();
        for &r in &red {
            for (_, t) in aut.succ(r) {
                if !red.contains(&t) {
                    blue.insert(t);
                }
            }
        }
        if blue.is_empty() {
            return Ok(());
        }
        let mut best: Option<(usize, usize, usize, Vec<(usize, usize)>)> = None;
        let mut promote = None;
        for &b in &blue {
            let mut mergeable = false;
            for &r in &red {
                let (score, unions) = aut.plan_fold(r, b, meter)?;
                if score == 0 {
                    continue;
                }
                mergeable = true;
                if best.as_ref().is_none_or(|(s, _, _, _)| score > *s) {
                    best = Some((score, b, r, unions));
                }
            }
            if !mergeable {
                promote = Some(b);
                break;
            }
        }
        match (promote, best) {
            (Some(b), _) => {
                red.insert(b);
            }
            (None, Some((_, _, _, unions))) => aut.apply(&unions),
            (None, None) => unreachable!("every blue state is either mergeable or promoted"),
        }
    }
}

pub struct RedBlue;

impl Miner for RedBlue {
    fn name(&self) -> &'static str {
        "redblue"
    }

    fn mine(&self, traces: &[LabelTrace], params: &MinerParams, budget: &Budget) -> Result<Fsm> {
        let labels: Vec<Vec<String>> = traces.iter().map(LabelTrace::labels).collect();
        let mut meter = budget.start();
        let mut aut = Automaton::pta(&labels, &mut meter)?;
        run(&mut aut, &mut meter)?;
        aut.to_fsm(fsm_meta(traces, params, false), &mut meter)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::miners::{accepts, build_pta};

    fn labels(v: &[&[&str]]) -> Vec<Vec<String>> {
        v.iter().map(|s| s.iter().map(|l| l.to_string()).collect()).collect()
    }

    #[test]
    fn repeated_symbol_folds_to_a_self_loop() {
        let m = redblue(&build_pta(&labels(&[&["a", "a", "a"]])), &Budget::unlimited()).unwrap();
        assert_eq!(m.state_count, 1);
        assert_eq!(m.transitions.len(), 1);
    }

    #[test]
    fn unrelated_branches_stay_apart() {
        let m = redblue(&build_pta(&labels(&[&["a"], &["b"]])), &Budget::unlimited()).unwrap();
        assert_eq!(m.state_count, 3);
        assert_eq!(m.transitions.len(), 2);
    }

    #[test]
    fn equal_scores_prefer_the_smallest_ids() {
        // blue states 1 (after a) and 2 (after b) both fold into the root
        // with one overlapping `c`; the smaller blue wins
        let traces = labels(&[&["a", "c"], &["b", "c"], &["c"]]);
        let m = redblue(&build_pta(&traces), &Budget::unlimited()).unwrap();
        assert!(traces.iter().all(|t| accepts(&m, t)));
        assert!(accepts(&m, &["a", "a", "c"]));
    }
}
