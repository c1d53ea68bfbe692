use std::collections::{BTreeSet, HashMap};

use super::automaton::Automaton;
use super::{fsm_meta, Budget, LabelTrace, Meter, Miner, MinerParams};
use crate::error::Result;
use crate::model::Fsm;

/// Merges k-equivalent states of a prefix tree until nothing changes.
///
/// Each round groups the live states by their k-tails and, in breadth-first
/// order, merges every group member into the group's first state, provided
/// the two still have equal tails at that moment. With `careful_det` each
/// merge also folds the successors it makes nondeterministic.
pub fn ktails(pta: &Fsm, k: usize, careful_det: bool, budget: &Budget) -> Result<Fsm> {
    let mut meter = budget.start();
    let mut aut = Automaton::from_fsm(pta);
    run(&mut aut, k, careful_det, &mut meter)?;
    aut.to_fsm(pta.meta.clone(), &mut meter)
}

pub(crate) fn run(aut: &mut Automaton, k: usize, careful_det: bool, meter: &mut Meter) -> Result<()> {
    loop {
        let order = aut.bfs(meter)?;
        let mut groups: Vec<Vec<usize>> = Vec::new();
        let mut by_tails: HashMap<BTreeSet<Vec<u32>>, usize> = HashMap::new();
        let mut tail_bytes = 0u64;
        for &s in &order {
            let tails = aut.tails(s, k, meter)?;
            tail_bytes += tails.iter().map(|t| 32 + 4 * t.len() as u64).sum::<u64>();
            match by_tails.get(&tails) {
                Some(&g) => groups[g].push(s),
                None => {
                    by_tails.insert(tails, groups.len());
                    groups.push(vec![s]);
                }
            }
            meter.check_memory(aut.estimated_bytes() + tail_bytes)?;
        }
        drop(by_tails);
        let mut merged = false;
        for group in groups.iter().filter(|g| g.len() > 1) {
            for &m in &group[1..] {
                let (a, b) = (aut.find(group[0]), aut.find(m));
                if a == b {
                    continue;
                }
                if merged && aut.tails(a, k, meter)? != aut.tails(b, k, meter)? {
                    continue;
                }
                if careful_det {
                    let (_, unions) = aut.plan_fold(a, b, meter)?;
                    aut.apply(&unions);
                } else {
                    aut.union(a, b);
                }
                merged = true;
                meter.tick()?;
            }
        }
        if !merged {
            return Ok(());
        }
    }
}

pub struct KTails;

impl Miner for KTails {
    fn name(&self) -> &'static str {
        "ktails"
    }

    fn uses_k(&self) -> bool {
        true
    }

    fn mine(&self, traces: &[LabelTrace], params: &MinerParams, budget: &Budget) -> Result<Fsm> {
        let labels: Vec<Vec<String>> = traces.iter().map(LabelTrace::labels).collect();
        mine_labels(&labels, fsm_meta(traces, params, true), params, budget)
    }
}

pub(crate) fn mine_labels(
    labels: &[Vec<String>],
    meta: crate::model::ModelMeta,
    params: &MinerParams,
    budget: &Budget,
) -> Result<Fsm> {
    let mut meter = budget.start();
    let mut aut = Automaton::pta(labels, &mut meter)?;
    run(&mut aut, params.k, params.careful_det, &mut meter)?;
    aut.to_fsm(meta, &mut meter)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::miners::{accepts, build_pta};

    fn labels(v: &[&[&str]]) -> Vec<Vec<String>> {
        v.iter().map(|s| s.iter().map(|l| l.to_string()).collect()).collect()
    }

    fn edges(f: &Fsm) -> Vec<(usize, &str, usize)> {
        f.transitions.iter().map(|t| (t.from.0, t.label.as_str(), t.to.0)).collect()
    }

    #[test]
    fn k0_collapses_to_one_state() {
        let pta = build_pta(&labels(&[&["a", "b", "c"], &["b", "b"], &["c"]]));
        for det in [false, true] {
            let m = ktails(&pta, 0, det, &Budget::unlimited()).unwrap();
            assert_eq!(m.state_count, 1);
            assert_eq!(edges(&m), vec![(0, "a", 0), (0, "b", 0), (0, "c", 0)]);
        }
    }

    #[test]
    fn k1_careful_det_builds_the_ab_loop() {
        let pta = build_pta(&labels(&[&["a", "b"], &["a", "b", "a", "b"]]));
        let m = ktails(&pta, 1, true, &Budget::unlimited()).unwrap();
        assert_eq!(m.state_count, 2);
        assert_eq!(edges(&m), vec![(0, "a", 1), (1, "b", 0)]);
    }

    #[test]
    fn large_k_merges_equal_suffix_sets() {
        let traces = labels(&[&["a", "b", "c"], &["b", "c"], &["a", "c"]]);
        let pta = build_pta(&traces);
        // brute force: distinct full suffix languages among PTA states
        let mut suffixes: Vec<BTreeSet<Vec<String>>> = vec![BTreeSet::new(); pta.state_count];
        fn walk(f: &Fsm, s: usize, path: Vec<String>, out: &mut BTreeSet<Vec<String>>) {
            out.insert(path.clone());
            for t in f.transitions.iter().filter(|t| t.from.0 == s) {
                let mut p = path.clone();
                p.push(t.label.clone());
                walk(f, t.to.0, p, out);
            }
        }
        for (s, set) in suffixes.iter_mut().enumerate() {
            walk(&pta, s, vec![], set);
        }
        let distinct: BTreeSet<_> = suffixes.into_iter().collect();
        let m = ktails(&pta, 3, false, &Budget::unlimited()).unwrap();
        assert_eq!(m.state_count, distinct.len());
        for t in &traces {
            assert!(accepts(&m, t));
        }
    }

    #[test]
    fn state_count_never_exceeds_the_pta() {
        let traces = labels(&[&["a", "b", "a", "c"], &["b", "a"], &["a", "a", "a"]]);
        let pta = build_pta(&traces);
        for k in 0..5 {
            for det in [false, true] {
                let m = ktails(&pta, k, det, &Budget::unlimited()).unwrap();
                assert!(m.state_count <= pta.state_count);
                assert!(traces.iter().all(|t| accepts(&m, t)));
            }
        }
    }
}
