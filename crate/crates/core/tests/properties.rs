mod common;

use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::SeedableRng;

use common::{config, oracle_attribution, random_label_traces, random_nested_trace, FIELDS};
use tracelens_core::abstractor::build_model;
use tracelens_core::io::{parse_efsm, parse_model, relabel, serialize_efsm, serialize_fsm};
use tracelens_core::metrics::{diff_models, exam_score, examination_order};
use tracelens_core::miners::{accepts, build_pta, enriched_label, mine, MinerParams};
use tracelens_core::trace::{attribute_changes, filter_trace, parse_trace, trace_to_string};
use tracelens_core::{ConcreteTrace, Efsm, MonitorConfig, StateId};

fn fields() -> Vec<String> {
    FIELDS.iter().map(|s| s.to_string()).collect()
}

fn cfg(functions: &[&str]) -> MonitorConfig {
    config("prop", &FIELDS, functions, &["cmp(a, b)", "value_change(c)"])
}

fn traces(seed: u64, n: usize) -> Vec<ConcreteTrace> {
    let mut rng = StdRng::seed_from_u64(seed);
    (0..n).map(|i| random_nested_trace(&mut rng, &format!("t{i}"), 4, 40)).collect()
}

/// States as valuation → segments, transitions as valuation triples.
fn shape(m: &Efsm) -> (BTreeMap<String, Vec<(String, u64, u64)>>, BTreeSet<(String, String, String)>) {
    let tok = |s: StateId| m.states[s.0].valuation.tokens().join(",");
    let states = m
        .states
        .iter()
        .map(|s| {
            let segs = s.segments.iter().map(|g| (g.trace.clone(), g.start, g.end)).collect();
            (s.valuation.tokens().join(","), segs)
        })
        .collect();
    let edges = m.transitions.iter().map(|t| (tok(t.from), t.label.clone(), tok(t.to))).collect();
    (states, edges)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn attribution_matches_brute_force(seed in any::<u64>(), depth in 1usize..7) {
        let mut rng = StdRng::seed_from_u64(seed);
        let t = random_nested_trace(&mut rng, "t", depth, 60);
        let got = attribute_changes(&t, &fields(), 0.0).unwrap().records;
        prop_assert_eq!(got, oracle_attribution(&t, &fields()));
    }

    #[test]
    fn segments_partition_each_trace(seed in any::<u64>()) {
        let ts = traces(seed, 3);
        let c = cfg(&["f0", "f1", "f2"]);
        let fts: Vec<_> = ts.iter().map(|t| filter_trace(t, &c).unwrap()).collect();
        let m = build_model(&fts, &c).unwrap();
        for t in &ts {
            let mut segs: Vec<(u64, u64)> = m
                .states
                .iter()
                .flat_map(|s| &s.segments)
                .filter(|g| g.trace == t.id)
                .map(|g| (g.start, g.end))
                .collect();
            segs.sort();
            prop_assert_eq!(segs.first().unwrap().0, t.events[0].seq);
            prop_assert_eq!(segs.last().unwrap().1, t.events.last().unwrap().seq + 1);
            for w in segs.windows(2) {
                prop_assert_eq!(w[0].1, w[1].0);
                prop_assert!(w[0].0 < w[0].1);
            }
        }
    }

    #[test]
    fn selecting_fewer_functions_only_drops_steps(seed in any::<u64>()) {
        let t = &traces(seed, 1)[0];
        let wide = filter_trace(t, &cfg(&["f0", "f1", "f2", "f3"])).unwrap();
        let narrow = filter_trace(t, &cfg(&["f1", "f3"])).unwrap();
        let kept: Vec<_> = wide.steps.iter().filter(|s| s.function == "f1" || s.function == "f3").cloned().collect();
        prop_assert_eq!(narrow.steps, kept);
    }

    #[test]
    fn trace_order_does_not_change_the_model(seed in any::<u64>()) {
        let ts = traces(seed, 4);
        let c = cfg(&["f0", "f2", "f4"]);
        let mut fts: Vec<_> = ts.iter().map(|t| filter_trace(t, &c).unwrap()).collect();
        let a = build_model(&fts, &c).unwrap();
        fts.shuffle(&mut StdRng::seed_from_u64(seed ^ 0x5eed));
        let b = build_model(&fts, &c).unwrap();
        prop_assert_eq!(shape(&a), shape(&b));
        prop_assert!(diff_models(&a, &b).unwrap().is_empty());
    }

    #[test]
    fn mined_models_accept_their_input(seed in any::<u64>(), k in 0usize..3, det in any::<bool>()) {
        let mut rng = StdRng::seed_from_u64(seed);
        let lts = random_label_traces(&mut rng, 6, 3, 12);
        for strategy in ["ktails", "redblue", "gktail_lite"] {
            let fsm = mine(&lts, &MinerParams::new(strategy, k, det)).unwrap();
            for lt in &lts {
                let word: Vec<String> = if strategy == "gktail_lite" {
                    lt.steps.iter().map(enriched_label).collect()
                } else {
                    lt.labels()
                };
                prop_assert!(accepts(&fsm, &word), "{strategy} k={k} det={det} rejects {word:?}");
            }
        }
    }

    #[test]
    fn k0_is_one_state_per_pta(seed in any::<u64>()) {
        let mut rng = StdRng::seed_from_u64(seed);
        let lts = random_label_traces(&mut rng, 5, 4, 10);
        let fsm = mine(&lts, &MinerParams::new("ktails", 0, false)).unwrap();
        let pta = build_pta(&lts.iter().map(|t| t.labels()).collect::<Vec<_>>());
        prop_assert_eq!(fsm.state_count, 1);
        prop_assert_eq!(fsm.alphabet(), pta.alphabet());
    }

    #[test]
    fn exam_survives_renumbering(seed in any::<u64>()) {
        let ts = traces(seed, 2);
        let c = cfg(&["f0", "f1", "f2", "f3", "f4", "f5"]);
        let fts: Vec<_> = ts.iter().map(|t| filter_trace(t, &c).unwrap()).collect();
        let m = build_model(&fts, &c).unwrap();
        let mut perm: Vec<usize> = (0..m.states.len()).collect();
        perm.shuffle(&mut StdRng::seed_from_u64(seed));
        let r = relabel(&m, &perm);
        let order = examination_order(&m);
        for s in &order {
            prop_assert_eq!(exam_score(&m, *s).unwrap(), exam_score(&r, StateId(perm[s.0])).unwrap());
        }
    }

    #[test]
    fn diff_is_antisymmetric(seed in any::<u64>()) {
        let ts = traces(seed, 2);
        let c = cfg(&["f0", "f1", "f2"]);
        let a = build_model(&[filter_trace(&ts[0], &c).unwrap()], &c).unwrap();
        let b = build_model(&[filter_trace(&ts[1], &c).unwrap()], &c).unwrap();
        let ab = diff_models(&a, &b).unwrap();
        let ba = diff_models(&b, &a).unwrap();
        prop_assert_eq!(&ab.states_only_in_a, &ba.states_only_in_b);
        prop_assert_eq!(&ab.transitions_only_in_b, &ba.transitions_only_in_a);
        prop_assert_eq!(ab.shared_states, ba.shared_states);
        prop_assert_eq!(ab.shared_transitions, ba.shared_transitions);
    }

    #[test]
    fn traces_round_trip_byte_for_byte(seed in any::<u64>()) {
        let t = &traces(seed, 1)[0];
        let text = trace_to_string(t);
        let back = parse_trace(&t.id, text.as_bytes()).unwrap();
        prop_assert_eq!(&back, t);
        prop_assert_eq!(trace_to_string(&back), text);
    }

    #[test]
    fn models_round_trip_byte_for_byte(seed in any::<u64>()) {
        let ts = traces(seed, 2);
        let c = cfg(&["f0", "f3"]);
        let fts: Vec<_> = ts.iter().map(|t| filter_trace(t, &c).unwrap()).collect();
        let m = build_model(&fts, &c).unwrap();
        let text = serialize_efsm(&m);
        let back = parse_efsm(&text).unwrap();
        prop_assert_eq!(shape(&back), shape(&m));
        prop_assert_eq!(serialize_efsm(&back), text);

        let mut rng = StdRng::seed_from_u64(seed);
        let fsm = mine(&random_label_traces(&mut rng, 3, 3, 6), &MinerParams::new("redblue", 0, true)).unwrap();
        let text = serialize_fsm(&fsm);
        prop_assert_eq!(tracelens_core::io::serialize_model(&parse_model(&text).unwrap()), text);
    }
}
