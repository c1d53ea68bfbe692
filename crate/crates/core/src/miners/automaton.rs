//! Mutable automaton with union-find state merging, shared by the miners.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use super::Meter;
use crate::error::Result;
use crate::model::{Fsm, ModelMeta, StateId, Transition};

/// Rough per-state and per-edge footprints used for memory accounting.
const STATE_BYTES: u64 = 96;
const EDGE_BYTES: u64 = 40;

pub(crate) struct Automaton {
    /// Sorted alphabet; label ids index into it, so id order is label order.
    pub labels: Vec<String>,
    parent: Vec<usize>,
    succ: Vec<BTreeMap<u32, Vec<usize>>>,
    initial: usize,
    edges: u64,
}

impl Automaton {
    /// Prefix tree over interned label sequences.
    pub fn pta(traces: &[Vec<String>], meter: &mut Meter) -> Result<Self> {
        let alphabet: BTreeSet<&str> = traces.iter().flatten().map(String::as_str).collect();
        let labels: Vec<String> = alphabet.into_iter().map(str::to_string).collect();
        let ids: HashMap<&str, u32> = labels.iter().enumerate().map(|(i, l)| (l.as_str(), i as u32)).collect();
        let mut aut = Automaton {
            labels: Vec::new(),
            parent: vec![0],
            succ: vec![BTreeMap::new()],
            initial: 0,
            edges: 0,
        };
        for t in traces {
            let mut at = 0;
            for l in t {
                meter.tick()?;
                let id = ids[l.as_str()];
                at = match aut.succ[at].get(&id) {
                    Some(v) => v[0],
                    None => {
                        let n = aut.parent.len();
                        aut.parent.push(n);
                        aut.succ.push(BTreeMap::new());
                        aut.succ[at].insert(id, vec![n]);
                        aut.edges += 1;
                        if n.is_multiple_of(4096) {
                            meter.check_memory(aut.estimated_bytes())?;
                        }
                        n
                    }
                };
            }
        }
        meter.check_memory(aut.estimated_bytes())?;
        aut.labels = labels;
        Ok(aut)
    }

    pub fn estimated_bytes(&self) -> u64 {
        self.parent.len() as u64 * STATE_BYTES + self.edges * EDGE_BYTES
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        let mut root = x;
        while self.parent[root] != root {
            root = self.parent[root];
        }
        while self.parent[x] != root {
            let next = self.parent[x];
            self.parent[x] = root;
            x = next;
        }
        root
    }

    pub fn initial(&mut self) -> usize {
        self.find(self.initial)
    }

    /// Canonical successors of a representative, sorted by (label, target).
    pub fn succ(&mut self, s: usize) -> Vec<(u32, usize)> {
        let before = self.raw_len(s);
        let map = std::mem::take(&mut self.succ[s]);
        let mut out = Vec::new();
        let mut clean = BTreeMap::new();
        for (l, targets) in map {
            let mut ts: Vec<usize> = targets.into_iter().map(|t| self.find(t)).collect();
            ts.sort_unstable();
            ts.dedup();
            out.extend(ts.iter().map(|t| (l, *t)));
            clean.insert(l, ts);
        }
        let after = out.len() as u64;
        self.edges = (self.edges + after).saturating_sub(before);
        self.succ[s] = clean;
        out
    }

    fn raw_len(&self, s: usize) -> u64 {
        self.succ[s].values().map(|v| v.len() as u64).sum()
    }

    /// Merges two representatives without resolving nondeterminism. The
    /// smaller id survives.
    pub fn union(&mut self, a: usize, b: usize) -> usize {
        let (a, b) = (self.find(a), self.find(b));
        if a == b {
            return a;
        }
        let (keep, gone) = (a.min(b), a.max(b));
        self.parent[gone] = keep;
        let moved = std::mem::take(&mut self.succ[gone]);
        for (l, ts) in moved {
            self.succ[keep].entry(l).or_default().extend(ts);
        }
        keep
    }

    /// Live representatives in breadth-first order from the initial state,
    /// expanding by label then target id.
    pub fn bfs(&mut self, meter: &mut Meter) -> Result<Vec<usize>> {
        let start = self.initial();
        let mut seen = vec![false; self.parent.len()];
        let mut order = Vec::new();
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        while let Some(s) = queue.pop_front() {
            meter.tick()?;
            order.push(s);
            for (_, t) in self.succ(s) {
                if !seen[t] {
                    seen[t] = true;
                    queue.push_back(t);
                }
            }
        }
        Ok(order)
    }

    /// Outgoing label sequences of length exactly `k`, or shorter when the
    /// path reaches a state with no successors.
    pub fn tails(&mut self, s: usize, k: usize, meter: &mut Meter) -> Result<BTreeSet<Vec<u32>>> {
        let mut out = BTreeSet::new();
        let mut stack = vec![(s, Vec::new())];
        while let Some((q, path)) = stack.pop() {
            meter.tick()?;
            if path.len() == k {
                out.insert(path);
                continue;
            }
            let succ = self.succ(q);
            if succ.is_empty() {
                out.insert(path);
                continue;
            }
            for (l, t) in succ {
                let mut p = path.clone();
                p.push(l);
                stack.push((t, p));
            }
        }
        Ok(out)
    }

    /// Plans merging `b` into `a` on a deterministic automaton, folding
    /// successors so the result stays deterministic. Returns the number of
    /// overlapping transitions met during the fold and the unions to apply.
    pub fn plan_fold(&mut self, a: usize, b: usize, meter: &mut Meter) -> Result<(usize, Vec<(usize, usize)>)> {
        let mut over: HashMap<usize, usize> = HashMap::new();
        let mut maps: HashMap<usize, BTreeMap<u32, usize>> = HashMap::new();
        let mut unions = Vec::new();
        let mut score = 0;
        let mut work = vec![(a, b)];
        while let Some((x, y)) = work.pop() {
            meter.tick()?;
            let x = self.overlay_find(&over, x);
            let y = self.overlay_find(&over, y);
            if x == y {
                continue;
            }
            let (keep, gone) = (x.min(y), x.max(y));
            over.insert(gone, keep);
            unions.push((keep, gone));
            let mut mk = self.overlay_map(&mut maps, keep);
            let mg = self.overlay_map(&mut maps, gone);
            for (l, tg) in mg {
                match mk.get(&l) {
                    Some(&tk) => {
                        score += 1;
                        work.push((tk, tg));
                    }
                    None => {
                        mk.insert(l, tg);
                    }
                }
            }
            maps.insert(keep, mk);
        }
        Ok((score, unions))
    }

    fn overlay_find(&mut self, over: &HashMap<usize, usize>, x: usize) -> usize {
        let mut r = self.find(x);
        while let Some(&p) = over.get(&r) {
            r = p;
        }
        r
    }

    fn overlay_map(&mut self, maps: &mut HashMap<usize, BTreeMap<u32, usize>>, s: usize) -> BTreeMap<u32, usize> {
        if let Some(m) = maps.remove(&s) {
            return m;
        }
        let mut m = BTreeMap::new();
        for (l, t) in self.succ(s) {
            m.entry(l).or_insert(t);
        }
        m
    }

    pub fn apply(&mut self, unions: &[(usize, usize)]) {
        for &(k, g) in unions {
            self.union(k, g);
        }
    }

    /// Renumbers reachable states breadth-first and emits an [`Fsm`].
    pub fn to_fsm(&mut self, meta: ModelMeta, meter: &mut Meter) -> Result<Fsm> {
        let order = self.bfs(meter)?;
        let ids: HashMap<usize, usize> = order.iter().enumerate().map(|(i, s)| (*s, i)).collect();
        let mut transitions = BTreeSet::new();
        for &s in &order {
            for (l, t) in self.succ(s) {
                transitions.insert(Transition {
                    from: StateId(ids[&s]),
                    label: self.labels[l as usize].clone(),
                    to: StateId(ids[&t]),
                });
            }
        }
        Ok(Fsm {
            meta,
            state_count: order.len(),
            initial: Some(StateId(0)),
            transitions,
            accepting: None,
        })
    }

    /// Rebuilds an automaton from a machine, keeping its numbering.
    pub fn from_fsm(fsm: &Fsm) -> Self {
        let labels: Vec<String> = fsm.alphabet().into_iter().map(str::to_string).collect();
        let ids: HashMap<&str, u32> = labels.iter().enumerate().map(|(i, l)| (l.as_str(), i as u32)).collect();
        let n = fsm.state_count.max(1);
        let mut succ = vec![BTreeMap::<u32, Vec<usize>>::new(); n];
        for t in &fsm.transitions {
            succ[t.from.0].entry(ids[t.label.as_str()]).or_default().push(t.to.0);
        }
        let edges = fsm.transitions.len() as u64;
        Automaton {
            labels,
            parent: (0..n).collect(),
            succ,
            initial: fsm.initial.map_or(0, |s| s.0),
            edges,
        }
    }
}
