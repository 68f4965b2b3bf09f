//! Silent-transition elimination.
//!
//! Rules, applied to a fixpoint in this order, lowest transition index first:
//!
//! 1. post-fusion: a silent `t` whose only input `p` feeds nothing but `t`;
//!    producers of `p` produce `t•` directly.
//! 2. pre-fusion: a silent `t` whose only output `r` is produced by nothing but
//!    `t`, and whose inputs feed nothing but `t`; consumers of `r` consume `•t`.
//! 3. redundant places: two non-final places with identical pre/postset and
//!    initial status; the later one is dropped.
//!
//! An application that would close a cycle of silent transitions is undone
//! and the candidate skipped.

use std::collections::BTreeSet;

use super::InteractionNet;

pub fn reduce_net(net: &InteractionNet) -> InteractionNet {
    let mut work = Work::from(net);
    let mut skipped: BTreeSet<(u8, usize)> = BTreeSet::new();
    while let Some(next) = work.step(&mut skipped) {
        work = next;
        skipped.clear();
    }
    work.into_net(net)
}

/// Index-stable working copy; removals are tombstones until compaction.
#[derive(Clone)]
struct Work {
    place_alive: Vec<bool>,
    trans_alive: Vec<bool>,
    silent: Vec<bool>,
    inputs: Vec<BTreeSet<usize>>,
    outputs: Vec<BTreeSet<usize>>,
    initial: usize,
    finals: BTreeSet<usize>,
}

impl Work {
    fn from(net: &InteractionNet) -> Self {
        Work {
            place_alive: vec![true; net.places.len()],
            trans_alive: vec![true; net.transitions.len()],
            silent: net.transitions.iter().map(|t| t.label.is_silent()).collect(),
            inputs: net.transitions.iter().map(|t| t.inputs.iter().copied().collect()).collect(),
            outputs: net.transitions.iter().map(|t| t.outputs.iter().copied().collect()).collect(),
            initial: net.initial_place,
            finals: net.final_places.iter().copied().collect(),
        }
    }

    fn live(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.trans_alive.len()).filter(|&t| self.trans_alive[t])
    }

    fn preset(&self, p: usize) -> BTreeSet<usize> {
        self.live().filter(|&u| self.outputs[u].contains(&p)).collect()
    }

    fn postset(&self, p: usize) -> BTreeSet<usize> {
        self.live().filter(|&u| self.inputs[u].contains(&p)).collect()
    }

    fn pinned(&self, p: usize) -> bool {
        p == self.initial || self.finals.contains(&p)
    }

    /// Tries one rule application; `skipped` remembers candidates rejected by
    /// the loop guard so the scan makes progress.
    fn step(&self, skipped: &mut BTreeSet<(u8, usize)>) -> Option<Work> {
        let candidates = self
            .live()
            .filter(|&t| self.silent[t])
            .flat_map(|t| [(0u8, t), (1u8, t)])
            .collect::<Vec<_>>();
        let mut ordered = candidates;
        ordered.sort();
        for key in ordered {
            if skipped.contains(&key) {
                continue;
            }
            let applied = match key.0 {
                0 => self.post_fusion(key.1),
                _ => self.pre_fusion(key.1),
            };
            if let Some(next) = applied {
                if next.silent_cycle() && !self.silent_cycle() {
                    skipped.insert(key);
                    continue;
                }
                return Some(next);
            }
        }
        self.redundant_place()
    }

    fn post_fusion(&self, t: usize) -> Option<Work> {
        if self.inputs[t].len() != 1 {
            return None;
        }
        let p = *self.inputs[t].first()?;
        if self.pinned(p) || self.outputs[t].contains(&p) || self.postset(p) != BTreeSet::from([t]) {
            return None;
        }
        let producers = self.preset(p);
        if producers.iter().any(|&u| u == t || !self.outputs[u].is_disjoint(&self.outputs[t])) {
            return None;
        }
        let mut next = self.clone();
        let out = self.outputs[t].clone();
        for u in producers {
            next.outputs[u].remove(&p);
            next.outputs[u].extend(out.iter().copied());
        }
        next.trans_alive[t] = false;
        next.place_alive[p] = false;
        Some(next)
    }

    fn pre_fusion(&self, t: usize) -> Option<Work> {
        if self.outputs[t].len() != 1 {
            return None;
        }
        let r = *self.outputs[t].first()?;
        if self.pinned(r) || self.inputs[t].contains(&r) || self.preset(r) != BTreeSet::from([t]) {
            return None;
        }
        if self.inputs[t].iter().any(|&q| self.postset(q) != BTreeSet::from([t])) {
            return None;
        }
        let consumers = self.postset(r);
        if consumers.iter().any(|&c| c == t || !self.inputs[c].is_disjoint(&self.inputs[t])) {
            return None;
        }
        let mut next = self.clone();
        let inp = self.inputs[t].clone();
        for c in consumers {
            next.inputs[c].remove(&r);
            next.inputs[c].extend(inp.iter().copied());
        }
        next.trans_alive[t] = false;
        next.place_alive[r] = false;
        Some(next)
    }

    fn redundant_place(&self) -> Option<Work> {
        let alive: Vec<usize> = (0..self.place_alive.len()).filter(|&p| self.place_alive[p]).collect();
        for (i, &a) in alive.iter().enumerate() {
            if self.finals.contains(&a) {
                continue;
            }
            for &b in &alive[i + 1..] {
                if self.finals.contains(&b) || (a == self.initial) != (b == self.initial) {
                    continue;
                }
                if self.preset(a) == self.preset(b) && self.postset(a) == self.postset(b) {
                    let mut next = self.clone();
                    for t in 0..next.inputs.len() {
                        next.inputs[t].remove(&b);
                        next.outputs[t].remove(&b);
                    }
                    next.place_alive[b] = false;
                    return Some(next);
                }
            }
        }
        None
    }

    fn silent_cycle(&self) -> bool {
        let silent: Vec<usize> = self.live().filter(|&t| self.silent[t]).collect();
        let succ = |t: usize| -> Vec<usize> {
            silent
                .iter()
                .copied()
                .filter(|&u| !self.inputs[u].is_disjoint(&self.outputs[t]))
                .collect()
        };
        // Kahn's algorithm over the silent subgraph.
        let mut indeg: Vec<usize> = vec![0; self.silent.len()];
        for &t in &silent {
            for u in succ(t) {
                indeg[u] += 1;
            }
        }
        let mut queue: Vec<usize> = silent.iter().copied().filter(|&t| indeg[t] == 0).collect();
        let mut seen = 0;
        while let Some(t) = queue.pop() {
            seen += 1;
            for u in succ(t) {
                indeg[u] -= 1;
                if indeg[u] == 0 {
                    queue.push(u);
                }
            }
        }
        seen < silent.len()
    }

    fn into_net(self, original: &InteractionNet) -> InteractionNet {
        let mut place_map = vec![usize::MAX; self.place_alive.len()];
        let mut places = Vec::new();
        for (p, alive) in self.place_alive.iter().enumerate() {
            if *alive {
                place_map[p] = places.len();
                places.push(original.places[p].clone());
            }
        }
        let remap = |s: &BTreeSet<usize>| -> Vec<usize> {
            let mut v: Vec<usize> = s.iter().map(|p| place_map[*p]).collect();
            v.sort_unstable();
            v
        };
        let transitions = self
            .live()
            .map(|t| {
                let mut tr = original.transitions[t].clone();
                tr.inputs = remap(&self.inputs[t]);
                tr.outputs = remap(&self.outputs[t]);
                tr
            })
            .collect();
        InteractionNet {
            places,
            transitions,
            initial_place: place_map[self.initial],
            final_places: self.finals.iter().map(|p| place_map[*p]).collect(),
            roles: original.roles.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{Label, Place, Transition};

    fn t(id: &str, silent: bool, inputs: &[usize], outputs: &[usize]) -> Transition {
        Transition {
            id: id.into(),
            label: if silent {
                Label::Silent
            } else {
                Label::Task { task_id: id.into(), initiator: "A".into(), respondent: "B".into() }
            },
            inputs: inputs.to_vec(),
            outputs: outputs.to_vec(),
        }
    }

    fn net(places: usize, transitions: Vec<Transition>, finals: &[usize]) -> InteractionNet {
        InteractionNet {
            places: (0..places).map(|i| Place { id: format!("p{i}") }).collect(),
            transitions,
            initial_place: 0,
            final_places: finals.to_vec(),
            roles: vec!["A".into(), "B".into()],
        }
    }

    #[test]
    fn sequential_silent_is_fused() {
        // p0 -a-> p1 -τ-> p2 -b-> p3
        let n = net(
            4,
            vec![t("a", false, &[0], &[1]), t("tau", true, &[1], &[2]), t("b", false, &[2], &[3])],
            &[3],
        );
        let r = reduce_net(&n);
        assert_eq!(r.silent_count(), 0);
        assert_eq!(r.places.len(), 3);
        assert_eq!(r.transitions[0].outputs, r.transitions[1].inputs);
        assert_eq!(reduce_net(&r), r);
    }

    #[test]
    fn loop_back_silent_stays() {
        // p0 -a-> p1; p1 -τ-> p0 (loop back); p1 -b-> p2
        let n = net(
            3,
            vec![t("a", false, &[0], &[1]), t("back", true, &[1], &[0]), t("b", false, &[1], &[2])],
            &[2],
        );
        let r = reduce_net(&n);
        assert_eq!(r.silent_count(), 1);
    }

    #[test]
    fn duplicate_place_is_dropped() {
        let n = net(
            4,
            vec![t("a", false, &[0], &[1, 2]), t("b", false, &[1, 2], &[3])],
            &[3],
        );
        let r = reduce_net(&n);
        assert_eq!(r.places.len(), 3);
        assert_eq!(r.transitions[0].outputs, vec![1]);
    }
}
