//! Natural loop detection on the per-function CFG.
//!
//! The header is the target of a back edge (an edge whose target dominates its
//! source). Back edges sharing a header form one loop; each latch becomes a
//! body-end point. Cycles that are not natural loops (irreducible regions) are
//! reported separately and never folded.

use std::collections::{BTreeSet, HashMap};

use petgraph::algo::dominators::simple_fast;
use petgraph::graph::{DiGraph, NodeIndex};

use crate::address::Address;
use crate::cfg::{Cfg, NodeId};
use crate::model::ProgramModel;

pub type LoopId = usize;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoopInfo {
    pub id: LoopId,
    pub function: String,
    /// Last instructions before the header on entering edges (ℓe).
    pub entry_points: BTreeSet<Address>,
    /// The loop header, where every iteration starts (ℓs).
    pub body_start: Address,
    /// Latches: sources of back edges (ℓd).
    pub body_ends: BTreeSet<Address>,
    /// Targets of edges leaving the loop (ℓx).
    pub exit_points: BTreeSet<Address>,
    pub parent: Option<LoopId>,
    pub body: BTreeSet<Address>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LoopForest {
    pub loops: Vec<LoopInfo>,
    /// Targets of retreating edges that are not back edges.
    pub irreducible: BTreeSet<Address>,
}

pub fn detect_loops(m: &ProgramModel) -> LoopForest {
    detect_loops_in(&Cfg::new(m))
}

pub fn detect_loops_in(cfg: &Cfg) -> LoopForest {
    let mut forest = LoopForest::default();
    for f in 0..cfg.func_entry.len() {
        analyze_function(cfg, f, &mut forest);
    }
    // Stable ids: order by header address, then assign parents by containment.
    forest.loops.sort_by_key(|l| l.body_start);
    for (i, l) in forest.loops.iter_mut().enumerate() {
        l.id = i;
    }
    let n = forest.loops.len();
    for i in 0..n {
        let mut best: Option<usize> = None;
        for j in 0..n {
            if i == j || forest.loops[j].function != forest.loops[i].function {
                continue;
            }
            let (a, b) = (&forest.loops[i].body, &forest.loops[j].body);
            if b.len() > a.len() && a.is_subset(b) && best.map_or(true, |k| forest.loops[k].body.len() > b.len()) {
                best = Some(j);
            }
        }
        forest.loops[i].parent = best;
    }
    forest
}

fn analyze_function(cfg: &Cfg, f: usize, forest: &mut LoopForest) {
    let nodes = &cfg.func_nodes[f];
    let mut g: DiGraph<NodeId, ()> = DiGraph::new();
    let mut gi: HashMap<NodeId, NodeIndex> = HashMap::new();
    for &n in nodes {
        gi.insert(n, g.add_node(n));
    }
    let mut succ: HashMap<NodeId, Vec<NodeId>> = HashMap::new();
    let mut pred: HashMap<NodeId, Vec<NodeId>> = HashMap::new();
    for &n in nodes {
        for s in cfg.intra_succs(n) {
            g.add_edge(gi[&n], gi[&s], ());
            succ.entry(n).or_default().push(s);
            pred.entry(s).or_default().push(n);
        }
    }
    let entry = cfg.func_entry[f];
    let doms = simple_fast(&g, gi[&entry]);
    let dominates = |a: NodeId, b: NodeId| -> bool {
        match doms.dominators(gi[&b]) {
            Some(mut it) => it.any(|d| g[d] == a),
            None => false,
        }
    };

    // Back edges grouped by header.
    let mut latches: HashMap<NodeId, Vec<NodeId>> = HashMap::new();
    for &n in nodes {
        for &s in succ.get(&n).into_iter().flatten() {
            if dominates(s, n) {
                latches.entry(s).or_default().push(n);
            }
        }
    }

    // Retreating edges found by DFS that are not back edges => irreducible.
    let mut state: HashMap<NodeId, u8> = HashMap::new();
    let mut stack: Vec<(NodeId, usize)> = vec![(entry, 0)];
    state.insert(entry, 1);
    while let Some((n, i)) = stack.last_mut() {
        let n = *n;
        let ss = succ.get(&n).map(|v| v.as_slice()).unwrap_or(&[]);
        if *i < ss.len() {
            let s = ss[*i];
            *i += 1;
            match state.get(&s) {
                None => {
                    state.insert(s, 1);
                    stack.push((s, 0));
                }
                Some(1) if !dominates(s, n) => {
                    forest.irreducible.insert(cfg.addrs[s]);
                }
                _ => {}
            }
        } else {
            state.insert(n, 2);
            stack.pop();
        }
    }

    let reachable = |n: NodeId| doms.dominators(gi[&n]).is_some();
    for (header, ls) in latches {
        let mut body = BTreeSet::from([header]);
        let mut work: Vec<NodeId> = ls.clone();
        while let Some(x) = work.pop() {
            if body.insert(x) {
                work.extend(pred.get(&x).into_iter().flatten().copied().filter(|&p| reachable(p)));
            }
        }
        let mut entry_points = BTreeSet::new();
        for &p in pred.get(&header).into_iter().flatten() {
            if !body.contains(&p) && reachable(p) {
                entry_points.insert(cfg.addrs[p]);
            }
        }
        let mut exit_points = BTreeSet::new();
        for &b in &body {
            for &s in succ.get(&b).into_iter().flatten() {
                if !body.contains(&s) {
                    exit_points.insert(cfg.addrs[s]);
                }
            }
        }
        forest.loops.push(LoopInfo {
            id: 0,
            function: cfg.func_name[f].clone(),
            entry_points,
            body_start: cfg.addrs[header],
            body_ends: ls.iter().map(|&l| cfg.addrs[l]).collect(),
            exit_points,
            parent: None,
            body: body.iter().map(|&b| cfg.addrs[b]).collect(),
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::address::addr;
    use crate::model::load_model;

    #[test]
    fn straight_line_has_no_loops() {
        let m = load_model("func main entry 10\nnode 14\nnode 18\nedge 10 14 fallthrough\nedge 14 18 fallthrough\n")
            .unwrap();
        assert_eq!(detect_loops(&m), LoopForest::default());
    }

    #[test]
    fn self_loop() {
        let m = load_model("func main entry 10\nnode 14\nnode 18\nedge 10 14 fallthrough\nedge 14 14 cond-branch\nedge 14 18 cond-branch\n").unwrap();
        let f = detect_loops(&m);
        assert_eq!(f.loops.len(), 1);
        let l = &f.loops[0];
        assert_eq!(l.body_start, addr(0x14));
        assert_eq!(l.body_ends, BTreeSet::from([addr(0x14)]));
        assert_eq!(l.entry_points, BTreeSet::from([addr(0x10)]));
        assert_eq!(l.exit_points, BTreeSet::from([addr(0x18)]));
    }

    #[test]
    fn irreducible_cycle_is_not_a_loop() {
        // 10 branches into both 14 and 18, which jump to each other.
        let m = load_model(
            "func main entry 10\nnode 14\nnode 18\nnode 1c\n\
             edge 10 14 cond-branch\nedge 10 18 cond-branch\n\
             edge 14 18 cond-branch\nedge 14 1c cond-branch\nedge 18 14 direct-jump\n",
        )
        .unwrap();
        let f = detect_loops(&m);
        assert!(f.loops.is_empty());
        assert_eq!(f.irreducible.len(), 1);
    }
}
