//! Call-site filtering: the abstract graph over potential monitoring points
//! (PMPs), the skippable direct call sites, and the skip map handed to the
//! verifier.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use thiserror::Error;

use crate::address::Address;
use crate::cfg::{CallKind, Cfg, NodeId, Terminator};
use crate::model::ProgramModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AbstractKind {
    DirectCall,
    IndirectCall,
    IndirectJump,
    Return,
    FunctionEntry,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AbstractNode {
    pub kind: AbstractKind,
    pub site: Address,
    /// Callee entry for direct calls, runtime target for indirect branches and
    /// returns. `None` for function entries.
    pub target: Option<Address>,
}

#[derive(Debug, Clone, Default)]
pub struct AbstractGraph {
    pub nodes: Vec<AbstractNode>,
    pub succs: Vec<BTreeSet<usize>>,
    pub preds: Vec<BTreeSet<usize>>,
    /// Execution may end (halt) after the node without reaching another PMP.
    /// Counts as an extra successor.
    pub may_halt: Vec<bool>,
    /// Direct-call nodes reached from a `setjmp` return point; never skippable.
    pub after_setjmp: BTreeSet<usize>,
}

impl AbstractGraph {
    pub fn out_degree(&self, v: usize) -> usize {
        self.succs[v].len() + usize::from(self.may_halt[v])
    }

    pub fn find(&self, kind: AbstractKind, site: Address, target: Option<Address>) -> Option<usize> {
        self.nodes.iter().position(|n| n.kind == kind && n.site == site && n.target == target)
    }

    pub fn edges(&self) -> BTreeSet<(AbstractNode, AbstractNode)> {
        let mut out = BTreeSet::new();
        for (v, ss) in self.succs.iter().enumerate() {
            for &s in ss {
                out.insert((self.nodes[v], self.nodes[s]));
            }
        }
        out
    }
}

pub fn build_abstract_graph(m: &ProgramModel) -> AbstractGraph {
    build_abstract_graph_in(&Cfg::new(m))
}

pub fn build_abstract_graph_in(cfg: &Cfg) -> AbstractGraph {
    let mut g = AbstractGraph::default();
    // PMP nodes located at each CFG node, and where control goes after each.
    let mut at: HashMap<NodeId, Vec<usize>> = HashMap::new();
    let mut resume: Vec<Option<NodeId>> = Vec::new();
    let setjmp_points = cfg.setjmp_return_points();
    let mut push = |g: &mut AbstractGraph, at: &mut HashMap<NodeId, Vec<usize>>, n: Option<NodeId>, node: AbstractNode, next: Option<NodeId>| {
        let id = g.nodes.len();
        g.nodes.push(node);
        if let Some(n) = n {
            at.entry(n).or_default().push(id);
        }
        resume.push(next);
    };

    let mut targeted = vec![false; cfg.func_entry.len()];
    for (n, t) in cfg.term.iter().enumerate() {
        let site = cfg.addrs[n];
        match t {
            Terminator::Call { library: true, .. } => {}
            Terminator::Call { kind: CallKind::Longjmp, callee, .. } => {
                targeted[*callee] = true;
                // Treated as an ordinary PMP; it lands on a setjmp return point.
                if setjmp_points.is_empty() {
                    push(&mut g, &mut at, Some(n), AbstractNode { kind: AbstractKind::IndirectJump, site, target: None }, None);
                }
                for &r in &setjmp_points {
                    let node = AbstractNode { kind: AbstractKind::IndirectJump, site, target: Some(cfg.addrs[r]) };
                    push(&mut g, &mut at, Some(n), node, Some(r));
                }
            }
            Terminator::Call { callee, .. } => {
                targeted[*callee] = true;
                let entry = cfg.func_entry[*callee];
                let node = AbstractNode { kind: AbstractKind::DirectCall, site, target: Some(cfg.addrs[entry]) };
                push(&mut g, &mut at, Some(n), node, Some(entry));
            }
            Terminator::IndirectCall { targets, .. } => {
                for &tg in targets {
                    if cfg.func_entry[cfg.func_of[tg]] == tg {
                        targeted[cfg.func_of[tg]] = true;
                    }
                    let node = AbstractNode { kind: AbstractKind::IndirectCall, site, target: Some(cfg.addrs[tg]) };
                    push(&mut g, &mut at, Some(n), node, Some(tg));
                }
            }
            Terminator::IndirectJump { targets } => {
                for &tg in targets {
                    let node = AbstractNode { kind: AbstractKind::IndirectJump, site, target: Some(cfg.addrs[tg]) };
                    push(&mut g, &mut at, Some(n), node, Some(tg));
                }
            }
            Terminator::Return { targets } => {
                for &tg in targets {
                    let node = AbstractNode { kind: AbstractKind::Return, site, target: Some(cfg.addrs[tg]) };
                    push(&mut g, &mut at, Some(n), node, Some(tg));
                }
            }
            Terminator::Flow(_) => {}
        }
    }
    for f in 0..cfg.func_entry.len() {
        if !targeted[f] && !cfg.func_library[f] {
            let entry = cfg.func_entry[f];
            let node = AbstractNode { kind: AbstractKind::FunctionEntry, site: cfg.addrs[entry], target: None };
            push(&mut g, &mut at, None, node, Some(entry));
        }
    }

    let n = g.nodes.len();
    g.succs = vec![BTreeSet::new(); n];
    g.preds = vec![BTreeSet::new(); n];
    g.may_halt = vec![false; n];
    let mut memo: HashMap<NodeId, (BTreeSet<usize>, bool)> = HashMap::new();
    for v in 0..n {
        let (ss, halt) = match resume[v] {
            Some(start) => memo.entry(start).or_insert_with(|| first_pmps(cfg, &at, start)).clone(),
            None => (BTreeSet::new(), true),
        };
        for &s in &ss {
            g.preds[s].insert(v);
        }
        g.succs[v] = ss;
        g.may_halt[v] = halt;
    }
    for r in setjmp_points {
        let (ss, _) = first_pmps(cfg, &at, r);
        g.after_setjmp.extend(ss.into_iter().filter(|&s| g.nodes[s].kind == AbstractKind::DirectCall));
    }
    g
}

/// PMPs reachable from `start` (inclusive) along PMP-free CFG paths, and
/// whether some such path halts.
fn first_pmps(cfg: &Cfg, at: &HashMap<NodeId, Vec<usize>>, start: NodeId) -> (BTreeSet<usize>, bool) {
    let mut found = BTreeSet::new();
    let mut halts = false;
    let mut seen = vec![false; cfg.len()];
    let mut work = vec![start];
    while let Some(x) = work.pop() {
        if std::mem::replace(&mut seen[x], true) {
            continue;
        }
        if let Some(ids) = at.get(&x) {
            found.extend(ids.iter().copied());
            continue;
        }
        match &cfg.term[x] {
            Terminator::Call { library: true, call_after, .. } => work.push(*call_after),
            Terminator::Flow(succ) if succ.is_empty() => halts = true,
            Terminator::Flow(succ) => work.extend(succ.iter().copied()),
            // A PMP site with no node: a return with no known target.
            _ => halts = true,
        }
    }
    (found, halts)
}

/// Direct-call nodes all of whose predecessors are events with exactly one
/// successor. Predecessor-less calls, calls preceded by a bare function
/// entry (no event to trigger recovery) and calls after a setjmp return point
/// are kept.
pub fn compute_skippable(g: &AbstractGraph) -> BTreeSet<Address> {
    skippable_nodes(g).into_iter().map(|v| g.nodes[v].site).collect()
}

fn skippable_nodes(g: &AbstractGraph) -> Vec<usize> {
    (0..g.nodes.len())
        .filter(|&v| {
            g.nodes[v].kind == AbstractKind::DirectCall
                && !g.after_setjmp.contains(&v)
                && !g.preds[v].is_empty()
                && g.preds[v]
                    .iter()
                    .all(|&p| g.nodes[p].kind != AbstractKind::FunctionEntry && g.out_degree(p) == 1)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum KeyKind {
    /// The predecessor event's target address.
    Target,
    /// The predecessor's call site (direct-call predecessors are encoded by
    /// their site only).
    Site,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SkipKey {
    pub addr: Address,
    pub kind: KeyKind,
}

impl SkipKey {
    pub fn target(addr: Address) -> Self {
        SkipKey { addr, kind: KeyKind::Target }
    }
    pub fn site(addr: Address) -> Self {
        SkipKey { addr, kind: KeyKind::Site }
    }
}

/// M: predecessor key ↦ skipped call sites reached next, in discovery order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SkipMap {
    pub entries: BTreeMap<SkipKey, Vec<Address>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PolicyParseError {
    #[error("line {line}: {msg}")]
    Line { line: usize, msg: String },
}

impl SkipMap {
    pub fn get(&self, key: SkipKey) -> &[Address] {
        self.entries.get(&key).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn len(&self) -> usize {
        self.entries.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn insert(&mut self, key: SkipKey, value: Address) {
        let v = self.entries.entry(key).or_default();
        if !v.contains(&value) {
            v.push(value);
        }
    }

    /// `skip <key> <value>` per pair; site-keyed entries carry a trailing `site`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, vs) in &self.entries {
            for v in vs {
                match k.kind {
                    KeyKind::Target => out.push_str(&format!("skip {} {}\n", k.addr, v)),
                    KeyKind::Site => out.push_str(&format!("skip {} {} site\n", k.addr, v)),
                }
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<SkipMap, PolicyParseError> {
        let mut m = SkipMap::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: &str| PolicyParseError::Line { line: i + 1, msg: msg.to_string() };
            let t: Vec<&str> = line.split_whitespace().collect();
            if t[0] != "skip" || !(t.len() == 3 || (t.len() == 4 && t[3] == "site")) {
                return Err(err("expected `skip <key> <value> [site]`"));
            }
            let k = Address::parse_hex(t[1]).map_err(|e| err(&e.to_string()))?;
            let v = Address::parse_hex(t[2]).map_err(|e| err(&e.to_string()))?;
            let key = if t.len() == 4 { SkipKey::site(k) } else { SkipKey::target(k) };
            m.insert(key, v);
        }
        Ok(m)
    }
}

impl fmt::Display for SkipMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

pub fn build_skip_map(g: &AbstractGraph, scs: &BTreeSet<Address>) -> SkipMap {
    let mut m = SkipMap::default();
    for (v, node) in g.nodes.iter().enumerate() {
        if node.kind != AbstractKind::DirectCall || !scs.contains(&node.site) {
            continue;
        }
        for &p in &g.preds[v] {
            let pn = g.nodes[p];
            let key = match (pn.kind, pn.target) {
                (AbstractKind::DirectCall, _) => SkipKey::site(pn.site),
                (_, Some(t)) => SkipKey::target(t),
                (_, None) => continue,
            };
            m.insert(key, node.site);
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::address::addr;
    use crate::model::load_model;

    #[test]
    fn empty_scs_gives_empty_map() {
        let m = load_model("func main entry 10\nnode 14\nedge 10 20 direct-call callafter 14\nfunc f entry 20\n").unwrap();
        let g = build_abstract_graph(&m);
        assert!(build_skip_map(&g, &BTreeSet::new()).is_empty());
    }

    #[test]
    fn call_after_entry_only_is_kept() {
        // The only predecessor is main's entry: nothing to trigger recovery.
        let m = load_model("func main entry 10\nnode 14\nedge 10 20 direct-call callafter 14\nfunc f entry 20\nedge 20 14 return\n").unwrap();
        let g = build_abstract_graph(&m);
        assert!(compute_skippable(&g).is_empty());
    }

    #[test]
    fn indirect_jump_only_function() {
        let m = load_model(
            "func main entry 10\nnode 14\nnode 18\nedge 10 14 indirect-jump\nedge 10 18 indirect-jump\nitargets 10 14 18\n",
        )
        .unwrap();
        let g = build_abstract_graph(&m);
        // entry + one node per jump target
        assert_eq!(g.nodes.len(), 3);
        let e = g.find(AbstractKind::FunctionEntry, addr(0x10), None).unwrap();
        assert_eq!(g.succs[e].len(), 2);
        for t in [0x14, 0x18] {
            let j = g.find(AbstractKind::IndirectJump, addr(0x10), Some(addr(t))).unwrap();
            assert!(g.succs[j].is_empty() && g.may_halt[j]);
        }
    }

    #[test]
    fn skip_map_text_round_trip() {
        let mut m = SkipMap::default();
        m.insert(SkipKey::target(addr(0x406416)), addr(0x406416));
        m.insert(SkipKey::site(addr(0x406416)), addr(0x5000));
        m.insert(SkipKey::target(addr(0x10)), addr(0x30));
        m.insert(SkipKey::target(addr(0x10)), addr(0x20));
        let text = m.to_text();
        assert_eq!(text, "skip 10 30\nskip 10 20\nskip 406416 406416\nskip 406416 5000 site\n");
        assert_eq!(SkipMap::from_text(&text).unwrap(), m);
        assert!(SkipMap::from_text("skip 10\n").is_err());
    }
}
