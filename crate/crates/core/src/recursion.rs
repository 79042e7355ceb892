//! Direct recursion detection and the offline foldability check.
//!
//! A recursion is folded only if every activation produces the same event
//! path between checkpoints; otherwise the dedup at the checkpoints would
//! drop returns that the shadow stack needs.

use std::collections::{BTreeSet, HashSet};

use crate::address::Address;
use crate::cfg::{CallKind, Cfg, FuncId, NodeId, Terminator};
use crate::model::ProgramModel;

pub const DEFAULT_DEPTH_LIMIT: usize = 64;

/// Nested calls explored while enumerating event paths.
const CALL_DEPTH_LIMIT: usize = 8;
/// Upper bound on DFS states per enumeration.
const STATE_BUDGET: usize = 200_000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecursionInfo {
    pub function: String,
    /// rs: the function entry.
    pub start: Address,
    /// rd: the function's return instructions.
    pub return_points: BTreeSet<Address>,
    /// Call sites inside the function that target its own entry.
    pub self_call_sites: BTreeSet<Address>,
    /// re: direct call sites to the function from other functions.
    pub external_call_sites: BTreeSet<Address>,
    /// rx: call-after points of the external call sites.
    pub call_after_points: BTreeSet<Address>,
    pub foldable: bool,
}

/// One `RecursionInfo` per function that directly calls its own entry.
/// Mutual recursion is not detected.
pub fn detect_direct_recursion(m: &ProgramModel) -> Vec<RecursionInfo> {
    detect_direct_recursion_in(&Cfg::new(m))
}

pub fn detect_direct_recursion_in(cfg: &Cfg) -> Vec<RecursionInfo> {
    let mut out = Vec::new();
    for f in 0..cfg.func_entry.len() {
        let self_calls: BTreeSet<Address> = cfg.func_nodes[f]
            .iter()
            .filter(|&&n| matches!(cfg.term[n], Terminator::Call { kind: CallKind::Direct, callee, .. } if callee == f))
            .map(|&n| cfg.addrs[n])
            .collect();
        if self_calls.is_empty() {
            continue;
        }
        let mut external = BTreeSet::new();
        let mut after = BTreeSet::new();
        for (n, t) in cfg.term.iter().enumerate() {
            if let Terminator::Call { kind: CallKind::Direct, callee, call_after, .. } = t {
                if *callee == f && cfg.func_of[n] != f {
                    external.insert(cfg.addrs[n]);
                    after.insert(cfg.addrs[*call_after]);
                }
            }
        }
        out.push(RecursionInfo {
            function: cfg.func_name[f].clone(),
            start: cfg.addrs[cfg.func_entry[f]],
            return_points: return_nodes(cfg, f).into_iter().map(|n| cfg.addrs[n]).collect(),
            self_call_sites: self_calls,
            external_call_sites: external,
            call_after_points: after,
            foldable: false,
        });
    }
    out
}

fn return_nodes(cfg: &Cfg, f: FuncId) -> Vec<NodeId> {
    cfg.func_nodes[f]
        .iter()
        .copied()
        .filter(|&n| matches!(cfg.term[n], Terminator::Return { .. }))
        .collect()
}

pub fn classify_foldability(m: &ProgramModel, r: &RecursionInfo, depth_limit: usize) -> RecursionInfo {
    classify_foldability_in(&Cfg::new(m), r, depth_limit)
}

/// Sets `foldable` iff the event path from the recursive call-after point to the
/// return point is unique (and so is the path from the entry to the self call),
/// as established by a depth-limited DFS. Running out of depth counts as "not unique".
pub fn classify_foldability_in(cfg: &Cfg, r: &RecursionInfo, depth_limit: usize) -> RecursionInfo {
    let mut out = r.clone();
    out.foldable = false;
    let Some(entry) = cfg.id(r.start) else { return out };
    let f = cfg.func_of[entry];
    let rets = return_nodes(cfg, f);
    if rets.is_empty() {
        return out;
    }
    let mut en = Enumerator { cfg, rec_fn: f, depth_limit, states: 0 };

    // Paths from the entry up to (and including) a self call.
    let Some(pre) = en.paths(entry, Goal::SelfCall, 0) else { return out };
    if pre.len() != 1 {
        return out;
    }

    // Paths from each recursive call-after point to a return, prefixed by the
    // return event that lands there.
    let mut post: BTreeSet<Vec<Ev>> = BTreeSet::new();
    for &site in &r.self_call_sites {
        let Some(n) = cfg.id(site) else { return out };
        let Terminator::Call { call_after, .. } = cfg.term[n] else { return out };
        let Some(tails) = en.paths(call_after, Goal::Return, 0) else { return out };
        for &ret in &rets {
            for (tail, _) in &tails {
                let mut p = vec![Ev::Ret(ret, call_after)];
                p.extend(tail.iter().cloned());
                post.insert(p);
            }
        }
        if post.len() > 1 {
            return out;
        }
    }
    out.foldable = post.len() == 1;
    out
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
enum Ev {
    Call(NodeId),
    Pair(NodeId, NodeId),
    Ret(NodeId, NodeId),
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Goal {
    /// Stop at a direct call to the recursive function (event included).
    SelfCall,
    /// Stop at a return instruction of the function being walked.
    Return,
}

struct Enumerator<'a> {
    cfg: &'a Cfg,
    rec_fn: FuncId,
    depth_limit: usize,
    states: usize,
}

type PathSet = BTreeSet<(Vec<Ev>, NodeId)>;

impl Enumerator<'_> {
    /// Distinct event sequences from `start` to the goal, each with the node it
    /// stopped at. `None` if the search could not be resolved. Stops early once
    /// two distinct sequences are known.
    fn paths(&mut self, start: NodeId, goal: Goal, call_depth: usize) -> Option<PathSet> {
        if call_depth > CALL_DEPTH_LIMIT {
            return None;
        }
        let mut found = PathSet::new();
        let mut seen: HashSet<(NodeId, Vec<Ev>)> = HashSet::new();
        let mut work: Vec<(NodeId, Vec<Ev>, usize)> = vec![(start, Vec::new(), 0)];
        while let Some((n, seq, depth)) = work.pop() {
            if found.len() > 1 {
                break;
            }
            if !seen.insert((n, seq.clone())) {
                continue;
            }
            self.states += 1;
            if self.states > STATE_BUDGET || depth > self.depth_limit {
                return None;
            }
            match &self.cfg.term[n] {
                Terminator::Return { .. } => {
                    if goal == Goal::Return {
                        found.insert((seq, n));
                    }
                }
                Terminator::Flow(succ) => {
                    for &s in succ {
                        work.push((s, seq.clone(), depth + 1));
                    }
                }
                Terminator::Call { kind: CallKind::Longjmp, .. } => return None,
                Terminator::Call { callee, call_after, library, .. } => {
                    if *library {
                        work.push((*call_after, seq, depth + 1));
                        continue;
                    }
                    let mut with_call = seq.clone();
                    with_call.push(Ev::Call(n));
                    if *callee == self.rec_fn {
                        if goal == Goal::SelfCall && call_depth == 0 {
                            found.insert((with_call, n));
                            continue;
                        }
                        return None;
                    }
                    let entry = self.cfg.func_entry[*callee];
                    for (next, d) in self.through_call(with_call, entry, *call_after, call_depth)? {
                        work.push((*call_after, next, depth + d));
                    }
                }
                Terminator::IndirectCall { targets, call_after } => {
                    for &t in targets {
                        if self.cfg.func_of[t] == self.rec_fn {
                            return None;
                        }
                        let mut with_call = seq.clone();
                        with_call.push(Ev::Pair(n, t));
                        for (next, d) in self.through_call(with_call, t, *call_after, call_depth)? {
                            work.push((*call_after, next, depth + d));
                        }
                    }
                }
                Terminator::IndirectJump { targets } => {
                    for &t in targets {
                        let mut next = seq.clone();
                        next.push(Ev::Pair(n, t));
                        work.push((t, next, depth + 1));
                    }
                }
            }
        }
        Some(found)
    }

    fn through_call(
        &mut self,
        prefix: Vec<Ev>,
        callee_start: NodeId,
        call_after: NodeId,
        call_depth: usize,
    ) -> Option<Vec<(Vec<Ev>, usize)>> {
        let sub = self.paths(callee_start, Goal::Return, call_depth + 1)?;
        let mut out = Vec::new();
        for (body, ret) in sub {
            let mut s = prefix.clone();
            s.extend(body);
            s.push(Ev::Ret(ret, call_after));
            out.push((s, 1));
        }
        Some(out)
    }
}
