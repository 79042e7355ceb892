//! Dense, per-node view of a validated [`ProgramModel`] shared by the analyses
//! and the interpreter.

use std::collections::HashMap;

use crate::address::Address;
use crate::model::{EdgeKind, ProgramModel};

pub type NodeId = usize;
pub type FuncId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CallKind {
    Direct,
    Setjmp,
    Longjmp,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Terminator {
    /// Intra-procedural successors. Empty means the program halts here.
    Flow(Vec<NodeId>),
    Call { kind: CallKind, callee: FuncId, call_after: NodeId, library: bool },
    IndirectCall { targets: Vec<NodeId>, call_after: NodeId },
    IndirectJump { targets: Vec<NodeId> },
    /// Statically known return targets (oracle view only).
    Return { targets: Vec<NodeId> },
}

#[derive(Debug, Clone)]
pub struct Cfg {
    pub addrs: Vec<Address>,
    pub index: HashMap<Address, NodeId>,
    pub func_of: Vec<FuncId>,
    pub term: Vec<Terminator>,
    pub func_entry: Vec<NodeId>,
    pub func_name: Vec<String>,
    pub func_nodes: Vec<Vec<NodeId>>,
    pub func_library: Vec<bool>,
}

impl Cfg {
    /// Builds the view. The model must already be valid.
    pub fn new(m: &ProgramModel) -> Cfg {
        let mut addrs = Vec::new();
        let mut index = HashMap::new();
        let mut func_of = Vec::new();
        let mut func_entry = Vec::new();
        let mut func_nodes = Vec::new();
        for (fi, f) in m.functions.iter().enumerate() {
            let mut ids = Vec::new();
            for &n in &f.nodes {
                index.insert(n, addrs.len());
                ids.push(addrs.len());
                addrs.push(n);
                func_of.push(fi);
            }
            func_nodes.push(ids);
        }
        for f in &m.functions {
            func_entry.push(index[&f.entry]);
        }
        let entry_func: HashMap<Address, FuncId> =
            m.functions.iter().enumerate().map(|(i, f)| (f.entry, i)).collect();
        let func_library: Vec<bool> =
            m.functions.iter().map(|f| m.library_functions.contains(&f.name)).collect();

        let mut term: Vec<Terminator> = vec![Terminator::Flow(Vec::new()); addrs.len()];
        for e in &m.edges {
            let s = index[&e.src];
            let d = index[&e.dst];
            let ca = e.call_after.map(|a| index[&a]);
            let t = &mut term[s];
            match e.kind {
                EdgeKind::DirectCall | EdgeKind::SetjmpCall | EdgeKind::LongjmpCall => {
                    let kind = match e.kind {
                        EdgeKind::SetjmpCall => CallKind::Setjmp,
                        EdgeKind::LongjmpCall => CallKind::Longjmp,
                        _ => CallKind::Direct,
                    };
                    let callee = entry_func[&e.dst];
                    *t = Terminator::Call { kind, callee, call_after: ca.unwrap(), library: func_library[callee] };
                }
                EdgeKind::IndirectCall => {
                    let targets = m.indirect_targets[&e.src].iter().map(|a| index[a]).collect();
                    *t = Terminator::IndirectCall { targets, call_after: ca.unwrap() };
                }
                EdgeKind::IndirectJump => {
                    let targets = m.indirect_targets[&e.src].iter().map(|a| index[a]).collect();
                    *t = Terminator::IndirectJump { targets };
                }
                EdgeKind::Return => match t {
                    Terminator::Return { targets } => targets.push(d),
                    _ => *t = Terminator::Return { targets: vec![d] },
                },
                EdgeKind::DirectJump | EdgeKind::CondBranch | EdgeKind::Fallthrough => match t {
                    Terminator::Flow(succ) => {
                        if !succ.contains(&d) {
                            succ.push(d)
                        }
                    }
                    _ => unreachable!("validated model mixes terminators"),
                },
            }
        }
        Cfg {
            addrs,
            index,
            func_of,
            term,
            func_entry,
            func_name: m.functions.iter().map(|f| f.name.clone()).collect(),
            func_nodes,
            func_library,
        }
    }

    pub fn id(&self, a: Address) -> Option<NodeId> {
        self.index.get(&a).copied()
    }

    pub fn len(&self) -> usize {
        self.addrs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.addrs.is_empty()
    }

    /// Successors inside the node's own function, treating a call as falling
    /// through to its call-after point.
    pub fn intra_succs(&self, n: NodeId) -> Vec<NodeId> {
        match &self.term[n] {
            Terminator::Flow(s) => s.clone(),
            Terminator::Call { kind: CallKind::Longjmp, .. } => Vec::new(),
            Terminator::Call { call_after, .. } | Terminator::IndirectCall { call_after, .. } => vec![*call_after],
            Terminator::IndirectJump { targets } => {
                targets.iter().copied().filter(|t| self.func_of[*t] == self.func_of[n]).collect()
            }
            Terminator::Return { .. } => Vec::new(),
        }
    }

    /// Addresses following each `setjmp` call (the possible `longjmp` landing points).
    pub fn setjmp_return_points(&self) -> Vec<NodeId> {
        let mut v: Vec<NodeId> = self
            .term
            .iter()
            .filter_map(|t| match t {
                Terminator::Call { kind: CallKind::Setjmp, call_after, .. } => Some(*call_after),
                _ => None,
            })
            .collect();
        v.sort_unstable();
        v.dedup();
        v
    }
}
