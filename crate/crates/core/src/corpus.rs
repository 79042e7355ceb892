//! Seeded synthetic programs with matching schedules and attacks.
//!
//! A program is first drawn as a small statement tree per function, then laid
//! out as a model, and schedules are produced by walking the same tree so
//! every decision names a real successor.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::address::Address;
use crate::event::{EventKind, EventRecord};
use crate::interp::AttackSpec;
use crate::model::{load_model, ProgramModel};
use crate::pipeline::Analysis;
use crate::schedule::{Schedule, ScheduleItem};

/// Environment variable holding the corpus seed.
pub const SEED_ENV: &str = "RECFA_SEED";

pub fn seed_from_env(default: u64) -> u64 {
    std::env::var(SEED_ENV).ok().and_then(|s| s.trim().parse().ok()).unwrap_or(default)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusKind {
    /// A long top-level loop with at most four distinct iteration paths.
    LoopDominated,
    /// No loops and no recursion.
    LoopFree,
    Mixed,
}

impl CorpusKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CorpusKind::LoopDominated => "loop",
            CorpusKind::LoopFree => "flat",
            CorpusKind::Mixed => "mixed",
        }
    }
}

impl std::str::FromStr for CorpusKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "loop" => Ok(CorpusKind::LoopDominated),
            "flat" => Ok(CorpusKind::LoopFree),
            "mixed" => Ok(CorpusKind::Mixed),
            other => Err(format!("unknown corpus kind `{other}` (loop, flat, mixed)")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct GenConfig {
    pub kind: CorpusKind,
    /// Ordinary and recursive functions, `main` included.
    pub functions: usize,
    pub max_block: usize,
    pub max_nesting: usize,
    pub icall_fanout: usize,
    pub recursion: bool,
    pub setjmp: bool,
    pub libcalls: bool,
    /// Trip range of the top-level loops of a loop-dominated program.
    pub top_trips: (u64, u64),
    /// Trip range of every other loop.
    pub inner_trips: (u64, u64),
    pub max_rec_depth: u64,
    /// Rough cap on the events one function call may produce.
    pub cost_budget: u64,
}

impl GenConfig {
    pub fn for_kind(kind: CorpusKind) -> Self {
        let base = GenConfig {
            kind,
            functions: 8,
            max_block: 4,
            max_nesting: 2,
            icall_fanout: 3,
            recursion: true,
            setjmp: true,
            libcalls: true,
            top_trips: (100, 300),
            inner_trips: (0, 6),
            max_rec_depth: 6,
            cost_budget: 4_000,
        };
        match kind {
            CorpusKind::LoopDominated => GenConfig { inner_trips: (1, 4), setjmp: false, cost_budget: 400, ..base },
            CorpusKind::LoopFree => GenConfig { recursion: false, ..base },
            CorpusKind::Mixed => base,
        }
    }
}

#[derive(Debug, Clone)]
enum Stmt {
    Nop,
    Call(usize),
    LibCall(usize),
    ICall { targets: Vec<usize>, site: u64 },
    Switch { arms: Vec<Vec<Stmt>>, site: u64, starts: Vec<u64> },
    If { arms: [Vec<Stmt>; 2], site: u64, starts: [u64; 2] },
    Loop { body: Vec<Stmt>, top: bool, header: u64, start: u64, exit: u64 },
    /// setjmp, then a call whose callee longjmps back, then fall through.
    Jmp { land: u64, call_node: u64, exit: u64 },
}

#[derive(Debug, Clone)]
enum FuncKind {
    Plain,
    Rec { pre: Vec<Stmt>, post: Vec<Stmt>, rec_arm: u64, base_arm: u64 },
}

#[derive(Debug, Clone)]
struct Func {
    name: String,
    kind: FuncKind,
    body: Vec<Stmt>,
    entry: u64,
    cost: u64,
    /// No decision can be reached from this function.
    deterministic: bool,
}

/// A generated model together with what is needed to schedule it.
#[derive(Debug, Clone)]
pub struct GeneratedProgram {
    pub name: String,
    pub kind: CorpusKind,
    pub model: ProgramModel,
    pub model_text: String,
    funcs: Vec<Func>,
    helper_entry: u64,
    max_rec_depth: u64,
    top_trips: (u64, u64),
    inner_trips: (u64, u64),
}

const LIBS: usize = 2;

struct Gen<'c> {
    c: &'c GenConfig,
    rng: ChaCha8Rng,
    funcs: Vec<Func>,
    uses_jmp: bool,
}

fn stmt_cost(funcs: &[Func], s: &Stmt, c: &GenConfig) -> u64 {
    match s {
        Stmt::Nop | Stmt::LibCall(_) => 0,
        Stmt::Call(j) => 2 + funcs[*j].cost,
        Stmt::ICall { targets, .. } => 2 + targets.iter().map(|t| funcs[*t].cost).max().unwrap_or(0),
        Stmt::Switch { arms, .. } => 1 + arms.iter().map(|a| block_cost(funcs, a, c)).max().unwrap_or(0),
        Stmt::If { arms, .. } => arms.iter().map(|a| block_cost(funcs, a, c)).max().unwrap_or(0),
        Stmt::Loop { body, top, .. } => {
            let trips = if *top { c.top_trips.1 } else { c.inner_trips.1 };
            trips.saturating_mul(block_cost(funcs, body, c))
        }
        Stmt::Jmp { .. } => 4,
    }
}

fn block_cost(funcs: &[Func], b: &[Stmt], c: &GenConfig) -> u64 {
    b.iter().map(|s| stmt_cost(funcs, s, c)).fold(0u64, |a, x| a.saturating_add(x))
}

fn block_deterministic(funcs: &[Func], b: &[Stmt]) -> bool {
    b.iter().all(|s| match s {
        Stmt::Nop | Stmt::LibCall(_) => true,
        Stmt::Call(j) => funcs[*j].deterministic,
        Stmt::ICall { targets, .. } => targets.len() == 1 && funcs[targets[0]].deterministic,
        Stmt::Switch { arms, .. } => arms.len() == 1 && block_deterministic(funcs, &arms[0]),
        _ => false,
    })
}

impl Gen<'_> {
    fn callees(&self, f: usize) -> Vec<usize> {
        (f + 1..self.c.functions).collect()
    }

    /// `only_det`: restrict to statements without decisions.
    fn block(&mut self, f: usize, nesting: usize, in_loop: bool, budget: u64, only_det: bool) -> Vec<Stmt> {
        let n = self.rng.gen_range(1..=self.c.max_block);
        let mut out = Vec::with_capacity(n);
        let mut used = 0u64;
        for _ in 0..n {
            let s = self.stmt(f, nesting, in_loop, budget.saturating_sub(used), only_det);
            let cost = stmt_cost(&self.funcs, &s, self.c);
            if used.saturating_add(cost) > budget {
                out.push(Stmt::Nop);
                continue;
            }
            used += cost;
            out.push(s);
        }
        out
    }

    fn stmt(&mut self, f: usize, nesting: usize, in_loop: bool, budget: u64, only_det: bool) -> Stmt {
        let mut callees = self.callees(f);
        if only_det {
            callees.retain(|&j| self.funcs[j].deterministic);
        }
        let deeper = nesting < self.c.max_nesting;
        let loops = deeper && self.c.kind != CorpusKind::LoopFree && !only_det;
        let mut menu: Vec<(u32, u8)> = vec![(2, 0)];
        if !callees.is_empty() {
            menu.push((4, 1));
            menu.push((2, 3));
        }
        if self.c.libcalls {
            menu.push((1, 2));
        }
        if deeper && !only_det {
            menu.push((1, 4));
            menu.push((2, 5));
        }
        if loops {
            menu.push((2, 6));
        }
        let jmp_ok = self.c.setjmp && !in_loop && nesting == 0 && !only_det && matches!(self.funcs[f].kind, FuncKind::Plain);
        if jmp_ok {
            menu.push((1, 7));
        }
        let total: u32 = menu.iter().map(|m| m.0).sum();
        let mut pick = self.rng.gen_range(0..total);
        let mut choice = 0;
        for (w, c) in &menu {
            if pick < *w {
                choice = *c;
                break;
            }
            pick -= w;
        }
        match choice {
            1 => Stmt::Call(*callees.choose(&mut self.rng).unwrap()),
            2 => Stmt::LibCall(self.rng.gen_range(0..LIBS)),
            3 => {
                let k = if only_det { 1 } else { self.rng.gen_range(1..=self.c.icall_fanout.min(callees.len())) };
                let mut targets: Vec<usize> = callees.choose_multiple(&mut self.rng, k).copied().collect();
                targets.sort_unstable();
                Stmt::ICall { targets, site: 0 }
            }
            4 => {
                let k = self.rng.gen_range(2..=3);
                let arms = (0..k).map(|_| self.block(f, nesting + 1, in_loop, budget.saturating_sub(1), false)).collect();
                Stmt::Switch { arms, site: 0, starts: Vec::new() }
            }
            5 => {
                let a = self.block(f, nesting + 1, in_loop, budget, false);
                let b = if self.rng.gen_bool(0.3) { Vec::new() } else { self.block(f, nesting + 1, in_loop, budget, false) };
                Stmt::If { arms: [a, b], site: 0, starts: [0, 0] }
            }
            6 => {
                let per_iter = budget / self.c.inner_trips.1.max(1);
                let body = self.block(f, nesting + 1, true, per_iter, false);
                Stmt::Loop { body, top: false, header: 0, start: 0, exit: 0 }
            }
            7 => {
                self.uses_jmp = true;
                Stmt::Jmp { land: 0, call_node: 0, exit: 0 }
            }
            _ => Stmt::Nop,
        }
    }

    fn function(&mut self, f: usize) {
        let budget = self.c.cost_budget;
        let is_rec = self.c.recursion && f > 0 && self.rng.gen_bool(0.25);
        if is_rec {
            let det = self.rng.gen_bool(0.6);
            let per = budget / (self.c.max_rec_depth + 1) / 2;
            let pre = self.block(f, 1, false, per, det);
            let post = self.block(f, 1, false, per, det);
            self.funcs[f].kind = FuncKind::Rec { pre, post, rec_arm: 0, base_arm: 0 };
        } else if f == 0 && self.c.kind == CorpusKind::LoopDominated {
            let mut body = Vec::new();
            if self.rng.gen_bool(0.5) {
                body.push(Stmt::Call(*self.callees(0).choose(&mut self.rng).unwrap_or(&0)));
                if self.c.functions < 2 {
                    body.clear();
                }
            }
            let loops = self.rng.gen_range(1..=2);
            for _ in 0..loops {
                let inner = self.block(0, 1, true, budget, false);
                body.push(Stmt::Loop { body: inner, top: true, header: 0, start: 0, exit: 0 });
            }
            self.funcs[f].body = body;
        } else {
            self.funcs[f].body = self.block(f, 0, false, budget, false);
        }
        let fu = &self.funcs[f];
        let (cost, det) = match &fu.kind {
            FuncKind::Plain => (block_cost(&self.funcs, &fu.body, self.c), block_deterministic(&self.funcs, &fu.body)),
            FuncKind::Rec { pre, post, .. } => {
                let step = block_cost(&self.funcs, pre, self.c) + block_cost(&self.funcs, post, self.c) + 2;
                (step.saturating_mul(self.c.max_rec_depth + 1), false)
            }
        };
        self.funcs[f].cost = cost;
        self.funcs[f].deterministic = det;
    }
}

/// Lays the statement trees out as model text.
struct Layout {
    next: u64,
    nodes: Vec<Vec<u64>>,
    edges: String,
    itargets: String,
    /// Call-after points each function returns to.
    returns_to: BTreeMap<usize, Vec<u64>>,
    lib_entry: [u64; LIBS],
    setjmp_entry: u64,
    longjmp_entry: u64,
    helper_entry: u64,
    lands: Vec<u64>,
    helper_cas: Vec<u64>,
}

impl Layout {
    fn node(&mut self, f: usize) -> u64 {
        let a = self.next;
        self.next += 4;
        self.nodes[f].push(a);
        a
    }

    fn edge(&mut self, s: u64, d: u64, kind: &str) {
        let _ = writeln!(self.edges, "edge {s:x} {d:x} {kind}");
    }

    fn call(&mut self, s: u64, d: u64, kind: &str, ca: u64) {
        let _ = writeln!(self.edges, "edge {s:x} {d:x} {kind} callafter {ca:x}");
    }

    fn block(&mut self, f: usize, entries: &[u64], b: &mut [Stmt], mut from: u64) -> u64 {
        for s in b.iter_mut() {
            from = self.stmt(f, entries, s, from);
        }
        from
    }

    fn stmt(&mut self, f: usize, entries: &[u64], s: &mut Stmt, from: u64) -> u64 {
        match s {
            Stmt::Nop => {
                let n = self.node(f);
                self.edge(from, n, "fallthrough");
                n
            }
            Stmt::Call(j) => {
                let ca = self.node(f);
                self.call(from, entries[*j], "direct-call", ca);
                self.returns_to.entry(*j).or_default().push(ca);
                ca
            }
            Stmt::LibCall(l) => {
                let ca = self.node(f);
                self.call(from, self.lib_entry[*l], "direct-call", ca);
                ca
            }
            Stmt::ICall { targets, site } => {
                *site = from;
                let ca = self.node(f);
                let _ = write!(self.itargets, "itargets {from:x}");
                for &t in targets.iter() {
                    self.call(from, entries[t], "indirect-call", ca);
                    self.returns_to.entry(t).or_default().push(ca);
                    let _ = write!(self.itargets, " {:x}", entries[t]);
                }
                self.itargets.push('\n');
                ca
            }
            Stmt::Switch { arms, site, starts } => {
                *site = from;
                starts.clear();
                let mut ends = Vec::new();
                for arm in arms.iter_mut() {
                    let st = self.node(f);
                    self.edge(from, st, "indirect-jump");
                    starts.push(st);
                    ends.push(self.block(f, entries, arm, st));
                }
                let _ = writeln!(
                    self.itargets,
                    "itargets {from:x} {}",
                    starts.iter().map(|a| format!("{a:x}")).collect::<Vec<_>>().join(" ")
                );
                let join = self.node(f);
                for e in ends {
                    self.edge(e, join, "direct-jump");
                }
                join
            }
            Stmt::If { arms, site, starts } => {
                *site = from;
                let mut ends = Vec::new();
                for (k, arm) in arms.iter_mut().enumerate() {
                    let st = self.node(f);
                    self.edge(from, st, "cond-branch");
                    starts[k] = st;
                    ends.push(self.block(f, entries, arm, st));
                }
                let join = self.node(f);
                for e in ends {
                    self.edge(e, join, "direct-jump");
                }
                join
            }
            Stmt::Loop { body, header, start, exit, .. } => {
                let h = self.node(f);
                self.edge(from, h, "fallthrough");
                let st = self.node(f);
                let x = self.node(f);
                self.edge(h, st, "cond-branch");
                self.edge(h, x, "cond-branch");
                let e = self.block(f, entries, body, st);
                self.edge(e, h, "direct-jump");
                (*header, *start, *exit) = (h, st, x);
                x
            }
            Stmt::Jmp { land, call_node, exit } => {
                let l = self.node(f);
                self.call(from, self.setjmp_entry, "setjmp-call", l);
                self.lands.push(l);
                let cn = self.node(f);
                let x = self.node(f);
                self.edge(l, cn, "cond-branch");
                self.edge(l, x, "cond-branch");
                let cw = self.node(f);
                self.call(cn, self.helper_entry, "direct-call", cw);
                self.helper_cas.push(cw);
                self.edge(cw, x, "fallthrough");
                (*land, *call_node, *exit) = (l, cn, x);
                x
            }
        }
    }
}

pub fn generate(c: &GenConfig, seed: u64) -> GeneratedProgram {
    assert!(c.functions >= 1 && c.max_block >= 1 && c.icall_fanout >= 1);
    let mut g = Gen {
        c,
        rng: ChaCha8Rng::seed_from_u64(seed),
        funcs: (0..c.functions)
            .map(|i| Func {
                name: if i == 0 { "main".to_string() } else { format!("f{i}") },
                kind: FuncKind::Plain,
                body: Vec::new(),
                entry: 0,
                cost: 0,
                deterministic: true,
            })
            .collect(),
        uses_jmp: false,
    };
    for f in (0..c.functions).rev() {
        g.function(f);
    }
    let mut funcs = g.funcs;

    // nodes[0..n) are the functions, then libs, setjmp, longjmp, helper.
    let n = c.functions;
    let mut lay = Layout {
        next: 0x401000,
        nodes: vec![Vec::new(); n + LIBS + 3],
        edges: String::new(),
        itargets: String::new(),
        returns_to: BTreeMap::new(),
        lib_entry: [0; LIBS],
        setjmp_entry: 0,
        longjmp_entry: 0,
        helper_entry: 0,
        lands: Vec::new(),
        helper_cas: Vec::new(),
    };
    for l in 0..LIBS {
        lay.lib_entry[l] = lay.node(n + l);
    }
    lay.setjmp_entry = lay.node(n + LIBS);
    lay.longjmp_entry = lay.node(n + LIBS + 1);
    lay.helper_entry = lay.node(n + LIBS + 2);
    let helper_ca = lay.node(n + LIBS + 2);
    lay.call(lay.helper_entry, lay.longjmp_entry, "longjmp-call", helper_ca);

    let mut entries = vec![0u64; n];
    let mut rets = vec![0u64; n];
    for f in (0..n).rev() {
        lay.next = (lay.next + 0xff) & !0xff;
        let e = lay.node(f);
        entries[f] = e;
        funcs[f].entry = e;
        let kind = std::mem::replace(&mut funcs[f].kind, FuncKind::Plain);
        let kind = match kind {
            FuncKind::Plain => {
                let mut body = std::mem::take(&mut funcs[f].body);
                rets[f] = lay.block(f, &entries, &mut body, e);
                funcs[f].body = body;
                FuncKind::Plain
            }
            FuncKind::Rec { mut pre, mut post, .. } => {
                let a = lay.node(f);
                let b = lay.node(f);
                lay.edge(e, a, "cond-branch");
                lay.edge(e, b, "cond-branch");
                let p_end = lay.block(f, &entries, &mut pre, a);
                let ca = lay.node(f);
                lay.call(p_end, e, "direct-call", ca);
                lay.returns_to.entry(f).or_default().push(ca);
                let q_end = lay.block(f, &entries, &mut post, ca);
                let r = lay.node(f);
                lay.edge(q_end, r, "fallthrough");
                lay.edge(b, r, "fallthrough");
                rets[f] = r;
                FuncKind::Rec { pre, post, rec_arm: a, base_arm: b }
            }
        };
        funcs[f].kind = kind;
    }
    for (f, cas) in std::mem::take(&mut lay.returns_to) {
        for ca in cas.into_iter().collect::<BTreeSet<_>>() {
            lay.edge(rets[f], ca, "return");
        }
    }
    for l in lay.lands.clone() {
        lay.edge(lay.setjmp_entry, l, "return");
    }
    for cw in lay.helper_cas.clone() {
        lay.edge(helper_ca, cw, "return");
    }

    let mut text = String::new();
    for l in 0..LIBS {
        let _ = writeln!(text, "libfunc lib{l}");
    }
    let emit_func = |text: &mut String, name: &str, nodes: &[u64]| {
        let _ = writeln!(text, "func {name} entry {:x}", nodes[0]);
        for a in &nodes[1..] {
            let _ = writeln!(text, "node {a:x}");
        }
    };
    for f in 0..n {
        emit_func(&mut text, &funcs[f].name, &lay.nodes[f]);
    }
    for l in 0..LIBS {
        emit_func(&mut text, &format!("lib{l}"), &lay.nodes[n + l]);
    }
    emit_func(&mut text, "setjmp", &lay.nodes[n + LIBS]);
    emit_func(&mut text, "longjmp", &lay.nodes[n + LIBS + 1]);
    emit_func(&mut text, "jmp_helper", &lay.nodes[n + LIBS + 2]);
    text.push_str(&lay.edges);
    text.push_str(&lay.itargets);

    let model = load_model(&text).unwrap_or_else(|e| panic!("generator produced an invalid model: {e}\n{text}"));
    GeneratedProgram {
        name: format!("{}-{seed}", c.kind.as_str()),
        kind: c.kind,
        model,
        model_text: text,
        funcs,
        helper_entry: lay.helper_entry,
        max_rec_depth: c.max_rec_depth,
        top_trips: c.top_trips,
        inner_trips: c.inner_trips,
    }
}

fn addr(a: u64) -> Address {
    Address::new(a).expect("generated address")
}

struct Walker<'p> {
    p: &'p GeneratedProgram,
    rng: ChaCha8Rng,
    top_trips: Option<u64>,
}

impl Walker<'_> {
    fn take(out: &mut Vec<ScheduleItem>, s: u64, d: u64) {
        out.push(ScheduleItem::Take(addr(s), addr(d)));
    }

    fn block(&mut self, b: &[Stmt], out: &mut Vec<ScheduleItem>) {
        for s in b {
            self.stmt(s, out);
        }
    }

    fn stmt(&mut self, s: &Stmt, out: &mut Vec<ScheduleItem>) {
        match s {
            Stmt::Nop | Stmt::LibCall(_) => {}
            Stmt::Call(j) => self.func(*j, out),
            Stmt::ICall { targets, site } => {
                let t = *targets.choose(&mut self.rng).unwrap();
                if targets.len() > 1 {
                    Self::take(out, *site, self.p.funcs[t].entry);
                }
                self.func(t, out);
            }
            Stmt::Switch { arms, site, starts } => {
                let k = self.rng.gen_range(0..arms.len());
                if arms.len() > 1 {
                    Self::take(out, *site, starts[k]);
                }
                self.block(&arms[k], out);
            }
            Stmt::If { arms, site, starts } => {
                let k = self.rng.gen_range(0..2);
                Self::take(out, *site, starts[k]);
                self.block(&arms[k], out);
            }
            Stmt::Loop { body, top: true, header, start, exit } => {
                let variants: Vec<Vec<ScheduleItem>> = (0..self.rng.gen_range(1..=4))
                    .map(|_| {
                        let mut v = Vec::new();
                        Self::take(&mut v, *header, *start);
                        self.block(body, &mut v);
                        v
                    })
                    .collect();
                let trips = self.top_trips.unwrap_or_else(|| self.rng.gen_range(self.p.top_trips.0..=self.p.top_trips.1));
                let plen = self.rng.gen_range(1..=6u64);
                let pattern: Vec<usize> = (0..plen).map(|_| self.rng.gen_range(0..variants.len())).collect();
                let cycle: Vec<ScheduleItem> = pattern.iter().flat_map(|&k| variants[k].iter().cloned()).collect();
                if trips / plen > 0 {
                    out.push(ScheduleItem::Repeat(trips / plen, cycle));
                }
                for &k in pattern.iter().take((trips % plen) as usize) {
                    out.extend(variants[k].iter().cloned());
                }
                Self::take(out, *header, *exit);
            }
            Stmt::Loop { body, header, start, exit, .. } => {
                let trips = self.rng.gen_range(self.p.inner_trips.0..=self.p.inner_trips.1);
                for _ in 0..trips {
                    Self::take(out, *header, *start);
                    self.block(body, out);
                }
                Self::take(out, *header, *exit);
            }
            Stmt::Jmp { land, call_node, exit } => {
                Self::take(out, *land, *call_node);
                Self::take(out, *land, *exit);
            }
        }
    }

    fn func(&mut self, f: usize, out: &mut Vec<ScheduleItem>) {
        let fu = &self.p.funcs[f];
        match &fu.kind {
            FuncKind::Plain => self.block(&fu.body, out),
            FuncKind::Rec { .. } => {
                let d = self.rng.gen_range(0..=self.p.max_rec_depth);
                self.rec(f, d, out);
            }
        }
    }

    fn rec(&mut self, f: usize, depth: u64, out: &mut Vec<ScheduleItem>) {
        let fu = &self.p.funcs[f];
        let FuncKind::Rec { pre, post, rec_arm, base_arm } = &fu.kind else { unreachable!() };
        if depth == 0 {
            Self::take(out, fu.entry, *base_arm);
            return;
        }
        Self::take(out, fu.entry, *rec_arm);
        self.block(pre, out);
        self.rec(f, depth - 1, out);
        self.block(post, out);
    }
}

impl GeneratedProgram {
    /// A benign schedule drawn with `seed`.
    pub fn schedule(&self, seed: u64) -> Schedule {
        self.walk(seed, None)
    }

    /// Same as [`Self::schedule`] but every top-level loop runs `trips` times.
    pub fn schedule_with_top_trips(&self, seed: u64, trips: u64) -> Schedule {
        self.walk(seed, Some(trips))
    }

    fn walk(&self, seed: u64, top_trips: Option<u64>) -> Schedule {
        let mut w = Walker { p: self, rng: ChaCha8Rng::seed_from_u64(seed), top_trips };
        let mut items = Vec::new();
        w.func(0, &mut items);
        Schedule { items }
    }

    /// Entry of the function that longjmps.
    pub fn longjmp_helper(&self) -> Address {
        addr(self.helper_entry)
    }
}

/// `count` programs of one kind, seeds derived from `seed`.
pub fn corpus(kind: CorpusKind, count: usize, seed: u64) -> Vec<GeneratedProgram> {
    corpus_with(&GenConfig::for_kind(kind), count, seed)
}

pub fn corpus_with(c: &GenConfig, count: usize, seed: u64) -> Vec<GeneratedProgram> {
    (0..count as u64).map(|i| generate(c, seed.wrapping_mul(0x9e37_79b9).wrapping_add(i))).collect()
}

fn occurrence(raw: &[EventRecord], k: usize) -> u64 {
    raw[..=k].iter().filter(|e| e.src == raw[k].src && e.kind != EventKind::DirectCall).count() as u64
}

/// Forges the target of an executed indirect call or jump to a model node
/// outside the site's valid targets.
pub fn forward_attack(a: &Analysis, raw: &[EventRecord], seed: u64) -> Option<AttackSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sites: Vec<usize> = raw
        .iter()
        .enumerate()
        .filter(|(_, e)| matches!(e.kind, EventKind::IndirectCall | EventKind::IndirectJump))
        .map(|(i, _)| i)
        .collect();
    let &k = sites.choose(&mut rng)?;
    let site = raw[k].src;
    let valid = &a.forward_map.get(site)?.tgts;
    let pool: Vec<Address> = a.cfg.addrs.iter().copied().filter(|t| !valid.contains(t)).collect();
    let forged = *pool.choose(&mut rng)?;
    Some(AttackSpec { occurrence: occurrence(raw, k), site, forged_target: forged })
}

/// Forges an executed return to a model node that is no call-after point.
pub fn return_attack(a: &Analysis, raw: &[EventRecord], seed: u64) -> Option<AttackSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rets: Vec<usize> = raw.iter().enumerate().filter(|(_, e)| e.kind == EventKind::Return).map(|(i, _)| i).collect();
    let &k = rets.choose(&mut rng)?;
    let cas: BTreeSet<Address> = a.forward_map.entries.values().filter_map(|e| e.ca).collect();
    let pool: Vec<Address> = a.cfg.addrs.iter().copied().filter(|t| !cas.contains(t)).collect();
    let forged = *pool.choose(&mut rng)?;
    Some(AttackSpec { occurrence: occurrence(raw, k), site: raw[k].src, forged_target: forged })
}
