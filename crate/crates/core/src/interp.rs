//! Schedule-driven execution of a program model.
//!
//! The interpreter walks the model, consumes a decision wherever a node has
//! more than one candidate successor, emits one event per executed PMP and
//! reports the loop/recursion instrumentation points it crosses.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::address::Address;
use crate::cfg::{CallKind, Cfg, FuncId, NodeId, Terminator};
use crate::event::{EventRecord, Marker, RawEvents, TraceSink};
use crate::loops::{LoopForest, LoopId};
use crate::model::ProgramModel;
use crate::recursion::RecursionInfo;
use crate::schedule::{Schedule, ScheduleCursor};

pub const DEFAULT_MAX_STEPS: u64 = 1 << 32;
/// Steps allowed after an attack fired before the run is cut off.
const POST_ATTACK_STEPS: u64 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttackSpec {
    /// 1-based dynamic occurrence of `site`.
    pub occurrence: u64,
    pub site: Address,
    pub forged_target: Address,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum InterpError {
    #[error("model has no functions")]
    NoEntry,
    #[error("schedule exhausted at {at}")]
    ScheduleExhausted { at: Address },
    #[error("schedule expects a decision at {expected} but execution is at {at}")]
    ScheduleOutOfSync { at: Address, expected: Address },
    #[error("schedule picks {dst}, which is not a successor of {at}")]
    InvalidDecision { at: Address, dst: Address },
    #[error("{left} schedule decisions left after the program halted")]
    ScheduleNotConsumed { left: u64 },
    #[error("return at {at} with no caller frame")]
    ReturnWithoutCaller { at: Address },
    #[error("longjmp at {at} with no live setjmp")]
    LongjmpWithoutSetjmp { at: Address },
    #[error("step limit of {0} reached")]
    StepLimit(u64),
}

/// Per-node lookup tables for the markers.
#[derive(Debug, Clone, Default)]
pub struct Instrumentation {
    header: Vec<NodeId>,
    parent: Vec<Option<LoopId>>,
    innermost: Vec<Option<LoopId>>,
    rec_entry_site: Vec<bool>,
}

impl Instrumentation {
    /// No markers at all: folding becomes the identity.
    pub fn none(cfg: &Cfg) -> Self {
        Instrumentation {
            innermost: vec![None; cfg.len()],
            rec_entry_site: vec![false; cfg.len()],
            ..Default::default()
        }
    }

    /// Marks every loop in `loops` and every foldable recursion in `recs`.
    pub fn new(cfg: &Cfg, loops: &LoopForest, recs: &[RecursionInfo]) -> Self {
        let mut ins = Instrumentation::none(cfg);
        let mut order: Vec<&crate::loops::LoopInfo> = loops.loops.iter().collect();
        order.sort_by_key(|l| std::cmp::Reverse(l.body.len()));
        ins.header = loops.loops.iter().map(|l| cfg.id(l.body_start).expect("loop header in model")).collect();
        ins.parent = loops.loops.iter().map(|l| l.parent).collect();
        for l in order {
            for a in &l.body {
                if let Some(n) = cfg.id(*a) {
                    ins.innermost[n] = Some(l.id);
                }
            }
        }
        for r in recs.iter().filter(|r| r.foldable) {
            for s in &r.external_call_sites {
                if let Some(n) = cfg.id(*s) {
                    ins.rec_entry_site[n] = true;
                }
            }
        }
        ins
    }

    fn contains(&self, l: LoopId, v: NodeId) -> bool {
        let mut c = self.innermost[v];
        while let Some(x) = c {
            if x == l {
                return true;
            }
            c = self.parent[x];
        }
        false
    }

    /// Loops containing `v`, innermost first.
    fn chain_into(&self, v: NodeId, out: &mut Vec<LoopId>) {
        out.clear();
        let mut c = self.innermost[v];
        while let Some(x) = c {
            out.push(x);
            c = self.parent[x];
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum RegionKind {
    Loop(LoopId),
    Rec(FuncId),
}

#[derive(Debug, Clone, Copy)]
struct Region {
    kind: RegionKind,
    /// Frame that owns the region; a recursion region belongs to its outermost activation.
    depth: usize,
}

#[derive(Debug, Clone)]
struct Frame {
    func: FuncId,
    ret_to: Option<NodeId>,
    rec_entry: bool,
    uid: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOutcome {
    pub steps: u64,
    pub events: u64,
    /// Direct calls executed at skipped sites (no event emitted).
    pub skipped_calls: u64,
    /// The attack fired.
    pub attacked: bool,
    /// Execution was cut short after the attack (bad target, error, or step cap).
    pub stopped_after_attack: bool,
}

pub struct Interpreter<'a> {
    cfg: &'a Cfg,
    inst: &'a Instrumentation,
    skipped: Vec<bool>,
    pub max_steps: u64,
}

impl<'a> Interpreter<'a> {
    /// Direct calls at sites in `scs` produce no event.
    pub fn new(cfg: &'a Cfg, inst: &'a Instrumentation, scs: &BTreeSet<Address>) -> Self {
        let mut skipped = vec![false; cfg.len()];
        for a in scs {
            if let Some(n) = cfg.id(*a) {
                skipped[n] = true;
            }
        }
        Interpreter { cfg, inst, skipped, max_steps: DEFAULT_MAX_STEPS }
    }

    pub fn run<S: TraceSink>(
        &self,
        schedule: &Schedule,
        attack: Option<&AttackSpec>,
        sink: &mut S,
    ) -> Result<RunOutcome, InterpError> {
        let entry_fn = entry_function(self.cfg).ok_or(InterpError::NoEntry)?;
        let mut r = Run {
            it: self,
            sink,
            cursor: schedule.cursor(),
            attack: attack.copied(),
            seen: 0,
            frames: Vec::new(),
            regions: Vec::new(),
            setjmps: Vec::new(),
            next_uid: 0,
            out: RunOutcome::default(),
            attack_step: 0,
            scratch: Vec::new(),
        };
        let res = r.exec(entry_fn);
        let mut out = r.out;
        match res {
            Ok(()) => {
                r.close_all();
                if !out.attacked {
                    let left = r.cursor.count() as u64;
                    if left > 0 {
                        return Err(InterpError::ScheduleNotConsumed { left });
                    }
                }
                Ok(out)
            }
            Err(_) if out.attacked => {
                r.close_all();
                out.stopped_after_attack = true;
                Ok(out)
            }
            Err(e) => Err(e),
        }
    }
}

fn entry_function(cfg: &Cfg) -> Option<FuncId> {
    if cfg.func_entry.is_empty() {
        return None;
    }
    Some(cfg.func_name.iter().position(|n| n == "main").unwrap_or(0))
}

/// Signals the end of execution from deep inside a step.
enum Stop {
    Halt,
    Err(InterpError),
}

impl From<InterpError> for Stop {
    fn from(e: InterpError) -> Self {
        Stop::Err(e)
    }
}

struct Run<'r, 'a, S> {
    it: &'r Interpreter<'a>,
    sink: &'r mut S,
    cursor: ScheduleCursor<'r>,
    attack: Option<AttackSpec>,
    /// Dynamic occurrences of the attacked site so far.
    seen: u64,
    frames: Vec<Frame>,
    regions: Vec<Region>,
    /// (frame uid, frame depth, landing node) per executed setjmp.
    setjmps: Vec<(u64, usize, NodeId)>,
    next_uid: u64,
    out: RunOutcome,
    attack_step: u64,
    scratch: Vec<LoopId>,
}

impl<S: TraceSink> Run<'_, '_, S> {
    fn cfg(&self) -> &Cfg {
        self.it.cfg
    }

    fn emit(&mut self, e: EventRecord) {
        self.out.events += 1;
        self.sink.event(e);
    }

    fn depth(&self) -> usize {
        self.frames.len() - 1
    }

    fn exec(&mut self, entry_fn: FuncId) -> Result<(), InterpError> {
        let entry = self.cfg().func_entry[entry_fn];
        self.push_frame(entry_fn, None, false);
        self.enter_function(entry);
        let mut cur = entry;
        loop {
            match self.step(cur) {
                Ok(next) => cur = next,
                Err(Stop::Halt) => return Ok(()),
                Err(Stop::Err(e)) => return Err(e),
            }
        }
    }

    fn push_frame(&mut self, func: FuncId, ret_to: Option<NodeId>, rec_entry: bool) {
        self.next_uid += 1;
        self.frames.push(Frame { func, ret_to, rec_entry, uid: self.next_uid });
    }

    fn decide(&mut self, at: NodeId, candidates: &[NodeId]) -> Result<NodeId, InterpError> {
        let a = self.cfg().addrs[at];
        if candidates.len() == 1 {
            return Ok(candidates[0]);
        }
        let (src, dst) = self.cursor.next().ok_or(InterpError::ScheduleExhausted { at: a })?;
        if src != a {
            return Err(InterpError::ScheduleOutOfSync { at: a, expected: src });
        }
        match self.cfg().id(dst) {
            Some(d) if candidates.contains(&d) => Ok(d),
            _ => Err(InterpError::InvalidDecision { at: a, dst }),
        }
    }

    /// Applies the attack if this is the chosen occurrence of `at`.
    fn maybe_attack(&mut self, at: NodeId, dst: Address) -> Address {
        let Some(att) = self.attack else { return dst };
        if att.site != self.cfg().addrs[at] {
            return dst;
        }
        self.seen += 1;
        if self.seen != att.occurrence {
            return dst;
        }
        self.attack = None;
        self.out.attacked = true;
        self.attack_step = self.out.steps;
        att.forged_target
    }

    fn step(&mut self, cur: NodeId) -> Result<NodeId, Stop> {
        self.out.steps += 1;
        if self.out.steps > self.it.max_steps {
            return Err(InterpError::StepLimit(self.it.max_steps).into());
        }
        if self.out.attacked && self.out.steps - self.attack_step > POST_ATTACK_STEPS {
            return Err(InterpError::StepLimit(POST_ATTACK_STEPS).into());
        }
        let cfg = self.it.cfg;
        let here = cfg.addrs[cur];
        match &cfg.term[cur] {
            Terminator::Flow(succ) => {
                if succ.is_empty() {
                    return Err(Stop::Halt);
                }
                let next = self.decide(cur, succ)?;
                self.transition(next);
                Ok(next)
            }
            Terminator::Call { kind: CallKind::Longjmp, .. } => {
                let live = self.setjmps.iter().rev().find(|(uid, d, _)| {
                    self.frames.get(*d).map(|f| f.uid) == Some(*uid)
                });
                let (target_depth, land) = match live {
                    Some(&(_, d, n)) => (Some(d), Some(n)),
                    None => (None, None),
                };
                let real = land.map(|n| cfg.addrs[n]);
                let dst = match real {
                    Some(a) => self.maybe_attack(cur, a),
                    None => return Err(InterpError::LongjmpWithoutSetjmp { at: here }.into()),
                };
                self.emit(EventRecord::indirect_jump(here, dst));
                if Some(dst) != real {
                    return Err(Stop::Halt);
                }
                let (td, land) = (target_depth.unwrap(), land.unwrap());
                self.unwind_to(td);
                self.transition(land);
                Ok(land)
            }
            Terminator::Call { kind, callee, call_after, library } => {
                let (callee, ca) = (*callee, *call_after);
                if *library {
                    self.transition(ca);
                    return Ok(ca);
                }
                if *kind == CallKind::Setjmp {
                    let d = self.depth();
                    let uid = self.frames[d].uid;
                    while let Some(&(u, sd, _)) = self.setjmps.last() {
                        if self.frames.get(sd).map(|f| f.uid) == Some(u) && u != uid {
                            break;
                        }
                        self.setjmps.pop();
                    }
                    self.setjmps.push((uid, d, ca));
                }
                let rec_entry = self.it.inst.rec_entry_site[cur];
                if rec_entry {
                    self.regions.push(Region { kind: RegionKind::Rec(callee), depth: self.depth() + 1 });
                    self.sink.marker(Marker::RecEntry);
                }
                if self.it.skipped[cur] {
                    self.out.skipped_calls += 1;
                } else {
                    self.emit(EventRecord::direct_call(here));
                }
                self.push_frame(callee, Some(ca), rec_entry);
                let entry = cfg.func_entry[callee];
                self.enter_function(entry);
                Ok(entry)
            }
            Terminator::IndirectCall { targets, call_after } => {
                let chosen = self.decide(cur, targets)?;
                let dst = self.maybe_attack(cur, cfg.addrs[chosen]);
                self.emit(EventRecord::indirect_call(here, dst));
                let Some(t) = cfg.id(dst) else { return Err(Stop::Halt) };
                self.push_frame(cfg.func_of[t], Some(*call_after), false);
                self.enter_function(t);
                Ok(t)
            }
            Terminator::IndirectJump { targets } => {
                let chosen = self.decide(cur, targets)?;
                let dst = self.maybe_attack(cur, cfg.addrs[chosen]);
                self.emit(EventRecord::indirect_jump(here, dst));
                let Some(t) = cfg.id(dst) else { return Err(Stop::Halt) };
                self.frames.last_mut().unwrap().func = cfg.func_of[t];
                self.transition(t);
                Ok(t)
            }
            Terminator::Return { .. } => {
                let d = self.depth();
                let Some(ret_to) = self.frames[d].ret_to else {
                    return Err(InterpError::ReturnWithoutCaller { at: here }.into());
                };
                self.close_frame_loops(d);
                let func = self.frames[d].func;
                if matches!(self.regions.last(), Some(r) if r.kind == RegionKind::Rec(func)) {
                    self.sink.marker(Marker::RecReturn);
                }
                let dst = self.maybe_attack(cur, cfg.addrs[ret_to]);
                self.emit(EventRecord::ret(here, dst));
                let f = self.frames.pop().unwrap();
                if f.rec_entry {
                    self.pop_rec_region();
                }
                let Some(t) = cfg.id(dst) else { return Err(Stop::Halt) };
                if t != ret_to {
                    self.frames.last_mut().unwrap().func = cfg.func_of[t];
                }
                self.transition(t);
                Ok(t)
            }
        }
    }

    fn pop_rec_region(&mut self) {
        if matches!(self.regions.last(), Some(r) if matches!(r.kind, RegionKind::Rec(_))) {
            self.regions.pop();
            self.sink.marker(Marker::RecExit);
        }
    }

    fn enter_function(&mut self, entry: NodeId) {
        let func = self.cfg().func_of[entry];
        if matches!(self.regions.last(), Some(r) if r.kind == RegionKind::Rec(func)) {
            self.sink.marker(Marker::RecStart);
        }
        self.transition(entry);
    }

    fn close_frame_loops(&mut self, d: usize) {
        while matches!(self.regions.last(), Some(r) if r.depth == d && matches!(r.kind, RegionKind::Loop(_))) {
            self.regions.pop();
            self.sink.marker(Marker::LoopExit);
        }
    }

    /// Control moves to `v` inside the current frame.
    fn transition(&mut self, v: NodeId) {
        let d = self.depth();
        let inst = self.it.inst;
        while let Some(r) = self.regions.last() {
            match r.kind {
                RegionKind::Loop(l) if r.depth == d && !inst.contains(l, v) => {
                    self.regions.pop();
                    self.sink.marker(Marker::LoopExit);
                }
                _ => break,
            }
        }
        let mut open = 0;
        for r in self.regions.iter().rev() {
            match r.kind {
                RegionKind::Loop(l) if r.depth == d => {
                    if open == 0 && inst.header[l] == v {
                        self.sink.marker(Marker::BodyEnd);
                        self.sink.marker(Marker::BodyStart);
                    }
                    open += 1;
                }
                _ => break,
            }
        }
        if inst.innermost[v].is_none() {
            return;
        }
        let mut chain = std::mem::take(&mut self.scratch);
        inst.chain_into(v, &mut chain);
        if chain.len() > open {
            for &l in chain[..chain.len() - open].iter().rev() {
                self.regions.push(Region { kind: RegionKind::Loop(l), depth: d });
                self.sink.marker(Marker::LoopEntry);
                self.sink.marker(Marker::BodyStart);
            }
        }
        self.scratch = chain;
    }

    /// Pops frames above `target` (longjmp), closing their regions.
    fn unwind_to(&mut self, target: usize) {
        while self.frames.len() > target + 1 {
            let d = self.depth();
            self.close_frame_loops(d);
            let f = self.frames.pop().unwrap();
            if f.rec_entry {
                self.pop_rec_region();
            }
        }
    }

    fn close_all(&mut self) {
        while let Some(r) = self.regions.pop() {
            self.sink.marker(match r.kind {
                RegionKind::Loop(_) => Marker::LoopExit,
                RegionKind::Rec(_) => Marker::RecExit,
            });
        }
    }
}

/// Raw events of one run, with the given direct-call sites suppressed and no folding.
pub fn interpret(
    m: &ProgramModel,
    scs: &BTreeSet<Address>,
    schedule: &Schedule,
    attack: Option<&AttackSpec>,
) -> Result<Vec<EventRecord>, InterpError> {
    let cfg = Cfg::new(m);
    let inst = Instrumentation::none(&cfg);
    let mut sink = RawEvents::default();
    Interpreter::new(&cfg, &inst, scs).run(schedule, attack, &mut sink)?;
    Ok(sink.0)
}
