//! End-to-end helpers: offline analysis, attestation on the prover side and
//! report checking on the verifier side, with the timings the benchmarks use.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::time::Instant;

use thiserror::Error;

use crate::address::Address;
use crate::cfg::{CallKind, Cfg, Terminator};
use crate::condenser::{
    encode_tokens, greedy_compress, knot_expand, seal, unseal, CondenseError, Compressor, ReportHeader, Token,
    UnsealLimits,
};
use crate::event::{EventRecord, RawEvents, Tee, WireEvent};
use crate::filter::{build_abstract_graph_in, build_skip_map, compute_skippable, AbstractGraph, PolicyParseError, SkipMap};
use crate::fold::{FoldError, FoldState};
use crate::interp::{AttackSpec, InterpError, Instrumentation, Interpreter, RunOutcome};
use crate::loops::{detect_loops_in, LoopForest};
use crate::model::{ModelError, ProgramModel};
use crate::policy::{build_forward_map_in, ForwardMap};
use crate::recursion::{classify_foldability_in, detect_direct_recursion_in, RecursionInfo, DEFAULT_DEPTH_LIMIT};
use crate::schedule::Schedule;
use crate::verifier::{enforce, EnforceOptions, Verdict, VerifyError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Policy(#[from] PolicyParseError),
    #[error(transparent)]
    Interp(#[from] InterpError),
    #[error(transparent)]
    Fold(#[from] FoldError),
    #[error(transparent)]
    Condense(#[from] CondenseError),
    #[error(transparent)]
    Verify(#[from] VerifyError),
}

/// Everything the offline phase derives from a model.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub model: ProgramModel,
    pub cfg: Cfg,
    pub graph: AbstractGraph,
    pub scs: BTreeSet<Address>,
    pub skip_map: SkipMap,
    pub forward_map: ForwardMap,
    pub loops: LoopForest,
    pub recursions: Vec<RecursionInfo>,
    pub instrumentation: Instrumentation,
    /// Direct (and setjmp) call sites to non-library functions.
    pub direct_call_sites: usize,
}

pub fn analyze(model: ProgramModel) -> Analysis {
    analyze_with(model, DEFAULT_DEPTH_LIMIT)
}

pub fn analyze_with(model: ProgramModel, depth_limit: usize) -> Analysis {
    let cfg = Cfg::new(&model);
    let graph = build_abstract_graph_in(&cfg);
    let scs = compute_skippable(&graph);
    let skip_map = build_skip_map(&graph, &scs);
    let forward_map = build_forward_map_in(&cfg, &scs);
    let loops = detect_loops_in(&cfg);
    let recursions: Vec<RecursionInfo> = detect_direct_recursion_in(&cfg)
        .iter()
        .map(|r| classify_foldability_in(&cfg, r, depth_limit))
        .collect();
    let instrumentation = Instrumentation::new(&cfg, &loops, &recursions);
    let direct_call_sites = cfg
        .term
        .iter()
        .filter(|t| matches!(t, Terminator::Call { kind: CallKind::Direct | CallKind::Setjmp, library: false, .. }))
        .count();
    Analysis { model, cfg, graph, scs, skip_map, forward_map, loops, recursions, instrumentation, direct_call_sites }
}

impl Analysis {
    /// Skipped direct call sites over all direct call sites (0 without any).
    pub fn reduction(&self) -> f64 {
        if self.direct_call_sites == 0 {
            0.0
        } else {
            self.scs.len() as f64 / self.direct_call_sites as f64
        }
    }

    pub fn scs_text(&self) -> String {
        self.scs.iter().map(|a| format!("{a}\n")).collect()
    }

    /// Human-readable summary of the loops, recursions and call-site filtering.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "direct-calls {} skipped {} reduction {:.4}",
            self.direct_call_sites,
            self.scs.len(),
            self.reduction()
        );
        let _ = writeln!(s, "abstract-nodes {}", self.graph.nodes.len());
        for l in &self.loops.loops {
            let set = |v: &BTreeSet<Address>| v.iter().map(|a| a.to_string()).collect::<Vec<_>>().join(",");
            let _ = writeln!(
                s,
                "loop {} func {} header {} entries {} latches {} exits {} parent {}",
                l.id,
                l.function,
                l.body_start,
                set(&l.entry_points),
                set(&l.body_ends),
                set(&l.exit_points),
                l.parent.map(|p| p.to_string()).unwrap_or_else(|| "-".into())
            );
        }
        for a in &self.loops.irreducible {
            let _ = writeln!(s, "irreducible {a}");
        }
        for r in &self.recursions {
            let _ = writeln!(
                s,
                "recursion {} start {} foldable {}",
                r.function,
                r.start,
                if r.foldable { "yes" } else { "no" }
            );
        }
        s
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AttestOptions {
    pub bound: u32,
    pub compressor: Compressor,
    pub fold: bool,
    /// Suppress skippable direct calls.
    pub filter: bool,
    /// Keep the raw (unfolded) events as well.
    pub keep_raw: bool,
    pub max_steps: u64,
}

impl Default for AttestOptions {
    fn default() -> Self {
        AttestOptions {
            bound: crate::condenser::DEFAULT_BOUND,
            compressor: Compressor::Store,
            fold: true,
            filter: true,
            keep_raw: false,
            max_steps: crate::interp::DEFAULT_MAX_STEPS,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Attestation {
    pub outcome: RunOutcome,
    pub raw: Option<Vec<EventRecord>>,
    pub folded: Vec<EventRecord>,
    pub tokens: Vec<Token>,
    pub report: Vec<u8>,
    /// Events the program produced, skipped calls included.
    pub ev_total: u64,
    pub ev_fold: u64,
    /// Tokens after greedy compression (events plus knots).
    pub ev_gr: u64,
    pub t_instr: f64,
    pub t_gr: f64,
}

pub fn attest(
    a: &Analysis,
    schedule: &Schedule,
    attack: Option<&AttackSpec>,
    opts: &AttestOptions,
) -> Result<Attestation, PipelineError> {
    let none;
    let inst = if opts.fold {
        &a.instrumentation
    } else {
        none = Instrumentation::none(&a.cfg);
        &none
    };
    let empty = BTreeSet::new();
    let scs = if opts.filter { &a.scs } else { &empty };
    let mut interp = Interpreter::new(&a.cfg, inst, scs);
    interp.max_steps = opts.max_steps;

    let t0 = Instant::now();
    let mut fold = FoldState::new();
    let (outcome, raw) = if opts.keep_raw {
        let mut raw = RawEvents::default();
        let o = interp.run(schedule, attack, &mut Tee(&mut fold, &mut raw))?;
        (o, Some(raw.0))
    } else {
        (interp.run(schedule, attack, &mut fold)?, None)
    };
    let folded = fold.finish()?;
    let t_instr = t0.elapsed().as_secs_f64();

    let t1 = Instant::now();
    let wire: Vec<WireEvent> = folded.iter().map(EventRecord::wire).collect();
    let tokens = greedy_compress(&wire, opts.bound)?;
    let words = encode_tokens(&tokens);
    let report = seal(&words, opts.compressor, opts.bound as u8, folded.len() as u64);
    let t_gr = t1.elapsed().as_secs_f64();

    Ok(Attestation {
        ev_total: outcome.events + outcome.skipped_calls,
        ev_fold: folded.len() as u64,
        ev_gr: tokens.len() as u64,
        outcome,
        raw,
        folded,
        tokens,
        report,
        t_instr,
        t_gr,
    })
}

#[derive(Debug, Clone)]
pub struct Verification {
    pub verdict: Verdict,
    pub header: ReportHeader,
    pub events: Vec<WireEvent>,
    /// Unseal and knot expansion.
    pub t_gr_inverse: f64,
    pub t_vrf: f64,
}

pub fn verify_report(
    bytes: &[u8],
    f: &ForwardMap,
    m: &SkipMap,
    opts: &EnforceOptions,
    limits: &UnsealLimits,
) -> Result<Verification, PipelineError> {
    let t0 = Instant::now();
    let r = unseal(bytes, limits)?;
    let events = knot_expand(&r.tokens, limits.max_events)?;
    let t_gr_inverse = t0.elapsed().as_secs_f64();
    let t1 = Instant::now();
    let verdict = enforce(&events, f, m, opts)?;
    let t_vrf = t1.elapsed().as_secs_f64();
    Ok(Verification { verdict, header: r.header, events, t_gr_inverse, t_vrf })
}

/// Raw measurements of one attest/verify round; the ratios are derived on demand.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub name: String,
    pub ev_total: u64,
    pub ev_fold: u64,
    pub ev_gr: u64,
    pub t_instr: f64,
    pub t_gr: f64,
    pub t_gr_inverse: f64,
    pub t_vrf: f64,
    /// Report size in bytes.
    pub zs: u64,
}

fn ratio(a: f64, b: f64) -> f64 {
    if b > 0.0 {
        a / b
    } else {
        0.0
    }
}

impl BenchReport {
    pub fn from_runs(name: &str, att: &Attestation, ver: &Verification) -> Self {
        BenchReport {
            name: name.to_string(),
            ev_total: att.ev_total,
            ev_fold: att.ev_fold,
            ev_gr: att.ev_gr,
            t_instr: att.t_instr,
            t_gr: att.t_gr,
            t_gr_inverse: ver.t_gr_inverse,
            t_vrf: ver.t_vrf,
            zs: att.report.len() as u64,
        }
    }

    pub fn event_reduction(&self) -> f64 {
        ratio(self.ev_total as f64 - self.ev_gr as f64, self.ev_total as f64)
    }

    pub fn e_speed(&self) -> f64 {
        ratio(self.ev_total as f64, self.t_instr + self.t_gr)
    }

    pub fn d_speed(&self) -> f64 {
        ratio(self.zs as f64, self.t_instr + self.t_gr)
    }

    pub fn verification_speed(&self) -> f64 {
        ratio(self.ev_fold as f64, self.t_gr_inverse + self.t_vrf)
    }

    /// Compression rate R.
    pub fn compression_rate(&self) -> f64 {
        ratio(self.ev_fold as f64, self.ev_gr as f64)
    }

    pub const HEADER: &'static str =
        "name ev_total ev_fold ev_gr reduction R T_instr T_gr T_gr_inv T_vrf Zs E-speed D-speed V-speed";

    pub fn to_line(&self) -> String {
        format!(
            "{} {} {} {} {:.4} {:.4} {:.6} {:.6} {:.6} {:.6} {} {:.0} {:.0} {:.0}",
            self.name,
            self.ev_total,
            self.ev_fold,
            self.ev_gr,
            self.event_reduction(),
            self.compression_rate(),
            self.t_instr,
            self.t_gr,
            self.t_gr_inverse,
            self.t_vrf,
            self.zs,
            self.e_speed(),
            self.d_speed(),
            self.verification_speed()
        )
    }
}
