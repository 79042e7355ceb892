//! The forward-edge mapping F: call site ↦ (call-after point, valid targets).

use std::collections::{BTreeMap, BTreeSet};

use crate::address::Address;
use crate::cfg::{CallKind, Cfg, Terminator};
use crate::filter::PolicyParseError;
use crate::model::ProgramModel;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ForwardEntry {
    /// `None` (⊥) for indirect jumps.
    pub ca: Option<Address>,
    /// Empty for direct calls.
    pub tgts: BTreeSet<Address>,
}

impl ForwardEntry {
    pub fn is_direct_call(&self) -> bool {
        self.ca.is_some() && self.tgts.is_empty()
    }
    pub fn is_indirect_call(&self) -> bool {
        self.ca.is_some() && !self.tgts.is_empty()
    }
    pub fn is_jump(&self) -> bool {
        self.ca.is_none()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ForwardMap {
    pub entries: BTreeMap<Address, ForwardEntry>,
}

/// Skipped sites keep their entries: the verifier pushes their call-after
/// points when it replays them. `scs` is accepted for interface symmetry.
/// `longjmp` sites are jump-like with every setjmp return point as a target.
pub fn build_forward_map(m: &ProgramModel, scs: &BTreeSet<Address>) -> ForwardMap {
    build_forward_map_in(&Cfg::new(m), scs)
}

pub fn build_forward_map_in(cfg: &Cfg, _scs: &BTreeSet<Address>) -> ForwardMap {
    let mut f = ForwardMap::default();
    let setjmp_points: BTreeSet<Address> = cfg.setjmp_return_points().into_iter().map(|n| cfg.addrs[n]).collect();
    for (n, t) in cfg.term.iter().enumerate() {
        let cs = cfg.addrs[n];
        let entry = match t {
            Terminator::Call { library: true, .. } => continue,
            Terminator::Call { kind: CallKind::Longjmp, .. } => ForwardEntry { ca: None, tgts: setjmp_points.clone() },
            Terminator::Call { call_after, .. } => ForwardEntry { ca: Some(cfg.addrs[*call_after]), tgts: BTreeSet::new() },
            Terminator::IndirectCall { targets, call_after } => ForwardEntry {
                ca: Some(cfg.addrs[*call_after]),
                tgts: targets.iter().map(|&t| cfg.addrs[t]).collect(),
            },
            Terminator::IndirectJump { targets } => {
                ForwardEntry { ca: None, tgts: targets.iter().map(|&t| cfg.addrs[t]).collect() }
            }
            _ => continue,
        };
        f.entries.insert(cs, entry);
    }
    f
}

impl ForwardMap {
    pub fn get(&self, cs: Address) -> Option<&ForwardEntry> {
        self.entries.get(&cs)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `fwd <cs> <ca|-> <tgt>*`, sorted by call site.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (cs, e) in &self.entries {
            out.push_str(&format!("fwd {cs} "));
            match e.ca {
                Some(ca) => out.push_str(&ca.to_string()),
                None => out.push('-'),
            }
            for t in &e.tgts {
                out.push_str(&format!(" {t}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<ForwardMap, PolicyParseError> {
        let mut f = ForwardMap::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: &str| PolicyParseError::Line { line: i + 1, msg: msg.to_string() };
            let t: Vec<&str> = line.split_whitespace().collect();
            if t[0] != "fwd" || t.len() < 3 {
                return Err(err("expected `fwd <cs> <ca|-> <tgt>*`"));
            }
            let hex = |s: &str| Address::parse_hex(s).map_err(|e| err(&e.to_string()));
            let cs = hex(t[1])?;
            let ca = if t[2] == "-" { None } else { Some(hex(t[2])?) };
            let tgts = t[3..].iter().map(|s| hex(s)).collect::<Result<BTreeSet<_>, _>>()?;
            if f.entries.insert(cs, ForwardEntry { ca, tgts }).is_some() {
                return Err(err("duplicate call site"));
            }
        }
        Ok(f)
    }
}
