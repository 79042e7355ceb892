//! Shadow-stack enforcement over a recovered event stream.

use std::collections::HashSet;
use std::fmt;

use thiserror::Error;

use crate::address::Address;
use crate::event::{EventKind, EventRecord, WireEvent};
use crate::filter::{SkipKey, SkipMap};
use crate::policy::ForwardMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Rule {
    ForwardTarget,
    BackwardReturn,
    UnknownSite,
    StackUnderflow,
}

impl Rule {
    pub fn as_str(self) -> &'static str {
        match self {
            Rule::ForwardTarget => "forward-target",
            Rule::BackwardReturn => "backward-return",
            Rule::UnknownSite => "unknown-site",
            Rule::StackUnderflow => "stack-underflow",
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    /// Position in the stream after skipped calls are spliced back in.
    pub index: usize,
    pub event: EventRecord,
    pub rule: Rule,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let dst = self.event.dst.map(|d| d.to_string()).unwrap_or_else(|| "-".into());
        write!(f, "viol {} {} {} {}", self.index, self.rule, self.event.src, dst)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Secure,
    Violation,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Verdict {
    pub status: Status,
    pub violations: Vec<Violation>,
    /// Events checked, skipped calls included.
    pub checked: usize,
    /// Skipped calls put back from the skip map.
    pub recovered: usize,
}

impl Verdict {
    pub fn is_secure(&self) -> bool {
        self.status == Status::Secure
    }

    /// Status line followed by one `viol` line per violation.
    pub fn to_text(&self) -> String {
        let mut s = String::from(match self.status {
            Status::Secure => "SECURE\n",
            Status::Violation => "VIOLATION\n",
        });
        for v in &self.violations {
            s.push_str(&v.to_string());
            s.push('\n');
        }
        s
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum VerifyError {
    #[error("shadow stack exceeded {0} entries")]
    DepthLimit(usize),
}

#[derive(Debug, Clone, Copy, Default)]
pub struct EnforceOptions {
    pub abort_on_first: bool,
    pub max_depth: Option<usize>,
}

#[derive(Debug, Clone, Default)]
pub struct ShadowStack {
    items: Vec<Address>,
    max_depth: Option<usize>,
}

impl ShadowStack {
    pub fn new(max_depth: Option<usize>) -> Self {
        ShadowStack { items: Vec::new(), max_depth }
    }

    pub fn push(&mut self, a: Address) -> Result<(), VerifyError> {
        if let Some(m) = self.max_depth {
            if self.items.len() >= m {
                return Err(VerifyError::DepthLimit(m));
            }
        }
        self.items.push(a);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Pops down to and including the topmost `target`. On a miss the stack is left as is.
    pub fn pop_until(&mut self, target: Address) -> Option<usize> {
        let pos = self.items.iter().rposition(|&a| a == target)?;
        let dropped = self.items.len() - 1 - pos;
        self.items.truncate(pos);
        Some(dropped)
    }
}

/// Direct-call sites skipped right after `e`, in execution order.
///
/// The first lookup uses the event's target, or its site for a direct call;
/// each recovered site is then looked up in turn. Keys produced by the
/// analysis have one value each; for a hand-written map with several, the
/// first is taken. `_next` is accepted so callers can pass the following
/// event, but a functional map never needs it.
pub fn expand_skipped(e: &WireEvent, _next: Option<&WireEvent>, m: &SkipMap) -> Vec<Address> {
    let mut out = Vec::new();
    if m.is_empty() {
        return out;
    }
    let mut key = match *e {
        WireEvent::Call(s) => SkipKey::site(s),
        WireEvent::Pair(_, d) => SkipKey::target(d),
    };
    let mut seen = HashSet::new();
    while let Some(&v) = m.get(key).first() {
        if !seen.insert(v) {
            break;
        }
        out.push(v);
        key = SkipKey::site(v);
    }
    out
}

/// The stream with every skipped call put back after the event that implies it.
pub fn splice_skipped(events: &[WireEvent], m: &SkipMap) -> Vec<WireEvent> {
    let mut out = Vec::with_capacity(events.len());
    for (i, e) in events.iter().enumerate() {
        out.push(*e);
        out.extend(expand_skipped(e, events.get(i + 1), m).into_iter().map(WireEvent::Call));
    }
    out
}

/// Kind of a wire event as the forward map sees it.
pub fn classify(e: &WireEvent, f: &ForwardMap) -> EventRecord {
    match *e {
        WireEvent::Call(s) => EventRecord::direct_call(s),
        WireEvent::Pair(s, d) => match f.get(s) {
            Some(fe) if fe.is_jump() => EventRecord::indirect_jump(s, d),
            Some(_) => EventRecord::indirect_call(s, d),
            None => EventRecord::ret(s, d),
        },
    }
}

pub fn enforce(events: &[WireEvent], f: &ForwardMap, m: &SkipMap, opts: &EnforceOptions) -> Result<Verdict, VerifyError> {
    let mut st = Enforcer { f, stack: ShadowStack::new(opts.max_depth), violations: Vec::new(), index: 0 };
    let mut recovered = 0;
    'outer: for (i, e) in events.iter().enumerate() {
        st.check(e)?;
        if opts.abort_on_first && !st.violations.is_empty() {
            break;
        }
        for s in expand_skipped(e, events.get(i + 1), m) {
            recovered += 1;
            st.check(&WireEvent::Call(s))?;
            if opts.abort_on_first && !st.violations.is_empty() {
                break 'outer;
            }
        }
    }
    let status = if st.violations.is_empty() { Status::Secure } else { Status::Violation };
    Ok(Verdict { status, violations: st.violations, checked: st.index, recovered })
}

struct Enforcer<'a> {
    f: &'a ForwardMap,
    stack: ShadowStack,
    violations: Vec<Violation>,
    index: usize,
}

impl Enforcer<'_> {
    fn flag(&mut self, event: EventRecord, rule: Rule, detail: String) {
        self.violations.push(Violation { index: self.index, event, rule, detail });
    }

    fn check(&mut self, e: &WireEvent) -> Result<(), VerifyError> {
        let rec = classify(e, self.f);
        match rec.kind {
            EventKind::DirectCall => match self.f.get(rec.src) {
                Some(fe) if fe.is_direct_call() => self.stack.push(fe.ca.unwrap())?,
                _ => self.flag(rec, Rule::UnknownSite, "no direct call at this site".into()),
            },
            EventKind::IndirectCall | EventKind::IndirectJump => {
                let fe = self.f.get(rec.src).unwrap();
                let d = rec.dst.unwrap();
                if fe.is_direct_call() {
                    self.flag(rec, Rule::UnknownSite, "direct call site reported with a target".into());
                } else if !fe.tgts.contains(&d) {
                    self.flag(rec, Rule::ForwardTarget, format!("{d} is not a valid target"));
                }
                if let Some(ca) = fe.ca {
                    self.stack.push(ca)?;
                }
            }
            EventKind::Return => {
                let d = rec.dst.unwrap();
                if self.stack.is_empty() {
                    self.flag(rec, Rule::StackUnderflow, "return with an empty shadow stack".into());
                } else if self.stack.pop_until(d).is_none() {
                    self.flag(rec, Rule::BackwardReturn, format!("{d} is not on the shadow stack"));
                }
            }
        }
        self.index += 1;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::address::addr;
    use crate::policy::ForwardEntry;
    use std::collections::BTreeSet;

    fn fmap(entries: &[(u64, Option<u64>, &[u64])]) -> ForwardMap {
        let mut f = ForwardMap::default();
        for &(cs, ca, t) in entries {
            f.entries.insert(
                addr(cs),
                ForwardEntry { ca: ca.map(addr), tgts: t.iter().map(|&x| addr(x)).collect::<BTreeSet<_>>() },
            );
        }
        f
    }

    #[test]
    fn longjmp_pops_bypassed_frames() {
        let f = fmap(&[(0x1, Some(0xa), &[]), (0x2, Some(0xb), &[]), (0x3, Some(0xc), &[])]);
        let ev = [WireEvent::Call(addr(1)), WireEvent::Call(addr(2)), WireEvent::Call(addr(3)), WireEvent::Pair(addr(0x50), addr(0xa))];
        let v = enforce(&ev, &f, &SkipMap::default(), &EnforceOptions::default()).unwrap();
        assert!(v.is_secure());
    }

    #[test]
    fn underflow_and_forward() {
        let f = fmap(&[(0x1, Some(0xa), &[0x100])]);
        let ev = [WireEvent::Pair(addr(0x50), addr(0xa)), WireEvent::Pair(addr(1), addr(0x200)), WireEvent::Call(addr(9))];
        let v = enforce(&ev, &f, &SkipMap::default(), &EnforceOptions::default()).unwrap();
        let rules: Vec<Rule> = v.violations.iter().map(|x| x.rule).collect();
        assert_eq!(rules, vec![Rule::StackUnderflow, Rule::ForwardTarget, Rule::UnknownSite]);
        assert_eq!(v.violations[1].to_string(), "viol 1 forward-target 1 200");
        let v = enforce(&ev, &f, &SkipMap::default(), &EnforceOptions { abort_on_first: true, max_depth: None }).unwrap();
        assert_eq!(v.violations.len(), 1);
    }

    #[test]
    fn missing_return_target_keeps_stack() {
        let f = fmap(&[(0x1, Some(0xa), &[])]);
        let ev = [WireEvent::Call(addr(1)), WireEvent::Pair(addr(0x50), addr(0xbad)), WireEvent::Pair(addr(0x50), addr(0xa))];
        let v = enforce(&ev, &f, &SkipMap::default(), &EnforceOptions::default()).unwrap();
        assert_eq!(v.violations.len(), 1);
        assert_eq!(v.violations[0].rule, Rule::BackwardReturn);
    }

    #[test]
    fn depth_limit() {
        let f = fmap(&[(0x1, Some(0xa), &[])]);
        let ev = vec![WireEvent::Call(addr(1)); 5];
        let opts = EnforceOptions { abort_on_first: false, max_depth: Some(3) };
        assert_eq!(enforce(&ev, &f, &SkipMap::default(), &opts).unwrap_err(), VerifyError::DepthLimit(3));
    }

    #[test]
    fn expansion_follows_chains_and_stops_on_cycles() {
        let mut m = SkipMap::default();
        m.insert(SkipKey::target(addr(0x104)), addr(0x108));
        m.insert(SkipKey::site(addr(0x108)), addr(0x200));
        m.insert(SkipKey::site(addr(0x200)), addr(0x108));
        let got = expand_skipped(&WireEvent::Pair(addr(0x180), addr(0x104)), None, &m);
        assert_eq!(got, vec![addr(0x108), addr(0x200)]);
        assert!(expand_skipped(&WireEvent::Pair(addr(0x180), addr(0x999)), None, &m).is_empty());
    }
}
