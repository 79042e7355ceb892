//! Online folding of loop iterations and recursion activations.
//!
//! Frames live in one flat buffer. The stack holds ⊥ separators and the
//! buffer offsets where frames start; a frame ends where the next one starts.
//! Closed frames of each region are bucketed by hash so a repeat is found
//! without scanning every sibling; equality is still decided on the events.

use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::hash::{Hash, Hasher};

use thiserror::Error;

use crate::event::{EventRecord, Marker, TraceItem, TraceSink};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FoldError {
    #[error("marker imbalance: {0}")]
    Imbalance(&'static str),
}

#[derive(Debug, Default, Clone)]
pub struct FoldState {
    buf: Vec<EventRecord>,
    /// `None` is ⊥, `Some(i)` a frame starting at `buf[i]`.
    stack: Vec<Option<usize>>,
    /// One map per ⊥ on the stack: hash of a closed frame -> its (start, end).
    closed: Vec<HashMap<u64, Vec<(usize, usize)>>>,
    error: Option<FoldError>,
    raw_count: u64,
}

impl FoldState {
    pub fn new() -> Self {
        FoldState::default()
    }

    /// Events seen so far, before folding.
    pub fn raw_count(&self) -> u64 {
        self.raw_count
    }

    pub fn folded(&self) -> &[EventRecord] {
        &self.buf
    }

    pub fn depth(&self) -> usize {
        self.stack.len()
    }

    /// Closes the top frame, dropping it if it repeats a frame above the top-most ⊥.
    fn dedup_top(&mut self) {
        let Some(Some(top)) = self.stack.last().copied() else { return };
        let Some(level) = self.closed.last_mut() else { return };
        let cur = &self.buf[top..];
        let mut h = DefaultHasher::new();
        cur.hash(&mut h);
        let bucket = level.entry(h.finish()).or_default();
        if bucket.iter().any(|&(s, e)| &self.buf[s..e] == cur) {
            self.buf.truncate(top);
            self.stack.pop();
        } else {
            bucket.push((top, self.buf.len()));
        }
    }

    fn pop_region(&mut self) {
        loop {
            match self.stack.pop() {
                Some(None) => {
                    self.closed.pop();
                    return;
                }
                Some(Some(_)) => continue,
                None => {
                    self.fail(FoldError::Imbalance("region exit without entry"));
                    return;
                }
            }
        }
    }

    fn fail(&mut self, e: FoldError) {
        if self.error.is_none() {
            self.error = Some(e);
        }
    }

    pub fn apply(&mut self, m: Marker) {
        match m {
            Marker::LoopEntry | Marker::RecEntry => {
                self.stack.push(None);
                self.closed.push(HashMap::new());
            }
            Marker::BodyStart => {
                if self.stack.is_empty() {
                    self.fail(FoldError::Imbalance("body start outside a region"));
                }
                self.stack.push(Some(self.buf.len()));
            }
            Marker::BodyEnd => {
                if !matches!(self.stack.last(), Some(Some(_))) {
                    self.fail(FoldError::Imbalance("body end without an open body"));
                    return;
                }
                self.dedup_top();
            }
            Marker::RecStart | Marker::RecReturn => {
                if self.stack.is_empty() {
                    self.fail(FoldError::Imbalance("checkpoint outside a recursion"));
                    return;
                }
                self.dedup_top();
                self.stack.push(Some(self.buf.len()));
            }
            Marker::LoopExit | Marker::RecExit => self.pop_region(),
        }
    }

    pub fn finish(self) -> Result<Vec<EventRecord>, FoldError> {
        if let Some(e) = self.error {
            return Err(e);
        }
        if !self.stack.is_empty() {
            return Err(FoldError::Imbalance("unclosed region at end of stream"));
        }
        Ok(self.buf)
    }
}

impl TraceSink for FoldState {
    fn event(&mut self, e: EventRecord) {
        self.raw_count += 1;
        self.buf.push(e);
    }
    fn marker(&mut self, m: Marker) {
        self.apply(m);
    }
}

pub fn fold_stream(items: &[TraceItem]) -> Result<Vec<EventRecord>, FoldError> {
    let mut st = FoldState::new();
    for it in items {
        match *it {
            TraceItem::Event(e) => st.event(e),
            TraceItem::Marker(m) => st.marker(m),
        }
    }
    st.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::address::addr;
    use Marker::*;

    fn ev(s: u64, d: u64) -> TraceItem {
        TraceItem::Event(EventRecord::indirect_call(addr(s), addr(d)))
    }
    fn mk(m: Marker) -> TraceItem {
        TraceItem::Marker(m)
    }

    #[test]
    fn repeated_iterations_collapse() {
        let mut s = vec![mk(LoopEntry), mk(BodyStart)];
        for i in 0..5 {
            s.push(ev(1, 2 + (i % 2)));
            s.push(mk(BodyEnd));
            s.push(mk(BodyStart));
        }
        s.push(mk(LoopExit));
        let out = fold_stream(&s).unwrap();
        assert_eq!(out.len(), 2);
    }

    #[test]
    fn imbalance_is_an_error() {
        assert!(fold_stream(&[mk(LoopExit)]).is_err());
        assert!(fold_stream(&[mk(LoopEntry)]).is_err());
        assert!(fold_stream(&[mk(BodyEnd)]).is_err());
    }

    #[test]
    fn nested_region_merges_into_outer_frame() {
        let s = vec![
            mk(LoopEntry),
            mk(BodyStart),
            ev(1, 2),
            mk(LoopEntry),
            mk(BodyStart),
            ev(3, 4),
            mk(BodyEnd),
            mk(BodyStart),
            ev(3, 4),
            mk(BodyEnd),
            mk(BodyStart),
            mk(LoopExit),
            mk(BodyEnd),
            mk(BodyStart),
            ev(1, 2),
            mk(LoopEntry),
            mk(BodyStart),
            ev(3, 4),
            mk(BodyEnd),
            mk(BodyStart),
            mk(LoopExit),
            mk(BodyEnd),
            mk(BodyStart),
            mk(LoopExit),
        ];
        let out = fold_stream(&s).unwrap();
        assert_eq!(out.len(), 2);
    }
}
