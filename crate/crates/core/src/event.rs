//! Runtime control-flow events and the structural markers the interpreter
//! interleaves with them.

use std::fmt;

use crate::address::Address;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EventKind {
    IndirectCall,
    IndirectJump,
    Return,
    /// Encoded by call site only; the target of a direct call cannot be forged.
    DirectCall,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::IndirectCall => "icall",
            EventKind::IndirectJump => "ijmp",
            EventKind::Return => "ret",
            EventKind::DirectCall => "dcall",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EventRecord {
    pub kind: EventKind,
    pub src: Address,
    /// Absent exactly for direct calls.
    pub dst: Option<Address>,
}

impl EventRecord {
    pub fn direct_call(site: Address) -> Self {
        EventRecord { kind: EventKind::DirectCall, src: site, dst: None }
    }
    pub fn indirect_call(site: Address, target: Address) -> Self {
        EventRecord { kind: EventKind::IndirectCall, src: site, dst: Some(target) }
    }
    pub fn indirect_jump(site: Address, target: Address) -> Self {
        EventRecord { kind: EventKind::IndirectJump, src: site, dst: Some(target) }
    }
    pub fn ret(site: Address, target: Address) -> Self {
        EventRecord { kind: EventKind::Return, src: site, dst: Some(target) }
    }

    /// What survives on the wire: pair events lose their kind.
    pub fn wire(&self) -> WireEvent {
        match self.dst {
            None => WireEvent::Call(self.src),
            Some(d) => WireEvent::Pair(self.src, d),
        }
    }
}

impl fmt::Display for EventRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.dst {
            Some(d) => write!(f, "ev {} {} {}", self.kind.as_str(), self.src, d),
            None => write!(f, "ev {} {}", self.kind.as_str(), self.src),
        }
    }
}

/// An event as carried in a report: a direct-call site, or a (source, target) pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum WireEvent {
    Call(Address),
    Pair(Address, Address),
}

impl WireEvent {
    pub fn src(&self) -> Address {
        match *self {
            WireEvent::Call(s) | WireEvent::Pair(s, _) => s,
        }
    }
}

/// Instrumentation points crossed by the interpreter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Marker {
    /// ℓe
    LoopEntry,
    /// ℓs
    BodyStart,
    /// ℓd
    BodyEnd,
    /// ℓx
    LoopExit,
    /// re
    RecEntry,
    /// rs
    RecStart,
    /// rd
    RecReturn,
    /// rx
    RecExit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceItem {
    Event(EventRecord),
    Marker(Marker),
}

/// Receives the interpreter's output in execution order.
pub trait TraceSink {
    fn event(&mut self, e: EventRecord);
    fn marker(&mut self, m: Marker);
}

impl TraceSink for Vec<TraceItem> {
    fn event(&mut self, e: EventRecord) {
        self.push(TraceItem::Event(e));
    }
    fn marker(&mut self, m: Marker) {
        self.push(TraceItem::Marker(m));
    }
}

/// Keeps the raw event sequence, dropping markers.
#[derive(Debug, Default, Clone)]
pub struct RawEvents(pub Vec<EventRecord>);

impl TraceSink for RawEvents {
    fn event(&mut self, e: EventRecord) {
        self.0.push(e);
    }
    fn marker(&mut self, _: Marker) {}
}

/// Counts events without storing them.
#[derive(Debug, Default, Clone, Copy)]
pub struct EventCounter(pub u64);

impl TraceSink for EventCounter {
    fn event(&mut self, _: EventRecord) {
        self.0 += 1;
    }
    fn marker(&mut self, _: Marker) {}
}

pub struct Tee<'a, A, B>(pub &'a mut A, pub &'a mut B);

impl<A: TraceSink, B: TraceSink> TraceSink for Tee<'_, A, B> {
    fn event(&mut self, e: EventRecord) {
        self.0.event(e);
        self.1.event(e);
    }
    fn marker(&mut self, m: Marker) {
        self.0.marker(m);
        self.1.marker(m);
    }
}

/// One `ev ...` line per event.
pub fn dump_events(events: &[EventRecord]) -> String {
    let mut s = String::with_capacity(events.len() * 24);
    for e in events {
        s.push_str(&e.to_string());
        s.push('\n');
    }
    s
}
