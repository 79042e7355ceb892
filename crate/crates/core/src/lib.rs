//! Control-flow attestation over program models: call-site filtering,
//! loop and recursion folding, greedy compression and shadow-stack checking.

pub mod address;
pub mod cfg;
pub mod condenser;
pub mod corpus;
pub mod event;
pub mod filter;
pub mod fold;
pub mod interp;
pub mod loops;
pub mod model;
pub mod pipeline;
pub mod policy;
pub mod recursion;
pub mod schedule;
pub mod verifier;

pub use address::{Address, AddressError};
pub use condenser::{CondenseError, Compressor, Token};
pub use event::{EventKind, EventRecord, Marker, TraceItem, TraceSink, WireEvent};
pub use filter::{AbstractGraph, AbstractKind, AbstractNode, SkipKey, SkipMap};
pub use fold::{fold_stream, FoldError, FoldState};
pub use interp::{interpret, AttackSpec, InterpError, Instrumentation, Interpreter};
pub use loops::{LoopForest, LoopInfo};
pub use model::{load_model, serialize_model, EdgeKind, ModelError, ProgramModel};
pub use pipeline::{analyze, attest, verify_report, Analysis, AttestOptions, Attestation, BenchReport, PipelineError};
pub use policy::{ForwardEntry, ForwardMap};
pub use recursion::RecursionInfo;
pub use schedule::Schedule;
pub use verifier::{enforce, expand_skipped, splice_skipped, EnforceOptions, Rule, Status, Verdict, Violation};
