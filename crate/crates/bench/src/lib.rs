//! Criterion benchmarks for the attestation pipeline live in `benches/`.
