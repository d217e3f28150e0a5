//! Criterion benchmarks for the model and the inspection tools; see
//! `benches/`.
