//! Criterion benchmarks for the trial engine live in `benches/`.
