//! Criterion benchmarks for the numeric core live in `benches/`.
