//! Criterion benchmarks for the evaluation hot paths live in `benches/`.
