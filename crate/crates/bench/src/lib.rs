//! Criterion benchmarks for the decoding controller; see `benches/`.
