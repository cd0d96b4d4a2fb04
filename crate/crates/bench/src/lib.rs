//! Criterion benchmarks for the service hot path live in `benches/`.
