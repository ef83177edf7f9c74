//! Criterion benchmarks for the noble kernels; see `benches/`.
