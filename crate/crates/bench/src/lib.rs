//! Criterion benchmarks for the bundle Newton kernels live in `benches/`.
