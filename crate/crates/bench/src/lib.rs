//! Criterion benchmarks for the assembly kernels and the two-scale pipeline;
//! see `benches/`.
