//! Criterion benchmarks for the `cddm` kernels live in `benches/kernels.rs`;
//! run them with `cargo bench -p cddm-bench`.
