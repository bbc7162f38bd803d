//! Criterion benchmarks for `sbp-dp`; see `benches/`.
