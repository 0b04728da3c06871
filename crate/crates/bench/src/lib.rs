//! Criterion benchmarks for `abfdr`; see `benches/`.
