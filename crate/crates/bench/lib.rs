//! Criterion benchmarks for the `anova-rkhs` workspace; see `benches/`.
