//! Criterion benchmarks for the network passes and the closed loop; the
//! code lives in `benches/`.
