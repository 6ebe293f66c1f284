//! Benchmarks live in `benches/`; run `cargo bench -p maxprin-bench`.
