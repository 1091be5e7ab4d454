//! Benchmarks only; run with `cargo bench -p occsurf-bench`.
