//! Pruning, activation curves, operation counts, benchmarks and the
//! gradient suite.

pub mod bench;
pub mod curves;
pub mod flops;
pub mod gradsuite;
pub mod prune;

pub use bench::{bench, bench_model, comparison_table, reports_csv, reports_json, BenchConfig, BenchModel, BenchReport, BenchShape, CountingAlloc};
pub use curves::{export_curves, write_curves, ActivationCurve, EdgeFilter};
pub use flops::estimate_flops;
pub use gradsuite::{gradient_suite, run_cases, SuiteReport, CASES};
pub use prune::{prune, EdgeScore, PruneReport};
