//! Runs the golden corpus through a mock gateway.

use std::path::Path;

use odatax::bench::default_config;
use odatax::conformance::run_conformance;

#[tokio::main]
async fn main() {
    let corpus = Path::new(env!("CARGO_MANIFEST_DIR")).join("corpus/golden.json");
    let report = run_conformance(&corpus, &default_config(42)).await.unwrap();
    for r in &report.results {
        println!("{} {}", if r.passed { "ok  " } else { "FAIL" }, r.name);
        for d in &r.diffs {
            println!("{d}");
        }
    }
    println!("{}/{} passed", report.passed, report.cases);
}
