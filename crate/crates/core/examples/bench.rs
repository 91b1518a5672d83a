//! A short seeded workload replay; `odatax bench` runs the full one.

use odatax::bench::{self, default_config, Workload};

#[tokio::main]
async fn main() {
    let workload = Workload { queries: 2_000, ..Workload::default() };
    let report = bench::run(&default_config(42), &workload).await.unwrap();
    println!(
        "hit rate {:.3}, backend load reduction {:.3}, rejected {}, mean length reduction {:.3}",
        report.hit_rate, report.backend_load_reduction, report.rejections, report.mean_length_reduction
    );
}
