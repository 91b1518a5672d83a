//! Cost estimates against statistics, including the rejected worked example.

use odatax::cost::{self, CostConfig, CostDecision};
use odatax::datagen;
use odatax::parser::parse_mixed;
use odatax::stats::build_stats;

fn main() {
    let store = datagen::ecommerce_small(42).into_store().unwrap();
    let stats = build_stats(&store);
    let cfg = CostConfig::default();
    for raw in [
        "filter=category:Books,price<20",
        "$expand=Reviews($expand=Author)",
        "$filter=contains(Name,'a') or contains(Name,'e')&$expand=Reviews",
    ] {
        let q = parse_mixed(raw, store.model(), "Products").unwrap().query;
        let est = cost::estimate(&q, &stats, &cfg);
        println!(
            "{raw}\n  filter {} expand {} rows {} total {:.1}",
            est.filter_cost, est.expand_cost, est.projected_rows, est.total
        );
    }

    let worked = parse_mixed(cost::WORKED_EXAMPLE_QUERY, store.model(), "Orders").unwrap().query;
    let est = cost::estimate(&worked, &cost::worked_example_stats(), &cfg);
    if let CostDecision::Reject(body) = cost::check(&est) {
        println!("{}", serde_json::to_string_pretty(&body.0).unwrap());
    }
}
