//! Runs queries directly against the generated in-memory dataset.

use odatax::datagen;
use odatax::evaluator::{count_matches, evaluate, results_to_json};
use odatax::parser::parse_mixed;

fn main() {
    let store = datagen::ecommerce_small(42).into_store().unwrap();
    let q = parse_mixed(
        "filter=category:Books,price<20&sort=-rating&select=name,price,rating&top=3&$expand=Supplier",
        store.model(),
        "Products",
    )
    .unwrap()
    .query;
    let rows = evaluate(&q, &store).unwrap();
    println!("{}", serde_json::to_string_pretty(&results_to_json(&rows)).unwrap());
    println!("{} books under 20 in total", count_matches(&q, &store).unwrap());
}
