//! Builds the statistics catalogue the cost model reads.

use odatax::datagen;
use odatax::stats::build_stats;

fn main() {
    let store = datagen::ecommerce_small(42).into_store().unwrap();
    let stats = build_stats(&store);
    for (name, set) in &stats.entity_sets {
        println!("{name}: {} rows", set.row_count);
        for (rel, r) in &set.relations {
            println!("  {rel} -> {} avg {:.2}", r.target, r.avg_cardinality);
        }
    }
    let category = stats.column("Products", &["Category".to_string()]).unwrap();
    for v in category.top_k.values.iter().take(3) {
        println!("Category {} x{}", v.value, v.count);
    }
}
