//! Simplified query strings and the OData v4 they stand for.

use odatax::datagen::ecommerce_model;
use odatax::parser::parse_mixed;

fn main() {
    let model = ecommerce_model();
    for raw in [
        "filter=price<20,category:Books",
        "filter=price>100, category:Books&sort=-price",
        "filter=rating>=4.5,inStock=true&sort=-rating,price&select=name,price&top=5",
        "filter=supplier/country:DE&$orderby=Name",
    ] {
        let merged = parse_mixed(raw, &model, "Products").expect("valid query");
        println!("{raw}\n  -> {}", merged.query.serialize_odata());
        for w in merged.warnings {
            println!("  warning: {w}");
        }
    }

    // Errors carry a character position.
    if let Err(e) = parse_mixed("filter=price<", &model, "Products") {
        println!("{e}");
    }
}
