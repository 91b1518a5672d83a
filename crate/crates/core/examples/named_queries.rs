//! Registering aliases and expanding them with arguments.

use std::collections::BTreeMap;
use std::sync::Arc;

use odatax::datagen::ecommerce_model;
use odatax::named::{example_definitions, NamedQueryDef, NamedQueryRegistry};

fn main() {
    let registry = NamedQueryRegistry::new(Arc::new(ecommerce_model()));
    registry.register_all(example_definitions(), false).unwrap();
    registry
        .register(
            NamedQueryDef::new("cheapIn", "$filter=Category eq '{category}' and Price lt 10&$orderby=Price")
                .with_parameters(&["category"]),
        )
        .unwrap();

    let none = BTreeMap::new();
    let e = registry.expand("affordableBooks", &none, "Products").unwrap();
    println!("affordableBooks -> {}", e.query.serialize_odata());

    // Quotes in arguments are doubled, never interpreted.
    for category in ["Toys", "O'Brien", "x' or Price gt 0 or Name eq 'y"] {
        let args = BTreeMap::from([("category".to_string(), category.to_string())]);
        let e = registry.expand("topRatedInCategory", &args, "Products").unwrap();
        println!("topRatedInCategory({category:?}) -> {}", e.query.serialize_odata());
    }

    let err = registry.expand("cheapIn", &none, "Products").unwrap_err();
    println!("cheapIn without arguments: {err}");
}
