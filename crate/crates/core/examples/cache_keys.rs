//! Equivalent queries share a cache key whatever syntax or order they use.

use odatax::cache::touched_sets;
use odatax::datagen::ecommerce_model;
use odatax::parser::parse_mixed;

fn main() {
    let model = ecommerce_model();
    let forms = [
        "filter=price>100,category:Books",
        "filter=category:Books, price>100",
        "$filter=Category eq 'Books' and Price gt 100",
        "$filter=Price gt 100&filter=category:Books",
    ];
    for raw in forms {
        let q = parse_mixed(raw, &model, "Products").unwrap().query;
        println!("{} {raw}", &q.cache_key()[..16]);
    }
    let q = parse_mixed("filter=supplier/country:DE&$expand=Reviews", &model, "Products").unwrap().query;
    println!("touches {:?}", touched_sets(&q, &model));
}
