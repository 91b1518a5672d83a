//! Parses traditional `$`-options into the shared AST and back.

use odatax::datagen::ecommerce_model;
use odatax::parser::parse_query_params;
use odatax::parser::traditional::split_options;

fn main() {
    let model = ecommerce_model();
    let raw = "$filter=(Price gt 100 or Rating ge 4.8) and not contains(Name,'o''brien')\
               &$select=Name,Price&$orderby=Price desc&$top=10&$expand=Reviews($expand=Author)";
    let q = parse_query_params(&split_options(raw), &model, "Products").unwrap();
    let filter = q.filter.as_ref().unwrap();
    println!("{} leaves, depth {}", filter.leaves().len(), filter.depth());
    println!("order {:?}, top {:?}, expand depth {}", q.order_by, q.top, odatax::ast::expand_depth(&q.expand));
    println!("serialized: {}", q.serialize_odata());
    println!("canonical:  {}", q.canonicalize().serialize_odata());
}
