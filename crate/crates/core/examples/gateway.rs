//! The request pipeline in process: translation, caching, invalidation and
//! cost rejection against a mock backend.

use std::sync::Arc;

use odatax::cache::ManualClock;
use odatax::datagen;
use odatax::gateway::{Gateway, GatewayConfig, WriteMethod};

#[tokio::main]
async fn main() {
    let mut cfg = GatewayConfig::mock_generated("ecommerce-small", 42);
    cfg.cost.threshold = 20.0;
    let store = datagen::ecommerce_small(42).into_store().unwrap();
    let (gw, backend) = Gateway::mock(&cfg, store, Arc::new(ManualClock::new()));

    let q = "filter=price>100,category:Books&sort=-price&top=3";
    for _ in 0..2 {
        let r = gw.handle_read("Products", q).await;
        println!(
            "{} cache={} backend reads={}",
            r.status,
            r.header("X-ODataX-Cache").unwrap_or("-"),
            backend.read_calls()
        );
    }

    gw.handle_write(WriteMethod::Patch, "Products", Some("1"), br#"{"Price": 150}"#).await;
    let r = gw.handle_read("Products", q).await;
    println!("after write: cache={}", r.header("X-ODataX-Cache").unwrap_or("-"));

    let r = gw
        .handle_read("Products", "$filter=contains(Name,'a') or contains(Name,'b')&$expand=Reviews($expand=Author)")
        .await;
    println!("{} {}", r.status, r.body_str());
    let m = gw.metrics();
    println!("hits {} misses {} rejections {} backend reads {}", m.hits, m.misses, m.rejections, m.backend_reads);
}
