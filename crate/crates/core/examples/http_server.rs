//! Serves the gateway over HTTP on an ephemeral port and queries it once.

use std::sync::Arc;

use odatax::gateway::{http, Gateway, GatewayConfig};
use tokio::sync::oneshot;

#[tokio::main]
async fn main() {
    let gw = Arc::new(Gateway::from_config(&GatewayConfig::mock_generated("ecommerce-small", 42)).unwrap());
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let (stop, stopped) = oneshot::channel::<()>();
    let server = tokio::spawn(http::serve(gw, listener, async {
        let _ = stopped.await;
    }));

    let url = format!("http://{addr}/odatax/Products?filter=category:Books,price%3C5&select=name,price&top=3");
    let resp = reqwest::get(&url).await.unwrap();
    for h in ["x-odatax-cache", "x-odatax-cache-key", "cache-control"] {
        println!("{h}: {}", resp.headers().get(h).and_then(|v| v.to_str().ok()).unwrap_or("-"));
    }
    println!("{}", resp.text().await.unwrap());

    let _ = stop.send(());
    server.await.unwrap().unwrap();
}
