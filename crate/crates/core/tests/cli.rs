use std::io::{BufRead, BufReader};
use std::process::{Child, Command, Stdio};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_odatax");

struct Server {
    child: Child,
    base: String,
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

fn spawn_server() -> Server {
    let mut child = Command::new(BIN)
        .args(["serve", "--listen", "127.0.0.1:0"])
        .env_remove("ODATAX_CONFIG")
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .expect("spawn odatax serve");
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let v: Value = serde_json::from_str(&line).expect("listen line is json");
    Server {
        child,
        base: v["listening"].as_str().unwrap().to_string(),
    }
}

async fn get(base: &str, path_and_query: &str) -> (u16, Option<String>, Value) {
    let resp = reqwest::get(format!("{base}{path_and_query}")).await.unwrap();
    let status = resp.status().as_u16();
    let key = resp
        .headers()
        .get("X-ODataX-Cache-Key")
        .map(|v| v.to_str().unwrap().to_string());
    let body = resp.bytes().await.unwrap();
    (status, key, serde_json::from_slice(&body).unwrap())
}

#[tokio::test]
async fn serve_answers_the_catalogue_query_and_keys_agree_across_processes() {
    let (a, b) = (spawn_server(), spawn_server());
    let q = "/odatax/Products?%24filter=Price%20gt%20100%20and%20Category%20eq%20%27Electronics%27";
    let (status, key_a, body) = get(&a.base, q).await;
    assert_eq!(status, 200);
    let rows = body["value"].as_array().unwrap();
    assert!(!rows.is_empty());
    for r in rows {
        assert!(r["Price"].as_f64().unwrap() > 100.0);
        assert_eq!(r["Category"], "Electronics");
    }
    let (_, key_b, body_b) = get(&b.base, q).await;
    assert_eq!(key_a, key_b);
    assert!(key_a.is_some());
    assert_eq!(body, body_b);
    // Same query in the other syntax, sent to the other process.
    let (_, key_c, _) = get(&b.base, "/odatax/Products?filter=category:Electronics,price>100").await;
    assert_eq!(key_a, key_c);
}

#[test]
fn bad_config_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"backend": {"mock": {"generate": {"dataset": "nope", "seed": 1}}}}"#).unwrap();
    let out = Command::new(BIN)
        .args(["serve", "--config", cfg.to_str().unwrap()])
        .env_remove("ODATAX_CONFIG")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("invalid config"), "{err}");
}

#[test]
fn translate_output_reparses() {
    let out = Command::new(BIN)
        .args(["translate", "filter=price>100, category:Books&sort=-price"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    let model = odatax::datagen::ecommerce_model();
    let params = odatax::parser::traditional::split_options(text.trim_end());
    let q = odatax::parse_query_params(&params, &model, "Products").unwrap();
    assert_eq!(q.serialize_odata(), text.trim_end());
}
