//! Seeded generators for the bundled desk-scale datasets.
//!
//! * `ecommerce-small`: 10k products, 50k reviews, 2k users, 100 suppliers, 20k orders
//! * `social`: 5k users, 20k posts, 50k comments
//! * `erp`: 20k transactions over 500 accounts and 50 cost centers

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde_json::{json, Value};

use crate::model::EntityModel;
use crate::store::{EntityStore, StoreError};

pub const DEFAULT_SEED: u64 = 42;

pub const ECOMMERCE_MODEL_JSON: &str = include_str!("../data/ecommerce/model.json");
pub const SOCIAL_MODEL_JSON: &str = include_str!("../data/social/model.json");
pub const ERP_MODEL_JSON: &str = include_str!("../data/erp/model.json");

pub const CATEGORIES: [&str; 20] = [
    "Books",
    "Electronics",
    "Toys",
    "Kitchen",
    "Garden",
    "Sports",
    "Music",
    "Movies",
    "Games",
    "Clothing",
    "Shoes",
    "Beauty",
    "Health",
    "Automotive",
    "Office",
    "Pets",
    "Baby",
    "Tools",
    "Grocery",
    "Science Fiction",
];

/// Category seeded on a handful of products to exercise quote escaping.
pub const QUOTED_CATEGORY: &str = "O'Brien";

const ADJECTIVES: [&str; 12] = [
    "Deluxe", "Compact", "Classic", "Smart", "Portable", "Vintage", "Ultra", "Eco", "Pro", "Mini",
    "Rugged", "Silent",
];
pub const NOUNS: [&str; 16] = [
    "Phone", "Lamp", "Novel", "Blender", "Drone", "Kettle", "Speaker", "Puzzle", "Jacket",
    "Backpack", "Camera", "Guitar", "Monitor", "Chair", "Watch", "Router",
];
pub const COUNTRIES: [&str; 10] = ["US", "DE", "FR", "JP", "BR", "IN", "GB", "CA", "AU", "MX"];
pub const ORDER_STATUS: [&str; 4] = ["pending", "shipped", "delivered", "returned"];

pub fn ecommerce_model() -> EntityModel {
    EntityModel::from_json_str(ECOMMERCE_MODEL_JSON).expect("bundled model is valid")
}

pub fn social_model() -> EntityModel {
    EntityModel::from_json_str(SOCIAL_MODEL_JSON).expect("bundled model is valid")
}

pub fn erp_model() -> EntityModel {
    EntityModel::from_json_str(ERP_MODEL_JSON).expect("bundled model is valid")
}

/// Generated records plus the model they conform to.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub model: Arc<EntityModel>,
    pub records: BTreeMap<String, Vec<Value>>,
}

impl Dataset {
    pub fn into_store(self) -> Result<EntityStore, StoreError> {
        EntityStore::from_records(self.model, self.records)
    }

    /// Writes `model.json` and one `<Set>.json` per entity set into `dir`.
    pub fn write_dir(&self, dir: &Path) -> std::io::Result<Vec<std::path::PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let mut written = vec![dir.join("model.json")];
        std::fs::write(&written[0], serde_json::to_string_pretty(&self.model.to_json())?)?;
        for (set, rows) in &self.records {
            let p = dir.join(format!("{set}.json"));
            std::fs::write(&p, serde_json::to_string(rows)?)?;
            written.push(p);
        }
        Ok(written)
    }
}

/// Zipf-like skew over categories: category `i` gets weight `1/(i+1)`.
fn skewed_index(rng: &mut StdRng, n: usize) -> usize {
    let total: f64 = (1..=n).map(|i| 1.0 / i as f64).sum();
    let mut x = rng.random::<f64>() * total;
    for i in 0..n {
        x -= 1.0 / (i + 1) as f64;
        if x <= 0.0 {
            return i;
        }
    }
    n - 1
}

fn round2(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

pub fn ecommerce(products: usize, seed: u64) -> Dataset {
    let mut rng = StdRng::seed_from_u64(seed);
    let users = (products / 5).max(1);
    let suppliers = (products / 100).max(1);
    let reviews = products * 5;
    let orders = products * 2;

    let mut user_rows = Vec::with_capacity(users);
    for id in 1..=users {
        user_rows.push(json!({
            "Id": id,
            "Name": format!("user{id:05}"),
            "Country": COUNTRIES[rng.random_range(0..COUNTRIES.len())],
            "Email": format!("user{id:05}@example.com"),
        }));
    }
    let mut supplier_rows = Vec::with_capacity(suppliers);
    for id in 1..=suppliers {
        supplier_rows.push(json!({
            "Id": id,
            "Name": format!("Supplier {id}"),
            "Country": COUNTRIES[rng.random_range(0..COUNTRIES.len())],
        }));
    }

    // Each product owns exactly five reviews: review ids 5(p-1)+1 ..= 5p.
    let mut product_rows = Vec::with_capacity(products);
    for id in 1..=products {
        let category = if id % 2000 == 7 {
            QUOTED_CATEGORY
        } else {
            CATEGORIES[skewed_index(&mut rng, CATEGORIES.len())]
        };
        let name = format!(
            "{} {} {}",
            ADJECTIVES[rng.random_range(0..ADJECTIVES.len())],
            NOUNS[rng.random_range(0..NOUNS.len())],
            rng.random_range(1..1000)
        );
        // Log-uniform prices between 1 and 2000.
        let price = round2((rng.random::<f64>() * 2000f64.ln()).exp());
        let rating = (rng.random_range(10..=50) as f64) / 10.0;
        let supplier = rng.random_range(1..=suppliers);
        let first_review = 5 * (id - 1) + 1;
        product_rows.push(json!({
            "Id": id,
            "Name": name,
            "Category": category,
            "Price": price,
            "Rating": rating,
            "InStock": rng.random_bool(0.8),
            "SupplierId": supplier,
            "Reviews": (first_review..first_review + 5).collect::<Vec<_>>(),
            "Supplier": [supplier],
        }));
    }

    let mut review_rows = Vec::with_capacity(reviews);
    for id in 1..=reviews {
        let product = (id - 1) / 5 + 1;
        let author = rng.random_range(1..=users);
        review_rows.push(json!({
            "Id": id,
            "ProductId": product,
            "AuthorId": author,
            "Rating": rng.random_range(1..=5),
            "Title": format!("{} review", ["Great", "Okay", "Poor", "Superb", "Meh"][rng.random_range(0..5)]),
            "Verified": rng.random_bool(0.6),
            "Author": [author],
            "Product": [product],
        }));
    }

    let mut order_rows = Vec::with_capacity(orders);
    for id in 1..=orders {
        let customer = rng.random_range(1..=users);
        let product = rng.random_range(1..=products);
        order_rows.push(json!({
            "Id": id,
            "CustomerId": customer,
            "ProductId": product,
            "Total": round2(rng.random_range(5.0..500.0)),
            "Status": ORDER_STATUS[rng.random_range(0..ORDER_STATUS.len())],
            "Customer": [customer],
            "Product": [product],
        }));
    }

    let mut records = BTreeMap::new();
    records.insert("Products".into(), product_rows);
    records.insert("Reviews".into(), review_rows);
    records.insert("Users".into(), user_rows);
    records.insert("Suppliers".into(), supplier_rows);
    records.insert("Orders".into(), order_rows);
    Dataset {
        model: Arc::new(ecommerce_model()),
        records,
    }
}

/// The bundled `ecommerce-small` dataset.
pub fn ecommerce_small(seed: u64) -> Dataset {
    ecommerce(10_000, seed)
}

pub fn social(users: usize, seed: u64) -> Dataset {
    let mut rng = StdRng::seed_from_u64(seed);
    let posts = users * 4;
    let comments = users * 10;
    const TOPICS: [&str; 8] = ["rust", "cooking", "travel", "music", "sports", "art", "news", "pets"];

    let mut post_ids: Vec<Vec<i64>> = vec![Vec::new(); users + 1];
    let mut post_rows = Vec::with_capacity(posts);
    let mut comment_ids: Vec<Vec<i64>> = vec![Vec::new(); posts + 1];
    let mut post_authors = Vec::with_capacity(posts + 1);
    post_authors.push(0usize);
    for id in 1..=posts {
        let author = rng.random_range(1..=users);
        post_ids[author].push(id as i64);
        post_authors.push(author);
    }
    let mut comment_rows = Vec::with_capacity(comments);
    for id in 1..=comments {
        let post = rng.random_range(1..=posts);
        let author = rng.random_range(1..=users);
        comment_ids[post].push(id as i64);
        comment_rows.push(json!({
            "Id": id,
            "PostId": post,
            "AuthorId": author,
            "Text": format!("comment {id}"),
            "Author": [author],
        }));
    }
    for id in 1..=posts {
        let author = post_authors[id];
        post_rows.push(json!({
            "Id": id,
            "AuthorId": author,
            "Topic": TOPICS[skewed_index(&mut rng, TOPICS.len())],
            "Likes": rng.random_range(0..5000),
            "Text": format!("post {id} about things"),
            "Author": [author],
            "Comments": comment_ids[id],
        }));
    }
    let mut user_rows = Vec::with_capacity(users);
    for id in 1..=users {
        user_rows.push(json!({
            "Id": id,
            "Handle": format!("@u{id}"),
            "Country": COUNTRIES[rng.random_range(0..COUNTRIES.len())],
            "Followers": rng.random_range(0..100_000),
            "Verified": rng.random_bool(0.05),
            "Posts": post_ids[id],
        }));
    }
    let mut records = BTreeMap::new();
    records.insert("Users".into(), user_rows);
    records.insert("Posts".into(), post_rows);
    records.insert("Comments".into(), comment_rows);
    Dataset {
        model: Arc::new(social_model()),
        records,
    }
}

pub fn erp(transactions: usize, seed: u64) -> Dataset {
    let mut rng = StdRng::seed_from_u64(seed);
    let accounts = (transactions / 40).max(1);
    let centers = (accounts / 10).max(1);
    const CURRENCIES: [&str; 4] = ["USD", "EUR", "JPY", "GBP"];
    const STATUS: [&str; 3] = ["posted", "pending", "reversed"];

    let mut center_rows = Vec::with_capacity(centers);
    for id in 1..=centers {
        // Tree: every center except the root reports to a lower-numbered one.
        let parent = if id == 1 { None } else { Some(rng.random_range(1..id)) };
        center_rows.push(json!({
            "Id": id,
            "Name": format!("CC-{id:03}"),
            "ParentId": parent,
            "Parent": parent.map(|p| vec![p]).unwrap_or_default(),
        }));
    }
    let mut tx_of: Vec<Vec<i64>> = vec![Vec::new(); accounts + 1];
    let mut tx_rows = Vec::with_capacity(transactions);
    for id in 1..=transactions {
        let account = rng.random_range(1..=accounts);
        tx_of[account].push(id as i64);
        let month = rng.random_range(1..=12);
        let day = rng.random_range(1..=28);
        tx_rows.push(json!({
            "Id": id,
            "AccountId": account,
            "Amount": round2(rng.random_range(-5000.0..20000.0)),
            "Currency": CURRENCIES[skewed_index(&mut rng, CURRENCIES.len())],
            "Status": STATUS[rng.random_range(0..STATUS.len())],
            "Date": 20240000 + month * 100 + day,
            "Account": [account],
        }));
    }
    let mut account_rows = Vec::with_capacity(accounts);
    for id in 1..=accounts {
        let center = rng.random_range(1..=centers);
        account_rows.push(json!({
            "Id": id,
            "Name": format!("Account {id}"),
            "CostCenterId": center,
            "CostCenter": [center],
            "Transactions": tx_of[id],
        }));
    }
    let mut records = BTreeMap::new();
    records.insert("CostCenters".into(), center_rows);
    records.insert("Accounts".into(), account_rows);
    records.insert("Transactions".into(), tx_rows);
    Dataset {
        model: Arc::new(erp_model()),
        records,
    }
}

pub const DATASET_NAMES: [&str; 4] = ["ecommerce-small", "ecommerce", "social", "erp"];

/// Dataset by name: `ecommerce-small` (alias `ecommerce`), `social` or `erp`.
pub fn by_name(name: &str, seed: u64) -> Option<Dataset> {
    match name {
        "ecommerce-small" | "ecommerce" => Some(ecommerce_small(seed)),
        "social" => Some(social(5_000, seed)),
        "erp" => Some(erp(20_000, seed)),
        _ => None,
    }
}
