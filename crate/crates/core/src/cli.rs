//! `odatax` command line. Structured output goes to stdout as JSON (or the
//! bare translation for `translate`); diagnostics go to stderr.
//!
//! Exit codes: 0 success, 1 bad input files or config, 2 query syntax error,
//! 3 query rejected by the cost check.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::ast::Query;
use crate::bench::{self, Workload};
use crate::cost::{check, estimate, CostConfig, CostDecision};
use crate::datagen;
use crate::gateway::{BackendConfig, Gateway, GatewayConfig};
use crate::model::EntityModel;
use crate::named::NamedQueryRegistry;
use crate::parser::{parse_mixed, Merged, QueryError};
use crate::stats::{build_stats, StatisticsCatalog};
use crate::store::load_dataset;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_SYNTAX: i32 = 2;
pub const EXIT_REJECTED: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "odatax", version, about = "Dual-syntax OData v4 gateway and tooling")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the traditional `$`-option form of a query.
    Translate(QueryArgs),
    /// Print the cost breakdown of a query; exit 3 if it would be rejected.
    Estimate(EstimateArgs),
    /// Run the gateway until interrupted.
    Serve(ServeArgs),
    /// Replay a seeded workload through a mock-mode gateway.
    Bench(BenchArgs),
    /// Statistics catalogue tools.
    Stats {
        #[command(subcommand)]
        command: StatsCommand,
    },
    /// Named-query registry tools.
    Queries {
        #[command(subcommand)]
        command: QueriesCommand,
    },
    /// Write a bundled synthetic dataset as JSON files.
    Generate {
        /// ecommerce-small, ecommerce, social or erp.
        dataset: String,
        #[arg(long, default_value_t = datagen::DEFAULT_SEED)]
        seed: u64,
        #[arg(short, long)]
        output: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    /// Options in either syntax, optionally prefixed by `Set?`, e.g.
    /// `Products?filter=price<20,category:Books`.
    pub query: String,
    /// Model file; defaults to the bundled e-commerce model.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Entity set; inferred from the query when omitted.
    #[arg(long)]
    pub set: Option<String>,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub query: QueryArgs,
    /// Statistics catalogue written by `odatax stats build`.
    #[arg(long, conflicts_with = "no_stats")]
    pub stats: Option<PathBuf>,
    /// Estimate with default selectivities and cardinalities only.
    #[arg(long)]
    pub no_stats: bool,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub w_filter: Option<f64>,
    #[arg(long)]
    pub w_expand: Option<f64>,
    #[arg(long)]
    pub w_size: Option<f64>,
    #[arg(long)]
    pub rows_per_cost_unit: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Gateway config; `ODATAX_CONFIG` takes precedence. Without either, a
    /// mock gateway over the generated 10k-product catalogue is served.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the configured listen address.
    #[arg(long)]
    pub listen: Option<std::net::SocketAddr>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Mock-mode gateway config; defaults to the generated catalogue.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = Workload::default().queries)]
    pub queries: usize,
    #[arg(long, default_value_t = Workload::default().zipf)]
    pub zipf: f64,
    #[arg(long, default_value_t = Workload::default().seed)]
    pub seed: u64,
    /// Make every read a query never seen before.
    #[arg(long)]
    pub distinct: bool,
}

#[derive(Debug, Subcommand)]
pub enum StatsCommand {
    /// Build a statistics catalogue from a model and its data files.
    Build {
        model: PathBuf,
        #[arg(required = true)]
        data: Vec<PathBuf>,
        #[arg(short, long)]
        output: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
pub enum QueriesCommand {
    /// Validate a registry file without starting the gateway.
    Check {
        registry: PathBuf,
        #[arg(long)]
        model: Option<PathBuf>,
    },
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() { err.write_all(text.as_bytes()) } else { out.write_all(text.as_bytes()) };
            return code;
        }
    };
    let result = match cli.command {
        Command::Translate(a) => translate(&a, out),
        Command::Estimate(a) => estimate_cmd(&a, out),
        Command::Serve(a) => serve(&a, out),
        Command::Bench(a) => bench_cmd(&a, out),
        Command::Stats {
            command: StatsCommand::Build { model, data, output },
        } => stats_build(&model, &data, &output, out),
        Command::Queries {
            command: QueriesCommand::Check { registry, model },
        } => queries_check(&registry, model.as_deref(), out),
        Command::Generate { dataset, seed, output } => generate(&dataset, seed, &output, out),
    };
    match result {
        Ok(code) => code,
        Err(Failure { code, message }) => {
            let _ = writeln!(err, "error: {message}");
            code
        }
    }
}

struct Failure {
    code: i32,
    message: String,
}

fn input_error(e: impl std::fmt::Display) -> Failure {
    Failure {
        code: EXIT_INPUT,
        message: e.to_string(),
    }
}

fn syntax_error(e: &QueryError) -> Failure {
    let mut message = e.to_string();
    if let QueryError::Parse(p) = e {
        message.push('\n');
        message.push_str(&p.caret());
    }
    Failure {
        code: EXIT_SYNTAX,
        message,
    }
}

fn print_json(out: &mut dyn Write, v: &serde_json::Value) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(v).expect("json serializes");
    writeln!(out, "{text}").map_err(input_error)
}

fn load_model(path: Option<&Path>) -> Result<EntityModel, Failure> {
    match path {
        Some(p) => EntityModel::load(p).map_err(input_error),
        None => Ok(datagen::ecommerce_model()),
    }
}

/// Splits `[/]Set?options` into the optional set and the option string.
fn split_input<'a>(args: &'a QueryArgs, model: &EntityModel) -> (Option<&'a str>, &'a str) {
    let raw = args.query.trim().trim_start_matches('/');
    let (prefix, options) = match raw.split_once('?') {
        Some((set, rest)) => (Some(set), rest),
        None if model.entity_set(raw).is_some() => (Some(raw), ""),
        None => (None, raw),
    };
    (args.set.as_deref().or(prefix), options)
}

/// Parses the options against the named set, or against every set when
/// none is named.
fn parse_input(args: &QueryArgs, model: &EntityModel) -> Result<Merged, Failure> {
    let (set, options) = split_input(args, model);
    if options.trim().is_empty() {
        return Err(Failure {
            code: EXIT_SYNTAX,
            message: "missing parameter: no query options given".into(),
        });
    }
    if let Some(set) = set {
        return parse_mixed(options, model, set).map_err(|e| syntax_error(&e));
    }
    let mut ok: Vec<(String, Merged)> = Vec::new();
    let mut best_err: Option<QueryError> = None;
    for def in model.entity_sets() {
        match parse_mixed(options, model, &def.name) {
            Ok(m) => ok.push((def.name.clone(), m)),
            Err(e) => {
                if best_err.as_ref().is_none_or(|b| e.position() > b.position()) {
                    best_err = Some(e);
                }
            }
        }
    }
    match ok.len() {
        1 => Ok(ok.pop().unwrap().1),
        0 => Err(syntax_error(&best_err.expect("model has entity sets"))),
        _ => Err(Failure {
            code: EXIT_SYNTAX,
            message: format!(
                "query is valid for several entity sets ({}); pass --set",
                ok.iter().map(|(s, _)| s.as_str()).collect::<Vec<_>>().join(", ")
            ),
        }),
    }
}

fn nonempty(q: &Query) -> Result<(), Failure> {
    if q.serialize_odata().is_empty() {
        return Err(Failure {
            code: EXIT_SYNTAX,
            message: "missing parameter: no recognised query options".into(),
        });
    }
    Ok(())
}

fn translate(a: &QueryArgs, out: &mut dyn Write) -> Result<i32, Failure> {
    let model = load_model(a.model.as_deref())?;
    let merged = parse_input(a, &model)?;
    nonempty(&merged.query)?;
    for w in &merged.warnings {
        eprintln!("warning: {w}");
    }
    writeln!(out, "{}", merged.query.serialize_odata()).map_err(input_error)?;
    Ok(EXIT_OK)
}

fn estimate_cmd(a: &EstimateArgs, out: &mut dyn Write) -> Result<i32, Failure> {
    let model = load_model(a.query.model.as_deref())?;
    let stats = match (&a.stats, a.no_stats) {
        (Some(p), _) => StatisticsCatalog::load(p).map_err(input_error)?,
        (None, true) => StatisticsCatalog::default(),
        (None, false) => return Err(input_error("pass --stats <file> or --no-stats")),
    };
    // A bare set name is a valid query: the whole set.
    let query = match split_input(&a.query, &model) {
        (Some(set), options) if options.trim().is_empty() => {
            if model.entity_set(set).is_none() {
                return Err(syntax_error(&QueryError::UnknownEntitySet(set.to_string())));
            }
            Query::new(set)
        }
        _ => parse_input(&a.query, &model)?.query,
    };
    let mut cfg = CostConfig::default();
    if let Some(t) = a.threshold {
        cfg.threshold = t;
    }
    if let Some(w) = a.w_filter {
        cfg.weights.w_filter = w;
    }
    if let Some(w) = a.w_expand {
        cfg.weights.w_expand = w;
    }
    if let Some(w) = a.w_size {
        cfg.weights.w_size = w;
    }
    if let Some(r) = a.rows_per_cost_unit {
        if !(r > 0.0) {
            return Err(input_error("--rows-per-cost-unit must be positive"));
        }
        cfg.weights.rows_per_cost_unit = r;
    }
    let est = estimate(&query, &stats, &cfg);
    let w = cfg.weights;
    let mut report = json!({
        "entitySet": query.entity_set,
        "query": query.serialize_odata(),
        "estimate": est,
        "terms": {
            "filter": w.w_filter * est.filter_cost,
            "expand": w.w_expand * est.expand_cost,
            "size": w.w_size * est.size_cost,
        },
    });
    let code = match check(&est) {
        CostDecision::Accept => {
            report["decision"] = json!("accept");
            EXIT_OK
        }
        CostDecision::Reject(payload) => {
            report["decision"] = json!("reject");
            report["rejection"] = payload.0;
            EXIT_REJECTED
        }
    };
    print_json(out, &report)?;
    Ok(code)
}

fn serve_config(a: &ServeArgs) -> Result<GatewayConfig, Failure> {
    let mut cfg = if a.config.is_some() || std::env::var_os(crate::gateway::config::CONFIG_ENV).is_some() {
        GatewayConfig::load(a.config.as_deref()).map_err(input_error)?
    } else {
        GatewayConfig::mock_generated("ecommerce-small", datagen::DEFAULT_SEED)
    };
    if let Some(addr) = a.listen {
        cfg.listen = addr;
    }
    Ok(cfg)
}

fn serve(a: &ServeArgs, out: &mut dyn Write) -> Result<i32, Failure> {
    let cfg = serve_config(a)?;
    let _ = tracing_subscriber::fmt().with_writer(std::io::stderr).try_init();
    let gw = Arc::new(Gateway::from_config(&cfg).map_err(input_error)?);
    let rt = tokio::runtime::Runtime::new().map_err(input_error)?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(cfg.listen).await.map_err(input_error)?;
        let addr = listener.local_addr().map_err(input_error)?;
        writeln!(out, "{}", json!({ "listening": format!("http://{addr}") })).map_err(input_error)?;
        out.flush().map_err(input_error)?;
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
        };
        crate::gateway::http::serve(gw, listener, shutdown).await.map_err(input_error)
    })?;
    Ok(EXIT_OK)
}

fn bench_cmd(a: &BenchArgs, out: &mut dyn Write) -> Result<i32, Failure> {
    let cfg = match &a.config {
        Some(p) => GatewayConfig::load(Some(p)).map_err(input_error)?,
        None => bench::default_config(datagen::DEFAULT_SEED),
    };
    if !matches!(cfg.backend, BackendConfig::Mock(_)) {
        return Err(input_error("bench needs a mock backend"));
    }
    if !(a.zipf > 0.0) {
        return Err(input_error("--zipf must be positive"));
    }
    let workload = Workload {
        queries: a.queries,
        zipf: a.zipf,
        seed: a.seed,
        distinct: a.distinct,
        ..Workload::default()
    };
    let rt = tokio::runtime::Builder::new_current_thread()
        .build()
        .map_err(input_error)?;
    let report = rt.block_on(bench::run(&cfg, &workload)).map_err(input_error)?;
    print_json(out, &serde_json::to_value(report).expect("report serializes"))?;
    Ok(EXIT_OK)
}

fn stats_build(model: &Path, data: &[PathBuf], output: &Path, out: &mut dyn Write) -> Result<i32, Failure> {
    let store = load_dataset(model, data).map_err(input_error)?;
    let stats = build_stats(&store);
    stats.save(output).map_err(input_error)?;
    let rows: serde_json::Map<String, serde_json::Value> = stats
        .entity_sets
        .iter()
        .map(|(k, s)| (k.clone(), json!(s.row_count)))
        .collect();
    print_json(out, &json!({"output": output.display().to_string(), "rowCounts": rows}))?;
    Ok(EXIT_OK)
}

fn queries_check(registry: &Path, model: Option<&Path>, out: &mut dyn Write) -> Result<i32, Failure> {
    let model = load_model(model)?;
    let reg = NamedQueryRegistry::new(Arc::new(model));
    reg.load_registry(registry).map_err(input_error)?;
    let names: Vec<String> = reg.definitions().into_iter().map(|d| d.name).collect();
    print_json(out, &json!({"valid": true, "queries": names}))?;
    Ok(EXIT_OK)
}

fn generate(dataset: &str, seed: u64, output: &Path, out: &mut dyn Write) -> Result<i32, Failure> {
    let ds = datagen::by_name(dataset, seed).ok_or_else(|| {
        input_error(format!(
            "unknown dataset `{dataset}`; expected one of {}",
            datagen::DATASET_NAMES.join(", ")
        ))
    })?;
    std::fs::create_dir_all(output).map_err(input_error)?;
    let files = ds.write_dir(output).map_err(input_error)?;
    let files: Vec<String> = files.iter().map(|p| p.display().to_string()).collect();
    print_json(out, &json!({"dataset": dataset, "seed": seed, "files": files}))?;
    Ok(EXIT_OK)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_cli(args: &[&str]) -> (i32, String, String) {
        let (mut out, mut err) = (Vec::new(), Vec::new());
        let mut full = vec!["odatax"];
        full.extend_from_slice(args);
        let code = run(full, &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn translate_examples() {
        let (code, out, _) = run_cli(&["translate", "filter=price<20,category:Books"]);
        assert_eq!((code, out.as_str()), (0, "$filter=Price lt 20 and Category eq 'Books'\n"));
        let (code, out, _) = run_cli(&["translate", "filter=price>100, category:Books&sort=-price"]);
        assert_eq!(code, 0);
        assert_eq!(out, "$filter=Price gt 100 and Category eq 'Books'&$orderby=Price desc\n");
        let (code, out, _) = run_cli(&["translate", "/Reviews?filter=rating>=4&top=3"]);
        assert_eq!((code, out.as_str()), (0, "$filter=Rating ge 4&$top=3\n"));
    }

    #[test]
    fn translate_errors() {
        let (code, _, err) = run_cli(&["translate", ""]);
        assert_eq!(code, EXIT_SYNTAX);
        assert!(err.contains("missing parameter"), "{err}");
        let (code, _, err) = run_cli(&["translate", "--set", "Products", "filter=price<"]);
        assert_eq!(code, EXIT_SYNTAX);
        assert!(err.ends_with("position 6: expected value\nprice<\n      ^\n"), "{err}");
        let (code, _, err) = run_cli(&["translate", "top=5"]);
        assert_eq!(code, EXIT_SYNTAX);
        assert!(err.contains("--set"), "{err}");
    }

    #[test]
    fn estimate_weights_and_rejection() {
        let (code, out, _) = run_cli(&["estimate", "--no-stats", "Products?$expand=Reviews"]);
        assert_eq!(code, 0);
        let v: serde_json::Value = serde_json::from_str(&out).unwrap();
        assert_eq!(v["terms"]["expand"], json!(10.0));
        let (_, out2, _) = run_cli(&["estimate", "--no-stats", "--w-expand", "2", "Products?$expand=Reviews"]);
        let v2: serde_json::Value = serde_json::from_str(&out2).unwrap();
        assert_eq!(v2["terms"]["expand"], json!(20.0));
        assert_eq!(v2["estimate"]["expandCost"], v["estimate"]["expandCost"]);

        let (code, out, _) = run_cli(&["estimate", "--no-stats", "--threshold", "5", "Products?$expand=Reviews"]);
        assert_eq!(code, EXIT_REJECTED);
        let v: serde_json::Value = serde_json::from_str(&out).unwrap();
        assert_eq!(v["rejection"]["error"]["code"], "QueryTooExpensive");

        let (code, _, err) = run_cli(&["estimate", "Products?top=1"]);
        assert_eq!(code, EXIT_INPUT);
        assert!(err.contains("--no-stats"));
    }

    #[test]
    fn estimate_worked_example_from_file() {
        let dir = tempfile::tempdir().unwrap();
        let stats = dir.path().join("stats.json");
        crate::cost::worked_example_stats().save(&stats).unwrap();
        let q = format!("Orders?{}", crate::cost::WORKED_EXAMPLE_QUERY);
        let (code, out, _) = run_cli(&["estimate", "--stats", stats.to_str().unwrap(), &q]);
        assert_eq!(code, EXIT_REJECTED);
        let v: serde_json::Value = serde_json::from_str(&out).unwrap();
        assert_eq!(v["estimate"]["total"], json!(850.0));
        assert_eq!(
            v["rejection"]["error"]["message"],
            "Query cost (850) exceeds maximum allowed (500)"
        );
    }

    #[test]
    fn estimate_empty_query_on_empty_set() {
        let dir = tempfile::tempdir().unwrap();
        let stats = dir.path().join("stats.json");
        let store = crate::store::EntityStore::empty(Arc::new(datagen::ecommerce_model()));
        build_stats(&store).save(&stats).unwrap();
        let (code, out, _) = run_cli(&["estimate", "--stats", stats.to_str().unwrap(), "Products"]);
        assert_eq!(code, 0);
        let v: serde_json::Value = serde_json::from_str(&out).unwrap();
        assert_eq!(v["estimate"]["total"], json!(0.0));
    }

    #[test]
    fn bench_distinct_has_no_hits() {
        let (code, out, _) = run_cli(&["bench", "--queries", "300", "--distinct"]);
        assert_eq!(code, 0);
        let v: serde_json::Value = serde_json::from_str(&out).unwrap();
        assert_eq!(v["hitRate"], json!(0.0));
        assert_eq!(v["hits"], json!(0));
    }

    #[test]
    fn stats_build_and_queries_check() {
        let dir = tempfile::tempdir().unwrap();
        let ds = datagen::social(200, 3);
        let files = ds.write_dir(dir.path()).unwrap();
        let model = dir.path().join("model.json");
        let data: Vec<&str> = files
            .iter()
            .filter(|p| *p != &model)
            .map(|p| p.to_str().unwrap())
            .collect();
        let out_path = dir.path().join("stats.json");
        let mut args = vec!["stats", "build", model.to_str().unwrap()];
        args.extend(data);
        args.extend(["-o", out_path.to_str().unwrap()]);
        let (code, out, err) = run_cli(&args);
        assert_eq!(code, 0, "{err}");
        assert!(out.contains("\"Users\": 200"), "{out}");
        assert!(StatisticsCatalog::load(&out_path).is_ok());

        let reg = dir.path().join("queries.json");
        std::fs::write(
            &reg,
            serde_json::to_string(&crate::named::example_definitions()).unwrap(),
        )
        .unwrap();
        let (code, out, _) = run_cli(&["queries", "check", reg.to_str().unwrap()]);
        assert_eq!(code, 0);
        assert!(out.contains("topRatedInCategory"));
        std::fs::write(&reg, r#"[{"name": "bad", "template": "$filter=Nope eq 1"}]"#).unwrap();
        let (code, _, err) = run_cli(&["queries", "check", reg.to_str().unwrap()]);
        assert_eq!(code, EXIT_INPUT);
        assert!(err.contains("bad"), "{err}");
    }

    #[test]
    fn serve_rejects_bad_config() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("cfg.json");
        std::fs::write(&cfg, r#"{"backend": {"proxy": {"url": "http://x"}}}"#).unwrap();
        let (code, _, err) = run_cli(&["serve", "--config", cfg.to_str().unwrap()]);
        assert_eq!(code, EXIT_INPUT);
        assert!(err.contains("invalid config"), "{err}");
    }
}
