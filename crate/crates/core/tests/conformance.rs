use std::path::{Path, PathBuf};

use odatax::bench::default_config;
use odatax::conformance::{
    conformance_gateway, load_corpus, missing_coverage, run_cases, run_conformance,
};

fn corpus(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("corpus").join(name)
}

fn show(report: &odatax::conformance::ConformanceReport) -> String {
    report
        .failures()
        .map(|r| format!("{}:\n{}", r.name, r.diffs.join("\n")))
        .collect::<Vec<_>>()
        .join("\n")
}

#[tokio::test]
async fn golden_corpus_passes() {
    let report = run_conformance(&corpus("golden.json"), &default_config(42)).await.unwrap();
    assert!(report.ok(), "{}", show(&report));
    assert!(report.cases >= 30);
}

#[tokio::test]
async fn traditional_corpus_passes() {
    let cases = load_corpus(&corpus("traditional.json")).unwrap();
    assert!(cases.len() >= 50);
    assert!(cases.iter().all(|c| !c.params.split('&').any(|p| !p.starts_with('$'))));
    let report = run_conformance(&corpus("traditional.json"), &default_config(42)).await.unwrap();
    assert!(report.ok(), "{}", show(&report));
}

#[test]
fn golden_corpus_covers_every_mapping() {
    let cases = load_corpus(&corpus("golden.json")).unwrap();
    assert_eq!(missing_coverage(&cases), Vec::<&str>::new());
}

#[tokio::test]
async fn runner_reports_a_mutated_expectation() {
    let mut cases = load_corpus(&corpus("golden.json")).unwrap();
    cases.truncate(3);
    let t = cases[1].expected_traditional.clone().unwrap();
    cases[1].expected_traditional = Some(t.replace("lt 20", "lt 21"));
    let (gw, backend) = conformance_gateway(&default_config(42)).unwrap();
    let report = run_cases(&gw, &backend, &cases, &corpus("")).await;
    assert_eq!((report.passed, report.failed), (2, 1));
    let failed = report.failures().next().unwrap();
    assert_eq!(failed.name, cases[1].name);
    assert_eq!(
        failed.diffs,
        vec![format!(
            "traditional:\n  - $filter=Price lt 21 and Category eq 'Books'\n  + {t}"
        )]
    );
}
