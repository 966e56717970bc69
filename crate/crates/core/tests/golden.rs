use std::path::Path;

use pglab::decoder::parse_trace;
use pglab::metrics::{evaluate, EvalOptions};

fn lines(name: &str) -> Vec<Vec<String>> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name);
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.split_whitespace().map(String::from).collect())
        .collect()
}

#[test]
fn five_example_report_is_byte_identical() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data");
    let trace_path = dir.join("golden_trace.txt");
    let traces = parse_trace(&std::fs::read_to_string(&trace_path).unwrap(), &trace_path).unwrap();
    let (report, _) = evaluate(
        &lines("golden_summaries.txt"),
        &lines("golden_references.txt"),
        &lines("golden_sources.txt"),
        Some(&traces),
        EvalOptions::default(),
    )
    .unwrap();
    let want = std::fs::read_to_string(dir.join("golden_report.tsv")).unwrap();
    assert_eq!(report.to_tsv(), want);
}
