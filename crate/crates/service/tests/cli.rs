//! CLI commands end to end over a temporary store.

use clap::Parser;

use fairplai::cli::{run, Cli};
use fairplai_core::store::Store;

const SCHEMA: &str = r#"{"columns":[
    {"name":"x1","kind":"numeric","bounds":[0,10]},
    {"name":"g","kind":"binary","categories":["a","b"]},
    {"name":"y","kind":"binary","categories":["0","1"]}],
    "label":"y","protected":["g"]}"#;

const GRID: &str = r#"{"epsilons":[1.0,"non_private"],"constraints":["unconstrained"],
    "model_kinds":["logreg"],"seeds":[0],"interventions":["none"]}"#;

async fn fairplai(store: &std::path::Path, args: &[&str]) -> i32 {
    let mut argv = vec!["fairplai", "--store", store.to_str().unwrap()];
    argv.extend_from_slice(args);
    run(Cli::try_parse_from(argv).expect("arguments parse")).await.expect("command runs")
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn ingest_build_select_audit_report() {
    let dir = tempfile::tempdir().unwrap();
    let store_dir = dir.path().join("store");
    let (csv, schema, grid) = (dir.path().join("d.csv"), dir.path().join("d.schema.json"), dir.path().join("grid.json"));
    let mut rows = String::from("x1,g,y\n");
    for i in 0..200u32 {
        let g = if i % 3 == 0 { "b" } else { "a" };
        let y = u32::from(i % 7 < 3);
        rows.push_str(&format!("{:.2},{g},{y}\n", f64::from(y * 5) + f64::from(i % 11) * 0.4));
    }
    std::fs::write(&csv, rows).unwrap();
    std::fs::write(&schema, SCHEMA).unwrap();
    std::fs::write(&grid, GRID).unwrap();

    assert_eq!(fairplai(&store_dir, &["ingest", csv.to_str().unwrap(), "--schema", schema.to_str().unwrap()]).await, 0);
    let store = Store::open(&store_dir).unwrap();
    let dataset = store.list("datasets").unwrap().pop().expect("dataset stored");

    assert_eq!(fairplai(&store_dir, &["frontier", "--dataset", &dataset, "--grid", grid.to_str().unwrap()]).await, 0);
    let frontier = store.list("frontiers").unwrap().pop().expect("frontier stored");
    assert_eq!(store.get_frontier(&frontier).unwrap().points.len(), 2);

    let prompt = "equal outcomes across groups, lenient fairness, epsilon at least 0.5, accuracy at least 50%";
    assert_eq!(fairplai(&store_dir, &["translate", "--prompt", prompt, "--attributes", "g"]).await, 0);
    assert_eq!(fairplai(&store_dir, &["select", "--frontier", &frontier, "--prompt", prompt]).await, 0);
    let contract = store.list("contracts").unwrap().pop().expect("contract stored");
    assert!(store.get_contract(&contract).unwrap().chosen.is_some());
    assert_eq!(fairplai(&store_dir, &["audit", "--contract", &contract]).await, 0);
    assert_eq!(fairplai(&store_dir, &["report", "--frontier", &frontier, "--format", "json"]).await, 0);

    let path = store.contract_path(&contract);
    let mut bytes = std::fs::read(&path).unwrap();
    let at = bytes.iter().position(|b| *b == b':').unwrap() + 2;
    bytes[at] ^= 0x01;
    std::fs::write(&path, bytes).unwrap();
    let tampered = run(Cli::try_parse_from(["fairplai", "--store", store_dir.to_str().unwrap(), "audit", "--contract", &contract]).unwrap()).await;
    assert!(!matches!(tampered, Ok(0)), "tampered contract must not audit clean");
}
