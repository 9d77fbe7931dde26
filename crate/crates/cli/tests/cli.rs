use std::path::Path;
use std::process::{Command, Output};

fn cok(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cok"))
        .arg("--workdir")
        .arg(dir)
        .args(args)
        .env_remove("COK_API_TOKEN")
        .output()
        .expect("binary runs")
}

fn bundled_kg() -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/kg_5000.tsv").to_str().unwrap().to_owned()
}

fn prepared() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    for args in [&["ingest", "--input", &bundled_kg()][..], &["mine", "--min-support", "20"], &["compose"]] {
        let out = cok(dir.path(), args);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    dir
}

#[test]
fn bad_flags_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(cok(dir.path(), &["mine", "--bogus"]).status.code(), Some(1));
    assert_eq!(cok(dir.path(), &["compose", "--max-hop", "7"]).status.code(), Some(1));
    assert_eq!(cok(dir.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn missing_inputs_are_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = cok(dir.path(), &["mine"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("store.json"));
    assert_eq!(cok(dir.path(), &["ingest", "--input", "/nonexistent/kg.tsv"]).status.code(), Some(2));
}

#[test]
fn regular_setting_rejects_the_kg_oracle() {
    let dir = prepared();
    let out = cok(dir.path(), &["select", "--setting", "regular", "--oracle", "kg"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(cok(dir.path(), &["select", "--oracle", "probe"]).status.code(), Some(1));
}

#[test]
fn live_client_without_token_is_a_client_error() {
    let dir = prepared();
    let conf = dir.path().join("live.conf");
    std::fs::write(&conf, "client = live\n").unwrap();
    let out = cok(
        dir.path(),
        &["--config", conf.to_str().unwrap(), "select", "--setting", "regular", "--oracle", "probe"],
    );
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn regular_setting_uses_the_probe_table() {
    let dir = prepared();
    let table = dir.path().join("known.tsv");
    let kg = std::fs::read_to_string(bundled_kg()).unwrap();
    // The mock model knows every fact except citizenship.
    let known: String = kg.lines().filter(|l| !l.contains("\tcitizen_of\t")).map(|l| format!("{l}\n")).collect();
    std::fs::write(&table, known).unwrap();
    let out = cok(
        dir.path(),
        &["select", "--setting", "regular", "--oracle", "probe", "--probe-table", table.to_str().unwrap()],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let pool = std::fs::read_to_string(dir.path().join("pool.jsonl")).unwrap();
    assert!(!pool.is_empty());
    for line in pool.lines() {
        let rec: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(rec["head_fact"][1], "citizen_of");
        assert_eq!(rec["setting"], "regular");
    }
    assert!(!dir.path().join("anonymization.tsv").exists());
}

#[test]
fn manifest_records_stages_without_paths() {
    let dir = prepared();
    let text = std::fs::read_to_string(dir.path().join("manifest.json")).unwrap();
    let m: serde_json::Value = serde_json::from_str(&text).unwrap();
    for stage in ["ingest", "mine", "compose"] {
        assert!(m["stages"][stage]["outputs"].is_object(), "{stage}");
    }
    assert_eq!(m["stages"]["mine"]["params"]["min_support"], "20");
    assert!(!text.contains(dir.path().to_str().unwrap()));
    let stats = cok(dir.path(), &["stats"]);
    assert_eq!(String::from_utf8_lossy(&stats.stdout).lines().last(), Some("triples\t5000"));
}
