use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn sdoh(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sdoh"))
        .current_dir(dir)
        .env_remove("SDOHX_CONFIG")
        .env_remove("RUST_LOG")
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = sdoh(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = sdoh(dir.path(), &["frobnicate"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn every_subcommand_has_help() {
    let dir = tempfile::tempdir().unwrap();
    for sub in [
        "ingest", "validate", "split", "select", "synth", "train-ner", "train-re", "predict", "score", "adapt",
        "aggregate", "kappa",
    ] {
        let text = ok(dir.path(), &[sub, "--help"]);
        assert!(text.contains("--config") && text.contains("--schema"), "{sub}");
    }
}

#[test]
fn split_of_629_document_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let mut manifest = String::from("doc_id\tpatient_id\tdomain\n");
    for i in 0..629 {
        manifest.push_str(&format!("n{i:03}\tp{i:03}\tlung cancer\n"));
    }
    fs::write(dir.path().join("m.tsv"), manifest).unwrap();
    let args = ["split", "--manifest", "m.tsv", "--ratio", "0.8", "--val", "0.10", "--seed", "7"];
    let out = ok(dir.path(), &args);
    let count = |part: &str| out.lines().filter(|l| l.ends_with(&format!("\t{part}"))).count();
    assert_eq!((count("train"), count("validation"), count("test")), (452, 51, 126));
    assert_eq!(ok(dir.path(), &args), out);
}

#[test]
fn config_file_and_flag_precedence() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["synth", "--n", "200", "--output", "c"]);
    fs::write(dir.path().join("run.json"), r#"{"split": {"train": 0.5, "val": 0.1, "seed": 3}}"#).unwrap();
    let parts = |out: &str, p: &str| out.lines().filter(|l| l.ends_with(&format!("\t{p}"))).count();

    let from_env = Command::new(env!("CARGO_BIN_EXE_sdoh"))
        .current_dir(dir.path())
        .env("SDOHX_CONFIG", "run.json")
        .args(["split", "--corpus", "c"])
        .output()
        .unwrap();
    let out = String::from_utf8(from_env.stdout).unwrap();
    assert_eq!((parts(&out, "train"), parts(&out, "validation"), parts(&out, "test")), (90, 10, 100));

    let out = ok(dir.path(), &["split", "--corpus", "c", "--config", "run.json", "--ratio", "0.8"]);
    assert_eq!(parts(&out, "test"), 40);

    fs::write(dir.path().join("bad.json"), r#"{"nonsense": 1}"#).unwrap();
    assert_eq!(code(&sdoh(dir.path(), &["split", "--corpus", "c", "--config", "bad.json"])), 2);
}

#[test]
fn end_to_end_workflow() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["synth", "--n", "260", "--seed", "5", "--output", "train"]);
    ok(d, &["split", "--corpus", "train", "--output", "split.tsv"]);
    ok(d, &["train-ner", "--corpus", "train", "--split", "split.tsv", "--output", "ner.model"]);
    ok(d, &["train-re", "--corpus", "train", "--split", "split.tsv", "--output", "re.model"]);
    let again = ["train-ner", "--corpus", "train", "--split", "split.tsv", "--output", "ner2.model"];
    ok(d, &again);
    assert_eq!(fs::read(d.join("ner.model")).unwrap(), fs::read(d.join("ner2.model")).unwrap());

    ok(d, &["synth", "--n", "30", "--seed", "6", "--prefix", "t", "--docs-per-patient", "3", "--output", "test"]);
    ok(d, &["predict", "--input", "test", "--output", "pred", "--ner", "ner.model", "--re", "re.model"]);
    let records = fs::read_to_string(d.join("pred/records.tsv")).unwrap();
    assert!(records.lines().count() > 30);
    ok(d, &["predict", "--link-only", "--input", "test", "--output", "linked", "--re", "re.model"]);

    let table = ok(d, &["score", "--gold", "test", "--pred", "pred", "--linked", "linked", "--mode", "both"]);
    let rows: Vec<&str> = table.lines().collect();
    assert_eq!(rows.len(), 5);
    assert!(rows[0].contains("Strict") && rows[0].contains("Lenient"));
    assert!(rows[2].starts_with("Concept extraction"));
    assert!(rows[3].starts_with("Relation classification"));
    assert!(rows[4].starts_with("End-to-end"));

    fs::write(d.join("roster.txt"), (0..10).map(|p| format!("t-pt{p:05}\n")).collect::<String>()).unwrap();
    let rates = ok(d, &["aggregate", "--records", "pred/records.tsv", "--roster", "roster.txt", "--name", "Test"]);
    assert!(rates.starts_with("SDoH\tTest\t\n\t# Concepts\tRate\n"));
    assert_eq!(rates.lines().count(), 2 + 19);

    let kappa = ok(d, &["kappa", "--a", "test", "--b", "test"]);
    assert!(kappa.contains("kappa\t1.0000"));
}

#[test]
fn error_categories() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["synth", "--n", "5", "--output", "c"]);
    fs::write(d.join("junk.model"), "not a model").unwrap();
    let out = sdoh(d, &["predict", "--input", "c", "--output", "p", "--ner", "junk.model", "--re", "junk.model"]);
    assert_eq!(code(&out), 4);
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("model error"));

    fs::write(d.join("c/doc00000.ann"), "T1\tNot_a_category 0 2\tPt\n").unwrap();
    let out = sdoh(d, &["validate", "--corpus", "c"]);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("data error"));

    let out = sdoh(d, &["validate", "--corpus", "nowhere"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn synth_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["synth", "--n", "20", "--seed", "9", "--shift", "0.5", "--output", "a"]);
    ok(d, &["synth", "--n", "20", "--seed", "9", "--shift", "0.5", "--output", "b"]);
    for entry in fs::read_dir(d.join("a")).unwrap() {
        let name = entry.unwrap().file_name();
        assert_eq!(fs::read(d.join("a").join(&name)).unwrap(), fs::read(d.join("b").join(&name)).unwrap());
    }
}

#[test]
fn adapt_compares_three_strategies() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["synth", "--n", "200", "--seed", "1", "--output", "src"]);
    ok(d, &["synth", "--n", "20", "--seed", "2", "--prefix", "v", "--output", "src_val"]);
    ok(d, &["train-ner", "--train", "src", "--val", "src_val", "--output", "ner.model"]);
    ok(d, &["train-re", "--train", "src", "--val", "src_val", "--output", "re.model"]);
    for (name, n, seed) in [("tt", "80", "3"), ("tv", "15", "4"), ("ts", "40", "5")] {
        ok(d, &["synth", "--n", n, "--seed", seed, "--shift", "0.7", "--prefix", name, "--output", name]);
    }
    let base = [
        "adapt", "--ner", "ner.model", "--re", "re.model", "--source", "src", "--target-train", "tt",
        "--target-val", "tv", "--target-test", "ts",
    ];
    let mut args = base.to_vec();
    args.extend(["--json", "adapt.json"]);
    let out = ok(d, &args);
    for label in ["Direct evaluation", "Fine-tuning", "Merge"] {
        assert_eq!(out.lines().filter(|l| l.starts_with(label)).count(), 2, "{label}\n{out}");
    }
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("adapt.json")).unwrap()).unwrap();
    assert_eq!(json.as_array().unwrap().len(), 3);

    let mut args = base.to_vec();
    args.extend(["--strategy", "direct"]);
    let out = ok(d, &args);
    assert_eq!(out.lines().filter(|l| l.starts_with("Direct evaluation")).count(), 2);
    assert!(!out.contains("Fine-tuning"));
}
