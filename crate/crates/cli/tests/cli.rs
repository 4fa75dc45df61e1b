//! End-to-end command line tests: every stage of the pipeline driven through
//! the binary, plus exit codes, seed plumbing, and the HTTP service.

use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::time::{Duration, Instant};

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_ruletwin"));
    cmd.env_remove("RULETWIN_SEED")
        .env_remove("RULETWIN_PORT")
        .env_remove("RULETWIN_REPORT_DIR");
    cmd
}

fn ok(output: &Output) -> &Output {
    assert!(
        output.status.success(),
        "command failed:\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
    output
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("read {}: {e}", path.display()))
}

/// Generate schema, two rule-set versions, and a labelled corpus under `dir`.
struct Fixture {
    schema: PathBuf,
    rules_v1: PathBuf,
    rules_v2: PathBuf,
    pool: PathBuf,
    train_data: PathBuf,
}

fn fixture(dir: &Path) -> Fixture {
    let schema = dir.join("schema.json");
    let rules_v1 = dir.join("rules-v1.json");
    let rules_v2 = dir.join("rules-v2.json");
    let pool = dir.join("pool.jsonl");
    let train_messages = dir.join("train-messages.jsonl");
    let train_data = dir.join("train.jsonl");

    ok(&bin().args(["gen-schema", "--out"]).arg(&schema).output().unwrap());
    ok(&bin()
        .args(["--seed", "3", "gen-rules", "--count", "6", "--version", "v1"])
        .arg("--schema")
        .arg(&schema)
        .arg("--out")
        .arg(&rules_v1)
        .output()
        .unwrap());
    ok(&bin()
        .args(["--seed", "3", "evolve-rules", "--additions", "2", "--version", "v2"])
        .arg("--schema")
        .arg(&schema)
        .arg("--base")
        .arg(&rules_v1)
        .arg("--out")
        .arg(&rules_v2)
        .output()
        .unwrap());
    ok(&bin()
        .args(["--seed", "3", "gen-messages", "--count", "60", "--violation-rate", "0.4"])
        .arg("--schema")
        .arg(&schema)
        .arg("--rules")
        .arg(&rules_v1)
        .arg("--out")
        .arg(&train_messages)
        .output()
        .unwrap());
    ok(&bin()
        .arg("label")
        .arg("--schema")
        .arg(&schema)
        .arg("--messages")
        .arg(&train_messages)
        .arg("--rules")
        .arg(&rules_v1)
        .arg("--out")
        .arg(&train_data)
        .output()
        .unwrap());
    ok(&bin()
        .args(["--seed", "11", "gen-messages", "--count", "40", "--violation-rate", "0.4"])
        .arg("--schema")
        .arg(&schema)
        .arg("--rules")
        .arg(&rules_v2)
        .arg("--out")
        .arg(&pool)
        .output()
        .unwrap());
    Fixture { schema, rules_v1, rules_v2, pool, train_data }
}

fn train_twin(dir: &Path, f: &Fixture) -> PathBuf {
    let model = dir.join("twin-v1");
    ok(&bin()
        .args([
            "--seed", "3", "train", "--version", "v1", "--arch", "tiny", "--epochs", "2",
            "--no-early-stopping",
        ])
        .arg("--schema")
        .arg(&f.schema)
        .arg("--data")
        .arg(&f.train_data)
        .arg("--out")
        .arg(&model)
        .output()
        .unwrap());
    model
}

#[test]
fn pipeline_stages_chain_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let f = fixture(dir.path());
    let model = train_twin(dir.path(), &f);

    // Selection alone.
    let selection = dir.path().join("selection.json");
    ok(&bin()
        .args(["--seed", "3", "select", "--population", "10", "--evals", "300", "--budget", "6"])
        .arg("--schema")
        .arg(&f.schema)
        .arg("--model")
        .arg(&model)
        .arg("--source-rules")
        .arg(&f.rules_v1)
        .arg("--pool")
        .arg(&f.pool)
        .arg("--out")
        .arg(&selection)
        .output()
        .unwrap());
    let report: serde_json::Value = serde_json::from_str(&read(&selection)).unwrap();
    assert!(report["front"].as_array().unwrap().len() >= 1);
    assert!(report["objectives"]["ss"].as_u64().unwrap() >= 2);

    // Full evolution against the v2 rules, in process.
    let out_model = dir.path().join("twin-v2");
    let evo_report = dir.path().join("evolution.json");
    ok(&bin()
        .args([
            "--seed", "3", "evolve", "--population", "10", "--evals", "300", "--budget", "6",
            "--epochs", "2", "--batch-size", "8",
        ])
        .arg("--schema")
        .arg(&f.schema)
        .arg("--model")
        .arg(&model)
        .arg("--source-rules")
        .arg(&f.rules_v1)
        .arg("--target-rules")
        .arg(&f.rules_v2)
        .arg("--pool")
        .arg(&f.pool)
        .arg("--out-model")
        .arg(&out_model)
        .arg("--report")
        .arg(&evo_report)
        .output()
        .unwrap());
    let evo: serde_json::Value = serde_json::from_str(&read(&evo_report)).unwrap();
    let queries = evo["query_count"].as_u64().unwrap();
    assert!(queries >= 2);

    // Baseline with the subset size the evolution chose.
    let rs_model = dir.path().join("twin-rs");
    let rs_report = dir.path().join("baseline.json");
    ok(&bin()
        .args([
            "--seed", "3", "baseline", "--mode", "rs", "--subset-size",
        ])
        .arg(evo["chosen"]["objectives"]["ss"].as_u64().unwrap_or(4).to_string())
        .args(["--population", "10", "--evals", "300", "--budget", "6", "--epochs", "2"])
        .arg("--schema")
        .arg(&f.schema)
        .arg("--model")
        .arg(&model)
        .arg("--source-rules")
        .arg(&f.rules_v1)
        .arg("--target-rules")
        .arg(&f.rules_v2)
        .arg("--pool")
        .arg(&f.pool)
        .arg("--out-model")
        .arg(&rs_model)
        .arg("--report")
        .arg(&rs_report)
        .output()
        .unwrap());

    // Evaluate the evolved twin on a target-labelled corpus, whole and
    // restricted to the rules that already existed in v1.
    let eval_messages = dir.path().join("eval-messages.jsonl");
    let eval_data = dir.path().join("eval.jsonl");
    ok(&bin()
        .args(["--seed", "21", "gen-messages", "--count", "30"])
        .arg("--schema")
        .arg(&f.schema)
        .arg("--rules")
        .arg(&f.rules_v2)
        .arg("--out")
        .arg(&eval_messages)
        .output()
        .unwrap());
    ok(&bin()
        .arg("label")
        .arg("--schema")
        .arg(&f.schema)
        .arg("--messages")
        .arg(&eval_messages)
        .arg("--rules")
        .arg(&f.rules_v2)
        .arg("--out")
        .arg(&eval_data)
        .output()
        .unwrap());
    let metrics = dir.path().join("metrics.json");
    let out = ok(&bin()
        .arg("evaluate")
        .arg("--schema")
        .arg(&f.schema)
        .arg("--model")
        .arg(&out_model)
        .arg("--data")
        .arg(&eval_data)
        .arg("--out")
        .arg(&metrics)
        .output()
        .unwrap())
    .stdout
    .clone();
    // Stdout carries the config announcement first, then the report.
    let text = String::from_utf8(out).unwrap();
    let json = text.splitn(2, '\n').nth(1).unwrap();
    let report: serde_json::Value = serde_json::from_str(json).unwrap();
    let f1 = report["macro_f1"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&f1));
    let base_only = ok(&bin()
        .arg("evaluate")
        .arg("--schema")
        .arg(&f.schema)
        .arg("--model")
        .arg(&out_model)
        .arg("--data")
        .arg(&eval_data)
        .arg("--base-of")
        .arg(&f.rules_v1)
        .output()
        .unwrap())
    .stdout
    .clone();
    let text = String::from_utf8(base_only).unwrap();
    let json = text.splitn(2, '\n').nth(1).unwrap();
    let base: serde_json::Value = serde_json::from_str(json).unwrap();
    assert_eq!(base["scope"], "base_rules");
}

#[test]
fn evolution_reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let f = fixture(dir.path());
    let model = train_twin(dir.path(), &f);
    let mut reports = Vec::new();
    for run in 0..2 {
        let out_model = dir.path().join(format!("twin-{run}"));
        let report = dir.path().join(format!("evolution-{run}.json"));
        ok(&bin()
            .args([
                "--seed", "9", "evolve", "--population", "10", "--evals", "300", "--budget",
                "6", "--epochs", "2",
            ])
            .arg("--schema")
            .arg(&f.schema)
            .arg("--model")
            .arg(&model)
            .arg("--source-rules")
            .arg(&f.rules_v1)
            .arg("--target-rules")
            .arg(&f.rules_v2)
            .arg("--pool")
            .arg(&f.pool)
            .arg("--out-model")
            .arg(&out_model)
            .arg("--report")
            .arg(&report)
            .output()
            .unwrap());
        reports.push(read(&report));
    }
    assert_eq!(reports[0], reports[1]);
}

#[test]
fn seed_controls_rule_generation() {
    let dir = tempfile::tempdir().unwrap();
    let schema = dir.path().join("schema.json");
    ok(&bin().args(["gen-schema", "--out"]).arg(&schema).output().unwrap());
    let gen = |seed_args: &mut Command, out: &Path| {
        ok(&seed_args
            .args(["gen-rules", "--count", "5", "--version", "v1"])
            .arg("--schema")
            .arg(&schema)
            .arg("--out")
            .arg(out)
            .output()
            .unwrap());
    };
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    let c = dir.path().join("c.json");
    let d = dir.path().join("d.json");
    gen(bin().args(["--seed", "1"]), &a);
    gen(bin().args(["--seed", "1"]), &b);
    gen(bin().args(["--seed", "2"]), &c);
    gen(bin().env("RULETWIN_SEED", "1"), &d);
    assert_eq!(read(&a), read(&b), "same seed, same rules");
    assert_ne!(read(&a), read(&c), "different seed, different rules");
    assert_eq!(read(&a), read(&d), "environment seed equals flag seed");
}

#[test]
fn config_file_feeds_defaults_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let schema = dir.path().join("schema.json");
    ok(&bin().args(["gen-schema", "--out"]).arg(&schema).output().unwrap());
    let cfg = dir.path().join("config.json");
    std::fs::write(&cfg, r#"{ "seed": 4 }"#).unwrap();
    let from_cfg = dir.path().join("from-cfg.json");
    let from_flag = dir.path().join("from-flag.json");
    let overridden = dir.path().join("overridden.json");
    let gen = |cmd: &mut Command, out: &Path| {
        ok(&cmd
            .args(["gen-rules", "--count", "5", "--version", "v1"])
            .arg("--schema")
            .arg(&schema)
            .arg("--out")
            .arg(out)
            .output()
            .unwrap());
    };
    gen(bin().arg("--config").arg(&cfg), &from_cfg);
    gen(bin().args(["--seed", "4"]), &from_flag);
    gen(bin().arg("--config").arg(&cfg).args(["--seed", "8"]), &overridden);
    assert_eq!(read(&from_cfg), read(&from_flag));
    assert_ne!(read(&from_cfg), read(&overridden));
}

#[test]
fn errors_exit_nonzero_with_coded_message() {
    let out = bin()
        .args(["gen-rules", "--count", "5", "--version", "v1", "--schema"])
        .arg("/definitely/not/here.json")
        .arg("--out")
        .arg("/tmp/unused.json")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.starts_with("error: "), "stderr was: {stderr}");
}

#[test]
fn gradcheck_passes_from_the_command_line() {
    let out = ok(&bin()
        .args(["--seed", "5", "gradcheck", "--modules", "3"])
        .output()
        .unwrap())
    .stdout
    .clone();
    let text = String::from_utf8_lossy(&out);
    assert!(text.contains("gradcheck: worst"), "stdout was: {text}");
}

struct ChildGuard(std::process::Child);

impl Drop for ChildGuard {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn free_port() -> u16 {
    std::net::TcpListener::bind(("127.0.0.1", 0)).unwrap().local_addr().unwrap().port()
}

#[test]
fn served_rules_match_in_process_labelling() {
    let dir = tempfile::tempdir().unwrap();
    let f = fixture(dir.path());
    let port = free_port();
    let child = bin()
        .arg("serve")
        .arg("--rules")
        .arg(&f.rules_v2)
        .args(["--port", &port.to_string()])
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let _guard = ChildGuard(child);
    let base = format!("http://127.0.0.1:{port}");
    let client = reqwest::blocking::Client::new();
    let deadline = Instant::now() + Duration::from_secs(15);
    loop {
        match client.get(format!("{base}/version")).send() {
            Ok(r) if r.status().is_success() => break,
            _ if Instant::now() > deadline => panic!("service did not come up"),
            _ => std::thread::sleep(Duration::from_millis(100)),
        }
    }

    // /version reports the rule ids.
    let version: serde_json::Value =
        client.get(format!("{base}/version")).send().unwrap().json().unwrap();
    assert_eq!(version["version"], "v2");
    assert_eq!(version["rule_ids"].as_array().unwrap().len(), 8);

    // Labelling through the service equals labelling in process.
    let via_http = dir.path().join("http.jsonl");
    let via_rules = dir.path().join("local.jsonl");
    ok(&bin()
        .arg("label")
        .arg("--schema")
        .arg(&f.schema)
        .arg("--messages")
        .arg(&f.pool)
        .arg("--url")
        .arg(&base)
        .arg("--out")
        .arg(&via_http)
        .output()
        .unwrap());
    ok(&bin()
        .arg("label")
        .arg("--schema")
        .arg(&f.schema)
        .arg("--messages")
        .arg(&f.pool)
        .arg("--rules")
        .arg(&f.rules_v2)
        .arg("--out")
        .arg(&via_rules)
        .output()
        .unwrap());
    assert_eq!(read(&via_http), read(&via_rules));

    // Malformed bodies are a client error, not a crash.
    let bad = client
        .post(format!("{base}/validate"))
        .header("content-type", "application/json")
        .body("{ not json")
        .send()
        .unwrap();
    assert_eq!(bad.status(), reqwest::StatusCode::BAD_REQUEST);
    let body: serde_json::Value = bad.json().unwrap();
    assert!(body["error"].is_string());

    // Still healthy afterwards.
    let again = client.get(format!("{base}/version")).send().unwrap();
    assert!(again.status().is_success());
}

#[test]
fn experiment_writes_report_and_renders_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("rq1-mini.json");
    let stdout = ok(&bin()
        .args(["experiment", "--rq", "rq1", "--preset", "mini", "--repeats", "3", "--out"])
        .arg(&out)
        .output()
        .unwrap())
    .stdout
    .clone();
    let text = String::from_utf8_lossy(&stdout);
    assert!(
        text.contains("method") && text.contains("f1"),
        "stdout was: {text}"
    );
    let report: serde_json::Value = serde_json::from_str(&read(&out)).unwrap();
    assert_eq!(report["rq"], "rq1");
    assert_eq!(report["repeats"], 3);
}
