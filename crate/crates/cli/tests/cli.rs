use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

const REF_52M: &str = r#"{"blocks":[
  {"embed_dim":512,"ffn_dim":512,"depth":2},{"embed_dim":512,"ffn_dim":512,"depth":3},
  {"embed_dim":640,"ffn_dim":640,"depth":2},{"embed_dim":896,"ffn_dim":896,"depth":1}]}"#;
const REF_61M: &str = r#"{"blocks":[
  {"embed_dim":640,"ffn_dim":640,"depth":2},{"embed_dim":768,"ffn_dim":1152,"depth":2},
  {"embed_dim":896,"ffn_dim":896,"depth":2},{"embed_dim":1024,"ffn_dim":1024,"depth":2}]}"#;
const REF_64M: &str = r#"{"blocks":[
  {"embed_dim":640,"ffn_dim":960,"depth":3},{"embed_dim":896,"ffn_dim":1344,"depth":3},
  {"embed_dim":1024,"ffn_dim":1024,"depth":2},{"embed_dim":1024,"ffn_dim":1024,"depth":3}]}"#;
const SMALL_SPACE: &str = r#"{"embed_choices":[64,128,192],"ffn_choices":[128,256,384],
  "depth_choices":[1,2,3],"num_blocks":2}"#;

struct Env {
    dir: TempDir,
}

impl Env {
    fn new() -> Self {
        let env = Self {
            dir: TempDir::new().unwrap(),
        };
        env.write("m52.json", REF_52M);
        env.write("m61.json", REF_61M);
        env.write("m64.json", REF_64M);
        env.write("space.json", SMALL_SPACE);
        env
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn write(&self, name: &str, text: &str) -> PathBuf {
        let p = self.path(name);
        fs::write(&p, text).unwrap();
        p
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_entronas"))
            .args(args)
            .current_dir(self.dir.path())
            .env("ENTRONAS_TABLE_DIR", self.path("cache"))
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> Value {
        let out = self.run(args);
        assert!(
            out.status.success(),
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        serde_json::from_slice(&out.stdout).unwrap_or(Value::Null)
    }

    fn small_table(&self) -> PathBuf {
        let p = self.path("small-table.json");
        if !p.exists() {
            self.ok(&["build-table", "--space", "space.json", "--out", "small-table.json"]);
        }
        p
    }
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn read(p: &Path) -> Vec<u8> {
    fs::read(p).unwrap()
}

#[test]
fn cost_reports_reference_sizes() {
    let env = Env::new();
    let p = env.ok(&["cost", "--arch", "m52.json", "--metric", "params"]);
    let params = p["value"].as_f64().unwrap();
    assert!((params / 52e6 - 1.0).abs() <= 0.1, "{params}");
    assert_eq!(p["params"]["total"].as_f64().unwrap(), params);

    let f = env.ok(&["cost", "--arch", "m52.json", "--metric", "flops", "--seq-len", "1024"]);
    let flops = f["value"].as_f64().unwrap();
    assert!((flops / 60e9 - 1.0).abs() <= 0.2, "{flops}");
    assert!(f.get("feasible").is_none());
}

#[test]
fn cost_with_limit_reports_verdict() {
    let env = Env::new();
    let yes = env.ok(&["cost", "--arch", "m52.json", "--metric", "params", "--limit", "6e7"]);
    assert_eq!(yes["feasible"], Value::Bool(true));
    let no = env.ok(&["cost", "--arch", "m52.json", "--metric", "params", "--limit", "1e6"]);
    assert_eq!(no["feasible"], Value::Bool(false));
    let table = env.run(&["cost", "--arch", "m52.json", "--metric", "flops", "--format", "table"]);
    assert!(String::from_utf8_lossy(&table.stdout).contains("per_block_shared"));
}

#[test]
fn cost_usage_errors() {
    let env = Env::new();
    assert_eq!(
        code(&env.run(&["cost", "--arch", "m52.json", "--metric", "bananas"])),
        2
    );
    assert_eq!(
        code(&env.run(&["cost", "--arch", "m52.json", "--metric", "latency"])),
        2
    );
    assert_eq!(
        code(&env.run(&["cost", "--arch", "missing.json", "--metric", "params"])),
        3
    );
    assert_eq!(
        code(&env.run(&["cost", "--arch", "m52.json", "--metric", "flops", "--seq-len", "4096"])),
        2
    );
}

#[test]
fn score_handles_reference_configs_and_bad_input() {
    let env = Env::new();
    env.ok(&["build-table"]);
    for arch in ["m52.json", "m61.json"] {
        let s = env.ok(&["score", "--arch", arch]);
        assert!(s["total"].as_f64().unwrap() > 0.0);
        assert_eq!(s["per_block"].as_array().unwrap().len(), 4);
    }
    // off-grid FFN widths only have direct estimates
    let direct = env.ok(&["score", "--arch", "m64.json", "--direct"]);
    assert!(direct["total"].as_f64().unwrap() > 0.0);

    env.write("bad.json", "{\"blocks\": [");
    let out = env.run(&["score", "--arch", "bad.json"]);
    assert_eq!(code(&out), 2);
    env.write("v2.json", &REF_52M.replacen('{', "{\"schema\":2,", 1));
    assert_eq!(code(&env.run(&["score", "--arch", "v2.json"])), 2);
}

#[test]
fn score_direct_cross_check() {
    let env = Env::new();
    let table = env.small_table();
    env.write(
        "small_arch.json",
        r#"{"blocks":[{"embed_dim":64,"ffn_dim":256,"depth":2},{"embed_dim":128,"ffn_dim":384,"depth":1}]}"#,
    );
    let v = env.ok(&[
        "score",
        "--arch",
        "small_arch.json",
        "--table",
        table.to_str().unwrap(),
        "--direct",
    ]);
    assert!(v["relative_error"].as_f64().unwrap() <= 0.01);
    assert_eq!(v["within_tolerance"], Value::Bool(true));
}

#[test]
fn build_table_is_idempotent_and_guards_conflicts() {
    let env = Env::new();
    let table = env.small_table();
    let first = read(&table);
    assert!(env.path("small-table.json.manifest.json").exists());

    env.ok(&["build-table", "--space", "space.json", "--out", "small-table.json"]);
    assert_eq!(read(&table), first, "matching rebuild must not rewrite");

    env.write("other.json", r#"{"seed": 7}"#);
    let clash = env.run(&[
        "build-table",
        "--space",
        "space.json",
        "--entropy-config",
        "other.json",
        "--out",
        "small-table.json",
    ]);
    assert_eq!(code(&clash), 1);
    assert!(String::from_utf8_lossy(&clash.stderr).contains("--force"));
    env.ok(&[
        "build-table",
        "--space",
        "space.json",
        "--entropy-config",
        "other.json",
        "--out",
        "small-table.json",
        "--force",
    ]);
    assert_ne!(read(&table), first);
}

#[test]
fn corrupt_table_is_refused() {
    let env = Env::new();
    let table = env.small_table();
    let text = String::from_utf8(read(&table)).unwrap();
    env.write("broken.json", &text[..text.len() / 2]);
    let out = env.run(&["score", "--arch", "m52.json", "--table", "broken.json"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("broken.json"));

    let tampered = text.replacen("\"entries\":[[", "\"entries\":[[1,1,-5.0],[", 1);
    env.write("tampered.json", &tampered);
    assert_eq!(
        code(&env.run(&["score", "--arch", "m52.json", "--table", "tampered.json"])),
        2
    );
}

#[test]
fn search_writes_feasible_result_and_manifest() {
    let env = Env::new();
    let out = env.run(&[
        "search",
        "--metric",
        "flops",
        "--limit",
        "60e9",
        "--iters",
        "20",
        "--pop",
        "64",
        "--parents",
        "8",
        "--out-dir",
        "run",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["best_arch.json", "result.json", "history.csv", "manifest.json"] {
        assert!(env.path("run").join(f).exists(), "{f}");
    }
    let cost = env.ok(&[
        "cost",
        "--arch",
        "run/best_arch.json",
        "--metric",
        "flops",
        "--limit",
        "60e9",
    ]);
    assert_eq!(cost["feasible"], Value::Bool(true));

    let manifest: Value = serde_json::from_slice(&read(&env.path("run/manifest.json"))).unwrap();
    assert_eq!(manifest["command"], "search");
    assert_eq!(manifest["config"]["search"]["iterations"], 20);
    assert_eq!(manifest["config"]["search"]["init_rejection_cap"], 100_000);
    let outputs = manifest["outputs"].as_array().unwrap();
    assert_eq!(outputs.len(), 3);
    assert!(outputs.iter().all(|o| o["sha256"].as_str().unwrap().len() == 64));
    let history = String::from_utf8(read(&env.path("run/history.csv"))).unwrap();
    assert!(history.starts_with("generation,best_score,mean_score,best_cost\n"));
    assert_eq!(history.lines().count(), 22);
}

#[test]
fn search_is_byte_identical_across_runs_and_threads() {
    let env = Env::new();
    let table = env.small_table();
    let t = table.to_str().unwrap();
    let base = [
        "search",
        "--space",
        "space.json",
        "--table",
        t,
        "--metric",
        "params",
        "--limit",
        "4.05e7",
        "--iters",
        "30",
        "--pop",
        "32",
        "--parents",
        "8",
        "--seed",
        "5",
    ];
    let mut runs = Vec::new();
    for (dir, threads) in [("a", "1"), ("b", "1"), ("c", "4")] {
        let mut args = base.to_vec();
        args.extend(["--threads", threads, "--out-dir", dir]);
        env.ok(&args);
        runs.push(["best_arch.json", "result.json", "history.csv"].map(|f| read(&env.path(dir).join(f))));
    }
    assert_eq!(runs[0], runs[1]);
    assert_eq!(runs[0], runs[2]);
}

#[test]
fn search_failures_have_distinct_exit_codes() {
    let env = Env::new();
    let table = env.small_table();
    let t = table.to_str().unwrap();
    let infeasible = env.run(&[
        "search",
        "--space",
        "space.json",
        "--table",
        t,
        "--metric",
        "params",
        "--limit",
        "1000",
        "--out-dir",
        "x",
    ]);
    assert_eq!(code(&infeasible), 1);
    assert!(String::from_utf8_lossy(&infeasible.stderr).contains("infeasible"));

    let no_device = env.run(&[
        "search",
        "--space",
        "space.json",
        "--table",
        t,
        "--metric",
        "latency",
        "--limit",
        "10",
        "--out-dir",
        "x",
    ]);
    assert_eq!(code(&no_device), 2);
    let no_limit = env.run(&[
        "search",
        "--space",
        "space.json",
        "--table",
        t,
        "--metric",
        "flops",
        "--out-dir",
        "x",
    ]);
    assert_eq!(code(&no_limit), 2);
}

#[test]
fn flags_override_config_file() {
    let env = Env::new();
    let table = env.small_table();
    let t = table.to_str().unwrap();
    env.write(
        "search.json",
        r#"{"iterations": 7, "population_size": 16, "parent_size": 4, "seed": 3, "metric": "params", "limit": 4.05e7}"#,
    );
    env.ok(&[
        "search",
        "--space",
        "space.json",
        "--table",
        t,
        "--config",
        "search.json",
        "--seed",
        "9",
        "--out-dir",
        "r",
    ]);
    let m: Value = serde_json::from_slice(&read(&env.path("r/manifest.json"))).unwrap();
    let s = &m["config"]["search"];
    assert_eq!(s["iterations"], 7);
    assert_eq!(s["population_size"], 16);
    assert_eq!(s["seed"], 9);
    assert_eq!(s["budget"]["metric"], "params");
    assert_eq!(s["budget"]["seq_len"], 1024);

    env.write("typo.json", r#"{"iteratons": 7}"#);
    let out = env.run(&["search", "--table", t, "--config", "typo.json", "--out-dir", "r"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn latency_search_uses_device_profile() {
    let env = Env::new();
    let table = env.small_table();
    let mut entries = Vec::new();
    for e in [64, 128, 192] {
        for f in [128, 256, 384] {
            entries.push(format!(
                r#"{{"embed_dim":{e},"ffn_dim":{f},"ms":{}}}"#,
                0.01 * f64::from(e + f)
            ));
        }
    }
    env.write(
        "device.json",
        &format!(
            r#"{{"device_name":"test","seq_len":128,"overhead_ms":1.0,"entries":[{}]}}"#,
            entries.join(",")
        ),
    );
    env.ok(&[
        "search",
        "--space",
        "space.json",
        "--table",
        table.to_str().unwrap(),
        "--metric",
        "latency",
        "--limit",
        "20",
        "--device",
        "device.json",
        "--iters",
        "10",
        "--pop",
        "16",
        "--parents",
        "4",
        "--out-dir",
        "lat",
    ]);
    let c = env.ok(&[
        "cost",
        "--arch",
        "lat/best_arch.json",
        "--metric",
        "latency",
        "--device",
        "device.json",
        "--limit",
        "20",
    ]);
    assert_eq!(c["feasible"], Value::Bool(true));
    assert!(c["latency_ms"].as_f64().unwrap() <= 20.0);
}

#[test]
fn baselines() {
    let env = Env::new();
    let table = env.small_table();
    let t = table.to_str().unwrap();
    let common = [
        "--space",
        "space.json",
        "--table",
        t,
        "--metric",
        "flops",
        "--limit",
        "1e15",
    ];

    let mut args = vec!["baseline", "--kind", "scale-depth"];
    args.extend(common);
    let depth = env.ok(&args);
    assert!(depth["arch"]["blocks"]
        .as_array()
        .unwrap()
        .iter()
        .all(|b| b["depth"] == 3));

    let mut args = vec!["baseline", "--kind", "scale-width"];
    args.extend(common);
    let width = env.ok(&args);
    assert!(width["arch"]["blocks"]
        .as_array()
        .unwrap()
        .iter()
        .all(|b| b["embed_dim"] == 192));

    let mut args = vec![
        "baseline",
        "--kind",
        "random",
        "--iters",
        "5",
        "--pop",
        "16",
        "--parents",
        "4",
    ];
    args.extend(common);
    assert_eq!(env.ok(&args), env.ok(&args));

    let mut args = vec![
        "baseline",
        "--kind",
        "decoder-param",
        "--iters",
        "5",
        "--pop",
        "16",
        "--parents",
        "4",
    ];
    args.extend(common);
    args.extend(["--manifest", "bm.json"]);
    let proxy = env.ok(&args);
    assert_eq!(proxy["kind"], "decoder-param");
    assert!(env.path("bm.json").exists());
}
