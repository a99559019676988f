//! End-to-end tests of the `pacq` binary: exit codes, reproducibility, and
//! the run/oracle coupling at the command-line level.

use std::path::PathBuf;
use std::process::{Command, Output};

fn pacq(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pacq")).args(args).output().expect("spawn pacq")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).to_string()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).to_string()
}

/// Generates the mini dataset once per test-process into a temp dir.
fn dataset() -> PathBuf {
    let dir = std::env::temp_dir().join(format!("pacq-cli-test-{}", std::process::id()));
    if !dir.join("schema.pac.sql").exists() {
        std::fs::create_dir_all(&dir).unwrap();
        let out = pacq(&[
            "gen",
            "--mini-tpch",
            "--rows",
            "4000",
            "--seed",
            "7",
            "--out",
            dir.to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{}", stderr(&out));
    }
    dir
}

fn schema_arg(dir: &std::path::Path) -> String {
    dir.join("schema.pac.sql").to_str().unwrap().to_string()
}

#[test]
fn gen_writes_all_tables_and_schema() {
    let dir = dataset();
    for f in ["customer.csv", "orders.csv", "lineitem.csv", "part.csv", "schema.pac.sql"] {
        assert!(dir.join(f).exists(), "missing {f}");
    }
}

#[test]
fn run_is_reproducible_for_a_fixed_seed() {
    let dir = dataset();
    let args = [
        "run",
        "--schema",
        &schema_arg(&dir),
        "--data",
        dir.to_str().unwrap(),
        "--query",
        "SELECT l_returnflag, SUM(l_quantity) AS q FROM lineitem GROUP BY l_returnflag ORDER BY l_returnflag",
        "--seed",
        "7",
    ];
    let a = pacq(&args);
    let b = pacq(&args);
    assert_eq!(a.status.code(), Some(0), "{}", stderr(&a));
    assert_eq!(a.stdout, b.stdout, "same seed must give identical bytes");

    let mut args_c = args;
    let last = args_c.len() - 1;
    args_c[last] = "8";
    let c = pacq(&args_c);
    assert_ne!(a.stdout, c.stdout, "different seeds draw different noise");
}

#[test]
fn rejected_query_exits_2_with_reason_code() {
    let dir = dataset();
    let out = pacq(&[
        "run",
        "--schema",
        &schema_arg(&dir),
        "--data",
        dir.to_str().unwrap(),
        "--query",
        "SELECT c_name, o_totalprice FROM customer JOIN orders ON o_custkey = c_custkey",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("ProtectedColumnRelease"), "{}", stderr(&out));
}

#[test]
fn inconspicuous_query_ignores_noise_flag_and_exits_0() {
    let dir = dataset();
    let base = [
        "run",
        "--schema",
        &schema_arg(&dir),
        "--data",
        dir.to_str().unwrap(),
        "--query",
        "SELECT p_brand, COUNT(*) AS n FROM part GROUP BY p_brand ORDER BY p_brand",
    ];
    let with_noise = pacq(&base);
    let mut no_noise_args = base.to_vec();
    no_noise_args.push("--no-noise");
    let no_noise = pacq(&no_noise_args);
    assert_eq!(with_noise.status.code(), Some(0));
    assert_eq!(with_noise.stdout, no_noise.stdout);
}

#[test]
fn run_and_oracle_agree_byte_for_byte() {
    let dir = dataset();
    let query = "SELECT o_orderstatus, SUM(o_totalprice) AS t, COUNT(*) AS n FROM orders \
                 GROUP BY o_orderstatus ORDER BY o_orderstatus";
    for seed in ["1", "2"] {
        let run = pacq(&[
            "run", "--schema", &schema_arg(&dir), "--data", dir.to_str().unwrap(),
            "--query", query, "--seed", seed,
        ]);
        let oracle = pacq(&[
            "oracle", "--schema", &schema_arg(&dir), "--data", dir.to_str().unwrap(),
            "--query", query, "--seed", seed,
        ]);
        assert_eq!(run.status.code(), Some(0), "{}", stderr(&run));
        assert_eq!(oracle.status.code(), Some(0), "{}", stderr(&oracle));
        assert_eq!(run.stdout, oracle.stdout, "seed {seed}");
    }
}

#[test]
fn explain_prints_plan_and_trace() {
    let dir = dataset();
    let out = pacq(&[
        "explain",
        "--schema",
        &schema_arg(&dir),
        "--query",
        "SELECT l_returnflag, SUM(l_quantity) AS q FROM lineitem GROUP BY l_returnflag",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("+ JoinAdded(lineitem\u{2192}orders)"), "{text}");
    assert!(text.contains("AggReplaced(fused sum)"), "{text}");
    assert!(text.contains("rewrites"), "{text}");
}

#[test]
fn explain_dump_plan_is_valid_json() {
    let dir = dataset();
    let out = pacq(&[
        "explain",
        "--schema",
        &schema_arg(&dir),
        "--query",
        "SELECT COUNT(*) AS n FROM lineitem",
        "--dump-plan",
        "json",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).expect("valid JSON plan");
    assert!(v.is_object());
}

#[test]
fn diff_json_round_trips_through_its_schema() {
    let dir = dataset();
    let out = pacq(&[
        "diff",
        "--schema",
        &schema_arg(&dir),
        "--data",
        dir.to_str().unwrap(),
        "--query",
        "SELECT l_returnflag, SUM(l_quantity) AS q FROM lineitem GROUP BY l_returnflag",
        "--key-cols",
        "1",
        "--seed",
        "3",
        "--json",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).expect("valid JSON report");
    for field in ["mape", "precision", "recall", "matched", "missing", "spurious"] {
        assert!(v.get(field).is_some(), "missing {field}");
    }
    assert_eq!(v["recall"], 1.0);
}

#[test]
fn mia_bound_matches_library_value() {
    let out = pacq(&["mia-bound", "--prior", "0.5", "--mi", "0.25"]);
    assert_eq!(out.status.code(), Some(0));
    let v: f64 = stdout(&out).trim().parse().unwrap();
    assert!((0.83..=0.85).contains(&v));

    // --cells x --per-cell composes linearly
    let out = pacq(&[
        "mia-bound", "--prior", "0.5", "--cells", "32", "--per-cell", "0.0078125", "--json",
    ]);
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert!((v["total_mi"].as_f64().unwrap() - 0.25).abs() < 1e-12);
}

#[test]
fn bench_emits_tier_csv() {
    let out = pacq(&[
        "bench", "--kernel", "count", "--rows", "200000", "--dist", "uniform_int",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = stdout(&out);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("kernel,tier,distribution,rows,groups,ns_per_row"));
    let tiers: Vec<&str> = lines.map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(tiers, vec!["naive", "predicated", "swar"]);
}

#[test]
fn suspicious_group_exits_2() {
    let dir = std::env::temp_dir().join(format!("pacq-susp-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    std::fs::write(
        dir.join("schema.pac.sql"),
        "CREATE PU TABLE users (u_id BIGINT, PAC_KEY(u_id));
         CREATE TABLE events (e_uid BIGINT, e_tag VARCHAR, e_val BIGINT,
             PAC_LINK(e_uid) REFERENCES users (u_id));",
    )
    .unwrap();
    let mut users = String::from("u_id\n");
    let mut events = String::from("e_uid,e_tag,e_val\n");
    for u in 0..10 {
        users.push_str(&format!("{u}\n"));
        for e in 0..80 {
            events.push_str(&format!("{u},tag{u},{}\n", e % 7));
        }
    }
    std::fs::write(dir.join("users.csv"), users).unwrap();
    std::fs::write(dir.join("events.csv"), events).unwrap();
    let out = pacq(&[
        "run",
        "--schema",
        dir.join("schema.pac.sql").to_str().unwrap(),
        "--data",
        dir.to_str().unwrap(),
        "--query",
        "SELECT e_tag, SUM(e_val) AS s FROM events GROUP BY e_tag",
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(stderr(&out).contains("SuspiciousGroup"), "{}", stderr(&out));
}

#[test]
fn user_errors_exit_1() {
    let out = pacq(&["run", "--schema", "/nonexistent.pac.sql", "--data", "/tmp", "--query", "SELECT 1"]);
    assert_eq!(out.status.code(), Some(1));
    let dir = dataset();
    let out = pacq(&[
        "run",
        "--schema",
        &schema_arg(&dir),
        "--data",
        dir.to_str().unwrap(),
        "--query",
        "SELECT FROM lineitem",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("syntax error"), "{}", stderr(&out));
}
