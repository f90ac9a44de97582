use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

use plate::config::ScenarioConfig;
use plate::covgraph::quantize;
use plate::qdp::qdp;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn plate(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_plate")).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn saved_graph_reproduces_the_in_process_schedule() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = configs().join("tracking.json");
    let graph = dir.path().join("graph.json");
    let out = dir.path().join("qdp.json");
    assert!(plate(&["build-graph", "-c", s(&cfg_path), "-o", s(&graph)]).status.success());
    assert!(plate(&["schedule-qdp", "-c", s(&cfg_path), "-o", s(&out), "--graph", s(&graph)]).status.success());

    let cfg = ScenarioConfig::load(&cfg_path).unwrap();
    let sc = cfg.scenario().unwrap();
    let g = cfg.graph.build(&sc).unwrap();
    let sol = qdp(quantize(&sc.model().p0, &g).unwrap(), cfg.cost.tf, cfg.cost.lambda, &g, &sc.methods, &sc.dynamics).unwrap();
    let report = json(&out);
    let ids: Vec<usize> = report["methods"].as_array().unwrap().iter().map(|v| v.as_u64().unwrap() as usize).collect();
    assert_eq!(ids, sol.schedule.methods);
    assert_eq!(report["graph"]["graph_cost"].as_f64().unwrap(), sol.cost);

    let fresh = dir.path().join("qdp-fresh.json");
    assert!(plate(&["schedule-qdp", "-c", s(&cfg_path), "-o", s(&fresh)]).status.success());
    assert_eq!(std::fs::read(&out).unwrap(), std::fs::read(&fresh).unwrap());
}

#[test]
fn exact_schedule_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("exact.json");
    let o = plate(&["schedule-exact", "-c", s(&configs().join("tracking.json")), "-o", s(&out), "--tf", "0.6"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v = json(&out);
    let epochs = v["epochs"].as_array().unwrap();
    assert!(epochs.last().unwrap().as_f64().unwrap() >= 0.6 - 1e-12);
    let c = &v["cost"];
    let sum = c["covariance"].as_f64().unwrap() + c["penalty"].as_f64().unwrap();
    assert!((sum - c["total"].as_f64().unwrap()).abs() < 1e-12);
}

#[test]
fn scalar_certificate_margin() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bound.json");
    assert!(plate(&["bound-check", "-c", s(&configs().join("scalar-certificate.json")), "-o", s(&out)]).status.success());
    let v = json(&out);
    assert_eq!(v["feasible"], Value::Bool(true));
    assert!((v["margin"].as_f64().unwrap() - 0.05).abs() < 1e-12);
    let gbar = v["gbar"].as_f64().unwrap();
    assert!((v["bs"].as_f64().unwrap() - (1.0 + gbar / 0.7)).abs() < 1e-12);
}

#[test]
fn noiseless_simulation_has_zero_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg: Value = serde_json::from_str(&std::fs::read_to_string(configs().join("tracking.json")).unwrap()).unwrap();
    cfg["model"]["w"] = serde_json::json!([[0.0, 0.0], [0.0, 0.0]]);
    cfg["model"]["p0"] = serde_json::json!([[0, 0, 0, 0], [0, 0, 0, 0], [0, 0, 0, 0], [0, 0, 0, 0]]);
    cfg["model"]["x0"] = serde_json::json!([1.0, 0.5, -2.0, 0.25]);
    cfg["sim"]["true_r"] = serde_json::json!([[[0, 0], [0, 0]], [[0, 0], [0, 0]]]);
    cfg["sim"]["horizon"] = serde_json::json!(2.0);
    let path = dir.path().join("noiseless.json");
    std::fs::write(&path, cfg.to_string()).unwrap();
    let out = dir.path().join("trace.csv");
    let o = plate(&["simulate", "-c", s(&path), "-o", s(&out), "--static", "1"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == "sq_error").unwrap();
    let mut n = 0;
    for line in lines {
        let err: f64 = line.split(',').nth(col).unwrap().parse().unwrap();
        assert!(err < 1e-20, "{line}");
        n += 1;
    }
    assert_eq!(n, 61);
}

#[test]
fn monte_carlo_csv_is_bit_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("pixel-adaptive-r.json");
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    assert!(plate(&["mc-eval", "-c", s(&cfg), "-o", s(&a), "--runs", "12", "--jobs", "1"]).status.success());
    assert!(plate(&["mc-eval", "-c", s(&cfg), "-o", s(&b), "--runs", "12", "--jobs", "4"]).status.success());
    let text = std::fs::read_to_string(&a).unwrap();
    assert_eq!(text, std::fs::read_to_string(&b).unwrap());
    assert_eq!(text.lines().count(), 13);
    let c = dir.path().join("c.csv");
    assert!(plate(&["mc-eval", "-c", s(&cfg), "-o", s(&c), "--runs", "12", "--seed", "99"]).status.success());
    assert_ne!(text, std::fs::read_to_string(&c).unwrap());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let tracking = configs().join("tracking.json");

    assert_eq!(plate(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(plate(&["simulate", "-c", s(&tracking)]).status.code(), Some(1));

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, std::fs::read_to_string(&tracking).unwrap().replace("\"cost\"", "\"costs\"")).unwrap();
    let o = plate(&["schedule-exact", "-c", s(&bad), "-o", s(&out)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("costs"));

    assert_eq!(plate(&["mc-eval", "-c", s(&tracking), "-o", s(&out)]).status.code(), Some(1));
    assert_eq!(plate(&["simulate", "-c", s(&tracking), "-o", s(&out), "--static", "7"]).status.code(), Some(1));
    assert_eq!(plate(&["schedule-exact", "-c", s(&dir.path().join("missing.json")), "-o", s(&out)]).status.code(), Some(1));

    let unwritable = dir.path().join("no-such-dir").join("x.json");
    assert_eq!(plate(&["schedule-exact", "-c", s(&tracking), "-o", s(&unwritable)]).status.code(), Some(2));

    let wrong = dir.path().join("graph.json");
    assert!(plate(&["build-graph", "-c", s(&configs().join("scalar-certificate.json")), "-o", s(&wrong)]).status.success());
    assert_eq!(plate(&["schedule-qdp", "-c", s(&tracking), "-o", s(&out), "--graph", s(&wrong)]).status.code(), Some(1));
}
