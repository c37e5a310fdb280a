use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use santt::solver::{SolveReport, SolverConfig};
use tempfile::TempDir;

fn santt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_santt")).args(args).output().expect("run santt")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn gen(dir: &Path, name: &str, extra: &[&str]) -> PathBuf {
    let path = dir.join(name);
    let mut args = vec!["gen", "-o", path.to_str().unwrap()];
    args.extend_from_slice(extra);
    let o = santt(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    path
}

/// Value after `key` on its own output line.
fn field(text: &str, key: &str) -> f64 {
    text.lines()
        .find_map(|l| l.strip_prefix(key).map(|v| v.trim().parse::<f64>().unwrap()))
        .unwrap_or_else(|| panic!("no {key:?} in {text:?}"))
}

const TWO_STATE: &str = r#"{
  "k": 1,
  "state_counts": [2],
  "local": [[[0.0, 2.0], [0.0, 0.0]]],
  "syncs": [],
  "pi0_factors": [[1.0, 0.0]]
}"#;

#[test]
fn solve_single_automaton() {
    let dir = TempDir::new().unwrap();
    let m = gen(dir.path(), "k1.json", &["--k", "1"]);
    let o = santt(&["solve", m.to_str().unwrap()]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.starts_with("MTTA 1.818181"), "{text}");
    // twelve significant digits
    assert_eq!(text.trim().len(), "MTTA 1.81818181818".len());
    assert!((field(&text, "MTTA") - 20.0 / 11.0).abs() <= 1e-8 * 2.0);
}

#[test]
fn solve_gamma_choice_does_not_matter() {
    let dir = TempDir::new().unwrap();
    let m = gen(dir.path(), "k3.json", &["--k", "3", "--seed", "2"]);
    let path = m.to_str().unwrap();
    let a = field(&stdout(&santt(&["solve", path])), "MTTA");
    let b = field(&stdout(&santt(&["solve", path, "--gamma", "scale:4"])), "MTTA");
    assert!((a - b).abs() <= 2e-8 * a, "{a} vs {b}");
    let exact = field(&stdout(&santt(&["oracle", path])), "MTTA");
    for alg in ["linear", "transpose"] {
        let v = field(&stdout(&santt(&["solve", path, "--algorithm", alg])), "MTTA");
        assert!((v - exact).abs() <= 1e-6 * exact, "{alg}: {v} vs {exact}");
    }
}

#[test]
fn oracle_agrees_with_solver() {
    let dir = TempDir::new().unwrap();
    let m = gen(dir.path(), "k3.json", &["--k", "3", "--seed", "5"]);
    let path = m.to_str().unwrap();
    let o = santt(&["oracle", path]);
    assert!(o.status.success());
    let exact = field(&stdout(&o), "MTTA");
    let approx = field(&stdout(&santt(&["solve", path])), "MTTA");
    assert!((exact - approx).abs() <= 1e-6 * exact);
}

#[test]
fn oracle_two_state() {
    let dir = TempDir::new().unwrap();
    let m = dir.path().join("two.json");
    std::fs::write(&m, TWO_STATE).unwrap();
    let o = santt(&["oracle", m.to_str().unwrap()]);
    assert!(o.status.success());
    assert_eq!(field(&stdout(&o), "MTTA"), 0.5);
    assert_eq!(field(&stdout(&o), "inf-norm"), 1.0);
}

#[test]
fn oracle_refuses_large_models() {
    let dir = TempDir::new().unwrap();
    let m = gen(dir.path(), "k20.json", &["--k", "20"]);
    let o = santt(&["oracle", m.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(o.stdout.is_empty());
}

#[test]
fn malformed_model_is_an_input_error() {
    let dir = TempDir::new().unwrap();
    let m = dir.path().join("bad.json");
    std::fs::write(&m, "{\n  \"k\": 1,\n  \"state_counts\": [2],\n  \"local\": oops\n}").unwrap();
    for cmd in ["solve", "oracle"] {
        let o = santt(&[cmd, m.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(2));
        let err = String::from_utf8_lossy(&o.stderr);
        assert!(err.contains("line 4"), "{err}");
    }
    // structurally valid JSON that is not a model
    std::fs::write(&m, TWO_STATE.replace("\"state_counts\": [2]", "\"state_counts\": [3]")).unwrap();
    assert_eq!(santt(&["solve", m.to_str().unwrap()]).status.code(), Some(2));
    let missing = dir.path().join("missing.json");
    assert_eq!(santt(&["solve", missing.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn bad_arguments_are_usage_errors() {
    assert_eq!(santt(&["solve"]).status.code(), Some(1));
    let dir = TempDir::new().unwrap();
    let m = gen(dir.path(), "k1.json", &["--k", "1"]);
    let path = m.to_str().unwrap();
    assert_eq!(santt(&["solve", path, "--tol", "-1"]).status.code(), Some(1));
    assert_eq!(santt(&["solve", path, "--gamma", "big"]).status.code(), Some(1));
    assert_eq!(santt(&["solve", path, "--algorithm", "cubic"]).status.code(), Some(1));
}

#[test]
fn rank_explosion_is_a_numerical_error() {
    let dir = TempDir::new().unwrap();
    let m = gen(dir.path(), "k6.json", &["--k", "6", "--density", "0.5"]);
    let o = santt(&["solve", m.to_str().unwrap(), "--max-rank", "1", "--tol", "1e-12"]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn figure_model_matches_fixture() {
    let dir = TempDir::new().unwrap();
    let m = gen(dir.path(), "fig.json", &["--figure"]);
    let got = std::fs::read_to_string(m).unwrap();
    let want = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/figure.json")).unwrap();
    assert_eq!(got, want);
}

#[test]
fn zero_density_gives_identity_topology() {
    let dir = TempDir::new().unwrap();
    let m = gen(dir.path(), "id.json", &["--k", "5", "--density", "0"]);
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(m).unwrap()).unwrap();
    let topology = v["topology"].as_array().unwrap();
    assert_eq!(topology.len(), 5);
    for (i, row) in topology.iter().enumerate() {
        let row: Vec<u64> = row.as_array().unwrap().iter().map(|x| x.as_u64().unwrap()).collect();
        let want: Vec<u64> = (0..5).map(|j| u64::from(i == j)).collect();
        assert_eq!(row, want);
    }
}

#[test]
fn generation_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let a = gen(dir.path(), "a.json", &["--k", "7", "--seed", "42"]);
    let b = gen(dir.path(), "b.json", &["--k", "7", "--seed", "42"]);
    let c = gen(dir.path(), "c.json", &["--k", "7", "--seed", "43"]);
    let read = |p: &Path| std::fs::read(p).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_ne!(read(&a), read(&c));
}

#[test]
fn bench_table_has_one_row_per_k() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("bench.csv");
    let o = santt(&["bench", "--k", "4,6,8", "--runs", "2", "-o", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let mut r = csv::Reader::from_path(&out).unwrap();
    assert_eq!(r.headers().unwrap().get(0), Some("k"));
    let rows: Vec<csv::StringRecord> = r.records().map(Result::unwrap).collect();
    let ks: Vec<&str> = rows.iter().map(|row| &row[0]).collect();
    assert_eq!(ks, ["4", "6", "8"]);
    for row in &rows {
        assert_eq!(&row[1], "2");
        assert_eq!(&row[2], "0");
    }
}

#[test]
fn bench_without_runs_prints_only_the_header() {
    let o = santt(&["bench", "--k", "4", "--runs", "0"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert_eq!(text.lines().count(), 1);
    assert!(text.starts_with("k,runs,failures,"));
}

#[test]
fn report_round_trips() {
    let dir = TempDir::new().unwrap();
    let m = gen(dir.path(), "k2.json", &["--k", "2"]);
    let rep = dir.path().join("run.json");
    let o = santt(&["solve", m.to_str().unwrap(), "--report", rep.to_str().unwrap()]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&rep).unwrap()).unwrap();
    assert_eq!(v["exit_status"], 0);
    let report: SolveReport = serde_json::from_value(v["report"].clone()).unwrap();
    let config: SolverConfig = serde_json::from_value(v["config"].clone()).unwrap();
    assert_eq!(config.stop_tol, 1e-8);
    assert_eq!(report.iterations + 1, report.measure_history.len());
    let printed = field(&stdout(&o), "MTTA");
    assert!((report.mtta - printed).abs() <= 1e-11 * printed);
    // serialising again gives the same values
    let again = serde_json::to_value(&report).unwrap();
    assert_eq!(serde_json::from_value::<SolveReport>(again).unwrap(), report);
}
