use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::Path;
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use activest::io::parse_pairwise_dataset;
use activest::models::{two_trait_demo, CatalogFile};
use activest_cli::run_command_with;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

fn run(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("activest").chain(args.iter().copied());
    let code = run_command_with(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn write_demo_catalog(dir: &Path) -> String {
    let path = dir.join("demo.json");
    std::fs::write(&path, serde_json::to_string(&CatalogFile::from_model(&two_trait_demo())).unwrap()).unwrap();
    path.to_str().unwrap().to_string()
}

fn write_study(dir: &Path) -> String {
    let path = dir.join("study.json");
    std::fs::write(
        &path,
        r#"{"model": {"builtin": "two_trait_demo"}, "truth": [1, 0],
            "policies": ["gi0", "gi1", "uniform"], "checkpoints": [20, 40],
            "stopping": "se:h=d(-0.5454216;-0.8381619),c=0.4",
            "coverage": {"functional": "d(-0.5454216;-0.8381619)"},
            "init": [0, 1, 2, 0, 1, 2], "theta0": [0, 0], "replications": 8, "seed": 5}"#,
    )
    .unwrap();
    path.to_str().unwrap().to_string()
}

/// Pairwise records over `items` objects with outcomes from a BTL model.
fn write_dataset(dir: &Path, items: usize, records: usize) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let scores: Vec<f64> = (0..items).map(|i| i as f64 * 0.4).collect();
    let mut text = String::from("i,j,outcome\n");
    for r in 0..records {
        // a path first so the comparison graph is connected
        let (i, j) = if r + 1 < items {
            (r, r + 1)
        } else {
            let i = rng.random_range(0..items);
            let mut j = rng.random_range(0..items);
            while j == i {
                j = rng.random_range(0..items);
            }
            (i, j)
        };
        let p = 1.0 / (1.0 + (scores[j] - scores[i]).exp());
        text += &format!("{i},{j},{}\n", u8::from(rng.random_bool(p)));
    }
    let path = dir.join("pairs.csv");
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn usage_errors_exit_one() {
    let (code, _, err) = run(&["frobnicate"]);
    assert_eq!(code, 1);
    assert!(err.contains("Usage"), "{err}");
    let (code, _, _) = run(&[]);
    assert_eq!(code, 1);
    let (code, out, _) = run(&["--help"]);
    assert_eq!(code, 0);
    for sub in ["simulate", "design", "replay", "serve", "bench"] {
        assert!(out.contains(sub));
    }
}

#[test]
fn design_emits_a_proportion() {
    let dir = tempfile::tempdir().unwrap();
    let model = write_demo_catalog(dir.path());
    let (code, out, err) = run(&["design", &model, "--theta", "1,0", "--criterion", "trace"]);
    assert_eq!(code, 0, "{err}");
    let v: Value = serde_json::from_str(&out).unwrap();
    let pi: Vec<f64> = serde_json::from_value(v["pi"].clone()).unwrap();
    assert_eq!(pi.len(), 3);
    assert!((pi.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert!(pi.iter().all(|&x| x >= 0.0));

    let (code, out, _) = run(&["design", &model, "--theta", "-1,0.5", "--sweep", "0,1,2"]);
    assert_eq!(code, 0);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "q,experiment,pi,value");
    assert_eq!(lines.len(), 10);

    let (code, _, err) = run(&["design", &model, "--theta", "1,0,0"]);
    assert_eq!(code, 1, "{err}");
    let (code, _, _) = run(&["design", &model, "--theta", "1,0", "--criterion", "bogus"]);
    assert_eq!(code, 2);
    let (code, _, _) = run(&["design", "/nonexistent/model.json", "--theta", "1,0"]);
    assert_eq!(code, 2);
}

#[test]
fn simulate_writes_deterministic_results() {
    let dir = tempfile::tempdir().unwrap();
    let study = write_study(dir.path());
    let out_path = dir.path().join("results.csv");
    let (code, _, err) = run(&["simulate", &study, "--out", out_path.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    let first = std::fs::read_to_string(&out_path).unwrap();
    assert!(first.starts_with("policy,n,metric,value,stderr\n"));
    assert!(first.contains("gi1,0,stop_time,"));
    let (_, stdout, _) = run(&["simulate", &study]);
    assert_eq!(stdout, first);
    let (_, reseeded, _) = run(&["simulate", &study, "--seed", "6"]);
    assert_ne!(reseeded, first);

    let (code, traj, _) = run(&["simulate", &study, "--trajectory", "gi1", "--rep", "2"]);
    assert_eq!(code, 0);
    let v: Value = serde_json::from_str(&traj).unwrap();
    assert_eq!(v["policy"], "gi1");
    assert!(v["steps"].as_array().unwrap().len() >= 40);

    let (code, _, _) = run(&["simulate", "/nonexistent/study.json"]);
    assert_eq!(code, 2);
    let (code, _, _) = run(&["simulate", &study, "--trajectory", "nonsense"]);
    assert_eq!(code, 1);
}

#[test]
fn thread_count_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let study = write_study(dir.path());
    let (_, base, _) = run(&["simulate", &study]);
    for threads in ["1", "3"] {
        std::env::set_var("ACTIVEST_THREADS", threads);
        let (code, out, err) = run(&["simulate", &study]);
        std::env::remove_var("ACTIVEST_THREADS");
        assert_eq!(code, 0, "{err}");
        assert_eq!(out, base);
    }
}

#[test]
fn replay_writes_a_kendall_curve() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_dataset(dir.path(), 8, 600);
    let (code, out, err) = run(&["replay", &data, "--policy", "gi1,uniform,uncertainty", "--checkpoints", "50,200,600", "--seed", "3"]);
    assert_eq!(code, 0, "{err}");
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "policy,n,metric,value,stderr");
    assert_eq!(lines.len(), 1 + 3 * 3);
    assert!(lines.iter().any(|l| l.starts_with("uniform,600,kendall_tau,")));
    let (_, again, _) = run(&["replay", &data, "--policy", "gi1,uniform,uncertainty", "--checkpoints", "50,200,600", "--seed", "3"]);
    assert_eq!(again, out);

    // default checkpoints: ten even steps up to the record count
    let (code, out, _) = run(&["replay", &data, "--policy", "gi0"]);
    assert_eq!(code, 0);
    assert_eq!(out.lines().count(), 11);

    let (code, _, _) = run(&["replay", &data, "--policy", "opt-det"]);
    assert_eq!(code, 1);
    let (code, _, err) = run(&["replay", &data, "--policy", "gi1", "--items", "4"]);
    assert_eq!(code, 2);
    assert!(err.contains("line"), "{err}");
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "i,j,outcome\n0,1,1\n5,5,1\n").unwrap();
    let (code, _, err) = run(&["replay", bad.to_str().unwrap(), "--policy", "gi1"]);
    assert_eq!(code, 2);
    assert!(err.contains("line 3"), "{err}");
}

#[test]
fn generated_dataset_is_valid() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_dataset(dir.path(), 8, 600);
    let d = parse_pairwise_dataset(std::fs::File::open(data).unwrap(), Some(8)).unwrap();
    assert_eq!(d.records.len(), 600);
    assert!(d.distinct_pairs() <= 28);
}

#[test]
fn bench_reports_both_rules() {
    let (code, out, err) = run(&["bench", "--p", "60", "--k", "1830", "--reps", "1", "--seed", "2"]);
    assert_eq!(code, 0, "{err}");
    let v: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["k"], 1830);
    let gi0 = v["gi0_seconds_per_step"].as_f64().unwrap();
    let gi1 = v["gi1_seconds_per_step"].as_f64().unwrap();
    assert!(gi1 < gi0, "gi1 {gi1} gi0 {gi0}");
    assert!(v["gi1_choice"].as_u64().unwrap() < 1830);

    let (code, _, _) = run(&["bench", "--p", "10", "--k", "5"]);
    assert_eq!(code, 1);
    let (code, _, _) = run(&["bench", "--p", "10", "--k", "56"]);
    assert_eq!(code, 1);
}

fn http_get(port: u16, path: &str) -> Option<String> {
    let mut stream = TcpStream::connect(("127.0.0.1", port)).ok()?;
    stream.set_read_timeout(Some(Duration::from_secs(5))).ok()?;
    write!(stream, "GET {path} HTTP/1.1\r\nHost: localhost\r\nConnection: close\r\n\r\n").ok()?;
    let mut text = String::new();
    stream.read_to_string(&mut text).ok()?;
    Some(text)
}

#[test]
fn serve_answers_health_checks() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let mut child = Command::new(env!("CARGO_BIN_EXE_activest"))
        .args(["serve", "--port", &port.to_string()])
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let deadline = Instant::now() + Duration::from_secs(20);
    let mut reply = None;
    while Instant::now() < deadline {
        if let Some(r) = http_get(port, "/healthz") {
            reply = Some(r);
            break;
        }
        std::thread::sleep(Duration::from_millis(50));
    }
    let missing = http_get(port, "/sessions/none/report");
    child.kill().unwrap();
    child.wait().unwrap();
    let reply = reply.expect("server came up");
    assert!(reply.starts_with("HTTP/1.1 200"), "{reply}");
    assert!(reply.ends_with("ok"));
    assert!(missing.unwrap().starts_with("HTTP/1.1 404"));
}
