use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Command, Stdio};

const BIN: &str = env!("CARGO_BIN_EXE_edgecode");

fn run(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(BIN).args(args).output().expect("binary runs");
    (out.status.code().unwrap_or(-1), String::from_utf8_lossy(&out.stdout).into_owned(), String::from_utf8_lossy(&out.stderr).into_owned())
}

fn column(csv: &str, name: &str, phase: &str) -> Vec<String> {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let idx = header.iter().position(|h| *h == name).unwrap();
    lines.filter(|l| l.starts_with(&format!("{phase},"))).map(|l| l.split(',').nth(idx).unwrap().to_string()).collect()
}

#[test]
fn bandwidth_table_scale_study() {
    let (code, out, _) = run(&["bandwidth-table", "--n", "220", "--k", "160"]);
    assert_eq!(code, 0);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 4);
    assert_eq!(lines[0], "scheme,n,k,per_worker,total");
    assert_eq!(lines[1], "mds,220,160,160,9600");
    assert_eq!(lines[2], "rlnc,220,160,80,4800");
    assert!(lines[3].starts_with("lt,220,160,"));
}

#[test]
fn train_writes_one_row_per_iteration() {
    let (code, out, err) = run(&["train", "--n", "5", "--k", "3", "--scheme", "mds", "--model", "lr", "--stragglers", "2"]);
    assert_eq!(code, 0, "{err}");
    assert_eq!(column(&out, "objective", "iteration").len(), 100);
    assert_eq!(column(&out, "downloads_x", "encode").len(), 5);
    assert!(column(&out, "responders_x", "iteration").iter().all(|r| r == "3"));
}

#[test]
fn invalid_configs_are_usage_errors() {
    let (code, _, err) = run(&["train", "--k", "6", "--n", "5"]);
    assert_eq!(code, 2);
    assert!(err.contains("k"), "{err}");
    assert_eq!(run(&["train", "--scheme", "turbo"]).0, 2);
    assert_eq!(run(&["overhead", "--n", "3", "--k", "4"]).0, 2);
}

#[test]
fn runtime_failures_exit_one() {
    let (code, _, err) = run(&["train", "--dataset", "/nonexistent/data.csv"]);
    assert_eq!(code, 1, "{err}");
    let (code, _, _) = run(&["train", "--stragglers", "0,1,2", "--straggler-mode", "disconnect", "--straggler-magnitude", "1", "--num-iter", "3"]);
    assert_eq!(code, 1);
}

#[test]
fn config_file_and_csv_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    let mut text = String::from("label,a,b\n");
    for i in 0..40 {
        let a = (i as f64 * 0.37).sin();
        let b = (i as f64 * 0.91).cos();
        text.push_str(&format!("{},{a},{b}\n", if a + b > 0.0 { 1 } else { 0 }));
    }
    std::fs::write(&data, text).unwrap();
    let cfg = dir.path().join("exp.cfg");
    let out = dir.path().join("m.csv");
    std::fs::write(
        &cfg,
        format!("# csv run\nn = 4\nk = 2\nscheme = rlnc\nmodel = svm\nnum_iter = 7\ndataset = {}\nheader = true\noutput = {}\n", data.display(), out.display()),
    )
    .unwrap();
    let (code, stdout, err) = run(&["train", "--config", cfg.to_str().unwrap(), "--num-iter", "9"]);
    assert_eq!(code, 0, "{err}");
    assert!(stdout.is_empty());
    let written = std::fs::read_to_string(&out).unwrap();
    assert_eq!(column(&written, "objective", "iteration").len(), 9);
}

#[test]
fn overhead_and_encode_bench() {
    let (code, out, _) = run(&["overhead", "--scheme", "mds", "--n", "22", "--k", "16", "--trials", "500"]);
    assert_eq!(code, 0);
    assert_eq!(out.lines().nth(1).unwrap(), "mds,22,16,500,0,0");
    let (code, out, err) = run(&["encode-bench", "--n", "8", "--k", "5", "--scheme", "rlnc", "--rows", "200", "--cols", "30"]);
    assert_eq!(code, 0, "{err}");
    assert_eq!(column(&out, "encode_nanos", "encode").len(), 8);
    assert!(column(&out, "objective", "iteration").is_empty());
}

fn spawn_multi_process(dir: &Path, extra: &[&str]) -> String {
    let out = dir.join("master.csv");
    let common: Vec<String> = ["--n", "5", "--k", "3", "--scheme", "rlnc", "--num-iter", "15"]
        .iter()
        .chain(extra)
        .map(|s| s.to_string())
        .collect();
    let mut master = Command::new(BIN)
        .arg("master")
        .args(&common)
        .args(["--output", out.to_str().unwrap()])
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut stderr = BufReader::new(master.stderr.take().unwrap());
    let mut line = String::new();
    stderr.read_line(&mut line).unwrap();
    let addr = line.trim().strip_prefix("listening ").expect("master announces its address").to_string();
    let workers: Vec<_> = (0..5)
        .map(|id| {
            Command::new(BIN)
                .args(["worker", "--connect", &addr, "--worker-id", &id.to_string()])
                .args(&common)
                .spawn()
                .unwrap()
        })
        .collect();
    for mut w in workers {
        assert!(w.wait().unwrap().success());
    }
    assert!(master.wait().unwrap().success());
    std::fs::read_to_string(out).unwrap()
}

#[test]
fn multi_process_matches_in_process() {
    let dir = tempfile::tempdir().unwrap();
    let csv = spawn_multi_process(dir.path(), &["--stragglers", "1"]);
    let (code, local, _) = run(&["train", "--n", "5", "--k", "3", "--scheme", "rlnc", "--num-iter", "15", "--stragglers", "1"]);
    assert_eq!(code, 0);
    let a: Vec<f64> = column(&csv, "objective", "iteration").iter().map(|s| s.parse().unwrap()).collect();
    let b: Vec<f64> = column(&local, "objective", "iteration").iter().map(|s| s.parse().unwrap()).collect();
    assert_eq!(a.len(), 15);
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() <= 1e-9 * y.abs().max(1.0), "{x} vs {y}");
    }
    assert_eq!(column(&csv, "downloads_x", "encode"), column(&local, "downloads_x", "encode"));
}
