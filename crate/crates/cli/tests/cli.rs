use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn sobrec(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sobrec"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn data_rows(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("sweep.cfg");
    fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn missing_budget_is_a_usage_error() {
    let o = sobrec(&["recover", "--d", "1", "--s", "1", "--function", "const1"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn budget_below_minimum_exits_3() {
    let o = sobrec(&["integrate", "--d", "2", "--s", "1", "--n", "31", "--function", "const1"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("32"));
}

#[test]
fn unknown_function_exits_2() {
    let o = sobrec(&["recover", "--d", "1", "--s", "1", "--n", "64", "--function", "nope"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn constant_is_recovered() {
    let o = sobrec(&["recover", "--d", "1", "--s", "1", "--n", "1024", "--function", "const1", "--probes", "33"]);
    assert!(o.status.success());
    let rows = data_rows(&stdout(&o));
    assert_eq!(rows.len(), 33);
    for r in rows {
        let v: f64 = r[1].parse().unwrap();
        assert!((v - 1.0).abs() < 1e-8, "{v}");
    }
}

#[test]
fn sparse_budget_recovers_zero() {
    let o = sobrec(&["recover", "--d", "1", "--s", "1", "--n", "16", "--function", "const1", "--probes", "4"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.lines().next().unwrap().contains("scenario=1"));
    assert!(data_rows(&text).iter().all(|r| r[1].parse::<f64>().unwrap() == 0.0));
}

#[test]
fn recover_writes_file_and_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for out in [&a, &b] {
        let o = sobrec(&[
            "recover", "--d", "2", "--s", "2", "--n", "2048", "--function", "gauss", "--probes", "8", "--seed", "5",
            "--cone-radius", "0.5", "--c1", "max", "--out", out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let text = fs::read_to_string(&a).unwrap();
    assert_eq!(text, fs::read_to_string(&b).unwrap());
    assert!(text.starts_with("# config_hash="));
    assert_eq!(data_rows(&text).len(), 64);
}

#[test]
fn integrate_constant_and_methods() {
    for method in ["cv", "approx-only", "plain-mc"] {
        let o = sobrec(&["integrate", "--d", "1", "--s", "1", "--n", "512", "--function", "const1", "--method", method]);
        assert!(o.status.success());
        let rows = data_rows(&stdout(&o));
        assert_eq!(rows[0][0], method);
        let err: f64 = rows[0][5].parse().unwrap();
        assert!(err < 1e-8, "{method}: {err}");
    }
}

#[test]
fn integrate_replications_use_distinct_seeds() {
    let o = sobrec(&[
        "integrate", "--d", "1", "--s", "1", "--n", "256", "--function", "gauss", "--method", "plain-mc",
        "--replications", "3",
    ]);
    let rows = data_rows(&stdout(&o));
    assert_eq!(rows.len(), 3);
    assert_ne!(rows[0][2], rows[1][2]);
    assert_ne!(rows[0][3], rows[1][3]);
}

#[test]
fn verify_fast_passes() {
    let o = sobrec(&["verify", "fast"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).lines().any(|l| l.starts_with("PASS reproduction")));
}

#[test]
fn verify_detects_injected_fault() {
    let o = sobrec(&["verify", "fast", "--inject-fault"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).lines().any(|l| l.starts_with("FAIL reproduction")));
}

#[test]
fn verify_unknown_suite() {
    assert_eq!(sobrec(&["verify", "slow"]).status.code(), Some(2));
}

#[test]
fn rates_writes_records_report_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "# small sweep\ndomain = cube\nd = 1\ns = 1\np = 2\nq = 2\nn = 256, 512, 1024\nreplications = 1\ndictionary = gauss\nerror_resolution = 1024\n",
    );
    let out = dir.path().join("out");
    let o = sobrec(&["rates", "--config", &cfg, "--out-dir", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let records = fs::read_to_string(out.join("records.csv")).unwrap();
    assert_eq!(records.lines().count(), 4);
    let report = fs::read_to_string(out.join("report.txt")).unwrap();
    assert_eq!(report, stdout(&o));
    assert!(report.contains("theoretical exponent = -1.0000"), "{report}");
    let manifest = fs::read_to_string(out.join("manifest.txt")).unwrap();
    assert!(manifest.contains("config_hash = ") && manifest.contains("d = 1"));
}

#[test]
fn rates_sup_norm_reports_log_abscissa() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "d = 1\ns = 1\np = inf\nq = inf\nn = 2^8..2^10\nreplications = 1\ndictionary = sine\nerror_resolution = 1024\ncone_radius = 0.5\nc1 = max\n",
    );
    let out = dir.path().join("out");
    let o = sobrec(&["rates", "--config", &cfg, "--out-dir", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert!(text.contains("theoretical exponent = -1.0000 vs n/log(n)"), "{text}");
    assert!(text.contains("fitted slope vs n/log(n)"), "{text}");
}

#[test]
fn rates_rejects_bad_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "d = 1\ns = 1\np = 2\nn = 64\nbogus = 3\n");
    assert_eq!(sobrec(&["rates", "--config", &cfg]).status.code(), Some(2));
    let missing = dir.path().join("absent.cfg");
    assert_eq!(sobrec(&["rates", "--config", missing.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn radius_stats_subcommands() {
    let o = sobrec(&["radius-stats", "covering", "--d", "1", "--s", "1", "--n", "64,128,256", "--reps", "4"]);
    assert!(o.status.success());
    assert_eq!(data_rows(&stdout(&o)).len(), 3);
    let o = sobrec(&["radius-stats", "moments", "--d", "1", "--s", "1", "--y", "0.4", "--alpha", "1,2", "--n", "64,128", "--reps", "4"]);
    assert!(o.status.success());
    assert_eq!(data_rows(&stdout(&o)).len(), 4);
    let o = sobrec(&["radius-stats", "tails", "--d", "1", "--s", "1", "--y", "0.4,0.5", "--t", "0.01", "--n", "64"]);
    assert_eq!(o.status.code(), Some(2));
    let o = sobrec(&["radius-stats", "coupon", "--d", "1", "--s", "1", "--n", "256", "--reps", "10"]);
    assert!(o.status.success());
}

#[test]
fn testbed_list_and_bump_csv() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("bumps.csv");
    let o = sobrec(&["testbed", "list", "--d", "2", "--s", "1", "--bumps", "4", "--bump-csv", csv.to_str().unwrap()]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.lines().any(|l| l.starts_with("const1,")));
    assert!(text.lines().any(|l| l.starts_with("bumps-4,")));
    assert!(fs::read_to_string(&csv).unwrap().lines().count() > 4);
}

#[test]
fn jobs_flag_is_accepted() {
    let o = sobrec(&["--jobs", "1", "testbed", "list"]);
    assert!(o.status.success());
    assert_eq!(sobrec(&["--jobs", "0", "testbed", "list"]).status.code(), Some(2));
}
