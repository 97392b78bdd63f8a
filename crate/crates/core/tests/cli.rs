use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use funcpoly::design::DesignGrid;
use funcpoly::locpoly::FunctionalSample;
use funcpoly::simlab::{read_table, TableFormat};
use nalgebra::DMatrix;

fn funcpoly(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_funcpoly"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn write_curves(path: &Path, n: usize, f: impl Fn(usize, f64) -> f64) {
    let grid = DesignGrid::uniform(21).unwrap();
    let pts = grid.points().to_vec();
    let values = DMatrix::from_fn(n, pts.len(), |i, j| f(i, pts[j]));
    let sample = FunctionalSample::new(grid, values).unwrap();
    sample.write_csv(fs::File::create(path).unwrap()).unwrap();
}

#[test]
fn kernel_info_prints_tableau() {
    let out = stdout(&funcpoly(&["kernel-info", "--kernel", "epanechnikov", "--p", "1"]));
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert!(v.is_object());
}

#[test]
fn fit_writes_estimates() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("curves.csv");
    let output = dir.path().join("fit.csv");
    write_curves(&input, 3, |i, x| 2.0 - x + i as f64);
    let o = funcpoly(&[
        "fit",
        "--input",
        input.to_str().unwrap(),
        "--h",
        "0.3",
        "--kernel",
        "epanechnikov",
        "--eval",
        "0.1,0.5",
        "--output",
        output.to_str().unwrap(),
    ]);
    stdout(&o);
    let text = fs::read_to_string(&output).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("x,estimate"));
    for (line, x) in lines.zip([0.1, 0.5]) {
        let est: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
        assert!((est - (3.0 - x)).abs() < 1e-12);
    }

    let o = funcpoly(&["fit", "--input", input.to_str().unwrap(), "--h", "cv", "--eval", "linspace:5"]);
    assert_eq!(stdout(&o).lines().count(), 6);
    assert!(String::from_utf8_lossy(&o.stderr).contains("bandwidth: inf"));
}

#[test]
fn bandwidth_methods() {
    let out = stdout(&funcpoly(&[
        "bandwidth", "--method", "asym", "--model", "ou:15", "--m", "m1", "--n", "50", "--kernel",
        "truncated-gaussian:4",
    ]));
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    let h = v["h"].as_f64().unwrap();
    assert!(h > 0.0 && h < 1.0);
    assert_eq!(v["method"], "asym");

    let out = stdout(&funcpoly(&[
        "bandwidth", "--method", "exact", "--model", "wiener", "--m", "m1", "--n", "10", "--N", "30",
    ]));
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert!(!v["curve"].as_array().unwrap().is_empty());

    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("curves.csv");
    write_curves(&input, 20, |i, x| (6.0 * x).sin() + 0.1 * ((i * 7 + (x * 20.0) as usize) % 5) as f64);
    let out = stdout(&funcpoly(&["bandwidth", "--method", "plugin", "--input", input.to_str().unwrap()]));
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert!(v["constants"].is_object());
}

#[test]
fn usage_errors_exit_nonzero() {
    let o = funcpoly(&["bandwidth", "--method", "asym", "--m", "m1", "--n", "10"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("--model is required"));

    let o = funcpoly(&["bandwidth", "--method", "magic"]);
    assert!(!o.status.success());

    let o = funcpoly(&["kernel-info", "--kernel", "cauchy", "--p", "1"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));

    let o = funcpoly(&[
        "bandwidth", "--method", "asym", "--model", "wiener", "--m", "m1", "--n", "10", "--density", "optimal",
    ]);
    assert!(!o.status.success());
}

#[test]
fn simulate_writes_table_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("exp.json");
    fs::write(
        &config,
        r#"{"regression": "m1", "covariance": "wiener", "n": 5, "N": 15, "replications": 25, "seed": 4}"#,
    )
    .unwrap();
    let run = |name: &str, extra: &[&str]| {
        let out = dir.path().join(name);
        let mut args = vec!["simulate", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()];
        args.extend_from_slice(extra);
        stdout(&funcpoly(&args));
        out
    };
    let a = run("a.csv", &["--workers", "1"]);
    let b = run("b.csv", &["--workers", "4"]);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let rows = read_table(fs::File::open(&a).unwrap(), TableFormat::Csv).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!((rows[0].n, rows[0].design_points), (5, 15));

    let report = dir.path().join("report.json");
    let j = run("c.json", &["--format", "json", "--density", "linear:1", "--report", report.to_str().unwrap()]);
    assert_eq!(read_table(fs::File::open(&j).unwrap(), TableFormat::Json).unwrap().len(), 1);
    let r: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(r["config"]["density"], "linear:1");
    assert!(r.get("runtime_secs").is_none());
}

#[test]
fn table_preset_runs() {
    let o = funcpoly(&["table", "--reproduce", "table2", "--replications", "3", "--workers", "2"]);
    let text = stdout(&o);
    let rows = read_table(text.as_bytes(), TableFormat::Csv).unwrap();
    assert_eq!(rows.len(), 9);
    let o = funcpoly(&["table", "--reproduce", "table9"]);
    assert!(!o.status.success());
}

#[test]
fn normality_prints_statistics() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("norm.json");
    fs::write(
        &config,
        r#"{"regression": "m1", "covariance": "wiener", "n": 100, "N": 100, "nu": 0, "p": 1,
            "kernel": "epanechnikov", "h": 0.2, "x": 0.5, "replications": 200, "seed": 1}"#,
    )
    .unwrap();
    let out = stdout(&funcpoly(&["normality", "--config", config.to_str().unwrap()]));
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    let p = v["p_value"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&p));
}
