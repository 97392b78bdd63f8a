use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use funcpoly_ffi::*;

fn cstr(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    let p = fp_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn line_sample() -> *mut FpSample {
    let grid: Vec<f64> = (0..11).map(|j| j as f64 / 10.0).collect();
    let mut values = Vec::new();
    for i in 0..3 {
        values.extend(grid.iter().map(|x| 1.0 + 2.0 * x + i as f64 * 0.1));
    }
    let mut s = ptr::null_mut();
    let st = unsafe { fp_sample_new(grid.as_ptr(), grid.len(), values.as_ptr(), 3, &mut s) };
    assert_eq!(st, FpStatus::Ok);
    s
}

#[test]
fn fit_reproduces_lines() {
    let s = line_sample();
    let (mut n, mut big_n) = (0, 0);
    assert_eq!(unsafe { fp_sample_shape(s, &mut n, &mut big_n) }, FpStatus::Ok);
    assert_eq!((n, big_n), (3, 11));
    let eval = [0.25, 0.5, 0.9];
    let mut out = [0.0; 3];
    let k = cstr("epanechnikov");
    for h in [0.3, f64::INFINITY] {
        let st = unsafe { fp_fit(s, 1, 0, h, k.as_ptr(), eval.as_ptr(), 3, out.as_mut_ptr()) };
        assert_eq!(st, FpStatus::Ok);
        for (x, v) in eval.iter().zip(out) {
            assert!((v - (1.1 + 2.0 * x)).abs() < 1e-12);
        }
    }
    let st = unsafe { fp_fit(s, 1, 1, 0.3, k.as_ptr(), eval.as_ptr(), 3, out.as_mut_ptr()) };
    assert_eq!(st, FpStatus::Ok);
    assert!(out.iter().all(|d| (d - 2.0).abs() < 1e-10));
    unsafe { fp_sample_free(s) };
}

#[test]
fn error_codes() {
    let s = line_sample();
    let eval = [0.5];
    let mut out = [0.0];
    let k = cstr("epanechnikov");
    let st = unsafe { fp_fit(s, 1, 0, 0.01, k.as_ptr(), eval.as_ptr(), 1, out.as_mut_ptr()) };
    assert_eq!(st, FpStatus::Numerical);
    assert!(last_error().contains("bandwidth too small"), "{}", last_error());

    let bad = cstr("cauchy");
    let st = unsafe { fp_fit(s, 1, 0, 0.3, bad.as_ptr(), eval.as_ptr(), 1, out.as_mut_ptr()) };
    assert_eq!(st, FpStatus::UnknownId);

    let st = unsafe { fp_fit(s, 1, 0, -1.0, k.as_ptr(), eval.as_ptr(), 1, out.as_mut_ptr()) };
    assert_eq!(st, FpStatus::InvalidArgument);

    let st = unsafe { fp_fit(ptr::null(), 1, 0, 0.3, k.as_ptr(), eval.as_ptr(), 1, out.as_mut_ptr()) };
    assert_eq!(st, FpStatus::NullPointer);

    let grid = [0.0, 0.5, 0.5, 1.0];
    let vals = [0.0; 4];
    let mut h = ptr::null_mut();
    let st = unsafe { fp_sample_new(grid.as_ptr(), 4, vals.as_ptr(), 1, &mut h) };
    assert_eq!(st, FpStatus::InvalidArgument);
    assert!(h.is_null());

    let path = cstr("/nonexistent/curves.csv");
    assert_eq!(unsafe { fp_sample_read_csv(path.as_ptr(), &mut h) }, FpStatus::Io);

    let mut a = 0.0;
    let m = cstr("sqexp:1");
    assert_eq!(unsafe { fp_covariance_alpha(m.as_ptr(), 0.5, &mut a) }, FpStatus::Ok);
    assert_eq!(a, 0.0);
    unsafe { fp_sample_free(s) };
    unsafe { fp_sample_free(ptr::null_mut()) };
    unsafe { fp_string_free(ptr::null_mut()) };
}

#[test]
fn selectors_and_alpha() {
    let s = line_sample();
    let k = cstr("truncated-gaussian:1");
    let mut h = 0.0;
    assert_eq!(unsafe { fp_cross_validate(s, 1, k.as_ptr(), &mut h) }, FpStatus::Ok);
    assert!(h.is_infinite());
    let mut v = -1.0;
    assert_eq!(unsafe { fp_quadratic_variation(s, &mut v) }, FpStatus::Ok);
    assert!((v - 10.0 * 0.04).abs() < 1e-12);
    let mut a = 0.0;
    let m = cstr("ou:15");
    assert_eq!(unsafe { fp_covariance_alpha(m.as_ptr(), 0.3, &mut a) }, FpStatus::Ok);
    assert!((a - 30.0).abs() < 1e-9);
    unsafe { fp_sample_free(s) };
}

#[test]
fn json_outputs() {
    let k = cstr("epanechnikov");
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { fp_kernel_tableau_json(k.as_ptr(), 1, &mut out) }, FpStatus::Ok);
    let text = unsafe { CStr::from_ptr(out) }.to_str().unwrap().to_owned();
    unsafe { fp_string_free(out) };
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert!(v.get("moments").is_some());

    let cfg = cstr(r#"{"regression":"m1","covariance":"wiener","n":5,"N":15,"methods":["exact","cv"],"replications":20,"seed":3}"#);
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { fp_experiment_run_json(cfg.as_ptr(), 2, &mut out) }, FpStatus::Ok);
    let report: serde_json::Value = serde_json::from_str(unsafe { CStr::from_ptr(out) }.to_str().unwrap()).unwrap();
    unsafe { fp_string_free(out) };
    assert!(report["l2_ex"]["median"].as_f64().unwrap() > 0.0);

    let bad = cstr(r#"{"regression":"m1"}"#);
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { fp_experiment_run_json(bad.as_ptr(), 0, &mut out) }, FpStatus::Parse);
    assert!(out.is_null());
}

fn target_dir() -> PathBuf {
    // .../target/<profile>/deps/<test binary>
    let exe = std::env::current_exe().unwrap();
    exe.parent().unwrap().parent().unwrap().to_path_buf()
}

#[test]
fn header_compiles_and_links_from_c() {
    let header_dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include");
    let header = std::fs::read_to_string(header_dir.join("funcpoly.h")).unwrap();
    for f in ["fp_sample_new", "fp_fit", "fp_cross_validate", "fp_last_error_message", "FP_STATUS_OK"] {
        assert!(header.contains(f), "header lacks {f}");
    }
    let lib = target_dir().join("libfuncpoly_ffi.a");
    if !lib.exists() || Command::new("cc").arg("--version").output().is_err() {
        eprintln!("skipping C link check: no C compiler or static library");
        return;
    }
    let dir = tempfile_dir();
    let src = dir.join("smoke.c");
    std::fs::write(
        &src,
        r#"
#include <math.h>
#include <stdio.h>
#include "funcpoly.h"
int main(void) {
    double grid[5] = {0.0, 0.25, 0.5, 0.75, 1.0};
    double y[10];
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 5; ++j) y[i * 5 + j] = 3.0 - grid[j] + i;
    FpSample *s = NULL;
    if (fp_sample_new(grid, 5, y, 2, &s) != FP_STATUS_OK) return 1;
    double x = 0.4, est = 0.0;
    if (fp_fit(s, 1, 0, INFINITY, "uniform", &x, 1, &est) != FP_STATUS_OK) return 2;
    if (fabs(est - 3.1) > 1e-12) return 3;
    if (fp_fit(s, 1, 0, 0.01, "uniform", &x, 1, &est) != FP_STATUS_NUMERICAL) return 4;
    if (fp_last_error_message() == NULL) return 5;
    fp_sample_free(s);
    printf("ok\n");
    return 0;
}
"#,
    )
    .unwrap();
    let bin = dir.join("smoke");
    let status = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(&header_dir)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success(), "C compilation failed");
    let run = Command::new(&bin).output().unwrap();
    assert!(run.status.success(), "C program exited with {:?}", run.status.code());
    assert_eq!(String::from_utf8_lossy(&run.stdout).trim(), "ok");
}

fn tempfile_dir() -> PathBuf {
    let d = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("c_api_smoke");
    std::fs::create_dir_all(&d).unwrap();
    d
}
