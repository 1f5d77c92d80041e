use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use lqbridge_ffi::*;

fn last_error() -> String {
    let p = lqb_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn heat(n: usize) -> *mut LqbSystem {
    let mut sys = ptr::null_mut();
    assert_eq!(unsafe { lqb_system_heat(n, 0.0, 2.0, &mut sys) }, LqbStatus::Ok);
    sys
}

#[test]
fn heat_kernel_through_handles() {
    let sys = heat(1);
    let mut k = ptr::null_mut();
    unsafe {
        assert_eq!(lqb_kernel_new(sys, 0.0, 1.0, &mut k), LqbStatus::Ok);
        lqb_system_free(sys);
        let (x, y) = ([0.3], [-0.2]);
        let mut value = 0.0;
        assert_eq!(lqb_kernel_eval(k, x.as_ptr(), y.as_ptr(), 1, &mut value), LqbStatus::Ok);
        let exact = (4.0 * std::f64::consts::PI).powf(-0.5) * (-0.25_f64 / 4.0).exp();
        assert!((value - exact).abs() < 1e-12 * exact);
        let mut log_value = 0.0;
        assert_eq!(lqb_kernel_log_eval(k, x.as_ptr(), y.as_ptr(), 1, &mut log_value), LqbStatus::Ok);
        assert!((log_value - value.ln()).abs() < 1e-12);
        let mut cost = 0.0;
        assert_eq!(lqb_kernel_half_squared_distance(k, x.as_ptr(), y.as_ptr(), 1, &mut cost), LqbStatus::Ok);
        assert!((cost - 0.25 / 4.0).abs() < 1e-12);
        let mut m = [0.0; 4];
        assert_eq!(lqb_kernel_distance_matrix(k, m.as_mut_ptr(), 4), LqbStatus::Ok);
        assert!((m[0] - 0.5).abs() < 1e-12 && (m[1] + 0.5).abs() < 1e-12 && m[1] == m[2]);
        lqb_kernel_free(k);
    }
}

#[test]
fn diagonal_system_reports_dimensions_and_assumptions() {
    let d = [0.25, 1.0];
    let mut sys = ptr::null_mut();
    unsafe {
        assert_eq!(lqb_system_diagonal(d.as_ptr(), 2, 0.0, 1.0, &mut sys), LqbStatus::Ok);
        let (mut n, mut m) = (0, 0);
        assert_eq!(lqb_system_dimensions(sys, &mut n, &mut m), LqbStatus::Ok);
        assert_eq!((n, m), (2, 2));
        let mut json = ptr::null_mut();
        assert_eq!(lqb_system_check_json(sys, 1e-10, &mut json), LqbStatus::Ok);
        let text = CStr::from_ptr(json).to_str().unwrap().to_owned();
        lqb_string_free(json);
        let report: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(report["controllable"], true);
        assert_eq!(report["killing_psd"], true);
        lqb_system_free(sys);
    }
}

#[test]
fn json_systems_and_their_errors() {
    let good = CString::new(r#"{"builtin": "linear_example", "horizon": [0, 1]}"#).unwrap();
    let bad = CString::new(r#"{"builtin": "linear_example"}"#).unwrap();
    let mut sys = ptr::null_mut();
    unsafe {
        assert_eq!(lqb_system_from_json(good.as_ptr(), &mut sys), LqbStatus::Ok);
        lqb_system_free(sys);
        sys = ptr::null_mut();
        assert_eq!(lqb_system_from_json(bad.as_ptr(), &mut sys), LqbStatus::Config);
        assert!(sys.is_null());
    }
    assert!(last_error().contains("horizon"));
}

#[test]
fn null_and_mismatched_arguments_are_reported() {
    let sys = heat(2);
    unsafe {
        assert_eq!(lqb_kernel_new(ptr::null(), 0.0, 1.0, &mut ptr::null_mut()), LqbStatus::NullPointer);
        assert!(last_error().contains("system"));
        assert_eq!(lqb_kernel_new(sys, 0.0, 1.0, ptr::null_mut()), LqbStatus::NullPointer);

        let mut k = ptr::null_mut();
        assert_eq!(lqb_kernel_new(sys, 1.0, 1.0, &mut k), LqbStatus::Numerical);
        assert_eq!(lqb_kernel_new(sys, 0.0, 1.0, &mut k), LqbStatus::Ok);
        let x = [0.0; 3];
        let mut out = 0.0;
        assert_eq!(lqb_kernel_eval(k, x.as_ptr(), x.as_ptr(), 3, &mut out), LqbStatus::Dimension);
        assert_eq!(lqb_kernel_eval(k, ptr::null(), x.as_ptr(), 2, &mut out), LqbStatus::NullPointer);
        let mut small = [0.0; 4];
        assert_eq!(lqb_kernel_distance_matrix(k, small.as_mut_ptr(), 4), LqbStatus::Dimension);
        lqb_kernel_free(k);
        lqb_system_free(sys);
    }
    lqb_clear_error();
    assert!(lqb_last_error_message().is_null());
}

#[test]
fn free_functions_accept_null() {
    unsafe {
        lqb_system_free(ptr::null_mut());
        lqb_kernel_free(ptr::null_mut());
        lqb_string_free(ptr::null_mut());
    }
    let v = unsafe { CStr::from_ptr(lqb_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

const C_CLIENT: &str = r#"
#include <stdio.h>
#include "lqbridge.h"

int main(void) {
    LqbSystem *sys = NULL;
    LqbKernel *k = NULL;
    double x[1] = {0.3}, y[1] = {-0.2}, value = 0.0;
    if (lqb_system_heat(1, 0.0, 2.0, &sys) != LQB_STATUS_OK) return 1;
    if (lqb_kernel_new(sys, 0.0, 1.0, &k) != LQB_STATUS_OK) return 2;
    lqb_system_free(sys);
    if (lqb_kernel_eval(k, x, y, 1, &value) != LQB_STATUS_OK) return 3;
    if (lqb_kernel_eval(k, x, y, 2, &value) != LQB_STATUS_DIMENSION) return 4;
    if (lqb_last_error_message() == NULL) return 5;
    lqb_kernel_free(k);
    printf("%.17g\n", value);
    return 0;
}
"#;

fn header_dir() -> &'static Path {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/include"))
}

#[test]
fn header_compiles_as_c_and_cpp() {
    let dir = tempfile::tempdir().unwrap();
    let c_file = dir.path().join("client.c");
    std::fs::write(&c_file, C_CLIENT).unwrap();
    let status = Command::new("cc")
        .args(["-std=c11", "-Wall", "-Wextra", "-Werror", "-pedantic", "-c", "-o"])
        .arg(dir.path().join("client.o"))
        .arg("-I")
        .arg(header_dir())
        .arg(&c_file)
        .status()
        .expect("a C compiler on PATH");
    assert!(status.success());
    let status = Command::new("c++")
        .args(["-std=c++17", "-Wall", "-Werror", "-fsyntax-only", "-x", "c++"])
        .arg(header_dir().join("lqbridge.h"))
        .status()
        .expect("a C++ compiler on PATH");
    assert!(status.success());
}

/// Links the client against the static library when cargo has built one
/// next to this test binary.
#[test]
fn c_client_links_and_runs() {
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().and_then(Path::parent).unwrap();
    let lib = profile_dir.join("liblqbridge_ffi.a");
    if !lib.exists() {
        eprintln!("skipping: {} not built", lib.display());
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let c_file = dir.path().join("client.c");
    std::fs::write(&c_file, C_CLIENT).unwrap();
    let bin = dir.path().join("client");
    let status = Command::new("cc")
        .arg("-I")
        .arg(header_dir())
        .arg(&c_file)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success());
    let out = Command::new(&bin).output().unwrap();
    assert!(out.status.success(), "client exited with {:?}", out.status);
    let value: f64 = String::from_utf8(out.stdout).unwrap().trim().parse().unwrap();
    let exact = (4.0 * std::f64::consts::PI).powf(-0.5) * (-0.25_f64 / 4.0).exp();
    assert!((value - exact).abs() < 1e-12 * exact);
}
