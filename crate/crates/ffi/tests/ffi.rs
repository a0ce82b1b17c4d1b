use phtplate_ffi::*;
use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

fn models() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../models")
}

fn cstr(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(pht_last_error()) }.to_str().unwrap().to_string()
}

fn load(name: &str) -> *mut PhtModel {
    let p = cstr(models().join(name).to_str().unwrap());
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { pht_model_load(p.as_ptr(), &mut m) }, PhtStatus::Ok, "{}", last_error());
    assert!(!m.is_null());
    m
}

#[test]
fn solve_matches_library() {
    let m = load("square.toml");
    let mut sol = ptr::null_mut();
    assert_eq!(unsafe { pht_solve(m, 4, &mut sol) }, PhtStatus::Ok);
    let mut buf = [0.0; 10];
    let n = unsafe { pht_solution_frequencies(sol, buf.as_mut_ptr(), buf.len()) };
    assert_eq!(n, 4);
    assert!((buf[0] - 0.29168).abs() < 1e-4, "{}", buf[0]);
    assert!((buf[1] - buf[2]).abs() < 1e-8);
    assert!(buf[1..4].windows(2).all(|w| w[0] <= w[1]));
    let nf = unsafe { pht_solution_num_free(sol) };
    assert!(nf > 0 && nf < unsafe { pht_solution_num_dofs(sol) });
    let mut v = vec![0.0; nf];
    assert_eq!(unsafe { pht_solution_mode(sol, 0, v.as_mut_ptr(), nf) }, nf);
    assert!(v.iter().any(|x| *x != 0.0));
    assert_eq!(unsafe { pht_solution_mode(sol, 9, v.as_mut_ptr(), nf) }, 0);
    assert_eq!(unsafe { pht_solution_frequencies(sol, buf.as_mut_ptr(), 2) }, 2);
    unsafe {
        pht_solution_free(sol);
        pht_model_free(m);
    }
}

#[test]
fn errors_are_reported_not_raised() {
    let mut m = ptr::null_mut();
    let bad = cstr("[geometry]\nkind = \"disk\"\n");
    let s = unsafe { pht_model_parse(bad.as_ptr(), &mut m) };
    assert_eq!(s, PhtStatus::Input);
    assert!(m.is_null());
    assert!(!last_error().is_empty());

    let missing = cstr("/nonexistent/model.toml");
    assert_eq!(unsafe { pht_model_load(missing.as_ptr(), &mut m) }, PhtStatus::Input);
    assert_eq!(unsafe { pht_model_load(ptr::null(), &mut m) }, PhtStatus::NullOrEncoding);
    assert_eq!(unsafe { pht_solve(ptr::null(), 3, &mut ptr::null_mut()) }, PhtStatus::NullOrEncoding);
    assert_eq!(unsafe { pht_solution_num_modes(ptr::null()) }, 0);
    unsafe {
        pht_model_free(ptr::null_mut());
        pht_solution_free(ptr::null_mut());
        pht_string_free(ptr::null_mut());
    }

    let m = load("square.toml");
    let mut out = PhtAdaptSummary::default();
    assert_eq!(unsafe { pht_adapt(m, 100_000, &mut out) }, PhtStatus::Input);
    assert!(last_error().contains("mode"));
    let mut sol = ptr::null_mut();
    assert_eq!(unsafe { pht_solve(m, 2, &mut sol) }, PhtStatus::Ok);
    assert!(last_error().is_empty());
    unsafe {
        pht_solution_free(sol);
        pht_model_free(m);
    }
}

#[test]
fn adapt_and_sweep_through_the_abi() {
    let text = std::fs::read_to_string(models().join("square.toml")).unwrap();
    let text = text.replace("tau_lambda = 1e-4", "tau_lambda = 2e-3").replace("tau_phi = 1e-2", "tau_phi = 5e-2");
    let c = cstr(&text);
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { pht_model_parse(c.as_ptr(), &mut m) }, PhtStatus::Ok, "{}", last_error());
    let mut out = PhtAdaptSummary::default();
    assert_eq!(unsafe { pht_adapt(m, 2, &mut out) }, PhtStatus::Ok, "{}", last_error());
    assert_eq!((out.set_start, out.set_n), (1, 2));
    assert!(out.converged && out.steps >= 1);
    assert!(out.e_lambda <= 2e-3 && out.delta_phi <= 5e-2);
    assert!((out.frequency - 0.7206).abs() < 5e-3, "{}", out.frequency);

    let mut js = ptr::null_mut();
    assert_eq!(unsafe { pht_sweep_json(m, 0.2, 0.5, &mut js) }, PhtStatus::Ok, "{}", last_error());
    let s = unsafe { CStr::from_ptr(js) }.to_str().unwrap().to_string();
    unsafe { pht_string_free(js) };
    assert!(s.contains("\"phases\"") && s.contains("\"converged\": true"), "{s}");
    assert_eq!(unsafe { pht_sweep_json(m, 0.5, 0.2, &mut js) }, PhtStatus::Input);
    assert!(js.is_null());
    unsafe { pht_model_free(m) };
}

#[test]
fn header_is_valid_c_and_links() {
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let header = manifest.join("include/phtplate.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for f in ["pht_model_load", "pht_solve", "pht_solution_frequencies", "pht_adapt", "pht_sweep_json", "pht_last_error"] {
        assert!(text.contains(f), "{f} missing from header");
    }
    let lib_dir = std::env::current_exe().unwrap().parent().unwrap().parent().unwrap().to_path_buf();
    let tmp = PathBuf::from(env!("CARGO_TARGET_TMPDIR"));
    let exe = tmp.join("ffi_smoke");
    let status = Command::new("cc")
        .arg(manifest.join("tests/c/smoke.c"))
        .arg("-I")
        .arg(manifest.join("include"))
        .arg("-L")
        .arg(&lib_dir)
        .arg(format!("-Wl,-rpath,{}", lib_dir.display()))
        .args(["-lphtplate_ffi", "-Wall", "-Werror", "-o"])
        .arg(&exe)
        .status()
        .expect("a C compiler is required");
    assert!(status.success());
    let out = Command::new(&exe).arg(models().join("square.toml")).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    let first: f64 = stdout.lines().nth(1).unwrap().parse().unwrap();
    assert!((first - 0.29168).abs() < 1e-4);
}
