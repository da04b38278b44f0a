use std::ffi::{CStr, CString};
use std::ptr;

use ksflow_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(ks_last_error_message()) }.to_string_lossy().into_owned()
}

const SMALL: &str = "scenario = \"ffi\"\n[solver]\ngamma = -2.5\nn_cells = 96\nr_max = 10.0\ndt = 1e-3\nt_end = 0.04\noutput_stride = 4\n";

fn small_config() -> *mut KsConfig {
    let text = CString::new(SMALL).unwrap();
    let mut cfg = ptr::null_mut();
    assert_eq!(unsafe { ks_config_parse(text.as_ptr(), &mut cfg) }, KsStatus::Ok, "{}", last_error());
    cfg
}

#[test]
fn simulate_round_trip() {
    let cfg = small_config();
    let mut sim = ptr::null_mut();
    unsafe {
        assert_eq!(ks_simulate(cfg, ptr::null(), &mut sim), KsStatus::Ok, "{}", last_error());
        let mut passed = false;
        let mut rows = 0usize;
        assert_eq!(ks_simulation_passed(sim, &mut passed), KsStatus::Ok);
        assert_eq!(ks_simulation_rows(sim, &mut rows), KsStatus::Ok);
        assert!(passed);
        assert_eq!(rows, 11);

        let name = CString::new("t").unwrap();
        let mut written = 0usize;
        let mut short = vec![0.0; 3];
        let s = ks_simulation_column(sim, name.as_ptr(), short.as_mut_ptr(), short.len(), &mut written);
        assert_eq!((s, written), (KsStatus::BufferTooSmall, rows));
        let mut t = vec![0.0; rows];
        assert_eq!(ks_simulation_column(sim, name.as_ptr(), t.as_mut_ptr(), rows, &mut written), KsStatus::Ok);
        assert!((t[rows - 1] - 0.04).abs() < 1e-12);

        let report = CStr::from_ptr(ks_simulation_report(sim)).to_str().unwrap();
        assert!(report.contains("## verdicts") && report.contains("passed = true"));
        ks_simulation_free(sim);
        ks_config_free(cfg);
    }
}

#[test]
fn stepping_matches_the_batch_run() {
    let cfg = small_config();
    unsafe {
        let mut sim = ptr::null_mut();
        assert_eq!(ks_simulate(cfg, ptr::null(), &mut sim), KsStatus::Ok);
        let fisher = CString::new("fisher").unwrap();
        let mut batch = vec![0.0; 11];
        let mut n = 0;
        assert_eq!(ks_simulation_column(sim, fisher.as_ptr(), batch.as_mut_ptr(), 11, &mut n), KsStatus::Ok);

        let mut solver = ptr::null_mut();
        assert_eq!(ks_solver_new(cfg, &mut solver), KsStatus::Ok, "{}", last_error());
        assert_eq!(ks_solver_step(solver, 40), KsStatus::Ok);
        let mut value = 0.0;
        assert_eq!(ks_solver_diagnostic(solver, fisher.as_ptr(), &mut value), KsStatus::Ok);
        assert!((value - batch[10]).abs() <= 1e-12 * batch[10], "{value} vs {}", batch[10]);

        let mut cells = 0;
        assert_eq!(ks_solver_values(solver, ptr::null_mut(), 0, &mut cells), KsStatus::BufferTooSmall);
        let mut f = vec![0.0; cells];
        assert_eq!(ks_solver_values(solver, f.as_mut_ptr(), cells, &mut cells), KsStatus::Ok);
        assert_eq!(cells, 96);
        assert!(f.iter().all(|v| *v >= 0.0));

        ks_solver_free(solver);
        ks_simulation_free(sim);
        ks_config_free(cfg);
    }
}

#[test]
fn errors_are_reported_not_raised() {
    unsafe {
        let mut cfg = ptr::null_mut();
        let bad = CString::new("scenario = \"x\"\nwhat = 1\n").unwrap();
        assert_eq!(ks_config_parse(bad.as_ptr(), &mut cfg), KsStatus::InvalidInput);
        assert!(cfg.is_null());
        assert!(last_error().contains("what"), "{}", last_error());

        assert_eq!(ks_config_parse(ptr::null(), &mut cfg), KsStatus::NullPointer);
        assert_eq!(ks_simulation_passed(ptr::null(), &mut false), KsStatus::NullPointer);
        assert!(ks_simulation_report(ptr::null()).is_null());

        let no_solver = CString::new("scenario = \"x\"\n").unwrap();
        assert_eq!(ks_config_parse(no_solver.as_ptr(), &mut cfg), KsStatus::Ok);
        let mut solver = ptr::null_mut();
        assert_ne!(ks_solver_new(cfg, &mut solver), KsStatus::Ok);
        assert!(solver.is_null());
        ks_config_free(cfg);

        ks_config_free(ptr::null_mut());
        ks_simulation_free(ptr::null_mut());
        ks_solver_free(ptr::null_mut());
    }
}

#[test]
fn reference_config_and_seed() {
    unsafe {
        let mut cfg = ptr::null_mut();
        assert_eq!(ks_config_reference(&mut cfg), KsStatus::Ok);
        assert_eq!(ks_config_set_seed(cfg, 9), KsStatus::Ok);
        assert_eq!(ks_config_set_seed(ptr::null_mut(), 9), KsStatus::NullPointer);
        ks_config_free(cfg);
    }
    let v = unsafe { CStr::from_ptr(ks_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn lifted_suites_through_the_abi() {
    let (mut passed, mut rows) = (false, 0usize);
    let frames = CString::new("frames").unwrap();
    assert_eq!(unsafe { ks_verify_lifted(frames.as_ptr(), 0, 1, &mut passed, &mut rows) }, KsStatus::Ok);
    assert!(passed && rows > 0);
    let nope = CString::new("nope").unwrap();
    assert_eq!(unsafe { ks_verify_lifted(nope.as_ptr(), 0, 1, &mut passed, &mut rows) }, KsStatus::InvalidInput);
}
