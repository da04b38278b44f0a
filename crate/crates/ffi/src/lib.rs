//! C ABI over `ksflow`.
//!
//! Objects cross the boundary as opaque handles created by a `ks_*_new`,
//! `ks_*_parse` or `ks_simulate` call and released with the matching
//! `ks_*_free`. Every fallible call returns a [`KsStatus`]; on failure the
//! message is available from [`ks_last_error_message`] on the same thread.
//! Panics never unwind into the caller: they surface as `KS_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use ksflow::diagnostics::DiagnosticsRow;
use ksflow::harness::{simulate, RunConfig, Simulation};
use ksflow::lifted::{verify, LiftedOptions, Suite};
use ksflow::solver::{RunState, Stepper};
use ksflow::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    Hypothesis = 3,
    Solver = 4,
    NonFinite = 5,
    Format = 6,
    Io = 7,
    /// The output buffer is too small; the required length was written.
    BufferTooSmall = 8,
    Panic = 9,
}

/// Parsed run configuration.
pub struct KsConfig(RunConfig);

/// Finished `simulate` run: verdicts plus the diagnostics rows.
pub struct KsSimulation {
    sim: Simulation,
    report: CString,
}

/// Radial solver advanced one step at a time.
pub struct KsSolver {
    stepper: Stepper,
    state: RunState,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).unwrap_or_default());
}

fn fail(status: KsStatus, msg: impl Into<String>) -> KsStatus {
    set_error(msg);
    status
}

fn status_of(e: &Error) -> KsStatus {
    match e {
        Error::InvalidInput(_) => KsStatus::InvalidInput,
        Error::NonFinite(_) => KsStatus::NonFinite,
        Error::Hypothesis(_) => KsStatus::Hypothesis,
        Error::Solver(_) => KsStatus::Solver,
        Error::Format(_) => KsStatus::Format,
        Error::Io(_) => KsStatus::Io,
    }
}

type Outcome = std::result::Result<(), KsStatus>;

fn lift<T>(r: ksflow::Result<T>) -> std::result::Result<T, KsStatus> {
    r.map_err(|e| fail(status_of(&e), e.to_string()))
}

/// Runs `body`, clearing the last error first and converting panics.
fn guard(body: impl FnOnce() -> Outcome) -> KsStatus {
    set_error("");
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => KsStatus::Ok,
        Ok(Err(s)) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            fail(KsStatus::Panic, format!("panic: {msg}"))
        }
    }
}

unsafe fn borrow<'a, T>(p: *const T, what: &str) -> std::result::Result<&'a T, KsStatus> {
    p.as_ref().ok_or_else(|| fail(KsStatus::NullPointer, format!("{what} is null")))
}

unsafe fn borrow_mut<'a, T>(p: *mut T, what: &str) -> std::result::Result<&'a mut T, KsStatus> {
    p.as_mut().ok_or_else(|| fail(KsStatus::NullPointer, format!("{what} is null")))
}

unsafe fn string<'a>(p: *const c_char, what: &str) -> std::result::Result<&'a str, KsStatus> {
    if p.is_null() {
        return Err(fail(KsStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| fail(KsStatus::InvalidInput, format!("{what} is not UTF-8")))
}

unsafe fn write_out<T>(out: *mut T, value: T, what: &str) -> Outcome {
    if out.is_null() {
        return Err(fail(KsStatus::NullPointer, format!("{what} is null")));
    }
    out.write(value);
    Ok(())
}

/// Copies `src` into `buf[..cap]`, always reporting the full length in `written`.
unsafe fn copy_out<T: Copy>(src: &[T], buf: *mut T, cap: usize, written: *mut usize) -> Outcome {
    write_out(written, src.len(), "written")?;
    if cap < src.len() {
        return Err(fail(KsStatus::BufferTooSmall, format!("need room for {} values, got {cap}", src.len())));
    }
    if !src.is_empty() {
        if buf.is_null() {
            return Err(fail(KsStatus::NullPointer, "buffer is null"));
        }
        std::ptr::copy_nonoverlapping(src.as_ptr(), buf, src.len());
    }
    Ok(())
}

/// Message for the most recent failure on this thread, or the empty string.
///
/// The pointer stays valid until the next `ks_*` call on the same thread.
#[no_mangle]
pub extern "C" fn ks_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ks_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// The built-in reference configuration (Coulomb case, unit-mass Gaussian).
///
/// # Safety
/// `out` must be valid for a pointer write. Release the handle with [`ks_config_free`].
#[no_mangle]
pub unsafe extern "C" fn ks_config_reference(out: *mut *mut KsConfig) -> KsStatus {
    guard(|| write_out(out, Box::into_raw(Box::new(KsConfig(RunConfig::reference()))), "out"))
}

/// Parses TOML configuration text. Relative paths inside resolve against the
/// current directory.
///
/// # Safety
/// `toml` must be a NUL-terminated string and `out` valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn ks_config_parse(toml: *const c_char, out: *mut *mut KsConfig) -> KsStatus {
    guard(|| {
        let cfg = lift(RunConfig::parse(string(toml, "toml")?, None))?;
        write_out(out, Box::into_raw(Box::new(KsConfig(cfg))), "out")
    })
}

/// Loads a TOML configuration file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn ks_config_load(path: *const c_char, out: *mut *mut KsConfig) -> KsStatus {
    guard(|| {
        let cfg = lift(RunConfig::load(Path::new(string(path, "path")?)))?;
        write_out(out, Box::into_raw(Box::new(KsConfig(cfg))), "out")
    })
}

/// Replaces the master seed.
///
/// # Safety
/// `cfg` must be a live handle from a `ks_config_*` constructor.
#[no_mangle]
pub unsafe extern "C" fn ks_config_set_seed(cfg: *mut KsConfig, seed: u64) -> KsStatus {
    guard(|| {
        let c = borrow_mut(cfg, "config")?;
        c.0 = c.0.clone().with_seed(seed);
        Ok(())
    })
}

/// # Safety
/// `cfg` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ks_config_free(cfg: *mut KsConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Runs the configured scenario with its monitors. With a non-null `out_dir`
/// the diagnostics CSV and the report are written there.
///
/// A run whose monitors fail still returns `KS_STATUS_OK`; query the verdict
/// with [`ks_simulation_passed`].
///
/// # Safety
/// `cfg` must be a live config handle, `out_dir` null or a NUL-terminated
/// string, and `out` valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn ks_simulate(cfg: *const KsConfig, out_dir: *const c_char, out: *mut *mut KsSimulation) -> KsStatus {
    guard(|| {
        let c = borrow(cfg, "config")?;
        let dir = if out_dir.is_null() { None } else { Some(Path::new(string(out_dir, "out_dir")?)) };
        let sim = lift(simulate(&c.0, dir))?;
        let report = CString::new(sim.report.render().replace('\0', " ")).unwrap_or_default();
        write_out(out, Box::into_raw(Box::new(KsSimulation { sim, report })), "out")
    })
}

/// # Safety
/// `sim` must be a live simulation handle and `passed` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn ks_simulation_passed(sim: *const KsSimulation, passed: *mut bool) -> KsStatus {
    guard(|| write_out(passed, borrow(sim, "simulation")?.sim.report.passed(), "passed"))
}

/// Number of output times.
///
/// # Safety
/// `sim` must be a live simulation handle and `rows` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn ks_simulation_rows(sim: *const KsSimulation, rows: *mut usize) -> KsStatus {
    guard(|| write_out(rows, borrow(sim, "simulation")?.sim.rows.len(), "rows"))
}

/// Copies one diagnostics column (`t`, `mass`, `fisher`, ...) into `buf`.
/// `written` always receives the row count, also when `cap` is too small.
///
/// # Safety
/// `sim` must be a live simulation handle, `name` a NUL-terminated string,
/// `buf` valid for `cap` writes and `written` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn ks_simulation_column(
    sim: *const KsSimulation,
    name: *const c_char,
    buf: *mut f64,
    cap: usize,
    written: *mut usize,
) -> KsStatus {
    guard(|| {
        let s = borrow(sim, "simulation")?;
        let name = string(name, "name")?;
        if !DiagnosticsRow::COLUMNS.contains(&name) {
            return Err(fail(KsStatus::InvalidInput, format!("unknown column '{name}'")));
        }
        let values: Vec<f64> = s.sim.rows.iter().map(|r| r.column(name).unwrap_or(f64::NAN)).collect();
        copy_out(&values, buf, cap, written)
    })
}

/// The rendered report. The pointer lives as long as the handle.
///
/// Returns null when `sim` is null.
///
/// # Safety
/// `sim` must be null or a live simulation handle.
#[no_mangle]
pub unsafe extern "C" fn ks_simulation_report(sim: *const KsSimulation) -> *const c_char {
    match sim.as_ref() {
        Some(s) => s.report.as_ptr(),
        None => std::ptr::null(),
    }
}

/// # Safety
/// `sim` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ks_simulation_free(sim: *mut KsSimulation) {
    if !sim.is_null() {
        drop(Box::from_raw(sim));
    }
}

/// A radial solver at `t = 0` holding the config's initial data.
///
/// # Safety
/// `cfg` must be a live config handle and `out` valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn ks_solver_new(cfg: *const KsConfig, out: *mut *mut KsSolver) -> KsStatus {
    guard(|| {
        let c = &borrow(cfg, "config")?.0;
        let solver = lift(c.solver())?;
        let stepper = lift(Stepper::new(solver))?;
        let f0 = lift(c.initial.radial(*stepper.grid()))?;
        let state = lift(stepper.initial_state(&f0))?;
        write_out(out, Box::into_raw(Box::new(KsSolver { stepper, state })), "out")
    })
}

/// Advances `n_steps` configured steps.
///
/// # Safety
/// `solver` must be a live solver handle.
#[no_mangle]
pub unsafe extern "C" fn ks_solver_step(solver: *mut KsSolver, n_steps: u64) -> KsStatus {
    guard(|| {
        let s = borrow_mut(solver, "solver")?;
        for _ in 0..n_steps {
            lift(s.stepper.step(&mut s.state, None))?;
        }
        Ok(())
    })
}

/// # Safety
/// `solver` must be a live solver handle and `t` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn ks_solver_time(solver: *const KsSolver, t: *mut f64) -> KsStatus {
    guard(|| write_out(t, borrow(solver, "solver")?.state.time, "t"))
}

/// Cell-centre values of `f`; `written` always receives the cell count.
///
/// # Safety
/// `solver` must be a live solver handle, `buf` valid for `cap` writes and
/// `written` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn ks_solver_values(solver: *const KsSolver, buf: *mut f64, cap: usize, written: *mut usize) -> KsStatus {
    guard(|| copy_out(&borrow(solver, "solver")?.state.f, buf, cap, written))
}

/// One diagnostic of the current state, by CSV column name.
///
/// # Safety
/// `solver` must be a live solver handle, `name` a NUL-terminated string and
/// `value` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn ks_solver_diagnostic(solver: *const KsSolver, name: *const c_char, value: *mut f64) -> KsStatus {
    guard(|| {
        let s = borrow(solver, "solver")?;
        let name = string(name, "name")?;
        let coef = lift(s.stepper.coefficients(&s.state.f, true))?;
        let row = lift(s.stepper.row(&s.state, &coef))?;
        let v = row.column(name).ok_or_else(|| fail(KsStatus::InvalidInput, format!("unknown column '{name}'")))?;
        write_out(value, v, "value")
    })
}

/// # Safety
/// `solver` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ks_solver_free(solver: *mut KsSolver) {
    if !solver.is_null() {
        drop(Box::from_raw(solver));
    }
}

/// Runs one lifted-operator suite (`frames`, `commutators`, `flows`,
/// `maxwell`, `derivatives`, `dissipation`, `marginal`) with its default
/// exponents. `samples` of 0 keeps the default Monte Carlo size.
///
/// # Safety
/// `suite` must be a NUL-terminated string; `passed` and `rows` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ks_verify_lifted(suite: *const c_char, samples: u64, seed: u64, passed: *mut bool, rows: *mut usize) -> KsStatus {
    guard(|| {
        let suite = lift(Suite::parse(string(suite, "suite")?))?;
        let mut opts = LiftedOptions { seed, ..Default::default() };
        if samples > 0 {
            opts.samples = samples;
        }
        let rep = lift(verify(suite, &opts))?;
        write_out(passed, rep.passed(), "passed")?;
        write_out(rows, rep.rows.len(), "rows")
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn statuses_follow_error_kinds() {
        assert_eq!(status_of(&Error::Io("x".into())), KsStatus::Io);
        assert_eq!(status_of(&Error::Hypothesis("x".into())), KsStatus::Hypothesis);
    }

    #[test]
    fn panics_become_status_codes() {
        let s = guard(|| panic!("boom"));
        assert_eq!(s, KsStatus::Panic);
        let msg = unsafe { CStr::from_ptr(ks_last_error_message()) }.to_str().unwrap();
        assert!(msg.contains("boom"));
        assert_eq!(guard(|| Ok(())), KsStatus::Ok);
        assert_eq!(unsafe { CStr::from_ptr(ks_last_error_message()) }.to_bytes(), b"");
    }

    #[test]
    fn short_buffers_report_the_needed_length() {
        let mut n = 0usize;
        let mut buf = [0.0f64; 2];
        let s = guard(|| unsafe { copy_out(&[1.0, 2.0, 3.0], buf.as_mut_ptr(), 2, &mut n) });
        assert_eq!((s, n), (KsStatus::BufferTooSmall, 3));
    }
}
