//! C ABI for parsing, solving, assigning and verifying experimental designs.
//!
//! Handles are opaque and owned by the caller; release each with its `*_free`
//! function. Strings returned through `char **` are released with
//! `expdesign_string_free`. When a call returns anything other than
//! `EXPDESIGN_STATUS_OK`, `expdesign_last_error` describes the failure on the
//! calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Duration;

use expdesign::assign::{self, Policy};
use expdesign::solver::{self, SolveOptions};
use expdesign::{dsl, resolve_program, verify, NestMode, PlanMatrix, Program, ResolvedDesign};
use expdesign::{AssignError, SolveError};

/// Result of every fallible call. Values match the CLI exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExpdesignStatus {
    Ok = 0,
    Parse = 1,
    Resolve = 2,
    Unsatisfiable = 3,
    Timeout = 4,
    Uneven = 5,
    Verify = 6,
    /// Null pointer, invalid UTF-8 or an index out of range.
    InvalidArgument = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExpdesignNestMode {
    Kron = 0,
    Scoped = 1,
}

impl From<ExpdesignNestMode> for NestMode {
    fn from(m: ExpdesignNestMode) -> Self {
        match m {
            ExpdesignNestMode::Kron => NestMode::Kron,
            ExpdesignNestMode::Scoped => NestMode::Scoped,
        }
    }
}

/// A parsed program.
pub struct ExpdesignProgram(Program);

/// The assigned design of a program, resolved to constraints.
pub struct ExpdesignDesign(ResolvedDesign);

/// A solved plan matrix.
pub struct ExpdesignMatrix(PlanMatrix);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

struct Fail(ExpdesignStatus, String);

impl Fail {
    fn arg(msg: impl Into<String>) -> Self {
        Fail(ExpdesignStatus::InvalidArgument, msg.into())
    }
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> ExpdesignStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            ExpdesignStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            ExpdesignStatus::Panic
        }
    }
}

unsafe fn borrow<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| Fail::arg(format!("{what} is null")))
}

unsafe fn text<'a>(s: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if s.is_null() {
        return Err(Fail::arg(format!("{what} is null")));
    }
    CStr::from_ptr(s).to_str().map_err(|_| Fail::arg(format!("{what} is not UTF-8")))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(Fail::arg("output pointer is null"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn put_string(out: *mut *mut c_char, s: String) -> Result<(), Fail> {
    if out.is_null() {
        return Err(Fail::arg("output pointer is null"));
    }
    *out = CString::new(s).map_err(|_| Fail::arg("string holds a NUL byte"))?.into_raw();
    Ok(())
}

fn solve_fail(e: SolveError) -> Fail {
    let status = match e {
        SolveError::Timeout(_) => ExpdesignStatus::Timeout,
        SolveError::DesignTooLarge { .. } => ExpdesignStatus::Resolve,
        _ => ExpdesignStatus::Unsatisfiable,
    };
    Fail(status, e.to_string())
}

/// Message for the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn expdesign_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn expdesign_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parses program source text.
///
/// # Safety
/// `source` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn expdesign_program_parse(source: *const c_char, out: *mut *mut ExpdesignProgram) -> ExpdesignStatus {
    guard(|| {
        let src = text(source, "source")?;
        let p = dsl::parse(src).map_err(|e| Fail(ExpdesignStatus::Parse, e.to_string()))?;
        put(out, ExpdesignProgram(p))
    })
}

/// # Safety
/// `p` must come from `expdesign_program_parse` and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn expdesign_program_free(p: *mut ExpdesignProgram) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Renders a program back to canonical source text.
///
/// # Safety
/// `p` must be a live program handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn expdesign_program_render(p: *const ExpdesignProgram, out: *mut *mut c_char) -> ExpdesignStatus {
    guard(|| put_string(out, dsl::render(&borrow(p, "program")?.0)))
}

/// Resolves the program's assigned design, sized for its units.
///
/// # Safety
/// `p` must be a live program handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn expdesign_program_resolve(
    p: *const ExpdesignProgram,
    mode: ExpdesignNestMode,
    out: *mut *mut ExpdesignDesign,
) -> ExpdesignStatus {
    guard(|| {
        let rd = resolve_program(&borrow(p, "program")?.0, mode.into())
            .map_err(|e| Fail(ExpdesignStatus::Resolve, format!("{}: {e}", e.code())))?;
        put(out, ExpdesignDesign(rd))
    })
}

/// # Safety
/// `d` must come from `expdesign_program_resolve` and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn expdesign_design_free(d: *mut ExpdesignDesign) {
    if !d.is_null() {
        drop(Box::from_raw(d));
    }
}

/// Plan and trial counts of a resolved design.
///
/// # Safety
/// `d` must be a live design handle; `plans` and `trials` must be writable.
#[no_mangle]
pub unsafe extern "C" fn expdesign_design_shape(d: *const ExpdesignDesign, plans: *mut usize, trials: *mut usize) -> ExpdesignStatus {
    guard(|| {
        let shape = borrow(d, "design")?.0.shape;
        if plans.is_null() || trials.is_null() {
            return Err(Fail::arg("output pointer is null"));
        }
        *plans = shape.plans;
        *trials = shape.trials;
        Ok(())
    })
}

/// Solves a design. A `timeout_ms` of 0 uses the default budget.
///
/// # Safety
/// `d` must be a live design handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn expdesign_design_solve(
    d: *const ExpdesignDesign,
    seed: u64,
    timeout_ms: u64,
    out: *mut *mut ExpdesignMatrix,
) -> ExpdesignStatus {
    guard(|| {
        let rd = &borrow(d, "design")?.0;
        let options = if timeout_ms == 0 {
            SolveOptions::default()
        } else {
            SolveOptions {
                timeout: Duration::from_millis(timeout_ms),
            }
        };
        let m = solver::solve_with(rd, seed, options).map_err(solve_fail)?;
        put(out, ExpdesignMatrix(m))
    })
}

/// Counts the solutions of a small design, stopping at `limit` (0 for no limit).
///
/// # Safety
/// `d` must be a live design handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn expdesign_design_count(d: *const ExpdesignDesign, limit: usize, out: *mut u64) -> ExpdesignStatus {
    guard(|| {
        let rd = &borrow(d, "design")?.0;
        let limit = (limit > 0).then_some(limit);
        let n = solver::enumerate(rd, limit).map_err(solve_fail)?.count_all();
        if out.is_null() {
            return Err(Fail::arg("output pointer is null"));
        }
        *out = n as u64;
        Ok(())
    })
}

/// # Safety
/// `m` must come from `expdesign_design_solve` and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn expdesign_matrix_free(m: *mut ExpdesignMatrix) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Plan and trial counts of a solved matrix.
///
/// # Safety
/// `m` must be a live matrix handle; `plans` and `trials` must be writable.
#[no_mangle]
pub unsafe extern "C" fn expdesign_matrix_shape(m: *const ExpdesignMatrix, plans: *mut usize, trials: *mut usize) -> ExpdesignStatus {
    guard(|| {
        let m = &borrow(m, "matrix")?.0;
        if plans.is_null() || trials.is_null() {
            return Err(Fail::arg("output pointer is null"));
        }
        *plans = m.plans();
        *trials = m.trials();
        Ok(())
    })
}

/// Condition code at `(row, col)`.
///
/// # Safety
/// `m` must be a live matrix handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn expdesign_matrix_code(m: *const ExpdesignMatrix, row: usize, col: usize, out: *mut u64) -> ExpdesignStatus {
    guard(|| {
        let m = &borrow(m, "matrix")?.0;
        if row >= m.plans() || col >= m.trials() {
            return Err(Fail::arg(format!("cell ({row}, {col}) is outside {}x{}", m.plans(), m.trials())));
        }
        if out.is_null() {
            return Err(Fail::arg("output pointer is null"));
        }
        *out = m.get(row, col).0;
        Ok(())
    })
}

/// Plan table as CSV, cells named by the program's declared levels.
///
/// # Safety
/// `m` and `p` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn expdesign_matrix_plans_csv(
    m: *const ExpdesignMatrix,
    p: *const ExpdesignProgram,
    out: *mut *mut c_char,
) -> ExpdesignStatus {
    guard(|| {
        let (m, p) = (&borrow(m, "matrix")?.0, &borrow(p, "program")?.0);
        let csv = assign::plans_csv(m, &p.variables).map_err(|e| Fail::arg(e.to_string()))?;
        put_string(out, csv)
    })
}

/// Randomly assigns the program's units to the plans of `m` and returns the
/// assignment table as CSV. Warnings, if any, lead the text as `# warning:` lines.
///
/// # Safety
/// `p` and `m` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn expdesign_assign_csv(
    p: *const ExpdesignProgram,
    m: *const ExpdesignMatrix,
    seed: u64,
    allow_uneven: bool,
    out: *mut *mut c_char,
) -> ExpdesignStatus {
    guard(|| {
        let (p, m) = (&borrow(p, "program")?.0, &borrow(m, "matrix")?.0);
        let units = assign::build_units(p.assigned_units()).map_err(|e| Fail(ExpdesignStatus::Resolve, e.to_string()))?;
        let policy = if allow_uneven { Policy::AllowUneven } else { Policy::Strict };
        let table = assign::match_units(&units, m, seed, policy).map_err(|e| match e {
            AssignError::UnevenPartition { .. } => Fail(ExpdesignStatus::Uneven, e.to_string()),
            _ => Fail(ExpdesignStatus::Resolve, e.to_string()),
        })?;
        put_string(out, assign::assignment_csv(&table))
    })
}

/// Checks a plan table against the program's assigned design. The JSON
/// report is written to `report` whenever the table could be read; the
/// status is `EXPDESIGN_STATUS_VERIFY` if any check fails.
///
/// # Safety
/// `p` must be a live program handle; `plans_csv` must be a NUL-terminated
/// string; `report` must be writable.
#[no_mangle]
pub unsafe extern "C" fn expdesign_verify_csv(
    p: *const ExpdesignProgram,
    mode: ExpdesignNestMode,
    plans_csv: *const c_char,
    report: *mut *mut c_char,
) -> ExpdesignStatus {
    guard(|| {
        let p = &borrow(p, "program")?.0;
        let csv = text(plans_csv, "plans_csv")?;
        let resolve_fail = |e: expdesign::ResolveError| Fail(ExpdesignStatus::Resolve, format!("{}: {e}", e.code()));
        let rd = resolve_program(p, mode.into()).map_err(resolve_fail)?;
        let m = assign::read_plans_csv(csv, &rd.variables, &p.variables)
            .map_err(|e| Fail(ExpdesignStatus::Verify, format!("InvalidTable: {e}")))?;
        let rd = expdesign::resolve_for_table(p, mode.into(), m.plans()).map_err(resolve_fail)?;
        let r = verify::design_report(&m, &rd).map_err(|e| Fail(ExpdesignStatus::Verify, e.to_string()))?;
        put_string(report, r.to_json())?;
        let first = r.failures().next().map(|c| format!("{} failed on {}", c.name, c.variable));
        first.map_or(Ok(()), |msg| Err(Fail(ExpdesignStatus::Verify, msg)))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::ptr;

    const FFL: &str = include_str!("../../core/designs/ffl.pln");

    fn last_error() -> String {
        unsafe { CStr::from_ptr(expdesign_last_error()) }.to_str().unwrap().to_string()
    }

    unsafe fn take(s: *mut c_char) -> String {
        let v = CStr::from_ptr(s).to_str().unwrap().to_string();
        expdesign_string_free(s);
        v
    }

    unsafe fn parse(src: &str) -> *mut ExpdesignProgram {
        let src = CString::new(src).unwrap();
        let mut p = ptr::null_mut();
        assert_eq!(expdesign_program_parse(src.as_ptr(), &mut p), ExpdesignStatus::Ok);
        p
    }

    #[test]
    fn full_pipeline() {
        unsafe {
            let p = parse(FFL);
            let mut d = ptr::null_mut();
            assert_eq!(expdesign_program_resolve(p, ExpdesignNestMode::Kron, &mut d), ExpdesignStatus::Ok);
            let (mut plans, mut trials) = (0, 0);
            assert_eq!(expdesign_design_shape(d, &mut plans, &mut trials), ExpdesignStatus::Ok);
            assert_eq!((plans, trials), (4, 4));

            let mut m = ptr::null_mut();
            assert_eq!(expdesign_design_solve(d, 42, 0, &mut m), ExpdesignStatus::Ok);
            let mut code = 0;
            assert_eq!(expdesign_matrix_code(m, 3, 3, &mut code), ExpdesignStatus::Ok);
            assert!(code < 8);

            let mut csv = ptr::null_mut();
            assert_eq!(expdesign_matrix_plans_csv(m, p, &mut csv), ExpdesignStatus::Ok);
            let csv = take(csv);
            assert_eq!(csv.lines().count(), 5);

            let mut a = ptr::null_mut();
            assert_eq!(expdesign_assign_csv(p, m, 42, false, &mut a), ExpdesignStatus::Ok);
            assert_eq!(take(a).lines().count(), 29);

            let plans_c = CString::new(csv.clone()).unwrap();
            let mut report = ptr::null_mut();
            assert_eq!(
                expdesign_verify_csv(p, ExpdesignNestMode::Kron, plans_c.as_ptr(), &mut report),
                ExpdesignStatus::Ok
            );
            assert!(take(report).contains("\"passed\": true"));
            assert_eq!(last_error(), "");

            // creation moved after editing in the first plan
            let mut rows: Vec<String> = csv.lines().map(str::to_string).collect();
            let mut cells: Vec<&str> = rows[1].split(',').collect();
            cells.swap(1, 3);
            rows[1] = cells.join(",");
            let bad = CString::new(rows.join("\n")).unwrap();
            let mut report = ptr::null_mut();
            assert_eq!(
                expdesign_verify_csv(p, ExpdesignNestMode::Kron, bad.as_ptr(), &mut report),
                ExpdesignStatus::Verify
            );
            assert!(take(report).contains("\"passed\": false"));
            assert!(!last_error().is_empty());

            expdesign_matrix_free(m);
            expdesign_design_free(d);
            expdesign_program_free(p);
        }
    }

    #[test]
    fn statuses_match_cli_codes() {
        unsafe {
            let bad = CString::new("variable x {").unwrap();
            let mut p = ptr::null_mut();
            assert_eq!(expdesign_program_parse(bad.as_ptr(), &mut p), ExpdesignStatus::Parse);
            assert!(p.is_null());
            assert!(last_error().contains("E-SYNTAX"));

            let src = FFL.replace("units(28)", "units(27)");
            let p = parse(&src);
            let (mut d, mut m, mut out) = (ptr::null_mut(), ptr::null_mut(), ptr::null_mut());
            assert_eq!(expdesign_program_resolve(p, ExpdesignNestMode::Kron, &mut d), ExpdesignStatus::Ok);
            assert_eq!(expdesign_design_solve(d, 1, 0, &mut m), ExpdesignStatus::Ok);
            assert_eq!(expdesign_assign_csv(p, m, 1, false, &mut out), ExpdesignStatus::Uneven);
            assert_eq!(expdesign_assign_csv(p, m, 1, true, &mut out), ExpdesignStatus::Ok);
            assert!(take(out).starts_with("# warning:"));
            expdesign_matrix_free(m);
            expdesign_design_free(d);
            expdesign_program_free(p);

            let desai = include_str!("../../core/designs/desai_chin.pln");
            let p = parse(desai);
            let mut d = ptr::null_mut();
            assert_eq!(expdesign_program_resolve(p, ExpdesignNestMode::Kron, &mut d), ExpdesignStatus::Resolve);
            assert!(last_error().contains("PartialNesting"));
            expdesign_program_free(p);
        }
    }

    #[test]
    fn null_and_range_arguments_are_rejected() {
        unsafe {
            let mut p = ptr::null_mut();
            assert_eq!(expdesign_program_parse(ptr::null(), &mut p), ExpdesignStatus::InvalidArgument);
            let mut d = ptr::null_mut();
            assert_eq!(
                expdesign_program_resolve(ptr::null(), ExpdesignNestMode::Kron, &mut d),
                ExpdesignStatus::InvalidArgument
            );
            let p = parse(include_str!("../../core/designs/latin3.pln"));
            assert_eq!(expdesign_program_resolve(p, ExpdesignNestMode::Scoped, &mut d), ExpdesignStatus::Ok);
            let mut n = 0;
            assert_eq!(expdesign_design_count(d, 0, &mut n), ExpdesignStatus::Ok);
            assert_eq!(n, 12);
            assert_eq!(expdesign_design_count(d, 5, &mut n), ExpdesignStatus::Ok);
            assert_eq!(n, 5);
            let mut m = ptr::null_mut();
            assert_eq!(expdesign_design_solve(d, 0, 0, &mut m), ExpdesignStatus::Ok);
            let mut code = 0;
            assert_eq!(expdesign_matrix_code(m, 3, 0, &mut code), ExpdesignStatus::InvalidArgument);
            assert_eq!(expdesign_design_solve(d, 0, 0, ptr::null_mut()), ExpdesignStatus::InvalidArgument);
            expdesign_string_free(ptr::null_mut());
            expdesign_matrix_free(m);
            expdesign_design_free(d);
            expdesign_program_free(p);
        }
    }

    #[test]
    fn render_round_trips() {
        unsafe {
            let p = parse(FFL);
            let mut out = ptr::null_mut();
            assert_eq!(expdesign_program_render(p, &mut out), ExpdesignStatus::Ok);
            let rendered = take(out);
            let q = parse(&rendered);
            assert_eq!((*p).0, (*q).0);
            expdesign_program_free(p);
            expdesign_program_free(q);
        }
    }
}
