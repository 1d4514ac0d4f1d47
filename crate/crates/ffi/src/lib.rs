//! C interface to the `bspc` solver.
//!
//! Every function returns a [`BspcStatus`]; on failure the thread-local
//! message from [`bspc_last_error_message`] describes the problem. Handles
//! are opaque and must be released with the matching `*_free` function.

use bspc::collision::CollisionWorkspace;
use bspc::conserve::{build_constraints, ConstraintKind, ConstraintSystem};
use bspc::diagnostics::{maxwellian, moments};
use bspc::grid::{State, VelocityGrid};
use bspc::integrate::{self, IntegratorConfig, Method, StepSize};
use bspc::kernel::{Angular, KernelSpec, TableCache, TableConfig};
use bspc::Error;
use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::Arc;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BspcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    GridMismatch = 3,
    /// Quadrature failure or singular linear system.
    Numerical = 4,
    /// The solution became non-finite.
    BlowUp = 5,
    Io = 6,
    /// Buffer too small or memory budget exceeded.
    Capacity = 7,
    /// A Rust panic was caught at the boundary.
    Internal = 8,
}

/// Time-stepping scheme.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BspcMethod {
    Euler = 0,
    Rk2 = 1,
    Rk4 = 2,
}

/// Velocity grid handle.
pub struct BspcGrid(Arc<VelocityGrid>);

/// Distribution handle: nodal values plus time.
pub struct BspcState(State);

/// Collision operator, its weight table and the conservation constraints.
pub struct BspcSolver {
    ws: CollisionWorkspace,
    cs: ConstraintSystem,
}

/// Mass, momentum and energy (1/2 int g |v|^2). Unused momentum slots are 0.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BspcMoments {
    pub mass: f64,
    pub momentum: [f64; 3],
    pub energy: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> BspcStatus {
    match e {
        Error::InvalidArgument(_) | Error::NonFinite { .. } | Error::Config(_) => BspcStatus::InvalidArgument,
        Error::GridMismatch(_) => BspcStatus::GridMismatch,
        Error::Quadrature { .. } | Error::Singular(_) => BspcStatus::Numerical,
        Error::BlowUp { .. } => BspcStatus::BlowUp,
        Error::Io { .. } | Error::Format { .. } => BspcStatus::Io,
        Error::MemoryBudget { .. } => BspcStatus::Capacity,
    }
}

struct Fail(BspcStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(BspcStatus::NullPointer, format!("{what} is null"))
}

/// Run `f`, translating errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> BspcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            BspcStatus::Ok
        }
        Ok(Err(Fail(code, msg))) => {
            set_error(msg);
            code
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal error: {msg}"));
            BspcStatus::Internal
        }
    }
}

unsafe fn borrow<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn copy_out(values: &[f64], out: *mut f64, len: usize) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("output buffer"));
    }
    if len < values.len() {
        return Err(Fail(BspcStatus::Capacity, format!("buffer holds {len} values, {} needed", values.len())));
    }
    std::ptr::copy_nonoverlapping(values.as_ptr(), out, values.len());
    Ok(())
}

/// Message of the last failed call on this thread ("" after a success).
///
/// The pointer stays valid until the next `bspc_*` call on the same thread.
#[no_mangle]
pub extern "C" fn bspc_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn bspc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Create a midpoint grid with `n` points per axis on (-l, l)^d.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn bspc_grid_new(d: usize, n: usize, l: f64, out: *mut *mut BspcGrid) -> BspcStatus {
    guard(|| put(out, BspcGrid(Arc::new(VelocityGrid::new(d, n, l)?))))
}

/// Number of nodes n^d.
///
/// # Safety
/// `grid` must be null or a live handle from [`bspc_grid_new`]. Null gives 0.
#[no_mangle]
pub unsafe extern "C" fn bspc_grid_len(grid: *const BspcGrid) -> usize {
    grid.as_ref().map_or(0, |g| g.0.len())
}

/// Release a grid. States and solvers built from it stay valid.
///
/// # Safety
/// `grid` must be null or a handle from [`bspc_grid_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn bspc_grid_free(grid: *mut BspcGrid) {
    if !grid.is_null() {
        drop(Box::from_raw(grid));
    }
}

/// Maxwellian with mass `m0`, mean velocity `u0` (d entries) and temperature `t0`.
///
/// # Safety
/// `grid` must be a live grid handle, `u0` must point to d readable doubles
/// and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bspc_state_maxwellian(
    grid: *const BspcGrid,
    m0: f64,
    u0: *const f64,
    t0: f64,
    out: *mut *mut BspcState,
) -> BspcStatus {
    guard(|| {
        let g = borrow(grid, "grid")?;
        if u0.is_null() {
            return Err(null("u0"));
        }
        let u = std::slice::from_raw_parts(u0, g.0.dim());
        put(out, BspcState(maxwellian(g.0.clone(), m0, u, t0)?))
    })
}

/// State from `len` nodal values (row-major, last axis fastest) at time `t`.
///
/// # Safety
/// `grid` must be a live grid handle, `values` must point to `len` readable
/// doubles and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bspc_state_from_values(
    grid: *const BspcGrid,
    values: *const f64,
    len: usize,
    t: f64,
    out: *mut *mut BspcState,
) -> BspcStatus {
    guard(|| {
        let g = borrow(grid, "grid")?;
        if values.is_null() {
            return Err(null("values"));
        }
        let v = std::slice::from_raw_parts(values, len).to_vec();
        put(out, BspcState(State::new(g.0.clone(), v, t)?))
    })
}

/// Copy the nodal values into `out`, which holds `len` doubles.
///
/// # Safety
/// `state` must be a live state handle and `out` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn bspc_state_values(state: *const BspcState, out: *mut f64, len: usize) -> BspcStatus {
    guard(|| copy_out(borrow(state, "state")?.0.values(), out, len))
}

/// Current time of a state (NaN for a null handle).
///
/// # Safety
/// `state` must be null or a live state handle.
#[no_mangle]
pub unsafe extern "C" fn bspc_state_time(state: *const BspcState) -> f64 {
    state.as_ref().map_or(f64::NAN, |s| s.0.t)
}

/// Mass, momentum and energy of a state.
///
/// # Safety
/// `state` must be a live state handle and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bspc_state_moments(state: *const BspcState, out: *mut BspcMoments) -> BspcStatus {
    guard(|| {
        let s = borrow(state, "state")?;
        if out.is_null() {
            return Err(null("output pointer"));
        }
        let m = moments(&s.0, 0.0, &[]);
        let mut momentum = [0.0; 3];
        momentum[..m.momentum.len()].copy_from_slice(&m.momentum);
        *out = BspcMoments { mass: m.mass, momentum, energy: m.energy };
        Ok(())
    })
}

/// Release a state.
///
/// # Safety
/// `state` must be null or a state handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn bspc_state_free(state: *mut BspcState) {
    if !state.is_null() {
        drop(Box::from_raw(state));
    }
}

/// Build the collision operator for an isotropic kernel |u|^lambda with
/// restitution `beta`. `cache_dir` may be null to skip the on-disk table cache.
///
/// # Safety
/// `grid` must be a live grid handle, `cache_dir` null or a NUL-terminated
/// UTF-8 path, and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn bspc_solver_new(
    grid: *const BspcGrid,
    lambda: f64,
    beta: f64,
    cache_dir: *const c_char,
    out: *mut *mut BspcSolver,
) -> BspcStatus {
    guard(|| {
        let g = borrow(grid, "grid")?;
        let cache = if cache_dir.is_null() {
            None
        } else {
            let s = CStr::from_ptr(cache_dir)
                .to_str()
                .map_err(|_| Fail(BspcStatus::InvalidArgument, "cache_dir is not UTF-8".into()))?;
            Some(TableCache::new(PathBuf::from(s)))
        };
        let spec = KernelSpec::new(g.0.dim(), lambda, beta, Angular::Isotropic)?;
        let kind = if spec.is_elastic() { ConstraintKind::Elastic } else { ConstraintKind::Inelastic };
        let (ws, _) = CollisionWorkspace::build(g.0.clone(), spec, &TableConfig::default(), cache.as_ref())?;
        let cs = build_constraints(g.0.clone(), kind)?;
        put(out, BspcSolver { ws, cs })
    })
}

/// Release a solver.
///
/// # Safety
/// `solver` must be null or a solver handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn bspc_solver_free(solver: *mut BspcSolver) {
    if !solver.is_null() {
        drop(Box::from_raw(solver));
    }
}

/// Evaluate the collision operator at the nodes; `conserve` selects the
/// corrected operator. `out` holds `len` doubles.
///
/// # Safety
/// `solver` and `state` must be live handles on the same grid and `out`
/// must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn bspc_solver_collision(
    solver: *const BspcSolver,
    state: *const BspcState,
    conserve: bool,
    out: *mut f64,
    len: usize,
) -> BspcStatus {
    guard(|| {
        let sv = borrow(solver, "solver")?;
        let s = borrow(state, "state")?;
        let q = sv.ws.q_u(&s.0)?;
        let q = if conserve { sv.cs.conserve_discrete(&q)? } else { q };
        copy_out(&q, out, len)
    })
}

fn method(m: BspcMethod) -> Method {
    match m {
        BspcMethod::Euler => Method::Euler,
        BspcMethod::Rk2 => Method::Rk2,
        BspcMethod::Rk4 => Method::Rk4,
    }
}

/// Integrate `state` in place to time `t + t_span` with steps no larger
/// than `dt`, conserving at every stage. On failure the state is unchanged.
///
/// # Safety
/// `solver` must be a live handle and `state` a live, exclusively borrowed
/// state handle on the solver's grid.
#[no_mangle]
pub unsafe extern "C" fn bspc_solver_advance(
    solver: *const BspcSolver,
    state: *mut BspcState,
    scheme: BspcMethod,
    dt: f64,
    t_span: f64,
) -> BspcStatus {
    guard(|| {
        let sv = borrow(solver, "solver")?;
        let s = state.as_mut().ok_or_else(|| null("state"))?;
        let cfg = IntegratorConfig { method: method(scheme), dt: StepSize::Fixed(dt), t_end: t_span, conserve_every_stage: true };
        let summary = integrate::run(&s.0, &cfg, &sv.ws, &sv.cs, usize::MAX, &mut [])?;
        if let Some(e) = summary.abort {
            return Err(e.into());
        }
        s.0 = summary.final_state;
        Ok(())
    })
}
