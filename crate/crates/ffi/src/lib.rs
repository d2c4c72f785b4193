//! C ABI over the `gabp` library.
//!
//! Objects are opaque handles created by `gabp_*_new`/`load`/`run` style
//! functions and released with the matching `*_free`. Every fallible call
//! returns a [`GabpStatus`]; on failure [`gabp_last_error`] describes it.
//! Matrices cross the boundary as dense column-major `double` arrays.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use gabp::network::{generate_random, Coupling, GeneratorConfig, Topology};
use gabp::{Error, GaussianNetwork, Init, RunOutcome, ScheduleConfig, SymMatrix};
use nalgebra::DMatrix;

/// Opaque validated network.
pub struct GabpNetwork(GaussianNetwork);

/// Opaque result of a belief propagation run.
pub struct GabpRun(RunOutcome);

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GabpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Parse = 3,
    InvalidNetwork = 4,
    Numerical = 5,
    Io = 6,
    OutOfRange = 7,
    BufferTooSmall = 8,
    Panic = 9,
    Internal = 10,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GabpInit {
    Zero = 0,
    ScaledIdentity = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GabpScheduleOptions {
    pub max_iterations: usize,
    pub tol_frobenius: f64,
    pub init: GabpInit,
    /// Scale of the identity initialization; ignored for `Zero`.
    pub init_scale: f64,
    /// Values `<= 0` disable the mean stopping condition.
    pub mean_tol: f64,
    pub workers: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(GabpStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::InvalidInput(_) | Error::NotParts(_) => GabpStatus::InvalidArgument,
            Error::Numerical { .. } => GabpStatus::Numerical,
            Error::Parse(_) => GabpStatus::Parse,
            Error::InvalidNetwork(_) => GabpStatus::InvalidNetwork,
            Error::Io(_) => GabpStatus::Io,
            Error::Invariant(_) => GabpStatus::Internal,
        };
        Failure(status, e.to_string())
    }
}

fn fail(status: GabpStatus, msg: impl Into<String>) -> Failure {
    Failure(status, msg.into())
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> GabpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            GabpStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(_) => {
            set_last_error("panic inside gabp".into());
            GabpStatus::Panic
        }
    }
}

unsafe fn borrow<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref()
        .ok_or_else(|| fail(GabpStatus::NullPointer, format!("{what} is null")))
}

unsafe fn out_ref<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut()
        .ok_or_else(|| fail(GabpStatus::NullPointer, format!("{what} is null")))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(fail(GabpStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(GabpStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn write_matrix(m: &DMatrix<f64>, out: *mut f64, len: usize) -> Result<(), Failure> {
    if out.is_null() {
        return Err(fail(GabpStatus::NullPointer, "output buffer is null"));
    }
    if len < m.len() {
        return Err(fail(
            GabpStatus::BufferTooSmall,
            format!("need {} values, got {len}", m.len()),
        ));
    }
    ptr::copy_nonoverlapping(m.as_slice().as_ptr(), out, m.len());
    Ok(())
}

/// Message describing the last failure on this thread, or null. Valid
/// until the next `gabp_*` call on the same thread.
#[no_mangle]
pub extern "C" fn gabp_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn gabp_version() -> *const c_char {
    static V: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    V.as_ptr().cast()
}

/// Frees a string returned by this library.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn gabp_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parses and validates an instance from JSON text.
///
/// # Safety
/// `json` must be a nul-terminated string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gabp_network_from_json(json: *const c_char, out: *mut *mut GabpNetwork) -> GabpStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let net = gabp::network::parse(str_arg(json, "json")?)?;
        *out = Box::into_raw(Box::new(GabpNetwork(net)));
        Ok(())
    })
}

/// Loads and validates an instance file.
///
/// # Safety
/// `path` must be a nul-terminated string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gabp_network_load(path: *const c_char, out: *mut *mut GabpNetwork) -> GabpStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let net = gabp::network::load(str_arg(path, "path")?)?;
        *out = Box::into_raw(Box::new(GabpNetwork(net)));
        Ok(())
    })
}

/// Generates a random instance. `topology` uses the CLI syntax (`ring`,
/// `star`, `complete`, `tree`, `er:<p>`, `grid:<r>x<c>`); `oriented`
/// selects one-sided coupling.
///
/// # Safety
/// `topology` must be a nul-terminated string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gabp_network_generate(
    seed: u64,
    nodes: usize,
    topology: *const c_char,
    dim_min: usize,
    dim_max: usize,
    oriented: bool,
    out: *mut *mut GabpNetwork,
) -> GabpStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let topo: Topology = str_arg(topology, "topology")?.parse()?;
        let coupling = if oriented { Coupling::Oriented } else { Coupling::Full };
        let net = generate_random(
            &GeneratorConfig::new(seed, nodes, topo)
                .dims(dim_min, dim_max)
                .coupling(coupling),
        )?;
        *out = Box::into_raw(Box::new(GabpNetwork(net)));
        Ok(())
    })
}

/// Canonical JSON of the instance; release with [`gabp_string_free`].
///
/// # Safety
/// `net` must be a live handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gabp_network_to_json(net: *const GabpNetwork, out: *mut *mut c_char) -> GabpStatus {
    guard(|| {
        let net = borrow(net, "network")?;
        let out = out_ref(out, "out")?;
        let text = CString::new(gabp::network::to_json_string(&net.0))
            .map_err(|_| fail(GabpStatus::Internal, "interior nul"))?;
        *out = text.into_raw();
        Ok(())
    })
}

/// # Safety
/// `net` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn gabp_network_free(net: *mut GabpNetwork) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// Number of nodes; 0 for a null handle.
///
/// # Safety
/// `net` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn gabp_network_node_count(net: *const GabpNetwork) -> usize {
    net.as_ref().map_or(0, |n| n.0.len())
}

/// Number of directed factor-to-variable edges; 0 for a null handle.
///
/// # Safety
/// `net` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn gabp_network_edge_count(net: *const GabpNetwork) -> usize {
    net.as_ref().map_or(0, |n| n.0.directed_edges().len())
}

/// Dimension of variable `id` (1-based).
///
/// # Safety
/// `net` must be a live handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gabp_network_dim(net: *const GabpNetwork, id: usize, out: *mut usize) -> GabpStatus {
    guard(|| {
        let net = borrow(net, "network")?;
        if id == 0 || id > net.0.len() {
            return Err(fail(GabpStatus::OutOfRange, format!("node {id} out of range")));
        }
        *out_ref(out, "out")? = net.0.dim(id);
        Ok(())
    })
}

/// Directed edge `k` (0-based, ascending by factor then variable).
///
/// # Safety
/// `net` must be a live handle; `factor` and `variable` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn gabp_network_edge(
    net: *const GabpNetwork,
    k: usize,
    factor: *mut usize,
    variable: *mut usize,
) -> GabpStatus {
    guard(|| {
        let net = borrow(net, "network")?;
        let e = net
            .0
            .directed_edges()
            .get(k)
            .ok_or_else(|| fail(GabpStatus::OutOfRange, format!("edge {k} out of range")))?;
        *out_ref(factor, "factor")? = e.factor;
        *out_ref(variable, "variable")? = e.variable;
        Ok(())
    })
}

/// Library defaults: 500 iterations, tolerance 1e-10, zero init, one worker.
#[no_mangle]
pub extern "C" fn gabp_schedule_default() -> GabpScheduleOptions {
    let d = ScheduleConfig::default();
    GabpScheduleOptions {
        max_iterations: d.max_iterations,
        tol_frobenius: d.tol_frobenius,
        init: GabpInit::Zero,
        init_scale: 1.0,
        mean_tol: 0.0,
        workers: d.workers,
    }
}

/// Runs belief propagation. `opts` may be null for defaults.
///
/// # Safety
/// `net` must be a live handle, `opts` null or valid, `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gabp_run(
    net: *const GabpNetwork,
    opts: *const GabpScheduleOptions,
    out: *mut *mut GabpRun,
) -> GabpStatus {
    guard(|| {
        let net = borrow(net, "network")?;
        let out = out_ref(out, "out")?;
        let o = opts.as_ref().copied().unwrap_or_else(|| gabp_schedule_default());
        let cfg = ScheduleConfig {
            max_iterations: o.max_iterations,
            tol_frobenius: o.tol_frobenius,
            init: match o.init {
                GabpInit::Zero => Init::Zero,
                GabpInit::ScaledIdentity => Init::ScaledIdentity(o.init_scale),
            },
            mean_tol: (o.mean_tol > 0.0).then_some(o.mean_tol),
            record_history: false,
            workers: o.workers,
        };
        *out = Box::into_raw(Box::new(GabpRun(gabp::run(&net.0, &cfg)?)));
        Ok(())
    })
}

/// # Safety
/// `run` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn gabp_run_free(run: *mut GabpRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// False for a null handle.
///
/// # Safety
/// `run` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn gabp_run_converged(run: *const GabpRun) -> bool {
    run.as_ref().is_some_and(|r| r.0.converged)
}

/// # Safety
/// `run` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn gabp_run_iterations(run: *const GabpRun) -> usize {
    run.as_ref().map_or(0, |r| r.0.iterations)
}

/// Information matrix of directed edge `k`, column-major, `len >= dim²`.
///
/// # Safety
/// `run` must be a live handle; `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn gabp_run_message_info(run: *const GabpRun, k: usize, out: *mut f64, len: usize) -> GabpStatus {
    guard(|| {
        let run = borrow(run, "run")?;
        let m = run
            .0
            .state
            .messages()
            .get(k)
            .ok_or_else(|| fail(GabpStatus::OutOfRange, format!("edge {k} out of range")))?;
        write_matrix(m.info.as_matrix(), out, len)
    })
}

fn belief(run: &GabpRun, id: usize) -> Result<&gabp::Belief, Failure> {
    run.0
        .beliefs
        .iter()
        .find(|b| b.variable == id)
        .ok_or_else(|| fail(GabpStatus::OutOfRange, format!("node {id} out of range")))
}

/// Belief mean of variable `id` (1-based), `len >= dim`.
///
/// # Safety
/// `run` must be a live handle; `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn gabp_run_belief_mean(run: *const GabpRun, id: usize, out: *mut f64, len: usize) -> GabpStatus {
    guard(|| {
        let b = belief(borrow(run, "run")?, id)?;
        write_matrix(
            &DMatrix::from_column_slice(b.mean.len(), 1, b.mean.as_slice()),
            out,
            len,
        )
    })
}

/// Belief covariance of variable `id` (1-based), column-major, `len >= dim²`.
///
/// # Safety
/// `run` must be a live handle; `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn gabp_run_belief_cov(run: *const GabpRun, id: usize, out: *mut f64, len: usize) -> GabpStatus {
    guard(|| {
        let b = belief(borrow(run, "run")?, id)?;
        write_matrix(b.cov.as_matrix(), out, len)
    })
}

/// Part distance between two positive definite `n × n` matrices given
/// column-major. Non-symmetric input is symmetrized.
///
/// # Safety
/// `x` and `y` must each hold `n * n` doubles; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gabp_part_metric(x: *const f64, y: *const f64, n: usize, out: *mut f64) -> GabpStatus {
    guard(|| {
        if x.is_null() || y.is_null() {
            return Err(fail(GabpStatus::NullPointer, "matrix is null"));
        }
        if n == 0 {
            return Err(fail(GabpStatus::InvalidArgument, "dimension must be positive"));
        }
        let load =
            |p: *const f64| SymMatrix::new(DMatrix::from_column_slice(n, n, std::slice::from_raw_parts(p, n * n)));
        let d = gabp::cone::part_metric(&load(x)?, &load(y)?)?;
        *out_ref(out, "out")? = d;
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn status_mapping() {
        let f: Failure = Error::Parse("x".into()).into();
        assert_eq!(f.0, GabpStatus::Parse);
        let f: Failure = Error::InvalidNetwork(vec![]).into();
        assert_eq!(f.0, GabpStatus::InvalidNetwork);
    }

    #[test]
    fn panic_is_contained() {
        let s = guard(|| panic!("boom"));
        assert_eq!(s, GabpStatus::Panic);
        assert!(!gabp_last_error().is_null());
    }

    #[test]
    fn success_clears_error() {
        guard(|| Err(fail(GabpStatus::Internal, "x")));
        assert!(!gabp_last_error().is_null());
        guard(|| Ok(()));
        assert!(gabp_last_error().is_null());
    }
}
