//! C ABI for the adapd solver.
//!
//! Objects cross the boundary as opaque handles created by `*_new`-style
//! functions and released with the matching `*_free`. Every fallible call
//! returns an [`AdapdStatus`]; the message of the most recent failure on the
//! calling thread is available through [`adapd_last_error_message`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::sync::Arc;

use adapd::baseline::{estimate_dual_bound, solve_centralized, ReferenceSolution};
use adapd::graph::{consensus_matrix, generate_small_world, mixing_matrix, ConsensusMatrix, MixingRule, NetworkGraph};
use adapd::problem::{make_localization_instance, ProblemInstance};
use adapd::solver::{Activation, InitialPoint, Schedule, Solver, StepSizes};
use adapd::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdapdStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidParameter = 2,
    Disconnected = 3,
    Invariant = 4,
    Dimension = 5,
    Estimation = 6,
    NonConvergence = 7,
    Contract = 8,
    Format = 9,
    Io = 10,
    BufferTooSmall = 11,
    Panic = 12,
}

/// Mixing rule used to build the consensus matrix.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdapdMixing {
    Metropolis = 0,
    Laplacian = 1,
}

/// Activation schedule of a solver.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdapdSchedule {
    /// One uniformly drawn agent per event.
    AsyncUniform = 0,
    /// One agent per event, driven by unit-rate exponential clocks.
    AsyncClocks = 1,
    /// Every agent per round.
    Sync = 2,
}

/// Problem instance.
pub struct AdapdInstance(Arc<ProblemInstance>);

/// Communication graph with its consensus matrix.
pub struct AdapdNetwork {
    graph: NetworkGraph,
    consensus: Arc<ConsensusMatrix>,
}

/// Centralized reference solution.
pub struct AdapdReference(ReferenceSolution);

/// Solver state.
pub struct AdapdSolver(Solver);

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> AdapdStatus {
    match e {
        Error::InvalidParameter(_) => AdapdStatus::InvalidParameter,
        Error::Disconnected => AdapdStatus::Disconnected,
        Error::Invariant(_) => AdapdStatus::Invariant,
        Error::Dimension { .. } => AdapdStatus::Dimension,
        Error::Estimation(_) => AdapdStatus::Estimation,
        Error::NonConvergence(_) => AdapdStatus::NonConvergence,
        Error::Contract(_) => AdapdStatus::Contract,
        Error::Format(_) => AdapdStatus::Format,
        Error::Io { .. } => AdapdStatus::Io,
    }
}

struct Fail(AdapdStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(AdapdStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> AdapdStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => AdapdStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside adapd".into());
            AdapdStatus::Panic
        }
    }
}

unsafe fn borrow<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn borrow_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn emit<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("output handle"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn copy_out(src: &[f64], buf: *mut f64, len: usize) -> Result<(), Fail> {
    if buf.is_null() {
        return Err(null("buffer"));
    }
    if len < src.len() {
        return Err(Fail(
            AdapdStatus::BufferTooSmall,
            format!("buffer holds {len} values, {} needed", src.len()),
        ));
    }
    ptr::copy_nonoverlapping(src.as_ptr(), buf, src.len());
    Ok(())
}

unsafe fn free<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn adapd_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Length in bytes of the last error message on this thread, excluding the NUL.
#[no_mangle]
pub extern "C" fn adapd_last_error_length() -> usize {
    LAST_ERROR.with(|e| e.borrow().len())
}

/// Copies the last error message into `buf` with a trailing NUL.
///
/// # Safety
/// `buf` must point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn adapd_last_error_message(buf: *mut c_char, len: usize) -> AdapdStatus {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if buf.is_null() {
            return AdapdStatus::NullPointer;
        }
        if len < msg.len() + 1 {
            return AdapdStatus::BufferTooSmall;
        }
        ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, msg.len());
        *buf.add(msg.len()) = 0;
        AdapdStatus::Ok
    })
}

// ---------------------------------------------------------------------------
// Instances

/// Draws a localization instance with `n` unknowns, `agents` agents and `rows`
/// measurement rows per agent.
///
/// # Safety
/// `out` must be a valid pointer to a handle slot.
#[no_mangle]
pub unsafe extern "C" fn adapd_instance_localization(
    n: usize,
    agents: usize,
    rows: usize,
    noise_std: f64,
    seed: u64,
    out: *mut *mut AdapdInstance,
) -> AdapdStatus {
    guard(|| {
        let inst = make_localization_instance(n, agents, rows, noise_std, seed)?;
        emit(out, AdapdInstance(Arc::new(inst)))
    })
}

/// Parses an instance container.
///
/// # Safety
/// `text` must be a NUL-terminated string; `out` a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn adapd_instance_from_container(
    text: *const c_char,
    out: *mut *mut AdapdInstance,
) -> AdapdStatus {
    guard(|| {
        if text.is_null() {
            return Err(null("text"));
        }
        let s = CStr::from_ptr(text)
            .to_str()
            .map_err(|e| Fail(AdapdStatus::Format, format!("container is not UTF-8: {e}")))?;
        emit(out, AdapdInstance(Arc::new(ProblemInstance::from_container(s)?)))
    })
}

/// # Safety
/// `inst` must be null or a live instance handle.
#[no_mangle]
pub unsafe extern "C" fn adapd_instance_dim(inst: *const AdapdInstance) -> usize {
    inst.as_ref().map_or(0, |i| i.0.dim())
}

/// # Safety
/// `inst` must be null or a live instance handle.
#[no_mangle]
pub unsafe extern "C" fn adapd_instance_num_agents(inst: *const AdapdInstance) -> usize {
    inst.as_ref().map_or(0, |i| i.0.num_agents())
}

/// # Safety
/// `inst` must be null or a live instance handle.
#[no_mangle]
pub unsafe extern "C" fn adapd_instance_num_constraints(inst: *const AdapdInstance) -> usize {
    inst.as_ref().map_or(0, |i| i.0.num_constraints())
}

/// # Safety
/// `inst` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn adapd_instance_free(inst: *mut AdapdInstance) {
    free(inst)
}

// ---------------------------------------------------------------------------
// Networks

fn network(graph: NetworkGraph, alpha: f64, mixing: AdapdMixing) -> Result<AdapdNetwork, Fail> {
    let rule = match mixing {
        AdapdMixing::Metropolis => MixingRule::Metropolis,
        AdapdMixing::Laplacian => MixingRule::Laplacian,
    };
    let w = mixing_matrix(&graph, rule)?;
    let consensus = Arc::new(consensus_matrix(&w, alpha)?);
    Ok(AdapdNetwork { graph, consensus })
}

/// Cycle over `agents` nodes plus `extra_edges` random chords.
///
/// # Safety
/// `out` must be a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn adapd_network_small_world(
    agents: usize,
    extra_edges: usize,
    seed: u64,
    alpha: f64,
    mixing: AdapdMixing,
    out: *mut *mut AdapdNetwork,
) -> AdapdStatus {
    guard(|| {
        let g = generate_small_world(agents, extra_edges, seed)?;
        emit(out, network(g, alpha, mixing)?)
    })
}

/// Network from `num_edges` pairs stored flat in `edges` (`2 * num_edges` entries).
///
/// # Safety
/// `edges` must point to `2 * num_edges` readable values (or be null when
/// `num_edges` is 0); `out` must be a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn adapd_network_from_edges(
    agents: usize,
    edges: *const usize,
    num_edges: usize,
    alpha: f64,
    mixing: AdapdMixing,
    out: *mut *mut AdapdNetwork,
) -> AdapdStatus {
    guard(|| {
        let flat: &[usize] = if num_edges == 0 {
            &[]
        } else if edges.is_null() {
            return Err(null("edges"));
        } else {
            std::slice::from_raw_parts(edges, 2 * num_edges)
        };
        let pairs: Vec<(usize, usize)> = flat.chunks_exact(2).map(|p| (p[0], p[1])).collect();
        let g = NetworkGraph::new(agents, &pairs)?;
        emit(out, network(g, alpha, mixing)?)
    })
}

/// # Safety
/// `net` must be null or a live network handle.
#[no_mangle]
pub unsafe extern "C" fn adapd_network_num_edges(net: *const AdapdNetwork) -> usize {
    net.as_ref().map_or(0, |n| n.graph.num_edges())
}

/// # Safety
/// `net` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn adapd_network_free(net: *mut AdapdNetwork) {
    free(net)
}

// ---------------------------------------------------------------------------
// Reference solutions

fn check_sizes(inst: &AdapdInstance, net: &AdapdNetwork) -> Result<(), Fail> {
    if inst.0.num_agents() != net.consensus.size() {
        return Err(Error::Dimension {
            expected: inst.0.num_agents(),
            actual: net.consensus.size(),
        }
        .into());
    }
    Ok(())
}

/// Solves the consensus-enforced problem to tolerance `tol`.
///
/// # Safety
/// `inst` and `net` must be live handles; `out` a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn adapd_reference_solve(
    inst: *const AdapdInstance,
    net: *const AdapdNetwork,
    tol: f64,
    max_iters: usize,
    out: *mut *mut AdapdReference,
) -> AdapdStatus {
    guard(|| {
        let (inst, net) = (borrow(inst, "instance")?, borrow(net, "network")?);
        check_sizes(inst, net)?;
        let r = solve_centralized(&inst.0, &net.consensus, tol, max_iters)?;
        emit(out, AdapdReference(r))
    })
}

/// Optimal value `φ*`, or NaN for a null handle.
///
/// # Safety
/// `r` must be null or a live reference handle.
#[no_mangle]
pub unsafe extern "C" fn adapd_reference_phi_star(r: *const AdapdReference) -> f64 {
    r.as_ref().map_or(f64::NAN, |r| r.0.phi_star)
}

/// Copies `x*` (dimension `n`) into `buf`.
///
/// # Safety
/// `r` must be a live handle and `buf` point to `len` writable values.
#[no_mangle]
pub unsafe extern "C" fn adapd_reference_x_star(r: *const AdapdReference, buf: *mut f64, len: usize) -> AdapdStatus {
    guard(|| copy_out(&borrow(r, "reference")?.0.x_star, buf, len))
}

/// Dual bound `max(margin · ‖y*‖, 1)`.
///
/// # Safety
/// `r` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn adapd_reference_dual_bound(r: *const AdapdReference, margin: f64, out: *mut f64) -> AdapdStatus {
    guard(|| {
        let b = estimate_dual_bound(&borrow(r, "reference")?.0, margin)?;
        *borrow_mut(out, "output")? = b;
        Ok(())
    })
}

/// # Safety
/// `r` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn adapd_reference_free(r: *mut AdapdReference) {
    free(r)
}

// ---------------------------------------------------------------------------
// Solvers

/// Creates a solver started at zero with step sizes at `safety_factor` times
/// their upper bounds for dual bound `dual_bound`.
///
/// # Safety
/// `inst` and `net` must be live handles; `out` a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn adapd_solver_new(
    inst: *const AdapdInstance,
    net: *const AdapdNetwork,
    dual_bound: f64,
    safety_factor: f64,
    schedule: AdapdSchedule,
    horizon: u64,
    seed: u64,
    out: *mut *mut AdapdSolver,
) -> AdapdStatus {
    guard(|| {
        let (inst, net) = (borrow(inst, "instance")?, borrow(net, "network")?);
        check_sizes(inst, net)?;
        let steps = StepSizes::compute(&inst.0, &net.consensus, dual_bound, safety_factor)?;
        let schedule = match schedule {
            AdapdSchedule::AsyncUniform => Schedule::ASYNC,
            AdapdSchedule::AsyncClocks => Schedule::Async {
                activation: Activation::ExponentialClocks { rate: 1.0 },
            },
            AdapdSchedule::Sync => Schedule::Sync,
        };
        let init = InitialPoint::zeros(&inst.0);
        let s = Solver::new(inst.0.clone(), net.consensus.clone(), steps, schedule, horizon, &init, seed)?;
        emit(out, AdapdSolver(s))
    })
}

/// One event or round.
///
/// # Safety
/// `s` must be a live solver handle.
#[no_mangle]
pub unsafe extern "C" fn adapd_solver_step(s: *mut AdapdSolver) -> AdapdStatus {
    guard(|| {
        borrow_mut(s, "solver")?.0.step()?;
        Ok(())
    })
}

/// Steps until the horizon.
///
/// # Safety
/// `s` must be a live solver handle.
#[no_mangle]
pub unsafe extern "C" fn adapd_solver_run(s: *mut AdapdSolver) -> AdapdStatus {
    guard(|| {
        let s = &mut borrow_mut(s, "solver")?.0;
        while !s.is_finished() {
            s.step()?;
        }
        Ok(())
    })
}

/// # Safety
/// `s` must be null or a live solver handle.
#[no_mangle]
pub unsafe extern "C" fn adapd_solver_iteration(s: *const AdapdSolver) -> u64 {
    s.as_ref().map_or(0, |s| s.0.iteration())
}

/// # Safety
/// `s` must be null or a live solver handle.
#[no_mangle]
pub unsafe extern "C" fn adapd_solver_communications(s: *const AdapdSolver) -> u64 {
    s.as_ref().map_or(0, |s| s.0.communications())
}

/// # Safety
/// `s` must be null or a live solver handle.
#[no_mangle]
pub unsafe extern "C" fn adapd_solver_is_finished(s: *const AdapdSolver) -> bool {
    s.as_ref().is_none_or(|s| s.0.is_finished())
}

/// Copies the stacked primal iterate (`n · N` values).
///
/// # Safety
/// `s` must be a live handle and `buf` point to `len` writable values.
#[no_mangle]
pub unsafe extern "C" fn adapd_solver_x(s: *const AdapdSolver, buf: *mut f64, len: usize) -> AdapdStatus {
    guard(|| copy_out(&borrow(s, "solver")?.0.stacked().0, buf, len))
}

/// Copies the stacked ergodic primal point for the current iteration.
///
/// # Safety
/// `s` must be a live handle and `buf` point to `len` writable values.
#[no_mangle]
pub unsafe extern "C" fn adapd_solver_ergodic_x(s: *const AdapdSolver, buf: *mut f64, len: usize) -> AdapdStatus {
    guard(|| copy_out(&borrow(s, "solver")?.0.ergodic_now()?.x, buf, len))
}

/// # Safety
/// `s` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn adapd_solver_free(s: *mut AdapdSolver) {
    free(s)
}
