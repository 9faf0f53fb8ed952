//! C ABI over the `sgraphs` library.
//!
//! Objects cross the boundary as opaque handles created and destroyed here.
//! Every fallible call returns an [`SgStatus`]; on failure a message is kept
//! per thread and can be read with [`sg_last_error`]. Strings returned to the
//! caller are owned by it and must be released with [`sg_string_free`].
//! Panics never unwind into the caller; they surface as `SG_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use sgraphs::config::PipelineConfig;
use sgraphs::eval::compute_ate;
use sgraphs::graph::{io as graph_io, optimize, FactorGraph, OptimizerConfig};
use sgraphs::pipeline::{export_outputs, run_dataset_dir, PipelineError, RunReport, RunState};
use sgraphs::trajectory::read_tum;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SgStatus {
    SgOk = 0,
    /// A required pointer argument was null.
    SgNullArgument = 1,
    /// A string argument was not valid UTF-8.
    SgInvalidUtf8 = 2,
    SgIoError = 3,
    /// Malformed dataset, graph document or trajectory, or a numerical failure.
    SgDataError = 4,
    SgConfigError = 5,
    SgPanic = 6,
}

/// A factor graph owned by the library.
pub struct SgGraph {
    graph: FactorGraph,
}

/// A finished SLAM run over one dataset.
pub struct SgRun {
    state: RunState,
    report: RunReport,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).expect("nul bytes were replaced"));
}

struct Failure(SgStatus, String);

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        let status = match e {
            PipelineError::Config(_) => SgStatus::SgConfigError,
            PipelineError::Io(_) => SgStatus::SgIoError,
            _ => SgStatus::SgDataError,
        };
        Failure(status, e.to_string())
    }
}

fn data_error(e: impl std::fmt::Display) -> Failure {
    Failure(SgStatus::SgDataError, e.to_string())
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            SgStatus::SgOk
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            SgStatus::SgPanic
        }
    }
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(SgStatus::SgNullArgument, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(SgStatus::SgInvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn out_ref<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut()
        .ok_or_else(|| Failure(SgStatus::SgNullArgument, format!("{what} is null")))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref()
        .ok_or_else(|| Failure(SgStatus::SgNullArgument, format!("{what} is null")))
}

fn owned_string(s: String) -> *mut c_char {
    CString::new(s).expect("JSON output has no nul bytes").into_raw()
}

/// Message of the last failed call on this thread, or an empty string.
/// Valid until the next call into the library from the same thread.
#[no_mangle]
pub extern "C" fn sg_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Releases a string returned by the library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed already.
#[no_mangle]
pub unsafe extern "C" fn sg_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parses a graph document as written by [`sg_graph_to_json`].
///
/// # Safety
/// `json` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sg_graph_from_json(json: *const c_char, out: *mut *mut SgGraph) -> SgStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = ptr::null_mut();
        let graph = graph_io::from_json_str(text(json, "json")?).map_err(data_error)?;
        *out = Box::into_raw(Box::new(SgGraph { graph }));
        Ok(())
    })
}

/// Serializes the graph; floats round-trip exactly.
///
/// # Safety
/// `graph` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sg_graph_to_json(graph: *const SgGraph, out: *mut *mut c_char) -> SgStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = ptr::null_mut();
        *out = owned_string(graph_io::to_json_string(&handle(graph, "graph")?.graph));
        Ok(())
    })
}

/// Number of variables and factors.
///
/// # Safety
/// `graph` must be a live handle; both outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn sg_graph_counts(
    graph: *const SgGraph,
    variables: *mut usize,
    factors: *mut usize,
) -> SgStatus {
    guard(|| {
        let g = &handle(graph, "graph")?.graph;
        *out_ref(variables, "variables")? = g.num_variables();
        *out_ref(factors, "factors")? = g.num_factors();
        Ok(())
    })
}

/// Runs Levenberg-Marquardt with default settings. `iterations` and
/// `final_cost` may be null.
///
/// # Safety
/// `graph` must be a live handle not used concurrently from another thread.
#[no_mangle]
pub unsafe extern "C" fn sg_graph_optimize(
    graph: *mut SgGraph,
    iterations: *mut usize,
    final_cost: *mut f64,
) -> SgStatus {
    guard(|| {
        let g = graph
            .as_mut()
            .ok_or_else(|| Failure(SgStatus::SgNullArgument, "graph is null".into()))?;
        let rep = optimize(&mut g.graph, &OptimizerConfig::default()).map_err(data_error)?;
        if let Some(it) = iterations.as_mut() {
            *it = rep.iterations;
        }
        if let Some(c) = final_cost.as_mut() {
            *c = rep.final_cost;
        }
        Ok(())
    })
}

/// Destroys a graph handle. Null is ignored.
///
/// # Safety
/// `graph` must come from this library and not have been freed already.
#[no_mangle]
pub unsafe extern "C" fn sg_graph_free(graph: *mut SgGraph) {
    if !graph.is_null() {
        drop(Box::from_raw(graph));
    }
}

/// Runs SLAM over a dataset directory. `config` holds `key = value` lines
/// and may be null for the defaults.
///
/// # Safety
/// String arguments must be nul-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sg_run_dataset(
    dataset_dir: *const c_char,
    config: *const c_char,
    out: *mut *mut SgRun,
) -> SgStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = ptr::null_mut();
        let dir = text(dataset_dir, "dataset_dir")?;
        let cfg = if config.is_null() {
            PipelineConfig::default()
        } else {
            PipelineConfig::from_config_str(text(config, "config")?)
                .map_err(|e| Failure(SgStatus::SgConfigError, e.to_string()))?
        };
        let (dataset, mut state) = run_dataset_dir(Path::new(dir), &cfg)?;
        let report = state.report(&dataset);
        *out = Box::into_raw(Box::new(SgRun { state, report }));
        Ok(())
    })
}

/// The run's `report.json` content.
///
/// # Safety
/// `run` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sg_run_report_json(run: *const SgRun, out: *mut *mut c_char) -> SgStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = ptr::null_mut();
        let json = serde_json::to_string_pretty(&handle(run, "run")?.report).map_err(data_error)?;
        *out = owned_string(json);
        Ok(())
    })
}

/// Writes est.tum, map.xyz, sgraph.json, report.json and timing.json.
///
/// # Safety
/// `run` must be a live handle; `out_dir` must be nul-terminated.
#[no_mangle]
pub unsafe extern "C" fn sg_run_write_outputs(run: *const SgRun, out_dir: *const c_char) -> SgStatus {
    guard(|| {
        let run = handle(run, "run")?;
        export_outputs(&run.state, &run.report, Path::new(text(out_dir, "out_dir")?))?;
        Ok(())
    })
}

/// Copies the run's optimized graph into a new handle.
///
/// # Safety
/// `run` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sg_run_graph(run: *const SgRun, out: *mut *mut SgGraph) -> SgStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = ptr::null_mut();
        let graph = handle(run, "run")?.state.graph.clone();
        *out = Box::into_raw(Box::new(SgGraph { graph }));
        Ok(())
    })
}

/// Destroys a run handle. Null is ignored.
///
/// # Safety
/// `run` must come from this library and not have been freed already.
#[no_mangle]
pub unsafe extern "C" fn sg_run_free(run: *mut SgRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// Absolute trajectory error between two TUM files.
///
/// # Safety
/// Paths must be nul-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sg_eval_ate(estimate: *const c_char, reference: *const c_char, out: *mut f64) -> SgStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let est = read_tum(Path::new(text(estimate, "estimate")?)).map_err(data_error)?;
        let reference = read_tum(Path::new(text(reference, "reference")?)).map_err(data_error)?;
        *out = compute_ate(&est, &reference).map_err(data_error)?;
        Ok(())
    })
}
