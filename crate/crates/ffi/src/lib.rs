//! C ABI for the qoc library.
//!
//! Configs and results live behind opaque handles. Every function returns a
//! [`QocStatus`]; on failure [`qoc_last_error`] holds a message for the
//! calling thread. Panics are caught at the boundary and reported as
//! [`QocStatus::Panic`].
//!
//! ```c
//! QocConfig *cfg = NULL;
//! QocResults *res = NULL;
//! if (qoc_config_parse(json, &cfg) != QOC_STATUS_OK) { puts(qoc_last_error()); }
//! qoc_config_set_engine(cfg, QOC_ENGINE_Q);
//! qoc_run(cfg, 0, &res);
//! for (size_t i = 0; i < qoc_results_len(res); i++) {
//!     QocResultRow row;
//!     qoc_results_row(res, i, &row);
//! }
//! qoc_results_free(res);
//! qoc_config_free(cfg);
//! ```

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use qoc::cli::{compute, CliError};
use qoc::config::{Engine, RunConfig};
use qoc::designs::{exact, SingleArmProtocol, TwoArmProtocol};

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QocStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    ConfigError = 3,
    NumericalError = 4,
    OutOfRange = 5,
    Panic = 6,
    Other = 7,
}

/// Engine selection for [`qoc_config_set_engine`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QocEngine {
    Q = 0,
    Mc = 1,
    Both = 2,
}

/// A parsed run configuration.
pub struct QocConfig {
    inner: RunConfig,
}

struct Row {
    scenario_id: CString,
    engine: CString,
    oc: CString,
    estimate: f64,
    se: f64,
    replicates: u64,
    wall_clock_s: f64,
}

/// Estimates produced by [`qoc_run`].
pub struct QocResults {
    rows: Vec<Row>,
}

/// One estimate. The strings are owned by the results handle and stay
/// valid until it is freed.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct QocResultRow {
    pub scenario_id: *const c_char,
    pub engine: *const c_char,
    pub oc: *const c_char,
    pub estimate: f64,
    pub se: f64,
    pub replicates: u64,
    pub wall_clock_s: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

type Failure = (QocStatus, String);

fn guard(body: impl FnOnce() -> Result<(), Failure>) -> QocStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            set_error("");
            QocStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(&msg);
            status
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(&format!("panic: {msg}"));
            QocStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    (QocStatus::NullPointer, format!("{what} is null"))
}

fn numerical(e: qoc::Error) -> Failure {
    (QocStatus::NumericalError, e.to_string())
}

fn cli_failure(e: CliError) -> Failure {
    let status = match e {
        CliError::Config(_) => QocStatus::ConfigError,
        CliError::Numerical { .. } => QocStatus::NumericalError,
        CliError::Other(_) => QocStatus::Other,
    };
    (status, e.to_string())
}

unsafe fn config_mut<'a>(cfg: *mut QocConfig) -> Result<&'a mut RunConfig, Failure> {
    cfg.as_mut().map(|c| &mut c.inner).ok_or_else(|| null("config"))
}

/// Message describing the last failure on this thread; empty after a
/// success. Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn qoc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn qoc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Parses a JSON config.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn qoc_config_parse(json: *const c_char, out: *mut *mut QocConfig) -> QocStatus {
    guard(|| {
        if json.is_null() {
            return Err(null("json"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let text = CStr::from_ptr(json)
            .to_str()
            .map_err(|e| (QocStatus::InvalidUtf8, e.to_string()))?;
        let inner = RunConfig::parse(text).map_err(|e| (QocStatus::ConfigError, e.to_string()))?;
        *out = Box::into_raw(Box::new(QocConfig { inner }));
        Ok(())
    })
}

/// Frees a config; null is ignored.
///
/// # Safety
/// `cfg` must come from [`qoc_config_parse`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn qoc_config_free(cfg: *mut QocConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Number of scenarios in the config.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn qoc_config_scenario_count(cfg: *const QocConfig, out: *mut usize) -> QocStatus {
    guard(|| {
        let cfg = cfg.as_ref().ok_or_else(|| null("config"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = cfg.inner.cases().map_err(|e| (QocStatus::ConfigError, e.to_string()))?.len();
        Ok(())
    })
}

/// # Safety
/// `cfg` must be a valid config handle.
#[no_mangle]
pub unsafe extern "C" fn qoc_config_set_engine(cfg: *mut QocConfig, engine: QocEngine) -> QocStatus {
    guard(|| {
        config_mut(cfg)?.engine = match engine {
            QocEngine::Q => Engine::Q,
            QocEngine::Mc => Engine::Mc,
            QocEngine::Both => Engine::Both,
        };
        Ok(())
    })
}

/// Sets the replicate counts of both engines.
///
/// # Safety
/// `cfg` must be a valid config handle.
#[no_mangle]
pub unsafe extern "C" fn qoc_config_set_replicates(cfg: *mut QocConfig, q: u64, mc: u64) -> QocStatus {
    guard(|| {
        if q == 0 || mc == 0 {
            return Err((QocStatus::OutOfRange, "replicate counts must be positive".into()));
        }
        let cfg = config_mut(cfg)?;
        cfg.replicates.q = q as usize;
        cfg.replicates.mc = mc as usize;
        Ok(())
    })
}

/// # Safety
/// `cfg` must be a valid config handle.
#[no_mangle]
pub unsafe extern "C" fn qoc_config_set_seed(cfg: *mut QocConfig, seed: u64) -> QocStatus {
    guard(|| {
        config_mut(cfg)?.seed = seed;
        Ok(())
    })
}

/// Runs every scenario of the config with its engines. `threads` = 0 uses
/// the available parallelism. Writes no files.
///
/// # Safety
/// `cfg` must be a valid config handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn qoc_run(cfg: *const QocConfig, threads: usize, out: *mut *mut QocResults) -> QocStatus {
    guard(|| {
        let cfg = cfg.as_ref().ok_or_else(|| null("config"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let pool = rayon_pool(threads)?;
        let results = pool.install(|| compute(&cfg.inner, false)).map_err(cli_failure)?;
        let cstr = |s: &str| CString::new(s).unwrap_or_default();
        let mut rows = Vec::new();
        for case in &results {
            for run in &case.runs {
                for e in &run.estimates {
                    rows.push(Row {
                        scenario_id: cstr(&case.id),
                        engine: cstr(run.engine.as_str()),
                        oc: cstr(&e.name),
                        estimate: e.estimate,
                        se: e.se,
                        replicates: e.replicates as u64,
                        wall_clock_s: e.wall_clock_s,
                    });
                }
            }
        }
        *out = Box::into_raw(Box::new(QocResults { rows }));
        Ok(())
    })
}

fn rayon_pool(threads: usize) -> Result<rayon::ThreadPool, Failure> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| (QocStatus::Other, e.to_string()))
}

/// Number of rows; 0 for null.
///
/// # Safety
/// `res` must be null or a valid results handle.
#[no_mangle]
pub unsafe extern "C" fn qoc_results_len(res: *const QocResults) -> usize {
    res.as_ref().map_or(0, |r| r.rows.len())
}

/// Copies row `index` into `out`.
///
/// # Safety
/// `res` must be a valid results handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn qoc_results_row(res: *const QocResults, index: usize, out: *mut QocResultRow) -> QocStatus {
    guard(|| {
        let res = res.as_ref().ok_or_else(|| null("results"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let row = res.rows.get(index).ok_or_else(|| {
            (
                QocStatus::OutOfRange,
                format!("row {index} out of range ({} rows)", res.rows.len()),
            )
        })?;
        *out = QocResultRow {
            scenario_id: row.scenario_id.as_ptr(),
            engine: row.engine.as_ptr(),
            oc: row.oc.as_ptr(),
            estimate: row.estimate,
            se: row.se,
            replicates: row.replicates,
            wall_clock_s: row.wall_clock_s,
        };
        Ok(())
    })
}

/// Frees results; null is ignored.
///
/// # Safety
/// `res` must come from [`qoc_run`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn qoc_results_free(res: *mut QocResults) {
    if !res.is_null() {
        drop(Box::from_raw(res));
    }
}

/// Exact probability that a single-arm trial with a uniform prior is
/// declared positive.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn qoc_exact_single_arm(
    n: u64,
    reference_rate: f64,
    decision_threshold: f64,
    rate: f64,
    out: *mut f64,
) -> QocStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let protocol = SingleArmProtocol::new(n as usize, reference_rate, decision_threshold);
        protocol.validate().map_err(|e| (QocStatus::ConfigError, e.to_string()))?;
        if !(0.0..=1.0).contains(&rate) {
            return Err((QocStatus::OutOfRange, format!("rate {rate} outside [0, 1]")));
        }
        *out = exact::single_arm_positive_prob(&protocol, rate).map_err(numerical)?;
        Ok(())
    })
}

/// Exact power of the single-stage two-arm trial with uniform priors.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn qoc_exact_two_arm_power(
    n0: u64,
    n1: u64,
    decision_threshold: f64,
    rate0: f64,
    rate1: f64,
    out: *mut f64,
) -> QocStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let protocol = TwoArmProtocol::single_stage(n0 as usize, n1 as usize, decision_threshold);
        protocol.validate().map_err(|e| (QocStatus::ConfigError, e.to_string()))?;
        if ![rate0, rate1].iter().all(|r| (0.0..=1.0).contains(r)) {
            return Err((QocStatus::OutOfRange, "rates must lie in [0, 1]".into()));
        }
        *out = exact::two_arm(&protocol, [rate0, rate1]).map_err(numerical)?.power;
        Ok(())
    })
}
