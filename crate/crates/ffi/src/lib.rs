//! C ABI over the `fedmas` simulator.
//!
//! Configurations and finished runs are opaque handles owned by the caller
//! and released with their `_free` function. Every fallible call returns a
//! [`FedmasStatus`]; on failure [`fedmas_last_error_message`] describes it.
//! Strings returned through out-pointers are freed with
//! [`fedmas_string_free`]. Array outputs follow one convention: the required
//! length is written to `needed` when it is non-null, and a buffer shorter
//! than that yields `FEDMAS_STATUS_BUFFER_TOO_SMALL` without writing.

use std::ffi::{c_char, CStr, CString};
use std::path::Path;
use std::ptr;

use fedmas::runner::{self, RunOutcome};
use fedmas::server::mas_aggregate;
use fedmas::{rescue_factor, ExperimentConfig};

mod status;

pub use status::{fedmas_last_error_message, FedmasStatus};
use status::{guard, FfiError};

/// Experiment configuration handle.
pub struct FedmasConfig {
    inner: ExperimentConfig,
}

/// Handle to a finished in-memory run.
pub struct FedmasRun {
    outcome: RunOutcome,
}

static VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn fedmas_version() -> *const c_char {
    VERSION.as_ptr().cast()
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, FfiError> {
    if p.is_null() {
        return Err(FfiError::null(name));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| FfiError::invalid(format!("`{name}` is not valid UTF-8")))
}

unsafe fn slice_arg<'a>(p: *const f64, len: usize, name: &str) -> Result<&'a [f64], FfiError> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(FfiError::null(name));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn handle<'a, T>(p: *const T, name: &str) -> Result<&'a T, FfiError> {
    p.as_ref().ok_or_else(|| FfiError::null(name))
}

unsafe fn write_out<T>(out: *mut T, value: T, name: &str) -> Result<(), FfiError> {
    if out.is_null() {
        return Err(FfiError::null(name));
    }
    out.write(value);
    Ok(())
}

unsafe fn write_string(out: *mut *mut c_char, s: String, name: &str) -> Result<(), FfiError> {
    let c = CString::new(s).map_err(|_| FfiError::invalid("string contains an interior NUL"))?;
    write_out(out, c.into_raw(), name)
}

unsafe fn write_array(
    values: &[f64],
    buf: *mut f64,
    len: usize,
    needed: *mut usize,
) -> Result<(), FfiError> {
    if !needed.is_null() {
        needed.write(values.len());
    }
    if len < values.len() {
        return Err(FfiError::new(
            FedmasStatus::BufferTooSmall,
            format!("buffer holds {len} values, {} needed", values.len()),
        ));
    }
    if !values.is_empty() {
        if buf.is_null() {
            return Err(FfiError::null("buf"));
        }
        ptr::copy_nonoverlapping(values.as_ptr(), buf, values.len());
    }
    Ok(())
}

/// Creates a configuration holding the defaults.
///
/// # Safety
/// `out` must be valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn fedmas_config_new(out: *mut *mut FedmasConfig) -> FedmasStatus {
    guard(|| {
        let cfg = Box::new(FedmasConfig {
            inner: ExperimentConfig::default(),
        });
        write_out(out, Box::into_raw(cfg), "out")
    })
}

/// Reads a `key = value` configuration file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn fedmas_config_from_file(
    path: *const c_char,
    out: *mut *mut FedmasConfig,
) -> FedmasStatus {
    guard(|| {
        let inner = ExperimentConfig::from_file(str_arg(path, "path")?)?;
        write_out(out, Box::into_raw(Box::new(FedmasConfig { inner })), "out")
    })
}

/// Releases a configuration. Null is ignored.
///
/// # Safety
/// `cfg` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn fedmas_config_free(cfg: *mut FedmasConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Sets one field; keys accept CLI spelling (`--lambda-f`) or `lambda_f`.
///
/// # Safety
/// `cfg` must be a live handle; `key` and `value` NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn fedmas_config_set(
    cfg: *mut FedmasConfig,
    key: *const c_char,
    value: *const c_char,
) -> FedmasStatus {
    guard(|| {
        let cfg = cfg.as_mut().ok_or_else(|| FfiError::null("cfg"))?;
        let (key, value) = (str_arg(key, "key")?, str_arg(value, "value")?);
        cfg.inner
            .set(key, value)
            .map_err(|m| FfiError::new(FedmasStatus::Config, m))
    })
}

/// Writes a field's textual value to `out`; free it with `fedmas_string_free`.
///
/// # Safety
/// `cfg` must be a live handle; `key` a NUL-terminated string; `out` valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn fedmas_config_get(
    cfg: *const FedmasConfig,
    key: *const c_char,
    out: *mut *mut c_char,
) -> FedmasStatus {
    guard(|| {
        let cfg = handle(cfg, "cfg")?;
        let key = str_arg(key, "key")?;
        let value = cfg
            .inner
            .get(key)
            .ok_or_else(|| FfiError::new(FedmasStatus::Config, format!("unknown key `{key}`")))?;
        write_string(out, value, "out")
    })
}

/// Checks every field, reporting all problems in one message.
///
/// # Safety
/// `cfg` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn fedmas_config_validate(cfg: *const FedmasConfig) -> FedmasStatus {
    guard(|| Ok(handle(cfg, "cfg")?.inner.validate()?))
}

/// Runs the experiment in memory. `threads` caps the client fan-out;
/// 0 uses the `FEDMAS_THREADS` environment variable or the global pool.
///
/// # Safety
/// `cfg` must be a live handle; `out` valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn fedmas_run(
    cfg: *const FedmasConfig,
    threads: usize,
    out: *mut *mut FedmasRun,
) -> FedmasStatus {
    guard(|| {
        let cfg = handle(cfg, "cfg")?;
        if out.is_null() {
            return Err(FfiError::null("out"));
        }
        let threads = if threads == 0 {
            runner::threads_from_env()
        } else {
            Some(threads)
        };
        let outcome = runner::execute(&cfg.inner, threads)?;
        write_out(out, Box::into_raw(Box::new(FedmasRun { outcome })), "out")
    })
}

/// Writes manifest, config, per-round and diagnostic files into `dir`.
///
/// # Safety
/// `run` must be a live handle; `dir` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn fedmas_run_write_artifacts(
    run: *const FedmasRun,
    dir: *const c_char,
) -> FedmasStatus {
    guard(|| {
        let run = handle(run, "run")?;
        Ok(runner::write_artifacts(
            &run.outcome,
            Path::new(str_arg(dir, "dir")?),
        )?)
    })
}

/// Releases a run. Null is ignored.
///
/// # Safety
/// `run` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn fedmas_run_free(run: *mut FedmasRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// Completed rounds, clients and flat parameter count.
///
/// # Safety
/// `run` must be a live handle; each out-pointer may be null to skip it.
#[no_mangle]
pub unsafe extern "C" fn fedmas_run_shape(
    run: *const FedmasRun,
    rounds: *mut usize,
    clients: *mut usize,
    params: *mut usize,
) -> FedmasStatus {
    guard(|| {
        let o = &handle(run, "run")?.outcome;
        let values = [
            (rounds, o.state.round),
            (clients, o.manifest.client_sizes.len()),
            (params, o.state.params.len()),
        ];
        for (dst, v) in values {
            if !dst.is_null() {
                dst.write(v);
            }
        }
        Ok(())
    })
}

/// Final metric by name: `balanced_acc`, `overall_acc`, `head_acc`,
/// `medium_acc`, `tail_acc` or `all_avg`. An empty shot group yields NaN.
///
/// # Safety
/// `run` must be a live handle; `name` a NUL-terminated string; `out` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn fedmas_run_metric(
    run: *const FedmasRun,
    name: *const c_char,
    out: *mut f64,
) -> FedmasStatus {
    guard(|| {
        let m = &handle(run, "run")?.outcome.final_metrics.metrics;
        let g = &m.group_acc;
        let value = match str_arg(name, "name")? {
            "balanced_acc" => m.balanced_acc,
            "overall_acc" => m.overall_acc,
            "head_acc" => g.head.unwrap_or(f64::NAN),
            "medium_acc" => g.medium.unwrap_or(f64::NAN),
            "tail_acc" => g.tail.unwrap_or(f64::NAN),
            "all_avg" => m.all_avg,
            other => return Err(FfiError::invalid(format!("unknown metric `{other}`"))),
        };
        write_out(out, value, "out")
    })
}

/// Copies the final global parameter vector.
///
/// # Safety
/// `run` must be a live handle; `buf` valid for `len` writes; `needed` null or valid.
#[no_mangle]
pub unsafe extern "C" fn fedmas_run_params(
    run: *const FedmasRun,
    buf: *mut f64,
    len: usize,
    needed: *mut usize,
) -> FedmasStatus {
    guard(|| write_array(&handle(run, "run")?.outcome.state.params, buf, len, needed))
}

#[derive(Clone, Copy)]
enum RoundSeries {
    Weights,
    RescueFactors,
}

unsafe fn round_series(
    run: *const FedmasRun,
    round: usize,
    series: RoundSeries,
    buf: *mut f64,
    len: usize,
    needed: *mut usize,
) -> FedmasStatus {
    guard(|| {
        let history = &handle(run, "run")?.outcome.state.history;
        let report = history.get(round).ok_or_else(|| {
            FfiError::invalid(format!("round {round} out of range 0..{}", history.len()))
        })?;
        let values = match series {
            RoundSeries::Weights => &report.weights,
            RoundSeries::RescueFactors => &report.rf,
        };
        write_array(values, buf, len, needed)
    })
}

/// Aggregation weights applied in a 0-based round, one per client.
///
/// # Safety
/// As for [`fedmas_run_params`].
#[no_mangle]
pub unsafe extern "C" fn fedmas_run_round_weights(
    run: *const FedmasRun,
    round: usize,
    buf: *mut f64,
    len: usize,
    needed: *mut usize,
) -> FedmasStatus {
    round_series(run, round, RoundSeries::Weights, buf, len, needed)
}

/// Rescue factors reported in a 0-based round, one per client.
///
/// # Safety
/// As for [`fedmas_run_params`].
#[no_mangle]
pub unsafe extern "C" fn fedmas_run_round_rescue_factors(
    run: *const FedmasRun,
    round: usize,
    buf: *mut f64,
    len: usize,
    needed: *mut usize,
) -> FedmasStatus {
    round_series(run, round, RoundSeries::RescueFactors, buf, len, needed)
}

/// The run's `rounds.csv` content; free it with `fedmas_string_free`.
///
/// # Safety
/// `run` must be a live handle; `out` valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn fedmas_run_rounds_csv(
    run: *const FedmasRun,
    out: *mut *mut c_char,
) -> FedmasStatus {
    guard(|| {
        write_string(
            out,
            runner::rounds_csv(&handle(run, "run")?.outcome.state),
            "out",
        )
    })
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn fedmas_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Rescue-factor weighted average of `num_clients` row-major parameter
/// vectors of length `num_params`, written to `out`.
///
/// # Safety
/// `params` valid for `num_clients * num_params` reads, `rfs` for
/// `num_clients` reads, `out` for `num_params` writes.
#[no_mangle]
pub unsafe extern "C" fn fedmas_mas_aggregate(
    params: *const f64,
    num_clients: usize,
    num_params: usize,
    rfs: *const f64,
    out: *mut f64,
) -> FedmasStatus {
    guard(|| {
        let total = num_clients
            .checked_mul(num_params)
            .ok_or_else(|| FfiError::invalid("num_clients * num_params overflows"))?;
        let flat = slice_arg(params, total, "params")?;
        let rfs = slice_arg(rfs, num_clients, "rfs")?;
        let rows: Vec<&[f64]> = if num_params == 0 {
            vec![&[][..]; num_clients]
        } else {
            flat.chunks(num_params).collect()
        };
        let merged = mas_aggregate(&rows, rfs)?;
        write_array(&merged, out, num_params, ptr::null_mut())
    })
}

/// `Σ_k w_k·ŵ_k` over classes present in both vectors; NaN marks an absent class.
///
/// # Safety
/// `w` and `w_hat` valid for `num_classes` reads; `out` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn fedmas_rescue_factor(
    w: *const f64,
    w_hat: *const f64,
    num_classes: usize,
    out: *mut f64,
) -> FedmasStatus {
    guard(|| {
        let present = |v: &f64| (!v.is_nan()).then_some(*v);
        let w: Vec<Option<f64>> = slice_arg(w, num_classes, "w")?
            .iter()
            .map(present)
            .collect();
        let w_hat: Vec<Option<f64>> = slice_arg(w_hat, num_classes, "w_hat")?
            .iter()
            .map(present)
            .collect();
        write_out(out, rescue_factor(&w, &w_hat)?, "out")
    })
}
