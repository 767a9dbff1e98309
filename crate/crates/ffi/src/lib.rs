//! C ABI for the `qdit` selection library.
//!
//! Datasets and results are opaque heap handles released with their `_free`
//! function. Every fallible call returns a [`QditStatus`]; on failure a
//! message is available from [`qdit_last_error_message`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use qdit::types::{DEFAULT_CLUSTERS, DEFAULT_DENSE_CAP, DEFAULT_EPSILON, DEFAULT_TAU};
use qdit::{Algorithm, DataPoint, Dataset, QditError, SelectionConfig, SelectionResult, SimilarityBackend};

/// Status codes returned by every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QditStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    InvalidData = 5,
    OutOfRange = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QditAlgorithm {
    Greedy = 0,
    Lazy = 1,
    Stochastic = 2,
    StochasticLazy = 3,
    Cluster = 4,
    Threshold = 5,
}

impl From<QditAlgorithm> for Algorithm {
    fn from(a: QditAlgorithm) -> Self {
        match a {
            QditAlgorithm::Greedy => Algorithm::Greedy,
            QditAlgorithm::Lazy => Algorithm::Lazy,
            QditAlgorithm::Stochastic => Algorithm::Stochastic,
            QditAlgorithm::StochasticLazy => Algorithm::StochasticLazy,
            QditAlgorithm::Cluster => Algorithm::Cluster,
            QditAlgorithm::Threshold => Algorithm::Threshold,
        }
    }
}

/// Selection parameters. Start from [`qdit_select_options_default`].
/// `epsilon`, `tau` and `n_clusters` are read only by the algorithm they
/// belong to.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QditSelectOptions {
    pub alpha: f64,
    pub k: usize,
    pub algorithm: QditAlgorithm,
    pub epsilon: f64,
    pub tau: f64,
    pub n_clusters: usize,
    pub seed: u64,
    /// Datasets up to this size use a precomputed similarity matrix.
    pub dense_cap: usize,
}

/// Opaque dataset handle.
pub struct QditDataset {
    inner: Dataset,
}

/// Opaque selection result handle.
pub struct QditResult {
    inner: SelectionResult,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: impl Into<String>) {
    let s = message.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(s).ok());
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn status_of(err: &QditError) -> QditStatus {
    match err {
        QditError::Io { .. } => QditStatus::Io,
        QditError::Parse { .. } | QditError::Format { .. } => QditStatus::Parse,
        QditError::IndexOutOfRange { .. } => QditStatus::OutOfRange,
        QditError::InvalidConfig(_) | QditError::BudgetExceeded { .. } => QditStatus::InvalidArgument,
        _ => QditStatus::InvalidData,
    }
}

struct Fail(QditStatus, String);

impl From<QditError> for Fail {
    fn from(e: QditError) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

/// Runs `f`, converting errors and panics into a status plus a stored message.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> QditStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => QditStatus::Ok,
        Ok(Err(Fail(status, message))) => {
            set_error(message);
            status
        }
        Err(_) => {
            set_error("internal panic");
            QditStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(QditStatus::NullArgument, format!("{what} is null"))
}

/// # Safety
/// `p` must be null or a valid NUL-terminated string.
unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    // SAFETY: non-null and NUL-terminated per the caller contract.
    let s = unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|_| Fail(QditStatus::InvalidArgument, format!("{what} is not valid UTF-8")))?;
    Ok(PathBuf::from(s))
}

/// Message describing the last failed call on this thread, or null. The
/// pointer stays valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn qdit_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Static description of a status code.
#[no_mangle]
pub extern "C" fn qdit_status_string(status: QditStatus) -> *const c_char {
    let s: &'static CStr = match status {
        QditStatus::Ok => c"ok",
        QditStatus::NullArgument => c"null argument",
        QditStatus::InvalidArgument => c"invalid argument",
        QditStatus::Io => c"I/O error",
        QditStatus::Parse => c"parse error",
        QditStatus::InvalidData => c"invalid data",
        QditStatus::OutOfRange => c"index out of range",
        QditStatus::Panic => c"internal panic",
    };
    s.as_ptr()
}

/// Loads a JSONL dataset. `embeddings_path` may be null when every record
/// carries an inline embedding.
///
/// # Safety
/// Paths must be null or NUL-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qdit_dataset_load(
    jsonl_path: *const c_char,
    embeddings_path: *const c_char,
    out: *mut *mut QditDataset,
) -> QditStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        // SAFETY: caller contract.
        let jsonl = unsafe { path_arg(jsonl_path, "jsonl_path")? };
        let emb = if embeddings_path.is_null() {
            None
        } else {
            // SAFETY: caller contract.
            Some(unsafe { path_arg(embeddings_path, "embeddings_path")? })
        };
        let ds = qdit::load_dataset(&jsonl, emb.as_deref())?;
        // SAFETY: `out` is non-null and writable per the caller contract.
        unsafe { *out = Box::into_raw(Box::new(QditDataset { inner: ds })) };
        Ok(())
    })
}

/// Builds a dataset from an `n × dim` row-major embedding matrix and `n`
/// raw quality scores. Point ids are the decimal row numbers.
///
/// # Safety
/// `embeddings` must point to `n * dim` doubles, `quality` to `n` doubles,
/// and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qdit_dataset_from_arrays(
    embeddings: *const f64,
    quality: *const f64,
    n: usize,
    dim: usize,
    out: *mut *mut QditDataset,
) -> QditStatus {
    guard(|| {
        if embeddings.is_null() || quality.is_null() || out.is_null() {
            return Err(null("embeddings, quality or out"));
        }
        let len = n
            .checked_mul(dim)
            .ok_or_else(|| Fail(QditStatus::InvalidArgument, "n * dim overflows".into()))?;
        // SAFETY: caller contract on buffer sizes.
        let (emb, q) = unsafe {
            (
                std::slice::from_raw_parts(embeddings, len),
                std::slice::from_raw_parts(quality, n),
            )
        };
        let points = (0..n)
            .map(|i| DataPoint {
                id: i.to_string(),
                text: String::new(),
                quality: q[i],
                embedding: emb[i * dim..(i + 1) * dim].to_vec(),
            })
            .collect();
        let ds = Dataset::from_points(points)?;
        // SAFETY: `out` is non-null and writable.
        unsafe { *out = Box::into_raw(Box::new(QditDataset { inner: ds })) };
        Ok(())
    })
}

/// Number of points, or 0 for a null handle.
///
/// # Safety
/// `ds` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn qdit_dataset_len(ds: *const QditDataset) -> usize {
    // SAFETY: caller contract.
    unsafe { ds.as_ref() }.map_or(0, |d| d.inner.len())
}

/// Embedding dimension, or 0 for a null handle.
///
/// # Safety
/// `ds` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn qdit_dataset_dim(ds: *const QditDataset) -> usize {
    // SAFETY: caller contract.
    unsafe { ds.as_ref() }.map_or(0, |d| d.inner.dim())
}

/// # Safety
/// `ds` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn qdit_dataset_free(ds: *mut QditDataset) {
    if !ds.is_null() {
        // SAFETY: the handle came from Box::into_raw and is freed once.
        drop(unsafe { Box::from_raw(ds) });
    }
}

/// Lazy greedy, `alpha = 0.7`, `k = 10`, seed 0, default variant parameters.
#[no_mangle]
pub extern "C" fn qdit_select_options_default() -> QditSelectOptions {
    QditSelectOptions {
        alpha: 0.7,
        k: 10,
        algorithm: QditAlgorithm::Lazy,
        epsilon: DEFAULT_EPSILON,
        tau: DEFAULT_TAU,
        n_clusters: DEFAULT_CLUSTERS,
        seed: 0,
        dense_cap: DEFAULT_DENSE_CAP,
    }
}

fn config_from(o: &QditSelectOptions) -> SelectionConfig {
    let algorithm = Algorithm::from(o.algorithm);
    let mut c = SelectionConfig::new(algorithm, o.k, o.alpha).with_seed(o.seed);
    match algorithm {
        Algorithm::Stochastic | Algorithm::StochasticLazy => c.epsilon = Some(o.epsilon),
        Algorithm::Threshold => c.tau = Some(o.tau),
        Algorithm::Cluster => c.n_clusters = Some(o.n_clusters),
        Algorithm::Greedy | Algorithm::Lazy => {}
    }
    c
}

/// Runs a selection.
///
/// # Safety
/// `ds` must be a live handle, `options` readable, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn qdit_select(
    ds: *const QditDataset,
    options: *const QditSelectOptions,
    out: *mut *mut QditResult,
) -> QditStatus {
    guard(|| {
        // SAFETY: caller contract.
        let (ds, options) = unsafe { (ds.as_ref(), options.as_ref()) };
        let (Some(ds), Some(options)) = (ds, options) else {
            return Err(null("ds or options"));
        };
        if out.is_null() {
            return Err(null("out"));
        }
        let config = config_from(options);
        config.validate(ds.inner.len())?;
        let backend = match config.algorithm {
            Algorithm::Cluster | Algorithm::Threshold => SimilarityBackend::streaming(&ds.inner),
            _ => SimilarityBackend::for_dataset(&ds.inner, options.dense_cap),
        };
        let result = qdit::select(&ds.inner, &backend, &config)?;
        // SAFETY: `out` is non-null and writable.
        unsafe { *out = Box::into_raw(Box::new(QditResult { inner: result })) };
        Ok(())
    })
}

/// Number of selected points, or 0 for a null handle.
///
/// # Safety
/// `r` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn qdit_result_len(r: *const QditResult) -> usize {
    // SAFETY: caller contract.
    unsafe { r.as_ref() }.map_or(0, |r| r.inner.selected.len())
}

/// Selected indices in selection order; `qdit_result_len` entries, valid
/// until the handle is freed. Null for a null handle.
///
/// # Safety
/// `r` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn qdit_result_indices(r: *const QditResult) -> *const usize {
    // SAFETY: caller contract.
    unsafe { r.as_ref() }.map_or(ptr::null(), |r| r.inner.selected.as_ptr())
}

/// Per-pick objective values, same length and lifetime as the indices.
///
/// # Safety
/// `r` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn qdit_result_trace(r: *const QditResult) -> *const f64 {
    // SAFETY: caller contract.
    unsafe { r.as_ref() }.map_or(ptr::null(), |r| r.inner.objective_trace.as_ptr())
}

/// Normalized facility-location score of the selection; NaN for null.
///
/// # Safety
/// `r` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn qdit_result_diversity(r: *const QditResult) -> f64 {
    // SAFETY: caller contract.
    unsafe { r.as_ref() }.map_or(f64::NAN, |r| r.inner.diversity)
}

/// Mean normalized quality of the selection; NaN for null.
///
/// # Safety
/// `r` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn qdit_result_mean_quality(r: *const QditResult) -> f64 {
    // SAFETY: caller contract.
    unsafe { r.as_ref() }.map_or(f64::NAN, |r| r.inner.mean_quality)
}

/// True when threshold selection stopped short of `k`.
///
/// # Safety
/// `r` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn qdit_result_truncated(r: *const QditResult) -> bool {
    // SAFETY: caller contract.
    unsafe { r.as_ref() }.is_some_and(|r| r.inner.truncated)
}

/// Writes the result JSON, resolving ids through `ds`.
///
/// # Safety
/// Handles must be live; `path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn qdit_result_write_json(
    r: *const QditResult,
    ds: *const QditDataset,
    path: *const c_char,
) -> QditStatus {
    guard(|| {
        // SAFETY: caller contract.
        let (r, ds) = unsafe { (r.as_ref(), ds.as_ref()) };
        let (Some(r), Some(ds)) = (r, ds) else {
            return Err(null("result or ds"));
        };
        // SAFETY: caller contract.
        let path = unsafe { path_arg(path, "path")? };
        qdit::write_result(&r.inner, &ds.inner, &path)?;
        Ok(())
    })
}

/// # Safety
/// `r` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn qdit_result_free(r: *mut QditResult) {
    if !r.is_null() {
        // SAFETY: the handle came from Box::into_raw and is freed once.
        drop(unsafe { Box::from_raw(r) });
    }
}

/// Diversity and mean quality of an arbitrary subset.
///
/// # Safety
/// `ds` must be a live handle; `indices` must point to `len` values (may be
/// null when `len` is 0); the output pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn qdit_score(
    ds: *const QditDataset,
    indices: *const usize,
    len: usize,
    diversity: *mut f64,
    mean_quality: *mut f64,
) -> QditStatus {
    guard(|| {
        // SAFETY: caller contract.
        let Some(ds) = (unsafe { ds.as_ref() }) else {
            return Err(null("ds"));
        };
        if diversity.is_null() || mean_quality.is_null() || (indices.is_null() && len > 0) {
            return Err(null("indices or outputs"));
        }
        let subset: &[usize] = if len == 0 {
            &[]
        } else {
            // SAFETY: caller contract.
            unsafe { std::slice::from_raw_parts(indices, len) }
        };
        let (d, q) = qdit::subset_metrics(&ds.inner, subset)?;
        // SAFETY: outputs are non-null and writable.
        unsafe {
            *diversity = d;
            *mean_quality = q;
        }
        Ok(())
    })
}
