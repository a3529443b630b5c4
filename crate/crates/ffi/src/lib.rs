//! C ABI over `landmark-surrogate`.
//!
//! Studies and inference reports are opaque handles owned by the caller and
//! released with their `_free` functions. Every fallible call returns an
//! [`LsStatus`]; on failure [`ls_last_error`] describes the cause. Strings
//! returned by the library are released with [`ls_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::fs::File;
use std::io::BufReader;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use landmark_surrogate::data::{load_study, Schema};
use landmark_surrogate::estimators::{estimate, EstimateSet};
use landmark_surrogate::inference::{infer, FiellerSet, InferenceConfig, InferenceReport, VarianceMode};
use landmark_surrogate::kernel::KernelSpec;
use landmark_surrogate::{Error, Group, StudyData, SubjectRecord};

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LsStatus {
    Ok = 0,
    NullPointer = 1,
    /// Malformed or invariant-violating input data or parameters.
    Validation = 2,
    /// Estimation failed on valid input, e.g. censoring support exhausted.
    Estimation = 3,
    Io = 4,
    Panic = 5,
}

/// Opaque study handle.
pub struct LsStudy {
    data: StudyData,
}

/// Opaque inference report handle.
pub struct LsReport {
    report: InferenceReport,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LsEstimates {
    pub delta: f64,
    pub delta_s: f64,
    pub r_s: f64,
    pub delta_t: f64,
    pub r_t: f64,
    pub iv_s: f64,
    pub bandwidth: f64,
}

impl From<EstimateSet> for LsEstimates {
    fn from(e: EstimateSet) -> Self {
        LsEstimates {
            delta: e.delta,
            delta_s: e.delta_s,
            r_s: e.r_s,
            delta_t: e.delta_t,
            r_t: e.r_t,
            iv_s: e.iv_s,
            bandwidth: e.bandwidth,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LsInferenceOptions {
    pub draws: usize,
    pub seed: u64,
    pub alpha: f64,
    /// Nonzero selects the median-absolute-deviation variance.
    pub robust_variance: i32,
    /// Nonzero augments with every covariate column.
    pub augment: i32,
}

/// Shape of a Fieller confidence set.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LsFiellerKind {
    None = 0,
    /// `[lower, upper]`.
    Interval = 1,
    /// `(-inf, lower] U [upper, inf)`.
    Complement = 2,
    /// `[lower, inf)`.
    UpperRay = 3,
    /// `(-inf, upper]`.
    LowerRay = 4,
    WholeLine = 5,
    Empty = 6,
}

/// One estimand of a report. Absent intervals are NaN.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LsEstimandSummary {
    pub point: f64,
    pub se: f64,
    pub normal_lower: f64,
    pub normal_upper: f64,
    pub quantile_lower: f64,
    pub quantile_upper: f64,
    pub fieller_kind: LsFiellerKind,
    pub fieller_lower: f64,
    pub fieller_upper: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> LsStatus {
    match err {
        Error::Io(_) => LsStatus::Io,
        e if e.is_validation() => LsStatus::Validation,
        _ => LsStatus::Estimation,
    }
}

/// Runs `f`, recording errors and converting panics.
fn guard(f: impl FnOnce() -> Result<(), LsStatus>) -> LsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => LsStatus::Ok,
        Ok(Err(status)) => status,
        Err(_) => {
            set_last_error("internal panic".into());
            LsStatus::Panic
        }
    }
}

fn fail(err: Error) -> LsStatus {
    let status = status_of(&err);
    set_last_error(err.to_string());
    status
}

fn null_pointer(what: &str) -> LsStatus {
    set_last_error(format!("null pointer: {what}"));
    LsStatus::NullPointer
}

/// Message of the last failed call on this thread, or NULL. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ls_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Releases a string returned by this library.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn ls_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Builds a study from column arrays of length `n`. `group` is 0 for arm A
/// and 1 for arm B; a NaN surrogate marks "not measured". `covariates` is
/// either NULL (with `p = 0`) or row-major `n x p`.
///
/// # Safety
/// Every non-NULL array must hold `n` (covariates: `n * p`) readable
/// elements; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ls_study_from_arrays(
    group: *const i32,
    time: *const f64,
    event: *const i32,
    surrogate: *const f64,
    covariates: *const f64,
    p: usize,
    n: usize,
    t0: f64,
    t: f64,
    out: *mut *mut LsStudy,
) -> LsStatus {
    guard(|| {
        if group.is_null() || time.is_null() || event.is_null() || surrogate.is_null() {
            return Err(null_pointer("study column"));
        }
        if out.is_null() {
            return Err(null_pointer("out"));
        }
        if p > 0 && covariates.is_null() {
            return Err(null_pointer("covariates"));
        }
        let group = std::slice::from_raw_parts(group, n);
        let time = std::slice::from_raw_parts(time, n);
        let event = std::slice::from_raw_parts(event, n);
        let surrogate = std::slice::from_raw_parts(surrogate, n);
        let covariates = if p > 0 {
            std::slice::from_raw_parts(covariates, n * p)
        } else {
            &[]
        };
        let (mut arm_a, mut arm_b) = (Vec::new(), Vec::new());
        for i in 0..n {
            let g = match group[i] {
                0 => Group::A,
                1 => Group::B,
                other => {
                    return Err(fail(Error::MalformedRow {
                        line: i + 1,
                        message: format!("group code {other} is neither 0 nor 1"),
                    }))
                }
            };
            let s = (!surrogate[i].is_nan()).then_some(surrogate[i]);
            let rec = SubjectRecord::new(g, time[i], event[i] != 0, s)
                .with_covariates(covariates[i * p..(i + 1) * p].to_vec());
            match g {
                Group::A => arm_a.push(rec),
                Group::B => arm_b.push(rec),
            }
        }
        let data = StudyData::new(arm_a, arm_b, t0, t).map_err(fail)?;
        *out = Box::into_raw(Box::new(LsStudy { data }));
        Ok(())
    })
}

/// Loads a CSV with the default column names `group,time,event,s` and
/// labels `A`/`B`; remaining columns are covariates.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ls_study_from_csv(
    path: *const c_char,
    t0: f64,
    t: f64,
    out: *mut *mut LsStudy,
) -> LsStatus {
    guard(|| {
        if path.is_null() || out.is_null() {
            return Err(null_pointer("path or out"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| fail(Error::InvalidParameter("path is not UTF-8".into())))?;
        let file = File::open(path).map_err(|e| fail(Error::Io(e)))?;
        let data = load_study(BufReader::new(file), &Schema::default(), t0, t).map_err(fail)?;
        *out = Box::into_raw(Box::new(LsStudy { data }));
        Ok(())
    })
}

/// Number of subjects in `arm` (0 = A, 1 = B); 0 for a NULL handle.
///
/// # Safety
/// `study` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ls_study_arm_size(study: *const LsStudy, arm: i32) -> usize {
    match (study.as_ref(), arm) {
        (Some(s), 0) => s.data.n(Group::A),
        (Some(s), 1) => s.data.n(Group::B),
        _ => 0,
    }
}

/// # Safety
/// `study` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ls_study_free(study: *mut LsStudy) {
    if !study.is_null() {
        drop(Box::from_raw(study));
    }
}

/// Unit-weight point estimates with the default kernel settings.
///
/// # Safety
/// `study` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ls_estimate(study: *const LsStudy, out: *mut LsEstimates) -> LsStatus {
    guard(|| {
        let (Some(study), false) = (study.as_ref(), out.is_null()) else {
            return Err(null_pointer("study or out"));
        };
        let point = estimate(&study.data, &KernelSpec::default()).map_err(fail)?;
        *out = point.estimates.into();
        Ok(())
    })
}

#[no_mangle]
pub extern "C" fn ls_inference_options_default() -> LsInferenceOptions {
    let d = InferenceConfig::default();
    LsInferenceOptions {
        draws: d.draws,
        seed: d.seed,
        alpha: d.alpha,
        robust_variance: 0,
        augment: 0,
    }
}

/// Perturbation-resampling inference.
///
/// # Safety
/// `study` and `options` must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ls_infer(
    study: *const LsStudy,
    options: *const LsInferenceOptions,
    out: *mut *mut LsReport,
) -> LsStatus {
    guard(|| {
        let (Some(study), Some(opts), false) = (study.as_ref(), options.as_ref(), out.is_null())
        else {
            return Err(null_pointer("study, options or out"));
        };
        let config = InferenceConfig {
            draws: opts.draws,
            seed: opts.seed,
            alpha: opts.alpha,
            variance: if opts.robust_variance != 0 {
                VarianceMode::RobustMedian
            } else {
                VarianceMode::Empirical
            },
            augment: (opts.augment != 0).then(|| study.data.covariate_names().to_vec()),
            ..InferenceConfig::default()
        };
        let report = infer(&study.data, &config).map_err(fail)?;
        *out = Box::into_raw(Box::new(LsReport { report }));
        Ok(())
    })
}

/// # Safety
/// `report` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ls_report_point(report: *const LsReport, out: *mut LsEstimates) -> LsStatus {
    guard(|| {
        let (Some(r), false) = (report.as_ref(), out.is_null()) else {
            return Err(null_pointer("report or out"));
        };
        *out = r.report.point.into();
        Ok(())
    })
}

/// Summary of one estimand by name (`delta`, `delta_s`, `r_s`, `delta_t`,
/// `r_t`, `iv_s`, and `delta_aug`, `delta_s_aug`, `r_s_aug` when augmented).
///
/// # Safety
/// `report` must be live, `name` NUL-terminated and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ls_report_estimand(
    report: *const LsReport,
    name: *const c_char,
    out: *mut LsEstimandSummary,
) -> LsStatus {
    guard(|| {
        let (Some(r), false, false) = (report.as_ref(), name.is_null(), out.is_null()) else {
            return Err(null_pointer("report, name or out"));
        };
        let name = CStr::from_ptr(name).to_string_lossy();
        let e = r
            .report
            .estimand(&name)
            .ok_or_else(|| fail(Error::InvalidParameter(format!("unknown estimand `{name}`"))))?;
        let nan = f64::NAN;
        let (normal_lower, normal_upper) = e.ci_normal.map_or((nan, nan), |c| (c.lower, c.upper));
        let (quantile_lower, quantile_upper) =
            e.ci_quantile.map_or((nan, nan), |c| (c.lower, c.upper));
        let (fieller_kind, fieller_lower, fieller_upper) = match e.ci_fieller {
            None => (LsFiellerKind::None, nan, nan),
            Some(FiellerSet::Interval { lower, upper }) => (LsFiellerKind::Interval, lower, upper),
            Some(FiellerSet::Complement { lower, upper }) => {
                (LsFiellerKind::Complement, lower, upper)
            }
            Some(FiellerSet::UpperRay { lower }) => (LsFiellerKind::UpperRay, lower, nan),
            Some(FiellerSet::LowerRay { upper }) => (LsFiellerKind::LowerRay, nan, upper),
            Some(FiellerSet::WholeLine) => (LsFiellerKind::WholeLine, nan, nan),
            Some(FiellerSet::Empty) => (LsFiellerKind::Empty, nan, nan),
        };
        *out = LsEstimandSummary {
            point: e.point,
            se: e.se,
            normal_lower,
            normal_upper,
            quantile_lower,
            quantile_upper,
            fieller_kind,
            fieller_lower,
            fieller_upper,
        };
        Ok(())
    })
}

/// Full report as JSON; release with [`ls_string_free`]. NULL on failure.
///
/// # Safety
/// `report` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ls_report_json(report: *const LsReport) -> *mut c_char {
    let Some(r) = report.as_ref() else {
        null_pointer("report");
        return ptr::null_mut();
    };
    match serde_json::to_string(&r.report) {
        Ok(s) => CString::new(s).map_or(ptr::null_mut(), CString::into_raw),
        Err(e) => {
            set_last_error(e.to_string());
            ptr::null_mut()
        }
    }
}

/// # Safety
/// `report` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ls_report_free(report: *mut LsReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}
