//! C ABI over `catn-core`.
//!
//! Every fallible function returns a [`CatnStatus`]; on failure the message is
//! kept per thread and read with [`catn_last_error_message`]. Strings handed
//! out by the library are freed with [`catn_string_free`], models with
//! [`catn_model_free`]. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use catn_core::matcher::{external_term, hungarian, CostMatrix};
use catn_core::pipeline::{run_pipeline, RunConfig};
use catn_core::postprocess::{hoi_nms, hoi_softnms, HoiTriplet};
use catn_core::priors::{CategoryRef, EmbeddingTable};
use catn_core::scene::{from_json_str, to_canonical_json, Scene};
use catn_core::tensor::Matrix;
use catn_core::transformer::{ModelConfig, ModelFile, ModelParams};
use catn_core::CatnError;

/// Status codes. The numeric values of `Io`, `Validation` and `Infeasible`
/// match the CLI exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CatnStatus {
    Ok = 0,
    Io = 1,
    Validation = 2,
    Infeasible = 3,
    NullPointer = 4,
    InvalidUtf8 = 5,
    Panic = 6,
}

/// Prior slot code for [`catn_external_cost`] meaning background.
pub const CATN_PRIOR_BACKGROUND: i64 = -1;
/// Prior slot code for [`catn_external_cost`] meaning the empty slot.
pub const CATN_PRIOR_NONE: i64 = -2;

pub const CATN_NMS_HARD: u32 = 0;
pub const CATN_NMS_SOFT: u32 = 1;

/// Single-verb detection in normalized corner coordinates.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CatnTriplet {
    pub human_box: [f64; 4],
    pub object_box: [f64; 4],
    pub object_category: u32,
    pub verb: u32,
    pub score: f64,
}

impl From<&CatnTriplet> for HoiTriplet {
    fn from(t: &CatnTriplet) -> Self {
        HoiTriplet {
            human_box: t.human_box,
            object_box: t.object_box,
            object_category: t.object_category,
            verb: t.verb,
            score: t.score,
        }
    }
}

impl From<&HoiTriplet> for CatnTriplet {
    fn from(t: &HoiTriplet) -> Self {
        CatnTriplet {
            human_box: t.human_box,
            object_box: t.object_box,
            object_category: t.object_category,
            verb: t.verb,
            score: t.score,
        }
    }
}

/// Opaque model handle.
pub struct CatnModel {
    params: ModelParams,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(CatnStatus, String);

impl From<CatnError> for Failure {
    fn from(e: CatnError) -> Self {
        let status = match e.exit_code() {
            1 => CatnStatus::Io,
            3 => CatnStatus::Infeasible,
            _ => CatnStatus::Validation,
        };
        Failure(status, e.to_string())
    }
}

fn set_error(msg: String) {
    // interior NULs cannot cross as C strings
    let msg = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> CatnStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            CatnStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            CatnStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(CatnStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(CatnStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_out<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

fn into_c_string(s: String) -> Result<*mut c_char, Failure> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| Failure(CatnStatus::Validation, "output contains NUL".into()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn catn_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or null after a success.
/// Valid until the next call into the library on the same thread.
#[no_mangle]
pub extern "C" fn catn_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Frees a string returned by this library. Null is a no-op.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn catn_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Initializes model parameters from a model config JSON (null for the
/// default config) and a seed.
///
/// # Safety
/// `config_json` must be null or a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn catn_model_init(
    config_json: *const c_char,
    seed: u64,
    out: *mut *mut CatnModel,
) -> CatnStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let config: ModelConfig = if config_json.is_null() {
            ModelConfig::default()
        } else {
            from_json_str(str_arg(config_json, "config_json")?)?
        };
        let params = ModelParams::init(&config, seed)?;
        *out = Box::into_raw(Box::new(CatnModel { params }));
        Ok(())
    })
}

/// Loads a model from the JSON written by `catn synth --model-out`.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn catn_model_from_json(json: *const c_char, out: *mut *mut CatnModel) -> CatnStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let file: ModelFile = from_json_str(str_arg(json, "json")?)?;
        let params = ModelParams::from_file(file)?;
        *out = Box::into_raw(Box::new(CatnModel { params }));
        Ok(())
    })
}

/// Serializes a model to canonical JSON. Free the result with [`catn_string_free`].
///
/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn catn_model_to_json(model: *const CatnModel, out: *mut *mut c_char) -> CatnStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = into_c_string(to_canonical_json(&model.params.to_file())?)?;
        Ok(())
    })
}

/// Frees a model handle. Null is a no-op.
///
/// # Safety
/// `model` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn catn_model_free(model: *mut CatnModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Runs the full pipeline on one scene and writes the prediction document as
/// canonical JSON. `run_config_json` may be null, which uses the default run
/// settings with the model's own config; otherwise its `model` field must
/// match the model.
///
/// # Safety
/// String arguments must be NUL-terminated (or null where allowed), `model`
/// a live handle, and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn catn_run(
    model: *const CatnModel,
    scene_json: *const c_char,
    table_json: *const c_char,
    run_config_json: *const c_char,
    out: *mut *mut c_char,
) -> CatnStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let scene: Scene = from_json_str(str_arg(scene_json, "scene_json")?)?;
        scene.validate()?;
        let table: EmbeddingTable = from_json_str(str_arg(table_json, "table_json")?)?;
        table.validate()?;
        let cfg = if run_config_json.is_null() {
            RunConfig {
                model: model.params.config.clone(),
                ..RunConfig::default()
            }
        } else {
            from_json_str(str_arg(run_config_json, "run_config_json")?)?
        };
        if cfg.model != model.params.config {
            return Err(CatnError::Config("run config model does not match the handle".into()).into());
        }
        cfg.validate()?;
        let result = run_pipeline(&scene, &table, &cfg, &model.params)?;
        *out = into_c_string(to_canonical_json(&result.prediction)?)?;
        Ok(())
    })
}

/// Minimum-cost assignment of `n_gt` rows to distinct columns of the
/// row-major `n_gt x n_q` matrix `cost`. Writes the column of each row to
/// `out_query` (length `n_gt`) and the summed cost to `out_total`.
/// Returns `Infeasible` when `n_gt > n_q`.
///
/// # Safety
/// `cost` must hold `n_gt * n_q` values and `out_query` `n_gt` slots.
#[no_mangle]
pub unsafe extern "C" fn catn_hungarian(
    cost: *const f64,
    n_gt: usize,
    n_q: usize,
    out_query: *mut usize,
    out_total: *mut f64,
) -> CatnStatus {
    guard(|| {
        let len = n_gt
            .checked_mul(n_q)
            .ok_or_else(|| Failure(CatnStatus::Validation, "n_gt * n_q overflows".into()))?;
        let values = Matrix::new(n_gt, n_q, slice_arg(cost, len, "cost")?.to_vec())?;
        let assignment = hungarian(&CostMatrix { values })?;
        let out = slice_out(out_query, n_gt, "out_query")?;
        for &(g, q) in &assignment.pairs {
            out[g] = q;
        }
        if !out_total.is_null() {
            *out_total = assignment.total;
        }
        Ok(())
    })
}

/// Category-consistency penalty matrix, row-major `n_gt x n_q`. Each query's
/// prior is a category id, [`CATN_PRIOR_BACKGROUND`] or [`CATN_PRIOR_NONE`].
///
/// # Safety
/// `prior_of_query` must hold `n_q` values, `gt_categories` `n_gt`, and
/// `out` `n_gt * n_q` slots.
#[no_mangle]
pub unsafe extern "C" fn catn_external_cost(
    prior_of_query: *const i64,
    n_q: usize,
    gt_categories: *const u32,
    n_gt: usize,
    v: f64,
    out: *mut f64,
) -> CatnStatus {
    guard(|| {
        if !(v.is_finite() && v > 0.0) {
            return Err(Failure(CatnStatus::Validation, format!("v={v} must be > 0")));
        }
        let priors = slice_arg(prior_of_query, n_q, "prior_of_query")?
            .iter()
            .map(|&p| match p {
                CATN_PRIOR_BACKGROUND => Ok(CategoryRef::Background),
                CATN_PRIOR_NONE => Ok(CategoryRef::None),
                id => u32::try_from(id)
                    .map(CategoryRef::Real)
                    .map_err(|_| Failure(CatnStatus::Validation, format!("invalid prior code {id}"))),
            })
            .collect::<Result<Vec<_>, _>>()?;
        let gts = slice_arg(gt_categories, n_gt, "gt_categories")?;
        let len = n_gt
            .checked_mul(n_q)
            .ok_or_else(|| Failure(CatnStatus::Validation, "n_gt * n_q overflows".into()))?;
        let out = slice_out(out, len, "out")?;
        for (i, &cat) in gts.iter().enumerate() {
            for (j, &p) in priors.iter().enumerate() {
                out[i * n_q + j] = external_term(p, cat, v);
            }
        }
        Ok(())
    })
}

/// HOI-NMS ([`CATN_NMS_HARD`]) or HOI-SoftNMS ([`CATN_NMS_SOFT`]) over `n`
/// triplets. Survivors are written to `out` in selection order (`out` needs
/// room for `n`) and their count to `out_len`. `sigma` is ignored in hard mode.
///
/// # Safety
/// `triplets` must hold `n` values and `out` room for `n`; `out_len` must be writable.
#[no_mangle]
pub unsafe extern "C" fn catn_nms(
    triplets: *const CatnTriplet,
    n: usize,
    mode: u32,
    t_iou: f64,
    sigma: f64,
    out: *mut CatnTriplet,
    out_len: *mut usize,
) -> CatnStatus {
    guard(|| {
        if out_len.is_null() {
            return Err(null("out_len"));
        }
        let input: Vec<HoiTriplet> = slice_arg(triplets, n, "triplets")?.iter().map(Into::into).collect();
        for t in &input {
            t.validate()?;
        }
        let kept = match mode {
            CATN_NMS_HARD => hoi_nms(&input, t_iou)?,
            CATN_NMS_SOFT => hoi_softnms(&input, t_iou, sigma)?,
            m => return Err(Failure(CatnStatus::Validation, format!("unknown nms mode {m}"))),
        };
        let dst = slice_out(out, n, "out")?;
        for (d, t) in dst.iter_mut().zip(&kept) {
            *d = t.into();
        }
        *out_len = kept.len();
        Ok(())
    })
}
