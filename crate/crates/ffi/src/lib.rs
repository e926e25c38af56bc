//! C ABI over the `cardicat` synthesizer.
//!
//! Every fallible function returns a status code matching the CLI exit codes
//! (0 ok, 1 usage, 2 data, 3 numerical) plus [`CC_ERR_INTERNAL`] for caught
//! panics. On failure, [`cc_last_error_message`] describes the error for the
//! calling thread. Strings returned through out-parameters are owned by the
//! caller and must be released with [`cc_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use cardicat::cli::{fit_pipeline, parse_condition, DEFAULT_SPLIT};
use cardicat::fidelity::evaluate;
use cardicat::model::{Checkpoint, TrainConfig};
use cardicat::schema::{infer_schema, InferOptions, RawTable};
use cardicat::simgen::{simulate, SimSpec};
use cardicat::synthesis::{conditional_sample, sample, SampleOptions, SynthesisRequest};
use cardicat::Error;

pub type CcStatus = i32;

pub const CC_OK: CcStatus = 0;
pub const CC_ERR_USAGE: CcStatus = 1;
pub const CC_ERR_DATA: CcStatus = 2;
pub const CC_ERR_NUMERIC: CcStatus = 3;
pub const CC_ERR_INTERNAL: CcStatus = 4;

/// A trained model loaded from a checkpoint.
pub struct CcModel {
    checkpoint: Checkpoint,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard<F: FnOnce() -> Result<(), Error>>(f: F) -> CcStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CC_OK,
        Ok(Err(e)) => {
            let code = e.exit_code();
            set_error(e.to_string());
            code
        }
        Err(_) => {
            set_error("internal panic".into());
            CC_ERR_INTERNAL
        }
    }
}

unsafe fn arg_str<'a>(p: *const c_char, name: &str) -> Result<&'a str, Error> {
    if p.is_null() {
        return Err(Error::Usage(format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Error::Usage(format!("{name} is not valid UTF-8")))
}

unsafe fn opt_str<'a>(p: *const c_char, name: &str) -> Result<Option<&'a str>, Error> {
    if p.is_null() {
        Ok(None)
    } else {
        arg_str(p, name).map(Some)
    }
}

unsafe fn put_string(out: *mut *mut c_char, s: String) -> Result<(), Error> {
    if out.is_null() {
        return Err(Error::Usage("output pointer is null".into()));
    }
    let c = CString::new(s).map_err(|_| Error::Data("output contains a NUL byte".into()))?;
    *out = c.into_raw();
    Ok(())
}

fn table_to_csv(table: &RawTable) -> Result<String, Error> {
    let mut buf = Vec::new();
    table.write_csv(&mut buf)?;
    String::from_utf8(buf).map_err(|e| Error::Data(e.to_string()))
}

/// Message for the most recent failure on this thread, or null. The pointer
/// stays valid until the next call into this library from the same thread.
#[no_mangle]
pub extern "C" fn cc_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed already.
#[no_mangle]
pub unsafe extern "C" fn cc_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Writes the simulated benchmark table as CSV text into `*out_csv`.
///
/// # Safety
/// `out_csv` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cc_simulate_csv(
    n_rows: usize,
    seed: u64,
    out_csv: *mut *mut c_char,
) -> CcStatus {
    guard(|| {
        if n_rows == 0 {
            return Err(Error::Usage("n_rows must be at least 1".into()));
        }
        put_string(out_csv, table_to_csv(&simulate(&SimSpec { n_rows, seed }))?)
    })
}

/// Trains on the CSV at `data_path` and writes a checkpoint to
/// `checkpoint_path`. `config_json` is an optional training configuration
/// (fields as in the CLI config's `train` object). When `out_model` is not
/// null it receives a handle to the trained model.
///
/// # Safety
/// String arguments must be NUL-terminated; `out_model` may be null.
#[no_mangle]
pub unsafe extern "C" fn cc_fit(
    data_path: *const c_char,
    config_json: *const c_char,
    checkpoint_path: *const c_char,
    out_model: *mut *mut CcModel,
) -> CcStatus {
    guard(|| {
        let data = arg_str(data_path, "data_path")?;
        let ckpt = arg_str(checkpoint_path, "checkpoint_path")?;
        let config: TrainConfig = match opt_str(config_json, "config_json")? {
            Some(s) => {
                serde_json::from_str(s).map_err(|e| Error::Usage(format!("config_json: {e}")))?
            }
            None => TrainConfig::default(),
        };
        config.validate()?;
        let table = RawTable::read_csv_path(Path::new(data)).map_err(|e| e.in_stage("ingest"))?;
        let outcome = fit_pipeline(
            &table,
            None,
            &InferOptions::default(),
            &config,
            DEFAULT_SPLIT,
            false,
        )?;
        outcome
            .model
            .save_path(Path::new(ckpt), outcome.n_rows, &outcome.test_indices)?;
        if !out_model.is_null() {
            let checkpoint = Checkpoint::load_path(Path::new(ckpt))?;
            *out_model = Box::into_raw(Box::new(CcModel { checkpoint }));
        }
        Ok(())
    })
}

/// Loads a checkpoint file into `*out_model`.
///
/// # Safety
/// `path` must be NUL-terminated and `out_model` valid.
#[no_mangle]
pub unsafe extern "C" fn cc_model_load(
    path: *const c_char,
    out_model: *mut *mut CcModel,
) -> CcStatus {
    guard(|| {
        let p = arg_str(path, "path")?;
        if out_model.is_null() {
            return Err(Error::Usage("out_model is null".into()));
        }
        let checkpoint = Checkpoint::load_path(Path::new(p))?;
        *out_model = Box::into_raw(Box::new(CcModel { checkpoint }));
        Ok(())
    })
}

/// Releases a model handle. Null is ignored.
///
/// # Safety
/// `model` must come from this library and not have been freed already.
#[no_mangle]
pub unsafe extern "C" fn cc_model_free(model: *mut CcModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of trainable parameters, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cc_model_param_count(model: *const CcModel) -> usize {
    model
        .as_ref()
        .map_or(0, |m| m.checkpoint.model.parameter_count())
}

/// Samples `n_rows` synthetic rows as CSV text. `condition_json` is an
/// optional object of categorical feature to level, for conditional models.
///
/// # Safety
/// `model` must be a live handle; `out_csv` valid.
#[no_mangle]
pub unsafe extern "C" fn cc_model_sample_csv(
    model: *const CcModel,
    n_rows: usize,
    seed: u64,
    condition_json: *const c_char,
    out_csv: *mut *mut c_char,
) -> CcStatus {
    guard(|| {
        let m = model
            .as_ref()
            .ok_or_else(|| Error::Usage("model is null".into()))?;
        let opts = SampleOptions::default();
        let request = SynthesisRequest::new(n_rows, seed);
        let table = match opt_str(condition_json, "condition_json")? {
            Some(s) => conditional_sample(
                &m.checkpoint.model,
                &request.with_condition(parse_condition(s)?),
                &opts,
            )?,
            None => sample(&m.checkpoint.model, &request, &opts)?,
        };
        put_string(out_csv, table_to_csv(&table)?)
    })
}

/// Scores `synth_csv` against `real_csv` (both CSV text) and writes the JSON
/// report into `*out_json`. The schema comes from `model` when given,
/// otherwise it is inferred from the real rows.
///
/// # Safety
/// `model` may be null; strings must be NUL-terminated; `out_json` valid.
#[no_mangle]
pub unsafe extern "C" fn cc_evaluate_csv(
    model: *const CcModel,
    real_csv: *const c_char,
    synth_csv: *const c_char,
    out_json: *mut *mut c_char,
) -> CcStatus {
    guard(|| {
        let real = RawTable::read_csv(arg_str(real_csv, "real_csv")?.as_bytes())?;
        let synth = RawTable::read_csv(arg_str(synth_csv, "synth_csv")?.as_bytes())?;
        let schema = match model.as_ref() {
            Some(m) => m.checkpoint.meta.schema.clone(),
            None => infer_schema(&real, &InferOptions::default())?,
        };
        let real = real.drop_incomplete(&schema)?;
        let report = evaluate(&schema, &real, &synth)?;
        put_string(out_json, report.to_json()?)
    })
}
