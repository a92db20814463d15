//! C ABI over gpr-core: load a trained checkpoint, classify samples with
//! optional coreference evidence, export attention traces, and score
//! prediction files.
//!
//! Every fallible call returns a [`GprStatus`]; on failure a message is
//! available from [`gpr_last_error`] on the same thread. Handles are opaque
//! and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use gpr_core::data::{parse_tsv, tokenize, GapSample, Vocab};
use gpr_core::evidence::{align_evidence, EvidenceCluster, Span};
use gpr_core::model::{Model, ModelInput, ModelKind};
use gpr_core::tensor::Archive;
use gpr_core::train::{gap_f1, read_predictions_csv, Gold};

/// Result codes. Zero is success.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GprStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// A file could not be read or parsed.
    Io = 3,
    /// Arguments were rejected (bad spans, unknown pronoun, ...).
    InvalidInput = 4,
    /// The model failed to load or run.
    Model = 5,
    /// A Rust panic was caught at the boundary.
    Panic = 6,
}

/// Model kind reported by [`gpr_model_kind`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GprModelKind {
    Probert = 0,
    Grep = 1,
}

/// A loaded checkpoint together with its vocabulary.
pub struct GprModel {
    model: Model,
    vocab: Vocab,
    max_len: usize,
}

/// A sample to classify. Offsets count characters, as in GAP files.
#[repr(C)]
pub struct GprSample {
    pub id: *const c_char,
    pub text: *const c_char,
    pub pronoun: *const c_char,
    pub pronoun_offset: usize,
    pub a: *const c_char,
    pub a_offset: usize,
    pub b: *const c_char,
    pub b_offset: usize,
}

/// One provider's cluster: `n` mentions as parallel offset/length arrays.
#[repr(C)]
pub struct GprCluster {
    pub provider: *const c_char,
    pub offsets: *const usize,
    pub lengths: *const usize,
    pub n: usize,
}

/// Headline GAP metrics.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GprScore {
    pub f1_masculine: f64,
    pub f1_feminine: f64,
    pub bias: f64,
    pub f1_overall: f64,
    pub logloss: f64,
    pub missing: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(GprStatus, String);

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> GprStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            GprStatus::Ok
        }
        Ok(Err(Failure(code, msg))) => {
            set_error(msg);
            code
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("panic: {msg}"));
            GprStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(GprStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(GprStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

fn model_err(e: impl std::fmt::Display) -> Failure {
    Failure(GprStatus::Model, e.to_string())
}

fn input_err(e: impl std::fmt::Display) -> Failure {
    Failure(GprStatus::InvalidInput, e.to_string())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn gpr_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failed call on this thread, or null. Valid until
/// the next call on this thread.
#[no_mangle]
pub extern "C" fn gpr_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Load a checkpoint written by `gpr train`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gpr_model_load(path: *const c_char, out: *mut *mut GprModel) -> GprStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure(GprStatus::NullPointer, "out is null".into()));
        }
        let path = str_arg(path, "path")?;
        let archive = Archive::load(Path::new(path)).map_err(|e| Failure(GprStatus::Io, e.to_string()))?;
        let model = Model::from_archive(&archive).map_err(model_err)?;
        let vocab: Vocab = archive
            .metadata
            .get("vocab")
            .cloned()
            .ok_or_else(|| model_err("checkpoint has no vocabulary"))
            .and_then(|v| serde_json::from_value(v).map_err(model_err))?;
        let max_len = model.config.encoder.max_len;
        *out = Box::into_raw(Box::new(GprModel { model, vocab, max_len }));
        Ok(())
    })
}

/// Release a model. Null is ignored.
///
/// # Safety
/// `model` must come from [`gpr_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn gpr_model_free(model: *mut GprModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Whether the model is the baseline or the evidence-pooling classifier.
///
/// # Safety
/// `model` must be a live handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gpr_model_kind(model: *const GprModel, out: *mut GprModelKind) -> GprStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| Failure(GprStatus::NullPointer, "model is null".into()))?;
        let out = out.as_mut().ok_or_else(|| Failure(GprStatus::NullPointer, "out is null".into()))?;
        *out = match m.model.kind() {
            ModelKind::Probert => GprModelKind::Probert,
            ModelKind::Grep => GprModelKind::Grep,
        };
        Ok(())
    })
}

unsafe fn read_sample(s: *const GprSample) -> Result<GapSample, Failure> {
    let s = s.as_ref().ok_or_else(|| Failure(GprStatus::NullPointer, "sample is null".into()))?;
    let id = str_arg(s.id, "sample id")?;
    let text = str_arg(s.text, "sample text")?;
    let p = str_arg(s.pronoun, "pronoun")?;
    let a = str_arg(s.a, "A")?;
    let b = str_arg(s.b, "B")?;
    GapSample::new(id, text, (p, s.pronoun_offset), (a, s.a_offset), (b, s.b_offset), false, false, "").map_err(input_err)
}

unsafe fn read_clusters(sample_id: &str, clusters: *const GprCluster, n: usize) -> Result<Vec<EvidenceCluster>, Failure> {
    if n == 0 {
        return Ok(Vec::new());
    }
    if clusters.is_null() {
        return Err(Failure(GprStatus::NullPointer, "clusters is null".into()));
    }
    std::slice::from_raw_parts(clusters, n)
        .iter()
        .map(|c| {
            let provider = str_arg(c.provider, "provider")?;
            if c.n > 0 && (c.offsets.is_null() || c.lengths.is_null()) {
                return Err(Failure(GprStatus::NullPointer, format!("{provider}: mention arrays are null")));
            }
            let spans = (0..c.n).map(|i| Span::new(*c.offsets.add(i), *c.lengths.add(i))).collect();
            Ok(EvidenceCluster::new(sample_id, provider, spans))
        })
        .collect()
}

impl GprModel {
    fn run<T>(&self, sample: &GapSample, clusters: &[EvidenceCluster], f: impl FnOnce(&Model, &ModelInput) -> Result<T, Failure>) -> Result<T, Failure> {
        let tok = tokenize(sample, &self.vocab, self.max_len).map_err(input_err)?;
        let text_len = sample.text.chars().count();
        if let Some(c) = clusters.iter().find(|c| c.mentions.iter().any(|m| m.end() > text_len)) {
            return Err(input_err(format!("{}: mention outside the text", c.provider)));
        }
        let evidence = align_evidence(clusters, sample, &tok, self.model.config.ep.keep_pronoun);
        let input = ModelInput { tok: &tok, evidence: &evidence, embeddings: None };
        f(&self.model, &input)
    }
}

/// Class probabilities (A, B, NEITHER) for one sample. `clusters` may be
/// null when `n_clusters` is zero.
///
/// # Safety
/// All pointers must be valid; `out_probs` must hold three doubles.
#[no_mangle]
pub unsafe extern "C" fn gpr_model_predict(
    model: *const GprModel,
    sample: *const GprSample,
    clusters: *const GprCluster,
    n_clusters: usize,
    out_probs: *mut f64,
) -> GprStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| Failure(GprStatus::NullPointer, "model is null".into()))?;
        if out_probs.is_null() {
            return Err(Failure(GprStatus::NullPointer, "out_probs is null".into()));
        }
        let s = read_sample(sample)?;
        let cs = read_clusters(&s.id, clusters, n_clusters)?;
        let p = m.run(&s, &cs, |model, input| model.predict(input).map_err(model_err))?;
        std::slice::from_raw_parts_mut(out_probs, 3).copy_from_slice(&p);
        Ok(())
    })
}

/// Attention trace for one sample as a JSON string, to be released with
/// [`gpr_string_free`].
///
/// # Safety
/// As for [`gpr_model_predict`]; `out_json` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gpr_model_trace_json(
    model: *const GprModel,
    sample: *const GprSample,
    clusters: *const GprCluster,
    n_clusters: usize,
    out_json: *mut *mut c_char,
) -> GprStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| Failure(GprStatus::NullPointer, "model is null".into()))?;
        if out_json.is_null() {
            return Err(Failure(GprStatus::NullPointer, "out_json is null".into()));
        }
        let s = read_sample(sample)?;
        let cs = read_clusters(&s.id, clusters, n_clusters)?;
        let t = m.run(&s, &cs, |model, input| model.predict_traced(input).map_err(model_err))?;
        let json = serde_json::to_string(&t).map_err(model_err)?;
        *out_json = CString::new(json).map_err(model_err)?.into_raw();
        Ok(())
    })
}

/// Release a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn gpr_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Score a predictions CSV (`ID,A,B,NEITHER`) against a GAP TSV.
///
/// # Safety
/// Paths must be NUL-terminated strings; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gpr_score_files(pred_csv: *const c_char, gold_tsv: *const c_char, out: *mut GprScore) -> GprStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| Failure(GprStatus::NullPointer, "out is null".into()))?;
        let pred = str_arg(pred_csv, "pred_csv")?;
        let gold = str_arg(gold_tsv, "gold_tsv")?;
        let preds = read_predictions_csv(Path::new(pred)).map_err(|e| Failure(GprStatus::Io, e.to_string()))?;
        let samples = parse_tsv(Path::new(gold)).map_err(|e| Failure(GprStatus::Io, e.to_string()))?;
        let g: Vec<Gold> = samples.iter().map(Gold::from).collect();
        let r = gap_f1(&preds, &g);
        *out = GprScore {
            f1_masculine: r.f1_m,
            f1_feminine: r.f1_f,
            bias: r.bias,
            f1_overall: r.f1_overall,
            logloss: r.logloss,
            missing: r.missing,
        };
        Ok(())
    })
}
