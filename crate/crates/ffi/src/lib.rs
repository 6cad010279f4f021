//! C ABI over `templar-core`.
//!
//! Every fallible function returns a [`TemplarStatus`]; on failure the message
//! is available from [`templar_last_error`] on the same thread until the next
//! call. Strings handed out by the library are released with
//! [`templar_string_free`], handles with their `_free` function. Panics never
//! cross the boundary; they surface as `TEMPLAR_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::sync::Arc;

use templar::backend::{
    HashMockScorer, PlantedParams, PlantedScorer, RemoteConfig, RemoteScorer, ScoreRequest, Scorer,
};
use templar::ensemble::{ensemble_predict, EnsembleInput};
use templar::grammar::ComponentSet;
use templar::metrics;
use templar::predict::{classify, predict, Method, DEFAULT_CONTENT_FREE};
use templar::render::{render, Demonstration, Mode, PromptContext};

pub const TEMPLAR_MODE_DIRECT: u32 = 0;
pub const TEMPLAR_MODE_CHANNEL: u32 = 1;
pub const TEMPLAR_MODE_CONTENT_FREE: u32 = 2;

pub const TEMPLAR_METHOD_DIRECT: u32 = 0;
pub const TEMPLAR_METHOD_CHANNEL: u32 = 1;
pub const TEMPLAR_METHOD_CALIBRATION: u32 = 2;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TemplarStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Parse = 4,
    Backend = 5,
    Io = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

/// Opaque template grammar.
pub struct TemplarGrammar(ComponentSet);

/// Opaque scoring backend.
pub struct TemplarScorer(Arc<dyn Scorer>);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure {
    status: TemplarStatus,
    message: String,
}

impl Failure {
    fn new(status: TemplarStatus, message: impl Into<String>) -> Self {
        Self { status, message: message.into() }
    }

    fn null(name: &str) -> Self {
        Self::new(TemplarStatus::NullPointer, format!("`{name}` is null"))
    }
}

impl From<templar::Error> for Failure {
    fn from(e: templar::Error) -> Self {
        use templar::Error as E;
        let status = match &e {
            E::Backend(_) | E::InBatch { .. } => TemplarStatus::Backend,
            E::InTemplate { source, .. } if matches!(**source, E::Backend(_) | E::InBatch { .. }) => {
                TemplarStatus::Backend
            }
            E::Io { .. } => TemplarStatus::Io,
            E::GrammarParse(_) | E::Json(_) | E::Record { .. } => TemplarStatus::Parse,
            _ => TemplarStatus::InvalidArgument,
        };
        Self::new(status, e.to_string())
    }
}

impl From<templar::backend::BackendError> for Failure {
    fn from(e: templar::backend::BackendError) -> Self {
        Self::new(TemplarStatus::Backend, e.to_string())
    }
}

fn set_last_error(message: &str) {
    let c = CString::new(message.replace('\0', "\\0")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> TemplarStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => TemplarStatus::Ok,
        Ok(Err(fail)) => {
            set_last_error(&fail.message);
            fail.status
        }
        Err(_) => {
            set_last_error("internal panic");
            TemplarStatus::Panic
        }
    }
}

/// # Safety
/// `p` is null or a NUL-terminated string valid for `'a`.
unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::null(name));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Failure::new(TemplarStatus::InvalidUtf8, format!("`{name}` is not UTF-8")))
}

/// # Safety
/// `p` is null or valid for reads of `n` elements.
unsafe fn slice_arg<'a, T>(p: *const T, n: usize, name: &str) -> Result<&'a [T], Failure> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::null(name));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

/// # Safety
/// `p` is null or valid for writes of `n` elements.
unsafe fn out_slice<'a, T>(p: *mut T, n: usize, name: &str) -> Result<&'a mut [T], Failure> {
    if n == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Failure::null(name));
    }
    Ok(std::slice::from_raw_parts_mut(p, n))
}

/// # Safety
/// `p` is null or points to a live value of `T`.
unsafe fn handle<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| Failure::null(name))
}

fn out_ptr<T>(p: *mut T, name: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err(Failure::null(name))
    } else {
        Ok(())
    }
}

fn to_c_string(s: String) -> Result<*mut c_char, Failure> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| Failure::new(TemplarStatus::InvalidArgument, "string contains an interior NUL byte"))
}

/// # Safety
/// `json` is null or a NUL-terminated string.
unsafe fn demos_arg(json: *const c_char, num_classes: usize) -> Result<Vec<Demonstration>, Failure> {
    if json.is_null() {
        return Ok(Vec::new());
    }
    let demos: Vec<Demonstration> = serde_json::from_str(str_arg(json, "demos_json")?)
        .map_err(|e| Failure::new(TemplarStatus::Parse, format!("demos_json: {e}")))?;
    if let Some(d) = demos.iter().find(|d| d.class_index >= num_classes) {
        return Err(Failure::new(
            TemplarStatus::InvalidArgument,
            format!("demonstration label {} outside [0, {num_classes})", d.class_index),
        ));
    }
    Ok(demos)
}

fn mode_arg(mode: u32) -> Result<Mode, Failure> {
    match mode {
        TEMPLAR_MODE_DIRECT => Ok(Mode::Direct),
        TEMPLAR_MODE_CHANNEL => Ok(Mode::Channel),
        TEMPLAR_MODE_CONTENT_FREE => Ok(Mode::ContentFree),
        other => Err(Failure::new(TemplarStatus::InvalidArgument, format!("unknown mode {other}"))),
    }
}

fn method_arg(method: u32) -> Result<Method, Failure> {
    match method {
        TEMPLAR_METHOD_DIRECT => Ok(Method::Direct),
        TEMPLAR_METHOD_CHANNEL => Ok(Method::Channel),
        TEMPLAR_METHOD_CALIBRATION => Ok(Method::Calibration),
        other => Err(Failure::new(TemplarStatus::InvalidArgument, format!("unknown method {other}"))),
    }
}

/// Message of the last failure on this thread, or null. Owned by the library;
/// valid until the next call into it from the same thread.
#[no_mangle]
pub extern "C" fn templar_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn templar_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `s` is null or a string returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn templar_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Loads a grammar from `preset:<name>` or a JSON file path.
///
/// # Safety
/// `source` is a NUL-terminated string; `out` is valid for a write.
#[no_mangle]
pub unsafe extern "C" fn templar_grammar_load(source: *const c_char, out: *mut *mut TemplarGrammar) -> TemplarStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let g = ComponentSet::load(str_arg(source, "source")?)?;
        *out = Box::into_raw(Box::new(TemplarGrammar(g)));
        Ok(())
    })
}

/// Parses a grammar JSON document.
///
/// # Safety
/// `json` is a NUL-terminated string; `out` is valid for a write.
#[no_mangle]
pub unsafe extern "C" fn templar_grammar_from_json(
    json: *const c_char,
    out: *mut *mut TemplarGrammar,
) -> TemplarStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let g = ComponentSet::from_json(str_arg(json, "json")?)?;
        *out = Box::into_raw(Box::new(TemplarGrammar(g)));
        Ok(())
    })
}

/// # Safety
/// `g` is null or a handle from this library that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn templar_grammar_free(g: *mut TemplarGrammar) {
    if !g.is_null() {
        drop(Box::from_raw(g));
    }
}

/// Number of templates, or 0 for a null handle.
///
/// # Safety
/// `g` is null or a live grammar handle.
#[no_mangle]
pub unsafe extern "C" fn templar_grammar_template_count(g: *const TemplarGrammar) -> u64 {
    g.as_ref().map_or(0, |g| g.0.template_count())
}

/// Number of classes, or 0 for a null handle.
///
/// # Safety
/// `g` is null or a live grammar handle.
#[no_mangle]
pub unsafe extern "C" fn templar_grammar_num_classes(g: *const TemplarGrammar) -> usize {
    g.as_ref().map_or(0, |g| g.0.num_classes())
}

/// The template with id `id` as a JSON object.
///
/// # Safety
/// `g` is a live grammar handle; `out` is valid for a write.
#[no_mangle]
pub unsafe extern "C" fn templar_grammar_template_json(
    g: *const TemplarGrammar,
    id: u64,
    out: *mut *mut c_char,
) -> TemplarStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let t = handle(g, "grammar")?.0.template(id)?;
        *out = to_c_string(serde_json::to_string(&t).expect("template serializes"))?;
        Ok(())
    })
}

/// Writes `k` distinct template ids drawn with `seed` into `out_ids`.
///
/// # Safety
/// `g` is a live grammar handle; `out_ids` is valid for `k` writes.
#[no_mangle]
pub unsafe extern "C" fn templar_grammar_sample(
    g: *const TemplarGrammar,
    k: usize,
    seed: u64,
    out_ids: *mut u64,
) -> TemplarStatus {
    guard(|| {
        let ts = handle(g, "grammar")?.0.sample_templates(k, seed)?;
        let out = out_slice(out_ids, k, "out_ids")?;
        for (o, t) in out.iter_mut().zip(ts) {
            *o = t.id;
        }
        Ok(())
    })
}

/// Renders the prompt for class `class_index`. `demos_json` is null or a JSON
/// array of `{"text", "label"}` objects. Both outputs are freed with
/// [`templar_string_free`].
///
/// # Safety
/// Pointers are live handles / NUL-terminated strings / valid for a write.
#[no_mangle]
pub unsafe extern "C" fn templar_render(
    g: *const TemplarGrammar,
    template_id: u64,
    mode: u32,
    demos_json: *const c_char,
    text: *const c_char,
    class_index: usize,
    out_prefix: *mut *mut c_char,
    out_continuation: *mut *mut c_char,
) -> TemplarStatus {
    guard(|| {
        out_ptr(out_prefix, "out_prefix")?;
        out_ptr(out_continuation, "out_continuation")?;
        let g = &handle(g, "grammar")?.0;
        let t = g.template(template_id)?;
        let demos = demos_arg(demos_json, g.num_classes())?;
        let p = render(&PromptContext::new(g, &t, &demos), mode_arg(mode)?, str_arg(text, "text")?, class_index)?;
        let prefix = to_c_string(p.prefix)?;
        match to_c_string(p.continuation) {
            Ok(c) => {
                *out_prefix = prefix;
                *out_continuation = c;
                Ok(())
            }
            Err(e) => {
                drop(CString::from_raw(prefix));
                Err(e)
            }
        }
    })
}

fn new_scorer(out: *mut *mut TemplarScorer, s: Arc<dyn Scorer>) -> Result<(), Failure> {
    out_ptr(out, "out")?;
    // SAFETY: checked non-null above; caller guarantees it is writable.
    unsafe { *out = Box::into_raw(Box::new(TemplarScorer(s))) };
    Ok(())
}

/// Deterministic hash-based scorer for tests.
///
/// # Safety
/// `out` is valid for a write.
#[no_mangle]
pub unsafe extern "C" fn templar_scorer_hash_mock(out: *mut *mut TemplarScorer) -> TemplarStatus {
    guard(|| new_scorer(out, Arc::new(HashMockScorer)))
}

/// Synthetic scorer with planted template bias; `golds[i]` is the gold class
/// of example `i`.
///
/// # Safety
/// `golds` is valid for `n_golds` reads; `out` is valid for a write.
#[no_mangle]
pub unsafe extern "C" fn templar_scorer_planted(
    signal: f64,
    bias: f64,
    noise: f64,
    bias_seed: u64,
    golds: *const usize,
    n_golds: usize,
    out: *mut *mut TemplarScorer,
) -> TemplarStatus {
    guard(|| {
        let golds = slice_arg(golds, n_golds, "golds")?.to_vec();
        let params = PlantedParams { signal, bias, noise, bias_seed };
        new_scorer(out, Arc::new(PlantedScorer::new(params, golds)))
    })
}

/// Remote completions scorer. `config_json` holds the fields of the remote
/// backend config (`endpoint`, `model`, ...); omitted fields take defaults.
///
/// # Safety
/// `config_json` is a NUL-terminated string; `out` is valid for a write.
#[no_mangle]
pub unsafe extern "C" fn templar_scorer_remote(
    config_json: *const c_char,
    out: *mut *mut TemplarScorer,
) -> TemplarStatus {
    guard(|| {
        let config: RemoteConfig = serde_json::from_str(str_arg(config_json, "config_json")?)
            .map_err(|e| Failure::new(TemplarStatus::Parse, format!("config_json: {e}")))?;
        new_scorer(out, Arc::new(RemoteScorer::new(config)?))
    })
}

/// # Safety
/// `s` is null or a handle from this library that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn templar_scorer_free(s: *mut TemplarScorer) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// Log-probability of `continuation` given `prefix`.
///
/// # Safety
/// Pointers are a live handle / NUL-terminated strings / valid for a write.
#[no_mangle]
pub unsafe extern "C" fn templar_score(
    s: *const TemplarScorer,
    prefix: *const c_char,
    continuation: *const c_char,
    out: *mut f64,
) -> TemplarStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let req = ScoreRequest::new(str_arg(prefix, "prefix")?, str_arg(continuation, "continuation")?);
        *out = handle(s, "scorer")?.0.score(&req)?;
        Ok(())
    })
}

struct PredictArgs<'a> {
    grammar: &'a ComponentSet,
    scorer: &'a Arc<dyn Scorer>,
    method: Method,
    demos: Vec<Demonstration>,
    text: &'a str,
    cf_tokens: Vec<String>,
}

/// # Safety
/// As for [`templar_predict`].
unsafe fn predict_args<'a>(
    s: *const TemplarScorer,
    g: *const TemplarGrammar,
    method: u32,
    demos_json: *const c_char,
    text: *const c_char,
    cf_token: *const c_char,
) -> Result<PredictArgs<'a>, Failure> {
    let grammar = &handle(g, "grammar")?.0;
    let cf = if cf_token.is_null() { DEFAULT_CONTENT_FREE } else { str_arg(cf_token, "cf_token")? };
    Ok(PredictArgs {
        grammar,
        scorer: &handle(s, "scorer")?.0,
        method: method_arg(method)?,
        demos: demos_arg(demos_json, grammar.num_classes())?,
        text: str_arg(text, "text")?,
        cf_tokens: vec![cf.to_string()],
    })
}

fn write_probs(
    probs: &[f64],
    out_probs: *mut f64,
    capacity: usize,
    out_predicted: *mut usize,
    predicted: usize,
) -> Result<(), Failure> {
    if capacity < probs.len() {
        return Err(Failure::new(
            TemplarStatus::BufferTooSmall,
            format!("probability buffer holds {capacity} values, {} needed", probs.len()),
        ));
    }
    // SAFETY: caller guarantees `out_probs` is valid for `capacity` writes.
    unsafe { out_slice(out_probs, probs.len(), "out_probs")? }.copy_from_slice(probs);
    if !out_predicted.is_null() {
        // SAFETY: non-null and caller-provided for a write.
        unsafe { *out_predicted = predicted };
    }
    Ok(())
}

/// Predicts a label distribution for `text` under one template. `cf_token`
/// is null for the default content-free input; `example_id` is forwarded to
/// backends that model per-example behavior. Writes one probability per
/// class into `out_probs` and, when non-null, the argmax into `out_predicted`.
///
/// # Safety
/// Handles are live; strings are NUL-terminated or null where allowed;
/// `out_probs` is valid for `probs_capacity` writes.
#[no_mangle]
pub unsafe extern "C" fn templar_predict(
    s: *const TemplarScorer,
    g: *const TemplarGrammar,
    template_id: u64,
    method: u32,
    demos_json: *const c_char,
    text: *const c_char,
    cf_token: *const c_char,
    example_id: u64,
    out_probs: *mut f64,
    probs_capacity: usize,
    out_predicted: *mut usize,
) -> TemplarStatus {
    guard(|| {
        let a = predict_args(s, g, method, demos_json, text, cf_token)?;
        let t = a.grammar.template(template_id)?;
        let ctx = PromptContext::new(a.grammar, &t, &a.demos).with_example(example_id);
        let p = predict(a.method, a.scorer, &ctx, a.text, &a.cf_tokens)?;
        write_probs(p.dist.probs(), out_probs, probs_capacity, out_predicted, classify(&p.dist))
    })
}

/// Averages the distributions of `method` over the templates in `template_ids`.
///
/// # Safety
/// As for [`templar_predict`]; `template_ids` is valid for `n_templates` reads.
#[no_mangle]
pub unsafe extern "C" fn templar_ensemble_predict(
    s: *const TemplarScorer,
    g: *const TemplarGrammar,
    template_ids: *const u64,
    n_templates: usize,
    method: u32,
    demos_json: *const c_char,
    text: *const c_char,
    cf_token: *const c_char,
    example_id: u64,
    out_probs: *mut f64,
    probs_capacity: usize,
    out_predicted: *mut usize,
) -> TemplarStatus {
    guard(|| {
        let a = predict_args(s, g, method, demos_json, text, cf_token)?;
        let templates = slice_arg(template_ids, n_templates, "template_ids")?
            .iter()
            .map(|&id| a.grammar.template(id))
            .collect::<templar::Result<Vec<_>>>()?;
        let input = EnsembleInput {
            grammar: a.grammar,
            demos: &a.demos,
            test_text: a.text,
            example_id: Some(example_id),
            seed: None,
        };
        let e = ensemble_predict(a.scorer, &templates, &input, a.method, &a.cf_tokens)?;
        write_probs(e.dist.probs(), out_probs, probs_capacity, out_predicted, classify(&e.dist))
    })
}

/// Mean and sample standard deviation (0 for a single value).
///
/// # Safety
/// `xs` is valid for `n` reads; outputs are valid for writes.
#[no_mangle]
pub unsafe extern "C" fn templar_aggregate(
    xs: *const f64,
    n: usize,
    out_mean: *mut f64,
    out_std: *mut f64,
) -> TemplarStatus {
    guard(|| {
        out_ptr(out_mean, "out_mean")?;
        out_ptr(out_std, "out_std")?;
        let a = metrics::aggregate(slice_arg(xs, n, "xs")?)?;
        *out_mean = a.mean;
        *out_std = a.std;
        Ok(())
    })
}

/// Jaccard overlap of two id sets (duplicates ignored).
///
/// # Safety
/// `a`, `b` are valid for `n_a`, `n_b` reads; `out` is valid for a write.
#[no_mangle]
pub unsafe extern "C" fn templar_iou(
    a: *const u64,
    n_a: usize,
    b: *const u64,
    n_b: usize,
    out: *mut f64,
) -> TemplarStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let a = slice_arg(a, n_a, "a")?.iter().copied().collect();
        let b = slice_arg(b, n_b, "b")?.iter().copied().collect();
        *out = metrics::iou(&a, &b)?;
        Ok(())
    })
}

/// Spearman rank correlation with average ranks for ties.
///
/// # Safety
/// `a`, `b` are valid for `n` reads; `out` is valid for a write.
#[no_mangle]
pub unsafe extern "C" fn templar_spearman(a: *const f64, b: *const f64, n: usize, out: *mut f64) -> TemplarStatus {
    guard(|| {
        out_ptr(out, "out")?;
        *out = metrics::spearman(slice_arg(a, n, "a")?, slice_arg(b, n, "b")?)?;
        Ok(())
    })
}

/// Ids of the `k` best templates in ascending id order; ties at the cut go
/// to the smaller id.
///
/// # Safety
/// `ids`, `scores` are valid for `n` reads; `out_ids` for `k` writes.
#[no_mangle]
pub unsafe extern "C" fn templar_top_k(
    ids: *const u64,
    scores: *const f64,
    n: usize,
    k: usize,
    out_ids: *mut u64,
) -> TemplarStatus {
    guard(|| {
        let list: Vec<metrics::TemplateScore> = slice_arg(ids, n, "ids")?
            .iter()
            .zip(slice_arg(scores, n, "scores")?)
            .map(|(&template_id, &score)| metrics::TemplateScore { template_id, score })
            .collect();
        let top = metrics::top_k(&list, k)?;
        for (o, id) in out_slice(out_ids, k, "out_ids")?.iter_mut().zip(top) {
            *o = id;
        }
        Ok(())
    })
}

/// Scores sorted descending and divided by the maximum; writes `n` values.
///
/// # Safety
/// `xs` is valid for `n` reads; `out` for `n` writes.
#[no_mangle]
pub unsafe extern "C" fn templar_rank_curve(xs: *const f64, n: usize, out: *mut f64) -> TemplarStatus {
    guard(|| {
        let curve = metrics::rank_curve(slice_arg(xs, n, "xs")?)?;
        out_slice(out, n, "out")?.copy_from_slice(&curve);
        Ok(())
    })
}

/// Number of positions where `few_shot` strictly exceeds `zero_shot`.
///
/// # Safety
/// Inputs are valid for `n` reads; `out_wins` is valid for a write.
#[no_mangle]
pub unsafe extern "C" fn templar_count_wins(
    zero_shot: *const f64,
    few_shot: *const f64,
    n: usize,
    out_wins: *mut usize,
) -> TemplarStatus {
    guard(|| {
        out_ptr(out_wins, "out_wins")?;
        let (wins, _) =
            metrics::count_wins(slice_arg(zero_shot, n, "zero_shot")?, slice_arg(few_shot, n, "few_shot")?)?;
        *out_wins = wins;
        Ok(())
    })
}
