//! C ABI over the `adaswitch` crate.
//!
//! Models and traces are opaque handles owned by the caller and released
//! with their `_free` function. Every fallible call returns an
//! [`AdaswitchStatus`]; on failure the message is available from
//! [`adaswitch_last_error`] on the same thread. Strings returned by this
//! library are freed with [`adaswitch_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use adaswitch::corpus::{Example, Vocab};
use adaswitch::divergence::{sequence_divergence, token_divergence, DivergenceKind, DivergenceMetric};
use adaswitch::model::{next_dist, LanguageModel, ProbDist, Role, SamplingConfig, TabularLM};
use adaswitch::policies::{GenerationTrace, Source};
use adaswitch::rng::substream;
use adaswitch::switching::{self, SwitchConfig};
use adaswitch::{Error, TokenId};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdaswitchStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Contract = 4,
    Io = 5,
    Serialization = 6,
    Budget = 7,
    BufferTooSmall = 8,
    Panic = 9,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdaswitchMetric {
    ForwardKl = 0,
    ReverseKl = 1,
    Jsd = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdaswitchRole {
    Teacher = 0,
    Student = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdaswitchSource {
    Student = 0,
    Teacher = 1,
    GroundTruth = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaswitchSampling {
    pub temperature: f64,
    pub top_p: f64,
    pub greedy: bool,
}

/// Switching parameters for [`adaswitch_generate`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaswitchSwitchParams {
    pub window: usize,
    pub multiplier: f64,
    pub metric: AdaswitchMetric,
    pub max_len: usize,
    pub student_sampling: AdaswitchSampling,
    pub teacher_sampling: AdaswitchSampling,
}

/// Opaque tabular language model.
pub struct AdaswitchModel {
    inner: TabularLM,
}

/// Opaque generation trace.
pub struct AdaswitchTrace {
    inner: GenerationTrace,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<String>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(message));
}

fn status_of(error: &Error) -> AdaswitchStatus {
    match error {
        Error::Config { .. } | Error::UnknownKeys(_) => AdaswitchStatus::Config,
        Error::Contract(_) => AdaswitchStatus::Contract,
        Error::Budget { .. } => AdaswitchStatus::Budget,
        Error::Io { .. } | Error::OutputExists(_) => AdaswitchStatus::Io,
        Error::Json(_) | Error::Csv(_) => AdaswitchStatus::Serialization,
    }
}

struct Failure(AdaswitchStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(AdaswitchStatus::NullPointer, format!("{what} is null"))
}

fn invalid(message: impl Into<String>) -> Failure {
    Failure(AdaswitchStatus::InvalidArgument, message.into())
}

/// Runs `f`, converting errors and panics into a status and last-error.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> AdaswitchStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => AdaswitchStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_error(message);
            status
        }
        Err(_) => {
            set_error("panic inside adaswitch".to_string());
            AdaswitchStatus::Panic
        }
    }
}

unsafe fn slice<'a, T>(ptr: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

unsafe fn path_arg(path: *const c_char) -> Result<PathBuf, Failure> {
    if path.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(path).to_str().map_err(|_| invalid("path is not UTF-8"))?;
    Ok(PathBuf::from(s))
}

unsafe fn model_ref<'a>(model: *const AdaswitchModel, what: &str) -> Result<&'a TabularLM, Failure> {
    model.as_ref().map(|m| &m.inner).ok_or_else(|| null(what))
}

unsafe fn trace_ref<'a>(trace: *const AdaswitchTrace) -> Result<&'a GenerationTrace, Failure> {
    trace.as_ref().map(|t| &t.inner).ok_or_else(|| null("trace"))
}

unsafe fn write_out<T>(out: *mut T, value: T, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(value);
    Ok(())
}

fn metric(kind: AdaswitchMetric) -> DivergenceMetric {
    DivergenceMetric::new(match kind {
        AdaswitchMetric::ForwardKl => DivergenceKind::ForwardKl,
        AdaswitchMetric::ReverseKl => DivergenceKind::ReverseKl,
        AdaswitchMetric::Jsd => DivergenceKind::Jsd,
    })
}

fn sampling(s: AdaswitchSampling) -> SamplingConfig {
    if s.greedy {
        SamplingConfig::greedy()
    } else {
        SamplingConfig::new(s.temperature, s.top_p)
    }
}

fn into_c_string(s: String) -> *mut c_char {
    CString::new(s).map_or(std::ptr::null_mut(), CString::into_raw)
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn adaswitch_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL if none.
/// Free with [`adaswitch_string_free`].
#[no_mangle]
pub extern "C" fn adaswitch_last_error() -> *mut c_char {
    LAST_ERROR.with(|e| e.borrow().clone()).map_or(std::ptr::null_mut(), into_c_string)
}

/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn adaswitch_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Creates a model with small random logits drawn from `seed`.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn adaswitch_model_new_random(
    vocab_size: u32,
    order: usize,
    role: AdaswitchRole,
    seed: u64,
    out: *mut *mut AdaswitchModel,
) -> AdaswitchStatus {
    guard(|| {
        let vocab = Vocab::new(vocab_size)?;
        let role = match role {
            AdaswitchRole::Teacher => Role::Teacher,
            AdaswitchRole::Student => Role::Student,
        };
        let inner = TabularLM::random(vocab, order, role, seed)?;
        write_out(out, Box::into_raw(Box::new(AdaswitchModel { inner })), "out")
    })
}

/// Loads a JSON checkpoint.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn adaswitch_model_load(path: *const c_char, out: *mut *mut AdaswitchModel) -> AdaswitchStatus {
    guard(|| {
        let inner = TabularLM::load_json(&path_arg(path)?)?;
        write_out(out, Box::into_raw(Box::new(AdaswitchModel { inner })), "out")
    })
}

/// Writes a JSON checkpoint.
///
/// # Safety
/// `model` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn adaswitch_model_save(model: *const AdaswitchModel, path: *const c_char) -> AdaswitchStatus {
    guard(|| {
        model_ref(model, "model")?.save_json(&path_arg(path)?)?;
        Ok(())
    })
}

/// # Safety
/// `model` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn adaswitch_model_free(model: *mut AdaswitchModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Vocabulary size and the reserved BOS/EOS/PAD ids.
///
/// # Safety
/// `model` must be a live handle; outputs must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn adaswitch_model_vocab(
    model: *const AdaswitchModel,
    size: *mut u32,
    bos: *mut u32,
    eos: *mut u32,
    pad: *mut u32,
) -> AdaswitchStatus {
    guard(|| {
        let v = *model_ref(model, "model")?.vocab();
        write_out(size, v.size, "size")?;
        write_out(bos, v.bos, "bos")?;
        write_out(eos, v.eos, "eos")?;
        write_out(pad, v.pad, "pad")
    })
}

/// Next-token distribution after `context` under `sampling`, written to
/// `probs[0..vocab_size]`.
///
/// # Safety
/// `context` must hold `context_len` ids; `probs` must hold `probs_len`
/// doubles.
#[no_mangle]
pub unsafe extern "C" fn adaswitch_model_next_dist(
    model: *const AdaswitchModel,
    context: *const u32,
    context_len: usize,
    sampling_params: AdaswitchSampling,
    probs: *mut f64,
    probs_len: usize,
) -> AdaswitchStatus {
    guard(|| {
        let m = model_ref(model, "model")?;
        let context = slice(context, context_len, "context")?;
        if context.iter().any(|&t| !m.vocab().contains(t)) {
            return Err(invalid("context token outside the vocabulary"));
        }
        let s = sampling(sampling_params);
        s.validate("sampling")?;
        let dist = next_dist(m, context, &s);
        if probs_len < dist.len() {
            return Err(Failure(AdaswitchStatus::BufferTooSmall, format!("need {} doubles", dist.len())));
        }
        if probs.is_null() {
            return Err(null("probs"));
        }
        std::ptr::copy_nonoverlapping(dist.as_slice().as_ptr(), probs, dist.len());
        Ok(())
    })
}

/// Divergence between two next-token distributions of length `len`.
///
/// # Safety
/// `teacher` and `student` must each hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn adaswitch_token_divergence(
    kind: AdaswitchMetric,
    teacher: *const f64,
    student: *const f64,
    len: usize,
    out: *mut f64,
) -> AdaswitchStatus {
    guard(|| {
        let t = ProbDist::new(slice(teacher, len, "teacher")?.to_vec())?;
        let s = ProbDist::new(slice(student, len, "student")?.to_vec())?;
        write_out(out, token_divergence(&metric(kind), &t, &s)?, "out")
    })
}

/// Mean token divergence along `y` after `prompt`.
///
/// # Safety
/// Handles must be live; arrays must hold the stated number of ids.
#[no_mangle]
pub unsafe extern "C" fn adaswitch_sequence_divergence(
    kind: AdaswitchMetric,
    teacher: *const AdaswitchModel,
    student: *const AdaswitchModel,
    prompt: *const u32,
    prompt_len: usize,
    y: *const u32,
    y_len: usize,
    out: *mut f64,
) -> AdaswitchStatus {
    guard(|| {
        let t = model_ref(teacher, "teacher")?;
        let s = model_ref(student, "student")?;
        let prompt = slice(prompt, prompt_len, "prompt")?;
        let y = slice(y, y_len, "y")?;
        write_out(out, sequence_divergence(&metric(kind), t, s, prompt, y)?, "out")
    })
}

/// Generates one trace with adaptive switching. Randomness comes from a
/// substream of `seed`, so equal inputs give equal traces.
///
/// # Safety
/// Handles must be live; `prompt` must hold `prompt_len` ids; `out` must be
/// valid for writes.
#[no_mangle]
pub unsafe extern "C" fn adaswitch_generate(
    student: *const AdaswitchModel,
    teacher: *const AdaswitchModel,
    prompt: *const u32,
    prompt_len: usize,
    params: AdaswitchSwitchParams,
    seed: u64,
    out: *mut *mut AdaswitchTrace,
) -> AdaswitchStatus {
    guard(|| {
        let s = model_ref(student, "student")?;
        let t = model_ref(teacher, "teacher")?;
        let prompt = slice(prompt, prompt_len, "prompt")?;
        if prompt.is_empty() {
            return Err(invalid("prompt is empty"));
        }
        let example = Example { id: "ffi".to_string(), prompt: prompt.to_vec(), target: vec![t.vocab().eos] };
        let cfg = SwitchConfig {
            window: params.window,
            multiplier: params.multiplier,
            metric: metric(params.metric),
            max_len: params.max_len,
        };
        let student_sampling = sampling(params.student_sampling);
        let teacher_sampling = sampling(params.teacher_sampling);
        student_sampling.validate("student_sampling")?;
        teacher_sampling.validate("teacher_sampling")?;
        let mut rng = substream(seed, &["ffi", "generate"]);
        let inner =
            switching::adaswitch_generate(s, t, &example, &student_sampling, &teacher_sampling, &cfg, &mut rng)?;
        write_out(out, Box::into_raw(Box::new(AdaswitchTrace { inner })), "out")
    })
}

/// # Safety
/// `trace` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn adaswitch_trace_free(trace: *mut AdaswitchTrace) {
    if !trace.is_null() {
        drop(Box::from_raw(trace));
    }
}

/// Number of generated tokens.
///
/// # Safety
/// `trace` must be a live handle; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn adaswitch_trace_len(trace: *const AdaswitchTrace, out: *mut usize) -> AdaswitchStatus {
    guard(|| write_out(out, trace_ref(trace)?.tokens.len(), "out"))
}

/// Copies tokens and their sources into caller buffers of `cap` entries.
/// Either buffer may be NULL to skip it.
///
/// # Safety
/// Non-null buffers must hold `cap` entries.
#[no_mangle]
pub unsafe extern "C" fn adaswitch_trace_tokens(
    trace: *const AdaswitchTrace,
    tokens: *mut u32,
    sources: *mut AdaswitchSource,
    cap: usize,
) -> AdaswitchStatus {
    guard(|| {
        let t = trace_ref(trace)?;
        let n = t.tokens.len();
        if cap < n {
            return Err(Failure(AdaswitchStatus::BufferTooSmall, format!("need {n} entries")));
        }
        if !tokens.is_null() {
            std::ptr::copy_nonoverlapping(t.tokens.as_ptr(), tokens, n);
        }
        if !sources.is_null() {
            for (i, s) in t.sources.iter().enumerate() {
                sources.add(i).write(match s {
                    Source::Student => AdaswitchSource::Student,
                    Source::Teacher => AdaswitchSource::Teacher,
                    Source::GroundTruth => AdaswitchSource::GroundTruth,
                });
            }
        }
        Ok(())
    })
}

/// 1-based switch position, or 0 when the trace never switched.
///
/// # Safety
/// `trace` must be a live handle; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn adaswitch_trace_switch_index(
    trace: *const AdaswitchTrace,
    out: *mut usize,
) -> AdaswitchStatus {
    guard(|| write_out(out, trace_ref(trace)?.switch_index().unwrap_or(0), "out"))
}

/// Forward passes spent by each model while generating.
///
/// # Safety
/// `trace` must be a live handle; outputs valid for writes.
#[no_mangle]
pub unsafe extern "C" fn adaswitch_trace_calls(
    trace: *const AdaswitchTrace,
    student_calls: *mut u64,
    teacher_calls: *mut u64,
) -> AdaswitchStatus {
    guard(|| {
        let calls = trace_ref(trace)?.calls;
        write_out(student_calls, calls.student, "student_calls")?;
        write_out(teacher_calls, calls.teacher, "teacher_calls")
    })
}

/// Trace as a JSON object. Free with [`adaswitch_string_free`].
///
/// # Safety
/// `trace` must be a live handle; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn adaswitch_trace_to_json(
    trace: *const AdaswitchTrace,
    out: *mut *mut c_char,
) -> AdaswitchStatus {
    guard(|| {
        let json = serde_json::to_string(trace_ref(trace)?).map_err(Error::from)?;
        write_out(out, into_c_string(json), "out")
    })
}

// Keep TokenId and the C id type in step.
const _: () = assert!(std::mem::size_of::<TokenId>() == std::mem::size_of::<u32>());
