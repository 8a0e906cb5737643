//! C ABI over the `neurorec` compiler, simulator and interpreter.
//!
//! Every fallible function returns an [`NrStatus`]; on failure a message is
//! available from [`nr_last_error`] on the same thread. Handles returned
//! through out-pointers are owned by the caller and must be released with
//! the matching `*_free` function. Strings returned through out-pointers
//! must be released with [`nr_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use neurorec::compiler::{lower, CompileError, CompiledProgram, LoweringConfig, RunError, OUTPUT_PORT};
use neurorec::engine::{RunOutcome, RunStatus, SimConfig, DEFAULT_BIG_M, DEFAULT_MAX_STEPS};
use neurorec::murec::{eval_oracle, parse_program, EvalError, EvalResult};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NrStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// Program text or circuit JSON did not parse.
    Parse = 3,
    /// The program is ill-formed or got the wrong number of arguments.
    Arity = 4,
    /// Bad configuration, e.g. big M too small or strict mode violated.
    Config = 5,
    /// An argument value is out of range.
    Argument = 6,
    /// An index was out of range.
    OutOfRange = 7,
    /// A Rust panic was caught at the boundary.
    Internal = 99,
}

/// How a simulation ended.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NrRunStatus {
    Quiescent = 0,
    Timeout = 1,
    Fault = 2,
}

/// Size figures of a compiled program.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct NrStats {
    pub neurons: usize,
    pub synapses: usize,
    pub native_gadgets: usize,
    pub trigger_cells: usize,
    /// Output latency in steps, or -1 when it depends on the inputs.
    pub static_latency: i64,
}

/// Opaque compiled program.
pub struct NrProgram {
    inner: CompiledProgram,
}

/// Opaque result of one simulation.
pub struct NrOutcome {
    inner: RunOutcome,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: impl Into<String>) {
    let text = message.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

struct Failure(NrStatus, String);

impl From<CompileError> for Failure {
    fn from(e: CompileError) -> Self {
        let status = match e {
            CompileError::Arity(_) => NrStatus::Arity,
            _ => NrStatus::Config,
        };
        Failure(status, e.to_string())
    }
}

impl From<RunError> for Failure {
    fn from(e: RunError) -> Self {
        let status = match e {
            RunError::ArgumentCount { .. } => NrStatus::Arity,
            RunError::ArgumentTooLarge { .. } => NrStatus::Argument,
            RunError::Engine(_) => NrStatus::Internal,
        };
        Failure(status, e.to_string())
    }
}

/// Runs `body`, converting failures and panics into a status code.
fn guard(body: impl FnOnce() -> Result<(), Failure>) -> NrStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            NrStatus::Ok
        }
        Ok(Err(Failure(status, message))) => {
            set_error(message);
            status
        }
        Err(_) => {
            set_error("internal error");
            NrStatus::Internal
        }
    }
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(NrStatus::NullArgument, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(NrStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn slice<'a>(p: *const u64, len: usize) -> Result<&'a [u64], Failure> {
    match (p.is_null(), len) {
        (_, 0) => Ok(&[]),
        (true, _) => Err(Failure(NrStatus::NullArgument, "argument array is null".into())),
        (false, _) => Ok(std::slice::from_raw_parts(p, len)),
    }
}

fn null(what: &str) -> Failure {
    Failure(NrStatus::NullArgument, format!("{what} is null"))
}

fn owned_string(s: String) -> Result<*mut c_char, Failure> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| Failure(NrStatus::Internal, "string contains NUL".into()))
}

/// Message describing the last failed call on this thread, or null. The
/// pointer stays valid until the next call into this library.
#[no_mangle]
pub extern "C" fn nr_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Compiles program text. `big_m` of 0 selects the default; `strict`
/// rejects programs that need native gadgets.
///
/// # Safety
/// `source` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn nr_program_compile(
    source: *const c_char,
    big_m: i64,
    strict: bool,
    out: *mut *mut NrProgram,
) -> NrStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let source = text(source, "source")?;
        let expr = parse_program(source).map_err(|e| Failure(NrStatus::Parse, e.to_string()))?;
        let mut config = LoweringConfig::with_big_m(if big_m == 0 { DEFAULT_BIG_M } else { big_m });
        config.strict_primitive = strict;
        let inner = lower(&expr, &config)?;
        *out = Box::into_raw(Box::new(NrProgram { inner }));
        Ok(())
    })
}

/// Loads a program previously serialized with [`nr_program_to_json`].
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn nr_program_from_json(json: *const c_char, out: *mut *mut NrProgram) -> NrStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let json = text(json, "json")?;
        let inner = CompiledProgram::from_json(json).map_err(|e| Failure(NrStatus::Parse, e.to_string()))?;
        *out = Box::into_raw(Box::new(NrProgram { inner }));
        Ok(())
    })
}

/// Serializes the program (circuit plus metadata) as JSON.
///
/// # Safety
/// `program` must come from this library; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn nr_program_to_json(program: *const NrProgram, out: *mut *mut c_char) -> NrStatus {
    guard(|| {
        let program = program.as_ref().ok_or_else(|| null("program"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = owned_string(program.inner.to_json())?;
        Ok(())
    })
}

/// Number of arguments the program takes, or 0 for a null handle.
///
/// # Safety
/// `program` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn nr_program_arity(program: *const NrProgram) -> usize {
    program.as_ref().map_or(0, |p| p.inner.inputs.len())
}

/// # Safety
/// `program` must come from this library; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn nr_program_stats(program: *const NrProgram, out: *mut NrStats) -> NrStatus {
    guard(|| {
        let program = program.as_ref().ok_or_else(|| null("program"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let s = program.inner.stats;
        *out = NrStats {
            neurons: s.neurons,
            synapses: s.synapses,
            native_gadgets: s.native_gadgets,
            trigger_cells: s.trigger_cells,
            static_latency: s.static_latency.map_or(-1, |l| l as i64),
        };
        Ok(())
    })
}

/// # Safety
/// `program` must be null or an unreleased handle from this library.
#[no_mangle]
pub unsafe extern "C" fn nr_program_free(program: *mut NrProgram) {
    if !program.is_null() {
        drop(Box::from_raw(program));
    }
}

/// Simulates the program on `args[0..n_args]`, all delivered at t = 0.
/// `max_steps` of 0 selects the default budget. Timeouts and faults are
/// reported through the outcome, not the return code.
///
/// # Safety
/// `program` must come from this library, `args` must point to `n_args`
/// values (or be null when `n_args` is 0) and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn nr_program_run(
    program: *const NrProgram,
    args: *const u64,
    n_args: usize,
    max_steps: u64,
    out: *mut *mut NrOutcome,
) -> NrStatus {
    guard(|| {
        let program = program.as_ref().ok_or_else(|| null("program"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let args = slice(args, n_args)?;
        let config = SimConfig {
            max_steps: if max_steps == 0 { DEFAULT_MAX_STEPS } else { max_steps },
            ..SimConfig::default()
        };
        let inner = program.inner.run(args, config)?;
        *out = Box::into_raw(Box::new(NrOutcome { inner }));
        Ok(())
    })
}

/// # Safety
/// `outcome` must come from this library.
#[no_mangle]
pub unsafe extern "C" fn nr_outcome_status(outcome: *const NrOutcome) -> NrRunStatus {
    match outcome.as_ref().map(|o| &o.inner.status) {
        Some(RunStatus::Quiescent) => NrRunStatus::Quiescent,
        Some(RunStatus::Timeout) => NrRunStatus::Timeout,
        Some(RunStatus::Fault(_)) | None => NrRunStatus::Fault,
    }
}

/// Number of spikes on the output port.
///
/// # Safety
/// `outcome` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn nr_outcome_output_count(outcome: *const NrOutcome) -> usize {
    outcome
        .as_ref()
        .map_or(0, |o| o.inner.raster.outputs_on(OUTPUT_PORT).count())
}

/// The `index`-th output spike: its value and time. Either out-pointer
/// may be null.
///
/// # Safety
/// `outcome` must come from this library.
#[no_mangle]
pub unsafe extern "C" fn nr_outcome_output(
    outcome: *const NrOutcome,
    index: usize,
    value: *mut i64,
    time: *mut u64,
) -> NrStatus {
    guard(|| {
        let outcome = outcome.as_ref().ok_or_else(|| null("outcome"))?;
        let event = outcome
            .inner
            .raster
            .outputs_on(OUTPUT_PORT)
            .nth(index)
            .ok_or_else(|| Failure(NrStatus::OutOfRange, format!("no output spike {index}")))?;
        if let Some(v) = value.as_mut() {
            *v = event.value;
        }
        if let Some(t) = time.as_mut() {
            *t = event.time;
        }
        Ok(())
    })
}

/// Clock value when the simulation stopped.
///
/// # Safety
/// `outcome` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn nr_outcome_final_clock(outcome: *const NrOutcome) -> u64 {
    outcome.as_ref().map_or(0, |o| o.inner.final_clock)
}

/// Spike raster as CSV (`time,neuron,value,port`).
///
/// # Safety
/// Both handles must come from this library, the outcome from running
/// this program; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn nr_outcome_raster_csv(
    program: *const NrProgram,
    outcome: *const NrOutcome,
    out: *mut *mut c_char,
) -> NrStatus {
    guard(|| {
        let program = program.as_ref().ok_or_else(|| null("program"))?;
        let outcome = outcome.as_ref().ok_or_else(|| null("outcome"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = owned_string(outcome.inner.raster.to_csv(&program.inner.circuit))?;
        Ok(())
    })
}

/// # Safety
/// `outcome` must be null or an unreleased handle from this library.
#[no_mangle]
pub unsafe extern "C" fn nr_outcome_free(outcome: *mut NrOutcome) {
    if !outcome.is_null() {
        drop(Box::from_raw(outcome));
    }
}

/// Evaluates program text with the reference interpreter. On success
/// `*exhausted` tells whether the fuel ran out, in which case `*value` is
/// left untouched.
///
/// # Safety
/// `source` must be a NUL-terminated string, `args` must point to
/// `n_args` values, and `value` and `exhausted` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn nr_eval(
    source: *const c_char,
    args: *const u64,
    n_args: usize,
    fuel: u64,
    value: *mut u64,
    exhausted: *mut bool,
) -> NrStatus {
    guard(|| {
        let value = value.as_mut().ok_or_else(|| null("value"))?;
        let exhausted = exhausted.as_mut().ok_or_else(|| null("exhausted"))?;
        let expr = parse_program(text(source, "source")?).map_err(|e| Failure(NrStatus::Parse, e.to_string()))?;
        let args = slice(args, n_args)?;
        match eval_oracle(&expr, args, fuel) {
            Ok(EvalResult::Value(v)) => {
                *value = v;
                *exhausted = false;
            }
            Ok(EvalResult::FuelExhausted) => *exhausted = true,
            Err(e @ (EvalError::Arity(_) | EvalError::ArgumentCount { .. })) => {
                return Err(Failure(NrStatus::Arity, e.to_string()))
            }
            Err(e) => return Err(Failure(NrStatus::Argument, e.to_string())),
        }
        Ok(())
    })
}

/// Releases a string returned by this library.
///
/// # Safety
/// `s` must be null or a string from this library not yet released.
#[no_mangle]
pub unsafe extern "C" fn nr_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
