//! Reference interpreter.
//!
//! Programs are lowered once to a slot-resolved tree ([`compile`]) and then
//! walked. Scalars are passed by value and arrays by reference, so array
//! arguments hold every store once a call returns. Integer arithmetic wraps;
//! integer division by zero and out-of-bounds accesses are runtime errors.
//!
//! The same engine runs on the server. There, loops the dependence test
//! proved independent are split into contiguous chunks and handed to a
//! [`ParallelRunner`]; each chunk evaluates its iterations in source order,
//! so results are bit-identical to a sequential run.

pub(crate) mod compile;
mod engine;
mod memory;
mod value;

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use crate::ir::{Diagnostic, LoopId, Program, Span, ValueType};

pub use compile::CompiledProgram;
pub use engine::{CallSite, ChunkResult};
pub use memory::{Memory, PlainMemory, SharedMemory, SharedView};
pub use value::{Array, Value};

/// Upper bound on lanes per group in chunked inner-loop evaluation.
pub const MAX_LANES: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RuntimeError {
    #[error("{function}: subscript {dim} of `{access}` is {index}, outside extent {extent} (at {span})")]
    OutOfBounds { function: String, access: String, dim: usize, index: i64, extent: usize, span: Span },
    #[error("{function}: integer division by zero (at {span})")]
    DivisionByZero { function: String, span: Span },
    #[error("no function named `{0}`")]
    UnknownFunction(String),
    #[error("bad arguments for `{function}`: {message}")]
    BadArguments { function: String, message: String },
    #[error("program failed validation with {} diagnostic(s)", .0.len())]
    Invalid(Vec<Diagnostic>),
    /// Raised by a [`CallHook`], e.g. a fault reported by a remote server.
    #[error("{0}")]
    Hook(String),
}

/// What the interpreter observed during one top-level call.
#[derive(Debug, Clone, Default)]
pub struct ExecStats {
    /// Calls per function, including intercepted ones and the entry call.
    pub calls: BTreeMap<String, u64>,
    /// Iterations executed per loop, keyed by function and preorder loop id.
    /// Loops of functions that were entered but whose loops never ran appear
    /// with 0.
    pub loop_iterations: BTreeMap<(String, LoopId), u64>,
    /// Wall time of the top-level call, when a clock was supplied.
    pub wall_ns: Option<u64>,
}

impl ExecStats {
    /// Equality of everything except wall time.
    pub fn same_counts(&self, other: &ExecStats) -> bool {
        self.calls == other.calls && self.loop_iterations == other.loop_iterations
    }

    pub fn iterations(&self, function: &str, id: LoopId) -> u64 {
        self.loop_iterations.get(&(function.into(), id)).copied().unwrap_or(0)
    }
}

/// Monotonic nanosecond clock supplied by the host.
pub trait Clock {
    fn now_ns(&self) -> u64;
}

/// What a [`CallHook`] wants done with a call.
#[derive(Debug, Clone, PartialEq)]
pub enum Intercept {
    /// Run the callee's body in the interpreter.
    Proceed,
    /// The hook executed the call itself; this is its result. Array
    /// arguments must already have been written back through the site.
    Handled(Option<Value>),
}

/// Observes every call entry, including the top-level one.
pub trait CallHook {
    fn before_call(&mut self, site: &mut CallSite<'_>) -> Result<Intercept, RuntimeError>;
    fn after_call(&mut self, _callee: &str) {}
}

/// Runs independent chunks of a parallel loop. Implementations may run the
/// tasks on any threads in any order but must return results indexed by
/// task number.
pub trait ParallelRunner: Sync {
    fn workers(&self) -> usize;
    fn run(&self, tasks: usize, task: &(dyn Fn(usize) -> ChunkResult + Sync)) -> Vec<ChunkResult>;
}

/// Runs every chunk on the calling thread. Chunking still follows
/// `workers`, which makes it useful for checking schedule independence
/// without threads.
#[derive(Debug, Clone, Copy)]
pub struct SerialRunner(pub usize);

impl ParallelRunner for SerialRunner {
    fn workers(&self) -> usize {
        self.0.max(1)
    }
    fn run(&self, tasks: usize, task: &(dyn Fn(usize) -> ChunkResult + Sync)) -> Vec<ChunkResult> {
        (0..tasks).map(task).collect()
    }
}

#[derive(Default)]
pub struct CallOptions<'a> {
    pub hook: Option<&'a mut dyn CallHook>,
    pub runner: Option<&'a dyn ParallelRunner>,
    pub clock: Option<&'a dyn Clock>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub result: Option<Value>,
    pub stats: ExecStatsEq,
}

/// [`ExecStats`] wrapper whose equality ignores wall time.
#[derive(Debug, Clone, Default)]
pub struct ExecStatsEq(pub ExecStats);

impl PartialEq for ExecStatsEq {
    fn eq(&self, other: &Self) -> bool {
        self.0.same_counts(&other.0)
    }
}

impl core::ops::Deref for ExecStatsEq {
    type Target = ExecStats;
    fn deref(&self) -> &ExecStats {
        &self.0
    }
}

/// A validated program together with its lowered form.
#[derive(Debug, Clone)]
pub struct Interpreter {
    program: Program,
    code: CompiledProgram,
}

impl Interpreter {
    pub fn new(program: Program) -> Result<Self, RuntimeError> {
        let diags = crate::ir::validate(&program);
        if !diags.is_empty() {
            return Err(RuntimeError::Invalid(diags));
        }
        let code = compile::compile(&program);
        Ok(Interpreter { program, code })
    }

    pub(crate) fn from_parts(program: Program, code: CompiledProgram) -> Self {
        Interpreter { program, code }
    }

    pub fn program(&self) -> &Program {
        &self.program
    }

    /// Calls `entry` with `args`. Array arguments are updated in place.
    pub fn call(&self, entry: &str, args: &mut [Value], opts: CallOptions<'_>) -> Result<Outcome, RuntimeError> {
        let fi = self.code.func_index(entry).ok_or_else(|| RuntimeError::UnknownFunction(entry.into()))?;
        let func = &self.code.funcs[fi];
        if args.len() != func.param_types.len() {
            return Err(RuntimeError::BadArguments {
                function: entry.into(),
                message: alloc::format!("expected {} arguments, got {}", func.param_types.len(), args.len()),
            });
        }
        for (k, (a, ty)) in args.iter().zip(&func.param_types).enumerate() {
            if !a.matches(ty) {
                return Err(RuntimeError::BadArguments {
                    function: entry.into(),
                    message: alloc::format!("argument {k} is {}, expected {ty}", a.ty()),
                });
            }
        }
        let start = opts.clock.map(|c| c.now_ns());
        let (result, tally) = if opts.runner.is_some() {
            let mut shared = SharedMemory::default();
            let slots = shared_memory(&mut shared, args);
            let out = engine::invoke(&self.code, fi, &slots, &mut shared.view(), opts.hook, opts.runner)?;
            for (a, slot) in args.iter_mut().zip(&slots) {
                match (a, slot) {
                    (Value::F64Array(arr), ArgSlot::Array(id)) => arr.data = shared.take_f(*id),
                    (Value::I64Array(arr), ArgSlot::Array(id)) => arr.data = shared.take_i(*id),
                    _ => {}
                }
            }
            out
        } else {
            let (mut mem, slots) = plain_memory(args);
            engine::invoke(&self.code, fi, &slots, &mut mem, opts.hook, None)?
        };
        let mut stats = engine::into_stats(&self.code, &tally);
        stats.wall_ns = match (start, opts.clock) {
            (Some(s), Some(c)) => Some(c.now_ns().saturating_sub(s)),
            _ => None,
        };
        Ok(Outcome { result, stats: ExecStatsEq(stats) })
    }
}

/// Per-argument memory id for arrays; scalars carry their own value.
#[derive(Debug, Clone, Copy)]
pub(crate) enum ArgSlot {
    I(i64),
    F(f64),
    Array(usize),
}

fn shared_memory(shared: &mut SharedMemory, args: &[Value]) -> Vec<ArgSlot> {
    args.iter()
        .map(|a| match a {
            Value::I64(v) => ArgSlot::I(*v),
            Value::F64(v) => ArgSlot::F(*v),
            Value::F64Array(arr) => ArgSlot::Array(shared.push_f(&arr.data)),
            Value::I64Array(arr) => ArgSlot::Array(shared.push_i(&arr.data)),
        })
        .collect()
}

fn plain_memory(args: &mut [Value]) -> (PlainMemory<'_>, Vec<ArgSlot>) {
    let mut mem = PlainMemory { f: Vec::new(), i: Vec::new() };
    let mut slots = Vec::with_capacity(args.len());
    for a in args.iter_mut() {
        slots.push(match a {
            Value::I64(v) => ArgSlot::I(*v),
            Value::F64(v) => ArgSlot::F(*v),
            Value::F64Array(arr) => {
                mem.f.push(&mut arr.data);
                ArgSlot::Array(mem.f.len() - 1)
            }
            Value::I64Array(arr) => {
                mem.i.push(&mut arr.data);
                ArgSlot::Array(mem.i.len() - 1)
            }
        });
    }
    (mem, slots)
}

/// Validates `p` and runs `entry` on `args` sequentially.
pub fn run(p: &Program, entry: &str, args: &mut [Value]) -> Result<Outcome, RuntimeError> {
    Interpreter::new(p.clone())?.call(entry, args, CallOptions::default())
}

/// Type-checks a value list against declared parameter types.
pub fn args_match(args: &[Value], types: &[ValueType]) -> bool {
    args.len() == types.len() && args.iter().zip(types).all(|(a, t)| a.matches(t))
}
