//! Client-side offloading: exporting the remote part, guarding exported
//! functions in the local part, and the per-call placement decision.
//!
//! A call to an exported function goes remote iff
//! `score / bytes_transferred > c`, where array arguments are counted twice
//! (sent and returned) and a scalar result once.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::fmt;

use crate::analysis::{AliasMode, ProgramAnalysis, Scop};
use crate::interp::{CallHook, CallSite, Intercept, RuntimeError, Value};
use crate::ir::{self, Function, Program, ScalarType, ValueType, SCALAR_BYTES};
use crate::Rational;

pub const REMOTE_PART_VERSION: u32 = 1;

/// Parameter and result types of a function.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Signature {
    pub params: Vec<ValueType>,
    pub result: Option<ScalarType>,
}

impl Signature {
    pub fn of(f: &Function) -> Self {
        Signature { params: f.params.iter().map(|p| p.ty.clone()).collect(), result: f.result }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Default)]
pub struct TransferSize {
    pub bytes: u64,
}

/// Bytes moved by a remote call: scalar arguments once, arrays twice, a
/// scalar result once. Depends only on the signature; `args` must match it.
pub fn transfer_bytes(sig: &Signature, args: &[Value]) -> TransferSize {
    debug_assert!(crate::interp::args_match(args, &sig.params));
    signature_bytes(sig)
}

pub fn signature_bytes(sig: &Signature) -> TransferSize {
    let args = sig.params.iter().fold(0u64, |acc, ty| {
        let b = match ty {
            ValueType::Scalar(_) => SCALAR_BYTES,
            ValueType::Array { .. } => ty.byte_size().unwrap_or(u64::MAX).saturating_mul(2),
        };
        acc.saturating_add(b)
    });
    let result = if sig.result.is_some() { SCALAR_BYTES } else { 0 };
    TransferSize { bytes: args.saturating_add(result) }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Placement {
    Local,
    Remote,
}

impl fmt::Display for Placement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Placement::Local => "local",
            Placement::Remote => "remote",
        })
    }
}

/// A placement and the fraction `score / bytes` behind it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Decision {
    pub placement: Placement,
    pub score: Rational,
    pub bytes: u64,
}

impl Decision {
    /// `None` when `bytes` is zero (an infinite or undefined fraction).
    pub fn fraction(&self) -> Option<f64> {
        (self.bytes > 0).then(|| self.score.to_f64() / self.bytes as f64)
    }
}

/// Remote iff `score / t.bytes > c`. With zero bytes, any positive score
/// counts as an infinite fraction. `c` equal to [`Rational::MAX`] stands for
/// +∞ and keeps every call local.
pub fn decide(score: Rational, t: TransferSize, c: Rational) -> Decision {
    let remote = if c == Rational::MAX {
        false
    } else if t.bytes == 0 {
        !score.is_zero()
    } else {
        score.cmp_divided(t.bytes as u128, &c) == Ordering::Greater
    };
    Decision { placement: if remote { Placement::Remote } else { Placement::Local }, score, bytes: t.bytes }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OffloadConfig {
    pub c: Rational,
    pub server: Option<String>,
    pub connect_timeout_ms: u64,
    pub call_timeout_ms: u64,
    /// Bypasses [`decide`] for every guarded call.
    pub force: Option<Placement>,
}

impl Default for OffloadConfig {
    fn default() -> Self {
        OffloadConfig { c: Rational::ZERO, server: None, connect_timeout_ms: 5_000, call_timeout_ms: 600_000, force: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExportedFunction {
    pub function: Function,
    pub score: Rational,
    pub scops: Vec<Scop>,
}

/// The exported code fragment: functions worth accelerating plus the
/// loop-free helpers they call.
#[derive(Debug, Clone, PartialEq)]
pub struct RemotePart {
    pub version: u32,
    /// Alias assumption the SCoPs were detected under; the server re-detects
    /// with the same assumption.
    pub alias: AliasMode,
    pub functions: Vec<ExportedFunction>,
    pub helpers: Vec<Function>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BuildError {
    #[error("`{caller}` calls `{callee}`, which has loops but is not exported")]
    SplitOffload { caller: String, callee: String },
    #[error("`{0}` is not defined in the program")]
    Missing(String),
}

impl RemotePart {
    pub fn is_empty(&self) -> bool {
        self.functions.is_empty()
    }

    pub fn exported(&self, name: &str) -> Option<&ExportedFunction> {
        self.functions.iter().find(|e| e.function.name == name)
    }

    /// Exported functions and helpers as one program.
    pub fn program(&self) -> Program {
        let mut fs: Vec<Function> = self.functions.iter().map(|e| e.function.clone()).collect();
        fs.extend(self.helpers.iter().cloned());
        Program::new(fs)
    }

    pub fn to_text(&self) -> String {
        let mut out = alloc::format!("remote-part {}\nalias {}\n", self.version, self.alias);
        let source = |out: &mut String, f: &Function| {
            let text = f.to_string();
            out.push_str(&alloc::format!("source {}\n", text.lines().count()));
            out.push_str(&text);
        };
        for e in &self.functions {
            out.push_str(&alloc::format!("function {}\nscore {}\n", e.function.name, e.score));
            for s in &e.scops {
                out.push_str(&alloc::format!("scop {}\n", scop_line(s)));
            }
            source(&mut out, &e.function);
        }
        for h in &self.helpers {
            out.push_str(&alloc::format!("helper {}\n", h.name));
            source(&mut out, h);
        }
        out.push_str("end\n");
        out
    }

    pub fn from_text(text: &str) -> Result<Self, RemotePartError> {
        let mut lines = text.lines().enumerate().peekable();
        let mut next = |what: &str| -> Result<(usize, &str), RemotePartError> {
            lines.next().ok_or_else(|| RemotePartError::new(0, alloc::format!("unexpected end, expected {what}")))
        };
        let (n, header) = next("header")?;
        let version = header
            .strip_prefix("remote-part ")
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(|| RemotePartError::new(n, "expected `remote-part <version>`"))?;
        let (n, alias) = next("alias")?;
        let alias = alias
            .strip_prefix("alias ")
            .ok_or_else(|| RemotePartError::new(n, "expected `alias <mode>`"))?
            .parse()
            .map_err(|e| RemotePartError::new(n, e))?;
        let mut part = RemotePart { version, alias, functions: Vec::new(), helpers: Vec::new() };
        let mut pending: Option<(String, Rational, Vec<Scop>, bool)> = None;
        loop {
            let (n, line) = next("`end`")?;
            let (key, rest) = line.split_once(' ').unwrap_or((line, ""));
            match key {
                "end" => break,
                "function" => pending = Some((rest.into(), Rational::ZERO, Vec::new(), false)),
                "helper" => pending = Some((rest.into(), Rational::ZERO, Vec::new(), true)),
                "score" => {
                    let p = pending.as_mut().ok_or_else(|| RemotePartError::new(n, "score outside a function"))?;
                    p.1 = rest.parse().map_err(|_| RemotePartError::new(n, "bad score"))?;
                }
                "scop" => {
                    let p = pending.as_mut().ok_or_else(|| RemotePartError::new(n, "scop outside a function"))?;
                    p.2.push(parse_scop_line(rest).ok_or_else(|| RemotePartError::new(n, "bad scop descriptor"))?);
                }
                "source" => {
                    let (name, score, scops, helper) =
                        pending.take().ok_or_else(|| RemotePartError::new(n, "source without a function header"))?;
                    let count: usize = rest.parse().map_err(|_| RemotePartError::new(n, "bad line count"))?;
                    let mut src = String::new();
                    for _ in 0..count {
                        let (_, l) = next("source line")?;
                        src.push_str(l);
                        src.push('\n');
                    }
                    let mut prog = ir::parse_unchecked(&src).map_err(|e| RemotePartError::new(n, e.to_string()))?;
                    if prog.functions.len() != 1 || prog.functions[0].name != name {
                        return Err(RemotePartError::new(n, alloc::format!("source does not define exactly `{name}`")));
                    }
                    let function = prog.functions.remove(0);
                    if helper {
                        part.helpers.push(function);
                    } else {
                        part.functions.push(ExportedFunction { function, score, scops });
                    }
                }
                other => return Err(RemotePartError::new(n, alloc::format!("unknown line `{other}`"))),
            }
        }
        if pending.is_some() {
            return Err(RemotePartError::new(0, "function header without source"));
        }
        Ok(part)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("remote part line {line}: {message}")]
pub struct RemotePartError {
    pub line: usize,
    pub message: String,
}

impl RemotePartError {
    fn new(line: usize, message: impl Into<String>) -> Self {
        RemotePartError { line: line + 1, message: message.into() }
    }
}

fn join(v: &[usize]) -> String {
    if v.is_empty() {
        return "-".into();
    }
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn split(s: &str) -> Option<Vec<usize>> {
    if s == "-" {
        return Some(Vec::new());
    }
    s.split(',').map(|x| x.parse().ok()).collect()
}

/// `<path> <start> <len> <roots> <loops>`, lists comma separated, `-` empty.
fn scop_line(s: &Scop) -> String {
    alloc::format!("{} {} {} {} {}", join(&s.path), s.start, s.len, join(&s.roots), join(&s.loops))
}

fn parse_scop_line(s: &str) -> Option<Scop> {
    let mut it = s.split(' ');
    let scop = Scop {
        path: split(it.next()?)?,
        start: it.next()?.parse().ok()?,
        len: it.next()?.parse().ok()?,
        roots: split(it.next()?)?,
        loops: split(it.next()?)?,
    };
    it.next().is_none().then_some(scop)
}

/// Collects the functions scoring above zero, with their SCoPs, and the
/// loop-free helpers they reach.
pub fn build_remote_part(p: &Program, analysis: &ProgramAnalysis) -> Result<RemotePart, BuildError> {
    let mut functions = Vec::new();
    let mut exported = BTreeSet::new();
    for r in &analysis.reports {
        if r.total.is_zero() || r.scops.is_empty() {
            continue;
        }
        let f = p.function(&r.function).ok_or_else(|| BuildError::Missing(r.function.clone()))?;
        exported.insert(f.name.as_str());
        functions.push(ExportedFunction {
            function: f.clone(),
            score: r.total,
            scops: r.scops.iter().map(|s| s.scop.clone()).collect(),
        });
    }
    let mut helpers: Vec<Function> = Vec::new();
    let mut work: Vec<&Function> = functions.iter().map(|e| &e.function).collect();
    while let Some(caller) = work.pop() {
        for callee in caller.callees() {
            if exported.contains(callee) || helpers.iter().any(|h| h.name == callee) {
                continue;
            }
            let g = p.function(callee).ok_or_else(|| BuildError::Missing(callee.into()))?;
            if g.has_loops() {
                return Err(BuildError::SplitOffload { caller: caller.name.clone(), callee: callee.into() });
            }
            helpers.push(g.clone());
            work.push(p.function(callee).unwrap());
        }
    }
    // Keep program order for a stable export.
    helpers.sort_by_key(|h| p.function_index(&h.name));
    Ok(RemotePart { version: REMOTE_PART_VERSION, alias: analysis.config.alias, functions, helpers })
}

/// Placement inputs for one guarded function.
#[derive(Debug, Clone, PartialEq)]
pub struct Guard {
    pub score: Rational,
    pub signature: Signature,
    pub bytes: TransferSize,
}

/// The client's program after transformation: the original functions, with
/// every exported one carrying a guard that picks a placement per call.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalPart {
    pub program: Program,
    pub guards: BTreeMap<String, Guard>,
    pub config: OffloadConfig,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("remote part exports `{0}`, which the program does not define")]
pub struct TransformError(pub String);

pub fn transform_to_local_part(p: &Program, rp: &RemotePart, cfg: &OffloadConfig) -> Result<LocalPart, TransformError> {
    let mut guards = BTreeMap::new();
    for e in &rp.functions {
        let f = p.function(&e.function.name).ok_or_else(|| TransformError(e.function.name.clone()))?;
        let signature = Signature::of(f);
        let bytes = signature_bytes(&signature);
        guards.insert(f.name.clone(), Guard { score: e.score, signature, bytes });
    }
    Ok(LocalPart { program: p.clone(), guards, config: cfg.clone() })
}

impl LocalPart {
    /// Decision for a call to `function`, or `None` if it is not guarded.
    pub fn placement(&self, function: &str, args: &[Value]) -> Option<Decision> {
        let g = self.guards.get(function)?;
        let mut d = decide(g.score, transfer_bytes(&g.signature, args), self.config.c);
        if let Some(p) = self.config.force {
            d.placement = p;
        }
        Some(d)
    }
}

/// Result of a call executed by the server.
#[derive(Debug, Clone, PartialEq)]
pub struct RemoteReply {
    pub result: Option<Value>,
    /// Final contents of every array argument, in argument order.
    pub arrays: Vec<Value>,
    /// Server-side execution time of the call body.
    pub raw_ns: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RemoteError {
    /// The call could not be delivered or answered; it is safe to run it
    /// locally instead.
    #[error("transport: {0}")]
    Transport(String),
    /// The server ran the call and it failed.
    #[error("remote fault: {0}")]
    Fault(String),
}

pub trait RemoteCaller {
    fn call(&mut self, function: &str, args: &[Value]) -> Result<RemoteReply, RemoteError>;
}

/// One guarded call, as seen by the guard.
#[derive(Debug, Clone, PartialEq)]
pub struct CallEvent {
    pub function: String,
    pub decision: Decision,
    /// Server time for calls that completed remotely.
    pub raw_ns: Option<u64>,
    /// Set when a remote call failed in transport and ran locally.
    pub fallback: Option<String>,
}

/// The guard prologue, as a call hook. The local part is looked up afresh
/// at every call entry, so a part installed while a call runs only affects
/// calls that start afterwards.
pub struct GuardHook<'a> {
    current: &'a dyn Fn() -> Option<Arc<LocalPart>>,
    caller: &'a mut dyn RemoteCaller,
    pub events: Vec<CallEvent>,
}

impl<'a> GuardHook<'a> {
    pub fn new(current: &'a dyn Fn() -> Option<Arc<LocalPart>>, caller: &'a mut dyn RemoteCaller) -> Self {
        GuardHook { current, caller, events: Vec::new() }
    }
}

impl CallHook for GuardHook<'_> {
    fn before_call(&mut self, site: &mut CallSite<'_>) -> Result<Intercept, RuntimeError> {
        let Some(part) = (self.current)() else {
            return Ok(Intercept::Proceed);
        };
        let Some(guard) = part.guards.get(site.callee()) else {
            return Ok(Intercept::Proceed);
        };
        let mut decision = decide(guard.score, guard.bytes, part.config.c);
        if let Some(p) = part.config.force {
            decision.placement = p;
        }
        let mut event = CallEvent { function: site.callee().into(), decision, raw_ns: None, fallback: None };
        if decision.placement == Placement::Local {
            self.events.push(event);
            return Ok(Intercept::Proceed);
        }
        let args = site.args();
        match self.caller.call(site.callee(), &args) {
            Ok(reply) => {
                site.write_back(&reply.arrays)?;
                event.raw_ns = Some(reply.raw_ns);
                self.events.push(event);
                Ok(Intercept::Handled(reply.result))
            }
            Err(RemoteError::Transport(msg)) => {
                event.fallback = Some(msg);
                self.events.push(event);
                Ok(Intercept::Proceed)
            }
            Err(RemoteError::Fault(msg)) => Err(RuntimeError::Hook(alloc::format!("remote call to `{}` failed: {msg}", site.callee()))),
        }
    }
}
