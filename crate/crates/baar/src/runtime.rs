//! The client runtime: runs a program in the interpreter while a background
//! thread analyzes it, exports the remote part and, once the server is
//! ready, installs the guarded local part.

use std::sync::{Arc, Mutex, PoisonError, RwLock};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use baar_core::analysis::{analyze_program, AnalysisConfig, ProgramAnalysis};
use baar_core::interp::{CallHook, CallOptions, CallSite, Clock, Intercept, Interpreter, Outcome, RuntimeError, Value};
use baar_core::ir::Program;
use baar_core::offload::{
    build_remote_part, transform_to_local_part, BuildError, CallEvent, GuardHook, LocalPart, OffloadConfig, RemoteCaller,
    RemoteError, RemotePart, RemoteReply, TransformError,
};
use log::info;

use crate::client::Client;
use crate::exec::MonotonicClock;

#[derive(Debug, Clone, thiserror::Error)]
pub enum PrepareError {
    #[error(transparent)]
    Build(#[from] BuildError),
    #[error(transparent)]
    Transform(#[from] TransformError),
    #[error("functions were exported but no server address is configured")]
    NoServer,
    #[error("{0}")]
    Client(String),
    #[error("the preparation thread panicked")]
    Panicked,
}

/// What the background preparation produced.
#[derive(Debug, Clone)]
pub struct Preparation {
    pub analysis: ProgramAnalysis,
    pub remote_part: RemotePart,
    /// Schedule summary from READY; `None` when nothing was exported.
    pub server_schedule: Option<String>,
}

impl Preparation {
    pub fn exported(&self) -> Vec<String> {
        self.remote_part.functions.iter().map(|e| e.function.name.clone()).collect()
    }
}

enum Prep {
    Running(JoinHandle<Result<Preparation, PrepareError>>),
    Done(Result<Arc<Preparation>, PrepareError>),
}

type Installed = Arc<RwLock<Option<Arc<LocalPart>>>>;

pub struct ClientRuntime {
    interp: Interpreter,
    installed: Installed,
    caller: Arc<Mutex<Option<Client>>>,
    prep: Mutex<Prep>,
    clock: MonotonicClock,
}

/// Result of one top-level run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub outcome: Outcome,
    /// Every call the guard saw.
    pub events: Vec<CallEvent>,
    /// Client-side wall time of each call to the timed function.
    pub timed_ns: Vec<u64>,
}

#[derive(Default)]
pub struct RunOptions<'a> {
    /// Function whose calls are timed individually.
    pub timed: Option<&'a str>,
    /// Called with the callee name at every call entry, before the guard.
    pub observer: Option<&'a mut dyn FnMut(&str)>,
}

impl ClientRuntime {
    /// Validates `program` and starts preparing its offload in the
    /// background. Calls run locally until the local part is installed.
    pub fn start(program: Program, analysis: AnalysisConfig, offload: OffloadConfig) -> Result<Self, RuntimeError> {
        let interp = Interpreter::new(program.clone())?;
        let installed: Installed = Arc::default();
        let caller: Arc<Mutex<Option<Client>>> = Arc::default();
        let handle = {
            let (installed, caller) = (installed.clone(), caller.clone());
            thread::Builder::new()
                .name("baar-prepare".into())
                .spawn(move || prepare(&program, &analysis, &offload, &installed, &caller))
                .map_err(|e| RuntimeError::Hook(format!("cannot start the preparation thread: {e}")))?
        };
        Ok(ClientRuntime { interp, installed, caller, prep: Mutex::new(Prep::Running(handle)), clock: MonotonicClock::default() })
    }

    /// A runtime that never offloads. The analysis still runs, so
    /// [`wait_ready`](Self::wait_ready) reports what would be exported.
    pub fn local(program: Program, analysis: AnalysisConfig) -> Result<Self, RuntimeError> {
        let interp = Interpreter::new(program.clone())?;
        let report = analyze_program(&program, &analysis);
        let prep = build_remote_part(&program, &report)
            .map(|remote_part| Arc::new(Preparation { analysis: report, remote_part, server_schedule: None }))
            .map_err(PrepareError::from);
        Ok(ClientRuntime {
            interp,
            installed: Arc::default(),
            caller: Arc::default(),
            prep: Mutex::new(Prep::Done(prep)),
            clock: MonotonicClock::default(),
        })
    }

    pub fn program(&self) -> &Program {
        self.interp.program()
    }

    /// Blocks until preparation has finished, successfully or not.
    pub fn wait_ready(&self) -> Result<Arc<Preparation>, PrepareError> {
        let mut prep = self.prep.lock().unwrap_or_else(PoisonError::into_inner);
        let done = match std::mem::replace(&mut *prep, Prep::Done(Err(PrepareError::Panicked))) {
            Prep::Running(handle) => handle.join().unwrap_or(Err(PrepareError::Panicked)).map(Arc::new),
            Prep::Done(r) => r,
        };
        *prep = Prep::Done(done.clone());
        done
    }

    pub fn local_part(&self) -> Option<Arc<LocalPart>> {
        self.installed.read().unwrap_or_else(PoisonError::into_inner).clone()
    }

    /// Publishes a local part. Calls already executing are unaffected.
    pub fn install(&self, part: Option<LocalPart>) {
        *self.installed.write().unwrap_or_else(PoisonError::into_inner) = part.map(Arc::new);
    }

    pub fn run(&self, entry: &str, args: &mut [Value], opts: RunOptions<'_>) -> Result<RunOutcome, RuntimeError> {
        let current = || self.local_part();
        let mut caller = SharedCaller(&self.caller);
        let mut hook = RunHook {
            guard: GuardHook::new(&current, &mut caller),
            timed: opts.timed,
            observer: opts.observer,
            clock: &self.clock,
            started: None,
            spans: Vec::new(),
        };
        let outcome = self.interp.call(entry, args, CallOptions { hook: Some(&mut hook), runner: None, clock: Some(&self.clock) })?;
        Ok(RunOutcome { outcome, events: hook.guard.events, timed_ns: hook.spans })
    }
}

fn prepare(
    program: &Program,
    cfg: &AnalysisConfig,
    offload: &OffloadConfig,
    installed: &Installed,
    caller: &Mutex<Option<Client>>,
) -> Result<Preparation, PrepareError> {
    let analysis = analyze_program(program, cfg);
    let remote_part = build_remote_part(program, &analysis)?;
    if remote_part.is_empty() {
        info!("no offload candidates; running locally");
        return Ok(Preparation { analysis, remote_part, server_schedule: None });
    }
    let addr = offload.server.as_deref().ok_or(PrepareError::NoServer)?;
    let mut client = Client::connect(
        addr,
        Duration::from_millis(offload.connect_timeout_ms),
        Duration::from_millis(offload.call_timeout_ms),
    )
    .map_err(|e| PrepareError::Client(e.to_string()))?;
    let schedule = client.prepare(&remote_part).map_err(|e| PrepareError::Client(e.to_string()))?;
    let local = transform_to_local_part(program, &remote_part, offload)?;
    *caller.lock().unwrap_or_else(PoisonError::into_inner) = Some(client);
    *installed.write().unwrap_or_else(PoisonError::into_inner) = Some(Arc::new(local));
    info!("local part installed; server schedule: {}", schedule.replace('\n', " | "));
    Ok(Preparation { analysis, remote_part, server_schedule: Some(schedule) })
}

/// Forwards remote calls to the runtime's connection, if it has one.
struct SharedCaller<'a>(&'a Mutex<Option<Client>>);

impl RemoteCaller for SharedCaller<'_> {
    fn call(&mut self, function: &str, args: &[Value]) -> Result<RemoteReply, RemoteError> {
        match self.0.lock().unwrap_or_else(PoisonError::into_inner).as_mut() {
            Some(client) => client.call(function, args),
            None => Err(RemoteError::Transport("not connected".into())),
        }
    }
}

struct RunHook<'g, 'o> {
    guard: GuardHook<'g>,
    timed: Option<&'o str>,
    observer: Option<&'o mut dyn FnMut(&str)>,
    clock: &'g MonotonicClock,
    started: Option<u64>,
    spans: Vec<u64>,
}

impl CallHook for RunHook<'_, '_> {
    fn before_call(&mut self, site: &mut CallSite<'_>) -> Result<Intercept, RuntimeError> {
        if let Some(observe) = self.observer.as_mut() {
            observe(site.callee());
        }
        let timing = self.timed == Some(site.callee());
        if timing {
            self.started = Some(self.clock.now_ns());
        }
        let action = self.guard.before_call(site)?;
        if timing && matches!(action, Intercept::Handled(_)) {
            self.stop();
        }
        Ok(action)
    }

    fn after_call(&mut self, callee: &str) {
        self.guard.after_call(callee);
        if self.timed == Some(callee) {
            self.stop();
        }
    }
}

impl RunHook<'_, '_> {
    fn stop(&mut self) {
        if let Some(s) = self.started.take() {
            self.spans.push(self.clock.now_ns() - s);
        }
    }
}
