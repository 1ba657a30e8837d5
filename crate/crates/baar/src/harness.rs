//! Benchmark driver: runs a corpus stencil locally or through the full
//! offload pipeline and decomposes remote call time into raw execution and
//! communication.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use baar_core::analysis::{AliasMode, AnalysisConfig, DEFAULT_THRESHOLD, DEFAULT_TRIP};
use baar_core::corpus::{self, CorpusProgram};
use baar_core::interp::{self, RuntimeError, Value};
use baar_core::offload::OffloadConfig;
use baar_core::Rational;
use log::info;

use crate::runtime::{ClientRuntime, PrepareError, RunOptions};
use crate::server::{Server, ServerConfig, SessionError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Local,
    /// Remote calls, reported by server-side execution time.
    RemoteRaw,
    /// Remote calls, reported by client-side call time.
    RemoteFull,
}

impl Mode {
    pub fn is_remote(self) -> bool {
        self != Mode::Local
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Local => "local",
            Mode::RemoteRaw => "remote-raw",
            Mode::RemoteFull => "remote-full",
        })
    }
}

impl FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "local" => Ok(Mode::Local),
            "remote-raw" => Ok(Mode::RemoteRaw),
            "remote-full" => Ok(Mode::RemoteFull),
            _ => Err(format!("unknown mode `{s}` (expected local, remote-raw or remote-full)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchSpec {
    pub program: String,
    pub n: usize,
    pub steps: usize,
    pub mode: Mode,
    pub reps: usize,
    pub alias: AliasMode,
    pub c: Rational,
    pub workers: usize,
    pub vector_width: usize,
    pub threshold: u64,
    /// Server to use; remote modes start one in-process when absent.
    pub server: Option<String>,
    /// Also time local runs for the speedup columns of remote modes.
    pub baseline: bool,
}

impl BenchSpec {
    pub fn new(program: &str, n: usize, steps: usize, mode: Mode) -> Self {
        BenchSpec {
            program: program.into(),
            n,
            steps,
            mode,
            reps: 3,
            alias: AliasMode::Conservative,
            c: Rational::ZERO,
            workers: crate::exec::host_cores(),
            vector_width: 1,
            threshold: DEFAULT_THRESHOLD,
            server: None,
            baseline: true,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("unknown benchmark program `{0}` (expected jacobi2d or fdtd2d)")]
    UnknownProgram(String),
    #[error("invalid benchmark spec: {0}")]
    Spec(String),
    #[error("execution failed: {0}")]
    Runtime(#[from] RuntimeError),
    #[error("offload preparation failed: {0}")]
    Prepare(#[from] PrepareError),
    #[error("could not start a server: {0}")]
    Server(#[from] SessionError),
    #[error("output differs from the local interpreter: {0}")]
    Mismatch(String),
    #[error("remote call to `{0}` did not run remotely: {1}")]
    NotRemote(String, String),
    #[error("cannot write the report: {0}")]
    Csv(#[from] csv::Error),
}

/// One timed repetition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Repetition {
    /// Client-side time of the kernel call(s).
    pub full_ns: u64,
    /// Server-side execution time, for calls that ran remotely.
    pub raw_ns: Option<u64>,
}

impl Repetition {
    /// Marshalling and transport: full time minus raw time.
    pub fn transport_ns(&self) -> Option<u64> {
        self.raw_ns.map(|r| self.full_ns.saturating_sub(r))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub avg: f64,
    pub median: f64,
    pub min: u64,
    pub max: u64,
}

impl Summary {
    pub fn of(samples: &[u64]) -> Option<Summary> {
        if samples.is_empty() {
            return None;
        }
        let mut s = samples.to_vec();
        s.sort_unstable();
        let n = s.len();
        let median = if n % 2 == 1 { s[n / 2] as f64 } else { (s[n / 2 - 1] as f64 + s[n / 2] as f64) / 2.0 };
        let avg = s.iter().map(|&x| x as f64).sum::<f64>() / n as f64;
        Some(Summary { avg, median, min: s[0], max: s[n - 1] })
    }
}

#[derive(Debug, Clone)]
pub struct BenchReport {
    pub spec: BenchSpec,
    pub kernel: String,
    pub exported: Vec<String>,
    /// Nothing qualified for export, so remote modes ran locally.
    pub no_offload_candidates: bool,
    pub repetitions: Vec<Repetition>,
    /// Local timings of the kernel, for speedups.
    pub baseline: Vec<u64>,
}

impl BenchReport {
    pub fn full(&self) -> Summary {
        Summary::of(&self.repetitions.iter().map(|r| r.full_ns).collect::<Vec<_>>()).expect("at least one repetition")
    }

    pub fn raw(&self) -> Option<Summary> {
        let raw: Option<Vec<u64>> = self.repetitions.iter().map(|r| r.raw_ns).collect();
        Summary::of(&raw?)
    }

    pub fn transport(&self) -> Option<Summary> {
        let t: Option<Vec<u64>> = self.repetitions.iter().map(|r| r.transport_ns()).collect();
        Summary::of(&t?)
    }

    pub fn local(&self) -> Option<Summary> {
        Summary::of(&self.baseline)
    }

    /// Local average over raw average.
    pub fn raw_speedup(&self) -> Option<f64> {
        Some(self.local()?.avg / self.raw()?.avg)
    }

    /// Local average over full average; 1 for local mode by definition.
    pub fn overall_speedup(&self) -> Option<f64> {
        if self.spec.mode == Mode::Local {
            return Some(1.0);
        }
        Some(self.local()?.avg / self.full().avg)
    }

    /// Fraction of the full call time spent in raw execution.
    pub fn raw_share(&self) -> Option<f64> {
        Some(self.raw()?.avg / self.full().avg)
    }

    /// The time this report's mode is about.
    pub fn headline(&self) -> Summary {
        match self.spec.mode {
            Mode::RemoteRaw => self.raw().unwrap_or_else(|| self.full()),
            _ => self.full(),
        }
    }

    /// One row per repetition.
    pub fn write_csv(&self, path: &Path) -> Result<(), BenchError> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["program", "n", "steps", "mode", "workers", "alias", "rep", "full_ns", "raw_ns", "transport_ns", "local_ns"])?;
        let opt = |v: Option<u64>| v.map(|x| x.to_string()).unwrap_or_default();
        for (k, r) in self.repetitions.iter().enumerate() {
            w.write_record([
                self.spec.program.clone(),
                self.spec.n.to_string(),
                self.spec.steps.to_string(),
                self.spec.mode.to_string(),
                self.spec.workers.to_string(),
                self.spec.alias.to_string(),
                k.to_string(),
                r.full_ns.to_string(),
                opt(r.raw_ns),
                opt(r.transport_ns()),
                opt(self.baseline.get(k).copied()),
            ])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

fn ms(ns: f64) -> String {
    format!("{:.3}", ns / 1e6)
}

impl fmt::Display for BenchReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = &self.spec;
        writeln!(f, "{} N={} STEPS={} mode={} reps={} workers={} alias={}", s.program, s.n, s.steps, s.mode, s.reps, s.workers, s.alias)?;
        if self.no_offload_candidates {
            writeln!(f, "no offload candidates: every call ran locally")?;
        } else if s.mode.is_remote() {
            writeln!(f, "exported: {}", self.exported.join(", "))?;
        }
        writeln!(f, "{:<10} {:>12} {:>12} {:>12} {:>12}", "time (ms)", "avg", "median", "min", "max")?;
        let mut row = |name: &str, sm: Option<Summary>| match sm {
            Some(sm) => writeln!(f, "{name:<10} {:>12} {:>12} {:>12} {:>12}", ms(sm.avg), ms(sm.median), ms(sm.min as f64), ms(sm.max as f64)),
            None => Ok(()),
        };
        row(if s.mode.is_remote() { "full" } else { "local" }, Some(self.full()))?;
        if s.mode.is_remote() {
            row("raw", self.raw())?;
            row("transport", self.transport())?;
            row("local", self.local())?;
        }
        if let Some(x) = self.raw_speedup() {
            writeln!(f, "raw speedup     {x:.2}x")?;
        }
        if let Some(x) = self.overall_speedup() {
            writeln!(f, "overall speedup {x:.2}x")?;
        }
        if let Some(x) = self.raw_share() {
            writeln!(f, "raw share       {:.1}%", x * 100.0)?;
        }
        Ok(())
    }
}

fn check_outputs(expected: &(Option<Value>, Vec<Value>), got: &(Option<Value>, Vec<Value>)) -> Result<(), BenchError> {
    if expected.0 != got.0 {
        return Err(BenchError::Mismatch(format!("result {:?} instead of {:?}", got.0, expected.0)));
    }
    for (k, (e, g)) in expected.1.iter().zip(&got.1).enumerate() {
        if e != g {
            return Err(BenchError::Mismatch(format!("argument {k} differs")));
        }
    }
    Ok(())
}

fn timed_reps(rt: &ClientRuntime, prog: &CorpusProgram, reps: usize, remote: bool) -> Result<Vec<Repetition>, BenchError> {
    let mut out = Vec::with_capacity(reps);
    for _ in 0..reps {
        let mut args = prog.main_args(rt.program());
        let run = rt.run("main", &mut args, RunOptions { timed: Some(prog.kernel), observer: None })?;
        let full_ns = run.timed_ns.iter().sum();
        let kernel_events: Vec<_> = run.events.iter().filter(|e| e.function == prog.kernel).collect();
        let raw_ns = if remote {
            let mut total = Some(0);
            for e in &kernel_events {
                if let Some(why) = &e.fallback {
                    return Err(BenchError::NotRemote(prog.kernel.into(), why.clone()));
                }
                // A call the decision kept local has no raw time.
                total = total.zip(e.raw_ns).map(|(t, r)| t + r);
            }
            total.filter(|_| !kernel_events.is_empty())
        } else {
            None
        };
        out.push(Repetition { full_ns, raw_ns });
    }
    Ok(out)
}

/// Runs `spec` end to end. Outputs are checked against the plain
/// interpreter once before anything is timed.
pub fn run_benchmark(spec: &BenchSpec) -> Result<BenchReport, BenchError> {
    if spec.n < 3 {
        return Err(BenchError::Spec(format!("N must be at least 3, got {}", spec.n)));
    }
    if spec.reps == 0 {
        return Err(BenchError::Spec("at least one repetition is required".into()));
    }
    let prog = corpus::benchmark(&spec.program, spec.n, spec.steps).ok_or_else(|| BenchError::UnknownProgram(spec.program.clone()))?;
    let program = prog.parse();
    let mut oracle_args = prog.main_args(&program);
    let oracle = interp::run(&program, "main", &mut oracle_args)?;
    let expected = (oracle.result, oracle_args);

    let analysis = AnalysisConfig { threshold: spec.threshold, alias: spec.alias, default_trip: DEFAULT_TRIP, ..Default::default() };
    let local = ClientRuntime::local(program.clone(), analysis)?;
    let verify = |rt: &ClientRuntime| -> Result<(), BenchError> {
        let mut args = prog.main_args(rt.program());
        let run = rt.run("main", &mut args, RunOptions::default())?;
        check_outputs(&expected, &(run.outcome.result, args))
    };

    if !spec.mode.is_remote() {
        verify(&local)?;
        let repetitions = timed_reps(&local, &prog, spec.reps, false)?;
        let baseline = repetitions.iter().map(|r| r.full_ns).collect();
        let exported = local.wait_ready()?.exported();
        return Ok(BenchReport {
            spec: spec.clone(),
            kernel: prog.kernel.into(),
            no_offload_candidates: exported.is_empty(),
            exported,
            repetitions,
            baseline,
        });
    }

    let server = match &spec.server {
        Some(addr) => addr.clone(),
        None => {
            let cfg = ServerConfig { workers: spec.workers, vector_width: spec.vector_width };
            Server::bind("127.0.0.1:0", cfg)?.spawn().map_err(SessionError::from)?.to_string()
        }
    };
    let offload = OffloadConfig { c: spec.c, server: Some(server), ..Default::default() };
    let rt = ClientRuntime::start(program, analysis, offload)?;
    let prep = rt.wait_ready()?;
    let exported = prep.exported();
    let no_candidates = exported.is_empty();
    info!("exported {:?}", exported);
    verify(&rt)?;
    let repetitions = timed_reps(&rt, &prog, spec.reps, !no_candidates)?;
    let baseline = if spec.baseline { timed_reps(&local, &prog, spec.reps, false)?.iter().map(|r| r.full_ns).collect() } else { Vec::new() };
    Ok(BenchReport {
        spec: spec.clone(),
        kernel: prog.kernel.into(),
        exported,
        no_offload_candidates: no_candidates,
        repetitions,
        baseline,
    })
}
