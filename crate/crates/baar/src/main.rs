use std::path::PathBuf;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use baar::exec::host_cores;
use baar::harness::{run_benchmark, BenchSpec, Mode};
use baar::runtime::{ClientRuntime, RunOptions};
use baar::server::{Server, ServerConfig};
use baar_core::analysis::{analyze_program, AliasMode, AnalysisConfig, Weights, DEFAULT_THRESHOLD, DEFAULT_TRIP};
use baar_core::corpus;
use baar_core::interp::Value;
use baar_core::ir::{parse_program, Program, ScalarType, ValueType};
use baar_core::offload::{OffloadConfig, Placement};
use baar_core::proto::DEFAULT_PORT;
use baar_core::Rational;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "baar", version, about = "Offload hot loops of affine programs to a parallel server")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the hotspot score of every function.
    Score {
        #[command(flatten)]
        source: Source,
        #[command(flatten)]
        analysis: AnalysisOpts,
    },
    /// Run an acceleration server.
    Serve {
        #[arg(long, default_value_t = DEFAULT_PORT)]
        port: u16,
        #[arg(long, default_value = "0.0.0.0")]
        bind: String,
        /// Worker threads; defaults to the number of logical cores.
        #[arg(long)]
        workers: Option<usize>,
        /// Lane-group width for independent innermost loops; 1 is off.
        #[arg(long, default_value_t = 1)]
        vector_width: usize,
    },
    /// Run a program, offloading exported functions when a server is given.
    Run {
        #[command(flatten)]
        source: Source,
        #[arg(long, default_value = "main")]
        entry: String,
        /// Scalar arguments of the entry function in order; arrays start zeroed.
        #[arg(long = "arg", allow_hyphen_values = true)]
        args: Vec<String>,
        #[command(flatten)]
        analysis: AnalysisOpts,
        #[command(flatten)]
        offload: OffloadOpts,
    },
    /// Benchmark a stencil locally or through the offload pipeline.
    Bench {
        #[arg(long, default_value = "jacobi2d")]
        program: String,
        #[arg(long, default_value_t = 256)]
        n: usize,
        #[arg(long, default_value_t = 100)]
        steps: usize,
        #[arg(long, default_value = "local")]
        mode: Mode,
        #[arg(long, default_value_t = 3)]
        reps: usize,
        #[arg(long, default_value_t = AliasMode::Conservative)]
        alias: AliasMode,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long, default_value_t = 1)]
        vector_width: usize,
        #[arg(long, default_value_t = Rational::ZERO)]
        c: Rational,
        #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
        threshold: u64,
        /// Use this server instead of starting one in-process.
        #[arg(long)]
        server: Option<String>,
        /// Skip the local runs behind the speedup figures.
        #[arg(long)]
        no_baseline: bool,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

/// A `.bir` file or a corpus program.
#[derive(Args)]
struct Source {
    #[arg(conflicts_with = "program")]
    file: Option<PathBuf>,
    /// Corpus program instead of a file.
    #[arg(long)]
    program: Option<String>,
    #[arg(long, default_value_t = 64)]
    n: usize,
    #[arg(long, default_value_t = 10)]
    steps: usize,
}

impl Source {
    /// The program and, for corpus programs, default scalar arguments.
    fn load(&self) -> Result<(Program, Vec<i64>)> {
        if let Some(path) = &self.file {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let p = parse_program(&text).with_context(|| format!("parsing {}", path.display()))?;
            return Ok((p, Vec::new()));
        }
        let name = self.program.as_deref().context("give a .bir file or --program")?;
        let prog = corpus::benchmark(name, self.n, self.steps)
            .or_else(|| corpus::crafted(self.n, self.steps).into_iter().find(|c| c.name == name))
            .with_context(|| format!("unknown corpus program `{name}`"))?;
        Ok((prog.parse(), prog.scalars.clone()))
    }
}

#[derive(Args)]
struct AnalysisOpts {
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    threshold: u64,
    #[arg(long, default_value_t = Rational::ONE)]
    c_iops: Rational,
    #[arg(long, default_value_t = Rational::ONE)]
    c_flops: Rational,
    #[arg(long, default_value_t = AliasMode::Conservative)]
    alias: AliasMode,
    #[arg(long, default_value_t = DEFAULT_TRIP)]
    default_trip: u64,
}

impl AnalysisOpts {
    fn config(&self) -> AnalysisConfig {
        AnalysisConfig {
            threshold: self.threshold,
            weights: Weights { c_iops: self.c_iops, c_flops: self.c_flops },
            alias: self.alias,
            default_trip: self.default_trip,
        }
    }
}

#[derive(Args)]
struct OffloadOpts {
    #[arg(long, default_value_t = Rational::ZERO)]
    c: Rational,
    /// host:port of an acceleration server; without one everything runs locally.
    #[arg(long)]
    server: Option<String>,
    #[arg(long, conflicts_with = "force_remote")]
    force_local: bool,
    #[arg(long)]
    force_remote: bool,
    #[arg(long, default_value_t = 5_000)]
    connect_timeout_ms: u64,
    #[arg(long, default_value_t = 600_000)]
    call_timeout_ms: u64,
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Score { source, analysis } => score(&source, &analysis),
        Command::Serve { port, bind, workers, vector_width } => {
            let cfg = ServerConfig { workers: workers.unwrap_or_else(host_cores), vector_width };
            Server::bind((bind.as_str(), port), cfg)?.run()?;
            Ok(())
        }
        Command::Run { source, entry, args, analysis, offload } => run(&source, &entry, &args, &analysis, &offload),
        Command::Bench { program, n, steps, mode, reps, alias, workers, vector_width, c, threshold, server, no_baseline, csv } => {
            let spec = BenchSpec {
                reps,
                alias,
                c,
                workers: workers.unwrap_or_else(host_cores),
                vector_width,
                threshold,
                server,
                baseline: !no_baseline,
                ..BenchSpec::new(&program, n, steps, mode)
            };
            let report = run_benchmark(&spec)?;
            print!("{report}");
            if let Some(path) = csv {
                report.write_csv(&path)?;
            }
            Ok(())
        }
    }
}

fn score(source: &Source, opts: &AnalysisOpts) -> Result<()> {
    let (p, _) = source.load()?;
    let analysis = analyze_program(&p, &opts.config());
    println!("{:<20} {:>10} {:>9} {:>5} {:>12}", "function", "max freq", "candidate", "scops", "score");
    for r in &analysis.reports {
        println!("{:<20} {:>10} {:>9} {:>5} {:>12}", r.function, r.max_freq, r.candidate, r.scops.len(), r.total);
        for (k, s) in r.scops.iter().enumerate() {
            for l in &s.loops {
                println!(
                    "  scop {k} loop {:<3} iops {:<4} flops {:<4} freq {:<10} score {}",
                    l.loop_id, l.counts.iops, l.counts.flops, l.freq, l.score
                );
            }
        }
    }
    Ok(())
}

fn entry_args(p: &Program, entry: &str, given: &[String], defaults: &[i64]) -> Result<Vec<Value>> {
    let f = p.function(entry).with_context(|| format!("no function `{entry}`"))?;
    let scalars = f.params.iter().filter(|q| !q.ty.is_array()).count();
    if !given.is_empty() && given.len() != scalars {
        bail!("`{entry}` takes {scalars} scalar arguments, got {}", given.len());
    }
    let mut k = 0;
    f.params
        .iter()
        .map(|q| match &q.ty {
            ValueType::Scalar(ty) => {
                let text = given.get(k).cloned().or_else(|| defaults.get(k).map(|v| v.to_string()));
                k += 1;
                let text = text.with_context(|| format!("missing value for `{}`", q.name))?;
                Ok(match ty {
                    ScalarType::I64 => Value::I64(text.parse().with_context(|| format!("`{}` expects an i64", q.name))?),
                    ScalarType::F64 => Value::F64(text.parse().with_context(|| format!("`{}` expects an f64", q.name))?),
                })
            }
            ty => Ok(Value::zeros(ty)),
        })
        .collect()
}

fn run(source: &Source, entry: &str, given: &[String], analysis: &AnalysisOpts, offload: &OffloadOpts) -> Result<()> {
    let (p, defaults) = source.load()?;
    let mut args = entry_args(&p, entry, given, &defaults)?;
    let force = match (offload.force_local, offload.force_remote) {
        (true, _) => Some(Placement::Local),
        (_, true) => Some(Placement::Remote),
        _ => None,
    };
    let cfg = OffloadConfig {
        c: offload.c,
        server: offload.server.clone(),
        connect_timeout_ms: offload.connect_timeout_ms,
        call_timeout_ms: offload.call_timeout_ms,
        force,
    };
    let rt = if cfg.server.is_some() {
        let rt = ClientRuntime::start(p, analysis.config(), cfg)?;
        match rt.wait_ready() {
            Ok(prep) if prep.exported().is_empty() => println!("exported: nothing"),
            Ok(prep) => println!("exported: {}", prep.exported().join(", ")),
            Err(e) => log::warn!("offload disabled, running locally: {e}"),
        }
        rt
    } else {
        ClientRuntime::local(p, analysis.config())?
    };
    let out = rt.run(entry, &mut args, RunOptions::default())?;
    for e in &out.events {
        let how = match (&e.fallback, e.raw_ns) {
            (Some(why), _) => format!("local after transport failure: {why}"),
            (None, Some(ns)) => format!("remote, raw {:.3} ms", ns as f64 / 1e6),
            (None, None) => "local".into(),
        };
        println!("call {} -> {} (score {}, {} bytes): {how}", e.function, e.decision.placement, e.decision.score, e.decision.bytes);
    }
    match out.outcome.result {
        Some(v) => println!("result: {}", baar_core::proto::marshal_value(&v)),
        None => println!("result: void"),
    }
    if let Some(ns) = out.outcome.stats.wall_ns {
        println!("wall time: {:.3} ms", Duration::from_nanos(ns).as_secs_f64() * 1e3);
    }
    Ok(())
}
