//! Acceptance suite. Prints one PASS, FAIL or SKIP line per criterion and
//! exits non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::time::Instant;

use baar::exec::host_cores;
use baar::harness::{run_benchmark, BenchSpec, Mode};
use baar::runtime::{ClientRuntime, RunOptions};
use baar::server::{Server, ServerConfig};
use baar_core::analysis::{analyze_program, AliasMode, AnalysisConfig, Weights, DEFAULT_TRIP};
use baar_core::corpus;
use baar_core::interp::{self, Array, Value};
use baar_core::ir::{parse_program, ScalarType, ValueType};
use baar_core::offload::{decide, transfer_bytes, OffloadConfig, Placement, Signature, TransferSize};
use baar_core::proto::{self, marshal_value, unmarshal_value, CallRequest};
use baar_core::server::{check_loop_parallel, AccessKind, Basis};
use baar_core::Rational;
use num_bigint::BigInt;
use num_rational::BigRational;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

enum Verdict {
    Pass(String),
    Fail(String),
    Skip(String),
}

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Verdict);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("oracle equivalence", || done(oracle_equivalence())),
        ("score formula", || done(score_formula())),
        ("placement decision", || done(placement_decision())),
        ("transfer size", || done(transfer_size())),
        ("alias hint", || done(alias_hint())),
        ("parallel benefit", parallel_benefit),
        ("raw vs full decomposition", || done(raw_vs_full())),
        ("marshalling round trip", || done(marshalling())),
        ("dependence verdicts", || done(dependence_verdicts())),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        let verdict = check();
        let secs = start.elapsed().as_secs_f64();
        let (tag, detail) = match verdict {
            Verdict::Pass(d) => ("PASS", d),
            Verdict::Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Verdict::Skip(d) => ("SKIP", d),
        };
        println!("{tag} {name}: {detail} ({secs:.1}s)");
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}

fn done(r: Check) -> Verdict {
    match r {
        Ok(d) => Verdict::Pass(d),
        Err(d) => Verdict::Fail(d),
    }
}

fn spawn_server(workers: usize, vector_width: usize) -> SocketAddr {
    Server::bind("127.0.0.1:0", ServerConfig { workers, vector_width }).unwrap().spawn().unwrap()
}

fn oracle_equivalence() -> Check {
    let (n, steps) = (64, 10);
    let analysis = AnalysisConfig { threshold: 1000, alias: AliasMode::Ignore, ..Default::default() };
    let servers: Vec<(usize, SocketAddr)> =
        [(1, 1), (2, 1), (4, 4), (8, 4)].iter().map(|&(w, lanes)| (w, spawn_server(w, lanes))).collect();
    let programs = corpus::all(n, steps);
    let mut remote_calls = 0;
    for prog in &programs {
        let p = prog.parse();
        let mut expected_args = prog.main_args(&p);
        let expected = interp::run(&p, "main", &mut expected_args).map_err(|e| format!("{}: {e}", prog.name))?;
        for (workers, addr) in &servers {
            let cfg = OffloadConfig { server: Some(addr.to_string()), ..Default::default() };
            let rt = ClientRuntime::start(p.clone(), analysis, cfg).map_err(|e| e.to_string())?;
            let prep = rt.wait_ready().map_err(|e| format!("{}: {e}", prog.name))?;
            ensure(prep.remote_part.exported(prog.kernel).is_some(), || format!("{}: kernel not exported", prog.name))?;
            let mut args = prog.main_args(&p);
            let out = rt.run("main", &mut args, RunOptions::default()).map_err(|e| format!("{}: {e}", prog.name))?;
            let remote = out.events.iter().filter(|e| e.raw_ns.is_some()).count();
            ensure(remote > 0, || format!("{} with {workers} workers: nothing ran remotely", prog.name))?;
            remote_calls += remote;
            ensure(out.outcome.result == expected.result && args == expected_args, || {
                format!("{} with {workers} workers differs from the interpreter", prog.name)
            })?;
        }
    }
    Ok(format!(
        "{} programs x workers 1/2/4/8 bit-identical over {remote_calls} remote calls (N={n}, STEPS={steps})",
        programs.len()
    ))
}

fn big(r: Rational) -> BigRational {
    BigRational::new(BigInt::from(r.numer()), BigInt::from(r.denom()))
}

fn random_rational(rng: &mut StdRng, max_num: u128, max_den: u128) -> Rational {
    Rational::new(rng.gen_range(0..=max_num), rng.gen_range(1..=max_den))
}

/// A function of loop nests with known per-body operation counts.
struct ScoredFunction {
    source: String,
    /// (iops, flops, frequency) per loop in preorder.
    loops: Vec<(u64, u64, u64)>,
}

fn scored_function(rng: &mut StdRng) -> ScoredFunction {
    let mut source = String::from("func f(n: i64, A: f64[4]) {\n  let k = 0\n");
    let mut loops = Vec::new();
    let mut fresh = 0;
    for _ in 0..rng.gen_range(1..=3) {
        let depth = rng.gen_range(1..=3);
        let mut freq = 1u64;
        let mut closers = Vec::new();
        for d in 0..depth {
            let indent = "  ".repeat(d + 1);
            let (hi, trip) = if rng.gen_bool(0.3) {
                ("n".to_string(), DEFAULT_TRIP)
            } else {
                let t = rng.gen_range(0..7u64);
                (t.to_string(), t)
            };
            fresh += 1;
            source.push_str(&format!("{indent}loop i{fresh} in [0, {hi}) step 1 {{\n"));
            freq *= trip;
            let (iops, flops) = (rng.gen_range(0..4u64), rng.gen_range(0..4u64));
            for _ in 0..flops {
                source.push_str(&format!("{indent}  A[0] = A[0] + 1.5\n"));
            }
            for _ in 0..iops {
                source.push_str(&format!("{indent}  k = k + 1\n"));
            }
            loops.push((iops, flops, freq));
            closers.push(format!("{indent}}}\n"));
        }
        while let Some(c) = closers.pop() {
            source.push_str(&c);
        }
    }
    source.push_str("}\n");
    ScoredFunction { source, loops }
}

fn score_formula() -> Check {
    // Worked example: one loop, 1 integer op, 2 float ops, frequency 100.
    let worked = "func f(n: i64, A: f64[4]) {\n  let k = 0\n  loop i in [0, n) step 1 {\n    k = k + 1\n    A[0] = A[0] * 2.0 + 1.0\n  }\n}\n";
    let p = parse_program(worked).map_err(|e| e.to_string())?;
    let cfg = AnalysisConfig { threshold: 0, alias: AliasMode::Ignore, ..Default::default() };
    let a = analyze_program(&p, &cfg);
    let r = a.report("f").unwrap();
    let l = &r.scops[0].loops[0];
    ensure((l.counts.iops, l.counts.flops, l.freq) == (1, 2, 100), || format!("worked example inputs {l:?}"))?;
    ensure(r.total == Rational::from(300u64), || format!("worked example scored {}", r.total))?;

    let mut rng = StdRng::seed_from_u64(0x5c0e);
    let cases = 300;
    for case in 0..cases {
        let g = scored_function(&mut rng);
        let p = parse_program(&g.source).map_err(|e| format!("{e}\n{}", g.source))?;
        let w1 = Weights { c_iops: random_rational(&mut rng, 20, 6), c_flops: random_rational(&mut rng, 20, 6) };
        let w2 = Weights { c_iops: random_rational(&mut rng, 20, 6), c_flops: random_rational(&mut rng, 20, 6) };
        let k = random_rational(&mut rng, 9, 4);
        let score = |w: Weights| {
            let a = analyze_program(&p, &AnalysisConfig { weights: w, ..cfg });
            a.report("f").unwrap().clone()
        };
        let r1 = score(w1);

        // Independent evaluation from the generator's own bookkeeping.
        let expected: BigRational = g
            .loops
            .iter()
            .map(|&(i, f, q)| {
                (big(w1.c_iops) * BigInt::from(i) + big(w1.c_flops) * BigInt::from(f)) * BigInt::from(q)
            })
            .sum();
        ensure(big(r1.total) == expected, || format!("case {case}: total {} expected {expected}\n{}", r1.total, g.source))?;

        // Sum structure: loops add up to SCoP subtotals, subtotals to the total.
        let mut per_loop = BTreeMap::new();
        let mut sum_scops = BigRational::from_integer(0.into());
        for s in &r1.scops {
            let sub: BigRational = s.loops.iter().map(|l| big(l.score)).sum();
            ensure(sub == big(s.subtotal), || format!("case {case}: subtotal mismatch"))?;
            sum_scops += sub;
            for l in &s.loops {
                per_loop.insert(l.loop_id, l.score);
            }
        }
        ensure(sum_scops == big(r1.total), || format!("case {case}: SCoP sum mismatch"))?;
        ensure(per_loop.len() == g.loops.len(), || format!("case {case}: {} loops scored, {} generated", per_loop.len(), g.loops.len()))?;

        // Additive and homogeneous in the weights.
        let r2 = score(w2);
        let sum = score(Weights { c_iops: w1.c_iops.saturating_add(w2.c_iops), c_flops: w1.c_flops.saturating_add(w2.c_flops) });
        ensure(big(sum.total) == big(r1.total) + big(r2.total), || format!("case {case}: not additive in weights"))?;
        let scaled = score(Weights { c_iops: w1.c_iops.saturating_mul(k), c_flops: w1.c_flops.saturating_mul(k) });
        ensure(big(scaled.total) == big(r1.total) * big(k), || format!("case {case}: not homogeneous in weights"))?;
    }
    Ok(format!("worked example = 300; {cases} generated functions match the independent sum, additivity and scaling"))
}

fn placement_oracle(score: Rational, bytes: u64, c: Rational) -> Placement {
    let remote = if c == Rational::MAX {
        false
    } else if bytes == 0 {
        score.numer() > 0
    } else {
        BigInt::from(score.numer()) * BigInt::from(c.denom())
            > BigInt::from(c.numer()) * BigInt::from(score.denom()) * BigInt::from(bytes)
    };
    if remote {
        Placement::Remote
    } else {
        Placement::Local
    }
}

fn placement_decision() -> Check {
    let mut rng = StdRng::seed_from_u64(0xdec1de);
    let mut triples = Vec::new();
    for k in 0..4000 {
        let score = match k % 4 {
            0 => random_rational(&mut rng, u64::MAX as u128, u32::MAX as u128),
            1 => random_rational(&mut rng, 2000, 3),
            2 => Rational::ZERO,
            _ => Rational::new(rng.gen::<u128>() >> 1, rng.gen_range(1..=u64::MAX as u128)),
        };
        let bytes = match rng.gen_range(0..4) {
            0 => 0,
            1 => rng.gen_range(1..64),
            2 => rng.gen::<u64>(),
            _ => rng.gen_range(1..1_000_000),
        };
        let c = match rng.gen_range(0..6) {
            0 => Rational::ZERO,
            1 => Rational::MAX,
            2 => random_rational(&mut rng, 10, 10),
            _ => random_rational(&mut rng, u64::MAX as u128, u64::MAX as u128),
        };
        triples.push((score, bytes, c));
    }
    // Exact ties: score / bytes == c must stay local.
    for _ in 0..200 {
        let bytes = rng.gen_range(1..10_000u64);
        let c = random_rational(&mut rng, 1000, 50);
        triples.push((c.saturating_mul(Rational::from(bytes)), bytes, c));
    }
    let mut ties = 0;
    for &(score, bytes, c) in &triples {
        let d = decide(score, TransferSize { bytes }, c);
        let want = placement_oracle(score, bytes, c);
        ensure(d.placement == want, || format!("decide({score}, {bytes}, {c}) = {} expected {want}", d.placement))?;
        if bytes > 0 && big(score) == big(c) * BigInt::from(bytes) {
            ties += 1;
            ensure(d.placement == Placement::Local, || format!("tie ({score}, {bytes}, {c}) went remote"))?;
        }
    }
    let mut pairs = 0;
    for w in triples.windows(2) {
        let ((s1, b1, c1), (s2, _, _)) = (w[0], w[1]);
        let at = |s, b, c| decide(s, TransferSize { bytes: b }, c).placement;
        let (lo, hi) = if s1 <= s2 { (s1, s2) } else { (s2, s1) };
        ensure(!(at(lo, b1, c1) == Placement::Remote && at(hi, b1, c1) == Placement::Local), || "not monotone in score".into())?;
        let b2 = b1.saturating_add(rng.gen_range(0..1000));
        ensure(!(at(s1, b1, c1) == Placement::Local && at(s1, b2, c1) == Placement::Remote), || "not monotone in bytes".into())?;
        let c2 = c1.saturating_add(random_rational(&mut rng, 100, 7));
        ensure(!(at(s1, b1, c1) == Placement::Local && at(s1, b1, c2) == Placement::Remote), || "raising c made a call remote".into())?;
        pairs += 1;
    }
    Ok(format!("{} triples match the big-integer oracle ({ties} exact ties kept local); monotone on {pairs} pairs", triples.len()))
}

fn random_type(rng: &mut StdRng) -> ValueType {
    let elem = if rng.gen_bool(0.5) { ScalarType::I64 } else { ScalarType::F64 };
    if rng.gen_bool(0.5) {
        ValueType::Scalar(elem)
    } else {
        let shape: Vec<usize> = (0..rng.gen_range(1..=3)).map(|_| rng.gen_range(1..=12)).collect();
        ValueType::array(elem, &shape)
    }
}

fn random_f64(rng: &mut StdRng) -> f64 {
    let bits = match rng.gen_range(0..8) {
        0 => 0x7ff0_0000_0000_0000 | rng.gen_range(1..1u64 << 52) | ((rng.gen::<u64>() & 1) << 63),
        1 => rng.gen_range(1..1u64 << 52) | ((rng.gen::<u64>() & 1) << 63),
        2 => [0u64, 1 << 63, 0x7ff0_0000_0000_0000, 0xfff0_0000_0000_0000, 1, 0x7fef_ffff_ffff_ffff][rng.gen_range(0..6)],
        _ => rng.gen(),
    };
    f64::from_bits(bits)
}

fn random_i64(rng: &mut StdRng) -> i64 {
    match rng.gen_range(0..4) {
        0 => [i64::MIN, i64::MAX, 0, -1, i64::MIN + 1][rng.gen_range(0..5)],
        1 => rng.gen_range(-1000..1000),
        _ => rng.gen(),
    }
}

fn random_value(rng: &mut StdRng, ty: &ValueType) -> Value {
    match ty {
        ValueType::Scalar(ScalarType::I64) => Value::I64(random_i64(rng)),
        ValueType::Scalar(ScalarType::F64) => Value::F64(random_f64(rng)),
        ValueType::Array { elem, shape } => {
            let n = shape.iter().product();
            match elem {
                ScalarType::I64 => Value::I64Array(Array::new(shape.clone(), (0..n).map(|_| random_i64(rng)).collect()).unwrap()),
                ScalarType::F64 => Value::F64Array(Array::new(shape.clone(), (0..n).map(|_| random_f64(rng)).collect()).unwrap()),
            }
        }
    }
}

fn transfer_size() -> Check {
    let mut rng = StdRng::seed_from_u64(0x517e);
    let cases = 2000;
    for case in 0..cases {
        let params: Vec<ValueType> = (0..rng.gen_range(0..6)).map(|_| random_type(&mut rng)).collect();
        let result = match rng.gen_range(0..3) {
            0 => None,
            1 => Some(ScalarType::I64),
            _ => Some(ScalarType::F64),
        };
        // Independent fold: every argument once, arrays once more, then the result.
        let mut expected = 0u64;
        for ty in &params {
            let elems: u64 = match ty {
                ValueType::Scalar(_) => 1,
                ValueType::Array { shape, .. } => shape.iter().map(|&e| e as u64).product(),
            };
            expected += 8 * elems;
            if ty.is_array() {
                expected += 8 * elems;
            }
        }
        if result.is_some() {
            expected += 8;
        }
        let sig = Signature { params: params.clone(), result };
        for _ in 0..3 {
            let args: Vec<Value> = params.iter().map(|t| random_value(&mut rng, t)).collect();
            let got = transfer_bytes(&sig, &args).bytes;
            ensure(got == expected, || format!("case {case}: {got} bytes, expected {expected} for {params:?} -> {result:?}"))?;
        }
    }
    Ok(format!("{cases} random signatures x 3 argument sets match the fold"))
}

fn alias_hint() -> Check {
    let spec = |alias| BenchSpec { reps: 1, alias, baseline: false, workers: 2, ..BenchSpec::new("fdtd2d", 32, 4, Mode::RemoteFull) };
    let conservative = run_benchmark(&spec(AliasMode::Conservative)).map_err(|e| e.to_string())?;
    ensure(conservative.no_offload_candidates && conservative.exported.is_empty(), || {
        format!("conservative aliasing exported {:?}", conservative.exported)
    })?;
    ensure(conservative.raw().is_none(), || "conservative run reported remote time".into())?;
    let ignore = run_benchmark(&spec(AliasMode::Ignore)).map_err(|e| e.to_string())?;
    ensure(ignore.exported == ["fdtd_2d"], || format!("ignore exported {:?}", ignore.exported))?;
    ensure(ignore.raw().is_some(), || "the kernel did not run remotely under ignore".into())?;
    Ok("conservative: 0 functions exported, all local; ignore: fdtd_2d exported and executed remotely".into())
}

fn parallel_benefit() -> Verdict {
    let cores = host_cores();
    if cores < 4 {
        return Verdict::Skip(format!("host has {cores} logical core(s); needs at least 4"));
    }
    let run = |workers| {
        let spec = BenchSpec {
            reps: 5,
            alias: AliasMode::Ignore,
            workers,
            baseline: false,
            ..BenchSpec::new("jacobi2d", 512, 200, Mode::RemoteRaw)
        };
        run_benchmark(&spec).map(|r| r.raw().map(|s| s.median))
    };
    match (run(4), run(1)) {
        (Ok(Some(four)), Ok(Some(one))) => {
            let ratio = four / one;
            let detail = format!("median raw {:.0} ms with 4 workers vs {:.0} ms with 1 (ratio {ratio:.2})", four / 1e6, one / 1e6);
            if ratio <= 0.6 {
                Verdict::Pass(detail)
            } else {
                Verdict::Fail(detail)
            }
        }
        (Err(e), _) | (_, Err(e)) => Verdict::Fail(e.to_string()),
        _ => Verdict::Fail("no remote timings".into()),
    }
}

fn raw_vs_full() -> Check {
    let n = 256;
    let mut shares = Vec::new();
    for steps in [50, 500] {
        let spec = BenchSpec { reps: 3, alias: AliasMode::Ignore, baseline: false, ..BenchSpec::new("jacobi2d", n, steps, Mode::RemoteFull) };
        let r = run_benchmark(&spec).map_err(|e| e.to_string())?;
        let raw = r.raw().ok_or("no remote timings")?;
        let full = r.full();
        ensure(full.median >= raw.median, || format!("STEPS={steps}: full {} < raw {}", full.median, raw.median))?;
        ensure(r.repetitions.iter().all(|x| x.raw_ns.unwrap() <= x.full_ns), || format!("STEPS={steps}: a repetition has raw > full"))?;
        shares.push((steps, raw.median / full.median, full.median, raw.median));
    }
    let detail = shares
        .iter()
        .map(|(s, share, full, raw)| format!("STEPS={s}: full {:.1} ms, raw {:.1} ms, share {:.2}%", full / 1e6, raw / 1e6, share * 100.0))
        .collect::<Vec<_>>()
        .join("; ");
    ensure(shares[1].1 > shares[0].1, || format!("raw share did not increase: {detail}"))?;
    Ok(detail)
}

fn marshalling() -> Check {
    let mut rng = StdRng::seed_from_u64(0xf10a7);
    let count = 10_000;
    let mut batch = Vec::new();
    for k in 0..count {
        let ty = random_type(&mut rng);
        let v = random_value(&mut rng, &ty);
        let text = marshal_value(&v);
        let back = unmarshal_value(&text, &ty).map_err(|e| format!("value {k} `{text}`: {e}"))?;
        ensure(back == v, || format!("value {k} did not round-trip: `{text}`"))?;
        batch.push(v);
        if batch.len() == 16 {
            // The same values inside a framed CALL message.
            let req = CallRequest { function: "f".into(), args: std::mem::take(&mut batch) };
            let frame = proto::encode(&req.to_message()).map_err(|e| e.to_string())?;
            let (m, used) = proto::decode(&frame).map_err(|e| e.to_string())?;
            ensure(used == frame.len(), || "frame length mismatch".into())?;
            let again = CallRequest::from_message(&m).map_err(|e| e.to_string())?;
            ensure(again == req, || format!("CALL round trip failed near value {k}"))?;
        }
    }
    Ok(format!("{count} random values (NaN payloads, -0.0, subnormals, extreme i64) round-trip bit-exactly, alone and framed"))
}

/// Access trace entry: array, cell, write, value of the tested index.
type Access = (&'static str, Vec<i64>, bool, i64);

struct LoopCase {
    name: &'static str,
    body: &'static str,
    trace: fn() -> Vec<Access>,
}

const DEP_CASES: [LoopCase; 10] = [
    LoopCase {
        name: "copy",
        body: "loop i in [0, 16) step 1 {\n  B[i] = A[i] + 1.0\n}",
        trace: || (0..16).flat_map(|i| [("A", vec![i], false, i), ("B", vec![i], true, i)]).collect(),
    },
    LoopCase {
        name: "elementwise 2d",
        body: "loop i in [0, 8) step 1 {\n  loop j in [0, 8) step 1 {\n    C[i][j] = M[i][j] * N[j][i]\n  }\n}",
        trace: || {
            let mut t = Vec::new();
            for i in 0..8 {
                for j in 0..8 {
                    t.extend([("M", vec![i, j], false, i), ("N", vec![j, i], false, i), ("C", vec![i, j], true, i)]);
                }
            }
            t
        },
    },
    LoopCase {
        name: "even writes odd reads",
        body: "loop i in [0, 16) step 2 {\n  A[i] = A[i + 1] * 2.0\n}",
        trace: || (0..16).step_by(2).flat_map(|i| [("A", vec![i + 1], false, i), ("A", vec![i], true, i)]).collect(),
    },
    LoopCase {
        name: "same-iteration update",
        body: "loop i in [0, 8) step 1 {\n  A[2 * i] = A[2 * i] + 1.0\n}",
        trace: || (0..8).flat_map(|i| [("A", vec![2 * i], false, i), ("A", vec![2 * i], true, i)]).collect(),
    },
    LoopCase {
        name: "lower from upper triangle",
        body: "loop i in [0, 8) step 1 {\n  loop j in [0, i) step 1 {\n    M[i][j] = M[j][i]\n  }\n}",
        trace: || {
            let mut t = Vec::new();
            for i in 0..8 {
                for j in 0..i {
                    t.extend([("M", vec![j, i], false, i), ("M", vec![i, j], true, i)]);
                }
            }
            t
        },
    },
    LoopCase {
        name: "recurrence",
        body: "loop i in [1, 16) step 1 {\n  A[i] = A[i - 1] + 1.0\n}",
        trace: || (1..16).flat_map(|i| [("A", vec![i - 1], false, i), ("A", vec![i], true, i)]).collect(),
    },
    LoopCase {
        name: "column accumulation",
        body: "loop i in [0, 8) step 1 {\n  loop j in [0, 8) step 1 {\n    B[j] = B[j] + M[i][j]\n  }\n}",
        trace: || {
            let mut t = Vec::new();
            for i in 0..8 {
                for j in 0..8 {
                    t.extend([("B", vec![j], false, i), ("M", vec![i, j], false, i), ("B", vec![j], true, i)]);
                }
            }
            t
        },
    },
    LoopCase {
        name: "reversal",
        body: "loop i in [0, 15) step 1 {\n  A[i] = A[15 - i]\n}",
        trace: || (0..15).flat_map(|i| [("A", vec![15 - i], false, i), ("A", vec![i], true, i)]).collect(),
    },
    LoopCase {
        name: "single-cell reduction",
        body: "loop i in [0, 8) step 1 {\n  A[0] = A[0] + f64(i)\n}",
        trace: || (0..8).flat_map(|i| [("A", vec![0], false, i), ("A", vec![0], true, i)]).collect(),
    },
    LoopCase {
        name: "in-place transpose",
        body: "loop i in [0, 8) step 1 {\n  loop j in [0, 8) step 1 {\n    M[i][j] = M[j][i] + 1.0\n  }\n}",
        trace: || {
            let mut t = Vec::new();
            for i in 0..8 {
                for j in 0..8 {
                    t.extend([("M", vec![j, i], false, i), ("M", vec![i, j], true, i)]);
                }
            }
            t
        },
    },
];

/// Whether two different iterations touch one cell with at least one write.
fn carried(trace: &[Access]) -> bool {
    let mut cells: BTreeMap<(&str, &[i64]), Vec<_>> = BTreeMap::new();
    for (a, cell, w, it) in trace {
        cells.entry((a, cell)).or_default().push((*w, *it));
    }
    cells.values().any(|acc| acc.iter().any(|&(w1, i1)| acc.iter().any(|&(w2, i2)| i1 != i2 && (w1 || w2))))
}

fn dependence_verdicts() -> Check {
    let mut summary = Vec::new();
    let (mut parallel, mut sequential) = (0, 0);
    for case in &DEP_CASES {
        let indented: String = case.body.lines().map(|l| format!("  {l}\n")).collect();
        let src = format!("func k(A: f64[32], B: f64[32], M: f64[8][8], N: f64[8][8], C: f64[8][8]) {{\n{indented}}}\n");
        let p = parse_program(&src).map_err(|e| format!("{}: {e}", case.name))?;
        let v = check_loop_parallel(p.function("k").unwrap(), 0).map_err(|e| format!("{}: {e}", case.name))?;
        let trace = (case.trace)();
        let expect_parallel = !carried(&trace);
        ensure(v.parallel == expect_parallel, || format!("{}: verdict {} but enumeration says {}", case.name, v.parallel, expect_parallel))?;
        ensure(v.basis == Basis::Exhaustive || v.basis == Basis::Symbolic, || format!("{}: basis {}", case.name, v.basis))?;
        if v.parallel {
            parallel += 1;
            ensure(v.witness.is_none(), || format!("{}: witness on a parallel verdict", case.name))?;
        } else {
            sequential += 1;
            let w = v.witness.as_ref().ok_or_else(|| format!("{}: no witness", case.name))?;
            ensure(w.confirms(), || format!("{}: witness `{w}` does not confirm", case.name))?;
            // The witness must also be a real pair of accesses in the trace.
            let at = |inst: &baar_core::server::AccessInstance| {
                inst.iteration.iter().find(|(n, _)| *n == w.loop_index).map(|(_, v)| *v)
            };
            let (i1, i2) = (at(&w.first).ok_or("witness lacks the index")?, at(&w.second).ok_or("witness lacks the index")?);
            let seen = |write: bool, it: i64| trace.iter().any(|(a, c, wr, i)| *a == w.array && *c == w.cell && *wr == write && *i == it);
            ensure(
                i1 != i2
                    && seen(w.first.kind == AccessKind::Write, i1)
                    && seen(w.second.kind == AccessKind::Write, i2),
                || format!("{}: witness `{w}` is not in the access trace", case.name),
            )?;
            summary.push(format!("{}: {w}", case.name));
        }
    }
    ensure(parallel == 5 && sequential == 5, || format!("{parallel} parallel, {sequential} carried"))?;
    Ok(format!("5 parallel and 5 carried loops match enumeration; witnesses: {}", summary.join("; ")))
}
