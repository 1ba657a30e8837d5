use std::process::Command;

use baar::harness::{run_benchmark, BenchError, BenchSpec, Mode, Summary};
use baar_core::analysis::AliasMode;
use proptest::prelude::*;

#[test]
fn local_mode_is_its_own_baseline() {
    let spec = BenchSpec { reps: 3, ..BenchSpec::new("jacobi2d", 24, 4, Mode::Local) };
    let r = run_benchmark(&spec).unwrap();
    assert_eq!(r.repetitions.len(), 3);
    assert!(r.repetitions.iter().all(|x| x.raw_ns.is_none() && x.full_ns > 0));
    assert_eq!(r.overall_speedup(), Some(1.0));
    assert!(r.raw().is_none());
    // The default analysis assumes aliasing, so Jacobi is not exported.
    assert!(r.no_offload_candidates);
}

#[test]
fn remote_full_decomposes_call_time() {
    let spec = BenchSpec { reps: 2, alias: AliasMode::Ignore, workers: 2, ..BenchSpec::new("jacobi2d", 32, 6, Mode::RemoteFull) };
    let r = run_benchmark(&spec).unwrap();
    assert_eq!(r.exported, ["jacobi_2d"]);
    assert!(!r.no_offload_candidates);
    for rep in &r.repetitions {
        let raw = rep.raw_ns.unwrap();
        assert!(raw <= rep.full_ns);
        assert_eq!(rep.transport_ns(), Some(rep.full_ns - raw));
    }
    let (full, raw) = (r.full(), r.raw().unwrap());
    assert!(full.min as f64 <= full.avg && full.avg <= full.max as f64);
    assert!(r.raw_share().unwrap() <= 1.0);
    assert_eq!(r.baseline.len(), 2);
    assert!(r.overall_speedup().unwrap() <= r.raw_speedup().unwrap());
    assert!(raw.median <= full.median);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("report.csv");
    r.write_csv(&path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].starts_with("program,n,steps,mode"));
    assert!(lines[1].starts_with("jacobi2d,32,6,remote-full,2,ignore,0,"));
    let table = r.to_string();
    assert!(table.contains("transport") && table.contains("raw share"), "{table}");
}

#[test]
fn bad_specs_are_refused() {
    assert!(matches!(run_benchmark(&BenchSpec::new("lu", 16, 1, Mode::Local)), Err(BenchError::UnknownProgram(_))));
    assert!(matches!(run_benchmark(&BenchSpec::new("jacobi2d", 2, 1, Mode::Local)), Err(BenchError::Spec(_))));
    let no_reps = BenchSpec { reps: 0, ..BenchSpec::new("fdtd2d", 8, 1, Mode::Local) };
    assert!(matches!(run_benchmark(&no_reps), Err(BenchError::Spec(_))));
    let nowhere = BenchSpec {
        alias: AliasMode::Ignore,
        server: Some("127.0.0.1:1".into()),
        ..BenchSpec::new("jacobi2d", 8, 1, Mode::RemoteFull)
    };
    assert!(matches!(run_benchmark(&nowhere), Err(BenchError::Prepare(_))));
}

#[test]
fn modes_parse_and_print() {
    for m in [Mode::Local, Mode::RemoteRaw, Mode::RemoteFull] {
        assert_eq!(m.to_string().parse::<Mode>(), Ok(m));
    }
    assert!("remote".parse::<Mode>().is_err());
}

proptest! {
    #[test]
    fn summaries_are_ordered(samples in prop::collection::vec(0u64..1 << 40, 1..40)) {
        let s = Summary::of(&samples).unwrap();
        prop_assert!(s.min as f64 <= s.avg && s.avg <= s.max as f64);
        prop_assert!(s.min as f64 <= s.median && s.median <= s.max as f64);
        prop_assert_eq!(s.min, *samples.iter().min().unwrap());
        prop_assert_eq!(s.max, *samples.iter().max().unwrap());
    }
}

fn cli(args: &[&str]) -> (bool, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_baar")).args(args).env("RUST_LOG", "warn").output().unwrap();
    (out.status.success(), String::from_utf8_lossy(&out.stdout).into_owned() + &String::from_utf8_lossy(&out.stderr))
}

#[test]
fn cli_score_run_and_bench() {
    let (ok, text) = cli(&["score", "--program", "jacobi2d", "--n", "16", "--alias", "ignore"]);
    assert!(ok, "{text}");
    assert!(text.lines().any(|l| l.starts_with("jacobi_2d") && l.contains("true")), "{text}");

    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("id.bir");
    std::fs::write(&file, "func main(x: i64) -> i64 {\n  return x\n}\n").unwrap();
    let (ok, text) = cli(&["run", file.to_str().unwrap(), "--arg", "-7"]);
    assert!(ok, "{text}");
    assert!(text.contains("result: -7"), "{text}");

    let csv = dir.path().join("b.csv");
    let (ok, text) = cli(&[
        "bench", "--program", "fdtd2d", "--n", "12", "--steps", "2", "--mode", "remote-full", "--reps", "1", "--alias", "ignore",
        "--workers", "2", "--csv", csv.to_str().unwrap(),
    ]);
    assert!(ok, "{text}");
    assert!(text.contains("exported: fdtd_2d"), "{text}");
    assert_eq!(std::fs::read_to_string(&csv).unwrap().lines().count(), 2);

    let (ok, _) = cli(&["bench", "--mode", "sideways"]);
    assert!(!ok);
}
