use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use proptest::prelude::*;

use super::*;
use crate::corpus;
use crate::interp::{self, Value};
use crate::ir::{parse_program, StmtKind};

fn func(src: &str) -> Function {
    parse_program(src).unwrap().functions.remove(0)
}

fn loop_of(f: &Function, id: LoopId) -> &Loop {
    f.loops()[id].lp
}

#[test]
fn constant_nest_frequency_is_product_of_trips() {
    let f = func("func f(A: f64[4]) {\n  loop i in [0, 1000) {\n    loop j in [0, 1000) {\n      A[0] = 1.0\n    }\n  }\n}\n");
    let m = estimate_frequencies(&f, DEFAULT_TRIP);
    assert_eq!(m.loops, [1000, 1_000_000]);
    assert_eq!(m.max(), 1_000_000);
}

#[test]
fn parameter_bound_uses_default_trip() {
    let f = func("func f(n: i64, A: f64[4]) {\n  loop i in [0, n) {\n    A[0] = 1.0\n  }\n}\n");
    assert_eq!(estimate_frequencies(&f, DEFAULT_TRIP).loops, [100]);
    assert_eq!(estimate_frequencies(&f, 7).loops, [7]);
    let f = func("func f(n: i64, A: f64[4]) {\n  loop i in [0, n) step 3 {\n    A[0] = 1.0\n  }\n}\n");
    assert_eq!(estimate_frequencies(&f, DEFAULT_TRIP).loops, [34]);
}

#[test]
fn empty_range_has_zero_frequency() {
    let f = func("func f(A: f64[4]) {\n  loop i in [5, 5) {\n    loop j in [0, 9) {\n      A[0] = 1.0\n    }\n  }\n}\n");
    assert_eq!(estimate_frequencies(&f, DEFAULT_TRIP).loops, [0, 0]);
    let f = func("func f(A: f64[4]) {\n  loop i in [0, 10) step 4 {\n    A[0] = 1.0\n  }\n}\n");
    assert_eq!(estimate_frequencies(&f, DEFAULT_TRIP).loops, [3]);
}

#[test]
fn candidate_threshold_is_strict() {
    let p = parse_program(
        "\
func hot(A: f64[4]) {
  loop i in [0, 1000) {
    loop j in [0, 1000) {
      A[0] = 1.0
    }
  }
}
func edge(n: i64, A: f64[4]) {
  loop i in [0, n) {
    loop j in [0, n) {
      A[0] = 1.0
    }
  }
}
func flat(x: i64) -> i64 {
  return x
}
func tiny(A: f64[4]) {
  loop i in [0, 1) {
    A[0] = 1.0
  }
}
",
    )
    .unwrap();
    let freqs: BTreeMap<String, BlockFreqMap> =
        p.functions.iter().map(|f| (f.name.clone(), estimate_frequencies(f, DEFAULT_TRIP))).collect();
    assert_eq!(freqs["edge"].max(), 10_000);
    let c = select_candidates(&p, &freqs, 10_000);
    assert!(c.contains("hot"));
    assert!(!c.contains("edge"));
    let c = select_candidates(&p, &freqs, 0);
    assert!(c.contains("tiny") && c.contains("edge") && c.contains("hot"));
    // The body of a loop-free function runs once: above 0, so it is a
    // candidate at threshold 0, but never has a SCoP.
    assert!(c.contains("flat"));
}

#[test]
fn jacobi_scops_depend_on_alias_mode() {
    let p = corpus::jacobi_2d(8, 2).parse();
    let f = p.function("jacobi_2d").unwrap();
    let scops = detect_scops(f, AliasMode::Ignore);
    assert_eq!(scops.len(), 1);
    let s = &scops[0];
    assert_eq!((s.path.as_slice(), s.start, s.len), (&[][..], 0, 1));
    assert_eq!(s.roots, [0]);
    assert_eq!(s.loops, [0, 1, 2, 3, 4]);
    assert!(detect_scops(f, AliasMode::Conservative).is_empty());
}

#[test]
fn calls_disqualify() {
    let p = parse_program(
        "\
func g(x: i64) -> i64 {
  return x
}
func f(A: i64[8]) {
  loop i in [0, 8) {
    let y = call g(i)
    A[i] = y
  }
}
",
    )
    .unwrap();
    assert!(detect_scops(p.function("f").unwrap(), AliasMode::Ignore).is_empty());
}

#[test]
fn runs_are_maximal_and_split_by_calls() {
    let p = parse_program(
        "\
func g() {
}
func f(n: i64, A: f64[8]) {
  let s = 1.0
  loop i in [0, 8) {
    A[i] = s
  }
  loop i in [0, n) {
    A[i] = A[i] + 1.0
  }
  call g()
  loop t in [0, 4) {
    call g()
    loop i in [0, 8) {
      A[i] = 2.0
    }
  }
}
",
    )
    .unwrap();
    let f = p.function("f").unwrap();
    let scops = detect_scops(f, AliasMode::Conservative);
    assert_eq!(scops.len(), 2);
    assert_eq!((scops[0].path.as_slice(), scops[0].start, scops[0].len), (&[][..], 0, 3));
    assert_eq!(scops[0].roots, [0, 1]);
    assert_eq!((scops[1].path.as_slice(), scops[1].start, scops[1].len), (&[4][..], 1, 1));
    assert_eq!(scops[1].roots, [3]);
}

#[test]
fn non_affine_subscript_disqualifies() {
    let f = func("func f(A: f64[64]) {\n  loop i in [0, 8) {\n    loop j in [0, 8) {\n      A[i * j] = 1.0\n    }\n  }\n}\n");
    assert!(detect_scops(&f, AliasMode::Ignore).is_empty());
    let f = func("func f(A: f64[64]) {\n  loop i in [0, 8) {\n    loop j in [0, 8) {\n      A[8 * i + j] = 1.0\n    }\n  }\n}\n");
    assert_eq!(detect_scops(&f, AliasMode::Ignore).len(), 1);
}

#[test]
fn stencil_body_has_five_flops() {
    let f = func(
        "func f(A: f64[8][8], B: f64[8][8]) {\n  loop i in [1, 7) {\n    loop j in [1, 7) {\n      B[i][j] = 0.2 * (A[i][j] + A[i][j - 1] + A[i][j + 1] + A[i + 1][j] + A[i - 1][j])\n    }\n  }\n}\n",
    );
    assert_eq!(count_loop_ops(loop_of(&f, 0)), OpCounts { iops: 0, flops: 5 });
    assert_eq!(count_loop_ops_in(&f, loop_of(&f, 0)), OpCounts { iops: 0, flops: 5 });
}

#[test]
fn integer_increment_is_one_iop() {
    let f = func("func f() -> i64 {\n  let s = 0\n  loop i in [0, 4) {\n    s = s + 1\n  }\n  return s\n}\n");
    assert_eq!(count_loop_ops(loop_of(&f, 0)), OpCounts { iops: 1, flops: 0 });
    let f = func("func f() -> f64 {\n  let s = 0.0\n  loop i in [0, 4) {\n    s = s + 1.0\n  }\n  return s\n}\n");
    assert_eq!(count_loop_ops_in(&f, loop_of(&f, 0)), OpCounts { iops: 0, flops: 1 });
}

#[test]
fn empty_body_counts_nothing() {
    let f = func("func f() {\n  loop i in [0, 4) {\n  }\n}\n");
    assert_eq!(count_loop_ops(loop_of(&f, 0)), OpCounts::default());
}

#[test]
fn conversions_count_by_result_type() {
    let f = func("func f(A: f64[4], K: i64[4]) {\n  loop i in [0, 4) {\n    A[i] = f64(i) * 0.5\n    K[i] = i64(A[i]) - i\n  }\n}\n");
    assert_eq!(count_loop_ops_in(&f, loop_of(&f, 0)), OpCounts { iops: 2, flops: 2 });
}

const SCORE_EXAMPLE: &str = "\
func f(n: i64, A: f64[128]) {
  loop i in [0, n) {
    let k = i + 1
    A[i] = A[i] * 2.0 + 1.0
  }
}
";

#[test]
fn worked_score_example() {
    let f = func(SCORE_EXAMPLE);
    let freqs = estimate_frequencies(&f, DEFAULT_TRIP);
    let scops = detect_scops(&f, AliasMode::Conservative);
    let r = score_function(&f, &scops, &freqs, &Weights::default());
    let l = &r.scops[0].loops[0];
    assert_eq!((l.counts, l.freq), (OpCounts { iops: 1, flops: 2 }, 100));
    assert_eq!(l.score, Rational::from_integer(300));
    assert_eq!(r.total, Rational::from_integer(300));
}

#[test]
fn zero_scops_score_zero() {
    let f = func(SCORE_EXAMPLE);
    let r = score_function(&f, &[], &estimate_frequencies(&f, DEFAULT_TRIP), &Weights::default());
    assert_eq!(r.total, Rational::ZERO);
}

#[test]
fn zero_weight_annihilates() {
    let f = func("func f(K: i64[8]) {\n  loop i in [0, 8) {\n    K[i] = i + i + i + i + i + i + i + i\n  }\n}\n");
    let scops = detect_scops(&f, AliasMode::Conservative);
    let w = Weights { c_iops: Rational::ZERO, c_flops: Rational::ONE };
    let r = score_function(&f, &scops, &estimate_frequencies(&f, DEFAULT_TRIP), &w);
    assert_eq!(r.scops[0].loops[0].counts, OpCounts { iops: 7, flops: 0 });
    assert_eq!(r.total, Rational::ZERO);
}

#[test]
fn jacobi_analysis() {
    let p = corpus::jacobi_2d(64, 10).parse();
    let cfg = AnalysisConfig { alias: AliasMode::Ignore, ..Default::default() };
    let a = analyze_program(&p, &cfg);
    let main = a.report("main").unwrap();
    assert_eq!((main.max_freq, main.candidate), (10_000, false));
    let k = a.report("jacobi_2d").unwrap();
    assert!(k.candidate);
    // Two five-flop stencil bodies at 100^3 each.
    assert_eq!(k.total, Rational::from_integer(2 * 5 * 1_000_000));
    let a = analyze_program(&p, &AnalysisConfig::default());
    assert_eq!(a.score("jacobi_2d"), Rational::ZERO);
}

#[test]
fn fdtd_needs_the_alias_hint() {
    let p = corpus::fdtd_2d(16, 4).parse();
    let conservative = analyze_program(&p, &AnalysisConfig::default());
    assert!(conservative.reports.iter().all(|r| r.total.is_zero()));
    let ignore = analyze_program(&p, &AnalysisConfig { alias: AliasMode::Ignore, ..Default::default() });
    assert!(ignore.score("fdtd_2d") > Rational::ZERO);
}

/// Deterministic generator of random loop-nest functions with constant
/// bounds, driven by a seed so proptest can search over it.
struct Gen {
    state: u64,
    names: usize,
}

impl Gen {
    fn next(&mut self, n: u64) -> u64 {
        self.state ^= self.state << 13;
        self.state ^= self.state >> 7;
        self.state ^= self.state << 17;
        self.state % n
    }

    fn index(&mut self, idx: &[String]) -> String {
        if idx.is_empty() || self.next(4) == 0 {
            alloc::format!("{}", self.next(16))
        } else {
            idx[self.next(idx.len() as u64) as usize].clone()
        }
    }

    fn block(&mut self, depth: usize, idx: &mut Vec<String>, out: &mut String) {
        let n = 1 + self.next(3);
        for _ in 0..n {
            let pad = "  ".repeat(depth + 1);
            match self.next(if depth < 3 { 7 } else { 4 }) {
                0 => {
                    let ix = self.index(idx);
                    out.push_str(&alloc::format!("{pad}A[{ix}] = A[{ix}] * 0.5 + 1.0\n"));
                }
                1 => {
                    let (a, b) = (self.index(idx), self.index(idx));
                    out.push_str(&alloc::format!("{pad}B[{a}] = A[{b}] + B[{a}] - 2.0\n"));
                }
                2 => {
                    let ix = self.index(idx);
                    out.push_str(&alloc::format!("{pad}C[{ix}] = C[{ix}] + {ix} * 3\n"));
                }
                3 => {
                    self.names += 1;
                    let ix = self.index(idx);
                    out.push_str(&alloc::format!("{pad}let r{} = call h({ix})\n", self.names));
                }
                _ => {
                    self.names += 1;
                    let name = alloc::format!("i{}", self.names);
                    let lo = self.next(8);
                    let hi = lo + self.next(9);
                    let step = 1 + self.next(3);
                    out.push_str(&alloc::format!("{pad}loop {name} in [{lo}, {hi}) step {step} {{\n"));
                    idx.push(name);
                    self.block(depth + 1, idx, out);
                    idx.pop();
                    out.push_str(&alloc::format!("{pad}}}\n"));
                }
            }
        }
    }

    fn program(seed: u64) -> Program {
        let mut g = Gen { state: seed | 1, names: 0 };
        let mut body = String::new();
        g.block(0, &mut Vec::new(), &mut body);
        let src = alloc::format!(
            "func h(x: i64) -> i64 {{\n  return x + 1\n}}\nfunc k(A: f64[16], B: f64[16], C: i64[16]) {{\n{body}}}\n"
        );
        parse_program(&src).unwrap_or_else(|e| panic!("{e}\n{src}"))
    }
}

fn kernel(p: &Program) -> &Function {
    p.function("k").unwrap()
}

fn score_with(f: &Function, w: Weights) -> ScoreReport {
    let scops = detect_scops(f, AliasMode::Ignore);
    score_function(f, &scops, &estimate_frequencies(f, DEFAULT_TRIP), &w)
}

fn small_rational() -> impl Strategy<Value = Rational> {
    (0u128..50, 1u128..12).prop_map(|(n, d)| Rational::new(n, d))
}

proptest! {
    #[test]
    fn score_is_additive_in_weights(seed in any::<u64>(), a in small_rational(), b in small_rational(),
                                    c in small_rational(), d in small_rational()) {
        let p = Gen::program(seed);
        let f = kernel(&p);
        let w1 = Weights { c_iops: a, c_flops: b };
        let w2 = Weights { c_iops: c, c_flops: d };
        let sum = Weights { c_iops: a.saturating_add(c), c_flops: b.saturating_add(d) };
        let (r1, r2, r) = (score_with(f, w1), score_with(f, w2), score_with(f, sum));
        prop_assert_eq!(r.total, r1.total.saturating_add(r2.total));
        for ((s, s1), s2) in r.scops.iter().zip(&r1.scops).zip(&r2.scops) {
            for ((l, l1), l2) in s.loops.iter().zip(&s1.loops).zip(&s2.loops) {
                prop_assert_eq!(l.score, l1.score.saturating_add(l2.score));
            }
        }
    }

    #[test]
    fn scaling_weights_scales_scores(seed in any::<u64>(), a in small_rational(), b in small_rational(), k in 0u128..20) {
        let p = Gen::program(seed);
        let f = kernel(&p);
        let r = score_with(f, Weights { c_iops: a, c_flops: b });
        let rk = score_with(f, Weights { c_iops: a.saturating_mul_int(k), c_flops: b.saturating_mul_int(k) });
        prop_assert_eq!(rk.total, r.total.saturating_mul_int(k));
        for (s, sk) in r.scops.iter().zip(&rk.scops) {
            prop_assert_eq!(sk.subtotal, s.subtotal.saturating_mul_int(k));
        }
    }

    #[test]
    fn score_is_sum_of_loop_terms(seed in any::<u64>(), a in small_rational(), b in small_rational()) {
        let p = Gen::program(seed);
        let f = kernel(&p);
        let w = Weights { c_iops: a, c_flops: b };
        let r = score_with(f, w);
        let freqs = estimate_frequencies(f, DEFAULT_TRIP);
        let counts = loop_direct_counts(f);
        let mut total = Rational::ZERO;
        for s in &r.scops {
            let mut sub = Rational::ZERO;
            for l in &s.loops {
                let c = counts[l.loop_id];
                let term = a.saturating_mul_int(c.iops as u128)
                    .saturating_add(b.saturating_mul_int(c.flops as u128))
                    .saturating_mul_int(freqs.loops[l.loop_id] as u128);
                prop_assert_eq!(l.score, term);
                sub = sub.saturating_add(term);
            }
            prop_assert_eq!(s.subtotal, sub);
            total = total.saturating_add(sub);
        }
        prop_assert_eq!(r.total, total);
    }

    #[test]
    fn raising_a_constant_bound_never_lowers_the_score(seed in any::<u64>(), pick in any::<usize>(), extra in 1i64..6) {
        let p = Gen::program(seed);
        let f = kernel(&p);
        let n = f.loops().len();
        prop_assume!(n > 0);
        let before = score_with(f, Weights::default()).total;
        let mut g = f.clone();
        let target = pick % n;
        fn bump(block: &mut crate::ir::Block, target: usize, seen: &mut usize, extra: i64) {
            for s in &mut block.stmts {
                if let StmtKind::Loop(lp) = &mut s.kind {
                    if *seen == target {
                        lp.upper.constant += extra;
                    }
                    *seen += 1;
                    bump(&mut lp.body, target, seen, extra);
                }
            }
        }
        bump(&mut g.body, target, &mut 0, extra);
        prop_assert!(score_with(&g, Weights::default()).total >= before);
    }

    #[test]
    fn ignoring_aliases_only_adds_scops(seed in any::<u64>()) {
        let p = Gen::program(seed);
        let f = kernel(&p);
        let cons = detect_scops(f, AliasMode::Conservative);
        let ign = detect_scops(f, AliasMode::Ignore);
        // Every conservative SCoP lies inside an ignore SCoP of the same
        // statement list, or inside the body of a loop an ignore SCoP covers.
        for s in &cons {
            let covered = ign.iter().any(|t| {
                (t.path == s.path && t.start <= s.start && s.start + s.len <= t.start + t.len)
                    || (s.path.len() > t.path.len()
                        && s.path[..t.path.len()] == t.path[..]
                        && (t.start..t.start + t.len).contains(&s.path[t.path.len()]))
            });
            prop_assert!(covered, "{:?} not covered by {:?}", s, ign);
            for l in &s.loops {
                prop_assert!(ign.iter().any(|t| t.loops.contains(l)));
            }
        }
    }

    #[test]
    fn static_frequency_matches_executed_iterations(seed in any::<u64>()) {
        let p = Gen::program(seed);
        let f = kernel(&p);
        let freqs = estimate_frequencies(f, DEFAULT_TRIP);
        let mut args = alloc::vec![
            Value::zeros(&ValueType::array(ScalarType::F64, &[16])),
            Value::zeros(&ValueType::array(ScalarType::F64, &[16])),
            Value::zeros(&ValueType::array(ScalarType::I64, &[16])),
        ];
        let out = interp::run(&p, "k", &mut args).unwrap();
        for (id, freq) in freqs.loops.iter().enumerate() {
            prop_assert_eq!(out.stats.iterations("k", id), *freq);
        }
    }
}
