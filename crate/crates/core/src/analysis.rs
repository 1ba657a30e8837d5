//! Static hotspot analysis: block frequency estimation, candidate
//! selection, SCoP detection, operation counting and scoring.
//!
//! A function's score is the sum, over every loop inside one of its SCoPs,
//! of `(c_iops * iops + c_flops * flops) * freq`, where the counts are the
//! arithmetic operations of the statements directly in the loop body and
//! `freq` is the estimated number of times that body runs. Scores are exact
//! rationals.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::ir::{AffineExpr, Block, Expr, Function, Loop, LoopId, Program, ScalarType, StmtKind, ValueType};
use crate::Rational;

/// Trip count assumed for a loop whose extent is not a compile-time constant.
pub const DEFAULT_TRIP: u64 = 100;
pub const DEFAULT_THRESHOLD: u64 = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash)]
pub enum AliasMode {
    /// Distinct array parameters may alias.
    #[default]
    Conservative,
    /// Distinct array parameters never alias.
    Ignore,
}

impl AliasMode {
    pub fn name(self) -> &'static str {
        match self {
            AliasMode::Conservative => "conservative",
            AliasMode::Ignore => "ignore",
        }
    }
}

impl fmt::Display for AliasMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AliasMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "conservative" => Ok(AliasMode::Conservative),
            "ignore" => Ok(AliasMode::Ignore),
            other => Err(alloc::format!("unknown alias mode `{other}` (expected conservative or ignore)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Weights {
    pub c_iops: Rational,
    pub c_flops: Rational,
}

impl Default for Weights {
    fn default() -> Self {
        Weights { c_iops: Rational::ONE, c_flops: Rational::ONE }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AnalysisConfig {
    pub threshold: u64,
    pub weights: Weights,
    pub alias: AliasMode,
    pub default_trip: u64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            threshold: DEFAULT_THRESHOLD,
            weights: Weights::default(),
            alias: AliasMode::Conservative,
            default_trip: DEFAULT_TRIP,
        }
    }
}

/// Estimated executions of each statement list of one function.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockFreqMap {
    /// The function body runs once per call.
    pub body: u64,
    /// Body frequency of every loop, indexed by preorder loop id.
    pub loops: Vec<u64>,
}

impl BlockFreqMap {
    pub fn max(&self) -> u64 {
        self.loops.iter().copied().fold(self.body, u64::max)
    }
}

/// Estimated trip count: exact for constant bounds, otherwise
/// `default_trip` stands in for the extent.
pub fn estimate_trip(lp: &Loop, default_trip: u64) -> u64 {
    let step = lp.step.max(1) as u128;
    let extent: u128 = if lp.lower.is_constant() && lp.upper.is_constant() {
        let d = lp.upper.constant as i128 - lp.lower.constant as i128;
        if d <= 0 {
            return 0;
        }
        d as u128
    } else {
        default_trip as u128
    };
    u64::try_from(extent.div_ceil(step)).unwrap_or(u64::MAX)
}

pub fn estimate_frequencies(f: &Function, default_trip: u64) -> BlockFreqMap {
    fn walk(block: &Block, freq: u64, trip: u64, out: &mut Vec<u64>) {
        for stmt in &block.stmts {
            if let StmtKind::Loop(lp) = &stmt.kind {
                let inner = freq.saturating_mul(estimate_trip(lp, trip));
                out.push(inner);
                walk(&lp.body, inner, trip, out);
            }
        }
    }
    let mut loops = Vec::new();
    walk(&f.body, 1, default_trip, &mut loops);
    BlockFreqMap { body: 1, loops }
}

/// Functions whose hottest block is estimated to run more than
/// `threshold` times.
pub fn select_candidates(p: &Program, freqs: &BTreeMap<String, BlockFreqMap>, threshold: u64) -> BTreeSet<String> {
    p.functions
        .iter()
        .filter(|f| freqs.get(&f.name).is_some_and(|m| m.max() > threshold))
        .map(|f| f.name.clone())
        .collect()
}

/// A maximal run of consecutive qualifying statements containing at least
/// one loop.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Scop {
    /// Statement indices leading from the function body to the enclosing
    /// statement list; each step names a loop statement.
    pub path: Vec<usize>,
    /// First statement of the run within that list.
    pub start: usize,
    pub len: usize,
    /// Outermost loops of the run.
    pub roots: Vec<LoopId>,
    /// Every loop in the run, in preorder.
    pub loops: Vec<LoopId>,
}

impl Scop {
    /// The statement list the SCoP lives in.
    pub fn block<'f>(&self, f: &'f Function) -> &'f Block {
        let mut b = &f.body;
        for &k in &self.path {
            match &b.stmts[k].kind {
                StmtKind::Loop(lp) => b = &lp.body,
                _ => unreachable!("SCoP path runs through loops"),
            }
        }
        b
    }
}

impl fmt::Display for Scop {
    /// `path/start+len:loop,loop,...`, e.g. `0.2/1+3:4,5,6`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, k) in self.path.iter().enumerate() {
            if i > 0 {
                f.write_str(".")?;
            }
            write!(f, "{k}")?;
        }
        write!(f, "/{}+{}:", self.start, self.len)?;
        for (i, l) in self.loops.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{l}")?;
        }
        Ok(())
    }
}

struct ScopFinder<'f> {
    f: &'f Function,
    mode: AliasMode,
    ids: BTreeMap<*const Loop, LoopId>,
    out: Vec<Scop>,
}

impl<'f> ScopFinder<'f> {
    fn is_int_param(&self, name: &str) -> bool {
        self.f.param(name).is_some_and(|p| p.ty == ValueType::I64)
    }

    fn affine(&self, e: &Expr, indices: &[&str]) -> bool {
        AffineExpr::from_expr(e, &|v| indices.contains(&v) || self.is_int_param(v)).is_some()
    }

    fn expr_ok(&self, e: &Expr, indices: &[&str]) -> bool {
        let mut ok = true;
        e.for_each_load(&mut |_, ixs| ok &= ixs.iter().all(|ix| self.affine(ix, indices)));
        ok
    }

    fn stmt_ok(&self, kind: &'f StmtKind, indices: &mut Vec<&'f str>) -> bool {
        match kind {
            StmtKind::Let { value, .. } | StmtKind::Assign { value, .. } => self.expr_ok(value, indices),
            StmtKind::Store { array, indices: ixs, value } => {
                if !ixs.iter().all(|ix| self.affine(ix, indices)) || !self.expr_ok(value, indices) {
                    return false;
                }
                if self.mode == AliasMode::Conservative {
                    let mut other = false;
                    value.for_each_load(&mut |a, _| other |= a != array);
                    if other {
                        return false;
                    }
                }
                true
            }
            StmtKind::Loop(lp) => {
                let bounds = lp.lower.vars().chain(lp.upper.vars()).all(|v| indices.contains(&v) || self.is_int_param(v));
                if !bounds {
                    return false;
                }
                indices.push(&lp.index);
                let ok = lp.body.stmts.iter().all(|s| self.stmt_ok(&s.kind, indices));
                indices.pop();
                ok
            }
            StmtKind::Call(_) | StmtKind::Return(_) => false,
        }
    }

    fn collect_loops(&self, block: &Block, out: &mut Vec<LoopId>) {
        for s in &block.stmts {
            if let StmtKind::Loop(lp) = &s.kind {
                out.push(self.ids[&(lp as *const Loop)]);
                self.collect_loops(&lp.body, out);
            }
        }
    }

    fn block(&mut self, block: &'f Block, path: &mut Vec<usize>, indices: &mut Vec<&'f str>) {
        let stmts = &block.stmts;
        let ok: Vec<bool> = stmts.iter().map(|s| self.stmt_ok(&s.kind, indices)).collect();
        let mut k = 0;
        while k < stmts.len() {
            if !ok[k] {
                if let StmtKind::Loop(lp) = &stmts[k].kind {
                    path.push(k);
                    indices.push(&lp.index);
                    self.block(&lp.body, path, indices);
                    indices.pop();
                    path.pop();
                }
                k += 1;
                continue;
            }
            let start = k;
            while k < stmts.len() && ok[k] {
                k += 1;
            }
            let run = &stmts[start..k];
            let mut roots = Vec::new();
            let mut loops = Vec::new();
            for s in run {
                if let StmtKind::Loop(lp) = &s.kind {
                    let id = self.ids[&(lp as *const Loop)];
                    roots.push(id);
                    loops.push(id);
                    self.collect_loops(&lp.body, &mut loops);
                }
            }
            if !roots.is_empty() {
                self.out.push(Scop { path: path.clone(), start, len: k - start, roots, loops });
            }
        }
    }
}

/// All maximal SCoPs of `f`, in source order. Statement runs are grown
/// greedily left to right; loops that do not qualify as a whole are searched
/// for SCoPs inside their bodies.
pub fn detect_scops(f: &Function, mode: AliasMode) -> Vec<Scop> {
    let ids = f.loops().iter().map(|r| (r.lp as *const Loop, r.id)).collect();
    let mut finder = ScopFinder { f, mode, ids, out: Vec::new() };
    finder.block(&f.body, &mut Vec::new(), &mut Vec::new());
    finder.out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct OpCounts {
    pub iops: u64,
    pub flops: u64,
}

impl OpCounts {
    fn add(&mut self, ty: ScalarType) {
        match ty {
            ScalarType::I64 => self.iops += 1,
            ScalarType::F64 => self.flops += 1,
        }
    }
}

impl core::ops::Add for OpCounts {
    type Output = OpCounts;
    fn add(self, o: OpCounts) -> OpCounts {
        OpCounts { iops: self.iops + o.iops, flops: self.flops + o.flops }
    }
}

/// Scalar types visible at a point of a function body.
#[derive(Default)]
struct TypeScope<'a> {
    frames: Vec<Vec<(&'a str, ValueType)>>,
}

impl<'a> TypeScope<'a> {
    fn lookup(&self, name: &str) -> Option<&ValueType> {
        self.frames.iter().rev().flat_map(|f| f.iter().rev()).find(|(n, _)| *n == name).map(|(_, t)| t)
    }

    fn define(&mut self, name: &'a str, ty: ValueType) {
        if self.frames.is_empty() {
            self.frames.push(Vec::new());
        }
        self.frames.last_mut().unwrap().push((name, ty));
    }

    fn type_of(&self, e: &Expr) -> ScalarType {
        self.known_type(e).unwrap_or(ScalarType::I64)
    }

    /// Type of `e`, or `None` if it only involves undeclared scalars. Both
    /// operands of a binary operation share a type, so either side decides.
    fn known_type(&self, e: &Expr) -> Option<ScalarType> {
        match e {
            Expr::Int(_) => Some(ScalarType::I64),
            Expr::Float(_) => Some(ScalarType::F64),
            Expr::Var(v) => self.lookup(v).and_then(|t| t.scalar()),
            Expr::Load { array, .. } => Some(self.lookup(array).map(|t| t.elem()).unwrap_or(ScalarType::F64)),
            Expr::Neg(a) => self.known_type(a),
            Expr::Binary { lhs, rhs, .. } => self.known_type(lhs).or_else(|| self.known_type(rhs)),
            Expr::Convert { to, .. } => Some(*to),
        }
    }

    /// Arithmetic in `e`, excluding subscripts.
    fn count(&self, e: &Expr, c: &mut OpCounts) {
        match e {
            Expr::Int(_) | Expr::Float(_) | Expr::Var(_) | Expr::Load { .. } => {}
            Expr::Neg(a) => {
                c.add(self.type_of(a));
                self.count(a, c);
            }
            Expr::Binary { lhs, rhs, .. } => {
                c.add(self.type_of(lhs));
                self.count(lhs, c);
                self.count(rhs, c);
            }
            Expr::Convert { to, arg } => {
                if self.type_of(arg) != *to {
                    c.add(*to);
                }
                self.count(arg, c);
            }
        }
    }
}

/// Operations of the non-loop statements directly in `block`. Defines the
/// block's locals in `scope` as a side effect.
fn direct_ops<'a>(block: &'a Block, scope: &mut TypeScope<'a>) -> OpCounts {
    let mut c = OpCounts::default();
    for s in &block.stmts {
        match &s.kind {
            StmtKind::Let { name, value } => {
                scope.count(value, &mut c);
                let ty = scope.type_of(value);
                scope.define(name, ValueType::Scalar(ty));
            }
            StmtKind::Assign { value, .. } | StmtKind::Store { value, .. } | StmtKind::Return(value) => {
                scope.count(value, &mut c)
            }
            StmtKind::Call(call) => {
                for a in &call.args {
                    scope.count(a, &mut c);
                }
            }
            StmtKind::Loop(_) => {}
        }
    }
    c
}

fn scope_for(f: &Function) -> TypeScope<'_> {
    let mut scope = TypeScope::default();
    for p in &f.params {
        scope.define(&p.name, p.ty.clone());
    }
    scope
}

/// Operations in one execution of the innermost body of the perfect nest
/// rooted at `l`, a loop of `f`.
pub fn count_loop_ops_in(f: &Function, l: &Loop) -> OpCounts {
    // Type the statements preceding the loop so enclosing locals resolve.
    let mut scope = scope_for(f);
    declare_until(&f.body, l, &mut scope);
    count_nest(l, &mut scope)
}

/// Like [`count_loop_ops_in`] without the enclosing function. Free scalars
/// take their type from the expression they appear in (`i64` if nothing
/// decides it) and free arrays are taken to hold `f64`.
pub fn count_loop_ops(l: &Loop) -> OpCounts {
    count_nest(l, &mut TypeScope::default())
}

fn count_nest<'a>(l: &'a Loop, scope: &mut TypeScope<'a>) -> OpCounts {
    let mut lp = l;
    loop {
        scope.frames.push(alloc::vec![(lp.index.as_str(), ValueType::I64)]);
        match lp.body.stmts.as_slice() {
            [s] => match &s.kind {
                StmtKind::Loop(inner) => lp = inner,
                _ => break,
            },
            _ => break,
        }
    }
    direct_ops(&lp.body, scope)
}

/// Defines, in `scope`, every local visible at the start of `target`.
fn declare_until<'a>(block: &'a Block, target: &Loop, scope: &mut TypeScope<'a>) -> bool {
    scope.frames.push(Vec::new());
    for s in &block.stmts {
        match &s.kind {
            StmtKind::Loop(lp) if core::ptr::eq(lp, target) => return true,
            StmtKind::Loop(lp) => {
                scope.frames.push(alloc::vec![(lp.index.as_str(), ValueType::I64)]);
                if declare_until(&lp.body, target, scope) {
                    return true;
                }
                scope.frames.pop();
            }
            StmtKind::Let { name, value } => {
                let ty = scope.type_of(value);
                scope.define(name, ValueType::Scalar(ty));
            }
            StmtKind::Call(c) => {
                if let Some(crate::ir::CallDest::Let(n)) = &c.dest {
                    // The callee's result type is unknown here; calls never
                    // occur inside SCoPs, so the binding only matters for
                    // later expressions that use it.
                    scope.define(n, ValueType::F64);
                }
            }
            _ => {}
        }
    }
    scope.frames.pop();
    false
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoopScore {
    pub loop_id: LoopId,
    /// Operations of the statements directly in the loop body.
    pub counts: OpCounts,
    /// Estimated executions of the loop body.
    pub freq: u64,
    pub score: Rational,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScopScore {
    pub scop: Scop,
    pub loops: Vec<LoopScore>,
    pub subtotal: Rational,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScoreReport {
    pub function: String,
    pub max_freq: u64,
    pub candidate: bool,
    pub scops: Vec<ScopScore>,
    pub total: Rational,
}

fn loop_score(counts: OpCounts, freq: u64, w: &Weights) -> Rational {
    w.c_iops
        .saturating_mul_int(counts.iops as u128)
        .saturating_add(w.c_flops.saturating_mul_int(counts.flops as u128))
        .saturating_mul_int(freq as u128)
}

/// Scores `f` from its SCoPs. Loops outside every SCoP contribute nothing.
pub fn score_function(f: &Function, scops: &[Scop], freqs: &BlockFreqMap, w: &Weights) -> ScoreReport {
    let counts = loop_direct_counts(f);
    let mut total = Rational::ZERO;
    let scops = scops
        .iter()
        .map(|scop| {
            let loops: Vec<LoopScore> = scop
                .loops
                .iter()
                .map(|&id| {
                    let freq = freqs.loops.get(id).copied().unwrap_or(0);
                    LoopScore { loop_id: id, counts: counts[id], freq, score: loop_score(counts[id], freq, w) }
                })
                .collect();
            let subtotal = loops.iter().fold(Rational::ZERO, |a, l| a.saturating_add(l.score));
            total = total.saturating_add(subtotal);
            ScopScore { scop: scop.clone(), loops, subtotal }
        })
        .collect();
    ScoreReport { function: f.name.clone(), max_freq: freqs.max(), candidate: true, scops, total }
}

/// Direct-body operation counts of every loop, by preorder id.
pub fn loop_direct_counts(f: &Function) -> Vec<OpCounts> {
    fn walk<'a>(block: &'a Block, scope: &mut TypeScope<'a>, out: &mut Vec<OpCounts>) {
        scope.frames.push(Vec::new());
        for s in &block.stmts {
            match &s.kind {
                StmtKind::Loop(lp) => {
                    let slot = out.len();
                    out.push(OpCounts::default());
                    scope.frames.push(alloc::vec![(lp.index.as_str(), ValueType::I64)]);
                    // Counting defines the body's locals; do it in a scope of
                    // its own and then walk nested loops with them visible.
                    scope.frames.push(Vec::new());
                    out[slot] = direct_ops(&lp.body, scope);
                    walk(&lp.body, scope, out);
                    scope.frames.pop();
                    scope.frames.pop();
                }
                StmtKind::Let { name, value } => {
                    let ty = scope.type_of(value);
                    scope.define(name, ValueType::Scalar(ty));
                }
                _ => {}
            }
        }
        scope.frames.pop();
    }
    let mut scope = scope_for(f);
    let mut out = Vec::new();
    walk(&f.body, &mut scope, &mut out);
    out
}

/// Results of the whole client-side pipeline for one program.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProgramAnalysis {
    pub config: AnalysisConfig,
    pub reports: Vec<ScoreReport>,
}

impl ProgramAnalysis {
    pub fn report(&self, function: &str) -> Option<&ScoreReport> {
        self.reports.iter().find(|r| r.function == function)
    }

    pub fn score(&self, function: &str) -> Rational {
        self.report(function).map(|r| r.total).unwrap_or(Rational::ZERO)
    }
}

/// Estimates, selects, detects and scores every function of `p`.
/// Functions that are not candidates, or have no SCoP, score zero.
pub fn analyze_program(p: &Program, cfg: &AnalysisConfig) -> ProgramAnalysis {
    let freqs: BTreeMap<String, BlockFreqMap> =
        p.functions.iter().map(|f| (f.name.clone(), estimate_frequencies(f, cfg.default_trip))).collect();
    let candidates = select_candidates(p, &freqs, cfg.threshold);
    let reports = p
        .functions
        .iter()
        .map(|f| {
            let fm = &freqs[&f.name];
            if candidates.contains(&f.name) {
                let scops = detect_scops(f, cfg.alias);
                score_function(f, &scops, fm, &cfg.weights)
            } else {
                ScoreReport {
                    function: f.name.clone(),
                    max_freq: fm.max(),
                    candidate: false,
                    scops: Vec::new(),
                    total: Rational::ZERO,
                }
            }
        })
        .collect();
    ProgramAnalysis { config: *cfg, reports }
}

#[cfg(test)]
mod tests;
