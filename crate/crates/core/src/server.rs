//! Server side of offloading: proving loops free of cross-iteration
//! conflicts, planning parallel and lane-grouped execution, and executing
//! calls.

use alloc::boxed::Box;
use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use crate::analysis::{detect_scops, DEFAULT_TRIP};
use crate::interp::compile::{self, Recheck};
use crate::interp::{Clock, Interpreter, ParallelRunner, RuntimeError};
use crate::interp::{CallOptions, Value};
use crate::ir::{self, AffineExpr, Diagnostic, Expr, Function, Loop, LoopId, StmtKind, ValueType};
use crate::offload::{RemotePart, REMOTE_PART_VERSION};
use crate::proto::{CallRequest, CallResponse, Kind, Message};

/// Upper bound on loop iterations plus evaluated accesses for one
/// enumeration.
pub const DEPENDENCE_BUDGET: u64 = 1 << 24;

/// How a verdict was reached.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Basis {
    /// Every iteration of the nest was enumerated; no free parameters.
    Exhaustive,
    /// Every conflicting pair is separated by a subscript that is a fixed
    /// multiple of the loop index plus identical invariant terms.
    Symbolic,
    /// Enumerated with parameters instantiated at the default trip count.
    /// A positive verdict is re-proved at run time for the actual values.
    Sampled,
    /// The enumeration budget ran out.
    Inconclusive,
}

impl fmt::Display for Basis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Basis::Exhaustive => "exhaustive",
            Basis::Symbolic => "symbolic",
            Basis::Sampled => "sampled",
            Basis::Inconclusive => "inconclusive",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AccessKind {
    Read,
    Write,
}

/// One dynamic execution of an array or scalar access.
#[derive(Debug, Clone, PartialEq)]
pub struct AccessInstance {
    pub kind: AccessKind,
    /// Subscripts as written; empty for a scalar.
    pub subscripts: Vec<Expr>,
    /// Values of the tested loop's index and of the loops inside it that
    /// enclose the access, outermost first.
    pub iteration: Vec<(String, i64)>,
}

/// Two accesses from different iterations of the tested loop that touch
/// the same cell, at least one of them a write.
#[derive(Debug, Clone, PartialEq)]
pub struct Witness {
    pub array: String,
    pub cell: Vec<i64>,
    pub loop_index: String,
    /// Parameter and enclosing loop index values the conflict occurs under.
    pub bindings: Vec<(String, i64)>,
    pub first: AccessInstance,
    pub second: AccessInstance,
}

impl Witness {
    /// Re-evaluates both accesses and checks that they really conflict.
    pub fn confirms(&self) -> bool {
        let eval = |inst: &AccessInstance| -> Option<(Vec<i64>, i64)> {
            let lookup = |v: &str| {
                inst.iteration.iter().chain(&self.bindings).find(|(n, _)| n == v).map(|(_, x)| *x)
            };
            let cell = inst
                .subscripts
                .iter()
                .map(|e| AffineExpr::from_expr(e, &|_| true)?.eval(&lookup))
                .collect::<Option<Vec<i64>>>()?;
            Some((cell, lookup(&self.loop_index)?))
        };
        match (eval(&self.first), eval(&self.second)) {
            (Some((c1, l1)), Some((c2, l2))) => {
                c1 == self.cell
                    && c2 == self.cell
                    && l1 != l2
                    && (self.first.kind == AccessKind::Write || self.second.kind == AccessKind::Write)
            }
            _ => false,
        }
    }
}

impl fmt::Display for Witness {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let inst = |f: &mut fmt::Formatter<'_>, a: &AccessInstance| -> fmt::Result {
            let verb = match a.kind {
                AccessKind::Read => "reads",
                AccessKind::Write => "writes",
            };
            for (k, (n, v)) in a.iteration.iter().enumerate() {
                write!(f, "{}{n}={v}", if k > 0 { "," } else { "" })?;
            }
            write!(f, " {verb}")
        };
        let cell = |f: &mut fmt::Formatter<'_>| -> fmt::Result {
            write!(f, " {}", self.array)?;
            for c in &self.cell {
                write!(f, "[{c}]")?;
            }
            Ok(())
        };
        inst(f, &self.first)?;
        cell(f)?;
        f.write_str(", ")?;
        inst(f, &self.second)?;
        cell(f)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DependenceVerdict {
    pub loop_id: LoopId,
    pub parallel: bool,
    pub basis: Basis,
    /// Present on every negative verdict except an inconclusive one.
    pub witness: Option<Witness>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DependenceError {
    #[error("no loop {0} in the function")]
    UnknownLoop(LoopId),
    #[error("access `{0}` is not affine in the loop indices and integer parameters")]
    NonAffine(String),
    #[error("loop bound `{0}` is not affine in the loop indices and integer parameters")]
    NonAffineBound(String),
    #[error("call to `{0}` inside the loop")]
    Call(String),
    #[error("`return` inside the loop")]
    Return,
}

/// Integer-linear form over environment slots.
#[derive(Debug, Clone, PartialEq)]
struct Lin {
    terms: Vec<(usize, i64)>,
    constant: i64,
}

impl Lin {
    fn eval(&self, env: &[i64]) -> Option<i64> {
        let mut acc = self.constant;
        for &(s, c) in &self.terms {
            acc = acc.checked_add(c.checked_mul(env[s])?)?;
        }
        Some(acc)
    }

    fn coeff(&self, slot: usize) -> i64 {
        self.terms.iter().find(|(s, _)| *s == slot).map_or(0, |(_, c)| *c)
    }

    fn slots(&self) -> impl Iterator<Item = usize> + '_ {
        self.terms.iter().map(|(s, _)| *s)
    }
}

struct Site {
    target: usize,
    kind: AccessKind,
    subs: Vec<Lin>,
    exprs: Vec<Expr>,
    /// Slots of the tested loop and the inner loops around this access.
    loops: Vec<usize>,
}

struct NestLoop {
    var: usize,
    lower: Lin,
    upper: Lin,
    step: i64,
    body: Vec<Node>,
}

enum Node {
    Site(usize),
    Loop(NestLoop),
}

/// The tested loop lowered for dependence testing.
struct Nest {
    vars: Vec<String>,
    targets: Vec<String>,
    sites: Vec<Site>,
    root: NestLoop,
    /// Relevant enclosing loops, outermost first.
    outer: Vec<NestLoop>,
    /// Integer parameters the nest depends on.
    params: Vec<usize>,
    /// Indices of the tested loop and every loop inside it.
    inner: BTreeSet<usize>,
}

struct Builder<'f> {
    f: &'f Function,
    vars: Vec<String>,
    targets: Vec<String>,
    sites: Vec<Site>,
    /// Index names of enclosing loops and of nest loops in scope.
    indices: Vec<&'f str>,
    /// Scalars declared outside the tested loop and assigned inside it.
    shared: BTreeSet<&'f str>,
    loop_stack: Vec<usize>,
}

impl<'f> Builder<'f> {
    fn slot(&mut self, name: &str) -> usize {
        match self.vars.iter().position(|v| v == name) {
            Some(s) => s,
            None => {
                self.vars.push(name.into());
                self.vars.len() - 1
            }
        }
    }

    fn target(&mut self, name: &str) -> usize {
        match self.targets.iter().position(|v| v == name) {
            Some(s) => s,
            None => {
                self.targets.push(name.into());
                self.targets.len() - 1
            }
        }
    }

    fn allowed(&self, v: &str) -> bool {
        self.indices.contains(&v) || self.f.param(v).is_some_and(|p| p.ty == ValueType::I64)
    }

    fn lin(&mut self, a: &AffineExpr) -> Lin {
        let terms = a.terms.iter().map(|(n, c)| (self.slot(n), *c)).collect();
        Lin { terms, constant: a.constant }
    }

    fn affine(&mut self, e: &Expr) -> Option<Lin> {
        let a = AffineExpr::from_expr(e, &|v| self.allowed(v))?;
        Some(self.lin(&a))
    }

    fn bound(&mut self, a: &AffineExpr) -> Result<Lin, DependenceError> {
        if a.vars().all(|v| self.allowed(v)) {
            Ok(self.lin(a))
        } else {
            Err(DependenceError::NonAffineBound(a.to_expr().to_string()))
        }
    }

    fn access(&mut self, array: &str, ixs: &[Expr], kind: AccessKind, out: &mut Vec<Node>) -> Result<(), DependenceError> {
        let mut subs = Vec::with_capacity(ixs.len());
        for ix in ixs {
            match self.affine(ix) {
                Some(l) => subs.push(l),
                None => return Err(DependenceError::NonAffine(Expr::load(array, ixs.to_vec()).to_string())),
            }
        }
        let target = self.target(array);
        self.sites.push(Site { target, kind, subs, exprs: ixs.to_vec(), loops: self.loop_stack.clone() });
        out.push(Node::Site(self.sites.len() - 1));
        Ok(())
    }

    fn reads(&mut self, e: &Expr, out: &mut Vec<Node>) -> Result<(), DependenceError> {
        let mut loads = Vec::new();
        e.for_each_load(&mut |a, ixs| loads.push((a, ixs)));
        for (a, ixs) in loads {
            self.access(a, ixs, AccessKind::Read, out)?;
        }
        let mut vars = Vec::new();
        e.for_each_var(&mut |v| vars.push(v));
        for v in vars {
            if self.shared.contains(v) {
                self.access(v, &[], AccessKind::Read, out)?;
            }
        }
        Ok(())
    }

    fn nest_loop(&mut self, lp: &'f Loop) -> Result<NestLoop, DependenceError> {
        let lower = self.bound(&lp.lower)?;
        let upper = self.bound(&lp.upper)?;
        let var = self.slot(&lp.index);
        self.indices.push(&lp.index);
        self.loop_stack.push(var);
        let mut body = Vec::new();
        for s in &lp.body.stmts {
            match &s.kind {
                StmtKind::Let { value, .. } => self.reads(value, &mut body)?,
                StmtKind::Assign { name, value } => {
                    self.reads(value, &mut body)?;
                    if self.shared.contains(name.as_str()) {
                        self.access(name, &[], AccessKind::Write, &mut body)?;
                    }
                }
                StmtKind::Store { array, indices, value } => {
                    self.reads(value, &mut body)?;
                    self.access(array, indices, AccessKind::Write, &mut body)?;
                }
                StmtKind::Loop(inner) => body.push(Node::Loop(self.nest_loop(inner)?)),
                StmtKind::Call(c) => return Err(DependenceError::Call(c.callee.clone())),
                StmtKind::Return(_) => return Err(DependenceError::Return),
            }
        }
        self.loop_stack.pop();
        self.indices.pop();
        Ok(NestLoop { var, lower, upper, step: lp.step, body })
    }
}

fn declared_in<'f>(b: &'f ir::Block, out: &mut BTreeSet<&'f str>) {
    for s in &b.stmts {
        match &s.kind {
            StmtKind::Let { name, .. } => {
                out.insert(name);
            }
            StmtKind::Call(ir::Call { dest: Some(ir::CallDest::Let(name)), .. }) => {
                out.insert(name);
            }
            StmtKind::Loop(lp) => declared_in(&lp.body, out),
            _ => {}
        }
    }
}

fn assigned_in<'f>(b: &'f ir::Block, out: &mut BTreeSet<&'f str>) {
    for s in &b.stmts {
        match &s.kind {
            StmtKind::Assign { name, .. } => {
                out.insert(name);
            }
            StmtKind::Loop(lp) => assigned_in(&lp.body, out),
            _ => {}
        }
    }
}

impl Nest {
    fn build(f: &Function, loop_id: LoopId) -> Result<Nest, DependenceError> {
        let loops = f.loops();
        let r = loops.get(loop_id).ok_or(DependenceError::UnknownLoop(loop_id))?;
        let mut private = BTreeSet::new();
        declared_in(&r.lp.body, &mut private);
        let mut assigned = BTreeSet::new();
        assigned_in(&r.lp.body, &mut assigned);
        let shared = assigned.difference(&private).copied().collect();
        let mut b = Builder {
            f,
            vars: Vec::new(),
            targets: Vec::new(),
            sites: Vec::new(),
            indices: r.enclosing.iter().map(|l| l.index.as_str()).collect(),
            shared,
            loop_stack: Vec::new(),
        };
        let root = b.nest_loop(r.lp)?;

        let mut inner = BTreeSet::new();
        fn walk(l: &NestLoop, out: &mut BTreeSet<usize>) {
            out.insert(l.var);
            for n in &l.body {
                if let Node::Loop(c) = n {
                    walk(c, out);
                }
            }
        }
        walk(&root, &mut inner);

        // Invariant variables the nest reads, closed over the bounds of the
        // enclosing loops that define them.
        let mut relevant: BTreeSet<usize> = (0..b.vars.len()).filter(|s| !inner.contains(s)).collect();
        let mut outer = Vec::new();
        for lp in r.enclosing.iter().rev() {
            let Some(var) = b.vars.iter().position(|v| *v == lp.index) else { continue };
            if !relevant.contains(&var) {
                continue;
            }
            let lower = b.bound(&lp.lower)?;
            let upper = b.bound(&lp.upper)?;
            relevant.extend(lower.slots().chain(upper.slots()));
            outer.push(NestLoop { var, lower, upper, step: lp.step, body: Vec::new() });
        }
        outer.reverse();
        let outer_vars: BTreeSet<usize> = outer.iter().map(|l| l.var).collect();
        let params = relevant.iter().copied().filter(|s| !outer_vars.contains(s)).collect();
        Ok(Nest { vars: b.vars, targets: b.targets, sites: b.sites, root, outer, params, inner })
    }

    /// Every same-target pair with a write is separated by some subscript
    /// `k*L + R + c` where `R` has no inner indices and is identical on both
    /// sides, and the constants differ by zero or by a non-multiple of
    /// `k*step`.
    fn symbolic_proof(&self) -> bool {
        let l = self.root.var;
        let step = self.root.step as i128;
        let separated = |a: &Lin, b: &Lin| -> bool {
            let k = a.coeff(l);
            if k == 0 || k != b.coeff(l) {
                return false;
            }
            let invariant = |x: &Lin| x.slots().all(|s| s == l || !self.inner.contains(&s));
            if !invariant(a) || !invariant(b) {
                return false;
            }
            let rest = |x: &Lin| {
                let mut t: Vec<(usize, i64)> = x.terms.iter().copied().filter(|(s, _)| *s != l).collect();
                t.sort_unstable();
                t
            };
            if rest(a) != rest(b) {
                return false;
            }
            let diff = b.constant as i128 - a.constant as i128;
            diff == 0 || diff % (k as i128 * step) != 0
        };
        for (i, a) in self.sites.iter().enumerate() {
            for b in &self.sites[i..] {
                if a.target != b.target || (a.kind == AccessKind::Read && b.kind == AccessKind::Read) {
                    continue;
                }
                if a.subs.len() != b.subs.len() || !a.subs.iter().zip(&b.subs).any(|(x, y)| separated(x, y)) {
                    return false;
                }
            }
        }
        true
    }

    fn slot_of(&self, name: &str) -> Option<usize> {
        self.vars.iter().position(|v| v == name)
    }

    /// Searches every instance of the tested loop for a cross-iteration
    /// conflict. `fixed` pins parameters or enclosing indices; unpinned
    /// parameters take `fill`.
    fn enumerate(&self, fixed: &[(usize, i64)], fill: i64, budget: &mut u64) -> Scan {
        let mut env = alloc::vec![fill; self.vars.len()];
        let mut pinned = alloc::vec![false; self.vars.len()];
        for &(s, v) in fixed {
            env[s] = v;
            pinned[s] = true;
        }
        let mut scan = Scanner { nest: self, budget, cells: BTreeMap::new() };
        scan.outer(0, &mut env, &pinned)
    }

    fn witness(&self, env: &[i64], target: usize, cell: Vec<i64>, a: &Inst, b: &Inst) -> Witness {
        let inst = |i: &Inst| {
            let site = &self.sites[i.site];
            AccessInstance {
                kind: site.kind,
                subscripts: site.exprs.clone(),
                iteration: site.loops.iter().map(|s| self.vars[*s].clone()).zip(i.iter.iter().copied()).collect(),
            }
        };
        let bindings = self
            .outer
            .iter()
            .map(|l| l.var)
            .chain(self.params.iter().copied())
            .map(|s| (self.vars[s].clone(), env[s]))
            .collect();
        Witness {
            array: self.targets[target].clone(),
            cell,
            loop_index: self.vars[self.root.var].clone(),
            bindings,
            first: inst(a),
            second: inst(b),
        }
    }
}

enum Scan {
    Clean,
    Conflict(Box<Witness>),
    OverBudget,
}

#[derive(Clone)]
struct Inst {
    site: usize,
    /// Values of `sites[site].loops`; the first is the tested loop's index.
    iter: Vec<i64>,
}

impl Inst {
    fn l(&self) -> i64 {
        self.iter[0]
    }
}

struct Cell {
    first: Inst,
    /// Some access from a different iteration than `first`.
    other: Option<Inst>,
    write: Option<Inst>,
}

struct Scanner<'n, 'b> {
    nest: &'n Nest,
    budget: &'b mut u64,
    cells: BTreeMap<(usize, Vec<i64>), Cell>,
}

enum Step {
    Go,
    Stop(Scan),
}

fn range(l: &NestLoop, env: &[i64]) -> Option<(i64, i64)> {
    Some((l.lower.eval(env)?, l.upper.eval(env)?))
}

impl Scanner<'_, '_> {
    fn spend(&mut self) -> bool {
        if *self.budget == 0 {
            return false;
        }
        *self.budget -= 1;
        true
    }

    fn outer(&mut self, k: usize, env: &mut Vec<i64>, pinned: &[bool]) -> Scan {
        let Some(lp) = self.nest.outer.get(k) else {
            self.cells.clear();
            return match self.run_loop(&self.nest.root, env) {
                Step::Go => Scan::Clean,
                Step::Stop(s) => s,
            };
        };
        if pinned[lp.var] {
            return self.outer(k + 1, env, pinned);
        }
        let Some((lo, hi)) = range(lp, env) else { return Scan::OverBudget };
        let mut v = lo as i128;
        while v < hi as i128 {
            if !self.spend() {
                return Scan::OverBudget;
            }
            env[lp.var] = v as i64;
            match self.outer(k + 1, env, pinned) {
                Scan::Clean => {}
                other => return other,
            }
            v += lp.step as i128;
        }
        Scan::Clean
    }

    fn run_loop(&mut self, lp: &NestLoop, env: &mut Vec<i64>) -> Step {
        let Some((lo, hi)) = range(lp, env) else { return Step::Stop(Scan::OverBudget) };
        let mut v = lo as i128;
        while v < hi as i128 {
            if !self.spend() {
                return Step::Stop(Scan::OverBudget);
            }
            env[lp.var] = v as i64;
            for node in &lp.body {
                let step = match node {
                    Node::Site(s) => self.visit(*s, env),
                    Node::Loop(inner) => self.run_loop(inner, env),
                };
                if let Step::Stop(s) = step {
                    return Step::Stop(s);
                }
            }
            v += lp.step as i128;
        }
        Step::Go
    }

    fn visit(&mut self, s: usize, env: &[i64]) -> Step {
        if !self.spend() {
            return Step::Stop(Scan::OverBudget);
        }
        let site = &self.nest.sites[s];
        let Some(cell) = site.subs.iter().map(|l| l.eval(env)).collect::<Option<Vec<i64>>>() else {
            return Step::Stop(Scan::OverBudget);
        };
        let inst = Inst { site: s, iter: site.loops.iter().map(|v| env[*v]).collect() };
        let key = (site.target, cell);
        let Some(c) = self.cells.get_mut(&key) else {
            let write = (site.kind == AccessKind::Write).then(|| inst.clone());
            self.cells.insert(key, Cell { first: inst, other: None, write });
            return Step::Go;
        };
        let l = inst.l();
        let partner = match site.kind {
            AccessKind::Write if c.first.l() != l => Some(&c.first),
            AccessKind::Write => c.other.as_ref(),
            AccessKind::Read => c.write.as_ref().filter(|w| w.l() != l),
        };
        if let Some(p) = partner {
            let w = self.nest.witness(env, key.0, key.1.clone(), p, &inst);
            return Step::Stop(Scan::Conflict(Box::new(w)));
        }
        if c.other.is_none() && c.first.l() != l {
            c.other = Some(inst.clone());
        }
        if c.write.is_none() && site.kind == AccessKind::Write {
            c.write = Some(inst);
        }
        Step::Go
    }
}

/// Decides whether the iterations of loop `loop_id` of `f` can run in any
/// order without changing results.
pub fn check_loop_parallel(f: &Function, loop_id: LoopId) -> Result<DependenceVerdict, DependenceError> {
    let nest = Nest::build(f, loop_id)?;
    let verdict = |parallel, basis, witness| DependenceVerdict { loop_id, parallel, basis, witness };
    let mut budget = DEPENDENCE_BUDGET;
    if nest.params.is_empty() {
        return Ok(match nest.enumerate(&[], 0, &mut budget) {
            Scan::Clean => verdict(true, Basis::Exhaustive, None),
            Scan::Conflict(w) => verdict(false, Basis::Exhaustive, Some(*w)),
            Scan::OverBudget if nest.symbolic_proof() => verdict(true, Basis::Symbolic, None),
            Scan::OverBudget => verdict(false, Basis::Inconclusive, None),
        });
    }
    if nest.symbolic_proof() {
        return Ok(verdict(true, Basis::Symbolic, None));
    }
    Ok(match nest.enumerate(&[], DEFAULT_TRIP as i64, &mut budget) {
        Scan::Clean => verdict(true, Basis::Sampled, None),
        Scan::Conflict(w) => verdict(false, Basis::Sampled, Some(*w)),
        Scan::OverBudget => verdict(false, Basis::Inconclusive, None),
    })
}

/// Names whose values decide the independence of loop `loop_id`: integer
/// parameters and enclosing loop indices the nest depends on.
pub fn dependence_inputs(f: &Function, loop_id: LoopId) -> Result<Vec<String>, DependenceError> {
    let nest = Nest::build(f, loop_id)?;
    Ok(nest.outer.iter().map(|l| l.var).chain(nest.params.iter().copied()).map(|s| nest.vars[s].clone()).collect())
}

/// Exact independence check of one instance of the loop, with every input
/// named by [`dependence_inputs`] bound.
pub(crate) fn holds_independent(f: &Function, loop_id: LoopId, bindings: &[(&str, i64)]) -> bool {
    let Ok(nest) = Nest::build(f, loop_id) else { return false };
    let fixed: Vec<(usize, i64)> = bindings.iter().filter_map(|(n, v)| Some((nest.slot_of(n)?, *v))).collect();
    let mut budget = DEPENDENCE_BUDGET;
    matches!(nest.enumerate(&fixed, 0, &mut budget), Scan::Clean)
}

/// Execution plan chosen for one examined loop.
#[derive(Debug, Clone, PartialEq)]
pub struct LoopSchedule {
    pub loop_id: LoopId,
    pub index: String,
    pub parallel: bool,
    /// Parallel only after re-proving independence for the actual inputs.
    pub recheck: bool,
    pub basis: Basis,
    pub vector_width: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FunctionSchedule {
    pub function: String,
    pub loops: Vec<LoopSchedule>,
}

impl FunctionSchedule {
    pub fn parallel_loops(&self) -> impl Iterator<Item = &LoopSchedule> {
        self.loops.iter().filter(|l| l.parallel)
    }
}

impl fmt::Display for FunctionSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:", self.function)?;
        if self.loops.is_empty() {
            return f.write_str(" no SCoP loops");
        }
        for (k, l) in self.loops.iter().enumerate() {
            let plan = match (l.parallel, l.recheck) {
                (true, true) => "parallel (rechecked)",
                (true, false) => "parallel",
                (false, _) if l.vector_width > 1 => "lanes",
                (false, _) => "sequential",
            };
            write!(f, "{} loop {} ({}) {plan} [{}]", if k > 0 { ";" } else { "" }, l.loop_id, l.index, l.basis)?;
            if l.vector_width > 1 {
                write!(f, " x{}", l.vector_width)?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OptimizeError {
    #[error("remote part version {0} is not supported")]
    Version(u32),
    #[error("remote part is invalid: {}", join(.0))]
    Invalid(Vec<Diagnostic>),
    #[error("dependence test failed in `{function}`: {error}")]
    Dependence { function: String, error: DependenceError },
}

fn join(diags: &[Diagnostic]) -> String {
    diags.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("; ")
}

/// A validated remote part with its execution plan.
#[derive(Debug, Clone)]
pub struct ExecutablePart {
    interp: Interpreter,
    exported: Vec<String>,
    pub workers: usize,
    pub schedules: Vec<FunctionSchedule>,
}

/// Validates the remote part, re-detects its SCoPs, and plans execution:
/// on each path down from a SCoP root, the first loop proven independent
/// runs in `workers` contiguous chunks; innermost store-only loops beneath
/// it that are proven independent without sampling are evaluated in lane
/// groups of `vector_width`.
pub fn optimize(rp: &RemotePart, workers: usize, vector_width: usize) -> Result<ExecutablePart, OptimizeError> {
    if rp.version != REMOTE_PART_VERSION {
        return Err(OptimizeError::Version(rp.version));
    }
    let program = rp.program();
    let diags = ir::validate(&program);
    if !diags.is_empty() {
        return Err(OptimizeError::Invalid(diags));
    }
    let mut code = compile::compile(&program);
    let mut schedules = Vec::new();
    for e in &rp.functions {
        let f = program.function(&e.function.name).expect("exported function is in the program");
        let fi = code.func_index(&f.name).expect("compiled");
        let loops = f.loops();
        let mut planner = Planner { f, loops: &loops, out: Vec::new(), vector_width };
        for scop in detect_scops(f, rp.alias) {
            for &root in &scop.roots {
                planner.descend(root).map_err(|error| OptimizeError::Dependence { function: f.name.clone(), error })?;
            }
        }
        for s in &planner.out {
            let recheck = if s.recheck {
                let names = dependence_inputs(f, s.loop_id)
                    .map_err(|error| OptimizeError::Dependence { function: f.name.clone(), error })?;
                let visible = code.int_slots_at(fi, s.loop_id).expect("loop exists");
                let inputs = names
                    .into_iter()
                    .map(|n| {
                        let slot = visible.iter().find(|(v, _)| *v == n).expect("input is visible").1;
                        (n, slot)
                    })
                    .collect();
                code.rechecks.push(Recheck { function: f.clone(), loop_id: s.loop_id, inputs });
                Some(code.rechecks.len() - 1)
            } else {
                None
            };
            let lp = code.loop_mut(fi, s.loop_id).expect("loop exists");
            lp.plan.parallel = s.parallel;
            lp.plan.recheck = recheck;
            lp.plan.vector_width = s.vector_width;
        }
        schedules.push(FunctionSchedule { function: f.name.clone(), loops: planner.out });
    }
    Ok(ExecutablePart {
        interp: Interpreter::from_parts(program, code),
        exported: rp.functions.iter().map(|e| e.function.name.clone()).collect(),
        workers: workers.max(1),
        schedules,
    })
}

struct Planner<'f, 'l> {
    f: &'f Function,
    loops: &'l [ir::LoopRef<'f>],
    out: Vec<LoopSchedule>,
    vector_width: usize,
}

impl Planner<'_, '_> {
    fn children(&self, id: LoopId) -> Vec<LoopId> {
        let lp = self.loops[id].lp;
        self.loops.iter().filter(|r| r.enclosing.last().is_some_and(|p| core::ptr::eq(*p, lp))).map(|r| r.id).collect()
    }

    fn schedule(&self, v: &DependenceVerdict, parallel: bool) -> LoopSchedule {
        LoopSchedule {
            loop_id: v.loop_id,
            index: self.loops[v.loop_id].lp.index.clone(),
            parallel,
            recheck: parallel && v.basis == Basis::Sampled,
            basis: v.basis,
            vector_width: 1,
        }
    }

    fn descend(&mut self, id: LoopId) -> Result<(), DependenceError> {
        let v = check_loop_parallel(self.f, id)?;
        if v.parallel {
            self.out.push(self.schedule(&v, true));
            return self.vectorize(id);
        }
        self.out.push(self.schedule(&v, false));
        for c in self.children(id) {
            self.descend(c)?;
        }
        Ok(())
    }

    fn vectorize(&mut self, id: LoopId) -> Result<(), DependenceError> {
        if self.vector_width <= 1 {
            return Ok(());
        }
        let kids = self.children(id);
        if !kids.is_empty() {
            for c in kids {
                self.vectorize(c)?;
            }
            return Ok(());
        }
        let lp = self.loops[id].lp;
        if !lp.body.stmts.iter().all(|s| matches!(s.kind, StmtKind::Store { .. })) {
            return Ok(());
        }
        let v = check_loop_parallel(self.f, id)?;
        if !v.parallel || !matches!(v.basis, Basis::Exhaustive | Basis::Symbolic) {
            return Ok(());
        }
        let width = self.vector_width.min(crate::interp::MAX_LANES);
        match self.out.iter_mut().find(|s| s.loop_id == id) {
            Some(s) => s.vector_width = width,
            None => {
                let mut s = self.schedule(&v, false);
                s.vector_width = width;
                self.out.push(s);
            }
        }
        Ok(())
    }
}

/// A call that could not be completed; the text is sent back as FAULT.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{0}")]
pub struct CallFault(pub String);

impl From<RuntimeError> for CallFault {
    fn from(e: RuntimeError) -> Self {
        CallFault(e.to_string())
    }
}

impl ExecutablePart {
    pub fn program(&self) -> &ir::Program {
        self.interp.program()
    }

    pub fn exported(&self) -> &[String] {
        &self.exported
    }

    pub fn schedule(&self, function: &str) -> Option<&FunctionSchedule> {
        self.schedules.iter().find(|s| s.function == function)
    }

    /// Runs an exported function with the given runner. Returns the result,
    /// every array argument in argument order, and the execution time.
    pub fn execute_call(
        &self,
        req: &CallRequest,
        runner: &dyn ParallelRunner,
        clock: Option<&dyn Clock>,
    ) -> Result<CallResponse, CallFault> {
        if !self.exported.contains(&req.function) {
            return Err(CallFault(alloc::format!("`{}` is not exported by the remote part", req.function)));
        }
        let mut args: Vec<Value> = req.args.clone();
        let out = self.interp.call(&req.function, &mut args, CallOptions { hook: None, runner: Some(runner), clock })?;
        let arrays = args.into_iter().filter(Value::is_array).collect();
        Ok(CallResponse { result: out.result, arrays, raw_ns: out.stats.wall_ns.unwrap_or(0) })
    }

    /// Answers a CALL message with RESULT or FAULT.
    pub fn answer(&self, m: &Message, runner: &dyn ParallelRunner, clock: Option<&dyn Clock>) -> Message {
        let reply = CallRequest::from_message(m)
            .map_err(|e| CallFault(e.to_string()))
            .and_then(|req| self.execute_call(&req, runner, clock));
        match reply {
            Ok(resp) => resp.to_message(),
            Err(fault) => Message::new(Kind::Fault, fault.0),
        }
    }
}
