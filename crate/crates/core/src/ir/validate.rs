use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use super::{Block, CallDest, Expr, Function, Program, ScalarType, Span, StmtKind, ValueType};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiagnosticKind {
    DuplicateName,
    UnknownIdentifier,
    UnknownFunction,
    TypeMismatch,
    BadLoop,
    BadArray,
    BadCall,
    BadReturn,
    Recursion,
    NoEntry,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub kind: DiagnosticKind,
    pub function: Option<String>,
    pub span: Option<Span>,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(s) = self.span {
            write!(f, "{s}: ")?;
        }
        if let Some(func) = &self.function {
            write!(f, "in `{func}`: ")?;
        }
        f.write_str(&self.message)
    }
}

/// Checks every structural and typing invariant of the IR. Returns one
/// diagnostic per violation; an empty list means the program is valid.
pub fn validate(p: &Program) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for f in &p.functions {
        if !seen.insert(f.name.as_str()) {
            out.push(Diagnostic {
                kind: DiagnosticKind::DuplicateName,
                function: None,
                span: Some(f.span),
                message: format!("duplicate function `{}`", f.name),
            });
        }
    }
    if p.functions.is_empty() {
        out.push(Diagnostic {
            kind: DiagnosticKind::NoEntry,
            function: None,
            span: None,
            message: "program has no functions".into(),
        });
    } else if p.function(&p.entry).is_none() {
        out.push(Diagnostic {
            kind: DiagnosticKind::NoEntry,
            function: None,
            span: None,
            message: format!("entry function `{}` is not defined", p.entry),
        });
    }
    for f in &p.functions {
        FunctionChecker::new(p, f, &mut out).check();
    }
    check_call_graph(p, &mut out);
    out
}

fn check_call_graph(p: &Program, out: &mut Vec<Diagnostic>) {
    // Depth-first search for a cycle through defined functions.
    let index: BTreeMap<&str, usize> =
        p.functions.iter().enumerate().map(|(i, f)| (f.name.as_str(), i)).collect();
    let edges: Vec<Vec<usize>> = p
        .functions
        .iter()
        .map(|f| f.callees().iter().filter_map(|c| index.get(c).copied()).collect())
        .collect();
    // 0 = unvisited, 1 = on stack, 2 = done
    let mut state = alloc::vec![0u8; p.functions.len()];
    let mut reported = BTreeSet::new();
    fn dfs(
        v: usize,
        edges: &[Vec<usize>],
        state: &mut [u8],
        p: &Program,
        reported: &mut BTreeSet<usize>,
        out: &mut Vec<Diagnostic>,
    ) {
        state[v] = 1;
        for &w in &edges[v] {
            if state[w] == 1 {
                if reported.insert(w) {
                    out.push(Diagnostic {
                        kind: DiagnosticKind::Recursion,
                        function: Some(p.functions[w].name.clone()),
                        span: Some(p.functions[w].span),
                        message: format!("recursive call cycle through `{}`", p.functions[w].name),
                    });
                }
            } else if state[w] == 0 {
                dfs(w, edges, state, p, reported, out);
            }
        }
        state[v] = 2;
    }
    for v in 0..p.functions.len() {
        if state[v] == 0 {
            dfs(v, &edges, &mut state, p, &mut reported, out);
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Binding<'a> {
    Param(&'a ValueType),
    Local(ScalarType),
    Index,
}

struct FunctionChecker<'a, 'o> {
    program: &'a Program,
    func: &'a Function,
    out: &'o mut Vec<Diagnostic>,
    scopes: Vec<Vec<(&'a str, Binding<'a>)>>,
    span: Span,
}

impl<'a, 'o> FunctionChecker<'a, 'o> {
    fn new(program: &'a Program, func: &'a Function, out: &'o mut Vec<Diagnostic>) -> Self {
        FunctionChecker { program, func, out, scopes: Vec::new(), span: func.span }
    }

    fn diag(&mut self, kind: DiagnosticKind, message: String) {
        self.out.push(Diagnostic {
            kind,
            function: Some(self.func.name.clone()),
            span: Some(self.span),
            message,
        });
    }

    fn lookup(&self, name: &str) -> Option<Binding<'a>> {
        self.scopes
            .iter()
            .rev()
            .flat_map(|s| s.iter().rev())
            .find(|(n, _)| *n == name)
            .map(|(_, b)| *b)
    }

    fn define(&mut self, name: &'a str, b: Binding<'a>) {
        if self.lookup(name).is_some() {
            self.diag(DiagnosticKind::DuplicateName, format!("`{name}` is already defined"));
        }
        self.scopes.last_mut().expect("scope").push((name, b));
    }

    fn check(mut self) {
        self.scopes.push(Vec::new());
        for p in &self.func.params {
            if let ValueType::Array { shape, .. } = &p.ty {
                if shape.contains(&0) {
                    self.diag(DiagnosticKind::BadArray, format!("array `{}` has a zero extent", p.name));
                } else if p.ty.byte_size().is_none() {
                    self.diag(DiagnosticKind::BadArray, format!("array `{}` is too large", p.name));
                }
            }
            if self.scopes[0].iter().any(|(n, _)| *n == p.name) {
                self.diag(DiagnosticKind::DuplicateName, format!("duplicate parameter `{}`", p.name));
            } else {
                self.scopes[0].push((&p.name, Binding::Param(&p.ty)));
            }
        }
        let body = &self.func.body;
        let n = body.stmts.len();
        self.block(body, true);
        let returns = n > 0 && matches!(body.stmts[n - 1].kind, StmtKind::Return(_));
        if self.func.result.is_some() && !returns {
            self.span = self.func.span;
            self.diag(DiagnosticKind::BadReturn, "missing trailing `return`".into());
        }
    }

    fn block(&mut self, block: &'a Block, top: bool) {
        self.scopes.push(Vec::new());
        let n = block.stmts.len();
        for (i, stmt) in block.stmts.iter().enumerate() {
            self.span = stmt.span;
            match &stmt.kind {
                StmtKind::Let { name, value } => {
                    if let Some(t) = self.expr(value) {
                        self.define(name, Binding::Local(t));
                    }
                }
                StmtKind::Assign { name, value } => {
                    let t = self.expr(value);
                    self.check_assign_target(name, t);
                }
                StmtKind::Store { array, indices, value } => {
                    let vt = self.expr(value);
                    match self.lookup(array) {
                        Some(Binding::Param(ValueType::Array { elem, shape })) => {
                            if indices.len() != shape.len() {
                                self.diag(
                                    DiagnosticKind::BadArray,
                                    format!("`{array}` has rank {}, indexed with {}", shape.len(), indices.len()),
                                );
                            }
                            if let Some(vt) = vt {
                                if vt != *elem {
                                    self.diag(
                                        DiagnosticKind::TypeMismatch,
                                        format!("storing {vt} into {elem} array `{array}`"),
                                    );
                                }
                            }
                        }
                        Some(_) => self.diag(DiagnosticKind::BadArray, format!("`{array}` is not an array")),
                        None => self.diag(DiagnosticKind::UnknownIdentifier, format!("unknown array `{array}`")),
                    }
                    for ix in indices {
                        self.index_expr(ix);
                    }
                }
                StmtKind::Loop(lp) => {
                    if lp.step <= 0 {
                        self.diag(DiagnosticKind::BadLoop, "step must be positive".into());
                    }
                    for bound in [&lp.lower, &lp.upper] {
                        for v in bound.vars() {
                            match self.lookup(v) {
                                Some(Binding::Index) | Some(Binding::Param(ValueType::Scalar(ScalarType::I64))) => {}
                                Some(_) => self.diag(
                                    DiagnosticKind::BadLoop,
                                    format!("loop bound uses `{v}`, which is not a loop index or i64 parameter"),
                                ),
                                None => self.diag(DiagnosticKind::UnknownIdentifier, format!("unknown identifier `{v}`")),
                            }
                        }
                    }
                    self.scopes.push(Vec::new());
                    self.define(&lp.index, Binding::Index);
                    self.block(&lp.body, false);
                    self.scopes.pop();
                }
                StmtKind::Call(call) => {
                    let result = self.call(&call.callee, &call.args);
                    match (&call.dest, result) {
                        (None, _) => {}
                        (Some(dest), Some(None)) => self.diag(
                            DiagnosticKind::BadCall,
                            format!("`{}` returns nothing but its result is assigned to `{}`", call.callee, dest.name()),
                        ),
                        (Some(CallDest::Let(n)), Some(Some(t))) => self.define(n, Binding::Local(t)),
                        (Some(CallDest::Assign(n)), Some(t)) => self.check_assign_target(n, t),
                        (Some(CallDest::Let(n)), None) => self.define(n, Binding::Local(ScalarType::I64)),
                        (Some(CallDest::Assign(_)), None) => {}
                    }
                }
                StmtKind::Return(e) => {
                    let t = self.expr(e);
                    if !(top && i + 1 == n) {
                        self.diag(DiagnosticKind::BadReturn, "`return` must be the last statement of the function".into());
                    }
                    match (self.func.result, t) {
                        (None, _) => self.diag(DiagnosticKind::BadReturn, "`return` in a void function".into()),
                        (Some(r), Some(t)) if r != t => {
                            self.diag(DiagnosticKind::TypeMismatch, format!("returning {t} from a function declared {r}"))
                        }
                        _ => {}
                    }
                }
            }
        }
        self.scopes.pop();
    }

    fn check_assign_target(&mut self, name: &str, t: Option<ScalarType>) {
        match self.lookup(name) {
            Some(Binding::Local(lt)) => {
                if let Some(t) = t {
                    if t != lt {
                        self.diag(DiagnosticKind::TypeMismatch, format!("assigning {t} to {lt} variable `{name}`"));
                    }
                }
            }
            Some(Binding::Index) => self.diag(DiagnosticKind::BadLoop, format!("loop index `{name}` is reassigned")),
            Some(Binding::Param(_)) => self.diag(DiagnosticKind::TypeMismatch, format!("parameter `{name}` cannot be assigned")),
            None => self.diag(DiagnosticKind::UnknownIdentifier, format!("unknown identifier `{name}`")),
        }
    }

    /// Returns `Some(result)` when the callee exists (`result` being its
    /// return type), `None` when it does not.
    fn call(&mut self, callee: &str, args: &'a [Expr]) -> Option<Option<ScalarType>> {
        let Some(target) = self.program.function(callee) else {
            self.diag(DiagnosticKind::UnknownFunction, format!("call to undefined function `{callee}`"));
            for a in args {
                if !matches!(a, Expr::Var(_)) {
                    self.expr(a);
                }
            }
            return None;
        };
        if target.params.len() != args.len() {
            self.diag(
                DiagnosticKind::BadCall,
                format!("`{callee}` takes {} arguments, {} given", target.params.len(), args.len()),
            );
        }
        for (param, arg) in target.params.iter().zip(args) {
            match &param.ty {
                ValueType::Array { .. } => match arg {
                    Expr::Var(name) => match self.lookup(name) {
                        Some(Binding::Param(ty)) if *ty == param.ty => {}
                        Some(Binding::Param(ty)) if ty.is_array() => self.diag(
                            DiagnosticKind::TypeMismatch,
                            format!("argument `{name}` has type {ty}, `{callee}` expects {}", param.ty),
                        ),
                        None => self.diag(DiagnosticKind::UnknownIdentifier, format!("unknown identifier `{name}`")),
                        Some(_) => self.diag(
                            DiagnosticKind::TypeMismatch,
                            format!("`{callee}` expects array argument {}, got scalar `{name}`", param.ty),
                        ),
                    },
                    _ => self.diag(
                        DiagnosticKind::TypeMismatch,
                        format!("array argument to `{callee}` must be an array parameter name"),
                    ),
                },
                ValueType::Scalar(t) => {
                    if let Some(at) = self.expr(arg) {
                        if at != *t {
                            self.diag(
                                DiagnosticKind::TypeMismatch,
                                format!("argument `{}` of `{callee}` expects {t}, got {at}", param.name),
                            );
                        }
                    }
                }
            }
        }
        Some(target.result)
    }

    fn index_expr(&mut self, e: &'a Expr) {
        if let Some(t) = self.expr(e) {
            if t != ScalarType::I64 {
                self.diag(DiagnosticKind::TypeMismatch, format!("array subscript has type {t}, expected i64"));
            }
        }
    }

    /// Type-checks an expression; `None` if its type could not be
    /// determined (a diagnostic has been emitted).
    fn expr(&mut self, e: &'a Expr) -> Option<ScalarType> {
        match e {
            Expr::Int(_) => Some(ScalarType::I64),
            Expr::Float(_) => Some(ScalarType::F64),
            Expr::Var(name) => match self.lookup(name) {
                Some(Binding::Param(ValueType::Scalar(t))) => Some(*t),
                Some(Binding::Param(ty)) => {
                    self.diag(DiagnosticKind::TypeMismatch, format!("array `{name}` of type {ty} used as a scalar"));
                    None
                }
                Some(Binding::Local(t)) => Some(t),
                Some(Binding::Index) => Some(ScalarType::I64),
                None => {
                    self.diag(DiagnosticKind::UnknownIdentifier, format!("unknown identifier `{name}`"));
                    None
                }
            },
            Expr::Load { array, indices } => {
                let t = match self.lookup(array) {
                    Some(Binding::Param(ValueType::Array { elem, shape })) => {
                        if shape.len() != indices.len() {
                            self.diag(
                                DiagnosticKind::BadArray,
                                format!("`{array}` has rank {}, indexed with {}", shape.len(), indices.len()),
                            );
                        }
                        Some(*elem)
                    }
                    Some(_) => {
                        self.diag(DiagnosticKind::BadArray, format!("`{array}` is not an array"));
                        None
                    }
                    None => {
                        self.diag(DiagnosticKind::UnknownIdentifier, format!("unknown array `{array}`"));
                        None
                    }
                };
                for ix in indices {
                    self.index_expr(ix);
                }
                t
            }
            Expr::Neg(inner) => self.expr(inner),
            Expr::Binary { op, lhs, rhs } => {
                let l = self.expr(lhs);
                let r = self.expr(rhs);
                match (l, r) {
                    (Some(l), Some(r)) if l == r => Some(l),
                    (Some(l), Some(r)) => {
                        self.diag(
                            DiagnosticKind::TypeMismatch,
                            format!("operands of `{}` have types {l} and {r}; convert explicitly", op.symbol()),
                        );
                        None
                    }
                    _ => None,
                }
            }
            Expr::Convert { to, arg } => {
                self.expr(arg);
                Some(*to)
            }
        }
    }
}
