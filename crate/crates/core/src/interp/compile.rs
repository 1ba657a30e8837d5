//! Lowers validated IR to a slot-resolved tree the engine can walk without
//! name lookups.

use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec::Vec;

use crate::ir::{BinOp, Block, CallDest, Expr, Function, LoopId, Program, ScalarType, Span, StmtKind, ValueType};

pub(crate) type Slot = u32;

#[derive(Debug, Clone)]
pub(crate) enum IExpr {
    Const(i64),
    Slot(Slot),
    Load(Box<CLoad>),
    Neg(Box<IExpr>),
    Bin(BinOp, Box<IExpr>, Box<IExpr>, Span),
    FromF(Box<FExpr>),
}

#[derive(Debug, Clone)]
pub(crate) enum FExpr {
    Const(f64),
    Slot(Slot),
    Load(Box<CLoad>),
    Neg(Box<FExpr>),
    Bin(BinOp, Box<FExpr>, Box<FExpr>),
    FromI(Box<IExpr>),
}

#[derive(Debug, Clone)]
pub(crate) struct CLoad {
    /// Index into the function's array slots.
    pub arr: Slot,
    pub idx: Box<[IExpr]>,
    pub span: Span,
    /// Source form of the access, for diagnostics.
    pub text: Box<str>,
}

#[derive(Debug, Clone)]
pub(crate) enum CStmt {
    SetI(Slot, IExpr),
    SetF(Slot, FExpr),
    StoreI { target: CLoad, value: IExpr },
    StoreF { target: CLoad, value: FExpr },
    Loop(Box<CLoop>),
    Call(Box<CCall>),
    ReturnI(IExpr),
    ReturnF(FExpr),
}

/// How the engine runs a loop. Set by the server's optimizer; plain
/// compilation leaves every loop sequential.
#[derive(Debug, Clone, Default)]
pub(crate) struct LoopPlan {
    pub parallel: bool,
    /// Index into [`CompiledProgram::rechecks`] when parallel execution must
    /// be re-proved for the concrete parameter values of each execution.
    pub recheck: Option<usize>,
    /// Lanes per group for chunked evaluation of an independent innermost
    /// loop; 1 disables it.
    pub vector_width: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct CLoop {
    pub id: LoopId,
    pub index: Slot,
    pub lower: IExpr,
    pub upper: IExpr,
    pub step: i64,
    pub body: Vec<CStmt>,
    pub plan: LoopPlan,
}

#[derive(Debug, Clone)]
pub(crate) enum CArg {
    Int(IExpr),
    Float(FExpr),
    /// Caller's array slot.
    Array(Slot),
}

#[derive(Debug, Clone)]
pub(crate) enum Dest {
    Int(Slot),
    Float(Slot),
}

#[derive(Debug, Clone)]
pub(crate) struct CCall {
    pub callee: usize,
    pub args: Vec<CArg>,
    pub dest: Option<Dest>,
}

#[derive(Debug, Clone, Copy)]
pub(crate) enum ParamSlot {
    Int(Slot),
    Float(Slot),
    Array(Slot),
}

#[derive(Debug, Clone)]
pub(crate) struct ArraySlot {
    pub name: String,
    pub elem: ScalarType,
    pub shape: Vec<usize>,
    pub strides: Vec<usize>,
}

#[derive(Debug, Clone)]
pub(crate) struct CFunc {
    pub name: String,
    pub params: Vec<ParamSlot>,
    pub param_types: Vec<ValueType>,
    pub result: Option<ScalarType>,
    pub arrays: Vec<ArraySlot>,
    pub n_int: usize,
    pub n_float: usize,
    /// Name of each int slot, for runtime dependence rechecks.
    pub int_names: Vec<String>,
    pub body: Vec<CStmt>,
    pub loop_count: usize,
}

/// A runtime re-proof of loop independence, evaluated with the concrete
/// values of the variables the loop nest depends on.
#[derive(Debug, Clone)]
pub(crate) struct Recheck {
    pub function: Function,
    pub loop_id: LoopId,
    /// Variables whose values decide independence, with their int slots.
    pub inputs: Vec<(String, Slot)>,
}

#[derive(Debug, Clone)]
pub struct CompiledProgram {
    pub(crate) funcs: Vec<CFunc>,
    pub(crate) rechecks: Vec<Recheck>,
}

impl CompiledProgram {
    pub(crate) fn func_index(&self, name: &str) -> Option<usize> {
        self.funcs.iter().position(|f| f.name == name)
    }

    pub(crate) fn loop_mut(&mut self, func: usize, id: LoopId) -> Option<&mut CLoop> {
        fn find(stmts: &mut [CStmt], id: LoopId) -> Option<&mut CLoop> {
            for s in stmts {
                if let CStmt::Loop(lp) = s {
                    if lp.id == id {
                        return Some(lp);
                    }
                    if let Some(found) = find(&mut lp.body, id) {
                        return Some(found);
                    }
                }
            }
            None
        }
        find(&mut self.funcs.get_mut(func)?.body, id)
    }

    /// Integer parameters and enclosing loop indices visible at the head of
    /// loop `id`, with their slots.
    pub(crate) fn int_slots_at(&self, func: usize, id: LoopId) -> Option<Vec<(String, Slot)>> {
        fn path(stmts: &[CStmt], id: LoopId, out: &mut Vec<Slot>) -> bool {
            for s in stmts {
                if let CStmt::Loop(lp) = s {
                    if lp.id == id {
                        return true;
                    }
                    out.push(lp.index);
                    if path(&lp.body, id, out) {
                        return true;
                    }
                    out.pop();
                }
            }
            false
        }
        let f = self.funcs.get(func)?;
        let mut slots: Vec<Slot> = f
            .params
            .iter()
            .filter_map(|p| match p {
                ParamSlot::Int(s) => Some(*s),
                _ => None,
            })
            .collect();
        if !path(&f.body, id, &mut slots) {
            return None;
        }
        Some(slots.into_iter().map(|s| (f.int_names[s as usize].clone(), s)).collect())
    }
}

/// Compiles a program that has already passed validation.
pub(crate) fn compile(p: &Program) -> CompiledProgram {
    let funcs = p.functions.iter().map(|f| FnCompiler::new(p, f).compile()).collect();
    CompiledProgram { funcs, rechecks: Vec::new() }
}

#[derive(Clone, Copy)]
enum Sym {
    Int(Slot),
    Float(Slot),
    Array(Slot),
}

struct FnCompiler<'a> {
    program: &'a Program,
    func: &'a Function,
    scopes: Vec<Vec<(&'a str, Sym)>>,
    n_int: usize,
    n_float: usize,
    int_names: Vec<String>,
    arrays: Vec<ArraySlot>,
    next_loop: LoopId,
}

impl<'a> FnCompiler<'a> {
    fn new(program: &'a Program, func: &'a Function) -> Self {
        FnCompiler {
            program,
            func,
            scopes: alloc::vec![Vec::new()],
            n_int: 0,
            n_float: 0,
            int_names: Vec::new(),
            arrays: Vec::new(),
            next_loop: 0,
        }
    }

    fn new_int(&mut self, name: &str) -> Slot {
        self.n_int += 1;
        self.int_names.push(name.into());
        (self.n_int - 1) as Slot
    }

    fn new_float(&mut self) -> Slot {
        self.n_float += 1;
        (self.n_float - 1) as Slot
    }

    fn lookup(&self, name: &str) -> Sym {
        self.scopes
            .iter()
            .rev()
            .flat_map(|s| s.iter().rev())
            .find(|(n, _)| *n == name)
            .map(|(_, s)| *s)
            .unwrap_or_else(|| panic!("unresolved name `{name}` in validated program"))
    }

    fn compile(mut self) -> CFunc {
        let mut params = Vec::new();
        for p in &self.func.params {
            let sym = match &p.ty {
                ValueType::Scalar(ScalarType::I64) => Sym::Int(self.new_int(&p.name)),
                ValueType::Scalar(ScalarType::F64) => Sym::Float(self.new_float()),
                ValueType::Array { elem, shape } => {
                    let mut strides = alloc::vec![1usize; shape.len()];
                    for d in (0..shape.len().saturating_sub(1)).rev() {
                        strides[d] = strides[d + 1] * shape[d + 1];
                    }
                    self.arrays.push(ArraySlot { name: p.name.clone(), elem: *elem, shape: shape.clone(), strides });
                    Sym::Array((self.arrays.len() - 1) as Slot)
                }
            };
            params.push(match sym {
                Sym::Int(s) => ParamSlot::Int(s),
                Sym::Float(s) => ParamSlot::Float(s),
                Sym::Array(s) => ParamSlot::Array(s),
            });
            self.scopes[0].push((&p.name, sym));
        }
        let body = self.block(&self.func.body);
        CFunc {
            name: self.func.name.clone(),
            params,
            param_types: self.func.params.iter().map(|p| p.ty.clone()).collect(),
            result: self.func.result,
            arrays: self.arrays,
            n_int: self.n_int,
            n_float: self.n_float,
            int_names: self.int_names,
            body,
            loop_count: self.next_loop,
        }
    }

    fn block(&mut self, block: &'a Block) -> Vec<CStmt> {
        self.scopes.push(Vec::new());
        let mut out = Vec::with_capacity(block.stmts.len());
        for stmt in &block.stmts {
            let span = stmt.span;
            let c = match &stmt.kind {
                StmtKind::Let { name, value } => match self.expr(value, span) {
                    Typed::I(e) => {
                        let s = self.new_int(name);
                        self.scopes.last_mut().unwrap().push((name, Sym::Int(s)));
                        CStmt::SetI(s, e)
                    }
                    Typed::F(e) => {
                        let s = self.new_float();
                        self.scopes.last_mut().unwrap().push((name, Sym::Float(s)));
                        CStmt::SetF(s, e)
                    }
                },
                StmtKind::Assign { name, value } => match (self.lookup(name), self.expr(value, span)) {
                    (Sym::Int(s), Typed::I(e)) => CStmt::SetI(s, e),
                    (Sym::Float(s), Typed::F(e)) => CStmt::SetF(s, e),
                    _ => unreachable!("type mismatch in validated program"),
                },
                StmtKind::Store { array, indices, value } => {
                    let target = self.load(array, indices, span);
                    match self.expr(value, span) {
                        Typed::I(v) => CStmt::StoreI { target, value: v },
                        Typed::F(v) => CStmt::StoreF { target, value: v },
                    }
                }
                StmtKind::Loop(lp) => {
                    let id = self.next_loop;
                    self.next_loop += 1;
                    let lower = self.int_expr(&lp.lower.to_expr(), span);
                    let upper = self.int_expr(&lp.upper.to_expr(), span);
                    self.scopes.push(Vec::new());
                    let index = self.new_int(&lp.index);
                    self.scopes.last_mut().unwrap().push((&lp.index, Sym::Int(index)));
                    let body = self.block(&lp.body);
                    self.scopes.pop();
                    CStmt::Loop(Box::new(CLoop {
                        id,
                        index,
                        lower,
                        upper,
                        step: lp.step,
                        body,
                        plan: LoopPlan { parallel: false, recheck: None, vector_width: 1 },
                    }))
                }
                StmtKind::Call(call) => {
                    let callee_idx = self.program.function_index(&call.callee).expect("validated callee");
                    let callee = &self.program.functions[callee_idx];
                    let args = callee
                        .params
                        .iter()
                        .zip(&call.args)
                        .map(|(p, a)| match (&p.ty, a) {
                            (ValueType::Array { .. }, Expr::Var(name)) => match self.lookup(name) {
                                Sym::Array(s) => CArg::Array(s),
                                _ => unreachable!("array argument"),
                            },
                            _ => match self.expr(a, span) {
                                Typed::I(e) => CArg::Int(e),
                                Typed::F(e) => CArg::Float(e),
                            },
                        })
                        .collect();
                    let dest = call.dest.as_ref().map(|d| match d {
                        CallDest::Let(name) => {
                            let sym = match callee.result.expect("validated result") {
                                ScalarType::I64 => Sym::Int(self.new_int(name)),
                                ScalarType::F64 => Sym::Float(self.new_float()),
                            };
                            self.scopes.last_mut().unwrap().push((name, sym));
                            sym
                        }
                        CallDest::Assign(name) => self.lookup(name),
                    });
                    let dest = dest.map(|s| match s {
                        Sym::Int(s) => Dest::Int(s),
                        Sym::Float(s) => Dest::Float(s),
                        Sym::Array(_) => unreachable!("array destination"),
                    });
                    CStmt::Call(Box::new(CCall { callee: callee_idx, args, dest }))
                }
                StmtKind::Return(e) => match self.expr(e, span) {
                    Typed::I(e) => CStmt::ReturnI(e),
                    Typed::F(e) => CStmt::ReturnF(e),
                },
            };
            out.push(c);
        }
        self.scopes.pop();
        out
    }

    fn load(&mut self, array: &str, indices: &[Expr], span: Span) -> CLoad {
        let arr = match self.lookup(array) {
            Sym::Array(s) => s,
            _ => unreachable!("array"),
        };
        let idx = indices.iter().map(|ix| self.int_expr(ix, span)).collect();
        let text = alloc::format!("{}", Expr::load(array, indices.to_vec())).into();
        CLoad { arr, idx, span, text }
    }

    fn int_expr(&mut self, e: &Expr, span: Span) -> IExpr {
        match self.expr(e, span) {
            Typed::I(e) => e,
            Typed::F(_) => unreachable!("i64 expected"),
        }
    }

    fn expr(&mut self, e: &Expr, span: Span) -> Typed {
        match e {
            Expr::Int(v) => Typed::I(IExpr::Const(*v)),
            Expr::Float(v) => Typed::F(FExpr::Const(*v)),
            Expr::Var(name) => match self.lookup(name) {
                Sym::Int(s) => Typed::I(IExpr::Slot(s)),
                Sym::Float(s) => Typed::F(FExpr::Slot(s)),
                Sym::Array(_) => unreachable!("array used as scalar"),
            },
            Expr::Load { array, indices } => {
                let load = self.load(array, indices, span);
                match self.arrays[load.arr as usize].elem {
                    ScalarType::I64 => Typed::I(IExpr::Load(Box::new(load))),
                    ScalarType::F64 => Typed::F(FExpr::Load(Box::new(load))),
                }
            }
            Expr::Neg(inner) => match self.expr(inner, span) {
                Typed::I(e) => Typed::I(IExpr::Neg(Box::new(e))),
                Typed::F(e) => Typed::F(FExpr::Neg(Box::new(e))),
            },
            Expr::Binary { op, lhs, rhs } => match (self.expr(lhs, span), self.expr(rhs, span)) {
                (Typed::I(l), Typed::I(r)) => Typed::I(IExpr::Bin(*op, Box::new(l), Box::new(r), span)),
                (Typed::F(l), Typed::F(r)) => Typed::F(FExpr::Bin(*op, Box::new(l), Box::new(r))),
                _ => unreachable!("mixed operand types"),
            },
            Expr::Convert { to, arg } => match (to, self.expr(arg, span)) {
                (ScalarType::F64, Typed::I(e)) => Typed::F(FExpr::FromI(Box::new(e))),
                (ScalarType::F64, Typed::F(e)) => Typed::F(e),
                (ScalarType::I64, Typed::F(e)) => Typed::I(IExpr::FromF(Box::new(e))),
                (ScalarType::I64, Typed::I(e)) => Typed::I(e),
            },
        }
    }
}

enum Typed {
    I(IExpr),
    F(FExpr),
}
