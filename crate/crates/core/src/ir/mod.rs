//! The affine mini-IR.
//!
//! A program is a list of functions over `i64`/`f64` scalars and dense,
//! statically sized, row-major arrays. Function bodies contain only scalar
//! definitions and assignments, array stores, counted loops with affine
//! bounds, calls, and a trailing `return`. There are no branches.
//!
//! The textual form (`.bir`) is line oriented:
//!
//! ```text
//! # comment
//! func axpy(n: i64, a: f64, X: f64[64], Y: f64[64]) {
//!   loop i in [0, n) step 1 {
//!     Y[i] = a * X[i] + Y[i]
//!   }
//! }
//! ```

mod affine;
mod lexer;
mod parser;
mod print;
mod validate;

use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

pub use affine::AffineExpr;
pub use parser::{parse_program, parse_unchecked, ParseError};
pub use validate::{validate, Diagnostic, DiagnosticKind};

/// Source position, 1-based.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Span {
    pub line: u32,
    pub col: u32,
}

impl Span {
    pub const fn new(line: u32, col: u32) -> Self {
        Span { line, col }
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ScalarType {
    I64,
    F64,
}

impl ScalarType {
    pub fn name(self) -> &'static str {
        match self {
            ScalarType::I64 => "i64",
            ScalarType::F64 => "f64",
        }
    }
}

impl fmt::Display for ScalarType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Type of a parameter or value. Arrays carry their row-major shape.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum ValueType {
    Scalar(ScalarType),
    Array { elem: ScalarType, shape: Vec<usize> },
}

/// Size of one `i64` or `f64` on the wire and in memory.
pub const SCALAR_BYTES: u64 = 8;

impl ValueType {
    pub const I64: ValueType = ValueType::Scalar(ScalarType::I64);
    pub const F64: ValueType = ValueType::Scalar(ScalarType::F64);

    pub fn array(elem: ScalarType, shape: &[usize]) -> Self {
        ValueType::Array { elem, shape: shape.into() }
    }

    pub fn is_array(&self) -> bool {
        matches!(self, ValueType::Array { .. })
    }

    pub fn scalar(&self) -> Option<ScalarType> {
        match self {
            ValueType::Scalar(s) => Some(*s),
            ValueType::Array { .. } => None,
        }
    }

    pub fn elem(&self) -> ScalarType {
        match self {
            ValueType::Scalar(s) => *s,
            ValueType::Array { elem, .. } => *elem,
        }
    }

    /// Number of scalar elements; 1 for scalars. `None` on overflow.
    pub fn element_count(&self) -> Option<u64> {
        match self {
            ValueType::Scalar(_) => Some(1),
            ValueType::Array { shape, .. } => shape
                .iter()
                .try_fold(1u64, |acc, &e| acc.checked_mul(e as u64)),
        }
    }

    pub fn byte_size(&self) -> Option<u64> {
        self.element_count().and_then(|n| n.checked_mul(SCALAR_BYTES))
    }
}

impl fmt::Display for ValueType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ValueType::Scalar(s) => write!(f, "{s}"),
            ValueType::Array { elem, shape } => {
                write!(f, "{elem}")?;
                for e in shape {
                    write!(f, "[{e}]")?;
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub ty: ValueType,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Program {
    pub functions: Vec<Function>,
    /// Name of the function executed by default: `main` when present,
    /// otherwise the first function.
    pub entry: String,
}

impl Program {
    pub fn new(functions: Vec<Function>) -> Self {
        let entry = default_entry(&functions);
        Program { functions, entry }
    }

    pub fn function(&self, name: &str) -> Option<&Function> {
        self.functions.iter().find(|f| f.name == name)
    }

    pub fn function_index(&self, name: &str) -> Option<usize> {
        self.functions.iter().position(|f| f.name == name)
    }
}

pub(crate) fn default_entry(functions: &[Function]) -> String {
    if functions.iter().any(|f| f.name == "main") {
        "main".into()
    } else {
        functions.first().map(|f| f.name.clone()).unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Function {
    pub name: String,
    pub params: Vec<Param>,
    /// Scalar result, or `None` for void.
    pub result: Option<ScalarType>,
    pub body: Block,
    pub span: Span,
}

/// Identifies a loop within its function by preorder position.
pub type LoopId = usize;

/// A loop together with the loops enclosing it, outermost first.
#[derive(Debug, Clone)]
pub struct LoopRef<'a> {
    pub id: LoopId,
    pub lp: &'a Loop,
    pub enclosing: Vec<&'a Loop>,
}

impl Function {
    pub fn param(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    /// All loops in preorder; a loop's id is its position in this list.
    pub fn loops(&self) -> Vec<LoopRef<'_>> {
        fn walk<'a>(block: &'a Block, stack: &mut Vec<&'a Loop>, out: &mut Vec<LoopRef<'a>>) {
            for stmt in &block.stmts {
                if let StmtKind::Loop(lp) = &stmt.kind {
                    out.push(LoopRef { id: out.len(), lp, enclosing: stack.clone() });
                    stack.push(lp);
                    walk(&lp.body, stack, out);
                    stack.pop();
                }
            }
        }
        let mut out = Vec::new();
        walk(&self.body, &mut Vec::new(), &mut out);
        out
    }

    pub fn has_loops(&self) -> bool {
        self.body.stmts.iter().any(|s| matches!(s.kind, StmtKind::Loop(_)))
    }

    /// Names of functions called anywhere in the body, in first-use order.
    pub fn callees(&self) -> Vec<&str> {
        fn walk<'a>(block: &'a Block, out: &mut Vec<&'a str>) {
            for stmt in &block.stmts {
                match &stmt.kind {
                    StmtKind::Call(c) if !out.contains(&c.callee.as_str()) => out.push(&c.callee),
                    StmtKind::Loop(lp) => walk(&lp.body, out),
                    _ => {}
                }
            }
        }
        let mut out = Vec::new();
        walk(&self.body, &mut out);
        out
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Block {
    pub stmts: Vec<Stmt>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stmt {
    pub kind: StmtKind,
    pub span: Span,
}

impl Stmt {
    pub fn new(kind: StmtKind) -> Self {
        Stmt { kind, span: Span::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StmtKind {
    /// `let x = e` defines a scalar local, visible to the rest of the block.
    Let { name: String, value: Expr },
    /// `x = e` reassigns a local scalar.
    Assign { name: String, value: Expr },
    /// `A[i][j] = e`
    Store { array: String, indices: Vec<Expr>, value: Expr },
    Loop(Loop),
    Call(Call),
    /// Only valid as the final statement of a function body.
    Return(Expr),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Call {
    pub dest: Option<CallDest>,
    pub callee: String,
    /// Scalar arguments are expressions; array arguments are bare names.
    pub args: Vec<Expr>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CallDest {
    Let(String),
    Assign(String),
}

impl CallDest {
    pub fn name(&self) -> &str {
        match self {
            CallDest::Let(n) | CallDest::Assign(n) => n,
        }
    }
}

/// `loop index in [lower, upper) step step { body }`
#[derive(Debug, Clone, PartialEq)]
pub struct Loop {
    pub index: String,
    pub lower: AffineExpr,
    pub upper: AffineExpr,
    pub step: i64,
    pub body: Block,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
        }
    }

    pub(crate) fn precedence(self) -> u8 {
        match self {
            BinOp::Add | BinOp::Sub => 1,
            BinOp::Mul | BinOp::Div => 2,
        }
    }
}

#[derive(Debug, Clone)]
pub enum Expr {
    Int(i64),
    Float(f64),
    Var(String),
    Load { array: String, indices: Vec<Expr> },
    Neg(Box<Expr>),
    Binary { op: BinOp, lhs: Box<Expr>, rhs: Box<Expr> },
    /// Explicit conversion, written `f64(e)` or `i64(e)`.
    Convert { to: ScalarType, arg: Box<Expr> },
}

// Float literals compare by bit pattern so that `-0.0` and `0.0` stay
// distinct through print/parse round trips.
impl PartialEq for Expr {
    fn eq(&self, other: &Self) -> bool {
        use Expr::*;
        match (self, other) {
            (Int(a), Int(b)) => a == b,
            (Float(a), Float(b)) => a.to_bits() == b.to_bits(),
            (Var(a), Var(b)) => a == b,
            (Load { array: a, indices: ia }, Load { array: b, indices: ib }) => a == b && ia == ib,
            (Neg(a), Neg(b)) => a == b,
            (Binary { op: o1, lhs: l1, rhs: r1 }, Binary { op: o2, lhs: l2, rhs: r2 }) => {
                o1 == o2 && l1 == l2 && r1 == r2
            }
            (Convert { to: t1, arg: a1 }, Convert { to: t2, arg: a2 }) => t1 == t2 && a1 == a2,
            _ => false,
        }
    }
}

impl Expr {
    pub fn var(name: &str) -> Self {
        Expr::Var(name.into())
    }

    pub fn load(array: &str, indices: Vec<Expr>) -> Self {
        Expr::Load { array: array.into(), indices }
    }

    pub fn binary(op: BinOp, lhs: Expr, rhs: Expr) -> Self {
        Expr::Binary { op, lhs: Box::new(lhs), rhs: Box::new(rhs) }
    }

    /// Calls `f` on every array load, including loads nested in subscripts.
    pub fn for_each_load<'a>(&'a self, f: &mut impl FnMut(&'a str, &'a [Expr])) {
        match self {
            Expr::Int(_) | Expr::Float(_) | Expr::Var(_) => {}
            Expr::Load { array, indices } => {
                f(array, indices);
                for ix in indices {
                    ix.for_each_load(f);
                }
            }
            Expr::Neg(e) | Expr::Convert { arg: e, .. } => e.for_each_load(f),
            Expr::Binary { lhs, rhs, .. } => {
                lhs.for_each_load(f);
                rhs.for_each_load(f);
            }
        }
    }

    /// Calls `f` on every scalar variable read outside of subscripts.
    pub fn for_each_var<'a>(&'a self, f: &mut impl FnMut(&'a str)) {
        match self {
            Expr::Int(_) | Expr::Float(_) => {}
            Expr::Var(v) => f(v),
            Expr::Load { .. } => {}
            Expr::Neg(e) | Expr::Convert { arg: e, .. } => e.for_each_var(f),
            Expr::Binary { lhs, rhs, .. } => {
                lhs.for_each_var(f);
                rhs.for_each_var(f);
            }
        }
    }
}

impl fmt::Display for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        print::write_program(f, self)
    }
}

impl fmt::Display for Function {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        print::write_function(f, self)
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        print::write_expr(f, self, 0)
    }
}

impl fmt::Display for AffineExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        print::write_affine(f, self)
    }
}
