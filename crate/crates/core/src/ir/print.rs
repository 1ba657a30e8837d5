//! Canonical printer. Its output parses back to an identical tree.

use core::fmt::{self, Write};

use super::{AffineExpr, Block, CallDest, Expr, Function, Program, StmtKind};

pub(super) fn write_program(f: &mut fmt::Formatter<'_>, p: &Program) -> fmt::Result {
    for (i, func) in p.functions.iter().enumerate() {
        if i > 0 {
            f.write_char('\n')?;
        }
        write_function(f, func)?;
    }
    Ok(())
}

pub(super) fn write_function(f: &mut fmt::Formatter<'_>, func: &Function) -> fmt::Result {
    write!(f, "func {}(", func.name)?;
    for (i, p) in func.params.iter().enumerate() {
        if i > 0 {
            f.write_str(", ")?;
        }
        write!(f, "{}: {}", p.name, p.ty)?;
    }
    f.write_char(')')?;
    if let Some(r) = func.result {
        write!(f, " -> {r}")?;
    }
    f.write_str(" {\n")?;
    write_block(f, &func.body, 1)?;
    f.write_str("}\n")
}

fn indent(f: &mut fmt::Formatter<'_>, depth: usize) -> fmt::Result {
    for _ in 0..depth {
        f.write_str("  ")?;
    }
    Ok(())
}

fn write_block(f: &mut fmt::Formatter<'_>, block: &Block, depth: usize) -> fmt::Result {
    for stmt in &block.stmts {
        indent(f, depth)?;
        match &stmt.kind {
            StmtKind::Let { name, value } => write!(f, "let {name} = {value}")?,
            StmtKind::Assign { name, value } => write!(f, "{name} = {value}")?,
            StmtKind::Store { array, indices, value } => {
                f.write_str(array)?;
                for ix in indices {
                    write!(f, "[{ix}]")?;
                }
                write!(f, " = {value}")?;
            }
            StmtKind::Loop(lp) => {
                writeln!(f, "loop {} in [{}, {}) step {} {{", lp.index, lp.lower, lp.upper, lp.step)?;
                write_block(f, &lp.body, depth + 1)?;
                indent(f, depth)?;
                f.write_char('}')?;
            }
            StmtKind::Call(call) => {
                match &call.dest {
                    Some(CallDest::Let(n)) => write!(f, "let {n} = ")?,
                    Some(CallDest::Assign(n)) => write!(f, "{n} = ")?,
                    None => {}
                }
                write!(f, "call {}(", call.callee)?;
                for (i, a) in call.args.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{a}")?;
                }
                f.write_char(')')?;
            }
            StmtKind::Return(e) => write!(f, "return {e}")?,
        }
        f.write_char('\n')?;
    }
    Ok(())
}

const ATOM: u8 = 3;

fn expr_precedence(e: &Expr) -> u8 {
    match e {
        Expr::Binary { op, .. } => op.precedence(),
        _ => ATOM,
    }
}

/// Writes `e`, parenthesised if its precedence is below `min_prec`.
pub(super) fn write_expr(f: &mut fmt::Formatter<'_>, e: &Expr, min_prec: u8) -> fmt::Result {
    let paren = expr_precedence(e) < min_prec;
    if paren {
        f.write_char('(')?;
    }
    match e {
        Expr::Int(v) => write!(f, "{v}")?,
        Expr::Float(v) => write!(f, "{v:?}")?,
        Expr::Var(n) => f.write_str(n)?,
        Expr::Load { array, indices } => {
            f.write_str(array)?;
            for ix in indices {
                f.write_char('[')?;
                write_expr(f, ix, 0)?;
                f.write_char(']')?;
            }
        }
        Expr::Neg(inner) => {
            f.write_char('-')?;
            // `-5` would read back as a negative literal, `--x` is fine but
            // `-(...)` keeps everything unambiguous.
            let needs_paren = matches!(**inner, Expr::Int(_) | Expr::Float(_) | Expr::Neg(_) | Expr::Binary { .. });
            if needs_paren {
                f.write_char('(')?;
                write_expr(f, inner, 0)?;
                f.write_char(')')?;
            } else {
                write_expr(f, inner, ATOM)?;
            }
        }
        Expr::Binary { op, lhs, rhs } => {
            let p = op.precedence();
            write_expr(f, lhs, p)?;
            write!(f, " {} ", op.symbol())?;
            write_expr(f, rhs, p + 1)?;
        }
        Expr::Convert { to, arg } => {
            write!(f, "{to}(")?;
            write_expr(f, arg, 0)?;
            f.write_char(')')?;
        }
    }
    if paren {
        f.write_char(')')?;
    }
    Ok(())
}

pub(super) fn write_affine(f: &mut fmt::Formatter<'_>, a: &AffineExpr) -> fmt::Result {
    if a.terms.is_empty() {
        return write!(f, "{}", a.constant);
    }
    for (i, (name, c)) in a.terms.iter().enumerate() {
        let mag = c.unsigned_abs();
        if i == 0 {
            if *c < 0 {
                f.write_char('-')?;
            }
        } else {
            f.write_str(if *c < 0 { " - " } else { " + " })?;
        }
        if mag != 1 {
            write!(f, "{mag}*")?;
        }
        f.write_str(name)?;
    }
    if a.constant != 0 {
        let mag = a.constant.unsigned_abs();
        f.write_str(if a.constant < 0 { " - " } else { " + " })?;
        write!(f, "{mag}")?;
    }
    Ok(())
}
