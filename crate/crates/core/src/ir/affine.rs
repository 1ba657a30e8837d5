use alloc::string::String;
use alloc::vec::Vec;

use super::{BinOp, Expr};

/// Integer-linear combination of named variables plus a constant.
///
/// Terms keep the order in which variables first appear and never carry a
/// zero coefficient, so equal expressions built the same way compare equal.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct AffineExpr {
    pub terms: Vec<(String, i64)>,
    pub constant: i64,
}

impl AffineExpr {
    pub fn constant(c: i64) -> Self {
        AffineExpr { terms: Vec::new(), constant: c }
    }

    pub fn var(name: &str) -> Self {
        AffineExpr { terms: alloc::vec![(name.into(), 1)], constant: 0 }
    }

    pub fn is_constant(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn coeff(&self, name: &str) -> i64 {
        self.terms.iter().find(|(n, _)| n == name).map_or(0, |(_, c)| *c)
    }

    pub fn vars(&self) -> impl Iterator<Item = &str> {
        self.terms.iter().map(|(n, _)| n.as_str())
    }

    /// Converts an expression to affine form if it is an integer-linear
    /// combination of variables accepted by `allowed`.
    pub fn from_expr(e: &Expr, allowed: &dyn Fn(&str) -> bool) -> Option<Self> {
        match e {
            Expr::Int(v) => Some(Self::constant(*v)),
            Expr::Var(name) if allowed(name) => Some(Self::var(name)),
            Expr::Neg(inner) => Self::from_expr(inner, allowed)?.scale(-1),
            Expr::Binary { op, lhs, rhs } => {
                let l = Self::from_expr(lhs, allowed)?;
                let r = Self::from_expr(rhs, allowed)?;
                match op {
                    BinOp::Add => l.add(&r),
                    BinOp::Sub => l.add(&r.scale(-1)?),
                    BinOp::Mul if l.is_constant() => r.scale(l.constant),
                    BinOp::Mul if r.is_constant() => l.scale(r.constant),
                    _ => None,
                }
            }
            _ => None,
        }
    }

    pub fn scale(&self, k: i64) -> Option<Self> {
        if k == 0 {
            return Some(Self::constant(0));
        }
        let mut terms = Vec::with_capacity(self.terms.len());
        for (n, c) in &self.terms {
            terms.push((n.clone(), c.checked_mul(k)?));
        }
        Some(AffineExpr { terms, constant: self.constant.checked_mul(k)? })
    }

    pub fn add(&self, other: &Self) -> Option<Self> {
        let mut out = self.clone();
        for (n, c) in &other.terms {
            match out.terms.iter_mut().find(|(m, _)| m == n) {
                Some(slot) => slot.1 = slot.1.checked_add(*c)?,
                None => out.terms.push((n.clone(), *c)),
            }
        }
        out.terms.retain(|(_, c)| *c != 0);
        out.constant = out.constant.checked_add(other.constant)?;
        Some(out)
    }

    /// Evaluates with `lookup` supplying variable values; `None` on overflow
    /// or an unbound variable.
    pub fn eval(&self, lookup: &dyn Fn(&str) -> Option<i64>) -> Option<i64> {
        let mut acc = self.constant;
        for (n, c) in &self.terms {
            acc = acc.checked_add(c.checked_mul(lookup(n)?)?)?;
        }
        Some(acc)
    }

    /// Rebuilds an expression tree equivalent to this affine form.
    pub fn to_expr(&self) -> Expr {
        let mut acc: Option<Expr> = None;
        for (n, c) in &self.terms {
            let term = if *c == 1 {
                Expr::var(n)
            } else {
                Expr::binary(BinOp::Mul, Expr::Int(*c), Expr::var(n))
            };
            acc = Some(match acc {
                None => term,
                Some(a) => Expr::binary(BinOp::Add, a, term),
            });
        }
        match acc {
            None => Expr::Int(self.constant),
            Some(a) if self.constant == 0 => a,
            Some(a) => Expr::binary(BinOp::Add, a, Expr::Int(self.constant)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::parser::parse_expr_for_test;

    fn aff(src: &str) -> Option<AffineExpr> {
        AffineExpr::from_expr(&parse_expr_for_test(src), &|_| true)
    }

    #[test]
    fn linear_forms_are_recognised() {
        let a = aff("2*i + n - 1").unwrap();
        assert_eq!(a.terms, alloc::vec![("i".into(), 2), ("n".into(), 1)]);
        assert_eq!(a.constant, -1);
        let b = aff("(i + 1) * 3 - i").unwrap();
        assert_eq!(b.coeff("i"), 2);
        assert_eq!(b.constant, 3);
        assert!(aff("i - i").unwrap().is_constant());
    }

    #[test]
    fn products_and_division_are_rejected() {
        assert!(aff("i * j").is_none());
        assert!(aff("i / 2").is_none());
        assert!(aff("A[i]").is_none());
        assert!(aff("1.5").is_none());
    }

    #[test]
    fn eval_uses_bindings() {
        let a = aff("2*i + n - 1").unwrap();
        let v = a.eval(&|n| match n {
            "i" => Some(3),
            "n" => Some(10),
            _ => None,
        });
        assert_eq!(v, Some(15));
        assert_eq!(a.eval(&|_| None), None);
    }
}
