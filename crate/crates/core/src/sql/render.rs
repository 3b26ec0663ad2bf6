//! Canonical SQL rendering: uppercase keywords, lowercase aggregate names,
//! single spaces, no trailing semicolon. Reparses to an identical AST.

use core::fmt::{self, Display, Formatter, Write};

use super::ast::*;

impl Display for Select {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        f.write_str("SELECT ")?;
        match &self.projection {
            Projection::Star => f.write_char('*')?,
            Projection::Items(items) => {
                for (i, item) in items.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{item}")?;
                }
            }
        }
        write!(f, " FROM {}", self.table)?;
        if let Some(p) = &self.predicate {
            write!(f, " WHERE {p}")?;
        }
        Ok(())
    }
}

impl Display for SelectItem {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        match self {
            SelectItem::Column(c) => write!(f, "{c}"),
            SelectItem::Aggregate { func, arg } => write!(f, "{}({arg})", func.name()),
        }
    }
}

impl Display for AggArg {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        match self {
            AggArg::Star => f.write_char('*'),
            AggArg::Column(c) => write!(f, "{c}"),
        }
    }
}

impl Display for ColumnRef {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        if let Some(q) = &self.qualifier {
            write!(f, "{q}.")?;
        }
        f.write_str(&self.name)
    }
}

impl Display for Operand {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        match self {
            Operand::Column(c) => write!(f, "{c}"),
            Operand::Literal(v) => write!(f, "{v}"),
            Operand::Subquery(s) => write!(f, "({})", s.query),
        }
    }
}

fn precedence(e: &Expr) -> u8 {
    match e {
        Expr::Or(..) => 1,
        Expr::And(..) => 2,
        Expr::Not(_) => 3,
        _ => 4,
    }
}

fn child(f: &mut Formatter<'_>, e: &Expr, parenthesize: bool) -> fmt::Result {
    if parenthesize {
        write!(f, "({e})")
    } else {
        write!(f, "{e}")
    }
}

impl Display for Expr {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        let prec = precedence(self);
        match self {
            Expr::And(a, b) | Expr::Or(a, b) => {
                let kw = if matches!(self, Expr::And(..)) { "AND" } else { "OR" };
                child(f, a, precedence(a) < prec)?;
                write!(f, " {kw} ")?;
                child(f, b, precedence(b) <= prec)
            }
            Expr::Not(e) => {
                f.write_str("NOT ")?;
                child(f, e, precedence(e) < prec)
            }
            Expr::Compare { left, op, right } => write!(f, "{left} {} {right}", op.symbol()),
            Expr::InList { operand, negated, list } => {
                write!(f, "{operand} {}IN (", if *negated { "NOT " } else { "" })?;
                for (i, v) in list.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{v}")?;
                }
                f.write_char(')')
            }
            Expr::InSubquery { operand, negated, subquery } => {
                write!(f, "{operand} {}IN ({})", if *negated { "NOT " } else { "" }, subquery.query)
            }
        }
    }
}
