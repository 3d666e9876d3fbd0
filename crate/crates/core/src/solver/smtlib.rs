//! SMT-LIB2 emission (logic `QF_LIRA`).
//!
//! Boolean-sorted variables are declared `Int` and bounded to `[0, 1]` so
//! that `b = 1` stays a linear atom. Rationals are written `(/ p q)`, never
//! as decimals.

use std::fmt::Write;

use num_traits::{One, Signed, Zero};

use crate::formula::{Formula, LinExpr, Rel, Sort, Term};
use crate::rational::Rational;

pub fn symbol(name: &str) -> String {
    let simple = !name.is_empty()
        && !name.starts_with(|c: char| c.is_ascii_digit())
        && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
        && !matches!(name, "true" | "false" | "and" | "or" | "not" | "let" | "ite");
    if simple {
        name.to_string()
    } else {
        format!("|{name}|")
    }
}

pub fn number(q: &Rational) -> String {
    let mag = |q: &Rational| {
        if q.is_integer() {
            q.to_integer().to_string()
        } else {
            format!("(/ {} {})", q.numer(), q.denom())
        }
    };
    if q.is_negative() {
        format!("(- {})", mag(&-q.clone()))
    } else {
        mag(q)
    }
}

fn expr(e: &LinExpr) -> String {
    let mut parts: Vec<String> = e
        .terms()
        .map(|(v, c)| {
            if c.is_one() {
                symbol(v.name())
            } else {
                format!("(* {} {})", number(c), symbol(v.name()))
            }
        })
        .collect();
    if !e.constant_term().is_zero() || parts.is_empty() {
        parts.push(number(e.constant_term()));
    }
    if parts.len() == 1 {
        parts.pop().unwrap()
    } else {
        format!("(+ {})", parts.join(" "))
    }
}

fn term(t: &Term, out: &mut String) {
    match t {
        Term::Const(b) => out.push_str(if *b { "true" } else { "false" }),
        Term::Atom(a) => {
            let (l, r) = (expr(&a.lhs), expr(&a.rhs));
            let op = match a.rel {
                Rel::Eq | Rel::Ne => "=",
                Rel::Lt => "<",
                Rel::Le => "<=",
                Rel::Gt => ">",
                Rel::Ge => ">=",
            };
            if a.rel == Rel::Ne {
                let _ = write!(out, "(not (= {l} {r}))");
            } else {
                let _ = write!(out, "({op} {l} {r})");
            }
        }
        Term::Not(inner) => {
            out.push_str("(not ");
            term(inner, out);
            out.push(')');
        }
        Term::And(ts) | Term::Or(ts) => {
            out.push_str(if matches!(t, Term::And(_)) { "(and" } else { "(or" });
            for t in ts {
                out.push(' ');
                term(t, out);
            }
            out.push(')');
        }
    }
}

pub fn emit_smtlib(f: &Formula) -> String {
    let mut out = String::from("(set-logic QF_LIRA)\n");
    let mut bounds = Vec::new();
    for (v, s) in f.sorts() {
        let sort = match s {
            Sort::Real => "Real",
            Sort::Int | Sort::Bool => "Int",
        };
        let name = symbol(v.name());
        let _ = writeln!(out, "(declare-const {name} {sort})");
        if *s == Sort::Bool {
            bounds.push(format!("(<= 0 {name})"));
            bounds.push(format!("(<= {name} 1)"));
        }
    }
    let mut body = String::new();
    term(f.term(), &mut body);
    let asserted = if bounds.is_empty() {
        body
    } else if matches!(f.term(), Term::Const(true)) {
        format!("(and {})", bounds.join(" "))
    } else {
        format!("(and {} {body})", bounds.join(" "))
    };
    let _ = writeln!(out, "(assert {asserted})");
    out.push_str("(check-sat)\n(get-model)\n");
    out
}
