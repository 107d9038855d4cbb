//! Pretty-printer regenerating source text from the AST.
//!
//! `parse(print(p))` reproduces the program structurally, which the round
//! trip property test relies on; it is also what `compile` writes out as
//! the `ast` artifact.

use super::ast::*;
use std::fmt::Write;

pub fn print_program(p: &LoopProgram) -> String {
    let mut out = String::new();
    print_decls(&mut out, &p.arrays, &p.scalars);
    print_stage(&mut out, p);
    out
}

pub fn print_staged(staged: &StagedProgram) -> String {
    let mut out = String::new();
    if let Some(first) = staged.stages.first() {
        print_decls(&mut out, &first.arrays, &first.scalars);
    }
    for (i, stage) in staged.stages.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        print_stage(&mut out, stage);
    }
    out
}

fn print_decls(out: &mut String, arrays: &[ArrayDecl], scalars: &[ScalarDecl]) {
    for a in arrays {
        let dims: Vec<String> = a.dims.iter().map(|d| d.to_string()).collect();
        let ty = type_word(a.elem);
        let _ = writeln!(out, "{} :: {}({})", ty, a.name, dims.join(","));
    }
    for s in scalars {
        let _ = writeln!(out, "{} :: {}", type_word(s.elem), s.name);
    }
}

fn type_word(e: crate::value::ElemType) -> &'static str {
    match e {
        crate::value::ElemType::F32 => "real",
        crate::value::ElemType::I32 => "integer",
    }
}

fn print_stage(out: &mut String, p: &LoopProgram) {
    out.push_str("!$omp target parallel do");
    if !p.pragma.privates.is_empty() {
        let _ = write!(out, " private({})", p.pragma.privates.join(","));
    }
    if let Some((op, var)) = &p.pragma.reduction {
        let _ = write!(out, " reduction({}:{})", op.name(), var);
    }
    if !p.pragma.map_to.is_empty() {
        let _ = write!(out, " map(to:{})", p.pragma.map_to.join(","));
    }
    if !p.pragma.map_from.is_empty() {
        let _ = write!(out, " map(from:{})", p.pragma.map_from.join(","));
    }
    out.push('\n');

    let mut depth = 0;
    for ix in &p.nest.indices {
        indent(out, depth);
        let _ = writeln!(out, "do {}={}, {}", ix.name, ix.lo, ix.hi);
        depth += 1;
    }
    print_body(out, &p.nest.body, depth);
    for _ in 0..p.nest.indices.len() {
        depth -= 1;
        indent(out, depth);
        out.push_str("end do\n");
    }
    out.push_str("!$omp end target parallel do\n");
}

fn print_body(out: &mut String, body: &[Stmt], depth: usize) {
    for stmt in body {
        match stmt {
            Stmt::Assign { lhs, rhs, atomic, .. } => {
                if *atomic {
                    indent(out, depth);
                    out.push_str("!$omp atomic\n");
                }
                indent(out, depth);
                let _ = writeln!(out, "{} = {}", print_lvalue(lhs), print_expr(rhs));
            }
            Stmt::SeqLoop { index, body, .. } => {
                indent(out, depth);
                let _ = writeln!(out, "do {}={}, {}", index.name, index.lo, index.hi);
                print_body(out, body, depth + 1);
                indent(out, depth);
                out.push_str("end do\n");
            }
        }
    }
}

fn indent(out: &mut String, depth: usize) {
    for _ in 0..depth {
        out.push_str("  ");
    }
}

fn print_lvalue(lv: &LValue) -> String {
    match lv {
        LValue::Scalar(n) => n.clone(),
        LValue::Element { array, subs } => format!("{array}({})", print_subs(subs)),
    }
}

fn print_subs(subs: &[Subscript]) -> String {
    subs.iter()
        .map(|s| match s.offset {
            0 => s.index.clone(),
            o if o > 0 => format!("{}+{o}", s.index),
            o => format!("{}-{}", s.index, -o),
        })
        .collect::<Vec<_>>()
        .join(",")
}

pub fn print_expr(e: &Expr) -> String {
    expr_prec(e, 0)
}

/// Precedence levels: 0 additive, 1 multiplicative, 2 unary/primary.
fn expr_prec(e: &Expr, parent: u8) -> String {
    match e {
        Expr::Lit { raw, is_int } => {
            if *is_int {
                format!("{}", *raw as i64)
            } else {
                let mut s = format!("{raw}");
                if !s.contains('.') && !s.contains('e') && !s.contains("inf") && !s.contains("NaN") {
                    s.push_str(".0");
                }
                s
            }
        }
        Expr::Scalar { name, .. } => name.clone(),
        Expr::ArrayRef { array, subs, .. } => format!("{array}({})", print_subs(subs)),
        Expr::Unary { neg } => {
            let inner = expr_prec(neg, 2);
            maybe_paren(format!("-{inner}"), 2, parent)
        }
        Expr::Binary { op, lhs, rhs } => {
            let prec = match op {
                BinOp::Add | BinOp::Sub => 0,
                BinOp::Mul | BinOp::Div => 1,
            };
            // Right operand gets a tighter context so non-associative chains
            // (a - b + c, a / b * c) re-parse with the same shape.
            let s = format!(
                "{} {} {}",
                expr_prec(lhs, prec),
                op.symbol(),
                expr_prec(rhs, prec + 1)
            );
            maybe_paren(s, prec, parent)
        }
        Expr::Call { f, args, .. } => {
            let args: Vec<String> = args.iter().map(|a| expr_prec(a, 0)).collect();
            format!("{}({})", f.name(), args.join(", "))
        }
    }
}

fn maybe_paren(s: String, prec: u8, parent: u8) -> String {
    if prec < parent {
        format!("({s})")
    } else {
        s
    }
}
