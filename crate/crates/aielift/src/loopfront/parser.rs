//! Recursive-descent parser producing [`LoopProgram`]s.
//!
//! Undeclared arrays and scalars are tolerated and inferred from use, so a
//! bare directive-plus-loop snippet parses on its own: array extents come
//! from the loop bounds and subscript offsets, element types default to
//! `real`.

use super::ast::*;
use super::lexer::{lex, TokKind, Token};
use crate::diag::{Diagnostic, Pos};
use crate::value::ElemType;
use std::collections::BTreeMap;

/// Parse a source file containing exactly one offload loop.
pub fn parse(source: &str) -> Result<LoopProgram, Vec<Diagnostic>> {
    let staged = parse_file(source)?;
    match <[_; 1]>::try_from(staged.stages) {
        Ok([only]) => Ok(only),
        Err(stages) => Err(vec![Diagnostic::new(
            Pos::new(1, 1),
            format!("expected exactly one offload loop, found {}", stages.len()),
        )]),
    }
}

/// Parse a source file with one or more offload loops executed in order.
pub fn parse_file(source: &str) -> Result<StagedProgram, Vec<Diagnostic>> {
    let tokens = lex(source).map_err(|d| vec![d])?;
    let mut p = Parser { tokens, at: 0 };
    p.file().map_err(|d| vec![d])
}

struct Parser {
    tokens: Vec<Token>,
    at: usize,
}

struct RawStage {
    pragma: PragmaInfo,
    nest: LoopNest,
}

impl Parser {
    fn file(&mut self) -> Result<StagedProgram, Diagnostic> {
        let mut arrays: Vec<ArrayDecl> = Vec::new();
        let mut scalars: Vec<ScalarDecl> = Vec::new();
        let mut stages: Vec<RawStage> = Vec::new();

        loop {
            self.skip_newlines();
            match self.peek_kind().clone() {
                TokKind::Eof => break,
                TokKind::Ident(w) if w == "real" || w == "integer" => {
                    self.declarations(&w, &mut arrays, &mut scalars)?;
                }
                TokKind::OmpSentinel => {
                    let pragma = self.directive()?;
                    let nest = self.nest()?;
                    self.optional_end_directive()?;
                    stages.push(RawStage { pragma, nest });
                }
                _ => {
                    let t = self.peek();
                    return Err(Diagnostic::new(
                        t.pos,
                        "expected a declaration or an `!$omp target parallel do` directive",
                    ));
                }
            }
        }
        if stages.is_empty() {
            return Err(Diagnostic::new(Pos::new(1, 1), "no offload loop found"));
        }

        let mut program_stages = Vec::new();
        for stage in &stages {
            infer_decls(stage, &mut arrays, &mut scalars)?;
        }
        for RawStage { pragma, nest } in stages {
            program_stages.push(LoopProgram {
                arrays: arrays.clone(),
                scalars: scalars.clone(),
                pragma,
                nest,
            });
        }
        Ok(StagedProgram { stages: program_stages })
    }

    // ---- declarations ------------------------------------------------

    fn declarations(
        &mut self,
        type_word: &str,
        arrays: &mut Vec<ArrayDecl>,
        scalars: &mut Vec<ScalarDecl>,
    ) -> Result<(), Diagnostic> {
        let elem = if type_word == "real" { ElemType::F32 } else { ElemType::I32 };
        self.bump(); // type keyword
        self.expect(&TokKind::DoubleColon, "expected `::` after type name")?;
        loop {
            let (name, pos) = self.ident("expected a name in declaration")?;
            if self.eat(&TokKind::LParen) {
                let mut dims = Vec::new();
                loop {
                    let d = self.integer("expected an array extent")?;
                    if d < 1 {
                        return Err(Diagnostic::new(pos, format!("array `{name}` has non-positive extent {d}")));
                    }
                    dims.push(d as usize);
                    if !self.eat(&TokKind::Comma) {
                        break;
                    }
                }
                self.expect(&TokKind::RParen, "expected `)` after array extents")?;
                if dims.len() > 2 {
                    return Err(Diagnostic::new(pos, format!("array `{name}` has rank {}, only rank 1 and 2 are supported", dims.len())));
                }
                if declared(arrays, scalars, &name) {
                    return Err(Diagnostic::new(pos, format!("`{name}` declared twice")));
                }
                arrays.push(ArrayDecl { name, dims, elem });
            } else {
                if declared(arrays, scalars, &name) {
                    return Err(Diagnostic::new(pos, format!("`{name}` declared twice")));
                }
                scalars.push(ScalarDecl { name, elem });
            }
            if !self.eat(&TokKind::Comma) {
                break;
            }
        }
        self.statement_end()
    }

    // ---- directives ---------------------------------------------------

    fn directive(&mut self) -> Result<PragmaInfo, Diagnostic> {
        self.expect(&TokKind::OmpSentinel, "expected `!$omp`")?;
        for word in ["target", "parallel", "do"] {
            let (w, pos) = self.ident("expected `target parallel do`")?;
            if w != word {
                return Err(Diagnostic::new(pos, format!("expected `{word}` in directive, found `{w}`")));
            }
        }
        let mut pragma = PragmaInfo::default();
        while !matches!(self.peek_kind(), TokKind::Newline | TokKind::Eof) {
            let (clause, pos) = self.ident("expected a clause name")?;
            match clause.as_str() {
                "private" => {
                    let names = self.paren_name_list()?;
                    pragma.privates.extend(names);
                }
                "map" => {
                    self.expect(&TokKind::LParen, "expected `(` after `map`")?;
                    let (dir, dpos) = self.ident("expected `to` or `from`")?;
                    self.expect(&TokKind::Colon, "expected `:` in map clause")?;
                    let mut names = vec![self.ident("expected a name in map clause")?.0];
                    while self.eat(&TokKind::Comma) {
                        names.push(self.ident("expected a name in map clause")?.0);
                    }
                    self.expect(&TokKind::RParen, "expected `)` after map clause")?;
                    match dir.as_str() {
                        "to" => pragma.map_to.extend(names),
                        "from" => pragma.map_from.extend(names),
                        other => {
                            return Err(Diagnostic::new(dpos, format!("unsupported map direction `{other}` (use `to` or `from`)")));
                        }
                    }
                }
                "reduction" => {
                    self.expect(&TokKind::LParen, "expected `(` after `reduction`")?;
                    let op = match self.peek_kind().clone() {
                        TokKind::Plus => {
                            self.bump();
                            ReduceOp::Add
                        }
                        TokKind::Ident(w) if w == "max" => {
                            self.bump();
                            ReduceOp::Max
                        }
                        _ => {
                            let t = self.peek();
                            return Err(Diagnostic::new(t.pos, "unsupported reduction operator (use `+` or `max`)"));
                        }
                    };
                    self.expect(&TokKind::Colon, "expected `:` in reduction clause")?;
                    let (var, vpos) = self.ident("expected a reduction variable")?;
                    self.expect(&TokKind::RParen, "expected `)` after reduction clause")?;
                    if pragma.reduction.is_some() {
                        return Err(Diagnostic::new(vpos, "at most one reduction clause is supported"));
                    }
                    pragma.reduction = Some((op, var));
                }
                other => {
                    return Err(Diagnostic::new(pos, format!("unknown pragma clause `{other}`")));
                }
            }
        }
        self.statement_end()?;
        Ok(pragma)
    }

    fn optional_end_directive(&mut self) -> Result<(), Diagnostic> {
        self.skip_newlines();
        if !matches!(self.peek_kind(), TokKind::OmpSentinel) {
            return Ok(());
        }
        // Could be the `end` directive or the next stage's directive.
        if !matches!(self.peek_kind_at(1), Some(TokKind::Ident(w)) if w == "end") {
            return Ok(());
        }
        self.bump(); // sentinel
        for word in ["end", "target", "parallel", "do"] {
            let (w, pos) = self.ident("expected `end target parallel do`")?;
            if w != word {
                return Err(Diagnostic::new(pos, format!("expected `{word}` in end directive, found `{w}`")));
            }
        }
        self.statement_end()
    }

    // ---- loops and statements ------------------------------------------

    /// Parse the `do` nest following a directive. Directly nested singleton
    /// loops collapse into the parallel nest up to depth 2; anything deeper
    /// or sharing its level with other statements stays a sequential loop.
    fn nest(&mut self) -> Result<LoopNest, Diagnostic> {
        self.skip_newlines();
        let (outer_index, outer_body) = self.do_loop()?;
        let mut indices = vec![outer_index];
        let mut body = outer_body;
        if body.len() == 1 {
            if let Stmt::SeqLoop { .. } = &body[0] {
                let Some(Stmt::SeqLoop { index, body: inner, .. }) = body.pop() else {
                    unreachable!()
                };
                indices.push(index);
                body = inner;
            }
        }
        Ok(LoopNest { indices, body })
    }

    fn do_loop(&mut self) -> Result<(LoopIndex, Vec<Stmt>), Diagnostic> {
        let (kw, pos) = self.ident("expected `do`")?;
        if kw != "do" {
            return Err(Diagnostic::new(pos, format!("expected `do`, found `{kw}`")));
        }
        let (name, _) = self.ident("expected a loop index")?;
        self.expect(&TokKind::Eq, "expected `=` in do statement")?;
        let lo = self.integer("expected a loop lower bound")?;
        self.expect(&TokKind::Comma, "expected `,` between loop bounds")?;
        let hi = self.integer("expected a loop upper bound")?;
        self.statement_end()?;

        let mut body = Vec::new();
        loop {
            self.skip_newlines();
            match self.peek_kind().clone() {
                TokKind::Ident(w) if w == "end" || w == "enddo" => {
                    self.bump();
                    if w == "end" {
                        let (w2, p2) = self.ident("expected `do` after `end`")?;
                        if w2 != "do" {
                            return Err(Diagnostic::new(p2, format!("expected `do` after `end`, found `{w2}`")));
                        }
                    }
                    self.statement_end()?;
                    break;
                }
                TokKind::Ident(w) if w == "do" => {
                    let pos = self.peek().pos;
                    let (index, inner) = self.do_loop()?;
                    body.push(Stmt::SeqLoop { index, body: inner, pos });
                }
                TokKind::OmpSentinel => {
                    let pos = self.peek().pos;
                    self.bump();
                    let (w, wpos) = self.ident("expected `atomic`")?;
                    if w != "atomic" {
                        return Err(Diagnostic::new(wpos, format!("unsupported directive `{w}` inside a loop body")));
                    }
                    self.statement_end()?;
                    self.skip_newlines();
                    let mut stmt = self.assignment()?;
                    if let Stmt::Assign { atomic, .. } = &mut stmt {
                        *atomic = true;
                    }
                    let _ = pos;
                    body.push(stmt);
                }
                TokKind::Eof => {
                    let t = self.peek();
                    return Err(Diagnostic::new(t.pos, format!("missing `end do` for loop `{name}`")));
                }
                _ => body.push(self.assignment()?),
            }
        }
        Ok((LoopIndex { name, lo, hi }, body))
    }

    fn assignment(&mut self) -> Result<Stmt, Diagnostic> {
        let (name, pos) = self.ident("expected an assignment")?;
        let lhs = if self.eat(&TokKind::LParen) {
            let subs = self.subscripts(&name)?;
            LValue::Element { array: name, subs }
        } else {
            LValue::Scalar(name)
        };
        self.expect(&TokKind::Eq, "expected `=` in assignment")?;
        let rhs = self.expr()?;
        self.statement_end()?;
        Ok(Stmt::Assign { lhs, rhs, atomic: false, pos })
    }

    // ---- expressions --------------------------------------------------

    fn expr(&mut self) -> Result<Expr, Diagnostic> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek_kind() {
                TokKind::Plus => BinOp::Add,
                TokKind::Minus => BinOp::Sub,
                _ => break,
            };
            self.bump();
            let rhs = self.term()?;
            lhs = Expr::Binary { op, lhs: Box::new(lhs), rhs: Box::new(rhs) };
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr, Diagnostic> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek_kind() {
                TokKind::Star => BinOp::Mul,
                TokKind::Slash => BinOp::Div,
                _ => break,
            };
            self.bump();
            let rhs = self.unary()?;
            lhs = Expr::Binary { op, lhs: Box::new(lhs), rhs: Box::new(rhs) };
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, Diagnostic> {
        if self.eat(&TokKind::Minus) {
            let e = self.unary()?;
            return Ok(Expr::Unary { neg: Box::new(e) });
        }
        if self.eat(&TokKind::Plus) {
            return self.unary();
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<Expr, Diagnostic> {
        let t = self.peek().clone();
        match t.kind {
            TokKind::Num { raw, is_int } => {
                self.bump();
                Ok(Expr::Lit { raw, is_int })
            }
            TokKind::LParen => {
                self.bump();
                let e = self.expr()?;
                self.expect(&TokKind::RParen, "expected `)`")?;
                Ok(e)
            }
            TokKind::Ident(name) => {
                self.bump();
                let intrinsic = intrinsic_by_name(&name);
                if self.eat(&TokKind::LParen) {
                    if let Some(f) = intrinsic {
                        let mut args = vec![self.expr()?];
                        while self.eat(&TokKind::Comma) {
                            args.push(self.expr()?);
                        }
                        self.expect(&TokKind::RParen, "expected `)` after intrinsic arguments")?;
                        if args.len() != f.arity() {
                            return Err(Diagnostic::new(
                                t.pos,
                                format!("`{}` takes {} argument(s), found {}", f.name(), f.arity(), args.len()),
                            ));
                        }
                        return Ok(Expr::Call { f, args, pos: t.pos });
                    }
                    let subs = self.subscripts(&name)?;
                    Ok(Expr::ArrayRef { array: name, subs, pos: t.pos })
                } else {
                    if intrinsic.is_some() {
                        return Err(Diagnostic::new(t.pos, format!("intrinsic `{name}` used without arguments")));
                    }
                    Ok(Expr::Scalar { name, pos: t.pos })
                }
            }
            _ => Err(Diagnostic::new(t.pos, "expected an expression")),
        }
    }

    /// Subscript list after `name(`. Each subscript must be affine:
    /// `index`, `index + c` or `index - c`.
    fn subscripts(&mut self, array: &str) -> Result<Vec<Subscript>, Diagnostic> {
        let mut subs = Vec::new();
        loop {
            let t = self.peek().clone();
            let TokKind::Ident(index) = t.kind else {
                return Err(Diagnostic::new(
                    t.pos,
                    format!("subscript of `{array}` must be affine (`index` or `index ± constant`)"),
                ));
            };
            self.bump();
            let mut offset = 0i64;
            match self.peek_kind().clone() {
                TokKind::Plus | TokKind::Minus => {
                    let negative = matches!(self.peek_kind(), TokKind::Minus);
                    self.bump();
                    let c = self.integer("expected a constant subscript offset")?;
                    offset = if negative { -c } else { c };
                }
                TokKind::Star | TokKind::Slash => {
                    return Err(Diagnostic::new(
                        t.pos,
                        format!("subscript of `{array}` is not affine; only `index ± constant` is supported"),
                    ));
                }
                _ => {}
            }
            subs.push(Subscript { index, offset });
            if !self.eat(&TokKind::Comma) {
                break;
            }
        }
        self.expect(&TokKind::RParen, "expected `)` after subscripts")?;
        if subs.len() > 2 {
            return Err(Diagnostic::new(
                self.peek().pos,
                format!("`{array}` subscripted with rank {}, only rank 1 and 2 are supported", subs.len()),
            ));
        }
        Ok(subs)
    }

    // ---- token helpers --------------------------------------------------

    fn peek(&self) -> &Token {
        &self.tokens[self.at]
    }

    fn peek_kind(&self) -> &TokKind {
        &self.tokens[self.at].kind
    }

    fn peek_kind_at(&self, ahead: usize) -> Option<&TokKind> {
        self.tokens.get(self.at + ahead).map(|t| &t.kind)
    }

    fn bump(&mut self) {
        if self.at + 1 < self.tokens.len() {
            self.at += 1;
        }
    }

    fn eat(&mut self, kind: &TokKind) -> bool {
        if self.peek_kind() == kind {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, kind: &TokKind, msg: &str) -> Result<(), Diagnostic> {
        if self.eat(kind) {
            Ok(())
        } else {
            Err(Diagnostic::new(self.peek().pos, msg))
        }
    }

    fn ident(&mut self, msg: &str) -> Result<(String, Pos), Diagnostic> {
        let t = self.peek().clone();
        match t.kind {
            TokKind::Ident(w) => {
                self.bump();
                Ok((w, t.pos))
            }
            _ => Err(Diagnostic::new(t.pos, msg)),
        }
    }

    fn integer(&mut self, msg: &str) -> Result<i64, Diagnostic> {
        let negative = self.eat(&TokKind::Minus);
        let t = self.peek().clone();
        match t.kind {
            TokKind::Num { raw, is_int: true } => {
                self.bump();
                let v = raw as i64;
                Ok(if negative { -v } else { v })
            }
            _ => Err(Diagnostic::new(t.pos, msg)),
        }
    }

    fn paren_name_list(&mut self) -> Result<Vec<String>, Diagnostic> {
        self.expect(&TokKind::LParen, "expected `(`")?;
        let mut names = vec![self.ident("expected a name")?.0];
        while self.eat(&TokKind::Comma) {
            names.push(self.ident("expected a name")?.0);
        }
        self.expect(&TokKind::RParen, "expected `)`")?;
        Ok(names)
    }

    fn statement_end(&mut self) -> Result<(), Diagnostic> {
        match self.peek_kind() {
            TokKind::Newline => {
                self.bump();
                Ok(())
            }
            TokKind::Eof => Ok(()),
            _ => Err(Diagnostic::new(self.peek().pos, "expected end of statement")),
        }
    }

    fn skip_newlines(&mut self) {
        while matches!(self.peek_kind(), TokKind::Newline) {
            self.bump();
        }
    }
}

fn intrinsic_by_name(name: &str) -> Option<Intrinsic> {
    match name {
        "exp" => Some(Intrinsic::Exp),
        "sqrt" => Some(Intrinsic::Sqrt),
        "max" => Some(Intrinsic::Max),
        "min" => Some(Intrinsic::Min),
        _ => None,
    }
}

fn declared(arrays: &[ArrayDecl], scalars: &[ScalarDecl], name: &str) -> bool {
    arrays.iter().any(|a| a.name == name) || scalars.iter().any(|s| s.name == name)
}

// ---- declaration inference ---------------------------------------------

/// Add declarations for names a stage references but the file never
/// declares. Array extents are inferred from the loop bounds: a subscript
/// `i + c` with `i` running to `hi` needs `hi + c` elements.
fn infer_decls(
    stage: &RawStage,
    arrays: &mut Vec<ArrayDecl>,
    scalars: &mut Vec<ScalarDecl>,
) -> Result<(), Diagnostic> {
    let mut bounds: BTreeMap<String, i64> = BTreeMap::new();
    for ix in &stage.nest.indices {
        bounds.insert(ix.name.clone(), ix.hi);
    }
    let mut wanted: BTreeMap<String, Vec<i64>> = BTreeMap::new(); // array -> per-dim extent
    let mut scalar_uses: Vec<String> = Vec::new();
    collect_uses(&stage.nest.body, &mut bounds, &mut wanted, &mut scalar_uses)?;

    for (name, dims) in wanted {
        if let Some(existing) = arrays.iter().find(|a| a.name == name) {
            if existing.dims.len() != dims.len() {
                return Err(Diagnostic::new(
                    Pos::new(1, 1),
                    format!("`{name}` declared rank {} but used with rank {}", existing.dims.len(), dims.len()),
                ));
            }
            continue;
        }
        if scalars.iter().any(|s| s.name == name) {
            return Err(Diagnostic::new(Pos::new(1, 1), format!("`{name}` declared scalar but used as an array")));
        }
        let extents: Vec<usize> = dims.iter().map(|&d| d.max(1) as usize).collect();
        arrays.push(ArrayDecl { name, dims: extents, elem: ElemType::F32 });
    }

    let loop_vars: Vec<&String> = bounds.keys().collect();
    for name in scalar_uses {
        if loop_vars.iter().any(|v| **v == name) || declared(arrays, scalars, &name) {
            continue;
        }
        scalars.push(ScalarDecl { name: name.clone(), elem: ElemType::F32 });
    }
    // Names mentioned only in clauses still need declarations (`private(t)`
    // where `t` is otherwise unused, say).
    for name in stage
        .pragma
        .privates
        .iter()
        .chain(stage.pragma.reduction.iter().map(|(_, v)| v))
    {
        if !declared(arrays, scalars, name) && !bounds.contains_key(name) {
            scalars.push(ScalarDecl { name: name.clone(), elem: ElemType::F32 });
        }
    }
    Ok(())
}

fn collect_uses(
    body: &[Stmt],
    bounds: &mut BTreeMap<String, i64>,
    wanted: &mut BTreeMap<String, Vec<i64>>,
    scalar_uses: &mut Vec<String>,
) -> Result<(), Diagnostic> {
    for stmt in body {
        match stmt {
            Stmt::Assign { lhs, rhs, .. } => {
                if let LValue::Element { array, subs } = lhs {
                    note_array(array, subs, bounds, wanted, stmt.pos())?;
                } else {
                    scalar_uses.push(lhs.name().to_string());
                }
                collect_expr(rhs, bounds, wanted, scalar_uses)?;
            }
            Stmt::SeqLoop { index, body, .. } => {
                let shadowed = bounds.insert(index.name.clone(), index.hi);
                collect_uses(body, bounds, wanted, scalar_uses)?;
                match shadowed {
                    Some(prev) => {
                        bounds.insert(index.name.clone(), prev);
                    }
                    None => {
                        bounds.remove(&index.name);
                    }
                }
            }
        }
    }
    Ok(())
}

fn collect_expr(
    e: &Expr,
    bounds: &BTreeMap<String, i64>,
    wanted: &mut BTreeMap<String, Vec<i64>>,
    scalar_uses: &mut Vec<String>,
) -> Result<(), Diagnostic> {
    match e {
        Expr::Lit { .. } => Ok(()),
        Expr::Scalar { name, .. } => {
            scalar_uses.push(name.clone());
            Ok(())
        }
        Expr::ArrayRef { array, subs, pos } => note_array(array, subs, bounds, wanted, *pos),
        Expr::Unary { neg } => collect_expr(neg, bounds, wanted, scalar_uses),
        Expr::Binary { lhs, rhs, .. } => {
            collect_expr(lhs, bounds, wanted, scalar_uses)?;
            collect_expr(rhs, bounds, wanted, scalar_uses)
        }
        Expr::Call { args, .. } => {
            for a in args {
                collect_expr(a, bounds, wanted, scalar_uses)?;
            }
            Ok(())
        }
    }
}

fn note_array(
    array: &str,
    subs: &[Subscript],
    bounds: &BTreeMap<String, i64>,
    wanted: &mut BTreeMap<String, Vec<i64>>,
    pos: Pos,
) -> Result<(), Diagnostic> {
    let mut extents = Vec::with_capacity(subs.len());
    for s in subs {
        let Some(hi) = bounds.get(&s.index) else {
            return Err(Diagnostic::new(
                pos,
                format!("subscript `{}` of `{array}` is not a loop index in scope", s.index),
            ));
        };
        extents.push(hi + s.offset);
    }
    let entry = wanted.entry(array.to_string()).or_insert_with(|| vec![0; extents.len()]);
    if entry.len() != extents.len() {
        return Err(Diagnostic::new(
            pos,
            format!("`{array}` used with both rank {} and rank {}", entry.len(), extents.len()),
        ));
    }
    for (have, want) in entry.iter_mut().zip(extents) {
        *have = (*have).max(want);
    }
    Ok(())
}
