//! Recursive-descent parser that compiles rule text straight into [`Cond`] trees.
//!
//! ```text
//! rules      := { statement }
//! statement  := [ "rule" IDENT ":" ] [ "forall" binders ":" ] cond [ "=>" "violation" ] END
//! binders    := IDENT { "," IDENT }
//! cond       := and { "or" and }
//! and        := unary { "and" unary }
//! unary      := "not" unary | ("exists" | "forall") binders ":" cond | atom
//! atom       := "(" cond ")" | "true" | "false"
//!             | term ( "==" | "!=" | "<" | "<=" | ">" | ">=" ) term
//!             | term [ "not" ] "in" "{" item { "," item } "}"
//! term       := base { ("+" | "-") INT }
//! base       := INT | "-" INT | "size" | "count" "(" binders ":" cond ")"
//!             | IDENT "." IDENT | IDENT
//! END        := newline | ";" | end of input
//! ```
//!
//! In `a.B`, `a` is a bound member, `hh` (household variable `B`) or `head`.
//! A bare identifier is a household-level variable if one has that name and a
//! category label of the variable on the other side of the comparison otherwise.
//! A statement's leading `forall` is the rule quantifier: the rule fires when
//! `cond` holds for some tuple of distinct members.

use crate::edits::eval::{CmpOp, Cond, Term, MAX_BINDERS};
use crate::edits::lexer::{syntax, tokenize, Pos, Tok, Token};
use crate::error::RuleError;
use crate::schema::{HeadLayout, Level, Schema};

const KEYWORDS: &[&str] = &[
    "and",
    "or",
    "not",
    "in",
    "forall",
    "exists",
    "count",
    "true",
    "false",
    "size",
    "hh",
    "head",
    "rule",
    "query",
    "given",
    "violation",
];

/// Static facts about a term used for type checking and label resolution.
#[derive(Debug, Clone, Copy)]
struct Meta {
    var: Option<usize>,
    ordered: bool,
}

#[derive(Debug, Clone)]
enum PTerm {
    Resolved(Term, Meta),
    Label(String),
    Int(i64),
}

pub struct Parser<'s> {
    toks: Vec<Token>,
    i: usize,
    schema: &'s Schema,
    scope: Vec<String>,
}

impl<'s> Parser<'s> {
    pub fn new(text: &str, schema: &'s Schema) -> Result<Self, RuleError> {
        Ok(Parser {
            toks: tokenize(text)?,
            i: 0,
            schema,
            scope: Vec::new(),
        })
    }

    pub fn peek(&self) -> &Tok {
        &self.toks[self.i].tok
    }

    fn peek_at(&self, k: usize) -> &Tok {
        &self.toks[(self.i + k).min(self.toks.len() - 1)].tok
    }

    pub fn pos(&self) -> Pos {
        self.toks[self.i].pos
    }

    fn bump(&mut self) -> Token {
        let t = self.toks[self.i].clone();
        if self.i + 1 < self.toks.len() {
            self.i += 1;
        }
        t
    }

    pub fn at_keyword(&self, kw: &str) -> bool {
        matches!(self.peek(), Tok::Ident(s) if s == kw)
    }

    pub fn eat_keyword(&mut self, kw: &str) -> bool {
        if self.at_keyword(kw) {
            self.bump();
            true
        } else {
            false
        }
    }

    pub fn eat(&mut self, tok: &Tok) -> bool {
        if self.peek() == tok {
            self.bump();
            true
        } else {
            false
        }
    }

    pub fn expect(&mut self, tok: &Tok, what: &str) -> Result<(), RuleError> {
        if self.eat(tok) {
            Ok(())
        } else {
            Err(self.unexpected(what))
        }
    }

    pub fn unexpected(&self, what: &str) -> RuleError {
        syntax(
            self.pos(),
            format!("expected {what}, found {}", describe(self.peek())),
        )
    }

    pub fn ident(&mut self, what: &str) -> Result<(String, Pos), RuleError> {
        let pos = self.pos();
        match self.peek().clone() {
            Tok::Ident(s) => {
                self.bump();
                Ok((s, pos))
            }
            _ => Err(self.unexpected(what)),
        }
    }

    pub fn int(&mut self) -> Result<i64, RuleError> {
        let neg = self.eat(&Tok::Minus);
        match *self.peek() {
            Tok::Int(v) => {
                self.bump();
                Ok(if neg { -v } else { v })
            }
            _ => Err(self.unexpected("integer")),
        }
    }

    pub fn skip_blank(&mut self) {
        while matches!(self.peek(), Tok::Newline | Tok::Semi) {
            self.bump();
        }
    }

    pub fn at_end(&self) -> bool {
        matches!(self.peek(), Tok::Eof)
    }

    pub fn end_statement(&mut self) -> Result<(), RuleError> {
        match self.peek() {
            Tok::Newline | Tok::Semi | Tok::Eof => {
                self.bump();
                Ok(())
            }
            _ => Err(self.unexpected("end of statement")),
        }
    }

    fn binders(&mut self) -> Result<Vec<String>, RuleError> {
        let mut names = Vec::new();
        loop {
            let (name, pos) = self.ident("member name")?;
            if KEYWORDS.contains(&name.as_str()) || self.schema.index_of(&name).is_some() {
                return Err(syntax(pos, format!("'{name}' cannot name a member")));
            }
            if names.contains(&name) || self.scope.contains(&name) {
                return Err(syntax(
                    pos,
                    format!("member name '{name}' is already bound"),
                ));
            }
            names.push(name);
            if !self.eat(&Tok::Comma) {
                break;
            }
        }
        if self.scope.len() + names.len() > MAX_BINDERS {
            return Err(syntax(
                self.pos(),
                format!("at most {MAX_BINDERS} members may be bound at once"),
            ));
        }
        Ok(names)
    }

    /// Parses `binders ":" cond` with the binders pushed on the scope.
    fn quantified(&mut self) -> Result<(usize, usize, Cond), RuleError> {
        let names = self.binders()?;
        self.expect(&Tok::Colon, "':' after member names")?;
        let first = self.scope.len();
        let arity = names.len();
        self.scope.extend(names);
        let body = self.condition();
        self.scope.truncate(first);
        Ok((first, arity, body?))
    }

    /// Parses one rule statement into `(id, arity, cond)`; `cond` is already
    /// wrapped in its rule quantifier.
    pub fn rule_statement(&mut self) -> Result<(Option<String>, usize, Cond, Pos), RuleError> {
        let pos = self.pos();
        let id = if self.at_keyword("rule") && matches!(self.peek_at(2), Tok::Colon) {
            self.bump();
            let (id, _) = self.ident("rule id")?;
            self.bump();
            Some(id)
        } else {
            None
        };
        let (arity, cond) = if self.eat_keyword("forall") {
            let (first, arity, body) = self.quantified()?;
            (
                arity,
                Cond::Exists {
                    first,
                    arity,
                    body: Box::new(body),
                },
            )
        } else {
            (0, self.condition()?)
        };
        if self.eat(&Tok::Arrow) && !self.eat_keyword("violation") {
            return Err(self.unexpected("'violation' after '=>'"));
        }
        self.end_statement()?;
        Ok((id, arity, cond, pos))
    }

    pub fn condition(&mut self) -> Result<Cond, RuleError> {
        let mut parts = vec![self.conjunction()?];
        while self.eat_keyword("or") {
            parts.push(self.conjunction()?);
        }
        Ok(if parts.len() == 1 {
            parts.pop().unwrap()
        } else {
            Cond::Or(parts)
        })
    }

    fn conjunction(&mut self) -> Result<Cond, RuleError> {
        let mut parts = vec![self.unary()?];
        while self.eat_keyword("and") {
            parts.push(self.unary()?);
        }
        Ok(if parts.len() == 1 {
            parts.pop().unwrap()
        } else {
            Cond::And(parts)
        })
    }

    fn unary(&mut self) -> Result<Cond, RuleError> {
        if self.eat_keyword("not") {
            return Ok(Cond::Not(Box::new(self.unary()?)));
        }
        if self.eat_keyword("exists") {
            let (first, arity, body) = self.quantified()?;
            return Ok(Cond::Exists {
                first,
                arity,
                body: Box::new(body),
            });
        }
        if self.eat_keyword("forall") {
            let (first, arity, body) = self.quantified()?;
            return Ok(Cond::Forall {
                first,
                arity,
                body: Box::new(body),
            });
        }
        self.atom()
    }

    fn atom(&mut self) -> Result<Cond, RuleError> {
        if self.eat(&Tok::LParen) {
            let c = self.condition()?;
            self.expect(&Tok::RParen, "')'")?;
            return Ok(c);
        }
        if self.eat_keyword("true") {
            return Ok(Cond::Bool(true));
        }
        if self.eat_keyword("false") {
            return Ok(Cond::Bool(false));
        }
        let lpos = self.pos();
        let lhs = self.term()?;
        let negated =
            self.at_keyword("not") && matches!(self.peek_at(1), Tok::Ident(s) if s == "in");
        if negated {
            self.bump();
        }
        if self.eat_keyword("in") {
            return self.membership(lhs, lpos, negated);
        }
        let op_pos = self.pos();
        let op = match self.peek() {
            Tok::Eq => CmpOp::Eq,
            Tok::Ne => CmpOp::Ne,
            Tok::Lt => CmpOp::Lt,
            Tok::Le => CmpOp::Le,
            Tok::Gt => CmpOp::Gt,
            Tok::Ge => CmpOp::Ge,
            _ => return Err(self.unexpected("comparison operator")),
        };
        self.bump();
        let rpos = self.pos();
        let rhs = self.term()?;
        self.comparison(lhs, lpos, op, op_pos, rhs, rpos)
    }

    fn comparison(
        &self,
        lhs: PTerm,
        lpos: Pos,
        op: CmpOp,
        op_pos: Pos,
        rhs: PTerm,
        rpos: Pos,
    ) -> Result<Cond, RuleError> {
        let lmeta = meta_of(&lhs);
        let rmeta = meta_of(&rhs);
        let (l, lm) = self.resolve(lhs, rmeta, lpos)?;
        let (r, rm) = self.resolve(rhs, lmeta, rpos)?;
        if !matches!(op, CmpOp::Eq | CmpOp::Ne) && !(lm.ordered && rm.ordered) {
            return Err(type_error(
                op_pos,
                "range comparison needs ordered operands; this variable admits only ==, != and in",
            ));
        }
        Ok(Cond::Cmp(l, op, r))
    }

    fn membership(&mut self, lhs: PTerm, lpos: Pos, negated: bool) -> Result<Cond, RuleError> {
        let (term, meta) = match lhs {
            PTerm::Resolved(t, m) => (t, m),
            _ => return Err(type_error(lpos, "left side of 'in' must be a variable")),
        };
        self.expect(&Tok::LBrace, "'{'")?;
        let mut values = Vec::new();
        loop {
            let pos = self.pos();
            let item = match self.peek().clone() {
                Tok::Ident(s) => {
                    self.bump();
                    PTerm::Label(s)
                }
                Tok::Int(_) | Tok::Minus => PTerm::Int(self.int()?),
                _ => return Err(self.unexpected("category label or integer")),
            };
            match self.resolve(item, Some(meta), pos)? {
                (Term::Const(v), _) => values.push(v),
                _ => return Err(type_error(pos, "set members must be constants")),
            }
            if !self.eat(&Tok::Comma) {
                break;
            }
        }
        self.expect(&Tok::RBrace, "'}'")?;
        Ok(Cond::In {
            term,
            values,
            negated,
        })
    }

    /// Turns labels and bare integers into constants in the frame of `other`.
    fn resolve(&self, t: PTerm, other: Option<Meta>, pos: Pos) -> Result<(Term, Meta), RuleError> {
        let constant = Meta {
            var: None,
            ordered: true,
        };
        match t {
            PTerm::Resolved(t, m) => Ok((t, m)),
            PTerm::Int(v) => {
                if let Some(Meta {
                    var: Some(var),
                    ordered: false,
                }) = other
                {
                    let d = self.schema.variable(var).cardinality as i64;
                    if !(1..=d).contains(&v) {
                        return Err(type_error(
                            pos,
                            format!(
                                "code {v} is outside 1..={d} for '{}'",
                                self.schema.variable(var).name
                            ),
                        ));
                    }
                }
                Ok((Term::Const(v as i32), constant))
            }
            PTerm::Label(name) => {
                let var = other
                    .and_then(|m| m.var)
                    .ok_or_else(|| RuleError::UnknownVariable {
                        name: name.clone(),
                        line: pos.line,
                        column: pos.column,
                    })?;
                let v = self.schema.variable(var);
                let code = v.code_of_label(&name).ok_or_else(|| {
                    type_error(pos, format!("'{name}' is not a category of '{}'", v.name))
                })?;
                Ok((Term::Const(self.schema.value(var, code)), constant))
            }
        }
    }

    fn term(&mut self) -> Result<PTerm, RuleError> {
        let mut t = self.base()?;
        loop {
            let sign = match self.peek() {
                Tok::Plus => 1,
                Tok::Minus => -1,
                _ => break,
            };
            let op_pos = self.pos();
            self.bump();
            let k = match *self.peek() {
                Tok::Int(k) => k,
                _ => return Err(self.unexpected("integer offset")),
            };
            self.bump();
            t = match t {
                PTerm::Resolved(inner, m) if m.ordered => PTerm::Resolved(
                    Term::Offset(Box::new(inner), (sign * k) as i32),
                    Meta {
                        var: None,
                        ordered: true,
                    },
                ),
                PTerm::Int(v) => PTerm::Int(v + sign * k),
                _ => return Err(type_error(op_pos, "offsets apply only to ordered values")),
            };
        }
        Ok(t)
    }

    fn base(&mut self) -> Result<PTerm, RuleError> {
        let pos = self.pos();
        match self.peek().clone() {
            Tok::Int(_) | Tok::Minus => Ok(PTerm::Int(self.int()?)),
            Tok::Ident(name) => {
                self.bump();
                if name == "size" {
                    return Ok(self.size_term());
                }
                if name == "count" {
                    self.expect(&Tok::LParen, "'(' after count")?;
                    let (first, arity, body) = self.quantified()?;
                    self.expect(&Tok::RParen, "')'")?;
                    return Ok(PTerm::Resolved(
                        Term::Count {
                            first,
                            arity,
                            body: Box::new(body),
                        },
                        Meta {
                            var: None,
                            ordered: true,
                        },
                    ));
                }
                if self.eat(&Tok::Dot) {
                    let (field, fpos) = self.ident("variable name")?;
                    return self.field(&name, pos, &field, fpos);
                }
                if self.scope.contains(&name) {
                    return Err(type_error(
                        pos,
                        format!("member '{name}' needs a variable, as in {name}.Age"),
                    ));
                }
                match self.schema.index_of(&name) {
                    Some(var) if self.schema.variable(var).level == Level::Household => {
                        Ok(self.household_term(var))
                    }
                    Some(_) => Err(type_error(
                        pos,
                        format!("'{name}' is individual-level; qualify it with a member"),
                    )),
                    None => Ok(PTerm::Label(name)),
                }
            }
            _ => Err(self.unexpected("value")),
        }
    }

    fn field(&self, base: &str, pos: Pos, field: &str, fpos: Pos) -> Result<PTerm, RuleError> {
        let var = self
            .schema
            .index_of(field)
            .ok_or_else(|| RuleError::UnknownVariable {
                name: field.to_string(),
                line: fpos.line,
                column: fpos.column,
            })?;
        let level = self.schema.variable(var).level;
        match base {
            "hh" => {
                if level != Level::Household {
                    return Err(type_error(
                        fpos,
                        format!("'{field}' is not household-level"),
                    ));
                }
                Ok(self.household_term(var))
            }
            "head" => {
                if level == Level::Household {
                    return Ok(self.household_term(var));
                }
                if let Some(hv) = self.schema.head_variable(var) {
                    return Ok(self.household_term(hv));
                }
                if self.schema.head_layout() == HeadLayout::Member {
                    let (shift, lo, hi) = self.shift_range(var);
                    return Ok(PTerm::Resolved(
                        Term::Fixed {
                            member: 0,
                            pos: self.schema.position(var),
                            shift,
                            lo,
                            hi,
                        },
                        self.meta(var),
                    ));
                }
                Err(type_error(
                    fpos,
                    format!("the household head carries no value for '{field}'"),
                ))
            }
            b => {
                let slot = self
                    .scope
                    .iter()
                    .position(|s| s == b)
                    .ok_or_else(|| syntax(pos, format!("'{b}' is not a bound member")))?;
                if level != Level::Individual {
                    return Err(type_error(
                        fpos,
                        format!("'{field}' is household-level; use hh.{field}"),
                    ));
                }
                let (shift, lo, hi) = self.shift_range(var);
                Ok(PTerm::Resolved(
                    Term::Member {
                        slot,
                        pos: self.schema.position(var),
                        shift,
                        lo,
                        hi,
                    },
                    self.meta(var),
                ))
            }
        }
    }

    fn size_term(&self) -> PTerm {
        PTerm::Resolved(
            Term::Size,
            Meta {
                var: Some(self.schema.size_var()),
                ordered: true,
            },
        )
    }

    fn household_term(&self, var: usize) -> PTerm {
        if var == self.schema.size_var() {
            return self.size_term();
        }
        let (shift, lo, hi) = self.shift_range(var);
        PTerm::Resolved(
            Term::Household {
                cell: self.schema.position(var),
                shift,
                lo,
                hi,
            },
            self.meta(var),
        )
    }

    fn meta(&self, var: usize) -> Meta {
        Meta {
            var: Some(var),
            ordered: self.schema.variable(var).ordered,
        }
    }

    fn shift_range(&self, var: usize) -> (i32, i32, i32) {
        let v = self.schema.variable(var);
        let shift = if v.ordered { v.origin - 1 } else { 0 };
        (shift, 1 + shift, v.cardinality as i32 + shift)
    }
}

fn meta_of(t: &PTerm) -> Option<Meta> {
    match t {
        PTerm::Resolved(_, m) => Some(*m),
        _ => None,
    }
}

fn type_error(pos: Pos, message: impl Into<String>) -> RuleError {
    RuleError::Type {
        line: pos.line,
        column: pos.column,
        message: message.into(),
    }
}

fn describe(t: &Tok) -> String {
    match t {
        Tok::Ident(s) => format!("'{s}'"),
        Tok::Int(v) => format!("'{v}'"),
        Tok::Newline => "end of line".into(),
        Tok::Eof => "end of input".into(),
        other => format!("{other:?}"),
    }
}
