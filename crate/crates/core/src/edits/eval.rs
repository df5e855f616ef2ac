//! Compiled predicate trees and their evaluators.
//!
//! `eval` is the hot-loop path: plain booleans over a fully observed
//! household, no allocation. `eval3` is Kleene three-valued logic over
//! households with missing cells; an unknown cell ranges over its variable's
//! whole value interval, and everything derived from it is an interval too.

use crate::data::{Code, MISSING};

pub const MAX_BINDERS: usize = 4;

pub type Env = [usize; MAX_BINDERS];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

/// Where a cell value comes from. Values are `code + shift`.
#[derive(Debug, Clone, PartialEq)]
pub enum Term {
    Const(i32),
    Size,
    Household {
        cell: usize,
        shift: i32,
        lo: i32,
        hi: i32,
    },
    Member {
        slot: usize,
        pos: usize,
        shift: i32,
        lo: i32,
        hi: i32,
    },
    /// Fixed member record (the head when it is stored as member 1).
    Fixed {
        member: usize,
        pos: usize,
        shift: i32,
        lo: i32,
        hi: i32,
    },
    Offset(Box<Term>, i32),
    Count {
        first: usize,
        arity: usize,
        body: Box<Cond>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cond {
    Bool(bool),
    Cmp(Term, CmpOp, Term),
    In {
        term: Term,
        values: Vec<i32>,
        negated: bool,
    },
    Not(Box<Cond>),
    And(Vec<Cond>),
    Or(Vec<Cond>),
    Exists {
        first: usize,
        arity: usize,
        body: Box<Cond>,
    },
    Forall {
        first: usize,
        arity: usize,
        body: Box<Cond>,
    },
}

/// Read-only view of one household's cells.
#[derive(Debug, Clone, Copy)]
pub struct View<'a> {
    pub cells: &'a [Code],
    pub members: usize,
    pub size: i32,
    pub q: usize,
    pub p: usize,
}

impl<'a> View<'a> {
    #[inline]
    fn member_cell(&self, member: usize, pos: usize) -> Code {
        self.cells[self.q + member * self.p + pos]
    }
}

#[inline]
fn compare(a: i32, op: CmpOp, b: i32) -> bool {
    match op {
        CmpOp::Eq => a == b,
        CmpOp::Ne => a != b,
        CmpOp::Lt => a < b,
        CmpOp::Le => a <= b,
        CmpOp::Gt => a > b,
        CmpOp::Ge => a >= b,
    }
}

/// Visits every tuple of `arity` distinct members in slots `first..first+arity`;
/// stops early when `f` returns true and reports whether it did.
fn any_tuple(
    v: &View,
    env: &mut Env,
    first: usize,
    arity: usize,
    level: usize,
    f: &mut dyn FnMut(&mut Env) -> bool,
) -> bool {
    for j in 0..v.members {
        if env[first..first + level].contains(&j) {
            continue;
        }
        env[first + level] = j;
        let hit = if level + 1 == arity {
            f(env)
        } else {
            any_tuple(v, env, first, arity, level + 1, f)
        };
        if hit {
            return true;
        }
    }
    false
}

pub fn term_value(t: &Term, v: &View, env: &mut Env) -> i32 {
    match t {
        Term::Const(c) => *c,
        Term::Size => v.size,
        Term::Household { cell, shift, .. } => v.cells[*cell] as i32 + shift,
        Term::Member {
            slot, pos, shift, ..
        } => v.member_cell(env[*slot], *pos) as i32 + shift,
        Term::Fixed {
            member, pos, shift, ..
        } => v.member_cell(*member, *pos) as i32 + shift,
        Term::Offset(inner, d) => term_value(inner, v, env) + d,
        Term::Count { first, arity, body } => {
            let mut n = 0;
            any_tuple(v, env, *first, *arity, 0, &mut |e| {
                if eval(body, v, e) {
                    n += 1;
                }
                false
            });
            n
        }
    }
}

pub fn eval(c: &Cond, v: &View, env: &mut Env) -> bool {
    match c {
        Cond::Bool(b) => *b,
        Cond::Cmp(a, op, b) => {
            let x = term_value(a, v, env);
            let y = term_value(b, v, env);
            compare(x, *op, y)
        }
        Cond::In {
            term,
            values,
            negated,
        } => values.contains(&term_value(term, v, env)) != *negated,
        Cond::Not(inner) => !eval(inner, v, env),
        Cond::And(parts) => parts.iter().all(|p| eval(p, v, env)),
        Cond::Or(parts) => parts.iter().any(|p| eval(p, v, env)),
        Cond::Exists { first, arity, body } => {
            any_tuple(v, env, *first, *arity, 0, &mut |e| eval(body, v, e))
        }
        Cond::Forall { first, arity, body } => {
            !any_tuple(v, env, *first, *arity, 0, &mut |e| !eval(body, v, e))
        }
    }
}

/// Three-valued truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tri {
    False,
    Unknown,
    True,
}

impl Tri {
    fn not(self) -> Tri {
        match self {
            Tri::False => Tri::True,
            Tri::True => Tri::False,
            Tri::Unknown => Tri::Unknown,
        }
    }
}

fn cell_interval(code: Code, shift: i32, lo: i32, hi: i32) -> (i32, i32) {
    if code == MISSING {
        (lo, hi)
    } else {
        let x = code as i32 + shift;
        (x, x)
    }
}

fn term_interval(t: &Term, v: &View, env: &mut Env) -> (i32, i32) {
    match t {
        Term::Const(c) => (*c, *c),
        Term::Size => (v.size, v.size),
        Term::Household {
            cell,
            shift,
            lo,
            hi,
        } => cell_interval(v.cells[*cell], *shift, *lo, *hi),
        Term::Member {
            slot,
            pos,
            shift,
            lo,
            hi,
        } => cell_interval(v.member_cell(env[*slot], *pos), *shift, *lo, *hi),
        Term::Fixed {
            member,
            pos,
            shift,
            lo,
            hi,
        } => cell_interval(v.member_cell(*member, *pos), *shift, *lo, *hi),
        Term::Offset(inner, d) => {
            let (a, b) = term_interval(inner, v, env);
            (a + d, b + d)
        }
        Term::Count { first, arity, body } => {
            let (mut sure, mut maybe) = (0, 0);
            any_tuple(v, env, *first, *arity, 0, &mut |e| {
                match eval3(body, v, e) {
                    Tri::True => sure += 1,
                    Tri::Unknown => maybe += 1,
                    Tri::False => {}
                }
                false
            });
            (sure, sure + maybe)
        }
    }
}

fn compare3(a: (i32, i32), op: CmpOp, b: (i32, i32)) -> Tri {
    let eq = if a.0 == a.1 && b.0 == b.1 && a.0 == b.0 {
        Tri::True
    } else if a.1 < b.0 || b.1 < a.0 {
        Tri::False
    } else {
        Tri::Unknown
    };
    let decide = |t: bool, f: bool| {
        if t {
            Tri::True
        } else if f {
            Tri::False
        } else {
            Tri::Unknown
        }
    };
    match op {
        CmpOp::Eq => eq,
        CmpOp::Ne => eq.not(),
        CmpOp::Lt => decide(a.1 < b.0, a.0 >= b.1),
        CmpOp::Le => decide(a.1 <= b.0, a.0 > b.1),
        CmpOp::Gt => decide(a.0 > b.1, a.1 <= b.0),
        CmpOp::Ge => decide(a.0 >= b.1, a.1 < b.0),
    }
}

pub fn eval3(c: &Cond, v: &View, env: &mut Env) -> Tri {
    match c {
        Cond::Bool(true) => Tri::True,
        Cond::Bool(false) => Tri::False,
        Cond::Cmp(a, op, b) => {
            let x = term_interval(a, v, env);
            let y = term_interval(b, v, env);
            compare3(x, *op, y)
        }
        Cond::In {
            term,
            values,
            negated,
        } => {
            let (lo, hi) = term_interval(term, v, env);
            let t = if lo == hi {
                if values.contains(&lo) {
                    Tri::True
                } else {
                    Tri::False
                }
            } else if values.iter().all(|x| *x < lo || *x > hi) {
                Tri::False
            } else {
                Tri::Unknown
            };
            if *negated {
                t.not()
            } else {
                t
            }
        }
        Cond::Not(inner) => eval3(inner, v, env).not(),
        Cond::And(parts) => {
            let mut out = Tri::True;
            for p in parts {
                match eval3(p, v, env) {
                    Tri::False => return Tri::False,
                    Tri::Unknown => out = Tri::Unknown,
                    Tri::True => {}
                }
            }
            out
        }
        Cond::Or(parts) => {
            let mut out = Tri::False;
            for p in parts {
                match eval3(p, v, env) {
                    Tri::True => return Tri::True,
                    Tri::Unknown => out = Tri::Unknown,
                    Tri::False => {}
                }
            }
            out
        }
        Cond::Exists { first, arity, body } => {
            let mut out = Tri::False;
            any_tuple(
                v,
                env,
                *first,
                *arity,
                0,
                &mut |e| match eval3(body, v, e) {
                    Tri::True => {
                        out = Tri::True;
                        true
                    }
                    Tri::Unknown => {
                        out = Tri::Unknown;
                        false
                    }
                    Tri::False => false,
                },
            );
            out
        }
        Cond::Forall { first, arity, body } => {
            let mut out = Tri::True;
            any_tuple(
                v,
                env,
                *first,
                *arity,
                0,
                &mut |e| match eval3(body, v, e) {
                    Tri::False => {
                        out = Tri::False;
                        true
                    }
                    Tri::Unknown => {
                        out = Tri::Unknown;
                        false
                    }
                    Tri::True => false,
                },
            );
            out
        }
    }
}
