//! Structural-zero edit rules.
//!
//! A rule describes an impossible household. Rule text is compiled once into
//! predicate trees (see [`eval`]); a household is valid when no rule fires.
//! The grammar is documented in the parser module and in the README.

pub mod eval;
mod lexer;
mod parser;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{cell_variable, Code, Household, MISSING};
use crate::error::RuleError;
use crate::schema::Schema;

use eval::{eval, eval3, Cond, Env, Tri, View};
pub use lexer::{Pos, Tok};
pub use parser::Parser;

/// Uniform draws per household size used to confirm each size admits a valid household.
pub const SUPPORT_DRAWS: u64 = 1_000_000;
const SUPPORT_SEED: u64 = 0x5eed_0f_ed17;

#[derive(Debug, Clone, PartialEq)]
pub struct Rule {
    pub id: String,
    pub line: usize,
    /// Number of distinct members the rule quantifies over (0 for household rules).
    pub arity: usize,
    cond: Cond,
}

impl Rule {
    pub fn cond(&self) -> &Cond {
        &self.cond
    }
}

/// Outcome of searching for a rule-consistent completion of a household.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Completion {
    Found(Vec<Code>),
    Impossible,
    /// The search budget ran out before a decision.
    Exhausted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RuleSet {
    schema: Schema,
    rules: Vec<Rule>,
}

impl RuleSet {
    pub fn empty(schema: &Schema) -> Self {
        RuleSet {
            schema: schema.clone(),
            rules: Vec::new(),
        }
    }

    /// Parses rule text and checks that every allowed size still admits a
    /// valid household.
    pub fn parse(text: &str, schema: &Schema) -> Result<Self, RuleError> {
        let set = Self::parse_unchecked(text, schema)?;
        set.check_support(SUPPORT_DRAWS)?;
        Ok(set)
    }

    /// Parses rule text without the support check.
    pub fn parse_unchecked(text: &str, schema: &Schema) -> Result<Self, RuleError> {
        let mut p = Parser::new(text, schema)?;
        let mut rules: Vec<Rule> = Vec::new();
        loop {
            p.skip_blank();
            if p.at_end() {
                break;
            }
            let (id, arity, cond, pos) = p.rule_statement()?;
            let id = id.unwrap_or_else(|| format!("rule_{}", pos.line));
            if rules.iter().any(|r| r.id == id) {
                return Err(RuleError::DuplicateId(id));
            }
            rules.push(Rule {
                id,
                line: pos.line,
                arity,
                cond,
            });
        }
        Ok(RuleSet {
            schema: schema.clone(),
            rules,
        })
    }

    /// Rules of both sets; ids of `other` that clash get a `'` suffix.
    pub fn union(&self, other: &RuleSet) -> RuleSet {
        let mut rules = self.rules.clone();
        for r in &other.rules {
            let mut r = r.clone();
            while rules.iter().any(|x| x.id == r.id) {
                r.id.push('\'');
            }
            rules.push(r);
        }
        RuleSet {
            schema: self.schema.clone(),
            rules,
        }
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn ids(&self) -> Vec<&str> {
        self.rules.iter().map(|r| r.id.as_str()).collect()
    }

    fn view<'a>(&self, size: usize, cells: &'a [Code]) -> View<'a> {
        View {
            cells,
            members: self.schema.members_for_size(size),
            size: size as i32,
            q: self.schema.q(),
            p: self.schema.p(),
        }
    }

    /// Whether `h` violates any rule, with the ids of every rule that fires.
    pub fn violates(&self, h: &Household) -> Result<(bool, Vec<String>), RuleError> {
        if !self.schema.size_allowed(h.size) {
            return Err(RuleError::SizeNotAllowed {
                id: h.id.clone(),
                size: h.size,
            });
        }
        if h.has_missing() {
            return Err(RuleError::MissingCells(h.id.clone()));
        }
        let ids: Vec<String> = self
            .firing(h.size, &h.cells)
            .map(|i| self.rules[i].id.clone())
            .collect();
        Ok((!ids.is_empty(), ids))
    }

    /// Fast check on complete cells; callers guarantee no cell is missing.
    #[inline]
    pub fn is_valid(&self, size: usize, cells: &[Code]) -> bool {
        self.first_violation(size, cells).is_none()
    }

    pub fn first_violation(&self, size: usize, cells: &[Code]) -> Option<usize> {
        let v = self.view(size, cells);
        let mut env: Env = [0; eval::MAX_BINDERS];
        self.rules.iter().position(|r| eval(&r.cond, &v, &mut env))
    }

    /// Indices of all rules firing on complete cells.
    pub fn firing<'a>(
        &'a self,
        size: usize,
        cells: &'a [Code],
    ) -> impl Iterator<Item = usize> + 'a {
        let v = self.view(size, cells);
        self.rules.iter().enumerate().filter_map(move |(i, r)| {
            let mut env: Env = [0; eval::MAX_BINDERS];
            eval(&r.cond, &v, &mut env).then_some(i)
        })
    }

    /// Three-valued verdict on partially missing cells: `True` if some rule
    /// fires whatever the missing cells hold, `False` if none can fire.
    pub fn violates3(&self, size: usize, cells: &[Code]) -> Tri {
        let v = self.view(size, cells);
        let mut env: Env = [0; eval::MAX_BINDERS];
        let mut out = Tri::False;
        for r in &self.rules {
            match eval3(&r.cond, &v, &mut env) {
                Tri::True => return Tri::True,
                Tri::Unknown => out = Tri::Unknown,
                Tri::False => {}
            }
        }
        out
    }

    /// Depth-first search for values of the `free` cells that satisfy every
    /// rule, trying each cell's current value first. Missing cells are always
    /// free. `budget` bounds the number of partial assignments visited.
    pub fn complete(&self, size: usize, cells: &[Code], free: &[bool], budget: u64) -> Completion {
        let mut work = cells.to_vec();
        let mut order = Vec::new();
        for c in 0..cells.len() {
            if free[c] || cells[c] == MISSING {
                work[c] = MISSING;
                order.push(c);
            }
        }
        let mut nodes = 0u64;
        match self.search(size, &mut work, cells, &order, 0, &mut nodes, budget) {
            Some(true) => Completion::Found(work),
            Some(false) => Completion::Impossible,
            None => Completion::Exhausted,
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn search(
        &self,
        size: usize,
        work: &mut [Code],
        hint: &[Code],
        order: &[usize],
        k: usize,
        nodes: &mut u64,
        budget: u64,
    ) -> Option<bool> {
        *nodes += 1;
        if *nodes > budget {
            return None;
        }
        match self.violates3(size, work) {
            Tri::True => return Some(false),
            Tri::False => {
                // Every remaining cell is unconstrained; fill with hints or 1.
                for &c in &order[k..] {
                    if work[c] == MISSING {
                        work[c] = if hint[c] == MISSING { 1 } else { hint[c] };
                    }
                }
                return Some(true);
            }
            Tri::Unknown => {}
        }
        let c = order[k];
        let d = self
            .schema
            .variable(cell_variable(&self.schema, c))
            .cardinality as Code;
        let first = hint[c];
        let candidates = std::iter::once(first)
            .filter(|&x| x != MISSING)
            .chain((1..=d).filter(|&x| x != first));
        for x in candidates {
            work[c] = x;
            match self.search(size, work, hint, order, k + 1, nodes, budget) {
                Some(true) => return Some(true),
                Some(false) => {}
                None => {
                    work[c] = MISSING;
                    return None;
                }
            }
        }
        work[c] = MISSING;
        Some(false)
    }

    /// Draws `draws` uniform households per allowed size and fails for the
    /// first size where all of them violate some rule.
    pub fn check_support(&self, draws: u64) -> Result<(), RuleError> {
        if self.rules.is_empty() {
            return Ok(());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(SUPPORT_SEED);
        for &size in self.schema.sizes() {
            let n = self.schema.cell_count(size);
            let card: Vec<Code> = (0..n)
                .map(|c| {
                    self.schema
                        .variable(cell_variable(&self.schema, c))
                        .cardinality as Code
                })
                .collect();
            let mut cells = vec![1 as Code; n];
            let size_cell = self.schema.size_cell();
            let size_code = self.schema.size_code(size).unwrap();
            let mut ok = false;
            for _ in 0..draws {
                for (c, x) in cells.iter_mut().enumerate() {
                    *x = rng.random_range(1..=card[c]);
                }
                cells[size_cell] = size_code;
                if self.is_valid(size, &cells) {
                    ok = true;
                    break;
                }
            }
            if !ok {
                return Err(RuleError::EmptySupport { size, draws });
            }
        }
        Ok(())
    }
}

const ACS_RULES: &str = include_str!("../../data/acs_rules.txt");

/// Text of the bundled example rules for [`crate::schema::default_acs_schema`].
pub fn default_acs_rules_text() -> &'static str {
    ACS_RULES
}

/// Bundled example rules. They are illustrative, not an official edit set.
pub fn default_acs_rules(schema: &Schema) -> Result<RuleSet, RuleError> {
    RuleSet::parse(ACS_RULES, schema)
}
