//! Estimands over completed datasets and multiple-imputation inference.
//!
//! Cell probabilities over household-level variables are proportions of
//! households; as soon as an individual-level variable is involved the unit
//! becomes the member record, with household-level values read from the
//! member's household. Predicate queries are proportions of households.

use std::fmt;

use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::data::{Code, Dataset, Household, MISSING};
use crate::edits::eval::{eval, Cond, Env, View, MAX_BINDERS};
use crate::edits::{Parser, Tok};
use crate::error::{DataError, Error, RuleError};
use crate::schema::{Level, Schema};

const Z975: f64 = 1.959963984540054;
/// Above this the t quantile comes from its large-df expansion, which is
/// accurate to 1e-8 here while the incomplete-beta inversion is not.
const LARGE_DF: f64 = 1e3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum QueryKind {
    Marginal,
    Bivariate,
    Trivariate,
    Predicate,
}

impl fmt::Display for QueryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            QueryKind::Marginal => "marginal",
            QueryKind::Bivariate => "bivariate",
            QueryKind::Trivariate => "trivariate",
            QueryKind::Predicate => "predicate",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EstimandQuery {
    /// Joint probability of one to three `(variable, code)` cells.
    Cells {
        id: String,
        cells: Vec<(usize, Code)>,
    },
    /// Share of households satisfying `cond`, among those satisfying `given`.
    Predicate {
        id: String,
        given: Option<Cond>,
        cond: Cond,
    },
}

impl EstimandQuery {
    pub fn id(&self) -> &str {
        match self {
            EstimandQuery::Cells { id, .. } | EstimandQuery::Predicate { id, .. } => id,
        }
    }

    pub fn kind(&self) -> QueryKind {
        match self {
            EstimandQuery::Cells { cells, .. } => kind_of(cells.len()),
            EstimandQuery::Predicate { .. } => QueryKind::Predicate,
        }
    }
}

fn kind_of(n: usize) -> QueryKind {
    match n {
        1 => QueryKind::Marginal,
        2 => QueryKind::Bivariate,
        _ => QueryKind::Trivariate,
    }
}

fn code_of(schema: &Schema, var: usize, text: &str) -> Result<Code, DataError> {
    let v = schema.variable(var);
    if let Some(c) = v.code_of_label(text) {
        return Ok(c);
    }
    text.parse::<i32>()
        .ok()
        .and_then(|x| schema.code_for_value(var, x))
        .ok_or_else(|| DataError::UnknownCategory {
            variable: v.name.clone(),
            code: text.parse().unwrap_or(0),
        })
}

fn var_of(schema: &Schema, name: &str) -> Result<usize, DataError> {
    schema
        .index_of(name)
        .ok_or_else(|| DataError::UnknownVariable(name.to_string()))
}

/// Parses `Var=category[,Var=category[,Var=category]]`. Categories are
/// labels, or values for ordered variables and codes otherwise.
pub fn parse_cell_query(id: &str, text: &str, schema: &Schema) -> Result<EstimandQuery, DataError> {
    let mut cells = Vec::new();
    for part in text.split(',') {
        let (name, cat) = part
            .split_once('=')
            .ok_or_else(|| DataError::Invalid(format!("expected Var=category, got '{part}'")))?;
        let var = var_of(schema, name.trim())?;
        cells.push((var, code_of(schema, var, cat.trim())?));
    }
    if cells.is_empty() || cells.len() > 3 {
        return Err(DataError::Invalid(format!(
            "'{text}' must name one to three cells"
        )));
    }
    Ok(EstimandQuery::Cells {
        id: id.to_string(),
        cells,
    })
}

/// Compiles a household predicate written in the rule language.
pub fn parse_predicate(
    id: &str,
    given: Option<&str>,
    text: &str,
    schema: &Schema,
) -> Result<EstimandQuery, RuleError> {
    let compile = |t: &str| -> Result<Cond, RuleError> {
        let mut p = Parser::new(t, schema)?;
        p.skip_blank();
        let c = p.condition()?;
        p.skip_blank();
        if !p.at_end() {
            return Err(p.unexpected("end of predicate"));
        }
        Ok(c)
    };
    Ok(EstimandQuery::Predicate {
        id: id.to_string(),
        given: given.map(compile).transpose()?,
        cond: compile(text)?,
    })
}

fn view<'a>(schema: &Schema, h: &'a Household) -> View<'a> {
    View {
        cells: &h.cells,
        members: schema.members_for_size(h.size),
        size: h.size as i32,
        q: schema.q(),
        p: schema.p(),
    }
}

fn uses_members(schema: &Schema, vars: impl IntoIterator<Item = usize>) -> bool {
    vars.into_iter()
        .any(|v| schema.variable(v).level == Level::Individual)
}

/// Proportion and its sampling variance `p (1 - p) / units` on a complete dataset.
pub fn evaluate_query(
    data: &Dataset,
    schema: &Schema,
    query: &EstimandQuery,
) -> Result<(f64, f64), DataError> {
    if data.households.iter().any(|h| h.cells.contains(&MISSING)) {
        return Err(DataError::Incomplete);
    }
    let (hits, units) = match query {
        EstimandQuery::Cells { cells, .. } => {
            let at_member = uses_members(schema, cells.iter().map(|c| c.0));
            let (q, p) = (schema.q(), schema.p());
            let mut hits = 0usize;
            let mut units = 0usize;
            for h in &data.households {
                if at_member {
                    for j in 0..h.members(schema) {
                        units += 1;
                        let ok = cells.iter().all(|&(v, c)| {
                            let cell = match schema.variable(v).level {
                                Level::Household => schema.position(v),
                                Level::Individual => q + j * p + schema.position(v),
                            };
                            h.cells[cell] == c
                        });
                        hits += ok as usize;
                    }
                } else {
                    units += 1;
                    hits += cells.iter().all(|&(v, c)| h.cells[schema.position(v)] == c) as usize;
                }
            }
            (hits, units)
        }
        EstimandQuery::Predicate { given, cond, .. } => {
            let mut env: Env = [0; MAX_BINDERS];
            let mut hits = 0usize;
            let mut units = 0usize;
            for h in &data.households {
                let v = view(schema, h);
                if given.as_ref().is_none_or(|g| eval(g, &v, &mut env)) {
                    units += 1;
                    hits += eval(cond, &v, &mut env) as usize;
                }
            }
            (hits, units)
        }
    };
    if units == 0 {
        return Ok((f64::NAN, f64::NAN));
    }
    let p = hits as f64 / units as f64;
    Ok((p, p * (1.0 - p) / units as f64))
}

/// Pooled multiple-imputation inference for one estimand.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MIResult {
    pub estimate: f64,
    pub within: f64,
    pub between: f64,
    pub total: f64,
    /// Infinite when the between-imputation variance is zero.
    pub df: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Cornish-Fisher expansion of the 97.5% Student-t quantile in `1 / df`.
fn t975_expansion(df: f64) -> f64 {
    let z = Z975;
    z + (z.powi(3) + z) / (4.0 * df)
        + (5.0 * z.powi(5) + 16.0 * z.powi(3) + 3.0 * z) / (96.0 * df * df)
}

/// Combines per-imputation estimates and variances with the usual
/// multiple-imputation rules and a 95% t interval.
pub fn rubin_combine(estimates: &[f64], variances: &[f64]) -> Result<MIResult, DataError> {
    let l = estimates.len();
    if l < 2 {
        return Err(DataError::TooFewImputations(l));
    }
    if variances.len() != l {
        return Err(DataError::Invalid(format!(
            "{l} estimates but {} variances",
            variances.len()
        )));
    }
    let lf = l as f64;
    let constant = estimates.iter().all(|&q| q == estimates[0]);
    let qbar = if constant {
        estimates[0]
    } else {
        estimates.iter().sum::<f64>() / lf
    };
    let ubar = variances.iter().sum::<f64>() / lf;
    let b = if constant {
        0.0
    } else {
        estimates.iter().map(|q| (q - qbar).powi(2)).sum::<f64>() / (lf - 1.0)
    };
    let inflated = (1.0 + 1.0 / lf) * b;
    let total = ubar + inflated;
    let (df, half) = if b > 0.0 {
        let df = (lf - 1.0) * (1.0 + ubar / inflated).powi(2);
        let t = if df > LARGE_DF {
            t975_expansion(df)
        } else {
            StudentsT::new(0.0, 1.0, df)
                .map(|d| d.inverse_cdf(0.975))
                .unwrap_or(Z975)
        };
        (df, t * total.sqrt())
    } else {
        (f64::INFINITY, Z975 * ubar.sqrt())
    };
    Ok(MIResult {
        estimate: qbar,
        within: ubar,
        between: b,
        total,
        df,
        lower: qbar - half,
        upper: qbar + half,
    })
}

/// One line of a query battery.
#[derive(Debug, Clone, PartialEq)]
pub enum BatteryItem {
    /// Every combination of categories of the listed variables; a fixed
    /// category restricts that variable to it.
    Cells(Vec<(usize, Option<Code>)>),
    AllMarginal,
    AllBivariate,
    AllTrivariate,
    Query(EstimandQuery),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Battery {
    pub items: Vec<BatteryItem>,
}

impl Battery {
    pub fn all_marginal() -> Self {
        Battery {
            items: vec![BatteryItem::AllMarginal],
        }
    }

    pub fn all_bivariate() -> Self {
        Battery {
            items: vec![BatteryItem::AllBivariate],
        }
    }

    /// Parses a battery file. Statements, one per line:
    ///
    /// ```text
    /// marginal Var[=category] ...
    /// bivariate A[=category] B[=category]
    /// trivariate A B C
    /// all marginal | all bivariate | all trivariate
    /// query id [given COND]: COND
    /// ```
    pub fn parse(text: &str, schema: &Schema) -> Result<Self, Error> {
        let mut items = Vec::new();
        let mut p = Parser::new(text, schema)?;
        loop {
            p.skip_blank();
            if p.at_end() {
                break;
            }
            let (word, pos) = p.ident("battery statement")?;
            match word.as_str() {
                "all" => {
                    let (what, _) = p.ident("marginal, bivariate or trivariate")?;
                    items.push(match what.as_str() {
                        "marginal" => BatteryItem::AllMarginal,
                        "bivariate" => BatteryItem::AllBivariate,
                        "trivariate" => BatteryItem::AllTrivariate,
                        _ => return Err(p.unexpected("marginal, bivariate or trivariate").into()),
                    });
                }
                "marginal" | "bivariate" | "trivariate" => {
                    let want = match word.as_str() {
                        "marginal" => 1,
                        "bivariate" => 2,
                        _ => 3,
                    };
                    let mut group = Vec::new();
                    while let Tok::Ident(_) = p.peek() {
                        let (name, npos) = p.ident("variable")?;
                        let var = schema.index_of(&name).ok_or(RuleError::UnknownVariable {
                            name: name.clone(),
                            line: npos.line,
                            column: npos.column,
                        })?;
                        let code = if p.eat(&Tok::Assign) {
                            let cpos = p.pos();
                            let text = match p.peek().clone() {
                                Tok::Ident(s) => {
                                    p.ident("category")?;
                                    s
                                }
                                _ => p.int()?.to_string(),
                            };
                            Some(code_of(schema, var, &text).map_err(|e| RuleError::Type {
                                line: cpos.line,
                                column: cpos.column,
                                message: e.to_string(),
                            })?)
                        } else {
                            None
                        };
                        group.push((var, code));
                        if want > 1 && group.len() == want {
                            break;
                        }
                    }
                    if group.is_empty() || (want > 1 && group.len() != want) {
                        return Err(RuleError::Syntax {
                            line: pos.line,
                            column: pos.column,
                            message: format!("'{word}' needs {want} variable(s)"),
                        }
                        .into());
                    }
                    if want == 1 {
                        items.extend(group.into_iter().map(|g| BatteryItem::Cells(vec![g])));
                    } else {
                        items.push(BatteryItem::Cells(group));
                    }
                }
                "query" => {
                    let (id, _) = p.ident("query id")?;
                    let given = if p.eat_keyword("given") {
                        Some(p.condition()?)
                    } else {
                        None
                    };
                    p.expect(&Tok::Colon, "':' before the predicate")?;
                    let cond = p.condition()?;
                    items.push(BatteryItem::Query(EstimandQuery::Predicate {
                        id,
                        given,
                        cond,
                    }));
                }
                _ => {
                    return Err(RuleError::Syntax {
                        line: pos.line,
                        column: pos.column,
                        message: format!("unknown battery statement '{word}'"),
                    }
                    .into())
                }
            }
            p.end_statement()?;
        }
        Ok(Battery { items })
    }

    /// Number of estimands the battery expands to.
    pub fn len(&self, schema: &Schema) -> usize {
        let mut n = 0;
        self.for_each_group(schema, |g| match g {
            Group::Cells(g) => n += group_size(schema, g),
            Group::Query(_) => n += 1,
        });
        n
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Visits cell groups (lazily expanding the `all` items) and predicate queries in order.
    fn for_each_group(&self, schema: &Schema, mut visit: impl FnMut(Group<'_>)) {
        let real: Vec<usize> = (0..schema.variables().len())
            .filter(|&v| v != schema.size_var() || schema.variable(v).cardinality > 1)
            .collect();
        for item in &self.items {
            match item {
                BatteryItem::Cells(g) => visit(Group::Cells(g)),
                BatteryItem::AllMarginal => {
                    for &a in &real {
                        visit(Group::Cells(&[(a, None)]));
                    }
                }
                BatteryItem::AllBivariate => {
                    for (i, &a) in real.iter().enumerate() {
                        for &b in &real[i + 1..] {
                            visit(Group::Cells(&[(a, None), (b, None)]));
                        }
                    }
                }
                BatteryItem::AllTrivariate => {
                    for (i, &a) in real.iter().enumerate() {
                        for (j, &b) in real.iter().enumerate().skip(i + 1) {
                            for &c in &real[j + 1..] {
                                visit(Group::Cells(&[(a, None), (b, None), (c, None)]));
                            }
                        }
                    }
                }
                BatteryItem::Query(q) => visit(Group::Query(q)),
            }
        }
    }
}

enum Group<'a> {
    Cells(&'a [(usize, Option<Code>)]),
    Query(&'a EstimandQuery),
}

fn group_size(schema: &Schema, g: &[(usize, Option<Code>)]) -> usize {
    g.iter()
        .map(|&(v, c)| {
            if c.is_some() {
                1
            } else {
                schema.variable(v).cardinality
            }
        })
        .product()
}

/// Contingency table of a variable group: counts over every category
/// combination plus the unit count.
fn table(schema: &Schema, data: &Dataset, vars: &[usize]) -> (Vec<u32>, usize) {
    let dims: Vec<usize> = vars
        .iter()
        .map(|&v| schema.variable(v).cardinality)
        .collect();
    let mut counts = vec![0u32; dims.iter().product()];
    let at_member = uses_members(schema, vars.iter().copied());
    let (q, p) = (schema.q(), schema.p());
    let mut units = 0;
    let index = |h: &Household, j: usize| {
        let mut idx = 0;
        for (&v, &d) in vars.iter().zip(&dims) {
            let cell = match schema.variable(v).level {
                Level::Household => schema.position(v),
                Level::Individual => q + j * p + schema.position(v),
            };
            idx = idx * d + h.cells[cell] as usize - 1;
        }
        idx
    };
    for h in &data.households {
        if at_member {
            for j in 0..h.members(schema) {
                counts[index(h, j)] += 1;
                units += 1;
            }
        } else {
            counts[index(h, 0)] += 1;
            units += 1;
        }
    }
    (counts, units)
}

/// One evaluated estimand.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub id: String,
    pub kind: QueryKind,
    pub truth: Option<f64>,
    pub mi: MIResult,
}

impl ReportRow {
    pub fn covered(&self) -> Option<bool> {
        self.truth
            .map(|t| self.mi.lower <= t + 1e-12 && t <= self.mi.upper + 1e-12)
    }

    pub fn abs_dev(&self) -> Option<f64> {
        self.truth.map(|t| (self.mi.estimate - t).abs())
    }
}

fn cell_id(schema: &Schema, cells: &[(usize, Code)]) -> String {
    cells
        .iter()
        .map(|&(v, c)| {
            let var = schema.variable(v);
            let cat = match &var.labels {
                Some(l) => l[c as usize - 1].clone(),
                None if var.ordered || v == schema.size_var() => schema.value(v, c).to_string(),
                None => c.to_string(),
            };
            format!("{}={cat}", var.name)
        })
        .collect::<Vec<_>>()
        .join(",")
}

fn check_shapes(
    schema: &Schema,
    imputed: &[Dataset],
    truth: Option<&Dataset>,
) -> Result<(), DataError> {
    let reference = truth.or(imputed.first());
    let Some(r) = reference else {
        return Err(DataError::TooFewImputations(0));
    };
    for d in imputed.iter().chain(truth) {
        if d.len() != r.len() {
            return Err(DataError::SchemaMismatch(format!(
                "datasets hold {} and {} households",
                r.len(),
                d.len()
            )));
        }
        for (a, b) in d.households.iter().zip(&r.households) {
            if a.size != b.size || a.cells.len() != schema.cell_count(a.size) {
                return Err(DataError::SchemaMismatch(format!(
                    "household '{}' differs in size or layout",
                    a.id
                )));
            }
        }
        if d.households.iter().any(|h| h.cells.contains(&MISSING)) {
            return Err(DataError::Incomplete);
        }
    }
    Ok(())
}

/// Evaluates a battery over imputed datasets, streaming one row per
/// estimand to `sink`. With `truth`, rows carry the truth value.
pub fn analyze_imputations(
    imputed: &[Dataset],
    truth: Option<&Dataset>,
    schema: &Schema,
    battery: &Battery,
    mut sink: impl FnMut(ReportRow),
) -> Result<(), DataError> {
    if imputed.len() < 2 {
        return Err(DataError::TooFewImputations(imputed.len()));
    }
    check_shapes(schema, imputed, truth)?;
    let mut failure = None;
    battery.for_each_group(schema, |item| {
        if failure.is_some() {
            return;
        }
        match item {
            Group::Cells(group) => {
                let vars: Vec<usize> = group.iter().map(|g| g.0).collect();
                let dims: Vec<usize> = vars
                    .iter()
                    .map(|&v| schema.variable(v).cardinality)
                    .collect();
                let tables: Vec<(Vec<u32>, usize)> =
                    imputed.iter().map(|d| table(schema, d, &vars)).collect();
                let truth_t = truth.map(|t| table(schema, t, &vars));
                let total: usize = dims.iter().product();
                for idx in 0..total {
                    let mut rem = idx;
                    let mut cells = vec![(0usize, 0 as Code); vars.len()];
                    for k in (0..vars.len()).rev() {
                        cells[k] = (vars[k], (rem % dims[k]) as Code + 1);
                        rem /= dims[k];
                    }
                    if group
                        .iter()
                        .zip(&cells)
                        .any(|(g, c)| g.1.is_some_and(|f| f != c.1))
                    {
                        continue;
                    }
                    let (est, var): (Vec<f64>, Vec<f64>) = tables
                        .iter()
                        .map(|(t, n)| {
                            let p = t[idx] as f64 / *n as f64;
                            (p, p * (1.0 - p) / *n as f64)
                        })
                        .unzip();
                    match rubin_combine(&est, &var) {
                        Ok(mi) => sink(ReportRow {
                            id: cell_id(schema, &cells),
                            kind: kind_of(vars.len()),
                            truth: truth_t.as_ref().map(|(t, n)| t[idx] as f64 / *n as f64),
                            mi,
                        }),
                        Err(e) => failure = Some(e),
                    }
                }
            }
            Group::Query(q) => {
                let run = || -> Result<ReportRow, DataError> {
                    let (est, var): (Vec<f64>, Vec<f64>) = imputed
                        .iter()
                        .map(|d| evaluate_query(d, schema, q))
                        .collect::<Result<Vec<_>, _>>()?
                        .into_iter()
                        .unzip();
                    Ok(ReportRow {
                        id: q.id().to_string(),
                        kind: q.kind(),
                        truth: truth
                            .map(|t| evaluate_query(t, schema, q).map(|r| r.0))
                            .transpose()?,
                        mi: rubin_combine(&est, &var)?,
                    })
                };
                match run() {
                    Ok(r) => sink(r),
                    Err(e) => failure = Some(e),
                }
            }
        }
    });
    match failure {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

/// Deviation and coverage summary for one query kind.
#[derive(Debug, Clone, PartialEq)]
pub struct KindSummary {
    pub kind: QueryKind,
    pub count: usize,
    pub max_abs_dev: f64,
    pub mean_abs_dev: f64,
    pub coverage: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub rows: Vec<ReportRow>,
    pub summary: Vec<KindSummary>,
}

impl Report {
    pub fn from_rows(rows: Vec<ReportRow>) -> Self {
        let mut summary: Vec<KindSummary> = Vec::new();
        for kind in [
            QueryKind::Marginal,
            QueryKind::Bivariate,
            QueryKind::Trivariate,
            QueryKind::Predicate,
        ] {
            let devs: Vec<(f64, bool)> = rows
                .iter()
                .filter(|r| r.kind == kind)
                .filter_map(|r| Some((r.abs_dev()?, r.covered()?)))
                .collect();
            if devs.is_empty() {
                continue;
            }
            let n = devs.len() as f64;
            summary.push(KindSummary {
                kind,
                count: devs.len(),
                max_abs_dev: devs.iter().map(|d| d.0).fold(0.0, f64::max),
                mean_abs_dev: devs.iter().map(|d| d.0).sum::<f64>() / n,
                coverage: devs.iter().filter(|d| d.1).count() as f64 / n,
            });
        }
        Report { rows, summary }
    }

    /// Short human-readable summary.
    pub fn summary_text(&self) -> String {
        let mut s = format!("{} estimands\n", self.rows.len());
        for k in &self.summary {
            s.push_str(&format!(
                "{:<10} n={:<7} max|dev|={:.4} mean|dev|={:.4} coverage={:.3}\n",
                k.kind.to_string(),
                k.count,
                k.max_abs_dev,
                k.mean_abs_dev,
                k.coverage
            ));
        }
        s
    }
}

/// Compares MI estimates from `imputed` with values computed on `truth`.
pub fn evaluation_report(
    imputed: &[Dataset],
    truth: &Dataset,
    schema: &Schema,
    battery: &Battery,
) -> Result<Report, DataError> {
    let mut rows = Vec::new();
    analyze_imputations(imputed, Some(truth), schema, battery, |r| rows.push(r))?;
    Ok(Report::from_rows(rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::{default_acs_schema, HeadLayout, Variable};

    fn schema() -> Schema {
        Schema::new(
            vec![
                Variable::new("Size", Level::Household, 2).size(),
                Variable::new("Own", Level::Household, 2).with_labels(&["owned", "rented"]),
                Variable::new("Race", Level::Individual, 3).with_labels(&["a", "b", "c"]),
                Variable::new("Age", Level::Individual, 90).ordered(0),
            ],
            vec![1, 2],
            HeadLayout::Member,
        )
        .unwrap()
    }

    fn hh(s: &Schema, own: Code, people: &[(Code, i32)]) -> Household {
        let size = people.len();
        let mut cells = vec![s.size_code(size).unwrap(), own];
        for &(r, a) in people {
            cells.extend([r, (a + 1) as Code]);
        }
        Household::new(s, "h", size, cells).unwrap()
    }

    fn ten() -> Dataset {
        let s = schema();
        Dataset::new(vec![
            hh(&s, 1, &[(1, 30), (1, 28)]),
            hh(&s, 1, &[(1, 40)]),
            hh(&s, 2, &[(1, 30), (2, 3)]),
            hh(&s, 2, &[(3, 50), (3, 51)]),
            hh(&s, 1, &[(2, 22), (1, 21)]),
            hh(&s, 1, &[(2, 60), (2, 61)]),
            hh(&s, 2, &[(3, 33)]),
            hh(&s, 2, &[(1, 44), (3, 4)]),
            hh(&s, 1, &[(1, 70), (1, 71)]),
            hh(&s, 1, &[(2, 19), (3, 18)]),
        ])
    }

    #[test]
    fn same_race_predicate_matches_hand_count() {
        let s = schema();
        let q = parse_predicate("same", None, "forall p, r: p.Race == r.Race", &s).unwrap();
        let (p, v) = evaluate_query(&ten(), &s, &q).unwrap();
        // Single-person households count; mixed ones are 3, 5, 8, 10.
        assert_eq!(p, 0.6);
        assert!((v - 0.6 * 0.4 / 10.0).abs() < 1e-15);
        let q = parse_predicate(
            "same2",
            Some("size == 2"),
            "forall p, r: p.Race == r.Race",
            &s,
        )
        .unwrap();
        assert_eq!(evaluate_query(&ten(), &s, &q).unwrap().0, 4.0 / 8.0);
    }

    #[test]
    fn marginals_use_the_right_unit() {
        let s = schema();
        let d = ten();
        let own = parse_cell_query("o", "Own=owned", &s).unwrap();
        assert_eq!(evaluate_query(&d, &s, &own).unwrap().0, 0.6);
        let race = parse_cell_query("r", "Race=a", &s).unwrap();
        assert_eq!(evaluate_query(&d, &s, &race).unwrap().0, 8.0 / 18.0);
        let joint = parse_cell_query("j", "Own=rented,Race=c", &s).unwrap();
        assert_eq!(evaluate_query(&d, &s, &joint).unwrap().0, 4.0 / 18.0);
        let age = parse_cell_query("a", "Age=30", &s).unwrap();
        assert_eq!(evaluate_query(&d, &s, &age).unwrap().0, 2.0 / 18.0);
        let sum: f64 = ["a", "b", "c"]
            .iter()
            .map(|c| {
                let q = parse_cell_query("r", &format!("Race={c}"), &s).unwrap();
                evaluate_query(&d, &s, &q).unwrap().0
            })
            .sum();
        assert!((sum - 1.0).abs() < 1e-12);
        assert!(matches!(
            parse_cell_query("x", "Income=3", &s),
            Err(DataError::UnknownVariable(_))
        ));
        assert!(parse_cell_query("x", "Race=z", &s).is_err());
    }

    #[test]
    fn rubin_worked_example() {
        let r = rubin_combine(&[0.4, 0.5, 0.6], &[0.01, 0.01, 0.01]).unwrap();
        assert!((r.estimate - 0.5).abs() < 1e-12);
        assert!((r.between - 0.01).abs() < 1e-12);
        assert!((r.total - 0.07 / 3.0).abs() < 1e-12);
        let df = 2.0 * (1.0f64 + 0.01 / (4.0 / 3.0 * 0.01)).powi(2);
        assert!((r.df - df).abs() < 1e-12);
        assert!(r.lower < r.estimate && r.estimate < r.upper);
        let same = rubin_combine(&[0.3; 4], &[0.04; 4]).unwrap();
        assert_eq!(same.between, 0.0);
        assert!((same.upper - (0.3 + Z975 * 0.2)).abs() < 1e-12);
        assert_eq!(
            rubin_combine(&[0.3], &[0.1]),
            Err(DataError::TooFewImputations(1))
        );
    }

    #[test]
    fn large_df_quantile() {
        // Tabulated t quantiles at 1000 and 10000 degrees of freedom.
        assert!((t975_expansion(1000.0) - 1.962339).abs() < 1e-6);
        assert!((t975_expansion(10000.0) - 1.960201).abs() < 1e-6);
        assert!(t975_expansion(1e9) > Z975);
    }

    #[test]
    fn battery_parsing_and_size() {
        let s = default_acs_schema();
        let text = "# comment\nmarginal Gender Race=white\nbivariate Gender Age=30\n\
                    all marginal\nquery sp: exists p: p.Relationship == spouse\n\
                    query own given size > 2: hh.Ownership == owned\n";
        let b = Battery::parse(text, &s).unwrap();
        assert_eq!(b.items.len(), 6);
        let marg: usize = s.variables().iter().map(|v| v.cardinality).sum();
        assert_eq!(b.len(&s), 2 + 1 + 2 + marg + 2);
        assert!(Battery::parse("bivariate Gender", &s).is_err());
        assert!(Battery::parse("marginal Nope", &s).is_err());
        assert!(Battery::parse("frobnicate", &s).is_err());
    }

    #[test]
    fn identical_imputations_report_zero_deviation() {
        let s = schema();
        let d = ten();
        let imps = vec![d.clone(), d.clone(), d.clone()];
        let mut b = Battery::all_bivariate();
        b.items.push(BatteryItem::AllMarginal);
        let rep = evaluation_report(&imps, &d, &s, &b).unwrap();
        assert_eq!(rep.rows.len(), b.len(&s));
        for k in &rep.summary {
            assert_eq!(k.max_abs_dev, 0.0);
            assert_eq!(k.coverage, 1.0);
        }
    }
}
