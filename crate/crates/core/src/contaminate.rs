//! Simulation protocol: inject detectable errors, blank values completely at
//! random, and perturb values with PRAM.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{cell_variable, Code, Dataset, MISSING};
use crate::edits::RuleSet;
use crate::error::{DataError, Error, SamplerError};
use crate::merror::{sample_error_locations, Substitution};
use crate::rng::{substream, Phase};
use crate::schema::Schema;

/// Settings for one contamination run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContaminationSpec {
    /// Probability that a household contains errors.
    pub rho: f64,
    /// True error rate per error-prone variable.
    pub epsilon: BTreeMap<String, f64>,
    /// Blanking rate for variables that are neither error-prone nor the size.
    pub missing_rate: f64,
    /// Blanking rates that override `missing_rate`; may name error-prone variables.
    pub missing_by_variable: BTreeMap<String, f64>,
    /// Row-stochastic substitution matrices (zero diagonal) by variable name;
    /// other variables substitute uniformly.
    pub substitution: BTreeMap<String, Vec<Vec<f64>>>,
    /// Redraw error locations as well as values on each detectability attempt.
    pub redraw_locations: bool,
    /// Attempts per flagged household before giving up.
    pub attempt_cap: u64,
    pub seed: u64,
}

impl Default for ContaminationSpec {
    fn default() -> Self {
        ContaminationSpec {
            rho: 0.2,
            epsilon: [
                ("HeadGender", 0.65),
                ("HeadAge", 0.80),
                ("Gender", 0.70),
                ("Age", 0.85),
                ("Relationship", 0.90),
            ]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect(),
            missing_rate: 0.2,
            missing_by_variable: BTreeMap::new(),
            substitution: BTreeMap::new(),
            redraw_locations: true,
            attempt_cap: 1_000_000,
            seed: 1,
        }
    }
}

fn probability(what: &str, x: f64) -> Result<(), SamplerError> {
    if (0.0..=1.0).contains(&x) {
        Ok(())
    } else {
        Err(SamplerError::Config(format!(
            "{what} must lie in [0, 1], got {x}"
        )))
    }
}

fn lookup(schema: &Schema, name: &str) -> Result<usize, Error> {
    schema
        .index_of(name)
        .ok_or_else(|| DataError::UnknownVariable(name.to_string()).into())
}

impl ContaminationSpec {
    pub fn validate(&self, schema: &Schema) -> Result<(), Error> {
        probability("rho", self.rho)?;
        probability("missing_rate", self.missing_rate)?;
        for (name, &e) in &self.epsilon {
            if lookup(schema, name)? == schema.size_var() {
                return Err(
                    SamplerError::Config("the size variable cannot be error-prone".into()).into(),
                );
            }
            probability(&format!("epsilon for '{name}'"), e)?;
        }
        for (name, &r) in &self.missing_by_variable {
            if lookup(schema, name)? == schema.size_var() {
                return Err(
                    SamplerError::Config("the size variable cannot be blanked".into()).into(),
                );
            }
            probability(&format!("missing rate for '{name}'"), r)?;
        }
        for name in self.substitution.keys() {
            if !self.epsilon.contains_key(name) {
                return Err(SamplerError::Config(format!(
                    "substitution matrix for '{name}', which is not error-prone"
                ))
                .into());
            }
        }
        if self.attempt_cap == 0 {
            return Err(SamplerError::Config("attempt_cap must be positive".into()).into());
        }
        self.substitution_model(schema)?;
        Ok(())
    }

    /// Error-prone mask and per-variable error rates in schema order.
    pub fn rates(&self, schema: &Schema) -> Result<(Vec<bool>, Vec<f64>), Error> {
        let nv = schema.variables().len();
        let mut prone = vec![false; nv];
        let mut eps = vec![0.0; nv];
        for (name, &e) in &self.epsilon {
            let v = lookup(schema, name)?;
            prone[v] = true;
            eps[v] = e;
        }
        Ok((prone, eps))
    }

    /// Blanking rate per schema variable.
    pub fn missing_rates(&self, schema: &Schema) -> Result<Vec<f64>, Error> {
        let (prone, _) = self.rates(schema)?;
        let mut rates: Vec<f64> = (0..schema.variables().len())
            .map(|v| {
                if v == schema.size_var() || prone[v] {
                    0.0
                } else {
                    self.missing_rate
                }
            })
            .collect();
        for (name, &r) in &self.missing_by_variable {
            rates[lookup(schema, name)?] = r;
        }
        Ok(rates)
    }

    pub fn substitution_model(&self, schema: &Schema) -> Result<Substitution, Error> {
        Ok(Substitution::by_name(schema, &self.substitution)?)
    }
}

/// What contamination did to each household.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorTruth {
    pub z: Vec<bool>,
    /// Per household, one flag per cell.
    pub e: Vec<Vec<bool>>,
}

impl ErrorTruth {
    /// Share of households with errors.
    pub fn flagged_fraction(&self) -> f64 {
        self.z.iter().filter(|&&z| z).count() as f64 / self.z.len().max(1) as f64
    }

    /// Per schema variable, the share of its cells that are in error, over all households.
    pub fn error_rates(&self, schema: &Schema) -> Vec<f64> {
        let nv = schema.variables().len();
        let mut hits = vec![0usize; nv];
        let mut cells = vec![0usize; nv];
        for e in &self.e {
            for (c, &flag) in e.iter().enumerate() {
                let v = cell_variable(schema, c);
                cells[v] += 1;
                hits[v] += flag as usize;
            }
        }
        hits.iter()
            .zip(&cells)
            .map(|(&h, &n)| if n == 0 { 0.0 } else { h as f64 / n as f64 })
            .collect()
    }
}

/// Flags households with probability `rho` and, for each flagged household,
/// draws error locations and reported values until the household breaks at
/// least one rule.
pub fn inject_errors(
    clean: &Dataset,
    spec: &ContaminationSpec,
    rules: &RuleSet,
) -> Result<(Dataset, ErrorTruth), Error> {
    let schema = rules.schema();
    spec.validate(schema)?;
    let (prone, eps) = spec.rates(schema)?;
    let subst = spec.substitution_model(schema)?;
    for h in &clean.households {
        if h.has_missing() || !rules.is_valid(h.size, &h.cells) {
            return Err(DataError::Invalid(format!(
                "household '{}' is not a complete, rule-consistent record",
                h.id
            ))
            .into());
        }
    }
    let results: Vec<Result<(Vec<Code>, bool, Vec<bool>), Error>> = clean
        .households
        .par_iter()
        .enumerate()
        .map(|(i, h)| {
            let mut rng = substream(spec.seed, 0, Phase::Contaminate, i as u64);
            let n = h.cells.len();
            if !(rng.random::<f64>() < spec.rho) {
                return Ok((h.cells.clone(), false, vec![false; n]));
            }
            let mut e = Vec::new();
            let mut y = h.cells.clone();
            for attempt in 0..spec.attempt_cap {
                if attempt == 0 || spec.redraw_locations {
                    e = sample_error_locations(true, &eps, &prone, schema, h.size, &mut rng);
                }
                for c in 0..n {
                    y[c] = if e[c] {
                        let v = cell_variable(schema, c);
                        subst.sample(v, h.cells[c], schema.variable(v).cardinality, &mut rng)
                    } else {
                        h.cells[c]
                    };
                }
                if !rules.is_valid(h.size, &y) {
                    return Ok((y, true, e));
                }
            }
            Err(DataError::Undetectable {
                household: h.id.clone(),
                attempts: spec.attempt_cap,
            }
            .into())
        })
        .collect();
    let mut out = clean.clone();
    let mut truth = ErrorTruth {
        z: Vec::with_capacity(clean.len()),
        e: Vec::with_capacity(clean.len()),
    };
    for (h, r) in out.households.iter_mut().zip(results) {
        let (cells, z, e) = r?;
        h.cells = cells;
        truth.z.push(z);
        truth.e.push(e);
    }
    Ok((out, truth))
}

/// Marks each cell missing independently with its variable's rate; the size
/// cell is never blanked.
pub fn blank_missing(data: &Dataset, schema: &Schema, rates: &[f64], seed: u64) -> Dataset {
    let mut out = data.clone();
    let size_cell = schema.size_cell();
    for (i, h) in out.households.iter_mut().enumerate() {
        let mut rng = substream(seed, 0, Phase::Missing, i as u64);
        for c in 0..h.cells.len() {
            let r = rates[cell_variable(schema, c)];
            if c != size_cell && r > 0.0 && rng.random::<f64>() < r {
                h.cells[c] = MISSING;
            }
        }
    }
    out
}

/// Keeps each non-size, non-missing cell with probability `keep`; otherwise
/// replaces it with a uniform draw from the other categories.
pub fn pram(
    data: &Dataset,
    schema: &Schema,
    keep: f64,
    seed: u64,
) -> Result<Dataset, SamplerError> {
    if !(keep > 0.0 && keep <= 1.0) {
        return Err(SamplerError::Config(format!(
            "PRAM keep probability must lie in (0, 1], got {keep}"
        )));
    }
    let mut out = data.clone();
    let size_cell = schema.size_cell();
    for (i, h) in out.households.iter_mut().enumerate() {
        let mut rng = substream(seed, 0, Phase::Pram, i as u64);
        for c in 0..h.cells.len() {
            if c == size_cell || h.cells[c] == MISSING {
                continue;
            }
            let d = schema.variable(cell_variable(schema, c)).cardinality;
            if rng.random::<f64>() >= keep {
                h.cells[c] = crate::merror::sample_reported(h.cells[c], true, d, &mut rng);
            }
        }
    }
    Ok(out)
}
