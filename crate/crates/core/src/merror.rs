//! Measurement-error model: which households contain errors, which cells are
//! wrong, and how a wrong cell is reported.
//!
//! A reported value equals the true value unless its cell is in error; an
//! erroneous cell reports a different category, uniformly by default
//! (`q_k = 1 / (d_k - 1)`), or by a user-supplied substitution matrix.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{cell_variable, Code, MISSING};
use crate::error::SamplerError;
use crate::model::{beta, pick_weights};
use crate::schema::Schema;

/// P(reported = y | true = x, error flag e) under uniform substitution.
pub fn reporting_prob(y: Code, x: Code, e: bool, d: usize) -> Result<f64, SamplerError> {
    if d < 2 {
        return Err(SamplerError::Params(format!(
            "reporting model needs at least 2 categories, got {d}"
        )));
    }
    Ok(match (e, y == x) {
        (false, true) => 1.0,
        (false, false) => 0.0,
        (true, true) => 0.0,
        (true, false) => 1.0 / (d as f64 - 1.0),
    })
}

/// Reported value for true value `x`; an error picks uniformly among the other categories.
pub fn sample_reported<R: Rng + ?Sized>(x: Code, e: bool, d: usize, rng: &mut R) -> Code {
    if !e || d < 2 {
        return x;
    }
    let r = rng.random_range(1..d as Code);
    if r >= x {
        r + 1
    } else {
        r
    }
}

/// Per-variable substitution law for erroneous cells.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Substitution {
    #[default]
    Uniform,
    /// `matrix[var]` is `Some(d x d)` row-stochastic with zero diagonal; row `x`
    /// is the law of the reported value given true value `x`.
    Matrix(Vec<Option<Vec<Vec<f64>>>>),
}

impl Substitution {
    /// Builds matrices from a map keyed by variable name; an empty map is uniform.
    pub fn by_name(
        schema: &Schema,
        matrices: &BTreeMap<String, Vec<Vec<f64>>>,
    ) -> Result<Self, SamplerError> {
        if matrices.is_empty() {
            return Ok(Substitution::Uniform);
        }
        let mut ms = vec![None; schema.variables().len()];
        for (name, m) in matrices {
            let v = schema.index_of(name).ok_or_else(|| {
                SamplerError::Config(format!("substitution matrix for unknown variable '{name}'"))
            })?;
            ms[v] = Some(m.clone());
        }
        let out = Substitution::Matrix(ms);
        out.validate(schema)?;
        Ok(out)
    }

    pub fn validate(&self, schema: &Schema) -> Result<(), SamplerError> {
        let Substitution::Matrix(ms) = self else {
            return Ok(());
        };
        if ms.len() != schema.variables().len() {
            return Err(SamplerError::Config(
                "substitution matrices must list every variable".into(),
            ));
        }
        for (var, m) in ms.iter().enumerate() {
            let Some(m) = m else { continue };
            let d = schema.variable(var).cardinality;
            let name = &schema.variable(var).name;
            if m.len() != d || m.iter().any(|r| r.len() != d) {
                return Err(SamplerError::Config(format!(
                    "substitution matrix for '{name}' must be {d} x {d}"
                )));
            }
            for (x, row) in m.iter().enumerate() {
                let sum: f64 = row.iter().sum();
                if row[x] != 0.0 || row.iter().any(|p| *p < 0.0) || (sum - 1.0).abs() > 1e-9 {
                    return Err(SamplerError::Config(format!(
                        "substitution matrix for '{name}': row {} must be a probability vector with zero diagonal",
                        x + 1
                    )));
                }
            }
        }
        Ok(())
    }

    /// P(reported = y | true = x, error) for schema variable `var`.
    #[inline]
    pub fn prob(&self, var: usize, y: Code, x: Code, d: usize) -> f64 {
        match self {
            Substitution::Matrix(ms) => match &ms[var] {
                Some(m) => m[x as usize - 1][y as usize - 1],
                None => uniform(y, x, d),
            },
            Substitution::Uniform => uniform(y, x, d),
        }
    }

    pub fn is_uniform_for(&self, var: usize) -> bool {
        match self {
            Substitution::Uniform => true,
            Substitution::Matrix(ms) => ms[var].is_none(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, var: usize, x: Code, d: usize, rng: &mut R) -> Code {
        match self {
            Substitution::Matrix(ms) => match &ms[var] {
                Some(m) => pick_weights(&m[x as usize - 1], rng) as Code + 1,
                None => sample_reported(x, true, d, rng),
            },
            Substitution::Uniform => sample_reported(x, true, d, rng),
        }
    }
}

#[inline]
fn uniform(y: Code, x: Code, d: usize) -> f64 {
    if y == x {
        0.0
    } else {
        1.0 / (d as f64 - 1.0)
    }
}

/// Cells of a household of size `size` that belong to error-prone variables.
pub fn error_prone_cells(schema: &Schema, error_prone: &[bool], size: usize) -> Vec<bool> {
    (0..schema.cell_count(size))
        .map(|c| error_prone[cell_variable(schema, c)])
        .collect()
}

/// Error flags for one household: all zero when `z` is false, otherwise an
/// independent Bernoulli(`epsilon[var]`) per cell of an error-prone variable.
pub fn sample_error_locations<R: Rng + ?Sized>(
    z: bool,
    epsilon: &[f64],
    error_prone: &[bool],
    schema: &Schema,
    size: usize,
    rng: &mut R,
) -> Vec<bool> {
    let n = schema.cell_count(size);
    if !z {
        return vec![false; n];
    }
    (0..n)
        .map(|c| {
            let var = cell_variable(schema, c);
            error_prone[var] && rng.random::<f64>() < epsilon[var]
        })
        .collect()
}

/// How missing cells of flagged households enter the error-rate update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MissingInEpsilon {
    /// Missing cells count as errors.
    Count,
    /// Missing cells are left out of the counts.
    #[default]
    Exclude,
}

/// Error indicators and rates for every household.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorState {
    pub z: Vec<bool>,
    pub e: Vec<Vec<bool>>,
    /// Per schema variable; unused for variables that are not error-prone.
    pub epsilon: Vec<f64>,
    /// Beta prior `(a, b)` per schema variable.
    pub prior: Vec<(f64, f64)>,
    pub error_prone: Vec<bool>,
}

impl ErrorState {
    /// Beta counts `(errors, non-errors)` per schema variable, summed over
    /// flagged households. `observed[i][c]` is false for cells missing in the data.
    pub fn counts(
        &self,
        schema: &Schema,
        observed: &[Vec<bool>],
        missing: MissingInEpsilon,
    ) -> Vec<(u64, u64)> {
        let mut out = vec![(0u64, 0u64); schema.variables().len()];
        for (i, e) in self.e.iter().enumerate() {
            if !self.z[i] {
                continue;
            }
            for (c, &flag) in e.iter().enumerate() {
                let var = cell_variable(schema, c);
                if !self.error_prone[var] {
                    continue;
                }
                if !observed[i][c] && missing == MissingInEpsilon::Exclude {
                    continue;
                }
                if flag {
                    out[var].0 += 1;
                } else {
                    out[var].1 += 1;
                }
            }
        }
        out
    }

    /// Draws each error-prone variable's rate from its Beta full conditional.
    pub fn update_epsilon<R: Rng + ?Sized>(
        &mut self,
        schema: &Schema,
        observed: &[Vec<bool>],
        missing: MissingInEpsilon,
        rng: &mut R,
    ) {
        let counts = self.counts(schema, observed, missing);
        for var in 0..self.epsilon.len() {
            if self.error_prone[var] {
                let (a, b) = self.prior[var];
                self.epsilon[var] = beta(a + counts[var].0 as f64, b + counts[var].1 as f64, rng);
            }
        }
    }
}

/// Sets error flags by comparing true and reported cells; missing cells are errors.
pub fn error_flags(truth: &[Code], reported: &[Code], error_prone_cell: &[bool]) -> Vec<bool> {
    truth
        .iter()
        .zip(reported)
        .zip(error_prone_cell)
        .map(|((&x, &y), &ep)| y == MISSING || (ep && x != y))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::default_acs_schema;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn reporting_probabilities() {
        assert_eq!(reporting_prob(3, 5, true, 12).unwrap(), 1.0 / 11.0);
        assert_eq!(reporting_prob(2, 2, false, 5).unwrap(), 1.0);
        assert_eq!(reporting_prob(2, 2, true, 5).unwrap(), 0.0);
        assert!(reporting_prob(1, 1, false, 1).is_err());
        for d in 2..8 {
            for x in 1..=d as Code {
                for e in [false, true] {
                    let s: f64 = (1..=d as Code)
                        .map(|y| reporting_prob(y, x, e, d).unwrap())
                        .sum();
                    assert!((s - 1.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn reported_value_law() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        assert_eq!(sample_reported(3, false, 5, &mut rng), 3);
        let mut freq = [0usize; 6];
        let n = 100_000;
        for _ in 0..n {
            freq[sample_reported(3, true, 5, &mut rng) as usize] += 1;
        }
        assert_eq!(freq[3], 0);
        for y in [1, 2, 4, 5] {
            assert!((freq[y] as f64 / n as f64 - 0.25).abs() < 0.01);
        }
        assert!((0..50).all(|_| sample_reported(1, true, 2, &mut rng) == 2));
    }

    #[test]
    fn error_location_rates() {
        let s = default_acs_schema();
        let mut eps = vec![0.0; s.variables().len()];
        let mut prone = vec![false; s.variables().len()];
        let targets = [
            ("HeadGender", 0.65),
            ("HeadAge", 0.80),
            ("Gender", 0.70),
            ("Age", 0.85),
            ("Relationship", 0.90),
        ];
        for (name, r) in targets {
            let v = s.index_of(name).unwrap();
            eps[v] = r;
            prone[v] = true;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        assert!(sample_error_locations(false, &eps, &prone, &s, 4, &mut rng)
            .iter()
            .all(|e| !e));
        let n = 100_000;
        let mut hits = vec![0usize; s.cell_count(2)];
        for _ in 0..n {
            for (c, e) in sample_error_locations(true, &eps, &prone, &s, 2, &mut rng)
                .into_iter()
                .enumerate()
            {
                hits[c] += e as usize;
            }
        }
        for c in 0..s.cell_count(2) {
            let want = eps[cell_variable(&s, c)];
            assert!((hits[c] as f64 / n as f64 - want).abs() < 0.01);
        }
    }

    #[test]
    fn epsilon_conjugate_mean() {
        let s = default_acs_schema();
        let nv = s.variables().len();
        let own = s.index_of("Ownership").unwrap();
        let mut prone = vec![false; nv];
        prone[own] = true;
        let n = s.cell_count(2);
        // Ten flagged households of size 2; Ownership in error in three of them.
        let e: Vec<Vec<bool>> = (0..10)
            .map(|i| {
                let mut v = vec![false; n];
                v[s.position(own)] = i < 3;
                v
            })
            .collect();
        let mut st = ErrorState {
            z: vec![true; 10],
            e,
            epsilon: vec![0.5; nv],
            prior: vec![(1.0, 1.0); nv],
            error_prone: prone,
        };
        let observed = vec![vec![true; n]; 10];
        assert_eq!(
            st.counts(&s, &observed, MissingInEpsilon::Count)[own],
            (3, 7)
        );
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let reps = 100_000;
        let mut mean = 0.0;
        for _ in 0..reps {
            st.update_epsilon(&s, &observed, MissingInEpsilon::Count, &mut rng);
            mean += st.epsilon[own];
        }
        mean /= reps as f64;
        assert!((mean - 4.0 / 12.0).abs() < 0.005, "{mean}");
        st.z = vec![false; 10];
        assert_eq!(
            st.counts(&s, &observed, MissingInEpsilon::Count)[own],
            (0, 0)
        );
    }
}
