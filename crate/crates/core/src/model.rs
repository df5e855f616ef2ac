//! Truncated nested Dirichlet-process mixture of products of multinomials.
//!
//! Households belong to one of `F` household-level classes; each member
//! record belongs to one of `S` individual-level classes nested in its
//! household's class. Household-level variables are drawn from `lambda`,
//! individual-level variables from `phi`, independently given the classes.
//!
//! Array layout: `lambda[k]` is `F x d_k` row-major for the `k`-th
//! household-level variable (schema order within the level), and `phi[k]` is
//! `F x S x d_k` for the `k`-th individual-level variable.

use rand::Rng;
use rand_distr::{Beta, Distribution, Gamma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Code, Dataset, Household};
use crate::edits::RuleSet;
use crate::error::SamplerError;
use crate::rng::{substream, Phase};
use crate::schema::Schema;

const SIMPLEX_TOL: f64 = 1e-12;

/// Prior settings. Gamma priors use shape/rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparams {
    /// Symmetric Dirichlet concentration for every `lambda` and `phi` row.
    pub dirichlet: f64,
    pub a_alpha: f64,
    pub b_alpha: f64,
    pub a_beta: f64,
    pub b_beta: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            dirichlet: 1.0,
            a_alpha: 0.25,
            b_alpha: 0.25,
            a_beta: 0.25,
            b_beta: 0.25,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<(), SamplerError> {
        let all = [
            self.dirichlet,
            self.a_alpha,
            self.b_alpha,
            self.a_beta,
            self.b_beta,
        ];
        if all.iter().all(|x| x.is_finite() && *x > 0.0) {
            Ok(())
        } else {
            Err(SamplerError::Config(format!(
                "hyperparameters must be positive, got {self:?}"
            )))
        }
    }
}

/// Turns stick fractions into probabilities: `p_g = u_g * prod_{f<g} (1 - u_f)`.
pub fn stick_break(fractions: &[f64]) -> Result<Vec<f64>, SamplerError> {
    for (index, &value) in fractions.iter().enumerate() {
        if !(0.0..=1.0).contains(&value) {
            return Err(SamplerError::StickFraction { index, value });
        }
    }
    match fractions.last() {
        Some(&last) if last == 1.0 => {}
        Some(&last) => return Err(SamplerError::StickNotClosed(last)),
        None => return Err(SamplerError::Params("empty stick".into())),
    }
    let mut rest = 1.0;
    let mut out = Vec::with_capacity(fractions.len());
    for &u in fractions {
        out.push(u * rest);
        rest *= 1.0 - u;
    }
    Ok(out)
}

/// Dirichlet draw by normalizing independent Gamma variates.
pub fn dirichlet<R: Rng + ?Sized>(conc: &[f64], rng: &mut R) -> Vec<f64> {
    loop {
        let mut x: Vec<f64> = conc
            .iter()
            .map(|&a| Gamma::new(a, 1.0).unwrap().sample(rng))
            .collect();
        let total: f64 = x.iter().sum();
        if total > 0.0 && total.is_finite() {
            x.iter_mut().for_each(|v| *v /= total);
            return x;
        }
    }
}

pub fn beta<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> f64 {
    Beta::new(a, b).unwrap().sample(rng)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NdpmpmParams {
    pub f: usize,
    pub s: usize,
    pub u: Vec<f64>,
    /// `F x S` stick fractions.
    pub v: Vec<f64>,
    pub pi: Vec<f64>,
    /// `F x S`, each row a probability vector.
    pub omega: Vec<f64>,
    pub lambda: Vec<Vec<f64>>,
    pub phi: Vec<Vec<f64>>,
    pub alpha: f64,
    pub beta: f64,
    pub hh_card: Vec<usize>,
    pub ind_card: Vec<usize>,
}

impl NdpmpmParams {
    /// Assembles parameters from stick fractions and category probabilities.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        schema: &Schema,
        f: usize,
        s: usize,
        u: Vec<f64>,
        v: Vec<f64>,
        lambda: Vec<Vec<f64>>,
        phi: Vec<Vec<f64>>,
        alpha: f64,
        beta: f64,
    ) -> Result<Self, SamplerError> {
        if u.len() != f || v.len() != f * s {
            return Err(SamplerError::Params("stick fraction lengths".into()));
        }
        let pi = stick_break(&u)?;
        let mut omega = Vec::with_capacity(f * s);
        for g in 0..f {
            omega.extend(stick_break(&v[g * s..(g + 1) * s])?);
        }
        let params = NdpmpmParams {
            f,
            s,
            u,
            v,
            pi,
            omega,
            lambda,
            phi,
            alpha,
            beta,
            hh_card: card(schema, schema.household_vars()),
            ind_card: card(schema, schema.individual_vars()),
        };
        params.validate()?;
        Ok(params)
    }

    /// One draw from the prior.
    pub fn draw_prior<R: Rng + ?Sized>(
        schema: &Schema,
        f: usize,
        s: usize,
        hyper: &Hyperparams,
        rng: &mut R,
    ) -> Self {
        let alpha = Gamma::new(hyper.a_alpha, 1.0 / hyper.b_alpha)
            .unwrap()
            .sample(rng);
        let beta_c = Gamma::new(hyper.a_beta, 1.0 / hyper.b_beta)
            .unwrap()
            .sample(rng);
        let mut u: Vec<f64> = (0..f).map(|_| beta(1.0, alpha.max(1e-8), rng)).collect();
        u[f - 1] = 1.0;
        let mut v = Vec::with_capacity(f * s);
        for _ in 0..f {
            for m in 0..s {
                v.push(if m + 1 == s {
                    1.0
                } else {
                    beta(1.0, beta_c.max(1e-8), rng)
                });
            }
        }
        let hh = card(schema, schema.household_vars());
        let ind = card(schema, schema.individual_vars());
        let lambda = hh
            .iter()
            .map(|&d| {
                (0..f)
                    .flat_map(|_| dirichlet(&vec![hyper.dirichlet; d], rng))
                    .collect()
            })
            .collect();
        let phi = ind
            .iter()
            .map(|&d| {
                (0..f * s)
                    .flat_map(|_| dirichlet(&vec![hyper.dirichlet; d], rng))
                    .collect()
            })
            .collect();
        Self::from_parts(schema, f, s, u, v, lambda, phi, alpha, beta_c)
            .expect("prior draw is valid")
    }

    #[inline]
    pub fn omega_row(&self, g: usize) -> &[f64] {
        &self.omega[g * self.s..(g + 1) * self.s]
    }

    #[inline]
    pub fn lambda_row(&self, k: usize, g: usize) -> &[f64] {
        let d = self.hh_card[k];
        &self.lambda[k][g * d..(g + 1) * d]
    }

    #[inline]
    pub fn phi_row(&self, k: usize, g: usize, m: usize) -> &[f64] {
        let d = self.ind_card[k];
        let r = g * self.s + m;
        &self.phi[k][r * d..(r + 1) * d]
    }

    /// Checks shapes and that every probability vector lies on the simplex.
    pub fn validate(&self) -> Result<(), SamplerError> {
        let simplex = |name: &str, x: &[f64]| -> Result<(), SamplerError> {
            let sum: f64 = x.iter().sum();
            if x.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || (sum - 1.0).abs() > SIMPLEX_TOL {
                return Err(SamplerError::Params(format!(
                    "{name} is not a probability vector (sum {sum})"
                )));
            }
            Ok(())
        };
        if self.f == 0 || self.s == 0 {
            return Err(SamplerError::Params("F and S must be positive".into()));
        }
        if self.lambda.len() != self.hh_card.len() || self.phi.len() != self.ind_card.len() {
            return Err(SamplerError::Params("variable count mismatch".into()));
        }
        simplex("pi", &self.pi)?;
        for g in 0..self.f {
            simplex("omega row", self.omega_row(g))?;
        }
        for (k, &d) in self.hh_card.iter().enumerate() {
            if self.lambda[k].len() != self.f * d {
                return Err(SamplerError::Params(format!(
                    "lambda[{k}] has wrong length"
                )));
            }
            for g in 0..self.f {
                simplex("lambda row", self.lambda_row(k, g))?;
            }
        }
        for (k, &d) in self.ind_card.iter().enumerate() {
            if self.phi[k].len() != self.f * self.s * d {
                return Err(SamplerError::Params(format!("phi[{k}] has wrong length")));
            }
            for g in 0..self.f {
                for m in 0..self.s {
                    simplex("phi row", self.phi_row(k, g, m))?;
                }
            }
        }
        if !(self.alpha > 0.0 && self.beta > 0.0) {
            return Err(SamplerError::Params(
                "alpha and beta must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Untruncated model marginal `P(X_k = c)` for schema variable `var`.
    pub fn marginal(&self, schema: &Schema, var: usize) -> Vec<f64> {
        let k = schema.position(var);
        let household = schema.variable(var).level == crate::schema::Level::Household;
        let d = schema.variable(var).cardinality;
        let mut out = vec![0.0; d];
        for g in 0..self.f {
            if household {
                for (c, x) in self.lambda_row(k, g).iter().enumerate() {
                    out[c] += self.pi[g] * x;
                }
            } else {
                for m in 0..self.s {
                    let w = self.pi[g] * self.omega_row(g)[m];
                    for (c, x) in self.phi_row(k, g, m).iter().enumerate() {
                        out[c] += w * x;
                    }
                }
            }
        }
        out
    }

    /// Household classes with positive weight among the assignments.
    pub fn occupied(assignments: &[usize], f: usize) -> usize {
        let mut seen = vec![false; f];
        for &g in assignments {
            seen[g] = true;
        }
        seen.iter().filter(|&&b| b).count()
    }
}

fn card(schema: &Schema, vars: &[usize]) -> Vec<usize> {
    vars.iter()
        .map(|&v| schema.variable(v).cardinality)
        .collect()
}

/// Class indicators for observed (`g`, `m`) and augmented households.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LatentAssignments {
    pub g: Vec<usize>,
    pub m: Vec<Vec<usize>>,
    /// Augmented households per allowed size in the latest sweep.
    pub n0_by_size: Vec<usize>,
    pub n1_by_size: Vec<usize>,
}

impl LatentAssignments {
    pub fn n0(&self) -> usize {
        self.n0_by_size.iter().sum()
    }
}

/// A generated household with its classes.
#[derive(Debug, Clone, PartialEq)]
pub struct Draw {
    pub size: usize,
    pub cells: Vec<Code>,
    pub g: usize,
    pub m: Vec<usize>,
}

/// Index of the first cumulative weight exceeding `u * total`.
#[inline]
pub fn pick(cum: &[f64], u: f64) -> usize {
    let target = u * cum[cum.len() - 1];
    cum.partition_point(|&c| c <= target).min(cum.len() - 1)
}

/// Linear-scan categorical draw over unnormalized weights.
#[inline]
pub fn pick_weights<R: Rng + ?Sized>(w: &[f64], rng: &mut R) -> usize {
    let total: f64 = w.iter().sum();
    let mut t = rng.random::<f64>() * total;
    for (i, &x) in w.iter().enumerate() {
        t -= x;
        if t < 0.0 {
            return i;
        }
    }
    w.iter().rposition(|&x| x > 0.0).unwrap_or(w.len() - 1)
}

fn cumulative(x: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    x.iter()
        .map(|v| {
            acc += v;
            acc
        })
        .collect()
}

/// Cumulative tables for fast generative draws from one parameter snapshot.
#[derive(Debug, Clone)]
pub struct Generator<'a> {
    pub params: &'a NdpmpmParams,
    schema: &'a Schema,
    pi_cum: Vec<f64>,
    /// Per allowed size: cumulative of `pi_g * lambda_size[g, h]`.
    pi_given_size: Vec<Vec<f64>>,
    omega_cum: Vec<Vec<f64>>,
    lambda_cum: Vec<Vec<Vec<f64>>>,
    phi_cum: Vec<Vec<Vec<f64>>>,
}

impl<'a> Generator<'a> {
    pub fn new(params: &'a NdpmpmParams, schema: &'a Schema) -> Self {
        let ks = schema.size_cell();
        let pi_given_size = (0..schema.sizes().len())
            .map(|hc| {
                let w: Vec<f64> = (0..params.f)
                    .map(|g| params.pi[g] * params.lambda_row(ks, g)[hc])
                    .collect();
                cumulative(&w)
            })
            .collect();
        Generator {
            params,
            schema,
            pi_cum: cumulative(&params.pi),
            pi_given_size,
            omega_cum: (0..params.f)
                .map(|g| cumulative(params.omega_row(g)))
                .collect(),
            lambda_cum: (0..params.hh_card.len())
                .map(|k| {
                    (0..params.f)
                        .map(|g| cumulative(params.lambda_row(k, g)))
                        .collect()
                })
                .collect(),
            phi_cum: (0..params.ind_card.len())
                .map(|k| {
                    (0..params.f * params.s)
                        .map(|r| cumulative(params.phi_row(k, r / params.s, r % params.s)))
                        .collect()
                })
                .collect(),
        }
    }

    /// Size-conditioned class weights `pi_g * lambda_size[g, h]` are all zero.
    pub fn size_impossible(&self, size: usize) -> bool {
        let hc = self.schema.size_code(size).unwrap() as usize - 1;
        *self.pi_given_size[hc].last().unwrap() <= 0.0
    }

    /// Untruncated draw; the size is drawn from the model when `size` is `None`.
    pub fn draw<R: Rng + ?Sized>(&self, size: Option<usize>, rng: &mut R, out: &mut Draw) {
        let s = self.schema;
        let ks = s.size_cell();
        let (g, size) = match size {
            Some(h) => {
                let hc = s.size_code(h).expect("allowed size") as usize - 1;
                (pick(&self.pi_given_size[hc], rng.random()), h)
            }
            None => {
                let g = pick(&self.pi_cum, rng.random());
                let hc = pick(&self.lambda_cum[ks][g], rng.random());
                (g, s.sizes()[hc])
            }
        };
        let members = s.members_for_size(size);
        out.size = size;
        out.g = g;
        out.cells.clear();
        for k in 0..s.q() {
            if k == ks {
                out.cells.push(s.size_code(size).unwrap());
            } else {
                out.cells
                    .push(pick(&self.lambda_cum[k][g], rng.random()) as Code + 1);
            }
        }
        out.m.clear();
        for _ in 0..members {
            let m = pick(&self.omega_cum[g], rng.random());
            out.m.push(m);
            let row = g * self.params.s + m;
            for k in 0..s.p() {
                out.cells
                    .push(pick(&self.phi_cum[k][row], rng.random()) as Code + 1);
            }
        }
    }

    /// Redraws household values and members' values with classes held fixed.
    pub fn draw_values<R: Rng + ?Sized>(&self, d: &mut Draw, rng: &mut R) {
        let s = self.schema;
        let ks = s.size_cell();
        for k in 0..s.q() {
            if k != ks {
                d.cells[k] = pick(&self.lambda_cum[k][d.g], rng.random()) as Code + 1;
            }
        }
        for (j, &m) in d.m.iter().enumerate() {
            let row = d.g * self.params.s + m;
            for k in 0..s.p() {
                d.cells[s.q() + j * s.p() + k] =
                    pick(&self.phi_cum[k][row], rng.random()) as Code + 1;
            }
        }
    }

    pub fn empty_draw(&self) -> Draw {
        Draw {
            size: 0,
            cells: Vec::new(),
            g: 0,
            m: Vec::new(),
        }
    }
}

/// Untruncated generative draw (see [`Generator::draw`]).
pub fn sample_household_untruncated<R: Rng + ?Sized>(
    params: &NdpmpmParams,
    schema: &Schema,
    size: Option<usize>,
    rng: &mut R,
) -> Draw {
    let gen = Generator::new(params, schema);
    let mut d = gen.empty_draw();
    gen.draw(size, rng, &mut d);
    d
}

/// Formats per-rule rejection counts for diagnostics.
pub fn format_hits(rules: &RuleSet, hits: &[u64]) -> String {
    let parts: Vec<String> = rules
        .rules()
        .iter()
        .zip(hits)
        .filter(|(_, &n)| n > 0)
        .map(|(r, n)| format!("{}={n}", r.id))
        .collect();
    if parts.is_empty() {
        "none".into()
    } else {
        parts.join(", ")
    }
}

/// Rejection sampler for the truncated model at size `size`.
pub fn sample_household_truncated<R: Rng + ?Sized>(
    gen: &Generator,
    rules: &RuleSet,
    size: usize,
    cap: u64,
    rng: &mut R,
) -> Result<Draw, SamplerError> {
    let mut d = gen.empty_draw();
    let mut hits = vec![0u64; rules.len()];
    for _ in 0..cap {
        gen.draw(Some(size), rng, &mut d);
        match rules.first_violation(size, &d.cells) {
            None => return Ok(d),
            Some(r) => hits[r] += 1,
        }
    }
    Err(SamplerError::TruncatedCap {
        size,
        attempts: cap,
        hits: format_hits(rules, &hits),
    })
}

/// Per-class joint terms `pi_g prod lambda prod_j sum_m omega prod phi` of a complete household.
pub fn household_mixture_weight(
    params: &NdpmpmParams,
    schema: &Schema,
    size: usize,
    cells: &[Code],
) -> Vec<f64> {
    log_household_mixture_weight(params, schema, size, cells)
        .into_iter()
        .map(f64::exp)
        .collect()
}

/// Logarithm of [`household_mixture_weight`], computed without underflow.
pub fn log_household_mixture_weight(
    params: &NdpmpmParams,
    schema: &Schema,
    size: usize,
    cells: &[Code],
) -> Vec<f64> {
    let (q, p) = (schema.q(), schema.p());
    let members = schema.members_for_size(size);
    (0..params.f)
        .map(|g| {
            let mut lw = params.pi[g].ln();
            for k in 0..q {
                lw += params.lambda_row(k, g)[cells[k] as usize - 1].ln();
            }
            for j in 0..members {
                let mut sum = 0.0;
                let mut logs = Vec::with_capacity(params.s);
                for m in 0..params.s {
                    let mut l = params.omega_row(g)[m].ln();
                    for k in 0..p {
                        l += params.phi_row(k, g, m)[cells[q + j * p + k] as usize - 1].ln();
                    }
                    logs.push(l);
                }
                let mx = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                if mx == f64::NEG_INFINITY {
                    return f64::NEG_INFINITY;
                }
                for l in &logs {
                    sum += (l - mx).exp();
                }
                lw += mx + sum.ln();
            }
            lw
        })
        .collect()
}

/// Model-implied distribution of household size over the allowed sizes.
pub fn size_distribution(params: &NdpmpmParams, schema: &Schema) -> Vec<f64> {
    params.marginal(schema, schema.size_var())
}

/// Draws `n` synthetic households from the truncated model: a size from the
/// model, then rejection sampling at that size.
pub fn synthesize(
    params: &NdpmpmParams,
    rules: &RuleSet,
    n: usize,
    cap: u64,
    seed: u64,
) -> Result<Dataset, SamplerError> {
    let schema = rules.schema();
    let gen = Generator::new(params, schema);
    let households: Vec<Result<Household, SamplerError>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(seed, 0, Phase::Synthesize, i as u64);
            let mut d = gen.empty_draw();
            gen.draw(None, &mut rng, &mut d);
            let d = sample_household_truncated(&gen, rules, d.size, cap, &mut rng)?;
            Household::new(schema, format!("S{}", i + 1), d.size, d.cells)
                .map_err(|e| SamplerError::Params(e.to_string()))
        })
        .collect();
    households
        .into_iter()
        .collect::<Result<Vec<_>, _>>()
        .map(Dataset::new)
}
