//! Gibbs sampler for the edit-imputation model.
//!
//! One sweep runs, in order: error-rate update, imputation of true values
//! and error flags for households that need it, augmentation with
//! impossible households, class allocation, and the conjugate parameter
//! updates. Work over households runs on a rayon pool with one random
//! substream per household, so output does not depend on the thread count.

pub mod steps;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analyze::{parse_cell_query, EstimandQuery};
use crate::data::{Code, Dataset, Household};
use crate::edits::{Completion, RuleSet};
use crate::error::{Error, SamplerError};
use crate::merror::{ErrorState, MissingInEpsilon, Substitution};
use crate::model::{Hyperparams, LatentAssignments, NdpmpmParams};
use crate::rng::{substream, Phase};
use crate::schema::Schema;

pub use steps::{
    augment_targets, class_posterior, draw_classes, step_augment, step_error_flags,
    step_impute_household, step_update_params, tilted_tables, Augmentation, ImputeContext, Mode,
    Prepared, Snapshot, SuffStats,
};

/// Error-prone variables used when a configuration does not name any.
pub const DEFAULT_ERROR_PRONE: [&str; 5] =
    ["HeadGender", "HeadAge", "Gender", "Age", "Relationship"];

fn default_error_prone() -> Vec<String> {
    DEFAULT_ERROR_PRONE.iter().map(|s| s.to_string()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GibbsConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    /// Number of imputed datasets to emit.
    pub imputations: usize,
    pub f: usize,
    pub s: usize,
    /// Augmentation weight per allowed size (schema order); empty means all 1.
    pub psi: Vec<f64>,
    pub seed: u64,
    /// Worker threads; 0 uses the rayon default.
    pub threads: usize,
    /// Rejection attempts per household in the imputation step.
    pub impute_cap: u64,
    /// Generated households per augmentation sweep.
    pub augment_cap: u64,
    /// Node budget for the completion search run at initialization.
    pub search_budget: u64,
    /// Rejection attempts per household when building the starting state.
    pub init_cap: u64,
    pub hyper: Hyperparams,
    pub error_prone: Vec<String>,
    /// Beta(a, b) prior for every error rate.
    pub epsilon_prior: (f64, f64),
    /// Per-variable prior overrides.
    pub epsilon_prior_by_variable: BTreeMap<String, (f64, f64)>,
    /// Error rates held fixed instead of updated.
    pub fixed_epsilon: BTreeMap<String, f64>,
    pub missing_in_epsilon: MissingInEpsilon,
    /// Flag every household with a missing cell, not only those whose
    /// observed values cannot be completed consistently.
    pub flag_missing_households: bool,
    /// Treat every household as possibly erroneous, as when values were
    /// perturbed on purpose.
    pub flag_all_households: bool,
    /// Substitution matrices assumed for reported errors, by variable name;
    /// variables not listed substitute uniformly.
    pub substitution: BTreeMap<String, Vec<Vec<f64>>>,
    /// Probabilities traced every iteration, e.g. `Gender=female` or
    /// `Relationship=spouse,Age=30`.
    pub trace: Vec<String>,
}

impl Default for GibbsConfig {
    fn default() -> Self {
        GibbsConfig {
            iterations: 10_000,
            burn_in: 5_000,
            thin: 5,
            imputations: 50,
            f: 20,
            s: 15,
            psi: Vec::new(),
            seed: 1,
            threads: 0,
            impute_cap: 1_000_000,
            augment_cap: 100_000_000,
            search_budget: 100_000,
            init_cap: 10_000,
            hyper: Hyperparams::default(),
            error_prone: default_error_prone(),
            epsilon_prior: (1.0, 1.0),
            epsilon_prior_by_variable: BTreeMap::new(),
            fixed_epsilon: BTreeMap::new(),
            missing_in_epsilon: MissingInEpsilon::default(),
            flag_missing_households: false,
            flag_all_households: false,
            substitution: BTreeMap::new(),
            trace: Vec::new(),
        }
    }
}

impl GibbsConfig {
    pub fn validate(&self, schema: &Schema) -> Result<(), SamplerError> {
        let bad = |m: String| Err(SamplerError::Config(m));
        if self.iterations == 0 || self.thin == 0 || self.imputations == 0 {
            return bad("iterations, thin and imputations must be positive".into());
        }
        if self.burn_in >= self.iterations {
            return bad(format!(
                "burn_in ({}) must be below iterations ({})",
                self.burn_in, self.iterations
            ));
        }
        let retained = (self.iterations - self.burn_in) / self.thin;
        if retained < self.imputations {
            return bad(format!(
                "{retained} retained sweeps cannot supply {} imputations",
                self.imputations
            ));
        }
        if self.f == 0 || self.s == 0 {
            return bad("F and S must be positive".into());
        }
        if !self.psi.is_empty() && self.psi.len() != schema.sizes().len() {
            return bad(format!(
                "psi lists {} weights for {} household sizes",
                self.psi.len(),
                schema.sizes().len()
            ));
        }
        for &p in &self.psi {
            let inv = 1.0 / p;
            if !(p > 0.0 && p <= 1.0) || (inv - inv.round()).abs() > 1e-9 {
                return bad(format!("psi = {p}: 1/psi must be a positive integer"));
            }
        }
        for name in self
            .error_prone
            .iter()
            .chain(self.epsilon_prior_by_variable.keys())
            .chain(self.fixed_epsilon.keys())
        {
            match schema.index_of(name) {
                None => return bad(format!("unknown variable '{name}'")),
                Some(v) if v == schema.size_var() => {
                    return bad("household size cannot be error-prone".into())
                }
                Some(v) if schema.variable(v).cardinality < 2 => {
                    return bad(format!("'{name}' has a single category"))
                }
                _ => {}
            }
        }
        for name in self
            .fixed_epsilon
            .keys()
            .chain(self.epsilon_prior_by_variable.keys())
        {
            if !self.error_prone.contains(name) {
                return bad(format!(
                    "'{name}' has error settings but is not error-prone"
                ));
            }
        }
        for (&(a, b), name) in std::iter::once((&self.epsilon_prior, "default")).chain(
            self.epsilon_prior_by_variable
                .iter()
                .map(|(k, v)| (v, k.as_str())),
        ) {
            if !(a > 0.0 && b > 0.0) {
                return bad(format!("error-rate prior for {name} must be positive"));
            }
        }
        for (name, &e) in &self.fixed_epsilon {
            if !(0.0..=1.0).contains(&e) {
                return bad(format!("fixed error rate for '{name}' must lie in [0, 1]"));
            }
        }
        self.hyper.validate()?;
        Substitution::by_name(schema, &self.substitution)?;
        for name in self.substitution.keys() {
            if !self.error_prone.contains(name) {
                return bad(format!(
                    "substitution matrix for '{name}', which is not error-prone"
                ));
            }
        }
        Ok(())
    }

    pub fn psi_for(&self, schema: &Schema) -> Vec<f64> {
        if self.psi.is_empty() {
            vec![1.0; schema.sizes().len()]
        } else {
            self.psi.clone()
        }
    }

    /// Retained-sweep indices (0-based, in retained order) that become imputations.
    pub fn output_slots(&self) -> Vec<usize> {
        let retained = (self.iterations - self.burn_in) / self.thin;
        let stride = retained / self.imputations;
        (1..=self.imputations).map(|j| j * stride - 1).collect()
    }

    fn error_prone_mask(&self, schema: &Schema) -> Vec<bool> {
        let mut mask = vec![false; schema.variables().len()];
        for name in &self.error_prone {
            mask[schema.index_of(name).unwrap()] = true;
        }
        mask
    }
}

/// Everything the sampler carries between sweeps.
#[derive(Debug, Clone)]
pub struct SamplerState {
    pub params: NdpmpmParams,
    pub latent: LatentAssignments,
    pub errors: ErrorState,
    /// Current true values, one cell vector per household.
    pub x: Vec<Vec<Code>>,
    pub prepared: Vec<Prepared>,
    pub augmented: Vec<crate::model::Draw>,
}

/// One traced quantity at one iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct TracePoint {
    pub iteration: usize,
    pub name: String,
    pub value: f64,
}

#[derive(Debug, Clone)]
pub struct FitOutput {
    pub imputations: Vec<Dataset>,
    pub trace: Vec<TracePoint>,
    pub params: NdpmpmParams,
    /// Posterior mean error rate per error-prone variable name, over retained sweeps.
    pub epsilon_mean: BTreeMap<String, f64>,
    pub modes: Vec<Mode>,
}

impl FitOutput {
    pub fn mode_counts(&self) -> (usize, usize, usize) {
        let c = |m| self.modes.iter().filter(|&&x| x == m).count();
        (c(Mode::Clean), c(Mode::MissingOnly), c(Mode::Faulty))
    }
}

/// Classifies every household and checks flagged ones can be repaired.
/// Returns the metadata and a rule-consistent starting value per household.
pub fn prepare(
    data: &Dataset,
    schema: &Schema,
    rules: &RuleSet,
    config: &GibbsConfig,
) -> Result<(Vec<Prepared>, Vec<Option<Vec<Code>>>), SamplerError> {
    let mask = config.error_prone_mask(schema);
    let out: Vec<Result<(Prepared, Option<Vec<Code>>), SamplerError>> = data
        .households
        .par_iter()
        .map(|h| {
            let none = vec![false; h.cells.len()];
            let mut start = None;
            let mode = if config.flag_all_households {
                Mode::Faulty
            } else if h.has_missing() {
                if config.flag_missing_households {
                    Mode::Faulty
                } else {
                    match rules.complete(h.size, &h.cells, &none, config.search_budget) {
                        Completion::Found(c) => {
                            start = Some(c);
                            Mode::MissingOnly
                        }
                        _ => Mode::Faulty,
                    }
                }
            } else if rules.is_valid(h.size, &h.cells) {
                Mode::Clean
            } else {
                Mode::Faulty
            };
            let prep = Prepared::new(schema, h, mode, &mask);
            if mode == Mode::Faulty {
                match rules.complete(h.size, &h.cells, &prep.free, config.search_budget) {
                    Completion::Found(c) => start = Some(c),
                    Completion::Impossible => return Err(SamplerError::Unrepairable(h.id.clone())),
                    Completion::Exhausted => {}
                }
            }
            Ok((prep, start))
        })
        .collect();
    let mut preps = Vec::with_capacity(out.len());
    let mut starts = Vec::with_capacity(out.len());
    for r in out {
        let (p, s) = r?;
        preps.push(p);
        starts.push(s);
    }
    Ok((preps, starts))
}

/// Runs the sampler on `data` inside a pool of `config.threads` workers.
pub fn run_gibbs(
    data: &Dataset,
    schema: &Schema,
    rules: &RuleSet,
    config: &GibbsConfig,
) -> Result<FitOutput, Error> {
    config.validate(schema)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads)
        .build()
        .map_err(|e| SamplerError::Config(e.to_string()))?;
    pool.install(|| Gibbs::new(data, schema, rules, config)?.run())
}

struct Gibbs<'a> {
    data: &'a Dataset,
    schema: &'a Schema,
    rules: &'a RuleSet,
    config: &'a GibbsConfig,
    psi: Vec<f64>,
    tracked: Vec<(String, EstimandQuery)>,
    n1_by_size: Vec<usize>,
    state: SamplerState,
    error_vars: Vec<usize>,
    substitution: Substitution,
}

impl<'a> Gibbs<'a> {
    fn new(
        data: &'a Dataset,
        schema: &'a Schema,
        rules: &'a RuleSet,
        config: &'a GibbsConfig,
    ) -> Result<Self, Error> {
        if data.is_empty() {
            return Err(SamplerError::Config("dataset has no households".into()).into());
        }
        let seed = config.seed;
        let tracked = config
            .trace
            .iter()
            .map(|t| Ok((t.clone(), parse_cell_query(t, t, schema)?)))
            .collect::<Result<Vec<_>, Error>>()?;
        let (prepared, starts) = prepare(data, schema, rules, config)?;
        let substitution = Substitution::by_name(schema, &config.substitution)?;
        let mut rng = substream(seed, 0, Phase::Init, 0);
        let params = NdpmpmParams::draw_prior(schema, config.f, config.s, &config.hyper, &mut rng);

        let nv = schema.variables().len();
        let mask = config.error_prone_mask(schema);
        let mut prior = vec![config.epsilon_prior; nv];
        for (name, &p) in &config.epsilon_prior_by_variable {
            prior[schema.index_of(name).unwrap()] = p;
        }
        let mut epsilon = vec![0.0; nv];
        for v in 0..nv {
            if mask[v] {
                epsilon[v] = 0.5;
            }
        }
        for (name, &e) in &config.fixed_epsilon {
            epsilon[schema.index_of(name).unwrap()] = e;
        }

        // Classes uniform at random, then starting values: the imputation
        // step at the starting rates, falling back to the search completion.
        let n = data.len();
        let mut latent = LatentAssignments {
            g: Vec::with_capacity(n),
            m: Vec::with_capacity(n),
            n0_by_size: vec![0; schema.sizes().len()],
            n1_by_size: data.size_counts(schema),
        };
        for h in &data.households {
            let mut r = substream(seed, 0, Phase::Init, 1 + latent.g.len() as u64);
            use rand::Rng;
            latent.g.push(r.random_range(0..config.f));
            latent.m.push(
                (0..h.members(schema))
                    .map(|_| r.random_range(0..config.s))
                    .collect(),
            );
        }
        let init_eps = epsilon.clone();
        let ctx = ImputeContext {
            params: &params,
            schema,
            rules,
            epsilon: &init_eps,
            substitution: &substitution,
        };
        let x: Vec<Result<Vec<Code>, SamplerError>> = (0..n)
            .into_par_iter()
            .map(|i| {
                let h = &data.households[i];
                let prep = &prepared[i];
                if prep.mode == Mode::Clean {
                    return Ok(h.cells.clone());
                }
                let mut r = substream(seed, 0, Phase::Impute, i as u64);
                match step_impute_household(
                    &ctx,
                    h,
                    prep,
                    latent.g[i],
                    &latent.m[i],
                    config.init_cap,
                    &mut r,
                ) {
                    Ok(x) => Ok(x),
                    Err(e) => starts[i].clone().ok_or(e),
                }
            })
            .collect();
        let x = x.into_iter().collect::<Result<Vec<_>, _>>()?;
        let e = (0..n)
            .map(|i| step_error_flags(&prepared[i], &x[i], &data.households[i].cells))
            .collect();
        let errors = ErrorState {
            z: prepared.iter().map(|p| p.z()).collect(),
            e,
            epsilon,
            prior,
            error_prone: mask,
        };
        let error_vars = (0..nv).filter(|&v| errors.error_prone[v]).collect();
        let n1_by_size = latent.n1_by_size.clone();
        Ok(Gibbs {
            data,
            schema,
            rules,
            config,
            psi: config.psi_for(schema),
            tracked,
            n1_by_size,
            state: SamplerState {
                params,
                latent,
                errors,
                x,
                prepared,
                augmented: Vec::new(),
            },
            error_vars,
            substitution,
        })
    }

    fn run(mut self) -> Result<FitOutput, Error> {
        let cfg = self.config;
        let slots = cfg.output_slots();
        let mut next_slot = 0;
        let mut retained = 0usize;
        let mut imputations = Vec::with_capacity(cfg.imputations);
        let mut trace = Vec::new();
        let mut eps_sum = vec![0.0; self.schema.variables().len()];
        let mut eps_n = 0usize;
        let any_faulty = self.state.prepared.iter().any(|p| p.z());
        let any_free = self.state.prepared.iter().any(|p| p.mode != Mode::Clean);

        for it in 1..=cfg.iterations {
            let iter = it as u64;
            if any_faulty || !self.error_vars.is_empty() {
                self.update_epsilon(iter);
            }
            if any_free {
                self.impute(iter)?;
            }
            self.augment(iter)?;
            self.latent(iter)?;
            self.update_params(iter);
            self.state.params.validate()?;
            self.record(it, &mut trace);

            if it > cfg.burn_in && (it - cfg.burn_in) % cfg.thin == 0 {
                for &v in &self.error_vars {
                    eps_sum[v] += self.state.errors.epsilon[v];
                }
                eps_n += 1;
                if next_slot < slots.len() && slots[next_slot] == retained {
                    imputations.push(self.current_dataset());
                    next_slot += 1;
                }
                retained += 1;
            }
        }
        let epsilon_mean = self
            .error_vars
            .iter()
            .map(|&v| {
                (
                    self.schema.variable(v).name.clone(),
                    eps_sum[v] / eps_n.max(1) as f64,
                )
            })
            .collect();
        Ok(FitOutput {
            imputations,
            trace,
            modes: self.state.prepared.iter().map(|p| p.mode).collect(),
            params: self.state.params,
            epsilon_mean,
        })
    }

    fn current_dataset(&self) -> Dataset {
        Dataset::new(
            self.data
                .households
                .iter()
                .zip(&self.state.x)
                .map(|(h, x)| Household {
                    id: h.id.clone(),
                    size: h.size,
                    cells: x.clone(),
                })
                .collect(),
        )
    }

    fn update_epsilon(&mut self, iter: u64) {
        let mut rng = substream(self.config.seed, iter, Phase::Epsilon, 0);
        let observed: Vec<Vec<bool>> = self
            .state
            .prepared
            .iter()
            .map(|p| p.observed.clone())
            .collect();
        let fixed: Vec<(usize, f64)> = self
            .config
            .fixed_epsilon
            .iter()
            .map(|(k, &v)| (self.schema.index_of(k).unwrap(), v))
            .collect();
        self.state.errors.update_epsilon(
            self.schema,
            &observed,
            self.config.missing_in_epsilon,
            &mut rng,
        );
        for (v, e) in fixed {
            self.state.errors.epsilon[v] = e;
        }
    }

    fn impute(&mut self, iter: u64) -> Result<(), SamplerError> {
        let st = &self.state;
        let snap = Snapshot::new(&st.params, self.schema);
        let ctx = ImputeContext {
            params: &st.params,
            schema: self.schema,
            rules: self.rules,
            epsilon: &st.errors.epsilon,
            substitution: &self.substitution,
        };
        let seed = self.config.seed;
        let cap = self.config.impute_cap;
        let results: Vec<Result<Option<(Vec<Code>, Option<(usize, Vec<usize>)>)>, SamplerError>> =
            (0..self.data.len())
                .into_par_iter()
                .map(|i| {
                    let prep = &st.prepared[i];
                    if prep.mode == Mode::Clean {
                        return Ok(None);
                    }
                    let h = &self.data.households[i];
                    let mut rng = substream(seed, iter, Phase::Impute, i as u64);
                    let (g, m) = (st.latent.g[i], &st.latent.m[i]);
                    match step_impute_household(&ctx, h, prep, g, m, cap, &mut rng) {
                        Ok(x) => Ok(Some((x, None))),
                        Err(_) => {
                            // Resample the classes given the current values and retry once.
                            let (g2, m2) = draw_classes(&snap, &h.id, h.size, &st.x[i], &mut rng)?;
                            let x = step_impute_household(&ctx, h, prep, g2, &m2, cap, &mut rng)?;
                            Ok(Some((x, Some((g2, m2)))))
                        }
                    }
                })
                .collect();
        for (i, r) in results.into_iter().enumerate() {
            if let Some((x, classes)) = r? {
                if let Some((g, m)) = classes {
                    self.state.latent.g[i] = g;
                    self.state.latent.m[i] = m;
                }
                self.state.errors.e[i] =
                    step_error_flags(&self.state.prepared[i], &x, &self.data.households[i].cells);
                self.state.x[i] = x;
            }
        }
        Ok(())
    }

    fn augment(&mut self, iter: u64) -> Result<(), SamplerError> {
        let snap = Snapshot::new(&self.state.params, self.schema);
        let aug = step_augment(
            &snap.gen,
            self.schema,
            self.rules,
            &self.n1_by_size,
            &self.psi,
            self.config.augment_cap,
            self.config.seed,
            iter,
        )?;
        self.state.latent.n0_by_size = aug.n0_by_size;
        self.state.augmented = aug.households;
        Ok(())
    }

    fn latent(&mut self, iter: u64) -> Result<(), SamplerError> {
        let snap = Snapshot::new(&self.state.params, self.schema);
        let seed = self.config.seed;
        let x = &self.state.x;
        let data = self.data;
        let draws: Vec<Result<(usize, Vec<usize>), SamplerError>> = (0..data.len())
            .into_par_iter()
            .map(|i| {
                let h = &data.households[i];
                let mut rng = substream(seed, iter, Phase::Latent, i as u64);
                draw_classes(&snap, &h.id, h.size, &x[i], &mut rng)
            })
            .collect();
        for (i, d) in draws.into_iter().enumerate() {
            let (g, m) = d?;
            self.state.latent.g[i] = g;
            self.state.latent.m[i] = m;
        }
        Ok(())
    }

    fn update_params(&mut self, iter: u64) {
        let st = &self.state;
        let stats = SuffStats::collect(
            &st.params,
            self.schema,
            &st.x,
            &st.latent.g,
            &st.latent.m,
            &st.augmented,
            &self.psi,
        );
        let mut rng = substream(self.config.seed, iter, Phase::Params, 0);
        self.state.params = step_update_params(&st.params, &stats, &self.config.hyper, &mut rng);
    }

    fn record(&self, it: usize, trace: &mut Vec<TracePoint>) {
        let st = &self.state;
        let mut push = |name: String, value: f64| {
            trace.push(TracePoint {
                iteration: it,
                name,
                value,
            })
        };
        push("alpha".into(), st.params.alpha);
        push("beta".into(), st.params.beta);
        for &v in &self.error_vars {
            push(
                format!("epsilon[{}]", self.schema.variable(v).name),
                st.errors.epsilon[v],
            );
        }
        let f = st.params.f;
        push(
            "occupied_household_classes".into(),
            NdpmpmParams::occupied(&st.latent.g, f) as f64,
        );
        let mut per_class = vec![vec![false; st.params.s]; f];
        for (g, ms) in st.latent.g.iter().zip(&st.latent.m) {
            for &m in ms {
                per_class[*g][m] = true;
            }
        }
        let max_ind = per_class
            .iter()
            .map(|r| r.iter().filter(|&&b| b).count())
            .max()
            .unwrap_or(0);
        push("occupied_individual_classes_max".into(), max_ind as f64);
        push("augmented_households".into(), st.latent.n0() as f64);
        if !self.tracked.is_empty() {
            let data = self.current_dataset();
            for (name, q) in &self.tracked {
                let p = crate::analyze::evaluate_query(&data, self.schema, q)
                    .map(|(p, _)| p)
                    .unwrap_or(f64::NAN);
                push(format!("p[{name}]"), p);
            }
        }
    }
}
