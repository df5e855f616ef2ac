//! Individual Gibbs updates. Each function draws from one full conditional
//! given everything else held fixed.

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;

use crate::data::{cell_variable, Code, Household, MISSING};
use crate::edits::RuleSet;
use crate::error::SamplerError;
use crate::merror::Substitution;
use crate::model::{
    beta, dirichlet, format_hits, log_household_mixture_weight, pick, pick_weights, Draw,
    Generator, Hyperparams, NdpmpmParams,
};
use crate::rng::{substream, Phase};
use crate::schema::Schema;

/// Role of a household in the fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Fully observed and rule-consistent; held fixed.
    Clean,
    /// Has missing cells that can be filled consistently; observed cells are held fixed.
    MissingOnly,
    /// Reported values cannot be completed consistently; `Z = 1`.
    Faulty,
}

/// Per-household fit metadata decided at initialization.
#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    pub mode: Mode,
    /// Cells redrawn in the imputation step.
    pub free: Vec<bool>,
    /// Free cells whose reported value enters through the reporting model.
    pub tilted: Vec<bool>,
    pub observed: Vec<bool>,
}

impl Prepared {
    pub fn z(&self) -> bool {
        self.mode == Mode::Faulty
    }

    /// Metadata for a household in `mode`; `error_prone[var]` marks variables
    /// whose observed cells may be wrong.
    pub fn new(schema: &Schema, y: &Household, mode: Mode, error_prone: &[bool]) -> Self {
        let n = y.cells.len();
        let observed: Vec<bool> = y.cells.iter().map(|&c| c != MISSING).collect();
        let mut free = vec![false; n];
        let mut tilted = vec![false; n];
        let size_cell = schema.size_cell();
        for c in 0..n {
            if c == size_cell {
                continue;
            }
            let ep = error_prone[cell_variable(schema, c)];
            match mode {
                Mode::Clean => {}
                Mode::MissingOnly => free[c] = !observed[c],
                Mode::Faulty => {
                    free[c] = !observed[c] || ep;
                    tilted[c] = observed[c] && ep;
                }
            }
        }
        Prepared {
            mode,
            free,
            tilted,
            observed,
        }
    }
}

/// Row of the true-value model that generates cell `c` given classes `g`, `m`.
#[inline]
fn base_row<'p>(
    params: &'p NdpmpmParams,
    schema: &Schema,
    c: usize,
    g: usize,
    m: &[usize],
) -> &'p [f64] {
    let q = schema.q();
    if c < q {
        params.lambda_row(c, g)
    } else {
        let j = (c - q) / schema.p();
        params.phi_row((c - q) % schema.p(), g, m[j])
    }
}

/// Fixed inputs of the imputation step.
#[derive(Debug, Clone, Copy)]
pub struct ImputeContext<'a> {
    pub params: &'a NdpmpmParams,
    pub schema: &'a Schema,
    pub rules: &'a RuleSet,
    /// Per schema variable.
    pub epsilon: &'a [f64],
    pub substitution: &'a Substitution,
}

/// Cumulative draw tables for the free cells: each category weighted by
/// the model row times `1 - eps` (equal to the report) or `eps * q(y | x)` otherwise.
pub fn tilted_tables(
    ctx: &ImputeContext,
    y: &[Code],
    prep: &Prepared,
    g: usize,
    m: &[usize],
) -> Vec<(usize, Vec<f64>)> {
    let mut out = Vec::new();
    for c in 0..y.len() {
        if !prep.free[c] {
            continue;
        }
        let row = base_row(ctx.params, ctx.schema, c, g, m);
        let mut acc = 0.0;
        let cum: Vec<f64> = if prep.tilted[c] {
            let var = cell_variable(ctx.schema, c);
            let eps = ctx.epsilon[var];
            let d = row.len();
            row.iter()
                .enumerate()
                .map(|(x, &p)| {
                    let x = x as Code + 1;
                    let w = if x == y[c] {
                        1.0 - eps
                    } else {
                        eps * ctx.substitution.prob(var, y[c], x, d)
                    };
                    acc += p * w;
                    acc
                })
                .collect()
        } else {
            row.iter()
                .map(|&p| {
                    acc += p;
                    acc
                })
                .collect()
        };
        out.push((c, cum));
    }
    out
}

/// Draws true values for one household by rejection from the tilted
/// products until no rule fires. Non-free cells keep their reported values.
pub fn step_impute_household<R: Rng + ?Sized>(
    ctx: &ImputeContext,
    y: &Household,
    prep: &Prepared,
    g: usize,
    m: &[usize],
    cap: u64,
    rng: &mut R,
) -> Result<Vec<Code>, SamplerError> {
    let mut x = y.cells.clone();
    if prep.mode == Mode::Clean {
        return Ok(x);
    }
    let tables = tilted_tables(ctx, &y.cells, prep, g, m);
    let mut hits = vec![0u64; ctx.rules.len()];
    for _ in 0..cap {
        for (c, cum) in &tables {
            x[*c] = pick(cum, rng.random()) as Code + 1;
        }
        match ctx.rules.first_violation(y.size, &x) {
            None => return Ok(x),
            Some(r) => hits[r] += 1,
        }
    }
    Err(SamplerError::ImputeCap {
        household: y.id.clone(),
        attempts: cap,
        hits: format_hits(ctx.rules, &hits),
    })
}

/// Error flags after imputation: reported differs from true on observed
/// cells, and every missing cell, for flagged households only.
pub fn step_error_flags(prep: &Prepared, x: &[Code], y: &[Code]) -> Vec<bool> {
    if !prep.z() {
        return vec![false; x.len()];
    }
    (0..x.len())
        .map(|c| !prep.observed[c] || (prep.tilted[c] && x[c] != y[c]))
        .collect()
}

/// Parameter-derived tables reused by every household within one sweep.
#[derive(Debug, Clone)]
pub struct Snapshot<'a> {
    pub params: &'a NdpmpmParams,
    pub schema: &'a Schema,
    pub gen: Generator<'a>,
    log_pi: Vec<f64>,
    log_lambda: Vec<Vec<f64>>,
}

impl<'a> Snapshot<'a> {
    pub fn new(params: &'a NdpmpmParams, schema: &'a Schema) -> Self {
        Snapshot {
            params,
            schema,
            gen: Generator::new(params, schema),
            log_pi: params.pi.iter().map(|p| p.ln()).collect(),
            log_lambda: params
                .lambda
                .iter()
                .map(|l| l.iter().map(|p| p.ln()).collect())
                .collect(),
        }
    }
}

/// Normalized household-class posterior of a complete household.
pub fn class_posterior(
    params: &NdpmpmParams,
    schema: &Schema,
    size: usize,
    cells: &[Code],
) -> Vec<f64> {
    let lw = log_household_mixture_weight(params, schema, size, cells);
    normalize_logs(&lw)
}

fn normalize_logs(lw: &[f64]) -> Vec<f64> {
    let mx = lw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if mx == f64::NEG_INFINITY {
        return vec![0.0; lw.len()];
    }
    let w: Vec<f64> = lw.iter().map(|l| (l - mx).exp()).collect();
    let t: f64 = w.iter().sum();
    w.into_iter().map(|x| x / t).collect()
}

/// Draws the household class, then each member's class, for a complete household.
pub fn draw_classes<R: Rng + ?Sized>(
    snap: &Snapshot,
    id: &str,
    size: usize,
    cells: &[Code],
    rng: &mut R,
) -> Result<(usize, Vec<usize>), SamplerError> {
    let params = snap.params;
    let (f, s) = (params.f, params.s);
    let (q, p) = (snap.schema.q(), snap.schema.p());
    let members = snap.schema.members_for_size(size);
    // prod[(j * f + g) * s + m] = omega_gm * prod_k phi
    let mut prod = vec![0.0; members * f * s];
    let mut lw = vec![0.0; f];
    let mut linear_ok = true;
    for g in 0..f {
        let mut l = snap.log_pi[g];
        for k in 0..q {
            l += snap.log_lambda[k][g * params.hh_card[k] + cells[k] as usize - 1];
        }
        for j in 0..members {
            let x = &cells[q + j * p..q + (j + 1) * p];
            let base = (j * f + g) * s;
            let mut sum = 0.0;
            for m in 0..s {
                let mut w = params.omega[g * s + m];
                for (k, &xk) in x.iter().enumerate() {
                    w *= params.phi[k][(g * s + m) * params.ind_card[k] + xk as usize - 1];
                }
                prod[base + m] = w;
                sum += w;
            }
            if sum > 0.0 {
                l += sum.ln();
            } else {
                l = f64::NEG_INFINITY;
                linear_ok = false;
            }
        }
        lw[g] = l;
    }
    if !linear_ok && lw.iter().all(|l| *l == f64::NEG_INFINITY) {
        // Member products underflowed in every class; redo in log space.
        lw = log_household_mixture_weight(params, snap.schema, size, cells);
        let post = normalize_logs(&lw);
        if post.iter().all(|w| *w == 0.0) {
            return Err(SamplerError::ZeroWeights(id.to_string()));
        }
        let g = pick_weights(&post, rng);
        let mut ms = Vec::with_capacity(members);
        for j in 0..members {
            let x = &cells[q + j * p..q + (j + 1) * p];
            let logs: Vec<f64> = (0..s)
                .map(|m| {
                    let mut l = params.omega_row(g)[m].ln();
                    for (k, &xk) in x.iter().enumerate() {
                        l += params.phi_row(k, g, m)[xk as usize - 1].ln();
                    }
                    l
                })
                .collect();
            ms.push(pick_weights(&normalize_logs(&logs), rng));
        }
        return Ok((g, ms));
    }
    let post = normalize_logs(&lw);
    if post.iter().all(|w| *w == 0.0) {
        return Err(SamplerError::ZeroWeights(id.to_string()));
    }
    let g = pick_weights(&post, rng);
    let ms = (0..members)
        .map(|j| {
            let base = (j * f + g) * s;
            pick_weights(&prod[base..base + s], rng)
        })
        .collect();
    Ok((g, ms))
}

/// Impossible households generated in one augmentation sweep.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Augmentation {
    pub households: Vec<Draw>,
    /// Per allowed size, in schema order.
    pub n0_by_size: Vec<usize>,
    pub t1_by_size: Vec<usize>,
    pub draws: u64,
}

/// Rule-passing targets per size: `ceil(n_h * psi_h)`.
pub fn augment_targets(n1_by_size: &[usize], psi: &[f64]) -> Vec<usize> {
    n1_by_size
        .iter()
        .zip(psi)
        .map(|(&n, &p)| {
            let t = n as f64 * p;
            // Guard against 0.5 * 3 = 1.5000000000000002 style noise.
            (t - 1e-9).ceil().max(0.0) as usize
        })
        .collect()
}

/// Generates size-conditioned households until `ceil(n_h * psi_h)` of them
/// pass the rules, keeping the ones that fail. Each target slot draws from
/// its own substream.
#[allow(clippy::too_many_arguments)]
pub fn step_augment(
    gen: &Generator,
    schema: &Schema,
    rules: &RuleSet,
    n1_by_size: &[usize],
    psi: &[f64],
    cap: u64,
    seed: u64,
    iteration: u64,
) -> Result<Augmentation, SamplerError> {
    let t1 = augment_targets(n1_by_size, psi);
    let nsizes = schema.sizes().len();
    if rules.is_empty() {
        return Ok(Augmentation {
            households: Vec::new(),
            n0_by_size: vec![0; nsizes],
            t1_by_size: t1,
            draws: 0,
        });
    }
    let slots: Vec<(usize, usize)> = t1
        .iter()
        .enumerate()
        .flat_map(|(hc, &t)| (0..t).map(move |j| (hc, j)))
        .collect();
    let results: Vec<Result<(usize, Vec<Draw>, u64), SamplerError>> = slots
        .par_iter()
        .enumerate()
        .map(|(idx, &(hc, _))| {
            let size = schema.sizes()[hc];
            let mut rng = substream(seed, iteration, Phase::Augment, idx as u64);
            let mut bad = Vec::new();
            let mut d = gen.empty_draw();
            let mut n = 0u64;
            loop {
                n += 1;
                if n > cap {
                    return Err(SamplerError::AugmentCap {
                        size,
                        attempts: cap,
                    });
                }
                gen.draw(Some(size), &mut rng, &mut d);
                if rules.is_valid(size, &d.cells) {
                    return Ok((hc, bad, n));
                }
                bad.push(d.clone());
            }
        })
        .collect();
    let mut out = Augmentation {
        households: Vec::new(),
        n0_by_size: vec![0; nsizes],
        t1_by_size: t1,
        draws: 0,
    };
    for r in results {
        let (hc, bad, n) = r?;
        out.draws += n;
        out.n0_by_size[hc] += bad.len();
        out.households.extend(bad);
    }
    if out.draws > cap {
        let hc = (0..nsizes).max_by_key(|&h| out.n0_by_size[h]).unwrap_or(0);
        return Err(SamplerError::AugmentCap {
            size: schema.sizes()[hc],
            attempts: cap,
        });
    }
    Ok(out)
}

/// Weighted class and category counts feeding the conjugate updates.
#[derive(Debug, Clone, PartialEq)]
pub struct SuffStats {
    pub f: usize,
    pub s: usize,
    /// Households per class.
    pub u: Vec<f64>,
    /// Member records per (household class, member class), `F x S`.
    pub v: Vec<f64>,
    /// `eta[k][g * d + c]`.
    pub eta: Vec<Vec<f64>>,
    /// `nu[k][(g * S + m) * d + c]`.
    pub nu: Vec<Vec<f64>>,
}

impl SuffStats {
    pub fn zeros(params: &NdpmpmParams) -> Self {
        let (f, s) = (params.f, params.s);
        SuffStats {
            f,
            s,
            u: vec![0.0; f],
            v: vec![0.0; f * s],
            eta: params.hh_card.iter().map(|&d| vec![0.0; f * d]).collect(),
            nu: params
                .ind_card
                .iter()
                .map(|&d| vec![0.0; f * s * d])
                .collect(),
        }
    }

    /// Adds one complete household with weight `w`.
    pub fn add(&mut self, schema: &Schema, cells: &[Code], g: usize, m: &[usize], w: f64) {
        let (q, p) = (schema.q(), schema.p());
        self.u[g] += w;
        for k in 0..q {
            let d = self.eta[k].len() / self.f;
            self.eta[k][g * d + cells[k] as usize - 1] += w;
        }
        for (j, &mj) in m.iter().enumerate() {
            self.v[g * self.s + mj] += w;
            for k in 0..p {
                let d = self.nu[k].len() / (self.f * self.s);
                self.nu[k][(g * self.s + mj) * d + cells[q + j * p + k] as usize - 1] += w;
            }
        }
    }

    /// Counts from observed households (weight 1) and augmented households
    /// (weight `1 / psi_h`).
    pub fn collect(
        params: &NdpmpmParams,
        schema: &Schema,
        x: &[Vec<Code>],
        g: &[usize],
        m: &[Vec<usize>],
        augmented: &[Draw],
        psi: &[f64],
    ) -> Self {
        let mut st = SuffStats::zeros(params);
        for i in 0..x.len() {
            st.add(schema, &x[i], g[i], &m[i], 1.0);
        }
        for d in augmented {
            let hc = schema.size_code(d.size).unwrap() as usize - 1;
            st.add(schema, &d.cells, d.g, &d.m, 1.0 / psi[hc]);
        }
        st
    }

    /// Beta parameters of `u_g`, `g < F`: `(1 + U_g, alpha + sum_{f > g} U_f)`.
    pub fn u_beta_params(&self, alpha: f64) -> Vec<(f64, f64)> {
        (0..self.f - 1)
            .map(|g| (1.0 + self.u[g], alpha + self.u[g + 1..].iter().sum::<f64>()))
            .collect()
    }

    /// Beta parameters of `v_gm`, `m < S`, row-major over `g`.
    pub fn v_beta_params(&self, beta_c: f64) -> Vec<(f64, f64)> {
        let s = self.s;
        let mut out = Vec::with_capacity(self.f * (s - 1));
        for g in 0..self.f {
            let row = &self.v[g * s..(g + 1) * s];
            for m in 0..s - 1 {
                out.push((1.0 + row[m], beta_c + row[m + 1..].iter().sum::<f64>()));
            }
        }
        out
    }
}

/// Conjugate draws of sticks, category probabilities and concentrations.
pub fn step_update_params<R: Rng + ?Sized>(
    params: &NdpmpmParams,
    stats: &SuffStats,
    hyper: &Hyperparams,
    rng: &mut R,
) -> NdpmpmParams {
    let (f, s) = (params.f, params.s);
    let mut u: Vec<f64> = stats
        .u_beta_params(params.alpha)
        .into_iter()
        .map(|(a, b)| beta(a, b, rng))
        .collect();
    u.push(1.0);
    let vb = stats.v_beta_params(params.beta);
    let mut v = Vec::with_capacity(f * s);
    for g in 0..f {
        for m in 0..s - 1 {
            let (a, b) = vb[g * (s - 1) + m];
            v.push(beta(a, b, rng));
        }
        v.push(1.0);
    }
    let lambda: Vec<Vec<f64>> = stats
        .eta
        .iter()
        .zip(&params.hh_card)
        .map(|(eta, &d)| {
            eta.chunks(d)
                .flat_map(|row| {
                    let conc: Vec<f64> = row.iter().map(|c| hyper.dirichlet + c).collect();
                    dirichlet(&conc, rng)
                })
                .collect()
        })
        .collect();
    let phi: Vec<Vec<f64>> = stats
        .nu
        .iter()
        .zip(&params.ind_card)
        .map(|(nu, &d)| {
            nu.chunks(d)
                .flat_map(|row| {
                    let conc: Vec<f64> = row.iter().map(|c| hyper.dirichlet + c).collect();
                    dirichlet(&conc, rng)
                })
                .collect()
        })
        .collect();
    let log1m = |x: f64| (1.0 - x).max(f64::MIN_POSITIVE).ln();
    let su: f64 = u[..f - 1].iter().map(|&x| log1m(x)).sum();
    let alpha = Gamma::new(hyper.a_alpha + (f - 1) as f64, 1.0 / (hyper.b_alpha - su))
        .unwrap()
        .sample(rng);
    let mut sv = 0.0;
    for g in 0..f {
        for m in 0..s - 1 {
            sv += log1m(v[g * s + m]);
        }
    }
    let beta_c = Gamma::new(
        hyper.a_beta + (f * (s - 1)) as f64,
        1.0 / (hyper.b_beta - sv),
    )
    .unwrap()
    .sample(rng);
    let pi = crate::model::stick_break(&u).expect("fractions in range");
    let mut omega = Vec::with_capacity(f * s);
    for g in 0..f {
        omega
            .extend(crate::model::stick_break(&v[g * s..(g + 1) * s]).expect("fractions in range"));
    }
    NdpmpmParams {
        f,
        s,
        u,
        v,
        pi,
        omega,
        lambda,
        phi,
        alpha: alpha.max(f64::MIN_POSITIVE),
        beta: beta_c.max(f64::MIN_POSITIVE),
        hh_card: params.hh_card.clone(),
        ind_card: params.ind_card.clone(),
    }
}
