//! Acceptance suite. Runs every criterion in order, prints one line per
//! criterion and exits non-zero if any fails.
//!
//! `EIHD_ACCEPTANCE=2,3` restricts the run to the listed criteria.

use std::collections::BTreeMap;
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use eihd::analyze::{evaluation_report, Battery, QueryKind};
use eihd::contaminate::{blank_missing, inject_errors, pram, ContaminationSpec};
use eihd::data::{cell_variable, Code, Dataset, Household, MISSING};
use eihd::edits::{default_acs_rules, RuleSet};
use eihd::io::{write_microdata, write_trace, CsvOptions};
use eihd::merror::{ErrorState, MissingInEpsilon, Substitution};
use eihd::model::{
    dirichlet, sample_household_truncated, size_distribution, synthesize, Generator, NdpmpmParams,
};
use eihd::sampler::{
    draw_classes, prepare, run_gibbs, step_augment, step_impute_household, FitOutput, GibbsConfig,
    ImputeContext, Mode, Prepared, Snapshot, SuffStats,
};
use eihd::schema::{default_acs_schema, HeadLayout, Level, Schema, Variable};

const TV_TOL: f64 = 0.02;
const DRAWS: usize = 100_000;
const MARGINAL_TOL: f64 = 0.03;
const BIVARIATE_TOL: f64 = 0.05;
const EPSILON_TOL: f64 = 0.10;
const COVERAGE_MIN: f64 = 0.90;
const PSI_AGREEMENT: f64 = 0.02;
const FLAGGED_TOL: f64 = 0.02;
const ERROR_RATE: f64 = 0.17;
const ERROR_RATE_TOL: f64 = 0.03;
const PRAM_KEEP: f64 = 0.6;
const PRAM_TOL: f64 = 0.01;
const SIZE_TOL: f64 = 0.03;

const PAPER_EPSILON: [(&str, f64); 5] = [
    ("HeadGender", 0.65),
    ("HeadAge", 0.80),
    ("Gender", 0.70),
    ("Age", 0.85),
    ("Relationship", 0.90),
];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

/// Datasets emitted by fits and synthesis, checked together by criterion 1.
#[derive(Default)]
struct Emitted {
    sets: Vec<(String, Dataset, RuleSet)>,
}

impl Emitted {
    fn add(&mut self, what: &str, data: &[Dataset], rules: &RuleSet) {
        for (i, d) in data.iter().enumerate() {
            self.sets
                .push((format!("{what}#{i}"), d.clone(), rules.clone()));
        }
    }
}

// ---------------------------------------------------------------------------
// Toy domain: size 2, household variable H, individual variables A and B.

fn toy_schema() -> Schema {
    Schema::new(
        vec![
            Variable::new("Size", Level::Household, 1).size(),
            Variable::new("H", Level::Household, 2),
            Variable::new("A", Level::Individual, 2),
            Variable::new("B", Level::Individual, 2),
        ],
        vec![2],
        HeadLayout::Member,
    )
    .unwrap()
}

fn toy_rules(s: &Schema) -> RuleSet {
    RuleSet::parse("rule r: forall p: hh.H == 2 and p.A == 2 => violation", s).unwrap()
}

fn toy_params(s: &Schema) -> NdpmpmParams {
    NdpmpmParams::from_parts(
        s,
        2,
        2,
        vec![0.6, 1.0],
        vec![0.7, 1.0, 0.35, 1.0],
        vec![vec![1.0, 1.0], vec![0.3, 0.7, 0.75, 0.25]],
        vec![
            vec![0.2, 0.8, 0.6, 0.4, 0.9, 0.1, 0.45, 0.55],
            vec![0.5, 0.5, 0.15, 0.85, 0.7, 0.3, 0.35, 0.65],
        ],
        1.0,
        1.0,
    )
    .unwrap()
}

/// Every complete size-2 household of the toy schema, as cell vectors.
fn toy_space() -> Vec<Vec<Code>> {
    let mut out = Vec::new();
    for bits in 0..32u32 {
        let b = |k: u32| ((bits >> k) & 1) as Code + 1;
        out.push(vec![1, b(0), b(1), b(2), b(3), b(4)]);
    }
    out
}

/// Independent evaluation of the toy rule.
fn toy_valid(x: &[Code]) -> bool {
    !(x[1] == 2 && (x[2] == 2 || x[4] == 2))
}

fn phi(p: &NdpmpmParams, k: usize, g: usize, m: usize, c: Code) -> f64 {
    p.phi[k][(g * 2 + m) * 2 + c as usize - 1]
}

/// Joint probability of `(g, m1, m2, x)` under the untruncated toy model.
fn toy_joint(p: &NdpmpmParams, g: usize, ms: [usize; 2], x: &[Code]) -> f64 {
    let mut w = p.pi[g] * p.lambda[1][g * 2 + x[1] as usize - 1];
    for (j, &m) in ms.iter().enumerate() {
        w *= p.omega[g * 2 + m] * phi(p, 0, g, m, x[2 + 2 * j]) * phi(p, 1, g, m, x[3 + 2 * j]);
    }
    w
}

fn toy_prob(p: &NdpmpmParams, x: &[Code]) -> f64 {
    let mut t = 0.0;
    for g in 0..2 {
        for m1 in 0..2 {
            for m2 in 0..2 {
                t += toy_joint(p, g, [m1, m2], x);
            }
        }
    }
    t
}

fn tv(emp: &BTreeMap<Vec<Code>, usize>, exact: &BTreeMap<Vec<Code>, f64>, n: usize) -> f64 {
    let mut keys: Vec<&Vec<Code>> = exact.keys().collect();
    keys.extend(emp.keys());
    keys.sort();
    keys.dedup();
    0.5 * keys
        .into_iter()
        .map(|k| {
            let e = *emp.get(k).unwrap_or(&0) as f64 / n as f64;
            (e - exact.get(k).copied().unwrap_or(0.0)).abs()
        })
        .sum::<f64>()
}

fn normalized(m: BTreeMap<Vec<Code>, f64>) -> BTreeMap<Vec<Code>, f64> {
    let t: f64 = m.values().sum();
    m.into_iter().map(|(k, v)| (k, v / t)).collect()
}

fn criterion_2() -> Outcome {
    let s = toy_schema();
    let rules = toy_rules(&s);
    let params = toy_params(&s);
    let gen = Generator::new(&params, &s);
    let space = toy_space();
    let mut details = Vec::new();
    let mut pass = true;
    let mut check = |name: &str, d: f64| {
        pass &= d <= TV_TOL;
        details.push(format!("{name} TV={d:.4}"));
    };

    // Imputation conditional for a flagged household with one missing cell.
    let y = Household::new(&s, "y", 2, vec![1, 2, 2, 1, 2, MISSING]).unwrap();
    let prone = vec![false, true, true, true];
    let prep = Prepared::new(&s, &y, Mode::Faulty, &prone);
    let eps = vec![0.0, 0.3, 0.5, 0.2];
    let subst = Substitution::Uniform;
    let ctx = ImputeContext {
        params: &params,
        schema: &s,
        rules: &rules,
        epsilon: &eps,
        substitution: &subst,
    };
    let (g, ms) = (1usize, [0usize, 1]);
    let mut exact = BTreeMap::new();
    for x in &space {
        if !toy_valid(x) {
            continue;
        }
        let mut w = params.lambda[1][g * 2 + x[1] as usize - 1];
        for j in 0..2 {
            w *= phi(&params, 0, g, ms[j], x[2 + 2 * j]) * phi(&params, 1, g, ms[j], x[3 + 2 * j]);
        }
        for c in 1..6 {
            if y.cells[c] == MISSING {
                continue;
            }
            let e = eps[cell_variable(&s, c)];
            w *= if x[c] == y.cells[c] { 1.0 - e } else { e };
        }
        exact.insert(x.clone(), w);
    }
    let exact = normalized(exact);
    let mut emp = BTreeMap::new();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..DRAWS {
        let x = step_impute_household(&ctx, &y, &prep, g, &ms, 1_000_000, &mut rng).unwrap();
        *emp.entry(x).or_insert(0) += 1;
    }
    check("impute", tv(&emp, &exact, DRAWS));

    // Augmentation: acceptance fraction and the law of the kept impossible households.
    let p_valid: f64 = space
        .iter()
        .filter(|x| toy_valid(x))
        .map(|x| toy_prob(&params, x))
        .sum();
    let targets = (DRAWS as f64 * p_valid) as usize;
    let aug = step_augment(&gen, &s, &rules, &[targets], &[1.0], u64::MAX, 5, 1).unwrap();
    let accept = targets as f64 / aug.draws as f64;
    check("augment acceptance", (accept - p_valid).abs());
    let exact: BTreeMap<Vec<Code>, f64> = normalized(
        space
            .iter()
            .filter(|x| !toy_valid(x))
            .map(|x| (x.clone(), toy_prob(&params, x)))
            .collect(),
    );
    let mut emp = BTreeMap::new();
    for d in &aug.households {
        *emp.entry(d.cells.clone()).or_insert(0) += 1;
    }
    check("augment law", tv(&emp, &exact, aug.households.len()));

    // Class posterior of a complete household.
    let x = vec![1, 2, 1, 2, 2, 1];
    let snap = Snapshot::new(&params, &s);
    let mut exact = BTreeMap::new();
    for g in 0..2 {
        for m1 in 0..2 {
            for m2 in 0..2 {
                exact.insert(
                    vec![g as Code, m1, m2],
                    toy_joint(&params, g, [m1 as usize, m2 as usize], &x),
                );
            }
        }
    }
    let exact = normalized(exact);
    let mut emp = BTreeMap::new();
    for _ in 0..DRAWS {
        let (g, m) = draw_classes(&snap, "x", 2, &x, &mut rng).unwrap();
        *emp.entry(vec![g as Code, m[0] as Code, m[1] as Code])
            .or_insert(0) += 1;
    }
    check("classes", tv(&emp, &exact, DRAWS));

    // Truncated generative law.
    let exact: BTreeMap<Vec<Code>, f64> = normalized(
        space
            .iter()
            .filter(|x| toy_valid(x))
            .map(|x| (x.clone(), toy_prob(&params, x)))
            .collect(),
    );
    let mut emp = BTreeMap::new();
    for _ in 0..DRAWS {
        let d = sample_household_truncated(&gen, &rules, 2, 1_000_000, &mut rng).unwrap();
        *emp.entry(d.cells).or_insert(0) += 1;
    }
    check("truncated", tv(&emp, &exact, DRAWS));
    outcome(pass, details.join(", "))
}

// ---------------------------------------------------------------------------

fn random_household<R: Rng>(s: &Schema, id: usize, rng: &mut R) -> Household {
    let size = s.sizes()[rng.random_range(0..s.sizes().len())];
    let cells = (0..s.cell_count(size))
        .map(|c| {
            if c == s.size_cell() {
                s.size_code(size).unwrap()
            } else {
                let v = cell_variable(s, c);
                rng.random_range(1..=s.variable(v).cardinality as Code)
            }
        })
        .collect();
    Household::new(s, format!("h{id}"), size, cells).unwrap()
}

fn criterion_3() -> Outcome {
    let s = default_acs_schema();
    let nv = s.variables().len();
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let mut eps_ok = 0;
    let mut stats_ok = 0;
    let configs = 100;
    for _ in 0..configs {
        // Error-rate counts.
        let n = rng.random_range(1..40);
        let hs: Vec<Household> = (0..n).map(|i| random_household(&s, i, &mut rng)).collect();
        let prone: Vec<bool> = (0..nv)
            .map(|v| v != s.size_var() && rng.random_bool(0.6))
            .collect();
        let z: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
        let e: Vec<Vec<bool>> = hs
            .iter()
            .map(|h| h.cells.iter().map(|_| rng.random_bool(0.3)).collect())
            .collect();
        let observed: Vec<Vec<bool>> = hs
            .iter()
            .map(|h| h.cells.iter().map(|_| rng.random_bool(0.8)).collect())
            .collect();
        let st = ErrorState {
            z: z.clone(),
            e: e.clone(),
            epsilon: vec![0.5; nv],
            prior: vec![(1.0, 1.0); nv],
            error_prone: prone.clone(),
        };
        let mut all = true;
        for mode in [MissingInEpsilon::Count, MissingInEpsilon::Exclude] {
            let got = st.counts(&s, &observed, mode);
            let mut want = vec![(0u64, 0u64); nv];
            for (i, h) in hs.iter().enumerate() {
                if !z[i] {
                    continue;
                }
                let q = s.q();
                for c in 0..h.cells.len() {
                    let var = if c < q {
                        s.household_vars()[c]
                    } else {
                        s.individual_vars()[(c - q) % s.p()]
                    };
                    if !prone[var] || (mode == MissingInEpsilon::Exclude && !observed[i][c]) {
                        continue;
                    }
                    if e[i][c] {
                        want[var].0 += 1;
                    } else {
                        want[var].1 += 1;
                    }
                }
            }
            all &= got == want;
        }
        eps_ok += all as usize;

        // Class and category counts with augmentation weights.
        let f = rng.random_range(1..5);
        let sc = rng.random_range(1..4);
        let params = NdpmpmParams::draw_prior(&s, f, sc, &Default::default(), &mut rng);
        let psi: Vec<f64> = s
            .sizes()
            .iter()
            .map(|_| [1.0, 0.5, 0.25][rng.random_range(0..3)])
            .collect();
        let g: Vec<usize> = (0..n).map(|_| rng.random_range(0..f)).collect();
        let m: Vec<Vec<usize>> = hs
            .iter()
            .map(|h| {
                (0..h.members(&s))
                    .map(|_| rng.random_range(0..sc))
                    .collect()
            })
            .collect();
        let x: Vec<Vec<Code>> = hs.iter().map(|h| h.cells.clone()).collect();
        let gen = Generator::new(&params, &s);
        let aug: Vec<_> = (0..rng.random_range(0..30))
            .map(|_| {
                let mut d = gen.empty_draw();
                gen.draw(None, &mut rng, &mut d);
                d
            })
            .collect();
        let stats = SuffStats::collect(&params, &s, &x, &g, &m, &aug, &psi);

        let mut records: Vec<(&[Code], usize, &[usize], f64)> = (0..n)
            .map(|i| (x[i].as_slice(), g[i], m[i].as_slice(), 1.0))
            .collect();
        for d in &aug {
            let hc = s.sizes().iter().position(|&h| h == d.size).unwrap();
            records.push((d.cells.as_slice(), d.g, d.m.as_slice(), 1.0 / psi[hc]));
        }
        let mut ok = true;
        for gg in 0..f {
            let u: f64 = records.iter().filter(|r| r.1 == gg).map(|r| r.3).sum();
            ok &= stats.u[gg] == u;
            for (k, &var) in s.household_vars().iter().enumerate() {
                for c in 1..=s.variable(var).cardinality as Code {
                    let want: f64 = records
                        .iter()
                        .filter(|r| r.1 == gg && r.0[k] == c)
                        .map(|r| r.3)
                        .sum();
                    let d = s.variable(var).cardinality;
                    ok &= stats.eta[k][gg * d + c as usize - 1] == want;
                }
            }
            for mm in 0..sc {
                let v: f64 = records
                    .iter()
                    .filter(|r| r.1 == gg)
                    .map(|r| r.2.iter().filter(|&&x| x == mm).count() as f64 * r.3)
                    .sum();
                ok &= stats.v[gg * sc + mm] == v;
                for (k, &var) in s.individual_vars().iter().enumerate() {
                    let d = s.variable(var).cardinality;
                    for c in 1..=d as Code {
                        let mut want = 0.0;
                        for r in records.iter().filter(|r| r.1 == gg) {
                            for (j, &mj) in r.2.iter().enumerate() {
                                if mj == mm && r.0[s.q() + j * s.p() + k] == c {
                                    want += r.3;
                                }
                            }
                        }
                        ok &= stats.nu[k][(gg * sc + mm) * d + c as usize - 1] == want;
                    }
                }
            }
        }
        let ub = stats.u_beta_params(params.alpha);
        for gg in 0..f - 1 {
            let rest: f64 = (gg + 1..f).map(|h| stats.u[h]).sum();
            ok &= ub[gg] == (1.0 + stats.u[gg], params.alpha + rest);
        }
        let vb = stats.v_beta_params(params.beta);
        for gg in 0..f {
            for mm in 0..sc - 1 {
                let rest: f64 = (mm + 1..sc).map(|h| stats.v[gg * sc + h]).sum();
                ok &= vb[gg * (sc - 1) + mm] == (1.0 + stats.v[gg * sc + mm], params.beta + rest);
            }
        }
        stats_ok += ok as usize;
    }
    outcome(
        eps_ok == configs && stats_ok == configs,
        format!("error-rate counts {eps_ok}/{configs}, class/category counts {stats_ok}/{configs}"),
    )
}

// ---------------------------------------------------------------------------
// Recovery study schema: size 2-4, head characteristics at household level,
// ages in decades.

const DECADE_RULES: &str = "\
rule head_under_20: head.Age < 2 => violation
rule two_spouses: forall p, q: p.Relationship == spouse and q.Relationship == spouse => violation
rule spouse_under_20: forall p: p.Relationship == spouse and p.Age < 2 => violation
rule spouse_same_gender: forall p: p.Relationship == spouse and p.Gender == head.Gender => violation
rule spouse_age_gap: forall p: p.Relationship == spouse and (p.Age > head.Age + 2 or p.Age < head.Age - 2) => violation
rule child_too_old: forall p: p.Relationship == child and p.Age > head.Age - 2 => violation
rule parent_too_young: forall p: p.Relationship == parent and p.Age < head.Age + 2 => violation
";

fn recovery_schema() -> Schema {
    Schema::new(
        vec![
            Variable::new("Size", Level::Household, 3).size(),
            Variable::new("HeadGender", Level::Household, 2)
                .with_labels(&["male", "female"])
                .head_of("Gender"),
            Variable::new("HeadAge", Level::Household, 9)
                .ordered(0)
                .head_of("Age"),
            Variable::new("Gender", Level::Individual, 2).with_labels(&["male", "female"]),
            Variable::new("Age", Level::Individual, 9).ordered(0),
            Variable::new("Relationship", Level::Individual, 4)
                .with_labels(&["spouse", "child", "parent", "other"]),
        ],
        vec![2, 3, 4],
        HeadLayout::Household,
    )
    .unwrap()
}

fn generating_params(s: &Schema) -> NdpmpmParams {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let (f, sc) = (4, 3);
    let hh = s
        .household_vars()
        .iter()
        .map(|&v| {
            let d = s.variable(v).cardinality;
            (0..f)
                .flat_map(|_| dirichlet(&vec![1.0; d], &mut rng))
                .collect()
        })
        .collect();
    let ind = s
        .individual_vars()
        .iter()
        .map(|&v| {
            let d = s.variable(v).cardinality;
            (0..f * sc)
                .flat_map(|_| dirichlet(&vec![1.0; d], &mut rng))
                .collect()
        })
        .collect();
    NdpmpmParams::from_parts(
        s,
        f,
        sc,
        vec![0.35, 0.4, 0.5, 1.0],
        vec![0.5, 0.6, 1.0, 0.4, 0.5, 1.0, 0.6, 0.5, 1.0, 0.3, 0.6, 1.0],
        hh,
        ind,
        1.0,
        1.0,
    )
    .unwrap()
}

struct Study {
    schema: Schema,
    rules: RuleSet,
    clean: Dataset,
    observed: Dataset,
    epsilon: BTreeMap<String, f64>,
}

/// Errors go into four rule variables; member gender is the one variable
/// not subject to errors and is blanked instead.
fn recovery_study() -> Study {
    let schema = recovery_schema();
    let rules = RuleSet::parse(DECADE_RULES, &schema).unwrap();
    let truth = generating_params(&schema);
    let clean = synthesize(&truth, &rules, 1500, 10_000_000, 4040).unwrap();
    let spec = ContaminationSpec {
        rho: 0.2,
        epsilon: PAPER_EPSILON
            .iter()
            .filter(|(k, _)| *k != "Gender")
            .map(|(k, v)| (k.to_string(), *v))
            .collect(),
        missing_rate: 0.2,
        seed: 4041,
        ..Default::default()
    };
    let (faulty, _) = inject_errors(&clean, &spec, &rules).unwrap();
    let rates = spec.missing_rates(&schema).unwrap();
    let observed = blank_missing(&faulty, &schema, &rates, 4042);
    Study {
        epsilon: spec.epsilon,
        schema,
        rules,
        clean,
        observed,
    }
}

impl Study {
    /// Sampler defaults with the study's error-prone variables.
    fn config(&self) -> GibbsConfig {
        GibbsConfig {
            error_prone: self.epsilon.keys().cloned().collect(),
            ..Default::default()
        }
    }
}

fn fit(study: &Study, config: &GibbsConfig) -> FitOutput {
    run_gibbs(&study.observed, &study.schema, &study.rules, config).unwrap()
}

fn marginal_estimates(study: &Study, out: &FitOutput) -> Vec<(String, f64, f64, bool)> {
    let rep = evaluation_report(
        &out.imputations,
        &study.clean,
        &study.schema,
        &Battery::all_marginal(),
    )
    .unwrap();
    rep.rows
        .iter()
        .map(|r| {
            (
                r.id.clone(),
                r.mi.estimate,
                r.truth.unwrap(),
                r.covered().unwrap(),
            )
        })
        .collect()
}

fn criterion_4(study: &Study, out: &FitOutput) -> Outcome {
    let mut battery = Battery::all_marginal();
    battery.items.extend(Battery::all_bivariate().items);
    let rep = evaluation_report(&out.imputations, &study.clean, &study.schema, &battery).unwrap();
    let summary = |k: QueryKind| rep.summary.iter().find(|s| s.kind == k).unwrap();
    let marg = summary(QueryKind::Marginal);
    let biv = summary(QueryKind::Bivariate);
    let eps_dev = study
        .epsilon
        .iter()
        .map(|(k, &e)| (out.epsilon_mean[k] - e).abs())
        .fold(0.0, f64::max);
    let eps_text: Vec<String> = study
        .epsilon
        .keys()
        .map(|k| format!("{k}={:.3}", out.epsilon_mean[k]))
        .collect();
    let (clean_n, missing_n, faulty_n) = out.mode_counts();
    outcome(
        marg.max_abs_dev <= MARGINAL_TOL
            && biv.max_abs_dev <= BIVARIATE_TOL
            && eps_dev <= EPSILON_TOL
            && marg.coverage >= COVERAGE_MIN,
        format!(
            "(a) max|marginal dev|={:.4} (b) max|bivariate dev|={:.4} (c) max|eps dev|={eps_dev:.3} [{}] (d) coverage={:.3}; households clean/missing/faulty={clean_n}/{missing_n}/{faulty_n}",
            marg.max_abs_dev,
            biv.max_abs_dev,
            eps_text.join(" "),
            marg.coverage
        ),
    )
}

fn criterion_5(study: &Study, full: &FitOutput, half: &FitOutput) -> Outcome {
    let a = marginal_estimates(study, full);
    let b = marginal_estimates(study, half);
    let dev = a
        .iter()
        .zip(&b)
        .map(|(x, y)| (x.1 - y.1).abs())
        .fold(0.0, f64::max);
    outcome(
        dev <= PSI_AGREEMENT,
        format!(
            "max |estimate(psi=1) - estimate(psi=1/2)| = {dev:.4} over {} marginals",
            a.len()
        ),
    )
}

// ---------------------------------------------------------------------------

/// Census-like population on the bundled schema: sizes in the proportions
/// of a typical household survey, mostly married heads with children.
fn census_population(n: usize, seed: u64) -> (Schema, RuleSet, Dataset) {
    let s = default_acs_schema();
    let rules = default_acs_rules(&s).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let idx = |name: &str| s.index_of(name).unwrap();
    let label = |name: &str, l: &str| s.variable(idx(name)).code_of_label(l).unwrap();
    let age = |years: i32| s.code_for_value(idx("Age"), years.clamp(0, 95)).unwrap();
    let size_weights = [1541.0, 630.0, 525.0, 210.0, 94.0];
    let total: f64 = size_weights.iter().sum();
    let mut households = Vec::with_capacity(n);
    while households.len() < n {
        let mut u = rng.random::<f64>() * total;
        let mut hc = 0;
        while u >= size_weights[hc] {
            u -= size_weights[hc];
            hc += 1;
        }
        let size = s.sizes()[hc];
        let head_age: i32 = rng.random_range(25..=80);
        let head_gender: Code = rng.random_range(1..=2);
        let race: Code = if rng.random_bool(0.8) {
            1
        } else {
            rng.random_range(1..=9)
        };
        let hisp: Code = if rng.random_bool(0.85) {
            1
        } else {
            rng.random_range(1..=5)
        };
        let mut cells = vec![
            rng.random_range(1..=2),
            s.size_code(size).unwrap(),
            head_gender,
            race,
            hisp,
            age(head_age),
        ];
        let married = rng.random_bool(0.65);
        for j in 0..size - 1 {
            let (gender, years, rel) = if j == 0 && married {
                (
                    3 - head_gender,
                    head_age + rng.random_range(-8..=8),
                    "spouse",
                )
            } else if rng.random_bool(0.85) && head_age >= 30 {
                (
                    rng.random_range(1..=2),
                    rng.random_range(0..=head_age - 18),
                    "biological_child",
                )
            } else {
                (
                    rng.random_range(1..=2),
                    rng.random_range(18..=80),
                    "boarder_roommate_partner",
                )
            };
            cells.extend([
                gender,
                race,
                hisp,
                age(years.max(18 * (rel == "spouse") as i32)),
                label("Relationship", rel),
            ]);
        }
        if rules.is_valid(size, &cells) {
            let id = format!("c{}", households.len() + 1);
            households.push(Household::new(&s, id, size, cells).unwrap());
        }
    }
    (s, rules, Dataset::new(households))
}

fn criterion_6() -> Outcome {
    let (s, rules, clean) = census_population(3000, 606);
    let spec = ContaminationSpec {
        seed: 607,
        ..Default::default()
    };
    let (_, truth) = inject_errors(&clean, &spec, &rules).unwrap();
    let flagged = truth.flagged_fraction();
    let rates = truth.error_rates(&s);
    let mut pass = (flagged - spec.rho).abs() <= FLAGGED_TOL;
    let mut text = Vec::new();
    let mut mean = 0.0;
    for (name, e) in PAPER_EPSILON {
        let r = rates[s.index_of(name).unwrap()];
        pass &= (r - ERROR_RATE).abs() <= ERROR_RATE_TOL;
        mean += r / PAPER_EPSILON.len() as f64;
        text.push(format!("{name}={r:.3} (rho*eps={:.3})", spec.rho * e));
    }
    outcome(
        pass,
        format!(
            "flagged={flagged:.3}; overall error rates {}; mean {mean:.3}",
            text.join(" ")
        ),
    )
}

fn criterion_7() -> Outcome {
    let (s, _, data) = census_population(1200, 707);
    let out = pram(&data, &s, PRAM_KEEP, 708).unwrap();
    let mut kept = 0usize;
    let mut total = 0usize;
    'outer: for (a, b) in data.households.iter().zip(&out.households) {
        for c in 0..a.cells.len() {
            if c == s.size_cell() {
                continue;
            }
            if total == 10_000 {
                break 'outer;
            }
            total += 1;
            kept += (a.cells[c] == b.cells[c]) as usize;
        }
    }
    let rate = kept as f64 / total as f64;
    outcome(
        total == 10_000 && (rate - PRAM_KEEP).abs() <= PRAM_TOL,
        format!("kept {kept}/{total} = {rate:.4}"),
    )
}

fn serialize(schema: &Schema, out: &FitOutput) -> (Vec<u8>, Vec<u8>) {
    let mut data = Vec::new();
    for d in &out.imputations {
        write_microdata(&mut data, schema, d, &CsvOptions::default()).unwrap();
    }
    let mut trace = Vec::new();
    write_trace(&mut trace, &out.trace).unwrap();
    (data, trace)
}

fn criterion_8(study: &Study, emitted: &mut Emitted) -> Outcome {
    let base = GibbsConfig {
        iterations: 300,
        burn_in: 100,
        thin: 2,
        imputations: 5,
        seed: 88,
        trace: vec!["Relationship=spouse".into(), "Gender=female,Age=3".into()],
        ..study.config()
    };
    let one = fit(
        study,
        &GibbsConfig {
            threads: 1,
            ..base.clone()
        },
    );
    let four = fit(study, &GibbsConfig { threads: 4, ..base });
    emitted.add("determinism", &one.imputations, &study.rules);
    emitted.add("determinism", &four.imputations, &study.rules);
    let (d1, t1) = serialize(&study.schema, &one);
    let (d4, t4) = serialize(&study.schema, &four);
    outcome(
        d1 == d4 && t1 == t4,
        format!(
            "1 vs 4 threads: imputed {} bytes identical={}, trace {} bytes identical={}",
            d1.len(),
            d1 == d4,
            t1.len(),
            t1 == t4
        ),
    )
}

fn criterion_9(study: &Study, emitted: &mut Emitted) -> Outcome {
    let config = GibbsConfig {
        iterations: 2000,
        burn_in: 1000,
        thin: 5,
        imputations: 10,
        seed: 99,
        ..Default::default()
    };
    let data = &study.clean;
    let (prep, _) = prepare(data, &study.schema, &study.rules, &config).unwrap();
    let all_clean = prep.iter().all(|p| p.mode == Mode::Clean);
    let out = run_gibbs(data, &study.schema, &study.rules, &config).unwrap();
    emitted.add("fixed point", &out.imputations, &study.rules);
    let identical = out.imputations.iter().all(|d| d == data);
    // With no flagged household the error-rate counts are empty, so each
    // draw is from the Beta(1, 1) prior: check the mean and variance.
    let mut worst: f64 = 0.0;
    let mut text = Vec::new();
    for (name, _) in PAPER_EPSILON {
        let key = format!("epsilon[{name}]");
        let draws: Vec<f64> = out
            .trace
            .iter()
            .filter(|t| t.name == key)
            .map(|t| t.value)
            .collect();
        let n = draws.len() as f64;
        let mean = draws.iter().sum::<f64>() / n;
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        // Standard errors of the mean and variance of Uniform(0, 1) draws.
        let z_mean = (mean - 0.5) / (1.0f64 / 12.0 / n).sqrt();
        let z_var = (var - 1.0 / 12.0) / (1.0f64 / 180.0 / n).sqrt();
        worst = worst.max(z_mean.abs()).max(z_var.abs());
        text.push(format!("{name}: mean={mean:.3} var={var:.4}"));
    }
    outcome(
        all_clean && identical && worst <= 4.0,
        format!(
            "all households clean={all_clean}, {} imputations identical to input={identical}, prior check max|z|={worst:.2} ({})",
            out.imputations.len(),
            text.join("; ")
        ),
    )
}

fn criterion_1(emitted: &Emitted) -> Outcome {
    let mut households = 0usize;
    let mut bad = 0usize;
    for (_, d, rules) in &emitted.sets {
        for h in &d.households {
            households += 1;
            if h.has_missing() || !rules.is_valid(h.size, &h.cells) {
                bad += 1;
            }
        }
    }
    outcome(
        bad == 0 && households > 0,
        format!(
            "{households} emitted households in {} datasets, {bad} violating or incomplete",
            emitted.sets.len()
        ),
    )
}

fn synthesis_check(study: &Study, params: &NdpmpmParams, emitted: &mut Emitted) -> Outcome {
    let synth = synthesize(params, &study.rules, 1000, 10_000_000, 1001).unwrap();
    let want = size_distribution(params, &study.schema);
    let counts = synth.size_counts(&study.schema);
    let dev = counts
        .iter()
        .zip(&want)
        .map(|(&c, &w)| (c as f64 / 1000.0 - w).abs())
        .fold(0.0, f64::max);
    emitted.add("synthetic", &[synth], &study.rules);
    outcome(
        dev <= SIZE_TOL,
        format!("size distribution max dev {dev:.4}"),
    )
}

fn main() -> ExitCode {
    let only: Option<Vec<u32>> = std::env::var("EIHD_ACCEPTANCE")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let wanted = |n: u32| only.as_ref().is_none_or(|o| o.contains(&n));
    let mut failed = 0;
    let mut report = |n: u32, name: &str, t: Instant, o: Outcome| {
        println!(
            "criterion {n} [{name}]: {} ({:.1}s) {}",
            if o.pass { "PASS" } else { "FAIL" },
            t.elapsed().as_secs_f64(),
            o.detail
        );
        failed += !o.pass as usize;
    };
    let mut emitted = Emitted::default();

    if wanted(2) {
        let t = Instant::now();
        report(2, "enumeration-oracle conditionals", t, criterion_2());
    }
    if wanted(3) {
        let t = Instant::now();
        report(3, "conjugate exactness", t, criterion_3());
    }
    if wanted(6) {
        let t = Instant::now();
        report(6, "contamination rates", t, criterion_6());
    }
    if wanted(7) {
        let t = Instant::now();
        report(7, "PRAM keep rate", t, criterion_7());
    }
    if [1, 4, 5, 8, 9].iter().any(|&n| wanted(n)) {
        let study = recovery_study();
        if wanted(9) || wanted(1) {
            let t = Instant::now();
            report(
                9,
                "clean-data fixed point",
                t,
                criterion_9(&study, &mut emitted),
            );
        }
        if wanted(8) || wanted(1) {
            let t = Instant::now();
            report(
                8,
                "determinism across thread counts",
                t,
                criterion_8(&study, &mut emitted),
            );
        }
        if wanted(4) || wanted(5) || wanted(1) {
            let t = Instant::now();
            let full = fit(&study, &study.config());
            emitted.add("recovery", &full.imputations, &study.rules);
            report(
                4,
                "parameter and distribution recovery",
                t,
                criterion_4(&study, &full),
            );
            let t = Instant::now();
            let o = synthesis_check(&study, &full.params, &mut emitted);
            println!(
                "  synthesis from the fitted model: {} ({:.1}s) {}",
                if o.pass { "ok" } else { "off" },
                t.elapsed().as_secs_f64(),
                o.detail
            );
            if wanted(5) {
                let t = Instant::now();
                let half = fit(
                    &study,
                    &GibbsConfig {
                        psi: vec![0.5; 3],
                        ..study.config()
                    },
                );
                emitted.add("half weights", &half.imputations, &study.rules);
                report(
                    5,
                    "cap-and-weight consistency",
                    t,
                    criterion_5(&study, &full, &half),
                );
            }
        }
        if wanted(1) {
            let t = Instant::now();
            report(1, "structural-zero guarantee", t, criterion_1(&emitted));
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criterion/criteria failed");
        ExitCode::FAILURE
    }
}
