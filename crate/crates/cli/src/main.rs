use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use eihd::analyze::{analyze_imputations, Battery, Report};
use eihd::config::RunConfig;
use eihd::contaminate::{blank_missing, inject_errors, pram};
use eihd::data::{cell_variable, Dataset};
use eihd::edits::eval::Tri;
use eihd::edits::{default_acs_rules, RuleSet};
use eihd::error::{Error, IoError};
use eihd::io::{
    load_microdata, read_text, save_microdata, save_report, save_trace, save_truth_flags,
    Checkpoint,
};
use eihd::model::synthesize;
use eihd::sampler::{run_gibbs, GibbsConfig};
use eihd::schema::{default_acs_schema, Schema};

const EXIT_VALIDATION: u8 = 2;
const EXIT_SAMPLER: u8 = 3;

/// Edit-imputation and synthesis for household categorical microdata.
#[derive(Parser, Debug)]
#[command(name = "eihd", version)]
struct Cli {
    /// Schema TOML; defaults to the bundled census-style schema.
    #[arg(long, global = true)]
    schema: Option<PathBuf>,
    /// Edit-rule file; defaults to the bundled rules (bundled schema only).
    #[arg(long, global = true)]
    rules: Option<PathBuf>,
    /// Microdata CSV input.
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    /// Run configuration TOML.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    /// Overrides every seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 uses every core).
    #[arg(long, global = true, env = "EIHD_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse the schema, rules and optional data and report rule violations.
    Validate {
        /// Fail when any household violates a rule or has missing cells.
        #[arg(long)]
        strict: bool,
    },
    /// Inject detectable errors and missing values into clean data.
    Contaminate,
    /// Fit the model and write multiply imputed datasets.
    Fit,
    /// Combine estimates over imputed datasets.
    Analyze(AnalyzeArgs),
    /// Generate rule-satisfying synthetic households from a fitted model.
    Synthesize,
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    /// Query battery file.
    #[arg(long)]
    battery: Option<PathBuf>,
    /// Complete dataset to compare against.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Imputed datasets; defaults to `imputed_*.csv` in the output directory.
    imputed: Vec<PathBuf>,
}

#[derive(Debug)]
enum Failure {
    Core(Error),
    /// Inputs parsed but failed a check.
    Invalid(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl From<IoError> for Failure {
    fn from(e: IoError) -> Self {
        Failure::Core(e.into())
    }
}

type Outcome = Result<(), Failure>;

struct Context {
    schema: Schema,
    rules: RuleSet,
    config: RunConfig,
    data: Option<PathBuf>,
    out_dir: PathBuf,
}

impl Context {
    fn load(cli: &Cli) -> Result<Self, Failure> {
        let schema = match &cli.schema {
            Some(p) => Schema::from_toml(&read_text(p)?).map_err(Error::from)?,
            None => default_acs_schema(),
        };
        let rules = match (&cli.rules, &cli.schema) {
            (Some(p), _) => RuleSet::parse(&read_text(p)?, &schema).map_err(Error::from)?,
            (None, None) => default_acs_rules(&schema).map_err(Error::from)?,
            (None, Some(_)) => {
                return Err(Failure::Invalid(
                    "--rules is required with a custom --schema".into(),
                ))
            }
        };
        let mut config = match &cli.config {
            Some(p) => RunConfig::from_toml(&read_text(p)?)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = cli.seed {
            config.fit.seed = seed;
            config.contaminate.seed = seed;
            config.synthesize.seed = seed;
        }
        if let Some(t) = cli.threads {
            config.fit.threads = t;
        }
        Ok(Context {
            schema,
            rules,
            config,
            data: cli.data.clone(),
            out_dir: cli.out_dir.clone(),
        })
    }

    fn data(&self) -> Result<Dataset, Failure> {
        let path = self
            .data
            .as_ref()
            .ok_or_else(|| Failure::Invalid("--data is required".into()))?;
        Ok(load_microdata(path, &self.schema, &self.config.csv)?)
    }

    fn out(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    fn save(&self, name: &str, data: &Dataset) -> Result<PathBuf, Failure> {
        let path = self.out(name);
        save_microdata(&path, &self.schema, data, &self.config.csv)?;
        Ok(path)
    }
}

fn numbered(prefix: &str, i: usize, total: usize) -> String {
    let width = total.to_string().len().max(2);
    format!("{prefix}_{:0width$}.csv", i + 1)
}

fn validate(ctx: &Context, strict: bool) -> Outcome {
    println!(
        "schema: {} variables, sizes {:?}; rules: {}",
        ctx.schema.variables().len(),
        ctx.schema.sizes(),
        ctx.rules.len()
    );
    if ctx.data.is_none() {
        return Ok(());
    }
    let data = ctx.data()?;
    let mut per_rule = vec![0usize; ctx.rules.len()];
    let mut violating = 0;
    for h in &data.households {
        if h.has_missing() {
            // Only count households that violate whatever the missing cells hold.
            violating += (ctx.rules.violates3(h.size, &h.cells) == Tri::True) as usize;
            continue;
        }
        let mut any = false;
        for r in ctx.rules.firing(h.size, &h.cells) {
            per_rule[r] += 1;
            any = true;
        }
        violating += any as usize;
    }
    let n = data.len();
    println!(
        "households: {n}, individuals: {}",
        data.individuals(&ctx.schema)
    );
    println!(
        "violating households: {violating} ({:.1}%)",
        100.0 * violating as f64 / n.max(1) as f64
    );
    for (id, count) in ctx.rules.ids().iter().zip(&per_rule) {
        if *count > 0 {
            println!("  {id}: {count}");
        }
    }
    let mut cells = vec![0usize; ctx.schema.variables().len()];
    let mut missing = vec![0usize; ctx.schema.variables().len()];
    for h in &data.households {
        for (c, &x) in h.cells.iter().enumerate() {
            let v = cell_variable(&ctx.schema, c);
            cells[v] += 1;
            missing[v] += (x == eihd::data::MISSING) as usize;
        }
    }
    println!("missing cells: {}", data.missing_cells());
    for (v, var) in ctx.schema.variables().iter().enumerate() {
        if missing[v] > 0 {
            println!(
                "  {}: {:.1}%",
                var.name,
                100.0 * missing[v] as f64 / cells[v] as f64
            );
        }
    }
    if strict && (violating > 0 || data.missing_cells() > 0) {
        return Err(Failure::Invalid(format!(
            "{violating} violating households, {} missing cells",
            data.missing_cells()
        )));
    }
    Ok(())
}

fn contaminate(ctx: &Context) -> Outcome {
    let clean = ctx.data()?;
    let spec = &ctx.config.contaminate;
    let (faulty, truth) = inject_errors(&clean, spec, &ctx.rules)?;
    let rates = spec.missing_rates(&ctx.schema)?;
    let observed = blank_missing(&faulty, &ctx.schema, &rates, spec.seed.wrapping_add(1));
    ctx.save("truth_clean.csv", &clean)?;
    ctx.save("contaminated.csv", &observed)?;
    save_truth_flags(&ctx.out("truth_flags.csv"), &ctx.schema, &clean, &truth)?;
    println!("flagged households: {:.3}", truth.flagged_fraction());
    for (v, r) in truth.error_rates(&ctx.schema).iter().enumerate() {
        if *r > 0.0 {
            println!("  {}: error rate {r:.3}", ctx.schema.variable(v).name);
        }
    }
    println!("missing cells: {}", observed.missing_cells());
    Ok(())
}

fn run_fit(ctx: &Context, data: &Dataset, config: &GibbsConfig, prefix: &str) -> Outcome {
    let out = run_gibbs(data, &ctx.schema, &ctx.rules, config)?;
    let total = out.imputations.len();
    for (i, d) in out.imputations.iter().enumerate() {
        ctx.save(&numbered(prefix, i, total), d)?;
    }
    save_trace(&ctx.out("trace.csv"), &out.trace)?;
    Checkpoint::new(&ctx.schema, out.params.clone(), out.epsilon_mean.clone())
        .save(&ctx.out("checkpoint.json"))?;
    let (clean, missing, faulty) = out.mode_counts();
    println!("households: {clean} clean, {missing} with missing values only, {faulty} flagged");
    for (name, e) in &out.epsilon_mean {
        println!("  epsilon[{name}] posterior mean {e:.3}");
    }
    println!(
        "wrote {total} imputed datasets to {}",
        ctx.out_dir.display()
    );
    Ok(())
}

fn fit(ctx: &Context) -> Outcome {
    let data = ctx.data()?;
    run_fit(ctx, &data, &ctx.config.fit, "imputed")
}

fn imputed_files(ctx: &Context, args: &AnalyzeArgs) -> Result<Vec<PathBuf>, Failure> {
    if !args.imputed.is_empty() {
        return Ok(args.imputed.clone());
    }
    if !ctx.config.analyze.imputed.is_empty() {
        return Ok(ctx.config.analyze.imputed.clone());
    }
    let entries = fs::read_dir(&ctx.out_dir).map_err(|e| IoError::File {
        path: ctx.out_dir.display().to_string(),
        source: e,
    })?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("imputed_") && n.ends_with(".csv"))
        })
        .collect();
    files.sort();
    Ok(files)
}

fn analyze(ctx: &Context, args: &AnalyzeArgs) -> Outcome {
    let battery = match args
        .battery
        .as_ref()
        .or(ctx.config.analyze.battery.as_ref())
    {
        Some(p) => Battery::parse(&read_text(p)?, &ctx.schema)?,
        None => {
            let mut b = Battery::all_marginal();
            b.items.extend(Battery::all_bivariate().items);
            b
        }
    };
    let load = |p: &Path| load_microdata(p, &ctx.schema, &ctx.config.csv);
    let imputed = imputed_files(ctx, args)?
        .iter()
        .map(|p| load(p))
        .collect::<Result<Vec<_>, _>>()?;
    let truth = match args.truth.as_ref().or(ctx.config.analyze.truth.as_ref()) {
        Some(p) => Some(load(p)?),
        None => None,
    };
    let mut rows = Vec::new();
    analyze_imputations(&imputed, truth.as_ref(), &ctx.schema, &battery, |r| {
        rows.push(r)
    })
    .map_err(Error::from)?;
    let report = Report::from_rows(rows);
    save_report(&ctx.out("report.csv"), &report.rows)?;
    let text = report.summary_text();
    fs::write(ctx.out("summary.txt"), &text).map_err(|e| IoError::File {
        path: ctx.out("summary.txt").display().to_string(),
        source: e,
    })?;
    print!("{text}");
    Ok(())
}

fn synthesize_cmd(ctx: &Context) -> Outcome {
    let sc = &ctx.config.synthesize;
    let params = if let Some(keep) = sc.pram_keep {
        let data = ctx.data()?;
        let perturbed = pram(&data, &ctx.schema, keep, sc.seed).map_err(Error::from)?;
        ctx.save("pram.csv", &perturbed)?;
        let mut fit = ctx.config.fit.clone();
        let names: Vec<String> = ctx
            .schema
            .variables()
            .iter()
            .enumerate()
            .filter(|&(v, var)| v != ctx.schema.size_var() && var.cardinality > 1)
            .map(|(_, var)| var.name.clone())
            .collect();
        fit.fixed_epsilon = names
            .iter()
            .map(|n| (n.clone(), 1.0 - keep))
            .collect::<BTreeMap<_, _>>();
        fit.epsilon_prior_by_variable.clear();
        fit.substitution.clear();
        fit.error_prone = names;
        fit.flag_all_households = true;
        run_fit(ctx, &perturbed, &fit, "pram_imputed")?;
        Checkpoint::load(&ctx.out("checkpoint.json"), &ctx.schema)?.params
    } else {
        let path = sc
            .checkpoint
            .clone()
            .unwrap_or_else(|| ctx.out("checkpoint.json"));
        Checkpoint::load(&path, &ctx.schema)?.params
    };
    for i in 0..sc.datasets {
        let seed = sc.seed.wrapping_add(i as u64);
        let synth =
            synthesize(&params, &ctx.rules, sc.households, sc.cap, seed).map_err(Error::from)?;
        let path = ctx.save(&numbered("synthetic", i, sc.datasets), &synth)?;
        println!("wrote {} households to {}", synth.len(), path.display());
    }
    Ok(())
}

fn run(cli: &Cli) -> Outcome {
    let ctx = Context::load(cli)?;
    match &cli.command {
        Command::Validate { strict } => validate(&ctx, *strict),
        Command::Contaminate => contaminate(&ctx),
        Command::Fit => fit(&ctx),
        Command::Analyze(args) => analyze(&ctx, args),
        Command::Synthesize => synthesize_cmd(&ctx),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_VALIDATION)
        }
        Err(Failure::Core(e)) => {
            eprintln!("error: {e}");
            match e {
                Error::Sampler(_) => ExitCode::from(EXIT_SAMPLER),
                _ => ExitCode::from(EXIT_VALIDATION),
            }
        }
    }
}
