//! Command-line interface: simulate, fit, path, eval and tune.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::error::{Error, Result};
use crate::evaluation::{roc_rows, rows_auc, tpr_fpr};
use crate::family::{family_poisson, NodeFamily, DEFAULT_POISSON_ETA_CAP};
use crate::fit::{fit_all_nodes, FitOptions};
use crate::fused::FusedBasis;
use crate::graph::{edge_count_path, symmetrize, GraphEstimate, Rule};
use crate::io;
use crate::model::{Family, NodeFit, PenaltyConfig, ReplicateDataset};
use crate::simgen::{simulate, GibbsSettings, Scenario, SimConfig};
use crate::tuning::{
    es_select, theory_defaults, EsEvaluation, EsSettings, GammaMode, TheoryInputs, TheoryMode,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NONCONVERGED: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "repgraph", version, about = "Graph estimation from correlated replicates with latent confounding")]
pub struct Cli {
    /// Worker threads (default: all cores). Outputs do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a simulated dataset with its ground truth.
    Simulate(SimulateArgs),
    /// Fit every node at one penalty setting and build the graph.
    Fit(FitArgs),
    /// Fit along a lambda grid and write ROC-ready rows.
    Path(PathArgs),
    /// Score an estimated graph against true edges.
    Eval(EvalArgs),
    /// Select penalties by estimation stability.
    Tune(TuneArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub scenario: Scenario,
    #[arg(long)]
    pub n: usize,
    #[arg(long = "T", visible_alias = "t")]
    pub t: usize,
    #[arg(long)]
    pub p: usize,
    /// Latent confounder count (ignored by scenarios without confounders).
    #[arg(long, default_value_t = 5)]
    pub q: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 10_000)]
    pub burn_in: usize,
    #[arg(long, default_value_t = 1_000)]
    pub thin: usize,
    /// Burn in only before the first replicate of each subject.
    #[arg(long)]
    pub burn_in_first_only: bool,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FamilyArg {
    Gaussian,
    Ising,
    Poisson,
}

impl From<FamilyArg> for Family {
    fn from(f: FamilyArg) -> Self {
        match f {
            FamilyArg::Gaussian => Family::Gaussian,
            FamilyArg::Ising => Family::Ising,
            FamilyArg::Poisson => Family::Poisson,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RuleArg {
    Intersection,
    Union,
}

impl From<RuleArg> for Rule {
    fn from(r: RuleArg) -> Self {
        match r {
            RuleArg::Intersection => Rule::Intersection,
            RuleArg::Union => Rule::Union,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GammaModeArg {
    Generic,
    Pinned,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EvalOnArg {
    Full,
    FoldSubjects,
}

/// Dataset and solver flags shared by the fitting commands.
#[derive(Debug, Args)]
pub struct ModelArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, value_enum, default_value = "gaussian")]
    pub family: FamilyArg,
    /// Remove the lag block from the model.
    #[arg(long)]
    pub drop_alpha: bool,
    /// Remove the latent block from the model.
    #[arg(long)]
    pub drop_delta: bool,
    /// Outer stopping constant on block squared changes.
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    #[arg(long)]
    pub max_outer: Option<usize>,
    /// Majorization constant for non-Gaussian families.
    #[arg(long)]
    pub lipschitz: Option<f64>,
    /// Largest admissible Poisson linear predictor.
    #[arg(long, default_value_t = DEFAULT_POISSON_ETA_CAP)]
    pub eta_cap: f64,
    /// Fit an unpenalized intercept (non-Gaussian families).
    #[arg(long)]
    pub intercept: bool,
    #[arg(long, value_enum, default_value = "intersection")]
    pub rule: RuleArg,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct TheoryArgs {
    /// Use the reference penalties from the error-bound theory.
    #[arg(long)]
    pub theory_defaults: bool,
    #[arg(long, default_value_t = 1.0)]
    pub sigma_m: f64,
    #[arg(long, default_value_t = 1.0)]
    pub delta_max: f64,
    #[arg(long, default_value_t = 1.0)]
    pub tau: f64,
    #[arg(long, default_value_t = 1.0)]
    pub c1: f64,
    /// Rates for data without latent confounding.
    #[arg(long)]
    pub no_confounder: bool,
    #[arg(long, value_enum, default_value = "generic")]
    pub gamma_mode: GammaModeArg,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[command(flatten)]
    pub theory: TheoryArgs,
}

#[derive(Debug, Args)]
pub struct PathArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Comma list, or `log:START:END:COUNT` for log-spaced values.
    #[arg(long)]
    pub grid_lambda: String,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    /// True edge list; adds rates and AUC.
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Graph JSON written by `fit`.
    #[arg(long)]
    pub estimate: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub grid_lambda: String,
    #[arg(long)]
    pub grid_beta: Option<String>,
    #[arg(long)]
    pub grid_gamma: Option<String>,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "full")]
    pub eval_on: EvalOnArg,
}

/// Parses `a,b,c` or `log:START:END:COUNT`.
pub fn parse_grid(s: &str) -> Result<Vec<f64>> {
    let bad = |msg: &str| Error::Parse(format!("grid '{s}': {msg}"));
    let values: Vec<f64> = if let Some(rest) = s.strip_prefix("log:") {
        let parts: Vec<&str> = rest.split(':').collect();
        if parts.len() != 3 {
            return Err(bad("expected log:START:END:COUNT"));
        }
        let start: f64 = parts[0].trim().parse().map_err(|_| bad("bad START"))?;
        let end: f64 = parts[1].trim().parse().map_err(|_| bad("bad END"))?;
        let count: usize = parts[2].trim().parse().map_err(|_| bad("bad COUNT"))?;
        if !(start > 0.0 && end > 0.0) || count == 0 {
            return Err(bad("log grids need positive ends and COUNT >= 1"));
        }
        if count == 1 {
            vec![start]
        } else {
            let (a, b) = (start.ln(), end.ln());
            let mut g: Vec<f64> = (0..count)
                .map(|k| (a + (b - a) * k as f64 / (count - 1) as f64).exp())
                .collect();
            g[0] = start;
            g[count - 1] = end;
            g
        }
    } else {
        s.split(',')
            .map(|v| v.trim().parse::<f64>().map_err(|_| bad("bad number")))
            .collect::<Result<_>>()?
    };
    if values.is_empty() || values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(bad("values must be finite and nonnegative"));
    }
    Ok(values)
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    std::fs::create_dir_all(dir)?;
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn write_json(dir: &Path, name: &str, value: &serde_json::Value) -> Result<()> {
    let mut w = create(dir, name)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn manifest(command: &str, seed: Option<u64>, config: serde_json::Value) -> serde_json::Value {
    json!({
        "tool": "repgraph",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "seed": seed,
        "config": config,
    })
}

fn load(model: &ModelArgs) -> Result<ReplicateDataset> {
    let family: Family = model.family.into();
    let d = io::read_dataset(File::open(&model.dataset)?, family)?;
    if family == Family::Gaussian {
        d.center()
    } else {
        Ok(d)
    }
}

fn fit_options(model: &ModelArgs) -> Result<FitOptions> {
    let family: Family = model.family.into();
    let mut opts = FitOptions::for_family(family);
    if family == Family::Poisson {
        opts.family = family_poisson(model.eta_cap);
    }
    if !(model.tol > 0.0) {
        return Err(Error::Precondition("--tol must be positive".into()));
    }
    opts = opts.with_tol(model.tol);
    if let Some(m) = model.max_outer {
        opts.bcd.max_outer = m;
        opts.ggd.max_outer = m;
    }
    opts.ggd.lipschitz = model.lipschitz;
    opts.ggd.fit_intercept = model.intercept;
    Ok(opts)
}

fn family_json(f: &NodeFamily, opts: &FitOptions) -> serde_json::Value {
    json!({
        "family": f.family,
        "lipschitz": opts.ggd.lipschitz.unwrap_or(f.lipschitz),
        "eta_cap": f.eta_cap,
        "tol": opts.bcd.tol,
        "max_outer": if f.family == Family::Gaussian { opts.bcd.max_outer } else { opts.ggd.max_outer },
        "intercept": opts.ggd.fit_intercept && f.family != Family::Gaussian,
    })
}

/// Fills unset penalties: a dropped block needs none, otherwise it is an
/// error.
fn penalty(
    name: &str,
    value: Option<f64>,
    dropped: bool,
) -> Result<f64> {
    match value {
        Some(v) => Ok(v),
        None if dropped => Ok(0.0),
        None => Err(Error::Precondition(format!("--{name} is required"))),
    }
}

fn nonconverged(fits: &[NodeFit]) -> Vec<usize> {
    fits.iter().filter(|f| !f.converged).map(|f| f.j + 1).collect()
}

fn cmd_simulate(a: &SimulateArgs) -> Result<i32> {
    let mut cfg = SimConfig::new(a.scenario, a.n, a.t, a.p, a.q, a.seed);
    cfg.gibbs = GibbsSettings {
        burn_in: a.burn_in,
        thin: a.thin,
        burn_in_each_replicate: !a.burn_in_first_only,
    };
    let (d, truth) = simulate(&cfg)?;
    let dir = &a.out_dir;
    let mut w = create(dir, "dataset.csv")?;
    io::write_dataset(&mut w, &d)?;
    w.flush()?;
    io::write_edges(create(dir, "truth_edges.csv")?, &truth.edges())?;
    io::write_matrix(create(dir, "truth_precision.csv")?, &truth.theta_xx())?;
    io::write_matrix(create(dir, "truth_transition.csv")?, &truth.transition)?;
    if let Some(u) = &truth.latent {
        io::write_latent(create(dir, "truth_latent.csv")?, u)?;
    }
    let q = if a.scenario.has_latent() { a.q } else { 0 };
    write_json(
        dir,
        "manifest.json",
        &manifest(
            "simulate",
            Some(a.seed),
            json!({
                "scenario": a.scenario.name(),
                "family": d.family(),
                "n": a.n,
                "T": a.t,
                "p": a.p,
                "q": q,
                "transition": a.scenario.transition_kind(),
                "latent": a.scenario.latent_spec(),
                "gibbs": if a.scenario == Scenario::Ising { json!(cfg.gibbs) } else { serde_json::Value::Null },
                "true_edges": truth.edges().len(),
            }),
        ),
    )?;
    Ok(EXIT_OK)
}

fn cmd_fit(a: &FitArgs) -> Result<i32> {
    let d = load(&a.model)?;
    let opts = fit_options(&a.model)?;
    let (mut cfg, theory) = if a.theory.theory_defaults {
        let inp = TheoryInputs {
            n: d.n(),
            t: d.t(),
            p: d.p(),
            sigma_m: a.theory.sigma_m,
            delta_max: a.theory.delta_max,
            tau_knots: a.theory.tau,
            c1_const: a.theory.c1,
        };
        let mode = if a.theory.no_confounder {
            TheoryMode::NoConfounder
        } else {
            TheoryMode::Auto
        };
        let gm = match a.theory.gamma_mode {
            GammaModeArg::Generic => GammaMode::Generic,
            GammaModeArg::Pinned => GammaMode::Pinned,
        };
        let td = theory_defaults(&inp, mode, gm)?;
        let mut cfg = td.config;
        if let Some(l) = a.lambda {
            cfg.lambda = l;
        }
        if let Some(b) = a.beta {
            cfg.beta = b;
        }
        if let Some(g) = a.gamma {
            cfg.gamma = g;
        }
        (cfg, Some(json!({"inputs": inp, "result": td})))
    } else {
        let cfg = PenaltyConfig::new(
            penalty("lambda", a.lambda, false)?,
            penalty("beta", a.beta, a.model.drop_alpha)?,
            penalty("gamma", a.gamma, a.model.drop_delta)?,
        );
        (cfg, None)
    };
    cfg = cfg
        .with_drop_alpha(a.model.drop_alpha)
        .with_drop_delta(a.model.drop_delta);
    let basis = FusedBasis::build(d.n(), d.t())?;
    let fits = fit_all_nodes(&d, &cfg, &basis, &opts, None)?;
    let rule: Rule = a.model.rule.into();
    let graph = symmetrize(&fits, rule, 0.0)?;

    let dir = &a.model.out_dir;
    write_json(dir, "graph.json", &graph.to_json_value())?;
    io::write_coefficients(create(dir, "coefficients.csv")?, &fits)?;
    io::write_deltas(create(dir, "delta.csv")?, &fits, d.t())?;
    let bad = nonconverged(&fits);
    write_json(
        dir,
        "manifest.json",
        &manifest(
            "fit",
            None,
            json!({
                "dataset": a.model.dataset,
                "n": d.n(),
                "T": d.t(),
                "p": d.p(),
                "penalty": cfg,
                "theory": theory,
                "solver": family_json(&opts.family, &opts),
                "rule": rule,
                "edges": graph.edge_count(),
                "iterations": fits.iter().map(|f| f.iterations).collect::<Vec<_>>(),
                "objectives": fits.iter().map(|f| f.final_objective).collect::<Vec<_>>(),
                "nonconverged_nodes": bad,
            }),
        ),
    )?;
    if !bad.is_empty() {
        eprintln!("warning: nodes {bad:?} did not converge; outputs are partial");
        return Ok(EXIT_NONCONVERGED);
    }
    Ok(EXIT_OK)
}

fn cmd_path(a: &PathArgs) -> Result<i32> {
    let d = load(&a.model)?;
    let opts = fit_options(&a.model)?;
    let mut lambdas = parse_grid(&a.grid_lambda)?;
    lambdas.sort_by(|x, y| y.total_cmp(x));
    let beta = penalty("beta", a.beta, a.model.drop_alpha)?;
    let gamma = penalty("gamma", a.gamma, a.model.drop_delta)?;
    let grid: Vec<PenaltyConfig> = lambdas
        .iter()
        .map(|&l| {
            PenaltyConfig::new(l, beta, gamma)
                .with_drop_alpha(a.model.drop_alpha)
                .with_drop_delta(a.model.drop_delta)
        })
        .collect();
    let basis = FusedBasis::build(d.n(), d.t())?;
    let rule: Rule = a.model.rule.into();
    let path = edge_count_path(&d, &grid, &basis, &opts, rule)?;
    let truth = match &a.truth {
        Some(p) => io::read_edges(File::open(p)?)?,
        None => Vec::new(),
    };
    let rows = roc_rows(&path, &truth, d.p())?;
    let dir = &a.model.out_dir;
    io::write_roc(create(dir, "path.csv")?, &rows)?;
    let auc = a.truth.as_ref().map(|_| rows_auc(&rows));
    if auc.is_some() {
        write_json(dir, "auc.json", &json!({ "auc": auc, "points": rows.len() }))?;
    }
    let all_converged = path.iter().all(|pt| pt.converged);
    write_json(
        dir,
        "manifest.json",
        &manifest(
            "path",
            None,
            json!({
                "dataset": a.model.dataset,
                "grid": grid,
                "solver": family_json(&opts.family, &opts),
                "rule": rule,
                "truth": a.truth,
                "auc": auc,
                "converged": all_converged,
            }),
        ),
    )?;
    if !all_converged {
        eprintln!("warning: some fits along the path did not converge");
        return Ok(EXIT_NONCONVERGED);
    }
    Ok(EXIT_OK)
}

fn cmd_eval(a: &EvalArgs) -> Result<i32> {
    let est = GraphEstimate::from_json_str(&std::fs::read_to_string(&a.estimate)?)?;
    let truth = io::read_edges(File::open(&a.truth)?)?;
    let rates = tpr_fpr(&est, &truth, est.p)?;
    let score = json!({
        "p": est.p,
        "rule": est.rule,
        "edges": est.edge_count(),
        "true_edges": truth.len(),
        "tpr": rates.tpr,
        "fpr": rates.fpr,
    });
    write_json(&a.out_dir, "score.json", &score)?;
    println!("{}", serde_json::to_string(&score)?);
    Ok(EXIT_OK)
}

fn cmd_tune(a: &TuneArgs) -> Result<i32> {
    let d = load(&a.model)?;
    let opts = fit_options(&a.model)?;
    let lambdas = parse_grid(&a.grid_lambda)?;
    let grid_or = |g: &Option<String>, name: &str, dropped: bool| -> Result<Vec<f64>> {
        match g {
            Some(s) => parse_grid(s),
            None if dropped => Ok(vec![0.0]),
            None => Err(Error::Precondition(format!("--grid-{name} is required"))),
        }
    };
    let betas = grid_or(&a.grid_beta, "beta", a.model.drop_alpha)?;
    let gammas = grid_or(&a.grid_gamma, "gamma", a.model.drop_delta)?;
    let mut grid = Vec::new();
    for &l in &lambdas {
        for &b in &betas {
            for &g in &gammas {
                grid.push(
                    PenaltyConfig::new(l, b, g)
                        .with_drop_alpha(a.model.drop_alpha)
                        .with_drop_delta(a.model.drop_delta),
                );
            }
        }
    }
    let settings = EsSettings {
        folds: a.folds,
        seed: a.seed,
        evaluation: match a.eval_on {
            EvalOnArg::Full => EsEvaluation::Full,
            EvalOnArg::FoldSubjects => EsEvaluation::FoldSubjects,
        },
        keep_predictors: false,
    };
    let res = es_select(&d, &grid, &opts, &settings)?;
    let dir = &a.model.out_dir;
    write_json(dir, "es_report.json", &res.to_json_value())?;
    write_json(
        dir,
        "manifest.json",
        &manifest(
            "tune",
            Some(a.seed),
            json!({
                "dataset": a.model.dataset,
                "folds": a.folds,
                "evaluation": settings.evaluation,
                "solver": family_json(&opts.family, &opts),
                "selected": res.selected_config(),
            }),
        ),
    )?;
    for msg in &res.diagnostics {
        eprintln!("note: {msg}");
    }
    if !res.converged {
        eprintln!("warning: some fold fits did not converge");
        return Ok(EXIT_NONCONVERGED);
    }
    Ok(EXIT_OK)
}

fn dispatch(cli: &Cli) -> Result<i32> {
    match &cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Path(a) => cmd_path(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Tune(a) => cmd_tune(a),
    }
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Divergence { .. } => EXIT_NONCONVERGED,
        _ => EXIT_USAGE,
    }
}

/// Parses arguments and runs the command, returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        builder = builder.num_threads(n);
    }
    let pool = match builder.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_USAGE;
        }
    };
    match pool.install(|| dispatch(&cli)) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
