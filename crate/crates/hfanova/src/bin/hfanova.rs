//! Command-line front end: simulate datasets, fit the model, compute the
//! ANOVA table, evaluate exact distributions, and run hypothesis tests.
//!
//! All randomness is seed-driven and every output is deterministic; no
//! timestamps or machine identifiers are written.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use hfanova::anova::{expected_components, sum_squares_verified};
use hfanova::distributions::{cdf, cf, Component, QuadFormSpec};
use hfanova::error::Error;
use hfanova::estimation::gls_fit;
use hfanova::model::{validate_a0, ModelSpec, SpectrumFamily, SpectrumKind};
use hfanova::simulation::sample_dataset;
use hfanova::spectral::CoefficientBlock;
use hfanova::testing::{run_test, LinearHypothesis};
use hfanova::weights::{build_weights, WeightMode, WeightOperator, WeightPlan};

#[derive(Parser)]
#[command(name = "hfanova", version, about = "Functional ANOVA for Hilbert-valued models")]
struct Cli {
    /// Size of the rayon thread pool (default: all cores).
    #[arg(long, global = true, env = "HFANOVA_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Draw one dataset from the model.
    Simulate(SimulateArgs),
    /// Generalized least-squares fit.
    Fit(FitArgs),
    /// Observed and expected variance components.
    Anova(AnovaArgs),
    /// Exact CDF and characteristic function of one component.
    Dist(DistArgs),
    /// Linear hypothesis test.
    Test(TestArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Model specification (JSON).
    #[arg(long, env = "HFANOVA_MODEL")]
    model: PathBuf,
    /// Output directory.
    #[arg(long, env = "HFANOVA_OUT", default_value = ".")]
    out: PathBuf,
    /// Override the model's truncation level.
    #[arg(long)]
    kmax: Option<usize>,
}

#[derive(Copy, Clone, ValueEnum)]
enum ModeArg {
    Sst,
    Ssr,
    Uniform,
}

impl From<ModeArg> for WeightMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Sst => WeightMode::Sst,
            ModeArg::Ssr => WeightMode::Ssr,
            ModeArg::Uniform => WeightMode::Uniform,
        }
    }
}

#[derive(Args)]
struct WeightArgs {
    /// Weight decay mode.
    #[arg(long, value_enum, default_value = "ssr")]
    weight_mode: ModeArg,
    /// Decay margin exponent, must exceed 1.
    #[arg(long, default_value_t = 2.0)]
    varrho: f64,
    /// Covariance decay exponents, comma separated; estimated from the
    /// model when omitted.
    #[arg(long, value_delimiter = ',')]
    rho_tilde: Option<Vec<f64>>,
    /// Multiplier for uniform mode.
    #[arg(long, default_value_t = 1.0)]
    weight_scale: f64,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long, env = "HFANOVA_SEED", default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Dataset CSV: one row per frequency, one column per component.
    #[arg(long)]
    data: PathBuf,
}

#[derive(Args)]
struct AnovaArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    weights: WeightArgs,
    #[arg(long)]
    data: PathBuf,
    /// Recompute SSR through its explicit kernel and cross-check.
    #[arg(long, default_value_t = false)]
    verify: bool,
}

#[derive(Copy, Clone, ValueEnum)]
enum ComponentArg {
    Sst,
    Ssr,
    Sse,
}

impl From<ComponentArg> for Component {
    fn from(c: ComponentArg) -> Self {
        match c {
            ComponentArg::Sst => Component::Sst,
            ComponentArg::Ssr => Component::Ssr,
            ComponentArg::Sse => Component::Sse,
        }
    }
}

#[derive(Args)]
struct DistArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    weights: WeightArgs,
    #[arg(long, value_enum, default_value = "sst")]
    component: ComponentArg,
    /// CDF grid lower end (default 0).
    #[arg(long, default_value_t = 0.0)]
    xmin: f64,
    /// CDF grid upper end (default mean + 8 standard deviations).
    #[arg(long)]
    xmax: Option<f64>,
    /// CF grid half-width.
    #[arg(long, default_value_t = 20.0)]
    omega_max: f64,
    /// Points per grid.
    #[arg(long, default_value_t = 201)]
    points: usize,
}

#[derive(Args)]
struct TestArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    data: PathBuf,
    /// Number of leading frequencies under test (default: all).
    #[arg(long)]
    lmax: Option<usize>,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
}

/// On-disk model schema.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelConfig {
    n: usize,
    p: usize,
    k_max: usize,
    /// n x p design matrix, row-major.
    x: Vec<Vec<f64>>,
    spectrum: SpectrumKind,
    /// n x n correlation matrix; identity when omitted.
    #[serde(default)]
    rho: Option<Vec<Vec<f64>>>,
    /// k_max x p coefficient table; zero when omitted.
    #[serde(default)]
    beta: Option<Vec<Vec<f64>>>,
    sigma: f64,
}

fn load_model(args: &CommonArgs) -> Result<(ModelSpec, String), Error> {
    let raw = fs::read_to_string(&args.model)?;
    let cfg: ModelConfig = serde_json::from_str(&raw)?;
    let k_max = args.kmax.unwrap_or(cfg.k_max);
    if cfg.x.len() != cfg.n || cfg.x.iter().any(|r| r.len() != cfg.p) {
        return Err(Error::Config(format!(
            "design matrix must be {}x{}",
            cfg.n, cfg.p
        )));
    }
    let x = DMatrix::from_fn(cfg.n, cfg.p, |i, j| cfg.x[i][j]);
    let rho = cfg.rho.clone().unwrap_or_else(|| {
        (0..cfg.n)
            .map(|i| (0..cfg.n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect()
    });
    let family = SpectrumFamily { kind: cfg.spectrum.clone(), rho };
    let beta = match &cfg.beta {
        Some(rows) => {
            if rows.len() < k_max || rows.iter().any(|r| r.len() != cfg.p) {
                return Err(Error::Config(format!(
                    "beta must be at least {k_max}x{} when given",
                    cfg.p
                )));
            }
            CoefficientBlock::new(DMatrix::from_fn(k_max, cfg.p, |k, j| rows[k][j]))?
        }
        None => CoefficientBlock::zeros(k_max, cfg.p)?,
    };
    let model = ModelSpec::from_family(x, &family, beta, cfg.sigma, k_max)?;
    let hash = hex::encode(Sha256::digest(raw.as_bytes()));
    Ok((model, hash))
}

fn build_weight_operator(model: &ModelSpec, args: &WeightArgs) -> Result<WeightOperator, Error> {
    let mode: WeightMode = args.weight_mode.into();
    let plan = match &args.rho_tilde {
        Some(rt) => WeightPlan::new(
            mode,
            rt.clone(),
            vec![args.varrho; rt.len()],
            args.weight_scale,
        )?,
        None => {
            let mut plan = WeightPlan::auto(mode, &model.lambda, args.varrho)?;
            plan.m = args.weight_scale;
            plan
        }
    };
    build_weights(&model.lambda, &plan)
}

fn read_data_csv(path: &Path, model: &ModelSpec) -> Result<CoefficientBlock, Error> {
    let raw = fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (lineno, line) in raw.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with('k') {
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))
            })
            .collect::<Result<_, _>>()?;
        rows.push(row);
    }
    if rows.len() < model.k_max() {
        return Err(Error::Config(format!(
            "dataset has {} rows, model needs {}",
            rows.len(),
            model.k_max()
        )));
    }
    rows.truncate(model.k_max());
    // first column may be the frequency index
    let drop_index = rows
        .iter()
        .enumerate()
        .all(|(k, r)| r.len() == model.n() + 1 && (r[0] - (k + 1) as f64).abs() < 1e-9);
    let data = DMatrix::from_fn(model.k_max(), model.n(), |k, j| {
        rows[k][if drop_index { j + 1 } else { j }]
    });
    if !drop_index && rows.iter().any(|r| r.len() != model.n()) {
        return Err(Error::Config(format!(
            "dataset rows must have {} columns",
            model.n()
        )));
    }
    CoefficientBlock::new(data)
}

fn write_file(dir: &Path, name: &str, content: &str) -> Result<PathBuf, Error> {
    fs::create_dir_all(dir)?;
    let path = dir.join(name);
    let mut f = fs::File::create(&path)?;
    f.write_all(content.as_bytes())?;
    Ok(path)
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<PathBuf, Error> {
    let body = serde_json::to_string_pretty(value)?;
    write_file(dir, name, &(body + "\n"))
}

fn fmt(v: f64) -> String {
    format!("{v:.17e}")
}

fn cmd_simulate(args: &SimulateArgs) -> Result<(), Error> {
    let (model, hash) = load_model(&args.common)?;
    let y = sample_dataset(&model, args.seed)?;
    let mut csv = String::from("k,");
    csv.push_str(
        &(1..=model.n())
            .map(|i| format!("y{i}"))
            .collect::<Vec<_>>()
            .join(","),
    );
    csv.push('\n');
    for k in 0..model.k_max() {
        let row: Vec<String> = (0..model.n()).map(|j| fmt(y.data[(k, j)])).collect();
        csv.push_str(&format!("{},{}\n", k + 1, row.join(",")));
    }
    let data_path = write_file(&args.common.out, "dataset.csv", &csv)?;
    #[derive(Serialize)]
    struct Manifest<'a> {
        seed: u64,
        k_max: usize,
        n: usize,
        p: usize,
        sigma: f64,
        model_sha256: &'a str,
        dataset: String,
        dataset_sha256: String,
    }
    let manifest = Manifest {
        seed: args.seed,
        k_max: model.k_max(),
        n: model.n(),
        p: model.p(),
        sigma: model.sigma,
        model_sha256: &hash,
        dataset: data_path.file_name().unwrap().to_string_lossy().into_owned(),
        dataset_sha256: hex::encode(Sha256::digest(csv.as_bytes())),
    };
    write_json(&args.common.out, "manifest.json", &manifest)?;
    println!("wrote {} rows to {}", model.k_max(), data_path.display());
    Ok(())
}

fn cmd_fit(args: &FitArgs) -> Result<(), Error> {
    let (model, _) = load_model(&args.common)?;
    let y = read_data_csv(&args.data, &model)?;
    let fit = gls_fit(&model, &y)?;
    let mut csv = String::from("k,");
    csv.push_str(
        &(1..=model.p())
            .map(|j| format!("beta{j}"))
            .collect::<Vec<_>>()
            .join(","),
    );
    csv.push('\n');
    for k in 0..model.k_max() {
        let row: Vec<String> = (0..model.p())
            .map(|j| fmt(fit.beta_hat.data[(k, j)]))
            .collect();
        csv.push_str(&format!("{},{}\n", k + 1, row.join(",")));
    }
    write_file(&args.common.out, "beta_hat.csv", &csv)?;
    write_json(&args.common.out, "estimability.json", &fit.estimability)?;
    println!(
        "fit complete: estimability tail ratio {:.3e}, converged = {}",
        fit.estimability.tail_ratio, fit.estimability.converged
    );
    Ok(())
}

fn cmd_anova(args: &AnovaArgs) -> Result<(), Error> {
    let (model, _) = load_model(&args.common)?;
    let y = read_data_csv(&args.data, &model)?;
    let w = build_weight_operator(&model, &args.weights)?;
    let comps = sum_squares_verified(&model, &w, &y, args.verify)?;
    let expected = expected_components(&model, &w)?;
    let mut csv = String::from("k,sst_k,sse_k,ssr_k,e_sst_k,e_sse_k,e_ssr_k\n");
    for k in 0..model.k_max() {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            k + 1,
            fmt(comps.per_k_sst[k]),
            fmt(comps.per_k_sse[k]),
            fmt(comps.per_k_ssr[k]),
            fmt(expected.per_k_e_sst[k]),
            fmt(expected.per_k_e_sse[k]),
            fmt(expected.per_k_e_ssr[k]),
        ));
    }
    write_file(&args.common.out, "anova.csv", &csv)?;
    #[derive(Serialize)]
    struct Summary {
        sst: f64,
        sse: f64,
        ssr: f64,
        e_sst: f64,
        e_sse: f64,
        e_ssr: f64,
        clamped: usize,
        sst_tail_ratio: f64,
        weight_series_converged: bool,
        a0_clean: bool,
    }
    let summary = Summary {
        sst: comps.sst,
        sse: comps.sse,
        ssr: comps.ssr,
        e_sst: expected.e_sst,
        e_sse: expected.e_sse,
        e_ssr: expected.e_ssr,
        clamped: comps.clamped,
        sst_tail_ratio: comps.sst_tail_ratio,
        weight_series_converged: w.report.s_a_converged && w.report.s_b_converged,
        a0_clean: validate_a0(&model.lambda).clean(),
    };
    write_json(&args.common.out, "summary.json", &summary)?;
    println!(
        "sst = {:.6e}, sse = {:.6e}, ssr = {:.6e}",
        comps.sst, comps.sse, comps.ssr
    );
    Ok(())
}

fn cmd_dist(args: &DistArgs) -> Result<(), Error> {
    let (model, _) = load_model(&args.common)?;
    let w = build_weight_operator(&model, &args.weights)?;
    let spec = QuadFormSpec::from_component(&model, &w, args.component.into())?;
    let mean = spec.mean();
    let sd = spec.variance().max(0.0).sqrt();
    let xmax = args.xmax.unwrap_or(mean + 8.0 * sd);
    if !(xmax > args.xmin) || args.points < 2 {
        return Err(Error::Config("need xmax > xmin and at least 2 points".into()));
    }
    let mut cdf_csv = String::from("x,cdf\n");
    for i in 0..args.points {
        let x = args.xmin + (xmax - args.xmin) * i as f64 / (args.points - 1) as f64;
        cdf_csv.push_str(&format!("{},{}\n", fmt(x), fmt(cdf(&spec, x)?)));
    }
    write_file(&args.common.out, "cdf.csv", &cdf_csv)?;
    let mut cf_csv = String::from("omega,re,im\n");
    for i in 0..args.points {
        let omega = -args.omega_max + 2.0 * args.omega_max * i as f64 / (args.points - 1) as f64;
        let v = cf(&spec, omega);
        cf_csv.push_str(&format!("{},{},{}\n", fmt(omega), fmt(v.re), fmt(v.im)));
    }
    write_file(&args.common.out, "cf.csv", &cf_csv)?;
    write_json(&args.common.out, "spec.json", &spec)?;
    println!(
        "{} terms, mean {:.6e}, sd {:.6e}, dropped mass {:.3e}",
        spec.terms.len(),
        mean,
        sd,
        spec.dropped_mass
    );
    Ok(())
}

fn cmd_test(args: &TestArgs) -> Result<(), Error> {
    let (model, _) = load_model(&args.common)?;
    let y = read_data_csv(&args.data, &model)?;
    let l_max = args.lmax.unwrap_or(model.k_max()).min(model.k_max());
    let hyp = LinearHypothesis::no_effect(model.p(), l_max, args.alpha)?;
    let result = run_test(&model, &y, &hyp)?;
    if !result.condition_ok {
        eprintln!(
            "warning: sup operator norm {:.3e} is not below 1",
            result.sup_operator_norm
        );
    }
    write_json(&args.common.out, "test.json", &result)?;
    println!(
        "S = {:.6e}, critical = {:.6e}, p = {:.6}, reject = {}",
        result.statistic, result.critical_value, result.p_value, result.reject
    );
    Ok(())
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::Dimension(_) => "dimension",
        Error::BasisMismatch(_, _) => "basis-mismatch",
        Error::Singular { .. } => "singular",
        Error::NotPositiveDefinite { .. } => "not-positive-definite",
        Error::Domain(_) => "domain",
        Error::DivergentSeries(_) => "divergent-series",
        Error::MgfBound { .. } => "mgf-bound",
        Error::Quadrature { .. } => "quadrature",
        Error::Bracket(_) => "bracket",
        Error::Validation(_) => "validation",
        Error::Config(_) => "config",
        Error::Io(_) => "io",
        Error::Json(_) => "json",
    }
}

fn main() {
    let cli = Cli::parse();
    if let Some(t) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .ok();
    }
    let result = match &cli.cmd {
        Cmd::Simulate(a) => cmd_simulate(a),
        Cmd::Fit(a) => cmd_fit(a),
        Cmd::Anova(a) => cmd_anova(a),
        Cmd::Dist(a) => cmd_dist(a),
        Cmd::Test(a) => cmd_test(a),
    };
    if let Err(e) = result {
        let payload = serde_json::json!({
            "error": { "kind": error_kind(&e), "message": e.to_string() }
        });
        eprintln!("{payload}");
        std::process::exit(1);
    }
}
