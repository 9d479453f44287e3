use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use qestopt::analytic::{self, TetraSpec, TrineSpec, TwoCopySpec};
use qestopt::bounds::{self, BoundSelection};
use qestopt::measurement::Povm;
use qestopt::model::{dim_cap, ModelSpec, StateModel, WeightMatrix};
use qestopt::optimizer::{self, OptConfig, StopReason};
use qestopt::sweep::{self, BoundFlags, Grid, SweepSpec};
use qestopt::verify::{self, VerifyOptions};
use qestopt::Error;

/// POVM optimization and estimation bounds for multiparameter qubit models.
#[derive(Parser)]
#[command(name = "qestopt", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Optimize a POVM for a model; exit 0 on convergence, 2 at max_iters.
    Optimize(OptimizeArgs),
    /// Run a parameter sweep and write CSV.
    Sweep(SweepArgs),
    /// Compute SLD, Holevo and NH bounds for a model.
    Bounds(BoundsArgs),
    /// Build a closed-form optimal POVM and check it.
    Analytic(AnalyticArgs),
    /// Run the built-in verification suite.
    Verify(VerifyArgs),
}

/// Options shared by commands that run the optimizer.
#[derive(Args)]
struct OptArgs {
    /// Optimizer settings: JSON file or inline JSON object.
    #[arg(long)]
    opt: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    restarts: Option<usize>,
    /// Number of outcomes (0 = Caratheodory cap).
    #[arg(long = "k")]
    k: Option<usize>,
}

impl OptArgs {
    fn config(&self) -> Result<OptConfig> {
        let mut cfg: OptConfig = match &self.opt {
            Some(src) => serde_json::from_str(&read_source(src)?).context("parsing optimizer settings")?,
            None => OptConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(r) = self.restarts {
            cfg.restarts = r;
        }
        if let Some(k) = self.k {
            cfg.k = k;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct OptimizeArgs {
    /// Model: JSON file or inline JSON object.
    #[arg(long)]
    model: String,
    /// Override the model's copy count.
    #[arg(long)]
    copies: Option<usize>,
    #[command(flatten)]
    opt: OptArgs,
    /// Write the run JSON here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// Full sweep spec (JSON); the flags below override its fields.
    #[arg(long)]
    spec: Option<String>,
    /// Model template (JSON file or inline).
    #[arg(long)]
    model: Option<String>,
    /// Grid such as `theta1=0:0.75:4` or `epsilon=0.1,0.5,0.9`.
    #[arg(long)]
    grid: Option<String>,
    /// Copy counts, comma separated.
    #[arg(long, value_delimiter = ',')]
    copies: Option<Vec<usize>>,
    /// Bounds to compute: any of sld, holevo, nh, all, none.
    #[arg(long)]
    bounds: Option<String>,
    /// Also search for the minimal outcome count.
    #[arg(long)]
    k_star: bool,
    #[command(flatten)]
    opt: OptArgs,
    /// Write CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BoundsArgs {
    #[arg(long)]
    model: String,
    #[arg(long)]
    copies: Option<usize>,
    /// Bounds to compute; SLD is always included.
    #[arg(long, default_value = "all")]
    bounds: String,
    /// Optimizer settings file, read only for its weight matrix.
    #[arg(long)]
    opt: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AnalyticArgs {
    /// trine, tetra, two_copy, three_outcome or randomized_pvm.
    family: String,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    phi1: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    alpha: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    beta: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    gamma: f64,
    /// Two-copy phase of the |01>, |10> amplitudes.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    symmetric: f64,
    /// Two-copy phase of the |11> amplitude (default: twice `symmetric`).
    #[arg(long, allow_hyphen_values = true)]
    corner: Option<f64>,
    /// Bloch radius of the two-parameter model point.
    #[arg(long, default_value_t = 0.0)]
    r: f64,
    /// Polar angle of the model point.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    varphi: f64,
    /// Three-outcome free parameter: a number, `min` or `max`.
    #[arg(long, default_value = "mid")]
    q1: String,
    /// Model for randomized_pvm, overriding `r` and `varphi`.
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    /// Criterion ids to run, comma separated (default all).
    #[arg(long, value_delimiter = ',')]
    only: Option<Vec<String>>,
    /// Skip renormalization in the completeness check; it must then fail.
    #[arg(long)]
    corrupt_renormalization: bool,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Reads a file, or returns the argument itself when it is inline JSON.
fn read_source(src: &str) -> Result<String> {
    if src.trim_start().starts_with('{') {
        return Ok(src.to_string());
    }
    fs::read_to_string(src).with_context(|| format!("reading {src}"))
}

fn load_model_spec(src: &str, copies: Option<usize>) -> Result<ModelSpec> {
    let mut spec: ModelSpec = serde_json::from_str(&read_source(src)?).context("parsing model")?;
    if let Some(m) = copies {
        spec.copies = m;
    }
    Ok(spec)
}

fn build(spec: &ModelSpec) -> Result<StateModel> {
    Ok(spec.build_with_cap(dim_cap())?)
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn optimize(args: &OptimizeArgs) -> Result<ExitCode> {
    let model = build(&load_model_spec(&args.model, args.copies)?)?;
    let cfg = args.opt.config()?;
    let run = optimizer::multi_restart(&model, &cfg)?;
    eprintln!(
        "final_objective {:.9} after {} iterations ({:?}), {} outcomes",
        run.final_objective,
        run.iterations_used,
        run.stop_reason,
        run.final_povm.len()
    );
    emit(args.out.as_deref(), &serde_json::to_string_pretty(&run.to_json())?)?;
    Ok(match run.stop_reason {
        StopReason::Converged => ExitCode::SUCCESS,
        StopReason::MaxIters => ExitCode::from(2),
    })
}

fn sweep_spec(args: &SweepArgs) -> Result<SweepSpec> {
    let mut spec: SweepSpec = match &args.spec {
        Some(src) => serde_json::from_str(&read_source(src)?).context("parsing sweep spec")?,
        None => {
            let Some(model) = &args.model else { bail!("sweep needs --spec or --model") };
            let Some(grid) = &args.grid else { bail!("sweep needs --spec or --grid") };
            SweepSpec {
                model: load_model_spec(model, None)?,
                grid: Grid::parse(grid)?,
                copies: vec![1],
                opt: OptConfig::default(),
                bounds: BoundFlags::default(),
                find_k_star: false,
            }
        }
    };
    if args.spec.is_some() {
        if let Some(model) = &args.model {
            spec.model = load_model_spec(model, None)?;
        }
        if let Some(grid) = &args.grid {
            spec.grid = Grid::parse(grid)?;
        }
    }
    if args.opt.opt.is_some() {
        spec.opt = args.opt.config()?;
    } else {
        let o = &args.opt;
        spec.opt.seed = o.seed.unwrap_or(spec.opt.seed);
        spec.opt.restarts = o.restarts.unwrap_or(spec.opt.restarts);
        spec.opt.k = o.k.unwrap_or(spec.opt.k);
    }
    if let Some(copies) = &args.copies {
        spec.copies = copies.clone();
    }
    if let Some(b) = &args.bounds {
        spec.bounds = BoundFlags::parse(b)?;
    }
    spec.find_k_star |= args.k_star;
    spec.validate()?;
    Ok(spec)
}

fn run_sweep(args: &SweepArgs) -> Result<ExitCode> {
    let spec = sweep_spec(args)?;
    let mut sink: Box<dyn Write> = match &args.out {
        Some(path) => Box::new(fs::File::create(path).with_context(|| format!("creating {}", path.display()))?),
        None => Box::new(std::io::stdout().lock()),
    };
    writeln!(sink, "{}", sweep::CSV_HEADER)?;
    let mut write_err = None;
    sweep::run_sweep(&spec, |row| {
        for note in &row.diagnostics {
            eprintln!("M={} point {:?}: {note}", row.m, row.theta.or(row.epsilon));
        }
        if write_err.is_none() {
            write_err = writeln!(sink, "{}", row.to_csv()).and_then(|_| sink.flush()).err();
        }
    })?;
    if let Some(e) = write_err {
        return Err(e.into());
    }
    Ok(ExitCode::SUCCESS)
}

fn bound_values(args: &BoundsArgs) -> Result<ExitCode> {
    let model = build(&load_model_spec(&args.model, args.copies)?)?;
    let flags = BoundFlags::parse(&args.bounds)?;
    let cfg: OptConfig = match &args.opt {
        Some(src) => serde_json::from_str(&read_source(src)?)?,
        None => OptConfig::default(),
    };
    let w = cfg.weight_matrix(model.n_params())?;
    let report = bounds::bound_report(&model, &w, BoundSelection { holevo: flags.holevo, nh: flags.nh })?;
    let qubit_optimum = bounds::qubit_optimal_value(&model, &w).ok();
    let value = json!({
        "model": model.label,
        "dim": model.dim(),
        "sld": report.sld_value,
        "holevo": report.holevo_value,
        "nh": report.nh_value,
        "nh_gap": report.nh_gap,
        "qubit_optimum": qubit_optimum,
        "diagnostics": report.diagnostics,
    });
    emit(args.out.as_deref(), &serde_json::to_string_pretty(&value)?)?;
    Ok(ExitCode::SUCCESS)
}

fn two_param_at(r: f64, varphi: f64) -> Result<StateModel> {
    build(&ModelSpec::bloch(vec![r * varphi.cos(), r * varphi.sin(), 0.0], vec![1, 2], 1))
}

fn analytic_family(args: &AnalyticArgs) -> Result<ExitCode> {
    let mut extra = serde_json::Map::new();
    let (model, povm): (StateModel, Povm) = match args.family.as_str() {
        "trine" => {
            extra.insert("phi1".into(), json!(args.phi1));
            (two_param_at(0.0, 0.0)?, analytic::trine_povm(TrineSpec { phi1: args.phi1 }))
        }
        "tetra" | "tetrahedron" => {
            let spec = TetraSpec { alpha: args.alpha, beta: args.beta, gamma: args.gamma };
            extra.insert("angles".into(), serde_json::to_value(spec)?);
            (build(&ModelSpec::bloch(vec![0.0; 3], vec![1, 2, 3], 1))?, analytic::tetrahedron_povm(spec))
        }
        "two_copy" => {
            let spec = match args.corner {
                Some(corner) => TwoCopySpec { symmetric: args.symmetric, corner },
                None => TwoCopySpec::optimal(args.symmetric),
            };
            extra.insert("angles".into(), serde_json::to_value(spec)?);
            (build(&ModelSpec::bloch(vec![0.0; 3], vec![1, 2], 2))?, analytic::two_copy_povm(spec))
        }
        "three_outcome" => {
            let (lo, hi) = analytic::three_outcome_interval(args.r)?;
            let q1 = match args.q1.as_str() {
                "min" => lo,
                "max" => hi,
                "mid" => 0.5 * (lo + hi),
                text => text.parse::<f64>().with_context(|| format!("--q1 '{text}' is not a number"))?,
            };
            let (sol, povm) = match analytic::three_outcome_povm(args.r, args.varphi, q1) {
                Err(Error::InfeasibleParameter { q1, lo, hi }) => {
                    bail!("q1 = {q1} is infeasible for r = {}; feasible interval is [{lo}, {hi}]", args.r)
                }
                other => other?,
            };
            extra.insert("solution".into(), serde_json::to_value(&sol)?);
            extra.insert("feasible_interval".into(), json!([lo, hi]));
            (two_param_at(args.r, args.varphi)?, povm)
        }
        "randomized_pvm" => {
            let model = match &args.model {
                Some(src) => build(&load_model_spec(src, None)?)?,
                None => two_param_at(args.r, args.varphi)?,
            };
            let pvm = analytic::randomized_pvm_povm(&model, &WeightMatrix::identity(model.n_params()))?;
            extra.insert("weights".into(), json!(pvm.weights));
            extra.insert("directions".into(), json!(pvm.directions));
            (model, pvm.povm)
        }
        other => bail!("unknown family '{other}'; expected trine, tetra, two_copy, three_outcome or randomized_pvm"),
    };
    let w = WeightMatrix::identity(model.n_params());
    let objective = qestopt::fisher::objective(&model, &povm, &w)?;
    let residual = bounds::check_optimality(&model, &povm, &w).ok();
    let optimal_value = bounds::qubit_optimal_value(&model, &w).ok();
    let mut value = json!({
        "family": args.family,
        "model": model.label,
        "objective": objective,
        "optimality_residual": residual,
        "optimal_value": optimal_value,
        "completeness_defect": povm.completeness_defect(),
        "povm": povm.to_json(),
    });
    if let Some(o) = value.as_object_mut() {
        o.extend(extra);
    }
    emit(args.out.as_deref(), &serde_json::to_string_pretty(&value)?)?;
    Ok(ExitCode::SUCCESS)
}

fn run_verify(args: &VerifyArgs) -> Result<ExitCode> {
    let opts = VerifyOptions { corrupt_renormalization: args.corrupt_renormalization };
    let ids: Vec<&str> = args.only.iter().flatten().map(String::as_str).collect();
    let ids = if ids.is_empty() { verify::CRITERIA.to_vec() } else { ids };
    let mut criteria = Vec::new();
    for id in ids {
        let result = verify::run_criterion(id, &opts);
        eprintln!("{} ({:.1} s)", result.line(), result.seconds);
        if !result.passed {
            eprintln!("    {}", result.details());
        }
        criteria.push(result);
    }
    let report = verify::VerifyReport { passed: criteria.iter().all(|c| c.passed), criteria };
    emit(args.out.as_deref(), &serde_json::to_string_pretty(&report)?)?;
    Ok(if report.passed { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Optimize(a) => optimize(a),
        Command::Sweep(a) => run_sweep(a),
        Command::Bounds(a) => bound_values(a),
        Command::Analytic(a) => analytic_family(a),
        Command::Verify(a) => run_verify(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
