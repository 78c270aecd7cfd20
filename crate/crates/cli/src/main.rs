use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use sketchls::criteria::{closed_form_criteria, mc_criteria};
use sketchls::datagen::{design_from_leverage, gaussian_design, kheavy_targets, schur_horn_orthonormal};
use sketchls::fmt::float;
use sketchls::harness::{run_to_dir, ExperimentConfig, THREADS_ENV};
use sketchls::linalg::DenseVector;
use sketchls::leverage::{approx_leverage, default_sketch_sizes, exact_leverage, LeverageProfile};
use sketchls::model::{default_beta, ols_solve, sketched_solve, Dataset};
use sketchls::rng::{mix, seeded};
use sketchls::sketch::SketchSpec;
use sketchls::verify;

#[derive(Parser)]
#[command(name = "sketchls", version, about = "Sketched least squares: criteria, bounds and experiments")]
struct Cli {
    /// Master seed; overrides any seed in input files.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for parallel trials.
    #[arg(long, global = true, env = THREADS_ENV)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum DesignKind {
    Gaussian,
    Kheavy,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset CSV (`x1..xp,y`) with `y = Xβ + ε`.
    Gen {
        #[arg(long, value_enum, default_value = "gaussian")]
        design: DesignKind,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        p: usize,
        /// Heavy rows for `--design kheavy`.
        #[arg(long)]
        k: Option<usize>,
        #[arg(long, default_value_t = 0.5)]
        tail_mass: f64,
        /// Noise standard deviation.
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
        /// Output file; standard output when absent.
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Print the leverage profile of a dataset as CSV.
    Leverage {
        data: PathBuf,
        /// Use the fast randomized approximation.
        #[arg(long)]
        approx: bool,
        #[arg(long)]
        r1: Option<usize>,
        #[arg(long)]
        r2: Option<usize>,
    },
    /// Solve one sketched problem and print `β_S` and the residual ratio.
    SketchSolve {
        data: PathBuf,
        /// Sketch specification (JSON file).
        #[arg(long)]
        spec: PathBuf,
    },
    /// Closed-form (and optionally Monte Carlo) criteria for one sketch.
    Criteria {
        data: PathBuf,
        #[arg(long)]
        spec: PathBuf,
        /// True parameter as comma-separated values; `(1,…,1)/√p` when absent.
        #[arg(long, value_delimiter = ',')]
        beta: Option<Vec<f64>>,
        /// Monte Carlo draws; 0 skips the simulation.
        #[arg(long, default_value_t = 0)]
        mc_draws: usize,
    },
    /// Run an experiment grid from a JSON config; writes rows.csv and summary.json.
    Experiment {
        config: PathBuf,
        /// Output directory; the config's `output_dir` when absent.
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Run the acceptance suite; exits nonzero if any criterion fails.
    Verify {
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn read_spec(path: &Path, seed: Option<u64>) -> Result<SketchSpec> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut spec: SketchSpec = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    if let Some(s) = seed {
        spec.seed = s;
    }
    spec.validate()?;
    Ok(spec)
}

fn load(path: &Path) -> Result<Dataset> {
    Dataset::load(path).with_context(|| format!("loading {}", path.display()))
}

fn sketch_leverage(spec: &SketchSpec, d: &Dataset) -> Result<Option<LeverageProfile>> {
    Ok(if spec.scheme.is_sampling() { Some(exact_leverage(d.x())?) } else { None })
}

fn run(cli: Cli) -> Result<ExitCode> {
    let seed = cli.seed;
    let mut stdout = std::io::stdout().lock();
    match cli.command {
        Command::Gen { design, n, p, k, tail_mass, sigma, out } => {
            if !(sigma >= 0.0 && sigma.is_finite()) {
                bail!("sigma must be finite and non-negative");
            }
            let mut rng = seeded(seed.unwrap_or(0));
            let x = match design {
                DesignKind::Gaussian => gaussian_design(n, p, &mut rng)?,
                DesignKind::Kheavy => {
                    let k = k.context("--design kheavy needs --k")?;
                    let target = kheavy_targets(n, p, k, tail_mass)?;
                    let u = schur_horn_orthonormal(&target.targets, &mut rng)?;
                    design_from_leverage(&u, &vec![1.0; p], &mut rng)?
                }
            };
            let noise = sketchls::rng::normal_vector(n, &mut rng) * sigma;
            let y = &x * default_beta(p) + noise;
            let d = Dataset::new(x, y)?;
            match out {
                Some(path) => d.write_csv(std::fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?)?,
                None => d.write_csv(&mut stdout)?,
            }
        }
        Command::Leverage { data, approx, r1, r2 } => {
            let d = load(&data)?;
            let exact = exact_leverage(d.x())?;
            let profile = if approx {
                let (d1, d2) = default_sketch_sizes(d.n(), d.p());
                let mut lev = approx_leverage(d.x(), r1.unwrap_or(d1), r2.unwrap_or(d2), &mut seeded(seed.unwrap_or(0)))?;
                let err = lev.attach_error(&exact)?;
                eprintln!("max relative error {}", float(err));
                lev
            } else {
                exact
            };
            stdout.write_all(profile.to_csv().as_bytes())?;
        }
        Command::SketchSolve { data, spec } => {
            let d = load(&data)?;
            let spec = read_spec(&spec, seed)?;
            let lev = sketch_leverage(&spec, &d)?;
            let s = spec.build(d.n(), lev.as_ref())?;
            let sol = sketched_solve(&s, &d)?;
            let ols = ols_solve(&d);
            let resid_s = (d.y() - d.x() * &sol.beta).norm_squared();
            let resid_ols = (d.y() - d.x() * &ols).norm_squared();
            let out = json!({
                "beta_s": sol.beta.iter().map(|&b| float(b)).collect::<Vec<_>>(),
                "rank_sx": sol.rank_sx,
                "rank_ok": sol.rank_ok,
                "residual_ratio": float(resid_s / resid_ols),
            });
            writeln!(stdout, "{}", serde_json::to_string_pretty(&out)?)?;
        }
        Command::Criteria { data, spec, beta, mc_draws } => {
            let d = load(&data)?;
            let spec = read_spec(&spec, seed)?;
            let beta = match beta {
                Some(b) if b.len() == d.p() => DenseVector::from_column_slice(&b),
                Some(b) => bail!("--beta has {} values, dataset has p = {}", b.len(), d.p()),
                None => default_beta(d.p()),
            };
            let lev = sketch_leverage(&spec, &d)?;
            let s = spec.build(d.n(), lev.as_ref())?;
            let closed = closed_form_criteria(&d, &beta, &s)?;
            let mut out = json!({ "closed_form": closed });
            if mc_draws > 0 {
                let mc = mc_criteria(&d, &beta, &s, mc_draws, mix(spec.seed, 1))?;
                out["monte_carlo"] = serde_json::to_value(&mc)?;
            }
            writeln!(stdout, "{}", serde_json::to_string_pretty(&out)?)?;
        }
        Command::Experiment { config, out } => {
            let text = std::fs::read_to_string(&config).with_context(|| format!("reading {}", config.display()))?;
            let mut cfg: ExperimentConfig =
                serde_json::from_str(&text).with_context(|| format!("parsing {}", config.display()))?;
            if let Some(s) = seed {
                cfg.master_seed = s;
            }
            let (rows, summary) = run_to_dir(&cfg, out.as_deref(), cli.threads)?;
            let dir = out.unwrap_or(cfg.output_dir);
            eprintln!("{} rows written to {}", rows.len(), dir.display());
            writeln!(stdout, "sat_rate {}", summary.sat_rate)?;
        }
        Command::Verify { out } => {
            let report = verify::run_all(seed.unwrap_or(0), cli.threads, out.as_deref())?;
            for r in &report.results {
                writeln!(stdout, "{r}")?;
            }
            if !report.passed() {
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}
