//! Batch experiments: scheme × sketch-size grids over one fixed design,
//! seeded trials run in parallel, bound checks, CSV/JSON artifacts.
//!
//! The design is drawn once per configuration and held fixed; only the
//! sketch is redrawn per trial. Trial `t` of cell `c` uses the seed
//! `mix(mix(master_seed, c), t)`, so the output depends only on the
//! configuration, never on the thread schedule.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::criteria::{
    closed_form_criteria, lower_bound_eta, mc_criteria, pw_floor, theorem_bounds, HeavyParams,
    Method, PreconditionConstants, TheoremBounds,
};
use crate::datagen::{design_from_leverage, gaussian_design, kheavy_targets, pad_rows_pow2, schur_horn_orthonormal};
use crate::error::{Error, Result};
use crate::fmt::float;
use crate::leverage::{exact_leverage, LeverageProfile};
use crate::model::{default_beta, Dataset};
use crate::rng::{mix, seeded};
use crate::sketch::{Scheme, SketchSpec};

/// Environment variable overriding the worker count.
pub const THREADS_ENV: &str = "SKETCHLS_THREADS";

const DESIGN_STREAM: u64 = 0xD5;
const CELL_STREAM: u64 = 0xCE;
const MC_STREAM: u64 = 0x3C;
const ETA_STREAM: u64 = 0xE7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum DesignSpec {
    Gaussian,
    Kheavy {
        k: usize,
        #[serde(default = "default_tail_mass")]
        tail_mass: f64,
    },
    Csv {
        path: PathBuf,
    },
}

fn default_tail_mass() -> f64 {
    0.5
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub design: DesignSpec,
    pub n: usize,
    pub p: usize,
    pub r_grid: Vec<usize>,
    /// `r` and `seed` of each template are replaced per cell and trial.
    pub schemes: Vec<SketchSpec>,
    pub trials: usize,
    #[serde(default)]
    pub mc_draws: usize,
    #[serde(default)]
    pub master_seed: u64,
    /// Seed of the design draw; derived from `master_seed` when absent.
    #[serde(default)]
    pub design_seed: Option<u64>,
    /// True parameter; `(1,…,1)/√p` when absent.
    #[serde(default)]
    pub beta: Option<Vec<f64>>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Singular values of generated designs; all ones when absent.
    #[serde(default)]
    pub spectrum: Option<Vec<f64>>,
    /// Trials for the per-cell η estimate; 0 skips it.
    #[serde(default)]
    pub eta_trials: usize,
    /// Bins for the optional per-cell histogram CSV; 0 skips it.
    #[serde(default)]
    pub histogram_bins: usize,
    #[serde(default)]
    pub constants: PreconditionConstants,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::InvalidArgument("trials must be >= 1".into()));
        }
        if self.r_grid.is_empty() || self.r_grid.contains(&0) {
            return Err(Error::InvalidArgument("r_grid must be non-empty with r >= 1".into()));
        }
        if self.schemes.is_empty() {
            return Err(Error::InvalidArgument("at least one scheme is required".into()));
        }
        if self.p == 0 || self.n <= self.p {
            return Err(Error::InvalidArgument(format!("need n > p >= 1, got n={} p={}", self.n, self.p)));
        }
        if self.mc_draws == 1 {
            return Err(Error::InvalidArgument("mc_draws must be 0 or >= 2".into()));
        }
        if let Some(beta) = &self.beta {
            if beta.len() != self.p {
                return Err(Error::InvalidArgument(format!("beta has length {}, expected {}", beta.len(), self.p)));
            }
        }
        if let Some(spec) = &self.spectrum {
            if spec.len() != self.p {
                return Err(Error::InvalidArgument(format!("spectrum has length {}, expected {}", spec.len(), self.p)));
            }
        }
        for s in &self.schemes {
            let mut probe = s.clone();
            probe.r = probe.r.max(1);
            probe.validate()?;
        }
        Ok(())
    }

    pub fn k(&self) -> Option<usize> {
        match self.design {
            DesignSpec::Kheavy { k, .. } => Some(k),
            _ => None,
        }
    }
}

/// One sketch trial. CSV columns follow the field order, except `pe_bias`,
/// which is kept for aggregation only.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialRow {
    pub scheme: Scheme,
    pub n: usize,
    pub p: usize,
    pub r: usize,
    pub k: Option<usize>,
    pub trial_index: usize,
    pub seed: u64,
    pub rank_ok: bool,
    #[serde(serialize_with = "crate::fmt::serialize")]
    pub c_wc: f64,
    #[serde(serialize_with = "crate::fmt::serialize")]
    pub c_pe: f64,
    #[serde(serialize_with = "crate::fmt::serialize")]
    pub c_re: f64,
    #[serde(serialize_with = "crate::fmt::serialize_opt")]
    pub pe_mc: Option<f64>,
    #[serde(serialize_with = "crate::fmt::serialize_opt")]
    pub re_mc: Option<f64>,
    #[serde(serialize_with = "crate::fmt::serialize_opt")]
    pub se_pe: Option<f64>,
    #[serde(serialize_with = "crate::fmt::serialize_opt")]
    pub se_re: Option<f64>,
    #[serde(serialize_with = "crate::fmt::serialize")]
    pub bound_wc: f64,
    #[serde(serialize_with = "crate::fmt::serialize")]
    pub bound_pe: f64,
    #[serde(serialize_with = "crate::fmt::serialize")]
    pub bound_re: f64,
    pub sat_wc: bool,
    pub sat_pe: bool,
    pub sat_re: bool,
    #[serde(serialize_with = "crate::fmt::serialize_opt")]
    pub eta_hat: Option<f64>,
    #[serde(serialize_with = "crate::fmt::serialize_opt")]
    pub pw_floor: Option<f64>,
    #[serde(skip)]
    pub pe_bias: f64,
    /// Hadamard only: `(pe, re)` bounds under the literal labels.
    #[serde(skip)]
    pub literal_bounds: Option<(f64, f64)>,
}

pub const CSV_COLUMNS: [&str; 23] = [
    "scheme", "n", "p", "r", "k", "trial_index", "seed", "rank_ok", "c_wc", "c_pe", "c_re", "pe_mc", "re_mc",
    "se_pe", "se_re", "bound_wc", "bound_pe", "bound_re", "sat_wc", "sat_pe", "sat_re", "eta_hat", "pw_floor",
];

impl TrialRow {
    pub fn all_sat(&self) -> bool {
        self.sat_wc && self.sat_pe && self.sat_re
    }

    fn csv_fields(&self) -> Vec<String> {
        let opt = |v: Option<f64>| v.map(float).unwrap_or_default();
        vec![
            self.scheme.to_string(),
            self.n.to_string(),
            self.p.to_string(),
            self.r.to_string(),
            self.k.map(|k| k.to_string()).unwrap_or_default(),
            self.trial_index.to_string(),
            self.seed.to_string(),
            self.rank_ok.to_string(),
            float(self.c_wc),
            float(self.c_pe),
            float(self.c_re),
            opt(self.pe_mc),
            opt(self.re_mc),
            opt(self.se_pe),
            opt(self.se_re),
            float(self.bound_wc),
            float(self.bound_pe),
            float(self.bound_re),
            self.sat_wc.to_string(),
            self.sat_pe.to_string(),
            self.sat_re.to_string(),
            opt(self.eta_hat),
            opt(self.pw_floor),
        ]
    }
}

/// The fixed design of a configuration, plus what the trials reuse.
#[derive(Debug, Clone)]
pub struct PreparedDesign {
    pub dataset: Dataset,
    pub leverage: LeverageProfile,
    pub beta: DVector<f64>,
    pub heavy: Option<HeavyParams>,
    /// Zero-padded copy for Hadamard sketches when `n` is not a power of two.
    padded: Option<(Dataset, LeverageProfile)>,
}

impl PreparedDesign {
    fn for_scheme(&self, scheme: Scheme) -> (&Dataset, &LeverageProfile) {
        match (&self.padded, scheme) {
            (Some((d, l)), Scheme::Hadamard) => (d, l),
            _ => (&self.dataset, &self.leverage),
        }
    }
}

pub fn prepare_design(cfg: &ExperimentConfig) -> Result<PreparedDesign> {
    cfg.validate()?;
    let mut rng = seeded(cfg.design_seed.unwrap_or_else(|| mix(cfg.master_seed, DESIGN_STREAM)));
    let spectrum = cfg.spectrum.clone().unwrap_or_else(|| vec![1.0; cfg.p]);
    let beta = cfg
        .beta
        .as_ref()
        .map(|b| DVector::from_column_slice(b))
        .unwrap_or_else(|| default_beta(cfg.p));
    let (x, y, heavy) = match &cfg.design {
        DesignSpec::Gaussian => {
            let x = gaussian_design(cfg.n, cfg.p, &mut rng)?;
            let y = &x * &beta;
            (x, y, None)
        }
        DesignSpec::Kheavy { k, tail_mass } => {
            let target = kheavy_targets(cfg.n, cfg.p, *k, *tail_mass)?;
            let u = schur_horn_orthonormal(&target.targets, &mut rng)?;
            let x = design_from_leverage(&u, &spectrum, &mut rng)?;
            let y = &x * &beta;
            let c = target.band_constant();
            (x, y, Some(HeavyParams { k: *k, c, big_c: c }))
        }
        DesignSpec::Csv { path } => {
            let d = Dataset::load(path)?;
            if d.n() != cfg.n || d.p() != cfg.p {
                return Err(Error::InvalidArgument(format!(
                    "CSV design is {}x{}, config says {}x{}",
                    d.n(),
                    d.p(),
                    cfg.n,
                    cfg.p
                )));
            }
            (d.x().clone(), d.y().clone(), None)
        }
    };
    let x = if matches!(cfg.design, DesignSpec::Gaussian) && cfg.spectrum.is_some() {
        // Re-shape the Gaussian design's spectrum while keeping its leverage.
        let u = crate::linalg::thin_svd(&x)?.u;
        design_from_leverage(&u, &spectrum, &mut rng)?
    } else {
        x
    };
    let y = if matches!(cfg.design, DesignSpec::Csv { .. }) { y } else { &x * &beta };
    let leverage = exact_leverage(&x)?;
    let needs_pad = !cfg.n.is_power_of_two() && cfg.schemes.iter().any(|s| s.scheme == Scheme::Hadamard);
    let padded = if needs_pad {
        let xp = pad_rows_pow2(&x);
        let mut yp = DVector::zeros(xp.nrows());
        yp.rows_mut(0, y.len()).copy_from(&y);
        let lev = exact_leverage(&xp)?;
        Some((Dataset::new(xp, yp)?, lev))
    } else {
        None
    };
    Ok(PreparedDesign {
        dataset: Dataset::new(x, y)?,
        leverage,
        beta,
        heavy,
        padded,
    })
}

struct WorkItem {
    cell: usize,
    scheme_idx: usize,
    r: usize,
    trial: usize,
}

fn nan_bounds() -> TheoremBounds {
    TheoremBounds {
        theorem: "none",
        wc: f64::NAN,
        pe: f64::NAN,
        re: f64::NAN,
        literal_labels: None,
        success_prob: f64::NAN,
        precondition_rhs: f64::NAN,
        precondition_met: false,
    }
}

fn run_trial(cfg: &ExperimentConfig, design: &PreparedDesign, item: &WorkItem, eta: Option<f64>) -> TrialRow {
    let template = &cfg.schemes[item.scheme_idx];
    let seed = mix(mix(cfg.master_seed, mix(CELL_STREAM, item.cell as u64)), item.trial as u64);
    let (ds, lev) = design.for_scheme(template.scheme);
    let (n, p, r) = (ds.n(), ds.p(), item.r);
    let bounds = theorem_bounds(template.scheme, n, p, r, template.theta, design.heavy, cfg.constants)
        .unwrap_or_else(|_| nan_bounds());
    let mut row = TrialRow {
        scheme: template.scheme,
        n,
        p,
        r,
        k: cfg.k(),
        trial_index: item.trial,
        seed,
        rank_ok: false,
        c_wc: f64::NAN,
        c_pe: f64::NAN,
        c_re: f64::NAN,
        pe_mc: None,
        re_mc: None,
        se_pe: None,
        se_re: None,
        bound_wc: bounds.wc,
        bound_pe: bounds.pe,
        bound_re: bounds.re,
        sat_wc: false,
        sat_pe: false,
        sat_re: false,
        eta_hat: eta,
        pw_floor: eta.map(|e| pw_floor(n, r, e)),
        pe_bias: f64::NAN,
        literal_bounds: bounds.literal_labels,
    };
    let mut spec = template.clone();
    spec.r = r;
    spec.seed = seed;
    let outcome = (|| -> Result<()> {
        let s = spec.build(n, Some(lev))?;
        let closed = closed_form_criteria(ds, &design.beta, &s)?;
        row.rank_ok = closed.rank_ok;
        row.c_wc = closed.c_wc;
        row.c_pe = closed.c_pe;
        row.c_re = closed.c_re;
        row.pe_bias = closed.pe_bias;
        if cfg.mc_draws >= 2 {
            let mc = mc_criteria(ds, &design.beta, &s, cfg.mc_draws, mix(seed, MC_STREAM))?;
            row.pe_mc = Some(mc.c_pe);
            row.re_mc = Some(mc.c_re);
            if let Method::MonteCarlo { se_pe, se_re, .. } = mc.method {
                row.se_pe = Some(se_pe);
                row.se_re = Some(se_re);
            }
        }
        Ok(())
    })();
    // A failed trial keeps NaN criteria and unsatisfied flags.
    if outcome.is_ok() && row.rank_ok {
        row.sat_wc = row.c_wc <= row.bound_wc;
        row.sat_pe = row.c_pe <= row.bound_pe;
        row.sat_re = row.c_re <= row.bound_re;
    }
    row
}

/// Worker count from `SKETCHLS_THREADS`, if set.
pub fn threads_from_env() -> Option<usize> {
    std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse().ok()).filter(|&t| t > 0)
}

/// Runs every (scheme, r, trial) of the configuration.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<TrialRow>> {
    run_experiment_with_threads(cfg, threads_from_env())
}

/// As [`run_experiment`] with an explicit worker count; `Some(1)` is serial.
pub fn run_experiment_with_threads(cfg: &ExperimentConfig, threads: Option<usize>) -> Result<Vec<TrialRow>> {
    let design = prepare_design(cfg)?;
    let body = || run_prepared(cfg, &design);
    match threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| Error::InvalidArgument(e.to_string()))?
            .install(body),
        None => body(),
    }
}

fn run_prepared(cfg: &ExperimentConfig, design: &PreparedDesign) -> Result<Vec<TrialRow>> {
    let mut items = Vec::new();
    let mut cells = Vec::new();
    for (si, _) in cfg.schemes.iter().enumerate() {
        for (ri, &r) in cfg.r_grid.iter().enumerate() {
            let cell = si * cfg.r_grid.len() + ri;
            cells.push((cell, si, r));
            for trial in 0..cfg.trials {
                items.push(WorkItem {
                    cell,
                    scheme_idx: si,
                    r,
                    trial,
                });
            }
        }
    }
    let etas: BTreeMap<usize, Option<f64>> = if cfg.eta_trials > 0 {
        cells
            .iter()
            .map(|&(cell, si, r)| {
                let mut spec = cfg.schemes[si].clone();
                spec.r = r;
                let (ds, lev) = design.for_scheme(spec.scheme);
                let seed = mix(mix(cfg.master_seed, ETA_STREAM), cell as u64);
                let eta = lower_bound_eta(&spec, ds.n(), Some(lev), cfg.eta_trials, seed).ok().map(|e| e.eta_hat);
                (cell, eta)
            })
            .collect()
    } else {
        BTreeMap::new()
    };
    Ok(items
        .par_iter()
        .map(|item| run_trial(cfg, design, item, etas.get(&item.cell).copied().flatten()))
        .collect())
}

pub fn write_rows_csv<W: Write>(rows: &[TrialRow], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(CSV_COLUMNS).map_err(|e| Error::Parse(e.to_string()))?;
    for row in rows {
        wtr.write_record(row.csv_fields()).map_err(|e| Error::Parse(e.to_string()))?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn rows_csv_string(rows: &[TrialRow]) -> Result<String> {
    let mut buf = Vec::new();
    write_rows_csv(rows, &mut buf)?;
    String::from_utf8(buf).map_err(|e| Error::Parse(e.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Spread {
    #[serde(serialize_with = "crate::fmt::serialize")]
    pub median: f64,
    #[serde(serialize_with = "crate::fmt::serialize")]
    pub iqr: f64,
}

/// Linear-interpolated quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi || sorted[lo] == sorted[hi] {
        return sorted[lo];
    }
    let w = pos - lo as f64;
    sorted[lo] * (1.0 - w) + sorted[hi] * w
}

pub fn median(values: &[f64]) -> f64 {
    spread(values).median
}

pub fn spread(values: &[f64]) -> Spread {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
    v.sort_by(|a, b| a.total_cmp(b));
    let q1 = quantile(&v, 0.25);
    let q3 = quantile(&v, 0.75);
    Spread {
        median: quantile(&v, 0.5),
        iqr: if q3.is_infinite() && q1.is_infinite() { f64::NAN } else { q3 - q1 },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellSummary {
    pub scheme: Scheme,
    pub n: usize,
    pub p: usize,
    pub r: usize,
    pub k: Option<usize>,
    pub trials: usize,
    pub c_wc: Spread,
    pub c_pe: Spread,
    pub c_re: Spread,
    /// Median of `C_PE − bias`.
    #[serde(serialize_with = "crate::fmt::serialize")]
    pub pe_variance_median: f64,
    pub sat_rate: f64,
    pub sat_wc_rate: f64,
    pub sat_pe_rate: f64,
    pub sat_re_rate: f64,
    pub rank_failure_rate: f64,
    #[serde(serialize_with = "crate::fmt::serialize")]
    pub bound_wc: f64,
    #[serde(serialize_with = "crate::fmt::serialize")]
    pub bound_pe: f64,
    #[serde(serialize_with = "crate::fmt::serialize")]
    pub bound_re: f64,
    #[serde(serialize_with = "crate::fmt::serialize_opt")]
    pub eta_hat: Option<f64>,
}

/// Log-log slope of median `C_PE − bias` against `r`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlopeFit {
    pub scheme: Scheme,
    pub n: usize,
    pub p: usize,
    pub k: Option<usize>,
    pub r_values: Vec<usize>,
    #[serde(serialize_with = "crate::fmt::serialize")]
    pub slope: f64,
}

/// Hadamard bound-label comparison for one `(n, p, k)` group.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LabelCheck {
    pub n: usize,
    pub p: usize,
    pub k: Option<usize>,
    /// PE ≤ 40 log(np)(1 + n/r), RE ≤ 1 + 40 log(np)(1 + p/r).
    pub swapped_sat_rate: f64,
    /// PE ≤ 1 + 40 log(np)(1 + p/r), RE ≤ 40 log(np)(1 + n/r).
    pub literal_sat_rate: f64,
    /// Log-log slope of median C_PE in r (needs at least two r values).
    #[serde(serialize_with = "crate::fmt::serialize_opt")]
    pub observed_pe_slope: Option<f64>,
    #[serde(serialize_with = "crate::fmt::serialize_opt")]
    pub swapped_pe_bound_slope: Option<f64>,
    #[serde(serialize_with = "crate::fmt::serialize_opt")]
    pub literal_pe_bound_slope: Option<f64>,
    /// `swapped`, `literal` or `undetermined`: whose PE bound scales like the data.
    pub empirical_match: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub rows: usize,
    /// Fraction of all rows satisfying all three bounds.
    pub sat_rate: f64,
    pub cells: Vec<CellSummary>,
    pub slopes: Vec<SlopeFit>,
    pub hadamard_labels: Vec<LabelCheck>,
}

fn rate(rows: &[&TrialRow], f: impl Fn(&TrialRow) -> bool) -> f64 {
    rows.iter().filter(|r| f(r)).count() as f64 / rows.len() as f64
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter(|(x, y)| **x > 0.0 && **y > 0.0 && y.is_finite())
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    Some(sxy / sxx)
}

type CellKey = (Scheme, usize, usize, usize, Option<usize>);
type GroupKey = (Scheme, usize, usize, Option<usize>);
type DesignKey = (usize, usize, Option<usize>);

/// One cell's contribution to a per-scheme scaling fit.
struct GroupPoint {
    r: usize,
    pe_variance_median: f64,
    pe_median: f64,
    /// Hadamard only: PE bound under the swapped and literal labels.
    pe_bounds: Option<(f64, f64)>,
}

/// Hadamard rows: total, all-sat under swapped labels, all-sat under literal labels.
#[derive(Default)]
struct LabelCounts {
    total: usize,
    swapped: usize,
    literal: usize,
}

pub fn aggregate(rows: &[TrialRow]) -> Result<Summary> {
    if rows.is_empty() {
        return Err(Error::InvalidArgument("cannot aggregate zero rows".into()));
    }
    let mut cells: BTreeMap<CellKey, Vec<&TrialRow>> = BTreeMap::new();
    for row in rows {
        cells.entry((row.scheme, row.n, row.p, row.r, row.k)).or_default().push(row);
    }
    let mut summaries = Vec::new();
    let mut groups: BTreeMap<GroupKey, Vec<GroupPoint>> = BTreeMap::new();
    let mut label_rates: BTreeMap<DesignKey, LabelCounts> = BTreeMap::new();
    for ((scheme, n, p, r, k), members) in &cells {
        let col = |f: fn(&TrialRow) -> f64| members.iter().map(|r| f(r)).collect::<Vec<f64>>();
        let pe_var = col(|r| r.c_pe - if r.pe_bias.is_finite() { r.pe_bias } else { 0.0 });
        let pe_var_median = median(&pe_var);
        let c_pe = spread(&col(|r| r.c_pe));
        summaries.push(CellSummary {
            scheme: *scheme,
            n: *n,
            p: *p,
            r: *r,
            k: *k,
            trials: members.len(),
            c_wc: spread(&col(|r| r.c_wc)),
            c_pe,
            c_re: spread(&col(|r| r.c_re)),
            pe_variance_median: pe_var_median,
            sat_rate: rate(members, TrialRow::all_sat),
            sat_wc_rate: rate(members, |r| r.sat_wc),
            sat_pe_rate: rate(members, |r| r.sat_pe),
            sat_re_rate: rate(members, |r| r.sat_re),
            rank_failure_rate: rate(members, |r| !r.rank_ok),
            bound_wc: members[0].bound_wc,
            bound_pe: members[0].bound_pe,
            bound_re: members[0].bound_re,
            eta_hat: members[0].eta_hat,
        });
        groups.entry((*scheme, *n, *p, *k)).or_default().push(GroupPoint {
            r: *r,
            pe_variance_median: pe_var_median,
            pe_median: c_pe.median,
            pe_bounds: members[0].literal_bounds.map(|(lit_pe, _)| (members[0].bound_pe, lit_pe)),
        });
        if *scheme == Scheme::Hadamard {
            let entry = label_rates.entry((*n, *p, *k)).or_default();
            for m in members {
                entry.total += 1;
                entry.swapped += usize::from(m.all_sat());
                if let Some((lit_pe, lit_re)) = m.literal_bounds {
                    entry.literal +=
                        usize::from(m.rank_ok && m.c_wc <= m.bound_wc && m.c_pe <= lit_pe && m.c_re <= lit_re);
                }
            }
        }
    }
    let mut slopes = Vec::new();
    let mut hadamard_labels = Vec::new();
    for ((scheme, n, p, k), pts) in &groups {
        let rs: Vec<f64> = pts.iter().map(|t| t.r as f64).collect();
        if let Some(slope) = loglog_slope(&rs, &pts.iter().map(|t| t.pe_variance_median).collect::<Vec<_>>()) {
            slopes.push(SlopeFit {
                scheme: *scheme,
                n: *n,
                p: *p,
                k: *k,
                r_values: pts.iter().map(|t| t.r).collect(),
                slope,
            });
        }
        if *scheme == Scheme::Hadamard {
            let observed = loglog_slope(&rs, &pts.iter().map(|t| t.pe_median).collect::<Vec<_>>());
            let swapped = loglog_slope(&rs, &pts.iter().filter_map(|t| t.pe_bounds.map(|b| b.0)).collect::<Vec<_>>());
            let literal = loglog_slope(&rs, &pts.iter().filter_map(|t| t.pe_bounds.map(|b| b.1)).collect::<Vec<_>>());
            let empirical_match = match (observed, swapped, literal) {
                (Some(o), Some(s), Some(l)) => {
                    if (o - s).abs() < (o - l).abs() {
                        "swapped"
                    } else {
                        "literal"
                    }
                }
                _ => "undetermined",
            };
            let counts = &label_rates[&(*n, *p, *k)];
            let total = counts.total as f64;
            hadamard_labels.push(LabelCheck {
                n: *n,
                p: *p,
                k: *k,
                swapped_sat_rate: counts.swapped as f64 / total,
                literal_sat_rate: counts.literal as f64 / total,
                observed_pe_slope: observed,
                swapped_pe_bound_slope: swapped,
                literal_pe_bound_slope: literal,
                empirical_match: empirical_match.into(),
            });
        }
    }
    Ok(Summary {
        rows: rows.len(),
        sat_rate: rows.iter().filter(|r| r.all_sat()).count() as f64 / rows.len() as f64,
        cells: summaries,
        slopes,
        hadamard_labels,
    })
}

/// Per-cell histogram of `C_PE` and `C_RE` as CSV
/// (`scheme,n,p,r,k,criterion,bin_lo,bin_hi,count`).
pub fn histogram_csv(rows: &[TrialRow], bins: usize) -> String {
    let mut out = String::from("scheme,n,p,r,k,criterion,bin_lo,bin_hi,count\n");
    if bins == 0 {
        return out;
    }
    let mut cells: BTreeMap<CellKey, Vec<&TrialRow>> = BTreeMap::new();
    for row in rows {
        cells.entry((row.scheme, row.n, row.p, row.r, row.k)).or_default().push(row);
    }
    for ((scheme, n, p, r, k), members) in cells {
        for (name, get) in [("c_pe", (|r: &TrialRow| r.c_pe) as fn(&TrialRow) -> f64), ("c_re", |r: &TrialRow| r.c_re)] {
            let vals: Vec<f64> = members.iter().map(|m| get(m)).filter(|v| v.is_finite()).collect();
            if vals.is_empty() {
                continue;
            }
            let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
            let mut counts = vec![0usize; bins];
            for v in vals {
                let b = (((v - lo) / width) as usize).min(bins - 1);
                counts[b] += 1;
            }
            let k = k.map(|k| k.to_string()).unwrap_or_default();
            for (b, c) in counts.iter().enumerate() {
                let a = lo + b as f64 * width;
                out.push_str(&format!("{scheme},{n},{p},{r},{k},{name},{},{},{c}\n", float(a), float(a + width)));
            }
        }
    }
    out
}

/// Runs the configuration and writes `rows.csv`, `summary.json` and, when
/// requested, `histograms.csv` under `dir` (the config's `output_dir` when
/// `None`).
pub fn run_to_dir(
    cfg: &ExperimentConfig,
    dir: Option<&Path>,
    threads: Option<usize>,
) -> Result<(Vec<TrialRow>, Summary)> {
    let rows = run_experiment_with_threads(cfg, threads.or_else(threads_from_env))?;
    let summary = aggregate(&rows)?;
    let dir = dir.unwrap_or(&cfg.output_dir);
    std::fs::create_dir_all(dir)?;
    write_rows_csv(&rows, std::fs::File::create(dir.join("rows.csv"))?)?;
    std::fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    if cfg.histogram_bins > 0 {
        std::fs::write(dir.join("histograms.csv"), histogram_csv(&rows, cfg.histogram_bins))?;
    }
    Ok((rows, summary))
}
