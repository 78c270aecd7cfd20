//! Worst-case, prediction-efficiency and residual-efficiency criteria.
//!
//! Everything is expressed through the oblique projection
//! `Π = U (SU)† S`. The projection is kept in factored form: `U` (n×p) and
//! `coef = (SU)† S` (p×n), so `Π = U · coef`, `‖Π‖_F = ‖coef‖_F` and
//! `‖Π x‖ = ‖coef · x‖`. The dense n×n matrix is only formed on request.
//!
//! Closed forms:
//!
//! ```text
//! C_WC = 1 + σ_max²(Π (I − UUᵀ))            rank(SU) = p, else +∞
//! C_PE = ‖(I − (SU)†SU) Σ Vᵀ β‖² / p + ‖Π‖_F² / p
//! C_RE = 1 + (C_PE − 1) / (n/p − 1)
//! ```
//!
//! The Monte Carlo evaluator in [`mc_criteria`] goes through the sketched
//! solver instead and never touches `Π`, so the two routes check each other.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::leverage::LeverageProfile;
use crate::linalg::{pseudo_inverse, spectral_norm, thin_svd, DenseMatrix, RankTolerance, ThinSvd};
use crate::model::{sketched_rank, Dataset};
use crate::rng::{mix, normal_vector, seeded};
use crate::sketch::{Scheme, SketchOperator, SketchSpec};

/// Dense `n × n` guard for [`ObliqueProjection::pi`].
pub const DENSE_PI_MAX_N: usize = 4096;

/// Singular values of `Π(I − UUᵀ)` below this count as zero.
const WC_ZERO: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct ObliqueProjection {
    u: DenseMatrix,
    coef: DenseMatrix,
    rank_su: usize,
    bias_projector: DenseMatrix,
}

impl ObliqueProjection {
    pub fn u(&self) -> &DenseMatrix {
        &self.u
    }

    /// `(SU)† S`, p×n.
    pub fn coef(&self) -> &DenseMatrix {
        &self.coef
    }

    pub fn rank_su(&self) -> usize {
        self.rank_su
    }

    pub fn p(&self) -> usize {
        self.u.ncols()
    }

    pub fn n(&self) -> usize {
        self.u.nrows()
    }

    pub fn rank_ok(&self) -> bool {
        self.rank_su == self.p()
    }

    /// `I − (SU)†(SU)`.
    pub fn bias_projector(&self) -> &DenseMatrix {
        &self.bias_projector
    }

    /// `‖Π‖_F²`.
    pub fn frobenius_sq(&self) -> f64 {
        self.coef.norm_squared()
    }

    /// `Π v`.
    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.u * (&self.coef * v)
    }

    /// Dense `Π`.
    pub fn pi(&self) -> Result<DenseMatrix> {
        let n = self.n();
        if n > DENSE_PI_MAX_N {
            return Err(Error::SizeGuard {
                requested: n * n,
                limit: DENSE_PI_MAX_N * DENSE_PI_MAX_N,
            });
        }
        Ok(&self.u * &self.coef)
    }

    /// `coef · (I − UUᵀ)`; its singular values are those of `Π(I − UUᵀ)`.
    fn null_space_part(&self) -> DenseMatrix {
        &self.coef - (&self.coef * &self.u) * self.u.transpose()
    }
}

/// Builds `Π = U (SU)† S`. Rank deficiency of `SU` is recorded, not an error.
pub fn oblique_projection(u: &DenseMatrix, s: &SketchOperator) -> Result<ObliqueProjection> {
    let tol = RankTolerance::default();
    let su = s.apply(u)?;
    let su_pinv = pseudo_inverse(&su, tol)?;
    let rank_su = sketched_rank(&su, tol)?;
    let coef = s.apply_transpose(&su_pinv.transpose())?.transpose();
    let p = u.ncols();
    let bias_projector = DMatrix::identity(p, p) - &su_pinv * &su;
    Ok(ObliqueProjection {
        u: u.clone(),
        coef,
        rank_su,
        bias_projector,
    })
}

/// `C_WC`: `+∞` when `rank(SU) < p`.
pub fn wc_exact(op: &ObliqueProjection) -> Result<f64> {
    if !op.rank_ok() {
        return Ok(f64::INFINITY);
    }
    let top = spectral_norm(&op.null_space_part())?;
    Ok(1.0 + top * top)
}

/// Worst-case noise direction and the ratio it attains.
pub fn wc_witness(op: &ObliqueProjection) -> Result<(DVector<f64>, f64)> {
    if !op.rank_ok() {
        return Err(Error::RankDeficient {
            rank: op.rank_su(),
            expected: op.p(),
        });
    }
    let k = op.null_space_part();
    let svd = thin_svd(&k.transpose())?;
    let eps = if svd.sigma[0] > WC_ZERO {
        svd.u.column(0).into_owned()
    } else {
        // Π vanishes on the null space: any unit vector orthogonal to U works.
        any_null_direction(op.u())?
    };
    let ratio = 1.0 + (op.coef() * &eps).norm_squared();
    Ok((eps, ratio))
}

fn any_null_direction(u: &DenseMatrix) -> Result<DVector<f64>> {
    let n = u.nrows();
    let mut best: Option<DVector<f64>> = None;
    for j in 0..n {
        let mut e = DVector::zeros(n);
        e[j] = 1.0;
        let r = &e - u * (u.transpose() * &e);
        if best.as_ref().is_none_or(|b| r.norm() > b.norm()) {
            best = Some(r);
        }
    }
    let v = best.ok_or(Error::InvalidArgument("empty design".into()))?;
    let norm = v.norm();
    if norm <= WC_ZERO {
        return Err(Error::InvalidArgument(
            "column space of U is the whole space".into(),
        ));
    }
    Ok(v / norm)
}

/// The two parts of the PE closed form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PeBreakdown {
    pub c_pe: f64,
    /// `‖(I − (SU)†SU) Σ Vᵀ β‖² / p`
    pub bias: f64,
    /// `‖Π‖_F² / p`
    pub variance: f64,
}

pub fn pe_exact(svd: &ThinSvd, beta: &DVector<f64>, op: &ObliqueProjection) -> Result<PeBreakdown> {
    let p = op.p();
    if beta.len() != p || svd.sigma.len() != p {
        return Err(crate::error::shape_err(
            format!("p = {p}"),
            format!("beta {}", beta.len()),
        ));
    }
    let signal = DMatrix::from_diagonal(&svd.sigma) * svd.v.transpose() * beta;
    let bias = if op.rank_ok() {
        0.0
    } else {
        (op.bias_projector() * signal).norm_squared() / p as f64
    };
    let variance = op.frobenius_sq() / p as f64;
    Ok(PeBreakdown {
        c_pe: bias + variance,
        bias,
        variance,
    })
}

/// `C_RE = 1 + (C_PE − 1)/(n/p − 1)`.
pub fn re_from_pe(c_pe: f64, n: usize, p: usize) -> Result<f64> {
    if p == 0 || n <= p {
        return Err(Error::InvalidArgument(format!(
            "need n > p >= 1, got n = {n}, p = {p}"
        )));
    }
    Ok(1.0 + (c_pe - 1.0) / (n as f64 / p as f64 - 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Method {
    ClosedForm,
    MonteCarlo {
        draws: usize,
        se_pe: f64,
        se_re: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriteriaReport {
    /// For Monte Carlo reports: the largest realized residual ratio, a lower
    /// bound on the supremum.
    #[serde(serialize_with = "crate::fmt::serialize")]
    pub c_wc: f64,
    pub c_pe: f64,
    pub c_re: f64,
    pub rank_ok: bool,
    pub pe_bias: f64,
    pub wc_bias_infinite: bool,
    pub method: Method,
}

/// Closed-form criteria for a dataset's design, true `β` and sketch.
pub fn closed_form_criteria(
    d: &Dataset,
    beta: &DVector<f64>,
    s: &SketchOperator,
) -> Result<CriteriaReport> {
    let op = oblique_projection(&d.svd().u, s)?;
    let c_wc = wc_exact(&op)?;
    let pe = pe_exact(d.svd(), beta, &op)?;
    let c_re = re_from_pe(pe.c_pe, d.n(), d.p())?;
    Ok(CriteriaReport {
        c_wc,
        c_pe: pe.c_pe,
        c_re,
        rank_ok: op.rank_ok(),
        pe_bias: pe.bias,
        wc_bias_infinite: !op.rank_ok(),
        method: Method::ClosedForm,
    })
}

fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Monte Carlo PE/RE with `S` held fixed and fresh Gaussian noise per draw.
///
/// Draw `i` uses seed `mix(seed, i)`; draws run in parallel and are reduced
/// in index order. Denominators are the analytic `p` and `n − p`.
pub fn mc_criteria(
    d: &Dataset,
    beta: &DVector<f64>,
    s: &SketchOperator,
    draws: usize,
    seed: u64,
) -> Result<CriteriaReport> {
    if draws < 2 {
        return Err(Error::InvalidArgument(
            "Monte Carlo needs at least 2 draws".into(),
        ));
    }
    let (n, p) = (d.n(), d.p());
    if beta.len() != p {
        return Err(crate::error::shape_err(
            format!("beta of length {p}"),
            beta.len().to_string(),
        ));
    }
    let tol = RankTolerance::default();
    let x = d.x();
    let sx = s.apply(x)?;
    let solver = pseudo_inverse(&sx, tol)?;
    let rank_ok = sketched_rank(&sx, tol)? == p;
    let signal = x * beta;
    let s_signal = s.apply_vec(&signal)?;
    let u = &d.svd().u;

    let samples: Vec<Result<(f64, f64, f64)>> = (0..draws)
        .into_par_iter()
        .map(|i| {
            let eps = normal_vector(n, &mut seeded(mix(seed, i as u64)));
            let y = &signal + &eps;
            let sy = &s_signal + s.apply_vec(&eps)?;
            let beta_s = &solver * sy;
            let fit = x * &beta_s;
            let pe = (&signal - &fit).norm_squared() / p as f64;
            let resid_s = (&y - &fit).norm_squared();
            let resid_ols = (&y - u * (u.transpose() * &y)).norm_squared();
            Ok((pe, resid_s / (n - p) as f64, resid_s / resid_ols))
        })
        .collect();
    let mut pes = Vec::with_capacity(draws);
    let mut res = Vec::with_capacity(draws);
    let mut worst = 0.0f64;
    for sample in samples {
        let (pe, re, ratio) = sample?;
        pes.push(pe);
        res.push(re);
        worst = worst.max(ratio);
    }
    let (c_pe, se_pe) = mean_and_se(&pes);
    let (c_re, se_re) = mean_and_se(&res);
    let bias_dir = beta - &solver * &sx * beta;
    let pe_bias = (x * bias_dir).norm_squared() / p as f64;
    Ok(CriteriaReport {
        c_wc: worst,
        c_pe,
        c_re,
        rank_ok,
        pe_bias,
        wc_bias_infinite: !rank_ok,
        method: Method::MonteCarlo {
            draws,
            se_pe,
            se_re,
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EtaEstimate {
    pub eta_hat: f64,
    pub trials: usize,
    /// Trials whose `SSᵀ` was singular (duplicate sampled rows, r > n, …).
    pub singular_trials: usize,
}

/// `η̂ = (n/r) · ‖mean_t S_tᵀ(S_t S_tᵀ)⁻¹ S_t‖₂`.
///
/// Each term is the orthogonal projector onto the row space of `S_t`,
/// computed as `S_t† S_t`, which equals `Sᵀ(SSᵀ)⁻¹S` whenever `SSᵀ` is
/// invertible. Trial `t` uses seed `mix(seed, t)`.
pub fn lower_bound_eta(
    spec: &SketchSpec,
    n: usize,
    leverage: Option<&LeverageProfile>,
    trials: usize,
    seed: u64,
) -> Result<EtaEstimate> {
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be >= 1".into()));
    }
    let tol = RankTolerance::default();
    let parts: Vec<Result<(DenseMatrix, bool)>> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut spec_t = spec.clone();
            spec_t.seed = mix(seed, t as u64);
            let s = spec_t.build(n, leverage)?.materialize()?;
            let rank = sketched_rank(&s, tol)?;
            if rank == 0 {
                return Err(Error::RankDeficient {
                    rank,
                    expected: spec.r.min(n),
                });
            }
            let proj = pseudo_inverse(&s, tol)? * &s;
            Ok((proj, rank < spec.r))
        })
        .collect();
    let mut mean = DenseMatrix::zeros(n, n);
    let mut singular_trials = 0;
    for part in parts {
        let (proj, singular) = part?;
        mean += proj;
        singular_trials += usize::from(singular);
    }
    mean /= trials as f64;
    let eta_hat = n as f64 / spec.r as f64 * spectral_norm(&mean)?;
    Ok(EtaEstimate {
        eta_hat,
        trials,
        singular_trials,
    })
}

/// Lower-bound floor `n / (128 η r)` on `C_PE` under the η condition.
pub fn pw_floor(n: usize, r: usize, eta: f64) -> f64 {
    n as f64 / (128.0 * eta * r as f64)
}

/// The floor as a constraint on `C_PE`, which is never below 1.
pub fn effective_pw_floor(n: usize, r: usize, eta: f64) -> f64 {
    pw_floor(n, r, eta).max(1.0)
}

/// Unspecified constants in the theorems' sample-size preconditions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
pub struct PreconditionConstants {
    pub c: f64,
    pub c_prime: f64,
    pub c1: f64,
    pub c2: f64,
}

impl Default for PreconditionConstants {
    fn default() -> Self {
        Self {
            c: 1.0,
            c_prime: 1.0,
            c1: 1.0,
            c2: 1.0,
        }
    }
}

/// Heavy-hitter parameters needed by the non-rescaled sampling bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HeavyParams {
    pub k: usize,
    pub c: f64,
    pub big_c: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TheoremBounds {
    pub theorem: &'static str,
    pub wc: f64,
    pub pe: f64,
    pub re: f64,
    /// Hadamard only: `(pe, re)` bounds under the literal label assignment,
    /// where `pe`/`re` above carry the swapped assignment that follows the
    /// pattern of the other families (PE ~ n/r, RE − 1 ~ p/r).
    pub literal_labels: Option<(f64, f64)>,
    pub success_prob: f64,
    /// Right-hand side of the sample-size precondition with the configured
    /// constants; informational only.
    pub precondition_rhs: f64,
    pub precondition_met: bool,
}

/// Relative allowance on the identity reference bound of 1.
const IDENTITY_SLACK: f64 = 1e-9;

/// Upper bounds and success probability for a scheme at `(n, p, r)`.
pub fn theorem_bounds(
    scheme: Scheme,
    n: usize,
    p: usize,
    r: usize,
    theta: f64,
    heavy: Option<HeavyParams>,
    consts: PreconditionConstants,
) -> Result<TheoremBounds> {
    if r == 0 || p == 0 || n <= p {
        return Err(Error::InvalidArgument(format!(
            "need n > p >= 1 and r >= 1; got n={n} p={p} r={r}"
        )));
    }
    let (nf, pf, rf) = (n as f64, p as f64, r as f64);
    let b = match scheme {
        Scheme::SamplingRescaled => {
            let m = pf / (1.0 - theta);
            let rhs = consts.c * m * (consts.c_prime * m).ln();
            TheoremBounds {
                theorem: "rescaled_sampling",
                wc: 1.0 + 12.0 * pf / rf,
                pe: 44.0 * nf / rf,
                re: 1.0 + 44.0 * pf / rf,
                literal_labels: None,
                success_prob: 0.7,
                precondition_rhs: rhs,
                precondition_met: rf >= rhs,
            }
        }
        Scheme::SamplingNorescale => {
            let h = heavy.ok_or_else(|| {
                Error::InvalidArgument("sampling_norescale bounds need k, c and C".into())
            })?;
            let kf = h.k as f64;
            let ratio2 = (h.big_c / h.c).powi(2);
            let lead = 44.0 * h.big_c.powi(4) / (h.c * h.c);
            let rhs = consts.c1 * pf * (consts.c2 * pf).ln();
            TheoremBounds {
                theorem: "norescale_sampling",
                wc: 1.0 + 44.0 * ratio2 * pf / rf,
                pe: lead * kf / rf,
                re: 1.0 + lead * pf * kf / (nf * rf),
                literal_labels: None,
                success_prob: 0.6,
                precondition_rhs: rhs,
                precondition_met: rf >= rhs,
            }
        }
        Scheme::SubgaussianGaussian | Scheme::SubgaussianRademacher => {
            let rhs = consts.c_prime * nf.ln();
            TheoremBounds {
                theorem: "subgaussian",
                wc: 1.0 + 11.0 * pf / rf,
                pe: 44.0 * (1.0 + nf / rf),
                re: 1.0 + 44.0 * pf / rf,
                literal_labels: None,
                success_prob: 0.7,
                precondition_rhs: rhs,
                precondition_met: rf >= rhs,
            }
        }
        Scheme::Hadamard => {
            let l = 40.0 * (nf * pf).ln();
            let rhs = consts.c * pf * nf.ln() * (pf.ln() + nf.ln().ln());
            let big = l * (1.0 + nf / rf);
            let small = 1.0 + l * (1.0 + pf / rf);
            TheoremBounds {
                theorem: "hadamard",
                wc: 1.0 + l * pf / rf,
                pe: big,
                re: small,
                literal_labels: Some((small, big)),
                success_prob: 0.8,
                precondition_rhs: rhs,
                precondition_met: rf >= rhs,
            }
        }
        Scheme::Identity => TheoremBounds {
            theorem: "identity",
            wc: 1.0 + IDENTITY_SLACK,
            pe: 1.0 + IDENTITY_SLACK,
            re: 1.0 + IDENTITY_SLACK,
            literal_labels: None,
            success_prob: 1.0,
            precondition_rhs: nf,
            precondition_met: r == n,
        },
    };
    Ok(b)
}
