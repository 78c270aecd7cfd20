//! Statistical leverage scores: exact (from the thin SVD), approximate (two
//! random sketches), the leverage/arbitrary mixture used for sampling, and
//! the k-heavy-hitter classifier.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{numerical_rank, thin_svd, DenseMatrix, RankTolerance};
use crate::rng::normal_matrix;
use crate::sketch::{build_hadamard_sketch, check_probs};

/// Dense `n × n` guard for [`cross_leverage`].
pub const CROSS_LEVERAGE_MAX_N: usize = 2048;

const APPROX_RETRIES: usize = 3;

/// Slack allowed on the heavy band and tail-mass comparisons.
const HEAVY_REL_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Exactness {
    Exact,
    /// `theta_bound` is the observed `max |ℓ_i − ℓ̃_i|`, when known.
    Approximate {
        theta_bound: Option<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeverageProfile {
    pub scores: Vec<f64>,
    /// Column count of the design the scores came from.
    pub p: usize,
    pub exactness: Exactness,
}

impl LeverageProfile {
    /// Exact profile of any design with perfectly uniform leverage.
    pub fn uniform(n: usize, p: usize) -> Self {
        Self {
            scores: vec![p as f64 / n as f64; n],
            p,
            exactness: Exactness::Exact,
        }
    }

    pub fn n(&self) -> usize {
        self.scores.len()
    }

    pub fn sum(&self) -> f64 {
        self.scores.iter().sum()
    }

    /// Records the largest deviation from `exact` on an approximate profile.
    pub fn attach_error(&mut self, exact: &LeverageProfile) -> Result<f64> {
        if exact.scores.len() != self.scores.len() {
            return Err(crate::error::shape_err(
                format!("{} scores", self.scores.len()),
                exact.scores.len().to_string(),
            ));
        }
        let err = self
            .scores
            .iter()
            .zip(&exact.scores)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if let Exactness::Approximate { theta_bound } = &mut self.exactness {
            *theta_bound = Some(err);
        }
        Ok(err)
    }

    /// CSV with header `index,score`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("index,score\n");
        for (i, s) in self.scores.iter().enumerate() {
            out.push_str(&format!("{i},{}\n", crate::fmt::float(*s)));
        }
        out
    }
}

fn row_norms_sq(a: &DenseMatrix) -> Vec<f64> {
    (0..a.nrows()).map(|i| a.row(i).norm_squared()).collect()
}

/// Diagonal of the hat matrix: squared row norms of `U` from the thin SVD.
pub fn exact_leverage(x: &DenseMatrix) -> Result<LeverageProfile> {
    let svd = thin_svd(x)?;
    let rank = svd.rank(RankTolerance::default());
    if rank < x.ncols() {
        return Err(Error::RankDeficient {
            rank,
            expected: x.ncols(),
        });
    }
    Ok(LeverageProfile {
        scores: row_norms_sq(&svd.u),
        p: x.ncols(),
        exactness: Exactness::Exact,
    })
}

/// The projector `L = UUᵀ`.
pub fn cross_leverage(x: &DenseMatrix) -> Result<DenseMatrix> {
    if x.nrows() > CROSS_LEVERAGE_MAX_N {
        return Err(Error::SizeGuard {
            requested: x.nrows() * x.nrows(),
            limit: CROSS_LEVERAGE_MAX_N * CROSS_LEVERAGE_MAX_N,
        });
    }
    let svd = thin_svd(x)?;
    let rank = svd.rank(RankTolerance::default());
    if rank < x.ncols() {
        return Err(Error::RankDeficient {
            rank,
            expected: x.ncols(),
        });
    }
    Ok(&svd.u * svd.u.transpose())
}

/// Sketch sizes `(r1, r2) = (4·p·⌈ln n⌉, ⌈8 ln n⌉)`.
pub fn default_sketch_sizes(n: usize, p: usize) -> (usize, usize) {
    let ln = (n.max(2) as f64).ln();
    (4 * p * ln.ceil() as usize, (8.0 * ln).ceil() as usize)
}

/// Approximate leverage scores `‖x_iᵀ R⁻¹ G‖²`.
///
/// `R` is the triangular factor of a QR of `S₁X` with `S₁` a Hadamard
/// sketch of `r1` rows (`X` is zero-padded to a power of two first), and
/// `G` is `p × r2` Gaussian scaled by `1/sqrt(r2)`.
pub fn approx_leverage<R: Rng + ?Sized>(
    x: &DenseMatrix,
    r1: usize,
    r2: usize,
    rng: &mut R,
) -> Result<LeverageProfile> {
    let (n, p) = x.shape();
    if r1 < p || r2 == 0 {
        return Err(Error::InvalidArgument(format!(
            "need r1 >= p = {p} and r2 >= 1, got r1 = {r1}, r2 = {r2}"
        )));
    }
    let padded_n = n.next_power_of_two();
    let padded = if padded_n == n {
        x.clone()
    } else {
        let mut m = DMatrix::zeros(padded_n, p);
        m.rows_mut(0, n).copy_from(x);
        m
    };

    let mut triangular = None;
    for _ in 0..=APPROX_RETRIES {
        let s1 = build_hadamard_sketch(r1, padded_n, rng)?;
        let sx = s1.apply(&padded)?;
        let r = sx.qr().r();
        let diag: Vec<f64> = {
            let mut d: Vec<f64> = r.diagonal().iter().map(|v| v.abs()).collect();
            d.sort_by(|a, b| b.total_cmp(a));
            d
        };
        if numerical_rank(&diag, RankTolerance::default()) == p {
            triangular = Some(r);
            break;
        }
    }
    let r = triangular.ok_or(Error::RankDeficient {
        rank: 0,
        expected: p,
    })?;

    let g = normal_matrix(p, r2, rng) / (r2 as f64).sqrt();
    let z = r.solve_upper_triangular(&g).ok_or(Error::RankDeficient {
        rank: 0,
        expected: p,
    })?;
    let omega = x * z;
    Ok(LeverageProfile {
        scores: row_norms_sq(&omega),
        p,
        exactness: Exactness::Approximate { theta_bound: None },
    })
}

/// Mixture `p_i = (1 − θ) ℓ_i / p + θ q_i`, renormalized to sum to one.
///
/// For exact profiles `Σℓ = p` and the renormalization only absorbs
/// rounding; for approximate profiles it restores unit mass.
pub fn mixture_probs(lev: &LeverageProfile, p: usize, theta: f64, q: &[f64]) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&theta) {
        return Err(Error::InvalidArgument(format!(
            "theta must lie in [0, 1), got {theta}"
        )));
    }
    if p == 0 {
        return Err(Error::InvalidArgument("p must be >= 1".into()));
    }
    if q.len() != lev.scores.len() {
        return Err(Error::InvalidProbabilities(format!(
            "q has length {}, expected {}",
            q.len(),
            lev.scores.len()
        )));
    }
    check_probs(q)?;
    if lev.scores.iter().any(|&l| !(l >= 0.0 && l.is_finite())) {
        return Err(Error::InvalidArgument(
            "leverage scores must be non-negative".into(),
        ));
    }
    let mut probs: Vec<f64> = lev
        .scores
        .iter()
        .zip(q)
        .map(|(&l, &qi)| (1.0 - theta) * l / p as f64 + theta * qi)
        .collect();
    let total: f64 = probs.iter().sum();
    if total <= 0.0 {
        return Err(Error::InvalidProbabilities("mixture has zero mass".into()));
    }
    probs.iter_mut().for_each(|v| *v /= total);
    Ok(probs)
}

/// Outcome of the k-heavy-hitter test, with the quantities it compared.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HeavyHitterReport {
    pub is_heavy: bool,
    /// `c·p/k`
    pub band_lo: f64,
    /// `C·p/k`
    pub band_hi: f64,
    pub top_min: f64,
    pub top_max: f64,
    /// Mass of the `n − k` smallest scores.
    pub tail_sum: f64,
}

/// k-heavy-hitter test on the descending-sorted scores: the `k` largest lie
/// in `[c·p/k, C·p/k]` and the remaining `n − k` sum to at most 3/4.
pub fn is_k_heavy(
    lev: &LeverageProfile,
    k: usize,
    c: f64,
    big_c: f64,
) -> Result<HeavyHitterReport> {
    let n = lev.n();
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!(
            "k must lie in 1..={n}, got {k}"
        )));
    }
    if !(c > 0.0 && c <= big_c) {
        return Err(Error::InvalidArgument(format!(
            "need 0 < c <= C, got c = {c}, C = {big_c}"
        )));
    }
    let mut sorted = lev.scores.clone();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let p = lev.p as f64;
    let band_lo = c * p / k as f64;
    let band_hi = big_c * p / k as f64;
    let top_max = sorted[0];
    let top_min = sorted[k - 1];
    let tail_sum: f64 = sorted[k..].iter().sum();
    let in_band = top_min >= band_lo * (1.0 - HEAVY_REL_SLACK)
        && top_max <= band_hi * (1.0 + HEAVY_REL_SLACK);
    let light_tail = tail_sum <= 0.75 + HEAVY_REL_SLACK;
    Ok(HeavyHitterReport {
        is_heavy: in_band && light_tail,
        band_lo,
        band_hi,
        top_min,
        top_max,
        tail_sum,
    })
}
