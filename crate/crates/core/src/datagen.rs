//! Synthetic designs with controlled leverage.
//!
//! Exact leverage profiles are realized by a Schur–Horn style construction:
//! start from `p` coordinate rows (scores 1,…,1,0,…,0) and apply plane
//! rotations between pairs of mutually orthogonal rows, each rotation fixing
//! one row's squared norm to its target. Left rotations preserve `UᵀU = I`.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::leverage::exact_leverage;
use crate::linalg::{thin_svd, DenseMatrix, RankTolerance};
use crate::rng::{normal_matrix, normal_vector};

const GAUSSIAN_DESIGN_RETRIES: usize = 10;
const TARGET_SUM_TOL: f64 = 1e-10;
const ROW_NORM_TOL: f64 = 1e-8;
const ORTHO_TOL: f64 = 1e-10;
const TINY: f64 = 1e-14;

/// Leverage profile with `k` equal heavy scores and a flat tail.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LeverageTarget {
    pub targets: Vec<f64>,
    pub k: usize,
    pub tail_mass: f64,
}

impl LeverageTarget {
    pub fn p(&self) -> usize {
        self.targets.iter().sum::<f64>().round() as usize
    }

    /// `c = C = 1 − tail_mass / p`, the band constants the profile realizes.
    pub fn band_constant(&self) -> f64 {
        1.0 - self.tail_mass / self.p() as f64
    }
}

/// Heavy entries `(p − tail_mass)/k`, tail entries `tail_mass/(n − k)`.
pub fn kheavy_targets(n: usize, p: usize, k: usize, tail_mass: f64) -> Result<LeverageTarget> {
    if p == 0 || k == 0 || n <= k {
        return Err(Error::InvalidArgument(format!(
            "need p >= 1 and n > k >= 1, got n={n} p={p} k={k}"
        )));
    }
    if !(0.0..=0.75).contains(&tail_mass) || tail_mass >= p as f64 {
        return Err(Error::InvalidArgument(format!(
            "tail mass must lie in [0, 3/4], got {tail_mass}"
        )));
    }
    let heavy = (p as f64 - tail_mass) / k as f64;
    if heavy > 1.0 {
        return Err(Error::Infeasible(format!(
            "heavy score {heavy} exceeds 1; need k >= p - tail_mass"
        )));
    }
    let tail = tail_mass / (n - k) as f64;
    let mut targets = vec![heavy; k];
    targets.extend(std::iter::repeat_n(tail, n - k));
    Ok(LeverageTarget {
        targets,
        k,
        tail_mass,
    })
}

fn check_targets(targets: &[f64]) -> Result<usize> {
    let n = targets.len();
    if targets
        .iter()
        .any(|&t| !(t.is_finite() && (-TINY..=1.0 + TINY).contains(&t)))
    {
        return Err(Error::Infeasible("targets must lie in [0, 1]".into()));
    }
    let sum: f64 = targets.iter().sum();
    let p = sum.round();
    if p < 1.0 || (sum - p).abs() > TARGET_SUM_TOL * p.max(1.0) {
        return Err(Error::Infeasible(format!(
            "targets must sum to a positive integer, got {sum}"
        )));
    }
    let p = p as usize;
    if p > n {
        return Err(Error::Infeasible(format!("p = {p} exceeds n = {n}")));
    }
    Ok(p)
}

/// `n × p` matrix with orthonormal columns whose squared row norms equal
/// `targets`. Fails if the targets are not majorized by `(1^p, 0^{n−p})`.
///
/// Targets are processed in descending order (random tie-breaks). The
/// active rows are untouched unit rows, untouched zero rows, and at most one
/// partially consumed "carry" row, all mutually orthogonal. Each step rotates
/// the adjacent pair bracketing the next target; the fixed row retires and
/// the other becomes the new carry.
pub fn schur_horn_orthonormal<R: Rng + ?Sized>(
    targets: &[f64],
    rng: &mut R,
) -> Result<DenseMatrix> {
    let p = check_targets(targets)?;
    let n = targets.len();

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.sort_by(|&a, &b| targets[b].total_cmp(&targets[a]));

    let mut ones: Vec<DVector<f64>> = (0..p)
        .map(|j| {
            let mut e = DVector::zeros(p);
            e[j] = 1.0;
            e
        })
        .collect();
    ones.shuffle(rng);
    let mut zeros_left = n - p;
    let mut carry: Option<(DVector<f64>, f64)> = None;
    let mut out = DMatrix::zeros(n, p);

    for (pos, &row) in order.iter().enumerate() {
        let d = targets[row].clamp(0.0, 1.0);
        let last = pos + 1 == n;
        let fixed = if last {
            // Only one active row remains; its norm is forced by the sum.
            carry_or_remaining(&mut carry, &mut ones, &mut zeros_left, p)
        } else {
            match carry.take() {
                None if d >= 1.0 - TINY && !ones.is_empty() => ones.pop().expect("non-empty"),
                None if d <= TINY && zeros_left > 0 => {
                    zeros_left -= 1;
                    DVector::zeros(p)
                }
                None => {
                    let one = ones
                        .pop()
                        .ok_or_else(|| Error::Infeasible("targets not majorized".into()))?;
                    if zeros_left == 0 {
                        return Err(Error::Infeasible("targets not majorized".into()));
                    }
                    zeros_left -= 1;
                    let (f, c) = rotate(&one, 1.0, &DVector::zeros(p), 0.0, d, rng);
                    carry = Some(c);
                    f
                }
                Some((cv, cn)) if (d - cn).abs() <= TINY => cv,
                Some((cv, cn)) if d > cn => {
                    let one = ones
                        .pop()
                        .ok_or_else(|| Error::Infeasible("targets not majorized".into()))?;
                    let (f, c) = rotate(&one, 1.0, &cv, cn, d, rng);
                    carry = Some(c);
                    f
                }
                Some((cv, cn)) => {
                    if zeros_left == 0 {
                        cv
                    } else {
                        zeros_left -= 1;
                        let (f, c) = rotate(&cv, cn, &DVector::zeros(p), 0.0, d, rng);
                        carry = Some(c);
                        f
                    }
                }
            }
        };
        out.row_mut(row).copy_from(&fixed.transpose());
    }

    verify_orthonormal_profile(&out, targets)?;
    Ok(out)
}

fn carry_or_remaining(
    carry: &mut Option<(DVector<f64>, f64)>,
    ones: &mut Vec<DVector<f64>>,
    zeros_left: &mut usize,
    p: usize,
) -> DVector<f64> {
    if let Some((cv, _)) = carry.take() {
        cv
    } else if let Some(one) = ones.pop() {
        one
    } else {
        *zeros_left = zeros_left.saturating_sub(1);
        DVector::zeros(p)
    }
}

/// Rotates orthogonal rows `x`, `y` with squared norms `ax > ay` so the
/// first output has squared norm `d`; the second keeps `ax + ay − d`.
fn rotate<R: Rng + ?Sized>(
    x: &DVector<f64>,
    ax: f64,
    y: &DVector<f64>,
    ay: f64,
    d: f64,
    rng: &mut R,
) -> (DVector<f64>, (DVector<f64>, f64)) {
    let c2 = ((d - ay) / (ax - ay)).clamp(0.0, 1.0);
    let c = c2.sqrt();
    let mut s = (1.0 - c2).sqrt();
    if rng.random::<bool>() {
        s = -s;
    }
    let fixed = x * c + y * s;
    let rest = y * c - x * s;
    (fixed, (rest, ax + ay - d))
}

fn verify_orthonormal_profile(u: &DenseMatrix, targets: &[f64]) -> Result<()> {
    let p = u.ncols();
    let gram = u.transpose() * u;
    let ortho = (gram - DMatrix::identity(p, p)).abs().max();
    if ortho > ORTHO_TOL {
        return Err(Error::Infeasible(format!("orthonormality error {ortho:e}")));
    }
    let worst = (0..u.nrows())
        .map(|i| (u.row(i).norm_squared() - targets[i]).abs())
        .fold(0.0, f64::max);
    if worst > ROW_NORM_TOL {
        return Err(Error::Infeasible(format!("row-norm error {worst:e}")));
    }
    Ok(())
}

/// Haar-like random orthogonal matrix: QR of a Gaussian matrix with the
/// signs of `R`'s diagonal folded into `Q`.
pub fn random_orthogonal<R: Rng + ?Sized>(p: usize, rng: &mut R) -> DenseMatrix {
    let g = normal_matrix(p, p, rng);
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..p {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// `X = U diag(spectrum) Vᵀ` with a seeded random orthogonal `V`.
pub fn design_from_leverage<R: Rng + ?Sized>(
    u: &DenseMatrix,
    spectrum: &[f64],
    rng: &mut R,
) -> Result<DenseMatrix> {
    let v = random_orthogonal(u.ncols(), rng);
    design_with_basis(u, spectrum, &v)
}

/// `X = U diag(spectrum) Vᵀ` for a caller-provided `V`.
pub fn design_with_basis(
    u: &DenseMatrix,
    spectrum: &[f64],
    v: &DenseMatrix,
) -> Result<DenseMatrix> {
    let p = u.ncols();
    if spectrum.len() != p || v.shape() != (p, p) {
        return Err(crate::error::shape_err(
            format!("spectrum of length {p} and {p}x{p} V"),
            format!("{}", spectrum.len()),
        ));
    }
    if spectrum.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
        return Err(Error::InvalidArgument("spectrum must be positive".into()));
    }
    let sigma = DVector::from_column_slice(spectrum);
    Ok(u * DMatrix::from_diagonal(&sigma) * v.transpose())
}

/// i.i.d. standard normal design; redrawn if numerically rank deficient.
pub fn gaussian_design<R: Rng + ?Sized>(n: usize, p: usize, rng: &mut R) -> Result<DenseMatrix> {
    if p == 0 || n <= p {
        return Err(Error::InvalidArgument(format!(
            "need n > p >= 1, got n={n} p={p}"
        )));
    }
    let mut last_rank = 0;
    for _ in 0..GAUSSIAN_DESIGN_RETRIES {
        let x = normal_matrix(n, p, rng);
        last_rank = thin_svd(&x)?.rank(RankTolerance::default());
        if last_rank == p {
            return Ok(x);
        }
    }
    Err(Error::RankDeficient {
        rank: last_rank,
        expected: p,
    })
}

/// Exact k-heavy design: Schur–Horn `U` with the given spectrum and random `V`.
pub fn kheavy_design<R: Rng + ?Sized>(
    target: &LeverageTarget,
    spectrum: &[f64],
    rng: &mut R,
) -> Result<DenseMatrix> {
    let u = schur_horn_orthonormal(&target.targets, rng)?;
    let x = design_from_leverage(&u, spectrum, rng)?;
    let lev = exact_leverage(&x)?;
    let worst = lev
        .scores
        .iter()
        .zip(&target.targets)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    if worst > ROW_NORM_TOL {
        return Err(Error::Infeasible(format!(
            "design leverage drifted by {worst:e}"
        )));
    }
    Ok(x)
}

/// Approximate heavy-hitter design: Gaussian rows scaled by
/// `sqrt(target_i · n / p)`. Leverage only roughly follows the targets.
pub fn heuristic_kheavy_design<R: Rng + ?Sized>(
    target: &LeverageTarget,
    rng: &mut R,
) -> Result<DenseMatrix> {
    let n = target.targets.len();
    let p = target.p();
    let mut x = gaussian_design(n, p, rng)?;
    for (i, &t) in target.targets.iter().enumerate() {
        let scale = (t * n as f64 / p as f64).sqrt();
        x.row_mut(i).scale_mut(scale);
    }
    Ok(x)
}

/// Unit vector in the null space of `Uᵀ`: `(I − UUᵀ)z` normalized.
pub fn worst_case_noise<R: Rng + ?Sized>(u: &DenseMatrix, rng: &mut R) -> Result<DVector<f64>> {
    let (n, p) = u.shape();
    if n <= p {
        return Err(Error::InvalidArgument(format!(
            "need n > p, got n={n} p={p}"
        )));
    }
    for _ in 0..GAUSSIAN_DESIGN_RETRIES {
        let z = normal_vector(n, rng);
        let e = &z - u * (u.transpose() * &z);
        let norm = e.norm();
        if norm > 1e-8 * z.norm() {
            return Ok(e / norm);
        }
    }
    Err(Error::InvalidArgument(
        "could not draw a null-space direction".into(),
    ))
}

/// Pads to the next power of two with zero rows.
pub fn pad_rows_pow2(x: &DenseMatrix) -> DenseMatrix {
    let n = x.nrows();
    let m = n.next_power_of_two();
    if m == n {
        return x.clone();
    }
    let mut out = DMatrix::zeros(m, x.ncols());
    out.rows_mut(0, n).copy_from(x);
    out
}
