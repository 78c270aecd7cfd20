//! Dense kernels shared by every other module: thin SVD, pseudo-inverse,
//! numerical rank, norms and an unnormalized fast Walsh–Hadamard transform.
//!
//! Matrices are plain `nalgebra::DMatrix<f64>`. Singular value decompositions
//! go through faer (sequential, so results are reproducible bit for bit) with
//! a fixed sign convention on the singular vectors.

use nalgebra::{DMatrix, DVector};

use crate::error::{shape_err, Error, Result};

pub type DenseMatrix = DMatrix<f64>;
pub type DenseVector = DVector<f64>;

/// Relative threshold below which singular values count as zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankTolerance {
    rel_tol: f64,
}

impl RankTolerance {
    pub fn new(rel_tol: f64) -> Result<Self> {
        if !(rel_tol > 0.0 && rel_tol < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "rank tolerance must lie in (0, 1), got {rel_tol}"
            )));
        }
        Ok(Self { rel_tol })
    }

    pub fn rel_tol(&self) -> f64 {
        self.rel_tol
    }
}

impl Default for RankTolerance {
    fn default() -> Self {
        Self { rel_tol: 1e-10 }
    }
}

/// Thin SVD `A = U diag(sigma) Vᵀ` of a tall matrix.
#[derive(Debug, Clone)]
pub struct ThinSvd {
    /// n×p, orthonormal columns.
    pub u: DenseMatrix,
    /// Non-increasing, non-negative.
    pub sigma: DVector<f64>,
    /// p×p orthogonal.
    pub v: DenseMatrix,
}

impl ThinSvd {
    pub fn reconstruct(&self) -> DenseMatrix {
        &self.u * DMatrix::from_diagonal(&self.sigma) * self.v.transpose()
    }

    pub fn rank(&self, tol: RankTolerance) -> usize {
        numerical_rank(self.sigma.as_slice(), tol)
    }
}

pub(crate) fn ensure_finite(a: &DenseMatrix) -> Result<()> {
    if a.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite)
    }
}

/// Thin SVD `(U, σ, V)` of any shape, `σ` descending, `k = min(m, n)` columns.
fn raw_svd(a: &DenseMatrix) -> Result<(DenseMatrix, Vec<f64>, DenseMatrix)> {
    let f = faer::Mat::<f64>::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)]);
    let svd = f.thin_svd().map_err(|_| Error::SvdNotConverged)?;
    let (u, v) = (svd.U(), svd.V());
    let sigma: Vec<f64> = svd.S().column_vector().iter().copied().collect();
    if sigma.iter().any(|s| !s.is_finite()) {
        return Err(Error::SvdNotConverged);
    }
    let u = DenseMatrix::from_fn(u.nrows(), u.ncols(), |i, j| u[(i, j)]);
    let v = DenseMatrix::from_fn(v.nrows(), v.ncols(), |i, j| v[(i, j)]);
    Ok((u, sigma, v))
}

/// Singular values of any shape, descending.
pub fn singular_values(a: &DenseMatrix) -> Result<Vec<f64>> {
    ensure_finite(a)?;
    if a.is_empty() {
        return Ok(Vec::new());
    }
    let f = faer::Mat::<f64>::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)]);
    let sigma = f.singular_values().map_err(|_| Error::SvdNotConverged)?;
    if sigma.iter().any(|s| !s.is_finite()) {
        return Err(Error::SvdNotConverged);
    }
    Ok(sigma)
}

/// Thin SVD of a matrix with at least as many rows as columns.
///
/// Each column of `U` is signed so that its largest-magnitude entry is
/// positive (first occurrence wins on ties); the matching column of `V`
/// flips with it.
pub fn thin_svd(a: &DenseMatrix) -> Result<ThinSvd> {
    if a.nrows() < a.ncols() || a.ncols() == 0 {
        return Err(shape_err(
            "rows >= cols >= 1",
            format!("{}x{}", a.nrows(), a.ncols()),
        ));
    }
    ensure_finite(a)?;
    let (mut u, sigma, mut v) = raw_svd(a)?;
    let sigma = DVector::from_vec(sigma);
    for j in 0..u.ncols() {
        let mut best = 0.0f64;
        let mut sign = 1.0;
        for &x in u.column(j).iter() {
            if x.abs() > best {
                best = x.abs();
                sign = x.signum();
            }
        }
        if sign < 0.0 {
            u.column_mut(j).neg_mut();
            v.column_mut(j).neg_mut();
        }
    }
    Ok(ThinSvd { u, sigma, v })
}

/// Number of singular values strictly above `rel_tol · sigma[0]`.
pub fn numerical_rank(sigma: &[f64], tol: RankTolerance) -> usize {
    let Some(&top) = sigma.first() else {
        return 0;
    };
    if top <= 0.0 {
        return 0;
    }
    let cut = tol.rel_tol * top;
    sigma.iter().filter(|&&s| s > cut).count()
}

/// Moore–Penrose pseudo-inverse with relative singular-value cutoff.
pub fn pseudo_inverse(a: &DenseMatrix, tol: RankTolerance) -> Result<DenseMatrix> {
    ensure_finite(a)?;
    let (m, n) = a.shape();
    if m == 0 || n == 0 {
        return Ok(DenseMatrix::zeros(n, m));
    }
    let (u, sigma, v) = raw_svd(a)?;
    let top = sigma.first().copied().unwrap_or(0.0);
    let mut out = DenseMatrix::zeros(n, m);
    if top == 0.0 {
        return Ok(out);
    }
    let cut = tol.rel_tol * top;
    for (k, &s) in sigma.iter().enumerate() {
        if s > cut {
            // out += v_k u_kᵀ / s
            let vk = v.column(k);
            let uk = u.column(k);
            out.ger(1.0 / s, &vk, &uk, 1.0);
        }
    }
    Ok(out)
}

pub fn spectral_norm(a: &DenseMatrix) -> Result<f64> {
    Ok(singular_values(a)?.first().copied().unwrap_or(0.0))
}

pub fn frobenius_norm(a: &DenseMatrix) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Unnormalized in-place Walsh–Hadamard transform (Sylvester ordering).
pub fn fwht(v: &mut [f64]) -> Result<()> {
    let n = v.len();
    if !n.is_power_of_two() {
        return Err(Error::NotPowerOfTwo(n));
    }
    let mut h = 1;
    while h < n {
        for block in v.chunks_exact_mut(2 * h) {
            let (lo, hi) = block.split_at_mut(h);
            for (a, b) in lo.iter_mut().zip(hi.iter_mut()) {
                let (x, y) = (*a, *b);
                *a = x + y;
                *b = x - y;
            }
        }
        h *= 2;
    }
    Ok(())
}

/// Applies [`fwht`] to every column of `a` in place.
pub fn fwht_columns(a: &mut DenseMatrix) -> Result<()> {
    if !a.nrows().is_power_of_two() {
        return Err(Error::NotPowerOfTwo(a.nrows()));
    }
    for j in 0..a.ncols() {
        fwht(a.column_mut(j).as_mut_slice())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn random(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DenseMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut rng))
    }

    fn dense_hadamard(n: usize) -> DenseMatrix {
        if n == 1 {
            return DenseMatrix::from_element(1, 1, 1.0);
        }
        let h = dense_hadamard(n / 2);
        let m = n / 2;
        DenseMatrix::from_fn(n, n, |i, j| {
            let s = if i >= m && j >= m { -1.0 } else { 1.0 };
            s * h[(i % m, j % m)]
        })
    }

    #[test]
    fn svd_identity() {
        let s = thin_svd(&DenseMatrix::identity(3, 3)).unwrap();
        assert!((s.u.clone() - DenseMatrix::identity(3, 3)).abs().max() < 1e-14);
        assert!((s.v.clone() - DenseMatrix::identity(3, 3)).abs().max() < 1e-14);
        assert_eq!(s.sigma.as_slice(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn svd_diagonal() {
        let a = DenseMatrix::from_row_slice(3, 2, &[2.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let s = thin_svd(&a).unwrap();
        assert!((s.sigma[0] - 2.0).abs() < 1e-14);
        assert!((s.sigma[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn svd_random_reconstruction_and_orthogonality() {
        let a = random(8, 3, 7);
        let s = thin_svd(&a).unwrap();
        // direct multiplication oracle
        let mut rec = DenseMatrix::zeros(8, 3);
        for i in 0..8 {
            for j in 0..3 {
                for k in 0..3 {
                    rec[(i, j)] += s.u[(i, k)] * s.sigma[k] * s.v[(j, k)];
                }
            }
        }
        assert!((rec - &a).norm() <= 1e-10 * a.norm());
        let gram = s.u.transpose() * &s.u;
        assert!((gram - DenseMatrix::identity(3, 3)).abs().max() <= 1e-10);
        assert!(s.sigma[0] >= s.sigma[1] && s.sigma[1] >= s.sigma[2]);
        for j in 0..3 {
            let col = s.u.column(j);
            let big = col
                .iter()
                .cloned()
                .fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
            assert!(big > 0.0);
        }
    }

    #[test]
    fn svd_rejects_wide_and_nonfinite() {
        assert!(thin_svd(&DenseMatrix::zeros(2, 3)).is_err());
        let mut a = DenseMatrix::identity(3, 2);
        a[(0, 0)] = f64::NAN;
        assert!(matches!(thin_svd(&a), Err(Error::NonFinite)));
    }

    #[test]
    fn pinv_diagonal_and_orthonormal() {
        let tol = RankTolerance::default();
        let a = DenseMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.0]);
        let p = pseudo_inverse(&a, tol).unwrap();
        assert!(
            (p - DenseMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 0.0]))
                .abs()
                .max()
                < 1e-15
        );

        let q = thin_svd(&random(7, 3, 3)).unwrap().u;
        let p = pseudo_inverse(&q, tol).unwrap();
        assert!((p - q.transpose()).abs().max() < 1e-12);
    }

    #[test]
    fn pinv_zero_matrix() {
        let p = pseudo_inverse(&DenseMatrix::zeros(3, 2), RankTolerance::default()).unwrap();
        assert_eq!(p.shape(), (2, 3));
        assert!(p.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn pinv_rank_two() {
        let a = random(6, 2, 11) * random(2, 3, 12);
        let p = pseudo_inverse(&a, RankTolerance::default()).unwrap();
        assert!((&a * &p * &a - &a).abs().max() <= 1e-9);
        assert!((&p * &a * &p - &p).abs().max() <= 1e-9);
    }

    #[test]
    fn rank_counts() {
        let tol = RankTolerance::new(1e-10).unwrap();
        assert_eq!(numerical_rank(&[1.0, 1.0, 1.0], tol), 3);
        assert_eq!(numerical_rank(&[1.0, 1e-16], tol), 1);
        assert_eq!(numerical_rank(&[0.0, 0.0], tol), 0);
        assert_eq!(numerical_rank(&[], tol), 0);
        assert!(RankTolerance::new(0.0).is_err());
        assert!(RankTolerance::new(1.0).is_err());
    }

    #[test]
    fn fwht_small_cases() {
        let mut v = [1.0, 0.0];
        fwht(&mut v).unwrap();
        assert_eq!(v, [1.0, 1.0]);
        let mut v = [1.0; 4];
        fwht(&mut v).unwrap();
        assert_eq!(v, [4.0, 0.0, 0.0, 0.0]);
        assert!(matches!(fwht(&mut [1.0; 3]), Err(Error::NotPowerOfTwo(3))));
    }

    #[test]
    fn fwht_matches_dense() {
        let x = random(32, 1, 5);
        let expect = dense_hadamard(32) * &x;
        let mut v = x.as_slice().to_vec();
        fwht(&mut v).unwrap();
        for (a, b) in v.iter().zip(expect.iter()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn norms() {
        let a = DenseMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 1.0]);
        assert!((spectral_norm(&a).unwrap() - 3.0).abs() < 1e-14);
        assert!((frobenius_norm(&a) - 10f64.sqrt()).abs() < 1e-14);

        let u = DVector::from_vec(vec![0.6, 0.8]);
        let r1 = &u * u.transpose();
        assert!((spectral_norm(&r1).unwrap() - 1.0).abs() < 1e-14);
        assert!((frobenius_norm(&r1) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn norms_match_oracles() {
        let a = random(5, 5, 21);
        // power iteration on AᵀA
        let ata = a.transpose() * &a;
        let mut x = DVector::from_element(5, 1.0);
        for _ in 0..2000 {
            x = &ata * &x;
            x /= x.norm();
        }
        let power = (x.transpose() * &ata * &x)[(0, 0)].sqrt();
        let spec = spectral_norm(&a).unwrap();
        assert!((spec - power).abs() <= 1e-8 * spec);
        let direct: f64 = a.iter().map(|v| v * v).sum::<f64>().sqrt();
        let frob = frobenius_norm(&a);
        assert!((frob - direct).abs() <= 1e-12);
        assert!(spec <= frob);
    }
}
