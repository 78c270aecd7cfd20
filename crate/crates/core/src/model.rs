//! Datasets, the linear model `Y = Xβ + ε`, the full and sketched
//! least-squares estimators, and the rank-nullity split used by the
//! worst-case setting.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::linalg::{ensure_finite, pseudo_inverse, thin_svd, DenseMatrix, RankTolerance, ThinSvd};
use crate::sketch::SketchOperator;

const BINARY_MAGIC: &[u8; 4] = b"SKLS";
const BINARY_VERSION: u32 = 1;

/// A design matrix with full column rank and its response.
#[derive(Debug, Clone)]
pub struct Dataset {
    x: DenseMatrix,
    y: DVector<f64>,
    svd: ThinSvd,
}

impl Dataset {
    /// Validates shapes, finiteness and `rank(X) = p`.
    pub fn new(x: DenseMatrix, y: DVector<f64>) -> Result<Self> {
        let (n, p) = x.shape();
        if p == 0 || n <= p {
            return Err(shape_err("n > p >= 1", format!("{n}x{p}")));
        }
        if y.len() != n {
            return Err(shape_err(
                format!("response of length {n}"),
                y.len().to_string(),
            ));
        }
        ensure_finite(&x)?;
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        let svd = thin_svd(&x)?;
        let rank = svd.rank(RankTolerance::default());
        if rank < p {
            return Err(Error::RankDeficient { rank, expected: p });
        }
        Ok(Self { x, y, svd })
    }

    /// Same design, new response; the cached SVD is reused.
    pub fn with_response(&self, y: DVector<f64>) -> Result<Self> {
        if y.len() != self.n() {
            return Err(shape_err(
                format!("response of length {}", self.n()),
                y.len().to_string(),
            ));
        }
        Ok(Self {
            x: self.x.clone(),
            y,
            svd: self.svd.clone(),
        })
    }

    pub fn x(&self) -> &DenseMatrix {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn svd(&self) -> &ThinSvd {
        &self.svd
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    /// CSV with header `x1,…,xp,y`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header: Vec<String> = (1..=self.p()).map(|j| format!("x{j}")).collect();
        header.push("y".into());
        wtr.write_record(&header).map_err(csv_err)?;
        for i in 0..self.n() {
            let mut rec: Vec<String> = self
                .x
                .row(i)
                .iter()
                .map(|&v| crate::fmt::float(v))
                .collect();
            rec.push(crate::fmt::float(self.y[i]));
            wtr.write_record(&rec).map_err(csv_err)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let headers = rdr.headers().map_err(csv_err)?.clone();
        let cols = headers.len();
        if cols < 2 || headers.get(cols - 1).map(str::trim) != Some("y") {
            return Err(Error::Parse(
                "dataset CSV header must be x1,...,xp,y".into(),
            ));
        }
        let p = cols - 1;
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(csv_err)?;
            if rec.len() != cols {
                return Err(Error::Parse(format!(
                    "row {} has {} fields, expected {cols}",
                    line + 1,
                    rec.len()
                )));
            }
            for (j, field) in rec.iter().enumerate() {
                let v = crate::fmt::parse_float(field).ok_or_else(|| {
                    Error::Parse(format!("row {}: bad number `{field}`", line + 1))
                })?;
                if j < p {
                    xs.push(v);
                } else {
                    ys.push(v);
                }
            }
        }
        let n = ys.len();
        Self::new(DMatrix::from_row_slice(n, p, &xs), DVector::from_vec(ys))
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }

    /// Binary layout, little endian: `b"SKLS"`, `u32` version, `u64` n,
    /// `u64` p, X row-major as `f64`, then Y.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(BINARY_MAGIC)?;
        w.write_all(&BINARY_VERSION.to_le_bytes())?;
        w.write_all(&(self.n() as u64).to_le_bytes())?;
        w.write_all(&(self.p() as u64).to_le_bytes())?;
        for i in 0..self.n() {
            for &v in self.x.row(i).iter() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        for &v in self.y.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != BINARY_MAGIC {
            return Err(Error::Parse("not a binary dataset".into()));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        let version = u32::from_le_bytes(b4);
        if version != BINARY_VERSION {
            return Err(Error::Parse(format!(
                "unsupported binary version {version}"
            )));
        }
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8)?;
        let n = u64::from_le_bytes(b8) as usize;
        r.read_exact(&mut b8)?;
        let p = u64::from_le_bytes(b8) as usize;
        let mut read_f64s = |count: usize| -> Result<Vec<f64>> {
            let mut out = Vec::with_capacity(count);
            for _ in 0..count {
                r.read_exact(&mut b8)?;
                out.push(f64::from_le_bytes(b8));
            }
            Ok(out)
        };
        let xs = read_f64s(
            n.checked_mul(p)
                .ok_or_else(|| Error::Parse("size overflow".into()))?,
        )?;
        let ys = read_f64s(n)?;
        Self::new(DMatrix::from_row_slice(n, p, &xs), DVector::from_vec(ys))
    }

    /// Reads CSV or the binary form, sniffing the magic bytes.
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        if bytes.starts_with(BINARY_MAGIC) {
            Self::read_binary(bytes.as_slice())
        } else {
            Self::read_csv(bytes.as_slice())
        }
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Parse(e.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    /// i.i.d. standard normal.
    #[default]
    Gaussian,
}

/// True parameter and noise law of `Y = Xβ + ε`.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthModel {
    pub beta: DVector<f64>,
    pub noise: NoiseKind,
}

impl TruthModel {
    pub fn new(beta: DVector<f64>) -> Result<Self> {
        if beta.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self {
            beta,
            noise: NoiseKind::Gaussian,
        })
    }
}

/// `β = (1, …, 1)/√p`.
pub fn default_beta(p: usize) -> DVector<f64> {
    DVector::from_element(p, 1.0 / (p as f64).sqrt())
}

/// Source of standard normal draws for the noise vector.
pub trait NoiseSource {
    fn standard_normal(&mut self) -> f64;
}

impl<R: Rng + ?Sized> NoiseSource for R {
    fn standard_normal(&mut self) -> f64 {
        self.sample(StandardNormal)
    }
}

/// `Y = Xβ + ε` with ε drawn from `noise`.
pub fn simulate_response<N: NoiseSource + ?Sized>(
    x: &DenseMatrix,
    truth: &TruthModel,
    noise: &mut N,
) -> Result<DVector<f64>> {
    if truth.beta.len() != x.ncols() {
        return Err(shape_err(
            format!("beta of length {}", x.ncols()),
            truth.beta.len().to_string(),
        ));
    }
    let mut y = x * &truth.beta;
    match truth.noise {
        NoiseKind::Gaussian => y.iter_mut().for_each(|v| *v += noise.standard_normal()),
    }
    Ok(y)
}

/// `β_OLS = X†Y`, evaluated as `V Σ⁻¹ Uᵀ Y` from the cached SVD.
pub fn ols_solve(d: &Dataset) -> DVector<f64> {
    let svd = d.svd();
    let uty = svd.u.transpose() * d.y();
    let scaled = uty.component_div(&svd.sigma);
    &svd.v * scaled
}

#[derive(Debug, Clone, PartialEq)]
pub struct SketchedSolution {
    pub beta: DVector<f64>,
    pub rank_sx: usize,
    /// `rank(SX) = p`.
    pub rank_ok: bool,
}

/// `β_S = (SX)†(SY)`; the minimum-norm solution when `rank(SX) < p`.
pub fn sketched_solve(s: &SketchOperator, d: &Dataset) -> Result<SketchedSolution> {
    let sx = s.apply(d.x())?;
    let sy = s.apply_vec(d.y())?;
    let tol = RankTolerance::default();
    let pinv = pseudo_inverse(&sx, tol)?;
    let rank_sx = sketched_rank(&sx, tol)?;
    Ok(SketchedSolution {
        beta: pinv * sy,
        rank_sx,
        rank_ok: rank_sx == d.p(),
    })
}

pub(crate) fn sketched_rank(sx: &DenseMatrix, tol: RankTolerance) -> Result<usize> {
    let sigma = crate::linalg::singular_values(sx)?;
    Ok(crate::linalg::numerical_rank(&sigma, tol))
}

/// The unique split `Y = Xβ + ε` with `Xᵀε = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct RankNullitySplit {
    pub beta: DVector<f64>,
    pub eps: DVector<f64>,
}

pub fn rank_nullity_decompose(d: &Dataset) -> RankNullitySplit {
    let beta = ols_solve(d);
    let eps = d.y() - d.x() * &beta;
    RankNullitySplit { beta, eps }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{normal_matrix, normal_vector, seeded};
    use crate::sketch::{build_subgaussian_sketch, SubGaussianVariant};

    struct ZeroNoise;

    impl NoiseSource for ZeroNoise {
        fn standard_normal(&mut self) -> f64 {
            0.0
        }
    }

    fn random_dataset(n: usize, p: usize, seed: u64) -> Dataset {
        let mut rng = seeded(seed);
        let x = normal_matrix(n, p, &mut rng);
        let y = normal_vector(n, &mut rng);
        Dataset::new(x, y).unwrap()
    }

    #[test]
    fn mean_of_two_points() {
        let d = Dataset::new(
            DMatrix::from_element(2, 1, 1.0),
            DVector::from_vec(vec![1.0, 3.0]),
        )
        .unwrap();
        assert!((ols_solve(&d)[0] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn consistent_system() {
        let d = random_dataset(10, 3, 1);
        let b = DVector::from_vec(vec![0.5, -1.0, 2.0]);
        let d = d.with_response(d.x() * &b).unwrap();
        let beta = ols_solve(&d);
        assert!((beta - &b).norm() < 1e-12);
        let split = rank_nullity_decompose(&d);
        assert!(split.eps.norm() < 1e-12);
    }

    #[test]
    fn ols_matches_normal_equations() {
        let d = random_dataset(20, 3, 2);
        let xtx = d.x().transpose() * d.x();
        let oracle = xtx.try_inverse().unwrap() * d.x().transpose() * d.y();
        assert!((ols_solve(&d) - oracle).abs().max() <= 1e-9);
        let resid = d.y() - d.x() * ols_solve(&d);
        assert!((d.x().transpose() * resid).norm() <= 1e-9 * d.svd().sigma[0] * d.y().norm());
    }

    #[test]
    fn dataset_validation() {
        assert!(Dataset::new(DMatrix::zeros(2, 2), DVector::zeros(2)).is_err());
        assert!(Dataset::new(DMatrix::identity(3, 2), DVector::zeros(2)).is_err());
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0]);
        assert!(matches!(
            Dataset::new(x, DVector::zeros(3)),
            Err(Error::RankDeficient { .. })
        ));
    }

    #[test]
    fn identity_sketch_reproduces_ols() {
        let d = random_dataset(15, 3, 3);
        let sol = sketched_solve(&SketchOperator::identity(15), &d).unwrap();
        let ols = ols_solve(&d);
        assert!(sol.rank_ok);
        assert!((sol.beta - &ols).norm() <= 1e-12 * ols.norm());
    }

    #[test]
    fn short_sketch_is_rank_deficient() {
        let d = random_dataset(12, 3, 4);
        let s = build_subgaussian_sketch(2, 12, SubGaussianVariant::Gaussian, &mut seeded(5));
        let sol = sketched_solve(&s, &d).unwrap();
        assert!(!sol.rank_ok);
        assert_eq!(sol.rank_sx, 2);
        assert!(sol.beta.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn gaussian_sketch_matches_sketched_normal_equations() {
        let d = random_dataset(20, 2, 6);
        let s = build_subgaussian_sketch(6, 20, SubGaussianVariant::Gaussian, &mut seeded(7));
        let sx = s.apply(d.x()).unwrap();
        let sy = s.apply_vec(d.y()).unwrap();
        let oracle = (sx.transpose() * &sx).try_inverse().unwrap() * sx.transpose() * sy;
        let sol = sketched_solve(&s, &d).unwrap();
        assert!((sol.beta - oracle).abs().max() <= 1e-9);
    }

    #[test]
    fn zero_noise_gives_signal() {
        let x = normal_matrix(6, 2, &mut seeded(8));
        let truth = TruthModel::new(DVector::from_vec(vec![1.0, -2.0])).unwrap();
        let y = simulate_response(&x, &truth, &mut ZeroNoise).unwrap();
        assert_eq!(y, &x * &truth.beta);
    }

    #[test]
    fn zero_signal_has_zero_mean() {
        let x = normal_matrix(3, 1, &mut seeded(9));
        let truth = TruthModel::new(DVector::zeros(1)).unwrap();
        let mut rng = seeded(10);
        let draws = 10_000;
        let mut sum = DVector::zeros(3);
        for _ in 0..draws {
            sum += simulate_response(&x, &truth, &mut rng).unwrap();
        }
        sum /= draws as f64;
        assert!(sum.iter().all(|m| m.abs() <= 3.0 / (draws as f64).sqrt()));
    }

    #[test]
    fn noise_covariance_is_identity() {
        let n = 8;
        let x = DMatrix::identity(n, 1);
        let truth = TruthModel::new(DVector::zeros(1)).unwrap();
        let mut rng = seeded(11);
        let draws = 5000;
        let mut cov = DMatrix::zeros(n, n);
        for _ in 0..draws {
            let e = simulate_response(&x, &truth, &mut rng).unwrap();
            cov += &e * e.transpose();
        }
        cov /= draws as f64;
        assert!((cov - DMatrix::identity(n, n)).abs().max() <= 0.1);
    }

    #[test]
    fn rank_nullity_cases() {
        let x = DMatrix::identity(4, 2);
        let y = DVector::from_vec(vec![0.0, 0.0, 1.0, -2.0]);
        let d = Dataset::new(x, y.clone()).unwrap();
        let split = rank_nullity_decompose(&d);
        assert!(split.beta.norm() < 1e-15);
        assert!((split.eps - y).norm() < 1e-15);

        let d = random_dataset(12, 3, 12);
        let split = rank_nullity_decompose(&d);
        assert!((d.x().transpose() * &split.eps).norm() <= 1e-9);
        assert!((d.x() * &split.beta + &split.eps - d.y()).abs().max() <= 1e-12);
    }

    #[test]
    fn csv_and_binary_round_trip() {
        let d = random_dataset(7, 2, 13);
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("x1,x2,y\n"));
        let back = Dataset::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.x(), d.x());
        assert_eq!(back.y(), d.y());

        let mut bin = Vec::new();
        d.write_binary(&mut bin).unwrap();
        assert_eq!(bin.len(), 4 + 4 + 16 + 8 * (7 * 2 + 7));
        let back = Dataset::read_binary(bin.as_slice()).unwrap();
        assert_eq!(back.x(), d.x());
        assert!(Dataset::read_binary(&b"NOPE"[..]).is_err());
        assert!(Dataset::read_csv(&b"a,b\n1,2\n"[..]).is_err());
    }
}
