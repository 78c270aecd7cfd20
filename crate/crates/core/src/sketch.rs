//! Sketch constructions and their structured application.
//!
//! Four families are supported: row sampling (with or without the
//! `1/sqrt(r p_j)` rescaling), dense sub-Gaussian projections (Gaussian or
//! Rademacher entries) and the subsampled randomized Hadamard transform.
//! Operators keep their structure, so applying a sampling sketch is a
//! weighted row gather and applying a Hadamard sketch is one FWHT per column.
//!
//! Normalization: every random family satisfies `E[SᵀS] = I_n`. For the
//! Hadamard sketch this means rows of the unnormalized transform scaled by
//! `1/sqrt(r)`.

use nalgebra::{DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::leverage::{mixture_probs, LeverageProfile};
use crate::linalg::{fwht_columns, DenseMatrix};
use crate::rng::seeded;

/// Largest dense materialization allowed, in entries.
pub const MATERIALIZE_LIMIT: usize = 100_000_000;

const PROB_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    SamplingRescaled,
    SamplingNorescale,
    SubgaussianGaussian,
    SubgaussianRademacher,
    Hadamard,
    /// `S = I_n`; a reference point for tests and sanity runs.
    Identity,
}

impl Scheme {
    pub fn as_str(&self) -> &'static str {
        match self {
            Scheme::SamplingRescaled => "sampling_rescaled",
            Scheme::SamplingNorescale => "sampling_norescale",
            Scheme::SubgaussianGaussian => "subgaussian_gaussian",
            Scheme::SubgaussianRademacher => "subgaussian_rademacher",
            Scheme::Hadamard => "hadamard",
            Scheme::Identity => "identity",
        }
    }

    pub fn is_sampling(&self) -> bool {
        matches!(self, Scheme::SamplingRescaled | Scheme::SamplingNorescale)
    }
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_owned()))
            .map_err(|_| Error::Parse(format!("unknown sketch scheme `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubGaussianVariant {
    Gaussian,
    Rademacher,
}

/// Declarative sketch configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SketchSpec {
    pub scheme: Scheme,
    #[serde(default)]
    pub r: usize,
    /// Weight on `q` in the sampling mixture; sampling schemes only.
    #[serde(default)]
    pub theta: f64,
    /// Mixing distribution for sampling schemes; uniform when absent.
    #[serde(default)]
    pub q: Option<Vec<f64>>,
    #[serde(default)]
    pub seed: u64,
}

impl SketchSpec {
    pub fn new(scheme: Scheme, r: usize, seed: u64) -> Self {
        Self {
            scheme,
            r,
            theta: 0.0,
            q: None,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.r == 0 {
            return Err(Error::InvalidArgument("sketch size r must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.theta) {
            return Err(Error::InvalidArgument(format!(
                "theta must lie in [0, 1), got {}",
                self.theta
            )));
        }
        if let Some(q) = &self.q {
            check_probs(q)?;
        }
        Ok(())
    }

    /// Realizes the operator for an `n`-row problem. Sampling schemes draw
    /// from the leverage mixture and therefore need `leverage`.
    pub fn build(&self, n: usize, leverage: Option<&LeverageProfile>) -> Result<SketchOperator> {
        self.validate()?;
        let mut rng = seeded(self.seed);
        match self.scheme {
            Scheme::SamplingRescaled | Scheme::SamplingNorescale => {
                let lev = leverage.ok_or_else(|| {
                    Error::InvalidArgument(format!("{} needs leverage scores", self.scheme))
                })?;
                if lev.scores.len() != n {
                    return Err(shape_err(
                        format!("{n} leverage scores"),
                        lev.scores.len().to_string(),
                    ));
                }
                let uniform;
                let q = match &self.q {
                    Some(q) => q.as_slice(),
                    None => {
                        uniform = vec![1.0 / n as f64; n];
                        uniform.as_slice()
                    }
                };
                let probs = mixture_probs(lev, lev.p, self.theta, q)?;
                build_sampling_sketch(
                    &probs,
                    self.r,
                    self.scheme == Scheme::SamplingRescaled,
                    &mut rng,
                )
            }
            Scheme::SubgaussianGaussian => Ok(build_subgaussian_sketch(
                self.r,
                n,
                SubGaussianVariant::Gaussian,
                &mut rng,
            )),
            Scheme::SubgaussianRademacher => Ok(build_subgaussian_sketch(
                self.r,
                n,
                SubGaussianVariant::Rademacher,
                &mut rng,
            )),
            Scheme::Hadamard => build_hadamard_sketch(self.r, n, &mut rng),
            Scheme::Identity => {
                if self.r != n {
                    return Err(Error::InvalidArgument(format!(
                        "identity sketch needs r = n = {n}, got r = {}",
                        self.r
                    )));
                }
                Ok(SketchOperator::identity(n))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SketchRepr {
    Dense(DenseMatrix),
    /// Row `j` of `S` is `weights[j] · e_{indices[j]}ᵀ`.
    Sampled {
        indices: Vec<usize>,
        weights: Vec<f64>,
    },
    /// Row `j` of `S` is `scale · h_{sampled_rows[j]}ᵀ · diag(sign_flips)`,
    /// with `h_i` the i-th row of the unnormalized Hadamard matrix.
    HadamardStructured {
        sign_flips: Vec<f64>,
        sampled_rows: Vec<usize>,
        scale: f64,
    },
}

/// A realized `r × n` sketching operator.
#[derive(Debug, Clone, PartialEq)]
pub struct SketchOperator {
    n: usize,
    r: usize,
    repr: SketchRepr,
}

impl SketchOperator {
    pub fn dense(s: DenseMatrix) -> Self {
        Self {
            n: s.ncols(),
            r: s.nrows(),
            repr: SketchRepr::Dense(s),
        }
    }

    pub fn sampled(n: usize, indices: Vec<usize>, weights: Vec<f64>) -> Result<Self> {
        if indices.len() != weights.len() || indices.is_empty() {
            return Err(shape_err(
                "matching non-empty indices/weights",
                format!("{}/{}", indices.len(), weights.len()),
            ));
        }
        if indices.iter().any(|&i| i >= n) {
            return Err(Error::InvalidArgument(format!(
                "sample index out of range 0..{n}"
            )));
        }
        if weights.iter().any(|&w| !(w > 0.0 && w.is_finite())) {
            return Err(Error::InvalidArgument(
                "sample weights must be positive".into(),
            ));
        }
        Ok(Self {
            n,
            r: indices.len(),
            repr: SketchRepr::Sampled { indices, weights },
        })
    }

    pub fn hadamard(sign_flips: Vec<f64>, sampled_rows: Vec<usize>, scale: f64) -> Result<Self> {
        let n = sign_flips.len();
        if !n.is_power_of_two() {
            return Err(Error::NotPowerOfTwo(n));
        }
        if sign_flips.iter().any(|&s| s != 1.0 && s != -1.0) {
            return Err(Error::InvalidArgument("sign flips must be +-1".into()));
        }
        if sampled_rows.is_empty() || sampled_rows.iter().any(|&i| i >= n) {
            return Err(Error::InvalidArgument("invalid Hadamard row sample".into()));
        }
        Ok(Self {
            n,
            r: sampled_rows.len(),
            repr: SketchRepr::HadamardStructured {
                sign_flips,
                sampled_rows,
                scale,
            },
        })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            n,
            r: n,
            repr: SketchRepr::Sampled {
                indices: (0..n).collect(),
                weights: vec![1.0; n],
            },
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn repr(&self) -> &SketchRepr {
        &self.repr
    }

    /// The operator `c·S`.
    pub fn scaled(&self, c: f64) -> Self {
        let repr = match &self.repr {
            SketchRepr::Dense(s) => SketchRepr::Dense(s * c),
            SketchRepr::Sampled { indices, weights } if c > 0.0 => SketchRepr::Sampled {
                indices: indices.clone(),
                weights: weights.iter().map(|w| w * c).collect(),
            },
            SketchRepr::Sampled { .. } => {
                return Self::dense(self.materialize().expect("sampled sketch within guard") * c)
            }
            SketchRepr::HadamardStructured {
                sign_flips,
                sampled_rows,
                scale,
            } => SketchRepr::HadamardStructured {
                sign_flips: sign_flips.clone(),
                sampled_rows: sampled_rows.clone(),
                scale: scale * c,
            },
        };
        Self {
            n: self.n,
            r: self.r,
            repr,
        }
    }

    /// `S·A` using the operator's structure.
    pub fn apply(&self, a: &DenseMatrix) -> Result<DenseMatrix> {
        if a.nrows() != self.n {
            return Err(shape_err(
                format!("{} rows", self.n),
                format!("{} rows", a.nrows()),
            ));
        }
        let m = a.ncols();
        Ok(match &self.repr {
            SketchRepr::Dense(s) => s * a,
            SketchRepr::Sampled { indices, weights } => {
                let mut out = DenseMatrix::zeros(self.r, m);
                for (j, (&i, &w)) in indices.iter().zip(weights).enumerate() {
                    for c in 0..m {
                        out[(j, c)] = w * a[(i, c)];
                    }
                }
                out
            }
            SketchRepr::HadamardStructured {
                sign_flips,
                sampled_rows,
                scale,
            } => {
                let mut b = a.clone();
                for (i, &s) in sign_flips.iter().enumerate() {
                    if s < 0.0 {
                        b.row_mut(i).neg_mut();
                    }
                }
                fwht_columns(&mut b)?;
                let mut out = DenseMatrix::zeros(self.r, m);
                for (j, &i) in sampled_rows.iter().enumerate() {
                    for c in 0..m {
                        out[(j, c)] = scale * b[(i, c)];
                    }
                }
                out
            }
        })
    }

    pub fn apply_vec(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        let a = DenseMatrix::from_column_slice(v.len(), 1, v.as_slice());
        Ok(DVector::from_column_slice(self.apply(&a)?.as_slice()))
    }

    /// `Sᵀ·B` for an `r × m` matrix `B`.
    pub fn apply_transpose(&self, b: &DenseMatrix) -> Result<DenseMatrix> {
        if b.nrows() != self.r {
            return Err(shape_err(
                format!("{} rows", self.r),
                format!("{} rows", b.nrows()),
            ));
        }
        let m = b.ncols();
        Ok(match &self.repr {
            SketchRepr::Dense(s) => s.transpose() * b,
            SketchRepr::Sampled { indices, weights } => {
                let mut out = DenseMatrix::zeros(self.n, m);
                for (j, (&i, &w)) in indices.iter().zip(weights).enumerate() {
                    for c in 0..m {
                        out[(i, c)] += w * b[(j, c)];
                    }
                }
                out
            }
            SketchRepr::HadamardStructured {
                sign_flips,
                sampled_rows,
                scale,
            } => {
                let mut out = DenseMatrix::zeros(self.n, m);
                for (j, &i) in sampled_rows.iter().enumerate() {
                    for c in 0..m {
                        out[(i, c)] += scale * b[(j, c)];
                    }
                }
                // Hadamard matrix is symmetric.
                fwht_columns(&mut out)?;
                for (i, &s) in sign_flips.iter().enumerate() {
                    if s < 0.0 {
                        out.row_mut(i).neg_mut();
                    }
                }
                out
            }
        })
    }

    /// Dense `r × n` matrix of the operator.
    pub fn materialize(&self) -> Result<DenseMatrix> {
        let requested = self.r.saturating_mul(self.n);
        if requested > MATERIALIZE_LIMIT {
            return Err(Error::SizeGuard {
                requested,
                limit: MATERIALIZE_LIMIT,
            });
        }
        match &self.repr {
            SketchRepr::Dense(s) => Ok(s.clone()),
            SketchRepr::Sampled { indices, weights } => {
                let mut out = DenseMatrix::zeros(self.r, self.n);
                for (j, (&i, &w)) in indices.iter().zip(weights).enumerate() {
                    out[(j, i)] = w;
                }
                Ok(out)
            }
            SketchRepr::HadamardStructured { .. } => Ok(self
                .apply_transpose(&DenseMatrix::identity(self.r, self.r))?
                .transpose()),
        }
    }
}

pub(crate) fn check_probs(probs: &[f64]) -> Result<()> {
    if probs.is_empty() {
        return Err(Error::InvalidProbabilities("empty".into()));
    }
    if probs.iter().any(|&x| !(x >= 0.0 && x.is_finite())) {
        return Err(Error::InvalidProbabilities(
            "entries must be finite and non-negative".into(),
        ));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > PROB_SUM_TOL {
        return Err(Error::InvalidProbabilities(format!(
            "sum is {total}, expected 1"
        )));
    }
    Ok(())
}

/// Draws `r` rows i.i.d. from `probs` (with replacement). When `rescale` is
/// set, row `j` carries weight `sqrt(1/(r p_j))`, otherwise weight 1.
pub fn build_sampling_sketch<R: Rng + ?Sized>(
    probs: &[f64],
    r: usize,
    rescale: bool,
    rng: &mut R,
) -> Result<SketchOperator> {
    check_probs(probs)?;
    if r == 0 {
        return Err(Error::InvalidArgument("r must be >= 1".into()));
    }
    let dist = WeightedIndex::new(probs).map_err(|e| Error::InvalidProbabilities(e.to_string()))?;
    let indices: Vec<usize> = (0..r).map(|_| dist.sample(rng)).collect();
    let weights = indices
        .iter()
        .map(|&i| {
            if rescale {
                (1.0 / (r as f64 * probs[i])).sqrt()
            } else {
                1.0
            }
        })
        .collect();
    SketchOperator::sampled(probs.len(), indices, weights)
}

/// Dense `r × n` sketch with entries `g_ij / sqrt(r)`.
pub fn build_subgaussian_sketch<R: Rng + ?Sized>(
    r: usize,
    n: usize,
    variant: SubGaussianVariant,
    rng: &mut R,
) -> SketchOperator {
    let scale = 1.0 / (r as f64).sqrt();
    let data: Vec<f64> = (0..r * n)
        .map(|_| match variant {
            SubGaussianVariant::Gaussian => scale * rng.sample::<f64, _>(StandardNormal),
            SubGaussianVariant::Rademacher => {
                if rng.random::<bool>() {
                    scale
                } else {
                    -scale
                }
            }
        })
        .collect();
    SketchOperator::dense(DMatrix::from_row_slice(r, n, &data))
}

/// Subsampled randomized Hadamard transform `S_unif · H · D`, scaled by
/// `1/sqrt(r)` on the unnormalized `H`.
pub fn build_hadamard_sketch<R: Rng + ?Sized>(
    r: usize,
    n: usize,
    rng: &mut R,
) -> Result<SketchOperator> {
    if !n.is_power_of_two() {
        return Err(Error::NotPowerOfTwo(n));
    }
    if r == 0 {
        return Err(Error::InvalidArgument("r must be >= 1".into()));
    }
    let sign_flips = (0..n)
        .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
        .collect();
    let sampled_rows = (0..r).map(|_| rng.random_range(0..n)).collect();
    SketchOperator::hadamard(sign_flips, sampled_rows, 1.0 / (r as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{normal_matrix, seeded};

    #[test]
    fn point_mass_sampling() {
        let mut probs = vec![0.0; 8];
        probs[5] = 1.0;
        let s = build_sampling_sketch(&probs, 3, true, &mut seeded(1)).unwrap();
        match s.repr() {
            SketchRepr::Sampled { indices, weights } => {
                assert_eq!(indices, &vec![5, 5, 5]);
                for w in weights {
                    assert!((w - (1.0f64 / 3.0).sqrt()).abs() < 1e-15);
                }
            }
            _ => panic!("expected sampled"),
        }
    }

    #[test]
    fn uniform_rescaled_weights() {
        let n = 10;
        let s = build_sampling_sketch(&vec![0.1; n], 4, true, &mut seeded(2)).unwrap();
        if let SketchRepr::Sampled { weights, .. } = s.repr() {
            for w in weights {
                assert!((w - (n as f64 / 4.0).sqrt()).abs() < 1e-12);
            }
        }
        let s = build_sampling_sketch(&vec![0.1; n], 4, false, &mut seeded(2)).unwrap();
        if let SketchRepr::Sampled { weights, .. } = s.repr() {
            assert!(weights.iter().all(|&w| w == 1.0));
        }
    }

    #[test]
    fn bad_probs_rejected() {
        assert!(build_sampling_sketch(&[0.5, 0.6], 1, true, &mut seeded(0)).is_err());
        assert!(build_sampling_sketch(&[1.5, -0.5], 1, true, &mut seeded(0)).is_err());
    }

    #[test]
    fn rademacher_support() {
        let s = build_subgaussian_sketch(7, 5, SubGaussianVariant::Rademacher, &mut seeded(3));
        let v = 1.0 / 7f64.sqrt();
        assert!(s.materialize().unwrap().iter().all(|&x| x == v || x == -v));
    }

    #[test]
    fn hadamard_smallest_case() {
        let s = SketchOperator::hadamard(vec![1.0, 1.0], vec![0], 1.0).unwrap();
        let m = s.materialize().unwrap();
        assert_eq!(m.as_slice(), &[1.0, 1.0]);
        assert!(build_hadamard_sketch(2, 12, &mut seeded(0)).is_err());
    }

    #[test]
    fn hadamard_constant_column_hits_row_zero() {
        let n = 16;
        let s = SketchOperator::hadamard(vec![1.0; n], (0..n).collect(), 1.0).unwrap();
        let out = s.apply(&DenseMatrix::from_element(n, 1, 1.0)).unwrap();
        assert_eq!(out[(0, 0)], n as f64);
        assert!(out.iter().skip(1).all(|&x| x == 0.0));
    }

    #[test]
    fn sampled_identity_pattern_and_materialize() {
        let a = normal_matrix(6, 2, &mut seeded(4));
        let s = SketchOperator::sampled(6, vec![0, 1, 2], vec![1.0; 3]).unwrap();
        assert_eq!(s.apply(&a).unwrap(), a.rows(0, 3).into_owned());
        let single = SketchOperator::sampled(4, vec![2], vec![0.7]).unwrap();
        assert_eq!(
            single.materialize().unwrap().as_slice(),
            &[0.0, 0.0, 0.7, 0.0]
        );
        let perm = s.materialize().unwrap();
        assert_eq!(perm, DenseMatrix::identity(3, 6));
    }

    #[test]
    fn structured_matches_dense_for_all_kinds() {
        let n = 32;
        let a = normal_matrix(n, 3, &mut seeded(5));
        let lev = LeverageProfile::uniform(n, 3);
        for scheme in [
            Scheme::SamplingRescaled,
            Scheme::SamplingNorescale,
            Scheme::SubgaussianGaussian,
            Scheme::SubgaussianRademacher,
            Scheme::Hadamard,
        ] {
            let s = SketchSpec::new(scheme, 9, 77).build(n, Some(&lev)).unwrap();
            let dense = s.materialize().unwrap();
            let fast = s.apply(&a).unwrap();
            assert!((fast - &dense * &a).abs().max() <= 1e-10, "{scheme}");
            let ident = s.apply(&DenseMatrix::identity(n, n)).unwrap();
            assert!((ident - &dense).abs().max() <= 1e-12, "{scheme}");
            let b = normal_matrix(9, 2, &mut seeded(6));
            let t = s.apply_transpose(&b).unwrap();
            assert!(
                (t - dense.transpose() * &b).abs().max() <= 1e-10,
                "{scheme}"
            );
        }
    }

    #[test]
    fn shape_mismatch() {
        let s = SketchOperator::identity(4);
        assert!(s.apply(&DenseMatrix::zeros(3, 1)).is_err());
        assert!(s.apply_transpose(&DenseMatrix::zeros(3, 1)).is_err());
    }

    #[test]
    fn materialize_guard() {
        let s = SketchOperator::sampled(60_000_000, vec![0, 1], vec![1.0, 1.0]).unwrap();
        assert!(matches!(s.materialize(), Err(Error::SizeGuard { .. })));
    }

    #[test]
    fn spec_json_round_trip() {
        let spec = SketchSpec {
            scheme: Scheme::SamplingNorescale,
            r: 12,
            theta: 0.25,
            q: Some(vec![0.5, 0.5]),
            seed: 99,
        };
        let text = serde_json::to_string(&spec).unwrap();
        assert!(text.contains("\"scheme\":\"sampling_norescale\""));
        let back: SketchSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(back, spec);
        assert_eq!("hadamard".parse::<Scheme>().unwrap(), Scheme::Hadamard);
    }

    #[test]
    fn spec_validation() {
        let mut spec = SketchSpec::new(Scheme::Hadamard, 0, 0);
        assert!(spec.validate().is_err());
        spec.r = 2;
        spec.theta = 1.0;
        assert!(spec.validate().is_err());
        let spec = SketchSpec::new(Scheme::SamplingRescaled, 2, 0);
        assert!(spec.build(4, None).is_err());
        assert!(SketchSpec::new(Scheme::Identity, 3, 0)
            .build(4, None)
            .is_err());
    }

    #[test]
    fn same_seed_same_operator() {
        let lev = LeverageProfile::uniform(16, 2);
        for scheme in [
            Scheme::SamplingRescaled,
            Scheme::SubgaussianGaussian,
            Scheme::Hadamard,
        ] {
            let spec = SketchSpec::new(scheme, 5, 1234);
            assert_eq!(
                spec.build(16, Some(&lev)).unwrap(),
                spec.build(16, Some(&lev)).unwrap()
            );
        }
    }
}
