//! Truncated graded-seminorm model spaces.
//!
//! A space is a finite dimension `D` together with `N` Gram matrices
//! `G_1 ≤ … ≤ G_N` (Loewner order). Level `n` carries the Hilbertian seminorm
//! `‖x‖ⁿ = sqrt(xᵀ G_n x)`; the top level is definite and stands in for the
//! topology of the model space.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{GeoError, Result};
use crate::linalg::{min_eigenvalue, symmetric_defect, Matrix, Vector};

pub const DEFAULT_PSD_TOL: f64 = 1e-10;
const SYMMETRY_TOL: f64 = 1e-12;

/// JSON form: `{ "dim": D, "grams": [[[..row..], ..], ..], "psd_tol": t }`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceConfig {
    pub dim: usize,
    pub grams: Vec<Vec<Vec<f64>>>,
    #[serde(default)]
    pub psd_tol: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradedSeminormSpace {
    dim: usize,
    grams: Vec<Matrix>,
    psd_tol: f64,
}

impl GradedSeminormSpace {
    /// Builds a space and enforces every invariant (symmetry, PSD levels,
    /// grading, definite top level).
    pub fn new(grams: Vec<Matrix>, psd_tol: f64) -> Result<Self> {
        let space = Self::new_unchecked(grams, psd_tol)?;
        let report = check_grading(&space);
        if let Some(level) = report.levels.iter().find(|l| l.min_eigenvalue < -psd_tol) {
            return Err(GeoError::InvalidSpace(format!(
                "G_{} has eigenvalue {:e} below -psd_tol",
                level.level, level.min_eigenvalue
            )));
        }
        if let Some(pair) = report.pairs.iter().find(|p| !p.ok) {
            return Err(GeoError::Grading {
                lower: pair.lower,
                upper: pair.upper,
                min_eigenvalue: pair.min_eigenvalue,
            });
        }
        if !report.top_definite {
            return Err(GeoError::InvalidSpace(format!("top level G_{} is not positive-definite", space.levels())));
        }
        Ok(space)
    }

    /// Checks shapes and symmetry only; used to inspect candidate spaces with
    /// [`check_grading`].
    pub fn new_unchecked(grams: Vec<Matrix>, psd_tol: f64) -> Result<Self> {
        let first = grams.first().ok_or_else(|| GeoError::InvalidSpace("at least one level is required".into()))?;
        let dim = first.nrows();
        if dim == 0 {
            return Err(GeoError::InvalidSpace("dimension must be positive".into()));
        }
        if !(psd_tol >= 0.0) {
            return Err(GeoError::InvalidSpace("psd_tol must be nonnegative".into()));
        }
        for (i, g) in grams.iter().enumerate() {
            if g.nrows() != dim || g.ncols() != dim {
                return Err(GeoError::InvalidSpace(format!(
                    "G_{} is {}x{}, expected {dim}x{dim}",
                    i + 1,
                    g.nrows(),
                    g.ncols()
                )));
            }
            if symmetric_defect(g) > SYMMETRY_TOL {
                return Err(GeoError::InvalidSpace(format!("G_{} is not symmetric", i + 1)));
            }
        }
        Ok(Self { dim, grams, psd_tol })
    }

    /// Single-level Euclidean space.
    pub fn euclidean(dim: usize) -> Self {
        Self::scaled_identity(dim, &[1.0]).expect("identity space is valid")
    }

    /// Levels `w_n · I` for nondecreasing positive weights.
    pub fn scaled_identity(dim: usize, weights: &[f64]) -> Result<Self> {
        let grams = weights.iter().map(|w| Matrix::identity(dim, dim) * *w).collect();
        Self::new(grams, DEFAULT_PSD_TOL)
    }

    pub fn from_config(cfg: &SpaceConfig) -> Result<Self> {
        let grams = cfg
            .grams
            .iter()
            .enumerate()
            .map(|(i, rows)| {
                if rows.len() != cfg.dim || rows.iter().any(|r| r.len() != cfg.dim) {
                    return Err(GeoError::InvalidSpace(format!("G_{} must be {}x{}", i + 1, cfg.dim, cfg.dim)));
                }
                Ok(Matrix::from_fn(cfg.dim, cfg.dim, |r, c| rows[r][c]))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(grams, cfg.psd_tol.unwrap_or(DEFAULT_PSD_TOL))
    }

    pub fn to_config(&self) -> SpaceConfig {
        SpaceConfig {
            dim: self.dim,
            grams: self
                .grams
                .iter()
                .map(|g| (0..self.dim).map(|r| g.row(r).iter().copied().collect()).collect())
                .collect(),
            psd_tol: Some(self.psd_tol),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn levels(&self) -> usize {
        self.grams.len()
    }

    pub fn psd_tol(&self) -> f64 {
        self.psd_tol
    }

    pub fn grams(&self) -> &[Matrix] {
        &self.grams
    }

    /// Gram matrix of level `n` (1-based).
    pub fn gram(&self, n: usize) -> Result<&Matrix> {
        if n == 0 || n > self.levels() {
            return Err(GeoError::LevelOutOfRange {
                level: n,
                levels: self.levels(),
            });
        }
        Ok(&self.grams[n - 1])
    }

    /// `‖x‖ⁿ = sqrt(xᵀ G_n x)`.
    pub fn seminorm(&self, n: usize, x: &Vector) -> Result<f64> {
        let g = self.gram(n)?;
        self.check_dim(x)?;
        Ok(quadratic_norm(g, x))
    }

    /// Top-level seminorm, the norm used for error reporting.
    pub fn top_norm(&self, x: &Vector) -> f64 {
        quadratic_norm(&self.grams[self.levels() - 1], x)
    }

    /// Translation-invariant metric `sup_n 2^{-n} ‖x−y‖ⁿ / (1 + ‖x−y‖ⁿ)`.
    pub fn model_metric(&self, x: &Vector, y: &Vector) -> Result<f64> {
        self.check_dim(x)?;
        self.check_dim(y)?;
        Ok(self.metric_to_zero(&(x - y)))
    }

    fn metric_to_zero(&self, d: &Vector) -> f64 {
        self.grams
            .iter()
            .enumerate()
            .map(|(i, g)| {
                let s = quadratic_norm(g, d);
                0.5f64.powi(i as i32 + 1) * s / (1.0 + s)
            })
            .fold(0.0, f64::max)
    }

    pub fn check_dim(&self, x: &Vector) -> Result<()> {
        if x.len() != self.dim {
            return Err(GeoError::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        Ok(())
    }
}

impl Serialize for GradedSeminormSpace {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_config().serialize(s)
    }
}

impl<'de> Deserialize<'de> for GradedSeminormSpace {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let cfg = SpaceConfig::deserialize(d)?;
        Self::from_config(&cfg).map_err(serde::de::Error::custom)
    }
}

pub(crate) fn quadratic_norm(g: &Matrix, x: &Vector) -> f64 {
    x.dot(&(g * x)).max(0.0).sqrt()
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct LevelEigen {
    pub level: usize,
    pub min_eigenvalue: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PairReport {
    pub lower: usize,
    pub upper: usize,
    /// Smallest eigenvalue of `G_upper − G_lower`.
    pub min_eigenvalue: f64,
    pub ok: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GradingReport {
    pub pass: bool,
    pub levels: Vec<LevelEigen>,
    pub pairs: Vec<PairReport>,
    pub top_definite: bool,
}

impl GradingReport {
    pub fn failing_pairs(&self) -> impl Iterator<Item = &PairReport> {
        self.pairs.iter().filter(|p| !p.ok)
    }
}

/// Pass iff every `G_{n+1} − G_n` is PSD within `psd_tol` and `G_N` is
/// positive-definite.
pub fn check_grading(space: &GradedSeminormSpace) -> GradingReport {
    grading_report(space.grams(), space.psd_tol())
}

pub(crate) fn grading_report(grams: &[Matrix], psd_tol: f64) -> GradingReport {
    let levels: Vec<LevelEigen> = grams
        .iter()
        .enumerate()
        .map(|(i, g)| LevelEigen {
            level: i + 1,
            min_eigenvalue: min_eigenvalue(g),
        })
        .collect();
    let pairs: Vec<PairReport> = grams
        .windows(2)
        .enumerate()
        .map(|(i, w)| {
            let min_eigenvalue = min_eigenvalue(&(&w[1] - &w[0]));
            PairReport {
                lower: i + 1,
                upper: i + 2,
                min_eigenvalue,
                ok: min_eigenvalue >= -psd_tol,
            }
        })
        .collect();
    let top_definite = levels.last().is_some_and(|l| l.min_eigenvalue > psd_tol);
    let pass = top_definite && pairs.iter().all(|p| p.ok) && levels.iter().all(|l| l.min_eigenvalue >= -psd_tol);
    GradingReport {
        pass,
        levels,
        pairs,
        top_definite,
    }
}

/// A linear map between two graded spaces, given by its matrix.
#[derive(Debug, Clone)]
pub struct LinearOperatorSample {
    matrix: Matrix,
    domain: GradedSeminormSpace,
    codomain: GradedSeminormSpace,
}

impl LinearOperatorSample {
    pub fn new(matrix: Matrix, domain: GradedSeminormSpace, codomain: GradedSeminormSpace) -> Result<Self> {
        if matrix.ncols() != domain.dim() {
            return Err(GeoError::DimensionMismatch {
                expected: domain.dim(),
                got: matrix.ncols(),
            });
        }
        if matrix.nrows() != codomain.dim() {
            return Err(GeoError::DimensionMismatch {
                expected: codomain.dim(),
                got: matrix.nrows(),
            });
        }
        Ok(Self { matrix, domain, codomain })
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }
}

const GAP_DECADES: i32 = 16;
const GAP_RADII_PER_DECADE: i32 = 8;

/// Sampled lower bound for the Lipschitz constant of `L − H` measured with
/// the model metrics: `sup_{x≠0} ϱ((L−H)x, 0) / σ(x, 0)`.
///
/// Directions are the coordinate axes followed by `sample_count` seeded
/// Gaussian directions; every direction is probed at radii `10^k`,
/// `k ∈ [-8, 8]` in steps of 1/8 decade. The supremum may only be reached in
/// a limit, so the value is a lower bound.
pub fn lipschitz_gap(l: &LinearOperatorSample, h: &LinearOperatorSample, sample_count: usize, seed: u64) -> Result<f64> {
    if l.matrix.shape() != h.matrix.shape() {
        return Err(GeoError::DimensionMismatch {
            expected: l.matrix.ncols(),
            got: h.matrix.ncols(),
        });
    }
    if sample_count == 0 {
        return Err(GeoError::InvalidArgument("sample_count must be at least 1".into()));
    }
    let diff = &l.matrix - &h.matrix;
    if diff.iter().all(|v| *v == 0.0) {
        return Ok(0.0);
    }
    let dim = l.domain.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut directions: Vec<Vector> = (0..dim).map(|k| crate::linalg::unit(dim, k)).collect();
    for _ in 0..sample_count {
        let v = Vector::from_fn(dim, |_, _| StandardNormal.sample(&mut rng));
        let n = v.norm();
        if n > 0.0 {
            directions.push(v / n);
        }
    }
    let mut best = 0.0f64;
    for dir in &directions {
        let image = &diff * dir;
        for k in -GAP_DECADES * GAP_RADII_PER_DECADE / 2..=GAP_DECADES * GAP_RADII_PER_DECADE / 2 {
            let r = 10f64.powf(k as f64 / GAP_RADII_PER_DECADE as f64);
            let den = l.domain.metric_to_zero(&(dir * r));
            if den <= 0.0 {
                continue;
            }
            let num = l.codomain.metric_to_zero(&(&image * r));
            best = best.max(num / den);
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::from_slice;
    use proptest::prelude::*;
    use rand::Rng;

    fn diag(vals: &[f64]) -> Matrix {
        Matrix::from_diagonal(&from_slice(vals))
    }

    fn one_dim(weights: &[f64]) -> GradedSeminormSpace {
        GradedSeminormSpace::new(weights.iter().map(|w| diag(&[*w])).collect(), 0.0).unwrap()
    }

    #[test]
    fn seminorm_examples() {
        let s = GradedSeminormSpace::scaled_identity(2, &[1.0, 2.0]).unwrap();
        assert!((s.seminorm(1, &from_slice(&[3.0, 4.0])).unwrap() - 5.0).abs() < 1e-15);
        assert_eq!(s.seminorm(2, &Vector::zeros(2)).unwrap(), 0.0);
        let v = s.seminorm(2, &from_slice(&[1.0, 0.0])).unwrap();
        assert!((v - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn seminorm_level_out_of_range() {
        let s = GradedSeminormSpace::euclidean(2);
        assert!(matches!(s.seminorm(0, &Vector::zeros(2)), Err(GeoError::LevelOutOfRange { .. })));
        assert!(matches!(s.seminorm(2, &Vector::zeros(2)), Err(GeoError::LevelOutOfRange { .. })));
    }

    #[test]
    fn model_metric_examples() {
        let s = one_dim(&[1.0]);
        let x = from_slice(&[0.3]);
        assert_eq!(s.model_metric(&x, &x).unwrap(), 0.0);
        assert!((s.model_metric(&from_slice(&[1.0]), &from_slice(&[0.0])).unwrap() - 0.25).abs() < 1e-15);
        let s2 = one_dim(&[1.0, 4.0]);
        let d = s2.model_metric(&from_slice(&[2.0]), &from_slice(&[1.0])).unwrap();
        assert!((d - 0.25f64.max(0.25 * 2.0 / 3.0)).abs() < 1e-15);
    }

    #[test]
    fn model_metric_dimension_mismatch() {
        let s = GradedSeminormSpace::euclidean(2);
        assert!(s.model_metric(&Vector::zeros(2), &Vector::zeros(3)).is_err());
    }

    #[test]
    fn grading_examples() {
        let ok = GradedSeminormSpace::new_unchecked(vec![diag(&[1.0, 1.0]), diag(&[2.0, 2.0])], 1e-10).unwrap();
        assert!(check_grading(&ok).pass);

        let bad = GradedSeminormSpace::new_unchecked(vec![diag(&[2.0, 2.0]), diag(&[1.0, 1.0])], 1e-10).unwrap();
        let r = check_grading(&bad);
        assert!(!r.pass);
        let f: Vec<_> = r.failing_pairs().map(|p| (p.lower, p.upper)).collect();
        assert_eq!(f, vec![(1, 2)]);

        let indefinite = GradedSeminormSpace::new_unchecked(vec![diag(&[1.0, 3.0]), diag(&[2.0, 2.0])], 1e-10).unwrap();
        let r = check_grading(&indefinite);
        assert!(!r.pass);
        assert!((r.pairs[0].min_eigenvalue + 1.0).abs() < 1e-12);
    }

    #[test]
    fn new_rejects_reversed_grading_naming_pair() {
        let err = GradedSeminormSpace::new(vec![diag(&[2.0]), diag(&[1.0])], 1e-10).unwrap_err();
        assert!(matches!(err, GeoError::Grading { lower: 1, upper: 2, .. }));
    }

    #[test]
    fn new_rejects_semidefinite_top() {
        assert!(GradedSeminormSpace::new(vec![diag(&[1.0, 0.0])], 1e-10).is_err());
        // Degenerate lower levels are fine.
        assert!(GradedSeminormSpace::new(vec![diag(&[1.0, 0.0]), diag(&[1.0, 1.0])], 1e-10).is_ok());
    }

    #[test]
    fn config_round_trip() {
        let s = GradedSeminormSpace::new(vec![diag(&[1.0, 0.5]), diag(&[2.0, 1.0])], 1e-10).unwrap();
        let json = serde_json::to_string(&s).unwrap();
        let back: GradedSeminormSpace = serde_json::from_str(&json).unwrap();
        assert_eq!(back, s);
        let unknown = r#"{"dim":1,"grams":[[[1.0]]],"gamma":2}"#;
        assert!(serde_json::from_str::<GradedSeminormSpace>(unknown).is_err());
    }

    /// Brute-force 1-D maximization of `c(1+x)/(1+cx)` over a log grid.
    fn ratio_oracle(c: f64) -> f64 {
        (0..=320_000)
            .map(|k| 10f64.powf(-8.0 + k as f64 * 16.0 / 320_000.0))
            .map(|x| c * (1.0 + x) / (1.0 + c * x))
            .fold(0.0, f64::max)
    }

    #[test]
    fn lipschitz_gap_examples() {
        let s = one_dim(&[1.0]);
        let l = LinearOperatorSample::new(diag(&[3.0]), s.clone(), s.clone()).unwrap();
        let z = LinearOperatorSample::new(diag(&[0.0]), s.clone(), s.clone()).unwrap();
        assert_eq!(lipschitz_gap(&l, &l, 8, 1).unwrap(), 0.0);

        let oracle = ratio_oracle(3.0);
        assert!((oracle - 3.0).abs() < 1e-6);
        let g = lipschitz_gap(&l, &z, 8, 1).unwrap();
        assert!((g - 3.0).abs() < 1e-3, "{g}");

        let half = LinearOperatorSample::new(diag(&[0.5]), s.clone(), s.clone()).unwrap();
        let oracle = ratio_oracle(0.5);
        assert!((oracle - 1.0).abs() < 1e-6);
        let g = lipschitz_gap(&half, &z, 8, 1).unwrap();
        assert!((g - 1.0).abs() < 1e-3, "{g}");
    }

    #[test]
    fn lipschitz_gap_rejects_bad_input() {
        let s1 = one_dim(&[1.0]);
        let s2 = GradedSeminormSpace::euclidean(2);
        assert!(LinearOperatorSample::new(diag(&[1.0]), s2.clone(), s1.clone()).is_err());
        let l = LinearOperatorSample::new(diag(&[1.0]), s1.clone(), s1.clone()).unwrap();
        assert!(lipschitz_gap(&l, &l, 0, 0).is_err());
    }

    fn arb_space() -> impl Strategy<Value = GradedSeminormSpace> {
        // Gram = A Aᵀ + ε I, higher levels add further PSD terms.
        (1usize..4, 1usize..4).prop_flat_map(|(dim, levels)| {
            proptest::collection::vec(proptest::collection::vec(-1.0f64..1.0, dim * dim), levels).prop_map(move |factors| {
                let mut acc = Matrix::identity(dim, dim) * 1e-3;
                let grams = factors
                    .into_iter()
                    .map(|f| {
                        let a = Matrix::from_row_slice(dim, dim, &f);
                        acc = &acc + &a * a.transpose();
                        acc.clone()
                    })
                    .collect();
                GradedSeminormSpace::new(grams, 1e-10).unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn seminorms_are_graded(s in arb_space(), xs in proptest::collection::vec(-10.0f64..10.0, 3)) {
            let x = Vector::from_iterator(s.dim(), xs.into_iter().take(s.dim()));
            for n in 1..s.levels() {
                prop_assert!(s.seminorm(n, &x).unwrap() <= s.seminorm(n + 1, &x).unwrap() + 1e-10);
            }
        }

        #[test]
        fn model_metric_is_translation_invariant_and_bounded(
            s in arb_space(),
            v in proptest::collection::vec(-10.0f64..10.0, 9),
        ) {
            let d = s.dim();
            let x = Vector::from_column_slice(&v[0..d]);
            let y = Vector::from_column_slice(&v[3..3 + d]);
            let z = Vector::from_column_slice(&v[6..6 + d]);
            let a = s.model_metric(&x, &y).unwrap();
            let b = s.model_metric(&(&x + &z), &(&y + &z)).unwrap();
            prop_assert!((a - b).abs() <= 1e-12);
            prop_assert!(a <= 0.5);
            prop_assert_eq!(a, s.model_metric(&y, &x).unwrap());
            let xz = s.model_metric(&x, &z).unwrap();
            let zy = s.model_metric(&z, &y).unwrap();
            prop_assert!(a <= xz + zy + 1e-10);
            for n in 1..=s.levels() {
                let t = s.seminorm(n, &(&x - &y)).unwrap();
                prop_assert!(t <= s.seminorm(n, &(&x - &z)).unwrap() + s.seminorm(n, &(&z - &y)).unwrap() + 1e-10);
            }
        }

        #[test]
        fn lipschitz_gap_is_symmetric(
            s in arb_space(),
            a in proptest::collection::vec(-2.0f64..2.0, 9),
            b in proptest::collection::vec(-2.0f64..2.0, 9),
            seed in 0u64..1000,
        ) {
            let d = s.dim();
            let l = LinearOperatorSample::new(Matrix::from_row_slice(d, d, &a[..d * d]), s.clone(), s.clone()).unwrap();
            let h = LinearOperatorSample::new(Matrix::from_row_slice(d, d, &b[..d * d]), s.clone(), s.clone()).unwrap();
            prop_assert_eq!(lipschitz_gap(&l, &h, 4, seed).unwrap(), lipschitz_gap(&h, &l, 4, seed).unwrap());
        }
    }

    #[test]
    fn triangle_inequality_on_seeded_triples() {
        let s = GradedSeminormSpace::new(vec![diag(&[1.0, 0.0, 0.5]), diag(&[2.0, 1.0, 1.0]), diag(&[3.0, 4.0, 2.0])], 1e-10).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let mut p = || Vector::from_fn(3, |_, _| rng.gen_range(-5.0..5.0));
            let (x, y, z) = (p(), p(), p());
            let lhs = s.model_metric(&x, &y).unwrap();
            assert!(lhs <= s.model_metric(&x, &z).unwrap() + s.model_metric(&z, &y).unwrap() + 1e-10);
        }
    }
}
