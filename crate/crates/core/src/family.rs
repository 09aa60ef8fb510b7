//! Point-dependent level metric families `{G_n(x)}`.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{GeoError, Result};
use crate::graded::{grading_report, GradedSeminormSpace, GradingReport, DEFAULT_PSD_TOL};
use crate::kernel::{default_fd_step, ChartDomain};
use crate::linalg::{Matrix, Vector};

type GramFn = dyn Fn(&Vector) -> Matrix + Send + Sync;
type PartialsFn = dyn Fn(&Vector) -> Vec<Matrix> + Send + Sync;

/// A Gram-matrix field `x ↦ G(x)` with optional analytic partials `∂_k G`.
#[derive(Clone)]
pub struct MetricField {
    dim: usize,
    gram: Arc<GramFn>,
    partials: Option<Arc<PartialsFn>>,
}

impl fmt::Debug for MetricField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MetricField")
            .field("dim", &self.dim)
            .field("analytic_partials", &self.partials.is_some())
            .finish()
    }
}

impl MetricField {
    pub fn new(dim: usize, gram: impl Fn(&Vector) -> Matrix + Send + Sync + 'static) -> Self {
        Self {
            dim,
            gram: Arc::new(gram),
            partials: None,
        }
    }

    pub fn with_partials(mut self, p: impl Fn(&Vector) -> Vec<Matrix> + Send + Sync + 'static) -> Self {
        self.partials = Some(Arc::new(p));
        self
    }

    pub fn constant(g: Matrix) -> Self {
        let d = g.nrows();
        Self::new(d, move |_| g.clone()).with_partials(move |_| vec![Matrix::zeros(d, d); d])
    }

    /// `G(x) = e^{2φ(x)}·I` for `φ` with gradient `∇φ`.
    pub fn conformal(dim: usize, phi: impl Fn(&Vector) -> f64 + Send + Sync + 'static, grad_phi: impl Fn(&Vector) -> Vector + Send + Sync + 'static) -> Self {
        let phi = Arc::new(phi);
        let p2 = phi.clone();
        Self::new(dim, move |x| Matrix::identity(dim, dim) * (2.0 * phi(x)).exp()).with_partials(move |x| {
            let f = (2.0 * p2(x)).exp();
            let g = grad_phi(x);
            (0..dim).map(|k| Matrix::identity(dim, dim) * (2.0 * f * g[k])).collect()
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn gram(&self, x: &Vector) -> Matrix {
        (self.gram)(x)
    }

    pub fn has_partials(&self) -> bool {
        self.partials.is_some()
    }

    /// `∂_k G(x)`, analytic when registered.
    pub fn partials(&self, x: &Vector) -> Vec<Matrix> {
        match &self.partials {
            Some(p) => p(x),
            None => self.fd_partials(x),
        }
    }

    pub fn fd_partials(&self, x: &Vector) -> Vec<Matrix> {
        let h = default_fd_step(x.norm());
        (0..self.dim)
            .map(|k| {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[k] += h;
                xm[k] -= h;
                (self.gram(&xp) - self.gram(&xm)) / (2.0 * h)
            })
            .collect()
    }

    fn scaled(&self, w: f64) -> MetricField {
        let base = self.clone();
        let out = MetricField::new(self.dim, move |x| base.gram(x) * w);
        match &self.partials {
            Some(_) => {
                let base = self.clone();
                out.with_partials(move |x| base.partials(x).into_iter().map(|m| m * w).collect())
            }
            None => out,
        }
    }
}

#[derive(Debug, Clone)]
pub enum LevelStructure {
    /// `G_n(x) = w_n·G(x)` with `0 < w_1 ≤ … ≤ w_N`.
    ScalarScaled {
        base: MetricField,
        weights: Vec<f64>,
    },
    General {
        levels: Vec<MetricField>,
    },
}

/// Level metric family on one chart.
#[derive(Debug, Clone)]
pub struct LevelMetricFamily {
    domain: ChartDomain,
    levels: Vec<MetricField>,
    structure: LevelStructure,
    driving_level: usize,
    psd_tol: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum StructureKind {
    ScalarScaled,
    General,
}

impl LevelMetricFamily {
    pub fn scalar_scaled(domain: ChartDomain, base: MetricField, weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(GeoError::InvalidParameter {
                name: "weights".into(),
                reason: "at least one level is required".into(),
            });
        }
        if weights.iter().any(|w| !(*w > 0.0)) || weights.windows(2).any(|w| w[1] < w[0]) {
            return Err(GeoError::InvalidParameter {
                name: "weights".into(),
                reason: format!("weights must be positive and nondecreasing, got {weights:?}"),
            });
        }
        let levels = weights.iter().map(|w| base.scaled(*w)).collect();
        let n = weights.len();
        Ok(Self {
            domain,
            levels,
            structure: LevelStructure::ScalarScaled { base, weights },
            driving_level: n,
            psd_tol: DEFAULT_PSD_TOL,
        })
    }

    /// General families need an explicit driving level: different levels
    /// have different compatible connections.
    pub fn general(domain: ChartDomain, levels: Vec<MetricField>, driving_level: usize) -> Result<Self> {
        if levels.is_empty() {
            return Err(GeoError::InvalidParameter {
                name: "levels".into(),
                reason: "at least one level is required".into(),
            });
        }
        if driving_level == 0 || driving_level > levels.len() {
            return Err(GeoError::LevelOutOfRange {
                level: driving_level,
                levels: levels.len(),
            });
        }
        Ok(Self {
            domain,
            levels: levels.clone(),
            structure: LevelStructure::General { levels },
            driving_level,
            psd_tol: DEFAULT_PSD_TOL,
        })
    }

    /// Constant family from a graded space.
    pub fn constant(space: &GradedSeminormSpace, domain: ChartDomain) -> Self {
        let levels: Vec<MetricField> = space.grams().iter().cloned().map(MetricField::constant).collect();
        let n = levels.len();
        Self {
            domain,
            levels: levels.clone(),
            structure: LevelStructure::General { levels },
            driving_level: n,
            psd_tol: space.psd_tol(),
        }
    }

    pub fn with_driving_level(mut self, n: usize) -> Result<Self> {
        self.check_level(n)?;
        self.driving_level = n;
        Ok(self)
    }

    pub fn domain(&self) -> &ChartDomain {
        &self.domain
    }

    pub fn dim(&self) -> usize {
        self.levels[0].dim()
    }

    pub fn levels(&self) -> usize {
        self.levels.len()
    }

    pub fn driving_level(&self) -> usize {
        self.driving_level
    }

    pub fn structure(&self) -> &LevelStructure {
        &self.structure
    }

    pub fn kind(&self) -> StructureKind {
        match self.structure {
            LevelStructure::ScalarScaled { .. } => StructureKind::ScalarScaled,
            LevelStructure::General { .. } => StructureKind::General,
        }
    }

    pub fn weights(&self) -> Option<&[f64]> {
        match &self.structure {
            LevelStructure::ScalarScaled { weights, .. } => Some(weights),
            LevelStructure::General { .. } => None,
        }
    }

    pub fn check_level(&self, n: usize) -> Result<()> {
        if n == 0 || n > self.levels() {
            return Err(GeoError::LevelOutOfRange {
                level: n,
                levels: self.levels(),
            });
        }
        Ok(())
    }

    pub fn level(&self, n: usize) -> Result<&MetricField> {
        self.check_level(n)?;
        Ok(&self.levels[n - 1])
    }

    pub fn gram(&self, n: usize, x: &Vector) -> Result<Matrix> {
        Ok(self.level(n)?.gram(x))
    }

    pub fn gram_partials(&self, n: usize, x: &Vector) -> Result<Vec<Matrix>> {
        Ok(self.level(n)?.partials(x))
    }

    /// `‖v‖ⁿ_x`; no domain check (used in inner loops).
    pub fn norm(&self, n: usize, x: &Vector, v: &Vector) -> f64 {
        let g = self.levels[n - 1].gram(x);
        v.dot(&(g * v)).max(0.0).sqrt()
    }

    /// `⟨u, v⟩_{n,x}`; no domain check.
    pub fn product(&self, n: usize, x: &Vector, u: &Vector, v: &Vector) -> f64 {
        u.dot(&(self.levels[n - 1].gram(x) * v))
    }

    /// Grading report of `{G_n(x)}` at one point.
    pub fn grading_at(&self, x: &Vector) -> GradingReport {
        let grams: Vec<Matrix> = self.levels.iter().map(|l| l.gram(x)).collect();
        grading_report(&grams, self.psd_tol)
    }

    /// Graded model space given by the Gram matrices at `x`.
    pub fn space_at(&self, x: &Vector) -> Result<GradedSeminormSpace> {
        GradedSeminormSpace::new(self.levels.iter().map(|l| l.gram(x)).collect(), self.psd_tol)
    }

    /// Verifies grading on sample points; the first failure is reported.
    pub fn validate_on(&self, points: &[Vector]) -> Result<()> {
        for x in points {
            let r = self.grading_at(x);
            if let Some(p) = r.failing_pairs().next() {
                return Err(GeoError::Grading {
                    lower: p.lower,
                    upper: p.upper,
                    min_eigenvalue: p.min_eigenvalue,
                });
            }
            if !r.top_definite {
                return Err(GeoError::SingularGram {
                    level: self.levels(),
                    point: x.iter().copied().collect(),
                });
            }
        }
        Ok(())
    }
}
