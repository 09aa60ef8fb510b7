//! Sprays in a chart: symmetric bilinear maps `S(x)(·,·)`.
//!
//! Geodesics solve `ℓ'' = S(ℓ)(ℓ', ℓ')`. For a metric-derived spray
//! `S = −Γ`, so the equation is the usual `ℓ''ᵏ + Γᵏᵢⱼ ℓ'ⁱ ℓ'ʲ = 0`.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GeoError, Result};
use crate::family::LevelMetricFamily;
use crate::linalg::{spd_solve, Vector};

type SprayFn = dyn Fn(&Vector, &Vector, &Vector) -> Result<Vector> + Send + Sync;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SprayProvenance {
    FromMetric {
        level: usize,
    },
    Catalog {
        name: String,
    },
    Zero,
    /// Sign-flipped copy of another spray (used as a planted defect).
    Negated {
        of: Box<SprayProvenance>,
    },
}

#[derive(Clone)]
pub struct Spray {
    dim: usize,
    map: Arc<SprayFn>,
    provenance: SprayProvenance,
}

impl fmt::Debug for Spray {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Spray").field("dim", &self.dim).field("provenance", &self.provenance).finish()
    }
}

impl Spray {
    pub fn zero(dim: usize) -> Self {
        Self {
            dim,
            map: Arc::new(move |_, _, _| Ok(Vector::zeros(dim))),
            provenance: SprayProvenance::Zero,
        }
    }

    /// Closed-form spray. `f` must be symmetric and bilinear in `(u, v)`.
    pub fn catalog(name: &str, dim: usize, f: impl Fn(&Vector, &Vector, &Vector) -> Vector + Send + Sync + 'static) -> Self {
        Self {
            dim,
            map: Arc::new(move |x, u, v| Ok(f(x, u, v))),
            provenance: SprayProvenance::Catalog { name: name.into() },
        }
    }

    pub fn negated(&self) -> Self {
        let inner = self.map.clone();
        Self {
            dim: self.dim,
            map: Arc::new(move |x, u, v| inner(x, u, v).map(|s| -s)),
            provenance: SprayProvenance::Negated {
                of: Box::new(self.provenance.clone()),
            },
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn provenance(&self) -> &SprayProvenance {
        &self.provenance
    }

    pub fn is_zero(&self) -> bool {
        self.provenance == SprayProvenance::Zero
    }

    /// `S(x)(u, v)`.
    pub fn try_eval(&self, x: &Vector, u: &Vector, v: &Vector) -> Result<Vector> {
        (self.map)(x, u, v)
    }

    /// `S(x)(u, v)`; NaN-filled on failure so integrators register blow-up.
    pub fn eval(&self, x: &Vector, u: &Vector, v: &Vector) -> Vector {
        self.try_eval(x, u, v).unwrap_or_else(|_| Vector::from_element(self.dim, f64::NAN))
    }

    /// Right-hand side of the first-order geodesic system on `(x, v)`.
    pub fn geodesic_rhs(&self, state: &Vector) -> Vector {
        let d = self.dim;
        let x = state.rows(0, d).into_owned();
        let v = state.rows(d, d).into_owned();
        let a = self.eval(&x, &v, &v);
        let mut out = Vector::zeros(2 * d);
        out.rows_mut(0, d).copy_from(&v);
        out.rows_mut(d, d).copy_from(&a);
        out
    }

    /// Largest `|S(x)(u,v) − S(x)(v,u)|` over seeded samples drawn from a
    /// box of half-width `radius` around `center`.
    pub fn symmetry_defect(&self, center: &Vector, radius: f64, samples: usize, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = self.dim;
        let mut worst = 0.0f64;
        for _ in 0..samples {
            let x = Vector::from_fn(d, |i, _| center[i] + rng.gen_range(-radius..radius));
            let u = Vector::from_fn(d, |_, _| rng.gen_range(-1.0..1.0));
            let v = Vector::from_fn(d, |_, _| rng.gen_range(-1.0..1.0));
            let a = self.eval(&x, &u, &v);
            let b = self.eval(&x, &v, &u);
            worst = worst.max((a - b).amax());
        }
        worst
    }
}

/// Christoffel contraction `Γ(x)(u, v)` of a Gram field from its partials.
pub fn christoffel(family: &LevelMetricFamily, n: usize, x: &Vector, u: &Vector, v: &Vector) -> Result<Vector> {
    let g = family.gram(n, x)?;
    let dg = family.gram_partials(n, x)?;
    let d = x.len();
    // a_l = (∂_u G v)_l + (∂_v G u)_l − uᵀ ∂_l G v
    let mut du = g.clone() * 0.0;
    let mut dv = du.clone();
    for k in 0..d {
        du += &dg[k] * u[k];
        dv += &dg[k] * v[k];
    }
    let mut a = du * v + dv * u;
    for l in 0..d {
        a[l] -= u.dot(&(&dg[l] * v));
    }
    let sol = spd_solve(&g, &a).ok_or_else(|| GeoError::SingularGram {
        level: n,
        point: x.iter().copied().collect(),
    })?;
    if sol.iter().any(|s| !s.is_finite()) {
        return Err(GeoError::SingularGram {
            level: n,
            point: x.iter().copied().collect(),
        });
    }
    Ok(sol * 0.5)
}

/// Spray of the Levi-Civita connection of level `n`: `S = −Γ_n`.
pub fn spray_from_metric(family: &LevelMetricFamily, n: usize) -> Result<Spray> {
    family.check_level(n)?;
    let fam = family.clone();
    Ok(Spray {
        dim: family.dim(),
        map: Arc::new(move |x, u, v| christoffel(&fam, n, x, u, v).map(|g| -g)),
        provenance: SprayProvenance::FromMetric { level: n },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::family::MetricField;
    use crate::kernel::ChartDomain;
    use crate::linalg::{from_slice, Matrix};

    fn conformal() -> LevelMetricFamily {
        let m = MetricField::conformal(2, |x| x[0], |_| from_slice(&[1.0, 0.0]));
        LevelMetricFamily::scalar_scaled(ChartDomain::Whole, m, vec![1.0]).unwrap()
    }

    #[test]
    fn constant_family_gives_zero_spray() {
        let fam = LevelMetricFamily::general(ChartDomain::Whole, vec![MetricField::constant(Matrix::identity(3, 3) * 2.0)], 1).unwrap();
        let s = spray_from_metric(&fam, 1).unwrap();
        let v = s.eval(&from_slice(&[1.0, 2.0, 3.0]), &from_slice(&[1.0, 0.0, 1.0]), &from_slice(&[0.0, 1.0, 1.0]));
        assert_eq!(v.norm(), 0.0);
    }

    #[test]
    fn conformal_spray_matches_hand_christoffels() {
        // G = e^{2x₁} I: Γ¹₁₁ = 1, Γ¹₂₂ = −1, Γ²₁₂ = Γ²₂₁ = 1.
        let s = spray_from_metric(&conformal(), 1).unwrap();
        let x = from_slice(&[0.4, -0.3]);
        let u = from_slice(&[0.7, -1.1]);
        let v = from_slice(&[0.2, 0.5]);
        let got = s.eval(&x, &u, &v);
        let oracle = from_slice(&[-(u[0] * v[0] - u[1] * v[1]), -(u[0] * v[1] + u[1] * v[0])]);
        assert!((got - oracle).norm() < 1e-12);
    }

    #[test]
    fn fd_partials_give_same_spray() {
        let m = MetricField::new(2, |x| Matrix::identity(2, 2) * (2.0 * x[0]).exp());
        let fam = LevelMetricFamily::scalar_scaled(ChartDomain::Whole, m, vec![1.0]).unwrap();
        let s_fd = spray_from_metric(&fam, 1).unwrap();
        let s_an = spray_from_metric(&conformal(), 1).unwrap();
        let x = from_slice(&[0.1, 0.2]);
        let u = from_slice(&[1.0, 0.3]);
        assert!((s_fd.eval(&x, &u, &u) - s_an.eval(&x, &u, &u)).norm() < 1e-8);
    }

    #[test]
    fn singular_gram_is_reported() {
        let m = MetricField::new(2, |x| Matrix::from_diagonal(&from_slice(&[x[0], 1.0])));
        let fam = LevelMetricFamily::scalar_scaled(ChartDomain::Whole, m, vec![1.0]).unwrap();
        let s = spray_from_metric(&fam, 1).unwrap();
        let e = s.try_eval(&from_slice(&[0.0, 0.0]), &from_slice(&[1.0, 0.0]), &from_slice(&[1.0, 0.0]));
        assert!(matches!(e, Err(GeoError::SingularGram { level: 1, .. })));
    }

    #[test]
    fn symmetric_and_quadratic() {
        let s = spray_from_metric(&conformal(), 1).unwrap();
        assert!(s.symmetry_defect(&from_slice(&[0.0, 0.0]), 1.0, 1000, 3) <= 1e-10);
        let x = from_slice(&[0.2, 0.2]);
        let u = from_slice(&[0.5, -0.25]);
        let a = s.eval(&x, &(&u * 2.0), &(&u * 2.0));
        let b = s.eval(&x, &u, &u) * 4.0;
        assert!((a - b).norm() < 1e-14);
    }

    #[test]
    fn negated_flips_sign() {
        let s = spray_from_metric(&conformal(), 1).unwrap();
        let n = s.negated();
        let x = from_slice(&[0.2, 0.2]);
        let u = from_slice(&[0.5, -0.25]);
        assert_eq!(s.eval(&x, &u, &u), -n.eval(&x, &u, &u));
    }
}
