//! The Einstein-metric Ricci flow curve in the space of constant-coefficient
//! metrics, and the report showing it fails the geodesic equations.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::curve::CurvePath;
use crate::error::{GeoError, Result};
use crate::geodesic::integrate_geodesic;
use crate::linalg::{min_eigenvalue, Matrix, Vector};
use crate::ode::OdeOptions;
use crate::parallel::par_map;
use crate::spd::{to_coords, SpdKind, SpdMetricSpace};
use crate::spray::spray_from_metric;
use crate::variational::{el_residual, first_variation, FirstVariation};

/// `g(t) = (1 − 2λt)·g0` on `[0, T]`, with the exact velocity `−2λ·g0`.
pub fn einstein_ricci_curve(lambda: f64, g0: &Matrix, t_end: f64, segments: usize) -> Result<CurvePath> {
    if !g0.is_square() || !(min_eigenvalue(g0) > 0.0) {
        return Err(GeoError::InvalidParameter {
            name: "g0".into(),
            reason: "must be symmetric positive-definite".into(),
        });
    }
    if !(t_end > 0.0) || !lambda.is_finite() {
        return Err(GeoError::InvalidParameter {
            name: "T".into(),
            reason: "horizon must be positive and lambda finite".into(),
        });
    }
    if lambda > 0.0 && 2.0 * lambda * t_end >= 1.0 {
        return Err(GeoError::PositivityLost { t: 1.0 / (2.0 * lambda) });
    }
    let x0 = to_coords(g0);
    let v = &x0 * (-2.0 * lambda);
    let v2 = v.clone();
    CurvePath::from_fn(0.0, t_end, segments, move |t| &x0 * (1.0 - 2.0 * lambda * t), move |_| v2.clone())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RicciLevel {
    pub level: usize,
    pub residual_sup: f64,
    /// Sup of `‖∂ₓL‖` (the position term of the E-L equation).
    pub position_term_sup: f64,
    /// Sup of `‖d/dt ∂ᵥL‖` (the momentum term).
    pub momentum_term_sup: f64,
    pub first_variation: FirstVariation,
    pub control_residual_sup: f64,
    pub control_first_variation: f64,
    /// Residual and first variation both above the calibrated thresholds.
    pub exceeds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RicciReport {
    pub kind: SpdKind,
    pub lambda: f64,
    pub t_end: f64,
    pub m: usize,
    pub weights: Vec<f64>,
    pub segments: usize,
    pub seed: u64,
    pub levels: Vec<RicciLevel>,
    /// `10⁴ ×` the largest control residual.
    pub theta: f64,
    /// `10⁴ ×` the largest control first-variation magnitude.
    pub theta_v: f64,
    /// Residual sup of the same curve under the flat kind.
    pub flat_residual_sup: f64,
    pub flat_verdict: String,
    pub verdict: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RicciConfig {
    pub segments: usize,
    pub seed: u64,
    /// Step of the finite-difference first variation.
    pub fd_step: f64,
}

impl Default for RicciConfig {
    fn default() -> Self {
        Self {
            segments: 200,
            seed: 42,
            fd_step: 1e-3,
        }
    }
}

pub const CALIBRATION_FACTOR: f64 = 1e4;
pub const FLAT_RESIDUAL_TOL: f64 = 1e-8;

/// Seeded proper variation `Y(τ) = τ(1−τ)(a + bτ)` on the curve's grid.
fn proper_variation(curve: &CurvePath, seed: u64) -> Result<CurvePath> {
    let d = curve.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = || Vector::from_fn(d, |_, _| StandardNormal.sample(&mut rng));
    let (a, b) = (g(), g());
    let (t0, t1) = (curve.start(), curve.end());
    let span = t1 - t0;
    let nodes = curve
        .times()
        .iter()
        .map(|t| {
            let tau = (t - t0) / span;
            (&a + &b * tau) * (tau * (1.0 - tau))
        })
        .collect();
    let vels = curve
        .times()
        .iter()
        .map(|t| {
            let tau = (t - t0) / span;
            ((&a + &b * tau) * (1.0 - 2.0 * tau) + &b * (tau * (1.0 - tau))) / span
        })
        .collect();
    CurvePath::new(curve.times().to_vec(), nodes, vels)
}

fn check_positive(space: &SpdMetricSpace, curve: &CurvePath) -> Result<()> {
    let dom = space.domain();
    for (t, x) in curve.times().iter().zip(curve.nodes()) {
        if !dom.contains(x) {
            return Err(GeoError::PositivityLost { t: *t });
        }
    }
    Ok(())
}

/// E-L residuals and first variations of the Ricci curve at every level,
/// calibrated against a geodesic of the same family with the same initial
/// data and grid, plus the flat-kind control.
pub fn ricci_nongeodesic_report(space: &SpdMetricSpace, lambda: f64, g0: &Matrix, t_end: f64, cfg: &RicciConfig, opts: &OdeOptions) -> Result<RicciReport> {
    if g0.nrows() != space.m {
        return Err(GeoError::DimensionMismatch {
            expected: space.m,
            got: g0.nrows(),
        });
    }
    let curve = einstein_ricci_curve(lambda, g0, t_end, cfg.segments)?;
    check_positive(space, &curve)?;
    let family = space.family()?;
    let spray = spray_from_metric(&family, family.driving_level())?;
    let tight = OdeOptions {
        rtol: opts.rtol.min(1e-12),
        atol: opts.atol.min(1e-14),
        ..*opts
    };
    let geo = integrate_geodesic(&spray, &space.domain(), curve.first(), &curve.velocities()[0], t_end, &tight, cfg.segments)?;
    if !geo.completed() {
        return Err(GeoError::PositivityLost { t: geo.t_reached() });
    }
    let control = geo.path;
    let y = proper_variation(&curve, cfg.seed)?;
    let yc = proper_variation(&control, cfg.seed)?;
    let levels: Vec<usize> = (1..=family.levels()).collect();
    let rows = par_map(&levels, |&n| -> Result<_> {
        let r = el_residual(&family, n, &curve)?;
        let fv = first_variation(&family, n, &curve, &y, cfg.fd_step)?;
        let rc = el_residual(&family, n, &control)?;
        let fvc = first_variation(&family, n, &control, &yc, cfg.fd_step)?;
        Ok((r, fv, rc, fvc))
    });
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    let theta = CALIBRATION_FACTOR * rows.iter().map(|r| r.2.sup).fold(0.0, f64::max);
    let theta_v = CALIBRATION_FACTOR * rows.iter().map(|r| r.3.fd_value.abs()).fold(0.0, f64::max);
    let levels: Vec<RicciLevel> = rows
        .into_iter()
        .map(|(r, fv, rc, fvc)| RicciLevel {
            level: r.level,
            residual_sup: r.sup,
            position_term_sup: r.position_term_sup,
            momentum_term_sup: r.momentum_term_sup,
            exceeds: r.sup > theta && fv.fd_value.abs() > theta_v,
            first_variation: fv,
            control_residual_sup: rc.sup,
            control_first_variation: fvc.fd_value.abs(),
        })
        .collect();
    let flat_family = space.with_kind(SpdKind::Flat).family()?;
    let flat_residual_sup = (1..=flat_family.levels())
        .map(|n| el_residual(&flat_family, n, &curve).map(|r| r.sup))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    let verdict = |not: bool| if not { "not geodesic" } else { "geodesic" }.to_string();
    let some_residual = levels.iter().any(|l| l.residual_sup > theta);
    let some_variation = levels.iter().any(|l| l.first_variation.fd_value.abs() > theta_v);
    Ok(RicciReport {
        kind: space.kind,
        lambda,
        t_end,
        m: space.m,
        weights: space.weights.clone(),
        segments: cfg.segments,
        seed: cfg.seed,
        levels,
        theta,
        theta_v,
        flat_residual_sup,
        flat_verdict: verdict(flat_residual_sup > FLAT_RESIDUAL_TOL),
        verdict: verdict(some_residual && some_variation),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(kind: SpdKind) -> RicciReport {
        let space = SpdMetricSpace::new(2, vec![1.0, 2.0], kind).unwrap();
        ricci_nongeodesic_report(&space, 1.0, &Matrix::identity(2, 2), 0.25, &RicciConfig::default(), &OdeOptions::default()).unwrap()
    }

    #[test]
    fn curve_examples() {
        let g0 = Matrix::identity(2, 2);
        let c = einstein_ricci_curve(1.0, &g0, 0.25, 10).unwrap();
        assert_eq!(c.last(), &to_coords(&(&g0 * 0.5)));
        assert_eq!(c.velocities()[5], to_coords(&(&g0 * -2.0)));
        assert_eq!(c.first(), &to_coords(&g0));
        let still = einstein_ricci_curve(0.0, &g0, 1.0, 4).unwrap();
        assert!(still.nodes().iter().all(|x| x == &to_coords(&g0)));
    }

    #[test]
    fn horizon_past_collapse_is_rejected() {
        let g0 = Matrix::identity(2, 2);
        assert!(matches!(einstein_ricci_curve(1.0, &g0, 0.5, 10), Err(GeoError::PositivityLost { .. })));
        assert!(einstein_ricci_curve(1.0, &(-g0), 0.25, 10).is_err());
    }

    #[test]
    fn ebin_and_affine_are_not_geodesic() {
        for kind in [SpdKind::Ebin, SpdKind::AffineInvariant] {
            let r = report(kind);
            assert_eq!(r.verdict, "not geodesic", "{r:?}");
            assert!(r.levels.iter().all(|l| l.exceeds), "{r:?}");
            assert!(r.flat_residual_sup <= 1e-8);
            assert_eq!(r.flat_verdict, "geodesic");
            assert!(r.levels.iter().all(|l| l.momentum_term_sup > 1e-3));
        }
    }

    #[test]
    fn flat_kind_is_geodesic() {
        let r = report(SpdKind::Flat);
        assert_eq!(r.verdict, "geodesic");
        assert!(r.levels.iter().all(|l| l.residual_sup <= 1e-8));
    }

    #[test]
    fn scalar_weights_give_level_independent_verdicts() {
        let r = report(SpdKind::Ebin);
        let ratio = r.levels[1].residual_sup / r.levels[0].residual_sup;
        assert!((ratio - 2.0).abs() < 1e-9);
    }
}
