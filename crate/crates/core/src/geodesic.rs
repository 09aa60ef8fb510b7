//! Geodesic integration, the exponential map, homogeneity checks and
//! shooting.

use serde::{Deserialize, Serialize};

use crate::curve::{uniform_grid, CurvePath};
use crate::error::{GeoError, Result};
use crate::graded::GradedSeminormSpace;
use crate::kernel::ChartDomain;
use crate::linalg::{condition_number, Matrix, Vector};
use crate::ode::{integrate, DenseSolution, OdeOptions, OdeStats, StopReason};
use crate::spray::Spray;

pub const DEFAULT_SEGMENTS: usize = 200;

#[derive(Debug, Clone)]
pub struct GeodesicSolution {
    pub path: CurvePath,
    pub x0: Vector,
    pub v0: Vector,
    pub stats: OdeStats,
    pub reason: StopReason,
    pub t_requested: f64,
    dense: DenseSolution,
}

fn split(state: &Vector, d: usize) -> (Vector, Vector) {
    (state.rows(0, d).into_owned(), state.rows(d, d).into_owned())
}

fn join(x: &Vector, v: &Vector) -> Vector {
    let d = x.len();
    let mut s = Vector::zeros(2 * d);
    s.rows_mut(0, d).copy_from(x);
    s.rows_mut(d, d).copy_from(v);
    s
}

impl GeodesicSolution {
    pub fn completed(&self) -> bool {
        self.reason == StopReason::Completed
    }

    pub fn t_reached(&self) -> f64 {
        self.dense.t_end()
    }

    /// Position and velocity from the integrator's dense output.
    pub fn state_at(&self, t: f64) -> (Vector, Vector) {
        split(&self.dense.eval(t), self.x0.len())
    }

    pub fn end_state(&self) -> (Vector, Vector) {
        split(self.dense.final_state(), self.x0.len())
    }

    /// Largest `‖ℓ'' − S(ℓ)(ℓ', ℓ')‖` on interior grid points, with `ℓ''` a
    /// central difference of the dense velocity.
    pub fn residual(&self, spray: &Spray) -> f64 {
        let d = self.x0.len();
        let times = self.path.times();
        let span = (times[times.len() - 1] - times[0]).abs();
        let delta = 1e-4 * span.max(1e-300);
        times[1..times.len() - 1]
            .iter()
            .map(|t| {
                let acc = self.dense.eval_derivative(*t, delta).rows(d, d).into_owned();
                let (x, v) = self.state_at(*t);
                (acc - spray.eval(&x, &v, &v)).norm()
            })
            .fold(0.0, f64::max)
    }
}

/// Solves `(x, v)' = (v, S(x)(v, v))` from `(x0, v0)` to `t_end`.
///
/// A chart exit or blow-up truncates the solution; check
/// [`GeodesicSolution::completed`].
pub fn integrate_geodesic(
    spray: &Spray,
    domain: &ChartDomain,
    x0: &Vector,
    v0: &Vector,
    t_end: f64,
    opts: &OdeOptions,
    segments: usize,
) -> Result<GeodesicSolution> {
    let d = spray.dim();
    for v in [x0, v0] {
        if v.len() != d {
            return Err(GeoError::DimensionMismatch { expected: d, got: v.len() });
        }
    }
    domain.require(x0)?;
    let dense = integrate(
        |s| spray.geodesic_rhs(s),
        0.0,
        &join(x0, v0),
        t_end,
        opts,
        |s| domain.contains(&s.rows(0, d).into_owned()),
    );
    let reached = dense.t_end();
    let (a, b) = if reached >= 0.0 { (0.0, reached) } else { (reached, 0.0) };
    if a == b {
        return Err(if t_end == 0.0 {
            GeoError::InvalidArgument("t_end must be nonzero".into())
        } else {
            GeoError::BlowUp { t: 0.0 }
        });
    }
    let times = uniform_grid(a, b, segments);
    let (nodes, vels): (Vec<_>, Vec<_>) = times.iter().map(|t| split(&dense.eval(*t), d)).unzip();
    let path = CurvePath::new(times, nodes, vels)?;
    Ok(GeodesicSolution {
        path,
        x0: x0.clone(),
        v0: v0.clone(),
        stats: dense.stats,
        reason: dense.reason,
        t_requested: t_end,
        dense,
    })
}

fn end_state(spray: &Spray, domain: &ChartDomain, x: &Vector, v: &Vector, t: f64, opts: &OdeOptions) -> Result<(Vector, Vector)> {
    let d = spray.dim();
    if x.len() != d || v.len() != d {
        return Err(GeoError::DimensionMismatch { expected: d, got: v.len() });
    }
    domain.require(x)?;
    if t == 0.0 {
        return Ok((x.clone(), v.clone()));
    }
    let sol = integrate(
        |s| spray.geodesic_rhs(s),
        0.0,
        &join(x, v),
        t,
        opts,
        |s| domain.contains(&s.rows(0, d).into_owned()),
    );
    match sol.reason {
        StopReason::Completed => Ok(split(sol.final_state(), d)),
        StopReason::LeftDomain => Err(GeoError::DomainExit { t: sol.t_end(), t_end: t }),
        StopReason::BlowUp | StopReason::MaxSteps => Err(GeoError::BlowUp { t: sol.t_end() }),
    }
}

/// `exp_x(v)`: position at `t = 1` of the geodesic with initial velocity `v`.
pub fn exp_map(spray: &Spray, domain: &ChartDomain, x: &Vector, v: &Vector, opts: &OdeOptions) -> Result<Vector> {
    end_state(spray, domain, x, v, 1.0, opts).map(|s| s.0)
}

/// Central-difference Jacobian of `v ↦ exp_x(v)`.
pub fn exp_jacobian(spray: &Spray, domain: &ChartDomain, x: &Vector, v: &Vector, opts: &OdeOptions, step: f64) -> Result<Matrix> {
    let d = x.len();
    let mut cols = Vec::with_capacity(d);
    for k in 0..d {
        let mut vp = v.clone();
        let mut vm = v.clone();
        vp[k] += step;
        vm[k] -= step;
        let p = exp_map(spray, domain, x, &vp, opts)?;
        let m = exp_map(spray, domain, x, &vm, opts)?;
        cols.push((p - m) / (2.0 * step));
    }
    Ok(Matrix::from_columns(&cols))
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct HomogeneityReport {
    pub s: f64,
    pub t: f64,
    /// `‖geo(x, s·v)(t) − geo(x, v)(s·t)‖^N`
    pub position_error: f64,
    /// `‖geo(x, s·v)'(t) − s·geo(x, v)'(s·t)‖^N`
    pub velocity_error: f64,
}

/// Checks `geo_{s·v}(t) = geo_v(s·t)` with velocities scaled by `s`.
#[allow(clippy::too_many_arguments)]
pub fn check_homogeneity(
    spray: &Spray,
    domain: &ChartDomain,
    space: &GradedSeminormSpace,
    x: &Vector,
    v: &Vector,
    s: f64,
    t: f64,
    opts: &OdeOptions,
) -> Result<HomogeneityReport> {
    let (p1, w1) = end_state(spray, domain, x, &(v * s), t, opts)?;
    let (p2, w2) = end_state(spray, domain, x, v, s * t, opts)?;
    Ok(HomogeneityReport {
        s,
        t,
        position_error: space.top_norm(&(p1 - p2)),
        velocity_error: space.top_norm(&(w1 - w2 * s)),
    })
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct ShootingConfig {
    pub max_iter: usize,
    pub tol: f64,
    /// Smallest Armijo step fraction.
    pub damping_floor: f64,
    /// Jacobians with a larger condition number abort the solve.
    pub singular_condition: f64,
    pub fd_step: Option<f64>,
}

impl Default for ShootingConfig {
    fn default() -> Self {
        Self {
            max_iter: 50,
            tol: 1e-10,
            damping_floor: 1e-4,
            singular_condition: 1e12,
            fd_step: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ShootingReport {
    pub velocity: Vec<f64>,
    pub iterations: usize,
    /// `‖exp_x(v_k) − y‖^N` per iterate, starting with the initial guess.
    pub residuals: Vec<f64>,
    /// Condition number of the last shooting Jacobian, if one was formed.
    pub jacobian_condition: Option<f64>,
}

impl ShootingReport {
    pub fn velocity(&self) -> Vector {
        Vector::from_column_slice(&self.velocity)
    }

    pub fn residual(&self) -> f64 {
        *self.residuals.last().unwrap_or(&f64::NAN)
    }
}

/// Damped Newton shooting for `v` with `exp_x(v) = y`.
#[allow(clippy::too_many_arguments)]
pub fn connect(
    spray: &Spray,
    domain: &ChartDomain,
    space: &GradedSeminormSpace,
    x: &Vector,
    y: &Vector,
    v_init: Option<&Vector>,
    cfg: &ShootingConfig,
    opts: &OdeOptions,
) -> Result<ShootingReport> {
    domain.require(y)?;
    let mut v = v_init.cloned().unwrap_or_else(|| y - x);
    let residual_of = |v: &Vector| -> Result<(Vector, f64)> {
        let r = exp_map(spray, domain, x, v, opts)? - y;
        let n = space.top_norm(&r);
        Ok((r, n))
    };
    // Shrink a guess whose geodesic leaves the chart.
    let mut first = residual_of(&v);
    for _ in 0..30 {
        match first {
            Err(GeoError::DomainExit { .. } | GeoError::BlowUp { .. }) => {
                v *= 0.5;
                first = residual_of(&v);
            }
            _ => break,
        }
    }
    let (mut r, mut rn) = first?;
    let mut residuals = vec![rn];
    let mut condition = None;
    let mut iterations = 0;
    while rn > cfg.tol {
        if iterations >= cfg.max_iter {
            return Err(GeoError::NoConvergence { iterations, residual: rn });
        }
        iterations += 1;
        let step = cfg.fd_step.unwrap_or(1e-6 * (1.0 + v.norm()));
        let jac = exp_jacobian(spray, domain, x, &v, opts, step)?;
        let cond = condition_number(&jac);
        condition = Some(cond);
        if !(cond < cfg.singular_condition) {
            return Err(GeoError::SingularJacobian { condition: cond });
        }
        let delta = jac.lu().solve(&(-&r)).ok_or(GeoError::SingularJacobian { condition: cond })?;
        // Armijo backtracking on the residual norm.
        let mut lambda = 1.0;
        loop {
            let trial = &v + &delta * lambda;
            match residual_of(&trial) {
                Ok((rt, nt)) if nt <= (1.0 - 1e-4 * lambda) * rn => {
                    v = trial;
                    r = rt;
                    rn = nt;
                    break;
                }
                _ => {
                    lambda *= 0.5;
                    if lambda < cfg.damping_floor {
                        return Err(GeoError::NoConvergence { iterations, residual: rn });
                    }
                }
            }
        }
        residuals.push(rn);
    }
    Ok(ShootingReport {
        velocity: v.iter().copied().collect(),
        iterations,
        residuals,
        jacobian_condition: condition,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::catalog_problem;
    use crate::linalg::from_slice;
    use crate::problem::ChartedProblem;
    use serde_json::json;

    fn problem(name: &str) -> ChartedProblem {
        catalog_problem(name, &json!(null)).unwrap()
    }

    fn all_catalog() -> Vec<ChartedProblem> {
        vec![
            catalog_problem("flat", &json!({"dim": 3, "weights": [1.0, 2.0]})).unwrap(),
            problem("conformal"),
            problem("sphere_stereographic"),
            catalog_problem("spd", &json!({"m": 2})).unwrap(),
            catalog_problem("spd", &json!({"m": 2, "kind": "ebin", "weights": [1.0, 2.0]})).unwrap(),
        ]
    }

    #[test]
    fn zero_spray_gives_straight_lines() {
        let p = problem("flat");
        let sol = integrate_geodesic(
            p.spray(),
            p.domain(),
            &from_slice(&[0.0, 0.0]),
            &from_slice(&[1.0, 0.0]),
            1.0,
            &OdeOptions::default(),
            10,
        )
        .unwrap();
        assert!(sol.completed());
        assert!((sol.end_state().0 - from_slice(&[1.0, 0.0])).norm() < 1e-14);
    }

    #[test]
    fn sphere_exp_from_origin() {
        let p = problem("sphere_stereographic");
        let y = exp_map(
            p.spray(),
            p.domain(),
            &from_slice(&[0.0, 0.0]),
            &from_slice(&[0.5, 0.0]),
            &OdeOptions::default(),
        )
        .unwrap();
        assert!((y[0] - 0.5f64.tan()).abs() < 1e-7);
        assert!(y[1].abs() < 1e-12);
    }

    #[test]
    fn sphere_ray_stays_on_axis() {
        let p = problem("sphere_stereographic");
        let sol = integrate_geodesic(
            p.spray(),
            p.domain(),
            &from_slice(&[0.0, 0.0]),
            &from_slice(&[0.5, 0.0]),
            2.0,
            &OdeOptions::default(),
            50,
        )
        .unwrap();
        assert!(sol.path.nodes().iter().all(|n| n[1].abs() < 1e-14));
    }

    #[test]
    fn sphere_connect_inverts_exp() {
        let p = problem("sphere_stereographic");
        let x = from_slice(&[0.0, 0.0]);
        let y = from_slice(&[0.5463025, 0.0]);
        let r = connect(
            p.spray(),
            p.domain(),
            &p.space,
            &x,
            &y,
            None,
            &ShootingConfig::default(),
            &OdeOptions::default(),
        )
        .unwrap();
        assert!((r.velocity() - from_slice(&[0.5, 0.0])).norm() < 1e-6);
        assert!(r.residual() <= 1e-10);
    }

    #[test]
    fn connect_reports_non_convergence() {
        let p = problem("sphere_stereographic");
        let cfg = ShootingConfig {
            max_iter: 1,
            tol: 1e-14,
            ..Default::default()
        };
        let e = connect(
            p.spray(),
            p.domain(),
            &p.space,
            &from_slice(&[0.0, 0.0]),
            &from_slice(&[1.0, 0.5]),
            None,
            &cfg,
            &OdeOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(e, GeoError::NoConvergence { .. }), "{e:?}");
    }

    #[test]
    fn homogeneity_on_catalog() {
        for p in all_catalog() {
            let d = p.dim();
            let x = p.reference_point.clone();
            let v = Vector::from_fn(d, |k, _| 0.2 * (k as f64 + 1.0).sin());
            for s in [-2.0, 0.5, 3.0] {
                let r = check_homogeneity(p.spray(), p.domain(), &p.space, &x, &v, s, 0.5, &OdeOptions::default()).unwrap();
                assert!(r.position_error <= 5e-7, "{} s={s}: {r:?}", p.name);
                assert!(r.velocity_error <= 50.0 * 1e-9 * 10.0, "{} s={s}: {r:?}", p.name);
            }
        }
    }

    #[test]
    fn exp_differential_at_zero_is_identity() {
        for p in all_catalog() {
            let d = p.dim();
            let j = exp_jacobian(p.spray(), p.domain(), &p.reference_point, &Vector::zeros(d), &OdeOptions::default(), 1e-4).unwrap();
            assert!((j - Matrix::identity(d, d)).amax() <= 1e-6, "{}", p.name);
        }
    }

    #[test]
    fn geodesic_residual_is_small() {
        for p in all_catalog() {
            let d = p.dim();
            let v = Vector::from_fn(d, |k, _| 0.3 * (k as f64 + 0.5).cos());
            let sol = integrate_geodesic(p.spray(), p.domain(), &p.reference_point, &v, 1.0, &OdeOptions::default(), 100).unwrap();
            assert!(sol.residual(p.spray()) <= 1e-6, "{}: {}", p.name, sol.residual(p.spray()));
        }
    }

    #[test]
    fn chart_exit_truncates() {
        let p = problem("conformal");
        let sol = integrate_geodesic(
            p.spray(),
            p.domain(),
            &from_slice(&[0.0, 0.0]),
            &from_slice(&[0.0, 10.0]),
            5.0,
            &OdeOptions::default(),
            10,
        )
        .unwrap();
        assert_eq!(sol.reason, StopReason::LeftDomain);
        assert!(sol.t_reached() < 5.0);
        assert!(matches!(
            exp_map(
                p.spray(),
                p.domain(),
                &from_slice(&[0.0, 0.0]),
                &from_slice(&[0.0, 30.0]),
                &OdeOptions::default()
            ),
            Err(GeoError::DomainExit { .. })
        ));
    }

    #[test]
    fn atlas_exp_reaches_past_the_chart() {
        let p = problem("sphere_stereographic");
        let opts = OdeOptions::default();
        // Distance 3 along e₁ lands at chart-0 radius tan(1.5) ≈ 14.1, beyond
        // the chart; in chart 1 that is 1/tan(1.5).
        let a = p.exp_atlas(&from_slice(&[0.0, 0.0]), &from_slice(&[1.5, 0.0]), &opts).unwrap();
        assert_eq!(a.chart, 1);
        assert!((a.point[0] - 1.0 / 1.5f64.tan()).abs() < 1e-7, "{a:?}");
    }
}
