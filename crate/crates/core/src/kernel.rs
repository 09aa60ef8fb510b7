//! Charts, smooth maps, vector fields and their flows.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::curve::{uniform_grid, CurvePath};
use crate::error::{GeoError, Result};
use crate::graded::GradedSeminormSpace;
use crate::linalg::{Matrix, Vector};
use crate::ode::{integrate, DenseSolution, OdeOptions, OdeStats, StopReason};
use crate::parallel::par_map;

/// Coordinate region on which a chart's closed forms are valid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ChartDomain {
    Whole,
    /// Open box `lo < x < hi`.
    Box {
        lo: Vec<f64>,
        hi: Vec<f64>,
    },
    /// Open Euclidean ball.
    Ball {
        center: Vec<f64>,
        radius: f64,
    },
    /// Symmetric positive-definite `m×m` matrices in upper-triangular
    /// coordinates.
    SpdCone {
        m: usize,
    },
}

impl ChartDomain {
    pub fn cube(dim: usize, half_width: f64) -> Self {
        ChartDomain::Box {
            lo: vec![-half_width; dim],
            hi: vec![half_width; dim],
        }
    }

    pub fn ball(dim: usize, radius: f64) -> Self {
        ChartDomain::Ball {
            center: vec![0.0; dim],
            radius,
        }
    }

    pub fn contains(&self, x: &Vector) -> bool {
        if x.iter().any(|v| !v.is_finite()) {
            return false;
        }
        match self {
            ChartDomain::Whole => true,
            ChartDomain::Box { lo, hi } => x.iter().zip(lo.iter().zip(hi.iter())).all(|(v, (a, b))| *a < *v && *v < *b),
            ChartDomain::Ball { center, radius } => {
                let d2: f64 = x.iter().zip(center).map(|(a, b)| (a - b).powi(2)).sum();
                d2.sqrt() < *radius
            }
            ChartDomain::SpdCone { m } => crate::spd::min_eigenvalue_of_coords(*m, x) > 0.0,
        }
    }

    /// True if the closed Euclidean ball `B(center, r)` lies in the domain.
    pub fn contains_ball(&self, center: &Vector, r: f64) -> bool {
        match self {
            ChartDomain::Whole => true,
            ChartDomain::Box { lo, hi } => center.iter().zip(lo.iter().zip(hi.iter())).all(|(c, (a, b))| *a < c - r && c + r < *b),
            ChartDomain::Ball { center: c0, radius } => {
                let d: f64 = center.iter().zip(c0).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                d + r < *radius
            }
            // A coordinate perturbation of size r moves the matrix by at most
            // sqrt(2)·r in Frobenius norm.
            ChartDomain::SpdCone { m } => crate::spd::min_eigenvalue_of_coords(*m, center) > std::f64::consts::SQRT_2 * r,
        }
    }

    pub fn require(&self, x: &Vector) -> Result<()> {
        if self.contains(x) {
            Ok(())
        } else {
            Err(GeoError::OutsideDomain {
                point: x.iter().copied().collect(),
            })
        }
    }
}

type MapFn = dyn Fn(&Vector) -> Vector + Send + Sync;
type JacFn = dyn Fn(&Vector) -> Matrix + Send + Sync;

/// A closed-form map `ℝᴰ → ℝᴷ` with an optional analytic Jacobian.
///
/// Vector fields are smooth maps with `K = D`; scalar functions use `K = 1`.
#[derive(Clone)]
pub struct SmoothMap {
    in_dim: usize,
    out_dim: usize,
    f: Arc<MapFn>,
    jac: Option<Arc<JacFn>>,
}

pub type VectorField = SmoothMap;

impl fmt::Debug for SmoothMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SmoothMap")
            .field("in_dim", &self.in_dim)
            .field("out_dim", &self.out_dim)
            .field("analytic_jacobian", &self.jac.is_some())
            .finish()
    }
}

impl SmoothMap {
    pub fn new(in_dim: usize, out_dim: usize, f: impl Fn(&Vector) -> Vector + Send + Sync + 'static) -> Self {
        Self {
            in_dim,
            out_dim,
            f: Arc::new(f),
            jac: None,
        }
    }

    pub fn field(dim: usize, f: impl Fn(&Vector) -> Vector + Send + Sync + 'static) -> Self {
        Self::new(dim, dim, f)
    }

    pub fn scalar(dim: usize, f: impl Fn(&Vector) -> f64 + Send + Sync + 'static) -> Self {
        Self::new(dim, 1, move |x| Vector::from_element(1, f(x)))
    }

    pub fn with_jacobian(mut self, j: impl Fn(&Vector) -> Matrix + Send + Sync + 'static) -> Self {
        self.jac = Some(Arc::new(j));
        self
    }

    /// Scalar gradient registered as the 1×D Jacobian.
    pub fn with_gradient(self, g: impl Fn(&Vector) -> Vector + Send + Sync + 'static) -> Self {
        self.with_jacobian(move |x| {
            let v = g(x);
            Matrix::from_row_slice(1, v.len(), v.as_slice())
        })
    }

    /// Constant field.
    pub fn constant(c: Vector) -> Self {
        let d = c.len();
        Self::field(d, move |_| c.clone()).with_jacobian(move |_| Matrix::zeros(d, d))
    }

    /// Linear field `x ↦ A x`.
    pub fn linear(a: Matrix) -> Self {
        let j = a.clone();
        Self::field(a.ncols(), move |x| &a * x).with_jacobian(move |_| j.clone())
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn has_jacobian(&self) -> bool {
        self.jac.is_some()
    }

    pub fn eval(&self, x: &Vector) -> Vector {
        (self.f)(x)
    }

    pub fn eval_scalar(&self, x: &Vector) -> f64 {
        (self.f)(x)[0]
    }

    pub fn analytic_jacobian(&self, x: &Vector) -> Option<Matrix> {
        self.jac.as_ref().map(|j| j(x))
    }

    /// Analytic Jacobian when registered, else central differences.
    pub fn jacobian(&self, x: &Vector) -> Matrix {
        self.analytic_jacobian(x)
            .unwrap_or_else(|| fd_jacobian(|p| self.eval(p), x, default_fd_step(x.norm())))
    }

    /// Pointwise `φ·Y` for a scalar map `φ` and field `Y`.
    pub fn scaled_by(&self, phi: &SmoothMap) -> SmoothMap {
        let (y, p) = (self.clone(), phi.clone());
        let out = SmoothMap::new(self.in_dim, self.out_dim, move |x| y.eval(x) * p.eval_scalar(x));
        match (self.jac.is_some(), phi.jac.is_some()) {
            (true, true) => {
                let (y, p) = (self.clone(), phi.clone());
                out.with_jacobian(move |x| y.jacobian(x) * p.eval_scalar(x) + y.eval(x) * p.jacobian(x))
            }
            _ => out,
        }
    }
}

/// `cbrt(ε)·(1 + ‖x‖)`: balances truncation against rounding for central
/// differences.
pub fn default_fd_step(x_norm: f64) -> f64 {
    f64::EPSILON.cbrt() * (1.0 + x_norm)
}

/// Column-wise central-difference Jacobian.
pub fn fd_jacobian(f: impl Fn(&Vector) -> Vector, x: &Vector, step: f64) -> Matrix {
    let d = x.len();
    let mut cols = Vec::with_capacity(d);
    for k in 0..d {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[k] += step;
        xm[k] -= step;
        cols.push((f(&xp) - f(&xm)) / (2.0 * step));
    }
    Matrix::from_columns(&cols)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Derivative {
    /// Analytic value if registered, otherwise the central difference.
    pub value: Vec<f64>,
    /// Central-difference value, always computed for cross-checks.
    pub fd_value: Vec<f64>,
    pub analytic: bool,
}

/// Directional derivative `dφ(x)h`.
pub fn directional_derivative(f: &SmoothMap, domain: &ChartDomain, x: &Vector, h: &Vector, step: Option<f64>) -> Result<Derivative> {
    let step = step.unwrap_or_else(|| default_fd_step(x.norm()));
    if !(step > 0.0) {
        return Err(GeoError::InvalidArgument("step must be positive".into()));
    }
    let xp = x + h * step;
    let xm = x - h * step;
    domain.require(x)?;
    domain.require(&xp)?;
    domain.require(&xm)?;
    let fd: Vector = (f.eval(&xp) - f.eval(&xm)) / (2.0 * step);
    let analytic = f.analytic_jacobian(x).map(|j| j * h);
    Ok(Derivative {
        value: analytic.as_ref().unwrap_or(&fd).iter().copied().collect(),
        fd_value: fd.iter().copied().collect(),
        analytic: analytic.is_some(),
    })
}

/// `[X,Y](x) = X'(x)Y(x) − Y'(x)X(x)`.
///
/// This is the chart bracket in the operator convention. The commutator of
/// the fields as derivations, `Y'X − X'Y`, is its negative; see
/// [`derivation_bracket`].
pub fn lie_bracket(x_field: &VectorField, y_field: &VectorField, domain: &ChartDomain, x: &Vector) -> Result<Vector> {
    domain.require(x)?;
    let jx = x_field.jacobian(x);
    let jy = y_field.jacobian(x);
    Ok(jx * y_field.eval(x) - jy * x_field.eval(x))
}

/// Commutator of `X` and `Y` acting as derivations: `XY(f) − YX(f)` has
/// coordinates `Y'X − X'Y`.
pub fn derivation_bracket(x_field: &VectorField, y_field: &VectorField, domain: &ChartDomain, x: &Vector) -> Result<Vector> {
    Ok(-lie_bracket(x_field, y_field, domain, x)?)
}

#[derive(Debug, Clone)]
pub struct FieldTrajectory {
    pub path: CurvePath,
    pub reason: StopReason,
    pub stats: OdeStats,
    /// Signed time actually reached.
    pub t_reached: f64,
}

fn solve_field(field: &VectorField, domain: &ChartDomain, x0: &Vector, t_end: f64, opts: &OdeOptions) -> DenseSolution {
    integrate(|y| field.eval(y), 0.0, x0, t_end, opts, |y| domain.contains(y))
}

/// Integral curve `ℓ' = X(ℓ)`, `ℓ(0) = x0`, sampled on `segments + 1` uniform
/// times over the reached interval (ascending even for negative `t_end`).
pub fn integrate_vector_field(
    field: &VectorField,
    domain: &ChartDomain,
    x0: &Vector,
    t_end: f64,
    opts: &OdeOptions,
    segments: usize,
) -> Result<FieldTrajectory> {
    if x0.len() != field.in_dim() {
        return Err(GeoError::DimensionMismatch {
            expected: field.in_dim(),
            got: x0.len(),
        });
    }
    domain.require(x0)?;
    let sol = solve_field(field, domain, x0, t_end, opts);
    let t_reached = sol.t_end();
    if t_reached == 0.0 {
        return Err(GeoError::BlowUp { t: 0.0 });
    }
    let (a, b) = if t_reached > 0.0 { (0.0, t_reached) } else { (t_reached, 0.0) };
    let times = uniform_grid(a, b, segments);
    let nodes: Vec<Vector> = times.iter().map(|t| sol.eval(*t)).collect();
    let velocities = nodes.iter().map(|x| field.eval(x)).collect();
    Ok(FieldTrajectory {
        path: CurvePath::new(times, nodes, velocities)?,
        reason: sol.reason,
        stats: sol.stats,
        t_reached,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlowTable {
    pub times: Vec<f64>,
    pub points: Vec<Vec<f64>>,
    /// `values[i][k] = F(points[i], times[k])`, `None` past an exit.
    pub values: Vec<Vec<Option<Vec<f64>>>>,
    /// `max ‖F_t(F_s(x)) − F_{t+s}(x)‖^N` over the sampled grid.
    pub group_law_defect: f64,
    /// `max ‖F_{−t}(F_t(x)) − x‖^N`.
    pub inverse_defect: f64,
    /// `max ‖F_0(x) − x‖^N`; zero by construction.
    pub identity_defect: f64,
}

/// Local flow `F(x,t)` on a symmetric time grid in `(−a, a)` with group-law
/// and inverse diagnostics.
#[allow(clippy::too_many_arguments)]
pub fn local_flow(
    field: &VectorField,
    domain: &ChartDomain,
    space: &GradedSeminormSpace,
    points: &[Vector],
    a: f64,
    half_steps: usize,
    opts: &OdeOptions,
) -> Result<FlowTable> {
    if !(a > 0.0) {
        return Err(GeoError::InvalidArgument("flow half-width must be positive".into()));
    }
    let k = half_steps.max(1) as i64;
    // Grid strictly inside (−a, a); index offset k maps to time 0.
    let times: Vec<f64> = (-(k - 1)..=k - 1).map(|i| a * i as f64 / k as f64).collect();
    let zero = (k - 1) as usize;

    struct PointFlow {
        values: Vec<Option<Vector>>,
        group: f64,
        inverse: f64,
    }

    let per_point = par_map(points, |x| {
        if !domain.contains(x) {
            return PointFlow {
                values: vec![None; times.len()],
                group: 0.0,
                inverse: 0.0,
            };
        }
        let fwd = solve_field(field, domain, x, a, opts);
        let bwd = solve_field(field, domain, x, -a, opts);
        let lookup = |t: f64| -> Option<Vector> {
            if t == 0.0 {
                Some(x.clone())
            } else if t > 0.0 && fwd.covers(t) && (fwd.completed() || t < fwd.t_end()) {
                Some(fwd.eval(t))
            } else if t < 0.0 && bwd.covers(t) && (bwd.completed() || t > bwd.t_end()) {
                Some(bwd.eval(t))
            } else {
                None
            }
        };
        let values: Vec<Option<Vector>> = times.iter().map(|t| lookup(*t)).collect();
        let mut group = 0.0f64;
        let mut inverse = 0.0f64;
        for si in 0..times.len() {
            let Some(fs) = &values[si] else { continue };
            if si == zero {
                continue;
            }
            let from_fs_f = solve_field(field, domain, fs, a, opts);
            let from_fs_b = solve_field(field, domain, fs, -a, opts);
            for (ti, t) in times.iter().enumerate() {
                let st = (si as i64 - zero as i64) + (ti as i64 - zero as i64);
                if st.abs() > k - 1 || ti == zero {
                    continue;
                }
                let branch = if *t > 0.0 { &from_fs_f } else { &from_fs_b };
                if !branch.completed() && (t.abs() > branch.t_end().abs()) {
                    continue;
                }
                let composed = branch.eval(*t);
                if let Some(target) = &values[(st + zero as i64) as usize] {
                    group = group.max(space.top_norm(&(composed.clone() - target)));
                }
                // F_{−s}(F_s(x)) when t = −s.
                if ti as i64 - zero as i64 == -(si as i64 - zero as i64) {
                    inverse = inverse.max(space.top_norm(&(composed - x)));
                }
            }
        }
        PointFlow { values, group, inverse }
    });

    let identity_defect = per_point
        .iter()
        .zip(points)
        .filter_map(|(p, x)| p.values[zero].as_ref().map(|v| space.top_norm(&(v - x))))
        .fold(0.0, f64::max);
    Ok(FlowTable {
        times: times.clone(),
        points: points.iter().map(|p| p.iter().copied().collect()).collect(),
        values: per_point
            .iter()
            .map(|p| p.values.iter().map(|v| v.as_ref().map(|v| v.iter().copied().collect())).collect())
            .collect(),
        group_law_defect: per_point.iter().map(|p| p.group).fold(0.0, f64::max),
        inverse_defect: per_point.iter().map(|p| p.inverse).fold(0.0, f64::max),
        identity_defect,
    })
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum ExitReason {
    BlowUp,
    LeftDomain,
    Horizon,
}

/// Existence interval `(t_minus, t_plus)` of the integral curve through `x`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FlowDomain {
    pub base: Vec<f64>,
    pub t_minus: f64,
    pub t_plus: f64,
    pub exit_minus: ExitReason,
    pub exit_plus: ExitReason,
    /// Bisection brackets for blow-up ends, `[lower, upper]`.
    pub bracket_minus: Option<[f64; 2]>,
    pub bracket_plus: Option<[f64; 2]>,
}

const BLOWUP_REL_WIDTH: f64 = 1e-6;

fn continue_one_way(field: &VectorField, domain: &ChartDomain, x: &Vector, horizon: f64, opts: &OdeOptions) -> (f64, ExitReason, Option<[f64; 2]>) {
    let sol = solve_field(field, domain, x, horizon, opts);
    match sol.reason {
        StopReason::Completed => (horizon, ExitReason::Horizon, None),
        StopReason::LeftDomain => (sol.t_end(), ExitReason::LeftDomain, None),
        StopReason::BlowUp | StopReason::MaxSteps => {
            let sign = horizon.signum();
            // Bisection on |τ| with the predicate "integration to τ collapses".
            let mut lo = 0.5 * sol.t_end().abs();
            let mut hi = horizon.abs();
            while hi - lo > BLOWUP_REL_WIDTH * hi {
                let mid = 0.5 * (lo + hi);
                let probe = solve_field(field, domain, x, sign * mid, opts);
                match probe.reason {
                    StopReason::Completed => lo = mid,
                    StopReason::LeftDomain => {
                        return (probe.t_end(), ExitReason::LeftDomain, None);
                    }
                    _ => hi = mid,
                }
            }
            (sign * 0.5 * (lo + hi), ExitReason::BlowUp, Some(if sign > 0.0 { [lo, hi] } else { [-hi, -lo] }))
        }
    }
}

/// Forward and backward continuation until the horizon, a chart exit or a
/// blow-up; blow-up times are bracketed to relative width 1e-6.
pub fn flow_domain(field: &VectorField, domain: &ChartDomain, x: &Vector, horizon: f64, opts: &OdeOptions) -> Result<FlowDomain> {
    if !(horizon > 0.0) {
        return Err(GeoError::InvalidArgument("horizon must be positive".into()));
    }
    domain.require(x)?;
    let (t_plus, exit_plus, bracket_plus) = continue_one_way(field, domain, x, horizon, opts);
    let (t_minus, exit_minus, bracket_minus) = continue_one_way(field, domain, x, -horizon, opts);
    Ok(FlowDomain {
        base: x.iter().copied().collect(),
        t_minus,
        t_plus,
        exit_minus,
        exit_plus,
        bracket_minus,
        bracket_plus,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::from_slice;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_3, FRAC_PI_6};

    fn rotation() -> VectorField {
        SmoothMap::linear(Matrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]))
    }

    fn square() -> VectorField {
        SmoothMap::field(1, |x| x.map(|v| v * v)).with_jacobian(|x| Matrix::from_element(1, 1, 2.0 * x[0]))
    }

    #[test]
    fn directional_derivative_of_linear_map() {
        let c = from_slice(&[1.5, -2.0]);
        let cc = c.clone();
        let f = SmoothMap::scalar(2, move |x| cc.dot(x));
        let x = from_slice(&[0.2, 0.7]);
        let h = from_slice(&[0.3, 0.1]);
        let d = directional_derivative(&f, &ChartDomain::Whole, &x, &h, None).unwrap();
        assert!(!d.analytic);
        assert!((d.value[0] - c.dot(&h)).abs() < 1e-9);
    }

    #[test]
    fn directional_derivative_of_squared_norm() {
        let f = SmoothMap::scalar(2, |x| x.norm_squared());
        let x = from_slice(&[0.4, -0.9]);
        let h = from_slice(&[1.0, 2.0]);
        let d = directional_derivative(&f, &ChartDomain::Whole, &x, &h, Some(1e-4)).unwrap();
        assert!((d.value[0] - 2.0 * x.dot(&h)).abs() < 1e-8);
    }

    #[test]
    fn directional_derivative_prefers_analytic() {
        // Symbolic: d/dx₁ e^{2x₁} = 2e^{2x₁}.
        let f = SmoothMap::scalar(2, |x| (2.0 * x[0]).exp()).with_gradient(|x| from_slice(&[2.0 * (2.0 * x[0]).exp(), 0.0]));
        let x = from_slice(&[0.3, 0.0]);
        let d = directional_derivative(&f, &ChartDomain::Whole, &x, &from_slice(&[1.0, 0.0]), None).unwrap();
        let oracle = 2.0 * 0.6f64.exp();
        assert!(d.analytic);
        assert!((d.value[0] - oracle).abs() < 1e-12);
        assert!((d.fd_value[0] - oracle).abs() < 1e-6);
    }

    #[test]
    fn directional_derivative_outside_domain() {
        let f = SmoothMap::scalar(1, |x| x[0]);
        let dom = ChartDomain::cube(1, 1.0);
        assert!(directional_derivative(&f, &dom, &from_slice(&[0.99]), &from_slice(&[1.0]), Some(0.1)).is_err());
    }

    #[test]
    fn brackets() {
        let x = from_slice(&[0.3, -1.2]);
        let c1 = SmoothMap::constant(from_slice(&[1.0, 2.0]));
        let c2 = SmoothMap::constant(from_slice(&[-1.0, 0.5]));
        assert_eq!(lie_bracket(&c1, &c2, &ChartDomain::Whole, &x).unwrap().norm(), 0.0);

        let a = Matrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, -1.0]);
        let b = Matrix::from_row_slice(2, 2, &[0.0, 1.0, 3.0, 1.0]);
        let br = lie_bracket(&SmoothMap::linear(a.clone()), &SmoothMap::linear(b.clone()), &ChartDomain::Whole, &x).unwrap();
        assert!((br - (&a * &b - &b * &a) * &x).norm() < 1e-14);

        // X = (x₂², 0), Y = (0, x₁): X'Y − Y'X = (2x₂·x₁, −x₂²) by hand.
        let xf = SmoothMap::field(2, |p| from_slice(&[p[1] * p[1], 0.0]));
        let yf = SmoothMap::field(2, |p| from_slice(&[0.0, p[0]]));
        let br = lie_bracket(&xf, &yf, &ChartDomain::Whole, &x).unwrap();
        let oracle = from_slice(&[2.0 * x[1] * x[0], -x[1] * x[1]]);
        assert!((br - oracle).norm() < 1e-6);
    }

    #[test]
    fn integral_curves() {
        let opts = OdeOptions::default();
        let exp = SmoothMap::linear(Matrix::identity(1, 1));
        let tr = integrate_vector_field(&exp, &ChartDomain::Whole, &from_slice(&[1.0]), 1.0, &opts, 10).unwrap();
        assert!((tr.path.last()[0] - 1f64.exp()).abs() < 1e-8);

        let tr = integrate_vector_field(&rotation(), &ChartDomain::Whole, &from_slice(&[1.0, 0.0]), FRAC_PI_2, &opts, 10).unwrap();
        assert!((tr.path.last() - from_slice(&[0.0, 1.0])).norm() < 1e-8);

        let tr = integrate_vector_field(&square(), &ChartDomain::Whole, &from_slice(&[1.0]), 0.5, &opts, 10).unwrap();
        assert!((tr.path.last()[0] - 2.0).abs() < 1e-8);
    }

    #[test]
    fn integral_curve_rejects_outside_start() {
        let dom = ChartDomain::cube(1, 1.0);
        assert!(integrate_vector_field(&square(), &dom, &from_slice(&[2.0]), 0.5, &OdeOptions::default(), 4).is_err());
    }

    #[test]
    fn flows() {
        let space = GradedSeminormSpace::euclidean(1);
        let exp = SmoothMap::linear(Matrix::identity(1, 1));
        let table = local_flow(&exp, &ChartDomain::Whole, &space, &[from_slice(&[1.0])], 1.0, 4, &OdeOptions::default()).unwrap();
        assert!(table.group_law_defect < 1e-8, "{}", table.group_law_defect);
        assert!(table.inverse_defect < 1e-8);
        assert_eq!(table.identity_defect, 0.0);

        let space2 = GradedSeminormSpace::euclidean(2);
        let x = from_slice(&[1.0, 0.0]);
        let dom = ChartDomain::Whole;
        let opts = OdeOptions::default();
        let a = integrate_vector_field(&rotation(), &dom, &x, FRAC_PI_6, &opts, 2).unwrap();
        let b = integrate_vector_field(&rotation(), &dom, a.path.last(), FRAC_PI_3, &opts, 2).unwrap();
        let c = integrate_vector_field(&rotation(), &dom, &x, FRAC_PI_2, &opts, 2).unwrap();
        assert!(space2.top_norm(&(b.path.last() - c.path.last())) < 1e-8);
    }

    #[test]
    fn flow_domains() {
        let opts = OdeOptions::default();
        let fd = flow_domain(&square(), &ChartDomain::Whole, &from_slice(&[2.0]), 10.0, &opts).unwrap();
        assert_eq!(fd.exit_plus, ExitReason::BlowUp);
        assert!((fd.t_plus - 0.5).abs() < 1e-6, "{}", fd.t_plus);
        assert_eq!(fd.exit_minus, ExitReason::Horizon);

        let lin = SmoothMap::linear(Matrix::identity(1, 1) * 0.1);
        let fd = flow_domain(&lin, &ChartDomain::Whole, &from_slice(&[1.0]), 10.0, &opts).unwrap();
        assert_eq!((fd.t_minus, fd.t_plus), (-10.0, 10.0));
        assert_eq!(fd.exit_plus, ExitReason::Horizon);

        let tan = SmoothMap::field(1, |x| x.map(|v| 1.0 + v * v));
        let fd = flow_domain(&tan, &ChartDomain::Whole, &from_slice(&[0.0]), 10.0, &opts).unwrap();
        assert!((fd.t_plus - FRAC_PI_2).abs() < 1e-6);
        assert!((fd.t_minus + FRAC_PI_2).abs() < 1e-6);

        let fd = flow_domain(&lin, &ChartDomain::cube(1, 2.0), &from_slice(&[1.0]), 100.0, &opts).unwrap();
        assert_eq!(fd.exit_plus, ExitReason::LeftDomain);
        assert!((fd.t_plus - 10.0 * 2f64.ln()).abs() < 1e-7);
    }
}
