//! Covariant derivatives: the Koszul construction from a level metric, the
//! chart formula from a spray, derivatives along curves and parallel
//! transport.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::curve::CurvePath;
use crate::error::{GeoError, Result};
use crate::family::LevelMetricFamily;
use crate::kernel::{default_fd_step, derivation_bracket, SmoothMap, VectorField};
use crate::linalg::{spd_solve, unit, Matrix, Vector};
use crate::ode::{integrate, OdeOptions, StopReason};
use crate::problem::ChartedProblem;
use crate::spray::{Spray, SprayProvenance};

/// Central difference of `φ(x + εw)` at `ε = 0`.
fn along(phi: impl Fn(&Vector) -> Vector, x: &Vector, w: &Vector) -> Vector {
    let wn = w.norm();
    if wn == 0.0 {
        return phi(x) * 0.0;
    }
    let eps = default_fd_step(x.norm()) / wn.max(1.0);
    (phi(&(x + w * eps)) - phi(&(x - w * eps))) / (2.0 * eps)
}

/// `∇ⁿ_X Y (x)` from the Koszul formula with coordinate fields `Z = e_k`:
///
/// `2⟨∇_X Y, Z⟩ = X⟨Y,Z⟩ + Y⟨Z,X⟩ − Z⟨X,Y⟩ + ⟨[X,Y],Z⟩ − ⟨[Y,Z],X⟩ + ⟨[Z,X],Y⟩`
///
/// with `[·,·]` the derivation commutator. Lie derivatives of the products
/// are central differences.
pub fn koszul_covariant(family: &LevelMetricFamily, n: usize, xf: &VectorField, yf: &VectorField, x: &Vector) -> Result<Vector> {
    family.check_level(n)?;
    let domain = family.domain();
    domain.require(x)?;
    let d = family.dim();
    let g = family.gram(n, x)?;
    let (xv, yv) = (xf.eval(x), yf.eval(x));
    let (jx, jy) = (xf.jacobian(x), yf.jacobian(x));
    let gram = |p: &Vector| family.gram(n, p).expect("level checked");
    // X⟨Y, e_k⟩ and Y⟨X, e_k⟩ for all k at once.
    let a = along(|p| gram(p) * yf.eval(p), x, &xv);
    let b = along(|p| gram(p) * xf.eval(p), x, &yv);
    let c = Vector::from_fn(d, |k, _| {
        along(|p| Vector::from_element(1, xf.eval(p).dot(&(gram(p) * yf.eval(p)))), x, &unit(d, k))[0]
    });
    let bracket = derivation_bracket(xf, yf, domain, x)?;
    // [Y, e_k] = −Y'e_k and [e_k, X] = X'e_k.
    let k_vec = a + b - c + &g * bracket + jy.transpose() * (&g * &xv) + jx.transpose() * (&g * &yv);
    let w = spd_solve(&g, &(k_vec * 0.5)).ok_or_else(|| GeoError::SingularGram {
        level: n,
        point: x.iter().copied().collect(),
    })?;
    if w.iter().any(|v| !v.is_finite()) {
        return Err(GeoError::SingularGram {
            level: n,
            point: x.iter().copied().collect(),
        });
    }
    Ok(w)
}

/// Chart formula `(∇_X Y)(x) = Y'(x)X(x) − S(x)(X(x), Y(x))`.
pub fn chart_covariant(spray: &Spray, xf: &VectorField, yf: &VectorField, x: &Vector) -> Vector {
    let xv = xf.eval(x);
    yf.jacobian(x) * &xv - spray.eval(x, &xv, &yf.eval(x))
}

/// `γ'(t) − S(λ(t))(λ'(t), γ(t))` for a lift `γ` sampled on the curve's grid.
pub fn covariant_along_curve(spray: &Spray, curve: &CurvePath, lift: &CurvePath, t: f64) -> Result<Vector> {
    if curve.times() != lift.times() {
        return Err(GeoError::GridMismatch);
    }
    if !(curve.start() <= t && t <= curve.end()) {
        return Err(GeoError::InvalidArgument(format!("t = {t} outside [{}, {}]", curve.start(), curve.end())));
    }
    let (lam, dlam, _) = curve.eval_full(t);
    let (gam, dgam, _) = lift.eval_full(t);
    Ok(dgam - spray.eval(&lam, &dlam, &gam))
}

/// Solves `γ' = S(μ)(μ', γ)`, `γ(start) = v0` along the curve and samples
/// the lift on the curve's grid.
pub fn parallel_transport(spray: &Spray, curve: &CurvePath, v0: &Vector, opts: &OdeOptions) -> Result<CurvePath> {
    let d = curve.dim();
    if v0.len() != d {
        return Err(GeoError::DimensionMismatch { expected: d, got: v0.len() });
    }
    let rhs = |gam: &Vector, t: f64| -> Vector {
        let (mu, dmu, _) = curve.eval_full(t);
        spray.eval(&mu, &dmu, gam)
    };
    // Time rides along as the last state component.
    let mut y0 = Vector::zeros(d + 1);
    y0.rows_mut(0, d).copy_from(v0);
    y0[d] = curve.start();
    let sol = integrate(
        |y| {
            let mut out = Vector::zeros(d + 1);
            out.rows_mut(0, d).copy_from(&rhs(&y.rows(0, d).into_owned(), y[d]));
            out[d] = 1.0;
            out
        },
        curve.start(),
        &y0,
        curve.end(),
        opts,
        |_| true,
    );
    match sol.reason {
        StopReason::Completed => {}
        StopReason::LeftDomain => unreachable!("transport has no domain constraint"),
        _ => return Err(GeoError::BlowUp { t: sol.t_end() }),
    }
    let mut nodes = Vec::with_capacity(curve.len());
    let mut vels = Vec::with_capacity(curve.len());
    for &t in curve.times() {
        let g = sol.eval(t).rows(0, d).into_owned();
        vels.push(rhs(&g, t));
        nodes.push(g);
    }
    CurvePath::new(curve.times().to_vec(), nodes, vels)
}

/// Largest relative change of `‖γ(t)‖ⁿ_{μ(t)}` over the grid.
pub fn transported_norm_drift(family: &LevelMetricFamily, n: usize, curve: &CurvePath, lift: &CurvePath) -> Result<f64> {
    family.check_level(n)?;
    if curve.times() != lift.times() {
        return Err(GeoError::GridMismatch);
    }
    let norms: Vec<f64> = curve.nodes().iter().zip(lift.nodes()).map(|(x, g)| family.norm(n, x, g)).collect();
    let n0 = norms[0];
    if n0 == 0.0 {
        return Ok(norms.iter().fold(0.0, |a, b| a.max(*b)));
    }
    Ok(norms.iter().map(|v| (v - n0).abs() / n0).fold(0.0, f64::max))
}

/// `‖(∂₁∂₂ℓ − S(∂₁ℓ, ∂₂ℓ)) − (∂₂∂₁ℓ − S(∂₂ℓ, ∂₁ℓ))‖` for a surface
/// `ℓ(s, t)`, with partials by nested central differences.
pub fn mixed_covariant_defect(spray: &Spray, surface: &SmoothMap, s: f64, t: f64, step: f64) -> Vector {
    let l = |s: f64, t: f64| surface.eval(&Vector::from_column_slice(&[s, t]));
    let d1 = |s: f64, t: f64| (l(s + step, t) - l(s - step, t)) / (2.0 * step);
    let d2 = |s: f64, t: f64| (l(s, t + step) - l(s, t - step)) / (2.0 * step);
    let d12 = (d2(s + step, t) - d2(s - step, t)) / (2.0 * step);
    let d21 = (d1(s, t + step) - d1(s, t - step)) / (2.0 * step);
    let p = l(s, t);
    let (a, b) = (d1(s, t), d2(s, t));
    (d12 - spray.eval(&p, &a, &b)) - (d21 - spray.eval(&p, &b, &a))
}

/// Quadratic field `a + B(x − c) + diag(q)(x − c)²` with its Jacobian.
fn polynomial_field(center: &Vector, rng: &mut ChaCha8Rng, scale: f64) -> VectorField {
    let d = center.len();
    let mut g = || -> f64 {
        let z: f64 = StandardNormal.sample(&mut *rng);
        scale * z
    };
    let a = Vector::from_fn(d, |_, _| g());
    let b = Matrix::from_fn(d, d, |_, _| g());
    let q = Vector::from_fn(d, |_, _| g());
    let (c1, b1, q1) = (center.clone(), b.clone(), q.clone());
    let c2 = center.clone();
    SmoothMap::field(d, move |x| {
        let y = x - &c1;
        &a + &b1 * &y + q1.component_mul(&y.component_mul(&y))
    })
    .with_jacobian(move |x| {
        let y = x - &c2;
        &b + Matrix::from_diagonal(&(q.component_mul(&y) * 2.0))
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConnectionReport {
    pub level: usize,
    pub samples: usize,
    pub seed: u64,
    pub spray: SprayProvenance,
    /// `max |Z⟨X,Y⟩ − ⟨∇_Z X, Y⟩ − ⟨X, ∇_Z Y⟩|`, `∇` from the spray.
    pub compatibility_residual: f64,
    /// `max ‖∇_X Y − ∇_Y X − [X,Y]‖`.
    pub torsion_residual: f64,
    /// `max ‖Koszul ∇ⁿ_X Y − chart ∇_X Y‖`.
    pub koszul_chart_agreement: f64,
    pub tolerance: f64,
    pub compatible: bool,
    pub torsion_free: bool,
    /// Set when any residual exceeds the tolerance.
    pub flagged: bool,
}

pub const CONNECTION_TOL: f64 = 1e-5;

/// Samples points uniformly in the Euclidean ball of `radius` about the
/// problem's reference point (rejecting points outside the chart) and
/// seeded quadratic fields `X, Y, Z`.
pub fn connection_property_report(problem: &ChartedProblem, n: usize, spray: &Spray, samples: usize, seed: u64, radius: f64) -> Result<ConnectionReport> {
    let family = problem.family();
    family.check_level(n)?;
    let domain = family.domain();
    let c = &problem.reference_point;
    let d = problem.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let field_scale = 0.5;
    let (mut compat, mut torsion, mut agree) = (0.0f64, 0.0f64, 0.0f64);
    let mut taken = 0;
    let mut attempts = 0;
    while taken < samples {
        attempts += 1;
        if attempts > 100 * samples.max(1) {
            return Err(GeoError::InvalidParameter {
                name: "radius".into(),
                reason: "could not sample points inside the chart".into(),
            });
        }
        let dir = Vector::from_fn(d, |_, _| StandardNormal.sample(&mut rng));
        let u: f64 = rand::Rng::gen(&mut rng);
        let x = c + dir.normalize() * (radius * u.powf(1.0 / d as f64));
        let xf = polynomial_field(c, &mut rng, field_scale);
        let yf = polynomial_field(c, &mut rng, field_scale);
        let zf = polynomial_field(c, &mut rng, field_scale);
        if !domain.contains_ball(&x, 1e-3) {
            continue;
        }
        taken += 1;
        let g = family.gram(n, &x)?;
        let (xv, yv, zv) = (xf.eval(&x), yf.eval(&x), zf.eval(&x));
        let dzx = chart_covariant(spray, &zf, &xf, &x);
        let dzy = chart_covariant(spray, &zf, &yf, &x);
        let lie = along(|p| Vector::from_element(1, family.product(n, p, &xf.eval(p), &yf.eval(p))), &x, &zv)[0];
        compat = compat.max((lie - dzx.dot(&(&g * &yv)) - xv.dot(&(&g * &dzy))).abs());
        let dxy = chart_covariant(spray, &xf, &yf, &x);
        let dyx = chart_covariant(spray, &yf, &xf, &x);
        let br = derivation_bracket(&xf, &yf, domain, &x)?;
        torsion = torsion.max((&dxy - dyx - br).amax());
        let kz = koszul_covariant(family, n, &xf, &yf, &x)?;
        agree = agree.max((kz - dxy).amax());
    }
    let compatible = compat <= CONNECTION_TOL;
    let torsion_free = torsion <= CONNECTION_TOL;
    Ok(ConnectionReport {
        level: n,
        samples,
        seed,
        spray: spray.provenance().clone(),
        compatibility_residual: compat,
        torsion_residual: torsion,
        koszul_chart_agreement: agree,
        tolerance: CONNECTION_TOL,
        compatible,
        torsion_free,
        flagged: !(compatible && torsion_free && agree <= CONNECTION_TOL),
    })
}
