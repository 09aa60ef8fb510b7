//! Lengths, energies, distances, Euler-Lagrange residuals, first variation,
//! minimality trials and the Gauss-lemma check.

use ordered_float::OrderedFloat;
use pathfinding::prelude::dijkstra;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::curve::CurvePath;
use crate::error::{GeoError, Result};
use crate::family::{LevelMetricFamily, StructureKind};
use crate::geodesic::{connect, integrate_geodesic, ShootingConfig, ShootingReport};
use crate::linalg::{unit, Vector};
use crate::ode::OdeOptions;
use crate::parallel::par_map;
use crate::problem::ChartedProblem;
use crate::spray::christoffel;

// Gauss-Legendre, 5 points on [-1, 1].
const GL_NODES: [f64; 5] = [
    -0.906_179_845_938_664,
    -0.538_469_310_105_683,
    0.0,
    0.538_469_310_105_683,
    0.906_179_845_938_664,
];
const GL_WEIGHTS: [f64; 5] = [
    0.236_926_885_056_189,
    0.478_628_670_499_366,
    0.568_888_888_888_889,
    0.478_628_670_499_366,
    0.236_926_885_056_189,
];

/// `∫ f(t) dt` over the curve's grid, 5-point Gauss-Legendre per segment.
fn integrate_over(curve: &CurvePath, f: impl Fn(f64) -> f64) -> f64 {
    let ts = curve.times();
    let mut total = 0.0;
    for w in ts.windows(2) {
        let (a, b) = (w[0], w[1]);
        let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
        let seg: f64 = GL_NODES.iter().zip(GL_WEIGHTS).map(|(x, wt)| wt * f(mid + half * x)).sum();
        total += half * seg;
    }
    total
}

/// `L_n(γ) = ∫ ‖γ'(t)‖ⁿ_{γ(t)} dt` on the Hermite interpolant.
pub fn length_n(family: &LevelMetricFamily, n: usize, curve: &CurvePath) -> Result<f64> {
    family.check_level(n)?;
    Ok(integrate_over(curve, |t| {
        let (x, v, _) = curve.eval_full(t);
        family.norm(n, &x, &v)
    }))
}

/// `E_n(γ) = ½ ∫ ≪γ', γ'≫_{n,γ} dt`.
pub fn energy_n(family: &LevelMetricFamily, n: usize, curve: &CurvePath) -> Result<f64> {
    family.check_level(n)?;
    Ok(0.5
        * integrate_over(curve, |t| {
            let (x, v, _) = curve.eval_full(t);
            family.product(n, &x, &v, &v)
        }))
}

/// `ρ = Σ 2^{-n} ρ_n / (1 + ρ_n)`.
pub fn combine_distances(levels: &[f64]) -> f64 {
    levels.iter().enumerate().map(|(i, r)| 0.5f64.powi(i as i32 + 1) * r / (1.0 + r)).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceMethod {
    Coincident,
    /// Length of the connecting geodesic of the driving spray.
    Geodesic,
    /// Shortest polygon on a coordinate grid; an upper bound only.
    PolygonalUpperBound,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelDistance {
    pub level: usize,
    pub value: f64,
    pub method: DistanceMethod,
    /// False for upper bounds and for geodesics of a spray that is not
    /// level-n's own.
    pub certified: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceReport {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub levels: Vec<LevelDistance>,
    pub rho: f64,
    pub certified: bool,
    pub shooting: Option<ShootingReport>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceOptions {
    pub shooting: ShootingConfig,
    /// Grid segments of the sampled connecting geodesic.
    pub segments: usize,
    /// Points per axis of the fallback grid (dimensions ≤ 3).
    pub grid_points: usize,
    pub fallback: bool,
}

impl Default for DistanceOptions {
    fn default() -> Self {
        Self {
            shooting: ShootingConfig::default(),
            segments: 400,
            grid_points: 41,
            fallback: true,
        }
    }
}

fn geodesic_certifies(problem: &ChartedProblem, n: usize) -> bool {
    let fam = problem.family();
    fam.kind() == StructureKind::ScalarScaled || n == fam.driving_level() || problem.spray().is_zero()
}

fn connecting_geodesic(problem: &ChartedProblem, x: &Vector, y: &Vector, opts: &OdeOptions, dopts: &DistanceOptions) -> Result<(CurvePath, ShootingReport)> {
    let report = connect(problem.spray(), problem.domain(), &problem.space, x, y, None, &dopts.shooting, opts)?;
    let sol = integrate_geodesic(problem.spray(), problem.domain(), x, &report.velocity(), 1.0, opts, dopts.segments)?;
    if !sol.completed() {
        return Err(GeoError::DomainExit {
            t: sol.t_reached(),
            t_end: 1.0,
        });
    }
    Ok((sol.path, report))
}

/// Level-n length of the straight segment from `a` to `b`.
fn segment_length(family: &LevelMetricFamily, n: usize, a: &Vector, b: &Vector) -> f64 {
    let v = b - a;
    GL_NODES
        .iter()
        .zip(GL_WEIGHTS)
        .map(|(s, w)| 0.5 * w * family.norm(n, &(a + &v * (0.5 * (s + 1.0))), &v))
        .sum()
}

/// Shortest polygon from `x` to `y` through a coordinate grid around both
/// points (the straight segment alone above three dimensions).
fn polygonal_upper_bound(problem: &ChartedProblem, n: usize, x: &Vector, y: &Vector, grid_points: usize) -> Result<f64> {
    let fam = problem.family();
    let domain = problem.domain();
    let d = x.len();
    let straight_ok = (0..=16).all(|k| domain.contains(&(x + (y - x) * (k as f64 / 16.0))));
    let straight = straight_ok.then(|| segment_length(fam, n, x, y));
    if d > 3 || grid_points < 2 {
        return straight.ok_or_else(|| GeoError::NoCertificate("no admissible polygon between the points".into()));
    }
    let pad = 0.5 * (y - x).amax() + 1e-3;
    let lo = Vector::from_fn(d, |i, _| x[i].min(y[i]) - pad);
    let hi = Vector::from_fn(d, |i, _| x[i].max(y[i]) + pad);
    let k = grid_points;
    let step = (&hi - &lo) / (k - 1) as f64;
    let point = |idx: &[usize]| Vector::from_fn(d, |i, _| lo[i] + step[i] * idx[i] as f64);
    // Node ids: 0 = x, 1 = y, 2.. = grid (row-major).
    let decode = |id: usize| -> Vec<usize> {
        let mut r = id - 2;
        let mut idx = vec![0; d];
        for slot in idx.iter_mut() {
            *slot = r % k;
            r /= k;
        }
        idx
    };
    let encode = |idx: &[usize]| -> usize { 2 + idx.iter().rev().fold(0, |acc, i| acc * k + i) };
    let pos = |id: usize| match id {
        0 => x.clone(),
        1 => y.clone(),
        _ => point(&decode(id)),
    };
    let cell = |p: &Vector| -> Vec<usize> {
        let base: Vec<usize> = (0..d).map(|i| (((p[i] - lo[i]) / step[i]).floor() as usize).min(k - 2)).collect();
        (0..(1usize << d))
            .map(|mask| encode(&(0..d).map(|i| base[i] + ((mask >> i) & 1)).collect::<Vec<_>>()))
            .collect()
    };
    let x_cell = cell(x);
    let y_cell = cell(y);
    let cost = |a: &Vector, b: &Vector| -> Option<OrderedFloat<f64>> {
        let mid = (a + b) * 0.5;
        (domain.contains(b) && domain.contains(&mid)).then(|| OrderedFloat(segment_length(fam, n, a, b)))
    };
    let offsets: Vec<Vec<i64>> = (0..3usize.pow(d as u32))
        .map(|mut c| {
            (0..d)
                .map(|_| {
                    let o = (c % 3) as i64 - 1;
                    c /= 3;
                    o
                })
                .collect()
        })
        .filter(|o: &Vec<i64>| o.iter().any(|v| *v != 0))
        .collect();
    let successors = |&id: &usize| -> Vec<(usize, OrderedFloat<f64>)> {
        let here = pos(id);
        let mut out = Vec::new();
        if id == 0 {
            for &g in &x_cell {
                out.extend(cost(&here, &pos(g)).map(|c| (g, c)));
            }
            if let Some(s) = straight {
                out.push((1, OrderedFloat(s)));
            }
            return out;
        }
        let idx = decode(id);
        for o in &offsets {
            let nb: Option<Vec<usize>> = idx
                .iter()
                .zip(o)
                .map(|(i, d)| {
                    let v = *i as i64 + d;
                    (0..k as i64).contains(&v).then_some(v as usize)
                })
                .collect();
            if let Some(nb) = nb {
                let nid = encode(&nb);
                out.extend(cost(&here, &pos(nid)).map(|c| (nid, c)));
            }
        }
        if y_cell.contains(&id) {
            out.extend(cost(&here, y).map(|c| (1, c)));
        }
        out
    };
    dijkstra(&0usize, successors, |id| *id == 1)
        .map(|(_, c)| c.0)
        .ok_or_else(|| GeoError::NoCertificate("no admissible polygon between the points".into()))
}

fn check_points(problem: &ChartedProblem, x: &Vector, y: &Vector) -> Result<()> {
    let d = problem.dim();
    for p in [x, y] {
        if p.len() != d {
            return Err(GeoError::DimensionMismatch { expected: d, got: p.len() });
        }
        problem.domain().require(p)?;
    }
    Ok(())
}

fn level_distances(
    problem: &ChartedProblem,
    levels: &[usize],
    x: &Vector,
    y: &Vector,
    opts: &OdeOptions,
    dopts: &DistanceOptions,
) -> Result<(Vec<LevelDistance>, Option<ShootingReport>)> {
    check_points(problem, x, y)?;
    let fam = problem.family();
    for &n in levels {
        fam.check_level(n)?;
    }
    if x == y {
        let out = levels
            .iter()
            .map(|&n| LevelDistance {
                level: n,
                value: 0.0,
                method: DistanceMethod::Coincident,
                certified: true,
            })
            .collect();
        return Ok((out, None));
    }
    match connecting_geodesic(problem, x, y, opts, dopts) {
        Ok((path, report)) => {
            let out = levels
                .iter()
                .map(|&n| {
                    Ok(LevelDistance {
                        level: n,
                        value: length_n(fam, n, &path)?,
                        method: DistanceMethod::Geodesic,
                        certified: geodesic_certifies(problem, n),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((out, Some(report)))
        }
        Err(e) if dopts.fallback && e.is_numerical() => {
            let out = levels
                .iter()
                .map(|&n| {
                    Ok(LevelDistance {
                        level: n,
                        value: polygonal_upper_bound(problem, n, x, y, dopts.grid_points)?,
                        method: DistanceMethod::PolygonalUpperBound,
                        certified: false,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((out, None))
        }
        Err(e) if e.is_numerical() => Err(GeoError::NoCertificate(format!("shooting failed ({}) and fallback is disabled", e.reason()))),
        Err(e) => Err(e),
    }
}

/// `ρ_n(x, y)`: geodesic length when shooting succeeds, otherwise a flagged
/// polygonal upper bound.
pub fn distance_n(problem: &ChartedProblem, n: usize, x: &Vector, y: &Vector, opts: &OdeOptions, dopts: &DistanceOptions) -> Result<LevelDistance> {
    Ok(level_distances(problem, &[n], x, y, opts, dopts)?.0.remove(0))
}

pub fn finsler_distance(problem: &ChartedProblem, x: &Vector, y: &Vector, opts: &OdeOptions, dopts: &DistanceOptions) -> Result<DistanceReport> {
    let levels: Vec<usize> = (1..=problem.levels()).collect();
    let (levels, shooting) = level_distances(problem, &levels, x, y, opts, dopts)?;
    let values: Vec<f64> = levels.iter().map(|l| l.value).collect();
    Ok(DistanceReport {
        x: x.iter().copied().collect(),
        y: y.iter().copied().collect(),
        rho: combine_distances(&values),
        certified: levels.iter().all(|l| l.certified),
        levels,
        shooting,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElResidual {
    pub level: usize,
    pub times: Vec<f64>,
    /// `r(t) = ∂ₓL − d/dt[G_n(ℓ)ℓ']` per grid point.
    pub residuals: Vec<Vec<f64>>,
    /// Sup of `‖r‖` over interior grid points.
    pub sup: f64,
    /// Sup of `‖∂ₓL‖` over interior grid points.
    pub position_term_sup: f64,
    /// Sup of `‖d/dt[G_n(ℓ)ℓ']‖` over interior grid points.
    pub momentum_term_sup: f64,
}

/// Euler-Lagrange residual of `L(x, v) = ½vᵀG_n(x)v` along the curve. The
/// momentum derivative is a three-point difference over neighbouring nodes
/// (one-sided at the ends).
pub fn el_residual(family: &LevelMetricFamily, n: usize, curve: &CurvePath) -> Result<ElResidual> {
    family.check_level(n)?;
    let m = curve.len();
    if m < 3 {
        return Err(GeoError::InvalidArgument("need at least three grid points".into()));
    }
    let ts = curve.times();
    let d = curve.dim();
    let idx: Vec<usize> = (0..m).collect();
    let terms = par_map(&idx, |&i| {
        let x = &curve.nodes()[i];
        let v = &curve.velocities()[i];
        let g = family.gram(n, x)?;
        let dg = family.gram_partials(n, x)?;
        let dl = Vector::from_fn(d, |k, _| 0.5 * v.dot(&(&dg[k] * v)));
        Ok((dl, g * v))
    });
    let terms = terms.into_iter().collect::<Result<Vec<_>>>()?;
    let p = |i: usize| &terms[i].1;
    let deriv = |i: usize| -> Vector {
        // Three-point (nonuniform) derivative at node i using nodes a < b < c.
        let (a, b, c) = if i == 0 {
            (0, 1, 2)
        } else if i == m - 1 {
            (m - 3, m - 2, m - 1)
        } else {
            (i - 1, i, i + 1)
        };
        let (ta, tb, tc, t) = (ts[a], ts[b], ts[c], ts[i]);
        let la = ((t - tb) + (t - tc)) / ((ta - tb) * (ta - tc));
        let lb = ((t - ta) + (t - tc)) / ((tb - ta) * (tb - tc));
        let lc = ((t - ta) + (t - tb)) / ((tc - ta) * (tc - tb));
        p(a) * la + p(b) * lb + p(c) * lc
    };
    let mut residuals = Vec::with_capacity(m);
    let (mut sup, mut d1, mut d2) = (0.0f64, 0.0f64, 0.0f64);
    for (i, (dl, _)) in terms.iter().enumerate() {
        let dp = deriv(i);
        let r = dl - &dp;
        if i > 0 && i < m - 1 {
            sup = sup.max(r.norm());
            d1 = d1.max(dl.norm());
            d2 = d2.max(dp.norm());
        }
        residuals.push(r.iter().copied().collect());
    }
    Ok(ElResidual {
        level: n,
        times: ts.to_vec(),
        residuals,
        sup,
        position_term_sup: d1,
        momentum_term_sup: d2,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FirstVariation {
    /// Richardson-extrapolated central difference of `ε ↦ E_n(ℓ + εY)`.
    pub fd_value: f64,
    /// `−∫ ≪Y, ∇ⁿ_{ℓ'}ℓ'≫_n dt`.
    pub formula_value: f64,
    pub difference: f64,
}

const PROPER_TOL: f64 = 1e-12;

/// Both first-variation values of `E_n` along `curve` for the proper
/// variation field `variation` (nodes `Y`, velocities `Y'`).
pub fn first_variation(family: &LevelMetricFamily, n: usize, curve: &CurvePath, variation: &CurvePath, h: f64) -> Result<FirstVariation> {
    family.check_level(n)?;
    if curve.times() != variation.times() {
        return Err(GeoError::GridMismatch);
    }
    let (s, e) = (variation.first().norm(), variation.last().norm());
    if s > PROPER_TOL || e > PROPER_TOL {
        return Err(GeoError::NotProper { start: s, end: e });
    }
    if !(h > 0.0) {
        return Err(GeoError::InvalidArgument("h must be positive".into()));
    }
    let energy_at = |eps: f64| -> Result<f64> {
        let shifted = curve.map(|t, x, v| {
            let i = curve.times().partition_point(|s| *s < t);
            (x + &variation.nodes()[i] * eps, v + &variation.velocities()[i] * eps)
        })?;
        energy_n(family, n, &shifted)
    };
    let central = |eps: f64| -> Result<f64> { Ok((energy_at(eps)? - energy_at(-eps)?) / (2.0 * eps)) };
    let fd = (4.0 * central(0.5 * h)? - central(h)?) / 3.0;
    let failed = std::cell::RefCell::new(None);
    let formula = -integrate_over(curve, |t| {
        let (x, v, a) = curve.eval_full(t);
        let y = variation.position(t);
        match christoffel(family, n, &x, &v, &v) {
            Ok(gam) => family.product(n, &x, &y, &(a + gam)),
            Err(err) => {
                failed.borrow_mut().get_or_insert(err);
                f64::NAN
            }
        }
    });
    if let Some(err) = failed.into_inner() {
        return Err(err);
    }
    Ok(FirstVariation {
        fd_value: fd,
        formula_value: formula,
        difference: (fd - formula).abs(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinimalityReport {
    pub trials: usize,
    pub amplitude: f64,
    pub seed: u64,
    pub slack: f64,
    /// `L_n` of the base curve per level.
    pub base_lengths: Vec<f64>,
    /// Trials in which some competitor was shorter at some level.
    pub violations: usize,
    /// Smallest `L_n(ı) − L_n(ℓ)` over trials, signs and levels.
    pub min_margin: f64,
    /// Perturbations redrawn because they left the chart.
    pub resampled: usize,
    pub pass: bool,
}

pub const MINIMALITY_SLACK: f64 = 1e-9;
const MAX_REDRAWS: usize = 20;

/// Seeded bump `B(τ) = τ(1−τ)(a + bτ)` with `‖a‖ + ‖b‖ = 4`, so `‖B‖ ≤ 1`.
fn bump(d: usize, rng: &mut ChaCha8Rng) -> (Vector, Vector) {
    let mut g = || Vector::from_fn(d, |_, _| StandardNormal.sample(&mut *rng));
    let (a, b) = (g(), g());
    let s = 4.0 / (a.norm() + b.norm()).max(1e-300);
    (a * s, b * s)
}

fn perturbed(curve: &CurvePath, a: &Vector, b: &Vector, amp: f64) -> Result<CurvePath> {
    let (t0, t1) = (curve.start(), curve.end());
    let span = t1 - t0;
    curve.map(|t, x, v| {
        let tau = (t - t0) / span;
        let bv = (a + b * tau) * (tau * (1.0 - tau));
        let db = ((a + b * tau) * (1.0 - 2.0 * tau) + b * (tau * (1.0 - tau))) / span;
        (x + bv * amp, v + db * amp)
    })
}

/// Compares `L_n(ℓ)` with `L_n(ℓ ± amplitude·B)` for `trials` seeded bumps at
/// every level. Each trial draws from its own sub-seed.
pub fn minimality_test(problem: &ChartedProblem, curve: &CurvePath, trials: usize, amplitude: f64, seed: u64) -> Result<MinimalityReport> {
    let fam = problem.family();
    let domain = problem.domain();
    let levels: Vec<usize> = (1..=fam.levels()).collect();
    let base = levels.iter().map(|&n| length_n(fam, n, curve)).collect::<Result<Vec<_>>>()?;
    let ids: Vec<usize> = (0..trials).collect();
    let outcomes = par_map(&ids, |&trial| -> Result<(f64, usize)> {
        let sub = seed.wrapping_add((trial as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let mut rng = ChaCha8Rng::seed_from_u64(sub);
        for redraw in 0..=MAX_REDRAWS {
            let (a, b) = bump(curve.dim(), &mut rng);
            let plus = perturbed(curve, &a, &b, amplitude)?;
            let minus = perturbed(curve, &a, &b, -amplitude)?;
            let inside =
                |c: &CurvePath| c.nodes().iter().all(|x| domain.contains(x)) && c.times().windows(2).all(|w| domain.contains(&c.position(0.5 * (w[0] + w[1]))));
            if !(inside(&plus) && inside(&minus)) {
                continue;
            }
            let mut margin = f64::INFINITY;
            for (k, &n) in levels.iter().enumerate() {
                for c in [&plus, &minus] {
                    margin = margin.min(length_n(fam, n, c)? - base[k]);
                }
            }
            return Ok((margin, redraw));
        }
        Err(GeoError::InvalidParameter {
            name: "amplitude".into(),
            reason: "perturbations keep leaving the chart".into(),
        })
    });
    let outcomes = outcomes.into_iter().collect::<Result<Vec<_>>>()?;
    let violations = outcomes.iter().filter(|(m, _)| *m < -MINIMALITY_SLACK).count();
    Ok(MinimalityReport {
        trials,
        amplitude,
        seed,
        slack: MINIMALITY_SLACK,
        base_lengths: base,
        violations,
        min_margin: outcomes.iter().map(|o| o.0).fold(f64::INFINITY, f64::min),
        resampled: outcomes.iter().map(|o| o.1).sum(),
        pass: violations == 0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussReport {
    pub epsilon: f64,
    pub s_samples: usize,
    pub t_samples: usize,
    /// Max over samples and levels of `|≪∂₁ı, ∂₂ı≫_n| / (‖∂₁ı‖ⁿ‖∂₂ı‖ⁿ + 1e-30)`.
    pub orthogonality_defect: f64,
    /// Max relative variation of `s ↦ ≪∂₁ı, ∂₁ı≫_n`.
    pub speed_defect: f64,
}

/// Gauss-lemma check on `ı(s, t) = exp_x(s·j(t))`, `j` the unit circle of the
/// driving level in the plane of the first two coordinates.
///
/// `∂₁ı` is the geodesic velocity; `∂₂ı` is a central difference in `t`.
/// Integration runs at `rtol ≤ 1e-12` so that the difference is not
/// dominated by integrator noise.
pub fn gauss_check(problem: &ChartedProblem, x: &Vector, epsilon: f64, s_samples: usize, t_samples: usize, opts: &OdeOptions) -> Result<GaussReport> {
    let d = problem.dim();
    if d < 2 {
        return Err(GeoError::InvalidArgument("the Gauss check needs dimension ≥ 2".into()));
    }
    if !(epsilon > 0.0) || s_samples == 0 || t_samples == 0 {
        return Err(GeoError::InvalidParameter {
            name: "epsilon".into(),
            reason: "epsilon and sample counts must be positive".into(),
        });
    }
    problem.domain().require(x)?;
    let fam = problem.family();
    let nd = problem.driving_level();
    let tight = OdeOptions {
        rtol: opts.rtol.min(1e-12),
        atol: opts.atol.min(1e-14),
        ..*opts
    };
    let j = |t: f64| {
        let u = unit(d, 0) * t.cos() + unit(d, 1) * t.sin();
        &u / fam.norm(nd, x, &u)
    };
    let exp_state = |v: &Vector, s: f64| -> Result<(Vector, Vector)> {
        let sol = integrate_geodesic(problem.spray(), problem.domain(), x, v, s, &tight, 1)?;
        if !sol.completed() {
            return Err(GeoError::DomainExit { t: sol.t_reached(), t_end: s });
        }
        Ok(sol.end_state())
    };
    let h = 1e-4;
    let grid: Vec<(usize, usize)> = (0..t_samples).flat_map(|ti| (1..=s_samples).map(move |si| (ti, si))).collect();
    let results = par_map(&grid, |&(ti, si)| -> Result<(f64, Vec<f64>)> {
        let t = 2.0 * std::f64::consts::PI * ti as f64 / t_samples as f64;
        let s = epsilon * si as f64 / s_samples as f64;
        // exp_x(s·j) is the geodesic with velocity j at time s.
        let (p, d1) = exp_state(&j(t), s)?;
        let (pp, _) = exp_state(&j(t + h), s)?;
        let (pm, _) = exp_state(&j(t - h), s)?;
        let d2 = (pp - pm) / (2.0 * h);
        let mut worst = 0.0f64;
        let mut speeds = Vec::with_capacity(fam.levels());
        for n in 1..=fam.levels() {
            let num = fam.product(n, &p, &d1, &d2).abs();
            worst = worst.max(num / (fam.norm(n, &p, &d1) * fam.norm(n, &p, &d2) + 1e-30));
            speeds.push(fam.product(n, &p, &d1, &d1));
        }
        Ok((worst, speeds))
    });
    let results = results.into_iter().collect::<Result<Vec<_>>>()?;
    let orth = results.iter().map(|r| r.0).fold(0.0, f64::max);
    let mut speed = 0.0f64;
    for ti in 0..t_samples {
        let t = 2.0 * std::f64::consts::PI * ti as f64 / t_samples as f64;
        let j0 = j(t);
        for si in 0..s_samples {
            for (k, n) in (1..=fam.levels()).enumerate() {
                let s0 = fam.product(n, x, &j0, &j0);
                let sv = results[ti * s_samples + si].1[k];
                speed = speed.max((sv - s0).abs() / s0);
            }
        }
    }
    Ok(GaussReport {
        epsilon,
        s_samples,
        t_samples,
        orthogonality_defect: orth,
        speed_defect: speed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::catalog_problem;
    use crate::linalg::from_slice;
    use serde_json::json;
    use std::f64::consts::PI;

    fn flat(weights: &[f64]) -> ChartedProblem {
        catalog_problem("flat", &json!({ "weights": weights })).unwrap()
    }

    fn line(x0: &[f64], v: &[f64], segments: usize) -> CurvePath {
        let (x0, v) = (from_slice(x0), from_slice(v));
        let v2 = v.clone();
        CurvePath::from_fn(0.0, 1.0, segments, move |t| &x0 + &v * t, move |_| v2.clone()).unwrap()
    }

    fn circle(segments: usize, t1: f64) -> CurvePath {
        CurvePath::from_fn(0.0, t1, segments, |t| from_slice(&[t.cos(), t.sin()]), |t| from_slice(&[-t.sin(), t.cos()])).unwrap()
    }

    #[test]
    fn length_and_energy_of_lines() {
        let p = flat(&[1.0]);
        let c = line(&[1.0, 2.0], &[3.0, 4.0], 7);
        assert!((length_n(p.family(), 1, &c).unwrap() - 5.0).abs() < 1e-13);
        assert!((energy_n(p.family(), 1, &c).unwrap() - 12.5).abs() < 1e-12);
        let still = line(&[1.0, 2.0], &[0.0, 0.0], 3);
        assert_eq!(length_n(p.family(), 1, &still).unwrap(), 0.0);
        assert_eq!(energy_n(p.family(), 1, &still).unwrap(), 0.0);
    }

    #[test]
    fn reparametrization_invariance() {
        let p = flat(&[1.0]);
        let (x0, v) = (from_slice(&[0.5, -1.0]), from_slice(&[1.0, 2.0]));
        let (x1, v1) = (x0.clone(), v.clone());
        let c = CurvePath::from_fn(0.0, 1.0, 10, move |t| &x1 + &v1 * (t * t), move |t| &v * (2.0 * t)).unwrap();
        assert!((length_n(p.family(), 1, &c).unwrap() - 5f64.sqrt()).abs() <= 1e-9);
        let conf = catalog_problem("conformal", &json!(null)).unwrap();
        let c1 = CurvePath::from_fn(0.0, 1.0, 400, |t| from_slice(&[t, t * t]), |t| from_slice(&[1.0, 2.0 * t])).unwrap();
        let c2 = CurvePath::from_fn(
            0.0,
            1.0,
            400,
            |t| from_slice(&[t.powi(3), t.powi(6)]),
            |t| from_slice(&[3.0 * t * t, 6.0 * t.powi(5)]),
        )
        .unwrap();
        let (l1, l2) = (length_n(conf.family(), 1, &c1).unwrap(), length_n(conf.family(), 1, &c2).unwrap());
        assert!((l1 - l2).abs() <= 1e-9, "{l1} {l2}");
    }

    #[test]
    fn energy_length_inequality() {
        let conf = catalog_problem("conformal", &json!({"weights": [1.0, 3.0]})).unwrap();
        let c = CurvePath::from_fn(0.0, 2.0, 50, |t| from_slice(&[0.3 * t, t.sin()]), |t| from_slice(&[0.3, t.cos()])).unwrap();
        for n in 1..=2 {
            let l = length_n(conf.family(), n, &c).unwrap();
            let e = energy_n(conf.family(), n, &c).unwrap();
            assert!(l * l <= 2.0 * 2.0 * e + 1e-9);
        }
        let p = flat(&[1.0]);
        let c = line(&[0.0, 0.0], &[1.0, 1.0], 5);
        let (l, e) = (length_n(p.family(), 1, &c).unwrap(), energy_n(p.family(), 1, &c).unwrap());
        assert!((l * l - 2.0 * e).abs() <= 1e-9);
    }

    #[test]
    fn quadrature_converges_at_fourth_order() {
        let conf = catalog_problem("conformal", &json!(null)).unwrap();
        let curve = |m| CurvePath::from_fn(0.0, 1.0, m, |t| from_slice(&[0.5 * t.sin(), t * t]), |t| from_slice(&[0.5 * t.cos(), 2.0 * t])).unwrap();
        let reference = length_n(conf.family(), 1, &curve(2000)).unwrap();
        let e1 = (length_n(conf.family(), 1, &curve(8)).unwrap() - reference).abs();
        let e2 = (length_n(conf.family(), 1, &curve(16)).unwrap() - reference).abs();
        assert!(e1 >= 4.0 * e2, "{e1} {e2}");
        let reference = energy_n(conf.family(), 1, &curve(2000)).unwrap();
        let e1 = (energy_n(conf.family(), 1, &curve(8)).unwrap() - reference).abs();
        let e2 = (energy_n(conf.family(), 1, &curve(16)).unwrap() - reference).abs();
        assert!(e1 >= 4.0 * e2, "{e1} {e2}");
    }

    #[test]
    fn combined_distance_formula() {
        assert_eq!(combine_distances(&[0.0, 0.0]), 0.0);
        assert_eq!(combine_distances(&[1.0]), 0.25);
        assert!((combine_distances(&[1.0, 2.0]) - 0.4166667).abs() < 1e-7);
    }

    #[test]
    fn flat_distances() {
        let p = catalog_problem("flat", &json!({"dim": 3, "weights": [1.0, 4.0]})).unwrap();
        let (x, y) = (from_slice(&[0.0, 1.0, 2.0]), from_slice(&[1.0, -1.0, 0.5]));
        let r = finsler_distance(&p, &x, &y, &OdeOptions::default(), &DistanceOptions::default()).unwrap();
        let e = (&x - &y).norm();
        assert!((r.levels[0].value - e).abs() <= 1e-8);
        assert!((r.levels[1].value - 2.0 * e).abs() <= 1e-8);
        assert!((r.rho - combine_distances(&[e, 2.0 * e])).abs() <= 1e-12);
        assert!(r.certified);
        let same = finsler_distance(&p, &x, &x, &OdeOptions::default(), &DistanceOptions::default()).unwrap();
        assert_eq!(same.rho, 0.0);
    }

    #[test]
    fn sphere_distance() {
        let p = catalog_problem("sphere_stereographic", &json!(null)).unwrap();
        for r in [0.1, 0.5, 1.0] {
            let d = distance_n(
                &p,
                1,
                &from_slice(&[0.0, 0.0]),
                &from_slice(&[r, 0.0]),
                &OdeOptions::default(),
                &DistanceOptions::default(),
            )
            .unwrap();
            assert!((d.value - 2.0 * f64::atan(r)).abs() <= 1e-6, "{r}: {d:?}");
            assert_eq!(d.method, DistanceMethod::Geodesic);
        }
    }

    #[test]
    fn distance_symmetry() {
        let p = catalog_problem("conformal", &json!({"weights": [1.0, 2.0]})).unwrap();
        let (x, y) = (from_slice(&[0.1, -0.4]), from_slice(&[-0.5, 0.6]));
        let o = OdeOptions::default();
        let a = finsler_distance(&p, &x, &y, &o, &DistanceOptions::default()).unwrap();
        let b = finsler_distance(&p, &y, &x, &o, &DistanceOptions::default()).unwrap();
        assert!((a.rho - b.rho).abs() <= 1e-8);
    }

    #[test]
    fn polygonal_fallback_is_flagged() {
        let p = catalog_problem("sphere_stereographic", &json!(null)).unwrap();
        let dopts = DistanceOptions {
            shooting: ShootingConfig {
                max_iter: 0,
                ..Default::default()
            },
            ..Default::default()
        };
        let (x, y) = (from_slice(&[0.0, 0.0]), from_slice(&[0.5, 0.0]));
        let d = distance_n(&p, 1, &x, &y, &OdeOptions::default(), &dopts).unwrap();
        assert_eq!(d.method, DistanceMethod::PolygonalUpperBound);
        assert!(!d.certified);
        assert!(d.value >= 2.0 * 0.5f64.atan() - 1e-9);
        let strict = DistanceOptions { fallback: false, ..dopts };
        assert!(matches!(
            distance_n(&p, 1, &x, &y, &OdeOptions::default(), &strict),
            Err(GeoError::NoCertificate(_))
        ));
    }

    #[test]
    fn el_residual_examples() {
        let p = flat(&[1.0]);
        let r = el_residual(p.family(), 1, &line(&[0.0, 1.0], &[2.0, -1.0], 20)).unwrap();
        assert!(r.sup < 1e-12);
        let c = el_residual(p.family(), 1, &circle(10000, 2.0 * PI)).unwrap();
        assert!((c.sup - 1.0).abs() <= 1e-6, "{}", c.sup);
        let conf = catalog_problem("conformal", &json!(null)).unwrap();
        let sol = integrate_geodesic(
            conf.spray(),
            conf.domain(),
            &from_slice(&[0.0, 0.0]),
            &from_slice(&[0.6, -0.8]),
            1.0,
            &OdeOptions::default(),
            1000,
        )
        .unwrap();
        assert!(el_residual(conf.family(), 1, &sol.path).unwrap().sup <= 1e-5);
    }

    #[test]
    fn first_variation_examples() {
        let p = flat(&[1.0]);
        let bumpy = |c: &CurvePath| {
            CurvePath::from_fn(
                c.start(),
                c.end(),
                c.len() - 1,
                |s| from_slice(&[(PI * s).sin() * s.cos(), (PI * s).sin() * s.sin()]),
                |s| {
                    from_slice(&[
                        PI * (PI * s).cos() * s.cos() - (PI * s).sin() * s.sin(),
                        PI * (PI * s).cos() * s.sin() + (PI * s).sin() * s.cos(),
                    ])
                },
            )
            .unwrap()
        };
        let c = circle(400, 1.0);
        let fv = first_variation(p.family(), 1, &c, &bumpy(&c), 1e-3).unwrap();
        assert!(fv.difference <= 1e-4, "{fv:?}");
        assert!(fv.formula_value.abs() > 0.1);
        let l = line(&[0.0, 0.0], &[1.0, 0.5], 50);
        let fv = first_variation(p.family(), 1, &l, &bumpy(&l), 1e-3).unwrap();
        assert!(fv.fd_value.abs() <= 1e-9 && fv.formula_value.abs() <= 1e-9);
        let conf = catalog_problem("conformal", &json!(null)).unwrap();
        let sol = integrate_geodesic(
            conf.spray(),
            conf.domain(),
            &from_slice(&[0.0, 0.0]),
            &from_slice(&[0.6, -0.8]),
            1.0,
            &OdeOptions::default(),
            400,
        )
        .unwrap();
        let fv = first_variation(conf.family(), 1, &sol.path, &bumpy(&sol.path), 1e-3).unwrap();
        assert!(fv.fd_value.abs() <= 1e-5 && fv.formula_value.abs() <= 1e-5, "{fv:?}");
        let improper = line(&[1.0, 0.0], &[0.0, 0.0], 50);
        assert!(matches!(first_variation(p.family(), 1, &l, &improper, 1e-3), Err(GeoError::NotProper { .. })));
    }

    #[test]
    fn minimality() {
        let p = flat(&[1.0, 2.0]);
        let r = minimality_test(&p, &line(&[0.0, 0.0], &[1.0, 0.3], 100), 100, 0.1, 42).unwrap();
        assert!(r.pass, "{r:?}");
        let sphere = catalog_problem("sphere_stereographic", &json!(null)).unwrap();
        let sol = integrate_geodesic(
            sphere.spray(),
            sphere.domain(),
            &from_slice(&[0.0, 0.0]),
            &from_slice(&[1.0, 0.5]),
            1.0,
            &OdeOptions::default(),
            200,
        )
        .unwrap();
        let r = minimality_test(&sphere, &sol.path, 100, 0.05, 42).unwrap();
        assert!(r.pass, "{r:?}");
        let bent = CurvePath::from_fn(
            0.0,
            1.0,
            100,
            |t| from_slice(&[t, 0.5 * (PI * t).sin()]),
            |t| from_slice(&[1.0, 0.5 * PI * (PI * t).cos()]),
        )
        .unwrap();
        let r = minimality_test(&p, &bent, 100, 0.01, 42).unwrap();
        assert!(r.violations >= 95, "{r:?}");
    }

    #[test]
    fn gauss_lemma() {
        let o = OdeOptions::default();
        for (name, eps) in [("flat", 1.0), ("sphere_stereographic", 0.5), ("conformal", 0.3)] {
            let p = catalog_problem(name, &json!({"weights": [1.0, 2.0]})).unwrap();
            let r = gauss_check(&p, &Vector::zeros(2), eps, 4, 8, &o).unwrap();
            assert!(r.orthogonality_defect <= 1e-5, "{name}: {r:?}");
            assert!(r.speed_defect <= 1e-6, "{name}: {r:?}");
        }
    }
}
