//! Finslerian products, F-orthogonality and the sampled compatibility check
//! between nearby fibers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{GeoError, Result};
use crate::family::LevelMetricFamily;
use crate::linalg::{unit, Vector};
use crate::parallel::par_map;

/// `≪u, v≫_{n,x} = uᵀ G_n(x) v`.
pub fn finsler_product(family: &LevelMetricFamily, n: usize, x: &Vector, u: &Vector, v: &Vector) -> Result<f64> {
    family.check_level(n)?;
    family.domain().require(x)?;
    let d = family.dim();
    for w in [x, u, v] {
        if w.len() != d {
            return Err(GeoError::DimensionMismatch { expected: d, got: w.len() });
        }
    }
    Ok(family.product(n, x, u, v))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Orthogonality {
    pub orthogonal: bool,
    /// `≪u, v≫_n` for `n = 1..N`.
    pub products: Vec<f64>,
}

/// True iff `|≪u,v≫_n| ≤ tol·(1 + ‖u‖ⁿ‖v‖ⁿ)` at every level.
pub fn f_orthogonal(family: &LevelMetricFamily, x: &Vector, u: &Vector, v: &Vector, tol: f64) -> Result<Orthogonality> {
    let mut products = Vec::with_capacity(family.levels());
    let mut orthogonal = true;
    for n in 1..=family.levels() {
        let p = finsler_product(family, n, x, u, v)?;
        let scale = 1.0 + family.norm(n, x, u) * family.norm(n, x, v);
        orthogonal &= p.abs() <= tol * scale;
        products.push(p);
    }
    Ok(Orthogonality { orthogonal, products })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub point: Vec<f64>,
    pub direction: Vec<f64>,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelRatios {
    pub level: usize,
    /// Largest `‖f‖ⁿ_u / ‖f‖ⁿ_{x0}` and where it occurred.
    pub max: Witness,
    pub min: Witness,
    /// `max(max ratio, 1 / min ratio)`.
    pub worst_ratio: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinslerCheckReport {
    pub k: f64,
    pub radius: f64,
    pub samples: usize,
    pub seed: u64,
    pub levels: Vec<LevelRatios>,
    pub pass: bool,
}

fn gaussian(d: usize, rng: &mut ChaCha8Rng) -> Vector {
    loop {
        let v = Vector::from_fn(d, |_, _| StandardNormal.sample(rng));
        let n = v.norm();
        if n > 0.0 {
            return v / n;
        }
    }
}

/// Samples points `u` in the closed ball `B(x0, radius)` (half of them on
/// the boundary, plus the axis points) and unit directions `f` (axes plus
/// seeded Gaussian), recording the extreme ratios `‖f‖ⁿ_u / ‖f‖ⁿ_{x0}`.
pub fn finsler_check(family: &LevelMetricFamily, x0: &Vector, k: f64, radius: f64, samples: usize, seed: u64) -> Result<FinslerCheckReport> {
    if !(k > 1.0) {
        return Err(GeoError::InvalidParameter {
            name: "k".into(),
            reason: format!("must exceed 1, got {k}"),
        });
    }
    if !(radius > 0.0) || samples == 0 {
        return Err(GeoError::InvalidParameter {
            name: "radius".into(),
            reason: "radius and samples must be positive".into(),
        });
    }
    if !family.domain().contains_ball(x0, radius) {
        return Err(GeoError::InvalidParameter {
            name: "radius".into(),
            reason: format!("ball of radius {radius} leaves the chart domain"),
        });
    }
    let d = family.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points: Vec<Vector> = vec![x0.clone()];
    for i in 0..d {
        points.push(x0 + unit(d, i) * radius);
        points.push(x0 - unit(d, i) * radius);
    }
    for s in 0..samples {
        let dir = gaussian(d, &mut rng);
        let r = if s % 2 == 0 { radius } else { radius * rng.gen::<f64>().powf(1.0 / d as f64) };
        points.push(x0 + dir * r);
    }
    let mut dirs: Vec<Vector> = (0..d).map(|i| unit(d, i)).collect();
    for _ in 0..samples {
        dirs.push(gaussian(d, &mut rng));
    }
    let levels: Vec<usize> = (1..=family.levels()).collect();
    let reports = par_map(&levels, |&n| {
        let base: Vec<f64> = dirs.iter().map(|f| family.norm(n, x0, f)).collect();
        let mut max = (f64::NEG_INFINITY, 0, 0);
        let mut min = (f64::INFINITY, 0, 0);
        for (pi, u) in points.iter().enumerate() {
            let g = family.gram(n, u).expect("level checked");
            for (fi, f) in dirs.iter().enumerate() {
                if base[fi] == 0.0 {
                    continue;
                }
                let ratio = f.dot(&(&g * f)).max(0.0).sqrt() / base[fi];
                if ratio > max.0 {
                    max = (ratio, pi, fi);
                }
                if ratio < min.0 {
                    min = (ratio, pi, fi);
                }
            }
        }
        let witness = |(ratio, pi, fi): (f64, usize, usize)| Witness {
            point: points[pi].iter().copied().collect(),
            direction: dirs[fi].iter().copied().collect(),
            ratio,
        };
        let worst = max.0.max(1.0 / min.0);
        LevelRatios {
            level: n,
            max: witness(max),
            min: witness(min),
            worst_ratio: worst,
            pass: worst <= k,
        }
    });
    let pass = reports.iter().all(|r| r.pass);
    Ok(FinslerCheckReport {
        k,
        radius,
        samples,
        seed,
        levels: reports,
        pass,
    })
}
