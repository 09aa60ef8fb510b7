//! Sampled estimate of the injectivity radius of `exp_x`.
//!
//! The estimate is the first geodesic speed `r` (at the driving level) at
//! which some sampled `exp_x(v)`, `‖v‖ = r`, shows a conjugate point (badly
//! conditioned or orientation-reversing differential), two samples collide,
//! or a geodesic leaves the atlas. It is an estimate, not a proof.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{GeoError, Result};
use crate::linalg::{condition_number, Matrix, Vector};
use crate::ode::OdeOptions;
use crate::parallel::par_map;
use crate::problem::{AtlasPoint, ChartedProblem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Certificate {
    /// Differential condition number above the threshold.
    Conditioning,
    /// Oriented determinant of the differential changed sign.
    Orientation,
    /// Two distinct samples landed within the collision distance.
    Collision,
    /// A sampled geodesic could not be followed to `t = 1`.
    ChartExit,
    /// No failure up to `r_max`.
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InjectivityConfig {
    pub samples: usize,
    pub seed: u64,
    pub r_max: f64,
    /// Number of equal steps scanned on `(0, r_max]` before bisection.
    pub scan_steps: usize,
    pub condition_limit: f64,
    pub collision_distance: f64,
    /// Relative bracket width at which bisection stops.
    pub rel_tol: f64,
}

impl Default for InjectivityConfig {
    fn default() -> Self {
        Self {
            samples: 16,
            seed: 42,
            r_max: 4.0,
            scan_steps: 16,
            condition_limit: 1e8,
            collision_distance: 1e-8,
            rel_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InjectivityEstimate {
    /// Midpoint of the final bracket, or `r_max` when nothing fired.
    pub radius: f64,
    pub lower: f64,
    pub upper: f64,
    pub certificate: Certificate,
}

/// Unit directions at the driving level: evenly spaced angles in 2D,
/// seeded Gaussian directions otherwise.
fn directions(problem: &ChartedProblem, x: &Vector, cfg: &InjectivityConfig) -> Vec<Vector> {
    let d = problem.dim();
    let n = problem.driving_level();
    let fam = problem.family();
    let raw: Vec<Vector> = if d == 2 {
        (0..cfg.samples)
            .map(|k| {
                let a = 2.0 * std::f64::consts::PI * (k as f64 + 0.5) / cfg.samples as f64;
                Vector::from_column_slice(&[a.cos(), a.sin()])
            })
            .collect()
    } else if d == 1 {
        vec![Vector::from_element(1, 1.0), Vector::from_element(1, -1.0)]
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        (0..cfg.samples).map(|_| Vector::from_fn(d, |_, _| StandardNormal.sample(&mut rng))).collect()
    };
    raw.into_iter().map(|u| &u / fam.norm(n, x, &u)).collect()
}

struct Probe {
    end: AtlasPoint,
    jacobian: Matrix,
}

fn probe(problem: &ChartedProblem, x: &Vector, v: &Vector, opts: &OdeOptions) -> Result<Probe> {
    let end = problem.exp_atlas(x, v, opts)?;
    let d = x.len();
    let step = 1e-6 * (1.0 + v.norm());
    let mut cols = Vec::with_capacity(d);
    for k in 0..d {
        let mut vp = v.clone();
        let mut vm = v.clone();
        vp[k] += step;
        vm[k] -= step;
        let p = problem.to_chart(&problem.exp_atlas(x, &vp, opts)?, end.chart)?;
        let m = problem.to_chart(&problem.exp_atlas(x, &vm, opts)?, end.chart)?;
        cols.push((p.point() - m.point()) / (2.0 * step));
    }
    Ok(Probe {
        end,
        jacobian: Matrix::from_columns(&cols),
    })
}

fn failure_at(problem: &ChartedProblem, x: &Vector, dirs: &[Vector], r: f64, cfg: &InjectivityConfig, opts: &OdeOptions) -> Option<Certificate> {
    let probes = par_map(dirs, |u| probe(problem, x, &(u * r), opts));
    let mut ok = Vec::with_capacity(probes.len());
    for p in probes {
        match p {
            Ok(p) => ok.push(p),
            Err(_) => return Some(Certificate::ChartExit),
        }
    }
    for p in &ok {
        if p.jacobian.determinant() * problem.orientation(p.end.chart) <= 0.0 {
            return Some(Certificate::Orientation);
        }
        if condition_number(&p.jacobian) > cfg.condition_limit {
            return Some(Certificate::Conditioning);
        }
    }
    for i in 0..ok.len() {
        for j in (i + 1)..ok.len() {
            let a = &ok[i].end;
            let Ok(b) = problem.to_chart(&ok[j].end, a.chart) else { continue };
            if (a.point() - b.point()).norm() < cfg.collision_distance {
                return Some(Certificate::Collision);
            }
        }
    }
    None
}

/// Scans `(0, r_max]` in equal steps, then bisects the first failing step.
pub fn injectivity_radius_estimate(problem: &ChartedProblem, x: &Vector, cfg: &InjectivityConfig, opts: &OdeOptions) -> Result<InjectivityEstimate> {
    if !(cfg.r_max > 0.0) {
        return Err(GeoError::InvalidParameter {
            name: "r_max".into(),
            reason: format!("must be positive, got {}", cfg.r_max),
        });
    }
    if cfg.samples == 0 || cfg.scan_steps == 0 {
        return Err(GeoError::InvalidParameter {
            name: "samples".into(),
            reason: "samples and scan_steps must be positive".into(),
        });
    }
    problem.domain().require(x)?;
    let dirs = directions(problem, x, cfg);
    let h = cfg.r_max / cfg.scan_steps as f64;
    let mut lo = 0.0;
    let mut hit = None;
    for k in 1..=cfg.scan_steps {
        let r = h * k as f64;
        if let Some(c) = failure_at(problem, x, &dirs, r, cfg, opts) {
            hit = Some((r, c));
            break;
        }
        lo = r;
    }
    let Some((mut hi, mut cert)) = hit else {
        return Ok(InjectivityEstimate {
            radius: cfg.r_max,
            lower: cfg.r_max,
            upper: cfg.r_max,
            certificate: Certificate::None,
        });
    };
    while hi - lo > cfg.rel_tol * hi {
        let mid = 0.5 * (lo + hi);
        match failure_at(problem, x, &dirs, mid, cfg, opts) {
            Some(c) => {
                hi = mid;
                cert = c;
            }
            None => lo = mid,
        }
    }
    Ok(InjectivityEstimate {
        radius: 0.5 * (lo + hi),
        lower: lo,
        upper: hi,
        certificate: cert,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::catalog_problem;
    use serde_json::json;

    #[test]
    fn zero_spray_returns_r_max() {
        let p = catalog_problem("flat", &json!(null)).unwrap();
        let cfg = InjectivityConfig {
            r_max: 3.0,
            ..Default::default()
        };
        let e = injectivity_radius_estimate(&p, &Vector::zeros(2), &cfg, &OdeOptions::default()).unwrap();
        assert_eq!(e.radius, 3.0);
        assert_eq!(e.certificate, Certificate::None);
    }

    #[test]
    fn round_sphere_estimate_is_pi() {
        let p = catalog_problem("sphere_stereographic", &json!(null)).unwrap();
        let e = injectivity_radius_estimate(&p, &Vector::zeros(2), &InjectivityConfig::default(), &OdeOptions::default()).unwrap();
        assert!((e.radius / std::f64::consts::PI - 1.0).abs() < 0.05, "{e:?}");
    }

    #[test]
    fn conformal_chart_exit() {
        // Only directions close to −e₁ reach the edge of the box.
        let p = catalog_problem("conformal", &json!(null)).unwrap();
        let cfg = InjectivityConfig {
            samples: 64,
            ..Default::default()
        };
        let e = injectivity_radius_estimate(&p, &Vector::zeros(2), &cfg, &OdeOptions::default()).unwrap();
        assert_eq!(e.certificate, Certificate::ChartExit);
        assert!(e.radius > 0.5 && e.radius < 4.0, "{e:?}");
    }

    #[test]
    fn rejects_nonpositive_r_max() {
        let p = catalog_problem("flat", &json!(null)).unwrap();
        let cfg = InjectivityConfig {
            r_max: 0.0,
            ..Default::default()
        };
        assert!(injectivity_radius_estimate(&p, &Vector::zeros(2), &cfg, &OdeOptions::default()).is_err());
    }
}
