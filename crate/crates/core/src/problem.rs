//! Charted problems: a model space, chart domain, level metric family and
//! driving spray, optionally with a second chart.

use serde::{Deserialize, Serialize};

use crate::error::{GeoError, Result};
use crate::family::LevelMetricFamily;
use crate::graded::GradedSeminormSpace;
use crate::kernel::{ChartDomain, SmoothMap};
use crate::linalg::{Matrix, Vector};
use crate::ode::{integrate, OdeOptions, StopReason};
use crate::spray::Spray;

/// Geometry of one chart.
#[derive(Debug, Clone)]
pub struct Chart {
    /// Where the chart's closed forms are valid.
    pub domain: ChartDomain,
    /// Sub-region in which geodesics stay in this chart before switching to
    /// the other one. Equal to `domain` for single-chart problems.
    pub working: ChartDomain,
    pub family: LevelMetricFamily,
    pub spray: Spray,
}

/// Transition maps between chart 0 and chart 1.
#[derive(Debug, Clone)]
pub struct Transition {
    pub forward: SmoothMap,
    pub backward: SmoothMap,
    /// Sign of `det D(forward)`, constant on the overlap.
    pub orientation: f64,
}

impl Transition {
    fn map(&self, from: usize) -> &SmoothMap {
        if from == 0 {
            &self.forward
        } else {
            &self.backward
        }
    }

    /// Moves a tangent vector `(x, v)` from chart `from` to the other chart.
    pub fn push(&self, from: usize, x: &Vector, v: &Vector) -> (Vector, Vector) {
        let m = self.map(from);
        (m.eval(x), m.jacobian(x) * v)
    }
}

#[derive(Debug, Clone)]
pub struct ChartedProblem {
    pub name: String,
    pub params: serde_json::Value,
    /// Model space (level Gram matrices at the reference point).
    pub space: GradedSeminormSpace,
    pub reference_point: Vector,
    pub charts: Vec<Chart>,
    pub transition: Option<Transition>,
    /// Independent closed form for the driving spray, when one is known.
    pub oracle: Option<SprayOracle>,
}

/// Hand-derived spray formulas kept apart from the Gram-partials pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SprayOracle {
    Zero,
    /// `G = e^{2φ}·I`: `S(u,v) = −(∇φ·v)u − (∇φ·u)v + (u·v)∇φ`.
    /// `gradient` is `∇φ` as a closed form chosen by `shape`.
    Conformal {
        shape: ConformalShape,
    },
    /// `S(h,k) = ½(h g⁻¹ k + k g⁻¹ h)` in matrix form.
    SpdAffine {
        m: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "phi", rename_all = "snake_case")]
pub enum ConformalShape {
    /// `φ = c·x`
    Linear { c: Vec<f64> },
    /// `φ = ln(2R/(1+|x|²))`
    Stereographic { radius: f64 },
}

impl ConformalShape {
    pub fn grad_phi(&self, x: &Vector) -> Vector {
        match self {
            ConformalShape::Linear { c } => Vector::from_column_slice(c),
            ConformalShape::Stereographic { .. } => x * (-2.0 / (1.0 + x.norm_squared())),
        }
    }
}

impl SprayOracle {
    pub fn eval(&self, x: &Vector, u: &Vector, v: &Vector) -> Vector {
        match self {
            SprayOracle::Zero => Vector::zeros(x.len()),
            SprayOracle::Conformal { shape } => {
                let g = shape.grad_phi(x);
                -(u * g.dot(v)) - v * g.dot(u) + &g * u.dot(v)
            }
            SprayOracle::SpdAffine { m } => {
                let p = crate::spd::to_matrix(*m, x)
                    .try_inverse()
                    .unwrap_or_else(|| Matrix::from_element(*m, *m, f64::NAN));
                let h = crate::spd::to_matrix(*m, u);
                let k = crate::spd::to_matrix(*m, v);
                crate::spd::to_coords(&((&h * &p * &k + &k * &p * &h) * 0.5))
            }
        }
    }
}

/// A point together with the chart it is expressed in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtlasPoint {
    pub chart: usize,
    pub point: Vec<f64>,
    pub velocity: Vec<f64>,
}

impl AtlasPoint {
    pub fn point(&self) -> Vector {
        Vector::from_column_slice(&self.point)
    }
}

const MAX_CHART_SWITCHES: usize = 16;

impl ChartedProblem {
    pub fn single(
        name: &str,
        params: serde_json::Value,
        domain: ChartDomain,
        family: LevelMetricFamily,
        spray: Spray,
        reference_point: Vector,
    ) -> Result<Self> {
        domain.require(&reference_point)?;
        let space = family.space_at(&reference_point)?;
        Ok(Self {
            name: name.into(),
            params,
            space,
            reference_point,
            charts: vec![Chart {
                working: domain.clone(),
                domain,
                family,
                spray,
            }],
            transition: None,
            oracle: None,
        })
    }

    pub fn with_oracle(mut self, oracle: SprayOracle) -> Self {
        self.oracle = Some(oracle);
        self
    }

    pub fn with_second_chart(mut self, chart: Chart, transition: Transition, working_first: ChartDomain) -> Self {
        self.charts[0].working = working_first;
        self.charts.push(chart);
        self.transition = Some(transition);
        self
    }

    pub fn dim(&self) -> usize {
        self.space.dim()
    }

    pub fn levels(&self) -> usize {
        self.family().levels()
    }

    pub fn domain(&self) -> &ChartDomain {
        &self.charts[0].domain
    }

    pub fn family(&self) -> &LevelMetricFamily {
        &self.charts[0].family
    }

    pub fn spray(&self) -> &Spray {
        &self.charts[0].spray
    }

    pub fn driving_level(&self) -> usize {
        self.family().driving_level()
    }

    /// Expresses `p` in chart `target`.
    pub fn to_chart(&self, p: &AtlasPoint, target: usize) -> Result<AtlasPoint> {
        if p.chart == target {
            return Ok(p.clone());
        }
        let t = self
            .transition
            .as_ref()
            .ok_or_else(|| GeoError::InvalidArgument("problem has a single chart".into()))?;
        let (x, v) = t.push(p.chart, &p.point(), &Vector::from_column_slice(&p.velocity));
        Ok(AtlasPoint {
            chart: target,
            point: x.iter().copied().collect(),
            velocity: v.iter().copied().collect(),
        })
    }

    /// Orientation of chart `c` relative to chart 0.
    pub fn orientation(&self, c: usize) -> f64 {
        match (c, &self.transition) {
            (0, _) | (_, None) => 1.0,
            (_, Some(t)) => t.orientation,
        }
    }

    /// Largest round-trip error `|backward(forward(x)) − x|` over `points`
    /// (chart-0 coordinates inside the overlap).
    pub fn transition_round_trip(&self, points: &[Vector]) -> f64 {
        match &self.transition {
            None => 0.0,
            Some(t) => points.iter().map(|x| (t.backward.eval(&t.forward.eval(x)) - x).norm()).fold(0.0, f64::max),
        }
    }

    /// Geodesic endpoint at `t = 1` from `(x, v)` in chart 0, switching charts
    /// whenever the path leaves the working region of the current one.
    pub fn exp_atlas(&self, x: &Vector, v: &Vector, opts: &OdeOptions) -> Result<AtlasPoint> {
        let d = self.dim();
        self.domain().require(x)?;
        let mut chart = 0usize;
        let mut t = 0.0;
        let mut state_x = x.clone();
        let mut state_v = v.clone();
        for _ in 0..=MAX_CHART_SWITCHES {
            let c = &self.charts[chart];
            let mut s0 = Vector::zeros(2 * d);
            s0.rows_mut(0, d).copy_from(&state_x);
            s0.rows_mut(d, d).copy_from(&state_v);
            let sol = integrate(
                |s| c.spray.geodesic_rhs(s),
                t,
                &s0,
                1.0,
                opts,
                |s| c.working.contains(&s.rows(0, d).into_owned()),
            );
            let end = sol.final_state();
            state_x = end.rows(0, d).into_owned();
            state_v = end.rows(d, d).into_owned();
            match sol.reason {
                StopReason::Completed => {
                    return Ok(AtlasPoint {
                        chart,
                        point: state_x.iter().copied().collect(),
                        velocity: state_v.iter().copied().collect(),
                    })
                }
                StopReason::LeftDomain if self.transition.is_some() => {
                    let tr = self.transition.as_ref().unwrap();
                    let (nx, nv) = tr.push(chart, &state_x, &state_v);
                    chart = 1 - chart;
                    if !self.charts[chart].working.contains(&nx) {
                        return Err(GeoError::DomainExit { t: sol.t_end(), t_end: 1.0 });
                    }
                    state_x = nx;
                    state_v = nv;
                    t = sol.t_end();
                }
                StopReason::LeftDomain => return Err(GeoError::DomainExit { t: sol.t_end(), t_end: 1.0 }),
                StopReason::BlowUp | StopReason::MaxSteps => return Err(GeoError::BlowUp { t: sol.t_end() }),
            }
        }
        Err(GeoError::DomainExit { t, t_end: 1.0 })
    }
}

/// `x ↦ x / |x|²`, an involution of `ℝᴰ \ {0}` (the stereographic change of
/// pole).
pub fn inversion(dim: usize) -> SmoothMap {
    SmoothMap::field(dim, |x| x / x.norm_squared()).with_jacobian(move |x| {
        let r2 = x.norm_squared();
        (Matrix::identity(dim, dim) * r2 - x * x.transpose() * 2.0) / (r2 * r2)
    })
}
