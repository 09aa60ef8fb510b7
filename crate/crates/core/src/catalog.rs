//! Built-in problems selected by name and JSON parameters.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{GeoError, Result};
use crate::family::{LevelMetricFamily, MetricField};
use crate::graded::{GradedSeminormSpace, DEFAULT_PSD_TOL};
use crate::kernel::{ChartDomain, SmoothMap, VectorField};
use crate::linalg::{Matrix, Vector};
use crate::problem::{inversion, Chart, ChartedProblem, ConformalShape, SprayOracle, Transition};
use crate::spd::{to_coords, SpdKind, SpdMetricSpace};
use crate::spray::{spray_from_metric, Spray};

pub const CATALOG: [&str; 4] = ["flat", "conformal", "sphere_stereographic", "spd"];

fn default_dim() -> usize {
    2
}

fn default_weights() -> Vec<f64> {
    vec![1.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlatParams {
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default = "default_weights")]
    pub weights: Vec<f64>,
    /// Explicit level Gram matrices (rows); overrides `dim` and `weights`.
    #[serde(default)]
    pub grams: Option<Vec<Vec<Vec<f64>>>>,
    #[serde(default)]
    pub driving_level: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConformalParams {
    #[serde(default = "default_dim")]
    pub dim: usize,
    /// `φ(x) = c·x`; defaults to `x₁`.
    #[serde(default)]
    pub c: Option<Vec<f64>>,
    #[serde(default = "default_weights")]
    pub weights: Vec<f64>,
    #[serde(default = "ConformalParams::default_half_width")]
    pub half_width: f64,
    #[serde(default)]
    pub driving_level: Option<usize>,
}

impl ConformalParams {
    fn default_half_width() -> f64 {
        3.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SphereParams {
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default = "SphereParams::default_radius")]
    pub radius: f64,
    #[serde(default = "default_weights")]
    pub weights: Vec<f64>,
    #[serde(default = "SphereParams::default_chart_radius")]
    pub chart_radius: f64,
    /// Geodesics switch to the other pole's chart beyond this radius.
    #[serde(default = "SphereParams::default_switch_radius")]
    pub switch_radius: f64,
    #[serde(default)]
    pub driving_level: Option<usize>,
}

impl SphereParams {
    fn default_radius() -> f64 {
        1.0
    }
    fn default_chart_radius() -> f64 {
        10.0
    }
    fn default_switch_radius() -> f64 {
        2.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpdParams {
    #[serde(default = "SpdParams::default_m")]
    pub m: usize,
    #[serde(default = "SpdParams::default_kind")]
    pub kind: SpdKind,
    #[serde(default = "default_weights")]
    pub weights: Vec<f64>,
    /// Reference matrix (rows); defaults to the identity.
    #[serde(default)]
    pub base: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub driving_level: Option<usize>,
}

impl SpdParams {
    fn default_m() -> usize {
        2
    }
    fn default_kind() -> SpdKind {
        SpdKind::AffineInvariant
    }
}

fn parse<T: DeserializeOwned>(params: &serde_json::Value) -> Result<T> {
    let v = if params.is_null() {
        serde_json::Value::Object(Default::default())
    } else {
        params.clone()
    };
    serde_json::from_value(v).map_err(|e| GeoError::InvalidParameter {
        name: "params".into(),
        reason: e.to_string(),
    })
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(GeoError::InvalidParameter {
            name: name.into(),
            reason: format!("must be positive, got {v}"),
        })
    }
}

fn nonzero_dim(d: usize) -> Result<()> {
    if d == 0 {
        return Err(GeoError::InvalidParameter {
            name: "dim".into(),
            reason: "must be positive".into(),
        });
    }
    Ok(())
}

pub(crate) fn matrix_from_rows(name: &str, rows: &[Vec<f64>]) -> Result<Matrix> {
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(GeoError::InvalidParameter {
            name: name.into(),
            reason: "expected a non-empty square matrix".into(),
        });
    }
    Ok(Matrix::from_fn(n, n, |i, j| rows[i][j]))
}

fn apply_driving(family: LevelMetricFamily, level: Option<usize>) -> Result<LevelMetricFamily> {
    match level {
        Some(n) => family.with_driving_level(n),
        None => Ok(family),
    }
}

/// Builds a catalog problem. `params` may be `null` for all defaults.
pub fn catalog_problem(name: &str, params: &serde_json::Value) -> Result<ChartedProblem> {
    match name {
        "flat" => flat(parse(params)?),
        "conformal" => conformal(parse(params)?),
        "sphere_stereographic" => sphere(parse(params)?),
        "spd" => spd(parse(params)?),
        _ => Err(GeoError::UnknownProblem(name.into())),
    }
}

fn flat(p: FlatParams) -> Result<ChartedProblem> {
    let space = match &p.grams {
        Some(gs) => {
            let grams = gs
                .iter()
                .enumerate()
                .map(|(i, g)| matrix_from_rows(&format!("grams[{i}]"), g))
                .collect::<Result<Vec<_>>>()?;
            GradedSeminormSpace::new(grams, DEFAULT_PSD_TOL)?
        }
        None => {
            nonzero_dim(p.dim)?;
            let fam = LevelMetricFamily::scalar_scaled(ChartDomain::Whole, MetricField::constant(Matrix::identity(p.dim, p.dim)), p.weights.clone())?;
            fam.space_at(&Vector::zeros(p.dim))?
        }
    };
    let d = space.dim();
    let family = match &p.grams {
        Some(_) => LevelMetricFamily::constant(&space, ChartDomain::Whole),
        None => LevelMetricFamily::scalar_scaled(ChartDomain::Whole, MetricField::constant(Matrix::identity(d, d)), p.weights.clone())?,
    };
    let family = apply_driving(family, p.driving_level)?;
    let params = serde_json::to_value(&p).expect("params serialize");
    Ok(ChartedProblem::single("flat", params, ChartDomain::Whole, family, Spray::zero(d), Vector::zeros(d))?.with_oracle(SprayOracle::Zero))
}

fn conformal(p: ConformalParams) -> Result<ChartedProblem> {
    nonzero_dim(p.dim)?;
    positive("half_width", p.half_width)?;
    let c = p.c.clone().unwrap_or_else(|| {
        let mut c = vec![0.0; p.dim];
        c[0] = 1.0;
        c
    });
    if c.len() != p.dim {
        return Err(GeoError::InvalidParameter {
            name: "c".into(),
            reason: format!("expected {} entries, got {}", p.dim, c.len()),
        });
    }
    let cv = Vector::from_column_slice(&c);
    let cv2 = cv.clone();
    let base = MetricField::conformal(p.dim, move |x| cv.dot(x), move |_| cv2.clone());
    let domain = ChartDomain::cube(p.dim, p.half_width);
    let family = apply_driving(LevelMetricFamily::scalar_scaled(domain.clone(), base, p.weights.clone())?, p.driving_level)?;
    let spray = spray_from_metric(&family, family.driving_level())?;
    let params = serde_json::to_value(&p).expect("params serialize");
    Ok(
        ChartedProblem::single("conformal", params, domain, family, spray, Vector::zeros(p.dim))?.with_oracle(SprayOracle::Conformal {
            shape: ConformalShape::Linear { c },
        }),
    )
}

fn sphere_chart(p: &SphereParams, domain: &ChartDomain) -> Result<(LevelMetricFamily, Spray)> {
    let r = p.radius;
    let base = MetricField::conformal(
        p.dim,
        move |x| (2.0 * r / (1.0 + x.norm_squared())).ln(),
        |x| x * (-2.0 / (1.0 + x.norm_squared())),
    );
    let family = apply_driving(LevelMetricFamily::scalar_scaled(domain.clone(), base, p.weights.clone())?, p.driving_level)?;
    let spray = spray_from_metric(&family, family.driving_level())?;
    Ok((family, spray))
}

fn sphere(p: SphereParams) -> Result<ChartedProblem> {
    nonzero_dim(p.dim)?;
    positive("radius", p.radius)?;
    positive("chart_radius", p.chart_radius)?;
    positive("switch_radius", p.switch_radius)?;
    if p.switch_radius <= 1.0 || p.switch_radius >= p.chart_radius {
        return Err(GeoError::InvalidParameter {
            name: "switch_radius".into(),
            reason: "must lie strictly between 1 and chart_radius".into(),
        });
    }
    let domain = ChartDomain::ball(p.dim, p.chart_radius);
    let (family, spray) = sphere_chart(&p, &domain)?;
    let params = serde_json::to_value(&p).expect("params serialize");
    let working = ChartDomain::ball(p.dim, p.switch_radius);
    // The inversion x ↦ x/|x|² is the change of pole and an isometry of the
    // stereographic metric, so the second chart carries the same formulas.
    let (family2, spray2) = sphere_chart(&p, &domain)?;
    let second = Chart {
        domain: domain.clone(),
        working: working.clone(),
        family: family2,
        spray: spray2,
    };
    let transition = Transition {
        forward: inversion(p.dim),
        backward: inversion(p.dim),
        orientation: -1.0,
    };
    Ok(
        ChartedProblem::single("sphere_stereographic", params, domain, family, spray, Vector::zeros(p.dim))?
            .with_second_chart(second, transition, working)
            .with_oracle(SprayOracle::Conformal {
                shape: ConformalShape::Stereographic { radius: p.radius },
            }),
    )
}

fn spd(p: SpdParams) -> Result<ChartedProblem> {
    let space = SpdMetricSpace::new(p.m, p.weights.clone(), p.kind)?;
    let g0 = match &p.base {
        Some(rows) => matrix_from_rows("base", rows)?,
        None => Matrix::identity(p.m, p.m),
    };
    if g0.nrows() != p.m {
        return Err(GeoError::InvalidParameter {
            name: "base".into(),
            reason: format!("expected a {m}×{m} matrix", m = p.m),
        });
    }
    let x0 = to_coords(&g0);
    let family = apply_driving(space.family()?, p.driving_level)?;
    let spray = spray_from_metric(&family, family.driving_level())?;
    let oracle = match p.kind {
        SpdKind::Flat => Some(SprayOracle::Zero),
        SpdKind::AffineInvariant => Some(SprayOracle::SpdAffine { m: p.m }),
        SpdKind::Ebin => None,
    };
    let params = serde_json::to_value(&p).expect("params serialize");
    let mut prob = ChartedProblem::single("spd", params, space.domain(), family, spray, x0)?;
    prob.oracle = oracle;
    Ok(prob)
}

pub const FIELD_CATALOG: [&str; 5] = ["exponential", "square", "one_plus_square", "rotation", "linear"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldParams {
    /// Dimension of `exponential`; the scalar fields are one-dimensional and
    /// `rotation` is planar.
    pub dim: Option<usize>,
    /// Rows of `A` for `linear`, `X(x) = Ax`.
    pub matrix: Option<Vec<Vec<f64>>>,
}

/// A catalog vector field on the whole of `ℝᴰ`, with an analytic Jacobian.
#[derive(Clone)]
pub struct CatalogField {
    pub name: String,
    pub field: VectorField,
    pub domain: ChartDomain,
    /// Euclidean single-level space used to measure flow defects.
    pub space: GradedSeminormSpace,
}

pub fn catalog_field(name: &str, params: &serde_json::Value) -> Result<CatalogField> {
    let p: FieldParams = parse(params)?;
    let scalar_only = |d: Option<usize>| match d {
        None | Some(1) => Ok(()),
        Some(_) => Err(GeoError::InvalidParameter {
            name: "dim".into(),
            reason: format!("{name} is one-dimensional"),
        }),
    };
    let field = match name {
        "exponential" => {
            let d = p.dim.unwrap_or(1);
            nonzero_dim(d)?;
            SmoothMap::linear(Matrix::identity(d, d))
        }
        "square" => {
            scalar_only(p.dim)?;
            SmoothMap::field(1, |x| x.map(|v| v * v)).with_jacobian(|x| Matrix::from_element(1, 1, 2.0 * x[0]))
        }
        "one_plus_square" => {
            scalar_only(p.dim)?;
            SmoothMap::field(1, |x| x.map(|v| 1.0 + v * v)).with_jacobian(|x| Matrix::from_element(1, 1, 2.0 * x[0]))
        }
        "rotation" => {
            if p.dim.is_some_and(|d| d != 2) {
                return Err(GeoError::InvalidParameter {
                    name: "dim".into(),
                    reason: "rotation is planar".into(),
                });
            }
            SmoothMap::linear(Matrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]))
        }
        "linear" => {
            let rows = p.matrix.as_ref().ok_or_else(|| GeoError::InvalidParameter {
                name: "matrix".into(),
                reason: "required for the linear field".into(),
            })?;
            SmoothMap::linear(matrix_from_rows("matrix", rows)?)
        }
        _ => return Err(GeoError::UnknownProblem(name.into())),
    };
    let d = field.in_dim();
    Ok(CatalogField {
        name: name.into(),
        field,
        domain: ChartDomain::Whole,
        space: GradedSeminormSpace::new(vec![Matrix::identity(d, d)], DEFAULT_PSD_TOL)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::from_slice;
    use serde_json::json;

    fn samples(d: usize, n: usize, scale: f64) -> Vec<Vector> {
        (0..n)
            .map(|i| Vector::from_fn(d, |k, _| scale * ((i * 7 + k * 3) as f64 * 0.37).sin()))
            .collect()
    }

    #[test]
    fn flat_example() {
        let p = catalog_problem("flat", &json!({"dim": 3, "weights": [1.0, 2.0]})).unwrap();
        assert_eq!(p.dim(), 3);
        assert_eq!(p.levels(), 2);
        assert!(p.spray().is_zero());
        let x = from_slice(&[1.0, 2.0, 3.0]);
        assert_eq!(p.family().gram(2, &x).unwrap(), Matrix::identity(3, 3) * 2.0);
    }

    #[test]
    fn flat_with_bad_grading_names_pair() {
        let e = catalog_problem("flat", &json!({"grams": [[[2.0, 0.0], [0.0, 2.0]], [[1.0, 0.0], [0.0, 1.0]]]})).unwrap_err();
        assert!(matches!(e, GeoError::Grading { lower: 1, upper: 2, .. }));
    }

    #[test]
    fn unknown_name_and_key() {
        assert!(matches!(catalog_problem("torus", &json!(null)), Err(GeoError::UnknownProblem(_))));
        let e = catalog_problem("flat", &json!({"gamma": 1})).unwrap_err();
        assert!(e.to_string().contains("gamma"));
    }

    #[test]
    fn metric_sprays_match_oracles() {
        let cases = [
            ("conformal", json!(null), 2, 1.0),
            ("sphere_stereographic", json!({"weights": [1.0, 3.0]}), 2, 3.0),
            ("sphere_stereographic", json!({"dim": 3}), 3, 3.0),
            ("spd", json!({"m": 2}), 3, 0.2),
            ("spd", json!({"m": 3, "kind": "flat"}), 6, 0.2),
        ];
        for (name, params, d, scale) in cases {
            let p = catalog_problem(name, &params).unwrap();
            let oracle = p.oracle.clone().unwrap();
            for (i, x) in samples(d, 20, scale).into_iter().enumerate() {
                let x = &p.reference_point + x;
                let u = Vector::from_fn(d, |k, _| ((i + k) as f64).cos());
                let v = Vector::from_fn(d, |k, _| ((2 * i + k) as f64 * 0.5).sin());
                let got = p.spray().eval(&x, &u, &v);
                let want = oracle.eval(&x, &u, &v);
                assert!((&got - &want).amax() <= 1e-7 * (1.0 + want.amax()), "{name}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn sphere_factor_and_chart() {
        let p = catalog_problem("sphere_stereographic", &json!({"radius": 1.0})).unwrap();
        let x = from_slice(&[0.5, -1.0]);
        let f = 4.0 / (1.0 + 1.25f64).powi(2);
        assert!((p.family().gram(1, &x).unwrap() - Matrix::identity(2, 2) * f).amax() < 1e-14);
        assert!(p.domain().contains(&from_slice(&[9.9, 0.0])));
        assert!(!p.domain().contains(&from_slice(&[10.0, 0.0])));
        assert!(p.transition_round_trip(&samples(2, 10, 3.0)) < 1e-14);
        assert_eq!(p.orientation(1), -1.0);
    }

    #[test]
    fn sphere_partials_are_analytic_and_correct() {
        let p = catalog_problem("sphere_stereographic", &json!(null)).unwrap();
        let lvl = p.family().level(1).unwrap();
        assert!(lvl.has_partials());
        let x = from_slice(&[0.3, 0.7]);
        for (a, b) in lvl.partials(&x).iter().zip(lvl.fd_partials(&x)) {
            assert!((a - b).amax() < 1e-8);
        }
    }

    #[test]
    fn spd_rejects_bad_weights_and_base() {
        assert!(catalog_problem("spd", &json!({"weights": [2.0, 1.0]})).is_err());
        assert!(catalog_problem("spd", &json!({"base": [[1.0, 2.0], [2.0, 1.0]]})).is_err());
    }

    #[test]
    fn field_catalog() {
        let f = catalog_field("one_plus_square", &json!(null)).unwrap();
        assert_eq!(f.field.eval(&from_slice(&[2.0]))[0], 5.0);
        let r = catalog_field("rotation", &json!(null)).unwrap();
        assert_eq!(r.field.eval(&from_slice(&[1.0, 0.0])), from_slice(&[0.0, 1.0]));
        assert_eq!(catalog_field("exponential", &json!({"dim": 3})).unwrap().field.in_dim(), 3);
        assert!(catalog_field("square", &json!({"dim": 2})).is_err());
        assert!(catalog_field("linear", &json!(null)).is_err());
        assert!(catalog_field("exponential", &json!({"gamma": 1})).is_err());
        assert!(matches!(catalog_field("nope", &json!(null)), Err(GeoError::UnknownProblem(_))));
    }
}
