//! Constant-coefficient metrics on an m-torus: symmetric positive-definite
//! `m×m` matrices in upper-triangular coordinates.
//!
//! Coordinate `c` of the pair `(i, j)`, `i ≤ j`, multiplies `E_ii` on the
//! diagonal and `E_ij + E_ji` off it, so the coordinate vector of `g` is just
//! its upper triangle.

use serde::{Deserialize, Serialize};

use crate::error::{GeoError, Result};
use crate::family::{LevelMetricFamily, MetricField};
use crate::kernel::ChartDomain;
use crate::linalg::{min_eigenvalue, Matrix, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpdKind {
    /// `w·tr(hk)`
    Flat,
    /// `w·tr(g⁻¹hg⁻¹k)`
    AffineInvariant,
    /// `w·sqrt(det g)·tr(g⁻¹hg⁻¹k)`
    Ebin,
}

impl SpdKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            SpdKind::Flat => "flat",
            SpdKind::AffineInvariant => "affine_invariant",
            SpdKind::Ebin => "ebin",
        }
    }
}

pub fn coord_dim(m: usize) -> usize {
    m * (m + 1) / 2
}

fn pairs(m: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..m).flat_map(move |i| (i..m).map(move |j| (i, j)))
}

pub fn to_matrix(m: usize, x: &Vector) -> Matrix {
    let mut g = Matrix::zeros(m, m);
    for (c, (i, j)) in pairs(m).enumerate() {
        g[(i, j)] = x[c];
        g[(j, i)] = x[c];
    }
    g
}

pub fn to_coords(g: &Matrix) -> Vector {
    let m = g.nrows();
    Vector::from_iterator(coord_dim(m), pairs(m).map(|(i, j)| 0.5 * (g[(i, j)] + g[(j, i)])))
}

/// Basis matrices `E_c` matching the coordinates.
pub fn basis(m: usize) -> Vec<Matrix> {
    pairs(m)
        .map(|(i, j)| {
            let mut e = Matrix::zeros(m, m);
            e[(i, j)] = 1.0;
            e[(j, i)] = 1.0;
            e
        })
        .collect()
}

pub(crate) fn min_eigenvalue_of_coords(m: usize, x: &Vector) -> f64 {
    if x.len() != coord_dim(m) || x.iter().any(|v| !v.is_finite()) {
        return f64::NEG_INFINITY;
    }
    min_eigenvalue(&to_matrix(m, x))
}

/// Unweighted Gram field of one kind.
pub fn spd_metric_field(m: usize, kind: SpdKind) -> MetricField {
    let d = coord_dim(m);
    let e = basis(m);
    let e2 = e.clone();
    let gram = move |x: &Vector| -> Matrix {
        let g = to_matrix(m, x);
        match kind {
            SpdKind::Flat => Matrix::from_fn(d, d, |a, b| (&e[a] * &e[b]).trace()),
            _ => {
                let p = g.clone().try_inverse().unwrap_or_else(|| Matrix::from_element(m, m, f64::NAN));
                let f = if kind == SpdKind::Ebin { g.determinant().max(0.0).sqrt() } else { 1.0 };
                let pe: Vec<Matrix> = e.iter().map(|ea| &p * ea).collect();
                Matrix::from_fn(d, d, |a, b| f * (&pe[a] * &pe[b]).trace())
            }
        }
    };
    let partials = move |x: &Vector| -> Vec<Matrix> {
        if kind == SpdKind::Flat {
            return vec![Matrix::zeros(d, d); d];
        }
        let g = to_matrix(m, x);
        let p = g.clone().try_inverse().unwrap_or_else(|| Matrix::from_element(m, m, f64::NAN));
        let f = if kind == SpdKind::Ebin { g.determinant().max(0.0).sqrt() } else { 1.0 };
        let pe: Vec<Matrix> = e2.iter().map(|ea| &p * ea).collect();
        (0..d)
            .map(|c| {
                // ∂_c P = −P E_c P, so ∂_c (P E_a) = −(P E_c)(P E_a).
                let dpe: Vec<Matrix> = pe.iter().map(|pa| -(&pe[c] * pa)).collect();
                let df = if kind == SpdKind::Ebin { 0.5 * f * pe[c].trace() } else { 0.0 };
                Matrix::from_fn(d, d, |a, b| {
                    let t = (&pe[a] * &pe[b]).trace();
                    df * t + f * ((&dpe[a] * &pe[b]).trace() + (&pe[a] * &dpe[b]).trace())
                })
            })
            .collect()
    };
    MetricField::new(d, gram).with_partials(partials)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpdMetricSpace {
    pub m: usize,
    pub weights: Vec<f64>,
    pub kind: SpdKind,
}

impl SpdMetricSpace {
    pub fn new(m: usize, weights: Vec<f64>, kind: SpdKind) -> Result<Self> {
        if m == 0 {
            return Err(GeoError::InvalidParameter {
                name: "m".into(),
                reason: "matrix size must be positive".into(),
            });
        }
        let s = Self { m, weights, kind };
        s.family()?;
        Ok(s)
    }

    pub fn dim(&self) -> usize {
        coord_dim(self.m)
    }

    pub fn domain(&self) -> ChartDomain {
        ChartDomain::SpdCone { m: self.m }
    }

    pub fn family(&self) -> Result<LevelMetricFamily> {
        LevelMetricFamily::scalar_scaled(self.domain(), spd_metric_field(self.m, self.kind), self.weights.clone())
    }

    /// Same weights, different kind.
    pub fn with_kind(&self, kind: SpdKind) -> Self {
        Self { kind, ..self.clone() }
    }

    /// Affine-invariant geodesic `g0^{1/2} exp(t g0^{-1/2} V g0^{-1/2}) g0^{1/2}`.
    pub fn affine_geodesic(g0: &Matrix, v: &Matrix, t: f64) -> Matrix {
        let r = crate::linalg::sym_sqrt(g0);
        let ri = crate::linalg::sym_apply(g0, |l| 1.0 / l.sqrt());
        let inner = &ri * v * &ri * t;
        &r * crate::linalg::sym_expm(&inner) * &r
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::from_slice;

    #[test]
    fn coordinates_round_trip() {
        let x = from_slice(&[2.0, 0.3, -0.1, 1.5, 0.2, 1.0]);
        let g = to_matrix(3, &x);
        assert_eq!(g[(2, 0)], -0.1);
        assert_eq!(to_coords(&g), x);
    }

    #[test]
    fn affine_gram_at_identity_is_trace_form() {
        let f = spd_metric_field(2, SpdKind::AffineInvariant);
        let g = f.gram(&from_slice(&[1.0, 0.0, 1.0]));
        // ⟨E_11, E_11⟩ = 1, ⟨E_12, E_12⟩ = tr((E_12)²) = 2.
        assert!((g[(0, 0)] - 1.0).abs() < 1e-15);
        assert!((g[(1, 1)] - 2.0).abs() < 1e-15);
        assert_eq!(g[(0, 1)], 0.0);
    }

    #[test]
    fn partials_match_fd() {
        for kind in [SpdKind::AffineInvariant, SpdKind::Ebin, SpdKind::Flat] {
            let f = spd_metric_field(3, kind);
            let x = from_slice(&[2.0, 0.3, -0.1, 1.5, 0.2, 1.0]);
            for (a, b) in f.partials(&x).iter().zip(f.fd_partials(&x)) {
                assert!((a - b).amax() < 1e-8, "{kind:?}");
            }
        }
    }

    #[test]
    fn cone_membership() {
        let d = ChartDomain::SpdCone { m: 2 };
        assert!(d.contains(&from_slice(&[1.0, 0.5, 1.0])));
        assert!(!d.contains(&from_slice(&[1.0, 1.5, 1.0])));
        assert!(!d.contains(&from_slice(&[1.0, 0.0])));
    }

    #[test]
    fn affine_geodesic_at_zero() {
        let g0 = Matrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let v = Matrix::from_row_slice(2, 2, &[0.1, 0.0, 0.0, -0.2]);
        assert!((SpdMetricSpace::affine_geodesic(&g0, &v, 0.0) - &g0).amax() < 1e-14);
    }
}
