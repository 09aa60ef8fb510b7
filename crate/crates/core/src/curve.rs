//! Sampled curves with cubic Hermite interpolation.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{GeoError, Result};
use crate::linalg::Vector;

/// A discretized curve: strictly increasing times, nodes and velocities.
///
/// Between nodes the curve is the cubic Hermite interpolant of
/// `(node, velocity)` pairs. The same type stores lifts (vector fields along a
/// curve): then `nodes` are the vectors and `velocities` their derivatives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePath {
    times: Vec<f64>,
    nodes: Vec<Vector>,
    velocities: Vec<Vector>,
}

impl CurvePath {
    pub fn new(times: Vec<f64>, nodes: Vec<Vector>, velocities: Vec<Vector>) -> Result<Self> {
        if times.len() < 2 {
            return Err(GeoError::InvalidArgument("a curve needs at least two samples".into()));
        }
        if nodes.len() != times.len() || velocities.len() != times.len() {
            return Err(GeoError::InvalidArgument(format!(
                "{} times, {} nodes, {} velocities",
                times.len(),
                nodes.len(),
                velocities.len()
            )));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(GeoError::InvalidArgument("time grid must be strictly increasing".into()));
        }
        let dim = nodes[0].len();
        if let Some(bad) = nodes.iter().chain(velocities.iter()).find(|v| v.len() != dim) {
            return Err(GeoError::DimensionMismatch { expected: dim, got: bad.len() });
        }
        Ok(Self { times, nodes, velocities })
    }

    /// Samples a closed-form curve and its derivative on a uniform grid.
    pub fn from_fn(t0: f64, t1: f64, segments: usize, pos: impl Fn(f64) -> Vector, vel: impl Fn(f64) -> Vector) -> Result<Self> {
        let times = uniform_grid(t0, t1, segments);
        let nodes = times.iter().map(|t| pos(*t)).collect();
        let velocities = times.iter().map(|t| vel(*t)).collect();
        Self::new(times, nodes, velocities)
    }

    pub fn dim(&self) -> usize {
        self.nodes[0].len()
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn nodes(&self) -> &[Vector] {
        &self.nodes
    }

    pub fn velocities(&self) -> &[Vector] {
        &self.velocities
    }

    pub fn start(&self) -> f64 {
        self.times[0]
    }

    pub fn end(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn first(&self) -> &Vector {
        &self.nodes[0]
    }

    pub fn last(&self) -> &Vector {
        self.nodes.last().unwrap()
    }

    fn segment(&self, t: f64) -> usize {
        let i = self.times.partition_point(|s| *s <= t);
        i.clamp(1, self.times.len() - 1) - 1
    }

    /// Position, velocity and acceleration of the Hermite interpolant at `t`.
    pub fn eval_full(&self, t: f64) -> (Vector, Vector, Vector) {
        let i = self.segment(t);
        let (t0, t1) = (self.times[i], self.times[i + 1]);
        let h = t1 - t0;
        let s = (t - t0) / h;
        let (p0, p1) = (&self.nodes[i], &self.nodes[i + 1]);
        let (m0, m1) = (&self.velocities[i] * h, &self.velocities[i + 1] * h);
        let h00 = 2.0 * s * s * s - 3.0 * s * s + 1.0;
        let h10 = s * s * s - 2.0 * s * s + s;
        let h01 = -2.0 * s * s * s + 3.0 * s * s;
        let h11 = s * s * s - s * s;
        let pos = p0 * h00 + &m0 * h10 + p1 * h01 + &m1 * h11;
        let d00 = 6.0 * s * s - 6.0 * s;
        let d10 = 3.0 * s * s - 4.0 * s + 1.0;
        let d01 = -6.0 * s * s + 6.0 * s;
        let d11 = 3.0 * s * s - 2.0 * s;
        let vel = (p0 * d00 + &m0 * d10 + p1 * d01 + &m1 * d11) / h;
        let a00 = 12.0 * s - 6.0;
        let a10 = 6.0 * s - 4.0;
        let a01 = -12.0 * s + 6.0;
        let a11 = 6.0 * s - 2.0;
        let acc = (p0 * a00 + &m0 * a10 + p1 * a01 + &m1 * a11) / (h * h);
        (pos, vel, acc)
    }

    pub fn position(&self, t: f64) -> Vector {
        self.eval_full(t).0
    }

    pub fn velocity(&self, t: f64) -> Vector {
        self.eval_full(t).1
    }

    /// Worst mismatch between stored velocities and central differences of
    /// the nodes on the interior of the grid.
    pub fn velocity_defect(&self) -> f64 {
        (1..self.len() - 1)
            .map(|i| {
                let fd = (&self.nodes[i + 1] - &self.nodes[i - 1]) / (self.times[i + 1] - self.times[i - 1]);
                (fd - &self.velocities[i]).norm()
            })
            .fold(0.0, f64::max)
    }

    /// Pointwise map of nodes and velocities.
    pub fn map(&self, f: impl Fn(f64, &Vector, &Vector) -> (Vector, Vector)) -> Result<Self> {
        let (nodes, velocities) = self
            .times
            .iter()
            .zip(self.nodes.iter().zip(self.velocities.iter()))
            .map(|(t, (x, v))| f(*t, x, v))
            .unzip();
        Self::new(self.times.clone(), nodes, velocities)
    }

    /// CSV with columns `t, x_1..x_D, v_1..v_D`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let d = self.dim();
        let mut header = vec!["t".to_string()];
        header.extend((1..=d).map(|i| format!("x_{i}")));
        header.extend((1..=d).map(|i| format!("v_{i}")));
        wtr.write_record(&header).map_err(csv_err)?;
        for i in 0..self.len() {
            let mut row = vec![fmt_f64(self.times[i])];
            row.extend(self.nodes[i].iter().map(|v| fmt_f64(*v)));
            row.extend(self.velocities[i].iter().map(|v| fmt_f64(*v)));
            wtr.write_record(&row).map_err(csv_err)?;
        }
        wtr.flush().map_err(|e| GeoError::Csv(e.to_string()))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let headers = rdr.headers().map_err(csv_err)?.clone();
        if headers.len() < 3 || headers.len() % 2 == 0 || &headers[0] != "t" {
            return Err(GeoError::Csv("expected columns t, x_1..x_D, v_1..v_D".into()));
        }
        let d = (headers.len() - 1) / 2;
        let (mut times, mut nodes, mut velocities) = (Vec::new(), Vec::new(), Vec::new());
        for rec in rdr.records() {
            let rec = rec.map_err(csv_err)?;
            let vals = rec
                .iter()
                .map(|s| s.trim().parse::<f64>().map_err(|e| GeoError::Csv(format!("{s}: {e}"))))
                .collect::<Result<Vec<_>>>()?;
            if vals.len() != 2 * d + 1 {
                return Err(GeoError::Csv("ragged row".into()));
            }
            times.push(vals[0]);
            nodes.push(Vector::from_column_slice(&vals[1..=d]));
            velocities.push(Vector::from_column_slice(&vals[d + 1..]));
        }
        Self::new(times, nodes, velocities)
    }
}

fn csv_err(e: csv::Error) -> GeoError {
    GeoError::Csv(e.to_string())
}

/// Shortest representation that parses back to the same bits.
fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

pub fn uniform_grid(t0: f64, t1: f64, segments: usize) -> Vec<f64> {
    let n = segments.max(1);
    (0..=n).map(|i| if i == n { t1 } else { t0 + (t1 - t0) * i as f64 / n as f64 }).collect()
}
