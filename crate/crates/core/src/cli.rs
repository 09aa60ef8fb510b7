//! Command-line front end: configuration, dispatch and output.
//!
//! Every run prints one JSON object `{"summary": …, "envelope": …}`. The
//! summary depends only on the resolved configuration; the envelope carries
//! the timestamp and version.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::catalog::{catalog_field, catalog_problem};
use crate::covariant::{parallel_transport, transported_norm_drift};
use crate::curve::CurvePath;
use crate::error::GeoError;
use crate::finsler::finsler_check;
use crate::geodesic::{connect, integrate_geodesic, ShootingConfig};
use crate::injectivity::{injectivity_radius_estimate, InjectivityConfig};
use crate::kernel::{flow_domain, integrate_vector_field, local_flow};
use crate::linalg::{Matrix, Vector};
use crate::ode::OdeOptions;
use crate::problem::ChartedProblem;
use crate::ricci::{ricci_nongeodesic_report, RicciConfig};
use crate::selftest;
use crate::spd::{SpdKind, SpdMetricSpace};
use crate::variational::{el_residual, energy_n, finsler_distance, gauss_check, length_n, minimality_test, DistanceOptions};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

fn default_rtol() -> f64 {
    1e-9
}

fn default_atol() -> f64 {
    1e-12
}

fn default_seed() -> u64 {
    42
}

/// Everything a run needs. Loaded from `--config` and overridden by flags;
/// unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Catalog problem name.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub problem: Option<String>,
    /// Catalog parameters, e.g. `{"weights": [1, 2]}`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<Value>,
    #[serde(default = "default_rtol")]
    pub rtol: f64,
    #[serde(default = "default_atol")]
    pub atol: f64,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// CSV destination for commands that produce a curve.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// Levels to report (1-based); all when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub levels: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub driving_level: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v0: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w0: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segments: Option<usize>,
    /// CSV curve to analyse instead of a computed geodesic.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub curve: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field_params: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub half_width: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s_samples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_samples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trials: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amplitude: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    /// SPD family kind for `ricci-demo`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(rename = "T", default, skip_serializing_if = "Option::is_none")]
    pub t_end: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    /// Criterion ids for `selftest`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub only: Option<Vec<usize>>,
}

impl Default for RunConfig {
    fn default() -> Self {
        serde_json::from_value(json!({})).expect("defaults")
    }
}

/// JSON schema of the configuration file.
pub fn config_schema() -> Value {
    serde_json::to_value(schemars::schema_for!(RunConfig)).expect("schema")
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Geo(GeoError),
}

impl From<GeoError> for CliError {
    fn from(e: GeoError) -> Self {
        CliError::Geo(e)
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Geo(e) if e.is_numerical() => EXIT_NUMERICAL,
            CliError::Geo(_) => EXIT_USAGE,
        }
    }

    fn to_json(&self) -> Value {
        match self {
            CliError::Usage(m) => json!({"reason": "usage", "message": m}),
            CliError::Geo(e) => json!({"reason": e.reason(), "message": e.to_string()}),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Reads and validates a configuration file. A named problem is built once
/// so that grading errors surface before any computation.
pub fn parse_config(path: &Path) -> CliResult<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
    let cfg: RunConfig = serde_json::from_str(&text).map_err(|e| usage(format!("invalid config {}: {e}", path.display())))?;
    validate(&cfg)?;
    Ok(cfg)
}

fn validate(cfg: &RunConfig) -> CliResult<()> {
    if !(cfg.rtol > 0.0) || !(cfg.atol > 0.0) {
        return Err(usage("rtol and atol must be positive"));
    }
    if cfg.problem.is_some() {
        build_problem(cfg)?;
    }
    Ok(())
}

#[derive(Debug, Parser)]
#[command(name = "gradedgeo", version, about = "Geodesics, distances and variational checks on graded-seminorm manifolds")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Catalog problem: flat, conformal, sphere_stereographic, spd.
    #[arg(long, global = true)]
    pub problem: Option<String>,
    /// Problem parameters as inline JSON.
    #[arg(long, global = true, value_name = "JSON")]
    pub params: Option<String>,
    /// JSON run configuration; flags override its entries.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub rtol: Option<f64>,
    #[arg(long, global = true)]
    pub atol: Option<f64>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// CSV output path for curves.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Comma-separated levels to report.
    #[arg(long, global = true, value_delimiter = ',')]
    pub levels: Option<Vec<usize>>,
    #[arg(long, global = true)]
    pub driving_level: Option<usize>,
    /// Render the summary as a table instead of JSON.
    #[arg(long, global = true)]
    pub pretty: bool,
}

#[derive(Debug, Args, Default)]
pub struct CurveArgs {
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub x0: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub v0: Option<Vec<f64>>,
    #[arg(long, allow_hyphen_values = true)]
    pub t: Option<f64>,
    #[arg(long)]
    pub segments: Option<usize>,
    /// Analyse a CSV curve (columns t, x_1.., v_1..) instead of a geodesic.
    #[arg(long)]
    pub curve: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Integrate a geodesic from x0 with velocity v0, or shoot towards y.
    Geodesic {
        #[command(flatten)]
        curve: CurveArgs,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        y: Option<Vec<f64>>,
    },
    /// Exponential map, switching charts when the problem has two.
    Exp {
        #[command(flatten)]
        curve: CurveArgs,
    },
    /// Integral curve, flow domain and flow-law defects of a catalog field.
    Flow {
        /// exponential, square, one_plus_square, rotation, linear.
        #[arg(long)]
        field: Option<String>,
        #[arg(long, value_name = "JSON")]
        field_params: Option<String>,
        #[command(flatten)]
        curve: CurveArgs,
        #[arg(long)]
        horizon: Option<f64>,
        #[arg(long)]
        half_width: Option<f64>,
    },
    /// Level distances and the combined distance between x and y.
    Distance {
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        x: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        y: Option<Vec<f64>>,
    },
    /// Level lengths and energies of a curve.
    Length {
        #[command(flatten)]
        curve: CurveArgs,
    },
    /// Euler-Lagrange residual of a curve at every level.
    ElResidual {
        #[command(flatten)]
        curve: CurveArgs,
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Gauss-lemma check on a small geodesic sphere.
    Gauss {
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        x0: Option<Vec<f64>>,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        s_samples: Option<usize>,
        #[arg(long)]
        t_samples: Option<usize>,
    },
    /// Compatibility of the level seminorms between nearby fibers.
    FinslerCheck {
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        x0: Option<Vec<f64>>,
        #[arg(long)]
        k: Option<f64>,
        #[arg(long)]
        radius: Option<f64>,
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Compare a curve's lengths with seeded proper perturbations.
    Minimality {
        #[command(flatten)]
        curve: CurveArgs,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        amplitude: Option<f64>,
    },
    /// Parallel transport of w0 along a geodesic.
    Transport {
        #[command(flatten)]
        curve: CurveArgs,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        w0: Option<Vec<f64>>,
    },
    /// Show that the Einstein-metric Ricci flow curve is not a geodesic.
    RicciDemo {
        /// flat, affine_invariant or ebin.
        #[arg(long)]
        kind: Option<String>,
        #[arg(long, allow_hyphen_values = true)]
        lambda: Option<f64>,
        #[arg(long = "T")]
        t_end: Option<f64>,
        #[arg(long)]
        m: Option<usize>,
        #[arg(long, value_delimiter = ',')]
        weights: Option<Vec<f64>>,
        #[arg(long)]
        segments: Option<usize>,
    },
    /// Run the acceptance suite.
    Selftest {
        #[arg(long, value_delimiter = ',')]
        only: Option<Vec<usize>>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Geodesic { .. } => "geodesic",
            Command::Exp { .. } => "exp",
            Command::Flow { .. } => "flow",
            Command::Distance { .. } => "distance",
            Command::Length { .. } => "length",
            Command::ElResidual { .. } => "el-residual",
            Command::Gauss { .. } => "gauss",
            Command::FinslerCheck { .. } => "finsler-check",
            Command::Minimality { .. } => "minimality",
            Command::Transport { .. } => "transport",
            Command::RicciDemo { .. } => "ricci-demo",
            Command::Selftest { .. } => "selftest",
        }
    }
}

fn set<T: Clone>(slot: &mut Option<T>, v: &Option<T>) {
    if v.is_some() {
        slot.clone_from(v);
    }
}

fn inline_json(flag: &str, s: &Option<String>) -> CliResult<Option<Value>> {
    s.as_deref()
        .map(|s| serde_json::from_str(s).map_err(|e| usage(format!("--{flag} is not valid JSON: {e}"))))
        .transpose()
}

fn apply_curve(cfg: &mut RunConfig, c: &CurveArgs) {
    set(&mut cfg.x0, &c.x0);
    set(&mut cfg.v0, &c.v0);
    set(&mut cfg.t, &c.t);
    set(&mut cfg.segments, &c.segments);
    set(&mut cfg.curve, &c.curve);
}

/// Merges the config file (if any) with the flags.
pub fn resolve(cli: &Cli) -> CliResult<RunConfig> {
    let g = &cli.global;
    let mut cfg = match &g.config {
        Some(p) => parse_config(p)?,
        None => RunConfig::default(),
    };
    set(&mut cfg.problem, &g.problem);
    set(&mut cfg.params, &inline_json("params", &g.params)?);
    if let Some(v) = g.rtol {
        cfg.rtol = v;
    }
    if let Some(v) = g.atol {
        cfg.atol = v;
    }
    if let Some(v) = g.seed {
        cfg.seed = v;
    }
    set(&mut cfg.out, &g.out);
    set(&mut cfg.levels, &g.levels);
    set(&mut cfg.driving_level, &g.driving_level);
    match &cli.command {
        Command::Geodesic { curve, y } => {
            apply_curve(&mut cfg, curve);
            set(&mut cfg.y, y);
        }
        Command::Exp { curve } | Command::Length { curve } => apply_curve(&mut cfg, curve),
        Command::Flow {
            field,
            field_params,
            curve,
            horizon,
            half_width,
        } => {
            set(&mut cfg.field, field);
            set(&mut cfg.field_params, &inline_json("field-params", field_params)?);
            apply_curve(&mut cfg, curve);
            set(&mut cfg.horizon, horizon);
            set(&mut cfg.half_width, half_width);
        }
        Command::Distance { x, y } => {
            set(&mut cfg.x, x);
            set(&mut cfg.y, y);
        }
        Command::ElResidual { curve, tol } => {
            apply_curve(&mut cfg, curve);
            set(&mut cfg.tol, tol);
        }
        Command::Gauss {
            x0,
            epsilon,
            s_samples,
            t_samples,
        } => {
            set(&mut cfg.x0, x0);
            set(&mut cfg.epsilon, epsilon);
            set(&mut cfg.s_samples, s_samples);
            set(&mut cfg.t_samples, t_samples);
        }
        Command::FinslerCheck { x0, k, radius, samples } => {
            set(&mut cfg.x0, x0);
            set(&mut cfg.k, k);
            set(&mut cfg.radius, radius);
            set(&mut cfg.samples, samples);
        }
        Command::Minimality { curve, trials, amplitude } => {
            apply_curve(&mut cfg, curve);
            set(&mut cfg.trials, trials);
            set(&mut cfg.amplitude, amplitude);
        }
        Command::Transport { curve, w0 } => {
            apply_curve(&mut cfg, curve);
            set(&mut cfg.w0, w0);
        }
        Command::RicciDemo {
            kind,
            lambda,
            t_end,
            m,
            weights,
            segments,
        } => {
            set(&mut cfg.kind, kind);
            set(&mut cfg.lambda, lambda);
            set(&mut cfg.t_end, t_end);
            set(&mut cfg.m, m);
            set(&mut cfg.weights, weights);
            set(&mut cfg.segments, segments);
        }
        Command::Selftest { only } => set(&mut cfg.only, only),
    }
    validate(&cfg)?;
    Ok(cfg)
}

fn build_problem(cfg: &RunConfig) -> CliResult<ChartedProblem> {
    let name = cfg.problem.as_deref().ok_or_else(|| usage("--problem is required for this command"))?;
    let mut params = cfg.params.clone().unwrap_or(Value::Null);
    if let Some(n) = cfg.driving_level {
        if params.is_null() {
            params = json!({});
        }
        match params.as_object_mut() {
            Some(obj) => {
                obj.insert("driving_level".into(), json!(n));
            }
            None => return Err(usage("params must be a JSON object")),
        }
    }
    Ok(catalog_problem(name, &params)?)
}

fn opts(cfg: &RunConfig) -> OdeOptions {
    OdeOptions::with_tolerances(cfg.rtol, cfg.atol)
}

fn vector(p: &ChartedProblem, name: &str, v: &Option<Vec<f64>>) -> CliResult<Vector> {
    let v = v.as_ref().ok_or_else(|| usage(format!("--{name} is required")))?;
    if v.len() != p.dim() {
        return Err(usage(format!("--{name} has {} entries, the problem has dimension {}", v.len(), p.dim())));
    }
    Ok(Vector::from_column_slice(v))
}

fn vector_or(p: &ChartedProblem, name: &str, v: &mut Option<Vec<f64>>, default: &Vector) -> CliResult<Vector> {
    v.get_or_insert_with(|| default.iter().copied().collect());
    vector(p, name, v)
}

fn levels(cfg: &RunConfig, p: &ChartedProblem) -> CliResult<Vec<usize>> {
    let all = p.levels();
    match &cfg.levels {
        None => Ok((1..=all).collect()),
        Some(ls) => {
            for &n in ls {
                if n == 0 || n > all {
                    return Err(GeoError::LevelOutOfRange { level: n, levels: all }.into());
                }
            }
            Ok(ls.clone())
        }
    }
}

fn vec_json(v: &Vector) -> Value {
    json!(v.iter().copied().collect::<Vec<_>>())
}

fn write_curve(cfg: &RunConfig, curve: &CurvePath) -> CliResult<()> {
    if let Some(path) = &cfg.out {
        let f = File::create(path).map_err(|e| usage(format!("cannot write {}: {e}", path.display())))?;
        curve.write_csv(BufWriter::new(f))?;
    }
    Ok(())
}

/// The curve a command works on: a CSV file, or the geodesic from `x0`
/// with velocity `v0` over `[0, t]`.
fn subject_curve(cfg: &mut RunConfig, p: &ChartedProblem) -> CliResult<CurvePath> {
    if let Some(path) = &cfg.curve {
        let f = File::open(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
        let c = CurvePath::read_csv(f)?;
        if c.dim() != p.dim() {
            return Err(usage(format!("curve has dimension {}, the problem {}", c.dim(), p.dim())));
        }
        return Ok(c);
    }
    let x0 = vector_or(p, "x0", &mut cfg.x0, &p.reference_point)?;
    let v0 = vector(p, "v0", &cfg.v0)?;
    let t = *cfg.t.get_or_insert(1.0);
    let segments = *cfg.segments.get_or_insert(200);
    let sol = integrate_geodesic(p.spray(), p.domain(), &x0, &v0, t, &opts(cfg), segments)?;
    if !sol.completed() {
        return Err(GeoError::DomainExit { t: sol.t_reached(), t_end: t }.into());
    }
    Ok(sol.path)
}

struct Outcome {
    result: Value,
    pass: Option<bool>,
    exit: i32,
}

impl Outcome {
    fn ok(result: Value) -> Self {
        Self {
            result,
            pass: None,
            exit: EXIT_OK,
        }
    }

    fn check(result: Value, pass: bool) -> Self {
        Self {
            result,
            pass: Some(pass),
            exit: if pass { EXIT_OK } else { EXIT_CHECK_FAILED },
        }
    }
}

fn cmd_geodesic(cfg: &mut RunConfig) -> CliResult<Outcome> {
    let p = build_problem(cfg)?;
    let o = opts(cfg);
    let x0 = vector_or(&p, "x0", &mut cfg.x0, &p.reference_point)?;
    let mut shooting = None;
    let v0 = match &cfg.y {
        Some(_) => {
            let y = vector(&p, "y", &cfg.y)?;
            let r = connect(p.spray(), p.domain(), &p.space, &x0, &y, None, &ShootingConfig::default(), &o)?;
            let v = r.velocity();
            cfg.t.get_or_insert(1.0);
            shooting = Some(r);
            v
        }
        None => vector(&p, "v0", &cfg.v0)?,
    };
    let t = *cfg.t.get_or_insert(1.0);
    let segments = *cfg.segments.get_or_insert(100);
    let sol = integrate_geodesic(p.spray(), p.domain(), &x0, &v0, t, &o, segments)?;
    write_curve(cfg, &sol.path)?;
    let (end, vel) = sol.end_state();
    let completed = sol.completed();
    let result = json!({
        "x0": vec_json(&x0),
        "v0": vec_json(&v0),
        "t": t,
        "completed": completed,
        "reason": sol.reason,
        "t_reached": sol.t_reached(),
        "endpoint": vec_json(&end),
        "end_velocity": vec_json(&vel),
        "steps": sol.stats,
        "shooting": shooting,
    });
    Ok(Outcome {
        result,
        pass: None,
        exit: if completed { EXIT_OK } else { EXIT_NUMERICAL },
    })
}

fn cmd_exp(cfg: &mut RunConfig) -> CliResult<Outcome> {
    let p = build_problem(cfg)?;
    let x0 = vector_or(&p, "x0", &mut cfg.x0, &p.reference_point)?;
    let v0 = vector(&p, "v0", &cfg.v0)?;
    let end = p.exp_atlas(&x0, &v0, &opts(cfg))?;
    Ok(Outcome::ok(json!({
        "x0": vec_json(&x0),
        "v0": vec_json(&v0),
        "chart": end.chart,
        "point": vec_json(&end.point()),
        "velocity": end.velocity,
    })))
}

fn cmd_flow(cfg: &mut RunConfig) -> CliResult<Outcome> {
    let name = cfg.field.clone().ok_or_else(|| usage("--field is required"))?;
    let f = catalog_field(&name, cfg.field_params.as_ref().unwrap_or(&Value::Null))?;
    let d = f.field.in_dim();
    let x0 = cfg.x0.clone().ok_or_else(|| usage("--x0 is required"))?;
    if x0.len() != d {
        return Err(usage(format!("--x0 has {} entries, the field has dimension {d}", x0.len())));
    }
    let x0 = Vector::from_column_slice(&x0);
    let o = opts(cfg);
    let t = *cfg.t.get_or_insert(1.0);
    let segments = *cfg.segments.get_or_insert(100);
    let horizon = *cfg.horizon.get_or_insert(10.0);
    let a = *cfg.half_width.get_or_insert(0.5);
    let traj = integrate_vector_field(&f.field, &f.domain, &x0, t, &o, segments)?;
    write_curve(cfg, &traj.path)?;
    let dom = flow_domain(&f.field, &f.domain, &x0, horizon, &o)?;
    let table = local_flow(&f.field, &f.domain, &f.space, std::slice::from_ref(&x0), a, 5, &o)?;
    let end = if t >= 0.0 { traj.path.last() } else { traj.path.first() };
    Ok(Outcome::ok(json!({
        "field": name,
        "x0": vec_json(&x0),
        "t": t,
        "reason": traj.reason,
        "t_reached": traj.t_reached,
        "endpoint": vec_json(end),
        "flow_domain": dom,
        "group_law_defect": table.group_law_defect,
        "inverse_defect": table.inverse_defect,
        "identity_defect": table.identity_defect,
    })))
}

fn cmd_distance(cfg: &mut RunConfig) -> CliResult<Outcome> {
    let p = build_problem(cfg)?;
    let x = vector_or(&p, "x", &mut cfg.x, &p.reference_point)?;
    let y = vector(&p, "y", &cfg.y)?;
    let ls = levels(cfg, &p)?;
    let mut r = finsler_distance(&p, &x, &y, &opts(cfg), &DistanceOptions::default())?;
    r.levels.retain(|l| ls.contains(&l.level));
    Ok(Outcome::ok(serde_json::to_value(r).expect("serialize")))
}

fn cmd_length(cfg: &mut RunConfig) -> CliResult<Outcome> {
    let p = build_problem(cfg)?;
    let c = subject_curve(cfg, &p)?;
    write_curve(cfg, &c)?;
    let rows = levels(cfg, &p)?
        .into_iter()
        .map(|n| Ok(json!({"level": n, "length": length_n(p.family(), n, &c)?, "energy": energy_n(p.family(), n, &c)?})))
        .collect::<CliResult<Vec<_>>>()?;
    Ok(Outcome::ok(json!({"levels": rows})))
}

fn cmd_el_residual(cfg: &mut RunConfig) -> CliResult<Outcome> {
    let p = build_problem(cfg)?;
    let c = subject_curve(cfg, &p)?;
    let tol = *cfg.tol.get_or_insert(1e-5);
    let mut pass = true;
    let rows = levels(cfg, &p)?
        .into_iter()
        .map(|n| {
            let r = el_residual(p.family(), n, &c)?;
            pass &= r.sup <= tol;
            Ok(json!({
                "level": n,
                "sup": r.sup,
                "position_term_sup": r.position_term_sup,
                "momentum_term_sup": r.momentum_term_sup,
            }))
        })
        .collect::<CliResult<Vec<_>>>()?;
    Ok(Outcome::check(json!({"tol": tol, "levels": rows}), pass))
}

const GAUSS_ORTHOGONALITY_TOL: f64 = 1e-5;
const GAUSS_SPEED_TOL: f64 = 1e-6;

fn cmd_gauss(cfg: &mut RunConfig) -> CliResult<Outcome> {
    let p = build_problem(cfg)?;
    let o = opts(cfg);
    let x0 = vector_or(&p, "x0", &mut cfg.x0, &p.reference_point)?;
    let mut injectivity = None;
    let eps = match cfg.epsilon {
        Some(e) => e,
        None => {
            let icfg = InjectivityConfig {
                samples: 64,
                seed: cfg.seed,
                ..Default::default()
            };
            let est = injectivity_radius_estimate(&p, &x0, &icfg, &o)?;
            injectivity = Some(est);
            *cfg.epsilon.insert(0.5 * est.radius)
        }
    };
    let s = *cfg.s_samples.get_or_insert(4);
    let t = *cfg.t_samples.get_or_insert(16);
    let r = gauss_check(&p, &x0, eps, s, t, &o)?;
    let pass = r.orthogonality_defect <= GAUSS_ORTHOGONALITY_TOL && r.speed_defect <= GAUSS_SPEED_TOL;
    Ok(Outcome::check(json!({"report": r, "injectivity": injectivity}), pass))
}

fn cmd_finsler_check(cfg: &mut RunConfig) -> CliResult<Outcome> {
    let p = build_problem(cfg)?;
    let x0 = vector_or(&p, "x0", &mut cfg.x0, &p.reference_point)?;
    let k = cfg.k.ok_or_else(|| usage("--k is required"))?;
    let radius = *cfg.radius.get_or_insert(1.0);
    let samples = *cfg.samples.get_or_insert(200);
    let r = finsler_check(p.family(), &x0, k, radius, samples, cfg.seed)?;
    let pass = r.pass;
    Ok(Outcome::check(serde_json::to_value(r).expect("serialize"), pass))
}

fn cmd_minimality(cfg: &mut RunConfig) -> CliResult<Outcome> {
    let p = build_problem(cfg)?;
    let c = subject_curve(cfg, &p)?;
    let trials = *cfg.trials.get_or_insert(100);
    let amplitude = *cfg.amplitude.get_or_insert(0.05);
    let r = minimality_test(&p, &c, trials, amplitude, cfg.seed)?;
    let pass = r.pass;
    Ok(Outcome::check(serde_json::to_value(r).expect("serialize"), pass))
}

fn cmd_transport(cfg: &mut RunConfig) -> CliResult<Outcome> {
    let p = build_problem(cfg)?;
    cfg.curve = None;
    let c = subject_curve(cfg, &p)?;
    let w0 = match &cfg.w0 {
        Some(_) => vector(&p, "w0", &cfg.w0)?,
        None => vector(&p, "v0", &cfg.v0)?,
    };
    let lift = parallel_transport(p.spray(), &c, &w0, &opts(cfg))?;
    write_curve(cfg, &lift)?;
    let drift = levels(cfg, &p)?
        .into_iter()
        .map(|n| Ok(json!({"level": n, "norm_drift": transported_norm_drift(p.family(), n, &c, &lift)?})))
        .collect::<CliResult<Vec<_>>>()?;
    Ok(Outcome::ok(json!({
        "w0": vec_json(&w0),
        "transported": vec_json(lift.last()),
        "endpoint": vec_json(c.last()),
        "levels": drift,
    })))
}

fn cmd_ricci(cfg: &mut RunConfig) -> CliResult<Outcome> {
    let kind_name = cfg.kind.get_or_insert_with(|| "ebin".into()).clone();
    let kind: SpdKind =
        serde_json::from_value(json!(kind_name)).map_err(|_| usage(format!("unknown kind {kind_name:?}; expected flat, affine_invariant or ebin")))?;
    let lambda = *cfg.lambda.get_or_insert(1.0);
    let t_end = *cfg.t_end.get_or_insert(0.25);
    let m = *cfg.m.get_or_insert(2);
    let weights = cfg.weights.get_or_insert_with(|| vec![1.0, 2.0]).clone();
    let rc = RicciConfig {
        segments: *cfg.segments.get_or_insert(RicciConfig::default().segments),
        seed: cfg.seed,
        ..Default::default()
    };
    let space = SpdMetricSpace::new(m, weights, kind)?;
    let r = ricci_nongeodesic_report(&space, lambda, &Matrix::identity(m, m), t_end, &rc, &opts(cfg))?;
    Ok(Outcome::ok(serde_json::to_value(r).expect("serialize")))
}

fn cmd_selftest(cfg: &mut RunConfig) -> CliResult<Outcome> {
    let ids = cfg.only.clone().unwrap_or_else(|| (1..=selftest::CRITERIA.len()).collect());
    if let Some(bad) = ids.iter().find(|i| **i == 0 || **i > selftest::CRITERIA.len()) {
        return Err(usage(format!("no criterion {bad}")));
    }
    let outcomes: Vec<_> = ids.into_iter().map(selftest::run_criterion).collect();
    let pass = outcomes.iter().all(|o| o.pass);
    Ok(Outcome::check(json!({"criteria": outcomes}), pass))
}

fn dispatch(command: &Command, cfg: &mut RunConfig) -> CliResult<Outcome> {
    match command {
        Command::Geodesic { .. } => cmd_geodesic(cfg),
        Command::Exp { .. } => cmd_exp(cfg),
        Command::Flow { .. } => cmd_flow(cfg),
        Command::Distance { .. } => cmd_distance(cfg),
        Command::Length { .. } => cmd_length(cfg),
        Command::ElResidual { .. } => cmd_el_residual(cfg),
        Command::Gauss { .. } => cmd_gauss(cfg),
        Command::FinslerCheck { .. } => cmd_finsler_check(cfg),
        Command::Minimality { .. } => cmd_minimality(cfg),
        Command::Transport { .. } => cmd_transport(cfg),
        Command::RicciDemo { .. } => cmd_ricci(cfg),
        Command::Selftest { .. } => cmd_selftest(cfg),
    }
}

/// What a run produced: the exit code and the text for each stream.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub code: i32,
    pub summary: Value,
    pub stdout: String,
    pub stderr: String,
}

fn timestamp() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Runs the CLI on `argv` (including the program name).
pub fn run(argv: &[String]) -> RunOutput {
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let (stdout, stderr) = if code == EXIT_OK { (text, String::new()) } else { (String::new(), text) };
            return RunOutput {
                code,
                summary: Value::Null,
                stdout,
                stderr,
            };
        }
    };
    let command = cli.command.name();
    let outcome = resolve(&cli).and_then(|mut cfg| dispatch(&cli.command, &mut cfg).map(|o| (o, cfg)));
    let (summary, code, stderr) = match outcome {
        Ok((o, cfg)) => (
            json!({"command": command, "config": cfg, "pass": o.pass, "result": o.result}),
            o.exit,
            String::new(),
        ),
        Err(e) => {
            let msg = match &e {
                CliError::Usage(m) => m.clone(),
                CliError::Geo(g) => g.to_string(),
            };
            (json!({"command": command, "error": e.to_json()}), e.exit_code(), format!("error: {msg}\n"))
        }
    };
    let stdout = if cli.global.pretty {
        render_pretty(&summary)
    } else {
        let doc = json!({
            "summary": summary,
            "envelope": {"timestamp": timestamp(), "version": env!("CARGO_PKG_VERSION")},
        });
        serde_json::to_string_pretty(&doc).expect("serialize") + "\n"
    };
    RunOutput { code, summary, stdout, stderr }
}

/// The serialized summary of a run, or `None` when argument parsing failed.
pub fn summary_json(argv: &[String]) -> Option<String> {
    let out = run(argv);
    (!out.summary.is_null()).then(|| serde_json::to_string(&out.summary).expect("serialize"))
}

fn flatten(prefix: &str, v: &Value, rows: &mut Vec<(String, String)>) {
    match v {
        Value::Object(map) => {
            for (k, x) in map {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, x, rows);
            }
        }
        Value::Array(xs) if xs.iter().any(|x| x.is_object() || x.is_array()) => {
            for (i, x) in xs.iter().enumerate() {
                flatten(&format!("{prefix}[{i}]"), x, rows);
            }
        }
        Value::Null => {}
        other => rows.push((prefix.to_string(), other.to_string())),
    }
}

/// Two-column `key  value` table of the summary.
pub fn render_pretty(summary: &Value) -> String {
    let mut rows = Vec::new();
    flatten("", summary, &mut rows);
    let width = rows.iter().map(|r| r.0.len()).max().unwrap_or(0);
    rows.iter().map(|(k, v)| format!("{k:<width$}  {v}\n")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn argv(args: &[&str]) -> Vec<String> {
        std::iter::once("gradedgeo").chain(args.iter().copied()).map(String::from).collect()
    }

    #[test]
    fn defaults() {
        let c = RunConfig::default();
        assert_eq!(c.rtol, 1e-9);
        assert_eq!(c.seed, 42);
        assert_eq!(c.atol, 1e-12);
    }

    #[test]
    fn unknown_key_is_named() {
        let e = serde_json::from_str::<RunConfig>(r#"{"problem": "flat", "gamma": 1}"#).unwrap_err();
        assert!(e.to_string().contains("gamma"));
    }

    #[test]
    fn geodesic_example() {
        let out = run(&argv(&["geodesic", "--problem", "flat", "--x0", "0,0", "--v0", "1,0", "--t", "1"]));
        assert_eq!(out.code, 0, "{}", out.stderr);
        let end: Vec<f64> = serde_json::from_value(out.summary["result"]["endpoint"].clone()).unwrap();
        assert!((end[0] - 1.0).abs() < 1e-12 && end[1].abs() < 1e-12);
    }

    #[test]
    fn negative_components_parse() {
        let out = run(&argv(&["exp", "--problem", "flat", "--x0", "-1,0.5", "--v0", "-2,-1"]));
        assert_eq!(out.code, 0, "{}", out.stderr);
        let p: Vec<f64> = serde_json::from_value(out.summary["result"]["point"].clone()).unwrap();
        assert!((p[0] + 3.0).abs() < 1e-12 && (p[1] + 0.5).abs() < 1e-12);
    }

    #[test]
    fn usage_errors_exit_two() {
        assert_eq!(run(&argv(&["geodesic", "--problem", "flat"])).code, 2);
        assert_eq!(run(&argv(&["geodesic", "--problem", "nope", "--v0", "1,0"])).code, 2);
        assert_eq!(run(&argv(&["bogus"])).code, 2);
        assert_eq!(run(&argv(&["distance", "--problem", "flat", "--y", "1,0", "--levels", "3"])).code, 2);
    }

    #[test]
    fn numerical_failure_exits_three() {
        let out = run(&argv(&["exp", "--problem", "conformal", "--v0", "0,30"]));
        assert_eq!(out.code, 3);
        assert_eq!(out.summary["error"]["reason"], "domain_exit");
    }

    #[test]
    fn check_failure_exits_one() {
        let out = run(&argv(&["finsler-check", "--problem", "conformal", "--k", "1.1"]));
        assert_eq!(out.code, 1);
        assert_eq!(out.summary["pass"], false);
    }

    #[test]
    fn pretty_table() {
        let out = run(&argv(&["geodesic", "--problem", "flat", "--v0", "1,0", "--pretty"]));
        assert!(out.stdout.lines().any(|l| l.starts_with("result.completed") && l.ends_with("true")));
    }

    #[test]
    fn schema_lists_keys() {
        let s = config_schema();
        let props = s["properties"].as_object().unwrap();
        assert!(props.contains_key("rtol") && props.contains_key("T"));
        assert_eq!(s["additionalProperties"], json!(false));
    }
}
