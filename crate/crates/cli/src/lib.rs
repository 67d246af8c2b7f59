//! Library side of the `obsbundle` binary. Each `cmd_*` returns a JSON
//! report and writes its files only after the run has succeeded.

pub mod config;

use std::fmt::Write as _;
use std::path::Path;

use obsbundle_core::constraints::{classify_dirac, surface_samples, DiracTolerance};
use obsbundle_core::geometry::{validate_properness, PropernessOptions};
use obsbundle_core::integrator::{convergence_study, integrate, Trajectory};
use obsbundle_core::lax::{lax_report, LaxRunOptions};
use obsbundle_core::{BundleError, BundleState, ObservationSystemSpec};
use serde::Serialize;
use serde_json::{json, Value};

pub use config::RunConfig;

#[derive(Debug)]
pub enum CliError {
    /// Unreadable, malformed or out-of-range input. Exit code 2.
    Config(String),
    /// Failure inside the numerical core.
    Run(BundleError),
    /// Output could not be written. Exit code 3.
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Run(e) if is_precondition(e) => 2,
            CliError::Run(_) | CliError::Io(_) => 3,
        }
    }

    pub fn category(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Run(e) => e.category(),
            CliError::Io(_) => "io",
        }
    }
}

/// Errors raised before any numerical work begins.
fn is_precondition(e: &BundleError) -> bool {
    matches!(
        e,
        BundleError::InvalidParameter(_) | BundleError::InvalidInput(_) | BundleError::InsufficientSamples { .. }
    )
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) | CliError::Io(m) => f.write_str(m),
            CliError::Run(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<BundleError> for CliError {
    fn from(e: BundleError) -> Self {
        CliError::Run(e)
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

fn write_file(path: &Path, contents: &str) -> CliResult<()> {
    std::fs::write(path, contents).map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
}

/// Writes `report` to `out` when given and returns it either way.
fn emit(report: Value, out: Option<&Path>) -> CliResult<Value> {
    if let Some(path) = out {
        let text = serde_json::to_string_pretty(&report).expect("report serializes");
        write_file(path, &(text + "\n"))?;
    }
    Ok(report)
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("report serializes")
}

/// Trajectory CSV: digest comment, header, then one row per state.
pub fn trajectory_csv(spec: &ObservationSystemSpec, traj: &Trajectory, digest: &str) -> String {
    let layout = spec.layout;
    let mut out = format!("# config_digest={digest}\nt");
    for i in 1..=layout.base_dim() {
        write!(out, ",x{i}").unwrap();
    }
    for a in 1..=layout.k {
        write!(out, ",xi{a}").unwrap();
    }
    for a in 1..=layout.k {
        write!(out, ",pi{a}").unwrap();
    }
    out.push_str(",phi,energy,h_used\n");
    let mut row = |s: &BundleState, h_used: f64| {
        write!(out, "{}", s.t).unwrap();
        for v in s.x.iter().chain(&s.xi).chain(&s.pi) {
            write!(out, ",{v}").unwrap();
        }
        match spec.constraint_value(s) {
            Some(phi) => write!(out, ",{phi}").unwrap(),
            None => out.push(','),
        }
        writeln!(out, ",{},{h_used}", spec.energy(s)).unwrap();
    };
    row(&traj.initial, 0.0);
    for st in &traj.steps {
        row(&st.state, st.diagnostics.h_used);
    }
    out
}

/// Diagnostics JSONL, one record per accepted step, each tagged with the digest.
pub fn diagnostics_jsonl(traj: &Trajectory, digest: &str) -> String {
    let mut out = String::new();
    for st in &traj.steps {
        let mut rec = to_value(&st.diagnostics);
        rec.as_object_mut()
            .expect("diagnostics is a record")
            .insert("config_digest".into(), Value::String(digest.to_owned()));
        out.push_str(&rec.to_string());
        out.push('\n');
    }
    out
}

pub struct SimulateOutputs<'a> {
    pub trajectory: Option<&'a Path>,
    pub diagnostics: Option<&'a Path>,
}

pub fn cmd_simulate(cfg: &RunConfig, outputs: SimulateOutputs<'_>) -> CliResult<Value> {
    let digest = cfg.digest();
    let sys = cfg.build_system()?;
    let traj = integrate(&sys.spec, &sys.initial, &cfg.integrator_config())?;

    let traj_path = outputs.trajectory.or(cfg.output.trajectory.as_deref());
    let diag_path = outputs.diagnostics.or(cfg.output.diagnostics.as_deref());
    if let Some(p) = traj_path {
        write_file(p, &trajectory_csv(&sys.spec, &traj, &digest))?;
    }
    if let Some(p) = diag_path {
        write_file(p, &diagnostics_jsonl(&traj, &digest))?;
    }

    let e0 = sys.spec.energy(&traj.initial);
    let energy_drift = traj.steps.iter().map(|s| (s.diagnostics.energy - e0).abs()).fold(0.0, f64::max);
    Ok(json!({
        "config_digest": digest,
        "system": cfg.system.name(),
        "steps": traj.steps.len(),
        "t_final": traj.final_state().t,
        "max_abs_phi": traj.max_abs_phi(),
        "max_abs_phi_predicted": traj.max_abs_phi_predicted(),
        "energy_initial": e0,
        "energy_final": sys.spec.energy(traj.final_state()),
        "max_energy_drift": energy_drift,
        "clamps": traj.steps.iter().filter(|s| s.diagnostics.clamped).count(),
        "retries": traj.steps.iter().map(|s| s.diagnostics.retries).sum::<usize>(),
        "max_eps_geo": traj.steps.iter().map(|s| s.diagnostics.eps_geo).fold(0.0, f64::max),
        "class_transitions": to_value(&traj.class_transitions),
    }))
}

pub fn cmd_converge(cfg: &RunConfig, levels: usize, out: Option<&Path>) -> CliResult<Value> {
    if levels < 3 {
        return Err(CliError::Config(format!("levels must be at least 3, got {levels}")));
    }
    let sys = cfg.build_system()?;
    let report = convergence_study(&sys.spec, &sys.initial, &cfg.integrator_config(), levels)?;
    emit(
        json!({
            "config_digest": cfg.digest(),
            "system": cfg.system.name(),
            "levels": levels,
            "report": to_value(&report),
        }),
        out.or(cfg.output.report.as_deref()),
    )
}

pub fn cmd_classify(cfg: &RunConfig, samples: usize, seed: u64, out: Option<&Path>) -> CliResult<Value> {
    if samples == 0 {
        return Err(CliError::Config("samples must be positive".into()));
    }
    let sys = cfg.build_system()?;
    if sys.spec.constraint.is_none() {
        return Err(CliError::Config(format!("system {} has no constraint to classify", cfg.system.name())));
    }
    let points = surface_samples(&sys.spec, &sys.sampling, samples, seed)?;
    let report = classify_dirac(
        &sys.spec,
        &points,
        DiracTolerance::default(),
        samples.min(10),
        cfg.integrator.backend,
    )?;
    emit(
        json!({
            "config_digest": cfg.digest(),
            "system": cfg.system.name(),
            "seed": seed,
            "report": to_value(&report),
        }),
        out.or(cfg.output.report.as_deref()),
    )
}

pub fn cmd_lax(opts: &LaxRunOptions, out: Option<&Path>) -> CliResult<Value> {
    if !(opts.dt > 0.0) {
        return Err(CliError::Config(format!("dt must be positive, got {}", opts.dt)));
    }
    if !(opts.t_final > 0.0) {
        return Err(CliError::Config(format!("t_final must be positive, got {}", opts.t_final)));
    }
    let options_json = serde_json::to_string(opts).expect("options serialize");
    let report = lax_report(opts)?;
    emit(
        json!({
            "config_digest": config::digest_of(&options_json),
            "options": to_value(opts),
            "report": to_value(&report),
        }),
        out,
    )
}

/// Grid for the properness check: the origin plus `grid − 1` radii on every
/// base axis, with the fiber at half the local uncertainty along `ξ₁`.
pub fn radial_grid(spec: &ObservationSystemSpec, grid: usize, radius: f64) -> Vec<BundleState> {
    let layout = spec.layout;
    let dim = layout.base_dim();
    let make = |x: Vec<f64>| {
        let mut xi = vec![0.0; layout.k];
        if let Some(first) = xi.first_mut() {
            *first = 0.5 * spec.uncertainty_at(&x);
        }
        BundleState::new(0.0, x, xi, vec![0.0; layout.k])
    };
    let mut out = vec![make(vec![0.0; dim])];
    for j in 1..grid {
        let r = radius * j as f64 / (grid - 1) as f64;
        for i in 0..dim {
            let mut x = vec![0.0; dim];
            x[i] = r;
            out.push(make(x));
        }
    }
    out
}

pub struct ValidateOptions {
    pub grid: usize,
    pub radius: f64,
    pub fit_min_distance: f64,
}

impl Default for ValidateOptions {
    fn default() -> Self {
        Self {
            grid: 31,
            radius: 30.0,
            fit_min_distance: 3.0,
        }
    }
}

pub fn cmd_validate(cfg: &RunConfig, opts: &ValidateOptions, out: Option<&Path>) -> CliResult<Value> {
    if opts.grid == 0 {
        return Err(CliError::Config("grid must be positive".into()));
    }
    if !(opts.radius > 0.0 && opts.radius.is_finite()) {
        return Err(CliError::Config(format!("radius must be positive, got {}", opts.radius)));
    }
    let sys = cfg.build_system()?;
    let samples = radial_grid(&sys.spec, opts.grid, opts.radius);
    let report = validate_properness(
        &sys.spec,
        &samples,
        &PropernessOptions {
            fit_min_distance: opts.fit_min_distance,
            ..PropernessOptions::default()
        },
    )?;
    emit(
        json!({
            "config_digest": cfg.digest(),
            "system": cfg.system.name(),
            "grid": opts.grid,
            "radius": opts.radius,
            "report": to_value(&report),
        }),
        out.or(cfg.output.report.as_deref()),
    )
}
