//! Constraint-preserving integrator: covariant prediction, projection onto the
//! constraint surface, fiber clamping and geometric step control.

use serde::{Deserialize, Serialize};

use crate::constraints::{constrained_rhs_gated, project_along_gradient, ConstrainedVelocity, DiracClass, RegularizationParams};
use crate::error::{BundleError, Result};
use crate::geometry::{clamp_with, fit_slope, metric_compat_residual, mixed_connection};
use crate::numdiff;
use crate::poisson::{assemble_omega, BracketBackend};
use crate::system::{BundleState, Layout, Matrix, ObservationSystemSpec, Vector};

/// When the projection step is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintMode {
    /// Project only when `Φ < −tol_constraint`; the multiplier is off while `Φ > tol_constraint`.
    #[default]
    Inequality,
    /// Project whenever `|Φ| > tol_constraint`; for level-set constraints.
    Equality,
    /// Never project; the regularized multiplier alone restores the constraint.
    Soft,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegratorConfig {
    pub h0: f64,
    pub h_min: f64,
    pub h_max: f64,
    pub tol_geo: f64,
    pub t_final: f64,
    pub adapt: bool,
    pub max_projection_iters: usize,
    pub tol_constraint: f64,
    pub regularization: RegularizationParams,
    pub backend: BracketBackend,
    pub growth_factor: f64,
    pub constraint_mode: ConstraintMode,
    /// Forces λ = 0 on the surface, for constraints known to be first class.
    pub first_class_hint: bool,
    /// Evaluate the step-map symplecticity residual; otherwise only the metric term.
    pub symplectic_check: bool,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            h0: 0.01,
            h_min: 1e-6,
            h_max: 0.1,
            tol_geo: 1e-2,
            t_final: 1.0,
            adapt: true,
            max_projection_iters: 5,
            tol_constraint: 1e-10,
            regularization: RegularizationParams::default(),
            backend: BracketBackend::default(),
            growth_factor: 1.5,
            constraint_mode: ConstraintMode::default(),
            first_class_hint: false,
            symplectic_check: true,
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(BundleError::InvalidParameter(msg));
        if !(self.h_min > 0.0 && self.h_min <= self.h0 && self.h0 <= self.h_max && self.h_max.is_finite()) {
            return bad(format!(
                "need 0 < h_min ≤ h0 ≤ h_max, got {} / {} / {}",
                self.h_min, self.h0, self.h_max
            ));
        }
        if !(self.tol_geo > 0.0) {
            return bad(format!("tol_geo must be > 0, got {}", self.tol_geo));
        }
        if !(self.tol_constraint > 0.0 && self.tol_constraint.is_finite()) {
            return bad(format!("tol_constraint must be > 0, got {}", self.tol_constraint));
        }
        if self.max_projection_iters < 1 {
            return bad("max_projection_iters must be ≥ 1".into());
        }
        if !(self.growth_factor >= 1.0 && self.growth_factor.is_finite()) {
            return bad(format!("growth_factor must be ≥ 1, got {}", self.growth_factor));
        }
        if !self.t_final.is_finite() {
            return bad("t_final must be finite".into());
        }
        self.regularization.validate()
    }
}

/// Per-step health record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub t: f64,
    pub h_used: f64,
    /// Φ after projection and clamping.
    pub phi_value: Option<f64>,
    /// Φ of the predicted state, before any correction.
    pub phi_predicted: Option<f64>,
    pub energy: f64,
    pub eps_geo: f64,
    pub eps_metric: f64,
    pub eps_symplectic: f64,
    pub projection_iters: usize,
    pub clamped: bool,
    pub lambda_value: f64,
    /// Pointwise class of the constraint at the step's start.
    pub class_flag: Option<DiracClass>,
    /// Number of step-size halvings before acceptance.
    pub retries: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub state: BundleState,
    pub diagnostics: StepDiagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub spec_name: String,
    pub layout: Layout,
    pub config: IntegratorConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassTransition {
    pub t: f64,
    pub from: DiracClass,
    pub to: DiracClass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub manifest: RunManifest,
    pub initial: BundleState,
    pub steps: Vec<TrajectoryStep>,
    pub class_transitions: Vec<ClassTransition>,
}

impl Trajectory {
    pub fn final_state(&self) -> &BundleState {
        self.steps.last().map_or(&self.initial, |s| &s.state)
    }

    pub fn states(&self) -> impl Iterator<Item = &BundleState> {
        std::iter::once(&self.initial).chain(self.steps.iter().map(|s| &s.state))
    }

    pub fn max_abs_phi(&self) -> Option<f64> {
        self.steps
            .iter()
            .map(|s| s.diagnostics.phi_value.map(f64::abs))
            .try_fold(0.0f64, |m, v| v.map(|v| m.max(v)))
            .filter(|_| !self.steps.is_empty())
    }

    pub fn max_abs_phi_predicted(&self) -> Option<f64> {
        self.steps
            .iter()
            .map(|s| s.diagnostics.phi_predicted.map(f64::abs))
            .try_fold(0.0f64, |m, v| v.map(|v| m.max(v)))
            .filter(|_| !self.steps.is_empty())
    }
}

/// The multiplier of an inequality constraint is inactive in the interior
/// `Φ > tol_constraint`. Decided once per step and frozen for the step's
/// linearization, so the finite-difference Jacobian never straddles the switch.
fn multiplier_active(spec: &ObservationSystemSpec, state: &BundleState, cfg: &IntegratorConfig) -> bool {
    match (&spec.constraint, cfg.constraint_mode) {
        (Some(phi), ConstraintMode::Inequality) => phi.eval_state(state) <= cfg.tol_constraint,
        _ => true,
    }
}

/// Constrained velocity with the horizontal-lift correction
/// `Ξ^a += Σ Γ^a_{bi} ξ_b ẋ^i` on the ξ block.
fn lifted_velocity(
    spec: &ObservationSystemSpec,
    state: &BundleState,
    cfg: &IntegratorConfig,
    active: bool,
) -> Result<(Vector, ConstrainedVelocity)> {
    let cv = constrained_rhs_gated(
        spec,
        state,
        &cfg.regularization,
        cfg.backend,
        cfg.first_class_hint,
        active,
    )?;
    let mut v = cv.velocity.clone();
    let layout = spec.layout;
    let conn = mixed_connection(spec, &state.x)?;
    let xo = layout.xi_offset();
    for (i, g) in conn.gamma.iter().enumerate() {
        let x_dot = cv.velocity[i];
        if x_dot == 0.0 {
            continue;
        }
        for a in 0..layout.k {
            let lift: f64 = (0..layout.k).map(|b| g[(a, b)] * state.xi[b]).sum();
            v[xo + a] += lift * x_dot;
        }
    }
    Ok((v, cv))
}

/// Prediction `z* = z + h v` with `v` the lifted constrained velocity.
pub fn predict(spec: &ObservationSystemSpec, state: &BundleState, h: f64, cfg: &IntegratorConfig) -> Result<BundleState> {
    Ok(predict_with(spec, state, h, cfg)?.0)
}

fn predict_with(
    spec: &ObservationSystemSpec,
    state: &BundleState,
    h: f64,
    cfg: &IntegratorConfig,
) -> Result<(BundleState, ConstrainedVelocity)> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(BundleError::InvalidParameter(format!("step size must be positive, got {h}")));
    }
    spec.check_state(state)?;
    let (v, cv) = lifted_velocity(spec, state, cfg, multiplier_active(spec, state, cfg))?;
    let z = state.phase() + v * h;
    Ok((BundleState::from_phase(state.t + h, spec.layout, z.as_slice()), cv))
}

/// Moves the state back to the feasible set according to the constraint mode.
pub fn project_constraint(
    spec: &ObservationSystemSpec,
    state: &BundleState,
    cfg: &IntegratorConfig,
) -> Result<(BundleState, usize)> {
    let Some(phi) = &spec.constraint else {
        return Ok((state.clone(), 0));
    };
    let tol = cfg.tol_constraint;
    let value = phi.eval_state(state);
    match cfg.constraint_mode {
        ConstraintMode::Soft => Ok((state.clone(), 0)),
        ConstraintMode::Inequality if value >= -tol => Ok((state.clone(), 0)),
        ConstraintMode::Inequality => project_along_gradient(spec, state, cfg.max_projection_iters, |v| v >= -tol),
        ConstraintMode::Equality if value.abs() <= tol => Ok((state.clone(), 0)),
        ConstraintMode::Equality => project_along_gradient(spec, state, cfg.max_projection_iters, |v| v.abs() <= tol),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeometricError {
    /// `max(metric, symplectic)`.
    pub total: f64,
    pub metric: f64,
    /// `‖JᵀΩJ − Ω‖_F / ‖Ω‖_F` for the prediction map's Jacobian `J`.
    pub symplectic: f64,
}

/// Per-step geometric error. The symplectic term uses the Jacobian of the
/// prediction map only; projection and clamping are retractions and excluded.
pub fn geometric_error(
    spec: &ObservationSystemSpec,
    state: &BundleState,
    h: f64,
    cfg: &IntegratorConfig,
) -> Result<GeometricError> {
    let metric = metric_compat_residual(spec, &state.x)?;
    let symplectic = if cfg.symplectic_check {
        symplectic_residual(spec, state, h, cfg)?
    } else {
        0.0
    };
    Ok(GeometricError {
        total: metric.max(symplectic),
        metric,
        symplectic,
    })
}

fn symplectic_residual(spec: &ObservationSystemSpec, state: &BundleState, h: f64, cfg: &IntegratorConfig) -> Result<f64> {
    let layout = spec.layout;
    let z0 = state.phase();
    let active = multiplier_active(spec, state, cfg);
    let failure = std::cell::Cell::new(None);
    let dv = numdiff::jacobian(
        |z| {
            let s = BundleState::from_phase(state.t, layout, z);
            match lifted_velocity(spec, &s, cfg, active) {
                Ok((v, _)) => v,
                Err(e) => {
                    failure.set(Some(e));
                    Vector::from_element(layout.phase_dim(), f64::NAN)
                }
            }
        },
        z0.as_slice(),
        spec.gradient_step,
    );
    if let Some(e) = failure.into_inner() {
        return Err(e);
    }
    let dim = layout.phase_dim();
    let j = Matrix::identity(dim, dim) + dv * h;
    let omega = assemble_omega(spec, state)?.matrix;
    let norm = omega.norm();
    if norm == 0.0 {
        return Err(BundleError::DegenerateStructure { scale: 0.0 });
    }
    Ok((j.transpose() * &omega * &j - &omega).norm() / norm)
}

/// Result of one accepted step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub state: BundleState,
    pub diagnostics: StepDiagnostics,
    pub h_next: f64,
}

fn attempt(spec: &ObservationSystemSpec, state: &BundleState, h: f64, cfg: &IntegratorConfig) -> Result<(BundleState, StepDiagnostics)> {
    let (predicted, cv) = predict_with(spec, state, h, cfg)?;
    let phi_predicted = spec.constraint_value(&predicted);
    let (mut next, projection_iters) = project_constraint(spec, &predicted, cfg)?;
    let rho = spec.fiber_metric_at(&next.x);
    let delta = spec.uncertainty_at(&next.x);
    let (xi, clamped) = clamp_with(&rho, delta, &next.xi);
    next.xi = xi;
    if !next.is_finite() {
        return Err(BundleError::Domain(format!("non-finite state after step at t = {}", state.t)));
    }
    let geo = geometric_error(spec, state, h, cfg)?;
    let class_flag = spec.constraint.as_ref().map(|_| {
        if cv.drift.abs() <= cv.weak_tolerance {
            DiracClass::FirstClass
        } else {
            DiracClass::SecondClass
        }
    });
    let diagnostics = StepDiagnostics {
        t: next.t,
        h_used: h,
        phi_value: spec.constraint_value(&next),
        phi_predicted,
        energy: spec.energy(&next),
        eps_geo: geo.total,
        eps_metric: geo.metric,
        eps_symplectic: geo.symplectic,
        projection_iters,
        clamped,
        lambda_value: cv.lambda,
        class_flag,
        retries: 0,
    };
    Ok((next, diagnostics))
}

/// One step of the constraint-preserving scheme with geometric step control.
pub fn step(spec: &ObservationSystemSpec, state: &BundleState, h: f64, cfg: &IntegratorConfig) -> Result<StepOutcome> {
    let mut h = h;
    let mut retries = 0;
    loop {
        let (next, mut diagnostics) = attempt(spec, state, h, cfg)?;
        diagnostics.retries = retries;
        if cfg.adapt && diagnostics.eps_geo > cfg.tol_geo {
            if h <= cfg.h_min {
                return Err(BundleError::StepFailure {
                    t: state.t,
                    eps_geo: diagnostics.eps_geo,
                    diagnostics: Box::new(diagnostics),
                });
            }
            h = (h / 2.0).max(cfg.h_min);
            retries += 1;
            continue;
        }
        let h_next = if cfg.adapt && diagnostics.eps_geo < 0.1 * cfg.tol_geo {
            (cfg.growth_factor * h).min(cfg.h_max)
        } else {
            h
        };
        return Ok(StepOutcome {
            state: next,
            diagnostics,
            h_next,
        });
    }
}

/// Integrates from `state0` to `cfg.t_final`, landing exactly on it.
pub fn integrate(spec: &ObservationSystemSpec, state0: &BundleState, cfg: &IntegratorConfig) -> Result<Trajectory> {
    cfg.validate()?;
    spec.check_state(state0)?;
    if !(cfg.t_final > state0.t) {
        return Err(BundleError::InvalidParameter(format!(
            "t_final = {} must exceed the initial time {}",
            cfg.t_final, state0.t
        )));
    }
    let mut traj = Trajectory {
        manifest: RunManifest {
            spec_name: spec.name.clone(),
            layout: spec.layout,
            config: cfg.clone(),
        },
        initial: state0.clone(),
        steps: Vec::new(),
        class_transitions: Vec::new(),
    };
    let mut state = state0.clone();
    let mut h = cfg.h0;
    let mut last_class: Option<DiracClass> = None;
    while state.t < cfg.t_final {
        let remaining = cfg.t_final - state.t;
        let snap = h >= remaining * (1.0 - 1e-9);
        let h_try = if snap { remaining } else { h };
        let outcome = match step(spec, &state, h_try, cfg) {
            Ok(o) => o,
            Err(e) => {
                return Err(BundleError::Aborted {
                    steps: traj.steps.len(),
                    partial: Box::new(traj),
                    source: Box::new(e),
                })
            }
        };
        let StepOutcome {
            state: mut next,
            mut diagnostics,
            h_next,
        } = outcome;
        if snap && diagnostics.h_used == h_try {
            next.t = cfg.t_final;
            diagnostics.t = cfg.t_final;
        } else {
            h = h_next;
        }
        if let Some(c) = diagnostics.class_flag {
            if let Some(prev) = last_class.filter(|&p| p != c) {
                traj.class_transitions.push(ClassTransition {
                    t: state.t,
                    from: prev,
                    to: c,
                });
            }
            last_class = Some(c);
        }
        state = next.clone();
        traj.steps.push(TrajectoryStep { state: next, diagnostics });
    }
    Ok(traj)
}

/// Observed convergence orders of one error measure across step sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderEstimate {
    pub errors: Vec<f64>,
    /// `log2(e(h) / e(h/2))` for consecutive levels.
    pub pairwise: Vec<Option<f64>>,
    /// Least-squares slope of `ln e` against `ln h`.
    pub fitted: Option<f64>,
    /// All errors at round-off level; orders are undefined.
    pub exact: bool,
}

const EXACT_ERROR: f64 = 1e-12;

impl OrderEstimate {
    pub fn from_errors(hs: &[f64], errors: Vec<f64>) -> Self {
        let exact = errors.iter().all(|&e| e <= EXACT_ERROR);
        let usable = |e: f64| e > EXACT_ERROR && e.is_finite();
        let pairwise = errors
            .windows(2)
            .map(|w| (!exact && usable(w[0]) && usable(w[1])).then(|| (w[0] / w[1]).log2()))
            .collect();
        let points: Vec<(f64, f64)> = hs
            .iter()
            .zip(&errors)
            .filter(|(_, &e)| usable(e))
            .map(|(h, e)| (h.ln(), e.ln()))
            .collect();
        let fitted = if exact || points.len() < errors.len() {
            None
        } else {
            fit_slope(&points)
        };
        Self {
            errors,
            pairwise,
            fitted,
            exact,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderReport {
    pub step_sizes: Vec<f64>,
    pub reference_step: f64,
    /// Max `|Φ|` of the predicted states; absent without a constraint.
    pub phi: Option<OrderEstimate>,
    /// Terminal phase-space distance to the reference run.
    pub global: OrderEstimate,
}

/// Fixed-step runs at `h0, h0/2, …` against a reference at `h0 / 2^{levels+2}`.
pub fn convergence_study(
    spec: &ObservationSystemSpec,
    state0: &BundleState,
    cfg: &IntegratorConfig,
    levels: usize,
) -> Result<OrderReport> {
    if levels < 3 {
        return Err(BundleError::InvalidParameter(format!("levels must be ≥ 3, got {levels}")));
    }
    cfg.validate()?;
    let hs: Vec<f64> = (0..levels).map(|l| cfg.h0 / 2f64.powi(l as i32)).collect();
    let h_ref = cfg.h0 / 2f64.powi(levels as i32 + 2);
    let fixed = |h: f64, check: bool| IntegratorConfig {
        h0: h,
        h_min: h.min(cfg.h_min),
        h_max: h.max(cfg.h_max),
        adapt: false,
        symplectic_check: check && cfg.symplectic_check,
        ..cfg.clone()
    };

    let runs: Vec<Result<Trajectory>> = std::thread::scope(|scope| {
        let handles: Vec<_> = hs
            .iter()
            .map(|&h| h)
            .chain(std::iter::once(h_ref))
            .enumerate()
            .map(|(i, h)| {
                let run_cfg = fixed(h, i < levels);
                scope.spawn(move || integrate(spec, state0, &run_cfg))
            })
            .collect();
        handles
            .into_iter()
            .map(|handle| handle.join().expect("convergence level panicked"))
            .collect()
    });
    let mut runs = runs.into_iter().collect::<Result<Vec<_>>>()?;
    let reference = runs.pop().expect("reference run");
    let z_ref = reference.final_state().phase();

    let global = runs.iter().map(|r| (r.final_state().phase() - &z_ref).norm()).collect();
    let phi = spec.constraint.as_ref().map(|_| {
        let errors = runs.iter().map(|r| r.max_abs_phi_predicted().unwrap_or(0.0)).collect();
        OrderEstimate::from_errors(&hs, errors)
    });
    Ok(OrderReport {
        global: OrderEstimate::from_errors(&hs, global),
        phi,
        step_sizes: hs,
        reference_step: h_ref,
    })
}
