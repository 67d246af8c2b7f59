//! Dirac classification of observation constraints, the regularized
//! multiplier for second-class constraints, and the constrained vector field.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{BundleError, Result};
use crate::geometry::metric_compat_residual;
use crate::poisson::{assemble_omega, bracket_matrix, differential, raise_differential, BracketBackend};
use crate::system::{BundleState, Matrix, ObservationSystemSpec, PhaseFunction, Vector};

/// Parameters of the regularized second-class treatment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegularizationParams {
    /// Artificial dissipation α ≥ 0.
    pub alpha_dissipation: f64,
    /// Numerical regularization ε > 0 in the multiplier denominator.
    pub eps_reg: f64,
    /// Lower bound μ of ‖∇_E Φ‖ near the surface, estimated when absent.
    #[serde(default)]
    pub mu_floor: Option<f64>,
    /// Characteristic time of the system.
    pub t_char: f64,
}

impl Default for RegularizationParams {
    fn default() -> Self {
        Self {
            alpha_dissipation: 1.0,
            eps_reg: 1e-3,
            mu_floor: None,
            t_char: 1.0,
        }
    }
}

impl RegularizationParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha_dissipation >= 0.0 && self.alpha_dissipation.is_finite()) {
            return Err(BundleError::InvalidParameter(format!(
                "alpha_dissipation must be ≥ 0, got {}",
                self.alpha_dissipation
            )));
        }
        if !(self.eps_reg > 0.0 && self.eps_reg.is_finite()) {
            return Err(BundleError::InvalidParameter(format!("eps_reg must be > 0, got {}", self.eps_reg)));
        }
        if !(self.t_char > 0.0 && self.t_char.is_finite()) {
            return Err(BundleError::InvalidParameter(format!("t_char must be > 0, got {}", self.t_char)));
        }
        if let Some(mu) = self.mu_floor {
            if !(mu >= 0.0 && mu.is_finite()) {
                return Err(BundleError::InvalidParameter(format!("mu_floor must be ≥ 0, got {mu}")));
            }
        }
        Ok(())
    }

    /// Checks `α ≤ α_max(μ, ‖{H,Φ}‖, T_char)`.
    pub fn validate_dissipation(&self, mu: f64, bracket_norm: f64) -> Result<()> {
        let limit = alpha_max(mu, bracket_norm, self.t_char)?;
        if self.alpha_dissipation > limit {
            return Err(BundleError::InvalidParameter(format!(
                "alpha_dissipation {} exceeds α_max = {limit}",
                self.alpha_dissipation
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiracClass {
    FirstClass,
    SecondClass,
    Indeterminate,
}

/// Per-sample weak-equality tolerance for `{H, Φ} ≈ 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiracTolerance {
    Fixed(f64),
    /// `rel · (1 + |H| + ‖dH‖ ‖dΦ‖)` evaluated at each sample.
    ScaleAware(f64),
}

const WEAK_EQUALITY_REL: f64 = 1e-8;

impl Default for DiracTolerance {
    fn default() -> Self {
        DiracTolerance::ScaleAware(WEAK_EQUALITY_REL)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiracReport {
    pub classification: DiracClass,
    pub max_abs_bracket: f64,
    /// Tolerance at the sample with the largest bracket-to-tolerance ratio.
    pub tolerance: f64,
    /// `max_s |{H,Φ}(s)| / tol(s)`; first class iff ≤ 1.
    pub max_ratio: f64,
    pub samples_used: usize,
}

/// Samples closer than this to the surface count as lying on it.
pub const SURFACE_TOL: f64 = 1e-6;

/// Classifies the registered constraint against the Hamiltonian on surface samples.
pub fn classify_dirac(
    spec: &ObservationSystemSpec,
    surface_samples: &[BundleState],
    tol: DiracTolerance,
    min_samples: usize,
    backend: BracketBackend,
) -> Result<DiracReport> {
    let phi = require_constraint(spec)?;
    if surface_samples.is_empty() {
        return Err(BundleError::InsufficientSamples {
            needed: min_samples.max(1),
            got: 0,
        });
    }
    let mut max_abs = 0.0f64;
    let mut worst = (0.0f64, 0.0f64); // (ratio, tolerance)
    for s in surface_samples {
        spec.check_state(s)?;
        let value = phi.eval_state(s);
        if value.abs() > SURFACE_TOL {
            return Err(BundleError::InvalidInput(format!(
                "sample is off the constraint surface (Φ = {value:e}); project it first"
            )));
        }
        let b = bracket_matrix(spec, s, backend)?;
        let dh = differential(spec, &spec.hamiltonian, s);
        let dphi = differential(spec, phi, s);
        let bracket = dh.dot(&(&b * &dphi));
        let t = match tol {
            DiracTolerance::Fixed(t) => t,
            DiracTolerance::ScaleAware(rel) => rel * (1.0 + spec.hamiltonian.eval_state(s).abs() + dh.norm() * dphi.norm()),
        };
        let ratio = bracket.abs() / t;
        max_abs = max_abs.max(bracket.abs());
        if ratio > worst.0 || worst.1 == 0.0 {
            worst = (ratio.max(worst.0), t);
        }
    }
    let classification = if surface_samples.len() < min_samples {
        DiracClass::Indeterminate
    } else if worst.0 <= 1.0 {
        DiracClass::FirstClass
    } else {
        DiracClass::SecondClass
    };
    Ok(DiracReport {
        classification,
        max_abs_bracket: max_abs,
        tolerance: worst.1,
        max_ratio: worst.0,
        samples_used: surface_samples.len(),
    })
}

pub(crate) fn require_constraint(spec: &ObservationSystemSpec) -> Result<&PhaseFunction> {
    spec.constraint
        .as_ref()
        .ok_or_else(|| BundleError::InvalidInput(format!("system '{}' has no constraint", spec.name)))
}

/// Moves `state` along `ν = G⁻¹dΦ / ‖G⁻¹dΦ‖_G` by `a = −Φ/⟨dΦ, ν⟩` until `done(Φ)`.
///
/// Returns the corrected state and the number of iterations taken.
pub(crate) fn project_along_gradient(
    spec: &ObservationSystemSpec,
    state: &BundleState,
    max_iters: usize,
    done: impl Fn(f64) -> bool,
) -> Result<(BundleState, usize)> {
    let phi = require_constraint(spec)?;
    let layout = spec.layout;
    let mut current = state.clone();
    let mut value = phi.eval_state(&current);
    for iter in 0..max_iters {
        if done(value) {
            return Ok((current, iter));
        }
        let dphi = differential(spec, phi, &current);
        let (raised, norm_sq) = raise_differential(spec, &current.x, &dphi)?;
        let pairing = norm_sq.sqrt();
        if !(pairing > 1e-14) {
            return Err(BundleError::ProjectionFailure { pairing });
        }
        let nu = raised.to_phase() / pairing;
        let z = current.phase() + nu * (-value / pairing);
        current = BundleState::from_phase(current.t, layout, z.as_slice());
        value = phi.eval_state(&current);
    }
    if done(value) {
        return Ok((current, max_iters));
    }
    Err(BundleError::NonConvergence {
        iters: max_iters,
        phi: value,
        best: Box::new(current),
    })
}

/// Region from which random surface samples are drawn before projection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingBox {
    pub center: BundleState,
    pub base_radius: f64,
    pub fiber_radius: f64,
}

/// Random points on `Φ = 0`, obtained by projecting uniform draws from the box.
pub fn surface_samples(spec: &ObservationSystemSpec, region: &SamplingBox, count: usize, seed: u64) -> Result<Vec<BundleState>> {
    require_constraint(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0usize;
    while out.len() < count {
        attempts += 1;
        if attempts > 20 * count + 100 {
            return Err(BundleError::InsufficientSamples {
                needed: count,
                got: out.len(),
            });
        }
        let jitter = |rng: &mut ChaCha8Rng, c: &[f64], r: f64| -> Vec<f64> {
            c.iter().map(|v| v + r * rng.gen_range(-1.0..1.0)).collect()
        };
        let draw = BundleState::new(
            region.center.t,
            jitter(&mut rng, &region.center.x, region.base_radius),
            jitter(&mut rng, &region.center.xi, region.fiber_radius),
            jitter(&mut rng, &region.center.pi, region.fiber_radius),
        );
        match project_along_gradient(spec, &draw, 50, |v| v.abs() <= 1e-12) {
            Ok((s, _)) if s.is_finite() => out.push(s),
            Ok(_) | Err(BundleError::ProjectionFailure { .. }) | Err(BundleError::NonConvergence { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// `μ ≈ min ‖∇_E Φ‖` over surface samples.
pub fn estimate_mu(spec: &ObservationSystemSpec, samples: &[BundleState]) -> Result<f64> {
    let phi = require_constraint(spec)?;
    if samples.is_empty() {
        return Err(BundleError::InsufficientSamples { needed: 1, got: 0 });
    }
    let mut mu = f64::INFINITY;
    for s in samples {
        let d = differential(spec, phi, s);
        mu = mu.min(raise_differential(spec, &s.x, &d)?.1.sqrt());
    }
    Ok(mu)
}

/// `λ = −(drift + αΦ) / (‖∇_E Φ‖² + ε)`, where `drift` is the rate of change
/// of Φ along the Hamiltonian flow.
pub fn regularized_multiplier(drift: f64, phi: f64, grad_norm_sq: f64, params: &RegularizationParams) -> f64 {
    -(drift + params.alpha_dissipation * phi) / (grad_norm_sq + params.eps_reg)
}

/// Pieces of the constrained vector field at one state.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstrainedVelocity {
    pub velocity: Vector,
    pub lambda: f64,
    /// `{Φ, H}`: rate of change of Φ along `X_H`.
    pub drift: f64,
    pub phi: f64,
    pub grad_norm_sq: f64,
    /// Scale-aware weak-equality tolerance for the drift at this state.
    pub weak_tolerance: f64,
}

/// Below this |Φ| a first-class hint forces λ = 0.
const FIRST_CLASS_PHI_TOL: f64 = 1e-10;

/// `X_H + λ ∇_E Φ`, with the multiplier evaluated by [`regularized_multiplier`].
pub fn constrained_rhs(
    spec: &ObservationSystemSpec,
    state: &BundleState,
    params: &RegularizationParams,
    backend: BracketBackend,
    first_class_hint: bool,
) -> Result<ConstrainedVelocity> {
    constrained_rhs_gated(spec, state, params, backend, first_class_hint, true)
}

/// As [`constrained_rhs`], with the multiplier forced to zero when
/// `multiplier_active` is false (inactive inequality constraint).
pub(crate) fn constrained_rhs_gated(
    spec: &ObservationSystemSpec,
    state: &BundleState,
    params: &RegularizationParams,
    backend: BracketBackend,
    first_class_hint: bool,
    multiplier_active: bool,
) -> Result<ConstrainedVelocity> {
    let b = bracket_matrix(spec, state, backend)?;
    let dh = differential(spec, &spec.hamiltonian, state);
    let x_h = &b * &dh;
    let Some(phi_fn) = &spec.constraint else {
        return Ok(ConstrainedVelocity {
            velocity: x_h,
            lambda: 0.0,
            drift: 0.0,
            phi: 0.0,
            grad_norm_sq: 0.0,
            weak_tolerance: 0.0,
        });
    };
    let phi = phi_fn.eval_state(state);
    let dphi = differential(spec, phi_fn, state);
    let drift = dphi.dot(&x_h);
    let (raised, norm_sq) = raise_differential(spec, &state.x, &dphi)?;
    let lambda = if !multiplier_active || (first_class_hint && phi.abs() <= FIRST_CLASS_PHI_TOL) {
        0.0
    } else {
        regularized_multiplier(drift, phi, norm_sq, params)
    };
    let velocity = if lambda == 0.0 { x_h } else { x_h + raised.to_phase() * lambda };
    Ok(ConstrainedVelocity {
        velocity,
        lambda,
        drift,
        phi,
        grad_norm_sq: norm_sq,
        weak_tolerance: WEAK_EQUALITY_REL * (1.0 + spec.hamiltonian.eval_state(state).abs() + dh.norm() * dphi.norm()),
    })
}

pub fn regularized_lambda(
    spec: &ObservationSystemSpec,
    state: &BundleState,
    params: &RegularizationParams,
    backend: BracketBackend,
) -> Result<f64> {
    Ok(constrained_rhs(spec, state, params, backend, false)?.lambda)
}

/// `α_max = min(μ² / ‖{H,Φ}‖, 1 / T_char)`.
pub fn alpha_max(mu: f64, bracket_norm: f64, t_char: f64) -> Result<f64> {
    for (name, v) in [("mu", mu), ("bracket_norm", bracket_norm), ("t_char", t_char)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(BundleError::InvalidParameter(format!("{name} must be positive, got {v}")));
        }
    }
    Ok((mu * mu / bracket_norm).min(1.0 / t_char))
}

/// `|Φ(0)| · exp(−α t / (μ² + ε))`.
pub fn decay_bound(phi0_abs: f64, params: &RegularizationParams, mu: f64, t: f64) -> f64 {
    phi0_abs * (-params.alpha_dissipation * t / (mu * mu + params.eps_reg)).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoLossWeights {
    /// Weight of the geometric term in the total loss.
    pub lambda_geo: f64,
    /// Weight of the squared metric-compatibility residual.
    pub alpha_w: f64,
    /// Weight of the squared symplectic-form deviation.
    pub beta_w: f64,
}

impl Default for GeoLossWeights {
    fn default() -> Self {
        Self {
            lambda_geo: 1.0,
            alpha_w: 1.0,
            beta_w: 1.0,
        }
    }
}

/// `Φ² + α_w · (∇ρ residual)² + β_w · ‖ω_E − ω_ref‖²_F`.
pub fn geometric_loss(
    spec: &ObservationSystemSpec,
    state: &BundleState,
    weights: &GeoLossWeights,
    omega_ref: &Matrix,
) -> Result<f64> {
    let omega = assemble_omega(spec, state)?.matrix;
    if omega.shape() != omega_ref.shape() {
        return Err(BundleError::InvalidInput(format!(
            "omega_ref is {:?}, assembled form is {:?}",
            omega_ref.shape(),
            omega.shape()
        )));
    }
    let phi = spec.constraint_value(state).unwrap_or(0.0);
    let compat = metric_compat_residual(spec, &state.x)?;
    Ok(phi * phi + weights.alpha_w * compat * compat + weights.beta_w * (omega - omega_ref).norm_squared())
}

/// `L_task + λ_geo · L_geometric`.
pub fn total_loss(task_loss: f64, geometric: f64, weights: &GeoLossWeights) -> f64 {
    task_loss + weights.lambda_geo * geometric
}
