//! Built-in test systems with their default initial states.

use serde::{Deserialize, Serialize};

use crate::constraints::SamplingBox;
use crate::error::{BundleError, Result};
use crate::lax::{toda_system_spec, TodaParams};
use crate::system::{BundleState, Matrix, ObservationSystemSpec, PhaseFunction, Vector};

/// A registered system together with a feasible starting point.
#[derive(Debug, Clone)]
pub struct BuiltinSystem {
    pub spec: ObservationSystemSpec,
    pub initial: BundleState,
    /// Region used to draw constraint-surface samples.
    pub sampling: SamplingBox,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OscillatorConstraint {
    #[default]
    None,
    /// `Φ = q`, second class.
    Position,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UncertaintyProfile {
    #[default]
    Constant,
    /// `δ₀ / (1 + ‖x‖²)`.
    InverseQuadratic,
}

/// `H = ½(p² + ω²q²) + ½(π² + κ_f ξ²)` with observation `h(q, p) = q`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OscillatorParams {
    /// Angular frequency; zero gives the free particle.
    pub omega: f64,
    pub fiber_stiffness: f64,
    pub delta0: f64,
    pub uncertainty: UncertaintyProfile,
    pub constraint: OscillatorConstraint,
    pub q0: f64,
    pub p0: f64,
    pub xi0: f64,
    pub pi0: f64,
}

impl Default for OscillatorParams {
    fn default() -> Self {
        Self {
            omega: 1.0,
            fiber_stiffness: 1.0,
            delta0: 1.0,
            uncertainty: UncertaintyProfile::Constant,
            constraint: OscillatorConstraint::None,
            q0: 1.0,
            p0: 0.0,
            xi0: 0.0,
            pi0: 0.0,
        }
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(BundleError::InvalidParameter(format!("{name} must be positive, got {v}")))
    }
}

fn nonnegative(name: &str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(BundleError::InvalidParameter(format!("{name} must be ≥ 0, got {v}")))
    }
}

fn uncertainty_fn(profile: UncertaintyProfile, delta0: f64) -> impl Fn(&[f64]) -> f64 + Send + Sync + 'static {
    move |x: &[f64]| match profile {
        UncertaintyProfile::Constant => delta0,
        UncertaintyProfile::InverseQuadratic => delta0 / (1.0 + x.iter().map(|v| v * v).sum::<f64>()),
    }
}

pub fn oscillator_system(params: &OscillatorParams) -> Result<BuiltinSystem> {
    nonnegative("omega", params.omega)?;
    nonnegative("fiber_stiffness", params.fiber_stiffness)?;
    positive("delta0", params.delta0)?;
    let initial = BundleState::new(0.0, vec![params.q0, params.p0], vec![params.xi0], vec![params.pi0]);
    if !initial.is_finite() {
        return Err(BundleError::InvalidParameter("initial state must be finite".into()));
    }
    let (w2, kf) = (params.omega * params.omega, params.fiber_stiffness);
    let h = PhaseFunction::new(move |c| {
        0.5 * (c.x[1] * c.x[1] + w2 * c.x[0] * c.x[0]) + 0.5 * (c.pi[0] * c.pi[0] + kf * c.xi[0] * c.xi[0])
    })
    .with_gradient(move |c| Vector::from_vec(vec![w2 * c.x[0], c.x[1], kf * c.xi[0], c.pi[0]]));
    let mut spec = ObservationSystemSpec::new(
        "oscillator",
        1,
        1,
        |x| Vector::from_element(1, x[0]),
        uncertainty_fn(params.uncertainty, params.delta0),
        h,
    )
    .with_observation_jacobian(|_| Matrix::from_row_slice(1, 2, &[1.0, 0.0]));
    if params.constraint == OscillatorConstraint::Position {
        spec = spec.with_constraint(
            PhaseFunction::new(|c| c.x[0]).with_gradient(|_| Vector::from_vec(vec![1.0, 0.0, 0.0, 0.0])),
        );
    }
    let sampling = SamplingBox {
        center: BundleState::new(0.0, vec![0.0, 0.0], vec![0.0], vec![0.0]),
        base_radius: 2.0,
        fiber_radius: 0.5 * params.delta0,
    };
    Ok(BuiltinSystem { spec, initial, sampling })
}

/// `H = ½(q² + p² + ξ² + π²)` with the first-class constraint `Φ = H − c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CircleParams {
    /// Level `c > 0`; the initial state is `(√(2c), 0)` with zero fiber.
    pub level: f64,
    pub delta0: f64,
}

impl Default for CircleParams {
    fn default() -> Self {
        Self { level: 1.0, delta0: 1.0 }
    }
}

pub fn circle_system(params: &CircleParams) -> Result<BuiltinSystem> {
    positive("level", params.level)?;
    positive("delta0", params.delta0)?;
    let energy = |c: &crate::system::Coords<'_>| {
        0.5 * (c.x[0] * c.x[0] + c.x[1] * c.x[1] + c.xi[0] * c.xi[0] + c.pi[0] * c.pi[0])
    };
    let grad = |c: &crate::system::Coords<'_>| Vector::from_vec(vec![c.x[0], c.x[1], c.xi[0], c.pi[0]]);
    let level = params.level;
    let spec = ObservationSystemSpec::new(
        "circle_constraint",
        1,
        1,
        |x| Vector::from_element(1, x[0]),
        uncertainty_fn(UncertaintyProfile::Constant, params.delta0),
        PhaseFunction::new(energy).with_gradient(grad),
    )
    .with_observation_jacobian(|_| Matrix::from_row_slice(1, 2, &[1.0, 0.0]))
    .with_constraint(PhaseFunction::new(move |c| energy(c) - level).with_gradient(grad));
    let initial = BundleState::new(0.0, vec![(2.0 * level).sqrt(), 0.0], vec![0.0], vec![0.0]);
    let sampling = SamplingBox {
        center: BundleState::new(0.0, vec![0.0, 0.0], vec![0.0], vec![0.0]),
        base_radius: 2.0 * (2.0 * level).sqrt(),
        fiber_radius: 0.0,
    };
    Ok(BuiltinSystem { spec, initial, sampling })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TodaSystemParams {
    pub lattice: TodaParams,
    /// Drop the ellipsoidal observation constraint.
    pub unconstrained: bool,
    /// Initial positions; zero when absent.
    pub q0: Option<Vec<f64>>,
    /// Initial momenta; a symmetric ramp when absent.
    pub p0: Option<Vec<f64>>,
    pub xi0: Option<Vec<f64>>,
    pub pi0: Option<Vec<f64>>,
}

impl Default for TodaSystemParams {
    fn default() -> Self {
        Self {
            lattice: TodaParams::default(),
            unconstrained: false,
            q0: None,
            p0: None,
            xi0: None,
            pi0: None,
        }
    }
}

/// Momenta `p_i = (n+1)/2 − i`, scaled to unit spread.
pub fn default_toda_momenta(n: usize) -> Vec<f64> {
    let c = (n as f64 + 1.0) / 2.0;
    (1..=n).map(|i| (c - i as f64) / c.max(1.0)).collect()
}

pub fn toda_system(params: &TodaSystemParams) -> Result<BuiltinSystem> {
    let n = params.lattice.n;
    let mut spec = toda_system_spec(&params.lattice)?;
    if params.unconstrained {
        spec.constraint = None;
    }
    let take = |v: &Option<Vec<f64>>, len: usize, default: Vec<f64>, name: &str| -> Result<Vec<f64>> {
        match v {
            Some(v) if v.len() != len => Err(BundleError::InvalidParameter(format!(
                "{name} has length {}, expected {len}",
                v.len()
            ))),
            Some(v) => Ok(v.clone()),
            None => Ok(default),
        }
    };
    let q = take(&params.q0, n, vec![0.0; n], "q0")?;
    let p = take(&params.p0, n, default_toda_momenta(n), "p0")?;
    let xi = take(&params.xi0, n - 1, vec![0.0; n - 1], "xi0")?;
    let pi = take(&params.pi0, n - 1, vec![0.0; n - 1], "pi0")?;
    let initial = BundleState::new(0.0, q.into_iter().chain(p).collect(), xi, pi);
    if !initial.is_finite() {
        return Err(BundleError::InvalidParameter("initial state must be finite".into()));
    }
    let sampling = SamplingBox {
        center: BundleState::new(0.0, vec![0.0; 2 * n], vec![0.0; n - 1], vec![0.0; n - 1]),
        base_radius: 1.0,
        fiber_radius: 2.0 * params.lattice.delta0,
    };
    Ok(BuiltinSystem { spec, initial, sampling })
}
