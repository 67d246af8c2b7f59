//! Problem description for an observation-constrained Hamiltonian system and
//! the points of its total space.
//!
//! Base coordinates `x` live in ℝ^{2n}; fiber coordinates are the observation
//! deviation `ξ ∈ ℝ^k` (centered at 0, so the raw observation is `h(x) + ξ`)
//! and its dual momentum `π ∈ ℝ^k`. Phase-space vectors are laid out as
//! `(x¹..x^{2n}, ξ₁..ξ_k, π₁..π_k)`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, BundleError, Result};
use crate::numdiff;
use crate::poisson::MixingModel;

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

pub type BaseScalarFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
pub type BaseVectorFn = Arc<dyn Fn(&[f64]) -> Vector + Send + Sync>;
pub type BaseMatrixFn = Arc<dyn Fn(&[f64]) -> Matrix + Send + Sync>;
/// One matrix per base coordinate.
pub type BaseMatrixPartialsFn = Arc<dyn Fn(&[f64]) -> Vec<Matrix> + Send + Sync>;
pub type PhaseScalarFn = Arc<dyn Fn(&Coords<'_>) -> f64 + Send + Sync>;
pub type PhaseGradientFn = Arc<dyn Fn(&Coords<'_>) -> Vector + Send + Sync>;

const SYMMETRY_TOL: f64 = 1e-12;
const RANK_TOL: f64 = 1e-8;

/// Borrowed view of a point of the total space.
#[derive(Debug, Clone, Copy)]
pub struct Coords<'a> {
    pub x: &'a [f64],
    pub xi: &'a [f64],
    pub pi: &'a [f64],
}

/// Dimensions of the total space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    /// Base half-dimension.
    pub n: usize,
    /// Observation (fiber) dimension.
    pub k: usize,
}

impl Layout {
    pub fn base_dim(&self) -> usize {
        2 * self.n
    }

    pub fn phase_dim(&self) -> usize {
        2 * (self.n + self.k)
    }

    pub fn xi_offset(&self) -> usize {
        2 * self.n
    }

    pub fn pi_offset(&self) -> usize {
        2 * self.n + self.k
    }

    pub fn split<'a>(&self, z: &'a [f64]) -> Coords<'a> {
        let (x, rest) = z.split_at(self.base_dim());
        let (xi, pi) = rest.split_at(self.k);
        Coords { x, xi, pi }
    }
}

/// A point `(t, x, ξ, π)` of the total space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleState {
    pub t: f64,
    pub x: Vec<f64>,
    pub xi: Vec<f64>,
    pub pi: Vec<f64>,
}

impl BundleState {
    pub fn new(t: f64, x: Vec<f64>, xi: Vec<f64>, pi: Vec<f64>) -> Self {
        Self { t, x, xi, pi }
    }

    pub fn coords(&self) -> Coords<'_> {
        Coords {
            x: &self.x,
            xi: &self.xi,
            pi: &self.pi,
        }
    }

    /// Flat phase vector `(x, ξ, π)`.
    pub fn phase(&self) -> Vector {
        Vector::from_iterator(
            self.x.len() + self.xi.len() + self.pi.len(),
            self.x.iter().chain(&self.xi).chain(&self.pi).copied(),
        )
    }

    pub fn from_phase(t: f64, layout: Layout, z: &[f64]) -> Self {
        let c = layout.split(z);
        Self {
            t,
            x: c.x.to_vec(),
            xi: c.xi.to_vec(),
            pi: c.pi.to_vec(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.t.is_finite() && self.x.iter().chain(&self.xi).chain(&self.pi).all(|v| v.is_finite())
    }

    pub(crate) fn check_layout(&self, layout: Layout) -> Result<()> {
        if self.x.len() != layout.base_dim() || self.xi.len() != layout.k || self.pi.len() != layout.k {
            return Err(BundleError::InvalidInput(format!(
                "state dimensions ({}, {}, {}) do not match layout n = {}, k = {}",
                self.x.len(),
                self.xi.len(),
                self.pi.len(),
                layout.n,
                layout.k
            )));
        }
        ensure_finite("state", &self.x)?;
        ensure_finite("state", &self.xi)?;
        ensure_finite("state", &self.pi)
    }
}

/// A scalar function on the total space with an optional analytic gradient.
#[derive(Clone)]
pub struct PhaseFunction {
    value: PhaseScalarFn,
    gradient: Option<PhaseGradientFn>,
}

impl fmt::Debug for PhaseFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PhaseFunction")
            .field("analytic_gradient", &self.gradient.is_some())
            .finish()
    }
}

impl PhaseFunction {
    pub fn new(value: impl Fn(&Coords<'_>) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            value: Arc::new(value),
            gradient: None,
        }
    }

    /// Attach an analytic gradient, laid out as a phase vector.
    pub fn with_gradient(mut self, gradient: impl Fn(&Coords<'_>) -> Vector + Send + Sync + 'static) -> Self {
        self.gradient = Some(Arc::new(gradient));
        self
    }

    pub fn has_gradient(&self) -> bool {
        self.gradient.is_some()
    }

    pub fn eval(&self, c: &Coords<'_>) -> f64 {
        (self.value)(c)
    }

    pub fn eval_state(&self, s: &BundleState) -> f64 {
        self.eval(&s.coords())
    }

    /// `dF` as a phase vector; falls back to fourth-order differences.
    pub fn differential(&self, layout: Layout, z: &[f64], step: f64) -> Vector {
        match &self.gradient {
            Some(g) => g(&layout.split(z)),
            None => numdiff::gradient(|w| (self.value)(&layout.split(w)), z, step),
        }
    }

    /// Pointwise sum, keeping analytic gradients when both sides have them.
    pub fn sum(&self, other: &PhaseFunction) -> PhaseFunction {
        let (fa, fb) = (self.value.clone(), other.value.clone());
        let value: PhaseScalarFn = Arc::new(move |c: &Coords<'_>| fa(c) + fb(c));
        let gradient = match (&self.gradient, &other.gradient) {
            (Some(ga), Some(gb)) => {
                let (ga, gb) = (ga.clone(), gb.clone());
                Some(Arc::new(move |c: &Coords<'_>| ga(c) + gb(c)) as PhaseGradientFn)
            }
            _ => None,
        };
        PhaseFunction { value, gradient }
    }
}

/// Boundary-layer parameters of the bundle symplectic form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryLayer {
    /// Distance beyond which the form is exactly the standard one.
    pub eps_safe: f64,
    /// Decay length of the degeneration parameter.
    pub eps0: f64,
    /// Degeneration at the boundary, in `[0, 1)`; zero disables it.
    pub delta_max: f64,
}

impl Default for BoundaryLayer {
    fn default() -> Self {
        Self {
            eps_safe: 0.1,
            eps0: 0.05,
            delta_max: 0.0,
        }
    }
}

/// Full problem description.
#[derive(Clone)]
pub struct ObservationSystemSpec {
    pub name: String,
    pub layout: Layout,
    base_metric: Option<BaseMatrixFn>,
    base_symplectic: Option<BaseMatrixFn>,
    base_christoffel: Option<BaseMatrixPartialsFn>,
    observation: BaseVectorFn,
    observation_jacobian: Option<BaseMatrixFn>,
    fiber_metric: Option<BaseMatrixFn>,
    fiber_metric_partials: Option<BaseMatrixPartialsFn>,
    uncertainty: BaseScalarFn,
    boundary_distance: Option<BaseScalarFn>,
    pub hamiltonian: PhaseFunction,
    pub constraint: Option<PhaseFunction>,
    pub mixing: MixingModel,
    pub boundary: BoundaryLayer,
    /// When set, mixed connection coefficients are multiplied by `χ(d)` with this width.
    pub connection_truncation: Option<f64>,
    /// Finite-difference scale for ρ, δ, h and structure functions.
    pub gradient_step: f64,
    /// Finite-difference scale for gradients of phase-space functions.
    pub phase_gradient_step: f64,
}

impl fmt::Debug for ObservationSystemSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ObservationSystemSpec")
            .field("name", &self.name)
            .field("layout", &self.layout)
            .field("mixing", &self.mixing)
            .field("boundary", &self.boundary)
            .finish_non_exhaustive()
    }
}

impl ObservationSystemSpec {
    /// Minimal spec: flat Darboux base, identity fiber metric, no constraint,
    /// no boundary, zero mixing.
    pub fn new(
        name: impl Into<String>,
        n: usize,
        k: usize,
        observation: impl Fn(&[f64]) -> Vector + Send + Sync + 'static,
        uncertainty: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        hamiltonian: PhaseFunction,
    ) -> Self {
        Self {
            name: name.into(),
            layout: Layout { n, k },
            base_metric: None,
            base_symplectic: None,
            base_christoffel: None,
            observation: Arc::new(observation),
            observation_jacobian: None,
            fiber_metric: None,
            fiber_metric_partials: None,
            uncertainty: Arc::new(uncertainty),
            boundary_distance: None,
            hamiltonian,
            constraint: None,
            mixing: MixingModel::Zero,
            boundary: BoundaryLayer::default(),
            connection_truncation: None,
            gradient_step: 1e-5,
            phase_gradient_step: 1e-6,
        }
    }

    pub fn with_base_metric(mut self, g: impl Fn(&[f64]) -> Matrix + Send + Sync + 'static) -> Self {
        self.base_metric = Some(Arc::new(g));
        self
    }

    pub fn with_base_symplectic(mut self, w: impl Fn(&[f64]) -> Matrix + Send + Sync + 'static) -> Self {
        self.base_symplectic = Some(Arc::new(w));
        self
    }

    /// Base Christoffel symbols: entry `k` of the result is the matrix `Γ^k_{ij}`.
    pub fn with_base_christoffel(mut self, c: impl Fn(&[f64]) -> Vec<Matrix> + Send + Sync + 'static) -> Self {
        self.base_christoffel = Some(Arc::new(c));
        self
    }

    pub fn with_observation_jacobian(mut self, j: impl Fn(&[f64]) -> Matrix + Send + Sync + 'static) -> Self {
        self.observation_jacobian = Some(Arc::new(j));
        self
    }

    pub fn with_fiber_metric(mut self, rho: impl Fn(&[f64]) -> Matrix + Send + Sync + 'static) -> Self {
        self.fiber_metric = Some(Arc::new(rho));
        self.fiber_metric_partials = None;
        self
    }

    /// Analytic `∂_i ρ`, one `k×k` matrix per base coordinate.
    pub fn with_fiber_metric_partials(
        mut self,
        d_rho: impl Fn(&[f64]) -> Vec<Matrix> + Send + Sync + 'static,
    ) -> Self {
        self.fiber_metric_partials = Some(Arc::new(d_rho));
        self
    }

    pub fn with_boundary_distance(mut self, d: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        self.boundary_distance = Some(Arc::new(d));
        self
    }

    pub fn with_boundary_layer(mut self, layer: BoundaryLayer) -> Self {
        self.boundary = layer;
        self
    }

    pub fn with_constraint(mut self, phi: PhaseFunction) -> Self {
        self.constraint = Some(phi);
        self
    }

    pub fn with_mixing(mut self, mixing: MixingModel) -> Self {
        self.mixing = mixing;
        self
    }

    pub fn with_uncertainty(mut self, delta: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        self.uncertainty = Arc::new(delta);
        self
    }

    pub fn has_analytic_fiber_partials(&self) -> bool {
        self.fiber_metric.is_none() || self.fiber_metric_partials.is_some()
    }

    pub fn base_metric_at(&self, x: &[f64]) -> Matrix {
        match &self.base_metric {
            Some(g) => g(x),
            None => Matrix::identity(self.layout.base_dim(), self.layout.base_dim()),
        }
    }

    /// `ω_M(x)`; the default is `[[0, I], [-I, 0]]` in `(q, p)` order.
    pub fn base_symplectic_at(&self, x: &[f64]) -> Matrix {
        match &self.base_symplectic {
            Some(w) => w(x),
            None => darboux(self.layout.n),
        }
    }

    /// Base Christoffel symbols, zero for the flat adapted-coordinate default.
    pub fn base_christoffel_at(&self, x: &[f64]) -> Vec<Matrix> {
        let m = self.layout.base_dim();
        match &self.base_christoffel {
            Some(c) => c(x),
            None => vec![Matrix::zeros(m, m); m],
        }
    }

    pub fn observation_at(&self, x: &[f64]) -> Vector {
        (self.observation)(x)
    }

    pub fn observation_jacobian_at(&self, x: &[f64]) -> Matrix {
        match &self.observation_jacobian {
            Some(j) => j(x),
            None => numdiff::jacobian(|w| (self.observation)(w), x, self.gradient_step),
        }
    }

    pub fn fiber_metric_at(&self, x: &[f64]) -> Matrix {
        match &self.fiber_metric {
            Some(rho) => rho(x),
            None => Matrix::identity(self.layout.k, self.layout.k),
        }
    }

    /// `∂_i ρ(x)` for every base coordinate `i`.
    pub fn fiber_metric_partials_at(&self, x: &[f64]) -> Vec<Matrix> {
        let k = self.layout.k;
        match (&self.fiber_metric, &self.fiber_metric_partials) {
            (None, _) => vec![Matrix::zeros(k, k); x.len()],
            (Some(_), Some(d)) => d(x),
            (Some(rho), None) => numdiff::matrix_partials(|w| rho(w), x, self.gradient_step),
        }
    }

    pub fn uncertainty_at(&self, x: &[f64]) -> f64 {
        (self.uncertainty)(x)
    }

    /// `d(x, ∂W)`; `+∞` when no boundary is registered.
    pub fn boundary_distance_at(&self, x: &[f64]) -> f64 {
        match &self.boundary_distance {
            Some(d) => d(x),
            None => f64::INFINITY,
        }
    }

    pub fn constraint_value(&self, s: &BundleState) -> Option<f64> {
        self.constraint.as_ref().map(|phi| phi.eval_state(s))
    }

    pub fn energy(&self, s: &BundleState) -> f64 {
        self.hamiltonian.eval_state(s)
    }

    pub fn check_state(&self, s: &BundleState) -> Result<()> {
        s.check_layout(self.layout)
    }

    /// Checks the structural invariants at one base point.
    pub fn validate_at(&self, x: &[f64]) -> Result<()> {
        let layout = self.layout;
        if x.len() != layout.base_dim() {
            return Err(BundleError::InvalidInput(format!(
                "base point has dimension {}, expected {}",
                x.len(),
                layout.base_dim()
            )));
        }
        ensure_finite("base point", x)?;

        let rho = self.fiber_metric_at(x);
        check_spd("fiber metric", &rho, x)?;
        let g = self.base_metric_at(x);
        check_spd("base metric", &g, x)?;

        let w = self.base_symplectic_at(x);
        let asym = (&w + w.transpose()).abs().max();
        if asym > SYMMETRY_TOL * (1.0 + w.abs().max()) {
            return Err(BundleError::InvalidInput(format!(
                "base symplectic form not antisymmetric (residual {asym:e})"
            )));
        }
        let sv = w.clone().svd(false, false).singular_values;
        if sv.min() <= 0.0 || !sv.min().is_finite() {
            return Err(BundleError::SingularMetric { x: x.to_vec() });
        }

        let dh = self.observation_jacobian_at(x);
        if dh.nrows() != layout.k || dh.ncols() != layout.base_dim() {
            return Err(BundleError::InvalidInput(format!(
                "observation Jacobian is {}x{}, expected {}x{}",
                dh.nrows(),
                dh.ncols(),
                layout.k,
                layout.base_dim()
            )));
        }
        let sv = dh.clone().svd(false, false).singular_values;
        let tol = RANK_TOL * dh.norm();
        let rank = sv.iter().filter(|&&s| s > tol).count();
        if rank < layout.k {
            return Err(BundleError::InvalidInput(format!(
                "observation map has rank {rank} < k = {} at x = {x:?}",
                layout.k
            )));
        }

        let delta = self.uncertainty_at(x);
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(BundleError::InvalidInput(format!(
                "uncertainty δ(x) = {delta} is not in (0, ∞)"
            )));
        }
        Ok(())
    }
}

/// Standard Darboux matrix `[[0, I], [-I, 0]]` of size `2n`.
pub fn darboux(n: usize) -> Matrix {
    let mut w = Matrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        w[(i, n + i)] = 1.0;
        w[(n + i, i)] = -1.0;
    }
    w
}

fn check_spd(label: &str, m: &Matrix, x: &[f64]) -> Result<()> {
    let asym = (m - m.transpose()).abs().max();
    if asym > SYMMETRY_TOL * (1.0 + m.abs().max()) {
        return Err(BundleError::InvalidInput(format!(
            "{label} not symmetric (residual {asym:e})"
        )));
    }
    if m.clone().cholesky().is_none() {
        return Err(BundleError::SingularMetric { x: x.to_vec() });
    }
    Ok(())
}

/// Inverse of a symmetric positive-definite matrix.
pub(crate) fn spd_inverse(m: &Matrix, x: &[f64]) -> Result<Matrix> {
    m.clone()
        .cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| BundleError::SingularMetric { x: x.to_vec() })
}
