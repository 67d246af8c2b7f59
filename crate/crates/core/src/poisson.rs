//! Bundle symplectic form, Poisson brackets, metric gradients and the
//! Hamiltonian vector field.
//!
//! Orientation: the Poisson tensor `B` satisfies `{F, G} = dFᵀ B dG`, with
//! `{q, p} = +1` and `ż = B dH`, so `q̇ = ∂H/∂p`.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{BundleError, Result};
use crate::geometry::{cutoff_chi, mixed_curvature};
use crate::system::{spd_inverse, BundleState, Matrix, ObservationSystemSpec, PhaseFunction, Vector};

const MIXING_SYMMETRY_TOL: f64 = 1e-10;

/// Structure coefficients at a base point; each is a list over base index `i`
/// of `k×k` matrices with `(a, b)` entry `C_{iab}` (etc.).
#[derive(Debug, Clone, PartialEq)]
pub struct Structure {
    pub c: Vec<Matrix>,
    pub d: Vec<Matrix>,
    pub e: Vec<Matrix>,
    pub f: Vec<Matrix>,
}

impl Structure {
    pub fn zeros(base_dim: usize, k: usize) -> Self {
        let z = vec![Matrix::zeros(k, k); base_dim];
        Self {
            c: z.clone(),
            d: z.clone(),
            e: z.clone(),
            f: z,
        }
    }

    /// `C_{iab} = C_{iba}`, `F_{iab} = F_{iba}`, `D_{iab} = E_{iba}`.
    pub fn check_symmetries(&self) -> Result<()> {
        for (i, ((c, f), (d, e))) in self.c.iter().zip(&self.f).zip(self.d.iter().zip(&self.e)).enumerate() {
            let rc = (c - c.transpose()).abs().max();
            let rf = (f - f.transpose()).abs().max();
            let rde = (d - e.transpose()).abs().max();
            if rc > MIXING_SYMMETRY_TOL || rf > MIXING_SYMMETRY_TOL || rde > MIXING_SYMMETRY_TOL {
                return Err(BundleError::MixingSymmetry(format!(
                    "base index {i}: |C−Cᵀ| = {rc:e}, |F−Fᵀ| = {rf:e}, |D−Eᵀ| = {rde:e}"
                )));
            }
        }
        Ok(())
    }
}

pub type StructureFn = Arc<dyn Fn(&[f64]) -> Structure + Send + Sync>;

/// How base and fiber directions are coupled in the bundle symplectic form.
#[derive(Clone, Default)]
pub enum MixingModel {
    #[default]
    Zero,
    /// `C` derived from the mixed curvature, `D = E = F = 0`.
    Curvature,
    /// User-supplied structure coefficients.
    Custom(StructureFn),
}

impl fmt::Debug for MixingModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MixingModel::Zero => f.write_str("Zero"),
            MixingModel::Curvature => f.write_str("Curvature"),
            MixingModel::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

impl MixingModel {
    pub fn custom(s: impl Fn(&[f64]) -> Structure + Send + Sync + 'static) -> Self {
        MixingModel::Custom(Arc::new(s))
    }
}

/// Structure coefficients at `x`, or `None` for zero mixing.
pub fn structure_at(spec: &ObservationSystemSpec, x: &[f64]) -> Result<Option<Structure>> {
    let layout = spec.layout;
    let structure = match &spec.mixing {
        MixingModel::Zero => return Ok(None),
        MixingModel::Curvature => {
            // C_{iab} = ½ Σ_j (R^a_{bij} + R^b_{aij})
            let r = mixed_curvature(spec, x)?;
            let mut s = Structure::zeros(layout.base_dim(), layout.k);
            for (i, c) in s.c.iter_mut().enumerate() {
                for j in 0..layout.base_dim() {
                    let rij = r.pair(i, j);
                    *c += (rij + rij.transpose()) * 0.5;
                }
            }
            s
        }
        MixingModel::Custom(f) => f(x),
    };
    structure.check_symmetries()?;
    Ok(Some(structure))
}

/// `K_{ia} = Σ_b C_{iab} ξ_b + D_{iab} π_b`, `L_{ia} = Σ_b E_{iab} ξ_b + F_{iab} π_b`.
pub fn mixing_kl(spec: &ObservationSystemSpec, state: &BundleState) -> Result<(Matrix, Matrix)> {
    spec.check_state(state)?;
    let layout = spec.layout;
    let mut k_mat = Matrix::zeros(layout.base_dim(), layout.k);
    let mut l_mat = Matrix::zeros(layout.base_dim(), layout.k);
    if let Some(s) = structure_at(spec, &state.x)? {
        let xi = Vector::from_column_slice(&state.xi);
        let pi = Vector::from_column_slice(&state.pi);
        for i in 0..layout.base_dim() {
            let k_row = &s.c[i] * &xi + &s.d[i] * &pi;
            let l_row = &s.e[i] * &xi + &s.f[i] * &pi;
            k_mat.row_mut(i).copy_from(&k_row.transpose());
            l_mat.row_mut(i).copy_from(&l_row.transpose());
        }
    }
    Ok((k_mat, l_mat))
}

/// `s(d) = 1 − delta_max · exp(−d / eps0)`: degeneration peaks at the boundary.
pub fn boundary_scale(d: f64, eps0: f64, delta_max: f64) -> Result<f64> {
    if !(d >= 0.0) {
        return Err(BundleError::InvalidParameter(format!("boundary distance must be ≥ 0, got {d}")));
    }
    if !(eps0 > 0.0 && eps0.is_finite()) {
        return Err(BundleError::InvalidParameter(format!("eps0 must be positive, got {eps0}")));
    }
    if !(0.0..1.0).contains(&delta_max) {
        return Err(BundleError::InvalidParameter(format!("delta_max must lie in [0, 1), got {delta_max}")));
    }
    Ok(1.0 - delta_max * (-d / eps0).exp())
}

/// Blend `χ(d)·1 + (1 − χ(d))·s(d)`: exactly 1 in the safe region, `s(0)` at the boundary.
pub fn omega_scale(spec: &ObservationSystemSpec, x: &[f64]) -> Result<f64> {
    let d = spec.boundary_distance_at(x);
    if d.is_nan() || d < 0.0 {
        return Err(BundleError::Domain(format!("boundary distance {d} at x = {x:?}")));
    }
    let layer = spec.boundary;
    if layer.delta_max == 0.0 {
        return Ok(1.0);
    }
    let chi = cutoff_chi(d.min(layer.eps_safe), layer.eps_safe)?;
    let s = boundary_scale(d, layer.eps0, layer.delta_max)?;
    Ok(chi + (1.0 - chi) * s)
}

/// Snapshot of the assembled bundle symplectic form.
#[derive(Debug, Clone, PartialEq)]
pub struct OmegaAssembly {
    /// Antisymmetric matrix in `(x, ξ, π)` order.
    pub matrix: Matrix,
    /// Boundary degeneration factor applied to every block.
    pub scale: f64,
}

pub fn assemble_omega(spec: &ObservationSystemSpec, state: &BundleState) -> Result<OmegaAssembly> {
    spec.check_state(state)?;
    let layout = spec.layout;
    let scale = omega_scale(spec, &state.x)?;
    let (k_mat, l_mat) = mixing_kl(spec, state)?;
    let w = spec.base_symplectic_at(&state.x);
    let (m, k) = (layout.base_dim(), layout.k);
    let (xo, po) = (layout.xi_offset(), layout.pi_offset());

    let mut omega = Matrix::zeros(layout.phase_dim(), layout.phase_dim());
    let mut put = |r: usize, c: usize, v: f64| {
        omega[(r, c)] = scale * v;
        omega[(c, r)] = -scale * v;
    };
    for i in 0..m {
        for j in (i + 1)..m {
            put(i, j, w[(i, j)]);
        }
        for a in 0..k {
            put(i, xo + a, k_mat[(i, a)]);
            put(i, po + a, l_mat[(i, a)]);
        }
    }
    for a in 0..k {
        put(xo + a, po + a, 1.0);
    }
    Ok(OmegaAssembly { matrix: omega, scale })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BracketBackend {
    /// Coordinate bracket table with the mixing coefficients placed verbatim.
    #[default]
    PaperTable,
    /// Negated numerical inverse of the assembled form.
    ExactInverse,
}

fn antisymmetrize(m: &Matrix) -> Matrix {
    (m - m.transpose()) * 0.5
}

/// Poisson tensor `B` with `{F, G} = dFᵀ B dG`.
pub fn bracket_matrix(spec: &ObservationSystemSpec, state: &BundleState, backend: BracketBackend) -> Result<Matrix> {
    match backend {
        BracketBackend::ExactInverse => {
            let omega = assemble_omega(spec, state)?;
            let inv = omega
                .matrix
                .clone()
                .try_inverse()
                .filter(|m| m.iter().all(|v| v.is_finite()))
                .ok_or(BundleError::DegenerateStructure { scale: omega.scale })?;
            Ok(antisymmetrize(&(-inv)))
        }
        BracketBackend::PaperTable => {
            spec.check_state(state)?;
            let layout = spec.layout;
            let scale = omega_scale(spec, &state.x)?;
            if scale <= 0.0 {
                return Err(BundleError::DegenerateStructure { scale });
            }
            let (k_mat, l_mat) = mixing_kl(spec, state)?;
            let w = spec.base_symplectic_at(&state.x);
            // ω_M^{ij} := (ω_M⁻¹)ᵀ, so that {q, p} = +1 for the Darboux default
            let w_up = w
                .try_inverse()
                .ok_or_else(|| BundleError::SingularMetric { x: state.x.clone() })?
                .transpose();
            let (m, k) = (layout.base_dim(), layout.k);
            let (xo, po) = (layout.xi_offset(), layout.pi_offset());
            let inv_scale = 1.0 / scale;
            let mut b = Matrix::zeros(layout.phase_dim(), layout.phase_dim());
            let mut put = |r: usize, c: usize, v: f64| {
                b[(r, c)] = inv_scale * v;
                b[(c, r)] = -inv_scale * v;
            };
            for i in 0..m {
                for j in (i + 1)..m {
                    put(i, j, 0.5 * (w_up[(i, j)] - w_up[(j, i)]));
                }
                for a in 0..k {
                    put(i, xo + a, k_mat[(i, a)]);
                    put(i, po + a, l_mat[(i, a)]);
                }
            }
            for a in 0..k {
                put(xo + a, po + a, 1.0);
            }
            Ok(b)
        }
    }
}

/// `dF` at the state, analytic when available.
pub fn differential(spec: &ObservationSystemSpec, f: &PhaseFunction, state: &BundleState) -> Vector {
    f.differential(spec.layout, state.phase().as_slice(), spec.phase_gradient_step)
}

pub fn poisson_bracket(
    spec: &ObservationSystemSpec,
    f: &PhaseFunction,
    g: &PhaseFunction,
    state: &BundleState,
    backend: BracketBackend,
) -> Result<f64> {
    let b = bracket_matrix(spec, state, backend)?;
    let df = differential(spec, f, state);
    let dg = differential(spec, g, state);
    Ok(df.dot(&(&b * dg)))
}

/// `|{F,{G,K}} + {G,{K,F}} + {K,{F,G}}|`. Inner brackets are evaluated
/// pointwise and differenced; accuracy is that of the outer stencil.
pub fn jacobi_residual(
    spec: &ObservationSystemSpec,
    f: &PhaseFunction,
    g: &PhaseFunction,
    k: &PhaseFunction,
    state: &BundleState,
    backend: BracketBackend,
) -> Result<f64> {
    let layout = spec.layout;
    let step = spec.phase_gradient_step;
    let z = state.phase();
    let inner = |a: &PhaseFunction, b: &PhaseFunction| -> Result<Vector> {
        let failure = std::cell::RefCell::new(None);
        let grad = crate::numdiff::gradient(
            |w| {
                let s = BundleState::from_phase(state.t, layout, w);
                match poisson_bracket(spec, a, b, &s, backend) {
                    Ok(v) => v,
                    Err(e) => {
                        failure.borrow_mut().get_or_insert(e);
                        f64::NAN
                    }
                }
            },
            z.as_slice(),
            step,
        );
        failure.into_inner().map_or(Ok(grad), Err)
    };
    let bm = bracket_matrix(spec, state, backend)?;
    let outer = |a: &PhaseFunction, d_inner: &Vector| differential(spec, a, state).dot(&(&bm * d_inner));
    let total = outer(f, &inner(g, k)?) + outer(g, &inner(k, f)?) + outer(k, &inner(f, g)?);
    Ok(total.abs())
}

/// Metric-raised gradient `∇_E F = (g_M⁻¹ ∂_x F, ρ⁻¹ ∂_ξ F, ∂_π F)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BundleGradient {
    pub x: Vector,
    pub xi: Vector,
    pub pi: Vector,
}

impl BundleGradient {
    pub fn to_phase(&self) -> Vector {
        Vector::from_iterator(
            self.x.len() + self.xi.len() + self.pi.len(),
            self.x.iter().chain(self.xi.iter()).chain(self.pi.iter()).copied(),
        )
    }
}

/// Raises a differential with the block metric `G = diag(g_M, ρ, I)`; returns
/// the raised vector and `dFᵀ G⁻¹ dF`.
pub fn raise_differential(spec: &ObservationSystemSpec, x: &[f64], df: &Vector) -> Result<(BundleGradient, f64)> {
    let layout = spec.layout;
    let (m, k) = (layout.base_dim(), layout.k);
    let g_inv = spd_inverse(&spec.base_metric_at(x), x)?;
    let rho_inv = spd_inverse(&spec.fiber_metric_at(x), x)?;
    let dx = df.rows(0, m).into_owned();
    let dxi = df.rows(m, k).into_owned();
    let dpi = df.rows(m + k, k).into_owned();
    let gx = &g_inv * &dx;
    let gxi = &rho_inv * &dxi;
    let norm_sq = dx.dot(&gx) + dxi.dot(&gxi) + dpi.norm_squared();
    Ok((BundleGradient { x: gx, xi: gxi, pi: dpi }, norm_sq))
}

pub fn grad_e(spec: &ObservationSystemSpec, f: &PhaseFunction, state: &BundleState) -> Result<BundleGradient> {
    spec.check_state(state)?;
    let df = differential(spec, f, state);
    Ok(raise_differential(spec, &state.x, &df)?.0)
}

/// `‖∇_E F‖² = ∂_xFᵀ g_M⁻¹ ∂_xF + ∂_ξFᵀ ρ⁻¹ ∂_ξF + ‖∂_πF‖²`.
pub fn grad_norm_sq(spec: &ObservationSystemSpec, f: &PhaseFunction, state: &BundleState) -> Result<f64> {
    spec.check_state(state)?;
    let df = differential(spec, f, state);
    Ok(raise_differential(spec, &state.x, &df)?.1)
}

/// `X_H = B dH`.
pub fn hamiltonian_vector_field(
    spec: &ObservationSystemSpec,
    state: &BundleState,
    backend: BracketBackend,
) -> Result<Vector> {
    let b = bracket_matrix(spec, state, backend)?;
    Ok(b * differential(spec, &spec.hamiltonian, state))
}
