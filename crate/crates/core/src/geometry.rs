//! Fiber-bundle geometric kernel: fiber norms and clamping, the
//! observation-adaptive connection and its mixed curvature, cutoff profiles,
//! and a sample-based properness check.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, BundleError, Result};
use crate::system::{spd_inverse, BundleState, Matrix, ObservationSystemSpec, Vector};

fn check_fiber_args(spec: &ObservationSystemSpec, x: &[f64], xi: &[f64]) -> Result<()> {
    let layout = spec.layout;
    if x.len() != layout.base_dim() || xi.len() != layout.k {
        return Err(BundleError::InvalidInput(format!(
            "expected x ∈ ℝ^{} and ξ ∈ ℝ^{}, got {} and {}",
            layout.base_dim(),
            layout.k,
            x.len(),
            xi.len()
        )));
    }
    ensure_finite("x", x)?;
    ensure_finite("ξ", xi)
}

/// `‖ξ‖_{ρ(x)} = √(ξᵀ ρ(x) ξ)`.
pub fn fiber_norm(spec: &ObservationSystemSpec, x: &[f64], xi: &[f64]) -> Result<f64> {
    check_fiber_args(spec, x, xi)?;
    Ok(rho_norm(&spec.fiber_metric_at(x), xi))
}

fn rho_norm(rho: &Matrix, xi: &[f64]) -> f64 {
    let v = Vector::from_column_slice(xi);
    v.dot(&(rho * &v)).max(0.0).sqrt()
}

/// Radially rescales `ξ` onto the fiber ball `‖ξ‖_ρ ≤ δ(x)` when it lies outside.
///
/// The result always satisfies the bound exactly in floating point, so a second
/// application returns its input unchanged.
pub fn radial_clamp(spec: &ObservationSystemSpec, x: &[f64], xi: &[f64]) -> Result<Vec<f64>> {
    check_fiber_args(spec, x, xi)?;
    let rho = spec.fiber_metric_at(x);
    let delta = spec.uncertainty_at(x);
    Ok(clamp_with(&rho, delta, xi).0)
}

/// Returns the clamped vector and whether it was modified.
pub(crate) fn clamp_with(rho: &Matrix, delta: f64, xi: &[f64]) -> (Vec<f64>, bool) {
    let norm = rho_norm(rho, xi);
    if norm <= delta {
        return (xi.to_vec(), false);
    }
    let scale = delta / norm;
    let mut out: Vec<f64> = xi.iter().map(|v| v * scale).collect();
    // rounding can leave the rescaled norm above δ; the shrink step doubles so
    // the loop ends after O(log) passes even when the quadratic form cancels
    let mut shrink = f64::EPSILON;
    while rho_norm(rho, &out) > delta {
        out.iter_mut().for_each(|v| *v *= 1.0 - shrink);
        shrink = (2.0 * shrink).min(0.5);
    }
    (out, true)
}

/// Mixed connection coefficients `Γ^a_{bi}`; entry `i` is the `k×k` matrix with
/// `(a, b)` component `Γ^a_{bi}`. Fiber-fiber coefficients vanish identically
/// because ρ does not depend on ξ, so they are not stored.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedConnection {
    pub gamma: Vec<Matrix>,
}

impl MixedConnection {
    pub fn get(&self, a: usize, b: usize, i: usize) -> f64 {
        self.gamma[i][(a, b)]
    }

    pub fn max_abs(&self) -> f64 {
        self.gamma.iter().map(|g| g.abs().max()).fold(0.0, f64::max)
    }
}

/// `Γ^a_{bi} = ½ Σ_c ρ^{ac} ∂_i ρ_{bc}`.
pub fn mixed_connection(spec: &ObservationSystemSpec, x: &[f64]) -> Result<MixedConnection> {
    let rho = spec.fiber_metric_at(x);
    let rho_inv = spd_inverse(&rho, x)?;
    let weight = match spec.connection_truncation {
        Some(eps) => cutoff_chi(spec.boundary_distance_at(x).min(eps), eps)?,
        None => 1.0,
    };
    let gamma = spec
        .fiber_metric_partials_at(x)
        .iter()
        .map(|d| (&rho_inv * d) * (0.5 * weight))
        .collect();
    Ok(MixedConnection { gamma })
}

/// `max_{a,b,i} |∂_i ρ_{ab} − Γ^c_{ai} ρ_{cb} − Γ^c_{bi} ρ_{ac}|`.
pub fn metric_compat_residual(spec: &ObservationSystemSpec, x: &[f64]) -> Result<f64> {
    let rho = spec.fiber_metric_at(x);
    let conn = mixed_connection(spec, x)?;
    let partials = spec.fiber_metric_partials_at(x);
    Ok(partials
        .iter()
        .zip(&conn.gamma)
        .map(|(d, g)| (d - g.transpose() * &rho - &rho * g).abs().max())
        .fold(0.0, f64::max))
}

/// Mixed curvature `R^a_{bij}`, stored as one `k×k` matrix per ordered base pair.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedCurvature {
    dim: usize,
    comps: Vec<Matrix>,
}

impl MixedCurvature {
    pub fn base_dim(&self) -> usize {
        self.dim
    }

    /// The `(a, b)` matrix for base pair `(i, j)`.
    pub fn pair(&self, i: usize, j: usize) -> &Matrix {
        &self.comps[i * self.dim + j]
    }

    pub fn get(&self, a: usize, b: usize, i: usize, j: usize) -> f64 {
        self.pair(i, j)[(a, b)]
    }

    pub fn max_abs(&self) -> f64 {
        self.comps.iter().map(|m| m.abs().max()).fold(0.0, f64::max)
    }

    /// `max |R_{ij} + R_{ji}| / max(1, max |R|)`.
    pub fn antisymmetry_residual(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.dim {
            for j in 0..self.dim {
                worst = worst.max((self.pair(i, j) + self.pair(j, i)).abs().max());
            }
        }
        worst / self.max_abs().max(1.0)
    }
}

/// `R^a_{bij} = ½[(∂_i ρ^{ac})(∂_j ρ_{bc}) − (∂_j ρ^{ac})(∂_i ρ_{bc})]`, the closed
/// form of `∂_i Γ^a_{jb} − ∂_j Γ^a_{ib}` once the symmetric second-derivative
/// terms cancel.
pub fn mixed_curvature(spec: &ObservationSystemSpec, x: &[f64]) -> Result<MixedCurvature> {
    let rho = spec.fiber_metric_at(x);
    let rho_inv = spd_inverse(&rho, x)?;
    let partials = spec.fiber_metric_partials_at(x);
    let inv_partials: Vec<Matrix> = partials.iter().map(|d| -(&rho_inv * d * &rho_inv)).collect();
    let dim = partials.len();
    let k = rho.nrows();
    let mut comps = vec![Matrix::zeros(k, k); dim * dim];
    for i in 0..dim {
        for j in (i + 1)..dim {
            let r = (&inv_partials[i] * &partials[j] - &inv_partials[j] * &partials[i]) * 0.5;
            comps[j * dim + i] = -&r;
            comps[i * dim + j] = r;
        }
    }
    Ok(MixedCurvature { dim, comps })
}

/// Everything the connection module reports at one base point.
#[derive(Debug, Clone)]
pub struct ConnectionReport {
    pub gamma_mixed: MixedConnection,
    /// Base Christoffel symbols; entry `k` is `Γ^k_{ij}`.
    pub gamma_base: Vec<Matrix>,
    pub compat_residual: f64,
    pub curvature_mixed: MixedCurvature,
}

pub fn connection_report(spec: &ObservationSystemSpec, x: &[f64]) -> Result<ConnectionReport> {
    Ok(ConnectionReport {
        gamma_mixed: mixed_connection(spec, x)?,
        gamma_base: spec.base_christoffel_at(x),
        compat_residual: metric_compat_residual(spec, x)?,
        curvature_mixed: mixed_curvature(spec, x)?,
    })
}

/// C∞ step on `[0, 1]` built from `exp(−1/s)`: 0 at and below 0, 1 at and above 1.
pub fn smooth_step(s: f64) -> f64 {
    fn bump(s: f64) -> f64 {
        if s > 0.0 {
            (-1.0 / s).exp()
        } else {
            0.0
        }
    }
    if s <= 0.0 {
        0.0
    } else if s >= 1.0 {
        1.0
    } else {
        let a = bump(s);
        a / (a + bump(1.0 - s))
    }
}

/// Cutoff with `χ(t) = 0` for `t ≤ eps/2` and `χ(t) = 1` for `t ≥ eps`.
pub fn cutoff_chi(t: f64, eps: f64) -> Result<f64> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(BundleError::InvalidParameter(format!("cutoff width must be positive, got {eps}")));
    }
    if t.is_nan() {
        return Err(BundleError::InvalidInput("cutoff argument is NaN".into()));
    }
    let half = 0.5 * eps;
    Ok(smooth_step((t - half) / half))
}

/// Communication-range cutoff for a moving sensor platform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CommCutoff {
    pub r_comm: f64,
    /// Normalized distance over which `η` falls from 1 to 0.
    pub width: f64,
}

impl CommCutoff {
    pub fn new(r_comm: f64, width: f64) -> Result<Self> {
        if !(r_comm > 0.0 && r_comm.is_finite()) {
            return Err(BundleError::InvalidParameter(format!("R_comm must be positive, got {r_comm}")));
        }
        if !(width > 0.0 && width.is_finite()) {
            return Err(BundleError::InvalidParameter(format!("η width must be positive, got {width}")));
        }
        Ok(Self { r_comm, width })
    }

    /// `η(u) = 1 − S(u / width)`; `η(0) = 1`, nonincreasing.
    pub fn eta(&self, u: f64) -> f64 {
        1.0 - smooth_step(u / self.width)
    }

    pub fn eval(&self, p: &[f64], p_base: &[f64]) -> Result<f64> {
        if p.len() != p_base.len() {
            return Err(BundleError::InvalidInput("position and base have different dimensions".into()));
        }
        let r = p.iter().zip(p_base).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        if r <= self.r_comm {
            return Ok(1.0);
        }
        Ok(self.eta((r - self.r_comm) / self.r_comm) * (self.r_comm / r).powi(3))
    }
}

/// `χ_R(p)` with unit η width.
pub fn comm_cutoff(p: &[f64], p_base: &[f64], r_comm: f64) -> Result<f64> {
    CommCutoff::new(r_comm, 1.0)?.eval(p, p_base)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PropernessOptions {
    /// Only samples with `‖ξ‖_ρ ≥ r_min` enter the quadratic lower-bound check.
    pub r_min: f64,
    /// The quadratic lower bound is flagged when `Φ/‖ξ‖² < −alpha`.
    pub alpha: f64,
    /// Reference point for the decay fit; origin when absent.
    pub reference: Option<Vec<f64>>,
    /// Only samples at least this far from the reference enter the decay fit.
    pub fit_min_distance: f64,
}

impl Default for PropernessOptions {
    fn default() -> Self {
        Self {
            r_min: 0.0,
            alpha: 1.0,
            reference: None,
            fit_min_distance: 1.0,
        }
    }
}

/// Sample-based evidence for the properness conditions. Never a proof.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropernessReport {
    pub samples: usize,
    /// (C1) max sampled δ.
    pub c1_max_uncertainty: f64,
    /// (C2) min of `Φ/‖ξ‖²_ρ` over eligible samples.
    pub c2_min_ratio: Option<f64>,
    pub c2_flagged: bool,
    pub c2_samples: usize,
    /// (C3) max Lipschitz quotient of δ over sample pairs.
    pub c3_lipschitz: Option<f64>,
    /// (C4b) fitted exponent β in `δ ~ r^{−β}`.
    pub c4b_decay_exponent: Option<f64>,
    pub c4b_samples: usize,
    pub notes: Vec<String>,
}

pub fn validate_properness(
    spec: &ObservationSystemSpec,
    samples: &[BundleState],
    opts: &PropernessOptions,
) -> Result<PropernessReport> {
    if samples.is_empty() {
        return Err(BundleError::InsufficientSamples { needed: 1, got: 0 });
    }
    let mut notes = Vec::new();
    let mut deltas = Vec::with_capacity(samples.len());
    for s in samples {
        spec.check_state(s)?;
        let d = spec.uncertainty_at(&s.x);
        if !(d > 0.0 && d.is_finite()) {
            return Err(BundleError::InvalidInput(format!("δ(x) = {d} at sample x = {:?}", s.x)));
        }
        deltas.push(d);
    }
    let c1 = deltas.iter().copied().fold(0.0, f64::max);

    let mut c2_min: Option<f64> = None;
    let mut c2_samples = 0;
    if let Some(phi) = &spec.constraint {
        for s in samples {
            let norm = fiber_norm(spec, &s.x, &s.xi)?;
            if norm > 0.0 && norm >= opts.r_min {
                let ratio = phi.eval_state(s) / (norm * norm);
                c2_min = Some(c2_min.map_or(ratio, |m: f64| m.min(ratio)));
                c2_samples += 1;
            }
        }
        if c2_samples == 0 {
            notes.push(format!("C2: no sample with ‖ξ‖ ≥ {}", opts.r_min));
        }
    } else {
        notes.push("C2: no constraint registered".into());
    }
    let c2_flagged = c2_min.is_some_and(|m| m < -opts.alpha);

    let c3 = if samples.len() < 2 {
        notes.push(format!(
            "C3: {}",
            BundleError::InsufficientSamples {
                needed: 2,
                got: samples.len()
            }
        ));
        None
    } else {
        let mut worst = 0.0f64;
        for i in 0..samples.len() {
            for j in (i + 1)..samples.len() {
                let dist = euclid(&samples[i].x, &samples[j].x);
                if dist > 0.0 {
                    worst = worst.max((deltas[i] - deltas[j]).abs() / dist);
                }
            }
        }
        Some(worst)
    };

    let origin = vec![0.0; spec.layout.base_dim()];
    let reference = opts.reference.as_deref().unwrap_or(&origin);
    let points: Vec<(f64, f64)> = samples
        .iter()
        .zip(&deltas)
        .filter_map(|(s, &d)| {
            let r = euclid(&s.x, reference);
            (r > 0.0 && r >= opts.fit_min_distance).then(|| (r.ln(), d.ln()))
        })
        .collect();
    let c4b = fit_slope(&points).map(|slope| -slope);
    if c4b.is_none() {
        notes.push(format!(
            "C4b: need two distinct distances ≥ {} from the reference",
            opts.fit_min_distance
        ));
    }

    Ok(PropernessReport {
        samples: samples.len(),
        c1_max_uncertainty: c1,
        c2_min_ratio: c2_min,
        c2_flagged,
        c2_samples,
        c3_lipschitz: c3,
        c4b_decay_exponent: c4b,
        c4b_samples: points.len(),
        notes,
    })
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt()
}

/// Least-squares slope of `y` against `x`.
pub(crate) fn fit_slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    if sxx <= 1e-300 {
        return None;
    }
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    Some(sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numdiff;
    use crate::system::PhaseFunction;
    use approx::assert_relative_eq;

    fn spec_with(n: usize, k: usize) -> ObservationSystemSpec {
        ObservationSystemSpec::new(
            "test",
            n,
            k,
            move |x| Vector::from_iterator(k, x.iter().take(k).copied()),
            |_| 1.0,
            PhaseFunction::new(|_| 0.0),
        )
    }

    fn conformal(spec: ObservationSystemSpec, analytic: bool) -> ObservationSystemSpec {
        let k = spec.layout.k;
        let dim = spec.layout.base_dim();
        let spec = spec.with_fiber_metric(move |x| Matrix::identity(k, k) * (2.0 * x[0]).exp());
        if analytic {
            spec.with_fiber_metric_partials(move |x| {
                let mut out = vec![Matrix::zeros(k, k); dim];
                out[0] = Matrix::identity(k, k) * (2.0 * (2.0 * x[0]).exp());
                out
            })
        } else {
            spec
        }
    }

    #[test]
    fn fiber_norm_examples() {
        let spec = spec_with(1, 2);
        assert_eq!(fiber_norm(&spec, &[0.0, 0.0], &[3.0, 4.0]).unwrap(), 5.0);
        assert_eq!(fiber_norm(&spec, &[0.0, 0.0], &[0.0, 0.0]).unwrap(), 0.0);
        let spec = spec_with(1, 1).with_fiber_metric(|_| Matrix::from_element(1, 1, 2.0));
        assert_relative_eq!(fiber_norm(&spec, &[0.0, 0.0], &[1.0]).unwrap(), 2f64.sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn fiber_norm_rejects_non_finite() {
        let spec = spec_with(1, 1);
        assert!(matches!(
            fiber_norm(&spec, &[0.0, f64::NAN], &[1.0]),
            Err(BundleError::InvalidInput(_))
        ));
    }

    #[test]
    fn radial_clamp_examples() {
        let spec = spec_with(1, 2);
        assert_eq!(radial_clamp(&spec, &[0.0, 0.0], &[1.5, 0.0]).unwrap(), vec![1.0, 0.0]);
        assert_eq!(radial_clamp(&spec, &[0.0, 0.0], &[0.5, 0.0]).unwrap(), vec![0.5, 0.0]);
        let spec = spec_with(1, 2)
            .with_uncertainty(|_| 2.0)
            .with_fiber_metric(|_| Matrix::from_diagonal(&Vector::from_vec(vec![4.0, 1.0])));
        let out = radial_clamp(&spec, &[0.0, 0.0], &[2.0, 0.0]).unwrap();
        assert_relative_eq!(out[0], 1.0, epsilon = 1e-15);
        assert_eq!(out[1], 0.0);
    }

    #[test]
    fn constant_metric_has_no_connection() {
        let spec = spec_with(1, 2).with_fiber_metric(|_| Matrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]));
        let x = [0.4, -0.7];
        assert_eq!(mixed_connection(&spec, &x).unwrap().max_abs(), 0.0);
        assert_eq!(metric_compat_residual(&spec, &x).unwrap(), 0.0);
        assert_eq!(mixed_curvature(&spec, &x).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn conformal_connection_is_identity_along_first_axis() {
        // ρ = e^{2x¹} I  ⇒  Γ^a_{b1} = δ^a_b, Γ^a_{bi} = 0 otherwise
        for analytic in [true, false] {
            let spec = conformal(spec_with(1, 2), analytic);
            let g = mixed_connection(&spec, &[0.3, 1.1]).unwrap();
            assert!((&g.gamma[0] - Matrix::identity(2, 2)).abs().max() < 1e-9);
            assert!(g.gamma[1].abs().max() < 1e-9);
        }
    }

    #[test]
    fn connection_for_scalar_quadratic_metric() {
        // ρ₁₁ = 1 + (x¹)²  ⇒  Γ = x¹/(1 + (x¹)²) = 0.5 at x¹ = 1
        let spec = spec_with(1, 1).with_fiber_metric(|x| Matrix::from_element(1, 1, 1.0 + x[0] * x[0]));
        let g = mixed_connection(&spec, &[1.0, 0.0]).unwrap();
        assert_relative_eq!(g.get(0, 0, 0), 0.5, epsilon = 1e-10);
    }

    #[test]
    fn metric_compatibility_residuals() {
        let x = [0.2, -0.4];
        assert!(metric_compat_residual(&conformal(spec_with(1, 2), true), &x).unwrap() <= 1e-12);
        assert!(metric_compat_residual(&conformal(spec_with(1, 2), false), &x).unwrap() <= 1e-8);
    }

    #[test]
    fn conformal_curvature_vanishes() {
        // f(x) = sin(x¹) + x²x³ with analytic partials
        let dim = 4;
        let spec = spec_with(2, 2)
            .with_fiber_metric(|x| Matrix::identity(2, 2) * (2.0 * (x[0].sin() + x[1] * x[2])).exp())
            .with_fiber_metric_partials(move |x| {
                let e = (2.0 * (x[0].sin() + x[1] * x[2])).exp();
                let df = [x[0].cos(), x[2], x[1], 0.0];
                (0..dim).map(|i| Matrix::identity(2, 2) * (2.0 * df[i] * e)).collect()
            });
        let r = mixed_curvature(&spec, &[0.3, 0.5, -0.2, 0.9]).unwrap();
        assert!(r.max_abs() <= 1e-8);
    }

    /// Oracle: `R^a_{bij} = ∂_i Γ^a_{bj} − ∂_j Γ^a_{bi}` by differencing Γ.
    fn curvature_by_differencing_gamma(spec: &ObservationSystemSpec, x: &[f64]) -> Vec<Vec<Matrix>> {
        let dim = x.len();
        let d_gamma: Vec<Vec<Matrix>> = (0..dim)
            .map(|j| numdiff::matrix_partials(|w| mixed_connection(spec, w).unwrap().gamma[j].clone(), x, 1e-4))
            .collect(); // d_gamma[j][i] = ∂_i Γ_j
        (0..dim)
            .map(|i| (0..dim).map(|j| &d_gamma[j][i] - &d_gamma[i][j]).collect())
            .collect()
    }

    fn check_against_oracle(spec: &ObservationSystemSpec, x: &[f64]) -> usize {
        let r = mixed_curvature(spec, x).unwrap();
        let oracle = curvature_by_differencing_gamma(spec, x);
        let mut nonzero = 0;
        for i in 0..x.len() {
            for j in 0..x.len() {
                assert!((r.pair(i, j) - &oracle[i][j]).abs().max() < 1e-6, "pair ({i},{j})");
                if r.pair(i, j).abs().max() > 1e-6 {
                    nonzero += 1;
                }
            }
        }
        assert!(r.antisymmetry_residual() <= 1e-10);
        nonzero
    }

    #[test]
    fn single_function_metric_is_flat() {
        // ρ depends on x only through c = s·x¹x², so ∂₁ρ ∥ ∂₂ρ and every component vanishes
        let s = 0.1;
        let spec = spec_with(2, 2)
            .with_fiber_metric(move |x| {
                let c = s * x[0] * x[1];
                Matrix::from_row_slice(2, 2, &[1.0, c, c, 1.0])
            })
            .with_fiber_metric_partials(move |x| {
                let mut out = vec![Matrix::zeros(2, 2); 4];
                out[0] = Matrix::from_row_slice(2, 2, &[0.0, s * x[1], s * x[1], 0.0]);
                out[1] = Matrix::from_row_slice(2, 2, &[0.0, s * x[0], s * x[0], 0.0]);
                out
            });
        assert_eq!(check_against_oracle(&spec, &[1.0, 1.0, 0.0, 0.0]), 0);
    }

    #[test]
    fn curved_metric_matches_oracle() {
        // ρ = [[1 + s·x¹, s·x²], [s·x², 1]]: non-commuting partials
        let s = 0.1;
        let spec = spec_with(2, 2)
            .with_fiber_metric(move |x| Matrix::from_row_slice(2, 2, &[1.0 + s * x[0], s * x[1], s * x[1], 1.0]))
            .with_fiber_metric_partials(move |_| {
                let mut out = vec![Matrix::zeros(2, 2); 4];
                out[0] = Matrix::from_row_slice(2, 2, &[s, 0.0, 0.0, 0.0]);
                out[1] = Matrix::from_row_slice(2, 2, &[0.0, s, s, 0.0]);
                out
            });
        assert!(check_against_oracle(&spec, &[1.0, 1.0, 0.0, 0.0]) > 0);
    }

    #[test]
    fn cutoff_boundary_values() {
        let eps = 0.4;
        assert_eq!(cutoff_chi(eps, eps).unwrap(), 1.0);
        assert_eq!(cutoff_chi(eps / 2.0, eps).unwrap(), 0.0);
        assert_eq!(cutoff_chi(0.0, eps).unwrap(), 0.0);
        assert_eq!(cutoff_chi(3.0, eps).unwrap(), 1.0);
        let mid = cutoff_chi(0.75 * eps, eps).unwrap();
        assert!(mid > 0.0 && mid < 1.0);
        let mut prev = 0.0;
        for i in 1..200 {
            let t = eps / 2.0 + eps / 2.0 * i as f64 / 200.0;
            let v = cutoff_chi(t, eps).unwrap();
            // strictly increasing until the value rounds to 1
            assert!(v > prev || (v == 1.0 && prev >= 1.0 - 1e-15), "t = {t}");
            prev = v;
        }
        assert!(matches!(cutoff_chi(0.1, 0.0), Err(BundleError::InvalidParameter(_))));
    }

    #[test]
    fn comm_cutoff_examples() {
        let base = [0.0, 0.0, 0.0];
        let r = 2.0;
        assert_eq!(comm_cutoff(&[1.0, 0.0, 0.0], &base, r).unwrap(), 1.0);
        assert_eq!(comm_cutoff(&[2.0, 0.0, 0.0], &base, r).unwrap(), 1.0);
        // just outside the radius the value stays close to 1
        assert!((comm_cutoff(&[2.0 + 1e-9, 0.0, 0.0], &base, r).unwrap() - 1.0).abs() < 1e-8);
        let wide = CommCutoff::new(r, 2.0).unwrap();
        let v = wide.eval(&[4.0, 0.0, 0.0], &base).unwrap();
        assert_relative_eq!(v, 0.125 * wide.eta(1.0), epsilon = 1e-15);
        assert_relative_eq!(wide.eta(1.0), 0.5, epsilon = 1e-15);
        assert!(CommCutoff::new(-1.0, 1.0).is_err());
    }

    fn grid_samples(spec: &ObservationSystemSpec, radii: &[f64], xi_norm: f64) -> Vec<BundleState> {
        let dim = spec.layout.base_dim();
        let k = spec.layout.k;
        let mut out = Vec::new();
        for &r in radii {
            for axis in 0..dim {
                let mut x = vec![0.0; dim];
                x[axis] = r;
                let mut xi = vec![0.0; k];
                xi[0] = xi_norm;
                out.push(BundleState::new(0.0, x, xi, vec![0.0; k]));
            }
        }
        out
    }

    #[test]
    fn properness_decay_exponent_for_inverse_quadratic_uncertainty() {
        let spec = spec_with(1, 1).with_uncertainty(|x| 0.5 / (1.0 + x[0] * x[0] + x[1] * x[1]));
        let radii: Vec<f64> = (0..20).map(|i| 10f64.powf(1.0 + i as f64 / 19.0)).collect();
        let rep = validate_properness(&spec, &grid_samples(&spec, &radii, 0.0), &PropernessOptions::default()).unwrap();
        let beta = rep.c4b_decay_exponent.unwrap();
        assert!((beta - 2.0).abs() < 0.02, "β = {beta}");
    }

    #[test]
    fn properness_constant_uncertainty() {
        let spec = spec_with(1, 1).with_uncertainty(|_| 0.3);
        let rep = validate_properness(&spec, &grid_samples(&spec, &[1.0, 2.0, 3.0], 0.0), &PropernessOptions::default())
            .unwrap();
        assert_eq!(rep.c1_max_uncertainty, 0.3);
        assert_eq!(rep.c3_lipschitz, Some(0.0));
        assert_relative_eq!(rep.c4b_decay_exponent.unwrap(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn properness_flags_quartic_constraint() {
        let spec = spec_with(1, 1).with_constraint(PhaseFunction::new(|c| -c.xi[0].powi(4)));
        let rep = validate_properness(&spec, &grid_samples(&spec, &[1.0], 2.0), &PropernessOptions::default()).unwrap();
        assert_eq!(rep.c2_min_ratio, Some(-4.0));
        assert!(rep.c2_flagged);
    }

    #[test]
    fn properness_single_point_notes_c3() {
        let spec = spec_with(1, 1);
        let s = BundleState::new(0.0, vec![1.0, 0.0], vec![0.0], vec![0.0]);
        let rep = validate_properness(&spec, &[s], &PropernessOptions::default()).unwrap();
        assert_eq!(rep.c3_lipschitz, None);
        assert!(rep.notes.iter().any(|n| n.starts_with("C3")));
        assert!(matches!(
            validate_properness(&spec, &[], &PropernessOptions::default()),
            Err(BundleError::InsufficientSamples { .. })
        ));
    }
}
