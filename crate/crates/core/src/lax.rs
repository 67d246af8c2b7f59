//! Observation-constrained Toda lattice: system registration, the
//! dimension-compatible Lax pair, zero-curvature residuals and the classical
//! Flaschka oracle.

use serde::{Deserialize, Serialize};

use crate::error::{BundleError, Result};
use crate::system::{Matrix, ObservationSystemSpec, PhaseFunction, Vector};

pub use spectrum::symmetric_spectrum;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TodaParams {
    pub n: usize,
    pub delta0: f64,
    pub alpha_noise: f64,
    pub beta_weight: f64,
    pub kappa: f64,
    pub alpha_momentum: f64,
}

impl Default for TodaParams {
    fn default() -> Self {
        Self {
            n: 3,
            delta0: 0.1,
            alpha_noise: 1.0,
            beta_weight: 0.5,
            kappa: 1.0,
            alpha_momentum: 1.0,
        }
    }
}

impl TodaParams {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(BundleError::InvalidParameter(format!("n must be ≥ 2, got {}", self.n)));
        }
        for (name, v) in [
            ("delta0", self.delta0),
            ("alpha_noise", self.alpha_noise),
            ("kappa", self.kappa),
            ("alpha_momentum", self.alpha_momentum),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(BundleError::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.beta_weight >= 0.0 && self.beta_weight.is_finite()) {
            return Err(BundleError::InvalidParameter(format!(
                "beta_weight must be ≥ 0, got {}",
                self.beta_weight
            )));
        }
        Ok(())
    }

    /// `w_i = exp(−β |i − (n+1)/2|)` for `i = 1..n`.
    pub fn weights(&self) -> Vec<f64> {
        let c = (self.n as f64 + 1.0) / 2.0;
        (1..=self.n).map(|i| (-self.beta_weight * (i as f64 - c).abs()).exp()).collect()
    }

    /// Harmonic-mean mass over the `n − 1` relative coordinates, unit masses.
    pub fn m_eff(&self) -> f64 {
        1.0 / (self.n.saturating_sub(1).max(1) as f64)
    }

    /// `δ₀ √(1 + α Σ ε_j²)`.
    pub fn uncertainty(&self, eps: &[f64]) -> f64 {
        self.delta0 * (1.0 + self.alpha_noise * eps.iter().map(|e| e * e).sum::<f64>()).sqrt()
    }
}

/// Open-chain Toda flow for `H = ½Σp² + Σ exp(q_i − q_{i+1})`.
pub fn toda_rhs(q: &[f64], p: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = q.len();
    let mut p_dot = vec![0.0; n];
    for i in 0..n.saturating_sub(1) {
        let f = (q[i] - q[i + 1]).exp();
        p_dot[i] -= f;
        p_dot[i + 1] += f;
    }
    (p.to_vec(), p_dot)
}

/// Classical open-chain energy.
pub fn toda_energy(q: &[f64], p: &[f64]) -> f64 {
    0.5 * p.iter().map(|v| v * v).sum::<f64>() + q.windows(2).map(|w| (w[0] - w[1]).exp()).sum::<f64>()
}

/// `L = L₀ + λL₁`, `A = A₀ + λA₁` with their order components.
#[derive(Debug, Clone, PartialEq)]
pub struct LaxPair {
    pub l: Matrix,
    pub a: Matrix,
    pub lambda: f64,
    pub l0: Matrix,
    pub l1: Matrix,
    pub a0: Matrix,
    pub a1: Matrix,
}

fn check_lengths(q: &[f64], p: &[f64], eps: &[f64]) -> Result<usize> {
    let n = q.len();
    if n == 0 || p.len() != n || eps.len() != n - 1 {
        return Err(BundleError::InvalidInput(format!(
            "expected q, p of equal length n ≥ 1 and ε of length n − 1, got {}, {}, {}",
            q.len(),
            p.len(),
            eps.len()
        )));
    }
    Ok(n)
}

/// Builds the dimension-compatible Lax pair. `eps_dot` feeds `A₁ = diag(δ̇)`;
/// without it `A₁ = 0`.
pub fn build_lax(
    q: &[f64],
    p: &[f64],
    eps: &[f64],
    eps_dot: Option<&[f64]>,
    lambda: f64,
    params: &TodaParams,
) -> Result<LaxPair> {
    let n = check_lengths(q, p, eps)?;
    let mut l0 = Matrix::from_diagonal(&Vector::from_column_slice(p));
    let mut a0 = Matrix::zeros(n, n);
    for i in 0..n - 1 {
        let c = (q[i] - q[i + 1] + eps[i]).exp();
        l0[(i, i + 1)] = c;
        l0[(i + 1, i)] = c;
        a0[(i, i + 1)] = c;
        a0[(i + 1, i)] = -c;
    }
    let delta = params.uncertainty(eps);
    let l1 = Matrix::identity(n, n) * delta;
    let delta_dot = match eps_dot {
        Some(ed) => {
            if ed.len() != n - 1 {
                return Err(BundleError::InvalidInput(format!(
                    "ε̇ has length {}, expected {}",
                    ed.len(),
                    n - 1
                )));
            }
            let s: f64 = eps.iter().zip(ed).map(|(e, d)| e * d).sum();
            params.delta0 * params.alpha_noise * s / (1.0 + params.alpha_noise * eps.iter().map(|e| e * e).sum::<f64>()).sqrt()
        }
        None => 0.0,
    };
    let a1 = Matrix::identity(n, n) * delta_dot;
    Ok(LaxPair {
        l: &l0 + &l1 * lambda,
        a: &a0 + &a1 * lambda,
        lambda,
        l0,
        l1,
        a0,
        a1,
    })
}

/// Sign `s` in `ε̇_i = 2s(p_i − p_{i+1})`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpsDotSign {
    /// `s = −1`, the choice that zeroes the off-diagonal zero-curvature residual.
    #[default]
    Oracle,
    /// `s = +1`, as printed.
    Printed,
}

impl EpsDotSign {
    pub fn value(self) -> f64 {
        match self {
            EpsDotSign::Oracle => -1.0,
            EpsDotSign::Printed => 1.0,
        }
    }
}

pub fn epsilon_evolution(p: &[f64], sign: EpsDotSign) -> Vec<f64> {
    p.windows(2).map(|w| sign.value() * 2.0 * (w[0] - w[1])).collect()
}

/// Zero-curvature residual `dL/dt − [A, L]`, split by λ-order:
/// `R = R₀ + λR₁ + λ²R₂`.
#[derive(Debug, Clone, PartialEq)]
pub struct ZeroCurvatureResidual {
    pub matrix: Matrix,
    pub order0: Matrix,
    pub order1: Matrix,
    pub order2: Matrix,
}

fn commutator(a: &Matrix, b: &Matrix) -> Matrix {
    a * b - b * a
}

fn off_diagonal_norm(m: &Matrix) -> f64 {
    let mut s = 0.0;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if i != j {
                s += m[(i, j)] * m[(i, j)];
            }
        }
    }
    s.sqrt()
}

impl ZeroCurvatureResidual {
    pub fn total(&self) -> f64 {
        self.matrix.norm()
    }

    pub fn off_diagonal(&self) -> f64 {
        off_diagonal_norm(&self.matrix)
    }

    pub fn diagonal(&self) -> f64 {
        self.matrix.diagonal().norm()
    }
}

/// Residual along the Toda flow with the supplied `ε̇`; `dL/dt` by the chain rule.
pub fn zero_curvature_residual(
    q: &[f64],
    p: &[f64],
    eps: &[f64],
    eps_dot: &[f64],
    params: &TodaParams,
    lambda: f64,
) -> Result<ZeroCurvatureResidual> {
    let n = check_lengths(q, p, eps)?;
    let pair = build_lax(q, p, eps, Some(eps_dot), lambda, params)?;
    let (q_dot, p_dot) = toda_rhs(q, p);
    let mut dl0 = Matrix::from_diagonal(&Vector::from_column_slice(&p_dot));
    for i in 0..n - 1 {
        let v = pair.l0[(i, i + 1)] * (q_dot[i] - q_dot[i + 1] + eps_dot[i]);
        dl0[(i, i + 1)] = v;
        dl0[(i + 1, i)] = v;
    }
    // L₁ = δ I, so dL₁/dt = δ̇ I = A₁
    let dl1 = pair.a1.clone();
    let order0 = &dl0 - commutator(&pair.a0, &pair.l0);
    let order1 = &dl1 - commutator(&pair.a0, &pair.l1) - commutator(&pair.a1, &pair.l0);
    let order2 = -commutator(&pair.a1, &pair.l1);
    let matrix = &dl0 + &dl1 * lambda - commutator(&pair.a, &pair.l);
    Ok(ZeroCurvatureResidual {
        matrix,
        order0,
        order1,
        order2,
    })
}

/// The sign whose `ε̇` law gives the smaller `(1,2)` residual at the given state.
pub fn oracle_eps_sign(q: &[f64], p: &[f64], eps: &[f64], params: &TodaParams) -> Result<EpsDotSign> {
    let residual = |sign: EpsDotSign| -> Result<f64> {
        let r = zero_curvature_residual(q, p, eps, &epsilon_evolution(p, sign), params, 0.0)?;
        Ok(if q.len() > 1 { r.matrix[(0, 1)].abs() } else { 0.0 })
    };
    Ok(if residual(EpsDotSign::Oracle)? <= residual(EpsDotSign::Printed)? {
        EpsDotSign::Oracle
    } else {
        EpsDotSign::Printed
    })
}

/// `min_i |p_i − p_{i+1}| / (2 α δ₀)`.
pub fn epsilon_crit(p: &[f64], params: &TodaParams) -> f64 {
    p.windows(2)
        .map(|w| (w[0] - w[1]).abs())
        .fold(f64::INFINITY, f64::min)
        / (2.0 * params.alpha_noise * params.delta0)
}

/// Classical Flaschka matrix: diagonal `p_i/2`, off-diagonal `½ exp((q_i − q_{i+1})/2)`.
pub fn flaschka_lax(q: &[f64], p: &[f64]) -> Matrix {
    let n = q.len();
    let mut m = Matrix::from_diagonal(&Vector::from_iterator(n, p.iter().map(|v| 0.5 * v)));
    for i in 0..n.saturating_sub(1) {
        let a = 0.5 * (0.5 * (q[i] - q[i + 1])).exp();
        m[(i, i + 1)] = a;
        m[(i + 1, i)] = a;
    }
    m
}

fn rk4_step(y: &mut [f64], dt: f64, f: &impl Fn(&[f64]) -> Vec<f64>) {
    let add = |a: &[f64], b: &[f64], s: f64| a.iter().zip(b).map(|(u, v)| u + s * v).collect::<Vec<_>>();
    let k1 = f(y);
    let k2 = f(&add(y, &k1, dt / 2.0));
    let k3 = f(&add(y, &k2, dt / 2.0));
    let k4 = f(&add(y, &k3, dt));
    for i in 0..y.len() {
        y[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
}

fn rk4_integrate(y0: &[f64], t_final: f64, dt: f64, f: impl Fn(&[f64]) -> Vec<f64>) -> Vec<f64> {
    let steps = (t_final / dt).ceil().max(1.0) as usize;
    let h = t_final / steps as f64;
    let mut y = y0.to_vec();
    for _ in 0..steps {
        rk4_step(&mut y, h, &f);
    }
    y
}

fn toda_flow(y: &[f64]) -> Vec<f64> {
    let n = y.len() / 2;
    let (qd, pd) = toda_rhs(&y[..n], &y[n..]);
    qd.into_iter().chain(pd).collect()
}

/// Classical Toda flow integrated with RK4 to `t_final`.
pub fn integrate_toda(q0: &[f64], p0: &[f64], t_final: f64, dt: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    check_step(t_final, dt)?;
    if q0.len() != p0.len() {
        return Err(BundleError::InvalidInput("q and p lengths differ".into()));
    }
    let y0: Vec<f64> = q0.iter().chain(p0).copied().collect();
    let y = rk4_integrate(&y0, t_final, dt, toda_flow);
    let n = q0.len();
    Ok((y[..n].to_vec(), y[n..].to_vec()))
}

fn check_step(t_final: f64, dt: f64) -> Result<()> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(BundleError::InvalidParameter(format!("dt must be positive, got {dt}")));
    }
    if !(t_final >= 0.0 && t_final.is_finite()) {
        return Err(BundleError::InvalidParameter(format!("t_final must be ≥ 0, got {t_final}")));
    }
    Ok(())
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlaschkaDrift {
    pub initial_spectrum: Vec<f64>,
    pub final_spectrum: Vec<f64>,
    /// `max_i |λ_i(T) − λ_i(0)|`.
    pub max_drift: f64,
    /// Spectrum difference between the `dt` and `dt/2` runs at `T`.
    pub richardson_difference: f64,
    pub trace_drift: f64,
}

pub fn flaschka_drift(q0: &[f64], p0: &[f64], t_final: f64, dt: f64) -> Result<FlaschkaDrift> {
    let (q1, p1) = integrate_toda(q0, p0, t_final, dt)?;
    let (q2, p2) = integrate_toda(q0, p0, t_final, dt / 2.0)?;
    let l0 = flaschka_lax(q0, p0);
    let initial = symmetric_spectrum(&l0)?;
    let fin = symmetric_spectrum(&flaschka_lax(&q1, &p1))?;
    let fin_half = symmetric_spectrum(&flaschka_lax(&q2, &p2))?;
    Ok(FlaschkaDrift {
        max_drift: max_abs_diff(&initial, &fin),
        richardson_difference: max_abs_diff(&fin, &fin_half),
        trace_drift: (flaschka_lax(&q1, &p1).trace() - l0.trace()).abs(),
        initial_spectrum: initial,
        final_spectrum: fin,
    })
}

/// Builds the full bundle spec of the observation-constrained lattice.
///
/// Base `(q, p)` with the Darboux form, observation `h = (q_i − q_{i+1})`,
/// `ρ = I`, `δ = δ₀`, feasible region `Φ ≥ 0` of the weighted ellipsoid.
pub fn toda_system_spec(params: &TodaParams) -> Result<ObservationSystemSpec> {
    params.validate()?;
    let n = params.n;
    let k = n - 1;
    let w: Vec<f64> = params.weights()[..k].to_vec();
    let m_eff = params.m_eff();
    let (kappa, d2, am) = (params.kappa, params.delta0 * params.delta0, params.alpha_momentum);

    let h = PhaseFunction::new(move |c| {
        let (q, p) = c.x.split_at(n);
        toda_energy(q, p)
            + 0.5 * c.xi.iter().zip(c.pi).map(|(x, y)| y * y / m_eff + kappa * x * x).sum::<f64>()
    })
    .with_gradient(move |c| {
        let (q, p) = c.x.split_at(n);
        let mut g = Vector::zeros(2 * n + 2 * k);
        for i in 0..n - 1 {
            let f = (q[i] - q[i + 1]).exp();
            g[i] += f;
            g[i + 1] -= f;
        }
        for i in 0..n {
            g[n + i] = p[i];
        }
        for a in 0..k {
            g[2 * n + a] = kappa * c.xi[a];
            g[2 * n + k + a] = c.pi[a] / m_eff;
        }
        g
    });

    let w_val = w.clone();
    let phi = PhaseFunction::new(move |c| {
        1.0 - (0..k)
            .map(|a| w_val[a] * (c.xi[a] * c.xi[a] / d2 + c.pi[a] * c.pi[a] / (2.0 * am * d2)))
            .sum::<f64>()
    })
    .with_gradient(move |c| {
        let mut g = Vector::zeros(2 * n + 2 * k);
        for a in 0..k {
            g[2 * n + a] = -2.0 * w[a] * c.xi[a] / d2;
            g[2 * n + k + a] = -w[a] * c.pi[a] / (am * d2);
        }
        g
    });

    let delta0 = params.delta0;
    let mut jac = Matrix::zeros(k, 2 * n);
    for a in 0..k {
        jac[(a, a)] = 1.0;
        jac[(a, a + 1)] = -1.0;
    }
    Ok(ObservationSystemSpec::new(
        "toda",
        n,
        k,
        move |x| Vector::from_iterator(k, (0..k).map(|a| x[a] - x[a + 1])),
        move |_| delta0,
        h,
    )
    .with_observation_jacobian(move |_| jac.clone())
    .with_constraint(phi))
}

/// Inputs of a Lax verification run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LaxRunOptions {
    pub params: TodaParams,
    /// Initial positions; zero when absent.
    pub q0: Option<Vec<f64>>,
    /// Initial momenta; a symmetric ramp when absent.
    pub p0: Option<Vec<f64>>,
    /// Initial observation errors; zero when absent.
    pub eps0: Option<Vec<f64>>,
    pub t_final: f64,
    pub dt: f64,
    /// Spectral parameters at which residuals and drift are reported.
    pub lambdas: Vec<f64>,
}

impl Default for LaxRunOptions {
    fn default() -> Self {
        Self {
            params: TodaParams {
                n: 4,
                ..TodaParams::default()
            },
            q0: None,
            p0: None,
            eps0: None,
            t_final: 10.0,
            dt: 1e-3,
            lambdas: vec![0.0, 0.5, 1.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualRow {
    pub lambda: f64,
    pub total: f64,
    pub off_diagonal: f64,
    pub diagonal: f64,
    pub order0: f64,
    pub order1: f64,
    pub order2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralDriftRow {
    pub lambda: f64,
    pub max_drift: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaxReport {
    pub n: usize,
    pub t_final: f64,
    pub dt: f64,
    pub epsilon_crit: f64,
    /// Sign selected by the residual oracle at the initial state.
    pub eps_dot_sign: EpsDotSign,
    pub flaschka: FlaschkaDrift,
    /// Zero-curvature residuals of the dimension-compatible pair at the initial state.
    pub residuals: Vec<ResidualRow>,
    /// Spectrum drift of `L(λ, ε)` under the coupled `(q, p, ε)` flow. Measured, not asserted.
    pub coupled_spectral_drift: Vec<SpectralDriftRow>,
}

pub fn lax_report(opts: &LaxRunOptions) -> Result<LaxReport> {
    let params = &opts.params;
    params.validate()?;
    check_step(opts.t_final, opts.dt)?;
    let n = params.n;
    let pick = |v: &Option<Vec<f64>>, len: usize, default: Vec<f64>, name: &str| -> Result<Vec<f64>> {
        match v {
            Some(v) if v.len() != len => Err(BundleError::InvalidParameter(format!(
                "{name} has length {}, expected {len}",
                v.len()
            ))),
            Some(v) => Ok(v.clone()),
            None => Ok(default),
        }
    };
    let q = pick(&opts.q0, n, vec![0.0; n], "q0")?;
    let p = pick(&opts.p0, n, crate::systems::default_toda_momenta(n), "p0")?;
    let eps = pick(&opts.eps0, n - 1, vec![0.0; n - 1], "eps0")?;

    let sign = oracle_eps_sign(&q, &p, &eps, params)?;
    let eps_dot = epsilon_evolution(&p, sign);
    let residuals = opts
        .lambdas
        .iter()
        .map(|&lambda| {
            let r = zero_curvature_residual(&q, &p, &eps, &eps_dot, params, lambda)?;
            Ok(ResidualRow {
                lambda,
                total: r.total(),
                off_diagonal: r.off_diagonal(),
                diagonal: r.diagonal(),
                order0: r.order0.norm(),
                order1: r.order1.norm(),
                order2: r.order2.norm(),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let y0: Vec<f64> = q.iter().chain(&p).chain(&eps).copied().collect();
    let s = sign.value();
    let y1 = rk4_integrate(&y0, opts.t_final, opts.dt, |y| {
        let (qd, pd) = toda_rhs(&y[..n], &y[n..2 * n]);
        let ed = y[n..2 * n].windows(2).map(|w| s * 2.0 * (w[0] - w[1]));
        qd.into_iter().chain(pd).chain(ed).collect()
    });
    let coupled_spectral_drift = opts
        .lambdas
        .iter()
        .map(|&lambda| {
            let before = symmetric_spectrum(&build_lax(&q, &p, &eps, None, lambda, params)?.l)?;
            let after = symmetric_spectrum(&build_lax(&y1[..n], &y1[n..2 * n], &y1[2 * n..], None, lambda, params)?.l)?;
            Ok(SpectralDriftRow {
                lambda,
                max_drift: max_abs_diff(&before, &after),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(LaxReport {
        n,
        t_final: opts.t_final,
        dt: opts.dt,
        epsilon_crit: epsilon_crit(&p, params),
        eps_dot_sign: sign,
        flaschka: flaschka_drift(&q, &p, opts.t_final, opts.dt)?,
        residuals,
        coupled_spectral_drift,
    })
}

pub mod spectrum {
    //! Symmetric eigenvalues by Householder tridiagonalization and implicit QL.

    use crate::error::{BundleError, Result};
    use crate::system::Matrix;

    const MAX_SWEEPS: usize = 64;

    /// Eigenvalues of a symmetric matrix, ascending.
    pub fn symmetric_spectrum(m: &Matrix) -> Result<Vec<f64>> {
        let n = m.nrows();
        if m.ncols() != n {
            return Err(BundleError::InvalidInput(format!("matrix is {}×{}", n, m.ncols())));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(BundleError::InvalidInput("matrix contains non-finite entries".into()));
        }
        let scale = m.amax().max(1.0);
        if (m - m.transpose()).amax() > 1e-10 * scale {
            return Err(BundleError::InvalidInput("matrix is not symmetric".into()));
        }
        if n == 0 {
            return Ok(Vec::new());
        }
        let (mut d, mut e) = tridiagonalize(m);
        tridiagonal_ql(&mut d, &mut e)?;
        d.sort_by(f64::total_cmp);
        Ok(d)
    }

    /// Householder reduction; returns the diagonal and the subdiagonal in `e[1..]`.
    fn tridiagonalize(m: &Matrix) -> (Vec<f64>, Vec<f64>) {
        let n = m.nrows();
        let mut a = m.clone();
        let mut d = vec![0.0; n];
        let mut e = vec![0.0; n];
        for i in (1..n).rev() {
            let l = i - 1;
            let mut h = 0.0;
            if l > 0 {
                let scale: f64 = (0..=l).map(|k| a[(i, k)].abs()).sum();
                if scale == 0.0 {
                    e[i] = a[(i, l)];
                } else {
                    for k in 0..=l {
                        a[(i, k)] /= scale;
                        h += a[(i, k)] * a[(i, k)];
                    }
                    let f = a[(i, l)];
                    let g = if f >= 0.0 { -h.sqrt() } else { h.sqrt() };
                    e[i] = scale * g;
                    h -= f * g;
                    a[(i, l)] = f - g;
                    let mut f = 0.0;
                    for j in 0..=l {
                        let mut g = 0.0;
                        for k in 0..=j {
                            g += a[(j, k)] * a[(i, k)];
                        }
                        for k in (j + 1)..=l {
                            g += a[(k, j)] * a[(i, k)];
                        }
                        e[j] = g / h;
                        f += e[j] * a[(i, j)];
                    }
                    let hh = f / (h + h);
                    for j in 0..=l {
                        let f = a[(i, j)];
                        let g = e[j] - hh * f;
                        e[j] = g;
                        for k in 0..=j {
                            a[(j, k)] -= f * e[k] + g * a[(i, k)];
                        }
                    }
                }
            } else {
                e[i] = a[(i, l)];
            }
            d[i] = h;
        }
        for (i, di) in d.iter_mut().enumerate() {
            *di = a[(i, i)];
        }
        (d, e)
    }

    /// Implicit-shift QL on a symmetric tridiagonal matrix; eigenvalues land in `d`.
    fn tridiagonal_ql(d: &mut [f64], e: &mut [f64]) -> Result<()> {
        let n = d.len();
        for i in 1..n {
            e[i - 1] = e[i];
        }
        e[n - 1] = 0.0;
        for l in 0..n {
            let mut sweeps = 0;
            loop {
                let mut m = l;
                while m + 1 < n {
                    let dd = d[m].abs() + d[m + 1].abs();
                    if e[m].abs() <= f64::EPSILON * dd {
                        break;
                    }
                    m += 1;
                }
                if m == l {
                    break;
                }
                sweeps += 1;
                if sweeps > MAX_SWEEPS {
                    return Err(BundleError::InvalidInput("symmetric eigensolver did not converge".into()));
                }
                let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
                let mut r = g.hypot(1.0);
                g = d[m] - d[l] + e[l] / (g + r.copysign(g));
                let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
                let mut underflow = false;
                let mut i = m;
                while i > l {
                    i -= 1;
                    let f = s * e[i];
                    let b = c * e[i];
                    r = f.hypot(g);
                    e[i + 1] = r;
                    if r == 0.0 {
                        d[i + 1] -= p;
                        e[m] = 0.0;
                        underflow = true;
                        break;
                    }
                    s = f / r;
                    c = g / r;
                    g = d[i + 1] - p;
                    r = (d[i] - g) * s + 2.0 * c * b;
                    p = s * r;
                    d[i + 1] = g + p;
                    g = c * r - b;
                }
                if underflow {
                    continue;
                }
                d[l] -= p;
                e[l] = g;
                e[m] = 0.0;
            }
        }
        Ok(())
    }
}
