//! Acceptance criteria 1–12. Prints one PASS/FAIL line per criterion and
//! exits nonzero when any criterion fails.

use std::time::{Duration, Instant};

use obsbundle_cli::config::RunConfig;
use obsbundle_cli::{trajectory_csv, SimulateOutputs};
use obsbundle_core::constraints::{classify_dirac, estimate_mu, surface_samples, DiracClass, DiracTolerance};
use obsbundle_core::geometry::{metric_compat_residual, mixed_curvature, radial_clamp};
use obsbundle_core::integrator::{convergence_study, geometric_error, integrate, ConstraintMode, IntegratorConfig};
use obsbundle_core::lax::{epsilon_crit, epsilon_evolution, flaschka_drift, zero_curvature_residual, EpsDotSign, TodaParams};
use obsbundle_core::poisson::{bracket_matrix, jacobi_residual, poisson_bracket, BracketBackend, MixingModel, Structure};
use obsbundle_core::systems::{
    circle_system, default_toda_momenta, oscillator_system, toda_system, CircleParams, OscillatorConstraint,
    OscillatorParams, TodaSystemParams,
};
use obsbundle_core::{BundleState, Matrix, ObservationSystemSpec, PhaseFunction, Vector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

/// Least-squares slope of `ln y` against `ln x`.
fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = xs.iter().zip(ys).map(|(x, y)| (x.ln(), y.ln())).collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    sxy / sxx
}

fn circle_config(h: f64, t_final: f64) -> IntegratorConfig {
    let mut cfg = IntegratorConfig {
        h0: h,
        h_min: h.min(1e-6),
        t_final,
        adapt: false,
        constraint_mode: ConstraintMode::Equality,
        first_class_hint: true,
        ..IntegratorConfig::default()
    };
    cfg.regularization.alpha_dissipation = 0.0;
    cfg
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let sys = circle_system(&CircleParams::default()).unwrap();
    let report = convergence_study(&sys.spec, &sys.initial, &circle_config(0.02, 5.0), 4).unwrap();
    let elapsed = start.elapsed();
    let phi = report.phi.expect("circle has a constraint");
    // independent slope over the reported step sizes
    let slope = loglog_slope(&report.step_sizes, &phi.errors);
    let fitted = phi.fitted.unwrap_or(f64::NAN);
    let pass = (1.7..=2.3).contains(&slope) && (fitted - slope).abs() < 1e-9 && elapsed < Duration::from_secs(5);
    outcome(
        pass,
        format!("constraint order {slope:.4} (errors {:?}), {:.2}s", phi.errors, elapsed.as_secs_f64()),
    )
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let sys = toda_system(&TodaSystemParams {
        unconstrained: true,
        ..TodaSystemParams::default()
    })
    .unwrap();
    let cfg = IntegratorConfig {
        h0: 0.02,
        t_final: 1.0,
        adapt: false,
        ..IntegratorConfig::default()
    };
    let report = convergence_study(&sys.spec, &sys.initial, &cfg, 4).unwrap();
    let elapsed = start.elapsed();
    let slope = loglog_slope(&report.step_sizes, &report.global.errors);
    let pass = (0.8..=1.2).contains(&slope) && elapsed < Duration::from_secs(10);
    outcome(
        pass,
        format!("global order {slope:.4} (errors {:?}), {:.2}s", report.global.errors, elapsed.as_secs_f64()),
    )
}

fn criterion_3() -> Outcome {
    let sys = circle_system(&CircleParams::default()).unwrap();
    let state = BundleState::new(0.0, vec![0.8, 1.2], vec![0.0], vec![0.0]);
    let hs: Vec<f64> = (0..5).map(|j| 0.1 / 2f64.powi(j)).collect();
    let res: Vec<f64> = hs
        .iter()
        .map(|&h| geometric_error(&sys.spec, &state, h, &circle_config(h, 1.0)).unwrap().symplectic)
        .collect();
    let ratios: Vec<f64> = res.windows(2).map(|w| w[0] / w[1]).collect();
    let pass = ratios.iter().all(|r| (3.4..=4.6).contains(r));
    outcome(pass, format!("halving ratios {ratios:.4?} over h ∈ [{}, {}]", hs[4], hs[0]))
}

/// Oscillator with `Φ = q`, `Φ(0) = −0.5`, α = 2, soft constraint handling.
fn decay_run() -> (ObservationSystemSpec, obsbundle_core::integrator::Trajectory, f64, f64) {
    let sys = oscillator_system(&OscillatorParams {
        constraint: OscillatorConstraint::Position,
        q0: -0.5,
        ..OscillatorParams::default()
    })
    .unwrap();
    let mut cfg = IntegratorConfig {
        h0: 0.01,
        t_final: 2.5,
        adapt: false,
        constraint_mode: ConstraintMode::Soft,
        ..IntegratorConfig::default()
    };
    cfg.regularization.alpha_dissipation = 2.0;
    cfg.regularization.eps_reg = 1e-3;
    let traj = integrate(&sys.spec, &sys.initial, &cfg).unwrap();
    (sys.spec, traj, 2.0, 1e-3)
}

fn criterion_4() -> Outcome {
    let (spec, traj, alpha, eps) = decay_run();
    // Φ = q on a flat base: ‖∇_E Φ‖ = 1 everywhere
    let mu_oracle = 1.0;
    let probe = [BundleState::new(0.0, vec![0.0, 0.7], vec![0.0], vec![0.0])];
    let mu_lib = estimate_mu(&spec, &probe).unwrap();
    let rate = alpha / (mu_oracle * mu_oracle + eps);
    let phi0 = 0.5;
    let mut bound_ok = true;
    let (mut ts, mut logs) = (Vec::new(), Vec::new());
    for s in traj.states() {
        let phi = s.x[0].abs();
        if phi > phi0 * 1.5 * (-rate * s.t).exp() {
            bound_ok = false;
        }
        if phi > 1e-12 {
            ts.push(s.t);
            logs.push(phi.ln());
        }
    }
    let n = ts.len() as f64;
    let mt = ts.iter().sum::<f64>() / n;
    let ml = logs.iter().sum::<f64>() / n;
    let fitted = -ts.iter().zip(&logs).map(|(t, l)| (t - mt) * (l - ml)).sum::<f64>()
        / ts.iter().map(|t| (t - mt) * (t - mt)).sum::<f64>();
    let rel = (fitted - rate).abs() / rate;
    let pass = bound_ok && rel <= 0.3 && (mu_lib - mu_oracle).abs() < 1e-9;
    outcome(
        pass,
        format!("envelope held: {bound_ok}, fitted rate {fitted:.4} vs {rate:.4} ({:.1}% off), μ = {mu_lib}", rel * 100.0),
    )
}

fn criterion_5() -> Outcome {
    let (spec, traj, _, _) = decay_run();
    let energies: Vec<(f64, f64)> = traj.states().map(|s| (s.t, spec.energy(s))).collect();
    let mut worst_rise = f64::NEG_INFINITY;
    let mut ok = true;
    for (w, st) in energies.windows(2).zip(&traj.steps) {
        let h = st.diagnostics.h_used;
        let rise = w[1].1 - w[0].1;
        worst_rise = worst_rise.max(rise);
        if rise > 10.0 * h * h {
            ok = false;
        }
    }
    outcome(
        ok,
        format!(
            "max per-step energy rise {worst_rise:.3e} (slack 10h² = {:.1e}), H: {:.4} → {:.4}",
            10.0 * 0.01 * 0.01,
            energies[0].1,
            energies.last().unwrap().1
        ),
    )
}

/// `F(z) = a·z + ½ zᵀSz + c sin(d·z)` with its exact gradient.
fn random_function(rng: &mut ChaCha8Rng, dim: usize) -> PhaseFunction {
    let a: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut s = Matrix::from_fn(dim, dim, |_, _| rng.gen_range(-0.5..0.5));
    s = (&s + s.transpose()) * 0.5;
    let c: f64 = rng.gen_range(-1.0..1.0);
    let d: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let z_of = move |co: &obsbundle_core::Coords<'_>| -> Vector {
        Vector::from_iterator(dim, co.x.iter().chain(co.xi).chain(co.pi).copied())
    };
    let (a1, s1, d1) = (a.clone(), s.clone(), d.clone());
    let value = move |co: &obsbundle_core::Coords<'_>| {
        let z = z_of(co);
        let lin: f64 = a1.iter().zip(z.iter()).map(|(u, v)| u * v).sum();
        let phase: f64 = d1.iter().zip(z.iter()).map(|(u, v)| u * v).sum();
        lin + 0.5 * z.dot(&(&s1 * &z)) + c * phase.sin()
    };
    let gradient = move |co: &obsbundle_core::Coords<'_>| {
        let z = z_of(co);
        let phase: f64 = d.iter().zip(z.iter()).map(|(u, v)| u * v).sum();
        let mut g = Vector::from_column_slice(&a) + &s * &z;
        for (gi, di) in g.iter_mut().zip(&d) {
            *gi += c * phase.cos() * di;
        }
        g
    };
    PhaseFunction::new(value).with_gradient(gradient)
}

fn conformal_spec(curvature_mixing: bool) -> ObservationSystemSpec {
    let spec = ObservationSystemSpec::new(
        "conformal",
        2,
        2,
        |x| Vector::from_vec(vec![x[0], x[1]]),
        |_| 1.0,
        PhaseFunction::new(|_| 0.0),
    );
    if !curvature_mixing {
        return spec;
    }
    // ρ = e^{2f} I, f = sin x¹ + x²x³
    let f = |x: &[f64]| x[0].sin() + x[1] * x[2];
    let mut spec = spec
        .with_fiber_metric(move |x| Matrix::identity(2, 2) * (2.0 * f(x)).exp())
        .with_fiber_metric_partials(move |x| {
            let e = (2.0 * f(x)).exp();
            let df = [x[0].cos(), x[2], x[1], 0.0];
            df.iter().map(|d| Matrix::identity(2, 2) * (2.0 * d * e)).collect()
        });
    spec.mixing = MixingModel::Curvature;
    spec
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst_anti = 0.0f64;
    let mut worst_jacobi = 0.0f64;
    for curvature in [false, true] {
        let spec = conformal_spec(curvature);
        let dim = spec.layout.phase_dim();
        for _ in 0..100 {
            let f = random_function(&mut rng, dim);
            let g = random_function(&mut rng, dim);
            let k = random_function(&mut rng, dim);
            let z: Vec<f64> = (0..dim).map(|_| rng.gen_range(-0.5..0.5)).collect();
            let state = BundleState::from_phase(0.0, spec.layout, &z);
            for backend in [BracketBackend::PaperTable, BracketBackend::ExactInverse] {
                let fg = poisson_bracket(&spec, &f, &g, &state, backend).unwrap();
                let gf = poisson_bracket(&spec, &g, &f, &state, backend).unwrap();
                worst_anti = worst_anti.max((fg + gf).abs());
                worst_jacobi = worst_jacobi.max(jacobi_residual(&spec, &f, &g, &k, &state, backend).unwrap());
            }
        }
    }
    outcome(
        worst_anti <= 1e-12 && worst_jacobi <= 1e-8,
        format!("max antisymmetry {worst_anti:.2e}, max Jacobi residual {worst_jacobi:.2e} over 200 triples × 2 backends"),
    )
}

fn mixed_spec(c: f64) -> ObservationSystemSpec {
    ObservationSystemSpec::new(
        "mixed",
        1,
        1,
        |x| Vector::from_element(1, x[0]),
        |_| 1.0,
        PhaseFunction::new(|_| 0.0),
    )
    .with_mixing(MixingModel::custom(move |_| {
        let mut s = Structure::zeros(2, 1);
        s.c[0][(0, 0)] = c;
        s
    }))
}

fn criterion_7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let spec = conformal_spec(false);
    let dim = spec.layout.phase_dim();
    let mut zero_diff = 0.0f64;
    for _ in 0..100 {
        let z: Vec<f64> = (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let s = BundleState::from_phase(0.0, spec.layout, &z);
        let a = bracket_matrix(&spec, &s, BracketBackend::PaperTable).unwrap();
        let b = bracket_matrix(&spec, &s, BracketBackend::ExactInverse).unwrap();
        zero_diff = zero_diff.max((a - b).abs().max());
    }
    let state = BundleState::new(0.0, vec![0.2, -0.1], vec![1.0], vec![0.3]);
    let scales = [0.1, 0.05, 0.025, 0.0125];
    let diffs: Vec<f64> = scales
        .iter()
        .map(|&c| {
            let spec = mixed_spec(c);
            let a = bracket_matrix(&spec, &state, BracketBackend::PaperTable).unwrap();
            let b = bracket_matrix(&spec, &state, BracketBackend::ExactInverse).unwrap();
            (a - b).abs().max()
        })
        .collect();
    let slope = loglog_slope(&scales, &diffs);
    let pass = zero_diff <= 1e-12 && (slope - 2.0).abs() <= 0.3;
    outcome(
        pass,
        format!("zero-mixing max diff {zero_diff:.1e}; scaled-mixing agreement slope {slope:.3} (diffs {diffs:.3?})"),
    )
}

fn criterion_8() -> Outcome {
    let x = [0.3, 0.5, -0.2, 0.9];
    let analytic = conformal_spec(true);
    let f = |x: &[f64]| x[0].sin() + x[1] * x[2];
    let finite = ObservationSystemSpec::new(
        "conformal_fd",
        2,
        2,
        |x| Vector::from_vec(vec![x[0], x[1]]),
        |_| 1.0,
        PhaseFunction::new(|_| 0.0),
    )
    .with_fiber_metric(move |x| Matrix::identity(2, 2) * (2.0 * f(x)).exp());
    let compat_analytic = metric_compat_residual(&analytic, &x).unwrap();
    let compat_fd = metric_compat_residual(&finite, &x).unwrap();
    let conformal_curv = mixed_curvature(&analytic, &x).unwrap().max_abs();
    // a genuinely curved metric for the antisymmetry check
    let curved = ObservationSystemSpec::new(
        "curved",
        1,
        2,
        |x| Vector::from_vec(vec![x[0], x[1]]),
        |_| 1.0,
        PhaseFunction::new(|_| 0.0),
    )
    .with_fiber_metric(|x| Matrix::from_row_slice(2, 2, &[1.0 + 0.3 * x[0], 0.3 * x[1], 0.3 * x[1], 1.0]));
    let r = mixed_curvature(&curved, &[0.4, -0.7]).unwrap();
    let anti = r.antisymmetry_residual();
    let pass = compat_analytic <= 1e-10 && compat_fd <= 1e-8 && conformal_curv <= 1e-8 && anti <= 1e-10 && r.max_abs() > 0.0;
    outcome(
        pass,
        format!(
            "compat analytic {compat_analytic:.1e}, compat FD {compat_fd:.1e}, conformal curvature {conformal_curv:.1e}, antisymmetry {anti:.1e} (|R| = {:.3})",
            r.max_abs()
        ),
    )
}

fn criterion_9() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let rho_norm = |rho: &Matrix, xi: &[f64]| {
        let v = Vector::from_column_slice(xi);
        v.dot(&(rho * &v)).sqrt()
    };
    let uncertainty = |x: &[f64]| 0.5 / (1.0 + x.iter().map(|v| v * v).sum::<f64>());
    let spec = ObservationSystemSpec::new(
        "clamp",
        2,
        2,
        |x| Vector::from_vec(vec![x[0], x[1]]),
        uncertainty,
        PhaseFunction::new(|_| 0.0),
    )
    .with_fiber_metric(|x| Matrix::from_row_slice(2, 2, &[(2.0 * x[0]).exp() + 0.1, 0.3 * x[1].sin(), 0.3 * x[1].sin(), 1.0 + x[2] * x[2]]));
    let (mut worst, mut idempotent, mut moved) = (f64::NEG_INFINITY, true, 0usize);
    for _ in 0..100_000 {
        let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.5..1.5)).collect();
        let scale = 10f64.powf(rng.gen_range(-3.0..1.0));
        let xi: Vec<f64> = (0..2).map(|_| scale * rng.gen_range(-1.0..1.0)).collect();
        let out = radial_clamp(&spec, &x, &xi).unwrap();
        let rho = spec.fiber_metric_at(&x);
        worst = worst.max(rho_norm(&rho, &out) - uncertainty(&x));
        moved += usize::from(out != xi);
        if radial_clamp(&spec, &x, &out).unwrap() != out {
            idempotent = false;
        }
    }
    // every accepted state of a run that hits the fiber boundary
    let sys = oscillator_system(&OscillatorParams {
        xi0: 0.9,
        pi0: 0.8,
        ..OscillatorParams::default()
    })
    .unwrap();
    let cfg = IntegratorConfig {
        t_final: 5.0,
        adapt: false,
        ..IntegratorConfig::default()
    };
    let traj = integrate(&sys.spec, &sys.initial, &cfg).unwrap();
    let clamps = traj.steps.iter().filter(|s| s.diagnostics.clamped).count();
    let run_worst = traj
        .states()
        .map(|s| s.xi[0].abs() - sys.spec.uncertainty_at(&s.x))
        .fold(f64::NEG_INFINITY, f64::max);
    let pass = worst <= 1e-12 && run_worst <= 1e-12 && idempotent && clamps > 0 && moved > 0;
    outcome(
        pass,
        format!(
            "clamp excess {worst:.2e} ({moved} of 1e5 moved), idempotent {idempotent}; run excess {run_worst:.2e} with {clamps} clamps"
        ),
    )
}

fn criterion_10() -> Outcome {
    let p0 = default_toda_momenta(4);
    let q0 = [0.0, 0.3, -0.2, 0.1];
    let drift = flaschka_drift(&q0, &p0, 10.0, 1e-4).unwrap();
    let params = TodaParams {
        n: 2,
        ..TodaParams::default()
    };
    let (q, p, eps) = ([0.3, -0.4], [0.7, -0.2], [0.05]);
    let mut off = 0.0f64;
    for lambda in [0.0, 0.5, 1.0, 2.0] {
        let r = zero_curvature_residual(&q, &p, &eps, &epsilon_evolution(&p, EpsDotSign::Oracle), &params, lambda).unwrap();
        off = off.max(r.off_diagonal());
    }
    let crit = epsilon_crit(
        &[1.0, 0.0, -1.0],
        &TodaParams {
            n: 3,
            alpha_noise: 1.0,
            delta0: 0.5,
            ..TodaParams::default()
        },
    );
    // |1 − 0| / (2 · 1 · 0.5) = 1
    let pass = drift.max_drift <= 1e-6 && off <= 1e-12 && (crit - 1.0).abs() <= 1e-15;
    outcome(
        pass,
        format!(
            "Flaschka drift {:.2e} (Richardson {:.1e}), n = 2 off-diagonal residual {off:.1e}, ε_crit {crit}",
            drift.max_drift, drift.richardson_difference
        ),
    )
}

fn criterion_11() -> Outcome {
    let cases: Vec<(&str, obsbundle_core::systems::BuiltinSystem, DiracClass)> = vec![
        ("circle", circle_system(&CircleParams::default()).unwrap(), DiracClass::FirstClass),
        (
            "Φ = q",
            oscillator_system(&OscillatorParams {
                constraint: OscillatorConstraint::Position,
                ..OscillatorParams::default()
            })
            .unwrap(),
            DiracClass::SecondClass,
        ),
        ("Toda ellipsoid", toda_system(&TodaSystemParams::default()).unwrap(), DiracClass::SecondClass),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, sys, expected) in cases {
        let samples = surface_samples(&sys.spec, &sys.sampling, 1000, 11).unwrap();
        let report = classify_dirac(&sys.spec, &samples, DiracTolerance::default(), 1000, BracketBackend::PaperTable).unwrap();
        pass &= report.classification == expected && report.samples_used == 1000;
        parts.push(format!("{name}: {:?}", report.classification));
    }
    outcome(pass, parts.join(", "))
}

fn criterion_12() -> Outcome {
    let text = r#"{
        "system": {"builtin": "circle_constraint", "level": 1.5},
        "integrator": {"h0": 0.01, "t_final": 2.0, "adapt": false},
        "constraint": {"mode": "equality", "first_class_hint": true, "alpha_dissipation": 0.0}
    }"#;
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig::from_json(text).unwrap();
    let paths = [dir.path().join("a.csv"), dir.path().join("b.csv")];
    for p in &paths {
        obsbundle_cli::cmd_simulate(
            &cfg,
            SimulateOutputs {
                trajectory: Some(p),
                diagnostics: None,
            },
        )
        .unwrap();
    }
    let a = std::fs::read(&paths[0]).unwrap();
    let b = std::fs::read(&paths[1]).unwrap();
    let reparsed = RunConfig::from_json(&cfg.to_json()).unwrap();
    let sys = cfg.build_system().unwrap();
    let traj = integrate(&sys.spec, &sys.initial, &cfg.integrator_config()).unwrap();
    let direct = trajectory_csv(&sys.spec, &traj, &cfg.digest());
    let pass = a == b && reparsed == cfg && reparsed.to_json() == cfg.to_json() && a == direct.as_bytes();
    outcome(
        pass,
        format!("CSV identical: {} ({} bytes), config round-trip identical: {}", a == b, a.len(), reparsed == cfg),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 12] = [
        ("constraint order", criterion_1),
        ("global order", criterion_2),
        ("symplectic step residual", criterion_3),
        ("regularized decay", criterion_4),
        ("energy dissipation", criterion_5),
        ("Poisson algebra", criterion_6),
        ("backend agreement", criterion_7),
        ("geometry kernel", criterion_8),
        ("fiber feasibility", criterion_9),
        ("Lax verification", criterion_10),
        ("Dirac classification", criterion_11),
        ("CLI determinism", criterion_12),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = run();
        let tag = if result.pass { "PASS" } else { "FAIL" };
        failed += usize::from(!result.pass);
        println!(
            "{tag} criterion {:>2} ({name}): {} [{:.2}s]",
            i + 1,
            result.detail,
            start.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} of {} criteria failed", criteria.len());
        std::process::exit(1);
    }
    println!("all {} criteria passed", criteria.len());
}
