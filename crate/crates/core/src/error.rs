use thiserror::Error;

use crate::integrator::StepDiagnostics;
use crate::system::BundleState;

pub type Result<T> = std::result::Result<T, BundleError>;

#[derive(Debug, Error)]
pub enum BundleError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("fiber or base metric is numerically singular at x = {x:?}")]
    SingularMetric { x: Vec<f64> },

    #[error("state outside the working region: {0}")]
    Domain(String),

    #[error("bundle symplectic form is degenerate (scale {scale})")]
    DegenerateStructure { scale: f64 },

    #[error("insufficient samples: need at least {needed}, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    #[error("constraint projection failed: degenerate gradient (<dPhi, nu> = {pairing:e})")]
    ProjectionFailure { pairing: f64 },

    #[error("constraint projection did not converge after {iters} iterations (phi = {phi:e})")]
    NonConvergence {
        iters: usize,
        phi: f64,
        best: Box<BundleState>,
    },

    #[error("step failed at t = {t}: geometric error {eps_geo:e} above tolerance at h_min")]
    StepFailure {
        t: f64,
        eps_geo: f64,
        diagnostics: Box<StepDiagnostics>,
    },

    #[error("integration aborted after {steps} accepted steps: {source}")]
    Aborted {
        steps: usize,
        partial: Box<crate::integrator::Trajectory>,
        #[source]
        source: Box<BundleError>,
    },

    #[error("structure function symmetry violated: {0}")]
    MixingSymmetry(String),
}

impl BundleError {
    /// Short machine-readable category.
    pub fn category(&self) -> &'static str {
        match self {
            BundleError::InvalidInput(_) => "invalid_input",
            BundleError::InvalidParameter(_) => "invalid_parameter",
            BundleError::SingularMetric { .. } => "singular_metric",
            BundleError::Domain(_) => "domain",
            BundleError::DegenerateStructure { .. } => "degenerate_structure",
            BundleError::InsufficientSamples { .. } => "insufficient_samples",
            BundleError::ProjectionFailure { .. } => "projection_failure",
            BundleError::NonConvergence { .. } => "non_convergence",
            BundleError::StepFailure { .. } => "step_failure",
            BundleError::Aborted { .. } => "aborted",
            BundleError::MixingSymmetry(_) => "mixing_symmetry",
        }
    }
}

pub(crate) fn ensure_finite(label: &str, values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(BundleError::InvalidInput(format!("{label} contains non-finite entries")))
    }
}
