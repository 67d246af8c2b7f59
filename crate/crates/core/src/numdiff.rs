//! Fourth-order central finite differences used wherever an analytic
//! derivative callback is absent.

use nalgebra::{DMatrix, DVector};

/// Per-coordinate step `scale * (1 + |z_i|)`.
#[inline]
pub fn step_for(scale: f64, coord: f64) -> f64 {
    scale * (1.0 + coord.abs())
}

/// Sample offsets `(−2, −1, 1, 2)` in units of the step.
const OFFSETS: [f64; 4] = [-2.0, -1.0, 1.0, 2.0];

/// `(8(f₊₁ − f₋₁) − (f₊₂ − f₋₂)) / 12h`; differences first, so a constant field gives exactly 0.
#[inline]
fn combine<T>(f: [T; 4], h: f64) -> T
where
    T: std::ops::Sub<Output = T> + std::ops::Mul<f64, Output = T> + std::ops::Div<f64, Output = T>,
{
    let [m2, m1, p1, p2] = f;
    ((p1 - m1) * 8.0 - (p2 - m2)) / (12.0 * h)
}

pub fn gradient<F>(f: F, z: &[f64], scale: f64) -> DVector<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut work = z.to_vec();
    DVector::from_iterator(
        z.len(),
        (0..z.len()).map(|i| {
            let h = step_for(scale, z[i]);
            let samples = OFFSETS.map(|o| {
                work[i] = z[i] + o * h;
                f(&work)
            });
            work[i] = z[i];
            combine(samples, h)
        }),
    )
}

/// Partial derivatives of a matrix-valued field, one matrix per coordinate.
pub fn matrix_partials<F>(f: F, x: &[f64], scale: f64) -> Vec<DMatrix<f64>>
where
    F: Fn(&[f64]) -> DMatrix<f64>,
{
    let mut work = x.to_vec();
    (0..x.len())
        .map(|i| {
            let h = step_for(scale, x[i]);
            let samples = OFFSETS.map(|o| {
                work[i] = x[i] + o * h;
                f(&work)
            });
            work[i] = x[i];
            combine(samples, h)
        })
        .collect()
}

/// Jacobian of a vector-valued map; column `j` holds the derivative along `z_j`.
pub fn jacobian<F>(f: F, z: &[f64], scale: f64) -> DMatrix<f64>
where
    F: Fn(&[f64]) -> DVector<f64>,
{
    let mut work = z.to_vec();
    let mut columns = Vec::with_capacity(z.len());
    for j in 0..z.len() {
        let h = step_for(scale, z[j]);
        let samples = OFFSETS.map(|o| {
            work[j] = z[j] + o * h;
            f(&work)
        });
        work[j] = z[j];
        columns.push(combine(samples, h));
    }
    DMatrix::from_columns(&columns)
}
