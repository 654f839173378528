//! Central-difference derivatives for models without analytic derivatives.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative step for first derivatives of smooth functions.
pub const RELATIVE_STEP: f64 = 1e-5;

/// Relative step for differentiating a function that is itself a finite difference.
pub const NESTED_RELATIVE_STEP: f64 = 1e-4;

fn step(relative: f64, p: f64) -> f64 {
    relative * p.abs().max(1.0)
}

/// Jacobian of `f` at `point`, step `1e-5 * max(1, |point_i|)` per coordinate.
pub fn numerical_jacobian<F>(f: F, point: &DVector<f64>) -> Result<DMatrix<f64>>
where
    F: FnMut(&DVector<f64>) -> DVector<f64>,
{
    jacobian_with_step(f, point, RELATIVE_STEP)
}

pub fn jacobian_with_step<F>(mut f: F, point: &DVector<f64>, relative: f64) -> Result<DMatrix<f64>>
where
    F: FnMut(&DVector<f64>) -> DVector<f64>,
{
    let mut probe = point.clone();
    let mut columns = Vec::with_capacity(point.len());
    for i in 0..point.len() {
        let h = step(relative, point[i]);
        probe[i] = point[i] + h;
        let plus = f(&probe);
        probe[i] = point[i] - h;
        let minus = f(&probe);
        probe[i] = point[i];
        let col = (plus - minus) / (2.0 * h);
        if col.iter().any(|v| !v.is_finite()) {
            return Err(Error::Differentiation { coordinate: i });
        }
        columns.push(col);
    }
    if columns.is_empty() {
        let rows = f(point).len();
        return Ok(DMatrix::zeros(rows, 0));
    }
    Ok(DMatrix::from_columns(&columns))
}

/// Gradient of a scalar function.
pub fn numerical_gradient<F>(mut f: F, point: &DVector<f64>) -> Result<DVector<f64>>
where
    F: FnMut(&DVector<f64>) -> f64,
{
    let j = numerical_jacobian(|p| DVector::from_element(1, f(p)), point)?;
    Ok(j.row(0).transpose())
}

/// Hessian as the symmetrized Jacobian of a gradient function.
pub fn hessian_from_gradient<G>(
    mut grad: G,
    point: &DVector<f64>,
    relative: f64,
) -> Result<DMatrix<f64>>
where
    G: FnMut(&DVector<f64>) -> Result<DVector<f64>>,
{
    let mut failure = None;
    let h = jacobian_with_step(
        |p| match grad(p) {
            Ok(g) => g,
            Err(e) => {
                failure.get_or_insert(e);
                DVector::from_element(point.len(), f64::NAN)
            }
        },
        point,
        relative,
    );
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(symmetrize(h?))
}

pub fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}
