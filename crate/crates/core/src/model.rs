//! The problem definition: latent-conditioned dynamics, observations and costs.

use nalgebra::{DMatrix, DVector};

use crate::belief::LatentSet;
use crate::diff::{self, NESTED_RELATIVE_STEP, RELATIVE_STEP};
use crate::error::{Error, Result};

/// A POMDP with fully observed continuous state `x` and a constant hidden latent `z`.
///
/// Dynamics are discrete-time. Transition and observation distributions are
/// Gaussian around `dynamics_mean` and `observation_mean`; an identically zero
/// covariance marks a deterministic channel. Models may override the
/// `*_jacobians` / `*_gradient` hooks with analytic derivatives; otherwise
/// central differences are used.
pub trait ProblemModel: Send + Sync {
    fn state_dim(&self) -> usize;
    fn control_dim(&self) -> usize;
    fn obs_dim(&self) -> usize;
    fn latents(&self) -> &LatentSet;
    /// Timestep in seconds.
    fn dt(&self) -> f64;

    fn dynamics_mean(&self, x: &DVector<f64>, u: &DVector<f64>, z: usize) -> DVector<f64>;
    /// State covariance of the transition under `z`.
    fn dynamics_noise(&self, z: usize) -> DMatrix<f64>;
    fn observation_mean(&self, x: &DVector<f64>, z: usize) -> DVector<f64>;
    fn observation_noise(&self, x: &DVector<f64>, z: usize) -> DMatrix<f64>;
    fn running_cost(&self, x: &DVector<f64>, u: &DVector<f64>, z: usize) -> f64;
    fn final_cost(&self, x: &DVector<f64>, z: usize) -> f64;

    /// `(f_x, f_u)` of `dynamics_mean`, if available in closed form.
    fn dynamics_jacobians(
        &self,
        _x: &DVector<f64>,
        _u: &DVector<f64>,
        _z: usize,
    ) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
        None
    }

    /// `(l_x, l_u)` of `running_cost`, if available in closed form.
    fn running_cost_gradient(
        &self,
        _x: &DVector<f64>,
        _u: &DVector<f64>,
        _z: usize,
    ) -> Option<(DVector<f64>, DVector<f64>)> {
        None
    }

    fn final_cost_gradient(&self, _x: &DVector<f64>, _z: usize) -> Option<DVector<f64>> {
        None
    }

    /// Hard actuator limits applied when a plan is executed.
    fn clamp_control(&self, u: &DVector<f64>) -> DVector<f64> {
        u.clone()
    }
}

/// All model derivatives needed by one Q-expansion at `(x, u, z)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DerivativeBundle {
    pub f_x: DMatrix<f64>,
    pub f_u: DMatrix<f64>,
    pub g_x: DMatrix<f64>,
    pub l_x: DVector<f64>,
    pub l_u: DVector<f64>,
    pub l_xx: DMatrix<f64>,
    pub l_xu: DMatrix<f64>,
    pub l_uu: DMatrix<f64>,
}

/// Value, gradient and Hessian of the final cost under one latent value.
#[derive(Clone, Debug, PartialEq)]
pub struct FinalCostDerivatives {
    pub value: f64,
    pub gradient: DVector<f64>,
    pub hessian: DMatrix<f64>,
}

fn join(x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
    let mut xu = DVector::zeros(x.len() + u.len());
    xu.rows_mut(0, x.len()).copy_from(x);
    xu.rows_mut(x.len(), u.len()).copy_from(u);
    xu
}

fn split(xu: &DVector<f64>, n: usize) -> (DVector<f64>, DVector<f64>) {
    (
        xu.rows(0, n).into_owned(),
        xu.rows(n, xu.len() - n).into_owned(),
    )
}

pub fn check_dims(
    model: &dyn ProblemModel,
    x: &DVector<f64>,
    u: &DVector<f64>,
    z: usize,
) -> Result<()> {
    if x.len() != model.state_dim() || u.len() != model.control_dim() || z >= model.latents().len()
    {
        return Err(Error::InvalidArgument(format!(
            "dimension mismatch: x {} (want {}), u {} (want {}), z {} (of {})",
            x.len(),
            model.state_dim(),
            u.len(),
            model.control_dim(),
            z,
            model.latents().len()
        )));
    }
    Ok(())
}

/// `(f_x, f_u)`: analytic when the model provides them, central differences otherwise.
pub fn dynamics_jacobians(
    model: &dyn ProblemModel,
    x: &DVector<f64>,
    u: &DVector<f64>,
    z: usize,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if let Some(j) = model.dynamics_jacobians(x, u, z) {
        return Ok(j);
    }
    let n = x.len();
    let j = diff::numerical_jacobian(
        |xu| {
            let (xx, uu) = split(xu, n);
            model.dynamics_mean(&xx, &uu, z)
        },
        &join(x, u),
    )?;
    Ok((
        j.columns(0, n).into_owned(),
        j.columns(n, u.len()).into_owned(),
    ))
}

fn running_gradient(
    model: &dyn ProblemModel,
    xu: &DVector<f64>,
    n: usize,
    z: usize,
) -> Result<(DVector<f64>, bool)> {
    let (x, u) = split(xu, n);
    if let Some((gx, gu)) = model.running_cost_gradient(&x, &u, z) {
        return Ok((join(&gx, &gu), true));
    }
    let g = diff::numerical_gradient(
        |p| {
            let (xx, uu) = split(p, n);
            model.running_cost(&xx, &uu, z)
        },
        xu,
    )?;
    Ok((g, false))
}

/// Assembles every derivative of the model at `(x, u, z)`. Cost Hessians are
/// differences of gradients, symmetrized.
pub fn derivative_bundle(
    model: &dyn ProblemModel,
    x: &DVector<f64>,
    u: &DVector<f64>,
    z: usize,
) -> Result<DerivativeBundle> {
    check_dims(model, x, u, z)?;
    let n = x.len();
    let p = u.len();
    let (f_x, f_u) = dynamics_jacobians(model, x, u, z)?;
    let g_x = diff::numerical_jacobian(|xx| model.observation_mean(xx, z), x)?;

    let xu = join(x, u);
    let (grad, analytic) = running_gradient(model, &xu, n, z)?;
    let step = if analytic {
        RELATIVE_STEP
    } else {
        NESTED_RELATIVE_STEP
    };
    let hess =
        diff::hessian_from_gradient(|q| running_gradient(model, q, n, z).map(|g| g.0), &xu, step)?;

    Ok(DerivativeBundle {
        f_x,
        f_u,
        g_x,
        l_x: grad.rows(0, n).into_owned(),
        l_u: grad.rows(n, p).into_owned(),
        l_xx: hess.view((0, 0), (n, n)).into_owned(),
        l_xu: hess.view((0, n), (n, p)).into_owned(),
        l_uu: hess.view((n, n), (p, p)).into_owned(),
    })
}

pub fn final_cost_derivatives(
    model: &dyn ProblemModel,
    x: &DVector<f64>,
    z: usize,
) -> Result<FinalCostDerivatives> {
    let analytic = model.final_cost_gradient(x, z).is_some();
    let gradient_at = |p: &DVector<f64>| -> Result<DVector<f64>> {
        match model.final_cost_gradient(p, z) {
            Some(g) => Ok(g),
            None => diff::numerical_gradient(|q| model.final_cost(q, z), p),
        }
    };
    let gradient = gradient_at(x)?;
    let step = if analytic {
        RELATIVE_STEP
    } else {
        NESTED_RELATIVE_STEP
    };
    let hessian = diff::hessian_from_gradient(gradient_at, x, step)?;
    Ok(FinalCostDerivatives {
        value: model.final_cost(x, z),
        gradient,
        hessian,
    })
}

/// Log density of a zero-mean Gaussian at `residual`. Dimensions with zero
/// variance are deterministic and contribute nothing; an all-zero covariance
/// gives 0.
pub fn gaussian_log_density(residual: &DVector<f64>, cov: &DMatrix<f64>) -> Result<f64> {
    const LN_2PI: f64 = 1.837_877_066_409_345_5;
    if cov.nrows() != residual.len() || cov.ncols() != residual.len() {
        return Err(Error::InvalidArgument(format!(
            "covariance is {}x{}, residual has {} entries",
            cov.nrows(),
            cov.ncols(),
            residual.len()
        )));
    }
    if is_diagonal(cov) {
        let mut ll = 0.0;
        for i in 0..residual.len() {
            let var = cov[(i, i)];
            if var < 0.0 {
                return Err(Error::InvalidArgument("negative variance".into()));
            }
            if var > 0.0 {
                ll -= 0.5 * (residual[i] * residual[i] / var + LN_2PI + var.ln());
            }
        }
        return Ok(ll);
    }
    let chol = cov
        .clone()
        .cholesky()
        .ok_or_else(|| Error::InvalidArgument("covariance is not positive definite".into()))?;
    let solved = chol.solve(residual);
    let log_det = 2.0 * chol.l().diagonal().map(f64::ln).sum();
    Ok(-0.5 * (residual.dot(&solved) + residual.len() as f64 * LN_2PI + log_det))
}

pub(crate) fn is_diagonal(m: &DMatrix<f64>) -> bool {
    (0..m.nrows()).all(|i| (0..m.ncols()).all(|j| i == j || m[(i, j)] == 0.0))
}

/// A view of a model with the latent fixed to one value (`|Z| = 1`).
pub struct ConditionedModel<'a> {
    inner: &'a dyn ProblemModel,
    latent: usize,
    latents: LatentSet,
}

impl<'a> ConditionedModel<'a> {
    pub fn new(inner: &'a dyn ProblemModel, latent: usize) -> Result<Self> {
        if latent >= inner.latents().len() {
            return Err(Error::InvalidArgument(format!(
                "latent index {latent} out of range"
            )));
        }
        let latents = LatentSet::new([inner.latents().label(latent).to_string()])?;
        Ok(Self {
            inner,
            latent,
            latents,
        })
    }

    pub fn latent(&self) -> usize {
        self.latent
    }
}

impl ProblemModel for ConditionedModel<'_> {
    fn state_dim(&self) -> usize {
        self.inner.state_dim()
    }
    fn control_dim(&self) -> usize {
        self.inner.control_dim()
    }
    fn obs_dim(&self) -> usize {
        self.inner.obs_dim()
    }
    fn latents(&self) -> &LatentSet {
        &self.latents
    }
    fn dt(&self) -> f64 {
        self.inner.dt()
    }
    fn dynamics_mean(&self, x: &DVector<f64>, u: &DVector<f64>, _z: usize) -> DVector<f64> {
        self.inner.dynamics_mean(x, u, self.latent)
    }
    fn dynamics_noise(&self, _z: usize) -> DMatrix<f64> {
        self.inner.dynamics_noise(self.latent)
    }
    fn observation_mean(&self, x: &DVector<f64>, _z: usize) -> DVector<f64> {
        self.inner.observation_mean(x, self.latent)
    }
    fn observation_noise(&self, x: &DVector<f64>, _z: usize) -> DMatrix<f64> {
        self.inner.observation_noise(x, self.latent)
    }
    fn running_cost(&self, x: &DVector<f64>, u: &DVector<f64>, _z: usize) -> f64 {
        self.inner.running_cost(x, u, self.latent)
    }
    fn final_cost(&self, x: &DVector<f64>, _z: usize) -> f64 {
        self.inner.final_cost(x, self.latent)
    }
    fn dynamics_jacobians(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        _z: usize,
    ) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
        self.inner.dynamics_jacobians(x, u, self.latent)
    }
    fn running_cost_gradient(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        _z: usize,
    ) -> Option<(DVector<f64>, DVector<f64>)> {
        self.inner.running_cost_gradient(x, u, self.latent)
    }
    fn final_cost_gradient(&self, x: &DVector<f64>, _z: usize) -> Option<DVector<f64>> {
        self.inner.final_cost_gradient(x, self.latent)
    }
    fn clamp_control(&self, u: &DVector<f64>) -> DVector<f64> {
        self.inner.clamp_control(u)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_density_matches_closed_form() {
        let r = DVector::from_row_slice(&[1.0]);
        let cov = DMatrix::from_element(1, 1, 4.0);
        let expected = -0.5 * (0.25 + (2.0 * std::f64::consts::PI * 4.0).ln());
        assert!((gaussian_log_density(&r, &cov).unwrap() - expected).abs() < 1e-14);
    }

    #[test]
    fn full_and_diagonal_paths_agree() {
        let r = DVector::from_row_slice(&[0.3, -1.1]);
        let diag = DMatrix::from_diagonal(&DVector::from_row_slice(&[0.5, 2.0]));
        let mut nearly = diag.clone();
        nearly[(0, 1)] = 1e-300;
        nearly[(1, 0)] = 1e-300;
        let a = gaussian_log_density(&r, &diag).unwrap();
        let b = gaussian_log_density(&r, &nearly).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn zero_covariance_is_uninformative() {
        let r = DVector::from_row_slice(&[5.0, 1.0]);
        assert_eq!(
            gaussian_log_density(&r, &DMatrix::zeros(2, 2)).unwrap(),
            0.0
        );
    }
}
