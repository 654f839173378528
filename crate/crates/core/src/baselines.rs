//! The two comparison planners: maximum-likelihood DDP and
//! probability-weighted DDP. Both are single-chain solves of a derived model.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::belief::{Belief, LatentSet};
use crate::error::{Error, Result};
use crate::model::{dynamics_jacobians, ConditionedModel, ProblemModel};
use crate::solver::{solve, SolveOutcome, SolverConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlannerKind {
    Poddp,
    Mlddp,
    Pwddp,
}

impl PlannerKind {
    pub const ALL: [PlannerKind; 3] = [PlannerKind::Poddp, PlannerKind::Mlddp, PlannerKind::Pwddp];

    pub fn name(self) -> &'static str {
        match self {
            PlannerKind::Poddp => "poddp",
            PlannerKind::Mlddp => "mlddp",
            PlannerKind::Pwddp => "pwddp",
        }
    }
}

impl fmt::Display for PlannerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PlannerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PlannerKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown planner \"{s}\" (valid: poddp, mlddp, pwddp)"
                ))
            })
    }
}

fn single_chain(config: &SolverConfig) -> SolverConfig {
    SolverConfig {
        segments: 1,
        boundaries: None,
        ..config.clone()
    }
}

/// Plans against the most likely latent value only (ties go to the lowest index).
pub fn mlddp_plan(
    model: &dyn ProblemModel,
    x0: &DVector<f64>,
    b: &Belief,
    config: &SolverConfig,
) -> Result<(usize, SolveOutcome)> {
    let z = b.argmax();
    let conditioned = ConditionedModel::new(model, z)?;
    let out = solve(
        &conditioned,
        x0,
        &Belief::new([1.0])?,
        &single_chain(config),
        None,
    )?;
    Ok((z, out))
}

/// One control sequence minimizing the belief-weighted cost over one state
/// copy per latent value; the weights stay fixed over the horizon.
pub fn pwddp_plan(
    model: &dyn ProblemModel,
    x0: &DVector<f64>,
    b: &Belief,
    config: &SolverConfig,
) -> Result<SolveOutcome> {
    let stacked = StackedModel::new(model, b.probs().clone())?;
    solve(
        &stacked,
        &stacked.stack(x0),
        &Belief::new([1.0])?,
        &single_chain(config),
        None,
    )
}

/// `(x_1, ..., x_m)`, each copy evolving under its own latent value, with
/// cost `sum_z w_z l(x_z, u, z)`.
pub struct StackedModel<'a> {
    inner: &'a dyn ProblemModel,
    weights: DVector<f64>,
    latents: LatentSet,
}

impl<'a> StackedModel<'a> {
    pub fn new(inner: &'a dyn ProblemModel, weights: DVector<f64>) -> Result<Self> {
        if weights.len() != inner.latents().len() {
            return Err(Error::InvalidArgument(
                "one weight per latent value is required".into(),
            ));
        }
        if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::InvalidArgument(
                "weights must be finite and non-negative".into(),
            ));
        }
        Ok(Self {
            inner,
            weights,
            latents: LatentSet::new(["stacked"])?,
        })
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    pub fn stack(&self, x: &DVector<f64>) -> DVector<f64> {
        let n = x.len();
        let mut s = DVector::zeros(n * self.weights.len());
        for z in 0..self.weights.len() {
            s.rows_mut(z * n, n).copy_from(x);
        }
        s
    }

    pub fn block(&self, s: &DVector<f64>, z: usize) -> DVector<f64> {
        let n = self.inner.state_dim();
        s.rows(z * n, n).into_owned()
    }
}

impl ProblemModel for StackedModel<'_> {
    fn state_dim(&self) -> usize {
        self.inner.state_dim() * self.weights.len()
    }
    fn control_dim(&self) -> usize {
        self.inner.control_dim()
    }
    fn obs_dim(&self) -> usize {
        1
    }
    fn latents(&self) -> &LatentSet {
        &self.latents
    }
    fn dt(&self) -> f64 {
        self.inner.dt()
    }

    fn dynamics_mean(&self, x: &DVector<f64>, u: &DVector<f64>, _z: usize) -> DVector<f64> {
        let n = self.inner.state_dim();
        let mut next = DVector::zeros(self.state_dim());
        for z in 0..self.weights.len() {
            next.rows_mut(z * n, n)
                .copy_from(&self.inner.dynamics_mean(&self.block(x, z), u, z));
        }
        next
    }

    fn dynamics_noise(&self, _z: usize) -> DMatrix<f64> {
        DMatrix::zeros(self.state_dim(), self.state_dim())
    }

    fn observation_mean(&self, _x: &DVector<f64>, _z: usize) -> DVector<f64> {
        DVector::zeros(1)
    }

    fn observation_noise(&self, _x: &DVector<f64>, _z: usize) -> DMatrix<f64> {
        DMatrix::zeros(1, 1)
    }

    fn running_cost(&self, x: &DVector<f64>, u: &DVector<f64>, _z: usize) -> f64 {
        (0..self.weights.len())
            .map(|z| self.weights[z] * self.inner.running_cost(&self.block(x, z), u, z))
            .sum()
    }

    fn final_cost(&self, x: &DVector<f64>, _z: usize) -> f64 {
        (0..self.weights.len())
            .map(|z| self.weights[z] * self.inner.final_cost(&self.block(x, z), z))
            .sum()
    }

    fn dynamics_jacobians(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        _z: usize,
    ) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
        let n = self.inner.state_dim();
        let d = self.state_dim();
        let mut fx = DMatrix::zeros(d, d);
        let mut fu = DMatrix::zeros(d, u.len());
        for z in 0..self.weights.len() {
            let (a, b) = dynamics_jacobians(self.inner, &self.block(x, z), u, z).ok()?;
            fx.view_mut((z * n, z * n), (n, n)).copy_from(&a);
            fu.view_mut((z * n, 0), (n, u.len())).copy_from(&b);
        }
        Some((fx, fu))
    }

    fn running_cost_gradient(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        _z: usize,
    ) -> Option<(DVector<f64>, DVector<f64>)> {
        let n = self.inner.state_dim();
        let mut gx = DVector::zeros(self.state_dim());
        let mut gu = DVector::zeros(u.len());
        for z in 0..self.weights.len() {
            let (lx, lu) = self.inner.running_cost_gradient(&self.block(x, z), u, z)?;
            gx.rows_mut(z * n, n).copy_from(&(lx * self.weights[z]));
            gu += lu * self.weights[z];
        }
        Some((gx, gu))
    }

    fn final_cost_gradient(&self, x: &DVector<f64>, _z: usize) -> Option<DVector<f64>> {
        let n = self.inner.state_dim();
        let mut g = DVector::zeros(self.state_dim());
        for z in 0..self.weights.len() {
            let lx = self.inner.final_cost_gradient(&self.block(x, z), z)?;
            g.rows_mut(z * n, n).copy_from(&(lx * self.weights[z]));
        }
        Some(g)
    }

    fn clamp_control(&self, u: &DVector<f64>) -> DVector<f64> {
        self.inner.clamp_control(u)
    }
}
