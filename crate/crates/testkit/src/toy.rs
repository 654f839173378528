use nalgebra::{DMatrix, DVector};
use poddp::belief::LatentSet;
use poddp::ProblemModel;

/// Planar point mass `x' = x + u dt (+ drift_z)` with two candidate goals,
/// `(-goal_x, goal_y)` under latent 0 and `(goal_x, goal_y)` under latent 1.
/// The scalar observation has mean `-1` / `+1` and a variance that shrinks as
/// `py` grows; the drift (if any) makes the transition informative too.
#[derive(Clone, Debug)]
pub struct ToyGoals {
    pub goal_x: f64,
    pub goal_y: f64,
    pub sigma: f64,
    pub drift: f64,
    pub process_sigma: f64,
    pub control_weight: f64,
    pub goal_weight: f64,
    pub final_weight: f64,
    latents: LatentSet,
}

impl Default for ToyGoals {
    fn default() -> Self {
        Self {
            goal_x: 2.0,
            goal_y: 4.0,
            sigma: 1.5,
            drift: 0.0,
            process_sigma: 0.0,
            control_weight: 0.1,
            goal_weight: 0.05,
            final_weight: 10.0,
            latents: LatentSet::new(["left", "right"]).unwrap(),
        }
    }
}

impl ToyGoals {
    /// Default geometry with informative, noisy transitions.
    pub fn with_drift(drift: f64, process_sigma: f64) -> Self {
        Self {
            drift,
            process_sigma,
            ..Self::default()
        }
    }

    fn goal(&self, z: usize) -> (f64, f64) {
        (if z == 0 { -self.goal_x } else { self.goal_x }, self.goal_y)
    }

    fn sign(z: usize) -> f64 {
        if z == 0 {
            -1.0
        } else {
            1.0
        }
    }
}

impl ProblemModel for ToyGoals {
    fn state_dim(&self) -> usize {
        2
    }
    fn control_dim(&self) -> usize {
        2
    }
    fn obs_dim(&self) -> usize {
        1
    }
    fn latents(&self) -> &LatentSet {
        &self.latents
    }
    fn dt(&self) -> f64 {
        0.1
    }
    fn dynamics_mean(&self, x: &DVector<f64>, u: &DVector<f64>, z: usize) -> DVector<f64> {
        let mut next = x + u * self.dt();
        next[0] += Self::sign(z) * self.drift * self.dt();
        next
    }
    fn dynamics_noise(&self, _z: usize) -> DMatrix<f64> {
        DMatrix::identity(2, 2) * self.process_sigma.powi(2)
    }
    fn observation_mean(&self, _x: &DVector<f64>, z: usize) -> DVector<f64> {
        DVector::from_element(1, Self::sign(z))
    }
    fn observation_noise(&self, x: &DVector<f64>, _z: usize) -> DMatrix<f64> {
        let decay = 1.0 / (1.0 + (2.0 * (x[1] - 0.5 * self.goal_y)).exp());
        DMatrix::from_element(1, 1, self.sigma.powi(2) * decay + 1e-4)
    }
    fn running_cost(&self, x: &DVector<f64>, u: &DVector<f64>, z: usize) -> f64 {
        let (gx, gy) = self.goal(z);
        self.control_weight * u.norm_squared()
            + self.goal_weight * ((x[0] - gx).powi(2) + (x[1] - gy).powi(2))
    }
    fn final_cost(&self, x: &DVector<f64>, z: usize) -> f64 {
        let (gx, gy) = self.goal(z);
        self.final_weight * ((x[0] - gx).powi(2) + (x[1] - gy).powi(2))
    }
}

/// Relabels the latent values of `inner`: latent `i` of the wrapper is
/// latent `perm[i]` of the wrapped model.
pub struct Permuted<M> {
    pub inner: M,
    pub perm: Vec<usize>,
    latents: LatentSet,
}

impl<M: ProblemModel> Permuted<M> {
    pub fn new(inner: M, perm: Vec<usize>) -> Self {
        let labels: Vec<String> = perm
            .iter()
            .map(|&z| inner.latents().label(z).to_string())
            .collect();
        let latents = LatentSet::new(labels).unwrap();
        Self {
            inner,
            perm,
            latents,
        }
    }
}

impl<M: ProblemModel> ProblemModel for Permuted<M> {
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
    fn dynamics_mean(&self, x: &DVector<f64>, u: &DVector<f64>, z: usize) -> DVector<f64> {
        self.inner.dynamics_mean(x, u, self.perm[z])
    }
    fn dynamics_noise(&self, z: usize) -> DMatrix<f64> {
        self.inner.dynamics_noise(self.perm[z])
    }
    fn observation_mean(&self, x: &DVector<f64>, z: usize) -> DVector<f64> {
        self.inner.observation_mean(x, self.perm[z])
    }
    fn observation_noise(&self, x: &DVector<f64>, z: usize) -> DMatrix<f64> {
        self.inner.observation_noise(x, self.perm[z])
    }
    fn running_cost(&self, x: &DVector<f64>, u: &DVector<f64>, z: usize) -> f64 {
        self.inner.running_cost(x, u, self.perm[z])
    }
    fn final_cost(&self, x: &DVector<f64>, z: usize) -> f64 {
        self.inner.final_cost(x, self.perm[z])
    }
    fn dynamics_jacobians(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        z: usize,
    ) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
        self.inner.dynamics_jacobians(x, u, self.perm[z])
    }
    fn running_cost_gradient(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        z: usize,
    ) -> Option<(DVector<f64>, DVector<f64>)> {
        self.inner.running_cost_gradient(x, u, self.perm[z])
    }
    fn final_cost_gradient(&self, x: &DVector<f64>, z: usize) -> Option<DVector<f64>> {
        self.inner.final_cost_gradient(x, self.perm[z])
    }
    fn clamp_control(&self, u: &DVector<f64>) -> DVector<f64> {
        self.inner.clamp_control(u)
    }
}

/// Point mass with `count` candidate goals spaced evenly on a circle. The
/// two-dimensional observation points at the true goal's direction.
#[derive(Clone, Debug)]
pub struct RingGoals {
    pub radius: f64,
    pub sigma: f64,
    pub process_sigma: f64,
    latents: LatentSet,
}

impl RingGoals {
    pub fn new(count: usize) -> Self {
        let labels: Vec<String> = (0..count).map(|z| format!("goal{z}")).collect();
        Self {
            radius: 2.0,
            sigma: 0.8,
            process_sigma: 0.05,
            latents: LatentSet::new(labels).unwrap(),
        }
    }

    fn direction(&self, z: usize) -> (f64, f64) {
        let a = std::f64::consts::TAU * z as f64 / self.latents.len() as f64;
        (a.cos(), a.sin())
    }
}

impl ProblemModel for RingGoals {
    fn state_dim(&self) -> usize {
        2
    }
    fn control_dim(&self) -> usize {
        2
    }
    fn obs_dim(&self) -> usize {
        2
    }
    fn latents(&self) -> &LatentSet {
        &self.latents
    }
    fn dt(&self) -> f64 {
        0.1
    }
    fn dynamics_mean(&self, x: &DVector<f64>, u: &DVector<f64>, _z: usize) -> DVector<f64> {
        x + u * self.dt()
    }
    fn dynamics_noise(&self, _z: usize) -> DMatrix<f64> {
        DMatrix::identity(2, 2) * self.process_sigma.powi(2)
    }
    fn observation_mean(&self, _x: &DVector<f64>, z: usize) -> DVector<f64> {
        let (c, s) = self.direction(z);
        DVector::from_vec(vec![c, s])
    }
    fn observation_noise(&self, x: &DVector<f64>, _z: usize) -> DMatrix<f64> {
        // Sharper the further the mass has moved from the origin.
        let var = self.sigma.powi(2) / (1.0 + x.norm_squared());
        DMatrix::identity(2, 2) * var
    }
    fn running_cost(&self, x: &DVector<f64>, u: &DVector<f64>, z: usize) -> f64 {
        let (c, s) = self.direction(z);
        0.1 * u.norm_squared()
            + 0.05 * ((x[0] - self.radius * c).powi(2) + (x[1] - self.radius * s).powi(2))
    }
    fn final_cost(&self, x: &DVector<f64>, z: usize) -> f64 {
        let (c, s) = self.direction(z);
        10.0 * ((x[0] - self.radius * c).powi(2) + (x[1] - self.radius * s).powi(2))
    }
}
