use nalgebra::{DMatrix, DVector};
use poddp::belief::LatentSet;
use poddp::ProblemModel;

/// `x' = A x + B u`, stage cost `1/2 x'Qx + 1/2 u'Ru`, final cost `1/2 x'Qf x`.
#[derive(Clone, Debug)]
pub struct LinearQuadratic {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub qf: DMatrix<f64>,
    latents: LatentSet,
}

impl LinearQuadratic {
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        q: DMatrix<f64>,
        r: DMatrix<f64>,
        qf: DMatrix<f64>,
    ) -> Self {
        Self {
            a,
            b,
            q,
            r,
            qf,
            latents: LatentSet::new(["only"]).unwrap(),
        }
    }

    /// Double integrator in the plane: state (px, py, vx, vy), control (ax, ay).
    pub fn double_integrator(dt: f64) -> Self {
        let mut a = DMatrix::identity(4, 4);
        a[(0, 2)] = dt;
        a[(1, 3)] = dt;
        let mut b = DMatrix::zeros(4, 2);
        b[(0, 0)] = 0.5 * dt * dt;
        b[(1, 1)] = 0.5 * dt * dt;
        b[(2, 0)] = dt;
        b[(3, 1)] = dt;
        let q = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0, 0.1, 0.1]));
        let r = DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 0.3]));
        let qf = DMatrix::identity(4, 4) * 20.0;
        Self::new(a, b, q, r, qf)
    }
}

impl ProblemModel for LinearQuadratic {
    fn state_dim(&self) -> usize {
        self.a.nrows()
    }
    fn control_dim(&self) -> usize {
        self.b.ncols()
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
    fn dynamics_mean(&self, x: &DVector<f64>, u: &DVector<f64>, _z: usize) -> DVector<f64> {
        &self.a * x + &self.b * u
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
        0.5 * x.dot(&(&self.q * x)) + 0.5 * u.dot(&(&self.r * u))
    }
    fn final_cost(&self, x: &DVector<f64>, _z: usize) -> f64 {
        0.5 * x.dot(&(&self.qf * x))
    }
}

pub struct RiccatiSolution {
    /// Cost-to-go matrices `P_0 ..= P_T`.
    pub p: Vec<DMatrix<f64>>,
    /// Feedback `u_t = -L_t x_t`.
    pub l: Vec<DMatrix<f64>>,
    pub cost: f64,
    pub states: Vec<DVector<f64>>,
    pub controls: Vec<DVector<f64>>,
}

/// Finite-horizon discrete Riccati recursion and the optimal rollout from `x0`.
pub fn riccati(lq: &LinearQuadratic, x0: &DVector<f64>, horizon: usize) -> RiccatiSolution {
    let (a, b) = (&lq.a, &lq.b);
    let mut p = vec![DMatrix::zeros(a.nrows(), a.nrows()); horizon + 1];
    let mut l = vec![DMatrix::zeros(b.ncols(), a.nrows()); horizon];
    p[horizon] = lq.qf.clone();
    for t in (0..horizon).rev() {
        let next = &p[t + 1];
        let gram = &lq.r + b.transpose() * next * b;
        let gain = gram
            .lu()
            .solve(&(b.transpose() * next * a))
            .expect("R + B'PB is invertible");
        let pt = &lq.q + a.transpose() * next * a - a.transpose() * next * b * &gain;
        p[t] = (&pt + pt.transpose()) * 0.5;
        l[t] = gain;
    }
    let mut states = vec![x0.clone()];
    let mut controls = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let u = -(&l[t] * &states[t]);
        states.push(a * &states[t] + b * &u);
        controls.push(u);
    }
    let cost = 0.5 * x0.dot(&(&p[0] * x0));
    RiccatiSolution {
        p,
        l,
        cost,
        states,
        controls,
    }
}
