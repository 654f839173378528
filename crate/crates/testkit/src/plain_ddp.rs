//! Textbook single-chain iLQR on `x` alone, for models with one latent value.
//! Same regularization and line-search policy as the tree solver, but its
//! own rollout and recursion.

use nalgebra::{DMatrix, DVector};
use poddp::model::{derivative_bundle, final_cost_derivatives};
use poddp::{ProblemModel, SolverConfig};

pub struct PlainDdpResult {
    pub states: Vec<DVector<f64>>,
    pub controls: Vec<DVector<f64>>,
    pub k: Vec<DVector<f64>>,
    pub big_k: Vec<DMatrix<f64>>,
    pub cost: f64,
    pub costs: Vec<f64>,
    pub converged: bool,
}

fn rollout(
    model: &dyn ProblemModel,
    x0: &DVector<f64>,
    us: &[DVector<f64>],
) -> (Vec<DVector<f64>>, f64) {
    let mut xs = vec![x0.clone()];
    let mut cost = 0.0;
    for u in us {
        let x = xs.last().unwrap();
        cost += model.running_cost(x, u, 0);
        let next = model.dynamics_mean(x, u, 0);
        xs.push(next);
    }
    cost += model.final_cost(xs.last().unwrap(), 0);
    (xs, cost)
}

#[allow(clippy::type_complexity)]
fn backward(
    model: &dyn ProblemModel,
    xs: &[DVector<f64>],
    us: &[DVector<f64>],
    lambda: f64,
) -> Option<(Vec<DVector<f64>>, Vec<DMatrix<f64>>)> {
    let t = us.len();
    let fin = final_cost_derivatives(model, &xs[t], 0).ok()?;
    let mut vx = fin.gradient;
    let mut vxx = fin.hessian;
    let mut ks = vec![DVector::zeros(0); t];
    let mut bigks = vec![DMatrix::zeros(0, 0); t];
    for i in (0..t).rev() {
        let d = derivative_bundle(model, &xs[i], &us[i], 0).ok()?;
        let qx = &d.l_x + d.f_x.transpose() * &vx;
        let qu = &d.l_u + d.f_u.transpose() * &vx;
        let qxx = &d.l_xx + d.f_x.transpose() * &vxx * &d.f_x;
        let qux = d.l_xu.transpose() + d.f_u.transpose() * &vxx * &d.f_x;
        let quu = &d.l_uu + d.f_u.transpose() * &vxx * &d.f_u;
        let reg = &quu + DMatrix::identity(quu.nrows(), quu.ncols()) * lambda;
        let chol = reg.cholesky()?;
        let k = -chol.solve(&qu);
        let bigk = -chol.solve(&qux);
        vx = &qx + bigk.transpose() * &quu * &k + bigk.transpose() * &qu + qux.transpose() * &k;
        let v = &qxx
            + bigk.transpose() * &quu * &bigk
            + bigk.transpose() * &qux
            + qux.transpose() * &bigk;
        vxx = (&v + v.transpose()) * 0.5;
        ks[i] = k;
        bigks[i] = bigk;
    }
    Some((ks, bigks))
}

fn gradient_norm(ks: &[DVector<f64>], us: &[DVector<f64>]) -> f64 {
    let total: f64 = ks
        .iter()
        .zip(us)
        .map(|(k, u)| {
            k.iter()
                .zip(u.iter())
                .map(|(k, u)| k.abs() / (u.abs() + 1.0))
                .fold(0.0, f64::max)
        })
        .sum();
    total / ks.len() as f64
}

/// Runs iLQR from zero controls over `config.horizon` steps.
pub fn plain_ddp(
    model: &dyn ProblemModel,
    x0: &DVector<f64>,
    config: &SolverConfig,
) -> PlainDdpResult {
    let t = config.horizon;
    let mut us = vec![DVector::zeros(model.control_dim()); t];
    let (mut xs, mut cost) = rollout(model, x0, &us);
    let mut costs = vec![cost];
    let mut lambda = config.regularization_init;
    let mut converged = false;
    let mut last = None;

    'outer: for _ in 0..config.max_iterations {
        let (ks, bigks) = loop {
            match backward(model, &xs, &us, lambda) {
                Some(g) => break g,
                None => {
                    lambda *= config.regularization_increase;
                    if lambda > config.regularization_max {
                        break 'outer;
                    }
                }
            }
        };
        if gradient_norm(&ks, &us) < config.gradient_tolerance {
            converged = true;
            last = Some((ks, bigks));
            break;
        }
        let mut accepted = None;
        for &alpha in &config.alpha_schedule {
            let mut x = x0.clone();
            let mut new_us = Vec::with_capacity(t);
            let mut new_xs = vec![x.clone()];
            let mut c = 0.0;
            for i in 0..t {
                let u = &us[i] + &ks[i] * alpha + &bigks[i] * (&x - &xs[i]);
                c += model.running_cost(&x, &u, 0);
                x = model.dynamics_mean(&x, &u, 0);
                new_xs.push(x.clone());
                new_us.push(u);
            }
            c += model.final_cost(&x, 0);
            if c.is_finite() && c < cost {
                accepted = Some((new_xs, new_us, c));
                break;
            }
        }
        match accepted {
            Some((nx, nu, c)) => {
                let rel = (cost - c) / cost.abs().max(f64::MIN_POSITIVE);
                xs = nx;
                us = nu;
                cost = c;
                costs.push(c);
                lambda = (lambda / config.regularization_decrease).max(config.regularization_min);
                last = None;
                if rel < config.cost_tolerance {
                    converged = true;
                    break;
                }
            }
            None => {
                last = Some((ks, bigks));
                lambda *= config.regularization_increase;
                if lambda > config.regularization_max {
                    break;
                }
            }
        }
    }
    let (k, big_k) = match last {
        Some(g) => g,
        None => {
            let mut l = lambda.min(config.regularization_max);
            loop {
                if let Some(g) = backward(model, &xs, &us, l) {
                    break g;
                }
                l *= config.regularization_increase;
            }
        }
    };
    PlainDdpResult {
        states: xs,
        controls: us,
        k,
        big_k,
        cost,
        costs,
        converged,
    }
}
