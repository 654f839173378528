//! Benchmark problems: goal uncertainty (T-maze), dynamics-mode uncertainty
//! (rough terrain) and intent uncertainty (lane change).

pub mod bicycle;
pub mod idm;
pub mod lane_change;
pub mod smooth;
pub mod terrain;
pub mod tmaze;

use nalgebra::DVector;

use crate::belief::Belief;
use crate::model::ProblemModel;

pub use lane_change::{LaneChange, LaneChangeConfig};
pub use terrain::{Terrain, TerrainConfig};
pub use tmaze::{TMaze, TMazeConfig};

/// A problem model with a canonical starting point.
pub trait Scenario: ProblemModel {
    fn initial_state(&self) -> DVector<f64>;
    fn default_prior(&self) -> Belief;
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::{numerical_gradient, numerical_jacobian};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Points in the box each scenario is meant to operate in.
    fn probe(rng: &mut ChaCha8Rng, dim: usize) -> (DVector<f64>, DVector<f64>) {
        let mut x = DVector::zeros(dim);
        x[0] = rng.random_range(-8.0..8.0);
        x[1] = rng.random_range(-2.0..30.0);
        x[2] = rng.random_range(-1.0..2.5);
        x[3] = rng.random_range(0.5..20.0);
        if dim == 6 {
            x[4] = rng.random_range(-20.0..20.0);
            x[5] = rng.random_range(0.5..20.0);
        }
        let u = DVector::from_vec(vec![
            rng.random_range(-0.5..0.5),
            rng.random_range(-5.0..5.0),
        ]);
        (x, u)
    }

    fn models() -> Vec<Box<dyn ProblemModel>> {
        vec![
            Box::new(TMaze::new(TMazeConfig::default()).unwrap()),
            Box::new(Terrain::new(TerrainConfig::default()).unwrap()),
            Box::new(LaneChange::new(LaneChangeConfig::default()).unwrap()),
        ]
    }

    #[test]
    fn analytic_derivatives_match_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for model in models() {
            let n = model.state_dim();
            for _ in 0..200 {
                let (x, u) = probe(&mut rng, n);
                for z in 0..2 {
                    let (fx, fu) = model.dynamics_jacobians(&x, &u, z).unwrap();
                    let nfx = numerical_jacobian(|p| model.dynamics_mean(p, &u, z), &x).unwrap();
                    let nfu = numerical_jacobian(|p| model.dynamics_mean(&x, p, z), &u).unwrap();
                    // Skip points sitting on the speed clamp.
                    let raw_ok = (fx.clone() - &nfx).amax() < 1e-5 * (1.0 + nfx.amax());
                    let near_clamp = x[3] + u[1] * model.dt() < 0.05 || (n == 6 && x[5] < 0.5);
                    assert!(raw_ok || near_clamp, "f_x mismatch at {x} {u}\n{fx}\n{nfx}");
                    assert!((fu - nfu).amax() < 1e-5 || near_clamp);

                    let (lx, lu) = model.running_cost_gradient(&x, &u, z).unwrap();
                    let nlx = numerical_gradient(|p| model.running_cost(p, &u, z), &x).unwrap();
                    let nlu = numerical_gradient(|p| model.running_cost(&x, p, z), &u).unwrap();
                    assert!((lx - &nlx).amax() < 1e-5 * (1.0 + nlx.amax()));
                    assert!((lu - &nlu).amax() < 1e-5 * (1.0 + nlu.amax()));
                    let g = model.final_cost_gradient(&x, z).unwrap();
                    let ng = numerical_gradient(|p| model.final_cost(p, z), &x).unwrap();
                    assert!((g - &ng).amax() < 1e-5 * (1.0 + ng.amax()));
                }
            }
        }
    }

    #[test]
    fn finite_on_operating_box() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for model in models() {
            for _ in 0..1000 {
                let (x, u) = probe(&mut rng, model.state_dim());
                for z in 0..2 {
                    assert!(model.dynamics_mean(&x, &u, z).iter().all(|v| v.is_finite()));
                    assert!(model.running_cost(&x, &u, z).is_finite());
                    assert!(model.final_cost(&x, z).is_finite());
                    assert!(model.observation_noise(&x, z).iter().all(|v| v.is_finite()));
                    let b = crate::model::derivative_bundle(model.as_ref(), &x, &u, z).unwrap();
                    assert!(b.l_xx.iter().chain(b.l_uu.iter()).all(|v| v.is_finite()));
                }
            }
        }
    }
}
