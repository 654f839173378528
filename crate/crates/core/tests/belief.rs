use nalgebra::{DMatrix, DVector};
use poddp::belief::{bayes_update, logits_from_belief, softmax, LatentSet, PROBABILITY_FLOOR};
use poddp::{Belief, ProblemModel};
use poddp_testkit::{Permuted, RingGoals, ToyGoals};
use proptest::prelude::*;

/// Scalar observation with mean -1 / +1 under latent 0 / 1 and unit variance;
/// the dynamics ignore the latent value.
struct UnitObservation {
    latents: LatentSet,
}

impl UnitObservation {
    fn new() -> Self {
        Self {
            latents: LatentSet::new(["minus", "plus"]).unwrap(),
        }
    }
}

impl ProblemModel for UnitObservation {
    fn state_dim(&self) -> usize {
        1
    }
    fn control_dim(&self) -> usize {
        1
    }
    fn obs_dim(&self) -> usize {
        1
    }
    fn latents(&self) -> &LatentSet {
        &self.latents
    }
    fn dt(&self) -> f64 {
        1.0
    }
    fn dynamics_mean(&self, x: &DVector<f64>, u: &DVector<f64>, _z: usize) -> DVector<f64> {
        x + u
    }
    fn dynamics_noise(&self, _z: usize) -> DMatrix<f64> {
        DMatrix::identity(1, 1)
    }
    fn observation_mean(&self, _x: &DVector<f64>, z: usize) -> DVector<f64> {
        DVector::from_element(1, if z == 0 { -1.0 } else { 1.0 })
    }
    fn observation_noise(&self, _x: &DVector<f64>, _z: usize) -> DMatrix<f64> {
        DMatrix::identity(1, 1)
    }
    fn running_cost(&self, _x: &DVector<f64>, _u: &DVector<f64>, _z: usize) -> f64 {
        0.0
    }
    fn final_cost(&self, _x: &DVector<f64>, _z: usize) -> f64 {
        0.0
    }
}

fn v(x: &[f64]) -> DVector<f64> {
    DVector::from_row_slice(x)
}

#[test]
fn hand_evaluated_posterior() {
    let model = UnitObservation::new();
    let b = Belief::new([0.5, 0.5]).unwrap();
    let post = bayes_update(&model, &v(&[-1.0]), &v(&[0.3]), &v(&[0.3]), &v(&[0.0]), &b).unwrap();
    let expected = 1.0 / (1.0 + (-2.0f64).exp());
    assert!((post.prob(0) - expected).abs() < 1e-12);
    assert!((post.prob(0) - 0.8808).abs() < 1e-4);
}

#[test]
fn uninformative_evidence_keeps_the_prior() {
    let model = UnitObservation::new();
    let b = Belief::new([0.3, 0.7]).unwrap();
    // Equidistant from both observation means.
    let post = bayes_update(&model, &v(&[0.0]), &v(&[1.0]), &v(&[1.0]), &v(&[0.0]), &b).unwrap();
    assert!((post.probs() - b.probs()).amax() < 1e-15);
}

#[test]
fn impossible_hypothesis_is_floored() {
    let model = UnitObservation::new();
    let b = Belief::new([0.5, 0.5]).unwrap();
    let post = bayes_update(&model, &v(&[15.0]), &v(&[0.0]), &v(&[0.0]), &v(&[0.0]), &b).unwrap();
    assert!((post.prob(0) - PROBABILITY_FLOOR).abs() < 1e-17);
    assert!((post.probs().sum() - 1.0).abs() < 1e-15);
}

#[test]
fn logit_examples() {
    let beta = logits_from_belief(&Belief::new([0.5, 0.5]).unwrap()).0;
    assert!((beta - v(&[0.5f64.ln(), 0.5f64.ln()])).amax() < 1e-15);
    let b = Belief::new([1.0, 0.0]).unwrap();
    let back = softmax(&logits_from_belief(&b).0);
    assert!((back - b.probs()).amax() < 1e-8);
    let third = Belief::new([2.0 / 3.0, 1.0 / 3.0]).unwrap();
    assert!((softmax(&logits_from_belief(&third).0) - third.probs()).amax() < 1e-15);
    assert!((softmax(&v(&[2f64.ln(), 0.0])) - v(&[2.0 / 3.0, 1.0 / 3.0])).amax() < 1e-15);
}

fn belief_strategy(len: usize) -> impl Strategy<Value = Belief> {
    proptest::collection::vec(0.01f64..1.0, len).prop_map(|w| {
        let total: f64 = w.iter().sum();
        Belief::new(w.iter().map(|p| p / total).collect::<Vec<_>>()).unwrap()
    })
}

proptest! {
    #[test]
    fn posterior_is_a_distribution(b in belief_strategy(3), o in -3.0f64..3.0, ox in -3.0f64..3.0, u in -1.0f64..1.0) {
        let model = RingGoals::new(3);
        let x = v(&[0.5, -0.2]);
        let u = v(&[u, -u]);
        let x_next = model.dynamics_mean(&x, &u, 0);
        let post = bayes_update(&model, &v(&[o, ox]), &x_next, &u, &x, &b).unwrap();
        prop_assert!((post.probs().sum() - 1.0).abs() < 1e-12);
        prop_assert!(post.probs().iter().all(|p| *p >= PROBABILITY_FLOOR * 0.999 && *p <= 1.0));
    }

    #[test]
    fn relabeling_permutes_the_posterior(b in belief_strategy(2), o in -3.0f64..3.0, py in 0.0f64..4.0) {
        let model = ToyGoals::with_drift(0.3, 0.2);
        let swapped = Permuted::new(model.clone(), vec![1, 0]);
        let x = v(&[0.1, py]);
        let u = v(&[0.2, 0.4]);
        let x_next = model.dynamics_mean(&x, &u, 1) + v(&[0.01, -0.02]);
        let obs = v(&[o]);
        let post = bayes_update(&model, &obs, &x_next, &u, &x, &b).unwrap();
        let b_swapped = Belief::new([b.prob(1), b.prob(0)]).unwrap();
        let post_swapped = bayes_update(&swapped, &obs, &x_next, &u, &x, &b_swapped).unwrap();
        prop_assert!((post.prob(0) - post_swapped.prob(1)).abs() < 1e-10);
        prop_assert!((post.prob(1) - post_swapped.prob(0)).abs() < 1e-10);
    }

    #[test]
    fn sequential_updates_commute(b in belief_strategy(2), o1 in -2.0f64..2.0, o2 in -2.0f64..2.0) {
        // Two independent observations of a static state, applied in either order.
        let model = UnitObservation::new();
        let x = v(&[0.0]);
        let u = v(&[0.0]);
        let ab = bayes_update(&model, &v(&[o2]), &x, &u, &x, &bayes_update(&model, &v(&[o1]), &x, &u, &x, &b).unwrap()).unwrap();
        let ba = bayes_update(&model, &v(&[o1]), &x, &u, &x, &bayes_update(&model, &v(&[o2]), &x, &u, &x, &b).unwrap()).unwrap();
        prop_assert!((ab.probs() - ba.probs()).amax() < 1e-12);
    }
}
