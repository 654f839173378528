//! Beliefs over the discrete latent set.
//!
//! A belief is a probability vector over the latent values. For
//! differentiation the planner works with unconstrained logits `beta`, where
//! `b = softmax(beta)`. Posterior updates are computed in log space and every
//! probability is floored at [`PROBABILITY_FLOOR`] so that logits stay finite.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{gaussian_log_density, ProblemModel};

/// Lower bound applied to every belief entry before taking logs and after each update.
pub const PROBABILITY_FLOOR: f64 = 1e-9;

/// Posterior mass below this is treated as an impossible observation.
const MIN_EVIDENCE_MASS: f64 = 1e-300;

/// Ordered, distinct identifiers of the latent values. Indices are stable.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatentSet {
    labels: Vec<String>,
}

impl LatentSet {
    pub fn new<S: Into<String>>(labels: impl IntoIterator<Item = S>) -> Result<Self> {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        if labels.is_empty() {
            return Err(Error::InvalidArgument(
                "latent set must not be empty".into(),
            ));
        }
        for (i, a) in labels.iter().enumerate() {
            if labels[..i].contains(a) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate latent label {a:?}"
                )));
            }
        }
        Ok(Self { labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label(&self, index: usize) -> &str {
        &self.labels[index]
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }
}

/// A probability vector over the latent set.
#[derive(Clone, Debug, PartialEq)]
pub struct Belief {
    probs: DVector<f64>,
}

impl Belief {
    /// Builds a belief from non-negative weights that sum to one (within 1e-9).
    /// The stored vector is renormalized exactly.
    pub fn new(probs: impl Into<Vec<f64>>) -> Result<Self> {
        let probs: Vec<f64> = probs.into();
        if probs.is_empty() {
            return Err(Error::InvalidArgument(
                "belief must have at least one entry".into(),
            ));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::InvalidArgument(format!(
                "belief entries must be finite and non-negative: {probs:?}"
            )));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "belief sums to {total}, not 1"
            )));
        }
        let mut probs = DVector::from_vec(probs);
        probs /= total;
        Ok(Self { probs })
    }

    pub fn uniform(len: usize) -> Self {
        Self {
            probs: DVector::from_element(len, 1.0 / len as f64),
        }
    }

    pub(crate) fn from_normalized(probs: DVector<f64>) -> Self {
        Self { probs }
    }

    pub fn probs(&self) -> &DVector<f64> {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn prob(&self, z: usize) -> f64 {
        self.probs[z]
    }

    /// Most likely latent index; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, p) in self.probs.iter().enumerate() {
            if *p > self.probs[best] {
                best = i;
            }
        }
        best
    }

    /// Floors every entry at [`PROBABILITY_FLOOR`] and renormalizes.
    pub fn floored(&self) -> Belief {
        Belief {
            probs: floor_and_normalize(self.probs.clone()),
        }
    }
}

/// Unconstrained belief parameters; the belief is their softmax.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeliefLogits(pub DVector<f64>);

impl BeliefLogits {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// The planner's point in belief space: a fully observed continuous state
/// plus logits over the latent set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeliefState {
    pub x: DVector<f64>,
    pub beta: BeliefLogits,
}

impl BeliefState {
    pub fn new(x: DVector<f64>, belief: &Belief) -> Self {
        Self {
            x,
            beta: logits_from_belief(belief),
        }
    }

    pub fn belief(&self) -> Belief {
        Belief {
            probs: softmax(&self.beta.0),
        }
    }

    /// `(x, beta)` stacked, state first.
    pub fn to_vector(&self) -> DVector<f64> {
        let n = self.x.len();
        let mut s = DVector::zeros(n + self.beta.len());
        s.rows_mut(0, n).copy_from(&self.x);
        s.rows_mut(n, self.beta.len()).copy_from(&self.beta.0);
        s
    }

    pub fn from_vector(s: &DVector<f64>, state_dim: usize) -> Self {
        Self {
            x: s.rows(0, state_dim).into_owned(),
            beta: BeliefLogits(s.rows(state_dim, s.len() - state_dim).into_owned()),
        }
    }

    pub fn dim(&self) -> usize {
        self.x.len() + self.beta.len()
    }

    pub fn is_finite(&self) -> bool {
        self.x
            .iter()
            .chain(self.beta.0.iter())
            .all(|v| v.is_finite())
    }
}

/// Softmax of the logits.
pub fn belief_from_logits(beta: &BeliefLogits) -> Result<Belief> {
    if beta.is_empty() || beta.0.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "logits must be finite: {:?}",
            beta.0.as_slice()
        )));
    }
    Ok(Belief {
        probs: softmax(&beta.0),
    })
}

/// Elementwise log of the floored, renormalized belief.
pub fn logits_from_belief(b: &Belief) -> BeliefLogits {
    BeliefLogits(floor_and_normalize(b.probs.clone()).map(f64::ln))
}

/// Max-subtracted softmax. Callers guarantee finite input.
pub fn softmax(beta: &DVector<f64>) -> DVector<f64> {
    let max = beta.max();
    let mut e = beta.map(|v| (v - max).exp());
    let total = e.sum();
    e /= total;
    e
}

/// `J[(z, j)] = d b_z / d beta_j = b_z (delta_zj - b_j)`.
pub fn softmax_jacobian(b: &DVector<f64>) -> DMatrix<f64> {
    let m = b.len();
    DMatrix::from_fn(m, m, |z, j| b[z] * (if z == j { 1.0 } else { 0.0 } - b[j]))
}

/// Second derivative of `b_z` with respect to the logits:
/// `b_z [(e_z - b)(e_z - b)^T - (diag(b) - b b^T)]`.
pub fn softmax_hessian(b: &DVector<f64>, z: usize) -> DMatrix<f64> {
    let mut d = -b.clone();
    d[z] += 1.0;
    let cov = DMatrix::from_diagonal(b) - b * b.transpose();
    (&d * d.transpose() - cov) * b[z]
}

fn floor_and_normalize(mut p: DVector<f64>) -> DVector<f64> {
    p.apply(|v| *v = v.max(PROBABILITY_FLOOR));
    let total = p.sum();
    p /= total;
    p
}

/// Per-latent log-likelihood of the evidence `(o, x_next)` given `(x, u)`:
/// `log p(o | x_next, z) + log p(x_next | x, u, z)`. Terms whose covariance is
/// identically zero (deterministic channels) carry no information and are skipped.
pub fn evidence_log_likelihoods(
    model: &dyn ProblemModel,
    o: &DVector<f64>,
    x_next: &DVector<f64>,
    u: &DVector<f64>,
    x: &DVector<f64>,
) -> Result<Vec<f64>> {
    (0..model.latents().len())
        .map(|z| {
            let obs_res = o - model.observation_mean(x_next, z);
            let mut ll = gaussian_log_density(&obs_res, &model.observation_noise(x_next, z))?;
            let dyn_res = x_next - model.dynamics_mean(x, u, z);
            ll += gaussian_log_density(&dyn_res, &model.dynamics_noise(z))?;
            Ok(ll)
        })
        .collect()
}

/// Recursive Bayesian update of the latent belief from one transition and observation.
pub fn bayes_update(
    model: &dyn ProblemModel,
    o: &DVector<f64>,
    x_next: &DVector<f64>,
    u: &DVector<f64>,
    x: &DVector<f64>,
    b: &Belief,
) -> Result<Belief> {
    if b.len() != model.latents().len() {
        return Err(Error::InvalidArgument(format!(
            "belief has {} entries, model has {} latent values",
            b.len(),
            model.latents().len()
        )));
    }
    let ll = evidence_log_likelihoods(model, o, x_next, u, x)?;
    posterior_from_log_likelihoods(b, &ll)
}

/// Combines a prior with per-latent log-likelihoods.
pub fn posterior_from_log_likelihoods(prior: &Belief, log_likelihoods: &[f64]) -> Result<Belief> {
    let prior = floor_and_normalize(prior.probs.clone());
    let log_post = DVector::from_iterator(
        prior.len(),
        prior.iter().zip(log_likelihoods).map(|(p, ll)| p.ln() + ll),
    );
    let max = log_post.max();
    if !max.is_finite() {
        if max == f64::NEG_INFINITY {
            return Err(Error::DegenerateEvidence { mass: 0.0 });
        }
        return Err(Error::InvalidArgument(
            "non-finite evidence likelihood".into(),
        ));
    }
    let shifted = log_post.map(|v| (v - max).exp());
    let log_mass = max + shifted.sum().ln();
    if log_mass < MIN_EVIDENCE_MASS.ln() {
        return Err(Error::DegenerateEvidence {
            mass: log_mass.exp(),
        });
    }
    let total = shifted.sum();
    Ok(Belief {
        probs: floor_and_normalize(shifted / total),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn logits(v: &[f64]) -> BeliefLogits {
        BeliefLogits(DVector::from_row_slice(v))
    }

    #[test]
    fn softmax_examples() {
        let b = belief_from_logits(&logits(&[0.0, 0.0])).unwrap();
        assert!((b.prob(0) - 0.5).abs() < 1e-15);
        let b = belief_from_logits(&logits(&[2f64.ln(), 0.0])).unwrap();
        assert!((b.prob(0) - 2.0 / 3.0).abs() < 1e-15);
        assert!((b.prob(1) - 1.0 / 3.0).abs() < 1e-15);
        let b = belief_from_logits(&logits(&[1234.5, 1234.5])).unwrap();
        assert!((b.prob(0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn softmax_rejects_non_finite() {
        assert!(matches!(
            belief_from_logits(&logits(&[f64::NAN, 0.0])),
            Err(Error::InvalidArgument(_))
        ));
        assert!(belief_from_logits(&logits(&[f64::INFINITY, 0.0])).is_err());
    }

    #[test]
    fn logits_examples() {
        let l = logits_from_belief(&Belief::new(vec![0.5, 0.5]).unwrap());
        assert!((l.0[0] - 0.5f64.ln()).abs() < 1e-15);
        assert!((l.0[1] - 0.5f64.ln()).abs() < 1e-15);

        let certain = Belief::new(vec![1.0, 0.0]).unwrap();
        let l = logits_from_belief(&certain);
        let norm = 1.0 + PROBABILITY_FLOOR;
        assert!((l.0[0] - (1.0 / norm).ln()).abs() < 1e-12);
        assert!((l.0[1] - (PROBABILITY_FLOOR / norm).ln()).abs() < 1e-12);
        let back = belief_from_logits(&l).unwrap();
        assert!((back.probs() - certain.probs()).amax() < 1e-8);

        let b = Belief::new(vec![2.0 / 3.0, 1.0 / 3.0]).unwrap();
        let back = belief_from_logits(&logits_from_belief(&b)).unwrap();
        assert!((back.probs() - b.probs()).amax() < 1e-12);
    }

    #[test]
    fn latent_set_rejects_duplicates() {
        assert!(LatentSet::new(["a", "b", "a"]).is_err());
        assert!(LatentSet::new(Vec::<String>::new()).is_err());
        let set = LatentSet::new(["Left", "Right"]).unwrap();
        assert_eq!(set.index_of("Right"), Some(1));
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(Belief::new(vec![0.5, 0.5]).unwrap().argmax(), 0);
        assert_eq!(Belief::new(vec![0.51, 0.49]).unwrap().argmax(), 0);
        assert_eq!(Belief::new(vec![0.49, 0.51]).unwrap().argmax(), 1);
    }

    #[test]
    fn posterior_handles_excluded_hypothesis() {
        let prior = Belief::new(vec![0.3, 0.7]).unwrap();
        let post = posterior_from_log_likelihoods(&prior, &[-2000.0, -1.0]).unwrap();
        assert!(post.prob(0) <= PROBABILITY_FLOOR);
        assert!(post.prob(0) > 0.0);
        assert!((post.probs().sum() - 1.0).abs() < 1e-12);
        assert!(matches!(
            posterior_from_log_likelihoods(&prior, &[-800.0, -800.0]),
            Err(Error::DegenerateEvidence { .. })
        ));
    }

    #[test]
    fn softmax_jacobian_matches_central_differences() {
        let beta = DVector::from_row_slice(&[0.3, -1.2, 2.0]);
        let b = softmax(&beta);
        let j = softmax_jacobian(&b);
        let h = 1e-6;
        for k in 0..3 {
            let mut p = beta.clone();
            let mut m = beta.clone();
            p[k] += h;
            m[k] -= h;
            let fd = (softmax(&p) - softmax(&m)) / (2.0 * h);
            for z in 0..3 {
                let rel = (j[(z, k)] - fd[z]).abs() / fd[z].abs().max(1e-12);
                assert!(rel < 1e-5, "J[{z},{k}] = {} vs fd {}", j[(z, k)], fd[z]);
            }
        }
        for z in 0..3 {
            let hz = softmax_hessian(&b, z);
            for k in 0..3 {
                let mut p = beta.clone();
                let mut m = beta.clone();
                p[k] += h;
                m[k] -= h;
                let fd =
                    (softmax_jacobian(&softmax(&p)) - softmax_jacobian(&softmax(&m))) / (2.0 * h);
                for j2 in 0..3 {
                    assert!((hz[(j2, k)] - fd[(z, j2)]).abs() < 1e-7);
                }
            }
        }
    }

    proptest! {
        #[test]
        fn softmax_is_shift_invariant(
            v in proptest::collection::vec(-30.0f64..30.0, 1..5),
            c in -100.0f64..100.0,
        ) {
            let a = belief_from_logits(&logits(&v)).unwrap();
            let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
            let b = belief_from_logits(&logits(&shifted)).unwrap();
            prop_assert!((a.probs() - b.probs()).amax() < 1e-12);
            prop_assert!((a.probs().sum() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn logits_round_trip(raw in proptest::collection::vec(0.01f64..1.0, 1..5)) {
            let total: f64 = raw.iter().sum();
            let b = Belief::new(raw.iter().map(|p| p / total).collect::<Vec<_>>()).unwrap();
            let back = belief_from_logits(&logits_from_belief(&b)).unwrap();
            prop_assert!((back.probs() - b.probs()).amax() < 1e-12);
        }
    }
}
