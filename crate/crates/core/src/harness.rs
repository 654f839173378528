//! Closed-loop execution with replanning at every segment boundary.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{mlddp_plan, pwddp_plan, PlannerKind};
use crate::belief::{bayes_update, logits_from_belief, Belief};
use crate::error::{Error, Result};
use crate::model::ProblemModel;
use crate::solver::{solve, SolveOutcome, SolverConfig};
use crate::tree::StepGain;

const GROUND_TRUTH_STREAM: u64 = 0;
const PROCESS_STREAM: u64 = 1;
const OBSERVATION_STREAM: u64 = 2;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Draws the episode's latent value from `prior` on the ground-truth stream.
pub fn sample_latent(prior: &Belief, seed: u64) -> usize {
    let r: f64 = stream(seed, GROUND_TRUTH_STREAM).random();
    let mut acc = 0.0;
    for (z, p) in prior.probs().iter().enumerate() {
        acc += p;
        if r < acc {
            return z;
        }
    }
    prior.len() - 1
}

/// Zero-mean Gaussian draw; zero-variance dimensions stay exactly zero.
fn gaussian_noise(cov: &DMatrix<f64>, rng: &mut ChaCha8Rng) -> Result<DVector<f64>> {
    let n = cov.nrows();
    let diagonal = (0..n).all(|i| (0..n).all(|j| i == j || cov[(i, j)] == 0.0));
    if diagonal {
        return Ok(DVector::from_fn(n, |i, _| {
            let e: f64 = rng.sample(StandardNormal);
            e * cov[(i, i)].max(0.0).sqrt()
        }));
    }
    let chol = cov.clone().cholesky().ok_or_else(|| {
        Error::InvalidArgument("noise covariance is not positive definite".into())
    })?;
    let e = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    Ok(chol.l() * e)
}

/// The part of a fresh plan that gets executed: the root segment's nominal
/// controls and gains, plus how to lift the real state into the planner's
/// coordinates.
pub struct SegmentPolicy {
    planner: PlannerKind,
    controls: Vec<DVector<f64>>,
    nominal: Vec<DVector<f64>>,
    gains: Vec<StepGain>,
    /// Belief logits (PODDP) or the single zero logit (baselines).
    beta: DVector<f64>,
    copies: usize,
    pub converged: bool,
    /// Tree cost after each accepted iteration of the plan.
    pub cost_log: Vec<f64>,
}

impl SegmentPolicy {
    fn from_outcome(
        planner: PlannerKind,
        out: &SolveOutcome,
        beta: DVector<f64>,
        copies: usize,
    ) -> Result<Self> {
        let root = out
            .tree
            .root()
            .ok_or_else(|| Error::StructuralCorruption("plan has no root".into()))?;
        let gains = out
            .gains
            .gains
            .get(&crate::tree::HistoryPath::root())
            .cloned()
            .ok_or_else(|| Error::StructuralCorruption("plan has no root gains".into()))?;
        Ok(Self {
            planner,
            controls: root.controls.clone(),
            nominal: root.states.iter().map(|s| s.to_vector()).collect(),
            gains,
            beta,
            copies,
            converged: out.converged,
            cost_log: out.log.iter().map(|r| r.cost).collect(),
        })
    }

    pub fn planner(&self) -> PlannerKind {
        self.planner
    }

    pub fn len(&self) -> usize {
        self.controls.len()
    }

    pub fn is_empty(&self) -> bool {
        self.controls.is_empty()
    }

    /// `u_j + K_j (s - s_nom_j)` with `s` the lifted real state. For the
    /// stacked planner every copy is set to the real state.
    pub fn control(&self, j: usize, x: &DVector<f64>) -> DVector<f64> {
        let n = x.len();
        let mut s = DVector::zeros(n * self.copies + self.beta.len());
        for c in 0..self.copies {
            s.rows_mut(c * n, n).copy_from(x);
        }
        s.rows_mut(n * self.copies, self.beta.len())
            .copy_from(&self.beta);
        &self.controls[j] + &self.gains[j].feedback * (s - &self.nominal[j])
    }
}

/// Plans from `(x, b)` with the given planner.
pub fn plan_segment(
    planner: PlannerKind,
    model: &dyn ProblemModel,
    x: &DVector<f64>,
    b: &Belief,
    config: &SolverConfig,
) -> Result<SegmentPolicy> {
    match planner {
        PlannerKind::Poddp => {
            let out = solve(model, x, b, config, None)?;
            SegmentPolicy::from_outcome(planner, &out, logits_from_belief(b).0, 1)
        }
        PlannerKind::Mlddp => {
            let (_, out) = mlddp_plan(model, x, b, config)?;
            SegmentPolicy::from_outcome(planner, &out, DVector::zeros(1), 1)
        }
        PlannerKind::Pwddp => {
            let out = pwddp_plan(model, x, b, config)?;
            SegmentPolicy::from_outcome(planner, &out, DVector::zeros(1), model.latents().len())
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub cost: f64,
    /// Present on the last step of each segment.
    pub observation: Option<Vec<f64>>,
    /// Belief after this step's update (unchanged between boundaries).
    pub belief: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub seed: u64,
    pub planner: PlannerKind,
    pub true_z: usize,
    pub steps: Vec<StepRecord>,
    pub final_state: Vec<f64>,
    pub final_cost: f64,
    pub cumulative_cost: f64,
    pub replans: usize,
    /// Every plan of the episode converged.
    pub converged: bool,
    /// Per replan, the solver's cost log. Not serialized.
    #[serde(skip)]
    pub plan_costs: Vec<Vec<f64>>,
}

/// Runs one episode: plan, execute the root segment with feedback, observe,
/// update the belief, replan over the remaining horizon.
pub fn execute_episode(
    planner: PlannerKind,
    model: &dyn ProblemModel,
    x0: &DVector<f64>,
    b0: &Belief,
    true_z: usize,
    seed: u64,
    config: &SolverConfig,
) -> Result<EpisodeTrace> {
    if true_z >= model.latents().len() {
        return Err(Error::InvalidArgument(format!(
            "true_z {true_z} is not a latent index"
        )));
    }
    let schedule = config.schedule()?;
    let mut process = stream(seed, PROCESS_STREAM);
    let mut observe = stream(seed, OBSERVATION_STREAM);
    let mut x = x0.clone();
    let mut b = b0.clone();
    let mut steps = Vec::with_capacity(schedule.horizon());
    let mut cumulative = 0.0;
    let mut converged = true;
    let mut replans = 0;
    let mut plan_costs = Vec::with_capacity(schedule.num_segments());

    for i in 0..schedule.num_segments() {
        let sub = config.with_schedule(&schedule.tail(i)?);
        let policy = plan_segment(planner, model, &x, &b, &sub)?;
        replans += 1;
        converged &= policy.converged;
        plan_costs.push(policy.cost_log.clone());
        let len = schedule.segment_len(i);
        for j in 0..len {
            let u = model.clamp_control(&policy.control(j, &x));
            let cost = model.running_cost(&x, &u, true_z);
            cumulative += cost;
            let next = model.dynamics_mean(&x, &u, true_z)
                + gaussian_noise(&model.dynamics_noise(true_z), &mut process)?;
            if next.iter().any(|v| !v.is_finite()) {
                return Err(Error::RolloutDivergence {
                    history: format!("episode {seed}"),
                    step: steps.len(),
                });
            }
            let mut observation = None;
            if j + 1 == len {
                let o = model.observation_mean(&next, true_z)
                    + gaussian_noise(&model.observation_noise(&next, true_z), &mut observe)?;
                match bayes_update(model, &o, &next, &u, &x, &b) {
                    Ok(post) => b = post,
                    // Evidence impossible under every hypothesis: keep the prior.
                    Err(Error::DegenerateEvidence { .. }) => {}
                    Err(e) => return Err(e),
                }
                observation = Some(o.as_slice().to_vec());
            }
            steps.push(StepRecord {
                x: x.as_slice().to_vec(),
                u: u.as_slice().to_vec(),
                cost,
                observation,
                belief: b.probs().as_slice().to_vec(),
            });
            x = next;
        }
    }
    let final_cost = model.final_cost(&x, true_z);
    cumulative += final_cost;
    Ok(EpisodeTrace {
        seed,
        planner,
        true_z,
        steps,
        final_state: x.as_slice().to_vec(),
        final_cost,
        cumulative_cost: cumulative,
        replans,
        converged,
        plan_costs,
    })
}

/// Episodes on seeds `base_seed .. base_seed + n`, latent drawn from `prior`
/// per seed. Results come back in seed order regardless of scheduling.
pub fn run_batch(
    planner: PlannerKind,
    model: &dyn ProblemModel,
    x0: &DVector<f64>,
    prior: &Belief,
    n: usize,
    base_seed: u64,
    config: &SolverConfig,
) -> Result<Vec<EpisodeTrace>> {
    if n == 0 {
        return Err(Error::InvalidArgument(
            "a batch needs at least one episode".into(),
        ));
    }
    (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let seed = base_seed + i;
            execute_episode(
                planner,
                model,
                x0,
                prior,
                sample_latent(prior, seed),
                seed,
                config,
            )
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchStats {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation over sqrt(n); 0 when n = 1.
    pub stderr: f64,
    /// False when n = 1 and the standard error is undefined.
    pub stderr_defined: bool,
    pub costs: Vec<f64>,
}

impl BatchStats {
    pub fn from_costs(costs: Vec<f64>) -> Result<Self> {
        let n = costs.len();
        if n == 0 {
            return Err(Error::InvalidArgument("no episodes".into()));
        }
        let mean = costs.iter().sum::<f64>() / n as f64;
        if n == 1 {
            return Ok(Self {
                n,
                mean,
                stderr: 0.0,
                stderr_defined: false,
                costs,
            });
        }
        let var = costs.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        Ok(Self {
            n,
            mean,
            stderr: (var / n as f64).sqrt(),
            stderr_defined: true,
            costs,
        })
    }

    pub fn from_traces(traces: &[EpisodeTrace]) -> Result<Self> {
        Self::from_costs(traces.iter().map(|t| t.cumulative_cost).collect())
    }
}
