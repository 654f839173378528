use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::belief::{Belief, BeliefState};
use crate::error::{Error, Result};
use crate::model::ProblemModel;
use crate::solver::backward::{backward_pass, BackwardResult};
use crate::solver::config::SolverConfig;
use crate::solver::cost::evaluate_tree_cost;
use crate::solver::forward::{forward_pass, Nominal};
use crate::tree::{constant_controls, ControlMap, GainSchedule, SegmentSchedule, TrajectoryTree};

/// One line of the iteration log. Iteration 0 is the initial rollout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub cost: f64,
    pub alpha: f64,
    pub lambda: f64,
    pub gradient_norm: f64,
}

#[derive(Clone, Debug)]
pub struct SolveOutcome {
    /// Best tree found, with its gains and value models attached.
    pub tree: TrajectoryTree,
    pub gains: GainSchedule,
    pub cost: f64,
    pub log: Vec<IterationRecord>,
    pub converged: bool,
    /// Backward passes run, including the one that detected convergence.
    pub iterations: usize,
}

/// Zero controls on every node of the tree implied by `config`.
pub fn zero_controls(model: &dyn ProblemModel, schedule: &SegmentSchedule) -> ControlMap {
    constant_controls(
        model.latents().len(),
        schedule,
        &DVector::zeros(model.control_dim()),
    )
}

fn recoverable(e: &Error) -> bool {
    matches!(
        e,
        Error::RolloutDivergence { .. } | Error::DegenerateEvidence { .. }
    )
}

/// Backward pass, raising the regularization until `Q_uu` is positive definite.
fn regularized_backward(
    model: &dyn ProblemModel,
    tree: &TrajectoryTree,
    lambda: &mut f64,
    config: &SolverConfig,
) -> Result<BackwardResult> {
    loop {
        match backward_pass(model, tree, *lambda) {
            Ok(r) => return Ok(r),
            Err(Error::BackwardFailure { .. }) => {
                *lambda *= config.regularization_increase;
                if *lambda > config.regularization_max {
                    return Err(Error::BackwardFailure { lambda: *lambda });
                }
            }
            Err(e) => return Err(e),
        }
    }
}

/// Alternates backward passes and line-searched forward passes from
/// `(x0, b0)`. `init` defaults to zero controls.
///
/// Non-convergence is reported through the flag, with the best tree so far;
/// an error means the problem could not be started at all.
pub fn solve(
    model: &dyn ProblemModel,
    x0: &DVector<f64>,
    b0: &Belief,
    config: &SolverConfig,
    init: Option<&ControlMap>,
) -> Result<SolveOutcome> {
    config.validate()?;
    let schedule = config.schedule()?;
    let root = BeliefState::new(x0.clone(), b0);
    let zeros;
    let init = match init {
        Some(c) => c,
        None => {
            zeros = zero_controls(model, &schedule);
            &zeros
        }
    };
    let mut tree = forward_pass(model, &schedule, &root, Nominal::Controls(init), 1.0)?;
    let mut cost = evaluate_tree_cost(model, &tree)?;
    if !cost.is_finite() {
        return Err(Error::RolloutDivergence {
            history: String::new(),
            step: 0,
        });
    }
    let mut lambda = config.regularization_init;
    let mut log = vec![IterationRecord {
        iteration: 0,
        cost,
        alpha: 0.0,
        lambda,
        gradient_norm: 0.0,
    }];
    let mut converged = false;
    let mut accepted = 0usize;
    let mut passes = 0usize;
    let mut last: Option<BackwardResult> = None;

    for _ in 0..config.max_iterations {
        passes += 1;
        let back = match regularized_backward(model, &tree, &mut lambda, config) {
            Ok(b) => b,
            Err(Error::BackwardFailure { .. }) => break,
            Err(e) => return Err(e),
        };
        let gnorm = back.gains.gradient_norm(&tree);
        if gnorm < config.gradient_tolerance {
            converged = true;
            last = Some(back);
            break;
        }

        let mut step = None;
        for &alpha in &config.alpha_schedule {
            let candidate = match forward_pass(
                model,
                &schedule,
                &root,
                Nominal::Tree {
                    tree: &tree,
                    gains: &back.gains,
                },
                alpha,
            ) {
                Ok(t) => t,
                Err(e) if recoverable(&e) => continue,
                Err(e) => return Err(e),
            };
            let c = match evaluate_tree_cost(model, &candidate) {
                Ok(c) if c.is_finite() => c,
                _ => continue,
            };
            if c < cost {
                step = Some((candidate, c, alpha));
                break;
            }
        }

        match step {
            Some((candidate, c, alpha)) => {
                let improvement = (cost - c) / cost.abs().max(f64::MIN_POSITIVE);
                tree = candidate;
                cost = c;
                accepted += 1;
                lambda = (lambda / config.regularization_decrease).max(config.regularization_min);
                log.push(IterationRecord {
                    iteration: accepted,
                    cost,
                    alpha,
                    lambda,
                    gradient_norm: gnorm,
                });
                last = None;
                if improvement < config.cost_tolerance {
                    converged = true;
                    break;
                }
            }
            None => {
                last = Some(back);
                lambda *= config.regularization_increase;
                if lambda > config.regularization_max {
                    break;
                }
            }
        }
    }

    // Gains must describe the tree actually returned.
    let back = match last {
        Some(b) => Some(b),
        None => {
            let mut l = lambda.min(config.regularization_max);
            match regularized_backward(model, &tree, &mut l, config) {
                Ok(b) => Some(b),
                Err(Error::BackwardFailure { .. }) => None,
                Err(e) => return Err(e),
            }
        }
    };
    let gains = match back {
        Some(b) => {
            tree.set_value_models(b.value_models);
            b.gains
        }
        // Curvature too negative for any admissible regularization.
        None => {
            converged = false;
            GainSchedule::open_loop(&tree)
        }
    };
    tree.set_gains(gains.clone());
    Ok(SolveOutcome {
        tree,
        gains,
        cost,
        log,
        converged,
        iterations: passes,
    })
}
