use nalgebra::DVector;

use crate::belief::{bayes_update, logits_from_belief, softmax, BeliefLogits, BeliefState};
use crate::error::{Error, Result};
use crate::model::ProblemModel;
use crate::tree::{
    ControlMap, GainSchedule, HistoryPath, SegmentSchedule, TrajectoryTree, TreeNode,
};

/// What the forward pass rolls out: bare controls (first iteration) or a
/// nominal tree plus the gains computed around it.
#[derive(Clone, Copy)]
pub enum Nominal<'a> {
    Controls(&'a ControlMap),
    Tree {
        tree: &'a TrajectoryTree,
        gains: &'a GainSchedule,
    },
}

/// One step inside a segment. The belief is held fixed and the state follows
/// the belief-weighted mean of the latent-conditioned dynamics.
pub fn chain_step(model: &dyn ProblemModel, s: &BeliefState, u: &DVector<f64>) -> BeliefState {
    let m = model.latents().len();
    let x = if m == 1 {
        model.dynamics_mean(&s.x, u, 0)
    } else {
        let b = softmax(&s.beta.0);
        let mut x = DVector::zeros(s.x.len());
        for z in 0..m {
            x += model.dynamics_mean(&s.x, u, z) * b[z];
        }
        x
    };
    BeliefState {
        x,
        beta: s.beta.clone(),
    }
}

/// The maximum-likelihood outcome of the last step of a segment under latent
/// `z`: mean transition, mean observation, then the Bayesian belief update.
pub fn branch_outcome(
    model: &dyn ProblemModel,
    s: &BeliefState,
    u: &DVector<f64>,
    z: usize,
) -> Result<BeliefState> {
    let x_next = model.dynamics_mean(&s.x, u, z);
    if model.latents().len() == 1 {
        return Ok(BeliefState {
            x: x_next,
            beta: BeliefLogits(DVector::zeros(1)),
        });
    }
    let o = model.observation_mean(&x_next, z);
    let b = crate::belief::Belief::from_normalized(softmax(&s.beta.0));
    let posterior = bayes_update(model, &o, &x_next, u, &s.x, &b)?;
    Ok(BeliefState {
        x: x_next,
        beta: logits_from_belief(&posterior),
    })
}

/// Builds a trajectory tree from `root`: within each segment applies
/// `u = u_nom + alpha k + K (s - s_nom)` when gains are given (else `u_nom`),
/// and at each segment end branches on every latent value.
pub fn forward_pass(
    model: &dyn ProblemModel,
    schedule: &SegmentSchedule,
    root: &BeliefState,
    nominal: Nominal<'_>,
    alpha: f64,
) -> Result<TrajectoryTree> {
    let m = model.latents().len();
    if root.x.len() != model.state_dim() || root.beta.len() != m {
        return Err(Error::InvalidArgument(
            "root belief state does not match the model".into(),
        ));
    }
    let mut tree = TrajectoryTree::new(schedule.clone(), m, model.state_dim(), model.control_dim());
    rollout(
        model,
        schedule,
        nominal,
        alpha,
        HistoryPath::root(),
        root.clone(),
        &mut tree,
    )?;
    Ok(tree)
}

fn rollout(
    model: &dyn ProblemModel,
    schedule: &SegmentSchedule,
    nominal: Nominal<'_>,
    alpha: f64,
    history: HistoryPath,
    start: BeliefState,
    tree: &mut TrajectoryTree,
) -> Result<()> {
    let len = schedule.segment_len(history.depth());
    let missing =
        || Error::StructuralCorruption(format!("nominal plan has no node \"{}\"", history.key()));
    let (u_nom, s_nom) = match nominal {
        Nominal::Controls(map) => (map.get(&history).ok_or_else(missing)?, None),
        Nominal::Tree { tree: nom, .. } => {
            let node = nom.node(&history).ok_or_else(missing)?;
            (&node.controls, Some(&node.states))
        }
    };
    if u_nom.len() != len {
        return Err(Error::StructuralCorruption(format!(
            "node \"{}\" has {} controls, segment has {len} steps",
            history.key(),
            u_nom.len()
        )));
    }
    let diverged = |step| Error::RolloutDivergence {
        history: history.key(),
        step,
    };

    let mut controls = Vec::with_capacity(len);
    let mut states = Vec::with_capacity(len);
    let mut s = start;
    let mut outcomes = Vec::new();
    for j in 0..len {
        let mut u = u_nom[j].clone();
        if let (Nominal::Tree { gains, .. }, Some(s_nom)) = (nominal, s_nom) {
            let g = gains.get(&history, j).ok_or_else(|| {
                Error::StructuralCorruption(format!("no gains for \"{}\" step {j}", history.key()))
            })?;
            let ds = s.to_vector() - s_nom[j].to_vector();
            u += &g.open_loop * alpha + &g.feedback * ds;
        }
        if u.iter().any(|v| !v.is_finite()) {
            return Err(diverged(j));
        }
        if j + 1 < len {
            let next = chain_step(model, &s, &u);
            states.push(s);
            s = next;
            if !s.is_finite() {
                return Err(diverged(j));
            }
        } else {
            for z in 0..tree.num_latents() {
                let o = branch_outcome(model, &s, &u, z)?;
                if !o.is_finite() {
                    return Err(diverged(j));
                }
                outcomes.push(o);
            }
            states.push(s.clone());
        }
        controls.push(u);
    }
    let has_children = tree.has_children(&history);
    let starts = outcomes.clone();
    tree.insert(
        history.clone(),
        TreeNode {
            controls,
            states,
            outcomes,
        },
    );
    if has_children {
        for (z, child_start) in starts.into_iter().enumerate() {
            rollout(
                model,
                schedule,
                nominal,
                alpha,
                history.child(z),
                child_start,
                tree,
            )?;
        }
    }
    Ok(())
}
