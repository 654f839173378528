use nalgebra::DVector;
use poddp::baselines::{mlddp_plan, pwddp_plan, StackedModel};
use poddp::scenarios::{Scenario, TMaze, TMazeConfig};
use poddp::{Belief, SolverConfig};

fn maze() -> TMaze {
    TMaze::new(TMazeConfig::default()).unwrap()
}

fn final_state(out: &poddp::SolveOutcome) -> DVector<f64> {
    out.tree.root().unwrap().outcomes[0].x.clone()
}

#[test]
fn mlddp_follows_the_argmax() {
    let maze = maze();
    let config = SolverConfig::default();
    let (z, out) = mlddp_plan(
        &maze,
        &maze.initial_state(),
        &Belief::new([0.49, 0.51]).unwrap(),
        &config,
    )
    .unwrap();
    assert_eq!(z, 1);
    let x = final_state(&out);
    assert!(x[0] > 0.5 * maze.cfg.corridor_width, "ends at {x}");

    let (z, _) = mlddp_plan(
        &maze,
        &maze.initial_state(),
        &Belief::new([0.5, 0.5]).unwrap(),
        &config,
    )
    .unwrap();
    assert_eq!(z, 0);
}

#[test]
fn mlddp_ignores_belief_changes_that_keep_the_argmax() {
    let maze = maze();
    let config = SolverConfig::default();
    let (_, a) = mlddp_plan(
        &maze,
        &maze.initial_state(),
        &Belief::new([0.6, 0.4]).unwrap(),
        &config,
    )
    .unwrap();
    let (_, b) = mlddp_plan(
        &maze,
        &maze.initial_state(),
        &Belief::new([0.95, 0.05]).unwrap(),
        &config,
    )
    .unwrap();
    assert_eq!(a.cost, b.cost);
    assert_eq!(
        a.tree.root().unwrap().controls,
        b.tree.root().unwrap().controls
    );
}

#[test]
fn pwddp_with_a_certain_belief_matches_mlddp() {
    let maze = maze();
    let config = SolverConfig::default();
    let x0 = maze.initial_state();
    let b = Belief::new([1.0, 0.0]).unwrap();
    let (_, ml) = mlddp_plan(&maze, &x0, &b, &config).unwrap();
    let pw = pwddp_plan(&maze, &x0, &b, &config).unwrap();
    // The floored weight on the other copy perturbs the cost by at most its share.
    assert!(
        (ml.cost - pw.cost).abs() < 1e-6 * ml.cost,
        "{} vs {}",
        ml.cost,
        pw.cost
    );
    for (u, v) in ml
        .tree
        .root()
        .unwrap()
        .controls
        .iter()
        .zip(&pw.tree.root().unwrap().controls)
    {
        assert!((u - v).amax() < 1e-4, "{u} vs {v}");
    }
}

#[test]
fn pwddp_hedges_between_symmetric_goals() {
    let maze = maze();
    let config = SolverConfig::default();
    let x0 = maze.initial_state();
    let out = pwddp_plan(&maze, &x0, &Belief::new([0.5, 0.5]).unwrap(), &config).unwrap();
    let stacked = StackedModel::new(&maze, DVector::from_vec(vec![0.5, 0.5])).unwrap();
    let end = final_state(&out);
    for z in 0..2 {
        let x = stacked.block(&end, z);
        assert!(x[0].abs() < 1e-3, "copy {z} ends at {x}");
    }
}
