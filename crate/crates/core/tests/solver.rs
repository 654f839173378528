use nalgebra::DVector;
use poddp::solver::cost::evaluate_tree_cost;
use poddp::solver::forward::{forward_pass, Nominal};
use poddp::tree::{GainSchedule, HistoryPath, TrajectoryTree};
use poddp::ProblemModel;
use poddp::{solve, Belief, SolverConfig};
use poddp_testkit::{plain_ddp, riccati, LinearQuadratic, ToyGoals};

fn lq_config() -> SolverConfig {
    SolverConfig {
        horizon: 30,
        segments: 1,
        ..SolverConfig::default()
    }
}

#[test]
fn lqr_matches_riccati() {
    let lq = LinearQuadratic::double_integrator(0.1);
    let x0 = DVector::from_vec(vec![1.0, -2.0, 0.5, 0.3]);
    let oracle = riccati(&lq, &x0, 30);
    let out = solve(&lq, &x0, &Belief::new([1.0]).unwrap(), &lq_config(), None).unwrap();
    assert!(out.converged);
    assert!(out.iterations <= 5, "{} iterations", out.iterations);
    assert!(
        (out.cost - oracle.cost).abs() < 1e-6,
        "{} vs {}",
        out.cost,
        oracle.cost
    );
    let root = out.tree.root().unwrap();
    for (u, v) in root.controls.iter().zip(&oracle.controls) {
        assert!((u - v).amax() < 1e-6);
    }
}

#[test]
fn single_latent_matches_plain_ddp() {
    let lq = LinearQuadratic::double_integrator(0.1);
    let x0 = DVector::from_vec(vec![1.0, -2.0, 0.5, 0.3]);
    for segments in [1, 3] {
        let config = SolverConfig {
            horizon: 30,
            segments,
            ..SolverConfig::default()
        };
        let out = solve(&lq, &x0, &Belief::new([1.0]).unwrap(), &config, None).unwrap();
        let reference = plain_ddp(&lq, &x0, &config);
        assert!((out.cost - reference.cost).abs() < 1e-8);
    }
}

#[test]
fn zero_cost_converges_immediately() {
    let mut lq = LinearQuadratic::double_integrator(0.1);
    lq.q *= 0.0;
    lq.qf *= 0.0;
    let x0 = DVector::from_vec(vec![1.0, 0.0, 0.0, 0.0]);
    let out = solve(&lq, &x0, &Belief::new([1.0]).unwrap(), &lq_config(), None).unwrap();
    assert!(out.converged);
    assert_eq!(out.iterations, 1);
    assert_eq!(out.cost, 0.0);
}

fn toy_solve() -> (ToyGoals, poddp::SolveOutcome) {
    let model = ToyGoals::default();
    let config = SolverConfig {
        horizon: 30,
        segments: 3,
        ..SolverConfig::default()
    };
    let out = solve(
        &model,
        &DVector::zeros(2),
        &Belief::new([0.51, 0.49]).unwrap(),
        &config,
        None,
    )
    .unwrap();
    (model, out)
}

#[test]
fn toy_tree_branches_toward_both_goals() {
    let (model, out) = toy_solve();
    let costs: Vec<f64> = out.log.iter().map(|r| r.cost).collect();
    assert!(costs.windows(2).all(|w| w[1] <= w[0]));
    assert!((evaluate_tree_cost(&model, &out.tree).unwrap() - out.cost).abs() < 1e-12);
    assert_eq!(out.tree.nodes().len(), 7);
    // After two consistent observations the leaves head for the matching goal.
    for z in 0..2 {
        let leaf = out
            .tree
            .node(&HistoryPath::from_branches(vec![z, z]))
            .unwrap();
        let end = &leaf.outcomes[z].x;
        let goal_x = if z == 0 { -model.goal_x } else { model.goal_x };
        assert!((end[0] - goal_x).abs() < 0.5, "branch {z} ends at {end}");
        assert!(leaf.outcomes[z].belief().prob(z) > 0.9);
    }
}

/// Expected cost as a sum over root-to-leaf paths, each weighted by the
/// product of the branch probabilities along it.
fn path_sum_cost(model: &ToyGoals, tree: &TrajectoryTree) -> f64 {
    let mut total = 0.0;
    let mut stack = vec![(HistoryPath::root(), 1.0)];
    while let Some((h, weight)) = stack.pop() {
        let node = tree.node(&h).unwrap();
        for (s, u) in node.states.iter().zip(&node.controls) {
            let b = s.belief();
            total += weight
                * (0..2)
                    .map(|z| b.prob(z) * model.running_cost(&s.x, u, z))
                    .sum::<f64>();
        }
        let b = node.states.last().unwrap().belief();
        for (z, o) in node.outcomes.iter().enumerate() {
            let w = weight * b.prob(z);
            if tree.has_children(&h) {
                stack.push((h.child(z), w));
            } else {
                let bf = o.belief();
                total += w
                    * (0..2)
                        .map(|y| bf.prob(y) * model.final_cost(&o.x, y))
                        .sum::<f64>();
            }
        }
    }
    total
}

#[test]
fn tree_cost_equals_path_sum() {
    let (model, out) = toy_solve();
    let oracle = path_sum_cost(&model, &out.tree);
    assert!(
        (oracle - out.cost).abs() < 1e-9 * oracle.abs().max(1.0),
        "{oracle} vs {}",
        out.cost
    );
}

#[test]
fn forward_pass_reproduces_nominal_without_update() {
    let (model, out) = toy_solve();
    let schedule = out.tree.schedule().clone();
    let root = out.tree.root().unwrap().states[0].clone();
    let open = GainSchedule::open_loop(&out.tree);
    for (gains, alpha) in [(&open, 1.0), (&out.gains, 0.0)] {
        let again = forward_pass(
            &model,
            &schedule,
            &root,
            Nominal::Tree {
                tree: &out.tree,
                gains,
            },
            alpha,
        )
        .unwrap();
        for (h, node) in out.tree.nodes() {
            let other = again.node(h).unwrap();
            for (u, v) in node.controls.iter().zip(&other.controls) {
                assert_eq!(u, v);
            }
            for (s, t) in node.outcomes.iter().zip(&other.outcomes) {
                assert_eq!(s.x, t.x);
            }
        }
    }
}

#[test]
fn converged_gains_are_small() {
    let (_, out) = toy_solve();
    assert!(out.converged);
    for (h, node) in out.tree.nodes() {
        for j in 0..node.controls.len() {
            let g = out.gains.get(h, j).unwrap();
            assert!(
                g.open_loop.amax() < 1e-2,
                "history {h} step {j}: {}",
                g.open_loop
            );
        }
    }
}

mod q_derivatives {
    use super::*;
    use nalgebra::DMatrix;
    use poddp::belief::BeliefState;
    use poddp::diff::numerical_gradient;
    use poddp::solver::backward::{
        branch_expansion, branch_q_value, chain_expansion, chain_q_value, Successors,
    };
    use poddp::tree::QuadraticValueModel;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rel_err(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        (a - b).amax() / (1.0 + b.amax())
    }

    fn random_value_model(rng: &mut ChaCha8Rng, d: usize) -> QuadraticValueModel {
        let m = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
        QuadraticValueModel {
            value: rng.random_range(0.0..5.0),
            dv: 0.0,
            v_s: DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0)),
            v_ss: &m * m.transpose(),
            anchor: DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0)),
        }
    }

    #[test]
    fn expansion_gradients_match_finite_differences() {
        let model = ToyGoals::with_drift(0.4, 0.3);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let x = DVector::from_fn(2, |_, _| rng.random_range(-1.0..3.0));
            let p0: f64 = rng.random_range(0.1..0.9);
            let s = BeliefState::new(x, &Belief::new([p0, 1.0 - p0]).unwrap());
            let u = DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0));
            let children = [
                random_value_model(&mut rng, 4),
                random_value_model(&mut rng, 4),
            ];
            for succ in [Successors::Terminal, Successors::Children(&children)] {
                let q = branch_expansion(&model, &u, &s, succ).unwrap();
                let qs = numerical_gradient(
                    |v| branch_q_value(&model, &u, &BeliefState::from_vector(v, 2), succ).unwrap(),
                    &s.to_vector(),
                )
                .unwrap();
                let qu = numerical_gradient(|v| branch_q_value(&model, v, &s, succ).unwrap(), &u)
                    .unwrap();
                assert!(rel_err(&q.q_s, &qs) < 1e-3, "{} vs {}", q.q_s, qs);
                assert!(rel_err(&q.q_u, &qu) < 1e-3);
            }
            let next = random_value_model(&mut rng, 4);
            let q = chain_expansion(&model, &u, &s, &next).unwrap();
            let qs = numerical_gradient(
                |v| chain_q_value(&model, &u, &BeliefState::from_vector(v, 2), &next),
                &s.to_vector(),
            )
            .unwrap();
            let qu = numerical_gradient(|v| chain_q_value(&model, v, &s, &next), &u).unwrap();
            assert!(rel_err(&q.q_s, &qs) < 1e-3);
            assert!(rel_err(&q.q_u, &qu) < 1e-3);
        }
    }
}
