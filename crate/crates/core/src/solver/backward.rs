//! Backward pass: second-order expansion of the belief-space Q-function and
//! the Riccati-like recursion over the tree.
//!
//! Perturbations are laid out as `ds = (dx, dbeta)`, state first. Second
//! derivatives of the dynamics, observation and belief-update chain are
//! dropped (Gauss-Newton); second derivatives of the softmax weights are kept.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::belief::{softmax, softmax_hessian, softmax_jacobian, BeliefState};
use crate::diff::{self, symmetrize};
use crate::error::{Error, Result};
use crate::model::{derivative_bundle, final_cost_derivatives, ProblemModel};
use crate::solver::forward::{branch_outcome, chain_step};
use crate::tree::{GainSchedule, HistoryPath, QuadraticValueModel, StepGain, TrajectoryTree};

/// Quadratic expansion of Q around `(s, u)`.
#[derive(Clone, Debug, PartialEq)]
pub struct QExpansion {
    pub q: f64,
    pub q_s: DVector<f64>,
    pub q_u: DVector<f64>,
    pub q_ss: DMatrix<f64>,
    pub q_su: DMatrix<f64>,
    pub q_uu: DMatrix<f64>,
}

/// Value of the belief state reached at the end of a segment, per latent branch.
#[derive(Clone, Copy, Debug)]
pub enum Successors<'a> {
    /// Past the horizon: the expected final cost.
    Terminal,
    /// One child value model per latent value.
    Children(&'a [QuadraticValueModel]),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ControlUpdate {
    pub gain: StepGain,
    pub value: QuadraticValueModel,
}

/// Output of a backward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct BackwardResult {
    pub gains: GainSchedule,
    pub value_models: BTreeMap<HistoryPath, QuadraticValueModel>,
}

impl BackwardResult {
    pub fn root_value(&self) -> &QuadraticValueModel {
        &self.value_models[&HistoryPath::root()]
    }
}

/// Per-latent value with derivatives in `x` and `u`.
struct LatentTerm {
    value: f64,
    gx: DVector<f64>,
    gu: DVector<f64>,
    gxx: DMatrix<f64>,
    gxu: DMatrix<f64>,
    guu: DMatrix<f64>,
}

/// Expansion of `sum_z softmax(beta)_z term_z(x, u)` over `(x, beta)` and `u`.
fn expectation(b: &DVector<f64>, terms: &[LatentTerm], n: usize, p: usize) -> QExpansion {
    let m = b.len();
    let d = n + m;
    let jac = softmax_jacobian(b);
    let mut e = QExpansion {
        q: 0.0,
        q_s: DVector::zeros(d),
        q_u: DVector::zeros(p),
        q_ss: DMatrix::zeros(d, d),
        q_su: DMatrix::zeros(d, p),
        q_uu: DMatrix::zeros(p, p),
    };
    for (z, t) in terms.iter().enumerate() {
        let db = jac.row(z).transpose();
        e.q += b[z] * t.value;
        e.q_s.rows_mut(0, n).axpy(b[z], &t.gx, 1.0);
        e.q_s.rows_mut(n, m).axpy(t.value, &db, 1.0);
        e.q_u.axpy(b[z], &t.gu, 1.0);

        let mut xx = e.q_ss.view_mut((0, 0), (n, n));
        xx += &t.gxx * b[z];
        let cross = &t.gx * db.transpose();
        let mut xb = e.q_ss.view_mut((0, n), (n, m));
        xb += &cross;
        let mut bx = e.q_ss.view_mut((n, 0), (m, n));
        bx += cross.transpose();
        if m > 1 {
            let mut bb = e.q_ss.view_mut((n, n), (m, m));
            bb += softmax_hessian(b, z) * t.value;
        }

        let mut xu = e.q_su.view_mut((0, 0), (n, p));
        xu += &t.gxu * b[z];
        let mut bu = e.q_su.view_mut((n, 0), (m, p));
        bu += &db * t.gu.transpose();
        e.q_uu += &t.guu * b[z];
    }
    e
}

/// Quadratic model of `V(s') = E_{z ~ softmax(beta')}[l_f(x', z)]` at a terminal belief state.
pub fn terminal_value_model(
    model: &dyn ProblemModel,
    s: &BeliefState,
) -> Result<QuadraticValueModel> {
    let n = s.x.len();
    let terms = (0..s.beta.len())
        .map(|z| {
            let fc = final_cost_derivatives(model, &s.x, z)?;
            Ok(LatentTerm {
                value: fc.value,
                gx: fc.gradient,
                gu: DVector::zeros(0),
                gxx: fc.hessian,
                gxu: DMatrix::zeros(n, 0),
                guu: DMatrix::zeros(0, 0),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let e = expectation(&softmax(&s.beta.0), &terms, n, 0);
    Ok(QuadraticValueModel {
        value: e.q,
        dv: 0.0,
        v_s: e.q_s,
        v_ss: symmetrize(e.q_ss),
        anchor: s.to_vector(),
    })
}

fn running_terms(
    model: &dyn ProblemModel,
    s: &BeliefState,
    u: &DVector<f64>,
) -> Result<Vec<LatentTerm>> {
    (0..s.beta.len())
        .map(|z| {
            let db = derivative_bundle(model, &s.x, u, z)?;
            Ok(LatentTerm {
                value: model.running_cost(&s.x, u, z),
                gx: db.l_x,
                gu: db.l_u,
                gxx: db.l_xx,
                gxu: db.l_xu,
                guu: db.l_uu,
            })
        })
        .collect()
}

/// Jacobian of `beta'` (the logits after the maximum-likelihood update under
/// latent `z`) with respect to `(x, beta, u)`, by central differences.
fn outcome_logit_jacobian(
    model: &dyn ProblemModel,
    s: &BeliefState,
    u: &DVector<f64>,
    z: usize,
) -> Result<DMatrix<f64>> {
    let n = s.x.len();
    let m = s.beta.len();
    let p = u.len();
    let mut point = DVector::zeros(n + m + p);
    point.rows_mut(0, n + m).copy_from(&s.to_vector());
    point.rows_mut(n + m, p).copy_from(u);
    diff::numerical_jacobian(
        |v| {
            let probe = BeliefState::from_vector(&v.rows(0, n + m).into_owned(), n);
            let uu = v.rows(n + m, p).into_owned();
            match branch_outcome(model, &probe, &uu, z) {
                Ok(o) => o.beta.0,
                Err(_) => DVector::from_element(m, f64::NAN),
            }
        },
        &point,
    )
}

/// Q-expansion at the last step of a segment, where the tree branches:
/// `Q = sum_z b_z(beta) [l(x, u, z) + V_z(s'_z(s, u))]`.
pub fn branch_expansion(
    model: &dyn ProblemModel,
    u: &DVector<f64>,
    s: &BeliefState,
    successors: Successors<'_>,
) -> Result<QExpansion> {
    let n = s.x.len();
    let m = s.beta.len();
    let p = u.len();
    let d = n + m;
    if let Successors::Children(children) = successors {
        if children.len() != m || children.iter().any(|c| c.dim() != d) {
            return Err(Error::InvalidArgument(
                "child value models do not match the latent set".into(),
            ));
        }
    }
    let b = softmax(&s.beta.0);
    let jac = softmax_jacobian(&b);
    let running = running_terms(model, s, u)?;

    let mut e = QExpansion {
        q: 0.0,
        q_s: DVector::zeros(d),
        q_u: DVector::zeros(p),
        q_ss: DMatrix::zeros(d, d),
        q_su: DMatrix::zeros(d, p),
        q_uu: DMatrix::zeros(p, p),
    };
    for (z, l) in running.iter().enumerate() {
        let outcome = branch_outcome(model, s, u, z)?;
        let bundle = derivative_bundle(model, &s.x, u, z)?;

        // ds'/ds and ds'/du
        let mut a = DMatrix::zeros(d, d);
        let mut bm = DMatrix::zeros(d, p);
        a.view_mut((0, 0), (n, n)).copy_from(&bundle.f_x);
        bm.view_mut((0, 0), (n, p)).copy_from(&bundle.f_u);
        if m > 1 {
            let jb = outcome_logit_jacobian(model, s, u, z)?;
            a.view_mut((n, 0), (m, d)).copy_from(&jb.columns(0, d));
            bm.view_mut((n, 0), (m, p)).copy_from(&jb.columns(d, p));
        }

        let s_next = outcome.to_vector();
        let (v, g, h) = match successors {
            Successors::Terminal => {
                let t = terminal_value_model(model, &outcome)?;
                (t.value, t.v_s, t.v_ss)
            }
            Successors::Children(children) => {
                let c = &children[z];
                (c.eval(&s_next), c.gradient(&s_next), c.v_ss.clone())
            }
        };

        let w = l.value + v;
        let mut gs = a.transpose() * &g;
        gs.rows_mut(0, n).axpy(1.0, &l.gx, 1.0);
        let gu = &l.gu + bm.transpose() * &g;
        let mut db = DVector::zeros(d);
        db.rows_mut(n, m).copy_from(&jac.row(z).transpose());
        let ha = &h * &a;
        let hb = &h * &bm;

        e.q += b[z] * w;
        e.q_s += &db * w + &gs * b[z];
        e.q_u += &gu * b[z];

        let mut ss = a.transpose() * &ha;
        {
            let mut xx = ss.view_mut((0, 0), (n, n));
            xx += &l.gxx;
        }
        e.q_ss += ss * b[z] + &db * gs.transpose() + &gs * db.transpose();
        if m > 1 {
            let mut bb = e.q_ss.view_mut((n, n), (m, m));
            bb += softmax_hessian(&b, z) * w;
        }

        let mut su = a.transpose() * &hb;
        {
            let mut xu = su.view_mut((0, 0), (n, p));
            xu += &l.gxu;
        }
        e.q_su += su * b[z] + &db * gu.transpose();
        e.q_uu += (&l.guu + bm.transpose() * &hb) * b[z];
    }
    e.q_ss = symmetrize(e.q_ss);
    e.q_uu = symmetrize(e.q_uu);
    Ok(e)
}

/// Q-expansion for a step inside a segment, `Q = c(s, u) + V(F(s, u))` with
/// `c` the belief-weighted running cost and `F` the chain step.
pub fn chain_expansion(
    model: &dyn ProblemModel,
    u: &DVector<f64>,
    s: &BeliefState,
    next: &QuadraticValueModel,
) -> Result<QExpansion> {
    let n = s.x.len();
    let m = s.beta.len();
    let p = u.len();
    let d = n + m;
    if next.dim() != d {
        return Err(Error::InvalidArgument(
            "value model does not match the belief-state dimension".into(),
        ));
    }
    let b = softmax(&s.beta.0);
    let jac = softmax_jacobian(&b);
    let running = running_terms(model, s, u)?;
    let mut e = expectation(&b, &running, n, p);

    let mut a = DMatrix::zeros(d, d);
    let mut bm = DMatrix::zeros(d, p);
    let mut means = DMatrix::zeros(n, m);
    for z in 0..m {
        let (fx, fu) = crate::model::dynamics_jacobians(model, &s.x, u, z)?;
        let mut ax = a.view_mut((0, 0), (n, n));
        ax += fx * b[z];
        let mut bx = bm.view_mut((0, 0), (n, p));
        bx += fu * b[z];
        if m > 1 {
            means.set_column(z, &model.dynamics_mean(&s.x, u, z));
        }
    }
    if m > 1 {
        a.view_mut((0, n), (n, m)).copy_from(&(means * &jac));
    }
    for i in 0..m {
        a[(n + i, n + i)] = 1.0;
    }

    let s_next = chain_step(model, s, u).to_vector();
    let g = next.gradient(&s_next);
    let h = &next.v_ss;
    let ha = h * &a;
    e.q += next.eval(&s_next);
    e.q_s += a.transpose() * &g;
    e.q_u += bm.transpose() * &g;
    e.q_ss = symmetrize(e.q_ss + a.transpose() * &ha);
    e.q_su += a.transpose() * (h * &bm);
    e.q_uu = symmetrize(e.q_uu + bm.transpose() * (h * &bm));
    Ok(e)
}

/// Minimizes the quadratic Q-model: `k = -Q_uu^-1 Q_u`, `K = -Q_uu^-1 Q_us`
/// (with `lambda` added to the diagonal of `Q_uu`), and the resulting value model.
pub fn solve_expansion(q: &QExpansion, lambda: f64, anchor: DVector<f64>) -> Result<ControlUpdate> {
    let p = q.q_u.len();
    let mut reg = q.q_uu.clone();
    for i in 0..p {
        reg[(i, i)] += lambda;
    }
    let chol = reg.cholesky().ok_or(Error::BackwardFailure { lambda })?;
    let q_us = q.q_su.transpose();
    let k = -chol.solve(&q.q_u);
    let big_k = -chol.solve(&q_us);
    if k.iter().chain(big_k.iter()).any(|v| !v.is_finite()) {
        return Err(Error::BackwardFailure { lambda });
    }

    let quu_k = &q.q_uu * &k;
    let dv = k.dot(&q.q_u) + 0.5 * k.dot(&quu_k);
    let v_s = &q.q_s + big_k.transpose() * (&quu_k + &q.q_u) + &q.q_su * &k;
    let kt_quu_k = big_k.transpose() * &q.q_uu * &big_k;
    let cross = big_k.transpose() * &q_us;
    let v_ss = symmetrize(&q.q_ss + kt_quu_k + &cross + cross.transpose());
    Ok(ControlUpdate {
        gain: StepGain {
            open_loop: k,
            feedback: big_k,
        },
        value: QuadraticValueModel {
            value: q.q,
            dv,
            v_s,
            v_ss,
            anchor,
        },
    })
}

/// Control update at a branching step: expansion over every latent branch, then minimization.
pub fn optimize_control(
    model: &dyn ProblemModel,
    u: &DVector<f64>,
    s: &BeliefState,
    successors: Successors<'_>,
    lambda: f64,
) -> Result<ControlUpdate> {
    let q = branch_expansion(model, u, s, successors)?;
    solve_expansion(&q, lambda, s.to_vector())
}

/// Post-order sweep over the tree producing gains for every `(history, step)`.
pub fn backward_pass(
    model: &dyn ProblemModel,
    tree: &TrajectoryTree,
    lambda: f64,
) -> Result<BackwardResult> {
    let mut gains = GainSchedule::default();
    let mut value_models: BTreeMap<HistoryPath, QuadraticValueModel> = BTreeMap::new();
    for h in tree.iterate_depth_first()? {
        let node = tree.node(&h).expect("post-order only yields stored nodes");
        let len = node.controls.len();
        let children: Option<Vec<QuadraticValueModel>> = if tree.has_children(&h) {
            Some(
                (0..tree.num_latents())
                    .map(|z| {
                        value_models.get(&h.child(z)).cloned().ok_or_else(|| {
                            Error::StructuralCorruption(format!(
                                "no value model for \"{}\"",
                                h.child(z).key()
                            ))
                        })
                    })
                    .collect::<Result<_>>()?,
            )
        } else {
            None
        };
        let successors = match &children {
            Some(c) => Successors::Children(c),
            None => Successors::Terminal,
        };

        let mut steps = Vec::with_capacity(len);
        let last = &node.states[len - 1];
        let mut update =
            optimize_control(model, &node.controls[len - 1], last, successors, lambda)?;
        if let Some(c) = &children {
            let b = softmax(&last.beta.0);
            update.value.dv += c.iter().enumerate().map(|(z, v)| b[z] * v.dv).sum::<f64>();
        }
        let mut next = update.value;
        steps.push(update.gain);
        for j in (0..len - 1).rev() {
            let s = &node.states[j];
            let q = chain_expansion(model, &node.controls[j], s, &next)?;
            let mut update = solve_expansion(&q, lambda, s.to_vector())?;
            update.value.dv += next.dv;
            next = update.value;
            steps.push(update.gain);
        }
        steps.reverse();
        gains.gains.insert(h.clone(), steps);
        value_models.insert(h, next);
    }
    Ok(BackwardResult {
        gains,
        value_models,
    })
}

/// `Q` evaluated directly (no expansion) at a branching step: the rollout
/// through dynamics, observation and belief update, scored by the child
/// value models or, past the horizon, by the expected final cost.
pub fn branch_q_value(
    model: &dyn ProblemModel,
    u: &DVector<f64>,
    s: &BeliefState,
    successors: Successors<'_>,
) -> Result<f64> {
    let b = softmax(&s.beta.0);
    let mut q = 0.0;
    for z in 0..b.len() {
        let outcome = branch_outcome(model, s, u, z)?;
        let v = match successors {
            Successors::Terminal => crate::solver::cost::expected_final_cost(model, &outcome),
            Successors::Children(c) => c[z].eval(&outcome.to_vector()),
        };
        q += b[z] * (model.running_cost(&s.x, u, z) + v);
    }
    Ok(q)
}

/// `Q` evaluated directly at a step inside a segment.
pub fn chain_q_value(
    model: &dyn ProblemModel,
    u: &DVector<f64>,
    s: &BeliefState,
    next: &QuadraticValueModel,
) -> f64 {
    crate::solver::cost::expected_running_cost(model, s, u)
        + next.eval(&chain_step(model, s, u).to_vector())
}
