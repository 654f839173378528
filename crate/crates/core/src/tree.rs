//! History-indexed trajectory trees.
//!
//! A tree node owns one segment of the horizon: the controls and belief
//! states along it, and the belief state reached under each latent value at
//! its end (the maximum-likelihood outcome of that branch). Nodes are keyed by
//! the latent indices taken at earlier branch points; the root is the empty
//! history.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::belief::{softmax, BeliefLogits, BeliefState};
use crate::error::{Error, Result};

/// Latent indices taken at successive branch points.
#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct HistoryPath(Vec<usize>);

impl HistoryPath {
    pub fn root() -> Self {
        Self(Vec::new())
    }

    pub fn from_branches(branches: Vec<usize>) -> Self {
        Self(branches)
    }

    pub fn branches(&self) -> &[usize] {
        &self.0
    }

    pub fn depth(&self) -> usize {
        self.0.len()
    }

    pub fn is_root(&self) -> bool {
        self.0.is_empty()
    }

    pub fn child(&self, z: usize) -> Self {
        let mut b = self.0.clone();
        b.push(z);
        Self(b)
    }

    pub fn parent(&self) -> Option<Self> {
        if self.0.is_empty() {
            None
        } else {
            Some(Self(self.0[..self.0.len() - 1].to_vec()))
        }
    }

    /// `""` for the root, otherwise one digit per branch (`"01"`).
    pub fn key(&self) -> String {
        self.0
            .iter()
            .map(|z| char::from_digit(*z as u32, 10).unwrap_or('?'))
            .collect()
    }

    pub fn parse(key: &str) -> Result<Self> {
        key.chars()
            .map(|c| {
                c.to_digit(10)
                    .map(|d| d as usize)
                    .ok_or_else(|| Error::InvalidArgument(format!("bad history key {key:?}")))
            })
            .collect::<Result<Vec<_>>>()
            .map(Self)
    }
}

impl fmt::Display for HistoryPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            f.write_str("root")
        } else {
            f.write_str(&self.key())
        }
    }
}

/// Branch times `0 = tau_0 < tau_1 < ... < tau_k = T`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentSchedule {
    boundaries: Vec<usize>,
}

impl SegmentSchedule {
    pub fn new(boundaries: Vec<usize>) -> Result<Self> {
        if boundaries.len() < 2 || boundaries[0] != 0 {
            return Err(Error::InvalidArgument(format!(
                "segment boundaries must start at 0 and contain at least one segment: {boundaries:?}"
            )));
        }
        if boundaries.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument(format!(
                "segment boundaries must be strictly increasing: {boundaries:?}"
            )));
        }
        Ok(Self { boundaries })
    }

    /// `segments` segments of (nearly) equal length covering `horizon` steps.
    pub fn uniform(horizon: usize, segments: usize) -> Result<Self> {
        if segments == 0 || horizon < segments {
            return Err(Error::InvalidArgument(format!(
                "cannot split a horizon of {horizon} steps into {segments} segments"
            )));
        }
        Self::new((0..=segments).map(|i| i * horizon / segments).collect())
    }

    pub fn boundaries(&self) -> &[usize] {
        &self.boundaries
    }

    pub fn num_segments(&self) -> usize {
        self.boundaries.len() - 1
    }

    pub fn horizon(&self) -> usize {
        *self.boundaries.last().unwrap()
    }

    pub fn segment_len(&self, depth: usize) -> usize {
        self.boundaries[depth + 1] - self.boundaries[depth]
    }

    /// Remaining schedule from segment `from` on, shifted to start at 0.
    pub fn tail(&self, from: usize) -> Result<Self> {
        if from >= self.num_segments() {
            return Err(Error::InvalidArgument(format!(
                "no segment {from} in {:?}",
                self.boundaries
            )));
        }
        let start = self.boundaries[from];
        Self::new(self.boundaries[from..].iter().map(|b| b - start).collect())
    }
}

/// Number of nodes in a complete tree with `num_branch_levels` branch points.
pub fn node_count(num_latents: usize, num_branch_levels: usize) -> usize {
    assert!(num_latents >= 1, "latent set must be non-empty");
    if num_latents == 1 {
        return num_branch_levels + 1;
    }
    (num_latents.pow(num_branch_levels as u32 + 1) - 1) / (num_latents - 1)
}

/// Local quadratic model of the cost-to-go around `anchor`:
/// `V(s) ~ value + v_s . d + 1/2 d' v_ss d`, with `d = s - anchor`.
/// `dv` is the predicted change from applying the open-loop updates.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticValueModel {
    pub value: f64,
    pub dv: f64,
    pub v_s: DVector<f64>,
    pub v_ss: DMatrix<f64>,
    pub anchor: DVector<f64>,
}

impl QuadraticValueModel {
    pub fn dim(&self) -> usize {
        self.v_s.len()
    }

    pub fn eval(&self, s: &DVector<f64>) -> f64 {
        let d = s - &self.anchor;
        self.value + self.v_s.dot(&d) + 0.5 * d.dot(&(&self.v_ss * &d))
    }

    pub fn gradient(&self, s: &DVector<f64>) -> DVector<f64> {
        &self.v_s + &self.v_ss * (s - &self.anchor)
    }
}

/// Open-loop update `k` and feedback `K` (over `ds = (dx, dbeta)`) for one step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepGain {
    pub open_loop: DVector<f64>,
    pub feedback: DMatrix<f64>,
}

/// Gains for every `(history, step)` of a tree.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GainSchedule {
    pub gains: BTreeMap<HistoryPath, Vec<StepGain>>,
}

impl GainSchedule {
    /// No correction and no feedback: the tree's controls played open loop.
    pub fn open_loop(tree: &TrajectoryTree) -> Self {
        let p = tree.control_dim();
        let d = tree.state_dim() + tree.num_latents();
        let gains = tree
            .nodes()
            .iter()
            .map(|(h, node)| {
                let steps = node
                    .controls
                    .iter()
                    .map(|_| StepGain {
                        open_loop: DVector::zeros(p),
                        feedback: DMatrix::zeros(p, d),
                    })
                    .collect();
                (h.clone(), steps)
            })
            .collect();
        Self { gains }
    }

    pub fn get(&self, history: &HistoryPath, step: usize) -> Option<&StepGain> {
        self.gains.get(history).and_then(|g| g.get(step))
    }

    /// Mean over steps of `max_i |k_i| / (|u_i| + 1)`.
    pub fn gradient_norm(&self, tree: &TrajectoryTree) -> f64 {
        let mut total = 0.0;
        let mut count = 0usize;
        for (h, gains) in &self.gains {
            let Some(node) = tree.node(h) else { continue };
            for (g, u) in gains.iter().zip(&node.controls) {
                let worst = g
                    .open_loop
                    .iter()
                    .zip(u.iter())
                    .map(|(k, u)| k.abs() / (u.abs() + 1.0))
                    .fold(0.0, f64::max);
                total += worst;
                count += 1;
            }
        }
        if count == 0 {
            0.0
        } else {
            total / count as f64
        }
    }
}

/// One segment of the plan.
#[derive(Clone, Debug, PartialEq)]
pub struct TreeNode {
    pub controls: Vec<DVector<f64>>,
    /// Belief state at the start of each step of the segment.
    pub states: Vec<BeliefState>,
    /// Maximum-likelihood belief state at the end of the segment, per latent value.
    pub outcomes: Vec<BeliefState>,
}

/// Controls indexed by history; the nominal input to a forward pass.
pub type ControlMap = BTreeMap<HistoryPath, Vec<DVector<f64>>>;

/// Every history of a complete tree, in map order.
pub fn all_histories(num_latents: usize, schedule: &SegmentSchedule) -> Vec<HistoryPath> {
    let mut out = Vec::new();
    let mut stack = vec![HistoryPath::root()];
    while let Some(h) = stack.pop() {
        if h.depth() + 1 < schedule.num_segments() {
            for z in (0..num_latents).rev() {
                stack.push(h.child(z));
            }
        }
        out.push(h);
    }
    out.sort();
    out
}

/// Constant controls on every node of the tree.
pub fn constant_controls(
    num_latents: usize,
    schedule: &SegmentSchedule,
    u: &DVector<f64>,
) -> ControlMap {
    all_histories(num_latents, schedule)
        .into_iter()
        .map(|h| {
            let len = schedule.segment_len(h.depth());
            (h, vec![u.clone(); len])
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryTree {
    schedule: SegmentSchedule,
    num_latents: usize,
    state_dim: usize,
    control_dim: usize,
    nodes: BTreeMap<HistoryPath, TreeNode>,
    value_models: BTreeMap<HistoryPath, QuadraticValueModel>,
    gains: Option<GainSchedule>,
}

impl TrajectoryTree {
    pub fn new(
        schedule: SegmentSchedule,
        num_latents: usize,
        state_dim: usize,
        control_dim: usize,
    ) -> Self {
        Self {
            schedule,
            num_latents,
            state_dim,
            control_dim,
            nodes: BTreeMap::new(),
            value_models: BTreeMap::new(),
            gains: None,
        }
    }

    pub fn schedule(&self) -> &SegmentSchedule {
        &self.schedule
    }

    pub fn num_latents(&self) -> usize {
        self.num_latents
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn control_dim(&self) -> usize {
        self.control_dim
    }

    pub fn insert(&mut self, history: HistoryPath, node: TreeNode) {
        self.nodes.insert(history, node);
    }

    pub fn node(&self, history: &HistoryPath) -> Option<&TreeNode> {
        self.nodes.get(history)
    }

    pub fn root(&self) -> Option<&TreeNode> {
        self.nodes.get(&HistoryPath::root())
    }

    pub fn nodes(&self) -> &BTreeMap<HistoryPath, TreeNode> {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Whether nodes at this depth have child nodes (otherwise their outcomes are terminal).
    pub fn has_children(&self, history: &HistoryPath) -> bool {
        history.depth() + 1 < self.schedule.num_segments()
    }

    pub fn controls(&self) -> ControlMap {
        self.nodes
            .iter()
            .map(|(h, n)| (h.clone(), n.controls.clone()))
            .collect()
    }

    pub fn value_models(&self) -> &BTreeMap<HistoryPath, QuadraticValueModel> {
        &self.value_models
    }

    pub fn set_value_models(&mut self, models: BTreeMap<HistoryPath, QuadraticValueModel>) {
        self.value_models = models;
    }

    pub fn gains(&self) -> Option<&GainSchedule> {
        self.gains.as_ref()
    }

    pub fn set_gains(&mut self, gains: GainSchedule) {
        self.gains = Some(gains);
    }

    /// Nodes in post-order: children (in latent order) before their parent.
    pub fn iterate_depth_first(&self) -> Result<Vec<HistoryPath>> {
        let mut order = Vec::with_capacity(self.nodes.len());
        self.visit(HistoryPath::root(), &mut order)?;
        Ok(order)
    }

    fn visit(&self, h: HistoryPath, order: &mut Vec<HistoryPath>) -> Result<()> {
        if !self.nodes.contains_key(&h) {
            return Err(Error::StructuralCorruption(format!(
                "missing node \"{}\"",
                h.key()
            )));
        }
        if self.has_children(&h) {
            for z in 0..self.num_latents {
                self.visit(h.child(z), order)?;
            }
        }
        order.push(h);
        Ok(())
    }

    pub fn to_json(&self) -> Result<serde_json::Value> {
        serde_json::to_value(TreeDocument::from_tree(self)?)
            .map_err(|e| Error::InvalidArgument(e.to_string()))
    }

    pub fn from_json(value: serde_json::Value) -> Result<Self> {
        let doc: TreeDocument = serde_json::from_value(value)
            .map_err(|e| Error::InvalidArgument(format!("tree json: {e}")))?;
        doc.into_tree()
    }
}

/// Row-major dense matrix as stored in JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RowMajor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl RowMajor {
    fn from_rows<'a>(rows: impl ExactSizeIterator<Item = &'a DVector<f64>>, cols: usize) -> Self {
        let n = rows.len();
        let mut data = Vec::with_capacity(n * cols);
        for r in rows {
            data.extend(r.iter());
        }
        Self {
            rows: n,
            cols,
            data,
        }
    }

    fn from_matrix(m: &DMatrix<f64>) -> Self {
        let mut data = Vec::with_capacity(m.len());
        for i in 0..m.nrows() {
            data.extend(m.row(i).iter());
        }
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            data,
        }
    }

    fn check(&self) -> Result<()> {
        if self.rows * self.cols != self.data.len() {
            return Err(Error::InvalidArgument(format!(
                "matrix of {}x{} has {} entries",
                self.rows,
                self.cols,
                self.data.len()
            )));
        }
        Ok(())
    }

    fn to_rows(&self) -> Result<Vec<DVector<f64>>> {
        self.check()?;
        Ok((0..self.rows)
            .map(|i| DVector::from_row_slice(&self.data[i * self.cols..(i + 1) * self.cols]))
            .collect())
    }

    fn to_matrix(&self) -> Result<DMatrix<f64>> {
        self.check()?;
        Ok(DMatrix::from_row_slice(self.rows, self.cols, &self.data))
    }
}

#[derive(Serialize, Deserialize)]
struct OutcomeDocument {
    states: RowMajor,
    logits: RowMajor,
    beliefs: RowMajor,
}

#[derive(Serialize, Deserialize)]
struct NodeDocument {
    controls: RowMajor,
    states: RowMajor,
    logits: RowMajor,
    beliefs: RowMajor,
    outcomes: OutcomeDocument,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gains_open: Option<RowMajor>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gains_feedback: Option<Vec<RowMajor>>,
}

#[derive(Serialize, Deserialize)]
struct TreeDocument {
    num_latents: usize,
    state_dim: usize,
    control_dim: usize,
    schedule: Vec<usize>,
    nodes: BTreeMap<String, NodeDocument>,
}

fn belief_rows(states: &[BeliefState], m: usize) -> (RowMajor, RowMajor, RowMajor, usize) {
    let n = states.first().map_or(0, |s| s.x.len());
    let xs = RowMajor::from_rows(states.iter().map(|s| &s.x), n);
    let betas = RowMajor::from_rows(states.iter().map(|s| &s.beta.0), m);
    let probs: Vec<DVector<f64>> = states.iter().map(|s| softmax(&s.beta.0)).collect();
    (xs, betas, RowMajor::from_rows(probs.iter(), m), n)
}

fn states_from_rows(xs: &RowMajor, betas: &RowMajor) -> Result<Vec<BeliefState>> {
    let xs = xs.to_rows()?;
    let betas = betas.to_rows()?;
    if xs.len() != betas.len() {
        return Err(Error::InvalidArgument(
            "state and logit row counts differ".into(),
        ));
    }
    Ok(xs
        .into_iter()
        .zip(betas)
        .map(|(x, b)| BeliefState {
            x,
            beta: BeliefLogits(b),
        })
        .collect())
}

impl TreeDocument {
    fn from_tree(tree: &TrajectoryTree) -> Result<Self> {
        if tree.num_latents > 10 {
            return Err(Error::InvalidArgument(
                "history keys support at most 10 latent values".into(),
            ));
        }
        let m = tree.num_latents;
        let mut nodes = BTreeMap::new();
        for (h, node) in &tree.nodes {
            let (states, logits, beliefs, _) = belief_rows(&node.states, m);
            let (os, ol, ob, _) = belief_rows(&node.outcomes, m);
            let gains = tree.gains.as_ref().and_then(|g| g.gains.get(h));
            nodes.insert(
                h.key(),
                NodeDocument {
                    controls: RowMajor::from_rows(node.controls.iter(), tree.control_dim),
                    states,
                    logits,
                    beliefs,
                    outcomes: OutcomeDocument {
                        states: os,
                        logits: ol,
                        beliefs: ob,
                    },
                    gains_open: gains.map(|g| {
                        RowMajor::from_rows(g.iter().map(|s| &s.open_loop), tree.control_dim)
                    }),
                    gains_feedback: gains.map(|g| {
                        g.iter()
                            .map(|s| RowMajor::from_matrix(&s.feedback))
                            .collect()
                    }),
                },
            );
        }
        Ok(Self {
            num_latents: m,
            state_dim: tree.state_dim,
            control_dim: tree.control_dim,
            schedule: tree.schedule.boundaries.clone(),
            nodes,
        })
    }

    fn into_tree(self) -> Result<TrajectoryTree> {
        let schedule = SegmentSchedule::new(self.schedule)?;
        let mut tree =
            TrajectoryTree::new(schedule, self.num_latents, self.state_dim, self.control_dim);
        let mut gains = GainSchedule::default();
        let mut any_gains = false;
        for (key, doc) in self.nodes {
            let h = HistoryPath::parse(&key)?;
            let node = TreeNode {
                controls: doc.controls.to_rows()?,
                states: states_from_rows(&doc.states, &doc.logits)?,
                outcomes: states_from_rows(&doc.outcomes.states, &doc.outcomes.logits)?,
            };
            if let (Some(open), Some(feedback)) = (doc.gains_open, doc.gains_feedback) {
                let open = open.to_rows()?;
                let steps = open
                    .into_iter()
                    .zip(feedback)
                    .map(|(k, big_k)| {
                        Ok(StepGain {
                            open_loop: k,
                            feedback: big_k.to_matrix()?,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                gains.gains.insert(h.clone(), steps);
                any_gains = true;
            }
            tree.insert(h, node);
        }
        if any_gains {
            tree.gains = Some(gains);
        }
        tree.iterate_depth_first()?;
        Ok(tree)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn node_count_examples() {
        assert_eq!(node_count(2, 2), 7);
        assert_eq!(node_count(1, 5), 6);
        assert_eq!(node_count(3, 2), 13);
    }

    #[test]
    fn node_count_matches_enumeration() {
        for m in 1..=3 {
            for levels in 0..=3 {
                let schedule = SegmentSchedule::uniform(12, levels + 1).unwrap();
                assert_eq!(all_histories(m, &schedule).len(), node_count(m, levels));
            }
        }
    }

    #[test]
    fn history_keys() {
        let h = HistoryPath::root().child(0).child(1);
        assert_eq!(h.key(), "01");
        assert_eq!(HistoryPath::parse("01").unwrap(), h);
        assert_eq!(HistoryPath::root().key(), "");
        assert_eq!(h.parent().unwrap().key(), "0");
        assert!(HistoryPath::parse("0x").is_err());
    }

    #[test]
    fn schedule_validation() {
        assert!(SegmentSchedule::new(vec![0, 5, 5]).is_err());
        assert!(SegmentSchedule::new(vec![1, 5]).is_err());
        assert!(SegmentSchedule::uniform(2, 3).is_err());
        let s = SegmentSchedule::uniform(30, 3).unwrap();
        assert_eq!(s.boundaries(), &[0, 10, 20, 30]);
        assert_eq!(s.tail(1).unwrap().boundaries(), &[0, 10, 20]);
        assert_eq!(
            SegmentSchedule::uniform(10, 3).unwrap().boundaries(),
            &[0, 3, 6, 10]
        );
    }

    fn skeleton(m: usize, segments: usize) -> TrajectoryTree {
        let schedule = SegmentSchedule::uniform(segments * 2, segments).unwrap();
        let mut tree = TrajectoryTree::new(schedule.clone(), m, 1, 1);
        for h in all_histories(m, &schedule) {
            let s = BeliefState {
                x: DVector::zeros(1),
                beta: BeliefLogits(DVector::zeros(m)),
            };
            tree.insert(
                h,
                TreeNode {
                    controls: vec![DVector::zeros(1); 2],
                    states: vec![s.clone(); 2],
                    outcomes: vec![s; m],
                },
            );
        }
        tree
    }

    #[test]
    fn post_order_examples() {
        let order = skeleton(2, 2).iterate_depth_first().unwrap();
        let keys: Vec<String> = order.iter().map(HistoryPath::key).collect();
        assert_eq!(keys, ["0", "1", ""]);

        let order = skeleton(1, 3).iterate_depth_first().unwrap();
        let keys: Vec<String> = order.iter().map(HistoryPath::key).collect();
        assert_eq!(keys, ["00", "0", ""]);

        let order = skeleton(2, 3).iterate_depth_first().unwrap();
        assert_eq!(order.len(), 7);
        for (i, h) in order.iter().enumerate() {
            if let Some(p) = h.parent() {
                let pi = order.iter().position(|q| *q == p).unwrap();
                assert!(i < pi, "{h} must precede its parent");
            }
        }
    }

    #[test]
    fn missing_child_is_structural_corruption() {
        let mut tree = skeleton(2, 2);
        tree.nodes.remove(&HistoryPath::root().child(1));
        assert!(matches!(
            tree.iterate_depth_first(),
            Err(Error::StructuralCorruption(_))
        ));
    }
}
