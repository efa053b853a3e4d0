//! Full `d`-ary scenario tree of depth `N` with breadth-first numbering
//! (children of node `n` are `d n + 1 ..= d n + d`) and per-node learner and
//! confidence parameters propagated along each mode path.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learner::{update_learner, ConfidenceSchedule, LearnerState, RadiusSpec};

pub const DEFAULT_NODE_BUDGET: usize = 1_000_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub stage: usize,
    /// 0-based mode realized on arrival at this node.
    pub mode: usize,
    pub parent: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeParams {
    pub learner: LearnerState,
    pub conf: ConfidenceSchedule,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioTree {
    pub d: usize,
    pub horizon: usize,
    pub nodes: Vec<TreeNode>,
    /// One entry per non-leaf node (indices `0..n_nonleaf`).
    pub params: Vec<NodeParams>,
}

/// `Σ_{k=0}^{N} d^k`, saturating.
pub fn node_count(d: usize, horizon: usize) -> u128 {
    let mut total: u128 = 0;
    let mut level: u128 = 1;
    for _ in 0..=horizon {
        total = total.saturating_add(level);
        level = level.saturating_mul(d as u128);
    }
    total
}

impl ScenarioTree {
    /// Builds the tree and propagates `(s, β)` through the learner and
    /// confidence dynamics.
    pub fn build(
        d: usize,
        horizon: usize,
        root_mode: usize,
        s0: &LearnerState,
        conf0: &ConfidenceSchedule,
        spec: &RadiusSpec,
        budget: usize,
    ) -> Result<Self> {
        if d < 2 {
            return Err(Error::InvalidInput(format!("branching factor {d} < 2")));
        }
        if root_mode >= d {
            return Err(Error::ModeOutOfRange { mode: root_mode + 1, d });
        }
        if s0.d() != d {
            return Err(Error::InvalidInput(format!("learner has {} modes, tree {d}", s0.d())));
        }
        let total = node_count(d, horizon);
        if total > budget as u128 {
            return Err(Error::TreeTooLarge { nodes: total, budget });
        }
        let total = total as usize;
        let n_nonleaf = total - d.pow(horizon as u32);
        let mut nodes = Vec::with_capacity(total);
        nodes.push(TreeNode { stage: 0, mode: root_mode, parent: None });
        for n in 0..n_nonleaf {
            let stage = nodes[n].stage + 1;
            for w in 0..d {
                nodes.push(TreeNode { stage, mode: w, parent: Some(n) });
            }
        }
        let mut params: Vec<NodeParams> = Vec::with_capacity(n_nonleaf);
        if n_nonleaf > 0 {
            params.push(NodeParams { learner: s0.clone(), conf: conf0.clone() });
        }
        for n in 1..n_nonleaf {
            let parent = nodes[n].parent.expect("non-root node has a parent");
            let pp = &params[parent];
            let learner = update_learner(&pp.learner, nodes[parent].mode, nodes[n].mode, &pp.conf, spec)?;
            let conf = pp.conf.advance();
            params.push(NodeParams { learner, conf });
        }
        Ok(ScenarioTree { d, horizon, nodes, params })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn n_nonleaf(&self) -> usize {
        self.params.len()
    }

    pub fn is_leaf(&self, n: usize) -> bool {
        n >= self.n_nonleaf()
    }

    /// Children of a non-leaf node, ordered by mode.
    pub fn children(&self, n: usize) -> std::ops::Range<usize> {
        if self.is_leaf(n) {
            return 0..0;
        }
        self.d * n + 1..self.d * n + self.d + 1
    }

    pub fn stage_nodes(&self, k: usize) -> std::ops::Range<usize> {
        let start = (node_count(self.d, k) - self.d.pow(k as u32) as u128) as usize;
        start..start + self.d.pow(k as u32)
    }

    /// Mode sequence from the root to `n` (inclusive).
    pub fn path_modes(&self, mut n: usize) -> Vec<usize> {
        let mut modes = vec![self.nodes[n].mode];
        while let Some(p) = self.nodes[n].parent {
            modes.push(self.nodes[p].mode);
            n = p;
        }
        modes.reverse();
        modes
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ambiguity::Divergence;
    use crate::learner::replay;

    fn setup(d: usize) -> (LearnerState, ConfidenceSchedule, RadiusSpec) {
        (LearnerState::init(d, 2).unwrap(), ConfidenceSchedule::new(0.19, 2.0, 2, 0).unwrap(), RadiusSpec::new(Divergence::tv()))
    }

    #[test]
    fn sizes() {
        let (s, c, sp) = setup(2);
        let t = ScenarioTree::build(2, 2, 0, &s, &c, &sp, DEFAULT_NODE_BUDGET).unwrap();
        assert_eq!(t.len(), 7);
        assert_eq!(t.stage_nodes(1), 1..3);
        assert_eq!(t.stage_nodes(2), 3..7);
        let (s, c, sp) = setup(3);
        let t = ScenarioTree::build(3, 5, 0, &s, &c, &sp, DEFAULT_NODE_BUDGET).unwrap();
        assert_eq!(t.len(), 364);
        let t0 = ScenarioTree::build(3, 0, 1, &s, &c, &sp, DEFAULT_NODE_BUDGET).unwrap();
        assert_eq!(t0.len(), 1);
        assert!(t0.params.is_empty());
        assert!(matches!(ScenarioTree::build(3, 20, 0, &s, &c, &sp, DEFAULT_NODE_BUDGET), Err(Error::TreeTooLarge { .. })));
    }

    #[test]
    fn children_carry_each_mode_once() {
        let (s, c, sp) = setup(3);
        let t = ScenarioTree::build(3, 3, 2, &s, &c, &sp, DEFAULT_NODE_BUDGET).unwrap();
        for n in 0..t.n_nonleaf() {
            let modes: Vec<usize> = t.children(n).map(|ch| t.nodes[ch].mode).collect();
            assert_eq!(modes, vec![0, 1, 2]);
            for ch in t.children(n) {
                assert_eq!(t.nodes[ch].parent, Some(n));
                assert_eq!(t.nodes[ch].stage, t.nodes[n].stage + 1);
            }
        }
    }

    #[test]
    fn confidence_is_path_independent() {
        let (s, c, sp) = setup(3);
        let t = ScenarioTree::build(3, 4, 0, &s, &c, &sp, DEFAULT_NODE_BUDGET).unwrap();
        for k in 0..4 {
            let first = &t.params[t.stage_nodes(k).start].conf;
            for n in t.stage_nodes(k) {
                assert_eq!(&t.params[n].conf, first);
            }
        }
    }

    #[test]
    fn params_replay_along_paths() {
        let (s, c, sp) = setup(3);
        let t = ScenarioTree::build(3, 4, 1, &s, &c, &sp, DEFAULT_NODE_BUDGET).unwrap();
        for n in 0..t.n_nonleaf() {
            let (ls, lc) = replay(&s, &c, &t.path_modes(n), &sp).unwrap();
            assert_eq!(ls, t.params[n].learner);
            assert_eq!(lc, t.params[n].conf);
        }
        // first child with the root mode: γ of that mode halves
        let child = t.children(0).start + 1;
        assert_eq!(t.params[child].learner.gamma()[1], 0.5);
    }

    #[test]
    fn json_round_trip() {
        let (s, c, sp) = setup(2);
        let t = ScenarioTree::build(2, 2, 0, &s, &c, &sp, DEFAULT_NODE_BUDGET).unwrap();
        let back: ScenarioTree = serde_json::from_str(&serde_json::to_string(&t).unwrap()).unwrap();
        assert_eq!(back, t);
    }
}
