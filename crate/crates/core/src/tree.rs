//! The prefetch state tree.
//!
//! Each node is one possible future iteration of the chain: a current state,
//! a proposal, and the log threshold the acceptance test will use. The
//! accept child continues from the node's proposal and the reject child
//! from its state, so both children are determined by the deviate stream
//! alone. Target evaluations live in [`EvaluationRecord`]s, one per distinct
//! chain state; reject children share their parent's record.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::diagnostics::ScaleAdapter;
use crate::error::{Error, Result};
use crate::estimator::{self, ErrorModel, PartialEvaluation, PredictorInputs};
use crate::rng::DeviateStream;
use crate::target::{BatchStats, TargetModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RecordId(pub u64);

pub type WorkerId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Reject,
    Accept,
}

impl Branch {
    pub fn from_accepted(accepted: bool) -> Self {
        if accepted {
            Branch::Accept
        } else {
            Branch::Reject
        }
    }

    pub fn bit(self) -> char {
        match self {
            Branch::Reject => '0',
            Branch::Accept => '1',
        }
    }
}

/// How a node's proposal is generated from its state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProposalKind {
    /// `theta + scale * z` with `z` the iteration's standard normals.
    #[default]
    RandomWalk,
    /// `theta + 1` in every coordinate. Only meaningful for synthetic
    /// workloads that read the state as a step counter.
    Increment,
}

/// Where a node's accept probability comes from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictorMode {
    /// Subsample normal model, falling back to the prior without evidence.
    Estimated,
    /// The true indicator, computed out of band at no scheduling cost.
    Oracle,
    /// The same probability everywhere.
    Constant(f64),
}

/// Prior accept probability for nodes without subsample evidence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorFallback {
    /// The running acceptance estimate alone.
    #[default]
    Alpha,
    /// `min(1, alpha_hat * u_median / u)`: small thresholds make acceptance
    /// more likely.
    Threshold,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PredictorConfig {
    pub mode: PredictorMode,
    pub fallback: PriorFallback,
    pub error_model: ErrorModel,
    pub c_tilde: f64,
    /// Batches required on both sides before the normal model is used.
    pub m_min_batches: usize,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self {
            mode: PredictorMode::Estimated,
            fallback: PriorFallback::Alpha,
            error_model: ErrorModel::Difference,
            c_tilde: estimator::DEFAULT_C_TILDE,
            m_min_batches: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalStatus {
    Unstarted,
    InProgress,
    Paused,
    Complete,
}

#[derive(Debug, Clone)]
pub struct EvaluationRecord {
    pub id: RecordId,
    pub state: Arc<[f64]>,
    pub batches: Vec<BatchStats>,
    pub partial: PartialEvaluation,
    pub owner: Option<WorkerId>,
    /// Consumed by the chain itself (as opposed to speculation).
    pub useful: bool,
    oracle: Option<f64>,
}

impl EvaluationRecord {
    fn new(id: RecordId, state: Arc<[f64]>, log_prior: f64) -> Self {
        Self {
            id,
            state,
            batches: Vec::new(),
            partial: PartialEvaluation::new(log_prior),
            owner: None,
            useful: false,
            oracle: None,
        }
    }

    pub fn batches_done(&self) -> usize {
        self.batches.len()
    }

    pub fn is_complete(&self, n_batches: usize) -> bool {
        self.batches.len() == n_batches
    }

    pub fn status(&self, n_batches: usize) -> EvalStatus {
        if self.is_complete(n_batches) {
            EvalStatus::Complete
        } else if self.owner.is_some() {
            EvalStatus::InProgress
        } else if self.batches.is_empty() {
            EvalStatus::Unstarted
        } else {
            EvalStatus::Paused
        }
    }

    /// Appends batches reported by a worker. `first` is the index of the
    /// first reported batch and must continue the stored prefix.
    pub fn append(&mut self, first: usize, batches: &[BatchStats]) -> Result<()> {
        if first != self.batches.len() {
            return Err(Error::invalid(format!(
                "record {:?}: batches resume at {first}, expected {}",
                self.id,
                self.batches.len()
            )));
        }
        for b in batches {
            self.partial.absorb(b);
            self.batches.push(*b);
        }
        Ok(())
    }

    /// Totals over the first `batches` batches.
    pub fn prefix(&self, batches: usize) -> PartialEvaluation {
        if batches == self.batches.len() {
            self.partial
        } else {
            PartialEvaluation::from_prefix(self.partial.log_prior, &self.batches[..batches])
        }
    }
}

#[derive(Debug, Clone)]
pub struct TreeNode {
    pub parent: Option<NodeId>,
    /// Edge from the parent; `None` for the root.
    pub branch: Option<Branch>,
    /// Absolute chain iteration this node decides.
    pub iteration: u64,
    pub state: RecordId,
    pub proposal: RecordId,
    pub log_r: f64,
    /// Adapter state in force when this node's proposal was drawn.
    pub adapter: ScaleAdapter,
    pub predictor: f64,
    pub utility: f64,
    /// `[reject, accept]`.
    pub children: Option<[NodeId; 2]>,
}

impl TreeNode {
    pub fn child(&self, branch: Branch) -> Option<NodeId> {
        self.children.map(|c| match branch {
            Branch::Reject => c[0],
            Branch::Accept => c[1],
        })
    }
}

/// Evaluates the full log-posterior of `theta` batch by batch, in batch
/// order. Every executor goes through this accumulation so the results
/// agree bit for bit.
pub fn evaluate_full(model: &TargetModel, theta: &[f64]) -> Result<PartialEvaluation> {
    let mut pe = PartialEvaluation::new(model.log_prior(theta)?);
    for b in 0..model.n_batches() {
        pe.absorb(&model.batch_log_likelihood(theta, b)?);
    }
    Ok(pe)
}

pub(crate) fn propose(
    kind: ProposalKind,
    stream: &DeviateStream,
    state: &[f64],
    iteration: u64,
    adapter: &ScaleAdapter,
) -> Vec<f64> {
    match kind {
        ProposalKind::RandomWalk => {
            let scale = adapter.scale();
            let z = stream.proposal_deviates(iteration, state.len());
            state.iter().zip(z).map(|(s, z)| s + scale * z).collect()
        }
        ProposalKind::Increment => state.iter().map(|s| s + 1.0).collect(),
    }
}

/// A node in breadth-first order together with its position relative to
/// the root.
#[derive(Debug, Clone)]
pub struct NodeView {
    pub id: NodeId,
    pub depth: usize,
    pub path: Vec<Branch>,
}

#[derive(Debug, Clone, Serialize)]
pub struct NodeSnapshot {
    pub path: String,
    pub depth: usize,
    pub iteration: u64,
    pub log_r: f64,
    pub predictor: f64,
    pub utility: f64,
    pub state_batches: usize,
    pub proposal_batches: usize,
    pub proposal_owner: Option<WorkerId>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TreeSnapshot {
    pub root_iteration: u64,
    pub nodes: Vec<NodeSnapshot>,
}

#[derive(Debug, Clone)]
pub struct PrefetchTree {
    model: TargetModel,
    stream: DeviateStream,
    kind: ProposalKind,
    iterations: u64,
    nodes: Vec<Option<TreeNode>>,
    free: Vec<usize>,
    records: BTreeMap<RecordId, EvaluationRecord>,
    next_record: u64,
    root: NodeId,
}

impl PrefetchTree {
    /// A tree whose root decides iteration 0 from `theta0`. `iterations`
    /// bounds the absolute iterations nodes may be created for.
    pub fn new(
        model: TargetModel,
        stream: DeviateStream,
        kind: ProposalKind,
        theta0: &[f64],
        adapter: ScaleAdapter,
        iterations: u64,
    ) -> Result<Self> {
        if iterations == 0 {
            return Err(Error::invalid("iteration budget must be at least 1"));
        }
        let lp = model.log_prior(theta0)?;
        let mut tree = Self {
            model,
            stream,
            kind,
            iterations,
            nodes: Vec::new(),
            free: Vec::new(),
            records: BTreeMap::new(),
            next_record: 0,
            root: NodeId(0),
        };
        let state = tree.insert_record(theta0.into(), lp);
        let root = tree.make_node(None, None, 0, state, adapter);
        tree.root = root;
        Ok(tree)
    }

    fn insert_record(&mut self, state: Arc<[f64]>, log_prior: f64) -> RecordId {
        let id = RecordId(self.next_record);
        self.next_record += 1;
        self.records.insert(id, EvaluationRecord::new(id, state, log_prior));
        id
    }

    fn make_node(
        &mut self,
        parent: Option<NodeId>,
        branch: Option<Branch>,
        iteration: u64,
        state: RecordId,
        adapter: ScaleAdapter,
    ) -> NodeId {
        let theta = self.records[&state].state.clone();
        let proposal = propose(self.kind, &self.stream, &theta, iteration, &adapter);
        let lp = self.model.log_prior(&proposal).unwrap_or(f64::NEG_INFINITY);
        let proposal = self.insert_record(proposal.into(), lp);
        let node = TreeNode {
            parent,
            branch,
            iteration,
            state,
            proposal,
            log_r: self.stream.threshold_deviate(iteration).ln(),
            adapter,
            predictor: 0.0,
            utility: 0.0,
            children: None,
        };
        match self.free.pop() {
            Some(slot) => {
                self.nodes[slot] = Some(node);
                NodeId(slot)
            }
            None => {
                self.nodes.push(Some(node));
                NodeId(self.nodes.len() - 1)
            }
        }
    }

    pub fn model(&self) -> &TargetModel {
        &self.model
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    pub fn root_iteration(&self) -> u64 {
        self.node(self.root).iteration
    }

    pub fn iterations(&self) -> u64 {
        self.iterations
    }

    pub fn node(&self, id: NodeId) -> &TreeNode {
        self.nodes[id.0].as_ref().expect("live node")
    }

    fn node_mut(&mut self, id: NodeId) -> &mut TreeNode {
        self.nodes[id.0].as_mut().expect("live node")
    }

    pub fn record(&self, id: RecordId) -> &EvaluationRecord {
        &self.records[&id]
    }

    pub fn record_mut(&mut self, id: RecordId) -> Option<&mut EvaluationRecord> {
        self.records.get_mut(&id)
    }

    pub fn contains_record(&self, id: RecordId) -> bool {
        self.records.contains_key(&id)
    }

    pub fn records(&self) -> impl Iterator<Item = &EvaluationRecord> {
        self.records.values()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len() - self.free.len()
    }

    pub fn depth(&self, id: NodeId) -> usize {
        (self.node(id).iteration - self.root_iteration()) as usize
    }

    /// Whether `expand` may create children for this node.
    pub fn is_expandable(&self, id: NodeId) -> bool {
        let n = self.node(id);
        n.children.is_none() && n.iteration + 1 < self.iterations
    }

    /// Creates both children. Returns `(accept, reject)`.
    pub fn expand(&mut self, id: NodeId) -> Result<(NodeId, NodeId)> {
        if !self.is_expandable(id) {
            return Err(Error::invalid(format!("node {id:?} cannot be expanded")));
        }
        let (iteration, state, proposal, adapter) = {
            let n = self.node(id);
            (n.iteration + 1, n.state, n.proposal, n.adapter)
        };
        let reject = self.make_node(
            Some(id),
            Some(Branch::Reject),
            iteration,
            state,
            adapter.updated(false, iteration),
        );
        let accept = self.make_node(
            Some(id),
            Some(Branch::Accept),
            iteration,
            proposal,
            adapter.updated(true, iteration),
        );
        self.node_mut(id).children = Some([reject, accept]);
        Ok((accept, reject))
    }

    /// Live nodes in breadth-first order, reject child before accept child.
    pub fn bfs(&self) -> Vec<NodeView> {
        let mut out = vec![NodeView {
            id: self.root,
            depth: 0,
            path: Vec::new(),
        }];
        let mut i = 0;
        while i < out.len() {
            let (id, depth) = (out[i].id, out[i].depth);
            if let Some(children) = self.node(id).children {
                for (child, branch) in children.into_iter().zip([Branch::Reject, Branch::Accept]) {
                    let mut path = out[i].path.clone();
                    path.push(branch);
                    out.push(NodeView {
                        id: child,
                        depth: depth + 1,
                        path,
                    });
                }
            }
            i += 1;
        }
        out
    }

    fn oracle_log_posterior(&mut self, id: RecordId) -> f64 {
        let n_batches = self.model.n_batches();
        let rec = self.records.get_mut(&id).expect("live record");
        if rec.is_complete(n_batches) {
            return rec.partial.log_posterior();
        }
        if let Some(v) = rec.oracle {
            return v;
        }
        let v = evaluate_full(&self.model, &rec.state)
            .map(|pe| pe.log_posterior())
            .unwrap_or(f64::NAN);
        rec.oracle = Some(v);
        v
    }

    /// The accept probability of `node`'s own decision under `config`.
    pub fn branch_probability(&mut self, id: NodeId, alpha_hat: f64, config: &PredictorConfig) -> f64 {
        let node = self.node(id);
        let (state, proposal, log_r) = (node.state, node.proposal, node.log_r);
        match config.mode {
            PredictorMode::Constant(p) => p.clamp(0.0, 1.0),
            PredictorMode::Oracle => {
                let cur = self.oracle_log_posterior(state);
                let prop = self.oracle_log_posterior(proposal);
                if estimator::exact_indicator(log_r, cur, prop) {
                    1.0
                } else {
                    0.0
                }
            }
            PredictorMode::Estimated => {
                let evidence = self.evidence(state, proposal, log_r, config);
                evidence.unwrap_or_else(|| prior_probability(config.fallback, alpha_hat, log_r))
            }
        }
    }

    /// Subsample predictor for a node, or `None` when there is not yet
    /// enough common progress on both records.
    fn evidence(&self, state: RecordId, proposal: RecordId, log_r: f64, config: &PredictorConfig) -> Option<f64> {
        let cur = &self.records[&state];
        let prop = &self.records[&proposal];
        if prop.partial.log_prior == f64::NEG_INFINITY {
            return Some(0.0);
        }
        let common = cur.batches_done().min(prop.batches_done());
        if common < config.m_min_batches.max(1) {
            return None;
        }
        let (a, b) = (cur.prefix(common), prop.prefix(common));
        if a.m < 2 {
            return None;
        }
        let c_tilde = match config.error_model {
            ErrorModel::Difference => config.c_tilde,
            ErrorModel::Independent => 0.0,
        };
        PredictorInputs::from_partials(&a, &b, self.model.n_data(), c_tilde, log_r)
            .and_then(|inputs| inputs.probability())
            .ok()
    }

    /// Recomputes every node's predictor and utility from the root down.
    pub fn refresh(&mut self, alpha_hat: f64, config: &PredictorConfig) -> Vec<NodeView> {
        let order = self.bfs();
        for view in &order {
            let psi = self.branch_probability(view.id, alpha_hat, config);
            let node = self.node(view.id);
            let utility = match (node.parent, node.branch) {
                (Some(p), Some(branch)) => {
                    let parent = self.node(p);
                    parent.utility * edge_probability(parent.predictor, branch)
                }
                _ => 1.0,
            };
            let node = self.node_mut(view.id);
            node.predictor = psi;
            node.utility = utility;
        }
        order
    }

    /// Product of the branch probabilities along the path from the root,
    /// using the predictors currently stored on the ancestors.
    pub fn node_utility(&self, id: NodeId) -> f64 {
        let mut u = 1.0;
        let mut cur = id;
        while let (Some(p), Some(branch)) = (self.node(cur).parent, self.node(cur).branch) {
            if cur == self.root {
                break;
            }
            u *= edge_probability(self.node(p).predictor, branch);
            cur = p;
        }
        u
    }

    /// The root's accept decision, once both of its records are complete.
    pub fn root_outcome(&self) -> Option<bool> {
        let n_batches = self.model.n_batches();
        let root = self.node(self.root);
        let cur = &self.records[&root.state];
        let prop = &self.records[&root.proposal];
        (cur.is_complete(n_batches) && prop.is_complete(n_batches)).then(|| {
            estimator::exact_indicator(root.log_r, cur.partial.log_posterior(), prop.partial.log_posterior())
        })
    }

    /// Moves the root to the child selected by `accepted`, dropping the
    /// sibling subtree. Records no longer referenced by any surviving node
    /// are returned so callers can settle their accounting and owners.
    pub fn advance_root(&mut self, accepted: bool) -> Result<Vec<EvaluationRecord>> {
        if self.root_outcome().is_none() {
            return Err(Error::invalid("root decision is not resolved"));
        }
        let old = self.root;
        if self.node(old).children.is_none() {
            self.expand(old)?;
        }
        let branch = Branch::from_accepted(accepted);
        let keep = self.node(old).child(branch).expect("expanded");
        let mut stack = vec![old];
        while let Some(id) = stack.pop() {
            let node = self.nodes[id.0].take().expect("live node");
            self.free.push(id.0);
            if let Some(children) = node.children {
                stack.extend(children.into_iter().filter(|&c| c != keep));
            }
        }
        self.root = keep;
        let root = self.node_mut(keep);
        root.parent = None;
        root.branch = None;

        let mut live = std::collections::BTreeSet::new();
        for view in self.bfs() {
            let n = self.node(view.id);
            live.insert(n.state);
            live.insert(n.proposal);
        }
        let dead: Vec<RecordId> = self.records.keys().filter(|id| !live.contains(id)).copied().collect();
        Ok(dead.into_iter().filter_map(|id| self.records.remove(&id)).collect())
    }

    pub fn snapshot(&self) -> TreeSnapshot {
        let nodes = self
            .bfs()
            .into_iter()
            .map(|v| {
                let n = self.node(v.id);
                NodeSnapshot {
                    path: v.path.iter().map(|b| b.bit()).collect(),
                    depth: v.depth,
                    iteration: n.iteration,
                    log_r: n.log_r,
                    predictor: n.predictor,
                    utility: n.utility,
                    state_batches: self.records[&n.state].batches_done(),
                    proposal_batches: self.records[&n.proposal].batches_done(),
                    proposal_owner: self.records[&n.proposal].owner,
                }
            })
            .collect();
        TreeSnapshot {
            root_iteration: self.root_iteration(),
            nodes,
        }
    }
}

pub fn edge_probability(psi: f64, branch: Branch) -> f64 {
    match branch {
        Branch::Accept => psi,
        Branch::Reject => 1.0 - psi,
    }
}

/// Accept probability for a node with no subsample evidence.
pub fn prior_probability(fallback: PriorFallback, alpha_hat: f64, log_r: f64) -> f64 {
    match fallback {
        PriorFallback::Alpha => alpha_hat,
        // alpha_hat * u_median / u with u_median = 1/2.
        PriorFallback::Threshold => (alpha_hat * (-std::f64::consts::LN_2 - log_r).exp()).min(1.0),
    }
}
