//! The master's state machine, shared by the threaded and virtual-time
//! drivers. It owns the prefetch tree, folds worker reports into it,
//! resolves the root whenever both of its evaluations are complete and
//! issues assignment changes.

use crate::diagnostics::{AcceptanceTracker, ScaleAdapter};
use crate::error::{Error, Result};
use crate::rng::DeviateStream;
use crate::target::TargetModel;
use crate::tree::{PrefetchTree, RecordId, WorkerId};

use super::protocol::{AssignmentId, WorkerMessage};
use super::scheduler::{rank, scheduler_step, Candidate, Command};
use super::{ChainOutput, RunConfig, TimeUnit};

#[derive(Debug, Clone, Copy, Default)]
struct Slot {
    record: Option<RecordId>,
    assignment: Option<AssignmentId>,
}

pub(crate) struct Master {
    tree: PrefetchTree,
    config: RunConfig,
    tracker: AcceptanceTracker,
    slots: Vec<Slot>,
    next_assignment: u64,
    samples: Vec<f64>,
    accept_flags: Vec<bool>,
    times: Vec<f64>,
    batches_total: u64,
    final_adapter: Option<ScaleAdapter>,
}

impl Master {
    pub fn new(model: TargetModel, theta0: &[f64], config: &RunConfig) -> Result<Self> {
        config.validate()?;
        let tree = PrefetchTree::new(
            model,
            DeviateStream::new(config.seed),
            config.proposal.kind,
            theta0,
            config.proposal.adapter(),
            config.iterations,
        )?;
        Ok(Self {
            tree,
            config: config.clone(),
            tracker: config.tracker,
            slots: vec![Slot::default(); config.workers],
            next_assignment: 0,
            samples: Vec::with_capacity(config.iterations as usize * theta0.len()),
            accept_flags: Vec::with_capacity(config.iterations as usize),
            times: Vec::with_capacity(config.iterations as usize),
            batches_total: 0,
            final_adapter: None,
        })
    }

    pub fn is_done(&self) -> bool {
        self.accept_flags.len() as u64 == self.config.iterations
    }

    pub fn has_busy_worker(&self) -> bool {
        self.slots.iter().any(|s| s.assignment.is_some())
    }

    /// Folds one worker report into the tree.
    pub fn handle(&mut self, message: WorkerMessage) -> Result<()> {
        match message {
            WorkerMessage::PartialResult {
                worker,
                assignment,
                record,
                first_batch,
                batches,
            } => self.absorb(worker, assignment, record, first_batch, &batches, false),
            WorkerMessage::FinalResult {
                worker,
                assignment,
                record,
                first_batch,
                batches,
            } => self.absorb(worker, assignment, record, first_batch, &batches, true),
            WorkerMessage::AbandonAck { unreported, .. } => {
                self.batches_total += unreported as u64;
                Ok(())
            }
            WorkerMessage::Failed { worker, reason } => Err(Error::WorkerFailed { worker, reason }),
            other => Err(Error::invalid(format!("master received a master-bound message: {other:?}"))),
        }
    }

    fn absorb(
        &mut self,
        worker: WorkerId,
        assignment: AssignmentId,
        record: RecordId,
        first_batch: usize,
        batches: &[crate::target::BatchStats],
        last: bool,
    ) -> Result<()> {
        self.batches_total += batches.len() as u64;
        let slot = self
            .slots
            .get(worker)
            .copied()
            .ok_or_else(|| Error::invalid(format!("report from unknown worker {worker}")))?;
        if slot.assignment != Some(assignment) || slot.record != Some(record) {
            return Ok(());
        }
        let n_batches = self.tree.model().n_batches();
        let rec = self
            .tree
            .record_mut(record)
            .ok_or_else(|| Error::invalid(format!("report for unknown record {record:?}")))?;
        rec.append(first_batch, batches)?;
        let complete = rec.is_complete(n_batches);
        if complete {
            rec.owner = None;
        }
        if complete || last {
            self.slots[worker] = Slot::default();
        }
        Ok(())
    }

    /// Resolves as many root decisions as possible at time `now` and
    /// returns the abandon messages for work that became irrelevant.
    pub fn advance(&mut self, now: f64) -> Result<Vec<(WorkerId, WorkerMessage)>> {
        let mut out = Vec::new();
        while !self.is_done() {
            let Some(accepted) = self.tree.root_outcome() else { break };
            let root = self.tree.node(self.tree.root()).clone();
            if root.iteration == 0 {
                let lp = self.tree.record(root.state).partial.log_posterior();
                if !lp.is_finite() {
                    return Err(Error::NonFiniteInitial(lp));
                }
            }
            let next = if accepted { root.proposal } else { root.state };
            self.samples.extend_from_slice(&self.tree.record(next).state);
            self.accept_flags.push(accepted);
            self.times.push(now);
            self.tracker.update(accepted);
            if self.is_done() {
                self.final_adapter = Some(root.adapter.updated(accepted, root.iteration + 1));
                break;
            }
            for rec in self.tree.advance_root(accepted)? {
                if let Some(w) = rec.owner {
                    out.push(self.abandon(w));
                }
            }
        }
        if self.is_done() {
            for w in 0..self.slots.len() {
                if self.slots[w].assignment.is_some() {
                    out.push(self.abandon(w));
                }
            }
        }
        Ok(out)
    }

    fn abandon(&mut self, worker: WorkerId) -> (WorkerId, WorkerMessage) {
        let slot = std::mem::take(&mut self.slots[worker]);
        if let Some(r) = slot.record.and_then(|r| self.tree.record_mut(r)) {
            r.owner = None;
        }
        let assignment = slot.assignment.expect("busy worker");
        (worker, WorkerMessage::Abandon { assignment })
    }

    /// Grows the tree toward the most useful work and returns the messages
    /// that bring the workers in line with the current top candidates.
    pub fn schedule(&mut self) -> Result<Vec<(WorkerId, WorkerMessage)>> {
        if self.is_done() {
            return Ok(Vec::new());
        }
        let candidates = self.grow();
        let current: Vec<Option<RecordId>> = self.slots.iter().map(|s| s.record).collect();
        let commands = scheduler_step(&candidates, &current, self.config.workers, self.config.scheduler.hysteresis);
        let mut out = Vec::with_capacity(commands.len());
        for cmd in commands {
            match cmd {
                Command::Abandon { worker, .. } => out.push(self.abandon(worker)),
                Command::Assign {
                    worker,
                    record,
                    resume_from,
                } => {
                    let assignment = AssignmentId(self.next_assignment);
                    self.next_assignment += 1;
                    self.slots[worker] = Slot {
                        record: Some(record),
                        assignment: Some(assignment),
                    };
                    let rec = self.tree.record_mut(record).expect("candidate record is live");
                    rec.owner = Some(worker);
                    out.push((
                        worker,
                        WorkerMessage::Assign {
                            assignment,
                            record,
                            state: rec.state.clone(),
                            resume_from,
                        },
                    ));
                }
            }
        }
        Ok(out)
    }

    /// Refreshes predictors and expands the best leaves while doing so can
    /// put new work among the top `J` candidates.
    fn grow(&mut self) -> Vec<Candidate> {
        let slots = self.config.workers;
        let max_depth = self.config.scheduler.max_depth.unwrap_or(slots);
        let leaf_budget = self.config.scheduler.leaf_budget.max(1) * slots;
        loop {
            let views = self.tree.refresh(self.tracker.alpha_hat, &self.config.predictor);
            let candidates = self.candidates(&views);
            let mut utilities: Vec<f64> = candidates.iter().map(|c| c.utility).filter(|&u| u > 0.0).collect();
            utilities.sort_by(|a, b| b.total_cmp(a));
            let threshold = if utilities.len() >= slots { utilities[slots - 1] } else { 0.0 };

            let leaves: Vec<_> = views.iter().filter(|v| self.tree.node(v.id).children.is_none()).collect();
            if leaves.len() >= leaf_budget {
                return candidates;
            }
            let best = leaves
                .iter()
                .filter(|v| v.depth < max_depth && self.tree.is_expandable(v.id))
                .min_by(|a, b| {
                    let (ua, ub) = (self.tree.node(a.id).utility, self.tree.node(b.id).utility);
                    ub.total_cmp(&ua).then(a.depth.cmp(&b.depth)).then_with(|| a.path.cmp(&b.path))
                });
            match best {
                Some(leaf) if self.tree.node(leaf.id).utility > threshold => {
                    let id = leaf.id;
                    self.tree.expand(id).expect("expandable leaf");
                }
                _ => return candidates,
            }
        }
    }

    fn candidates(&self, views: &[crate::tree::NodeView]) -> Vec<Candidate> {
        let n_batches = self.tree.model().n_batches();
        let mut out = Vec::new();
        let root = self.tree.node(self.tree.root());
        let state = self.tree.record(root.state);
        if !state.is_complete(n_batches) {
            out.push(Candidate {
                record: root.state,
                utility: 1.0,
                depth: 0,
                path: Vec::new(),
                is_state: true,
                forced: true,
                batches_done: state.batches_done(),
            });
        }
        for v in views {
            let node = self.tree.node(v.id);
            let rec = self.tree.record(node.proposal);
            if rec.is_complete(n_batches) {
                continue;
            }
            out.push(Candidate {
                record: node.proposal,
                utility: node.utility,
                depth: v.depth,
                path: v.path.clone(),
                is_state: false,
                forced: v.depth == 0,
                batches_done: rec.batches_done(),
            });
        }
        out.sort_by(rank);
        out
    }

    pub fn finish(self, total_time: f64, unit: TimeUnit) -> Result<ChainOutput> {
        if !self.is_done() {
            return Err(Error::invalid("run ended before the iteration budget was reached"));
        }
        let n_batches = self.tree.model().n_batches() as u64;
        let useful = (self.config.iterations + 1) * n_batches;
        Ok(ChainOutput {
            dim: self.tree.model().dim(),
            samples: self.samples,
            accept_flags: self.accept_flags,
            times: self.times,
            time_unit: unit,
            total_time,
            workers: self.config.workers,
            batches_total: self.batches_total,
            batches_useful: useful,
            batches_wasted: self.batches_total.saturating_sub(useful),
            final_scale: self.final_adapter.map_or(f64::NAN, |a| a.scale()),
        })
    }
}
