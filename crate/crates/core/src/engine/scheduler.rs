//! Choosing which evaluations the workers should run.
//!
//! The scheduler ranks every incomplete evaluation record by the utility of
//! the node that needs it, keeps the top `J` in flight, and preempts a busy
//! worker only when a waiting candidate beats it by the hysteresis factor.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::tree::{Branch, RecordId, WorkerId};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SchedulerConfig {
    /// A waiting candidate displaces a busy worker only if its utility
    /// exceeds the worker's by this factor.
    pub hysteresis: f64,
    /// The tree keeps at most `leaf_budget * J` leaves.
    pub leaf_budget: usize,
    /// Maximum depth below the root; defaults to `J`.
    pub max_depth: Option<usize>,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        Self {
            hysteresis: 1.5,
            leaf_budget: 4,
            max_depth: None,
        }
    }
}

/// One incomplete record and the position of the node that needs it.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub record: RecordId,
    pub utility: f64,
    pub depth: usize,
    pub path: Vec<Branch>,
    /// The root's current-state record, which precedes the root proposal.
    pub is_state: bool,
    /// Root records must always be in flight.
    pub forced: bool,
    pub batches_done: usize,
}

/// Priority order: higher utility, then shallower, then the state record,
/// then the reject-first (lower) path.
pub fn rank(a: &Candidate, b: &Candidate) -> Ordering {
    b.utility
        .total_cmp(&a.utility)
        .then(a.depth.cmp(&b.depth))
        .then(b.is_state.cmp(&a.is_state))
        .then_with(|| a.path.iter().map(branch_key).cmp(b.path.iter().map(branch_key)))
        .then(a.record.cmp(&b.record))
}

fn branch_key(b: &Branch) -> u8 {
    match b {
        Branch::Reject => 0,
        Branch::Accept => 1,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Assign {
        worker: WorkerId,
        record: RecordId,
        resume_from: usize,
    },
    Abandon {
        worker: WorkerId,
        record: RecordId,
    },
}

/// Computes the assignment changes for one scheduling round.
///
/// `workers[w]` is the record worker `w` is currently running. Candidates
/// with zero utility are never scheduled. A worker whose record is not
/// among the candidates counts as having zero utility.
pub fn scheduler_step(
    candidates: &[Candidate],
    workers: &[Option<RecordId>],
    slots: usize,
    hysteresis: f64,
) -> Vec<Command> {
    let mut ranked: Vec<&Candidate> = candidates.iter().filter(|c| c.utility > 0.0 || c.forced).collect();
    ranked.sort_by(|a, b| rank(a, b));
    let target: Vec<&Candidate> = ranked.iter().take(slots).copied().collect();

    let utility_of = |r: RecordId| candidates.iter().find(|c| c.record == r).map_or(0.0, |c| c.utility);
    let in_target = |r: RecordId| target.iter().any(|c| c.record == r);

    let mut idle: Vec<WorkerId> = (0..workers.len()).filter(|&w| workers[w].is_none()).collect();
    idle.reverse();
    // Busy workers that may be preempted, lowest utility last so `pop`
    // yields the cheapest victim.
    let mut victims: Vec<(WorkerId, RecordId, f64)> = workers
        .iter()
        .enumerate()
        .filter_map(|(w, r)| r.map(|r| (w, r, utility_of(r))))
        .filter(|&(_, r, _)| !in_target(r))
        .collect();
    victims.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)));

    let mut commands = Vec::new();
    for c in target {
        if workers.contains(&Some(c.record)) {
            continue;
        }
        let worker = if let Some(w) = idle.pop() {
            w
        } else {
            match victims.last() {
                Some(&(w, r, u)) if c.forced || u * hysteresis < c.utility => {
                    victims.pop();
                    commands.push(Command::Abandon { worker: w, record: r });
                    w
                }
                _ => break,
            }
        };
        commands.push(Command::Assign {
            worker,
            record: c.record,
            resume_from: c.batches_done,
        });
    }
    commands
}
