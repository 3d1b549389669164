//! Messages exchanged between the master and its workers.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::target::BatchStats;
use crate::tree::{RecordId, WorkerId};

/// Identifies one assignment of a record to a worker. Results carrying a
/// stale id (the worker was reassigned meanwhile) are discarded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AssignmentId(pub u64);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum WorkerMessage {
    /// Master to worker: evaluate `state` from batch `resume_from` on.
    Assign {
        assignment: AssignmentId,
        record: RecordId,
        state: Arc<[f64]>,
        resume_from: usize,
    },
    /// Worker to master: per-batch totals for batches
    /// `first_batch..first_batch + batches.len()`.
    PartialResult {
        worker: WorkerId,
        assignment: AssignmentId,
        record: RecordId,
        first_batch: usize,
        batches: Vec<BatchStats>,
    },
    /// Worker to master: the last batches of an evaluation.
    FinalResult {
        worker: WorkerId,
        assignment: AssignmentId,
        record: RecordId,
        first_batch: usize,
        batches: Vec<BatchStats>,
    },
    /// Master to worker: stop the given assignment at the next batch
    /// boundary.
    Abandon { assignment: AssignmentId },
    /// Worker to master: the assignment stopped; `unreported` batches were
    /// computed but never sent.
    AbandonAck {
        worker: WorkerId,
        assignment: AssignmentId,
        unreported: usize,
    },
    /// Master to worker: exit.
    Shutdown,
    /// Worker to master: the evaluation could not be carried out.
    Failed { worker: WorkerId, reason: String },
}
