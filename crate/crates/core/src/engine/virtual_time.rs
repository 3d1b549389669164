//! Discrete-event simulation of the master and `J` workers.
//!
//! Every batch costs `batch_cost` ticks and master work is free. Events that
//! fall on the same tick are delivered to the master together, in worker
//! order, before it advances the root and reschedules, so a run is a pure
//! function of its inputs.

use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::target::{BatchStats, TargetModel};
use crate::tree::{RecordId, WorkerId};

use super::master::Master;
use super::protocol::{AssignmentId, WorkerMessage};
use super::{ChainOutput, RunConfig, TimeUnit};

struct Job {
    assignment: AssignmentId,
    record: RecordId,
    state: Arc<[f64]>,
    next_batch: usize,
    pending_first: usize,
    pending: Vec<BatchStats>,
    done_at: u64,
}

pub(super) fn run(model: &TargetModel, theta0: &[f64], config: &RunConfig) -> Result<ChainOutput> {
    let mut master = Master::new(model.clone(), theta0, config)?;
    let n_batches = model.n_batches();
    let cost = config.batch_cost;
    let mut jobs: Vec<Option<Job>> = (0..config.workers).map(|_| None).collect();
    let mut now = 0u64;

    let apply = |jobs: &mut Vec<Option<Job>>, master: &mut Master, msgs: Vec<(WorkerId, WorkerMessage)>, now: u64| -> Result<()> {
        for (w, msg) in msgs {
            match msg {
                WorkerMessage::Assign {
                    assignment,
                    record,
                    state,
                    resume_from,
                } => {
                    jobs[w] = Some(Job {
                        assignment,
                        record,
                        state,
                        next_batch: resume_from,
                        pending_first: resume_from,
                        pending: Vec::new(),
                        done_at: now + cost,
                    });
                }
                WorkerMessage::Abandon { assignment } => {
                    let unreported = jobs[w]
                        .take()
                        .filter(|j| j.assignment == assignment)
                        .map_or(0, |j| j.pending.len());
                    master.handle(WorkerMessage::AbandonAck {
                        worker: w,
                        assignment,
                        unreported,
                    })?;
                }
                other => return Err(Error::invalid(format!("unexpected command {other:?}"))),
            }
        }
        Ok(())
    };

    let msgs = master.schedule()?;
    apply(&mut jobs, &mut master, msgs, now)?;
    while !master.is_done() {
        now = jobs
            .iter()
            .flatten()
            .map(|j| j.done_at)
            .min()
            .ok_or_else(|| Error::invalid("scheduler left every worker idle before the chain finished"))?;

        let finishing: Vec<WorkerId> = (0..jobs.len())
            .filter(|&w| jobs[w].as_ref().is_some_and(|j| j.done_at == now))
            .collect();
        let stats: Vec<BatchStats> = finishing
            .par_iter()
            .map(|&w| {
                let j = jobs[w].as_ref().expect("finishing job");
                model.batch_unchecked(&j.state, j.next_batch)
            })
            .collect();

        let mut reports = Vec::new();
        for (&w, s) in finishing.iter().zip(stats) {
            let job = jobs[w].as_mut().expect("finishing job");
            job.pending.push(s);
            job.next_batch += 1;
            let last = job.next_batch == n_batches;
            if last || job.pending.len() >= config.report_interval {
                let batches = std::mem::take(&mut job.pending);
                let first_batch = job.pending_first;
                job.pending_first = job.next_batch;
                let (assignment, record) = (job.assignment, job.record);
                reports.push(if last {
                    WorkerMessage::FinalResult {
                        worker: w,
                        assignment,
                        record,
                        first_batch,
                        batches,
                    }
                } else {
                    WorkerMessage::PartialResult {
                        worker: w,
                        assignment,
                        record,
                        first_batch,
                        batches,
                    }
                });
            }
            if last {
                jobs[w] = None;
            } else {
                job.done_at = now + cost;
            }
        }
        for r in reports {
            master.handle(r)?;
        }
        let msgs = master.advance(now as f64)?;
        apply(&mut jobs, &mut master, msgs, now)?;
        let msgs = master.schedule()?;
        apply(&mut jobs, &mut master, msgs, now)?;
    }
    master.finish(now as f64, TimeUnit::Ticks)
}
