//! Real worker threads connected to the master by channels.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use crossbeam_channel::{unbounded, Receiver, Sender, TryRecvError};

use crate::error::{Error, Result};
use crate::target::TargetModel;
use crate::tree::WorkerId;

use super::master::Master;
use super::protocol::WorkerMessage;
use super::{ChainOutput, RunConfig, TimeUnit};

pub(super) fn run(model: &TargetModel, theta0: &[f64], config: &RunConfig) -> Result<ChainOutput> {
    let mut master = Master::new(model.clone(), theta0, config)?;
    let (report_tx, report_rx) = unbounded::<WorkerMessage>();
    let mut command_txs = Vec::with_capacity(config.workers);

    std::thread::scope(|scope| {
        for w in 0..config.workers {
            let (tx, rx) = unbounded();
            command_txs.push(tx);
            let report_tx = report_tx.clone();
            let model = model.clone();
            let interval = config.report_interval;
            scope.spawn(move || worker_loop(w, &model, interval, rx, report_tx));
        }
        drop(report_tx);

        let send = |msgs: Vec<(WorkerId, WorkerMessage)>| -> Result<()> {
            for (w, m) in msgs {
                command_txs[w].send(m).map_err(|_| Error::WorkerFailed {
                    worker: w,
                    reason: "command channel closed".into(),
                })?;
            }
            Ok(())
        };

        let start = Instant::now();
        let result = (|| -> Result<f64> {
            send(master.schedule()?)?;
            while !master.is_done() {
                if !master.has_busy_worker() {
                    return Err(Error::invalid("scheduler left every worker idle before the chain finished"));
                }
                let first = report_rx.recv().map_err(|_| Error::WorkerFailed {
                    worker: usize::MAX,
                    reason: "all workers disconnected".into(),
                })?;
                master.handle(first)?;
                while let Ok(msg) = report_rx.try_recv() {
                    master.handle(msg)?;
                }
                let now = start.elapsed().as_secs_f64();
                send(master.advance(now)?)?;
                send(master.schedule()?)?;
            }
            Ok(start.elapsed().as_secs_f64())
        })();
        for tx in &command_txs {
            let _ = tx.send(WorkerMessage::Shutdown);
        }
        let total = result?;
        // Account for reports that were already in flight at shutdown.
        drop(command_txs);
        while let Ok(msg) = report_rx.recv() {
            if !matches!(msg, WorkerMessage::Failed { .. }) {
                let _ = master.handle(msg);
            }
        }
        master.finish(total, TimeUnit::Seconds)
    })
}

fn worker_loop(
    worker: WorkerId,
    model: &TargetModel,
    interval: usize,
    commands: Receiver<WorkerMessage>,
    reports: Sender<WorkerMessage>,
) {
    let n_batches = model.n_batches();
    let mut next = commands.recv().ok();
    while let Some(msg) = next.take() {
        match msg {
            WorkerMessage::Assign {
                assignment,
                record,
                state,
                resume_from,
            } => {
                let mut b = resume_from;
                let mut first = resume_from;
                let mut pending = Vec::new();
                while b < n_batches {
                    match commands.try_recv() {
                        Ok(WorkerMessage::Abandon { assignment: a }) if a == assignment => {
                            let _ = reports.send(WorkerMessage::AbandonAck {
                                worker,
                                assignment,
                                unreported: pending.len(),
                            });
                            break;
                        }
                        Ok(WorkerMessage::Abandon { .. }) => {}
                        Ok(other) => {
                            // A new command implicitly ends this assignment.
                            next = Some(other);
                            break;
                        }
                        Err(TryRecvError::Disconnected) => return,
                        Err(TryRecvError::Empty) => {}
                    }
                    let stats = match catch_unwind(AssertUnwindSafe(|| model.batch_unchecked(&state, b))) {
                        Ok(s) => s,
                        Err(_) => {
                            let _ = reports.send(WorkerMessage::Failed {
                                worker,
                                reason: format!("likelihood panicked on batch {b}"),
                            });
                            return;
                        }
                    };
                    pending.push(stats);
                    b += 1;
                    if b == n_batches || pending.len() >= interval {
                        let batches = std::mem::take(&mut pending);
                        let msg = if b == n_batches {
                            WorkerMessage::FinalResult {
                                worker,
                                assignment,
                                record,
                                first_batch: first,
                                batches,
                            }
                        } else {
                            WorkerMessage::PartialResult {
                                worker,
                                assignment,
                                record,
                                first_batch: first,
                                batches,
                            }
                        };
                        first = b;
                        if reports.send(msg).is_err() {
                            return;
                        }
                    }
                }
            }
            WorkerMessage::Abandon { assignment } => {
                let _ = reports.send(WorkerMessage::AbandonAck {
                    worker,
                    assignment,
                    unreported: 0,
                });
            }
            _ => return,
        }
        if next.is_none() {
            next = commands.recv().ok();
        }
    }
}
