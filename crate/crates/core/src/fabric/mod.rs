//! Worker fabric: partition ownership, the message schema, transports and the
//! per-worker training loop.
//!
//! Every worker runs the same sequential loop. For each owned partition (in
//! lockstep round-robin) it draws `k′` and the batch indices from that
//! partition's RNG stream. A local `k′` is sliced from memory; a remote one
//! becomes a [`Message::BatchRequest`] carrying the indices, and the worker
//! keeps servicing inbound requests until the matching reply arrives. After
//! each iteration it polls once and answers whatever is waiting. Because the
//! requester chooses the indices, results do not depend on scheduling or on
//! the number of workers.
//!
//! Termination: a worker that has finished its iterations sends
//! [`Message::Done`] to each peer (workers owning neighbors of its
//! partitions) and keeps servicing until it has received `Done` from every
//! peer. Per-sender FIFO delivery guarantees all of a peer's requests arrive
//! before its `Done`.

mod inproc;
pub mod sim;
mod tcp;
pub mod wire;
mod worker;

use std::collections::BTreeSet;
use std::fmt;
use std::io::Write;
use std::time::Duration;

use log::warn;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::partition::NeighborGraph;

pub use inproc::{in_process_network, InProcessEndpoint};
pub use tcp::{tcp_network, TcpEndpoint};
pub use worker::{run_training, run_training_with, AuditEvent, AuditKind, StepOutcome, TrainOutput, Worker};

/// Which worker owns which partition.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WorkerAssignment {
    pub num_workers: usize,
    /// `owner[k]` is the worker owning partition `k`.
    pub owner: Vec<usize>,
}

impl WorkerAssignment {
    /// Contiguous blocks of partition ids. When the count does not divide
    /// evenly the first workers get one extra partition.
    pub fn contiguous(num_partitions: usize, num_workers: usize) -> Result<Self> {
        if num_workers == 0 {
            return Err(Error::config("at least one worker is required"));
        }
        if num_workers > num_partitions {
            return Err(Error::config(format!(
                "{num_workers} workers for {num_partitions} partitions leaves workers idle"
            )));
        }
        if !num_partitions.is_multiple_of(num_workers) {
            warn!("{num_partitions} partitions do not divide evenly over {num_workers} workers; load is unbalanced");
        }
        let base = num_partitions / num_workers;
        let extra = num_partitions % num_workers;
        let mut owner = Vec::with_capacity(num_partitions);
        for r in 0..num_workers {
            let size = base + usize::from(r < extra);
            owner.extend(std::iter::repeat_n(r, size));
        }
        Ok(WorkerAssignment { num_workers, owner })
    }

    pub fn owner_of(&self, partition: usize) -> usize {
        self.owner[partition]
    }

    pub fn owned_by(&self, worker: usize) -> Vec<usize> {
        (0..self.owner.len()).filter(|&k| self.owner[k] == worker).collect()
    }

    pub fn partitions_per_worker(&self) -> Option<usize> {
        self.owner.len().is_multiple_of(self.num_workers).then(|| self.owner.len() / self.num_workers)
    }

    /// Workers owning a neighbor of one of `worker`'s partitions, excluding itself.
    pub fn peers(&self, worker: usize, graph: &NeighborGraph) -> BTreeSet<usize> {
        self.owned_by(worker)
            .into_iter()
            .flat_map(|k| graph.neighbors(k).iter().map(|&n| self.owner[n]))
            .filter(|&r| r != worker)
            .collect()
    }

    pub fn validate(&self, graph: &NeighborGraph) -> Result<()> {
        if self.owner.len() != graph.len() {
            return Err(Error::config(format!(
                "assignment covers {} partitions but the graph has {}",
                self.owner.len(),
                graph.len()
            )));
        }
        if let Some(&r) = self.owner.iter().find(|&&r| r >= self.num_workers) {
            return Err(Error::config(format!("partition assigned to nonexistent worker {r}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Message<T> {
    /// Ask the owner of `of_partition` for the rows `indices` (already drawn
    /// by the requester, `min(batch_size, n_k′)` of them).
    BatchRequest {
        from_partition: usize,
        of_partition: usize,
        batch_size: usize,
        request_id: u64,
        indices: Vec<usize>,
    },
    BatchReply {
        request_id: u64,
        coords: Matrix<T>,
        responses: Vec<T>,
    },
    /// The sender has finished its iterations and will send no more requests.
    Done,
    /// The sender aborted; receivers abort too.
    Shutdown,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MessageKind {
    BatchRequest,
    BatchReply,
    Done,
    Shutdown,
}

impl fmt::Display for MessageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MessageKind::BatchRequest => "batch_request",
            MessageKind::BatchReply => "batch_reply",
            MessageKind::Done => "done",
            MessageKind::Shutdown => "shutdown",
        })
    }
}

impl<T> Message<T> {
    pub fn kind(&self) -> MessageKind {
        match self {
            Message::BatchRequest { .. } => MessageKind::BatchRequest,
            Message::BatchReply { .. } => MessageKind::BatchReply,
            Message::Done => MessageKind::Done,
            Message::Shutdown => MessageKind::Shutdown,
        }
    }

    pub fn request_id(&self) -> Option<u64> {
        match self {
            Message::BatchRequest { request_id, .. } | Message::BatchReply { request_id, .. } => Some(*request_id),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Envelope<T> {
    pub from: usize,
    pub to: usize,
    pub message: Message<T>,
}

/// Point-to-point, reliable, per-sender FIFO messaging between workers.
pub trait Transport<T> {
    /// Id of the worker this endpoint belongs to.
    fn worker(&self) -> usize;

    /// Non-blocking send.
    fn send(&mut self, to: usize, message: Message<T>) -> Result<()>;

    /// Non-blocking receive of everything that has arrived.
    fn poll(&mut self) -> Result<Vec<Envelope<T>>>;

    /// Blocks for up to `timeout` or until a message is likely available.
    fn wait(&mut self, timeout: Duration) -> Result<()> {
        std::thread::sleep(timeout.min(Duration::from_micros(200)));
        Ok(())
    }

    /// Blocks until everything sent so far has left this endpoint.
    fn flush(&mut self) -> Result<()> {
        Ok(())
    }
}

/// Writes audit events as CSV.
pub fn write_audit<W: Write>(events: &[AuditEvent], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "seq", "worker", "event", "peer", "kind", "request_id", "rows", "nanos",
    ])?;
    for e in events {
        out.write_record([
            e.seq.to_string(),
            e.worker.to_string(),
            e.event.to_string(),
            e.peer.map_or(String::new(), |p| p.to_string()),
            e.kind.map_or(String::new(), |k| k.to_string()),
            e.request_id.map_or(String::new(), |r| r.to_string()),
            e.rows.map_or(String::new(), |r| r.to_string()),
            e.nanos.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}
