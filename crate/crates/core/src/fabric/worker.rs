use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::time::{Duration, Instant};

use log::{debug, error};

use super::{in_process_network, Envelope, Message, MessageKind, Transport, WorkerAssignment};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::partition::{NeighborGraph, PartitionData};
use crate::sgd::{LocalTrainer, TrainSettings};
use crate::svgp::VariationalState;
use crate::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AuditKind {
    Send,
    Recv,
    Exit,
}

impl fmt::Display for AuditKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AuditKind::Send => "send",
            AuditKind::Recv => "recv",
            AuditKind::Exit => "exit",
        })
    }
}

/// One transport event seen by a worker. `seq` orders a worker's own events.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AuditEvent {
    pub seq: u64,
    pub worker: usize,
    pub event: AuditKind,
    pub peer: Option<usize>,
    pub kind: Option<MessageKind>,
    pub request_id: Option<u64>,
    pub rows: Option<usize>,
    pub nanos: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepOutcome {
    Progress,
    Idle,
    Exited,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Phase {
    Training,
    Awaiting(u64),
    Finishing,
    Exited,
}

const PEER_ABORTED: &str = "aborted by peer";

/// One worker's sequential loop, advanced a step at a time.
pub struct Worker<T, X> {
    id: usize,
    transport: X,
    graph: NeighborGraph,
    owner: Vec<usize>,
    data: BTreeMap<usize, PartitionData<T>>,
    trainers: Vec<LocalTrainer<T>>,
    iterations: usize,
    batch_size: usize,
    iter: usize,
    slot: usize,
    phase: Phase,
    peers: BTreeSet<usize>,
    done_from: BTreeSet<usize>,
    next_request: u64,
    reply: Option<(Matrix<T>, Vec<T>)>,
    expected_rows: usize,
    audit: Vec<AuditEvent>,
    start: Instant,
    requests_sent: u64,
}

impl<T: Scalar, X: Transport<T>> Worker<T, X> {
    pub fn new(
        transport: X,
        parts: &[PartitionData<T>],
        graph: &NeighborGraph,
        assignment: &WorkerAssignment,
        settings: &TrainSettings<T>,
    ) -> Result<Self> {
        let id = transport.worker();
        let owned = assignment.owned_by(id);
        let mut data = BTreeMap::new();
        let mut trainers = Vec::new();
        for &k in &owned {
            let part = &parts[k];
            if !part.is_empty() {
                trainers.push(LocalTrainer::new(part, graph, settings)?);
            }
            data.insert(k, part.clone());
        }
        Ok(Worker {
            id,
            transport,
            graph: graph.clone(),
            owner: assignment.owner.clone(),
            data,
            trainers,
            iterations: settings.iterations,
            batch_size: settings.batch_size,
            iter: 0,
            slot: 0,
            phase: Phase::Training,
            peers: assignment.peers(id, graph),
            done_from: BTreeSet::new(),
            next_request: 0,
            reply: None,
            expected_rows: 0,
            audit: Vec::new(),
            start: Instant::now(),
            requests_sent: 0,
        })
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn has_exited(&self) -> bool {
        self.phase == Phase::Exited
    }

    /// True once the worker has sent its `Done` messages.
    pub fn finished_training(&self) -> bool {
        matches!(self.phase, Phase::Finishing | Phase::Exited)
    }

    pub fn iterations_done(&self) -> usize {
        self.iter
    }

    pub fn requests_sent(&self) -> u64 {
        self.requests_sent
    }

    pub fn audit(&self) -> &[AuditEvent] {
        &self.audit
    }

    pub fn trainers(&self) -> &[LocalTrainer<T>] {
        &self.trainers
    }

    pub fn transport_mut(&mut self) -> &mut X {
        &mut self.transport
    }

    pub fn into_parts(self) -> (X, Vec<LocalTrainer<T>>, Vec<AuditEvent>) {
        (self.transport, self.trainers, self.audit)
    }

    /// Short description of where the loop is, for watchdog reports.
    pub fn describe(&self) -> String {
        let phase = match self.phase {
            Phase::Training => "training".to_string(),
            Phase::Awaiting(id) => format!("awaiting reply {id}"),
            Phase::Finishing => "finished, waiting for peers".to_string(),
            Phase::Exited => "exited".to_string(),
        };
        let missing: Vec<usize> = self.peers.difference(&self.done_from).copied().collect();
        format!(
            "worker {} {phase}; iteration {}/{} slot {}; peers without done {:?}",
            self.id, self.iter, self.iterations, self.slot, missing
        )
    }

    /// Performs one unit of work: a local iteration (plus one service poll),
    /// issuing a remote request, or polling while waiting.
    pub fn step(&mut self) -> Result<StepOutcome> {
        match self.phase {
            Phase::Exited => Ok(StepOutcome::Exited),
            Phase::Training => {
                if self.trainers.is_empty() || self.iter == self.iterations {
                    for peer in self.peers.clone() {
                        self.send(peer, Message::Done)?;
                    }
                    self.phase = Phase::Finishing;
                    return self.check_exit();
                }
                let draw = self.trainers[self.slot].draw(&self.graph);
                let owner = self.owner[draw.source];
                if owner == self.id {
                    let (x, y) = self.data[&draw.source].rows(&draw.indices);
                    self.trainers[self.slot].apply(&x, &y)?;
                    self.advance();
                    self.service()?;
                } else {
                    let request_id = self.next_request;
                    self.next_request += 1;
                    self.expected_rows = draw.indices.len();
                    let from_partition = self.trainers[self.slot].id;
                    self.send(
                        owner,
                        Message::BatchRequest {
                            from_partition,
                            of_partition: draw.source,
                            batch_size: self.batch_size,
                            request_id,
                            indices: draw.indices,
                        },
                    )?;
                    self.requests_sent += 1;
                    self.phase = Phase::Awaiting(request_id);
                }
                Ok(StepOutcome::Progress)
            }
            Phase::Awaiting(_) => {
                self.service()?;
                match self.reply.take() {
                    Some((x, y)) => {
                        self.trainers[self.slot].apply(&x, &y)?;
                        self.advance();
                        self.phase = Phase::Training;
                        Ok(StepOutcome::Progress)
                    }
                    None => Ok(StepOutcome::Idle),
                }
            }
            Phase::Finishing => {
                self.service()?;
                self.check_exit()
            }
        }
    }

    /// Runs the loop to completion, aborting if nothing happens for `watchdog`.
    pub fn run(&mut self, watchdog: Duration) -> Result<()> {
        let mut last_progress = Instant::now();
        loop {
            let outcome = match self.step() {
                Ok(o) => o,
                Err(e) => {
                    self.abort();
                    return Err(e);
                }
            };
            match outcome {
                StepOutcome::Exited => return self.transport.flush(),
                StepOutcome::Progress => last_progress = Instant::now(),
                StepOutcome::Idle => {
                    let waited = last_progress.elapsed();
                    if waited >= watchdog {
                        let state = self.describe();
                        error!("watchdog: {state}");
                        self.abort();
                        return Err(Error::Watchdog {
                            worker: self.id,
                            seconds: waited.as_secs_f64(),
                            state,
                        });
                    }
                    self.transport.wait((watchdog - waited).min(Duration::from_millis(5)))?;
                }
            }
        }
    }

    /// Tells every peer this worker is giving up. Send failures are ignored.
    pub fn abort(&mut self) {
        for peer in self.peers.clone() {
            let _ = self.transport.send(peer, Message::Shutdown);
        }
        let _ = self.transport.flush();
        self.phase = Phase::Exited;
    }

    fn check_exit(&mut self) -> Result<StepOutcome> {
        if self.done_from.is_superset(&self.peers) {
            self.phase = Phase::Exited;
            self.record(AuditKind::Exit, None, None, None, None);
            debug!("worker {} exits", self.id);
            Ok(StepOutcome::Exited)
        } else {
            Ok(StepOutcome::Idle)
        }
    }

    fn advance(&mut self) {
        self.slot += 1;
        if self.slot == self.trainers.len() {
            self.slot = 0;
            self.iter += 1;
        }
    }

    fn send(&mut self, to: usize, message: Message<T>) -> Result<()> {
        let rows = match &message {
            Message::BatchReply { responses, .. } => Some(responses.len()),
            Message::BatchRequest { indices, .. } => Some(indices.len()),
            _ => None,
        };
        self.record(AuditKind::Send, Some(to), Some(message.kind()), message.request_id(), rows);
        self.transport.send(to, message)
    }

    fn record(
        &mut self,
        event: AuditKind,
        peer: Option<usize>,
        kind: Option<MessageKind>,
        request_id: Option<u64>,
        rows: Option<usize>,
    ) {
        self.audit.push(AuditEvent {
            seq: self.audit.len() as u64,
            worker: self.id,
            event,
            peer,
            kind,
            request_id,
            rows,
            nanos: self.start.elapsed().as_nanos() as u64,
        });
    }

    /// Polls once and handles everything that arrived.
    fn service(&mut self) -> Result<()> {
        for env in self.transport.poll()? {
            self.handle(env)?;
        }
        Ok(())
    }

    fn handle(&mut self, env: Envelope<T>) -> Result<()> {
        let Envelope { from, message, .. } = env;
        let rows = match &message {
            Message::BatchReply { responses, .. } => Some(responses.len()),
            Message::BatchRequest { indices, .. } => Some(indices.len()),
            _ => None,
        };
        self.record(AuditKind::Recv, Some(from), Some(message.kind()), message.request_id(), rows);
        let protocol = |message: String| Error::Protocol { worker: self.id, message };
        match message {
            Message::BatchRequest {
                of_partition,
                batch_size,
                request_id,
                indices,
                ..
            } => {
                let reply = service_inbound(self.id, &self.data, of_partition, batch_size, request_id, &indices)?;
                self.send(from, reply)
            }
            Message::BatchReply {
                request_id,
                coords,
                responses,
            } => match self.phase {
                Phase::Awaiting(expected) if expected == request_id && self.reply.is_none() => {
                    if responses.len() != self.expected_rows || coords.rows() != responses.len() {
                        return Err(protocol(format!(
                            "reply {request_id} from worker {from} has {} rows, expected {}",
                            responses.len(),
                            self.expected_rows
                        )));
                    }
                    self.reply = Some((coords, responses));
                    Ok(())
                }
                _ => Err(protocol(format!("unmatched reply id {request_id} from worker {from}"))),
            },
            Message::Done => {
                if !self.peers.contains(&from) {
                    return Err(protocol(format!("done from worker {from}, which is not a peer")));
                }
                if !self.done_from.insert(from) {
                    return Err(protocol(format!("duplicate done from worker {from}")));
                }
                Ok(())
            }
            Message::Shutdown => Err(protocol(format!("{PEER_ABORTED} {from}"))),
        }
    }
}

/// Answers a batch request for an owned partition with the requested rows,
/// verbatim and in request order.
pub(crate) fn service_inbound<T: Scalar>(
    worker: usize,
    owned: &BTreeMap<usize, PartitionData<T>>,
    partition: usize,
    batch_size: usize,
    request_id: u64,
    indices: &[usize],
) -> Result<Message<T>> {
    let part = owned.get(&partition).ok_or(Error::Routing { worker, partition })?;
    if indices.len() != batch_size.min(part.len()) {
        return Err(Error::Protocol {
            worker,
            message: format!(
                "request {request_id} asks for {} rows of partition {partition}; expected min({batch_size}, {})",
                indices.len(),
                part.len()
            ),
        });
    }
    if let Some(&bad) = indices.iter().find(|&&i| i >= part.len()) {
        return Err(Error::Protocol {
            worker,
            message: format!("request {request_id} asks for row {bad} of partition {partition} with {} rows", part.len()),
        });
    }
    let (coords, responses) = part.rows(indices);
    Ok(Message::BatchReply {
        request_id,
        coords,
        responses,
    })
}

/// Result of a distributed training run.
#[derive(Clone, Debug)]
pub struct TrainOutput<T> {
    /// Trained state per partition id; `None` for empty partitions.
    pub models: Vec<Option<VariationalState<T>>>,
    /// Per-partition stochastic objective estimates when tracing is on.
    pub traces: Vec<Vec<T>>,
    pub audit: Vec<AuditEvent>,
    pub seconds: f64,
    pub batch_requests: u64,
    pub skipped_steps: usize,
    /// Messages still undelivered after every worker exited.
    pub stray_messages: usize,
}

impl<T> TrainOutput<T> {
    pub fn messages_sent(&self) -> usize {
        self.audit.iter().filter(|e| e.event == AuditKind::Send).count()
    }
}

/// Runs training with one thread per worker over the in-process transport.
pub fn run_training<T: Scalar>(
    parts: &[PartitionData<T>],
    graph: &NeighborGraph,
    settings: &TrainSettings<T>,
    num_workers: usize,
    watchdog: Duration,
) -> Result<TrainOutput<T>> {
    let assignment = WorkerAssignment::contiguous(parts.len(), num_workers)?;
    run_training_with(parts, graph, settings, &assignment, in_process_network(num_workers), watchdog)
}

/// Runs training with one thread per worker over caller-supplied endpoints,
/// one per worker, in worker order.
pub fn run_training_with<T: Scalar, X: Transport<T> + Send>(
    parts: &[PartitionData<T>],
    graph: &NeighborGraph,
    settings: &TrainSettings<T>,
    assignment: &WorkerAssignment,
    endpoints: Vec<X>,
    watchdog: Duration,
) -> Result<TrainOutput<T>> {
    settings.validate()?;
    assignment.validate(graph)?;
    if parts.len() != graph.len() {
        return Err(Error::config("partition list and neighbor graph disagree"));
    }
    if endpoints.len() != assignment.num_workers {
        return Err(Error::config(format!(
            "{} endpoints for {} workers",
            endpoints.len(),
            assignment.num_workers
        )));
    }
    let start = Instant::now();
    let results: Vec<Result<Worker<T, X>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = endpoints
            .into_iter()
            .map(|endpoint| {
                scope.spawn(move || {
                    let mut worker = Worker::new(endpoint, parts, graph, assignment, settings)?;
                    worker.run(watchdog)?;
                    Ok(worker)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(Error::config("worker thread panicked"))))
            .collect()
    });
    let seconds = start.elapsed().as_secs_f64();

    let mut workers = Vec::with_capacity(results.len());
    let mut errors = Vec::new();
    for r in results {
        match r {
            Ok(w) => workers.push(w),
            Err(e) => errors.push(e),
        }
    }
    if !errors.is_empty() {
        let primary = errors
            .iter()
            .position(|e| !matches!(e, Error::Protocol { message, .. } if message.starts_with(PEER_ABORTED)))
            .unwrap_or(0);
        return Err(errors.swap_remove(primary));
    }

    let mut models = vec![None; parts.len()];
    let mut traces = vec![Vec::new(); parts.len()];
    let mut audit = Vec::new();
    let mut batch_requests = 0;
    let mut skipped_steps = 0;
    let mut endpoints = Vec::new();
    for w in workers {
        batch_requests += w.requests_sent();
        let (endpoint, trainers, events) = w.into_parts();
        for t in trainers {
            skipped_steps += t.skipped;
            traces[t.id] = t.trace;
            models[t.id] = Some(t.state);
        }
        audit.extend(events);
        endpoints.push(endpoint);
    }
    let mut stray_messages = 0;
    for e in &mut endpoints {
        stray_messages += e.poll()?.len();
    }
    Ok(TrainOutput {
        models,
        traces,
        audit,
        seconds,
        batch_requests,
        skipped_steps,
        stray_messages,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn owned() -> BTreeMap<usize, PartitionData<f64>> {
        let x = Matrix::from_row_major(4, 2, vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7]);
        let mut m = BTreeMap::new();
        m.insert(3, PartitionData::new(3, x, vec![1.0, 2.0, 3.0, 4.0]));
        m
    }

    #[test]
    fn service_returns_requested_rows_verbatim() {
        let data = owned();
        let Message::BatchReply { coords, responses, request_id } = service_inbound(0, &data, 3, 2, 7, &[2, 0]).unwrap()
        else {
            panic!("expected a reply");
        };
        assert_eq!(request_id, 7);
        assert_eq!(responses, vec![3.0, 1.0]);
        assert_eq!(coords.row(0), &[0.4, 0.5]);
        assert_eq!(coords.row(1), &[0.0, 0.1]);
    }

    #[test]
    fn service_full_partition_on_exhaustion() {
        let data = owned();
        let Message::BatchReply { responses, .. } = service_inbound(0, &data, 3, 10, 1, &[0, 1, 2, 3]).unwrap() else {
            panic!("expected a reply");
        };
        assert_eq!(responses, data[&3].responses);
    }

    #[test]
    fn service_rejects_unowned_and_out_of_range() {
        let data = owned();
        assert!(matches!(
            service_inbound(2, &data, 5, 1, 0, &[0]),
            Err(Error::Routing { worker: 2, partition: 5 })
        ));
        assert!(matches!(service_inbound(2, &data, 3, 1, 0, &[4]), Err(Error::Protocol { .. })));
        assert!(matches!(service_inbound(2, &data, 3, 2, 0, &[0]), Err(Error::Protocol { .. })));
    }
}
