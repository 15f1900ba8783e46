//! Single-threaded simulation of the fabric with a seeded scheduler and a
//! network that delays each message by a random number of polls while
//! keeping per-sender order. Used to explore many interleavings of the
//! protocol deterministically.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::rc::Rc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{AuditEvent, AuditKind, Envelope, Message, MessageKind, StepOutcome, Transport, Worker, WorkerAssignment};
use crate::error::{Error, Result};
use crate::partition::{NeighborGraph, PartitionData};
use crate::sgd::TrainSettings;
use crate::svgp::VariationalState;
use crate::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig {
    pub seed: u64,
    /// Chance that a queued message is handed over on a given poll.
    pub delivery_prob: f64,
    /// Relative scheduling weight per worker; empty means uniform.
    pub weights: Vec<f64>,
    /// Abort after this many worker steps.
    pub max_steps: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            seed: 0,
            delivery_prob: 0.5,
            weights: Vec::new(),
            max_steps: 50_000_000,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SimReport<T> {
    pub models: Vec<Option<VariationalState<T>>>,
    pub audit: Vec<AuditEvent>,
    pub steps: u64,
    pub batch_requests: u64,
    /// Requests whose reply never reached the requester.
    pub unanswered_requests: usize,
    /// Messages sent to a worker that had already exited.
    pub post_exit_messages: usize,
    /// Messages left in the network after every worker exited.
    pub undelivered: usize,
    /// For each worker, every worker's completed iterations at the moment it
    /// finished training.
    pub progress_at_finish: Vec<Vec<usize>>,
}

struct SimNet<T> {
    queues: BTreeMap<(usize, usize), VecDeque<Message<T>>>,
    rng: ChaCha8Rng,
    delivery_prob: f64,
    exited: Vec<bool>,
    post_exit: usize,
}

impl<T> SimNet<T> {
    fn in_flight(&self) -> usize {
        self.queues.values().map(VecDeque::len).sum()
    }
}

pub struct SimEndpoint<T> {
    id: usize,
    net: Rc<RefCell<SimNet<T>>>,
}

impl<T> Transport<T> for SimEndpoint<T> {
    fn worker(&self) -> usize {
        self.id
    }

    fn send(&mut self, to: usize, message: Message<T>) -> Result<()> {
        let mut net = self.net.borrow_mut();
        if to >= net.exited.len() {
            return Err(Error::Transport {
                from: self.id,
                to,
                message: "no such worker".into(),
            });
        }
        if net.exited[to] {
            net.post_exit += 1;
        }
        net.queues.entry((self.id, to)).or_default().push_back(message);
        Ok(())
    }

    fn poll(&mut self) -> Result<Vec<Envelope<T>>> {
        let mut net = self.net.borrow_mut();
        let net = &mut *net;
        let mut senders: Vec<usize> = net
            .queues
            .iter()
            .filter(|(&(_, to), q)| to == self.id && !q.is_empty())
            .map(|(&(from, _), _)| from)
            .collect();
        senders.shuffle(&mut net.rng);
        let mut out = Vec::new();
        for from in senders {
            let queue = net.queues.get_mut(&(from, self.id)).unwrap();
            while !queue.is_empty() && net.rng.random_bool(net.delivery_prob) {
                out.push(Envelope {
                    from,
                    to: self.id,
                    message: queue.pop_front().unwrap(),
                });
            }
        }
        Ok(out)
    }
}

/// Trains all partitions in one thread, stepping workers in a random order.
pub fn run_simulated<T: Scalar>(
    parts: &[PartitionData<T>],
    graph: &NeighborGraph,
    settings: &TrainSettings<T>,
    assignment: &WorkerAssignment,
    config: &SimConfig,
) -> Result<SimReport<T>> {
    settings.validate()?;
    assignment.validate(graph)?;
    let n = assignment.num_workers;
    if !config.weights.is_empty() && config.weights.len() != n {
        return Err(Error::config("one scheduling weight per worker is required"));
    }
    if !(config.delivery_prob > 0.0 && config.delivery_prob <= 1.0) {
        return Err(Error::config("delivery probability must lie in (0, 1]"));
    }
    let net = Rc::new(RefCell::new(SimNet {
        queues: BTreeMap::new(),
        rng: ChaCha8Rng::seed_from_u64(config.seed),
        delivery_prob: config.delivery_prob,
        exited: vec![false; n],
        post_exit: 0,
    }));
    let mut workers = (0..n)
        .map(|id| {
            let endpoint = SimEndpoint { id, net: Rc::clone(&net) };
            Worker::new(endpoint, parts, graph, assignment, settings)
        })
        .collect::<Result<Vec<_>>>()?;
    let weights = if config.weights.is_empty() {
        vec![1.0; n]
    } else {
        config.weights.clone()
    };
    let mut scheduler = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed);
    scheduler.set_stream(2);
    let mut progress_at_finish = vec![Vec::new(); n];
    let mut steps = 0u64;
    let mut idle_streak = 0u64;
    loop {
        let live: Vec<usize> = (0..n).filter(|&r| !workers[r].has_exited()).collect();
        if live.is_empty() {
            break;
        }
        let total: f64 = live.iter().map(|&r| weights[r]).sum();
        let mut u = scheduler.random::<f64>() * total;
        let mut pick = *live.last().unwrap();
        for &r in &live {
            if u < weights[r] {
                pick = r;
                break;
            }
            u -= weights[r];
        }
        let was_training = !workers[pick].finished_training();
        let outcome = workers[pick].step()?;
        steps += 1;
        if was_training && workers[pick].finished_training() {
            progress_at_finish[pick] = workers.iter().map(|w| w.iterations_done()).collect();
        }
        match outcome {
            StepOutcome::Exited => {
                net.borrow_mut().exited[pick] = true;
                idle_streak = 0;
            }
            StepOutcome::Progress => idle_streak = 0,
            StepOutcome::Idle => idle_streak += 1,
        }
        if idle_streak > 10_000 * n as u64 && net.borrow().in_flight() == 0 {
            let state: Vec<String> = workers.iter().map(|w| w.describe()).collect();
            return Err(Error::Watchdog {
                worker: pick,
                seconds: 0.0,
                state: format!("deadlock: {}", state.join(" | ")),
            });
        }
        if steps >= config.max_steps {
            return Err(Error::Watchdog {
                worker: pick,
                seconds: 0.0,
                state: format!("step limit {} reached", config.max_steps),
            });
        }
    }

    let (post_exit, undelivered) = {
        let net = net.borrow();
        (net.post_exit, net.in_flight())
    };
    let mut models = vec![None; parts.len()];
    let mut audit = Vec::new();
    let mut batch_requests = 0;
    for w in workers {
        batch_requests += w.requests_sent();
        let (_, trainers, events) = w.into_parts();
        for t in trainers {
            models[t.id] = Some(t.state);
        }
        audit.extend(events);
    }
    Ok(SimReport {
        unanswered_requests: unanswered(&audit),
        models,
        audit,
        steps,
        batch_requests,
        post_exit_messages: post_exit,
        undelivered,
        progress_at_finish,
    })
}

/// Requests sent without a matching reply received by the same worker.
pub fn unanswered(audit: &[AuditEvent]) -> usize {
    let key = |e: &AuditEvent| (e.worker, e.request_id);
    let sent: BTreeSet<_> = audit
        .iter()
        .filter(|e| e.event == AuditKind::Send && e.kind == Some(MessageKind::BatchRequest))
        .map(key)
        .collect();
    let answered: BTreeSet<_> = audit
        .iter()
        .filter(|e| e.event == AuditKind::Recv && e.kind == Some(MessageKind::BatchReply))
        .map(key)
        .collect();
    sent.difference(&answered).count()
}
