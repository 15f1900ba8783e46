use std::collections::VecDeque;
use std::sync::mpsc::{channel, Receiver, RecvTimeoutError, Sender};
use std::time::Duration;

use super::{Envelope, Message, Transport};
use crate::error::{Error, Result};

/// Channel-backed endpoint for workers sharing a process.
pub struct InProcessEndpoint<T> {
    id: usize,
    inbox: Receiver<Envelope<T>>,
    outboxes: Vec<Sender<Envelope<T>>>,
    stash: VecDeque<Envelope<T>>,
}

/// One connected endpoint per worker, in worker order.
pub fn in_process_network<T>(num_workers: usize) -> Vec<InProcessEndpoint<T>> {
    let (senders, receivers): (Vec<_>, Vec<_>) = (0..num_workers).map(|_| channel()).unzip();
    receivers
        .into_iter()
        .enumerate()
        .map(|(id, inbox)| InProcessEndpoint {
            id,
            inbox,
            outboxes: senders.clone(),
            stash: VecDeque::new(),
        })
        .collect()
}

impl<T> Transport<T> for InProcessEndpoint<T> {
    fn worker(&self) -> usize {
        self.id
    }

    fn send(&mut self, to: usize, message: Message<T>) -> Result<()> {
        let transport_error = |message: &str| Error::Transport {
            from: self.id,
            to,
            message: message.to_string(),
        };
        let outbox = self.outboxes.get(to).ok_or_else(|| transport_error("no such worker"))?;
        outbox
            .send(Envelope {
                from: self.id,
                to,
                message,
            })
            .map_err(|_| transport_error("receiver has shut down"))
    }

    fn poll(&mut self) -> Result<Vec<Envelope<T>>> {
        let mut out: Vec<_> = self.stash.drain(..).collect();
        out.extend(self.inbox.try_iter());
        Ok(out)
    }

    fn wait(&mut self, timeout: Duration) -> Result<()> {
        if !self.stash.is_empty() {
            return Ok(());
        }
        match self.inbox.recv_timeout(timeout) {
            Ok(env) => self.stash.push_back(env),
            Err(RecvTimeoutError::Timeout) => {}
            // every sender lives in some endpoint, including this one
            Err(RecvTimeoutError::Disconnected) => unreachable!("own sender keeps the channel open"),
        }
        Ok(())
    }
}
