use std::collections::VecDeque;
use std::io::{ErrorKind, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::time::Duration;

use super::wire::{decode, encode, RecordBuffer};
use super::{Envelope, Message, Transport};
use crate::error::{Error, Result};
use crate::Scalar;

struct Outgoing {
    stream: TcpStream,
    pending: VecDeque<u8>,
}

struct Incoming {
    stream: TcpStream,
    buffer: RecordBuffer,
}

/// Socket endpoint: one outgoing connection per peer, opened on first send,
/// and one accepted connection per sending peer. Records use [`super::wire`].
pub struct TcpEndpoint<T> {
    id: usize,
    listener: TcpListener,
    addrs: Vec<SocketAddr>,
    outgoing: Vec<Option<Outgoing>>,
    incoming: Vec<Incoming>,
    stash: Vec<Envelope<T>>,
}

fn link_error(from: usize, to: usize, e: impl std::fmt::Display) -> Error {
    Error::Transport {
        from,
        to,
        message: e.to_string(),
    }
}

/// Endpoints for `num_workers` workers listening on loopback ports.
pub fn tcp_network<T: Scalar>(num_workers: usize) -> Result<Vec<TcpEndpoint<T>>> {
    let listeners = (0..num_workers)
        .map(|_| TcpListener::bind("127.0.0.1:0"))
        .collect::<std::io::Result<Vec<_>>>()?;
    let addrs = listeners
        .iter()
        .map(|l| l.local_addr())
        .collect::<std::io::Result<Vec<_>>>()?;
    listeners
        .into_iter()
        .enumerate()
        .map(|(id, l)| TcpEndpoint::new(id, l, addrs.clone()))
        .collect()
}

impl<T: Scalar> TcpEndpoint<T> {
    /// `addrs[r]` is where worker `r` listens; `listener` must be bound to `addrs[id]`.
    pub fn new(id: usize, listener: TcpListener, addrs: Vec<SocketAddr>) -> Result<Self> {
        listener.set_nonblocking(true)?;
        let outgoing = (0..addrs.len()).map(|_| None).collect();
        Ok(TcpEndpoint {
            id,
            listener,
            addrs,
            outgoing,
            incoming: Vec::new(),
            stash: Vec::new(),
        })
    }

    fn io_error(&self, to: usize, e: impl std::fmt::Display) -> Error {
        link_error(self.id, to, e)
    }

    fn connection(&mut self, to: usize) -> Result<&mut Outgoing> {
        if to >= self.addrs.len() {
            return Err(self.io_error(to, "no such worker"));
        }
        if self.outgoing[to].is_none() {
            let stream = TcpStream::connect(self.addrs[to]).map_err(|e| self.io_error(to, e))?;
            stream.set_nodelay(true).map_err(|e| self.io_error(to, e))?;
            stream.set_nonblocking(true).map_err(|e| self.io_error(to, e))?;
            self.outgoing[to] = Some(Outgoing {
                stream,
                pending: VecDeque::new(),
            });
        }
        Ok(self.outgoing[to].as_mut().unwrap())
    }

    /// Writes as much pending output as the sockets accept without blocking.
    /// Returns true when nothing is left.
    fn push_pending(&mut self) -> Result<bool> {
        let id = self.id;
        let mut drained = true;
        for to in 0..self.outgoing.len() {
            let Some(out) = self.outgoing[to].as_mut() else { continue };
            while !out.pending.is_empty() {
                let (head, _) = out.pending.as_slices();
                match out.stream.write(head) {
                    Ok(0) => return Err(link_error(id, to, "connection closed")),
                    Ok(n) => {
                        out.pending.drain(..n);
                    }
                    Err(e) if e.kind() == ErrorKind::WouldBlock => break,
                    Err(e) if e.kind() == ErrorKind::Interrupted => {}
                    Err(e) => return Err(link_error(id, to, e)),
                }
            }
            drained &= out.pending.is_empty();
        }
        Ok(drained)
    }

    fn pull_incoming(&mut self) -> Result<()> {
        loop {
            match self.listener.accept() {
                Ok((stream, _)) => {
                    stream.set_nonblocking(true)?;
                    self.incoming.push(Incoming {
                        stream,
                        buffer: RecordBuffer::default(),
                    });
                }
                Err(e) if e.kind() == ErrorKind::WouldBlock => break,
                Err(e) if e.kind() == ErrorKind::Interrupted => {}
                Err(e) => return Err(e.into()),
            }
        }
        let mut chunk = [0u8; 64 * 1024];
        let mut closed = Vec::new();
        for (c, conn) in self.incoming.iter_mut().enumerate() {
            loop {
                match conn.stream.read(&mut chunk) {
                    Ok(0) => {
                        closed.push(c);
                        break;
                    }
                    Ok(n) => conn.buffer.extend(&chunk[..n]),
                    Err(e) if e.kind() == ErrorKind::WouldBlock => break,
                    Err(e) if e.kind() == ErrorKind::Interrupted => {}
                    Err(e) => return Err(e.into()),
                }
            }
            while let Some(body) = conn.buffer.next_record()? {
                let (from, message) = decode(&body)?;
                self.stash.push(Envelope {
                    from,
                    to: self.id,
                    message,
                });
            }
        }
        for c in closed.into_iter().rev() {
            if !self.incoming[c].buffer.is_empty() {
                return Err(Error::Format("connection closed mid-record".into()));
            }
            self.incoming.remove(c);
        }
        Ok(())
    }
}

impl<T: Scalar> Transport<T> for TcpEndpoint<T> {
    fn worker(&self) -> usize {
        self.id
    }

    fn send(&mut self, to: usize, message: Message<T>) -> Result<()> {
        let record = encode(self.id, &message);
        self.connection(to)?.pending.extend(record);
        self.push_pending()?;
        Ok(())
    }

    fn poll(&mut self) -> Result<Vec<Envelope<T>>> {
        self.push_pending()?;
        self.pull_incoming()?;
        Ok(std::mem::take(&mut self.stash))
    }

    fn wait(&mut self, timeout: Duration) -> Result<()> {
        self.push_pending()?;
        std::thread::sleep(timeout.min(Duration::from_micros(100)));
        Ok(())
    }

    fn flush(&mut self) -> Result<()> {
        // keep reading while writing so two flushing peers cannot wedge
        while !self.push_pending()? {
            self.pull_incoming()?;
            std::thread::sleep(Duration::from_micros(50));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;

    #[test]
    fn loopback_delivery_in_order() {
        let mut net = tcp_network::<f64>(2).unwrap();
        let big = Matrix::from_fn(50_000, 2, |i, j| (i * 2 + j) as f64 * 0.5);
        let reply = Message::BatchReply {
            request_id: 3,
            coords: big,
            responses: (0..50_000).map(|i| -(i as f64)).collect(),
        };
        net[0].send(1, reply.clone()).unwrap();
        net[0].send(1, Message::Done).unwrap();
        let mut got = Vec::new();
        for _ in 0..100_000 {
            net[0].poll().unwrap();
            got.extend(net[1].poll().unwrap());
            if got.len() == 2 {
                break;
            }
            std::thread::sleep(Duration::from_micros(50));
        }
        assert_eq!(got.len(), 2);
        assert_eq!(got[0].from, 0);
        assert_eq!(got[0].message, reply);
        assert_eq!(got[1].message, Message::Done);
        net[0].flush().unwrap();
    }
}
