//! Headless protocol client and a replica that applies broadcast events in
//! server-sequence order.

use std::collections::BTreeMap;
use std::io::{self, BufRead, BufReader, Write};
use std::net::{TcpStream, ToSocketAddrs};

use super::{Actor, CollabError, Event, Message, Role, SessionOp, SessionState, Snapshot};

/// Local copy of a project's state fed by events that may arrive out of order.
#[derive(Debug, Clone)]
pub struct Replica {
    state: SessionState,
    pending: BTreeMap<u64, Event>,
}

impl Replica {
    pub fn new(snapshot: Snapshot) -> Result<Self, CollabError> {
        Ok(Replica {
            state: SessionState::from_snapshot(snapshot)?,
            pending: BTreeMap::new(),
        })
    }

    pub fn state(&self) -> &SessionState {
        &self.state
    }

    /// Events received but not yet applied because an earlier one is missing.
    pub fn pending(&self) -> usize {
        self.pending.len()
    }

    /// Buffers `event` and applies every contiguous event. Events at or below
    /// the current sequence are ignored.
    pub fn receive(&mut self, event: Event) -> Result<(), CollabError> {
        if event.seq <= self.state.seq {
            return Ok(());
        }
        self.pending.insert(event.seq, event);
        while let Some(next) = self.pending.remove(&(self.state.seq + 1)) {
            let applied = self.state.apply(&next.actor, &next.op)?;
            if applied.seq != next.seq || applied.duplicate {
                return Err(CollabError::Conflict(format!(
                    "event {} replayed as {}",
                    next.seq, applied.seq
                )));
            }
        }
        Ok(())
    }
}

/// A connected, authenticated session.
pub struct Client {
    project_id: String,
    client: String,
    actor: Actor,
    next_seq: u64,
    reader: BufReader<TcpStream>,
    writer: TcpStream,
    welcome: Option<Snapshot>,
}

impl Client {
    /// Connects, sends hello and waits for welcome.
    pub fn connect(
        addr: impl ToSocketAddrs,
        project_id: &str,
        token: &str,
        client: &str,
    ) -> io::Result<Client> {
        let writer = TcpStream::connect(addr)?;
        writer.set_nodelay(true)?;
        let reader = BufReader::new(writer.try_clone()?);
        let mut c = Client {
            project_id: project_id.to_string(),
            client: client.to_string(),
            actor: Actor::new("", Role::Viewer),
            next_seq: 1,
            reader,
            writer,
            welcome: None,
        };
        c.send(&Message::Hello {
            project_id: project_id.to_string(),
            token: token.to_string(),
            client: client.to_string(),
        })?;
        match c.recv()? {
            Some(Message::Welcome {
                user,
                role,
                snapshot,
                ..
            }) => {
                c.actor = Actor::new(user, role);
                if let Some(last) = snapshot.state.clients.get(client) {
                    c.next_seq = last + 1;
                }
                c.welcome = Some(*snapshot);
                Ok(c)
            }
            Some(Message::Error { error, .. }) => Err(io::Error::new(
                io::ErrorKind::PermissionDenied,
                format!("{}: {}", error.code, error.detail),
            )),
            other => Err(protocol(format!("expected welcome, got {other:?}"))),
        }
    }

    pub fn actor(&self) -> &Actor {
        &self.actor
    }

    pub fn client_id(&self) -> &str {
        &self.client
    }

    /// The snapshot received with welcome. Taken once.
    pub fn take_welcome(&mut self) -> Option<Snapshot> {
        self.welcome.take()
    }

    /// Next unused client sequence number. Reserved on each call.
    pub fn next_seq(&mut self) -> u64 {
        let s = self.next_seq;
        self.next_seq += 1;
        s
    }

    pub fn send(&mut self, msg: &Message) -> io::Result<()> {
        self.writer.write_all(msg.to_line().as_bytes())
    }

    pub fn submit(&mut self, op: SessionOp) -> io::Result<()> {
        let msg = Message::Op {
            project_id: self.project_id.clone(),
            op,
        };
        self.send(&msg)
    }

    /// Next message, or `None` once the server closes the stream.
    pub fn recv(&mut self) -> io::Result<Option<Message>> {
        let mut line = String::new();
        loop {
            line.clear();
            if self.reader.read_line(&mut line)? == 0 {
                return Ok(None);
            }
            if !line.trim().is_empty() {
                return Message::from_line(&line).map(Some).map_err(protocol);
            }
        }
    }

    /// Sends bye and drains the stream, returning messages received meanwhile.
    pub fn close(mut self) -> io::Result<Vec<Message>> {
        self.send(&Message::Bye {
            project_id: self.project_id.clone(),
        })?;
        let mut rest = Vec::new();
        while let Some(m) = self.recv()? {
            if matches!(m, Message::Bye { .. }) {
                break;
            }
            rest.push(m);
        }
        Ok(rest)
    }
}

fn protocol<E: std::fmt::Display>(e: E) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, e.to_string())
}
