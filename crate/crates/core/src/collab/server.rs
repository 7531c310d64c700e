//! NDJSON collaboration server over TCP. One serializer (a mutex) per
//! project; projects proceed independently.

use std::collections::BTreeMap;
use std::io::{self, BufRead, BufReader, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{self, Sender};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};

use super::{Actor, CollabError, Message, Project, ProjectConfig, SessionOp, WireError};

struct Inner {
    project: Project,
    subscribers: Vec<(u64, Sender<String>)>,
}

/// One project's serializer plus its members.
pub struct Session {
    config: ProjectConfig,
    inner: Mutex<Inner>,
}

impl Session {
    pub fn new(config: ProjectConfig, project: Project) -> Self {
        Session {
            config,
            inner: Mutex::new(Inner {
                project,
                subscribers: Vec::new(),
            }),
        }
    }

    /// Runs `f` against the current state at a single sequence point.
    pub fn with_state<R>(&self, f: impl FnOnce(&super::SessionState) -> R) -> R {
        f(self.inner.lock().expect("session lock").project.state())
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Inner> {
        self.inner.lock().expect("session lock")
    }
}

/// Every project served by one listener, keyed by project id.
#[derive(Default)]
pub struct Hub {
    sessions: BTreeMap<String, Arc<Session>>,
    next_member: AtomicU64,
}

impl Hub {
    pub fn new() -> Self {
        Hub::default()
    }

    pub fn add(&mut self, config: ProjectConfig, project: Project) -> Arc<Session> {
        let session = Arc::new(Session::new(config.clone(), project));
        self.sessions.insert(config.project_id, session.clone());
        session
    }

    pub fn session(&self, project_id: &str) -> Option<&Arc<Session>> {
        self.sessions.get(project_id)
    }
}

pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Stops accepting connections. Open sessions end when their peers close.
    pub fn shutdown(mut self) {
        self.stop_accepting();
    }

    /// Blocks until the accept loop ends.
    pub fn join(mut self) {
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }

    fn stop_accepting(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        if self.thread.is_some() {
            self.stop_accepting();
        }
    }
}

/// Accepts connections on `listener` in a background thread.
pub fn spawn(listener: TcpListener, hub: Arc<Hub>) -> io::Result<ServerHandle> {
    let addr = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let flag = stop.clone();
    let thread = thread::Builder::new()
        .name("collab-accept".into())
        .spawn(move || {
            for stream in listener.incoming() {
                if flag.load(Ordering::SeqCst) {
                    break;
                }
                match stream {
                    Ok(stream) => {
                        let hub = hub.clone();
                        let _ =
                            thread::Builder::new()
                                .name("collab-conn".into())
                                .spawn(move || {
                                    if let Err(e) = handle(stream, &hub) {
                                        tracing::debug!(error = %e, "collab connection ended");
                                    }
                                });
                    }
                    Err(e) => tracing::warn!(error = %e, "collab accept failed"),
                }
            }
        })?;
    tracing::info!(%addr, "collab server listening");
    Ok(ServerHandle {
        addr,
        stop,
        thread: Some(thread),
    })
}

fn error_line(project_id: &str, e: &CollabError, op: Option<&SessionOp>) -> String {
    Message::Error {
        project_id: project_id.to_string(),
        error: WireError::from(e),
        op_id: op.map(|o| o.id.clone()),
    }
    .to_line()
}

fn handle(stream: TcpStream, hub: &Hub) -> io::Result<()> {
    let peer = stream.peer_addr().ok();
    let mut writer_stream = stream.try_clone()?;
    let (tx, rx) = mpsc::channel::<String>();
    let writer = thread::spawn(move || {
        for line in rx {
            if writer_stream.write_all(line.as_bytes()).is_err() {
                break;
            }
        }
        let _ = writer_stream.flush();
        let _ = writer_stream.shutdown(Shutdown::Write);
    });
    let result = session_loop(BufReader::new(stream), hub, &tx);
    if let Ok(Some((session, member))) = &result {
        session.lock().subscribers.retain(|(id, _)| id != member);
    }
    drop(tx);
    let _ = writer.join();
    tracing::debug!(?peer, "collab connection closed");
    result.map(|_| ())
}

type Membership = Option<(Arc<Session>, u64)>;

fn session_loop(
    reader: BufReader<TcpStream>,
    hub: &Hub,
    tx: &Sender<String>,
) -> io::Result<Membership> {
    let mut member: Membership = None;
    let mut identity: Option<(Actor, String)> = None;
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let msg = match Message::from_line(&line) {
            Ok(m) => m,
            Err(e) => {
                let pid = member
                    .as_ref()
                    .map(|(s, _)| s.config.project_id.as_str())
                    .unwrap_or("");
                let _ = tx.send(error_line(pid, &e, None));
                continue;
            }
        };
        match (msg, &member) {
            (
                Message::Hello {
                    project_id,
                    token,
                    client,
                },
                None,
            ) => {
                let Some(session) = hub.session(&project_id) else {
                    let e = CollabError::UnknownTarget(format!("project {project_id:?}"));
                    let _ = tx.send(error_line(&project_id, &e, None));
                    return Ok(None);
                };
                let Some(actor) = session.config.authenticate(&token) else {
                    let e = CollabError::Unauthorized("unknown token".into());
                    let _ = tx.send(error_line(&project_id, &e, None));
                    return Ok(None);
                };
                let id = hub.next_member.fetch_add(1, Ordering::Relaxed);
                let mut inner = session.lock();
                let snapshot = inner.project.state().snapshot();
                let welcome = Message::Welcome {
                    project_id: project_id.clone(),
                    seq: snapshot.state.seq,
                    user: actor.name.clone(),
                    role: actor.role,
                    snapshot: Box::new(snapshot),
                };
                let _ = tx.send(welcome.to_line());
                inner.subscribers.push((id, tx.clone()));
                drop(inner);
                tracing::info!(project = %project_id, user = %actor.name, %client, "session joined");
                identity = Some((actor, client));
                member = Some((session.clone(), id));
            }
            (Message::Op { project_id, op }, Some((session, _))) => {
                let (actor, client) = identity.as_ref().expect("identity set with membership");
                let own = &session.config.project_id;
                if &project_id != own {
                    let e = CollabError::Protocol(format!("session is bound to project {own:?}"));
                    let _ = tx.send(error_line(own, &e, Some(&op)));
                    continue;
                }
                if &op.id.client != client {
                    let e = CollabError::Protocol(format!(
                        "op client {:?} does not match session client {client:?}",
                        op.id.client
                    ));
                    let _ = tx.send(error_line(own, &e, Some(&op)));
                    continue;
                }
                let mut inner = session.lock();
                match inner.project.submit(actor, &op) {
                    Ok((applied, event)) => {
                        let ack = Message::Ack {
                            project_id: own.clone(),
                            seq: applied.seq,
                            op_id: op.id.clone(),
                            duplicate: applied.duplicate,
                        };
                        let _ = tx.send(ack.to_line());
                        if let Some(event) = event {
                            let line = Message::Event {
                                project_id: own.clone(),
                                seq: event.seq,
                                actor: event.actor,
                                op: event.op,
                            }
                            .to_line();
                            inner
                                .subscribers
                                .retain(|(_, s)| s.send(line.clone()).is_ok());
                        }
                    }
                    Err(e) => {
                        let _ = tx.send(error_line(own, &e, Some(&op)));
                    }
                }
            }
            (Message::Bye { .. }, _) => {
                if let Some((session, _)) = &member {
                    let bye = Message::Bye {
                        project_id: session.config.project_id.clone(),
                    };
                    let _ = tx.send(bye.to_line());
                }
                return Ok(member);
            }
            (other, _) => {
                let expected = if member.is_none() {
                    "hello"
                } else {
                    "op or bye"
                };
                let e = CollabError::Protocol(format!(
                    "unexpected {} message, expected {expected}",
                    message_type(&other)
                ));
                let pid = member
                    .as_ref()
                    .map(|(s, _)| s.config.project_id.clone())
                    .unwrap_or_default();
                let _ = tx.send(error_line(&pid, &e, None));
            }
        }
    }
    Ok(member)
}

fn message_type(m: &Message) -> &'static str {
    match m {
        Message::Hello { .. } => "hello",
        Message::Welcome { .. } => "welcome",
        Message::Op { .. } => "op",
        Message::Ack { .. } => "ack",
        Message::Event { .. } => "event",
        Message::Error { .. } => "error",
        Message::Bye { .. } => "bye",
    }
}
