//! In-process multi-client simulation: clients generate ops from their own
//! (possibly stale) replicas, one server serializes them and every replica
//! receives the broadcast stream in a randomized order.

use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use uuid::Uuid;

use crate::measure::{export_layer, random_layer, random_series, LayerFormat, Vertex3};

use super::client::Replica;
use super::{Action, Actor, CollabError, Event, Payload, Role, SessionOp, SessionState};

/// The four simulated members: one curator, two contributors, one viewer.
pub fn members() -> Vec<Actor> {
    vec![
        Actor::new("cora", Role::Curator),
        Actor::new("carl", Role::Contributor),
        Actor::new("cleo", Role::Contributor),
        Actor::new("vera", Role::Viewer),
    ]
}

#[derive(Debug, Clone)]
pub struct SimReport {
    pub server: SessionState,
    pub replicas: Vec<SessionState>,
    /// Accepted events in server order.
    pub events: Vec<Event>,
    /// Every submission in order as (index into [`members`], op).
    pub submissions: Vec<(usize, SessionOp)>,
    pub submitted: usize,
    pub duplicates: usize,
    /// Rejection counts by error code.
    pub rejected: std::collections::BTreeMap<&'static str, usize>,
}

impl SimReport {
    pub fn converged(&self) -> bool {
        let h = self.server.hash();
        self.replicas.iter().all(|r| r.hash() == h)
    }
}

struct Member {
    actor: Actor,
    client: String,
    next_seq: u64,
    replica: Replica,
    inbox: VecDeque<Event>,
    sent: Vec<SessionOp>,
}

/// Runs `ops` submissions from the four members under `seed`.
pub fn simulate(project_id: &str, seed: u64, ops: usize) -> Result<SimReport, CollabError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut server = SessionState::new(project_id);
    let genesis = server.snapshot();
    let mut members: Vec<Member> = members()
        .into_iter()
        .map(|actor| {
            Ok(Member {
                client: format!("{}-client", actor.name),
                actor,
                next_seq: 1,
                replica: Replica::new(genesis.clone())?,
                inbox: VecDeque::new(),
                sent: Vec::new(),
            })
        })
        .collect::<Result<_, CollabError>>()?;
    let mut report = SimReport {
        server: server.clone(),
        replicas: Vec::new(),
        events: Vec::new(),
        submissions: Vec::new(),
        submitted: 0,
        duplicates: 0,
        rejected: Default::default(),
    };
    while report.submitted < ops {
        let who = rng.gen_range(0..members.len());
        if rng.gen_bool(0.4) {
            deliver(&mut members[who], &mut rng, false)?;
            continue;
        }
        let m = &mut members[who];
        let op = if !m.sent.is_empty() && rng.gen_bool(0.05) {
            m.sent[rng.gen_range(0..m.sent.len())].clone()
        } else {
            let op = random_op(&mut rng, m);
            m.sent.push(op.clone());
            op
        };
        report.submitted += 1;
        report.submissions.push((who, op.clone()));
        match server.apply(&m.actor, &op) {
            Ok(a) if a.duplicate => report.duplicates += 1,
            Ok(a) => {
                let event = Event {
                    seq: a.seq,
                    actor: m.actor.clone(),
                    op,
                };
                for member in members.iter_mut() {
                    member.inbox.push_back(event.clone());
                }
                report.events.push(event);
            }
            Err(e) => *report.rejected.entry(e.code()).or_default() += 1,
        }
    }
    for m in members.iter_mut() {
        deliver(m, &mut rng, true)?;
    }
    report.server = server;
    report.replicas = members
        .into_iter()
        .map(|m| m.replica.state().clone())
        .collect();
    Ok(report)
}

/// Hands a random prefix of the inbox (or all of it) to the replica in a
/// shuffled order.
fn deliver(m: &mut Member, rng: &mut ChaCha8Rng, all: bool) -> Result<(), CollabError> {
    let n = if all {
        m.inbox.len()
    } else {
        rng.gen_range(0..=m.inbox.len())
    };
    let mut batch: Vec<Event> = m.inbox.drain(..n).collect();
    batch.shuffle(rng);
    for e in batch {
        m.replica.receive(e)?;
    }
    Ok(())
}

fn random_op(rng: &mut ChaCha8Rng, m: &mut Member) -> SessionOp {
    let seq = if rng.gen_bool(0.02) && m.next_seq > 1 {
        rng.gen_range(1..m.next_seq)
    } else {
        let s = m.next_seq;
        m.next_seq += 1;
        s
    };
    let view = m.replica.state();
    let live: Vec<Uuid> = view.live.keys().copied().collect();
    let committed: Vec<Uuid> = view.baseline.iter().map(|l| l.document.id).collect();
    let pick_layer = |rng: &mut ChaCha8Rng| -> Uuid {
        match rng.gen_range(0..10) {
            0 if !committed.is_empty() => committed[rng.gen_range(0..committed.len())],
            1 => Uuid::from_bytes(rng.gen()),
            _ if !live.is_empty() => live[rng.gen_range(0..live.len())],
            _ => Uuid::from_bytes(rng.gen()),
        }
    };
    let roll = rng.gen_range(0..100);
    let client = m.client.clone();
    match roll {
        0..=11 => {
            let mut doc = random_layer(rng.gen(), 2);
            doc.id = Uuid::from_bytes(rng.gen());
            SessionOp::new(client, seq, Action::CreateLayer, doc.id)
                .with_payload(Payload::Layer(doc))
        }
        12..=41 => {
            let layer = pick_layer(rng);
            let s = random_series(rng);
            SessionOp::new(client, seq, Action::CreateSeries, layer)
                .with_series(s.id)
                .with_payload(Payload::Series(s))
        }
        42..=71 => {
            let layer = pick_layer(rng);
            let current = view.layer(&layer).and_then(|l| {
                (!l.document.series.is_empty())
                    .then(|| l.document.series[rng.gen_range(0..l.document.series.len())].clone())
            });
            let mut s = match current {
                Some(s) => s,
                None => random_series(rng),
            };
            let base = s.version;
            if rng.gen_bool(0.5) {
                let jitter: f64 = rng.gen_range(-1.0..1.0);
                let vertices = s
                    .vertices
                    .iter()
                    .map(|v| Vertex3::free([v.position[0] + jitter, v.position[1], v.position[2]]))
                    .collect();
                s.set_vertices(vertices);
            } else {
                s.set_label(format!("edit {seq}"));
            }
            let mut op = SessionOp::new(client, seq, Action::UpdateSeries, layer)
                .with_series(s.id)
                .with_payload(Payload::Series(s));
            op.base_version = base;
            op
        }
        72..=81 => {
            let layer = pick_layer(rng);
            let series = view
                .layer(&layer)
                .and_then(|l| l.document.series.first().map(|s| s.id))
                .unwrap_or_else(|| Uuid::from_bytes(rng.gen()));
            SessionOp::new(client, seq, Action::DeleteSeries, layer).with_series(series)
        }
        82..=86 => SessionOp::new(client, seq, Action::DeleteLayer, pick_layer(rng)),
        87..=92 => SessionOp::new(client, seq, Action::CommitLayer, pick_layer(rng)),
        _ => {
            let source = view
                .layer(&pick_layer(rng))
                .map(|l| l.document.clone())
                .unwrap_or_else(|| random_layer(rng.gen(), 3));
            let value = if rng.gen_bool(0.1) {
                serde_json::json!({"schema": "measure/1", "id": "not-a-uuid"})
            } else {
                serde_json::from_slice(&export_layer(&source, LayerFormat::Json))
                    .expect("exported layers parse")
            };
            SessionOp::new(client, seq, Action::ImportLayer, Uuid::nil())
                .with_payload(Payload::Document(value))
        }
    }
}
