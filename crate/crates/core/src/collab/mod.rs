//! Per-project collaboration: a server-serialized op stream over user-owned
//! overlay layers, curator-gated commits into the baseline, persistence and
//! the NDJSON wire protocol.

pub mod client;
mod config;
mod protocol;
pub mod server;
pub mod sim;
mod state;
mod store;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use uuid::Uuid;

use crate::measure::{LayerDocument, MeasurementSeries};

pub use self::config::{BuildOverrides, ConfigError, ProjectConfig, User, CONFIG_ENV};
pub use self::protocol::{Message, WireError};
pub use self::state::{state_hash, Applied, LayerEntry, SessionState, Snapshot, SNAPSHOT_VERSION};
pub use self::store::{read_events, OpLog, Project, OPLOG_FILE, SNAPSHOT_FILE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Curator,
    Contributor,
    Viewer,
}

/// An authenticated user as seen by the serializer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Actor {
    pub name: String,
    pub role: Role,
}

impl Actor {
    pub fn new(name: impl Into<String>, role: Role) -> Self {
        Actor {
            name: name.into(),
            role,
        }
    }
}

/// Globally unique op identity: the issuing client and its own sequence.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct OpId {
    pub client: String,
    pub seq: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Action {
    CreateLayer,
    CreateSeries,
    UpdateSeries,
    DeleteSeries,
    DeleteLayer,
    CommitLayer,
    ImportLayer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Payload {
    Series(MeasurementSeries),
    Layer(LayerDocument),
    /// An exported layer document, validated on import.
    Document(serde_json::Value),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SessionOp {
    pub id: OpId,
    pub action: Action,
    /// Target layer. Ignored by ImportLayer, which mints a fresh id.
    pub layer: Uuid,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub series: Option<Uuid>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<Payload>,
    /// Version of the target the client last observed.
    #[serde(default)]
    pub base_version: u64,
}

impl SessionOp {
    pub fn new(client: impl Into<String>, seq: u64, action: Action, layer: Uuid) -> Self {
        SessionOp {
            id: OpId {
                client: client.into(),
                seq,
            },
            action,
            layer,
            series: None,
            payload: None,
            base_version: 0,
        }
    }

    pub fn with_series(mut self, series: Uuid) -> Self {
        self.series = Some(series);
        self
    }

    pub fn with_payload(mut self, payload: Payload) -> Self {
        self.payload = Some(payload);
        self
    }
}

/// An accepted op as broadcast to every session member.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub seq: u64,
    pub actor: Actor,
    pub op: SessionOp,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CollabError {
    #[error("stale version: series {} is at version {}", current.id, current.version)]
    StaleVersion { current: Box<MeasurementSeries> },
    #[error("unauthorized: {0}")]
    Unauthorized(String),
    #[error("unknown target: {0}")]
    UnknownTarget(String),
    #[error("bad sequence: client {client} sent {got} after {last}")]
    BadSequence { client: String, got: u64, last: u64 },
    #[error("conflict: {0}")]
    Conflict(String),
    #[error("validation failed: {0}")]
    ValidationFailed(String),
    #[error("protocol error: {0}")]
    Protocol(String),
}

impl CollabError {
    pub fn code(&self) -> &'static str {
        match self {
            CollabError::StaleVersion { .. } => "StaleVersion",
            CollabError::Unauthorized(_) => "Unauthorized",
            CollabError::UnknownTarget(_) => "UnknownTarget",
            CollabError::BadSequence { .. } => "BadSequence",
            CollabError::Conflict(_) => "Conflict",
            CollabError::ValidationFailed(_) => "ValidationFailed",
            CollabError::Protocol(_) => "Protocol",
        }
    }
}
