use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use uuid::Uuid;

use crate::measure::{
    import_layer, to_canonical_json, ImportProvenance, LayerDocument, LayerFormat, MeasureError,
    MeasurementSeries,
};

use super::{Action, Actor, CollabError, Payload, Role, SessionOp};

pub const SNAPSHOT_VERSION: &str = "collab/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct LayerEntry {
    pub document: LayerDocument,
    pub owner: String,
    /// Ids of deleted series. Never reused.
    pub tombstones: BTreeSet<Uuid>,
    pub frozen: bool,
}

/// Converged state of one project. Every replica that applies the same
/// event stream holds an identical value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SessionState {
    pub project_id: String,
    pub seq: u64,
    /// Committed layers in commit order.
    pub baseline: Vec<LayerEntry>,
    pub live: BTreeMap<Uuid, LayerEntry>,
    pub deleted_layers: BTreeSet<Uuid>,
    /// Highest applied client sequence per client.
    pub clients: BTreeMap<String, u64>,
    /// Server sequence of every applied op, by client and client sequence.
    pub applied: BTreeMap<String, BTreeMap<u64, u64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub version: String,
    pub state: SessionState,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Applied {
    pub seq: u64,
    /// The op had already been applied; nothing changed.
    pub duplicate: bool,
}

enum Change {
    CreateLayer(LayerEntry),
    PutSeries {
        layer: Uuid,
        series: MeasurementSeries,
    },
    DeleteSeries {
        layer: Uuid,
        series: Uuid,
    },
    DeleteLayer(Uuid),
    Commit(Uuid),
    Nothing,
}

impl SessionState {
    pub fn new(project_id: impl Into<String>) -> Self {
        SessionState {
            project_id: project_id.into(),
            seq: 0,
            baseline: Vec::new(),
            live: BTreeMap::new(),
            deleted_layers: BTreeSet::new(),
            clients: BTreeMap::new(),
            applied: BTreeMap::new(),
        }
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            version: SNAPSHOT_VERSION.into(),
            state: self.clone(),
        }
    }

    pub fn from_snapshot(snapshot: Snapshot) -> Result<Self, CollabError> {
        if snapshot.version != SNAPSHOT_VERSION {
            return Err(CollabError::ValidationFailed(format!(
                "snapshot version {:?} unsupported",
                snapshot.version
            )));
        }
        Ok(snapshot.state)
    }

    /// SHA-256 of the canonical JSON snapshot.
    pub fn hash(&self) -> [u8; 32] {
        state_hash(&self.snapshot())
    }

    pub fn layer(&self, id: &Uuid) -> Option<&LayerEntry> {
        self.live
            .get(id)
            .or_else(|| self.baseline.iter().find(|l| l.document.id == *id))
    }

    /// Validates `op` against the current state and applies it atomically.
    /// A rejected op leaves the state untouched.
    pub fn apply(&mut self, actor: &Actor, op: &SessionOp) -> Result<Applied, CollabError> {
        if let Some(seq) = self
            .applied
            .get(&op.id.client)
            .and_then(|m| m.get(&op.id.seq))
        {
            return Ok(Applied {
                seq: *seq,
                duplicate: true,
            });
        }
        if actor.role == Role::Viewer {
            return Err(CollabError::Unauthorized(format!(
                "{} is a viewer and cannot write",
                actor.name
            )));
        }
        let last = self.clients.get(&op.id.client).copied().unwrap_or(0);
        if op.id.seq <= last {
            return Err(CollabError::BadSequence {
                client: op.id.client.clone(),
                got: op.id.seq,
                last,
            });
        }
        let seq = self.seq + 1;
        let change = self.plan(actor, op, seq)?;

        match change {
            Change::CreateLayer(entry) => {
                self.live.insert(entry.document.id, entry);
            }
            Change::PutSeries { layer, series } => {
                let doc = &mut self.live.get_mut(&layer).expect("planned").document;
                match doc.series_mut(&series.id) {
                    Some(slot) => *slot = series,
                    None => doc.series.push(series),
                }
            }
            Change::DeleteSeries { layer, series } => {
                let entry = self.live.get_mut(&layer).expect("planned");
                entry.document.series.retain(|s| s.id != series);
                entry.tombstones.insert(series);
            }
            Change::DeleteLayer(id) => {
                self.live.remove(&id);
                self.deleted_layers.insert(id);
            }
            Change::Commit(id) => {
                let mut entry = self.live.remove(&id).expect("planned");
                entry.frozen = true;
                entry.document.base_version = seq;
                self.baseline.push(entry);
            }
            Change::Nothing => {}
        }
        self.seq = seq;
        self.clients.insert(op.id.client.clone(), op.id.seq);
        self.applied
            .entry(op.id.client.clone())
            .or_default()
            .insert(op.id.seq, seq);
        Ok(Applied {
            seq,
            duplicate: false,
        })
    }

    fn plan(&self, actor: &Actor, op: &SessionOp, seq: u64) -> Result<Change, CollabError> {
        match op.action {
            Action::CreateLayer => {
                let Some(Payload::Layer(doc)) = &op.payload else {
                    return Err(missing_payload("CreateLayer", "layer"));
                };
                if doc.id != op.layer {
                    return Err(CollabError::ValidationFailed(
                        "layer document id must match the op target".into(),
                    ));
                }
                if self.layer(&op.layer).is_some() || self.deleted_layers.contains(&op.layer) {
                    return Err(CollabError::Conflict(format!(
                        "layer id {} is already used",
                        op.layer
                    )));
                }
                doc.validate().map_err(validation)?;
                let mut doc = doc.clone();
                doc.base_version = seq;
                Ok(Change::CreateLayer(LayerEntry {
                    document: doc,
                    owner: actor.name.clone(),
                    tombstones: BTreeSet::new(),
                    frozen: false,
                }))
            }
            Action::CreateSeries => {
                let entry = self.writable(actor, &op.layer)?;
                let series = series_payload(op, "CreateSeries")?;
                if entry.document.series(&series.id).is_some()
                    || entry.tombstones.contains(&series.id)
                {
                    return Err(CollabError::Conflict(format!(
                        "series id {} is already used",
                        series.id
                    )));
                }
                series.validate().map_err(validation)?;
                Ok(Change::PutSeries {
                    layer: op.layer,
                    series: series.clone(),
                })
            }
            Action::UpdateSeries => {
                let entry = self.writable(actor, &op.layer)?;
                let series = series_payload(op, "UpdateSeries")?;
                let Some(current) = entry.document.series(&series.id) else {
                    return Err(CollabError::UnknownTarget(format!(
                        "series {} in layer {}",
                        series.id, op.layer
                    )));
                };
                if series.version != current.version + 1 {
                    return Err(CollabError::StaleVersion {
                        current: Box::new(current.clone()),
                    });
                }
                series.validate().map_err(validation)?;
                Ok(Change::PutSeries {
                    layer: op.layer,
                    series: series.clone(),
                })
            }
            Action::DeleteSeries => {
                let entry = self.writable(actor, &op.layer)?;
                let id = op.series.ok_or_else(|| {
                    CollabError::ValidationFailed("DeleteSeries requires a series id".into())
                })?;
                if entry.tombstones.contains(&id) {
                    Ok(Change::Nothing)
                } else if entry.document.series(&id).is_some() {
                    Ok(Change::DeleteSeries {
                        layer: op.layer,
                        series: id,
                    })
                } else {
                    Err(CollabError::UnknownTarget(format!(
                        "series {id} in layer {}",
                        op.layer
                    )))
                }
            }
            Action::DeleteLayer => {
                if self.deleted_layers.contains(&op.layer) {
                    return Ok(Change::Nothing);
                }
                self.writable(actor, &op.layer)?;
                Ok(Change::DeleteLayer(op.layer))
            }
            Action::CommitLayer => {
                if actor.role != Role::Curator {
                    return Err(CollabError::Unauthorized(format!(
                        "{} is not a curator and cannot commit",
                        actor.name
                    )));
                }
                self.writable(actor, &op.layer)?;
                Ok(Change::Commit(op.layer))
            }
            Action::ImportLayer => {
                let Some(Payload::Document(value)) = &op.payload else {
                    return Err(missing_payload("ImportLayer", "document"));
                };
                let original = import_layer(&to_canonical_json(value), LayerFormat::Json)
                    .map_err(validation)?;
                let doc = self.reidentify(original, seq);
                if self.layer(&doc.id).is_some() || self.deleted_layers.contains(&doc.id) {
                    return Err(CollabError::Conflict(format!(
                        "minted layer id {} is already used",
                        doc.id
                    )));
                }
                Ok(Change::CreateLayer(LayerEntry {
                    document: doc,
                    owner: actor.name.clone(),
                    tombstones: BTreeSet::new(),
                    frozen: false,
                }))
            }
        }
    }

    /// Fresh, replica-independent ids for an imported document.
    fn reidentify(&self, mut doc: LayerDocument, seq: u64) -> LayerDocument {
        let ns = Uuid::new_v5(&Uuid::NAMESPACE_URL, self.project_id.as_bytes());
        let mut provenance = ImportProvenance {
            layer_id: doc.id,
            series: BTreeMap::new(),
        };
        doc.id = Uuid::new_v5(&ns, format!("{seq}/layer").as_bytes());
        for (i, s) in doc.series.iter_mut().enumerate() {
            let fresh = Uuid::new_v5(&ns, format!("{seq}/series/{i}").as_bytes());
            provenance.series.insert(fresh, s.id);
            s.id = fresh;
        }
        doc.base_version = seq;
        doc.imported_from = Some(provenance);
        doc
    }

    /// The live layer `id` if `actor` may modify it.
    fn writable(&self, actor: &Actor, id: &Uuid) -> Result<&LayerEntry, CollabError> {
        if self.baseline.iter().any(|l| l.document.id == *id) {
            return Err(CollabError::Unauthorized(format!(
                "layer {id} is committed and frozen"
            )));
        }
        let entry = self
            .live
            .get(id)
            .ok_or_else(|| CollabError::UnknownTarget(format!("layer {id}")))?;
        if actor.role != Role::Curator && entry.owner != actor.name {
            return Err(CollabError::Unauthorized(format!(
                "layer {id} belongs to {}",
                entry.owner
            )));
        }
        Ok(entry)
    }
}

fn series_payload<'a>(
    op: &'a SessionOp,
    action: &str,
) -> Result<&'a MeasurementSeries, CollabError> {
    let Some(Payload::Series(series)) = &op.payload else {
        return Err(missing_payload(action, "series"));
    };
    if op.series != Some(series.id) {
        return Err(CollabError::ValidationFailed(
            "series payload id must match the op target".into(),
        ));
    }
    Ok(series)
}

fn missing_payload(action: &str, kind: &str) -> CollabError {
    CollabError::ValidationFailed(format!("{action} requires a {kind} payload"))
}

fn validation(e: MeasureError) -> CollabError {
    match e {
        MeasureError::ValidationFailed(m) => CollabError::ValidationFailed(m),
        other => CollabError::ValidationFailed(other.to_string()),
    }
}

pub fn state_hash(snapshot: &Snapshot) -> [u8; 32] {
    let value = serde_json::to_value(snapshot).expect("snapshots serialize");
    Sha256::digest(to_canonical_json(&value)).into()
}
