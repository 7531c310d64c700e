//! Newline-delimited JSON messages. Every message is one JSON object on one
//! line with a `type` member.

use serde::{Deserialize, Serialize};

use crate::measure::MeasurementSeries;

use super::{Actor, CollabError, OpId, Role, SessionOp, Snapshot};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(
    tag = "type",
    rename_all = "lowercase",
    rename_all_fields = "camelCase"
)]
pub enum Message {
    /// Client opens a session.
    Hello {
        project_id: String,
        token: String,
        client: String,
    },
    /// Server accepts a session with the full current state.
    Welcome {
        project_id: String,
        seq: u64,
        user: String,
        role: Role,
        snapshot: Box<Snapshot>,
    },
    Op {
        project_id: String,
        op: SessionOp,
    },
    /// Sent to the issuing client once its op is applied.
    Ack {
        project_id: String,
        seq: u64,
        op_id: OpId,
        #[serde(default)]
        duplicate: bool,
    },
    /// Broadcast to every session member, in sequence order.
    Event {
        project_id: String,
        seq: u64,
        actor: Actor,
        op: SessionOp,
    },
    Error {
        project_id: String,
        error: WireError,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        op_id: Option<OpId>,
    },
    Bye {
        project_id: String,
    },
}

impl Message {
    pub fn project_id(&self) -> &str {
        match self {
            Message::Hello { project_id, .. }
            | Message::Welcome { project_id, .. }
            | Message::Op { project_id, .. }
            | Message::Ack { project_id, .. }
            | Message::Event { project_id, .. }
            | Message::Error { project_id, .. }
            | Message::Bye { project_id } => project_id,
        }
    }

    /// One line of NDJSON, newline included.
    pub fn to_line(&self) -> String {
        let mut s = serde_json::to_string(self).expect("messages serialize");
        s.push('\n');
        s
    }

    pub fn from_line(line: &str) -> Result<Message, CollabError> {
        serde_json::from_str(line.trim_end()).map_err(|e| CollabError::Protocol(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct WireError {
    pub code: String,
    pub detail: String,
    /// The winning series when `code` is StaleVersion.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub current: Option<MeasurementSeries>,
}

impl From<&CollabError> for WireError {
    fn from(e: &CollabError) -> Self {
        WireError {
            code: e.code().to_string(),
            detail: e.to_string(),
            current: match e {
                CollabError::StaleVersion { current } => Some((**current).clone()),
                _ => None,
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::collab::{Action, SessionState};
    use uuid::Uuid;

    #[test]
    fn envelope_shape() {
        let m = Message::Ack {
            project_id: "p".into(),
            seq: 4,
            op_id: OpId {
                client: "c".into(),
                seq: 2,
            },
            duplicate: false,
        };
        let v: serde_json::Value = serde_json::from_str(&m.to_line()).unwrap();
        assert_eq!(v["type"], "ack");
        assert_eq!(v["projectId"], "p");
        assert_eq!(v["seq"], 4);
        assert_eq!(v["opId"]["client"], "c");
    }

    #[test]
    fn every_message_round_trips() {
        let op = SessionOp::new("c", 1, Action::DeleteLayer, Uuid::from_u128(3));
        let msgs = vec![
            Message::Hello {
                project_id: "p".into(),
                token: "t".into(),
                client: "c".into(),
            },
            Message::Welcome {
                project_id: "p".into(),
                seq: 0,
                user: "u".into(),
                role: Role::Viewer,
                snapshot: Box::new(SessionState::new("p").snapshot()),
            },
            Message::Op {
                project_id: "p".into(),
                op: op.clone(),
            },
            Message::Event {
                project_id: "p".into(),
                seq: 1,
                actor: Actor::new("u", Role::Curator),
                op,
            },
            Message::Error {
                project_id: "p".into(),
                error: WireError::from(&CollabError::Unauthorized("x".into())),
                op_id: None,
            },
            Message::Bye {
                project_id: "p".into(),
            },
        ];
        for m in msgs {
            let line = m.to_line();
            assert!(line.ends_with('\n') && !line[..line.len() - 1].contains('\n'));
            assert_eq!(Message::from_line(&line).unwrap(), m);
        }
    }
}
