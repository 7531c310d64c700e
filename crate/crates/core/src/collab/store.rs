//! Append-only op log plus periodic snapshots. Recovery loads the latest
//! snapshot and replays the log tail.

use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use crate::measure::to_canonical_json;

use super::{Actor, Applied, CollabError, Event, SessionOp, SessionState, Snapshot};

pub const OPLOG_FILE: &str = "oplog.ndjson";
pub const SNAPSHOT_FILE: &str = "snapshot.json";

pub struct OpLog {
    dir: PathBuf,
    file: File,
    snapshot_every: u64,
}

impl OpLog {
    /// Opens (or creates) the log in `dir` and recovers the state it holds.
    pub fn open(
        dir: &Path,
        project_id: &str,
        snapshot_every: u64,
    ) -> io::Result<(OpLog, SessionState)> {
        fs::create_dir_all(dir)?;
        let mut state = match fs::read(dir.join(SNAPSHOT_FILE)) {
            Ok(bytes) => {
                let snap: Snapshot = serde_json::from_slice(&bytes).map_err(invalid)?;
                SessionState::from_snapshot(snap).map_err(invalid)?
            }
            Err(e) if e.kind() == io::ErrorKind::NotFound => SessionState::new(project_id),
            Err(e) => return Err(e),
        };
        if state.project_id != project_id {
            return Err(invalid(format!(
                "snapshot belongs to project {:?}, not {project_id:?}",
                state.project_id
            )));
        }
        let log_path = dir.join(OPLOG_FILE);
        let good_len = replay_log(&log_path, &mut state)?;
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&log_path)?;
        if file.metadata()?.len() != good_len {
            tracing::warn!(path = %log_path.display(), "dropping torn op log tail");
            file.set_len(good_len)?;
        }
        Ok((
            OpLog {
                dir: dir.to_path_buf(),
                file,
                snapshot_every: snapshot_every.max(1),
            },
            state,
        ))
    }

    pub fn append(&mut self, event: &Event, state: &SessionState) -> io::Result<()> {
        let mut line = serde_json::to_vec(event).expect("events serialize");
        line.push(b'\n');
        self.file.write_all(&line)?;
        self.file.sync_data()?;
        if event.seq % self.snapshot_every == 0 {
            self.write_snapshot(state)?;
        }
        Ok(())
    }

    pub fn write_snapshot(&self, state: &SessionState) -> io::Result<()> {
        let value = serde_json::to_value(state.snapshot()).expect("snapshots serialize");
        let tmp = self.dir.join(format!("{SNAPSHOT_FILE}.tmp"));
        let mut f = File::create(&tmp)?;
        f.write_all(&to_canonical_json(&value))?;
        f.sync_all()?;
        fs::rename(tmp, self.dir.join(SNAPSHOT_FILE))
    }
}

/// Every event in the log at `path`, in order.
pub fn read_events(path: &Path) -> io::Result<Vec<Event>> {
    let mut out = Vec::new();
    let reader = BufReader::new(File::open(path)?);
    for line in reader.lines() {
        let line = line?;
        if !line.is_empty() {
            out.push(serde_json::from_str(&line).map_err(invalid)?);
        }
    }
    Ok(out)
}

/// Applies events newer than `state` and returns the byte length of the
/// complete lines read.
fn replay_log(path: &Path, state: &mut SessionState) -> io::Result<u64> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(0),
        Err(e) => return Err(e),
    };
    let mut reader = BufReader::new(file);
    let mut good = 0u64;
    let mut line = String::new();
    loop {
        line.clear();
        let n = reader.read_line(&mut line)?;
        if n == 0 || !line.ends_with('\n') {
            break;
        }
        let event: Event = serde_json::from_str(&line).map_err(invalid)?;
        if event.seq > state.seq {
            if event.seq != state.seq + 1 {
                return Err(invalid(format!(
                    "op log jumps from {} to {}",
                    state.seq, event.seq
                )));
            }
            let applied = state.apply(&event.actor, &event.op).map_err(invalid)?;
            if applied.seq != event.seq || applied.duplicate {
                return Err(invalid(format!(
                    "op log event {} does not replay",
                    event.seq
                )));
            }
        }
        good += n as u64;
    }
    Ok(good)
}

fn invalid<E: std::fmt::Display>(e: E) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, e.to_string())
}

/// A project's state with optional durable storage.
pub struct Project {
    state: SessionState,
    log: Option<OpLog>,
    poisoned: Option<String>,
}

impl Project {
    pub fn in_memory(project_id: impl Into<String>) -> Self {
        Project {
            state: SessionState::new(project_id),
            log: None,
            poisoned: None,
        }
    }

    pub fn open(dir: &Path, project_id: &str, snapshot_every: u64) -> io::Result<Self> {
        let (log, state) = OpLog::open(dir, project_id, snapshot_every)?;
        Ok(Project {
            state,
            log: Some(log),
            poisoned: None,
        })
    }

    pub fn state(&self) -> &SessionState {
        &self.state
    }

    /// Applies `op` and persists it. Returns the event to broadcast, or
    /// `None` for a duplicate.
    pub fn submit(
        &mut self,
        actor: &Actor,
        op: &SessionOp,
    ) -> Result<(Applied, Option<Event>), CollabError> {
        if let Some(reason) = &self.poisoned {
            return Err(CollabError::Protocol(format!(
                "project storage failed: {reason}"
            )));
        }
        let applied = self.state.apply(actor, op)?;
        if applied.duplicate {
            return Ok((applied, None));
        }
        let event = Event {
            seq: applied.seq,
            actor: actor.clone(),
            op: op.clone(),
        };
        if let Some(log) = &mut self.log {
            if let Err(e) = log.append(&event, &self.state) {
                tracing::error!(error = %e, "op log append failed; project is read-only");
                self.poisoned = Some(e.to_string());
                return Err(CollabError::Protocol(format!(
                    "project storage failed: {e}"
                )));
            }
        }
        Ok((applied, Some(event)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::collab::{Action, Payload, Role};
    use crate::measure::LayerDocument;
    use uuid::Uuid;

    fn create(seq: u64) -> SessionOp {
        let doc = LayerDocument::new(Uuid::from_u128(seq as u128), "l");
        SessionOp::new("c", seq, Action::CreateLayer, doc.id).with_payload(Payload::Layer(doc))
    }

    #[test]
    fn recovery_from_snapshot_and_tail() {
        let dir = tempfile::tempdir().unwrap();
        let a = Actor::new("a", Role::Curator);
        let mut p = Project::open(dir.path(), "p", 3).unwrap();
        for s in 1..=7 {
            p.submit(&a, &create(s)).unwrap();
        }
        let expected = p.state().hash();
        drop(p);
        assert!(dir.path().join(SNAPSHOT_FILE).exists());
        let back = Project::open(dir.path(), "p", 3).unwrap();
        assert_eq!(back.state().hash(), expected);
        assert_eq!(read_events(&dir.path().join(OPLOG_FILE)).unwrap().len(), 7);
    }

    #[test]
    fn torn_tail_is_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let a = Actor::new("a", Role::Curator);
        let mut p = Project::open(dir.path(), "p", 100).unwrap();
        p.submit(&a, &create(1)).unwrap();
        let h = p.state().hash();
        drop(p);
        let mut f = OpenOptions::new()
            .append(true)
            .open(dir.path().join(OPLOG_FILE))
            .unwrap();
        f.write_all(b"{\"seq\":2,\"act").unwrap();
        drop(f);
        let mut p = Project::open(dir.path(), "p", 100).unwrap();
        assert_eq!(p.state().hash(), h);
        p.submit(&a, &create(2)).unwrap();
        drop(p);
        assert_eq!(Project::open(dir.path(), "p", 100).unwrap().state().seq, 2);
    }

    #[test]
    fn duplicates_are_not_logged() {
        let dir = tempfile::tempdir().unwrap();
        let a = Actor::new("a", Role::Curator);
        let mut p = Project::open(dir.path(), "p", 100).unwrap();
        p.submit(&a, &create(1)).unwrap();
        let (applied, event) = p.submit(&a, &create(1)).unwrap();
        assert!(applied.duplicate && event.is_none());
        assert_eq!(read_events(&dir.path().join(OPLOG_FILE)).unwrap().len(), 1);
    }
}
