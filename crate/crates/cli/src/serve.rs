//! Static tile HTTP plus the collab protocol for one project.

use std::fs::File;
use std::net::{SocketAddr, TcpListener};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::thread::{self, JoinHandle};

use cloudatelier_core::collab::server::{self, Hub, ServerHandle, Session};
use cloudatelier_core::collab::Project;
use cloudatelier_core::octree::{MANIFEST_FILE, NODES_DIR};
use cloudatelier_core::segment::{BYPRODUCT_BIN, BYPRODUCT_JSON};
use cloudatelier_core::{NodeCode, ProjectConfig};
use tiny_http::{Header, Method, Request, Response, Server, StatusCode};

use crate::error::CliError;

const HTTP_WORKERS: usize = 4;
/// Subdirectory of the data directory holding the op log and snapshots.
pub const COLLAB_DIR: &str = "collab";

pub struct Running {
    pub http_addr: SocketAddr,
    pub collab_addr: SocketAddr,
    pub session: Arc<Session>,
    http: Arc<Server>,
    workers: Vec<JoinHandle<()>>,
    collab: Option<ServerHandle>,
}

impl Running {
    pub fn shutdown(mut self) {
        self.stop();
    }

    /// Blocks until the collab accept loop ends.
    pub fn wait(mut self) {
        if let Some(c) = self.collab.take() {
            c.join();
        }
        self.stop();
    }

    fn stop(&mut self) {
        if let Some(c) = self.collab.take() {
            c.shutdown();
        }
        self.http.unblock();
        for _ in 1..self.workers.len() {
            self.http.unblock();
        }
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

impl Drop for Running {
    fn drop(&mut self) {
        self.stop();
    }
}

pub fn start(
    cfg: &ProjectConfig,
    http: SocketAddr,
    collab: SocketAddr,
) -> Result<Running, CliError> {
    let project = Project::open(
        &cfg.data_dir.join(COLLAB_DIR),
        &cfg.project_id,
        cfg.snapshot_every,
    )?;
    let mut hub = Hub::new();
    let session = hub.add(cfg.clone(), project);
    let collab_handle = server::spawn(TcpListener::bind(collab)?, Arc::new(hub))?;

    let http_server = Arc::new(
        Server::http(http).map_err(|e| CliError::data("IO", format!("cannot bind {http}: {e}")))?,
    );
    let http_addr = http_server
        .server_addr()
        .to_ip()
        .ok_or_else(|| CliError::data("IO", "http server has no IP address"))?;
    let root = Arc::new(StaticRoot {
        project_id: cfg.project_id.clone(),
        data_dir: cfg.data_dir.clone(),
    });
    let workers = (0..HTTP_WORKERS)
        .map(|_| {
            let server = http_server.clone();
            let root = root.clone();
            thread::spawn(move || {
                while let Ok(req) = server.recv() {
                    root.respond(req);
                }
            })
        })
        .collect();
    tracing::info!(%http_addr, collab_addr = %collab_handle.addr(), project = %cfg.project_id, "serving");
    Ok(Running {
        http_addr,
        collab_addr: collab_handle.addr(),
        session,
        http: http_server,
        workers,
        collab: Some(collab_handle),
    })
}

struct StaticRoot {
    project_id: String,
    data_dir: PathBuf,
}

impl StaticRoot {
    /// Maps a request path onto a file in the data directory. Only the
    /// manifest, node tiles and byproduct files are exposed.
    fn resolve(&self, url: &str) -> Option<(PathBuf, &'static str)> {
        let path = url.split(['?', '#']).next()?;
        let rest = path
            .strip_prefix("/projects/")?
            .strip_prefix(self.project_id.as_str())?;
        match rest {
            "/manifest.json" => Some((self.data_dir.join(MANIFEST_FILE), "application/json")),
            "/byproduct.json" => Some((self.data_dir.join(BYPRODUCT_JSON), "application/json")),
            "/byproduct.bin" => Some((
                self.data_dir.join(BYPRODUCT_BIN),
                "application/octet-stream",
            )),
            _ => {
                let name = rest.strip_prefix("/nodes/")?.strip_suffix(".bin")?;
                let code: NodeCode = name.parse().ok()?;
                let file = self.data_dir.join(NODES_DIR).join(format!("{code}.bin"));
                Some((file, "application/octet-stream"))
            }
        }
    }

    fn respond(&self, req: Request) {
        let method = req.method().clone();
        let result = match method {
            Method::Get | Method::Head => match self.resolve(req.url()) {
                Some((path, mime)) => serve_file(req, &path, mime, method == Method::Head),
                None => req.respond(text(404, "not found")),
            },
            _ => req.respond(text(405, "method not allowed")),
        };
        if let Err(e) = result {
            tracing::debug!(error = %e, "http response failed");
        }
    }
}

fn header(name: &str, value: &str) -> Header {
    Header::from_bytes(name.as_bytes(), value.as_bytes()).expect("static header")
}

fn text(status: u16, body: &str) -> Response<std::io::Cursor<Vec<u8>>> {
    Response::from_string(body)
        .with_status_code(StatusCode(status))
        .with_header(header("Content-Type", "text/plain; charset=utf-8"))
        .with_header(header("Access-Control-Allow-Origin", "*"))
}

fn serve_file(req: Request, path: &Path, mime: &str, head: bool) -> std::io::Result<()> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(_) => return req.respond(text(404, "not found")),
    };
    let len = file.metadata()?.len() as usize;
    let headers = [
        header("Content-Type", mime),
        header("Access-Control-Allow-Origin", "*"),
    ];
    if head {
        let mut r = Response::empty(200).with_header(headers[0].clone());
        r.add_header(headers[1].clone());
        r.add_header(header("Content-Length", &len.to_string()));
        return req.respond(r);
    }
    let r = Response::new(StatusCode(200), headers.to_vec(), file, Some(len), None)
        .with_chunked_threshold(usize::MAX);
    req.respond(r)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn only_index_files_resolve() {
        let root = StaticRoot {
            project_id: "site".into(),
            data_dir: PathBuf::from("/d"),
        };
        let ok = |u: &str| root.resolve(u).map(|(p, _)| p);
        assert_eq!(
            ok("/projects/site/manifest.json"),
            Some(PathBuf::from("/d/manifest.json"))
        );
        assert_eq!(
            ok("/projects/site/nodes/r04.bin"),
            Some(PathBuf::from("/d/nodes/r04.bin"))
        );
        assert_eq!(
            ok("/projects/site/byproduct.bin?x=1"),
            Some(PathBuf::from("/d/byproduct.bin"))
        );
        for bad in [
            "/projects/other/manifest.json",
            "/projects/site/nodes/../manifest.json.bin",
            "/projects/site/nodes/r9.bin",
            "/projects/site/collab/oplog.ndjson",
            "/projects/sitex/manifest.json",
        ] {
            assert_eq!(ok(bad), None, "{bad}");
        }
    }
}
