//! A small HTTP server implementing the expert predict protocol, for tests
//! and local experiments.

use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use tiny_http::{Header, Method, Response, Server};

use super::{Expert, ExpertRequest, ExpertResponse, PREDICT_PATH};
use crate::error::{Error, Result};

/// What the stub answers.
#[derive(Clone)]
pub enum StubBehavior {
    /// The same body for every request, sent verbatim (even if invalid).
    Canned(ExpertResponse),
    /// Delegates to an in-process expert and reports its label by name.
    Expert(Arc<dyn Expert>),
}

pub struct StubServer {
    addr: SocketAddr,
    server: Arc<Server>,
    worker: Option<JoinHandle<()>>,
}

impl StubServer {
    /// Binds `addr` (use port 0 for an ephemeral port) and serves on a
    /// background thread; every request waits `delay` before answering.
    pub fn start(addr: &str, behavior: StubBehavior, delay: Duration) -> Result<Self> {
        let server = Server::http(addr).map_err(|e| Error::Config(format!("cannot bind {addr}: {e}")))?;
        let local = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| Error::Config(format!("{addr} is not an IP address")))?;
        let server = Arc::new(server);
        let srv = Arc::clone(&server);
        let worker = std::thread::spawn(move || {
            for request in srv.incoming_requests() {
                let behavior = behavior.clone();
                std::thread::spawn(move || handle(request, &behavior, delay));
            }
        });
        Ok(StubServer {
            addr: local,
            server,
            worker: Some(worker),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Base URL suitable for `EXPERT_ENDPOINT`.
    pub fn endpoint(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Blocks the calling thread until the server is shut down elsewhere.
    pub fn wait(mut self) {
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}

fn json_response(status: u16, body: String) -> Response<std::io::Cursor<Vec<u8>>> {
    let header = Header::from_bytes(&b"Content-Type"[..], &b"application/json"[..]).expect("static header");
    Response::from_string(body).with_status_code(status).with_header(header)
}

fn handle(mut request: tiny_http::Request, behavior: &StubBehavior, delay: Duration) {
    if request.method() != &Method::Post || request.url() != PREDICT_PATH {
        let _ = request.respond(json_response(404, r#"{"error":"not found"}"#.into()));
        return;
    }
    let mut body = String::new();
    if request.as_reader().read_to_string(&mut body).is_err() {
        let _ = request.respond(json_response(400, r#"{"error":"unreadable body"}"#.into()));
        return;
    }
    let parsed: ExpertRequest = match serde_json::from_str(&body) {
        Ok(r) => r,
        Err(e) => {
            let msg = serde_json::json!({ "error": e.to_string() }).to_string();
            let _ = request.respond(json_response(400, msg));
            return;
        }
    };
    if !delay.is_zero() {
        std::thread::sleep(delay);
    }
    let reply = match behavior {
        StubBehavior::Canned(resp) => Ok(resp.clone()),
        StubBehavior::Expert(expert) => expert.predict(&parsed).and_then(|out| {
            let label = parsed
                .labels
                .get(out.label)
                .cloned()
                .ok_or_else(|| super::ExpertError::UnknownLabel(out.label.to_string()))?;
            Ok(ExpertResponse {
                label,
                confidence: out.confidence,
                model_id: out.model_id,
            })
        }),
    };
    let response = match reply {
        Ok(r) => json_response(200, serde_json::to_string(&r).expect("response serializes")),
        Err(e) => json_response(503, serde_json::json!({ "error": e.to_string() }).to_string()),
    };
    let _ = request.respond(response);
}
