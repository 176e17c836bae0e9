//! Websocket transport and the fixed-rate simulation loop.
//!
//! Three activities share state: the simulation thread reads the latest
//! input slot once per tick; connection tasks write that slot; snapshots go
//! out through a broadcast channel.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::IntoResponse;
use axum::routing::get;
use axum::Router;
use futures_util::{SinkExt, StreamExt};
use prosocial_core::dynamics::{AgentControl, Limits};
use prosocial_core::simulation::Scenario;
use serde::{Deserialize, Serialize};
use tokio::sync::{broadcast, Notify};
use tokio::task::JoinHandle;

use crate::protocol::{input_control, ClientMsg, ServerMsg, SCHEMA};
use crate::session::Session;
use crate::{HitlError, Result};

#[derive(Debug, Clone)]
pub struct ServerOptions {
    /// Planner wall-time budget per tick [s].
    pub tick_budget_s: f64,
    /// Pause when the newest input is older than this.
    pub stale_after: Duration,
    /// Where the finished session's log and recording are written.
    pub output_dir: Option<PathBuf>,
    /// Stop serving once the scenario has run to its end.
    pub exit_when_done: bool,
    pub handshake_timeout: Duration,
}

impl Default for ServerOptions {
    fn default() -> Self {
        Self {
            tick_budget_s: 0.1,
            stale_after: Duration::from_secs(1),
            output_dir: None,
            exit_when_done: true,
            handshake_timeout: Duration::from_secs(5),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub ticks: usize,
    pub overruns: usize,
    pub malformed_messages: u64,
    pub complete: bool,
    pub log_path: Option<PathBuf>,
    pub recording_path: Option<PathBuf>,
}

struct Shared {
    input: Mutex<Option<(AgentControl, Instant)>>,
    clients: AtomicUsize,
    client_paused: AtomicBool,
    malformed: AtomicU64,
    stop: AtomicBool,
    tx: broadcast::Sender<(Arc<str>, bool)>,
    hello: (String, String),
    limits: Limits,
    tick_hz: f64,
    handshake_timeout: Duration,
}

impl Shared {
    fn ingest(&self, text: &str) {
        let msg = match serde_json::from_str::<ClientMsg>(text) {
            Ok(m) if m.schema() == SCHEMA => m,
            _ => {
                self.malformed.fetch_add(1, Ordering::Relaxed);
                return;
            }
        };
        match msg {
            ClientMsg::Input { omega, a, keys, .. } => match input_control(omega, a, keys, &self.limits) {
                Some(u) => *self.input.lock().expect("input slot") = Some((u, Instant::now())),
                None => {
                    self.malformed.fetch_add(1, Ordering::Relaxed);
                }
            },
            ClientMsg::Pause { paused, .. } => self.client_paused.store(paused, Ordering::Relaxed),
            ClientMsg::Hello { .. } => {}
        }
    }

    fn hello(&self, accepted: bool, reason: Option<String>) -> String {
        ServerMsg::Hello {
            schema: SCHEMA,
            accepted,
            reason,
            tick_hz: self.tick_hz,
            human_id: self.hello.0.clone(),
            robot_id: self.hello.1.clone(),
        }
        .to_json()
    }
}

/// Running server; dropping it stops the simulation loop.
pub struct ServerHandle {
    pub local_addr: SocketAddr,
    task: Option<JoinHandle<Result<SessionSummary>>>,
    shared: Arc<Shared>,
}

impl ServerHandle {
    /// Waits for the session to finish.
    pub async fn wait(mut self) -> Result<SessionSummary> {
        let task = self.task.take().expect("handle waited once");
        task.await.map_err(|e| HitlError::Protocol(format!("server task: {e}")))?
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        if self.task.is_some() {
            self.shared.stop.store(true, Ordering::Relaxed);
        }
    }
}

/// Binds `addr` and starts serving `scenario` at `/ws` (also `/`).
pub async fn bind(scenario: Scenario, addr: SocketAddr, options: ServerOptions) -> Result<ServerHandle> {
    let session = Session::new(scenario, Some(options.tick_budget_s))?;
    let (tx, _) = broadcast::channel(64);
    let shared = Arc::new(Shared {
        input: Mutex::new(None),
        clients: AtomicUsize::new(0),
        client_paused: AtomicBool::new(false),
        malformed: AtomicU64::new(0),
        stop: AtomicBool::new(false),
        tx,
        hello: (session.human_id().to_string(), session.robot_id().to_string()),
        limits: *session.human_limits(),
        tick_hz: 10.0,
        handshake_timeout: options.handshake_timeout,
    });
    let listener = tokio::net::TcpListener::bind(addr).await?;
    let local_addr = listener.local_addr()?;
    log::info!("hitl server listening on ws://{local_addr}/ws");

    let app = Router::new().route("/ws", get(upgrade)).route("/", get(upgrade)).with_state(shared.clone());
    let shutdown = Arc::new(Notify::new());
    let server = {
        let shutdown = shutdown.clone();
        tokio::spawn(async move {
            let stopped = async move { shutdown.notified().await };
            axum::serve(listener, app).with_graceful_shutdown(stopped).await
        })
    };
    let sim = {
        let shared = shared.clone();
        tokio::task::spawn_blocking(move || simulate(session, &shared, &options))
    };
    let handle_shared = shared.clone();
    let task = tokio::spawn(async move {
        let summary = sim.await.map_err(|e| HitlError::Protocol(format!("simulation thread: {e}")))?;
        shared.stop.store(true, Ordering::Relaxed);
        // let the final pause message reach clients before closing
        tokio::time::sleep(Duration::from_millis(200)).await;
        shutdown.notify_one();
        let _ = server.await;
        summary
    });
    Ok(ServerHandle { local_addr, task: Some(task), shared: handle_shared })
}

/// Serves until the scenario finishes.
pub async fn serve(scenario: Scenario, addr: SocketAddr, options: ServerOptions) -> Result<SessionSummary> {
    bind(scenario, addr, options).await?.wait().await
}

async fn upgrade(ws: WebSocketUpgrade, State(shared): State<Arc<Shared>>) -> impl IntoResponse {
    ws.on_upgrade(move |socket| connection(socket, shared))
}

async fn connection(socket: WebSocket, shared: Arc<Shared>) {
    let (mut sink, mut stream) = socket.split();
    let first = tokio::time::timeout(shared.handshake_timeout, stream.next()).await;
    let refusal = match first {
        Ok(Some(Ok(Message::Text(t)))) => match serde_json::from_str::<ClientMsg>(&t) {
            Ok(ClientMsg::Hello { schema, .. }) if schema == SCHEMA => None,
            Ok(ClientMsg::Hello { schema, .. }) => Some(format!("schema {schema} not supported (server speaks {SCHEMA})")),
            _ => Some("expected a hello message".to_string()),
        },
        Ok(_) => Some("expected a hello message".to_string()),
        Err(_) => Some("handshake timed out".to_string()),
    };
    if let Some(reason) = refusal {
        log::warn!("refusing client: {reason}");
        let _ = sink.send(Message::Text(shared.hello(false, Some(reason)))).await;
        let _ = sink.close().await;
        return;
    }
    let mut rx = shared.tx.subscribe();
    if sink.send(Message::Text(shared.hello(true, None))).await.is_err() {
        return;
    }
    shared.clients.fetch_add(1, Ordering::SeqCst);
    let forward = tokio::spawn(async move {
        loop {
            match rx.recv().await {
                Ok((text, last)) => {
                    if sink.send(Message::Text(text.to_string())).await.is_err() {
                        break;
                    }
                    if last {
                        break;
                    }
                }
                Err(broadcast::error::RecvError::Lagged(n)) => log::warn!("client lagged by {n} messages"),
                Err(broadcast::error::RecvError::Closed) => break,
            }
        }
        let _ = sink.close().await;
    });
    while let Some(Ok(msg)) = stream.next().await {
        match msg {
            Message::Text(t) => shared.ingest(&t),
            Message::Close(_) => break,
            _ => {}
        }
    }
    shared.clients.fetch_sub(1, Ordering::SeqCst);
    forward.abort();
}

fn simulate(mut session: Session, shared: &Shared, options: &ServerOptions) -> Result<SessionSummary> {
    let period = Duration::from_secs_f64(0.1);
    let mut paused: Option<&'static str> = None;
    let mut next = Instant::now();
    let mut overruns = 0;
    let send = |msg: ServerMsg, last: bool| {
        let _ = shared.tx.send((Arc::from(msg.to_json()), last));
    };
    while !session.is_done() {
        if shared.stop.load(Ordering::Relaxed) {
            break;
        }
        let now = Instant::now();
        if next > now {
            std::thread::sleep(next - now);
        }
        let latest = *shared.input.lock().expect("input slot");
        let reason = if shared.clients.load(Ordering::SeqCst) == 0 {
            Some("no client connected")
        } else if shared.client_paused.load(Ordering::Relaxed) {
            Some("paused by client")
        } else if latest.is_some_and(|(_, at)| at.elapsed() > options.stale_after) {
            Some("input stale")
        } else {
            None
        };
        if let Some(r) = reason {
            if paused != Some(r) {
                log::info!("paused: {r}");
                send(ServerMsg::Pause { schema: SCHEMA, reason: r.into() }, false);
                paused = Some(r);
            }
            next = Instant::now() + Duration::from_millis(20);
            continue;
        }
        paused = None;
        let human = latest.map_or(AgentControl::ZERO, |(u, _)| u);
        let state = session.tick(human)?;
        if state.overrun {
            overruns += 1;
        }
        send(ServerMsg::State { schema: SCHEMA, state }, false);
        next += period;
        if next < Instant::now() {
            next = Instant::now();
        }
    }
    let complete = session.is_done();
    send(ServerMsg::Pause { schema: SCHEMA, reason: if complete { "finished".into() } else { "stopped".into() } }, true);
    let ticks = session.tick_index();
    let (log, recording) = session.finish();
    let (mut log_path, mut recording_path) = (None, None);
    if let Some(dir) = &options.output_dir {
        std::fs::create_dir_all(dir)?;
        let lp = dir.join("session_log.json");
        let rp = dir.join("recording.json");
        std::fs::write(&lp, log.to_json())?;
        std::fs::write(dir.join("session_log.csv"), log.to_csv()?)?;
        std::fs::write(&rp, recording.to_json())?;
        log_path = Some(lp);
        recording_path = Some(rp);
    }
    Ok(SessionSummary { ticks, overruns, malformed_messages: shared.malformed.load(Ordering::Relaxed), complete, log_path, recording_path })
}
