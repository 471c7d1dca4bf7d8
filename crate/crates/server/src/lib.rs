//! WebSocket front end for a live simulation session.
//!
//! One controlling client at a time talks to `/session`. The session itself
//! ticks on a dedicated thread; connections only enqueue commands and read
//! the latest frame, so a slow client skips frames instead of building a
//! backlog.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::Sender;
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::Response;
use axum::routing::get;
use axum::Router;
use futures_util::{SinkExt, StreamExt};
use log::{debug, error, info, warn};
use thiserror::Error;
use tokio::sync::{broadcast, oneshot, watch};

use softbody_core::protocol::{decode_command, FrameEncoder, ServerMessage};
use softbody_core::session::{Command, FrameSnapshot, Session, StateInfo};

pub const DEFAULT_PORT: u16 = 8080;
pub const SESSION_PATH: &str = "/session";

/// Ticks the loop may fall behind before it stops trying to catch up.
const MAX_LAG_TICKS: u32 = 5;

#[derive(Debug, Error)]
pub enum ServerError {
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: SocketAddr, source: std::io::Error },
    #[error("server failed: {0}")]
    Io(#[from] std::io::Error),
}

struct Shared {
    commands: Sender<Command>,
    frames: watch::Receiver<Option<Arc<FrameSnapshot>>>,
    state: watch::Receiver<StateInfo>,
    events: broadcast::Sender<ServerMessage>,
    controller: AtomicBool,
}

/// A running server. Dropping it without calling [`ServerHandle::shutdown`]
/// leaves the threads running until the process exits.
pub struct ServerHandle {
    local_addr: SocketAddr,
    stop: Arc<AtomicBool>,
    http_stop: Option<oneshot::Sender<()>>,
    http: tokio::task::JoinHandle<std::io::Result<()>>,
    ticker: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    /// Stops accepting connections, closes open ones and halts the loop.
    pub async fn shutdown(mut self) -> Result<(), ServerError> {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(tx) = self.http_stop.take() {
            let _ = tx.send(());
        }
        let served = (&mut self.http).await.map_err(|e| std::io::Error::other(e.to_string()))?;
        if let Some(t) = self.ticker.take() {
            let _ = tokio::task::spawn_blocking(move || t.join()).await;
        }
        served.map_err(ServerError::from)
    }
}

/// Binds `addr`, starts ticking `session` every `dt` seconds and serves the
/// protocol. Must be called inside a Tokio runtime.
pub async fn serve(session: Session, addr: SocketAddr, dt: f64) -> Result<ServerHandle, ServerError> {
    let listener = tokio::net::TcpListener::bind(addr).await.map_err(|source| ServerError::Bind { addr, source })?;
    let local_addr = listener.local_addr()?;

    let (frame_tx, frame_rx) = watch::channel(None);
    let (state_tx, state_rx) = watch::channel(session.state_info());
    let (event_tx, _) = broadcast::channel(256);
    let shared = Arc::new(Shared {
        commands: session.command_sender(),
        frames: frame_rx,
        state: state_rx,
        events: event_tx.clone(),
        controller: AtomicBool::new(false),
    });

    let stop = Arc::new(AtomicBool::new(false));
    let ticker = {
        let stop = Arc::clone(&stop);
        std::thread::Builder::new()
            .name("session-loop".into())
            .spawn(move || run_loop(session, dt, stop, frame_tx, state_tx, event_tx))?
    };

    let app = Router::new().route(SESSION_PATH, get(upgrade)).with_state(shared);
    let (http_stop, stopped) = oneshot::channel::<()>();
    let http = tokio::spawn(async move {
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = stopped.await;
            })
            .await
    });
    info!("serving ws://{local_addr}{SESSION_PATH}");
    Ok(ServerHandle { local_addr, stop, http_stop: Some(http_stop), http, ticker: Some(ticker) })
}

fn run_loop(
    mut session: Session,
    dt: f64,
    stop: Arc<AtomicBool>,
    frames: watch::Sender<Option<Arc<FrameSnapshot>>>,
    state: watch::Sender<StateInfo>,
    events: broadcast::Sender<ServerMessage>,
) {
    let period = Duration::from_secs_f64(dt);
    let mut deadline = Instant::now();
    while !stop.load(Ordering::SeqCst) {
        match session.tick(dt) {
            Ok(out) => {
                for e in &out.events {
                    let _ = events.send(ServerMessage::from(e));
                }
                state.send_if_modified(|s| {
                    let now = session.state_info();
                    std::mem::replace(s, now) != now
                });
                frames.send_replace(Some(Arc::new(out.snapshot)));
            }
            Err(e) => {
                error!("session loop stopped: {e}");
                let _ = events.send(ServerMessage::error("session_stopped", e.to_string()));
                return;
            }
        }
        deadline += period;
        let now = Instant::now();
        if deadline > now {
            std::thread::sleep(deadline - now);
        } else if now - deadline > period * MAX_LAG_TICKS {
            debug!("session loop behind by {:?}, resynchronizing", now - deadline);
            deadline = now;
        }
    }
}

async fn upgrade(ws: WebSocketUpgrade, State(shared): State<Arc<Shared>>) -> Response {
    ws.on_upgrade(move |socket| connection(socket, shared))
}

async fn send(socket: &mut WebSocket, msg: &ServerMessage) -> bool {
    socket.send(Message::Text(msg.to_json().into())).await.is_ok()
}

async fn connection(mut socket: WebSocket, shared: Arc<Shared>) {
    if shared.controller.compare_exchange(false, true, Ordering::SeqCst, Ordering::SeqCst).is_err() {
        info!("rejecting second controller");
        send(&mut socket, &ServerMessage::error("busy", "another client controls this session")).await;
        let _ = socket.send(Message::Close(None)).await;
        return;
    }
    info!("controller connected");
    let _release = Release(&shared.controller);
    serve_controller(socket, &shared).await;
    info!("controller disconnected");
}

struct Release<'a>(&'a AtomicBool);

impl Drop for Release<'_> {
    fn drop(&mut self) {
        self.0.store(false, Ordering::SeqCst);
    }
}

async fn serve_controller(socket: WebSocket, shared: &Shared) {
    let (mut sink, mut stream) = socket.split();
    let mut frames = shared.frames.clone();
    let mut events = shared.events.subscribe();
    let mut encoder = FrameEncoder::default();
    let mut last_t = f64::NEG_INFINITY;

    let s = *shared.state.borrow();
    let hello =
        ServerMessage::State { mode: s.mode, integrator: s.integrator, dimension: s.dimension, recording: s.recording };
    if sink.send(Message::Text(hello.to_json().into())).await.is_err() {
        return;
    }
    frames.mark_changed();

    loop {
        let outgoing = tokio::select! {
            incoming = stream.next() => match incoming {
                Some(Ok(Message::Text(text))) => match decode_command(text.as_bytes()) {
                    Ok(cmd) => {
                        if shared.commands.send(cmd).is_ok() { None } else { Some(ServerMessage::error("session_stopped", "the session loop is not running")) }
                    }
                    Err(e) => {
                        warn!("{e}");
                        Some(ServerMessage::error(e.code(), e.to_string()))
                    }
                },
                Some(Ok(Message::Binary(_))) => Some(ServerMessage::error("bad_message", "binary messages are not supported")),
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => return,
                Some(Ok(_)) => None,
            },
            changed = frames.changed() => {
                if changed.is_err() {
                    return;
                }
                let snapshot = frames.borrow_and_update().clone();
                match snapshot {
                    Some(s) if s.t > last_t => {
                        last_t = s.t;
                        Some(encoder.encode(&s))
                    }
                    _ => None,
                }
            }
            event = events.recv() => match event {
                Ok(msg) => Some(msg),
                Err(broadcast::error::RecvError::Lagged(n)) => {
                    warn!("controller missed {n} events");
                    None
                }
                Err(broadcast::error::RecvError::Closed) => return,
            },
        };
        if let Some(msg) = outgoing {
            if sink.send(Message::Text(msg.to_json().into())).await.is_err() {
                return;
            }
        }
    }
}
