use std::net::SocketAddr;
use std::time::Duration;

use futures_util::{SinkExt, StreamExt};
use serde_json::{json, Value};
use tokio::net::TcpStream;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{connect_async, MaybeTlsStream, WebSocketStream};

use softbody_core::mesh::Dimension;
use softbody_core::persistence::RecorderConfig;
use softbody_core::scene::SceneConfig;
use softbody_core::session::Session;
use softbody_server::{serve, ServerError, ServerHandle, SESSION_PATH};

type Client = WebSocketStream<MaybeTlsStream<TcpStream>>;

const DT: f64 = 0.01;

fn scene() -> SceneConfig {
    let mut s = SceneConfig::default_for(Dimension::D2);
    s.object.n_outer = 8;
    s.object.stiffness = 200.0;
    s.world.gravity = softbody_core::Vec3::ZERO;
    s.dt = DT;
    s
}

async fn start(save_dir: Option<&std::path::Path>) -> ServerHandle {
    let mut session = Session::new(scene()).unwrap();
    if let Some(dir) = save_dir {
        session.set_recorder_config(RecorderConfig { default_dir: dir.into(), ..Default::default() });
    }
    serve(session, "127.0.0.1:0".parse().unwrap(), DT).await.unwrap()
}

async fn connect(addr: SocketAddr) -> Client {
    connect_async(format!("ws://{addr}{SESSION_PATH}")).await.unwrap().0
}

async fn send(c: &mut Client, v: Value) {
    c.send(Message::Text(v.to_string().into())).await.unwrap();
}

async fn next_json(c: &mut Client) -> Value {
    loop {
        let msg =
            tokio::time::timeout(Duration::from_secs(5), c.next()).await.expect("server went quiet").unwrap().unwrap();
        if let Message::Text(t) = msg {
            return serde_json::from_str(t.as_str()).unwrap();
        }
    }
}

/// Reads until a message of type `kind` arrives, checking frame times on the way.
async fn wait_for(c: &mut Client, kind: &str, last_t: &mut f64) -> Value {
    for _ in 0..2000 {
        let v = next_json(c).await;
        if v["type"] == "frame" {
            let t = v["t"].as_f64().unwrap();
            assert!(t > *last_t, "frame times must increase");
            *last_t = t;
        }
        if v["type"] == kind {
            return v;
        }
    }
    panic!("no {kind} message");
}

fn particle(frame: &Value, id: usize) -> (f64, f64) {
    let p = &frame["objects"][0]["particles"][id];
    (p["px"].as_f64().unwrap(), p["py"].as_f64().unwrap())
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn drag_over_the_wire_moves_the_grabbed_particle() {
    let server = start(None).await;
    let mut c = connect(server.local_addr()).await;
    let mut last_t = f64::NEG_INFINITY;

    let hello = next_json(&mut c).await;
    assert_eq!(hello["type"], "state");
    assert_eq!(hello["mode"], "idle");
    let first = wait_for(&mut c, "frame", &mut last_t).await;
    assert_eq!(first["topology"], true);
    assert_eq!(first["objects"][0]["springs"].as_array().unwrap().len(), 40);
    let second = wait_for(&mut c, "frame", &mut last_t).await;
    assert!(second.get("objects").unwrap()[0].get("springs").is_none());

    send(&mut c, json!({"type": "start"})).await;
    let state = wait_for(&mut c, "state", &mut last_t).await;
    assert_eq!(state["mode"], "running");

    send(&mut c, json!({"type": "drag_start", "x": 1.0, "y": 0.0, "z": 0.0})).await;
    send(&mut c, json!({"type": "drag_move", "x": 3.0, "y": 0.0, "z": 0.0})).await;
    let mut start_x = None;
    let mut end_x = 0.0;
    for _ in 0..30 {
        let f = wait_for(&mut c, "frame", &mut last_t).await;
        if f.get("drag_target").is_some() {
            let (x, _) = particle(&f, 0);
            start_x.get_or_insert(x);
            end_x = x;
        }
    }
    let start_x = start_x.expect("frames with an active drag");
    assert!(end_x > start_x + 0.1, "particle 0 went from {start_x} to {end_x}");

    send(&mut c, json!({"type": "drag_end"})).await;
    send(&mut c, json!({"type": "drag_end"})).await;
    let err = wait_for(&mut c, "error", &mut last_t).await;
    assert_eq!(err["code"], "no_active_drag");

    drop(c);
    server.shutdown().await.unwrap();
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn second_controller_is_busy_and_bad_messages_keep_the_connection() {
    let server = start(None).await;
    let mut first = connect(server.local_addr()).await;
    let mut last_t = f64::NEG_INFINITY;
    assert_eq!(next_json(&mut first).await["type"], "state");

    let mut second = connect(server.local_addr()).await;
    let busy = next_json(&mut second).await;
    assert_eq!(busy, json!({"type": "error", "code": "busy", "message": busy["message"]}));
    assert_eq!(busy["code"], "busy");
    let closed = tokio::time::timeout(Duration::from_secs(5), second.next()).await.unwrap();
    assert!(matches!(closed, Some(Ok(Message::Close(_))) | None | Some(Err(_))));

    first.send(Message::Text("{not json".into())).await.unwrap();
    let err = wait_for(&mut first, "error", &mut last_t).await;
    assert_eq!(err["code"], "bad_message");
    send(&mut first, json!({"type": "warp"})).await;
    assert_eq!(wait_for(&mut first, "error", &mut last_t).await["code"], "bad_message");
    // Still alive.
    wait_for(&mut first, "frame", &mut last_t).await;

    // Once the controller leaves, a new client may take over.
    first.close(None).await.unwrap();
    drop(first);
    let mut third = None;
    for _ in 0..50 {
        let mut c = connect(server.local_addr()).await;
        if next_json(&mut c).await["type"] == "state" {
            third = Some(c);
            break;
        }
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
    assert!(third.is_some());
    drop(third);
    server.shutdown().await.unwrap();
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn save_flow_over_the_wire() {
    let dir = tempfile::tempdir().unwrap();
    let server = start(Some(dir.path())).await;
    let mut c = connect(server.local_addr()).await;
    let mut last_t = f64::NEG_INFINITY;

    send(&mut c, json!({"type": "start_save"})).await;
    for _ in 0..5 {
        wait_for(&mut c, "frame", &mut last_t).await;
    }
    send(&mut c, json!({"type": "stop_save"})).await;
    let prompt = wait_for(&mut c, "save_prompt", &mut last_t).await;
    assert!(prompt["frames"].as_u64().unwrap() >= 5);
    assert_eq!(prompt["default_dir"], dir.path().display().to_string());
    send(&mut c, json!({"type": "save_confirm", "name": "wire"})).await;
    let saved = wait_for(&mut c, "saved", &mut last_t).await;
    let path = std::path::PathBuf::from(saved["path"].as_str().unwrap());
    assert_eq!(path, dir.path().join("wire.xml"));
    let rec = softbody_core::persistence::load_xml_file(&path).unwrap();
    assert_eq!(rec.frames.len() as u64, prompt["frames"].as_u64().unwrap());

    drop(c);
    server.shutdown().await.unwrap();
}

#[tokio::test]
async fn occupied_port_is_a_bind_error() {
    let taken = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = taken.local_addr().unwrap();
    let session = Session::new(scene()).unwrap();
    let err = serve(session, addr, DT).await.err().expect("bind must fail");
    assert!(matches!(err, ServerError::Bind { .. }));
}
