//! Newline-delimited JSON environment server over TCP.
//!
//! Each connection owns one session. A session must open with `hello`
//! (protocol version "1"), then may `list_scenes`, `reset` an episode,
//! `step` it with 10-D action vectors and `close`.
//!
//! ```text
//! -> {"id": 1, "op": "hello", "params": {"version": "1"}}
//! <- {"id": 1, "ok": true, "payload": {"version": "1", ...}}
//! -> {"id": 2, "op": "reset", "params": {"scene_id": "scene_0000000000"}}
//! <- {"id": 2, "ok": true, "payload": {"image_png_b64": "...", "step_count": 0, "done": false, ...}}
//! ```

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use base64::Engine;
use rand::seq::IteratorRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::geometry::{CameraIntrinsics, GridIndex};
use crate::gridworld::{vec10_to_action, ActionVec10, EpisodeState, NavSpace, StepError, DEFAULT_MAX_STEPS};
use crate::oracle::look_at_center;
use crate::render::{detect_in_frame, render};
use crate::scenegen::Scene;

pub const PROTOCOL_VERSION: &str = "1";

pub const E_VERSION: &str = "E_VERSION";
pub const E_NO_SCENE: &str = "E_NO_SCENE";
pub const E_NO_EPISODE: &str = "E_NO_EPISODE";
pub const E_DONE: &str = "E_DONE";
pub const E_BAD_ACTION: &str = "E_BAD_ACTION";
pub const E_PARSE: &str = "E_PARSE";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ServerConfig {
    pub max_steps: usize,
    pub camera: CameraIntrinsics,
    /// Expose pose and visible instances in observations.
    pub privileged: bool,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            max_steps: DEFAULT_MAX_STEPS,
            camera: CameraIntrinsics::default(),
            privileged: false,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
struct Request {
    id: Value,
    op: String,
    #[serde(default)]
    params: Value,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProtocolError {
    pub code: &'static str,
    pub message: String,
}

impl std::fmt::Display for ProtocolError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.code, self.message)
    }
}

impl std::error::Error for ProtocolError {}

fn err(code: &'static str, message: impl Into<String>) -> ProtocolError {
    ProtocolError { code, message: message.into() }
}

struct SceneEntry {
    scene: Scene,
    nav: NavSpace,
}

/// Scenes and configuration shared read-only by every session.
pub struct World {
    scenes: BTreeMap<String, SceneEntry>,
    config: ServerConfig,
}

impl World {
    pub fn new(scenes: Vec<Scene>, config: ServerConfig) -> Self {
        let scenes = scenes
            .into_iter()
            .map(|scene| {
                let nav = NavSpace::new(&scene);
                (scene.scene_id.clone(), SceneEntry { scene, nav })
            })
            .collect();
        Self { scenes, config }
    }

    pub fn config(&self) -> &ServerConfig {
        &self.config
    }

    pub fn scene_ids(&self) -> Vec<String> {
        self.scenes.keys().cloned().collect()
    }
}

struct Episode {
    scene_id: String,
    state: EpisodeState,
    category_grid: bool,
}

/// Per-connection protocol state.
pub struct Session {
    world: Arc<World>,
    greeted: bool,
    episode: Option<Episode>,
    closed: bool,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct HelloParams {
    version: String,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum StartSpec {
    Grid(GridIndex),
    Named(String),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ResetParams {
    scene_id: String,
    #[serde(default)]
    start: Option<StartSpec>,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    category_grid: bool,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct StepParams {
    action: Vec<f64>,
}

fn parse_params<T: for<'de> Deserialize<'de>>(v: &Value) -> Result<T, ProtocolError> {
    let v = if v.is_null() { json!({}) } else { v.clone() };
    serde_json::from_value(v).map_err(|e| err(E_PARSE, format!("bad params: {e}")))
}

impl Session {
    pub fn new(world: Arc<World>) -> Self {
        Self {
            world,
            greeted: false,
            episode: None,
            closed: false,
        }
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    /// Handles one request line and returns the response line (no newline).
    pub fn handle_line(&mut self, line: &str) -> String {
        let (id, result) = match serde_json::from_str::<Request>(line) {
            Ok(req) => {
                let r = self.handle(&req.op, &req.params);
                (req.id, r)
            }
            Err(e) => {
                let id = serde_json::from_str::<Value>(line)
                    .ok()
                    .and_then(|v| v.get("id").cloned())
                    .unwrap_or(Value::Null);
                (id, Err(err(E_PARSE, format!("malformed request: {e}"))))
            }
        };
        let resp = match result {
            Ok(payload) => json!({"id": id, "ok": true, "payload": payload}),
            Err(e) => json!({"id": id, "ok": false, "error": {"code": e.code, "message": e.message}}),
        };
        resp.to_string()
    }

    pub fn handle(&mut self, op: &str, params: &Value) -> Result<Value, ProtocolError> {
        if op == "hello" {
            let p: HelloParams = parse_params(params)?;
            if p.version != PROTOCOL_VERSION {
                return Err(err(E_VERSION, format!("unsupported protocol version {:?}, server speaks {PROTOCOL_VERSION:?}", p.version)));
            }
            self.greeted = true;
            let c = self.world.config;
            return Ok(json!({
                "version": PROTOCOL_VERSION,
                "max_steps": c.max_steps,
                "width": c.camera.width,
                "height": c.camera.height,
                "privileged": c.privileged,
            }));
        }
        if !self.greeted {
            return Err(err(E_VERSION, "hello must be the first request"));
        }
        match op {
            "list_scenes" => Ok(json!({ "scene_ids": self.world.scene_ids() })),
            "reset" => self.reset(parse_params(params)?),
            "step" => self.step(parse_params(params)?),
            "close" => {
                self.closed = true;
                self.episode = None;
                Ok(json!({}))
            }
            other => Err(err(E_PARSE, format!("unknown op {other:?}"))),
        }
    }

    fn reset(&mut self, p: ResetParams) -> Result<Value, ProtocolError> {
        let entry = self
            .world
            .scenes
            .get(&p.scene_id)
            .ok_or_else(|| err(E_NO_SCENE, format!("unknown scene {:?}", p.scene_id)))?;
        let grid = match p.start {
            Some(StartSpec::Grid(g)) => {
                g.validate().map_err(|e| err(E_PARSE, e.to_string()))?;
                if !entry.nav.is_navigable(g) {
                    return Err(err(E_PARSE, format!("start {g:?} is not navigable")));
                }
                g
            }
            Some(StartSpec::Named(s)) if s != "random" => {
                return Err(err(E_PARSE, format!("start must be a grid index or \"random\", got {s:?}")))
            }
            _ => entry
                .nav
                .navigable()
                .choose(&mut ChaCha8Rng::seed_from_u64(p.seed))
                .ok_or_else(|| err(E_NO_SCENE, "scene has no navigable point"))?,
        };
        let start = look_at_center(grid, entry.scene.center, 0.0);
        self.episode = Some(Episode {
            scene_id: p.scene_id,
            state: EpisodeState::new(start, self.world.config.max_steps),
            category_grid: p.category_grid,
        });
        Ok(self.observation())
    }

    fn step(&mut self, p: StepParams) -> Result<Value, ProtocolError> {
        let ep = self.episode.as_mut().ok_or_else(|| err(E_NO_EPISODE, "reset an episode first"))?;
        if ep.state.done {
            return Err(err(E_DONE, "episode is done; reset to start another"));
        }
        let v: [f64; 10] = p
            .action
            .as_slice()
            .try_into()
            .map_err(|_| err(E_BAD_ACTION, format!("action must have 10 entries, got {}", p.action.len())))?;
        let action = vec10_to_action(&ActionVec10(v)).map_err(|e| err(E_BAD_ACTION, e.to_string()))?;
        let nav = &self.world.scenes[&ep.scene_id].nav;
        nav.step(&mut ep.state, &action).map_err(|e| match e {
            StepError::Done => err(E_DONE, e.to_string()),
            StepError::Action(a) => err(E_BAD_ACTION, a.to_string()),
        })?;
        Ok(self.observation())
    }

    fn observation(&self) -> Value {
        let ep = self.episode.as_ref().expect("episode exists");
        let entry = &self.world.scenes[&ep.scene_id];
        let frame = render(&entry.scene, &ep.state.pose, &self.world.config.camera);
        let b64 = base64::engine::general_purpose::STANDARD;
        let mut obs = json!({
            "image_png_b64": b64.encode(frame.png_bytes()),
            "width": frame.width,
            "height": frame.height,
            "step_count": ep.state.step_count,
            "done": ep.state.done,
        });
        if ep.category_grid {
            obs["category_grid_b64"] = json!(b64.encode(frame.category_grid_le()));
            obs["categories"] = json!(frame.categories);
        }
        if self.world.config.privileged {
            let visible: Vec<Value> = detect_in_frame(&entry.scene, &frame)
                .iter()
                .map(|d| json!({"instance_index": d.instance_index, "category": d.category, "visible_pixels": d.visible_pixels}))
                .collect();
            obs["privileged"] = json!({"pose": ep.state.pose, "visible": visible});
        }
        obs
    }
}

fn serve_connection(world: Arc<World>, stream: TcpStream) -> std::io::Result<()> {
    let peer = stream.peer_addr().ok();
    let mut writer = stream.try_clone()?;
    let reader = BufReader::new(stream);
    let mut session = Session::new(world);
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let resp = session.handle_line(&line);
        writer.write_all(resp.as_bytes())?;
        writer.write_all(b"\n")?;
        writer.flush()?;
        if session.is_closed() {
            break;
        }
    }
    log::debug!("session {peer:?} ended");
    Ok(())
}

/// A running server; dropping the handle does not stop it, call `shutdown`.
pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown(mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // Wake the accept loop.
        let _ = TcpStream::connect(self.addr);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }

    /// Blocks until the accept loop exits.
    pub fn join(mut self) {
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

/// Binds `addr` and accepts connections on a background thread, one thread
/// per session.
pub fn spawn_server(world: World, addr: impl ToSocketAddrs) -> std::io::Result<ServerHandle> {
    let listener = TcpListener::bind(addr)?;
    let local = listener.local_addr()?;
    let world = Arc::new(world);
    let stop = Arc::new(AtomicBool::new(false));
    let stop_flag = stop.clone();
    let thread = std::thread::spawn(move || {
        for conn in listener.incoming() {
            if stop_flag.load(Ordering::SeqCst) {
                break;
            }
            match conn {
                Ok(stream) => {
                    let w = world.clone();
                    std::thread::spawn(move || {
                        if let Err(e) = serve_connection(w, stream) {
                            log::warn!("connection error: {e}");
                        }
                    });
                }
                Err(e) => log::warn!("accept failed: {e}"),
            }
        }
    });
    log::info!("listening on {local}");
    Ok(ServerHandle {
        addr: local,
        stop,
        thread: Some(thread),
    })
}

/// Minimal blocking client, mainly for tests and scripted episodes.
pub struct Client {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
    next_id: u64,
}

impl Client {
    pub fn connect(addr: impl ToSocketAddrs) -> std::io::Result<Self> {
        let stream = TcpStream::connect(addr)?;
        Ok(Self {
            writer: stream.try_clone()?,
            reader: BufReader::new(stream),
            next_id: 1,
        })
    }

    /// Sends one request and returns the payload or the protocol error.
    pub fn call(&mut self, op: &str, params: Value) -> std::io::Result<Result<Value, ProtocolError>> {
        let id = self.next_id;
        self.next_id += 1;
        let line = json!({"id": id, "op": op, "params": params}).to_string();
        self.send_raw(&line)?;
        let resp = self.read_response()?;
        if resp["id"] != json!(id) {
            return Err(std::io::Error::other(format!("response id {} does not match {id}", resp["id"])));
        }
        Ok(decode_response(resp))
    }

    pub fn send_raw(&mut self, line: &str) -> std::io::Result<()> {
        self.writer.write_all(line.as_bytes())?;
        self.writer.write_all(b"\n")?;
        self.writer.flush()
    }

    pub fn read_response(&mut self) -> std::io::Result<Value> {
        let mut buf = String::new();
        if self.reader.read_line(&mut buf)? == 0 {
            return Err(std::io::Error::new(std::io::ErrorKind::UnexpectedEof, "server closed the connection"));
        }
        serde_json::from_str(&buf).map_err(std::io::Error::other)
    }
}

fn known_code(code: &str) -> &'static str {
    [E_VERSION, E_NO_SCENE, E_NO_EPISODE, E_DONE, E_BAD_ACTION, E_PARSE]
        .into_iter()
        .find(|c| *c == code)
        .unwrap_or("E_UNKNOWN")
}

fn decode_response(resp: Value) -> Result<Value, ProtocolError> {
    if resp["ok"] == json!(true) {
        Ok(resp["payload"].clone())
    } else {
        Err(ProtocolError {
            code: known_code(resp["error"]["code"].as_str().unwrap_or("")),
            message: resp["error"]["message"].as_str().unwrap_or("").to_string(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenegen::{generate_scene, Catalog};

    fn world(privileged: bool) -> Arc<World> {
        let scene = generate_scene(5, &Catalog::builtin()).unwrap();
        Arc::new(World::new(
            vec![scene],
            ServerConfig {
                max_steps: 12,
                camera: CameraIntrinsics::new(16, 16, 1.0).unwrap(),
                privileged,
            },
        ))
    }

    fn call(s: &mut Session, op: &str, params: Value) -> Result<Value, ProtocolError> {
        s.handle(op, &params)
    }

    #[test]
    fn hello_gate_and_version() {
        let mut s = Session::new(world(false));
        assert_eq!(call(&mut s, "list_scenes", json!({})).unwrap_err().code, E_VERSION);
        assert_eq!(call(&mut s, "hello", json!({"version": "2"})).unwrap_err().code, E_VERSION);
        let hello = call(&mut s, "hello", json!({"version": "1"})).unwrap();
        assert_eq!(hello["max_steps"], 12);
        assert_eq!(call(&mut s, "list_scenes", json!({})).unwrap()["scene_ids"][0], "scene_0000000005");
    }

    #[test]
    fn errors() {
        let mut s = Session::new(world(false));
        call(&mut s, "hello", json!({"version": "1"})).unwrap();
        assert_eq!(call(&mut s, "step", json!({"action": vec![0.0; 10]})).unwrap_err().code, E_NO_EPISODE);
        assert_eq!(call(&mut s, "reset", json!({"scene_id": "nope"})).unwrap_err().code, E_NO_SCENE);
        assert_eq!(call(&mut s, "fly", json!({})).unwrap_err().code, E_PARSE);
        call(&mut s, "reset", json!({"scene_id": "scene_0000000005"})).unwrap();
        let bad = json!({"action": [1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]});
        assert_eq!(call(&mut s, "step", bad).unwrap_err().code, E_BAD_ACTION);
        assert_eq!(call(&mut s, "step", json!({"action": vec![0.0; 3]})).unwrap_err().code, E_BAD_ACTION);
        let resp: Value = serde_json::from_str(&s.handle_line("{not json")).unwrap();
        assert_eq!(resp["error"]["code"], E_PARSE);
        assert_eq!(resp["id"], Value::Null);
        let resp: Value = serde_json::from_str(&s.handle_line(r#"{"id": 9}"#)).unwrap();
        assert_eq!((resp["id"].clone(), resp["ok"].clone()), (json!(9), json!(false)));
    }

    #[test]
    fn stop_ends_episode_and_privileged_gate() {
        let mut s = Session::new(world(false));
        call(&mut s, "hello", json!({"version": "1"})).unwrap();
        let obs = call(&mut s, "reset", json!({"scene_id": "scene_0000000005", "category_grid": true})).unwrap();
        assert_eq!(obs["step_count"], 0);
        assert!(obs.get("privileged").is_none());
        assert!(obs["category_grid_b64"].is_string());
        let obs = call(&mut s, "step", json!({"action": vec![0.0; 10]})).unwrap();
        assert_eq!(obs["done"], true);
        assert_eq!(call(&mut s, "step", json!({"action": vec![0.0; 10]})).unwrap_err().code, E_DONE);

        let mut p = Session::new(world(true));
        call(&mut p, "hello", json!({"version": "1"})).unwrap();
        let obs = call(&mut p, "reset", json!({"scene_id": "scene_0000000005", "start": {"i": 1, "j": 1, "k": 3}})).unwrap();
        assert!(obs["privileged"]["pose"].is_object());
    }
}
