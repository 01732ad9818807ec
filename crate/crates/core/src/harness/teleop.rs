//! Single-client teleoperation over a WebSocket. Every message is one JSON
//! text frame tagged by `"type"`.

use std::collections::VecDeque;
use std::io::ErrorKind;
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::thread;
use std::time::{Duration, Instant};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use tungstenite::{Message, WebSocket};

use crate::action::{Action, ActionBounds};
use crate::dataset::{save_demo, DemoSource, InstructionTemplate, Recorder};
use crate::env::{EnvConfig, Environment};
use crate::error::{Error, Result};
use crate::sim::{CameraFrame, CameraKind, TaskSpec, WaterFraction};

/// Side length of streamed frames.
pub const STREAM_FRAME_SIZE: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlCommand {
    Start,
    Stop,
    Reset,
    RecordStart,
    RecordStop,
    /// Task label such as `rotation@one_half`; the water line is kept when
    /// only the family is given.
    SelectTask(String),
    SelectWater(WaterFraction),
}

/// 8-bit grey frame, base64 row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireFrame {
    pub width: usize,
    pub height: usize,
    pub data: String,
}

impl WireFrame {
    pub fn encode(frame: &CameraFrame, size: usize) -> Self {
        let f = frame.downsampled(size);
        let bytes: Vec<u8> = f
            .intensity
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        Self {
            width: f.width,
            height: f.height,
            data: B64.encode(bytes),
        }
    }

    pub fn decode(&self) -> Result<CameraFrame> {
        let bytes = B64
            .decode(&self.data)
            .map_err(|e| Error::validation(format!("frame data: {e}")))?;
        if bytes.len() != self.width * self.height {
            return Err(Error::DimensionMismatch {
                what: "wire frame",
                expected: self.width * self.height,
                actual: bytes.len(),
            });
        }
        Ok(CameraFrame {
            width: self.width,
            height: self.height,
            intensity: bytes.iter().map(|b| *b as f32 / 255.0).collect(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TeleopMessage {
    /// Client stick state: six axes in `[-1, 1]` (x, y, z, roll, pitch, yaw)
    /// scaled by the velocity bounds, gripper in `[0, 1]`.
    Command { axes: [f64; 6], gripper: f64 },
    State {
        time: f64,
        tick: usize,
        task: String,
        /// `[x, y, z, qw, qx, qy, qz]`
        capsule_pose: [f64; 7],
        magnet_pose: [f64; 7],
        joints: [f64; 7],
        water: f64,
        /// Capsule camera, then exterior camera.
        frames: [WireFrame; 2],
        running: bool,
        recording: bool,
        done: bool,
    },
    Control { command: ControlCommand },
    Recorded { path: PathBuf, success: bool, records: usize },
    Error { message: String },
}

impl TeleopMessage {
    /// A command with its fields clamped; non-finite values become 0.
    pub fn command(axes: [f64; 6], gripper: f64) -> Self {
        let fix = |v: f64, lo: f64| if v.is_finite() { v.clamp(lo, 1.0) } else { 0.0 };
        Self::Command {
            axes: axes.map(|a| fix(a, -1.0)),
            gripper: fix(gripper, 0.0),
        }
    }

    /// Axes that reproduce `action` under `bounds`.
    pub fn from_action(action: &Action, bounds: &ActionBounds) -> Self {
        let lim = bounds.limits();
        let a = action.to_array();
        Self::command(std::array::from_fn(|i| a[i] / lim[i]), a[6])
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("message serializes")
    }

    /// Parses and clamps.
    pub fn parse(text: &str) -> Result<Self> {
        let m: TeleopMessage = serde_json::from_str(text)?;
        Ok(match m {
            Self::Command { axes, gripper } => Self::command(axes, gripper),
            other => other,
        })
    }
}

/// Stick state to an action under the configured velocity bounds.
pub fn axes_to_action(axes: &[f64; 6], gripper: f64, bounds: &ActionBounds) -> Action {
    let lim = bounds.limits();
    let mut v = [0.0; 7];
    for i in 0..6 {
        v[i] = axes[i].clamp(-1.0, 1.0) * lim[i];
    }
    v[6] = gripper.clamp(0.0, 1.0);
    Action::from_slice(&v).expect("fixed length")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TickMode {
    /// Steps at the control rate while running, holding the latest command.
    WallClock,
    /// One step per received command; for scripted clients and tests.
    Lockstep,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TeleopConfig {
    pub env: EnvConfig,
    pub task: TaskSpec,
    pub seed: u64,
    pub mode: TickMode,
    pub out_dir: PathBuf,
    /// Axes fall back to zero when no command arrives for this long (wall clock).
    pub command_timeout: Duration,
}

impl TeleopConfig {
    pub fn new(env: EnvConfig, task: TaskSpec, out_dir: PathBuf) -> Self {
        Self {
            env,
            task,
            seed: 0,
            mode: TickMode::WallClock,
            out_dir,
            command_timeout: Duration::from_millis(500),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TeleopStats {
    pub ticks: usize,
    pub commands_received: usize,
    pub rejected: usize,
    pub sessions: usize,
    pub recorded: Vec<PathBuf>,
    /// Wall-clock instants of applied commands, relative to server start.
    pub applied_at: Vec<Duration>,
}

impl TeleopStats {
    /// Most commands applied inside any one-second wall-clock window.
    pub fn max_applied_per_second(&self) -> usize {
        let t = &self.applied_at;
        let mut best = 0;
        let mut lo = 0;
        for hi in 0..t.len() {
            while t[hi] - t[lo] >= Duration::from_secs(1) {
                lo += 1;
            }
            best = best.max(hi - lo + 1);
        }
        best
    }
}

struct Session {
    env: Environment,
    task: TaskSpec,
    seed: u64,
    running: bool,
    recorder: Option<Recorder>,
    held: Option<(Action, Instant)>,
    takes: usize,
}

pub struct TeleopServer {
    listener: TcpListener,
    cfg: TeleopConfig,
}

impl TeleopServer {
    /// Fails when the address is taken.
    pub fn bind<A: ToSocketAddrs>(addr: A, cfg: TeleopConfig) -> Result<Self> {
        let listener = TcpListener::bind(addr)?;
        listener.set_nonblocking(true)?;
        Ok(Self { listener, cfg })
    }

    pub fn local_addr(&self) -> Result<SocketAddr> {
        Ok(self.listener.local_addr()?)
    }

    /// Serves until `stop` is set. Time only advances while a client is
    /// connected and the session is running.
    pub fn run(&self, stop: &AtomicBool) -> Result<TeleopStats> {
        let started = Instant::now();
        let mut stats = TeleopStats::default();
        let mut s = self.new_session(self.cfg.task, self.cfg.seed)?;
        std::fs::create_dir_all(&self.cfg.out_dir)?;
        while !stop.load(Ordering::Relaxed) {
            let stream = match self.listener.accept() {
                Ok((stream, peer)) => {
                    log::info!("teleop client {peer} connected");
                    stream
                }
                Err(e) if e.kind() == ErrorKind::WouldBlock => {
                    thread::sleep(Duration::from_millis(5));
                    continue;
                }
                Err(e) => return Err(e.into()),
            };
            stats.sessions += 1;
            match self.serve_client(stream, &mut s, &mut stats, stop, started) {
                Ok(()) => log::info!("teleop client disconnected"),
                Err(e) => log::warn!("teleop client dropped: {e}"),
            }
            s.running = false;
            s.held = None;
            // a take in progress is closed out, never left half-written
            if let Some(msg) = self.finish_recording(&mut s, &mut stats) {
                log::info!("recording finalized on disconnect: {msg:?}");
            }
        }
        Ok(stats)
    }

    fn new_session(&self, task: TaskSpec, seed: u64) -> Result<Session> {
        let text = InstructionTemplate::for_task(&task).canonical();
        Ok(Session {
            env: Environment::new(self.cfg.env.clone(), task, &text, seed)?,
            task,
            seed,
            running: false,
            recorder: None,
            held: None,
            takes: 0,
        })
    }

    fn reset(&self, s: &mut Session, task: TaskSpec, seed: u64) -> Result<()> {
        let takes = s.takes;
        *s = self.new_session(task, seed)?;
        s.takes = takes;
        Ok(())
    }

    fn serve_client(
        &self,
        stream: TcpStream,
        s: &mut Session,
        stats: &mut TeleopStats,
        stop: &AtomicBool,
        started: Instant,
    ) -> Result<()> {
        stream.set_nonblocking(false)?;
        let mut ws = tungstenite::accept(stream).map_err(|e| Error::validation(format!("handshake: {e}")))?;
        ws.get_ref().set_read_timeout(Some(Duration::from_millis(2)))?;
        send(&mut ws, &self.state_message(s))?;
        let period = Duration::from_secs_f64(self.cfg.env.tick_dt());
        let mut next_tick = Instant::now() + period;
        let mut inbox: VecDeque<TeleopMessage> = VecDeque::new();
        while !stop.load(Ordering::Relaxed) {
            match ws.read() {
                Ok(Message::Text(t)) => match TeleopMessage::parse(t.as_str()) {
                    Ok(m) => inbox.push_back(m),
                    Err(e) => {
                        stats.rejected += 1;
                        send(&mut ws, &TeleopMessage::Error { message: format!("malformed message: {e}") })?;
                    }
                },
                Ok(Message::Close(_)) => return Ok(()),
                Ok(Message::Binary(_)) => {
                    stats.rejected += 1;
                    send(&mut ws, &TeleopMessage::Error { message: "binary frames are not accepted".into() })?;
                }
                Ok(_) => {}
                Err(tungstenite::Error::Io(e)) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {}
                Err(tungstenite::Error::ConnectionClosed | tungstenite::Error::AlreadyClosed) => return Ok(()),
                Err(e) => return Err(Error::validation(format!("socket: {e}"))),
            }
            while let Some(m) = inbox.pop_front() {
                self.handle(m, s, stats, &mut ws, started)?;
            }
            if self.cfg.mode == TickMode::WallClock && s.running && Instant::now() >= next_tick {
                // spaced from the actual tick, so late ticks never bunch up
                next_tick = Instant::now() + period;
                let action = match s.held {
                    Some((a, at)) if at.elapsed() <= self.cfg.command_timeout => a,
                    _ => Action::IDLE,
                };
                self.tick(s, action, stats, &mut ws, started)?;
            }
            if !s.running {
                next_tick = Instant::now() + period;
            }
        }
        let _ = ws.close(None);
        Ok(())
    }

    fn handle(
        &self,
        m: TeleopMessage,
        s: &mut Session,
        stats: &mut TeleopStats,
        ws: &mut WebSocket<TcpStream>,
        started: Instant,
    ) -> Result<()> {
        match m {
            TeleopMessage::Command { axes, gripper } => {
                stats.commands_received += 1;
                let a = axes_to_action(&axes, gripper, &self.cfg.env.bounds);
                match self.cfg.mode {
                    TickMode::WallClock => s.held = Some((a, Instant::now())),
                    TickMode::Lockstep if s.running => self.tick(s, a, stats, ws, started)?,
                    TickMode::Lockstep => {
                        send(ws, &TeleopMessage::Error { message: "session is stopped".into() })?;
                    }
                }
            }
            TeleopMessage::Control { command } => {
                let reply = self.control(command, s, stats);
                match reply {
                    Ok(Some(msg)) => send(ws, &msg)?,
                    Ok(None) => {}
                    Err(e) => send(ws, &TeleopMessage::Error { message: e.to_string() })?,
                }
                send(ws, &self.state_message(s))?;
            }
            other => {
                stats.rejected += 1;
                let kind = serde_json::to_value(&other)
                    .ok()
                    .and_then(|v| v.get("type").and_then(|t| t.as_str()).map(String::from))
                    .unwrap_or_default();
                send(ws, &TeleopMessage::Error { message: format!("clients may not send '{kind}' messages") })?;
            }
        }
        Ok(())
    }

    fn control(&self, c: ControlCommand, s: &mut Session, stats: &mut TeleopStats) -> Result<Option<TeleopMessage>> {
        log::info!("control {c:?}");
        match c {
            ControlCommand::Start => {
                if s.env.done() {
                    return Err(Error::validation("episode is over, reset first"));
                }
                s.running = true;
            }
            ControlCommand::Stop => s.running = false,
            ControlCommand::Reset => {
                let done = self.finish_recording(s, stats);
                self.reset(s, s.task, s.seed + 1)?;
                return Ok(done);
            }
            ControlCommand::RecordStart => {
                if s.recorder.is_some() {
                    return Err(Error::validation("already recording"));
                }
                s.recorder = Some(Recorder::new(DemoSource::Teleop));
            }
            ControlCommand::RecordStop => {
                if s.recorder.is_none() {
                    return Err(Error::validation("not recording"));
                }
                return Ok(self.finish_recording(s, stats));
            }
            ControlCommand::SelectTask(label) => {
                let task = if label.contains('@') {
                    TaskSpec::parse(&label)?
                } else {
                    TaskSpec::parse(&format!("{label}@{}", s.task.water.name()))?
                };
                let done = self.finish_recording(s, stats);
                self.reset(s, task, s.seed)?;
                return Ok(done);
            }
            ControlCommand::SelectWater(w) => {
                let done = self.finish_recording(s, stats);
                self.reset(s, TaskSpec::new(s.task.kind, w), s.seed)?;
                return Ok(done);
            }
        }
        Ok(None)
    }

    /// Records the current state (when recording), applies `action`, streams
    /// the new state.
    fn tick(
        &self,
        s: &mut Session,
        action: Action,
        stats: &mut TeleopStats,
        ws: &mut WebSocket<TcpStream>,
        started: Instant,
    ) -> Result<()> {
        if let Some(rec) = s.recorder.as_mut() {
            let frames = [s.env.render(CameraKind::CapsuleCam), s.env.render(CameraKind::ExteriorCam)];
            rec.push_with_frames(&s.env, action, frames)?;
        }
        s.env.step(&action)?;
        stats.ticks += 1;
        stats.applied_at.push(started.elapsed());
        log::debug!("tick {} t={:.1}s applied {:?}", s.env.ticks(), s.env.timestamp(), action.to_array());
        if s.env.done() {
            s.running = false;
            if let Some(msg) = self.finish_recording(s, stats) {
                send(ws, &msg)?;
            }
        }
        send(ws, &self.state_message(s))
    }

    /// Closes the take with a final idle record of the current state and
    /// writes it out. Empty takes are dropped.
    fn finish_recording(&self, s: &mut Session, stats: &mut TeleopStats) -> Option<TeleopMessage> {
        let mut rec = s.recorder.take()?;
        let frames = [s.env.render(CameraKind::CapsuleCam), s.env.render(CameraKind::ExteriorCam)];
        let closing = Action::IDLE;
        let out = rec
            .push_with_frames(&s.env, closing, frames)
            .and_then(|_| rec.finish(&s.env))
            .and_then(|demo| {
                s.takes += 1;
                let stem = format!("teleop-{}-{}-{:03}", s.task.kind.id(), s.task.water.name(), s.takes);
                let path = save_demo(&demo, &self.cfg.out_dir, &stem)?;
                Ok((path, demo.outcome.success, demo.records.len()))
            });
        match out {
            Ok((path, success, records)) => {
                log::info!("recorded {} ({records} records, success {success})", path.display());
                stats.recorded.push(path.clone());
                Some(TeleopMessage::Recorded { path, success, records })
            }
            Err(e) => {
                log::warn!("recording discarded: {e}");
                Some(TeleopMessage::Error { message: format!("recording discarded: {e}") })
            }
        }
    }

    fn state_message(&self, s: &Session) -> TeleopMessage {
        let st = s.env.state();
        TeleopMessage::State {
            time: st.time,
            tick: s.env.ticks(),
            task: s.task.label(),
            capsule_pose: st.capsule.pose.to_array(),
            magnet_pose: st.magnet_pose.to_array(),
            joints: s.env.joints().joints,
            water: st.water.fraction.fraction(),
            frames: [
                WireFrame::encode(&s.env.render(CameraKind::CapsuleCam), STREAM_FRAME_SIZE),
                WireFrame::encode(&s.env.render(CameraKind::ExteriorCam), STREAM_FRAME_SIZE),
            ],
            running: s.running,
            recording: s.recorder.is_some(),
            done: s.env.done(),
        }
    }
}

fn send(ws: &mut WebSocket<TcpStream>, m: &TeleopMessage) -> Result<()> {
    ws.send(Message::text(m.to_json()))
        .map_err(|e| Error::validation(format!("send: {e}")))
}

/// Blocking protocol client for scripts and tests.
pub struct TeleopClient {
    ws: WebSocket<tungstenite::stream::MaybeTlsStream<TcpStream>>,
}

impl TeleopClient {
    pub fn connect(addr: SocketAddr) -> Result<Self> {
        let (ws, _) = tungstenite::connect(format!("ws://{addr}"))
            .map_err(|e| Error::validation(format!("connect: {e}")))?;
        Ok(Self { ws })
    }

    pub fn send(&mut self, m: &TeleopMessage) -> Result<()> {
        self.send_raw(&m.to_json())
    }

    pub fn send_raw(&mut self, text: &str) -> Result<()> {
        self.ws
            .send(Message::text(text))
            .map_err(|e| Error::validation(format!("send: {e}")))
    }

    pub fn recv(&mut self) -> Result<TeleopMessage> {
        loop {
            match self.ws.read().map_err(|e| Error::validation(format!("read: {e}")))? {
                Message::Text(t) => return TeleopMessage::parse(t.as_str()),
                Message::Close(_) => return Err(Error::validation("server closed the connection")),
                _ => {}
            }
        }
    }

    /// Reads until a message satisfies `pred`.
    pub fn recv_until(&mut self, mut pred: impl FnMut(&TeleopMessage) -> bool) -> Result<TeleopMessage> {
        loop {
            let m = self.recv()?;
            if pred(&m) {
                return Ok(m);
            }
        }
    }

    pub fn control(&mut self, command: ControlCommand) -> Result<()> {
        self.send(&TeleopMessage::Control { command })
    }

    pub fn close(mut self) -> Result<()> {
        let _ = self.ws.close(None);
        // drain until the server acknowledges
        while self.ws.read().is_ok() {}
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn command_is_clamped_on_parse() {
        let m = TeleopMessage::parse(r#"{"type":"command","axes":[2,-3,0.5,0,0,0],"gripper":1.5}"#).unwrap();
        assert_eq!(
            m,
            TeleopMessage::Command {
                axes: [1.0, -1.0, 0.5, 0.0, 0.0, 0.0],
                gripper: 1.0
            }
        );
        assert!(TeleopMessage::parse(r#"{"type":"command","axes":[1,2]}"#).is_err());
        assert!(TeleopMessage::parse("not json").is_err());
    }

    #[test]
    fn control_wire_form() {
        let m = TeleopMessage::Control {
            command: ControlCommand::SelectWater(WaterFraction::Full),
        };
        assert_eq!(m.to_json(), r#"{"type":"control","command":{"select_water":"full"}}"#);
        let s = TeleopMessage::Control { command: ControlCommand::RecordStart };
        assert_eq!(s.to_json(), r#"{"type":"control","command":"record_start"}"#);
        assert_eq!(TeleopMessage::parse(&s.to_json()).unwrap(), s);
    }

    #[test]
    fn axes_round_trip_through_action() {
        let b = ActionBounds::default();
        let a = Action {
            dx: 12.0,
            dy: -30.0,
            dz: 0.0,
            droll: 0.1,
            dpitch: -0.6,
            dyaw: 0.3,
            gripper: 1.0,
        };
        let TeleopMessage::Command { axes, gripper } = TeleopMessage::from_action(&a, &b) else {
            unreachable!()
        };
        let back = axes_to_action(&axes, gripper, &b);
        for (x, y) in back.to_array().iter().zip(a.to_array()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn wire_frame_quantizes() {
        let f = CameraFrame {
            width: 2,
            height: 2,
            intensity: vec![0.0, 1.0, 0.5, 0.25],
        };
        let w = WireFrame::encode(&f, 2);
        let back = w.decode().unwrap();
        for (x, y) in back.intensity.iter().zip(&f.intensity) {
            assert!((x - y).abs() <= 0.5 / 255.0 + 1e-6);
        }
    }

    #[test]
    fn applied_rate_window() {
        let s = TeleopStats {
            applied_at: (0..30).map(|i| Duration::from_millis(100 * i)).collect(),
            ..TeleopStats::default()
        };
        assert_eq!(s.max_applied_per_second(), 10);
    }
}
