//! Pose-in, command-out TCP bridge for a trained policy.
//!
//! Each connection exchanges newline-delimited JSON: one pose per line in,
//! exactly one command (or error) per line out, in order. Once the first
//! pose has arrived, a gap longer than the watchdog timeout produces a single
//! stop command tagged `"fault": "watchdog"`.

use std::future::Future;
use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use log::{info, warn};
use saferl_core::cbf::barrier_value;
use saferl_core::config::RunConfig;
use saferl_core::env::Observation;
use saferl_core::eval::FrozenPolicy;
use saferl_core::integration::{resolve_action, Mode, ModeConfig};
use saferl_core::kinematics::Point2;
use saferl_core::UnicycleState;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::io::{AsyncBufReadExt, AsyncWriteExt, BufReader};
use tokio::net::{TcpListener, TcpStream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseMessage {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub goal: Point2<f64>,
    pub obstacle: Point2<f64>,
    /// Milliseconds; must not decrease within a connection.
    pub timestamp: u64,
}

impl PoseMessage {
    fn is_finite(&self) -> bool {
        [self.x, self.y, self.theta, self.goal[0], self.goal[1], self.obstacle[0], self.obstacle[1]]
            .iter()
            .all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommandMessage {
    pub v: f64,
    pub omega: f64,
    pub cbf_active: bool,
    pub h: f64,
    pub out_of_bounds: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fault: Option<String>,
}

impl CommandMessage {
    fn stop(h: f64, out_of_bounds: bool, fault: Option<String>) -> Self {
        Self {
            v: 0.0,
            omega: 0.0,
            cbf_active: false,
            h,
            out_of_bounds,
            fault,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReply {
    pub error: String,
}

#[derive(Debug, Error)]
pub enum BridgeError {
    #[error("bind {addr}: {source}")]
    Bind { addr: SocketAddr, source: std::io::Error },
    #[error("accept: {0}")]
    Accept(std::io::Error),
}

/// Frozen policy plus the safety settings used to answer poses.
pub struct Controller<P> {
    pub policy: P,
    pub config: RunConfig,
    pub cbf_on: bool,
}

impl<P: FrozenPolicy> Controller<P> {
    pub fn new(policy: P, config: RunConfig, cbf_on: bool) -> Self {
        Self {
            policy,
            config,
            cbf_on,
        }
    }

    /// Command for one pose. Poses outside the arena get a stop command.
    pub fn handle_pose(&self, msg: &PoseMessage) -> Result<CommandMessage, String> {
        if !msg.is_finite() {
            return Err("pose fields must be finite".into());
        }
        let cfg = &self.config;
        let state = UnicycleState::new(msg.x, msg.y, msg.theta);
        let params = cfg.cbf_params(msg.obstacle);
        if !cfg.world.in_arena([msg.x, msg.y]) {
            return Ok(CommandMessage::stop(barrier_value(&state, &params), true, None));
        }
        let obs = Observation::new(&state, msg.goal, msg.obstacle);
        let w_max = cfg.sac.omega_max;
        let omega = self.policy.mean_omega(&obs);
        if !omega.is_finite() {
            return Err("policy produced a non-finite action".into());
        }
        let mode = ModeConfig::new(if self.cbf_on { Mode::Filter } else { Mode::Sac }, 1);
        let res = resolve_action(&mode, &state, omega.clamp(-w_max, w_max), &params, 0);
        Ok(CommandMessage {
            v: res.executed.v,
            omega: res.executed.omega,
            cbf_active: res.cbf_active,
            h: res.h,
            out_of_bounds: false,
            fault: None,
        })
    }
}

/// Per-connection state: timestamp ordering and the watchdog.
struct Session {
    last_timestamp: Option<u64>,
    last_h: f64,
    /// A stop has been sent for the current gap.
    stopped: bool,
}

impl Session {
    fn reply<P: FrozenPolicy>(&mut self, ctrl: &Controller<P>, line: &str) -> String {
        let result = serde_json::from_str::<PoseMessage>(line)
            .map_err(|e| format!("malformed pose: {e}"))
            .and_then(|msg| {
                if self.last_timestamp.is_some_and(|t| msg.timestamp < t) {
                    return Err(format!(
                        "timestamp {} precedes previous {}",
                        msg.timestamp,
                        self.last_timestamp.unwrap_or_default()
                    ));
                }
                let cmd = ctrl.handle_pose(&msg)?;
                self.last_timestamp = Some(msg.timestamp);
                self.last_h = cmd.h;
                self.stopped = false;
                Ok(cmd)
            });
        match result {
            Ok(cmd) => serde_json::to_string(&cmd),
            Err(error) => serde_json::to_string(&ErrorReply { error }),
        }
        .expect("replies always serialise")
    }
}

/// Serves one connection until the peer closes it.
pub async fn handle_connection<P: FrozenPolicy>(
    stream: TcpStream,
    ctrl: Arc<Controller<P>>,
    watchdog: Duration,
) -> std::io::Result<()> {
    let peer = stream.peer_addr().ok();
    let (read, mut write) = stream.into_split();
    let mut lines = BufReader::new(read).lines();
    let mut session = Session {
        last_timestamp: None,
        last_h: f64::NAN,
        stopped: false,
    };
    loop {
        let armed = session.last_timestamp.is_some() && !session.stopped;
        let next = if armed {
            match tokio::time::timeout(watchdog, lines.next_line()).await {
                Ok(line) => line?,
                Err(_) => {
                    warn!("watchdog: no pose from {peer:?} within {watchdog:?}, commanding stop");
                    session.stopped = true;
                    let stop = CommandMessage::stop(session.last_h, false, Some("watchdog".into()));
                    let mut out = serde_json::to_string(&stop).expect("replies always serialise");
                    out.push('\n');
                    write.write_all(out.as_bytes()).await?;
                    continue;
                }
            }
        } else {
            lines.next_line().await?
        };
        let Some(line) = next else {
            return Ok(());
        };
        if line.trim().is_empty() {
            continue;
        }
        let mut out = session.reply(&ctrl, &line);
        out.push('\n');
        write.write_all(out.as_bytes()).await?;
    }
}

/// Accepts connections on `listener` until `shutdown` resolves.
pub async fn serve<P, F>(
    listener: TcpListener,
    ctrl: Arc<Controller<P>>,
    watchdog: Duration,
    shutdown: F,
) -> Result<(), BridgeError>
where
    P: FrozenPolicy + Send + Sync + 'static,
    F: Future<Output = ()>,
{
    tokio::pin!(shutdown);
    loop {
        tokio::select! {
            _ = &mut shutdown => return Ok(()),
            accepted = listener.accept() => {
                let (stream, peer) = accepted.map_err(BridgeError::Accept)?;
                info!("connection from {peer}");
                let ctrl = Arc::clone(&ctrl);
                tokio::spawn(async move {
                    if let Err(e) = handle_connection(stream, ctrl, watchdog).await {
                        warn!("connection {peer}: {e}");
                    }
                });
            }
        }
    }
}

/// Binds `addr` and serves until `shutdown` resolves.
pub async fn bind_and_serve<P, F>(
    addr: SocketAddr,
    ctrl: Arc<Controller<P>>,
    watchdog: Duration,
    shutdown: F,
) -> Result<(), BridgeError>
where
    P: FrozenPolicy + Send + Sync + 'static,
    F: Future<Output = ()>,
{
    let listener = TcpListener::bind(addr)
        .await
        .map_err(|source| BridgeError::Bind { addr, source })?;
    info!("listening on {}", listener.local_addr().map_err(BridgeError::Accept)?);
    serve(listener, ctrl, watchdog, shutdown).await
}
