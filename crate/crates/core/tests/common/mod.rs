#![allow(dead_code)]

pub mod gen;
pub mod oracle;

use std::path::PathBuf;

use embedagent::config::ServerConfig;
use embedagent::gateway::{Gateway, RunningServer};
use embedagent::sim::scenario::Scenario;

pub fn testdata(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("testdata").join(rel)
}

/// The checked-in demo server config with test-friendly timeouts.
pub fn demo_config() -> ServerConfig {
    let mut config = ServerConfig::load(testdata("server.toml")).expect("demo config");
    config.bind = "127.0.0.1:0".into();
    config.action_timeout_ms = 400;
    config.debug = true;
    config
}

pub async fn start(config: ServerConfig) -> RunningServer {
    let bind = config.bind.clone();
    Gateway::from_config(config).expect("gateway").spawn(&bind).await.expect("bind")
}

pub async fn start_demo() -> RunningServer {
    start(demo_config()).await
}

pub fn scenario(name: &str) -> Scenario {
    Scenario::load(testdata(&format!("scenarios/{name}.json"))).expect("scenario")
}

pub const DEMO_GOAL: &str = "Check if this SMILES is a PFAS and generate a short report. SMILES: ";

use std::time::Duration;

use embedagent::observation::AriaSnapshot;
use embedagent::sim::app::{AppDef, VirtualApp};
use embedagent::wire::{decode_message, encode_text, ObservationPayload, Payload, RegisterPayload, WireMessage};
use futures::{SinkExt, StreamExt};
use tokio_tungstenite::tungstenite::Message;

pub fn demo_app() -> VirtualApp {
    VirtualApp::new(AppDef::load(testdata("apps/chem-demo.json")).expect("demo app"))
}

/// Minimal protocol client for poking the gateway directly.
pub struct Client {
    ws: tokio_tungstenite::WebSocketStream<tokio_tungstenite::MaybeTlsStream<tokio::net::TcpStream>>,
    pub session_id: String,
    pub resumed: bool,
    pub seq: u64,
}

impl Client {
    pub async fn connect(url: &str) -> Self {
        let (ws, _) = tokio_tungstenite::connect_async(url).await.expect("connect");
        let mut c = Self {
            ws,
            session_id: String::new(),
            resumed: false,
            seq: 0,
        };
        match c.recv().await.expect("hello").payload {
            Payload::Hello(h) => {
                c.session_id = h.session_id;
                c.resumed = h.resumed;
            }
            other => panic!("expected hello, got {other:?}"),
        }
        c
    }

    pub async fn send(&mut self, payload: Payload) -> u64 {
        self.seq += 1;
        let msg = WireMessage::new(self.session_id.clone(), self.seq, payload);
        self.send_raw(&encode_text(&msg).unwrap()).await;
        self.seq
    }

    pub async fn send_raw(&mut self, text: &str) {
        self.ws.send(Message::Text(text.to_owned().into())).await.expect("send");
    }

    /// Next frame within 5 s.
    pub async fn recv(&mut self) -> Option<WireMessage> {
        self.recv_within(Duration::from_secs(5)).await
    }

    pub async fn recv_within(&mut self, timeout: Duration) -> Option<WireMessage> {
        loop {
            let frame = tokio::time::timeout(timeout, self.ws.next()).await.ok()??.ok()?;
            if let Message::Text(t) = frame {
                return Some(decode_message(t.as_bytes()).expect("server frames decode"));
            }
        }
    }

    /// Skips status frames.
    pub async fn recv_significant(&mut self) -> Option<WireMessage> {
        loop {
            let m = self.recv().await?;
            if !matches!(m.payload, Payload::AgentStatus(_)) {
                return Some(m);
            }
        }
    }

    pub async fn register_demo(&mut self, app: &VirtualApp) {
        let def = app.def();
        self.send(Payload::Register(RegisterPayload {
            app_id: def.app_id.clone(),
            skillset: def.skillset(),
            page_map: def.page_map.clone(),
        }))
        .await;
        self.observe(&app.snapshot()).await;
    }

    pub async fn observe(&mut self, snap: &AriaSnapshot) -> u64 {
        self.send(Payload::Observation(ObservationPayload::from(snap))).await
    }

    pub async fn close(mut self) {
        let _ = self.ws.close(None).await;
    }
}

/// Polls `cond` every 10 ms for up to 2 s.
pub async fn eventually(mut cond: impl FnMut() -> bool) -> bool {
    for _ in 0..200 {
        if cond() {
            return true;
        }
        tokio::time::sleep(Duration::from_millis(10)).await;
    }
    cond()
}
