//! Live MQTT capture.
//!
//! A background thread owns a small tokio runtime and the MQTT event loop.
//! Each JSON payload becomes one reading per numeric field, delivered to the
//! sink in arrival order. Lost connections are retried with bounded
//! exponential backoff; topics are resubscribed after every (re)connect.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use rumqttc::{AsyncClient, Event, MqttOptions, Packet, QoS};
use serde_json::Value as Json;
use tokio::sync::oneshot;

use super::{IngestConfig, IngestMode};
use crate::error::{Error, Result};
use crate::model::{parse_timestamp, SensorReading, Timestamp, Value};

/// Receives readings from a running subscription.
pub trait ReadingSink: Send + 'static {
    fn accept(&mut self, reading: SensorReading);
}

impl<F: FnMut(SensorReading) + Send + 'static> ReadingSink for F {
    fn accept(&mut self, reading: SensorReading) {
        self(reading)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LinkState {
    Connecting,
    Connected,
    Reconnecting { attempt: u32, last_error: String },
    Stopped,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LiveStats {
    pub messages: u64,
    pub readings: u64,
    pub malformed: u64,
    pub reconnects: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Backoff {
    pub initial: Duration,
    pub max: Duration,
}

impl Default for Backoff {
    fn default() -> Self {
        Self {
            initial: Duration::from_millis(100),
            max: Duration::from_secs(5),
        }
    }
}

impl Backoff {
    /// Delay before reconnect attempt `attempt` (1-based).
    pub fn delay(&self, attempt: u32) -> Duration {
        let factor = 1u32 << attempt.saturating_sub(1).min(16);
        self.initial.saturating_mul(factor).min(self.max)
    }
}

#[derive(Default)]
struct Shared {
    state: Mutex<Option<LinkState>>,
    messages: AtomicU64,
    readings: AtomicU64,
    malformed: AtomicU64,
    reconnects: AtomicU64,
}

impl Shared {
    fn set(&self, s: LinkState) {
        *self.state.lock().unwrap() = Some(s);
    }

    fn stats(&self) -> LiveStats {
        LiveStats {
            messages: self.messages.load(Ordering::SeqCst),
            readings: self.readings.load(Ordering::SeqCst),
            malformed: self.malformed.load(Ordering::SeqCst),
            reconnects: self.reconnects.load(Ordering::SeqCst),
        }
    }
}

/// Handle to a running subscription. Dropping it shuts the link down.
pub struct Subscription {
    shared: Arc<Shared>,
    stop: Option<oneshot::Sender<()>>,
    worker: Option<JoinHandle<()>>,
}

impl Subscription {
    pub fn state(&self) -> LinkState {
        self.shared
            .state
            .lock()
            .unwrap()
            .clone()
            .unwrap_or(LinkState::Connecting)
    }

    pub fn stats(&self) -> LiveStats {
        self.shared.stats()
    }

    /// Disconnects, delivers anything already received, and returns the
    /// final counters.
    pub fn shutdown(mut self) -> LiveStats {
        self.stop_and_join();
        self.shared.stats()
    }

    fn stop_and_join(&mut self) {
        if let Some(tx) = self.stop.take() {
            let _ = tx.send(());
        }
        if let Some(h) = self.worker.take() {
            let _ = h.join();
        }
    }
}

impl Drop for Subscription {
    fn drop(&mut self) {
        self.stop_and_join();
    }
}

struct BrokerAddr {
    host: String,
    port: u16,
    credentials: Option<(String, String)>,
}

fn parse_broker_uri(uri: &str) -> Result<BrokerAddr> {
    let rest = match uri.split_once("://") {
        Some(("mqtt" | "tcp", rest)) => rest,
        Some((scheme, _)) => {
            return Err(Error::validation(format!("unsupported broker scheme `{scheme}`")))
        }
        None => uri,
    };
    let rest = rest.trim_end_matches('/');
    let (credentials, hostport) = match rest.rsplit_once('@') {
        Some((cred, hp)) => {
            let (u, p) = cred.split_once(':').unwrap_or((cred, ""));
            (Some((u.to_string(), p.to_string())), hp)
        }
        None => (None, rest),
    };
    let (host, port) = match hostport.rsplit_once(':') {
        Some((h, p)) => {
            let port = p
                .parse()
                .map_err(|_| Error::validation(format!("bad broker port in `{uri}`")))?;
            (h, port)
        }
        None => (hostport, 1883),
    };
    if host.is_empty() {
        return Err(Error::validation(format!("broker uri `{uri}` has no host")));
    }
    Ok(BrokerAddr {
        host: host.to_string(),
        port,
        credentials,
    })
}

/// Parses one JSON payload into readings. `arrival` stamps payloads that
/// carry no `timestamp` field. Fields come out in name order.
pub fn parse_payload(topic: &str, payload: &[u8], arrival: Timestamp) -> Result<Vec<SensorReading>> {
    let bad = |m: String| Error::Parse { line: 0, message: m };
    let json: Json = serde_json::from_slice(payload).map_err(|e| bad(e.to_string()))?;
    let Json::Object(map) = json else {
        return Err(bad("payload is not a JSON object".into()));
    };
    let timestamp = match map.get("timestamp") {
        None => arrival,
        Some(Json::Number(n)) => n
            .as_i64()
            .or_else(|| n.as_f64().filter(|f| f.is_finite()).map(|f| f.floor() as i64))
            .ok_or_else(|| bad(format!("bad timestamp {n}")))?,
        Some(Json::String(s)) => parse_timestamp(s)?,
        Some(other) => return Err(bad(format!("bad timestamp {other}"))),
    };
    let mut out = Vec::with_capacity(map.len());
    for (field, v) in &map {
        if field == "timestamp" {
            continue;
        }
        let value = match v {
            Json::Number(n) => Value::Number(n.as_f64().unwrap_or(f64::NAN)),
            Json::String(s) => Value::Text(s.clone()),
            Json::Null => Value::Null,
            _ => return Err(bad(format!("field `{field}` is not a scalar"))),
        };
        out.push(SensorReading {
            timestamp,
            device_id: topic.to_string(),
            topic: topic.to_string(),
            stream: field.clone(),
            value,
        });
    }
    Ok(out)
}

/// Starts a live subscription with the default backoff policy.
pub fn subscribe<S: ReadingSink>(cfg: &IngestConfig, sink: S) -> Result<Subscription> {
    subscribe_with(cfg, Backoff::default(), sink)
}

pub fn subscribe_with<S: ReadingSink>(
    cfg: &IngestConfig,
    backoff: Backoff,
    mut sink: S,
) -> Result<Subscription> {
    if cfg.mode != IngestMode::Live {
        return Err(Error::validation("subscribe requires live mode"));
    }
    cfg.validate()?;
    if cfg.topics.is_empty() {
        return Err(Error::validation("live mode needs at least one topic"));
    }
    let addr = parse_broker_uri(cfg.broker_uri.as_deref().unwrap_or_default())?;
    let client_id = format!(
        "sentinel-{}-{}",
        std::process::id(),
        chrono::Utc::now().timestamp_nanos_opt().unwrap_or(0)
    );
    let mut opts = MqttOptions::new(client_id, addr.host, addr.port);
    opts.set_keep_alive(Duration::from_secs(30));
    opts.set_clean_session(true);
    if let Some((u, p)) = addr.credentials {
        opts.set_credentials(u, p);
    }
    let topics = cfg.topics.clone();
    let shared = Arc::new(Shared::default());
    shared.set(LinkState::Connecting);
    let (stop_tx, mut stop_rx) = oneshot::channel::<()>();
    let runtime = tokio::runtime::Builder::new_current_thread()
        .enable_all()
        .build()?;

    let worker_shared = Arc::clone(&shared);
    let worker = std::thread::Builder::new()
        .name("sentinel-mqtt".into())
        .spawn(move || {
            let shared = worker_shared;
            runtime.block_on(async move {
                let (client, mut events) = AsyncClient::new(opts, topics.len() + 16);
                let mut handle = |topic: &str, payload: &[u8]| {
                    shared.messages.fetch_add(1, Ordering::SeqCst);
                    let now = chrono::Utc::now().timestamp();
                    match parse_payload(topic, payload, now) {
                        Ok(readings) => {
                            shared.readings.fetch_add(readings.len() as u64, Ordering::SeqCst);
                            readings.into_iter().for_each(|r| sink.accept(r));
                        }
                        Err(e) => {
                            log::debug!("skipping malformed payload on `{topic}`: {e}");
                            shared.malformed.fetch_add(1, Ordering::SeqCst);
                        }
                    }
                };
                let mut attempt = 0u32;
                loop {
                    tokio::select! {
                        _ = &mut stop_rx => break,
                        ev = events.poll() => match ev {
                            Ok(Event::Incoming(Packet::ConnAck(_))) => {
                                attempt = 0;
                                shared.set(LinkState::Connected);
                                for t in &topics {
                                    if let Err(e) = client.try_subscribe(t.clone(), QoS::AtMostOnce) {
                                        log::warn!("subscribe `{t}` failed: {e}");
                                    }
                                }
                            }
                            Ok(Event::Incoming(Packet::Publish(p))) => handle(&p.topic, &p.payload),
                            Ok(_) => {}
                            Err(e) => {
                                attempt += 1;
                                shared.reconnects.fetch_add(1, Ordering::SeqCst);
                                log::warn!("broker link lost ({e}); retry {attempt}");
                                shared.set(LinkState::Reconnecting {
                                    attempt,
                                    last_error: e.to_string(),
                                });
                                tokio::select! {
                                    _ = &mut stop_rx => break,
                                    _ = tokio::time::sleep(backoff.delay(attempt)) => {}
                                }
                            }
                        }
                    }
                }
                // Drain whatever the broker already delivered, then leave.
                let _ = client.try_disconnect();
                let drain = async {
                    while let Ok(ev) = events.poll().await {
                        match ev {
                            Event::Incoming(Packet::Publish(p)) => handle(&p.topic, &p.payload),
                            Event::Outgoing(rumqttc::Outgoing::Disconnect) => break,
                            _ => {}
                        }
                    }
                };
                let _ = tokio::time::timeout(Duration::from_millis(500), drain).await;
                shared.set(LinkState::Stopped);
            });
        })?;

    Ok(Subscription {
        shared,
        stop: Some(stop_tx),
        worker: Some(worker),
    })
}
