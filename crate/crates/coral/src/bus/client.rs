use std::collections::HashMap;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use futures::future::BoxFuture;
use futures::FutureExt;
use serde_json::{json, Value};
use tokio::net::TcpStream;
use tokio::sync::{mpsc, oneshot};
use tracing::{debug, trace, warn};

use super::broker::FrameReader;
use super::envelope::{encode_frame, valid_channel, Envelope, Op};
use super::BusError;

/// Env var consulted for a fixed client id; the broker assigns one if unset.
pub const CLIENT_ID_ENV: &str = "CORAL_CLIENT_ID";

/// Channel named in flush round-trips. Advertisements are stateless on the
/// broker side, so this never collides with real traffic.
const FLUSH_CHANNEL: &str = "coral/internal/flush";

type Handler = Arc<dyn Fn(Value) -> BoxFuture<'static, Value> + Send + Sync>;

struct Shared {
    client_id: std::sync::OnceLock<String>,
    out: mpsc::UnboundedSender<Envelope>,
    next_id: AtomicU64,
    pending: Mutex<HashMap<u64, oneshot::Sender<Envelope>>>,
    /// channel -> live subscription queues for that channel.
    subs: Mutex<HashMap<String, Vec<(u64, mpsc::UnboundedSender<Envelope>)>>>,
    latest: Mutex<HashMap<String, Value>>,
    services: Mutex<HashMap<String, Handler>>,
    closed: AtomicBool,
}

impl Shared {
    fn next_id(&self) -> u64 {
        self.next_id.fetch_add(1, Ordering::Relaxed)
    }

    fn send(&self, env: Envelope) -> Result<(), BusError> {
        if self.closed.load(Ordering::Acquire) {
            return Err(BusError::Closed);
        }
        self.out.send(env).map_err(|_| BusError::Closed)
    }

    /// Registers a oneshot for `id` and returns the receiving end.
    fn expect_reply(&self, id: u64) -> oneshot::Receiver<Envelope> {
        let (tx, rx) = oneshot::channel();
        self.pending.lock().unwrap().insert(id, tx);
        rx
    }

    fn drop_pending(&self, id: u64) {
        self.pending.lock().unwrap().remove(&id);
    }
}

/// One session on the bus. Cheap to clone; all clones share the connection.
#[derive(Clone)]
pub struct BusClient {
    shared: Arc<Shared>,
}

impl std::fmt::Debug for BusClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BusClient").field("client_id", &self.client_id()).finish()
    }
}

/// A live subscription. Messages arrive in per-publisher FIFO order. Dropping
/// the subscription unsubscribes at the broker when it was the channel's last
/// local queue.
pub struct Subscription {
    ch: String,
    key: u64,
    rx: mpsc::UnboundedReceiver<Envelope>,
    shared: Arc<Shared>,
}

/// Marker for a registered service; the handler stays active for the life of
/// the session.
#[derive(Debug)]
pub struct ServiceHandle {
    pub channel: String,
}

impl BusClient {
    /// Connects and performs the HELLO handshake. An empty `client_id`
    /// requests a broker-assigned one; `None` falls back to `CORAL_CLIENT_ID`.
    pub async fn connect(addr: &str, client_id: Option<&str>) -> Result<BusClient, BusError> {
        let requested = match client_id {
            Some(id) => id.to_string(),
            None => std::env::var(CLIENT_ID_ENV).unwrap_or_default(),
        };
        let socket = TcpStream::connect(addr).await?;
        let _ = socket.set_nodelay(true);
        let (read_half, write_half) = socket.into_split();

        let (out, out_rx) = mpsc::unbounded_channel::<Envelope>();
        let shared = Arc::new(Shared {
            client_id: std::sync::OnceLock::new(),
            out,
            next_id: AtomicU64::new(1),
            pending: Mutex::new(HashMap::new()),
            subs: Mutex::new(HashMap::new()),
            latest: Mutex::new(HashMap::new()),
            services: Mutex::new(HashMap::new()),
            closed: AtomicBool::new(false),
        });

        tokio::spawn(write_loop(write_half, out_rx));
        tokio::spawn(read_loop(FrameReader::new(read_half), shared.clone()));

        let id = shared.next_id();
        let rx = shared.expect_reply(id);
        let hello = Envelope::new(Op::Hello, "", id, Value::Null).with_src(requested);
        shared.send(hello)?;
        let reply = rx.await.map_err(|_| BusError::Closed)?;
        let assigned = match reply.op {
            Op::Hello => reply
                .data
                .get("client_id")
                .and_then(Value::as_str)
                .unwrap_or_default()
                .to_string(),
            Op::Err => {
                let reason = reply.err_reason().unwrap_or("handshake rejected");
                return Err(BusError::from_reason(reason, ""));
            }
            _ => return Err(BusError::Remote { reason: "bad handshake reply".into() }),
        };

        let _ = shared.client_id.set(assigned);
        Ok(BusClient { shared })
    }

    /// The identity the broker knows this session by; `src` of everything we
    /// publish.
    pub fn client_id(&self) -> &str {
        self.shared.client_id.get().map(String::as_str).unwrap_or("")
    }

    pub fn is_closed(&self) -> bool {
        self.shared.closed.load(Ordering::Acquire)
    }

    /// Fire-and-forget publish. Synchronous: the frame is queued for the
    /// writer task, errors only surface when the session is gone.
    pub fn publish(&self, ch: &str, data: Value) -> Result<(), BusError> {
        if !valid_channel(ch) {
            return Err(BusError::InvalidChannel { ch: ch.to_string() });
        }
        self.shared.send(Envelope::new(Op::Pub, ch, self.shared.next_id(), data))
    }

    /// Waits until the broker has processed every frame queued before this
    /// call. Frames travel in order on the session, so one acknowledged
    /// round-trip is proof of delivery for everything published earlier.
    /// Callers that publish and then exit need this; otherwise the queued
    /// frames die with the writer task.
    pub async fn flush(&self) -> Result<(), BusError> {
        let id = self.shared.next_id();
        let ack = self.shared.expect_reply(id);
        if let Err(e) = self.shared.send(Envelope::new(Op::Adv, FLUSH_CHANNEL, id, Value::Null)) {
            self.shared.drop_pending(id);
            return Err(e);
        }
        match ack.await {
            Ok(env) if env.op == Op::Adv => Ok(()),
            Ok(env) => {
                let reason = env.err_reason().unwrap_or("flush rejected");
                Err(BusError::from_reason(reason, FLUSH_CHANNEL))
            }
            Err(_) => Err(BusError::Closed),
        }
    }

    /// Subscribes and waits for the broker acknowledgment, so every message
    /// published after this returns is observed.
    pub async fn subscribe(&self, ch: &str) -> Result<Subscription, BusError> {
        if !valid_channel(ch) {
            return Err(BusError::InvalidChannel { ch: ch.to_string() });
        }
        let key = self.shared.next_id();
        let (tx, rx) = mpsc::unbounded_channel();
        self.shared.subs.lock().unwrap().entry(ch.to_string()).or_default().push((key, tx));

        let id = self.shared.next_id();
        let ack = self.shared.expect_reply(id);
        if let Err(e) = self.shared.send(Envelope::new(Op::Sub, ch, id, Value::Null)) {
            self.remove_sub(ch, key);
            return Err(e);
        }
        match ack.await {
            Ok(env) if env.op == Op::Sub => {
                Ok(Subscription { ch: ch.to_string(), key, rx, shared: self.shared.clone() })
            }
            Ok(env) => {
                self.remove_sub(ch, key);
                let reason = env.err_reason().unwrap_or("subscribe rejected");
                Err(BusError::from_reason(reason, ch))
            }
            Err(_) => {
                self.remove_sub(ch, key);
                Err(BusError::Closed)
            }
        }
    }

    fn remove_sub(&self, ch: &str, key: u64) {
        let mut subs = self.shared.subs.lock().unwrap();
        if let Some(queues) = subs.get_mut(ch) {
            queues.retain(|(k, _)| *k != key);
            if queues.is_empty() {
                subs.remove(ch);
                let id = self.shared.next_id();
                let _ = self.shared.send(Envelope::new(Op::Unsub, ch, id, Value::Null));
            }
        }
    }

    /// Last message seen on `ch` across all of this session's subscriptions.
    pub fn latest(&self, ch: &str) -> Option<Value> {
        self.shared.latest.lock().unwrap().get(ch).cloned()
    }

    /// Calls the service on `ch` and waits for its correlated reply.
    pub async fn call(&self, ch: &str, data: Value, timeout: Duration) -> Result<Value, BusError> {
        if !valid_channel(ch) {
            return Err(BusError::InvalidChannel { ch: ch.to_string() });
        }
        let id = self.shared.next_id();
        let rx = self.shared.expect_reply(id);
        // Guard drops the pending slot if this future is cancelled or times
        // out; a late reply then falls on the floor instead of leaking.
        let guard = PendingGuard { shared: self.shared.clone(), id };
        self.shared.send(Envelope::new(Op::SrvCall, ch, id, data))?;
        let reply = tokio::time::timeout(timeout, rx).await;
        drop(guard);
        match reply {
            Err(_) => Err(BusError::Timeout { ch: ch.to_string() }),
            Ok(Err(_)) => Err(BusError::Closed),
            Ok(Ok(env)) => match env.op {
                Op::SrvRep => Ok(env.data),
                Op::Err => {
                    let reason = env.err_reason().unwrap_or("call failed");
                    Err(BusError::from_reason(reason, ch))
                }
                _ => Err(BusError::Remote { reason: "bad call reply".into() }),
            },
        }
    }

    /// Registers `handler` as the service on `ch`. Calls run on their own
    /// tasks; a panicking handler answers with an ERR instead of hanging the
    /// caller.
    pub async fn serve<F, Fut>(&self, ch: &str, handler: F) -> Result<ServiceHandle, BusError>
    where
        F: Fn(Value) -> Fut + Send + Sync + 'static,
        Fut: std::future::Future<Output = Value> + Send + 'static,
    {
        if !valid_channel(ch) {
            return Err(BusError::InvalidChannel { ch: ch.to_string() });
        }
        let boxed: Handler = Arc::new(move |v| handler(v).boxed());
        {
            let mut services = self.shared.services.lock().unwrap();
            if services.contains_key(ch) {
                return Err(BusError::ServiceTaken { ch: ch.to_string() });
            }
            services.insert(ch.to_string(), boxed);
        }
        let id = self.shared.next_id();
        let ack = self.shared.expect_reply(id);
        if let Err(e) = self.shared.send(Envelope::new(Op::SrvReg, ch, id, Value::Null)) {
            self.shared.services.lock().unwrap().remove(ch);
            return Err(e);
        }
        match ack.await {
            Ok(env) if env.op == Op::SrvReg => Ok(ServiceHandle { channel: ch.to_string() }),
            Ok(env) => {
                self.shared.services.lock().unwrap().remove(ch);
                let reason = env.err_reason().unwrap_or("registration rejected");
                Err(BusError::from_reason(reason, ch))
            }
            Err(_) => {
                self.shared.services.lock().unwrap().remove(ch);
                Err(BusError::Closed)
            }
        }
    }

    /// Sends BYE and tears the session down.
    pub fn close(&self) {
        let id = self.shared.next_id();
        let _ = self.shared.send(Envelope::new(Op::Bye, "", id, Value::Null));
        self.shared.closed.store(true, Ordering::Release);
    }
}

/// Removes a pending-call slot when dropped before a reply arrived.
struct PendingGuard {
    shared: Arc<Shared>,
    id: u64,
}

impl Drop for PendingGuard {
    fn drop(&mut self) {
        self.shared.drop_pending(self.id);
    }
}

impl Subscription {
    pub fn channel(&self) -> &str {
        &self.ch
    }

    /// Next message, waiting up to `timeout`. `Timeout` when nothing arrives,
    /// `Closed` when the session is gone.
    pub async fn next(&mut self, timeout: Duration) -> Result<Envelope, BusError> {
        match tokio::time::timeout(timeout, self.rx.recv()).await {
            Err(_) => Err(BusError::Timeout { ch: self.ch.clone() }),
            Ok(None) => Err(BusError::Closed),
            Ok(Some(env)) => Ok(env),
        }
    }

    /// Next message, waiting indefinitely.
    pub async fn recv(&mut self) -> Result<Envelope, BusError> {
        self.rx.recv().await.ok_or(BusError::Closed)
    }

    /// Non-blocking drain of one queued message.
    pub fn try_next(&mut self) -> Option<Envelope> {
        self.rx.try_recv().ok()
    }
}

impl Drop for Subscription {
    fn drop(&mut self) {
        let mut subs = self.shared.subs.lock().unwrap();
        if let Some(queues) = subs.get_mut(&self.ch) {
            queues.retain(|(k, _)| *k != self.key);
            if queues.is_empty() {
                subs.remove(&self.ch);
                if !self.shared.closed.load(Ordering::Acquire) {
                    let id = self.shared.next_id();
                    let _ = self
                        .shared
                        .out
                        .send(Envelope::new(Op::Unsub, self.ch.clone(), id, Value::Null));
                }
            }
        }
    }
}

async fn write_loop(
    mut half: tokio::net::tcp::OwnedWriteHalf,
    mut rx: mpsc::UnboundedReceiver<Envelope>,
) {
    use tokio::io::AsyncWriteExt;
    while let Some(env) = rx.recv().await {
        let bytes = match encode_frame(&env) {
            Ok(b) => b,
            Err(e) => {
                warn!(error = %e, "dropping unencodable frame");
                continue;
            }
        };
        if half.write_all(&bytes).await.is_err() {
            break;
        }
    }
    let _ = half.shutdown().await;
}

async fn read_loop(mut reader: FrameReader, shared: Arc<Shared>) {
    loop {
        let env = match reader.next().await {
            Ok(Some(env)) => env,
            Ok(None) => break,
            Err(e) => {
                debug!(error = %e, "client read error");
                break;
            }
        };
        dispatch(&shared, env);
    }
    shared.closed.store(true, Ordering::Release);
    // Waiters see Closed; subscribers see end-of-stream.
    shared.pending.lock().unwrap().clear();
    shared.subs.lock().unwrap().clear();
}

fn dispatch(shared: &Arc<Shared>, env: Envelope) {
    match env.op {
        Op::Pub => {
            shared.latest.lock().unwrap().insert(env.ch.clone(), env.data.clone());
            let subs = shared.subs.lock().unwrap();
            if let Some(queues) = subs.get(&env.ch) {
                for (_, tx) in queues {
                    let _ = tx.send(env.clone());
                }
            }
        }
        Op::SrvCall => {
            let handler = shared.services.lock().unwrap().get(&env.ch).cloned();
            let Some(handler) = handler else {
                trace!(ch = %env.ch, "call for unserved channel");
                let _ = shared.send(Envelope::err(env.ch, env.id, "no_handler"));
                return;
            };
            let shared = shared.clone();
            tokio::spawn(async move {
                let reply = std::panic::AssertUnwindSafe(handler(env.data))
                    .catch_unwind()
                    .await;
                let out = match reply {
                    Ok(value) => Envelope::new(Op::SrvRep, env.ch, env.id, value),
                    Err(_) => {
                        warn!(ch = %env.ch, "service handler panicked");
                        Envelope::new(
                            Op::Err,
                            env.ch,
                            env.id,
                            json!({ "reason": "handler_panic" }),
                        )
                    }
                };
                let _ = shared.send(out);
            });
        }
        // Correlated replies and acknowledgments.
        Op::Hello | Op::Sub | Op::Unsub | Op::Adv | Op::SrvReg | Op::SrvRep | Op::Err => {
            let waiter = shared.pending.lock().unwrap().remove(&env.id);
            match waiter {
                Some(tx) => {
                    let _ = tx.send(env);
                }
                None => trace!(op = ?env.op, id = env.id, "uncorrelated reply dropped"),
            }
        }
        // The broker never sends BYE.
        Op::Bye => {}
    }
}
