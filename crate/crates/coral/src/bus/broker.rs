use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};

use serde_json::json;
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::tcp::{OwnedReadHalf, OwnedWriteHalf};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::{mpsc, watch};
use tokio::task::JoinHandle;
use tracing::{debug, trace, warn};

use super::envelope::{decode_frame, encode_frame, valid_channel, Decoded, Envelope, Op};
use super::{reason, BusError};

/// Default broker listen address when a compose file names none.
pub const DEFAULT_BUS_ADDR: &str = "127.0.0.1:7447";

type SessionId = u64;

struct SessionEntry {
    client_id: String,
    tx: mpsc::UnboundedSender<Envelope>,
}

struct PendingCall {
    caller: SessionId,
    caller_call_id: u64,
    server: SessionId,
    ch: String,
}

#[derive(Default)]
struct State {
    sessions: HashMap<SessionId, SessionEntry>,
    /// channel -> subscriber sessions, in subscription order.
    subs: HashMap<String, Vec<SessionId>>,
    /// service channel -> owning session.
    services: HashMap<String, SessionId>,
    /// broker-side call id -> routing info for the in-flight SRV_CALL.
    inflight: HashMap<u64, PendingCall>,
    next_session: SessionId,
    next_call_id: u64,
    next_anon: u64,
}

impl State {
    fn send_to(&self, sid: SessionId, env: Envelope) {
        if let Some(entry) = self.sessions.get(&sid) {
            let _ = entry.tx.send(env);
        }
    }
}

/// A running broker bound to a TCP address. Dropping the handle aborts the
/// accept loop; [`BrokerHandle::shutdown`] stops it cleanly and closes all
/// sessions.
pub struct BrokerHandle {
    addr: SocketAddr,
    stop: watch::Sender<bool>,
    task: Option<JoinHandle<()>>,
}

impl BrokerHandle {
    /// Binds `addr` (port 0 picks an ephemeral port) and starts serving.
    pub async fn start(addr: &str) -> Result<BrokerHandle, BusError> {
        let listener = TcpListener::bind(addr).await?;
        let addr = listener.local_addr()?;
        let (stop, stop_rx) = watch::channel(false);
        let task = tokio::spawn(accept_loop(listener, stop_rx));
        debug!(%addr, "broker listening");
        Ok(BrokerHandle { addr, stop, task: Some(task) })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Stops accepting and drops every live session.
    pub async fn shutdown(mut self) {
        let _ = self.stop.send(true);
        if let Some(task) = self.task.take() {
            let _ = task.await;
        }
    }
}

impl Drop for BrokerHandle {
    fn drop(&mut self) {
        let _ = self.stop.send(true);
    }
}

async fn accept_loop(listener: TcpListener, mut stop: watch::Receiver<bool>) {
    let state = Arc::new(Mutex::new(State::default()));
    let mut session_tasks: Vec<JoinHandle<()>> = Vec::new();
    loop {
        tokio::select! {
            accepted = listener.accept() => {
                match accepted {
                    Ok((socket, peer)) => {
                        trace!(%peer, "session accepted");
                        let _ = socket.set_nodelay(true);
                        session_tasks.push(tokio::spawn(run_session(socket, state.clone())));
                    }
                    Err(e) => {
                        warn!(error = %e, "accept failed");
                    }
                }
                session_tasks.retain(|t| !t.is_finished());
            }
            _ = stop.changed() => break,
        }
    }
    for t in &session_tasks {
        t.abort();
    }
}

async fn run_session(socket: TcpStream, state: Arc<Mutex<State>>) {
    let (read_half, write_half) = socket.into_split();
    let (tx, rx) = mpsc::unbounded_channel::<Envelope>();
    let writer = tokio::spawn(write_loop(write_half, rx));

    let sid = { // session id reserved before HELLO so cleanup is uniform
        let mut st = state.lock().unwrap();
        st.next_session += 1;
        st.next_session
    };

    let mut reader = FrameReader::new(read_half);
    let client_id = match handshake(&mut reader, &tx, &state, sid).await {
        Some(id) => id,
        None => {
            drop(tx);
            let _ = writer.await;
            return;
        }
    };

    loop {
        match reader.next().await {
            Ok(Some(env)) => {
                if env.op == Op::Bye {
                    break;
                }
                handle_frame(&state, sid, &client_id, env);
            }
            Ok(None) => break,
            Err(e) => {
                debug!(client = %client_id, error = %e, "session read error");
                break;
            }
        }
    }

    cleanup_session(&state, sid, &client_id);
    drop(tx);
    let _ = writer.await;
}

/// First frame must be HELLO. Replies HELLO with the assigned client id, or
/// ERR and `None` when the requested id is taken.
async fn handshake(
    reader: &mut FrameReader,
    tx: &mpsc::UnboundedSender<Envelope>,
    state: &Arc<Mutex<State>>,
    sid: SessionId,
) -> Option<String> {
    let env = match reader.next().await {
        Ok(Some(env)) if env.op == Op::Hello => env,
        Ok(Some(env)) => {
            let _ = tx.send(Envelope::err("", env.id, reason::PROTOCOL));
            return None;
        }
        _ => return None,
    };
    let mut st = state.lock().unwrap();
    let client_id = if env.src.is_empty() {
        st.next_anon += 1;
        format!("c{}", st.next_anon)
    } else {
        if st.sessions.values().any(|s| s.client_id == env.src) {
            let _ = tx.send(Envelope::err("", env.id, reason::ID_TAKEN));
            return None;
        }
        env.src.clone()
    };
    st.sessions.insert(sid, SessionEntry { client_id: client_id.clone(), tx: tx.clone() });
    let _ = tx.send(Envelope::new(Op::Hello, "", env.id, json!({ "client_id": client_id })));
    Some(client_id)
}

fn handle_frame(state: &Arc<Mutex<State>>, sid: SessionId, client_id: &str, env: Envelope) {
    let needs_channel = matches!(
        env.op,
        Op::Adv | Op::Sub | Op::Unsub | Op::Pub | Op::SrvReg | Op::SrvCall
    );
    if needs_channel && !valid_channel(&env.ch) {
        let st = state.lock().unwrap();
        st.send_to(sid, Envelope::err(env.ch.clone(), env.id, reason::INVALID_CHANNEL));
        return;
    }

    let mut st = state.lock().unwrap();
    match env.op {
        Op::Sub => {
            let entry = st.subs.entry(env.ch.clone()).or_default();
            if !entry.contains(&sid) {
                entry.push(sid);
            }
            st.send_to(sid, Envelope::new(Op::Sub, env.ch, env.id, json!(null)));
        }
        Op::Unsub => {
            if let Some(entry) = st.subs.get_mut(&env.ch) {
                entry.retain(|s| *s != sid);
                if entry.is_empty() {
                    st.subs.remove(&env.ch);
                }
            }
            st.send_to(sid, Envelope::new(Op::Unsub, env.ch, env.id, json!(null)));
        }
        Op::Adv => {
            // Advertisement is informational; the broker just acknowledges.
            st.send_to(sid, Envelope::new(Op::Adv, env.ch, env.id, json!(null)));
        }
        Op::Pub => {
            let out = Envelope::new(Op::Pub, env.ch.clone(), env.id, env.data)
                .with_src(client_id.to_string());
            if let Some(subscribers) = st.subs.get(&env.ch) {
                for sub in subscribers.clone() {
                    st.send_to(sub, out.clone());
                }
            }
        }
        Op::SrvReg => {
            if st.services.contains_key(&env.ch) {
                st.send_to(sid, Envelope::err(env.ch, env.id, reason::SERVICE_TAKEN));
            } else {
                st.services.insert(env.ch.clone(), sid);
                st.send_to(sid, Envelope::new(Op::SrvReg, env.ch, env.id, json!(null)));
            }
        }
        Op::SrvCall => match st.services.get(&env.ch).copied() {
            None => {
                st.send_to(sid, Envelope::err(env.ch, env.id, reason::NO_SUCH_SERVICE));
            }
            Some(server) => {
                st.next_call_id += 1;
                let bid = st.next_call_id;
                st.inflight.insert(
                    bid,
                    PendingCall { caller: sid, caller_call_id: env.id, server, ch: env.ch.clone() },
                );
                let fwd = Envelope::new(Op::SrvCall, env.ch, bid, env.data)
                    .with_src(client_id.to_string());
                st.send_to(server, fwd);
            }
        },
        Op::SrvRep | Op::Err => {
            // Only the session the call was routed to may answer it.
            let Some(call) = st.inflight.get(&env.id) else {
                trace!(id = env.id, "reply for unknown call dropped");
                return;
            };
            if call.server != sid {
                trace!(id = env.id, "reply from non-owner session dropped");
                return;
            }
            let call = st.inflight.remove(&env.id).unwrap();
            let out = Envelope {
                v: env.v,
                op: env.op,
                ch: call.ch,
                id: call.caller_call_id,
                src: client_id.to_string(),
                data: env.data,
            };
            st.send_to(call.caller, out);
        }
        Op::Hello | Op::Bye => {
            st.send_to(sid, Envelope::err("", env.id, reason::PROTOCOL));
        }
    }
}

fn cleanup_session(state: &Arc<Mutex<State>>, sid: SessionId, client_id: &str) {
    let mut st = state.lock().unwrap();
    st.sessions.remove(&sid);
    st.subs.retain(|_, subscribers| {
        subscribers.retain(|s| *s != sid);
        !subscribers.is_empty()
    });
    st.services.retain(|_, owner| *owner != sid);

    // Fail calls in flight toward the departed server; drop calls it issued.
    let orphaned: Vec<u64> = st
        .inflight
        .iter()
        .filter(|(_, c)| c.server == sid || c.caller == sid)
        .map(|(bid, _)| *bid)
        .collect();
    for bid in orphaned {
        let call = st.inflight.remove(&bid).unwrap();
        if call.server == sid {
            st.send_to(
                call.caller,
                Envelope::err(call.ch, call.caller_call_id, reason::SERVICE_LOST),
            );
        }
    }
    debug!(client = %client_id, "session closed");
}

async fn write_loop(mut half: OwnedWriteHalf, mut rx: mpsc::UnboundedReceiver<Envelope>) {
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

/// Incremental frame reader over a socket read half.
pub(crate) struct FrameReader {
    half: OwnedReadHalf,
    buf: Vec<u8>,
}

impl FrameReader {
    pub(crate) fn new(half: OwnedReadHalf) -> Self {
        FrameReader { half, buf: Vec::with_capacity(4096) }
    }

    /// Next complete envelope, `None` on clean EOF.
    pub(crate) async fn next(&mut self) -> Result<Option<Envelope>, BusError> {
        loop {
            match decode_frame(&self.buf)? {
                Decoded::Frame(env, used) => {
                    self.buf.drain(..used);
                    return Ok(Some(env));
                }
                Decoded::NeedMore => {
                    let mut chunk = [0u8; 16 * 1024];
                    let n = self.half.read(&mut chunk).await?;
                    if n == 0 {
                        return Ok(None);
                    }
                    self.buf.extend_from_slice(&chunk[..n]);
                }
            }
        }
    }
}
