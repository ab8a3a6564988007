//! Envelope codec round-trips at volume, plus FIFO and correlation
//! invariants with many concurrent clients against one live broker.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use coral::bus::{decode_frame, encode_frame, BrokerHandle, BusClient, Decoded, Envelope, Op};

const ROUNDTRIPS: usize = 10_000;
const CLIENTS: usize = 10;
const PER_CLIENT: usize = 100;

fn random_channel(rng: &mut ChaCha8Rng) -> String {
    const CHARS: &[u8] = b"abcdefghijklmnopqrstuvwxyz0123456789_/";
    let len = rng.gen_range(1..=16);
    (0..len).map(|_| CHARS[rng.gen_range(0..CHARS.len())] as char).collect()
}

fn random_value(rng: &mut ChaCha8Rng, depth: usize) -> Value {
    match rng.gen_range(0..if depth == 0 { 5 } else { 7 }) {
        0 => Value::Null,
        1 => json!(rng.gen::<bool>()),
        2 => json!(rng.gen::<i64>()),
        3 => {
            let f: f64 = rng.gen_range(-1.0e12..1.0e12);
            json!(f)
        }
        4 => {
            let len = rng.gen_range(0..24);
            let s: String = (0..len).map(|_| rng.gen_range('!'..='~')).collect();
            json!(s)
        }
        5 => {
            let len = rng.gen_range(0..4);
            Value::Array((0..len).map(|_| random_value(rng, depth - 1)).collect())
        }
        _ => {
            let len = rng.gen_range(0..4);
            Value::Object(
                (0..len)
                    .map(|i| (format!("k{i}"), random_value(rng, depth - 1)))
                    .collect(),
            )
        }
    }
}

fn random_envelope(rng: &mut ChaCha8Rng) -> Envelope {
    const OPS: [Op; 10] = [
        Op::Hello,
        Op::Bye,
        Op::Adv,
        Op::Sub,
        Op::Unsub,
        Op::Pub,
        Op::SrvReg,
        Op::SrvCall,
        Op::SrvRep,
        Op::Err,
    ];
    let mut env = Envelope::new(
        OPS[rng.gen_range(0..OPS.len())],
        random_channel(rng),
        rng.gen(),
        random_value(rng, 2),
    );
    if rng.gen::<bool>() {
        env.src = format!("c{}", rng.gen::<u16>());
    }
    env
}

fn roundtrip_sweep() -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x0C0FFEE);
    for i in 0..ROUNDTRIPS {
        let env = random_envelope(&mut rng);
        let frame = encode_frame(&env).map_err(|e| format!("encode #{i}: {e} ({env:?})"))?;
        match decode_frame(&frame).map_err(|e| format!("decode #{i}: {e} ({env:?})"))? {
            Decoded::Frame(back, used) => {
                if used != frame.len() {
                    return Err(format!("#{i}: consumed {used} of {} bytes", frame.len()));
                }
                if back != env {
                    return Err(format!("#{i}: {env:?} came back as {back:?}"));
                }
            }
            Decoded::NeedMore => return Err(format!("#{i}: full frame reported incomplete")),
        }
    }
    Ok(())
}

async fn fifo_and_correlation() -> Result<(), String> {
    let broker = BrokerHandle::start("127.0.0.1:0").await.map_err(|e| e.to_string())?;
    let addr = broker.addr().to_string();

    // Correlation: one echo service, many interleaved callers; every reply
    // must carry its caller's own payload.
    let server = BusClient::connect(&addr, Some("echo_server")).await.map_err(|e| e.to_string())?;
    let _service = server
        .serve("acc/echo", |req| async move { json!({ "echo": req }) })
        .await
        .map_err(|e| e.to_string())?;

    let mut handles = Vec::new();
    for c in 0..CLIENTS {
        let addr = addr.clone();
        handles.push(tokio::spawn(async move {
            let client = BusClient::connect(&addr, Some(&format!("caller{c}")))
                .await
                .map_err(|e| e.to_string())?;
            for seq in 0..PER_CLIENT {
                let payload = json!({ "caller": c, "seq": seq });
                let reply = client
                    .call("acc/echo", payload.clone(), std::time::Duration::from_secs(5))
                    .await
                    .map_err(|e| format!("caller {c} seq {seq}: {e}"))?;
                if reply != json!({ "echo": payload }) {
                    return Err(format!("caller {c} seq {seq} got {reply}"));
                }
            }
            Ok::<(), String>(())
        }));
    }
    for h in handles {
        h.await.map_err(|e| e.to_string())??;
    }

    // FIFO: per-publisher order must survive fan-out.
    let sub_client = BusClient::connect(&addr, Some("fifo_sub")).await.map_err(|e| e.to_string())?;
    let mut sub = sub_client.subscribe("acc/fifo").await.map_err(|e| e.to_string())?;

    let mut publishers = Vec::new();
    for p in 0..CLIENTS {
        let addr = addr.clone();
        publishers.push(tokio::spawn(async move {
            let client = BusClient::connect(&addr, Some(&format!("pub{p}")))
                .await
                .map_err(|e| e.to_string())?;
            for seq in 0..PER_CLIENT {
                client
                    .publish("acc/fifo", json!({ "p": p, "seq": seq }))
                    .map_err(|e| e.to_string())?;
                if seq % 10 == 0 {
                    tokio::task::yield_now().await;
                }
            }
            Ok::<(), String>(())
        }));
    }
    for h in publishers {
        h.await.map_err(|e| e.to_string())??;
    }

    let mut last_seq = vec![-1i64; CLIENTS];
    for n in 0..CLIENTS * PER_CLIENT {
        let msg = sub
            .next(std::time::Duration::from_secs(5))
            .await
            .map_err(|e| format!("after {n} messages: {e}"))?;
        let p = msg.data["p"].as_u64().ok_or("missing p")? as usize;
        let seq = msg.data["seq"].as_i64().ok_or("missing seq")?;
        if seq != last_seq[p] + 1 {
            return Err(format!("publisher {p}: saw seq {seq} after {}", last_seq[p]));
        }
        last_seq[p] = seq;
    }
    if last_seq.iter().any(|s| *s != (PER_CLIENT as i64) - 1) {
        return Err(format!("incomplete streams: {last_seq:?}"));
    }

    broker.shutdown().await;
    Ok(())
}

#[test]
fn criterion_6_bus_properties() {
    let outcome = roundtrip_sweep().and_then(|()| {
        tokio::runtime::Runtime::new()
            .map_err(|e| e.to_string())?
            .block_on(fifo_and_correlation())
    });
    crate::report(
        6,
        "bus properties",
        outcome.map(|()| {
            format!(
                "{ROUNDTRIPS} envelope round-trips, {CLIENTS}x{PER_CLIENT} calls correlated, \
                 {CLIENTS}x{PER_CLIENT} publishes in per-publisher order"
            )
        }),
    );
}
