use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::BusError;

/// Wire protocol version. Every envelope on the wire carries this value.
pub const PROTOCOL_VERSION: u8 = 1;

/// Upper bound on the JSON body of a single frame.
pub const MAX_FRAME_LEN: usize = 16 * 1024 * 1024;

/// Closed set of wire operations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Op {
    #[serde(rename = "HELLO")]
    Hello,
    #[serde(rename = "BYE")]
    Bye,
    #[serde(rename = "ADV")]
    Adv,
    #[serde(rename = "SUB")]
    Sub,
    #[serde(rename = "UNSUB")]
    Unsub,
    #[serde(rename = "PUB")]
    Pub,
    #[serde(rename = "SRV_REG")]
    SrvReg,
    #[serde(rename = "SRV_CALL")]
    SrvCall,
    #[serde(rename = "SRV_REP")]
    SrvRep,
    #[serde(rename = "ERR")]
    Err,
}

/// One bus message. Serialized as a single JSON object in declaration order;
/// `ch`, `src` and `data` are omitted when empty/null and restored on decode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub v: u8,
    pub op: Op,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub ch: String,
    pub id: u64,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub src: String,
    #[serde(default, skip_serializing_if = "Value::is_null")]
    pub data: Value,
}

impl Envelope {
    pub fn new(op: Op, ch: impl Into<String>, id: u64, data: Value) -> Self {
        Envelope { v: PROTOCOL_VERSION, op, ch: ch.into(), id, src: String::new(), data }
    }

    pub fn with_src(mut self, src: impl Into<String>) -> Self {
        self.src = src.into();
        self
    }

    /// Error envelope correlated to `id`. `reason` lands in `data.reason`.
    pub fn err(ch: impl Into<String>, id: u64, reason: &str) -> Self {
        Envelope::new(Op::Err, ch, id, serde_json::json!({ "reason": reason }))
    }

    /// Reason string of an ERR envelope, if present.
    pub fn err_reason(&self) -> Option<&str> {
        self.data.get("reason").and_then(Value::as_str)
    }
}

/// Channel names are non-empty strings over `[a-z0-9_/]`.
pub fn valid_channel(ch: &str) -> bool {
    !ch.is_empty()
        && ch
            .bytes()
            .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_' || b == b'/')
}

/// Encodes an envelope as a 4-byte big-endian length prefix plus JSON body.
pub fn encode_frame(env: &Envelope) -> Result<Vec<u8>, BusError> {
    let body = serde_json::to_vec(env).map_err(|e| BusError::Json(e.to_string()))?;
    if body.len() > MAX_FRAME_LEN {
        return Err(BusError::FrameTooLarge { len: body.len() });
    }
    let mut out = Vec::with_capacity(4 + body.len());
    out.extend_from_slice(&(body.len() as u32).to_be_bytes());
    out.extend_from_slice(&body);
    Ok(out)
}

/// Outcome of decoding from a byte buffer that may hold a partial frame.
#[derive(Debug, PartialEq)]
pub enum Decoded {
    /// A complete envelope plus the number of bytes consumed.
    Frame(Envelope, usize),
    /// The buffer ends mid-frame; feed more bytes and retry.
    NeedMore,
}

/// Decodes the first frame in `buf`, tolerating trailing/partial data.
pub fn decode_frame(buf: &[u8]) -> Result<Decoded, BusError> {
    if buf.len() < 4 {
        return Ok(Decoded::NeedMore);
    }
    let len = u32::from_be_bytes([buf[0], buf[1], buf[2], buf[3]]) as usize;
    if len > MAX_FRAME_LEN {
        return Err(BusError::FrameTooLarge { len });
    }
    if buf.len() < 4 + len {
        return Ok(Decoded::NeedMore);
    }
    let env: Envelope = serde_json::from_slice(&buf[4..4 + len])
        .map_err(|e| BusError::Json(e.to_string()))?;
    if env.v != PROTOCOL_VERSION {
        return Err(BusError::BadVersion { v: env.v });
    }
    Ok(Decoded::Frame(env, 4 + len))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    // Expected bytes computed independently: the body below is 66 bytes, so
    // the prefix is 00 00 00 42.
    const FROZEN: &[u8] =
        b"\x00\x00\x00\x42{\"v\":1,\"op\":\"PUB\",\"ch\":\"points\",\"id\":7,\"src\":\"drv\",\"data\":[1,2,3]}";

    #[test]
    fn encode_matches_frozen_bytes() {
        let env = Envelope::new(Op::Pub, "points", 7, json!([1, 2, 3])).with_src("drv");
        assert_eq!(encode_frame(&env).unwrap(), FROZEN);
    }

    #[test]
    fn decode_matches_frozen_bytes() {
        let Decoded::Frame(env, used) = decode_frame(FROZEN).unwrap() else {
            panic!("expected a complete frame");
        };
        assert_eq!(used, FROZEN.len());
        assert_eq!(env, Envelope::new(Op::Pub, "points", 7, json!([1, 2, 3])).with_src("drv"));
    }

    #[test]
    fn roundtrip_omits_empty_fields() {
        let env = Envelope::new(Op::Hello, "", 1, Value::Null);
        let bytes = encode_frame(&env).unwrap();
        let body = std::str::from_utf8(&bytes[4..]).unwrap();
        assert!(!body.contains("\"ch\""), "empty ch serialized: {body}");
        assert!(!body.contains("\"data\""), "null data serialized: {body}");
        let Decoded::Frame(back, _) = decode_frame(&bytes).unwrap() else { panic!() };
        assert_eq!(back, env);
    }

    #[test]
    fn truncated_frame_waits_for_more() {
        assert_eq!(decode_frame(&FROZEN[..3]).unwrap(), Decoded::NeedMore);
        assert_eq!(decode_frame(&FROZEN[..FROZEN.len() - 1]).unwrap(), Decoded::NeedMore);
        // Trailing bytes of a following frame are left untouched.
        let mut two = FROZEN.to_vec();
        two.extend_from_slice(&FROZEN[..5]);
        let Decoded::Frame(_, used) = decode_frame(&two).unwrap() else { panic!() };
        assert_eq!(used, FROZEN.len());
    }

    #[test]
    fn oversize_rejected_on_both_sides() {
        let big = Envelope::new(Op::Pub, "points", 1, json!("x".repeat(MAX_FRAME_LEN)));
        assert!(matches!(encode_frame(&big), Err(BusError::FrameTooLarge { .. })));

        let mut buf = Vec::new();
        buf.extend_from_slice(&((MAX_FRAME_LEN as u32) + 1).to_be_bytes());
        buf.extend_from_slice(b"xxxx");
        assert!(matches!(decode_frame(&buf), Err(BusError::FrameTooLarge { .. })));
    }

    #[test]
    fn boundary_length_is_accepted() {
        // A body of exactly MAX_FRAME_LEN decodes; one byte more errors.
        let pad = MAX_FRAME_LEN - 49; // measured: body without padding is 49 bytes
        let env = Envelope::new(Op::Pub, "points", 1, json!("y".repeat(pad)));
        let bytes = encode_frame(&env).unwrap();
        assert_eq!(bytes.len(), 4 + MAX_FRAME_LEN);
        assert!(matches!(decode_frame(&bytes).unwrap(), Decoded::Frame(..)));
    }

    #[test]
    fn unknown_op_and_missing_field_error() {
        let mk = |body: &str| {
            let mut buf = (body.len() as u32).to_be_bytes().to_vec();
            buf.extend_from_slice(body.as_bytes());
            buf
        };
        assert!(matches!(
            decode_frame(&mk(r#"{"v":1,"op":"NOPE","id":1}"#)),
            Err(BusError::Json(_))
        ));
        assert!(matches!(
            decode_frame(&mk(r#"{"v":1,"op":"PUB"}"#)),
            Err(BusError::Json(_))
        ));
        assert!(matches!(
            decode_frame(&mk(r#"{"v":9,"op":"PUB","id":1}"#)),
            Err(BusError::BadVersion { v: 9 })
        ));
        assert!(matches!(decode_frame(&mk("not json")), Err(BusError::Json(_))));
    }

    #[test]
    fn channel_charset() {
        for ok in ["points", "coral/coord/map_ready", "a1_b2/c3"] {
            assert!(valid_channel(ok), "{ok}");
        }
        for bad in ["", "Points", "a b", "a.b", "a-b", "\u{e9}"] {
            assert!(!valid_channel(bad), "{bad:?}");
        }
    }
}
