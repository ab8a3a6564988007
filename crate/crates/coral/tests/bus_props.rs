//! Property tests for the frame codec: arbitrary envelopes survive an
//! encode/decode round trip, and the decoder is total over arbitrary bytes.

use coral::bus::{decode_frame, encode_frame, Decoded, Envelope, Op};
use proptest::prelude::*;

fn op_strategy() -> impl Strategy<Value = Op> {
    prop_oneof![
        Just(Op::Hello),
        Just(Op::Bye),
        Just(Op::Adv),
        Just(Op::Sub),
        Just(Op::Unsub),
        Just(Op::Pub),
        Just(Op::SrvReg),
        Just(Op::SrvCall),
        Just(Op::SrvRep),
        Just(Op::Err),
    ]
}

fn json_strategy() -> impl Strategy<Value = serde_json::Value> {
    let leaf = prop_oneof![
        Just(serde_json::Value::Null),
        any::<bool>().prop_map(serde_json::Value::from),
        any::<i64>().prop_map(serde_json::Value::from),
        // Finite doubles only: NaN/inf are not JSON.
        (-1e12f64..1e12).prop_map(serde_json::Value::from),
        "[ -~]{0,24}".prop_map(serde_json::Value::from),
    ];
    leaf.prop_recursive(3, 48, 6, |inner| {
        prop_oneof![
            prop::collection::vec(inner.clone(), 0..6).prop_map(serde_json::Value::from),
            prop::collection::btree_map("[a-z_]{1,8}", inner, 0..6)
                .prop_map(|m| serde_json::Value::Object(m.into_iter().collect())),
        ]
    })
}

fn envelope_strategy() -> impl Strategy<Value = Envelope> {
    (op_strategy(), "[a-z0-9_/]{0,20}", any::<u64>(), "[a-z0-9_]{0,12}", json_strategy()).prop_map(
        |(op, ch, id, src, data)| Envelope::new(op, ch, id, data).with_src(src),
    )
}

proptest! {
    #[test]
    fn envelope_roundtrip(env in envelope_strategy()) {
        let bytes = encode_frame(&env).unwrap();
        let Decoded::Frame(back, used) = decode_frame(&bytes).unwrap() else {
            return Err(TestCaseError::fail("incomplete"));
        };
        prop_assert_eq!(used, bytes.len());
        prop_assert_eq!(back, env);
    }

    #[test]
    fn decoder_is_total(bytes in prop::collection::vec(any::<u8>(), 0..512)) {
        // Arbitrary input either yields a frame, wants more bytes, or errors;
        // it never panics.
        let _ = decode_frame(&bytes);
    }
}
