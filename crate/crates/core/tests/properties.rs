use std::collections::BTreeMap;

use proptest::prelude::*;

use sba_lab::codec::Encode;
use sba_lab::crypto::{combine, combined_verify, share_sign, SchemeMessage};
use sba_lab::partition::{construct_negative_certificate, partition, Disclosure};
use sba_lab::types::{
    make_config, parse_ratio, validate, word_cost, Config, Interval, ProcessId, ProtocolMessage, Value, V_MAX,
};

fn config(i: usize) -> Config {
    let (t, c) = [(2, "1"), (4, "1"), (4, "1/2"), (8, "1"), (3, "1/3")][i];
    make_config(t, parse_ratio(c).unwrap()).unwrap()
}

/// Disclosures from processes 1..=m with at most `t` copies of any value.
fn disclosures(cfg: &Config, raw: &[u64]) -> Vec<Disclosure> {
    let mut counts: BTreeMap<u64, usize> = BTreeMap::new();
    let mut out = Vec::new();
    for &v in raw {
        let v = if *counts.get(&v).unwrap_or(&0) < cfg.t {
            v
        } else {
            (0..).find(|x| counts.get(x).copied().unwrap_or(0) < cfg.t).unwrap()
        };
        *counts.entry(v).or_default() += 1;
        let p = ProcessId::new(out.len() as u32 + 1);
        out.push(Disclosure {
            from: p,
            value: Value(v),
            share: share_sign(p, cfg.quorum(), &Value(v).scheme_message()),
        });
    }
    out
}

fn layout_input() -> impl Strategy<Value = (usize, Vec<u64>)> {
    (0..5usize).prop_flat_map(|i| {
        let cfg = config(i);
        let lo = cfg.optimistic_quorum();
        (
            Just(i),
            prop::collection::vec(prop_oneof![0..40u64, Just(u64::MAX - 2)], lo..=cfg.n),
        )
    })
}

proptest! {
    #[test]
    fn honest_replies_always_build_a_valid_negative_certificate((i, raw) in layout_input(), probe in any::<u64>()) {
        let cfg = config(i);
        let ds = disclosures(&cfg, &raw);
        let layout = partition(&ds, &cfg).unwrap();
        prop_assert!(layout.len() <= 5);

        // every discloser signs each interval not containing its own value
        let mut replies = Vec::new();
        for d in &ds {
            for desc in layout.descriptions.iter().filter(|x| !x.contains(d.value)) {
                replies.push((d.from, *desc, share_sign(d.from, cfg.quorum(), &desc.scheme_message())));
            }
        }
        let cert = construct_negative_certificate(&layout, &replies, &cfg).expect("enough outside signers");
        prop_assert!(validate(Value(probe), &cert, &cfg));
        prop_assert_eq!(cert.words(), 3 * layout.len() as u64);
    }

    #[test]
    fn layout_groups_match_members((i, raw) in layout_input()) {
        let cfg = config(i);
        let ds = disclosures(&cfg, &raw);
        let layout = partition(&ds, &cfg).unwrap();
        let total: usize = layout.members.iter().map(Vec::len).sum();
        prop_assert_eq!(total, ds.len());
        for d in &ds {
            let g = layout.group_of(d.value).unwrap();
            prop_assert!(layout.members[g].iter().any(|(p, _)| *p == d.from));
        }
    }

    #[test]
    fn combine_ignores_share_order(k in 1usize..9, extra in 0u32..5, seed in any::<u64>(), bytes in prop::collection::vec(any::<u8>(), 0..40)) {
        let m = SchemeMessage::from_bytes(bytes);
        let ids: Vec<u32> = (1..=k as u32 + extra).collect();
        let shares: Vec<_> = ids[..k].iter().map(|i| share_sign(ProcessId::new(*i), k, &m)).collect();
        let mut rev = shares.clone();
        rev.rotate_left((seed % k as u64) as usize);
        let a = combine(k, &shares).unwrap();
        let b = combine(k, &rev).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert!(combined_verify(k, &m, &a));
        if extra > 0 {
            let other: Vec<_> = ids[1..=k].iter().map(|i| share_sign(ProcessId::new(*i), k, &m)).collect();
            let c = combine(k, &other).unwrap();
            prop_assert!(combined_verify(k, &m, &c));
            prop_assert_ne!(a.signer_set_digest(), c.signer_set_digest());
        }
    }

    #[test]
    fn interval_encoding_separates_terminality(x in any::<u64>(), y in any::<u64>()) {
        let open = Interval::new(Value(x), Value(y));
        let closed = Interval { terminal: true, ..open };
        prop_assert_ne!(open.encode(), closed.encode());
        prop_assert_ne!(open.scheme_message(), closed.scheme_message());
        prop_assert_eq!(open.scheme_message().as_bytes().len(), 17);
    }

    #[test]
    fn value_encoding_is_injective(a in any::<u64>(), b in any::<u64>()) {
        prop_assume!(a != b);
        prop_assert_ne!(Value(a).encode(), Value(b).encode());
        prop_assert_ne!(Value(a).scheme_message(), Value(b).scheme_message());
    }

    #[test]
    fn interval_membership_is_half_open(x in 0u64..1000, len in 1u64..1000, v in 0u64..3000) {
        let iv = Interval::new(Value(x), Value(x + len));
        prop_assert_eq!(iv.contains(Value(v)), x <= v && v < x + len);
        let term = Interval::terminal(Value(x));
        prop_assert_eq!(term.contains(Value(v)), x <= v);
        prop_assert!(term.contains(V_MAX));
    }

    #[test]
    fn disclose_cost_is_three_words(v in any::<u64>(), p in 1u32..100) {
        let m = ProtocolMessage::Disclose { value: Value(v), share: share_sign(ProcessId::new(p), 3, &Value(v).scheme_message()) };
        prop_assert_eq!(word_cost(&m), 3);
    }
}
