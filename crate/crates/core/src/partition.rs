//! Leader-side value partitioning and negative-certificate assembly.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::crypto::{combine, share_verify_for, Share};
use crate::types::{Certificate, Config, Group, Interval, ProcessId, Value, V_MIN};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Disclosure {
    pub from: ProcessId,
    pub value: Value,
    pub share: Share,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PartitionError {
    #[error("{got} disclosures, need at least {need}")]
    TooFewDisclosures { got: usize, need: usize },
    #[error("value {value} disclosed {count} times; a positive certificate is available")]
    MultiplicityTooHigh { value: Value, count: usize },
    #[error("{0} disclosed more than once")]
    DuplicateDiscloser(ProcessId),
}

/// Chained intervals over the value domain plus the disclosures that fall into each.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupLayout {
    pub descriptions: Vec<Interval>,
    pub members: Vec<Vec<(ProcessId, Value)>>,
}

impl GroupLayout {
    pub fn len(&self) -> usize {
        self.descriptions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.descriptions.is_empty()
    }

    pub fn group_of(&self, v: Value) -> Option<usize> {
        self.descriptions.iter().position(|d| match_desc(v, d))
    }
}

pub fn match_desc(v: Value, desc: &Interval) -> bool {
    desc.contains(v)
}

/// Sorts disclosures by value, clumps equal values, and greedily merges
/// adjacent clumps while the merged size stays within `t`. Each interval
/// starts at the smallest value of its group; the first is stretched down to
/// `V_MIN` and the last up to `V_MAX`.
pub fn partition(disclosures: &[Disclosure], cfg: &Config) -> Result<GroupLayout, PartitionError> {
    let need = cfg.optimistic_quorum();
    if disclosures.len() < need {
        return Err(PartitionError::TooFewDisclosures {
            got: disclosures.len(),
            need,
        });
    }
    let mut seen = BTreeSet::new();
    for d in disclosures {
        if !seen.insert(d.from) {
            return Err(PartitionError::DuplicateDiscloser(d.from));
        }
    }

    let mut sorted: Vec<(Value, ProcessId)> = disclosures.iter().map(|d| (d.value, d.from)).collect();
    sorted.sort();

    let mut clumps: Vec<Vec<(ProcessId, Value)>> = Vec::new();
    for (v, p) in sorted {
        match clumps.last_mut() {
            Some(c) if c[0].1 == v => c.push((p, v)),
            _ => clumps.push(vec![(p, v)]),
        }
    }
    if let Some(c) = clumps.iter().find(|c| c.len() > cfg.t) {
        return Err(PartitionError::MultiplicityTooHigh {
            value: c[0].1,
            count: c.len(),
        });
    }

    let mut groups = clumps;
    loop {
        let mut merged: Vec<Vec<(ProcessId, Value)>> = Vec::with_capacity(groups.len());
        for g in groups.iter() {
            match merged.last_mut() {
                Some(last) if last.len() + g.len() <= cfg.t => last.extend_from_slice(g),
                _ => merged.push(g.clone()),
            }
        }
        let done = merged.len() == groups.len();
        groups = merged;
        if done {
            break;
        }
    }

    let starts: Vec<Value> = groups.iter().map(|g| g[0].1).collect();
    let descriptions = (0..groups.len())
        .map(|i| {
            let x = if i == 0 { V_MIN } else { starts[i] };
            match starts.get(i + 1) {
                Some(&y) => Interval::new(x, y),
                None => Interval::terminal(x),
            }
        })
        .collect();

    Ok(GroupLayout {
        descriptions,
        members: groups,
    })
}

/// Combines, for every interval of `layout`, the shares of the `t + 1` lowest
/// signer ids. Returns `None` if any interval falls short. Replies for
/// intervals outside the layout and shares that do not verify are ignored.
pub fn construct_negative_certificate(
    layout: &GroupLayout,
    replies: &[(ProcessId, Interval, Share)],
    cfg: &Config,
) -> Option<Certificate> {
    let k = cfg.quorum();
    let mut groups = Vec::with_capacity(layout.len());
    for desc in &layout.descriptions {
        let m = desc.scheme_message();
        let signers: BTreeMap<ProcessId, &Share> = replies
            .iter()
            .filter(|(p, d, s)| d == desc && share_verify_for(s, *p, k, &m))
            .map(|(p, _, s)| (*p, s))
            .collect();
        if signers.len() < k {
            return None;
        }
        let tsig = combine(k, signers.values().take(k).copied()).ok()?;
        groups.push(Group { interval: *desc, tsig });
    }
    Some(Certificate::negative(groups))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::share_sign;
    use crate::types::{make_config, validate, Config, V_MAX};
    use num_rational::Ratio;

    fn cfg7() -> Config {
        make_config(2, Ratio::from_integer(1)).unwrap()
    }

    fn disclose(values: &[u64], cfg: &Config) -> Vec<Disclosure> {
        values
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let p = ProcessId::from_index(i);
                Disclosure {
                    from: p,
                    value: Value(v),
                    share: share_sign(p, cfg.quorum(), &Value(v).scheme_message()),
                }
            })
            .collect()
    }

    fn counts(l: &GroupLayout) -> Vec<usize> {
        l.members.iter().map(Vec::len).collect()
    }

    #[test]
    fn distinct_values_t2() {
        let c = cfg7();
        let l = partition(&disclose(&[1, 2, 3, 4, 5, 6, 7], &c), &c).unwrap();
        assert_eq!(counts(&l), vec![2, 2, 2, 1]);
        assert_eq!(
            l.descriptions,
            vec![
                Interval::new(Value(0), Value(3)),
                Interval::new(Value(3), Value(5)),
                Interval::new(Value(5), Value(7)),
                Interval::terminal(Value(7)),
            ]
        );
    }

    #[test]
    fn equal_values_stay_together() {
        let c = cfg7();
        let l = partition(&disclose(&[1, 1, 2, 2, 3, 3, 4], &c), &c).unwrap();
        for g in &l.members {
            assert!(g.iter().all(|(_, v)| *v == g[0].1));
        }
        assert_eq!(counts(&l), vec![2, 2, 2, 1]);
    }

    #[test]
    fn errors() {
        let c = cfg7();
        assert_eq!(
            partition(&disclose(&[1, 2, 3, 4], &c), &c),
            Err(PartitionError::TooFewDisclosures { got: 4, need: 5 })
        );
        assert_eq!(
            partition(&disclose(&[1, 1, 1, 4, 5], &c), &c),
            Err(PartitionError::MultiplicityTooHigh {
                value: Value(1),
                count: 3
            })
        );
        let mut d = disclose(&[1, 2, 3, 4, 5], &c);
        d[1].from = d[0].from;
        assert!(matches!(partition(&d, &c), Err(PartitionError::DuplicateDiscloser(_))));
    }

    #[test]
    fn max_value_forms_terminal_singleton() {
        let c = cfg7();
        let l = partition(&disclose(&[1, 2, 3, 4, u64::MAX, u64::MAX, 9], &c), &c).unwrap();
        let last = *l.descriptions.last().unwrap();
        assert_eq!(last, Interval::terminal(V_MAX));
        assert!(last.is_well_formed());
        assert_eq!(l.group_of(V_MAX), Some(l.len() - 1));
    }

    #[test]
    fn match_desc_edges() {
        assert!(match_desc(Value(3), &Interval::new(Value(3), Value(5))));
        assert!(!match_desc(Value(5), &Interval::new(Value(3), Value(5))));
        assert!(match_desc(V_MAX, &Interval::terminal(Value(7))));
        assert!(!match_desc(V_MAX, &Interval::new(Value(7), V_MAX)));
    }

    fn replies_from(layout: &GroupLayout, proposals: &[u64], cfg: &Config) -> Vec<(ProcessId, Interval, Share)> {
        let mut out = Vec::new();
        for (i, &v) in proposals.iter().enumerate() {
            let p = ProcessId::from_index(i);
            for d in &layout.descriptions {
                if !match_desc(Value(v), d) {
                    out.push((p, *d, share_sign(p, cfg.quorum(), &d.scheme_message())));
                }
            }
        }
        out
    }

    #[test]
    fn negative_certificate_round_trip() {
        let c = cfg7();
        let values = [1, 2, 3, 4, 5, 6, 7];
        let l = partition(&disclose(&values, &c), &c).unwrap();
        let replies = replies_from(&l, &values, &c);
        let cert = construct_negative_certificate(&l, &replies, &c).unwrap();
        assert!(validate(Value(0), &cert, &c));
        assert!(validate(Value(999), &cert, &c));
        assert_eq!(cert.words(), 12);
    }

    #[test]
    fn negative_certificate_needs_quorum_per_group() {
        let c = cfg7();
        let values = [1, 2, 3, 4, 5, 6, 7];
        let l = partition(&disclose(&values, &c), &c).unwrap();
        let target = l.descriptions[0];
        let mut replies = replies_from(&l, &values, &c);
        let mut kept = 0;
        replies.retain(|(_, d, _)| {
            if *d != target {
                return true;
            }
            kept += 1;
            kept <= 2
        });
        assert!(construct_negative_certificate(&l, &replies, &c).is_none());
    }

    #[test]
    fn foreign_and_forged_replies_are_ignored() {
        let c = cfg7();
        let values = [1, 2, 3, 4, 5, 6, 7];
        let l = partition(&disclose(&values, &c), &c).unwrap();
        let mut replies = replies_from(&l, &values, &c);
        let foreign = Interval::new(Value(100), Value(200));
        replies.push((
            ProcessId::new(1),
            foreign,
            share_sign(ProcessId::new(1), 3, &foreign.scheme_message()),
        ));
        // a share relabelled to another sender does not count
        let target = l.descriptions[0];
        replies.retain(|(_, d, _)| *d != target);
        let s = share_sign(ProcessId::new(7), 3, &target.scheme_message());
        for p in 1..=3 {
            replies.push((ProcessId::new(p), target, s.clone()));
        }
        assert!(construct_negative_certificate(&l, &replies, &c).is_none());
    }
}
