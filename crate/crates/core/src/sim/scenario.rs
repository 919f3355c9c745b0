//! Scenario description and its JSON form.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value as Json};
use thiserror::Error;

use crate::types::{make_config, parse_ratio, Config, ConfigError, ProcessId, Value};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("malformed scenario JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("unknown strategy {0:?}")]
    UnknownStrategy(String),
    #[error("bad strategy parameter {name}: {reason}")]
    BadParam { name: String, reason: String },
    #[error("bad proposals: {0}")]
    Proposals(String),
    #[error("bad byzantine set: {0}")]
    Byzantine(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    BucketOnly,
    Strong,
}

impl Protocol {
    pub fn name(self) -> &'static str {
        match self {
            Protocol::BucketOnly => "bucket_only",
            Protocol::Strong => "strong",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Strategy {
    Silent,
    /// Honest until `round` (exclusive), silent afterwards. `None` derives the round from the seed.
    CrashAt {
        round: Option<u64>,
    },
    EquivocatingLeader,
    HelpreqFlood,
    /// Tries to certify `target`; `None` picks one above every correct proposal.
    ValueForger {
        target: Option<Value>,
    },
    SplitWorld,
}

pub const STRATEGY_NAMES: [&str; 6] = [
    "silent",
    "crash_at",
    "equivocating_leader",
    "helpreq_flood",
    "value_forger",
    "split_world",
];

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Silent => "silent",
            Strategy::CrashAt { .. } => "crash_at",
            Strategy::EquivocatingLeader => "equivocating_leader",
            Strategy::HelpreqFlood => "helpreq_flood",
            Strategy::ValueForger { .. } => "value_forger",
            Strategy::SplitWorld => "split_world",
        }
    }

    pub fn from_name(name: &str, params: &Map<String, Json>) -> Result<Self, ScenarioError> {
        let u64_param = |key: &str| -> Result<Option<u64>, ScenarioError> {
            match params.get(key) {
                None => Ok(None),
                Some(v) => v.as_u64().map(Some).ok_or_else(|| ScenarioError::BadParam {
                    name: key.into(),
                    reason: "expected a non-negative integer".into(),
                }),
            }
        };
        Ok(match name {
            "silent" => Strategy::Silent,
            "crash_at" => Strategy::CrashAt {
                round: u64_param("round")?,
            },
            "equivocating_leader" => Strategy::EquivocatingLeader,
            "helpreq_flood" => Strategy::HelpreqFlood,
            "value_forger" => Strategy::ValueForger {
                target: u64_param("target")?.map(Value),
            },
            "split_world" => Strategy::SplitWorld,
            other => return Err(ScenarioError::UnknownStrategy(other.into())),
        })
    }

    pub fn params(&self) -> Map<String, Json> {
        let mut m = Map::new();
        match self {
            Strategy::CrashAt { round: Some(r) } => {
                m.insert("round".into(), (*r).into());
            }
            Strategy::ValueForger { target: Some(v) } => {
                m.insert("target".into(), v.0.into());
            }
            _ => {}
        }
        m
    }
}

impl FromStr for Strategy {
    type Err = ScenarioError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Strategy::from_name(s, &Map::new())
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// How proposals are assigned, before resolution against `n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProposalSpec {
    Unanimous(Value),
    /// `P_i` proposes `v + i - 1`.
    DistinctFrom(Value),
    List(Vec<Value>),
}

impl ProposalSpec {
    pub fn resolve(&self, n: usize) -> Result<Vec<Value>, ScenarioError> {
        match self {
            ProposalSpec::Unanimous(v) => Ok(vec![*v; n]),
            ProposalSpec::DistinctFrom(v) => (0..n as u64)
                .map(|i| {
                    v.0.checked_add(i)
                        .map(Value)
                        .ok_or_else(|| ScenarioError::Proposals("distinct_from overflows the domain".into()))
                })
                .collect(),
            ProposalSpec::List(l) if l.len() == n => Ok(l.clone()),
            ProposalSpec::List(l) => Err(ScenarioError::Proposals(format!("{} proposals for n = {n}", l.len()))),
        }
    }
}

impl FromStr for ProposalSpec {
    type Err = ScenarioError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ScenarioError::Proposals(format!("unrecognized {s:?}"));
        let (kind, v) = s.split_once(':').ok_or_else(bad)?;
        let v = Value(v.trim().parse().map_err(|_| bad())?);
        match kind.trim() {
            "unanimous" => Ok(ProposalSpec::Unanimous(v)),
            "distinct_from" => Ok(ProposalSpec::DistinctFrom(v)),
            _ => Err(bad()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ByzantineSpec {
    FirstF,
    /// `f` ids drawn with the scenario seed.
    Random,
    List(Vec<ProcessId>),
}

impl ByzantineSpec {
    pub fn resolve(&self, cfg: &Config, seed: u64) -> Result<Vec<ProcessId>, ScenarioError> {
        let f = cfg.f_actual;
        let ids: Vec<ProcessId> = match self {
            ByzantineSpec::FirstF => (1..=f as u32).map(ProcessId::new).collect(),
            ByzantineSpec::Random => {
                let mut all: Vec<ProcessId> = cfg.processes().collect();
                all.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0xb12a_0000_0000_0001));
                let mut pick = all[..f].to_vec();
                pick.sort();
                pick
            }
            ByzantineSpec::List(l) => {
                let set: BTreeSet<ProcessId> = l.iter().copied().collect();
                if set.len() != l.len() {
                    return Err(ScenarioError::Byzantine("duplicate ids".into()));
                }
                if let Some(p) = l.iter().find(|p| !cfg.contains(**p)) {
                    return Err(ScenarioError::Byzantine(format!("{p} outside 1..={}", cfg.n)));
                }
                if l.len() != f {
                    return Err(ScenarioError::Byzantine(format!("{} ids but f = {f}", l.len())));
                }
                set.into_iter().collect()
            }
        };
        Ok(ids)
    }
}

/// A fully resolved scenario.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Scenario {
    pub cfg: Config,
    pub byzantine: Vec<ProcessId>,
    pub strategy: Strategy,
    pub proposals: Vec<Value>,
    pub seed: u64,
    pub protocol: Protocol,
}

impl Scenario {
    /// Builds a scenario; `f` must not exceed `t`.
    pub fn new(
        cfg: &Config,
        f: usize,
        byzantine: &ByzantineSpec,
        strategy: Strategy,
        proposals: &ProposalSpec,
        seed: u64,
        protocol: Protocol,
    ) -> Result<Self, ScenarioError> {
        let cfg = cfg.clone().with_faults(f)?;
        Ok(Scenario {
            byzantine: byzantine.resolve(&cfg, seed)?,
            proposals: proposals.resolve(cfg.n)?,
            cfg,
            strategy,
            seed,
            protocol,
        })
    }

    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let file: ScenarioFile = serde_json::from_str(text)?;
        file.resolve()
    }

    pub fn is_byzantine(&self, p: ProcessId) -> bool {
        self.byzantine.binary_search(&p).is_ok()
    }

    pub fn correct(&self) -> Vec<ProcessId> {
        self.cfg.processes().filter(|p| !self.is_byzantine(*p)).collect()
    }

    /// The common proposal of the correct processes, if they agree.
    pub fn unanimous_value(&self) -> Option<Value> {
        let mut vals = self.correct().into_iter().map(|p| self.proposals[p.index()]);
        let first = vals.next()?;
        vals.all(|v| v == first).then_some(first)
    }

    pub fn to_file(&self) -> ScenarioFile {
        ScenarioFile {
            t: self.cfg.t,
            c: Json::String(self.cfg.c_string()),
            f: self.cfg.f_actual,
            byzantine: Json::Array(self.byzantine.iter().map(|p| p.get().into()).collect()),
            strategy: self.strategy.name().into(),
            strategy_params: self.strategy.params(),
            proposals: Json::Array(self.proposals.iter().map(|v| v.0.into()).collect()),
            seed: self.seed,
            protocol: self.protocol,
        }
    }
}

fn default_byzantine() -> Json {
    Json::String("first_f".into())
}

fn default_protocol() -> Protocol {
    Protocol::Strong
}

/// On-disk scenario object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub t: usize,
    /// `"1"`, `"1/2"`, `"0.5"` or a JSON number.
    pub c: Json,
    pub f: usize,
    /// A list of ids, `"first_f"` or `"random"`.
    #[serde(default = "default_byzantine")]
    pub byzantine: Json,
    pub strategy: String,
    #[serde(default)]
    pub strategy_params: Map<String, Json>,
    /// A list of values, `"unanimous:V"` or `"distinct_from:V"`.
    pub proposals: Json,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_protocol")]
    pub protocol: Protocol,
}

impl ScenarioFile {
    pub fn resolve(&self) -> Result<Scenario, ScenarioError> {
        let c_text = match &self.c {
            Json::String(s) => s.clone(),
            Json::Number(n) => n.to_string(),
            other => return Err(ConfigError::InvalidC(other.to_string()).into()),
        };
        let cfg = make_config(self.t, parse_ratio(&c_text)?)?;
        let byz = match &self.byzantine {
            Json::String(s) if s == "first_f" => ByzantineSpec::FirstF,
            Json::String(s) if s == "random" => ByzantineSpec::Random,
            Json::Array(a) => ByzantineSpec::List(
                a.iter()
                    .map(|x| {
                        x.as_u64()
                            .and_then(|x| u32::try_from(x).ok())
                            .map(ProcessId::new)
                            .ok_or_else(|| ScenarioError::Byzantine(format!("bad id {x}")))
                    })
                    .collect::<Result<_, _>>()?,
            ),
            other => return Err(ScenarioError::Byzantine(other.to_string())),
        };
        let proposals = match &self.proposals {
            Json::String(s) => s.parse()?,
            Json::Array(a) => ProposalSpec::List(
                a.iter()
                    .map(|x| {
                        x.as_u64()
                            .map(Value)
                            .ok_or_else(|| ScenarioError::Proposals(format!("bad value {x}")))
                    })
                    .collect::<Result<_, _>>()?,
            ),
            other => return Err(ScenarioError::Proposals(other.to_string())),
        };
        let strategy = Strategy::from_name(&self.strategy, &self.strategy_params)?;
        Scenario::new(&cfg, self.f, &byz, strategy, &proposals, self.seed, self.protocol)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const UNANIMOUS: &str = r#"{"t":2,"c":"1","f":1,"strategy":"silent","proposals":"unanimous:9","seed":3}"#;

    #[test]
    fn parse_minimal() {
        let s = Scenario::from_json(UNANIMOUS).unwrap();
        assert_eq!(s.cfg.n, 7);
        assert_eq!(s.byzantine, vec![ProcessId::new(1)]);
        assert_eq!(s.unanimous_value(), Some(Value(9)));
        assert_eq!(s.protocol, Protocol::Strong);
        assert_eq!(s.correct().len(), 6);
    }

    #[test]
    fn round_trips_through_file_form() {
        let s = Scenario::from_json(UNANIMOUS).unwrap();
        let text = serde_json::to_string(&s.to_file()).unwrap();
        assert_eq!(Scenario::from_json(&text).unwrap(), s);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(Scenario::from_json("{"), Err(ScenarioError::Json(_))));
        let too_many = UNANIMOUS.replace(r#""f":1"#, r#""f":3"#);
        assert!(matches!(
            Scenario::from_json(&too_many),
            Err(ScenarioError::Config(ConfigError::TooManyFaults { f: 3, t: 2 }))
        ));
        let unknown = UNANIMOUS.replace("silent", "nope");
        assert!(matches!(
            Scenario::from_json(&unknown),
            Err(ScenarioError::UnknownStrategy(_))
        ));
        let short = UNANIMOUS.replace(r#""unanimous:9""#, "[1,2]");
        assert!(matches!(Scenario::from_json(&short), Err(ScenarioError::Proposals(_))));
    }

    #[test]
    fn proposal_specs() {
        assert_eq!(
            "distinct_from:5".parse::<ProposalSpec>().unwrap().resolve(3).unwrap(),
            vec![Value(5), Value(6), Value(7)]
        );
        assert!("unanimous".parse::<ProposalSpec>().is_err());
    }

    #[test]
    fn random_byzantine_set_is_seeded() {
        let cfg = make_config(4, parse_ratio("1").unwrap())
            .unwrap()
            .with_faults(3)
            .unwrap();
        let a = ByzantineSpec::Random.resolve(&cfg, 11).unwrap();
        assert_eq!(a, ByzantineSpec::Random.resolve(&cfg, 11).unwrap());
        assert_eq!(a.len(), 3);
        assert!(a.windows(2).all(|w| w[0] < w[1]));
    }
}
