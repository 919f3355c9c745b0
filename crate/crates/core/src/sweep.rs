//! Seed sweeps over `f` and the fitted word bound.

use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bounds;
use crate::exec;
use crate::report::Report;
use crate::sim::{ByzantineSpec, ProposalSpec, Protocol, Scenario, ScenarioError, Strategy};
use crate::types::Config;

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("f range 0..={f_max} exceeds t = {t}")]
    FRange { f_max: usize, t: usize },
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("empty sweep")]
    Empty,
    #[error("rows mix configurations: {0}")]
    Mixed(String),
    #[error("bound violated at f = {f}, seed = {seed}: W = {words} > {bound}")]
    BoundViolated {
        f: usize,
        seed: u64,
        words: u64,
        bound: u64,
    },
}

/// Where the `f` Byzantine processes sit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Placement {
    FirstF,
    Random,
    /// First `f` on even seeds, seeded random on odd seeds.
    #[default]
    Alternate,
}

impl Placement {
    fn spec(self, seed: u64) -> ByzantineSpec {
        match self {
            Placement::FirstF => ByzantineSpec::FirstF,
            Placement::Random => ByzantineSpec::Random,
            Placement::Alternate if seed.is_multiple_of(2) => ByzantineSpec::FirstF,
            Placement::Alternate => ByzantineSpec::Random,
        }
    }
}

impl FromStr for Placement {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "first_f" => Ok(Placement::FirstF),
            "random" => Ok(Placement::Random),
            "alternate" => Ok(Placement::Alternate),
            _ => Err(format!("unknown placement {s:?}")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub cfg: Config,
    pub strategy: Strategy,
    pub f_max: usize,
    pub seeds: u64,
    pub proposals: ProposalSpec,
    pub placement: Placement,
    pub protocol: Protocol,
}

impl SweepSpec {
    pub fn new(
        cfg: Config,
        strategy: Strategy,
        f_max: usize,
        seeds: u64,
        proposals: ProposalSpec,
    ) -> Result<Self, SweepError> {
        if f_max > cfg.t {
            return Err(SweepError::FRange { f_max, t: cfg.t });
        }
        Ok(SweepSpec {
            cfg,
            strategy,
            f_max,
            seeds,
            proposals,
            placement: Placement::default(),
            protocol: Protocol::Strong,
        })
    }

    /// Scenarios in `(f, seed)` order.
    pub fn scenarios(&self) -> Result<Vec<Scenario>, SweepError> {
        let mut out = Vec::with_capacity((self.f_max + 1) * self.seeds as usize);
        for f in 0..=self.f_max {
            for seed in 0..self.seeds {
                out.push(Scenario::new(
                    &self.cfg,
                    f,
                    &self.placement.spec(seed),
                    self.strategy.clone(),
                    &self.proposals,
                    seed,
                    self.protocol,
                )?);
            }
        }
        Ok(out)
    }

    pub fn run(&self) -> Result<Vec<SweepRow>, SweepError> {
        let reports = exec::run_batch(&self.scenarios()?);
        Ok(reports.iter().map(SweepRow::from_report).collect())
    }
}

/// One CSV line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepRow {
    pub t: usize,
    pub c: String,
    pub n: usize,
    pub f: usize,
    pub strategy: String,
    pub seed: u64,
    pub words_bucket: u64,
    pub words_strong: u64,
    pub words_eba: u64,
    /// Latest decision round among correct processes; empty if any did not decide.
    pub decide_round: Option<u64>,
    pub violations: usize,
}

impl SweepRow {
    pub fn from_report(r: &Report) -> Self {
        let decide_round = r
            .processes
            .iter()
            .map(|p| p.decision_round)
            .collect::<Option<Vec<u64>>>()
            .and_then(|v| v.into_iter().max());
        SweepRow {
            t: r.t,
            c: r.c.clone(),
            n: r.n,
            f: r.f,
            strategy: r.strategy.clone(),
            seed: r.seed,
            words_bucket: r.words.bucket,
            words_strong: r.words.strong,
            words_eba: r.words.eba,
            decide_round,
            violations: r.violations.len(),
        }
    }

    pub fn non_eba(&self) -> u64 {
        self.words_bucket + self.words_strong
    }
}

pub fn write_csv<W: Write>(rows: &[SweepRow], w: W) -> Result<(), SweepError> {
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r)?;
    }
    wr.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_csv<R: Read>(r: R) -> Result<Vec<SweepRow>, SweepError> {
    csv::Reader::from_reader(r)
        .deserialize()
        .collect::<Result<Vec<SweepRow>, _>>()
        .map_err(SweepError::from)
}

/// Max-over-seeds non-EBA words at one `f`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CurvePoint {
    pub f: usize,
    pub words: u64,
    pub seed: u64,
    pub strategy: String,
    pub bound: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepSummary {
    pub n: usize,
    pub c_prime: u64,
    pub curve: Vec<CurvePoint>,
    /// Largest `W(f) / (n (f + 1))` on the curve.
    pub fitted: f64,
}

/// Checks `W(f) <= C' n (f + 1)` at every `f` present in `rows`.
pub fn sweep_summary(rows: &[SweepRow]) -> Result<SweepSummary, SweepError> {
    let first = rows.first().ok_or(SweepError::Empty)?;
    if let Some(r) = rows.iter().find(|r| r.n != first.n || r.t != first.t || r.c != first.c) {
        return Err(SweepError::Mixed(format!("n = {} and n = {}", first.n, r.n)));
    }
    let n = first.n;
    let f_max = rows.iter().map(|r| r.f).max().unwrap_or(0);
    let mut curve = Vec::new();
    for f in 0..=f_max {
        // ties go to the earliest row
        let Some(worst) = rows
            .iter()
            .filter(|r| r.f == f)
            .reduce(|a, b| if b.non_eba() > a.non_eba() { b } else { a })
        else {
            continue;
        };
        let bound = bounds::global_bound(n, f);
        if worst.non_eba() > bound {
            return Err(SweepError::BoundViolated {
                f,
                seed: worst.seed,
                words: worst.non_eba(),
                bound,
            });
        }
        curve.push(CurvePoint {
            f,
            words: worst.non_eba(),
            seed: worst.seed,
            strategy: worst.strategy.clone(),
            bound,
        });
    }
    let fitted = curve
        .iter()
        .map(|p| p.words as f64 / (n * (p.f + 1)) as f64)
        .fold(0.0, f64::max);
    Ok(SweepSummary {
        n,
        c_prime: bounds::GLOBAL_C_PRIME,
        curve,
        fitted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{make_config, parse_ratio, Value};

    fn row(f: usize, seed: u64, w: u64) -> SweepRow {
        SweepRow {
            t: 2,
            c: "1".into(),
            n: 7,
            f,
            strategy: "silent".into(),
            seed,
            words_bucket: w,
            words_strong: 0,
            words_eba: 99,
            decide_round: Some(26),
            violations: 0,
        }
    }

    #[test]
    fn row_order_is_f_then_seed() {
        let cfg = make_config(2, parse_ratio("1").unwrap()).unwrap();
        let spec = SweepSpec::new(cfg, Strategy::Silent, 2, 3, ProposalSpec::Unanimous(Value(9))).unwrap();
        let keys: Vec<(usize, u64)> = spec
            .scenarios()
            .unwrap()
            .iter()
            .map(|s| (s.cfg.f_actual, s.seed))
            .collect();
        assert_eq!(keys.len(), 9);
        assert!(keys.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn f_range_checked() {
        let cfg = make_config(2, parse_ratio("1").unwrap()).unwrap();
        assert!(matches!(
            SweepSpec::new(cfg, Strategy::Silent, 3, 1, ProposalSpec::Unanimous(Value(1))),
            Err(SweepError::FRange { .. })
        ));
    }

    #[test]
    fn csv_round_trip() {
        let mut rows = vec![row(0, 0, 10), row(1, 0, 20)];
        rows[1].decide_round = None;
        let mut buf = Vec::new();
        write_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,c,n,f,strategy,seed,words_bucket,words_strong,words_eba,decide_round,violations\n"));
        assert_eq!(read_csv(&buf[..]).unwrap(), rows);
    }

    #[test]
    fn summary_reports_offender() {
        let ok = sweep_summary(&[row(0, 0, 100), row(0, 1, 300), row(1, 0, 50)]).unwrap();
        assert_eq!(ok.curve[0].words, 300);
        assert_eq!(ok.curve[0].seed, 1);
        assert_eq!(ok.curve[1].bound, 60 * 7 * 2);

        let bad = sweep_summary(&[row(0, 0, 100), row(1, 4, 60 * 7 * 2 + 1)]).unwrap_err();
        assert!(matches!(bad, SweepError::BoundViolated { f: 1, seed: 4, .. }));
    }
}
