use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use sba_lab::exec;
use sba_lab::report::Report;
use sba_lab::sim::{self, ByzantineSpec, ProposalSpec, Protocol, Scenario, Strategy, STRATEGY_NAMES};
use sba_lab::sweep::{self, SweepError, SweepSpec};
use sba_lab::types::{make_config, parse_ratio};

const TRACE_DIR_ENV: &str = "SBA_LAB_TRACE_DIR";

/// Exit codes: 0 clean, 1 invariant violation, 2 malformed input.
#[derive(Parser)]
#[command(name = "sba-lab", version, about = "Adaptive strong Byzantine agreement simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one scenario file and write its JSON report.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        /// Dump delivered messages as JSON lines next to the report, or into $SBA_LAB_TRACE_DIR.
        #[arg(long)]
        trace: bool,
        /// Report path; stdout if omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sweep f = 0..=fmax over seeds and write one CSV row per (f, seed).
    Sweep {
        #[arg(long)]
        t: usize,
        #[arg(long, default_value = "1")]
        c: String,
        #[arg(long)]
        strategy: String,
        #[arg(long)]
        fmax: usize,
        #[arg(long)]
        seeds: u64,
        #[arg(long, default_value = "distinct_from:1")]
        proposals: String,
        /// first_f, random or alternate
        #[arg(long, default_value = "alternate")]
        placement: String,
        #[arg(long)]
        out: PathBuf,
        /// Also check the fitted bound and print the W(f) curve.
        #[arg(long)]
        summary: bool,
    },
    /// Check the word bound on a sweep CSV and print the W(f) curve as JSON.
    Summary {
        #[arg(long)]
        csv: PathBuf,
    },
    /// Run the bundled invariant grid; nonzero exit on any violation.
    Check {
        #[arg(long, default_value_t = 20)]
        seeds: u64,
    },
}

enum Outcome {
    Clean,
    Violation,
}

/// Input errors map to exit code 2.
#[derive(Debug)]
struct BadInput(String);

impl std::fmt::Display for BadInput {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for BadInput {}

fn bad(msg: impl std::fmt::Display) -> anyhow::Error {
    BadInput(msg.to_string()).into()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.cmd {
        Cmd::Run { scenario, trace, out } => cmd_run(&scenario, trace, out.as_deref()),
        Cmd::Sweep {
            t,
            c,
            strategy,
            fmax,
            seeds,
            proposals,
            placement,
            out,
            summary,
        } => cmd_sweep(t, &c, &strategy, fmax, seeds, &proposals, &placement, &out, summary),
        Cmd::Summary { csv } => cmd_summary(&csv),
        Cmd::Check { seeds } => cmd_check(seeds),
    };
    match res {
        Ok(Outcome::Clean) => ExitCode::SUCCESS,
        Ok(Outcome::Violation) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<BadInput>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn trace_path(scenario: &Path, out: Option<&Path>, seed: u64) -> PathBuf {
    let stem = scenario.file_stem().and_then(|s| s.to_str()).unwrap_or("scenario");
    let name = format!("{stem}-seed{seed}.trace.jsonl");
    match (std::env::var_os(TRACE_DIR_ENV), out) {
        (Some(dir), _) => PathBuf::from(dir).join(name),
        (None, Some(out)) => out.with_extension("trace.jsonl"),
        (None, None) => PathBuf::from(name),
    }
}

fn cmd_run(path: &Path, trace: bool, out: Option<&Path>) -> Result<Outcome> {
    let text = fs::read_to_string(path).map_err(|e| bad(format!("{}: {e}", path.display())))?;
    let scenario = Scenario::from_json(&text).map_err(|e| bad(format!("{}: {e}", path.display())))?;

    let report = if trace {
        let tp = trace_path(path, out, scenario.seed);
        if let Some(dir) = tp.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).with_context(|| dir.display().to_string())?;
        }
        let mut w = BufWriter::new(File::create(&tp).with_context(|| tp.display().to_string())?);
        let r = sim::run_traced(&scenario, &mut w)?;
        w.flush()?;
        r
    } else {
        sim::run(&scenario)
    };

    let json = serde_json::to_string_pretty(&report)? + "\n";
    match out {
        Some(p) => fs::write(p, json).with_context(|| p.display().to_string())?,
        None => io::stdout().write_all(json.as_bytes())?,
    }
    for v in &report.violations {
        eprintln!("violation: {v}");
    }
    Ok(if report.is_clean() {
        Outcome::Clean
    } else {
        Outcome::Violation
    })
}

#[allow(clippy::too_many_arguments)]
fn cmd_sweep(
    t: usize,
    c: &str,
    strategy: &str,
    fmax: usize,
    seeds: u64,
    proposals: &str,
    placement: &str,
    out: &Path,
    summary: bool,
) -> Result<Outcome> {
    let cfg = make_config(t, parse_ratio(c).map_err(bad)?).map_err(bad)?;
    let strategy: Strategy = strategy.parse().map_err(bad)?;
    let proposals: ProposalSpec = proposals.parse().map_err(bad)?;
    let mut spec = SweepSpec::new(cfg, strategy, fmax, seeds, proposals).map_err(bad)?;
    spec.placement = placement.parse().map_err(bad)?;

    let rows = spec.run()?;
    let file = File::create(out).with_context(|| out.display().to_string())?;
    sweep::write_csv(&rows, BufWriter::new(file))?;

    let mut outcome = if rows.iter().any(|r| r.violations > 0) {
        Outcome::Violation
    } else {
        Outcome::Clean
    };
    if summary && !print_summary(&rows)? {
        outcome = Outcome::Violation;
    }
    Ok(outcome)
}

fn print_summary(rows: &[sweep::SweepRow]) -> Result<bool> {
    match sweep::sweep_summary(rows) {
        Ok(s) => {
            println!("{}", serde_json::to_string_pretty(&s)?);
            Ok(true)
        }
        Err(e @ SweepError::BoundViolated { .. }) => {
            eprintln!("{e}");
            Ok(false)
        }
        Err(e) => Err(bad(e)),
    }
}

fn cmd_summary(csv: &Path) -> Result<Outcome> {
    let file = File::open(csv).map_err(|e| bad(format!("{}: {e}", csv.display())))?;
    let rows = sweep::read_csv(file).map_err(bad)?;
    Ok(if print_summary(&rows)? {
        Outcome::Clean
    } else {
        Outcome::Violation
    })
}

fn check_grid(seeds: u64) -> Vec<Scenario> {
    let mut out = Vec::new();
    for (t, c) in [(2, "1"), (4, "1"), (4, "1/2")] {
        let cfg = make_config(t, parse_ratio(c).expect("fixed ratio")).expect("fixed config");
        for proposals in [
            ProposalSpec::Unanimous(sba_lab::types::Value(9)),
            ProposalSpec::DistinctFrom(sba_lab::types::Value(1)),
        ] {
            for name in STRATEGY_NAMES {
                for f in 0..=t {
                    for seed in 0..seeds {
                        let byz = if seed % 2 == 0 {
                            ByzantineSpec::FirstF
                        } else {
                            ByzantineSpec::Random
                        };
                        let strategy: Strategy = name.parse().expect("built-in strategy");
                        for protocol in [Protocol::Strong, Protocol::BucketOnly] {
                            out.push(
                                Scenario::new(&cfg, f, &byz, strategy.clone(), &proposals, seed, protocol)
                                    .expect("valid grid point"),
                            );
                        }
                    }
                }
            }
        }
    }
    out
}

fn cmd_check(seeds: u64) -> Result<Outcome> {
    let scenarios = check_grid(seeds);
    let reports: Vec<Report> = exec::run_batch(&scenarios);
    let dirty: Vec<&Report> = reports.iter().filter(|r| !r.is_clean()).collect();
    for r in dirty.iter().take(10) {
        println!(
            "{} t={} c={} f={} {} seed={}: {}",
            r.protocol, r.t, r.c, r.f, r.strategy, r.seed, r.violations[0]
        );
    }
    println!("{} runs, {} with violations", reports.len(), dirty.len());
    Ok(if dirty.is_empty() {
        Outcome::Clean
    } else {
        Outcome::Violation
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use sba_lab::sweep::Placement;

    #[test]
    fn placement_names() {
        assert_eq!("alternate".parse::<Placement>().unwrap(), Placement::Alternate);
        assert!("everyone".parse::<Placement>().is_err());
    }

    #[test]
    fn check_grid_covers_both_protocols() {
        let g = check_grid(1);
        assert!(g.iter().any(|s| s.protocol == Protocol::BucketOnly));
        assert_eq!(g.len(), (3 + 5 + 5) * 2 * STRATEGY_NAMES.len() * 2);
    }
}
