//! Batch execution of independent scenarios.
//!
//! With the `parallel` feature (default) runs are spread over the rayon
//! thread pool; without it they run one after another. Results always come
//! back in input order, so both paths produce identical output.

use crate::report::Report;
use crate::sim::{self, Scenario};

/// Applies `f` to every item, preserving order.
#[cfg(feature = "parallel")]
pub fn map_ordered<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    use rayon::prelude::*;
    items.par_iter().map(f).collect()
}

/// Applies `f` to every item, preserving order.
#[cfg(not(feature = "parallel"))]
pub fn map_ordered<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    F: Fn(&T) -> R,
{
    items.iter().map(f).collect()
}

/// Same as [`map_ordered`] but always on the calling thread.
pub fn map_sequential<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    F: Fn(&T) -> R,
{
    items.iter().map(f).collect()
}

pub fn run_batch(scenarios: &[Scenario]) -> Vec<Report> {
    map_ordered(scenarios, sim::run)
}

pub fn run_batch_sequential(scenarios: &[Scenario]) -> Vec<Report> {
    map_sequential(scenarios, sim::run)
}

pub fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{ByzantineSpec, ProposalSpec, Protocol, Strategy};
    use crate::types::{make_config, parse_ratio, Value};

    #[test]
    fn batch_paths_agree() {
        let cfg = make_config(2, parse_ratio("1").unwrap()).unwrap();
        let scenarios: Vec<Scenario> = (0..6)
            .map(|seed| {
                Scenario::new(
                    &cfg,
                    (seed % 3) as usize,
                    &ByzantineSpec::Random,
                    Strategy::EquivocatingLeader,
                    &ProposalSpec::DistinctFrom(Value(1)),
                    seed,
                    Protocol::Strong,
                )
                .unwrap()
            })
            .collect();
        let a: Vec<String> = run_batch(&scenarios).into_iter().map(|r| r.digest).collect();
        let b: Vec<String> = run_batch_sequential(&scenarios).into_iter().map(|r| r.digest).collect();
        assert_eq!(a, b);
    }
}
