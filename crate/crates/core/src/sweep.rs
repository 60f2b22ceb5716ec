//! Independent runs in bulk: seed batches, policy sweeps and oracle scenarios.
//!
//! With the `parallel` feature (on by default) work items are spread over the
//! rayon pool; without it they run one after another. Results keep input
//! order either way, and each item owns all of its state, so output does not
//! depend on the mode.

use crate::config::SimConfig;
use crate::gateway::LbPolicy;
use crate::instance::QueuePolicy;
use crate::run::run_simulation;
use crate::sim::SimOutput;
use crate::Error;

/// Maps `f` over `items` in sequence.
pub fn map_sequential<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    F: Fn(&T) -> R,
{
    items.iter().map(f).collect()
}

/// Maps `f` over `items`, in parallel when the `parallel` feature is enabled.
#[cfg(feature = "parallel")]
pub fn map_parallel<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    use rayon::prelude::*;
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_parallel<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    map_sequential(items, f)
}

pub fn run_many(configs: &[SimConfig]) -> Vec<Result<SimOutput, Error>> {
    map_parallel(configs, run_simulation)
}

pub fn run_many_sequential(configs: &[SimConfig]) -> Vec<Result<SimOutput, Error>> {
    map_sequential(configs, run_simulation)
}

/// `runs` copies of `base` with seeds `base.seed, base.seed + 1, ...`.
pub fn seed_batch(base: &SimConfig, runs: u64) -> Vec<SimConfig> {
    (0..runs)
        .map(|i| SimConfig {
            seed: base.seed.wrapping_add(i),
            ..base.clone()
        })
        .collect()
}

/// One config per queue policy, everything else from `base`.
pub fn queue_policy_sweep(base: &SimConfig, policies: &[QueuePolicy]) -> Vec<SimConfig> {
    policies
        .iter()
        .map(|&queue_policy| SimConfig {
            queue_policy,
            ..base.clone()
        })
        .collect()
}

/// One config per load balancer, everything else from `base`.
pub fn lb_policy_sweep(base: &SimConfig, policies: &[LbPolicy]) -> Vec<SimConfig> {
    policies
        .iter()
        .map(|&lb_policy| SimConfig {
            lb_policy,
            ..base.clone()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::time::Micros;
    use crate::workload::ExecModel;

    #[test]
    fn parallel_and_sequential_agree() {
        let base = SimConfig {
            end_time: Micros(100_000),
            exec_model: ExecModel {
                mu: 5.0,
                sigma: 1.0,
                unit: crate::workload::TimeUnit::Micros,
            },
            ..SimConfig::default()
        };
        let configs = seed_batch(&base, 4);
        let par: Vec<String> = run_many(&configs).into_iter().map(|r| r.unwrap().run.report.to_json()).collect();
        let seq: Vec<String> = run_many_sequential(&configs)
            .into_iter()
            .map(|r| r.unwrap().run.report.to_json())
            .collect();
        assert_eq!(par, seq);
        assert_ne!(par[0], par[1]);
    }

    #[test]
    fn sweeps_vary_one_field() {
        let base = SimConfig::default();
        let q = queue_policy_sweep(&base, &QueuePolicy::ALL);
        assert_eq!(q.len(), 5);
        assert!(q.iter().all(|c| c.lb_policy == base.lb_policy));
        let l = lb_policy_sweep(&base, &LbPolicy::ALL);
        assert_eq!(l.iter().map(|c| c.lb_policy).collect::<Vec<_>>(), LbPolicy::ALL);
        assert_eq!(map_parallel(&[1, 2, 3], |x| x * 2), vec![2, 4, 6]);
    }
}
