//! Independent checks for the simulator: the Pollaczek–Khinchine mean wait of an
//! M/G/1 FCFS queue and a tick-by-tick scheduler for small single-instance runs.

use std::collections::VecDeque;

use crate::instance::QueuePolicy;

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
pub enum OracleError {
    #[error("unstable system: rho = {0} >= 1")]
    UnstableSystem(f64),
    #[error("invalid parameters: {0}")]
    InvalidParams(&'static str),
}

/// M/G/1 inputs: arrival rate per µs and the first two moments of service time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mg1Params {
    pub lambda: f64,
    pub es: f64,
    pub es2: f64,
}

impl Mg1Params {
    pub fn deterministic(mean_gap_us: f64, service_us: f64) -> Self {
        Mg1Params {
            lambda: 1.0 / mean_gap_us,
            es: service_us,
            es2: service_us * service_us,
        }
    }

    /// Log-normal service `exp(N(mu, sigma))` scaled by `scale` µs.
    pub fn lognormal(mean_gap_us: f64, mu: f64, sigma: f64, scale: f64) -> Self {
        let s2 = sigma * sigma;
        Mg1Params {
            lambda: 1.0 / mean_gap_us,
            es: scale * (mu + s2 / 2.0).exp(),
            es2: scale * scale * (2.0 * mu + 2.0 * s2).exp(),
        }
    }

    pub fn rho(&self) -> f64 {
        self.lambda * self.es
    }
}

/// Mean time spent waiting in queue, `lambda * E[S^2] / (2 (1 - rho))`.
pub fn mg1_fcfs_mean_wait(p: Mg1Params) -> Result<f64, OracleError> {
    if !(p.lambda >= 0.0 && p.es >= 0.0 && p.es2 >= 0.0) {
        return Err(OracleError::InvalidParams("rates and moments must be >= 0"));
    }
    let rho = p.rho();
    if rho >= 1.0 {
        return Err(OracleError::UnstableSystem(rho));
    }
    Ok(p.lambda * p.es2 / (2.0 * (1.0 - rho)))
}

/// One job for the brute-force scheduler.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Job {
    pub arrival: u64,
    pub exec: u64,
    /// Only consulted by early-deadline policies.
    pub deadline: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Scheduled {
    pub start: u64,
    pub completion: u64,
}

/// Schedules `jobs` on one instance by advancing a clock one microsecond at a
/// time. Job `i` is identified by its index, which also breaks ties after
/// arrival time.
///
/// At every tick: arrivals are admitted in index order, and the first one
/// starts immediately if the instance is idle; then a slice ending at this tick
/// completes its job or puts it back at the tail; then an idle instance picks
/// its next job; finally the running job receives one microsecond.
pub fn brute_force_schedule(jobs: &[Job], policy: QueuePolicy) -> Vec<Scheduled> {
    let n = jobs.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| (jobs[i].arrival, i));
    let quantum = match policy {
        QueuePolicy::FairShare { quantum } => quantum.max(1),
        _ => u64::MAX,
    };

    let mut remaining: Vec<u64> = jobs.iter().map(|j| j.exec).collect();
    let mut start: Vec<Option<u64>> = vec![None; n];
    let mut completion = vec![0u64; n];
    let mut waiting: VecDeque<usize> = VecDeque::new();
    let mut running: Option<(usize, u64)> = None;
    let mut admitted = 0;
    let mut done = 0;
    let mut t = 0u64;

    let pick = |waiting: &mut VecDeque<usize>, remaining: &[u64]| -> Option<usize> {
        let pos = match policy {
            QueuePolicy::Fcfs | QueuePolicy::FairShare { .. } => 0,
            QueuePolicy::ShortestFirst => (0..waiting.len()).min_by_key(|&k| {
                let i = waiting[k];
                (remaining[i], jobs[i].arrival, i)
            })?,
            QueuePolicy::EarlyDeadline(_) => (0..waiting.len()).min_by_key(|&k| {
                let i = waiting[k];
                (jobs[i].deadline, jobs[i].arrival, i)
            })?,
        };
        waiting.remove(pos)
    };
    let launch = |i: usize, t: u64, start: &mut Vec<Option<u64>>, remaining: &[u64]| {
        start[i].get_or_insert(t);
        Some((i, remaining[i].min(quantum)))
    };

    while done < n {
        while admitted < n && jobs[order[admitted]].arrival == t {
            let i = order[admitted];
            admitted += 1;
            if running.is_none() && waiting.is_empty() {
                running = launch(i, t, &mut start, &remaining);
            } else {
                waiting.push_back(i);
            }
        }
        if let Some((i, 0)) = running {
            running = None;
            if remaining[i] == 0 {
                completion[i] = t;
                done += 1;
            } else {
                waiting.push_back(i);
            }
        }
        if running.is_none() {
            if let Some(i) = pick(&mut waiting, &remaining) {
                running = launch(i, t, &mut start, &remaining);
            }
        }
        if let Some((i, left)) = running.as_mut() {
            remaining[*i] -= 1;
            *left -= 1;
        }
        t += 1;
    }

    start
        .into_iter()
        .zip(completion)
        .map(|(s, c)| Scheduled {
            start: s.unwrap_or(0),
            completion: c,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::DeadlineVariant;

    fn jobs(spec: &[(u64, u64)]) -> Vec<Job> {
        spec.iter()
            .map(|&(arrival, exec)| Job {
                arrival,
                exec,
                deadline: 0,
            })
            .collect()
    }

    fn completions(s: &[Scheduled]) -> Vec<u64> {
        s.iter().map(|x| x.completion).collect()
    }

    #[test]
    fn pk_deterministic_example() {
        let p = Mg1Params::deterministic(2000.0, 1000.0);
        assert!((p.rho() - 0.5).abs() < 1e-12);
        assert!((mg1_fcfs_mean_wait(p).unwrap() - 500.0).abs() < 1e-9);
    }

    #[test]
    fn pk_limits() {
        let idle = Mg1Params::deterministic(1e12, 1000.0);
        assert!(mg1_fcfs_mean_wait(idle).unwrap() < 1e-3);
        let full = Mg1Params::deterministic(1000.0, 1000.0);
        assert!(matches!(mg1_fcfs_mean_wait(full), Err(OracleError::UnstableSystem(_))));
    }

    #[test]
    fn pk_exponential_service_matches_mm1() {
        // M/M/1: Wq = rho / (mu - lambda).
        let (lambda, es) = (1.0 / 2000.0, 1000.0);
        let p = Mg1Params {
            lambda,
            es,
            es2: 2.0 * es * es,
        };
        let mm1 = p.rho() / (1.0 / es - lambda);
        assert!((mg1_fcfs_mean_wait(p).unwrap() - mm1).abs() < 1e-9);
    }

    #[test]
    fn lognormal_moments() {
        let p = Mg1Params::lognormal(1.0, 0.0, 0.0, 1000.0);
        assert!((p.es - 1000.0).abs() < 1e-9 && (p.es2 - 1e6).abs() < 1e-6);
    }

    #[test]
    fn fcfs_hand_schedule() {
        let s = brute_force_schedule(&jobs(&[(0, 100), (10, 100), (20, 100)]), QueuePolicy::Fcfs);
        assert_eq!(completions(&s), vec![100, 200, 300]);
        assert_eq!(s[1].start, 100);
    }

    #[test]
    fn shortest_first_hand_schedule() {
        let s = brute_force_schedule(&jobs(&[(0, 1000), (1, 10)]), QueuePolicy::ShortestFirst);
        assert_eq!(s[0], Scheduled { start: 0, completion: 1000 });
        assert_eq!(s[1], Scheduled { start: 1000, completion: 1010 });
    }

    #[test]
    fn fair_share_hand_schedule() {
        let s = brute_force_schedule(&jobs(&[(0, 1200), (0, 300)]), QueuePolicy::FairShare { quantum: 500 });
        // Slices A500, B300, A500, A200.
        assert_eq!(completions(&s), vec![1500, 800]);
    }

    #[test]
    fn early_deadline_hand_schedule() {
        let js = vec![
            Job { arrival: 0, exec: 100, deadline: 5000 },
            Job { arrival: 10, exec: 100, deadline: 9000 },
            Job { arrival: 20, exec: 100, deadline: 7000 },
        ];
        let s = brute_force_schedule(&js, QueuePolicy::EarlyDeadline(DeadlineVariant::Eds));
        assert_eq!(completions(&s), vec![100, 300, 200]);
    }

    #[test]
    fn idle_gaps_are_skipped_over() {
        let s = brute_force_schedule(&jobs(&[(0, 5), (50, 5)]), QueuePolicy::Fcfs);
        assert_eq!(completions(&s), vec![5, 55]);
        assert!(brute_force_schedule(&[], QueuePolicy::Fcfs).is_empty());
    }
}
