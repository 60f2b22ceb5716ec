//! Usage monitor: per-request records, utilization samples and the final report.

use std::io::Write;

use serde::Serialize;

use crate::model::{InstanceId, MicroserviceId};
use crate::time::SimTime;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricError {
    #[error("invalid metric: {0}")]
    InvalidMetric(&'static str),
    #[error("empty input")]
    EmptyInput,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Scope {
    /// Recorded by the router: the whole call tree.
    Client,
    /// Recorded by an instance: one stage.
    Stage,
}

impl Scope {
    pub fn as_str(self) -> &'static str {
        match self {
            Scope::Client => "client",
            Scope::Stage => "stage",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RequestRecord {
    pub request_id: u64,
    pub scope: Scope,
    /// Creation time (client scope) or arrival at the instance (stage scope).
    pub started_at: SimTime,
    pub completed_at: SimTime,
    /// Critical-path execution time (client scope) or stage execution time.
    pub exec_us: u64,
    pub target: Option<MicroserviceId>,
    pub depth: Option<u32>,
    pub deadline: Option<SimTime>,
}

impl RequestRecord {
    pub fn total_us(&self) -> u64 {
        self.completed_at.since(self.started_at)
    }

    pub fn wait_us(&self) -> u64 {
        self.total_us().saturating_sub(self.exec_us)
    }

    pub fn slowdown(&self) -> Result<f64, MetricError> {
        slowdown(self.total_us(), self.exec_us)
    }
}

/// Time in system divided by pure execution time.
pub fn slowdown(total_us: u64, exec_us: u64) -> Result<f64, MetricError> {
    if exec_us == 0 {
        return Err(MetricError::InvalidMetric("execution time is zero"));
    }
    if total_us < exec_us {
        return Err(MetricError::InvalidMetric("total time shorter than execution time"));
    }
    Ok(total_us as f64 / exec_us as f64)
}

/// Busy time summed over instances divided by `window_us * instances`.
pub fn utilization(busy_us: &[u64], window_us: u64) -> f64 {
    if busy_us.is_empty() || window_us == 0 {
        return 0.0;
    }
    let busy: u128 = busy_us.iter().map(|&b| b as u128).sum();
    busy as f64 / (window_us as f64 * busy_us.len() as f64)
}

pub fn population_std(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Mean over sampling intervals of the cross-instance population standard
/// deviation of utilization. `intervals[i]` holds one value per instance.
pub fn imbalance(intervals: &[Vec<f64>]) -> Result<f64, MetricError> {
    if intervals.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    if intervals.iter().any(|row| row.len() < 2) {
        return Err(MetricError::InvalidMetric("imbalance needs at least two instances"));
    }
    Ok(intervals.iter().map(|row| population_std(row)).sum::<f64>() / intervals.len() as f64)
}

/// Sorted distinct values with the fraction of inputs at or below each.
pub fn ecdf(values: &[f64]) -> Result<Vec<(f64, f64)>, MetricError> {
    if values.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(ecdf_sorted(&sorted))
}

fn ecdf_sorted(sorted: &[f64]) -> Vec<(f64, f64)> {
    let n = sorted.len() as f64;
    let mut points: Vec<(f64, f64)> = Vec::new();
    for (i, &x) in sorted.iter().enumerate() {
        let f = (i + 1) as f64 / n;
        match points.last_mut() {
            Some(last) if last.0 == x => last.1 = f,
            _ => points.push((x, f)),
        }
    }
    if let Some(last) = points.last_mut() {
        last.1 = 1.0;
    }
    points
}

/// Smallest `x` whose ECDF value reaches `p`.
pub fn percentile(ecdf: &[(f64, f64)], p: f64) -> Option<f64> {
    let idx = ecdf.partition_point(|&(_, f)| f < p - 1e-12);
    ecdf.get(idx.min(ecdf.len().saturating_sub(1))).map(|&(x, _)| x)
}

/// ECDF value at `x`.
pub fn ecdf_at(ecdf: &[(f64, f64)], x: f64) -> f64 {
    let idx = ecdf.partition_point(|&(v, _)| v <= x);
    if idx == 0 {
        0.0
    } else {
        ecdf[idx - 1].1
    }
}

/// Largest vertical gap between two ECDFs (Kolmogorov–Smirnov distance).
pub fn kolmogorov_distance(a: &[(f64, f64)], b: &[(f64, f64)]) -> f64 {
    a.iter()
        .chain(b.iter())
        .map(|&(x, _)| (ecdf_at(a, x) - ecdf_at(b, x)).abs())
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UtilizationSample {
    /// End of the sampling window.
    pub at: SimTime,
    pub window_us: u64,
    pub instance: InstanceId,
    pub utilization: f64,
}

#[derive(Debug, Clone, Default)]
struct ScopeAccumulator {
    slowdowns: Vec<f64>,
    total_us: u128,
    wait_us: u128,
    exec_us: u128,
}

impl ScopeAccumulator {
    fn summary(mut self) -> Option<(LatencySummary, Vec<(f64, f64)>)> {
        if self.slowdowns.is_empty() {
            return None;
        }
        self.slowdowns.sort_by(f64::total_cmp);
        let n = self.slowdowns.len();
        let curve = ecdf_sorted(&self.slowdowns);
        let mean = |v: u128| v as f64 / n as f64;
        let summary = LatencySummary {
            count: n as u64,
            mean_slowdown: self.slowdowns.iter().sum::<f64>() / n as f64,
            p50_slowdown: percentile(&curve, 0.50).unwrap_or(1.0),
            p99_slowdown: percentile(&curve, 0.99).unwrap_or(1.0),
            max_slowdown: self.slowdowns[n - 1],
            mean_total_us: mean(self.total_us),
            mean_wait_us: mean(self.wait_us),
            mean_exec_us: mean(self.exec_us),
            ecdf: downsample(&curve, 100),
        };
        Some((summary, curve))
    }
}

fn downsample(curve: &[(f64, f64)], max_points: usize) -> Vec<(f64, f64)> {
    if curve.len() <= max_points + 1 {
        return curve.to_vec();
    }
    (0..=max_points)
        .map(|i| curve[(i * (curve.len() - 1)) / max_points])
        .collect()
}

/// Collects request records during a run. Slowdowns and sums are always kept;
/// the full records only when `retain_records` is set.
#[derive(Debug, Clone, Default)]
pub struct Recorder {
    retain_records: bool,
    records: Vec<RequestRecord>,
    client: ScopeAccumulator,
    stage: ScopeAccumulator,
    violations: u64,
}

impl Recorder {
    pub fn new(retain_records: bool) -> Self {
        Recorder {
            retain_records,
            ..Default::default()
        }
    }

    pub fn record(&mut self, record: RequestRecord) {
        let acc = match record.scope {
            Scope::Client => &mut self.client,
            Scope::Stage => &mut self.stage,
        };
        let total = record.total_us();
        match slowdown(total, record.exec_us) {
            Ok(s) => acc.slowdowns.push(s),
            Err(_) => {
                self.violations += 1;
                acc.slowdowns.push(total as f64 / record.exec_us.max(1) as f64);
            }
        }
        acc.total_us += total as u128;
        acc.wait_us += record.wait_us() as u128;
        acc.exec_us += record.exec_us as u128;
        if self.retain_records {
            self.records.push(record);
        }
    }

    pub fn client_count(&self) -> usize {
        self.client.slowdowns.len()
    }

    pub fn stage_count(&self) -> usize {
        self.stage.slowdowns.len()
    }

    pub fn records(&self) -> &[RequestRecord] {
        &self.records
    }

    pub fn finish(self, samples: &SampleLog, meta: &ReportMeta) -> FinishedRun {
        let client_requests = self.client.slowdowns.len() as u64;
        let stage_requests = self.stage.slowdowns.len() as u64;
        let client = self.client.summary();
        let stage = self.stage.summary();
        let microservices = summarize_microservices(samples, &meta.instance_counts);

        let curves_ok = [&client, &stage].iter().all(|s| match s {
            Some((_, curve)) => {
                curve.windows(2).all(|w| w[0].0 < w[1].0 && w[0].1 <= w[1].1)
                    && curve.last().is_some_and(|p| p.1 == 1.0)
            }
            None => true,
        });
        let checks = IdentityChecks {
            total_eq_wait_plus_exec: self.violations == 0,
            slowdown_at_least_one: self.violations == 0,
            stage_count_covers_clients: stage_requests >= client_requests,
            ecdf_monotone_to_one: curves_ok,
            utilization_in_unit_interval: samples
                .utilization
                .iter()
                .chain(&samples.imbalance)
                .all(|s| (0.0..=1.0).contains(&s.utilization)),
        };

        let (client, client_curve) = client.map_or((None, Vec::new()), |(s, c)| (Some(s), c));
        let (stage, stage_curve) = stage.map_or((None, Vec::new()), |(s, c)| (Some(s), c));
        FinishedRun {
            report: SimReport {
                seed: meta.seed,
                lb_policy: meta.lb_policy.clone(),
                queue_policy: meta.queue_policy.clone(),
                end_time_us: meta.end_time.0,
                last_completion_us: meta.last_completion.0,
                drain_us: meta.last_completion.since(meta.end_time),
                client_requests,
                stage_requests,
                client,
                stage,
                microservices,
                checks,
            },
            records: self.records,
            client_ecdf: client_curve,
            stage_ecdf: stage_curve,
        }
    }
}

/// Utilization samples from the two periodic samplers.
#[derive(Debug, Clone, Default)]
pub struct SampleLog {
    /// Coarse (hourly by default) samples used for mean utilization.
    pub utilization: Vec<UtilizationSample>,
    /// Fine (5-minute by default) samples used for imbalance.
    pub imbalance: Vec<UtilizationSample>,
}

#[derive(Debug, Clone, Default)]
pub struct ReportMeta {
    pub seed: u64,
    pub lb_policy: String,
    pub queue_policy: String,
    pub end_time: SimTime,
    pub last_completion: SimTime,
    pub instance_counts: Vec<u16>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatencySummary {
    pub count: u64,
    pub mean_slowdown: f64,
    pub p50_slowdown: f64,
    pub p99_slowdown: f64,
    pub max_slowdown: f64,
    pub mean_total_us: f64,
    pub mean_wait_us: f64,
    pub mean_exec_us: f64,
    /// At most 101 points of the slowdown ECDF.
    pub ecdf: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MicroserviceSummary {
    pub id: u16,
    pub instances: u16,
    pub mean_utilization: f64,
    pub utilization_windows: Vec<f64>,
    pub imbalance: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct IdentityChecks {
    pub total_eq_wait_plus_exec: bool,
    pub slowdown_at_least_one: bool,
    pub stage_count_covers_clients: bool,
    pub ecdf_monotone_to_one: bool,
    pub utilization_in_unit_interval: bool,
}

impl IdentityChecks {
    pub fn all(&self) -> bool {
        self.total_eq_wait_plus_exec
            && self.slowdown_at_least_one
            && self.stage_count_covers_clients
            && self.ecdf_monotone_to_one
            && self.utilization_in_unit_interval
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimReport {
    pub seed: u64,
    pub lb_policy: String,
    pub queue_policy: String,
    pub end_time_us: u64,
    pub last_completion_us: u64,
    /// Time spent finishing admitted requests after arrivals stopped.
    pub drain_us: u64,
    pub client_requests: u64,
    pub stage_requests: u64,
    pub client: Option<LatencySummary>,
    pub stage: Option<LatencySummary>,
    pub microservices: Vec<MicroserviceSummary>,
    pub checks: IdentityChecks,
}

impl SimReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report is plain data");
        s.push('\n');
        s
    }
}

/// Everything a run produces besides the report itself.
#[derive(Debug, Clone)]
pub struct FinishedRun {
    pub report: SimReport,
    pub records: Vec<RequestRecord>,
    pub client_ecdf: Vec<(f64, f64)>,
    pub stage_ecdf: Vec<(f64, f64)>,
}

/// Groups consecutive samples of one window (same `at`) per microservice.
fn windows_for(samples: &[UtilizationSample], ms: MicroserviceId) -> Vec<(u64, Vec<f64>)> {
    let mut out: Vec<(SimTime, u64, Vec<f64>)> = Vec::new();
    for s in samples.iter().filter(|s| s.instance.ms == ms) {
        match out.last_mut() {
            Some((at, _, values)) if *at == s.at => values.push(s.utilization),
            _ => out.push((s.at, s.window_us, vec![s.utilization])),
        }
    }
    out.into_iter().map(|(_, w, v)| (w, v)).collect()
}

fn summarize_microservices(samples: &SampleLog, counts: &[u16]) -> Vec<MicroserviceSummary> {
    counts
        .iter()
        .enumerate()
        .map(|(i, &instances)| {
            let ms = MicroserviceId(i as u16);
            let coarse = windows_for(&samples.utilization, ms);
            let per_window: Vec<f64> = coarse
                .iter()
                .map(|(_, v)| v.iter().sum::<f64>() / v.len() as f64)
                .collect();
            let span: u64 = coarse.iter().map(|(w, _)| w).sum();
            let mean_utilization = if span == 0 {
                0.0
            } else {
                coarse
                    .iter()
                    .zip(&per_window)
                    .map(|((w, _), u)| *w as f64 * u)
                    .sum::<f64>()
                    / span as f64
            };
            let fine: Vec<Vec<f64>> = windows_for(&samples.imbalance, ms).into_iter().map(|(_, v)| v).collect();
            MicroserviceSummary {
                id: i as u16,
                instances,
                mean_utilization,
                utilization_windows: per_window,
                imbalance: imbalance(&fine).ok(),
            }
        })
        .collect()
}

/// Builds a report from already collected records.
pub fn finalize_report(records: &[RequestRecord], samples: &SampleLog, meta: &ReportMeta) -> SimReport {
    let mut recorder = Recorder::new(false);
    for r in records {
        recorder.record(r.clone());
    }
    recorder.finish(samples, meta).report
}

pub const REQUESTS_HEADER: &str =
    "request_id,scope,created_at,completed_at,total_us,exec_us,wait_us,slowdown,called_ms,hops_done,deadline";

pub fn write_requests_csv<W: Write>(mut out: W, records: &[RequestRecord]) -> std::io::Result<()> {
    writeln!(out, "{REQUESTS_HEADER}")?;
    for r in records {
        let opt = |v: Option<u64>| v.map(|x| x.to_string()).unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{},{},{},{:.6},{},{},{}",
            r.request_id,
            r.scope.as_str(),
            r.started_at.0,
            r.completed_at.0,
            r.total_us(),
            r.exec_us,
            r.wait_us(),
            r.total_us() as f64 / r.exec_us.max(1) as f64,
            opt(r.target.map(|m| m.0 as u64)),
            opt(r.depth.map(u64::from)),
            opt(r.deadline.map(|d| d.0)),
        )?;
    }
    out.flush()
}

pub fn write_ecdf_csv<W: Write>(mut out: W, points: &[(f64, f64)]) -> std::io::Result<()> {
    writeln!(out, "x,f")?;
    for (x, f) in points {
        writeln!(out, "{x},{f}")?;
    }
    out.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn slowdown_arithmetic() {
        assert_eq!(slowdown(2000, 1000), Ok(2.0));
        assert_eq!(slowdown(1000, 1000), Ok(1.0));
        assert!(slowdown(500, 1000).is_err());
        assert!(slowdown(10, 0).is_err());
    }

    #[test]
    fn utilization_cases() {
        assert!(close(utilization(&[1000], 1000), 1.0));
        assert!(close(utilization(&[1000, 0], 1000), 0.5));
        assert!(close(utilization(&[0, 0, 0], 1000), 0.0));
        assert_eq!(utilization(&[], 10), 0.0);
    }

    #[test]
    fn imbalance_cases() {
        assert!(close(imbalance(&[vec![0.3, 0.3, 0.3], vec![0.7, 0.7, 0.7]]).unwrap(), 0.0));
        assert!(close(imbalance(&[vec![1.0, 0.0], vec![1.0, 0.0]]).unwrap(), 0.5));
        // Interval deviations 0.2 and 0.4.
        assert!(close(imbalance(&[vec![0.0, 0.4], vec![0.0, 0.8]]).unwrap(), 0.3));
        assert!(imbalance(&[vec![0.5]]).is_err());
        assert!(imbalance(&[]).is_err());
    }

    #[test]
    fn ecdf_cases() {
        let e = ecdf(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(e.len(), 3);
        assert!(close(e[0].1, 1.0 / 3.0) && close(e[1].1, 2.0 / 3.0) && e[2].1 == 1.0);
        assert_eq!(ecdf(&[5.0, 5.0, 5.0]).unwrap(), vec![(5.0, 1.0)]);
        assert_eq!(ecdf(&[]), Err(MetricError::EmptyInput));
    }

    #[test]
    fn percentile_and_lookup() {
        let values: Vec<f64> = (1..=100).map(f64::from).collect();
        let e = ecdf(&values).unwrap();
        assert_eq!(percentile(&e, 0.5), Some(50.0));
        assert_eq!(percentile(&e, 0.99), Some(99.0));
        assert_eq!(percentile(&e, 1.0), Some(100.0));
        assert_eq!(ecdf_at(&e, 0.5), 0.0);
        assert!(close(ecdf_at(&e, 10.5), 0.10));
        assert_eq!(kolmogorov_distance(&e, &e), 0.0);
        let shifted = ecdf(&values.iter().map(|v| v + 10.0).collect::<Vec<_>>()).unwrap();
        assert!(close(kolmogorov_distance(&e, &shifted), 0.10));
    }

    #[test]
    fn lognormal_p99_matches_quantile_formula() {
        use crate::rng::{RngStream, StreamId};
        use rand_distr::{Distribution, LogNormal};
        let (mu, sigma) = (1.0, 0.75);
        let dist = LogNormal::new(mu, sigma).unwrap();
        let mut rng = RngStream::new(99, StreamId::Exec);
        let draws: Vec<f64> = (0..10_000).map(|_| dist.sample(&mut rng)).collect();
        let p99 = percentile(&ecdf(&draws).unwrap(), 0.99).unwrap();
        let analytic = (mu + 2.326_347_874 * sigma).exp();
        assert!((p99 / analytic - 1.0).abs() < 0.05, "{p99} vs {analytic}");
    }

    fn record(scope: Scope, start: u64, end: u64, exec: u64) -> RequestRecord {
        RequestRecord {
            request_id: 0,
            scope,
            started_at: SimTime(start),
            completed_at: SimTime(end),
            exec_us: exec,
            target: None,
            depth: None,
            deadline: None,
        }
    }

    #[test]
    fn empty_run_still_reports() {
        let report = finalize_report(&[], &SampleLog::default(), &ReportMeta::default());
        assert_eq!(report.client_requests, 0);
        assert!(report.client.is_none());
        assert!(report.checks.all());
        assert!(report.to_json().contains("\"client\": null"));
    }

    #[test]
    fn report_summarizes_records() {
        let records = vec![
            record(Scope::Client, 0, 3000, 1000),
            record(Scope::Stage, 0, 1000, 1000),
            record(Scope::Stage, 1000, 3000, 1000),
        ];
        let meta = ReportMeta {
            end_time: SimTime(2000),
            last_completion: SimTime(3000),
            ..Default::default()
        };
        let r = finalize_report(&records, &SampleLog::default(), &meta);
        assert_eq!((r.client_requests, r.stage_requests, r.drain_us), (1, 2, 1000));
        let c = r.client.unwrap();
        assert_eq!(c.p99_slowdown, 3.0);
        assert_eq!(c.mean_wait_us, 2000.0);
        assert_eq!(r.stage.unwrap().mean_slowdown, 1.5);
        assert!(r.checks.all());
    }

    #[test]
    fn impossible_records_fail_the_checks() {
        let records = vec![record(Scope::Client, 0, 10, 100)];
        let r = finalize_report(&records, &SampleLog::default(), &ReportMeta::default());
        assert!(!r.checks.total_eq_wait_plus_exec);
        assert!(!r.checks.stage_count_covers_clients);
    }

    #[test]
    fn microservice_summary_uses_windows() {
        let inst = |slot| InstanceId::new(0, slot);
        let s = |at, slot, u| UtilizationSample {
            at: SimTime(at),
            window_us: 100,
            instance: inst(slot),
            utilization: u,
        };
        let samples = SampleLog {
            utilization: vec![s(100, 0, 1.0), s(100, 1, 0.0), s(200, 0, 0.5), s(200, 1, 0.5)],
            imbalance: vec![s(100, 0, 1.0), s(100, 1, 0.0), s(200, 0, 0.5), s(200, 1, 0.5)],
        };
        let meta = ReportMeta {
            instance_counts: vec![2, 1],
            ..Default::default()
        };
        let r = finalize_report(&[], &samples, &meta);
        let m = &r.microservices[0];
        assert_eq!(m.utilization_windows, vec![0.5, 0.5]);
        assert!(close(m.mean_utilization, 0.5));
        assert!(close(m.imbalance.unwrap(), 0.25));
        assert_eq!(r.microservices[1].imbalance, None);
    }

    #[test]
    fn requests_csv_layout() {
        let mut r = record(Scope::Stage, 10, 40, 20);
        r.target = Some(MicroserviceId(2));
        r.depth = Some(1);
        r.deadline = Some(SimTime(99));
        let mut buf = Vec::new();
        write_requests_csv(&mut buf, &[r, record(Scope::Client, 0, 40, 40)]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], REQUESTS_HEADER);
        assert_eq!(lines[1], "0,stage,10,40,30,20,10,1.500000,2,1,99");
        assert_eq!(lines[2], "0,client,0,40,40,40,0,1.000000,,,");
    }

    proptest! {
        #[test]
        fn ecdf_is_monotone_and_ends_at_one(values in proptest::collection::vec(0.0f64..1e6, 1..200)) {
            let e = ecdf(&values).unwrap();
            prop_assert!(e.windows(2).all(|w| w[0].0 < w[1].0 && w[0].1 < w[1].1));
            prop_assert_eq!(e.last().unwrap().1, 1.0);
        }

        #[test]
        fn wait_plus_exec_is_total(start in 0u64..1_000_000, exec in 1u64..1_000_000, wait in 0u64..1_000_000) {
            let r = record(Scope::Stage, start, start + exec + wait, exec);
            prop_assert_eq!(r.wait_us() + r.exec_us, r.total_us());
            prop_assert!(r.slowdown().unwrap() >= 1.0);
        }
    }
}
