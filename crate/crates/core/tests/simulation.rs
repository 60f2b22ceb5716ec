//! Whole-run properties over randomly drawn small configurations.

use std::collections::HashMap;

use msim_core::metrics::{RequestRecord, Scope};
use msim_core::workload::{ArrivalModel, DepthModel, ExecModel, Generator, TimeUnit};
use msim_core::{run_simulation, LbPolicy, Micros, QueuePolicy, SimConfig, SimTime};
use proptest::prelude::*;

fn arb_config() -> impl Strategy<Value = SimConfig> {
    (
        any::<u64>(),
        0usize..5,
        0usize..3,
        proptest::collection::vec(1u16..4, 4),
        3.0f64..7.0,
        0.0f64..2.0,
        200u64..2000,
        1u64..400,
    )
        .prop_map(|(seed, q, lb, microservices, mu, sigma, gap, quantum)| SimConfig {
            seed,
            queue_policy: QueuePolicy::ALL[q],
            lb_policy: LbPolicy::ALL[lb],
            microservices,
            exec_model: ExecModel {
                mu,
                sigma,
                unit: TimeUnit::Micros,
            },
            arrival_model: ArrivalModel {
                mean_interarrival: Micros(gap),
            },
            depth_model: DepthModel {
                outcomes: vec![(0, 0.4), (1, 0.3), (3, 0.3)],
            },
            end_time: Micros(50_000),
            utilization_interval: Micros(20_000),
            imbalance_interval: Micros(7_000),
            fair_share_quantum: Micros(quantum),
            ..SimConfig::default()
        })
}

fn by_request(records: &[RequestRecord]) -> HashMap<u64, Vec<&RequestRecord>> {
    let mut map: HashMap<u64, Vec<&RequestRecord>> = HashMap::new();
    for r in records.iter().filter(|r| r.scope == Scope::Stage) {
        map.entry(r.request_id).or_default().push(r);
    }
    map
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn every_generated_stage_runs_exactly_once(cfg in arb_config()) {
        let generated: Vec<_> = Generator::new(cfg.workload(), cfg.seed, SimTime(cfg.end_time.get()))
            .unwrap()
            .collect();
        let out = run_simulation(&cfg).unwrap();
        let report = &out.run.report;
        prop_assert!(report.checks.all(), "{:?}", report.checks);
        prop_assert_eq!(report.client_requests as usize, generated.len());
        let stages: usize = generated.iter().map(|r| r.stage_count()).sum();
        prop_assert_eq!(report.stage_requests as usize, stages);

        let stage_records = by_request(&out.run.records);
        for req in &generated {
            let mut execs: Vec<u64> = req.nodes.iter().map(|n| n.stage.exec_time).collect();
            let mut seen: Vec<u64> = stage_records[&req.request_id].iter().map(|r| r.exec_us).collect();
            execs.sort_unstable();
            seen.sort_unstable();
            prop_assert_eq!(execs, seen);
        }
    }

    #[test]
    fn records_respect_time_and_call_order(cfg in arb_config()) {
        let out = run_simulation(&cfg).unwrap();
        let stage_records = by_request(&out.run.records);
        for client in out.run.records.iter().filter(|r| r.scope == Scope::Client) {
            prop_assert!(client.total_us() >= client.exec_us);
            prop_assert!(client.slowdown().unwrap() >= 1.0);
            let mut stages = stage_records[&client.request_id].clone();
            stages.sort_by_key(|r| (r.depth, r.started_at));
            for s in &stages {
                prop_assert!(s.started_at >= client.started_at);
                prop_assert!(s.completed_at <= client.completed_at);
                prop_assert!(s.completed_at.0 - s.started_at.0 >= s.exec_us);
                if let Some(deadline) = s.deadline {
                    prop_assert!(deadline >= client.started_at);
                    prop_assert!(deadline <= client.deadline.unwrap());
                }
            }
            // Routing and communication fan out to one microservice, so stages form
            // a chain: each one starts the moment its caller finishes.
            for pair in stages.windows(2) {
                prop_assert_eq!(pair[1].depth.unwrap(), pair[0].depth.unwrap() + 1);
                prop_assert_eq!(pair[1].started_at, pair[0].completed_at);
            }
            prop_assert_eq!(stages.last().unwrap().completed_at, client.completed_at);
        }
    }

    #[test]
    fn utilization_never_leaves_the_unit_interval(cfg in arb_config()) {
        let out = run_simulation(&cfg).unwrap();
        for ms in &out.run.report.microservices {
            prop_assert!((0.0..=1.0).contains(&ms.mean_utilization));
            for u in &ms.utilization_windows {
                prop_assert!((0.0..=1.0).contains(u));
            }
            match ms.imbalance {
                Some(i) => prop_assert!(ms.instances >= 2 && (0.0..=0.5).contains(&i)),
                None => prop_assert_eq!(ms.instances, 1),
            }
        }
    }

    #[test]
    fn same_seed_same_report(cfg in arb_config()) {
        let a = run_simulation(&cfg).unwrap().run.report.to_json();
        let b = run_simulation(&cfg).unwrap().run.report.to_json();
        prop_assert_eq!(a, b);
    }
}
