//! Runs the queue-policy and load-balancer comparisons and prints a summary.
//!
//! ```text
//! cargo run --release --example experiments -- [end_time] [offered_load | mu sigma unit]
//! ```
//!
//! With a single number after the end time the default execution-time spread
//! is kept and its scale chosen for that offered load, e.g. `1h 0.8`.

use msim_core::gateway::LbPolicy;
use msim_core::instance::QueuePolicy;
use msim_core::metrics::{ecdf_at, kolmogorov_distance};
use msim_core::sweep::map_parallel;
use msim_core::workload::{ExecModel, TimeUnit};
use msim_core::{simulate, Micros, SimConfig, SimOutput};

fn run(cfg: &SimConfig) -> SimOutput {
    let mut settings = cfg.settings();
    settings.retain_records = false;
    let gen = msim_core::workload::Generator::new(cfg.workload(), cfg.seed, settings.end_time).unwrap();
    simulate(settings, gen).unwrap()
}

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mut base = SimConfig {
        end_time: args.first().map_or(Micros(3_600_000_000), |s| s.parse().unwrap()),
        ..SimConfig::default()
    };
    if args.len() == 2 {
        base = base.with_offered_utilization(args[1].parse().unwrap());
    } else if args.len() >= 4 {
        base.exec_model = ExecModel {
            mu: args[1].parse().unwrap(),
            sigma: args[2].parse().unwrap(),
            unit: if args[3] == "us" { TimeUnit::Micros } else { TimeUnit::Millis },
        };
    }
    println!("exec model {:?}, end {}", base.exec_model, base.end_time);

    let queue: Vec<SimConfig> = QueuePolicy::ALL
        .iter()
        .map(|&q| SimConfig {
            queue_policy: q,
            ..base.clone()
        })
        .collect();
    let lbs: Vec<SimConfig> = LbPolicy::ALL
        .iter()
        .map(|&lb| SimConfig {
            lb_policy: lb,
            ..base.clone()
        })
        .collect();

    let started = std::time::Instant::now();
    let outs = map_parallel(&queue, run);
    for (cfg, out) in queue.iter().zip(&outs) {
        let r = &out.run.report;
        let c = r.client.as_ref().unwrap();
        println!(
            "{:>8} p50={:>12.2} p99={:>14.2} mean={:>12.2} f(<=10)={:.3} drain={}s slices={} util={:?}",
            cfg.effective_queue_policy().as_str(),
            c.p50_slowdown,
            c.p99_slowdown,
            c.mean_slowdown,
            ecdf_at(&out.run.client_ecdf, 10.0),
            r.drain_us / 1_000_000,
            out.slices,
            r.microservices.iter().map(|m| (m.mean_utilization * 1000.0).round() / 1000.0).collect::<Vec<_>>()
        );
    }
    println!("KS(eds, exds) = {:.4}", kolmogorov_distance(&outs[3].run.client_ecdf, &outs[4].run.client_ecdf));
    println!("queue sweep took {:?}", started.elapsed());

    let outs = map_parallel(&lbs, run);
    for (cfg, out) in lbs.iter().zip(&outs) {
        let r = &out.run.report;
        let c = r.client.as_ref().unwrap();
        println!(
            "{:>8} imbalance={:.4} p99={:>14.2} f(<=2)={:.3} f(<=10)={:.3} drain={}s",
            cfg.lb_policy.as_str(),
            r.microservices[0].imbalance.unwrap_or(f64::NAN),
            c.p99_slowdown,
            ecdf_at(&out.run.client_ecdf, 2.0),
            ecdf_at(&out.run.client_ecdf, 10.0),
            r.drain_us / 1_000_000,
        );
    }
}
