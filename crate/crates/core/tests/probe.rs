// scratch probe for bench tuning; run with --ignored --nocapture
use plan_core::bench::run_bench;
use plan_core::config::Config;

#[test]
#[ignore]
fn probe_bench_trend() {
    let mut cfg = Config::default();
    cfg.bench.episodes_per_family = 50;
    let t0 = std::time::Instant::now();
    let result = run_bench(&cfg, None);
    println!("elapsed: {:?}", t0.elapsed());
    for s in &result.summaries {
        println!(
            "{:<22} alpha={:<4} collision={:.3} success={:.3} completion={:.3} speed={:.2} comfort={:.2}",
            s.name,
            s.alpha,
            s.metrics.collision_rate,
            s.metrics.success_rate,
            s.metrics.mean_completion,
            s.metrics.mean_avg_speed,
            s.metrics.mean_comfort
        );
    }
    // per-family breakdown
    for family in plan_core::bench::FAMILIES {
        for variant in ["parallel", "cascaded", "cascaded_augment", "cascaded_alpha_0.3"] {
            let rows: Vec<_> = result
                .rows
                .iter()
                .filter(|r| r.variant == variant && r.scenario.starts_with(family))
                .collect();
            if rows.is_empty() {
                continue;
            }
            let coll = rows.iter().filter(|r| r.metrics.collided).count();
            let succ = rows.iter().filter(|r| r.metrics.success).count();
            println!("{family:<12} {variant:<22} coll {coll}/{} succ {succ}/{}", rows.len(), rows.len());
        }
    }
}
