use abrsim::engine::SimTime;
use abrsim::harness::{run_scenario, trunk_utilization, ScenarioConfig};
use abrsim::model::Rate;

fn config(text: &str) -> ScenarioConfig {
    ScenarioConfig::from_toml(text).unwrap()
}

#[test]
fn single_vc_fills_the_link_after_one_round_trip() {
    let cfg = config(
        r#"
scheme = "credit_static"
duration_ms = 20
metric_interval_us = 500

[topology]
kind = "bottleneck"
vcs = 1
link_delay_us = 1000
"#,
    );
    let report = run_scenario(&cfg).unwrap();
    let link = Rate::from_mbps(150.0).as_f64();
    // Round trip of the trunk plus both access links, with margin.
    let u = trunk_utilization(&report.log, 0, link, SimTime(3_000)).unwrap();
    assert!(u >= 0.99, "utilization {u}");
    assert_eq!(report.headline.total_loss, 0);
}

#[test]
fn lost_cells_are_recovered_by_resync() {
    let cfg = config(
        r#"
scheme = "credit_static"
duration_ms = 200
seed = 4

[topology]
kind = "bottleneck"
vcs = 2

[credit]
resync_round_trips = 10

[faults]
link_loss_probability = 0.01
"#,
    );
    let report = run_scenario(&cfg).unwrap();
    let log = &report.log;
    assert!(log.total_dropped() > 0);
    assert!(log.conservation_violations.is_empty());
    // Without reissued credit the window would drain within a few
    // hundred lost cells; traffic keeps flowing to the end instead.
    let last = log.rows.iter().filter(|r| r.time == log.end.0).map(|r| r.throughput).sum::<f64>();
    assert!(last > 100.0, "aggregate in the last interval {last}");
}

#[test]
fn adaptive_newcomer_waits_for_a_reallocation() {
    let cfg = config(
        r#"
scheme = "credit_adaptive"
duration_ms = 40
metric_interval_us = 100

[topology]
kind = "bottleneck"
vcs = 2

[[vc]]
id = 2
start_ms = 20
"#,
    );
    let report = run_scenario(&cfg).unwrap();
    // Trunk round trip plus the access hops.
    let round_trip = 2 * (100 + 2 * abrsim::engine::ACCESS_DELAY.0);
    let period = cfg.credit.realloc_round_trips * round_trip;
    let t90 = report.headline.time_to_90[1].expect("vc 2 converges");
    assert!(t90.0 >= period, "reached 90% after {} us, period {period} us", t90.0);
    let steady = &report.headline.steady_throughput;
    assert!((steady[0] - steady[1]).abs() < 0.1 * steady[0], "{steady:?}");
}

#[test]
fn static_credits_share_a_bottleneck_evenly() {
    let cfg = config(
        r#"
scheme = "credit_static"
duration_ms = 100

[topology]
kind = "figure3"
"#,
    );
    let report = run_scenario(&cfg).unwrap();
    assert_eq!(report.headline.total_loss, 0);
    assert!(report.headline.steady_fairness.unwrap() > 0.95, "{:?}", report.headline);
}
