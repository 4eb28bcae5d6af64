//! Scenario construction, metrics and experiment I/O.

mod build;
pub mod config;
pub mod metrics;
mod report;
mod sweep;
pub mod topology;

pub use build::{build, Scenario, VcTarget};
pub use config::{ConfigError, ScenarioConfig, TopologyConfig};
pub use metrics::{emit_csv, parse_csv, IntervalRow, MetricsLog};
pub use report::{
    headline, mean_queue, run_scenario, trunk_utilization, Headline, HarnessError, RunReport, CONVERGED_FRACTION,
    STEADY_FRACTION,
};
pub use sweep::{expand, parse_param, run_sweep, SweepPoint};
pub use topology::{build_bottleneck, build_chain, build_figure3, build_parking_lot, Topology};
