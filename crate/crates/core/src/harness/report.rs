use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::engine::{EngineError, SimTime, Simulation};
use crate::fairness::fairness_index;

use super::build::{build, VcTarget};
use super::config::{ConfigError, ScenarioConfig};
use super::metrics::{emit_csv, CsvError, IntervalRow, MetricsLog, CDV_ALPHA};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("simulation failed: {0}")]
    Engine(#[from] EngineError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] CsvError),
}

/// Fraction of the run, at its end, treated as steady state.
pub const STEADY_FRACTION: f64 = 0.25;

/// Share of the target rate a vc must reach to count as converged.
pub const CONVERGED_FRACTION: f64 = 0.9;

/// Summary numbers, each recomputable from the CSV rows plus the targets.
#[derive(Clone, Debug, PartialEq)]
pub struct Headline {
    /// Fairness index of the steady-state mean throughputs against the
    /// max-min allocation.
    pub steady_fairness: Option<f64>,
    /// Mean throughput per vc over the steady-state window, Mbit/s.
    pub steady_throughput: Vec<f64>,
    pub total_loss: u64,
    pub max_queue: usize,
    /// Time from a vc's start until an interval's throughput first reaches
    /// 90% of its target.
    pub time_to_90: Vec<Option<SimTime>>,
}

pub fn headline(rows: &[IntervalRow], targets: &[VcTarget], end: SimTime) -> Headline {
    let cutoff = end.0 as f64 * (1.0 - STEADY_FRACTION);
    let steady_throughput: Vec<f64> = targets
        .iter()
        .map(|t| {
            let xs: Vec<f64> = rows
                .iter()
                .filter(|r| r.vc == t.vc.0 && r.time as f64 > cutoff)
                .map(|r| r.throughput)
                .collect();
            if xs.is_empty() {
                0.0
            } else {
                xs.iter().sum::<f64>() / xs.len() as f64
            }
        })
        .collect();
    let optimal: Vec<f64> = targets.iter().map(|t| t.oracle_mbps).collect();
    let steady_fairness = if !targets.is_empty() && optimal.iter().all(|&o| o > 0.0) {
        fairness_index(&steady_throughput, &optimal).ok()
    } else {
        None
    };
    let time_to_90 = targets
        .iter()
        .map(|t| {
            rows.iter()
                .filter(|r| r.vc == t.vc.0 && r.time > t.start.0)
                .find(|r| r.throughput >= CONVERGED_FRACTION * t.target_mbps)
                .map(|r| SimTime(r.time - t.start.0))
        })
        .collect();
    Headline {
        steady_fairness,
        steady_throughput,
        total_loss: rows.iter().map(|r| r.dropped).sum(),
        max_queue: rows.iter().map(|r| r.queue_max).max().unwrap_or(0),
        time_to_90,
    }
}

/// Fraction of a trunk's capacity used between `from` and the end of the
/// log, from the port's departure counts.
pub fn trunk_utilization(log: &MetricsLog, trunk: usize, link_cells_per_sec: f64, from: SimTime) -> Option<f64> {
    let mut cells = 0u64;
    let mut first = None;
    let mut last = None;
    let mut prev = SimTime::ZERO;
    for s in log.ports.iter().filter(|s| s.trunk == trunk) {
        if prev >= from {
            cells += s.departures;
            first.get_or_insert(prev);
            last = Some(s.time);
        }
        prev = s.time;
    }
    let span = last?.0.checked_sub(first?.0)?;
    (span > 0).then(|| cells as f64 / (span as f64 * 1e-6 * link_cells_per_sec))
}

/// Time-averaged occupancy of a trunk port from `from` to the end.
pub fn mean_queue(log: &MetricsLog, trunk: usize, from: SimTime) -> Option<f64> {
    let mut prev = SimTime::ZERO;
    let mut area = 0.0;
    let mut span = 0u64;
    for s in log.ports.iter().filter(|s| s.trunk == trunk) {
        if prev >= from {
            let dt = (s.time - prev).0;
            area += s.mean * dt as f64;
            span += dt;
        }
        prev = s.time;
    }
    (span > 0).then(|| area / span as f64)
}

#[derive(Clone, Debug)]
pub struct RunReport {
    pub config: ScenarioConfig,
    pub targets: Vec<VcTarget>,
    pub headline: Headline,
    pub log: MetricsLog,
}

pub fn run_scenario(config: &ScenarioConfig) -> Result<RunReport, HarnessError> {
    let scenario = build(config)?;
    let mut sim = Simulation::new(scenario.spec)?;
    let end = SimTime((config.duration_ms * 1e3).round() as u64);
    sim.run_until(end)?;
    let log = sim.into_log();
    let headline = headline(&log.rows, &scenario.targets, log.end);
    Ok(RunReport {
        config: config.clone(),
        targets: scenario.targets,
        headline,
        log,
    })
}

fn opt<T: std::fmt::Display>(x: Option<T>) -> String {
    x.map_or_else(|| "-".to_string(), |v| v.to_string())
}

impl RunReport {
    pub fn csv(&self) -> Result<String, HarnessError> {
        let mut buf = Vec::new();
        emit_csv(&self.log, &mut buf)?;
        Ok(String::from_utf8(buf).expect("csv is utf-8"))
    }

    pub fn render(&self) -> String {
        let h = &self.headline;
        let mut s = String::new();
        let _ = writeln!(s, "scheme: {}", self.config.scheme);
        let _ = writeln!(s, "duration_us: {}", self.log.end.0);
        let _ = writeln!(s, "steady_fairness_index: {}", opt(h.steady_fairness.map(|f| format!("{f:.4}"))));
        let _ = writeln!(s, "total_loss: {}", h.total_loss);
        let _ = writeln!(s, "max_queue: {}", h.max_queue);
        let c = &self.log.final_count;
        let _ = writeln!(
            s,
            "conservation: {} checks, {} violations (created {}, absorbed {}, dropped {}, queued {}, in transit {})",
            self.log.conservation_checks,
            self.log.conservation_violations.len(),
            c.created,
            c.absorbed,
            c.dropped,
            c.queued,
            c.in_transit
        );
        let _ = writeln!(s);
        let _ = writeln!(
            s,
            "{:>4} {:>8} {:>9} {:>9} {:>9} {:>10} {:>10} {:>10} {:>8} {:>8} {:>10}",
            "vc", "start_us", "oracle", "target", "steady", "t90_us", "clr0", "clr1", "ctd_mean", "cdv", "burst_resp"
        );
        for (i, t) in self.targets.iter().enumerate() {
            let tot = &self.log.totals[i];
            let _ = writeln!(
                s,
                "{:>4} {:>8} {:>9.3} {:>9.3} {:>9.3} {:>10} {:>10} {:>10} {:>8} {:>8} {:>10}",
                t.vc,
                t.start.0,
                t.oracle_mbps,
                t.target_mbps,
                h.steady_throughput[i],
                opt(h.time_to_90[i].map(|x| x.0)),
                opt(tot.clr(false).map(|x| format!("{x:.2e}"))),
                opt(tot.clr(true).map(|x| format!("{x:.2e}"))),
                opt(tot.ctd_mean().map(|x| format!("{x:.1}"))),
                opt(tot.cdv(CDV_ALPHA)),
                opt(tot.mean_burst_response().map(|x| format!("{x:.0}"))),
            );
        }
        let _ = writeln!(s);
        let _ = writeln!(s, "# configuration");
        s.push_str(&self.config.to_toml());
        s
    }

    /// Writes `report.txt` and `metrics.csv` into `dir`, creating it.
    pub fn write_to(&self, dir: &Path) -> Result<(), HarnessError> {
        let io = |path: &Path| {
            let path = path.display().to_string();
            move |source| HarnessError::Io { path, source }
        };
        std::fs::create_dir_all(dir).map_err(io(dir))?;
        let report = dir.join("report.txt");
        std::fs::write(&report, self.render()).map_err(io(&report))?;
        let csv = dir.join("metrics.csv");
        std::fs::write(&csv, self.csv()?).map_err(io(&csv))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::VcId;

    fn row(time: u64, vc: u32, throughput: f64, dropped: u64, queue_max: usize) -> IntervalRow {
        IntervalRow {
            time,
            vc,
            throughput,
            acr: 0.0,
            queue_max,
            dropped,
            efci_fraction: 0.0,
            fairness_index: None,
        }
    }

    fn target(vc: u32, start: u64, mbps: f64) -> VcTarget {
        VcTarget {
            vc: VcId(vc),
            start: SimTime(start),
            oracle_mbps: mbps,
            target_mbps: mbps,
        }
    }

    #[test]
    fn headline_from_rows() {
        let rows = vec![
            row(10, 1, 10.0, 1, 4),
            row(10, 2, 0.0, 0, 4),
            row(20, 1, 50.0, 0, 9),
            row(20, 2, 30.0, 2, 9),
            row(30, 1, 50.0, 0, 2),
            row(30, 2, 50.0, 0, 2),
            row(40, 1, 50.0, 0, 2),
            row(40, 2, 50.0, 0, 2),
        ];
        let targets = [target(1, 0, 50.0), target(2, 10, 50.0)];
        let h = headline(&rows, &targets, SimTime(40));
        assert_eq!(h.total_loss, 3);
        assert_eq!(h.max_queue, 9);
        assert_eq!(h.steady_throughput, vec![50.0, 50.0]);
        assert_eq!(h.steady_fairness, Some(1.0));
        assert_eq!(h.time_to_90, vec![Some(SimTime(20)), Some(SimTime(20))]);
    }

    #[test]
    fn unreached_target_has_no_time() {
        let rows = vec![row(10, 1, 1.0, 0, 0)];
        let h = headline(&rows, &[target(1, 0, 50.0)], SimTime(10));
        assert_eq!(h.time_to_90, vec![None]);
    }
}
