use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::engine::SimTime;
use crate::model::VcId;

/// Bumped whenever the CSV columns change.
pub const CSV_VERSION: u32 = 1;

pub const CSV_COLUMNS: [&str; 8] = [
    "time",
    "vc",
    "throughput",
    "acr",
    "queue_max",
    "dropped",
    "efci_fraction",
    "fairness_index",
];

/// CDV percentile parameter: peak-to-peak CDV is the `1 - α` quantile of
/// transfer delay minus its minimum.
pub const CDV_ALPHA: f64 = 0.01;

/// One metrics-interval sample for one vc. Rates are Mbit/s; `time` is the
/// end of the interval in microseconds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntervalRow {
    pub time: u64,
    pub vc: u32,
    /// Cells of the vc (data and forward RM) delivered to its destination.
    pub throughput: f64,
    pub acr: f64,
    /// Largest queue on the vc's switch output ports.
    pub queue_max: usize,
    pub dropped: u64,
    pub efci_fraction: f64,
    pub fairness_index: Option<f64>,
}

/// Occupancy of one trunk output port over a metrics interval.
#[derive(Clone, Debug, PartialEq)]
pub struct PortSample {
    pub time: SimTime,
    pub trunk: usize,
    pub max: usize,
    /// Time-averaged occupancy in cells.
    pub mean: f64,
    pub arrivals: u64,
    pub departures: u64,
    pub load_factor: Option<f64>,
}

/// Whole-run counters of one vc.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct VcTotals {
    pub vc: VcId,
    pub start: SimTime,
    pub emitted_data: u64,
    pub emitted_rm: u64,
    pub delivered_data: u64,
    pub delivered_rm: u64,
    pub efci_marked: u64,
    /// Indexed by CLP bit.
    pub delivered_by_clp: [u64; 2],
    pub dropped_by_clp: [u64; 2],
    pub policed: u64,
    /// Transfer delay of every delivered data cell, in microseconds.
    pub delays: Vec<u64>,
    /// First cell sent to last cell delivered, per completed burst.
    pub burst_responses: Vec<SimTime>,
}

impl VcTotals {
    pub fn dropped(&self) -> u64 {
        self.dropped_by_clp[0] + self.dropped_by_clp[1]
    }

    /// Cell loss ratio of data cells with the given CLP bit.
    pub fn clr(&self, clp: bool) -> Option<f64> {
        let i = clp as usize;
        let total = self.delivered_by_clp[i] + self.dropped_by_clp[i];
        (total > 0).then(|| self.dropped_by_clp[i] as f64 / total as f64)
    }

    pub fn ctd_mean(&self) -> Option<f64> {
        (!self.delays.is_empty()).then(|| self.delays.iter().sum::<u64>() as f64 / self.delays.len() as f64)
    }

    pub fn ctd_max(&self) -> Option<u64> {
        self.delays.iter().copied().max()
    }

    /// Peak-to-peak delay variation at percentile parameter `alpha`.
    pub fn cdv(&self, alpha: f64) -> Option<u64> {
        if self.delays.is_empty() {
            return None;
        }
        let mut d = self.delays.clone();
        d.sort_unstable();
        let k = (((1.0 - alpha) * d.len() as f64).ceil() as usize).clamp(1, d.len()) - 1;
        Some(d[k] - d[0])
    }

    pub fn mean_burst_response(&self) -> Option<f64> {
        let n = self.burst_responses.len();
        (n > 0).then(|| self.burst_responses.iter().map(|t| t.0 as f64).sum::<f64>() / n as f64)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Conservation {
    pub created: u64,
    pub absorbed: u64,
    pub dropped: u64,
    pub queued: u64,
    pub in_transit: u64,
}

impl Conservation {
    pub fn holds(&self) -> bool {
        self.created == self.absorbed + self.dropped + self.queued + self.in_transit
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsLog {
    pub interval: SimTime,
    pub end: SimTime,
    /// Max-min rates in Mbit/s, in vc order.
    pub oracle: Option<Vec<f64>>,
    pub rows: Vec<IntervalRow>,
    pub ports: Vec<PortSample>,
    pub totals: Vec<VcTotals>,
    pub conservation_checks: u64,
    /// Times at which the cell count did not balance.
    pub conservation_violations: Vec<SimTime>,
    pub final_count: Conservation,
}

impl MetricsLog {
    pub fn vcs(&self) -> impl Iterator<Item = VcId> + '_ {
        self.totals.iter().map(|t| t.vc)
    }

    pub fn total_dropped(&self) -> u64 {
        self.totals.iter().map(VcTotals::dropped).sum()
    }

    pub fn rows_for(&self, vc: VcId) -> impl Iterator<Item = &IntervalRow> {
        self.rows.iter().filter(move |r| r.vc == vc.0)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CsvError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("unexpected header {0:?}")]
    Header(Vec<String>),
}

/// Writes the header and one row per interval and vc. Floats use the
/// shortest representation that reads back to the same value.
pub fn emit_csv<W: Write>(log: &MetricsLog, out: W) -> Result<(), CsvError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(CSV_COLUMNS)?;
    for r in &log.rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn parse_csv<R: Read>(input: R) -> Result<Vec<IntervalRow>, CsvError> {
    let mut rd = csv::Reader::from_reader(input);
    let header: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
    if header != CSV_COLUMNS {
        return Err(CsvError::Header(header));
    }
    Ok(rd.deserialize().collect::<Result<_, _>>()?)
}
