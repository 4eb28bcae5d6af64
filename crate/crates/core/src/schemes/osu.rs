use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::engine::SimTime;
use crate::model::{RmPayload, VcId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OsuMode {
    /// Band feedback around the target load.
    Interval,
    /// Vcs below the fair share may always come up to it.
    CountBased,
}

/// Divisors used inside the target band.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandRule {
    /// Sources above the fair share divide by `z/(1-Δ)` (a decrease),
    /// those below by `z/(1+Δ)` (an increase).
    Converging,
    /// Above the fair share divide by `z/(1+Δ)`, below by `z/(1-Δ)`.
    AsPrinted,
}

/// Where the per-vc rate used in the feedback comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateSource {
    /// The CCR the source wrote into its RM cell.
    Ccr,
    /// Cells of the vc counted at the port over the last interval.
    Metered,
}

/// Input-rate measurement over fixed intervals, shared by OSU and CAPC.
#[derive(Clone, Debug, PartialEq)]
pub struct LoadMeter {
    pub target_rate: f64,
    pub interval: SimTime,
    cells: u64,
    per_vc: BTreeMap<VcId, u64>,
    /// Load factor of the last completed interval; `None` before the first.
    pub z: Option<f64>,
    pub active_vcs: usize,
    pub last_rates: BTreeMap<VcId, f64>,
}

impl LoadMeter {
    pub fn new(target_rate: f64, interval: SimTime) -> Self {
        LoadMeter {
            target_rate,
            interval,
            cells: 0,
            per_vc: BTreeMap::new(),
            z: None,
            active_vcs: 0,
            last_rates: BTreeMap::new(),
        }
    }

    pub fn count(&mut self, vc: VcId) {
        self.cells += 1;
        *self.per_vc.entry(vc).or_default() += 1;
    }

    /// Input rate over an interval of `elapsed`, in cells per second.
    pub fn close(&mut self, elapsed: SimTime) -> f64 {
        let secs = elapsed.as_secs_f64().max(1e-9);
        let rate = self.cells as f64 / secs;
        self.z = Some(rate / self.target_rate);
        self.active_vcs = self.per_vc.len();
        self.last_rates = self.per_vc.iter().map(|(v, c)| (*v, *c as f64 / secs)).collect();
        self.cells = 0;
        self.per_vc.clear();
        rate
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OsuSwitchState {
    pub meter: LoadMeter,
    pub delta: f64,
    pub mode: OsuMode,
    pub band_rule: BandRule,
    pub rate_source: RateSource,
    pub fair_share: f64,
}

impl OsuSwitchState {
    pub fn new(target_rate: f64, interval: SimTime, delta: f64, mode: OsuMode) -> Self {
        OsuSwitchState {
            meter: LoadMeter::new(target_rate, interval),
            delta,
            mode,
            band_rule: BandRule::Converging,
            rate_source: RateSource::Ccr,
            fair_share: target_rate,
        }
    }

    pub fn z(&self) -> Option<f64> {
        self.meter.z
    }

    pub fn on_cell(&mut self, vc: VcId) {
        self.meter.count(vc);
    }

    /// Closes a measurement interval: new load factor and fair share.
    pub fn interval_update(&mut self, elapsed: SimTime) {
        self.meter.close(elapsed);
        self.fair_share = self.meter.target_rate / self.meter.active_vcs.max(1) as f64;
    }

    /// Rate of `vc` as used by the feedback rule.
    pub fn vc_rate(&self, vc: VcId, rm: &RmPayload) -> f64 {
        match self.rate_source {
            RateSource::Ccr => rm.ccr,
            RateSource::Metered => self.meter.last_rates.get(&vc).copied().unwrap_or(0.0),
        }
    }

    /// Bound on the rate of a vc currently sending at `vc_rate`.
    pub fn rate_bound(&self, vc_rate: f64) -> Option<f64> {
        let z = self.meter.z?;
        let d = self.delta;
        let scaled = |divisor: f64| if divisor > 0.0 { vc_rate / divisor } else { f64::INFINITY };
        let above = vc_rate > self.fair_share;
        Some(match self.mode {
            OsuMode::CountBased => {
                if above {
                    scaled(z)
                } else {
                    scaled(z).max(self.fair_share)
                }
            }
            OsuMode::Interval if z < 1.0 - d || z > 1.0 + d => scaled(z),
            OsuMode::Interval => {
                let (over, under) = match self.band_rule {
                    BandRule::Converging => (z / (1.0 - d), z / (1.0 + d)),
                    BandRule::AsPrinted => (z / (1.0 + d), z / (1.0 - d)),
                };
                scaled(if above { over } else { under })
            }
        })
    }

    pub fn feedback(&self, rm: &mut RmPayload, vc_rate: f64) {
        if let Some(bound) = self.rate_bound(vc_rate) {
            rm.bound_er(bound);
        }
    }
}
