use crate::engine::SimTime;
use crate::model::{Direction, RmPayload, TrafficContract};

/// End-system rate state of an ABR source. Rates are cells per second.
///
/// Explicit-rate schemes run the same rules with `air = pcr` and
/// `rdf = 1`, which makes a returning RM cell set the rate to its ER.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SourceState {
    pub acr: f64,
    pub pcr: f64,
    pub mcr: f64,
    pub air: f64,
    pub rdf: f64,
    pub nrm: u32,
    pub data_since_rm: u32,
}

impl SourceState {
    pub fn new(contract: &TrafficContract, initial_acr: f64, air: f64, rdf: f64, nrm: u32) -> Self {
        let pcr = contract.pcr.as_f64();
        let mcr = contract.mcr.as_f64();
        SourceState {
            acr: initial_acr.clamp(mcr, pcr),
            pcr,
            mcr,
            air,
            rdf,
            nrm: nrm.max(1),
            data_since_rm: 0,
        }
    }

    /// Applies the per-cell decrease. Returns true when a forward RM cell
    /// is due.
    pub fn on_data_sent(&mut self) -> bool {
        self.acr = (self.acr * self.rdf).max(self.mcr);
        self.data_since_rm += 1;
        if self.data_since_rm >= self.nrm {
            self.data_since_rm = 0;
            true
        } else {
            false
        }
    }

    /// Additive increase unless CI is set; ER always binds.
    pub fn on_backward_rm(&mut self, rm: &RmPayload) {
        debug_assert_eq!(rm.direction, Direction::Backward);
        let target = if rm.ci {
            self.acr.min(rm.er)
        } else {
            (self.acr + self.air).min(rm.er).min(self.pcr)
        };
        self.acr = target.max(self.mcr).min(self.pcr);
    }
}

/// The destination returns a forward RM cell, setting CI if the last data
/// cell it saw carried EFCI.
pub fn destination_turnaround(last_data_efci: bool, rm: RmPayload) -> RmPayload {
    debug_assert_eq!(rm.direction, Direction::Forward);
    RmPayload {
        direction: Direction::Backward,
        ci: rm.ci || last_data_efci,
        ..rm
    }
}

/// Rate recovery of a source under backward notification: halve on each
/// notification, double after every quiet recovery period. The period
/// scales with the current rate, so slow sources recover sooner.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BecnSource {
    /// Recovery period at peak rate.
    pub base_period: SimTime,
    pub last_change: SimTime,
}

impl BecnSource {
    pub fn new(base_period: SimTime) -> Self {
        BecnSource {
            base_period,
            last_change: SimTime::ZERO,
        }
    }

    pub fn recovery_period(&self, acr: f64, pcr: f64) -> SimTime {
        SimTime(((self.base_period.0 as f64 * acr / pcr).ceil() as u64).max(1))
    }

    pub fn on_notification(&mut self, s: &mut SourceState, now: SimTime) {
        s.acr = (s.acr / 2.0).max(s.mcr);
        self.last_change = now;
    }

    /// Doubles the rate for each full quiet period since the last change.
    pub fn recover(&mut self, s: &mut SourceState, now: SimTime) {
        while s.acr < s.pcr {
            let due = self.last_change + self.recovery_period(s.acr, s.pcr);
            if now < due {
                break;
            }
            s.acr = (s.acr * 2.0).min(s.pcr);
            self.last_change = due;
        }
    }
}
