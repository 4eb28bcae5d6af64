//! Generic cell rate algorithm in virtual-scheduling form.
//!
//! The state is a theoretical arrival time (TAT). A cell arriving at `t`
//! conforms iff `t >= TAT - limit`; a conforming cell pushes the TAT to
//! `max(t, TAT) + increment`. Times are held in integer units of
//! `1 / scale` microseconds so that increments like `1/PCR` stay exact.

use crate::engine::SimTime;
use crate::model::{Cell, Rate, TrafficContract};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Conformance {
    Conforming,
    NonConforming,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GcraState {
    scale: u128,
    increment: u128,
    limit: u128,
    tat: u128,
}

impl GcraState {
    /// GCRA(increment, limit) with whole-tick parameters.
    pub fn new(increment: SimTime, limit: SimTime) -> Self {
        GcraState {
            scale: 1,
            increment: increment.0 as u128,
            limit: limit.0 as u128,
            tat: 0,
        }
    }

    /// GCRA(1/rate, limit) with the increment kept exact.
    pub fn for_rate(rate: Rate, limit: SimTime) -> Self {
        assert!(!rate.is_zero(), "GCRA needs a positive rate");
        let (increment, scale) = rate.interval_micros();
        GcraState {
            scale,
            increment,
            limit: limit.0 as u128 * scale,
            tat: 0,
        }
    }

    /// Theoretical arrival time in microseconds.
    pub fn tat_micros(&self) -> f64 {
        self.tat as f64 / self.scale as f64
    }

    pub fn conforms(&self, arrival: SimTime) -> bool {
        arrival.0 as u128 * self.scale + self.limit >= self.tat
    }

    /// Tests `arrival` and updates the TAT when it conforms.
    pub fn check(&mut self, arrival: SimTime) -> Conformance {
        if self.conforms(arrival) {
            self.commit(arrival);
            Conformance::Conforming
        } else {
            Conformance::NonConforming
        }
    }

    fn commit(&mut self, arrival: SimTime) {
        self.tat = self.tat.max(arrival.0 as u128 * self.scale) + self.increment;
    }
}

pub fn gcra_check(state: &mut GcraState, arrival: SimTime) -> Conformance {
    state.check(arrival)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NonConformingAction {
    Drop,
    TagClp,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoliceVerdict {
    Admit,
    AdmitTagged,
    Reject,
}

/// Usage parameter control at network entry: GCRA(1/PCR, CDVT), plus
/// GCRA(1/SCR, BT) when the contract has a sustained rate.
#[derive(Clone, Debug)]
pub struct Policer {
    peak: GcraState,
    sustained: Option<GcraState>,
    action: NonConformingAction,
}

impl Policer {
    pub fn new(contract: &TrafficContract, action: NonConformingAction) -> Self {
        Policer {
            peak: GcraState::for_rate(contract.pcr, contract.cdvt),
            sustained: contract.scr.map(|scr| GcraState::for_rate(scr, contract.bt)),
            action,
        }
    }

    /// Buckets only advance for fully conforming cells.
    pub fn police(&mut self, cell: &mut Cell, arrival: SimTime) -> PoliceVerdict {
        let ok = self.peak.conforms(arrival)
            && self.sustained.as_ref().is_none_or(|s| s.conforms(arrival));
        if ok {
            self.peak.commit(arrival);
            if let Some(s) = self.sustained.as_mut() {
                s.commit(arrival);
            }
            return PoliceVerdict::Admit;
        }
        match self.action {
            NonConformingAction::Drop => PoliceVerdict::Reject,
            NonConformingAction::TagClp => {
                cell.clp = true;
                PoliceVerdict::AdmitTagged
            }
        }
    }
}
