use crate::engine::SimTime;
use crate::model::{RmPayload, VcId};

use super::osu::LoadMeter;

#[derive(Clone, Debug, PartialEq)]
pub struct CapcSwitchState {
    pub fair_share: f64,
    pub rup: f64,
    pub rdn: f64,
    pub eru: f64,
    pub erf: f64,
    pub queue_threshold: usize,
    pub meter: LoadMeter,
}

impl CapcSwitchState {
    /// Starts from an even split of the target among `vcs` circuits.
    pub fn new(target_rate: f64, interval: SimTime, vcs: usize, queue_threshold: usize) -> Self {
        CapcSwitchState {
            fair_share: target_rate / vcs.max(1) as f64,
            rup: 0.06,
            rdn: 0.5,
            eru: 1.5,
            erf: 0.5,
            queue_threshold,
            meter: LoadMeter::new(target_rate, interval),
        }
    }

    /// Proportional fair-share adjustment for load factor `z`.
    pub fn update(&mut self, z: f64) {
        let factor = if z < 1.0 {
            self.eru.min(1.0 + (1.0 - z) * self.rup)
        } else {
            self.erf.max(1.0 - (z - 1.0) * self.rdn)
        };
        self.fair_share *= factor;
    }

    pub fn on_cell(&mut self, vc: VcId) {
        self.meter.count(vc);
    }

    pub fn interval_update(&mut self, elapsed: SimTime) {
        self.meter.close(elapsed);
        if let Some(z) = self.meter.z {
            self.update(z);
        }
    }

    pub fn on_rm(&self, queue_len: usize, rm: &mut RmPayload) {
        rm.bound_er(self.fair_share);
        if queue_len > self.queue_threshold {
            rm.ci = true;
        }
    }
}
