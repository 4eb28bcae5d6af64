//! Rate-based feedback: end-system rules and switch algorithms.
//!
//! Switch state lives at each forward output port. Forward cells update it
//! as they join the port's queue; backward RM cells of the same vc read it
//! when they pass the switch on their way back to the source.

mod becn;
mod capc;
mod eprca;
mod osu;
mod source;

use serde::{Deserialize, Serialize};

use crate::engine::SimTime;
use crate::model::{Cell, RmPayload, VcId};

pub use becn::BecnSwitchState;
pub use capc::CapcSwitchState;
pub use eprca::{CongestionDetector, DetectorKind, EfciSwitch, EprcaSwitchState};
pub use osu::{BandRule, LoadMeter, OsuMode, OsuSwitchState, RateSource};
pub use source::{destination_turnaround, BecnSource, SourceState};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeKind {
    EfciPrca,
    Eprca,
    Osu,
    OsuCount,
    Capc,
    Becn,
    CreditStatic,
    CreditAdaptive,
}

impl SchemeKind {
    pub const ALL: [SchemeKind; 8] = [
        SchemeKind::EfciPrca,
        SchemeKind::Eprca,
        SchemeKind::Osu,
        SchemeKind::OsuCount,
        SchemeKind::Capc,
        SchemeKind::Becn,
        SchemeKind::CreditStatic,
        SchemeKind::CreditAdaptive,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            SchemeKind::EfciPrca => "efci_prca",
            SchemeKind::Eprca => "eprca",
            SchemeKind::Osu => "osu",
            SchemeKind::OsuCount => "osu_count",
            SchemeKind::Capc => "capc",
            SchemeKind::Becn => "becn",
            SchemeKind::CreditStatic => "credit_static",
            SchemeKind::CreditAdaptive => "credit_adaptive",
        }
    }

    pub fn is_credit(&self) -> bool {
        matches!(self, SchemeKind::CreditStatic | SchemeKind::CreditAdaptive)
    }

    /// Sources set their rate straight from the returned ER.
    pub fn is_explicit_rate(&self) -> bool {
        matches!(self, SchemeKind::Osu | SchemeKind::OsuCount | SchemeKind::Capc)
    }

    /// Sources emit forward RM cells.
    pub fn uses_rm_cells(&self) -> bool {
        !self.is_credit() && *self != SchemeKind::Becn
    }
}

impl std::fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Switch algorithm attached to one output port.
#[derive(Clone, Debug, PartialEq)]
pub enum PortControl {
    Passive,
    Efci(EfciSwitch),
    Eprca(EprcaSwitchState),
    Osu(OsuSwitchState),
    Capc(CapcSwitchState),
    Becn(BecnSwitchState),
}

impl PortControl {
    /// A forward cell joins a queue currently holding `queue_len` cells.
    /// Returns a backward notification cell if the algorithm emits one.
    pub fn on_forward(&mut self, cell: &mut Cell, queue_len: usize, now: SimTime) -> Option<Cell> {
        match self {
            PortControl::Passive => {}
            PortControl::Efci(s) if cell.is_data() => s.on_forward_data(queue_len, cell),
            PortControl::Eprca(s) if cell.is_data() => s.on_forward_data(queue_len, cell),
            PortControl::Efci(_) | PortControl::Eprca(_) => {}
            PortControl::Osu(s) => s.on_cell(cell.vc),
            PortControl::Capc(s) => s.on_cell(cell.vc),
            PortControl::Becn(s) => return s.on_data(queue_len, cell, now),
        }
        None
    }

    /// A backward RM cell of `vc` passes the switch owning this port.
    pub fn on_backward_rm(&mut self, vc: VcId, rm: &mut RmPayload, queue_len: usize) {
        match self {
            PortControl::Eprca(s) => s.on_backward_rm(queue_len, rm),
            PortControl::Osu(s) => {
                let rate = s.vc_rate(vc, rm);
                s.feedback(rm, rate);
            }
            PortControl::Capc(s) => s.on_rm(queue_len, rm),
            _ => {}
        }
    }

    pub fn interval(&self) -> Option<SimTime> {
        match self {
            PortControl::Osu(s) => Some(s.meter.interval),
            PortControl::Capc(s) => Some(s.meter.interval),
            _ => None,
        }
    }

    pub fn on_interval(&mut self, elapsed: SimTime) {
        match self {
            PortControl::Osu(s) => s.interval_update(elapsed),
            PortControl::Capc(s) => s.interval_update(elapsed),
            _ => {}
        }
    }

    pub fn load_factor(&self) -> Option<f64> {
        match self {
            PortControl::Osu(s) => s.meter.z,
            PortControl::Capc(s) => s.meter.z,
            _ => None,
        }
    }

    /// Current fair-share estimate, for schemes that keep one.
    pub fn fair_share(&self) -> Option<f64> {
        match self {
            PortControl::Eprca(s) => Some(s.fair_share()),
            PortControl::Osu(s) => Some(s.fair_share),
            PortControl::Capc(s) => Some(s.fair_share),
            _ => None,
        }
    }
}
