use std::collections::BTreeMap;

use crate::engine::SimTime;
use crate::model::{Cell, CellKind, Direction, RmPayload, VcId};

/// Congested switch notifies sources directly with backward RM cells,
/// at most one per vc per `spacing`.
#[derive(Clone, Debug, PartialEq)]
pub struct BecnSwitchState {
    pub queue_threshold: usize,
    /// Minimum time between notifications to the same vc.
    pub spacing: BTreeMap<VcId, SimTime>,
    pub default_spacing: SimTime,
    last_sent: BTreeMap<VcId, SimTime>,
}

impl BecnSwitchState {
    pub fn new(queue_threshold: usize, default_spacing: SimTime) -> Self {
        BecnSwitchState {
            queue_threshold,
            spacing: BTreeMap::new(),
            default_spacing,
            last_sent: BTreeMap::new(),
        }
    }

    pub fn last_sent(&self, vc: VcId) -> Option<SimTime> {
        self.last_sent.get(&vc).copied()
    }

    /// Returns a notification for the source of `cell` when the queue is
    /// over threshold and the vc has not been notified recently.
    pub fn on_data(&mut self, queue_len: usize, cell: &Cell, now: SimTime) -> Option<Cell> {
        if !cell.is_data() || queue_len <= self.queue_threshold {
            return None;
        }
        let spacing = self.spacing.get(&cell.vc).copied().unwrap_or(self.default_spacing);
        if let Some(last) = self.last_sent.get(&cell.vc) {
            if now < *last + spacing {
                return None;
            }
        }
        self.last_sent.insert(cell.vc, now);
        Some(Cell {
            vc: cell.vc,
            kind: CellKind::Rm(RmPayload {
                direction: Direction::Backward,
                er: f64::INFINITY,
                ccr: 0.0,
                ci: true,
                reduced: false,
            }),
            efci: false,
            clp: false,
            eom: false,
            emitted_at: now,
            seq: 0,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn data(vc: u32) -> Cell {
        Cell::data(VcId(vc), 0, false, SimTime::ZERO)
    }

    #[test]
    fn quiet_queue_sends_nothing() {
        let mut st = BecnSwitchState::new(10, SimTime(100));
        assert!(st.on_data(10, &data(1), SimTime(0)).is_none());
    }

    #[test]
    fn notifications_are_spaced_per_vc() {
        let mut st = BecnSwitchState::new(10, SimTime(100));
        let n = st.on_data(11, &data(1), SimTime(0)).unwrap();
        assert_eq!(n.rm().unwrap().direction, Direction::Backward);
        assert!(n.rm().unwrap().ci);
        assert!(st.on_data(11, &data(1), SimTime(99)).is_none());
        assert!(st.on_data(11, &data(2), SimTime(99)).is_some());
        assert!(st.on_data(11, &data(1), SimTime(100)).is_some());
    }
}
