use std::collections::BTreeSet;

use crate::engine::{Admission, LinkItem, PortQueue, SimTime};
use crate::model::{Cell, VcId};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EpdVerdict {
    Enqueued,
    Dropped,
}

/// Early packet discard bookkeeping for one queue.
///
/// A vc enters discard mode only when the first cell of a new packet finds
/// the queue at or above the threshold; it then loses every data cell up to
/// and including the next end-of-message cell.
#[derive(Clone, Debug, Default)]
pub struct EpdState {
    threshold: usize,
    discarding: BTreeSet<VcId>,
    mid_packet: BTreeSet<VcId>,
}

impl EpdState {
    pub fn new(threshold: usize) -> Self {
        EpdState {
            threshold,
            ..Default::default()
        }
    }

    pub fn threshold(&self) -> usize {
        self.threshold
    }

    pub fn is_discarding(&self, vc: VcId) -> bool {
        self.discarding.contains(&vc)
    }

    /// Decides the fate of `cell` given the queue occupancy it would join.
    pub fn admit(&mut self, occupancy: usize, cell: &Cell) -> EpdVerdict {
        if !cell.is_data() {
            return EpdVerdict::Enqueued;
        }
        let vc = cell.vc;
        if self.discarding.contains(&vc) {
            if cell.eom {
                self.discarding.remove(&vc);
            }
            return EpdVerdict::Dropped;
        }
        let boundary = !self.mid_packet.contains(&vc);
        if boundary && occupancy >= self.threshold {
            if !cell.eom {
                self.discarding.insert(vc);
            }
            return EpdVerdict::Dropped;
        }
        if cell.eom {
            self.mid_packet.remove(&vc);
        } else {
            self.mid_packet.insert(vc);
        }
        EpdVerdict::Enqueued
    }
}

/// Applies EPD and then `queue`'s own admission to `cell`.
pub fn epd_enqueue(state: &mut EpdState, queue: &mut PortQueue, cell: Cell, now: SimTime) -> EpdVerdict {
    if state.admit(queue.len(), &cell) == EpdVerdict::Dropped {
        return EpdVerdict::Dropped;
    }
    match queue.push(LinkItem::Cell(cell), now) {
        Admission::Enqueued => EpdVerdict::Enqueued,
        Admission::Dropped(_) => EpdVerdict::Dropped,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{make_forward_rm, VcId};

    fn cell(vc: u32, seq: u64, eom: bool) -> Cell {
        Cell::data(VcId(vc), seq, eom, SimTime::ZERO)
    }

    #[test]
    fn below_threshold_enqueues() {
        let mut st = EpdState::new(5);
        assert_eq!(st.admit(4, &cell(1, 0, false)), EpdVerdict::Enqueued);
    }

    #[test]
    fn whole_packet_dropped_at_boundary() {
        let mut st = EpdState::new(5);
        let verdicts: Vec<_> = (0..4).map(|k| st.admit(9, &cell(1, k, k == 3))).collect();
        assert_eq!(verdicts, vec![EpdVerdict::Dropped; 4]);
        assert!(!st.is_discarding(VcId(1)));
        // Queue drained: the next packet goes through even mid-way back over.
        assert_eq!(st.admit(0, &cell(1, 4, false)), EpdVerdict::Enqueued);
        assert_eq!(st.admit(9, &cell(1, 5, true)), EpdVerdict::Enqueued);
    }

    #[test]
    fn packet_in_progress_is_not_truncated() {
        let mut st = EpdState::new(5);
        assert_eq!(st.admit(0, &cell(1, 0, false)), EpdVerdict::Enqueued);
        assert_eq!(st.admit(9, &cell(1, 1, false)), EpdVerdict::Enqueued);
        assert_eq!(st.admit(9, &cell(1, 2, true)), EpdVerdict::Enqueued);
        assert_eq!(st.admit(9, &cell(1, 3, false)), EpdVerdict::Dropped);
    }

    #[test]
    fn other_vc_unaffected() {
        // vc 2 started its packet before the queue filled; vc 1 did not.
        let mut st = EpdState::new(3);
        assert_eq!(st.admit(0, &cell(2, 0, false)), EpdVerdict::Enqueued);
        assert_eq!(st.admit(3, &cell(1, 0, false)), EpdVerdict::Dropped);
        assert_eq!(st.admit(3, &cell(2, 1, false)), EpdVerdict::Enqueued);
        assert_eq!(st.admit(3, &cell(1, 1, true)), EpdVerdict::Dropped);
        assert_eq!(st.admit(3, &cell(2, 2, true)), EpdVerdict::Enqueued);
    }

    #[test]
    fn rm_cells_bypass() {
        let mut st = EpdState::new(0);
        let rm = make_forward_rm(VcId(1), 1.0, 2.0);
        assert_eq!(st.admit(100, &rm), EpdVerdict::Enqueued);
    }

    #[test]
    fn enqueue_respects_capacity() {
        use crate::engine::DropPolicy;
        let mut st = EpdState::new(10);
        let mut q = PortQueue::new(Some(1), DropPolicy::TailDrop);
        assert_eq!(epd_enqueue(&mut st, &mut q, cell(1, 0, false), SimTime(0)), EpdVerdict::Enqueued);
        assert_eq!(epd_enqueue(&mut st, &mut q, cell(1, 1, true), SimTime(0)), EpdVerdict::Dropped);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            /// Whatever the occupancy sequence, every vc's accepted stream
            /// consists of whole packets only.
            #[test]
            fn accepted_packets_are_whole(
                steps in proptest::collection::vec((0u32..3, 0usize..20), 1..300),
                packet_len in 1u64..6,
            ) {
                let mut st = EpdState::new(10);
                let mut seq = [0u64; 3];
                let mut accepted: Vec<Vec<u64>> = vec![Vec::new(); 3];
                for (vc, occupancy) in steps {
                    let v = vc as usize;
                    let s = seq[v];
                    seq[v] += 1;
                    let c = cell(vc, s, (s + 1) % packet_len == 0);
                    if st.admit(occupancy, &c) == EpdVerdict::Enqueued {
                        accepted[v].push(s);
                    }
                }
                for v in 0..3 {
                    let complete = seq[v] / packet_len;
                    for p in 0..complete {
                        let got = accepted[v].iter().filter(|&&s| s / packet_len == p).count() as u64;
                        prop_assert!(got == 0 || got == packet_len, "vc {v} packet {p}: {got} cells");
                    }
                }
            }
        }
    }
}
