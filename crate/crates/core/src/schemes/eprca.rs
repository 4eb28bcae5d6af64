use serde::{Deserialize, Serialize};

use crate::model::{Cell, Direction, RmPayload};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorKind {
    /// Congested while the queue is longer than the threshold.
    QueueLength,
    /// Congested if the queue grew over the last window of cells.
    QueueGrowth,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CongestionDetector {
    pub kind: DetectorKind,
    pub threshold: usize,
    pub window: u32,
    seen: u32,
    last_len: usize,
    growing: bool,
}

impl CongestionDetector {
    pub fn new(kind: DetectorKind, threshold: usize, window: u32) -> Self {
        CongestionDetector {
            kind,
            threshold,
            window: window.max(1),
            seen: 0,
            last_len: 0,
            growing: false,
        }
    }

    /// Feeds one processed cell with the queue length it saw.
    pub fn observe(&mut self, queue_len: usize) {
        self.seen += 1;
        if self.seen >= self.window {
            self.seen = 0;
            self.growing = queue_len > self.last_len;
            self.last_len = queue_len;
        }
    }

    pub fn congested(&self, queue_len: usize) -> bool {
        match self.kind {
            DetectorKind::QueueLength => queue_len > self.threshold,
            DetectorKind::QueueGrowth => self.growing,
        }
    }
}

/// Binary feedback switch: marks EFCI on data cells while congested.
#[derive(Clone, Debug, PartialEq)]
pub struct EfciSwitch {
    pub detector: CongestionDetector,
}

impl EfciSwitch {
    pub fn new(threshold: usize) -> Self {
        EfciSwitch {
            detector: CongestionDetector::new(DetectorKind::QueueLength, threshold, 1),
        }
    }

    pub fn on_forward_data(&mut self, queue_len: usize, cell: &mut Cell) {
        self.detector.observe(queue_len);
        if self.detector.congested(queue_len) {
            cell.mark_efci();
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EprcaSwitchState {
    pub macr: f64,
    pub alpha: f64,
    pub sw_dpf: f64,
    /// Queue length above which returning RM cells get CI.
    pub queue_threshold: usize,
    pub detector: CongestionDetector,
}

impl EprcaSwitchState {
    pub fn new(initial_macr: f64, alpha: f64, sw_dpf: f64, detector: CongestionDetector) -> Self {
        EprcaSwitchState {
            macr: initial_macr,
            alpha,
            sw_dpf,
            queue_threshold: detector.threshold,
            detector,
        }
    }

    pub fn fair_share(&self) -> f64 {
        self.sw_dpf * self.macr
    }

    pub fn on_forward_data(&mut self, queue_len: usize, cell: &mut Cell) {
        debug_assert!(cell.is_data());
        self.detector.observe(queue_len);
        if self.detector.congested(queue_len) {
            cell.mark_efci();
        }
    }

    pub fn on_backward_rm(&mut self, queue_len: usize, rm: &mut RmPayload) {
        debug_assert_eq!(rm.direction, Direction::Backward);
        self.macr = (1.0 - self.alpha) * self.macr + self.alpha * rm.ccr;
        let fair = self.fair_share();
        if self.detector.congested(queue_len) && rm.ccr > fair {
            rm.bound_er(fair);
            rm.reduced = true;
        }
        if queue_len > self.queue_threshold {
            rm.ci = true;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::SimTime;
    use crate::model::VcId;

    fn data() -> Cell {
        Cell::data(VcId(1), 0, false, SimTime::ZERO)
    }

    fn backward(er: f64, ccr: f64) -> RmPayload {
        RmPayload {
            direction: Direction::Backward,
            er,
            ccr,
            ci: false,
            reduced: false,
        }
    }

    fn eprca(macr: f64, kind: DetectorKind) -> EprcaSwitchState {
        EprcaSwitchState::new(macr, 1.0 / 16.0, 7.0 / 8.0, CongestionDetector::new(kind, 50, 10))
    }

    #[test]
    fn marking_by_queue_length() {
        let mut sw = eprca(100.0, DetectorKind::QueueLength);
        let mut c = data();
        sw.on_forward_data(0, &mut c);
        assert!(!c.efci);
        sw.on_forward_data(51, &mut c);
        assert!(c.efci);
    }

    #[test]
    fn marking_by_queue_growth() {
        let mut sw = eprca(100.0, DetectorKind::QueueGrowth);
        for _ in 0..10 {
            sw.on_forward_data(40, &mut data());
        }
        let mut last = data();
        for _ in 0..10 {
            last = data();
            sw.on_forward_data(45, &mut last);
        }
        assert!(last.efci);
        for _ in 0..10 {
            last = data();
            sw.on_forward_data(40, &mut last);
        }
        assert!(!last.efci);
    }

    #[test]
    fn macr_average() {
        let mut sw = eprca(100.0, DetectorKind::QueueLength);
        let mut rm = backward(1e9, 132.0);
        sw.on_backward_rm(0, &mut rm);
        assert!((sw.macr - 102.0).abs() < 1e-12);
        assert_eq!(rm.er, 1e9);
    }

    #[test]
    fn congested_reduction_to_fair_share() {
        let mut sw = eprca(100.0, DetectorKind::QueueLength);
        sw.macr = (102.0 * 16.0 - 200.0) / 15.0;
        let mut rm = backward(200.0, 200.0);
        sw.on_backward_rm(60, &mut rm);
        assert!((sw.macr - 102.0).abs() < 1e-9);
        assert!((rm.er - 89.25).abs() < 1e-9);
        assert!(rm.ci);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn macr_contracts_geometrically(
                start in 0.0f64..1e6,
                target in 0.0f64..1e6,
                k in 1usize..100,
            ) {
                let mut sw = eprca(start, DetectorKind::QueueLength);
                let mut prev = (start - target).abs();
                for _ in 0..k {
                    sw.on_backward_rm(0, &mut backward(1e9, target));
                    let gap = (sw.macr - target).abs();
                    prop_assert!(gap <= prev + 1e-9);
                    prev = gap;
                }
                let expect = (15.0f64 / 16.0).powi(k as i32) * (start - target).abs();
                prop_assert!((prev - expect).abs() <= 1e-6 * (1.0 + start.max(target)));
            }

            #[test]
            fn er_never_increases(
                er in 0.0f64..1e6,
                ccr in 0.0f64..1e6,
                q in 0usize..200,
                macr in 0.0f64..1e6,
            ) {
                let mut sw = eprca(macr, DetectorKind::QueueLength);
                let mut rm = backward(er, ccr);
                sw.on_backward_rm(q, &mut rm);
                prop_assert!(rm.er <= er);
            }
        }
    }
}
