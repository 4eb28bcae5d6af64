use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::SimTime;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TrafficError {
    #[error("source is idle: allowed cell rate is zero")]
    SourceIdle,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoopMode {
    Open,
    Closed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SourceModel {
    /// Always has a cell ready.
    Persistent,
    /// Persistent from `start` on.
    Staggered { start: SimTime },
    /// Bursts of `burst_len` cells separated by `idle`. An open-loop source
    /// is silent for `idle` after the slot of a burst's last cell; a closed-
    /// loop source waits until that cell is delivered, then for `idle`.
    Bursty {
        burst_len: u32,
        idle: SimTime,
        loop_mode: LoopMode,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Emission {
    At(SimTime),
    AwaitingResponse,
}

/// A cell slot: the tick the cell goes out and the exact (fractional)
/// schedule position it occupies.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Slot {
    pub tick: SimTime,
    pub planned: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DataCellInfo {
    pub seq: u64,
    pub eom: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct DeliveryOutcome {
    /// First cell emitted to last cell delivered, for a completed burst.
    pub response_time: Option<SimTime>,
    /// A closed-loop source became ready to send again.
    pub resumed: bool,
}

#[derive(Clone, Copy, Debug)]
struct BurstRecord {
    last_seq: u64,
    first_emitted: SimTime,
}

/// Emission schedule of one source. Rates are cells per second; the
/// schedule is kept in fractional microseconds so pacing does not drift.
#[derive(Clone, Debug)]
pub struct TrafficSource {
    model: SourceModel,
    packet_len: u32,
    phase: f64,
    last_slot: Option<f64>,
    not_before: f64,
    sent: u64,
    in_burst: u32,
    in_packet: u32,
    burst_started: Option<SimTime>,
    awaiting: Option<u64>,
    bursts: VecDeque<BurstRecord>,
}

impl TrafficSource {
    pub fn new(model: SourceModel, packet_len: u32) -> Self {
        TrafficSource {
            model,
            packet_len: packet_len.max(1),
            phase: 0.0,
            last_slot: None,
            not_before: 0.0,
            sent: 0,
            in_burst: 0,
            in_packet: 0,
            burst_started: None,
            awaiting: None,
            bursts: VecDeque::new(),
        }
    }

    /// Delays the first cell by `micros`.
    pub fn with_phase(mut self, micros: f64) -> Self {
        self.phase = micros.max(0.0);
        self
    }

    pub fn model(&self) -> SourceModel {
        self.model
    }

    pub fn data_sent(&self) -> u64 {
        self.sent
    }

    pub fn start_time(&self) -> SimTime {
        match self.model {
            SourceModel::Staggered { start } => start,
            _ => SimTime::ZERO,
        }
    }

    pub fn is_awaiting_response(&self) -> bool {
        self.awaiting.is_some()
    }

    /// Next cell slot at rate `acr`, or `None` while a closed-loop source
    /// waits for its burst to be delivered.
    pub fn plan(&self, now: SimTime, acr: f64) -> Result<Option<Slot>, TrafficError> {
        if acr <= 0.0 {
            return Err(TrafficError::SourceIdle);
        }
        if self.awaiting.is_some() {
            return Ok(None);
        }
        let first = self.start_time().0 as f64 + self.phase;
        let mut planned = match self.last_slot {
            Some(last) => last + 1e6 / acr,
            None => first,
        }
        .max(self.not_before)
        .max(first);
        // A source that could not send on schedule does not get to catch up.
        let floor = now.0 as f64 - 1.0;
        if planned < floor {
            planned = now.0 as f64;
        }
        let tick = SimTime::ceil_micros(planned).max(now);
        Ok(Some(Slot { tick, planned }))
    }

    pub fn next_emission(&self, now: SimTime, acr: f64) -> Result<Emission, TrafficError> {
        Ok(match self.plan(now, acr)? {
            Some(slot) => Emission::At(slot.tick),
            None => Emission::AwaitingResponse,
        })
    }

    /// Consumes `slot` for a data cell sent at `now` while the rate was `acr`.
    pub fn record_data(&mut self, slot: Slot, now: SimTime, acr: f64) -> DataCellInfo {
        self.last_slot = Some(slot.planned);
        let seq = self.sent;
        self.sent += 1;
        self.in_packet += 1;
        let mut burst_end = false;
        if let SourceModel::Bursty {
            burst_len,
            idle,
            loop_mode,
        } = self.model
        {
            let first_emitted = *self.burst_started.get_or_insert(now);
            self.in_burst += 1;
            if self.in_burst >= burst_len {
                burst_end = true;
                self.in_burst = 0;
                self.burst_started = None;
                self.bursts.push_back(BurstRecord {
                    last_seq: seq,
                    first_emitted,
                });
                match loop_mode {
                    LoopMode::Open => {
                        self.not_before = slot.planned + 1e6 / acr.max(f64::MIN_POSITIVE) + idle.0 as f64;
                    }
                    LoopMode::Closed => self.awaiting = Some(seq),
                }
            }
        }
        let eom = burst_end || self.in_packet >= self.packet_len;
        if eom {
            self.in_packet = 0;
        }
        DataCellInfo { seq, eom }
    }

    /// Consumes `slot` for a resource-management cell.
    pub fn record_rm(&mut self, slot: Slot) {
        self.last_slot = Some(slot.planned);
    }

    fn idle(&self) -> f64 {
        match self.model {
            SourceModel::Bursty { idle, .. } => idle.0 as f64,
            _ => 0.0,
        }
    }

    fn settle(&mut self, seq: u64, now: SimTime, delivered: bool) -> DeliveryOutcome {
        let mut out = DeliveryOutcome::default();
        while let Some(rec) = self.bursts.front().copied() {
            if rec.last_seq > seq {
                break;
            }
            self.bursts.pop_front();
            if rec.last_seq == seq && delivered {
                out.response_time = Some(now.saturating_sub(rec.first_emitted));
            }
        }
        if self.awaiting.is_some_and(|w| w <= seq) {
            self.awaiting = None;
            self.not_before = now.0 as f64 + self.idle();
            out.resumed = true;
        }
        out
    }

    /// The destination received data cell `seq`.
    pub fn on_delivered(&mut self, seq: u64, now: SimTime) -> DeliveryOutcome {
        self.settle(seq, now, true)
    }

    /// Data cell `seq` was dropped in the network. A closed-loop source
    /// treats the loss of a burst's last cell as its response.
    pub fn on_lost(&mut self, seq: u64, now: SimTime) -> DeliveryOutcome {
        if self.bursts.front().is_some_and(|r| r.last_seq == seq) {
            self.settle(seq, now, false)
        } else {
            DeliveryOutcome::default()
        }
    }
}
