use std::collections::VecDeque;

use crate::traffic::{EpdState, EpdVerdict};

use super::{LinkItem, SimTime};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Queued {
    pub item: LinkItem,
    /// Tick at which the item joined the queue.
    pub since: SimTime,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DropPolicy {
    TailDrop,
    EarlyPacketDiscard { threshold: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DropReason {
    Overflow,
    EarlyDiscard,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Admission {
    Enqueued,
    Dropped(DropReason),
}

/// FIFO output queue of a port.
#[derive(Clone, Debug)]
pub struct PortQueue {
    capacity: Option<usize>,
    cells: VecDeque<Queued>,
    epd: Option<EpdState>,
}

impl PortQueue {
    pub fn new(capacity: Option<usize>, policy: DropPolicy) -> Self {
        let epd = match policy {
            DropPolicy::TailDrop => None,
            DropPolicy::EarlyPacketDiscard { threshold } => Some(EpdState::new(threshold)),
        };
        PortQueue {
            capacity,
            cells: VecDeque::new(),
            epd,
        }
    }

    pub fn unbounded() -> Self {
        Self::new(None, DropPolicy::TailDrop)
    }

    pub fn capacity(&self) -> Option<usize> {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.capacity.is_some_and(|c| self.cells.len() >= c)
    }

    pub fn push(&mut self, item: LinkItem, now: SimTime) -> Admission {
        if let (Some(epd), LinkItem::Cell(cell)) = (self.epd.as_mut(), &item) {
            if epd.admit(self.cells.len(), cell) == EpdVerdict::Dropped {
                return Admission::Dropped(DropReason::EarlyDiscard);
            }
        }
        if self.is_full() {
            return Admission::Dropped(DropReason::Overflow);
        }
        self.cells.push_back(Queued { item, since: now });
        Admission::Enqueued
    }

    pub fn front(&self) -> Option<&Queued> {
        self.cells.front()
    }

    pub fn pop(&mut self) -> Option<Queued> {
        self.cells.pop_front()
    }
}

/// Time-weighted occupancy statistics for one measurement interval.
#[derive(Clone, Debug, Default)]
pub struct OccupancyMeter {
    last_change: SimTime,
    current: usize,
    area: u128,
    interval_start: SimTime,
    pub interval_max: usize,
    pub interval_arrivals: u64,
    pub lifetime_max: usize,
}

impl OccupancyMeter {
    /// Records that occupancy becomes `occupancy` at `now`.
    pub fn set(&mut self, now: SimTime, occupancy: usize) {
        self.area += self.current as u128 * (now.0 - self.last_change.0) as u128;
        self.last_change = now;
        self.current = occupancy;
        self.interval_max = self.interval_max.max(occupancy);
        self.lifetime_max = self.lifetime_max.max(occupancy);
    }

    /// Closes the interval at `now` and returns `(max, mean, arrivals)`.
    pub fn roll(&mut self, now: SimTime) -> (usize, f64, u64) {
        self.set(now, self.current);
        let span = (now.0 - self.interval_start.0).max(1);
        let out = (
            self.interval_max,
            self.area as f64 / span as f64,
            self.interval_arrivals,
        );
        self.area = 0;
        self.interval_start = now;
        self.interval_max = self.current;
        self.interval_arrivals = 0;
        out
    }
}
