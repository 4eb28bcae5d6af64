use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::credit::CreditCell;
use crate::model::{Cell, LinkId, VcId};

use super::{EngineError, SimTime};

/// Anything that occupies a cell slot on a link.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LinkItem {
    Cell(Cell),
    Credit(CreditCell),
}

impl LinkItem {
    pub fn vc(&self) -> VcId {
        match self {
            LinkItem::Cell(c) => c.vc,
            LinkItem::Credit(c) => c.vc,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Owner {
    Port(LinkId),
    Source(VcId),
    CreditLink(LinkId),
    Metrics,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TimerTag {
    /// The link finished serializing a cell.
    PortReady,
    /// End of a switch measurement interval.
    AveragingInterval,
    MetricsTick,
    Resync,
    Reallocate,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EventKind {
    CellArrival { link: LinkId, item: LinkItem },
    TimerFire { owner: Owner, tag: TimerTag },
    /// `generation` lets a source supersede a wake it already scheduled.
    SourceWake { vc: VcId, generation: u64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Event {
    pub at: SimTime,
    pub sequence: u64,
    pub kind: EventKind,
}

struct Pending(Event);

impl PartialEq for Pending {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Pending {}

impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Pending {
    // Reversed so the max-heap yields the earliest (at, sequence) first.
    fn cmp(&self, other: &Self) -> Ordering {
        (other.0.at, other.0.sequence).cmp(&(self.0.at, self.0.sequence))
    }
}

/// Clock plus pending events, ordered by time and then insertion order.
#[derive(Default)]
pub struct Scheduler {
    now: SimTime,
    next_sequence: u64,
    heap: BinaryHeap<Pending>,
}

impl Scheduler {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    /// Queues `kind` to fire at `at`; returns the event's sequence number.
    pub fn schedule(&mut self, at: SimTime, kind: EventKind) -> Result<u64, EngineError> {
        if at < self.now {
            return Err(EngineError::SchedulingInPast { at, now: self.now });
        }
        let sequence = self.next_sequence;
        self.next_sequence += 1;
        self.heap.push(Pending(Event { at, sequence, kind }));
        Ok(sequence)
    }

    /// Pops the next event due at or before `end`, advancing the clock to it.
    pub fn pop_until(&mut self, end: SimTime) -> Option<Event> {
        if self.heap.peek()?.0.at > end {
            return None;
        }
        let Pending(event) = self.heap.pop()?;
        self.now = event.at;
        Some(event)
    }

    /// Moves the clock forward to `t` without processing anything.
    pub fn advance_to(&mut self, t: SimTime) {
        if t > self.now {
            self.now = t;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wake(vc: u32) -> EventKind {
        EventKind::SourceWake {
            vc: VcId(vc),
            generation: 0,
        }
    }

    fn drain(s: &mut Scheduler) -> Vec<(u64, EventKind)> {
        std::iter::from_fn(|| s.pop_until(SimTime::MAX))
            .map(|e| (e.at.0, e.kind))
            .collect()
    }

    #[test]
    fn dequeues_in_time_order() {
        let mut s = Scheduler::new();
        s.schedule(SimTime(5), wake(1)).unwrap();
        s.schedule(SimTime(3), wake(2)).unwrap();
        let order: Vec<u64> = drain(&mut s).into_iter().map(|(t, _)| t).collect();
        assert_eq!(order, vec![3, 5]);
    }

    #[test]
    fn equal_times_keep_insertion_order() {
        let mut s = Scheduler::new();
        s.schedule(SimTime(7), wake(10)).unwrap();
        s.schedule(SimTime(7), wake(20)).unwrap();
        let got = drain(&mut s);
        assert_eq!(got, vec![(7, wake(10)), (7, wake(20))]);
    }

    #[test]
    fn rejects_events_in_the_past() {
        let mut s = Scheduler::new();
        s.schedule(SimTime(4), wake(1)).unwrap();
        s.pop_until(SimTime::MAX).unwrap();
        assert_eq!(s.now(), SimTime(4));
        assert_eq!(
            s.schedule(SimTime(2), wake(1)),
            Err(EngineError::SchedulingInPast {
                at: SimTime(2),
                now: SimTime(4)
            })
        );
    }

    #[test]
    fn pop_until_leaves_later_events() {
        let mut s = Scheduler::new();
        s.schedule(SimTime(10), wake(1)).unwrap();
        assert!(s.pop_until(SimTime(9)).is_none());
        assert_eq!(s.len(), 1);
        assert!(s.pop_until(SimTime(10)).is_some());
    }

    #[test]
    fn sequences_are_unique() {
        let mut s = Scheduler::new();
        let a = s.schedule(SimTime(1), wake(1)).unwrap();
        let b = s.schedule(SimTime(1), wake(1)).unwrap();
        let c = s.schedule(SimTime(0), wake(1)).unwrap();
        assert!(a != b && b != c && a != c);
    }
}
