//! Discrete-event kernel: clock, event queue, links and output queues.

mod link;
mod port;
mod queue;
mod sim;
mod time;

use thiserror::Error;

use crate::credit::CreditError;
use crate::model::{LinkId, VcId};

pub use link::{Link, Transmission};
pub use port::{Admission, DropPolicy, DropReason, OccupancyMeter, PortQueue, Queued};
pub use queue::{Event, EventKind, LinkItem, Owner, Scheduler, TimerTag};
pub use sim::{credit_allocation, CreditSpec, SimSpec, Simulation, TrunkSpec, VcSpec, ACCESS_DELAY};
pub use time::SimTime;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EngineError {
    #[error("cannot schedule at {at}, clock is already at {now}")]
    SchedulingInPast { at: SimTime, now: SimTime },
    #[error("invalid link {id}: {1}", id = .0 .0)]
    InvalidLink(LinkId, String),
    #[error("vc {0} has an invalid route")]
    InvalidRoute(VcId),
    #[error(transparent)]
    Credit(#[from] CreditError),
}
