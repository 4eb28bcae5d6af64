//! Traffic generation and network-entry enforcement.

mod epd;
mod gcra;
mod source;

pub use epd::{epd_enqueue, EpdState, EpdVerdict};
pub use gcra::{gcra_check, Conformance, GcraState, NonConformingAction, PoliceVerdict, Policer};
pub use source::{
    DataCellInfo, DeliveryOutcome, Emission, LoopMode, Slot, SourceModel, TrafficError,
    TrafficSource,
};
