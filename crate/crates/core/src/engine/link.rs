use crate::model::{LinkId, NodeId, Rate};

use super::{EngineError, SimTime};

/// Outcome of putting one cell on a link.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Transmission {
    /// Tick at which the last bit leaves the sender; the port may start the
    /// next cell then.
    pub departs: SimTime,
    /// Tick at which the cell reaches the far end.
    pub arrives: SimTime,
}

/// A unidirectional link with finite rate and propagation delay.
///
/// Serialization is tracked exactly: time is kept in units of
/// `1 / rate.numer()` microseconds so that a cell time of, say, 2.8266 µs
/// accumulates without rounding drift. Only the reported departure and
/// arrival ticks are rounded up.
#[derive(Clone, Debug)]
pub struct Link {
    pub id: LinkId,
    pub rate: Rate,
    pub propagation_delay: SimTime,
    pub from: NodeId,
    pub to: NodeId,
    units_per_tick: u128,
    service_units: u128,
    free_units: u128,
}

impl Link {
    pub fn new(
        id: LinkId,
        rate: Rate,
        propagation_delay: SimTime,
        from: NodeId,
        to: NodeId,
    ) -> Result<Link, EngineError> {
        if rate.is_zero() {
            return Err(EngineError::InvalidLink(id, "rate must be positive".into()));
        }
        let (service_units, units_per_tick) = rate.interval_micros();
        Ok(Link {
            id,
            rate,
            propagation_delay,
            from,
            to,
            units_per_tick,
            service_units,
            free_units: 0,
        })
    }

    fn ceil_ticks(&self, units: u128) -> SimTime {
        SimTime(units.div_ceil(self.units_per_tick) as u64)
    }

    /// Serializes one cell that has been waiting since `at`.
    pub fn transmit(&mut self, at: SimTime) -> Transmission {
        let start = (at.0 as u128 * self.units_per_tick).max(self.free_units);
        self.free_units = start + self.service_units;
        let departs = self.ceil_ticks(self.free_units);
        Transmission {
            departs,
            arrives: departs + self.propagation_delay,
        }
    }

    /// First tick at which the link is idle.
    pub fn free_at(&self) -> SimTime {
        self.ceil_ticks(self.free_units)
    }

    /// Serialization time of one cell in microseconds.
    pub fn cell_time_micros(&self) -> f64 {
        self.service_units as f64 / self.units_per_tick as f64
    }

    /// Round trip propagation delay.
    pub fn round_trip(&self) -> SimTime {
        SimTime(self.propagation_delay.0 * 2)
    }
}
