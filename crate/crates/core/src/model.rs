//! Shared vocabulary: identifiers, exact rates, cells and traffic contracts.
//!
//! Cells are plain records rather than 53-byte arrays. Only the header bits
//! that matter to congestion control are kept (EFCI, CLP, end-of-message),
//! and resource-management (RM) cells carry their payload as a typed struct.

use std::cmp::Ordering;
use std::fmt;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::SimTime;

/// Bits in one cell: 48 bytes of payload plus a 5 byte header.
pub const CELL_BITS: u64 = 424;

const MICROS_PER_SEC: u128 = 1_000_000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("invalid contract: {0}")]
    InvalidContract(String),
    #[error("invalid path for vc {vc}: {reason}")]
    InvalidPath { vc: VcId, reason: String },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VcId(pub u32);

impl fmt::Display for VcId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LinkId(pub usize);

/// An exact rate in cells per second, kept as a reduced fraction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Rate {
    num: u64,
    den: u64,
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

impl Rate {
    pub const ZERO: Rate = Rate { num: 0, den: 1 };

    /// `num / den` cells per second. Panics if `den` is zero.
    pub fn new(num: u64, den: u64) -> Rate {
        assert!(den != 0, "rate denominator must be non-zero");
        if num == 0 {
            return Rate::ZERO;
        }
        let g = gcd(num, den);
        Rate {
            num: num / g,
            den: den / g,
        }
    }

    pub fn cells_per_sec(cells: u64) -> Rate {
        Rate::new(cells, 1)
    }

    /// Converts a line rate in Mbit/s into cells per second. The value is
    /// taken with kbit/s resolution so that it stays exact.
    pub fn from_mbps(mbps: f64) -> Rate {
        let kbps = (mbps * 1_000.0).round().max(0.0) as u64;
        Rate::new(kbps * 1_000, CELL_BITS)
    }

    pub fn numer(&self) -> u64 {
        self.num
    }

    pub fn denom(&self) -> u64 {
        self.den
    }

    pub fn is_zero(&self) -> bool {
        self.num == 0
    }

    pub fn as_f64(&self) -> f64 {
        self.num as f64 / self.den as f64
    }

    /// The rate expressed in Mbit/s.
    pub fn as_mbps(&self) -> f64 {
        self.as_f64() * CELL_BITS as f64 / 1e6
    }

    pub fn to_exact(&self) -> Ratio<i128> {
        Ratio::new(self.num as i128, self.den as i128)
    }

    /// Nominal inter-cell time as an exact fraction of a microsecond:
    /// `(numerator, denominator)` with value `1e6 * den / num`.
    pub fn interval_micros(&self) -> (u128, u128) {
        (MICROS_PER_SEC * self.den as u128, self.num as u128)
    }

    /// Nominal inter-cell time rounded down to whole ticks.
    pub fn interval_floor(&self) -> SimTime {
        let (n, d) = self.interval_micros();
        SimTime((n / d) as u64)
    }

    pub fn scale(&self, num: u64, den: u64) -> Rate {
        Rate::new(self.num * num, self.den * den)
    }
}

impl PartialOrd for Rate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Rate {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.num as u128 * other.den as u128).cmp(&(other.num as u128 * self.den as u128))
    }
}

impl fmt::Display for Rate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den == 1 {
            write!(f, "{} cells/s", self.num)
        } else {
            write!(f, "{}/{} cells/s", self.num, self.den)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Forward,
    Backward,
}

/// Payload of a resource-management cell. Rates are cells per second.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RmPayload {
    pub direction: Direction,
    /// Explicit rate. Switches may lower it, never raise it.
    pub er: f64,
    /// Current cell rate of the source when the cell was emitted.
    pub ccr: f64,
    /// Congestion indication.
    pub ci: bool,
    /// Set by a switch that reduced the requested rate.
    pub reduced: bool,
}

impl RmPayload {
    /// Lowers the explicit rate to `bound` if that is smaller.
    pub fn bound_er(&mut self, bound: f64) {
        if bound < self.er {
            self.er = bound.max(0.0);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CellKind {
    Data,
    Rm(RmPayload),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cell {
    pub vc: VcId,
    pub kind: CellKind,
    pub efci: bool,
    pub clp: bool,
    /// Last cell of a packet. Only meaningful on data cells.
    pub eom: bool,
    pub emitted_at: SimTime,
    /// Per-vc index of data cells, zero for RM cells. Used for tracing only.
    pub seq: u64,
}

impl Cell {
    pub fn data(vc: VcId, seq: u64, eom: bool, emitted_at: SimTime) -> Cell {
        Cell {
            vc,
            kind: CellKind::Data,
            efci: false,
            clp: false,
            eom,
            emitted_at,
            seq,
        }
    }

    pub fn is_data(&self) -> bool {
        matches!(self.kind, CellKind::Data)
    }

    pub fn rm(&self) -> Option<&RmPayload> {
        match &self.kind {
            CellKind::Rm(rm) => Some(rm),
            CellKind::Data => None,
        }
    }

    pub fn rm_mut(&mut self) -> Option<&mut RmPayload> {
        match &mut self.kind {
            CellKind::Rm(rm) => Some(rm),
            CellKind::Data => None,
        }
    }

    /// Marks the cell as having crossed a congested queue. The bit is sticky.
    pub fn mark_efci(&mut self) {
        self.efci = true;
    }
}

/// A forward RM cell as a source emits it: ER starts at the peak cell rate.
pub fn make_forward_rm(vc: VcId, acr: f64, pcr: f64) -> Cell {
    Cell {
        vc,
        kind: CellKind::Rm(RmPayload {
            direction: Direction::Forward,
            er: pcr,
            ccr: acr,
            ci: false,
            reduced: false,
        }),
        efci: false,
        clp: false,
        eom: false,
        emitted_at: SimTime::ZERO,
        seq: 0,
    }
}

/// Converts a rate in cells per second to Mbit/s.
pub fn cells_to_mbps(cells_per_sec: f64) -> f64 {
    cells_per_sec * CELL_BITS as f64 / 1e6
}

/// Converts Mbit/s to cells per second.
pub fn mbps_to_cells(mbps: f64) -> f64 {
    mbps * 1e6 / CELL_BITS as f64
}

/// Burst tolerance implied by a maximum burst size:
/// `(mbs - 1) * (1/scr - 1/pcr)`, rounded down to whole ticks.
pub fn bt_from_mbs(mbs: u32, scr: Rate, pcr: Rate) -> Result<SimTime, ModelError> {
    if scr.is_zero() {
        return Err(ModelError::InvalidContract("scr must be positive".into()));
    }
    if scr > pcr {
        return Err(ModelError::InvalidContract(format!(
            "scr {scr} exceeds pcr {pcr}"
        )));
    }
    if mbs == 0 {
        return Err(ModelError::InvalidContract("mbs must be at least 1".into()));
    }
    // 1/scr - 1/pcr = (scr.den * pcr.num - pcr.den * scr.num) / (scr.num * pcr.num)
    let slack_num = scr.den as u128 * pcr.num as u128 - pcr.den as u128 * scr.num as u128;
    let slack_den = scr.num as u128 * pcr.num as u128;
    let num = (mbs as u128 - 1) * MICROS_PER_SEC * slack_num;
    Ok(SimTime((num / slack_den) as u64))
}

/// Declared traffic parameters of one virtual circuit.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrafficContract {
    pub pcr: Rate,
    pub scr: Option<Rate>,
    pub mcr: Rate,
    pub mbs: Option<u32>,
    pub cdvt: SimTime,
    pub bt: SimTime,
}

impl TrafficContract {
    /// Peak-rate-only contract with MCR zero.
    pub fn new(pcr: Rate) -> Result<Self, ModelError> {
        if pcr.is_zero() {
            return Err(ModelError::InvalidContract("pcr must be positive".into()));
        }
        Ok(TrafficContract {
            pcr,
            scr: None,
            mcr: Rate::ZERO,
            mbs: None,
            cdvt: SimTime::ZERO,
            bt: SimTime::ZERO,
        })
    }

    pub fn with_mcr(mut self, mcr: Rate) -> Result<Self, ModelError> {
        if mcr > self.pcr {
            return Err(ModelError::InvalidContract(format!(
                "mcr {mcr} exceeds pcr {}",
                self.pcr
            )));
        }
        self.mcr = mcr;
        Ok(self)
    }

    pub fn with_cdvt(mut self, cdvt: SimTime) -> Self {
        self.cdvt = cdvt;
        self
    }

    /// Adds a sustained-rate bucket; the burst tolerance follows from `mbs`.
    pub fn with_scr(mut self, scr: Rate, mbs: u32) -> Result<Self, ModelError> {
        self.bt = bt_from_mbs(mbs, scr, self.pcr)?;
        self.scr = Some(scr);
        self.mbs = Some(mbs);
        Ok(self)
    }
}

/// Route of one virtual circuit: the switches it crosses and the link each
/// switch forwards it on. The first hop is the source's access link.
#[derive(Clone, Debug, PartialEq)]
pub struct VcPath {
    pub vc: VcId,
    pub source: NodeId,
    pub destination: NodeId,
    /// `(node, outgoing link)` pairs starting with the source itself.
    pub hops: Vec<(NodeId, LinkId)>,
}

impl VcPath {
    /// Checks that consecutive hops are joined by their links, given a
    /// lookup from link to `(from, to)`.
    pub fn validate(&self, ends: impl Fn(LinkId) -> Option<(NodeId, NodeId)>) -> Result<(), ModelError> {
        let err = |reason: String| ModelError::InvalidPath {
            vc: self.vc,
            reason,
        };
        let Some(&(first, _)) = self.hops.first() else {
            return Err(err("no hops".into()));
        };
        if first != self.source {
            return Err(err("first hop does not start at the source".into()));
        }
        let mut at = self.source;
        for &(node, link) in &self.hops {
            if node != at {
                return Err(err(format!("hop at node {} is disconnected", node.0)));
            }
            let (from, to) = ends(link).ok_or_else(|| err(format!("unknown link {}", link.0)))?;
            if from != node {
                return Err(err(format!("link {} does not leave node {}", link.0, node.0)));
            }
            at = to;
        }
        if at != self.destination {
            return Err(err("path does not end at the destination".into()));
        }
        Ok(())
    }

    pub fn links(&self) -> impl Iterator<Item = LinkId> + '_ {
        self.hops.iter().map(|&(_, l)| l)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bt_is_zero_for_single_cell_bursts() {
        let bt = bt_from_mbs(1, Rate::cells_per_sec(1_000), Rate::cells_per_sec(10_000)).unwrap();
        assert_eq!(bt, SimTime::ZERO);
    }

    #[test]
    fn bt_for_hundred_cell_bursts() {
        // 99 * (1000 us - 100 us)
        let bt = bt_from_mbs(100, Rate::cells_per_sec(1_000), Rate::cells_per_sec(10_000)).unwrap();
        assert_eq!(bt, SimTime(89_100));
    }

    #[test]
    fn bt_is_zero_when_scr_equals_pcr() {
        for mbs in [1, 2, 17, 1000] {
            let r = Rate::from_mbps(150.0);
            assert_eq!(bt_from_mbs(mbs, r, r).unwrap(), SimTime::ZERO);
        }
    }

    #[test]
    fn bt_rejects_bad_rates() {
        let fast = Rate::cells_per_sec(10);
        let slow = Rate::cells_per_sec(5);
        assert!(matches!(bt_from_mbs(3, fast, slow), Err(ModelError::InvalidContract(_))));
        assert!(matches!(bt_from_mbs(3, Rate::ZERO, slow), Err(ModelError::InvalidContract(_))));
    }

    #[test]
    fn forward_rm_starts_at_peak_rate() {
        for (acr, pcr) in [(0.0, 10.0), (5.0, 10.0), (10.0, 10.0)] {
            let cell = make_forward_rm(VcId(1), acr, pcr);
            let rm = cell.rm().unwrap();
            assert_eq!(rm.direction, Direction::Forward);
            assert_eq!(rm.er, pcr);
            assert_eq!(rm.ccr, acr);
            assert!(!rm.ci && !rm.reduced);
            assert!(!cell.efci);
        }
    }

    #[test]
    fn er_only_decreases() {
        let mut rm = make_forward_rm(VcId(1), 1.0, 10.0).rm().copied().unwrap();
        rm.bound_er(20.0);
        assert_eq!(rm.er, 10.0);
        rm.bound_er(4.0);
        assert_eq!(rm.er, 4.0);
    }

    #[test]
    fn mbps_conversion_uses_424_bit_cells() {
        let r = Rate::from_mbps(155.0);
        assert_eq!(r, Rate::new(155_000_000, 424));
        assert!((r.as_f64() - 365_566.037_7).abs() < 1e-3);
        assert!((Rate::from_mbps(150.0).as_mbps() - 150.0).abs() < 1e-9);
    }

    #[test]
    fn contract_validation() {
        let pcr = Rate::cells_per_sec(100);
        let c = TrafficContract::new(pcr).unwrap();
        assert_eq!(c.mcr, Rate::ZERO);
        assert!(c.with_mcr(Rate::cells_per_sec(101)).is_err());
        assert!(c.with_scr(Rate::cells_per_sec(200), 4).is_err());
        let c = c.with_scr(Rate::cells_per_sec(50), 11).unwrap();
        // 10 * (20000 - 10000) us
        assert_eq!(c.bt, SimTime(100_000));
    }
}
