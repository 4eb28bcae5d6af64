//! Hop-by-hop, per-vc credit flow control.
//!
//! Each credit-gated link keeps, per vc, the sender's balance and the
//! receiver's counters. With `A` the receiver's buffer allocation, `G` the
//! credits granted so far (including the initial window) and `F` the cells
//! the receiver has forwarded, at most `G - F` cells of the vc can be
//! buffered, in flight or authorized at once. Keeping `G - F <= A` is what
//! makes the receiver buffer lossless.

use std::collections::{BTreeMap, VecDeque};

use thiserror::Error;

use crate::engine::{Link, LinkItem, Queued, SimTime};
use crate::model::VcId;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CreditError {
    #[error("vc {0} is not registered on this link")]
    UnknownVc(VcId),
    #[error("receiver counted {received} cells (plus {in_flight} in flight) but sender sent {sent}")]
    NegativeLoss { sent: u64, received: u64, in_flight: u64 },
    #[error("buffer of {total} cells cannot give {vcs} vcs {min_grant} cells each")]
    InsufficientBuffer { total: u64, vcs: usize, min_grant: u64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CreditCell {
    pub vc: VcId,
    pub granted: u64,
    /// Cumulative cells the receiver had seen when it issued this credit.
    pub receiver_count: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Gate {
    Permitted,
    Blocked,
}

/// Credit needed to keep a link busy for one round trip, at least one cell.
pub fn static_credit_size(link: &Link) -> u64 {
    let rtt = 2 * link.propagation_delay.0 as u128;
    let num = link.rate.numer() as u128 * rtt;
    let den = link.rate.denom() as u128 * 1_000_000;
    (num.div_ceil(den) as u64).max(1)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct VcCredit {
    pub balance: u64,
    /// Target buffer allocation at the receiver.
    pub allocation: u64,
    pub sent: u64,
    pub received: u64,
    pub forwarded: u64,
    pub granted: u64,
    pub credits_in_flight: u64,
}

impl VcCredit {
    /// Cells authorized but not yet forwarded by the receiver: `G - F`.
    pub fn outstanding(&self) -> u64 {
        self.granted - self.forwarded
    }

    /// Allocation actually in force; a shrunken target only takes effect
    /// as outstanding credit drains.
    pub fn effective_allocation(&self) -> u64 {
        self.allocation.max(self.outstanding())
    }

    pub fn buffered(&self) -> u64 {
        self.received - self.forwarded
    }
}

#[derive(Clone, Debug)]
pub struct CreditState {
    batch: u64,
    vcs: BTreeMap<VcId, VcCredit>,
}

impl CreditState {
    /// `batch` is the number of forwarded cells that triggers a credit cell.
    pub fn new(batch: u64) -> Self {
        CreditState {
            batch: batch.max(1),
            vcs: BTreeMap::new(),
        }
    }

    /// Registers `vc` with an initial window of `allocation` credits.
    pub fn register(&mut self, vc: VcId, allocation: u64) {
        self.vcs.insert(
            vc,
            VcCredit {
                balance: allocation,
                allocation,
                granted: allocation,
                ..Default::default()
            },
        );
    }

    pub fn vc(&self, vc: VcId) -> Result<&VcCredit, CreditError> {
        self.vcs.get(&vc).ok_or(CreditError::UnknownVc(vc))
    }

    fn vc_mut(&mut self, vc: VcId) -> Result<&mut VcCredit, CreditError> {
        self.vcs.get_mut(&vc).ok_or(CreditError::UnknownVc(vc))
    }

    pub fn vcs(&self) -> impl Iterator<Item = (VcId, &VcCredit)> {
        self.vcs.iter().map(|(v, c)| (*v, c))
    }

    pub fn can_send(&self, vc: VcId) -> bool {
        self.vcs.get(&vc).is_some_and(|c| c.balance > 0)
    }

    /// Consumes one credit for a cell about to be sent.
    pub fn send_gate(&mut self, vc: VcId) -> Result<Gate, CreditError> {
        let c = self.vc_mut(vc)?;
        if c.balance == 0 {
            return Ok(Gate::Blocked);
        }
        c.balance -= 1;
        c.sent += 1;
        Ok(Gate::Permitted)
    }

    pub fn on_received(&mut self, vc: VcId) -> Result<(), CreditError> {
        self.vc_mut(vc)?.received += 1;
        Ok(())
    }

    /// The receiver passed one cell on; may produce a credit cell.
    pub fn on_forwarded(&mut self, vc: VcId) -> Result<Option<CreditCell>, CreditError> {
        self.vc_mut(vc)?.forwarded += 1;
        self.poll_grant(vc)
    }

    /// Issues a credit cell once enough room has opened up.
    pub fn poll_grant(&mut self, vc: VcId) -> Result<Option<CreditCell>, CreditError> {
        let batch = self.batch;
        let c = self.vc_mut(vc)?;
        let room = c.allocation.saturating_sub(c.outstanding());
        if room == 0 || room < batch.min(c.allocation) {
            return Ok(None);
        }
        c.granted += room;
        c.credits_in_flight += room;
        Ok(Some(CreditCell {
            vc,
            granted: room,
            receiver_count: c.received,
        }))
    }

    pub fn on_credit(&mut self, cell: &CreditCell) -> Result<(), CreditError> {
        let c = self.vc_mut(cell.vc)?;
        c.balance += cell.granted;
        c.credits_in_flight -= cell.granted;
        Ok(())
    }

    /// Reconciles the sender's and receiver's counts. Cells neither
    /// received nor in flight were lost; the receiver accounts them as
    /// forwarded so their credits are reissued. Returns the loss.
    pub fn resync(
        &mut self,
        vc: VcId,
        sender_sent: u64,
        receiver_received: u64,
        in_flight: u64,
    ) -> Result<u64, CreditError> {
        if receiver_received + in_flight > sender_sent {
            return Err(CreditError::NegativeLoss {
                sent: sender_sent,
                received: receiver_received,
                in_flight,
            });
        }
        let lost = sender_sent - receiver_received - in_flight;
        let c = self.vc_mut(vc)?;
        c.received += lost;
        c.forwarded += lost;
        Ok(lost)
    }

    /// Sets a new target allocation. Unused credit the sender holds beyond
    /// it is withdrawn at once; cells already sent keep their buffer
    /// space. Returns the number of credits withdrawn.
    pub fn set_allocation(&mut self, vc: VcId, allocation: u64) -> Result<u64, CreditError> {
        let c = self.vc_mut(vc)?;
        c.allocation = allocation;
        let revoked = c.outstanding().saturating_sub(allocation).min(c.balance);
        c.balance -= revoked;
        c.granted -= revoked;
        Ok(revoked)
    }
}

/// Splits `total_buffer` in proportion to recent usage. Vcs whose share
/// falls below `min_grant`, idle ones included, are pinned at `min_grant`
/// and the rest is split again among the others.
pub fn adaptive_allocate(usage: &[u64], total_buffer: u64, min_grant: u64) -> Result<Vec<u64>, CreditError> {
    let n = usage.len();
    if total_buffer < n as u64 * min_grant {
        return Err(CreditError::InsufficientBuffer {
            total: total_buffer,
            vcs: n,
            min_grant,
        });
    }
    let mut pinned = vec![false; n];
    loop {
        let pool = total_buffer - pinned.iter().filter(|&&p| p).count() as u64 * min_grant;
        let weight: u128 = (0..n).filter(|&i| !pinned[i]).map(|i| usage[i] as u128).sum();
        let shares: Vec<u64> = (0..n)
            .map(|i| match (pinned[i], weight) {
                (true, _) | (false, 0) => min_grant,
                (false, w) => (pool as u128 * usage[i] as u128 / w) as u64,
            })
            .collect();
        let newly: Vec<usize> = (0..n).filter(|&i| !pinned[i] && shares[i] < min_grant).collect();
        if newly.is_empty() || weight == 0 {
            return Ok(shares);
        }
        for i in newly {
            pinned[i] = true;
        }
    }
}

/// Per-vc FIFOs served round-robin among vcs that may send.
#[derive(Clone, Debug, Default)]
pub struct PerVcQueue {
    queues: BTreeMap<VcId, VecDeque<Queued>>,
    order: Vec<VcId>,
    cursor: usize,
    len: usize,
}

impl PerVcQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn len_of(&self, vc: VcId) -> usize {
        self.queues.get(&vc).map_or(0, VecDeque::len)
    }

    pub fn push(&mut self, item: LinkItem, now: SimTime) {
        let vc = item.vc();
        let q = self.queues.entry(vc).or_insert_with(|| {
            self.order.push(vc);
            VecDeque::new()
        });
        q.push_back(Queued { item, since: now });
        self.len += 1;
    }

    /// Next item in round-robin order whose vc passes `eligible`.
    pub fn pop_next(&mut self, mut eligible: impl FnMut(VcId) -> bool) -> Option<Queued> {
        let n = self.order.len();
        for k in 0..n {
            let idx = (self.cursor + k) % n;
            let vc = self.order[idx];
            let q = self.queues.get_mut(&vc).expect("ordered vc has a queue");
            if q.is_empty() || !eligible(vc) {
                continue;
            }
            self.cursor = (idx + 1) % n;
            self.len -= 1;
            return q.pop_front();
        }
        None
    }

    pub fn has_eligible(&self, mut eligible: impl FnMut(VcId) -> bool) -> bool {
        self.queues.iter().any(|(vc, q)| !q.is_empty() && eligible(*vc))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Cell, LinkId, NodeId, Rate};

    fn link(rate: Rate, delay: u64) -> Link {
        Link::new(LinkId(0), rate, SimTime(delay), NodeId(0), NodeId(1)).unwrap()
    }

    #[test]
    fn static_size_examples() {
        assert_eq!(static_credit_size(&link(Rate::cells_per_sec(1_000_000), 500)), 1_000);
        assert_eq!(static_credit_size(&link(Rate::cells_per_sec(1_000_000), 0)), 1);
        // 155 Mbit/s over a 1 ms one-way link: 365566.04 cells/s * 2 ms.
        assert_eq!(static_credit_size(&link(Rate::from_mbps(155.0), 1_000)), 732);
    }

    #[test]
    fn gate_consumes_credit() {
        let mut st = CreditState::new(10);
        st.register(VcId(1), 1);
        assert_eq!(st.send_gate(VcId(1)), Ok(Gate::Permitted));
        assert_eq!(st.vc(VcId(1)).unwrap().balance, 0);
        assert_eq!(st.send_gate(VcId(1)), Ok(Gate::Blocked));
        assert_eq!(st.send_gate(VcId(2)), Err(CreditError::UnknownVc(VcId(2))));
    }

    #[test]
    fn window_limits_cells_without_returns() {
        let mut st = CreditState::new(10);
        st.register(VcId(1), 1_000);
        let mut sent = 0;
        while st.send_gate(VcId(1)).unwrap() == Gate::Permitted {
            sent += 1;
        }
        assert_eq!(sent, 1_000);
    }

    #[test]
    fn credits_return_in_batches() {
        let mut st = CreditState::new(10);
        st.register(VcId(1), 100);
        for _ in 0..25 {
            st.send_gate(VcId(1)).unwrap();
            st.on_received(VcId(1)).unwrap();
        }
        let grants: Vec<u64> = (0..25)
            .filter_map(|_| st.on_forwarded(VcId(1)).unwrap())
            .map(|c| c.granted)
            .collect();
        assert_eq!(grants, vec![10, 10]);
    }

    #[test]
    fn resync_examples() {
        let mut st = CreditState::new(10);
        st.register(VcId(1), 1_000);
        assert_eq!(st.resync(VcId(1), 500, 500, 0), Ok(0));
        assert_eq!(st.resync(VcId(1), 500, 490, 0), Ok(10));
        assert!(matches!(
            st.resync(VcId(1), 500, 501, 0),
            Err(CreditError::NegativeLoss { .. })
        ));
    }

    #[test]
    fn resync_reissues_lost_credit() {
        let mut st = CreditState::new(1);
        st.register(VcId(1), 5);
        for _ in 0..5 {
            st.send_gate(VcId(1)).unwrap();
        }
        // Two cells vanish; the rest arrive and move on.
        for _ in 0..3 {
            st.on_received(VcId(1)).unwrap();
            let credit = st.on_forwarded(VcId(1)).unwrap().unwrap();
            st.on_credit(&credit).unwrap();
        }
        assert_eq!(st.vc(VcId(1)).unwrap().balance, 3);
        assert_eq!(st.resync(VcId(1), 5, 3, 0), Ok(2));
        let credit = st.poll_grant(VcId(1)).unwrap().unwrap();
        assert_eq!(credit.granted, 2);
        st.on_credit(&credit).unwrap();
        assert_eq!(st.vc(VcId(1)).unwrap().balance, 5);
    }

    #[test]
    fn adaptive_examples() {
        assert_eq!(adaptive_allocate(&[300, 100], 4_000, 10), Ok(vec![3_000, 1_000]));
        assert_eq!(adaptive_allocate(&[50, 50], 100, 2), Ok(vec![50, 50]));
        assert_eq!(adaptive_allocate(&[7, 0, 0], 1_000, 2), Ok(vec![996, 2, 2]));
        assert!(matches!(
            adaptive_allocate(&[1, 1], 3, 2),
            Err(CreditError::InsufficientBuffer { .. })
        ));
    }

    #[test]
    fn shrinking_withdraws_unused_credit_only() {
        let vc = VcId(1);
        let mut st = CreditState::new(1);
        st.register(vc, 10);
        for _ in 0..4 {
            st.send_gate(vc).unwrap();
        }
        // 4 cells out, 6 credits unused: shrinking to 5 leaves 1 to spend.
        assert_eq!(st.set_allocation(vc, 5), Ok(5));
        let c = st.vc(vc).unwrap();
        assert_eq!((c.balance, c.granted, c.outstanding()), (1, 5, 5));
        // Below what is already sent, nothing more can be withdrawn.
        assert_eq!(st.set_allocation(vc, 2), Ok(1));
        assert_eq!(st.vc(vc).unwrap().effective_allocation(), 4);
        assert_eq!(st.set_allocation(vc, 20), Ok(0));
    }

    #[test]
    fn round_robin_skips_blocked_vcs() {
        let mut q = PerVcQueue::new();
        for vc in [1, 2, 3, 1, 2, 3] {
            q.push(LinkItem::Cell(Cell::data(VcId(vc), 0, false, SimTime::ZERO)), SimTime(0));
        }
        let mut order = Vec::new();
        while let Some(c) = q.pop_next(|vc| vc != VcId(2)) {
            order.push(c.item.vc().0);
        }
        assert_eq!(order, vec![1, 3, 1, 3]);
        assert_eq!(q.len(), 2);
        assert_eq!(q.len_of(VcId(2)), 2);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn allocation_respects_floor_and_total(
                usage in proptest::collection::vec(0u64..10_000, 1..12),
                min_grant in 1u64..20,
                extra in 0u64..50_000,
            ) {
                let total = usage.len() as u64 * min_grant + extra;
                let alloc = adaptive_allocate(&usage, total, min_grant).unwrap();
                prop_assert!(alloc.iter().sum::<u64>() <= total);
                prop_assert!(alloc.iter().all(|&a| a >= min_grant));
                for i in 0..usage.len() {
                    if usage[i] == 0 {
                        prop_assert_eq!(alloc[i], min_grant);
                    }
                }
            }

            /// Random interleaving of sends, deliveries, forwards and credit
            /// returns: the buffer never exceeds the allocation and credits
            /// are conserved.
            #[test]
            fn window_protocol_invariants(
                ops in proptest::collection::vec(0u8..4, 1..500),
                allocation in 1u64..40,
                batch in 1u64..12,
            ) {
                let vc = VcId(1);
                let mut st = CreditState::new(batch);
                st.register(vc, allocation);
                let mut wire = 0u64;
                let mut buffer = 0u64;
                let mut credits: VecDeque<CreditCell> = VecDeque::new();
                for op in ops {
                    match op {
                        0 => if st.send_gate(vc).unwrap() == Gate::Permitted { wire += 1; },
                        1 => if wire > 0 { wire -= 1; buffer += 1; st.on_received(vc).unwrap(); },
                        2 => if buffer > 0 {
                            buffer -= 1;
                            if let Some(c) = st.on_forwarded(vc).unwrap() { credits.push_back(c); }
                        },
                        _ => if let Some(c) = credits.pop_front() { st.on_credit(&c).unwrap(); },
                    }
                    let c = st.vc(vc).unwrap();
                    prop_assert!(buffer <= c.allocation);
                    prop_assert_eq!(c.granted - c.sent - c.credits_in_flight, c.balance);
                }
            }
        }
    }
}
