//! Off-line oracles: max-min allocation, the fairness index, the MIT
//! fair-share iteration and the EFCI beat-down probability.
//!
//! Allocation arithmetic is exact (`Ratio<i128>`), so the water-filling
//! loop compares shares without tolerances.

use std::collections::BTreeMap;

use num_rational::Ratio;
use num_traits::{ToPrimitive, Zero};
use thiserror::Error;

use crate::model::{LinkId, Rate, VcId};

pub type Exact = Ratio<i128>;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FairnessError {
    #[error("invalid allocation problem: {0}")]
    InvalidProblem(String),
    #[error("optimal allocation of vc at index {0} is zero")]
    DegenerateOptimal(usize),
    #[error("allocation vectors differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AllocationProblem {
    pub links: Vec<(LinkId, Exact)>,
    pub vcs: Vec<(VcId, Vec<LinkId>)>,
    /// Per-vc demand cap, aligned with `vcs`.
    pub demands: Vec<Option<Exact>>,
}

impl AllocationProblem {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_link(&mut self, id: LinkId, capacity: Rate) -> &mut Self {
        self.links.push((id, capacity.to_exact()));
        self
    }

    pub fn add_vc(&mut self, vc: VcId, links: Vec<LinkId>) -> &mut Self {
        self.vcs.push((vc, links));
        self.demands.push(None);
        self
    }

    pub fn add_capped_vc(&mut self, vc: VcId, links: Vec<LinkId>, cap: Rate) -> &mut Self {
        self.vcs.push((vc, links));
        self.demands.push(Some(cap.to_exact()));
        self
    }

    pub fn validate(&self) -> Result<(), FairnessError> {
        let err = |m: String| Err(FairnessError::InvalidProblem(m));
        if self.demands.len() != self.vcs.len() {
            return err("demand list does not match vc list".into());
        }
        let mut known = BTreeMap::new();
        for &(id, cap) in &self.links {
            if cap <= Exact::zero() {
                return err(format!("link {} has non-positive capacity", id.0));
            }
            if known.insert(id, cap).is_some() {
                return err(format!("link {} listed twice", id.0));
            }
        }
        for (vc, links) in &self.vcs {
            if links.is_empty() {
                return err(format!("vc {vc} traverses no links"));
            }
            if let Some(l) = links.iter().find(|l| !known.contains_key(l)) {
                return err(format!("vc {vc} uses unknown link {}", l.0));
            }
        }
        if let Some(d) = self.demands.iter().flatten().find(|d| **d < Exact::zero()) {
            return err(format!("negative demand {d}"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AllocationVector {
    pub rates: Vec<(VcId, Exact)>,
}

impl AllocationVector {
    pub fn get(&self, vc: VcId) -> Option<Exact> {
        self.rates.iter().find(|(v, _)| *v == vc).map(|&(_, r)| r)
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.rates.iter().map(|(_, r)| to_f64(*r)).collect()
    }

    /// Rates in Mbit/s, exact.
    pub fn to_mbps(&self) -> Vec<Exact> {
        let factor = Exact::new(crate::model::CELL_BITS as i128, 1_000_000);
        self.rates.iter().map(|(_, r)| r * factor).collect()
    }
}

pub fn to_f64(x: Exact) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

/// The max-min fair allocation. Repeatedly finds the link offering the
/// smallest equal share to its unfrozen vcs, freezes them at that share and
/// removes the capacity they use. A demand cap below the current smallest
/// share freezes its vc first.
pub fn max_min(problem: &AllocationProblem) -> Result<AllocationVector, FairnessError> {
    problem.validate()?;
    let mut links: Vec<(LinkId, Exact)> = problem.links.clone();
    links.sort_by_key(|&(id, _)| id);
    let mut remaining: BTreeMap<LinkId, Exact> = links.iter().copied().collect();
    let n = problem.vcs.len();
    let mut alloc: Vec<Option<Exact>> = vec![None; n];

    let freeze = |i: usize, rate: Exact, alloc: &mut Vec<Option<Exact>>, remaining: &mut BTreeMap<LinkId, Exact>| {
        alloc[i] = Some(rate);
        for l in &problem.vcs[i].1 {
            *remaining.get_mut(l).expect("validated") -= rate;
        }
    };

    while alloc.iter().any(Option::is_none) {
        let mut best: Option<(LinkId, Exact)> = None;
        for &(id, _) in &links {
            let users = (0..n)
                .filter(|&i| alloc[i].is_none() && problem.vcs[i].1.contains(&id))
                .count();
            if users == 0 {
                continue;
            }
            let share = remaining[&id] / Exact::from_integer(users as i128);
            if best.is_none_or(|(_, b)| share < b) {
                best = Some((id, share));
            }
        }
        let (link, share) = best.expect("every unfrozen vc crosses a link");
        let capped = (0..n)
            .filter(|&i| alloc[i].is_none())
            .filter_map(|i| problem.demands[i].map(|d| (i, d)))
            .min_by(|a, b| a.1.cmp(&b.1));
        match capped {
            Some((_, cap)) if cap <= share => {
                for i in 0..n {
                    if alloc[i].is_none() && problem.demands[i] == Some(cap) {
                        freeze(i, cap, &mut alloc, &mut remaining);
                    }
                }
            }
            _ => {
                for i in 0..n {
                    if alloc[i].is_none() && problem.vcs[i].1.contains(&link) {
                        freeze(i, share, &mut alloc, &mut remaining);
                    }
                }
            }
        }
    }

    Ok(AllocationVector {
        rates: problem
            .vcs
            .iter()
            .zip(alloc)
            .map(|((vc, _), r)| (*vc, r.expect("all frozen")))
            .collect(),
    })
}

/// Jain's index `(Σx)² / (n Σx²)` over `xᵢ = actualᵢ / optimalᵢ`.
/// An all-zero actual vector counts as perfectly even.
pub fn fairness_index(actual: &[f64], optimal: &[f64]) -> Result<f64, FairnessError> {
    if actual.len() != optimal.len() {
        return Err(FairnessError::LengthMismatch(actual.len(), optimal.len()));
    }
    if actual.is_empty() {
        return Err(FairnessError::InvalidProblem("no allocations".into()));
    }
    if let Some(i) = optimal.iter().position(|&o| o <= 0.0) {
        return Err(FairnessError::DegenerateOptimal(i));
    }
    let (sum, sum_sq) = actual
        .iter()
        .zip(optimal)
        .map(|(a, o)| a / o)
        .fold((0.0, 0.0), |(s, q), x| (s + x, q + x * x));
    if sum_sq == 0.0 {
        return Ok(1.0);
    }
    Ok(sum * sum / (actual.len() as f64 * sum_sq))
}

#[derive(Clone, Debug, PartialEq)]
pub struct MitTrace {
    pub fair_share: Exact,
    /// Times the fair share was recomputed after the initial `bw / n`.
    pub recomputations: usize,
    /// Fair share after each pass, starting with `bw / n`.
    pub shares: Vec<Exact>,
    /// Size of the underloading set after each pass.
    pub underloading: Vec<usize>,
}

/// Runs the MIT fair-share iteration and records every pass.
pub fn mit_fair_share_trace(link_bw: Exact, vc_rates: &[Exact]) -> MitTrace {
    let n = vc_rates.len() as i128;
    let mut fair = link_bw / Exact::from_integer(n.max(1));
    let mut shares = vec![fair];
    let mut sizes = vec![0];
    let mut under = 0usize;
    loop {
        let below: Vec<&Exact> = vc_rates.iter().filter(|&&r| r < fair).collect();
        if below.len() == under || below.len() == vc_rates.len() {
            sizes.push(below.len());
            break;
        }
        under = below.len();
        let used: Exact = below.into_iter().sum();
        fair = (link_bw - used) / Exact::from_integer(n - under as i128);
        shares.push(fair);
        sizes.push(under);
    }
    sizes.remove(0);
    MitTrace {
        fair_share: fair,
        recomputations: shares.len() - 1,
        shares,
        underloading: sizes,
    }
}

pub fn mit_fair_share(link_bw: Exact, vc_rates: &[Exact]) -> Exact {
    mit_fair_share_trace(link_bw, vc_rates).fair_share
}

/// Chance that at least one of `hops` independent marks with probability
/// `p` lands on a cell.
pub fn beat_down_probability(p: f64, hops: u32) -> f64 {
    1.0 - (1.0 - p).powi(hops as i32)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(n: i128) -> Exact {
        Exact::from_integer(n)
    }

    /// Global water level rises; at each breakpoint every vc that hits its
    /// cap or sits on a saturated link stops. Written without the per-link
    /// share search used by `max_min`.
    fn progressive_filling(p: &AllocationProblem) -> Vec<Exact> {
        let n = p.vcs.len();
        let mut rate = vec![q(0); n];
        let mut active = vec![true; n];
        while active.iter().any(|&a| a) {
            let mut step: Option<Exact> = None;
            let mut consider = |s: Exact| {
                if step.is_none_or(|b| s < b) {
                    step = Some(s);
                }
            };
            for &(id, cap) in &p.links {
                let load: Exact = (0..n).filter(|&i| p.vcs[i].1.contains(&id)).map(|i| rate[i]).sum();
                let k = (0..n).filter(|&i| active[i] && p.vcs[i].1.contains(&id)).count();
                if k > 0 {
                    consider((cap - load) / q(k as i128));
                }
            }
            for i in 0..n {
                if let (true, Some(d)) = (active[i], p.demands[i]) {
                    consider(d - rate[i]);
                }
            }
            let step = step.unwrap();
            for i in 0..n {
                if active[i] {
                    rate[i] += step;
                }
            }
            for i in 0..n {
                if !active[i] {
                    continue;
                }
                let capped = p.demands[i].is_some_and(|d| rate[i] >= d);
                let saturated = p.vcs[i].1.iter().any(|l| {
                    let cap = p.links.iter().find(|(id, _)| id == l).unwrap().1;
                    let load: Exact = (0..n).filter(|&j| p.vcs[j].1.contains(l)).map(|j| rate[j]).sum();
                    load >= cap
                });
                if capped || saturated {
                    active[i] = false;
                }
            }
        }
        rate
    }

    fn figure3() -> AllocationProblem {
        let mut p = AllocationProblem::new();
        let c = Rate::cells_per_sec(150);
        p.add_link(LinkId(1), c).add_link(LinkId(2), c).add_link(LinkId(3), c);
        p.add_vc(VcId(1), vec![LinkId(1)])
            .add_vc(VcId(2), vec![LinkId(1)])
            .add_vc(VcId(3), vec![LinkId(1), LinkId(2)])
            .add_vc(VcId(4), vec![LinkId(2), LinkId(3)]);
        p
    }

    #[test]
    fn figure3_allocation() {
        let v = max_min(&figure3()).unwrap();
        let got: Vec<Exact> = v.rates.iter().map(|r| r.1).collect();
        assert_eq!(got, vec![q(50), q(50), q(50), q(100)]);
    }

    #[test]
    fn single_link_equal_split() {
        let mut p = AllocationProblem::new();
        p.add_link(LinkId(0), Rate::cells_per_sec(100));
        for v in 0..3 {
            p.add_vc(VcId(v), vec![LinkId(0)]);
        }
        let v = max_min(&p).unwrap();
        assert!(v.rates.iter().all(|r| r.1 == Exact::new(100, 3)));
    }

    #[test]
    fn caps_bind_first() {
        let mut p = AllocationProblem::new();
        p.add_link(LinkId(0), Rate::cells_per_sec(100));
        p.add_capped_vc(VcId(0), vec![LinkId(0)], Rate::cells_per_sec(10));
        p.add_vc(VcId(1), vec![LinkId(0)]);
        let v = max_min(&p).unwrap();
        assert_eq!(v.get(VcId(0)), Some(q(10)));
        assert_eq!(v.get(VcId(1)), Some(q(90)));
    }

    #[test]
    fn rejects_unknown_links() {
        let mut p = AllocationProblem::new();
        p.add_link(LinkId(0), Rate::cells_per_sec(1));
        p.add_vc(VcId(0), vec![LinkId(9)]);
        assert!(matches!(max_min(&p), Err(FairnessError::InvalidProblem(_))));
    }

    #[test]
    fn index_examples() {
        assert_eq!(fairness_index(&[3.0, 7.0], &[3.0, 7.0]).unwrap(), 1.0);
        assert!((fairness_index(&[0.5, 1.0], &[1.0, 1.0]).unwrap() - 0.9).abs() < 1e-12);
        for n in 1..10 {
            let mut a = vec![0.0; n];
            a[0] = 1.0;
            let idx = fairness_index(&a, &vec![1.0; n]).unwrap();
            assert!((idx - 1.0 / n as f64).abs() < 1e-12);
        }
        assert_eq!(fairness_index(&[1.0], &[0.0]), Err(FairnessError::DegenerateOptimal(0)));
    }

    #[test]
    fn mit_examples() {
        assert_eq!(mit_fair_share(q(30), &[q(10), q(10), q(10)]), q(10));
        let t = mit_fair_share_trace(q(65), &[q(5), q(100), q(100)]);
        assert_eq!(t.shares, vec![Exact::new(65, 3), q(30)]);
        assert_eq!(t.recomputations, 1);
    }

    #[test]
    fn mit_can_need_more_than_two_recomputations() {
        // Each recomputation lifts the share just past the next rate.
        let rates = [
            Exact::new(190, 10),
            Exact::new(201, 10),
            Exact::new(2029, 100),
            Exact::new(203, 10),
            q(100),
        ];
        let t = mit_fair_share_trace(q(100), &rates);
        assert_eq!(t.recomputations, 4);
    }

    #[test]
    fn beat_down_examples() {
        assert_eq!(beat_down_probability(0.0, 5), 0.0);
        assert_eq!(beat_down_probability(1.0, 5), 1.0);
        assert!((beat_down_probability(0.1, 3) - 0.271).abs() < 1e-12);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn problem() -> impl Strategy<Value = AllocationProblem> {
            (1usize..=4, 1usize..=6).prop_flat_map(|(nl, nv)| {
                (
                    proptest::collection::vec(1u64..200, nl),
                    proptest::collection::vec(
                        (proptest::collection::vec(any::<bool>(), nl), proptest::option::of(1u64..150)),
                        nv,
                    ),
                )
                    .prop_map(move |(caps, vcs)| {
                        let mut p = AllocationProblem::new();
                        for (i, c) in caps.iter().enumerate() {
                            p.add_link(LinkId(i), Rate::cells_per_sec(*c));
                        }
                        for (v, (mask, cap)) in vcs.into_iter().enumerate() {
                            let mut links: Vec<LinkId> =
                                (0..nl).filter(|&i| mask[i]).map(LinkId).collect();
                            if links.is_empty() {
                                links.push(LinkId(v % nl));
                            }
                            match cap {
                                Some(c) => p.add_capped_vc(VcId(v as u32), links, Rate::cells_per_sec(c)),
                                None => p.add_vc(VcId(v as u32), links),
                            };
                        }
                        p
                    })
            })
        }

        proptest! {
            #[test]
            fn matches_progressive_filling(p in problem()) {
                let got: Vec<Exact> = max_min(&p).unwrap().rates.into_iter().map(|r| r.1).collect();
                prop_assert_eq!(got, progressive_filling(&p));
            }

            #[test]
            fn feasible_and_bottlenecked(p in problem()) {
                let v = max_min(&p).unwrap();
                let n = p.vcs.len();
                let load = |l: &LinkId| -> Exact {
                    (0..n).filter(|&i| p.vcs[i].1.contains(l)).map(|i| v.rates[i].1).sum()
                };
                for (id, cap) in &p.links {
                    prop_assert!(load(id) <= *cap);
                }
                for i in 0..n {
                    let x = v.rates[i].1;
                    if p.demands[i] == Some(x) {
                        continue;
                    }
                    let ok = p.vcs[i].1.iter().any(|l| {
                        let cap = p.links.iter().find(|(id, _)| id == l).unwrap().1;
                        load(l) == cap
                            && (0..n).filter(|&j| p.vcs[j].1.contains(l)).all(|j| v.rates[j].1 <= x)
                    });
                    prop_assert!(ok, "vc {} has no bottleneck", i);
                }
            }

            #[test]
            fn index_in_range_and_scale_free(
                xs in proptest::collection::vec(0.0f64..100.0, 1..10),
                k in 0.01f64..100.0,
            ) {
                let opt: Vec<f64> = xs.iter().map(|x| x + 1.0).collect();
                let idx = fairness_index(&xs, &opt).unwrap();
                prop_assert!(idx > 0.0 && idx <= 1.0 + 1e-12);
                let scaled: Vec<f64> = xs.iter().map(|x| x * k).collect();
                let opt_scaled: Vec<f64> = opt.iter().map(|x| x * k).collect();
                prop_assert!((fairness_index(&scaled, &opt_scaled).unwrap() - idx).abs() < 1e-9);
            }

            #[test]
            fn index_of_self_is_one(xs in proptest::collection::vec(0.001f64..1e6, 1..10)) {
                prop_assert!((fairness_index(&xs, &xs).unwrap() - 1.0).abs() < 1e-12);
            }

            #[test]
            fn mit_fixed_point(
                bw in 1i128..1000,
                rates in proptest::collection::vec(0i128..500, 1..8),
            ) {
                let rates: Vec<Exact> = rates.into_iter().map(Exact::from_integer).collect();
                let t = mit_fair_share_trace(Exact::from_integer(bw), &rates);
                prop_assert!(t.underloading.windows(2).all(|w| w[0] <= w[1]));
                let under: Vec<&Exact> = rates.iter().filter(|&&r| r < t.fair_share).collect();
                if under.len() < rates.len() && !under.is_empty() {
                    let used: Exact = under.iter().copied().sum();
                    let expect = (Exact::from_integer(bw) - used)
                        / Exact::from_integer((rates.len() - under.len()) as i128);
                    prop_assert_eq!(t.fair_share, expect);
                }
            }
        }
    }
}
