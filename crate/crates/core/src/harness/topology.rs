//! Switch-level topologies. Hosts and their access links are added when a
//! simulation is built, one source and one destination per vc.

use serde::Deserialize;

use crate::engine::SimTime;
use crate::fairness::{max_min, AllocationProblem, AllocationVector};
use crate::model::{LinkId, Rate, VcId};

use super::config::{invalid, ConfigError, TopologyConfig, VcOverride};

#[derive(Clone, Debug, PartialEq)]
pub struct TrunkLink {
    pub from: usize,
    pub to: usize,
    pub rate: Rate,
    pub delay: SimTime,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TopoVc {
    pub vc: VcId,
    /// Trunk link indices in path order.
    pub links: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Topology {
    pub switches: usize,
    pub links: Vec<TrunkLink>,
    pub vcs: Vec<TopoVc>,
}

impl Topology {
    pub fn validate(&self) -> Result<(), ConfigError> {
        for (i, l) in self.links.iter().enumerate() {
            if l.from >= self.switches || l.to >= self.switches {
                return Err(invalid(format!("topology.link[{i}]"), "endpoint out of range"));
            }
            if l.from == l.to {
                return Err(invalid(format!("topology.link[{i}]"), "link loops back to its switch"));
            }
            if l.rate.is_zero() {
                return Err(invalid(format!("topology.link[{i}]"), "rate must be positive"));
            }
        }
        if self.vcs.is_empty() {
            return Err(invalid("topology", "no vcs"));
        }
        let mut seen = std::collections::BTreeSet::new();
        for v in &self.vcs {
            let field = format!("topology.vc[{}]", v.vc);
            if !seen.insert(v.vc) {
                return Err(invalid(field, "duplicate vc id"));
            }
            if v.links.is_empty() {
                return Err(invalid(field, "route is empty"));
            }
            if let Some(&bad) = v.links.iter().find(|&&l| l >= self.links.len()) {
                return Err(invalid(field, format!("unknown link {bad}")));
            }
            for w in v.links.windows(2) {
                if self.links[w[0]].to != self.links[w[1]].from {
                    return Err(invalid(field, format!("links {} and {} are not adjacent", w[0], w[1])));
                }
            }
            let mut visited = vec![self.links[v.links[0]].from];
            for &l in &v.links {
                if visited.contains(&self.links[l].to) {
                    return Err(invalid(field, "route revisits a switch"));
                }
                visited.push(self.links[l].to);
            }
        }
        Ok(())
    }

    pub fn entry_switch(&self, v: &TopoVc) -> usize {
        self.links[v.links[0]].from
    }

    pub fn exit_switch(&self, v: &TopoVc) -> usize {
        self.links[*v.links.last().expect("validated route")].to
    }

    /// Max-min problem over the trunk links, with optional per-vc caps in
    /// the order of `self.vcs`.
    pub fn allocation_problem(&self, caps: &[Option<Rate>]) -> AllocationProblem {
        let mut p = AllocationProblem::new();
        for (i, l) in self.links.iter().enumerate() {
            p.add_link(LinkId(i), l.rate);
        }
        for (k, v) in self.vcs.iter().enumerate() {
            let links = v.links.iter().map(|&l| LinkId(l)).collect();
            match caps.get(k).copied().flatten() {
                Some(cap) => p.add_capped_vc(v.vc, links, cap),
                None => p.add_vc(v.vc, links),
            };
        }
        p
    }

    pub fn oracle(&self, caps: &[Option<Rate>]) -> Result<AllocationVector, ConfigError> {
        max_min(&self.allocation_problem(caps)).map_err(|e| invalid("topology", e.to_string()))
    }

    pub fn without(mut self, vcs: &[VcId]) -> Self {
        self.vcs.retain(|v| !vcs.contains(&v.vc));
        self
    }
}

fn series(switches: usize, rate: Rate, delay: SimTime) -> Vec<TrunkLink> {
    (0..switches.saturating_sub(1))
        .map(|i| TrunkLink {
            from: i,
            to: i + 1,
            rate,
            delay,
        })
        .collect()
}

/// `n` switches in series. Vcs 1 and 2 enter at the first switch, vc `i`
/// at switch `i - 1`, and every vc leaves after the last switch, so all of
/// them share the final link.
pub fn build_parking_lot(n_switches: usize, link_rate: Rate, link_delay: SimTime) -> Topology {
    assert!(n_switches >= 2, "a parking lot needs at least two switches");
    let links = series(n_switches, link_rate, link_delay);
    let last = links.len();
    let vcs = (1..=n_switches as u32)
        .map(|i| {
            let entry = if i <= 2 { 0 } else { i as usize - 2 };
            TopoVc {
                vc: VcId(i),
                links: (entry..last).collect(),
            }
        })
        .collect();
    Topology {
        switches: n_switches,
        links,
        vcs,
    }
}

/// Three links in series; S1 and S2 use L1, S3 uses L1 and L2, S4 uses L2
/// and L3.
pub fn build_figure3_with(link_rate: Rate, link_delay: SimTime) -> Topology {
    let route = |vc: u32, links: &[usize]| TopoVc {
        vc: VcId(vc),
        links: links.to_vec(),
    };
    Topology {
        switches: 4,
        links: series(4, link_rate, link_delay),
        vcs: vec![route(1, &[0]), route(2, &[0]), route(3, &[0, 1]), route(4, &[1, 2])],
    }
}

pub fn build_figure3() -> Topology {
    build_figure3_with(Rate::from_mbps(150.0), SimTime(100))
}

pub fn build_chain(n_switches: usize, vcs: u32, link_rate: Rate, link_delay: SimTime) -> Topology {
    assert!(n_switches >= 2, "a chain needs at least two switches");
    let links = series(n_switches, link_rate, link_delay);
    let all: Vec<usize> = (0..links.len()).collect();
    Topology {
        switches: n_switches,
        links,
        vcs: (1..=vcs)
            .map(|v| TopoVc {
                vc: VcId(v),
                links: all.clone(),
            })
            .collect(),
    }
}

pub fn build_bottleneck(vcs: u32, link_rate: Rate, link_delay: SimTime) -> Topology {
    build_chain(2, vcs, link_rate, link_delay)
}

pub fn from_config(cfg: &TopologyConfig) -> Result<Topology, ConfigError> {
    let rate = |mbps: f64, field: &str| {
        if mbps > 0.0 && mbps.is_finite() {
            Ok(Rate::from_mbps(mbps))
        } else {
            Err(invalid(field, "link rate must be positive"))
        }
    };
    let topo = match cfg {
        TopologyConfig::ParkingLot {
            switches,
            link_mbps,
            link_delay_us,
        } => {
            if *switches < 2 {
                return Err(invalid("topology.switches", "need at least 2"));
            }
            build_parking_lot(*switches, rate(*link_mbps, "topology.link_mbps")?, SimTime(*link_delay_us))
        }
        TopologyConfig::Figure3 {
            link_mbps,
            link_delay_us,
            without,
        } => {
            let drop: Vec<VcId> = without.iter().map(|&v| VcId(v)).collect();
            build_figure3_with(rate(*link_mbps, "topology.link_mbps")?, SimTime(*link_delay_us)).without(&drop)
        }
        TopologyConfig::Chain {
            switches,
            vcs,
            link_mbps,
            link_delay_us,
        } => {
            if *switches < 2 {
                return Err(invalid("topology.switches", "need at least 2"));
            }
            build_chain(*switches, *vcs, rate(*link_mbps, "topology.link_mbps")?, SimTime(*link_delay_us))
        }
        TopologyConfig::Bottleneck {
            vcs,
            link_mbps,
            link_delay_us,
        } => build_bottleneck(*vcs, rate(*link_mbps, "topology.link_mbps")?, SimTime(*link_delay_us)),
        TopologyConfig::Inline { links, vcs } => {
            let switches = links.iter().flat_map(|l| [l.from, l.to]).max().map_or(0, |m| m + 1);
            let mut trunk = Vec::new();
            for (i, l) in links.iter().enumerate() {
                trunk.push(TrunkLink {
                    from: l.from,
                    to: l.to,
                    rate: rate(l.mbps, &format!("topology.link[{i}].mbps"))?,
                    delay: SimTime(l.delay_us),
                });
            }
            Topology {
                switches,
                links: trunk,
                vcs: vcs
                    .iter()
                    .map(|v| TopoVc {
                        vc: VcId(v.id),
                        links: v.links.clone(),
                    })
                    .collect(),
            }
        }
    };
    topo.validate()?;
    Ok(topo)
}

/// Input of the standalone oracle: a topology plus optional peak rates.
/// Any other keys of a full scenario file are ignored.
#[derive(Clone, Debug, Deserialize)]
pub struct TopologyFile {
    pub topology: TopologyConfig,
    #[serde(default)]
    pub vc: Vec<VcOverride>,
}

impl TopologyFile {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    /// Max-min allocation in Mbit/s, vcs in topology order.
    pub fn oracle_mbps(&self) -> Result<Vec<(VcId, f64)>, ConfigError> {
        let topo = from_config(&self.topology)?;
        let caps: Vec<Option<Rate>> = topo
            .vcs
            .iter()
            .map(|v| {
                self.vc
                    .iter()
                    .find(|o| o.id == v.vc.0)
                    .and_then(|o| o.pcr_mbps)
                    .map(Rate::from_mbps)
            })
            .collect();
        let alloc = topo.oracle(&caps)?;
        Ok(alloc
            .rates
            .iter()
            .zip(alloc.to_mbps())
            .map(|((vc, _), mbps)| (*vc, crate::fairness::to_f64(mbps)))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fairness::Exact;

    fn mbps(topo: &Topology, caps: &[Option<Rate>]) -> Vec<Exact> {
        topo.oracle(caps).unwrap().to_mbps()
    }

    #[test]
    fn figure3_oracle() {
        let got = mbps(&build_figure3(), &[]);
        let expect: Vec<Exact> = [50, 50, 50, 100].iter().map(|&x| Exact::from_integer(x)).collect();
        assert_eq!(got, expect);
    }

    #[test]
    fn figure3_without_s3() {
        let topo = build_figure3().without(&[VcId(3)]);
        let got = mbps(&topo, &[]);
        let expect: Vec<Exact> = [75, 75, 150].iter().map(|&x| Exact::from_integer(x)).collect();
        assert_eq!(got, expect);
    }

    #[test]
    fn figure3_capped() {
        let cap = Some(Rate::from_mbps(10.0));
        let got = mbps(&build_figure3(), &[cap; 4]);
        assert!(got.iter().all(|&x| x == Exact::from_integer(10)));
    }

    #[test]
    fn parking_lot_shapes() {
        let p = build_parking_lot(3, Rate::from_mbps(150.0), SimTime(10));
        assert_eq!(p.links.len(), 2);
        let routes: Vec<Vec<usize>> = p.vcs.iter().map(|v| v.links.clone()).collect();
        assert_eq!(routes, vec![vec![0, 1], vec![0, 1], vec![1]]);
        let got = mbps(&p, &[]);
        assert!(got.iter().all(|&x| x == Exact::from_integer(50)));

        let p2 = build_parking_lot(2, Rate::from_mbps(150.0), SimTime(10));
        assert_eq!(p2.vcs.len(), 2);
        assert!(p2.vcs.iter().all(|v| v.links == vec![0]));
    }

    #[test]
    fn generated_topologies_validate() {
        let r = Rate::from_mbps(150.0);
        for n in 2..8 {
            build_parking_lot(n, r, SimTime(1)).validate().unwrap();
            build_chain(n, 3, r, SimTime(1)).validate().unwrap();
        }
        build_figure3().validate().unwrap();
        build_bottleneck(4, r, SimTime(1)).validate().unwrap();
    }

    #[test]
    fn disconnected_route_is_rejected() {
        let mut t = build_chain(4, 1, Rate::from_mbps(1.0), SimTime(1));
        t.vcs[0].links = vec![0, 2];
        assert!(t.validate().is_err());
    }

    #[test]
    fn oracle_file_removing_s3() {
        let f = TopologyFile::parse("[topology]\nkind = \"figure3\"\nwithout = [3]\n").unwrap();
        let got = f.oracle_mbps().unwrap();
        assert_eq!(got.len(), 3);
        assert!((got[2].1 - 150.0).abs() < 1e-9);
    }
}
