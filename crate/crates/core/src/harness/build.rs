//! Turns a validated scenario into a simulation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::engine::{CreditSpec, SimSpec, SimTime, TrunkSpec, VcSpec, ACCESS_DELAY};
use crate::model::{Rate, TrafficContract, VcId};
use crate::schemes::{
    BecnSwitchState, CapcSwitchState, CongestionDetector, EfciSwitch, EprcaSwitchState, OsuSwitchState, PortControl,
    SchemeKind,
};
use crate::traffic::{NonConformingAction, SourceModel};

use super::config::{invalid, ConfigError, CreditCost, ModelKind, PoliceMode, ScenarioConfig, VcOverride};
use super::topology::{from_config, Topology};

/// What a vc should reach: its max-min share and, for schemes that aim
/// below full utilization, the correspondingly scaled rate.
#[derive(Clone, Debug, PartialEq)]
pub struct VcTarget {
    pub vc: VcId,
    pub start: SimTime,
    pub oracle_mbps: f64,
    pub target_mbps: f64,
}

#[derive(Clone, Debug)]
pub struct Scenario {
    pub topology: Topology,
    pub spec: SimSpec,
    pub targets: Vec<VcTarget>,
}

/// Seed offset for the stream that draws source phases, so changing the
/// number of random events inside the run does not shift them.
const PHASE_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;

pub fn build(cfg: &ScenarioConfig) -> Result<Scenario, ConfigError> {
    cfg.validate()?;
    let topo = from_config(&cfg.topology)?;
    for o in &cfg.vcs {
        if !topo.vcs.iter().any(|v| v.vc.0 == o.id) {
            return Err(invalid(format!("vc[{}]", o.id), "no such vc in the topology"));
        }
    }
    let scheme = cfg.scheme;
    let mut phase_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ PHASE_STREAM);
    let none = VcOverride::default();

    let mut vcs = Vec::with_capacity(topo.vcs.len());
    let mut caps = Vec::with_capacity(topo.vcs.len());
    for tv in &topo.vcs {
        let o = cfg.vcs.iter().find(|o| o.id == tv.vc.0).unwrap_or(&none);
        let field = |name: &str| format!("vc[{}].{name}", tv.vc.0);
        let route_max = tv.links.iter().map(|&l| topo.links[l].rate).max().expect("validated route");
        let pcr = match o.pcr_mbps {
            Some(m) if m > 0.0 && m.is_finite() => Rate::from_mbps(m),
            Some(_) => return Err(invalid(field("pcr_mbps"), "must be positive")),
            None => route_max,
        };
        let mut contract = TrafficContract::new(pcr)?;
        if let Some(m) = o.mcr_mbps {
            contract = contract.with_mcr(Rate::from_mbps(m))?;
        }
        if let Some(c) = o.cdvt_us {
            contract = contract.with_cdvt(SimTime(c));
        }
        match (o.scr_mbps, o.mbs) {
            (Some(scr), Some(mbs)) => contract = contract.with_scr(Rate::from_mbps(scr), mbs)?,
            (None, None) => {}
            _ => return Err(invalid(field("scr_mbps"), "scr_mbps and mbs go together")),
        }
        let start = match o.start_ms {
            Some(ms) if ms >= 0.0 && ms.is_finite() => SimTime((ms * 1e3).round() as u64),
            Some(_) => return Err(invalid(field("start_ms"), "must be non-negative")),
            None => SimTime::ZERO,
        };
        let jitter = cfg.traffic.phase_jitter_us;
        let mut phase = if jitter > 0.0 { phase_rng.gen_range(0.0..jitter) } else { 0.0 };
        let model = match o.model.unwrap_or(cfg.traffic.model) {
            ModelKind::Persistent if start > SimTime::ZERO => SourceModel::Staggered { start },
            ModelKind::Persistent => SourceModel::Persistent,
            ModelKind::Bursty => {
                phase += start.0 as f64;
                let burst_len = o.burst_len.unwrap_or(cfg.traffic.burst_len);
                if burst_len == 0 {
                    return Err(invalid(field("burst_len"), "must be at least 1"));
                }
                SourceModel::Bursty {
                    burst_len,
                    idle: SimTime(o.idle_us.unwrap_or(cfg.traffic.idle_us)),
                    loop_mode: o.loop_mode.unwrap_or(cfg.traffic.loop_mode),
                }
            }
        };
        let pcr_cells = pcr.as_f64();
        let (air, rdf) = if scheme.is_explicit_rate() {
            (pcr_cells, 1.0)
        } else if matches!(scheme, SchemeKind::EfciPrca | SchemeKind::Eprca) {
            (cfg.source.air_fraction * pcr_cells, cfg.source.rdf)
        } else {
            (0.0, 1.0)
        };
        let initial_acr = match o.initial_acr_mbps {
            Some(m) => Rate::from_mbps(m).as_f64(),
            None if scheme.is_credit() => pcr_cells,
            None => cfg.source.initial_acr_fraction * pcr_cells,
        };
        let police = match o.police.unwrap_or(PoliceMode::Off) {
            PoliceMode::Off => None,
            PoliceMode::Drop => Some(NonConformingAction::Drop),
            PoliceMode::Tag => Some(NonConformingAction::TagClp),
        };
        caps.push(Some(pcr));
        vcs.push(VcSpec {
            vc: tv.vc,
            route: tv.links.clone(),
            contract,
            model,
            packet_len: o.packet_len.unwrap_or(cfg.traffic.packet_len).max(1),
            phase_us: phase,
            initial_acr,
            air,
            rdf,
            nrm: cfg.source.nrm,
            police,
        });
    }

    let controls = topo
        .links
        .iter()
        .enumerate()
        .map(|(i, link)| control_for(cfg, &topo, i, link.rate))
        .collect();

    let oracle = topo.oracle(&caps)?;
    let oracle_cells: Vec<f64> = oracle.to_f64();
    let scale = match scheme {
        SchemeKind::Osu | SchemeKind::OsuCount => cfg.osu.target_utilization,
        SchemeKind::Capc => cfg.capc.target_utilization,
        _ => 1.0,
    };
    let targets = vcs
        .iter()
        .zip(&oracle_cells)
        .map(|(v, &o)| {
            let mbps = crate::model::cells_to_mbps(o);
            VcTarget {
                vc: v.vc,
                start: match v.model {
                    SourceModel::Staggered { start } => start,
                    _ => SimTime::ZERO,
                },
                oracle_mbps: mbps,
                target_mbps: mbps * scale,
            }
        })
        .collect();

    let credit = scheme.is_credit().then(|| CreditSpec {
        batch: cfg.credit.batch,
        resync_round_trips: cfg.credit.resync_round_trips,
        realloc_round_trips: cfg.credit.realloc_round_trips,
        min_grant: cfg.credit.min_grant,
        free_credits: cfg.credit.cost == CreditCost::Free,
        adaptive: scheme == SchemeKind::CreditAdaptive,
    });

    let spec = SimSpec {
        scheme,
        switches: topo.switches,
        trunks: topo
            .links
            .iter()
            .map(|l| TrunkSpec {
                from: l.from,
                to: l.to,
                rate: l.rate,
                delay: l.delay,
            })
            .collect(),
        vcs,
        controls,
        queue_capacity: (cfg.queue.capacity > 0).then_some(cfg.queue.capacity),
        epd_threshold: cfg.queue.epd_threshold,
        becn_recovery: SimTime(cfg.becn.recovery_us),
        credit,
        forced_efci: if scheme == SchemeKind::EfciPrca {
            cfg.efci.forced_probability
        } else {
            None
        },
        link_loss: cfg.faults.link_loss_probability,
        seed: cfg.seed,
        metric_interval: SimTime(cfg.metric_interval_us),
        oracle: Some(oracle_cells),
    };
    Ok(Scenario {
        topology: topo,
        spec,
        targets,
    })
}

fn control_for(cfg: &ScenarioConfig, topo: &Topology, trunk: usize, rate: Rate) -> PortControl {
    let users: Vec<_> = topo.vcs.iter().filter(|v| v.links.contains(&trunk)).collect();
    let n = users.len().max(1);
    let cells = rate.as_f64();
    match cfg.scheme {
        SchemeKind::EfciPrca if cfg.efci.forced_probability.is_some() => PortControl::Passive,
        SchemeKind::EfciPrca => PortControl::Efci(EfciSwitch::new(cfg.efci.threshold)),
        SchemeKind::Eprca => {
            let e = &cfg.eprca;
            let detector = CongestionDetector::new(e.detector, e.queue_threshold, e.growth_window);
            PortControl::Eprca(EprcaSwitchState::new(cells / n as f64, e.alpha, e.sw_dpf, detector))
        }
        SchemeKind::Osu | SchemeKind::OsuCount => {
            let o = &cfg.osu;
            let mut st = OsuSwitchState::new(
                o.target_utilization * cells,
                SimTime(o.interval_us),
                o.delta,
                o.mode(cfg.scheme),
            );
            st.band_rule = o.band_rule;
            st.rate_source = o.rate_source;
            PortControl::Osu(st)
        }
        SchemeKind::Capc => {
            let c = &cfg.capc;
            let mut st = CapcSwitchState::new(c.target_utilization * cells, SimTime(c.interval_us), n, c.queue_threshold);
            st.rup = c.rup;
            st.rdn = c.rdn;
            st.eru = c.eru;
            st.erf = c.erf;
            PortControl::Capc(st)
        }
        SchemeKind::Becn => {
            let mut st = BecnSwitchState::new(cfg.becn.queue_threshold, SimTime(1));
            for v in users {
                let upstream: u64 = v
                    .links
                    .iter()
                    .take_while(|&&l| l != trunk)
                    .map(|&l| topo.links[l].delay.0)
                    .sum();
                st.spacing.insert(v.vc, SimTime(2 * (upstream + ACCESS_DELAY.0)));
            }
            PortControl::Becn(st)
        }
        SchemeKind::CreditStatic | SchemeKind::CreditAdaptive => PortControl::Passive,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::TopologyConfig;

    fn parking(scheme: SchemeKind) -> ScenarioConfig {
        ScenarioConfig::new(
            scheme,
            TopologyConfig::ParkingLot {
                switches: 3,
                link_mbps: 150.0,
                link_delay_us: 100,
            },
            10.0,
        )
    }

    #[test]
    fn parking_lot_targets_are_a_third() {
        let s = build(&parking(SchemeKind::Eprca)).unwrap();
        assert_eq!(s.targets.len(), 3);
        for t in &s.targets {
            assert!((t.oracle_mbps - 50.0).abs() < 1e-9);
        }
        assert_eq!(s.spec.controls.len(), 2);
    }

    #[test]
    fn explicit_rate_sources_jump_to_er() {
        let s = build(&parking(SchemeKind::Osu)).unwrap();
        let v = &s.spec.vcs[0];
        assert_eq!(v.rdf, 1.0);
        assert_eq!(v.air, v.contract.pcr.as_f64());
        assert!((s.targets[0].target_mbps - 45.0).abs() < 1e-9);
    }

    #[test]
    fn becn_spacing_is_round_trip_to_source() {
        let s = build(&parking(SchemeKind::Becn)).unwrap();
        let PortControl::Becn(st) = &s.spec.controls[1] else { panic!() };
        assert_eq!(st.spacing[&VcId(1)], SimTime(2 * (100 + 5)));
        assert_eq!(st.spacing[&VcId(3)], SimTime(10));
    }

    #[test]
    fn override_for_unknown_vc_is_rejected() {
        let mut cfg = parking(SchemeKind::Eprca);
        cfg.vcs.push(VcOverride {
            id: 9,
            ..Default::default()
        });
        assert!(build(&cfg).is_err());
    }

    #[test]
    fn phases_depend_on_seed_only() {
        let a = build(&parking(SchemeKind::Eprca)).unwrap();
        let b = build(&parking(SchemeKind::Eprca)).unwrap();
        let pa: Vec<f64> = a.spec.vcs.iter().map(|v| v.phase_us).collect();
        let pb: Vec<f64> = b.spec.vcs.iter().map(|v| v.phase_us).collect();
        assert_eq!(pa, pb);
        let mut cfg = parking(SchemeKind::Eprca);
        cfg.seed = 7;
        let c = build(&cfg).unwrap();
        assert_ne!(pa, c.spec.vcs.iter().map(|v| v.phase_us).collect::<Vec<_>>());
    }
}
