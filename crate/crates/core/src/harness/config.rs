//! Scenario files: TOML with one section per concern.
//!
//! Rates are given in Mbit/s and converted with 424-bit cells; times are
//! microseconds unless the key says otherwise.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::ModelError;
use crate::schemes::{BandRule, DetectorKind, OsuMode, RateSource, SchemeKind};
use crate::traffic::LoopMode;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Parse(#[from] toml::de::Error),
    #[error("field `{field}`: {reason}")]
    Invalid { field: String, reason: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.into(),
        reason: reason.into(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default = "default_version")]
    pub version: u32,
    pub scheme: SchemeKind,
    pub duration_ms: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_metric_interval")]
    pub metric_interval_us: u64,
    pub topology: TopologyConfig,
    #[serde(default)]
    pub traffic: TrafficDefaults,
    #[serde(default, rename = "vc", skip_serializing_if = "Vec::is_empty")]
    pub vcs: Vec<VcOverride>,
    #[serde(default)]
    pub source: SourceParams,
    #[serde(default)]
    pub efci: EfciParams,
    #[serde(default)]
    pub eprca: EprcaParams,
    #[serde(default)]
    pub osu: OsuParams,
    #[serde(default)]
    pub capc: CapcParams,
    #[serde(default)]
    pub becn: BecnParams,
    #[serde(default)]
    pub credit: CreditParams,
    #[serde(default)]
    pub queue: QueueParams,
    #[serde(default)]
    pub faults: FaultParams,
}

fn default_version() -> u32 {
    CONFIG_VERSION
}

fn default_metric_interval() -> u64 {
    10_000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TopologyConfig {
    /// `switches` in series; vc 1 and vc 2 enter at the first switch, vc i
    /// at switch i-1; all leave after the last switch.
    ParkingLot {
        switches: usize,
        #[serde(default = "default_mbps")]
        link_mbps: f64,
        #[serde(default = "default_delay")]
        link_delay_us: u64,
    },
    /// Three links, four vcs: the max-min textbook example.
    Figure3 {
        #[serde(default = "default_mbps")]
        link_mbps: f64,
        #[serde(default = "default_delay")]
        link_delay_us: u64,
        /// Vcs (1-4) to leave out.
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        without: Vec<u32>,
    },
    /// `switches` in series with `vcs` circuits crossing all of them.
    Chain {
        switches: usize,
        #[serde(default = "one")]
        vcs: u32,
        #[serde(default = "default_mbps")]
        link_mbps: f64,
        #[serde(default = "default_delay")]
        link_delay_us: u64,
    },
    /// `vcs` circuits sharing one link between two switches.
    Bottleneck {
        vcs: u32,
        #[serde(default = "default_mbps")]
        link_mbps: f64,
        #[serde(default = "default_delay")]
        link_delay_us: u64,
    },
    Inline {
        #[serde(rename = "link")]
        links: Vec<InlineLink>,
        #[serde(rename = "vc")]
        vcs: Vec<InlineVc>,
    },
}

fn default_mbps() -> f64 {
    150.0
}

fn default_delay() -> u64 {
    100
}

fn one() -> u32 {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InlineLink {
    pub from: usize,
    pub to: usize,
    #[serde(default = "default_mbps")]
    pub mbps: f64,
    #[serde(default = "default_delay")]
    pub delay_us: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InlineVc {
    pub id: u32,
    /// Indices into the link list, in path order.
    pub links: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Persistent,
    Bursty,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoliceMode {
    Off,
    Drop,
    Tag,
}

/// Source defaults applied to every vc unless overridden.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrafficDefaults {
    pub model: ModelKind,
    pub burst_len: u32,
    pub idle_us: u64,
    #[serde(rename = "loop")]
    pub loop_mode: LoopMode,
    pub packet_len: u32,
    /// Each source's first cell is delayed by a random amount up to this.
    pub phase_jitter_us: f64,
}

impl Default for TrafficDefaults {
    fn default() -> Self {
        TrafficDefaults {
            model: ModelKind::Persistent,
            burst_len: 100,
            idle_us: 2_000,
            loop_mode: LoopMode::Open,
            packet_len: 30,
            phase_jitter_us: 10.0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VcOverride {
    pub id: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pcr_mbps: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mcr_mbps: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_acr_mbps: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start_ms: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub burst_len: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub idle_us: Option<u64>,
    #[serde(default, rename = "loop", skip_serializing_if = "Option::is_none")]
    pub loop_mode: Option<LoopMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub packet_len: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub police: Option<PoliceMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scr_mbps: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mbs: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cdvt_us: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SourceParams {
    pub nrm: u32,
    /// Additive increase as a fraction of PCR.
    pub air_fraction: f64,
    pub rdf: f64,
    /// Starting ACR as a fraction of PCR.
    pub initial_acr_fraction: f64,
}

impl Default for SourceParams {
    fn default() -> Self {
        SourceParams {
            nrm: 32,
            air_fraction: 1.0 / 16.0,
            rdf: 511.0 / 512.0,
            initial_acr_fraction: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EfciParams {
    pub threshold: usize,
    /// Test mode: every switch marks each data cell independently with
    /// this probability instead of looking at its queue.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub forced_probability: Option<f64>,
}

impl Default for EfciParams {
    fn default() -> Self {
        EfciParams {
            threshold: 100,
            forced_probability: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EprcaParams {
    pub alpha: f64,
    pub sw_dpf: f64,
    pub queue_threshold: usize,
    pub growth_window: u32,
    pub detector: DetectorKind,
}

impl Default for EprcaParams {
    fn default() -> Self {
        EprcaParams {
            alpha: 1.0 / 16.0,
            sw_dpf: 7.0 / 8.0,
            queue_threshold: 100,
            growth_window: 50,
            detector: DetectorKind::QueueLength,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OsuParams {
    pub target_utilization: f64,
    pub interval_us: u64,
    pub delta: f64,
    pub band_rule: BandRule,
    pub rate_source: RateSource,
}

impl Default for OsuParams {
    fn default() -> Self {
        OsuParams {
            target_utilization: 0.9,
            interval_us: 250,
            delta: 0.1,
            band_rule: BandRule::Converging,
            rate_source: RateSource::Metered,
        }
    }
}

impl OsuParams {
    pub fn mode(&self, scheme: SchemeKind) -> OsuMode {
        if scheme == SchemeKind::OsuCount {
            OsuMode::CountBased
        } else {
            OsuMode::Interval
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CapcParams {
    pub target_utilization: f64,
    pub interval_us: u64,
    pub rup: f64,
    pub rdn: f64,
    pub eru: f64,
    pub erf: f64,
    pub queue_threshold: usize,
}

impl Default for CapcParams {
    fn default() -> Self {
        CapcParams {
            target_utilization: 0.9,
            interval_us: 1_000,
            rup: 0.06,
            rdn: 0.5,
            eru: 1.5,
            erf: 0.5,
            queue_threshold: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BecnParams {
    pub queue_threshold: usize,
    /// Recovery period of a source sending at its PCR.
    pub recovery_us: u64,
}

impl Default for BecnParams {
    fn default() -> Self {
        BecnParams {
            queue_threshold: 50,
            recovery_us: 5_000,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CreditCost {
    /// Credit cells take a cell slot on the reverse link.
    Slot,
    /// Credit cells only incur propagation delay.
    Free,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CreditParams {
    /// Forwarded cells per credit cell.
    pub batch: u64,
    /// Resynchronization period in link round trips.
    pub resync_round_trips: u64,
    /// Adaptive reallocation period in link round trips.
    pub realloc_round_trips: u64,
    pub min_grant: u64,
    pub cost: CreditCost,
}

impl Default for CreditParams {
    fn default() -> Self {
        CreditParams {
            batch: 10,
            resync_round_trips: 100,
            realloc_round_trips: 4,
            min_grant: 2,
            cost: CreditCost::Slot,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QueueParams {
    /// Cells per output port; zero means unbounded.
    pub capacity: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epd_threshold: Option<usize>,
}

impl Default for QueueParams {
    fn default() -> Self {
        QueueParams {
            capacity: 8_192,
            epd_threshold: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FaultParams {
    /// Probability that a data cell is lost on a trunk link.
    pub link_loss_probability: f64,
}

impl ScenarioConfig {
    /// A scenario with every parameter at its default.
    pub fn new(scheme: SchemeKind, topology: TopologyConfig, duration_ms: f64) -> Self {
        ScenarioConfig {
            version: CONFIG_VERSION,
            scheme,
            duration_ms,
            seed: 0,
            metric_interval_us: default_metric_interval(),
            topology,
            traffic: TrafficDefaults::default(),
            vcs: Vec::new(),
            source: SourceParams::default(),
            efci: EfciParams::default(),
            eprca: EprcaParams::default(),
            osu: OsuParams::default(),
            capc: CapcParams::default(),
            becn: BecnParams::default(),
            credit: CreditParams::default(),
            queue: QueueParams::default(),
            faults: FaultParams::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: ScenarioConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.version != CONFIG_VERSION {
            return Err(invalid("version", format!("unsupported version {}", self.version)));
        }
        if self.duration_ms.is_nan() || self.duration_ms <= 0.0 || !self.duration_ms.is_finite() {
            return Err(invalid("duration_ms", "must be positive"));
        }
        if self.metric_interval_us == 0 {
            return Err(invalid("metric_interval_us", "must be positive"));
        }
        let s = &self.source;
        if s.nrm == 0 {
            return Err(invalid("source.nrm", "must be at least 1"));
        }
        if !(0.0 < s.rdf && s.rdf <= 1.0) {
            return Err(invalid("source.rdf", "must be in (0, 1]"));
        }
        if s.air_fraction.is_nan() || s.air_fraction <= 0.0 {
            return Err(invalid("source.air_fraction", "must be positive"));
        }
        if !(0.0 < s.initial_acr_fraction && s.initial_acr_fraction <= 1.0) {
            return Err(invalid("source.initial_acr_fraction", "must be in (0, 1]"));
        }
        let e = &self.eprca;
        if !(0.0 < e.alpha && e.alpha < 1.0) {
            return Err(invalid("eprca.alpha", "must be in (0, 1)"));
        }
        if !(0.0 < e.sw_dpf && e.sw_dpf < 1.0) {
            return Err(invalid("eprca.sw_dpf", "must be in (0, 1)"));
        }
        if let Some(p) = self.efci.forced_probability {
            if !(0.0..=1.0).contains(&p) {
                return Err(invalid("efci.forced_probability", "must be in [0, 1]"));
            }
        }
        let o = &self.osu;
        if !(0.0 < o.delta && o.delta < 1.0) {
            return Err(invalid("osu.delta", "must be in (0, 1)"));
        }
        if !(0.0 < o.target_utilization && o.target_utilization < 1.0) {
            return Err(invalid("osu.target_utilization", "must be in (0, 1)"));
        }
        if o.interval_us == 0 {
            return Err(invalid("osu.interval_us", "must be positive"));
        }
        let c = &self.capc;
        if !(0.0 < c.target_utilization && c.target_utilization < 1.0) {
            return Err(invalid("capc.target_utilization", "must be in (0, 1)"));
        }
        if c.interval_us == 0 {
            return Err(invalid("capc.interval_us", "must be positive"));
        }
        if self.credit.batch == 0 {
            return Err(invalid("credit.batch", "must be at least 1"));
        }
        if self.credit.resync_round_trips == 0 || self.credit.realloc_round_trips == 0 {
            return Err(invalid("credit", "periods must be positive"));
        }
        if !(0.0..=1.0).contains(&self.faults.link_loss_probability) {
            return Err(invalid("faults.link_loss_probability", "must be in [0, 1]"));
        }
        if self.traffic.burst_len == 0 {
            return Err(invalid("traffic.burst_len", "must be at least 1"));
        }
        if self.traffic.packet_len == 0 {
            return Err(invalid("traffic.packet_len", "must be at least 1"));
        }
        Ok(())
    }
}

/// Sets `path` (dotted keys) in a parsed config to `value`, creating
/// tables as needed. The value is read as a TOML literal, falling back to
/// a plain string.
pub fn set_dotted(doc: &mut toml::Table, path: &str, value: &str) -> Result<(), ConfigError> {
    let parsed: toml::Value = format!("v = {value}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_string()));
    let keys: Vec<&str> = path.split('.').collect();
    let (last, parents) = keys.split_last().ok_or_else(|| invalid(path, "empty key"))?;
    let mut table = doc;
    for key in parents {
        let entry = table
            .entry(key.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| invalid(path, format!("`{key}` is not a table")))?;
    }
    table.insert(last.to_string(), parsed);
    Ok(())
}
