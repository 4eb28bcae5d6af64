use std::thread;

use super::config::{invalid, set_dotted, ConfigError, ScenarioConfig};
use super::report::{run_scenario, HarnessError, RunReport};

/// One point of a sweep: `key=value` applied to the base scenario.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepPoint {
    pub label: String,
    pub config: ScenarioConfig,
}

/// Parses `key=v1,v2,...`.
pub fn parse_param(spec: &str) -> Result<(String, Vec<String>), ConfigError> {
    let (key, values) = spec
        .split_once('=')
        .ok_or_else(|| invalid("--param", "expected key=v1,v2,..."))?;
    let values: Vec<String> = values.split(',').map(|v| v.trim().to_string()).filter(|v| !v.is_empty()).collect();
    if key.trim().is_empty() || values.is_empty() {
        return Err(invalid("--param", "expected key=v1,v2,..."));
    }
    Ok((key.trim().to_string(), values))
}

/// Expands a base scenario (as TOML text) into one config per value.
pub fn expand(base: &str, key: &str, values: &[String]) -> Result<Vec<SweepPoint>, ConfigError> {
    let doc: toml::Table = base.parse().map_err(|e: toml::de::Error| ConfigError::Parse(e))?;
    values
        .iter()
        .map(|v| {
            let mut d = doc.clone();
            set_dotted(&mut d, key, v)?;
            let text = toml::to_string(&d).expect("table serializes");
            Ok(SweepPoint {
                label: format!("{key}={v}"),
                config: ScenarioConfig::from_toml(&text)?,
            })
        })
        .collect()
}

/// Runs every point, up to `workers` at a time. Results keep the input
/// order.
pub fn run_sweep(points: &[SweepPoint], workers: usize) -> Vec<Result<RunReport, HarnessError>> {
    let workers = workers.max(1);
    let mut out: Vec<Option<Result<RunReport, HarnessError>>> = (0..points.len()).map(|_| None).collect();
    for (chunk_points, chunk_out) in points.chunks(workers).zip(out.chunks_mut(workers)) {
        thread::scope(|s| {
            let handles: Vec<_> = chunk_points.iter().map(|p| s.spawn(|| run_scenario(&p.config))).collect();
            for (slot, h) in chunk_out.iter_mut().zip(handles) {
                *slot = Some(h.join().expect("scenario thread panicked"));
            }
        });
    }
    out.into_iter().map(|r| r.expect("every point ran")).collect()
}
