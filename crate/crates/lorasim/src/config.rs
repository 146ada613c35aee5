//! Run configuration: TOML schema, validation, key=value overrides, and the
//! sweep presets.
//!
//! The file has five blocks: `[scenario]`, `[propagation]`, `[gateway]`,
//! `[policy]`, `[sweep]`. Every field is optional with documented defaults;
//! unknown keys are fatal. Fields left out of `[propagation]` resolve to
//! per-scenario defaults (the urban scenario turns on shadowing and
//! buildings).

use serde::Deserialize;
use thiserror::Error;

use crate::channel::PropagationConfig;
use crate::gateway::{ConflictPolicy, DuplexMode, GatewayConfig};
use crate::netserver::{DlSemantics, PolicyConfig};
use crate::phy::{device_sensitivity_dbm, TransmissionParams};
use crate::time::SimDuration;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    /// Devices uniform on a disc, path loss only.
    Disc,
    /// Urban deployment: shadowing, buildings, mixed reporting periods.
    Urban,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    kind: Option<ScenarioKind>,
    n_devices: Option<u32>,
    cell_radius_m: Option<f64>,
    /// Fraction of devices using confirmed traffic.
    traffic_mix: Option<f64>,
    /// Aggregate packet rate in pkt/s; each device gets period n/lambda.
    aggregate_lambda: Option<f64>,
    /// Pairs of (period seconds, fraction of devices).
    period_table: Option<Vec<(f64, f64)>>,
    sim_duration_s: Option<f64>,
    warmup_s: Option<f64>,
    replications: Option<u32>,
    master_seed: Option<u64>,
    payload_bytes: Option<u32>,
    tx_power_dbm: Option<f64>,
    code_rate: Option<u8>,
    preamble_symbols: Option<u32>,
    low_dr_optimize: Option<bool>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPropagation {
    path_loss_exponent: Option<f64>,
    reference_loss_db: Option<f64>,
    reference_distance_m: Option<f64>,
    shadowing_sigma_db: Option<f64>,
    shadowing_correlation_m: Option<f64>,
    buildings_enabled: Option<bool>,
    indoor_fraction: Option<f64>,
    co_sf_capture_db: Option<f64>,
    inter_sf_capture_db: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGateway {
    reception_paths: Option<u32>,
    duplex: Option<DuplexMode>,
    conflict_policy: Option<ConflictPolicy>,
    dc_enforced: Option<bool>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPolicy {
    subband_swap: Option<bool>,
    ack_data_rate: Option<bool>,
    dl_payload_semantics: Option<DlSemantics>,
    max_attempts: Option<u8>,
    mislock_windows: Option<bool>,
    ack_payload_bytes: Option<u32>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSweep {
    axis: String,
    values: toml::Value,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default)]
    scenario: RawScenario,
    #[serde(default)]
    propagation: RawPropagation,
    #[serde(default)]
    gateway: RawGateway,
    #[serde(default)]
    policy: RawPolicy,
    sweep: Option<RawSweep>,
}

/// How application traffic is generated.
#[derive(Debug, Clone, PartialEq)]
pub enum TrafficModel {
    /// Shared period derived from an aggregate rate: period = n / lambda.
    AggregateLambda(f64),
    /// Mixed reporting periods: (period, fraction of devices).
    PeriodTable(Vec<(SimDuration, f64)>),
}

/// Fully resolved, validated run configuration.
#[derive(Debug, Clone)]
pub struct SimConfig {
    pub kind: ScenarioKind,
    pub n_devices: u32,
    /// `None` means: radius where the SF12 link budget closes on path loss
    /// alone (computed at world build and reported in the run header).
    pub cell_radius_m: Option<f64>,
    pub confirmed_fraction: f64,
    pub traffic: TrafficModel,
    pub sim_duration: SimDuration,
    pub warmup: SimDuration,
    pub replications: u32,
    pub master_seed: u64,
    pub tx_power_dbm: f64,
    pub ul_params: TransmissionParams,
    pub propagation: PropagationConfig,
    pub gateway: GatewayConfig,
    pub policy: PolicyConfig,
    pub sweep: Option<SweepSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SweepAxis {
    Lambda,
    NDevices,
    Policy,
}

#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub points: Vec<SweepPoint>,
}

#[derive(Debug, Clone)]
pub enum SweepPoint {
    Lambda(f64),
    NDevices(u32),
    Policy(String),
}

impl SweepPoint {
    pub fn label(&self) -> String {
        match self {
            SweepPoint::Lambda(l) => format!("lambda_{l:.4}"),
            SweepPoint::NDevices(n) => format!("n_{n}"),
            SweepPoint::Policy(p) => p.clone(),
        }
    }

    pub fn axis_value(&self) -> String {
        match self {
            SweepPoint::Lambda(l) => format!("{l:.6}"),
            SweepPoint::NDevices(n) => n.to_string(),
            SweepPoint::Policy(p) => p.clone(),
        }
    }

    /// Derive the per-point configuration from the sweep base.
    pub fn apply(&self, base: &SimConfig) -> Result<SimConfig, ConfigError> {
        let mut cfg = base.clone();
        cfg.sweep = None;
        match self {
            SweepPoint::Lambda(l) => {
                if *l <= 0.0 {
                    return Err(invalid("sweep lambda must be positive"));
                }
                cfg.traffic = TrafficModel::AggregateLambda(*l);
            }
            SweepPoint::NDevices(n) => {
                if *n == 0 {
                    return Err(invalid("sweep n_devices must be positive"));
                }
                cfg.n_devices = *n;
            }
            SweepPoint::Policy(name) => apply_preset(&mut cfg, name)?,
        }
        Ok(cfg)
    }
}

/// Named policy presets usable as sweep points.
pub const POLICY_PRESETS: &[&str] = &[
    "baseline",
    "subband_swap",
    "ack_data_rate",
    "both_variations",
    "gw_dc_off",
    "tx_priority",
    "rx_priority",
    "dynamic_priority",
    "full_duplex",
    "m1",
    "m2",
    "m4",
    "m6",
    "m8",
    "r3",
    "r8",
    "r16",
];

pub fn apply_preset(cfg: &mut SimConfig, name: &str) -> Result<(), ConfigError> {
    match name {
        "baseline" => {}
        "subband_swap" => cfg.policy.subband_swap = true,
        "ack_data_rate" => cfg.policy.ack_data_rate = true,
        "both_variations" => {
            cfg.policy.subband_swap = true;
            cfg.policy.ack_data_rate = true;
        }
        "gw_dc_off" => cfg.gateway.dc_enforced = false,
        "tx_priority" => cfg.gateway.conflict_policy = ConflictPolicy::TxPriority,
        "rx_priority" => cfg.gateway.conflict_policy = ConflictPolicy::RxPriority,
        "dynamic_priority" => cfg.gateway.conflict_policy = ConflictPolicy::Dynamic,
        "full_duplex" => cfg.gateway.duplex = DuplexMode::Full,
        "m1" | "m2" | "m4" | "m6" | "m8" => {
            cfg.policy.max_attempts = name[1..].parse().unwrap();
        }
        "r3" | "r8" | "r16" => {
            cfg.gateway.reception_paths = name[1..].parse().unwrap();
        }
        other => {
            return Err(invalid(format!(
                "unknown policy preset '{other}' (known: {})",
                POLICY_PRESETS.join(", ")
            )))
        }
    }
    Ok(())
}

const VALID_ATTEMPTS: [u8; 5] = [1, 2, 4, 6, 8];

/// Parse, apply `section.key=value` overrides, validate, resolve defaults.
pub fn parse_config(text: &str, overrides: &[String]) -> Result<SimConfig, ConfigError> {
    let mut value: toml::Value =
        text.parse().map_err(|e| ConfigError::Parse(format!("{e}")))?;
    for entry in overrides {
        apply_override(&mut value, entry)?;
    }
    let raw: RawConfig = value
        .try_into()
        .map_err(|e| ConfigError::Parse(format!("{e}")))?;
    resolve(raw)
}

fn apply_override(root: &mut toml::Value, entry: &str) -> Result<(), ConfigError> {
    let (key, raw_value) = entry
        .split_once('=')
        .ok_or_else(|| invalid(format!("override '{entry}' is not key=value")))?;
    let parsed: toml::Value = match format!("v = {raw_value}").parse::<toml::Table>() {
        Ok(t) => t["v"].clone(),
        Err(_) => toml::Value::String(raw_value.to_string()),
    };
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    if parts.len() < 2 {
        return Err(invalid(format!("override key '{key}' must be section.field")));
    }
    for part in &parts[..parts.len() - 1] {
        let table = node
            .as_table_mut()
            .ok_or_else(|| invalid(format!("override key '{key}' does not address a table")))?;
        node = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    let table = node
        .as_table_mut()
        .ok_or_else(|| invalid(format!("override key '{key}' does not address a table")))?;
    table.insert(parts[parts.len() - 1].to_string(), parsed);
    Ok(())
}

fn resolve(raw: RawConfig) -> Result<SimConfig, ConfigError> {
    let kind = raw.scenario.kind.unwrap_or(ScenarioKind::Disc);

    let n_devices = raw.scenario.n_devices.unwrap_or(1200);
    if n_devices == 0 {
        return Err(invalid("scenario.n_devices must be positive"));
    }

    let confirmed_fraction = raw.scenario.traffic_mix.unwrap_or(0.5);
    if !(0.0..=1.0).contains(&confirmed_fraction) {
        return Err(invalid("scenario.traffic_mix must be in [0, 1]"));
    }

    let traffic = match (raw.scenario.aggregate_lambda, &raw.scenario.period_table, kind) {
        (Some(_), Some(_), _) => {
            return Err(invalid(
                "scenario.aggregate_lambda and scenario.period_table are mutually exclusive",
            ))
        }
        (Some(lambda), None, _) => {
            if lambda <= 0.0 {
                return Err(invalid("scenario.aggregate_lambda must be positive"));
            }
            TrafficModel::AggregateLambda(lambda)
        }
        (None, Some(table), _) => TrafficModel::PeriodTable(validate_period_table(table)?),
        (None, None, ScenarioKind::Disc) => TrafficModel::AggregateLambda(0.1),
        (None, None, ScenarioKind::Urban) => TrafficModel::PeriodTable(
            // Mobile autonomous reporting mix: mostly slow reporters.
            validate_period_table(&[
                (86_400.0, 0.40),
                (7_200.0, 0.40),
                (3_600.0, 0.15),
                (1_800.0, 0.05),
            ])?,
        ),
    };

    let sim_duration_s = raw.scenario.sim_duration_s.unwrap_or(match kind {
        ScenarioKind::Disc => 86_400.0,
        ScenarioKind::Urban => 604_800.0,
    });
    if sim_duration_s <= 0.0 {
        return Err(invalid("scenario.sim_duration_s must be positive"));
    }
    let warmup_s = raw.scenario.warmup_s.unwrap_or(sim_duration_s * 0.1);
    if warmup_s < 0.0 || warmup_s >= sim_duration_s {
        return Err(invalid("scenario.warmup_s must be in [0, sim_duration_s)"));
    }

    let payload_bytes = raw.scenario.payload_bytes.unwrap_or(32);
    if payload_bytes == 0 || payload_bytes > 255 {
        return Err(invalid("scenario.payload_bytes must be in 1..=255"));
    }
    let code_rate = raw.scenario.code_rate.unwrap_or(2);
    if !(1..=4).contains(&code_rate) {
        return Err(invalid("scenario.code_rate must be in 1..=4"));
    }
    let preamble_symbols = raw.scenario.preamble_symbols.unwrap_or(8);
    if preamble_symbols == 0 {
        return Err(invalid("scenario.preamble_symbols must be positive"));
    }

    let tx_power_dbm = raw.scenario.tx_power_dbm.unwrap_or(14.0);
    if tx_power_dbm <= 0.0 || tx_power_dbm > 14.0 {
        return Err(invalid(
            "scenario.tx_power_dbm must be in (0, 14] (shared sub-band limit)",
        ));
    }

    let ul_params = TransmissionParams {
        payload_bytes,
        explicit_header: true,
        code_rate,
        preamble_symbols,
        crc_on: true,
        low_dr_optimize: raw.scenario.low_dr_optimize.unwrap_or(false),
    };

    let defaults = match kind {
        ScenarioKind::Disc => PropagationConfig::default(),
        ScenarioKind::Urban => PropagationConfig::urban_default(),
    };
    let propagation = PropagationConfig {
        path_loss_exponent: raw.propagation.path_loss_exponent.unwrap_or(defaults.path_loss_exponent),
        reference_loss_db: raw.propagation.reference_loss_db.unwrap_or(defaults.reference_loss_db),
        reference_distance_m: raw
            .propagation
            .reference_distance_m
            .unwrap_or(defaults.reference_distance_m),
        shadowing_sigma_db: raw
            .propagation
            .shadowing_sigma_db
            .unwrap_or(defaults.shadowing_sigma_db),
        shadowing_correlation_m: raw
            .propagation
            .shadowing_correlation_m
            .unwrap_or(defaults.shadowing_correlation_m),
        buildings_enabled: raw.propagation.buildings_enabled.unwrap_or(defaults.buildings_enabled),
        indoor_fraction: raw.propagation.indoor_fraction.unwrap_or(defaults.indoor_fraction),
        co_sf_capture_db: raw.propagation.co_sf_capture_db.unwrap_or(defaults.co_sf_capture_db),
        inter_sf_capture_db: raw
            .propagation
            .inter_sf_capture_db
            .unwrap_or(defaults.inter_sf_capture_db),
    };
    if propagation.path_loss_exponent <= 0.0 {
        return Err(invalid("propagation.path_loss_exponent must be positive"));
    }
    if propagation.reference_distance_m <= 0.0 {
        return Err(invalid("propagation.reference_distance_m must be positive"));
    }
    if propagation.shadowing_sigma_db < 0.0 {
        return Err(invalid("propagation.shadowing_sigma_db must be >= 0"));
    }
    if propagation.shadowing_correlation_m <= 0.0 {
        return Err(invalid("propagation.shadowing_correlation_m must be positive"));
    }
    if !(0.0..=1.0).contains(&propagation.indoor_fraction) {
        return Err(invalid("propagation.indoor_fraction must be in [0, 1]"));
    }
    if propagation.co_sf_capture_db <= 0.0 {
        return Err(invalid("propagation.co_sf_capture_db must be positive"));
    }
    if propagation.inter_sf_capture_db > 0.0 {
        return Err(invalid("propagation.inter_sf_capture_db must be <= 0"));
    }

    let gateway = GatewayConfig {
        reception_paths: raw.gateway.reception_paths.unwrap_or(8),
        duplex: raw.gateway.duplex.unwrap_or(DuplexMode::Half),
        conflict_policy: raw.gateway.conflict_policy.unwrap_or(ConflictPolicy::TxPriority),
        dc_enforced: raw.gateway.dc_enforced.unwrap_or(true),
    };
    if gateway.reception_paths == 0 || gateway.reception_paths > 64 {
        return Err(invalid("gateway.reception_paths must be in 1..=64"));
    }

    let policy = PolicyConfig {
        subband_swap: raw.policy.subband_swap.unwrap_or(false),
        ack_data_rate: raw.policy.ack_data_rate.unwrap_or(false),
        dl_payload_semantics: raw.policy.dl_payload_semantics.unwrap_or(DlSemantics::AckOnly),
        max_attempts: raw.policy.max_attempts.unwrap_or(8),
        mislock_windows: raw.policy.mislock_windows.unwrap_or(false),
        ack_payload_bytes: raw.policy.ack_payload_bytes.unwrap_or(0),
    };
    if !VALID_ATTEMPTS.contains(&policy.max_attempts) {
        return Err(invalid("policy.max_attempts must be one of {1, 2, 4, 6, 8}"));
    }
    if policy.ack_payload_bytes > 255 {
        return Err(invalid("policy.ack_payload_bytes must be <= 255"));
    }

    if let Some(radius) = raw.scenario.cell_radius_m {
        if radius <= 0.0 {
            return Err(invalid("scenario.cell_radius_m must be positive"));
        }
    }

    let sweep = raw.sweep.map(parse_sweep).transpose()?;

    Ok(SimConfig {
        kind,
        n_devices,
        cell_radius_m: raw.scenario.cell_radius_m,
        confirmed_fraction,
        traffic,
        sim_duration: SimDuration::from_secs_f64(sim_duration_s),
        warmup: SimDuration::from_secs_f64(warmup_s),
        replications: raw.scenario.replications.unwrap_or(1).max(1),
        master_seed: raw.scenario.master_seed.unwrap_or(1),
        tx_power_dbm,
        ul_params,
        propagation,
        gateway,
        policy,
        sweep,
    })
}

fn validate_period_table(table: &[(f64, f64)]) -> Result<Vec<(SimDuration, f64)>, ConfigError> {
    if table.is_empty() {
        return Err(invalid("scenario.period_table must not be empty"));
    }
    let mut total = 0.0;
    let mut out = Vec::with_capacity(table.len());
    for (period_s, fraction) in table {
        if *period_s <= 0.0 {
            return Err(invalid("period_table periods must be positive"));
        }
        if *fraction < 0.0 {
            return Err(invalid("period_table fractions must be >= 0"));
        }
        total += fraction;
        out.push((SimDuration::from_secs_f64(*period_s), *fraction));
    }
    if (total - 1.0).abs() > 1e-9 {
        return Err(invalid(format!("period_table fractions must sum to 1 (got {total})")));
    }
    Ok(out)
}

fn parse_sweep(raw: RawSweep) -> Result<SweepSpec, ConfigError> {
    let values = raw
        .values
        .as_array()
        .ok_or_else(|| invalid("sweep.values must be an array"))?;
    if values.is_empty() {
        return Err(invalid("sweep.values must not be empty"));
    }
    let (axis, points) = match raw.axis.as_str() {
        "lambda" => {
            let pts = values
                .iter()
                .map(|v| {
                    v.as_float()
                        .or_else(|| v.as_integer().map(|i| i as f64))
                        .map(SweepPoint::Lambda)
                        .ok_or_else(|| invalid("sweep.values for lambda must be numbers"))
                })
                .collect::<Result<Vec<_>, _>>()?;
            (SweepAxis::Lambda, pts)
        }
        "n_devices" => {
            let pts = values
                .iter()
                .map(|v| {
                    v.as_integer()
                        .filter(|i| *i > 0)
                        .map(|i| SweepPoint::NDevices(i as u32))
                        .ok_or_else(|| invalid("sweep.values for n_devices must be positive integers"))
                })
                .collect::<Result<Vec<_>, _>>()?;
            (SweepAxis::NDevices, pts)
        }
        "policy" => {
            let pts = values
                .iter()
                .map(|v| {
                    v.as_str()
                        .map(|s| SweepPoint::Policy(s.to_string()))
                        .ok_or_else(|| invalid("sweep.values for policy must be preset names"))
                })
                .collect::<Result<Vec<_>, _>>()?;
            for p in &pts {
                if let SweepPoint::Policy(name) = p {
                    if !POLICY_PRESETS.contains(&name.as_str()) {
                        return Err(invalid(format!("unknown policy preset '{name}'")));
                    }
                }
            }
            (SweepAxis::Policy, pts)
        }
        other => return Err(invalid(format!("unknown sweep axis '{other}'"))),
    };
    Ok(SweepSpec { axis, points })
}

impl SimConfig {
    /// Cell radius in meters; when unset, the distance at which the SF12
    /// link budget closes on path loss alone.
    pub fn resolved_cell_radius_m(&self) -> f64 {
        self.cell_radius_m.unwrap_or_else(|| {
            self.propagation
                .range_for(self.tx_power_dbm, device_sensitivity_dbm(12))
        })
    }

    /// Shared period for aggregate-rate traffic: n / lambda.
    pub fn shared_period(&self) -> Option<SimDuration> {
        match &self.traffic {
            TrafficModel::AggregateLambda(lambda) => {
                Some(SimDuration::from_secs_f64(self.n_devices as f64 / lambda))
            }
            TrafficModel::PeriodTable(_) => None,
        }
    }

    /// Human-readable summary of the resolved settings, written as the run
    /// header next to the CSV outputs. Deterministic: configuration only.
    pub fn describe(&self) -> String {
        let mut s = String::new();
        use std::fmt::Write;
        let _ = writeln!(s, "scenario: {:?}", self.kind);
        let _ = writeln!(s, "devices: {}", self.n_devices);
        let _ = writeln!(s, "cell_radius_m: {:.1}", self.resolved_cell_radius_m());
        let _ = writeln!(s, "confirmed_fraction: {}", self.confirmed_fraction);
        match &self.traffic {
            TrafficModel::AggregateLambda(l) => {
                let _ = writeln!(s, "aggregate_lambda_pkt_s: {l}");
                let _ = writeln!(
                    s,
                    "per_device_period_s: {}",
                    self.shared_period().unwrap().format_secs()
                );
            }
            TrafficModel::PeriodTable(t) => {
                let table: Vec<String> = t
                    .iter()
                    .map(|(p, f)| format!("{}:{}", p.format_secs(), f))
                    .collect();
                let _ = writeln!(s, "period_table: {}", table.join(" "));
            }
        }
        let _ = writeln!(s, "sim_duration_s: {}", self.sim_duration.format_secs());
        let _ = writeln!(s, "warmup_s: {}", self.warmup.format_secs());
        let _ = writeln!(s, "master_seed: {}", self.master_seed);
        let _ = writeln!(s, "replications: {}", self.replications);
        let _ = writeln!(s, "tx_power_dbm: {}", self.tx_power_dbm);
        let _ = writeln!(s, "payload_bytes: {}", self.ul_params.payload_bytes);
        let _ = writeln!(s, "propagation: {:?}", self.propagation);
        let _ = writeln!(s, "gateway: {:?}", self.gateway);
        let _ = writeln!(s, "policy: {:?}", self.policy);
        s
    }
}

/// Default configuration (disc scenario), mainly for tests and examples.
pub fn default_config() -> SimConfig {
    parse_config("", &[]).expect("empty config resolves")
}
