//! World construction: device placement, channel realization, data-rate
//! assignment, and traffic-mix assembly.

use thiserror::Error;

use crate::channel::{
    assign_data_rate, closes_at_gateway, device_gateway_loss_db, path_loss_db, Position,
    ShadowingField, WALL_LOSS_CHOICES_DB,
};
use crate::config::{SimConfig, TrafficModel};
use crate::device::{Device, DeviceConfig};
use crate::gateway::Gateway;
use crate::medium::{IsolationMatrix, Medium};
use crate::netserver::DlSemantics;
use crate::phy::DataRate;
use crate::rng::{RngStream, StreamPurpose, WORLD_OWNER};
use crate::time::SimDuration;
use crate::world::{LinkEntry, LinkTable, World};

#[derive(Debug, Error)]
pub enum BuildError {
    #[error("no device is within coverage of the gateway")]
    NoCoverage,
}

/// Static per-device facts for the device summary output.
#[derive(Debug, Clone)]
pub struct DeviceSummary {
    pub id: u32,
    pub x_m: f64,
    pub y_m: f64,
    pub indoor: bool,
    pub wall_loss_db: f64,
    pub distance_m: f64,
    pub link_loss_db: f64,
    pub dr: Option<DataRate>,
    pub confirmed: bool,
    pub data_reply: bool,
    pub period: SimDuration,
}

pub struct BuiltWorld {
    pub world: World,
    pub device_summaries: Vec<DeviceSummary>,
    pub cell_radius_m: f64,
}

/// Exact-proportion boolean assignment: device i gets `true` when the
/// cumulative count crosses an integer. Stable under growing n.
fn interleaved(i: u32, fraction: f64) -> bool {
    let before = (i as f64 * fraction).floor();
    let after = ((i + 1) as f64 * fraction).floor();
    after > before
}

/// Category of device i under a (fraction -> category) table, assigning
/// exact proportions by index.
fn table_category(i: u32, n: u32, fractions: &[f64]) -> usize {
    let u = (i as f64 + 0.5) / n as f64;
    let mut acc = 0.0;
    for (idx, f) in fractions.iter().enumerate() {
        acc += f;
        if u < acc {
            return idx;
        }
    }
    fractions.len() - 1
}

pub fn build_world(cfg: &SimConfig, master_seed: u64) -> Result<BuiltWorld, BuildError> {
    let radius = cfg.resolved_cell_radius_m();
    let gateway_position = Position::outdoor(0.0, 0.0);

    let mut field_stream = RngStream::new(master_seed, WORLD_OWNER, StreamPurpose::ShadowField);
    let field = ShadowingField::new(&cfg.propagation, &mut field_stream);

    let shared_period = cfg.shared_period();
    let period_of = |i: u32| -> SimDuration {
        match &cfg.traffic {
            TrafficModel::AggregateLambda(_) => shared_period.unwrap(),
            TrafficModel::PeriodTable(table) => {
                let fractions: Vec<f64> = table.iter().map(|(_, f)| *f).collect();
                table[table_category(i, cfg.n_devices, &fractions)].0
            }
        }
    };

    let mut devices = Vec::with_capacity(cfg.n_devices as usize);
    let mut summaries = Vec::with_capacity(cfg.n_devices as usize);
    let mut entries = Vec::with_capacity(cfg.n_devices as usize);
    let mut confirmed_rank = 0u32;
    let mut in_coverage = 0u32;

    for i in 0..cfg.n_devices {
        let mut placement = RngStream::new(master_seed, i as u64, StreamPurpose::Placement);
        let r = radius * placement.uniform(0.0, 1.0).sqrt();
        let theta = placement.uniform(0.0, std::f64::consts::TAU);
        let indoor = cfg.propagation.buildings_enabled
            && placement.uniform(0.0, 1.0) < cfg.propagation.indoor_fraction;
        let wall_loss_db = if indoor {
            WALL_LOSS_CHOICES_DB[placement.index(WALL_LOSS_CHOICES_DB.len())]
        } else {
            0.0
        };
        let position = Position { x_m: r * theta.cos(), y_m: r * theta.sin(), indoor, wall_loss_db };
        let shadow_db = field.sample_db(&position);
        let link_loss_db = device_gateway_loss_db(&position, &gateway_position, shadow_db, &cfg.propagation);

        let rx_at_gw = cfg.tx_power_dbm - link_loss_db;
        let dr = assign_data_rate(rx_at_gw);
        if let Some(dr) = dr {
            debug_assert!(closes_at_gateway(rx_at_gw, dr));
            in_coverage += 1;
        }

        let confirmed = interleaved(i, cfg.confirmed_fraction);
        let data_reply = match cfg.policy.dl_payload_semantics {
            DlSemantics::AckOnly => false,
            DlSemantics::DataReply => true,
            DlSemantics::Mixed => {
                if confirmed {
                    confirmed_rank % 2 == 0
                } else {
                    false
                }
            }
        };
        if confirmed {
            confirmed_rank += 1;
        }

        let period = period_of(i);
        let mut phase_stream = RngStream::new(master_seed, i as u64, StreamPurpose::Phase);
        let phase = SimDuration::from_secs_f64(
            phase_stream.uniform(0.0, period.as_secs_f64()),
        );

        summaries.push(DeviceSummary {
            id: i,
            x_m: position.x_m,
            y_m: position.y_m,
            indoor,
            wall_loss_db,
            distance_m: position.distance_to(&gateway_position),
            link_loss_db,
            dr,
            confirmed,
            data_reply,
            period,
        });
        entries.push(LinkEntry { position, shadow_db, loss_to_gateway_db: link_loss_db });
        devices.push(Device::new(
            DeviceConfig {
                id: i,
                position,
                dr: dr.unwrap_or(DataRate::new(0).unwrap()),
                tx_power_dbm: cfg.tx_power_dbm,
                confirmed,
                data_reply,
                app_period: period,
                phase,
                max_attempts: cfg.policy.max_attempts,
                in_coverage: dr.is_some(),
                link_loss_db,
                shadow_db,
            },
            master_seed,
        ));
    }

    if in_coverage == 0 {
        return Err(BuildError::NoCoverage);
    }

    let links = LinkTable {
        propagation: cfg.propagation,
        device_tx_power_dbm: cfg.tx_power_dbm,
        entries,
    };
    let matrix = IsolationMatrix::from_margins(
        cfg.propagation.co_sf_capture_db,
        cfg.propagation.inter_sf_capture_db,
    );
    let mut world = World::new(
        devices,
        Gateway::new(cfg.gateway),
        Medium::new(matrix),
        links,
        cfg.policy,
        cfg.ul_params,
    );
    world.start_traffic();

    Ok(BuiltWorld { world, device_summaries: summaries, cell_radius_m: radius })
}

/// Expected path loss at the cell edge, handy for link-budget sanity checks.
pub fn edge_loss_db(cfg: &SimConfig) -> f64 {
    path_loss_db(cfg.resolved_cell_radius_m(), &cfg.propagation)
}
