//! Radio propagation: log-distance path loss, a spatially correlated
//! shadowing field, building penetration, and data-rate assignment from the
//! resulting link budget.
//!
//! The channel is frozen for the whole run: every link's total loss is a
//! pure function of the endpoints, so repeated queries agree and the link is
//! symmetric by construction.

use serde::{Deserialize, Serialize};

use crate::phy::{device_sensitivity_dbm, gateway_sensitivity_dbm, DataRate};
use crate::rng::RngStream;

/// Where a node sits. `wall_loss_db` is zero for outdoor nodes and drawn
/// from the building model for indoor ones.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Position {
    pub x_m: f64,
    pub y_m: f64,
    pub indoor: bool,
    pub wall_loss_db: f64,
}

impl Position {
    pub fn outdoor(x_m: f64, y_m: f64) -> Self {
        Position { x_m, y_m, indoor: false, wall_loss_db: 0.0 }
    }

    pub fn distance_to(&self, other: &Position) -> f64 {
        let dx = self.x_m - other.x_m;
        let dy = self.y_m - other.y_m;
        (dx * dx + dy * dy).sqrt()
    }
}

/// External-wall penetration losses drawn uniformly for indoor devices.
pub const WALL_LOSS_CHOICES_DB: [f64; 4] = [0.0, 10.0, 20.0, 30.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PropagationConfig {
    pub path_loss_exponent: f64,
    /// Loss in dB at `reference_distance_m`.
    pub reference_loss_db: f64,
    pub reference_distance_m: f64,
    pub shadowing_sigma_db: f64,
    pub shadowing_correlation_m: f64,
    pub buildings_enabled: bool,
    /// Fraction of devices placed indoors when buildings are enabled.
    pub indoor_fraction: f64,
    /// Capture margin required against same-SF interference, in dB.
    pub co_sf_capture_db: f64,
    /// Capture margin required against other-SF interference, in dB
    /// (negative: quasi-orthogonal SFs tolerate stronger interferers).
    pub inter_sf_capture_db: f64,
}

impl Default for PropagationConfig {
    fn default() -> Self {
        PropagationConfig {
            path_loss_exponent: 3.76,
            reference_loss_db: 8.1,
            reference_distance_m: 1.0,
            shadowing_sigma_db: 0.0,
            shadowing_correlation_m: 110.0,
            buildings_enabled: false,
            indoor_fraction: 0.5,
            co_sf_capture_db: 6.0,
            inter_sf_capture_db: -16.0,
        }
    }
}

impl PropagationConfig {
    /// Urban profile: shadowing and buildings on.
    pub fn urban_default() -> Self {
        PropagationConfig {
            shadowing_sigma_db: 6.0,
            buildings_enabled: true,
            ..PropagationConfig::default()
        }
    }

    /// Distance at which a link at `tx_power_dbm` still closes against
    /// `sensitivity_dbm` on path loss alone.
    pub fn range_for(&self, tx_power_dbm: f64, sensitivity_dbm: f64) -> f64 {
        let budget = tx_power_dbm - sensitivity_dbm - self.reference_loss_db;
        self.reference_distance_m * 10f64.powf(budget / (10.0 * self.path_loss_exponent))
    }
}

/// Log-distance path loss in dB. Distances below the reference distance are
/// clamped to it.
pub fn path_loss_db(distance_m: f64, cfg: &PropagationConfig) -> f64 {
    let d = distance_m.max(cfg.reference_distance_m);
    cfg.reference_loss_db
        + 10.0 * cfg.path_loss_exponent * (d / cfg.reference_distance_m).log10()
}

/// Stationary Gaussian shadowing field with exponential spatial correlation
/// exp(-d / correlation distance), realized as a sum of random sinusoids.
/// The field is frozen when constructed, so every query at the same point
/// returns the same value.
pub struct ShadowingField {
    sigma_db: f64,
    components: Vec<(f64, f64, f64)>, // (kx, ky, phase)
}

const FIELD_COMPONENTS: usize = 256;

impl ShadowingField {
    pub fn new(cfg: &PropagationConfig, stream: &mut RngStream) -> Self {
        let mut components = Vec::with_capacity(FIELD_COMPONENTS);
        if cfg.shadowing_sigma_db > 0.0 {
            let a = cfg.shadowing_correlation_m.max(1e-9);
            for _ in 0..FIELD_COMPONENTS {
                // Radial wavenumber from the spectral density of the
                // exponential covariance in 2D: k = sqrt(u^-2 - 1) / a.
                let u = 1.0 - stream.uniform(0.0, 1.0); // (0, 1]
                let k = (u.powi(-2) - 1.0).sqrt() / a;
                let theta = stream.uniform(0.0, std::f64::consts::TAU);
                let phase = stream.uniform(0.0, std::f64::consts::TAU);
                components.push((k * theta.cos(), k * theta.sin(), phase));
            }
        }
        ShadowingField { sigma_db: cfg.shadowing_sigma_db, components }
    }

    pub fn sample_db(&self, pos: &Position) -> f64 {
        if self.sigma_db == 0.0 {
            return 0.0;
        }
        let scale = self.sigma_db * (2.0 / self.components.len() as f64).sqrt();
        let sum: f64 = self
            .components
            .iter()
            .map(|(kx, ky, phase)| (kx * pos.x_m + ky * pos.y_m + phase).cos())
            .sum();
        scale * sum
    }
}

/// Total loss of the link between a device and the gateway: path loss plus
/// the device's shadowing and wall loss. Symmetric in direction.
pub fn device_gateway_loss_db(
    device: &Position,
    gateway: &Position,
    shadow_db: f64,
    cfg: &PropagationConfig,
) -> f64 {
    path_loss_db(device.distance_to(gateway), cfg) + shadow_db + device.wall_loss_db
}

/// Loss between two end devices, needed when one device's receive window
/// overhears another's uplink. Averages the endpoint shadowing values and
/// charges both walls; symmetric by construction.
pub fn device_device_loss_db(
    a: &Position,
    b: &Position,
    shadow_a_db: f64,
    shadow_b_db: f64,
    cfg: &PropagationConfig,
) -> f64 {
    path_loss_db(a.distance_to(b), cfg)
        + 0.5 * (shadow_a_db + shadow_b_db)
        + a.wall_loss_db
        + b.wall_loss_db
}

/// Pick the fastest data rate whose end-device sensitivity still closes the
/// link at `rx_power_dbm`, or `None` if even SF12 does not. Assigning
/// against the (laxer) device thresholds guarantees the downlink at the same
/// SF closes too, since gateway sensitivities are strictly lower.
pub fn assign_data_rate(rx_power_dbm: f64) -> Option<DataRate> {
    DataRate::all()
        .rev() // DR5/SF7 first
        .find(|dr| rx_power_dbm >= device_sensitivity_dbm(dr.sf()))
}

/// Check that an assigned uplink also closes at the gateway.
pub fn closes_at_gateway(rx_power_dbm: f64, dr: DataRate) -> bool {
    rx_power_dbm >= gateway_sensitivity_dbm(dr.sf())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{RngStream, StreamPurpose, WORLD_OWNER};

    #[test]
    fn path_loss_at_reference_distance_is_reference_loss() {
        let cfg = PropagationConfig::default();
        assert!((path_loss_db(1.0, &cfg) - 8.1).abs() < 1e-12);
    }

    #[test]
    fn tenfold_distance_adds_ten_n_db() {
        let cfg = PropagationConfig::default();
        let d1 = path_loss_db(100.0, &cfg);
        let d2 = path_loss_db(1000.0, &cfg);
        assert!((d2 - d1 - 37.6).abs() < 1e-9);
    }

    #[test]
    fn zero_distance_clamps_to_reference() {
        let cfg = PropagationConfig::default();
        assert_eq!(path_loss_db(0.0, &cfg), path_loss_db(1.0, &cfg));
    }

    #[test]
    fn loss_at_1500m_stays_inside_sf7_uplink_budget() {
        // Hand computation: 8.1 + 37.6*log10(1500) = 127.52 dB, under the
        // 14 - (-130) = 144 dB budget against the gateway's SF7 threshold.
        let cfg = PropagationConfig::default();
        let loss = path_loss_db(1500.0, &cfg);
        assert!((loss - 127.521).abs() < 0.01, "loss {loss}");
        assert!(loss < 144.0);
    }

    #[test]
    fn zero_sigma_means_zero_shadowing() {
        let cfg = PropagationConfig::default();
        let mut stream = RngStream::new(1, WORLD_OWNER, StreamPurpose::ShadowField);
        let field = ShadowingField::new(&cfg, &mut stream);
        assert_eq!(field.sample_db(&Position::outdoor(123.0, -456.0)), 0.0);
    }

    #[test]
    fn colocated_devices_share_the_shadowing_value() {
        let cfg = PropagationConfig { shadowing_sigma_db: 6.0, ..Default::default() };
        let mut stream = RngStream::new(7, WORLD_OWNER, StreamPurpose::ShadowField);
        let field = ShadowingField::new(&cfg, &mut stream);
        let p = Position::outdoor(250.0, 975.0);
        assert_eq!(field.sample_db(&p), field.sample_db(&p));
    }

    #[test]
    fn shadowing_std_matches_sigma() {
        let cfg = PropagationConfig { shadowing_sigma_db: 6.0, ..Default::default() };
        let mut stream = RngStream::new(99, WORLD_OWNER, StreamPurpose::ShadowField);
        let field = ShadowingField::new(&cfg, &mut stream);
        let mut draws = RngStream::new(3, WORLD_OWNER, StreamPurpose::Placement);
        let n = 10_000;
        let samples: Vec<f64> = (0..n)
            .map(|_| {
                let p = Position::outdoor(draws.uniform(-20e3, 20e3), draws.uniform(-20e3, 20e3));
                field.sample_db(&p)
            })
            .collect();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = samples.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n as f64;
        let std = var.sqrt();
        assert!((std - 6.0).abs() / 6.0 < 0.05, "std {std}");
    }

    #[test]
    fn shadowing_decorrelates_with_distance() {
        let cfg = PropagationConfig { shadowing_sigma_db: 6.0, ..Default::default() };
        let mut stream = RngStream::new(11, WORLD_OWNER, StreamPurpose::ShadowField);
        let field = ShadowingField::new(&cfg, &mut stream);
        let mut draws = RngStream::new(4, WORLD_OWNER, StreamPurpose::Placement);
        let mut corr_at = |d: f64| {
            let n = 4000;
            let mut sum = 0.0;
            for _ in 0..n {
                let p = Position::outdoor(draws.uniform(-20e3, 20e3), draws.uniform(-20e3, 20e3));
                let theta = draws.uniform(0.0, std::f64::consts::TAU);
                let q = Position::outdoor(p.x_m + d * theta.cos(), p.y_m + d * theta.sin());
                sum += field.sample_db(&p) * field.sample_db(&q);
            }
            sum / (n as f64 * 36.0)
        };
        let near = corr_at(10.0);
        let far = corr_at(2000.0);
        assert!(near > 0.7, "near correlation {near}");
        assert!(far < 0.3, "far correlation {far}");
    }

    #[test]
    fn data_rate_assignment_uses_device_thresholds() {
        assert_eq!(assign_data_rate(-120.0), DataRate::from_sf(7));
        assert_eq!(assign_data_rate(-126.0), DataRate::from_sf(8));
        assert_eq!(assign_data_rate(-138.0), None);
        // Boundary: exactly at threshold passes.
        assert_eq!(assign_data_rate(-124.0), DataRate::from_sf(7));
    }

    #[test]
    fn assigned_links_always_close_at_the_gateway() {
        for tenth_dbm in -1370..=-800 {
            let rx = tenth_dbm as f64 / 10.0;
            if let Some(dr) = assign_data_rate(rx) {
                assert!(closes_at_gateway(rx, dr), "rx {rx} dr {:?}", dr);
            }
        }
    }

    #[test]
    fn device_device_loss_is_symmetric() {
        let cfg = PropagationConfig::default();
        let a = Position { x_m: 10.0, y_m: 0.0, indoor: true, wall_loss_db: 20.0 };
        let b = Position::outdoor(-350.0, 40.0);
        let ab = device_device_loss_db(&a, &b, 3.0, -1.5, &cfg);
        let ba = device_device_loss_db(&b, &a, -1.5, 3.0, &cfg);
        assert_eq!(ab, ba);
    }
}
