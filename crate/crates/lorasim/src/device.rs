//! Class-A end-device state.
//!
//! A device cycles through: idle, waiting for its duty-cycle budget or
//! retransmission backoff, transmitting, and the two receive windows that
//! follow every uplink. Locking onto a downlink (or, with the shared
//! preamble model, a neighbor's uplink) extends the window into a reception
//! that must finish before the exchange continues.

use crate::channel::Position;
use crate::engine::{EventHandle, RxWindow};
use crate::gateway::WindowPlan;
use crate::phy::DataRate;
use crate::region::{DutyCycleBudget, SubBandId};
use crate::rng::{RngStream, StreamPurpose};
use crate::time::{SimDuration, SimTime};

/// What a device locked onto during a receive window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LockKind {
    /// An acknowledgment addressed to this device.
    AckForMe,
    /// Anything else: a downlink for another device, or an uplink when the
    /// shared-preamble model is on. Time is wasted either way.
    Foreign,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MacState {
    Idle,
    /// Waiting for the duty-cycle budget and/or retransmission backoff.
    WaitingTx,
    Transmitting,
    AwaitRx1,
    Rx1Open,
    AwaitRx2,
    Rx2Open,
    /// Locked onto a signal; the window is extended until it ends.
    Receiving { window: RxWindow, tx: u64, kind: LockKind },
}

/// The in-flight application packet exchange.
pub struct Exchange {
    /// Index into the ledger's packet records.
    pub packet_idx: u32,
    pub packet_seq: u64,
    /// Attempts started so far (1-based after the first TxStart).
    pub attempt: u8,
    /// Channel drawn for the current attempt.
    pub channel_hz: u32,
    /// Receive-window schedule of the current attempt.
    pub plans: Option<[WindowPlan; 2]>,
    pub rx2_open_handle: Option<EventHandle>,
    /// RX2 opened while the RX1 reception was still in progress.
    pub rx2_passed: bool,
}

pub struct DeviceConfig {
    pub id: u32,
    pub position: Position,
    pub dr: DataRate,
    pub tx_power_dbm: f64,
    pub confirmed: bool,
    /// Downlink replies carry data (affects dynamic priority marking).
    pub data_reply: bool,
    pub app_period: SimDuration,
    pub phase: SimDuration,
    /// Maximum transmission attempts; 1 for unconfirmed traffic.
    pub max_attempts: u8,
    pub in_coverage: bool,
    /// Total loss to the gateway in dB (path + shadowing + walls).
    pub link_loss_db: f64,
    pub shadow_db: f64,
}

pub struct Device {
    pub cfg: DeviceConfig,
    pub state: MacState,
    pub exchange: Option<Exchange>,
    pub budget: DutyCycleBudget,
    pub mac_stream: RngStream,
    pub next_packet_seq: u64,
}

impl Device {
    pub fn new(cfg: DeviceConfig, master_seed: u64) -> Self {
        let mac_stream = RngStream::new(master_seed, cfg.id as u64, StreamPurpose::Mac);
        Device {
            cfg,
            state: MacState::Idle,
            exchange: None,
            budget: DutyCycleBudget::new(SubBandId::SharedUplink),
            mac_stream,
            next_packet_seq: 0,
        }
    }

    /// Uplink received power at the gateway.
    pub fn rx_power_at_gateway(&self) -> f64 {
        self.cfg.tx_power_dbm - self.cfg.link_loss_db
    }

    /// Effective attempt cap: unconfirmed traffic transmits once.
    pub fn attempt_cap(&self) -> u8 {
        if self.cfg.confirmed {
            self.cfg.max_attempts
        } else {
            1
        }
    }

    /// Backoff before a retransmission, drawn uniformly from [1 s, 3 s].
    pub fn draw_backoff(&mut self) -> SimDuration {
        SimDuration::from_secs_f64(self.mac_stream.uniform(1.0, 3.0))
    }

    /// Channel for the next attempt, drawn uniformly per attempt.
    pub fn draw_channel(&mut self) -> u32 {
        crate::region::UPLINK_CARRIERS[self.mac_stream.index(3)]
    }

    pub fn is_listening(&self, window: RxWindow) -> bool {
        matches!(
            (self.state, window),
            (MacState::Rx1Open, RxWindow::Rx1) | (MacState::Rx2Open, RxWindow::Rx2)
        )
    }
}

/// First packet-generation instant for a device: its phase within the
/// period.
pub fn first_generation(phase: SimDuration) -> SimTime {
    SimTime::ZERO + phase
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(confirmed: bool, m: u8) -> DeviceConfig {
        DeviceConfig {
            id: 0,
            position: Position::outdoor(100.0, 0.0),
            dr: DataRate::from_sf(7).unwrap(),
            tx_power_dbm: 14.0,
            confirmed,
            data_reply: false,
            app_period: SimDuration::from_secs(600),
            phase: SimDuration::from_secs(42),
            max_attempts: m,
            in_coverage: true,
            link_loss_db: 100.0,
            shadow_db: 0.0,
        }
    }

    #[test]
    fn unconfirmed_devices_transmit_once() {
        let dev = Device::new(config(false, 8), 1);
        assert_eq!(dev.attempt_cap(), 1);
        let dev = Device::new(config(true, 8), 1);
        assert_eq!(dev.attempt_cap(), 8);
    }

    #[test]
    fn backoff_is_within_one_to_three_seconds() {
        let mut dev = Device::new(config(true, 8), 7);
        for _ in 0..1000 {
            let b = dev.draw_backoff();
            assert!(b >= SimDuration::from_secs(1) && b < SimDuration::from_secs(3));
        }
    }

    #[test]
    fn channel_draw_covers_all_carriers() {
        let mut dev = Device::new(config(true, 8), 3);
        let mut seen = std::collections::HashSet::new();
        for _ in 0..100 {
            seen.insert(dev.draw_channel());
        }
        assert_eq!(seen.len(), 3);
    }

    #[test]
    fn rx_power_is_tx_minus_loss() {
        let dev = Device::new(config(true, 8), 1);
        assert_eq!(dev.rx_power_at_gateway(), -86.0);
    }
}
