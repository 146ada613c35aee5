//! Gateway model: a pool of parallel reception paths statically spread over
//! the uplink carriers, a single transmitter with half- or full-duplex
//! semantics, per-sub-band duty-cycle budgets, and the TX-vs-RX conflict
//! policy.

use serde::{Deserialize, Serialize};

use crate::engine::RxWindow;
use crate::phy::{gateway_sensitivity_dbm, DataRate};
use crate::region::{DutyCycleBudget, SubBandId, UPLINK_CARRIERS};
use crate::time::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DuplexMode {
    Half,
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConflictPolicy {
    /// Transmit immediately, killing in-progress receptions (commercial
    /// default).
    TxPriority,
    /// Never transmit while any reception path is occupied.
    RxPriority,
    /// Per-job: high-priority jobs behave like TX priority, low-priority
    /// ones like RX priority.
    Dynamic,
}

/// Importance mark a network server attaches to a downlink job.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JobPriority {
    High,
    Low,
}

impl ConflictPolicy {
    /// Does a job with the given mark preempt reception?
    pub fn transmit_style(self, priority: JobPriority) -> bool {
        match self {
            ConflictPolicy::TxPriority => true,
            ConflictPolicy::RxPriority => false,
            ConflictPolicy::Dynamic => priority == JobPriority::High,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GatewayConfig {
    pub reception_paths: u32,
    pub duplex: DuplexMode,
    pub conflict_policy: ConflictPolicy,
    pub dc_enforced: bool,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig {
            reception_paths: 8,
            duplex: DuplexMode::Half,
            conflict_policy: ConflictPolicy::TxPriority,
            dc_enforced: true,
        }
    }
}

/// Verdict on an uplink arrival, in precedence order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArrivalVerdict {
    /// Below gateway sensitivity: U.
    UnderSensitivity,
    /// All paths listening on the carrier are engaged: R.
    Saturated,
    /// A disruptive gateway transmission is on air: T.
    DisruptedByTx,
    /// Locked onto a reception path.
    Locked,
}

struct ReceptionPath {
    frequency_hz: u32,
    locked_tx: Option<u64>,
}

struct OngoingDownlink {
    tx_id: u64,
    frequency_hz: u32,
    end: SimTime,
    disrupts: bool,
}

/// A scheduled downlink transmission opportunity (one receive window).
#[derive(Debug, Clone, Copy)]
pub struct WindowPlan {
    pub window: RxWindow,
    pub open: SimTime,
    pub close: SimTime,
    pub frequency_hz: u32,
    pub dr: DataRate,
}

pub struct Gateway {
    pub cfg: GatewayConfig,
    paths: Vec<ReceptionPath>,
    shared_budget: DutyCycleBudget,
    downlink_budget: DutyCycleBudget,
    transmitting: Option<OngoingDownlink>,
}

impl Gateway {
    pub fn new(cfg: GatewayConfig) -> Self {
        // Paths are spread round-robin over the three uplink carriers at
        // setup (r=8 gives 3/3/2) and stay tuned there; the downlink carrier
        // needs no reception path.
        let paths = (0..cfg.reception_paths)
            .map(|i| ReceptionPath {
                frequency_hz: UPLINK_CARRIERS[i as usize % UPLINK_CARRIERS.len()],
                locked_tx: None,
            })
            .collect();
        Gateway {
            cfg,
            paths,
            shared_budget: DutyCycleBudget::new(SubBandId::SharedUplink),
            downlink_budget: DutyCycleBudget::new(SubBandId::DownlinkReserved),
            transmitting: None,
        }
    }

    pub fn paths_on(&self, frequency_hz: u32) -> usize {
        self.paths.iter().filter(|p| p.frequency_hz == frequency_hz).count()
    }

    pub fn locked_paths(&self) -> usize {
        self.paths.iter().filter(|p| p.locked_tx.is_some()).count()
    }

    pub fn any_path_occupied(&self) -> bool {
        self.paths.iter().any(|p| p.locked_tx.is_some())
    }

    /// Classify an uplink arrival and lock a path when possible.
    /// Precedence: under-sensitivity, then saturation, then disruption by an
    /// ongoing transmit-priority downlink.
    pub fn on_uplink_arrival(&mut self, tx_id: u64, frequency_hz: u32, sf: u8, rx_power_dbm: f64) -> ArrivalVerdict {
        if rx_power_dbm < gateway_sensitivity_dbm(sf) {
            return ArrivalVerdict::UnderSensitivity;
        }
        let path = self
            .paths
            .iter_mut()
            .find(|p| p.frequency_hz == frequency_hz && p.locked_tx.is_none());
        let Some(path) = path else {
            return ArrivalVerdict::Saturated;
        };
        if let Some(dl) = &self.transmitting {
            let hit = dl.disrupts
                && match self.cfg.duplex {
                    DuplexMode::Half => true,
                    DuplexMode::Full => dl.frequency_hz == frequency_hz,
                };
            if hit {
                return ArrivalVerdict::DisruptedByTx;
            }
        }
        path.locked_tx = Some(tx_id);
        ArrivalVerdict::Locked
    }

    /// Receptions a downlink on `frequency_hz` aborts: all of them on a
    /// half-duplex radio, only same-channel ones on a full-duplex one.
    /// The paths are released immediately (the radio gave up on them).
    pub fn kill_receptions_for_downlink(&mut self, frequency_hz: u32) -> Vec<u64> {
        let mut killed = Vec::new();
        for path in &mut self.paths {
            let same_channel = path.frequency_hz == frequency_hz;
            let in_scope = match self.cfg.duplex {
                DuplexMode::Half => true,
                DuplexMode::Full => same_channel,
            };
            if in_scope {
                if let Some(tx) = path.locked_tx.take() {
                    killed.push(tx);
                }
            }
        }
        killed
    }

    /// Free the path locked on `tx_id` at the end of its reception.
    pub fn release_path(&mut self, tx_id: u64) {
        for path in &mut self.paths {
            if path.locked_tx == Some(tx_id) {
                path.locked_tx = None;
                return;
            }
        }
    }

    pub fn transmitter_busy(&self) -> bool {
        self.transmitting.is_some()
    }

    pub fn transmitter_free_at(&self) -> Option<SimTime> {
        self.transmitting.as_ref().map(|dl| dl.end)
    }

    /// Earliest start allowed by the duty-cycle budget of the sub-band, or
    /// `now` when enforcement is off.
    pub fn earliest_tx_start(&self, band: SubBandId, now: SimTime) -> SimTime {
        if !self.cfg.dc_enforced {
            return now;
        }
        self.budget(band).earliest_start(now)
    }

    fn budget(&self, band: SubBandId) -> &DutyCycleBudget {
        match band {
            SubBandId::SharedUplink => &self.shared_budget,
            SubBandId::DownlinkReserved => &self.downlink_budget,
        }
    }

    /// Record the start of a downlink transmission.
    pub fn begin_downlink(
        &mut self,
        tx_id: u64,
        frequency_hz: u32,
        band: SubBandId,
        start: SimTime,
        end: SimTime,
        disrupts: bool,
    ) {
        debug_assert!(self.transmitting.is_none(), "gateway transmitter already busy");
        if self.cfg.dc_enforced {
            let budget = match band {
                SubBandId::SharedUplink => &mut self.shared_budget,
                SubBandId::DownlinkReserved => &mut self.downlink_budget,
            };
            budget.consume(start, end - start);
        }
        self.transmitting = Some(OngoingDownlink { tx_id, frequency_hz, end, disrupts });
    }

    pub fn end_downlink(&mut self, tx_id: u64) {
        match &self.transmitting {
            Some(dl) if dl.tx_id == tx_id => self.transmitting = None,
            _ => debug_assert!(false, "ending a downlink the gateway is not sending"),
        }
    }
}
