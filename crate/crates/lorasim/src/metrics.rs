//! Run ledger and metric computation.
//!
//! The ledger is the complete record of a run: one row per PHY transmission,
//! one per application packet, window openings, and the gateway's downlink
//! log. Metrics (UL-PDR, CPSR, outcome breakdown, window averages) are a
//! pure function of the ledger and the measurement interval, so filtering
//! the warmup at collection time or post-hoc from the logs gives the same
//! numbers.

use crate::engine::RxWindow;
use crate::medium::{Direction, PhyOutcome};
use crate::time::{SimDuration, SimTime};

#[derive(Debug, Clone)]
pub struct TxRecord {
    pub tx_id: u64,
    /// End-device endpoint: the sender for uplinks, the addressee for
    /// downlinks (all downlinks are sent by the single gateway).
    pub device: u32,
    pub packet_idx: u32,
    pub attempt: u8,
    pub direction: Direction,
    pub frequency_hz: u32,
    pub sf: u8,
    pub start: SimTime,
    pub airtime: SimDuration,
    pub rx_power_dbm: f64,
    pub outcome: Option<PhyOutcome>,
}

#[derive(Debug, Clone)]
pub struct PacketRecord {
    pub device: u32,
    pub packet_seq: u64,
    pub confirmed: bool,
    pub generated_at: SimTime,
    /// Dropped at generation because the device was mid-exchange.
    pub superseded: bool,
    pub attempts: u8,
    /// At least one attempt was received by the gateway.
    pub delivered: bool,
    /// The device accepted an acknowledgment.
    pub acked: bool,
    /// Window in which the acknowledgment arrived.
    pub acked_in: Option<RxWindow>,
    pub rx1_opened: u8,
    pub rx2_opened: u8,
}

#[derive(Debug, Clone)]
pub struct WindowRecord {
    pub device: u32,
    pub packet_idx: u32,
    pub attempt: u8,
    pub window: RxWindow,
    pub open_at: SimTime,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GatewayEvent {
    Dispatch,
    Defer,
    Drop,
    Kill,
}

impl GatewayEvent {
    pub fn label(self) -> &'static str {
        match self {
            GatewayEvent::Dispatch => "dispatch",
            GatewayEvent::Defer => "defer",
            GatewayEvent::Drop => "drop",
            GatewayEvent::Kill => "kill",
        }
    }
}

#[derive(Debug, Clone)]
pub struct GatewayRecord {
    pub time: SimTime,
    pub event: GatewayEvent,
    pub device: u32,
    pub packet_seq: u64,
    pub window: RxWindow,
    pub frequency_hz: u32,
    pub sf: u8,
    /// Killed transmission id, or a defer/drop reason.
    pub detail: String,
}

#[derive(Debug, Default)]
pub struct OutcomeLedger {
    pub transmissions: Vec<TxRecord>,
    pub packets: Vec<PacketRecord>,
    pub windows: Vec<WindowRecord>,
    pub gateway_log: Vec<GatewayRecord>,
    /// Acknowledgment jobs that missed both windows.
    pub unserved_acks: u64,
    pub devices_total: u32,
    pub devices_in_coverage: u32,
    pub duty_cycle_violations: u64,
}

/// Per-class delivery tallies.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ClassCounts {
    pub generated: u64,
    pub superseded: u64,
    pub delivered: u64,
    pub acked: u64,
}

impl ClassCounts {
    pub fn pdr(&self) -> f64 {
        if self.generated == 0 {
            0.0
        } else {
            self.delivered as f64 / self.generated as f64
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsReport {
    pub confirmed: ClassCounts,
    pub unconfirmed: ClassCounts,
    /// S, U, I, R, T counts over uplink transmissions of measured packets.
    pub outcome_counts: [u64; 5],
    pub ul_transmissions: u64,
    pub dl_transmissions: u64,
    pub dl_unserved: u64,
    pub avg_rx1_per_confirmed: f64,
    pub avg_rx2_per_confirmed: f64,
    pub devices_in_coverage: u32,
    /// No packets fell inside the measurement interval.
    pub empty: bool,
}

impl MetricsReport {
    pub fn generated(&self) -> u64 {
        self.confirmed.generated + self.unconfirmed.generated
    }

    pub fn delivered(&self) -> u64 {
        self.confirmed.delivered + self.unconfirmed.delivered
    }

    /// Overall uplink packet delivery ratio.
    pub fn ulpdr(&self) -> f64 {
        if self.generated() == 0 {
            0.0
        } else {
            self.delivered() as f64 / self.generated() as f64
        }
    }

    pub fn ulpdr_confirmed(&self) -> f64 {
        self.confirmed.pdr()
    }

    pub fn ulpdr_unconfirmed(&self) -> f64 {
        self.unconfirmed.pdr()
    }

    /// Confirmed packet success rate: uplink delivered and acknowledgment
    /// received within the available attempts.
    pub fn cpsr(&self) -> f64 {
        if self.confirmed.generated == 0 {
            0.0
        } else {
            self.confirmed.acked as f64 / self.confirmed.generated as f64
        }
    }

    pub fn outcome(&self, o: PhyOutcome) -> u64 {
        self.outcome_counts[outcome_slot(o)]
    }
}

pub fn outcome_slot(o: PhyOutcome) -> usize {
    match o {
        PhyOutcome::Delivered => 0,
        PhyOutcome::UnderSensitivity => 1,
        PhyOutcome::Interfered => 2,
        PhyOutcome::ReceiverSaturated => 3,
        PhyOutcome::GatewayTx => 4,
    }
}

/// Compute metrics over packets generated in [measure_from, measure_to).
pub fn compute_metrics(
    ledger: &OutcomeLedger,
    measure_from: SimTime,
    measure_to: SimTime,
) -> MetricsReport {
    let mut report = MetricsReport {
        devices_in_coverage: ledger.devices_in_coverage,
        dl_unserved: ledger.unserved_acks,
        ..Default::default()
    };

    let measured = |idx: u32| -> bool {
        let p = &ledger.packets[idx as usize];
        p.generated_at >= measure_from && p.generated_at < measure_to
    };

    let mut confirmed_exchanges = 0u64;
    let mut rx1_total = 0u64;
    let mut rx2_total = 0u64;

    for (idx, p) in ledger.packets.iter().enumerate() {
        if !measured(idx as u32) {
            continue;
        }
        let class = if p.confirmed { &mut report.confirmed } else { &mut report.unconfirmed };
        class.generated += 1;
        class.superseded += u64::from(p.superseded);
        class.delivered += u64::from(p.delivered);
        class.acked += u64::from(p.acked);
        if p.confirmed && p.attempts > 0 {
            confirmed_exchanges += 1;
            rx1_total += u64::from(p.rx1_opened);
            rx2_total += u64::from(p.rx2_opened);
        }
    }

    for tx in &ledger.transmissions {
        if !measured(tx.packet_idx) {
            continue;
        }
        match tx.direction {
            Direction::Uplink => {
                report.ul_transmissions += 1;
                let outcome = tx.outcome.expect("uplink without outcome tag");
                report.outcome_counts[outcome_slot(outcome)] += 1;
            }
            Direction::Downlink => report.dl_transmissions += 1,
        }
    }

    if confirmed_exchanges > 0 {
        report.avg_rx1_per_confirmed = rx1_total as f64 / confirmed_exchanges as f64;
        report.avg_rx2_per_confirmed = rx2_total as f64 / confirmed_exchanges as f64;
    }
    report.empty = report.generated() == 0;
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    fn packet(confirmed: bool, at_s: u64, delivered: bool, acked: bool) -> PacketRecord {
        PacketRecord {
            device: 0,
            packet_seq: 0,
            confirmed,
            generated_at: SimTime::from_secs(at_s),
            superseded: false,
            attempts: 1,
            delivered,
            acked,
            rx1_opened: 1,
            rx2_opened: 0,
        }
    }

    #[test]
    fn empty_ledger_reports_empty() {
        let ledger = OutcomeLedger::default();
        let m = compute_metrics(&ledger, SimTime::ZERO, SimTime::from_secs(100));
        assert!(m.empty);
        assert_eq!(m.ulpdr(), 0.0);
    }

    #[test]
    fn warmup_filter_excludes_early_packets() {
        let mut ledger = OutcomeLedger::default();
        ledger.packets.push(packet(true, 10, true, true));
        ledger.packets.push(packet(true, 200, true, false));
        let m = compute_metrics(&ledger, SimTime::from_secs(100), SimTime::from_secs(1000));
        assert_eq!(m.confirmed.generated, 1);
        assert_eq!(m.cpsr(), 0.0);
        assert_eq!(m.ulpdr(), 1.0);
    }

    #[test]
    fn per_class_split_recombines_to_overall() {
        let mut ledger = OutcomeLedger::default();
        ledger.packets.push(packet(true, 10, true, true));
        ledger.packets.push(packet(true, 11, false, false));
        ledger.packets.push(packet(false, 12, true, false));
        ledger.packets.push(packet(false, 13, true, false));
        let m = compute_metrics(&ledger, SimTime::ZERO, SimTime::from_secs(100));
        let weighted = (m.ulpdr_confirmed() * m.confirmed.generated as f64
            + m.ulpdr_unconfirmed() * m.unconfirmed.generated as f64)
            / m.generated() as f64;
        assert!((m.ulpdr() - weighted).abs() < 1e-12);
        assert!((m.ulpdr() - 0.75).abs() < 1e-12);
    }
}
