//! The shared radio medium: concurrent transmissions, pairwise interference
//! energy bookkeeping, and the SF-isolation capture check.
//!
//! Interference is integrated as energy over the overlap with the victim
//! signal, then compared per spreading-factor bucket against the isolation
//! matrix. Since transmissions are never truncated once started, all overlap
//! windows are known the moment the later transmission begins, and the
//! bookkeeping is a single pass at each transmission start.

use crate::phy::DataRate;
use crate::time::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Uplink,
    Downlink,
}

impl Direction {
    pub fn label(self) -> &'static str {
        match self {
            Direction::Uplink => "UL",
            Direction::Downlink => "DL",
        }
    }
}

/// One on-air radio signal.
#[derive(Debug, Clone)]
pub struct Transmission {
    pub id: u64,
    /// Sending device, or `None` when the gateway transmits.
    pub sender_device: Option<u32>,
    pub direction: Direction,
    pub frequency_hz: u32,
    pub dr: DataRate,
    pub tx_power_dbm: f64,
    pub start: SimTime,
    pub end: SimTime,
    /// Received power at the relevant receiver: the gateway for uplinks, the
    /// addressed device for downlinks.
    pub rx_power_dbm: f64,
    /// Downlink addressee.
    pub target_device: Option<u32>,
    /// True when this downlink was dispatched with transmit priority and
    /// therefore disrupts gateway reception while on air.
    pub disrupts_reception: bool,
}

/// Outcome of a PHY transmission at its receiver. For uplinks this is the
/// five-way gateway taxonomy; downlink rows reuse the same letters
/// (S received, U under sensitivity, R no receiver available, I interference).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PhyOutcome {
    /// S: correctly received.
    Delivered,
    /// U: arrived below the receiver sensitivity; never locked.
    UnderSensitivity,
    /// I: locked, but interference broke the capture margin.
    Interfered,
    /// R: no free reception path on the arrival frequency.
    ReceiverSaturated,
    /// T: reception disrupted by a gateway transmission.
    GatewayTx,
}

impl PhyOutcome {
    pub fn letter(self) -> &'static str {
        match self {
            PhyOutcome::Delivered => "S",
            PhyOutcome::UnderSensitivity => "U",
            PhyOutcome::Interfered => "I",
            PhyOutcome::ReceiverSaturated => "R",
            PhyOutcome::GatewayTx => "T",
        }
    }
}

/// Required capture margin in dB for (signal SF, interferer SF) pairs.
#[derive(Debug, Clone)]
pub struct IsolationMatrix {
    thresholds: [[f64; 6]; 6],
}

impl IsolationMatrix {
    /// Build from a same-SF margin and a single cross-SF margin.
    pub fn from_margins(co_sf_db: f64, inter_sf_db: f64) -> Self {
        assert!(co_sf_db > 0.0, "co-SF capture threshold must be positive");
        assert!(inter_sf_db <= 0.0, "inter-SF capture threshold must be <= 0");
        let mut thresholds = [[inter_sf_db; 6]; 6];
        for (i, row) in thresholds.iter_mut().enumerate() {
            row[i] = co_sf_db;
        }
        IsolationMatrix { thresholds }
    }

    pub fn threshold_db(&self, signal_sf: u8, interferer_sf: u8) -> f64 {
        self.thresholds[(signal_sf - 7) as usize][(interferer_sf - 7) as usize]
    }
}

fn dbm_to_mw(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

/// Capture check for one locked reception: the signal survives iff, for
/// every SF bucket with interference energy, its power exceeds the
/// overlap-averaged interferer power by the required margin.
pub fn capture_survives(
    signal_power_dbm: f64,
    signal_sf: u8,
    signal_duration_s: f64,
    energy_mw_s_by_sf: &[f64; 6],
    matrix: &IsolationMatrix,
) -> bool {
    for (bucket, &energy) in energy_mw_s_by_sf.iter().enumerate() {
        if energy <= 0.0 {
            continue;
        }
        let interferer_sf = bucket as u8 + 7;
        let avg_power_dbm = 10.0 * (energy / signal_duration_s).log10();
        if signal_power_dbm - avg_power_dbm < matrix.threshold_db(signal_sf, interferer_sf) {
            return false;
        }
    }
    true
}

/// Supplies cross-link received powers that are not precomputed on the
/// transmission itself (device-to-device overhearing).
pub trait LinkOracle {
    /// Received power at `receiver_device` of an uplink sent by
    /// `sender_device`.
    fn uplink_power_at_device(&self, sender_device: u32, receiver_device: u32) -> f64;
}

struct ActiveTx {
    tx: Transmission,
    /// Interference energy (mW*s) per interferer-SF bucket, present while a
    /// receiver is locked onto this transmission.
    acc: Option<[f64; 6]>,
}

/// The set of transmissions currently on the air.
pub struct Medium {
    matrix: IsolationMatrix,
    active: Vec<ActiveTx>,
}

impl Medium {
    pub fn new(matrix: IsolationMatrix) -> Self {
        Medium { matrix, active: Vec::new() }
    }

    pub fn matrix(&self) -> &IsolationMatrix {
        &self.matrix
    }

    /// Register a transmission. `locked` says whether a receiver locked onto
    /// it at arrival (a reception path for uplinks, the addressed device for
    /// downlinks); only locked transmissions need capture bookkeeping.
    ///
    /// Interference is mutual and accrues only between transmissions on the
    /// same carrier. The gateway's own downlinks do not interfere with
    /// uplink receptions here: that conflict is modeled by the
    /// transmit-priority kill rules instead.
    pub fn begin(&mut self, tx: Transmission, locked: bool, links: &dyn LinkOracle) {
        let mut acc = if locked { Some([0.0; 6]) } else { None };

        for other in &mut self.active {
            if other.tx.frequency_hz != tx.frequency_hz || other.tx.end <= tx.start {
                continue;
            }
            let overlap_s = (other.tx.end.min(tx.end) - tx.start).as_secs_f64();

            // New transmission interferes with the ongoing locked reception.
            if let Some(other_acc) = other.acc.as_mut() {
                if let Some(power) = interference_power_dbm(&tx, &other.tx, links) {
                    other_acc[(tx.dr.sf() - 7) as usize] += dbm_to_mw(power) * overlap_s;
                }
            }
            // Ongoing transmission interferes with the new locked reception.
            if let Some(new_acc) = acc.as_mut() {
                if let Some(power) = interference_power_dbm(&other.tx, &tx, links) {
                    new_acc[(other.tx.dr.sf() - 7) as usize] += dbm_to_mw(power) * overlap_s;
                }
            }
        }

        self.active.push(ActiveTx { tx, acc });
    }

    /// Abort the reception of `tx_id` (gateway transmit kill). The signal
    /// itself stays on the air and keeps interfering.
    pub fn abort_reception(&mut self, tx_id: u64) {
        if let Some(entry) = self.active.iter_mut().find(|a| a.tx.id == tx_id) {
            entry.acc = None;
        }
    }

    /// Remove a finished transmission. Returns whether the locked reception
    /// survived capture, or `None` when nothing was still receiving it.
    pub fn end(&mut self, tx_id: u64) -> Option<bool> {
        let idx = self
            .active
            .iter()
            .position(|a| a.tx.id == tx_id)
            .expect("ending a transmission that is not active");
        let entry = self.active.swap_remove(idx);
        entry.acc.map(|acc| {
            capture_survives(
                entry.tx.rx_power_dbm,
                entry.tx.dr.sf(),
                (entry.tx.end - entry.tx.start).as_secs_f64(),
                &acc,
                &self.matrix,
            )
        })
    }

    /// Active transmissions on a carrier, in registration order.
    pub fn active_on(&self, frequency_hz: u32) -> impl Iterator<Item = &Transmission> {
        self.active
            .iter()
            .filter(move |a| a.tx.frequency_hz == frequency_hz)
            .map(|a| &a.tx)
    }

    pub fn active_count(&self) -> usize {
        self.active.len()
    }
}

/// Power of `interferer` at the receiver of `victim`, or `None` when the
/// pair does not interact (gateway self-interference, serialized downlinks).
fn interference_power_dbm(
    interferer: &Transmission,
    victim: &Transmission,
    links: &dyn LinkOracle,
) -> Option<f64> {
    if interferer.id == victim.id {
        return None;
    }
    match (victim.direction, interferer.direction) {
        // Uplink received at the gateway, interfered by another uplink.
        (Direction::Uplink, Direction::Uplink) => Some(interferer.rx_power_dbm),
        // The gateway transmitting over its own receiver is handled by the
        // transmit-priority kill model, not as capture interference.
        (Direction::Uplink, Direction::Downlink) => None,
        // Downlink received at a device, interfered by a neighbor's uplink.
        (Direction::Downlink, Direction::Uplink) => {
            let receiver = victim.target_device.expect("downlink without target");
            let sender = interferer.sender_device.expect("uplink without sender");
            if sender == receiver {
                // A device cannot interfere with its own reception; Class-A
                // timing already prevents this overlap.
                return None;
            }
            Some(links.uplink_power_at_device(sender, receiver))
        }
        // The single gateway transmitter never overlaps itself.
        (Direction::Downlink, Direction::Downlink) => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::time::SimDuration;

    struct NoCrossLinks;
    impl LinkOracle for NoCrossLinks {
        fn uplink_power_at_device(&self, _: u32, _: u32) -> f64 {
            -200.0
        }
    }

    fn ul(id: u64, sf: u8, rx_power: f64, start_s: f64, dur_s: f64) -> Transmission {
        let start = SimTime::from_secs_f64(start_s);
        Transmission {
            id,
            sender_device: Some(id as u32),
            direction: Direction::Uplink,
            frequency_hz: 868_100_000,
            dr: DataRate::from_sf(sf).unwrap(),
            tx_power_dbm: 14.0,
            start,
            end: start + SimDuration::from_secs_f64(dur_s),
            rx_power_dbm: rx_power,
            target_device: None,
            disrupts_reception: false,
        }
    }

    fn default_medium() -> Medium {
        Medium::new(IsolationMatrix::from_margins(6.0, -16.0))
    }

    #[test]
    fn matrix_margins() {
        let m = IsolationMatrix::from_margins(6.0, -16.0);
        assert_eq!(m.threshold_db(7, 7), 6.0);
        assert_eq!(m.threshold_db(12, 12), 6.0);
        assert_eq!(m.threshold_db(7, 12), -16.0);
        assert_eq!(m.threshold_db(12, 7), -16.0);
    }

    #[test]
    fn no_interferers_survive() {
        let mut medium = default_medium();
        medium.begin(ul(1, 7, -100.0, 0.0, 1.0), true, &NoCrossLinks);
        assert_eq!(medium.end(1), Some(true));
    }

    #[test]
    fn co_sf_ten_db_margin_beats_six_db_threshold() {
        // Full overlap, interferer 10 dB weaker: the strong one survives,
        // the weak one (margin -10 dB) fails.
        let mut medium = default_medium();
        medium.begin(ul(1, 7, -100.0, 0.0, 1.0), true, &NoCrossLinks);
        medium.begin(ul(2, 7, -110.0, 0.0, 1.0), true, &NoCrossLinks);
        assert_eq!(medium.end(1), Some(true));
        assert_eq!(medium.end(2), Some(false));
    }

    #[test]
    fn equal_power_co_sf_overlap_kills_both() {
        let mut medium = default_medium();
        medium.begin(ul(1, 9, -105.0, 0.0, 1.0), true, &NoCrossLinks);
        medium.begin(ul(2, 9, -105.0, 0.0, 1.0), true, &NoCrossLinks);
        assert_eq!(medium.end(1), Some(false));
        assert_eq!(medium.end(2), Some(false));
    }

    #[test]
    fn cross_sf_interference_is_tolerated_up_to_16_db() {
        let mut medium = default_medium();
        medium.begin(ul(1, 7, -110.0, 0.0, 1.0), true, &NoCrossLinks);
        medium.begin(ul(2, 9, -100.0, 0.0, 1.0), true, &NoCrossLinks); // 10 dB stronger
        assert_eq!(medium.end(1), Some(true), "within quasi-orthogonal margin");
        assert_eq!(medium.end(2), Some(true));
    }

    #[test]
    fn partial_overlap_scales_energy() {
        // Interferer at equal power but only 10% overlap: average power is
        // -10 dB relative, margin 10 dB >= 6 dB, so the signal survives.
        let mut medium = default_medium();
        medium.begin(ul(1, 8, -100.0, 0.0, 1.0), true, &NoCrossLinks);
        medium.begin(ul(2, 8, -100.0, 0.9, 1.0), true, &NoCrossLinks);
        assert_eq!(medium.end(1), Some(true));
    }

    #[test]
    fn different_carriers_do_not_interact() {
        let mut medium = default_medium();
        let mut a = ul(1, 7, -100.0, 0.0, 1.0);
        a.frequency_hz = 868_100_000;
        let mut b = ul(2, 7, -100.0, 0.0, 1.0);
        b.frequency_hz = 868_300_000;
        medium.begin(a, true, &NoCrossLinks);
        medium.begin(b, true, &NoCrossLinks);
        assert_eq!(medium.end(1), Some(true));
        assert_eq!(medium.end(2), Some(true));
    }

    #[test]
    fn aborted_reception_reports_nothing_but_still_interferes() {
        let mut medium = default_medium();
        medium.begin(ul(1, 7, -100.0, 0.0, 1.0), true, &NoCrossLinks);
        medium.begin(ul(2, 7, -100.0, 0.0, 1.0), true, &NoCrossLinks);
        medium.abort_reception(1);
        assert_eq!(medium.end(1), None);
        // Tx 1 still contributed interference energy against tx 2.
        assert_eq!(medium.end(2), Some(false));
    }
}
