//! EU868 channel plan and per-sub-band duty-cycle accounting.
//!
//! The three bidirectional carriers share a single 1% duty-cycle budget per
//! transmitter: a transmission on 868.1 MHz blocks 868.3 and 868.5 MHz too.
//! The downlink-reserved carrier at 869.525 MHz sits in its own 10% sub-band
//! with a higher power limit.

use crate::time::{SimDuration, SimTime};

/// Uplink carriers of the shared 1% sub-band, in Hz.
pub const UPLINK_CARRIERS: [u32; 3] = [868_100_000, 868_300_000, 868_500_000];

/// The downlink-reserved carrier, in Hz.
pub const DOWNLINK_CARRIER: u32 = 869_525_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SubBandId {
    /// 868.1/868.3/868.5 MHz, 1% duty cycle, 14 dBm, UL and DL.
    SharedUplink,
    /// 869.525 MHz, 10% duty cycle, 27 dBm, DL only.
    DownlinkReserved,
}

impl SubBandId {
    pub fn duty_cycle_ppm(self) -> u64 {
        match self {
            SubBandId::SharedUplink => 10_000,    // 1%
            SubBandId::DownlinkReserved => 100_000, // 10%
        }
    }

    pub fn duty_cycle_fraction(self) -> f64 {
        self.duty_cycle_ppm() as f64 / 1e6
    }

    pub fn max_tx_power_dbm(self) -> f64 {
        match self {
            SubBandId::SharedUplink => 14.0,
            SubBandId::DownlinkReserved => 27.0,
        }
    }

    pub fn downlink_only(self) -> bool {
        matches!(self, SubBandId::DownlinkReserved)
    }
}

/// Sub-band a carrier belongs to. Unknown carriers are a configuration bug.
pub fn subband_of(frequency_hz: u32) -> SubBandId {
    if UPLINK_CARRIERS.contains(&frequency_hz) {
        SubBandId::SharedUplink
    } else if frequency_hz == DOWNLINK_CARRIER {
        SubBandId::DownlinkReserved
    } else {
        panic!("frequency {frequency_hz} Hz is not in the channel plan");
    }
}

/// Off-time owed after transmitting for `airtime` under a duty-cycle limit:
/// T_off = T * (1/limit - 1), computed exactly in integer nanoseconds
/// (rounded up so the budget can never be overdrawn).
pub fn off_time(airtime: SimDuration, band: SubBandId) -> SimDuration {
    let ppm = band.duty_cycle_ppm() as u128;
    let t = airtime.0 as u128;
    let off = (t * (1_000_000 - ppm)).div_ceil(ppm);
    SimDuration(off as u64)
}

/// Duty-cycle ledger for one transmitter on one sub-band. A transmission may
/// start only at `next_allowed` or later.
#[derive(Debug, Clone)]
pub struct DutyCycleBudget {
    band: SubBandId,
    next_allowed: SimTime,
    violations: u64,
}

impl DutyCycleBudget {
    pub fn new(band: SubBandId) -> Self {
        DutyCycleBudget {
            band,
            next_allowed: SimTime::ZERO,
            violations: 0,
        }
    }

    pub fn next_allowed(&self) -> SimTime {
        self.next_allowed
    }

    pub fn violations(&self) -> u64 {
        self.violations
    }

    /// Earliest instant a transmission may start, given the current clock.
    pub fn earliest_start(&self, now: SimTime) -> SimTime {
        self.next_allowed.max(now)
    }

    /// Account for a transmission of `airtime` starting at `tx_start`.
    /// Starting before `next_allowed` is a protocol violation: fatal in debug
    /// builds, counted and blocked (budget untouched) in release builds.
    pub fn consume(&mut self, tx_start: SimTime, airtime: SimDuration) {
        if tx_start < self.next_allowed {
            debug_assert!(
                false,
                "duty-cycle violation: start {} before {}",
                tx_start.format_secs(),
                self.next_allowed.format_secs()
            );
            self.violations += 1;
            return;
        }
        if airtime == SimDuration::ZERO {
            return;
        }
        self.next_allowed = tx_start + airtime + off_time(airtime, self.band);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn channel_plan_is_the_eu_default() {
        assert_eq!(UPLINK_CARRIERS, [868_100_000, 868_300_000, 868_500_000]);
        assert_eq!(DOWNLINK_CARRIER, 869_525_000);
        assert_eq!(subband_of(868_300_000), SubBandId::SharedUplink);
        assert_eq!(subband_of(DOWNLINK_CARRIER), SubBandId::DownlinkReserved);
        assert_eq!(SubBandId::SharedUplink.duty_cycle_fraction(), 0.01);
        assert_eq!(SubBandId::DownlinkReserved.duty_cycle_fraction(), 0.10);
        assert_eq!(SubBandId::SharedUplink.max_tx_power_dbm(), 14.0);
        assert_eq!(SubBandId::DownlinkReserved.max_tx_power_dbm(), 27.0);
        assert!(SubBandId::DownlinkReserved.downlink_only());
        assert!(!SubBandId::SharedUplink.downlink_only());
    }

    #[test]
    fn one_second_on_one_percent_band_blocks_for_99_more() {
        let mut b = DutyCycleBudget::new(SubBandId::SharedUplink);
        b.consume(SimTime::from_secs(10), SimDuration::from_secs(1));
        assert_eq!(b.next_allowed(), SimTime::from_secs(110));
    }

    #[test]
    fn one_second_on_ten_percent_band_blocks_for_9_more() {
        let mut b = DutyCycleBudget::new(SubBandId::DownlinkReserved);
        b.consume(SimTime::from_secs(0), SimDuration::from_secs(1));
        assert_eq!(b.next_allowed(), SimTime::from_secs(10));
    }

    #[test]
    fn zero_airtime_leaves_budget_unchanged() {
        let mut b = DutyCycleBudget::new(SubBandId::SharedUplink);
        b.consume(SimTime::from_secs(5), SimDuration::from_secs(1));
        let before = b.next_allowed();
        b.consume(SimTime::from_secs(500), SimDuration::ZERO);
        assert_eq!(b.next_allowed(), before);
    }

    #[test]
    fn next_allowed_never_decreases() {
        let mut b = DutyCycleBudget::new(SubBandId::SharedUplink);
        let mut last = b.next_allowed();
        let mut t = SimTime::ZERO;
        for i in 1..50u64 {
            t = b.earliest_start(t);
            b.consume(t, SimDuration(i * 1_000_000));
            assert!(b.next_allowed() >= last);
            last = b.next_allowed();
        }
    }

    #[cfg(not(debug_assertions))]
    #[test]
    fn early_start_is_counted_and_blocked_in_release() {
        let mut b = DutyCycleBudget::new(SubBandId::SharedUplink);
        b.consume(SimTime::from_secs(0), SimDuration::from_secs(1));
        let before = b.next_allowed();
        b.consume(SimTime::from_secs(1), SimDuration::from_secs(1));
        assert_eq!(b.violations(), 1);
        assert_eq!(b.next_allowed(), before);
    }
}
