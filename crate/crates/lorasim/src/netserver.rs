//! Network-server policy: which carrier and data rate serve each receive
//! window under the acknowledgment variants, and how downlink jobs are
//! priority-marked for the dynamic gateway policy.
//!
//! Retransmission deduplication lives in the per-packet ledger records: a
//! packet counts as delivered at most once no matter how many attempts get
//! through, while every delivered confirmed attempt still produces a fresh
//! acknowledgment job (if the device is retrying, it evidently missed the
//! previous one).

use serde::{Deserialize, Serialize};

use crate::engine::RxWindow;
use crate::gateway::{JobPriority, WindowPlan};
use crate::phy::{symbol_ns, DataRate};
use crate::region::DOWNLINK_CARRIER;
use crate::time::{SimDuration, SimTime};

pub const RX1_DELAY: SimDuration = SimDuration(1_000_000_000);
pub const RX2_DELAY: SimDuration = SimDuration(2_000_000_000);

/// Symbols a receiver waits for a preamble before closing an idle window.
pub const WINDOW_SYMBOLS: u64 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DlSemantics {
    /// Downlinks only stop retransmissions.
    AckOnly,
    /// Downlinks carry application replies.
    DataReply,
    /// Half the devices each, interleaved.
    Mixed,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyConfig {
    /// Open RX1 on the downlink-reserved sub-band and RX2 on the shared
    /// uplink sub-band, instead of the standard arrangement.
    pub subband_swap: bool,
    /// Send every downlink at the uplink's data rate instead of SF12 in RX2.
    pub ack_data_rate: bool,
    pub dl_payload_semantics: DlSemantics,
    /// Maximum transmission attempts m for confirmed traffic.
    pub max_attempts: u8,
    /// Model the receivers locking onto uplink signals during their windows
    /// (shared UL/DL preamble). Off means distinct preambles.
    pub mislock_windows: bool,
    /// Application payload of acknowledgment frames, for airtime purposes.
    pub ack_payload_bytes: u32,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            subband_swap: false,
            ack_data_rate: false,
            dl_payload_semantics: DlSemantics::AckOnly,
            max_attempts: 8,
            mislock_windows: false,
            ack_payload_bytes: 0,
        }
    }
}

/// Duration a window stays open waiting for a preamble, at the window's DR.
pub fn window_duration(dr: DataRate) -> SimDuration {
    SimDuration(WINDOW_SYMBOLS * symbol_ns(dr.sf()))
}

/// Carrier and data rate of both receive windows for an uplink that ended at
/// `ul_end` on `ul_channel` at `ul_dr`, under the active policy. Devices and
/// the network server derive their schedules from this one function, so they
/// always agree.
pub fn window_plans(
    ul_end: SimTime,
    ul_channel: u32,
    ul_dr: DataRate,
    policy: &PolicyConfig,
) -> [WindowPlan; 2] {
    let sf12 = DataRate::new(0).unwrap();
    let (rx1_freq, rx2_freq) = if policy.subband_swap {
        (DOWNLINK_CARRIER, ul_channel)
    } else {
        (ul_channel, DOWNLINK_CARRIER)
    };
    // RX1 always follows the uplink DR; RX2 uses SF12 unless the ACK data
    // rate variant pins it to the uplink DR as well.
    let rx1_dr = ul_dr;
    let rx2_dr = if policy.ack_data_rate { ul_dr } else { sf12 };

    let rx1_open = ul_end + RX1_DELAY;
    let rx2_open = ul_end + RX2_DELAY;
    [
        WindowPlan {
            window: RxWindow::Rx1,
            open: rx1_open,
            close: rx1_open + window_duration(rx1_dr),
            frequency_hz: rx1_freq,
            dr: rx1_dr,
        },
        WindowPlan {
            window: RxWindow::Rx2,
            open: rx2_open,
            close: rx2_open + window_duration(rx2_dr),
            frequency_hz: rx2_freq,
            dr: rx2_dr,
        },
    ]
}

/// Downlinks carrying data replies preempt reception under the dynamic
/// policy; pure acknowledgments yield to it.
pub fn mark_priority(data_reply: bool) -> JobPriority {
    if data_reply {
        JobPriority::High
    } else {
        JobPriority::Low
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::region::UPLINK_CARRIERS;

    fn dr(sf: u8) -> DataRate {
        DataRate::from_sf(sf).unwrap()
    }

    #[test]
    fn default_windows_follow_the_standard() {
        let plans = window_plans(SimTime::from_secs(100), UPLINK_CARRIERS[1], dr(9), &PolicyConfig::default());
        assert_eq!(plans[0].open, SimTime::from_secs(101));
        assert_eq!(plans[0].frequency_hz, UPLINK_CARRIERS[1]);
        assert_eq!(plans[0].dr, dr(9));
        assert_eq!(plans[1].open, SimTime::from_secs(102));
        assert_eq!(plans[1].frequency_hz, DOWNLINK_CARRIER);
        assert_eq!(plans[1].dr, dr(12));
    }

    #[test]
    fn swap_moves_rx1_to_the_downlink_band() {
        let policy = PolicyConfig { subband_swap: true, ..Default::default() };
        let plans = window_plans(SimTime::ZERO, UPLINK_CARRIERS[0], dr(7), &policy);
        assert_eq!(plans[0].frequency_hz, DOWNLINK_CARRIER);
        assert_eq!(plans[1].frequency_hz, UPLINK_CARRIERS[0]);
        assert_eq!(plans[0].dr, dr(7));
        assert_eq!(plans[1].dr, dr(12), "swap alone keeps SF12 in RX2");
    }

    #[test]
    fn ack_data_rate_pins_both_windows_to_the_uplink_dr() {
        let policy = PolicyConfig { ack_data_rate: true, ..Default::default() };
        let plans = window_plans(SimTime::ZERO, UPLINK_CARRIERS[2], dr(10), &policy);
        assert_eq!(plans[0].dr, dr(10));
        assert_eq!(plans[1].dr, dr(10));
        assert_eq!(plans[1].frequency_hz, DOWNLINK_CARRIER);
    }

    #[test]
    fn window_durations_scale_with_sf() {
        assert_eq!(window_duration(dr(7)).0, 5_120_000);
        assert_eq!(window_duration(dr(12)).0, 163_840_000);
    }

    #[test]
    fn priority_marking() {
        assert_eq!(mark_priority(true), JobPriority::High);
        assert_eq!(mark_priority(false), JobPriority::Low);
    }
}
