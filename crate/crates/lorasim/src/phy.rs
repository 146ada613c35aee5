//! LoRa PHY arithmetic: data rates, sensitivity thresholds, and time on air.
//!
//! Only the EU868 125 kHz channels are modeled, so the data-rate index and
//! the spreading factor are in one-to-one correspondence (DR0 = SF12 up to
//! DR5 = SF7).

use serde::{Deserialize, Serialize};

pub const BANDWIDTH_HZ: u32 = 125_000;

/// Spreading factors supported on the 125 kHz channels.
pub const SF_MIN: u8 = 7;
pub const SF_MAX: u8 = 12;

/// A data rate index 0..=5, one-to-one with SF 12..=7.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DataRate(u8);

impl DataRate {
    pub fn new(index: u8) -> Option<DataRate> {
        (index <= 5).then_some(DataRate(index))
    }

    pub fn from_sf(sf: u8) -> Option<DataRate> {
        (SF_MIN..=SF_MAX).contains(&sf).then(|| DataRate(12 - sf))
    }

    pub fn index(self) -> u8 {
        self.0
    }

    pub fn sf(self) -> u8 {
        12 - self.0
    }

    /// Nominal bitrate in bit/s.
    pub fn nominal_bitrate(self) -> u32 {
        match self.0 {
            0 => 250,
            1 => 440,
            2 => 980,
            3 => 1_760,
            4 => 3_125,
            _ => 5_470,
        }
    }

    /// All data rates, slowest (DR0/SF12) first.
    pub fn all() -> impl DoubleEndedIterator<Item = DataRate> {
        (0..=5).map(DataRate)
    }
}

/// Gateway receiver sensitivity in dBm for a given SF.
pub fn gateway_sensitivity_dbm(sf: u8) -> f64 {
    match sf {
        7 => -130.0,
        8 => -132.5,
        9 => -135.0,
        10 => -137.5,
        11 => -140.0,
        12 => -142.5,
        _ => unreachable!("sf out of range: {sf}"),
    }
}

/// End-device receiver sensitivity in dBm for a given SF. End devices use
/// cheaper radios, so these thresholds are several dB above the gateway's.
pub fn device_sensitivity_dbm(sf: u8) -> f64 {
    match sf {
        7 => -124.0,
        8 => -127.0,
        9 => -130.0,
        10 => -133.0,
        11 => -135.0,
        12 => -137.0,
        _ => unreachable!("sf out of range: {sf}"),
    }
}

/// Frame parameters that determine time on air.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransmissionParams {
    pub payload_bytes: u32,
    /// Explicit (true) or implicit header mode.
    pub explicit_header: bool,
    /// Code rate CR in 1..=4, meaning 4/(4+CR).
    pub code_rate: u8,
    pub preamble_symbols: u32,
    pub crc_on: bool,
    /// Enable low-data-rate optimization for SF11/SF12.
    pub low_dr_optimize: bool,
}

impl TransmissionParams {
    /// Uplink defaults: 32-byte payload, explicit header, CR 2, 8 preamble
    /// symbols, CRC on.
    pub fn uplink_default() -> Self {
        TransmissionParams {
            payload_bytes: 32,
            explicit_header: true,
            code_rate: 2,
            preamble_symbols: 8,
            crc_on: true,
            low_dr_optimize: false,
        }
    }

    /// Downlink frames carry no PHY CRC.
    pub fn downlink(payload_bytes: u32) -> Self {
        TransmissionParams {
            payload_bytes,
            crc_on: false,
            ..TransmissionParams::uplink_default()
        }
    }
}

/// Symbol duration in nanoseconds: 2^SF / 125 kHz. Exact in integer
/// nanoseconds (1e9 / 125000 = 8000).
pub fn symbol_ns(sf: u8) -> u64 {
    (1u64 << sf) * 8_000
}

fn ceil_div(a: i64, b: i64) -> i64 {
    debug_assert!(b > 0);
    a.div_euclid(b) + if a.rem_euclid(b) != 0 { 1 } else { 0 }
}

/// Number of payload symbols for the standard LoRa packet structure.
pub fn payload_symbols(sf: u8, p: &TransmissionParams) -> u32 {
    let de = i64::from(p.low_dr_optimize && sf >= 11);
    let header = i64::from(!p.explicit_header);
    let crc = i64::from(p.crc_on);
    let numerator = 8 * i64::from(p.payload_bytes) - 4 * i64::from(sf) + 28 + 16 * crc - 20 * header;
    let denominator = 4 * (i64::from(sf) - 2 * de);
    let extra = (ceil_div(numerator, denominator) * i64::from(p.code_rate + 4)).max(0);
    8 + extra as u32
}

/// Time on air in nanoseconds: (preamble + 4.25 + payload symbols) symbol
/// durations. Exact: symbol_ns is a multiple of 4, so the 4.25-symbol
/// preamble tail stays integral.
pub fn airtime_ns(sf: u8, p: &TransmissionParams) -> u64 {
    let quarter_symbols = u64::from(4 * p.preamble_symbols + 17 + 4 * payload_symbols(sf, p));
    (symbol_ns(sf) / 4) * quarter_symbols
}

/// Duration of the preamble (including the 4.25-symbol sync tail), the part
/// of a packet a receiver can still lock onto.
pub fn preamble_ns(sf: u8, p: &TransmissionParams) -> u64 {
    (symbol_ns(sf) / 4) * u64::from(4 * p.preamble_symbols + 17)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dr_sf_mapping_matches_table() {
        let expect = [(0, 12), (1, 11), (2, 10), (3, 9), (4, 8), (5, 7)];
        for (index, sf) in expect {
            let dr = DataRate::new(index).unwrap();
            assert_eq!(dr.sf(), sf);
            assert_eq!(DataRate::from_sf(sf), Some(dr));
        }
        assert!(DataRate::new(6).is_none());
        assert!(DataRate::from_sf(6).is_none());
    }

    #[test]
    fn bitrate_increases_with_dr() {
        let rates: Vec<u32> = DataRate::all().map(|d| d.nominal_bitrate()).collect();
        assert!(rates.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn device_sensitivity_above_gateway_for_every_sf() {
        for sf in SF_MIN..=SF_MAX {
            assert!(device_sensitivity_dbm(sf) > gateway_sensitivity_dbm(sf));
        }
    }

    #[test]
    fn sf7_symbol_duration() {
        // 2^7 / 125000 s = 1.024 ms
        assert_eq!(symbol_ns(7), 1_024_000);
    }

    /// Independent route: the f64 datasheet formula, ceil and all, compared
    /// against the integer implementation.
    fn airtime_reference_secs(sf: u8, p: &TransmissionParams) -> f64 {
        let t_sym = 2f64.powi(sf as i32) / BANDWIDTH_HZ as f64;
        let de = if p.low_dr_optimize && sf >= 11 { 1.0 } else { 0.0 };
        let h = if p.explicit_header { 0.0 } else { 1.0 };
        let crc = if p.crc_on { 1.0 } else { 0.0 };
        let num = 8.0 * p.payload_bytes as f64 - 4.0 * sf as f64 + 28.0 + 16.0 * crc - 20.0 * h;
        let den = 4.0 * (sf as f64 - 2.0 * de);
        let n_payload = 8.0 + ((num / den).ceil() * (p.code_rate as f64 + 4.0)).max(0.0);
        (p.preamble_symbols as f64 + 4.25) * t_sym + n_payload * t_sym
    }

    #[test]
    fn airtime_matches_reference_formula() {
        let mut params = Vec::new();
        for payload in [0u32, 1, 13, 32, 51, 100, 222, 255] {
            for crc_on in [false, true] {
                for low_dr_optimize in [false, true] {
                    for code_rate in 1..=4u8 {
                        params.push(TransmissionParams {
                            payload_bytes: payload,
                            explicit_header: true,
                            code_rate,
                            preamble_symbols: 8,
                            crc_on,
                            low_dr_optimize,
                        });
                    }
                }
            }
        }
        for p in &params {
            for sf in SF_MIN..=SF_MAX {
                let got = airtime_ns(sf, p) as f64 / 1e9;
                let want = airtime_reference_secs(sf, p);
                assert!(
                    (got - want).abs() < 1e-12,
                    "sf {sf} {p:?}: {got} vs {want}"
                );
            }
        }
    }

    #[test]
    fn sf12_default_uplink_airtime_hand_computed() {
        // 32 B, explicit header, CR 2, CRC on, no low-DR optimization:
        // numerator = 256 - 48 + 28 + 16 = 252, denominator = 48,
        // ceil(252/48) = 6, payload symbols = 8 + 6*6 = 44.
        let p = TransmissionParams::uplink_default();
        assert_eq!(payload_symbols(12, &p), 44);
        // (12.25 + 44) * 32.768 ms = 1.8432 s
        assert_eq!(airtime_ns(12, &p), 1_843_200_000);
    }

    #[test]
    fn published_tx_times_reproduced_within_20_percent() {
        // Reference TX times (seconds) for a 32-byte payload at SF8..SF12.
        // The SF7 figure usually quoted alongside these breaks the ~2x
        // per-step progression and is not a target.
        let reference = [(8, 0.136), (9, 0.247), (10, 0.493), (11, 0.888), (12, 1.777)];
        let p = TransmissionParams::uplink_default();
        for (sf, want) in reference {
            let got = airtime_ns(sf, &p) as f64 / 1e9;
            let rel = (got - want).abs() / want;
            assert!(rel < 0.20, "SF{sf}: {got:.3}s vs {want:.3}s ({:.1}%)", rel * 100.0);
        }
    }

    #[test]
    fn airtime_monotone_in_sf_and_payload() {
        let p = TransmissionParams::uplink_default();
        for sf in SF_MIN..SF_MAX {
            assert!(airtime_ns(sf + 1, &p) > airtime_ns(sf, &p));
        }
        for payload in 1..=254u32 {
            let a = TransmissionParams { payload_bytes: payload, ..p };
            let b = TransmissionParams { payload_bytes: payload + 1, ..p };
            for sf in SF_MIN..=SF_MAX {
                assert!(airtime_ns(sf, &b) >= airtime_ns(sf, &a));
            }
        }
    }

    #[test]
    fn empty_downlink_is_preamble_plus_eight_symbols() {
        let p = TransmissionParams::downlink(0);
        for sf in SF_MIN..=SF_MAX {
            assert_eq!(payload_symbols(sf, &p), 8);
        }
        // SF12: 20.25 symbols of 32.768 ms
        assert_eq!(airtime_ns(12, &p), 663_552_000);
    }
}
