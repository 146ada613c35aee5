//! CSV emission. All times are seconds with nine decimal places, rendered
//! from the integer-nanosecond clock so output is exact and bit-stable.
//!
//! Layout written by the runners:
//!
//! ```text
//! out/
//!   run_header.txt        resolved configuration (no wall-clock content)
//!   metrics.csv           one row per (point, replication)
//!   aggregate.csv         one row per point: means and 95% half-widths
//!   [point/]rep_NNN/
//!     transmissions.csv   per-PHY-transmission log
//!     devices.csv         per-device summary
//!     gateway.csv         downlink dispatches, deferrals, drops, kills
//! ```

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::campaign::{AggregateReport, RunResult};
use crate::config::SimConfig;
use crate::metrics::{MetricsReport, OutcomeLedger};
use crate::scenario::DeviceSummary;

pub const TRANSMISSIONS_HEADER: &str =
    "tx_id,device,packet_seq,attempt,direction,frequency_hz,sf,start_s,airtime_s,rx_power_dbm,outcome";

pub const DEVICES_HEADER: &str = "device,x_m,y_m,indoor,wall_loss_db,distance_m,link_loss_db,dr,sf,in_coverage,traffic,period_s,data_reply,generated,superseded,delivered,acked,rx1_opened,rx2_opened,attempts_1,attempts_2,attempts_3,attempts_4,attempts_5,attempts_6,attempts_7,attempts_8";

pub const GATEWAY_HEADER: &str = "time_s,event,device,packet_seq,window,frequency_hz,sf,detail";

pub const METRICS_HEADER: &str = "point,axis_value,replication,seed,devices_in_coverage,generated,generated_confirmed,generated_unconfirmed,superseded,delivered,ulpdr,ulpdr_confirmed,ulpdr_unconfirmed,cpsr,outcome_s,outcome_u,outcome_i,outcome_r,outcome_t,ul_transmissions,dl_transmissions,dl_unserved,avg_rx1_per_confirmed,avg_rx2_per_confirmed";

pub const AGGREGATE_HEADER: &str = "point,axis_value,replications,ulpdr_mean,ulpdr_hw,ulpdr_confirmed_mean,ulpdr_confirmed_hw,ulpdr_unconfirmed_mean,ulpdr_unconfirmed_hw,cpsr_mean,cpsr_hw,avg_rx1_mean,avg_rx1_hw,avg_rx2_mean,avg_rx2_hw";

fn fmt_f64(v: f64) -> String {
    format!("{v:.6}")
}

pub fn write_transmissions(path: &Path, ledger: &OutcomeLedger) -> std::io::Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "{TRANSMISSIONS_HEADER}")?;
    for tx in &ledger.transmissions {
        let packet_seq = ledger.packets[tx.packet_idx as usize].packet_seq;
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{}",
            tx.tx_id,
            tx.device,
            packet_seq,
            tx.attempt,
            tx.direction.label(),
            tx.frequency_hz,
            tx.sf,
            tx.start.format_secs(),
            tx.airtime.format_secs(),
            fmt_f64(tx.rx_power_dbm),
            tx.outcome.expect("finished transmission").letter(),
        )?;
    }
    w.flush()
}

pub fn write_devices(
    path: &Path,
    summaries: &[DeviceSummary],
    ledger: &OutcomeLedger,
) -> std::io::Result<()> {
    // Per-device tallies from the packet records.
    #[derive(Default, Clone)]
    struct Tally {
        generated: u64,
        superseded: u64,
        delivered: u64,
        acked: u64,
        rx1: u64,
        rx2: u64,
        attempts_hist: [u64; 8],
    }
    let mut tallies = vec![Tally::default(); summaries.len()];
    for p in &ledger.packets {
        let t = &mut tallies[p.device as usize];
        t.generated += 1;
        t.superseded += u64::from(p.superseded);
        t.delivered += u64::from(p.delivered);
        t.acked += u64::from(p.acked);
        t.rx1 += u64::from(p.rx1_opened);
        t.rx2 += u64::from(p.rx2_opened);
        if (1..=8).contains(&p.attempts) {
            t.attempts_hist[(p.attempts - 1) as usize] += 1;
        }
    }

    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "{DEVICES_HEADER}")?;
    for s in summaries {
        let t = &tallies[s.id as usize];
        let (dr, sf) = match s.dr {
            Some(dr) => (dr.index().to_string(), dr.sf().to_string()),
            None => (String::new(), String::new()),
        };
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            s.id,
            fmt_f64(s.x_m),
            fmt_f64(s.y_m),
            s.indoor,
            fmt_f64(s.wall_loss_db),
            fmt_f64(s.distance_m),
            fmt_f64(s.link_loss_db),
            dr,
            sf,
            s.dr.is_some(),
            if s.confirmed { "confirmed" } else { "unconfirmed" },
            s.period.format_secs(),
            s.data_reply,
            t.generated,
            t.superseded,
            t.delivered,
            t.acked,
            t.rx1,
            t.rx2,
            t.attempts_hist.map(|c| c.to_string()).join(","),
        )?;
    }
    w.flush()
}

pub fn write_gateway_log(path: &Path, ledger: &OutcomeLedger) -> std::io::Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "{GATEWAY_HEADER}")?;
    for r in &ledger.gateway_log {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            r.time.format_secs(),
            r.event.label(),
            r.device,
            r.packet_seq,
            r.window.label(),
            r.frequency_hz,
            r.sf,
            r.detail,
        )?;
    }
    w.flush()
}

pub fn metrics_row(
    point: &str,
    axis_value: &str,
    replication: u32,
    seed: u64,
    m: &MetricsReport,
) -> String {
    format!(
        "{point},{axis_value},{replication},{seed},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
        m.devices_in_coverage,
        m.generated(),
        m.confirmed.generated,
        m.unconfirmed.generated,
        m.confirmed.superseded + m.unconfirmed.superseded,
        m.delivered(),
        fmt_f64(m.ulpdr()),
        fmt_f64(m.ulpdr_confirmed()),
        fmt_f64(m.ulpdr_unconfirmed()),
        fmt_f64(m.cpsr()),
        m.outcome_counts[0],
        m.outcome_counts[1],
        m.outcome_counts[2],
        m.outcome_counts[3],
        m.outcome_counts[4],
        m.ul_transmissions,
        m.dl_transmissions,
        m.dl_unserved,
        fmt_f64(m.avg_rx1_per_confirmed),
        fmt_f64(m.avg_rx2_per_confirmed),
    )
}

pub fn aggregate_row(point: &str, axis_value: &str, a: &AggregateReport) -> String {
    format!(
        "{point},{axis_value},{},{},{},{},{},{},{},{},{},{},{},{},{}",
        a.replications,
        fmt_f64(a.ulpdr.mean),
        fmt_f64(a.ulpdr.half_width),
        fmt_f64(a.ulpdr_confirmed.mean),
        fmt_f64(a.ulpdr_confirmed.half_width),
        fmt_f64(a.ulpdr_unconfirmed.mean),
        fmt_f64(a.ulpdr_unconfirmed.half_width),
        fmt_f64(a.cpsr.mean),
        fmt_f64(a.cpsr.half_width),
        fmt_f64(a.avg_rx1.mean),
        fmt_f64(a.avg_rx1.half_width),
        fmt_f64(a.avg_rx2.mean),
        fmt_f64(a.avg_rx2.half_width),
    )
}

/// Write the per-replication log files under `dir/rep_NNN/`.
pub fn write_replication_logs(dir: &Path, results: &[RunResult]) -> std::io::Result<()> {
    for (rep, result) in results.iter().enumerate() {
        let ledger = result.ledger.as_ref().expect("logs requested");
        let summaries = result.device_summaries.as_ref().expect("logs requested");
        let rep_dir = dir.join(format!("rep_{rep:03}"));
        fs::create_dir_all(&rep_dir)?;
        write_transmissions(&rep_dir.join("transmissions.csv"), ledger)?;
        write_devices(&rep_dir.join("devices.csv"), summaries, ledger)?;
        write_gateway_log(&rep_dir.join("gateway.csv"), ledger)?;
    }
    Ok(())
}

/// Write the run header: the resolved configuration, nothing wall-clock.
pub fn write_run_header(dir: &Path, cfg: &SimConfig) -> std::io::Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("run_header.txt"), cfg.describe())
}
