//! The simulation world: devices, gateway, medium, network-server policy,
//! and the event handlers that drive one run.
//!
//! Everything is single-threaded; handlers mutate the world directly and
//! schedule follow-up events on the queue. Replications parallelize at a
//! higher level as fully isolated worlds.

use crate::channel::PropagationConfig;
use crate::channel::{device_device_loss_db, Position};
use crate::device::{Device, Exchange, LockKind, MacState};
use crate::engine::{EventKind, EventQueue, RxWindow};
use crate::gateway::{ArrivalVerdict, Gateway, JobPriority, WindowPlan};
use crate::medium::{Direction, LinkOracle, Medium, PhyOutcome, Transmission};
use crate::metrics::{
    GatewayEvent, GatewayRecord, OutcomeLedger, PacketRecord, TxRecord, WindowRecord,
};
use crate::netserver::{mark_priority, window_plans, PolicyConfig};
use crate::phy::{airtime_ns, device_sensitivity_dbm, preamble_ns, TransmissionParams};
use crate::region::subband_of;
use crate::time::{SimDuration, SimTime};

/// Per-device link data needed for cross-link power queries.
pub struct LinkEntry {
    pub position: Position,
    pub shadow_db: f64,
    pub loss_to_gateway_db: f64,
}

/// Frozen propagation state of the run.
pub struct LinkTable {
    pub propagation: PropagationConfig,
    pub device_tx_power_dbm: f64,
    pub entries: Vec<LinkEntry>,
}

impl LinkTable {
    /// Received power at `device` of a gateway transmission at
    /// `tx_power_dbm`.
    pub fn downlink_power_at(&self, device: u32, tx_power_dbm: f64) -> f64 {
        tx_power_dbm - self.entries[device as usize].loss_to_gateway_db
    }
}

impl LinkOracle for LinkTable {
    fn uplink_power_at_device(&self, sender_device: u32, receiver_device: u32) -> f64 {
        let s = &self.entries[sender_device as usize];
        let r = &self.entries[receiver_device as usize];
        let loss = device_device_loss_db(
            &s.position,
            &r.position,
            s.shadow_db,
            r.shadow_db,
            &self.propagation,
        );
        self.device_tx_power_dbm - loss
    }
}

/// A device with an open receive window.
struct Listener {
    device: u32,
    frequency_hz: u32,
    sf: u8,
    window: RxWindow,
}

/// Acknowledgment job: one planned transmission opportunity per window.
struct DownlinkJob {
    device: u32,
    packet_idx: u32,
    packet_seq: u64,
    attempt: u8,
    priority: JobPriority,
    plans: [WindowPlan; 2],
    /// 0 = targeting RX1, 1 = targeting RX2, 2 = done or dropped.
    stage: u8,
    /// Guards stale dispatch events: only the latest scheduled evaluation
    /// for a job is live.
    epoch: u32,
    parked: bool,
    defer_logged: [bool; 2],
}

/// Runtime state of a transmission that is not part of its ledger record.
struct TxRuntime {
    locked_at_gateway: bool,
    killed: bool,
    dl_locked_by_target: bool,
    foreign_lockers: Vec<u32>,
}

pub struct World {
    pub queue: EventQueue,
    pub devices: Vec<Device>,
    pub gateway: Gateway,
    pub medium: Medium,
    pub links: LinkTable,
    pub policy: PolicyConfig,
    pub ul_params: TransmissionParams,
    pub ledger: OutcomeLedger,
    jobs: Vec<DownlinkJob>,
    parked_jobs: Vec<u32>,
    listeners: Vec<Listener>,
    tx_runtime: Vec<TxRuntime>,
}

impl World {
    pub fn new(
        devices: Vec<Device>,
        gateway: Gateway,
        medium: Medium,
        links: LinkTable,
        policy: PolicyConfig,
        ul_params: TransmissionParams,
    ) -> Self {
        let mut ledger = OutcomeLedger::default();
        ledger.devices_total = devices.len() as u32;
        ledger.devices_in_coverage = devices.iter().filter(|d| d.cfg.in_coverage).count() as u32;
        World {
            queue: EventQueue::new(),
            devices,
            gateway,
            medium,
            links,
            policy,
            ul_params,
            ledger,
            jobs: Vec::new(),
            parked_jobs: Vec::new(),
            listeners: Vec::new(),
            tx_runtime: Vec::new(),
        }
    }

    /// Schedule the first packet generation of every in-coverage device.
    pub fn start_traffic(&mut self) {
        for i in 0..self.devices.len() {
            if self.devices[i].cfg.in_coverage {
                let at = SimTime::ZERO + self.devices[i].cfg.phase;
                self.queue.schedule(at, EventKind::PacketGeneration { device: i as u32 });
            }
        }
    }

    /// Run until `end`, then fold closing counters into the ledger.
    pub fn run_until(mut self, end: SimTime) -> OutcomeLedger {
        while let Some((t, kind)) = self.queue.pop_until(end) {
            self.dispatch(t, kind);
        }
        let mut violations = 0;
        for d in &self.devices {
            violations += d.budget.violations();
        }
        self.ledger.duty_cycle_violations = violations;
        // Transmissions still on the air at the cutoff never completed in
        // the simulated horizon; they carry no outcome and are not part of
        // the record.
        self.ledger.transmissions.retain(|t| t.outcome.is_some());
        self.ledger
    }

    fn dispatch(&mut self, t: SimTime, kind: EventKind) {
        match kind {
            EventKind::PacketGeneration { device } => self.on_generation(t, device),
            EventKind::TxStart { device } => self.on_tx_start(t, device),
            EventKind::TxEnd { tx } => self.on_tx_end(t, tx),
            EventKind::WindowOpen { device, window, attempt } => {
                self.on_window_open(t, device, window, attempt)
            }
            EventKind::WindowClose { device, window, attempt } => {
                self.on_window_close(t, device, window, attempt)
            }
            EventKind::DcRelease { job, epoch } | EventKind::DlDispatch { job, epoch } => {
                self.on_job_event(t, job, epoch)
            }
        }
    }

    // ----- application traffic -----

    fn on_generation(&mut self, t: SimTime, d: u32) {
        let dev = &mut self.devices[d as usize];
        self.queue
            .schedule(t + dev.cfg.app_period, EventKind::PacketGeneration { device: d });

        let seq = dev.next_packet_seq;
        dev.next_packet_seq += 1;
        let busy = dev.exchange.is_some();
        let packet_idx = self.ledger.packets.len() as u32;
        self.ledger.packets.push(PacketRecord {
            device: d,
            packet_seq: seq,
            confirmed: dev.cfg.confirmed,
            generated_at: t,
            superseded: busy,
            attempts: 0,
            delivered: false,
            acked: false,
            acked_in: None,
            rx1_opened: 0,
            rx2_opened: 0,
        });
        if busy {
            // Mid-exchange: the new packet is dropped, keeping the in-flight
            // one. It still counts in every delivery-ratio denominator.
            return;
        }
        dev.exchange = Some(Exchange {
            packet_idx,
            packet_seq: seq,
            attempt: 0,
            channel_hz: 0,
            plans: None,
            rx2_open_handle: None,
            rx2_passed: false,
        });
        dev.state = MacState::WaitingTx;
        let start = dev.budget.earliest_start(t);
        self.queue.schedule(start, EventKind::TxStart { device: d });
    }

    // ----- uplink transmission -----

    fn on_tx_start(&mut self, t: SimTime, d: u32) {
        let tx_id = self.ledger.transmissions.len() as u64;
        let dev = &mut self.devices[d as usize];
        debug_assert_eq!(dev.state, MacState::WaitingTx);

        let channel = dev.draw_channel();
        let exchange = dev.exchange.as_mut().expect("tx start without exchange");
        exchange.attempt += 1;
        exchange.channel_hz = channel;
        exchange.plans = None;
        exchange.rx2_passed = false;
        let attempt = exchange.attempt;
        let packet_idx = exchange.packet_idx;
        debug_assert!(attempt <= dev.attempt_cap(), "attempt counter exceeded cap");

        let dr = dev.cfg.dr;
        let sf = dr.sf();
        let airtime = SimDuration(airtime_ns(sf, &self.ul_params));
        let rx_power = dev.rx_power_at_gateway();
        let tx_power = dev.cfg.tx_power_dbm;
        dev.budget.consume(t, airtime);
        dev.state = MacState::Transmitting;

        self.ledger.packets[packet_idx as usize].attempts = attempt;

        let verdict = self.gateway.on_uplink_arrival(tx_id, channel, sf, rx_power);
        let locked = verdict == ArrivalVerdict::Locked;
        let outcome = match verdict {
            ArrivalVerdict::UnderSensitivity => Some(PhyOutcome::UnderSensitivity),
            ArrivalVerdict::Saturated => Some(PhyOutcome::ReceiverSaturated),
            ArrivalVerdict::DisruptedByTx => Some(PhyOutcome::GatewayTx),
            ArrivalVerdict::Locked => None,
        };

        self.ledger.transmissions.push(TxRecord {
            tx_id,
            device: d,
            packet_idx,
            attempt,
            direction: Direction::Uplink,
            frequency_hz: channel,
            sf,
            start: t,
            airtime,
            rx_power_dbm: rx_power,
            outcome,
        });
        self.tx_runtime.push(TxRuntime {
            locked_at_gateway: locked,
            killed: false,
            dl_locked_by_target: false,
            foreign_lockers: Vec::new(),
        });

        let tx = Transmission {
            id: tx_id,
            sender_device: Some(d),
            direction: Direction::Uplink,
            frequency_hz: channel,
            dr,
            tx_power_dbm: tx_power,
            start: t,
            end: t + airtime,
            rx_power_dbm: rx_power,
            target_device: None,
            disrupts_reception: false,
        };
        self.medium.begin(tx, locked, &self.links);

        // With the shared UL/DL preamble, open windows can lock onto this
        // uplink and waste themselves on it.
        if self.policy.mislock_windows {
            self.lock_listeners_onto(t, tx_id);
        }

        self.queue.schedule(t + airtime, EventKind::TxEnd { tx: tx_id });
    }

    fn on_tx_end(&mut self, t: SimTime, tx_id: u64) {
        match self.ledger.transmissions[tx_id as usize].direction {
            Direction::Uplink => self.on_uplink_end(t, tx_id),
            Direction::Downlink => self.on_downlink_end(t, tx_id),
        }
    }

    fn on_uplink_end(&mut self, t: SimTime, tx_id: u64) {
        let survived = self.medium.end(tx_id);
        let locked = self.tx_runtime[tx_id as usize].locked_at_gateway;
        let killed = self.tx_runtime[tx_id as usize].killed;
        if locked {
            self.gateway.release_path(tx_id);
        }

        let record = &mut self.ledger.transmissions[tx_id as usize];
        let device = record.device;
        let outcome = match record.outcome {
            Some(o) => o, // decided at arrival (U/R/T) or by a kill (T)
            None => match survived {
                Some(true) => PhyOutcome::Delivered,
                Some(false) => PhyOutcome::Interfered,
                None => {
                    debug_assert!(killed, "missing capture verdict for unkilled uplink");
                    PhyOutcome::GatewayTx
                }
            },
        };
        record.outcome = Some(outcome);

        // Free any windows that mislocked onto this uplink.
        let foreign = std::mem::take(&mut self.tx_runtime[tx_id as usize].foreign_lockers);
        for fd in foreign {
            self.finish_wasted_reception(t, fd, tx_id);
        }

        // Class-A: both windows are scheduled off the uplink end, whatever
        // happened to the packet.
        self.schedule_windows(t, device);

        if outcome == PhyOutcome::Delivered {
            self.on_uplink_delivered(t, tx_id);
        }

        if locked {
            self.wake_parked_jobs(t);
        }
    }

    fn schedule_windows(&mut self, ul_end: SimTime, d: u32) {
        let policy = self.policy;
        let dev = &mut self.devices[d as usize];
        debug_assert_eq!(dev.state, MacState::Transmitting);
        dev.state = MacState::AwaitRx1;
        let dr = dev.cfg.dr;
        let exchange = dev.exchange.as_mut().expect("windows without exchange");
        let plans = window_plans(ul_end, exchange.channel_hz, dr, &policy);
        let attempt = exchange.attempt;
        exchange.plans = Some(plans);
        self.queue.schedule(
            plans[0].open,
            EventKind::WindowOpen { device: d, window: RxWindow::Rx1, attempt },
        );
        let rx2_open = self.queue.schedule(
            plans[1].open,
            EventKind::WindowOpen { device: d, window: RxWindow::Rx2, attempt },
        );
        self.queue.schedule(
            plans[0].close,
            EventKind::WindowClose { device: d, window: RxWindow::Rx1, attempt },
        );
        self.queue.schedule(
            plans[1].close,
            EventKind::WindowClose { device: d, window: RxWindow::Rx2, attempt },
        );
        self.devices[d as usize]
            .exchange
            .as_mut()
            .unwrap()
            .rx2_open_handle = Some(rx2_open);
    }

    /// Network-server reaction to a delivered uplink: deduplicate into the
    /// packet record and, for confirmed traffic, emit an acknowledgment job
    /// for this attempt's windows (a retrying device evidently missed the
    /// previous acknowledgment, so duplicates get fresh jobs too).
    fn on_uplink_delivered(&mut self, _t: SimTime, tx_id: u64) {
        let record = &self.ledger.transmissions[tx_id as usize];
        let d = record.device;
        let packet_idx = record.packet_idx;
        let attempt = record.attempt;
        self.ledger.packets[packet_idx as usize].delivered = true;

        let dev = &self.devices[d as usize];
        if !dev.cfg.confirmed {
            return;
        }
        let exchange = dev.exchange.as_ref().expect("delivered uplink without exchange");
        debug_assert_eq!(exchange.attempt, attempt);
        let plans = exchange.plans.expect("job creation before window planning");
        let job_id = self.jobs.len() as u32;
        self.jobs.push(DownlinkJob {
            device: d,
            packet_idx,
            packet_seq: exchange.packet_seq,
            attempt,
            priority: mark_priority(dev.cfg.data_reply),
            plans,
            stage: 0,
            epoch: 0,
            parked: false,
            defer_logged: [false; 2],
        });
        let open = plans[0].open;
        self.schedule_job_eval(open, job_id);
    }

    // ----- receive windows -----

    fn on_window_open(&mut self, t: SimTime, d: u32, window: RxWindow, attempt: u8) {
        let dev = &mut self.devices[d as usize];
        let Some(exchange) = dev.exchange.as_mut() else {
            debug_assert!(false, "window open without exchange");
            return;
        };
        if exchange.attempt != attempt {
            return; // stale event from a previous attempt
        }
        let packet_idx = exchange.packet_idx;
        let plan = exchange.plans.expect("window open before planning")[window_slot(window)];

        let listening = match (dev.state, window) {
            (MacState::AwaitRx1, RxWindow::Rx1) => {
                dev.state = MacState::Rx1Open;
                true
            }
            (MacState::AwaitRx2, RxWindow::Rx2) => {
                exchange.rx2_open_handle = None;
                dev.state = MacState::Rx2Open;
                true
            }
            (MacState::Receiving { .. }, RxWindow::Rx2) => {
                // Still locked onto the RX1 signal; the RX2 instant passes
                // with the radio busy.
                exchange.rx2_open_handle = None;
                exchange.rx2_passed = true;
                false
            }
            (state, w) => {
                debug_assert!(false, "window open {w:?} in state {state:?}");
                false
            }
        };

        match window {
            RxWindow::Rx1 => self.ledger.packets[packet_idx as usize].rx1_opened += 1,
            RxWindow::Rx2 => self.ledger.packets[packet_idx as usize].rx2_opened += 1,
        }
        self.ledger.windows.push(WindowRecord {
            device: d,
            packet_idx,
            attempt,
            window,
            open_at: t,
        });

        if listening {
            self.listeners.push(Listener {
                device: d,
                frequency_hz: plan.frequency_hz,
                sf: plan.dr.sf(),
                window,
            });
            self.scan_for_lock(t, d, window, plan);
        }
    }

    /// A freshly opened window can catch a signal whose preamble is still on
    /// the air. Candidates must match the window's carrier and spreading
    /// factor and clear the device sensitivity; the earliest-started wins.
    fn scan_for_lock(&mut self, t: SimTime, d: u32, window: RxWindow, plan: WindowPlan) {
        let mut best: Option<(SimTime, u64, LockKind)> = None;
        for tx in self.medium.active_on(plan.frequency_hz) {
            if tx.dr.sf() != plan.dr.sf() {
                continue;
            }
            let preamble_end = tx.start + SimDuration(preamble_ns(tx.dr.sf(), &self.ul_params));
            if preamble_end <= t {
                continue;
            }
            let (kind, rx_power) = match tx.direction {
                Direction::Uplink => {
                    if !self.policy.mislock_windows || tx.sender_device == Some(d) {
                        continue;
                    }
                    let sender = tx.sender_device.unwrap();
                    (LockKind::Foreign, self.links.uplink_power_at_device(sender, d))
                }
                Direction::Downlink => {
                    // A downlink addressed to this device never starts before
                    // the window opens, so anything caught here is foreign.
                    debug_assert_ne!(tx.target_device, Some(d));
                    (LockKind::Foreign, self.links.downlink_power_at(d, tx.tx_power_dbm))
                }
            };
            if rx_power < device_sensitivity_dbm(tx.dr.sf()) {
                continue;
            }
            let candidate = (tx.start, tx.id, kind);
            if best.map_or(true, |(bs, bid, _)| (tx.start, tx.id) < (bs, bid)) {
                best = Some(candidate);
            }
        }
        if let Some((_, tx_id, kind)) = best {
            self.lock_device(d, window, tx_id, kind);
        }
    }

    fn on_window_close(&mut self, t: SimTime, d: u32, window: RxWindow, attempt: u8) {
        let dev = &mut self.devices[d as usize];
        let Some(exchange) = dev.exchange.as_ref() else {
            return; // exchange finished earlier (acknowledged or abandoned)
        };
        if exchange.attempt != attempt {
            return;
        }
        match (dev.state, window) {
            (MacState::Rx1Open, RxWindow::Rx1) => {
                dev.state = MacState::AwaitRx2;
                self.unregister_listener(d);
            }
            (MacState::Rx2Open, RxWindow::Rx2) => {
                self.unregister_listener(d);
                self.attempt_concluded(t, d);
            }
            // A locked reception extends past the nominal close and is
            // resolved at its transmission end.
            (MacState::Receiving { .. }, _) => {}
            _ => {}
        }
    }

    fn unregister_listener(&mut self, d: u32) {
        self.listeners.retain(|l| l.device != d);
    }

    fn lock_device(&mut self, d: u32, window: RxWindow, tx_id: u64, kind: LockKind) {
        self.unregister_listener(d);
        self.devices[d as usize].state = MacState::Receiving { window, tx: tx_id, kind };
        match kind {
            LockKind::AckForMe => self.tx_runtime[tx_id as usize].dl_locked_by_target = true,
            LockKind::Foreign => self.tx_runtime[tx_id as usize].foreign_lockers.push(d),
        }
    }

    /// Attach open windows to a transmission that just started (the
    /// addressed device is handled separately at dispatch).
    fn lock_listeners_onto(&mut self, t: SimTime, tx_id: u64) {
        let (freq, sf, direction, sender, target, dl_power) = {
            let rec = &self.ledger.transmissions[tx_id as usize];
            (
                rec.frequency_hz,
                rec.sf,
                rec.direction,
                if rec.direction == Direction::Uplink { Some(rec.device) } else { None },
                if rec.direction == Direction::Downlink { Some(rec.device) } else { None },
                rec.rx_power_dbm,
            )
        };
        let _ = (t, dl_power);
        let candidates: Vec<(u32, RxWindow)> = self
            .listeners
            .iter()
            .filter(|l| l.frequency_hz == freq && l.sf == sf)
            .filter(|l| Some(l.device) != sender && Some(l.device) != target)
            .map(|l| (l.device, l.window))
            .collect();
        for (ld, window) in candidates {
            let rx_power = match direction {
                Direction::Uplink => {
                    if !self.policy.mislock_windows {
                        continue;
                    }
                    self.links.uplink_power_at_device(sender.unwrap(), ld)
                }
                Direction::Downlink => {
                    let tx_power = subband_of(freq).max_tx_power_dbm();
                    self.links.downlink_power_at(ld, tx_power)
                }
            };
            if rx_power < device_sensitivity_dbm(sf) {
                continue;
            }
            self.lock_device(ld, window, tx_id, LockKind::Foreign);
        }
    }

    /// A reception that cannot carry this device's acknowledgment has ended:
    /// resume the window sequence.
    fn finish_wasted_reception(&mut self, t: SimTime, d: u32, tx_id: u64) {
        let dev = &mut self.devices[d as usize];
        match dev.state {
            MacState::Receiving { window, tx, .. } if tx == tx_id => {
                let rx2_passed = dev.exchange.as_ref().map_or(false, |e| e.rx2_passed);
                match window {
                    RxWindow::Rx1 if !rx2_passed => dev.state = MacState::AwaitRx2,
                    _ => self.attempt_concluded(t, d),
                }
            }
            _ => debug_assert!(false, "wasted reception without matching lock"),
        }
    }

    /// Both windows of the attempt are spent without an acknowledgment.
    fn attempt_concluded(&mut self, t: SimTime, d: u32) {
        let dev = &mut self.devices[d as usize];
        let exchange = dev.exchange.as_ref().expect("concluding without exchange");
        if dev.cfg.confirmed && exchange.attempt < dev.attempt_cap() {
            let backoff = dev.draw_backoff();
            dev.state = MacState::WaitingTx;
            let start = dev.budget.earliest_start(t + backoff);
            self.queue.schedule(start, EventKind::TxStart { device: d });
        } else {
            // Out of attempts (or unconfirmed): the packet is finished.
            dev.state = MacState::Idle;
            dev.exchange = None;
        }
    }

    fn accept_ack(&mut self, _t: SimTime, d: u32, window: RxWindow) {
        let dev = &mut self.devices[d as usize];
        let exchange = dev.exchange.take().expect("ack without exchange");
        if let Some(handle) = exchange.rx2_open_handle {
            self.queue.cancel(handle);
        }
        let packet = &mut self.ledger.packets[exchange.packet_idx as usize];
        debug_assert!(packet.delivered, "acknowledged packet must be delivered");
        packet.acked = true;
        packet.acked_in = Some(window);
        dev.state = MacState::Idle;
    }

    // ----- downlink jobs -----

    fn schedule_job_eval(&mut self, at: SimTime, job_id: u32) {
        let job = &mut self.jobs[job_id as usize];
        job.epoch += 1;
        let epoch = job.epoch;
        self.queue
            .schedule(at.max(self.queue.now()), EventKind::DlDispatch { job: job_id, epoch });
    }

    fn wake_parked_jobs(&mut self, t: SimTime) {
        let woken = std::mem::take(&mut self.parked_jobs);
        for job_id in woken {
            self.jobs[job_id as usize].parked = false;
            self.schedule_job_eval(t, job_id);
        }
    }

    fn park_job(&mut self, t: SimTime, job_id: u32, reason: &str) {
        let job = &mut self.jobs[job_id as usize];
        if !job.parked {
            job.parked = true;
            self.parked_jobs.push(job_id);
        }
        let stage = job.stage as usize;
        if !job.defer_logged[stage] {
            self.jobs[job_id as usize].defer_logged[stage] = true;
            let job = &self.jobs[job_id as usize];
            let plan = job.plans[stage];
            self.ledger.gateway_log.push(GatewayRecord {
                time: t,
                event: GatewayEvent::Defer,
                device: job.device,
                packet_seq: job.packet_seq,
                window: plan.window,
                frequency_hz: plan.frequency_hz,
                sf: plan.dr.sf(),
                detail: reason.to_string(),
            });
        }
    }

    fn on_job_event(&mut self, t: SimTime, job_id: u32, epoch: u32) {
        {
            let job = &self.jobs[job_id as usize];
            if job.epoch != epoch || job.stage >= 2 {
                return;
            }
        }
        self.evaluate_job(t, job_id);
    }

    fn evaluate_job(&mut self, t: SimTime, job_id: u32) {
        let (stage, plan, priority) = {
            let job = &self.jobs[job_id as usize];
            (job.stage, job.plans[job.stage as usize], job.priority)
        };

        // A dispatch must start inside the window it serves.
        if t > plan.close {
            return self.advance_job(t, job_id);
        }
        if t < plan.open {
            return self.schedule_job_eval(plan.open, job_id);
        }
        if self.gateway.transmitter_busy() {
            return self.park_job(t, job_id, "transmitter_busy");
        }
        let band = subband_of(plan.frequency_hz);
        let earliest = self.gateway.earliest_tx_start(band, t);
        if earliest > t {
            if earliest <= plan.close {
                let job = &mut self.jobs[job_id as usize];
                job.epoch += 1;
                let epoch = job.epoch;
                self.queue.schedule(earliest, EventKind::DcRelease { job: job_id, epoch });
            } else {
                self.advance_job(t, job_id);
            }
            return;
        }
        let tx_style = self.gateway.cfg.conflict_policy.transmit_style(priority);
        if !tx_style && self.gateway.any_path_occupied() {
            return self.park_job(t, job_id, "paths_occupied");
        }
        self.dispatch_downlink(t, job_id, stage, plan, tx_style);
    }

    fn advance_job(&mut self, t: SimTime, job_id: u32) {
        let job = &mut self.jobs[job_id as usize];
        job.stage += 1;
        if job.stage == 1 {
            let open = job.plans[1].open;
            self.schedule_job_eval(open.max(t), job_id);
        } else {
            self.ledger.unserved_acks += 1;
            let job = &self.jobs[job_id as usize];
            let plan = job.plans[1];
            self.ledger.gateway_log.push(GatewayRecord {
                time: t,
                event: GatewayEvent::Drop,
                device: job.device,
                packet_seq: job.packet_seq,
                window: plan.window,
                frequency_hz: plan.frequency_hz,
                sf: plan.dr.sf(),
                detail: "windows_missed".to_string(),
            });
        }
    }

    fn dispatch_downlink(
        &mut self,
        t: SimTime,
        job_id: u32,
        stage: u8,
        plan: WindowPlan,
        tx_style: bool,
    ) {
        let tx_id = self.ledger.transmissions.len() as u64;
        let (device, packet_idx, packet_seq, attempt) = {
            let job = &mut self.jobs[job_id as usize];
            job.stage = 2;
            (job.device, job.packet_idx, job.packet_seq, job.attempt)
        };
        let band = subband_of(plan.frequency_hz);
        let tx_power = band.max_tx_power_dbm();
        let dl_params = TransmissionParams::downlink(self.policy.ack_payload_bytes);
        let airtime = SimDuration(airtime_ns(plan.dr.sf(), &dl_params));
        let rx_power = self.links.downlink_power_at(device, tx_power);

        // Transmit priority interrupts in-progress receptions in the duplex
        // scope; the victims are tagged as lost to the gateway transmission.
        if tx_style {
            let killed = self.gateway.kill_receptions_for_downlink(plan.frequency_hz);
            for victim in killed {
                self.medium.abort_reception(victim);
                self.tx_runtime[victim as usize].killed = true;
                self.ledger.transmissions[victim as usize].outcome = Some(PhyOutcome::GatewayTx);
                self.ledger.gateway_log.push(GatewayRecord {
                    time: t,
                    event: GatewayEvent::Kill,
                    device: self.ledger.transmissions[victim as usize].device,
                    packet_seq: 0,
                    window: plan.window,
                    frequency_hz: plan.frequency_hz,
                    sf: plan.dr.sf(),
                    detail: format!("tx:{victim}"),
                });
            }
        }

        // Does the addressee lock on? It must be listening on exactly this
        // window with a closing link budget.
        let target_locked = {
            let dev = &self.devices[device as usize];
            dev.is_listening(plan.window)
                && dev.exchange.as_ref().map_or(false, |e| e.attempt == attempt)
                && rx_power >= device_sensitivity_dbm(plan.dr.sf())
        };

        self.ledger.transmissions.push(TxRecord {
            tx_id,
            device,
            packet_idx,
            attempt,
            direction: Direction::Downlink,
            frequency_hz: plan.frequency_hz,
            sf: plan.dr.sf(),
            start: t,
            airtime,
            rx_power_dbm: rx_power,
            outcome: None,
        });
        self.tx_runtime.push(TxRuntime {
            locked_at_gateway: false,
            killed: false,
            dl_locked_by_target: false,
            foreign_lockers: Vec::new(),
        });

        self.gateway
            .begin_downlink(tx_id, plan.frequency_hz, band, t, t + airtime, tx_style);
        let tx = Transmission {
            id: tx_id,
            sender_device: None,
            direction: Direction::Downlink,
            frequency_hz: plan.frequency_hz,
            dr: plan.dr,
            tx_power_dbm: tx_power,
            start: t,
            end: t + airtime,
            rx_power_dbm: rx_power,
            target_device: Some(device),
            disrupts_reception: tx_style,
        };
        self.medium.begin(tx, target_locked, &self.links);
        if target_locked {
            self.lock_device(device, plan.window, tx_id, LockKind::AckForMe);
        }
        // Other devices with matching windows can waste themselves on this
        // downlink.
        self.lock_listeners_onto(t, tx_id);

        self.queue.schedule(t + airtime, EventKind::TxEnd { tx: tx_id });
        self.ledger.gateway_log.push(GatewayRecord {
            time: t,
            event: GatewayEvent::Dispatch,
            device,
            packet_seq,
            window: plan.window,
            frequency_hz: plan.frequency_hz,
            sf: plan.dr.sf(),
            detail: format!("stage:{stage}"),
        });
    }

    fn on_downlink_end(&mut self, t: SimTime, tx_id: u64) {
        self.gateway.end_downlink(tx_id);
        let survived = self.medium.end(tx_id);
        let locked_by_target = self.tx_runtime[tx_id as usize].dl_locked_by_target;
        let target = self.ledger.transmissions[tx_id as usize].device;

        let outcome = if locked_by_target {
            let window = match self.devices[target as usize].state {
                MacState::Receiving { window, .. } => window,
                ref s => unreachable!("target lock in state {s:?}"),
            };
            match survived.expect("locked downlink must have a capture verdict") {
                true => {
                    self.accept_ack(t, target, window);
                    PhyOutcome::Delivered
                }
                false => {
                    self.finish_wasted_reception(t, target, tx_id);
                    PhyOutcome::Interfered
                }
            }
        } else {
            let rec = &self.ledger.transmissions[tx_id as usize];
            if rec.rx_power_dbm < device_sensitivity_dbm(rec.sf) {
                PhyOutcome::UnderSensitivity
            } else {
                PhyOutcome::ReceiverSaturated // addressee was not listening
            }
        };
        self.ledger.transmissions[tx_id as usize].outcome = Some(outcome);

        let foreign = std::mem::take(&mut self.tx_runtime[tx_id as usize].foreign_lockers);
        for fd in foreign {
            self.finish_wasted_reception(t, fd, tx_id);
        }

        // Transmitter is free again.
        self.wake_parked_jobs(t);
    }
}

fn window_slot(w: RxWindow) -> usize {
    match w {
        RxWindow::Rx1 => 0,
        RxWindow::Rx2 => 1,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{default_config, SimConfig, TrafficModel};
    use crate::metrics::compute_metrics;
    use crate::scenario::build_world;
    use crate::time::SimDuration;

    fn tiny_config(n: u32, confirmed_fraction: f64, lambda: f64) -> SimConfig {
        let mut cfg = default_config();
        cfg.n_devices = n;
        cfg.cell_radius_m = Some(500.0);
        cfg.confirmed_fraction = confirmed_fraction;
        cfg.traffic = TrafficModel::AggregateLambda(lambda);
        cfg.sim_duration = SimDuration::from_secs(3_000);
        cfg.warmup = SimDuration::ZERO;
        cfg
    }

    fn run(cfg: &SimConfig, seed: u64) -> OutcomeLedger {
        let built = build_world(cfg, seed).unwrap();
        built.world.run_until(SimTime::ZERO + cfg.sim_duration)
    }

    #[test]
    fn lone_confirmed_device_gets_acked_in_rx1() {
        let cfg = tiny_config(1, 1.0, 0.001); // one packet per 1000 s
        let ledger = run(&cfg, 3);
        let finished: Vec<_> = ledger.packets.iter().filter(|p| p.attempts > 0).collect();
        assert!(!finished.is_empty());
        for p in finished {
            assert!(p.delivered, "quiet channel: every packet is delivered");
            assert!(p.acked, "quiet channel: every packet is acknowledged");
            assert_eq!(p.attempts, 1);
            assert_eq!(p.rx1_opened, 1);
            assert_eq!(p.rx2_opened, 0, "RX1 acknowledgment cancels RX2");
        }
        // One uplink and one downlink per packet.
        let ul = ledger.transmissions.iter().filter(|t| t.direction == Direction::Uplink).count();
        let dl = ledger.transmissions.iter().filter(|t| t.direction == Direction::Downlink).count();
        assert_eq!(ul, dl);
        for tx in &ledger.transmissions {
            assert_eq!(tx.outcome, Some(PhyOutcome::Delivered));
        }
    }

    #[test]
    fn lone_unconfirmed_device_opens_both_windows_and_sees_no_downlink() {
        let cfg = tiny_config(1, 0.0, 0.001);
        let ledger = run(&cfg, 5);
        assert!(ledger.transmissions.iter().all(|t| t.direction == Direction::Uplink));
        for p in ledger.packets.iter().filter(|p| p.attempts > 0) {
            assert!(p.delivered);
            assert!(!p.acked);
            assert_eq!(p.attempts, 1, "unconfirmed never retransmits");
            assert_eq!(p.rx1_opened, 1);
            assert_eq!(p.rx2_opened, 1, "no downlink: RX2 always opens");
        }
    }

    #[test]
    fn class_a_window_timing_is_exact() {
        let cfg = tiny_config(3, 0.5, 0.003);
        let ledger = run(&cfg, 11);
        assert!(!ledger.windows.is_empty());
        for tx in ledger.transmissions.iter().filter(|t| t.direction == Direction::Uplink) {
            let ul_end = tx.start + tx.airtime;
            let windows: Vec<_> = ledger
                .windows
                .iter()
                .filter(|w| w.device == tx.device && w.packet_idx == tx.packet_idx && w.attempt == tx.attempt)
                .collect();
            let rx1 = windows.iter().find(|w| w.window == RxWindow::Rx1).expect("RX1 opens");
            assert_eq!(rx1.open_at, ul_end + SimDuration::from_secs(1));
            if let Some(rx2) = windows.iter().find(|w| w.window == RxWindow::Rx2) {
                assert_eq!(rx2.open_at, ul_end + SimDuration::from_secs(2));
            }
        }
    }

    #[test]
    fn outcome_conservation_under_load() {
        let cfg = tiny_config(60, 0.5, 0.5);
        let ledger = run(&cfg, 13);
        let ul: Vec<_> = ledger
            .transmissions
            .iter()
            .filter(|t| t.direction == Direction::Uplink)
            .collect();
        assert!(ul.len() > 100, "expected a busy run, got {}", ul.len());
        assert!(ul.iter().all(|t| t.outcome.is_some()), "every uplink is tagged");
        let metrics = compute_metrics(&ledger, SimTime::ZERO, SimTime::ZERO + cfg.sim_duration);
        let total: u64 = metrics.outcome_counts.iter().sum();
        assert_eq!(total, metrics.ul_transmissions);
        assert_eq!(ledger.duty_cycle_violations, 0);
    }

    #[test]
    fn identical_seeds_reproduce_the_ledger() {
        let cfg = tiny_config(40, 0.5, 0.4);
        let a = run(&cfg, 21);
        let b = run(&cfg, 21);
        assert_eq!(a.transmissions.len(), b.transmissions.len());
        assert_eq!(a.packets.len(), b.packets.len());
        for (x, y) in a.transmissions.iter().zip(&b.transmissions) {
            assert_eq!(x.start, y.start);
            assert_eq!(x.frequency_hz, y.frequency_hz);
            assert_eq!(x.outcome, y.outcome);
        }
    }

    #[test]
    fn attempts_never_exceed_the_cap() {
        for m in [1u8, 2, 4, 8] {
            let mut cfg = tiny_config(50, 1.0, 0.8);
            cfg.policy.max_attempts = m;
            let ledger = run(&cfg, 17);
            assert!(ledger.packets.iter().all(|p| p.attempts <= m), "m={m}");
            if m > 1 {
                assert!(
                    ledger.packets.iter().any(|p| p.attempts > 1),
                    "loaded confirmed run should retransmit (m={m})"
                );
            }
        }
    }

    #[test]
    fn rx_priority_never_produces_gateway_tx_losses() {
        let mut cfg = tiny_config(60, 1.0, 0.6);
        cfg.gateway.conflict_policy = crate::gateway::ConflictPolicy::RxPriority;
        let ledger = run(&cfg, 23);
        let t_count = ledger
            .transmissions
            .iter()
            .filter(|t| t.outcome == Some(PhyOutcome::GatewayTx))
            .count();
        assert_eq!(t_count, 0);
        assert!(
            ledger.transmissions.iter().any(|t| t.direction == Direction::Downlink),
            "the gateway still acknowledges when idle"
        );
    }
}
