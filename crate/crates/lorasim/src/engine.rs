//! Deterministic discrete-event core: virtual clock plus ordered event queue.
//!
//! Events are dispatched in (fire time, insertion sequence) order, so two
//! events scheduled for the same instant run in the order they were
//! scheduled. The clock never moves backwards and scheduling into the past
//! aborts the run: both would silently corrupt duty-cycle bookkeeping.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashSet};

use crate::time::SimTime;

/// Which Class-A receive window an event refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RxWindow {
    Rx1,
    Rx2,
}

impl RxWindow {
    pub fn label(self) -> &'static str {
        match self {
            RxWindow::Rx1 => "rx1",
            RxWindow::Rx2 => "rx2",
        }
    }
}

/// The closed set of things that can happen in a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    /// Application layer of `device` produces a packet.
    PacketGeneration { device: u32 },
    /// `device` starts an uplink attempt (channel drawn now).
    TxStart { device: u32 },
    /// Transmission `tx` leaves the air.
    TxEnd { tx: u64 },
    /// `device` opens a receive window (`attempt` guards stale events).
    WindowOpen { device: u32, window: RxWindow, attempt: u8 },
    /// `device`'s receive window reaches its nominal end.
    WindowClose { device: u32, window: RxWindow, attempt: u8 },
    /// A duty-cycle budget becomes available for downlink job `job`, which
    /// re-evaluates.
    DcRelease { job: u32, epoch: u32 },
    /// Evaluate downlink job `job` for dispatch.
    DlDispatch { job: u32, epoch: u32 },
}

/// Handle returned by [`EventQueue::schedule`], usable for cancellation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EventHandle(u64);

#[derive(Debug, Clone, Copy)]
struct Entry {
    at: SimTime,
    seq: u64,
    kind: EventKind,
}

// Ordering looks only at (time, seq); seq is unique, so this is a total
// order. BinaryHeap is a max-heap; Reverse turns it into the min-heap we
// want.
impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        self.seq == other.seq
    }
}

impl Eq for Entry {}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.at, self.seq).cmp(&(other.at, other.seq))
    }
}

pub struct EventQueue {
    heap: BinaryHeap<Reverse<Entry>>,
    next_seq: u64,
    cancelled: HashSet<u64>,
    now: SimTime,
    dispatched: u64,
}

impl EventQueue {
    pub fn new() -> Self {
        EventQueue {
            heap: BinaryHeap::new(),
            next_seq: 0,
            cancelled: HashSet::new(),
            now: SimTime::ZERO,
            dispatched: 0,
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn dispatched(&self) -> u64 {
        self.dispatched
    }

    pub fn schedule(&mut self, at: SimTime, kind: EventKind) -> EventHandle {
        assert!(
            at >= self.now,
            "scheduled event in the past: {} < {} ({kind:?})",
            at.format_secs(),
            self.now.format_secs()
        );
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Reverse(Entry { at, seq, kind }));
        EventHandle(seq)
    }

    /// Mark an event so it never fires. Cancelling an already-fired handle is
    /// a no-op.
    pub fn cancel(&mut self, handle: EventHandle) {
        self.cancelled.insert(handle.0);
    }

    /// Pop the next live event with fire time <= `end`, advancing the clock.
    pub fn pop_until(&mut self, end: SimTime) -> Option<(SimTime, EventKind)> {
        while let Some(Reverse(entry)) = self.heap.pop() {
            if self.cancelled.remove(&entry.seq) {
                continue;
            }
            if entry.at > end {
                // Put it back; the run is over.
                self.heap.push(Reverse(entry));
                return None;
            }
            debug_assert!(entry.at >= self.now, "clock moved backwards");
            self.now = entry.at;
            self.dispatched += 1;
            return Some((entry.at, entry.kind));
        }
        None
    }
}

impl Default for EventQueue {
    fn default() -> Self {
        Self::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn drain(q: &mut EventQueue, end: SimTime) -> Vec<(SimTime, EventKind)> {
        let mut out = Vec::new();
        while let Some(ev) = q.pop_until(end) {
            out.push(ev);
        }
        out
    }

    #[test]
    fn same_instant_dispatches_in_insertion_order() {
        let mut q = EventQueue::new();
        let t = SimTime::from_secs(5);
        q.schedule(t, EventKind::TxStart { device: 1 });
        q.schedule(t, EventKind::TxStart { device: 2 });
        let got = drain(&mut q, SimTime::from_secs(10));
        assert_eq!(
            got.iter().map(|(_, k)| *k).collect::<Vec<_>>(),
            vec![
                EventKind::TxStart { device: 1 },
                EventKind::TxStart { device: 2 }
            ]
        );
    }

    #[test]
    fn schedule_at_now_runs_before_later_events() {
        let mut q = EventQueue::new();
        q.schedule(SimTime::from_secs(1), EventKind::DcRelease { job: 0, epoch: 0 });
        q.pop_until(SimTime::from_secs(10));
        q.schedule(SimTime::from_secs(3), EventKind::TxStart { device: 9 });
        q.schedule(q.now(), EventKind::TxStart { device: 5 });
        let got = drain(&mut q, SimTime::from_secs(10));
        assert_eq!(got[0].1, EventKind::TxStart { device: 5 });
        assert_eq!(got[1].1, EventKind::TxStart { device: 9 });
    }

    #[test]
    fn cancelled_event_never_fires() {
        let mut q = EventQueue::new();
        let h = q.schedule(SimTime::from_secs(2), EventKind::DcRelease { job: 0, epoch: 0 });
        q.schedule(SimTime::from_secs(3), EventKind::TxStart { device: 1 });
        q.cancel(h);
        let got = drain(&mut q, SimTime::from_secs(10));
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].1, EventKind::TxStart { device: 1 });
    }

    #[test]
    fn events_after_end_stay_queued() {
        let mut q = EventQueue::new();
        q.schedule(SimTime::from_secs(100), EventKind::DcRelease { job: 0, epoch: 0 });
        assert!(q.pop_until(SimTime::from_secs(10)).is_none());
        assert!(q.pop_until(SimTime::from_secs(100)).is_some());
    }

    #[test]
    fn clock_is_monotone() {
        let mut q = EventQueue::new();
        q.schedule(SimTime::from_secs(4), EventKind::DcRelease { job: 0, epoch: 0 });
        q.schedule(SimTime::from_secs(2), EventKind::DcRelease { job: 0, epoch: 0 });
        q.schedule(SimTime::from_secs(2), EventKind::DcRelease { job: 0, epoch: 0 });
        let mut last = SimTime::ZERO;
        while let Some((t, _)) = q.pop_until(SimTime::from_secs(10)) {
            assert!(t >= last);
            last = t;
        }
        assert_eq!(last, SimTime::from_secs(4));
    }

    #[test]
    #[should_panic(expected = "scheduled event in the past")]
    fn scheduling_in_the_past_aborts() {
        let mut q = EventQueue::new();
        q.schedule(SimTime::from_secs(5), EventKind::DcRelease { job: 0, epoch: 0 });
        q.pop_until(SimTime::from_secs(10));
        q.schedule(SimTime::from_secs(1), EventKind::DcRelease { job: 0, epoch: 0 });
    }
}
