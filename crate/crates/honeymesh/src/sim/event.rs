//! Deterministic discrete-event engine: clock, event queue, run loop.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use thiserror::Error;

use super::packet::{Address, Packet};
use super::topology::NodeId;

/// Simulated time in integer milliseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord)]
pub struct SimClock {
    pub now: u64,
}

/// Timer payloads owned by the various subsystems.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TimerTag {
    /// A challenge deadline at a detection instance.
    ChallengeDeadline { site: DetectorSite, source: Address, challenge_id: u64 },
    /// Periodic idle-eviction sweep for a detection instance.
    DetectorSweep { site: DetectorSite },
    /// Half-open connection entry expires.
    SynReclaim { server: NodeId, corr: u64 },
    /// Crashed server finishes rebooting.
    RebootDone { server: NodeId },
    /// Compromised honey VM finishes restoring.
    RestoreDue { vm: u32 },
    /// Firewall block scheduled after the engagement window.
    BlockDue { source: Address },
}

/// Where a detection instance lives: inside a production server (honey-d)
/// or at the farm, keyed by the production service address it watches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum DetectorSite {
    Server(NodeId),
    FarmService(Address),
}

#[derive(Debug, Clone, PartialEq)]
pub enum EventPayload {
    /// Packet shows up at a node. `via` is the previous hop (the ingress
    /// link), None for locally injected traffic.
    PacketArrival { node: NodeId, via: Option<NodeId>, pkt: Packet },
    TimerFire { owner: NodeId, tag: TimerTag },
    /// A server finishes servicing the request with this packet id.
    ServiceCompletion { node: NodeId, request_id: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub at: u64,
    pub seq: u64,
    pub payload: EventPayload,
}

impl Eq for Event {}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.at, self.seq).cmp(&(other.at, other.seq))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ScheduleError {
    #[error("event scheduled at t={at} but clock is already at t={now}")]
    SchedulingInPast { at: u64, now: u64 },
}

/// Clock plus pending-event queue. Events are processed in `(at, seq)` order
/// with `seq` assigned at scheduling time, so simultaneous events run in
/// insertion order.
#[derive(Debug, Default)]
pub struct Runtime {
    pub clock: SimClock,
    queue: BinaryHeap<Reverse<Event>>,
    next_seq: u64,
    processed: u64,
}

impl Runtime {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn now(&self) -> u64 {
        self.clock.now
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    pub fn processed(&self) -> u64 {
        self.processed
    }

    pub fn schedule(&mut self, at: u64, payload: EventPayload) -> Result<(), ScheduleError> {
        if at < self.clock.now {
            return Err(ScheduleError::SchedulingInPast { at, now: self.clock.now });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Reverse(Event { at, seq, payload }));
        Ok(())
    }

    /// Processes every event with `at <= t_end` through `handler`, advancing
    /// the clock to each event's timestamp and finally to `t_end`. Returns
    /// the number of events processed. The handler may schedule new events.
    pub fn run_until<F>(&mut self, t_end: u64, mut handler: F) -> u64
    where
        F: FnMut(&mut Runtime, Event),
    {
        assert!(t_end >= self.clock.now, "run_until into the past");
        let mut count = 0;
        while let Some(Reverse(ev)) = self.queue.peek() {
            if ev.at > t_end {
                break;
            }
            let Reverse(ev) = self.queue.pop().expect("peeked");
            debug_assert!(ev.at >= self.clock.now);
            self.clock.now = ev.at;
            count += 1;
            self.processed += 1;
            handler(self, ev);
        }
        if t_end > self.clock.now {
            self.clock.now = t_end;
        }
        count
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn timer(owner: u32) -> EventPayload {
        EventPayload::TimerFire { owner: NodeId(owner), tag: TimerTag::RebootDone { server: NodeId(owner) } }
    }

    #[test]
    fn schedule_keeps_clock_unchanged() {
        let mut rt = Runtime::new();
        rt.run_until(3, |_, _| {});
        assert!(rt.schedule(5, timer(0)).is_ok());
        assert_eq!(rt.now(), 3);
        assert_eq!(rt.pending(), 1);
    }

    #[test]
    fn same_time_events_run_in_insertion_order() {
        let mut rt = Runtime::new();
        rt.schedule(5, timer(1)).unwrap();
        rt.schedule(5, timer(2)).unwrap();
        let mut seen = Vec::new();
        rt.run_until(10, |_, ev| {
            if let EventPayload::TimerFire { owner, .. } = ev.payload {
                seen.push(owner.0);
            }
        });
        assert_eq!(seen, vec![1, 2]);
    }

    #[test]
    fn scheduling_in_past_is_rejected() {
        let mut rt = Runtime::new();
        rt.run_until(3, |_, _| {});
        assert_eq!(
            rt.schedule(2, timer(0)),
            Err(ScheduleError::SchedulingInPast { at: 2, now: 3 })
        );
    }

    #[test]
    fn run_until_on_empty_queue_advances_clock() {
        let mut rt = Runtime::new();
        let n = rt.run_until(100, |_, _| {});
        assert_eq!(n, 0);
        assert_eq!(rt.now(), 100);
    }

    #[test]
    fn run_until_stops_at_bound() {
        let mut rt = Runtime::new();
        for t in [1, 2, 3] {
            rt.schedule(t, timer(t as u32)).unwrap();
        }
        let n = rt.run_until(2, |_, _| {});
        assert_eq!(n, 2);
        assert_eq!(rt.now(), 2);
        assert_eq!(rt.pending(), 1);
    }

    // Hand trace: A at t=4 schedules B at t=6; run_until(10) must process
    // both, in order, with the clock following event times.
    #[test]
    fn events_scheduled_during_processing_are_processed() {
        let mut rt = Runtime::new();
        rt.schedule(4, timer(1)).unwrap();
        let mut seen = Vec::new();
        let n = rt.run_until(10, |rt, ev| {
            if let EventPayload::TimerFire { owner, .. } = ev.payload {
                seen.push((ev.at, owner.0));
                if owner.0 == 1 {
                    rt.schedule(6, timer(2)).unwrap();
                }
            }
        });
        assert_eq!(n, 2);
        assert_eq!(seen, vec![(4, 1), (6, 2)]);
        assert_eq!(rt.now(), 10);
    }

    #[test]
    fn processed_trace_is_sorted_by_time_then_seq() {
        let mut rt = Runtime::new();
        rt.schedule(7, timer(1)).unwrap();
        rt.schedule(3, timer(2)).unwrap();
        rt.schedule(7, timer(3)).unwrap();
        rt.schedule(0, timer(4)).unwrap();
        let mut order = Vec::new();
        rt.run_until(100, |_, ev| order.push((ev.at, ev.seq)));
        let mut sorted = order.clone();
        sorted.sort();
        assert_eq!(order, sorted);
    }
}
