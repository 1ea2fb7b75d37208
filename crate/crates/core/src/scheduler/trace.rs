//! Discrete-event replay of a schedule and the trace CSV format.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, VecDeque};
use std::fmt::{self, Write as _};
use std::str::FromStr;

use crate::time::Ticks;

use super::{Schedule, ScheduleError};

/// Ordered so that, at equal times, instruments are released before new
/// work starts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EventKind {
    Finish,
    QueueWait,
    Merge,
    Reroute,
    Start,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Finish => "finish",
            EventKind::QueueWait => "queue_wait",
            EventKind::Merge => "merge",
            EventKind::Reroute => "reroute",
            EventKind::Start => "start",
        }
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EventKind {
    type Err = ScheduleError;

    fn from_str(s: &str) -> Result<EventKind, ScheduleError> {
        Ok(match s {
            "finish" => EventKind::Finish,
            "queue_wait" => EventKind::QueueWait,
            "merge" => EventKind::Merge,
            "reroute" => EventKind::Reroute,
            "start" => EventKind::Start,
            _ => return Err(ScheduleError::Trace(format!("unknown event kind `{s}`"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Event {
    pub time: Ticks,
    pub kind: EventKind,
    pub request_id: String,
    pub invocation_id: usize,
    pub instrument_id: String,
    pub service_id: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EventTrace {
    pub events: Vec<Event>,
    pub step_count: usize,
}

pub const TRACE_HEADER: &str = "time_tick,event_kind,request_id,invocation_id,instrument_id,service_id";

/// One executed invocation recovered from a trace.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Interval {
    pub request_id: String,
    pub invocation_id: usize,
    pub instrument_id: String,
    pub service_id: String,
    pub start: Ticks,
    pub end: Ticks,
}

impl EventTrace {
    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn count(&self, kind: EventKind) -> usize {
        self.events.iter().filter(|e| e.kind == kind).count()
    }

    /// Appends a later trace.
    pub fn extend(&mut self, later: EventTrace) {
        self.step_count += later.step_count;
        self.events.extend(later.events);
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(64 * (self.events.len() + 1));
        out.push_str(TRACE_HEADER);
        out.push('\n');
        for e in &self.events {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                e.time.0, e.kind, e.request_id, e.invocation_id, e.instrument_id, e.service_id
            );
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<EventTrace, ScheduleError> {
        let mut lines = text.lines();
        if lines.next() != Some(TRACE_HEADER) {
            return Err(ScheduleError::Trace("missing header".into()));
        }
        let mut events = Vec::new();
        for line in lines.filter(|l| !l.is_empty()) {
            let bad = || ScheduleError::Trace(format!("bad row `{line}`"));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 {
                return Err(bad());
            }
            events.push(Event {
                time: Ticks(f[0].parse().map_err(|_| bad())?),
                kind: f[1].parse()?,
                request_id: f[2].to_string(),
                invocation_id: f[3].parse().map_err(|_| bad())?,
                instrument_id: f[4].to_string(),
                service_id: f[5].to_string(),
            });
        }
        let step_count = events.iter().filter(|e| e.kind == EventKind::Finish).count();
        Ok(EventTrace { events, step_count })
    }

    /// Pairs start and finish events back into execution windows.
    pub fn intervals(&self) -> Result<Vec<Interval>, ScheduleError> {
        type Key<'a> = (&'a str, usize, &'a str, &'a str);
        let mut open: BTreeMap<Key<'_>, VecDeque<Ticks>> = BTreeMap::new();
        let mut out = Vec::new();
        for e in &self.events {
            let key = (
                e.request_id.as_str(),
                e.invocation_id,
                e.instrument_id.as_str(),
                e.service_id.as_str(),
            );
            match e.kind {
                EventKind::Start => open.entry(key).or_default().push_back(e.time),
                EventKind::Finish => {
                    let start = open
                        .get_mut(&key)
                        .and_then(VecDeque::pop_front)
                        .ok_or_else(|| ScheduleError::Trace(format!("finish without start at {}", e.time.0)))?;
                    out.push(Interval {
                        request_id: e.request_id.clone(),
                        invocation_id: e.invocation_id,
                        instrument_id: e.instrument_id.clone(),
                        service_id: e.service_id.clone(),
                        start,
                        end: e.time,
                    });
                }
                _ => {}
            }
        }
        if open.values().any(|q| !q.is_empty()) {
            return Err(ScheduleError::Trace("start without finish".into()));
        }
        Ok(out)
    }
}

/// Replays a schedule through an event queue. Finishes are scheduled when
/// their start is processed, so the trace is produced in simulated time.
pub fn simulate(s: &Schedule) -> EventTrace {
    let mut heap: BinaryHeap<Reverse<(Ticks, EventKind, usize)>> = BinaryHeap::new();
    for (idx, a) in s.allocations.iter().enumerate() {
        if a.start > a.ready {
            heap.push(Reverse((a.ready, EventKind::QueueWait, idx)));
        }
        if a.width > 1 {
            heap.push(Reverse((a.start, EventKind::Merge, idx)));
        }
        if a.rerouted_from.is_some() {
            heap.push(Reverse((a.start, EventKind::Reroute, idx)));
        }
        heap.push(Reverse((a.start, EventKind::Start, idx)));
    }
    let mut trace = EventTrace::default();
    while let Some(Reverse((time, kind, idx))) = heap.pop() {
        let a = &s.allocations[idx];
        match kind {
            EventKind::Start => heap.push(Reverse((a.end, EventKind::Finish, idx))),
            EventKind::Finish => trace.step_count += 1,
            _ => {}
        }
        trace.events.push(Event {
            time,
            kind,
            request_id: a.request_id.clone(),
            invocation_id: a.invocation_id,
            instrument_id: a.instrument_id.clone(),
            service_id: a.service_id.clone(),
        });
    }
    trace
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scheduler::{schedule, Policy};
    use crate::testkit;

    #[test]
    fn empty_schedule_gives_empty_trace() {
        let t = simulate(&Schedule::empty(Policy::Dynamic));
        assert!(t.is_empty());
        assert_eq!(t.step_count, 0);
        assert_eq!(t.to_csv(), format!("{TRACE_HEADER}\n"));
    }

    #[test]
    fn trace_replays_into_the_schedule() {
        let reg = testkit::bench_registry();
        let progs: Vec<_> = ["a", "b", "c"]
            .iter()
            .map(|r| {
                let p = testkit::rpa_procedure().relocated(r);
                crate::compiler::compile(&p, &reg, r).unwrap()
            })
            .collect();
        let s = schedule(&progs, &reg, Policy::Dynamic).unwrap();
        let t = simulate(&s);
        assert_eq!(t.step_count, s.allocations.len());
        let parsed = EventTrace::from_csv(&t.to_csv()).unwrap();
        assert_eq!(parsed, t);
        let mut got = parsed.intervals().unwrap();
        let mut want: Vec<Interval> = s
            .allocations
            .iter()
            .map(|a| Interval {
                request_id: a.request_id.clone(),
                invocation_id: a.invocation_id,
                instrument_id: a.instrument_id.clone(),
                service_id: a.service_id.clone(),
                start: a.start,
                end: a.end,
            })
            .collect();
        got.sort();
        want.sort();
        assert_eq!(got, want);
        assert!(t.events.windows(2).all(|w| w[0].time <= w[1].time));
    }
}
