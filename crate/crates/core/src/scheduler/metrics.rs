//! Busy-time utilization derived from an event trace.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::time::Ticks;

use super::{EventKind, EventTrace, ScheduleError};

#[derive(Clone, Debug, PartialEq)]
pub struct InstrumentUse {
    pub instrument_id: String,
    pub busy: Ticks,
    pub utilization: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct UtilizationReport {
    pub makespan: Ticks,
    pub queue_wait: Ticks,
    /// Sorted by instrument id.
    pub instruments: Vec<InstrumentUse>,
}

/// Length of the union of half-open intervals.
pub fn union_length(mut spans: Vec<(Ticks, Ticks)>) -> Ticks {
    spans.sort();
    let mut total = 0u64;
    let mut cur: Option<(u64, u64)> = None;
    for (s, e) in spans {
        match cur {
            Some((cs, ce)) if s.0 <= ce => cur = Some((cs, ce.max(e.0))),
            Some((cs, ce)) => {
                total += ce - cs;
                cur = Some((s.0, e.0));
            }
            None => cur = Some((s.0, e.0)),
        }
    }
    if let Some((cs, ce)) = cur {
        total += ce - cs;
    }
    Ticks(total)
}

pub fn utilization(t: &EventTrace, makespan: Ticks) -> Result<UtilizationReport, ScheduleError> {
    if makespan == Ticks::ZERO {
        return Err(ScheduleError::ZeroMakespan);
    }
    let mut spans: BTreeMap<String, Vec<(Ticks, Ticks)>> = BTreeMap::new();
    for iv in t.intervals()? {
        spans.entry(iv.instrument_id).or_default().push((iv.start, iv.end));
    }
    let mut waits: BTreeMap<(&str, usize), Vec<Ticks>> = BTreeMap::new();
    let mut queue_wait = Ticks::ZERO;
    for e in &t.events {
        let key = (e.request_id.as_str(), e.invocation_id);
        match e.kind {
            EventKind::QueueWait => waits.entry(key).or_default().push(e.time),
            EventKind::Start => {
                if let Some(since) = waits.get_mut(&key).and_then(|v| (!v.is_empty()).then(|| v.remove(0))) {
                    queue_wait += e.time.saturating_sub(since);
                }
            }
            _ => {}
        }
    }
    let instruments = spans
        .into_iter()
        .map(|(instrument_id, s)| {
            let busy = union_length(s);
            InstrumentUse {
                instrument_id,
                busy,
                utilization: (busy.0 as f64 / makespan.0 as f64).min(1.0),
            }
        })
        .collect();
    Ok(UtilizationReport {
        makespan,
        queue_wait,
        instruments,
    })
}

impl UtilizationReport {
    /// Adds zero rows for instruments the trace never used.
    pub fn with_idle<'a>(mut self, ids: impl IntoIterator<Item = &'a str>) -> UtilizationReport {
        for id in ids {
            if self.get(id).is_none() {
                self.instruments.push(InstrumentUse {
                    instrument_id: id.to_string(),
                    busy: Ticks::ZERO,
                    utilization: 0.0,
                });
            }
        }
        self.instruments.sort_by(|a, b| a.instrument_id.cmp(&b.instrument_id));
        self
    }

    pub fn get(&self, instrument_id: &str) -> Option<&InstrumentUse> {
        self.instruments.iter().find(|u| u.instrument_id == instrument_id)
    }

    pub fn ratio(&self, instrument_id: &str) -> f64 {
        self.get(instrument_id).map_or(0.0, |u| u.utilization)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("instrument_id,busy_tick,makespan_tick,utilization\n");
        for u in &self.instruments {
            let _ = writeln!(
                out,
                "{},{},{},{:.6}",
                u.instrument_id, u.busy.0, self.makespan.0, u.utilization
            );
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "makespan_min   {}", self.makespan);
        let _ = writeln!(out, "queue_wait_min {}", self.queue_wait);
        let _ = writeln!(out, "{:<16} {:>10} {:>11}", "instrument", "busy_min", "utilization");
        for u in &self.instruments {
            let _ = writeln!(
                out,
                "{:<16} {:>10} {:>11.4}",
                u.instrument_id,
                u.busy.to_string(),
                u.utilization
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scheduler::Event;

    fn ev(time: u64, kind: EventKind, inst: &str, inv: usize) -> Event {
        Event {
            time: Ticks(time),
            kind,
            request_id: "r".into(),
            invocation_id: inv,
            instrument_id: inst.into(),
            service_id: format!("{inst}.x"),
        }
    }

    #[test]
    fn full_and_idle_instruments() {
        let t = EventTrace {
            events: vec![
                ev(0, EventKind::Start, "heater", 0),
                ev(100, EventKind::Finish, "heater", 0),
            ],
            step_count: 1,
        };
        let r = utilization(&t, Ticks(100))
            .unwrap()
            .with_idle(["heater", "thermocycler"]);
        assert_eq!(r.ratio("heater"), 1.0);
        assert_eq!(r.ratio("thermocycler"), 0.0);
        assert_eq!(utilization(&t, Ticks::ZERO), Err(ScheduleError::ZeroMakespan));
    }

    #[test]
    fn union_ignores_overlap() {
        let s = vec![(Ticks(0), Ticks(10)), (Ticks(5), Ticks(15)), (Ticks(20), Ticks(25))];
        assert_eq!(union_length(s), Ticks(20));
        assert_eq!(union_length(Vec::new()), Ticks::ZERO);
    }

    #[test]
    fn queue_wait_sums_gaps() {
        let t = EventTrace {
            events: vec![
                ev(0, EventKind::Start, "heater", 0),
                ev(0, EventKind::QueueWait, "heater", 1),
                ev(30, EventKind::Finish, "heater", 0),
                ev(30, EventKind::Start, "heater", 1),
                ev(40, EventKind::Finish, "heater", 1),
            ],
            step_count: 2,
        };
        let r = utilization(&t, Ticks(40)).unwrap();
        assert_eq!(r.queue_wait, Ticks(30));
        assert_eq!(r.ratio("heater"), 1.0);
    }
}
