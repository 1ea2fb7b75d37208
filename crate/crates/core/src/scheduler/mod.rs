//! Consolidation, instrument binding and list scheduling.
//!
//! Two policies are offered. `serial_queue` gives each program exclusive use
//! of the lab in submission order. `dynamic` consolidates compatible
//! programs and dispatches ready invocations earliest-start-first, rerouting
//! to equivalent instruments when the preferred one is busy.

mod consolidate;
mod dispatch;
pub mod intake;
pub mod metrics;
pub mod trace;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::compiler::Program;
use crate::registry::Registry;
use crate::time::Ticks;

pub use consolidate::{consolidate, ARRAY_RACK_PREFIX};
pub use dispatch::{reroute, Availability, Binding};
pub use intake::IntakeQueue;
pub use metrics::{utilization, InstrumentUse, UtilizationReport};
pub use trace::{simulate, Event, EventKind, EventTrace};

#[derive(Debug, Error, PartialEq)]
pub enum ScheduleError {
    #[error("programs are not independent: {0}")]
    IncompatiblePrograms(String),
    #[error("invocation {invocation} of `{program}` has no capable instrument for `{tag}`")]
    Unschedulable {
        program: String,
        invocation: usize,
        tag: String,
    },
    #[error("utilization needs a positive makespan")]
    ZeroMakespan,
    #[error("malformed trace: {0}")]
    Trace(String),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    SerialQueue,
    #[default]
    Dynamic,
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Policy::SerialQueue => "serial_queue",
            Policy::Dynamic => "dynamic",
        })
    }
}

impl FromStr for Policy {
    type Err = String;

    fn from_str(s: &str) -> Result<Policy, String> {
        match s {
            "serial" | "serial_queue" => Ok(Policy::SerialQueue),
            "dynamic" => Ok(Policy::Dynamic),
            _ => Err(format!("unknown policy `{s}` (expected serial or dynamic)")),
        }
    }
}

/// One invocation bound to one service for a time window.
#[derive(Clone, Debug, PartialEq)]
pub struct Allocation {
    /// Index into [`Schedule::programs`].
    pub program: usize,
    pub invocation_id: usize,
    pub request_id: String,
    pub instrument_id: String,
    pub service_id: String,
    pub start: Ticks,
    pub end: Ticks,
    /// When dependencies and release allowed the invocation to start.
    pub ready: Ticks,
    /// Preferred service, when the binding went elsewhere.
    pub rerouted_from: Option<String>,
    pub width: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Schedule {
    pub policy: Policy,
    /// Programs as executed; consolidation may have merged the inputs.
    pub programs: Vec<Program>,
    pub allocations: Vec<Allocation>,
    pub makespan: Ticks,
    /// The dynamic plan lost to the serial queue and was replaced by it.
    pub serial_fallback: bool,
}

impl Schedule {
    pub fn empty(policy: Policy) -> Schedule {
        Schedule {
            policy,
            programs: Vec::new(),
            allocations: Vec::new(),
            makespan: Ticks::ZERO,
            serial_fallback: false,
        }
    }

    pub fn merged_invocations(&self) -> usize {
        self.allocations.iter().filter(|a| a.width > 1).count()
    }

    /// Double bookings of exclusive instruments and dependency-order breaks.
    /// Empty for every schedule this module produces.
    pub fn violations(&self, reg: &Registry) -> Vec<String> {
        let mut out = Vec::new();
        let mut by_inst: std::collections::BTreeMap<&str, Vec<&Allocation>> = Default::default();
        for a in &self.allocations {
            if a.end <= a.start {
                out.push(format!("empty window for {}#{}", a.request_id, a.invocation_id));
            }
            match reg.service(&a.service_id) {
                Some(s) if s.instrument_id == a.instrument_id => {}
                _ => out.push(format!("service {} not on {}", a.service_id, a.instrument_id)),
            }
            if reg.instrument(&a.instrument_id).is_some_and(|i| i.exclusive) {
                by_inst.entry(&a.instrument_id).or_default().push(a);
            }
        }
        for (inst, mut allocs) in by_inst {
            allocs.sort_by_key(|a| (a.start, a.end));
            for w in allocs.windows(2) {
                if w[1].start < w[0].end {
                    out.push(format!(
                        "{inst} double-booked: {}#{} and {}#{}",
                        w[0].request_id, w[0].invocation_id, w[1].request_id, w[1].invocation_id
                    ));
                }
            }
        }
        let mut window = std::collections::HashMap::new();
        for a in &self.allocations {
            window.insert((a.program, a.invocation_id), (a.start, a.end));
        }
        for (p, prog) in self.programs.iter().enumerate() {
            for inv in &prog.invocations {
                let Some(&(start, _)) = window.get(&(p, inv.id)) else {
                    out.push(format!("{}#{} never scheduled", prog.request_id, inv.id));
                    continue;
                };
                if start < inv.release {
                    out.push(format!("{}#{} starts before release", prog.request_id, inv.id));
                }
                for d in &inv.depends_on {
                    match window.get(&(p, *d)) {
                        Some(&(_, end)) if end <= start => {}
                        _ => out.push(format!("{}#{} starts before dependency {d}", prog.request_id, inv.id)),
                    }
                }
            }
        }
        out
    }
}

/// Schedules `progs` under `policy`. Programs are in submission order.
pub fn schedule(progs: &[Program], reg: &Registry, policy: Policy) -> Result<Schedule, ScheduleError> {
    let serial = serial_queue(progs, reg)?;
    if policy == Policy::SerialQueue {
        return Ok(serial);
    }
    let plan = if progs.len() > 1 {
        match consolidate(progs, reg) {
            Ok(merged) => vec![merged],
            Err(ScheduleError::IncompatiblePrograms(_)) => progs.to_vec(),
            Err(e) => return Err(e),
        }
    } else {
        progs.to_vec()
    };
    let mut avail = Availability::default();
    let allocations = dispatch::greedy(&plan, 0, reg, Ticks::ZERO, &mut avail)?;
    let makespan = makespan_of(&allocations);
    if serial.makespan < makespan {
        return Ok(Schedule {
            policy: Policy::Dynamic,
            serial_fallback: true,
            ..serial
        });
    }
    Ok(Schedule {
        policy: Policy::Dynamic,
        programs: plan,
        allocations,
        makespan,
        serial_fallback: false,
    })
}

/// Greedy list scheduling of `progs` as given: no consolidation and no
/// serial fallback.
pub fn list_schedule(progs: &[Program], reg: &Registry) -> Result<Schedule, ScheduleError> {
    let mut avail = Availability::default();
    let allocations = dispatch::greedy(progs, 0, reg, Ticks::ZERO, &mut avail)?;
    Ok(Schedule {
        policy: Policy::Dynamic,
        programs: progs.to_vec(),
        makespan: makespan_of(&allocations),
        allocations,
        serial_fallback: false,
    })
}

fn serial_queue(progs: &[Program], reg: &Registry) -> Result<Schedule, ScheduleError> {
    let mut order: Vec<usize> = (0..progs.len()).collect();
    order.sort_by_key(|&i| (release_of(&progs[i]), i));
    let mut t = Ticks::ZERO;
    let mut allocations = Vec::new();
    for i in order {
        let mut avail = Availability::default();
        let mut part = dispatch::greedy(std::slice::from_ref(&progs[i]), i, reg, t, &mut avail)?;
        t = t.max(makespan_of(&part));
        allocations.append(&mut part);
    }
    Ok(Schedule {
        policy: Policy::SerialQueue,
        programs: progs.to_vec(),
        makespan: makespan_of(&allocations),
        allocations,
        serial_fallback: false,
    })
}

fn release_of(p: &Program) -> Ticks {
    p.invocations.iter().map(|i| i.release).min().unwrap_or(Ticks::ZERO)
}

pub(crate) fn makespan_of(allocs: &[Allocation]) -> Ticks {
    allocs.iter().map(|a| a.end).max().unwrap_or(Ticks::ZERO)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compiler::{bind_and_estimate, compile, lint_seal_inference};
    use crate::testkit;

    fn program(task: &str, rack: &str, release_min: f64) -> Program {
        let reg = testkit::bench_registry();
        let p = testkit::template(task).relocated(rack);
        let prog = lint_seal_inference(compile(&p, &reg, rack).unwrap(), &reg).unwrap();
        bind_and_estimate(prog, &reg)
            .unwrap()
            .released_at(Ticks::from_minutes(release_min))
    }

    #[test]
    fn single_program_policies_agree_on_critical_path() {
        let reg = testkit::bench_registry();
        let p = program("rpa_test", "r1", 0.0);
        let s = schedule(std::slice::from_ref(&p), &reg, Policy::SerialQueue).unwrap();
        let d = schedule(std::slice::from_ref(&p), &reg, Policy::Dynamic).unwrap();
        assert_eq!(s.makespan, d.makespan);
        assert_eq!(s.makespan, p.critical_path());
        assert!(s.violations(&reg).is_empty());
    }

    #[test]
    fn competing_holds_run_concurrently_under_dynamic() {
        let reg = testkit::bench_registry();
        let progs = [program("polyA_tailing", "pa", 0.0), program("library_prep", "lp", 0.0)];
        let s = schedule(&progs, &reg, Policy::SerialQueue).unwrap();
        let d = schedule(&progs, &reg, Policy::Dynamic).unwrap();
        assert!(d.makespan < s.makespan);
        assert!(!d.serial_fallback);
        let holds: Vec<&Allocation> = d
            .allocations
            .iter()
            .filter(|a| a.service_id.ends_with("hold_temp") || a.service_id.ends_with("set_temp"))
            .collect();
        assert!(holds
            .iter()
            .any(|a| a.instrument_id == "thermocycler" && a.rerouted_from.is_some()));
        assert!(d.violations(&reg).is_empty());
        assert!(s.violations(&reg).is_empty());
    }

    #[test]
    fn policy_names_parse() {
        assert_eq!("serial".parse::<Policy>().unwrap(), Policy::SerialQueue);
        assert_eq!("dynamic".parse::<Policy>().unwrap().to_string(), "dynamic");
        assert!("fastest".parse::<Policy>().is_err());
    }
}
