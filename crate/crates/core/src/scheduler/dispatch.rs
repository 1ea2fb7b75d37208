use std::collections::{BTreeMap, BTreeSet};

use crate::compiler::{cheapest_service, Invocation, Program};
use crate::registry::Registry;
use crate::time::Ticks;

use super::{Allocation, ScheduleError};

/// When each exclusive instrument next becomes free.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Availability {
    free_at: BTreeMap<String, Ticks>,
}

impl Availability {
    pub fn busy_until(mut self, instrument_id: &str, t: Ticks) -> Availability {
        self.occupy(instrument_id, t);
        self
    }

    pub fn free_at(&self, instrument_id: &str) -> Ticks {
        self.free_at.get(instrument_id).copied().unwrap_or(Ticks::ZERO)
    }

    pub fn occupy(&mut self, instrument_id: &str, until: Ticks) {
        let slot = self.free_at.entry(instrument_id.to_string()).or_insert(Ticks::ZERO);
        *slot = (*slot).max(until);
    }

    fn earliest(&self, reg: &Registry, instrument_id: &str, ready: Ticks) -> Ticks {
        match reg.instrument(instrument_id) {
            Some(i) if !i.exclusive => ready,
            _ => ready.max(self.free_at(instrument_id)),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Binding {
    pub instrument_id: String,
    pub service_id: String,
    pub start: Ticks,
    pub duration: Ticks,
    /// Preferred service when the binding differs from it.
    pub rerouted_from: Option<String>,
}

/// Binds `inv` to the capable service that can start first, not before
/// `ready`. The preferred (cheapest, then lowest id) service wins ties, so an
/// alternative is used only when it starts strictly earlier.
pub fn reroute(inv: &Invocation, reg: &Registry, busy: &Availability, ready: Ticks) -> Option<Binding> {
    let (preferred, _) = cheapest_service(inv, reg)?;
    let mut options: Vec<_> = inv
        .capable_services(reg)
        .into_iter()
        .map(|s| {
            let start = busy.earliest(reg, &s.instrument_id, ready);
            let duration = s.duration_model.ticks(&inv.params);
            let not_preferred = s.service_id != preferred.service_id;
            (start, not_preferred, duration, s)
        })
        .collect();
    options.sort_by(|a, b| {
        (a.0, a.1, a.2)
            .cmp(&(b.0, b.1, b.2))
            .then_with(|| a.3.service_id.cmp(&b.3.service_id))
    });
    let (start, not_preferred, duration, s) = options.into_iter().next()?;
    Some(Binding {
        instrument_id: s.instrument_id.clone(),
        service_id: s.service_id.clone(),
        start,
        duration,
        rerouted_from: not_preferred.then(|| preferred.service_id.clone()),
    })
}

/// Start, release, program, invocation.
type DispatchKey = (Ticks, Ticks, usize, usize);

/// Greedy list scheduling: among ready invocations, commit the one with the
/// earliest feasible start; ties by release, program, invocation id.
pub(crate) fn greedy(
    progs: &[Program],
    program_offset: usize,
    reg: &Registry,
    not_before: Ticks,
    avail: &mut Availability,
) -> Result<Vec<Allocation>, ScheduleError> {
    let mut waiting: Vec<Vec<usize>> = progs
        .iter()
        .map(|p| p.invocations.iter().map(|i| i.depends_on.len()).collect())
        .collect();
    let mut succ: Vec<Vec<Vec<usize>>> = progs.iter().map(|p| vec![Vec::new(); p.len()]).collect();
    for (k, p) in progs.iter().enumerate() {
        for inv in &p.invocations {
            for &d in &inv.depends_on {
                succ[k][d].push(inv.id);
            }
        }
    }
    let mut end: Vec<Vec<Ticks>> = progs.iter().map(|p| vec![Ticks::ZERO; p.len()]).collect();
    let mut ready: BTreeSet<(usize, usize)> = BTreeSet::new();
    for (k, p) in progs.iter().enumerate() {
        ready.extend(
            p.invocations
                .iter()
                .filter(|i| i.depends_on.is_empty())
                .map(|i| (k, i.id)),
        );
    }
    let total: usize = progs.iter().map(Program::len).sum();
    let mut out = Vec::with_capacity(total);
    while !ready.is_empty() {
        // (sort key, binding, ready time)
        let mut best: Option<(DispatchKey, Binding, Ticks)> = None;
        for &(k, i) in &ready {
            let inv = &progs[k].invocations[i];
            let ready_at = inv
                .depends_on
                .iter()
                .map(|&d| end[k][d])
                .fold(inv.release.max(not_before), Ticks::max);
            let b = reroute(inv, reg, avail, ready_at).ok_or_else(|| ScheduleError::Unschedulable {
                program: progs[k].program_id.clone(),
                invocation: i,
                tag: inv.capability.clone(),
            })?;
            let key = (b.start, inv.release, k, i);
            if best.as_ref().is_none_or(|(bk, _, _)| key < *bk) {
                best = Some((key, b, ready_at));
            }
        }
        let ((start, _, k, i), b, ready_at) = best.expect("ready set is non-empty");
        ready.remove(&(k, i));
        let inv = &progs[k].invocations[i];
        let finish = start + b.duration;
        if reg.instrument(&b.instrument_id).is_some_and(|x| x.exclusive) {
            avail.occupy(&b.instrument_id, finish);
        }
        end[k][i] = finish;
        for &s in &succ[k][i] {
            waiting[k][s] -= 1;
            if waiting[k][s] == 0 {
                ready.insert((k, s));
            }
        }
        out.push(Allocation {
            program: program_offset + k,
            invocation_id: i,
            request_id: inv.request_label(),
            instrument_id: b.instrument_id,
            service_id: b.service_id,
            start,
            end: finish,
            ready: ready_at,
            rerouted_from: b.rerouted_from,
            width: inv.width,
        });
    }
    if out.len() != total {
        return Err(ScheduleError::IncompatiblePrograms("dependency cycle".into()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compiler::compile;
    use crate::testkit;

    fn hold() -> Invocation {
        let reg = testkit::bench_registry();
        let prog = compile(&testkit::rpa_procedure(), &reg, "r").unwrap();
        prog.invocations
            .into_iter()
            .find(|i| i.capability == "thermal.hold")
            .unwrap()
    }

    #[test]
    fn busy_heater_reroutes_to_thermocycler() {
        let reg = testkit::bench_registry();
        let busy = Availability::default().busy_until("heater", Ticks::from_minutes(60.0));
        let b = reroute(&hold(), &reg, &busy, Ticks::ZERO).unwrap();
        assert_eq!(b.service_id, "thermocycler.set_temp");
        assert_eq!(b.start, Ticks::ZERO);
        assert_eq!(b.rerouted_from.as_deref(), Some("heater.hold_temp"));
    }

    #[test]
    fn idle_lab_binds_preferred() {
        let reg = testkit::bench_registry();
        let b = reroute(&hold(), &reg, &Availability::default(), Ticks::ZERO).unwrap();
        assert_eq!(b.service_id, "heater.hold_temp");
        assert!(b.rerouted_from.is_none());
        let both = Availability::default()
            .busy_until("heater", Ticks(50))
            .busy_until("thermocycler", Ticks(50));
        let b = reroute(&hold(), &reg, &both, Ticks::ZERO).unwrap();
        assert_eq!((b.service_id.as_str(), b.start), ("heater.hold_temp", Ticks(50)));
    }
}
