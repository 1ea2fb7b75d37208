use std::collections::{BTreeMap, BTreeSet};

use crate::compiler::{Invocation, Program};
use crate::procedure::{Address, Params};
use crate::registry::Registry;
use crate::time::Ticks;

use super::ScheduleError;

/// Racks of the consolidated tube array are named `array0`, `array1`, ...;
/// each holds one block of as many programs as the widest pipette has
/// channels, one program per column.
pub const ARRAY_RACK_PREFIX: &str = "array";

const MAX_ROWS: usize = 26;

type MergeKey = (String, Vec<(String, u64)>, Vec<(String, String)>, bool, Ticks);

fn merge_key(inv: &Invocation) -> MergeKey {
    (
        inv.capability.clone(),
        inv.params.iter().map(|(k, v)| (k.clone(), v.to_bits())).collect(),
        inv.labels.iter().map(|(k, v)| (k.clone(), v.clone())).collect(),
        inv.requires_sealed,
        inv.release,
    )
}

/// Merges independent programs into one program laid out on a tube array.
///
/// Each program's containers move to one column of an array rack (container
/// ordinal = row). Invocations are emitted wavefront by wavefront; ready
/// invocations with identical capability, parameters and labels that sit in
/// consecutive columns of one row become a single multi-tube invocation.
pub fn consolidate(progs: &[Program], reg: &Registry) -> Result<Program, ScheduleError> {
    if progs.len() == 1 {
        return Ok(progs[0].clone());
    }
    let width = reg.max_transfer_channels().max(1) as usize;
    let mut owner: BTreeMap<&Address, usize> = BTreeMap::new();
    let mut maps: Vec<BTreeMap<Address, Address>> = Vec::with_capacity(progs.len());
    for (k, p) in progs.iter().enumerate() {
        let containers: BTreeSet<&Address> = p.invocations.iter().flat_map(|i| i.containers()).collect();
        if containers.len() > MAX_ROWS {
            return Err(ScheduleError::IncompatiblePrograms(format!(
                "`{}` uses more than {MAX_ROWS} containers",
                p.program_id
            )));
        }
        let mut map = BTreeMap::new();
        for (row, &a) in containers.iter().enumerate() {
            if let Some(&other) = owner.get(a) {
                return Err(ScheduleError::IncompatiblePrograms(format!(
                    "`{}` and `{}` share {a}",
                    progs[other].program_id, p.program_id
                )));
            }
            owner.insert(a, k);
            let slot = Address::new(
                format!("{ARRAY_RACK_PREFIX}{}", k / width),
                row as u8,
                (k % width) as u16 + 1,
            );
            map.insert(a.clone(), slot);
        }
        maps.push(map);
    }

    let mut waiting: Vec<Vec<usize>> = progs
        .iter()
        .map(|p| p.invocations.iter().map(|i| i.depends_on.len()).collect())
        .collect();
    let mut succ: Vec<Vec<Vec<usize>>> = progs.iter().map(|p| vec![Vec::new(); p.len()]).collect();
    let mut depth: Vec<Vec<usize>> = progs.iter().map(|p| vec![0; p.len()]).collect();
    for (k, p) in progs.iter().enumerate() {
        for inv in &p.invocations {
            for &d in &inv.depends_on {
                succ[k][d].push(inv.id);
                depth[k][inv.id] = depth[k][inv.id].max(depth[k][d] + 1);
            }
        }
    }
    let mut new_id: Vec<Vec<usize>> = progs.iter().map(|p| vec![usize::MAX; p.len()]).collect();
    let mut ready: BTreeSet<(usize, usize, usize)> = BTreeSet::new();
    for (k, p) in progs.iter().enumerate() {
        for inv in p.invocations.iter().filter(|i| i.depends_on.is_empty()) {
            ready.insert((depth[k][inv.id], k, inv.id));
        }
    }

    let mut out: Vec<Invocation> = Vec::new();
    while let Some(&head) = ready.first() {
        let (_, hk, hi) = head;
        let lead = &progs[hk].invocations[hi];
        let key = merge_key(lead);
        let members: Vec<(usize, usize, usize)> = if lead.containers().len() == 1 {
            ready
                .iter()
                .copied()
                .filter(|&(_, k, i)| {
                    let inv = &progs[k].invocations[i];
                    inv.containers().len() == 1 && merge_key(inv) == key
                })
                .collect()
        } else {
            vec![head]
        };
        let mut placed: Vec<(Address, (usize, usize, usize))> = members
            .iter()
            .map(|&m| {
                let inv = &progs[m.1].invocations[m.2];
                let c = inv.containers().into_iter().next().cloned();
                let slot = c
                    .map(|c| maps[m.1][&c].clone())
                    .unwrap_or_else(|| Address::new("", 0, 0));
                (slot, m)
            })
            .collect();
        placed.sort();
        let mut runs: Vec<Vec<(usize, usize, usize)>> = Vec::new();
        let mut prev: Option<&Address> = None;
        for (slot, m) in &placed {
            let extends = prev.is_some_and(|p| p.rack == slot.rack && p.row == slot.row && p.col + 1 == slot.col);
            match runs.last_mut() {
                Some(run) if extends => run.push(*m),
                _ => runs.push(vec![*m]),
            }
            prev = Some(slot);
        }
        for run in runs {
            let id = out.len();
            let merged = merge_run(progs, &maps, &new_id, &run, id);
            for &(_, k, i) in &run {
                ready.remove(&(depth[k][i], k, i));
                new_id[k][i] = id;
                for &s in &succ[k][i] {
                    waiting[k][s] -= 1;
                    if waiting[k][s] == 0 {
                        ready.insert((depth[k][s], k, s));
                    }
                }
            }
            out.push(merged);
        }
    }

    let join = |f: fn(&Program) -> &str| {
        let mut seen = BTreeSet::new();
        progs
            .iter()
            .map(f)
            .filter(|s| seen.insert(*s))
            .collect::<Vec<_>>()
            .join("+")
    };
    Ok(Program {
        program_id: format!("consolidated[{}]", progs.len()),
        request_id: join(|p| &p.request_id),
        procedure_id: join(|p| &p.procedure_id),
        params: Params::new(),
        invocations: out,
    })
}

fn remap<'a>(map: &'a BTreeMap<Address, Address>, set: &'a BTreeSet<Address>) -> impl Iterator<Item = Address> + 'a {
    set.iter().map(|a| map.get(a).unwrap_or(a).clone())
}

fn merge_run(
    progs: &[Program],
    maps: &[BTreeMap<Address, Address>],
    new_id: &[Vec<usize>],
    run: &[(usize, usize, usize)],
    id: usize,
) -> Invocation {
    let (_, k0, i0) = run[0];
    let mut merged = progs[k0].invocations[i0].clone();
    merged.id = id;
    merged.reads.clear();
    merged.writes.clear();
    merged.depends_on.clear();
    merged.origins.clear();
    merged.width = 0;
    let mut durations = BTreeSet::new();
    for &(_, k, i) in run {
        let inv = &progs[k].invocations[i];
        merged.reads.extend(remap(&maps[k], &inv.reads));
        merged.writes.extend(remap(&maps[k], &inv.writes));
        merged.depends_on.extend(inv.depends_on.iter().map(|&d| new_id[k][d]));
        merged.origins.extend(inv.origins.iter().cloned());
        merged.width += inv.width;
        merged.source_step = merged.source_step.min(inv.source_step);
        durations.insert(inv.est_duration);
    }
    if let Some(src) = merged.labels.get("source").and_then(|s| s.parse::<Address>().ok()) {
        if let Some(slot) = maps[k0].get(&src) {
            merged.labels.insert("source".into(), slot.to_string());
        }
    }
    if durations.len() > 1 {
        merged.est_duration = None;
    }
    merged
}
