//! Fixtures shared by unit tests, integration tests and benches.

use std::collections::{BTreeMap, BTreeSet};

use crate::compiler::{Invocation, Origin, Program};
use crate::procedure::{template_lookup, Address, Params, Procedure, TemplateKb};
use crate::registry::Registry;
use crate::time::Ticks;

pub const STANDARD_REG: &str = include_str!("../../../scenarios/standard.reg");
pub const TEMPLATES_KB: &str = include_str!("../../../scenarios/templates.kb");

pub fn bench_registry() -> Registry {
    Registry::from_toml_str(STANDARD_REG).expect("shipped registry parses")
}

pub fn templates() -> TemplateKb {
    TemplateKb::from_toml_str(TEMPLATES_KB).expect("shipped templates parse")
}

pub fn template(task: &str) -> Procedure {
    template_lookup(&templates(), task)
        .into_iter()
        .next()
        .unwrap_or_else(|| panic!("no template for {task}"))
}

pub fn rpa_procedure() -> Procedure {
    template("rpa_test")
}

/// The lysis-buffer synthesis candidate re-targeted to `seq`.
pub fn synthesis_procedure(seq: &[u8]) -> Procedure {
    template("enzymatic_synthesis")
        .with_sequence(seq)
        .expect("valid sequence")
}

/// A program of bare invocations with fixed durations in minutes.
pub fn program_from_durations(spec: &[(u32, &[usize])]) -> Program {
    let invocations = spec
        .iter()
        .enumerate()
        .map(|(id, (minutes, deps))| Invocation {
            id,
            capability: "thermal.hold".into(),
            params: BTreeMap::from([("duration".to_string(), f64::from(*minutes))]),
            labels: BTreeMap::new(),
            reads: BTreeSet::from([Address::new("plate", 0, id as u16 + 1)]),
            writes: BTreeSet::new(),
            depends_on: deps.iter().copied().collect(),
            est_duration: Some(Ticks::from_minutes(f64::from(*minutes))),
            source_step: id,
            requires_sealed: false,
            release: Ticks::ZERO,
            width: 1,
            origins: vec![Origin {
                request_id: "t".into(),
                invocation_id: id,
            }],
        })
        .collect();
    Program {
        program_id: "t/p".into(),
        request_id: "t".into(),
        procedure_id: "p".into(),
        params: Params::new(),
        invocations,
    }
}
