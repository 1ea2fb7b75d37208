//! Lowers procedures into hardware programs and validates them.
//!
//! A [`Program`] is a DAG of atomic-service invocations that name a required
//! capability tag but no instrument; binding happens in the scheduler. Step
//! order is kept through container data-flow: each invocation depends on the
//! previous invocation that touched any of its non-reservoir containers.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::{self, Write as _};

use thiserror::Error;

use crate::procedure::{synthesis, Address, Amount, Label, Modality, Params, Procedure, ProcedureError, Step};
use crate::registry::{AtomicService, Registry};
use crate::time::Ticks;

pub mod caps {
    pub const TRANSFER: &str = "liquid.transfer";
    pub const WASH: &str = "liquid.wash";
    pub const MIX: &str = "liquid.mix";
    pub const HOLD: &str = "thermal.hold";
    pub const FLUORESCENCE: &str = "optical.fluorescence";
    pub const SEQUENCING: &str = "sequencing.run";
    pub const CAP: &str = "mechanical.cap";
    pub const UNCAP: &str = "mechanical.uncap";
    pub const MOVE: &str = "mechanical.move";

    /// Capabilities that act on the contents of a container.
    pub fn is_activation(cap: &str) -> bool {
        cap.starts_with("thermal.") || cap.starts_with("optical.")
    }
}

/// Deck zones a container can sit in. Steps that need a container elsewhere
/// get a robotic-arm move first.
pub mod zones {
    pub const DECK: &str = "deck";
    pub const THERMAL: &str = "thermal";
    pub const OPTICAL: &str = "optical";
    pub const MAGNET: &str = "magnet";
    pub const SEQUENCER: &str = "sequencer";
}

#[derive(Debug, Error, PartialEq)]
pub enum CompileError {
    #[error(transparent)]
    Procedure(#[from] ProcedureError),
    #[error("step {step}: no instrument offers `{tag}`")]
    NoCapableInstrument { step: usize, tag: String },
    #[error("step {step}: parameter `{param}` outside every capable service's range")]
    ParamOutOfRange { step: usize, param: String },
}

/// Which request invocation an invocation came from.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Origin {
    pub request_id: String,
    pub invocation_id: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Invocation {
    pub id: usize,
    pub capability: String,
    pub params: BTreeMap<String, f64>,
    /// Non-numeric annotations: reagent, source, buffer, target zone.
    pub labels: BTreeMap<String, String>,
    pub reads: BTreeSet<Address>,
    /// Containers that receive liquid.
    pub writes: BTreeSet<Address>,
    pub depends_on: BTreeSet<usize>,
    pub est_duration: Option<Ticks>,
    pub source_step: usize,
    pub requires_sealed: bool,
    /// Earliest permitted start.
    pub release: Ticks,
    /// Number of containers handled in one motion.
    pub width: u32,
    pub origins: Vec<Origin>,
}

impl Invocation {
    /// Non-reservoir containers touched, ascending.
    pub fn containers(&self) -> BTreeSet<&Address> {
        self.reads
            .iter()
            .chain(&self.writes)
            .filter(|a| !a.is_reservoir())
            .collect()
    }

    /// Request ids this invocation serves, deduplicated, joined by `+`.
    pub fn request_label(&self) -> String {
        let ids: BTreeSet<&str> = self.origins.iter().map(|o| o.request_id.as_str()).collect();
        ids.into_iter().collect::<Vec<_>>().join("+")
    }

    /// Capable services in id order (transfers need enough channels).
    pub fn capable_services<'r>(&self, reg: &'r Registry) -> Vec<&'r AtomicService> {
        reg.services_with_capability(&self.capability)
            .into_iter()
            .filter(|s| {
                self.capability != caps::TRANSFER
                    || reg
                        .instrument(&s.instrument_id)
                        .is_some_and(|i| i.channels >= self.width)
            })
            .collect()
    }

    fn params_text(&self) -> String {
        let mut kv: Vec<(String, String)> = self
            .params
            .iter()
            .map(|(k, v)| (k.clone(), format!("{v}")))
            .chain(self.labels.iter().map(|(k, v)| (k.clone(), v.clone())))
            .collect();
        kv.sort();
        if kv.is_empty() {
            return "-".to_string();
        }
        kv.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(" ")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Program {
    pub program_id: String,
    pub request_id: String,
    pub procedure_id: String,
    /// Procedure parameters the program was compiled with.
    pub params: Params,
    pub invocations: Vec<Invocation>,
}

impl Program {
    pub fn len(&self) -> usize {
        self.invocations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.invocations.is_empty()
    }

    /// Ids are dense and every dependency points at an earlier invocation,
    /// which makes the list a topological order of an acyclic graph.
    pub fn is_well_formed(&self) -> bool {
        self.invocations
            .iter()
            .enumerate()
            .all(|(i, inv)| inv.id == i && inv.depends_on.iter().all(|&d| d < i))
    }

    pub fn count_capability(&self, cap: &str) -> usize {
        self.invocations.iter().filter(|i| i.capability == cap).count()
    }

    /// Sets every invocation's release time.
    pub fn released_at(mut self, release: Ticks) -> Program {
        for inv in &mut self.invocations {
            inv.release = release;
        }
        self
    }

    /// Longest dependency chain by estimated duration. Unestimated
    /// invocations count as zero.
    pub fn critical_path(&self) -> Ticks {
        let mut finish = vec![Ticks::ZERO; self.invocations.len()];
        let mut best = Ticks::ZERO;
        for (i, inv) in self.invocations.iter().enumerate() {
            let start = inv.depends_on.iter().map(|&d| finish[d]).max().unwrap_or(Ticks::ZERO);
            finish[i] = start + inv.est_duration.unwrap_or(Ticks::ZERO);
            best = best.max(finish[i]);
        }
        best
    }

    /// Line-oriented dump: `id | capability | params | deps`.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for inv in &self.invocations {
            let deps = if inv.depends_on.is_empty() {
                "-".to_string()
            } else {
                inv.depends_on
                    .iter()
                    .map(|d| d.to_string())
                    .collect::<Vec<_>>()
                    .join(",")
            };
            let _ = writeln!(
                out,
                "{} | {} | {} | {}",
                inv.id,
                inv.capability,
                inv.params_text(),
                deps
            );
        }
        out
    }

    /// Rebuilds ids after insertions or removals. `order` lists the
    /// invocations in their new order; dependencies are remapped and any
    /// dependency on a dropped invocation is removed.
    pub(crate) fn renumbered(mut self, order: Vec<Invocation>) -> Program {
        let remap: HashMap<usize, usize> = order.iter().enumerate().map(|(new, inv)| (inv.id, new)).collect();
        self.invocations = order
            .into_iter()
            .enumerate()
            .map(|(new, mut inv)| {
                inv.id = new;
                inv.depends_on = inv.depends_on.iter().filter_map(|d| remap.get(d).copied()).collect();
                inv
            })
            .collect();
        self
    }
}

impl fmt::Display for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.dump())
    }
}

struct Lowering<'a> {
    reg: &'a Registry,
    proc_: &'a Procedure,
    request_id: String,
    out: Vec<Invocation>,
    last_touch: HashMap<Address, usize>,
    zone: HashMap<Address, &'static str>,
}

struct Emit {
    cap: &'static str,
    params: BTreeMap<String, f64>,
    labels: BTreeMap<String, String>,
    reads: Vec<Address>,
    writes: Vec<Address>,
    requires_sealed: bool,
}

impl Emit {
    fn new(cap: &'static str) -> Emit {
        Emit {
            cap,
            params: BTreeMap::new(),
            labels: BTreeMap::new(),
            reads: Vec::new(),
            writes: Vec::new(),
            requires_sealed: false,
        }
    }

    fn param(mut self, k: &str, v: f64) -> Emit {
        self.params.insert(k.to_string(), v);
        self
    }

    fn label(mut self, k: &str, v: impl Into<String>) -> Emit {
        self.labels.insert(k.to_string(), v.into());
        self
    }

    fn reads(mut self, a: &Address) -> Emit {
        self.reads.push(a.clone());
        self
    }

    fn writes(mut self, a: &Address) -> Emit {
        self.writes.push(a.clone());
        self
    }
}

impl Lowering<'_> {
    fn emit(&mut self, step: usize, e: Emit) -> Result<(), CompileError> {
        check_bindable(self.reg, step, e.cap, &e.params)?;
        let id = self.out.len();
        let reads: BTreeSet<Address> = e.reads.into_iter().collect();
        let writes: BTreeSet<Address> = e.writes.into_iter().collect();
        let touched: BTreeSet<&Address> = reads.iter().chain(&writes).filter(|a| !a.is_reservoir()).collect();
        let depends_on = touched
            .iter()
            .filter_map(|a| self.last_touch.get(*a).copied())
            .collect();
        for a in touched {
            self.last_touch.insert(a.clone(), id);
        }
        self.out.push(Invocation {
            id,
            capability: e.cap.to_string(),
            params: e.params,
            labels: e.labels,
            reads,
            writes,
            depends_on,
            est_duration: None,
            source_step: step,
            requires_sealed: e.requires_sealed,
            release: Ticks::ZERO,
            width: 1,
            origins: vec![Origin {
                request_id: self.request_id.clone(),
                invocation_id: id,
            }],
        });
        Ok(())
    }

    fn ensure_zone(&mut self, step: usize, c: &Address, zone: &'static str) -> Result<(), CompileError> {
        let here = *self.zone.get(c).unwrap_or(&zones::DECK);
        if here != zone {
            self.emit(step, Emit::new(caps::MOVE).label("to", zone).reads(c))?;
            self.zone.insert(c.clone(), zone);
        }
        Ok(())
    }

    fn num(&self, step: usize, a: &Amount) -> Result<f64, CompileError> {
        Ok(self.proc_.num(step, a)?)
    }

    fn lower(&mut self, step: usize, s: &Step) -> Result<(), CompileError> {
        match s {
            Step::Transfer {
                reagent,
                volume,
                src,
                dst,
            } => {
                self.ensure_zone(step, dst, zones::DECK)?;
                let v = self.num(step, volume)?;
                self.emit(
                    step,
                    Emit::new(caps::TRANSFER)
                        .param("volume", v)
                        .label("reagent", reagent.clone())
                        .label("source", src.to_string())
                        .reads(src)
                        .writes(dst),
                )
            }
            Step::Incubate {
                temp,
                duration,
                sealed,
                container,
            } => {
                self.ensure_zone(step, container, zones::THERMAL)?;
                let mut e = Emit::new(caps::HOLD)
                    .param("temperature", self.num(step, temp)?)
                    .param("duration", self.num(step, duration)?)
                    .reads(container);
                e.requires_sealed = *sealed;
                self.emit(step, e)
            }
            Step::Measure { modality, container } => {
                let (zone, cap) = match modality {
                    Modality::Fluorescence => (zones::OPTICAL, caps::FLUORESCENCE),
                    Modality::Sequencing => (zones::SEQUENCER, caps::SEQUENCING),
                };
                self.ensure_zone(step, container, zone)?;
                self.emit(step, Emit::new(cap).reads(container))
            }
            Step::Wash {
                buffer,
                repeats,
                container,
            } => {
                self.ensure_zone(step, container, zones::MAGNET)?;
                let buffer = self.proc_.text(step, buffer)?;
                self.emit(step, wash(buffer, *repeats, container))
            }
            Step::Mix { container } => {
                self.ensure_zone(step, container, zones::DECK)?;
                self.emit(step, Emit::new(caps::MIX).reads(container))
            }
            Step::Seal { container } => self.emit(step, Emit::new(caps::CAP).reads(container)),
            Step::Unseal { container } => self.emit(step, Emit::new(caps::UNCAP).reads(container)),
            Step::SynthesisCycle { base, container } => {
                // Cycles run in place on the heated magnetic deck position.
                self.ensure_zone(step, container, zones::DECK)?;
                let cycle_time = self.num(step, &Amount::Param(synthesis::CYCLE_TIME.into()))?;
                let buffer = self.proc_.text(step, &Label::Param(synthesis::BUFFER.into()))?;
                let reservoir = |reagent: &str| reagent_source(reagent);
                let ext = synthesis::extension_reagent(*base);
                let ext_src = reservoir(&ext);
                self.emit(
                    step,
                    Emit::new(caps::TRANSFER)
                        .param("volume", synthesis::EXTENSION_VOLUME_UL)
                        .label("reagent", ext.clone())
                        .label("source", ext_src.to_string())
                        .reads(&ext_src)
                        .writes(container),
                )?;
                self.emit(
                    step,
                    Emit::new(caps::HOLD)
                        .param("temperature", synthesis::EXTENSION_TEMP_C)
                        .param("duration", cycle_time)
                        .reads(container),
                )?;
                self.emit(step, wash(buffer.clone(), synthesis::WASH_REPEATS, container))?;
                let deb_src = reservoir(synthesis::DEBLOCK_REAGENT);
                self.emit(
                    step,
                    Emit::new(caps::TRANSFER)
                        .param("volume", synthesis::DEBLOCK_VOLUME_UL)
                        .label("reagent", synthesis::DEBLOCK_REAGENT)
                        .label("source", deb_src.to_string())
                        .reads(&deb_src)
                        .writes(container),
                )?;
                self.emit(
                    step,
                    Emit::new(caps::HOLD)
                        .param("temperature", synthesis::DEBLOCK_TEMP_C)
                        .param("duration", synthesis::DEBLOCK_MIN)
                        .reads(container),
                )?;
                self.emit(step, wash(buffer, synthesis::WASH_REPEATS, container))
            }
        }
    }
}

/// Invocations per synthesis cycle.
pub const SYNTHESIS_CYCLE_INVOCATIONS: usize = 6;

fn wash(buffer: String, repeats: u32, container: &Address) -> Emit {
    Emit::new(caps::WASH)
        .param("repeats", f64::from(repeats))
        .label("buffer", buffer)
        .reads(container)
        .writes(container)
}

/// Fixed reservoir well for reagents the synthesis expansion draws.
fn reagent_source(reagent: &str) -> Address {
    let col = match reagent {
        "tdt_mix_A" => 1,
        "tdt_mix_C" => 2,
        "tdt_mix_G" => 3,
        "tdt_mix_T" => 4,
        _ => 5,
    };
    Address::new(crate::procedure::RESERVOIR_RACK, 7, col)
}

fn check_bindable(reg: &Registry, step: usize, tag: &str, params: &BTreeMap<String, f64>) -> Result<(), CompileError> {
    let capable = reg.services_with_capability(tag);
    if capable.is_empty() {
        return Err(CompileError::NoCapableInstrument {
            step,
            tag: tag.to_string(),
        });
    }
    if capable.iter().any(|s| s.rejected_param(params).is_none()) {
        return Ok(());
    }
    let param = params
        .keys()
        .find(|k| {
            let one = BTreeMap::from([((*k).clone(), params[*k])]);
            capable.iter().all(|s| s.rejected_param(&one).is_some())
        })
        .or_else(|| {
            capable[0]
                .rejected_param(params)
                .and_then(|p| params.keys().find(|k| k.as_str() == p))
        })
        .cloned()
        .unwrap_or_default();
    Err(CompileError::ParamOutOfRange { step, param })
}

/// Lowers a procedure into a program owned by `request_id`.
pub fn compile(p: &Procedure, reg: &Registry, request_id: &str) -> Result<Program, CompileError> {
    p.validate()?;
    let mut lw = Lowering {
        reg,
        proc_: p,
        request_id: request_id.to_string(),
        out: Vec::new(),
        last_touch: HashMap::new(),
        zone: HashMap::new(),
    };
    for (i, step) in p.steps.iter().enumerate() {
        lw.lower(i, step)?;
    }
    Ok(Program {
        program_id: format!("{request_id}/{}", p.procedure_id),
        request_id: request_id.to_string(),
        procedure_id: p.procedure_id.clone(),
        params: p.params.clone(),
        invocations: lw.out,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Finding {
    pub severity: Severity,
    pub rule: &'static str,
    pub invocation_id: usize,
    pub message: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LintReport {
    pub findings: Vec<Finding>,
}

impl LintReport {
    pub fn is_clean(&self) -> bool {
        self.findings.is_empty()
    }

    pub fn errors(&self) -> impl Iterator<Item = &Finding> {
        self.findings.iter().filter(|f| f.severity == Severity::Error)
    }

    pub fn has_errors(&self) -> bool {
        self.errors().next().is_some()
    }
}

impl fmt::Display for LintReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for x in &self.findings {
            let sev = match x.severity {
                Severity::Error => "error",
                Severity::Warning => "warning",
            };
            writeln!(f, "{sev} [{}] invocation {}: {}", x.rule, x.invocation_id, x.message)?;
        }
        Ok(())
    }
}

/// A rewriting pass over a program.
pub trait ProgramPass: Send + Sync {
    fn name(&self) -> &'static str;
    fn apply(&self, prog: Program, reg: &Registry) -> Result<Program, CompileError>;
}

/// A read-only check over a program.
pub trait LintRule: Send + Sync {
    fn name(&self) -> &'static str;
    fn check(&self, prog: &Program, reg: &Registry) -> Vec<Finding>;
}

/// Inserts a cap before every sealed-required hold on an open container.
pub struct SealInference;

impl ProgramPass for SealInference {
    fn name(&self) -> &'static str {
        "seal-inference"
    }

    fn apply(&self, prog: Program, reg: &Registry) -> Result<Program, CompileError> {
        lint_seal_inference(prog, reg)
    }
}

/// Flags activations on containers nothing has filled.
pub struct TransferBeforeActivate;

impl LintRule for TransferBeforeActivate {
    fn name(&self) -> &'static str {
        "transfer-before-activate"
    }

    fn check(&self, prog: &Program, _reg: &Registry) -> Vec<Finding> {
        lint_transfer_before_activate(prog).findings
    }
}

pub struct LintSuite {
    pub passes: Vec<Box<dyn ProgramPass>>,
    pub rules: Vec<Box<dyn LintRule>>,
}

impl Default for LintSuite {
    fn default() -> LintSuite {
        LintSuite {
            passes: vec![Box::new(SealInference)],
            rules: vec![Box::new(TransferBeforeActivate)],
        }
    }
}

impl LintSuite {
    pub fn run(&self, mut prog: Program, reg: &Registry) -> Result<(Program, LintReport), CompileError> {
        for pass in &self.passes {
            prog = pass.apply(prog, reg)?;
        }
        let findings = self.rules.iter().flat_map(|r| r.check(&prog, reg)).collect();
        Ok((prog, LintReport { findings }))
    }
}

pub fn lint_seal_inference(prog: Program, reg: &Registry) -> Result<Program, CompileError> {
    let mut sealed: BTreeSet<Address> = BTreeSet::new();
    let mut order = Vec::with_capacity(prog.invocations.len());
    let mut next_id = prog.invocations.len();
    let mut inserted = false;
    for mut inv in prog.invocations.iter().cloned() {
        match inv.capability.as_str() {
            caps::CAP => sealed.extend(inv.reads.iter().cloned()),
            caps::UNCAP => {
                for a in &inv.reads {
                    sealed.remove(a);
                }
            }
            caps::HOLD if inv.requires_sealed => {
                let open: BTreeSet<Address> = inv
                    .containers()
                    .into_iter()
                    .filter(|a| !sealed.contains(*a))
                    .cloned()
                    .collect();
                if !open.is_empty() {
                    if reg.services_with_capability(caps::CAP).is_empty() {
                        return Err(CompileError::NoCapableInstrument {
                            step: inv.source_step,
                            tag: caps::CAP.to_string(),
                        });
                    }
                    let cap = Invocation {
                        id: next_id,
                        capability: caps::CAP.to_string(),
                        params: BTreeMap::new(),
                        labels: BTreeMap::new(),
                        reads: open.clone(),
                        writes: BTreeSet::new(),
                        depends_on: std::mem::take(&mut inv.depends_on),
                        est_duration: None,
                        source_step: inv.source_step,
                        requires_sealed: false,
                        release: inv.release,
                        width: inv.width,
                        origins: inv.origins.clone(),
                    };
                    inv.depends_on.insert(next_id);
                    next_id += 1;
                    sealed.extend(open);
                    order.push(cap);
                    inserted = true;
                }
            }
            _ => {}
        }
        order.push(inv);
    }
    if !inserted {
        return Ok(prog);
    }
    Ok(prog.renumbered(order))
}

pub fn lint_transfer_before_activate(prog: &Program) -> LintReport {
    // filled[i]: containers written by i or any of its ancestors.
    let mut filled: Vec<BTreeSet<&Address>> = Vec::with_capacity(prog.invocations.len());
    let mut findings = Vec::new();
    for inv in &prog.invocations {
        let mut upstream: BTreeSet<&Address> = BTreeSet::new();
        for &d in &inv.depends_on {
            upstream.extend(filled[d].iter().copied());
        }
        if caps::is_activation(&inv.capability) {
            let empty: Vec<String> = inv
                .containers()
                .into_iter()
                .filter(|a| !upstream.contains(a))
                .map(ToString::to_string)
                .collect();
            if !empty.is_empty() {
                findings.push(Finding {
                    severity: Severity::Error,
                    rule: "transfer-before-activate",
                    invocation_id: inv.id,
                    message: format!("{} on empty {}", inv.capability, empty.join(", ")),
                });
            }
        }
        upstream.extend(inv.writes.iter().filter(|a| !a.is_reservoir()));
        filled.push(upstream);
    }
    LintReport { findings }
}

/// Cheapest capable service for an invocation; ties go to the lower id.
pub fn cheapest_service<'r>(inv: &Invocation, reg: &'r Registry) -> Option<(&'r AtomicService, Ticks)> {
    inv.capable_services(reg)
        .into_iter()
        .map(|s| (s, s.duration_model.ticks(&inv.params)))
        .min_by(|a, b| a.1.cmp(&b.1).then_with(|| a.0.service_id.cmp(&b.0.service_id)))
}

pub fn bind_and_estimate(mut prog: Program, reg: &Registry) -> Result<Program, CompileError> {
    for inv in &mut prog.invocations {
        let (_, ticks) = cheapest_service(inv, reg).ok_or_else(|| CompileError::NoCapableInstrument {
            step: inv.source_step,
            tag: inv.capability.clone(),
        })?;
        inv.est_duration = Some(ticks);
    }
    Ok(prog)
}
