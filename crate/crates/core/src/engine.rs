//! Scenario files, end-to-end runs and persisted run artifacts.
//!
//! A scenario config names a registry, a template knowledge base and an
//! inventory (paths relative to the config) plus the requests to run. Every
//! run writes its artifacts under `<out>/<run_id>/`; the run id embeds a
//! digest of all scenario inputs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::optimizer::{optimize_loop, CoordinateSearch, OptimizationState, OptimizeError};
use crate::procedure::{
    screen_feasibility, template_lookup, Feasibility, Objective, ProcedureError, ReagentInventory, Request, TemplateKb,
};
use crate::registry::{load_registry, Registry, RegistryError};
use crate::scheduler::{schedule, simulate, utilization, EventTrace, Policy, Schedule, UtilizationReport};
use crate::sim_lab::{run, sequence_strands, ErrorChannel, LabError, LabModel, SimLab, YieldSurface};
use crate::storage::{decode, storage_roundtrip, Header, StorageError, StorageStack};
use crate::time::Ticks;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Procedure(#[from] ProcedureError),
    #[error("request `{request_id}`: {message}")]
    Request { request_id: String, message: String },
    #[error(transparent)]
    Storage(#[from] StorageError),
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> EngineError {
    EngineError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

fn request_err(request_id: &str, e: impl std::fmt::Display) -> EngineError {
    EngineError::Request {
        request_id: request_id.to_string(),
        message: e.to_string(),
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Run every request once, as one batch.
    #[default]
    Batch,
    /// Run the closed optimization loop for each request.
    Optimize,
    /// Write and read back a payload.
    Storage,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RequestSpec {
    pub id: String,
    #[serde(default = "default_user")]
    pub user: String,
    /// `task(param=value, ...)`.
    pub task: String,
    #[serde(default)]
    pub submit: f64,
    #[serde(default)]
    pub objective: Option<Vec<String>>,
}

fn default_user() -> String {
    "anonymous".into()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StorageSpec {
    /// Payload file, relative to the config. `store write` supplies its own.
    #[serde(default)]
    pub payload: Option<String>,
    pub payload_nt: usize,
    pub coverage: usize,
    #[serde(default = "synthesis_task")]
    pub synthesis_task: String,
    #[serde(default = "sequencing_task")]
    pub sequencing_task: String,
}

fn synthesis_task() -> String {
    "strand_synthesis".into()
}

fn sequencing_task() -> String {
    "sequencing".into()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub registry: String,
    pub templates: String,
    pub inventory: String,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub policy: Policy,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_budget")]
    pub budget: usize,
    /// Programs per candidate procedure.
    #[serde(default = "one")]
    pub replicates: usize,
    #[serde(default, rename = "request")]
    pub requests: Vec<RequestSpec>,
    #[serde(default)]
    pub surface: YieldSurface,
    #[serde(default)]
    pub channel: ErrorChannel,
    /// Fluorescence ground truth per request id.
    #[serde(default)]
    pub truth: BTreeMap<String, bool>,
    #[serde(default)]
    pub storage: Option<StorageSpec>,
}

fn default_budget() -> usize {
    30
}

fn one() -> usize {
    1
}

/// Command-line overrides of config values.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub policy: Option<Policy>,
    pub seed: Option<u64>,
    pub budget: Option<usize>,
    pub out_dir: Option<PathBuf>,
    /// Replaces the storage payload.
    pub payload: Option<Vec<u8>>,
}

/// A loaded scenario: config plus the files it references.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub path: PathBuf,
    pub config: ScenarioConfig,
    pub registry: Registry,
    pub kb: TemplateKb,
    pub inventory: ReagentInventory,
    pub hash: String,
    pub payload: Option<Vec<u8>>,
}

fn read(path: &Path) -> Result<Vec<u8>, EngineError> {
    std::fs::read(path).map_err(|e| io_err(path, e))
}

fn utf8(path: &Path, bytes: Vec<u8>) -> Result<String, EngineError> {
    String::from_utf8(bytes).map_err(|e| io_err(path, e))
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::with_capacity(bytes.len() * 2), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

impl Scenario {
    pub fn load(path: impl AsRef<Path>) -> Result<Scenario, EngineError> {
        let path = path.as_ref().to_path_buf();
        let text = utf8(&path, read(&path)?)?;
        let config: ScenarioConfig = toml::from_str(&text).map_err(|e| EngineError::Config(e.to_string()))?;
        for r in &config.requests {
            if r.submit.is_nan() || r.submit < 0.0 {
                return Err(EngineError::Config(format!(
                    "request `{}` has a negative submit time",
                    r.id
                )));
            }
        }
        config
            .channel
            .validate()
            .map_err(|e| EngineError::Config(e.to_string()))?;
        let dir = path.parent().unwrap_or(Path::new("."));
        let mut digest = Sha256::new();
        digest.update(text.as_bytes());
        let mut load = |rel: &str| -> Result<(PathBuf, Vec<u8>), EngineError> {
            let p = dir.join(rel);
            let bytes = read(&p)?;
            digest.update((rel.len() as u64).to_le_bytes());
            digest.update(rel.as_bytes());
            digest.update(&bytes);
            Ok((p, bytes))
        };
        let (reg_path, reg_bytes) = load(&config.registry)?;
        let (kb_path, kb_bytes) = load(&config.templates)?;
        let (inv_path, inv_bytes) = load(&config.inventory)?;
        let payload = match config.storage.as_ref().and_then(|s| s.payload.clone()) {
            Some(rel) => Some(load(&rel)?.1),
            None => None,
        };
        let registry = Registry::from_toml_str(&utf8(&reg_path, reg_bytes)?)?;
        let kb = TemplateKb::from_toml_str(&utf8(&kb_path, kb_bytes)?)?;
        let inventory =
            ReagentInventory::from_toml_str(&utf8(&inv_path, inv_bytes)?).map_err(|e| io_err(&inv_path, e))?;
        for r in &config.requests {
            let (task, _) = crate::procedure::parse_invocation(&r.task).map_err(|e| request_err(&r.id, e))?;
            if !kb.knows(&task) {
                return Err(request_err(&r.id, format!("unknown task `{task}`")));
            }
        }
        Ok(Scenario {
            path,
            config,
            registry,
            kb,
            inventory,
            hash: hex(&digest.finalize()),
            payload,
        })
    }

    pub fn requests(&self) -> Result<Vec<Request>, EngineError> {
        self.config
            .requests
            .iter()
            .map(|r| {
                let mut req = Request::parse(&r.id, &r.user, &r.task, r.submit).map_err(|e| request_err(&r.id, e))?;
                if let Some(goals) = &r.objective {
                    req.objective = Some(Objective::try_from(goals.clone()).map_err(|e| request_err(&r.id, e))?);
                }
                Ok(req)
            })
            .collect()
    }

    pub fn model(&self) -> LabModel {
        LabModel {
            surface: self.config.surface.clone(),
            channel: self.config.channel,
            fluorescence: self.config.truth.clone(),
            library: Vec::new(),
            coverage: self.config.storage.as_ref().map_or(1, |s| s.coverage),
        }
    }
}

/// Outcome of one program in a batch.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProgramResult {
    pub request_id: String,
    pub procedure_id: String,
    pub yield_: Option<f64>,
    pub fluorescence: Option<bool>,
    pub expected: Option<bool>,
}

/// A batch run under one policy.
#[derive(Clone, Debug)]
pub struct BatchRun {
    pub schedule: Schedule,
    pub trace: EventTrace,
    pub utilization: UtilizationReport,
    pub results: Vec<ProgramResult>,
}

/// Compiles and schedules every request of a batch scenario under `policy`.
pub fn run_batch(sc: &Scenario, policy: Policy, seed: u64) -> Result<BatchRun, EngineError> {
    let model = sc.model();
    let lab = SimLab {
        registry: &sc.registry,
        model: &model,
        policy,
        seed,
        replicates: sc.config.replicates,
    };
    let mut inv = sc.inventory.clone();
    let mut programs = Vec::new();
    for req in sc.requests()? {
        let candidates = template_lookup(&sc.kb, &req.task);
        let many = candidates.len() > 1;
        for (c, t) in candidates.iter().enumerate() {
            let p = t
                .with_params(&req.params)
                .map_err(|e| request_err(&req.request_id, e))?;
            let rid = if many {
                format!("{}.c{c}", req.request_id)
            } else {
                req.request_id.clone()
            };
            for _ in 0..sc.config.replicates.max(1) {
                inv.reserve(&p, &rid).map_err(|e| request_err(&rid, e))?;
            }
            let progs = lab
                .prepare(&p, &rid, Ticks::from_minutes(req.submit_time))
                .map_err(|e| request_err(&rid, e))?;
            programs.extend(progs);
        }
    }
    let sched = schedule(&programs, &sc.registry, policy).map_err(|e| EngineError::Config(e.to_string()))?;
    let trace = simulate(&sched);
    let util = if sched.makespan > Ticks::ZERO {
        utilization(&trace, sched.makespan)
            .map_err(|e| EngineError::Config(e.to_string()))?
            .with_idle(sc.registry.instruments().map(|i| i.instrument_id.as_str()))
    } else {
        UtilizationReport {
            makespan: Ticks::ZERO,
            queue_wait: Ticks::ZERO,
            instruments: Vec::new(),
        }
    };
    let results = programs
        .iter()
        .enumerate()
        .map(|(n, prog)| {
            let o = run(prog, &sched, &model, crate::seed::derive(seed, &[n as u64]));
            ProgramResult {
                request_id: prog.request_id.clone(),
                procedure_id: prog.procedure_id.clone(),
                yield_: o.yield_,
                fluorescence: o.fluorescence,
                expected: o.fluorescence.and(model.fluorescence.get(&prog.request_id).copied()),
            }
        })
        .collect();
    Ok(BatchRun {
        schedule: sched,
        trace,
        utilization: util,
        results,
    })
}

/// Runs the optimization loop for every request, one after another.
pub fn run_optimize(
    sc: &Scenario,
    policy: Policy,
    seed: u64,
    budget: usize,
) -> Result<Vec<OptimizationState>, EngineError> {
    let model = sc.model();
    let lab = SimLab {
        registry: &sc.registry,
        model: &model,
        policy,
        seed,
        replicates: sc.config.replicates,
    };
    sc.requests()?
        .iter()
        .map(|req| {
            let start = template_lookup(&sc.kb, &req.task)
                .first()
                .map(|t| t.params.clone())
                .unwrap_or_default();
            let proposer = CoordinateSearch::synthesis(start);
            optimize_loop(req, &sc.kb, &sc.inventory, &lab, &proposer, budget)
                .map(|(_, state)| state)
                .map_err(|e: OptimizeError| request_err(&req.request_id, e))
        })
        .collect()
}

/// Chains traces of consecutive sessions onto one timeline.
pub fn chain_sessions(sessions: &[(Ticks, EventTrace)]) -> (EventTrace, Ticks) {
    let mut out = EventTrace::default();
    let mut offset = Ticks::ZERO;
    for (makespan, t) in sessions {
        let mut t = t.clone();
        for e in &mut t.events {
            e.time += offset;
        }
        out.extend(t);
        offset += *makespan;
    }
    (out, offset)
}

#[derive(Clone, Debug, Serialize)]
pub struct RunRecord {
    pub run_id: String,
    pub scenario: String,
    pub scenario_hash: String,
    pub mode: Mode,
    pub policy: Policy,
    pub seed: u64,
    pub started_unix_s: f64,
    pub finished_unix_s: f64,
    pub makespan_min: f64,
    pub step_count: usize,
    pub out_dir: PathBuf,
    pub artifacts: BTreeMap<String, PathBuf>,
}

fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0.0, |d| d.as_secs_f64())
}

pub fn run_id(sc: &Scenario, policy: Policy, seed: u64) -> String {
    format!("{}-{}-s{seed}-{}", sc.config.name, policy, &sc.hash[..12])
}

struct ArtifactWriter {
    dir: PathBuf,
    written: BTreeMap<String, PathBuf>,
}

impl ArtifactWriter {
    fn new(dir: PathBuf) -> Result<ArtifactWriter, EngineError> {
        std::fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        Ok(ArtifactWriter {
            dir,
            written: BTreeMap::new(),
        })
    }

    fn put(&mut self, name: &str, body: impl AsRef<[u8]>) -> Result<(), EngineError> {
        let p = self.dir.join(name);
        std::fs::write(&p, body).map_err(|e| io_err(&p, e))?;
        self.written.insert(name.to_string(), p);
        Ok(())
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    run_id: &'a str,
    scenario: String,
    scenario_hash: &'a str,
    mode: Mode,
    policy: Policy,
    seed: u64,
    makespan_min: f64,
    step_count: usize,
    artifacts: Vec<String>,
    surface: &'a YieldSurface,
    channel: &'a ErrorChannel,
    #[serde(skip_serializing_if = "Option::is_none")]
    storage: Option<StorageManifest>,
    timing: Timing,
}

#[derive(Serialize, Deserialize)]
pub struct StorageManifest {
    pub header: Header,
    pub coverage: usize,
    pub payload_sha256: String,
    pub recovered_exactly: bool,
    pub instruments_used: usize,
    pub write_min: f64,
    pub wall_clock_min: f64,
    pub mean_agreement: f64,
}

#[derive(Serialize)]
struct Timing {
    started_unix_s: f64,
    finished_unix_s: f64,
}

fn results_csv(results: &[ProgramResult]) -> String {
    let mut out = String::from("request_id,procedure_id,yield,fluorescence,expected\n");
    let opt = |b: Option<bool>| b.map(|b| b.to_string()).unwrap_or_default();
    for r in results {
        let y = r.yield_.map(|y| format!("{y:.6}")).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{y},{},{}",
            r.request_id,
            r.procedure_id,
            opt(r.fluorescence),
            opt(r.expected)
        );
    }
    out
}

/// Runs a scenario and persists its artifacts.
pub fn run_scenario(path: impl AsRef<Path>, ov: &Overrides) -> Result<RunRecord, EngineError> {
    let started = unix_now();
    let sc = Scenario::load(path)?;
    let policy = ov.policy.unwrap_or(sc.config.policy);
    let seed = ov.seed.unwrap_or(sc.config.seed);
    let mut sc_hash = sc.hash.clone();
    if let Some(p) = &ov.payload {
        let mut d = Sha256::new();
        d.update(sc.hash.as_bytes());
        d.update(p);
        sc_hash = hex(&d.finalize());
    }
    let id = format!("{}-{}-s{seed}-{}", sc.config.name, policy, &sc_hash[..12]);
    let out_root = ov.out_dir.clone().unwrap_or_else(|| PathBuf::from("out"));
    let mut w = ArtifactWriter::new(out_root.join(&id))?;

    let mut storage_manifest = None;
    let (trace, makespan) = match sc.config.mode {
        Mode::Batch => {
            let b = run_batch(&sc, policy, seed)?;
            w.put("outcomes.csv", results_csv(&b.results))?;
            (b.trace, b.schedule.makespan)
        }
        Mode::Optimize => {
            let states = run_optimize(&sc, policy, seed, ov.budget.unwrap_or(sc.config.budget))?;
            let mut jsonl = String::new();
            let mut csv = String::new();
            let mut sessions = Vec::new();
            for s in &states {
                jsonl.push_str(&s.journal_jsonl());
                csv.push_str(&s.journal_csv());
                sessions.extend(s.sessions.iter().cloned());
            }
            w.put("journal.jsonl", jsonl)?;
            w.put("journal.csv", csv)?;
            chain_sessions(&sessions)
        }
        Mode::Storage => {
            let spec = sc
                .config
                .storage
                .as_ref()
                .ok_or_else(|| EngineError::Config("storage mode needs a [storage] table".into()))?;
            let data = ov
                .payload
                .clone()
                .or_else(|| sc.payload.clone())
                .ok_or_else(|| EngineError::Config("no storage payload".into()))?;
            let stack = StorageStack {
                registry: &sc.registry,
                kb: &sc.kb,
                model: sc.model(),
                policy,
                payload_nt: spec.payload_nt,
                synthesis_task: spec.synthesis_task.clone(),
                sequencing_task: spec.sequencing_task.clone(),
            };
            let r = storage_roundtrip(&data, &stack, seed)?;
            let strands: String = r
                .strands
                .strands
                .iter()
                .map(|s| format!("{}\t{}\n", s.index, String::from_utf8_lossy(&s.seq)))
                .collect();
            w.put("strands.tsv", strands)?;
            w.put("recovered.bin", &r.report.recovered)?;
            let n = r.report.agreement.len().max(1) as f64;
            storage_manifest = Some(StorageManifest {
                header: r.strands.header,
                coverage: spec.coverage,
                payload_sha256: hex(&Sha256::digest(&data)),
                recovered_exactly: r.report.recovered_exactly,
                instruments_used: r.report.instruments_used,
                write_min: r.report.write_min,
                wall_clock_min: r.report.wall_clock_min,
                mean_agreement: r.report.agreement.iter().sum::<f64>() / n,
            });
            (r.trace, Ticks::from_minutes(r.report.wall_clock_min))
        }
    };
    w.put("trace.csv", trace.to_csv())?;
    if makespan > Ticks::ZERO {
        let util = utilization(&trace, makespan)
            .map_err(|e| EngineError::Config(e.to_string()))?
            .with_idle(sc.registry.instruments().map(|i| i.instrument_id.as_str()));
        w.put("utilization.csv", util.to_csv())?;
        w.put("utilization.txt", util.to_text())?;
    }
    let finished = unix_now();
    let mut artifacts: Vec<String> = w.written.keys().cloned().collect();
    artifacts.push("manifest.toml".into());
    let manifest = Manifest {
        run_id: &id,
        scenario: sc.path.display().to_string(),
        scenario_hash: &sc_hash,
        mode: sc.config.mode,
        policy,
        seed,
        makespan_min: makespan.minutes(),
        step_count: trace.step_count,
        artifacts,
        surface: &sc.config.surface,
        channel: &sc.config.channel,
        storage: storage_manifest,
        timing: Timing {
            started_unix_s: started,
            finished_unix_s: finished,
        },
    };
    w.put(
        "manifest.toml",
        toml::to_string(&manifest).map_err(|e| EngineError::Config(e.to_string()))?,
    )?;
    Ok(RunRecord {
        run_id: id,
        scenario: sc.path.display().to_string(),
        scenario_hash: sc_hash,
        mode: sc.config.mode,
        policy,
        seed,
        started_unix_s: started,
        finished_unix_s: finished,
        makespan_min: makespan.minutes(),
        step_count: trace.step_count,
        out_dir: w.dir.clone(),
        artifacts: w.written,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct PolicyResult {
    pub makespan_min: f64,
    pub step_count: usize,
    pub queue_wait_min: f64,
    pub serial_fallback: bool,
    pub utilization: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Comparison {
    pub scenario: String,
    pub seed: u64,
    pub delta_min: f64,
    pub speedup: f64,
    pub serial: PolicyResult,
    pub dynamic: PolicyResult,
    pub utilization_delta: BTreeMap<String, f64>,
}

impl Comparison {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("comparison serializes")
    }
}

fn policy_result(b: &BatchRun) -> PolicyResult {
    PolicyResult {
        makespan_min: b.schedule.makespan.minutes(),
        step_count: b.trace.step_count,
        queue_wait_min: b.utilization.queue_wait.minutes(),
        serial_fallback: b.schedule.serial_fallback,
        utilization: b
            .utilization
            .instruments
            .iter()
            .map(|u| (u.instrument_id.clone(), u.utilization))
            .collect(),
    }
}

/// Runs the batch under both policies on identical requests and seed.
pub fn compare_policies(path: impl AsRef<Path>, ov: &Overrides) -> Result<Comparison, EngineError> {
    let sc = Scenario::load(path)?;
    let seed = ov.seed.unwrap_or(sc.config.seed);
    let serial = policy_result(&run_batch(&sc, Policy::SerialQueue, seed)?);
    let dynamic = policy_result(&run_batch(&sc, Policy::Dynamic, seed)?);
    let speedup = if dynamic.makespan_min > 0.0 {
        serial.makespan_min / dynamic.makespan_min
    } else {
        1.0
    };
    let utilization_delta = dynamic
        .utilization
        .iter()
        .map(|(k, v)| (k.clone(), v - serial.utilization.get(k).copied().unwrap_or(0.0)))
        .collect();
    Ok(Comparison {
        scenario: sc.path.display().to_string(),
        seed,
        delta_min: Ticks::from_minutes(serial.makespan_min)
            .saturating_sub(Ticks::from_minutes(dynamic.makespan_min))
            .minutes(),
        speedup,
        serial,
        dynamic,
        utilization_delta,
    })
}

#[derive(Deserialize)]
struct ManifestIn {
    seed: u64,
    channel: ErrorChannel,
    storage: Option<StorageManifest>,
}

/// Re-reads a stored payload from the strands of a finished storage run:
/// sequences the pool again with the run's seed and decodes. Returns the
/// recovered bytes and where they were written.
pub fn store_read(run_dir: &Path) -> Result<(Vec<u8>, PathBuf), EngineError> {
    let mpath = run_dir.join("manifest.toml");
    let m: ManifestIn =
        toml::from_str(&utf8(&mpath, read(&mpath)?)?).map_err(|e| EngineError::Config(e.to_string()))?;
    let st = m
        .storage
        .ok_or_else(|| EngineError::Config(format!("{} is not a storage run", run_dir.display())))?;
    let spath = run_dir.join("strands.tsv");
    let text = utf8(&spath, read(&spath)?)?;
    let strands: Vec<Vec<u8>> = text
        .lines()
        .filter_map(|l| l.split_once('\t'))
        .map(|(_, s)| s.as_bytes().to_vec())
        .collect();
    let reads = sequence_strands(&strands, st.coverage.max(1), &m.channel, m.seed);
    let bytes = decode(&reads, &st.header)?;
    let out = run_dir.join("read_back.bin");
    std::fs::write(&out, &bytes).map_err(|e| io_err(&out, e))?;
    Ok((bytes, out))
}

/// Checks a registry file: loads it and compares the tag index with a
/// rebuild from the declared tags.
pub fn registry_check(path: impl AsRef<Path>) -> Result<String, EngineError> {
    let reg = load_registry(path)?;
    let mut out = String::new();
    let _ = writeln!(out, "instruments = {}", reg.instrument_count());
    let _ = writeln!(out, "services = {}", reg.services().count());
    let _ = writeln!(
        out,
        "tag_index_consistent = {}",
        reg.rebuild_tag_index() == *reg.tag_index()
    );
    for (tag, ids) in reg.tag_index() {
        let _ = writeln!(out, "tag {tag} = {}", ids.iter().cloned().collect::<Vec<_>>().join(","));
    }
    Ok(out)
}

/// Lints templates of `task` (all tasks when `None`), optionally with one
/// step removed. Returns the dump, the findings and whether any is an error.
pub fn lint_templates(
    sc: &Scenario,
    task: Option<&str>,
    drop_step: Option<usize>,
) -> Result<(String, bool), EngineError> {
    use crate::compiler::{compile, LintSuite};
    let mut out = String::new();
    let mut errors = false;
    for t in sc.kb.templates().iter().filter(|t| task.is_none_or(|x| t.task == x)) {
        let mut p = t.clone();
        if let Some(i) = drop_step {
            if i < p.steps.len() {
                p.steps.remove(i);
            }
        }
        let prog = compile(&p, &sc.registry, &p.procedure_id).map_err(|e| request_err(&p.procedure_id, e))?;
        let (prog, report) = LintSuite::default()
            .run(prog, &sc.registry)
            .map_err(|e| request_err(&p.procedure_id, e))?;
        errors |= report.has_errors();
        let _ = writeln!(out, "# {} ({})", p.procedure_id, p.task);
        out.push_str(&prog.dump());
        out.push_str(&report.to_string());
    }
    Ok((out, errors))
}

/// Screens a procedure against the scenario inventory.
pub fn feasibility(sc: &Scenario, task: &str) -> Result<Vec<(String, Feasibility)>, EngineError> {
    template_lookup(&sc.kb, task)
        .iter()
        .map(|p| Ok((p.procedure_id.clone(), screen_feasibility(p, &sc.inventory)?)))
        .collect()
}

impl From<LabError> for EngineError {
    fn from(e: LabError) -> EngineError {
        EngineError::Config(e.to_string())
    }
}
