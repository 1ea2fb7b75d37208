//! The simulated laboratory: yield surface, sequencing error channel and
//! outcome evaluation for executed programs.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::compiler::{bind_and_estimate, caps, compile, CompileError, LintSuite, Program};
use crate::par::{self, Execution};
use crate::procedure::{Base, ParamValue, Params, Procedure};
use crate::registry::Registry;
use crate::scheduler::{schedule, Policy, Schedule, ScheduleError};
use crate::seed;
use crate::time::Ticks;

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("invalid error channel: {0}")]
    Channel(String),
}

/// Stepwise synthesis yield as a function of the reaction conditions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct YieldSurface {
    pub base: f64,
    pub bw_buffer: f64,
    pub tween20: f64,
    pub cocl2_mid: f64,
    pub cocl2_high: f64,
    pub tdt_double: f64,
    pub terminator_double: f64,
    pub cap: f64,
    /// `(cycle_time_min, factor)` points, interpolated linearly and clamped.
    pub time_factors: Vec<(f64, f64)>,
    pub noise_sigma: f64,
}

impl Default for YieldSurface {
    fn default() -> YieldSurface {
        YieldSurface {
            base: 0.90,
            bw_buffer: 0.03,
            tween20: 0.02,
            cocl2_mid: 0.007,
            cocl2_high: 0.015,
            tdt_double: 0.01,
            terminator_double: 0.01,
            cap: 0.985,
            time_factors: vec![(10.0, 0.90), (15.0, 0.97), (20.0, 1.0)],
            noise_sigma: 0.0,
        }
    }
}

fn num(params: &Params, key: &str) -> f64 {
    params.get(key).and_then(ParamValue::as_num).unwrap_or(0.0)
}

impl YieldSurface {
    fn time_factor(&self, cycle_time: f64) -> f64 {
        let pts = &self.time_factors;
        match pts.iter().position(|&(t, _)| t >= cycle_time) {
            _ if pts.is_empty() => 1.0,
            Some(0) => pts[0].1,
            None => pts[pts.len() - 1].1,
            Some(i) => {
                let (t0, f0) = pts[i - 1];
                let (t1, f1) = pts[i];
                f0 + (f1 - f0) * (cycle_time - t0) / (t1 - t0)
            }
        }
    }

    /// Noise-free stepwise yield.
    pub fn eval(&self, params: &Params) -> f64 {
        let mut y = self.base;
        if params.get("buffer").and_then(ParamValue::as_text) == Some("bw") {
            y += self.bw_buffer;
        }
        if num(params, "tween20") >= 0.05 {
            y += self.tween20;
        }
        let cocl2 = num(params, "cocl2");
        if cocl2 >= 1.0 {
            y += self.cocl2_high;
        } else if cocl2 >= 0.5 {
            y += self.cocl2_mid;
        }
        if num(params, "tdt") >= 2.0 {
            y += self.tdt_double;
        }
        if num(params, "terminator") >= 2.0 {
            y += self.terminator_double;
        }
        let ct = params.get("cycle_time").and_then(ParamValue::as_num).unwrap_or(20.0);
        (y.min(self.cap) * self.time_factor(ct)).clamp(0.0, 1.0)
    }

    pub fn sample(&self, params: &Params, seed: u64) -> f64 {
        let y = self.eval(params);
        if self.noise_sigma <= 0.0 {
            return y;
        }
        let noise = Normal::new(0.0, self.noise_sigma).expect("finite sigma");
        (y + noise.sample(&mut seed::rng(seed, &[0x5EED]))).clamp(0.0, 1.0)
    }
}

/// Per-base event probabilities for synthesis and sequencing errors.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ErrorChannel {
    pub deletion: f64,
    pub insertion: f64,
    pub substitution: f64,
}

impl Default for ErrorChannel {
    fn default() -> ErrorChannel {
        ErrorChannel {
            deletion: 0.0235,
            insertion: 0.0025,
            substitution: 0.0012,
        }
    }
}

impl ErrorChannel {
    pub const NOISELESS: ErrorChannel = ErrorChannel {
        deletion: 0.0,
        insertion: 0.0,
        substitution: 0.0,
    };

    pub fn validate(&self) -> Result<(), SimError> {
        let ps = [self.deletion, self.insertion, self.substitution];
        if ps.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(SimError::Channel("probabilities must lie in [0, 1]".into()));
        }
        if ps.iter().sum::<f64>() > 1.0 {
            return Err(SimError::Channel("probabilities sum above 1".into()));
        }
        Ok(())
    }
}

fn random_base<R: Rng>(rng: &mut R) -> u8 {
    Base::ALL[rng.random_range(0..4)].to_ascii()
}

/// Applies the channel to `seq` with an explicit generator.
pub fn corrupt_with<R: Rng>(seq: &[u8], ch: &ErrorChannel, rng: &mut R) -> Vec<u8> {
    let mut out = Vec::with_capacity(seq.len() + 4);
    for &b in seq {
        let u: f64 = rng.random();
        if u < ch.deletion {
            continue;
        }
        if u < ch.deletion + ch.insertion {
            out.push(random_base(rng));
            out.push(b);
        } else if u < ch.deletion + ch.insertion + ch.substitution {
            let others: Vec<u8> = Base::ALL.iter().map(|x| x.to_ascii()).filter(|&x| x != b).collect();
            out.push(others[rng.random_range(0..others.len())]);
        } else {
            out.push(b);
        }
    }
    out
}

pub fn corrupt(seq: &[u8], ch: &ErrorChannel, seed: u64) -> Vec<u8> {
    corrupt_with(seq, ch, &mut seed::rng(seed, &[]))
}

/// `coverage` reads per strand, strand-major. Read `r` of strand `s` draws
/// from its own stream keyed by `(seed, s, r)`.
pub fn sequence_strands(strands: &[Vec<u8>], coverage: usize, ch: &ErrorChannel, seed: u64) -> Vec<Vec<u8>> {
    sequence_strands_with(Execution::default(), strands, coverage, ch, seed)
}

pub fn sequence_strands_with(
    exec: Execution,
    strands: &[Vec<u8>],
    coverage: usize,
    ch: &ErrorChannel,
    seed: u64,
) -> Vec<Vec<u8>> {
    par::map_range(exec, 0..strands.len() * coverage, |n| {
        let (s, r) = (n / coverage, n % coverage);
        corrupt_with(&strands[s], ch, &mut seed::rng(seed, &[s as u64, r as u64]))
    })
}

/// Everything the simulated lab needs to produce outcomes.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LabModel {
    pub surface: YieldSurface,
    pub channel: ErrorChannel,
    /// Fluorescence ground truth per request id.
    pub fluorescence: BTreeMap<String, bool>,
    /// Strands present in the sample that sequencing programs read.
    pub library: Vec<Vec<u8>>,
    pub coverage: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Outcome {
    pub yield_: Option<f64>,
    pub time_min: f64,
    pub reads: Option<Vec<Vec<u8>>>,
    pub fluorescence: Option<bool>,
}

impl Outcome {
    pub fn of(yield_: f64, time_min: f64) -> Outcome {
        Outcome {
            yield_: Some(yield_),
            time_min,
            reads: None,
            fluorescence: None,
        }
    }
}

fn is_synthesis(prog: &Program) -> bool {
    prog.invocations
        .iter()
        .any(|i| i.capability == caps::TRANSFER && i.labels.get("reagent").is_some_and(|r| r.starts_with("tdt_mix_")))
}

/// Evaluates an executed program. The schedule may cover other programs as
/// well; the outcome time is its makespan.
pub fn run(prog: &Program, schedule: &Schedule, model: &LabModel, seed: u64) -> Outcome {
    let yield_ = is_synthesis(prog).then(|| model.surface.sample(&prog.params, seed));
    let reads = (prog.count_capability(caps::SEQUENCING) > 0)
        .then(|| sequence_strands(&model.library, model.coverage.max(1), &model.channel, seed));
    let fluorescence = (prog.count_capability(caps::FLUORESCENCE) > 0)
        .then(|| model.fluorescence.get(&prog.request_id).copied().unwrap_or(false));
    Outcome {
        yield_,
        time_min: schedule.makespan.minutes(),
        reads,
        fluorescence,
    }
}

/// The hardware half of an experiment: compile, lint, bind, schedule and
/// evaluate a batch of procedures on the simulated bench.
#[derive(Clone, Debug)]
pub struct SimLab<'a> {
    pub registry: &'a Registry,
    pub model: &'a LabModel,
    pub policy: Policy,
    pub seed: u64,
    /// Programs run per candidate; outcomes are averaged over them.
    pub replicates: usize,
}

#[derive(Debug, Error)]
pub enum LabError {
    #[error(transparent)]
    Compile(#[from] CompileError),
    #[error("lint errors in `{program}`:\n{report}")]
    Lint { program: String, report: String },
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
}

#[derive(Clone, Debug)]
pub struct LabRun {
    /// Per candidate, the compiled replicate programs.
    pub programs: Vec<Vec<Program>>,
    pub schedule: Schedule,
    /// One per candidate.
    pub outcomes: Vec<Outcome>,
}

impl LabRun {
    pub fn all_programs(&self) -> Vec<Program> {
        self.programs.iter().flatten().cloned().collect()
    }
}

impl SimLab<'_> {
    /// Compiles one candidate into its replicate programs, each on its own
    /// rack named after the program's request id.
    pub fn prepare(&self, p: &Procedure, request_id: &str, release: Ticks) -> Result<Vec<Program>, LabError> {
        let suite = LintSuite::default();
        (0..self.replicates.max(1))
            .map(|r| {
                let rid = if self.replicates > 1 {
                    format!("{request_id}.r{r}")
                } else {
                    request_id.to_string()
                };
                let prog = compile(&p.relocated(&rid), self.registry, &rid)?;
                let (prog, report) = suite.run(prog, self.registry)?;
                if report.has_errors() {
                    return Err(LabError::Lint {
                        program: prog.program_id,
                        report: report.to_string(),
                    });
                }
                Ok(bind_and_estimate(prog, self.registry)?.released_at(release))
            })
            .collect()
    }

    /// Runs all candidates in one hardware session.
    pub fn execute(&self, candidates: &[(String, Procedure)], release: Ticks) -> Result<LabRun, LabError> {
        let programs = candidates
            .iter()
            .map(|(rid, p)| self.prepare(p, rid, release))
            .collect::<Result<Vec<_>, _>>()?;
        let flat: Vec<Program> = programs.iter().flatten().cloned().collect();
        let schedule = schedule(&flat, self.registry, self.policy)?;
        let mut n = 0u64;
        let outcomes = programs
            .iter()
            .map(|reps| {
                let runs: Vec<Outcome> = reps
                    .iter()
                    .map(|prog| {
                        n += 1;
                        run(prog, &schedule, self.model, seed::derive(self.seed, &[n]))
                    })
                    .collect();
                average(runs)
            })
            .collect();
        Ok(LabRun {
            programs,
            schedule,
            outcomes,
        })
    }
}

fn average(mut runs: Vec<Outcome>) -> Outcome {
    let ys: Vec<f64> = runs.iter().filter_map(|o| o.yield_).collect();
    let mut first = runs.swap_remove(0);
    if !ys.is_empty() {
        first.yield_ = Some(ys.iter().sum::<f64>() / ys.len() as f64);
    }
    first
}
