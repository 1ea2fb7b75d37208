//! Closed-loop design, experiment and optimize controller.
//!
//! Outcomes are ranked lexicographically by the request objective. The loop
//! starts by running every template candidate in one consolidated session,
//! then follows one hypothesis per iteration from a pluggable proposer.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

use crate::procedure::{
    screen_feasibility, template_lookup, Feasibility, Goal, Metric, Objective, ParamValue, Params, Procedure,
    ProcedureError, ReagentInventory, Request, TemplateKb,
};
use crate::scheduler::{simulate, EventTrace};
use crate::seed;
use crate::sim_lab::{LabError, Outcome, SimLab};
use crate::time::Ticks;

#[derive(Debug, Error)]
pub enum OptimizeError {
    #[error("no template for task `{0}`")]
    UnknownTask(String),
    #[error("every candidate for `{0}` was screened out by the reagent inventory")]
    InfeasibleAllCandidates(String),
    #[error("budget must be at least one iteration")]
    ZeroBudget,
    #[error(transparent)]
    Procedure(#[from] ProcedureError),
    #[error(transparent)]
    Lab(#[from] LabError),
}

fn metric(o: &Outcome, m: Metric) -> f64 {
    match m {
        Metric::Yield => o.yield_.unwrap_or(0.0),
        Metric::Time => o.time_min,
    }
}

/// `Greater` when `a` is preferred over `b`.
pub fn lex_compare(a: &Outcome, b: &Outcome, obj: &Objective) -> Ordering {
    for goal in obj.goals() {
        let ord = match *goal {
            Goal::Threshold { metric: m, value } => {
                let (va, vb) = (metric(a, m), metric(b, m));
                match (va >= value, vb >= value) {
                    (true, false) => Ordering::Greater,
                    (false, true) => Ordering::Less,
                    (true, true) => Ordering::Equal,
                    (false, false) => va.total_cmp(&vb),
                }
            }
            Goal::Minimize { metric: m } => metric(b, m).total_cmp(&metric(a, m)),
        };
        if ord != Ordering::Equal {
            return ord;
        }
    }
    Ordering::Equal
}

/// Whether `o` meets every threshold goal.
pub fn meets_thresholds(o: &Outcome, obj: &Objective) -> bool {
    obj.goals().iter().all(|g| match *g {
        Goal::Threshold { metric: m, value } => metric(o, m) >= value,
        Goal::Minimize { .. } => true,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    pub rationale: String,
    pub deltas: Params,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Proposal {
    Try(Hypothesis),
    Exhausted,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    /// First-iteration candidate from the template knowledge base.
    Candidate,
    Improved,
    Rejected,
    HaltOnRegression,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HistoryEntry {
    pub iteration: usize,
    pub params: Params,
    pub outcome: Outcome,
    pub decision: Decision,
    pub rationale: String,
    /// Dimensions the hypothesis changed; empty for template candidates.
    pub varied: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizationState {
    pub objective: Objective,
    /// Append-only.
    pub history: Vec<HistoryEntry>,
    /// Index into `history` of the best outcome so far.
    pub frontier: Option<usize>,
    pub exhausted_dims: BTreeSet<String>,
    pub stop_reason: Option<String>,
    /// Hardware sessions in execution order: makespan and trace.
    pub sessions: Vec<(Ticks, EventTrace)>,
}

impl OptimizationState {
    pub fn new(objective: Objective) -> OptimizationState {
        OptimizationState {
            objective,
            history: Vec::new(),
            frontier: None,
            exhausted_dims: BTreeSet::new(),
            stop_reason: None,
            sessions: Vec::new(),
        }
    }

    pub fn frontier_entry(&self) -> Option<&HistoryEntry> {
        self.frontier.map(|i| &self.history[i])
    }

    pub fn tried(&self, params: &Params) -> bool {
        self.history.iter().any(|h| &h.params == params)
    }

    pub fn iterations(&self) -> usize {
        self.history.last().map_or(0, |h| h.iteration)
    }

    pub fn halted_on_regression(&self) -> bool {
        self.history.iter().any(|h| h.decision == Decision::HaltOnRegression)
    }

    /// Records an evaluation. The frontier moves only on strict improvement,
    /// so the earlier of two equal outcomes is kept.
    fn record(&mut self, entry: HistoryEntry) -> bool {
        let better = match self.frontier_entry() {
            None => true,
            Some(f) => lex_compare(&entry.outcome, &f.outcome, &self.objective) == Ordering::Greater,
        };
        self.history.push(entry);
        if better {
            self.frontier = Some(self.history.len() - 1);
        }
        better
    }

    /// One JSON object per line.
    pub fn journal_jsonl(&self) -> String {
        #[derive(Serialize)]
        struct Line<'a> {
            iteration: usize,
            params: &'a Params,
            #[serde(rename = "yield")]
            yield_: Option<f64>,
            time_min: f64,
            decision: Decision,
            rationale: &'a str,
        }
        let mut out = String::new();
        for h in &self.history {
            let line = Line {
                iteration: h.iteration,
                params: &h.params,
                yield_: h.outcome.yield_,
                time_min: h.outcome.time_min,
                decision: h.decision,
                rationale: &h.rationale,
            };
            out.push_str(&serde_json::to_string(&line).expect("journal line serializes"));
            out.push('\n');
        }
        out
    }

    pub fn journal_csv(&self) -> String {
        let keys: BTreeSet<&str> = self
            .history
            .iter()
            .flat_map(|h| h.params.keys().map(String::as_str))
            .collect();
        let mut out = String::from("iteration");
        for k in &keys {
            let _ = write!(out, ",{k}");
        }
        out.push_str(",yield,time_min,decision\n");
        for h in &self.history {
            let _ = write!(out, "{}", h.iteration);
            for k in &keys {
                match h.params.get(*k) {
                    Some(ParamValue::Num(v)) => write!(out, ",{v}"),
                    Some(ParamValue::Text(t)) => write!(out, ",{t}"),
                    None => write!(out, ","),
                }
                .expect("string write");
            }
            let y = h.outcome.yield_.map(|y| format!("{y:.6}")).unwrap_or_default();
            let d = serde_json::to_value(h.decision).expect("decision serializes");
            let _ = writeln!(out, ",{y},{},{}", h.outcome.time_min, d.as_str().unwrap_or_default());
        }
        out
    }
}

/// The plug point for hypothesis generation.
pub trait ProposerStrategy {
    fn propose(&self, state: &OptimizationState) -> Proposal;
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridDim {
    pub name: String,
    pub values: Vec<ParamValue>,
}

/// Coordinate search over a discrete grid: one dimension at a time, in
/// declaration order, trying values in order while others stay at the
/// frontier.
#[derive(Clone, Debug, PartialEq)]
pub struct CoordinateSearch {
    pub dims: Vec<GridDim>,
    /// Starting point when the history is empty.
    pub start: Params,
}

fn nums(name: &str, vs: &[f64]) -> GridDim {
    GridDim {
        name: name.to_string(),
        values: vs.iter().map(|&v| ParamValue::Num(v)).collect(),
    }
}

/// The enzymatic synthesis condition grid.
pub fn synthesis_grid() -> Vec<GridDim> {
    vec![
        GridDim {
            name: "buffer".into(),
            values: vec![ParamValue::Text("lysis".into()), ParamValue::Text("bw".into())],
        },
        nums("tween20", &[0.0, 0.05]),
        nums("cocl2", &[0.25, 0.5, 1.0]),
        nums("tdt", &[1.0, 2.0]),
        nums("terminator", &[1.0, 2.0]),
        nums("cycle_time", &[20.0, 15.0, 10.0]),
    ]
}

/// Every point of a grid on top of `base`, first dimension slowest.
pub fn grid_points(dims: &[GridDim], base: &Params) -> Vec<Params> {
    let mut points = vec![base.clone()];
    for d in dims {
        points = points
            .into_iter()
            .flat_map(|p| {
                d.values.iter().map(move |v| {
                    let mut q = p.clone();
                    q.insert(d.name.clone(), v.clone());
                    q
                })
            })
            .collect();
    }
    points
}

impl CoordinateSearch {
    pub fn new(dims: Vec<GridDim>, start: Params) -> CoordinateSearch {
        CoordinateSearch { dims, start }
    }

    pub fn synthesis(start: Params) -> CoordinateSearch {
        CoordinateSearch::new(synthesis_grid(), start)
    }
}

impl ProposerStrategy for CoordinateSearch {
    fn propose(&self, state: &OptimizationState) -> Proposal {
        let base = state.frontier_entry().map_or(&self.start, |f| &f.params);
        // Dimensions already left behind are not revisited.
        let current = state
            .history
            .iter()
            .rev()
            .flat_map(|h| h.varied.iter())
            .find_map(|v| self.dims.iter().position(|d| &d.name == v))
            .unwrap_or(0);
        for d in self.dims[current..]
            .iter()
            .filter(|d| !state.exhausted_dims.contains(&d.name))
        {
            for v in &d.values {
                if base.get(&d.name) == Some(v) {
                    continue;
                }
                let mut cand = base.clone();
                cand.insert(d.name.clone(), v.clone());
                if state.tried(&cand) {
                    continue;
                }
                let shown = match v {
                    ParamValue::Num(x) => x.to_string(),
                    ParamValue::Text(t) => t.clone(),
                };
                return Proposal::Try(Hypothesis {
                    rationale: format!("set {} to {shown}", d.name),
                    deltas: Params::from([(d.name.clone(), v.clone())]),
                });
            }
        }
        Proposal::Exhausted
    }
}

/// Default proposer: coordinate search over the synthesis grid.
pub fn propose_default(state: &OptimizationState, start: &Params) -> Proposal {
    CoordinateSearch::synthesis(start.clone()).propose(state)
}

/// Runs the loop for `req`. `lab` supplies the hardware; `kb` and `inv`
/// supply candidates and screening.
pub fn optimize_loop(
    req: &Request,
    kb: &TemplateKb,
    inv: &ReagentInventory,
    lab: &SimLab<'_>,
    proposer: &dyn ProposerStrategy,
    budget: usize,
) -> Result<(Procedure, OptimizationState), OptimizeError> {
    if budget == 0 {
        return Err(OptimizeError::ZeroBudget);
    }
    let templates = template_lookup(kb, &req.task);
    if templates.is_empty() {
        return Err(OptimizeError::UnknownTask(req.task.clone()));
    }
    let mut candidates = Vec::new();
    for t in &templates {
        let p = t.with_params(&req.params)?;
        if screen_feasibility(&p, inv)? == Feasibility::Feasible {
            candidates.push(p);
        }
    }
    if candidates.is_empty() {
        return Err(OptimizeError::InfeasibleAllCandidates(req.task.clone()));
    }
    let objective = req.objective.clone().unwrap_or_else(|| candidates[0].objective.clone());
    let mut state = OptimizationState::new(objective);
    let release = Ticks::from_minutes(req.submit_time);

    let batch: Vec<(String, Procedure)> = candidates
        .iter()
        .enumerate()
        .map(|(c, p)| (format!("{}.i1.c{c}", req.request_id), p.clone()))
        .collect();
    let first = lab.execute(&batch, release)?;
    state
        .sessions
        .push((first.schedule.makespan, simulate(&first.schedule)));
    for (p, outcome) in candidates.iter().zip(first.outcomes) {
        state.record(HistoryEntry {
            iteration: 1,
            params: p.params.clone(),
            outcome,
            decision: Decision::Candidate,
            rationale: format!("template `{}`", p.procedure_id),
            varied: Vec::new(),
        });
    }
    let best_of = |state: &OptimizationState| -> Procedure {
        let f = state.frontier_entry().expect("frontier after first iteration");
        candidates
            .iter()
            .find(|c| c.params.get("buffer") == f.params.get("buffer"))
            .unwrap_or(&candidates[0])
            .with_params(&f.params)
            .expect("frontier params are declared")
    };

    for iteration in 2..=budget {
        let frontier = state.frontier_entry().expect("frontier exists").clone();
        if meets_thresholds(&frontier.outcome, &state.objective) && !state.objective.minimizes_time() {
            state.stop_reason = Some("objective met".into());
            break;
        }
        let hyp = match proposer.propose(&state) {
            Proposal::Try(h) => h,
            Proposal::Exhausted => {
                state.stop_reason = Some("proposer exhausted".into());
                break;
            }
        };
        let proc_ = best_of(&state).with_params(&hyp.deltas)?;
        if screen_feasibility(&proc_, inv)? != Feasibility::Feasible {
            state.exhausted_dims.extend(hyp.deltas.keys().cloned());
            continue;
        }
        let lab_i = SimLab {
            seed: seed::derive(lab.seed, &[iteration as u64]),
            ..lab.clone()
        };
        let run = lab_i.execute(&[(format!("{}.i{iteration}", req.request_id), proc_.clone())], release)?;
        state.sessions.push((run.schedule.makespan, simulate(&run.schedule)));
        let outcome = run.outcomes.into_iter().next().expect("one candidate");
        let regression =
            meets_thresholds(&frontier.outcome, &state.objective) && !meets_thresholds(&outcome, &state.objective);
        let mut entry = HistoryEntry {
            iteration,
            params: proc_.params.clone(),
            outcome,
            decision: Decision::Rejected,
            rationale: hyp.rationale,
            varied: hyp.deltas.keys().cloned().collect(),
        };
        if regression {
            entry.decision = Decision::HaltOnRegression;
            state.history.push(entry);
            state.stop_reason = Some("threshold regression".into());
            break;
        }
        let better = lex_compare(&entry.outcome, &frontier.outcome, &state.objective) == Ordering::Greater;
        entry.decision = if better { Decision::Improved } else { Decision::Rejected };
        state.record(entry);
        if !better {
            state.exhausted_dims.extend(hyp.deltas.keys().cloned());
        }
    }
    if state.stop_reason.is_none() {
        state.stop_reason = Some("budget reached".into());
    }
    Ok((best_of(&state), state))
}
