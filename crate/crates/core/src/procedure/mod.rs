//! Chemical-level representation of experiments.
//!
//! A [`Procedure`] is an ordered list of [`Step`]s over labware addresses plus
//! a parameter map. Step quantities may be literals or `$name` references
//! into that map, which is how optimizer hypotheses reach the hardware
//! program without rewriting steps.

mod inventory;
mod kb;
mod request;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use inventory::{screen_feasibility, Feasibility, InventoryError, ReagentInventory};
pub use kb::{template_lookup, TemplateKb};
pub use request::{parse_invocation, Request};

/// Reagent volumes and timings of one enzymatic synthesis cycle.
pub mod synthesis {
    pub const EXTENSION_TEMP_C: f64 = 37.0;
    pub const EXTENSION_VOLUME_UL: f64 = 10.0;
    pub const DEBLOCK_REAGENT: &str = "deblock";
    pub const DEBLOCK_VOLUME_UL: f64 = 10.0;
    pub const DEBLOCK_TEMP_C: f64 = 37.0;
    pub const DEBLOCK_MIN: f64 = 5.0;
    pub const WASH_REPEATS: u32 = 1;
    /// Parameter naming the extension incubation time.
    pub const CYCLE_TIME: &str = "cycle_time";
    /// Parameter naming the wash buffer.
    pub const BUFFER: &str = "buffer";

    pub fn extension_reagent(base: super::Base) -> String {
        format!("tdt_mix_{base}")
    }
}

/// Buffer volume consumed per wash repeat.
pub const WASH_VOLUME_UL: f64 = 50.0;

#[derive(Debug, Error, PartialEq)]
pub enum ProcedureError {
    #[error("procedure `{0}` has no steps")]
    NoSteps(String),
    #[error("step {step} references unknown parameter `{param}`")]
    UnknownParam { step: usize, param: String },
    #[error("parameter `{param}` has the wrong type for step {step}")]
    ParamType { step: usize, param: String },
    #[error("step {step}: {reason}")]
    InvalidStep { step: usize, reason: String },
    #[error("invalid objective: {0}")]
    Objective(String),
    #[error("cannot parse `{0}`")]
    Syntax(String),
    #[error("parameter `{0}` is not declared by the procedure")]
    UndeclaredOverride(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Base {
    A,
    C,
    G,
    T,
}

impl Base {
    pub const ALL: [Base; 4] = [Base::A, Base::C, Base::G, Base::T];

    pub fn to_ascii(self) -> u8 {
        match self {
            Base::A => b'A',
            Base::C => b'C',
            Base::G => b'G',
            Base::T => b'T',
        }
    }

    pub fn from_ascii(b: u8) -> Option<Base> {
        match b {
            b'A' => Some(Base::A),
            b'C' => Some(Base::C),
            b'G' => Some(Base::G),
            b'T' => Some(Base::T),
            _ => None,
        }
    }
}

impl fmt::Display for Base {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_ascii() as char)
    }
}

/// A well or tube position: `rack:A1` is row A, column 1 of `rack`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Address {
    pub rack: String,
    pub row: u8,
    pub col: u16,
}

/// Rack holding shared reagent stocks. Containers there are sources only.
pub const RESERVOIR_RACK: &str = "reservoir";

impl Address {
    pub fn new(rack: impl Into<String>, row: u8, col: u16) -> Address {
        Address {
            rack: rack.into(),
            row,
            col,
        }
    }

    pub fn is_reservoir(&self) -> bool {
        self.rack == RESERVOIR_RACK
    }
}

impl fmt::Display for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}{}", self.rack, (b'A' + self.row) as char, self.col)
    }
}

impl FromStr for Address {
    type Err = ProcedureError;

    fn from_str(s: &str) -> Result<Address, ProcedureError> {
        let bad = || ProcedureError::Syntax(s.to_string());
        let (rack, well) = s.split_once(':').ok_or_else(bad)?;
        let mut chars = well.chars();
        let row = chars.next().filter(|c| c.is_ascii_uppercase()).ok_or_else(bad)?;
        let col: u16 = chars.as_str().parse().map_err(|_| bad())?;
        if rack.is_empty() || rack.contains(char::is_whitespace) || col == 0 {
            return Err(bad());
        }
        Ok(Address::new(rack, row as u8 - b'A', col))
    }
}

impl TryFrom<String> for Address {
    type Error = ProcedureError;
    fn try_from(s: String) -> Result<Address, ProcedureError> {
        s.parse()
    }
}

impl From<Address> for String {
    fn from(a: Address) -> String {
        a.to_string()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Num(f64),
    Text(String),
}

impl ParamValue {
    pub fn as_num(&self) -> Option<f64> {
        match self {
            ParamValue::Num(v) => Some(*v),
            ParamValue::Text(_) => None,
        }
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            ParamValue::Text(t) => Some(t),
            ParamValue::Num(_) => None,
        }
    }
}

impl fmt::Display for ParamValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamValue::Num(v) => write!(f, "{v}"),
            ParamValue::Text(t) => f.write_str(t),
        }
    }
}

pub type Params = BTreeMap<String, ParamValue>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum RawScalar {
    Num(f64),
    Text(String),
}

/// Numeric step quantity: a literal or a `$param` reference.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawScalar", into = "RawScalar")]
pub enum Amount {
    Value(f64),
    Param(String),
}

impl TryFrom<RawScalar> for Amount {
    type Error = ProcedureError;
    fn try_from(raw: RawScalar) -> Result<Amount, ProcedureError> {
        match raw {
            RawScalar::Num(v) => Ok(Amount::Value(v)),
            RawScalar::Text(t) => match t.strip_prefix('$') {
                Some(name) if !name.is_empty() => Ok(Amount::Param(name.to_string())),
                _ => Err(ProcedureError::Syntax(t)),
            },
        }
    }
}

impl From<Amount> for RawScalar {
    fn from(a: Amount) -> RawScalar {
        match a {
            Amount::Value(v) => RawScalar::Num(v),
            Amount::Param(p) => RawScalar::Text(format!("${p}")),
        }
    }
}

/// Text step field: a literal or a `$param` reference.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "String", into = "String")]
pub enum Label {
    Literal(String),
    Param(String),
}

impl From<String> for Label {
    fn from(s: String) -> Label {
        match s.strip_prefix('$') {
            Some(name) => Label::Param(name.to_string()),
            None => Label::Literal(s),
        }
    }
}

impl From<Label> for String {
    fn from(l: Label) -> String {
        match l {
            Label::Literal(s) => s,
            Label::Param(p) => format!("${p}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Fluorescence,
    Sequencing,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Step {
    Transfer {
        reagent: String,
        volume: Amount,
        src: Address,
        dst: Address,
    },
    Incubate {
        temp: Amount,
        duration: Amount,
        #[serde(default)]
        sealed: bool,
        container: Address,
    },
    Measure {
        modality: Modality,
        container: Address,
    },
    Wash {
        buffer: Label,
        repeats: u32,
        container: Address,
    },
    Mix {
        container: Address,
    },
    Seal {
        container: Address,
    },
    Unseal {
        container: Address,
    },
    SynthesisCycle {
        base: Base,
        container: Address,
    },
}

impl Step {
    /// Containers the step touches, sources first.
    pub fn containers(&self) -> Vec<&Address> {
        match self {
            Step::Transfer { src, dst, .. } => vec![src, dst],
            Step::Incubate { container, .. }
            | Step::Measure { container, .. }
            | Step::Wash { container, .. }
            | Step::Mix { container }
            | Step::Seal { container }
            | Step::Unseal { container }
            | Step::SynthesisCycle { container, .. } => vec![container],
        }
    }

    pub fn containers_mut(&mut self) -> Vec<&mut Address> {
        match self {
            Step::Transfer { src, dst, .. } => vec![src, dst],
            Step::Incubate { container, .. }
            | Step::Measure { container, .. }
            | Step::Wash { container, .. }
            | Step::Mix { container }
            | Step::Seal { container }
            | Step::Unseal { container }
            | Step::SynthesisCycle { container, .. } => vec![container],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Yield,
    Time,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Goal {
    /// `metric >= value`
    Threshold {
        metric: Metric,
        value: f64,
    },
    Minimize {
        metric: Metric,
    },
}

impl fmt::Display for Goal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Goal::Threshold { value, .. } => write!(f, "yield>={value}"),
            Goal::Minimize { .. } => f.write_str("min time"),
        }
    }
}

impl FromStr for Goal {
    type Err = ProcedureError;

    fn from_str(s: &str) -> Result<Goal, ProcedureError> {
        let compact: String = s.chars().filter(|c| !c.is_whitespace()).collect();
        if compact == "mintime" {
            return Ok(Goal::Minimize { metric: Metric::Time });
        }
        let value = compact
            .strip_prefix("yield>=")
            .and_then(|v| v.parse::<f64>().ok())
            .ok_or_else(|| ProcedureError::Objective(s.to_string()))?;
        Ok(Goal::Threshold {
            metric: Metric::Yield,
            value,
        })
    }
}

/// Ordered goal list; earlier goals strictly dominate later ones.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Objective {
    goals: Vec<Goal>,
}

impl Objective {
    pub fn new(goals: Vec<Goal>) -> Result<Objective, ProcedureError> {
        if goals.is_empty() {
            return Err(ProcedureError::Objective("at least one goal required".into()));
        }
        for g in &goals {
            if let Goal::Threshold { value, .. } = g {
                if !(*value > 0.0 && *value <= 1.0) {
                    return Err(ProcedureError::Objective(format!("threshold {value} outside (0, 1]")));
                }
            }
        }
        Ok(Objective { goals })
    }

    pub fn goals(&self) -> &[Goal] {
        &self.goals
    }

    pub fn thresholds(&self) -> impl Iterator<Item = f64> + '_ {
        self.goals.iter().filter_map(|g| match g {
            Goal::Threshold { value, .. } => Some(*value),
            Goal::Minimize { .. } => None,
        })
    }

    pub fn minimizes_time(&self) -> bool {
        self.goals.iter().any(|g| matches!(g, Goal::Minimize { .. }))
    }
}

impl TryFrom<Vec<String>> for Objective {
    type Error = ProcedureError;
    fn try_from(items: Vec<String>) -> Result<Objective, ProcedureError> {
        Objective::new(items.iter().map(|s| s.parse()).collect::<Result<_, _>>()?)
    }
}

impl From<Objective> for Vec<String> {
    fn from(o: Objective) -> Vec<String> {
        o.goals.iter().map(ToString::to_string).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Procedure {
    #[serde(rename = "id")]
    pub procedure_id: String,
    pub task: String,
    #[serde(default)]
    pub params: Params,
    pub objective: Objective,
    #[serde(rename = "step")]
    pub steps: Vec<Step>,
}

impl Procedure {
    pub fn validate(&self) -> Result<(), ProcedureError> {
        if self.steps.is_empty() {
            return Err(ProcedureError::NoSteps(self.procedure_id.clone()));
        }
        for (i, step) in self.steps.iter().enumerate() {
            let invalid = |reason: &str| ProcedureError::InvalidStep {
                step: i,
                reason: reason.to_string(),
            };
            match step {
                Step::Transfer { volume, src, dst, .. } => {
                    if self.num(i, volume)? <= 0.0 {
                        return Err(invalid("volume must be positive"));
                    }
                    if src == dst {
                        return Err(invalid("source and destination coincide"));
                    }
                    if dst.is_reservoir() {
                        return Err(invalid("reservoir containers are read-only"));
                    }
                }
                Step::Incubate { temp, duration, .. } => {
                    self.num(i, temp)?;
                    if self.num(i, duration)? <= 0.0 {
                        return Err(invalid("duration must be positive"));
                    }
                }
                Step::Wash { buffer, repeats, .. } => {
                    self.text(i, buffer)?;
                    if *repeats == 0 {
                        return Err(invalid("repeats must be at least 1"));
                    }
                }
                Step::SynthesisCycle { .. } => {
                    let ct = Amount::Param(synthesis::CYCLE_TIME.into());
                    if self.num(i, &ct)? <= 0.0 {
                        return Err(invalid("cycle_time must be positive"));
                    }
                    self.text(i, &Label::Param(synthesis::BUFFER.into()))?;
                }
                Step::Measure { .. } | Step::Mix { .. } | Step::Seal { .. } | Step::Unseal { .. } => {}
            }
            if !matches!(step, Step::Transfer { .. }) && step.containers().iter().any(|c| c.is_reservoir()) {
                return Err(invalid("reservoir containers cannot be processed"));
            }
        }
        Ok(())
    }

    pub fn num(&self, step: usize, amount: &Amount) -> Result<f64, ProcedureError> {
        match amount {
            Amount::Value(v) => Ok(*v),
            Amount::Param(p) => match self.params.get(p) {
                Some(ParamValue::Num(v)) => Ok(*v),
                Some(ParamValue::Text(_)) => Err(ProcedureError::ParamType { step, param: p.clone() }),
                None => Err(ProcedureError::UnknownParam { step, param: p.clone() }),
            },
        }
    }

    pub fn text(&self, step: usize, label: &Label) -> Result<String, ProcedureError> {
        match label {
            Label::Literal(s) => Ok(s.clone()),
            Label::Param(p) => match self.params.get(p) {
                Some(ParamValue::Text(s)) => Ok(s.clone()),
                Some(ParamValue::Num(_)) => Err(ProcedureError::ParamType { step, param: p.clone() }),
                None => Err(ProcedureError::UnknownParam { step, param: p.clone() }),
            },
        }
    }

    /// Copy with some declared parameters replaced.
    pub fn with_params(&self, overrides: &Params) -> Result<Procedure, ProcedureError> {
        let mut p = self.clone();
        for (k, v) in overrides {
            match p.params.get_mut(k) {
                Some(slot) => *slot = v.clone(),
                None => return Err(ProcedureError::UndeclaredOverride(k.clone())),
            }
        }
        p.validate()?;
        Ok(p)
    }

    /// Total reagent demand per reagent name, summed over steps.
    pub fn reagent_demand(&self) -> Result<BTreeMap<String, f64>, ProcedureError> {
        let mut demand: BTreeMap<String, f64> = BTreeMap::new();
        let mut add = |name: String, qty: f64| *demand.entry(name).or_default() += qty;
        for (i, step) in self.steps.iter().enumerate() {
            match step {
                Step::Transfer { reagent, volume, .. } => add(reagent.clone(), self.num(i, volume)?),
                Step::Wash { buffer, repeats, .. } => add(self.text(i, buffer)?, WASH_VOLUME_UL * f64::from(*repeats)),
                Step::SynthesisCycle { base, .. } => {
                    let buffer = self.text(i, &Label::Param(synthesis::BUFFER.into()))?;
                    add(synthesis::extension_reagent(*base), synthesis::EXTENSION_VOLUME_UL);
                    add(synthesis::DEBLOCK_REAGENT.to_string(), synthesis::DEBLOCK_VOLUME_UL);
                    add(buffer, 2.0 * WASH_VOLUME_UL * f64::from(synthesis::WASH_REPEATS));
                }
                _ => {}
            }
        }
        Ok(demand)
    }

    /// Moves every non-reservoir container onto `rack`, keeping positions.
    pub fn relocated(&self, rack: &str) -> Procedure {
        let mut p = self.clone();
        for step in &mut p.steps {
            for addr in step.containers_mut() {
                if !addr.is_reservoir() {
                    addr.rack = rack.to_string();
                }
            }
        }
        p
    }

    /// Bases of the synthesis cycles, in step order.
    pub fn synthesized_sequence(&self) -> Vec<u8> {
        self.steps
            .iter()
            .filter_map(|s| match s {
                Step::SynthesisCycle { base, .. } => Some(base.to_ascii()),
                _ => None,
            })
            .collect()
    }

    /// Replaces the synthesis cycles with one cycle per base of `seq`, on the
    /// container of the first cycle and at its position.
    pub fn with_sequence(&self, seq: &[u8]) -> Result<Procedure, ProcedureError> {
        let first = self
            .steps
            .iter()
            .position(|s| matches!(s, Step::SynthesisCycle { .. }))
            .ok_or_else(|| ProcedureError::Syntax(format!("`{}` has no synthesis cycle", self.procedure_id)))?;
        let Step::SynthesisCycle { container, .. } = &self.steps[first] else {
            unreachable!()
        };
        let container = container.clone();
        let cycles = seq
            .iter()
            .map(|&b| {
                Base::from_ascii(b)
                    .map(|base| Step::SynthesisCycle {
                        base,
                        container: container.clone(),
                    })
                    .ok_or_else(|| ProcedureError::Syntax(format!("not a base: {:?}", b as char)))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mut p = self.clone();
        p.steps = Vec::with_capacity(self.steps.len() + seq.len());
        p.steps.extend(self.steps[..first].iter().cloned());
        p.steps.extend(cycles);
        p.steps.extend(
            self.steps[first..]
                .iter()
                .filter(|s| !matches!(s, Step::SynthesisCycle { .. }))
                .cloned(),
        );
        p.validate()?;
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn address_round_trips_through_text() {
        let a: Address = "plate:B12".parse().unwrap();
        assert_eq!(a, Address::new("plate", 1, 12));
        assert_eq!(a.to_string(), "plate:B12");
        for bad in ["plate", "plate:", ":A1", "plate:a1", "plate:A0", "plate:AX"] {
            assert!(bad.parse::<Address>().is_err(), "{bad}");
        }
    }

    #[test]
    fn objective_grammar() {
        let o = Objective::try_from(vec!["yield >= 0.98".to_string(), "min time".to_string()]).unwrap();
        assert_eq!(o.thresholds().collect::<Vec<_>>(), [0.98]);
        assert!(o.minimizes_time());
        assert!(Objective::try_from(Vec::<String>::new()).is_err());
        assert!(Objective::try_from(vec!["yield>=1.5".to_string()]).is_err());
        assert!(Objective::try_from(vec!["yield>=0".to_string()]).is_err());
        assert!(Objective::try_from(vec!["max cost".to_string()]).is_err());
    }

    fn one_transfer(volume: Amount) -> Procedure {
        Procedure {
            procedure_id: "p".into(),
            task: "t".into(),
            params: Params::from([("v".to_string(), ParamValue::Num(5.0))]),
            objective: Objective::new(vec![Goal::Minimize { metric: Metric::Time }]).unwrap(),
            steps: vec![Step::Transfer {
                reagent: "water".into(),
                volume,
                src: "reservoir:A1".parse().unwrap(),
                dst: "plate:A1".parse().unwrap(),
            }],
        }
    }

    #[test]
    fn validation_catches_bad_steps() {
        assert!(one_transfer(Amount::Param("v".into())).validate().is_ok());
        assert_eq!(
            one_transfer(Amount::Param("w".into())).validate(),
            Err(ProcedureError::UnknownParam {
                step: 0,
                param: "w".into()
            })
        );
        assert!(matches!(
            one_transfer(Amount::Value(0.0)).validate(),
            Err(ProcedureError::InvalidStep { .. })
        ));
        let mut empty = one_transfer(Amount::Value(1.0));
        empty.steps.clear();
        assert_eq!(empty.validate(), Err(ProcedureError::NoSteps("p".into())));
    }

    #[test]
    fn overrides_must_be_declared() {
        let p = one_transfer(Amount::Param("v".into()));
        let q = p
            .with_params(&Params::from([("v".to_string(), ParamValue::Num(7.0))]))
            .unwrap();
        assert_eq!(q.reagent_demand().unwrap()["water"], 7.0);
        assert_eq!(
            p.with_params(&Params::from([("zz".to_string(), ParamValue::Num(1.0))])),
            Err(ProcedureError::UndeclaredOverride("zz".into()))
        );
    }
}
