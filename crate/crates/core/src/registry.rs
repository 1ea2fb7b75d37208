//! Instrument registry: instruments, their atomic services and capability tags.
//!
//! A registry is immutable once built. Services are addressed as
//! `<instrument_id>.<name>` and every query returns them in id-ascending order.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::time::Ticks;

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("cannot read `{path}`: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed registry: {0}")]
    Parse(String),
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error("registry declares no instruments")]
    EmptyRegistry,
    #[error("invalid instrument `{id}`: {reason}")]
    Invalid { id: String, reason: String },
    #[error("unknown service `{0}`")]
    UnknownService(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    Temperature,
    Duration,
    Volume,
    Well,
    Count,
}

impl fmt::Display for ParamKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let unit = match self {
            ParamKind::Temperature => "°C",
            ParamKind::Duration => "min",
            ParamKind::Volume => "µL",
            ParamKind::Well => "well",
            ParamKind::Count => "count",
        };
        f.write_str(unit)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub kind: ParamKind,
    pub min: f64,
    pub max: f64,
}

impl ParamSpec {
    pub fn accepts(&self, value: f64) -> bool {
        value >= self.min && value <= self.max
    }
}

/// `base_min + per_unit_min * quantity`, where the quantity is read from the
/// invocation parameter named by `quantity`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DurationModel {
    #[serde(rename = "base")]
    pub base_min: f64,
    #[serde(rename = "per_unit", default)]
    pub per_unit_min: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quantity: Option<String>,
}

impl DurationModel {
    pub fn minutes(&self, params: &BTreeMap<String, f64>) -> f64 {
        let qty = self
            .quantity
            .as_ref()
            .and_then(|q| params.get(q))
            .copied()
            .unwrap_or(0.0);
        self.base_min + self.per_unit_min * qty
    }

    /// Duration in ticks; never shorter than one tick.
    pub fn ticks(&self, params: &BTreeMap<String, f64>) -> Ticks {
        Ticks::from_minutes(self.minutes(params)).max(Ticks(1))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AtomicService {
    pub service_id: String,
    pub instrument_id: String,
    pub name: String,
    pub description: String,
    pub params_schema: Vec<ParamSpec>,
    pub capability_tags: BTreeSet<String>,
    pub duration_model: DurationModel,
}

impl AtomicService {
    pub fn param(&self, name: &str) -> Option<&ParamSpec> {
        self.params_schema.iter().find(|p| p.name == name)
    }

    pub fn has_tag(&self, tag: &str) -> bool {
        self.capability_tags.contains(tag)
    }

    /// First parameter the schema rejects, if any. Parameters the schema does
    /// not declare are rejected too.
    pub fn rejected_param<'a>(&self, params: &'a BTreeMap<String, f64>) -> Option<&'a str> {
        params.iter().find_map(|(name, &value)| match self.param(name) {
            Some(spec) if spec.accepts(value) => None,
            _ => Some(name.as_str()),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Instrument {
    pub instrument_id: String,
    pub kind: String,
    pub services: Vec<AtomicService>,
    pub channels: u32,
    pub exclusive: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Registry {
    instruments: BTreeMap<String, Instrument>,
    tag_index: BTreeMap<String, BTreeSet<String>>,
    service_index: BTreeMap<String, (String, usize)>,
}

impl Registry {
    pub fn new(instruments: Vec<Instrument>) -> Result<Registry, RegistryError> {
        if instruments.is_empty() {
            return Err(RegistryError::EmptyRegistry);
        }
        let mut by_id = BTreeMap::new();
        let mut service_index = BTreeMap::new();
        for inst in instruments {
            validate_instrument(&inst)?;
            for (i, svc) in inst.services.iter().enumerate() {
                if service_index
                    .insert(svc.service_id.clone(), (inst.instrument_id.clone(), i))
                    .is_some()
                {
                    return Err(RegistryError::DuplicateId(svc.service_id.clone()));
                }
            }
            let id = inst.instrument_id.clone();
            if by_id.insert(id.clone(), inst).is_some() {
                return Err(RegistryError::DuplicateId(id));
            }
        }
        let tag_index = build_tag_index(by_id.values());
        Ok(Registry {
            instruments: by_id,
            tag_index,
            service_index,
        })
    }

    pub fn from_toml_str(text: &str) -> Result<Registry, RegistryError> {
        let raw: RawRegistry = toml::from_str(text).map_err(|e| RegistryError::Parse(e.to_string()))?;
        let mut instruments = Vec::with_capacity(raw.instrument.len());
        for ri in raw.instrument {
            let services = ri
                .service
                .into_iter()
                .map(|rs| AtomicService {
                    service_id: format!("{}.{}", ri.id, rs.name),
                    instrument_id: ri.id.clone(),
                    name: rs.name,
                    description: rs.description,
                    params_schema: rs.param,
                    capability_tags: rs.tags.into_iter().collect(),
                    duration_model: rs.duration,
                })
                .collect();
            instruments.push(Instrument {
                instrument_id: ri.id,
                kind: ri.kind,
                services,
                channels: ri.channels,
                exclusive: ri.exclusive,
            });
        }
        Registry::new(instruments)
    }

    pub fn to_toml_string(&self) -> String {
        let raw = RawRegistry {
            instrument: self
                .instruments
                .values()
                .map(|inst| RawInstrument {
                    id: inst.instrument_id.clone(),
                    kind: inst.kind.clone(),
                    channels: inst.channels,
                    exclusive: inst.exclusive,
                    service: inst
                        .services
                        .iter()
                        .map(|s| RawService {
                            name: s.name.clone(),
                            description: s.description.clone(),
                            tags: s.capability_tags.iter().cloned().collect(),
                            duration: s.duration_model.clone(),
                            param: s.params_schema.clone(),
                        })
                        .collect(),
                })
                .collect(),
        };
        toml::to_string(&raw).expect("registry serializes")
    }

    pub fn instruments(&self) -> impl Iterator<Item = &Instrument> {
        self.instruments.values()
    }

    pub fn instrument(&self, id: &str) -> Option<&Instrument> {
        self.instruments.get(id)
    }

    pub fn instrument_count(&self) -> usize {
        self.instruments.len()
    }

    pub fn service(&self, service_id: &str) -> Option<&AtomicService> {
        let (inst, idx) = self.service_index.get(service_id)?;
        self.instruments.get(inst).map(|i| &i.services[*idx])
    }

    /// All services in id-ascending order.
    pub fn services(&self) -> impl Iterator<Item = &AtomicService> {
        self.service_index
            .keys()
            .map(move |id| self.service(id).expect("indexed service exists"))
    }

    pub fn tag_index(&self) -> &BTreeMap<String, BTreeSet<String>> {
        &self.tag_index
    }

    /// Recomputes the tag index from the instruments; equal to
    /// [`Registry::tag_index`] for every well-formed registry.
    pub fn rebuild_tag_index(&self) -> BTreeMap<String, BTreeSet<String>> {
        build_tag_index(self.instruments.values())
    }

    pub fn services_with_capability(&self, tag: &str) -> Vec<&AtomicService> {
        self.tag_index
            .get(tag)
            .map(|ids| ids.iter().filter_map(|id| self.service(id)).collect())
            .unwrap_or_default()
    }

    /// Services, other than `service_id` itself, whose tags are a superset of
    /// its tags.
    pub fn equivalents(&self, service_id: &str) -> Result<Vec<&AtomicService>, RegistryError> {
        let base = self
            .service(service_id)
            .ok_or_else(|| RegistryError::UnknownService(service_id.to_string()))?;
        Ok(self
            .services()
            .filter(|s| s.service_id != base.service_id)
            .filter(|s| base.capability_tags.is_subset(&s.capability_tags))
            .collect())
    }

    /// Widest channel count among liquid-transfer instruments (1 when none).
    pub fn max_transfer_channels(&self) -> u32 {
        self.services_with_capability(crate::compiler::caps::TRANSFER)
            .iter()
            .filter_map(|s| self.instrument(&s.instrument_id))
            .map(|i| i.channels)
            .max()
            .unwrap_or(1)
    }
}

pub fn load_registry(path: impl AsRef<Path>) -> Result<Registry, RegistryError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| RegistryError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Registry::from_toml_str(&text)
}

fn build_tag_index<'a>(instruments: impl Iterator<Item = &'a Instrument>) -> BTreeMap<String, BTreeSet<String>> {
    let mut index: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for svc in instruments.flat_map(|i| i.services.iter()) {
        for tag in &svc.capability_tags {
            index.entry(tag.clone()).or_default().insert(svc.service_id.clone());
        }
    }
    index
}

fn validate_instrument(inst: &Instrument) -> Result<(), RegistryError> {
    let invalid = |reason: String| RegistryError::Invalid {
        id: inst.instrument_id.clone(),
        reason,
    };
    if inst.instrument_id.is_empty() {
        return Err(invalid("empty instrument id".into()));
    }
    if inst.channels == 0 {
        return Err(invalid("channels must be at least 1".into()));
    }
    if inst.services.is_empty() {
        return Err(invalid("no services".into()));
    }
    for svc in &inst.services {
        if svc.instrument_id != inst.instrument_id {
            return Err(invalid(format!(
                "service `{}` references instrument `{}`",
                svc.service_id, svc.instrument_id
            )));
        }
        if svc.capability_tags.is_empty() {
            return Err(invalid(format!("service `{}` has no capability tags", svc.service_id)));
        }
        let mut seen = BTreeSet::new();
        for p in &svc.params_schema {
            if p.min.is_nan() || p.max.is_nan() || p.min > p.max {
                return Err(invalid(format!(
                    "parameter `{}` of `{}` has an empty range",
                    p.name, svc.service_id
                )));
            }
            if !seen.insert(p.name.as_str()) {
                return Err(RegistryError::DuplicateId(format!("{}:{}", svc.service_id, p.name)));
            }
        }
        let d = &svc.duration_model;
        if !(d.base_min >= 0.0 && d.per_unit_min >= 0.0) {
            return Err(invalid(format!("negative duration model on `{}`", svc.service_id)));
        }
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRegistry {
    #[serde(default)]
    instrument: Vec<RawInstrument>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInstrument {
    id: String,
    kind: String,
    #[serde(default = "one")]
    channels: u32,
    #[serde(default = "yes")]
    exclusive: bool,
    #[serde(default)]
    service: Vec<RawService>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawService {
    name: String,
    #[serde(default)]
    description: String,
    tags: Vec<String>,
    duration: DurationModel,
    #[serde(default)]
    param: Vec<ParamSpec>,
}

fn one() -> u32 {
    1
}

fn yes() -> bool {
    true
}
