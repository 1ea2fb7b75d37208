use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Procedure, ProcedureError};

#[derive(Debug, Error, PartialEq)]
pub enum InventoryError {
    #[error("insufficient reagent for `{request}`: {missing:?}")]
    InsufficientReagent {
        request: String,
        missing: Vec<(String, f64)>,
    },
    #[error("no reservation held by `{0}`")]
    UnknownReservation(String),
    #[error("negative stock for `{0}`")]
    NegativeStock(String),
    #[error(transparent)]
    Procedure(#[from] ProcedureError),
    #[error("malformed inventory: {0}")]
    Parse(String),
}

#[derive(Clone, Debug, PartialEq)]
pub enum Feasibility {
    Feasible,
    /// Reagents whose demand exceeds stock, with the shortfall, by name.
    Infeasible(Vec<(String, f64)>),
}

/// Reagent stock with a per-request reservation ledger.
///
/// All mutation goes through `&mut self`; callers sharing an inventory across
/// threads wrap it in a mutex so reserve/release stay totally ordered.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReagentInventory {
    stock: BTreeMap<String, f64>,
    #[serde(skip)]
    ledger: BTreeMap<String, BTreeMap<String, f64>>,
}

impl ReagentInventory {
    pub fn new(stock: BTreeMap<String, f64>) -> Result<ReagentInventory, InventoryError> {
        if let Some((name, _)) = stock.iter().find(|(_, q)| q.is_nan() || **q < 0.0) {
            return Err(InventoryError::NegativeStock(name.clone()));
        }
        Ok(ReagentInventory {
            stock,
            ledger: BTreeMap::new(),
        })
    }

    pub fn from_toml_str(text: &str) -> Result<ReagentInventory, InventoryError> {
        let raw: ReagentInventory = toml::from_str(text).map_err(|e| InventoryError::Parse(e.to_string()))?;
        ReagentInventory::new(raw.stock)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<ReagentInventory, InventoryError> {
        let path = path.as_ref();
        let text =
            std::fs::read_to_string(path).map_err(|e| InventoryError::Parse(format!("{}: {e}", path.display())))?;
        ReagentInventory::from_toml_str(&text)
    }

    pub fn available(&self, reagent: &str) -> f64 {
        self.stock.get(reagent).copied().unwrap_or(0.0)
    }

    pub fn stock(&self) -> &BTreeMap<String, f64> {
        &self.stock
    }

    pub fn ledger(&self) -> &BTreeMap<String, BTreeMap<String, f64>> {
        &self.ledger
    }

    /// Sum of all outstanding reservations per reagent.
    pub fn reserved_totals(&self) -> BTreeMap<String, f64> {
        let mut totals: BTreeMap<String, f64> = BTreeMap::new();
        for entry in self.ledger.values() {
            for (r, q) in entry {
                *totals.entry(r.clone()).or_default() += q;
            }
        }
        totals
    }

    pub fn screen(&self, p: &Procedure) -> Result<Feasibility, ProcedureError> {
        let missing: Vec<(String, f64)> = p
            .reagent_demand()?
            .into_iter()
            .filter_map(|(name, need)| {
                let have = self.available(&name);
                (need > have).then_some((name, need - have))
            })
            .collect();
        Ok(if missing.is_empty() {
            Feasibility::Feasible
        } else {
            Feasibility::Infeasible(missing)
        })
    }

    pub fn reserve(&mut self, p: &Procedure, request_id: &str) -> Result<(), InventoryError> {
        if let Feasibility::Infeasible(missing) = self.screen(p)? {
            return Err(InventoryError::InsufficientReagent {
                request: request_id.to_string(),
                missing,
            });
        }
        let entry = self.ledger.entry(request_id.to_string()).or_default();
        for (name, need) in p.reagent_demand()? {
            *self.stock.get_mut(&name).expect("screened reagent is stocked") -= need;
            *entry.entry(name).or_default() += need;
        }
        Ok(())
    }

    pub fn release(&mut self, request_id: &str) -> Result<(), InventoryError> {
        let entry = self
            .ledger
            .remove(request_id)
            .ok_or_else(|| InventoryError::UnknownReservation(request_id.to_string()))?;
        for (name, qty) in entry {
            *self.stock.entry(name).or_default() += qty;
        }
        Ok(())
    }
}

/// Feasibility screen; never mutates the inventory.
pub fn screen_feasibility(p: &Procedure, inv: &ReagentInventory) -> Result<Feasibility, ProcedureError> {
    inv.screen(p)
}
