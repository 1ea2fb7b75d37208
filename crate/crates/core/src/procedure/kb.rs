use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Procedure, ProcedureError};

/// Procedure templates keyed by task name, in file order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemplateKb {
    #[serde(rename = "template", default)]
    templates: Vec<Procedure>,
}

impl TemplateKb {
    pub fn new(templates: Vec<Procedure>) -> Result<TemplateKb, ProcedureError> {
        let mut ids = BTreeSet::new();
        for t in &templates {
            t.validate()?;
            if !ids.insert(t.procedure_id.as_str()) {
                return Err(ProcedureError::Syntax(format!(
                    "duplicate template id `{}`",
                    t.procedure_id
                )));
            }
        }
        Ok(TemplateKb { templates })
    }

    pub fn from_toml_str(text: &str) -> Result<TemplateKb, ProcedureError> {
        let raw: TemplateKb = toml::from_str(text).map_err(|e| ProcedureError::Syntax(e.to_string()))?;
        TemplateKb::new(raw.templates)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<TemplateKb, ProcedureError> {
        let path = path.as_ref();
        let text =
            std::fs::read_to_string(path).map_err(|e| ProcedureError::Syntax(format!("{}: {e}", path.display())))?;
        TemplateKb::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("template kb serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        std::fs::write(path, self.to_toml_string())
    }

    pub fn templates(&self) -> &[Procedure] {
        &self.templates
    }

    pub fn knows(&self, task: &str) -> bool {
        self.templates.iter().any(|t| t.task == task)
    }

    /// Archives a procedure, replacing any template with the same id.
    pub fn archive(&mut self, procedure: Procedure) -> Result<(), ProcedureError> {
        procedure.validate()?;
        match self
            .templates
            .iter_mut()
            .find(|t| t.procedure_id == procedure.procedure_id)
        {
            Some(slot) => *slot = procedure,
            None => self.templates.push(procedure),
        }
        Ok(())
    }
}

/// Every template registered under `task`, at template defaults.
pub fn template_lookup(kb: &TemplateKb, task: &str) -> Vec<Procedure> {
    kb.templates.iter().filter(|t| t.task == task).cloned().collect()
}
