use super::{Objective, ParamValue, Params, ProcedureError};

/// A user request: a known task name, parameter overrides and an objective.
#[derive(Clone, Debug, PartialEq)]
pub struct Request {
    pub request_id: String,
    pub user_id: String,
    pub task: String,
    pub params: Params,
    pub data_payload: Option<Vec<u8>>,
    /// Overrides the template objective when set.
    pub objective: Option<Objective>,
    /// Minutes after scenario start.
    pub submit_time: f64,
}

impl Request {
    /// Builds a request from `task(param=value, ...)` text.
    pub fn parse(
        request_id: impl Into<String>,
        user_id: impl Into<String>,
        text: &str,
        submit_time: f64,
    ) -> Result<Request, ProcedureError> {
        let (task, params) = parse_invocation(text)?;
        Ok(Request {
            request_id: request_id.into(),
            user_id: user_id.into(),
            task,
            params,
            data_payload: None,
            objective: None,
            submit_time,
        })
    }
}

fn is_ident(s: &str) -> bool {
    !s.is_empty()
        && s.chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.' || c == '-')
}

/// Parses `task` or `task(name=value, ...)`. Values that parse as numbers
/// become numeric; anything else must be a bare identifier.
pub fn parse_invocation(text: &str) -> Result<(String, Params), ProcedureError> {
    let bad = || ProcedureError::Syntax(text.to_string());
    let text = text.trim();
    let (task, args) = match text.find('(') {
        None => (text, ""),
        Some(open) => {
            let inner = text[open + 1..].strip_suffix(')').ok_or_else(bad)?;
            (text[..open].trim(), inner)
        }
    };
    if !is_ident(task) {
        return Err(bad());
    }
    let mut params = Params::new();
    for arg in args.split(',').map(str::trim).filter(|a| !a.is_empty()) {
        let (name, value) = arg.split_once('=').ok_or_else(bad)?;
        let (name, value) = (name.trim(), value.trim());
        if !is_ident(name) || !is_ident(value) {
            return Err(bad());
        }
        let value = match value.parse::<f64>() {
            Ok(v) if v.is_finite() => ParamValue::Num(v),
            _ => ParamValue::Text(value.to_string()),
        };
        if params.insert(name.to_string(), value).is_some() {
            return Err(bad());
        }
    }
    Ok((task.to_string(), params))
}
