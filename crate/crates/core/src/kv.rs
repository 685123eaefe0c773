//! Flat `key = value` text files (`#` starts a comment line).

use crate::model::ConfigError;

pub fn parse(text: &str) -> Result<Vec<(String, String)>, ConfigError> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax(n + 1))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(ConfigError::Syntax(n + 1));
        }
        out.push((k.to_string(), v.to_string()));
    }
    Ok(out)
}
