//! Flat `key = value` config files. Flags override file entries, file
//! entries override defaults.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};

pub fn load_config(path: &Path) -> Result<HashMap<String, String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut map = HashMap::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::parse(path, idx + 1, "expected key = value"))?;
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(map)
}

/// Resolve one setting: explicit flag, then config file, then default.
pub fn resolve<T: std::str::FromStr>(
    flag: Option<T>,
    file: &HashMap<String, String>,
    key: &str,
    default: T,
) -> Result<T> {
    if let Some(v) = flag {
        return Ok(v);
    }
    match file.get(key) {
        Some(raw) => raw
            .parse()
            .map_err(|_| Error::Invalid(format!("bad config value for {key}: {raw:?}"))),
        None => Ok(default),
    }
}

/// Like [`resolve`] but without a default; `None` when unset everywhere.
pub fn resolve_opt<T: std::str::FromStr>(
    flag: Option<T>,
    file: &HashMap<String, String>,
    key: &str,
) -> Result<Option<T>> {
    if let Some(v) = flag {
        return Ok(Some(v));
    }
    match file.get(key) {
        Some(raw) => raw
            .parse()
            .map(Some)
            .map_err(|_| Error::Invalid(format!("bad config value for {key}: {raw:?}"))),
        None => Ok(None),
    }
}
