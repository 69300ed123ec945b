//! `--config FILE`: a flat JSON object whose keys are long flag names. Its
//! entries are spliced into argv right after the subcommand, ahead of the
//! user's own flags, so explicit flags win.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde_json::Value;

/// Value of `--config` in `args`, if present.
pub fn find_config(args: &[String]) -> Option<String> {
    let mut it = args.iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            return it.next().cloned();
        }
        if let Some(v) = a.strip_prefix("--config=") {
            return Some(v.to_string());
        }
    }
    None
}

/// Converts a flat JSON object into flag arguments.
pub fn config_args(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| crownbench::Error::io(path, e))
        .context("reading config file")?;
    let root: Value = serde_json::from_str(&text)
        .map_err(|e| crownbench::Error::format(path, e))
        .context("parsing config file")?;
    let Value::Object(map) = root else {
        return Err(crownbench::Error::format(path, "config must be a JSON object").into());
    };
    let mut out = Vec::new();
    for (key, value) in map {
        if key == "config" {
            bail!(crownbench::Error::Validation("config files cannot nest --config".into()));
        }
        let flag = format!("--{}", key.replace('_', "-"));
        let scalar = |v: &Value| -> Result<String> {
            Ok(match v {
                Value::String(s) => s.clone(),
                Value::Number(n) => n.to_string(),
                other => bail!(crownbench::Error::Validation(format!(
                    "config key {key:?}: unsupported value {other}"
                ))),
            })
        };
        match &value {
            Value::Null | Value::Bool(false) => {}
            Value::Bool(true) => out.push(flag),
            Value::Array(items) => {
                for item in items {
                    out.push(flag.clone());
                    out.push(scalar(item)?);
                }
            }
            v => {
                out.push(flag);
                out.push(scalar(v)?);
            }
        }
    }
    Ok(out)
}

/// Inserts config arguments after the first subcommand name in `args`.
pub fn splice(args: Vec<String>, subcommands: &[&str], extra: Vec<String>) -> Vec<String> {
    let Some(pos) = args
        .iter()
        .skip(1)
        .position(|a| subcommands.contains(&a.as_str()))
    else {
        return args;
    };
    let at = pos + 2;
    let mut out = args[..at].to_vec();
    out.extend(extra);
    out.extend_from_slice(&args[at..]);
    out
}
