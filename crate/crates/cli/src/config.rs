//! `--config file.json`: every key becomes the flag of the same name,
//! inserted after the subcommand unless the flag was given explicitly.

use std::collections::HashSet;
use std::ffi::OsString;
use std::fs;

use anyhow::{bail, Context, Result};
use serde_json::Value;

/// Global flags that take a value.
const GLOBAL_VALUED: [&str; 3] = ["--seed", "--threads", "--config"];
/// Subcommands whose own subcommand is the leaf.
const NESTED: [&str; 2] = ["eval", "pca"];

fn config_path(args: &[String]) -> Option<String> {
    let mut it = args.iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            return it.next().cloned();
        }
        if let Some(p) = a.strip_prefix("--config=") {
            return Some(p.to_string());
        }
    }
    None
}

/// Index just past the leaf subcommand, if there is one.
fn leaf_end(args: &[String]) -> Option<usize> {
    let mut i = 1;
    let mut depth = 0;
    while i < args.len() {
        let a = &args[i];
        if GLOBAL_VALUED.contains(&a.as_str()) {
            i += 2;
            continue;
        }
        if !a.starts_with('-') {
            if depth == 0 && NESTED.contains(&a.as_str()) {
                depth = 1;
                i += 1;
                continue;
            }
            return Some(i + 1);
        }
        i += 1;
    }
    None
}

fn scalar(v: &Value) -> Result<String> {
    Ok(match v {
        Value::String(s) => s.clone(),
        Value::Number(n) => n.to_string(),
        Value::Bool(b) => b.to_string(),
        other => bail!("unsupported config value {other}"),
    })
}

/// Rewrites `argv` with the config file's entries spliced in.
pub fn expand(argv: Vec<OsString>) -> Result<Vec<OsString>> {
    let args: Vec<String> = argv
        .iter()
        .map(|a| a.to_string_lossy().into_owned())
        .collect();
    let Some(path) = config_path(&args) else {
        return Ok(argv);
    };
    let text = fs::read_to_string(&path).with_context(|| format!("reading config {path}"))?;
    let root: Value =
        serde_json::from_str(&text).with_context(|| format!("parsing config {path}"))?;
    let Value::Object(map) = root else {
        bail!("config {path} must hold a JSON object");
    };
    let explicit: HashSet<&str> = args
        .iter()
        .filter(|a| a.starts_with("--"))
        .map(|a| a.split('=').next().unwrap_or(a))
        .collect();

    let mut extra = Vec::new();
    for (key, value) in &map {
        let flag = format!("--{}", key.replace('_', "-"));
        if flag == "--config" || explicit.contains(flag.as_str()) {
            continue;
        }
        match value {
            Value::Null | Value::Bool(false) => {}
            Value::Bool(true) => extra.push(flag),
            Value::Array(items) => {
                for item in items {
                    extra.push(flag.clone());
                    extra.push(scalar(item)?);
                }
            }
            v => {
                extra.push(flag);
                extra.push(scalar(v)?);
            }
        }
    }
    let at = leaf_end(&args).unwrap_or(argv.len());
    let mut out = argv;
    out.splice(at..at, extra.into_iter().map(OsString::from));
    Ok(out)
}
