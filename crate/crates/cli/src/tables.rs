//! Small CSV inputs: single columns, scored samples, hardness tables.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Deserializer};

/// One value per line. A first line that does not parse is taken as a header.
pub fn read_column<T: FromStr>(path: &Path) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        match line.parse() {
            Ok(v) => out.push(v),
            Err(_) if i == 0 => {}
            Err(e) => bail!("{}:{}: cannot parse {line:?}: {e}", path.display(), i + 1),
        }
    }
    Ok(out)
}

fn flexible_bool<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<bool, D::Error> {
    let s = String::deserialize(d)?;
    match s.trim() {
        "1" | "true" | "True" | "TRUE" => Ok(true),
        "0" | "false" | "False" | "FALSE" => Ok(false),
        other => Err(serde::de::Error::custom(format!("not a label: {other:?}"))),
    }
}

#[derive(Debug, Deserialize)]
pub struct ScoredRow {
    #[serde(default)]
    pub query: Option<u64>,
    pub score: f64,
    #[serde(deserialize_with = "flexible_bool")]
    pub label: bool,
}

/// `score,label` rows, with an optional leading `query` column.
pub fn read_scores(path: &Path) -> Result<Vec<ScoredRow>> {
    let mut rdr =
        csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    rdr.deserialize()
        .map(|r| r.with_context(|| format!("parsing {}", path.display())))
        .collect()
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut rdr =
        csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    rdr.deserialize()
        .map(|r| r.with_context(|| format!("parsing {}", path.display())))
        .collect()
}
