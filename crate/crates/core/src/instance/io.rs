//! Instance file format.
//!
//! ```json
//! {"J": 2, "N": 1, "lambda": [0.5, 0.7], "mu": [1.0], "t": [[3.0, 4.5]], "meta": {}}
//! ```
//!
//! `t[i][j]` is the response time of unit `i + 1` to node `j + 1`.

use std::fs;
use std::path::Path;

use serde_json::{json, Map, Value};

use super::Instance;
use crate::error::{Error, Result};

pub fn save_instance(inst: &Instance, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, to_json(inst))?;
    Ok(())
}

pub fn load_instance(path: impl AsRef<Path>) -> Result<Instance> {
    from_json(&fs::read_to_string(path)?)
}

pub fn to_json(inst: &Instance) -> String {
    let meta = match inst.meta() {
        Value::Null => Value::Object(Map::new()),
        other => other.clone(),
    };
    let doc = json!({
        "J": inst.nodes(),
        "N": inst.units(),
        "lambda": inst.arrival_rates(),
        "mu": inst.service_rates(),
        "t": inst.response_times(),
        "meta": meta,
    });
    let mut text = serde_json::to_string_pretty(&doc).expect("instance encodes");
    text.push('\n');
    text
}

pub fn from_json(text: &str) -> Result<Instance> {
    let doc: Value = serde_json::from_str(text).map_err(|e| Error::parse("<document>", e.to_string()))?;
    let obj = doc
        .as_object()
        .ok_or_else(|| Error::parse("<document>", "expected a JSON object"))?;
    for key in obj.keys() {
        if !matches!(key.as_str(), "J" | "N" | "lambda" | "mu" | "t" | "meta") {
            return Err(Error::parse(key, "unknown field"));
        }
    }
    let count = |field: &str| -> Result<usize> {
        obj.get(field)
            .ok_or_else(|| Error::parse(field, "missing"))?
            .as_u64()
            .map(|v| v as usize)
            .ok_or_else(|| Error::parse(field, "expected a non-negative integer"))
    };
    let nodes = count("J")?;
    let units = count("N")?;
    let arrival = float_vec(obj.get("lambda"), "lambda")?;
    let service = float_vec(obj.get("mu"), "mu")?;
    if arrival.len() != nodes {
        return Err(Error::parse(
            "lambda",
            format!("expected {nodes} entries, found {}", arrival.len()),
        ));
    }
    if service.len() != units {
        return Err(Error::parse(
            "mu",
            format!("expected {units} entries, found {}", service.len()),
        ));
    }
    let rows = obj
        .get("t")
        .ok_or_else(|| Error::parse("t", "missing"))?
        .as_array()
        .ok_or_else(|| Error::parse("t", "expected an array of rows"))?;
    let response = rows
        .iter()
        .enumerate()
        .map(|(i, row)| float_vec(Some(row), &format!("t[{}]", i + 1)))
        .collect::<Result<Vec<_>>>()?;
    let meta = obj.get("meta").cloned().unwrap_or(Value::Null);
    Instance::with_meta(arrival, service, response, meta)
}

fn float_vec(value: Option<&Value>, field: &str) -> Result<Vec<f64>> {
    let items = value
        .ok_or_else(|| Error::parse(field, "missing"))?
        .as_array()
        .ok_or_else(|| Error::parse(field, "expected an array of numbers"))?;
    items
        .iter()
        .enumerate()
        .map(|(k, v)| {
            v.as_f64()
                .ok_or_else(|| Error::parse(format!("{field}[{}]", k + 1), "expected a number"))
        })
        .collect()
}
