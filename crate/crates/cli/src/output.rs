//! File writers that read their output back before reporting success.

use std::fs;
use std::path::Path;

use dispatch_core::instance::{load_instance, save_instance};
use dispatch_core::{Error, Instance, Policy, Result};

fn mismatch(path: &Path, what: &str) -> Error {
    Error::Validation(format!("read-back of {} failed: {what}", path.display()))
}

pub fn instance(path: &Path, inst: &Instance) -> Result<()> {
    save_instance(inst, path)?;
    if &load_instance(path)? != inst {
        return Err(mismatch(path, "instance differs"));
    }
    Ok(())
}

pub fn policy(path: &Path, policy: &Policy, inst: &Instance) -> Result<()> {
    policy.save(path)?;
    if &Policy::load(path, inst)? != policy {
        return Err(mismatch(path, "policy differs"));
    }
    Ok(())
}

/// Writes CSV produced by `fill` and checks the header and row count.
pub fn csv(path: &Path, header: &[&str], rows: usize, fill: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
    let mut bytes = Vec::new();
    fill(&mut bytes)?;
    fs::write(path, &bytes)?;
    let mut reader = ::csv::Reader::from_path(path)?;
    let found: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
    if found != header {
        return Err(mismatch(path, &format!("header {found:?}, expected {header:?}")));
    }
    let count = reader.records().collect::<std::result::Result<Vec<_>, _>>()?.len();
    if count != rows {
        return Err(mismatch(path, &format!("{count} rows, expected {rows}")));
    }
    Ok(())
}
