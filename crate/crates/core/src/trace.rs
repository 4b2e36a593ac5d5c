use std::io::Write;

use serde::Serialize;

use crate::error::Result;

/// One policy-iteration step: the average cost of the evaluated policy and
/// how many decision states the following improvement changed.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TraceRow {
    pub iter: usize,
    pub mu: f64,
    pub policy_changes: usize,
}

/// Writes rows as CSV with header `iter,mu,policy_changes`.
pub fn write_trace_csv<W: Write>(rows: &[TraceRow], out: W) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush()?;
    Ok(())
}
