//! Run configuration files, CSV output and the built-in verification suites.

mod config;
pub mod verify;

pub use config::{apply_override, parse_config, parse_config_with_overrides, render_config};
pub use verify::{verify, SuiteReport, VerifyOptions};

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::simulator::RunResult;

pub const CSV_HEADER: &str = "scheme,delay_profile,snr_db,bits,errors,ber";

/// CSV text for a run: rows sorted by scheme, then SNR.
pub fn csv_string(result: &RunResult) -> Result<String> {
    if result.points.is_empty() {
        return Err(Error::EmptyMeasurement("no BER points to write".into()));
    }
    let mut rows: Vec<_> = result.points.iter().collect();
    rows.sort_by(|a, b| {
        a.scheme
            .label()
            .cmp(b.scheme.label())
            .then(a.snr_db.total_cmp(&b.snr_db))
    });
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for p in rows {
        // `{:?}` on f64 prints the shortest representation that round-trips.
        let _ = writeln!(
            out,
            "{},{},{:?},{},{},{:?}",
            p.scheme, p.delay_profile, p.snr_db, p.bits_sent, p.bit_errors, p.ber
        );
    }
    Ok(out)
}

pub fn emit_csv(result: &RunResult, path: &Path) -> Result<()> {
    let text = csv_string(result)?;
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    fs::write(path, text)?;
    Ok(())
}
