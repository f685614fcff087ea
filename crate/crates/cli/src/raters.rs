//! Rating-table ingestion for the rater-agreement report.
//!
//! Input CSV: `case,level,rater,session,tot,gg,ret`; consensus rows carry
//! rater `consensus`, the automatic method rater `model`.

use std::fs;
use std::path::Path;

use sscore_core::pipeline::RaterRecord;

use crate::{CliError, Result};

pub const RATER_CSV_HEADER: &str = "case,level,rater,session,tot,gg,ret";

pub fn read_rater_csv(path: impl AsRef<Path>) -> Result<Vec<RaterRecord>> {
    let display = path.as_ref().display().to_string();
    let text =
        fs::read_to_string(path.as_ref()).map_err(|e| CliError::Data(format!("{display}: {e}")))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| CliError::Data(format!("{display}: empty file")))?;
    if header.trim() != RATER_CSV_HEADER {
        return Err(CliError::Data(format!(
            "{display}: unexpected header {header:?} (want {RATER_CSV_HEADER:?})"
        )));
    }
    let mut records = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 7 {
            return Err(CliError::Data(format!(
                "{display}:{}: expected 7 fields, got {}",
                lineno + 2,
                f.len()
            )));
        }
        let err = |what: &str, e: &dyn std::fmt::Display| {
            CliError::Data(format!("{display}:{}: {what}: {e}", lineno + 2))
        };
        let level = f[1].parse::<usize>().map_err(|e| err("level", &e))?;
        if !(1..=5).contains(&level) {
            return Err(CliError::Data(format!(
                "{display}:{}: level must be 1..=5, got {level}",
                lineno + 2
            )));
        }
        records.push(RaterRecord {
            case_id: f[0].to_string(),
            level,
            rater: f[2].to_string(),
            session: f[3].parse().map_err(|e| err("session", &e))?,
            scores: [
                f[4].parse().map_err(|e| err("tot", &e))?,
                f[5].parse().map_err(|e| err("gg", &e))?,
                f[6].parse().map_err(|e| err("ret", &e))?,
            ],
        });
    }
    if records.is_empty() {
        return Err(CliError::Data(format!("{display}: no rating rows")));
    }
    Ok(records)
}
