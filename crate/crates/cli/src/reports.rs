//! CSV emission for predictions, reports, loss logs and plot data.
//!
//! All floats are written with Rust's shortest-roundtrip formatting, so a
//! deterministic run produces bitwise-identical files.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use sscore_core::nnreg::{EpochLoss, Split};
use sscore_core::pipeline::{LevelRow, LevelSummary, PatternSummary, RaterReportRow, SliceRow};

use crate::{CliError, Result};

pub const SLICE_PRED_HEADER: &str =
    "case_id,fold,level,tot_truth,gg_truth,ret_truth,tot_pred,gg_pred,ret_pred,tot_grade,gg_grade,ret_grade";

pub fn write_slice_predictions(rows: &[SliceRow], path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::from(SLICE_PRED_HEADER);
    out.push('\n');
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.case_id,
            r.fold,
            r.level,
            r.truth[0],
            r.truth[1],
            r.truth[2],
            r.pred[0],
            r.pred[1],
            r.pred[2],
            r.pred_grades[0],
            r.pred_grades[1],
            r.pred_grades[2]
        )
        .expect("string write");
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_slice_predictions(path: impl AsRef<Path>) -> Result<Vec<SliceRow>> {
    let display = path.as_ref().display().to_string();
    let text =
        fs::read_to_string(path.as_ref()).map_err(|e| CliError::Data(format!("{display}: {e}")))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| CliError::Data(format!("{display}: empty file")))?;
    if header.trim() != SLICE_PRED_HEADER {
        return Err(CliError::Data(format!(
            "{display}: unexpected header {header:?}"
        )));
    }
    let mut rows = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 12 {
            return Err(CliError::Data(format!(
                "{display}:{}: expected 12 fields, got {}",
                lineno + 2,
                f.len()
            )));
        }
        let err = |what: &str, e: &dyn std::fmt::Display| {
            CliError::Data(format!("{display}:{}: {what}: {e}", lineno + 2))
        };
        let pf = |i: usize, what: &str| -> Result<f64> {
            f[i].parse::<f64>().map_err(|e| err(what, &e))
        };
        rows.push(SliceRow {
            case_id: f[0].to_string(),
            fold: f[1].parse().map_err(|e| err("fold", &e))?,
            level: f[2].parse().map_err(|e| err("level", &e))?,
            truth: [pf(3, "tot_truth")?, pf(4, "gg_truth")?, pf(5, "ret_truth")?],
            pred: [pf(6, "tot_pred")?, pf(7, "gg_pred")?, pf(8, "ret_pred")?],
            pred_grades: [
                f[9].parse().map_err(|e| err("tot_grade", &e))?,
                f[10].parse().map_err(|e| err("gg_grade", &e))?,
                f[11].parse().map_err(|e| err("ret_grade", &e))?,
            ],
        });
    }
    Ok(rows)
}

pub const LEVEL_PRED_HEADER: &str = "case_id,fold,level,truth_index,pred_index";

pub fn write_level_predictions(rows: &[LevelRow], path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::from(LEVEL_PRED_HEADER);
    out.push('\n');
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.case_id, r.fold, r.level, r.truth_index, r.pred_index
        )
        .expect("string write");
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_level_predictions(path: impl AsRef<Path>) -> Result<Vec<LevelRow>> {
    let display = path.as_ref().display().to_string();
    let text =
        fs::read_to_string(path.as_ref()).map_err(|e| CliError::Data(format!("{display}: {e}")))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| CliError::Data(format!("{display}: empty file")))?;
    if header.trim() != LEVEL_PRED_HEADER {
        return Err(CliError::Data(format!(
            "{display}: unexpected header {header:?}"
        )));
    }
    let mut rows = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(CliError::Data(format!(
                "{display}:{}: expected 5 fields, got {}",
                lineno + 2,
                f.len()
            )));
        }
        let err = |what: &str, e: &dyn std::fmt::Display| {
            CliError::Data(format!("{display}:{}: {what}: {e}", lineno + 2))
        };
        rows.push(LevelRow {
            case_id: f[0].to_string(),
            fold: f[1].parse().map_err(|e| err("fold", &e))?,
            level: f[2].parse().map_err(|e| err("level", &e))?,
            truth_index: f[3].parse().map_err(|e| err("truth_index", &e))?,
            pred_index: f[4].parse().map_err(|e| err("pred_index", &e))?,
        });
    }
    Ok(rows)
}

pub const PATTERN_REPORT_HEADER: &str =
    "pattern,mae,mae_std,wk,icc,ba_mean,ba_low,ba_high,slope,intercept,wilcoxon_p";

/// Score report: one row per pattern in TOT, GG, RET order.
pub fn write_pattern_report(rows: &[PatternSummary], path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::from(PATTERN_REPORT_HEADER);
    out.push('\n');
    for r in rows {
        let wp = r.wilcoxon_p.map(|p| p.to_string()).unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.pattern.name(),
            r.mae,
            r.mae_std,
            r.wk,
            r.icc,
            r.ba_mean,
            r.ba_low,
            r.ba_high,
            r.slope,
            r.intercept,
            wp
        )
        .expect("string write");
    }
    fs::write(path, out)?;
    Ok(())
}

pub const LEVEL_REPORT_HEADER: &str = "level,mae,mae_std,icc";

/// Level report: one row per clinical level 1..=5.
pub fn write_level_report(rows: &[LevelSummary], path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::from(LEVEL_REPORT_HEADER);
    out.push('\n');
    for r in rows {
        writeln!(out, "{},{},{},{}", r.level, r.mae, r.mae_std, r.icc).expect("string write");
    }
    fs::write(path, out)?;
    Ok(())
}

pub const LOSS_LOG_HEADER: &str = "epoch,split,mse,mae";

pub fn write_loss_log(rows: &[EpochLoss], path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::from(LOSS_LOG_HEADER);
    out.push('\n');
    for r in rows {
        writeln!(out, "{},{},{},{}", r.epoch, r.split.as_str(), r.mse, r.mae)
            .expect("string write");
    }
    fs::write(path, out)?;
    Ok(())
}

/// Loss log reader (used to verify emitted logs).
pub fn read_loss_log(path: impl AsRef<Path>) -> Result<Vec<EpochLoss>> {
    let display = path.as_ref().display().to_string();
    let text =
        fs::read_to_string(path.as_ref()).map_err(|e| CliError::Data(format!("{display}: {e}")))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| CliError::Data(format!("{display}: empty file")))?;
    if header.trim() != LOSS_LOG_HEADER {
        return Err(CliError::Data(format!(
            "{display}: unexpected header {header:?}"
        )));
    }
    let mut rows = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 4 {
            return Err(CliError::Data(format!(
                "{display}:{}: expected 4 fields",
                lineno + 2
            )));
        }
        let err = |what: &str, e: &dyn std::fmt::Display| {
            CliError::Data(format!("{display}:{}: {what}: {e}", lineno + 2))
        };
        let split = match f[1] {
            "train" => Split::Train,
            "val" => Split::Validation,
            other => return Err(err("split", &format!("unknown split {other:?}"))),
        };
        rows.push(EpochLoss {
            epoch: f[0].parse().map_err(|e| err("epoch", &e))?,
            split,
            mse: f[2].parse().map_err(|e| err("mse", &e))?,
            mae: f[3].parse().map_err(|e| err("mae", &e))?,
        });
    }
    Ok(rows)
}

/// Bland-Altman plot data: x = pair mean, y = difference (pred - truth).
pub fn write_ba_csv(pairs: &[(f64, f64)], path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::from("mean,diff\n");
    for (m, d) in pairs {
        writeln!(out, "{m},{d}").expect("string write");
    }
    fs::write(path, out)?;
    Ok(())
}

/// Correlation plot data: x = truth, y = prediction.
pub fn write_corr_csv(pairs: &[(f64, f64)], path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::from("truth,pred\n");
    for (t, p) in pairs {
        writeln!(out, "{t},{p}").expect("string write");
    }
    fs::write(path, out)?;
    Ok(())
}

pub const RATER_REPORT_HEADER: &str = "rater,session,tot_mae,tot_mae_std,tot_wk,tot_icc,gg_mae,gg_mae_std,gg_wk,gg_icc,ret_mae,ret_mae_std,ret_wk,ret_icc";

/// Rater-vs-consensus report: MAE (STD), WK, ICC per pattern in TOT, GG, RET
/// order; one row per rater session, the model last.
pub fn write_rater_report(rows: &[RaterReportRow], path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::from(RATER_REPORT_HEADER);
    out.push('\n');
    for r in rows {
        write!(out, "{},{}", r.rater, r.session).expect("string write");
        for p in &r.per_pattern {
            write!(out, ",{},{},{},{}", p.mae, p.mae_std, p.wk, p.icc).expect("string write");
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}
