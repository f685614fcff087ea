//! On-disk slice datasets and level annotations.
//!
//! Dataset CSV: one row per slice, `case_id,level,slice_path,tot,gg,ret`
//! with integer grades and slice paths relative to the CSV. Level CSV:
//! `case_id,level,slice_index,world_z`, one row per (case, clinical level).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use sscore_core::imagecore::Slice;
use sscore_core::sampling::LevelAnnotation;
use sscore_core::synth::{Grade, GradeTriple};

use crate::volfile;
use crate::{CliError, Result};

/// Slice dataset row before the pixels are loaded.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetRow {
    pub case_id: String,
    pub level: usize,
    pub slice_path: PathBuf,
    pub grades: GradeTriple,
}

/// A loaded dataset row.
#[derive(Debug, Clone)]
pub struct LoadedSlice {
    pub case_id: String,
    pub level: usize,
    pub slice: Slice,
    pub grades: GradeTriple,
}

pub const DATASET_CSV_HEADER: &str = "case_id,level,slice_path,tot,gg,ret";

pub fn write_dataset_csv(rows: &[DatasetRow], path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::from(DATASET_CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.case_id,
            r.level,
            r.slice_path.display(),
            r.grades.tot.value(),
            r.grades.gg.value(),
            r.grades.ret.value()
        ));
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_dataset_csv(path: impl AsRef<Path>) -> Result<Vec<DatasetRow>> {
    let display = path.as_ref().display().to_string();
    let text =
        fs::read_to_string(path.as_ref()).map_err(|e| CliError::Data(format!("{display}: {e}")))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| CliError::Data(format!("{display}: empty file")))?;
    if header.trim() != DATASET_CSV_HEADER {
        return Err(CliError::Data(format!(
            "{display}: unexpected header {header:?} (want {DATASET_CSV_HEADER:?})"
        )));
    }
    let mut rows = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 {
            return Err(CliError::Data(format!(
                "{display}:{}: expected 6 fields, got {}",
                lineno + 2,
                f.len()
            )));
        }
        let ctx = |what: &str, e: &dyn std::fmt::Display| {
            CliError::Data(format!("{display}:{}: {what}: {e}", lineno + 2))
        };
        let level = f[1].parse::<usize>().map_err(|e| ctx("level", &e))?;
        if !(1..=5).contains(&level) {
            return Err(CliError::Data(format!(
                "{display}:{}: level must be 1..=5, got {level}",
                lineno + 2
            )));
        }
        let grade = |s: &str, what: &str| -> Result<Grade> {
            let v = s.parse::<u8>().map_err(|e| ctx(what, &e))?;
            Grade::new(v).map_err(|e| ctx(what, &e))
        };
        rows.push(DatasetRow {
            case_id: f[0].to_string(),
            level,
            slice_path: PathBuf::from(f[2]),
            grades: GradeTriple {
                tot: grade(f[3], "tot")?,
                gg: grade(f[4], "gg")?,
                ret: grade(f[5], "ret")?,
            },
        });
    }
    if rows.is_empty() {
        return Err(CliError::Data(format!("{display}: no dataset rows")));
    }
    Ok(rows)
}

/// Load every slice referenced by a dataset CSV (paths relative to the CSV).
pub fn load_dataset(csv_path: impl AsRef<Path>) -> Result<Vec<LoadedSlice>> {
    let csv_path = csv_path.as_ref();
    let base = csv_path.parent().unwrap_or_else(|| Path::new("."));
    read_dataset_csv(csv_path)?
        .into_iter()
        .map(|row| {
            let slice = volfile::read_slice(base.join(&row.slice_path))?;
            Ok(LoadedSlice {
                case_id: row.case_id,
                level: row.level,
                slice,
                grades: row.grades,
            })
        })
        .collect()
}

pub const LEVELS_CSV_HEADER: &str = "case_id,level,slice_index,world_z";

/// One level annotation row per (case, clinical level), most caudal = 5.
pub fn write_levels_csv(
    entries: &[(String, LevelAnnotation, f64, f64)], // (case, levels, origin_z, spacing_z)
    path: impl AsRef<Path>,
) -> Result<()> {
    let mut out = String::from(LEVELS_CSV_HEADER);
    out.push('\n');
    for (case, levels, origin_z, spacing_z) in entries {
        for k in 1..=5usize {
            let idx = levels.level(k);
            out.push_str(&format!(
                "{case},{k},{idx},{}\n",
                origin_z + idx * spacing_z
            ));
        }
    }
    fs::write(path, out)?;
    Ok(())
}

/// Parse a levels CSV into per-case annotations. `depth` bounds the indices.
pub fn read_levels_csv(
    path: impl AsRef<Path>,
    depth: usize,
) -> Result<BTreeMap<String, LevelAnnotation>> {
    let display = path.as_ref().display().to_string();
    let text =
        fs::read_to_string(path.as_ref()).map_err(|e| CliError::Data(format!("{display}: {e}")))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| CliError::Data(format!("{display}: empty file")))?;
    if header.trim() != LEVELS_CSV_HEADER {
        return Err(CliError::Data(format!(
            "{display}: unexpected header {header:?} (want {LEVELS_CSV_HEADER:?})"
        )));
    }
    let mut raw: BTreeMap<String, [Option<f64>; 5]> = BTreeMap::new();
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 4 {
            return Err(CliError::Data(format!(
                "{display}:{}: expected 4 fields, got {}",
                lineno + 2,
                f.len()
            )));
        }
        let level = f[1].parse::<usize>().map_err(|e| {
            CliError::Data(format!("{display}:{}: level: {e}", lineno + 2))
        })?;
        if !(1..=5).contains(&level) {
            return Err(CliError::Data(format!(
                "{display}:{}: level must be 1..=5, got {level}",
                lineno + 2
            )));
        }
        let idx = f[2].parse::<f64>().map_err(|e| {
            CliError::Data(format!("{display}:{}: slice_index: {e}", lineno + 2))
        })?;
        let slot = &mut raw.entry(f[0].to_string()).or_insert([None; 5])[level - 1];
        if slot.is_some() {
            return Err(CliError::Data(format!(
                "{display}:{}: duplicate level {level} for case {}",
                lineno + 2,
                f[0]
            )));
        }
        *slot = Some(idx);
    }
    let mut out = BTreeMap::new();
    for (case, levels) in raw {
        let mut slices = [0.0f64; 5];
        for k in 1..=5usize {
            slices[5 - k] = levels[k - 1].ok_or_else(|| {
                CliError::Data(format!("{display}: case {case} is missing level {k}"))
            })?;
        }
        let ann = LevelAnnotation::new(slices, depth)
            .map_err(|e| CliError::Data(format!("{display}: case {case}: {e}")))?;
        out.insert(case, ann);
    }
    if out.is_empty() {
        return Err(CliError::Data(format!("{display}: no level rows")));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn triple(tot: u8, gg: u8, ret: u8) -> GradeTriple {
        GradeTriple {
            tot: Grade::new(tot).unwrap(),
            gg: Grade::new(gg).unwrap(),
            ret: Grade::new(ret).unwrap(),
        }
    }

    #[test]
    fn dataset_csv_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let rows = vec![
            DatasetRow {
                case_id: "case0000".into(),
                level: 1,
                slice_path: "slices/case0000_l1.mhd".into(),
                grades: triple(25, 10, 20),
            },
            DatasetRow {
                case_id: "case0000".into(),
                level: 5,
                slice_path: "slices/case0000_l5.mhd".into(),
                grades: triple(0, 0, 0),
            },
        ];
        let p = dir.path().join("dataset.csv");
        write_dataset_csv(&rows, &p).unwrap();
        let back = read_dataset_csv(&p).unwrap();
        assert_eq!(back, rows);
    }

    #[test]
    fn dataset_csv_rejects_bad_grade() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("dataset.csv");
        fs::write(
            &p,
            format!("{DATASET_CSV_HEADER}\ncase0000,1,s.mhd,23,0,0\n"),
        )
        .unwrap();
        let err = read_dataset_csv(&p).unwrap_err();
        assert!(err.to_string().contains("tot"), "{err}");
    }

    #[test]
    fn levels_csv_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let levels = LevelAnnotation::new([5.0, 15.5, 25.0, 35.0, 45.0], 64).unwrap();
        let p = dir.path().join("levels.csv");
        write_levels_csv(&[("case0003".into(), levels, 0.0, 1.2)], &p).unwrap();
        let back = read_levels_csv(&p, 64).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back["case0003"], levels);
    }

    #[test]
    fn levels_csv_requires_all_five() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("levels.csv");
        fs::write(
            &p,
            format!("{LEVELS_CSV_HEADER}\ncase0000,1,50,60\ncase0000,2,40,48\n"),
        )
        .unwrap();
        let err = read_levels_csv(&p, 64).unwrap_err();
        assert!(err.to_string().contains("missing level"), "{err}");
    }
}
