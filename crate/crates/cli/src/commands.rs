//! Subcommand implementations.

use std::fs;
use std::path::{Path, PathBuf};

use sscore_core::imagecore::Volume;
use sscore_core::lungmask::segment_lungs;
use sscore_core::nnreg::{train, Network, TrainConfig};
use sscore_core::phantom::{case_id, generate_phantom_volume};
use sscore_core::pipeline::{
    case_seed, cascade_predict, generate_dataset_slice, rater_agreement, summarize_levels,
    summarize_patterns, ExperimentConfig, LevelRow, ScoreBatchSource, SliceRow,
};
use sscore_core::rngstream::derive_seed;
use sscore_core::sampling::{balanced_weights, DatasetItem, LevelAnnotation, SliceDataset};

use self::pipeline_support::LevelVolumes;
use crate::checkpoint::{load_network, save_network, CheckpointMeta};
use crate::dataset::{load_dataset, write_dataset_csv, write_levels_csv, DatasetRow};
use crate::reports;
use crate::volfile;
use crate::{pgm, CliError, Result};

// seed tags for the file-based commands (cases reuse the pipeline's tag)
const TAG_SYNTH_SLICE: u64 = 0x534c4943;
const TAG_NET3D_CLI: u64 = 0x33444e45;
const TAG_TRAIN3D_CLI: u64 = 0x33445452;
const TAG_NET2D_CLI: u64 = 0x32444e45;
const TAG_TRAIN2D_CLI: u64 = 0x32445452;

/// Load the experiment config: defaults, overlaid by `--config`, with
/// `--seed` taking precedence.
pub fn load_config(config: Option<&Path>, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut cfg = match config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            serde_json::from_str::<ExperimentConfig>(&text)
                .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    cfg.validate().map_err(CliError::from)?;
    Ok(cfg)
}

fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path)?;
    Ok(())
}

/// `synth`: emit a 2D slice dataset (healthy phantoms, a fraction with
/// synthesized lesions) plus its CSV.
pub fn cmd_synth(cfg: &ExperimentConfig, out: &Path, with_pgm: bool) -> Result<()> {
    let slices_dir = out.join("slices");
    ensure_dir(&slices_dir)?;
    let dims = [cfg.train.input_extent, cfg.train.input_extent];
    let mut rows = Vec::with_capacity(cfg.n_slices);
    for idx in 0..cfg.n_slices {
        let case = idx / 5;
        let level = idx % 5 + 1;
        let slice_seed = derive_seed(cfg.seed, TAG_SYNTH_SLICE, idx as u64);
        let (slice, lung, grades) =
            generate_dataset_slice(slice_seed, dims, cfg.lesion_prob, &cfg.texture)?;
        let name = format!("{}_l{level}", case_id(case));
        let rel = PathBuf::from("slices").join(format!("{name}.mhd"));
        volfile::write_slice(&slice, cfg.phantom.spacing, slices_dir.join(&name))?;
        if with_pgm {
            pgm::write_slice_pgm16(&slice, slices_dir.join(format!("{name}.pgm")))?;
            pgm::write_mask_pgm(&lung, slices_dir.join(format!("{name}_lung.pgm")))?;
        }
        rows.push(DatasetRow {
            case_id: case_id(case),
            level,
            slice_path: rel,
            grades,
        });
    }
    let csv = out.join("dataset.csv");
    write_dataset_csv(&rows, &csv)?;
    println!("wrote {} ({} slices)", csv.display(), rows.len());
    Ok(())
}

/// `phantoms`: emit 3D phantom volumes and their level annotation CSV.
pub fn cmd_phantoms(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let vol_dir = out.join("volumes");
    ensure_dir(&vol_dir)?;
    let mut entries = Vec::with_capacity(cfg.n_volumes);
    for i in 0..cfg.n_volumes {
        let (vol, levels) = generate_phantom_volume(&cfg.phantom, case_seed(cfg.seed, i))?;
        volfile::write_volume(&vol, vol_dir.join(case_id(i)))?;
        entries.push((case_id(i), levels, vol.origin_z(), vol.spacing()[2]));
    }
    let csv = out.join("levels.csv");
    write_levels_csv(&entries, &csv)?;
    println!(
        "wrote {} volumes under {} and {}",
        cfg.n_volumes,
        vol_dir.display(),
        csv.display()
    );
    Ok(())
}

/// `train-levels`: train the 3D level network on a phantoms directory.
pub fn cmd_train_levels(cfg: &ExperimentConfig, data: &Path, out: &Path) -> Result<()> {
    ensure_dir(out)?;
    let lv = LevelVolumes::load(data)?;
    lv.check_against(cfg)?;
    let mut net = Network::init(
        cfg.net_3d.clone(),
        &cfg.crop_dims,
        cfg.train.hu_clip,
        derive_seed(cfg.seed, TAG_NET3D_CLI, 0),
    )?;
    let mut source = lv.batch_source(cfg);
    let tc = TrainConfig {
        seed: derive_seed(cfg.seed, TAG_TRAIN3D_CLI, 0),
        ..cfg.train.clone()
    };
    let log = train(&mut net, &mut source, &tc, (cfg.crop_dims[2] - 1) as f64)?;
    let ckpt = out.join("net3d.ckpt");
    save_network(
        &net,
        CheckpointMeta {
            seed: cfg.seed,
            epoch: cfg.train.epochs,
        },
        &ckpt,
    )?;
    reports::write_loss_log(&log, out.join("loss_levels.csv"))?;
    let last = log.last().expect("at least one epoch");
    println!(
        "trained levels net ({} epochs, final mae {:.3} slices); wrote {}",
        cfg.train.epochs,
        last.mae,
        ckpt.display()
    );
    Ok(())
}

/// `train-scores`: train the 2D score network on a slice dataset with
/// balanced sampling and on-the-fly synthesis.
pub fn cmd_train_scores(cfg: &ExperimentConfig, data: &Path, out: &Path) -> Result<()> {
    ensure_dir(out)?;
    let loaded = load_dataset(data.join("dataset.csv"))?;
    let extent = [cfg.train.input_extent, cfg.train.input_extent];
    let items: Vec<DatasetItem> = loaded
        .into_iter()
        .map(|ls| {
            if ls.slice.dims() != extent {
                return Err(CliError::Usage(format!(
                    "slice {} has dims {:?}, config expects {:?}",
                    ls.case_id,
                    ls.slice.dims(),
                    extent
                )));
            }
            let lung = if ls.grades.is_healthy() {
                segment_lungs(&ls.slice, &cfg.morph)
                    .ok()
                    .filter(|m| m.count() > 0)
            } else {
                None
            };
            Ok(DatasetItem {
                slice: ls.slice,
                grades: ls.grades,
                lung,
            })
        })
        .collect::<Result<_>>()?;
    let dataset = SliceDataset { items };
    let weights = balanced_weights(&dataset.grades(), cfg.balance_key)?;
    let steps = dataset.len().div_ceil(cfg.train.batch);
    let mut source = ScoreBatchSource {
        dataset: &dataset,
        weights,
        synth_prob: cfg.synth_prob,
        texture: cfg.texture.clone(),
        hu_clip: cfg.train.hu_clip,
        steps_per_epoch: steps,
    };
    let mut net = Network::init(
        cfg.net_2d.clone(),
        &extent,
        cfg.train.hu_clip,
        derive_seed(cfg.seed, TAG_NET2D_CLI, 0),
    )?;
    let tc = TrainConfig {
        seed: derive_seed(cfg.seed, TAG_TRAIN2D_CLI, 0),
        ..cfg.train.clone()
    };
    let log = train(&mut net, &mut source, &tc, 100.0)?;
    let ckpt = out.join("net2d.ckpt");
    save_network(
        &net,
        CheckpointMeta {
            seed: cfg.seed,
            epoch: cfg.train.epochs,
        },
        &ckpt,
    )?;
    reports::write_loss_log(&log, out.join("loss_scores.csv"))?;
    let last = log.last().expect("at least one epoch");
    println!(
        "trained scores net ({} epochs, final mae {:.2} points); wrote {}",
        cfg.train.epochs,
        last.mae,
        ckpt.display()
    );
    Ok(())
}

/// `eval`: cascade both checkpoints over phantom volumes; optionally score a
/// slice dataset against its stored grades.
pub fn cmd_eval(
    cfg: &ExperimentConfig,
    volumes: &Path,
    dataset: Option<&Path>,
    net3d_path: &Path,
    net2d_path: &Path,
    out: &Path,
) -> Result<()> {
    ensure_dir(out)?;
    let (net3d, _) = load_network(net3d_path)?;
    let (net2d, _) = load_network(net2d_path)?;
    let lv = LevelVolumes::load(volumes)?;

    let mut level_rows: Vec<LevelRow> = Vec::new();
    let mut cascade_csv = String::from(
        "case_id,level,z,tot,gg,ret,tot_grade,gg_grade,ret_grade\n",
    );
    for (case, vol, levels) in lv.iter() {
        let pred = cascade_predict(&net3d, &net2d, vol)?;
        for k in 1..=5usize {
            level_rows.push(LevelRow {
                case_id: case.clone(),
                fold: 0,
                level: k,
                truth_index: levels.level(k),
                pred_index: pred.levels.continuous[5 - k],
            });
            let cs = &pred.slices[5 - k];
            cascade_csv.push_str(&format!(
                "{case},{k},{},{},{},{},{},{},{}\n",
                cs.z,
                cs.scores.tot,
                cs.scores.gg,
                cs.scores.ret,
                cs.grades.tot.value(),
                cs.grades.gg.value(),
                cs.grades.ret.value()
            ));
        }
    }
    reports::write_level_predictions(&level_rows, out.join("predictions_levels.csv"))?;
    reports::write_level_report(&summarize_levels(&level_rows)?, out.join("levels_report.csv"))?;
    fs::write(out.join("cascade.csv"), cascade_csv)?;

    if let Some(data) = dataset {
        let loaded = load_dataset(data.join("dataset.csv"))?;
        let mut slice_rows: Vec<SliceRow> = Vec::new();
        for ls in &loaded {
            let (scores, grades) = sscore_core::nnreg::predict_scores(&net2d, &ls.slice)?;
            slice_rows.push(SliceRow {
                case_id: ls.case_id.clone(),
                fold: 0,
                level: ls.level,
                truth: [
                    ls.grades.tot.value() as f64,
                    ls.grades.gg.value() as f64,
                    ls.grades.ret.value() as f64,
                ],
                pred: [scores.tot, scores.gg, scores.ret],
                pred_grades: [
                    grades.tot.value(),
                    grades.gg.value(),
                    grades.ret.value(),
                ],
            });
        }
        reports::write_slice_predictions(&slice_rows, out.join("predictions_scores.csv"))?;
        reports::write_pattern_report(
            &summarize_patterns(&slice_rows, cfg.kappa_weighting)?,
            out.join("scores_report.csv"),
        )?;
    }
    println!("wrote evaluation reports under {}", out.display());
    Ok(())
}

/// `agree`: rater-vs-consensus agreement table.
pub fn cmd_agree(cfg: &ExperimentConfig, input: &Path, out: &Path) -> Result<()> {
    ensure_dir(out)?;
    let records = crate::raters::read_rater_csv(input)?;
    let rows = rater_agreement(&records, cfg.kappa_weighting).map_err(|e| {
        // a rating table without consensus rows is malformed data, not usage
        CliError::Data(e.to_string())
    })?;
    let path = out.join("rater_agreement.csv");
    reports::write_rater_report(&rows, &path)?;
    println!("wrote {} ({} rows)", path.display(), rows.len());
    Ok(())
}

/// `plot-data`: Bland-Altman and correlation plot CSVs from prediction files.
pub fn cmd_plot_data(scores: Option<&Path>, levels: Option<&Path>, out: &Path) -> Result<()> {
    if scores.is_none() && levels.is_none() {
        return Err(CliError::Usage(
            "plot-data needs --scores and/or --levels prediction CSVs".into(),
        ));
    }
    ensure_dir(out)?;
    if let Some(path) = scores {
        let rows = reports::read_slice_predictions(path)?;
        for (i, name) in ["tot", "gg", "ret"].iter().enumerate() {
            let ba: Vec<(f64, f64)> = rows
                .iter()
                .map(|r| ((r.pred[i] + r.truth[i]) / 2.0, r.pred[i] - r.truth[i]))
                .collect();
            let corr: Vec<(f64, f64)> = rows.iter().map(|r| (r.truth[i], r.pred[i])).collect();
            reports::write_ba_csv(&ba, out.join(format!("ba_{name}.csv")))?;
            reports::write_corr_csv(&corr, out.join(format!("corr_{name}.csv")))?;
        }
    }
    if let Some(path) = levels {
        let rows = reports::read_level_predictions(path)?;
        let ba: Vec<(f64, f64)> = rows
            .iter()
            .map(|r| {
                (
                    (r.pred_index + r.truth_index) / 2.0,
                    r.pred_index - r.truth_index,
                )
            })
            .collect();
        let corr: Vec<(f64, f64)> = rows
            .iter()
            .map(|r| (r.truth_index, r.pred_index))
            .collect();
        reports::write_ba_csv(&ba, out.join("ba_levels.csv"))?;
        reports::write_corr_csv(&corr, out.join("corr_levels.csv"))?;
    }
    println!("wrote plot data under {}", out.display());
    Ok(())
}

/// Volumes + annotations loaded from a phantoms directory.
pub(crate) mod pipeline_support {
    use super::*;
    use sscore_core::pipeline::LevelBatchSource;

    pub struct LevelVolumes {
        cases: Vec<(String, Volume, LevelAnnotation)>,
    }

    impl LevelVolumes {
        /// Expects `<dir>/volumes/<case>.mhd` and `<dir>/levels.csv`.
        pub fn load(dir: &Path) -> Result<LevelVolumes> {
            let vol_dir = dir.join("volumes");
            // read one volume first to learn the depth the annotations need
            let csv = dir.join("levels.csv");
            let text = fs::read_to_string(&csv)
                .map_err(|e| CliError::Data(format!("{}: {e}", csv.display())))?;
            let first_case = text
                .lines()
                .nth(1)
                .and_then(|l| l.split(',').next())
                .ok_or_else(|| CliError::Data(format!("{}: no level rows", csv.display())))?
                .to_string();
            let probe = volfile::read_volume(vol_dir.join(format!("{first_case}.mhd")))?;
            let depth = probe.dims()[2];

            let annotations = crate::dataset::read_levels_csv(&csv, depth)?;
            let mut cases = Vec::with_capacity(annotations.len());
            for (case, levels) in annotations {
                let vol = if case == first_case {
                    probe.clone()
                } else {
                    volfile::read_volume(vol_dir.join(format!("{case}.mhd")))?
                };
                if vol.dims() != probe.dims() {
                    return Err(CliError::Data(format!(
                        "volume {case} has dims {:?}, expected {:?}",
                        vol.dims(),
                        probe.dims()
                    )));
                }
                cases.push((case, vol, levels));
            }
            Ok(LevelVolumes { cases })
        }

        pub fn check_against(&self, cfg: &ExperimentConfig) -> Result<()> {
            let dims = self.cases[0].1.dims();
            if [dims[0], dims[1]] != cfg.phantom.in_plane || dims[2] < cfg.crop_dims[2] {
                return Err(CliError::Usage(format!(
                    "volume dims {dims:?} incompatible with config (in-plane {:?}, crop depth {})",
                    cfg.phantom.in_plane, cfg.crop_dims[2]
                )));
            }
            Ok(())
        }

        pub fn batch_source<'a>(&'a self, cfg: &ExperimentConfig) -> LevelBatchSource<'a> {
            LevelBatchSource {
                volumes: self.cases.iter().map(|(_, v, l)| (v, l)).collect(),
                crop_dims: cfg.crop_dims,
                hu_clip: cfg.train.hu_clip,
            }
        }

        pub fn iter(&self) -> impl Iterator<Item = (&String, &Volume, &LevelAnnotation)> {
            self.cases.iter().map(|(c, v, l)| (c, v, l))
        }
    }
}
