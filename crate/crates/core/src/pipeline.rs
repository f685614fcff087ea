//! Experiment orchestration: case generation, fold management, cascaded
//! inference and cross-validation.
//!
//! Everything here is pure computation over in-memory structures; the CLI
//! crate serializes the returned reports. All randomness is derived from the
//! experiment seed, so a whole cross-validation run is bit-reproducible.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::imagecore::{extract_slice, round_half_up, BinaryMask, Slice, Volume};
use crate::lungmask::{segment_lungs, MorphParams};
use crate::metrics::{
    bland_altman, icc_2_1, linear_fit, mae_std, weighted_kappa, wilcoxon_signed_rank,
    KappaWeighting, RatingTable,
};
use crate::nnreg::{
    normalize_field, predict_levels, predict_scores, train, Batch, BatchSource, EpochLoss,
    LevelPrediction, NetSpec, Network, TrainConfig,
};
use crate::phantom::{case_id, generate_phantom_volume, PhantomVolumeSpec};
use crate::rngstream::derive_seed;
use crate::sampling::{
    balanced_weights, crop_volume_z, normalize_targets, random_crop_z, sample_batch, BalanceKey,
    DatasetItem, LevelAnnotation, SampleWeights, SliceDataset,
};
use crate::synth::{
    round_to_grade, synthesize, Grade, GradeTriple, ScoreTriple, TextureParams,
};

// seed-derivation tags
const TAG_CASE: u64 = 1;
const TAG_NET2D: u64 = 2;
const TAG_TRAIN2D: u64 = 3;
const TAG_NET3D: u64 = 4;
const TAG_TRAIN3D: u64 = 5;

/// Full experiment description; the JSON config file mirrors these fields.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub folds: usize,
    pub n_volumes: usize,
    pub n_slices: usize,
    pub synth_prob: f64,
    /// Probability that a stored dataset slice carries synthesized lesions.
    pub lesion_prob: f64,
    pub balance_key: BalanceKey,
    pub crop_dims: [usize; 3],
    pub net_2d: NetSpec,
    pub net_3d: NetSpec,
    pub train: TrainConfig,
    pub texture: TextureParams,
    pub morph: MorphParams,
    pub phantom: PhantomVolumeSpec,
    pub kappa_weighting: KappaWeighting,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 7,
            folds: 4,
            n_volumes: 8,
            n_slices: 40,
            synth_prob: 0.5,
            lesion_prob: 0.5,
            balance_key: BalanceKey::Tot,
            crop_dims: [64, 64, 48],
            net_2d: NetSpec::scores_2d(),
            net_3d: NetSpec::levels_3d(),
            train: TrainConfig::default(),
            texture: TextureParams::default(),
            morph: MorphParams::default(),
            phantom: PhantomVolumeSpec::default(),
            kappa_weighting: KappaWeighting::Linear,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(Error::InvalidArgument("folds must be >= 2".into()));
        }
        if self.n_volumes == 0 {
            return Err(Error::InvalidArgument("n_volumes must be >= 1".into()));
        }
        for (name, p) in [("synth_prob", self.synth_prob), ("lesion_prob", self.lesion_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidArgument(format!("{name} {p} outside [0, 1]")));
            }
        }
        self.phantom.validate()?;
        if self.phantom.in_plane != [self.train.input_extent; 2] {
            return Err(Error::InvalidArgument(format!(
                "phantom in-plane dims {:?} must equal train.input_extent {}",
                self.phantom.in_plane, self.train.input_extent
            )));
        }
        if self.crop_dims[0] != self.phantom.in_plane[0]
            || self.crop_dims[1] != self.phantom.in_plane[1]
        {
            return Err(Error::InvalidArgument(format!(
                "crop in-plane dims {:?} must equal phantom in-plane dims {:?}",
                [self.crop_dims[0], self.crop_dims[1]],
                self.phantom.in_plane
            )));
        }
        if self.crop_dims[2] > self.phantom.depth {
            return Err(Error::InvalidArgument(format!(
                "crop depth {} exceeds phantom depth {}",
                self.crop_dims[2], self.phantom.depth
            )));
        }
        Ok(())
    }
}

/// Seed for case `index` of an experiment (shared by the in-memory runner
/// and the file-emitting commands so both produce identical cases).
pub fn case_seed(seed: u64, index: usize) -> u64 {
    derive_seed(seed, TAG_CASE, index as u64)
}

/// Stable fold assignment: FNV-1a hash of (seed, case id) mod folds.
/// Independent of dataset ordering.
pub fn fold_of(case: &str, seed: u64, folds: usize) -> usize {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in seed.to_le_bytes().into_iter().chain(case.bytes()) {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    (h % folds as u64) as usize
}

/// One annotated level slice of a generated case.
#[derive(Debug, Clone)]
pub struct CaseSlice {
    /// Clinical level 1..=5 (5 most caudal).
    pub level: usize,
    pub slice: Slice,
    pub grades: GradeTriple,
    /// Present only on healthy slices (synthesis-eligible bases).
    pub lung: Option<BinaryMask>,
}

/// One generated case: phantom volume, level annotation, five level slices.
#[derive(Debug, Clone)]
pub struct GeneratedCase {
    pub id: String,
    pub volume: Volume,
    pub levels: LevelAnnotation,
    pub slices: Vec<CaseSlice>,
}

/// Generate the experiment's cases from the config seed. Each case's level
/// slices are extracted from its volume; each slice independently carries
/// synthesized lesions with probability `lesion_prob`.
pub fn generate_cases(cfg: &ExperimentConfig) -> Result<Vec<GeneratedCase>> {
    cfg.validate()?;
    let mut cases = Vec::with_capacity(cfg.n_volumes);
    for i in 0..cfg.n_volumes {
        let seed_i = case_seed(cfg.seed, i);
        let (volume, levels) = generate_phantom_volume(&cfg.phantom, seed_i)?;
        let mut rng = crate::rngstream::stream(seed_i, 1);
        let mut slices = Vec::with_capacity(5);
        for k in 1..=5usize {
            let z = round_half_up(levels.level(k)) as usize;
            let base = extract_slice(&volume, z)?;
            // A mask can come back empty when morphology erases everything;
            // treat that like a slice without usable lungs.
            let lung = match segment_lungs(&base, &cfg.morph) {
                Ok(m) if m.count() > 0 => Some(m),
                Ok(_) | Err(Error::EmptyLungs) => None,
                Err(e) => return Err(e),
            };
            let diseased = rng.gen_bool(cfg.lesion_prob) && lung.is_some();
            if diseased {
                let lung_mask = lung.expect("checked above");
                let (img, scores, _) = synthesize(&base, &lung_mask, &cfg.texture, &mut rng)?;
                slices.push(CaseSlice {
                    level: k,
                    slice: img,
                    grades: GradeTriple {
                        tot: round_to_grade(scores.tot)?,
                        gg: round_to_grade(scores.gg)?,
                        ret: round_to_grade(scores.ret)?,
                    },
                    lung: None,
                });
            } else {
                slices.push(CaseSlice {
                    level: k,
                    slice: base,
                    grades: GradeTriple::zeros(),
                    lung,
                });
            }
        }
        cases.push(GeneratedCase {
            id: case_id(i),
            volume,
            levels,
            slices,
        });
    }
    Ok(cases)
}

/// One standalone dataset slice: a healthy phantom that carries synthesized
/// lesions with probability `lesion_prob`. Returns the slice, the generator's
/// lung mask and the stored grades. Deterministic per seed.
pub fn generate_dataset_slice(
    seed: u64,
    dims: [usize; 2],
    lesion_prob: f64,
    texture: &TextureParams,
) -> Result<(Slice, BinaryMask, GradeTriple)> {
    if !(0.0..=1.0).contains(&lesion_prob) {
        return Err(Error::InvalidArgument(format!(
            "lesion_prob {lesion_prob} outside [0, 1]"
        )));
    }
    let (base, lung) = crate::synth::generate_healthy_phantom(seed, dims)?;
    let mut rng = crate::rngstream::stream(seed, 2);
    if rng.gen_bool(lesion_prob) {
        let (img, scores, _) = synthesize(&base, &lung, texture, &mut rng)?;
        let grades = GradeTriple {
            tot: round_to_grade(scores.tot)?,
            gg: round_to_grade(scores.gg)?,
            ret: round_to_grade(scores.ret)?,
        };
        Ok((img, lung, grades))
    } else {
        Ok((base, lung, GradeTriple::zeros()))
    }
}

// ---------------------------------------------------------------------------
// batch sources
// ---------------------------------------------------------------------------

/// Batch source for the 2D score network: weighted draws with on-the-fly
/// synthesis, targets scaled to [0, 1].
pub struct ScoreBatchSource<'a> {
    pub dataset: &'a SliceDataset,
    pub weights: SampleWeights,
    pub synth_prob: f64,
    pub texture: TextureParams,
    pub hu_clip: [f64; 2],
    pub steps_per_epoch: usize,
}

impl BatchSource for ScoreBatchSource<'_> {
    fn batches_for_epoch(
        &mut self,
        _epoch: usize,
        batch_size: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<Batch>> {
        (0..self.steps_per_epoch)
            .map(|_| {
                let items = sample_batch(
                    self.dataset,
                    &self.weights,
                    batch_size,
                    self.synth_prob,
                    &self.texture,
                    rng,
                )?;
                Ok(Batch {
                    inputs: items
                        .iter()
                        .map(|b| normalize_field(b.slice.pixels(), self.hu_clip))
                        .collect(),
                    targets: items
                        .iter()
                        .map(|b| {
                            vec![
                                b.scores.tot / 100.0,
                                b.scores.gg / 100.0,
                                b.scores.ret / 100.0,
                            ]
                        })
                        .collect(),
                })
            })
            .collect()
    }
}

/// Batch source for the 3D level network: per epoch, one fresh random
/// level-covering crop of every training volume, volume order shuffled.
pub struct LevelBatchSource<'a> {
    pub volumes: Vec<(&'a Volume, &'a LevelAnnotation)>,
    pub crop_dims: [usize; 3],
    pub hu_clip: [f64; 2],
}

impl BatchSource for LevelBatchSource<'_> {
    fn batches_for_epoch(
        &mut self,
        _epoch: usize,
        batch_size: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<Batch>> {
        if self.volumes.is_empty() {
            return Err(Error::InvalidArgument("no training volumes".into()));
        }
        let mut order: Vec<usize> = (0..self.volumes.len()).collect();
        for i in (1..order.len()).rev() {
            order.swap(i, rng.gen_range(0..=i));
        }
        let mut samples = Vec::with_capacity(order.len());
        for &i in &order {
            let (vol, levels) = self.volumes[i];
            let (crop, shifted) = random_crop_z(vol, levels, self.crop_dims, rng)?;
            let input = normalize_field(crop.voxels(), self.hu_clip);
            let target = normalize_targets(&shifted, self.crop_dims[2])?.to_vec();
            samples.push((input, target));
        }
        Ok(samples
            .chunks(batch_size)
            .map(|chunk| Batch {
                inputs: chunk.iter().map(|(x, _)| x.clone()).collect(),
                targets: chunk.iter().map(|(_, t)| t.clone()).collect(),
            })
            .collect())
    }
}

// ---------------------------------------------------------------------------
// cascade
// ---------------------------------------------------------------------------

/// Score prediction at one selected slice.
#[derive(Debug, Clone)]
pub struct CascadeSlice {
    pub z: usize,
    pub scores: ScoreTriple,
    pub grades: GradeTriple,
}

/// Full cascade output for one volume.
#[derive(Debug, Clone)]
pub struct CascadePrediction {
    pub levels: LevelPrediction,
    pub slices: Vec<CascadeSlice>,
}

/// Score stage of the cascade on externally supplied slice indices.
pub fn cascade_from_levels(
    net2d: &Network,
    vol: &Volume,
    rounded: [usize; 5],
) -> Result<Vec<CascadeSlice>> {
    rounded
        .iter()
        .map(|&z| {
            let slice = extract_slice(vol, z)?;
            let (scores, grades) = predict_scores(net2d, &slice)?;
            Ok(CascadeSlice { z, scores, grades })
        })
        .collect()
}

/// Centered evaluation crop start (no annotation needed, so no leakage).
pub fn centered_crop_start(depth: usize, crop_depth: usize) -> usize {
    (depth - crop_depth) / 2
}

/// Level prediction for a volume whose depth may exceed the network input
/// depth: a centered z-crop is scored and mapped back to the full frame.
pub fn predict_levels_on(net3d: &Network, vol: &Volume) -> Result<LevelPrediction> {
    let vd = vol.dims();
    let nd = net3d.input_dims();
    if nd.len() != 3 || nd[0] != vd[0] || nd[1] != vd[1] {
        return Err(Error::ShapeMismatch(format!(
            "network input {:?} does not match volume in-plane dims {:?}",
            nd,
            [vd[0], vd[1]]
        )));
    }
    if nd[2] == vd[2] {
        return predict_levels(net3d, vol);
    }
    if nd[2] > vd[2] {
        return Err(Error::ShapeMismatch(format!(
            "network depth {} exceeds volume depth {}",
            nd[2], vd[2]
        )));
    }
    let z0 = centered_crop_start(vd[2], nd[2]);
    let crop = crop_volume_z(vol, z0, nd[2])?;
    let p = predict_levels(net3d, &crop)?;
    let max = (vd[2] - 1) as f64;
    let mut continuous = [0.0f64; 5];
    let mut rounded = [0usize; 5];
    for i in 0..5 {
        continuous[i] = (p.continuous[i] + z0 as f64).clamp(0.0, max);
        rounded[i] = round_half_up(continuous[i]) as usize;
    }
    Ok(LevelPrediction {
        continuous,
        rounded,
    })
}

/// Level selection then per-slice scoring, with all intermediates returned.
pub fn cascade_predict(
    net3d: &Network,
    net2d: &Network,
    vol: &Volume,
) -> Result<CascadePrediction> {
    let levels = predict_levels_on(net3d, vol)?;
    let slices = cascade_from_levels(net2d, vol, levels.rounded)?;
    Ok(CascadePrediction { levels, slices })
}

// ---------------------------------------------------------------------------
// prediction rows and summaries
// ---------------------------------------------------------------------------

/// Scored pattern identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum PatternKind {
    Tot,
    Gg,
    Ret,
}

impl PatternKind {
    pub const ALL: [PatternKind; 3] = [PatternKind::Tot, PatternKind::Gg, PatternKind::Ret];

    pub fn name(&self) -> &'static str {
        match self {
            PatternKind::Tot => "tot",
            PatternKind::Gg => "gg",
            PatternKind::Ret => "ret",
        }
    }

    pub fn index(&self) -> usize {
        match self {
            PatternKind::Tot => 0,
            PatternKind::Gg => 1,
            PatternKind::Ret => 2,
        }
    }
}

/// One validation score prediction (truths are the stored grades).
#[derive(Debug, Clone, PartialEq)]
pub struct SliceRow {
    pub case_id: String,
    pub fold: usize,
    pub level: usize,
    /// tot, gg, ret
    pub truth: [f64; 3],
    pub pred: [f64; 3],
    pub pred_grades: [u8; 3],
}

/// One validation level prediction in the full-volume frame.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelRow {
    pub case_id: String,
    pub fold: usize,
    /// Clinical level 1..=5.
    pub level: usize,
    pub truth_index: f64,
    pub pred_index: f64,
}

/// Agreement summary for one pattern; row layout of the score report CSV.
/// Degenerate statistics (undefined kappa/ICC, constant-x fit) are reported
/// as NaN rather than aborting a run.
#[derive(Debug, Clone, PartialEq)]
pub struct PatternSummary {
    pub pattern: PatternKind,
    pub mae: f64,
    pub mae_std: f64,
    pub wk: f64,
    pub icc: f64,
    pub ba_mean: f64,
    pub ba_low: f64,
    pub ba_high: f64,
    pub slope: f64,
    pub intercept: f64,
    pub wilcoxon_p: Option<f64>,
}

/// Per-level summary; row layout of the level report CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelSummary {
    pub level: usize,
    pub mae: f64,
    pub mae_std: f64,
    pub icc: f64,
}

fn nan_if_degenerate(r: Result<f64>) -> Result<f64> {
    match r {
        Ok(v) => Ok(v),
        Err(Error::UndefinedKappa) | Err(Error::UndefinedIcc) | Err(Error::DegenerateFit) => {
            Ok(f64::NAN)
        }
        Err(e) => Err(e),
    }
}

/// Summarize one pattern's pooled predictions.
pub fn summarize_pattern(
    pattern: PatternKind,
    pred: &[f64],
    truth: &[f64],
    weighting: KappaWeighting,
) -> Result<PatternSummary> {
    if pred.len() < 2 {
        return Err(Error::InvalidArgument(
            "need at least 2 predictions to summarize".into(),
        ));
    }
    let (mae, mae_sd) = mae_std(pred, truth)?;
    let gp: Vec<Grade> = pred.iter().map(|&v| round_to_grade(v)).collect::<Result<_>>()?;
    let gt: Vec<Grade> = truth.iter().map(|&v| round_to_grade(v)).collect::<Result<_>>()?;
    let wk = nan_if_degenerate(weighted_kappa(&gp, &gt, weighting))?;
    let icc = nan_if_degenerate(
        RatingTable::from_pair(pred, truth).and_then(|t| icc_2_1(&t)),
    )?;
    let ba = bland_altman(pred, truth)?;
    let (slope, intercept) = match linear_fit(truth, pred) {
        Ok(f) => f,
        Err(Error::DegenerateFit) => (f64::NAN, f64::NAN),
        Err(e) => return Err(e),
    };
    let wilcoxon_p = match wilcoxon_signed_rank(pred, truth) {
        Ok(p) => Some(p),
        Err(Error::UndefinedTest) => None,
        Err(e) => return Err(e),
    };
    Ok(PatternSummary {
        pattern,
        mae,
        mae_std: mae_sd,
        wk,
        icc,
        ba_mean: ba.mean_diff,
        ba_low: ba.loa_low,
        ba_high: ba.loa_high,
        slope,
        intercept,
        wilcoxon_p,
    })
}

/// Summarize pooled level predictions for one clinical level.
pub fn summarize_level(level: usize, pred: &[f64], truth: &[f64]) -> Result<LevelSummary> {
    let (mae, mae_sd) = mae_std(pred, truth)?;
    let icc = nan_if_degenerate(
        RatingTable::from_pair(pred, truth).and_then(|t| icc_2_1(&t)),
    )?;
    Ok(LevelSummary {
        level,
        mae,
        mae_std: mae_sd,
        icc,
    })
}

/// Summaries for all three patterns from slice rows.
pub fn summarize_patterns(
    rows: &[SliceRow],
    weighting: KappaWeighting,
) -> Result<Vec<PatternSummary>> {
    PatternKind::ALL
        .iter()
        .map(|&p| {
            let i = p.index();
            let pred: Vec<f64> = rows.iter().map(|r| r.pred[i]).collect();
            let truth: Vec<f64> = rows.iter().map(|r| r.truth[i]).collect();
            summarize_pattern(p, &pred, &truth, weighting)
        })
        .collect()
}

/// Per-level summaries from level rows.
pub fn summarize_levels(rows: &[LevelRow]) -> Result<Vec<LevelSummary>> {
    (1..=5usize)
        .map(|k| {
            let pred: Vec<f64> = rows
                .iter()
                .filter(|r| r.level == k)
                .map(|r| r.pred_index)
                .collect();
            let truth: Vec<f64> = rows
                .iter()
                .filter(|r| r.level == k)
                .map(|r| r.truth_index)
                .collect();
            summarize_level(k, &pred, &truth)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// cross-validation
// ---------------------------------------------------------------------------

/// Loss logs of one fold.
#[derive(Debug, Clone)]
pub struct FoldTrainLog {
    pub fold: usize,
    pub scores: Vec<EpochLoss>,
    pub levels: Vec<EpochLoss>,
}

/// Everything a cross-validation run produces. Report rows are recomputable
/// from `per_slice` / `per_level` with the metrics module alone.
#[derive(Debug, Clone)]
pub struct CvReport {
    pub per_slice: Vec<SliceRow>,
    pub per_level: Vec<LevelRow>,
    pub pooled_patterns: Vec<PatternSummary>,
    pub pooled_levels: Vec<LevelSummary>,
    pub fold_patterns: Vec<(usize, Vec<PatternSummary>)>,
    pub train_logs: Vec<FoldTrainLog>,
}

/// Cross-validate the full cascade on generated cases.
///
/// Fold assignment hashes case ids with the run seed; each fold trains both
/// networks on its training cases and predicts the held-out cases. Pooled
/// validation predictions across folds feed the final reports.
pub fn run_cv(cfg: &ExperimentConfig) -> Result<CvReport> {
    cfg.validate()?;
    let cases = generate_cases(cfg)?;
    let folds: Vec<usize> = cases
        .iter()
        .map(|c| fold_of(&c.id, cfg.seed, cfg.folds))
        .collect();

    let mut per_slice: Vec<SliceRow> = Vec::new();
    let mut per_level: Vec<LevelRow> = Vec::new();
    let mut train_logs = Vec::new();

    for fold in 0..cfg.folds {
        let train_idx: Vec<usize> = (0..cases.len()).filter(|&i| folds[i] != fold).collect();
        let val_idx: Vec<usize> = (0..cases.len()).filter(|&i| folds[i] == fold).collect();
        if train_idx.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "fold {fold} has no training cases (n_volumes {} too small for {} folds)",
                cfg.n_volumes, cfg.folds
            )));
        }
        if val_idx.is_empty() {
            continue;
        }

        // 2D score network on the training slices
        let dataset = SliceDataset {
            items: train_idx
                .iter()
                .flat_map(|&i| cases[i].slices.iter())
                .map(|cs| DatasetItem {
                    slice: cs.slice.clone(),
                    grades: cs.grades,
                    lung: cs.lung.clone(),
                })
                .collect(),
        };
        let weights = balanced_weights(&dataset.grades(), cfg.balance_key)?;
        let mut net2d = Network::init(
            cfg.net_2d.clone(),
            &[cfg.train.input_extent, cfg.train.input_extent],
            cfg.train.hu_clip,
            derive_seed(cfg.seed, TAG_NET2D, fold as u64),
        )?;
        let steps = dataset.len().div_ceil(cfg.train.batch);
        let mut score_src = ScoreBatchSource {
            dataset: &dataset,
            weights,
            synth_prob: cfg.synth_prob,
            texture: cfg.texture.clone(),
            hu_clip: cfg.train.hu_clip,
            steps_per_epoch: steps,
        };
        let cfg2d = TrainConfig {
            seed: derive_seed(cfg.seed, TAG_TRAIN2D, fold as u64),
            ..cfg.train.clone()
        };
        let scores_log = train(&mut net2d, &mut score_src, &cfg2d, 100.0)?;

        // 3D level network on the training volumes
        let mut net3d = Network::init(
            cfg.net_3d.clone(),
            &cfg.crop_dims,
            cfg.train.hu_clip,
            derive_seed(cfg.seed, TAG_NET3D, fold as u64),
        )?;
        let mut level_src = LevelBatchSource {
            volumes: train_idx
                .iter()
                .map(|&i| (&cases[i].volume, &cases[i].levels))
                .collect(),
            crop_dims: cfg.crop_dims,
            hu_clip: cfg.train.hu_clip,
        };
        let cfg3d = TrainConfig {
            seed: derive_seed(cfg.seed, TAG_TRAIN3D, fold as u64),
            ..cfg.train.clone()
        };
        let levels_log = train(
            &mut net3d,
            &mut level_src,
            &cfg3d,
            (cfg.crop_dims[2] - 1) as f64,
        )?;
        train_logs.push(FoldTrainLog {
            fold,
            scores: scores_log,
            levels: levels_log,
        });

        // held-out evaluation
        for &i in &val_idx {
            let case = &cases[i];
            let pred = predict_levels_on(&net3d, &case.volume)?;
            for k in 1..=5usize {
                per_level.push(LevelRow {
                    case_id: case.id.clone(),
                    fold,
                    level: k,
                    truth_index: case.levels.level(k),
                    pred_index: pred.continuous[5 - k],
                });
            }
            for cs in &case.slices {
                let (scores, grades) = predict_scores(&net2d, &cs.slice)?;
                per_slice.push(SliceRow {
                    case_id: case.id.clone(),
                    fold,
                    level: cs.level,
                    truth: [
                        cs.grades.tot.value() as f64,
                        cs.grades.gg.value() as f64,
                        cs.grades.ret.value() as f64,
                    ],
                    pred: [scores.tot, scores.gg, scores.ret],
                    pred_grades: [
                        grades.tot.value(),
                        grades.gg.value(),
                        grades.ret.value(),
                    ],
                });
            }
        }
    }

    let pooled_patterns = summarize_patterns(&per_slice, cfg.kappa_weighting)?;
    let pooled_levels = summarize_levels(&per_level)?;
    let mut fold_patterns = Vec::new();
    for fold in 0..cfg.folds {
        let rows: Vec<SliceRow> = per_slice
            .iter()
            .filter(|r| r.fold == fold)
            .cloned()
            .collect();
        if rows.len() >= 2 {
            fold_patterns.push((fold, summarize_patterns(&rows, cfg.kappa_weighting)?));
        }
    }
    Ok(CvReport {
        per_slice,
        per_level,
        pooled_patterns,
        pooled_levels,
        fold_patterns,
        train_logs,
    })
}

// ---------------------------------------------------------------------------
// rater agreement (Table-3 style)
// ---------------------------------------------------------------------------

/// One parsed rating-table row.
#[derive(Debug, Clone, PartialEq)]
pub struct RaterRecord {
    pub case_id: String,
    pub level: usize,
    pub rater: String,
    pub session: u32,
    /// tot, gg, ret
    pub scores: [f64; 3],
}

/// Per-pattern agreement of one rater session against consensus.
#[derive(Debug, Clone, PartialEq)]
pub struct RaterPatternAgreement {
    pub mae: f64,
    pub mae_std: f64,
    pub wk: f64,
    pub icc: f64,
}

/// One output row: rater session (or the model) vs consensus.
#[derive(Debug, Clone, PartialEq)]
pub struct RaterReportRow {
    pub rater: String,
    pub session: u32,
    /// Indexed by [`PatternKind::index`].
    pub per_pattern: [RaterPatternAgreement; 3],
}

/// Rater name that carries the consensus ground truth.
pub const CONSENSUS_RATER: &str = "consensus";
/// Rater name for the automatic method; ordered after the human raters.
pub const MODEL_RATER: &str = "model";

/// Agreement of every (rater, session) against the consensus rows.
///
/// Rows are ordered by (rater, session) with the model last. Every rated
/// (case, level) must have a consensus entry.
pub fn rater_agreement(
    records: &[RaterRecord],
    weighting: KappaWeighting,
) -> Result<Vec<RaterReportRow>> {
    let mut consensus: Vec<(&str, usize, [f64; 3])> = Vec::new();
    for r in records.iter().filter(|r| r.rater == CONSENSUS_RATER) {
        if consensus
            .iter()
            .any(|&(c, l, _)| c == r.case_id && l == r.level)
        {
            return Err(Error::InvalidArgument(format!(
                "duplicate consensus entry for ({}, level {})",
                r.case_id, r.level
            )));
        }
        consensus.push((&r.case_id, r.level, r.scores));
    }
    if consensus.is_empty() {
        return Err(Error::InvalidArgument(
            "no consensus rows found (rater column must contain 'consensus')".into(),
        ));
    }

    let mut keys: Vec<(String, u32)> = records
        .iter()
        .filter(|r| r.rater != CONSENSUS_RATER)
        .map(|r| (r.rater.clone(), r.session))
        .collect();
    keys.sort_by(|a, b| {
        (a.0 == MODEL_RATER, &a.0, a.1).cmp(&(b.0 == MODEL_RATER, &b.0, b.1))
    });
    keys.dedup();
    if keys.is_empty() {
        return Err(Error::InvalidArgument("no rater rows found".into()));
    }

    let mut out = Vec::with_capacity(keys.len());
    for (rater, session) in keys {
        let mut pred = [Vec::new(), Vec::new(), Vec::new()];
        let mut truth = [Vec::new(), Vec::new(), Vec::new()];
        for r in records
            .iter()
            .filter(|r| r.rater == rater && r.session == session)
        {
            let cons = consensus
                .iter()
                .find(|&&(c, l, _)| c == r.case_id && l == r.level)
                .ok_or_else(|| {
                    Error::InvalidArgument(format!(
                        "no consensus entry for ({}, level {})",
                        r.case_id, r.level
                    ))
                })?;
            for p in 0..3 {
                pred[p].push(r.scores[p]);
                truth[p].push(cons.2[p]);
            }
        }
        let mut per_pattern = Vec::with_capacity(3);
        for p in 0..3 {
            let (mae, mae_sd) = mae_std(&pred[p], &truth[p])?;
            let gp: Vec<Grade> = pred[p]
                .iter()
                .map(|&v| round_to_grade(v))
                .collect::<Result<_>>()?;
            let gt: Vec<Grade> = truth[p]
                .iter()
                .map(|&v| round_to_grade(v))
                .collect::<Result<_>>()?;
            let wk = nan_if_degenerate(weighted_kappa(&gp, &gt, weighting))?;
            let icc = nan_if_degenerate(
                RatingTable::from_pair(&pred[p], &truth[p]).and_then(|t| icc_2_1(&t)),
            )?;
            per_pattern.push(RaterPatternAgreement {
                mae,
                mae_std: mae_sd,
                wk,
                icc,
            });
        }
        out.push(RaterReportRow {
            rater,
            session,
            per_pattern: [
                per_pattern[0].clone(),
                per_pattern[1].clone(),
                per_pattern[2].clone(),
            ],
        });
    }
    Ok(out)
}

/// Tiny experiment sized for tests: 32 px slices, shallow nets, one epoch.
pub fn tiny_config() -> ExperimentConfig {
    ExperimentConfig {
        seed: 11,
        folds: 2,
        n_volumes: 4,
        n_slices: 20,
        crop_dims: [32, 32, 24],
        net_2d: NetSpec {
            dimensionality: crate::nnreg::Dimensionality::TwoD,
            block_channels: vec![4, 8],
            outputs: 3,
        },
        net_3d: NetSpec {
            dimensionality: crate::nnreg::Dimensionality::ThreeD,
            block_channels: vec![2, 4],
            outputs: 5,
        },
        train: TrainConfig {
            learning_rate: 1e-3,
            batch: 4,
            epochs: 1,
            seed: 0,
            input_extent: 32,
            hu_clip: crate::nnreg::DEFAULT_HU_CLIP,
        },
        phantom: PhantomVolumeSpec {
            in_plane: [32, 32],
            depth: 32,
            marker_radius: 3,
            ..PhantomVolumeSpec::default()
        },
        ..ExperimentConfig::default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnreg::Dimensionality;

    #[test]
    fn fold_assignment_is_a_partition_and_order_free() {
        let ids: Vec<String> = (0..16).map(case_id).collect();
        let folds: Vec<usize> = ids.iter().map(|id| fold_of(id, 7, 4)).collect();
        assert!(folds.iter().all(|&f| f < 4));
        // shuffling order changes nothing: assignment depends on id + seed only
        let mut shuffled = ids.clone();
        shuffled.reverse();
        for (id, &f) in ids.iter().zip(folds.iter()) {
            assert_eq!(fold_of(id, 7, 4), f);
            let pos = shuffled.iter().position(|s| s == id).unwrap();
            assert_eq!(fold_of(&shuffled[pos], 7, 4), f);
        }
        // different seed reshuffles
        let refolded: Vec<usize> = ids.iter().map(|id| fold_of(id, 8, 4)).collect();
        assert_ne!(folds, refolded);
    }

    #[test]
    fn generated_cases_are_deterministic() {
        let cfg = tiny_config();
        let a = generate_cases(&cfg).unwrap();
        let b = generate_cases(&cfg).unwrap();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b.iter()) {
            assert_eq!(x.id, y.id);
            assert_eq!(x.volume, y.volume);
            assert_eq!(x.levels, y.levels);
            assert_eq!(x.slices.len(), 5);
            for (sx, sy) in x.slices.iter().zip(y.slices.iter()) {
                assert_eq!(sx.slice, sy.slice);
                assert_eq!(sx.grades, sy.grades);
            }
        }
    }

    #[test]
    fn healthy_case_slices_carry_lung_masks() {
        let mut cfg = tiny_config();
        cfg.lesion_prob = 0.0;
        let cases = generate_cases(&cfg).unwrap();
        for case in &cases {
            for cs in &case.slices {
                assert!(cs.grades.is_healthy());
                assert!(cs.lung.is_some(), "healthy slice without lung mask");
            }
        }
    }

    #[test]
    fn cascade_with_oracle_levels_scores_the_annotated_slices() {
        let cfg = tiny_config();
        let cases = generate_cases(&cfg).unwrap();
        let case = &cases[0];
        let net2d = Network::init(
            cfg.net_2d.clone(),
            &[32, 32],
            cfg.train.hu_clip,
            99,
        )
        .unwrap();
        // stub the level stage with ground truth
        let rounded: [usize; 5] =
            core::array::from_fn(|i| round_half_up(case.levels.slices()[i]) as usize);
        let out = cascade_from_levels(&net2d, &case.volume, rounded).unwrap();
        assert_eq!(out.len(), 5);
        for (cs, &z) in out.iter().zip(rounded.iter()) {
            assert_eq!(cs.z, z);
            let slice = extract_slice(&case.volume, z).unwrap();
            let (scores, _) = predict_scores(&net2d, &slice).unwrap();
            assert_eq!(scores, cs.scores);
        }
    }

    #[test]
    fn cascade_predict_is_deterministic_and_in_range() {
        let cfg = tiny_config();
        let cases = generate_cases(&cfg).unwrap();
        let case = &cases[1];
        let net3d = Network::init(cfg.net_3d.clone(), &cfg.crop_dims, cfg.train.hu_clip, 5)
            .unwrap();
        let net2d =
            Network::init(cfg.net_2d.clone(), &[32, 32], cfg.train.hu_clip, 6).unwrap();
        let p1 = cascade_predict(&net3d, &net2d, &case.volume).unwrap();
        let p2 = cascade_predict(&net3d, &net2d, &case.volume).unwrap();
        assert_eq!(p1.levels, p2.levels);
        let depth = case.volume.dims()[2];
        for &z in &p1.levels.rounded {
            assert!(z < depth, "extract_slice would fault at {z}");
        }
        for (a, b) in p1.slices.iter().zip(p2.slices.iter()) {
            assert_eq!(a.scores, b.scores);
        }
    }

    #[test]
    fn run_cv_partition_and_counts() {
        let cfg = tiny_config();
        let report = run_cv(&cfg).unwrap();
        // every slice predicted exactly once
        assert_eq!(report.per_slice.len(), 5 * cfg.n_volumes);
        assert_eq!(report.per_level.len(), 5 * cfg.n_volumes);
        let mut seen: Vec<(&str, usize)> = report
            .per_slice
            .iter()
            .map(|r| (r.case_id.as_str(), r.level))
            .collect();
        seen.sort();
        seen.dedup();
        assert_eq!(seen.len(), 5 * cfg.n_volumes);
        assert_eq!(report.pooled_patterns.len(), 3);
        assert_eq!(report.pooled_levels.len(), 5);
    }

    #[test]
    fn run_cv_reports_recomputable_from_rows() {
        let cfg = tiny_config();
        let report = run_cv(&cfg).unwrap();
        let again = summarize_patterns(&report.per_slice, cfg.kappa_weighting).unwrap();
        assert_eq!(report.pooled_patterns, again);
        let again = summarize_levels(&report.per_level).unwrap();
        assert_eq!(report.pooled_levels, again);
    }

    #[test]
    fn summarize_pattern_nan_maps_degenerate_stats() {
        // constant equal series: kappa undefined, icc undefined, fit degenerate
        let pred = [0.0, 0.0, 0.0];
        let truth = [0.0, 0.0, 0.0];
        let s = summarize_pattern(PatternKind::Tot, &pred, &truth, KappaWeighting::Linear)
            .unwrap();
        assert!(s.wk.is_nan() && s.icc.is_nan() && s.slope.is_nan());
        assert_eq!(s.mae, 0.0);
        assert_eq!(s.wilcoxon_p, None);
    }

    #[test]
    fn rater_agreement_rows_and_order() {
        let mut records = Vec::new();
        let grades = [
            (0usize, [10.0, 5.0, 0.0]),
            (1, [40.0, 20.0, 25.0]),
            (2, [70.0, 55.0, 30.0]),
            (3, [0.0, 0.0, 0.0]),
        ];
        for (c, g) in grades {
            for level in 1..=2usize {
                records.push(RaterRecord {
                    case_id: case_id(c),
                    level,
                    rater: CONSENSUS_RATER.into(),
                    session: 1,
                    scores: g,
                });
                // rater identical to consensus
                records.push(RaterRecord {
                    case_id: case_id(c),
                    level,
                    rater: "as".into(),
                    session: 1,
                    scores: g,
                });
                // second session, off by one grade step on tot
                let mut off = g;
                off[0] = (off[0] + 5.0).min(100.0);
                records.push(RaterRecord {
                    case_id: case_id(c),
                    level,
                    rater: "as".into(),
                    session: 2,
                    scores: off,
                });
                records.push(RaterRecord {
                    case_id: case_id(c),
                    level,
                    rater: MODEL_RATER.into(),
                    session: 1,
                    scores: off,
                });
            }
        }
        let rows = rater_agreement(&records, KappaWeighting::Linear).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!((rows[0].rater.as_str(), rows[0].session), ("as", 1));
        assert_eq!((rows[1].rater.as_str(), rows[1].session), ("as", 2));
        assert_eq!(rows[2].rater.as_str(), MODEL_RATER);
        // identical rater: perfect agreement on every pattern
        for p in &rows[0].per_pattern {
            assert_eq!(p.mae, 0.0);
            assert_eq!(p.wk, 1.0);
            assert!((p.icc - 1.0).abs() < 1e-12);
        }
        // offset rater: tot MAE is 5, the rest perfect
        assert_eq!(rows[1].per_pattern[0].mae, 5.0);
        assert_eq!(rows[1].per_pattern[1].mae, 0.0);
    }

    #[test]
    fn rater_agreement_requires_consensus() {
        let records = [RaterRecord {
            case_id: case_id(0),
            level: 1,
            rater: "as".into(),
            session: 1,
            scores: [0.0, 0.0, 0.0],
        }];
        assert!(matches!(
            rater_agreement(&records, KappaWeighting::Linear),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn config_validation_catches_mismatches() {
        let mut cfg = tiny_config();
        cfg.crop_dims = [64, 32, 24];
        assert!(cfg.validate().is_err());
        let mut cfg = tiny_config();
        cfg.train.input_extent = 64;
        assert!(cfg.validate().is_err());
        let mut cfg = tiny_config();
        cfg.folds = 1;
        assert!(cfg.validate().is_err());
        let mut cfg = tiny_config();
        cfg.synth_prob = 1.5;
        assert!(cfg.validate().is_err());
        assert!(tiny_config().validate().is_ok());
    }

    #[test]
    fn tiny_config_nets_are_consistent() {
        let cfg = tiny_config();
        assert_eq!(cfg.net_2d.dimensionality, Dimensionality::TwoD);
        assert_eq!(cfg.net_3d.dimensionality, Dimensionality::ThreeD);
        Network::zeroed(cfg.net_2d.clone(), &[32, 32], cfg.train.hu_clip).unwrap();
        Network::zeroed(cfg.net_3d.clone(), &cfg.crop_dims, cfg.train.hu_clip).unwrap();
    }
}
