//! Balanced resampling and the level-covering random z-crop.
//!
//! Training slices are drawn with probability inversely proportional to the
//! frequency of their grade bin, so every occupied bin is sampled uniformly.
//! Healthy items can be replaced on the fly by a fresh synthesis with
//! probability `synth_prob`.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::imagecore::{BinaryMask, Slice, Volume};
use crate::synth::{self, Grade, GradeTriple, ScoreTriple, TextureParams};

/// Histogram over the fixed 21 grade bins (0, 5, ..., 100).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScoreHistogram {
    counts: [u64; 21],
}

impl ScoreHistogram {
    pub fn counts(&self) -> &[u64; 21] {
        &self.counts
    }

    pub fn count(&self, grade: Grade) -> u64 {
        self.counts[grade.bin()]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Bin counts of a grade list; empty input gives an all-zero histogram.
pub fn score_histogram(grades: &[Grade]) -> ScoreHistogram {
    let mut counts = [0u64; 21];
    for g in grades {
        counts[g.bin()] += 1;
    }
    ScoreHistogram { counts }
}

/// Which pattern's grade drives the balancing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum BalanceKey {
    Tot,
    Gg,
    Ret,
}

impl BalanceKey {
    pub fn grade_of(&self, t: &GradeTriple) -> Grade {
        match self {
            BalanceKey::Tot => t.tot,
            BalanceKey::Gg => t.gg,
            BalanceKey::Ret => t.ret,
        }
    }
}

/// Normalized per-item sampling weights with a precomputed CDF.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleWeights {
    w: Vec<f64>,
    cdf: Vec<f64>,
}

impl SampleWeights {
    pub fn new(weights: Vec<f64>) -> Result<SampleWeights> {
        if weights.is_empty() {
            return Err(Error::InvalidArgument("weights must be non-empty".into()));
        }
        if weights.iter().any(|&w| !w.is_finite() || w <= 0.0) {
            return Err(Error::InvalidArgument("weights must be positive".into()));
        }
        let sum: f64 = weights.iter().sum();
        let w: Vec<f64> = weights.iter().map(|x| x / sum).collect();
        let mut cdf = Vec::with_capacity(w.len());
        let mut acc = 0.0;
        for &wi in &w {
            acc += wi;
            cdf.push(acc);
        }
        if let Some(last) = cdf.last_mut() {
            *last = 1.0;
        }
        Ok(SampleWeights { w, cdf })
    }

    pub fn weights(&self) -> &[f64] {
        &self.w
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    /// Index of one weighted draw.
    pub fn draw<R: Rng>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.gen();
        self.cdf.partition_point(|&c| c <= u).min(self.w.len() - 1)
    }
}

/// Weights inversely proportional to the count of each item's grade bin.
pub fn balanced_weights(items: &[GradeTriple], key: BalanceKey) -> Result<SampleWeights> {
    if items.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot balance an empty dataset".into(),
        ));
    }
    let grades: Vec<Grade> = items.iter().map(|t| key.grade_of(t)).collect();
    let hist = score_histogram(&grades);
    let weights = grades
        .iter()
        .map(|g| 1.0 / hist.count(*g) as f64)
        .collect();
    SampleWeights::new(weights)
}

/// One stored training slice. `lung` is present only for items eligible as
/// synthesis bases (stored grade triple all zero).
#[derive(Debug, Clone)]
pub struct DatasetItem {
    pub slice: Slice,
    pub grades: GradeTriple,
    pub lung: Option<BinaryMask>,
}

/// A slice dataset for score training.
#[derive(Debug, Clone, Default)]
pub struct SliceDataset {
    pub items: Vec<DatasetItem>,
}

impl SliceDataset {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn grades(&self) -> Vec<GradeTriple> {
        self.items.iter().map(|i| i.grades).collect()
    }
}

/// One sampled training example.
#[derive(Debug, Clone)]
pub struct BatchItem {
    pub slice: Slice,
    pub scores: ScoreTriple,
    pub synthetic: bool,
}

/// Draw a batch i.i.d. by `weights` (with replacement). Healthy-eligible
/// draws are replaced by a fresh synthesis with probability `synth_prob`.
pub fn sample_batch<R: Rng>(
    dataset: &SliceDataset,
    weights: &SampleWeights,
    batch: usize,
    synth_prob: f64,
    texture: &TextureParams,
    rng: &mut R,
) -> Result<Vec<BatchItem>> {
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("dataset is empty".into()));
    }
    if weights.len() != dataset.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} weights for {} items",
            weights.len(),
            dataset.len()
        )));
    }
    if batch == 0 {
        return Err(Error::InvalidArgument("batch must be >= 1".into()));
    }
    if !(0.0..=1.0).contains(&synth_prob) {
        return Err(Error::InvalidArgument(format!(
            "synth_prob {synth_prob} outside [0, 1]"
        )));
    }
    let mut out = Vec::with_capacity(batch);
    for _ in 0..batch {
        let idx = weights.draw(rng);
        let item = &dataset.items[idx];
        let eligible = item.grades.is_healthy() && item.lung.is_some();
        if eligible && synth_prob > 0.0 && rng.gen_bool(synth_prob) {
            let lung = item.lung.as_ref().expect("eligibility implies lung");
            let (slice, scores, _) = synth::synthesize(&item.slice, lung, texture, rng)?;
            out.push(BatchItem {
                slice,
                scores,
                synthetic: true,
            });
        } else {
            out.push(BatchItem {
                slice: item.slice.clone(),
                scores: ScoreTriple {
                    tot: item.grades.tot.value() as f64,
                    gg: item.grades.gg.value() as f64,
                    ret: item.grades.ret.value() as f64,
                },
                synthetic: false,
            });
        }
    }
    Ok(out)
}

/// Five continuous slice indices, stored caudal-to-cranial (ascending).
///
/// `slices()[0]` is the most caudal level (clinical level 5) and
/// `slices()[4]` the most cranial (clinical level 1); use [`Self::level`]
/// for clinical numbering.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LevelAnnotation {
    slices: [f64; 5],
}

impl LevelAnnotation {
    pub fn new(slices: [f64; 5], depth: usize) -> Result<LevelAnnotation> {
        let max = (depth - 1) as f64;
        for (i, &s) in slices.iter().enumerate() {
            if !s.is_finite() || s < 0.0 || s > max {
                return Err(Error::InvalidArgument(format!(
                    "level index {s} (position {i}) outside [0, {max}]"
                )));
            }
        }
        if slices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument(format!(
                "level indices must be strictly ascending caudal-to-cranial, got {slices:?}"
            )));
        }
        Ok(LevelAnnotation { slices })
    }

    pub fn slices(&self) -> [f64; 5] {
        self.slices
    }

    /// Index of clinical level `k` in 1..=5 (level 5 most caudal).
    pub fn level(&self, k: usize) -> f64 {
        assert!((1..=5).contains(&k), "clinical level must be 1..=5");
        self.slices[5 - k]
    }

    pub fn min(&self) -> f64 {
        self.slices[0]
    }

    pub fn max(&self) -> f64 {
        self.slices[4]
    }

    /// Annotation expressed in a frame shifted down by `z0` slices.
    pub fn shifted(&self, z0: f64, new_depth: usize) -> Result<LevelAnnotation> {
        LevelAnnotation::new(self.slices.map(|s| s - z0), new_depth)
    }
}

/// Inclusive range of feasible crop starts `z0`: the crop must contain all
/// five levels and stay inside the volume.
pub fn feasible_z0_bounds(
    levels: &LevelAnnotation,
    crop_depth: usize,
    depth: usize,
) -> Result<(usize, usize)> {
    if crop_depth == 0 || crop_depth > depth {
        return Err(Error::InvalidArgument(format!(
            "crop depth {crop_depth} outside 1..={depth}"
        )));
    }
    let span = levels.max() - levels.min();
    // z0 >= max(levels) - (crop_depth - 1), z0 <= min(levels), 0 <= z0 <= depth - crop_depth
    let lo = libm::ceil(levels.max() - (crop_depth as f64 - 1.0)).max(0.0) as usize;
    let hi_f = libm::floor(levels.min()).min((depth - crop_depth) as f64);
    if hi_f < lo as f64 {
        return Err(Error::InfeasibleCrop { span, crop_depth });
    }
    Ok((lo, hi_f as usize))
}

/// Random z-crop covering all five levels; in-plane extent is untouched.
///
/// Returns the cropped volume (origin shifted so world coordinates are
/// preserved) and the annotation in the crop frame.
pub fn random_crop_z<R: Rng>(
    vol: &Volume,
    levels: &LevelAnnotation,
    crop_dims: [usize; 3],
    rng: &mut R,
) -> Result<(Volume, LevelAnnotation)> {
    let dims = vol.dims();
    if crop_dims[0] != dims[0] || crop_dims[1] != dims[1] {
        return Err(Error::InvalidArgument(format!(
            "in-plane crop dims {:?} must equal volume in-plane dims {:?}",
            [crop_dims[0], crop_dims[1]],
            [dims[0], dims[1]]
        )));
    }
    let (lo, hi) = feasible_z0_bounds(levels, crop_dims[2], dims[2])?;
    let z0 = rng.gen_range(lo..=hi);
    crop_at(vol, levels, crop_dims[2], z0)
}

/// Deterministic z-crop at a given start (shared by training and the
/// centered evaluation crop).
pub fn crop_at(
    vol: &Volume,
    levels: &LevelAnnotation,
    crop_depth: usize,
    z0: usize,
) -> Result<(Volume, LevelAnnotation)> {
    let cropped = crop_volume_z(vol, z0, crop_depth)?;
    let shifted = levels.shifted(z0 as f64, crop_depth)?;
    Ok((cropped, shifted))
}

/// Plain z-range copy of a volume; the origin shifts so world coordinates
/// are preserved.
pub fn crop_volume_z(vol: &Volume, z0: usize, crop_depth: usize) -> Result<Volume> {
    let dims = vol.dims();
    if z0 + crop_depth > dims[2] {
        return Err(Error::InvalidArgument(format!(
            "crop [{z0}, {}) exceeds depth {}",
            z0 + crop_depth,
            dims[2]
        )));
    }
    let plane = dims[0] * dims[1];
    let voxels = vol.voxels()[z0 * plane..(z0 + crop_depth) * plane].to_vec();
    Volume::new(
        [dims[0], dims[1], crop_depth],
        vol.spacing(),
        vol.origin_z() + z0 as f64 * vol.spacing()[2],
        voxels,
    )
}

/// Scale level indices to regression targets in [0, 1].
pub fn normalize_targets(levels: &LevelAnnotation, depth: usize) -> Result<[f64; 5]> {
    if depth < 2 {
        return Err(Error::InvalidArgument("depth must be >= 2".into()));
    }
    let max = (depth - 1) as f64;
    if levels.max() > max {
        return Err(Error::InvalidArgument(format!(
            "level {} outside [0, {max}]",
            levels.max()
        )));
    }
    Ok(levels.slices().map(|s| s / max))
}

/// Inverse of [`normalize_targets`] for one component.
pub fn denormalize_target(value: f64, depth: usize) -> f64 {
    value * (depth - 1) as f64
}
