//! Synthetic 3D thorax phantoms for the level-selection task.
//!
//! A phantom stacks per-slice thorax cross-sections whose lung area varies
//! smoothly along z, and embeds a distinct bright geometric marker at each of
//! the five annotated level slices. Ground truth is exact by construction.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::imagecore::{round_half_up, Volume};
use crate::rngstream;
use crate::sampling::LevelAnnotation;
use crate::synth::ThoraxGeometry;

const MARKER_HU: f64 = 250.0;

/// Geometry of one phantom volume.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PhantomVolumeSpec {
    pub in_plane: [usize; 2],
    pub depth: usize,
    /// Level positions as fractions of (depth - 1), ascending caudal-to-cranial.
    pub level_fractions: [f64; 5],
    /// Uniform annotation jitter, as a fraction of (depth - 1).
    pub jitter: f64,
    pub spacing: [f64; 3],
    pub origin_z: f64,
    /// Half-extent of the level markers in px.
    pub marker_radius: usize,
}

impl Default for PhantomVolumeSpec {
    fn default() -> Self {
        PhantomVolumeSpec {
            in_plane: [64, 64],
            depth: 64,
            level_fractions: [0.18, 0.35, 0.52, 0.70, 0.88],
            jitter: 0.02,
            spacing: [1.2, 1.2, 1.2],
            origin_z: 0.0,
            marker_radius: 3,
        }
    }
}

impl PhantomVolumeSpec {
    pub fn validate(&self) -> Result<()> {
        if self.in_plane[0] < 32 || self.in_plane[1] < 32 {
            return Err(Error::InvalidArgument(format!(
                "phantom in-plane dims {:?} too small (need >= 32 x 32)",
                self.in_plane
            )));
        }
        if self.depth < 8 {
            return Err(Error::InvalidArgument("phantom depth must be >= 8".into()));
        }
        if self
            .level_fractions
            .iter()
            .any(|&f| !(0.0..1.0).contains(&f) || f == 0.0)
        {
            return Err(Error::InvalidArgument(format!(
                "level fractions must lie strictly inside (0, 1), got {:?}",
                self.level_fractions
            )));
        }
        if self.level_fractions.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument(
                "level fractions must be strictly increasing".into(),
            ));
        }
        // adjacent levels must stay >= 2 slices apart after jitter
        let max = (self.depth - 1) as f64;
        for w in self.level_fractions.windows(2) {
            if (w[1] - w[0]) * max - 2.0 * self.jitter * max < 2.0 {
                return Err(Error::InvalidArgument(format!(
                    "levels at fractions {w:?} come closer than 2 slices at depth {}",
                    self.depth
                )));
            }
        }
        if !(0.0..0.1).contains(&self.jitter) {
            return Err(Error::InvalidArgument(format!(
                "jitter {} outside [0, 0.1)",
                self.jitter
            )));
        }
        if self.spacing.iter().any(|&s| s <= 0.0) {
            return Err(Error::InvalidArgument("spacing must be positive".into()));
        }
        if self.marker_radius == 0 || self.marker_radius > self.in_plane[0] / 8 {
            return Err(Error::InvalidArgument(format!(
                "marker radius {} outside 1..={}",
                self.marker_radius,
                self.in_plane[0] / 8
            )));
        }
        Ok(())
    }

    /// Marker footprint for clinical level `k` (1..=5): pixel offsets of the
    /// stamp and its in-plane anchor. Each level gets its own shape at its
    /// own mediastinal position, so a matched template peaks only at that
    /// level's slice.
    pub fn marker_stamp(&self, k: usize) -> (Vec<(i32, i32)>, (usize, usize)) {
        assert!((1..=5).contains(&k), "clinical level must be 1..=5");
        let r = self.marker_radius as i32;
        let cx = self.in_plane[0] / 2;
        // anchors spread along the vertical mediastinal strip between lungs
        let cy = self.in_plane[1] * (2 + k) / 9;
        let mut px = Vec::new();
        match k {
            // level 1: vertical bar
            1 => {
                for dy in -r..=r {
                    px.push((0, dy));
                }
            }
            // level 2: two small discs ("bifurcation")
            2 => {
                for dy in -r..=r {
                    for dx in -r..=r {
                        if dx * dx + dy * dy <= (r / 2 + 1) * (r / 2 + 1) {
                            px.push((dx - r, dy));
                            px.push((dx + r, dy));
                        }
                    }
                }
            }
            // level 3: plus cross
            3 => {
                for t in -r..=r {
                    px.push((t, 0));
                    px.push((0, t));
                }
            }
            // level 4: hollow ring
            4 => {
                for dy in -r..=r {
                    for dx in -r..=r {
                        let d2 = dx * dx + dy * dy;
                        if d2 <= r * r && d2 >= (r - 1) * (r - 1) {
                            px.push((dx, dy));
                        }
                    }
                }
            }
            // level 5: filled disc ("dome onset")
            _ => {
                for dy in -r..=r {
                    for dx in -r..=r {
                        if dx * dx + dy * dy <= r * r {
                            px.push((dx, dy));
                        }
                    }
                }
            }
        }
        px.sort_unstable();
        px.dedup();
        (px, (cx, cy))
    }
}

/// Case identifier used for fold assignment and file naming.
pub fn case_id(index: usize) -> String {
    format!("case{index:04}")
}

/// Lung cross-section scale along z: large mid-volume, tapering toward both
/// ends but never vanishing.
fn lung_profile(z: usize, depth: usize) -> f64 {
    let t = (z as f64 + 0.5) / depth as f64;
    0.55 + 0.45 * libm::sin(core::f64::consts::PI * t)
}

/// Generate one phantom volume and its exact level annotation.
///
/// Deterministic per (spec, seed). Level k's marker is stamped on the slice
/// nearest its (jittered) annotation.
pub fn generate_phantom_volume(
    spec: &PhantomVolumeSpec,
    seed: u64,
) -> Result<(Volume, LevelAnnotation)> {
    spec.validate()?;
    let [w, h] = spec.in_plane;
    let depth = spec.depth;
    let max = (depth - 1) as f64;

    let mut rng = rngstream::stream(seed, 0);
    let geo = ThoraxGeometry::sample(spec.in_plane, &mut rng);

    let mut slices = [0.0f64; 5];
    for (i, &f) in spec.level_fractions.iter().enumerate() {
        let jitter = if spec.jitter > 0.0 {
            rng.gen_range(-spec.jitter..spec.jitter) * max
        } else {
            0.0
        };
        slices[i] = (f * max + jitter).clamp(0.0, max);
    }
    let levels = LevelAnnotation::new(slices, depth)?;

    let mut voxels = Vec::with_capacity(w * h * depth);
    for z in 0..depth {
        let (slice, _) = geo.render(spec.in_plane, lung_profile(z, depth), &mut rng);
        voxels.extend_from_slice(slice.pixels());
    }

    // stamp markers: clinical level k lives at slices[5 - k]
    for k in 1..=5usize {
        let z = round_half_up(levels.level(k)) as usize;
        let (stamp, (cx, cy)) = spec.marker_stamp(k);
        for &(dx, dy) in &stamp {
            let x = cx as i32 + dx;
            let y = cy as i32 + dy;
            if x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h {
                voxels[z * w * h + y as usize * w + x as usize] = MARKER_HU as f32;
            }
        }
    }

    let vol = Volume::new([w, h, depth], spec.spacing, spec.origin_z, voxels)?;
    Ok((vol, levels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imagecore::extract_slice;

    #[test]
    fn phantom_volume_deterministic() {
        let spec = PhantomVolumeSpec::default();
        let (v1, a1) = generate_phantom_volume(&spec, 7).unwrap();
        let (v2, a2) = generate_phantom_volume(&spec, 7).unwrap();
        assert_eq!(v1, v2);
        assert_eq!(a1, a2);
        let (v3, _) = generate_phantom_volume(&spec, 8).unwrap();
        assert_ne!(v1, v3);
    }

    #[test]
    fn annotation_strictly_increasing_within_range() {
        let spec = PhantomVolumeSpec::default();
        for seed in 0..30u64 {
            let (_, levels) = generate_phantom_volume(&spec, seed).unwrap();
            let s = levels.slices();
            assert!(s.windows(2).all(|w| w[0] < w[1]), "seed {seed}: {s:?}");
            assert!(s[0] >= 0.0 && s[4] <= (spec.depth - 1) as f64);
        }
    }

    #[test]
    fn markers_found_by_template_correlation() {
        // oracle: correlate each marker stamp (at its anchor) against the raw
        // volume over all z; the peak must land on the annotated slice +/- 1
        let spec = PhantomVolumeSpec::default();
        for seed in [3u64, 11, 29] {
            let (vol, levels) = generate_phantom_volume(&spec, seed).unwrap();
            for k in 1..=5usize {
                let (stamp, (cx, cy)) = spec.marker_stamp(k);
                let mut best = (f64::NEG_INFINITY, 0usize);
                for z in 0..spec.depth {
                    let slice = extract_slice(&vol, z).unwrap();
                    let mut corr = 0.0;
                    for &(dx, dy) in &stamp {
                        let x = (cx as i32 + dx) as usize;
                        let y = (cy as i32 + dy) as usize;
                        corr += slice.at(x, y) as f64;
                    }
                    if corr > best.0 {
                        best = (corr, z);
                    }
                }
                let annotated = round_half_up(levels.level(k));
                assert!(
                    (best.1 as f64 - annotated).abs() <= 1.0,
                    "seed {seed} level {k}: peak at {} vs annotation {annotated}",
                    best.1
                );
            }
        }
    }

    #[test]
    fn markers_distinct_across_levels() {
        let spec = PhantomVolumeSpec::default();
        let mut anchors = Vec::new();
        for k in 1..=5usize {
            let (stamp, anchor) = spec.marker_stamp(k);
            assert!(!stamp.is_empty());
            anchors.push(anchor);
        }
        anchors.dedup();
        assert_eq!(anchors.len(), 5, "marker anchors must not collide");
    }

    #[test]
    fn spec_validation_rejects_bad_fractions() {
        let mut spec = PhantomVolumeSpec::default();
        spec.level_fractions = [0.1, 0.3, 0.2, 0.7, 0.9];
        assert!(generate_phantom_volume(&spec, 1).is_err());
        let mut spec = PhantomVolumeSpec::default();
        spec.level_fractions = [0.2, 0.21, 0.5, 0.7, 0.9];
        assert!(spec.validate().is_err(), "levels closer than 2 slices");
    }
}
