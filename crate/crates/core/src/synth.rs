//! Lesion synthesis on healthy slices.
//!
//! Starting from a healthy slice and its lung mask, two random ellipse-union
//! masks are drawn, clipped to the lungs, filled with ground-glass and
//! reticulation textures, and blended back in with a Gaussian-smoothed alpha
//! so no hard edges are introduced. The scores of the synthetic image are the
//! exact area ratios of the clipped masks against the lung area.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::Rng;

use crate::error::{Error, Result};
use crate::imagecore::{BinaryMask, Slice};

/// TOT/GG/RET extents as percentages of lung area.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ScoreTriple {
    pub tot: f64,
    pub gg: f64,
    pub ret: f64,
}

/// A percentage rounded to the 5% scale: one of {0, 5, ..., 100}.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
pub struct Grade(u8);

impl Grade {
    pub fn new(value: u8) -> Result<Grade> {
        if value > 100 || value % 5 != 0 {
            return Err(Error::InvalidArgument(format!(
                "grade must be a multiple of 5 in 0..=100, got {value}"
            )));
        }
        Ok(Grade(value))
    }

    pub fn value(self) -> u8 {
        self.0
    }

    /// Category index on the fixed 21-bin scale.
    pub fn bin(self) -> usize {
        (self.0 / 5) as usize
    }
}

/// Grades for the three patterns of one slice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct GradeTriple {
    pub tot: Grade,
    pub gg: Grade,
    pub ret: Grade,
}

impl GradeTriple {
    pub fn zeros() -> GradeTriple {
        GradeTriple {
            tot: Grade(0),
            gg: Grade(0),
            ret: Grade(0),
        }
    }

    pub fn is_healthy(&self) -> bool {
        self.tot.0 == 0 && self.gg.0 == 0 && self.ret.0 == 0
    }
}

/// Round a percentage to the nearest multiple of 5; ties round up.
pub fn round_to_grade(pct: f64) -> Result<Grade> {
    if !(0.0..=100.0).contains(&pct) {
        return Err(Error::InvalidArgument(format!(
            "percentage {pct} outside [0, 100]"
        )));
    }
    Grade::new((libm::floor(pct / 5.0 + 0.5) as u8) * 5)
}

/// Disease pattern painted into a lesion mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pattern {
    GroundGlass,
    Reticulation,
}

/// Procedural texture parameters.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TextureParams {
    /// Mean HU of the ground-glass fill.
    pub gg_mean_hu: f64,
    /// Peak amplitude (HU) of the low-pass noise added to the fill.
    pub gg_noise_amp: f64,
    /// Gaussian sigma (px) of the noise low-pass.
    pub gg_noise_sigma: f64,
    /// HU of the reticulation line mesh.
    pub ret_line_hu: f64,
    /// Mesh line spacing (px).
    pub ret_spacing_px: usize,
    /// Mesh line width (px).
    pub ret_line_width_px: usize,
    /// Sigma (px) of the mask blur used as the insertion alpha.
    pub blend_sigma: f64,
}

impl Default for TextureParams {
    fn default() -> Self {
        TextureParams {
            gg_mean_hu: -450.0,
            gg_noise_amp: 60.0,
            gg_noise_sigma: 2.0,
            ret_line_hu: -100.0,
            ret_spacing_px: 8,
            ret_line_width_px: 1,
            blend_sigma: 1.5,
        }
    }
}

impl TextureParams {
    fn validate(&self) -> Result<()> {
        if self.gg_noise_amp < 0.0 || self.gg_noise_sigma <= 0.0 || self.blend_sigma <= 0.0 {
            return Err(Error::InvalidArgument(
                "texture amplitudes/sigmas must be non-negative (sigmas positive)".into(),
            ));
        }
        if self.ret_spacing_px == 0 || self.ret_line_width_px == 0 {
            return Err(Error::InvalidArgument(
                "reticulation spacing and line width must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Every intermediate of one synthesis, for auditing and score recomputation.
#[derive(Debug, Clone)]
pub struct SynthesisTrace {
    pub base: Slice,
    pub lung: BinaryMask,
    pub ellipses_gg: BinaryMask,
    pub ellipses_ret: BinaryMask,
    pub lesion_gg: BinaryMask,
    pub lesion_ret: BinaryMask,
    pub textured_gg: Slice,
    pub textured_ret: Slice,
    pub result: Slice,
    pub scores: ScoreTriple,
}

// ---------------------------------------------------------------------------
// field helpers (f64 scalar fields over a slice grid)
// ---------------------------------------------------------------------------

/// Normalized Gaussian kernel with radius ceil(3 sigma).
fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = libm::ceil(3.0 * sigma) as usize;
    let mut k = Vec::with_capacity(2 * r + 1);
    let mut sum = 0.0;
    for i in -(r as i64)..=(r as i64) {
        let w = libm::exp(-(i as f64) * (i as f64) / (2.0 * sigma * sigma));
        k.push(w);
        sum += w;
    }
    for w in &mut k {
        *w /= sum;
    }
    k
}

/// Separable Gaussian blur with zero padding outside the frame.
fn blur_field(field: &[f64], dims: [usize; 2], sigma: f64) -> Vec<f64> {
    let [w, h] = dims;
    let kernel = gaussian_kernel(sigma);
    let r = (kernel.len() - 1) / 2;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (t, &kw) in kernel.iter().enumerate() {
                let sx = x as i64 + t as i64 - r as i64;
                if sx >= 0 && (sx as usize) < w {
                    acc += kw * field[sx as usize + w * y];
                }
            }
            tmp[x + w * y] = acc;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (t, &kw) in kernel.iter().enumerate() {
                let sy = y as i64 + t as i64 - r as i64;
                if sy >= 0 && (sy as usize) < h {
                    acc += kw * tmp[x + w * sy as usize];
                }
            }
            out[x + w * y] = acc;
        }
    }
    out
}

/// Low-pass white noise scaled so the peak magnitude equals `amp`.
///
/// Peak scaling keeps the field strictly inside [-amp, amp], so texture and
/// phantom intensities stay within their HU bands for every seed.
fn smooth_noise<R: Rng>(dims: [usize; 2], sigma: f64, amp: f64, rng: &mut R) -> Vec<f64> {
    let n = dims[0] * dims[1];
    if amp == 0.0 {
        return vec![0.0; n];
    }
    let white: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut field = blur_field(&white, dims, sigma);
    let peak = field.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    if peak > 0.0 {
        let s = amp / peak;
        for v in &mut field {
            *v *= s;
        }
    }
    field
}

// ---------------------------------------------------------------------------
// healthy phantom
// ---------------------------------------------------------------------------

const BACKGROUND_HU: f64 = -1000.0;
const BODY_HU: f64 = 40.0;
const LUNG_HU: f64 = -850.0;
const PHANTOM_NOISE_AMP: f64 = 30.0;
const PHANTOM_NOISE_SIGMA: f64 = 2.0;

#[derive(Debug, Clone, Copy)]
pub struct Ellipse {
    pub center: (f64, f64),
    pub semi_axes: (f64, f64),
    pub angle: f64,
}

impl Ellipse {
    #[inline]
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let dx = x - self.center.0;
        let dy = y - self.center.1;
        let (s, c) = (libm::sin(self.angle), libm::cos(self.angle));
        let u = (dx * c + dy * s) / self.semi_axes.0;
        let v = (-dx * s + dy * c) / self.semi_axes.1;
        u * u + v * v <= 1.0
    }
}

/// Rasterize the union of ellipses; pixel centers at integer coordinates.
pub fn rasterize_ellipses(dims: [usize; 2], ellipses: &[Ellipse]) -> BinaryMask {
    let mut mask = BinaryMask::empty(dims);
    for e in ellipses {
        let x_lo = libm::floor(e.center.0 - e.semi_axes.0.max(e.semi_axes.1)).max(0.0) as usize;
        let x_hi =
            (libm::ceil(e.center.0 + e.semi_axes.0.max(e.semi_axes.1)) as usize).min(dims[0] - 1);
        let y_lo = libm::floor(e.center.1 - e.semi_axes.0.max(e.semi_axes.1)).max(0.0) as usize;
        let y_hi =
            (libm::ceil(e.center.1 + e.semi_axes.0.max(e.semi_axes.1)) as usize).min(dims[1] - 1);
        for y in y_lo..=y_hi {
            for x in x_lo..=x_hi {
                if e.contains(x as f64, y as f64) {
                    mask.set(x, y, true);
                }
            }
        }
    }
    mask
}

/// Geometry of one healthy thorax cross-section; shared with the 3D phantom
/// generator so lung shape can vary smoothly along z.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ThoraxGeometry {
    pub body: Ellipse,
    pub lungs: [Ellipse; 2],
}

impl ThoraxGeometry {
    pub(crate) fn sample<R: Rng>(dims: [usize; 2], rng: &mut R) -> ThoraxGeometry {
        let (w, h) = (dims[0] as f64, dims[1] as f64);
        let cx = w / 2.0;
        let cy = h / 2.0;
        let body = Ellipse {
            center: (cx, cy),
            semi_axes: (
                0.44 * w * rng.gen_range(0.95..1.0),
                0.46 * h * rng.gen_range(0.95..1.0),
            ),
            angle: 0.0,
        };
        let mut lungs = [body; 2];
        for (i, side) in [-1.0f64, 1.0].iter().enumerate() {
            lungs[i] = Ellipse {
                center: (
                    cx + side * (0.21 * w + rng.gen_range(-0.01..0.01) * w),
                    cy + rng.gen_range(-0.02..0.02) * h,
                ),
                semi_axes: (
                    rng.gen_range(0.11..0.16) * w,
                    rng.gen_range(0.22..0.30) * h,
                ),
                angle: rng.gen_range(-0.15..0.15),
            };
        }
        ThoraxGeometry { body, lungs }
    }

    /// Render at a lung scale factor (1.0 = nominal cross-section).
    pub(crate) fn render<R: Rng>(
        &self,
        dims: [usize; 2],
        lung_scale: f64,
        rng: &mut R,
    ) -> (Slice, BinaryMask) {
        let lungs: Vec<Ellipse> = self
            .lungs
            .iter()
            .map(|l| Ellipse {
                semi_axes: (l.semi_axes.0 * lung_scale, l.semi_axes.1 * lung_scale),
                ..*l
            })
            .collect();
        let mask = rasterize_ellipses(dims, &lungs);
        let noise = smooth_noise(dims, PHANTOM_NOISE_SIGMA, PHANTOM_NOISE_AMP, rng);
        let mut pixels = Vec::with_capacity(dims[0] * dims[1]);
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let base = if mask.get(x, y) {
                    LUNG_HU
                } else if self.body.contains(x as f64, y as f64) {
                    BODY_HU
                } else {
                    BACKGROUND_HU
                };
                pixels.push((base + noise[x + dims[0] * y]) as f32);
            }
        }
        (
            Slice::new(dims, pixels).expect("dims are valid"),
            mask,
        )
    }
}

/// Healthy phantom slice plus the exact lung mask that generated it.
///
/// Background -1000 HU, body ellipse +40 HU, two lung ellipses -850 HU, all
/// with additive smooth noise (peak 30 HU). Deterministic per seed.
pub fn generate_healthy_phantom(seed: u64, dims: [usize; 2]) -> Result<(Slice, BinaryMask)> {
    if dims[0] < 32 || dims[1] < 32 {
        return Err(Error::InvalidArgument(format!(
            "phantom dims {dims:?} too small to fit two lungs (need >= 32 x 32)"
        )));
    }
    let mut rng = crate::rngstream::stream(seed, 0);
    let geo = ThoraxGeometry::sample(dims, &mut rng);
    Ok(geo.render(dims, 1.0, &mut rng))
}

// ---------------------------------------------------------------------------
// lesion masks
// ---------------------------------------------------------------------------

/// Draw 1..=3 random ellipses with centers uniform over the lung pixels.
fn sample_ellipses<R: Rng>(lung: &BinaryMask, rng: &mut R) -> Vec<Ellipse> {
    let [w, h] = lung.dims();
    let centers: Vec<(usize, usize)> = (0..h)
        .flat_map(|y| (0..w).map(move |x| (x, y)))
        .filter(|&(x, y)| lung.get(x, y))
        .collect();
    debug_assert!(!centers.is_empty(), "lung mask must be non-empty");
    let axis_hi = (0.4 * w.min(h) as f64).max(4.0);
    let count = rng.gen_range(1..=3usize);
    (0..count)
        .map(|_| {
            let (cx, cy) = centers[rng.gen_range(0..centers.len())];
            Ellipse {
                center: (cx as f64, cy as f64),
                angle: rng.gen_range(0.0..PI),
                semi_axes: (
                    rng.gen_range(4.0..=axis_hi),
                    rng.gen_range(4.0..=axis_hi),
                ),
            }
        })
        .collect()
}

/// Union of up to 3 random ellipses, clipped to the lung mask.
pub fn random_ellipse_mask<R: Rng>(lung: &BinaryMask, rng: &mut R) -> BinaryMask {
    let raw = rasterize_ellipses(lung.dims(), &sample_ellipses(lung, rng));
    raw.intersect(lung).expect("dims match")
}

// ---------------------------------------------------------------------------
// texture fill and insertion
// ---------------------------------------------------------------------------

/// Fill the masked region of `base` with a disease texture.
///
/// Ground-glass: `gg_mean_hu` plus low-pass noise. Reticulation: the same
/// background overlaid with a jittered two-orientation line mesh at
/// `ret_line_hu`. Pixels outside the mask are untouched.
pub fn fill_texture<R: Rng>(
    base: &Slice,
    mask: &BinaryMask,
    pattern: Pattern,
    params: &TextureParams,
    rng: &mut R,
) -> Result<Slice> {
    params.validate()?;
    if mask.dims() != base.dims() {
        return Err(Error::ShapeMismatch(format!(
            "mask dims {:?} vs slice dims {:?}",
            mask.dims(),
            base.dims()
        )));
    }
    let dims = base.dims();
    let [w, h] = dims;
    if mask.count() == 0 {
        return Ok(base.clone());
    }

    let noise = smooth_noise(dims, params.gg_noise_sigma, params.gg_noise_amp, rng);
    let mut out = base.clone();
    for y in 0..h {
        for x in 0..w {
            if mask.get(x, y) {
                let i = out.index(x, y);
                out.pixels_mut()[i] = (params.gg_mean_hu + noise[x + w * y]) as f32;
            }
        }
    }

    if pattern == Pattern::Reticulation {
        let spacing = params.ret_spacing_px;
        let width = params.ret_line_width_px;
        let jitter = (spacing / 4).max(1) as i64;
        // vertical then horizontal line family, each line's position jittered
        for vertical in [true, false] {
            let extent = if vertical { w } else { h };
            let mut pos = rng.gen_range(0..spacing) as i64;
            while pos < extent as i64 {
                let start = pos + rng.gen_range(-jitter..=jitter);
                for t in 0..width as i64 {
                    let line = start + t;
                    if line < 0 || line >= extent as i64 {
                        continue;
                    }
                    let line = line as usize;
                    let run = if vertical { h } else { w };
                    for s in 0..run {
                        let (x, y) = if vertical { (line, s) } else { (s, line) };
                        if mask.get(x, y) {
                            let i = out.index(x, y);
                            out.pixels_mut()[i] = params.ret_line_hu as f32;
                        }
                    }
                }
                pos += spacing as i64;
            }
        }
    }
    Ok(out)
}

/// Alpha-blend `textured` over `base` with alpha = Gaussian-blurred mask.
pub fn blend_insert(
    base: &Slice,
    textured: &Slice,
    mask: &BinaryMask,
    params: &TextureParams,
) -> Result<Slice> {
    params.validate()?;
    if base.dims() != textured.dims() || base.dims() != mask.dims() {
        return Err(Error::ShapeMismatch(format!(
            "blend inputs disagree: base {:?}, textured {:?}, mask {:?}",
            base.dims(),
            textured.dims(),
            mask.dims()
        )));
    }
    let dims = base.dims();
    let indicator: Vec<f64> = mask.bits().iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    let alpha = blur_field(&indicator, dims, params.blend_sigma);
    let mut pixels = Vec::with_capacity(indicator.len());
    for i in 0..indicator.len() {
        let a = alpha[i];
        pixels.push((a * textured.pixels()[i] as f64 + (1.0 - a) * base.pixels()[i] as f64) as f32);
    }
    Slice::new(dims, pixels)
}

// ---------------------------------------------------------------------------
// scores
// ---------------------------------------------------------------------------

/// Exact area-ratio scores. TOT uses the union of the two lesion masks.
pub fn compute_scores(
    lesion_gg: &BinaryMask,
    lesion_ret: &BinaryMask,
    lung: &BinaryMask,
) -> Result<ScoreTriple> {
    let lung_area = lung.count();
    if lung_area == 0 {
        return Err(Error::EmptyLungs);
    }
    if !lesion_gg.is_subset_of(lung) || !lesion_ret.is_subset_of(lung) {
        return Err(Error::LesionOutsideLung);
    }
    let gg = lesion_gg.count();
    let ret = lesion_ret.count();
    let tot = lesion_gg.union(lesion_ret)?.count();
    Ok(ScoreTriple {
        tot: 100.0 * tot as f64 / lung_area as f64,
        gg: 100.0 * gg as f64 / lung_area as f64,
        ret: 100.0 * ret as f64 / lung_area as f64,
    })
}

// ---------------------------------------------------------------------------
// full synthesis
// ---------------------------------------------------------------------------

/// Run the full synthesis chain on a healthy slice.
///
/// Reticulation is painted last, so it overwrites ground-glass where the two
/// lesion masks overlap. Scores are computed from the clipped masks, never
/// from pixel values.
pub fn synthesize<R: Rng>(
    base: &Slice,
    lung: &BinaryMask,
    params: &TextureParams,
    rng: &mut R,
) -> Result<(Slice, ScoreTriple, SynthesisTrace)> {
    if lung.dims() != base.dims() {
        return Err(Error::ShapeMismatch(format!(
            "lung dims {:?} vs slice dims {:?}",
            lung.dims(),
            base.dims()
        )));
    }
    if lung.count() == 0 {
        return Err(Error::EmptyLungs);
    }
    let ellipses_gg = rasterize_ellipses(lung.dims(), &sample_ellipses(lung, rng));
    let ellipses_ret = rasterize_ellipses(lung.dims(), &sample_ellipses(lung, rng));
    let lesion_gg = ellipses_gg.intersect(lung)?;
    let lesion_ret = ellipses_ret.intersect(lung)?;
    let textured_gg = fill_texture(base, &lesion_gg, Pattern::GroundGlass, params, rng)?;
    let textured_ret = fill_texture(base, &lesion_ret, Pattern::Reticulation, params, rng)?;
    let with_gg = blend_insert(base, &textured_gg, &lesion_gg, params)?;
    let result = blend_insert(&with_gg, &textured_ret, &lesion_ret, params)?;
    let scores = compute_scores(&lesion_gg, &lesion_ret, lung)?;
    let trace = SynthesisTrace {
        base: base.clone(),
        lung: lung.clone(),
        ellipses_gg,
        ellipses_ret,
        lesion_gg,
        lesion_ret,
        textured_gg,
        textured_ret,
        result: result.clone(),
        scores,
    };
    Ok((result, scores, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rngstream::stream;

    #[test]
    fn phantom_is_deterministic_per_seed() {
        let (s1, m1) = generate_healthy_phantom(42, [64, 64]).unwrap();
        let (s2, m2) = generate_healthy_phantom(42, [64, 64]).unwrap();
        assert_eq!(s1, s2);
        assert_eq!(m1, m2);
        let (s3, _) = generate_healthy_phantom(43, [64, 64]).unwrap();
        assert_ne!(s1, s3);
    }

    #[test]
    fn phantom_rejects_tiny_dims() {
        assert!(generate_healthy_phantom(1, [31, 64]).is_err());
        assert!(generate_healthy_phantom(1, [64, 16]).is_err());
    }

    #[test]
    fn phantom_lung_area_fraction_over_seeds() {
        // Monte-Carlo bound established before the build: lung pixels occupy
        // 5%..60% of the slice for the default geometry ranges.
        for seed in 0..100u64 {
            let (_, mask) = generate_healthy_phantom(seed, [96, 96]).unwrap();
            let frac = mask.count() as f64 / (96.0 * 96.0);
            assert!(
                (0.05..=0.60).contains(&frac),
                "seed {seed}: lung fraction {frac}"
            );
        }
    }

    #[test]
    fn forced_circle_pixel_count_matches_area() {
        // brute-force membership x^2 + y^2 <= r^2 equals the rasterizer by
        // construction; the count must be within 2% of pi r^2
        let e = Ellipse {
            center: (64.0, 64.0),
            semi_axes: (20.0, 20.0),
            angle: 0.0,
        };
        let mask = rasterize_ellipses([128, 128], &[e]);
        let mut brute = 0usize;
        for y in 0..128i64 {
            for x in 0..128i64 {
                if (x - 64) * (x - 64) + (y - 64) * (y - 64) <= 400 {
                    brute += 1;
                }
            }
        }
        assert_eq!(mask.count(), brute);
        let area = PI * 400.0;
        assert!((mask.count() as f64 - area).abs() <= 0.02 * area);
    }

    #[test]
    fn random_ellipse_mask_is_subset_of_lung() {
        let (_, lung) = generate_healthy_phantom(5, [96, 96]).unwrap();
        let mut rng = stream(9, 0);
        for _ in 0..20 {
            let m = random_ellipse_mask(&lung, &mut rng);
            assert!(m.is_subset_of(&lung));
            assert!(m.count() > 0);
        }
    }

    #[test]
    fn single_pixel_lung_yields_that_pixel() {
        let mut lung = BinaryMask::empty([48, 48]);
        lung.set(20, 20, true);
        let mut rng = stream(3, 0);
        let m = random_ellipse_mask(&lung, &mut rng);
        assert!(m.is_subset_of(&lung));
        assert_eq!(m.count(), 1);
    }

    #[test]
    fn gg_fill_zero_amplitude_is_exact_mean() {
        let base = Slice::filled([64, 64], -850.0).unwrap();
        let mut mask = BinaryMask::empty([64, 64]);
        for y in 10..40 {
            for x in 10..40 {
                mask.set(x, y, true);
            }
        }
        let params = TextureParams {
            gg_noise_amp: 0.0,
            ..TextureParams::default()
        };
        let mut rng = stream(1, 0);
        let out = fill_texture(&base, &mask, Pattern::GroundGlass, &params, &mut rng).unwrap();
        for y in 0..64 {
            for x in 0..64 {
                if mask.get(x, y) {
                    assert_eq!(out.at(x, y), -450.0);
                } else {
                    assert_eq!(out.at(x, y), -850.0);
                }
            }
        }
    }

    #[test]
    fn gg_fill_mean_near_target() {
        // law-of-large-numbers check against the direct mean of the masked
        // pixels; mask has >> 500 px
        let base = Slice::filled([96, 96], -850.0).unwrap();
        let mut mask = BinaryMask::empty([96, 96]);
        for y in 8..88 {
            for x in 8..88 {
                mask.set(x, y, true);
            }
        }
        let params = TextureParams::default();
        let mut rng = stream(17, 0);
        let out = fill_texture(&base, &mask, Pattern::GroundGlass, &params, &mut rng).unwrap();
        let (mut sum, mut n) = (0.0, 0usize);
        for y in 0..96 {
            for x in 0..96 {
                if mask.get(x, y) {
                    sum += out.at(x, y) as f64;
                    n += 1;
                }
            }
        }
        let mean = sum / n as f64;
        assert!(
            (mean - params.gg_mean_hu).abs() <= 15.0,
            "masked mean {mean} vs {}",
            params.gg_mean_hu
        );
    }

    #[test]
    fn ret_fill_line_coverage_matches_mesh_density() {
        // analytic coverage of a two-orientation mesh: ~ 2 * width / spacing
        let base = Slice::filled([128, 128], -850.0).unwrap();
        let mut mask = BinaryMask::empty([128, 128]);
        for y in 4..124 {
            for x in 4..124 {
                mask.set(x, y, true);
            }
        }
        let params = TextureParams::default();
        let expect = 2.0 * params.ret_line_width_px as f64 / params.ret_spacing_px as f64;
        for seed in 0..5u64 {
            let mut rng = stream(seed, 0);
            let out =
                fill_texture(&base, &mask, Pattern::Reticulation, &params, &mut rng).unwrap();
            let (mut on_line, mut n) = (0usize, 0usize);
            for y in 0..128 {
                for x in 0..128 {
                    if mask.get(x, y) {
                        n += 1;
                        if (out.at(x, y) as f64 - params.ret_line_hu).abs() <= 10.0 {
                            on_line += 1;
                        }
                    }
                }
            }
            let frac = on_line as f64 / n as f64;
            assert!(
                (expect - 0.1..=expect + 0.1).contains(&frac),
                "seed {seed}: line fraction {frac}, expected about {expect}"
            );
        }
    }

    #[test]
    fn fill_texture_empty_mask_returns_base() {
        let base = Slice::filled([48, 48], -800.0).unwrap();
        let mask = BinaryMask::empty([48, 48]);
        let mut rng = stream(2, 0);
        let out = fill_texture(
            &base,
            &mask,
            Pattern::GroundGlass,
            &TextureParams::default(),
            &mut rng,
        )
        .unwrap();
        assert_eq!(out, base);
    }

    #[test]
    fn blend_sigma_zero_limit_degenerates_to_indicator() {
        let base = Slice::filled([32, 32], 0.0).unwrap();
        let textured = Slice::filled([32, 32], 100.0).unwrap();
        let mut mask = BinaryMask::empty([32, 32]);
        for y in 10..20 {
            for x in 10..20 {
                mask.set(x, y, true);
            }
        }
        let params = TextureParams {
            blend_sigma: 1e-6,
            ..TextureParams::default()
        };
        let out = blend_insert(&base, &textured, &mask, &params).unwrap();
        for y in 0..32 {
            for x in 0..32 {
                let want = if mask.get(x, y) { 100.0 } else { 0.0 };
                assert_eq!(out.at(x, y), want);
            }
        }
    }

    #[test]
    fn blend_empty_mask_is_identity() {
        let (base, _) = generate_healthy_phantom(7, [64, 64]).unwrap();
        let textured = Slice::filled([64, 64], 500.0).unwrap();
        let mask = BinaryMask::empty([64, 64]);
        let out = blend_insert(&base, &textured, &mask, &TextureParams::default()).unwrap();
        assert_eq!(out, base);
    }

    #[test]
    fn blend_gradient_bounded_on_step_edge() {
        // half-plane mask over a flat base: the steepest alpha ramp of a
        // blurred step is ~ 1/(sigma sqrt(2 pi)), comfortably under the
        // 1.1/(2 sigma) bound
        let n = 64usize;
        let base = Slice::filled([n, n], 0.0).unwrap();
        let contrast = 400.0f32;
        let textured = Slice::filled([n, n], contrast).unwrap();
        let mut mask = BinaryMask::empty([n, n]);
        for y in 0..n {
            for x in 0..n / 2 {
                mask.set(x, y, true);
            }
        }
        let params = TextureParams::default();
        let out = blend_insert(&base, &textured, &mask, &params).unwrap();
        let mut max_grad = 0.0f64;
        let y = n / 2;
        for x in 0..n - 1 {
            let g = (out.at(x + 1, y) as f64 - out.at(x, y) as f64).abs();
            max_grad = max_grad.max(g);
        }
        let bound = (contrast as f64 / (2.0 * params.blend_sigma)) * 1.1;
        assert!(max_grad <= bound, "max gradient {max_grad} > bound {bound}");
        assert!(max_grad > 0.0);
    }

    #[test]
    fn compute_scores_pinned_fixtures() {
        // |lung|=1000, |gg|=100, |ret|=0
        let mut lung = BinaryMask::empty([50, 20]);
        for i in 0..1000 {
            lung.set(i % 50, i / 50, true);
        }
        let mut gg = BinaryMask::empty([50, 20]);
        for i in 0..100 {
            gg.set(i % 50, i / 50, true);
        }
        let ret = BinaryMask::empty([50, 20]);
        let s = compute_scores(&gg, &ret, &lung).unwrap();
        assert_eq!((s.tot, s.gg, s.ret), (10.0, 10.0, 0.0));

        // |lung|=2000, |gg|=300, |ret|=100, overlap 50 -> (17.5, 15, 5)
        let mut lung = BinaryMask::empty([50, 40]);
        for i in 0..2000 {
            lung.set(i % 50, i / 50, true);
        }
        let mut gg = BinaryMask::empty([50, 40]);
        for i in 0..300 {
            gg.set(i % 50, i / 50, true);
        }
        let mut ret = BinaryMask::empty([50, 40]);
        for i in 250..350 {
            ret.set(i % 50, i / 50, true);
        }
        let s = compute_scores(&gg, &ret, &lung).unwrap();
        assert_eq!((s.tot, s.gg, s.ret), (17.5, 15.0, 5.0));

        // gg = ret = lung -> (100, 100, 100)
        let s = compute_scores(&lung, &lung, &lung).unwrap();
        assert_eq!((s.tot, s.gg, s.ret), (100.0, 100.0, 100.0));
    }

    #[test]
    fn compute_scores_error_paths() {
        let lung = BinaryMask::empty([8, 8]);
        let m = BinaryMask::empty([8, 8]);
        assert_eq!(compute_scores(&m, &m, &lung), Err(Error::EmptyLungs));

        let mut lung = BinaryMask::empty([8, 8]);
        lung.set(1, 1, true);
        let mut outside = BinaryMask::empty([8, 8]);
        outside.set(2, 2, true);
        assert_eq!(
            compute_scores(&outside, &m, &lung),
            Err(Error::LesionOutsideLung)
        );
    }

    #[test]
    fn grade_rounding_pinned() {
        assert_eq!(round_to_grade(23.0).unwrap().value(), 25);
        assert_eq!(round_to_grade(2.4).unwrap().value(), 0);
        assert_eq!(round_to_grade(2.5).unwrap().value(), 5);
        assert_eq!(round_to_grade(97.6).unwrap().value(), 100);
        assert_eq!(round_to_grade(0.0).unwrap().value(), 0);
        assert_eq!(round_to_grade(100.0).unwrap().value(), 100);
        assert!(round_to_grade(-0.1).is_err());
        assert!(round_to_grade(100.1).is_err());
    }

    #[test]
    fn grade_rounding_idempotent() {
        for g in (0..=100).step_by(5) {
            let once = round_to_grade(g as f64).unwrap();
            let twice = round_to_grade(once.value() as f64).unwrap();
            assert_eq!(once, twice);
        }
    }

    #[test]
    fn synthesize_scores_match_trace_recomputation() {
        let (base, lung) = generate_healthy_phantom(3, [64, 64]).unwrap();
        let params = TextureParams::default();
        for seed in 0..50u64 {
            let mut rng = stream(seed, 1);
            let (_, scores, trace) = synthesize(&base, &lung, &params, &mut rng).unwrap();
            let recomputed =
                compute_scores(&trace.lesion_gg, &trace.lesion_ret, &trace.lung).unwrap();
            assert_eq!(scores, recomputed);
            assert!(scores.tot >= scores.gg.max(scores.ret) - 1e-12);
            assert!(scores.tot <= scores.gg + scores.ret + 1e-12);
        }
    }

    #[test]
    fn synthesize_deterministic_per_seed() {
        let (base, lung) = generate_healthy_phantom(8, [64, 64]).unwrap();
        let params = TextureParams::default();
        let (h1, s1, _) = synthesize(&base, &lung, &params, &mut stream(5, 2)).unwrap();
        let (h2, s2, _) = synthesize(&base, &lung, &params, &mut stream(5, 2)).unwrap();
        assert_eq!(h1, h2);
        assert_eq!(s1, s2);
    }

    #[test]
    fn synthesize_locality_outside_smoothing_band() {
        // pixels farther (Chebyshev, matching the separable kernel reach)
        // than ceil(4 sigma) from any lesion pixel equal the base exactly
        let (base, lung) = generate_healthy_phantom(12, [96, 96]).unwrap();
        let params = TextureParams::default();
        let band = libm::ceil(4.0 * params.blend_sigma) as i64;
        let mut rng = stream(21, 3);
        let (result, _, trace) = synthesize(&base, &lung, &params, &mut rng).unwrap();
        let union = trace.lesion_gg.union(&trace.lesion_ret).unwrap();
        let [w, h] = union.dims();
        let mut checked = 0usize;
        for y in 0..h {
            for x in 0..w {
                let mut near = false;
                'scan: for dy in -band..=band {
                    for dx in -band..=band {
                        let nx = x as i64 + dx;
                        let ny = y as i64 + dy;
                        if nx >= 0
                            && ny >= 0
                            && (nx as usize) < w
                            && (ny as usize) < h
                            && union.get(nx as usize, ny as usize)
                        {
                            near = true;
                            break 'scan;
                        }
                    }
                }
                if !near {
                    assert_eq!(result.at(x, y), base.at(x, y), "pixel ({x},{y}) moved");
                    checked += 1;
                }
            }
        }
        assert!(checked > 0);
    }

    #[test]
    fn segmenting_phantom_matches_generator_mask() {
        let (slice, truth) = generate_healthy_phantom(31, [128, 128]).unwrap();
        let mask =
            crate::lungmask::segment_lungs(&slice, &crate::lungmask::MorphParams::default())
                .unwrap();
        assert!(mask.dice(&truth).unwrap() >= 0.98);
    }
}
