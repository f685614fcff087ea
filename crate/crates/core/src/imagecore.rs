//! Volume and slice primitives.
//!
//! A [`Volume`] is a 3D scalar grid in Hounsfield-like units with voxel
//! spacing and an axial world origin. Slice index 0 is the caudal (bottom)
//! slice; voxels are stored x-fastest, then y, then z. Intensities are kept
//! as `f32` (the precision the pipeline computes and persists) while all
//! coordinate and interpolation arithmetic runs in `f64`.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// 3D scalar grid with spacing/origin metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    dims: [usize; 3],
    spacing: [f64; 3],
    origin_z: f64,
    voxels: Vec<f32>,
}

impl Volume {
    pub fn new(
        dims: [usize; 3],
        spacing: [f64; 3],
        origin_z: f64,
        voxels: Vec<f32>,
    ) -> Result<Self> {
        if dims.iter().any(|&d| d < 2) {
            return Err(Error::InvalidArgument(format!(
                "volume dims must be >= 2 per axis, got {dims:?}"
            )));
        }
        if spacing.iter().any(|&s| !s.is_finite() || s <= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "voxel spacing must be positive, got {spacing:?}"
            )));
        }
        if !origin_z.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "origin_z must be finite, got {origin_z}"
            )));
        }
        let expected = dims[0] * dims[1] * dims[2];
        if voxels.len() != expected {
            return Err(Error::InvalidArgument(format!(
                "voxel payload length {} does not match dims product {expected}",
                voxels.len()
            )));
        }
        Ok(Volume {
            dims,
            spacing,
            origin_z,
            voxels,
        })
    }

    pub fn constant(dims: [usize; 3], spacing: [f64; 3], origin_z: f64, value: f32) -> Result<Self> {
        let n = dims[0] * dims[1] * dims[2];
        Volume::new(dims, spacing, origin_z, alloc::vec![value; n])
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn origin_z(&self) -> f64 {
        self.origin_z
    }

    pub fn voxels(&self) -> &[f32] {
        &self.voxels
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize, z: usize) -> f32 {
        self.voxels[self.index(x, y, z)]
    }
}

/// 2D scalar image over the same grid family as [`Volume`].
#[derive(Debug, Clone, PartialEq)]
pub struct Slice {
    dims: [usize; 2],
    pixels: Vec<f32>,
}

impl Slice {
    pub fn new(dims: [usize; 2], pixels: Vec<f32>) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidArgument(format!(
                "slice dims must be positive, got {dims:?}"
            )));
        }
        if pixels.len() != dims[0] * dims[1] {
            return Err(Error::InvalidArgument(format!(
                "pixel payload length {} does not match dims product {}",
                pixels.len(),
                dims[0] * dims[1]
            )));
        }
        Ok(Slice { dims, pixels })
    }

    pub fn filled(dims: [usize; 2], value: f32) -> Result<Self> {
        Slice::new(dims, alloc::vec![value; dims[0] * dims[1]])
    }

    pub fn dims(&self) -> [usize; 2] {
        self.dims
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [f32] {
        &mut self.pixels
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        x + self.dims[0] * y
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f32 {
        self.pixels[self.index(x, y)]
    }
}

/// 2D boolean mask aligned with a [`Slice`].
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMask {
    dims: [usize; 2],
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(dims: [usize; 2], bits: Vec<bool>) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidArgument(format!(
                "mask dims must be positive, got {dims:?}"
            )));
        }
        if bits.len() != dims[0] * dims[1] {
            return Err(Error::InvalidArgument(format!(
                "mask payload length {} does not match dims product {}",
                bits.len(),
                dims[0] * dims[1]
            )));
        }
        Ok(BinaryMask { dims, bits })
    }

    pub fn empty(dims: [usize; 2]) -> Self {
        BinaryMask {
            dims,
            bits: alloc::vec![false; dims[0] * dims[1]],
        }
    }

    pub fn dims(&self) -> [usize; 2] {
        self.dims
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        x + self.dims[0] * y
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[self.index(x, y)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        let i = self.index(x, y);
        self.bits[i] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.dims == other.dims
            && self
                .bits
                .iter()
                .zip(other.bits.iter())
                .all(|(&a, &b)| !a || b)
    }

    pub fn intersect(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.check_dims(other)?;
        let bits = self
            .bits
            .iter()
            .zip(other.bits.iter())
            .map(|(&a, &b)| a && b)
            .collect();
        BinaryMask::new(self.dims, bits)
    }

    pub fn union(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.check_dims(other)?;
        let bits = self
            .bits
            .iter()
            .zip(other.bits.iter())
            .map(|(&a, &b)| a || b)
            .collect();
        BinaryMask::new(self.dims, bits)
    }

    /// Dice overlap coefficient; 1.0 when both masks are empty.
    pub fn dice(&self, other: &BinaryMask) -> Result<f64> {
        self.check_dims(other)?;
        let inter = self.intersect(other)?.count();
        let total = self.count() + other.count();
        if total == 0 {
            return Ok(1.0);
        }
        Ok(2.0 * inter as f64 / total as f64)
    }

    fn check_dims(&self, other: &BinaryMask) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::ShapeMismatch(format!(
                "mask dims {:?} vs {:?}",
                self.dims, other.dims
            )));
        }
        Ok(())
    }
}

/// Round half-up: ties at `.5` go toward +infinity.
pub fn round_half_up(x: f64) -> f64 {
    libm::floor(x + 0.5)
}

/// Continuous slice index of a world z position (mm).
///
/// Errors when the index falls outside `[0, dims.z - 1]`.
pub fn world_to_slice(world_z: f64, vol: &Volume) -> Result<f64> {
    let index = (world_z - vol.origin_z) / vol.spacing[2];
    let max = (vol.dims[2] - 1) as f64;
    if !index.is_finite() || index < 0.0 || index > max {
        return Err(Error::OutOfExtent { index, max });
    }
    Ok(index)
}

/// Inverse of [`world_to_slice`]: world z (mm) of a continuous slice index.
pub fn slice_to_world(index: f64, vol: &Volume) -> f64 {
    vol.origin_z + index * vol.spacing[2]
}

/// Axial plane at integer slice index `z`, values copied unchanged.
pub fn extract_slice(vol: &Volume, z: usize) -> Result<Slice> {
    if z >= vol.dims[2] {
        return Err(Error::InvalidArgument(format!(
            "slice index {z} out of range 0..{}",
            vol.dims[2]
        )));
    }
    let plane = vol.dims[0] * vol.dims[1];
    let start = z * plane;
    Slice::new(
        [vol.dims[0], vol.dims[1]],
        vol.voxels[start..start + plane].to_vec(),
    )
}

/// Bracketing indices and fractional weight of position `p` on an axis of
/// `n` samples, clamped to the grid (nearest-edge extension).
#[inline]
fn bracket(p: f64, n: usize) -> (usize, usize, f64) {
    let pc = p.clamp(0.0, (n - 1) as f64);
    let i0 = libm::floor(pc) as usize;
    let i1 = (i0 + 1).min(n - 1);
    (i0, i1, pc - i0 as f64)
}

/// Trilinear resampling onto a new grid that shares the source's world frame
/// (index 0 of each axis stays put; the z origin carries over).
///
/// Sample positions outside the source extent take the nearest-edge value.
pub fn resample_volume(
    vol: &Volume,
    target_dims: [usize; 3],
    target_spacing: [f64; 3],
) -> Result<Volume> {
    if target_dims.iter().any(|&d| d < 2) {
        return Err(Error::InvalidArgument(format!(
            "target dims must be >= 2 per axis, got {target_dims:?}"
        )));
    }
    if target_spacing.iter().any(|&s| !s.is_finite() || s <= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "target spacing must be positive, got {target_spacing:?}"
        )));
    }

    // Source index of target sample j is j * (target / source spacing); the
    // ratio is exactly 1.0 when the geometries match, which makes the
    // identity resample bit-exact.
    let ratio = [
        target_spacing[0] / vol.spacing[0],
        target_spacing[1] / vol.spacing[1],
        target_spacing[2] / vol.spacing[2],
    ];
    let [sx, sy, _] = vol.dims;
    let xb: Vec<(usize, usize, f64)> = (0..target_dims[0])
        .map(|i| bracket(i as f64 * ratio[0], vol.dims[0]))
        .collect();
    let yb: Vec<(usize, usize, f64)> = (0..target_dims[1])
        .map(|j| bracket(j as f64 * ratio[1], vol.dims[1]))
        .collect();
    let zb: Vec<(usize, usize, f64)> = (0..target_dims[2])
        .map(|k| bracket(k as f64 * ratio[2], vol.dims[2]))
        .collect();

    let v = vol.voxels();
    let plane = sx * sy;
    let mut out = Vec::with_capacity(target_dims[0] * target_dims[1] * target_dims[2]);
    for &(z0, z1, fz) in &zb {
        for &(y0, y1, fy) in &yb {
            let row00 = z0 * plane + y0 * sx;
            let row01 = z0 * plane + y1 * sx;
            let row10 = z1 * plane + y0 * sx;
            let row11 = z1 * plane + y1 * sx;
            for &(x0, x1, fx) in &xb {
                let c000 = v[row00 + x0] as f64;
                let c100 = v[row00 + x1] as f64;
                let c010 = v[row01 + x0] as f64;
                let c110 = v[row01 + x1] as f64;
                let c001 = v[row10 + x0] as f64;
                let c101 = v[row10 + x1] as f64;
                let c011 = v[row11 + x0] as f64;
                let c111 = v[row11 + x1] as f64;
                let c00 = c000 + (c100 - c000) * fx;
                let c01 = c010 + (c110 - c010) * fx;
                let c10 = c001 + (c101 - c001) * fx;
                let c11 = c011 + (c111 - c011) * fx;
                let c0 = c00 + (c01 - c00) * fy;
                let c1 = c10 + (c11 - c10) * fy;
                out.push((c0 + (c1 - c0) * fz) as f32);
            }
        }
    }
    Volume::new(target_dims, target_spacing, vol.origin_z, out)
}
