//! PGM exports for quick inspection: binary masks as 8-bit P5 (0/255),
//! slices as 16-bit P5 with the HU-to-gray affine map recorded in a sidecar
//! text file.

use std::fs;
use std::path::Path;

use sscore_core::imagecore::{BinaryMask, Slice};

use crate::Result;

/// 8-bit P5, foreground 255.
pub fn write_mask_pgm(mask: &BinaryMask, path: impl AsRef<Path>) -> Result<()> {
    let [w, h] = mask.dims();
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(mask.bits().iter().map(|&b| if b { 255u8 } else { 0 }));
    fs::write(path, out)?;
    Ok(())
}

/// 16-bit P5 (big-endian samples, per the format). The affine HU map is
/// written to `<path>.map.txt` as `hu_min`/`hu_max` lines so gray values can
/// be converted back.
pub fn write_slice_pgm16(slice: &Slice, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let [w, h] = slice.dims();
    let lo = slice.pixels().iter().copied().fold(f32::INFINITY, f32::min);
    let hi = slice
        .pixels()
        .iter()
        .copied()
        .fold(f32::NEG_INFINITY, f32::max);
    let span = if hi > lo { (hi - lo) as f64 } else { 1.0 };

    let mut out = format!("P5\n{w} {h}\n65535\n").into_bytes();
    for &p in slice.pixels() {
        let g = (((p - lo) as f64 / span) * 65535.0).round() as u16;
        out.extend_from_slice(&g.to_be_bytes());
    }
    fs::write(path, out)?;

    let sidecar = format!(
        "hu_min={lo}\nhu_max={hi}\ngray = round((hu - hu_min) / (hu_max - hu_min) * 65535)\n"
    );
    fs::write(path.with_extension("map.txt"), sidecar)?;
    Ok(())
}
