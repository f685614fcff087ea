//! Binary lung segmentation of an axial slice.
//!
//! Pipeline: threshold below `threshold_hu`, drop components touching the
//! image border (background air), keep the largest components, then close,
//! fill interior holes and open with disc structuring elements.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::imagecore::{BinaryMask, Slice};

/// Segmentation parameters. The defaults separate aerated lung (~ -850 HU)
/// from soft tissue (~ 0 HU) with a wide margin.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MorphParams {
    pub threshold_hu: f64,
    pub open_radius: usize,
    pub close_radius: usize,
    pub keep_components: usize,
}

impl Default for MorphParams {
    fn default() -> Self {
        MorphParams {
            threshold_hu: -400.0,
            open_radius: 2,
            close_radius: 4,
            keep_components: 2,
        }
    }
}

impl MorphParams {
    fn validate(&self) -> Result<()> {
        if self.keep_components < 1 {
            return Err(Error::InvalidArgument(
                "keep_components must be >= 1".into(),
            ));
        }
        if !self.threshold_hu.is_finite() {
            return Err(Error::InvalidArgument("threshold_hu must be finite".into()));
        }
        Ok(())
    }
}

fn binarize_below(slice: &Slice, threshold_hu: f64) -> BinaryMask {
    let bits = slice
        .pixels()
        .iter()
        .map(|&p| (p as f64) < threshold_hu)
        .collect();
    BinaryMask::new(slice.dims(), bits).expect("slice dims are valid")
}

/// 4-connected component labels (0 = background) and component count.
fn label_components(mask: &BinaryMask) -> (Vec<u32>, usize) {
    let [w, h] = mask.dims();
    let mut labels = vec![0u32; w * h];
    let mut next = 0u32;
    let mut stack: Vec<(usize, usize)> = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if !mask.get(x, y) || labels[x + w * y] != 0 {
                continue;
            }
            next += 1;
            labels[x + w * y] = next;
            stack.push((x, y));
            while let Some((cx, cy)) = stack.pop() {
                let mut visit = |nx: usize, ny: usize, stack: &mut Vec<(usize, usize)>| {
                    let i = nx + w * ny;
                    if mask.bits()[i] && labels[i] == 0 {
                        labels[i] = next;
                        stack.push((nx, ny));
                    }
                };
                if cx > 0 {
                    visit(cx - 1, cy, &mut stack);
                }
                if cx + 1 < w {
                    visit(cx + 1, cy, &mut stack);
                }
                if cy > 0 {
                    visit(cx, cy - 1, &mut stack);
                }
                if cy + 1 < h {
                    visit(cx, cy + 1, &mut stack);
                }
            }
        }
    }
    (labels, next as usize)
}

/// Remove components that touch the image border.
fn remove_border_components(mask: &BinaryMask) -> BinaryMask {
    let [w, h] = mask.dims();
    let (labels, count) = label_components(mask);
    let mut border = vec![false; count + 1];
    for x in 0..w {
        for y in [0, h - 1] {
            let l = labels[x + w * y];
            if l != 0 {
                border[l as usize] = true;
            }
        }
    }
    for y in 0..h {
        for x in [0, w - 1] {
            let l = labels[x + w * y];
            if l != 0 {
                border[l as usize] = true;
            }
        }
    }
    let bits = labels
        .iter()
        .map(|&l| l != 0 && !border[l as usize])
        .collect();
    BinaryMask::new(mask.dims(), bits).expect("dims are valid")
}

/// Keep the `k` largest 4-connected components.
fn keep_largest(mask: &BinaryMask, k: usize) -> BinaryMask {
    let (labels, count) = label_components(mask);
    if count == 0 {
        return BinaryMask::empty(mask.dims());
    }
    let mut sizes = vec![0usize; count + 1];
    for &l in &labels {
        sizes[l as usize] += 1;
    }
    let mut order: Vec<u32> = (1..=count as u32).collect();
    order.sort_by(|&a, &b| sizes[b as usize].cmp(&sizes[a as usize]).then(a.cmp(&b)));
    let mut keep = vec![false; count + 1];
    for &l in order.iter().take(k) {
        keep[l as usize] = true;
    }
    let bits = labels.iter().map(|&l| l != 0 && keep[l as usize]).collect();
    BinaryMask::new(mask.dims(), bits).expect("dims are valid")
}

/// Offsets of a rasterized disc of radius `r` (center included).
fn disc_offsets(r: usize) -> Vec<(i32, i32)> {
    let ri = r as i32;
    let r2 = (r * r) as i32;
    let mut out = Vec::new();
    for dy in -ri..=ri {
        for dx in -ri..=ri {
            if dx * dx + dy * dy <= r2 {
                out.push((dx, dy));
            }
        }
    }
    out
}

fn dilate(mask: &BinaryMask, offsets: &[(i32, i32)]) -> BinaryMask {
    let [w, h] = mask.dims();
    let mut out = BinaryMask::empty(mask.dims());
    for y in 0..h {
        for x in 0..w {
            if !mask.get(x, y) {
                continue;
            }
            for &(dx, dy) in offsets {
                let nx = x as i32 + dx;
                let ny = y as i32 + dy;
                if nx >= 0 && ny >= 0 && (nx as usize) < w && (ny as usize) < h {
                    out.set(nx as usize, ny as usize, true);
                }
            }
        }
    }
    out
}

fn erode(mask: &BinaryMask, offsets: &[(i32, i32)]) -> BinaryMask {
    let [w, h] = mask.dims();
    let mut out = BinaryMask::empty(mask.dims());
    for y in 0..h {
        'pixel: for x in 0..w {
            if !mask.get(x, y) {
                continue;
            }
            for &(dx, dy) in offsets {
                let nx = x as i32 + dx;
                let ny = y as i32 + dy;
                // pixels outside the frame count as background
                if nx < 0 || ny < 0 || nx as usize >= w || ny as usize >= h {
                    continue 'pixel;
                }
                if !mask.get(nx as usize, ny as usize) {
                    continue 'pixel;
                }
            }
            out.set(x, y, true);
        }
    }
    out
}

fn close(mask: &BinaryMask, r: usize) -> BinaryMask {
    if r == 0 {
        return mask.clone();
    }
    let offsets = disc_offsets(r);
    erode(&dilate(mask, &offsets), &offsets)
}

fn open(mask: &BinaryMask, r: usize) -> BinaryMask {
    if r == 0 {
        return mask.clone();
    }
    let offsets = disc_offsets(r);
    dilate(&erode(mask, &offsets), &offsets)
}

/// Fill interior holes: background pixels not 4-connected to the border
/// become foreground.
fn fill_holes(mask: &BinaryMask) -> BinaryMask {
    let [w, h] = mask.dims();
    let mut outside = vec![false; w * h];
    let mut stack: Vec<(usize, usize)> = Vec::new();
    let seed = |x: usize, y: usize, outside: &mut Vec<bool>, stack: &mut Vec<(usize, usize)>| {
        let i = x + w * y;
        if !mask.bits()[i] && !outside[i] {
            outside[i] = true;
            stack.push((x, y));
        }
    };
    for x in 0..w {
        seed(x, 0, &mut outside, &mut stack);
        seed(x, h - 1, &mut outside, &mut stack);
    }
    for y in 0..h {
        seed(0, y, &mut outside, &mut stack);
        seed(w - 1, y, &mut outside, &mut stack);
    }
    while let Some((cx, cy)) = stack.pop() {
        let mut visit = |nx: usize, ny: usize, stack: &mut Vec<(usize, usize)>| {
            let i = nx + w * ny;
            if !mask.bits()[i] && !outside[i] {
                outside[i] = true;
                stack.push((nx, ny));
            }
        };
        if cx > 0 {
            visit(cx - 1, cy, &mut stack);
        }
        if cx + 1 < w {
            visit(cx + 1, cy, &mut stack);
        }
        if cy > 0 {
            visit(cx, cy - 1, &mut stack);
        }
        if cy + 1 < h {
            visit(cx, cy + 1, &mut stack);
        }
    }
    let bits = mask
        .bits()
        .iter()
        .zip(outside.iter())
        .map(|(&m, &o)| m || !o)
        .collect();
    BinaryMask::new(mask.dims(), bits).expect("dims are valid")
}

/// Segment the lungs of an axial slice.
///
/// Returns [`Error::EmptyLungs`] when no component survives border removal,
/// signalling a slice without lung tissue.
pub fn segment_lungs(slice: &Slice, params: &MorphParams) -> Result<BinaryMask> {
    params.validate()?;
    let air = binarize_below(slice, params.threshold_hu);
    let interior = remove_border_components(&air);
    let cores = keep_largest(&interior, params.keep_components);
    if cores.count() == 0 {
        return Err(Error::EmptyLungs);
    }
    let closed = close(&cores, params.close_radius);
    let filled = fill_holes(&closed);
    Ok(open(&filled, params.open_radius))
}
