//! MetaImage-style volume files: a text header (`.mhd`) plus a raw
//! little-endian `float32` payload (`.raw`), x-fastest, then y, then z.
//!
//! Round-trips are bitwise: the payload is written from and read into the
//! exact `f32` bit patterns held in memory. Slices are stored in the same
//! format with `DimSize w h 1`.

use std::fs;
use std::path::{Path, PathBuf};

use sscore_core::imagecore::{Slice, Volume};

use crate::{field_err, CliError, Result};

struct RawImage {
    dims: [usize; 3],
    spacing: [f64; 3],
    origin_z: f64,
    voxels: Vec<f32>,
}

fn write_raw(img: &RawImage, path: &Path) -> Result<PathBuf> {
    let (header_path, raw_path) = paths_for(path);
    let raw_name = raw_path
        .file_name()
        .ok_or_else(|| CliError::Usage(format!("bad volume path {}", raw_path.display())))?
        .to_string_lossy()
        .into_owned();

    let [dx, dy, dz] = img.dims;
    let [sx, sy, sz] = img.spacing;
    let header = format!(
        "NDims=3\nDimSize={dx} {dy} {dz}\nElementSpacing={sx} {sy} {sz}\nOffset=0 0 {oz}\nElementType=float32le\nElementDataFile={raw_name}\n",
        oz = img.origin_z
    );
    fs::write(&header_path, header)?;

    let mut payload = Vec::with_capacity(img.voxels.len() * 4);
    for v in &img.voxels {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(&raw_path, payload)?;
    Ok(header_path)
}

fn read_raw(header_path: &Path) -> Result<RawImage> {
    let display = header_path.display().to_string();
    let text =
        fs::read_to_string(header_path).map_err(|e| CliError::Data(format!("{display}: {e}")))?;

    let mut ndims = None;
    let mut dim_size = None;
    let mut spacing = None;
    let mut offset = None;
    let mut elem_type = None;
    let mut data_file = None;
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| CliError::Data(format!("{display}: malformed header line {line:?}")))?;
        match key.trim() {
            "NDims" => ndims = Some(value.trim().to_string()),
            "DimSize" => dim_size = Some(value.trim().to_string()),
            "ElementSpacing" => spacing = Some(value.trim().to_string()),
            "Offset" => offset = Some(value.trim().to_string()),
            "ElementType" => elem_type = Some(value.trim().to_string()),
            "ElementDataFile" => data_file = Some(value.trim().to_string()),
            other => {
                return Err(CliError::Data(format!(
                    "{display}: unknown header field {other}"
                )))
            }
        }
    }

    let ndims = ndims.ok_or_else(|| field_err(&display, "NDims", "missing"))?;
    if ndims != "3" {
        return Err(field_err(&display, "NDims", format!("expected 3, got {ndims}")));
    }
    let dims = parse_triplet::<usize>(&display, "DimSize", dim_size)?;
    if dims.iter().any(|&d| d == 0) {
        return Err(field_err(
            &display,
            "DimSize",
            format!("axes must be positive, got {dims:?}"),
        ));
    }
    let spacing = parse_triplet::<f64>(&display, "ElementSpacing", spacing)?;
    if spacing.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
        return Err(field_err(
            &display,
            "ElementSpacing",
            format!("must be positive, got {spacing:?}"),
        ));
    }
    let offset = parse_triplet::<f64>(&display, "Offset", offset)?;
    let elem_type = elem_type.ok_or_else(|| field_err(&display, "ElementType", "missing"))?;
    if elem_type != "float32le" {
        return Err(field_err(
            &display,
            "ElementType",
            format!("expected float32le, got {elem_type}"),
        ));
    }
    let data_file = data_file.ok_or_else(|| field_err(&display, "ElementDataFile", "missing"))?;
    let raw_path = header_path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(&data_file);
    let payload = fs::read(&raw_path).map_err(|e| {
        field_err(
            &display,
            "ElementDataFile",
            format!("{}: {e}", raw_path.display()),
        )
    })?;

    let expected = dims[0] * dims[1] * dims[2];
    if payload.len() != expected * 4 {
        return Err(field_err(
            &display,
            "ElementDataFile",
            format!(
                "payload is {} bytes, expected {} ({expected} float32 voxels)",
                payload.len(),
                expected * 4
            ),
        ));
    }
    let voxels: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(RawImage {
        dims,
        spacing,
        origin_z: offset[2],
        voxels,
    })
}

/// Write `vol` as `<path>.mhd` + `<path>.raw` (extension replaced if given).
/// Returns the header path.
pub fn write_volume(vol: &Volume, path: impl AsRef<Path>) -> Result<PathBuf> {
    write_raw(
        &RawImage {
            dims: vol.dims(),
            spacing: vol.spacing(),
            origin_z: vol.origin_z(),
            voxels: vol.voxels().to_vec(),
        },
        path.as_ref(),
    )
}

/// Read a volume from its `.mhd` header.
pub fn read_volume(path: impl AsRef<Path>) -> Result<Volume> {
    let display = path.as_ref().display().to_string();
    let img = read_raw(path.as_ref())?;
    Volume::new(img.dims, img.spacing, img.origin_z, img.voxels)
        .map_err(|e| CliError::Data(format!("{display}: {e}")))
}

/// Write a slice as a depth-1 volume file.
pub fn write_slice(slice: &Slice, spacing: [f64; 3], path: impl AsRef<Path>) -> Result<PathBuf> {
    let [w, h] = slice.dims();
    write_raw(
        &RawImage {
            dims: [w, h, 1],
            spacing,
            origin_z: 0.0,
            voxels: slice.pixels().to_vec(),
        },
        path.as_ref(),
    )
}

/// Read back a slice written by [`write_slice`].
pub fn read_slice(path: impl AsRef<Path>) -> Result<Slice> {
    let display = path.as_ref().display().to_string();
    let img = read_raw(path.as_ref())?;
    if img.dims[2] != 1 {
        return Err(field_err(
            &display,
            "DimSize",
            format!("expected a depth-1 slice, got {:?}", img.dims),
        ));
    }
    Slice::new([img.dims[0], img.dims[1]], img.voxels)
        .map_err(|e| CliError::Data(format!("{display}: {e}")))
}

fn paths_for(path: &Path) -> (PathBuf, PathBuf) {
    let stem = path.with_extension("");
    (stem.with_extension("mhd"), stem.with_extension("raw"))
}

fn parse_triplet<T: std::str::FromStr>(
    file: &str,
    field: &str,
    value: Option<String>,
) -> Result<[T; 3]>
where
    T::Err: std::fmt::Display,
{
    let value = value.ok_or_else(|| field_err(&file, field, "missing"))?;
    let parts: Vec<&str> = value.split_whitespace().collect();
    if parts.len() != 3 {
        return Err(field_err(
            &file,
            field,
            format!("expected 3 components, got {value:?}"),
        ));
    }
    let mut out = Vec::with_capacity(3);
    for p in parts {
        out.push(
            p.parse::<T>()
                .map_err(|e| field_err(&file, field, format!("bad component {p:?}: {e}")))?,
        );
    }
    Ok(out.try_into().map_err(|_| ()).expect("length checked"))
}
