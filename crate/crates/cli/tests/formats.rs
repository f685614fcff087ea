//! Volume file format: bitwise round-trips and malformed-input errors.

use std::fs;

use sscore_core::imagecore::{Slice, Volume};
use sscore_core::rngstream::stream;

use rand::Rng;
use sscore::volfile::{read_slice, read_volume, write_slice, write_volume};

fn random_volume(seed: u64) -> Volume {
    let mut rng = stream(seed, 0);
    let dims = [
        rng.gen_range(2..8usize),
        rng.gen_range(2..8usize),
        rng.gen_range(2..8usize),
    ];
    let spacing = [
        rng.gen_range(0.3..2.5),
        rng.gen_range(0.3..2.5),
        rng.gen_range(0.3..2.5),
    ];
    let n = dims[0] * dims[1] * dims[2];
    let voxels: Vec<f32> = (0..n).map(|_| rng.gen_range(-1000.0..400.0)).collect();
    Volume::new(dims, spacing, rng.gen_range(-50.0..50.0), voxels).unwrap()
}

#[test]
fn volume_roundtrip_bitwise_identity() {
    let dir = tempfile::tempdir().unwrap();
    for seed in 0..10u64 {
        let vol = random_volume(seed);
        let header = write_volume(&vol, dir.path().join(format!("v{seed}"))).unwrap();
        let back = read_volume(&header).unwrap();
        assert_eq!(back.dims(), vol.dims());
        assert_eq!(back.spacing(), vol.spacing());
        assert_eq!(back.origin_z(), vol.origin_z());
        // bitwise payload identity
        let bits: Vec<u32> = vol.voxels().iter().map(|v| v.to_bits()).collect();
        let back_bits: Vec<u32> = back.voxels().iter().map(|v| v.to_bits()).collect();
        assert_eq!(bits, back_bits, "seed {seed}");
    }
}

#[test]
fn slice_roundtrip_via_depth_one_volume() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = stream(3, 0);
    let pixels: Vec<f32> = (0..35 * 17).map(|_| rng.gen_range(-1000.0..400.0)).collect();
    let slice = Slice::new([35, 17], pixels).unwrap();
    let header = write_slice(&slice, [1.2, 1.2, 1.2], dir.path().join("s")).unwrap();
    let back = read_slice(&header).unwrap();
    assert_eq!(back, slice);
}

#[test]
fn truncated_payload_names_data_file_field() {
    let dir = tempfile::tempdir().unwrap();
    let vol = random_volume(42);
    let header = write_volume(&vol, dir.path().join("t")).unwrap();
    let raw = dir.path().join("t.raw");
    let mut bytes = fs::read(&raw).unwrap();
    bytes.truncate(bytes.len() - 3);
    fs::write(&raw, bytes).unwrap();
    let err = read_volume(&header).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("ElementDataFile"), "{msg}");
    assert!(msg.contains("expected"), "{msg}");
}

#[test]
fn zero_spacing_header_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let header = dir.path().join("bad.mhd");
    fs::write(
        &header,
        "NDims=3\nDimSize=2 2 2\nElementSpacing=0 1 1\nOffset=0 0 0\nElementType=float32le\nElementDataFile=bad.raw\n",
    )
    .unwrap();
    fs::write(dir.path().join("bad.raw"), vec![0u8; 32]).unwrap();
    let err = read_volume(&header).unwrap_err();
    assert!(err.to_string().contains("ElementSpacing"), "{err}");
}

#[test]
fn missing_and_malformed_fields_are_named() {
    let dir = tempfile::tempdir().unwrap();
    let header = dir.path().join("bad.mhd");

    fs::write(&header, "NDims=3\nElementSpacing=1 1 1\nOffset=0 0 0\nElementType=float32le\nElementDataFile=x.raw\n").unwrap();
    let err = read_volume(&header).unwrap_err();
    assert!(err.to_string().contains("DimSize"), "{err}");

    fs::write(&header, "NDims=2\nDimSize=2 2 2\nElementSpacing=1 1 1\nOffset=0 0 0\nElementType=float32le\nElementDataFile=x.raw\n").unwrap();
    let err = read_volume(&header).unwrap_err();
    assert!(err.to_string().contains("NDims"), "{err}");

    fs::write(&header, "NDims=3\nDimSize=2 2 2\nElementSpacing=1 1 1\nOffset=0 0 0\nElementType=uint8\nElementDataFile=x.raw\n").unwrap();
    let err = read_volume(&header).unwrap_err();
    assert!(err.to_string().contains("ElementType"), "{err}");
}

#[test]
fn nan_payloads_roundtrip_bitwise() {
    // the payload is opaque bits; even NaNs must survive unchanged
    let dir = tempfile::tempdir().unwrap();
    let mut voxels = vec![0.0f32; 8];
    voxels[3] = f32::from_bits(0x7fc0_1234);
    voxels[5] = f32::NEG_INFINITY;
    let vol = Volume::new([2, 2, 2], [1.0; 3], 0.0, voxels.clone()).unwrap();
    let header = write_volume(&vol, dir.path().join("n")).unwrap();
    let back = read_volume(&header).unwrap();
    for (a, b) in voxels.iter().zip(back.voxels()) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
}
