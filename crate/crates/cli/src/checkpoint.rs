//! Network checkpoints: a text header describing the architecture followed
//! by the flat parameter payload as little-endian `f64`, in declaration
//! order (per-block weights then biases, then the dense layer).

use std::fs;
use std::io::Write;
use std::path::Path;

use sscore_core::nnreg::{Dimensionality, NetSpec, Network};

use crate::{field_err, CliError, Result};

const MAGIC: &str = "sscore-checkpoint v1";

/// Extra run metadata stored alongside the parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CheckpointMeta {
    pub seed: u64,
    pub epoch: usize,
}

pub fn save_network(net: &Network, meta: CheckpointMeta, path: impl AsRef<Path>) -> Result<()> {
    let spec = net.spec();
    let dims: Vec<String> = net.input_dims().iter().map(|d| d.to_string()).collect();
    let blocks: Vec<String> = spec.block_channels.iter().map(|c| c.to_string()).collect();
    let params = net.params();

    let mut out = Vec::new();
    writeln!(out, "{MAGIC}").expect("vec write");
    writeln!(out, "dimensionality={}", spec.dimensionality.rank()).expect("vec write");
    writeln!(out, "blocks={}", blocks.join(",")).expect("vec write");
    writeln!(out, "outputs={}", spec.outputs).expect("vec write");
    writeln!(out, "input_dims={}", dims.join(" ")).expect("vec write");
    writeln!(out, "hu_clip={} {}", net.hu_clip()[0], net.hu_clip()[1]).expect("vec write");
    writeln!(out, "seed={}", meta.seed).expect("vec write");
    writeln!(out, "epoch={}", meta.epoch).expect("vec write");
    writeln!(out, "params={}", params.len()).expect("vec write");
    for p in &params {
        out.extend_from_slice(&p.to_le_bytes());
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn load_network(path: impl AsRef<Path>) -> Result<(Network, CheckpointMeta)> {
    let display = path.as_ref().display().to_string();
    let bytes = fs::read(path.as_ref()).map_err(|e| CliError::Data(format!("{display}: {e}")))?;

    // header = first 9 text lines
    let mut offset = 0usize;
    let mut lines = Vec::with_capacity(9);
    for _ in 0..9 {
        let rest = &bytes[offset..];
        let nl = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| CliError::Data(format!("{display}: truncated header")))?;
        lines.push(
            std::str::from_utf8(&rest[..nl])
                .map_err(|_| CliError::Data(format!("{display}: header is not UTF-8")))?
                .to_string(),
        );
        offset += nl + 1;
    }
    if lines[0] != MAGIC {
        return Err(CliError::Data(format!(
            "{display}: not a checkpoint (magic {:?})",
            lines[0]
        )));
    }
    let get = |idx: usize, key: &str| -> Result<String> {
        lines[idx]
            .strip_prefix(&format!("{key}="))
            .map(str::to_string)
            .ok_or_else(|| field_err(&display, key, format!("expected at line {}", idx + 1)))
    };

    let dimensionality = match get(1, "dimensionality")?.as_str() {
        "2" => Dimensionality::TwoD,
        "3" => Dimensionality::ThreeD,
        other => {
            return Err(field_err(
                &display,
                "dimensionality",
                format!("expected 2 or 3, got {other}"),
            ))
        }
    };
    let blocks_line = get(2, "blocks")?;
    let block_channels: Vec<usize> = if blocks_line.is_empty() {
        Vec::new()
    } else {
        blocks_line
            .split(',')
            .map(|s| {
                s.parse::<usize>()
                    .map_err(|e| field_err(&display, "blocks", format!("bad entry {s:?}: {e}")))
            })
            .collect::<Result<_>>()?
    };
    let outputs = get(3, "outputs")?
        .parse::<usize>()
        .map_err(|e| field_err(&display, "outputs", e))?;
    let input_dims: Vec<usize> = get(4, "input_dims")?
        .split_whitespace()
        .map(|s| {
            s.parse::<usize>()
                .map_err(|e| field_err(&display, "input_dims", format!("bad entry {s:?}: {e}")))
        })
        .collect::<Result<_>>()?;
    let hu: Vec<f64> = get(5, "hu_clip")?
        .split_whitespace()
        .map(|s| {
            s.parse::<f64>()
                .map_err(|e| field_err(&display, "hu_clip", format!("bad entry {s:?}: {e}")))
        })
        .collect::<Result<_>>()?;
    if hu.len() != 2 {
        return Err(field_err(&display, "hu_clip", "expected 2 components"));
    }
    let seed = get(6, "seed")?
        .parse::<u64>()
        .map_err(|e| field_err(&display, "seed", e))?;
    let epoch = get(7, "epoch")?
        .parse::<usize>()
        .map_err(|e| field_err(&display, "epoch", e))?;
    let n_params = get(8, "params")?
        .parse::<usize>()
        .map_err(|e| field_err(&display, "params", e))?;

    let payload = &bytes[offset..];
    if payload.len() != n_params * 8 {
        return Err(field_err(
            &display,
            "params",
            format!(
                "payload is {} bytes, expected {} ({n_params} float64 values)",
                payload.len(),
                n_params * 8
            ),
        ));
    }
    let params: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();

    let spec = NetSpec {
        dimensionality,
        block_channels,
        outputs,
    };
    let mut net = Network::zeroed(spec, &input_dims, [hu[0], hu[1]])
        .map_err(|e| CliError::Data(format!("{display}: {e}")))?;
    net.set_params(&params)
        .map_err(|e| field_err(&display, "params", e))?;
    Ok((net, CheckpointMeta { seed, epoch }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use sscore_core::nnreg::DEFAULT_HU_CLIP;

    #[test]
    fn checkpoint_roundtrip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let spec = NetSpec {
            dimensionality: Dimensionality::TwoD,
            block_channels: vec![2, 4],
            outputs: 3,
        };
        let net = Network::init(spec, &[16, 16], DEFAULT_HU_CLIP, 31).unwrap();
        let p = dir.path().join("net.ckpt");
        save_network(&net, CheckpointMeta { seed: 31, epoch: 7 }, &p).unwrap();
        let (loaded, meta) = load_network(&p).unwrap();
        assert_eq!(meta, CheckpointMeta { seed: 31, epoch: 7 });
        assert_eq!(loaded.params(), net.params());
        assert_eq!(loaded.spec(), net.spec());
        assert_eq!(loaded.input_dims(), net.input_dims());
        assert_eq!(loaded.hu_clip(), net.hu_clip());
    }

    #[test]
    fn truncated_payload_names_the_field() {
        let dir = tempfile::tempdir().unwrap();
        let spec = NetSpec {
            dimensionality: Dimensionality::TwoD,
            block_channels: vec![2],
            outputs: 3,
        };
        let net = Network::init(spec, &[8, 8], DEFAULT_HU_CLIP, 1).unwrap();
        let p = dir.path().join("net.ckpt");
        save_network(&net, CheckpointMeta { seed: 1, epoch: 0 }, &p).unwrap();
        let mut bytes = fs::read(&p).unwrap();
        bytes.truncate(bytes.len() - 4);
        fs::write(&p, bytes).unwrap();
        let err = load_network(&p).unwrap_err();
        assert!(err.to_string().contains("params"), "{err}");
    }
}
