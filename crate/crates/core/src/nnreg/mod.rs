//! Compact convolutional regression networks with hand-written forward and
//! backward passes.
//!
//! A network is a stack of blocks (3^d "same" convolution, rectifier, 2^d
//! max-pool) followed by one fully-connected readout. The same code runs 2D
//! (score regression, 3 outputs) and 3D (level regression, 5 outputs); all
//! parameters and activations are `f64` so analytic gradients can be checked
//! against central finite differences at tight tolerance.

mod train;

pub use train::{train, Batch, BatchSource, EpochLoss, FixedBatchSource, Split, TrainConfig};

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::imagecore::{round_half_up, Slice, Volume};
use crate::rngstream;
use crate::synth::{round_to_grade, GradeTriple, ScoreTriple};

/// Spatial rank of the network input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Dimensionality {
    TwoD,
    ThreeD,
}

impl Dimensionality {
    pub fn rank(self) -> usize {
        match self {
            Dimensionality::TwoD => 2,
            Dimensionality::ThreeD => 3,
        }
    }
}

/// Architecture description: per-block channel counts and output count.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NetSpec {
    pub dimensionality: Dimensionality,
    pub block_channels: Vec<usize>,
    pub outputs: usize,
}

impl NetSpec {
    /// 2D score regressor (3 outputs).
    pub fn scores_2d() -> NetSpec {
        NetSpec {
            dimensionality: Dimensionality::TwoD,
            block_channels: vec![8, 16, 32, 64],
            outputs: 3,
        }
    }

    /// 3D level regressor (5 outputs).
    pub fn levels_3d() -> NetSpec {
        NetSpec {
            dimensionality: Dimensionality::ThreeD,
            block_channels: vec![4, 8, 16],
            outputs: 5,
        }
    }
}

/// HU window mapped affinely onto [-1, 1] at the network input.
pub const DEFAULT_HU_CLIP: [f64; 2] = [-1000.0, 400.0];

/// Clip to the HU window and scale to [-1, 1].
pub fn normalize_field(values: &[f32], hu_clip: [f64; 2]) -> Vec<f64> {
    let [lo, hi] = hu_clip;
    let scale = 2.0 / (hi - lo);
    values
        .iter()
        .map(|&v| ((v as f64).clamp(lo, hi) - lo) * scale - 1.0)
        .collect()
}

/// Mean over components of the squared difference.
pub fn mse_loss(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "mse needs equal non-empty lengths, got {} and {}",
            pred.len(),
            target.len()
        )));
    }
    let n = pred.len() as f64;
    Ok(pred
        .iter()
        .zip(target.iter())
        .map(|(&p, &t)| (p - t) * (p - t))
        .sum::<f64>()
        / n)
}

/// Valid (source, kernel-tap) pairs per spatial position, CSR layout.
/// One table per resolution level; shared by every channel pair.
#[derive(Debug, Clone)]
struct NeighborTable {
    starts: Vec<u32>,
    pairs: Vec<(u32, u16)>,
}

fn build_neighbors(dims: &[usize]) -> NeighborTable {
    let d = dims.len();
    let n: usize = dims.iter().product();
    let mut strides = vec![1usize; d];
    for a in 1..d {
        strides[a] = strides[a - 1] * dims[a - 1];
    }
    let mut starts = Vec::with_capacity(n + 1);
    let mut pairs = Vec::with_capacity(n * 3usize.pow(d as u32));
    starts.push(0u32);
    let mut coord = vec![0usize; d];
    for p in 0..n {
        // decode p -> coord (x fastest)
        let mut rem = p;
        for a in 0..d {
            coord[a] = rem % dims[a];
            rem /= dims[a];
        }
        let taps = 3usize.pow(d as u32);
        for k in 0..taps {
            let mut kk = k;
            let mut src = 0usize;
            let mut ok = true;
            for a in 0..d {
                let off = (kk % 3) as i64 - 1;
                kk /= 3;
                let c = coord[a] as i64 + off;
                if c < 0 || c as usize >= dims[a] {
                    ok = false;
                    break;
                }
                src += c as usize * strides[a];
            }
            if ok {
                pairs.push((src as u32, k as u16));
            }
        }
        starts.push(pairs.len() as u32);
    }
    NeighborTable { starts, pairs }
}

#[derive(Debug, Clone)]
struct ConvLayer {
    in_ch: usize,
    out_ch: usize,
    /// [out_ch][in_ch][3^d], flattened.
    w: Vec<f64>,
    b: Vec<f64>,
}

#[derive(Debug, Clone)]
struct DenseLayer {
    in_dim: usize,
    out_dim: usize,
    /// [out_dim][in_dim], flattened.
    w: Vec<f64>,
    b: Vec<f64>,
}

/// A regression network bound to a fixed input geometry and HU window.
#[derive(Debug, Clone)]
pub struct Network {
    spec: NetSpec,
    input_dims: Vec<usize>,
    hu_clip: [f64; 2],
    convs: Vec<ConvLayer>,
    dense: DenseLayer,
    /// Spatial dims at the input of each block; last entry is the dense input
    /// resolution.
    level_dims: Vec<Vec<usize>>,
    neighbors: Vec<NeighborTable>,
}

impl Network {
    /// Zero-initialized network (all weights and biases 0).
    pub fn zeroed(spec: NetSpec, input_dims: &[usize], hu_clip: [f64; 2]) -> Result<Network> {
        if spec.outputs != 3 && spec.outputs != 5 {
            return Err(Error::InvalidArgument(format!(
                "outputs must be 3 or 5, got {}",
                spec.outputs
            )));
        }
        if spec.block_channels.iter().any(|&c| c == 0) {
            return Err(Error::InvalidArgument(
                "block channel counts must be positive".into(),
            ));
        }
        if input_dims.len() != spec.dimensionality.rank() {
            return Err(Error::ShapeMismatch(format!(
                "{}D spec given {} input dims",
                spec.dimensionality.rank(),
                input_dims.len()
            )));
        }
        if !(hu_clip[0] < hu_clip[1]) {
            return Err(Error::InvalidArgument(format!(
                "hu_clip window must satisfy lo < hi, got {hu_clip:?}"
            )));
        }
        let blocks = spec.block_channels.len();
        let halvings = 1usize << blocks;
        for &d in input_dims {
            if d == 0 || d % halvings != 0 {
                return Err(Error::InvalidArgument(format!(
                    "input extent {d} not divisible by 2^{blocks}"
                )));
            }
        }

        let mut level_dims = Vec::with_capacity(blocks + 1);
        let mut dims = input_dims.to_vec();
        level_dims.push(dims.clone());
        for _ in 0..blocks {
            dims = dims.iter().map(|&d| d / 2).collect();
            level_dims.push(dims.clone());
        }
        let neighbors = level_dims[..blocks]
            .iter()
            .map(|d| build_neighbors(d))
            .collect();

        let taps = 3usize.pow(spec.dimensionality.rank() as u32);
        let mut convs = Vec::with_capacity(blocks);
        let mut in_ch = 1usize;
        for &out_ch in &spec.block_channels {
            convs.push(ConvLayer {
                in_ch,
                out_ch,
                w: vec![0.0; out_ch * in_ch * taps],
                b: vec![0.0; out_ch],
            });
            in_ch = out_ch;
        }
        let flat: usize = in_ch * level_dims[blocks].iter().product::<usize>();
        let dense = DenseLayer {
            in_dim: flat,
            out_dim: spec.outputs,
            w: vec![0.0; spec.outputs * flat],
            b: vec![0.0; spec.outputs],
        };
        Ok(Network {
            spec,
            input_dims: input_dims.to_vec(),
            hu_clip,
            convs,
            dense,
            level_dims,
            neighbors,
        })
    }

    /// He-style random initialization from `seed` (biases zero).
    pub fn init(spec: NetSpec, input_dims: &[usize], hu_clip: [f64; 2], seed: u64) -> Result<Network> {
        let mut net = Network::zeroed(spec, input_dims, hu_clip)?;
        let mut rng = rngstream::stream(seed, 0);
        let taps = 3usize.pow(net.spec.dimensionality.rank() as u32);
        for conv in &mut net.convs {
            let std = libm::sqrt(2.0 / (conv.in_ch * taps) as f64);
            for w in &mut conv.w {
                *w = randn(&mut rng) * std;
            }
        }
        let std = libm::sqrt(2.0 / net.dense.in_dim as f64);
        for w in &mut net.dense.w {
            *w = randn(&mut rng) * std;
        }
        Ok(net)
    }

    pub fn spec(&self) -> &NetSpec {
        &self.spec
    }

    pub fn input_dims(&self) -> &[usize] {
        &self.input_dims
    }

    pub fn hu_clip(&self) -> [f64; 2] {
        self.hu_clip
    }

    pub fn input_len(&self) -> usize {
        self.input_dims.iter().product()
    }

    pub fn num_params(&self) -> usize {
        self.convs
            .iter()
            .map(|c| c.w.len() + c.b.len())
            .sum::<usize>()
            + self.dense.w.len()
            + self.dense.b.len()
    }

    /// Parameters flattened in declaration order: per block weights then
    /// biases, then dense weights and biases.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for c in &self.convs {
            out.extend_from_slice(&c.w);
            out.extend_from_slice(&c.b);
        }
        out.extend_from_slice(&self.dense.w);
        out.extend_from_slice(&self.dense.b);
        out
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::ShapeMismatch(format!(
                "{} params for a {}-parameter network",
                params.len(),
                self.num_params()
            )));
        }
        let mut off = 0;
        for c in &mut self.convs {
            let (nw, nb) = (c.w.len(), c.b.len());
            c.w.copy_from_slice(&params[off..off + nw]);
            off += nw;
            c.b.copy_from_slice(&params[off..off + nb]);
            off += nb;
        }
        let nw = self.dense.w.len();
        self.dense.w.copy_from_slice(&params[off..off + nw]);
        off += nw;
        let nb = self.dense.b.len();
        self.dense.b.copy_from_slice(&params[off..off + nb]);
        Ok(())
    }

    /// SGD step: `p -= lr * g` over the flat gradient.
    pub fn apply_sgd(&mut self, grads: &Gradients, learning_rate: f64) -> Result<()> {
        if grads.flat.len() != self.num_params() {
            return Err(Error::ShapeMismatch(format!(
                "{} gradient entries for {} params",
                grads.flat.len(),
                self.num_params()
            )));
        }
        let g = &grads.flat;
        let mut off = 0;
        for c in &mut self.convs {
            for w in c.w.iter_mut().chain(c.b.iter_mut()) {
                *w -= learning_rate * g[off];
                off += 1;
            }
        }
        for w in self.dense.w.iter_mut().chain(self.dense.b.iter_mut()) {
            *w -= learning_rate * g[off];
            off += 1;
        }
        Ok(())
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input_len() {
            return Err(Error::ShapeMismatch(format!(
                "input length {} does not match network input {:?}",
                input.len(),
                self.input_dims
            )));
        }
        Ok(())
    }

    /// Deterministic forward pass on a normalized input field.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_trace(input)?.output)
    }

    fn forward_trace(&self, input: &[f64]) -> Result<Trace> {
        self.check_input(input)?;
        let mut level_in: Vec<Vec<f64>> = Vec::with_capacity(self.convs.len() + 1);
        let mut conv_pre: Vec<Vec<f64>> = Vec::with_capacity(self.convs.len());
        let mut argmax: Vec<Vec<u32>> = Vec::with_capacity(self.convs.len());
        level_in.push(input.to_vec());

        for (l, conv) in self.convs.iter().enumerate() {
            let n: usize = self.level_dims[l].iter().product();
            let x = &level_in[l];
            let table = &self.neighbors[l];
            let taps = conv.w.len() / (conv.in_ch * conv.out_ch);
            let mut pre = vec![0.0; conv.out_ch * n];
            for oc in 0..conv.out_ch {
                let out = &mut pre[oc * n..(oc + 1) * n];
                out.fill(conv.b[oc]);
                for ic in 0..conv.in_ch {
                    let w = &conv.w[(oc * conv.in_ch + ic) * taps..][..taps];
                    let xi = &x[ic * n..(ic + 1) * n];
                    for (p, o) in out.iter_mut().enumerate() {
                        let s = table.starts[p] as usize;
                        let e = table.starts[p + 1] as usize;
                        let mut acc = *o;
                        for &(src, k) in &table.pairs[s..e] {
                            acc += w[k as usize] * xi[src as usize];
                        }
                        *o = acc;
                    }
                }
            }
            // rectifier + max-pool
            let (pooled, arg) = self.pool(&pre, conv.out_ch, l);
            conv_pre.push(pre);
            argmax.push(arg);
            level_in.push(pooled);
        }

        let flat = level_in.last().expect("at least the input level");
        debug_assert_eq!(flat.len(), self.dense.in_dim);
        let mut output = Vec::with_capacity(self.dense.out_dim);
        for o in 0..self.dense.out_dim {
            let w = &self.dense.w[o * self.dense.in_dim..(o + 1) * self.dense.in_dim];
            let mut acc = self.dense.b[o];
            for (wi, xi) in w.iter().zip(flat.iter()) {
                acc += wi * xi;
            }
            output.push(acc);
        }
        Ok(Trace {
            level_in,
            conv_pre,
            argmax,
            output,
        })
    }

    /// Rectify `pre` and max-pool 2^d with stride 2 at level `l`.
    /// Returns pooled values and the flat argmax (into the per-channel plane).
    fn pool(&self, pre: &[f64], channels: usize, l: usize) -> (Vec<f64>, Vec<u32>) {
        let in_dims = &self.level_dims[l];
        let out_dims = &self.level_dims[l + 1];
        let d = in_dims.len();
        let n_in: usize = in_dims.iter().product();
        let n_out: usize = out_dims.iter().product();
        let mut strides = vec![1usize; d];
        for a in 1..d {
            strides[a] = strides[a - 1] * in_dims[a - 1];
        }
        let windows = 1usize << d;
        let mut pooled = vec![0.0; channels * n_out];
        let mut argmax = vec![0u32; channels * n_out];
        let mut coord = vec![0usize; d];
        for q in 0..n_out {
            let mut rem = q;
            for a in 0..d {
                coord[a] = (rem % out_dims[a]) * 2;
                rem /= out_dims[a];
            }
            let base: usize = coord.iter().zip(strides.iter()).map(|(&c, &s)| c * s).sum();
            for c in 0..channels {
                let plane = &pre[c * n_in..(c + 1) * n_in];
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = 0usize;
                for wbits in 0..windows {
                    let mut idx = base;
                    for a in 0..d {
                        if wbits >> a & 1 == 1 {
                            idx += strides[a];
                        }
                    }
                    let v = plane[idx].max(0.0);
                    if v > best {
                        best = v;
                        best_idx = idx;
                    }
                }
                pooled[c * n_out + q] = best;
                argmax[c * n_out + q] = best_idx as u32;
            }
        }
        (pooled, argmax)
    }

    /// Forward pass plus exact gradients of the MSE loss w.r.t. every
    /// parameter. Returns the raw output and the flat gradient.
    pub fn backward(&self, input: &[f64], target: &[f64]) -> Result<(Vec<f64>, Gradients)> {
        if target.len() != self.dense.out_dim {
            return Err(Error::ShapeMismatch(format!(
                "target length {} for {} outputs",
                target.len(),
                self.dense.out_dim
            )));
        }
        let trace = self.forward_trace(input)?;
        let mut grads = Gradients::zeroed(self.num_params());
        self.backward_into(&trace, target, &mut grads)?;
        Ok((trace.output, grads))
    }

    /// Accumulate gradients for one sample into `grads` (which must be sized
    /// for this network). Used by the trainer to avoid reallocating.
    fn backward_into(&self, trace: &Trace, target: &[f64], grads: &mut Gradients) -> Result<()> {
        let m = self.dense.out_dim as f64;
        let mut g_out: Vec<f64> = trace
            .output
            .iter()
            .zip(target.iter())
            .map(|(&p, &t)| 2.0 * (p - t) / m)
            .collect();

        // offsets of each layer inside the flat gradient
        let taps = 3usize.pow(self.spec.dimensionality.rank() as u32);
        let mut conv_off = Vec::with_capacity(self.convs.len());
        let mut off = 0usize;
        for c in &self.convs {
            conv_off.push(off);
            off += c.w.len() + c.b.len();
        }
        let dense_w_off = off;
        let dense_b_off = off + self.dense.w.len();

        // dense
        let flat = trace.level_in.last().expect("input level present");
        let mut g_flat = vec![0.0; self.dense.in_dim];
        for o in 0..self.dense.out_dim {
            let go = g_out[o];
            grads.flat[dense_b_off + o] += go;
            let wrow = &self.dense.w[o * self.dense.in_dim..(o + 1) * self.dense.in_dim];
            let gwrow =
                &mut grads.flat[dense_w_off + o * self.dense.in_dim..][..self.dense.in_dim];
            for i in 0..self.dense.in_dim {
                gwrow[i] += go * flat[i];
                g_flat[i] += go * wrow[i];
            }
        }
        g_out.clear();

        // blocks in reverse
        let mut g_pooled = g_flat;
        for l in (0..self.convs.len()).rev() {
            let conv = &self.convs[l];
            let n: usize = self.level_dims[l].iter().product();
            let n_out: usize = self.level_dims[l + 1].iter().product();
            let pre = &trace.conv_pre[l];
            let arg = &trace.argmax[l];

            // un-pool onto the rectified map, then gate by the rectifier
            let mut g_pre = vec![0.0; conv.out_ch * n];
            for c in 0..conv.out_ch {
                for q in 0..n_out {
                    let g = g_pooled[c * n_out + q];
                    if g == 0.0 {
                        continue;
                    }
                    let idx = c * n + arg[c * n_out + q] as usize;
                    if pre[idx] > 0.0 {
                        g_pre[idx] += g;
                    }
                }
            }

            let x = &trace.level_in[l];
            let table = &self.neighbors[l];
            let base = conv_off[l];
            let b_off = base + conv.w.len();
            let mut g_x = vec![0.0; conv.in_ch * n];
            for oc in 0..conv.out_ch {
                let gslice = &g_pre[oc * n..(oc + 1) * n];
                let mut gb = 0.0;
                for &g in gslice {
                    gb += g;
                }
                grads.flat[b_off + oc] += gb;
                for ic in 0..conv.in_ch {
                    let w = &conv.w[(oc * conv.in_ch + ic) * taps..][..taps];
                    let gw = &mut grads.flat[base + (oc * conv.in_ch + ic) * taps..][..taps];
                    let xi = &x[ic * n..(ic + 1) * n];
                    let gxi = &mut g_x[ic * n..(ic + 1) * n];
                    for (p, &gp) in gslice.iter().enumerate() {
                        if gp == 0.0 {
                            continue;
                        }
                        let s = table.starts[p] as usize;
                        let e = table.starts[p + 1] as usize;
                        for &(src, k) in &table.pairs[s..e] {
                            gw[k as usize] += gp * xi[src as usize];
                            gxi[src as usize] += gp * w[k as usize];
                        }
                    }
                }
            }
            g_pooled = g_x;
        }
        Ok(())
    }

    /// Normalized network input from a slice (2D nets).
    pub fn normalize_slice(&self, slice: &Slice) -> Result<Vec<f64>> {
        if self.spec.dimensionality != Dimensionality::TwoD {
            return Err(Error::InvalidArgument(
                "slice input requires a 2D network".into(),
            ));
        }
        let dims = slice.dims();
        if [dims[0], dims[1]] != [self.input_dims[0], self.input_dims[1]] {
            return Err(Error::ShapeMismatch(format!(
                "slice dims {:?} vs network input {:?}",
                dims, self.input_dims
            )));
        }
        Ok(normalize_field(slice.pixels(), self.hu_clip))
    }

    /// Normalized network input from a volume (3D nets).
    pub fn normalize_volume(&self, vol: &Volume) -> Result<Vec<f64>> {
        if self.spec.dimensionality != Dimensionality::ThreeD {
            return Err(Error::InvalidArgument(
                "volume input requires a 3D network".into(),
            ));
        }
        let dims = vol.dims();
        if dims.to_vec() != self.input_dims {
            return Err(Error::ShapeMismatch(format!(
                "volume dims {:?} vs network input {:?}",
                dims, self.input_dims
            )));
        }
        Ok(normalize_field(vol.voxels(), self.hu_clip))
    }
}

fn randn<R: Rng>(rng: &mut R) -> f64 {
    // Box-Muller; u1 bounded away from 0
    let u1: f64 = rng.gen::<f64>().max(1e-300);
    let u2: f64 = rng.gen();
    libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(2.0 * core::f64::consts::PI * u2)
}

struct Trace {
    level_in: Vec<Vec<f64>>,
    conv_pre: Vec<Vec<f64>>,
    argmax: Vec<Vec<u32>>,
    output: Vec<f64>,
}

/// Flat loss gradient, aligned with [`Network::params`] order.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub flat: Vec<f64>,
}

impl Gradients {
    pub fn zeroed(len: usize) -> Gradients {
        Gradients {
            flat: vec![0.0; len],
        }
    }

    pub fn reset(&mut self) {
        self.flat.fill(0.0);
    }

    pub fn scale(&mut self, s: f64) {
        for g in &mut self.flat {
            *g *= s;
        }
    }
}

/// Continuous and half-up-rounded level predictions, clamped to the volume.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelPrediction {
    pub continuous: [f64; 5],
    pub rounded: [usize; 5],
}

/// De-normalized, clamped score prediction for one slice.
pub fn predict_scores(net: &Network, slice: &Slice) -> Result<(ScoreTriple, GradeTriple)> {
    if net.spec.dimensionality != Dimensionality::TwoD || net.spec.outputs != 3 {
        return Err(Error::InvalidArgument(
            "score prediction needs a 2D network with 3 outputs".into(),
        ));
    }
    let raw = net.forward(&net.normalize_slice(slice)?)?;
    let pct: Vec<f64> = raw.iter().map(|&r| (r * 100.0).clamp(0.0, 100.0)).collect();
    let scores = ScoreTriple {
        tot: pct[0],
        gg: pct[1],
        ret: pct[2],
    };
    let grades = GradeTriple {
        tot: round_to_grade(scores.tot)?,
        gg: round_to_grade(scores.gg)?,
        ret: round_to_grade(scores.ret)?,
    };
    Ok((scores, grades))
}

/// De-normalized, clamped level prediction for one volume, caudal-to-cranial.
pub fn predict_levels(net: &Network, vol: &Volume) -> Result<LevelPrediction> {
    if net.spec.dimensionality != Dimensionality::ThreeD || net.spec.outputs != 5 {
        return Err(Error::InvalidArgument(
            "level prediction needs a 3D network with 5 outputs".into(),
        ));
    }
    let raw = net.forward(&net.normalize_volume(vol)?)?;
    let max = (vol.dims()[2] - 1) as f64;
    let mut continuous = [0.0f64; 5];
    let mut rounded = [0usize; 5];
    for (i, &r) in raw.iter().enumerate() {
        continuous[i] = (r * max).clamp(0.0, max);
        rounded[i] = round_half_up(continuous[i]) as usize;
    }
    Ok(LevelPrediction {
        continuous,
        rounded,
    })
}
