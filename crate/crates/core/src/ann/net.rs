use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// One convolutional block: `filters` channels, `depth` convolutions,
/// dropout rate applied after pooling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub filters: usize,
    pub depth: usize,
    pub dropout: f64,
}

/// Architecture in the `W1 D1 P1 [W2 D2 P2] O W3 D3` column scheme.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub conv: Vec<ConvSpec>,
    pub dense_out: usize,
    pub width: usize,
    pub depth: usize,
}

impl NetworkConfig {
    /// `40 2 0.25 128 128 4`.
    pub fn chosen() -> Self {
        "40 2 0.25 128 128 4".parse().expect("valid literal")
    }

    /// Small network used for gradient checks.
    pub fn tiny() -> Self {
        "2 1 0 4 4 2".parse().expect("valid literal")
    }

    pub fn validate(&self) -> Result<()> {
        if self.conv.is_empty() || self.conv.len() > 2 {
            return Err(Error::InvalidArgument(format!(
                "expected one or two conv layers, got {}",
                self.conv.len()
            )));
        }
        for c in &self.conv {
            if c.filters == 0 || c.depth == 0 {
                return Err(Error::InvalidArgument(
                    "conv filters and depth must be at least 1".into(),
                ));
            }
            if !(0.0..1.0).contains(&c.dropout) {
                return Err(Error::InvalidArgument(format!(
                    "dropout rate {} outside [0, 1)",
                    c.dropout
                )));
            }
        }
        if self.dense_out == 0 || self.width == 0 {
            return Err(Error::InvalidArgument("dense widths must be at least 1".into()));
        }
        Ok(())
    }
}

impl FromStr for NetworkConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let tok: Vec<&str> = s.split_whitespace().collect();
        let bad = || Error::InvalidArgument(format!("bad architecture string '{s}'"));
        let int = |t: &str| t.parse::<usize>().map_err(|_| bad());
        let real = |t: &str| t.parse::<f64>().map_err(|_| bad());
        let n_conv = match tok.len() {
            6 => 1,
            9 => 2,
            _ => return Err(bad()),
        };
        let mut conv = Vec::new();
        for i in 0..n_conv {
            conv.push(ConvSpec {
                filters: int(tok[3 * i])?,
                depth: int(tok[3 * i + 1])?,
                dropout: real(tok[3 * i + 2])?,
            });
        }
        let o = 3 * n_conv;
        let cfg = NetworkConfig {
            conv,
            dense_out: int(tok[o])?,
            width: int(tok[o + 1])?,
            depth: int(tok[o + 2])?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

impl fmt::Display for NetworkConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.conv {
            write!(f, "{} {} {} ", c.filters, c.depth, c.dropout)?;
        }
        write!(f, "{} {} {}", self.dense_out, self.width, self.depth)
    }
}

#[derive(Debug, Clone)]
struct ConvOp {
    cin: usize,
    cout: usize,
    s_in: usize,
    s_out: usize,
    pad: usize,
    w_off: usize,
    b_off: usize,
}

impl ConvOp {
    fn k(&self) -> usize {
        self.cin * 9
    }

    fn pixels(&self) -> usize {
        self.s_out * self.s_out
    }
}

#[derive(Debug, Clone)]
struct Block {
    convs: Vec<ConvOp>,
    channels: usize,
    s_pool_in: usize,
    s_pool_out: usize,
    dropout: f64,
}

#[derive(Debug, Clone)]
struct DenseOp {
    n_in: usize,
    n_out: usize,
    w_off: usize,
    b_off: usize,
    relu: bool,
}

/// Shapes and parameter offsets for a config and input size `m`.
#[derive(Debug, Clone)]
pub struct Network {
    config: NetworkConfig,
    m: usize,
    blocks: Vec<Block>,
    dense: Vec<DenseOp>,
    n_features: usize,
    n_params: usize,
}

/// Activations kept from a training forward pass.
#[derive(Debug, Clone)]
pub struct Cache {
    conv_cols: Vec<Vec<Vec<f64>>>,
    conv_out: Vec<Vec<Vec<f64>>>,
    argmax: Vec<Vec<u32>>,
    masks: Vec<Option<Vec<f64>>>,
    dense_in: Vec<Vec<f64>>,
    dense_out: Vec<Vec<f64>>,
    pub output: f64,
}

fn im2col(x: &[f64], op: &ConvOp, cols: &mut [f64]) {
    let (s, so, p) = (op.s_in as isize, op.s_out, op.pad as isize);
    let px = op.pixels();
    for c in 0..op.cin {
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut cols[((c * 9) + ky * 3 + kx) * px..][..px];
                for oy in 0..so {
                    let iy = oy as isize + ky as isize - p;
                    let dst = &mut row[oy * so..(oy + 1) * so];
                    if iy < 0 || iy >= s {
                        dst.iter_mut().for_each(|v| *v = 0.0);
                        continue;
                    }
                    let src = &x[c * op.s_in * op.s_in + iy as usize * op.s_in..];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = ox as isize + kx as isize - p;
                        *d = if ix < 0 || ix >= s { 0.0 } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

fn col2im(cols: &[f64], op: &ConvOp, dx: &mut [f64]) {
    let (s, so, p) = (op.s_in as isize, op.s_out, op.pad as isize);
    let px = op.pixels();
    for c in 0..op.cin {
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &cols[((c * 9) + ky * 3 + kx) * px..][..px];
                for oy in 0..so {
                    let iy = oy as isize + ky as isize - p;
                    if iy < 0 || iy >= s {
                        continue;
                    }
                    let base = c * op.s_in * op.s_in + iy as usize * op.s_in;
                    for ox in 0..so {
                        let ix = ox as isize + kx as isize - p;
                        if ix >= 0 && ix < s {
                            dx[base + ix as usize] += row[oy * so + ox];
                        }
                    }
                }
            }
        }
    }
}

/// `c = a * b` (+ `c` if `acc`), all row-major with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    c: &mut [f64],
    acc: bool,
) {
    debug_assert!(c.len() >= m * n);
    // SAFETY: callers pass slices sized for the given shapes and strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            if acc { 1.0 } else { 0.0 },
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn conv_forward(params: &[f64], op: &ConvOp, x: &[f64], cols: &mut Vec<f64>) -> Vec<f64> {
    let (k, px) = (op.k(), op.pixels());
    cols.resize(k * px, 0.0);
    im2col(x, op, cols);
    let kernel = &params[op.w_off..op.w_off + op.cout * k];
    let bias = &params[op.b_off..op.b_off + op.cout];
    let mut out = vec![0.0; op.cout * px];
    gemm(op.cout, k, px, kernel, (k as isize, 1), cols, (px as isize, 1), &mut out, false);
    for (o, b) in bias.iter().enumerate() {
        for v in &mut out[o * px..(o + 1) * px] {
            *v = (*v + b).max(0.0);
        }
    }
    out
}

fn max_pool(x: &[f64], channels: usize, s_in: usize, s_out: usize) -> (Vec<f64>, Vec<u32>) {
    let mut out = Vec::with_capacity(channels * s_out * s_out);
    let mut arg = Vec::with_capacity(channels * s_out * s_out);
    for c in 0..channels {
        let base = c * s_in * s_in;
        for py in 0..s_out {
            for px in 0..s_out {
                let mut best_i = base + 2 * py * s_in + 2 * px;
                let mut best = x[best_i];
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = base + (2 * py + dy) * s_in + 2 * px + dx;
                    if x[i] > best {
                        best = x[i];
                        best_i = i;
                    }
                }
                out.push(best);
                arg.push(best_i as u32);
            }
        }
    }
    (out, arg)
}

fn dense_forward(params: &[f64], op: &DenseOp, x: &[f64]) -> Vec<f64> {
    let w = &params[op.w_off..op.w_off + op.n_out * op.n_in];
    let b = &params[op.b_off..op.b_off + op.n_out];
    (0..op.n_out)
        .map(|o| {
            let z = b[o]
                + w[o * op.n_in..(o + 1) * op.n_in]
                    .iter()
                    .zip(x)
                    .map(|(p, q)| p * q)
                    .sum::<f64>();
            if op.relu {
                z.max(0.0)
            } else {
                z
            }
        })
        .collect()
}

impl Network {
    pub fn new(config: &NetworkConfig, m: usize) -> Result<Self> {
        config.validate()?;
        if m == 0 {
            return Err(Error::InvalidArgument("input size m must be positive".into()));
        }
        let mut offset = 0usize;
        let mut alloc = |len: usize| {
            let o = offset;
            offset += len;
            o
        };
        let mut blocks = Vec::new();
        let (mut channels, mut s) = (1usize, m);
        for spec in &config.conv {
            let mut convs = Vec::new();
            for d in 0..spec.depth {
                let pad = usize::from(d == 0);
                if s + 2 * pad < 3 {
                    return Err(Error::InvalidArgument(format!(
                        "input size {m} too small for architecture '{config}'"
                    )));
                }
                let s_out = s + 2 * pad - 2;
                let w_off = alloc(spec.filters * channels * 9);
                let b_off = alloc(spec.filters);
                convs.push(ConvOp {
                    cin: channels,
                    cout: spec.filters,
                    s_in: s,
                    s_out,
                    pad,
                    w_off,
                    b_off,
                });
                channels = spec.filters;
                s = s_out;
            }
            if s < 2 {
                return Err(Error::InvalidArgument(format!(
                    "input size {m} too small for architecture '{config}'"
                )));
            }
            blocks.push(Block {
                convs,
                channels,
                s_pool_in: s,
                s_pool_out: s / 2,
                dropout: spec.dropout,
            });
            s /= 2;
        }
        let n_features = channels * s * s;
        let mut dense = Vec::new();
        let mut push = |n_in: usize, n_out: usize, relu: bool| {
            let w_off = alloc(n_in * n_out);
            let b_off = alloc(n_out);
            dense.push(DenseOp {
                n_in,
                n_out,
                w_off,
                b_off,
                relu,
            });
        };
        push(n_features, config.dense_out, true);
        let mut n_in = config.dense_out + 2;
        for _ in 0..config.depth {
            push(n_in, config.width, true);
            n_in = config.width;
        }
        push(n_in, 1, false);
        Ok(Self {
            config: config.clone(),
            m,
            blocks,
            dense,
            n_features,
            n_params: offset,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    /// Length of the flattened conv output.
    pub fn n_features(&self) -> usize {
        self.n_features
    }

    /// Layer-by-layer shapes `(channels, size)` after each conv and pool,
    /// then the dense widths.
    pub fn shape_trace(&self) -> Vec<String> {
        let mut out = vec![format!("{}x{}", self.m, self.m)];
        for b in &self.blocks {
            for c in &b.convs {
                out.push(format!("{}x{}x{}", c.s_out, c.s_out, c.cout));
            }
            out.push(format!("{}x{}x{}", b.s_pool_out, b.s_pool_out, b.channels));
        }
        out.push(self.n_features.to_string());
        for (i, d) in self.dense.iter().enumerate() {
            if i == 1 {
                out.push(d.n_in.to_string());
            }
            out.push(d.n_out.to_string());
        }
        out
    }

    /// He-normal weights (`sqrt(2 / fan_in)`; `sqrt(1 / fan_in)` for the
    /// linear output) and zero biases.
    pub fn init_params<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let mut p = vec![0.0; self.n_params];
        let mut fill = |off: usize, len: usize, fan_in: usize, gain: f64| {
            let normal = Normal::new(0.0, (gain / fan_in as f64).sqrt()).expect("finite std");
            for v in &mut p[off..off + len] {
                *v = normal.sample(rng);
            }
        };
        for b in &self.blocks {
            for c in &b.convs {
                fill(c.w_off, c.cout * c.k(), c.k(), 2.0);
            }
        }
        for d in &self.dense {
            fill(d.w_off, d.n_in * d.n_out, d.n_in, if d.relu { 2.0 } else { 1.0 });
        }
        p
    }

    /// Offsets of the output layer's weights and bias.
    pub fn output_layer(&self) -> (std::ops::Range<usize>, usize) {
        let d = self.dense.last().expect("output layer");
        (d.w_off..d.w_off + d.n_in, d.b_off)
    }

    fn check(&self, params: &[f64], input: &[f64]) -> Result<()> {
        if params.len() != self.n_params {
            return Err(Error::DimensionMismatch(format!(
                "{} parameters for a network with {}",
                params.len(),
                self.n_params
            )));
        }
        if input.len() != self.m * self.m {
            return Err(Error::DimensionMismatch(format!(
                "input of {} values for a {}x{} view",
                input.len(),
                self.m,
                self.m
            )));
        }
        Ok(())
    }

    /// Dropout masks for one training sample.
    pub fn sample_masks<R: Rng>(&self, rng: &mut R) -> Vec<Option<Vec<f64>>> {
        self.blocks
            .iter()
            .map(|b| {
                (b.dropout > 0.0).then(|| {
                    let keep = 1.0 / (1.0 - b.dropout);
                    (0..b.channels * b.s_pool_out * b.s_pool_out)
                        .map(|_| if rng.gen::<f64>() < b.dropout { 0.0 } else { keep })
                        .collect()
                })
            })
            .collect()
    }

    /// Conv features of one view (inference mode).
    pub fn features(&self, params: &[f64], input: &[f64]) -> Result<Vec<f64>> {
        self.check(params, input)?;
        let mut x = input.to_vec();
        let mut cols = Vec::new();
        for b in &self.blocks {
            for op in &b.convs {
                x = conv_forward(params, op, &x, &mut cols);
            }
            x = max_pool(&x, b.channels, b.s_pool_in, b.s_pool_out).0;
        }
        Ok(x)
    }

    /// Dense head on precomputed features.
    pub fn head(&self, params: &[f64], features: &[f64], neg_log2_h: f64, theta: f64) -> f64 {
        let mut x = dense_forward(params, &self.dense[0], features);
        x.push(neg_log2_h);
        x.push(theta);
        for op in &self.dense[1..] {
            x = dense_forward(params, op, &x);
        }
        x[0]
    }

    /// Inference-mode prediction (no dropout).
    pub fn forward(&self, params: &[f64], input: &[f64], neg_log2_h: f64, theta: f64) -> Result<f64> {
        let f = self.features(params, input)?;
        Ok(self.head(params, &f, neg_log2_h, theta))
    }

    /// Training forward pass under the given dropout masks, keeping the
    /// activations needed by [`Network::backward`].
    pub fn forward_train(
        &self,
        params: &[f64],
        input: &[f64],
        neg_log2_h: f64,
        theta: f64,
        masks: Vec<Option<Vec<f64>>>,
    ) -> Result<Cache> {
        self.check(params, input)?;
        if masks.len() != self.blocks.len() {
            return Err(Error::DimensionMismatch("one dropout mask per conv layer".into()));
        }
        let mut conv_cols = Vec::with_capacity(self.blocks.len());
        let mut conv_out = Vec::with_capacity(self.blocks.len());
        let mut argmax = Vec::with_capacity(self.blocks.len());
        let mut x = input.to_vec();
        for (b, mask) in self.blocks.iter().zip(&masks) {
            let mut cols_b = Vec::new();
            let mut out_b = Vec::new();
            for op in &b.convs {
                let mut cols = Vec::new();
                let y = conv_forward(params, op, &x, &mut cols);
                cols_b.push(cols);
                out_b.push(y.clone());
                x = y;
            }
            let (mut pooled, arg) = max_pool(&x, b.channels, b.s_pool_in, b.s_pool_out);
            if let Some(m) = mask {
                if m.len() != pooled.len() {
                    return Err(Error::DimensionMismatch("dropout mask size".into()));
                }
                pooled.iter_mut().zip(m).for_each(|(v, k)| *v *= k);
            }
            conv_cols.push(cols_b);
            conv_out.push(out_b);
            argmax.push(arg);
            x = pooled;
        }
        let mut dense_in = Vec::with_capacity(self.dense.len());
        let mut dense_out = Vec::with_capacity(self.dense.len());
        for (i, op) in self.dense.iter().enumerate() {
            if i == 1 {
                x.push(neg_log2_h);
                x.push(theta);
            }
            let y = dense_forward(params, op, &x);
            dense_in.push(std::mem::replace(&mut x, y.clone()));
            dense_out.push(y);
        }
        Ok(Cache {
            conv_cols,
            conv_out,
            argmax,
            masks,
            dense_in,
            dense_out,
            output: x[0],
        })
    }

    /// Adds `d_output * d(output)/d(params)` to `grad`.
    pub fn backward(&self, params: &[f64], cache: &Cache, d_output: f64, grad: &mut [f64]) {
        let mut d = vec![d_output];
        for (i, op) in self.dense.iter().enumerate().rev() {
            let out = &cache.dense_out[i];
            let inp = &cache.dense_in[i];
            if op.relu {
                d.iter_mut().zip(out).for_each(|(g, y)| {
                    if *y <= 0.0 {
                        *g = 0.0;
                    }
                });
            }
            let mut d_in = vec![0.0; op.n_in];
            for (o, &g) in d.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                grad[op.b_off + o] += g;
                let w_row = &params[op.w_off + o * op.n_in..op.w_off + (o + 1) * op.n_in];
                let gw = &mut grad[op.w_off + o * op.n_in..op.w_off + (o + 1) * op.n_in];
                for j in 0..op.n_in {
                    gw[j] += g * inp[j];
                    d_in[j] += g * w_row[j];
                }
            }
            if i == 1 {
                d_in.truncate(op.n_in - 2);
            }
            d = d_in;
        }

        for (bi, b) in self.blocks.iter().enumerate().rev() {
            if let Some(m) = &cache.masks[bi] {
                d.iter_mut().zip(m).for_each(|(g, k)| *g *= k);
            }
            let mut dx = vec![0.0; b.channels * b.s_pool_in * b.s_pool_in];
            for (g, &a) in d.iter().zip(&cache.argmax[bi]) {
                dx[a as usize] += g;
            }
            d = dx;
            for (ci, op) in b.convs.iter().enumerate().rev() {
                let (k, px) = (op.k(), op.pixels());
                let out = &cache.conv_out[bi][ci];
                d.iter_mut().zip(out).for_each(|(g, y)| {
                    if *y <= 0.0 {
                        *g = 0.0;
                    }
                });
                for o in 0..op.cout {
                    grad[op.b_off + o] += d[o * px..(o + 1) * px].iter().sum::<f64>();
                }
                let cols = &cache.conv_cols[bi][ci];
                gemm(
                    op.cout,
                    px,
                    k,
                    &d,
                    (px as isize, 1),
                    cols,
                    (1, px as isize),
                    &mut grad[op.w_off..op.w_off + op.cout * k],
                    true,
                );
                if bi == 0 && ci == 0 {
                    break;
                }
                let kernel = &params[op.w_off..op.w_off + op.cout * k];
                let mut dcols = vec![0.0; k * px];
                gemm(k, op.cout, px, kernel, (1, k as isize), &d, (px as isize, 1), &mut dcols, false);
                let mut dx = vec![0.0; op.cin * op.s_in * op.s_in];
                col2im(&dcols, op, &mut dx);
                d = dx;
            }
        }
    }
}
