//! Layer kinds, shape propagation and per-sample forward/backward kernels.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// (channels, height, width) of one sample's activation.
pub type Shape3 = (usize, usize, usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    /// 3×3 convolution, stride 1, zero padding 1.
    Conv3x3 {
        out: usize,
    },
    Dense {
        out: usize,
    },
    Relu,
    /// 2×2 max pooling, stride 2.
    MaxPool2,
    Flatten,
}

impl LayerSpec {
    pub(crate) fn output_shape(&self, input: Shape3) -> Result<Shape3> {
        let (c, h, w) = input;
        Ok(match *self {
            LayerSpec::Conv3x3 { out } => (out, h, w),
            LayerSpec::Dense { out } => (out, 1, 1),
            LayerSpec::Relu => input,
            LayerSpec::MaxPool2 => {
                if h % 2 != 0 || w % 2 != 0 {
                    return Err(Error::Shape(format!("max-pool needs even extents, got {h}x{w}")));
                }
                (c, h / 2, w / 2)
            }
            LayerSpec::Flatten => (c * h * w, 1, 1),
        })
    }

    pub(crate) fn param_count(&self, input: Shape3) -> usize {
        let (c, h, w) = input;
        match *self {
            LayerSpec::Conv3x3 { out } => out * c * 9 + out,
            LayerSpec::Dense { out } => out * c * h * w + out,
            _ => 0,
        }
    }

    /// Fan-in used for weight initialisation.
    pub(crate) fn fan_in(&self, input: Shape3) -> usize {
        let (c, h, w) = input;
        match self {
            LayerSpec::Conv3x3 { .. } => c * 9,
            LayerSpec::Dense { .. } => c * h * w,
            _ => 0,
        }
    }

    /// Number of weights (excluding biases) at the start of the parameter block.
    pub(crate) fn weight_count(&self, input: Shape3) -> usize {
        let (c, h, w) = input;
        match *self {
            LayerSpec::Conv3x3 { out } => out * c * 9,
            LayerSpec::Dense { out } => out * c * h * w,
            _ => 0,
        }
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerSpec::Conv3x3 { out } => write!(f, "conv{out}"),
            LayerSpec::Dense { out } => write!(f, "dense{out}"),
            LayerSpec::Relu => f.write_str("relu"),
            LayerSpec::MaxPool2 => f.write_str("pool"),
            LayerSpec::Flatten => f.write_str("flatten"),
        }
    }
}

impl FromStr for LayerSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let width = |rest: &str| -> Result<usize> {
            match rest.parse::<usize>() {
                Ok(n) if n > 0 => Ok(n),
                _ => Err(Error::InvalidArgument(format!("bad layer width in {s:?}"))),
            }
        };
        if let Some(rest) = s.strip_prefix("conv") {
            return Ok(LayerSpec::Conv3x3 { out: width(rest)? });
        }
        if let Some(rest) = s.strip_prefix("dense") {
            return Ok(LayerSpec::Dense { out: width(rest)? });
        }
        match s {
            "relu" => Ok(LayerSpec::Relu),
            "pool" => Ok(LayerSpec::MaxPool2),
            "flatten" => Ok(LayerSpec::Flatten),
            _ => Err(Error::InvalidArgument(format!("unknown layer {s:?}"))),
        }
    }
}

pub(crate) fn forward(spec: &LayerSpec, input: Shape3, params: &[f64], x: &[f64]) -> Vec<f64> {
    let (c, h, w) = input;
    match *spec {
        LayerSpec::Dense { out } => {
            let n = c * h * w;
            let (wt, b) = params.split_at(out * n);
            (0..out).map(|o| b[o] + dot(&wt[o * n..(o + 1) * n], x)).collect()
        }
        LayerSpec::Conv3x3 { out } => {
            let (wt, b) = params.split_at(out * c * 9);
            let plane = h * w;
            let mut y = vec![0.0; out * plane];
            for co in 0..out {
                let yo = &mut y[co * plane..(co + 1) * plane];
                yo.iter_mut().for_each(|v| *v = b[co]);
                for ci in 0..c {
                    let xi = &x[ci * plane..(ci + 1) * plane];
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let k = wt[((co * c + ci) * 3 + ky) * 3 + kx];
                            let (y0, y1) = valid_range(ky, h);
                            let (x0, x1) = valid_range(kx, w);
                            for r in y0..y1 {
                                let src = &xi[(r + ky - 1) * w + x0 + kx - 1..(r + ky - 1) * w + x1 + kx - 1];
                                let dst = &mut yo[r * w + x0..r * w + x1];
                                for (d, s) in dst.iter_mut().zip(src) {
                                    *d += k * s;
                                }
                            }
                        }
                    }
                }
            }
            y
        }
        LayerSpec::Relu => x.iter().map(|&v| v.max(0.0)).collect(),
        LayerSpec::MaxPool2 => {
            let (ho, wo) = (h / 2, w / 2);
            let mut y = Vec::with_capacity(c * ho * wo);
            for ch in 0..c {
                for r in 0..ho {
                    for col in 0..wo {
                        let (_, v) = pool_argmax(x, ch, r, col, h, w);
                        y.push(v);
                    }
                }
            }
            y
        }
        LayerSpec::Flatten => x.to_vec(),
    }
}

/// Back-propagates `dy` through one layer. Parameter gradients are added to
/// `dparams` when given; the gradient w.r.t. the layer input is returned.
pub(crate) fn backward(
    spec: &LayerSpec,
    input: Shape3,
    params: &[f64],
    x: &[f64],
    dy: &[f64],
    dparams: Option<&mut [f64]>,
) -> Vec<f64> {
    let (c, h, w) = input;
    match *spec {
        LayerSpec::Dense { out } => {
            let n = c * h * w;
            let wt = &params[..out * n];
            let mut dx = vec![0.0; n];
            for o in 0..out {
                let g = dy[o];
                if g == 0.0 {
                    continue;
                }
                for (d, &wv) in dx.iter_mut().zip(&wt[o * n..(o + 1) * n]) {
                    *d += g * wv;
                }
            }
            if let Some(dp) = dparams {
                let (dw, db) = dp.split_at_mut(out * n);
                for o in 0..out {
                    let g = dy[o];
                    db[o] += g;
                    if g == 0.0 {
                        continue;
                    }
                    for (d, &xv) in dw[o * n..(o + 1) * n].iter_mut().zip(x) {
                        *d += g * xv;
                    }
                }
            }
            dx
        }
        LayerSpec::Conv3x3 { out } => {
            let wt = &params[..out * c * 9];
            let plane = h * w;
            let mut dx = vec![0.0; c * plane];
            let mut dp = dparams;
            for co in 0..out {
                let dyo = &dy[co * plane..(co + 1) * plane];
                if let Some(dp) = dp.as_deref_mut() {
                    dp[out * c * 9 + co] += dyo.iter().sum::<f64>();
                }
                for ci in 0..c {
                    let xi = &x[ci * plane..(ci + 1) * plane];
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let widx = ((co * c + ci) * 3 + ky) * 3 + kx;
                            let k = wt[widx];
                            let (y0, y1) = valid_range(ky, h);
                            let (x0, x1) = valid_range(kx, w);
                            let mut acc = 0.0;
                            for r in y0..y1 {
                                let lo = (r + ky - 1) * w + x0 + kx - 1;
                                let hi = lo + (x1 - x0);
                                let g = &dyo[r * w + x0..r * w + x1];
                                let dxs = &mut dx[ci * plane + lo..ci * plane + hi];
                                for (d, gv) in dxs.iter_mut().zip(g) {
                                    *d += k * gv;
                                }
                                acc += dot(g, &xi[lo..hi]);
                            }
                            if let Some(dp) = dp.as_deref_mut() {
                                dp[widx] += acc;
                            }
                        }
                    }
                }
            }
            dx
        }
        LayerSpec::Relu => x.iter().zip(dy).map(|(&v, &g)| if v > 0.0 { g } else { 0.0 }).collect(),
        LayerSpec::MaxPool2 => {
            let (ho, wo) = (h / 2, w / 2);
            let mut dx = vec![0.0; c * h * w];
            for ch in 0..c {
                for r in 0..ho {
                    for col in 0..wo {
                        let (idx, _) = pool_argmax(x, ch, r, col, h, w);
                        dx[idx] += dy[(ch * ho + r) * wo + col];
                    }
                }
            }
            dx
        }
        LayerSpec::Flatten => dy.to_vec(),
    }
}

/// Output rows (or columns) whose 3×3 tap at offset `k` stays inside the image.
fn valid_range(k: usize, n: usize) -> (usize, usize) {
    let lo = if k == 0 { 1 } else { 0 };
    let hi = if k == 2 { n - 1 } else { n };
    (lo, hi)
}

/// Flat index and value of the window maximum; first maximum wins ties.
pub(crate) fn pool_argmax(x: &[f64], ch: usize, r: usize, col: usize, h: usize, w: usize) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for dr in 0..2 {
        for dc in 0..2 {
            let idx = ch * h * w + (2 * r + dr) * w + 2 * col + dc;
            if x[idx] > best.1 {
                best = (idx, x[idx]);
            }
        }
    }
    best
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
