//! Blockwise 8×8 orthonormal DCT-II, zigzag frequency indexing and masks.
//!
//! Frequencies are addressed everywhere by their zigzag index `0..64` inside
//! an 8×8 block. Images must have height and width divisible by 8; every
//! block of every channel is transformed independently and masks are shared
//! across channels.

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const BLOCK: usize = 8;
pub const NUM_FREQS: usize = BLOCK * BLOCK;

/// Precomputed orthonormal DCT-II basis and the zigzag map.
#[derive(Debug, Clone)]
pub struct DctPlan {
    /// `basis[k][n] = λ_k cos((2n+1)kπ / 2N)`
    basis: [[f64; BLOCK]; BLOCK],
    zigzag: ZigzagMap,
}

impl Default for DctPlan {
    fn default() -> Self {
        Self::new()
    }
}

impl DctPlan {
    pub fn new() -> Self {
        let n = BLOCK as f64;
        let mut basis = [[0.0; BLOCK]; BLOCK];
        for (k, row) in basis.iter_mut().enumerate() {
            let lambda = if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
            for (i, b) in row.iter_mut().enumerate() {
                *b = lambda * (((2 * i + 1) as f64) * (k as f64) * std::f64::consts::PI / (2.0 * n)).cos();
            }
        }
        DctPlan {
            basis,
            zigzag: ZigzagMap::new(),
        }
    }

    /// Process-wide shared plan.
    pub fn global() -> &'static DctPlan {
        static PLAN: OnceLock<DctPlan> = OnceLock::new();
        PLAN.get_or_init(DctPlan::new)
    }

    pub fn basis(&self) -> &[[f64; BLOCK]; BLOCK] {
        &self.basis
    }

    pub fn zigzag(&self) -> &ZigzagMap {
        &self.zigzag
    }

    /// Forward blockwise transform. The last two axes are (H, W).
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.transform(x, false)
    }

    /// Inverse blockwise transform.
    pub fn inverse(&self, g: &Tensor) -> Result<Tensor> {
        self.transform(g, true)
    }

    fn transform(&self, x: &Tensor, inverse: bool) -> Result<Tensor> {
        let (planes, h, w) = plane_dims(x)?;
        let mut out = Tensor::zeros(x.shape());
        let src = x.data();
        let dst = out.data_mut();
        let mut block = [[0.0; BLOCK]; BLOCK];
        for p in 0..planes {
            let base = p * h * w;
            for by in (0..h).step_by(BLOCK) {
                for bx in (0..w).step_by(BLOCK) {
                    for (r, row) in block.iter_mut().enumerate() {
                        let off = base + (by + r) * w + bx;
                        row.copy_from_slice(&src[off..off + BLOCK]);
                    }
                    let t = if inverse {
                        self.inverse_block(&block)
                    } else {
                        self.forward_block(&block)
                    };
                    for (r, row) in t.iter().enumerate() {
                        let off = base + (by + r) * w + bx;
                        dst[off..off + BLOCK].copy_from_slice(row);
                    }
                }
            }
        }
        Ok(out)
    }

    /// `G = B X Bᵀ`, with `G[u][v]` the coefficient of vertical frequency u
    /// and horizontal frequency v.
    pub fn forward_block(&self, x: &[[f64; BLOCK]; BLOCK]) -> [[f64; BLOCK]; BLOCK] {
        let b = &self.basis;
        let mut tmp = [[0.0; BLOCK]; BLOCK];
        for (m, row) in x.iter().enumerate() {
            for v in 0..BLOCK {
                tmp[m][v] = (0..BLOCK).map(|n| row[n] * b[v][n]).sum();
            }
        }
        let mut out = [[0.0; BLOCK]; BLOCK];
        for (u, orow) in out.iter_mut().enumerate() {
            for (v, o) in orow.iter_mut().enumerate() {
                *o = (0..BLOCK).map(|m| b[u][m] * tmp[m][v]).sum();
            }
        }
        out
    }

    /// `X = Bᵀ G B`
    pub fn inverse_block(&self, g: &[[f64; BLOCK]; BLOCK]) -> [[f64; BLOCK]; BLOCK] {
        let b = &self.basis;
        let mut tmp = [[0.0; BLOCK]; BLOCK];
        for (u, row) in g.iter().enumerate() {
            for n in 0..BLOCK {
                tmp[u][n] = (0..BLOCK).map(|v| row[v] * b[v][n]).sum();
            }
        }
        let mut out = [[0.0; BLOCK]; BLOCK];
        for (m, orow) in out.iter_mut().enumerate() {
            for (n, o) in orow.iter_mut().enumerate() {
                *o = (0..BLOCK).map(|u| b[u][m] * tmp[u][n]).sum();
            }
        }
        out
    }

    /// Restricts `x` to the frequencies kept by `mask`.
    ///
    /// For [`Domain::Spatial`] input this is `D⁻¹(D(x) ⊙ M)`; for
    /// [`Domain::Dct`] input the coefficients are multiplied by the mask and
    /// returned in the DCT domain.
    pub fn apply_mask(&self, x: &Tensor, mask: &FrequencyMask, domain: Domain) -> Result<Tensor> {
        let (_, h, w) = plane_dims(x)?;
        if mask.is_all() {
            return Ok(x.clone());
        }
        match domain {
            Domain::Dct => {
                let mut out = x.clone();
                self.mask_coefficients(&mut out, h, w, mask);
                Ok(out)
            }
            Domain::Spatial => {
                let mut coeffs = self.forward(x)?;
                self.mask_coefficients(&mut coeffs, h, w, mask);
                self.inverse(&coeffs)
            }
        }
    }

    fn mask_coefficients(&self, coeffs: &mut Tensor, h: usize, w: usize, mask: &FrequencyMask) {
        for plane in coeffs.data_mut().chunks_mut(h * w) {
            for r in 0..h {
                for c in 0..w {
                    if !mask.keeps(self.zigzag.index(r % BLOCK, c % BLOCK)) {
                        plane[r * w + c] = 0.0;
                    }
                }
            }
        }
    }

    /// DCT energy per zigzag index, summed over blocks and planes.
    pub fn energy_by_frequency(&self, x: &Tensor) -> Result<[f64; NUM_FREQS]> {
        let (_, h, w) = plane_dims(x)?;
        let coeffs = self.forward(x)?;
        let mut energy = [0.0; NUM_FREQS];
        for plane in coeffs.data().chunks(h * w) {
            for r in 0..h {
                for c in 0..w {
                    let v = plane[r * w + c];
                    energy[self.zigzag.index(r % BLOCK, c % BLOCK)] += v * v;
                }
            }
        }
        Ok(energy)
    }

    /// Fraction of the DCT energy of `x` lying at frequencies the mask drops.
    /// Zero for an all-zero tensor.
    pub fn out_of_subspace_fraction(&self, x: &Tensor, mask: &FrequencyMask) -> Result<f64> {
        let energy = self.energy_by_frequency(x)?;
        let total: f64 = energy.iter().sum();
        if total == 0.0 {
            return Ok(0.0);
        }
        let outside: f64 = (0..NUM_FREQS).filter(|&z| !mask.keeps(z)).map(|z| energy[z]).sum();
        Ok(outside / total)
    }
}

/// Forward blockwise DCT with the shared plan.
pub fn dct2_blockwise(x: &Tensor) -> Result<Tensor> {
    DctPlan::global().forward(x)
}

/// Inverse blockwise DCT with the shared plan.
pub fn idct2_blockwise(g: &Tensor) -> Result<Tensor> {
    DctPlan::global().inverse(g)
}

pub fn apply_mask_freq(x: &Tensor, mask: &FrequencyMask, domain: Domain) -> Result<Tensor> {
    DctPlan::global().apply_mask(x, mask, domain)
}

/// Which domain a tensor handed to [`apply_mask_freq`] lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    Spatial,
    Dct,
}

fn plane_dims(x: &Tensor) -> Result<(usize, usize, usize)> {
    let s = x.shape();
    if s.len() < 2 {
        return Err(Error::Shape(format!("blockwise DCT needs at least 2 axes, got {s:?}")));
    }
    let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
    if h % BLOCK != 0 || w % BLOCK != 0 {
        return Err(Error::Shape(format!(
            "height and width must be multiples of {BLOCK}, got {h}x{w}"
        )));
    }
    Ok((x.len() / (h * w), h, w))
}

/// Bijection between zigzag index and (row, col) position in an 8×8 block.
#[derive(Debug, Clone)]
pub struct ZigzagMap {
    to_pos: [(usize, usize); NUM_FREQS],
    to_index: [[usize; BLOCK]; BLOCK],
}

impl ZigzagMap {
    /// JPEG zigzag: anti-diagonals in order, alternating direction, starting
    /// with (0,0), (0,1), (1,0), (2,0), ...
    pub fn new() -> Self {
        let mut to_pos = [(0, 0); NUM_FREQS];
        let mut to_index = [[0; BLOCK]; BLOCK];
        let mut z = 0;
        for s in 0..(2 * BLOCK - 1) {
            let lo = s.saturating_sub(BLOCK - 1);
            let hi = s.min(BLOCK - 1);
            let rows: Vec<usize> = if s % 2 == 0 {
                (lo..=hi).rev().collect()
            } else {
                (lo..=hi).collect()
            };
            for r in rows {
                let c = s - r;
                to_pos[z] = (r, c);
                to_index[r][c] = z;
                z += 1;
            }
        }
        ZigzagMap { to_pos, to_index }
    }

    pub fn position(&self, z: usize) -> (usize, usize) {
        self.to_pos[z]
    }

    pub fn index(&self, row: usize, col: usize) -> usize {
        self.to_index[row][col]
    }

    /// Lays a 64-vector in zigzag order out as an 8×8 row-major grid.
    pub fn fold(&self, values: &[f64; NUM_FREQS]) -> [[f64; BLOCK]; BLOCK] {
        let mut grid = [[0.0; BLOCK]; BLOCK];
        for (z, &v) in values.iter().enumerate() {
            let (r, c) = self.to_pos[z];
            grid[r][c] = v;
        }
        grid
    }
}

impl Default for ZigzagMap {
    fn default() -> Self {
        Self::new()
    }
}

/// Inclusive range of zigzag indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Band {
    lo: usize,
    hi: usize,
}

impl Band {
    pub fn new(lo: usize, hi: usize) -> Result<Self> {
        if lo > hi || hi >= NUM_FREQS {
            return Err(Error::InvalidArgument(format!(
                "band {lo}-{hi} must satisfy 0 <= lo <= hi <= 63"
            )));
        }
        Ok(Band { lo, hi })
    }

    pub fn single(z: usize) -> Result<Self> {
        Band::new(z, z)
    }

    pub fn lo(&self) -> usize {
        self.lo
    }

    pub fn hi(&self) -> usize {
        self.hi
    }

    pub fn contains(&self, z: usize) -> bool {
        (self.lo..=self.hi).contains(&z)
    }

    pub fn len(&self) -> usize {
        self.hi - self.lo + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn overlaps(&self, other: &Band) -> bool {
        self.lo <= other.hi && other.lo <= self.hi
    }

    pub fn indices(&self) -> std::ops::RangeInclusive<usize> {
        self.lo..=self.hi
    }

    /// Zigzag 0–31.
    pub fn low() -> Self {
        Band { lo: 0, hi: 31 }
    }

    /// Zigzag 32–63.
    pub fn high() -> Self {
        Band { lo: 32, hi: 63 }
    }
}

impl fmt::Display for Band {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "b{}-{}", self.lo, self.hi)
    }
}

impl FromStr for Band {
    type Err = Error;

    /// Accepts `b0-15`, `0-15` or a single index `7`.
    fn from_str(s: &str) -> Result<Self> {
        let body = s.trim().trim_start_matches('b');
        let bad = || Error::InvalidArgument(format!("malformed band {s:?}"));
        match body.split_once('-') {
            Some((lo, hi)) => Band::new(
                lo.trim().parse().map_err(|_| bad())?,
                hi.trim().parse().map_err(|_| bad())?,
            ),
            None => Band::single(body.parse().map_err(|_| bad())?),
        }
    }
}

/// Splits the 64 zigzag indices into `count` contiguous equal bands.
pub fn band_partition(count: usize) -> Result<Vec<Band>> {
    if count == 0 || !NUM_FREQS.is_multiple_of(count) {
        return Err(Error::InvalidArgument(format!(
            "cannot split {NUM_FREQS} frequencies into {count} equal bands"
        )));
    }
    let width = NUM_FREQS / count;
    Ok((0..count)
        .map(|i| Band {
            lo: i * width,
            hi: (i + 1) * width - 1,
        })
        .collect())
}

/// Keep/zero flag per zigzag frequency.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FrequencyMask {
    keep: [bool; NUM_FREQS],
}

/// Ways of building a [`FrequencyMask`].
#[derive(Debug, Clone, PartialEq)]
pub enum MaskSpec {
    Indices(Vec<usize>),
    Band(Band),
    Bands(Vec<Band>),
    /// Inside `band` each frequency is zeroed with probability `p`; outside
    /// it is always kept.
    Drop {
        band: Band,
        p: f64,
        seed: u64,
    },
}

impl FrequencyMask {
    pub fn all() -> Self {
        FrequencyMask {
            keep: [true; NUM_FREQS],
        }
    }

    pub fn none() -> Self {
        FrequencyMask {
            keep: [false; NUM_FREQS],
        }
    }

    pub fn from_keep(keep: [bool; NUM_FREQS]) -> Self {
        FrequencyMask { keep }
    }

    pub fn from_indices(indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::InvalidArgument("mask keeps no frequencies".into()));
        }
        let mut keep = [false; NUM_FREQS];
        for &z in indices {
            if z >= NUM_FREQS {
                return Err(Error::InvalidArgument(format!(
                    "frequency index {z} out of range 0..63"
                )));
            }
            keep[z] = true;
        }
        Ok(FrequencyMask { keep })
    }

    pub fn from_band(band: Band) -> Self {
        Self::from_bands(&[band])
    }

    pub fn from_bands(bands: &[Band]) -> Self {
        let mut keep = [false; NUM_FREQS];
        for b in bands {
            for z in b.indices() {
                keep[z] = true;
            }
        }
        FrequencyMask { keep }
    }

    /// All frequencies except `z`.
    pub fn without(z: usize) -> Result<Self> {
        if z >= NUM_FREQS {
            return Err(Error::InvalidArgument(format!("frequency {z} out of range")));
        }
        let mut keep = [true; NUM_FREQS];
        keep[z] = false;
        Ok(FrequencyMask { keep })
    }

    /// One Bernoulli draw per in-band frequency.
    pub fn sample_drop<R: Rng + ?Sized>(band: Band, p: f64, rng: &mut R) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidArgument(format!("drop rate {p} outside [0,1]")));
        }
        let mut keep = [true; NUM_FREQS];
        for z in band.indices() {
            if rng.random::<f64>() < p {
                keep[z] = false;
            }
        }
        Ok(FrequencyMask { keep })
    }

    pub fn keeps(&self, z: usize) -> bool {
        self.keep[z]
    }

    pub fn is_all(&self) -> bool {
        self.keep.iter().all(|&k| k)
    }

    pub fn count(&self) -> usize {
        self.keep.iter().filter(|&&k| k).count()
    }

    pub fn kept(&self) -> Vec<usize> {
        (0..NUM_FREQS).filter(|&z| self.keep[z]).collect()
    }

    pub fn union(&self, other: &FrequencyMask) -> Self {
        let mut keep = self.keep;
        for (k, o) in keep.iter_mut().zip(other.keep) {
            *k |= o;
        }
        FrequencyMask { keep }
    }

    pub fn complement(&self) -> Self {
        let mut keep = self.keep;
        for k in keep.iter_mut() {
            *k = !*k;
        }
        FrequencyMask { keep }
    }
}

pub fn make_mask(spec: &MaskSpec) -> Result<FrequencyMask> {
    match spec {
        MaskSpec::Indices(ix) => FrequencyMask::from_indices(ix),
        MaskSpec::Band(b) => Ok(FrequencyMask::from_band(*b)),
        MaskSpec::Bands(bs) => {
            if bs.is_empty() {
                return Err(Error::InvalidArgument("mask keeps no frequencies".into()));
            }
            Ok(FrequencyMask::from_bands(bs))
        }
        MaskSpec::Drop { band, p, seed } => {
            let mut rng = crate::rng::stream(*seed, crate::rng::Stream::DropMask);
            let mask = FrequencyMask::sample_drop(*band, *p, &mut rng)?;
            if mask.count() == 0 && *p < 1.0 {
                return Err(Error::InvalidArgument("mask keeps no frequencies".into()));
            }
            Ok(mask)
        }
    }
}

impl fmt::Display for FrequencyMask {
    /// 64 characters of `0`/`1` in zigzag order.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &k in &self.keep {
            f.write_str(if k { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl FromStr for FrequencyMask {
    type Err = Error;

    /// Parses the 64-character 0/1 form.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.len() != NUM_FREQS {
            return Err(Error::InvalidArgument(format!(
                "mask string must have {NUM_FREQS} characters, got {}",
                s.len()
            )));
        }
        let mut keep = [false; NUM_FREQS];
        for (k, ch) in keep.iter_mut().zip(s.chars()) {
            *k = match ch {
                '1' => true,
                '0' => false,
                other => return Err(Error::InvalidArgument(format!("mask string contains {other:?}"))),
            };
        }
        Ok(FrequencyMask { keep })
    }
}
