//! Frequency-domain synthesis: centered 2-D DFT, off-resonance phase,
//! Cartesian line masks, and extraction of sparse samples as point sets.
//!
//! Conventions used throughout:
//! - images are row-major `[H, W]`, pixel `(x, y)` = (row, column);
//! - k-space is row-major `[H, W]` with the DC coefficient at
//!   `(H/2, W/2)` — a centered spectrum;
//! - the forward transform is unnormalized, the inverse carries `1/(H·W)`,
//!   so `Σ|img|² = (1/(H·W))·Σ|K|²` holds exactly (up to rounding).

use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex;

use crate::fmath;
use crate::rng::{self, Rng};
use crate::tensor::{Tensor, TensorError};

pub type C64 = Complex<f64>;

const PI: f64 = core::f64::consts::PI;

// ── Transforms ───────────────────────────────────────────────────────────

fn is_pow2(n: usize) -> bool {
    n >= 2 && n & (n - 1) == 0
}

/// Iterative radix-2 Cooley–Tukey, in place. `buf.len()` must be a power of
/// two. Unnormalized in both directions.
fn fft_pow2(buf: &mut [C64], inverse: bool) {
    let n = buf.len();
    let mut j = 0usize;
    for i in 1..n {
        let mut bit = n >> 1;
        while j & bit != 0 {
            j ^= bit;
            bit >>= 1;
        }
        j |= bit;
        if i < j {
            buf.swap(i, j);
        }
    }
    let sign = if inverse { 1.0 } else { -1.0 };
    let mut len = 2;
    while len <= n {
        let ang = sign * 2.0 * PI / len as f64;
        let wlen = C64::new(fmath::cos(ang), fmath::sin(ang));
        let half = len / 2;
        let mut start = 0;
        while start < n {
            let mut w = C64::new(1.0, 0.0);
            for k in 0..half {
                let u = buf[start + k];
                let v = buf[start + k + half] * w;
                buf[start + k] = u + v;
                buf[start + k + half] = u - v;
                w *= wlen;
            }
            start += len;
        }
        len <<= 1;
    }
}

/// Direct O(n²) single-axis transform for lengths the radix-2 path can't
/// take. The twiddle exponent is reduced mod n before the trig call.
fn dft_naive(src: &[C64], inverse: bool) -> Vec<C64> {
    let n = src.len();
    let sign = if inverse { 1.0 } else { -1.0 };
    let mut out = vec![C64::new(0.0, 0.0); n];
    for (k, slot) in out.iter_mut().enumerate() {
        let mut acc = C64::new(0.0, 0.0);
        for (x, s) in src.iter().enumerate() {
            let ang = sign * 2.0 * PI * ((k * x) % n) as f64 / n as f64;
            acc += s * C64::new(fmath::cos(ang), fmath::sin(ang));
        }
        *slot = acc;
    }
    out
}

fn transform_axis(buf: &mut Vec<C64>, inverse: bool) {
    if is_pow2(buf.len()) {
        fft_pow2(buf, inverse);
    } else if buf.len() > 1 {
        *buf = dft_naive(buf, inverse);
    }
}

// 2-D transform: rows, then columns through a scratch lane.
fn transform2(data: &mut [C64], h: usize, w: usize, inverse: bool) {
    let mut lane: Vec<C64> = Vec::new();
    for r in 0..h {
        lane.clear();
        lane.extend_from_slice(&data[r * w..(r + 1) * w]);
        transform_axis(&mut lane, inverse);
        data[r * w..(r + 1) * w].copy_from_slice(&lane);
    }
    for c in 0..w {
        lane.clear();
        lane.extend((0..h).map(|r| data[r * w + c]));
        transform_axis(&mut lane, inverse);
        for (r, v) in lane.iter().enumerate() {
            data[r * w + c] = *v;
        }
    }
}

// Centered layout: out[u, v] = in[(u − H/2) mod H, (v − W/2) mod W].
fn shift2(data: &[C64], h: usize, w: usize, inverse: bool) -> Vec<C64> {
    let (cu, cv) = (h / 2, w / 2);
    let mut out = vec![C64::new(0.0, 0.0); data.len()];
    for u in 0..h {
        for v in 0..w {
            let (su, sv) = if inverse {
                ((u + cu) % h, (v + cv) % w)
            } else {
                ((u + h - cu) % h, (v + w - cv) % w)
            };
            out[u * w + v] = data[su * w + sv];
        }
    }
    out
}

/// Centered 2-D DFT of a complex image.
pub fn dft2_complex(img: &[C64], h: usize, w: usize) -> Vec<C64> {
    debug_assert_eq!(img.len(), h * w);
    let mut data = img.to_vec();
    transform2(&mut data, h, w, false);
    shift2(&data, h, w, false)
}

/// Centered 2-D DFT of a real image stored in a rank-2 tensor.
pub fn dft2(img: &Tensor) -> Result<Vec<C64>, TensorError> {
    if img.rank() != 2 {
        return Err(TensorError::BadAxis {
            op: "dft2",
            axis: 2,
            rank: img.rank(),
        });
    }
    let (h, w) = (img.shape()[0], img.shape()[1]);
    let buf: Vec<C64> = img.data().iter().map(|v| C64::new(*v, 0.0)).collect();
    Ok(dft2_complex(&buf, h, w))
}

/// Inverse of [`dft2_complex`]: centered spectrum back to a complex image,
/// scaled by `1/(H·W)`.
pub fn idft2(k: &[C64], h: usize, w: usize) -> Vec<C64> {
    debug_assert_eq!(k.len(), h * w);
    let mut data = shift2(k, h, w, true);
    transform2(&mut data, h, w, true);
    let scale = 1.0 / (h * w) as f64;
    for v in data.iter_mut() {
        *v *= scale;
    }
    data
}

// ── Off-resonance phase ──────────────────────────────────────────────────

/// Smooth field-inhomogeneity phase: a sum of random Gaussian bumps, drawn
/// once per scan and applied identically to every frame.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct B0Config {
    pub enabled: bool,
    /// Number of Gaussian bumps.
    pub bumps: usize,
    /// Bump widths are drawn uniformly from this range, as a fraction of the
    /// image height.
    pub width_range: (f64, f64),
    /// Bump amplitudes (radians) are drawn from `N(0, amp_std²)`.
    pub amp_std: f64,
}

impl Default for B0Config {
    fn default() -> Self {
        B0Config {
            enabled: true,
            bumps: 3,
            width_range: (0.15, 0.4),
            amp_std: PI / 2.0,
        }
    }
}

/// Phase map `φ(x, y)` in radians, length `h·w`, fully determined by `seed`.
pub fn b0_phase_map(h: usize, w: usize, cfg: &B0Config, seed: u64) -> Vec<f64> {
    let mut phi = vec![0.0; h * w];
    if !cfg.enabled {
        return phi;
    }
    let mut r: Rng = rng::rng_from_seed(seed);
    for _ in 0..cfg.bumps {
        let cx = rng::uniform_in(&mut r, 0.0, h as f64);
        let cy = rng::uniform_in(&mut r, 0.0, w as f64);
        let sigma = rng::uniform_in(&mut r, cfg.width_range.0, cfg.width_range.1) * h as f64;
        let amp = rng::normal(&mut r) * cfg.amp_std;
        let inv2s2 = 1.0 / (2.0 * sigma * sigma);
        for x in 0..h {
            for y in 0..w {
                let dx = x as f64 - cx;
                let dy = y as f64 - cy;
                phi[x * w + y] += amp * fmath::exp(-(dx * dx + dy * dy) * inv2s2);
            }
        }
    }
    phi
}

/// Turn a real frame into the complex image `img·e^{iφ}` with the scan's
/// phase map. With `cfg.enabled == false` the phase is identically zero.
pub fn apply_b0_phase(img: &Tensor, cfg: &B0Config, seed: u64) -> Result<Vec<C64>, TensorError> {
    if img.rank() != 2 {
        return Err(TensorError::BadAxis {
            op: "apply_b0_phase",
            axis: 2,
            rank: img.rank(),
        });
    }
    let (h, w) = (img.shape()[0], img.shape()[1]);
    let phi = b0_phase_map(h, w, cfg, seed);
    Ok(img
        .data()
        .iter()
        .zip(&phi)
        .map(|(m, p)| C64::new(m * fmath::cos(*p), m * fmath::sin(*p)))
        .collect())
}

// ── Sampling masks ───────────────────────────────────────────────────────

/// Number of phase-encode lines kept at acceleration `r`: `round(h/r)`,
/// at least one, never more than `h`.
pub fn lines_for_acceleration(h: usize, r: f64) -> usize {
    let n = fmath::round(h as f64 / r) as usize;
    n.clamp(1, h)
}

/// Draw a variable-density Cartesian line mask: the DC line `h/2` is always
/// kept, and further distinct lines are rejection-sampled from
/// `round(N(h/2, (h/6)²))` clamped to `[0, h−1]` until `lines_for_acceleration`
/// lines are collected. Returns sorted line indices.
pub fn generate_mask(h: usize, r: f64, seed: u64) -> Vec<usize> {
    let target = lines_for_acceleration(h, r);
    let mut rng = rng::rng_from_seed(seed);
    let mut taken = vec![false; h];
    let mut lines = Vec::with_capacity(target);
    let dc = h / 2;
    taken[dc] = true;
    lines.push(dc);
    let sigma = h as f64 / 6.0;
    while lines.len() < target {
        let v = fmath::round(h as f64 / 2.0 + rng::normal(&mut rng) * sigma);
        let idx = if v < 0.0 {
            0
        } else if v > (h - 1) as f64 {
            h - 1
        } else {
            v as usize
        };
        if !taken[idx] {
            taken[idx] = true;
            lines.push(idx);
        }
    }
    lines.sort_unstable();
    lines
}

/// Zero out every k-space row not in `lines` — the zero-filled baseline.
pub fn apply_mask(k: &[C64], h: usize, w: usize, lines: &[usize]) -> Vec<C64> {
    let mut keep = vec![false; h];
    for l in lines {
        keep[*l] = true;
    }
    let mut out = vec![C64::new(0.0, 0.0); k.len()];
    for u in 0..h {
        if keep[u] {
            out[u * w..(u + 1) * w].copy_from_slice(&k[u * w..(u + 1) * w]);
        }
    }
    out
}

// ── Sample extraction ────────────────────────────────────────────────────

/// Sparse k-space samples of one scan, flattened across frames, as the model
/// consumes them: normalized coordinates and complex values.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    /// `(k_y, k_x, t)` per sample, each axis mapped to `[−1, 1]`
    /// (single-element axes map to `0.0`).
    pub coords: Vec<[f64; 3]>,
    /// `(Re, Im)` per sample, divided by the scan's peak modulus.
    pub values: Vec<[f64; 2]>,
    /// Peak modulus before normalization; zero for an all-zero scan (in
    /// which case the values are left untouched).
    pub value_scale: f64,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }
}

/// Normalized position of index `i` on an axis of length `d`: endpoints map
/// to `±1`, a single-element axis to `0`. Shared by k-space sample
/// coordinates and image-domain query grids.
pub fn axis_coord(i: usize, d: usize) -> f64 {
    if d <= 1 {
        0.0
    } else {
        2.0 * i as f64 / (d - 1) as f64 - 1.0
    }
}

/// Gather the masked k-space rows of every frame into a flat sample set.
/// `kspace[t]` is the centered spectrum of frame `t`; `masks[t]` its kept
/// line indices.
pub fn extract_samples(kspace: &[Vec<C64>], masks: &[Vec<usize>], h: usize, w: usize) -> SampleSet {
    debug_assert_eq!(kspace.len(), masks.len());
    let t_total = kspace.len();
    let mut coords = Vec::new();
    let mut values = Vec::new();
    for (t, (k, lines)) in kspace.iter().zip(masks).enumerate() {
        let tc = axis_coord(t, t_total);
        for &u in lines {
            let yc = axis_coord(u, h);
            for v in 0..w {
                coords.push([yc, axis_coord(v, w), tc]);
                let c = k[u * w + v];
                values.push([c.re, c.im]);
            }
        }
    }
    let mut peak = 0.0f64;
    for val in &values {
        let m = fmath::sqrt(val[0] * val[0] + val[1] * val[1]);
        if m > peak {
            peak = m;
        }
    }
    if peak > 0.0 {
        for val in values.iter_mut() {
            val[0] /= peak;
            val[1] /= peak;
        }
    }
    SampleSet {
        coords,
        values,
        value_scale: peak,
    }
}
