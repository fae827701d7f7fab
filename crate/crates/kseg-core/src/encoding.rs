//! Fourier-feature encoding of scalars into token rows.
//!
//! Every scalar input — coordinates and complex sample values alike — is
//! expanded into `sin(2ʲπp), cos(2ʲπp)` pairs for `j = 0..F−1`, optionally
//! with the raw value prepended. Token builders are pure row-wise maps: the
//! learned projections to model width live with the model parameters, not
//! here.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::fmath;
use crate::kspace::SampleSet;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncodingConfig {
    /// Number of octaves `F`; frequencies are `2⁰π … 2^{F−1}π`.
    pub num_frequencies: usize,
    /// Prepend the raw scalar to its sin/cos features.
    pub include_raw: bool,
}

impl Default for EncodingConfig {
    fn default() -> Self {
        EncodingConfig {
            num_frequencies: 10,
            include_raw: true,
        }
    }
}

/// Scalars per encoder input sample: `(k_y, k_x, t, Re v, Im v)`.
pub const INPUT_SCALARS: usize = 5;
/// Scalars per decoder query: `(y, x, t)`.
pub const QUERY_SCALARS: usize = 3;

impl EncodingConfig {
    /// Encoded length of one scalar: `2F`, plus one for the raw value.
    pub fn per_scalar_len(&self) -> usize {
        2 * self.num_frequencies + usize::from(self.include_raw)
    }

    /// Width of an encoder input token before projection.
    pub fn input_dim(&self) -> usize {
        INPUT_SCALARS * self.per_scalar_len()
    }

    /// Width of a decoder query token before projection.
    pub fn query_dim(&self) -> usize {
        QUERY_SCALARS * self.per_scalar_len()
    }
}

/// Append the encoding of one scalar to `out`. Inputs are expected in
/// `[−1, 1]`; out-of-range values still encode but trip a debug assertion.
pub fn encode_scalar_into(p: f64, cfg: &EncodingConfig, out: &mut Vec<f64>) {
    debug_assert!(
        (-1.0 - 1e-9..=1.0 + 1e-9).contains(&p),
        "scalar {p} outside the normalized range"
    );
    if cfg.include_raw {
        out.push(p);
    }
    let mut freq = core::f64::consts::PI;
    for _ in 0..cfg.num_frequencies {
        out.push(fmath::sin(freq * p));
        out.push(fmath::cos(freq * p));
        freq *= 2.0;
    }
}

pub fn encode_scalar(p: f64, cfg: &EncodingConfig) -> Vec<f64> {
    let mut out = Vec::with_capacity(cfg.per_scalar_len());
    encode_scalar_into(p, cfg, &mut out);
    out
}

/// Encoder input tokens, one row per k-space sample, in the sample order of
/// `s`: the five scalars `(k_y, k_x, t, Re, Im)` encoded and concatenated.
/// Shape `[N, input_dim]`.
pub fn build_input_tokens(s: &SampleSet, cfg: &EncodingConfig) -> Tensor {
    let n = s.len();
    let width = cfg.input_dim();
    let mut data = Vec::with_capacity(n * width);
    for (coord, value) in s.coords.iter().zip(&s.values) {
        for p in [coord[0], coord[1], coord[2], value[0], value[1]] {
            encode_scalar_into(p, cfg, &mut data);
        }
    }
    Tensor::new(alloc::vec![n, width], data).expect("row-wise encoding fills N×width")
}

/// Decoder query tokens, one row per coordinate triple `(y, x, t)`.
/// Shape `[P, query_dim]`.
pub fn build_query_tokens(coords: &[[f64; 3]], cfg: &EncodingConfig) -> Tensor {
    let width = cfg.query_dim();
    let mut data = Vec::with_capacity(coords.len() * width);
    for c in coords {
        for p in c {
            encode_scalar_into(*p, cfg, &mut data);
        }
    }
    Tensor::new(alloc::vec![coords.len(), width], data).expect("row-wise encoding fills P×width")
}

/// Normalized query coordinates of every pixel of frame `t`, row-major.
pub fn frame_grid_coords(t: usize, t_total: usize, h: usize, w: usize) -> Vec<[f64; 3]> {
    let tc = crate::kspace::axis_coord(t, t_total);
    let mut coords = Vec::with_capacity(h * w);
    for x in 0..h {
        let yc = crate::kspace::axis_coord(x, h);
        for y in 0..w {
            coords.push([yc, crate::kspace::axis_coord(y, w), tc]);
        }
    }
    coords
}

/// Grid coordinates of a whole `T×H×W` volume, frame-major.
pub fn volume_grid_coords(t_total: usize, h: usize, w: usize) -> Vec<[f64; 3]> {
    let mut coords = Vec::with_capacity(t_total * h * w);
    for t in 0..t_total {
        coords.extend(frame_grid_coords(t, t_total, h, w));
    }
    coords
}
