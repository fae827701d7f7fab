//! Set-to-set segmentation network: a Perceiver-style encoder compresses an
//! arbitrary number of k-space sample tokens into `M` latent vectors, and a
//! cross-attention decoder conditions image-domain query coordinates on
//! those latents to produce per-class probabilities.
//!
//! All blocks share one code path: pre-norm multi-head attention with a
//! residual, followed by a pre-norm two-layer GELU feed-forward with a
//! residual. Self-attention is cross-attention with queries = context.
//!
//! Parameters are a flat, named, ordered registry so that packing,
//! checkpointing, and the optimizer all agree on one canonical order.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::encoding::{build_input_tokens, build_query_tokens, EncodingConfig};
use crate::fmath;
use crate::graph::{Graph, Var};
use crate::kspace::SampleSet;
use crate::rng::Rng;
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Encoder depth (cross + self attention pairs) and decoder depth.
    pub layers: usize,
    /// Number of latent vectors `M`.
    pub latents: usize,
    /// Token width `d`.
    pub width: usize,
    /// Hidden width of the feed-forward sublayers.
    pub ff_width: usize,
    /// Attention heads; must divide `width`.
    pub heads: usize,
    /// Output classes `C`.
    pub classes: usize,
    pub encoding: EncodingConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            layers: 4,
            latents: 128,
            width: 128,
            ff_width: 128,
            heads: 4,
            classes: 4,
            encoding: EncodingConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.width == 0 || self.heads == 0 || !self.width.is_multiple_of(self.heads) {
            return Err(format!(
                "width {} must be a positive multiple of heads {}",
                self.width, self.heads
            ));
        }
        if self.classes < 2 {
            return Err(format!("need at least 2 classes, got {}", self.classes));
        }
        if self.layers == 0 || self.latents == 0 || self.ff_width == 0 {
            return Err(String::from("layers, latents, and ff_width must be positive"));
        }
        if self.encoding.num_frequencies == 0 {
            return Err(String::from("encoding needs at least one frequency"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy)]
enum Init {
    Randn,
    Zeros,
    Ones,
}

// The single source of truth for parameter names, shapes, and initializers,
// in canonical order. Everything that walks parameters goes through here.
fn for_each_spec(cfg: &ModelConfig, mut f: impl FnMut(&str, &[usize], Init)) {
    let d = cfg.width;
    let ff = cfg.ff_width;
    let block = |prefix: &str, f: &mut dyn FnMut(&str, &[usize], Init)| {
        for norm in ["ln_q", "ln_kv", "ln_ff"] {
            f(&format!("{prefix}.{norm}.gain"), &[d], Init::Ones);
            f(&format!("{prefix}.{norm}.bias"), &[d], Init::Zeros);
        }
        for proj in ["wq", "wk", "wv", "wo"] {
            f(&format!("{prefix}.{proj}"), &[d, d], Init::Randn);
            f(&format!("{prefix}.b{}", &proj[1..]), &[d], Init::Zeros);
        }
        f(&format!("{prefix}.ff1.weight"), &[d, ff], Init::Randn);
        f(&format!("{prefix}.ff1.bias"), &[ff], Init::Zeros);
        f(&format!("{prefix}.ff2.weight"), &[ff, d], Init::Randn);
        f(&format!("{prefix}.ff2.bias"), &[d], Init::Zeros);
    };
    f("input_proj.weight", &[cfg.encoding.input_dim(), d], Init::Randn);
    f("input_proj.bias", &[d], Init::Zeros);
    f("query_proj.weight", &[cfg.encoding.query_dim(), d], Init::Randn);
    f("query_proj.bias", &[d], Init::Zeros);
    f("latents", &[cfg.latents, d], Init::Randn);
    for l in 0..cfg.layers {
        block(&format!("encoder.{l}.cross"), &mut f);
        block(&format!("encoder.{l}.selfattn"), &mut f);
    }
    for l in 0..cfg.layers {
        block(&format!("decoder.{l}.cross"), &mut f);
    }
    f("head.weight", &[d, cfg.classes], Init::Randn);
    f("head.bias", &[cfg.classes], Init::Zeros);
}

/// Total scalar parameter count for a configuration.
pub fn expected_param_count(cfg: &ModelConfig) -> usize {
    let mut count = 0;
    for_each_spec(cfg, |_, shape, _| count += shape.iter().product::<usize>());
    count
}

/// The learnable state: named tensors in canonical order.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    entries: Vec<(String, Tensor)>,
}

/// Weight init scale; also the latent-initialization standard deviation.
const INIT_STD: f64 = 0.02;

impl Params {
    /// Fresh parameters: weights and the latent bank from `N(0, 0.02²)`,
    /// biases zero, norm gains one. Deterministic in `rng`.
    pub fn init(cfg: &ModelConfig, rng: &mut Rng) -> Params {
        cfg.validate().expect("invalid model configuration");
        let mut entries = Vec::new();
        for_each_spec(cfg, |name, shape, init| {
            let t = match init {
                Init::Randn => Tensor::randn(shape, INIT_STD, rng),
                Init::Zeros => Tensor::zeros(shape),
                Init::Ones => Tensor::full(shape, 1.0),
            };
            entries.push((String::from(name), t.with_grad()));
        });
        Params { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries
            .iter_mut()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
    }

    pub fn param_count(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    /// Flatten every tensor, canonical order.
    pub fn pack(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.param_count());
        for (_, t) in &self.entries {
            flat.extend_from_slice(t.data());
        }
        flat
    }

    /// Inverse of [`Params::pack`]; `flat` must have exactly
    /// `param_count` elements.
    pub fn unpack(&mut self, flat: &[f64]) -> Result<(), TensorError> {
        if flat.len() != self.param_count() {
            return Err(TensorError::DataLength {
                expected: self.param_count(),
                got: flat.len(),
            });
        }
        let mut off = 0;
        for (_, t) in self.entries.iter_mut() {
            let n = t.numel();
            t.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }
}

/// Parameter leaves staged into a graph, order-aligned with [`Params`].
pub struct StagedParams {
    vars: Vec<(String, Var)>,
}

impl StagedParams {
    pub fn var(&self, name: &str) -> Var {
        self.vars
            .iter()
            .find(|(n, _)| n == name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
            .1
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(n, v)| (n.as_str(), *v))
    }
}

/// Insert every parameter tensor as a graph leaf. With `trainable` the
/// leaves request gradients; inference passes skip the bookkeeping.
pub fn stage_params(g: &mut Graph, params: &Params, trainable: bool) -> StagedParams {
    let vars = params
        .iter()
        .map(|(name, t)| {
            let var = if trainable {
                g.leaf(t.clone().with_grad())
            } else {
                g.constant(t.clone())
            };
            (String::from(name), var)
        })
        .collect();
    StagedParams { vars }
}

const LN_EPS: f64 = 1e-5;

fn layer_norm_named(
    g: &mut Graph,
    p: &StagedParams,
    prefix: &str,
    x: Var,
) -> Result<Var, TensorError> {
    let gain = p.var(&format!("{prefix}.gain"));
    let bias = p.var(&format!("{prefix}.bias"));
    g.layer_norm(x, gain, bias, LN_EPS)
}

fn linear(
    g: &mut Graph,
    p: &StagedParams,
    weight: &str,
    bias: &str,
    x: Var,
) -> Result<Var, TensorError> {
    let w = p.var(weight);
    let b = p.var(bias);
    let y = g.matmul(x, w)?;
    g.bias_add(y, b)
}

/// One attention block under `prefix`: pre-norm multi-head attention from
/// `queries` into `context` with a residual, then a pre-norm feed-forward
/// with a residual. Softmax runs over the context axis, scaled by
/// `1/√(d/h)`. Errors on an empty context.
pub fn cross_attention(
    g: &mut Graph,
    p: &StagedParams,
    prefix: &str,
    queries: Var,
    context: Var,
    cfg: &ModelConfig,
) -> Result<Var, TensorError> {
    if g.value(context).numel() == 0 {
        return Err(TensorError::Empty { op: "cross_attention" });
    }
    let d = cfg.width;
    let dh = d / cfg.heads;
    let xq = layer_norm_named(g, p, &format!("{prefix}.ln_q"), queries)?;
    let xkv = layer_norm_named(g, p, &format!("{prefix}.ln_kv"), context)?;
    let q = linear(g, p, &format!("{prefix}.wq"), &format!("{prefix}.bq"), xq)?;
    let k = linear(g, p, &format!("{prefix}.wk"), &format!("{prefix}.bk"), xkv)?;
    let v = linear(g, p, &format!("{prefix}.wv"), &format!("{prefix}.bv"), xkv)?;
    let scale = 1.0 / fmath::sqrt(dh as f64);
    let mut heads = Vec::with_capacity(cfg.heads);
    for i in 0..cfg.heads {
        let qi = g.slice(q, 1, i * dh, dh)?;
        let ki = g.slice(k, 1, i * dh, dh)?;
        let vi = g.slice(v, 1, i * dh, dh)?;
        let kt = g.transpose(ki)?;
        let scores = g.matmul(qi, kt)?;
        let scaled = g.scale(scores, scale);
        let attn = g.softmax(scaled, 1)?;
        heads.push(g.matmul(attn, vi)?);
    }
    let merged = g.concat(&heads, 1)?;
    let proj = linear(g, p, &format!("{prefix}.wo"), &format!("{prefix}.bo"), merged)?;
    let x1 = g.add(queries, proj)?;

    let xf = layer_norm_named(g, p, &format!("{prefix}.ln_ff"), x1)?;
    let h1 = linear(
        g,
        p,
        &format!("{prefix}.ff1.weight"),
        &format!("{prefix}.ff1.bias"),
        xf,
    )?;
    let h1 = g.gelu(h1);
    let h2 = linear(
        g,
        p,
        &format!("{prefix}.ff2.weight"),
        &format!("{prefix}.ff2.bias"),
        h1,
    )?;
    g.add(x1, h2)
}

/// Self-attention is the same block with queries = context.
pub fn self_attention(
    g: &mut Graph,
    p: &StagedParams,
    prefix: &str,
    latents: Var,
    cfg: &ModelConfig,
) -> Result<Var, TensorError> {
    cross_attention(g, p, prefix, latents, latents, cfg)
}

/// Build the encoder graph: project input tokens to width `d`, then run `L`
/// rounds of latent←token cross-attention followed by latent
/// self-attention. Returns the `M×d` latent node.
pub fn encode_graph(
    g: &mut Graph,
    p: &StagedParams,
    cfg: &ModelConfig,
    samples: &SampleSet,
) -> Result<Var, TensorError> {
    if samples.is_empty() {
        return Err(TensorError::Empty { op: "encode" });
    }
    let tokens = g.constant(build_input_tokens(samples, &cfg.encoding));
    let x = linear(g, p, "input_proj.weight", "input_proj.bias", tokens)?;
    let mut h = p.var("latents");
    for l in 0..cfg.layers {
        h = cross_attention(g, p, &format!("encoder.{l}.cross"), h, x, cfg)?;
        h = self_attention(g, p, &format!("encoder.{l}.selfattn"), h, cfg)?;
    }
    Ok(h)
}

/// Build the decoder graph: project query tokens, run `L` cross-attention
/// blocks into the latents, then the linear head and a per-row softmax.
/// Returns the `P×C` probability node.
pub fn decode_graph(
    g: &mut Graph,
    p: &StagedParams,
    cfg: &ModelConfig,
    latents: Var,
    coords: &[[f64; 3]],
) -> Result<Var, TensorError> {
    if coords.is_empty() {
        return Err(TensorError::Empty { op: "decode" });
    }
    let tokens = g.constant(build_query_tokens(coords, &cfg.encoding));
    let mut q = linear(g, p, "query_proj.weight", "query_proj.bias", tokens)?;
    for l in 0..cfg.layers {
        q = cross_attention(g, p, &format!("decoder.{l}.cross"), q, latents, cfg)?;
    }
    let logits = linear(g, p, "head.weight", "head.bias", q)?;
    g.softmax(logits, 1)
}

/// Full forward pass as one graph: probabilities for `coords` given the
/// sample set. Gradients reach every parameter, the latent bank included.
pub fn forward_graph(
    g: &mut Graph,
    p: &StagedParams,
    cfg: &ModelConfig,
    samples: &SampleSet,
    coords: &[[f64; 3]],
) -> Result<Var, TensorError> {
    let h = encode_graph(g, p, cfg, samples)?;
    decode_graph(g, p, cfg, h, coords)
}

/// Encoder output outside any graph: the `M×d` latent matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentState {
    pub h: Tensor,
}

/// Inference-only encode: runs the encoder graph and extracts the value.
pub fn encode(samples: &SampleSet, params: &Params, cfg: &ModelConfig) -> Result<LatentState, TensorError> {
    let mut g = Graph::new();
    let staged = stage_params(&mut g, params, false);
    let h = encode_graph(&mut g, &staged, cfg, samples)?;
    Ok(LatentState {
        h: g.value(h).clone(),
    })
}

/// Inference-only decode from a stored latent state.
pub fn decode(
    latents: &LatentState,
    coords: &[[f64; 3]],
    params: &Params,
    cfg: &ModelConfig,
) -> Result<Tensor, TensorError> {
    let mut g = Graph::new();
    let staged = stage_params(&mut g, params, false);
    let h = g.constant(latents.h.clone());
    let probs = decode_graph(&mut g, &staged, cfg, h, coords)?;
    Ok(g.value(probs).clone())
}

/// Inference-only forward: `P×C` probabilities.
pub fn forward(
    samples: &SampleSet,
    coords: &[[f64; 3]],
    params: &Params,
    cfg: &ModelConfig,
) -> Result<Tensor, TensorError> {
    let mut g = Graph::new();
    let staged = stage_params(&mut g, params, false);
    let probs = forward_graph(&mut g, &staged, cfg, samples, coords)?;
    Ok(g.value(probs).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use alloc::collections::BTreeSet;
    use alloc::vec;

    pub(crate) fn toy_config() -> ModelConfig {
        ModelConfig {
            layers: 2,
            latents: 4,
            width: 8,
            ff_width: 8,
            heads: 2,
            classes: 4,
            encoding: EncodingConfig {
                num_frequencies: 2,
                include_raw: true,
            },
        }
    }

    fn toy_samples(n: usize, seed: u64) -> SampleSet {
        let mut r = rng_from_seed(seed);
        let coords = (0..n)
            .map(|_| {
                [
                    crate::rng::uniform_in(&mut r, -1.0, 1.0),
                    crate::rng::uniform_in(&mut r, -1.0, 1.0),
                    crate::rng::uniform_in(&mut r, -1.0, 1.0),
                ]
            })
            .collect();
        let values = (0..n)
            .map(|_| {
                [
                    crate::rng::uniform_in(&mut r, -1.0, 1.0),
                    crate::rng::uniform_in(&mut r, -1.0, 1.0),
                ]
            })
            .collect();
        SampleSet {
            coords,
            values,
            value_scale: 1.0,
        }
    }

    #[test]
    fn param_count_is_a_pure_function_of_config() {
        let cfg = toy_config();
        let mut r = rng_from_seed(0);
        let p = Params::init(&cfg, &mut r);
        assert_eq!(p.param_count(), expected_param_count(&cfg));
        // Frozen hand count for the toy shape: projections 208 + 128,
        // latents 32, 6 blocks of 480, head 36.
        assert_eq!(p.param_count(), 3284);
        // Default config: projections 13568 + 8192, latents 16384,
        // 12 blocks of 99840, head 516.
        assert_eq!(expected_param_count(&ModelConfig::default()), 1_236_740);
    }

    #[test]
    fn parameter_names_are_unique() {
        let mut r = rng_from_seed(0);
        let p = Params::init(&toy_config(), &mut r);
        let names: BTreeSet<_> = p.iter().map(|(n, _)| String::from(n)).collect();
        assert_eq!(names.len(), p.len());
    }

    #[test]
    fn pack_unpack_round_trips_bitwise() {
        let mut r = rng_from_seed(3);
        let cfg = toy_config();
        let a = Params::init(&cfg, &mut r);
        let flat = a.pack();
        let mut b = Params::init(&cfg, &mut r); // different draw
        assert_ne!(a, b);
        b.unpack(&flat).unwrap();
        assert_eq!(a, b);
        assert_eq!(b.pack(), flat);
    }

    #[test]
    fn unpack_rejects_wrong_length() {
        let mut r = rng_from_seed(4);
        let mut p = Params::init(&toy_config(), &mut r);
        let err = p.unpack(&[0.0; 7]).unwrap_err();
        assert!(matches!(err, TensorError::DataLength { .. }));
    }

    #[test]
    fn init_is_deterministic_in_the_rng() {
        let cfg = toy_config();
        let a = Params::init(&cfg, &mut rng_from_seed(9));
        let b = Params::init(&cfg, &mut rng_from_seed(9));
        assert_eq!(a, b);
    }

    #[test]
    fn probability_rows_sum_to_one() {
        let cfg = toy_config();
        let mut r = rng_from_seed(5);
        let params = Params::init(&cfg, &mut r);
        let s = toy_samples(16, 6);
        let coords = vec![[0.0, 0.0, 0.0], [0.5, -0.5, 1.0], [-1.0, 1.0, -1.0]];
        let probs = forward(&s, &coords, &params, &cfg).unwrap();
        assert_eq!(probs.shape(), &[3, 4]);
        for row in probs.data().chunks(4) {
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9, "row sum {sum}");
            assert!(row.iter().all(|p| *p > 0.0 && *p < 1.0));
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let cfg = toy_config();
        let params = Params::init(&cfg, &mut rng_from_seed(7));
        let s = toy_samples(10, 8);
        let coords = vec![[0.2, 0.4, 0.0]];
        let a = forward(&s, &coords, &params, &cfg).unwrap();
        let b = forward(&s, &coords, &params, &cfg).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn empty_sample_set_is_rejected() {
        let cfg = toy_config();
        let params = Params::init(&cfg, &mut rng_from_seed(1));
        let empty = SampleSet {
            coords: vec![],
            values: vec![],
            value_scale: 0.0,
        };
        let err = encode(&empty, &params, &cfg).unwrap_err();
        assert!(matches!(err, TensorError::Empty { op: "encode" }));
    }

    #[test]
    fn single_sample_is_accepted_and_finite() {
        let cfg = toy_config();
        let params = Params::init(&cfg, &mut rng_from_seed(2));
        let s = toy_samples(1, 3);
        let latents = encode(&s, &params, &cfg).unwrap();
        assert_eq!(latents.h.shape(), &[4, 8]);
        assert!(latents.h.is_finite());
    }

    #[test]
    fn singleton_context_ignores_attention_scores() {
        // With one context row the softmax weight is 1 no matter what the
        // query projection produces: rescaling wq must not move the output.
        let cfg = toy_config();
        let mut params = Params::init(&cfg, &mut rng_from_seed(11));
        let run = |params: &Params, queries: &Tensor, context: &Tensor| {
            let mut g = Graph::new();
            let staged = stage_params(&mut g, params, false);
            let q = g.constant(queries.clone());
            let c = g.constant(context.clone());
            let out = cross_attention(&mut g, &staged, "encoder.0.cross", q, c, &cfg).unwrap();
            g.value(out).clone()
        };
        let mut r = rng_from_seed(12);
        let queries = Tensor::randn(&[3, 8], 1.0, &mut r);
        let context = Tensor::randn(&[1, 8], 1.0, &mut r);
        let before = run(&params, &queries, &context);
        for v in params.get_mut("encoder.0.cross.wq").unwrap().data_mut() {
            *v *= 100.0;
        }
        let after = run(&params, &queries, &context);
        let dev = before
            .data()
            .iter()
            .zip(after.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(dev < 1e-12, "singleton attention must be score-free, dev {dev}");
    }

    #[test]
    fn context_permutation_leaves_attention_unchanged() {
        let cfg = toy_config();
        let params = Params::init(&cfg, &mut rng_from_seed(13));
        let mut r = rng_from_seed(14);
        let queries = Tensor::randn(&[2, 8], 1.0, &mut r);
        let context = Tensor::randn(&[5, 8], 1.0, &mut r);
        let mut permuted_rows: Vec<&[f64]> = context.data().chunks(8).collect();
        permuted_rows.rotate_left(2);
        let permuted = Tensor::new(
            vec![5, 8],
            permuted_rows.concat(),
        )
        .unwrap();
        let run = |context: &Tensor| {
            let mut g = Graph::new();
            let staged = stage_params(&mut g, &params, false);
            let q = g.constant(queries.clone());
            let c = g.constant(context.clone());
            let out = cross_attention(&mut g, &staged, "decoder.0.cross", q, c, &cfg).unwrap();
            g.value(out).clone()
        };
        let a = run(&context);
        let b = run(&permuted);
        let dev = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0f64, f64::max);
        assert!(dev <= 1e-10, "permutation moved the output by {dev}");
    }

    #[test]
    fn self_attention_handles_a_single_latent() {
        let cfg = ModelConfig {
            latents: 1,
            ..toy_config()
        };
        let params = Params::init(&cfg, &mut rng_from_seed(15));
        let s = toy_samples(6, 16);
        let latents = encode(&s, &params, &cfg).unwrap();
        assert_eq!(latents.h.shape(), &[1, 8]);
        assert!(latents.h.is_finite());
    }

    #[test]
    fn latent_bank_receives_gradient() {
        let cfg = toy_config();
        let params = Params::init(&cfg, &mut rng_from_seed(17));
        let s = toy_samples(12, 18);
        let coords = vec![[0.1, 0.2, 0.0], [-0.4, 0.9, 0.5]];
        let mut g = Graph::new();
        let staged = stage_params(&mut g, &params, true);
        let probs = forward_graph(&mut g, &staged, &cfg, &s, &coords).unwrap();
        // A non-uniform weighting keeps the softmax gradient away from zero.
        let w = g.constant(Tensor::new(vec![2, 4], (0..8).map(|i| i as f64).collect()).unwrap());
        let weighted = g.mul(probs, w).unwrap();
        let loss = g.sum_all(weighted);
        let grads = g.backward(loss).unwrap();
        let dl = grads.get(staged.var("latents")).expect("latents reachable");
        let norm: f64 = dl.data().iter().map(|v| v * v).sum::<f64>();
        assert!(norm > 0.0, "latent initialization must be optimizable");
    }

    #[test]
    fn config_validation_catches_bad_shapes() {
        let mut cfg = toy_config();
        cfg.heads = 3; // 8 % 3 != 0
        assert!(cfg.validate().is_err());
        let mut cfg = toy_config();
        cfg.classes = 1;
        assert!(cfg.validate().is_err());
        assert!(toy_config().validate().is_ok());
    }
}
