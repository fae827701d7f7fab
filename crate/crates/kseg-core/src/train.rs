//! The optimization loop: per-step k-space synthesis, query sampling,
//! forward/backward through the model, and bias-corrected Adam updates —
//! plus full-grid prediction and the validation hook `fit` runs at
//! checkpoint cadence.
//!
//! Every random draw routes through seeds derived from `TrainConfig::seed`,
//! so a `(seed, config, data)` triple pins the whole run bitwise and a
//! restored [`TrainState`] continues exactly where the original left off.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::graph::Graph;
use crate::kspace::{
    apply_b0_phase, dft2_complex, extract_samples, generate_mask, B0Config, SampleSet, C64,
};
use crate::kspace::axis_coord;
use crate::loss::{one_hot, total_loss, LossWeights};
use crate::metrics::{evaluate_scan, SegmentationResult};
use crate::model::{forward_graph, stage_params, ModelConfig, Params};
use crate::phantom::{PhantomScan, NUM_CLASSES};
use crate::rng::{derive_seed, next_seed, rng_from_seed, index, Rng};
use crate::tensor::{Tensor, TensorError};

/// Accelerations the mask table covers.
pub const ACCELERATIONS: [f64; 5] = [4.0, 8.0, 16.0, 32.0, 64.0];

/// Decode batches never exceed this many queries, bounding graph memory.
pub const MAX_DECODE_CHUNK: usize = 8192;

// Independent seed streams derived from the run seed.
const PARAM_STREAM: u64 = 1;
const STEP_STREAM: u64 = 2;
const EPOCH_STREAM_BASE: u64 = 0x1000;
const EVAL_STREAM_BASE: u64 = 0x2000_0000;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Acceleration factor R; must be one of [`ACCELERATIONS`].
    pub acceleration: f64,
    pub steps: usize,
    pub learning_rate: f64,
    /// Scans consumed per optimizer step.
    pub batch_scans: usize,
    /// Query points sampled per scan per step.
    pub queries_per_step: usize,
    /// Fraction of queries drawn from foreground-labeled pixels.
    pub fg_fraction: f64,
    pub seed: u64,
    /// Validation + checkpoint cadence in steps.
    pub checkpoint_every: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub loss: LossWeights,
    pub b0: B0Config,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            acceleration: 8.0,
            steps: 1000,
            learning_rate: 1e-4,
            batch_scans: 1,
            queries_per_step: 2048,
            fg_fraction: 0.5,
            seed: 0,
            checkpoint_every: 250,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            loss: LossWeights::default(),
            b0: B0Config::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !ACCELERATIONS.contains(&self.acceleration) {
            return Err(format!(
                "acceleration {} is not in the supported set {:?}",
                self.acceleration, ACCELERATIONS
            ));
        }
        if self.learning_rate < 0.0 || !self.learning_rate.is_finite() {
            return Err(format!("learning rate {} must be finite and ≥ 0", self.learning_rate));
        }
        if self.batch_scans == 0 || self.queries_per_step == 0 || self.checkpoint_every == 0 {
            return Err(String::from(
                "batch_scans, queries_per_step, and checkpoint_every must be positive",
            ));
        }
        if !(0.0..=1.0).contains(&self.fg_fraction) {
            return Err(format!("fg_fraction {} must lie in [0, 1]", self.fg_fraction));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(String::from("moment coefficients must lie in [0, 1)"));
        }
        if self.eps <= 0.0 {
            return Err(String::from("eps must be positive"));
        }
        Ok(())
    }
}

/// Bias-corrected first/second moment accumulators, flat over the packed
/// parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub t: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(n: usize) -> AdamState {
        AdamState {
            t: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }
}

/// Running mean of the training loss, cheap enough to checkpoint exactly.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossStats {
    pub count: u64,
    pub sum: f64,
    pub last: f64,
}

impl LossStats {
    pub fn push(&mut self, loss: f64) {
        self.count += 1;
        self.sum += loss;
        self.last = loss;
    }

    pub fn mean(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.sum / self.count as f64
        }
    }
}

/// Everything the optimizer needs to continue a run: parameters, moments,
/// the step counter, and the live RNG. Serializing `(seed, rng word
/// position)` restores the stream bitwise.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub step: usize,
    pub params: Params,
    pub adam: AdamState,
    pub rng: Rng,
    pub seed: u64,
    pub loss_stats: LossStats,
    pub best_val_dice: Option<f64>,
}

impl TrainState {
    pub fn new(model_cfg: &ModelConfig, cfg: &TrainConfig) -> TrainState {
        let mut init_rng = rng_from_seed(derive_seed(cfg.seed, PARAM_STREAM));
        let params = Params::init(model_cfg, &mut init_rng);
        let n = params.param_count();
        TrainState {
            step: 0,
            params,
            adam: AdamState::new(n),
            rng: rng_from_seed(derive_seed(cfg.seed, STEP_STREAM)),
            seed: cfg.seed,
            loss_stats: LossStats::default(),
            best_val_dice: None,
        }
    }

    /// Rebuild the step RNG from `(seed, word_pos)`, for checkpoint loading.
    pub fn restore_rng(seed: u64, word_pos: u128) -> Rng {
        use rand_chacha::rand_core::SeedableRng;
        let mut rng = Rng::seed_from_u64(derive_seed(seed, STEP_STREAM));
        rng.set_word_pos(word_pos);
        rng
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrainError {
    Tensor(TensorError),
    /// The loss left the reals; carries enough context to rerun the step.
    NonFiniteLoss {
        step: usize,
        scan_id: String,
        loss: f64,
        b0_seed: u64,
        mask_seed: u64,
    },
}

impl From<TensorError> for TrainError {
    fn from(e: TensorError) -> Self {
        TrainError::Tensor(e)
    }
}

impl core::fmt::Display for TrainError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            TrainError::Tensor(e) => write!(f, "tensor error: {e}"),
            TrainError::NonFiniteLoss {
                step,
                scan_id,
                loss,
                b0_seed,
                mask_seed,
            } => write!(
                f,
                "non-finite loss {loss} at step {step} on {scan_id} \
                 (b0_seed {b0_seed:#x}, mask_seed {mask_seed:#x})"
            ),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for TrainError {}

/// Draw `p` query points from a scan: `⌈fg_fraction·p⌉` uniformly over
/// foreground-labeled pixels (falling back to uniform when the scan has no
/// foreground), the rest uniformly over the whole grid. Returns normalized
/// `(y, x, t)` coordinates and one-hot targets.
pub fn sample_queries(
    scan: &PhantomScan,
    p: usize,
    fg_fraction: f64,
    rng: &mut Rng,
) -> (Vec<[f64; 3]>, Tensor) {
    let (t_total, h, w) = (scan.t(), scan.h(), scan.w());
    let total = t_total * h * w;
    assert!(p <= total, "cannot draw {p} queries from a {total}-pixel grid");
    let fg: Vec<usize> = scan
        .labels
        .data()
        .iter()
        .enumerate()
        .filter(|(_, v)| **v > 0.0)
        .map(|(i, _)| i)
        .collect();
    let n_fg = if fg.is_empty() {
        0
    } else {
        crate::fmath::ceil(fg_fraction * p as f64) as usize
    };
    let mut coords = Vec::with_capacity(p);
    let mut labels = Vec::with_capacity(p);
    for i in 0..p {
        let flat = if i < n_fg {
            fg[index(rng, fg.len())]
        } else {
            index(rng, total)
        };
        let t = flat / (h * w);
        let x = (flat / w) % h;
        let y = flat % w;
        coords.push([axis_coord(x, h), axis_coord(y, w), axis_coord(t, t_total)]);
        labels.push(scan.labels.data()[flat] as usize);
    }
    (coords, one_hot(&labels, NUM_CLASSES))
}

/// Simulate one accelerated acquisition of a scan: apply the off-resonance
/// phase (one field per call, constant across frames), transform each frame
/// to k-space, subsample fresh Cartesian line masks, and gather the kept
/// samples. Returns the masks alongside for fingerprinting/rendering.
pub fn synthesize_samples(
    scan: &PhantomScan,
    acceleration: f64,
    b0: &B0Config,
    b0_seed: u64,
    mask_seed: u64,
) -> Result<(SampleSet, Vec<Vec<usize>>), TensorError> {
    let (t_total, h, w) = (scan.t(), scan.h(), scan.w());
    let mut kframes: Vec<Vec<C64>> = Vec::with_capacity(t_total);
    let mut masks: Vec<Vec<usize>> = Vec::with_capacity(t_total);
    for t in 0..t_total {
        let img = apply_b0_phase(&scan.frame_image(t), b0, b0_seed)?;
        kframes.push(dft2_complex(&img, h, w));
        masks.push(generate_mask(h, acceleration, derive_seed(mask_seed, t as u64)));
    }
    Ok((extract_samples(&kframes, &masks, h, w), masks))
}

/// Order-sensitive digest of the mask lines a step consumed; two steps with
/// different masks get different fingerprints with overwhelming probability.
pub fn mask_fingerprint(masks: &[Vec<usize>]) -> u64 {
    let mut fp: u64 = 0xcbf2_9ce4_8422_2325;
    for mask in masks {
        for line in mask {
            fp ^= *line as u64 ^ 0xff;
            fp = fp.wrapping_mul(0x0000_0100_0000_01b3);
        }
        fp ^= 0xa5;
        fp = fp.wrapping_mul(0x0000_0100_0000_01b3);
    }
    fp
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub loss: f64,
    /// Total k-space samples seen this step (over the whole batch).
    pub samples: usize,
    pub mask_fingerprint: u64,
}

/// One optimizer step over a batch of scans: synthesize, forward, average
/// the per-scan gradients, and apply a bias-corrected Adam update.
pub fn train_step_batch(
    state: &mut TrainState,
    scans: &[&PhantomScan],
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<StepOutcome, TrainError> {
    assert!(!scans.is_empty(), "a training step needs at least one scan");
    let n_params = state.params.param_count();
    let mut grad_sum = vec![0.0; n_params];
    let mut loss_sum = 0.0;
    let mut sample_count = 0;
    let mut fp: u64 = 0;
    let step = state.step + 1;

    for scan in scans {
        let b0_seed = next_seed(&mut state.rng);
        let mask_seed = next_seed(&mut state.rng);
        let (samples, masks) =
            synthesize_samples(scan, cfg.acceleration, &cfg.b0, b0_seed, mask_seed)?;
        let (coords, targets) =
            sample_queries(scan, cfg.queries_per_step, cfg.fg_fraction, &mut state.rng);

        let mut g = Graph::new();
        let staged = stage_params(&mut g, &state.params, true);
        let probs = forward_graph(&mut g, &staged, model_cfg, &samples, &coords)?;
        let tvar = g.constant(targets);
        let loss = total_loss(&mut g, probs, tvar, &cfg.loss)?;
        let loss_value = g.value(loss).item()?;
        if !loss_value.is_finite() {
            return Err(TrainError::NonFiniteLoss {
                step,
                scan_id: scan.scan_id.clone(),
                loss: loss_value,
                b0_seed,
                mask_seed,
            });
        }
        let grads = g.backward(loss)?;
        let mut offset = 0;
        for (name, var) in staged.iter() {
            let gt = grads
                .get(var)
                .unwrap_or_else(|| panic!("parameter {name} received no gradient"));
            for (acc, gi) in grad_sum[offset..offset + gt.numel()].iter_mut().zip(gt.data()) {
                *acc += gi;
            }
            offset += gt.numel();
        }
        loss_sum += loss_value;
        sample_count += samples.len();
        fp ^= mask_fingerprint(&masks);
    }

    let inv_batch = 1.0 / scans.len() as f64;
    for gi in &mut grad_sum {
        *gi *= inv_batch;
    }

    // Adam with bias correction.
    let adam = &mut state.adam;
    adam.t += 1;
    let bc1 = 1.0 - crate::fmath::powi(cfg.beta1, adam.t as u32);
    let bc2 = 1.0 - crate::fmath::powi(cfg.beta2, adam.t as u32);
    let mut flat = state.params.pack();
    for i in 0..n_params {
        let gi = grad_sum[i];
        adam.m[i] = cfg.beta1 * adam.m[i] + (1.0 - cfg.beta1) * gi;
        adam.v[i] = cfg.beta2 * adam.v[i] + (1.0 - cfg.beta2) * gi * gi;
        let m_hat = adam.m[i] / bc1;
        let v_hat = adam.v[i] / bc2;
        flat[i] -= cfg.learning_rate * m_hat / (crate::fmath::sqrt(v_hat) + cfg.eps);
    }
    state.params.unpack(&flat)?;

    state.step = step;
    let loss = loss_sum * inv_batch;
    state.loss_stats.push(loss);
    Ok(StepOutcome {
        loss,
        samples: sample_count,
        mask_fingerprint: fp,
    })
}

/// Single-scan convenience wrapper around [`train_step_batch`].
pub fn train_step(
    state: &mut TrainState,
    scan: &PhantomScan,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<StepOutcome, TrainError> {
    train_step_batch(state, &[scan], model_cfg, cfg)
}

/// Predict hard labels over the full `T×H×W` grid from one synthesized
/// acquisition, decoding in chunks of at most [`MAX_DECODE_CHUNK`] queries.
pub fn predict_full(
    samples: &SampleSet,
    params: &Params,
    model_cfg: &ModelConfig,
    dims: (usize, usize, usize),
    chunk: usize,
    scan_id: &str,
) -> Result<SegmentationResult, TensorError> {
    let (t_total, h, w) = dims;
    let chunk = chunk.clamp(1, MAX_DECODE_CHUNK);
    let coords = crate::encoding::volume_grid_coords(t_total, h, w);
    let latents = crate::model::encode(samples, params, model_cfg)?;
    let c = model_cfg.classes;
    let mut probs = Vec::with_capacity(coords.len() * c);
    for piece in coords.chunks(chunk) {
        let part = crate::model::decode(&latents, piece, params, model_cfg)?;
        probs.extend_from_slice(part.data());
    }
    let probs = Tensor::new(vec![coords.len(), c], probs)?;
    SegmentationResult::from_probabilities(probs, coords, String::from(scan_id))
}

/// Reshape per-query hard labels (in `volume_grid_coords` order) into a
/// `[T, H, W]` label volume.
pub fn label_volume(labels: &[usize], dims: (usize, usize, usize)) -> Result<Tensor, TensorError> {
    let (t, h, w) = dims;
    Tensor::new(vec![t, h, w], labels.iter().map(|l| *l as f64).collect())
}

// Seeds for the validation-time acquisition at (run seed, step, scan index):
// pure, so an interrupted run re-evaluates identically.
fn eval_seeds(run_seed: u64, step: usize, scan_idx: usize) -> (u64, u64) {
    let s = derive_seed(run_seed, EVAL_STREAM_BASE + step as u64);
    let s = derive_seed(s, scan_idx as u64);
    (derive_seed(s, 1), derive_seed(s, 2))
}

/// Mean foreground Dice of full-grid predictions over a validation split,
/// under acquisitions seeded by `(cfg.seed, step, scan index)`.
pub fn validation_dice(
    params: &Params,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    scans: &[PhantomScan],
    step: usize,
) -> Result<f64, TensorError> {
    assert!(!scans.is_empty(), "validation needs at least one scan");
    let mut total = 0.0;
    for (i, scan) in scans.iter().enumerate() {
        let (b0_seed, mask_seed) = eval_seeds(cfg.seed, step, i);
        let (samples, _) =
            synthesize_samples(scan, cfg.acceleration, &cfg.b0, b0_seed, mask_seed)?;
        let dims = (scan.t(), scan.h(), scan.w());
        let result = predict_full(
            &samples,
            params,
            model_cfg,
            dims,
            MAX_DECODE_CHUNK,
            &scan.scan_id,
        )?;
        let pred = label_volume(&result.labels, dims)?;
        let report = evaluate_scan(&scan.scan_id, cfg.acceleration, &pred, &scan.labels, NUM_CLASSES)?;
        total += report.dice_fg_mean;
    }
    Ok(total / scans.len() as f64)
}

/// Callbacks `fit` fires as it goes; the CLI hangs logging and checkpoint
/// IO off these.
pub trait FitObserver {
    fn on_step(&mut self, _step: usize, _outcome: &StepOutcome) {}
    fn on_eval(&mut self, _step: usize, _dice: f64) {}
    fn on_checkpoint(&mut self, _step: usize, _state: &TrainState, _is_best: bool) {}
}

/// Observer that ignores everything.
pub struct NullObserver;

impl FitObserver for NullObserver {}

/// Run the loop from `state.step` to `cfg.steps`: walk seeded epoch
/// shuffles of the training scans, step the optimizer, and at checkpoint
/// cadence (and at the final step) measure validation Dice and emit a
/// checkpoint flagged when it is the best so far. A fresh state emits an
/// initial checkpoint before any update.
pub fn fit(
    state: &mut TrainState,
    train_scans: &[PhantomScan],
    val_scans: &[PhantomScan],
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    observer: &mut dyn FitObserver,
) -> Result<(), TrainError> {
    assert!(!train_scans.is_empty(), "fit needs at least one training scan");
    if state.step == 0 {
        observer.on_checkpoint(0, state, false);
    }

    // Reconstruct the epoch walk position from the step counter alone, so a
    // resumed run consumes scans in exactly the order the original would.
    let n = train_scans.len();
    let consumed = state.step * cfg.batch_scans;
    let mut epoch = consumed / n;
    let mut cursor = consumed % n;
    let mut order: Vec<usize> = (0..n).collect();
    let mut order_rng = rng_from_seed(derive_seed(cfg.seed, EPOCH_STREAM_BASE + epoch as u64));
    crate::rng::shuffle(&mut order_rng, &mut order);

    let mut batch: Vec<&PhantomScan> = Vec::with_capacity(cfg.batch_scans);
    while state.step < cfg.steps {
        batch.clear();
        for _ in 0..cfg.batch_scans {
            if cursor == n {
                epoch += 1;
                cursor = 0;
                let mut order_rng =
                    rng_from_seed(derive_seed(cfg.seed, EPOCH_STREAM_BASE + epoch as u64));
                order = (0..n).collect();
                crate::rng::shuffle(&mut order_rng, &mut order);
            }
            batch.push(&train_scans[order[cursor]]);
            cursor += 1;
        }
        let outcome = train_step_batch(state, &batch, model_cfg, cfg)?;
        observer.on_step(state.step, &outcome);

        if state.step.is_multiple_of(cfg.checkpoint_every) || state.step == cfg.steps {
            let mut is_best = false;
            if !val_scans.is_empty() {
                let dice = validation_dice(&state.params, model_cfg, cfg, val_scans, state.step)?;
                is_best = state.best_val_dice.is_none_or(|best| dice > best);
                if is_best {
                    state.best_val_dice = Some(dice);
                }
                observer.on_eval(state.step, dice);
            }
            observer.on_checkpoint(state.step, state, is_best);
        }
    }
    Ok(())
}
