//! End-to-end optimization behavior: loss actually falls when overfitting
//! one scan, the trained model beats its own initialization on full-grid
//! prediction, and the loop honors its determinism contract under seeded
//! reruns.

use kseg_core::encoding::EncodingConfig;
use kseg_core::metrics::evaluate_scan;
use kseg_core::model::ModelConfig;
use kseg_core::phantom::{generate_phantom, NUM_CLASSES};
use kseg_core::train::{
    fit, label_volume, predict_full, synthesize_samples, train_step, FitObserver, NullObserver,
    StepOutcome, TrainConfig, TrainState, MAX_DECODE_CHUNK,
};

fn small_model() -> ModelConfig {
    ModelConfig {
        layers: 2,
        latents: 16,
        width: 32,
        ff_width: 32,
        heads: 4,
        classes: 4,
        encoding: EncodingConfig::default(),
    }
}

fn overfit_config(steps: usize) -> TrainConfig {
    TrainConfig {
        acceleration: 8.0,
        steps,
        learning_rate: 1e-3,
        queries_per_step: 256,
        checkpoint_every: 100,
        seed: 1234,
        ..TrainConfig::default()
    }
}

#[test]
fn overfitting_one_scan_drives_the_loss_down() {
    let model_cfg = small_model();
    let cfg = overfit_config(200);
    let scan = generate_phantom(600, 4, 48, 48);
    let mut state = TrainState::new(&model_cfg, &cfg);
    let mut losses = Vec::with_capacity(cfg.steps);
    for _ in 0..cfg.steps {
        losses.push(train_step(&mut state, &scan, &model_cfg, &cfg).unwrap().loss);
    }
    let initial = losses[0];
    let final_loss = *losses.last().unwrap();
    assert!(
        final_loss < 0.3 * initial,
        "after {} steps loss only moved {initial:.4} → {final_loss:.4}",
        cfg.steps
    );
}

#[test]
fn training_beats_the_untrained_initialization_on_full_grid_dice() {
    let model_cfg = small_model();
    let cfg = overfit_config(300);
    let scan = generate_phantom(601, 4, 48, 48);
    let dims = (scan.t(), scan.h(), scan.w());

    let fg_dice = |params: &kseg_core::model::Params| {
        let (samples, _) = synthesize_samples(&scan, cfg.acceleration, &cfg.b0, 71, 72).unwrap();
        let result =
            predict_full(&samples, params, &model_cfg, dims, MAX_DECODE_CHUNK, &scan.scan_id)
                .unwrap();
        let pred = label_volume(&result.labels, dims).unwrap();
        evaluate_scan(&scan.scan_id, cfg.acceleration, &pred, &scan.labels, NUM_CLASSES)
            .unwrap()
            .dice_fg_mean
    };

    let mut state = TrainState::new(&model_cfg, &cfg);
    let before = fg_dice(&state.params);
    for _ in 0..cfg.steps {
        train_step(&mut state, &scan, &model_cfg, &cfg).unwrap();
    }
    let after = fg_dice(&state.params);
    assert!(
        after >= before + 0.4,
        "foreground Dice moved {before:.4} → {after:.4}; expected ≥ 0.4 improvement"
    );
}

#[test]
fn fit_resumed_from_midway_matches_the_uninterrupted_run() {
    struct Trace(Vec<(usize, u64)>);
    impl FitObserver for Trace {
        fn on_step(&mut self, step: usize, o: &StepOutcome) {
            self.0.push((step, o.loss.to_bits()));
        }
    }
    let model_cfg = ModelConfig {
        layers: 1,
        latents: 4,
        width: 8,
        ff_width: 8,
        heads: 2,
        classes: 4,
        encoding: EncodingConfig {
            num_frequencies: 2,
            include_raw: true,
        },
    };
    let cfg = TrainConfig {
        acceleration: 8.0,
        steps: 6,
        learning_rate: 1e-3,
        queries_per_step: 64,
        checkpoint_every: 3,
        seed: 77,
        ..TrainConfig::default()
    };
    let train: Vec<_> = (0..3).map(|i| generate_phantom(700 + i, 2, 32, 32)).collect();

    // Uninterrupted run.
    let mut full_state = TrainState::new(&model_cfg, &cfg);
    let mut full_trace = Trace(Vec::new());
    fit(&mut full_state, &train, &[], &model_cfg, &cfg, &mut full_trace).unwrap();

    // Stop at step 3, "restore", continue.
    let mut head_cfg = cfg.clone();
    head_cfg.steps = 3;
    let mut resumed_state = TrainState::new(&model_cfg, &cfg);
    let mut resumed_trace = Trace(Vec::new());
    fit(&mut resumed_state, &train, &[], &model_cfg, &head_cfg, &mut resumed_trace).unwrap();
    resumed_state.rng = TrainState::restore_rng(cfg.seed, resumed_state.rng.get_word_pos());
    fit(&mut resumed_state, &train, &[], &model_cfg, &cfg, &mut resumed_trace).unwrap();

    assert_eq!(full_trace.0, resumed_trace.0);
    for (a, b) in full_state.params.pack().iter().zip(&resumed_state.params.pack()) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
}

#[test]
fn fit_log_events_are_deterministic() {
    #[derive(PartialEq, Debug)]
    struct Events {
        steps: Vec<(usize, u64, u64)>,
        evals: Vec<(usize, u64)>,
    }
    struct Rec(Events);
    impl FitObserver for Rec {
        fn on_step(&mut self, step: usize, o: &StepOutcome) {
            self.0.steps.push((step, o.loss.to_bits(), o.mask_fingerprint));
        }
        fn on_eval(&mut self, step: usize, dice: f64) {
            self.0.evals.push((step, dice.to_bits()));
        }
    }
    let model_cfg = ModelConfig {
        layers: 1,
        latents: 4,
        width: 8,
        ff_width: 8,
        heads: 2,
        classes: 4,
        encoding: EncodingConfig {
            num_frequencies: 2,
            include_raw: true,
        },
    };
    let cfg = TrainConfig {
        acceleration: 8.0,
        steps: 4,
        learning_rate: 1e-3,
        queries_per_step: 64,
        checkpoint_every: 2,
        seed: 5,
        ..TrainConfig::default()
    };
    let train: Vec<_> = (0..2).map(|i| generate_phantom(800 + i, 2, 32, 32)).collect();
    let val = [generate_phantom(850, 2, 32, 32)];
    let run = || {
        let mut state = TrainState::new(&model_cfg, &cfg);
        let mut rec = Rec(Events {
            steps: Vec::new(),
            evals: Vec::new(),
        });
        fit(&mut state, &train, &val, &model_cfg, &cfg, &mut rec).unwrap();
        rec.0
    };
    assert_eq!(run(), run());
}

#[test]
fn batched_steps_consume_scans_in_epoch_order() {
    // With batch_scans = number of scans, one step is one epoch; the loop
    // must still terminate and hit every scan.
    let model_cfg = ModelConfig {
        layers: 1,
        latents: 4,
        width: 8,
        ff_width: 8,
        heads: 2,
        classes: 4,
        encoding: EncodingConfig {
            num_frequencies: 2,
            include_raw: true,
        },
    };
    let cfg = TrainConfig {
        acceleration: 8.0,
        steps: 2,
        batch_scans: 3,
        learning_rate: 1e-3,
        queries_per_step: 32,
        checkpoint_every: 10,
        seed: 13,
        ..TrainConfig::default()
    };
    let train: Vec<_> = (0..3).map(|i| generate_phantom(900 + i, 2, 32, 32)).collect();
    let mut state = TrainState::new(&model_cfg, &cfg);
    fit(&mut state, &train, &[], &model_cfg, &cfg, &mut NullObserver).unwrap();
    assert_eq!(state.step, 2);
    assert_eq!(state.loss_stats.count, 2);
}
