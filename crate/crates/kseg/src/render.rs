//! The render command: four PNGs for one `(scan, frame, acceleration)`
//! triple, written at the scan's native resolution.
//!
//! ```text
//! <id>_f<frame>_gt.png        intensity frame with the label overlay
//! <id>_f<frame>_pred.png      same base with the predicted labels
//! <id>_f<frame>_kspace.png    log-magnitude of the sampled k-space lines
//! <id>_f<frame>_zerofill.png  |inverse DFT| of the zero-filled k-space
//! ```
//!
//! Overlay palette (alpha 0.55 over the grayscale base): class 1, the
//! ventricular blood pool, is red (220, 70, 60); class 2, the myocardial
//! ring, green (90, 200, 100); class 3, the right-ventricle crescent, blue
//! (80, 120, 230). Background keeps the base intensity. Grayscale panels are
//! normalized by their own maximum, so at full sampling (R = 1) the
//! zero-fill preview reproduces the ground-truth intensities exactly up to
//! u8 quantization.

use std::path::{Path, PathBuf};

use kseg_core::kspace::{apply_b0_phase, apply_mask, dft2_complex, idft2};
use kseg_core::train::{predict_full, synthesize_samples};

use crate::checkpoint::load_checkpoint;
use crate::config::RunConfig;
use crate::dataset;
use crate::evalrun::acquisition_seeds;
use crate::CmdError;

const OVERLAY_ALPHA: f64 = 0.55;
const PALETTE: [[f64; 3]; 4] = [
    [0.0, 0.0, 0.0],
    [220.0, 70.0, 60.0],
    [90.0, 200.0, 100.0],
    [80.0, 120.0, 230.0],
];

fn to_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Normalize to [0, 255] by the slice's own maximum.
fn gray_levels(values: &[f64]) -> Vec<u8> {
    let max = values.iter().cloned().fold(0.0, f64::max);
    if max <= 0.0 {
        return vec![0; values.len()];
    }
    values.iter().map(|v| to_u8(v / max * 255.0)).collect()
}

fn save_gray(path: &Path, levels: &[u8], h: usize, w: usize) -> Result<(), CmdError> {
    let img = image::GrayImage::from_fn(w as u32, h as u32, |x, y| {
        image::Luma([levels[y as usize * w + x as usize]])
    });
    img.save(path)
        .map_err(|e| CmdError::Data(format!("cannot write {}: {e}", path.display())))
}

fn save_overlay(
    path: &Path,
    base: &[u8],
    labels: &[usize],
    h: usize,
    w: usize,
) -> Result<(), CmdError> {
    let img = image::RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let i = y as usize * w + x as usize;
        let g = base[i] as f64;
        let class = labels[i];
        if class == 0 {
            image::Rgb([base[i]; 3])
        } else {
            let c = PALETTE[class.min(3)];
            let blend = |channel: f64| to_u8((1.0 - OVERLAY_ALPHA) * g + OVERLAY_ALPHA * channel);
            image::Rgb([blend(c[0]), blend(c[1]), blend(c[2])])
        }
    });
    img.save(path)
        .map_err(|e| CmdError::Data(format!("cannot write {}: {e}", path.display())))
}

pub fn run_render(
    checkpoint: &Path,
    data_dir: &Path,
    scan_id: &str,
    r: f64,
    frame: usize,
    cfg: &RunConfig,
    out_dir: &Path,
) -> Result<Vec<PathBuf>, CmdError> {
    if r < 1.0 || r.is_nan() {
        return Err(CmdError::Config(format!(
            "acceleration must be at least 1, got {r}"
        )));
    }
    let (model_cfg, state) = load_checkpoint(checkpoint)?;
    let manifest = dataset::load_manifest(data_dir)?;
    let entry = manifest.entry(scan_id)?;
    let scan_idx = manifest
        .split_entries(entry.split)
        .position(|e| e.id == scan_id)
        .expect("entry came from the manifest");
    let scan = dataset::load_scan(data_dir, &manifest, scan_id)?;
    let (t_total, h, w) = (scan.t(), scan.h(), scan.w());
    if frame >= t_total {
        return Err(CmdError::Config(format!(
            "frame {frame} out of range; {scan_id} has {t_total} frames"
        )));
    }

    let (b0_seed, mask_seed) = acquisition_seeds(cfg.eval.seed, r, scan_idx);
    let (samples, masks) = synthesize_samples(&scan, r, &cfg.train.b0, b0_seed, mask_seed)
        .map_err(|e| CmdError::Numerical(e.to_string()))?;
    let result = predict_full(
        &samples,
        &state.params,
        &model_cfg,
        (t_total, h, w),
        cfg.eval.chunk,
        scan_id,
    )
    .map_err(|e| CmdError::Numerical(e.to_string()))?;

    // The same masked spectrum the sample set was extracted from.
    let img_c = apply_b0_phase(&scan.frame_image(frame), &cfg.train.b0, b0_seed)
        .map_err(|e| CmdError::Numerical(e.to_string()))?;
    let kspace = dft2_complex(&img_c, h, w);
    let masked = apply_mask(&kspace, h, w, &masks[frame]);

    let base = gray_levels(scan.frame_image(frame).data());
    let gt_labels: Vec<usize> = scan
        .frame_labels(frame)
        .data()
        .iter()
        .map(|v| *v as usize)
        .collect();
    let pred_labels = &result.labels[frame * h * w..(frame + 1) * h * w];

    let k_log: Vec<f64> = masked.iter().map(|c| (1.0 + c.norm()).ln()).collect();
    let zerofill: Vec<f64> = idft2(&masked, h, w).iter().map(|c| c.norm()).collect();

    std::fs::create_dir_all(out_dir)
        .map_err(|e| CmdError::Data(format!("cannot create {}: {e}", out_dir.display())))?;
    let file = |tag: &str| out_dir.join(format!("{scan_id}_f{frame:02}_{tag}.png"));
    let paths = vec![
        file("gt"),
        file("pred"),
        file("kspace"),
        file("zerofill"),
    ];
    save_overlay(&paths[0], &base, &gt_labels, h, w)?;
    save_overlay(&paths[1], &base, pred_labels, h, w)?;
    save_gray(&paths[2], &gray_levels(&k_log), h, w)?;
    save_gray(&paths[3], &gray_levels(&zerofill), h, w)?;
    Ok(paths)
}
