//! Evaluation metrics on hard label maps: per-class Dice overlap and the
//! symmetric Hausdorff distance between class boundaries, plus per-scan
//! aggregation into the report rows the evaluation pipeline writes out.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::fmath;
use crate::tensor::{Tensor, TensorError};

/// Argmax with ties broken toward the lowest index.
pub fn argmax_row(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate().skip(1) {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Model predictions for a set of query points, with hard labels attached.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationResult {
    /// `P×C` class probabilities.
    pub probabilities: Tensor,
    /// Argmax per query row.
    pub labels: Vec<usize>,
    /// The queried coordinates, `(y, x, t)` normalized.
    pub coords: Vec<[f64; 3]>,
    pub scan_id: String,
}

impl SegmentationResult {
    pub fn from_probabilities(
        probabilities: Tensor,
        coords: Vec<[f64; 3]>,
        scan_id: String,
    ) -> Result<Self, TensorError> {
        if probabilities.rank() != 2 || probabilities.shape()[0] != coords.len() {
            return Err(TensorError::ShapeMismatch {
                op: "segmentation_result",
                lhs: probabilities.shape().to_vec(),
                rhs: vec![coords.len()],
            });
        }
        let c = probabilities.shape()[1];
        let labels = probabilities.data().chunks(c).map(argmax_row).collect();
        Ok(SegmentationResult {
            probabilities,
            labels,
            coords,
            scan_id,
        })
    }
}

fn check_same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<(), TensorError> {
    if a.shape() != b.shape() {
        return Err(TensorError::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

/// Hard Dice overlap of `class` between two label maps:
/// `2|A∩B| / (|A| + |B|)`. Both sides empty → 1 (and callers exclude the
/// class from foreground averaging); exactly one side empty → 0.
pub fn dice_score(pred: &Tensor, gt: &Tensor, class: usize) -> Result<f64, TensorError> {
    check_same_shape("dice_score", pred, gt)?;
    let mut inter = 0usize;
    let mut a = 0usize;
    let mut b = 0usize;
    for (p, g) in pred.data().iter().zip(gt.data()) {
        let pa = *p as usize == class;
        let gb = *g as usize == class;
        a += usize::from(pa);
        b += usize::from(gb);
        inter += usize::from(pa && gb);
    }
    Ok(if a + b == 0 {
        1.0
    } else {
        2.0 * inter as f64 / (a + b) as f64
    })
}

// Boundary pixels of a class mask under 8-connectivity: a mask pixel is on
// the boundary when any of its 8 neighbors (or the image edge) is outside
// the mask.
fn boundary(mask: &[bool], h: usize, w: usize) -> Vec<bool> {
    let mut out = vec![false; mask.len()];
    for x in 0..h {
        for y in 0..w {
            if !mask[x * w + y] {
                continue;
            }
            let mut on_boundary = false;
            'scan: for dx in -1i64..=1 {
                for dy in -1i64..=1 {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                    if nx < 0 || ny < 0 || nx >= h as i64 || ny >= w as i64 {
                        on_boundary = true;
                        break 'scan;
                    }
                    if !mask[nx as usize * w + ny as usize] {
                        on_boundary = true;
                        break 'scan;
                    }
                }
            }
            out[x * w + y] = on_boundary;
        }
    }
    out
}

// One-dimensional squared-distance transform (lower envelope of parabolas).
// `f` may contain +∞ for "no site"; the output is +∞ only if every entry is.
fn dt1d(f: &[f64], d: &mut [f64]) {
    let n = f.len();
    let mut v = vec![0usize; n]; // site indices of the envelope
    let mut z = vec![0.0f64; n + 1]; // envelope breakpoints
    let mut k = 0usize;
    let mut started = false;
    for q in 0..n {
        if f[q] == f64::INFINITY {
            continue;
        }
        if !started {
            v[0] = q;
            z[0] = f64::NEG_INFINITY;
            z[1] = f64::INFINITY;
            started = true;
            continue;
        }
        let mut s;
        loop {
            let p = v[k];
            s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q - p) as f64);
            if s <= z[k] {
                if k == 0 {
                    break;
                }
                k -= 1;
            } else {
                break;
            }
        }
        if s <= z[k] {
            // The new parabola dominates the whole envelope so far.
            v[0] = q;
            z[0] = f64::NEG_INFINITY;
            z[1] = f64::INFINITY;
            k = 0;
        } else {
            k += 1;
            v[k] = q;
            z[k] = s;
            z[k + 1] = f64::INFINITY;
        }
    }
    if !started {
        d.fill(f64::INFINITY);
        return;
    }
    let mut k = 0usize;
    for (q, slot) in d.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        let dq = q as f64 - p as f64;
        *slot = dq * dq + f[p];
    }
}

// Exact squared Euclidean distance transform of a site set (true entries).
fn edt_sq(sites: &[bool], h: usize, w: usize) -> Vec<f64> {
    let mut dist = vec![f64::INFINITY; h * w];
    for (i, s) in sites.iter().enumerate() {
        if *s {
            dist[i] = 0.0;
        }
    }
    // Columns first, then rows.
    let mut lane_in = vec![0.0f64; h.max(w)];
    let mut lane_out = vec![0.0f64; h.max(w)];
    for y in 0..w {
        for x in 0..h {
            lane_in[x] = dist[x * w + y];
        }
        dt1d(&lane_in[..h], &mut lane_out[..h]);
        for x in 0..h {
            dist[x * w + y] = lane_out[x];
        }
    }
    for x in 0..h {
        lane_in[..w].copy_from_slice(&dist[x * w..(x + 1) * w]);
        dt1d(&lane_in[..w], &mut lane_out[..w]);
        dist[x * w..(x + 1) * w].copy_from_slice(&lane_out[..w]);
    }
    dist
}

/// Symmetric Hausdorff distance (pixels) between the 8-connectivity
/// boundaries of `class` in two label maps. One side empty → the image
/// diagonal `√(H²+W²)` as a finite worst-case sentinel; both empty → 0.
pub fn hausdorff(pred: &Tensor, gt: &Tensor, class: usize) -> Result<f64, TensorError> {
    check_same_shape("hausdorff", pred, gt)?;
    let (h, w) = (pred.shape()[0], pred.shape()[1]);
    let mask_of = |t: &Tensor| -> Vec<bool> {
        t.data().iter().map(|v| *v as usize == class).collect()
    };
    let pa = mask_of(pred);
    let ga = mask_of(gt);
    let a_empty = !pa.iter().any(|x| *x);
    let b_empty = !ga.iter().any(|x| *x);
    if a_empty && b_empty {
        return Ok(0.0);
    }
    if a_empty || b_empty {
        return Ok(fmath::sqrt((h * h + w * w) as f64));
    }
    let ba = boundary(&pa, h, w);
    let bb = boundary(&ga, h, w);
    let da = edt_sq(&ba, h, w); // distance to A's boundary
    let db = edt_sq(&bb, h, w); // distance to B's boundary
    let directed = |from: &[bool], to_dist: &[f64]| -> f64 {
        let mut worst = 0.0f64;
        for (i, on) in from.iter().enumerate() {
            if *on && to_dist[i] > worst {
                worst = to_dist[i];
            }
        }
        worst
    };
    let sq = directed(&ba, &db).max(directed(&bb, &da));
    Ok(fmath::sqrt(sq))
}

/// Per-scan metric row: per-class and foreground-aggregated Dice and
/// Hausdorff values at one acceleration factor.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub scan_id: String,
    pub r: f64,
    /// Frame-averaged Dice per class (index = class id).
    pub dice: Vec<f64>,
    /// Mean over frames of the mean over foreground classes, excluding
    /// classes empty in both maps.
    pub dice_fg_mean: f64,
    /// Frame-averaged Hausdorff per class (index = class id).
    pub hd: Vec<f64>,
    /// Mean over frames of the worst foreground-class Hausdorff.
    pub hd_fg_max: f64,
}

/// Aggregate per-frame, per-class metrics over a predicted label volume
/// against ground truth (both `[T, H, W]`). Foreground classes are
/// `1..classes`.
pub fn evaluate_scan(
    scan_id: &str,
    r: f64,
    pred: &Tensor,
    gt: &Tensor,
    classes: usize,
) -> Result<MetricReport, TensorError> {
    check_same_shape("evaluate_scan", pred, gt)?;
    if pred.rank() != 3 {
        return Err(TensorError::BadAxis {
            op: "evaluate_scan",
            axis: 3,
            rank: pred.rank(),
        });
    }
    let (t_total, h, w) = (pred.shape()[0], pred.shape()[1], pred.shape()[2]);
    let frame = |t: &Tensor, i: usize| {
        Tensor::new(vec![h, w], t.data()[i * h * w..(i + 1) * h * w].to_vec())
            .expect("frame slice")
    };
    let mut dice_sum = vec![0.0; classes];
    let mut hd_sum = vec![0.0; classes];
    let mut fg_dice_sum = 0.0;
    let mut fg_hd_max_sum = 0.0;
    for t in 0..t_total {
        let pf = frame(pred, t);
        let gf = frame(gt, t);
        let mut frame_fg_dice = 0.0;
        let mut frame_fg_count = 0usize;
        let mut frame_hd_worst = 0.0f64;
        for c in 0..classes {
            let d = dice_score(&pf, &gf, c)?;
            let hd = hausdorff(&pf, &gf, c)?;
            dice_sum[c] += d;
            hd_sum[c] += hd;
            if c == 0 {
                continue;
            }
            let both_empty = !pf.data().iter().any(|v| *v as usize == c)
                && !gf.data().iter().any(|v| *v as usize == c);
            if !both_empty {
                frame_fg_dice += d;
                frame_fg_count += 1;
            }
            frame_hd_worst = frame_hd_worst.max(hd);
        }
        // A frame where every foreground class is absent from both maps is
        // in perfect agreement about emptiness.
        fg_dice_sum += if frame_fg_count > 0 {
            frame_fg_dice / frame_fg_count as f64
        } else {
            1.0
        };
        fg_hd_max_sum += frame_hd_worst;
    }
    let tf = t_total as f64;
    Ok(MetricReport {
        scan_id: String::from(scan_id),
        r,
        dice: dice_sum.into_iter().map(|v| v / tf).collect(),
        dice_fg_mean: fg_dice_sum / tf,
        hd: hd_sum.into_iter().map(|v| v / tf).collect(),
        hd_fg_max: fg_hd_max_sum / tf,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(h: usize, w: usize, ones: &[(usize, usize)]) -> Tensor {
        let mut t = Tensor::zeros(&[h, w]);
        for (x, y) in ones {
            t.data_mut()[x * w + y] = 1.0;
        }
        t
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax_row(&[0.2, 0.5, 0.5, 0.1]), 1);
        assert_eq!(argmax_row(&[0.25, 0.25, 0.25, 0.25]), 0);
        assert_eq!(argmax_row(&[0.1, 0.2, 0.7]), 2);
    }

    #[test]
    fn dice_identical_and_disjoint() {
        let a = grid(4, 4, &[(0, 0), (0, 1), (1, 0), (1, 1)]);
        assert_eq!(dice_score(&a, &a, 1).unwrap(), 1.0);
        let b = grid(4, 4, &[(2, 2), (2, 3), (3, 2), (3, 3)]);
        assert_eq!(dice_score(&a, &b, 1).unwrap(), 0.0);
    }

    #[test]
    fn dice_half_overlapping_blocks() {
        // 2×2 blocks sharing a 1×2 strip: 2·2/(4+4) = 0.5.
        let a = grid(4, 4, &[(0, 0), (0, 1), (1, 0), (1, 1)]);
        let b = grid(4, 4, &[(1, 0), (1, 1), (2, 0), (2, 1)]);
        assert_eq!(dice_score(&a, &b, 1).unwrap(), 0.5);
    }

    #[test]
    fn dice_empty_conventions_and_symmetry() {
        let empty = Tensor::zeros(&[4, 4]);
        let some = grid(4, 4, &[(1, 1)]);
        assert_eq!(dice_score(&empty, &empty, 1).unwrap(), 1.0);
        assert_eq!(dice_score(&some, &empty, 1).unwrap(), 0.0);
        assert_eq!(dice_score(&empty, &some, 1).unwrap(), 0.0);
        let a = grid(5, 5, &[(0, 0), (1, 1), (2, 2)]);
        let b = grid(5, 5, &[(1, 1), (3, 3)]);
        assert_eq!(
            dice_score(&a, &b, 1).unwrap(),
            dice_score(&b, &a, 1).unwrap()
        );
    }

    #[test]
    fn hausdorff_identical_is_zero() {
        let a = grid(6, 6, &[(2, 2), (2, 3), (3, 2), (3, 3)]);
        assert_eq!(hausdorff(&a, &a, 1).unwrap(), 0.0);
    }

    #[test]
    fn hausdorff_three_four_five() {
        let a = grid(8, 8, &[(0, 0)]);
        let b = grid(8, 8, &[(3, 4)]);
        assert!((hausdorff(&a, &b, 1).unwrap() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn hausdorff_empty_conventions() {
        let empty = Tensor::zeros(&[3, 4]);
        let some = grid(3, 4, &[(1, 1)]);
        assert_eq!(hausdorff(&empty, &empty, 1).unwrap(), 0.0);
        let sentinel = (9.0f64 + 16.0).sqrt();
        assert!((hausdorff(&some, &empty, 1).unwrap() - sentinel).abs() < 1e-12);
        assert!((hausdorff(&empty, &some, 1).unwrap() - sentinel).abs() < 1e-12);
    }

    #[test]
    fn hausdorff_is_symmetric() {
        let a = grid(10, 10, &[(1, 1), (1, 2), (2, 1), (2, 2), (5, 7)]);
        let b = grid(10, 10, &[(2, 2), (2, 3), (3, 3), (8, 1)]);
        assert_eq!(
            hausdorff(&a, &b, 1).unwrap(),
            hausdorff(&b, &a, 1).unwrap()
        );
    }

    #[test]
    fn distance_transform_from_a_single_site() {
        let mut sites = vec![false; 36];
        sites[2 * 6 + 3] = true;
        let d = edt_sq(&sites, 6, 6);
        assert_eq!(d[2 * 6 + 3], 0.0);
        assert_eq!(d[0], 13.0); // (2² + 3²)
        assert_eq!(d[5 * 6 + 5], 13.0); // (3² + 2²)
    }

    #[test]
    fn interior_pixels_are_not_boundary() {
        // 3×3 solid block: the center pixel is interior.
        let a = grid(5, 5, &[
            (1, 1), (1, 2), (1, 3),
            (2, 1), (2, 2), (2, 3),
            (3, 1), (3, 2), (3, 3),
        ]);
        let mask: Vec<bool> = a.data().iter().map(|v| *v == 1.0).collect();
        let b = boundary(&mask, 5, 5);
        let at = |x: usize, y: usize| b[x * 5 + y];
        assert!(!at(2, 2), "center of a solid block is interior");
        assert!(at(1, 1) && at(3, 3), "block corners are boundary");
    }

    #[test]
    fn evaluate_scan_perfect_prediction() {
        let gt = Tensor::new(
            vec![1, 4, 4],
            grid(4, 4, &[(1, 1), (1, 2), (2, 1), (2, 2)]).data().to_vec(),
        )
        .unwrap();
        let rep = evaluate_scan("s", 8.0, &gt, &gt, 2).unwrap();
        assert_eq!(rep.dice_fg_mean, 1.0);
        assert_eq!(rep.hd_fg_max, 0.0);
        assert_eq!(rep.dice, vec![1.0, 1.0]);
    }

    #[test]
    fn evaluate_scan_all_background_prediction() {
        let gt = Tensor::new(
            vec![1, 4, 4],
            grid(4, 4, &[(1, 1), (2, 2)]).data().to_vec(),
        )
        .unwrap();
        let pred = Tensor::zeros(&[1, 4, 4]);
        let rep = evaluate_scan("s", 8.0, &pred, &gt, 2).unwrap();
        assert_eq!(rep.dice_fg_mean, 0.0);
        let sentinel = 32.0f64.sqrt();
        assert!((rep.hd_fg_max - sentinel).abs() < 1e-12);
    }

    #[test]
    fn evaluate_scan_matches_manual_aggregation() {
        // One 8×8 frame, class 1 shifted by one pixel; class 2 exact.
        let mut gt = Tensor::zeros(&[1, 8, 8]);
        let mut pred = Tensor::zeros(&[1, 8, 8]);
        for (x, y) in [(2usize, 2usize), (2, 3), (3, 2), (3, 3)] {
            gt.data_mut()[x * 8 + y] = 1.0;
            pred.data_mut()[(x + 1) * 8 + y] = 1.0;
        }
        for (x, y) in [(6usize, 6usize), (6, 7)] {
            gt.data_mut()[x * 8 + y] = 2.0;
            pred.data_mut()[x * 8 + y] = 2.0;
        }
        let rep = evaluate_scan("s", 4.0, &pred, &gt, 3).unwrap();
        // Class 1: blocks (2..4)×(2..4) vs (3..5)×(2..4) overlap 2 px →
        // dice 0.5, worst boundary gap 1 px.
        assert!((rep.dice[1] - 0.5).abs() < 1e-12);
        assert!((rep.hd[1] - 1.0).abs() < 1e-12);
        assert_eq!(rep.dice[2], 1.0);
        assert_eq!(rep.hd[2], 0.0);
        assert!((rep.dice_fg_mean - 0.75).abs() < 1e-12);
        assert!((rep.hd_fg_max - 1.0).abs() < 1e-12);
    }

    #[test]
    fn evaluate_scan_rejects_shape_mismatch() {
        let a = Tensor::zeros(&[1, 4, 4]);
        let b = Tensor::zeros(&[1, 4, 5]);
        assert!(matches!(
            evaluate_scan("s", 4.0, &a, &b, 2),
            Err(TensorError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn segmentation_result_hard_labels() {
        let probs = Tensor::new(
            vec![2, 3],
            vec![0.1, 0.6, 0.3, 0.5, 0.25, 0.25],
        )
        .unwrap();
        let coords = vec![[0.0, 0.0, 0.0], [0.1, 0.1, 0.0]];
        let r = SegmentationResult::from_probabilities(probs, coords, String::from("x")).unwrap();
        assert_eq!(r.labels, vec![1, 0]);
    }
}
