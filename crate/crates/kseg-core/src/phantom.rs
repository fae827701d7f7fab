//! Procedural 2D+time cardiac short-axis phantoms with 4-class labels.
//!
//! Each scan is a beating pair of concentric ellipses (LV blood pool inside
//! a myocardial ring) with an RV crescent hugging the ring on the image
//! left, over a smoothly textured background. Geometry, intensity levels,
//! and contraction depth are randomized per scan; the whole scan is a pure
//! function of its seed.
//!
//! Class ids: 0 background, 1 LV pool, 2 myocardium, 3 RV.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::fmath;
use crate::rng::{self, Rng};
use crate::tensor::Tensor;

pub const NUM_CLASSES: usize = 4;
pub const FOREGROUND_CLASSES: [usize; 3] = [1, 2, 3];

/// One synthetic scan: frame stack, label stack, and its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct PhantomScan {
    /// Intensities in `[0, 1]`, shape `[T, H, W]`.
    pub image: Tensor,
    /// Class ids `{0, 1, 2, 3}` stored as whole `f64`s, shape `[T, H, W]`.
    pub labels: Tensor,
    pub scan_id: String,
    pub seed: u64,
}

impl PhantomScan {
    pub fn t(&self) -> usize {
        self.image.shape()[0]
    }

    pub fn h(&self) -> usize {
        self.image.shape()[1]
    }

    pub fn w(&self) -> usize {
        self.image.shape()[2]
    }

    /// Copy of frame `t` of the image stack, shape `[H, W]`.
    pub fn frame_image(&self, t: usize) -> Tensor {
        self.frame_of(&self.image, t)
    }

    /// Copy of frame `t` of the label stack, shape `[H, W]`.
    pub fn frame_labels(&self, t: usize) -> Tensor {
        self.frame_of(&self.labels, t)
    }

    fn frame_of(&self, stack: &Tensor, t: usize) -> Tensor {
        let (h, w) = (self.h(), self.w());
        let frame = stack.data()[t * h * w..(t + 1) * h * w].to_vec();
        Tensor::new(alloc::vec![h, w], frame).expect("frame slice has H·W elements")
    }

    pub fn label_at(&self, t: usize, x: usize, y: usize) -> usize {
        let (h, w) = (self.h(), self.w());
        self.labels.data()[(t * h + x) * w + y] as usize
    }

    /// Pixel count of `class` in frame `t`.
    pub fn class_area(&self, t: usize, class: usize) -> usize {
        let (h, w) = (self.h(), self.w());
        self.labels.data()[t * h * w..(t + 1) * h * w]
            .iter()
            .filter(|v| **v as usize == class)
            .count()
    }
}

struct Geometry {
    cx: f64,
    cy: f64,
    ra: f64,
    rb: f64,
    wall: f64,
    contraction: f64,
    rv_cx: f64,
    rv_cy: f64,
    rv_ra: f64,
    rv_rb: f64,
    level_pool: f64,
    level_myo: f64,
    level_rv: f64,
    level_bg: f64,
    texture: [(f64, f64, f64, f64); 2], // (cx, cy, sigma, amp)
}

fn draw_geometry(r: &mut Rng, h: usize, w: usize) -> Geometry {
    let hf = h as f64;
    let wf = w as f64;
    let cx = hf / 2.0 + rng::uniform_in(r, -0.1, 0.1) * hf;
    let cy = wf / 2.0 + rng::uniform_in(r, -0.1, 0.1) * hf;
    let ra = 0.20 * hf * (1.0 + rng::uniform_in(r, -0.2, 0.2));
    let rb = 0.20 * hf * (1.0 + rng::uniform_in(r, -0.2, 0.2));
    let contraction = rng::uniform_in(r, 0.25, 0.40);
    let rv_ra = 0.9 * ra * (1.0 + rng::uniform_in(r, -0.15, 0.15));
    let rv_rb = 0.6 * rb * (1.0 + rng::uniform_in(r, -0.15, 0.15));
    let level_pool = rng::uniform_in(r, 0.75, 0.95);
    let level_myo = rng::uniform_in(r, 0.35, 0.55);
    let level_rv = rng::uniform_in(r, 0.55, 0.75);
    let level_bg = rng::uniform_in(r, 0.08, 0.16);
    let mut texture = [(0.0, 0.0, 0.0, 0.0); 2];
    for slot in texture.iter_mut() {
        *slot = (
            rng::uniform_in(r, 0.0, hf),
            rng::uniform_in(r, 0.0, wf),
            rng::uniform_in(r, 0.2, 0.45) * hf,
            rng::uniform_in(r, -0.06, 0.06),
        );
    }
    Geometry {
        cx,
        cy,
        ra,
        rb,
        wall: 0.35 * ra.min(rb),
        contraction,
        rv_cx: cx,
        rv_cy: cy - 1.2 * rb,
        rv_ra,
        rv_rb,
        level_pool,
        level_myo,
        level_rv,
        level_bg,
        texture,
    }
}

fn in_ellipse(x: f64, y: f64, cx: f64, cy: f64, ra: f64, rb: f64) -> bool {
    let dx = (x - cx) / ra;
    let dy = (y - cy) / rb;
    dx * dx + dy * dy <= 1.0
}

fn rasterize(geo: &Geometry, r: &mut Rng, t_total: usize, h: usize, w: usize) -> (Vec<f64>, Vec<f64>) {
    let mut image = Vec::with_capacity(t_total * h * w);
    let mut labels = Vec::with_capacity(t_total * h * w);
    let pool_a0 = geo.ra - geo.wall;
    let pool_b0 = geo.rb - geo.wall;
    for t in 0..t_total {
        let phase = core::f64::consts::PI * t as f64 / t_total as f64;
        let s = 1.0 - geo.contraction * fmath::sin(phase) * fmath::sin(phase);
        let (pool_a, pool_b) = (pool_a0 * s, pool_b0 * s);
        let (out_a, out_b) = (pool_a + geo.wall, pool_b + geo.wall);
        for x in 0..h {
            for y in 0..w {
                let (xf, yf) = (x as f64, y as f64);
                let label = if in_ellipse(xf, yf, geo.cx, geo.cy, pool_a, pool_b) {
                    1
                } else if in_ellipse(xf, yf, geo.cx, geo.cy, out_a, out_b) {
                    2
                } else if in_ellipse(xf, yf, geo.rv_cx, geo.rv_cy, geo.rv_ra, geo.rv_rb) {
                    3
                } else {
                    0
                };
                let mut value = match label {
                    1 => geo.level_pool,
                    2 => geo.level_myo,
                    3 => geo.level_rv,
                    _ => {
                        let mut v = geo.level_bg;
                        for (tx, ty, sigma, amp) in geo.texture {
                            let dx = xf - tx;
                            let dy = yf - ty;
                            v += amp * fmath::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
                        }
                        v
                    }
                };
                value += rng::normal(r) * 0.02;
                image.push(value.clamp(0.0, 1.0));
                labels.push(label as f64);
            }
        }
    }
    (image, labels)
}

fn frame_valid(labels: &[f64], h: usize, w: usize) -> bool {
    let mut counts = [0usize; NUM_CLASSES];
    for v in labels {
        counts[*v as usize] += 1;
    }
    if counts.contains(&0) {
        return false;
    }
    let fg = (counts[1] + counts[2] + counts[3]) as f64 / (h * w) as f64;
    if !(0.03..=0.25).contains(&fg) {
        return false;
    }
    // Ring topology: every pool pixel is interior and flanked only by pool
    // or myocardium.
    for x in 0..h {
        for y in 0..w {
            if labels[x * w + y] as usize != 1 {
                continue;
            }
            if x == 0 || y == 0 || x == h - 1 || y == w - 1 {
                return false;
            }
            for (nx, ny) in [(x - 1, y), (x + 1, y), (x, y - 1), (x, y + 1)] {
                let n = labels[nx * w + ny] as usize;
                if n != 1 && n != 2 {
                    return false;
                }
            }
        }
    }
    true
}

fn scan_valid(labels: &[f64], t_total: usize, h: usize, w: usize) -> bool {
    let frame_px = h * w;
    for t in 0..t_total {
        if !frame_valid(&labels[t * frame_px..(t + 1) * frame_px], h, w) {
            return false;
        }
    }
    // Contraction must be visible: pool area at systole below the first frame.
    let pool_area = |t: usize| {
        labels[t * frame_px..(t + 1) * frame_px]
            .iter()
            .filter(|v| **v as usize == 1)
            .count()
    };
    pool_area(t_total / 2) < pool_area(0)
}

/// Generate one scan. `t_total ≥ 2`, `h, w ≥ 32`. Deterministic in `seed`.
/// Degenerate draws (annulus thinner than 2 px, a class rasterizing away,
/// foreground fraction outside `[0.03, 0.25]`) are regenerated internally
/// from the same stream with fresh geometry.
pub fn generate_phantom(seed: u64, t_total: usize, h: usize, w: usize) -> PhantomScan {
    assert!(t_total >= 2, "need at least two frames, got {t_total}");
    assert!(h >= 32 && w >= 32, "grid too small: {h}×{w}");
    let mut r = rng::rng_from_seed(seed);
    for _attempt in 0..1000 {
        let geo = draw_geometry(&mut r, h, w);
        if geo.wall < 2.0 {
            continue;
        }
        let (image, labels) = rasterize(&geo, &mut r, t_total, h, w);
        if !scan_valid(&labels, t_total, h, w) {
            continue;
        }
        let shape = alloc::vec![t_total, h, w];
        return PhantomScan {
            image: Tensor::new(shape.clone(), image).expect("T·H·W intensities"),
            labels: Tensor::new(shape, labels).expect("T·H·W labels"),
            scan_id: format!("scan_{seed:016x}"),
            seed,
        };
    }
    unreachable!("phantom geometry ranges make 1000 consecutive degenerate draws impossible");
}

/// A scan slot in a split: its id and generation seed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScanRef {
    pub id: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Splits {
    pub train: Vec<ScanRef>,
    pub val: Vec<ScanRef>,
    pub test: Vec<ScanRef>,
}

impl Splits {
    pub fn all(&self) -> impl Iterator<Item = &ScanRef> {
        self.train.iter().chain(&self.val).chain(&self.test)
    }
}

/// Deterministic split assignment: scans are numbered globally
/// (`scan_0000`, `scan_0001`, …) across train, then val, then test, and each
/// gets an independent generation seed derived from `base_seed` and its
/// global index.
pub fn make_splits(num_train: usize, num_val: usize, num_test: usize, base_seed: u64) -> Splits {
    assert!(
        num_train >= 1 && num_val >= 1 && num_test >= 1,
        "every split needs at least one scan"
    );
    let mut refs = (0..num_train + num_val + num_test).map(|i| ScanRef {
        id: format!("scan_{i:04}"),
        seed: rng::derive_seed(base_seed, i as u64),
    });
    let take = |refs: &mut dyn Iterator<Item = ScanRef>, n: usize| refs.take(n).collect::<Vec<_>>();
    Splits {
        train: take(&mut refs, num_train),
        val: take(&mut refs, num_val),
        test: take(&mut refs, num_test),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::collections::BTreeSet;
    use alloc::vec::Vec;

    #[test]
    fn generation_is_deterministic() {
        let a = generate_phantom(42, 4, 32, 32);
        let b = generate_phantom(42, 4, 32, 32);
        assert_eq!(a.image.data(), b.image.data());
        assert_eq!(a.labels.data(), b.labels.data());
        assert_eq!(a.scan_id, b.scan_id);
    }

    #[test]
    fn different_seeds_differ() {
        let a = generate_phantom(1, 4, 32, 32);
        let b = generate_phantom(2, 4, 32, 32);
        assert_ne!(a.labels.data(), b.labels.data());
    }

    #[test]
    fn every_frame_has_all_four_classes() {
        let scan = generate_phantom(7, 6, 64, 64);
        for t in 0..6 {
            for class in 0..NUM_CLASSES {
                assert!(
                    scan.class_area(t, class) > 0,
                    "class {class} missing in frame {t}"
                );
            }
        }
    }

    #[test]
    fn pool_is_enclosed_by_myocardium() {
        let scan = generate_phantom(11, 4, 64, 64);
        let (h, w) = (scan.h(), scan.w());
        for t in 0..scan.t() {
            for x in 1..h - 1 {
                for y in 1..w - 1 {
                    if scan.label_at(t, x, y) != 1 {
                        continue;
                    }
                    for (nx, ny) in [(x - 1, y), (x + 1, y), (x, y - 1), (x, y + 1)] {
                        let n = scan.label_at(t, nx, ny);
                        assert!(n == 1 || n == 2, "pool touches class {n} at t={t} ({x},{y})");
                    }
                }
            }
        }
    }

    #[test]
    fn pool_contracts_by_mid_sequence() {
        for seed in [3, 5, 8] {
            let scan = generate_phantom(seed, 10, 64, 64);
            let early = scan.class_area(0, 1);
            let systole = scan.class_area(5, 1);
            assert!(
                systole < early,
                "seed {seed}: pool area {systole} at t=5 vs {early} at t=0"
            );
        }
    }

    #[test]
    fn intensities_stay_in_unit_range_and_labels_are_class_ids() {
        let scan = generate_phantom(13, 4, 48, 48);
        assert!(scan.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(scan
            .labels
            .data()
            .iter()
            .all(|v| *v == 0.0 || *v == 1.0 || *v == 2.0 || *v == 3.0));
    }

    #[test]
    fn foreground_fraction_is_sane() {
        let scan = generate_phantom(17, 4, 64, 64);
        let px = 64 * 64;
        for t in 0..4 {
            let fg: usize = FOREGROUND_CLASSES
                .iter()
                .map(|c| scan.class_area(t, *c))
                .sum();
            let frac = fg as f64 / px as f64;
            assert!((0.03..=0.25).contains(&frac), "t={t}: fg fraction {frac}");
        }
    }

    #[test]
    #[should_panic(expected = "at least two frames")]
    fn rejects_single_frame() {
        generate_phantom(0, 1, 64, 64);
    }

    #[test]
    #[should_panic(expected = "grid too small")]
    fn rejects_tiny_grids() {
        generate_phantom(0, 4, 16, 64);
    }

    #[test]
    fn splits_are_disjoint_and_sized() {
        let s = make_splits(60, 20, 20, 99);
        assert_eq!(s.train.len(), 60);
        assert_eq!(s.val.len(), 20);
        assert_eq!(s.test.len(), 20);
        let ids: BTreeSet<_> = s.all().map(|r| r.id.clone()).collect();
        assert_eq!(ids.len(), 100, "scan ids must be pairwise distinct");
        let seeds: BTreeSet<_> = s.all().map(|r| r.seed).collect();
        assert_eq!(seeds.len(), 100, "generation seeds must be pairwise distinct");
    }

    #[test]
    fn splits_are_deterministic() {
        assert_eq!(make_splits(5, 2, 2, 7), make_splits(5, 2, 2, 7));
    }

    #[test]
    fn different_base_seed_changes_train_membership() {
        let sets: Vec<BTreeSet<u64>> = (0..10)
            .map(|s| make_splits(5, 2, 2, s).train.iter().map(|r| r.seed).collect())
            .collect();
        for i in 0..sets.len() {
            for j in i + 1..sets.len() {
                assert_ne!(sets[i], sets[j], "base seeds {i} and {j} collide");
            }
        }
    }
}
