mod common;

use proptest::prelude::*;
use rand::Rng;
use slicegs::metrics::{affine_normalize, affine_normalize_unclamped, mse, psnr, ssim, MetricReport, SliceScore};
use slicegs::Axis;

/// Direct windowed SSIM: for every pixel, gather the 11x11 neighbourhood
/// (mirrored at the borders) and form the local statistics with the 2D
/// Gaussian weights.
fn naive_ssim(x: &[f64], y: &[f64], w: usize, h: usize) -> f64 {
    let (c1, c2) = (1e-4, 9e-4);
    let mirror = |i: isize, n: usize| -> usize {
        let n = n as isize;
        let mut i = i;
        loop {
            if i < 0 {
                i = -i - 1;
            } else if i >= n {
                i = 2 * n - i - 1;
            } else {
                return i as usize;
            }
        }
    };
    let mut weights = [[0.0; 11]; 11];
    let mut total = 0.0;
    for (a, row) in weights.iter_mut().enumerate() {
        for (b, v) in row.iter_mut().enumerate() {
            let (da, db) = (a as f64 - 5.0, b as f64 - 5.0);
            *v = (-(da * da + db * db) / (2.0 * 1.5 * 1.5)).exp();
            total += *v;
        }
    }
    let mut sum = 0.0;
    for j in 0..h {
        for i in 0..w {
            let (mut mx, mut my, mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for (a, row) in weights.iter().enumerate() {
                for (b, wt) in row.iter().enumerate() {
                    let wt = wt / total;
                    let jj = mirror(j as isize + a as isize - 5, h);
                    let ii = mirror(i as isize + b as isize - 5, w);
                    let (p, q) = (x[jj * w + ii], y[jj * w + ii]);
                    mx += wt * p;
                    my += wt * q;
                    xx += wt * p * p;
                    yy += wt * q * q;
                    xy += wt * p * q;
                }
            }
            let (vx, vy, cxy) = (xx - mx * mx, yy - my * my, xy - mx * my);
            sum += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
        }
    }
    sum / (w * h) as f64
}

fn random_image(seed: u64, n: usize) -> Vec<f64> {
    let mut r = common::rng(seed);
    (0..n).map(|_| r.random_range(0.0..1.0)).collect()
}

#[test]
fn psnr_examples() {
    let gt = random_image(1, 256);
    assert_eq!(psnr(&gt, &gt).unwrap(), f64::INFINITY);
    let pred: Vec<f64> = gt.iter().map(|g| g + 0.1).collect();
    assert!((mse(&pred, &gt).unwrap() - 0.01).abs() < 1e-12);
    assert!((psnr(&pred, &gt).unwrap() - 20.0).abs() < 1e-9);
    assert!(psnr(&pred[..10], &gt).is_err());
}

#[test]
fn psnr_matches_two_pass_oracle() {
    for seed in 0..10 {
        let a = random_image(seed, 400);
        let b = random_image(seed + 100, 400);
        let mut acc = 0.0;
        for (x, y) in a.iter().zip(&b) {
            acc += (x - y) * (x - y);
        }
        let m = acc / 400.0;
        assert!((psnr(&a, &b).unwrap() - 10.0 * (1.0 / m).log10()).abs() < 1e-10);
    }
}

#[test]
fn ssim_examples() {
    let gt = random_image(3, 32 * 32);
    assert!((ssim(&gt, &gt, 32, 32).unwrap() - 1.0).abs() < 1e-12);
    let binary: Vec<f64> = (0..32 * 32).map(|i| ((i / 32 + i % 32) % 2) as f64).collect();
    let inverse: Vec<f64> = binary.iter().map(|v| 1.0 - v).collect();
    assert!(ssim(&inverse, &binary, 32, 32).unwrap() < 0.1);
    assert!(ssim(&gt[..100], &gt[..100], 10, 10).is_err());
}

#[test]
fn ssim_matches_naive_windows() {
    for (seed, w, h) in [(0, 11, 11), (1, 16, 12), (2, 23, 31), (3, 40, 40)] {
        let a = random_image(seed, w * h);
        let b: Vec<f64> = a
            .iter()
            .zip(random_image(seed + 50, w * h))
            .map(|(x, n)| (0.7 * x + 0.3 * n).clamp(0.0, 1.0))
            .collect();
        let fast = ssim(&a, &b, w, h).unwrap();
        let slow = naive_ssim(&a, &b, w, h);
        assert!((fast - slow).abs() < 1e-8, "{w}x{h}: {fast} vs {slow}");
    }
}

#[test]
fn affine_examples() {
    let gt = random_image(4, 100);
    let pred: Vec<f64> = gt.iter().map(|g| 2.5 * g - 0.3).collect();
    let out = affine_normalize_unclamped(&pred, &gt).unwrap();
    for (o, g) in out.iter().zip(&gt) {
        assert!((o - g).abs() < 1e-12);
    }
    let same = affine_normalize(&gt, &gt).unwrap();
    for (o, g) in same.iter().zip(&gt) {
        assert!((o - g).abs() < 1e-12);
    }
}

#[test]
fn brightness_shift_is_undone() {
    let slices = common::phantom_test_slices(2);
    let (before, after) = common::brightness_shift_psnr(&slices[0].1, 2);
    assert!((before - after).abs() < 0.1, "{before} vs {after}");
    // Matching moments also shrinks the noise, so normalization never loses PSNR.
    for (id, gt) in &slices {
        let (before, after) = common::brightness_shift_psnr(gt, 2);
        assert!(after > before - 0.1, "{id}: {before} vs {after}");
    }
}

#[test]
fn report_aggregates_per_axis() {
    let scores = vec![
        SliceScore { id: "x001".into(), axis: Axis::X, index: 1, psnr: 30.0, ssim: 0.9 },
        SliceScore { id: "x005".into(), axis: Axis::X, index: 5, psnr: 20.0, ssim: 0.7 },
        SliceScore { id: "z002".into(), axis: Axis::Z, index: 2, psnr: f64::INFINITY, ssim: 1.0 },
    ];
    let report = MetricReport::from_scores(scores, false);
    assert_eq!(report.per_axis[&Axis::X].psnr, 25.0);
    assert_eq!(report.per_axis[&Axis::X].count, 2);
    assert!((report.per_axis[&Axis::X].ssim - 0.8).abs() < 1e-12);
    assert_eq!(report.overall.count, 3);
    let csv = report.to_csv();
    assert!(csv.lines().count() >= 4);
    assert!(csv.contains("inf"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn affine_normalization_is_idempotent(seed in any::<u64>(), a in 0.1f64..4.0, b in -1.0f64..1.0) {
        let gt = random_image(seed, 64);
        let pred: Vec<f64> = random_image(seed ^ 7, 64).iter().map(|p| a * p + b).collect();
        let once = affine_normalize_unclamped(&pred, &gt).unwrap();
        let twice = affine_normalize_unclamped(&once, &gt).unwrap();
        for (x, y) in once.iter().zip(&twice) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn ssim_of_identical_images_is_one(seed in any::<u64>(), w in 11usize..30, h in 11usize..30) {
        let x = random_image(seed, w * h);
        prop_assert!((ssim(&x, &x, w, h).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn psnr_is_symmetric(seed in any::<u64>()) {
        let a = random_image(seed, 50);
        let b = random_image(seed.wrapping_add(1), 50);
        prop_assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
    }
}
