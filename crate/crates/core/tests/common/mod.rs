//! Independent reference implementations shared by the integration tests.
//!
//! Nothing here calls into the library's numerics: covariances are rebuilt
//! from the raw parameters, densities go through an LU solve, eigenvalues use
//! the closed-form trigonometric solution, and rendering walks every Gaussian
//! at every pixel.

#![allow(dead_code)]

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use slicegs::{Axis, Bounds, Gaussian3D, GaussianCloud, SliceSpec};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Rotation of a w-first quaternion, via the axis-angle (Rodrigues) form.
pub fn rotation(q: [f64; 4]) -> Matrix3<f64> {
    let n = q.iter().map(|c| c * c).sum::<f64>().sqrt();
    let [w, x, y, z] = q.map(|c| c / n);
    let s = (x * x + y * y + z * z).sqrt();
    if s < 1e-300 {
        return Matrix3::identity();
    }
    let angle = 2.0 * s.atan2(w);
    let k = Vector3::new(x / s, y / s, z / s);
    let kx = Matrix3::new(0.0, -k[2], k[1], k[2], 0.0, -k[0], -k[1], k[0], 0.0);
    Matrix3::identity() + kx * angle.sin() + kx * kx * (1.0 - angle.cos())
}

pub fn covariance(g: &Gaussian3D) -> Matrix3<f64> {
    let r = rotation(g.rotation);
    let mut s = Matrix3::zeros();
    for k in 0..3 {
        s[(k, k)] = g.log_scale[k].exp();
    }
    let m = r * s;
    m * m.transpose()
}

/// `exp(-q/2)` with `q` from an LU solve against the covariance.
pub fn density(g: &Gaussian3D, x: [f64; 3]) -> f64 {
    let d = Vector3::new(x[0] - g.mean[0], x[1] - g.mean[1], x[2] - g.mean[2]);
    let y = covariance(g).lu().solve(&d).expect("covariance is nonsingular");
    (-0.5 * d.dot(&y)).exp()
}

/// Eigenvalues of a symmetric 3x3 matrix, descending, from the
/// trigonometric solution of the characteristic cubic.
pub fn cardano_eigenvalues(a: &Matrix3<f64>) -> [f64; 3] {
    let p1 = a[(0, 1)].powi(2) + a[(0, 2)].powi(2) + a[(1, 2)].powi(2);
    let q = a.trace() / 3.0;
    let p2 = (a[(0, 0)] - q).powi(2) + (a[(1, 1)] - q).powi(2) + (a[(2, 2)] - q).powi(2) + 2.0 * p1;
    let p = (p2 / 6.0).sqrt();
    if p == 0.0 {
        return [q; 3];
    }
    let b = (a - Matrix3::identity() * q) / p;
    let r = (b.determinant() / 2.0).clamp(-1.0, 1.0);
    let phi = r.acos() / 3.0;
    let e1 = q + 2.0 * p * phi.cos();
    let e3 = q + 2.0 * p * (phi + 2.0 * std::f64::consts::PI / 3.0).cos();
    [e1, 3.0 * q - e1 - e3, e3]
}

/// World point of in-plane `(u, v)` on the slice at depth `t`.
pub fn world_point(axis: Axis, u: f64, v: f64, t: f64) -> [f64; 3] {
    match axis {
        Axis::X => [t, u, v],
        Axis::Y => [v, t, u],
        Axis::Z => [u, v, t],
    }
}

pub fn depth_of(axis: Axis, x: &[f64; 3]) -> f64 {
    match axis {
        Axis::X => x[0],
        Axis::Y => x[1],
        Axis::Z => x[2],
    }
}

/// Every Gaussian at every pixel, sorted by `(|mu_t - t|, index)`, densities
/// below `epsilon` skipped, no early termination.
pub fn brute_force_render(gs: &[Gaussian3D], slice: &SliceSpec, epsilon: f64) -> Vec<f64> {
    let mut order: Vec<usize> = (0..gs.len()).collect();
    let key = |i: usize| (depth_of(slice.axis, &gs[i].mean) - slice.t).abs();
    order.sort_by(|&a, &b| key(a).total_cmp(&key(b)).then(a.cmp(&b)));
    let mut out = vec![0.0; slice.width * slice.height];
    for j in 0..slice.height {
        for i in 0..slice.width {
            let u = slice.origin[0] + slice.pitch * i as f64;
            let v = slice.origin[1] + slice.pitch * j as f64;
            let x = world_point(slice.axis, u, v, slice.t);
            let mut trans = 1.0;
            let mut color = 0.0;
            for &k in &order {
                let p = density(&gs[k], x);
                if p < epsilon {
                    continue;
                }
                let a = p * sigmoid(gs[k].opacity_raw);
                color += trans * a * sigmoid(gs[k].intensity_raw);
                trans *= 1.0 - a;
            }
            out[j * slice.width + i] = color;
        }
    }
    out
}

pub fn random_quaternion(rng: &mut impl Rng) -> [f64; 4] {
    loop {
        let q: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
        let n = q.iter().map(|c| c * c).sum::<f64>().sqrt();
        if n > 1e-3 {
            return q.map(|c| c / n);
        }
    }
}

/// Random Gaussian with mean in `[lo, hi]^3` and scales log-uniform in `scales`.
pub fn random_gaussian(rng: &mut impl Rng, lo: f64, hi: f64, scales: (f64, f64)) -> Gaussian3D {
    let (a, b) = (scales.0.ln(), scales.1.ln());
    Gaussian3D {
        mean: std::array::from_fn(|_| rng.random_range(lo..hi)),
        log_scale: std::array::from_fn(|_| rng.random_range(a..b)),
        rotation: random_quaternion(rng),
        opacity_raw: rng.random_range(-2.0..2.0),
        intensity_raw: rng.random_range(-2.0..2.0),
    }
}

pub fn cloud_of(gs: &[Gaussian3D], size: f64) -> GaussianCloud {
    GaussianCloud::from_gaussians(Bounds::new([0.0; 3], [size; 3]), gs.iter().copied())
}

pub const AXES: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

/// Settings matching the brute-force reference: exact per-slice boxes and no
/// early termination.
pub fn reference_settings(epsilon: f64) -> slicegs::RasterSettings {
    slicegs::RasterSettings {
        selection: slicegs::Selection {
            method: slicegs::Method::M2,
            mode: slicegs::ExtentMode::Exact,
            epsilon,
        },
        tile_size: 16,
        early_stop: false,
    }
}

/// Largest per-pixel difference between the binned renderer and the
/// brute-force reference on a random cloud of up to 50 Gaussians.
pub fn renderer_equivalence_error(seed: u64) -> f64 {
    let mut r = rng(seed);
    let n = r.random_range(1..=50);
    let gs: Vec<Gaussian3D> = (0..n).map(|_| random_gaussian(&mut r, 2.0, 30.0, (0.5, 3.0))).collect();
    let axis = AXES[r.random_range(0..3)];
    let t = r.random_range(4.0..28.0);
    let slice = SliceSpec::new(axis, t, 32, 32, [0.5, 0.5], 1.0);
    let eps = 0.01;
    let cloud = cloud_of(&gs, 32.0);
    let img = slicegs::raster::render(&cloud, &slice, &reference_settings(eps)).unwrap();
    let oracle = brute_force_render(&gs, &slice, eps);
    img.image
        .iter()
        .zip(&oracle)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

/// Parameter `k` of a Gaussian in the gradient layout (mean, log_scale,
/// rotation, opacity, intensity).
pub fn param_mut(g: &mut Gaussian3D, k: usize) -> &mut f64 {
    match k {
        0..=2 => &mut g.mean[k],
        3..=5 => &mut g.log_scale[k - 3],
        6..=9 => &mut g.rotation[k - 6],
        10 => &mut g.opacity_raw,
        _ => &mut g.intensity_raw,
    }
}

pub fn sum_of_squares_loss(cloud: &GaussianCloud, slice: &SliceSpec, settings: &slicegs::RasterSettings) -> f64 {
    let img = slicegs::raster::render(cloud, slice, settings).unwrap();
    img.image.iter().map(|v| v * v).sum()
}

/// Analytic vs central-difference gradients of the sum of squared pixels for
/// a random 5-Gaussian cloud on an 8x8 slice. Returns the worst violation of
/// `|analytic - fd| <= max(rel * |fd|, abs)` as a ratio (≤ 1 passes) and the
/// number of parameters compared.
pub fn gradient_check(seed: u64, rel: f64, abs: f64) -> (f64, usize) {
    let mut r = rng(seed);
    let axis = AXES[r.random_range(0..3)];
    let t = 4.0 + r.random_range(-0.5..0.5);
    let gs: Vec<Gaussian3D> = (0..5)
        .map(|_| {
            let mut g = random_gaussian(&mut r, 1.0, 7.0, (0.8, 2.5));
            let k = match axis {
                Axis::X => 0,
                Axis::Y => 1,
                Axis::Z => 2,
            };
            g.mean[k] = t + r.random_range(-1.5..1.5);
            g
        })
        .collect();
    let slice = SliceSpec::new(axis, t, 8, 8, [0.5, 0.5], 1.0);
    let settings = reference_settings(1e-12);
    let mut cloud = cloud_of(&gs, 8.0);
    let bins = slicegs::raster::bin_gaussians(&cloud, &slice, &settings).unwrap();
    let img = slicegs::raster::render_slice(&cloud, &slice, &bins).unwrap();
    let dl: Vec<f64> = img.image.iter().map(|v| 2.0 * v).collect();
    let grads = slicegs::raster::render_backward(&mut cloud, &slice, &bins, &dl).unwrap();

    let h = 1e-4;
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for i in 0..gs.len() {
        let analytic = grads.grads[i].to_array();
        for (k, &a) in analytic.iter().enumerate() {
            let mut plus = gs.clone();
            *param_mut(&mut plus[i], k) += h;
            let mut minus = gs.clone();
            *param_mut(&mut minus[i], k) -= h;
            let fd = (sum_of_squares_loss(&cloud_of(&plus, 8.0), &slice, &settings)
                - sum_of_squares_loss(&cloud_of(&minus, 8.0), &slice, &settings))
                / (2.0 * h);
            let allowed = (rel * fd.abs()).max(abs);
            worst = worst.max((a - fd).abs() / allowed);
            count += 1;
        }
    }
    (worst, count)
}

#[derive(Debug, Default)]
pub struct FuzzOutcome {
    pub cases: usize,
    pub rejected: usize,
    pub panics: usize,
    pub silent_rejections: usize,
}

/// One random corruption: bit flip, byte overwrite, truncation, insertion or
/// appended garbage.
pub fn mutate(bytes: &[u8], r: &mut impl Rng) -> Vec<u8> {
    let mut b = bytes.to_vec();
    match r.random_range(0..5) {
        0 => {
            let i = r.random_range(0..b.len());
            b[i] ^= 1 << r.random_range(0..8);
        }
        1 => {
            for _ in 0..r.random_range(1..8) {
                let i = r.random_range(0..b.len());
                b[i] = r.random();
            }
        }
        2 => b.truncate(r.random_range(0..b.len())),
        3 => {
            let i = r.random_range(0..=b.len());
            b.insert(i, r.random());
        }
        _ => b.extend((0..r.random_range(1..16)).map(|_| r.random::<u8>())),
    }
    b
}

/// Decode `n` corrupted copies of each encoding; every rejection must carry
/// a message and no decode may panic.
pub fn fuzz_formats(seed: u64, n: usize) -> FuzzOutcome {
    let vol = slicegs::data::make_phantom(slicegs::data::PhantomKind::NestedEllipsoids, [16, 16, 16], seed).unwrap();
    let igv = slicegs::data::encode_volume(&vol);
    let mut r = rng(seed);
    let gs: Vec<Gaussian3D> = (0..20).map(|_| random_gaussian(&mut r, 1.0, 15.0, (0.5, 2.0))).collect();
    let mut cloud = cloud_of(&gs, 16.0);
    cloud.snap_to_storage();
    let igs = slicegs::data::encode_checkpoint(&cloud);

    let mut out = FuzzOutcome::default();
    for _ in 0..n {
        for which in 0..2 {
            let src = if which == 0 { &igv } else { &igs };
            let m = mutate(src, &mut r);
            out.cases += 1;
            let result = std::panic::catch_unwind(|| {
                if which == 0 {
                    slicegs::data::decode_volume(&m).map(|_| ())
                } else {
                    slicegs::data::decode_checkpoint(&m).map(|_| ())
                }
            });
            match result {
                Err(_) => out.panics += 1,
                Ok(Ok(())) => {}
                Ok(Err(e)) => {
                    out.rejected += 1;
                    if e.to_string().trim().is_empty() {
                        out.silent_rejections += 1;
                    }
                }
            }
        }
    }
    out
}

fn std_dev(v: &[f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64).sqrt()
}

/// Held-out slices of a 64^3 phantom, most structured (largest intensity
/// spread) first.
pub fn phantom_test_slices(seed: u64) -> Vec<(String, Vec<f64>)> {
    use slicegs::data::{extract_slices, make_phantom, split_dataset, PhantomKind};
    let vol = make_phantom(PhantomKind::NestedEllipsoids, [64, 64, 64], seed).unwrap();
    let ds = split_dataset(&extract_slices(&vol, &AXES).unwrap(), 0.05, seed).unwrap();
    let mut out: Vec<(String, Vec<f64>)> = ds.test().map(|e| (e.id(), e.image_f64())).collect();
    out.sort_by(|a, b| std_dev(&b.1).total_cmp(&std_dev(&a.1)));
    out
}

/// PSNR of a noisy prediction (σ = 0.02) of `gt`, and of the same
/// prediction after a brightness change `1.2 x + 0.1` followed by affine
/// normalization against the ground truth.
pub fn brightness_shift_psnr(gt: &[f64], seed: u64) -> (f64, f64) {
    let mut r = rng(seed);
    let noise = rand_distr::Normal::new(0.0, 0.02).unwrap();
    let pred: Vec<f64> = gt.iter().map(|g| g + r.sample(noise)).collect();
    let shifted: Vec<f64> = pred.iter().map(|p| 1.2 * p + 0.1).collect();
    let normalized = slicegs::metrics::affine_normalize(&shifted, gt).unwrap();
    (
        slicegs::metrics::psnr(&pred, gt).unwrap(),
        slicegs::metrics::psnr(&normalized, gt).unwrap(),
    )
}
