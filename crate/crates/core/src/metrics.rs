//! Image-quality metrics on `[0, 1]` images: PSNR, SSIM and the affine
//! brightness normalization used before scoring scans with a global
//! intensity shift.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Serialize, Serializer};

use crate::conditional::Axis;
use crate::error::{Error, Result};

pub const PSNR_PEAK: f64 = 1.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

fn check_shape(pred: &[f64], gt: &[f64]) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::Contract(format!(
            "image shapes differ: {} vs {} pixels",
            pred.len(),
            gt.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Contract("images are empty".into()));
    }
    Ok(())
}

pub fn mse(pred: &[f64], gt: &[f64]) -> Result<f64> {
    check_shape(pred, gt)?;
    Ok(pred.iter().zip(gt).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / pred.len() as f64)
}

/// Peak signal-to-noise ratio in dB with peak 1; `+inf` for identical images.
pub fn psnr(pred: &[f64], gt: &[f64]) -> Result<f64> {
    let m = mse(pred, gt)?;
    Ok(if m == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (PSNR_PEAK * PSNR_PEAK / m).log10()
    })
}

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut k = [0.0; SSIM_WINDOW];
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - r;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.map(|v| v / s)
}

/// Symmetric (edge-repeating) reflection of an out-of-range index.
#[inline]
pub fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let m = i.rem_euclid(2 * n);
    (if m >= n { 2 * n - 1 - m } else { m }) as usize
}

/// Separable Gaussian blur, or its adjoint when `adjoint` is set.
fn blur(img: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW], adjoint: bool) -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as isize;
    let mut tmp = vec![0.0; w * h];
    let mut out = vec![0.0; w * h];
    // Horizontal pass.
    for y in 0..h {
        let row = &img[y * w..(y + 1) * w];
        let dst = &mut tmp[y * w..(y + 1) * w];
        for x in 0..w {
            for (o, &kv) in k.iter().enumerate() {
                let xi = reflect(x as isize + o as isize - r, w);
                if adjoint {
                    dst[xi] += kv * row[x];
                } else {
                    dst[x] += kv * row[xi];
                }
            }
        }
    }
    // Vertical pass.
    for y in 0..h {
        for (o, &kv) in k.iter().enumerate() {
            let yi = reflect(y as isize + o as isize - r, h);
            for x in 0..w {
                if adjoint {
                    out[yi * w + x] += kv * tmp[y * w + x];
                } else {
                    out[y * w + x] += kv * tmp[yi * w + x];
                }
            }
        }
    }
    out
}

struct SsimMaps {
    mu_x: Vec<f64>,
    mu_y: Vec<f64>,
    var_x: Vec<f64>,
    var_y: Vec<f64>,
    cov: Vec<f64>,
}

fn ssim_maps(x: &[f64], y: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> SsimMaps {
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
    let mu_x = blur(x, w, h, k, false);
    let mu_y = blur(y, w, h, k, false);
    let exx = blur(&xx, w, h, k, false);
    let eyy = blur(&yy, w, h, k, false);
    let exy = blur(&xy, w, h, k, false);
    let var_x = exx.iter().zip(&mu_x).map(|(e, m)| e - m * m).collect();
    let var_y = eyy.iter().zip(&mu_y).map(|(e, m)| e - m * m).collect();
    let cov = exy.iter().zip(mu_x.iter().zip(&mu_y)).map(|(e, (a, b))| e - a * b).collect();
    SsimMaps {
        mu_x,
        mu_y,
        var_x,
        var_y,
        cov,
    }
}

fn check_image(pred: &[f64], gt: &[f64], width: usize, height: usize) -> Result<()> {
    check_shape(pred, gt)?;
    if width * height != pred.len() {
        return Err(Error::Contract(format!(
            "image has {} pixels, expected {width}x{height}",
            pred.len()
        )));
    }
    Ok(())
}

/// Mean SSIM without the window-size precondition, plus its gradient with
/// respect to `pred`. Used as a training loss on arbitrarily small slices.
pub fn ssim_with_grad(pred: &[f64], gt: &[f64], width: usize, height: usize) -> Result<(f64, Vec<f64>)> {
    check_image(pred, gt, width, height)?;
    let k = gaussian_kernel();
    let m = ssim_maps(pred, gt, width, height, &k);
    let n = pred.len() as f64;
    let mut total = 0.0;
    let mut d_mu = vec![0.0; pred.len()];
    let mut d_exx = vec![0.0; pred.len()];
    let mut d_exy = vec![0.0; pred.len()];
    for i in 0..pred.len() {
        let (mx, my) = (m.mu_x[i], m.mu_y[i]);
        let n1 = 2.0 * mx * my + SSIM_C1;
        let n2 = 2.0 * m.cov[i] + SSIM_C2;
        let d1 = mx * mx + my * my + SSIM_C1;
        let d2 = m.var_x[i] + m.var_y[i] + SSIM_C2;
        let s = n1 * n2 / (d1 * d2);
        total += s;
        let ds_dmx = 2.0 * my * n2 / (d1 * d2) - s * 2.0 * mx / d1;
        let ds_dvx = -s / d2;
        let ds_dcov = 2.0 * n1 / (d1 * d2);
        // var_x = E[x^2] - mu_x^2 and cov = E[xy] - mu_x mu_y.
        d_mu[i] = (ds_dmx - 2.0 * mx * ds_dvx - my * ds_dcov) / n;
        d_exx[i] = ds_dvx / n;
        d_exy[i] = ds_dcov / n;
    }
    let g_mu = blur(&d_mu, width, height, &k, true);
    let g_xx = blur(&d_exx, width, height, &k, true);
    let g_xy = blur(&d_exy, width, height, &k, true);
    let grad = (0..pred.len())
        .map(|i| g_mu[i] + 2.0 * pred[i] * g_xx[i] + gt[i] * g_xy[i])
        .collect();
    Ok((total / n, grad))
}

/// Mean local SSIM with an 11x11 Gaussian window (sigma 1.5).
pub fn ssim(pred: &[f64], gt: &[f64], width: usize, height: usize) -> Result<f64> {
    check_image(pred, gt, width, height)?;
    if width < SSIM_WINDOW || height < SSIM_WINDOW {
        return Err(Error::Contract(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {width}x{height}"
        )));
    }
    let k = gaussian_kernel();
    let m = ssim_maps(pred, gt, width, height, &k);
    let total: f64 = (0..pred.len())
        .map(|i| {
            let (mx, my) = (m.mu_x[i], m.mu_y[i]);
            (2.0 * mx * my + SSIM_C1) * (2.0 * m.cov[i] + SSIM_C2)
                / ((mx * mx + my * my + SSIM_C1) * (m.var_x[i] + m.var_y[i] + SSIM_C2))
        })
        .sum();
    Ok(total / pred.len() as f64)
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Match `pred`'s mean and standard deviation to `gt`'s, without clamping.
pub fn affine_normalize_unclamped(pred: &[f64], gt: &[f64]) -> Result<Vec<f64>> {
    check_shape(pred, gt)?;
    let (mp, sp) = mean_std(pred);
    let (mg, sg) = mean_std(gt);
    if sp == 0.0 {
        return Ok(vec![mg; pred.len()]);
    }
    let gain = sg / sp;
    Ok(pred.iter().map(|p| (p - mp) * gain + mg).collect())
}

/// [`affine_normalize_unclamped`] followed by clamping to `[0, 1]`.
pub fn affine_normalize(pred: &[f64], gt: &[f64]) -> Result<Vec<f64>> {
    let mut out = affine_normalize_unclamped(pred, gt)?;
    out.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    Ok(out)
}

fn ser_db<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_infinite() && *v > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_f64(*v)
    }
}

fn fmt_db(v: f64) -> String {
    if v.is_infinite() && v > 0.0 {
        "inf".into()
    } else {
        format!("{v:.6}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SliceScore {
    pub id: String,
    pub axis: Axis,
    pub index: usize,
    #[serde(serialize_with = "ser_db")]
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanScore {
    #[serde(serialize_with = "ser_db")]
    pub psnr: f64,
    pub ssim: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub psnr_peak: f64,
    pub affine_normalized: bool,
    pub slices: Vec<SliceScore>,
    pub per_axis: BTreeMap<Axis, MeanScore>,
    pub overall: MeanScore,
}

fn mean_score<'a>(it: impl Iterator<Item = &'a SliceScore>) -> MeanScore {
    let (mut p, mut s, mut n) = (0.0, 0.0, 0usize);
    for sc in it {
        p += sc.psnr;
        s += sc.ssim;
        n += 1;
    }
    if n == 0 {
        return MeanScore {
            psnr: f64::NAN,
            ssim: f64::NAN,
            count: 0,
        };
    }
    MeanScore {
        psnr: p / n as f64,
        ssim: s / n as f64,
        count: n,
    }
}

impl MetricReport {
    pub fn from_scores(slices: Vec<SliceScore>, affine_normalized: bool) -> Self {
        let mut per_axis = BTreeMap::new();
        for axis in Axis::ALL {
            if slices.iter().any(|s| s.axis == axis) {
                per_axis.insert(axis, mean_score(slices.iter().filter(|s| s.axis == axis)));
            }
        }
        let overall = mean_score(slices.iter());
        Self {
            psnr_peak: PSNR_PEAK,
            affine_normalized,
            slices,
            per_axis,
            overall,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("slice,axis,index,psnr_db,ssim\n");
        for s in &self.slices {
            let _ = writeln!(out, "{},{},{},{},{:.6}", s.id, s.axis, s.index, fmt_db(s.psnr), s.ssim);
        }
        for (axis, m) in &self.per_axis {
            let _ = writeln!(out, "mean_{axis},{axis},,{},{:.6}", fmt_db(m.psnr), m.ssim);
        }
        let _ = writeln!(out, "mean,all,,{},{:.6}", fmt_db(self.overall.psnr), self.overall.ssim);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psnr_closed_forms() {
        let gt = vec![0.2, 0.4, 0.6, 0.8];
        assert_eq!(psnr(&gt, &gt).unwrap(), f64::INFINITY);
        let pred: Vec<f64> = gt.iter().map(|v| v + 0.1).collect();
        assert!((psnr(&pred, &gt).unwrap() - 20.0).abs() < 1e-9);
        assert!(psnr(&pred[..3], &gt).is_err());
    }

    #[test]
    fn ssim_identity_and_inverse() {
        let (w, h) = (16, 12);
        let gt: Vec<f64> = (0..w * h).map(|i| ((i % w / 4 + i / w / 4) % 2) as f64).collect();
        assert!((ssim(&gt, &gt, w, h).unwrap() - 1.0).abs() < 1e-12);
        let inv: Vec<f64> = gt.iter().map(|v| 1.0 - v).collect();
        assert!(ssim(&inv, &gt, w, h).unwrap() < 0.1);
        assert!(ssim(&gt[..100], &gt[..100], 10, 10).is_err());
    }

    #[test]
    fn reflect_is_symmetric() {
        assert_eq!(reflect(-1, 5), 0);
        assert_eq!(reflect(-2, 5), 1);
        assert_eq!(reflect(5, 5), 4);
        assert_eq!(reflect(6, 5), 3);
        assert_eq!(reflect(-7, 3), 0);
    }

    #[test]
    fn affine_inverts_gain_and_bias() {
        let gt = vec![0.1, 0.5, 0.3, 0.9, 0.2];
        let pred: Vec<f64> = gt.iter().map(|v| 0.5 * v + 0.2).collect();
        let back = affine_normalize_unclamped(&pred, &gt).unwrap();
        for (a, b) in back.iter().zip(&gt) {
            assert!((a - b).abs() < 1e-12);
        }
        let flat = affine_normalize(&[0.7; 5], &gt).unwrap();
        assert!(flat.iter().all(|v| (v - 0.4).abs() < 1e-12));
    }

    #[test]
    fn report_serializes_infinite_psnr() {
        let r = MetricReport::from_scores(
            vec![SliceScore {
                id: "z001".into(),
                axis: Axis::Z,
                index: 1,
                psnr: f64::INFINITY,
                ssim: 1.0,
            }],
            false,
        );
        let j = serde_json::to_string(&r).unwrap();
        assert!(j.contains("\"psnr\":\"inf\""), "{j}");
        assert!(r.to_csv().contains("z001,z,1,inf,1.000000"));
    }
}
