//! Per-slice photometric loss: `(1 - λ)·L1 + λ·(1 - SSIM)`.

use crate::error::{Error, Result};
use crate::metrics::ssim_with_grad;
use crate::raster::RenderedSlice;

/// Loss and `dL/dpred` for one rendered slice against its ground truth.
pub fn compute_loss(pred: &RenderedSlice, gt: &[f64], ssim_weight: f64) -> Result<(f64, Vec<f64>)> {
    image_loss(&pred.image, gt, pred.width, pred.height, ssim_weight)
}

pub fn image_loss(pred: &[f64], gt: &[f64], width: usize, height: usize, ssim_weight: f64) -> Result<(f64, Vec<f64>)> {
    if pred.len() != gt.len() || pred.len() != width * height {
        return Err(Error::Contract(format!(
            "loss shapes differ: prediction {} pixels, ground truth {}, expected {width}x{height}",
            pred.len(),
            gt.len()
        )));
    }
    if !(0.0..=1.0).contains(&ssim_weight) {
        return Err(Error::InvalidConfig(format!("ssim weight must lie in [0, 1], got {ssim_weight}")));
    }
    let n = pred.len() as f64;
    let l1_w = 1.0 - ssim_weight;
    let mut l1 = 0.0;
    let mut grad: Vec<f64> = pred
        .iter()
        .zip(gt)
        .map(|(p, g)| {
            let d = p - g;
            l1 += d.abs();
            l1_w * if d > 0.0 {
                1.0
            } else if d < 0.0 {
                -1.0
            } else {
                0.0
            } / n
        })
        .collect();
    let mut loss = l1_w * l1 / n;
    if ssim_weight > 0.0 {
        let (s, ds) = ssim_with_grad(pred, gt, width, height)?;
        loss += ssim_weight * (1.0 - s);
        for (g, d) in grad.iter_mut().zip(ds) {
            *g -= ssim_weight * d;
        }
    }
    Ok((loss, grad))
}
