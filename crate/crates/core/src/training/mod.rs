//! Fitting a Gaussian cloud to slice supervision.
//!
//! Each step renders the training slices (all of them, or a seeded random
//! subset), sums the per-slice losses, merges the gradients in slice order and
//! applies one Adam update. Every `refine_interval` steps inside
//! `[refine_start, refine_stop)` the cloud is pruned and densified. Training
//! stops at `max_steps` or at the first step `s >= W` whose loss is less than
//! `delta` below the loss `W` steps earlier.

pub mod adam;
pub mod loss;
pub mod refine;

use std::time::Instant;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use adam::{Adam, LearningRates};
pub use loss::{compute_loss, image_loss};
pub use refine::{refine, RefineCounts, RefineParams};

use crate::conditional::check_epsilon;
use crate::data::slices::{SliceDataset, SliceEntry};
use crate::error::{Error, Result};
use crate::gaussian::{init_grid_cloud, CloudGradients, GaussianCloud, GaussianGrad, InitConfig};
use crate::metrics::{affine_normalize, psnr, ssim, MetricReport, SliceScore};
use crate::raster::{backward_sparse, bin_gaussians, render_slice, RasterSettings, RenderedSlice, Selection};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rates: LearningRates,
    pub max_steps: usize,
    pub convergence_window: usize,
    pub convergence_delta: f64,
    pub refine_enabled: bool,
    pub refine_interval: usize,
    pub refine_start: usize,
    pub refine_stop: usize,
    pub tau_alpha: f64,
    pub tau_p: f64,
    /// Split/clone threshold on `‖Σ‖_F`, as a fraction of the largest extent.
    pub tau_s_fraction: f64,
    /// Prune Gaussians whose largest scale exceeds this fraction of the extent.
    pub too_large_fraction: f64,
    pub max_gaussians: Option<usize>,
    pub ssim_weight: f64,
    pub selection: Selection,
    pub tile_size: usize,
    /// Random subset of training slices rendered per step; all when unset.
    pub slices_per_step: Option<usize>,
    pub grid_resolution: usize,
    pub init: InitConfig,
    pub checkpoint_interval: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rates: LearningRates::default(),
            max_steps: 1000,
            convergence_window: 100,
            convergence_delta: 1e-4,
            refine_enabled: true,
            refine_interval: 100,
            refine_start: 100,
            refine_stop: 800,
            tau_alpha: 0.005,
            tau_p: 2e-4,
            tau_s_fraction: 0.01,
            too_large_fraction: 0.5,
            max_gaussians: None,
            ssim_weight: 0.2,
            selection: Selection::default(),
            tile_size: crate::raster::DEFAULT_TILE_SIZE,
            slices_per_step: None,
            grid_resolution: 42,
            init: InitConfig::default(),
            checkpoint_interval: 250,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        let lr = &self.learning_rates;
        if [lr.mean, lr.log_scale, lr.rotation, lr.opacity, lr.intensity]
            .iter()
            .any(|r| !(r.is_finite() && *r >= 0.0))
        {
            return bad(format!("learning rates must be finite and non-negative, got {lr:?}"));
        }
        if self.convergence_window == 0 || !(self.convergence_delta >= 0.0) {
            return bad("convergence window must be positive and delta non-negative".into());
        }
        if self.refine_interval == 0 {
            return bad("refine_interval must be positive".into());
        }
        if self.refine_start >= self.refine_stop {
            return bad(format!(
                "refine_start ({}) must be below refine_stop ({})",
                self.refine_start, self.refine_stop
            ));
        }
        if !(0.0..=1.0).contains(&self.ssim_weight) {
            return bad(format!("ssim_weight must lie in [0, 1], got {}", self.ssim_weight));
        }
        if !(self.tau_alpha >= 0.0 && self.tau_p >= 0.0 && self.tau_s_fraction > 0.0 && self.too_large_fraction > 0.0) {
            return bad("refinement thresholds must be non-negative".into());
        }
        if self.tile_size == 0 || self.slices_per_step == Some(0) || self.checkpoint_interval == 0 {
            return bad("tile_size, slices_per_step and checkpoint_interval must be positive".into());
        }
        if self.grid_resolution < 2 {
            return bad(format!("grid_resolution must be at least 2, got {}", self.grid_resolution));
        }
        check_epsilon(self.selection.epsilon)
    }

    pub fn raster_settings(&self) -> RasterSettings {
        RasterSettings {
            selection: self.selection,
            tile_size: self.tile_size,
            early_stop: true,
        }
    }

    fn refine_params(&self, cloud: &GaussianCloud) -> RefineParams {
        let extent = cloud.bounds().max_extent();
        RefineParams {
            tau_alpha: self.tau_alpha,
            tau_p: self.tau_p,
            tau_s: self.tau_s_fraction * extent,
            max_scale: self.too_large_fraction * extent,
            grid_spacing: extent / self.grid_resolution as f64,
            max_gaussians: self.max_gaussians,
        }
    }

    fn refines_after(&self, step: usize) -> bool {
        self.refine_enabled
            && step >= self.refine_start
            && step < self.refine_stop
            && step.is_multiple_of(self.refine_interval)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Converged,
    MaxSteps,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainReport {
    /// Summed loss of every executed step.
    pub losses: Vec<f64>,
    pub refinements: Vec<RefineCounts>,
    pub steps: usize,
    pub stop_reason: StopReason,
    pub initial_gaussians: usize,
    pub final_gaussians: usize,
    pub train_slices: usize,
    /// Per-group rates after scaling (mean rate times the extent).
    pub effective_learning_rates: LearningRates,
    pub duration_s: f64,
    pub config: TrainConfig,
}

/// The stopping rule: stop at the first index `s >= window` with
/// `losses[s - window] - losses[s] < delta`.
#[derive(Debug, Clone)]
pub struct ConvergenceMonitor {
    window: usize,
    delta: f64,
    history: Vec<f64>,
}

impl ConvergenceMonitor {
    pub fn new(window: usize, delta: f64) -> Self {
        Self {
            window,
            delta,
            history: Vec::new(),
        }
    }

    /// Record the next loss; true when training should stop after it.
    pub fn push(&mut self, loss: f64) -> bool {
        self.history.push(loss);
        let s = self.history.len() - 1;
        s >= self.window && self.history[s - self.window] - loss < self.delta
    }
}

/// First index at which [`ConvergenceMonitor`] fires on `losses`.
pub fn first_converged_step(losses: &[f64], window: usize, delta: f64) -> Option<usize> {
    let mut m = ConvergenceMonitor::new(window, delta);
    losses.iter().position(|&l| m.push(l))
}

/// Hooks into the training loop.
pub trait TrainObserver {
    /// Replace the loss recorded for `step` (1-based). Identity by default;
    /// used to inject synthetic loss series.
    fn adjust_loss(&mut self, _step: usize, loss: f64) -> f64 {
        loss
    }

    /// Called after each step, once the cloud is final for that step.
    fn after_step(&mut self, _step: usize, _cloud: &GaussianCloud) -> Result<()> {
        Ok(())
    }
}

pub struct NoObserver;

impl TrainObserver for NoObserver {}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub loss: f64,
    pub slice_losses: Vec<f64>,
}

fn slice_pass(
    cloud: &GaussianCloud,
    entry: &SliceEntry,
    settings: &RasterSettings,
    ssim_weight: f64,
) -> Result<(f64, Vec<(usize, GaussianGrad)>)> {
    let bins = bin_gaussians(cloud, &entry.spec, settings)?;
    let pred = render_slice(cloud, &entry.spec, &bins)?;
    let (loss, dl) = compute_loss(&pred, &entry.image_f64(), ssim_weight)?;
    if !loss.is_finite() {
        return Ok((loss, Vec::new()));
    }
    let grads = backward_sparse(cloud, &entry.spec, &bins, &dl)?;
    Ok((loss, grads))
}

/// Summed loss over `batch` without touching the cloud.
pub fn evaluate_loss(cloud: &GaussianCloud, batch: &[&SliceEntry], config: &TrainConfig) -> Result<f64> {
    let settings = config.raster_settings();
    let losses: Vec<f64> = batch
        .par_iter()
        .map(|e| {
            let pred = crate::raster::render(cloud, &e.spec, &settings)?;
            Ok(compute_loss(&pred, &e.image_f64(), config.ssim_weight)?.0)
        })
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum())
}

/// One optimization step over `batch`.
pub fn train_step(
    cloud: &mut GaussianCloud,
    batch: &[&SliceEntry],
    config: &TrainConfig,
    adam: &mut Adam,
) -> Result<StepResult> {
    if batch.is_empty() {
        return Err(Error::InvalidConfig("training needs at least one training slice".into()));
    }
    if cloud.is_empty() {
        return Err(Error::Training("cannot train an empty cloud".into()));
    }
    let settings = config.raster_settings();
    let shared: &GaussianCloud = cloud;
    let passes: Vec<(f64, Vec<(usize, GaussianGrad)>)> = batch
        .par_iter()
        .map(|e| slice_pass(shared, e, &settings, config.ssim_weight))
        .collect::<Result<_>>()?;

    let mut grads = CloudGradients::zeros(cloud.len());
    let mut slice_losses = Vec::with_capacity(batch.len());
    let mut total = 0.0;
    for (entry, (loss, sparse)) in batch.iter().zip(&passes) {
        if !loss.is_finite() {
            return Err(Error::Training(format!("non-finite loss {loss} on slice {}", entry.id())));
        }
        total += loss;
        slice_losses.push(*loss);
        for (i, g) in sparse {
            grads.grads[*i].add_assign(g);
        }
        cloud.accumulate_grad_norms(sparse);
    }
    if let Some((i, _)) = grads
        .grads
        .iter()
        .enumerate()
        .find(|(_, g)| g.to_array().iter().any(|v| !v.is_finite()))
    {
        return Err(Error::Training(format!("non-finite gradient for Gaussian {i}")));
    }
    adam.step(cloud, &grads);
    cloud.enforce_invariants();
    cloud.snap_to_storage();
    Ok(StepResult {
        loss: total,
        slice_losses,
    })
}

/// Initialize a grid cloud over the dataset and train it.
pub fn train(dataset: &SliceDataset, config: &TrainConfig) -> Result<(GaussianCloud, TrainReport)> {
    train_with(dataset, config, &mut NoObserver)
}

pub fn train_with(
    dataset: &SliceDataset,
    config: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<(GaussianCloud, TrainReport)> {
    config.validate()?;
    let cloud = init_grid_cloud(config.grid_resolution, dataset.bounds(), &config.init)?;
    train_from(cloud, dataset, config, observer)
}

/// Train an existing cloud.
pub fn train_from(
    mut cloud: GaussianCloud,
    dataset: &SliceDataset,
    config: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<(GaussianCloud, TrainReport)> {
    config.validate()?;
    let started = Instant::now();
    let train_slices: Vec<&SliceEntry> = dataset.train().collect();
    if train_slices.is_empty() {
        return Err(Error::InvalidConfig("dataset has no training slices".into()));
    }
    let extent = cloud.bounds().max_extent();
    let mut adam = Adam::new(config.learning_rates.per_parameter(extent), cloud.len());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut monitor = ConvergenceMonitor::new(config.convergence_window, config.convergence_delta);
    let mut losses = Vec::new();
    let mut refinements = Vec::new();
    let mut stop_reason = StopReason::MaxSteps;
    let initial = cloud.len();

    for step in 1..=config.max_steps {
        let batch: Vec<&SliceEntry> = match config.slices_per_step {
            Some(k) if k < train_slices.len() => {
                let mut idx = sample(&mut rng, train_slices.len(), k).into_vec();
                idx.sort_unstable();
                idx.into_iter().map(|i| train_slices[i]).collect()
            }
            _ => train_slices.clone(),
        };
        let result = train_step(&mut cloud, &batch, config, &mut adam)?;
        let loss = observer.adjust_loss(step, result.loss);
        losses.push(loss);
        let converged = monitor.push(loss);
        if !converged && config.refines_after(step) {
            let params = config.refine_params(&cloud);
            let (mut counts, source) = refine(&mut cloud, &params, &mut rng)?;
            counts.step = step;
            adam.remap(&source);
            refinements.push(counts);
        }
        observer.after_step(step, &cloud)?;
        if converged {
            stop_reason = StopReason::Converged;
            break;
        }
    }

    let mut effective = config.learning_rates;
    effective.mean *= extent;
    let report = TrainReport {
        steps: losses.len(),
        losses,
        refinements,
        stop_reason,
        initial_gaussians: initial,
        final_gaussians: cloud.len(),
        train_slices: train_slices.len(),
        effective_learning_rates: effective,
        duration_s: started.elapsed().as_secs_f64(),
        config: config.clone(),
    };
    Ok((cloud, report))
}

/// Render one slice per entry, in parallel, in entry order.
pub fn render_entries(
    cloud: &GaussianCloud,
    entries: &[&SliceEntry],
    settings: &RasterSettings,
) -> Result<Vec<RenderedSlice>> {
    entries
        .par_iter()
        .map(|e| crate::raster::render(cloud, &e.spec, settings))
        .collect()
}

/// Score `cloud` on the dataset's test slices, optionally after affine
/// brightness normalization of each prediction.
pub fn evaluate_test_slices(
    cloud: &GaussianCloud,
    dataset: &SliceDataset,
    settings: &RasterSettings,
    normalize: bool,
) -> Result<MetricReport> {
    let entries: Vec<&SliceEntry> = dataset.test().collect();
    if entries.is_empty() {
        return Err(Error::InvalidConfig("dataset has no test slices".into()));
    }
    let renders = render_entries(cloud, &entries, settings)?;
    let mut scores = Vec::with_capacity(entries.len());
    for (e, r) in entries.iter().zip(renders) {
        let gt = e.image_f64();
        let pred = if normalize {
            affine_normalize(&r.image, &gt)?
        } else {
            r.image
        };
        scores.push(SliceScore {
            id: e.id(),
            axis: e.spec.axis,
            index: e.index,
            psnr: psnr(&pred, &gt)?,
            ssim: ssim(&pred, &gt, e.spec.width, e.spec.height)?,
        });
    }
    Ok(MetricReport::from_scores(scores, normalize))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn convergence_fires_at_first_small_decrease() {
        let mut losses: Vec<f64> = (0..150).map(|i| 10.0 - 0.01 * i as f64).collect();
        for l in losses.iter_mut().skip(120) {
            *l = 8.8;
        }
        // Decrease over 100 steps stays >= 0.01 until index 120 + 100.
        assert_eq!(first_converged_step(&losses, 100, 1e-4), None);
        losses.extend(std::iter::repeat_n(8.8, 100));
        assert_eq!(first_converged_step(&losses, 100, 1e-4), Some(220));
        assert_eq!(first_converged_step(&[1.0; 5], 2, 1e-4), Some(2));
    }

    #[test]
    fn default_config_is_valid_and_round_trips() {
        let c = TrainConfig::default();
        c.validate().unwrap();
        let j = serde_json::to_string(&c).unwrap();
        let back: TrainConfig = serde_json::from_str(&j).unwrap();
        assert_eq!(back, c);
        assert!(serde_json::from_str::<TrainConfig>(r#"{"bogus": 1}"#).is_err());
        let partial: TrainConfig = serde_json::from_str(r#"{"max_steps": 7}"#).unwrap();
        assert_eq!(partial.max_steps, 7);
        assert_eq!(partial.refine_stop, 800);
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut c = TrainConfig {
            refine_start: 800,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        c.refine_start = 100;
        c.ssim_weight = 1.5;
        assert!(c.validate().is_err());
    }
}
