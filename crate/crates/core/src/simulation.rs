//! Candidate-selection benchmark: how tightly do the two bounding-box
//! methods capture the pixels where each Gaussian is actually active?
//!
//! Random Gaussians are scattered in a small cube. For every slice of the
//! configured axes and every pixel, a Gaussian is *active* when its density
//! at the pixel center reaches `epsilon`. Each method's boxes give the
//! candidate set; comparing the two yields false positives, false negatives
//! and candidate counts per pixel. Rendering all slices with each method's
//! binning gives the timing.

use std::fmt::Write as _;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conditional::{check_epsilon, Axis, CandidateBox, ExtentMode, SlicedGaussian};
use crate::eigen::max_eigenvalue;
use crate::error::{Error, Result};
use crate::gaussian::{evaluate_density, logit, Bounds, Gaussian3D, GaussianCloud};
use crate::raster::{bin_gaussians, render_slice, Method, RasterSettings, Selection, SliceSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub volume_size: usize,
    pub num_gaussians: usize,
    pub mean_range: [f64; 2],
    /// Per-axis standard deviations are drawn log-uniformly from this range.
    pub scale_range: [f64; 2],
    pub epsilon: f64,
    /// Box variants evaluated for the conditional method.
    pub m2_modes: Vec<ExtentMode>,
    pub axes: Vec<Axis>,
    pub opacity: f64,
    pub intensity: f64,
    pub tile_size: usize,
    /// Full renders per method and repetition; the timing is their sum.
    pub timing_rounds: usize,
    pub repetitions: usize,
    pub seed: u64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            volume_size: 20,
            num_gaussians: 50,
            mean_range: [5.0, 15.0],
            scale_range: [0.5, 2.5],
            epsilon: 0.01,
            m2_modes: vec![ExtentMode::Capped3Sigma, ExtentMode::Exact],
            axes: Axis::ALL.to_vec(),
            opacity: 0.5,
            intensity: 0.5,
            tile_size: 16,
            timing_rounds: 5,
            repetitions: 10,
            seed: 0,
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        check_epsilon(self.epsilon)?;
        if self.volume_size < 2 || self.num_gaussians == 0 || self.repetitions == 0 || self.timing_rounds == 0 {
            return bad("volume_size >= 2 and positive gaussian, repetition and timing counts are required".into());
        }
        let n = self.volume_size as f64;
        let [lo, hi] = self.mean_range;
        if !(lo >= 0.0 && lo <= hi && hi <= n) {
            return bad(format!("mean range {:?} must lie inside [0, {n}]", self.mean_range));
        }
        let [slo, shi] = self.scale_range;
        if !(slo > 0.0 && slo <= shi && shi.is_finite()) {
            return bad(format!("scale range {:?} must be positive and ordered", self.scale_range));
        }
        if self.axes.is_empty() || self.m2_modes.is_empty() {
            return bad("at least one axis and one M2 mode are required".into());
        }
        if !(self.opacity > 0.0 && self.opacity < 1.0 && self.intensity > 0.0 && self.intensity < 1.0) {
            return bad("opacity and intensity must lie in (0, 1)".into());
        }
        if self.tile_size == 0 {
            return bad("tile_size must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodStats {
    pub label: String,
    pub method: Method,
    pub mode: Option<ExtentMode>,
    /// Mean box area over (Gaussian, slice) pairs with a non-empty box.
    pub bbox_area: f64,
    pub fp_per_pixel: f64,
    pub fn_per_pixel: f64,
    pub cand_per_pixel: f64,
    /// Candidates not also selected by the first method (M1), per pixel.
    pub outside_m1_per_pixel: f64,
    pub render_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Repetition {
    pub index: usize,
    pub seed: u64,
    pub active_per_pixel: f64,
    pub methods: Vec<MethodStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub config: SimulationConfig,
    pub scale_distribution: String,
    pub rotation_distribution: String,
    pub pixels_per_repetition: usize,
    pub repetitions: Vec<Repetition>,
    /// Means over repetitions; render time is the median.
    pub aggregate: Vec<MethodStats>,
}

impl SimulationReport {
    pub fn method(&self, label: &str) -> Option<&MethodStats> {
        self.aggregate.iter().find(|m| m.label == label)
    }

    /// Copy with every timing field zeroed, for reproducibility checks.
    pub fn without_timing(&self) -> SimulationReport {
        let mut r = self.clone();
        for m in r.aggregate.iter_mut().chain(r.repetitions.iter_mut().flat_map(|p| p.methods.iter_mut())) {
            m.render_time_s = 0.0;
        }
        r
    }

    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("repetition,method,bbox_area,fp_per_pixel,fn_per_pixel,cand_per_pixel,outside_m1_per_pixel,render_time_s\n");
        let rows = self
            .repetitions
            .iter()
            .flat_map(|r| r.methods.iter().map(move |m| (r.index.to_string(), m)))
            .chain(self.aggregate.iter().map(|m| ("mean".to_string(), m)));
        for (rep, m) in rows {
            let _ = writeln!(
                out,
                "{rep},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
                m.label, m.bbox_area, m.fp_per_pixel, m.fn_per_pixel, m.cand_per_pixel, m.outside_m1_per_pixel, m.render_time_s
            );
        }
        out
    }

    /// Human-readable summary in the shape of a comparison table.
    pub fn table(&self) -> String {
        let mut out = format!(
            "{:<18} {:>10} {:>10} {:>10} {:>11} {:>10}\n",
            "method", "bbox area", "FP/pixel", "FN/pixel", "Cand/pixel", "time (s)"
        );
        for m in &self.aggregate {
            let _ = writeln!(
                out,
                "{:<18} {:>10.2} {:>10.3} {:>10.4} {:>11.3} {:>10.4}",
                m.label, m.bbox_area, m.fp_per_pixel, m.fn_per_pixel, m.cand_per_pixel, m.render_time_s
            );
        }
        out
    }
}

fn mode_label(mode: ExtentMode) -> &'static str {
    match mode {
        ExtentMode::Exact => "m2_exact",
        ExtentMode::Capped3Sigma => "m2_capped3sigma",
    }
}

/// Random Gaussians for one repetition: uniform means, log-uniform scales,
/// uniformly random orientation.
pub fn random_gaussians(config: &SimulationConfig, rng: &mut impl Rng) -> Vec<Gaussian3D> {
    let [lo, hi] = config.mean_range;
    let [slo, shi] = config.scale_range;
    (0..config.num_gaussians)
        .map(|_| {
            let mean = [0; 3].map(|_| if hi > lo { rng.random_range(lo..hi) } else { lo });
            let log_scale = [0; 3].map(|_| {
                if shi > slo {
                    rng.random_range(slo.ln()..shi.ln())
                } else {
                    slo.ln()
                }
            });
            // A normalized 4D standard normal is uniform on the rotation group.
            let mut q = [0.0; 4];
            loop {
                q = q.map(|_| rng.sample::<f64, _>(StandardNormal));
                let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
                if n > 1e-6 {
                    q = q.map(|v| v / n);
                    break;
                }
            }
            Gaussian3D {
                mean,
                log_scale,
                rotation: q,
                opacity_raw: logit(config.opacity),
                intensity_raw: logit(config.intensity),
            }
        })
        .collect()
}

struct Tally {
    area_sum: f64,
    area_pairs: usize,
    fp: usize,
    fn_: usize,
    cand: usize,
    outside_m1: usize,
}

fn run_repetition(config: &SimulationConfig, index: usize) -> Result<Repetition> {
    let seed = config.seed.wrapping_add(index as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gaussians = random_gaussians(config, &mut rng);
    let n = config.volume_size;
    let dims = [n; 3];
    let covs: Vec<_> = gaussians.iter().map(|g| g.covariance()).collect();
    let lambdas: Vec<f64> = covs.iter().map(max_eigenvalue).collect::<Result<_>>()?;

    let variants: Vec<(Method, Option<ExtentMode>)> = std::iter::once((Method::M1, None))
        .chain(config.m2_modes.iter().map(|&m| (Method::M2, Some(m))))
        .collect();
    let mut tallies: Vec<Tally> = variants
        .iter()
        .map(|_| Tally {
            area_sum: 0.0,
            area_pairs: 0,
            fp: 0,
            fn_: 0,
            cand: 0,
            outside_m1: 0,
        })
        .collect();
    let mut pixels = 0usize;
    let mut active_total = 0usize;
    let mut boxes: Vec<Vec<CandidateBox>> = vec![Vec::with_capacity(gaussians.len()); variants.len()];

    for &axis in &config.axes {
        for k in 0..n {
            let slice = SliceSpec::for_volume(axis, k as f64 + 0.5, dims);
            for b in boxes.iter_mut() {
                b.clear();
            }
            for (g, (cov, &lambda)) in gaussians.iter().zip(covs.iter().zip(&lambdas)) {
                let sliced = SlicedGaussian::new(cov, &g.mean, axis, slice.t);
                for (v, &(method, mode)) in variants.iter().enumerate() {
                    let b = match method {
                        Method::M1 => sliced.method1_box(&slice, lambda),
                        Method::M2 => sliced.method2_box(&slice, config.epsilon, mode.unwrap_or_default()),
                    };
                    if !b.empty {
                        tallies[v].area_sum += b.area() as f64;
                        tallies[v].area_pairs += 1;
                    }
                    boxes[v].push(b);
                }
            }
            for j in 0..slice.height {
                for i in 0..slice.width {
                    pixels += 1;
                    let (u, v) = slice.pixel_center(i, j);
                    let p = crate::conditional::unpermute_point(u, v, slice.t, axis);
                    for (gi, g) in gaussians.iter().enumerate() {
                        let active = evaluate_density(g, p) >= config.epsilon;
                        active_total += active as usize;
                        let in_m1 = boxes[0][gi].contains(i, j);
                        for (vi, t) in tallies.iter_mut().enumerate() {
                            let cand = boxes[vi][gi].contains(i, j);
                            t.cand += cand as usize;
                            t.fp += (cand && !active) as usize;
                            t.fn_ += (active && !cand) as usize;
                            t.outside_m1 += (cand && !in_m1) as usize;
                        }
                    }
                }
            }
        }
    }

    // Timing: full render of every configured slice, single-threaded.
    let cloud = GaussianCloud::from_gaussians(Bounds::from_dims(dims), gaussians.iter().copied());
    let mut methods = Vec::with_capacity(variants.len());
    for (&(method, mode), t) in variants.iter().zip(&tallies) {
        let settings = RasterSettings {
            selection: Selection {
                method,
                mode: mode.unwrap_or_default(),
                epsilon: config.epsilon,
            },
            tile_size: config.tile_size,
            early_stop: true,
        };
        let started = Instant::now();
        let mut checksum = 0.0;
        for _ in 0..config.timing_rounds {
            for &axis in &config.axes {
                for k in 0..n {
                    let slice = SliceSpec::for_volume(axis, k as f64 + 0.5, dims);
                    let bins = bin_gaussians(&cloud, &slice, &settings)?;
                    checksum += render_slice(&cloud, &slice, &bins)?.image[0];
                }
            }
        }
        std::hint::black_box(checksum);
        let px = pixels as f64;
        methods.push(MethodStats {
            label: mode.map_or("m1", mode_label).to_string(),
            method,
            mode,
            bbox_area: if t.area_pairs == 0 {
                0.0
            } else {
                t.area_sum / t.area_pairs as f64
            },
            fp_per_pixel: t.fp as f64 / px,
            fn_per_pixel: t.fn_ as f64 / px,
            cand_per_pixel: t.cand as f64 / px,
            outside_m1_per_pixel: t.outside_m1 as f64 / px,
            render_time_s: started.elapsed().as_secs_f64(),
        });
    }
    Ok(Repetition {
        index,
        seed,
        active_per_pixel: active_total as f64 / pixels as f64,
        methods,
    })
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Run every repetition (in parallel; each one single-threaded) and
/// aggregate.
pub fn run_selection_benchmark(config: &SimulationConfig) -> Result<SimulationReport> {
    config.validate()?;
    let repetitions: Vec<Repetition> = (0..config.repetitions)
        .into_par_iter()
        .map(|i| run_repetition(config, i))
        .collect::<Result<_>>()?;
    let reps = repetitions.len() as f64;
    let aggregate = (0..repetitions[0].methods.len())
        .map(|m| {
            let col = |f: fn(&MethodStats) -> f64| repetitions.iter().map(|r| f(&r.methods[m])).sum::<f64>() / reps;
            let first = &repetitions[0].methods[m];
            MethodStats {
                label: first.label.clone(),
                method: first.method,
                mode: first.mode,
                bbox_area: col(|s| s.bbox_area),
                fp_per_pixel: col(|s| s.fp_per_pixel),
                fn_per_pixel: col(|s| s.fn_per_pixel),
                cand_per_pixel: col(|s| s.cand_per_pixel),
                outside_m1_per_pixel: col(|s| s.outside_m1_per_pixel),
                render_time_s: median(repetitions.iter().map(|r| r.methods[m].render_time_s).collect()),
            }
        })
        .collect();
    let n = config.volume_size;
    Ok(SimulationReport {
        config: config.clone(),
        scale_distribution: format!(
            "per-axis standard deviation log-uniform in [{}, {}]",
            config.scale_range[0], config.scale_range[1]
        ),
        rotation_distribution: "uniform (normalized 4D standard normal quaternion)".into(),
        pixels_per_repetition: config.axes.len() * n * n * n,
        repetitions,
        aggregate,
    })
}
