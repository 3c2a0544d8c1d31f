//! Losses, schedules, optimizer and the fitting loops.

pub mod adam;
pub mod data;
pub mod fit_toy;
pub mod fit_vol;
pub mod loss;
pub mod model;

use serde::{Deserialize, Serialize};

pub use adam::Adam;
pub use data::{Dataset, FlowPair, MetricsRow};
pub use fit_toy::fit_toy2d;
pub use fit_vol::fit_vol3d;
pub use loss::{
    consistency_mask, flow_loss, flow_loss_per_sample, gauge_loss2, gauge_loss3,
    photometric_loss, ConsistencyMask,
};
pub use model::{ToyModel, VolModel};

use crate::fields::radiance::MlpRadianceSpec;
use crate::fields::warp::MlpWarpSpec;
use crate::renderer::flow::FlowVariant;

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum FitMode {
    Toy2d,
    Volumetric3d,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum FlowVariantConfig {
    Expected,
    Surface,
    PerSample,
}

impl From<FlowVariantConfig> for FlowVariant {
    fn from(v: FlowVariantConfig) -> FlowVariant {
        match v {
            FlowVariantConfig::Expected => FlowVariant::Expected,
            FlowVariantConfig::Surface => FlowVariant::SurfacePoint,
            FlowVariantConfig::PerSample => FlowVariant::PerSample,
        }
    }
}

/// Every knob of a fitting run. Serialized alongside each run directory.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub mode: FitMode,
    /// Initial and final optical-flow loss weights (annealed log-linearly).
    pub beta_init: f64,
    pub beta_final: f64,
    pub gauge_weight: f64,
    pub lr_init: f64,
    pub lr_decay_factor: f64,
    pub lr_decay_epochs: usize,
    pub epochs: usize,
    pub iters_per_epoch: usize,
    pub rays_per_batch: usize,
    pub flow_rays_per_batch: usize,
    pub gauge_points_per_batch: usize,
    pub frames_per_batch: usize,
    pub samples_per_ray: usize,
    /// Frame offsets supervised by flow (t' = t + dt for dt in this set).
    pub delta_t_frames: Vec<i64>,
    /// Canonical frame; `None` picks the middle frame.
    pub canonical_frame_index: Option<usize>,
    pub seed: u64,
    pub use_flow: bool,
    pub flow_variant: FlowVariantConfig,
    pub rk4_steps: u32,
    pub jitter_sigma: f64,
    pub eps_det: f64,
    pub tau_fb: f64,
    pub valid_weight_threshold: f64,
    pub warp: MlpWarpSpec,
    pub radiance: MlpRadianceSpec,
    /// Initialize the toy canonical image from the canonical frame.
    pub grid_init_from_canonical: bool,
    /// Emit a checkpoint every this many epochs (and at the end).
    pub checkpoint_every: usize,
    /// Pixels sampled for the per-epoch flow-EPE metric.
    pub eval_flow_samples: usize,
    /// Frames sampled for the per-epoch PSNR metric (all frames at the end).
    pub eval_frames: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: FitMode::Toy2d,
            beta_init: 0.04,
            beta_final: 1e-4,
            gauge_weight: 1.0,
            lr_init: 1e-3,
            lr_decay_factor: 0.1,
            lr_decay_epochs: 50,
            epochs: 20,
            iters_per_epoch: 250,
            rays_per_batch: 1024,
            flow_rays_per_batch: 512,
            gauge_points_per_batch: 128,
            frames_per_batch: 8,
            samples_per_ray: 64,
            delta_t_frames: vec![-1, 1],
            canonical_frame_index: None,
            seed: 0,
            use_flow: true,
            flow_variant: FlowVariantConfig::Expected,
            rk4_steps: 2,
            jitter_sigma: 0.1,
            eps_det: 1e-6,
            tau_fb: 1.0,
            valid_weight_threshold: 0.5,
            warp: MlpWarpSpec::desk(2),
            radiance: MlpRadianceSpec::desk(),
            grid_init_from_canonical: true,
            checkpoint_every: 10,
            eval_flow_samples: 512,
            eval_frames: 3,
        }
    }
}

impl TrainConfig {
    pub fn toy_desk() -> TrainConfig {
        TrainConfig::default()
    }

    pub fn vol_desk() -> TrainConfig {
        TrainConfig {
            mode: FitMode::Volumetric3d,
            warp: MlpWarpSpec::desk(3),
            rays_per_batch: 768,
            flow_rays_per_batch: 64,
            gauge_points_per_batch: 256,
            samples_per_ray: 48,
            epochs: 16,
            iters_per_epoch: 125,
            ..TrainConfig::default()
        }
    }

    pub fn total_iters(&self) -> usize {
        self.epochs * self.iters_per_epoch
    }
}

/// Log-linear interpolation between the endpoint weights.
pub fn beta_schedule(iter: usize, total: usize, beta_init: f64, beta_final: f64) -> f64 {
    if total == 0 {
        return beta_final;
    }
    let f = (iter as f64 / total as f64).clamp(0.0, 1.0);
    beta_init * (beta_final / beta_init).powf(f)
}

/// Step decay: multiply by `decay_factor` every `decay_epochs`.
pub fn lr_schedule(epoch: usize, lr_init: f64, decay_factor: f64, decay_epochs: usize) -> f64 {
    lr_init * decay_factor.powi((epoch / decay_epochs.max(1)) as i32)
}

/// One metrics row per epoch, as written to `metrics.csv`.
#[derive(Clone, Copy, Debug)]
pub struct EpochRow {
    pub epoch: usize,
    pub psnr: f64,
    pub flow_epe: f64,
    pub gauge: f64,
    pub beta: f64,
    pub lr: f64,
}

pub fn metrics_csv(rows: &[EpochRow]) -> String {
    let mut s = String::from("epoch,psnr,flow_epe,gauge,beta,lr\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.epoch, r.psnr, r.flow_epe, r.gauge, r.beta, r.lr
        ));
    }
    s
}

#[derive(Debug, thiserror::Error)]
pub enum FitError {
    #[error("non-finite loss at iteration {iter}: {detail}")]
    NonFiniteLoss { iter: usize, detail: String },
    #[error("dataset has no flow supervision for the configured offsets")]
    NoFlowPairs,
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Result of a fitting run: per-epoch metrics plus the trained model's
/// final evaluation.
pub struct TrainReport {
    pub rows: Vec<EpochRow>,
    pub final_psnr: f64,
    pub final_flow_epe: f64,
    pub final_gauge: f64,
}

impl TrainReport {
    pub fn csv(&self) -> String {
        metrics_csv(&self.rows)
    }
}
