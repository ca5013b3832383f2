//! Run configuration: every knob of both stages, loadable from TOML.
//! Unknown keys are rejected; missing keys take the defaults below.

use super::synth::SynthConfig;
use super::PipelineError;
use crate::fields::HashGridSpec;
use crate::losses::LossWeights;
use crate::remesh::RemeshConfig;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Geometry stage: schedule, optimizer, noise, and the dynamic field's
/// encoder and head sizes.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometryConfig {
    pub epochs: usize,
    /// Epochs optimizing only the static field before the dynamic field
    /// joins. Equal to `epochs` means the dynamic field never activates.
    pub warmup_epochs: usize,
    /// Remesh after every this many epochs; larger than `epochs` disables
    /// remeshing.
    pub remesh_interval: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Vertex-noise start, relative to the template bbox diagonal.
    pub noise_sigma_rel: f64,
    /// Noise decay constant in optimization steps.
    pub noise_tau: f64,
    /// Soft-silhouette band width in pixels.
    pub mask_sigma: f64,
    pub grid: HashGridSpec,
    pub mlp_hidden: Vec<usize>,
    /// Retained PCA components for the pose code.
    pub pose_code_width: usize,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            warmup_epochs: 60,
            remesh_interval: 50,
            lr: 2e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            noise_sigma_rel: 0.01,
            noise_tau: 50.0,
            mask_sigma: 1.5,
            grid: HashGridSpec::default(),
            mlp_hidden: vec![32, 32],
            pose_code_width: 8,
        }
    }
}

/// Appearance stage: schedule, optimizer, pose-noise annealing, atlas
/// resolution, and the dynamic texture network sizes.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppearanceConfig {
    pub epochs: usize,
    /// Epochs optimizing only the static map before the dynamic network
    /// joins.
    pub warmup_epochs: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Pose-code noise at epoch 0, decaying linearly to zero.
    pub anneal_sigma: f64,
    /// Epoch at which the pose-code noise reaches zero.
    pub anneal_epochs: usize,
    pub texture_resolution: usize,
    pub grid: HashGridSpec,
    pub mlp_hidden: Vec<usize>,
    /// Retained PCA components for the pose code.
    pub pose_code_width: usize,
}

impl Default for AppearanceConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            warmup_epochs: 40,
            lr: 5e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            anneal_sigma: 0.05,
            anneal_epochs: 100,
            texture_resolution: 256,
            grid: HashGridSpec {
                levels: 6,
                features: 2,
                table_log2: 12,
                base_resolution: 8,
                growth: 1.6,
            },
            mlp_hidden: vec![24],
            pose_code_width: 8,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub loss: LossWeights,
    pub geometry: GeometryConfig,
    pub appearance: AppearanceConfig,
    pub remesh: RemeshConfig,
    pub synth: SynthConfig,
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let cfg = |what: String| PipelineError::Config { what };
        self.loss
            .validate()
            .map_err(|e| cfg(format!("loss: {e}")))?;
        self.remesh
            .validate()
            .map_err(|e| cfg(format!("remesh: {e}")))?;
        self.synth.validate()?;
        if self.geometry.warmup_epochs > self.geometry.epochs {
            return Err(cfg(format!(
                "geometry warm-up {} exceeds total epochs {}",
                self.geometry.warmup_epochs, self.geometry.epochs
            )));
        }
        if self.appearance.warmup_epochs > self.appearance.epochs {
            return Err(cfg(format!(
                "appearance warm-up {} exceeds total epochs {}",
                self.appearance.warmup_epochs, self.appearance.epochs
            )));
        }
        if self.geometry.remesh_interval == 0 {
            return Err(cfg("remesh interval must be at least 1".into()));
        }
        if self.geometry.pose_code_width == 0 || self.appearance.pose_code_width == 0 {
            return Err(cfg("pose code width must be at least 1".into()));
        }
        for (name, lr) in [
            ("geometry", self.geometry.lr),
            ("appearance", self.appearance.lr),
        ] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(cfg(format!("{name} lr must be positive, got {lr}")));
            }
        }
        for (name, b1, b2, eps) in [
            (
                "geometry",
                self.geometry.beta1,
                self.geometry.beta2,
                self.geometry.epsilon,
            ),
            (
                "appearance",
                self.appearance.beta1,
                self.appearance.beta2,
                self.appearance.epsilon,
            ),
        ] {
            if !(0.0..1.0).contains(&b1) || !(0.0..1.0).contains(&b2) {
                return Err(cfg(format!("{name} betas must lie in [0, 1)")));
            }
            if !(eps > 0.0) {
                return Err(cfg(format!("{name} epsilon must be positive")));
            }
        }
        if !(self.geometry.noise_sigma_rel >= 0.0) || !(self.geometry.noise_tau > 0.0) {
            return Err(cfg("noise schedule needs sigma >= 0 and tau > 0".into()));
        }
        if !(self.geometry.mask_sigma > 0.0) {
            return Err(cfg("mask sigma must be positive".into()));
        }
        if !(self.appearance.anneal_sigma >= 0.0) {
            return Err(cfg("anneal sigma must be non-negative".into()));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self, PipelineError> {
        let config: RunConfig = toml::from_str(text).map_err(|e| PipelineError::Config {
            what: e.to_string(),
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(crate::io::IoError::Io)?;
        Self::from_toml_str(&text)
    }
}
