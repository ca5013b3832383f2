//! Orchestration: dataset layout, the two-stage optimization loop, the
//! optimizer, schedules, synthetic data, and metrics.

pub mod adam;
pub mod appearance;
pub mod config;
pub mod geometry;
pub mod metrics;
pub mod noise;
pub mod synth;

pub use adam::{adam_step, AdamHyper, AdamState};
pub use appearance::{run_appearance, AppearanceInputs, AppearanceOutputs, AppearanceRecord};
pub use config::{AppearanceConfig, GeometryConfig, RunConfig};
pub use geometry::{run_geometry, GeometryOutputs, GeometryRecord};
pub use metrics::{
    chamfer_points, chamfer_restricted, masked_psnr, masked_ssim, mesh_metrics, sample_surface,
    MeshMetrics, SurfaceSamples,
};
pub use noise::{noise_sigma, vertex_noise};
pub use synth::{generate_synthetic, SynthConfig, SynthOutput};

use crate::img::Image;
use crate::io::{self, IoError};
use crate::losses::LossError;
use crate::mesh::{Mesh, MeshError};
use crate::poisson::PoissonError;
use crate::remesh::RemeshError;
use crate::render::Camera;
use crate::skinning::{Pose, Skeleton, SkinError, SkinWeights};
use crate::texture::TextureError;
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("config: {what}")]
    Config { what: String },
    #[error("dataset: {what}")]
    Dataset { what: String },
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Poisson(#[from] PoissonError),
    #[error(transparent)]
    Skin(#[from] SkinError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Remesh(#[from] RemeshError),
    #[error(transparent)]
    Texture(#[from] TextureError),
    #[error("non-finite gradient in parameter group {group}")]
    NonFiniteGrad { group: String },
    #[error(
        "diverged at epoch {epoch}: loss {loss:.6e} above 10x the initial {initial:.6e} \
         for 3 consecutive epochs (diffuse={diffuse:.3e} mask={mask:.3e} reg={reg:.3e} \
         depth={depth:.3e})"
    )]
    Diverged {
        epoch: usize,
        loss: f64,
        initial: f64,
        diffuse: f64,
        mask: f64,
        reg: f64,
        depth: f64,
    },
    #[error("metrics: {what}")]
    Metric { what: String },
}

/// One observed frame: the supervision images, the camera, and the pose.
#[derive(Debug, Clone)]
pub struct FrameObservation {
    pub index: usize,
    /// Shading supervision, single channel.
    pub diffuse: Image,
    /// Camera-space depth, zero where missing.
    pub depth: Image,
    /// Garment coverage in [0, 1], single channel.
    pub mask: Image,
    /// Appearance supervision, three channels.
    pub color: Image,
    pub camera: Camera,
    pub pose: Pose,
}

impl FrameObservation {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let (w, h) = (self.camera.width, self.camera.height);
        for (name, img, ch) in [
            ("diffuse", &self.diffuse, 1),
            ("depth", &self.depth, 1),
            ("mask", &self.mask, 1),
            ("color", &self.color, 3),
        ] {
            if img.width != w || img.height != h || img.channels != ch {
                return Err(PipelineError::Dataset {
                    what: format!(
                        "frame {}: {name} image is {}x{}x{}, camera expects {w}x{h}x{ch}",
                        self.index, img.width, img.height, img.channels
                    ),
                });
            }
        }
        if self.mask.data.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(PipelineError::Dataset {
                what: format!("frame {}: mask values outside [0, 1]", self.index),
            });
        }
        Ok(())
    }
}

/// A full observation sequence plus the template and its rig.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub template: Mesh,
    pub skeleton: Skeleton,
    pub weights: SkinWeights,
    pub camera: Camera,
    pub frames: Vec<FrameObservation>,
}

impl Dataset {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let report = self.template.validate();
        if !report.is_valid() {
            return Err(PipelineError::Dataset {
                what: format!("template mesh invalid: {:?}", report.violations),
            });
        }
        if self.weights.rows.len() != self.template.num_vertices() {
            return Err(PipelineError::Dataset {
                what: format!(
                    "rig has {} weight rows for {} template vertices",
                    self.weights.rows.len(),
                    self.template.num_vertices()
                ),
            });
        }
        let bones = self.skeleton.num_bones();
        for frame in &self.frames {
            frame.validate()?;
            if frame.pose.rotations.len() != bones {
                return Err(PipelineError::Dataset {
                    what: format!(
                        "frame {}: pose has {} rotations for {bones} bones",
                        frame.index,
                        frame.pose.rotations.len()
                    ),
                });
            }
        }
        if self.frames.is_empty() {
            return Err(PipelineError::Dataset {
                what: "no frames".into(),
            });
        }
        Ok(())
    }
}

fn frame_path(dir: &Path, index: usize, kind: &str, ext: &str) -> std::path::PathBuf {
    dir.join("frames").join(format!("{index:04}.{kind}.{ext}"))
}

/// Reads the on-disk layout: `frames/NNNN.{diffuse,depth,mask,color}`,
/// `camera.txt`, `rig.txt`, `poses.txt`, `template.obj`.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Dataset, PipelineError> {
    let dir = dir.as_ref();
    let camera = io::read_camera(dir.join("camera.txt"))?;
    let (skeleton, weights) = io::read_rig(dir.join("rig.txt"))?;
    let weights = weights.ok_or_else(|| PipelineError::Dataset {
        what: "rig.txt carries no skin weights".into(),
    })?;
    let poses = io::read_poses(dir.join("poses.txt"))?;
    let (template, _) = io::read_obj(dir.join("template.obj"))?;

    let mut frames = Vec::with_capacity(poses.len());
    for (t, pose) in poses.into_iter().enumerate() {
        frames.push(FrameObservation {
            index: t,
            diffuse: io::read_png(frame_path(dir, t, "diffuse", "png"))?,
            depth: io::read_pfm(frame_path(dir, t, "depth", "pfm"))?,
            mask: io::read_png(frame_path(dir, t, "mask", "png"))?,
            color: io::read_png(frame_path(dir, t, "color", "png"))?,
            camera: camera.clone(),
            pose,
        });
    }
    let dataset = Dataset {
        template,
        skeleton,
        weights,
        camera,
        frames,
    };
    dataset.validate()?;
    Ok(dataset)
}

/// Writes a dataset in the layout `load_dataset` reads.
pub fn save_dataset(dir: impl AsRef<Path>, dataset: &Dataset) -> Result<(), PipelineError> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir.join("frames")).map_err(IoError::Io)?;
    io::write_camera(dir.join("camera.txt"), &dataset.camera)?;
    io::write_rig(dir.join("rig.txt"), &dataset.skeleton, Some(&dataset.weights))?;
    let poses: Vec<Pose> = dataset.frames.iter().map(|f| f.pose.clone()).collect();
    io::write_poses(dir.join("poses.txt"), &poses)?;
    io::write_obj(dir.join("template.obj"), &dataset.template, None)?;
    for frame in &dataset.frames {
        let t = frame.index;
        io::write_png(frame_path(dir, t, "diffuse", "png"), &frame.diffuse)?;
        io::write_pfm(frame_path(dir, t, "depth", "pfm"), &frame.depth)?;
        io::write_png(frame_path(dir, t, "mask", "png"), &frame.mask)?;
        io::write_png(frame_path(dir, t, "color", "png"), &frame.color)?;
    }
    Ok(())
}
