//! Appearance stage: recovers a static texture atlas and a pose-conditioned
//! dynamic texture over frozen geometry.

use rand::rngs::StdRng;
use rand::SeedableRng;
use serde::Serialize;

use super::adam::{adam_step, AdamHyper, AdamState};
use super::config::RunConfig;
use super::geometry::GeometryOutputs;
use super::{Dataset, PipelineError};
use crate::fields::PoseEncoder;
use crate::img::Image;
use crate::io::JsonlLog;
use crate::losses::l_tex;
use crate::mesh::Mesh;
use crate::render::{rasterize, Raster};
use crate::texture::{
    anneal_pose_noise, combine_texture, eval_dynamic_texture, eval_dynamic_texture_backward,
    render_textured, render_textured_backward, AnnealSchedule, DynamicTextureNet, TextureAtlas,
};

const STEP_MIX: u64 = 0x9E37_79B9_7F4A_7C15;
const CODE_SALT: u64 = 0xC0DE_0123;
const NET_SALT: u64 = 0x7E87_0A99;

/// Frozen geometry the appearance stage paints: the rest-pose base mesh and
/// one posed mesh per frame, all sharing the base topology.
#[derive(Debug, Clone)]
pub struct AppearanceInputs {
    pub base_mesh: Mesh,
    pub posed: Vec<Mesh>,
}

impl From<&GeometryOutputs> for AppearanceInputs {
    fn from(geometry: &GeometryOutputs) -> Self {
        Self {
            base_mesh: geometry.base_mesh.clone(),
            posed: geometry.posed.clone(),
        }
    }
}

/// One epoch of training metrics; also the JSONL log record.
#[derive(Debug, Clone, Serialize)]
pub struct AppearanceRecord {
    pub stage: String,
    pub epoch: usize,
    pub loss: f64,
    pub l1: f64,
    pub ssim: f64,
    /// Pose-code noise level at this epoch.
    pub sigma: f64,
}

#[derive(Debug, Clone)]
pub struct AppearanceOutputs {
    /// Atlas whose `texture` holds the final static map.
    pub atlas: TextureAtlas,
    pub dynamic: DynamicTextureNet,
    pub pose_encoder: PoseEncoder,
    /// Combined static-plus-dynamic map per frame, noise free.
    pub frame_maps: Vec<Image>,
    /// Final textured render per frame.
    pub renders: Vec<Image>,
    pub records: Vec<AppearanceRecord>,
}

pub fn run_appearance(
    dataset: &Dataset,
    inputs: &AppearanceInputs,
    config: &RunConfig,
    mut log: Option<&mut JsonlLog>,
) -> Result<AppearanceOutputs, PipelineError> {
    config.validate()?;
    dataset.validate()?;
    let acfg = &config.appearance;
    let loss_w = &config.loss;

    if inputs.posed.len() != dataset.frames.len() {
        return Err(PipelineError::Dataset {
            what: format!(
                "got {} posed meshes for {} frames",
                inputs.posed.len(),
                dataset.frames.len()
            ),
        });
    }
    for (t, posed) in inputs.posed.iter().enumerate() {
        if posed.faces != inputs.base_mesh.faces {
            return Err(PipelineError::Dataset {
                what: format!("posed mesh {t} does not share the base topology"),
            });
        }
    }

    let dynamic_joins = acfg.warmup_epochs < acfg.epochs;
    if dynamic_joins && dataset.frames.len() < 2 {
        return Err(PipelineError::Dataset {
            what: "the dynamic texture needs at least 2 frames to fit a pose encoder".into(),
        });
    }

    let pose_vectors: Vec<Vec<f64>> = dataset.frames.iter().map(|f| f.pose.flatten()).collect();
    let encoder = PoseEncoder::fit(&pose_vectors, acfg.pose_code_width);
    let codes: Vec<Vec<f64>> = pose_vectors.iter().map(|p| encoder.encode(p)).collect();

    let mut rng = StdRng::seed_from_u64(config.seed ^ NET_SALT);
    let mut net = DynamicTextureNet::new(acfg.grid, &acfg.mlp_hidden, acfg.pose_code_width, &mut rng);
    let mut atlas = TextureAtlas::generate(&inputs.base_mesh, acfg.texture_resolution)?;

    // geometry is frozen, so each frame rasterizes exactly once
    let rasters: Vec<Raster> = dataset
        .frames
        .iter()
        .zip(&inputs.posed)
        .map(|(frame, posed)| rasterize(&frame.camera, &posed.vertices, &posed.faces))
        .collect();

    let mut static_state = AdamState::new(atlas.texture.data.len());
    let mut grid_state = AdamState::new(net.grid.params.len());
    let mut mlp_state = AdamState::new(net.mlp.params.len());
    let hyper = AdamHyper {
        lr: acfg.lr,
        beta1: acfg.beta1,
        beta2: acfg.beta2,
        epsilon: acfg.epsilon,
    };
    let schedule = AnnealSchedule {
        sigma_start: acfg.anneal_sigma,
        end_epoch: acfg.anneal_epochs,
    };

    let n_frames = dataset.frames.len();
    let mut records: Vec<AppearanceRecord> = Vec::with_capacity(acfg.epochs);
    let mut k: u64 = 0;

    for epoch in 0..acfg.epochs {
        let dynamic_on = epoch >= acfg.warmup_epochs;
        let sigma = schedule.sigma(epoch);
        let (mut sum_loss, mut sum_l1, mut sum_ssim) = (0.0, 0.0, 0.0);

        for (t, frame) in dataset.frames.iter().enumerate() {
            let code = if dynamic_on {
                let mut noise_rng =
                    StdRng::seed_from_u64(config.seed ^ k.wrapping_mul(STEP_MIX) ^ CODE_SALT);
                Some(anneal_pose_noise(&codes[t], epoch, &schedule, &mut noise_rng))
            } else {
                None
            };
            let map = match &code {
                Some(code) => {
                    combine_texture(&atlas.texture, &eval_dynamic_texture(&net, &atlas, code))
                }
                None => atlas.texture.clone(),
            };
            let pred = render_textured(&rasters[t], &atlas.uvs, &map);
            let tex_l = l_tex(&pred, &frame.color, &frame.mask, loss_w)?;
            sum_loss += tex_l.value;
            sum_l1 += tex_l.l1_term;
            sum_ssim += tex_l.ssim_term;

            let mut grad_map = Image::zeros(map.width, map.height, 3);
            render_textured_backward(&rasters[t], &atlas.uvs, &map, &tex_l.grad, &mut grad_map);

            // the combined map is a sum, so the same gradient reaches the
            // static texels and the dynamic evaluation
            if let Some(code) = &code {
                let mut ggrid = vec![0.0; net.grid.params.len()];
                let mut gmlp = vec![0.0; net.mlp.params.len()];
                eval_dynamic_texture_backward(&net, &atlas, code, &grad_map, &mut ggrid, &mut gmlp);
                adam_step("texture_grid", &mut net.grid.params, &ggrid, &mut grid_state, &hyper)?;
                adam_step("texture_mlp", &mut net.mlp.params, &gmlp, &mut mlp_state, &hyper)?;
            }
            adam_step(
                "static_texture",
                &mut atlas.texture.data,
                &grad_map.data,
                &mut static_state,
                &hyper,
            )?;
            k += 1;
        }

        let n = n_frames as f64;
        let record = AppearanceRecord {
            stage: "appearance".into(),
            epoch,
            loss: sum_loss / n,
            l1: sum_l1 / n,
            ssim: sum_ssim / n,
            sigma,
        };
        if let Some(log) = log.as_deref_mut() {
            log.append(&record)?;
        }
        records.push(record);
    }

    let mut frame_maps = Vec::with_capacity(n_frames);
    let mut renders = Vec::with_capacity(n_frames);
    for t in 0..n_frames {
        let map = if dynamic_joins {
            combine_texture(&atlas.texture, &eval_dynamic_texture(&net, &atlas, &codes[t]))
        } else {
            atlas.texture.clone()
        };
        renders.push(render_textured(&rasters[t], &atlas.uvs, &map));
        frame_maps.push(map);
    }

    Ok(AppearanceOutputs {
        atlas,
        dynamic: net,
        pose_encoder: encoder,
        frame_maps,
        renders,
        records,
    })
}
