//! Geometry stage: optimizes the static and dynamic Jacobian fields so the
//! Poisson-solved, skinned, rendered garment matches the observed frames.

use rand::rngs::StdRng;
use rand::SeedableRng;
use serde::Serialize;

use super::adam::{adam_step, AdamHyper, AdamState};
use super::config::RunConfig;
use super::noise::{noise_sigma, vertex_noise};
use super::{Dataset, PipelineError};
use crate::fields::{DynamicField, DynamicFieldCache, PoseEncoder, StaticField};
use crate::img::Image;
use crate::io::{Checkpoint, JsonlLog};
use crate::losses::{l_depth, l_diffuse, l_geo, l_mask, l_reg, GeoTerms};
use crate::mesh::Mesh;
use crate::poisson::PoissonSystem;
use crate::remesh::{
    remesh, select_edges, transfer_attributes, GradientAccumulator, MeshAttributes,
};
use crate::render::{render_backward, render_scene, soft_mask, soft_mask_backward};
use crate::skinning::{pose_transforms, skin, skin_backward, SkinWeights};
use crate::{Mat3, Mat4, Vec3};

/// Influences kept per vertex when skinning weights are rebuilt after a
/// remesh pass.
const MAX_INFLUENCES: usize = 4;

const STEP_MIX: u64 = 0x9E37_79B9_7F4A_7C15;
const PAIR_SALT: u64 = 0xD1CE_5EED;

/// One epoch of training metrics; also the JSONL log record.
#[derive(Debug, Clone, Serialize)]
pub struct GeometryRecord {
    pub stage: String,
    pub epoch: usize,
    /// Weighted total objective, averaged over the epoch's frames.
    pub loss: f64,
    pub diffuse: f64,
    pub mask: f64,
    pub reg: f64,
    pub depth: f64,
    /// Vertex noise scale at the epoch's first step.
    pub sigma: f64,
    pub vertices: usize,
    pub faces: usize,
    pub remeshed: bool,
    pub splits: usize,
    pub flips: usize,
}

#[derive(Debug, Clone)]
pub struct GeometryOutputs {
    /// Rest-pose base mesh after any remeshing.
    pub base_mesh: Mesh,
    pub weights: SkinWeights,
    pub static_field: StaticField,
    pub dynamic: DynamicField,
    pub pose_encoder: PoseEncoder,
    /// Final canonical mesh per frame, on the base topology.
    pub canonical: Vec<Mesh>,
    /// Final posed mesh per frame.
    pub posed: Vec<Mesh>,
    pub records: Vec<GeometryRecord>,
    pub checkpoint: Checkpoint,
}

/// Axis-aligned box mapped to the unit cube for field conditioning. Fixed at
/// stage start; queries outside clamp.
#[derive(Debug, Clone)]
struct NormCube {
    lo: Vec3,
    extent: Vec3,
}

impl NormCube {
    fn from_points<'a>(points: impl IntoIterator<Item = &'a Vec3>) -> Self {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for p in points {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        Self {
            lo,
            extent: hi - lo,
        }
    }

    fn normalize(&self, p: Vec3) -> Vec3 {
        Vec3::new(
            norm_axis(p.x, self.lo.x, self.extent.x),
            norm_axis(p.y, self.lo.y, self.extent.y),
            norm_axis(p.z, self.lo.z, self.extent.z),
        )
    }
}

fn norm_axis(v: f64, lo: f64, extent: f64) -> f64 {
    if extent <= 0.0 {
        return 0.5;
    }
    ((v - lo) / extent).clamp(0.0, 1.0)
}

/// Row-major 3x3 chunks; the layout matches `StaticField::params`.
fn mat3s_from_flat(flat: &[f64]) -> Vec<Mat3> {
    assert_eq!(flat.len() % 9, 0);
    flat.chunks_exact(9)
        .map(|c| Mat3::new(c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7], c[8]))
        .collect()
}

fn flat_from_mat3s(mats: &[Mat3]) -> Vec<f64> {
    let mut flat = Vec::with_capacity(mats.len() * 9);
    for m in mats {
        for r in 0..3 {
            for c in 0..3 {
                flat.push(m[(r, c)]);
            }
        }
    }
    flat
}

/// Full-field Jacobians for one frame: the dynamic offset is conditioned on
/// the reposed static canonical geometry and added to the static field.
#[allow(clippy::too_many_arguments)]
fn combined_jacobians(
    mesh: &Mesh,
    system: &PoissonSystem,
    static_field: &StaticField,
    dynamic: &DynamicField,
    weights: &SkinWeights,
    transforms: &[Mat4],
    code: &[f64],
    cube: &NormCube,
) -> Result<(Vec<Mat3>, Vec<DynamicFieldCache>), PipelineError> {
    let jac_static = static_field.jacobians();
    let canon_static = system.solve(&jac_static)?;
    let posed_static = skin(&canon_static, weights, transforms)?;
    let (centers, normals, _) = mesh.face_geometry(&posed_static)?;
    let mut jacobians = Vec::with_capacity(jac_static.len());
    let mut caches = Vec::with_capacity(jac_static.len());
    for f in 0..jac_static.len() {
        let (offset, cache) = dynamic.forward(cube.normalize(centers[f]), normals[f], code);
        jacobians.push(jac_static[f] + offset);
        caches.push(cache);
    }
    Ok((jacobians, caches))
}

#[allow(clippy::too_many_arguments)]
fn build_checkpoint(
    static_field: &StaticField,
    static_state: &AdamState,
    dynamic: &DynamicField,
    grid_state: &AdamState,
    mlp_state: &AdamState,
    encoder: &PoseEncoder,
    weights: &SkinWeights,
    num_bones: usize,
) -> Checkpoint {
    let faces = static_field.num_faces();
    let mut ckpt = Checkpoint::default();
    ckpt.add("static_jacobians", &[faces, 3, 3], static_field.params.clone());
    ckpt.add("static_m1", &[faces, 3, 3], static_state.m1.clone());
    ckpt.add("static_m2", &[faces, 3, 3], static_state.m2.clone());
    ckpt.add("static_step", &[1], vec![static_state.step as f64]);

    let gn = dynamic.grid.params.len();
    ckpt.add("grid_params", &[gn], dynamic.grid.params.clone());
    ckpt.add("grid_m1", &[gn], grid_state.m1.clone());
    ckpt.add("grid_m2", &[gn], grid_state.m2.clone());
    ckpt.add("grid_step", &[1], vec![grid_state.step as f64]);

    let mn = dynamic.mlp.params.len();
    ckpt.add("mlp_params", &[mn], dynamic.mlp.params.clone());
    ckpt.add("mlp_m1", &[mn], mlp_state.m1.clone());
    ckpt.add("mlp_m2", &[mn], mlp_state.m2.clone());
    ckpt.add("mlp_step", &[1], vec![mlp_state.step as f64]);

    let dim = encoder.mean.len();
    ckpt.add("pose_mean", &[dim], encoder.mean.clone());
    let mut basis = Vec::with_capacity(encoder.basis.len() * dim);
    for row in &encoder.basis {
        basis.extend_from_slice(row);
    }
    ckpt.add("pose_basis", &[encoder.basis.len(), dim], basis);
    ckpt.add("pose_width", &[1], vec![encoder.width as f64]);

    let mut dense = vec![0.0; weights.rows.len() * num_bones];
    for (v, row) in weights.rows.iter().enumerate() {
        for &(bone, w) in row {
            dense[v * num_bones + bone] = w;
        }
    }
    ckpt.add("skin_weights", &[weights.rows.len(), num_bones], dense);
    ckpt
}

pub fn run_geometry(
    dataset: &Dataset,
    config: &RunConfig,
    mut log: Option<&mut JsonlLog>,
) -> Result<GeometryOutputs, PipelineError> {
    config.validate()?;
    dataset.validate()?;
    let gcfg = &config.geometry;
    let loss_w = &config.loss;

    let dynamic_joins = gcfg.warmup_epochs < gcfg.epochs;
    if dynamic_joins && dataset.frames.len() < 2 {
        return Err(PipelineError::Dataset {
            what: "the dynamic field needs at least 2 frames to fit a pose encoder".into(),
        });
    }

    let pose_vectors: Vec<Vec<f64>> = dataset.frames.iter().map(|f| f.pose.flatten()).collect();
    let encoder = PoseEncoder::fit(&pose_vectors, gcfg.pose_code_width);
    let codes: Vec<Vec<f64>> = pose_vectors.iter().map(|p| encoder.encode(p)).collect();
    let transforms: Vec<Vec<Mat4>> = dataset
        .frames
        .iter()
        .map(|f| pose_transforms(&dataset.skeleton, &f.pose))
        .collect::<Result<_, _>>()?;

    // the dynamic field is created first so its initialization depends only
    // on the seed
    let mut rng = StdRng::seed_from_u64(config.seed);
    let mut dynamic = DynamicField::new(gcfg.grid, &gcfg.mlp_hidden, gcfg.pose_code_width, &mut rng);

    let mut mesh = dataset.template.clone();
    let mut weights = dataset.weights.clone();
    let mut system = PoissonSystem::new(&mesh)?;
    let mut static_field = StaticField::identity(mesh.num_faces());
    let mut static_state = AdamState::new(static_field.params.len());
    let mut grid_state = AdamState::new(dynamic.grid.params.len());
    let mut mlp_state = AdamState::new(dynamic.mlp.params.len());
    let mut accumulator = GradientAccumulator::new(mesh.num_faces());

    let hyper = AdamHyper {
        lr: gcfg.lr,
        beta1: gcfg.beta1,
        beta2: gcfg.beta2,
        epsilon: gcfg.epsilon,
    };

    let template_diag = dataset.template.bbox_diagonal();
    let sigma0 = gcfg.noise_sigma_rel * template_diag;
    let depth_margin = loss_w.depth_margin_rel * template_diag;

    // conditioning cube: union box over frames of the reposed static
    // canonical garment, fixed for the whole stage
    let cube = {
        let canon0 = system.solve(&static_field.jacobians())?;
        let mut points: Vec<Vec3> = Vec::new();
        for frame_transforms in &transforms {
            points.extend(skin(&canon0, &weights, frame_transforms)?);
        }
        NormCube::from_points(&points)
    };

    let remesh_enabled = gcfg.remesh_interval <= gcfg.epochs;
    let n_frames = dataset.frames.len();
    let mut records: Vec<GeometryRecord> = Vec::with_capacity(gcfg.epochs);
    let mut k: u64 = 0;
    let mut initial_loss: Option<f64> = None;
    let mut high_streak = 0usize;

    for epoch in 0..gcfg.epochs {
        let dynamic_on = epoch >= gcfg.warmup_epochs;
        let sigma_epoch = noise_sigma(k, sigma0, gcfg.noise_tau);
        let mut sum = GeoTerms {
            diffuse: 0.0,
            mask: 0.0,
            reg: 0.0,
            depth: 0.0,
        };
        let mut sum_loss = 0.0;

        for (t, frame) in dataset.frames.iter().enumerate() {
            let (jacobians, caches) = if dynamic_on {
                let (j, c) = combined_jacobians(
                    &mesh,
                    &system,
                    &static_field,
                    &dynamic,
                    &weights,
                    &transforms[t],
                    &codes[t],
                    &cube,
                )?;
                (j, Some(c))
            } else {
                (static_field.jacobians(), None)
            };

            let canonical = system.solve(&jacobians)?;
            let posed = skin(&canonical, &weights, &transforms[t])?;
            let noised = vertex_noise(&posed, k, sigma0, gcfg.noise_tau, config.seed);
            let render = render_scene(&frame.camera, &noised, &mesh.faces);
            let sm = soft_mask(&frame.camera, &mesh, &noised, &render.raster, gcfg.mask_sigma);

            let diffuse_l = l_diffuse(&render.diffuse, &frame.diffuse, &frame.mask, loss_w)?;
            let mask_l = l_mask(&sm.alpha, &frame.mask)?;
            let reg_l = l_reg(&jacobians);
            let covered: Vec<usize> = (0..frame.depth.data.len())
                .filter(|&i| render.raster.covered(i) && frame.depth.data[i] > 0.0)
                .collect();
            let mut pair_rng =
                StdRng::seed_from_u64(config.seed ^ k.wrapping_mul(STEP_MIX) ^ PAIR_SALT);
            let depth_l = l_depth(
                &render.depth,
                &frame.depth,
                &covered,
                loss_w.depth_pairs,
                depth_margin,
                &mut pair_rng,
            )?;

            let geo = l_geo(
                GeoTerms {
                    diffuse: diffuse_l.value,
                    mask: mask_l.value,
                    reg: reg_l.value,
                    depth: depth_l.value,
                },
                loss_w,
            );
            sum.diffuse += geo.raw.diffuse;
            sum.mask += geo.raw.mask;
            sum.reg += geo.raw.reg;
            sum.depth += geo.raw.depth;
            sum_loss += geo.value;

            let mut d_diffuse = diffuse_l.grad;
            for v in &mut d_diffuse.data {
                *v *= loss_w.lambda_diffuse;
            }
            let mut d_depth = depth_l.grad;
            for v in &mut d_depth.data {
                *v *= loss_w.lambda_depth;
            }
            let mut d_alpha = mask_l.grad;
            for v in &mut d_alpha.data {
                *v *= loss_w.lambda_mask;
            }

            // injected noise is constant for the step, so gradients pass to
            // the posed vertices unchanged
            let mut gverts = render_backward(
                &frame.camera,
                &noised,
                &mesh.faces,
                &render,
                Some(&d_diffuse),
                Some(&d_depth),
            );
            let gmask = soft_mask_backward(&frame.camera, &noised, &render.raster, &sm, &d_alpha);
            for (g, extra) in gverts.iter_mut().zip(&gmask) {
                *g += *extra;
            }

            let gcanon = skin_backward(&gverts, &weights, &transforms[t])?;
            let mut gjac = system.solve_adjoint(&gcanon)?;
            for (g, r) in gjac.iter_mut().zip(&reg_l.grad) {
                *g += loss_w.lambda_reg * r;
            }

            if remesh_enabled {
                let mut driver = Image::zeros(render.diffuse.width, render.diffuse.height, 2);
                for i in 0..driver.width * driver.height {
                    driver.data[2 * i] = d_diffuse.data[i];
                    driver.data[2 * i + 1] = d_depth.data[i];
                }
                accumulator.accumulate(&render.raster, &driver)?;
            }

            let mut gstatic = vec![0.0; static_field.params.len()];
            for (f, g) in gjac.iter().enumerate() {
                StaticField::scatter_grad(f, g, &mut gstatic);
            }
            if let Some(caches) = &caches {
                let mut ggrid = vec![0.0; dynamic.grid.params.len()];
                let mut gmlp = vec![0.0; dynamic.mlp.params.len()];
                for (cache, g) in caches.iter().zip(&gjac) {
                    dynamic.backward(cache, g, &mut ggrid, &mut gmlp);
                }
                adam_step(
                    "dynamic_grid",
                    &mut dynamic.grid.params,
                    &ggrid,
                    &mut grid_state,
                    &hyper,
                )?;
                adam_step(
                    "dynamic_mlp",
                    &mut dynamic.mlp.params,
                    &gmlp,
                    &mut mlp_state,
                    &hyper,
                )?;
            }
            adam_step(
                "static_field",
                &mut static_field.params,
                &gstatic,
                &mut static_state,
                &hyper,
            )?;
            k += 1;
        }

        let n = n_frames as f64;
        let mean_loss = sum_loss / n;
        let initial = *initial_loss.get_or_insert(mean_loss);
        if mean_loss > 10.0 * initial {
            high_streak += 1;
            if high_streak >= 3 {
                return Err(PipelineError::Diverged {
                    epoch,
                    loss: mean_loss,
                    initial,
                    diffuse: sum.diffuse / n,
                    mask: sum.mask / n,
                    reg: sum.reg / n,
                    depth: sum.depth / n,
                });
            }
        } else {
            high_streak = 0;
        }

        let mut remeshed = false;
        let (mut splits, mut flips) = (0usize, 0usize);
        if remesh_enabled && (epoch + 1) % gcfg.remesh_interval == 0 && epoch + 1 < gcfg.epochs {
            let selection = select_edges(&mesh, &accumulator, &config.remesh, epoch);
            let outcome = remesh(&mesh, &selection.edges, &config.remesh);
            let attrs = MeshAttributes {
                jacobians: static_field.jacobians(),
                moment1: mat3s_from_flat(&static_state.m1),
                moment2: mat3s_from_flat(&static_state.m2),
                weights: weights.clone(),
            };
            let new_attrs = transfer_attributes(
                &mesh,
                &outcome.mesh,
                &outcome.provenance,
                &attrs,
                &config.remesh,
                MAX_INFLUENCES,
            )?;
            mesh = outcome.mesh;
            weights = new_attrs.weights;
            static_field = StaticField::from_jacobians(&new_attrs.jacobians);
            // optimizer moments follow their parameters; the step count is
            // part of the trajectory and survives
            static_state.m1 = flat_from_mat3s(&new_attrs.moment1);
            static_state.m2 = flat_from_mat3s(&new_attrs.moment2);
            system = PoissonSystem::new(&mesh)?;
            accumulator = GradientAccumulator::new(mesh.num_faces());
            remeshed = true;
            splits = outcome.splits;
            flips = outcome.flips;
        }

        let record = GeometryRecord {
            stage: "geometry".into(),
            epoch,
            loss: mean_loss,
            diffuse: sum.diffuse / n,
            mask: sum.mask / n,
            reg: sum.reg / n,
            depth: sum.depth / n,
            sigma: sigma_epoch,
            vertices: mesh.num_vertices(),
            faces: mesh.num_faces(),
            remeshed,
            splits,
            flips,
        };
        if let Some(log) = log.as_deref_mut() {
            log.append(&record)?;
        }
        records.push(record);
    }

    let mut canonical = Vec::with_capacity(n_frames);
    let mut posed = Vec::with_capacity(n_frames);
    for t in 0..n_frames {
        let jacobians = if dynamic_joins {
            combined_jacobians(
                &mesh,
                &system,
                &static_field,
                &dynamic,
                &weights,
                &transforms[t],
                &codes[t],
                &cube,
            )?
            .0
        } else {
            static_field.jacobians()
        };
        let canon = system.solve(&jacobians)?;
        let pos = skin(&canon, &weights, &transforms[t])?;
        canonical.push(Mesh::new(canon, mesh.faces.clone()));
        posed.push(Mesh::new(pos, mesh.faces.clone()));
    }

    let checkpoint = build_checkpoint(
        &static_field,
        &static_state,
        &dynamic,
        &grid_state,
        &mlp_state,
        &encoder,
        &weights,
        dataset.skeleton.num_bones(),
    );

    Ok(GeometryOutputs {
        base_mesh: mesh,
        weights,
        static_field,
        dynamic,
        pose_encoder: encoder,
        canonical,
        posed,
        records,
        checkpoint,
    })
}
