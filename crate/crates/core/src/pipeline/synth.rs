//! Procedural ground truth: an open flared tube skinned to a two-bone rig,
//! deformed per frame by an analytic wrinkle band plus a pose-driven billow,
//! rendered to the full observation set. Every stored image is quantized
//! exactly as the on-disk format stores it, so a saved dataset loads back
//! bitwise.

use super::{Dataset, FrameObservation, PipelineError};
use crate::img::Image;
use crate::mesh::Mesh;
use crate::render::{render_scene, Camera};
use crate::skinning::{pose_transforms, skin, Pose, Skeleton, SkinWeights};
use crate::{Mat4, Vec3};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub frames: usize,
    /// Vertex rings of the template from top to bottom.
    pub rings: usize,
    /// Vertices around each ring.
    pub segments: usize,
    /// Tessellation multiplier for the ground-truth surface relative to the
    /// template; 1 means both share a grid.
    pub subdivision: usize,
    pub image_size: usize,
    pub focal: f64,
    pub camera_distance: f64,
    pub radius: f64,
    /// Radius gain at the hem: r(s) = radius * (1 + flare * s).
    pub flare: f64,
    pub y_top: f64,
    pub y_bottom: f64,
    pub wrinkle_amp: f64,
    /// Angular wrinkle frequency, whole waves around the tube.
    pub wrinkle_freq: f64,
    /// Normalized band [top, bottom] of the tube carrying the wrinkles.
    pub band: [f64; 2],
    /// Radial billow as a fraction of `radius`, scaled per frame by the
    /// squared normalized bend angle; vanishes in the rest pose.
    pub billow: f64,
    pub spin_max: f64,
    pub bend_max: f64,
    pub sway: f64,
    /// Checker tiles around and along the tube.
    pub checker: [usize; 2],
    pub colors: [[f64; 3]; 2],
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            frames: 20,
            rings: 16,
            segments: 24,
            subdivision: 1,
            image_size: 256,
            focal: 300.0,
            camera_distance: 1.1,
            radius: 0.16,
            flare: 0.5,
            y_top: 0.8,
            y_bottom: 0.1,
            wrinkle_amp: 0.02,
            wrinkle_freq: 4.0,
            band: [0.15, 0.40],
            billow: 0.35,
            spin_max: 0.35,
            bend_max: 0.4,
            sway: 0.02,
            checker: [8, 6],
            colors: [[0.92, 0.29, 0.20], [0.16, 0.32, 0.75]],
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |what: String| Err(PipelineError::Config { what });
        if self.frames == 0 {
            return bad("synth: need at least one frame".into());
        }
        if self.rings < 2 || self.segments < 3 {
            return bad(format!(
                "synth: grid {}x{} too small, need >= 2 rings and >= 3 segments",
                self.rings, self.segments
            ));
        }
        if self.subdivision == 0 {
            return bad("synth: subdivision must be at least 1".into());
        }
        if self.image_size < 16 {
            return bad(format!("synth: image size {} below 16", self.image_size));
        }
        if !(self.focal > 0.0) || !(self.camera_distance > 0.0) {
            return bad("synth: focal and camera distance must be positive".into());
        }
        if !(self.radius > 0.0) || self.flare < 0.0 {
            return bad("synth: radius must be positive and flare nonnegative".into());
        }
        if !(self.y_top > self.y_bottom) {
            return bad(format!(
                "synth: y_top {} must exceed y_bottom {}",
                self.y_top, self.y_bottom
            ));
        }
        if self.wrinkle_amp < 0.0 || !(self.wrinkle_freq > 0.0) {
            return bad("synth: wrinkle amplitude must be >= 0 and frequency > 0".into());
        }
        if !(0.0 <= self.band[0] && self.band[0] < self.band[1] && self.band[1] <= 1.0) {
            return bad(format!(
                "synth: band [{}, {}] must satisfy 0 <= top < bottom <= 1",
                self.band[0], self.band[1]
            ));
        }
        if !self.billow.is_finite() || self.billow < 0.0 {
            return bad("synth: billow must be finite and nonnegative".into());
        }
        for (name, v) in [
            ("spin_max", self.spin_max),
            ("bend_max", self.bend_max),
            ("sway", self.sway),
        ] {
            if !v.is_finite() {
                return bad(format!("synth: {name} must be finite"));
            }
        }
        if self.checker[0] == 0 || self.checker[1] == 0 {
            return bad("synth: checker counts must be at least 1".into());
        }
        for c in self.colors.iter().flatten() {
            if !(0.0..=1.0).contains(c) {
                return bad("synth: colors must lie in [0, 1]".into());
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub dataset: Dataset,
    /// Wrinkled canonical surface per frame, on the ground-truth grid.
    pub gt_canonical: Vec<Mesh>,
    /// Skinned ground-truth surface per frame, same topology.
    pub gt_meshes: Vec<Mesh>,
    /// Ground-truth faces whose center lies in the wrinkle band.
    pub band_faces: Vec<usize>,
}

/// Tube grid: `rc` rings of `sc` vertices, top ring first. Returns the mesh
/// and each vertex's normalized axial position s in [0, 1].
fn tube_grid(cfg: &SynthConfig, rc: usize, sc: usize) -> (Mesh, Vec<f64>) {
    let mut vertices = Vec::with_capacity(rc * sc);
    let mut axial = Vec::with_capacity(rc * sc);
    for i in 0..rc {
        let s = i as f64 / (rc - 1) as f64;
        let y = cfg.y_top + (cfg.y_bottom - cfg.y_top) * s;
        let r = cfg.radius * (1.0 + cfg.flare * s);
        for j in 0..sc {
            let phi = 2.0 * PI * j as f64 / sc as f64;
            vertices.push(Vec3::new(r * phi.cos(), y, r * phi.sin()));
            axial.push(s);
        }
    }
    let mut faces = Vec::with_capacity(2 * (rc - 1) * sc);
    for i in 0..rc - 1 {
        for j in 0..sc {
            let a = i * sc + j;
            let b = i * sc + (j + 1) % sc;
            let c = (i + 1) * sc + j;
            let d = (i + 1) * sc + (j + 1) % sc;
            faces.push([a, b, c]);
            faces.push([b, d, c]);
        }
    }
    (Mesh::new(vertices, faces), axial)
}

/// Root-vs-child blend along the tube, smoothstep over the middle third.
fn bone_weights(axial: &[f64]) -> SkinWeights {
    let rows: Vec<Vec<f64>> = axial
        .iter()
        .map(|&s| {
            let t = ((s - 0.35) / 0.3).clamp(0.0, 1.0);
            let wc = t * t * (3.0 - 2.0 * t);
            vec![1.0 - wc, wc]
        })
        .collect();
    SkinWeights::from_dense(&rows, 2)
}

fn translation(x: f64, y: f64, z: f64) -> Mat4 {
    let mut m = Mat4::identity();
    m[(0, 3)] = x;
    m[(1, 3)] = y;
    m[(2, 3)] = z;
    m
}

fn band_envelope(cfg: &SynthConfig, s: f64) -> f64 {
    let [b0, b1] = cfg.band;
    if s <= b0 || s >= b1 {
        return 0.0;
    }
    let t = (s - b0) / (b1 - b0);
    let w = (PI * t).sin();
    w * w
}

/// Per-frame deformation: a radial wrinkle A * sin(freq * phi + phase)
/// inside the band, plus a radial billow with axial profile sin(pi * s).
/// Both amplitudes are zero at frame 0, so the rest frame reproduces the
/// grid exactly.
fn deform(
    cfg: &SynthConfig,
    rest: &[Vec3],
    axial: &[f64],
    amp: f64,
    phase: f64,
    billow: f64,
) -> Vec<Vec3> {
    rest.iter()
        .zip(axial)
        .map(|(v, &s)| {
            let phi = v.z.atan2(v.x);
            let d = amp * (cfg.wrinkle_freq * phi + phase).sin() * band_envelope(cfg, s)
                + billow * (PI * s).sin();
            Vec3::new(v.x + d * phi.cos(), v.y, v.z + d * phi.sin())
        })
        .collect()
}

/// Two-tone checker indexed by angular and axial position on the canonical
/// surface; wrinkles are radial, so the pattern rides them unchanged.
fn checker_color(cfg: &SynthConfig, p: &Vec3) -> [f64; 3] {
    let u = p.z.atan2(p.x) / (2.0 * PI) + 0.5;
    let s = ((cfg.y_top - p.y) / (cfg.y_top - cfg.y_bottom)).clamp(0.0, 1.0);
    let tu = ((u * cfg.checker[0] as f64).floor() as usize).min(cfg.checker[0] - 1);
    let tv = ((s * cfg.checker[1] as f64).floor() as usize).min(cfg.checker[1] - 1);
    cfg.colors[(tu + tv) % 2]
}

/// Matches the stored 8-bit encoding so in-memory and reloaded data agree.
fn quantize_u8(img: &mut Image) {
    for v in &mut img.data {
        *v = (v.clamp(0.0, 1.0) * 255.0).round() / 255.0;
    }
}

/// Matches the stored 32-bit float encoding.
fn quantize_f32(img: &mut Image) {
    for v in &mut img.data {
        *v = *v as f32 as f64;
    }
}

pub fn generate_synthetic(cfg: &SynthConfig, seed: u64) -> Result<SynthOutput, PipelineError> {
    cfg.validate()?;
    let (template, template_axial) = tube_grid(cfg, cfg.rings, cfg.segments);
    let fine_rings = (cfg.rings - 1) * cfg.subdivision + 1;
    let fine_segments = cfg.segments * cfg.subdivision;
    let (fine, fine_axial) = tube_grid(cfg, fine_rings, fine_segments);

    let y_mid = 0.5 * (cfg.y_top + cfg.y_bottom);
    let skeleton = Skeleton {
        rest: vec![
            translation(0.0, cfg.y_top, 0.0),
            translation(0.0, y_mid, 0.0),
        ],
        parents: vec![None, Some(0)],
    };
    let template_weights = bone_weights(&template_axial);
    let fine_weights = bone_weights(&fine_axial);

    let center = Vec3::new(0.0, y_mid, 0.0);
    let eye = Vec3::new(0.0, y_mid, cfg.camera_distance);
    let camera = Camera::look_at(
        eye,
        center,
        Vec3::new(0.0, 1.0, 0.0),
        cfg.focal,
        cfg.focal,
        cfg.image_size,
        cfg.image_size,
        0.05,
    );

    let mut rng = StdRng::seed_from_u64(seed);
    let jitter: Vec<f64> = (0..cfg.frames).map(|_| rng.gen_range(-1.0..1.0)).collect();

    let mut frames = Vec::with_capacity(cfg.frames);
    let mut gt_canonical = Vec::with_capacity(cfg.frames);
    let mut gt_meshes = Vec::with_capacity(cfg.frames);
    for t in 0..cfg.frames {
        let tt = t as f64 / cfg.frames as f64;
        let cycle = (2.0 * PI * tt).sin();
        let pose = Pose {
            rotations: vec![
                Vec3::new(0.0, cfg.spin_max * (4.0 * PI * tt).sin(), 0.0),
                Vec3::new(cfg.bend_max * cycle, 0.0, 0.0),
            ],
            root_translation: Vec3::new(cfg.sway * cycle, 0.0, 0.0),
        };
        let amp_t = cfg.wrinkle_amp * (PI * tt).sin().powi(2) * (1.0 + 0.15 * jitter[t]);
        // An exact function of the bend angle, so pose conditioning can carry it.
        let billow_t = cfg.billow * cfg.radius * cycle * cycle;
        let canonical = deform(cfg, &fine.vertices, &fine_axial, amp_t, 2.0 * PI * tt, billow_t);
        let transforms = pose_transforms(&skeleton, &pose)?;
        let posed = skin(&canonical, &fine_weights, &transforms)?;

        let render = render_scene(&camera, &posed, &fine.faces);
        let mut color = Image::zeros(cfg.image_size, cfg.image_size, 3);
        for idx in 0..render.raster.face.len() {
            if !render.raster.covered(idx) {
                continue;
            }
            let face = fine.faces[render.raster.face[idx]];
            let bary = render.raster.bary[idx];
            let p = bary[0] * canonical[face[0]]
                + bary[1] * canonical[face[1]]
                + bary[2] * canonical[face[2]];
            let rgb = checker_color(cfg, &p);
            for c in 0..3 {
                color.data[idx * 3 + c] = rgb[c];
            }
        }

        let mut diffuse = render.diffuse;
        let mut mask = render.mask;
        let mut depth = render.depth;
        quantize_u8(&mut diffuse);
        quantize_u8(&mut mask);
        quantize_u8(&mut color);
        quantize_f32(&mut depth);

        frames.push(FrameObservation {
            index: t,
            diffuse,
            depth,
            mask,
            color,
            camera: camera.clone(),
            pose,
        });
        gt_canonical.push(Mesh::new(canonical, fine.faces.clone()));
        gt_meshes.push(Mesh::new(posed, fine.faces.clone()));
    }

    let band_faces: Vec<usize> = fine
        .faces
        .iter()
        .enumerate()
        .filter(|(_, f)| {
            let s = (fine_axial[f[0]] + fine_axial[f[1]] + fine_axial[f[2]]) / 3.0;
            cfg.band[0] <= s && s <= cfg.band[1]
        })
        .map(|(i, _)| i)
        .collect();

    let dataset = Dataset {
        template,
        skeleton,
        weights: template_weights,
        camera,
        frames,
    };
    dataset.validate()?;
    Ok(SynthOutput {
        dataset,
        gt_canonical,
        gt_meshes,
        band_faces,
    })
}
