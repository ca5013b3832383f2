//! Appearance recovery on a fixed base mesh: a per-face chart atlas, the
//! directly optimized static map, a small network predicting per-frame
//! dynamic offsets from hash-encoded UVs and a pose code, and bilinear
//! sampling with its adjoint.
//!
//! Stored maps are unclamped; colors clamp to [0, 1] at sampling time only.

use crate::fields::{HashGrid, HashGridCache, HashGridSpec, Mlp, MlpCache};
use crate::img::Image;
use crate::mesh::Mesh;
use crate::render::Raster;
use crate::{Vec2, Vec3};
use rand::Rng;
use rand_distr::{Distribution, Normal};

#[derive(Debug, thiserror::Error)]
pub enum TextureError {
    #[error(
        "atlas resolution {resolution} cannot pack {faces} faces; needs at least {required}"
    )]
    AtlasTooSmall {
        faces: usize,
        resolution: usize,
        required: usize,
    },
    #[error("uv list holds {got} faces, mesh has {expected}")]
    UvCount { got: usize, expected: usize },
    #[error("uv for face {face} lies outside the unit square")]
    UvOutOfRange { face: usize },
}

/// Per-face-corner UVs plus the trainable static map. Generated atlases give
/// every face its own texel-aligned chart separated by a 1-texel gutter, so
/// bilinear lookups never bleed across faces.
#[derive(Debug, Clone)]
pub struct TextureAtlas {
    pub uvs: Vec<[Vec2; 3]>,
    pub resolution: usize,
    /// Static map, resolution x resolution x 3, unclamped.
    pub texture: Image,
    /// Texels a chart lookup can touch; the dynamic map is only evaluated
    /// here.
    pub active: Vec<bool>,
}

impl TextureAtlas {
    /// Packs each face into its own chart on a square cell grid.
    pub fn generate(mesh: &Mesh, resolution: usize) -> Result<Self, TextureError> {
        let faces = mesh.num_faces();
        let cells = (faces as f64).sqrt().ceil() as usize;
        let side = if cells == 0 { 0 } else { resolution / cells };
        // A cell needs a 1-texel gutter plus a non-empty interior.
        if faces > 0 && side < 3 {
            return Err(TextureError::AtlasTooSmall {
                faces,
                resolution,
                required: 3 * cells,
            });
        }
        let q = resolution as f64;
        let mut uvs = Vec::with_capacity(faces);
        for f in 0..faces {
            let cx = (f % cells) * side;
            let cy = (f / cells) * side;
            let corner = |x: usize, y: usize| Vec2::new(x as f64 / q, y as f64 / q);
            uvs.push([
                corner(cx + 1, cy + 1),
                corner(cx + side - 1, cy + 1),
                corner(cx + 1, cy + side - 1),
            ]);
        }
        Ok(Self::assemble(uvs, resolution))
    }

    /// Wraps externally supplied UVs (one triple per face) unchanged.
    pub fn from_uvs(
        mesh: &Mesh,
        uvs: Vec<[Vec2; 3]>,
        resolution: usize,
    ) -> Result<Self, TextureError> {
        if uvs.len() != mesh.num_faces() {
            return Err(TextureError::UvCount {
                got: uvs.len(),
                expected: mesh.num_faces(),
            });
        }
        for (f, tri) in uvs.iter().enumerate() {
            for c in tri {
                if !(0.0..=1.0).contains(&c.x) || !(0.0..=1.0).contains(&c.y) {
                    return Err(TextureError::UvOutOfRange { face: f });
                }
            }
        }
        Ok(Self::assemble(uvs, resolution))
    }

    fn assemble(uvs: Vec<[Vec2; 3]>, resolution: usize) -> Self {
        let mut active = vec![false; resolution * resolution];
        let q = resolution as f64;
        for tri in &uvs {
            // The dilated bounding box covers every texel a bilinear lookup
            // inside the triangle can reach.
            let xs: Vec<f64> = tri.iter().map(|c| c.x * q - 0.5).collect();
            let ys: Vec<f64> = tri.iter().map(|c| c.y * q - 0.5).collect();
            let x0 = (xs.iter().cloned().fold(f64::INFINITY, f64::min).floor() as isize).max(0);
            let y0 = (ys.iter().cloned().fold(f64::INFINITY, f64::min).floor() as isize).max(0);
            let x1 = (xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max).ceil() as isize)
                .min(resolution as isize - 1);
            let y1 = (ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max).ceil() as isize)
                .min(resolution as isize - 1);
            for y in y0..=y1 {
                for x in x0..=x1 {
                    active[y as usize * resolution + x as usize] = true;
                }
            }
        }
        Self {
            uvs,
            resolution,
            texture: Image::filled(resolution, resolution, 3, 0.5),
            active,
        }
    }

    /// Which chart's triangle holds each texel center; None for gutters and
    /// empty space.
    pub fn ownership(&self) -> Vec<Option<usize>> {
        let q = self.resolution as f64;
        let mut owner = vec![None; self.resolution * self.resolution];
        for (f, tri) in self.uvs.iter().enumerate() {
            for (idx, own) in owner.iter_mut().enumerate() {
                let x = (idx % self.resolution) as f64;
                let y = (idx / self.resolution) as f64;
                let p = Vec2::new((x + 0.5) / q, (y + 0.5) / q);
                if uv_inside(tri, p) {
                    debug_assert!(own.is_none());
                    *own = Some(f);
                }
            }
        }
        owner
    }
}

fn uv_inside(tri: &[Vec2; 3], p: Vec2) -> bool {
    let cross = |a: Vec2, b: Vec2, c: Vec2| (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x);
    let d0 = cross(tri[0], tri[1], p);
    let d1 = cross(tri[1], tri[2], p);
    let d2 = cross(tri[2], tri[0], p);
    (d0 >= 0.0 && d1 >= 0.0 && d2 >= 0.0) || (d0 <= 0.0 && d1 <= 0.0 && d2 <= 0.0)
}

/// One bilinear lookup: clamped color plus everything the adjoint needs.
#[derive(Debug, Clone)]
pub struct TexelSample {
    pub color: [f64; 3],
    raw: [f64; 3],
    texels: [usize; 4],
    weights: [f64; 4],
}

/// Bilinear sample at (u, v) with edge-clamped addressing; the returned
/// color is clamped to [0, 1], the map itself is read as stored.
pub fn sample_texture(map: &Image, u: f64, v: f64) -> TexelSample {
    assert_eq!(map.channels, 3);
    let (w, h) = (map.width, map.height);
    let x = (u * w as f64 - 0.5).clamp(0.0, (w - 1) as f64);
    let y = (v * h as f64 - 0.5).clamp(0.0, (h - 1) as f64);
    let x0 = (x.floor() as usize).min(w.saturating_sub(2));
    let y0 = (y.floor() as usize).min(h.saturating_sub(2));
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let texels = [
        y0 * w + x0,
        y0 * w + x0 + 1,
        (y0 + 1) * w + x0,
        (y0 + 1) * w + x0 + 1,
    ];
    let weights = [
        (1.0 - fx) * (1.0 - fy),
        fx * (1.0 - fy),
        (1.0 - fx) * fy,
        fx * fy,
    ];
    let mut raw = [0.0; 3];
    for c in 0..3 {
        for k in 0..4 {
            raw[c] += weights[k] * map.data[texels[k] * 3 + c];
        }
    }
    let color = [
        raw[0].clamp(0.0, 1.0),
        raw[1].clamp(0.0, 1.0),
        raw[2].clamp(0.0, 1.0),
    ];
    TexelSample {
        color,
        raw,
        texels,
        weights,
    }
}

/// Scatters a color gradient back onto the four source texels. Channels the
/// clamp saturated contribute nothing.
pub fn sample_texture_backward(sample: &TexelSample, dcolor: &[f64; 3], grad: &mut Image) {
    assert_eq!(grad.channels, 3);
    for c in 0..3 {
        if sample.raw[c] < 0.0 || sample.raw[c] > 1.0 {
            continue;
        }
        for k in 0..4 {
            grad.data[sample.texels[k] * 3 + c] += sample.weights[k] * dcolor[c];
        }
    }
}

/// Renders the rasterized mesh with the given map: covered pixels take the
/// bilinear sample at their interpolated UV, background stays black.
pub fn render_textured(raster: &Raster, uvs: &[[Vec2; 3]], map: &Image) -> Image {
    let mut out = Image::zeros(raster.width, raster.height, 3);
    for pix in 0..raster.face.len() {
        if !raster.covered(pix) {
            continue;
        }
        let f = raster.face[pix];
        let b = raster.bary[pix];
        let uv = b[0] * uvs[f][0] + b[1] * uvs[f][1] + b[2] * uvs[f][2];
        let s = sample_texture(map, uv.x, uv.y);
        for c in 0..3 {
            out.data[pix * 3 + c] = s.color[c];
        }
    }
    out
}

/// Adjoint of render_textured: accumulates a per-pixel color gradient onto
/// the map. UVs are treated as fixed.
pub fn render_textured_backward(
    raster: &Raster,
    uvs: &[[Vec2; 3]],
    map: &Image,
    dimage: &Image,
    grad_map: &mut Image,
) {
    for pix in 0..raster.face.len() {
        if !raster.covered(pix) {
            continue;
        }
        let f = raster.face[pix];
        let b = raster.bary[pix];
        let uv = b[0] * uvs[f][0] + b[1] * uvs[f][1] + b[2] * uvs[f][2];
        let s = sample_texture(map, uv.x, uv.y);
        let d = [
            dimage.data[pix * 3],
            dimage.data[pix * 3 + 1],
            dimage.data[pix * 3 + 2],
        ];
        sample_texture_backward(&s, &d, grad_map);
    }
}

/// Small conditioned network producing a per-texel RGB offset. The zero MLP
/// head makes the initial dynamic map identically zero.
#[derive(Debug, Clone)]
pub struct DynamicTextureNet {
    pub grid: HashGrid,
    pub mlp: Mlp,
    pub pose_dim: usize,
}

#[derive(Debug, Clone)]
pub struct DynamicTextureCache {
    grid: HashGridCache,
    mlp: MlpCache,
}

impl DynamicTextureNet {
    pub fn new(
        spec: HashGridSpec,
        hidden: &[usize],
        pose_dim: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let grid = HashGrid::new(spec, rng);
        let mut sizes = vec![grid.output_dim() + pose_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(3);
        let mlp = Mlp::new(&sizes, rng);
        Self {
            grid,
            mlp,
            pose_dim,
        }
    }

    pub fn forward(&self, uv: Vec2, pose_code: &[f64]) -> ([f64; 3], DynamicTextureCache) {
        assert_eq!(pose_code.len(), self.pose_dim);
        let (feats, grid_cache) = self.grid.forward(Vec3::new(uv.x, uv.y, 0.0));
        let mut input = feats;
        input.extend_from_slice(pose_code);
        let mlp_cache = self.mlp.forward(&input);
        let out = mlp_cache.output();
        (
            [out[0], out[1], out[2]],
            DynamicTextureCache {
                grid: grid_cache,
                mlp: mlp_cache,
            },
        )
    }

    pub fn backward(
        &self,
        cache: &DynamicTextureCache,
        dcolor: &[f64; 3],
        grid_grad: &mut [f64],
        mlp_grad: &mut [f64],
    ) {
        let dinput = self.mlp.backward(&cache.mlp, dcolor, mlp_grad);
        self.grid
            .backward(&cache.grid, &dinput[..self.grid.output_dim()], grid_grad);
    }
}

/// Evaluates the dynamic map at the active texel centers; inactive texels
/// stay zero, matching the zero-initialized network output.
pub fn eval_dynamic_texture(
    net: &DynamicTextureNet,
    atlas: &TextureAtlas,
    pose_code: &[f64],
) -> Image {
    let q = atlas.resolution;
    let mut out = Image::zeros(q, q, 3);
    for idx in 0..q * q {
        if !atlas.active[idx] {
            continue;
        }
        let u = ((idx % q) as f64 + 0.5) / q as f64;
        let v = ((idx / q) as f64 + 0.5) / q as f64;
        let (rgb, _) = net.forward(Vec2::new(u, v), pose_code);
        for c in 0..3 {
            out.data[idx * 3 + c] = rgb[c];
        }
    }
    out
}

/// Adjoint of eval_dynamic_texture for a gradient image over the map.
pub fn eval_dynamic_texture_backward(
    net: &DynamicTextureNet,
    atlas: &TextureAtlas,
    pose_code: &[f64],
    dmap: &Image,
    grid_grad: &mut [f64],
    mlp_grad: &mut [f64],
) {
    let q = atlas.resolution;
    for idx in 0..q * q {
        if !atlas.active[idx] {
            continue;
        }
        let d = [
            dmap.data[idx * 3],
            dmap.data[idx * 3 + 1],
            dmap.data[idx * 3 + 2],
        ];
        if d == [0.0; 3] {
            continue;
        }
        let u = ((idx % q) as f64 + 0.5) / q as f64;
        let v = ((idx / q) as f64 + 0.5) / q as f64;
        let (_, cache) = net.forward(Vec2::new(u, v), pose_code);
        net.backward(&cache, &d, grid_grad, mlp_grad);
    }
}

/// Final map: static plus dynamic, elementwise, unclamped.
pub fn combine_texture(t_static: &Image, t_dynamic: &Image) -> Image {
    assert!(t_static.same_shape(t_dynamic));
    let mut out = t_static.clone();
    for (o, d) in out.data.iter_mut().zip(&t_dynamic.data) {
        *o += d;
    }
    out
}

/// Linearly decaying noise level: sigma_start at epoch 0, exactly zero at
/// and after end_epoch.
#[derive(Debug, Clone, Copy)]
pub struct AnnealSchedule {
    pub sigma_start: f64,
    pub end_epoch: usize,
}

impl AnnealSchedule {
    pub fn sigma(&self, epoch: usize) -> f64 {
        if self.end_epoch == 0 || epoch >= self.end_epoch || self.sigma_start == 0.0 {
            0.0
        } else {
            self.sigma_start * (1.0 - epoch as f64 / self.end_epoch as f64)
        }
    }
}

/// Adds annealed Gaussian noise to a pose code. A zero sigma returns the
/// input untouched without consuming randomness.
pub fn anneal_pose_noise(
    code: &[f64],
    epoch: usize,
    schedule: &AnnealSchedule,
    rng: &mut impl Rng,
) -> Vec<f64> {
    let sigma = schedule.sigma(epoch);
    if sigma == 0.0 {
        return code.to_vec();
    }
    let normal = Normal::new(0.0, sigma).expect("sigma is finite and positive");
    code.iter().map(|&c| c + normal.sample(rng)).collect()
}
