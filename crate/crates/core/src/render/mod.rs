//! Perspective rasterization of triangle meshes with perspective-correct
//! barycentrics, plus view-dependent diffuse shading and depth output, and
//! the exact adjoints of both with respect to vertex positions.
//!
//! Pixel coverage is treated as fixed in the backward pass: gradients flow
//! through barycentrics, depths and shading of the pixels a face won, never
//! through the coverage decision itself. Silhouette sensitivity comes from
//! the soft mask in the `mask` submodule.

pub mod mask;

pub use mask::{soft_mask, soft_mask_backward, SoftMask};

use crate::img::Image;
use crate::{Mat3, Vec2, Vec3};

/// Pinhole camera. `rotation` maps world to camera coordinates (camera
/// looks along +z, y runs down the image), pixel centers sit at half-integer
/// coordinates.
#[derive(Debug, Clone)]
pub struct Camera {
    pub position: Vec3,
    pub rotation: Mat3,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub near: f64,
}

impl Camera {
    /// Camera at `eye` aimed at `target`, image centered, y-down.
    pub fn look_at(
        eye: Vec3,
        target: Vec3,
        up: Vec3,
        fx: f64,
        fy: f64,
        width: usize,
        height: usize,
        near: f64,
    ) -> Self {
        let forward = (target - eye).normalize();
        let right = forward.cross(&up).normalize();
        let down = forward.cross(&right);
        let rotation = Mat3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        Self {
            position: eye,
            rotation,
            fx,
            fy,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            width,
            height,
            near,
        }
    }

    pub fn cam_coords(&self, p: &Vec3) -> Vec3 {
        self.rotation * (p - self.position)
    }

    pub fn project_cam(&self, pc: &Vec3) -> Vec2 {
        Vec2::new(
            self.fx * pc.x / pc.z + self.cx,
            self.fy * pc.y / pc.z + self.cy,
        )
    }
}

pub const NO_FACE: usize = usize::MAX;

/// Per-pixel visibility buffer: winning face, perspective-correct
/// barycentrics and camera-space depth (infinity on background).
#[derive(Debug, Clone)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub face: Vec<usize>,
    pub bary: Vec<[f64; 3]>,
    pub depth: Vec<f64>,
}

impl Raster {
    pub fn covered(&self, idx: usize) -> bool {
        self.face[idx] != NO_FACE
    }

    /// Face ids that won at least one pixel, ascending.
    pub fn visible_faces(&self) -> Vec<usize> {
        let mut seen: Vec<usize> = self.face.iter().copied().filter(|&f| f != NO_FACE).collect();
        seen.sort_unstable();
        seen.dedup();
        seen
    }
}

fn cross2(a: Vec2, b: Vec2) -> f64 {
    a.x * b.y - a.y * b.x
}

/// Screen-area degeneracy cutoff: faces flatter than this in screen space
/// are skipped outright.
const MIN_SCREEN_AREA2: f64 = 1e-12;

/// Rasterizes all faces whose three vertices lie strictly in front of the
/// near plane. Depth ties keep the lower face id.
pub fn rasterize(cam: &Camera, positions: &[Vec3], faces: &[[usize; 3]]) -> Raster {
    let npx = cam.width * cam.height;
    let mut out = Raster {
        width: cam.width,
        height: cam.height,
        face: vec![NO_FACE; npx],
        bary: vec![[0.0; 3]; npx],
        depth: vec![f64::INFINITY; npx],
    };
    let cam_pts: Vec<Vec3> = positions.iter().map(|p| cam.cam_coords(p)).collect();
    let screen: Vec<Vec2> = cam_pts.iter().map(|p| cam.project_cam(p)).collect();

    for (fid, f) in faces.iter().enumerate() {
        let z = [cam_pts[f[0]].z, cam_pts[f[1]].z, cam_pts[f[2]].z];
        if z.iter().any(|&zi| zi <= cam.near) {
            continue;
        }
        let sp = [screen[f[0]], screen[f[1]], screen[f[2]]];
        let area2 = cross2(sp[1] - sp[0], sp[2] - sp[0]);
        if area2.abs() < MIN_SCREEN_AREA2 {
            continue;
        }
        let (umin, umax) = sp.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |a, p| {
            (a.0.min(p.x), a.1.max(p.x))
        });
        let (vmin, vmax) = sp.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |a, p| {
            (a.0.min(p.y), a.1.max(p.y))
        });
        let x0 = ((umin - 0.5).ceil().max(0.0)) as usize;
        let x1 = ((umax - 0.5).floor().min(cam.width as f64 - 1.0)) as isize;
        let y0 = ((vmin - 0.5).ceil().max(0.0)) as usize;
        let y1 = ((vmax - 0.5).floor().min(cam.height as f64 - 1.0)) as isize;
        if x1 < x0 as isize || y1 < y0 as isize {
            continue;
        }
        for y in y0..=y1 as usize {
            for x in x0..=x1 as usize {
                let p = Vec2::new(x as f64 + 0.5, y as f64 + 0.5);
                let w0 = cross2(sp[2] - sp[1], p - sp[1]);
                let w1 = cross2(sp[0] - sp[2], p - sp[2]);
                let w2 = cross2(sp[1] - sp[0], p - sp[0]);
                let inside = if area2 > 0.0 {
                    w0 >= 0.0 && w1 >= 0.0 && w2 >= 0.0
                } else {
                    w0 <= 0.0 && w1 <= 0.0 && w2 <= 0.0
                };
                if !inside {
                    continue;
                }
                let s = [w0 / area2, w1 / area2, w2 / area2];
                let d = s[0] / z[0] + s[1] / z[1] + s[2] / z[2];
                let zp = 1.0 / d;
                let idx = y * cam.width + x;
                if zp < out.depth[idx] {
                    out.depth[idx] = zp;
                    out.face[idx] = fid;
                    out.bary[idx] = [
                        s[0] / z[0] * zp,
                        s[1] / z[1] * zp,
                        s[2] / z[2] * zp,
                    ];
                }
            }
        }
    }
    out
}

/// Area-weighted vertex normals: `sums` are the raw cross-product
/// accumulations, `normals` their unit versions (zero where the sum
/// vanishes).
pub struct VertexNormals {
    pub sums: Vec<Vec3>,
    pub normals: Vec<Vec3>,
}

pub fn vertex_normals(positions: &[Vec3], faces: &[[usize; 3]]) -> VertexNormals {
    let mut sums = vec![Vec3::zeros(); positions.len()];
    for f in faces {
        let c = (positions[f[1]] - positions[f[0]]).cross(&(positions[f[2]] - positions[f[0]]));
        sums[f[0]] += c;
        sums[f[1]] += c;
        sums[f[2]] += c;
    }
    let normals = sums
        .iter()
        .map(|s| {
            let n = s.norm();
            if n > 1e-300 {
                s / n
            } else {
                Vec3::zeros()
            }
        })
        .collect();
    VertexNormals { sums, normals }
}

/// Rendered views of one mesh from one camera.
pub struct RenderOutput {
    pub raster: Raster,
    /// Clamped view-dependent diffuse term, single channel.
    pub diffuse: Image,
    /// Camera-space depth, zero on background.
    pub depth: Image,
    /// Hard coverage, one where any face won the pixel.
    pub mask: Image,
    pub vnormals: VertexNormals,
}

pub fn render_scene(cam: &Camera, positions: &[Vec3], faces: &[[usize; 3]]) -> RenderOutput {
    let raster = rasterize(cam, positions, faces);
    let vnormals = vertex_normals(positions, faces);
    let mut diffuse = Image::zeros(cam.width, cam.height, 1);
    let mut depth = Image::zeros(cam.width, cam.height, 1);
    let mut mask = Image::zeros(cam.width, cam.height, 1);
    for idx in 0..raster.face.len() {
        let fid = raster.face[idx];
        if fid == NO_FACE {
            continue;
        }
        mask.data[idx] = 1.0;
        depth.data[idx] = raster.depth[idx];
        let f = faces[fid];
        let b = raster.bary[idx];
        let m = b[0] * vnormals.normals[f[0]]
            + b[1] * vnormals.normals[f[1]]
            + b[2] * vnormals.normals[f[2]];
        let mn = m.norm();
        if mn <= 1e-300 {
            continue;
        }
        let nhat = m / mn;
        let x = b[0] * positions[f[0]] + b[1] * positions[f[1]] + b[2] * positions[f[2]];
        let vdir = cam.position - x;
        let vn = vdir.norm();
        if vn <= 1e-300 {
            continue;
        }
        diffuse.data[idx] = nhat.dot(&(vdir / vn)).max(0.0);
    }
    RenderOutput {
        raster,
        diffuse,
        depth,
        mask,
        vnormals,
    }
}

/// Gradient at a projected vertex, pulled back to its world position:
/// `du`, `dv` are image-coordinate gradients, `dz` the camera-depth one.
pub fn screen_grad_to_world(cam: &Camera, pc: &Vec3, du: f64, dv: f64, dz: f64) -> Vec3 {
    let gx = du * cam.fx / pc.z;
    let gy = dv * cam.fy / pc.z;
    let gz = -du * cam.fx * pc.x / (pc.z * pc.z) - dv * cam.fy * pc.y / (pc.z * pc.z) + dz;
    cam.rotation.transpose() * Vec3::new(gx, gy, gz)
}

/// Chains gradients on the perspective-correct barycentrics and the pixel
/// depth of one covered pixel back to the world positions of the face's
/// vertices. Coverage is fixed; only the interpolation geometry moves.
#[allow(clippy::too_many_arguments)]
fn bary_depth_backward(
    cam: &Camera,
    pixel: Vec2,
    vids: [usize; 3],
    cam_pts: &[Vec3],
    screen: &[Vec2],
    db: [f64; 3],
    dzp: f64,
    grad: &mut [Vec3],
) {
    let sp = [screen[vids[0]], screen[vids[1]], screen[vids[2]]];
    let z = [
        cam_pts[vids[0]].z,
        cam_pts[vids[1]].z,
        cam_pts[vids[2]].z,
    ];
    let area2 = cross2(sp[1] - sp[0], sp[2] - sp[0]);
    let w = [
        cross2(sp[2] - sp[1], pixel - sp[1]),
        cross2(sp[0] - sp[2], pixel - sp[2]),
        cross2(sp[1] - sp[0], pixel - sp[0]),
    ];
    let s = [w[0] / area2, w[1] / area2, w[2] / area2];
    let d: f64 = s[0] / z[0] + s[1] / z[1] + s[2] / z[2];
    let zp = 1.0 / d;
    let b = [s[0] / z[0] * zp, s[1] / z[1] * zp, s[2] / z[2] * zp];

    let beta: f64 = (0..3).map(|i| db[i] * b[i]).sum();
    let mut ds = [0.0f64; 3];
    let mut dz = [0.0f64; 3];
    for k in 0..3 {
        ds[k] = (db[k] - beta) / (z[k] * d);
        dz[k] = (beta - db[k]) * s[k] / (z[k] * z[k] * d);
        // depth output shares the same screen quantities
        ds[k] += dzp * (-zp * zp / z[k]);
        dz[k] += dzp * zp * zp * s[k] / (z[k] * z[k]);
    }
    let sigma: f64 = (0..3).map(|i| ds[i] * s[i]).sum();
    let dw = [
        (ds[0] - sigma) / area2,
        (ds[1] - sigma) / area2,
        (ds[2] - sigma) / area2,
    ];

    // w0 = cross2(P2 - P1, p - P1), cyclic; partials of cross2(a, b) are
    // (b.y, -b.x) in a and (-a.y, a.x) in b
    let mut dsp = [Vec2::zeros(); 3];
    {
        let (a, bb) = (sp[2] - sp[1], pixel - sp[1]);
        dsp[2] += dw[0] * Vec2::new(bb.y, -bb.x);
        dsp[1] += dw[0] * Vec2::new(a.y - bb.y, bb.x - a.x);
    }
    {
        let (a, bb) = (sp[0] - sp[2], pixel - sp[2]);
        dsp[0] += dw[1] * Vec2::new(bb.y, -bb.x);
        dsp[2] += dw[1] * Vec2::new(a.y - bb.y, bb.x - a.x);
    }
    {
        let (a, bb) = (sp[1] - sp[0], pixel - sp[0]);
        dsp[1] += dw[2] * Vec2::new(bb.y, -bb.x);
        dsp[0] += dw[2] * Vec2::new(a.y - bb.y, bb.x - a.x);
    }

    for k in 0..3 {
        grad[vids[k]] +=
            screen_grad_to_world(cam, &cam_pts[vids[k]], dsp[k].x, dsp[k].y, dz[k]);
    }
}

/// Pullback of gradients on the diffuse and depth images to the vertex
/// positions.
pub fn render_backward(
    cam: &Camera,
    positions: &[Vec3],
    faces: &[[usize; 3]],
    out: &RenderOutput,
    d_diffuse: Option<&Image>,
    d_depth: Option<&Image>,
) -> Vec<Vec3> {
    let n = positions.len();
    let mut grad = vec![Vec3::zeros(); n];
    let mut dnormal = vec![Vec3::zeros(); n];
    let cam_pts: Vec<Vec3> = positions.iter().map(|p| cam.cam_coords(p)).collect();
    let screen: Vec<Vec2> = cam_pts.iter().map(|p| cam.project_cam(p)).collect();

    for y in 0..cam.height {
        for x in 0..cam.width {
            let idx = y * cam.width + x;
            let fid = out.raster.face[idx];
            if fid == NO_FACE {
                continue;
            }
            let gd = d_diffuse.map_or(0.0, |im| im.data[idx]);
            let gz = d_depth.map_or(0.0, |im| im.data[idx]);
            if gd == 0.0 && gz == 0.0 {
                continue;
            }
            let f = faces[fid];
            let b = out.raster.bary[idx];
            let pixel = Vec2::new(x as f64 + 0.5, y as f64 + 0.5);
            let mut db = [0.0f64; 3];

            if gd != 0.0 && out.diffuse.data[idx] > 0.0 {
                let nv = [
                    out.vnormals.normals[f[0]],
                    out.vnormals.normals[f[1]],
                    out.vnormals.normals[f[2]],
                ];
                let m = b[0] * nv[0] + b[1] * nv[1] + b[2] * nv[2];
                let mn = m.norm();
                if mn > 1e-300 {
                    let nhat = m / mn;
                    let xw = b[0] * positions[f[0]]
                        + b[1] * positions[f[1]]
                        + b[2] * positions[f[2]];
                    let vdir = cam.position - xw;
                    let vn = vdir.norm();
                    let vhat = vdir / vn;
                    // shade = nhat . vhat
                    let dnhat = gd * vhat;
                    let dm = (dnhat - nhat * nhat.dot(&dnhat)) / mn;
                    for k in 0..3 {
                        dnormal[f[k]] += b[k] * dm;
                        db[k] += nv[k].dot(&dm);
                    }
                    let dvhat = gd * nhat;
                    let dvdir = (dvhat - vhat * vhat.dot(&dvhat)) / vn;
                    let dx = -dvdir;
                    for k in 0..3 {
                        grad[f[k]] += b[k] * dx;
                        db[k] += positions[f[k]].dot(&dx);
                    }
                }
            }

            bary_depth_backward(cam, pixel, f, &cam_pts, &screen, db, gz, &mut grad);
        }
    }

    // second stage: gradients on normalized vertex normals flow through the
    // normalization, then through each incident face's cross product
    let mut dcross = vec![Vec3::zeros(); n];
    for v in 0..n {
        let sn = out.vnormals.sums[v].norm();
        if sn > 1e-300 && dnormal[v] != Vec3::zeros() {
            let nhat = out.vnormals.normals[v];
            dcross[v] = (dnormal[v] - nhat * nhat.dot(&dnormal[v])) / sn;
        }
    }
    for f in faces {
        let g = dcross[f[0]] + dcross[f[1]] + dcross[f[2]];
        if g == Vec3::zeros() {
            continue;
        }
        let a = positions[f[1]] - positions[f[0]];
        let b = positions[f[2]] - positions[f[0]];
        let da = b.cross(&g);
        let db_ = g.cross(&a);
        grad[f[1]] += da;
        grad[f[2]] += db_;
        grad[f[0]] -= da + db_;
    }
    grad
}
