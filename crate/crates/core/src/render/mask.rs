//! Differentiable silhouette coverage. The hard mask is relaxed near the
//! visible silhouette: each pixel within a band of the closest silhouette
//! segment gets a logistic of its signed screen distance (positive inside),
//! pixels beyond the band keep their hard value. Gradients flow through the
//! distance to the segment endpoints only; the inside/outside sign and the
//! choice of nearest segment are frozen, like coverage in the main renderer.

use super::{screen_grad_to_world, Camera, Raster, MIN_SCREEN_AREA2, NO_FACE};
use crate::img::Image;
use crate::mesh::Mesh;
use crate::{Vec2, Vec3};

/// Band half-width in units of sigma; outside it the logistic is within
/// 3.4e-4 of saturation and the mask snaps to the hard value.
const BAND_SIGMAS: f64 = 8.0;

#[derive(Debug, Clone, Copy)]
struct Segment {
    va: usize,
    vb: usize,
}

/// Soft coverage image plus everything the backward pass needs.
pub struct SoftMask {
    pub alpha: Image,
    pub sigma: f64,
    segments: Vec<Segment>,
    nearest: Vec<usize>,
    dist: Vec<f64>,
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn point_segment_distance(p: Vec2, a: Vec2, b: Vec2) -> (f64, f64) {
    let ab = b - a;
    let len2 = ab.norm_squared();
    let t = if len2 > 0.0 {
        ((p - a).dot(&ab) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let q = a + t * ab;
    ((p - q).norm(), t)
}

/// Visible silhouette segments: boundary edges of the projected mesh plus
/// edges where the screen orientation flips between the incident faces.
/// Faces touching the near plane or degenerate in screen space are treated
/// as absent.
fn silhouette_segments(
    cam: &Camera,
    mesh: &Mesh,
    cam_pts: &[Vec3],
    screen: &[Vec2],
) -> Vec<Segment> {
    // screen orientation per face: -1 / +1, 0 when the face does not render
    let mut orient = vec![0i8; mesh.num_faces()];
    for (fi, f) in mesh.faces.iter().enumerate() {
        if f.iter().any(|&v| cam_pts[v].z <= cam.near) {
            continue;
        }
        let a = screen[f[0]];
        let area2 = (screen[f[1]] - a).perp(&(screen[f[2]] - a));
        if area2.abs() < MIN_SCREEN_AREA2 {
            continue;
        }
        orient[fi] = if area2 > 0.0 { 1 } else { -1 };
    }
    let mut out = Vec::new();
    for (ei, fs) in mesh.edge_faces().iter().enumerate() {
        let rendered: Vec<i8> = fs.iter().map(|&f| orient[f]).filter(|&o| o != 0).collect();
        let silhouette = match rendered.len() {
            1 => true,
            2 => rendered[0] != rendered[1],
            _ => false,
        };
        if silhouette {
            let e = mesh.edges()[ei];
            out.push(Segment { va: e[0], vb: e[1] });
        }
    }
    out
}

/// Builds the soft mask for an already rasterized view.
pub fn soft_mask(
    cam: &Camera,
    mesh: &Mesh,
    positions: &[Vec3],
    raster: &Raster,
    sigma: f64,
) -> SoftMask {
    assert!(sigma > 0.0);
    let cam_pts: Vec<Vec3> = positions.iter().map(|p| cam.cam_coords(p)).collect();
    let screen: Vec<Vec2> = cam_pts.iter().map(|p| cam.project_cam(p)).collect();
    let segments = silhouette_segments(cam, mesh, &cam_pts, &screen);

    let npx = cam.width * cam.height;
    let band = BAND_SIGMAS * sigma;
    let mut dist = vec![f64::INFINITY; npx];
    let mut nearest = vec![usize::MAX; npx];

    // occlusion tolerance: segments clearly behind the visible surface at a
    // pixel do not influence it
    let (mut zmin, mut zmax) = (f64::INFINITY, 0.0f64);
    for &z in &raster.depth {
        if z.is_finite() {
            zmin = zmin.min(z);
            zmax = zmax.max(z);
        }
    }
    let z_eps = if zmin.is_finite() {
        0.01 * (zmax - zmin) + 1e-6 * zmax.max(1.0)
    } else {
        f64::INFINITY
    };

    for (si, seg) in segments.iter().enumerate() {
        let (a, b) = (screen[seg.va], screen[seg.vb]);
        let seg_z = 0.5 * (cam_pts[seg.va].z + cam_pts[seg.vb].z);
        let x0 = ((a.x.min(b.x) - band - 0.5).ceil().max(0.0)) as usize;
        let x1 = ((a.x.max(b.x) + band - 0.5).floor().min(cam.width as f64 - 1.0)) as isize;
        let y0 = ((a.y.min(b.y) - band - 0.5).ceil().max(0.0)) as usize;
        let y1 = ((a.y.max(b.y) + band - 0.5).floor().min(cam.height as f64 - 1.0)) as isize;
        if x1 < x0 as isize || y1 < y0 as isize {
            continue;
        }
        for y in y0..=y1 as usize {
            for x in x0..=x1 as usize {
                let idx = y * cam.width + x;
                if raster.face[idx] != NO_FACE && raster.depth[idx] < seg_z - z_eps {
                    continue;
                }
                let p = Vec2::new(x as f64 + 0.5, y as f64 + 0.5);
                let (d, _) = point_segment_distance(p, a, b);
                if d <= band && d < dist[idx] {
                    dist[idx] = d;
                    nearest[idx] = si;
                }
            }
        }
    }

    let mut alpha = Image::zeros(cam.width, cam.height, 1);
    for idx in 0..npx {
        let covered = raster.face[idx] != NO_FACE;
        alpha.data[idx] = if nearest[idx] == usize::MAX {
            if covered {
                1.0
            } else {
                0.0
            }
        } else {
            let signed = if covered { dist[idx] } else { -dist[idx] };
            logistic(signed / sigma)
        };
    }

    SoftMask {
        alpha,
        sigma,
        segments,
        nearest,
        dist,
    }
}

/// Pullback of a gradient on the soft mask to vertex positions.
pub fn soft_mask_backward(
    cam: &Camera,
    positions: &[Vec3],
    raster: &Raster,
    sm: &SoftMask,
    d_alpha: &Image,
) -> Vec<Vec3> {
    let cam_pts: Vec<Vec3> = positions.iter().map(|p| cam.cam_coords(p)).collect();
    let screen: Vec<Vec2> = cam_pts.iter().map(|p| cam.project_cam(p)).collect();
    let mut grad = vec![Vec3::zeros(); positions.len()];
    for y in 0..cam.height {
        for x in 0..cam.width {
            let idx = y * cam.width + x;
            let si = sm.nearest[idx];
            if si == usize::MAX {
                continue;
            }
            let g = d_alpha.data[idx];
            if g == 0.0 {
                continue;
            }
            let d = sm.dist[idx];
            if d < 1e-12 {
                continue;
            }
            let seg = sm.segments[si];
            let (a, b) = (screen[seg.va], screen[seg.vb]);
            let p = Vec2::new(x as f64 + 0.5, y as f64 + 0.5);
            let (dcheck, t) = point_segment_distance(p, a, b);
            let q = a + t * (b - a);
            let dir = (p - q) / dcheck;
            let covered = raster.face[idx] != NO_FACE;
            let alpha = sm.alpha.data[idx];
            // d(alpha)/d(dist), including the inside/outside sign
            let sign = if covered { 1.0 } else { -1.0 };
            let dd = g * alpha * (1.0 - alpha) / sm.sigma * sign;
            // nearest point is a minimum over t, so t can be held fixed
            let da = -dd * (1.0 - t) * dir;
            let db = -dd * t * dir;
            grad[seg.va] += screen_grad_to_world(cam, &cam_pts[seg.va], da.x, da.y, 0.0);
            grad[seg.vb] += screen_grad_to_world(cam, &cam_pts[seg.vb], db.x, db.y, 0.0);
        }
    }
    grad
}
