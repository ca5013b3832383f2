//! Evaluation: Chamfer distance and normal consistency over area-weighted
//! surface samples, plus masked PSNR and SSIM.

use super::PipelineError;
use crate::img::Image;
use crate::losses::{ssim, DEFAULT_SIGMA, DEFAULT_WINDOW};
use crate::mesh::Mesh;
use crate::Vec3;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

#[derive(Debug, Clone, Copy)]
pub struct MeshMetrics {
    /// Symmetric mean squared nearest-point distance.
    pub chamfer: f64,
    /// Mean cosine between nearest-point face normals.
    pub normal_consistency: f64,
}

#[derive(Debug, Clone)]
pub struct SurfaceSamples {
    pub points: Vec<Vec3>,
    /// Unnormalized face normals of the sampled faces.
    pub normals: Vec<Vec3>,
}

fn face_cross(mesh: &Mesh, f: [usize; 3]) -> Vec3 {
    let [a, b, c] = f;
    (mesh.vertices[b] - mesh.vertices[a]).cross(&(mesh.vertices[c] - mesh.vertices[a]))
}

fn sample_on(
    mesh: &Mesh,
    face_ids: &[usize],
    samples: usize,
    seed: u64,
) -> Result<SurfaceSamples, PipelineError> {
    let crosses: Vec<Vec3> = face_ids
        .iter()
        .map(|&f| face_cross(mesh, mesh.faces[f]))
        .collect();
    let mut cum = Vec::with_capacity(crosses.len());
    let mut total = 0.0;
    for n in &crosses {
        total += 0.5 * n.norm();
        cum.push(total);
    }
    if !(total > 0.0) {
        return Err(PipelineError::Metric {
            what: "surface has no area to sample".into(),
        });
    }
    let mut rng = StdRng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(samples);
    let mut normals = Vec::with_capacity(samples);
    for _ in 0..samples {
        let u = rng.gen::<f64>() * total;
        let k = cum.partition_point(|&c| c <= u).min(face_ids.len() - 1);
        let [a, b, c] = mesh.faces[face_ids[k]];
        let r1 = rng.gen::<f64>().sqrt();
        let r2 = rng.gen::<f64>();
        let (wa, wb, wc) = (1.0 - r1, r1 * (1.0 - r2), r1 * r2);
        points.push(wa * mesh.vertices[a] + wb * mesh.vertices[b] + wc * mesh.vertices[c]);
        normals.push(crosses[k]);
    }
    Ok(SurfaceSamples { points, normals })
}

/// Area-weighted random points with their face normals.
pub fn sample_surface(
    mesh: &Mesh,
    samples: usize,
    seed: u64,
) -> Result<SurfaceSamples, PipelineError> {
    let all: Vec<usize> = (0..mesh.faces.len()).collect();
    sample_on(mesh, &all, samples, seed)
}

/// Uniform-grid nearest-neighbor index over a fixed point set.
struct PointGrid<'a> {
    points: &'a [Vec3],
    origin: Vec3,
    cell: f64,
    dims: [i64; 3],
    buckets: Vec<Vec<u32>>,
}

impl<'a> PointGrid<'a> {
    fn build(points: &'a [Vec3]) -> Self {
        assert!(!points.is_empty());
        let mut lo = points[0];
        let mut hi = points[0];
        for p in points {
            for d in 0..3 {
                lo[d] = lo[d].min(p[d]);
                hi[d] = hi[d].max(p[d]);
            }
        }
        let extent = hi - lo;
        let longest = extent.max().max(1e-12);
        let per_axis = ((points.len() as f64).cbrt().ceil() as usize).clamp(1, 32);
        let cell = longest / per_axis as f64;
        let dims = [
            (extent.x / cell).floor() as i64 + 1,
            (extent.y / cell).floor() as i64 + 1,
            (extent.z / cell).floor() as i64 + 1,
        ];
        let mut buckets = vec![Vec::new(); (dims[0] * dims[1] * dims[2]) as usize];
        for (i, p) in points.iter().enumerate() {
            let c = Self::coords(p, lo, cell, dims, true);
            buckets[Self::bucket(c, dims)].push(i as u32);
        }
        Self {
            points,
            origin: lo,
            cell,
            dims,
            buckets,
        }
    }

    fn coords(p: &Vec3, origin: Vec3, cell: f64, dims: [i64; 3], clamp: bool) -> [i64; 3] {
        // window keeps later ring arithmetic far from i64 overflow while
        // staying outside any representable grid
        const WINDOW: f64 = (1i64 << 40) as f64;
        let mut c = [0i64; 3];
        for d in 0..3 {
            let raw = ((p[d] - origin[d]) / cell).floor().clamp(-WINDOW, WINDOW) as i64;
            c[d] = if clamp { raw.clamp(0, dims[d] - 1) } else { raw };
        }
        c
    }

    fn bucket(c: [i64; 3], dims: [i64; 3]) -> usize {
        ((c[2] * dims[1] + c[1]) * dims[0] + c[0]) as usize
    }

    /// Index and squared distance of the nearest stored point.
    fn nearest(&self, p: &Vec3) -> (usize, f64) {
        let c = Self::coords(p, self.origin, self.cell, self.dims, false);
        // rings closer than the gap to the grid box are empty, rings beyond
        // the far corner add no cells
        let (mut r_start, mut r_end) = (0i64, 0i64);
        for d in 0..3 {
            let gap = (-c[d]).max(c[d] - (self.dims[d] - 1)).max(0);
            r_start = r_start.max(gap);
            r_end = r_end.max(c[d].abs().max((c[d] - (self.dims[d] - 1)).abs()));
        }
        let mut best = (0usize, f64::INFINITY);
        for ring in r_start..=r_end {
            for z in (c[2] - ring).max(0)..=(c[2] + ring).min(self.dims[2] - 1) {
                for y in (c[1] - ring).max(0)..=(c[1] + ring).min(self.dims[1] - 1) {
                    for x in (c[0] - ring).max(0)..=(c[0] + ring).min(self.dims[0] - 1) {
                        let cheb = (x - c[0]).abs().max((y - c[1]).abs()).max((z - c[2]).abs());
                        if cheb != ring {
                            continue;
                        }
                        for &i in &self.buckets[Self::bucket([x, y, z], self.dims)] {
                            let d2 = (self.points[i as usize] - p).norm_squared();
                            if d2 < best.1 {
                                best = (i as usize, d2);
                            }
                        }
                    }
                }
            }
            // any point beyond ring r sits at least (r * cell) away
            let safe = ring as f64 * self.cell;
            if best.1 <= safe * safe {
                break;
            }
        }
        best
    }
}

/// One-directional mean squared nearest distance and mean normal cosine.
fn directed(from: &SurfaceSamples, to: &SurfaceSamples) -> (f64, f64) {
    let grid = PointGrid::build(&to.points);
    let mut d2_sum = 0.0;
    let mut cos_sum = 0.0;
    for (p, na) in from.points.iter().zip(&from.normals) {
        let (j, d2) = grid.nearest(p);
        d2_sum += d2;
        let nb = &to.normals[j];
        cos_sum += na.dot(nb) / (na.norm() * nb.norm());
    }
    let n = from.points.len() as f64;
    (d2_sum / n, cos_sum / n)
}

/// Symmetric mean squared nearest-point distance between two point sets.
pub fn chamfer_points(a: &[Vec3], b: &[Vec3]) -> Result<f64, PipelineError> {
    if a.is_empty() || b.is_empty() {
        return Err(PipelineError::Metric {
            what: "cannot compare empty point sets".into(),
        });
    }
    let unit = |pts: &[Vec3]| SurfaceSamples {
        points: pts.to_vec(),
        normals: vec![Vec3::new(0.0, 0.0, 1.0); pts.len()],
    };
    let (sa, sb) = (unit(a), unit(b));
    let (ab, _) = directed(&sa, &sb);
    let (ba, _) = directed(&sb, &sa);
    Ok(0.5 * (ab + ba))
}

/// Chamfer and normal consistency over `samples` area-weighted points per
/// mesh, both directions averaged.
pub fn mesh_metrics(
    pred: &Mesh,
    gt: &Mesh,
    samples: usize,
    seed: u64,
) -> Result<MeshMetrics, PipelineError> {
    let sp = sample_surface(pred, samples, seed)?;
    let sg = sample_surface(gt, samples, seed)?;
    let (ab, cab) = directed(&sp, &sg);
    let (ba, cba) = directed(&sg, &sp);
    Ok(MeshMetrics {
        chamfer: 0.5 * (ab + ba),
        normal_consistency: 0.5 * (cab + cba),
    })
}

/// One-directional mean squared distance from samples of the listed gt faces
/// to the predicted surface's samples.
pub fn chamfer_restricted(
    pred: &Mesh,
    gt: &Mesh,
    gt_faces: &[usize],
    samples: usize,
    seed: u64,
) -> Result<f64, PipelineError> {
    if gt_faces.is_empty() {
        return Err(PipelineError::Metric {
            what: "empty face subset".into(),
        });
    }
    let sg = sample_on(gt, gt_faces, samples, seed)?;
    let sp = sample_surface(pred, samples, seed)?;
    let (d2, _) = directed(&sg, &sp);
    Ok(d2)
}

/// PSNR over pixels where `mask > 0.5`, all channels, peak 1.0.
pub fn masked_psnr(pred: &Image, gt: &Image, mask: &Image) -> Result<f64, PipelineError> {
    check_image_pair(pred, gt, mask)?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for pix in 0..mask.data.len() {
        if mask.data[pix] > 0.5 {
            for c in 0..pred.channels {
                let d = pred.data[pix * pred.channels + c] - gt.data[pix * gt.channels + c];
                sum += d * d;
            }
            count += pred.channels;
        }
    }
    if count == 0 {
        return Err(PipelineError::Metric {
            what: "mask selects no pixels".into(),
        });
    }
    let mse = sum / count as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(-10.0 * mse.log10())
}

/// Mean SSIM over windows whose center pixel has `mask > 0.5`.
pub fn masked_ssim(pred: &Image, gt: &Image, mask: &Image) -> Result<f64, PipelineError> {
    check_image_pair(pred, gt, mask)?;
    let result = ssim(pred, gt, DEFAULT_WINDOW, DEFAULT_SIGMA)?;
    let half = DEFAULT_WINDOW / 2;
    let mut sum = 0.0;
    let mut count = 0usize;
    for wy in 0..result.map_height {
        for wx in 0..result.map_width {
            let center = (wy + half) * mask.width + (wx + half);
            if mask.data[center] > 0.5 {
                sum += result.map[wy * result.map_width + wx];
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(PipelineError::Metric {
            what: "mask selects no SSIM windows".into(),
        });
    }
    Ok(sum / count as f64)
}

fn check_image_pair(pred: &Image, gt: &Image, mask: &Image) -> Result<(), PipelineError> {
    if !pred.same_shape(gt) {
        return Err(PipelineError::Metric {
            what: format!(
                "image shapes differ: {}x{}x{} vs {}x{}x{}",
                pred.width, pred.height, pred.channels, gt.width, gt.height, gt.channels
            ),
        });
    }
    if mask.width != pred.width || mask.height != pred.height || mask.channels != 1 {
        return Err(PipelineError::Metric {
            what: "mask must be single-channel at the image resolution".into(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::{generate_synthetic, SynthConfig};
    use approx::assert_relative_eq;

    fn small_synth(seed: u64) -> crate::pipeline::SynthOutput {
        generate_synthetic(
            &SynthConfig {
                frames: 2,
                rings: 6,
                segments: 10,
                image_size: 32,
                focal: 40.0,
                ..SynthConfig::default()
            },
            seed,
        )
        .unwrap()
    }

    #[test]
    fn identical_meshes_score_perfectly() {
        let mesh = small_synth(1).dataset.template;
        let m = mesh_metrics(&mesh, &mesh, 2000, 3).unwrap();
        assert_eq!(m.chamfer, 0.0);
        assert!(m.normal_consistency > 1.0 - 1e-12);
    }

    #[test]
    fn single_points_at_distance_d_give_d_squared() {
        let d = 0.37;
        let a = vec![Vec3::new(0.0, 0.0, 0.0)];
        let b = vec![Vec3::new(d, 0.0, 0.0)];
        assert_relative_eq!(
            chamfer_points(&a, &b).unwrap(),
            d * d,
            max_relative = 1e-12
        );
    }

    #[test]
    fn translation_shows_up_as_bounded_chamfer() {
        let mesh = small_synth(2).dataset.template;
        let moved = Mesh::new(
            mesh.vertices
                .iter()
                .map(|v| v + Vec3::new(0.05, 0.0, 0.0))
                .collect(),
            mesh.faces.clone(),
        );
        let m = mesh_metrics(&mesh, &moved, 4000, 5).unwrap();
        assert!(m.chamfer > 1e-5, "chamfer {}", m.chamfer);
        assert!(m.chamfer <= 0.05 * 0.05 + 1e-9, "chamfer {}", m.chamfer);
        assert!(m.normal_consistency > 0.8);
    }

    #[test]
    fn grid_nearest_matches_brute_force() {
        let mut rng = StdRng::seed_from_u64(8);
        let a: Vec<Vec3> = (0..500)
            .map(|_| Vec3::new(rng.gen(), rng.gen(), rng.gen()))
            .collect();
        let b: Vec<Vec3> = (0..700)
            .map(|_| Vec3::new(rng.gen(), 2.0 * rng.gen::<f64>(), rng.gen()))
            .collect();
        let grid = PointGrid::build(&b);
        for p in &a {
            let (_, got) = grid.nearest(p);
            let want = b
                .iter()
                .map(|q| (q - p).norm_squared())
                .fold(f64::INFINITY, f64::min);
            assert_eq!(got.to_bits(), want.to_bits());
        }
        // far-outside queries take the early rings
        let far = Vec3::new(50.0, -40.0, 7.0);
        let (_, got) = grid.nearest(&far);
        let want = b
            .iter()
            .map(|q| (q - far).norm_squared())
            .fold(f64::INFINITY, f64::min);
        assert_eq!(got.to_bits(), want.to_bits());
    }

    #[test]
    fn psnr_hits_known_values() {
        let gt = Image::zeros(16, 16, 3);
        let pred = Image::filled(16, 16, 3, 0.1);
        let mask = Image::filled(16, 16, 1, 1.0);
        assert_relative_eq!(
            masked_psnr(&pred, &gt, &mask).unwrap(),
            20.0,
            max_relative = 1e-12
        );
        assert!(masked_psnr(&gt, &gt, &mask).unwrap().is_infinite());
        let empty = Image::zeros(16, 16, 1);
        assert!(masked_psnr(&pred, &gt, &empty).is_err());
    }

    #[test]
    fn masked_ssim_ignores_corruption_away_from_the_mask() {
        let mut rng = StdRng::seed_from_u64(4);
        let mut gt = Image::zeros(32, 32, 1);
        for v in &mut gt.data {
            *v = rng.gen_range(0.0..1.0);
        }
        let mut pred = gt.clone();
        for y in 0..2 {
            for x in 0..2 {
                pred.set(x, y, 0, 1.0 - pred.get(x, y, 0));
            }
        }
        let mut mask = Image::zeros(32, 32, 1);
        for y in 8..24 {
            for x in 8..24 {
                mask.set(x, y, 0, 1.0);
            }
        }
        let masked = masked_ssim(&pred, &gt, &mask).unwrap();
        assert!(masked > 1.0 - 1e-9, "masked ssim {masked}");
        let full = ssim(&pred, &gt, DEFAULT_WINDOW, DEFAULT_SIGMA).unwrap().mean;
        assert!(full < masked);
    }

    #[test]
    fn band_restricted_chamfer_isolates_the_wrinkles() {
        let out = generate_synthetic(
            &SynthConfig {
                frames: 4,
                rings: 12,
                segments: 16,
                image_size: 32,
                focal: 40.0,
                wrinkle_amp: 0.06,
                // wrinkles only, so all deviation is inside the band
                billow: 0.0,
                ..SynthConfig::default()
            },
            5,
        )
        .unwrap();
        let template = &out.dataset.template;
        let gt = &out.gt_canonical[1];
        let all: Vec<usize> = (0..gt.faces.len()).collect();
        let complement: Vec<usize> = all
            .iter()
            .copied()
            .filter(|f| !out.band_faces.contains(f))
            .collect();
        let on_band = chamfer_restricted(template, gt, &out.band_faces, 20_000, 2).unwrap();
        let off_band = chamfer_restricted(template, gt, &complement, 20_000, 2).unwrap();
        assert!(
            on_band > 2.0 * off_band,
            "band {on_band} vs complement {off_band}"
        );
    }
}
