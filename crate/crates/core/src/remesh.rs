//! Gradient-driven adaptive remeshing.
//!
//! Rendering-loss gradients are accumulated per rasterized face; faces whose
//! mean gradient sits in the top quantile and whose edges are all long enough
//! get their edges split at the midpoint. Edge flips then restore triangle
//! quality, cleanup removes degenerate faces and merges near-coincident
//! vertices, and mesh-resident state follows the new topology by k-NN
//! interpolation. Every pass either improves the mesh or leaves it untouched;
//! it never produces an invalid one.

use crate::img::Image;
use crate::mesh::{degenerate_tol_for, triangle_area, Mesh};
use crate::render::{Raster, NO_FACE};
use crate::skinning::{derive_weights, SkinWeights};
use crate::{Mat3, Vec3};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

#[derive(Debug, thiserror::Error)]
pub enum RemeshError {
    #[error("gradient image is {got_w}x{got_h}, raster is {raster_w}x{raster_h}")]
    ResolutionMismatch {
        raster_w: usize,
        raster_h: usize,
        got_w: usize,
        got_h: usize,
    },
    #[error("raster references face {face} but the accumulator tracks {faces} faces")]
    FaceOutOfRange { face: usize, faces: usize },
    #[error("attribute list holds {got} entries, mesh has {expected}")]
    AttributeCount { got: usize, expected: usize },
    #[error("invalid remesh config: {what}")]
    BadConfig { what: &'static str },
}

/// Per-face running totals of rendering-gradient magnitude.
#[derive(Debug, Clone)]
pub struct GradientAccumulator {
    sums: Vec<f64>,
    counts: Vec<u64>,
    iterations: u64,
}

impl GradientAccumulator {
    pub fn new(num_faces: usize) -> Self {
        Self {
            sums: vec![0.0; num_faces],
            counts: vec![0; num_faces],
            iterations: 0,
        }
    }

    pub fn num_faces(&self) -> usize {
        self.sums.len()
    }

    pub fn iterations(&self) -> u64 {
        self.iterations
    }

    /// Adds one rendered view: every covered pixel contributes its gradient
    /// magnitude to the face that owns it.
    pub fn accumulate(&mut self, raster: &Raster, grads: &Image) -> Result<(), RemeshError> {
        if grads.width != raster.width || grads.height != raster.height {
            return Err(RemeshError::ResolutionMismatch {
                raster_w: raster.width,
                raster_h: raster.height,
                got_w: grads.width,
                got_h: grads.height,
            });
        }
        for (pix, &face) in raster.face.iter().enumerate() {
            if face == NO_FACE {
                continue;
            }
            if face >= self.sums.len() {
                return Err(RemeshError::FaceOutOfRange {
                    face,
                    faces: self.sums.len(),
                });
            }
            let mut mag2 = 0.0;
            for c in 0..grads.channels {
                let g = grads.data[pix * grads.channels + c];
                mag2 += g * g;
            }
            self.sums[face] += mag2.sqrt();
            self.counts[face] += 1;
        }
        self.iterations += 1;
        Ok(())
    }

    /// Mean gradient magnitude; None for faces never rasterized.
    pub fn mean(&self, face: usize) -> Option<f64> {
        if self.counts[face] == 0 {
            None
        } else {
            Some(self.sums[face] / self.counts[face] as f64)
        }
    }

    pub fn reset(&mut self, num_faces: usize) {
        self.sums.clear();
        self.sums.resize(num_faces, 0.0);
        self.counts.clear();
        self.counts.resize(num_faces, 0);
        self.iterations = 0;
    }
}

/// Selection thresholds and their linear schedules.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RemeshConfig {
    /// Face quantile: the top (1 - omega) fraction of rasterized faces
    /// qualifies. Rises over training so refinement tapers off.
    pub omega_start: f64,
    pub omega_end: f64,
    /// Minimum edge length as a fraction of the bounding-box diagonal; faces
    /// with any shorter edge are never split further.
    pub delta_start_rel: f64,
    pub delta_end_rel: f64,
    /// Epoch span over which both schedules run; past it they hold their end
    /// values.
    pub decay_epochs: usize,
    /// Vertices closer than this fraction of the diagonal merge in cleanup.
    pub merge_epsilon_rel: f64,
    /// Hard cap on edges split in one pass.
    pub max_splits: usize,
    /// Neighbors used when pulling attributes onto the new topology.
    pub knn: usize,
}

impl Default for RemeshConfig {
    fn default() -> Self {
        Self {
            omega_start: 0.9,
            omega_end: 0.98,
            delta_start_rel: 0.04,
            delta_end_rel: 0.01,
            decay_epochs: 300,
            merge_epsilon_rel: 1e-9,
            max_splits: 10_000,
            knn: 3,
        }
    }
}

impl RemeshConfig {
    pub fn validate(&self) -> Result<(), RemeshError> {
        for omega in [self.omega_start, self.omega_end] {
            if !(omega > 0.0 && omega <= 1.0) {
                return Err(RemeshError::BadConfig {
                    what: "omega must lie in (0, 1]",
                });
            }
        }
        for delta in [self.delta_start_rel, self.delta_end_rel] {
            if !(delta > 0.0) {
                return Err(RemeshError::BadConfig {
                    what: "delta_length must be positive",
                });
            }
        }
        if !(self.merge_epsilon_rel >= 0.0) {
            return Err(RemeshError::BadConfig {
                what: "merge epsilon must be nonnegative",
            });
        }
        if self.knn == 0 {
            return Err(RemeshError::BadConfig {
                what: "knn must be at least 1",
            });
        }
        Ok(())
    }

    pub fn omega(&self, epoch: usize) -> f64 {
        lerp_schedule(self.omega_start, self.omega_end, epoch, self.decay_epochs)
    }

    pub fn delta_rel(&self, epoch: usize) -> f64 {
        lerp_schedule(
            self.delta_start_rel,
            self.delta_end_rel,
            epoch,
            self.decay_epochs,
        )
    }
}

fn lerp_schedule(start: f64, end: f64, epoch: usize, span: usize) -> f64 {
    if span == 0 {
        return end;
    }
    let t = (epoch as f64 / span as f64).min(1.0);
    start + (end - start) * t
}

/// The faces and edges one pass will refine.
#[derive(Debug, Clone)]
pub struct Selection {
    /// Top-quantile faces by mean gradient, ascending index.
    pub f_omega: Vec<usize>,
    /// The subset whose every edge is at least delta long, ascending index.
    pub f_delta: Vec<usize>,
    /// Union of the surviving faces' edges, ascending edge index.
    pub edges: Vec<usize>,
}

/// Applies the quantile and edge-length thresholds at the given epoch.
/// Never-rasterized faces are ineligible; equal means break ties toward the
/// lower face index.
pub fn select_edges(
    mesh: &Mesh,
    acc: &GradientAccumulator,
    config: &RemeshConfig,
    epoch: usize,
) -> Selection {
    let mut eligible: Vec<(usize, f64)> = (0..mesh.num_faces())
        .filter_map(|f| acc.mean(f).map(|m| (f, m)))
        .collect();
    if eligible.is_empty() {
        return Selection {
            f_omega: Vec::new(),
            f_delta: Vec::new(),
            edges: Vec::new(),
        };
    }
    eligible.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    let omega = config.omega(epoch);
    let take = ((1.0 - omega) * eligible.len() as f64).ceil() as usize;
    let take = take.min(eligible.len());
    let mut f_omega: Vec<usize> = eligible[..take].iter().map(|&(f, _)| f).collect();
    f_omega.sort_unstable();

    let delta = config.delta_rel(epoch) * mesh.bbox_diagonal();
    let f_delta: Vec<usize> = f_omega
        .iter()
        .copied()
        .filter(|&f| {
            let [a, b, c] = mesh.faces[f];
            let long = |u: usize, v: usize| (mesh.vertices[u] - mesh.vertices[v]).norm() >= delta;
            long(a, b) && long(b, c) && long(c, a)
        })
        .collect();

    let mut edges = BTreeSet::new();
    for &f in &f_delta {
        let [a, b, c] = mesh.faces[f];
        for (u, v) in [(a, b), (b, c), (c, a)] {
            edges.insert(mesh.edge_index(u, v).expect("face edge must exist"));
        }
    }
    let edges: Vec<usize> = edges.into_iter().take(config.max_splits).collect();
    Selection {
        f_omega,
        f_delta,
        edges,
    }
}

/// Maps every element of the new mesh back to its source where the geometry
/// is unchanged; refined elements carry None and are filled by k-NN.
#[derive(Debug, Clone)]
pub struct Provenance {
    pub face_source: Vec<Option<usize>>,
    pub vertex_source: Vec<Option<usize>>,
}

#[derive(Debug, Clone)]
pub struct RemeshOutcome {
    pub mesh: Mesh,
    pub provenance: Provenance,
    pub splits: usize,
    pub flips: usize,
    pub merges: usize,
    /// Merging would have broken validity, so the pass kept all vertices.
    pub merges_skipped: bool,
}

/// One audit line per pass.
#[derive(Debug, Clone)]
pub struct RemeshAudit {
    pub epoch: usize,
    pub f_omega: usize,
    pub f_delta: usize,
    pub selected_edges: usize,
    pub splits: usize,
    pub flips: usize,
    pub merges: usize,
    pub vertices: usize,
    pub faces: usize,
}

impl fmt::Display for RemeshAudit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "remesh epoch={} f_omega={} f_delta={} edges={} splits={} flips={} merges={} verts={} faces={}",
            self.epoch,
            self.f_omega,
            self.f_delta,
            self.selected_edges,
            self.splits,
            self.flips,
            self.merges,
            self.vertices,
            self.faces
        )
    }
}

struct WorkMesh {
    verts: Vec<Vec3>,
    faces: Vec<[usize; 3]>,
    face_src: Vec<Option<usize>>,
    vert_src: Vec<Option<usize>>,
}

/// Splits the selected edges, flips for quality, cleans up, and returns the
/// new mesh with provenance. An empty selection returns the input unchanged.
pub fn remesh(mesh: &Mesh, selected_edges: &[usize], config: &RemeshConfig) -> RemeshOutcome {
    if selected_edges.is_empty() {
        return RemeshOutcome {
            mesh: mesh.clone(),
            provenance: Provenance {
                face_source: (0..mesh.num_faces()).map(Some).collect(),
                vertex_source: (0..mesh.num_vertices()).map(Some).collect(),
            },
            splits: 0,
            flips: 0,
            merges: 0,
            merges_skipped: false,
        };
    }

    let mut work = WorkMesh {
        verts: mesh.vertices.clone(),
        faces: mesh.faces.clone(),
        face_src: (0..mesh.num_faces()).map(Some).collect(),
        vert_src: (0..mesh.num_vertices()).map(Some).collect(),
    };

    // Splits, in ascending edge order. Ring vertices bound the region later
    // flips are allowed to touch.
    let mut pairs: Vec<[usize; 2]> = {
        let mut set: BTreeSet<usize> = selected_edges.iter().copied().collect();
        set.retain(|&e| e < mesh.edges().len());
        set.iter().map(|&e| mesh.edges()[e]).collect()
    };
    pairs.sort_unstable();
    let mut splits = 0usize;
    let mut ring_verts: BTreeSet<usize> = BTreeSet::new();
    for [a, b] in pairs {
        let incident: Vec<usize> = (0..work.faces.len())
            .filter(|&f| {
                let fc = work.faces[f];
                fc.contains(&a) && fc.contains(&b)
            })
            .collect();
        if incident.is_empty() {
            continue;
        }
        let m = work.verts.len();
        work.verts.push(0.5 * (work.verts[a] + work.verts[b]));
        work.vert_src.push(None);
        ring_verts.insert(m);
        for f in incident {
            for &v in &work.faces[f] {
                ring_verts.insert(v);
            }
            let (p, q, r) = directed_edge(&work.faces[f], a, b)
                .or_else(|| directed_edge(&work.faces[f], b, a))
                .expect("incident face must contain the edge");
            work.faces[f] = [p, m, r];
            work.face_src[f] = None;
            work.faces.push([m, q, r]);
            work.face_src.push(None);
        }
        splits += 1;
    }

    let flips = flip_pass(&mut work, &ring_verts);
    let merge_epsilon = config.merge_epsilon_rel * mesh.bbox_diagonal();
    let (merges, merges_skipped) = cleanup(&mut work, merge_epsilon);
    compact_vertices(&mut work);

    let out = Mesh::new(work.verts, work.faces);
    debug_assert!(out.validate().is_valid());
    RemeshOutcome {
        mesh: out,
        provenance: Provenance {
            face_source: work.face_src,
            vertex_source: work.vert_src,
        },
        splits,
        flips,
        merges,
        merges_skipped,
    }
}

/// Locates `a -> b` in the face's cyclic order; returns (a, b, third).
fn directed_edge(face: &[usize; 3], a: usize, b: usize) -> Option<(usize, usize, usize)> {
    for i in 0..3 {
        if face[i] == a && face[(i + 1) % 3] == b {
            return Some((a, b, face[(i + 2) % 3]));
        }
    }
    None
}

fn min_corner_angle(p: &Vec3, q: &Vec3, r: &Vec3) -> f64 {
    let at = |a: &Vec3, b: &Vec3, c: &Vec3| {
        let u = b - a;
        let v = c - a;
        let nu = u.norm();
        let nv = v.norm();
        if nu == 0.0 || nv == 0.0 {
            return 0.0;
        }
        (u.dot(&v) / (nu * nv)).clamp(-1.0, 1.0).acos()
    };
    at(p, q, r).min(at(q, r, p)).min(at(r, p, q))
}

fn unit_normal(verts: &[Vec3], face: &[usize; 3]) -> Vec3 {
    let n = (verts[face[1]] - verts[face[0]]).cross(&(verts[face[2]] - verts[face[0]]));
    let len = n.norm();
    if len == 0.0 {
        Vec3::zeros()
    } else {
        n / len
    }
}

/// Flipping a non-planar quad reshapes the surface, so new faces must stay
/// within about 11 degrees of the old pair's average normal. Planar split
/// fans always qualify; sharp creases never do.
const FLIP_COPLANAR_COS: f64 = 0.98;

/// Flips edges inside the refined region while the minimum incident angle
/// strictly improves. Guards: interior edge, consistent winding, opposite
/// diagonal absent, near-coplanar result, no degenerate result, and both
/// endpoints keep valence above 3. Only faces holding a ring vertex may be
/// rebuilt, so everything outside the split fans' 1-ring stays put.
fn flip_pass(work: &mut WorkMesh, ring_verts: &BTreeSet<usize>) -> usize {
    let tol = degenerate_tol_for(&work.verts);
    let mut flips = 0usize;
    for _round in 0..10 {
        let mut edge_faces: BTreeMap<[usize; 2], Vec<usize>> = BTreeMap::new();
        for (f, face) in work.faces.iter().enumerate() {
            for i in 0..3 {
                let (u, v) = (face[i], face[(i + 1) % 3]);
                let key = [u.min(v), u.max(v)];
                edge_faces.entry(key).or_default().push(f);
            }
        }
        let mut valence = vec![0usize; work.verts.len()];
        for &[u, v] in edge_faces.keys() {
            valence[u] += 1;
            valence[v] += 1;
        }
        let in_ring: Vec<bool> = work
            .faces
            .iter()
            .map(|f| f.iter().any(|v| ring_verts.contains(v)))
            .collect();
        let mut edge_set: BTreeSet<[usize; 2]> = edge_faces.keys().copied().collect();
        let mut touched: BTreeSet<usize> = BTreeSet::new();
        let mut applied = 0usize;

        let candidates: Vec<([usize; 2], Vec<usize>)> = edge_faces
            .iter()
            .filter(|(_, fs)| fs.len() == 2 && fs.iter().all(|&f| in_ring[f]))
            .map(|(&e, fs)| (e, fs.clone()))
            .collect();
        for ([a, b], fs) in candidates {
            let (i1, i2) = (fs[0], fs[1]);
            if touched.contains(&i1) || touched.contains(&i2) {
                continue;
            }
            if !edge_set.contains(&[a, b]) {
                continue;
            }
            // Orient so f1 holds a -> b and f2 holds b -> a.
            let (f1, f2, c, d) = match directed_edge(&work.faces[i1], a, b) {
                Some((_, _, c)) => match directed_edge(&work.faces[i2], b, a) {
                    Some((_, _, d)) => (i1, i2, c, d),
                    None => continue,
                },
                None => match (
                    directed_edge(&work.faces[i2], a, b),
                    directed_edge(&work.faces[i1], b, a),
                ) {
                    (Some((_, _, c)), Some((_, _, d))) => (i2, i1, c, d),
                    _ => continue,
                },
            };
            if c == d || edge_set.contains(&[c.min(d), c.max(d)]) {
                continue;
            }
            if valence[a] <= 3 || valence[b] <= 3 {
                continue;
            }
            let g1 = [c, a, d];
            let g2 = [d, b, c];
            let area = |f: &[usize; 3]| {
                triangle_area(&work.verts[f[0]], &work.verts[f[1]], &work.verts[f[2]])
            };
            if area(&g1) < tol || area(&g2) < tol {
                continue;
            }
            let old_min = min_corner_angle(
                &work.verts[work.faces[f1][0]],
                &work.verts[work.faces[f1][1]],
                &work.verts[work.faces[f1][2]],
            )
            .min(min_corner_angle(
                &work.verts[work.faces[f2][0]],
                &work.verts[work.faces[f2][1]],
                &work.verts[work.faces[f2][2]],
            ));
            let new_min = min_corner_angle(&work.verts[c], &work.verts[a], &work.verts[d]).min(
                min_corner_angle(&work.verts[d], &work.verts[b], &work.verts[c]),
            );
            if new_min <= old_min + 1e-12 {
                continue;
            }
            let n_ref = unit_normal(&work.verts, &work.faces[f1])
                + unit_normal(&work.verts, &work.faces[f2]);
            let len = n_ref.norm();
            if len < 1e-12 {
                continue;
            }
            let n_ref = n_ref / len;
            if unit_normal(&work.verts, &g1).dot(&n_ref) <= FLIP_COPLANAR_COS
                || unit_normal(&work.verts, &g2).dot(&n_ref) <= FLIP_COPLANAR_COS
            {
                continue;
            }

            work.faces[f1] = g1;
            work.faces[f2] = g2;
            work.face_src[f1] = None;
            work.face_src[f2] = None;
            touched.insert(f1);
            touched.insert(f2);
            edge_set.remove(&[a, b]);
            edge_set.insert([c.min(d), c.max(d)]);
            valence[a] -= 1;
            valence[b] -= 1;
            valence[c] += 1;
            valence[d] += 1;
            applied += 1;
        }
        flips += applied;
        if applied == 0 {
            break;
        }
    }
    flips
}

/// Drops degenerate faces, merges near-coincident vertices (keeping the lower
/// index), and drops duplicate faces. If merging would invalidate the mesh,
/// the whole merge step is skipped.
fn cleanup(work: &mut WorkMesh, merge_epsilon: f64) -> (usize, bool) {
    drop_bad_faces(work);
    if merge_epsilon <= 0.0 {
        return (0, false);
    }

    let n = work.verts.len();
    let mut root: Vec<usize> = (0..n).collect();
    fn find(root: &mut Vec<usize>, mut i: usize) -> usize {
        while root[i] != i {
            root[i] = root[root[i]];
            i = root[i];
        }
        i
    }
    let mut any = false;
    for i in 0..n {
        for j in (i + 1)..n {
            if (work.verts[i] - work.verts[j]).norm() < merge_epsilon {
                let (ri, rj) = (find(&mut root, i), find(&mut root, j));
                if ri != rj {
                    let (keep, drop) = (ri.min(rj), ri.max(rj));
                    root[drop] = keep;
                    any = true;
                }
            }
        }
    }
    if !any {
        return (0, false);
    }

    let remap: Vec<usize> = (0..n).map(|i| find(&mut root, i)).collect();
    let merged_away = remap.iter().enumerate().filter(|&(i, &r)| r != i).count();
    let mut candidate = WorkMesh {
        verts: work.verts.clone(),
        faces: Vec::new(),
        face_src: Vec::new(),
        vert_src: work.vert_src.clone(),
    };
    let mut seen = BTreeSet::new();
    for (f, face) in work.faces.iter().enumerate() {
        let mapped = [remap[face[0]], remap[face[1]], remap[face[2]]];
        let mut key = mapped;
        key.sort_unstable();
        if key[0] == key[1] || key[1] == key[2] || !seen.insert(key) {
            continue;
        }
        candidate.faces.push(mapped);
        // Any remapped corner moved the face off its source geometry.
        candidate.face_src.push(if mapped == *face {
            work.face_src[f]
        } else {
            None
        });
    }
    drop_bad_faces(&mut candidate);

    let probe = Mesh::new(candidate.verts.clone(), candidate.faces.clone());
    if candidate.faces.is_empty() || !probe.validate().is_valid() {
        return (0, true);
    }
    *work = candidate;
    (merged_away, false)
}

/// Removes faces with repeated vertices or area below the degeneracy
/// tolerance.
fn drop_bad_faces(work: &mut WorkMesh) {
    let tol = degenerate_tol_for(&work.verts);
    let mut faces = Vec::with_capacity(work.faces.len());
    let mut srcs = Vec::with_capacity(work.faces.len());
    for (f, face) in work.faces.iter().enumerate() {
        let [a, b, c] = *face;
        if a == b || b == c || a == c {
            continue;
        }
        if triangle_area(&work.verts[a], &work.verts[b], &work.verts[c]) < tol {
            continue;
        }
        faces.push(*face);
        srcs.push(work.face_src[f]);
    }
    work.faces = faces;
    work.face_src = srcs;
}

/// Drops unreferenced vertices, preserving relative order.
fn compact_vertices(work: &mut WorkMesh) {
    let mut used = vec![false; work.verts.len()];
    for face in &work.faces {
        for &v in face {
            used[v] = true;
        }
    }
    if used.iter().all(|&u| u) {
        return;
    }
    let mut remap = vec![usize::MAX; work.verts.len()];
    let mut verts = Vec::new();
    let mut srcs = Vec::new();
    for (i, &keep) in used.iter().enumerate() {
        if keep {
            remap[i] = verts.len();
            verts.push(work.verts[i]);
            srcs.push(work.vert_src[i]);
        }
    }
    for face in &mut work.faces {
        for v in face.iter_mut() {
            *v = remap[*v];
        }
    }
    work.verts = verts;
    work.vert_src = srcs;
}

/// Inverse-distance k-NN pull of per-element rows from old sites to new ones.
/// Elements with a provenance source copy their row exactly, as do sites that
/// coincide with an old site.
pub fn knn_rows(
    old_sites: &[Vec3],
    rows: &[Vec<f64>],
    new_sites: &[Vec3],
    source: &[Option<usize>],
    k: usize,
) -> Vec<Vec<f64>> {
    assert_eq!(old_sites.len(), rows.len());
    assert_eq!(new_sites.len(), source.len());
    assert!(!old_sites.is_empty() || new_sites.is_empty());
    let k = k.clamp(1, old_sites.len().max(1));
    let (lo, hi) = crate::mesh::bbox(old_sites);
    let coincident = 1e-9 * (hi - lo).norm().max(1.0);

    let mut out = Vec::with_capacity(new_sites.len());
    for (i, site) in new_sites.iter().enumerate() {
        if let Some(j) = source[i] {
            out.push(rows[j].clone());
            continue;
        }
        let mut near: Vec<(f64, usize)> = old_sites
            .iter()
            .enumerate()
            .map(|(j, s)| ((site - s).norm(), j))
            .collect();
        near.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        near.truncate(k);
        if near[0].0 < coincident {
            out.push(rows[near[0].1].clone());
            continue;
        }
        let weights: Vec<f64> = near.iter().map(|&(d, _)| 1.0 / d).collect();
        let total: f64 = weights.iter().sum();
        let mut row = vec![0.0; rows[near[0].1].len()];
        for (&(_, j), &w) in near.iter().zip(&weights) {
            for (acc, v) in row.iter_mut().zip(&rows[j]) {
                *acc += w / total * v;
            }
        }
        out.push(row);
    }
    out
}

/// Face-resident optimization state plus vertex-resident skinning weights.
#[derive(Debug, Clone)]
pub struct MeshAttributes {
    pub jacobians: Vec<Mat3>,
    pub moment1: Vec<Mat3>,
    pub moment2: Vec<Mat3>,
    pub weights: SkinWeights,
}

/// Carries all mesh-resident state onto the remeshed topology: face
/// attributes from the k nearest old face centers, skinning weights from the
/// k nearest old vertices (renormalized), exact copies wherever provenance
/// says the element is unchanged.
pub fn transfer_attributes(
    old_mesh: &Mesh,
    new_mesh: &Mesh,
    provenance: &Provenance,
    attrs: &MeshAttributes,
    config: &RemeshConfig,
    max_influences: usize,
) -> Result<MeshAttributes, RemeshError> {
    for (got, expected) in [
        (attrs.jacobians.len(), old_mesh.num_faces()),
        (attrs.moment1.len(), old_mesh.num_faces()),
        (attrs.moment2.len(), old_mesh.num_faces()),
        (attrs.weights.rows.len(), old_mesh.num_vertices()),
    ] {
        if got != expected {
            return Err(RemeshError::AttributeCount { got, expected });
        }
    }
    if provenance.face_source.len() != new_mesh.num_faces()
        || provenance.vertex_source.len() != new_mesh.num_vertices()
    {
        return Err(RemeshError::AttributeCount {
            got: provenance.face_source.len(),
            expected: new_mesh.num_faces(),
        });
    }

    let (old_centers, _, _) = old_mesh
        .face_geometry(&old_mesh.vertices)
        .expect("old mesh is valid");
    let (new_centers, _, _) = new_mesh
        .face_geometry(&new_mesh.vertices)
        .expect("new mesh is valid");

    let pack = |mats: &[Mat3]| -> Vec<Vec<f64>> {
        mats.iter()
            .map(|m| crate::fields::mat3_to_rows(m).to_vec())
            .collect()
    };
    let unpack = |rows: Vec<Vec<f64>>| -> Vec<Mat3> {
        rows.iter()
            .map(|r| crate::fields::mat3_from_rows(r))
            .collect()
    };
    let jac = unpack(knn_rows(
        &old_centers,
        &pack(&attrs.jacobians),
        &new_centers,
        &provenance.face_source,
        config.knn,
    ));
    let m1 = unpack(knn_rows(
        &old_centers,
        &pack(&attrs.moment1),
        &new_centers,
        &provenance.face_source,
        config.knn,
    ));
    let m2 = unpack(knn_rows(
        &old_centers,
        &pack(&attrs.moment2),
        &new_centers,
        &provenance.face_source,
        config.knn,
    ));

    let mut weights = derive_weights(
        &old_mesh.vertices,
        &attrs.weights,
        &new_mesh.vertices,
        config.knn,
        max_influences,
    );
    for (i, src) in provenance.vertex_source.iter().enumerate() {
        if let Some(j) = src {
            weights.rows[i] = attrs.weights.rows[*j].clone();
        }
    }

    Ok(MeshAttributes {
        jacobians: jac,
        moment1: m1,
        moment2: m2,
        weights,
    })
}
