//! Acceptance suite: ten numbered criteria, each printing one PASS/FAIL
//! line with its measured numbers (visible under `--nocapture`).

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use weft_core::img::Image;
use weft_core::io::JsonlLog;
use weft_core::losses::{
    l_depth, l_diffuse, l_mask, l_reg, sample_depth_pairs, ssim, LossWeights,
};
use weft_core::pipeline::{
    chamfer_restricted, generate_synthetic, masked_psnr, masked_ssim, mesh_metrics,
    run_appearance, run_geometry, AppearanceInputs, RunConfig,
};
use weft_core::poisson::PoissonSystem;
use weft_core::remesh::{remesh, transfer_attributes, MeshAttributes, RemeshConfig};
use weft_core::render::{render_backward, render_scene, soft_mask, soft_mask_backward, Camera};
use weft_core::skinning::{pose_transforms, skin, skin_backward, Pose, Skeleton, SkinWeights};
use weft_core::{Mat3, Mat4, Mesh, Vec3};

fn check(criterion: usize, ok: bool, detail: String) {
    println!(
        "criterion {criterion}: {} ({detail})",
        if ok { "PASS" } else { "FAIL" }
    );
    assert!(ok, "criterion {criterion}: {detail}");
}

/// Open tube of `rings` x `segments` vertices, mild flare, optional jitter.
fn tube(rings: usize, segments: usize, jitter: f64, seed: u64) -> Mesh {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut vertices = Vec::with_capacity(rings * segments);
    for r in 0..rings {
        let s = r as f64 / (rings - 1) as f64;
        let y = 1.0 - 2.0 * s;
        let radius = 0.5 + 0.12 * s;
        for k in 0..segments {
            let a = std::f64::consts::TAU * k as f64 / segments as f64;
            let mut p = Vec3::new(radius * a.cos(), y, radius * a.sin());
            if jitter > 0.0 {
                p += jitter * Vec3::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5);
            }
            vertices.push(p);
        }
    }
    let mut faces = Vec::with_capacity(2 * (rings - 1) * segments);
    for r in 0..rings - 1 {
        for k in 0..segments {
            let a = r * segments + k;
            let b = r * segments + (k + 1) % segments;
            let c = a + segments;
            let d = b + segments;
            faces.push([a, c, b]);
            faces.push([b, c, d]);
        }
    }
    Mesh::new(vertices, faces)
}

// ------------------------------------------------------------- criterion 1

#[test]
fn criterion_01_identity_jacobians_reproduce_the_rest_mesh() {
    let mesh = tube(26, 20, 0.0, 0);
    assert_eq!(mesh.num_faces(), 1000);
    assert!(mesh.validate().is_valid());

    let start = Instant::now();
    let system = PoissonSystem::new(&mesh).unwrap();
    let solved = system
        .solve(&vec![Mat3::identity(); mesh.num_faces()])
        .unwrap();
    let elapsed = start.elapsed().as_secs_f64();

    let diag = mesh.bbox_diagonal();
    let max_dev = solved
        .iter()
        .zip(&mesh.vertices)
        .map(|(p, q)| (p - q).norm())
        .fold(0.0, f64::max);
    check(
        1,
        max_dev <= 1e-6 * diag && elapsed < 1.0,
        format!(
            "max deviation {max_dev:.3e} of allowed {:.3e}, {elapsed:.3}s on 1000 faces",
            1e-6 * diag
        ),
    );
}

// ------------------------------------------------------------- criterion 2

/// Minimum-norm dense least-squares fit of the area-weighted gradient
/// residuals, built from the hat-function gradient formula and solved by
/// SVD, then recentered onto the rest centroid.
fn dense_poisson_oracle(mesh: &Mesh, jacobians: &[Mat3]) -> Vec<Vec3> {
    let n = mesh.num_vertices();
    let f = mesh.num_faces();
    let mut m = DMatrix::<f64>::zeros(3 * f, n);
    let mut rhs = DMatrix::<f64>::zeros(3 * f, 3);
    for (fi, face) in mesh.faces.iter().enumerate() {
        let [a, b, c] = *face;
        let (pa, pb, pc) = (mesh.vertices[a], mesh.vertices[b], mesh.vertices[c]);
        let cr = (pb - pa).cross(&(pc - pa));
        let area = 0.5 * cr.norm();
        let normal = cr / cr.norm();
        let grads = [
            normal.cross(&(pc - pb)) / (2.0 * area),
            normal.cross(&(pa - pc)) / (2.0 * area),
            normal.cross(&(pb - pa)) / (2.0 * area),
        ];
        let w = area.sqrt();
        for (k, &v) in face.iter().enumerate() {
            for comp in 0..3 {
                m[(3 * fi + comp, v)] += w * grads[k][comp];
            }
        }
        for r in 0..3 {
            for comp in 0..3 {
                rhs[(3 * fi + comp, r)] = w * jacobians[fi][(r, comp)];
            }
        }
    }
    let svd = m.svd(true, true);
    let mut out = vec![Vec3::zeros(); n];
    for r in 0..3 {
        let b = DVector::from(rhs.column(r).clone_owned());
        let x = svd.solve(&b, 1e-10).unwrap();
        let mean = x.mean();
        let rest = mesh.vertices.iter().map(|p| p[r]).sum::<f64>() / n as f64;
        for v in 0..n {
            out[v][r] = x[v] - mean + rest;
        }
    }
    out
}

#[test]
fn criterion_02_sparse_solve_matches_a_dense_oracle() {
    let mut rng = StdRng::seed_from_u64(92);
    let mut worst: f64 = 0.0;
    for i in 0..10u64 {
        let mesh = tube(
            3 + (i % 3) as usize,
            4 + (i % 4) as usize,
            0.04,
            1000 + i,
        );
        assert!(mesh.num_vertices() <= 100);
        assert!(mesh.validate().is_valid());
        let jacobians: Vec<Mat3> = (0..mesh.num_faces())
            .map(|_| Mat3::identity() + 0.3 * Mat3::from_fn(|_, _| rng.gen::<f64>() - 0.5))
            .collect();
        let sparse = PoissonSystem::new(&mesh)
            .unwrap()
            .solve(&jacobians)
            .unwrap();
        let dense = dense_poisson_oracle(&mesh, &jacobians);
        let scale = dense.iter().map(|p| p.norm()).fold(1.0, f64::max);
        let err = sparse
            .iter()
            .zip(&dense)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
            / scale;
        worst = worst.max(err);
    }
    check(
        2,
        worst <= 1e-8,
        format!("worst relative error {worst:.3e} over 10 meshes"),
    );
}

// ------------------------------------------------------------- criterion 3

fn two_bone_rig(mesh: &Mesh) -> (Skeleton, SkinWeights) {
    let skeleton = Skeleton {
        rest: vec![
            Mat4::new_translation(&Vec3::new(0.0, -0.5, 0.0)),
            Mat4::new_translation(&Vec3::new(0.0, 0.5, 0.0)),
        ],
        parents: vec![None, Some(0)],
    };
    let rows: Vec<Vec<f64>> = mesh
        .vertices
        .iter()
        .map(|p| {
            let s = ((p.y + 1.0) / 2.0).clamp(0.0, 1.0);
            let s = s * s * (3.0 - 2.0 * s);
            vec![1.0 - s, s]
        })
        .collect();
    (skeleton, SkinWeights::from_dense(&rows, 4))
}

#[test]
fn criterion_03_chain_adjoints_match_central_differences() {
    let start = Instant::now();
    let mesh = tube(3, 4, 0.0, 7);
    let n_params = mesh.num_faces() * 9;
    assert!(n_params <= 200);
    let (skeleton, weights) = two_bone_rig(&mesh);
    let pose = Pose {
        rotations: vec![Vec3::new(0.10, 0.00, 0.05), Vec3::new(0.00, 0.20, 0.30)],
        root_translation: Vec3::new(0.02, 0.00, 0.01),
    };
    let transforms = pose_transforms(&skeleton, &pose).unwrap();
    let cam = Camera::look_at(
        Vec3::new(0.0, 0.2, -3.0),
        Vec3::zeros(),
        Vec3::new(0.0, 1.0, 0.0),
        40.0,
        40.0,
        32,
        32,
        1e-3,
    );
    let system = PoissonSystem::new(&mesh).unwrap();
    let loss_cfg = LossWeights::default();
    let sigma = 1.5;
    let (w_diffuse, w_mask, w_reg) = (0.7, 0.4, 0.05);

    let mut rng = StdRng::seed_from_u64(31);
    let base: Vec<Mat3> = (0..mesh.num_faces())
        .map(|_| Mat3::identity() + 0.05 * Mat3::from_fn(|_, _| rng.gen::<f64>() - 0.5))
        .collect();

    // freeze an interior pixel set and random supervision from the base render
    let base_posed = skin(&system.solve(&base).unwrap(), &weights, &transforms).unwrap();
    let base_render = render_scene(&cam, &base_posed, &mesh.faces);
    let mut interior = Image::zeros(32, 32, 1);
    for y in 1..31 {
        for x in 1..31 {
            let all = (-1i64..=1).all(|dy| {
                (-1i64..=1).all(|dx| {
                    base_render
                        .raster
                        .covered(((y as i64 + dy) * 32 + x as i64 + dx) as usize)
                })
            });
            if all {
                interior.data[y * 32 + x] = 1.0;
            }
        }
    }
    assert!(interior.data.iter().sum::<f64>() > 50.0);
    let mut gt_diffuse = Image::zeros(32, 32, 1);
    for i in 0..gt_diffuse.data.len() {
        gt_diffuse.data[i] = rng.gen::<f64>() * interior.data[i];
    }
    let mut mask_target = Image::zeros(32, 32, 1);
    for v in mask_target.data.iter_mut() {
        *v = rng.gen::<f64>();
    }

    let loss = |jacobians: &[Mat3]| -> f64 {
        let posed = skin(&system.solve(jacobians).unwrap(), &weights, &transforms).unwrap();
        let render = render_scene(&cam, &posed, &mesh.faces);
        let sm = soft_mask(&cam, &mesh, &posed, &render.raster, sigma);
        let d = l_diffuse(&render.diffuse, &gt_diffuse, &interior, &loss_cfg).unwrap();
        let mk = l_mask(&sm.alpha, &mask_target).unwrap();
        w_diffuse * d.value + w_mask * mk.value + w_reg * l_reg(jacobians).value
    };

    // analytic gradient through the same chain
    let sm = soft_mask(&cam, &mesh, &base_posed, &base_render.raster, sigma);
    let d = l_diffuse(&base_render.diffuse, &gt_diffuse, &interior, &loss_cfg).unwrap();
    let mk = l_mask(&sm.alpha, &mask_target).unwrap();
    let mut d_diffuse = d.grad.clone();
    for v in d_diffuse.data.iter_mut() {
        *v *= w_diffuse;
    }
    let mut d_alpha = mk.grad.clone();
    for v in d_alpha.data.iter_mut() {
        *v *= w_mask;
    }
    let mut gverts = render_backward(
        &cam,
        &base_posed,
        &mesh.faces,
        &base_render,
        Some(&d_diffuse),
        None,
    );
    let gmask = soft_mask_backward(&cam, &base_posed, &base_render.raster, &sm, &d_alpha);
    for (g, m) in gverts.iter_mut().zip(&gmask) {
        *g += m;
    }
    let gcanon = skin_backward(&gverts, &weights, &transforms).unwrap();
    let mut analytic = system.solve_adjoint(&gcanon).unwrap();
    let reg = l_reg(&base);
    for (a, r) in analytic.iter_mut().zip(&reg.grad) {
        *a += w_reg * r;
    }

    let h = 1e-5;
    let mut fd_all = Vec::with_capacity(n_params);
    for fi in 0..mesh.num_faces() {
        for r in 0..3 {
            for c in 0..3 {
                let mut plus = base.clone();
                let mut minus = base.clone();
                plus[fi][(r, c)] += h;
                minus[fi][(r, c)] -= h;
                fd_all.push((fi, r, c, (loss(&plus) - loss(&minus)) / (2.0 * h)));
            }
        }
    }
    let gmax = fd_all.iter().map(|&(_, _, _, v)| v.abs()).fold(0.0, f64::max);
    let mut worst: f64 = 0.0;
    let mut checked = 0usize;
    for &(fi, r, c, fd) in &fd_all {
        let a = analytic[fi][(r, c)];
        let denom = a.abs().max(fd.abs());
        if denom < 1e-6 * gmax {
            continue;
        }
        worst = worst.max((a - fd).abs() / denom);
        checked += 1;
    }
    let elapsed = start.elapsed().as_secs_f64();
    check(
        3,
        worst <= 1e-3 && checked > n_params / 2 && elapsed < 30.0,
        format!(
            "worst relative error {worst:.3e} over {checked} of {n_params} parameters, {elapsed:.1}s"
        ),
    );
}

// ------------------------------------------------------------- criterion 4

fn random_attributes(mesh: &Mesh, rng: &mut StdRng) -> MeshAttributes {
    let mats = |rng: &mut StdRng| -> Vec<Mat3> {
        (0..mesh.num_faces())
            .map(|_| Mat3::from_fn(|_, _| rng.gen::<f64>() - 0.5))
            .collect()
    };
    let jacobians = mats(rng);
    let moment1 = mats(rng);
    let moment2 = mats(rng);
    let rows: Vec<Vec<f64>> = (0..mesh.num_vertices())
        .map(|_| {
            let a = rng.gen::<f64>() + 1e-3;
            let b = rng.gen::<f64>() + 1e-3;
            vec![a / (a + b), b / (a + b)]
        })
        .collect();
    MeshAttributes {
        jacobians,
        moment1,
        moment2,
        weights: SkinWeights::from_dense(&rows, 4),
    }
}

fn mats_bits(mats: &[Mat3]) -> Vec<u64> {
    mats.iter()
        .flat_map(|m| (0..9).map(move |k| m[(k / 3, k % 3)].to_bits()))
        .collect()
}

fn weights_bits(w: &SkinWeights) -> Vec<(usize, u64)> {
    w.rows
        .iter()
        .flat_map(|row| row.iter().map(|&(b, v)| (b, v.to_bits())))
        .collect()
}

#[test]
fn criterion_04_fuzzed_remesh_passes_stay_valid() {
    let mut rng = StdRng::seed_from_u64(4242);
    let config = RemeshConfig::default();
    let (mut total_splits, mut total_flips) = (0usize, 0usize);
    for pass in 0..1000u64 {
        let rings = rng.gen_range(3..=6);
        let segments = rng.gen_range(4..=8);
        let jitter = rng.gen_range(0.0..0.06);
        let mesh = tube(rings, segments, jitter, 10_000 + pass);
        assert!(mesh.validate().is_valid(), "fuzz input {pass} must be valid");

        let edges: Vec<usize> = (0..mesh.edges().len())
            .filter(|_| rng.gen_bool(0.2))
            .collect();
        let attrs = random_attributes(&mesh, &mut rng);

        let outcome = remesh(&mesh, &edges, &config);
        let report = outcome.mesh.validate();
        assert!(
            report.is_valid(),
            "pass {pass}: remeshed mesh invalid: {:?}",
            report.violations
        );
        total_splits += outcome.splits;
        total_flips += outcome.flips;
        let moved =
            transfer_attributes(&mesh, &outcome.mesh, &outcome.provenance, &attrs, &config, 4)
                .unwrap();
        assert_eq!(moved.jacobians.len(), outcome.mesh.num_faces());
        assert_eq!(moved.weights.rows.len(), outcome.mesh.num_vertices());

        // empty selection: bitwise identity on the mesh and all carried state
        let idle = remesh(&mesh, &[], &config);
        assert_eq!(idle.mesh.faces, mesh.faces, "pass {pass}: faces changed");
        let same_pos = idle
            .mesh
            .vertices
            .iter()
            .zip(&mesh.vertices)
            .all(|(a, b)| (0..3).all(|k| a[k].to_bits() == b[k].to_bits()));
        assert!(same_pos, "pass {pass}: vertices changed");
        let kept =
            transfer_attributes(&mesh, &idle.mesh, &idle.provenance, &attrs, &config, 4).unwrap();
        assert_eq!(mats_bits(&kept.jacobians), mats_bits(&attrs.jacobians));
        assert_eq!(mats_bits(&kept.moment1), mats_bits(&attrs.moment1));
        assert_eq!(mats_bits(&kept.moment2), mats_bits(&attrs.moment2));
        assert_eq!(weights_bits(&kept.weights), weights_bits(&attrs.weights));
    }
    check(
        4,
        true,
        format!("1000 passes valid, {total_splits} splits, {total_flips} flips, empty passes bitwise"),
    );
}

// ------------------------------------------------------------- criterion 5

fn octahedron() -> Mesh {
    let vertices = vec![
        Vec3::new(1.0, 0.0, 0.0),
        Vec3::new(-1.0, 0.0, 0.0),
        Vec3::new(0.0, 1.0, 0.0),
        Vec3::new(0.0, -1.0, 0.0),
        Vec3::new(0.0, 0.0, 1.0),
        Vec3::new(0.0, 0.0, -1.0),
    ];
    let faces = vec![
        [0, 2, 4],
        [2, 1, 4],
        [1, 3, 4],
        [3, 0, 4],
        [2, 0, 5],
        [1, 2, 5],
        [3, 1, 5],
        [0, 3, 5],
    ];
    Mesh::new(vertices, faces)
}

#[test]
fn criterion_05_split_bookkeeping_and_euler() {
    let config = RemeshConfig::default();

    // interior edge of a two-triangle quad
    let quad = Mesh::new(
        vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
            Vec3::new(1.0, 1.0, 0.0),
        ],
        vec![[0, 1, 3], [0, 3, 2]],
    );
    let shared = quad.edge_index(0, 3).unwrap();
    let out = remesh(&quad, &[shared], &config);
    let interior_ok = out.mesh.num_vertices() == quad.num_vertices() + 1
        && out.mesh.num_faces() == quad.num_faces() + 2
        && out.mesh.validate().is_valid();

    // boundary edge of a lone triangle
    let tri = Mesh::new(
        vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
        ],
        vec![[0, 1, 2]],
    );
    let boundary = tri.edge_index(0, 1).unwrap();
    let out_tri = remesh(&tri, &[boundary], &config);
    let boundary_ok = out_tri.mesh.num_vertices() == tri.num_vertices() + 1
        && out_tri.mesh.num_faces() == tri.num_faces() + 1
        && out_tri.mesh.validate().is_valid();

    // full split pass on a closed mesh keeps the Euler characteristic
    let octa = octahedron();
    assert!(octa.validate().is_valid());
    let chi_before = octa.num_vertices() as i64 - octa.edges().len() as i64
        + octa.num_faces() as i64;
    let all: Vec<usize> = (0..octa.edges().len()).collect();
    let out_octa = remesh(&octa, &all, &config);
    let chi_after = out_octa.mesh.num_vertices() as i64 - out_octa.mesh.edges().len() as i64
        + out_octa.mesh.num_faces() as i64;
    let euler_ok = out_octa.mesh.validate().is_valid() && chi_before == 2 && chi_after == 2;

    check(
        5,
        interior_ok && boundary_ok && euler_ok,
        format!(
            "interior +{}V/+{}F, boundary +{}V/+{}F, Euler {chi_before} -> {chi_after}",
            out.mesh.num_vertices() - quad.num_vertices(),
            out.mesh.num_faces() - quad.num_faces(),
            out_tri.mesh.num_vertices() - tri.num_vertices(),
            out_tri.mesh.num_faces() - tri.num_faces(),
        ),
    );
}

// ------------------------------------------------------------- criterion 6

#[test]
fn criterion_06_loss_unit_anchors() {
    let reg = l_reg(&[2.0 * Mat3::identity()]);
    let reg_ok = reg.value == 3.0;

    let mut rng = StdRng::seed_from_u64(66);
    let mut img = Image::zeros(24, 24, 3);
    for v in img.data.iter_mut() {
        *v = rng.gen::<f64>();
    }
    let s = ssim(&img, &img, 11, 1.5).unwrap();
    let ssim_ok = (s.mean - 1.0).abs() <= 1e-9;

    let (w, h) = (20, 20);
    let mut pred = Image::zeros(w, h, 1);
    let mut gt = Image::zeros(w, h, 1);
    for i in 0..pred.data.len() {
        pred.data[i] = rng.gen::<f64>() * 3.0 + 0.5;
        gt.data[i] = rng.gen::<f64>() * 3.0 + 0.5;
    }
    let covered: Vec<usize> = (0..w * h).filter(|_| rng.gen_bool(0.6)).collect();
    let margin = 0.01;
    let mut rng_loss = StdRng::seed_from_u64(55);
    let loss = l_depth(&pred, &gt, &covered, 800, margin, &mut rng_loss).unwrap();
    let mut rng_replay = StdRng::seed_from_u64(55);
    let pairs = sample_depth_pairs(&covered, 800, &mut rng_replay);
    let mut sum = 0.0;
    let mut used = 0usize;
    for (a, b) in pairs {
        let (near, far) = if gt.data[a] < gt.data[b] {
            (a, b)
        } else if gt.data[b] < gt.data[a] {
            (b, a)
        } else {
            continue;
        };
        used += 1;
        sum += (pred.data[near] - pred.data[far] + margin).max(0.0);
    }
    let brute = sum / used as f64;
    let hinge_err = (loss.value - brute).abs();
    let hinge_ok = hinge_err <= 1e-12 && loss.pairs_used == used;

    check(
        6,
        reg_ok && ssim_ok && hinge_ok,
        format!(
            "l_reg(2I) = {}, ssim(x,x) = 1{:+.1e}, hinge vs brute force {hinge_err:.1e} over {used} pairs",
            reg.value,
            s.mean - 1.0,
        ),
    );
}

// ------------------------------------------------------------- criterion 7

#[test]
fn criterion_07_synthetic_sequence_geometry_recovery() {
    let start = Instant::now();
    let config = RunConfig::default();
    let synth = generate_synthetic(&config.synth, 0).unwrap();
    let dataset = &synth.dataset;
    assert_eq!(dataset.frames.len(), 20);
    assert_eq!(dataset.camera.width, 256);

    let result = run_geometry(dataset, &config, None).unwrap();

    let mut reductions = Vec::new();
    let mut ncs = Vec::new();
    for (t, frame) in dataset.frames.iter().enumerate() {
        let transforms = pose_transforms(&dataset.skeleton, &frame.pose).unwrap();
        let init = Mesh::new(
            skin(&dataset.template.vertices, &dataset.weights, &transforms).unwrap(),
            dataset.template.faces.clone(),
        );
        let before = mesh_metrics(&init, &synth.gt_meshes[t], 10_000, 0).unwrap();
        let after = mesh_metrics(&result.posed[t], &synth.gt_meshes[t], 10_000, 0).unwrap();
        let reduction = 1.0 - after.chamfer / before.chamfer;
        println!(
            "  frame {t:02}: chamfer {:.3e} -> {:.3e} ({:.1}% reduction), nc {:.4}",
            before.chamfer,
            after.chamfer,
            100.0 * reduction,
            after.normal_consistency
        );
        reductions.push(reduction);
        ncs.push(after.normal_consistency);
    }
    let worst_reduction = reductions.iter().copied().fold(f64::INFINITY, f64::min);
    let mean_nc = ncs.iter().sum::<f64>() / ncs.len() as f64;
    let elapsed = start.elapsed().as_secs_f64();
    check(
        7,
        worst_reduction >= 0.80 && mean_nc >= 0.95 && elapsed <= 1800.0,
        format!(
            "20 frames, worst chamfer reduction {:.1}%, mean nc {mean_nc:.4}, {elapsed:.0}s",
            100.0 * worst_reduction
        ),
    );
}

// ------------------------------------------------------------- criterion 8

#[test]
fn criterion_08_remeshing_wins_inside_the_wrinkle_band() {
    let mut config = RunConfig::default();
    config.synth.frames = 8;
    config.synth.image_size = 192;
    config.synth.wrinkle_freq = 10.0;
    config.synth.subdivision = 2;
    config.geometry.epochs = 150;
    config.geometry.warmup_epochs = 30;
    config.geometry.remesh_interval = 25;
    let synth = generate_synthetic(&config.synth, 1).unwrap();

    let with = run_geometry(&synth.dataset, &config, None).unwrap();
    let mut without_cfg = config.clone();
    without_cfg.geometry.remesh_interval = config.geometry.epochs + 1;
    let without = run_geometry(&synth.dataset, &without_cfg, None).unwrap();

    let frames = synth.dataset.frames.len() as f64;
    let (mut cd_with, mut cd_without) = (0.0, 0.0);
    let (mut band_with, mut band_without) = (0.0, 0.0);
    for t in 0..synth.dataset.frames.len() {
        let gt = &synth.gt_meshes[t];
        cd_with += mesh_metrics(&with.posed[t], gt, 10_000, 0).unwrap().chamfer / frames;
        cd_without += mesh_metrics(&without.posed[t], gt, 10_000, 0)
            .unwrap()
            .chamfer
            / frames;
        band_with +=
            chamfer_restricted(&with.posed[t], gt, &synth.band_faces, 10_000, 0).unwrap() / frames;
        band_without += chamfer_restricted(&without.posed[t], gt, &synth.band_faces, 10_000, 0)
            .unwrap()
            / frames;
    }
    check(
        8,
        cd_with <= cd_without && band_with < band_without,
        format!(
            "chamfer {cd_with:.3e} vs {cd_without:.3e} without remeshing, band {band_with:.3e} vs {band_without:.3e}, faces {} vs {}",
            with.base_mesh.num_faces(),
            without.base_mesh.num_faces()
        ),
    );
}

// ------------------------------------------------------------- criterion 9

#[test]
fn criterion_09_appearance_recovery_on_exact_geometry() {
    let start = Instant::now();
    let config = RunConfig::default();
    let synth = generate_synthetic(&config.synth, 0).unwrap();
    let inputs = AppearanceInputs {
        base_mesh: synth.dataset.template.clone(),
        posed: synth.gt_meshes.clone(),
    };
    let result = run_appearance(&synth.dataset, &inputs, &config, None).unwrap();

    let mut psnrs = Vec::new();
    let mut ssims = Vec::new();
    for (t, frame) in synth.dataset.frames.iter().enumerate() {
        let psnr = masked_psnr(&result.renders[t], &frame.color, &frame.mask).unwrap();
        let ssim = masked_ssim(&result.renders[t], &frame.color, &frame.mask).unwrap();
        println!("  frame {t:02}: psnr {psnr:.2} dB, ssim {ssim:.4}");
        psnrs.push(psnr);
        ssims.push(ssim);
    }
    let mean_psnr = psnrs.iter().sum::<f64>() / psnrs.len() as f64;
    let mean_ssim = ssims.iter().sum::<f64>() / ssims.len() as f64;
    let elapsed = start.elapsed().as_secs_f64();
    check(
        9,
        mean_psnr >= 35.0 && mean_ssim >= 0.95 && elapsed <= 600.0,
        format!("mean psnr {mean_psnr:.2} dB, mean ssim {mean_ssim:.4}, {elapsed:.0}s"),
    );
}

// ------------------------------------------------------------ criterion 10

fn mesh_bits(mesh: &Mesh) -> Vec<u64> {
    mesh.vertices
        .iter()
        .flat_map(|v| (0..3).map(move |k| v[k].to_bits()))
        .collect()
}

#[test]
fn criterion_10_serial_reruns_are_bitwise_identical() {
    let mut config = RunConfig::default();
    config.synth.frames = 4;
    config.synth.rings = 8;
    config.synth.segments = 12;
    config.synth.image_size = 96;
    config.geometry.epochs = 24;
    config.geometry.warmup_epochs = 8;
    config.geometry.remesh_interval = 10;
    config.appearance.epochs = 12;
    config.appearance.warmup_epochs = 4;
    config.appearance.texture_resolution = 128;
    let synth = generate_synthetic(&config.synth, 3).unwrap();
    let dir = tempfile::tempdir().unwrap();

    let run = |tag: &str| {
        let geo_log_path = dir.path().join(format!("geo_{tag}.jsonl"));
        let mut geo_log = JsonlLog::create(&geo_log_path).unwrap();
        let geo = run_geometry(&synth.dataset, &config, Some(&mut geo_log)).unwrap();
        let app_log_path = dir.path().join(format!("app_{tag}.jsonl"));
        let mut app_log = JsonlLog::create(&app_log_path).unwrap();
        let app = run_appearance(
            &synth.dataset,
            &AppearanceInputs::from(&geo),
            &config,
            Some(&mut app_log),
        )
        .unwrap();
        (geo, app, geo_log_path, app_log_path)
    };
    let (geo_a, app_a, geo_log_a, app_log_a) = run("a");
    let (geo_b, app_b, geo_log_b, app_log_b) = run("b");

    let meshes_equal = geo_a
        .posed
        .iter()
        .zip(&geo_b.posed)
        .chain(geo_a.canonical.iter().zip(&geo_b.canonical))
        .chain(std::iter::once((&geo_a.base_mesh, &geo_b.base_mesh)))
        .all(|(a, b)| mesh_bits(a) == mesh_bits(b) && a.faces == b.faces);
    let checkpoint_equal = geo_a.checkpoint == geo_b.checkpoint;
    let textures_equal = app_a
        .frame_maps
        .iter()
        .zip(&app_b.frame_maps)
        .chain(std::iter::once((&app_a.atlas.texture, &app_b.atlas.texture)))
        .all(|(a, b)| {
            a.data
                .iter()
                .zip(&b.data)
                .all(|(x, y)| x.to_bits() == y.to_bits())
        });
    let logs_equal = std::fs::read(&geo_log_a).unwrap() == std::fs::read(&geo_log_b).unwrap()
        && std::fs::read(&app_log_a).unwrap() == std::fs::read(&app_log_b).unwrap();
    let remeshed = geo_a.base_mesh.num_faces() != synth.dataset.template.num_faces();

    check(
        10,
        meshes_equal && checkpoint_equal && textures_equal && logs_equal && remeshed,
        format!(
            "meshes {meshes_equal}, checkpoint {checkpoint_equal}, textures {textures_equal}, logs {logs_equal}, remeshing active {remeshed}"
        ),
    );
}
