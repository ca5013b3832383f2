//! Command line front end: synthetic data generation, the two
//! reconstruction stages, and mesh metrics.

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use std::path::{Path, PathBuf};

use weft_core::io::{read_obj, write_obj, write_png, JsonlLog};
use weft_core::pipeline::{
    generate_synthetic, load_dataset, mesh_metrics, run_appearance, run_geometry, save_dataset,
    AppearanceInputs, RunConfig,
};

#[derive(Parser)]
#[command(name = "weft", version, about = "Garment reconstruction from monocular sequences")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a reconstruction stage on a dataset directory.
    #[command(subcommand)]
    Reconstruct(Reconstruct),
    /// Generate a synthetic two-bone dataset with ground-truth meshes.
    Synth {
        /// TOML run configuration; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output dataset directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare two directories of numbered OBJ meshes, printing one JSON
    /// line per frame plus a summary.
    Metrics {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
    },
}

#[derive(Subcommand)]
enum Reconstruct {
    /// Stage one: recover per-frame geometry.
    Geometry {
        /// TOML run configuration; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dataset directory (frames/, camera.txt, rig.txt, poses.txt,
        /// template.obj).
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Stage two: recover appearance on top of a finished geometry run.
    Appearance {
        /// TOML run configuration; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dataset directory the geometry stage was trained on.
        #[arg(long)]
        data: PathBuf,
        /// Output directory of the geometry stage.
        #[arg(long)]
        geometry: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(path: Option<&PathBuf>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p).with_context(|| format!("loading config {}", p.display())),
        None => Ok(RunConfig::default()),
    }
}

fn numbered(dir: &Path, index: usize, ext: &str) -> PathBuf {
    dir.join(format!("{index:04}.{ext}"))
}

fn cmd_geometry(config: Option<&PathBuf>, data: &Path, out: &Path) -> Result<()> {
    let config = load_config(config)?;
    let dataset =
        load_dataset(data).with_context(|| format!("loading dataset {}", data.display()))?;
    let meshes_dir = out.join("meshes");
    let canonical_dir = out.join("canonical");
    std::fs::create_dir_all(&meshes_dir)?;
    std::fs::create_dir_all(&canonical_dir)?;

    let mut log = JsonlLog::create(out.join("log.jsonl"))?;
    let result = run_geometry(&dataset, &config, Some(&mut log))?;

    write_obj(out.join("base_remeshed.obj"), &result.base_mesh, None)?;
    for (t, mesh) in result.posed.iter().enumerate() {
        write_obj(numbered(&meshes_dir, t, "obj"), mesh, None)?;
    }
    for (t, mesh) in result.canonical.iter().enumerate() {
        write_obj(numbered(&canonical_dir, t, "obj"), mesh, None)?;
    }
    result.checkpoint.save(out.join("checkpoint.ckpt"))?;

    let loss_note = result
        .records
        .last()
        .map_or("no epochs".to_string(), |r| format!("final loss {:.6}", r.loss));
    println!(
        "geometry: {} frames, {} epochs, {loss_note}, base mesh {} vertices / {} faces",
        result.posed.len(),
        config.geometry.epochs,
        result.base_mesh.num_vertices(),
        result.base_mesh.num_faces(),
    );
    println!("wrote {}", out.display());
    Ok(())
}

fn cmd_appearance(
    config: Option<&PathBuf>,
    data: &Path,
    geometry: &Path,
    out: &Path,
) -> Result<()> {
    let config = load_config(config)?;
    let dataset =
        load_dataset(data).with_context(|| format!("loading dataset {}", data.display()))?;

    let base_path = geometry.join("base_remeshed.obj");
    let (base_mesh, _) = read_obj(&base_path)
        .with_context(|| format!("loading geometry output {}", base_path.display()))?;
    let mut posed = Vec::with_capacity(dataset.frames.len());
    for t in 0..dataset.frames.len() {
        let path = numbered(&geometry.join("meshes"), t, "obj");
        let (mesh, _) = read_obj(&path)
            .with_context(|| format!("loading geometry output {}", path.display()))?;
        posed.push(mesh);
    }
    let inputs = AppearanceInputs { base_mesh, posed };

    let texture_dir = out.join("texture");
    let renders_dir = out.join("renders");
    std::fs::create_dir_all(&texture_dir)?;
    std::fs::create_dir_all(&renders_dir)?;

    let mut log = JsonlLog::create(out.join("log.jsonl"))?;
    let result = run_appearance(&dataset, &inputs, &config, Some(&mut log))?;

    write_png(out.join("texture_static.png"), &result.atlas.texture)?;
    for (t, map) in result.frame_maps.iter().enumerate() {
        write_png(numbered(&texture_dir, t, "png"), map)?;
    }
    for (t, render) in result.renders.iter().enumerate() {
        write_png(numbered(&renders_dir, t, "png"), render)?;
    }

    let loss_note = result
        .records
        .last()
        .map_or("no epochs".to_string(), |r| format!("final loss {:.6}", r.loss));
    println!(
        "appearance: {} frames, {} epochs, {loss_note}, atlas {}x{}",
        result.renders.len(),
        config.appearance.epochs,
        result.atlas.resolution,
        result.atlas.resolution,
    );
    println!("wrote {}", out.display());
    Ok(())
}

fn cmd_synth(config: Option<&PathBuf>, seed: u64, out: &Path) -> Result<()> {
    let config = load_config(config)?;
    let synth = generate_synthetic(&config.synth, seed)?;
    save_dataset(out, &synth.dataset)?;
    let gt_dir = out.join("gt");
    std::fs::create_dir_all(&gt_dir)?;
    for (t, mesh) in synth.gt_meshes.iter().enumerate() {
        write_obj(numbered(&gt_dir, t, "obj"), mesh, None)?;
    }
    println!(
        "synth: {} frames at {}x{}, template {} vertices, ground truth in {}",
        synth.dataset.frames.len(),
        config.synth.image_size,
        config.synth.image_size,
        synth.dataset.template.num_vertices(),
        gt_dir.display(),
    );
    Ok(())
}

fn obj_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "obj"))
        .collect();
    files.sort();
    Ok(files)
}

fn cmd_metrics(pred: &Path, gt: &Path) -> Result<()> {
    let pred_files = obj_files(pred)?;
    let gt_files = obj_files(gt)?;
    if pred_files.is_empty() {
        bail!("no .obj meshes in {}", pred.display());
    }
    if pred_files.len() != gt_files.len() {
        bail!(
            "{} predicted meshes vs {} ground-truth meshes",
            pred_files.len(),
            gt_files.len()
        );
    }

    let mut sum_cd = 0.0;
    let mut sum_nc = 0.0;
    for (t, (p, g)) in pred_files.iter().zip(&gt_files).enumerate() {
        let (pred_mesh, _) = read_obj(p)?;
        let (gt_mesh, _) = read_obj(g)?;
        let m = mesh_metrics(&pred_mesh, &gt_mesh, 10_000, 0)?;
        sum_cd += m.chamfer;
        sum_nc += m.normal_consistency;
        println!(
            "{}",
            serde_json::json!({ "frame": t, "cd": m.chamfer, "nc": m.normal_consistency })
        );
    }
    let n = pred_files.len() as f64;
    println!(
        "{}",
        serde_json::json!({
            "frames": pred_files.len(),
            "mean_cd": sum_cd / n,
            "mean_nc": sum_nc / n,
        })
    );
    Ok(())
}

fn run() -> Result<()> {
    match Cli::parse().command {
        Command::Reconstruct(Reconstruct::Geometry { config, data, out }) => {
            cmd_geometry(config.as_ref(), &data, &out)
        }
        Command::Reconstruct(Reconstruct::Appearance {
            config,
            data,
            geometry,
            out,
        }) => cmd_appearance(config.as_ref(), &data, &geometry, &out),
        Command::Synth { config, seed, out } => cmd_synth(config.as_ref(), seed, &out),
        Command::Metrics { pred, gt } => cmd_metrics(&pred, &gt),
    }
}

fn main() {
    if let Err(e) = run() {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
