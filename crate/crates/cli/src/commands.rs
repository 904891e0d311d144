use std::fs;
use std::io::Write as _;
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use log::{info, warn};
use rayon::prelude::*;

use canonica_core::canonical::{
    deform_all, estimate_flows, report_rows, run_loop, GsplatBackend, ResumePoint, REPORT_HEADER,
};
use canonica_core::capture::{plan_orbits, simulate_flight, write_flight_log};
use canonica_core::flow::{estimate_flow, write_flo};
use canonica_core::io::{
    format_cameras, format_markers, format_poses, image_name, read_dataset, read_ppm, write_dataset, write_ppm,
    Dataset, PoseEntry,
};
use canonica_core::mesh::{
    crop_scene, export_obj, marching_cubes, opacity_grid, vertex_colors, write_vox, GridSpec,
};
use canonica_core::metrics::{evaluate, evaluate_flow_aligned, MetricReport};
use canonica_core::splat::{self, read_checkpoint, write_checkpoint};
use canonica_core::synth::{capture_dataset, generate, initial_scene, sample_scene};
use canonica_core::{Camera, Error as CoreError, GaussianScene, ImageBuffer, Result as CoreResult, Vec3};

use crate::config::Config;
use crate::output::{write_atomic, write_file_atomic, Staged};

pub const SCENE_CHECKPOINT: &str = "scene.gsplat";
pub const INIT_CHECKPOINT: &str = "init.gsplat";
pub const PROGRESS_FILE: &str = "progress.txt";
pub const REPORT_FILE: &str = "report.csv";

fn write_text(path: &Path, text: &str) -> CoreResult<()> {
    fs::write(path, text).map_err(|e| CoreError::io(path, e))
}

fn write_images(dir: &Path, images: &[ImageBuffer], names: impl Fn(usize) -> String + Sync) -> CoreResult<()> {
    fs::create_dir_all(dir).map_err(|e| CoreError::io(dir, e))?;
    images
        .par_iter()
        .enumerate()
        .try_for_each(|(k, img)| write_ppm(img, &dir.join(names(k))))
}

pub fn gen_scene(cfg: &Config, out: &Path, force: bool) -> Result<()> {
    let dcfg = cfg.dataset();
    let data = generate(&dcfg)?;
    let init = initial_scene(&data.truth.scene, &cfg.init.to_core())?;
    let mut ds = Dataset::new(&data.cameras, data.observed, Some(data.canonical))?;
    ds.markers = Some(cfg.markers.board()?);

    let stage = Staged::new(out, force)?;
    write_dataset(&ds, stage.path())?;
    write_checkpoint(&data.truth.scene, &stage.join(SCENE_CHECKPOINT))?;
    write_checkpoint(&init, &stage.join(INIT_CHECKPOINT))?;
    stage.commit()?;
    info!(
        "wrote {} images ({} moving primitives of {}) to {}",
        ds.len(),
        data.motion.n_moving(),
        data.truth.scene.len(),
        out.display()
    );
    Ok(())
}

pub struct CaptureSummary {
    pub captured: usize,
    pub waypoints: usize,
    pub rms_estimation: f64,
    pub rms_tracking: f64,
}

pub fn simulate_capture(cfg: &Config, out: &Path, seed: Option<u64>, render: bool, force: bool) -> Result<CaptureSummary> {
    let dcfg = cfg.dataset();
    let intrinsics = dcfg.intrinsics()?;
    let waypoints = plan_orbits(&dcfg.orbit)?;
    let board = cfg.markers.board()?;
    let fcfg = cfg.flight.to_core(intrinsics);
    let seed = seed.unwrap_or(cfg.flight.seed);
    let log = simulate_flight(&board, &waypoints, &fcfg, seed)?;

    let entries = |truth: bool| -> Vec<PoseEntry> {
        log.captures
            .iter()
            .map(|c| PoseEntry {
                id: c.waypoint_idx as u32,
                pose: if truth { c.truth } else { c.estimated },
                name: image_name(c.waypoint_idx),
            })
            .collect()
    };
    let estimated = entries(false);

    let stage = Staged::new(out, force)?;
    let mut csv = Vec::new();
    write_flight_log(&log, &mut csv)?;
    fs::write(stage.join("flight_log.csv"), csv).context("writing flight_log.csv")?;
    write_text(&stage.join("poses_true.txt"), &format_poses(&entries(true)))?;

    if render && !estimated.is_empty() {
        let (truth, motion) = sample_scene(&dcfg.scene)?;
        let cams: Vec<Camera> = log.captures.iter().map(|c| Camera::new(intrinsics, c.truth)).collect();
        let images = capture_dataset(&truth.scene, &motion, &cams, dcfg.background)?;
        let ds = Dataset {
            intrinsics,
            poses: estimated,
            images: images.observed,
            canonical: Some(images.canonical),
            markers: Some(board),
        };
        write_dataset(&ds, stage.path())?;
        write_checkpoint(&truth.scene, &stage.join(SCENE_CHECKPOINT))?;
        write_checkpoint(&initial_scene(&truth.scene, &cfg.init.to_core())?, &stage.join(INIT_CHECKPOINT))?;
    } else {
        write_text(&stage.join("cameras.txt"), &format_cameras(&[(1, intrinsics)]))?;
        write_text(&stage.join("poses.txt"), &format_poses(&estimated))?;
        write_text(&stage.join("markers.txt"), &format_markers(&board))?;
    }
    stage.commit()?;

    let summary = CaptureSummary {
        captured: log.captures.len(),
        waypoints: waypoints.len(),
        rms_estimation: log.rms_estimation_error(),
        rms_tracking: log.rms_tracking_error(),
    };
    info!(
        "captured {}/{} waypoints in {:.1} s simulated; rms estimation error {:.4} m, rms tracking error {:.4} m",
        summary.captured,
        summary.waypoints,
        log.samples.last().map_or(0.0, |s| s.t),
        summary.rms_estimation,
        summary.rms_tracking
    );
    if !log.unreached.is_empty() {
        warn!("{} waypoints timed out: {:?}", log.unreached.len(), log.unreached);
    }
    Ok(summary)
}

fn load_init(dataset: &Path, init: Option<&Path>) -> Result<GaussianScene> {
    let path = init.map_or_else(|| dataset.join(INIT_CHECKPOINT), Path::to_path_buf);
    read_checkpoint(&path).context("loading the initial scene (use --init to choose another file)")
}

fn metrics_csv(rows: &[(String, [Option<f64>; 4])]) -> String {
    let mut s = String::from("image,psnr,ssim,psnr_canonical,ssim_canonical\n");
    let cell = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
    for (name, v) in rows {
        s.push_str(&format!("{name},{},{},{},{}\n", cell(v[0]), cell(v[1]), cell(v[2]), cell(v[3])));
    }
    s
}

/// Single fit without motion compensation.
pub fn reconstruct(cfg: &Config, dataset: &Path, out: &Path, init: Option<&Path>, force: bool) -> Result<()> {
    let ds = read_dataset(dataset)?;
    let cams = ds.cameras();
    let init = load_init(dataset, init)?;
    let tcfg = cfg.train.to_core(cfg.camera.background);
    let stage = Staged::new(out, force)?;

    let scene = splat::train(&ds.images, &cams, &init, &tcfg)?;
    let renders: Vec<ImageBuffer> = cams.par_iter().map(|c| splat::render(&scene, c, tcfg.background)).collect();
    let vs_inputs = evaluate(&renders, &ds.images)?;
    let vs_canonical = ds.canonical.as_ref().map(|c| evaluate(&renders, c)).transpose()?;
    let rows = per_image_rows(&ds, &vs_inputs, vs_canonical.as_ref());

    write_checkpoint(&scene, &stage.join(SCENE_CHECKPOINT))?;
    write_images(&stage.join("renders"), &renders, |k| ds.poses[k].name.clone())?;
    write_text(&stage.join("metrics.csv"), &metrics_csv(&rows))?;
    stage.commit()?;
    info!(
        "fit {} primitives; psnr vs inputs {:.3} dB{}",
        scene.len(),
        vs_inputs.mean_psnr,
        vs_canonical
            .map(|r| format!(", vs canonical {:.3} dB", r.mean_psnr))
            .unwrap_or_default()
    );
    Ok(())
}

fn per_image_rows(ds: &Dataset, a: &MetricReport, b: Option<&MetricReport>) -> Vec<(String, [Option<f64>; 4])> {
    let mut rows: Vec<_> = ds
        .poses
        .iter()
        .enumerate()
        .map(|(k, p)| {
            let c = b.map(|r| r.per_image[k]);
            (
                p.name.clone(),
                [Some(a.per_image[k].psnr), Some(a.per_image[k].ssim), c.map(|s| s.psnr), c.map(|s| s.ssim)],
            )
        })
        .collect();
    rows.push((
        "mean".into(),
        [Some(a.mean_psnr), Some(a.mean_ssim), b.map(|r| r.mean_psnr), b.map(|r| r.mean_ssim)],
    ));
    rows
}

pub fn iteration_dir(t: usize) -> String {
    format!("iter_{t:04}")
}

/// Last completed iteration recorded in a canonical output directory.
pub fn read_progress(out: &Path) -> Result<usize> {
    let path = out.join(PROGRESS_FILE);
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let value = text
        .lines()
        .find_map(|l| l.strip_prefix("completed "))
        .with_context(|| format!("{}: missing `completed <iteration>` line", path.display()))?;
    value
        .trim()
        .parse()
        .with_context(|| format!("{}: bad iteration `{}`", path.display(), value.trim()))
}

pub struct CanonicalArgs<'a> {
    pub dataset: &'a Path,
    pub out: &'a Path,
    pub iterations: Option<usize>,
    pub init: Option<&'a Path>,
    pub resume: bool,
    pub force: bool,
}

pub fn canonical(cfg: &Config, args: &CanonicalArgs) -> Result<()> {
    let ds = read_dataset(args.dataset)?;
    let cams = ds.cameras();
    let mut lcfg = cfg.canonical.to_core(&cfg.flow);
    if let Some(m) = args.iterations {
        lcfg.iterations = m;
    }
    let tcfg = cfg.train.to_core(cfg.camera.background);
    tcfg.validate()?;
    let init = load_init(args.dataset, args.init)?;

    let (stage, resume, mut backend) = if args.resume {
        ensure!(args.out.is_dir(), "nothing to resume: {} does not exist", args.out.display());
        let done = read_progress(args.out)?;
        if done >= lcfg.iterations {
            bail!(
                "{} already holds iteration {done}; ask for more than {} iterations to continue",
                args.out.display(),
                lcfg.iterations
            );
        }
        let ckpt = args.out.join(iteration_dir(done)).join(SCENE_CHECKPOINT);
        let previous = read_checkpoint(&ckpt)?;
        let renders: Vec<ImageBuffer> = cams
            .par_iter()
            .map(|c| splat::render(&previous, c, tcfg.background))
            .collect();
        let flows = estimate_flows(&renders, &ds.images, &lcfg.flow)?;
        let deformed = deform_all(&ds.images, &flows)?;
        info!("resuming after iteration {done} from {}", ckpt.display());
        let stage = Staged::seeded(args.out)?;
        truncate_report(&stage.join(REPORT_FILE), done)?;
        let resume = ResumePoint {
            iteration: done + 1,
            deformed,
        };
        (stage, Some(resume), GsplatBackend::new(init, tcfg).with_previous(previous))
    } else {
        let stage = Staged::new(args.out, args.force)?;
        write_text(&stage.join(REPORT_FILE), &format!("{REPORT_HEADER}\n"))?;
        let b = GsplatBackend::new(init, tcfg);
        (stage, None, b)
    };

    let names: Vec<String> = ds.poses.iter().map(|p| p.name.clone()).collect();
    let output = run_loop(
        &ds.images,
        &cams,
        &mut backend,
        &lcfg,
        ds.canonical.as_deref(),
        resume,
        |view| {
            let t = view.report.iteration;
            let dir = stage.join(iteration_dir(t));
            fs::create_dir_all(&dir).map_err(|e| CoreError::io(&dir, e))?;
            write_checkpoint(view.state, &dir.join(SCENE_CHECKPOINT))?;
            write_images(&dir.join("inputs"), view.inputs, |k| names[k].clone())?;
            write_images(&dir.join("renders"), view.renders, |k| names[k].clone())?;
            append(&stage.join(REPORT_FILE), &report_rows(view.report))?;
            write_text(&stage.join(PROGRESS_FILE), &format!("completed {t}\n"))?;
            Ok(())
        },
    )?;
    stage.commit()?;
    if let Some(last) = output.reports.last() {
        info!(
            "finished iteration {} with {} primitives{}",
            last.iteration,
            output.state.len(),
            last.mean_psnr_canonical()
                .map(|p| format!("; psnr vs canonical {p:.3} dB"))
                .unwrap_or_default()
        );
    }
    Ok(())
}

fn append(path: &Path, text: &str) -> CoreResult<()> {
    fs::OpenOptions::new()
        .append(true)
        .create(true)
        .open(path)
        .and_then(|mut f| f.write_all(text.as_bytes()))
        .map_err(|e| CoreError::io(path, e))
}

/// Drops report rows past iteration `last`.
fn truncate_report(path: &Path, last: usize) -> Result<()> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut kept = String::new();
    for (n, line) in text.lines().enumerate() {
        if n > 0 {
            let iter: usize = line
                .split(',')
                .next()
                .and_then(|s| s.parse().ok())
                .with_context(|| format!("{}:{}: bad iteration column", path.display(), n + 1))?;
            if iter > last {
                continue;
            }
        }
        kept.push_str(line);
        kept.push('\n');
    }
    Ok(write_text(path, &kept)?)
}

fn ppm_names(dir: &Path) -> Result<Vec<String>> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".ppm"))
        .collect();
    names.sort();
    ensure!(!names.is_empty(), "no .ppm images in {}", dir.display());
    Ok(names)
}

/// Scores every image of `gt` against the same-named image in `pred`.
pub fn metrics(cfg: &Config, pred: &Path, gt: &Path, aligned: bool, out: Option<&Path>) -> Result<MetricReport> {
    let names = ppm_names(gt)?;
    let load = |dir: &Path| -> Result<Vec<ImageBuffer>> {
        names
            .par_iter()
            .map(|n| read_ppm(&dir.join(n)).map_err(Into::into))
            .collect()
    };
    let (preds, gts) = (load(pred)?, load(gt)?);
    let report = if aligned {
        evaluate_flow_aligned(&preds, &gts, &cfg.flow.to_core())?
    } else {
        evaluate(&preds, &gts)?
    };
    let mut csv = String::from("image,psnr,ssim\n");
    for (n, s) in names.iter().zip(&report.per_image) {
        csv.push_str(&format!("{n},{:.6},{:.6}\n", s.psnr, s.ssim));
    }
    csv.push_str(&format!("mean,{:.6},{:.6}\n", report.mean_psnr, report.mean_ssim));
    match out {
        Some(p) => write_file_atomic(p, csv.as_bytes())?,
        None => print!("{csv}"),
    }
    Ok(report)
}

pub struct MeshArgs<'a> {
    pub checkpoint: &'a Path,
    pub out: &'a Path,
    pub radius: f64,
    pub center: Vec3,
    pub resolution: usize,
    pub iso: f64,
    pub vox: Option<&'a Path>,
    pub colors: bool,
}

pub fn mesh(args: &MeshArgs) -> Result<usize> {
    let scene = read_checkpoint(args.checkpoint)?;
    let cropped = crop_scene(&scene, &args.center, args.radius)?;
    ensure!(
        !cropped.is_empty(),
        "no primitive lies within {} m of ({}, {}, {})",
        args.radius,
        args.center.x,
        args.center.y,
        args.center.z
    );
    let spec = GridSpec::around(&args.center, args.radius, args.resolution);
    spec.validate()?;
    let grid = opacity_grid(&cropped, &spec)?;
    let mut mesh = marching_cubes(&grid, args.iso)?;
    if args.colors {
        mesh.colors = Some(vertex_colors(&cropped, &mesh.vertices));
    }

    write_atomic(args.out, |p| Ok(export_obj(&mesh, p)?))?;
    if let Some(vox) = args.vox {
        let mut buf = Vec::new();
        write_vox(&grid, &mut buf)?;
        write_file_atomic(vox, &buf)?;
    }
    info!(
        "{} of {} primitives inside the crop; mesh has {} vertices and {} triangles",
        cropped.len(),
        scene.len(),
        mesh.vertices.len(),
        mesh.triangles.len()
    );
    Ok(mesh.triangles.len())
}

pub fn flow(cfg: &Config, src: &Path, dst: &Path, out: &Path) -> Result<()> {
    let a = read_ppm(src)?;
    let b = read_ppm(dst)?;
    let f = estimate_flow(&a, &b, &cfg.flow.to_core())?;
    write_atomic(out, |p| Ok(write_flo(&f, p)?))?;
    info!("flow {}x{}, max displacement {:.3} px", f.width(), f.height(), f.max_norm());
    Ok(())
}
