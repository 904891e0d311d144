use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use canonica_core::flow::read_flo;
use canonica_core::io::{parse_poses, read_dataset, read_ppm};
use canonica_core::mesh::import_obj;
use canonica_core::splat::read_checkpoint;

const TINY: &str = r#"
[camera]
width = 32
height = 32
focal = 45.0

[orbit]
center = [0.0, 0.0, 0.1]
circles = [
    { height = 0.55, tilt_deg = 35.0, n_waypoints = 4 },
    { height = 0.75, tilt_deg = 50.0, n_waypoints = 4 },
]

[train]
steps = 20
optimizer = "adam"

[flow]
levels = 2
iterations = 20
warps = 1
downsample = 1
"#;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_canonica"));
    c.env_remove("CANONICA_THREADS").env("RUST_LOG", "warn");
    c
}

fn run(args: &[&str], cwd: &Path) -> Output {
    bin().args(args).current_dir(cwd).output().expect("spawning canonica")
}

fn ok(args: &[&str], cwd: &Path) -> Output {
    let out = run(args, cwd);
    assert!(
        out.status.success(),
        "canonica {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn workspace() -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("tiny.toml"), TINY).unwrap();
    let p = dir.path().to_path_buf();
    (dir, p)
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn files(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn report_iterations(path: &Path) -> Vec<usize> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .filter(|l| l.split(',').nth(1) == Some("mean"))
        .map(|l| l.split(',').next().unwrap().parse().unwrap())
        .collect()
}

#[test]
fn default_dataset_has_four_circles_of_25() {
    let (_t, dir) = workspace();
    ok(&["gen-scene", "-o", "ds"], &dir);
    let ds = read_dataset(&dir.join("ds")).unwrap();
    assert_eq!(ds.len(), 100);
    assert_eq!(ds.canonical.as_ref().map(Vec::len), Some(100));
    // One circle per 25 consecutive captures: camera height is constant within a block.
    let heights: Vec<f64> = ds.cameras().iter().map(|c| c.center().z).collect();
    for block in heights.chunks(25) {
        assert!(block.iter().all(|h| (h - block[0]).abs() < 1e-9));
    }
    let mut distinct: Vec<f64> = heights.chunks(25).map(|b| b[0]).collect();
    distinct.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
    assert_eq!(distinct.len(), 4);
    assert!(ds.markers.is_some());
    assert!(dir.join("ds/scene.gsplat").is_file());
    assert!(dir.join("ds/init.gsplat").is_file());
}

#[test]
fn resolution_follows_config() {
    let (_t, dir) = workspace();
    fs::write(dir.join("r.toml"), "[camera]\nwidth = 64\nheight = 64\nfocal = 80.0\n").unwrap();
    ok(&["gen-scene", "-c", "r.toml", "-o", "ds"], &dir);
    for sub in ["images", "canonical"] {
        for f in fs::read_dir(dir.join("ds").join(sub)).unwrap() {
            assert_eq!(read_ppm(&f.unwrap().path()).unwrap().dims(), (64, 64));
        }
    }
}

#[test]
fn gen_scene_is_byte_deterministic() {
    let (_t, dir) = workspace();
    ok(&["gen-scene", "-c", "tiny.toml", "-o", "a"], &dir);
    ok(&["gen-scene", "-c", "tiny.toml", "-o", "b", "--threads", "1"], &dir);
    let fa = files(&dir.join("a"));
    assert_eq!(fa, files(&dir.join("b")));
    assert!(fa.len() > 10);
    for f in fa {
        assert_eq!(fs::read(dir.join("a").join(&f)).unwrap(), fs::read(dir.join("b").join(&f)).unwrap(), "{f:?}");
    }
}

#[test]
fn existing_output_needs_force() {
    let (_t, dir) = workspace();
    ok(&["gen-scene", "-c", "tiny.toml", "-o", "ds"], &dir);
    let out = run(&["gen-scene", "-c", "tiny.toml", "-o", "ds"], &dir);
    assert!(!out.status.success());
    ok(&["gen-scene", "-c", "tiny.toml", "-o", "ds", "--force"], &dir);
}

#[test]
fn no_wind_capture_reaches_every_waypoint() {
    let (_t, dir) = workspace();
    ok(&["simulate-capture", "-o", "cap"], &dir);
    let cap = dir.join("cap");
    let est = parse_poses(&fs::read_to_string(cap.join("poses.txt")).unwrap(), Path::new("poses.txt")).unwrap();
    let truth =
        parse_poses(&fs::read_to_string(cap.join("poses_true.txt")).unwrap(), Path::new("poses_true.txt")).unwrap();
    assert_eq!(est.len(), 100);
    assert_eq!(truth.len(), 100);
    for (e, t) in est.iter().zip(&truth) {
        assert_eq!(e.name, t.name);
        assert!((e.pose.center() - t.pose.center()).norm() < 0.05);
    }
    let log = fs::read_to_string(cap.join("flight_log.csv")).unwrap();
    assert!(log.starts_with("t,true_x,true_y,true_z,est_x,est_y,est_z,err,waypoint_idx,captured\n"));
    assert_eq!(log.lines().skip(1).filter(|l| l.ends_with(",1")).count(), 100);
    assert!(cap.join("cameras.txt").is_file() && cap.join("markers.txt").is_file());
}

#[test]
fn wind_seeds_differ_and_complete() {
    let (_t, dir) = workspace();
    let windy = configs().join("windy.toml");
    let windy = windy.to_str().unwrap();
    ok(&["simulate-capture", "-c", windy, "-o", "s1", "--seed", "1"], &dir);
    ok(&["simulate-capture", "-c", windy, "-o", "s2", "--seed", "2"], &dir);
    let a = fs::read_to_string(dir.join("s1/flight_log.csv")).unwrap();
    let b = fs::read_to_string(dir.join("s2/flight_log.csv")).unwrap();
    assert_ne!(a, b);
    for s in ["s1", "s2"] {
        assert_eq!(fs::read_to_string(dir.join(s).join("poses.txt")).unwrap().lines().count(), 101);
    }
}

#[test]
fn capture_with_render_is_a_dataset() {
    let (_t, dir) = workspace();
    ok(&["simulate-capture", "-c", "tiny.toml", "-o", "cap", "--render"], &dir);
    let ds = read_dataset(&dir.join("cap")).unwrap();
    assert_eq!(ds.len(), 8);
    assert_eq!(ds.images[0].dims(), (32, 32));
}

#[test]
fn malformed_config_names_the_key() {
    let (_t, dir) = workspace();
    fs::write(dir.join("bad.toml"), "[flight]\nwind_sigmaa = 0.3\n").unwrap();
    let out = run(&["simulate-capture", "-c", "bad.toml", "-o", "cap"], &dir);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("wind_sigmaa"));
    assert!(!dir.join("cap").exists());

    fs::write(dir.join("bad2.toml"), "[train]\nsteps = -3\n").unwrap();
    let out = run(&["gen-scene", "-c", "bad2.toml", "-o", "ds"], &dir);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("steps"));
}

#[test]
fn canonical_zero_iterations_is_a_single_fit() {
    let (_t, dir) = workspace();
    ok(&["gen-scene", "-c", "tiny.toml", "-o", "ds"], &dir);
    ok(&["canonical", "ds", "-c", "tiny.toml", "-o", "run", "--iters", "0", "--backend", "gsplat"], &dir);
    let run_dir = dir.join("run");
    let checkpoints: Vec<_> = files(&run_dir).into_iter().filter(|f| f.extension().is_some_and(|e| e == "gsplat")).collect();
    assert_eq!(checkpoints, vec![PathBuf::from("iter_0000/scene.gsplat")]);
    assert_eq!(report_iterations(&run_dir.join("report.csv")), vec![0]);
    assert_eq!(fs::read_to_string(run_dir.join("progress.txt")).unwrap(), "completed 0\n");
    // Per-image rows plus the mean row.
    assert_eq!(fs::read_to_string(run_dir.join("report.csv")).unwrap().lines().count(), 1 + 9);
}

#[test]
fn canonical_ten_iterations_reports_eleven_fits() {
    let (_t, dir) = workspace();
    ok(&["gen-scene", "-c", "tiny.toml", "-o", "ds"], &dir);
    ok(&["canonical", "ds", "-c", "tiny.toml", "-o", "run", "--iters", "10"], &dir);
    assert_eq!(report_iterations(&dir.join("run/report.csv")), (0..=10).collect::<Vec<_>>());
    for t in 0..=10 {
        let it = dir.join(format!("run/iter_{t:04}"));
        assert!(read_checkpoint(&it.join("scene.gsplat")).is_ok());
        assert_eq!(fs::read_dir(it.join("inputs")).unwrap().count(), 8);
        assert_eq!(fs::read_dir(it.join("renders")).unwrap().count(), 8);
    }
}

#[test]
fn canonical_resume_continues_at_recorded_iteration() {
    let (_t, dir) = workspace();
    ok(&["gen-scene", "-c", "tiny.toml", "-o", "ds"], &dir);
    ok(&["canonical", "ds", "-c", "tiny.toml", "-o", "run", "--iters", "1"], &dir);
    let first = fs::read(dir.join("run/iter_0001/scene.gsplat")).unwrap();

    // Already complete: nothing to do.
    assert!(!run(&["canonical", "ds", "-c", "tiny.toml", "-o", "run", "--iters", "1", "--resume"], &dir).status.success());

    ok(&["canonical", "ds", "-c", "tiny.toml", "-o", "run", "--iters", "3", "--resume"], &dir);
    assert_eq!(report_iterations(&dir.join("run/report.csv")), vec![0, 1, 2, 3]);
    assert_eq!(fs::read_to_string(dir.join("run/progress.txt")).unwrap(), "completed 3\n");
    assert_eq!(fs::read(dir.join("run/iter_0001/scene.gsplat")).unwrap(), first);
    assert!(dir.join("run/iter_0003/scene.gsplat").is_file());

    assert!(!run(&["canonical", "ds", "-c", "tiny.toml", "-o", "missing", "--iters", "3", "--resume"], &dir).status.success());
}

#[test]
fn failed_command_leaves_no_output() {
    let (_t, dir) = workspace();
    ok(&["gen-scene", "-c", "tiny.toml", "-o", "ds"], &dir);
    let out = run(&["canonical", "ds", "-c", "tiny.toml", "-o", "run", "--init", "nope.gsplat"], &dir);
    assert!(!out.status.success());
    let out = run(&["reconstruct", "ds", "-c", "tiny.toml", "-o", "fit", "--init", "nope.gsplat"], &dir);
    assert!(!out.status.success());
    let mut names: Vec<_> = fs::read_dir(&dir).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert_eq!(names, vec!["ds", "tiny.toml"]);
}

#[test]
fn reconstruct_writes_fit_and_scores() {
    let (_t, dir) = workspace();
    ok(&["gen-scene", "-c", "tiny.toml", "-o", "ds"], &dir);
    ok(&["reconstruct", "ds", "-c", "tiny.toml", "-o", "fit"], &dir);
    assert!(read_checkpoint(&dir.join("fit/scene.gsplat")).is_ok());
    let csv = fs::read_to_string(dir.join("fit/metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 8 + 1);
    assert!(csv.lines().last().unwrap().starts_with("mean,"));
}

#[test]
fn metrics_on_identical_dirs_is_capped_psnr() {
    let (_t, dir) = workspace();
    ok(&["gen-scene", "-c", "tiny.toml", "-o", "ds"], &dir);
    let out = ok(&["metrics", "--pred", "ds/images", "--gt", "ds/images"], &dir);
    let text = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 9);
    for r in rows {
        assert_eq!(r.split(',').nth(1), Some("99.000000"), "{r}");
    }
    ok(&["metrics", "--pred", "ds/canonical", "--gt", "ds/images", "-o", "m.csv"], &dir);
    let mean = fs::read_to_string(dir.join("m.csv")).unwrap();
    let psnr: f64 = mean.lines().last().unwrap().split(',').nth(1).unwrap().parse().unwrap();
    assert!(psnr < 99.0 && psnr > 10.0);
}

#[test]
fn mesh_of_benchmark_scene_has_triangles() {
    let (_t, dir) = workspace();
    let bench = configs().join("benchmark.toml");
    ok(&["gen-scene", "-c", bench.to_str().unwrap(), "-o", "bench"], &dir);
    ok(
        &["mesh", "bench/scene.gsplat", "--radius", "0.5", "--resolution", "64", "-o", "plant.obj", "--vox", "grid.vox"],
        &dir,
    );
    let mesh = import_obj(&dir.join("plant.obj")).unwrap();
    assert!(!mesh.triangles.is_empty());
    assert_eq!(mesh.colors.as_ref().map(Vec::len), Some(mesh.vertices.len()));
    let vox = fs::read(dir.join("grid.vox")).unwrap();
    assert!(vox.starts_with(b"VOX1 64 64 64 "));

    let out = run(&["mesh", "bench/scene.gsplat", "--radius", "0.01", "--center", "5,5,5", "-o", "none.obj"], &dir);
    assert!(!out.status.success());
    assert!(!dir.join("none.obj").exists());
}

#[test]
fn flow_between_dataset_images() {
    let (_t, dir) = workspace();
    ok(&["gen-scene", "-c", "tiny.toml", "-o", "ds"], &dir);
    ok(&["flow", "ds/canonical/0001.ppm", "ds/images/0001.ppm", "-c", "tiny.toml", "-o", "f.flo"], &dir);
    let f = read_flo(&dir.join("f.flo")).unwrap();
    assert_eq!(f.dims(), (32, 32));
    assert_eq!(&fs::read(dir.join("f.flo")).unwrap()[..4], b"FLO1");
}

#[test]
fn thread_cap_from_environment() {
    let (_t, dir) = workspace();
    let out = bin()
        .args(["gen-scene", "-c", "tiny.toml", "-o", "ds"])
        .env("CANONICA_THREADS", "2")
        .current_dir(&dir)
        .output()
        .unwrap();
    assert!(out.status.success());
    let out = bin()
        .args(["gen-scene", "-c", "tiny.toml", "-o", "ds2"])
        .env("CANONICA_THREADS", "two")
        .current_dir(&dir)
        .output()
        .unwrap();
    assert!(!out.status.success());
}
