//! Dataset files: binary PPM images, SfM-style camera and pose lists, and
//! the marker board description.
//!
//! Layout of a dataset directory:
//!
//! ```text
//! root/
//!   images/0000.ppm ...      observed images
//!   canonical/0000.ppm ...   optional motion-free images, same names
//!   cameras.txt              CAMERA_ID PINHOLE WIDTH HEIGHT FX FY CX CY
//!   poses.txt                IMAGE_ID QW QX QY QZ TX TY TZ IMAGE_NAME (world-to-camera)
//!   markers.txt              optional, see `write_markers`
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use crate::capture::{BoardLayout, Marker, MarkerBoard};
use crate::error::{Error, Result};
use crate::geometry::{Camera, CameraIntrinsics, Pose, Vec3};
use crate::image::{to_u8, ImageBuffer};

pub fn encode_ppm(img: &ImageBuffer) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(img.data().iter().map(|v| to_u8(*v)));
    out
}

pub fn decode_ppm(bytes: &[u8], path: &Path) -> Result<ImageBuffer> {
    let mut pos = 0;
    let mut token = || -> Result<String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format(path, "truncated PPM header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if token()? != "P6" {
        return Err(Error::format(path, "not a binary PPM (P6)"));
    }
    let mut num = |what: &str| -> Result<usize> {
        token()?
            .parse()
            .map_err(|_| Error::format(path, format!("bad PPM {what}")))
    };
    let (w, h, maxval) = (num("width")?, num("height")?, num("maxval")?);
    if maxval != 255 {
        return Err(Error::format(path, format!("maxval {maxval} unsupported, expected 255")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    let start = pos + 1;
    let n = w * h * 3;
    if bytes.len() != start + n {
        return Err(Error::format(
            path,
            format!("expected {n} raster bytes for {w}x{h}, found {}", bytes.len().saturating_sub(start)),
        ));
    }
    let data = bytes[start..].iter().map(|&b| f64::from(b) / 255.0).collect();
    ImageBuffer::from_raw(w, h, data)
}

pub fn write_ppm(img: &ImageBuffer, path: &Path) -> Result<()> {
    fs::write(path, encode_ppm(img)).map_err(|e| Error::io(path, e))
}

pub fn read_ppm(path: &Path) -> Result<ImageBuffer> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_ppm(&bytes, path)
}

/// Non-empty, non-comment lines with their 1-based line numbers.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn parse_num<T: std::str::FromStr>(s: &str, what: &str, path: &Path, line: usize) -> Result<T> {
    s.parse()
        .map_err(|_| Error::parse(path, line, format!("invalid {what} `{s}`")))
}

fn parse_f64(s: &str, what: &str, path: &Path, line: usize) -> Result<f64> {
    let v: f64 = parse_num(s, what, path, line)?;
    if !v.is_finite() {
        return Err(Error::parse(path, line, format!("{what} is not finite")));
    }
    Ok(v)
}

pub fn format_cameras(cameras: &[(u32, CameraIntrinsics)]) -> String {
    let mut out = String::from("# CAMERA_ID PINHOLE WIDTH HEIGHT FX FY CX CY\n");
    for (id, k) in cameras {
        out += &format!("{id} PINHOLE {} {} {} {} {} {}\n", k.width, k.height, k.fx, k.fy, k.cx, k.cy);
    }
    out
}

pub fn parse_cameras(text: &str, path: &Path) -> Result<Vec<(u32, CameraIntrinsics)>> {
    let mut out: Vec<(u32, CameraIntrinsics)> = Vec::new();
    for (line, l) in content_lines(text) {
        let f: Vec<&str> = l.split_whitespace().collect();
        if f.len() != 8 {
            return Err(Error::parse(path, line, format!("expected 8 fields, found {}", f.len())));
        }
        if f[1] != "PINHOLE" {
            return Err(Error::parse(path, line, format!("unsupported camera model `{}`", f[1])));
        }
        let id: u32 = parse_num(f[0], "camera id", path, line)?;
        if out.iter().any(|(i, _)| *i == id) {
            return Err(Error::parse(path, line, format!("duplicate camera id {id}")));
        }
        let k = CameraIntrinsics {
            width: parse_num(f[2], "width", path, line)?,
            height: parse_num(f[3], "height", path, line)?,
            fx: parse_f64(f[4], "fx", path, line)?,
            fy: parse_f64(f[5], "fy", path, line)?,
            cx: parse_f64(f[6], "cx", path, line)?,
            cy: parse_f64(f[7], "cy", path, line)?,
        };
        k.validate().map_err(|e| Error::parse(path, line, e.to_string()))?;
        out.push((id, k));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseEntry {
    pub id: u32,
    /// World-to-camera.
    pub pose: Pose,
    pub name: String,
}

pub fn format_poses(poses: &[PoseEntry]) -> String {
    let mut out = String::from("# IMAGE_ID QW QX QY QZ TX TY TZ IMAGE_NAME\n");
    for p in poses {
        let [w, x, y, z] = p.pose.wxyz();
        let t = p.pose.translation;
        out += &format!("{} {w} {x} {y} {z} {} {} {} {}\n", p.id, t.x, t.y, t.z, p.name);
    }
    out
}

pub fn parse_poses(text: &str, path: &Path) -> Result<Vec<PoseEntry>> {
    let mut out: Vec<PoseEntry> = Vec::new();
    for (line, l) in content_lines(text) {
        let f: Vec<&str> = l.split_whitespace().collect();
        if f.len() != 9 {
            return Err(Error::parse(path, line, format!("expected 9 fields, found {}", f.len())));
        }
        let id: u32 = parse_num(f[0], "image id", path, line)?;
        if out.iter().any(|p| p.id == id) {
            return Err(Error::parse(path, line, format!("duplicate image id {id}")));
        }
        let names = ["qw", "qx", "qy", "qz", "tx", "ty", "tz"];
        let mut v = [0.0; 7];
        for i in 0..7 {
            v[i] = parse_f64(f[i + 1], names[i], path, line)?;
        }
        let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2] + v[3] * v[3]).sqrt();
        if (norm - 1.0).abs() > 1e-6 {
            return Err(Error::parse(path, line, format!("quaternion norm {norm} is not 1")));
        }
        out.push(PoseEntry {
            id,
            pose: Pose::from_wxyz([v[0], v[1], v[2], v[3]], Vec3::new(v[4], v[5], v[6])),
            name: f[8].to_string(),
        });
    }
    Ok(out)
}

/// Board description. First content line: `LAYOUT ring|separate`; then one
/// line per marker: `MARKER_ID SIDE QW QX QY QZ TX TY TZ` (marker-to-world),
/// or `MARKER_ID SIDE unknown` when the world pose is not known.
pub fn format_markers(board: &MarkerBoard) -> String {
    let layout = match board.layout {
        BoardLayout::Ring => "ring",
        BoardLayout::Separate => "separate",
    };
    let mut out = format!("# MARKER_ID SIDE QW QX QY QZ TX TY TZ\nLAYOUT {layout}\n");
    for m in &board.markers {
        match m.pose {
            Some(p) => {
                let [w, x, y, z] = p.wxyz();
                let t = p.translation;
                out += &format!("{} {} {w} {x} {y} {z} {} {} {}\n", m.id, m.side, t.x, t.y, t.z);
            }
            None => out += &format!("{} {} unknown\n", m.id, m.side),
        }
    }
    out
}

pub fn parse_markers(text: &str, path: &Path) -> Result<MarkerBoard> {
    let mut lines = content_lines(text);
    let (line, first) = lines
        .next()
        .ok_or_else(|| Error::format(path, "empty marker file"))?;
    let layout = match first.split_whitespace().collect::<Vec<_>>().as_slice() {
        ["LAYOUT", "ring"] => BoardLayout::Ring,
        ["LAYOUT", "separate"] => BoardLayout::Separate,
        _ => return Err(Error::parse(path, line, "expected `LAYOUT ring` or `LAYOUT separate`")),
    };
    let mut markers = Vec::new();
    for (line, l) in lines {
        let f: Vec<&str> = l.split_whitespace().collect();
        let pose = match f.len() {
            3 if f[2] == "unknown" => None,
            9 => {
                let mut v = [0.0; 7];
                for i in 0..7 {
                    v[i] = parse_f64(f[i + 2], "pose value", path, line)?;
                }
                Some(Pose::from_wxyz([v[0], v[1], v[2], v[3]], Vec3::new(v[4], v[5], v[6])))
            }
            n => return Err(Error::parse(path, line, format!("expected 9 fields or `ID SIDE unknown`, found {n}"))),
        };
        markers.push(Marker {
            id: parse_num(f[0], "marker id", path, line)?,
            side: parse_f64(f[1], "side", path, line)?,
            pose,
        });
    }
    MarkerBoard::new(markers, layout).map_err(|e| Error::format(path, e.to_string()))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn image_name(index: usize) -> String {
    format!("{index:04}.ppm")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub intrinsics: CameraIntrinsics,
    pub poses: Vec<PoseEntry>,
    pub images: Vec<ImageBuffer>,
    pub canonical: Option<Vec<ImageBuffer>>,
    pub markers: Option<MarkerBoard>,
}

impl Dataset {
    /// Names images `0000.ppm`, `0001.ppm`, ... in order.
    pub fn new(cameras: &[Camera], images: Vec<ImageBuffer>, canonical: Option<Vec<ImageBuffer>>) -> Result<Self> {
        let first = cameras.first().ok_or(Error::EmptyInput("cameras"))?;
        if images.len() != cameras.len() {
            return Err(Error::LengthMismatch {
                expected: cameras.len(),
                actual: images.len(),
            });
        }
        if let Some(c) = &canonical {
            if c.len() != images.len() {
                return Err(Error::LengthMismatch {
                    expected: images.len(),
                    actual: c.len(),
                });
            }
        }
        if cameras.iter().any(|c| c.intrinsics != first.intrinsics) {
            return Err(Error::InvalidConfig("a dataset shares one camera model".into()));
        }
        let poses = cameras
            .iter()
            .enumerate()
            .map(|(i, c)| PoseEntry {
                id: i as u32,
                pose: c.world_to_cam,
                name: image_name(i),
            })
            .collect();
        Ok(Self {
            intrinsics: first.intrinsics,
            poses,
            images,
            canonical,
            markers: None,
        })
    }

    pub fn cameras(&self) -> Vec<Camera> {
        self.poses.iter().map(|p| Camera::new(self.intrinsics, p.pose)).collect()
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

pub struct DatasetPaths {
    pub images: PathBuf,
    pub canonical: PathBuf,
    pub cameras: PathBuf,
    pub poses: PathBuf,
    pub markers: PathBuf,
}

impl DatasetPaths {
    pub fn new(root: &Path) -> Self {
        Self {
            images: root.join("images"),
            canonical: root.join("canonical"),
            cameras: root.join("cameras.txt"),
            poses: root.join("poses.txt"),
            markers: root.join("markers.txt"),
        }
    }
}

pub fn write_dataset(ds: &Dataset, root: &Path) -> Result<()> {
    let p = DatasetPaths::new(root);
    fs::create_dir_all(&p.images).map_err(|e| Error::io(&p.images, e))?;
    for (entry, img) in ds.poses.iter().zip(&ds.images) {
        write_ppm(img, &p.images.join(&entry.name))?;
    }
    if let Some(canon) = &ds.canonical {
        fs::create_dir_all(&p.canonical).map_err(|e| Error::io(&p.canonical, e))?;
        for (entry, img) in ds.poses.iter().zip(canon) {
            write_ppm(img, &p.canonical.join(&entry.name))?;
        }
    }
    write_text(&p.cameras, &format_cameras(&[(1, ds.intrinsics)]))?;
    write_text(&p.poses, &format_poses(&ds.poses))?;
    if let Some(board) = &ds.markers {
        write_text(&p.markers, &format_markers(board))?;
    }
    Ok(())
}

pub fn read_dataset(root: &Path) -> Result<Dataset> {
    let p = DatasetPaths::new(root);
    let cams = parse_cameras(&read_text(&p.cameras)?, &p.cameras)?;
    let intrinsics = match cams.as_slice() {
        [(_, k)] => *k,
        _ => return Err(Error::format(&p.cameras, format!("expected exactly one camera, found {}", cams.len()))),
    };
    let poses = parse_poses(&read_text(&p.poses)?, &p.poses)?;
    if poses.is_empty() {
        return Err(Error::format(&p.poses, "no poses"));
    }
    let load = |dir: &Path| -> Result<Vec<ImageBuffer>> {
        poses
            .iter()
            .map(|e| {
                let img = read_ppm(&dir.join(&e.name))?;
                if img.dims() != (intrinsics.width, intrinsics.height) {
                    return Err(Error::format(
                        dir.join(&e.name),
                        format!("image is {:?}, camera is {}x{}", img.dims(), intrinsics.width, intrinsics.height),
                    ));
                }
                Ok(img)
            })
            .collect()
    };
    let images = load(&p.images)?;
    let canonical = if p.canonical.is_dir() { Some(load(&p.canonical)?) } else { None };
    let markers = if p.markers.is_file() {
        Some(parse_markers(&read_text(&p.markers)?, &p.markers)?)
    } else {
        None
    };
    Ok(Dataset {
        intrinsics,
        poses,
        images,
        canonical,
        markers,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::UnitQuaternion;
    use proptest::prelude::*;

    fn p() -> &'static Path {
        Path::new("test.txt")
    }

    fn sample_image(w: usize, h: usize) -> ImageBuffer {
        ImageBuffer::from_fn(w, h, |x, y| [x as f64 / w as f64, y as f64 / h as f64, 0.37])
    }

    #[test]
    fn ppm_round_trip_is_byte_identical() {
        let bytes = encode_ppm(&sample_image(7, 5));
        assert!(bytes.starts_with(b"P6\n7 5\n255\n"));
        let back = decode_ppm(&bytes, p()).unwrap();
        assert_eq!(encode_ppm(&back), bytes);
        assert_eq!(back, sample_image(7, 5).quantized());
    }

    #[test]
    fn ppm_header_comments_and_errors() {
        let mut bytes = b"P6 # c\n2 1\n# another\n255\n".to_vec();
        bytes.extend_from_slice(&[0, 128, 255, 10, 20, 30]);
        let img = decode_ppm(&bytes, p()).unwrap();
        assert_eq!(img.dims(), (2, 1));
        assert!(decode_ppm(b"P3\n1 1\n255\n", p()).is_err());
        assert!(decode_ppm(b"P6\n2 2\n255\nabc", p()).is_err());
        assert!(decode_ppm(b"P6\n1 1\n65535\n\0\0\0\0\0\0", p()).is_err());
    }

    #[test]
    fn cameras_round_trip_and_rejects() {
        let k = CameraIntrinsics::new(110.5, 111.25, 63.5, 62.0, 128, 120).unwrap();
        let text = format_cameras(&[(1, k)]);
        assert_eq!(parse_cameras(&text, p()).unwrap(), vec![(1, k)]);
        let err = parse_cameras("# h\n1 OPENCV 1 1 1 1 0 0\n", p()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        let err = parse_cameras("1 PINHOLE 64 64 50 50 32\n", p()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }

    #[test]
    fn malformed_pose_lines_name_the_line() {
        let good = "1 1 0 0 0 0.5 0 1 0000.ppm\n";
        for (bad, what) in [
            ("2 1 0 0 0 0.5 0 1\n", "fields"),
            ("2 1 0 0 x 0.5 0 1 a.ppm\n", "invalid"),
            ("2 2 0 0 0 0.5 0 1 a.ppm\n", "norm"),
            ("1 1 0 0 0 0.5 0 1 b.ppm\n", "duplicate"),
            ("2 1 0 0 0 nan 0 1 a.ppm\n", "finite"),
        ] {
            let text = format!("# header\n{good}\n{bad}");
            let err = parse_poses(&text, p()).unwrap_err();
            match &err {
                Error::Parse { line, message, .. } => {
                    assert_eq!(*line, 4, "{err}");
                    assert!(message.contains(what), "{message}");
                }
                other => panic!("unexpected {other}"),
            }
        }
    }

    #[test]
    fn markers_round_trip() {
        let mut board = MarkerBoard::ring(3, Vec3::new(0.1, 0.2, 0.0), 0.4, 0.15).unwrap();
        board.layout = BoardLayout::Separate;
        board.markers[2].pose = None;
        let back = parse_markers(&format_markers(&board), p()).unwrap();
        assert_eq!(back.layout, board.layout);
        for (a, b) in back.markers.iter().zip(&board.markers) {
            assert_eq!((a.id, a.side), (b.id, b.side));
            match (a.pose, b.pose) {
                (Some(x), Some(y)) => {
                    assert!((x.translation - y.translation).amax() <= 1e-12);
                    assert!(x.angular_distance(&y) <= 1e-12);
                }
                (None, None) => {}
                _ => panic!("pose presence differs"),
            }
        }
        assert!(parse_markers("LAYOUT grid\n", p()).is_err());
    }

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let k = CameraIntrinsics::new(40.0, 40.0, 15.5, 11.5, 32, 24).unwrap();
        let cams: Vec<Camera> = (0..3)
            .map(|i| {
                let r = UnitQuaternion::from_euler_angles(0.1 * i as f64, -0.3, 0.7);
                Camera::new(k, Pose::new(r, Vec3::new(0.1, -0.2 * i as f64, 1.0 / 3.0)))
            })
            .collect();
        let imgs: Vec<_> = (0..3).map(|_| sample_image(32, 24)).collect();
        let mut ds = Dataset::new(&cams, imgs.clone(), Some(imgs)).unwrap();
        ds.markers = Some(MarkerBoard::ring(4, Vec3::zeros(), 0.35, 0.15).unwrap());
        write_dataset(&ds, dir.path()).unwrap();
        let back = read_dataset(dir.path()).unwrap();
        assert_eq!(back.intrinsics, k);
        assert_eq!(back.len(), 3);
        for (a, b) in back.poses.iter().zip(&ds.poses) {
            assert_eq!(a.name, b.name);
            assert!((a.pose.translation - b.pose.translation).amax() <= 1e-12);
            let (qa, qb) = (a.pose.wxyz(), b.pose.wxyz());
            assert!((0..4).all(|i| (qa[i] - qb[i]).abs() <= 1e-12));
        }
        let original = fs::read(dir.path().join("images/0001.ppm")).unwrap();
        assert_eq!(encode_ppm(&back.images[1]), original);
        assert!(back.canonical.is_some() && back.markers.is_some());

        fs::remove_file(dir.path().join("images/0002.ppm")).unwrap();
        assert!(matches!(read_dataset(dir.path()), Err(Error::Io { .. })));
    }

    proptest! {
        #[test]
        fn pose_text_round_trip(q in prop::array::uniform4(-1.0..1.0f64), t in prop::array::uniform3(-10.0..10.0f64)) {
            prop_assume!(q.iter().map(|v| v * v).sum::<f64>() > 1e-3);
            let rot = UnitQuaternion::new_normalize(nalgebra::Quaternion::new(q[0], q[1], q[2], q[3]));
            let entry = PoseEntry { id: 7, pose: Pose::new(rot, Vec3::from(t)), name: "x.ppm".into() };
            let back = parse_poses(&format_poses(std::slice::from_ref(&entry)), p()).unwrap();
            let (a, b) = (back[0].pose.wxyz(), entry.pose.wxyz());
            prop_assert!((0..4).all(|i| (a[i] - b[i]).abs() <= 1e-12));
            prop_assert_eq!(back[0].pose.translation, entry.pose.translation);
        }
    }
}
