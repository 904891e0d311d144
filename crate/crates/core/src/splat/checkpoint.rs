//! Line-oriented scene checkpoints.
//!
//! ```text
//! gsplat 1 <count>
//! mean_x mean_y mean_z qw qx qy qz sx sy sz opacity r g b
//! ```
//! Values are written with nine significant digits.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::Vec3;

use super::primitive::{logit, GaussianPrimitive, GaussianScene};

const MAGIC: &str = "gsplat";
const VERSION: u32 = 1;
const FIELDS: usize = 14;

/// `%.9g`-style formatting.
pub(crate) fn fmt_g9(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let exp = v.abs().log10().floor() as i32;
    if !(-5..9).contains(&exp) {
        let s = format!("{v:.8e}");
        let (mant, e) = s.split_once('e').expect("exponent form");
        let mant = trim_zeros(mant);
        let e: i32 = e.parse().expect("exponent");
        return format!("{mant}e{}{:02}", if e < 0 { '-' } else { '+' }, e.abs());
    }
    let decimals = (8 - exp).max(0) as usize;
    trim_zeros(&format!("{v:.decimals$}")).to_string()
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

pub fn scene_to_string(scene: &GaussianScene) -> String {
    let mut out = format!("{MAGIC} {VERSION} {}\n", scene.len());
    for p in &scene.primitives {
        let q = p.unit_rotation();
        let q = q.quaternion();
        let s = p.scale();
        let vals = [
            p.mean.x,
            p.mean.y,
            p.mean.z,
            q.w,
            q.i,
            q.j,
            q.k,
            s.x,
            s.y,
            s.z,
            p.opacity(),
            p.color[0],
            p.color[1],
            p.color[2],
        ];
        let line: Vec<String> = vals.iter().map(|v| fmt_g9(*v)).collect();
        writeln!(out, "{}", line.join(" ")).expect("writing to a String");
    }
    out
}

pub fn write_checkpoint(scene: &GaussianScene, path: &Path) -> Result<()> {
    fs::write(path, scene_to_string(scene)).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<GaussianScene> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_scene(&text, path)
}

pub fn parse_scene(text: &str, path: &Path) -> Result<GaussianScene> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| Error::parse(path, 1, "missing header"))?;
    let parts: Vec<&str> = header.split_whitespace().collect();
    if parts.len() != 3 || parts[0] != MAGIC {
        return Err(Error::parse(path, 1, format!("expected `{MAGIC} {VERSION} <count>`")));
    }
    if parts[1] != VERSION.to_string() {
        return Err(Error::parse(path, 1, format!("unsupported version {}", parts[1])));
    }
    let count: usize = parts[2]
        .parse()
        .map_err(|_| Error::parse(path, 1, format!("invalid count `{}`", parts[2])))?;

    let mut prims = Vec::with_capacity(count);
    for (i, line) in lines {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| Error::parse(path, lineno, format!("invalid number: {e}")))?;
        if vals.len() != FIELDS {
            return Err(Error::parse(
                path,
                lineno,
                format!("expected {FIELDS} values, found {}", vals.len()),
            ));
        }
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::parse(path, lineno, "non-finite value"));
        }
        let scale = Vec3::new(vals[7], vals[8], vals[9]);
        if scale.iter().any(|s| *s <= 0.0) {
            return Err(Error::parse(path, lineno, "scales must be positive"));
        }
        if !(vals[10] > 0.0 && vals[10] < 1.0) {
            return Err(Error::parse(path, lineno, "opacity must lie in (0, 1)"));
        }
        prims.push(GaussianPrimitive {
            mean: Vec3::new(vals[0], vals[1], vals[2]),
            rotation: [vals[3], vals[4], vals[5], vals[6]],
            log_scale: scale.map(f64::ln),
            opacity_logit: logit(vals[10]),
            color: [vals[11], vals[12], vals[13]],
        });
    }
    if prims.len() != count {
        return Err(Error::format(
            path,
            format!("header declares {count} primitives, found {}", prims.len()),
        ));
    }
    Ok(GaussianScene::new(prims))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::UnitQuaternion;
    use proptest::prelude::*;

    #[test]
    fn g9_formatting() {
        assert_eq!(fmt_g9(0.0), "0");
        assert_eq!(fmt_g9(1.0), "1");
        assert_eq!(fmt_g9(0.5), "0.5");
        assert_eq!(fmt_g9(123456789.0), "123456789");
        assert_eq!(fmt_g9(1.0 / 3.0), "0.333333333");
        assert_eq!(fmt_g9(-2.5e-7), "-2.5e-07");
        assert_eq!(fmt_g9(1e10), "1e+10");
    }

    #[test]
    fn rejects_bad_lines() {
        let p = Path::new("scene.gsplat");
        let err = parse_scene("gsplat 1 1\n1 2 3\n", p).unwrap_err();
        assert!(err.to_string().contains(":2:"), "{err}");
        assert!(parse_scene("gsplat 2 0\n", p).is_err());
        assert!(parse_scene("gsplat 1 2\n0 0 0 1 0 0 0 1 1 1 0.5 0 0 0\n", p).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_within_nine_digits(
            m in prop::array::uniform3(-10.0f64..10.0),
            e in prop::array::uniform3(-3.0f64..3.0),
            s in prop::array::uniform3(0.001f64..1.0),
            o in 0.01f64..0.99,
            c in prop::array::uniform3(0.0f64..1.0),
        ) {
            let prim = GaussianPrimitive::new(
                Vec3::from(m), UnitQuaternion::from_euler_angles(e[0], e[1], e[2]), Vec3::from(s), o, c);
            let scene = GaussianScene::new(vec![prim.clone()]);
            let back = parse_scene(&scene_to_string(&scene), Path::new("x")).unwrap();
            let q = &back.primitives[0];
            prop_assert!((q.mean - prim.mean).norm() < 1e-7);
            prop_assert!((q.scale() - prim.scale()).norm() < 1e-8);
            prop_assert!((q.opacity() - prim.opacity()).abs() < 1e-8);
            prop_assert!(q.unit_rotation().angle_to(&prim.unit_rotation()) < 1e-7);
        }
    }
}
