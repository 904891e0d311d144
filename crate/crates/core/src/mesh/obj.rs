//! Wavefront OBJ: `v x y z [r g b]` lines, then 1-based `f i j k` lines.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::Vec3;

use super::TriMesh;

const HEADER: &str = "# canonica mesh";

pub fn write_obj<W: Write>(mesh: &TriMesh, mut out: W) -> std::io::Result<()> {
    writeln!(out, "{HEADER}")?;
    for (i, v) in mesh.vertices.iter().enumerate() {
        match &mesh.colors {
            Some(c) => {
                let [r, g, b] = c[i];
                writeln!(out, "v {:.6} {:.6} {:.6} {:.6} {:.6} {:.6}", v.x, v.y, v.z, r, g, b)?
            }
            None => writeln!(out, "v {:.6} {:.6} {:.6}", v.x, v.y, v.z)?,
        }
    }
    for t in &mesh.triangles {
        writeln!(out, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1)?;
    }
    Ok(())
}

pub fn export_obj(mesh: &TriMesh, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_obj(mesh, &mut buf).expect("writing to memory");
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Reads the subset of OBJ that `write_obj` produces. Comments and other
/// statements are skipped; `f` entries may carry `/vt/vn` suffixes.
pub fn read_obj<R: BufRead>(input: R, name: &Path) -> Result<TriMesh> {
    let mut mesh = TriMesh::default();
    let mut colors: Vec<[f64; 3]> = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line.map_err(|e| Error::io(name, e))?;
        let lineno = n + 1;
        let mut it = line.split_whitespace();
        match it.next() {
            Some("v") => {
                let nums: Vec<f64> = it
                    .map(|s| s.parse::<f64>().map_err(|_| Error::parse(name, lineno, format!("bad number `{s}`"))))
                    .collect::<Result<_>>()?;
                match nums.len() {
                    3 => {}
                    6 => colors.push([nums[3], nums[4], nums[5]]),
                    k => return Err(Error::parse(name, lineno, format!("vertex needs 3 or 6 values, got {k}"))),
                }
                mesh.vertices.push(Vec3::new(nums[0], nums[1], nums[2]));
            }
            Some("f") => {
                let idx: Vec<u32> = it
                    .map(|s| {
                        let head = s.split('/').next().unwrap_or("");
                        match head.parse::<u32>() {
                            Ok(i) if i >= 1 => Ok(i - 1),
                            _ => Err(Error::parse(name, lineno, format!("bad face index `{s}`"))),
                        }
                    })
                    .collect::<Result<_>>()?;
                if idx.len() != 3 {
                    return Err(Error::parse(name, lineno, "only triangular faces are supported"));
                }
                mesh.triangles.push([idx[0], idx[1], idx[2]]);
            }
            _ => {}
        }
    }
    if !colors.is_empty() {
        if colors.len() != mesh.vertices.len() {
            return Err(Error::format(name, "some vertices have colors and some do not"));
        }
        mesh.colors = Some(colors);
    }
    let n = mesh.vertices.len() as u32;
    if mesh.triangles.iter().flatten().any(|&i| i >= n) {
        return Err(Error::format(name, "face index out of range"));
    }
    Ok(mesh)
}

pub fn import_obj(path: &Path) -> Result<TriMesh> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_obj(BufReader::new(f), path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tri() -> TriMesh {
        TriMesh {
            vertices: vec![Vec3::new(0.0, 0.0, 0.0), Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.25)],
            triangles: vec![[0, 1, 2]],
            colors: None,
        }
    }

    fn text(m: &TriMesh) -> String {
        let mut buf = Vec::new();
        write_obj(m, &mut buf).unwrap();
        String::from_utf8(buf).unwrap()
    }

    #[test]
    fn empty_mesh_is_header_only() {
        assert_eq!(text(&TriMesh::default()), format!("{HEADER}\n"));
    }

    #[test]
    fn single_triangle_lines() {
        let t = text(&tri());
        assert_eq!(t.lines().filter(|l| l.starts_with("v ")).count(), 3);
        assert_eq!(t.lines().filter(|l| l.starts_with("f ")).count(), 1);
        assert!(t.contains("f 1 2 3"));
        assert!(t.contains("v 0.000000 1.000000 0.250000"));
    }

    #[test]
    fn round_trip_with_colors() {
        let mut m = tri();
        m.vertices[1] = Vec3::new(0.1234567, -2.5, 3.0);
        m.colors = Some(vec![[0.1, 0.2, 0.3], [1.0, 0.0, 0.5], [0.25, 0.75, 0.125]]);
        let back = read_obj(text(&m).as_bytes(), Path::new("mem.obj")).unwrap();
        assert_eq!(back.triangles, m.triangles);
        for (a, b) in back.vertices.iter().zip(&m.vertices) {
            assert!((a - b).amax() < 1e-6);
        }
        assert_eq!(back.colors.unwrap().len(), 3);
        // Re-export is byte identical.
        let again = read_obj(text(&m).as_bytes(), Path::new("mem.obj")).unwrap();
        assert_eq!(text(&again), text(&m));
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let err = read_obj("# x\nv 0 0 0\nf 1 2 x\n".as_bytes(), Path::new("bad.obj")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
        let err = read_obj("v 0 0 0\nf 1 2 3\n".as_bytes(), Path::new("bad.obj")).unwrap_err();
        assert!(matches!(err, Error::Format { .. }));
    }
}
