//! ASCII PLY and CSV point files.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;

use super::cloud::PointCloud;
use crate::{Error, Result};

/// Parses the vertex element of an ASCII PLY file. Files without a `z`
/// property give planar clouds.
pub fn parse_ply(text: &str) -> Result<PointCloud> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("ply") {
        return Err(Error::Parse("missing 'ply' header line".into()));
    }
    let mut vertices = None;
    let mut props: Vec<String> = Vec::new();
    let mut in_vertex = false;
    let mut ascii = false;
    let mut skip_counts = Vec::new();
    loop {
        let line = lines
            .next()
            .ok_or_else(|| Error::Parse("PLY header has no end_header".into()))?
            .trim();
        let words: Vec<&str> = line.split_whitespace().collect();
        match words.as_slice() {
            ["format", "ascii", _] => ascii = true,
            ["format", other, ..] => return Err(Error::Parse(format!("unsupported PLY format {other}"))),
            ["element", "vertex", n] => {
                vertices = Some(n.parse::<usize>().map_err(|e| Error::Parse(format!("vertex count: {e}")))?);
                in_vertex = true;
            }
            ["element", _, n] => {
                if vertices.is_none() {
                    skip_counts.push(n.parse::<usize>().map_err(|e| Error::Parse(format!("element count: {e}")))?);
                }
                in_vertex = false;
            }
            ["property", .., name] if in_vertex => props.push(name.to_string()),
            ["end_header"] => break,
            _ => {}
        }
    }
    if !ascii {
        return Err(Error::Parse("PLY format line missing".into()));
    }
    let n = vertices.ok_or_else(|| Error::Parse("PLY has no vertex element".into()))?;
    let col = |name: &str| props.iter().position(|p| p == name);
    let (ix, iy) = match (col("x"), col("y")) {
        (Some(x), Some(y)) => (x, y),
        _ => return Err(Error::Parse("PLY vertices need x and y properties".into())),
    };
    let iz = col("z");
    let skip: usize = skip_counts.iter().sum();
    let mut body = lines.filter(|l| !l.trim().is_empty()).skip(skip);
    let mut points = Vec::with_capacity(n);
    for k in 0..n {
        let line = body
            .next()
            .ok_or_else(|| Error::Parse(format!("PLY ends after {k} of {n} vertices")))?;
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|w| w.parse::<f64>().map_err(|e| Error::Parse(format!("vertex {k}: {e}"))))
            .collect::<Result<_>>()?;
        let get = |i: usize| vals.get(i).copied().ok_or_else(|| Error::Parse(format!("vertex {k} is short")));
        points.push(Vector3::new(get(ix)?, get(iy)?, iz.map(get).transpose()?.unwrap_or(0.0)));
    }
    PointCloud::new(if iz.is_some() { 3 } else { 2 }, points)
}

pub fn format_ply(cloud: &PointCloud) -> String {
    let mut s = String::new();
    s.push_str("ply\nformat ascii 1.0\n");
    let _ = writeln!(s, "element vertex {}", cloud.len());
    s.push_str("property double x\nproperty double y\n");
    if cloud.dim() == 3 {
        s.push_str("property double z\n");
    }
    s.push_str("end_header\n");
    for p in cloud.points() {
        if cloud.dim() == 3 {
            let _ = writeln!(s, "{:?} {:?} {:?}", p.x, p.y, p.z);
        } else {
            let _ = writeln!(s, "{:?} {:?}", p.x, p.y);
        }
    }
    s
}

/// One point per line, comma separated; 2 columns for planar clouds, 3 for
/// spatial ones. Blank lines and lines starting with `#` are skipped, as is
/// a leading header line that does not parse as numbers.
pub fn parse_csv_points(text: &str) -> Result<PointCloud> {
    let mut dim = None;
    let mut points = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let vals: std::result::Result<Vec<f64>, _> = fields.iter().map(|f| f.parse::<f64>()).collect();
        let vals = match vals {
            Ok(v) => v,
            Err(_) if points.is_empty() && dim.is_none() => continue,
            Err(e) => return Err(Error::Parse(format!("line {}: {e}", ln + 1))),
        };
        let d = *dim.get_or_insert(vals.len());
        if vals.len() != d || !(d == 2 || d == 3) {
            return Err(Error::Parse(format!("line {}: expected {d} columns (2 or 3)", ln + 1)));
        }
        points.push(Vector3::new(vals[0], vals[1], if d == 3 { vals[2] } else { 0.0 }));
    }
    PointCloud::new(dim.unwrap_or(3), points)
}

pub fn format_csv_points(cloud: &PointCloud) -> String {
    let mut s = String::new();
    for p in cloud.points() {
        if cloud.dim() == 3 {
            let _ = writeln!(s, "{:?},{:?},{:?}", p.x, p.y, p.z);
        } else {
            let _ = writeln!(s, "{:?},{:?}", p.x, p.y);
        }
    }
    s
}

fn is_ply(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("ply"))
}

/// Reads `.ply` files as PLY and anything else as CSV.
pub fn load_cloud(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    if is_ply(path) {
        parse_ply(&text)
    } else {
        parse_csv_points(&text)
    }
}

pub fn save_cloud(cloud: &PointCloud, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = if is_ply(path) { format_ply(cloud) } else { format_csv_points(cloud) };
    std::fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ply_round_trip_and_faces() {
        let c = PointCloud::from_xyz(&[[0.1, -2.0, 3.5], [1e-17, 0.0, -0.0]]).unwrap();
        assert_eq!(parse_ply(&format_ply(&c)).unwrap(), c);
        let planar = PointCloud::from_xy(&[[0.5, 0.25]]).unwrap();
        assert_eq!(parse_ply(&format_ply(&planar)).unwrap(), planar);

        let text = "ply\nformat ascii 1.0\ncomment made by hand\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nproperty uchar red\nelement face 1\nproperty list uchar int vertex_indices\nend_header\n1 2 3 255\n4 5 6 0\n3 0 1 1\n";
        let c = parse_ply(text).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.points()[1], Vector3::new(4.0, 5.0, 6.0));
    }

    #[test]
    fn ply_errors() {
        assert!(parse_ply("plx\n").is_err());
        assert!(parse_ply("ply\nformat binary_little_endian 1.0\nend_header\n").is_err());
        assert!(parse_ply("ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\nproperty float y\nend_header\n1 2\n").is_err());
    }

    #[test]
    fn csv_round_trip() {
        let c = PointCloud::from_xy(&[[0.1, 0.2], [-3.0, 4.5]]).unwrap();
        assert_eq!(parse_csv_points(&format_csv_points(&c)).unwrap(), c);
        let c = parse_csv_points("x,y,z\n1,2,3\n\n# note\n4,5,6\n").unwrap();
        assert_eq!(c.dim(), 3);
        assert_eq!(c.len(), 2);
        assert!(parse_csv_points("1,2\n1,2,3\n").is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let c = PointCloud::from_xyz(&[[0.1, -2.0, 3.5]]).unwrap();
        for name in ["a.ply", "a.csv"] {
            let path = dir.path().join(name);
            save_cloud(&c, &path).unwrap();
            assert_eq!(load_cloud(&path).unwrap(), c);
        }
    }
}
