//! Correspondence CSV (`u,v,X,Y,Z`) and intrinsics (3x3, whitespace or
//! comma separated) files.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix3, Vector2, Vector3};

use super::CorrespondenceSet;
use crate::{Error, Result};

fn numbers(line: &str) -> std::result::Result<Vec<f64>, std::num::ParseFloatError> {
    line.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|w| !w.is_empty())
        .map(str::parse)
        .collect()
}

/// One match per line. Blank lines, `#` comments and a leading header line
/// are skipped.
pub fn parse_matches(text: &str) -> Result<(Vec<Vector2<f64>>, Vec<Vector3<f64>>)> {
    let mut image = Vec::new();
    let mut world = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let vals = match numbers(line) {
            Ok(v) => v,
            Err(_) if image.is_empty() => continue,
            Err(e) => return Err(Error::Parse(format!("line {}: {e}", ln + 1))),
        };
        if vals.len() != 5 {
            return Err(Error::Parse(format!("line {}: expected 5 columns u,v,X,Y,Z", ln + 1)));
        }
        image.push(Vector2::new(vals[0], vals[1]));
        world.push(Vector3::new(vals[2], vals[3], vals[4]));
    }
    Ok((image, world))
}

pub fn format_matches(set: &CorrespondenceSet) -> String {
    let mut s = String::from("u,v,X,Y,Z\n");
    for (p, w) in set.image().iter().zip(set.world()) {
        let _ = writeln!(s, "{:?},{:?},{:?},{:?},{:?}", p.x, p.y, w.x, w.y, w.z);
    }
    s
}

pub fn parse_intrinsics(text: &str) -> Result<Matrix3<f64>> {
    let mut vals = Vec::new();
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
        vals.extend(numbers(line).map_err(|e| Error::Parse(format!("intrinsics: {e}")))?);
    }
    if vals.len() != 9 {
        return Err(Error::Parse(format!("intrinsics need 9 numbers, found {}", vals.len())));
    }
    Ok(Matrix3::from_row_slice(&vals))
}

pub fn format_intrinsics(k: &Matrix3<f64>) -> String {
    let mut s = String::new();
    for r in 0..3 {
        let _ = writeln!(s, "{:?} {:?} {:?}", k[(r, 0)], k[(r, 1)], k[(r, 2)]);
    }
    s
}

pub fn load_correspondences(matches: impl AsRef<Path>, intrinsics: impl AsRef<Path>) -> Result<CorrespondenceSet> {
    let (image, world) = parse_matches(&std::fs::read_to_string(matches)?)?;
    let k = parse_intrinsics(&std::fs::read_to_string(intrinsics)?)?;
    CorrespondenceSet::new(image, world, k)
}

pub fn save_correspondences(set: &CorrespondenceSet, matches: impl AsRef<Path>, intrinsics: impl AsRef<Path>) -> Result<()> {
    std::fs::write(matches, format_matches(set))?;
    std::fs::write(intrinsics, format_intrinsics(set.intrinsics()))?;
    Ok(())
}
