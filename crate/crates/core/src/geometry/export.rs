use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{PointCloud, SurfaceMesh};
use crate::{Error, Result};

/// ASCII OFF: header, counts, one vertex per line, then `3 a b c` faces.
pub fn write_mesh_off(path: &Path, mesh: &SurfaceMesh) -> Result<()> {
    let mut s = String::new();
    s.push_str("OFF\n");
    let _ = writeln!(s, "{} {} 0", mesh.vertices.len(), mesh.triangles.len());
    for v in &mesh.vertices {
        let _ = writeln!(s, "{} {} {}", v[0], v[1], v[2]);
    }
    for t in &mesh.triangles {
        let _ = writeln!(s, "3 {} {} {}", t[0], t[1], t[2]);
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// CSV with header `x,y,z` or `x,y,z,importance`.
pub fn write_points_csv(path: &Path, cloud: &PointCloud, importance: Option<&[f64]>) -> Result<()> {
    if let Some(imp) = importance {
        if imp.len() != cloud.len() {
            return Err(Error::Shape(format!(
                "{} importances for {} points",
                imp.len(),
                cloud.len()
            )));
        }
    }
    let mut s = String::new();
    s.push_str(if importance.is_some() { "x,y,z,importance\n" } else { "x,y,z\n" });
    for (i, p) in cloud.points.iter().enumerate() {
        let _ = write!(s, "{},{},{}", p[0], p[1], p[2]);
        if let Some(imp) = importance {
            let _ = write!(s, ",{}", imp[i]);
        }
        s.push('\n');
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Reads a file written by [`write_points_csv`]; the importance column, when
/// present, is returned alongside.
pub fn read_points_csv(path: &Path) -> Result<(PointCloud, Option<Vec<f64>>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    let with_imp = match header {
        "x,y,z" => false,
        "x,y,z,importance" => true,
        other => {
            return Err(Error::Header {
                path: path.into(),
                reason: format!("unexpected CSV header {other:?}"),
            })
        }
    };
    let mut points = Vec::new();
    let mut imp = Vec::new();
    for (n, line) in lines.enumerate() {
        let vals: std::result::Result<Vec<f64>, _> = line.split(',').map(str::parse).collect();
        let vals = vals.map_err(|e| Error::Format {
            path: path.into(),
            reason: format!("line {}: {e}", n + 2),
        })?;
        if vals.len() != 3 + with_imp as usize {
            return Err(Error::Format {
                path: path.into(),
                reason: format!("line {}: {} columns", n + 2, vals.len()),
            });
        }
        points.push([vals[0], vals[1], vals[2]]);
        if with_imp {
            imp.push(vals[3]);
        }
    }
    Ok((PointCloud::new(points), with_imp.then_some(imp)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        let cloud = PointCloud::new(vec![[0.1, -0.2, 0.3], [1.0, 0.0, -1.0]]);
        write_points_csv(&path, &cloud, Some(&[0.25, 1.0])).unwrap();
        let (back, imp) = read_points_csv(&path).unwrap();
        assert_eq!(back, cloud);
        assert_eq!(imp.unwrap(), vec![0.25, 1.0]);
    }

    #[test]
    fn off_has_counts() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.off");
        let mesh = SurfaceMesh {
            vertices: vec![[0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            triangles: vec![[0, 1, 2]],
        };
        write_mesh_off(&path, &mesh).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "OFF");
        assert_eq!(lines[1], "3 1 0");
        assert_eq!(lines[5], "3 0 1 2");
    }
}
