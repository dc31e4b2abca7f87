//! Perspective camera model: back-projection, analytic tangents and
//! finite-difference normals from depth.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{FusionError, Result};
use crate::grids::{DomainMask, ScalarField, VectorField3};

/// Pinhole intrinsics with a single focal length in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    /// Focal length in pixels.
    pub f: f64,
    /// Principal point, u-coordinate.
    pub cu: f64,
    /// Principal point, v-coordinate.
    pub cv: f64,
}

impl CameraIntrinsics {
    pub fn new(f: f64, cu: f64, cv: f64) -> Result<Self> {
        if !(f > 0.0) {
            return Err(FusionError::InvalidParams(format!(
                "focal length must be positive, got {}",
                f
            )));
        }
        Ok(Self { f, cu, cv })
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| FusionError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let k: CameraIntrinsics =
            serde_json::from_str(&text).map_err(|e| FusionError::InvalidParams(format!(
                "camera file {:?}: {}",
                path, e
            )))?;
        CameraIntrinsics::new(k.f, k.cu, k.cv)
    }

    pub fn to_json_file(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("intrinsics serialize");
        std::fs::write(path, text).map_err(|e| FusionError::Io {
            path: path.to_path_buf(),
            source: e,
        })
    }

    /// Camera-space point for pixel (u, v) at depth d.
    #[inline]
    pub fn back_project_pixel(&self, u: f64, v: f64, d: f64) -> [f64; 3] {
        [
            d * (u - self.cu) / self.f,
            d * (v - self.cv) / self.f,
            d,
        ]
    }

    /// Perspective projection of a camera-space point (z > 0).
    #[inline]
    pub fn project(&self, p: [f64; 3]) -> [f64; 2] {
        [
            self.f * p[0] / p[2] + self.cu,
            self.f * p[1] / p[2] + self.cv,
        ]
    }
}

/// A camera-space point together with its source pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CloudPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub u: usize,
    pub v: usize,
}

#[derive(Debug, Clone, Default)]
pub struct PointCloud {
    pub points: Vec<CloudPoint>,
}

/// Back-projects every masked depth pixel into camera space.
pub fn back_project(
    depth: &ScalarField,
    mask: &DomainMask,
    k: &CameraIntrinsics,
) -> Result<PointCloud> {
    let mut points = Vec::with_capacity(mask.count());
    for v in 0..depth.height() {
        for u in 0..depth.width() {
            if !mask.get(u, v) {
                continue;
            }
            let d = depth.get(u, v);
            if !(d > 0.0) {
                return Err(FusionError::Domain {
                    u,
                    v,
                    msg: format!("non-positive depth {} on mask", d),
                });
            }
            let p = k.back_project_pixel(u as f64, v as f64, d);
            points.push(CloudPoint {
                x: p[0],
                y: p[1],
                z: p[2],
                u,
                v,
            });
        }
    }
    Ok(PointCloud { points })
}

/// Normals estimated from depth with the perspective tangent model.
///
/// Finite differences use the forward stencil where the forward neighbor
/// is in-mask, falling back to backward, else the pixel is invalid.
/// Output normals are unit length and oriented with n_z > 0; `valid`
/// marks pixels with a usable (non-degenerate) estimate.
pub struct DepthNormals {
    pub normals: VectorField3,
    pub valid: DomainMask,
}

pub fn normals_from_depth(
    depth: &ScalarField,
    mask: &DomainMask,
    k: &CameraIntrinsics,
) -> Result<DepthNormals> {
    let (w, h) = (depth.width(), depth.height());
    let mut normals = VectorField3::zeros(w, h);
    let mut valid = DomainMask::empty(w, h);

    // central difference when both neighbors are on the mask, else the
    // available one-sided difference
    let diff_u = |u: usize, v: usize| -> Option<f64> {
        let fwd = u + 1 < w && mask.get(u + 1, v);
        let bwd = u > 0 && mask.get(u - 1, v);
        match (fwd, bwd) {
            (true, true) => Some((depth.get(u + 1, v) - depth.get(u - 1, v)) / 2.0),
            (true, false) => Some(depth.get(u + 1, v) - depth.get(u, v)),
            (false, true) => Some(depth.get(u, v) - depth.get(u - 1, v)),
            (false, false) => None,
        }
    };
    let diff_v = |u: usize, v: usize| -> Option<f64> {
        let fwd = v + 1 < h && mask.get(u, v + 1);
        let bwd = v > 0 && mask.get(u, v - 1);
        match (fwd, bwd) {
            (true, true) => Some((depth.get(u, v + 1) - depth.get(u, v - 1)) / 2.0),
            (true, false) => Some(depth.get(u, v + 1) - depth.get(u, v)),
            (false, true) => Some(depth.get(u, v) - depth.get(u, v - 1)),
            (false, false) => None,
        }
    };

    for v in 0..h {
        for u in 0..w {
            if !mask.get(u, v) {
                continue;
            }
            let d = depth.get(u, v);
            if !(d > 0.0) {
                return Err(FusionError::Domain {
                    u,
                    v,
                    msg: format!("non-positive depth {} on mask", d),
                });
            }
            let (du, dv) = match (diff_u(u, v), diff_v(u, v)) {
                (Some(a), Some(b)) => (a, b),
                _ => continue,
            };
            let uu = u as f64 - k.cu;
            let vv = v as f64 - k.cv;
            // tangents of the perspective surface parameterization
            let tu = [(uu * du + d) / k.f, vv * du / k.f, du];
            let tv = [uu * dv / k.f, (vv * dv + d) / k.f, dv];
            let mut n = [
                tu[1] * tv[2] - tu[2] * tv[1],
                tu[2] * tv[0] - tu[0] * tv[2],
                tu[0] * tv[1] - tu[1] * tv[0],
            ];
            let norm = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
            if norm < 1e-300 {
                continue;
            }
            let sign = if n[2] < 0.0 { -1.0 } else { 1.0 };
            for c in &mut n {
                *c *= sign / norm;
            }
            normals.set(u, v, n);
            valid.set(u, v, true);
        }
    }
    Ok(DepthNormals { normals, valid })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn k() -> CameraIntrinsics {
        CameraIntrinsics::new(100.0, 8.0, 8.0).unwrap()
    }

    #[test]
    fn principal_point_ray() {
        let p = k().back_project_pixel(8.0, 8.0, 5.0);
        assert_eq!(p, [0.0, 0.0, 5.0]);
    }

    #[test]
    fn forty_five_degree_ray() {
        let cam = CameraIntrinsics::new(100.0, 0.0, 0.0).unwrap();
        let p = cam.back_project_pixel(100.0, 0.0, 2.0);
        assert_eq!(p, [2.0, 0.0, 2.0]);
    }

    #[test]
    fn direct_substitution() {
        let p = k().back_project_pixel(8.0 + 3.0, 8.0 - 4.0, 10.0);
        assert!((p[0] - 0.3).abs() < 1e-15);
        assert!((p[1] + 0.4).abs() < 1e-15);
        assert_eq!(p[2], 10.0);
    }

    #[test]
    fn back_project_then_project_recovers_pixels() {
        let cam = CameraIntrinsics::new(311.7, 13.2, 9.9).unwrap();
        let mut depth = ScalarField::constant(16, 16, 0.0);
        for v in 0..16 {
            for u in 0..16 {
                depth.set(u, v, 50.0 + (u as f64) * 1.3 + (v as f64) * 0.7);
            }
        }
        let mask = DomainMask::full(16, 16);
        let cloud = back_project(&depth, &mask, &cam).unwrap();
        assert_eq!(cloud.points.len(), 256);
        for p in &cloud.points {
            let uv = cam.project([p.x, p.y, p.z]);
            assert!((uv[0] - p.u as f64).abs() < 1e-12);
            assert!((uv[1] - p.v as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn back_project_rejects_nonpositive_depth() {
        let depth = ScalarField::constant(4, 4, 0.0);
        let err = back_project(&depth, &DomainMask::full(4, 4), &k()).unwrap_err();
        assert!(matches!(err, FusionError::Domain { .. }));
    }

    #[test]
    fn constant_depth_gives_unit_z_normals() {
        let depth = ScalarField::constant(16, 16, 10.0);
        let mask = DomainMask::full(16, 16);
        let out = normals_from_depth(&depth, &mask, &k()).unwrap();
        for v in 0..16 {
            for u in 0..16 {
                assert!(out.valid.get(u, v));
                let n = out.normals.get(u, v);
                assert!((n[0]).abs() < 1e-12 && (n[1]).abs() < 1e-12);
                assert!((n[2] - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn normals_are_unit_where_valid() {
        let cam = k();
        let mut depth = ScalarField::constant(16, 16, 0.0);
        for v in 0..16 {
            for u in 0..16 {
                depth.set(u, v, 30.0 + (u as f64 * 0.37).sin() + (v as f64 * 0.51).cos());
            }
        }
        let out = normals_from_depth(&depth, &DomainMask::full(16, 16), &cam).unwrap();
        for (n, &ok) in out.normals.values().iter().zip(out.valid.bits()) {
            if ok {
                let norm = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
                assert!((norm - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn camera_json_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("camera.json");
        let cam = CameraIntrinsics::new(600.0, 128.0, 127.5).unwrap();
        cam.to_json_file(&path).unwrap();
        assert_eq!(CameraIntrinsics::from_json_file(&path).unwrap(), cam);
    }
}
