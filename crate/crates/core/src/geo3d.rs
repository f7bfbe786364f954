//! 3D box projection and 8-corner location-token phrases.
//!
//! Canonical corner order: bottom face counter-clockwise seen from above,
//! starting at front-left (front-left, back-left, back-right, front-right),
//! then the top face in the same order.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layout::{GridSpec, LocationToken};
use crate::token::encode_corner;

pub type Point3 = [f64; 3];

const ORTHONORMAL_TOL: f64 = 1e-6;
const RIGIDITY_TOL: f64 = 1e-6;

/// Pinhole camera: intrinsics `K` and a rigid world-to-camera transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraRig {
    intrinsics: [[f64; 3]; 3],
    extrinsics: [[f64; 4]; 4],
}

impl CameraRig {
    pub fn new(intrinsics: [[f64; 3]; 3], extrinsics: [[f64; 4]; 4]) -> Result<Self> {
        let k = intrinsics;
        if !(k[0][0] > 0.0 && k[1][1] > 0.0) {
            return Err(Error::Argument(format!("focal lengths must be positive, got fx={} fy={}", k[0][0], k[1][1])));
        }
        if k[0][1] != 0.0 || k[1][0] != 0.0 || k[2] != [0.0, 0.0, 1.0] {
            return Err(Error::Argument("intrinsics must be [[fx,0,cx],[0,fy,cy],[0,0,1]]".into()));
        }
        if !intrinsics.iter().flatten().chain(extrinsics.iter().flatten()).all(|v| v.is_finite()) {
            return Err(Error::Argument("rig entries must be finite".into()));
        }
        if extrinsics[3] != [0.0, 0.0, 0.0, 1.0] {
            return Err(Error::Argument("extrinsics bottom row must be [0,0,0,1]".into()));
        }
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|r| extrinsics[r][i] * extrinsics[r][j]).sum();
                let expected = if i == j { 1.0 } else { 0.0 };
                if (dot - expected).abs() > ORTHONORMAL_TOL {
                    return Err(Error::Argument(format!("extrinsic rotation not orthonormal (RᵀR[{i}][{j}] = {dot})")));
                }
            }
        }
        Ok(Self { intrinsics, extrinsics })
    }

    pub fn from_params(fx: f64, fy: f64, cx: f64, cy: f64, extrinsics: [[f64; 4]; 4]) -> Result<Self> {
        Self::new([[fx, 0.0, cx], [0.0, fy, cy], [0.0, 0.0, 1.0]], extrinsics)
    }

    pub fn intrinsics(&self) -> &[[f64; 3]; 3] {
        &self.intrinsics
    }

    pub fn extrinsics(&self) -> &[[f64; 4]; 4] {
        &self.extrinsics
    }

    /// World point to camera frame.
    pub fn to_camera(&self, p: Point3) -> Point3 {
        let e = &self.extrinsics;
        std::array::from_fn(|r| e[r][0] * p[0] + e[r][1] * p[1] + e[r][2] * p[2] + e[r][3])
    }

    /// Reads the JSON calibration form: 9 intrinsics and 16 extrinsics, row-major.
    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let raw: RigFile = serde_json::from_slice(bytes).map_err(|e| Error::json(bytes, e))?;
        if raw.intrinsics.len() != 9 || raw.extrinsics.len() != 16 {
            return Err(Error::Argument(format!(
                "rig needs 9 intrinsics and 16 extrinsics, got {} and {}",
                raw.intrinsics.len(),
                raw.extrinsics.len()
            )));
        }
        let k = std::array::from_fn(|r| std::array::from_fn(|c| raw.intrinsics[r * 3 + c]));
        let e = std::array::from_fn(|r| std::array::from_fn(|c| raw.extrinsics[r * 4 + c]));
        Self::new(k, e)
    }

    pub fn to_json(&self) -> String {
        let raw = RigFile {
            intrinsics: self.intrinsics.iter().flatten().copied().collect(),
            extrinsics: self.extrinsics.iter().flatten().copied().collect(),
        };
        serde_json::to_string(&raw).expect("rig serializes")
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RigFile {
    intrinsics: Vec<f64>,
    extrinsics: Vec<f64>,
}

/// Eight world-frame corners in canonical order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Box3D {
    corners: [Point3; 8],
}

fn dist(a: Point3, b: Point3) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

impl Box3D {
    /// Checks finiteness and that opposing edges have equal length.
    pub fn new(corners: [Point3; 8]) -> Result<Self> {
        if !corners.iter().flatten().all(|v| v.is_finite()) {
            return Err(Error::Argument("box corners must be finite".into()));
        }
        let edge = |a: usize, b: usize| dist(corners[a], corners[b]);
        let close = |a: f64, b: f64| (a - b).abs() <= RIGIDITY_TOL * (1.0 + a.abs().max(b.abs()));
        let bottom: Vec<f64> = (0..4).map(|k| edge(k, (k + 1) % 4)).collect();
        let top: Vec<f64> = (0..4).map(|k| edge(4 + k, 4 + (k + 1) % 4)).collect();
        let vertical: Vec<f64> = (0..4).map(|k| edge(k, k + 4)).collect();
        let rigid = (0..4).all(|k| close(bottom[k], top[k]))
            && close(bottom[0], bottom[2])
            && close(bottom[1], bottom[3])
            && vertical.iter().all(|&v| close(v, vertical[0]));
        if !rigid {
            return Err(Error::Argument("box corners are not rigid: opposing edges differ".into()));
        }
        Ok(Self { corners })
    }

    /// Box from its center, `length` along the heading, `width`, `height`
    /// along +z and `yaw` about +z (world frame, z up).
    pub fn from_center(center: Point3, length: f64, width: f64, height: f64, yaw: f64) -> Result<Self> {
        let (s, c) = yaw.sin_cos();
        let (l, w, h) = (length / 2.0, width / 2.0, height / 2.0);
        let footprint = [(l, w), (-l, w), (-l, -w), (l, -w)];
        let corners = std::array::from_fn(|i| {
            let (fx, fy) = footprint[i % 4];
            let dz = if i < 4 { -h } else { h };
            [center[0] + c * fx - s * fy, center[1] + s * fx + c * fy, center[2] + dz]
        });
        Self::new(corners)
    }

    pub fn corners(&self) -> &[Point3; 8] {
        &self.corners
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectedCorner {
    /// Pixel coordinates; NaN when not visible.
    pub x: f64,
    pub y: f64,
    /// False when the corner is at or behind the camera plane.
    pub visible: bool,
}

/// Projects the eight corners through the rig, preserving corner order.
pub fn project_corners(b: &Box3D, rig: &CameraRig) -> [ProjectedCorner; 8] {
    let k = rig.intrinsics();
    b.corners.map(|p| {
        let [x, y, z] = rig.to_camera(p);
        if z <= 0.0 {
            return ProjectedCorner { x: f64::NAN, y: f64::NAN, visible: false };
        }
        let (u, v) = (x / z, y / z);
        ProjectedCorner { x: k[0][0] * u + k[0][2], y: k[1][1] * v + k[1][2], visible: true }
    })
}

/// Class name and eight corner tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Box3DPhrase {
    pub class_name: String,
    pub tokens: [LocationToken; 8],
}

impl fmt::Display for Box3DPhrase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.class_name)?;
        for t in &self.tokens {
            write!(f, " {t}")?;
        }
        Ok(())
    }
}

/// Encodes every projected corner with the 2D codec. `reverse` emits the
/// tokens in exactly reversed corner order. Boxes with any corner behind the
/// camera or outside the frame are rejected.
pub fn encode_box3d(
    class_name: &str,
    b: &Box3D,
    rig: &CameraRig,
    grid: &GridSpec,
    reverse: bool,
) -> Result<Box3DPhrase> {
    let projected = project_corners(b, rig);
    let mut tokens = [LocationToken(0); 8];
    for (i, c) in projected.iter().enumerate() {
        if !c.visible {
            return Err(Error::NotEncodable { corner: i, reason: "is behind the camera" });
        }
        tokens[i] = encode_corner(c.x, c.y, grid)
            .map_err(|_| Error::NotEncodable { corner: i, reason: "projects outside the image" })?;
    }
    if reverse {
        tokens.reverse();
    }
    Ok(Box3DPhrase { class_name: class_name.to_string(), tokens })
}
