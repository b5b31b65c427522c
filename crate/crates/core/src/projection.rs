//! LiDAR-to-image projection and depth-map construction.
//!
//! A point `P = (x, y, z)` in the sensor frame is lifted to homogeneous
//! coordinates, transformed by the rigid extrinsic `R` (4x4) and the
//! intrinsic `T` (3x4), and divided by the projected depth to get pixel
//! coordinates. The per-point depth is the Euclidean distance of `P` from
//! the sensor origin, not the camera-frame z. Each pixel of the depth map
//! holds the minimum projecting depth clamped to `d_max`, or 0 when no
//! point lands there.
//!
//! Depth maps serialize to a little-endian binary format: magic `DPM1`,
//! `u32` width, `u32` height, `f32` d_max, then `height * width` `f32`
//! values row-major with row 0 at the top.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Points behind or numerically on the image plane are discarded before
/// perspective division.
pub const Z_MIN: f64 = 1e-3;

/// Default clamp distance, meters.
pub const DEFAULT_D_MAX: f64 = 80.0;

const DPM_MAGIC: &[u8; 4] = b"DPM1";

/// A set of 3-D points in the sensor frame, meters.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<[f64; 3]>,
}

impl PointCloud {
    pub fn new(points: Vec<[f64; 3]>) -> Result<Self> {
        if points.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite {
                context: "point cloud",
            });
        }
        Ok(PointCloud { points })
    }

    pub fn points(&self) -> &[[f64; 3]] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Parses a plain-text cloud, one `x y z` triple per line. Blank lines
    /// and lines starting with `#` are skipped.
    pub fn from_text(text: &str, origin: &Path) -> Result<Self> {
        let mut points = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 3 {
                return Err(Error::format(
                    origin,
                    idx + 1,
                    format!("expected 3 coordinates, found {}", fields.len()),
                ));
            }
            let mut p = [0.0; 3];
            for (slot, field) in p.iter_mut().zip(&fields) {
                *slot = field.parse::<f64>().map_err(|_| {
                    Error::format(origin, idx + 1, format!("invalid number {field:?}"))
                })?;
            }
            points.push(p);
        }
        PointCloud::new(points).map_err(|_| {
            Error::format(origin, 0, "point cloud contains non-finite values".to_string())
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text, path)
    }
}

/// Pinhole camera: rigid sensor-to-camera extrinsic plus a 3x4 intrinsic
/// projection, with the target image size.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraModel {
    extrinsic: [[f64; 4]; 4],
    intrinsic: [[f64; 4]; 3],
    width: u32,
    height: u32,
    /// Precomputed intrinsic * extrinsic.
    projection: [[f64; 4]; 3],
}

impl CameraModel {
    pub fn new(
        extrinsic: [[f64; 4]; 4],
        intrinsic: [[f64; 4]; 3],
        width: u32,
        height: u32,
    ) -> Result<Self> {
        if width < 1 || height < 1 {
            return Err(Error::InvalidArgument(
                "image dimensions must be at least 1x1".into(),
            ));
        }
        if extrinsic.iter().flatten().any(|v| !v.is_finite())
            || intrinsic.iter().flatten().any(|v| !v.is_finite())
        {
            return Err(Error::NonFinite {
                context: "camera matrices",
            });
        }
        let bottom = extrinsic[3];
        let expected = [0.0, 0.0, 0.0, 1.0];
        if bottom
            .iter()
            .zip(&expected)
            .any(|(a, b)| (a - b).abs() > 1e-9)
        {
            return Err(Error::InvalidArgument(
                "extrinsic bottom row must be (0, 0, 0, 1)".into(),
            ));
        }
        check_rotation(&extrinsic)?;
        let projection = mat34_mul_mat44(&intrinsic, &extrinsic);
        Ok(CameraModel {
            extrinsic,
            intrinsic,
            width,
            height,
            projection,
        })
    }

    /// Builds the intrinsic matrix from pinhole parameters
    /// `[[fx, 0, cx, 0], [0, fy, cy, 0], [0, 0, 1, 0]]`.
    pub fn from_pinhole(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        extrinsic: [[f64; 4]; 4],
        width: u32,
        height: u32,
    ) -> Result<Self> {
        let intrinsic = [
            [fx, 0.0, cx, 0.0],
            [0.0, fy, cy, 0.0],
            [0.0, 0.0, 1.0, 0.0],
        ];
        CameraModel::new(extrinsic, intrinsic, width, height)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn extrinsic(&self) -> &[[f64; 4]; 4] {
        &self.extrinsic
    }

    pub fn intrinsic(&self) -> &[[f64; 4]; 3] {
        &self.intrinsic
    }
}

fn check_rotation(extrinsic: &[[f64; 4]; 4]) -> Result<()> {
    // upper-left 3x3 block must be a proper rotation
    let r = extrinsic;
    let mut rtr = [[0.0; 3]; 3];
    for (i, row) in rtr.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = (0..3).map(|k| r[k][i] * r[k][j]).sum();
        }
    }
    for (i, row) in rtr.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            let expected = if i == j { 1.0 } else { 0.0 };
            if (v - expected).abs() > 1e-9 {
                return Err(Error::InvalidArgument(
                    "extrinsic rotation block is not orthonormal".into(),
                ));
            }
        }
    }
    let det = r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1])
        - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
        + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0]);
    if (det - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(
            "extrinsic rotation block must have determinant +1".into(),
        ));
    }
    Ok(())
}

fn mat34_mul_mat44(a: &[[f64; 4]; 3], b: &[[f64; 4]; 4]) -> [[f64; 4]; 3] {
    let mut out = [[0.0; 4]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = (0..4).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

/// Projects one sensor-frame point. Returns the integer pixel and the
/// sensor-origin distance, or `None` when the point is behind the near
/// plane or lands outside the image.
pub fn project_point(camera: &CameraModel, point: [f64; 3]) -> Option<(u32, u32, f64)> {
    let m = &camera.projection;
    let hom = [point[0], point[1], point[2], 1.0];
    let px = dot4(&m[0], &hom);
    let py = dot4(&m[1], &hom);
    let pz = dot4(&m[2], &hom);
    if pz <= Z_MIN {
        return None;
    }
    let u = (px / pz).round();
    let v = (py / pz).round();
    if u < 0.0 || v < 0.0 || u >= camera.width as f64 || v >= camera.height as f64 {
        return None;
    }
    let d = (point[0] * point[0] + point[1] * point[1] + point[2] * point[2]).sqrt();
    Some((u as u32, v as u32, d))
}

fn dot4(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2] + a[3] * b[3]
}

/// Image-plane grid of clamped metric depths; 0 marks pixels no point hit.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    width: u32,
    height: u32,
    d_max: f64,
    values: Vec<f64>,
}

impl DepthMap {
    fn zeroed(width: u32, height: u32, d_max: f64) -> Self {
        DepthMap {
            width,
            height,
            d_max,
            values: vec![0.0; width as usize * height as usize],
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn d_max(&self) -> f64 {
        self.d_max
    }

    /// Row-major values, row 0 at the top.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn at(&self, u: u32, v: u32) -> f64 {
        self.values[v as usize * self.width as usize + u as usize]
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(16 + self.values.len() * 4);
        buf.extend_from_slice(DPM_MAGIC);
        buf.extend_from_slice(&self.width.to_le_bytes());
        buf.extend_from_slice(&self.height.to_le_bytes());
        buf.extend_from_slice(&(self.d_max as f32).to_le_bytes());
        for v in &self.values {
            buf.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(&buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        let fail = |msg: &str| Error::format(path, 0, msg.to_string());
        if bytes.len() < 16 {
            return Err(fail("truncated depth-map header"));
        }
        if &bytes[0..4] != DPM_MAGIC {
            return Err(fail("bad magic, expected DPM1"));
        }
        let width = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        let height = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        let d_max = f32::from_le_bytes(bytes[12..16].try_into().unwrap()) as f64;
        if width < 1 || height < 1 || !d_max.is_finite() || d_max <= 0.0 {
            return Err(fail("invalid depth-map dimensions or d_max"));
        }
        let expected = width as usize * height as usize;
        let payload = &bytes[16..];
        if payload.len() != expected * 4 {
            return Err(fail(&format!(
                "expected {} depth values, found {} bytes",
                expected,
                payload.len()
            )));
        }
        let mut values = Vec::with_capacity(expected);
        for chunk in payload.chunks_exact(4) {
            values.push(f32::from_le_bytes(chunk.try_into().unwrap()) as f64);
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(fail("depth values must be finite and non-negative"));
        }
        Ok(DepthMap {
            width,
            height,
            d_max,
            values,
        })
    }
}

/// Builds a depth map by streaming every point through [`project_point`]
/// and keeping the per-pixel minimum, clamped to `d_max`.
pub fn build_depth_map(camera: &CameraModel, cloud: &PointCloud, d_max: f64) -> Result<DepthMap> {
    if !d_max.is_finite() || d_max <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "d_max must be finite and positive, got {d_max}"
        )));
    }
    let mut map = DepthMap::zeroed(camera.width, camera.height, d_max);
    for &point in cloud.points() {
        if let Some((u, v, d)) = project_point(camera, point) {
            let cell = &mut map.values[v as usize * camera.width as usize + u as usize];
            let clamped = d.min(d_max);
            if *cell == 0.0 || clamped < *cell {
                *cell = clamped;
            }
        }
    }
    Ok(map)
}

/// Brute-force reference for [`build_depth_map`]: for every pixel, scans the
/// whole cloud and takes the minimum projecting depth. The projection math
/// is evaluated inline rather than through [`project_point`] so the two
/// routes share no accumulation code. Output must match bit-exactly.
pub fn depth_map_oracle(camera: &CameraModel, cloud: &PointCloud, d_max: f64) -> Result<DepthMap> {
    if !d_max.is_finite() || d_max <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "d_max must be finite and positive, got {d_max}"
        )));
    }
    let m = &camera.projection;
    // pixel and depth of every point, None when off-frustum
    let projected: Vec<Option<(u32, u32, f64)>> = cloud
        .points()
        .iter()
        .map(|p| {
            let hom = [p[0], p[1], p[2], 1.0];
            let px = m[0][0] * hom[0] + m[0][1] * hom[1] + m[0][2] * hom[2] + m[0][3];
            let py = m[1][0] * hom[0] + m[1][1] * hom[1] + m[1][2] * hom[2] + m[1][3];
            let pz = m[2][0] * hom[0] + m[2][1] * hom[1] + m[2][2] * hom[2] + m[2][3];
            if pz <= Z_MIN {
                return None;
            }
            let u = (px / pz).round();
            let v = (py / pz).round();
            if u < 0.0 || v < 0.0 || u >= camera.width as f64 || v >= camera.height as f64 {
                return None;
            }
            let d = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
            Some((u as u32, v as u32, d))
        })
        .collect();

    let mut map = DepthMap::zeroed(camera.width, camera.height, d_max);
    for v in 0..camera.height {
        for u in 0..camera.width {
            let mut best: Option<f64> = None;
            for entry in &projected {
                if let Some((pu, pv, d)) = entry {
                    if *pu == u && *pv == v {
                        best = Some(match best {
                            Some(b) => b.min(*d),
                            None => *d,
                        });
                    }
                }
            }
            if let Some(b) = best {
                map.values[v as usize * camera.width as usize + u as usize] = b.min(d_max);
            }
        }
    }
    Ok(map)
}

/// Divides every value by `d_max`, mapping the grid into `[0, 1]`.
/// Empty pixels stay 0.
pub fn normalize_depth(map: &DepthMap) -> Vec<f64> {
    map.values.iter().map(|v| v / map.d_max).collect()
}
