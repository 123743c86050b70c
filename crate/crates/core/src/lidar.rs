//! Lidar point clouds to camera-plane depth/height/intensity (DHI) images.
//!
//! Each return `(X, Y, Z, R)` is mapped through a calibration matrix to a
//! pixel, and `X`, `Z` and `R` are encoded as
//! `255 * (1 - min(v / max_v, 1))` in the D, H and I channels.

use std::cmp::Ordering;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pnm::PnmImage;

#[derive(Debug, Error)]
pub enum LidarError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("point cloud: {0}")]
    Format(String),
    #[error("calibration: {0}")]
    Calib(String),
    #[error("config: {0}")]
    Config(String),
}

/// One return: `x` forward, `y` left, `z` up (meters), `r` reflectivity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LidarPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub r: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub points: Vec<LidarPoint>,
    /// Returns whose reflectivity fell outside `[0, 1]` and was clamped.
    pub clamped_reflectivity: usize,
}

impl PointCloud {
    pub fn new(points: Vec<LidarPoint>) -> Self {
        let mut clamped = 0;
        let points = points
            .into_iter()
            .map(|mut p| {
                if !(0.0..=1.0).contains(&p.r) {
                    clamped += 1;
                    p.r = p.r.clamp(0.0, 1.0);
                }
                p
            })
            .collect();
        Self { points, clamped_reflectivity: clamped }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// KITTI Velodyne layout: little-endian `f32` quadruples `(x, y, z, r)`.
    pub fn from_kitti_bytes(bytes: &[u8]) -> Result<Self, LidarError> {
        if !bytes.len().is_multiple_of(16) {
            return Err(LidarError::Format(format!("length {} is not a multiple of 16 bytes", bytes.len())));
        }
        let mut points = Vec::with_capacity(bytes.len() / 16);
        for (i, rec) in bytes.chunks_exact(16).enumerate() {
            let f = |k: usize| f64::from(f32::from_le_bytes(rec[4 * k..4 * k + 4].try_into().unwrap()));
            let p = LidarPoint { x: f(0), y: f(1), z: f(2), r: f(3) };
            if ![p.x, p.y, p.z, p.r].iter().all(|v| v.is_finite()) {
                return Err(LidarError::Format(format!("point {i} has a non-finite coordinate")));
            }
            points.push(p);
        }
        Ok(Self::new(points))
    }

    pub fn to_kitti_bytes(&self) -> Vec<u8> {
        self.points
            .iter()
            .flat_map(|p| [p.x, p.y, p.z, p.r].map(|v| (v as f32).to_le_bytes()))
            .flatten()
            .collect()
    }
}

pub fn read_kitti_bin(path: impl AsRef<Path>) -> Result<PointCloud, LidarError> {
    PointCloud::from_kitti_bytes(&fs::read(path)?)
}

/// Row-major `2x3` linear or `3x4` projective camera matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl CalibMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, LidarError> {
        if !matches!((rows, cols), (2, 3) | (3, 4)) {
            return Err(LidarError::Calib(format!("unsupported shape {rows}x{cols}; expected 2x3 or 3x4")));
        }
        if data.len() != rows * cols {
            return Err(LidarError::Calib(format!("{} values for a {rows}x{cols} matrix", data.len())));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(LidarError::Calib("non-finite entry".into()));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_projective(&self) -> bool {
        self.rows == 3
    }

    /// Text form: first line `rows cols`, then the entries row-major,
    /// whitespace separated.
    pub fn parse(text: &str) -> Result<Self, LidarError> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let head = lines.next().ok_or_else(|| LidarError::Calib("empty file".into()))?;
        let dims: Vec<usize> = head
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| LidarError::Calib(format!("bad shape token {t:?}"))))
            .collect::<Result<_, _>>()?;
        let [rows, cols] = dims[..] else {
            return Err(LidarError::Calib(format!("shape line must hold two integers, got {head:?}")));
        };
        let data = lines
            .flat_map(str::split_whitespace)
            .map(|t| t.parse::<f64>().map_err(|_| LidarError::Calib(format!("bad value {t:?}"))))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(rows, cols, data)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{} {}\n", self.rows, self.cols);
        for row in self.data.chunks(self.cols) {
            let vals: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            out.push_str(&vals.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, LidarError> {
        Self::parse(&fs::read_to_string(path)?)
    }

    /// Real-valued image coordinates, or `None` behind the camera.
    pub fn apply(&self, p: &LidarPoint) -> Option<(f64, f64)> {
        let row = |r: usize| {
            let m = &self.data[r * self.cols..(r + 1) * self.cols];
            let mut s = m[0] * p.x + m[1] * p.y + m[2] * p.z;
            if self.cols == 4 {
                s += m[3];
            }
            s
        };
        if self.is_projective() {
            let w = row(2);
            if w <= 0.0 {
                return None;
            }
            Some((row(0) / w, row(1) / w))
        } else {
            Some((row(0), row(1)))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum PixelRounding {
    /// Nearest integer, ties away from zero.
    #[default]
    Nearest,
    Floor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DhiConfig {
    pub max_x: f64,
    pub max_z: f64,
    pub max_r: f64,
    pub width: usize,
    pub height: usize,
    pub rounding: PixelRounding,
}

impl Default for DhiConfig {
    fn default() -> Self {
        Self { max_x: 80.0, max_z: 6.0, max_r: 0.7, width: 1242, height: 375, rounding: PixelRounding::Nearest }
    }
}

impl DhiConfig {
    pub fn validate(&self) -> Result<(), LidarError> {
        for (name, v) in [("max_x", self.max_x), ("max_z", self.max_z), ("max_r", self.max_r)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(LidarError::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.width == 0 || self.height == 0 {
            return Err(LidarError::Config("image must be non-empty".into()));
        }
        Ok(())
    }
}

/// Pixel of `p`, or `None` when it falls outside the frame or behind the camera.
pub fn project_point(p: &LidarPoint, calib: &CalibMatrix, cfg: &DhiConfig) -> Option<(usize, usize)> {
    let (x, y) = calib.apply(p)?;
    let q = |v: f64| match cfg.rounding {
        PixelRounding::Nearest => v.round(),
        PixelRounding::Floor => v.floor(),
    };
    let (x, y) = (q(x), q(y));
    if x >= 0.0 && y >= 0.0 && x < cfg.width as f64 && y < cfg.height as f64 {
        Some((x as usize, y as usize))
    } else {
        None
    }
}

/// `round_half_up(255 * (1 - min(v / max, 1)))` with negative `v` clamped to 0.
pub fn encode_channel(v: f64, max: f64) -> u8 {
    let v = v.max(0.0);
    let val = 255.0 * (1.0 - (v / max).min(1.0));
    (val + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// `(val_d, val_h, val_i)` for forward distance `x`, height `z`, reflectivity `r`.
pub fn encode_dhi(x: f64, z: f64, r: f64, cfg: &DhiConfig) -> [u8; 3] {
    [encode_channel(x, cfg.max_x), encode_channel(z, cfg.max_z), encode_channel(r, cfg.max_r)]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ProjectionStats {
    pub total: usize,
    /// Points that landed inside the frame.
    pub projected: usize,
    /// Points outside the frame or behind the camera.
    pub clipped: usize,
    /// In-frame points that lost a pixel to a nearer point.
    pub collided: usize,
    pub clamped_reflectivity: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DhiImage {
    pub width: usize,
    pub height: usize,
    pub depth_channel: Vec<u8>,
    pub height_channel: Vec<u8>,
    pub intensity_channel: Vec<u8>,
    pub mask: Vec<bool>,
    /// Forward distance of the point owning each pixel; 0 where unoccupied.
    pub source_depth: Vec<f64>,
    pub stats: ProjectionStats,
}

impl DhiImage {
    pub fn empty(width: usize, height: usize) -> Self {
        let n = width * height;
        Self {
            width,
            height,
            depth_channel: vec![0; n],
            height_channel: vec![0; n],
            intensity_channel: vec![0; n],
            mask: vec![false; n],
            source_depth: vec![0.0; n],
            stats: ProjectionStats::default(),
        }
    }

    pub fn occupied(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// D, H, I interleaved as R, G, B.
    pub fn to_pnm(&self) -> PnmImage {
        let data = (0..self.width * self.height)
            .flat_map(|i| [self.depth_channel[i], self.height_channel[i], self.intensity_channel[i]])
            .collect();
        PnmImage { width: self.width, height: self.height, channels: 3, data }
    }
}

/// Total order used on pixel collisions: nearest `x` first, remaining ties
/// settled by the point's other coordinates. Identical points produce
/// identical pixels, so the result never depends on list order.
fn collision_order(a: &LidarPoint, b: &LidarPoint) -> Ordering {
    a.x.total_cmp(&b.x)
        .then(a.z.total_cmp(&b.z))
        .then(a.r.total_cmp(&b.r))
        .then(a.y.total_cmp(&b.y))
}

pub fn build_dhi_image(cloud: &PointCloud, calib: &CalibMatrix, cfg: &DhiConfig) -> DhiImage {
    let mut img = DhiImage::empty(cfg.width, cfg.height);
    let mut owner: Vec<Option<usize>> = vec![None; cfg.width * cfg.height];
    let mut stats = ProjectionStats { total: cloud.len(), clamped_reflectivity: cloud.clamped_reflectivity, ..Default::default() };
    for (idx, p) in cloud.points.iter().enumerate() {
        let Some((px, py)) = project_point(p, calib, cfg) else {
            stats.clipped += 1;
            continue;
        };
        stats.projected += 1;
        let slot = &mut owner[py * cfg.width + px];
        match slot {
            Some(cur) => {
                stats.collided += 1;
                if collision_order(p, &cloud.points[*cur]) == Ordering::Less {
                    *slot = Some(idx);
                }
            }
            None => *slot = Some(idx),
        }
    }
    for (pix, o) in owner.iter().enumerate() {
        if let Some(i) = *o {
            let p = &cloud.points[i];
            let [d, h, v] = encode_dhi(p.x, p.z, p.r, cfg);
            img.depth_channel[pix] = d;
            img.height_channel[pix] = h;
            img.intensity_channel[pix] = v;
            img.mask[pix] = true;
            img.source_depth[pix] = p.x;
        }
    }
    img.stats = stats;
    img
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(x: f64, y: f64, z: f64, r: f64) -> LidarPoint {
        LidarPoint { x, y, z, r }
    }

    fn identity() -> CalibMatrix {
        CalibMatrix::new(2, 3, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0]).unwrap()
    }

    #[test]
    fn kitti_bytes() {
        let mut bytes = Vec::new();
        for v in [1.5f32, -2.0, 0.25, 0.5, 10.0, 3.0, -1.0, 0.125] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let cloud = PointCloud::from_kitti_bytes(&bytes).unwrap();
        assert_eq!(cloud.points, vec![pt(1.5, -2.0, 0.25, 0.5), pt(10.0, 3.0, -1.0, 0.125)]);
        assert_eq!(cloud.to_kitti_bytes(), bytes);
        assert!(PointCloud::from_kitti_bytes(&[]).unwrap().is_empty());
        assert!(matches!(PointCloud::from_kitti_bytes(&[0; 17]), Err(LidarError::Format(_))));
        let mut nan = bytes.clone();
        nan[0..4].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(PointCloud::from_kitti_bytes(&nan).is_err());
    }

    #[test]
    fn reflectivity_clamped_and_counted() {
        let cloud = PointCloud::new(vec![pt(1.0, 0.0, 0.0, 1.5), pt(1.0, 0.0, 0.0, -0.1), pt(1.0, 0.0, 0.0, 0.3)]);
        assert_eq!(cloud.clamped_reflectivity, 2);
        assert_eq!(cloud.points[0].r, 1.0);
        assert_eq!(cloud.points[1].r, 0.0);
    }

    #[test]
    fn calib_parsing() {
        let c = CalibMatrix::parse("2 3\n1 0 0\n0 1 0\n").unwrap();
        assert_eq!(c, identity());
        assert_eq!(CalibMatrix::parse(&c.to_text()).unwrap(), c);
        assert!(CalibMatrix::parse("3 3\n1 0 0 0 1 0 0 0 1").is_err());
        assert!(CalibMatrix::parse("2 3\n1 0 0 0 1").is_err());
        assert!(CalibMatrix::parse("2 3\n1 0 0 0 1 x").is_err());
        assert!(CalibMatrix::parse("").is_err());
    }

    #[test]
    fn identity_projection_rounds() {
        let cfg = DhiConfig { width: 10, height: 10, ..Default::default() };
        assert_eq!(project_point(&pt(3.4, 2.6, 9.0, 0.0), &identity(), &cfg), Some((3, 3)));
        assert_eq!(project_point(&pt(2.5, 0.5, 0.0, 0.0), &identity(), &cfg), Some((3, 1)));
        assert_eq!(project_point(&pt(10.0, 0.0, 0.0, 0.0), &identity(), &cfg), None);
        assert_eq!(project_point(&pt(9.6, 0.0, 0.0, 0.0), &identity(), &cfg), None);
        assert_eq!(project_point(&pt(-0.6, 0.0, 0.0, 0.0), &identity(), &cfg), None);
        assert_eq!(project_point(&pt(-0.4, 0.0, 0.0, 0.0), &identity(), &cfg), Some((0, 0)));
        let floor = DhiConfig { rounding: PixelRounding::Floor, ..cfg };
        assert_eq!(project_point(&pt(3.9, 2.6, 9.0, 0.0), &identity(), &floor), Some((3, 2)));
    }

    #[test]
    fn pinhole_projection() {
        let p = CalibMatrix::new(3, 4, vec![100.0, 0.0, 50.0, 0.0, 0.0, 100.0, 50.0, 0.0, 0.0, 0.0, 1.0, 0.0]).unwrap();
        let cfg = DhiConfig { width: 100, height: 100, ..Default::default() };
        assert_eq!(project_point(&pt(0.0, 0.0, 10.0, 0.0), &p, &cfg), Some((50, 50)));
        // 100 * 1 / 10 + 50 = 60
        assert_eq!(project_point(&pt(1.0, -2.0, 10.0, 0.0), &p, &cfg), Some((60, 30)));
        assert_eq!(project_point(&pt(0.0, 0.0, -10.0, 0.0), &p, &cfg), None);
        assert_eq!(project_point(&pt(0.0, 0.0, 0.0, 0.0), &p, &cfg), None);
    }

    #[test]
    fn channel_encoding() {
        let cfg = DhiConfig::default();
        assert_eq!(encode_dhi(80.0, 0.0, 0.0, &cfg)[0], 0);
        assert_eq!(encode_dhi(120.0, 0.0, 0.0, &cfg)[0], 0);
        assert_eq!(encode_dhi(0.0, 0.0, 0.0, &cfg), [255, 255, 255]);
        assert_eq!(encode_dhi(0.0, 0.0, 0.7, &cfg)[2], 0);
        assert_eq!(encode_dhi(0.0, 3.0, 0.0, &cfg)[1], 128);
        assert_eq!(encode_dhi(-5.0, -1.0, -0.2, &cfg), [255, 255, 255]);
        // 255 * 0.75 = 191.25
        assert_eq!(encode_dhi(20.0, 0.0, 0.0, &cfg)[0], 191);
    }

    #[test]
    fn nearest_point_wins_either_order() {
        let cfg = DhiConfig { width: 4, height: 4, ..Default::default() };
        let calib = CalibMatrix::new(2, 3, vec![0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        let near = pt(10.0, 1.0, 2.0, 0.1);
        let far = pt(40.0, 1.0, 2.0, 0.6);
        for pts in [vec![near, far], vec![far, near]] {
            let img = build_dhi_image(&PointCloud::new(pts), &calib, &cfg);
            let pix = 2 * 4 + 1;
            assert_eq!(img.depth_channel[pix], encode_channel(10.0, 80.0));
            assert_eq!(img.intensity_channel[pix], encode_channel(0.1, 0.7));
            assert_eq!(img.source_depth[pix], 10.0);
            assert_eq!(img.occupied(), 1);
            assert_eq!(img.stats.collided, 1);
            assert_eq!(img.stats.projected, 2);
        }
    }

    #[test]
    fn empty_cloud_is_blank() {
        let img = build_dhi_image(&PointCloud::default(), &identity(), &DhiConfig { width: 3, height: 2, ..Default::default() });
        assert_eq!(img.occupied(), 0);
        assert!(img.to_pnm().data.iter().all(|&b| b == 0));
        assert_eq!(img.to_pnm().header(), "P6\n3 2\n255\n");
    }

    #[test]
    fn config_validation() {
        assert!(DhiConfig::default().validate().is_ok());
        assert!(DhiConfig { max_z: 0.0, ..Default::default() }.validate().is_err());
        assert!(DhiConfig { width: 0, ..Default::default() }.validate().is_err());
    }
}
