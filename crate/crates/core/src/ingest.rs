//! On-disk inputs: calibration, poses, point clouds and per-frame detections.
//!
//! A sequence directory looks like
//!
//! ```text
//! manifest.json            {embedding_dim, image_width, image_height, class_list?, ...}
//! calib.txt                "P2: <12 floats>" and "Tr: <12 floats>"
//! poses.txt                one row-major 3x4 pose per line, line i = frame i
//! velodyne/<frame>.bin     float32 x,y,z,intensity (or velodyne/<frame>.txt, ASCII x y z [i])
//! detections/<frame>.jsonl one detection per line
//! dynamic/<frame>.flags    optional, one byte per point, non-zero = dynamic
//! ```
//!
//! Poses map the LiDAR frame into the map frame. Datasets that ship
//! camera-frame poses (KITTI odometry ground truth) must be converted first:
//! `P_lidar = P_cam * Tr`.
//!
//! Masks are run-length encoded over the row-major pixel order (index
//! `v * width + u`). Runs alternate background / foreground starting with
//! background, each run is a little-endian `u32`, and the byte string is
//! base64 (standard alphabet, padded).

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine as _;
use nalgebra::{Matrix3, Matrix3x4, Matrix4};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{normalize, Point};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CALIB_FILE: &str = "calib.txt";
pub const POSES_FILE: &str = "poses.txt";
pub const CLOUD_DIR: &str = "velodyne";
pub const DETECTION_DIR: &str = "detections";
pub const DYNAMIC_DIR: &str = "dynamic";

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("no frames found in {0}")]
    NoFrames(PathBuf),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("missing {0}")]
    Missing(PathBuf),
    #[error("manifest {path}: {reason}")]
    Manifest { path: PathBuf, reason: String },
    #[error("calibration {path}: {reason}")]
    Calibration { path: PathBuf, reason: String },
    #[error("{path}:{line}: {reason}")]
    Pose { path: PathBuf, line: usize, reason: String },
    #[error("point cloud {path}: {reason}")]
    Cloud { path: PathBuf, reason: String },
    #[error("{path}:{line}: {reason}")]
    Record { path: PathBuf, line: usize, reason: String },
    #[error("{path}:{line}: mask covers {found} pixels, image has {expected}")]
    MaskSize { path: PathBuf, line: usize, expected: u64, found: u64 },
    #[error("{path}:{line}: embedding dimension {found}, manifest declares {expected}")]
    EmbeddingDim { path: PathBuf, line: usize, expected: usize, found: usize },
    #[error("{0} is not a rigid transform: {1}")]
    NotRigid(&'static str, String),
}

impl IngestError {
    fn io(path: &Path) -> impl FnOnce(io::Error) -> IngestError + '_ {
        move |source| IngestError::Io { path: path.to_path_buf(), source }
    }

    /// Errors that invalidate a single frame rather than the whole sequence.
    pub fn is_frame_local(&self) -> bool {
        matches!(
            self,
            IngestError::MaskSize { .. } | IngestError::Record { .. } | IngestError::Cloud { .. }
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IngestConfig {
    /// Maximum deviation of `RᵀR` from identity and of `det R` from 1.
    pub orthonormal_tol: f64,
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig { orthonormal_tol: 1e-6 }
    }
}

// ---------------------------------------------------------------------------
// Rigid transforms
// ---------------------------------------------------------------------------

fn check_rigid(m: &Matrix4<f64>, tol: f64, what: &'static str) -> Result<(), IngestError> {
    if m.iter().any(|x| !x.is_finite()) {
        return Err(IngestError::NotRigid(what, "non-finite entry".into()));
    }
    let r: Matrix3<f64> = m.fixed_view::<3, 3>(0, 0).into_owned();
    let dev = (r.transpose() * r - Matrix3::identity()).abs().max();
    if dev > tol {
        return Err(IngestError::NotRigid(what, format!("|RᵀR - I| = {dev:e}")));
    }
    let det = r.determinant();
    if (det - 1.0).abs() > tol {
        return Err(IngestError::NotRigid(what, format!("det R = {det}")));
    }
    let bottom = m.fixed_view::<1, 4>(3, 0);
    if bottom[0] != 0.0 || bottom[1] != 0.0 || bottom[2] != 0.0 || bottom[3] != 1.0 {
        return Err(IngestError::NotRigid(what, "bottom row is not (0,0,0,1)".into()));
    }
    Ok(())
}

fn from_row_major_3x4(values: &[f64]) -> Matrix4<f64> {
    debug_assert_eq!(values.len(), 12);
    let mut m = Matrix4::identity();
    for row in 0..3 {
        for col in 0..4 {
            m[(row, col)] = values[row * 4 + col];
        }
    }
    m
}

fn row_major_3x4(m: &Matrix4<f64>) -> String {
    let mut out = String::new();
    for row in 0..3 {
        for col in 0..4 {
            if !out.is_empty() {
                out.push(' ');
            }
            write!(out, "{}", m[(row, col)]).unwrap();
        }
    }
    out
}

/// Rigid transform from the LiDAR frame into the map frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose(Matrix4<f64>);

impl Pose {
    pub fn new(transform: Matrix4<f64>, tol: f64) -> Result<Self, IngestError> {
        check_rigid(&transform, tol, "pose")?;
        Ok(Pose(transform))
    }

    pub fn identity() -> Self {
        Pose(Matrix4::identity())
    }

    /// Builds a pose from a yaw angle (radians, about +z) and a translation.
    pub fn from_yaw_translation(yaw: f64, t: [f64; 3]) -> Self {
        let (s, c) = yaw.sin_cos();
        #[rustfmt::skip]
        let m = Matrix4::new(
            c, -s, 0.0, t[0],
            s, c, 0.0, t[1],
            0.0, 0.0, 1.0, t[2],
            0.0, 0.0, 0.0, 1.0,
        );
        Pose(m)
    }

    pub fn matrix(&self) -> &Matrix4<f64> {
        &self.0
    }

    pub fn translation(&self) -> Point {
        Point::new(self.0[(0, 3)], self.0[(1, 3)], self.0[(2, 3)])
    }

    pub fn transform_point(&self, p: &Point) -> Point {
        self.0.transform_point(p)
    }

    /// Parses one `poses.txt` line (12 floats, row-major 3x4).
    pub fn parse_line(line: &str, tol: f64) -> Result<Self, String> {
        let values = parse_floats(line)?;
        if values.len() != 12 {
            return Err(format!("expected 12 values, found {}", values.len()));
        }
        Pose::new(from_row_major_3x4(&values), tol).map_err(|e| e.to_string())
    }

    pub fn to_line(&self) -> String {
        row_major_3x4(&self.0)
    }
}

fn parse_floats(s: &str) -> Result<Vec<f64>, String> {
    s.split_whitespace()
        .map(|tok| tok.parse::<f64>().map_err(|_| format!("invalid number {tok:?}")))
        .collect()
}

// ---------------------------------------------------------------------------
// Calibration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct SensorCalibration {
    /// 3x4 camera projection, pixels.
    pub camera_projection: Matrix3x4<f64>,
    /// LiDAR frame to camera frame.
    pub lidar_to_camera: Matrix4<f64>,
    pub image_width: u32,
    pub image_height: u32,
}

impl SensorCalibration {
    pub fn new(
        camera_projection: Matrix3x4<f64>,
        lidar_to_camera: Matrix4<f64>,
        image_width: u32,
        image_height: u32,
        tol: f64,
    ) -> Result<Self, IngestError> {
        check_rigid(&lidar_to_camera, tol, "lidar_to_camera")?;
        if image_width == 0 || image_height == 0 {
            return Err(IngestError::NotRigid("image size", "must be positive".into()));
        }
        Ok(SensorCalibration { camera_projection, lidar_to_camera, image_width, image_height })
    }

    pub fn pixel_count(&self) -> u64 {
        self.image_width as u64 * self.image_height as u64
    }

    /// Reads `P2:` and `Tr:` from a KITTI-style calibration file. Other labels
    /// are ignored.
    pub fn load(path: &Path, width: u32, height: u32, tol: f64) -> Result<Self, IngestError> {
        let text = fs::read_to_string(path).map_err(|e| match e.kind() {
            io::ErrorKind::NotFound => IngestError::Missing(path.to_path_buf()),
            _ => IngestError::Io { path: path.to_path_buf(), source: e },
        })?;
        let fail = |reason: String| IngestError::Calibration { path: path.to_path_buf(), reason };
        let (mut p2, mut tr) = (None, None);
        for line in text.lines() {
            let Some((label, rest)) = line.split_once(':') else { continue };
            let slot = match label.trim() {
                "P2" => &mut p2,
                "Tr" | "Tr_velo_to_cam" => &mut tr,
                _ => continue,
            };
            let values = parse_floats(rest).map_err(|r| fail(format!("{}: {r}", label.trim())))?;
            if values.len() != 12 {
                return Err(fail(format!("{} has {} values, expected 12", label.trim(), values.len())));
            }
            *slot = Some(values);
        }
        let p2 = p2.ok_or_else(|| fail("missing P2".into()))?;
        let tr = tr.ok_or_else(|| fail("missing Tr".into()))?;
        let projection = Matrix3x4::from_row_slice(&p2);
        SensorCalibration::new(projection, from_row_major_3x4(&tr), width, height, tol)
            .map_err(|e| fail(e.to_string()))
    }

    pub fn to_file_contents(&self) -> String {
        let p: Vec<String> = self
            .camera_projection
            .transpose()
            .iter()
            .map(|v| v.to_string())
            .collect();
        format!("P2: {}\nTr: {}\n", p.join(" "), row_major_3x4(&self.lidar_to_camera))
    }
}

// ---------------------------------------------------------------------------
// Point clouds
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point>,
    pub dynamic: Option<Vec<bool>>,
    pub intensity: Option<Vec<f32>>,
}

impl PointCloud {
    pub fn new(points: Vec<Point>) -> Self {
        PointCloud { points, dynamic: None, intensity: None }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn validate(&self) -> Result<(), String> {
        if let Some(i) = self.points.iter().position(|p| !p.iter().all(|x| x.is_finite())) {
            return Err(format!("point {i} is not finite"));
        }
        if let Some(flags) = &self.dynamic {
            if flags.len() != self.points.len() {
                return Err(format!("{} dynamic flags for {} points", flags.len(), self.points.len()));
            }
        }
        Ok(())
    }

    /// Flat little-endian float32 records `x, y, z, intensity`.
    pub fn to_bin(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.points.len() * 16);
        for (i, p) in self.points.iter().enumerate() {
            let intensity = self.intensity.as_ref().map_or(0.0, |v| v[i]);
            for v in [p.x as f32, p.y as f32, p.z as f32, intensity] {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bin(bytes: &[u8]) -> Result<Self, String> {
        if !bytes.len().is_multiple_of(16) {
            return Err(format!("length {} is not a multiple of 16", bytes.len()));
        }
        let mut points = Vec::with_capacity(bytes.len() / 16);
        let mut intensity = Vec::with_capacity(bytes.len() / 16);
        for rec in bytes.chunks_exact(16) {
            let f = |k: usize| f32::from_le_bytes(rec[4 * k..4 * k + 4].try_into().unwrap());
            points.push(Point::new(f(0) as f64, f(1) as f64, f(2) as f64));
            intensity.push(f(3));
        }
        Ok(PointCloud { points, dynamic: None, intensity: Some(intensity) })
    }

    /// ASCII `x y z [intensity]` per line; blank lines and `#` comments skipped.
    pub fn from_ascii(text: &str) -> Result<Self, String> {
        let mut points = Vec::new();
        let mut intensity = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let v = parse_floats(line).map_err(|e| format!("line {}: {e}", n + 1))?;
            if v.len() != 3 && v.len() != 4 {
                return Err(format!("line {}: expected 3 or 4 values", n + 1));
            }
            points.push(Point::new(v[0], v[1], v[2]));
            intensity.push(v.get(3).copied().unwrap_or(0.0) as f32);
        }
        Ok(PointCloud { points, dynamic: None, intensity: Some(intensity) })
    }
}

// ---------------------------------------------------------------------------
// Masks
// ---------------------------------------------------------------------------

/// Dense bitmask over image pixels, row-major.
#[derive(Clone, PartialEq, Eq)]
pub struct Bitmask {
    width: u32,
    height: u32,
    words: Vec<u64>,
}

impl std::fmt::Debug for Bitmask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Bitmask({}x{}, {} set)", self.width, self.height, self.count())
    }
}

impl Bitmask {
    pub fn new(width: u32, height: u32) -> Self {
        let bits = width as usize * height as usize;
        Bitmask { width, height, words: vec![0; bits.div_ceil(64)] }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn set(&mut self, u: u32, v: u32) {
        let i = v as usize * self.width as usize + u as usize;
        self.words[i / 64] |= 1 << (i % 64);
    }

    pub fn get(&self, u: u32, v: u32) -> bool {
        if u >= self.width || v >= self.height {
            return false;
        }
        let i = v as usize * self.width as usize + u as usize;
        self.words[i / 64] & (1 << (i % 64)) != 0
    }

    pub fn count(&self) -> u64 {
        self.words.iter().map(|w| w.count_ones() as u64).sum()
    }

    fn bit(&self, i: usize) -> bool {
        self.words[i / 64] & (1 << (i % 64)) != 0
    }

    /// Run lengths, alternating background/foreground, starting with background.
    pub fn to_runs(&self) -> Vec<u32> {
        let total = self.width as usize * self.height as usize;
        let mut runs = Vec::new();
        let mut current = false;
        let mut len = 0u32;
        for i in 0..total {
            if self.bit(i) != current {
                runs.push(len);
                current = !current;
                len = 0;
            }
            len += 1;
        }
        runs.push(len);
        runs
    }

    /// Inverse of [`Bitmask::to_runs`]; fails when the runs do not cover exactly
    /// `width * height` pixels (the total is returned as the error).
    pub fn from_runs(width: u32, height: u32, runs: &[u32]) -> Result<Self, u64> {
        let total: u64 = runs.iter().map(|&r| r as u64).sum();
        if total != width as u64 * height as u64 {
            return Err(total);
        }
        let mut mask = Bitmask::new(width, height);
        let mut pos = 0usize;
        for (k, &run) in runs.iter().enumerate() {
            if k % 2 == 1 {
                for i in pos..pos + run as usize {
                    mask.words[i / 64] |= 1 << (i % 64);
                }
            }
            pos += run as usize;
        }
        Ok(mask)
    }

    pub fn to_rle_base64(&self) -> String {
        let bytes: Vec<u8> = self.to_runs().iter().flat_map(|r| r.to_le_bytes()).collect();
        BASE64.encode(bytes)
    }
}

// ---------------------------------------------------------------------------
// Detections
// ---------------------------------------------------------------------------

/// One masked instance observed in one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub mask: Bitmask,
    pub caption: String,
    /// Unit-norm caption embedding.
    pub embedding: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct MaskRecord {
    pub width: u32,
    pub height: u32,
    pub rle: String,
}

/// Wire form of one detection line.
#[derive(Debug, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub caption: String,
    pub embedding: Vec<f64>,
    pub mask: MaskRecord,
}

impl From<&Detection> for DetectionRecord {
    fn from(d: &Detection) -> Self {
        DetectionRecord {
            caption: d.caption.clone(),
            embedding: d.embedding.clone(),
            mask: MaskRecord {
                width: d.mask.width(),
                height: d.mask.height(),
                rle: d.mask.to_rle_base64(),
            },
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Manifest {
    pub embedding_dim: usize,
    pub image_width: u32,
    pub image_height: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_list: Option<Vec<String>>,
    /// One embedding per class, produced by the same embedder as the detections.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_embeddings: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_colors: Option<Vec<[u8; 3]>>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self, IngestError> {
        let text = fs::read_to_string(path).map_err(|e| match e.kind() {
            io::ErrorKind::NotFound => IngestError::Missing(path.to_path_buf()),
            _ => IngestError::Io { path: path.to_path_buf(), source: e },
        })?;
        let fail = |reason: String| IngestError::Manifest { path: path.to_path_buf(), reason };
        let m: Manifest = serde_json::from_str(&text).map_err(|e| fail(e.to_string()))?;
        if m.embedding_dim == 0 || m.image_width == 0 || m.image_height == 0 {
            return Err(fail("embedding_dim and image size must be positive".into()));
        }
        if let (Some(names), Some(embs)) = (&m.class_list, &m.class_embeddings) {
            if names.len() != embs.len() {
                return Err(fail("class_embeddings length differs from class_list".into()));
            }
            if embs.iter().any(|e| e.len() != m.embedding_dim) {
                return Err(fail("class embedding dimension differs from embedding_dim".into()));
            }
        }
        Ok(m)
    }
}

/// Outcome of reading one detection file.
#[derive(Debug, Default)]
pub struct FrameDetections {
    pub detections: Vec<Detection>,
    /// Detections dropped for a local defect (empty mask, zero embedding, ...).
    pub warnings: Vec<String>,
}

/// Parses a JSON-lines detection file.
///
/// Masks whose runs do not cover the image reject the whole file
/// ([`IngestError::MaskSize`]); an embedding of the wrong dimension is fatal
/// ([`IngestError::EmbeddingDim`]). Empty masks, empty captions and zero or
/// non-finite embeddings drop only that detection, with a warning.
pub fn load_frame_detections(path: &Path, manifest: &Manifest) -> Result<FrameDetections, IngestError> {
    let text = fs::read_to_string(path).map_err(IngestError::io(path))?;
    parse_detections(&text, path, manifest)
}

pub fn parse_detections(text: &str, path: &Path, manifest: &Manifest) -> Result<FrameDetections, IngestError> {
    let mut out = FrameDetections::default();
    let expected_pixels = manifest.image_width as u64 * manifest.image_height as u64;
    for (n, line) in text.lines().enumerate() {
        let line_no = n + 1;
        if line.trim().is_empty() {
            continue;
        }
        let record_err = |reason: String| IngestError::Record { path: path.to_path_buf(), line: line_no, reason };
        let rec: DetectionRecord = serde_json::from_str(line).map_err(|e| record_err(e.to_string()))?;
        if rec.embedding.len() != manifest.embedding_dim {
            return Err(IngestError::EmbeddingDim {
                path: path.to_path_buf(),
                line: line_no,
                expected: manifest.embedding_dim,
                found: rec.embedding.len(),
            });
        }
        let bytes = BASE64
            .decode(rec.mask.rle.as_bytes())
            .map_err(|e| record_err(format!("mask base64: {e}")))?;
        if bytes.len() % 4 != 0 {
            return Err(record_err("mask RLE byte length is not a multiple of 4".into()));
        }
        let runs: Vec<u32> = bytes
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let size_err = |found| IngestError::MaskSize {
            path: path.to_path_buf(),
            line: line_no,
            expected: expected_pixels,
            found,
        };
        if rec.mask.width != manifest.image_width || rec.mask.height != manifest.image_height {
            return Err(size_err(rec.mask.width as u64 * rec.mask.height as u64));
        }
        let mask = Bitmask::from_runs(rec.mask.width, rec.mask.height, &runs).map_err(size_err)?;

        let mut warn = |why: &str| out.warnings.push(format!("{}:{line_no}: {why}", path.display()));
        if mask.count() == 0 {
            warn("empty mask, detection dropped");
            continue;
        }
        if rec.caption.trim().is_empty() {
            warn("empty caption, detection dropped");
            continue;
        }
        let mut embedding = rec.embedding;
        if embedding.iter().any(|x| !x.is_finite()) || normalize(&mut embedding).is_err() {
            warn("zero or non-finite embedding, detection dropped");
            continue;
        }
        out.detections.push(Detection { mask, caption: rec.caption, embedding });
    }
    Ok(out)
}

pub fn detections_to_jsonl(detections: &[Detection]) -> String {
    let mut out = String::new();
    for d in detections {
        out.push_str(&serde_json::to_string(&DetectionRecord::from(d)).expect("serializable"));
        out.push('\n');
    }
    out
}

// ---------------------------------------------------------------------------
// Frames
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub index: usize,
    pub cloud: PointCloud,
    pub pose: Pose,
    pub detections: Vec<Detection>,
}

/// Every input of a sequence, frames in ascending index order.
#[derive(Debug, Clone)]
pub struct FrameStream {
    pub manifest: Manifest,
    pub calibration: SensorCalibration,
    /// Every pose in `poses.txt`, including those without sensor frames.
    pub trajectory: Vec<Pose>,
    pub frames: Vec<FrameRecord>,
    /// Frames with some but not all of their files, or rejected for a local defect.
    pub skipped_frames: usize,
    pub warnings: Vec<String>,
}

impl IntoIterator for FrameStream {
    type Item = FrameRecord;
    type IntoIter = std::vec::IntoIter<FrameRecord>;

    fn into_iter(self) -> Self::IntoIter {
        self.frames.into_iter()
    }
}

pub fn frame_file_stem(index: usize) -> String {
    format!("{index:06}")
}

/// Frame indices named by files in `dir` with the given extensions.
fn frame_ids(dir: &Path, extensions: &[&str]) -> Result<BTreeSet<usize>, IngestError> {
    let mut ids = BTreeSet::new();
    let entries = match fs::read_dir(dir) {
        Ok(e) => e,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(ids),
        Err(e) => return Err(IngestError::Io { path: dir.to_path_buf(), source: e }),
    };
    for entry in entries {
        let path = entry.map_err(IngestError::io(dir))?.path();
        let ext_ok = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| extensions.contains(&e));
        if let (true, Some(id)) = (ext_ok, path.file_stem().and_then(|s| s.to_str()).and_then(|s| s.parse().ok())) {
            ids.insert(id);
        }
    }
    Ok(ids)
}

pub fn load_poses(path: &Path, tol: f64) -> Result<Vec<Pose>, IngestError> {
    let text = fs::read_to_string(path).map_err(|e| match e.kind() {
        io::ErrorKind::NotFound => IngestError::Missing(path.to_path_buf()),
        _ => IngestError::Io { path: path.to_path_buf(), source: e },
    })?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, line)| {
            Pose::parse_line(line, tol).map_err(|reason| IngestError::Pose {
                path: path.to_path_buf(),
                line: n + 1,
                reason,
            })
        })
        .collect()
}

fn cloud_path(dir: &Path, index: usize) -> Option<PathBuf> {
    let stem = frame_file_stem(index);
    ["bin", "txt"]
        .iter()
        .map(|ext| dir.join(CLOUD_DIR).join(format!("{stem}.{ext}")))
        .find(|p| p.exists())
        .or_else(|| {
            // Tolerate unpadded names.
            ["bin", "txt"]
                .iter()
                .map(|ext| dir.join(CLOUD_DIR).join(format!("{index}.{ext}")))
                .find(|p| p.exists())
        })
}

fn detection_path(dir: &Path, index: usize) -> Option<PathBuf> {
    [frame_file_stem(index), index.to_string()]
        .iter()
        .map(|stem| dir.join(DETECTION_DIR).join(format!("{stem}.jsonl")))
        .find(|p| p.exists())
}

pub fn load_cloud(path: &Path, flags: Option<&Path>) -> Result<PointCloud, IngestError> {
    let cloud_err = |reason: String| IngestError::Cloud { path: path.to_path_buf(), reason };
    let mut cloud = if path.extension().is_some_and(|e| e == "txt") {
        PointCloud::from_ascii(&fs::read_to_string(path).map_err(IngestError::io(path))?)
    } else {
        PointCloud::from_bin(&fs::read(path).map_err(IngestError::io(path))?)
    }
    .map_err(cloud_err)?;
    if let Some(flag_path) = flags {
        let bytes = fs::read(flag_path).map_err(IngestError::io(flag_path))?;
        cloud.dynamic = Some(bytes.iter().map(|&b| b != 0).collect());
    }
    cloud.validate().map_err(cloud_err)?;
    Ok(cloud)
}

fn load_frame(
    dir: &Path,
    index: usize,
    pose: Pose,
    manifest: &Manifest,
) -> Result<Option<(FrameRecord, Vec<String>)>, IngestError> {
    let (Some(cloud_file), Some(det_file)) = (cloud_path(dir, index), detection_path(dir, index)) else {
        return Ok(None);
    };
    let flags = dir.join(DYNAMIC_DIR).join(format!("{}.flags", frame_file_stem(index)));
    let cloud = load_cloud(&cloud_file, flags.exists().then_some(flags.as_path()))?;
    let dets = load_frame_detections(&det_file, manifest)?;
    Ok(Some((FrameRecord { index, cloud, pose, detections: dets.detections }, dets.warnings)))
}

/// Loads a whole sequence directory.
///
/// Frames are read in parallel and delivered in index order. A frame missing
/// its cloud, detections or pose, or rejected for a frame-local defect, is
/// skipped and counted. Missing or malformed calibration, a bad pose line, or an
/// embedding dimension that disagrees with the manifest aborts the load.
pub fn load_sequence(dir: &Path, config: &IngestConfig) -> Result<FrameStream, IngestError> {
    let mut ids = frame_ids(&dir.join(CLOUD_DIR), &["bin", "txt"])?;
    ids.extend(frame_ids(&dir.join(DETECTION_DIR), &["jsonl"])?);
    if ids.is_empty() {
        return Err(IngestError::NoFrames(dir.to_path_buf()));
    }
    let manifest = Manifest::load(&dir.join(MANIFEST_FILE))?;
    let calibration = SensorCalibration::load(
        &dir.join(CALIB_FILE),
        manifest.image_width,
        manifest.image_height,
        config.orthonormal_tol,
    )?;
    let trajectory = load_poses(&dir.join(POSES_FILE), config.orthonormal_tol)?;

    type Loaded = Result<Option<(FrameRecord, Vec<String>)>, IngestError>;
    let results: Vec<(usize, Loaded)> = ids
        .par_iter()
        .map(|&index| {
            let result = match trajectory.get(index) {
                Some(&pose) => load_frame(dir, index, pose, &manifest),
                None => Ok(None),
            };
            (index, result)
        })
        .collect();

    let mut frames = Vec::new();
    let mut warnings = Vec::new();
    let mut skipped = 0;
    for (index, result) in results {
        match result {
            Ok(Some((frame, w))) => {
                warnings.extend(w);
                frames.push(frame);
            }
            Ok(None) => {
                skipped += 1;
                warnings.push(format!("frame {index}: incomplete, skipped"));
            }
            Err(e) if e.is_frame_local() => {
                skipped += 1;
                warnings.push(format!("frame {index}: {e}; skipped"));
            }
            Err(e) => return Err(e),
        }
    }
    if frames.is_empty() {
        return Err(IngestError::NoFrames(dir.to_path_buf()));
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(FrameStream { manifest, calibration, trajectory, frames, skipped_frames: skipped, warnings })
}

// ---------------------------------------------------------------------------
// Writers
// ---------------------------------------------------------------------------

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), IngestError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(IngestError::io(parent))?;
    }
    fs::write(path, bytes).map_err(IngestError::io(path))
}

pub fn write_manifest(dir: &Path, manifest: &Manifest) -> Result<(), IngestError> {
    let text = serde_json::to_string_pretty(manifest).expect("serializable");
    write(&dir.join(MANIFEST_FILE), text + "\n")
}

pub fn write_calibration(dir: &Path, calib: &SensorCalibration) -> Result<(), IngestError> {
    write(&dir.join(CALIB_FILE), calib.to_file_contents())
}

pub fn write_poses(dir: &Path, poses: &[Pose]) -> Result<(), IngestError> {
    let text: String = poses.iter().map(|p| p.to_line() + "\n").collect();
    write(&dir.join(POSES_FILE), text)
}

/// Writes the cloud, detections and (when present) dynamic flags of one frame.
/// The pose belongs to `poses.txt` and is written by [`write_poses`].
pub fn write_frame(dir: &Path, frame: &FrameRecord) -> Result<(), IngestError> {
    let stem = frame_file_stem(frame.index);
    write(&dir.join(CLOUD_DIR).join(format!("{stem}.bin")), frame.cloud.to_bin())?;
    write(
        &dir.join(DETECTION_DIR).join(format!("{stem}.jsonl")),
        detections_to_jsonl(&frame.detections),
    )?;
    if let Some(flags) = &frame.cloud.dynamic {
        let bytes: Vec<u8> = flags.iter().map(|&f| f as u8).collect();
        write(&dir.join(DYNAMIC_DIR).join(format!("{stem}.flags")), bytes)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn manifest(dim: usize) -> Manifest {
        Manifest {
            embedding_dim: dim,
            image_width: 4,
            image_height: 3,
            class_list: None,
            class_embeddings: None,
            class_colors: None,
        }
    }

    fn mask_line(runs: &[u32], embedding: &[f64], caption: &str) -> String {
        let bytes: Vec<u8> = runs.iter().flat_map(|r| r.to_le_bytes()).collect();
        serde_json::json!({
            "caption": caption,
            "embedding": embedding,
            "mask": {"width": 4, "height": 3, "rle": BASE64.encode(bytes)},
        })
        .to_string()
    }

    fn parse(text: &str, m: &Manifest) -> Result<FrameDetections, IngestError> {
        parse_detections(text, Path::new("f.jsonl"), m)
    }

    #[test]
    fn empty_detection_file() {
        assert!(parse("", &manifest(2)).unwrap().detections.is_empty());
    }

    #[test]
    fn embeddings_are_normalized() {
        let d = parse(&mask_line(&[2, 3, 7], &[3.0, 4.0], "a car"), &manifest(2)).unwrap();
        assert_eq!(d.detections.len(), 1);
        assert_eq!(d.detections[0].embedding, vec![0.6, 0.8]);
        assert_eq!(d.detections[0].mask.count(), 3);
        assert!(d.detections[0].mask.get(2, 0) && d.detections[0].mask.get(0, 1));
    }

    #[test]
    fn empty_mask_is_dropped_with_warning() {
        let d = parse(&mask_line(&[12], &[1.0, 0.0], "a car"), &manifest(2)).unwrap();
        assert!(d.detections.is_empty());
        assert_eq!(d.warnings.len(), 1);
    }

    #[test]
    fn zero_embedding_is_dropped() {
        let d = parse(&mask_line(&[0, 12], &[0.0, 0.0], "a car"), &manifest(2)).unwrap();
        assert!(d.detections.is_empty());
        assert_eq!(d.warnings.len(), 1);
    }

    #[test]
    fn inconsistent_rle_rejects_frame() {
        let err = parse(&mask_line(&[2, 3], &[1.0, 0.0], "a car"), &manifest(2)).unwrap_err();
        assert!(matches!(err, IngestError::MaskSize { expected: 12, found: 5, .. }));
        assert!(err.is_frame_local());
    }

    #[test]
    fn wrong_dimension_is_fatal() {
        let err = parse(&mask_line(&[0, 12], &[1.0, 0.0, 0.0], "a car"), &manifest(2)).unwrap_err();
        assert!(matches!(err, IngestError::EmbeddingDim { expected: 2, found: 3, .. }));
        assert!(!err.is_frame_local());
    }

    #[test]
    fn pose_line_gets_bottom_row() {
        let p = Pose::parse_line("0 -1 0 1  1 0 0 2  0 0 1 3", 1e-6).unwrap();
        let m = p.matrix();
        assert_eq!(m.row(3).iter().copied().collect::<Vec<_>>(), vec![0.0, 0.0, 0.0, 1.0]);
        assert_eq!(p.translation(), Point::new(1.0, 2.0, 3.0));
        let q = p.transform_point(&Point::new(1.0, 0.0, 0.0));
        assert_eq!(q, Point::new(1.0, 3.0, 3.0));
    }

    #[test]
    fn perturbed_rotation_is_rejected() {
        assert!(Pose::parse_line("1.001 0 0 0  0 1 0 0  0 0 1 0", 1e-6).is_err());
        assert!(Pose::parse_line("1 0.001 0 0  0 1 0 0  0 0 1 0", 1e-6).is_err());
        // A reflection is orthonormal but not a rotation.
        assert!(Pose::parse_line("-1 0 0 0  0 1 0 0  0 0 1 0", 1e-6).is_err());
        assert!(Pose::parse_line("1 0 0 0  0 1 0 0  0 0 1", 1e-6).is_err());
    }

    #[test]
    fn pose_text_round_trip() {
        let p = Pose::from_yaw_translation(0.3, [1.5, -2.25, 0.1]);
        assert_eq!(Pose::parse_line(&p.to_line(), 1e-6).unwrap(), p);
    }

    #[test]
    fn rle_round_trip() {
        let mut m = Bitmask::new(5, 4);
        for (u, v) in [(0, 0), (1, 0), (4, 3), (2, 2)] {
            m.set(u, v);
        }
        let runs = m.to_runs();
        assert_eq!(runs.iter().sum::<u32>(), 20);
        assert_eq!(Bitmask::from_runs(5, 4, &runs).unwrap(), m);
    }

    #[test]
    fn ascii_cloud() {
        let c = PointCloud::from_ascii("# x y z\n1 2 3\n4 5 6 0.5\n").unwrap();
        assert_eq!(c.points.len(), 2);
        assert_eq!(c.intensity.unwrap()[1], 0.5);
        assert!(PointCloud::from_ascii("1 2\n").is_err());
    }

    #[test]
    fn empty_directory_has_no_frames() {
        let dir = tempdir().unwrap();
        let err = load_sequence(dir.path(), &IngestConfig::default()).unwrap_err();
        assert!(err.to_string().contains("no frames found"), "{err}");
    }

    fn write_fixture(dir: &Path, frames: &[FrameRecord], poses: &[Pose]) {
        write_manifest(dir, &manifest(2)).unwrap();
        let calib = SensorCalibration::new(
            Matrix3x4::new(1.0, 0.0, 2.0, 0.0, 0.0, 1.0, 1.5, 0.0, 0.0, 0.0, 1.0, 0.0),
            Matrix4::identity(),
            4,
            3,
            1e-6,
        )
        .unwrap();
        write_calibration(dir, &calib).unwrap();
        write_poses(dir, poses).unwrap();
        for f in frames {
            write_frame(dir, f).unwrap();
        }
    }

    fn frame(index: usize, pose: Pose) -> FrameRecord {
        let mut mask = Bitmask::new(4, 3);
        mask.set(1, 1);
        let mut cloud = PointCloud::new(vec![
            Point::new(0.5, -1.25, 3.0),
            Point::new(index as f64, 0.1f32 as f64, 7.0),
        ]);
        cloud.intensity = Some(vec![0.25, 1.0]);
        cloud.dynamic = Some(vec![false, true]);
        FrameRecord {
            index,
            cloud,
            pose,
            detections: vec![Detection { mask, caption: "a red car".into(), embedding: vec![0.6, 0.8] }],
        }
    }

    #[test]
    fn sequence_round_trip() {
        let dir = tempdir().unwrap();
        let poses: Vec<Pose> = (0..3)
            .map(|i| Pose::from_yaw_translation(0.1 * i as f64, [i as f64, 0.5, 0.0]))
            .collect();
        let frames: Vec<FrameRecord> = (0..3).map(|i| frame(i, poses[i])).collect();
        write_fixture(dir.path(), &frames, &poses);

        let stream = load_sequence(dir.path(), &IngestConfig::default()).unwrap();
        assert_eq!(stream.frames.len(), 3);
        assert_eq!(stream.skipped_frames, 0);
        assert_eq!(stream.frames, frames);
        assert_eq!(stream.trajectory, poses);
    }

    #[test]
    fn incomplete_frames_are_skipped() {
        let dir = tempdir().unwrap();
        let poses: Vec<Pose> = (0..2).map(|i| Pose::from_yaw_translation(0.0, [i as f64, 0.0, 0.0])).collect();
        // Frame 2 has files but no pose; frame 1 loses its detections.
        let frames: Vec<FrameRecord> = (0..3).map(|i| frame(i, Pose::identity())).collect();
        write_fixture(dir.path(), &frames, &poses);
        fs::remove_file(dir.path().join(DETECTION_DIR).join("000001.jsonl")).unwrap();
        let stream = load_sequence(dir.path(), &IngestConfig::default()).unwrap();
        assert_eq!(stream.frames.iter().map(|f| f.index).collect::<Vec<_>>(), vec![0]);
        assert_eq!(stream.skipped_frames, 2);
    }

    #[test]
    fn malformed_pose_line_reports_line_number() {
        let dir = tempdir().unwrap();
        let poses = vec![Pose::identity(); 2];
        write_fixture(dir.path(), &[frame(0, poses[0])], &poses);
        fs::write(dir.path().join(POSES_FILE), "1 0 0 0 0 1 0 0 0 0 1 0\n1 0 0\n").unwrap();
        match load_sequence(dir.path(), &IngestConfig::default()) {
            Err(IngestError::Pose { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected pose error, got {other:?}"),
        }
    }

    #[test]
    fn missing_calibration_is_fatal() {
        let dir = tempdir().unwrap();
        let poses = vec![Pose::identity()];
        write_fixture(dir.path(), &[frame(0, poses[0])], &poses);
        fs::remove_file(dir.path().join(CALIB_FILE)).unwrap();
        assert!(matches!(
            load_sequence(dir.path(), &IngestConfig::default()),
            Err(IngestError::Missing(_))
        ));
        fs::write(dir.path().join(CALIB_FILE), "P2: 1 0 0 0 0 1 0 0 0 0 1 0\n").unwrap();
        assert!(matches!(
            load_sequence(dir.path(), &IngestConfig::default()),
            Err(IngestError::Calibration { .. })
        ));
    }
}
