//! Deterministic synthetic scenes with exact ground truth.
//!
//! A scene is a set of boxes filled with random points, a ground plane, and a
//! vehicle driving one of four trajectory shapes. Keyframes along the
//! trajectory get a LiDAR cloud, a pinhole camera with a z-buffer decides
//! which points are visible, and every visible object produces a detection
//! whose mask is exactly the pixels its points won. Output uses the ingest
//! file formats plus `ground_truth.json` and `gt_labels.bin`.

use std::collections::{BTreeMap, BTreeSet};
use std::hash::Hasher;
use std::path::Path;

use fnv::FnvHasher;
use nalgebra::{Matrix3x4, Matrix4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::caption::tokenize;
use crate::eval::{LabeledCloud, UNLABELED};
use crate::geom::{Point, Point2};
use crate::ingest::{
    self, Bitmask, Detection, FrameRecord, IngestError, Manifest, PointCloud, Pose, SensorCalibration,
};
use crate::lane_graph::NodeKind;
use crate::projection::pixel_of;

pub const GROUND_TRUTH_FILE: &str = "ground_truth.json";
pub const GT_LABELS_FILE: &str = "gt_labels.bin";

pub const IMAGE_WIDTH: u32 = 640;
pub const IMAGE_HEIGHT: u32 = 480;
pub const FOCAL_LENGTH: f64 = 500.0;
/// Height of the LiDAR above the ground plane, meters.
pub const SENSOR_HEIGHT: f64 = 1.7;

#[derive(Debug, Error)]
pub enum SyntheticError {
    #[error("embedding dimension must be at least 8, got {0}")]
    Dimension(usize),
    #[error("text has no tokens")]
    EmptyText,
    #[error("invalid scene: {0}")]
    Spec(String),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Eval(#[from] crate::eval::EvalError),
}

/// FNV-1a 64-bit hash of the UTF-8 bytes.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = FnvHasher::default();
    h.write(bytes);
    h.finish()
}

/// Signed bag-of-tokens embedding.
///
/// Text is tokenized like captions. Each token adds `±1` at index
/// `fnv1a64(token) % dim`, negative when the hash's top bit is set. The sum is
/// L2-normalized. A text whose tokens cancel exactly falls back to the first
/// token alone.
pub fn hash_embedding(text: &str, dim: usize) -> Result<Vec<f64>, SyntheticError> {
    if dim < 8 {
        return Err(SyntheticError::Dimension(dim));
    }
    let tokens = tokenize(text);
    if tokens.is_empty() {
        return Err(SyntheticError::EmptyText);
    }
    let accumulate = |tokens: &[String]| {
        let mut v = vec![0.0; dim];
        for t in tokens {
            let h = fnv1a64(t.as_bytes());
            let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
            v[(h % dim as u64) as usize] += sign;
        }
        v
    };
    let mut v = accumulate(&tokens);
    if v.iter().all(|&x| x == 0.0) {
        v = accumulate(&tokens[..1]);
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    Ok(v.into_iter().map(|x| x / norm).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryShape {
    Straight,
    L,
    T,
    Cross,
}

/// Sample points of each pass. Passes are driven one after the other; the jump
/// between them is longer than any sample step.
///
/// All shapes meet at the origin: straight runs along x through it, L comes in
/// from -x and leaves along +y, T is a full x pass plus a pass from -y ending
/// at the origin, cross is a full x pass plus a full y pass.
pub fn trajectory_passes(shape: TrajectoryShape, arm: f64, spacing: f64) -> Vec<Vec<Point2>> {
    let seg = |from: Point2, to: Point2, skip_first: bool| -> Vec<Point2> {
        let n = ((to - from).norm() / spacing).round().max(1.0) as usize;
        (skip_first as usize..=n).map(|i| from + (to - from) * (i as f64 / n as f64)).collect()
    };
    let (w, e, s, n, o) = (
        Point2::new(-arm, 0.0),
        Point2::new(arm, 0.0),
        Point2::new(0.0, -arm),
        Point2::new(0.0, arm),
        Point2::origin(),
    );
    match shape {
        TrajectoryShape::Straight => vec![seg(w, e, false)],
        TrajectoryShape::L => {
            let mut p = seg(w, o, false);
            p.extend(seg(o, n, true));
            vec![p]
        }
        TrajectoryShape::T => vec![seg(w, e, false), seg(s, o, false)],
        TrajectoryShape::Cross => vec![seg(w, e, false), seg(s, n, false)],
    }
}

/// Lane nodes the extractor should find for a shape.
pub fn expected_lane_nodes(shape: TrajectoryShape, arm: f64) -> Vec<(Point2, NodeKind)> {
    let bp = |x: f64, y: f64| (Point2::new(x, y), NodeKind::Breakpoint);
    match shape {
        TrajectoryShape::Straight => vec![bp(-arm, 0.0), bp(arm, 0.0)],
        TrajectoryShape::L => vec![(Point2::origin(), NodeKind::LIntersection), bp(-arm, 0.0), bp(0.0, arm)],
        TrajectoryShape::T => vec![
            (Point2::origin(), NodeKind::TIntersection),
            bp(-arm, 0.0),
            bp(arm, 0.0),
            bp(0.0, -arm),
        ],
        TrajectoryShape::Cross => vec![
            (Point2::origin(), NodeKind::Intersection),
            bp(-arm, 0.0),
            bp(arm, 0.0),
            bp(0.0, -arm),
            bp(0.0, arm),
        ],
    }
}

/// Adds isotropic Gaussian noise to every sample.
pub fn jitter(pts: &[Point2], sigma: f64, seed: u64) -> Vec<Point2> {
    if sigma == 0.0 {
        return pts.to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma).expect("finite sigma");
    pts.iter().map(|p| Point2::new(p.x + rng.sample(normal), p.y + rng.sample(normal))).collect()
}

/// Poses along the passes, heading along the direction of travel.
pub fn poses_along(passes: &[Vec<Point2>], height: f64) -> Vec<Pose> {
    let mut out = Vec::new();
    for pass in passes {
        for (i, p) in pass.iter().enumerate() {
            let d = if i + 1 < pass.len() { pass[i + 1] - p } else { p - pass[i - 1] };
            out.push(Pose::from_yaw_translation(d.y.atan2(d.x), [p.x, p.y, height]));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub class_name: String,
    /// `{class}` is replaced by the class name.
    #[serde(default = "default_caption")]
    pub caption: String,
    pub center: [f64; 3],
    pub extent: [f64; 3],
    /// Points per cubic meter.
    pub density: f64,
}

fn default_caption() -> String {
    "a {class}".into()
}

impl ObjectSpec {
    pub fn caption_text(&self) -> String {
        self.caption.replace("{class}", &self.class_name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingMode {
    /// Detections embed their caption, classes embed their name, both with
    /// [`hash_embedding`].
    Hash,
    /// Class `i` is the `i`-th basis vector; detections carry their class's.
    ClassBasis,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub objects: Vec<ObjectSpec>,
    pub trajectory: TrajectoryShape,
    #[serde(default = "default_arm")]
    pub arm_length: f64,
    #[serde(default = "default_spacing")]
    pub spacing: f64,
    /// Keyframes with a cloud and detections, spread evenly over the poses.
    pub frames: usize,
    /// Standard deviation of the noise added to recorded pose positions.
    #[serde(default)]
    pub noise_sigma: f64,
    pub seed: u64,
    #[serde(default = "default_mode")]
    pub embedding: EmbeddingMode,
    #[serde(default = "default_dim")]
    pub embedding_dim: usize,
    #[serde(default = "default_range")]
    pub max_range: f64,
    /// Ground grid spacing; 0 disables the ground plane.
    #[serde(default = "default_spacing")]
    pub ground_spacing: f64,
    /// Ground points are generated within this distance of the sensor.
    #[serde(default = "default_ground_radius")]
    pub ground_radius: f64,
    /// Objects winning fewer pixels are not detected in that frame.
    #[serde(default = "default_min_pixels")]
    pub min_mask_pixels: u64,
}

fn default_arm() -> f64 {
    50.0
}
fn default_spacing() -> f64 {
    1.0
}
fn default_mode() -> EmbeddingMode {
    EmbeddingMode::Hash
}
fn default_dim() -> usize {
    64
}
fn default_range() -> f64 {
    80.0
}
fn default_ground_radius() -> f64 {
    30.0
}
fn default_min_pixels() -> u64 {
    10
}

impl SceneSpec {
    pub fn validate(&self) -> Result<(), SyntheticError> {
        let fail = |m: &str| Err(SyntheticError::Spec(m.into()));
        if self.embedding_dim < 8 {
            return Err(SyntheticError::Dimension(self.embedding_dim));
        }
        if !(self.arm_length > 0.0 && self.spacing > 0.0 && self.max_range > 0.0) {
            return fail("arm_length, spacing and max_range must be positive");
        }
        if !(self.noise_sigma >= 0.0 && self.ground_spacing >= 0.0 && self.ground_radius >= 0.0) {
            return fail("noise_sigma, ground_spacing and ground_radius must not be negative");
        }
        if self.frames == 0 {
            return fail("frames must be positive");
        }
        for o in &self.objects {
            if !(o.density > 0.0 && o.extent.iter().all(|&e| e > 0.0)) {
                return fail("object density and extents must be positive");
            }
            if tokenize(&o.caption_text()).is_empty() {
                return fail("object caption has no tokens");
            }
        }
        if self.embedding == EmbeddingMode::ClassBasis && self.class_list().len() > self.embedding_dim {
            return fail("more classes than embedding dimensions");
        }
        Ok(())
    }

    /// Class names in order of first appearance.
    pub fn class_list(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for o in &self.objects {
            if !out.contains(&o.class_name) {
                out.push(o.class_name.clone());
            }
        }
        out
    }

    /// Poses recorded on disk: the true trajectory plus position noise.
    pub fn recorded_poses(&self) -> Vec<Pose> {
        let passes = trajectory_passes(self.trajectory, self.arm_length, self.spacing);
        let truth = poses_along(&passes, SENSOR_HEIGHT);
        if self.noise_sigma == 0.0 {
            return truth;
        }
        let flat: Vec<Point2> = passes.concat();
        let noisy = jitter(&flat, self.noise_sigma, self.seed ^ 0x9e37_79b9_7f4a_7c15);
        truth
            .iter()
            .zip(noisy)
            .map(|(p, q)| {
                let mut m = *p.matrix();
                m[(0, 3)] = q.x;
                m[(1, 3)] = q.y;
                Pose::new(m, 1e-6).expect("rigid")
            })
            .collect()
    }

    /// Pose indices of the keyframes.
    pub fn keyframes(&self) -> Vec<usize> {
        let n = trajectory_passes(self.trajectory, self.arm_length, self.spacing).iter().map(Vec::len).sum::<usize>();
        keyframe_indices(n, self.frames)
    }
}

fn keyframe_indices(poses: usize, frames: usize) -> Vec<usize> {
    if frames == 1 {
        return vec![0];
    }
    let frames = frames.min(poses);
    (0..frames).map(|k| ((k * (poses - 1)) as f64 / (frames - 1) as f64).round() as usize).collect()
}

/// Pinhole camera looking along LiDAR +x, image x to the right (LiDAR -y).
pub fn synthetic_calibration() -> SensorCalibration {
    #[rustfmt::skip]
    let k = Matrix3x4::new(
        FOCAL_LENGTH, 0.0, IMAGE_WIDTH as f64 / 2.0, 0.0,
        0.0, FOCAL_LENGTH, IMAGE_HEIGHT as f64 / 2.0, 0.0,
        0.0, 0.0, 1.0, 0.0,
    );
    #[rustfmt::skip]
    let tr = Matrix4::new(
        0.0, -1.0, 0.0, 0.0,
        0.0, 0.0, -1.0, 0.0,
        1.0, 0.0, 0.0, 0.0,
        0.0, 0.0, 0.0, 1.0,
    );
    SensorCalibration::new(k, tr, IMAGE_WIDTH, IMAGE_HEIGHT, 1e-9).expect("rigid")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtObject {
    pub id: usize,
    pub class_id: u16,
    pub class_name: String,
    pub caption: String,
    pub center: [f64; 3],
    pub extent: [f64; 3],
    /// Generated points visible in at least one keyframe.
    pub visible_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtLaneNode {
    pub position: [f64; 2],
    pub kind: NodeKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub classes: Vec<String>,
    pub objects: Vec<GtObject>,
    pub lane_nodes: Vec<GtLaneNode>,
    /// Pose indices that have frame files.
    pub keyframes: Vec<usize>,
}

impl GroundTruth {
    pub fn load(dir: &Path) -> Result<Self, SyntheticError> {
        let path = dir.join(GROUND_TRUTH_FILE);
        let text = std::fs::read_to_string(&path)
            .map_err(|source| IngestError::Io { path: path.clone(), source })?;
        serde_json::from_str(&text).map_err(|e| SyntheticError::Spec(format!("{}: {e}", path.display())))
    }
}

/// Everything a scene generates, before it is written.
#[derive(Debug, Clone)]
pub struct Scene {
    pub manifest: Manifest,
    pub calibration: SensorCalibration,
    pub poses: Vec<Pose>,
    pub frames: Vec<FrameRecord>,
    pub ground_truth: GroundTruth,
    /// Visible object points in the map frame, labeled by class.
    pub labels: LabeledCloud,
    /// Object id of every point in `labels`.
    pub label_objects: Vec<usize>,
}

fn sample_box(o: &ObjectSpec, rng: &mut ChaCha8Rng) -> Vec<Point> {
    let volume: f64 = o.extent.iter().product();
    let n = (o.density * volume).round().max(1.0) as usize;
    (0..n)
        .map(|_| {
            let c = |a: usize, rng: &mut ChaCha8Rng| o.center[a] + (rng.random::<f64>() - 0.5) * o.extent[a];
            Point::new(c(0, rng), c(1, rng), c(2, rng))
        })
        .collect()
}

/// Point source inside the scene: object `Some(id)` or ground `None`.
type Source = (Option<usize>, usize);

struct FrameOutput {
    record: FrameRecord,
    visible: Vec<(usize, usize)>,
}

fn render_frame(
    spec: &SceneSpec,
    index: usize,
    truth: &Pose,
    recorded: &Pose,
    objects: &[Vec<Point>],
    embeddings: &[Vec<f64>],
    calib: &SensorCalibration,
) -> FrameOutput {
    let inv = truth.matrix().try_inverse().expect("rigid");
    let to_sensor = |p: &Point| {
        let q = inv.transform_point(p);
        // Stored as float32; project what the reader will see.
        Point::new(q.x as f32 as f64, q.y as f32 as f64, q.z as f32 as f64)
    };
    let mut candidates: Vec<(Source, Point)> = Vec::new();
    for (id, pts) in objects.iter().enumerate() {
        for (i, p) in pts.iter().enumerate() {
            candidates.push(((Some(id), i), to_sensor(p)));
        }
    }
    if spec.ground_spacing > 0.0 {
        let t = truth.translation();
        let r = spec.ground_radius;
        let steps = (r / spec.ground_spacing).floor() as i64;
        let (gx, gy) = ((t.x / spec.ground_spacing).round() as i64, (t.y / spec.ground_spacing).round() as i64);
        let mut i = 0;
        for dx in -steps..=steps {
            for dy in -steps..=steps {
                let p = Point::new((gx + dx) as f64 * spec.ground_spacing, (gy + dy) as f64 * spec.ground_spacing, 0.0);
                if (p.x - t.x).hypot(p.y - t.y) <= r {
                    candidates.push(((None, i), to_sensor(&p)));
                    i += 1;
                }
            }
        }
    }
    candidates.retain(|(_, p)| p.coords.norm() <= spec.max_range);

    // Z-buffer: the nearest point owns each pixel, earlier candidates win ties.
    let mut owner: BTreeMap<(u32, u32), (f64, usize)> = BTreeMap::new();
    let mut keep = vec![true; candidates.len()];
    let mut pixel = vec![None; candidates.len()];
    for (k, (_, p)) in candidates.iter().enumerate() {
        if let Some(px) = pixel_of(calib, p) {
            pixel[k] = Some(px);
            let depth = p.x;
            match owner.get(&px) {
                Some(&(d, _)) if d <= depth => keep[k] = false,
                Some(&(_, prev)) => {
                    keep[prev] = false;
                    owner.insert(px, (depth, k));
                }
                None => {
                    owner.insert(px, (depth, k));
                }
            }
        }
    }

    let mut masks: Vec<Bitmask> = objects.iter().map(|_| Bitmask::new(calib.image_width, calib.image_height)).collect();
    let mut points = Vec::new();
    let mut in_mask: Vec<(usize, usize)> = Vec::new();
    for (k, ((obj, i), p)) in candidates.iter().enumerate() {
        if !keep[k] {
            continue;
        }
        points.push(*p);
        if let (Some(id), Some((u, v))) = (obj, pixel[k]) {
            masks[*id].set(u, v);
            in_mask.push((*id, *i));
        }
    }
    let detected: Vec<bool> = masks.iter().map(|m| m.count() >= spec.min_mask_pixels).collect();
    let detections = masks
        .into_iter()
        .enumerate()
        .filter(|(id, _)| detected[*id])
        .map(|(id, mask)| Detection {
            mask,
            caption: spec.objects[id].caption_text(),
            embedding: embeddings[id].clone(),
        })
        .collect();
    in_mask.retain(|(id, _)| detected[*id]);
    FrameOutput {
        record: FrameRecord { index, cloud: PointCloud::new(points), pose: *recorded, detections },
        visible: in_mask,
    }
}

/// Builds every file of a scene in memory.
pub fn render_scene(spec: &SceneSpec) -> Result<Scene, SyntheticError> {
    spec.validate()?;
    let classes = spec.class_list();
    let class_of = |o: &ObjectSpec| classes.iter().position(|c| *c == o.class_name).unwrap() as u16;
    let class_embeddings: Vec<Vec<f64>> = match spec.embedding {
        EmbeddingMode::Hash => classes.iter().map(|c| hash_embedding(c, spec.embedding_dim)).collect::<Result<_, _>>()?,
        EmbeddingMode::ClassBasis => (0..classes.len())
            .map(|i| {
                let mut v = vec![0.0; spec.embedding_dim];
                v[i] = 1.0;
                v
            })
            .collect(),
    };
    let embeddings: Vec<Vec<f64>> = spec
        .objects
        .iter()
        .map(|o| match spec.embedding {
            EmbeddingMode::Hash => hash_embedding(&o.caption_text(), spec.embedding_dim),
            EmbeddingMode::ClassBasis => Ok(class_embeddings[class_of(o) as usize].clone()),
        })
        .collect::<Result<_, _>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let objects: Vec<Vec<Point>> = spec.objects.iter().map(|o| sample_box(o, &mut rng)).collect();

    let passes = trajectory_passes(spec.trajectory, spec.arm_length, spec.spacing);
    let truth = poses_along(&passes, SENSOR_HEIGHT);
    let recorded = spec.recorded_poses();
    let keyframes = keyframe_indices(truth.len(), spec.frames);
    let calibration = synthetic_calibration();

    let outputs: Vec<FrameOutput> = keyframes
        .par_iter()
        .map(|&k| render_frame(spec, k, &truth[k], &recorded[k], &objects, &embeddings, &calibration))
        .collect();

    let mut visible: BTreeSet<(usize, usize)> = BTreeSet::new();
    let mut frames = Vec::with_capacity(outputs.len());
    for out in outputs {
        visible.extend(out.visible);
        frames.push(out.record);
    }
    let mut labels = LabeledCloud {
        classes: classes.clone(),
        colors: crate::hierarchy::default_colors(classes.len()),
        ..Default::default()
    };
    let mut label_objects = Vec::new();
    let mut visible_counts = vec![0; objects.len()];
    for &(id, i) in &visible {
        labels.points.push(objects[id][i]);
        labels.labels.push(class_of(&spec.objects[id]));
        label_objects.push(id);
        visible_counts[id] += 1;
    }
    debug_assert!(labels.labels.iter().all(|&l| l != UNLABELED));

    let ground_truth = GroundTruth {
        classes: classes.clone(),
        objects: spec
            .objects
            .iter()
            .enumerate()
            .map(|(id, o)| GtObject {
                id,
                class_id: class_of(o),
                class_name: o.class_name.clone(),
                caption: o.caption_text(),
                center: o.center,
                extent: o.extent,
                visible_points: visible_counts[id],
            })
            .collect(),
        lane_nodes: expected_lane_nodes(spec.trajectory, spec.arm_length)
            .into_iter()
            .map(|(p, kind)| GtLaneNode { position: [p.x, p.y], kind })
            .collect(),
        keyframes,
    };
    let manifest = Manifest {
        embedding_dim: spec.embedding_dim,
        image_width: IMAGE_WIDTH,
        image_height: IMAGE_HEIGHT,
        class_list: Some(classes),
        class_embeddings: Some(class_embeddings),
        class_colors: Some(labels.colors.clone()),
    };
    Ok(Scene { manifest, calibration, poses: recorded, frames, ground_truth, labels, label_objects })
}

/// Renders a scene and writes it to `dir` in the ingest layout.
pub fn generate_scene(spec: &SceneSpec, dir: &Path) -> Result<Scene, SyntheticError> {
    let scene = render_scene(spec)?;
    std::fs::create_dir_all(dir).map_err(|source| IngestError::Io { path: dir.to_path_buf(), source })?;
    ingest::write_manifest(dir, &scene.manifest)?;
    ingest::write_calibration(dir, &scene.calibration)?;
    ingest::write_poses(dir, &scene.poses)?;
    for frame in &scene.frames {
        ingest::write_frame(dir, frame)?;
    }
    let gt = serde_json::to_string_pretty(&scene.ground_truth).expect("serializable") + "\n";
    let path = dir.join(GROUND_TRUTH_FILE);
    std::fs::write(&path, gt).map_err(|source| IngestError::Io { path, source })?;
    scene.labels.write(&dir.join(GT_LABELS_FILE))?;
    Ok(scene)
}

/// Class names used by [`cross_scene_spec`].
pub const FIXTURE_CLASSES: [&str; 10] =
    ["car", "tree", "pole", "sign", "fence", "bicycle", "trunk", "bench", "hydrant", "mailbox"];

/// Cross trajectory with `objects` boxes of distinct classes, placed in pairs
/// 12 m ahead of the keyframes, 4 m to either side of the road.
pub fn cross_scene_spec(objects: usize, frames: usize, mode: EmbeddingMode, seed: u64) -> SceneSpec {
    let mut spec = SceneSpec {
        objects: Vec::new(),
        trajectory: TrajectoryShape::Cross,
        arm_length: default_arm(),
        spacing: default_spacing(),
        frames,
        noise_sigma: 0.0,
        seed,
        embedding: mode,
        embedding_dim: 16.max(objects.next_power_of_two()),
        max_range: default_range(),
        ground_spacing: default_spacing(),
        ground_radius: default_ground_radius(),
        min_mask_pixels: default_min_pixels(),
    };
    let poses = spec.recorded_poses();
    let keys = spec.keyframes();
    for i in 0..objects {
        let pose = poses[keys[(i * keys.len() / objects.max(1)).min(keys.len() - 1)]];
        let m = pose.matrix();
        let (fwd, left) = ((m[(0, 0)], m[(1, 0)]), (m[(0, 1)], m[(1, 1)]));
        let side = if i % 2 == 0 { 4.0 } else { -4.0 };
        let t = pose.translation();
        let class = FIXTURE_CLASSES[i % FIXTURE_CLASSES.len()];
        let name = if i < FIXTURE_CLASSES.len() { class.to_string() } else { format!("{class}{i}") };
        spec.objects.push(ObjectSpec {
            class_name: name,
            caption: default_caption(),
            center: [t.x + 12.0 * fwd.0 + side * left.0, t.y + 12.0 * fwd.1 + side * left.1, 0.75],
            extent: [1.5, 1.5, 1.5],
            density: 200.0,
        });
    }
    spec
}
