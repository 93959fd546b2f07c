//! The five-layer hierarchical graph: point cloud, lane graph, instances,
//! road segments and the environment node, with cross-layer links and the
//! on-disk container.
//!
//! Points and embeddings are held at float32 precision because that is how
//! the container stores them, which keeps save / load an exact round trip.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::{LabeledCloud, UNLABELED};
use crate::geom::{self, aabb_iou, AxisAlignedBox, Point, Point2, WeightedGraph};
use crate::ingest::Manifest;
use crate::lane_graph::{LaneGraph, NodeKind};
use crate::object_map::{MapObject, ObjectId, ObjectMap};

/// Format string written into every map container.
pub const MAP_FORMAT: &str = "opengraph-map/1";

#[derive(Debug, Error)]
pub enum HierarchyError {
    #[error("invalid class catalog: {0}")]
    Catalog(String),
    #[error("embedding dimension {found} does not match {expected}")]
    Dimension { expected: usize, found: usize },
    #[error("unknown instance {0}")]
    UnknownInstance(ObjectId),
    #[error("unsupported map format: expected {expected}, found {found}")]
    Version { expected: String, found: String },
    #[error("malformed map container {path}: {reason}")]
    Parse { path: PathBuf, reason: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Geom(#[from] geom::GeomError),
}

fn f32_exact(x: f64) -> f64 {
    x as f32 as f64
}

fn f32_point(p: &Point) -> Point {
    Point::new(f32_exact(p.x), f32_exact(p.y), f32_exact(p.z))
}

/// Unit vector at float32 precision.
pub fn unit_f32<T: Copy + Into<f64>>(v: &[T]) -> Result<Vec<f32>, geom::GeomError> {
    let mut w: Vec<f64> = v.iter().map(|&x| x.into()).collect();
    geom::normalize(&mut w)?;
    Ok(w.into_iter().map(|x| x as f32).collect())
}

/// Deterministic display colors, one per class.
pub fn default_colors(n: usize) -> Vec<[u8; 3]> {
    (0..n)
        .map(|i| {
            // Golden-angle hue walk, fixed saturation and value.
            let h = (i as f64 * 137.507_764) % 360.0;
            let (s, v) = (0.65, 0.95);
            let c = v * s;
            let x = c * (1.0 - ((h / 60.0) % 2.0 - 1.0).abs());
            let (r, g, b) = match (h / 60.0) as u32 {
                0 => (c, x, 0.0),
                1 => (x, c, 0.0),
                2 => (0.0, c, x),
                3 => (0.0, x, c),
                4 => (x, 0.0, c),
                _ => (c, 0.0, x),
            };
            let m = v - c;
            let byte = |t: f64| ((t + m) * 255.0).round() as u8;
            [byte(r), byte(g), byte(b)]
        })
        .collect()
}

/// Class names with their embeddings (same embedder as the detections).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassCatalog {
    names: Vec<String>,
    #[serde(skip)]
    embeddings: Vec<Vec<f32>>,
    colors: Vec<[u8; 3]>,
}

impl ClassCatalog {
    /// Embeddings are normalized; missing colors come from [`default_colors`].
    pub fn new(names: Vec<String>, embeddings: Vec<Vec<f64>>, colors: Option<Vec<[u8; 3]>>) -> Result<Self, HierarchyError> {
        let fail = |m: String| Err(HierarchyError::Catalog(m));
        if names.len() != embeddings.len() {
            return fail(format!("{} names but {} embeddings", names.len(), embeddings.len()));
        }
        if names.len() >= UNLABELED as usize {
            return fail("too many classes".into());
        }
        let unique: BTreeSet<&String> = names.iter().collect();
        if unique.len() != names.len() {
            return fail("class names must be unique".into());
        }
        if let Some(first) = embeddings.first() {
            if embeddings.iter().any(|e| e.len() != first.len()) || first.is_empty() {
                return fail("class embeddings must share one non-zero dimension".into());
            }
        }
        let embeddings = embeddings
            .iter()
            .zip(&names)
            .map(|(e, n)| unit_f32(e).map_err(|_| HierarchyError::Catalog(format!("class {n:?} has a zero embedding"))))
            .collect::<Result<Vec<_>, _>>()?;
        let colors = match colors {
            Some(c) if c.len() == names.len() => c,
            Some(c) => return fail(format!("{} colors for {} classes", c.len(), names.len())),
            None => default_colors(names.len()),
        };
        Ok(ClassCatalog { names, embeddings, colors })
    }

    /// The catalog declared in a sequence manifest, if it has one.
    pub fn from_manifest(m: &Manifest) -> Option<Result<Self, HierarchyError>> {
        let (names, embeddings) = (m.class_list.clone()?, m.class_embeddings.clone()?);
        Some(Self::new(names, embeddings, m.class_colors.clone()))
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn embeddings(&self) -> &[Vec<f32>] {
        &self.embeddings
    }

    pub fn colors(&self) -> &[[u8; 3]] {
        &self.colors
    }

    pub fn dim(&self) -> Option<usize> {
        self.embeddings.first().map(Vec::len)
    }

    pub fn index_of(&self, name: &str) -> Option<u16> {
        self.names.iter().position(|n| n == name).map(|i| i as u16)
    }

    /// Class with the highest cosine to `embedding`; ties go to the lowest
    /// index. [`UNLABELED`] for an empty catalog.
    pub fn classify<T: Copy + Into<f64>>(&self, embedding: &[T]) -> Result<u16, HierarchyError> {
        let mut best: Option<(u16, f64)> = None;
        for (c, e) in self.embeddings.iter().enumerate() {
            let s = geom::cosine_similarity(embedding, e)
                .map_err(|_| HierarchyError::Dimension { expected: e.len(), found: embedding.len() })?;
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((c as u16, s));
            }
        }
        Ok(best.map_or(UNLABELED, |(c, _)| c))
    }
}

/// Class of every map object, in object order.
pub fn classify_objects(map: &ObjectMap, catalog: &ClassCatalog) -> Result<Vec<u16>, HierarchyError> {
    map.objects().iter().map(|o| catalog.classify(o.embedding())).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HierarchyConfig {
    /// Voxel size of the point cloud layer, meters.
    pub voxel: f64,
    /// Length of path around a junction that belongs to its segment, meters.
    pub node_radius: f64,
    pub labeler: GeometricLabeler,
}

impl Default for HierarchyConfig {
    fn default() -> Self {
        HierarchyConfig { voxel: 0.2, node_radius: 10.0, labeler: GeometricLabeler::default() }
    }
}

impl HierarchyConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.voxel > 0.0 && self.node_radius > 0.0) {
            return Err("voxel and node_radius must be positive".into());
        }
        if !(self.labeler.stack_tolerance >= 0.0 && self.labeler.adjacent_gap >= 0.0) {
            return Err("labeler tolerances must not be negative".into());
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Point cloud layer
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloudLayer {
    pub points: Vec<Point>,
    /// Owning instance of every point.
    pub instances: Vec<ObjectId>,
    /// Class of every point, [`UNLABELED`] without a catalog.
    pub classes: Vec<u16>,
}

impl PointCloudLayer {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Voxel centroids of one object's points at float32 precision.
pub fn downsample_instance(points: &[Point], voxel: f64) -> Vec<Point> {
    geom::voxel_downsample(points, voxel).iter().map(f32_point).collect()
}

/// Object points downsampled per object and stacked in object order.
pub fn build_point_cloud_layer(objects: &[MapObject], classes: &[u16], voxel: f64) -> PointCloudLayer {
    assert_eq!(objects.len(), classes.len(), "one class per object");
    let mut layer = PointCloudLayer::default();
    for (o, &c) in objects.iter().zip(classes) {
        let pts = downsample_instance(o.points(), voxel);
        layer.instances.extend(std::iter::repeat_n(o.id(), pts.len()));
        layer.classes.extend(std::iter::repeat_n(c, pts.len()));
        layer.points.extend(pts);
    }
    layer
}

// ---------------------------------------------------------------------------
// Instance layer
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceNode {
    pub id: ObjectId,
    pub class_id: u16,
    pub caption: String,
    #[serde(skip)]
    pub embedding: Vec<f32>,
    pub centroid: Point,
    pub aabb: AxisAlignedBox,
    pub obs_count: u32,
}

impl InstanceNode {
    pub fn from_object(o: &MapObject, class_id: u16) -> Result<Self, HierarchyError> {
        Ok(InstanceNode {
            id: o.id(),
            class_id,
            caption: o.caption().to_owned(),
            embedding: unit_f32(o.embedding())?,
            centroid: o.centroid(),
            aabb: *o.aabb(),
            obs_count: o.obs_count(),
        })
    }
}

/// Undirected instance edge; `relation` describes `a` relative to `b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceEdge {
    pub a: ObjectId,
    pub b: ObjectId,
    pub relation: String,
    pub weight: f64,
}

/// Names the spatial relation of one instance to another.
pub trait RelationLabeler: Send + Sync {
    fn label(&self, a: &InstanceNode, b: &InstanceNode) -> String;
}

/// `a` "on" `b` when the footprints overlap and `a`'s bottom is at or above
/// `b`'s top (within `stack_tolerance`), "under" for the reverse, "adjacent
/// to" when the boxes are closer than `adjacent_gap`, else "near".
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometricLabeler {
    pub stack_tolerance: f64,
    pub adjacent_gap: f64,
}

impl Default for GeometricLabeler {
    fn default() -> Self {
        GeometricLabeler { stack_tolerance: 0.1, adjacent_gap: 1.0 }
    }
}

impl RelationLabeler for GeometricLabeler {
    fn label(&self, a: &InstanceNode, b: &InstanceNode) -> String {
        let (ba, bb) = (&a.aabb, &b.aabb);
        if ba.overlaps_horizontally(bb) {
            if ba.min.z >= bb.max.z - self.stack_tolerance {
                return "on".into();
            }
            if bb.min.z >= ba.max.z - self.stack_tolerance {
                return "under".into();
            }
        }
        if ba.gap(bb) < self.adjacent_gap {
            "adjacent to".into()
        } else {
            "near".into()
        }
    }
}

/// The label of the reverse direction ("on" and "under" swap).
pub fn inverse_relation(label: &str) -> &str {
    match label {
        "on" => "under",
        "under" => "on",
        other => other,
    }
}

/// Minimum spanning tree over all instance pairs with weight
/// `centroid distance × (1 − IoU)`, labeled from the lower id's side.
pub fn build_instance_layer(instances: &[InstanceNode], labeler: &dyn RelationLabeler) -> Result<Vec<InstanceEdge>, HierarchyError> {
    let n = instances.len();
    let mut g = WeightedGraph::new(n);
    for i in 0..n {
        for j in i + 1..n {
            let (a, b) = (&instances[i], &instances[j]);
            let w = (a.centroid - b.centroid).norm() * (1.0 - aabb_iou(&a.aabb, &b.aabb));
            g.add_edge(i, j, w)?;
        }
    }
    let mst = geom::minimum_spanning_tree(&g)?;
    let mut edges: Vec<InstanceEdge> = mst
        .iter()
        .map(|e| {
            let (a, b) = if instances[e.u].id < instances[e.v].id { (e.u, e.v) } else { (e.v, e.u) };
            InstanceEdge {
                a: instances[a].id,
                b: instances[b].id,
                relation: labeler.label(&instances[a], &instances[b]),
                weight: e.weight,
            }
        })
        .collect();
    edges.sort_by_key(|e| (e.a, e.b));
    Ok(edges)
}

// ---------------------------------------------------------------------------
// Segment layer
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentKind {
    Intersection,
    TIntersection,
    LIntersection,
    Straight,
}

impl SegmentKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            SegmentKind::Intersection => "intersection",
            SegmentKind::TIntersection => "t_intersection",
            SegmentKind::LIntersection => "l_intersection",
            SegmentKind::Straight => "straight",
        }
    }
}

impl std::str::FromStr for SegmentKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "straight" | "straight_roadway" | "straight roadway" => Ok(SegmentKind::Straight),
            other => match other.parse::<NodeKind>()? {
                NodeKind::Intersection => Ok(SegmentKind::Intersection),
                NodeKind::TIntersection => Ok(SegmentKind::TIntersection),
                NodeKind::LIntersection => Ok(SegmentKind::LIntersection),
                NodeKind::Breakpoint => Err("breakpoints have no segment".into()),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub id: usize,
    pub kind: SegmentKind,
    /// Lane node of a junction segment.
    pub node: Option<usize>,
    /// Lane edge of a straight segment.
    pub edge: Option<usize>,
    pub polylines: Vec<Vec<Point2>>,
    pub centroid: Point2,
}

/// Planar distance from `p` to a polyline (a single vertex counts as a point).
pub fn polyline_distance(p: &Point2, line: &[Point2]) -> f64 {
    match line {
        [] => f64::INFINITY,
        [q] => (p - q).norm(),
        _ => line
            .windows(2)
            .map(|w| {
                let (a, b) = (w[0], w[1]);
                let ab = b - a;
                let len2 = ab.norm_squared();
                let t = if len2 == 0.0 { 0.0 } else { ((p - a).dot(&ab) / len2).clamp(0.0, 1.0) };
                (p - (a + ab * t)).norm()
            })
            .fold(f64::INFINITY, f64::min),
    }
}

fn vertex_mean(lines: &[Vec<Point2>]) -> Option<Point2> {
    let all: Vec<&Point2> = lines.iter().flatten().collect();
    if all.is_empty() {
        return None;
    }
    let sum = all.iter().fold(nalgebra::Vector2::zeros(), |acc, p| acc + p.coords);
    Some(Point2::from(sum / all.len() as f64))
}

/// Leading vertices of `line` within `radius` of its first vertex, plus the
/// first vertex beyond it.
fn head_within(line: &[Point2], radius: f64) -> Vec<Point2> {
    let start = line[0];
    let mut out = Vec::new();
    for p in line {
        out.push(*p);
        if (p - start).norm() > radius {
            break;
        }
    }
    if out.len() < 2 && line.len() >= 2 {
        out.push(line[1]);
    }
    out
}

/// One segment per junction node (the pieces of its edges within
/// `node_radius`), then one straight segment per edge with the junction
/// pieces cut off. An edge too short to survive the cut keeps its full
/// polyline.
pub fn build_segment_layer(lg: &LaneGraph, node_radius: f64) -> Vec<Segment> {
    let mut segments = Vec::new();
    for (k, node) in lg.nodes.iter().enumerate() {
        let kind = match node.kind {
            NodeKind::Intersection => SegmentKind::Intersection,
            NodeKind::TIntersection => SegmentKind::TIntersection,
            NodeKind::LIntersection => SegmentKind::LIntersection,
            NodeKind::Breakpoint => continue,
        };
        let mut polylines = Vec::new();
        for e in &lg.edges {
            if e.a == k {
                polylines.push(head_within(&e.polyline, node_radius));
            }
            if e.b == k {
                let rev: Vec<Point2> = e.polyline.iter().rev().copied().collect();
                polylines.push(head_within(&rev, node_radius));
            }
        }
        segments.push(Segment {
            id: segments.len(),
            kind,
            node: Some(k),
            edge: None,
            polylines,
            centroid: node.position,
        });
    }
    for (k, e) in lg.edges.iter().enumerate() {
        let cut = |node: usize, p: &Point2| {
            let n = &lg.nodes[node];
            n.kind.is_junction() && (p - n.position).norm() <= node_radius
        };
        let kept: Vec<Point2> = e.polyline.iter().filter(|p| !cut(e.a, p) && !cut(e.b, p)).copied().collect();
        let line = if kept.len() >= 2 { kept } else { e.polyline.clone() };
        let polylines = vec![line];
        segments.push(Segment {
            id: segments.len(),
            kind: SegmentKind::Straight,
            node: None,
            edge: Some(k),
            centroid: vertex_mean(&polylines).unwrap(),
            polylines,
        });
    }
    segments
}

/// Segment nearest to `p` in the plane; ties go to the lower id.
pub fn nearest_segment(segments: &[Segment], p: &Point) -> Option<usize> {
    let q = Point2::new(p.x, p.y);
    let mut best: Option<(usize, f64)> = None;
    for s in segments {
        let d = s.polylines.iter().map(|l| polyline_distance(&q, l)).fold(f64::INFINITY, f64::min);
        if best.is_none_or(|(_, b)| d < b) {
            best = Some((s.id, d));
        }
    }
    best.map(|(id, _)| id)
}

// ---------------------------------------------------------------------------
// The graph
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct HierarchicalGraph {
    pub config: HierarchyConfig,
    pub embedding_dim: usize,
    pub catalog: Option<ClassCatalog>,
    pub point_cloud: PointCloudLayer,
    pub lane_graph: Option<LaneGraph>,
    /// Sorted by id.
    pub instances: Vec<InstanceNode>,
    pub instance_edges: Vec<InstanceEdge>,
    pub segments: Vec<Segment>,
    /// (instance, segment), one per instance, sorted by instance.
    pub instance_segments: Vec<(ObjectId, usize)>,
    /// Segments linked to the environment node.
    pub environment: Vec<usize>,
}

impl HierarchicalGraph {
    pub fn empty(config: HierarchyConfig, embedding_dim: usize) -> Self {
        HierarchicalGraph {
            config,
            embedding_dim,
            catalog: None,
            point_cloud: PointCloudLayer::default(),
            lane_graph: None,
            instances: Vec::new(),
            instance_edges: Vec::new(),
            segments: Vec::new(),
            instance_segments: Vec::new(),
            environment: Vec::new(),
        }
    }

    pub fn instance(&self, id: ObjectId) -> Option<&InstanceNode> {
        self.instances.binary_search_by_key(&id, |n| n.id).ok().map(|i| &self.instances[i])
    }

    pub fn segment_of(&self, id: ObjectId) -> Option<usize> {
        self.instance_segments.binary_search_by_key(&id, |l| l.0).ok().map(|i| self.instance_segments[i].1)
    }

    /// Names of layers that could not be built.
    pub fn missing_layers(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        if self.instances.is_empty() {
            out.extend(["point_cloud", "instances"]);
        }
        if self.lane_graph.is_none() {
            out.extend(["lane_graph", "segments"]);
        }
        out
    }

    /// Recomputes instance edges and instance-segment links from the current
    /// instances and segments.
    pub fn relink(&mut self, labeler: &dyn RelationLabeler) -> Result<(), HierarchyError> {
        self.instance_edges = build_instance_layer(&self.instances, labeler)?;
        self.instance_segments = self
            .instances
            .iter()
            .filter_map(|n| nearest_segment(&self.segments, &n.centroid).map(|s| (n.id, s)))
            .collect();
        self.environment = self.segments.iter().map(|s| s.id).collect();
        Ok(())
    }

    /// The point cloud layer as a labeled cloud over the catalog classes.
    pub fn labeled_cloud(&self) -> LabeledCloud {
        let (classes, colors) = match &self.catalog {
            Some(c) => (c.names().to_vec(), c.colors().to_vec()),
            None => (Vec::new(), Vec::new()),
        };
        LabeledCloud { classes, colors, points: self.point_cloud.points.clone(), labels: self.point_cloud.classes.clone() }
    }

    /// Every violated structural invariant, empty when the graph is sound.
    pub fn validate(&self) -> Vec<String> {
        let mut v = Vec::new();
        let ids: Vec<ObjectId> = self.instances.iter().map(|n| n.id).collect();
        if ids.windows(2).any(|w| w[0] >= w[1]) {
            v.push("instance ids are not strictly increasing".into());
        }
        let known: BTreeSet<ObjectId> = ids.iter().copied().collect();
        let classes = self.catalog.as_ref().map_or(0, |c| c.len());
        for n in &self.instances {
            if n.embedding.len() != self.embedding_dim {
                v.push(format!("instance {} embedding has dimension {}", n.id, n.embedding.len()));
            } else {
                let norm = n.embedding.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
                if (norm - 1.0).abs() > 1e-5 {
                    v.push(format!("instance {} embedding norm is {norm}", n.id));
                }
            }
            if n.class_id != UNLABELED && n.class_id as usize >= classes {
                v.push(format!("instance {} has unknown class {}", n.id, n.class_id));
            }
        }

        let pc = &self.point_cloud;
        if pc.instances.len() != pc.points.len() || pc.classes.len() != pc.points.len() {
            v.push("point cloud layer arrays differ in length".into());
        }
        for (i, (id, c)) in pc.instances.iter().zip(&pc.classes).enumerate() {
            match self.instance(*id) {
                None => {
                    v.push(format!("point {i} links to missing instance {id}"));
                    break;
                }
                Some(n) if n.class_id != *c => {
                    v.push(format!("point {i} class {c} differs from instance {id}"));
                    break;
                }
                _ => {}
            }
        }

        let n = self.instances.len();
        if n > 0 && self.instance_edges.len() != n - 1 {
            v.push(format!("{} instance edges for {n} instances", self.instance_edges.len()));
        }
        let mut uf: BTreeMap<ObjectId, ObjectId> = ids.iter().map(|&i| (i, i)).collect();
        fn root(uf: &mut BTreeMap<ObjectId, ObjectId>, mut x: ObjectId) -> ObjectId {
            while uf[&x] != x {
                x = uf[&x];
            }
            x
        }
        for e in &self.instance_edges {
            if !known.contains(&e.a) || !known.contains(&e.b) || e.a == e.b {
                v.push(format!("instance edge {}-{} has invalid endpoints", e.a, e.b));
                continue;
            }
            let (ra, rb) = (root(&mut uf, e.a), root(&mut uf, e.b));
            uf.insert(ra, rb);
        }
        let roots: BTreeSet<ObjectId> = ids.iter().map(|&i| root(&mut uf, i)).collect();
        if roots.len() > 1 {
            v.push(format!("instance layer has {} components", roots.len()));
        }

        for (i, s) in self.segments.iter().enumerate() {
            if s.id != i {
                v.push(format!("segment at position {i} has id {}", s.id));
            }
            if let Some(lg) = &self.lane_graph {
                if s.node.is_some_and(|k| k >= lg.nodes.len()) || s.edge.is_some_and(|k| k >= lg.edges.len()) {
                    v.push(format!("segment {} references a missing lane element", s.id));
                }
            }
        }
        let linked: Vec<ObjectId> = self.instance_segments.iter().map(|l| l.0).collect();
        if self.segments.is_empty() {
            if !linked.is_empty() {
                v.push("instance-segment links without segments".into());
            }
        } else if linked != ids {
            v.push("instances and instance-segment links do not correspond one to one".into());
        }
        if self.instance_segments.iter().any(|l| l.1 >= self.segments.len()) {
            v.push("instance linked to a missing segment".into());
        }
        let env: Vec<usize> = self.segments.iter().map(|s| s.id).collect();
        if self.environment != env {
            v.push("environment node does not link every segment exactly once".into());
        }

        if let Some(lg) = &self.lane_graph {
            for (k, e) in lg.edges.iter().enumerate() {
                if e.a >= lg.nodes.len() || e.b >= lg.nodes.len() {
                    v.push(format!("lane edge {k} has a missing endpoint"));
                }
                if e.polyline.len() < 2 {
                    v.push(format!("lane edge {k} polyline has fewer than 2 points"));
                }
                let arc: f64 = e.polyline.windows(2).map(|w| (w[1] - w[0]).norm()).sum();
                if (arc - e.length).abs() > 1e-9 * arc.max(1.0) {
                    v.push(format!("lane edge {k} length {} differs from arc length {arc}", e.length));
                }
            }
            for (k, node) in lg.nodes.iter().enumerate() {
                if node.members.is_empty() {
                    v.push(format!("lane node {k} has no members"));
                }
            }
        }
        v
    }
}

/// Builds every layer. A missing lane graph leaves the segment layer empty;
/// a missing catalog leaves classes unlabeled.
pub fn assemble(
    map: &ObjectMap,
    lane_graph: Option<&LaneGraph>,
    catalog: Option<&ClassCatalog>,
    config: &HierarchyConfig,
    labeler: &dyn RelationLabeler,
) -> Result<HierarchicalGraph, HierarchyError> {
    config.validate().map_err(HierarchyError::Catalog)?;
    let dim = map
        .objects()
        .first()
        .map(|o| o.embedding().len())
        .or_else(|| catalog.and_then(ClassCatalog::dim))
        .unwrap_or(0);
    if let Some(d) = catalog.and_then(ClassCatalog::dim) {
        if d != dim {
            return Err(HierarchyError::Dimension { expected: dim, found: d });
        }
    }
    let classes: Vec<u16> = match catalog {
        Some(c) => classify_objects(map, c)?,
        None => vec![UNLABELED; map.len()],
    };
    let mut h = HierarchicalGraph::empty(*config, dim);
    h.catalog = catalog.cloned();
    h.point_cloud = build_point_cloud_layer(map.objects(), &classes, config.voxel);
    h.instances = map
        .objects()
        .iter()
        .zip(&classes)
        .map(|(o, &c)| InstanceNode::from_object(o, c))
        .collect::<Result<_, _>>()?;
    if let Some(lg) = lane_graph {
        h.segments = build_segment_layer(lg, config.node_radius);
        h.lane_graph = Some(lg.clone());
    }
    h.relink(labeler)?;
    Ok(h)
}

// ---------------------------------------------------------------------------
// Container
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
struct BlobRef {
    offset: u64,
    count: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct CatalogIndex {
    names: Vec<String>,
    colors: Vec<[u8; 3]>,
    embeddings: BlobRef,
}

#[derive(Debug, Serialize, Deserialize)]
struct PointCloudIndex {
    /// float32 x, y, z per point.
    points: BlobRef,
    /// u64 instance id per point.
    instances: BlobRef,
    /// u16 class id per point.
    classes: BlobRef,
}

#[derive(Debug, Serialize, Deserialize)]
struct Index {
    format: String,
    blob_file: String,
    blob_bytes: u64,
    config: HierarchyConfig,
    embedding_dim: usize,
    catalog: Option<CatalogIndex>,
    point_cloud: PointCloudIndex,
    lane_graph: Option<LaneGraph>,
    instances: Vec<InstanceNode>,
    /// float32 row-major, one row per instance.
    instance_embeddings: BlobRef,
    instance_edges: Vec<InstanceEdge>,
    segments: Vec<Segment>,
    instance_segments: Vec<(ObjectId, usize)>,
    environment: Vec<usize>,
}

/// Sidecar path holding the binary arrays of a container.
pub fn blob_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".blobs");
    path.with_file_name(name)
}

#[derive(Default)]
struct BlobWriter {
    bytes: Vec<u8>,
}

impl BlobWriter {
    fn f32s(&mut self, values: impl Iterator<Item = f32>) -> BlobRef {
        let offset = self.bytes.len() as u64;
        let mut count = 0;
        for v in values {
            self.bytes.extend_from_slice(&v.to_le_bytes());
            count += 1;
        }
        BlobRef { offset, count }
    }

    fn u64s(&mut self, values: impl Iterator<Item = u64>) -> BlobRef {
        let offset = self.bytes.len() as u64;
        let mut count = 0;
        for v in values {
            self.bytes.extend_from_slice(&v.to_le_bytes());
            count += 1;
        }
        BlobRef { offset, count }
    }

    fn u16s(&mut self, values: impl Iterator<Item = u16>) -> BlobRef {
        let offset = self.bytes.len() as u64;
        let mut count = 0;
        for v in values {
            self.bytes.extend_from_slice(&v.to_le_bytes());
            count += 1;
        }
        BlobRef { offset, count }
    }
}

struct BlobReader<'a> {
    bytes: &'a [u8],
}

impl BlobReader<'_> {
    fn slice(&self, r: BlobRef, width: u64) -> Result<&[u8], String> {
        let end = r.count.checked_mul(width).and_then(|n| n.checked_add(r.offset));
        match end {
            Some(end) if end <= self.bytes.len() as u64 => Ok(&self.bytes[r.offset as usize..end as usize]),
            _ => Err(format!("blob range {}+{}x{width} exceeds {} bytes", r.offset, r.count, self.bytes.len())),
        }
    }

    fn f32s(&self, r: BlobRef) -> Result<Vec<f32>, String> {
        Ok(self.slice(r, 4)?.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn u64s(&self, r: BlobRef) -> Result<Vec<u64>, String> {
        Ok(self.slice(r, 8)?.chunks_exact(8).map(|c| u64::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn u16s(&self, r: BlobRef) -> Result<Vec<u16>, String> {
        Ok(self.slice(r, 2)?.chunks_exact(2).map(|c| u16::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

fn rows(flat: Vec<f32>, width: usize, count: usize) -> Result<Vec<Vec<f32>>, String> {
    if flat.len() != width * count {
        return Err(format!("matrix of {} values is not {count}x{width}", flat.len()));
    }
    if width == 0 {
        return Ok(vec![Vec::new(); count]);
    }
    Ok(flat.chunks_exact(width).map(<[f32]>::to_vec).collect())
}

/// Writes the JSON index to `path` and the arrays to [`blob_path`].
pub fn save(h: &HierarchicalGraph, path: &Path) -> Result<(), HierarchyError> {
    let mut blobs = BlobWriter::default();
    let pc = &h.point_cloud;
    let point_cloud = PointCloudIndex {
        points: blobs.f32s(pc.points.iter().flat_map(|p| [p.x as f32, p.y as f32, p.z as f32])),
        instances: blobs.u64s(pc.instances.iter().copied()),
        classes: blobs.u16s(pc.classes.iter().copied()),
    };
    let instance_embeddings = blobs.f32s(h.instances.iter().flat_map(|n| n.embedding.iter().copied()));
    let catalog = h.catalog.as_ref().map(|c| CatalogIndex {
        names: c.names.clone(),
        colors: c.colors.clone(),
        embeddings: blobs.f32s(c.embeddings.iter().flatten().copied()),
    });
    let blob_file = blob_path(path);
    let index = Index {
        format: MAP_FORMAT.into(),
        blob_file: blob_file.file_name().unwrap().to_string_lossy().into_owned(),
        blob_bytes: blobs.bytes.len() as u64,
        config: h.config,
        embedding_dim: h.embedding_dim,
        catalog,
        point_cloud,
        lane_graph: h.lane_graph.clone(),
        instances: h.instances.clone(),
        instance_embeddings,
        instance_edges: h.instance_edges.clone(),
        segments: h.segments.clone(),
        instance_segments: h.instance_segments.clone(),
        environment: h.environment.clone(),
    };
    let json = serde_json::to_string_pretty(&index).expect("serializable") + "\n";
    let io = |p: &Path| {
        let p = p.to_path_buf();
        move |source| HierarchyError::Io { path: p, source }
    };
    fs::write(&blob_file, &blobs.bytes).map_err(io(&blob_file))?;
    fs::write(path, json).map_err(io(path))?;
    Ok(())
}

/// Reads a container written by [`save`]. Nothing is returned unless the
/// index and every blob range are intact.
pub fn load(path: &Path) -> Result<HierarchicalGraph, HierarchyError> {
    let parse = |reason: String| HierarchyError::Parse { path: path.to_path_buf(), reason };
    let text = fs::read_to_string(path).map_err(|source| HierarchyError::Io { path: path.to_path_buf(), source })?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| parse(e.to_string()))?;
    let found = value.get("format").and_then(|f| f.as_str()).unwrap_or("<none>");
    if found != MAP_FORMAT {
        return Err(HierarchyError::Version { expected: MAP_FORMAT.into(), found: found.into() });
    }
    let index: Index = serde_json::from_value(value).map_err(|e| parse(e.to_string()))?;
    let blob_file = path.with_file_name(&index.blob_file);
    let bytes = fs::read(&blob_file).map_err(|source| HierarchyError::Io { path: blob_file.clone(), source })?;
    if bytes.len() as u64 != index.blob_bytes {
        return Err(parse(format!("blob file holds {} bytes, index expects {}", bytes.len(), index.blob_bytes)));
    }
    let r = BlobReader { bytes: &bytes };

    let coords = r.f32s(index.point_cloud.points).map_err(parse)?;
    if coords.len() % 3 != 0 {
        return Err(parse("point array length is not a multiple of 3".into()));
    }
    let points: Vec<Point> = coords.chunks_exact(3).map(|c| Point::new(c[0] as f64, c[1] as f64, c[2] as f64)).collect();
    let point_cloud = PointCloudLayer {
        points,
        instances: r.u64s(index.point_cloud.instances).map_err(parse)?,
        classes: r.u16s(index.point_cloud.classes).map_err(parse)?,
    };
    let dim = index.embedding_dim;
    let embeddings = rows(r.f32s(index.instance_embeddings).map_err(parse)?, dim, index.instances.len()).map_err(parse)?;
    let mut instances = index.instances;
    for (n, e) in instances.iter_mut().zip(embeddings) {
        n.embedding = e;
    }
    let catalog = match index.catalog {
        None => None,
        Some(c) => {
            let flat = r.f32s(c.embeddings).map_err(parse)?;
            let width = if c.names.is_empty() { 0 } else { flat.len() / c.names.len() };
            Some(ClassCatalog { embeddings: rows(flat, width, c.names.len()).map_err(parse)?, names: c.names, colors: c.colors })
        }
    };
    Ok(HierarchicalGraph {
        config: index.config,
        embedding_dim: dim,
        catalog,
        point_cloud,
        lane_graph: index.lane_graph,
        instances,
        instance_edges: index.instance_edges,
        segments: index.segments,
        instance_segments: index.instance_segments,
        environment: index.environment,
    })
}
