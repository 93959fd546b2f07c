//! Read and update surfaces of a hierarchical graph: retrieval, semantic
//! segmentation, localization, lane-graph planning and map patches.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::{LabeledCloud, UNLABELED};
use crate::geom::{self, AxisAlignedBox, Point, WeightedGraph};
use crate::hierarchy::{downsample_instance, unit_f32, ClassCatalog, HierarchicalGraph, HierarchyError, RelationLabeler, SegmentKind};
use crate::object_map::ObjectId;

#[derive(Debug, Error)]
pub enum QueryError {
    #[error("query has dimension {found}, map embeddings have {expected}")]
    Dimension { expected: usize, found: usize },
    #[error("query embedding is zero")]
    ZeroQuery,
    #[error("unknown instance {0}")]
    UnknownInstance(ObjectId),
    #[error("unknown endpoint {0}")]
    UnknownEndpoint(String),
    #[error("map has no lane graph")]
    NoLaneGraph,
    #[error("no path")]
    NoPath,
    #[error("invalid patch: {0}")]
    Patch(String),
    #[error(transparent)]
    Hierarchy(#[from] HierarchyError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalHit {
    pub id: ObjectId,
    pub score: f64,
    pub caption: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub k: usize,
    pub hits: Vec<RetrievalHit>,
}

impl RetrievalResult {
    pub fn ids(&self) -> Vec<ObjectId> {
        self.hits.iter().map(|h| h.id).collect()
    }
}

/// Top-`k` instances by cosine to the query; equal scores go to the lower id.
pub fn retrieve<T: Copy + Into<f64>>(h: &HierarchicalGraph, query: &[T], k: usize) -> Result<RetrievalResult, QueryError> {
    if h.instances.is_empty() {
        return Ok(RetrievalResult { k, hits: Vec::new() });
    }
    if query.len() != h.embedding_dim {
        return Err(QueryError::Dimension { expected: h.embedding_dim, found: query.len() });
    }
    let q = unit_f64(query)?;
    let mut hits: Vec<RetrievalHit> = h
        .instances
        .iter()
        .map(|n| {
            let score = geom::cosine_similarity(&q, &n.embedding).map_err(|_| QueryError::ZeroQuery)?;
            Ok(RetrievalHit { id: n.id, score: score.clamp(-1.0, 1.0), caption: n.caption.clone() })
        })
        .collect::<Result<_, QueryError>>()?;
    hits.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.id.cmp(&b.id)));
    hits.truncate(k);
    Ok(RetrievalResult { k, hits })
}

fn unit_f64<T: Copy + Into<f64>>(v: &[T]) -> Result<Vec<f64>, QueryError> {
    let mut q: Vec<f64> = v.iter().map(|&x| x.into()).collect();
    geom::normalize(&mut q).map_err(|_| QueryError::ZeroQuery)?;
    Ok(q)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Candidate {
    pub id: ObjectId,
    pub score: f64,
    pub caption: String,
    pub class: Option<String>,
    pub centroid: [f64; 3],
    pub aabb: AxisAlignedBox,
}

/// Retrieval candidates with their captions and geometry, for reranking
/// outside this crate.
pub fn export_candidates<T: Copy + Into<f64>>(h: &HierarchicalGraph, query: &[T], k: usize) -> Result<Vec<Candidate>, QueryError> {
    let result = retrieve(h, query, k)?;
    Ok(result
        .hits
        .into_iter()
        .map(|hit| {
            let n = h.instance(hit.id).expect("retrieved from the graph");
            Candidate {
                id: hit.id,
                score: hit.score,
                caption: hit.caption,
                class: h.catalog.as_ref().and_then(|c| c.names().get(n.class_id as usize).cloned()),
                centroid: [n.centroid.x, n.centroid.y, n.centroid.z],
                aabb: n.aabb,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segmentation {
    pub cloud: LabeledCloud,
    /// Points per catalog class, in catalog order.
    pub class_counts: Vec<u64>,
}

/// Labels every point of the point cloud layer with its instance's class
/// under `catalog`.
pub fn semantic_segmentation(h: &HierarchicalGraph, catalog: &ClassCatalog) -> Result<Segmentation, QueryError> {
    let classes: Vec<u16> = h.instances.iter().map(|n| catalog.classify(&n.embedding)).collect::<Result<_, _>>()?;
    let labels: Vec<u16> = h
        .point_cloud
        .instances
        .iter()
        .map(|id| {
            let i = h.instances.binary_search_by_key(id, |n| n.id).expect("point owner exists");
            classes[i]
        })
        .collect();
    let mut class_counts = vec![0u64; catalog.len()];
    for &l in &labels {
        if l != UNLABELED {
            class_counts[l as usize] += 1;
        }
    }
    let cloud = LabeledCloud {
        classes: catalog.names().to_vec(),
        colors: catalog.colors().to_vec(),
        points: h.point_cloud.points.clone(),
        labels,
    };
    Ok(Segmentation { cloud, class_counts })
}

/// An instance linked to a segment satisfies `(relation, class)` when it has
/// an instance-layer edge to an instance of `class` and the edge's label,
/// read from its side, is `relation`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationConstraint {
    pub relation: String,
    pub class_id: u16,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocateHit {
    pub segment: usize,
    pub kind: SegmentKind,
    pub score: usize,
    pub centroid: [f64; 2],
}

/// Segments of `kind` (all kinds when `None`) scored by the number of
/// linked instances satisfying each constraint, summed over constraints.
/// Descending score, ties to the lower id.
pub fn locate(h: &HierarchicalGraph, kind: Option<SegmentKind>, constraints: &[RelationConstraint]) -> Vec<LocateHit> {
    let class_of = |id: ObjectId| h.instance(id).map(|n| n.class_id);
    let satisfies = |i: ObjectId, c: &RelationConstraint| {
        h.instance_edges.iter().any(|e| {
            let (other, label) = if e.a == i {
                (e.b, e.relation.as_str())
            } else if e.b == i {
                (e.a, crate::hierarchy::inverse_relation(&e.relation))
            } else {
                return false;
            };
            label == c.relation && class_of(other) == Some(c.class_id)
        })
    };
    let mut hits: Vec<LocateHit> = h
        .segments
        .iter()
        .filter(|s| kind.is_none_or(|k| s.kind == k))
        .map(|s| {
            let linked: Vec<ObjectId> = h.instance_segments.iter().filter(|l| l.1 == s.id).map(|l| l.0).collect();
            let score = constraints.iter().map(|c| linked.iter().filter(|&&i| satisfies(i, c)).count()).sum();
            LocateHit { segment: s.id, kind: s.kind, score, centroid: [s.centroid.x, s.centroid.y] }
        })
        .collect();
    hits.sort_by(|a, b| b.score.cmp(&a.score).then(a.segment.cmp(&b.segment)));
    hits
}

/// A planning endpoint, written `S<id>` for a segment or `N<id>` for a lane
/// node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Endpoint {
    Segment(usize),
    Node(usize),
}

impl FromStr for Endpoint {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || format!("expected S<id> or N<id>, got {s:?}");
        let (tag, rest) = s.split_at_checked(1).ok_or_else(bad)?;
        let id: usize = rest.parse().map_err(|_| bad())?;
        match tag {
            "S" | "s" => Ok(Endpoint::Segment(id)),
            "N" | "n" => Ok(Endpoint::Node(id)),
            _ => Err(bad()),
        }
    }
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Endpoint::Segment(id) => write!(f, "S{id}"),
            Endpoint::Node(id) => write!(f, "N{id}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannedPath {
    pub nodes: Vec<usize>,
    pub length: f64,
}

/// Lane nodes an endpoint may start or end at.
fn endpoint_nodes(h: &HierarchicalGraph, e: Endpoint) -> Result<Vec<usize>, QueryError> {
    let lg = h.lane_graph.as_ref().ok_or(QueryError::NoLaneGraph)?;
    let unknown = || QueryError::UnknownEndpoint(e.to_string());
    match e {
        Endpoint::Node(k) if k < lg.nodes.len() => Ok(vec![k]),
        Endpoint::Segment(s) => {
            let seg = h.segments.get(s).ok_or_else(unknown)?;
            match (seg.node, seg.edge) {
                (Some(k), _) => Ok(vec![k]),
                (None, Some(k)) => {
                    let edge = &lg.edges[k];
                    Ok(if edge.a == edge.b { vec![edge.a] } else { vec![edge.a, edge.b] })
                }
                (None, None) => Err(unknown()),
            }
        }
        _ => Err(unknown()),
    }
}

/// Shortest lane-graph route weighted by polyline length. A straight
/// segment stands for whichever of its two end nodes gives the shorter
/// route; equal lengths go to the lexicographically smaller node sequence.
pub fn plan_path(h: &HierarchicalGraph, start: Endpoint, goal: Endpoint) -> Result<PlannedPath, QueryError> {
    let lg = h.lane_graph.as_ref().ok_or(QueryError::NoLaneGraph)?;
    let (from, to) = (endpoint_nodes(h, start)?, endpoint_nodes(h, goal)?);
    let mut g = WeightedGraph::new(lg.nodes.len());
    for e in &lg.edges {
        if e.a != e.b {
            g.add_edge(e.a, e.b, e.length).map_err(HierarchyError::from)?;
        }
    }
    let mut best: Option<PlannedPath> = None;
    for &s in &from {
        for &t in &to {
            let Some(p) = geom::shortest_path(&g, s, t).map_err(HierarchyError::from)? else {
                continue;
            };
            let better = best.as_ref().is_none_or(|b| p.cost < b.length || (p.cost == b.length && p.nodes < b.nodes));
            if better {
                best = Some(PlannedPath { nodes: p.nodes, length: p.cost });
            }
        }
    }
    best.ok_or(QueryError::NoPath)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum MapPatch {
    Remove { target: ObjectId },
    ReplaceCaption { target: ObjectId, caption: String, embedding: Vec<f64> },
    ReplacePoints { target: ObjectId, points: Vec<[f64; 3]> },
}

impl MapPatch {
    pub fn target(&self) -> ObjectId {
        match self {
            MapPatch::Remove { target } | MapPatch::ReplaceCaption { target, .. } | MapPatch::ReplacePoints { target, .. } => *target,
        }
    }
}

/// Applies `patch` with the graph's own relation labeler settings.
pub fn apply_patch(h: &HierarchicalGraph, patch: &MapPatch) -> Result<HierarchicalGraph, QueryError> {
    let labeler = h.config.labeler;
    apply_patch_with(h, patch, &labeler)
}

/// Returns a patched copy of `h`; `h` itself is left untouched. The instance
/// layer and the instance-segment links are rebuilt afterwards.
pub fn apply_patch_with(h: &HierarchicalGraph, patch: &MapPatch, labeler: &dyn RelationLabeler) -> Result<HierarchicalGraph, QueryError> {
    let target = patch.target();
    let idx = h.instances.binary_search_by_key(&target, |n| n.id).map_err(|_| QueryError::UnknownInstance(target))?;
    let mut g = h.clone();
    match patch {
        MapPatch::Remove { .. } => {
            g.instances.remove(idx);
            retain_points(&mut g, |id| id != target);
        }
        MapPatch::ReplaceCaption { caption, embedding, .. } => {
            if embedding.len() != g.embedding_dim {
                return Err(QueryError::Dimension { expected: g.embedding_dim, found: embedding.len() });
            }
            let embedding = unit_f32(embedding).map_err(|_| QueryError::ZeroQuery)?;
            let class_id = match &g.catalog {
                Some(c) => c.classify(&embedding)?,
                None => UNLABELED,
            };
            let node = &mut g.instances[idx];
            node.caption = caption.clone();
            node.embedding = embedding;
            node.class_id = class_id;
            let pc = &mut g.point_cloud;
            for (owner, class) in pc.instances.iter().zip(pc.classes.iter_mut()) {
                if *owner == target {
                    *class = class_id;
                }
            }
        }
        MapPatch::ReplacePoints { points, .. } => {
            let points: Vec<Point> = points.iter().map(|p| Point::new(p[0], p[1], p[2])).collect();
            let aabb = AxisAlignedBox::from_points(&points).ok_or_else(|| QueryError::Patch("replacement point set is empty".into()))?;
            let node = &mut g.instances[idx];
            node.aabb = aabb;
            node.centroid = geom::centroid(&points).expect("non-empty");
            let class_id = node.class_id;
            retain_points(&mut g, |id| id != target);
            let pc = &mut g.point_cloud;
            let fresh = downsample_instance(&points, g.config.voxel);
            pc.instances.extend(std::iter::repeat_n(target, fresh.len()));
            pc.classes.extend(std::iter::repeat_n(class_id, fresh.len()));
            pc.points.extend(fresh);
            sort_points_by_instance(&mut g);
        }
    }
    g.relink(labeler)?;
    Ok(g)
}

fn retain_points(g: &mut HierarchicalGraph, keep: impl Fn(ObjectId) -> bool) {
    let pc = &mut g.point_cloud;
    let mask: Vec<bool> = pc.instances.iter().map(|&id| keep(id)).collect();
    let mut it = mask.iter();
    pc.points.retain(|_| *it.next().unwrap());
    let mut it = mask.iter();
    pc.classes.retain(|_| *it.next().unwrap());
    pc.instances.retain(|&id| keep(id));
}

/// Restores instance-id grouping with each instance's points in their
/// original order.
fn sort_points_by_instance(g: &mut HierarchicalGraph) {
    let pc = &mut g.point_cloud;
    let mut order: Vec<usize> = (0..pc.points.len()).collect();
    order.sort_by_key(|&i| pc.instances[i]);
    pc.points = order.iter().map(|&i| pc.points[i]).collect();
    pc.instances = order.iter().map(|&i| pc.instances[i]).collect();
    pc.classes = order.iter().map(|&i| pc.classes[i]).collect();
}

/// Ids that are in `before` but not in `after`.
pub fn removed_ids(before: &HierarchicalGraph, after: &HierarchicalGraph) -> BTreeSet<ObjectId> {
    let kept: BTreeSet<ObjectId> = after.instances.iter().map(|n| n.id).collect();
    before.instances.iter().map(|n| n.id).filter(|id| !kept.contains(id)).collect()
}
