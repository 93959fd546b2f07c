//! Lane graph extraction from driven trajectories.
//!
//! Every trajectory sample gets a local disfluency score from the angles
//! between the vectors to its neighbors within a radius. Samples on straight
//! road see only parallel / anti-parallel vectors and score 0; corners and
//! crossings score high. Ends of the trajectory see all neighbors on one side,
//! so the mean pairwise angle is near 0. High-disfluency samples are clustered
//! into junction nodes, low-mean-angle samples into breakpoint nodes, and the
//! trajectory between two nodes becomes an edge.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use fnv::FnvHashMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{dbscan, Point2, NOISE};
use crate::ingest::Pose;

#[derive(Debug, Error, PartialEq)]
pub enum LaneGraphError {
    #[error("trajectory has fewer than 2 distinct points")]
    DegenerateTrajectory,
    #[error("no lane nodes found on an open trajectory")]
    NoNodes,
    #[error("invalid lane graph configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Intersection,
    TIntersection,
    LIntersection,
    Breakpoint,
}

impl NodeKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            NodeKind::Intersection => "intersection",
            NodeKind::TIntersection => "t_intersection",
            NodeKind::LIntersection => "l_intersection",
            NodeKind::Breakpoint => "breakpoint",
        }
    }

    /// Junction kinds own a stretch of road in the segment layer.
    pub fn is_junction(&self) -> bool {
        !matches!(self, NodeKind::Breakpoint)
    }
}

impl std::str::FromStr for NodeKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "intersection" => Ok(NodeKind::Intersection),
            "t_intersection" => Ok(NodeKind::TIntersection),
            "l_intersection" => Ok(NodeKind::LIntersection),
            "breakpoint" => Ok(NodeKind::Breakpoint),
            other => Err(format!("unknown node kind {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaneNode {
    pub position: Point2,
    pub kind: NodeKind,
    /// Trajectory sample indices that produced this node.
    pub members: Vec<usize>,
    /// Whether the node came from the high-disfluency population.
    pub junction_candidate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaneEdge {
    pub a: usize,
    pub b: usize,
    pub polyline: Vec<Point2>,
    pub length: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LaneGraph {
    pub nodes: Vec<LaneNode>,
    pub edges: Vec<LaneEdge>,
}

impl LaneGraph {
    pub fn degree(&self, node: usize) -> usize {
        self.edges
            .iter()
            .map(|e| (e.a == node) as usize + (e.b == node) as usize)
            .sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DisfluencyConfig {
    /// Neighborhood radius, meters.
    pub radius: f64,
    /// Disfluency above which a sample is a junction candidate, radians.
    pub threshold: f64,
    /// Mean pairwise angle below which a sample is a breakpoint, radians.
    pub breakpoint_tolerance: f64,
    pub cluster_eps: f64,
    pub cluster_min_pts: usize,
    /// Samples within this distance of a node belong to it, meters.
    pub node_radius: f64,
    /// Consecutive samples further apart than this start a new pass.
    pub max_step: f64,
}

impl Default for DisfluencyConfig {
    fn default() -> Self {
        DisfluencyConfig {
            radius: 10.0,
            threshold: 0.3,
            breakpoint_tolerance: 0.5,
            cluster_eps: 10.0,
            cluster_min_pts: 3,
            node_radius: 10.0,
            max_step: 5.0,
        }
    }
}

impl DisfluencyConfig {
    pub fn validate(&self) -> Result<(), LaneGraphError> {
        let positive = [
            ("radius", self.radius),
            ("threshold", self.threshold),
            ("breakpoint_tolerance", self.breakpoint_tolerance),
            ("cluster_eps", self.cluster_eps),
            ("node_radius", self.node_radius),
            ("max_step", self.max_step),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(LaneGraphError::Config(format!("{name} must be positive")));
            }
        }
        if self.cluster_min_pts == 0 {
            return Err(LaneGraphError::Config("cluster_min_pts must be positive".into()));
        }
        Ok(())
    }
}

/// Drops the vertical axis and collapses consecutive samples closer than 1 cm.
pub fn project_trajectory(poses: &[Pose]) -> Result<Vec<Point2>, LaneGraphError> {
    let mut out: Vec<Point2> = Vec::with_capacity(poses.len());
    for p in poses {
        let t = p.translation();
        let q = Point2::new(t.x, t.y);
        if out.last().is_none_or(|last| (q - last).norm() >= 0.01) {
            out.push(q);
        }
    }
    if out.len() < 2 {
        return Err(LaneGraphError::DegenerateTrajectory);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Disfluency {
    /// Mean over neighbor-vector pairs of the angle folded onto [0, π/2].
    pub lambda: f64,
    /// Mean pairwise angle, radians.
    pub mean_theta: f64,
    pub neighbors: usize,
}

fn disfluency_of(vectors: &[nalgebra::Vector2<f64>]) -> Option<Disfluency> {
    if vectors.len() < 2 {
        return None;
    }
    let (mut folded, mut theta_sum, mut pairs) = (0.0, 0.0, 0usize);
    for i in 0..vectors.len() {
        for j in i + 1..vectors.len() {
            let (a, b) = (&vectors[i], &vectors[j]);
            let cos = (a.dot(b) / (a.norm() * b.norm())).clamp(-1.0, 1.0);
            let theta = cos.acos();
            folded += theta.abs().min((theta - PI).abs());
            theta_sum += theta;
            pairs += 1;
        }
    }
    Some(Disfluency {
        lambda: folded / pairs as f64,
        mean_theta: theta_sum / pairs as f64,
        neighbors: vectors.len(),
    })
}

/// Disfluency of sample `n`, computed by scanning every sample. `None` when
/// fewer than two neighbors lie within the radius. Coincident samples give no
/// direction and are not neighbors.
pub fn local_disfluency(pts: &[Point2], n: usize, cfg: &DisfluencyConfig) -> Option<Disfluency> {
    let vectors: Vec<_> = pts
        .iter()
        .enumerate()
        .filter(|&(m, _)| m != n)
        .map(|(_, p)| p - pts[n])
        .filter(|v| v.norm() < cfg.radius && v.norm() > 0.0)
        .collect();
    disfluency_of(&vectors)
}

/// Grid over trajectory samples for radius queries.
struct SampleGrid {
    cell: f64,
    cells: FnvHashMap<(i64, i64), Vec<usize>>,
}

impl SampleGrid {
    fn new(pts: &[Point2], cell: f64) -> Self {
        let mut cells: FnvHashMap<(i64, i64), Vec<usize>> = FnvHashMap::default();
        for (i, p) in pts.iter().enumerate() {
            cells.entry(Self::key(p, cell)).or_default().push(i);
        }
        SampleGrid { cell, cells }
    }

    fn key(p: &Point2, cell: f64) -> (i64, i64) {
        ((p.x / cell).floor() as i64, (p.y / cell).floor() as i64)
    }

    /// Neighbor vectors of `pts[n]`, ordered by sample index.
    fn vectors(&self, pts: &[Point2], n: usize, radius: f64) -> Vec<nalgebra::Vector2<f64>> {
        let (cx, cy) = Self::key(&pts[n], self.cell);
        let mut idx = Vec::new();
        for dx in -1..=1 {
            for dy in -1..=1 {
                if let Some(members) = self.cells.get(&(cx + dx, cy + dy)) {
                    idx.extend(members.iter().copied().filter(|&m| m != n));
                }
            }
        }
        idx.sort_unstable();
        idx.iter()
            .map(|&m| pts[m] - pts[n])
            .filter(|v| v.norm() < radius && v.norm() > 0.0)
            .collect()
    }
}

/// Disfluency of every sample.
pub fn disfluency_profile(pts: &[Point2], cfg: &DisfluencyConfig) -> Vec<Option<Disfluency>> {
    use rayon::prelude::*;
    let grid = SampleGrid::new(pts, cfg.radius);
    (0..pts.len())
        .into_par_iter()
        .map(|n| disfluency_of(&grid.vectors(pts, n, cfg.radius)))
        .collect()
}

fn cluster_nodes(pts: &[Point2], members: &[usize], eps: f64, min_pts: usize, junction: bool) -> Vec<LaneNode> {
    let coords: Vec<[f64; 2]> = members.iter().map(|&i| [pts[i].x, pts[i].y]).collect();
    let labels = dbscan(&coords, eps, min_pts);
    let mut groups: BTreeMap<i32, Vec<usize>> = BTreeMap::new();
    for (&i, &l) in members.iter().zip(&labels) {
        if l != NOISE {
            groups.entry(l).or_default().push(i);
        }
    }
    groups
        .into_values()
        .map(|m| {
            let sum = m.iter().fold(nalgebra::Vector2::zeros(), |acc, &i| acc + pts[i].coords);
            LaneNode {
                position: Point2::from(sum / m.len() as f64),
                kind: if junction { NodeKind::LIntersection } else { NodeKind::Breakpoint },
                members: m,
                junction_candidate: junction,
            }
        })
        .collect()
}

/// Junction candidates first (clusters of high-disfluency samples, noise
/// dropped), then breakpoints (samples whose mean pairwise angle is below the
/// tolerance, grouped by distance). Kinds are provisional until
/// [`build_lane_graph`] knows node degrees.
pub fn detect_nodes(pts: &[Point2], cfg: &DisfluencyConfig) -> Vec<LaneNode> {
    let profile = disfluency_profile(pts, cfg);
    let high: Vec<usize> = (0..pts.len())
        .filter(|&i| profile[i].is_some_and(|d| d.lambda > cfg.threshold))
        .collect();
    let ends: Vec<usize> = (0..pts.len())
        .filter(|&i| profile[i].is_some_and(|d| d.mean_theta < cfg.breakpoint_tolerance))
        .collect();
    let mut nodes = cluster_nodes(pts, &high, cfg.cluster_eps, cfg.cluster_min_pts, true);
    // A trajectory end is a single sample; every candidate is kept.
    nodes.extend(cluster_nodes(pts, &ends, cfg.cluster_eps, 1, false));
    nodes
}

fn arc_length(polyline: &[Point2]) -> f64 {
    polyline.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
}

fn push_distinct(line: &mut Vec<Point2>, p: Point2) {
    if line.last() != Some(&p) {
        line.push(p);
    }
}

/// Index ranges of passes: maximal runs without a step longer than `max_step`.
fn passes(pts: &[Point2], max_step: f64) -> Vec<std::ops::Range<usize>> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..pts.len() {
        if (pts[i] - pts[i - 1]).norm() > max_step {
            out.push(start..i);
            start = i;
        }
    }
    out.push(start..pts.len());
    out
}

/// Nearest node within `node_radius` of each sample; ties go to the lower id.
fn ownership(pts: &[Point2], nodes: &[LaneNode], node_radius: f64) -> Vec<Option<usize>> {
    pts.iter()
        .map(|p| {
            nodes
                .iter()
                .enumerate()
                .map(|(k, n)| (k, (n.position - p).norm()))
                .filter(|&(_, d)| d <= node_radius)
                .fold(None, |best: Option<(usize, f64)>, cur| match best {
                    Some(b) if b.1 <= cur.1 => Some(b),
                    _ => Some(cur),
                })
                .map(|(k, _)| k)
        })
        .collect()
}

/// Links consecutive node visits along each pass into edges and assigns final
/// node kinds.
///
/// A sample belongs to its nearest node within the node radius, otherwise to
/// open road. Each time a pass moves from one node's samples to another's, the
/// stretch between the two (anchored at the samples closest to each node and
/// capped with the node positions) becomes an edge. Repeated traversals of the
/// same node pair keep the shortest polyline. Kinds: degree ≥ 4 intersection,
/// 3 T-intersection, 2 on a junction candidate L-intersection, otherwise
/// breakpoint.
pub fn build_lane_graph(pts: &[Point2], nodes: Vec<LaneNode>, cfg: &DisfluencyConfig) -> Result<LaneGraph, LaneGraphError> {
    let mut nodes = nodes;
    if nodes.is_empty() {
        return closed_loop(pts, cfg);
    }
    let owner = ownership(pts, &nodes, cfg.node_radius);
    let closest_in = |range: std::ops::Range<usize>, node: usize| -> usize {
        range
            .min_by(|&i, &j| {
                let di = (pts[i] - nodes[node].position).norm();
                let dj = (pts[j] - nodes[node].position).norm();
                di.total_cmp(&dj)
            })
            .unwrap()
    };

    let mut best: BTreeMap<(usize, usize), LaneEdge> = BTreeMap::new();
    for pass in passes(pts, cfg.max_step) {
        // Owned runs within the pass: (node, start, end exclusive).
        let mut runs: Vec<(usize, usize, usize)> = Vec::new();
        for i in pass {
            let Some(node) = owner[i] else { continue };
            match runs.last_mut() {
                Some(run) if run.0 == node && run.2 == i => run.2 = i + 1,
                _ => runs.push((node, i, i + 1)),
            }
        }
        for pair in runs.windows(2) {
            let ((na, sa, ea), (nb, sb, eb)) = (pair[0], pair[1]);
            if na == nb {
                continue;
            }
            let ia = closest_in(sa..ea, na);
            let ib = closest_in(sb..eb, nb);
            let mut polyline = vec![nodes[na].position];
            for p in &pts[ia..=ib] {
                push_distinct(&mut polyline, *p);
            }
            push_distinct(&mut polyline, nodes[nb].position);
            if polyline.len() < 2 {
                continue;
            }
            let (a, b, polyline) = if na < nb {
                (na, nb, polyline)
            } else {
                (nb, na, polyline.into_iter().rev().collect())
            };
            let edge = LaneEdge { a, b, length: arc_length(&polyline), polyline };
            match best.get(&(a, b)) {
                Some(existing) if existing.length <= edge.length => {}
                _ => {
                    best.insert((a, b), edge);
                }
            }
        }
    }
    let mut graph = LaneGraph { nodes: Vec::new(), edges: best.into_values().collect() };
    let degrees: Vec<usize> = (0..nodes.len()).map(|k| graph.degree(k)).collect();
    for (node, degree) in nodes.iter_mut().zip(degrees) {
        node.kind = match degree {
            d if d >= 4 => NodeKind::Intersection,
            3 => NodeKind::TIntersection,
            2 if node.junction_candidate => NodeKind::LIntersection,
            _ => NodeKind::Breakpoint,
        };
    }
    graph.nodes = nodes;
    Ok(graph)
}

/// A trajectory without nodes is acceptable only when it closes on itself; it
/// becomes one loop edge on a node at the first sample.
fn closed_loop(pts: &[Point2], cfg: &DisfluencyConfig) -> Result<LaneGraph, LaneGraphError> {
    let (first, last) = (pts[0], pts[pts.len() - 1]);
    if passes(pts, cfg.max_step).len() != 1 || (last - first).norm() > cfg.max_step {
        return Err(LaneGraphError::NoNodes);
    }
    let mut polyline = pts.to_vec();
    push_distinct(&mut polyline, first);
    let node = LaneNode { position: first, kind: NodeKind::Breakpoint, members: vec![0], junction_candidate: false };
    Ok(LaneGraph {
        nodes: vec![node],
        edges: vec![LaneEdge { a: 0, b: 0, length: arc_length(&polyline), polyline }],
    })
}

/// Trajectory → nodes → graph.
pub fn extract_lane_graph(poses: &[Pose], cfg: &DisfluencyConfig) -> Result<LaneGraph, LaneGraphError> {
    cfg.validate()?;
    let pts = project_trajectory(poses)?;
    let nodes = detect_nodes(&pts, cfg);
    build_lane_graph(&pts, nodes, cfg)
}
