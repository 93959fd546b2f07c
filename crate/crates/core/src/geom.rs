//! Geometry and graph primitives shared by every pipeline stage.
//!
//! Everything in here is a pure function of its inputs and breaks ties
//! deterministically, so maps built from identical inputs are identical.

use std::collections::{BTreeMap, VecDeque};

use fnv::FnvHashMap;
use nalgebra::{Point3, Vector3};
use petgraph::graph::{NodeIndex, UnGraph};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A 3D point in meters.
pub type Point = Point3<f64>;

/// A 2D point in meters (ground plane).
pub type Point2 = nalgebra::Point2<f64>;

/// DBSCAN label for points that belong to no cluster.
pub const NOISE: i32 = -1;

/// Per-axis floor applied to box extents before computing volumes (1 cm).
pub const MIN_BOX_EXTENT: f64 = 0.01;

#[derive(Debug, Error, PartialEq)]
pub enum GeomError {
    #[error("vector has zero norm")]
    ZeroNorm,
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("invalid edge ({u}, {v}): {reason}")]
    InvalidEdge { u: usize, v: usize, reason: &'static str },
    #[error("node {0} does not exist")]
    UnknownNode(usize),
    #[error("graph is disconnected; components: {components:?}")]
    Disconnected { components: Vec<Vec<usize>> },
}

// ---------------------------------------------------------------------------
// DBSCAN
// ---------------------------------------------------------------------------

/// Uniform hash grid with cell size `eps`, used for radius queries.
struct Grid<const D: usize> {
    cell: f64,
    cells: FnvHashMap<[i64; D], Vec<usize>>,
}

impl<const D: usize> Grid<D> {
    fn new(points: &[[f64; D]], cell: f64) -> Self {
        let mut cells: FnvHashMap<[i64; D], Vec<usize>> = FnvHashMap::default();
        for (i, p) in points.iter().enumerate() {
            cells.entry(Self::key(p, cell)).or_default().push(i);
        }
        Grid { cell, cells }
    }

    fn key(p: &[f64; D], cell: f64) -> [i64; D] {
        let mut k = [0i64; D];
        for (k, x) in k.iter_mut().zip(p) {
            *k = (x / cell).floor() as i64;
        }
        k
    }

    /// Indices of all points within `eps` (inclusive) of `points[i]`, itself included.
    fn region(&self, points: &[[f64; D]], i: usize, eps: f64, out: &mut Vec<usize>) {
        out.clear();
        let eps2 = eps * eps;
        let center = Self::key(&points[i], self.cell);
        let p = &points[i];
        for offset in 0..3usize.pow(D as u32) {
            let mut key = center;
            let mut rem = offset;
            for k in key.iter_mut() {
                *k += (rem % 3) as i64 - 1;
                rem /= 3;
            }
            if let Some(members) = self.cells.get(&key) {
                for &j in members {
                    if dist2(p, &points[j]) <= eps2 {
                        out.push(j);
                    }
                }
            }
        }
    }
}

fn dist2<const D: usize>(a: &[f64; D], b: &[f64; D]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Density-based clustering.
///
/// A point is core when at least `min_pts` points (itself included) lie within
/// `eps` of it. Clusters are the eps-connected components of core points plus
/// the border points they reach. Cluster ids are contiguous from 0 in order of
/// each cluster's lowest-index core point; a border point reachable from several
/// clusters takes the lowest id. Noise is labeled [`NOISE`].
pub fn dbscan<const D: usize>(points: &[[f64; D]], eps: f64, min_pts: usize) -> Vec<i32> {
    assert!(eps > 0.0, "dbscan: eps must be positive");
    assert!(min_pts >= 1, "dbscan: min_pts must be at least 1");

    const UNVISITED: i32 = -2;
    let n = points.len();
    let mut labels = vec![UNVISITED; n];
    let mut visited = vec![false; n];
    if n == 0 {
        return labels;
    }
    let grid = Grid::new(points, eps);
    let mut region = Vec::new();
    let mut queue = VecDeque::new();
    let mut next_cluster = 0;

    for i in 0..n {
        if visited[i] {
            continue;
        }
        visited[i] = true;
        grid.region(points, i, eps, &mut region);
        if region.len() < min_pts {
            labels[i] = NOISE;
            continue;
        }
        let cluster = next_cluster;
        next_cluster += 1;
        labels[i] = cluster;
        queue.extend(region.iter().copied());
        while let Some(q) = queue.pop_front() {
            if labels[q] == NOISE || labels[q] == UNVISITED {
                labels[q] = cluster;
            }
            if visited[q] {
                continue;
            }
            visited[q] = true;
            grid.region(points, q, eps, &mut region);
            if region.len() >= min_pts {
                queue.extend(region.iter().copied());
            }
        }
    }
    labels
}

/// Convenience wrapper over [`dbscan`] for 3D points.
pub fn dbscan_points(points: &[Point], eps: f64, min_pts: usize) -> Vec<i32> {
    let raw: Vec<[f64; 3]> = points.iter().map(|p| [p.x, p.y, p.z]).collect();
    dbscan(&raw, eps, min_pts)
}

// ---------------------------------------------------------------------------
// Boxes
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisAlignedBox {
    pub min: Point,
    pub max: Point,
}

impl AxisAlignedBox {
    pub fn new(min: Point, max: Point) -> Self {
        debug_assert!(min.x <= max.x && min.y <= max.y && min.z <= max.z);
        AxisAlignedBox { min, max }
    }

    /// Tight box around `points`, `None` for an empty slice.
    pub fn from_points(points: &[Point]) -> Option<Self> {
        let first = points.first()?;
        let (mut min, mut max) = (*first, *first);
        for p in &points[1..] {
            min = min.inf(p);
            max = max.sup(p);
        }
        Some(AxisAlignedBox { min, max })
    }

    pub fn extent(&self) -> Vector3<f64> {
        self.max - self.min
    }

    pub fn center(&self) -> Point {
        nalgebra::center(&self.min, &self.max)
    }

    /// The box with every axis widened (about its center) to at least [`MIN_BOX_EXTENT`].
    pub fn floored(&self) -> Self {
        let mut out = *self;
        for axis in 0..3 {
            let extent = self.max[axis] - self.min[axis];
            if extent < MIN_BOX_EXTENT {
                let mid = 0.5 * (self.max[axis] + self.min[axis]);
                out.min[axis] = mid - 0.5 * MIN_BOX_EXTENT;
                out.max[axis] = mid + 0.5 * MIN_BOX_EXTENT;
            }
        }
        out
    }

    pub fn volume(&self) -> f64 {
        let e = self.extent();
        e.x * e.y * e.z
    }

    fn intersection_volume(&self, other: &Self) -> f64 {
        (0..3)
            .map(|a| (self.max[a].min(other.max[a]) - self.min[a].max(other.min[a])).max(0.0))
            .product()
    }

    /// Euclidean gap between the boxes, 0 when they touch or overlap.
    pub fn gap(&self, other: &Self) -> f64 {
        let mut d2 = 0.0;
        for a in 0..3 {
            let g = (other.min[a] - self.max[a]).max(self.min[a] - other.max[a]).max(0.0);
            d2 += g * g;
        }
        d2.sqrt()
    }

    /// Whether the x/y footprints overlap.
    pub fn overlaps_horizontally(&self, other: &Self) -> bool {
        (0..2).all(|a| self.min[a] <= other.max[a] && other.min[a] <= self.max[a])
    }
}

/// Intersection over union of two boxes after the 1 cm per-axis floor.
pub fn aabb_iou(a: &AxisAlignedBox, b: &AxisAlignedBox) -> f64 {
    let (a, b) = (a.floored(), b.floored());
    let inter = a.intersection_volume(&b);
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.volume() + b.volume() - inter;
    (inter / union).clamp(0.0, 1.0)
}

// ---------------------------------------------------------------------------
// Vectors
// ---------------------------------------------------------------------------

/// Cosine of the angle between `u` and `v`, clamped to [-1, 1].
pub fn cosine_similarity<T, U>(u: &[T], v: &[U]) -> Result<f64, GeomError>
where
    T: Copy + Into<f64>,
    U: Copy + Into<f64>,
{
    if u.len() != v.len() {
        return Err(GeomError::DimensionMismatch(u.len(), v.len()));
    }
    let (mut dot, mut nu, mut nv) = (0.0f64, 0.0f64, 0.0f64);
    for (&a, &b) in u.iter().zip(v) {
        let (a, b): (f64, f64) = (a.into(), b.into());
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        return Err(GeomError::ZeroNorm);
    }
    Ok((dot / (nu * nv).sqrt()).clamp(-1.0, 1.0))
}

/// Scales `v` to unit length. Vectors already unit to within a few ulps are
/// left untouched so that normalization is idempotent bit-for-bit.
pub fn normalize(v: &mut [f64]) -> Result<(), GeomError> {
    let norm2: f64 = v.iter().map(|x| x * x).sum();
    if norm2 == 0.0 || !norm2.is_finite() {
        return Err(GeomError::ZeroNorm);
    }
    let norm = norm2.sqrt();
    if (norm - 1.0).abs() <= 4.0 * f64::EPSILON {
        return Ok(());
    }
    v.iter_mut().for_each(|x| *x /= norm);
    Ok(())
}

// ---------------------------------------------------------------------------
// Point sets
// ---------------------------------------------------------------------------

pub fn centroid(points: &[Point]) -> Option<Point> {
    if points.is_empty() {
        return None;
    }
    let sum = points.iter().fold(Vector3::zeros(), |acc, p| acc + p.coords);
    Some(Point::from(sum / points.len() as f64))
}

/// One centroid per occupied voxel, in ascending (x, y, z) voxel index order.
pub fn voxel_downsample(points: &[Point], voxel: f64) -> Vec<Point> {
    assert!(voxel > 0.0, "voxel size must be positive");
    let mut cells: BTreeMap<[i64; 3], (Vector3<f64>, usize)> = BTreeMap::new();
    for p in points {
        let key = [
            (p.x / voxel).floor() as i64,
            (p.y / voxel).floor() as i64,
            (p.z / voxel).floor() as i64,
        ];
        let cell = cells.entry(key).or_insert((Vector3::zeros(), 0));
        cell.0 += p.coords;
        cell.1 += 1;
    }
    cells
        .into_values()
        .map(|(sum, n)| Point::from(sum / n as f64))
        .collect()
}

// ---------------------------------------------------------------------------
// Graphs
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub u: usize,
    pub v: usize,
    pub weight: f64,
}

impl Edge {
    /// The edge with `u < v`.
    fn ordered(self) -> Self {
        if self.u <= self.v {
            self
        } else {
            Edge { u: self.v, v: self.u, weight: self.weight }
        }
    }
}

/// Undirected graph with non-negative edge weights.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightedGraph {
    nodes: usize,
    edges: Vec<Edge>,
}

impl WeightedGraph {
    pub fn new(nodes: usize) -> Self {
        WeightedGraph { nodes, edges: Vec::new() }
    }

    pub fn with_edges(nodes: usize, edges: impl IntoIterator<Item = Edge>) -> Result<Self, GeomError> {
        let mut g = WeightedGraph::new(nodes);
        for e in edges {
            g.add_edge(e.u, e.v, e.weight)?;
        }
        Ok(g)
    }

    pub fn add_edge(&mut self, u: usize, v: usize, weight: f64) -> Result<(), GeomError> {
        let invalid = |reason| GeomError::InvalidEdge { u, v, reason };
        if u >= self.nodes || v >= self.nodes {
            return Err(invalid("endpoint out of range"));
        }
        if u == v {
            return Err(invalid("self loop"));
        }
        if !(weight >= 0.0 && weight.is_finite()) {
            return Err(invalid("weight must be finite and non-negative"));
        }
        let (a, b) = (u.min(v), u.max(v));
        if self.edges.iter().any(|e| e.u.min(e.v) == a && e.u.max(e.v) == b) {
            return Err(invalid("duplicate edge"));
        }
        self.edges.push(Edge { u, v, weight });
        Ok(())
    }

    pub fn node_count(&self) -> usize {
        self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    fn components(&self) -> Vec<Vec<usize>> {
        let mut uf = UnionFind::new(self.nodes);
        for e in &self.edges {
            uf.union(e.u, e.v);
        }
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for i in 0..self.nodes {
            groups.entry(uf.find(i)).or_default().push(i);
        }
        let mut out: Vec<Vec<usize>> = groups.into_values().collect();
        out.sort_by_key(|c| c[0]);
        out
    }
}

struct UnionFind {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind { parent: (0..n).collect(), rank: vec![0; n] }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
        true
    }
}

/// Kruskal's algorithm. Edges are considered in `(weight, u, v)` order with
/// `u < v`, which fixes the tree when weights tie. Returned edges are ordered
/// the same way.
pub fn minimum_spanning_tree(g: &WeightedGraph) -> Result<Vec<Edge>, GeomError> {
    let components = g.components();
    if components.len() > 1 {
        return Err(GeomError::Disconnected { components });
    }
    let mut edges: Vec<Edge> = g.edges.iter().map(|e| e.ordered()).collect();
    edges.sort_by(|a, b| {
        a.weight
            .total_cmp(&b.weight)
            .then(a.u.cmp(&b.u))
            .then(a.v.cmp(&b.v))
    });
    let mut uf = UnionFind::new(g.nodes);
    let mut tree = Vec::with_capacity(g.nodes.saturating_sub(1));
    for e in edges {
        if uf.union(e.u, e.v) {
            tree.push(e);
            if tree.len() + 1 == g.nodes {
                break;
            }
        }
    }
    Ok(tree)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShortestPath {
    pub nodes: Vec<usize>,
    pub cost: f64,
}

fn tight(dist_u: f64, weight: f64, dist_v: f64) -> bool {
    (dist_u - (weight + dist_v)).abs() <= 1e-9 * dist_u.abs().max(1.0)
}

/// Minimum-cost path from `src` to `dst`, `None` when `dst` is unreachable.
///
/// Among equal-cost paths the lexicographically smallest node sequence wins:
/// distances to `dst` are computed with Dijkstra, then the path is walked from
/// `src` taking the smallest neighbor that stays on a shortest path.
pub fn shortest_path(g: &WeightedGraph, src: usize, dst: usize) -> Result<Option<ShortestPath>, GeomError> {
    for node in [src, dst] {
        if node >= g.nodes {
            return Err(GeomError::UnknownNode(node));
        }
    }
    if src == dst {
        return Ok(Some(ShortestPath { nodes: vec![src], cost: 0.0 }));
    }

    let mut graph: UnGraph<(), f64> = UnGraph::with_capacity(g.nodes, g.edges.len());
    for _ in 0..g.nodes {
        graph.add_node(());
    }
    let mut adjacency: Vec<Vec<(usize, f64)>> = vec![Vec::new(); g.nodes];
    for e in &g.edges {
        graph.add_edge(NodeIndex::new(e.u), NodeIndex::new(e.v), e.weight);
        adjacency[e.u].push((e.v, e.weight));
        adjacency[e.v].push((e.u, e.weight));
    }
    for list in &mut adjacency {
        list.sort_by_key(|&(v, _)| v);
    }
    let to_dst = petgraph::algo::dijkstra(&graph, NodeIndex::new(dst), None, |e| *e.weight());
    let dist = |n: usize| to_dst.get(&NodeIndex::new(n)).copied();
    if dist(src).is_none() {
        return Ok(None);
    }

    // Depth-first over tight edges in ascending neighbor order; with positive
    // weights this never backtracks, zero-weight plateaus may need it.
    let mut path = vec![src];
    let mut on_path = vec![false; g.nodes];
    on_path[src] = true;
    let mut cursor = vec![0usize];
    while let Some(&u) = path.last() {
        if u == dst {
            break;
        }
        let du = dist(u).unwrap_or(f64::INFINITY);
        let pos = cursor.last_mut().expect("cursor tracks path");
        let next = adjacency[u][*pos..].iter().position(|&(v, w)| {
            !on_path[v] && dist(v).is_some_and(|dv| tight(du, w, dv))
        });
        match next {
            Some(offset) => {
                let v = adjacency[u][*pos + offset].0;
                *pos += offset + 1;
                path.push(v);
                on_path[v] = true;
                cursor.push(0);
            }
            None => {
                on_path[u] = false;
                path.pop();
                cursor.pop();
            }
        }
    }
    if path.is_empty() {
        return Ok(None);
    }
    let cost = path
        .windows(2)
        .map(|w| {
            adjacency[w[0]]
                .iter()
                .find(|&&(v, _)| v == w[1])
                .map(|&(_, weight)| weight)
                .expect("path follows graph edges")
        })
        .sum();
    Ok(Some(ShortestPath { nodes: path, cost }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn cube(x: f64) -> AxisAlignedBox {
        AxisAlignedBox::new(Point::new(x, 0.0, 0.0), Point::new(x + 1.0, 1.0, 1.0))
    }

    #[test]
    fn dbscan_examples() {
        assert_eq!(dbscan(&[[0.0], [0.1], [10.0]], 1.0, 2), vec![0, 0, NOISE]);
        assert_eq!(dbscan(&[[3.0, 4.0]], 0.5, 1), vec![0]);
        assert_eq!(dbscan(&[[1.0, 1.0, 1.0]; 5], 0.1, 5), vec![0; 5]);
        assert!(dbscan::<2>(&[], 1.0, 3).is_empty());
    }

    #[test]
    fn dbscan_border_goes_to_first_cluster() {
        // Two dense groups with a single border point between them.
        let pts = [[0.0], [0.1], [0.2], [0.3], [1.2], [2.1], [2.2], [2.3], [2.4]];
        let labels = dbscan(&pts, 0.95, 4);
        assert_eq!(labels, vec![0, 0, 0, 0, 0, 1, 1, 1, 1]);
    }

    #[test]
    fn iou_examples() {
        assert_eq!(aabb_iou(&cube(0.0), &cube(0.0)), 1.0);
        assert_abs_diff_eq!(aabb_iou(&cube(0.0), &cube(0.5)), 1.0 / 3.0, epsilon = 1e-12);
        assert_eq!(aabb_iou(&cube(0.0), &cube(3.0)), 0.0);
    }

    #[test]
    fn flat_boxes_get_a_volume_floor() {
        let plane = AxisAlignedBox::new(Point::new(0.0, 0.0, 0.0), Point::new(1.0, 1.0, 0.0));
        assert_eq!(aabb_iou(&plane, &plane), 1.0);
        let shifted = AxisAlignedBox::new(Point::new(0.5, 0.0, 0.0), Point::new(1.5, 1.0, 0.0));
        assert_abs_diff_eq!(aabb_iou(&plane, &shifted), 1.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn box_gap() {
        assert_eq!(cube(0.0).gap(&cube(0.5)), 0.0);
        assert_abs_diff_eq!(cube(0.0).gap(&cube(3.0)), 2.0, epsilon = 1e-12);
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_abs_diff_eq!(cosine_similarity(&[1.0, 0.0], &[1.0, 1.0]).unwrap(), std::f64::consts::FRAC_1_SQRT_2, epsilon = 1e-8);
        assert_eq!(cosine_similarity(&[0.0, 0.0], &[1.0, 1.0]), Err(GeomError::ZeroNorm));
        assert_eq!(
            cosine_similarity(&[1.0], &[1.0, 1.0]),
            Err(GeomError::DimensionMismatch(1, 2))
        );
    }

    #[test]
    fn normalize_is_idempotent() {
        let mut v = vec![3.0, 4.0];
        normalize(&mut v).unwrap();
        assert_eq!(v, vec![0.6, 0.8]);
        let once = v.clone();
        normalize(&mut v).unwrap();
        assert_eq!(v, once);
        assert!(normalize(&mut [0.0, 0.0]).is_err());
    }

    #[test]
    fn voxel_examples() {
        let two = [Point::new(0.01, 0.01, 0.01), Point::new(0.11, 0.11, 0.11)];
        let out = voxel_downsample(&two, 0.2);
        assert_eq!(out.len(), 1);
        assert_abs_diff_eq!(out[0].x, 0.06, epsilon = 1e-12);

        let grid: Vec<Point> = (0..27)
            .map(|i| Point::new((i % 3) as f64, ((i / 3) % 3) as f64, (i / 9) as f64))
            .collect();
        assert_eq!(voxel_downsample(&grid, 0.2).len(), 27);
    }

    #[test]
    fn mst_examples() {
        let tri = WeightedGraph::with_edges(
            3,
            [
                Edge { u: 0, v: 1, weight: 1.0 },
                Edge { u: 1, v: 2, weight: 2.0 },
                Edge { u: 0, v: 2, weight: 3.0 },
            ],
        )
        .unwrap();
        let tree = minimum_spanning_tree(&tri).unwrap();
        assert_eq!(tree.iter().map(|e| e.weight).sum::<f64>(), 3.0);
        assert_eq!(tree.len(), 2);

        let pair = WeightedGraph::with_edges(2, [Edge { u: 1, v: 0, weight: 4.0 }]).unwrap();
        assert_eq!(minimum_spanning_tree(&pair).unwrap(), vec![Edge { u: 0, v: 1, weight: 4.0 }]);

        let split = WeightedGraph::with_edges(4, [Edge { u: 0, v: 1, weight: 1.0 }]).unwrap();
        match minimum_spanning_tree(&split) {
            Err(GeomError::Disconnected { components }) => {
                assert_eq!(components, vec![vec![0, 1], vec![2], vec![3]])
            }
            other => panic!("expected disconnected error, got {other:?}"),
        }
    }

    #[test]
    fn graph_rejects_bad_edges() {
        let mut g = WeightedGraph::new(3);
        assert!(g.add_edge(0, 0, 1.0).is_err());
        assert!(g.add_edge(0, 3, 1.0).is_err());
        assert!(g.add_edge(0, 1, -1.0).is_err());
        g.add_edge(0, 1, 1.0).unwrap();
        assert!(g.add_edge(1, 0, 2.0).is_err());
    }

    #[test]
    fn shortest_path_examples() {
        let g = WeightedGraph::with_edges(
            3,
            [
                Edge { u: 0, v: 1, weight: 1.0 },
                Edge { u: 1, v: 2, weight: 1.0 },
                Edge { u: 0, v: 2, weight: 3.0 },
            ],
        )
        .unwrap();
        let p = shortest_path(&g, 0, 2).unwrap().unwrap();
        assert_eq!(p.nodes, vec![0, 1, 2]);
        assert_eq!(p.cost, 2.0);

        let same = shortest_path(&g, 1, 1).unwrap().unwrap();
        assert_eq!((same.nodes, same.cost), (vec![1], 0.0));

        let split = WeightedGraph::with_edges(3, [Edge { u: 0, v: 1, weight: 1.0 }]).unwrap();
        assert_eq!(shortest_path(&split, 0, 2).unwrap(), None);
        assert_eq!(shortest_path(&split, 0, 9), Err(GeomError::UnknownNode(9)));
    }

    #[test]
    fn shortest_path_ties_prefer_smaller_sequence() {
        // 0-1-3 and 0-2-3 both cost 2.
        let g = WeightedGraph::with_edges(
            4,
            [
                Edge { u: 0, v: 2, weight: 1.0 },
                Edge { u: 2, v: 3, weight: 1.0 },
                Edge { u: 0, v: 1, weight: 1.0 },
                Edge { u: 1, v: 3, weight: 1.0 },
            ],
        )
        .unwrap();
        assert_eq!(shortest_path(&g, 0, 3).unwrap().unwrap().nodes, vec![0, 1, 3]);
    }

    #[test]
    fn zero_weight_plateau() {
        let g = WeightedGraph::with_edges(
            4,
            [
                Edge { u: 0, v: 1, weight: 0.0 },
                Edge { u: 1, v: 2, weight: 0.0 },
                Edge { u: 0, v: 2, weight: 0.0 },
                Edge { u: 2, v: 3, weight: 1.0 },
            ],
        )
        .unwrap();
        let p = shortest_path(&g, 0, 3).unwrap().unwrap();
        assert_eq!(p.nodes, vec![0, 1, 2, 3]);
        assert_eq!(p.cost, 1.0);
    }
}
