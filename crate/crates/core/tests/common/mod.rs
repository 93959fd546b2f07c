//! Brute-force references and scene scoring shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::Path;

use ovmap_core::eval::{point_alignment, UNLABELED};
use ovmap_core::geom::{Edge, WeightedGraph, NOISE};
use ovmap_core::hierarchy::HierarchicalGraph;
use ovmap_core::object_map::{ObjectId, ObjectMap};
use ovmap_core::pipeline::{build_from_dir, BuildOutput};
use ovmap_core::synthetic::{generate_scene, Scene, SceneSpec};
use ovmap_core::RunConfig;
use rand::Rng;

/// DBSCAN straight from the definitions: core points by counting, clusters
/// as the transitive closure of core-to-core reachability, border points to
/// the lowest reaching cluster, clusters numbered by lowest core index.
pub fn dbscan_reference(points: &[[f64; 2]], eps: f64, min_pts: usize) -> Vec<i32> {
    let n = points.len();
    let near = |i: usize, j: usize| {
        let (a, b) = (points[i], points[j]);
        (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) <= eps * eps
    };
    let core: Vec<bool> = (0..n).map(|i| (0..n).filter(|&j| near(i, j)).count() >= min_pts).collect();
    // Closure over core points.
    let mut comp: Vec<usize> = (0..n).collect();
    let mut changed = true;
    while changed {
        changed = false;
        for i in 0..n {
            for j in 0..n {
                if core[i] && core[j] && near(i, j) && comp[j] > comp[i] {
                    comp[j] = comp[i];
                    changed = true;
                }
            }
        }
    }
    let mut ids: BTreeMap<usize, i32> = BTreeMap::new();
    for i in 0..n {
        if core[i] {
            let next = ids.len() as i32;
            ids.entry(comp[i]).or_insert(next);
        }
    }
    (0..n)
        .map(|i| {
            if core[i] {
                ids[&comp[i]]
            } else {
                (0..n).filter(|&j| core[j] && near(i, j)).map(|j| ids[&comp[j]]).min().unwrap_or(NOISE)
            }
        })
        .collect()
}

/// Minimum total weight over every (n−1)-edge subset that spans the graph.
pub fn mst_weight_reference(nodes: usize, edges: &[Edge]) -> Option<f64> {
    let need = nodes.saturating_sub(1);
    let mut best: Option<f64> = None;
    let m = edges.len();
    for mask in 0u32..(1 << m) {
        if mask.count_ones() as usize != need {
            continue;
        }
        let mut parent: Vec<usize> = (0..nodes).collect();
        fn find(p: &mut [usize], x: usize) -> usize {
            if p[x] == x { x } else { let r = find(p, p[x]); p[x] = r; r }
        }
        let mut ok = true;
        let mut w = 0.0;
        for (k, e) in edges.iter().enumerate() {
            if mask >> k & 1 == 1 {
                let (a, b) = (find(&mut parent, e.u), find(&mut parent, e.v));
                if a == b {
                    ok = false;
                    break;
                }
                parent[a] = b;
                w += e.weight;
            }
        }
        if ok && best.is_none_or(|b| w < b) {
            best = Some(w);
        }
    }
    best
}

/// Cheapest simple path by enumeration; equal costs keep the
/// lexicographically smaller node sequence.
pub fn shortest_path_reference(nodes: usize, edges: &[Edge], src: usize, dst: usize) -> Option<(Vec<usize>, f64)> {
    let mut adj = vec![Vec::new(); nodes];
    for e in edges {
        adj[e.u].push((e.v, e.weight));
        adj[e.v].push((e.u, e.weight));
    }
    let mut best: Option<(Vec<usize>, f64)> = None;
    fn walk(adj: &[Vec<(usize, f64)>], path: &mut Vec<usize>, cost: f64, dst: usize, best: &mut Option<(Vec<usize>, f64)>) {
        let u = *path.last().unwrap();
        if u == dst {
            let better = best.as_ref().is_none_or(|(p, c)| cost < *c || (cost == *c && *path < *p));
            if better {
                *best = Some((path.clone(), cost));
            }
            return;
        }
        for &(v, w) in &adj[u] {
            if !path.contains(&v) {
                path.push(v);
                walk(adj, path, cost + w, dst, best);
                path.pop();
            }
        }
    }
    walk(&adj, &mut vec![src], 0.0, dst, &mut best);
    best
}

/// Random graph with integer weights so that sums are exact. With
/// `connected` a random spanning chain is added first.
pub fn random_graph(rng: &mut impl Rng, nodes: usize, density: f64, connected: bool) -> (WeightedGraph, Vec<Edge>) {
    let mut edges = Vec::new();
    let mut present = std::collections::BTreeSet::new();
    if connected {
        let mut order: Vec<usize> = (0..nodes).collect();
        for i in (1..nodes).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        for w in order.windows(2) {
            let (u, v) = (w[0].min(w[1]), w[0].max(w[1]));
            present.insert((u, v));
            edges.push(Edge { u, v, weight: rng.random_range(1..=9) as f64 });
        }
    }
    for u in 0..nodes {
        for v in u + 1..nodes {
            if !present.contains(&(u, v)) && rng.random::<f64>() < density {
                edges.push(Edge { u, v, weight: rng.random_range(1..=9) as f64 });
            }
        }
    }
    let g = WeightedGraph::with_edges(nodes, edges.iter().copied()).unwrap();
    (g, edges)
}

/// Renders a scene into `dir` and builds it with `cfg`.
pub fn scene_and_build(spec: &SceneSpec, dir: &Path, cfg: &RunConfig) -> (Scene, BuildOutput) {
    let scene = generate_scene(spec, dir).expect("scene renders");
    let out = build_from_dir(dir, cfg).expect("scene builds");
    (scene, out)
}

/// For every ground-truth object, the map object holding most of its
/// visible points and the fraction of those points it holds (1 cm match).
pub fn object_recall(scene: &Scene, map: &ObjectMap) -> Vec<(Option<ObjectId>, f64)> {
    let mut pts = Vec::new();
    let mut owner = Vec::new();
    for o in map.objects() {
        pts.extend_from_slice(o.points());
        owner.extend(std::iter::repeat_n(o.id() as u16, o.points().len()));
    }
    let aligned = point_alignment(&scene.labels.points, &pts, &owner, 0.01).unwrap();
    let mut counts: Vec<BTreeMap<u16, usize>> = vec![BTreeMap::new(); scene.ground_truth.objects.len()];
    for (&gt, &m) in scene.label_objects.iter().zip(&aligned) {
        if m != UNLABELED {
            *counts[gt].entry(m).or_default() += 1;
        }
    }
    scene
        .ground_truth
        .objects
        .iter()
        .map(|g| {
            let best = counts[g.id].iter().max_by_key(|(id, n)| (**n, std::cmp::Reverse(**id)));
            match best {
                Some((&id, &n)) if g.visible_points > 0 => (Some(id as ObjectId), n as f64 / g.visible_points as f64),
                _ => (None, 0.0),
            }
        })
        .collect()
}

/// Fraction of point-cloud-layer points whose class equals the class of the
/// nearest ground-truth point (within `radius`).
pub fn layer_accuracy(scene: &Scene, h: &HierarchicalGraph, radius: f64) -> f64 {
    let pc = &h.point_cloud;
    if pc.points.is_empty() {
        return 0.0;
    }
    let truth = point_alignment(&pc.points, &scene.labels.points, &scene.labels.labels, radius).unwrap();
    let names = |c: u16, list: &[String]| list.get(c as usize).cloned();
    let pred_names = h.catalog.as_ref().map(|c| c.names().to_vec()).unwrap_or_default();
    let correct = truth
        .iter()
        .zip(&pc.classes)
        .filter(|(&t, &p)| t != UNLABELED && names(t, &scene.labels.classes).is_some() && names(t, &scene.labels.classes) == names(p, &pred_names))
        .count();
    correct as f64 / pc.points.len() as f64
}
