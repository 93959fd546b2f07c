use std::collections::BTreeSet;
use std::f64::consts::FRAC_PI_2;

use nalgebra::{Rotation2, Vector3};
use ovmap_core::caption::{caption_similarity, CaptionCorpus, JaccardMerger};
use ovmap_core::eval::{recall_at_k, segmentation_metrics};
use ovmap_core::geom::{aabb_iou, cosine_similarity, dbscan, normalize, AxisAlignedBox, Point, Point2, NOISE};
use ovmap_core::hierarchy::{assemble, ClassCatalog, GeometricLabeler, HierarchyConfig};
use ovmap_core::lane_graph::{disfluency_profile, local_disfluency, DisfluencyConfig};
use ovmap_core::object_map::{fuse, MapObject, ObjectMap};
use ovmap_core::projection::ObjectObservation;
use ovmap_core::query::retrieve;
use proptest::prelude::*;

fn unit_vec(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, dim).prop_filter_map("non-zero", |mut v| normalize(&mut v).ok().map(|_| v))
}

fn boxes() -> impl Strategy<Value = AxisAlignedBox> {
    (prop::array::uniform3(-5.0f64..5.0), prop::array::uniform3(0.0f64..4.0)).prop_map(|(c, e)| {
        AxisAlignedBox::new(Point::new(c[0], c[1], c[2]), Point::new(c[0] + e[0], c[1] + e[1], c[2] + e[2]))
    })
}

fn shuffle<T: Clone>(v: &[T], keys: &[u32]) -> Vec<T> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by_key(|&i| (keys[i % keys.len()], i));
    idx.iter().map(|&i| v[i].clone()).collect()
}

/// Core points grouped by cluster, plus the noise set; both independent of
/// input order.
fn core_partition(pts: &[[f64; 2]], labels: &[i32], eps: f64, min_pts: usize) -> (BTreeSet<Vec<[u64; 2]>>, BTreeSet<[u64; 2]>) {
    let key = |p: &[f64; 2]| [p[0].to_bits(), p[1].to_bits()];
    let near = |a: &[f64; 2], b: &[f64; 2]| (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) <= eps * eps;
    let mut clusters: std::collections::BTreeMap<i32, Vec<[u64; 2]>> = Default::default();
    let mut noise = BTreeSet::new();
    for (p, &l) in pts.iter().zip(labels) {
        if l == NOISE {
            noise.insert(key(p));
        } else if pts.iter().filter(|q| near(p, q)).count() >= min_pts {
            clusters.entry(l).or_default().push(key(p));
        }
    }
    let parts = clusters
        .into_values()
        .map(|mut v| {
            v.sort();
            v
        })
        .collect();
    (parts, noise)
}

fn observation(emb: Vec<f64>) -> ObjectObservation {
    let points = (0..8).map(|i| Point::new((i & 1) as f64, (i >> 1 & 1) as f64, (i >> 2) as f64)).collect();
    ObjectObservation { points, caption: "a bench".into(), embedding: emb }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dbscan_is_permutation_invariant(
        pts in prop::collection::vec(prop::array::uniform2(0.0f64..10.0), 0..80),
        keys in prop::collection::vec(any::<u32>(), 1..80),
        eps in 0.3f64..2.0,
        min_pts in 1usize..5,
    ) {
        let a = dbscan(&pts, eps, min_pts);
        let shuffled = shuffle(&pts, &keys);
        let b = dbscan(&shuffled, eps, min_pts);
        prop_assert_eq!(core_partition(&pts, &a, eps, min_pts), core_partition(&shuffled, &b, eps, min_pts));
    }

    #[test]
    fn iou_is_symmetric_and_bounded(a in boxes(), b in boxes()) {
        let (ab, ba) = (aabb_iou(&a, &b), aabb_iou(&b, &a));
        prop_assert_eq!(ab, ba);
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert!((aabb_iou(&a, &a) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cosine_is_scale_invariant(u in unit_vec(8), v in unit_vec(8), s in 0.01f64..100.0) {
        let scaled: Vec<f64> = u.iter().map(|x| x * s).collect();
        let (a, b) = (cosine_similarity(&u, &v).unwrap(), cosine_similarity(&scaled, &v).unwrap());
        prop_assert!((a - b).abs() < 1e-12);
        let mut again = u.clone();
        normalize(&mut again).unwrap();
        prop_assert_eq!(again, u);
    }

    #[test]
    fn caption_similarity_is_symmetric(a in "[a-e ]{1,12}", b in "[a-e ]{1,12}") {
        let corpus = CaptionCorpus::new([a.as_str(), b.as_str()]);
        let (x, y) = (caption_similarity(&a, &b, &corpus), caption_similarity(&b, &a, &corpus));
        prop_assert!((x - y).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&x));
    }

    #[test]
    fn disfluency_range_and_rotation(
        pts in prop::collection::vec(prop::array::uniform2(-15.0f64..15.0), 2..60),
        angle in 0.0f64..std::f64::consts::TAU,
    ) {
        let pts: Vec<Point2> = pts.iter().map(|p| Point2::new(p[0], p[1])).collect();
        let cfg = DisfluencyConfig::default();
        let rot = Rotation2::new(angle);
        let turned: Vec<Point2> = pts.iter().map(|p| rot * p).collect();
        let profile = disfluency_profile(&pts, &cfg);
        for (n, d) in profile.iter().enumerate() {
            let brute = local_disfluency(&pts, n, &cfg);
            prop_assert_eq!(d.is_some(), brute.is_some());
            if let (Some(d), Some(b), Some(r)) = (d, brute, local_disfluency(&turned, n, &cfg)) {
                prop_assert!((0.0..=FRAC_PI_2 + 1e-12).contains(&d.lambda));
                prop_assert!((d.lambda - b.lambda).abs() < 1e-9);
                prop_assert!((d.lambda - r.lambda).abs() < 1e-6, "{} vs {}", d.lambda, r.lambda);
            }
        }
    }

    #[test]
    fn recall_is_monotone_in_k(
        rankings in prop::collection::vec(prop::collection::vec(0u8..10, 0..8), 1..15),
        relevant in prop::collection::vec(prop::collection::btree_set(0u8..10, 0..3), 15),
    ) {
        let relevant = &relevant[..rankings.len()];
        let r: Vec<f64> = (1..=8).map(|k| recall_at_k(&rankings, relevant, k).unwrap()).collect();
        prop_assert!(r.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(r.iter().all(|x| (0.0..=1.0).contains(x)));
    }

    #[test]
    fn metrics_ignore_point_order(
        pairs in prop::collection::vec((0u16..4, 0u16..4), 1..200),
        keys in prop::collection::vec(any::<u32>(), 1..200),
    ) {
        let classes: Vec<String> = (0..4).map(|i| format!("c{i}")).collect();
        let (gt, pred): (Vec<u16>, Vec<u16>) = pairs.iter().copied().unzip();
        let (sg, sp): (Vec<u16>, Vec<u16>) = shuffle(&pairs, &keys).into_iter().unzip();
        prop_assert_eq!(segmentation_metrics(&gt, &pred, &classes).unwrap(), segmentation_metrics(&sg, &sp, &classes).unwrap());
    }

    #[test]
    fn fusion_is_order_independent(embs in prop::collection::vec(unit_vec(6), 2..7), keys in prop::collection::vec(any::<u32>(), 1..7)) {
        let merger = JaccardMerger::default();
        let fold = |list: &[Vec<f64>]| {
            let mut m = MapObject::from_observation(0, &observation(list[0].clone()));
            for e in &list[1..] {
                m = fuse(&observation(e.clone()), &m, &merger);
            }
            m
        };
        let (a, b) = (fold(&embs), fold(&shuffle(&embs, &keys)));
        prop_assert_eq!(a.obs_count() as usize, embs.len());
        prop_assert_eq!(a.points().len(), 8 * embs.len());
        let (x, y) = (a.embedding(), b.embedding());
        let norm: f64 = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        // A running mean that cancels out has no direction to compare.
        if norm > 0.0 {
            prop_assert!((norm - 1.0).abs() < 1e-9);
            prop_assert!(x.iter().zip(y).all(|(p, q)| (p - q).abs() < 1e-6));
        }
    }

    #[test]
    fn classify_ignores_scale(emb in unit_vec(5), s in 0.01f64..100.0, classes in prop::collection::vec(unit_vec(5), 1..6)) {
        let names = (0..classes.len()).map(|i| format!("c{i}")).collect();
        let cat = ClassCatalog::new(names, classes, None).unwrap();
        let scaled: Vec<f64> = emb.iter().map(|x| x * s).collect();
        let (a, b) = (cat.classify(&emb).unwrap(), cat.classify(&scaled).unwrap());
        // Only near-ties may flip under rounding.
        if a != b {
            let cos = |c: u16| cosine_similarity(&emb, &cat.embeddings()[c as usize]).unwrap();
            prop_assert!((cos(a) - cos(b)).abs() < 1e-9);
        }
    }

    #[test]
    fn retrieve_ignores_query_scale(embs in prop::collection::vec(unit_vec(4), 1..8), q in unit_vec(4), s in 0.01f64..100.0) {
        let mut map = ObjectMap::new();
        for (i, e) in embs.iter().enumerate() {
            let pts: Vec<Point> = observation(e.clone()).points.iter().map(|p| p + Vector3::new(3.0 * i as f64, 0.0, 0.0)).collect();
            map.insert(MapObject::new(i as u64, pts, format!("object {i}"), e.clone(), 1));
        }
        let h = assemble(&map, None, None, &HierarchyConfig::default(), &GeometricLabeler::default()).unwrap();
        let scaled: Vec<f64> = q.iter().map(|x| x * s).collect();
        let (a, b) = (retrieve(&h, &q, 8).unwrap(), retrieve(&h, &scaled, 8).unwrap());
        for (x, y) in a.hits.iter().zip(&b.hits) {
            prop_assert!((x.score - y.score).abs() < 1e-12);
        }
        prop_assert!(a.hits.windows(2).all(|w| w[0].score >= w[1].score));
    }
}
