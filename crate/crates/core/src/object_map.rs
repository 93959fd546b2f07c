//! Incremental object-centric map: association of per-frame observations to
//! existing objects and fusion of matched pairs.

use fnv::FnvHashMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::caption::{caption_similarity, CaptionCorpus, CaptionMerger};
use crate::geom::{self, aabb_iou, cosine_similarity, AxisAlignedBox, Point};
use crate::projection::ObjectObservation;

pub type ObjectId = u64;

#[derive(Debug, Error, PartialEq)]
pub enum ObjectMapError {
    #[error("similarity weights must be non-negative and sum to 1 (got {0}, {1}, {2})")]
    Weights(f64, f64, f64),
    #[error("similarity threshold must lie in (0, 1), got {0}")]
    Threshold(f64),
    #[error("gating radius must be positive, got {0}")]
    Gating(f64),
}

/// Weights of the geometric, caption and feature similarity terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimilarityWeights {
    pub geometric: f64,
    pub caption: f64,
    pub feature: f64,
}

impl SimilarityWeights {
    pub fn new(geometric: f64, caption: f64, feature: f64) -> Result<Self, ObjectMapError> {
        let w = SimilarityWeights { geometric, caption, feature };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<(), ObjectMapError> {
        let all = [self.geometric, self.caption, self.feature];
        let sum: f64 = all.iter().sum();
        if all.iter().any(|w| !(*w >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return Err(ObjectMapError::Weights(self.geometric, self.caption, self.feature));
        }
        Ok(())
    }
}

impl Default for SimilarityWeights {
    fn default() -> Self {
        SimilarityWeights { geometric: 0.4, caption: 0.2, feature: 0.4 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AssociationConfig {
    pub weights: SimilarityWeights,
    /// Minimum overall similarity for a match (inclusive).
    pub threshold: f64,
    /// Only objects whose centroid lies within this distance of the
    /// observation centroid are scored. `None` scores every object.
    pub gating_radius: Option<f64>,
}

impl Default for AssociationConfig {
    fn default() -> Self {
        AssociationConfig { weights: SimilarityWeights::default(), threshold: 0.6, gating_radius: Some(30.0) }
    }
}

impl AssociationConfig {
    pub fn validate(&self) -> Result<(), ObjectMapError> {
        self.weights.validate()?;
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(ObjectMapError::Threshold(self.threshold));
        }
        if let Some(r) = self.gating_radius {
            if !(r > 0.0) {
                return Err(ObjectMapError::Gating(r));
            }
        }
        Ok(())
    }
}

/// A fused object. The cached box and centroid always describe `points`.
#[derive(Debug, Clone, PartialEq)]
pub struct MapObject {
    id: ObjectId,
    points: Vec<Point>,
    caption: String,
    /// Running mean of every associated observation embedding.
    feature_mean: Vec<f64>,
    /// `feature_mean` scaled to unit length.
    embedding: Vec<f64>,
    obs_count: u32,
    aabb: AxisAlignedBox,
    centroid: Point,
}

fn unit(v: &[f64]) -> Vec<f64> {
    let mut out = v.to_vec();
    if geom::normalize(&mut out).is_err() {
        // The mean of unit vectors can cancel exactly; keep the raw vector
        // rather than inventing a direction.
        return v.to_vec();
    }
    out
}

impl MapObject {
    /// Builds an object from parts; `embedding` is taken as the feature mean.
    pub fn new(id: ObjectId, points: Vec<Point>, caption: String, embedding: Vec<f64>, obs_count: u32) -> Self {
        assert!(!points.is_empty(), "map object needs points");
        assert!(obs_count >= 1, "map object needs at least one observation");
        let aabb = AxisAlignedBox::from_points(&points).unwrap();
        let centroid = geom::centroid(&points).unwrap();
        MapObject {
            id,
            points,
            caption,
            embedding: unit(&embedding),
            feature_mean: embedding,
            obs_count,
            aabb,
            centroid,
        }
    }

    pub fn from_observation(id: ObjectId, obs: &ObjectObservation) -> Self {
        MapObject::new(id, obs.points.clone(), obs.caption.clone(), obs.embedding.clone(), 1)
    }

    pub fn id(&self) -> ObjectId {
        self.id
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn caption(&self) -> &str {
        &self.caption
    }

    /// Unit-norm caption feature.
    pub fn embedding(&self) -> &[f64] {
        &self.embedding
    }

    pub fn obs_count(&self) -> u32 {
        self.obs_count
    }

    pub fn aabb(&self) -> &AxisAlignedBox {
        &self.aabb
    }

    pub fn centroid(&self) -> Point {
        self.centroid
    }

    /// Folds `obs` into this object: point union, running-mean feature
    /// `(f_o + n f_m) / (n + 1)`, merged caption, refreshed caches.
    pub fn absorb(&mut self, obs: &ObjectObservation, merger: &dyn CaptionMerger) {
        let n = self.obs_count as f64;
        for (m, o) in self.feature_mean.iter_mut().zip(&obs.embedding) {
            *m = (o + n * *m) / (n + 1.0);
        }
        self.embedding = unit(&self.feature_mean);
        self.obs_count += 1;
        self.caption = merger.merge(&obs.caption, &self.caption);
        self.points.extend_from_slice(&obs.points);
        self.aabb = AxisAlignedBox::from_points(&self.points).unwrap();
        self.centroid = geom::centroid(&self.points).unwrap();
    }
}

/// Returns `m` with `o` fused into it.
pub fn fuse(o: &ObjectObservation, m: &MapObject, merger: &dyn CaptionMerger) -> MapObject {
    let mut out = m.clone();
    out.absorb(o, merger);
    out
}

/// The three similarity terms between an observation and a map object.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityTerms {
    pub geometric: f64,
    pub caption: f64,
    /// Feature cosine, negative values clamped to 0.
    pub feature: f64,
}

impl SimilarityTerms {
    pub fn compute(o: &ObjectObservation, m: &MapObject, corpus: &CaptionCorpus) -> Self {
        let geometric = aabb_iou(&o.aabb(), m.aabb());
        let caption = caption_similarity(&o.caption, m.caption(), corpus);
        let feature = cosine_similarity(&o.embedding, m.embedding()).map_or(0.0, |c| c.max(0.0));
        SimilarityTerms { geometric, caption, feature }
    }

    /// Weighted sum, written as `1 - Σ w (1 - s)` so that three perfect terms
    /// give exactly 1.
    pub fn combine(&self, w: &SimilarityWeights) -> f64 {
        let deficit = w.geometric * (1.0 - self.geometric)
            + w.caption * (1.0 - self.caption)
            + w.feature * (1.0 - self.feature);
        (1.0 - deficit).clamp(0.0, 1.0)
    }
}

pub fn overall_similarity(
    o: &ObjectObservation,
    m: &MapObject,
    w: &SimilarityWeights,
    corpus: &CaptionCorpus,
) -> f64 {
    SimilarityTerms::compute(o, m, corpus).combine(w)
}

/// What happened to one observation during integration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Association {
    Fused { object: ObjectId, similarity: f64 },
    Created { object: ObjectId, best_similarity: Option<f64> },
}

/// The object-centric map with a uniform grid over object centroids.
#[derive(Debug, Clone, Default)]
pub struct ObjectMap {
    objects: Vec<MapObject>,
    cell: f64,
    grid: FnvHashMap<[i64; 3], Vec<ObjectId>>,
}

impl ObjectMap {
    pub fn new() -> Self {
        ObjectMap { objects: Vec::new(), cell: 30.0, grid: FnvHashMap::default() }
    }

    pub fn len(&self) -> usize {
        self.objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }

    pub fn objects(&self) -> &[MapObject] {
        &self.objects
    }

    pub fn get(&self, id: ObjectId) -> Option<&MapObject> {
        self.objects.get(id as usize)
    }

    /// Adds a pre-built object; its id must be the next free id.
    pub fn insert(&mut self, object: MapObject) {
        assert_eq!(object.id as usize, self.objects.len(), "object ids are dense and never reused");
        self.index(object.id, object.centroid);
        self.objects.push(object);
    }

    fn cell_of(&self, p: &Point) -> [i64; 3] {
        [
            (p.x / self.cell).floor() as i64,
            (p.y / self.cell).floor() as i64,
            (p.z / self.cell).floor() as i64,
        ]
    }

    fn index(&mut self, id: ObjectId, at: Point) {
        let key = self.cell_of(&at);
        self.grid.entry(key).or_default().push(id);
    }

    fn unindex(&mut self, id: ObjectId, at: Point) {
        let key = self.cell_of(&at);
        if let Some(ids) = self.grid.get_mut(&key) {
            ids.retain(|&x| x != id);
        }
    }

    /// Ids of objects whose centroid lies within `radius` of `p`, ascending.
    pub fn objects_near(&self, p: &Point, radius: f64) -> Vec<ObjectId> {
        let reach = (radius / self.cell).ceil() as i64;
        let center = self.cell_of(p);
        let mut out = Vec::new();
        for dx in -reach..=reach {
            for dy in -reach..=reach {
                for dz in -reach..=reach {
                    let key = [center[0] + dx, center[1] + dy, center[2] + dz];
                    if let Some(ids) = self.grid.get(&key) {
                        out.extend(
                            ids.iter()
                                .copied()
                                .filter(|&id| (self.objects[id as usize].centroid - p).norm() <= radius),
                        );
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }

    /// Greedy association with a caller-supplied score. Observations are taken
    /// in order; each is scored against the candidate objects (including ones
    /// created earlier in the same frame) and fused into the best one when its
    /// score reaches `threshold`, otherwise it starts a new object. Equal
    /// scores go to the lower id.
    pub fn integrate_with<F>(
        &mut self,
        observations: &[ObjectObservation],
        threshold: f64,
        gating_radius: Option<f64>,
        merger: &dyn CaptionMerger,
        mut score: F,
    ) -> Vec<Association>
    where
        F: FnMut(usize, &ObjectObservation, &MapObject) -> f64,
    {
        let mut out = Vec::with_capacity(observations.len());
        for (k, obs) in observations.iter().enumerate() {
            let candidates: Vec<ObjectId> = match gating_radius {
                Some(r) => self.objects_near(&obs.centroid(), r),
                None => (0..self.objects.len() as ObjectId).collect(),
            };
            let mut best: Option<(ObjectId, f64)> = None;
            for id in candidates {
                let s = score(k, obs, &self.objects[id as usize]);
                if best.is_none_or(|(_, b)| s > b) {
                    best = Some((id, s));
                }
            }
            match best {
                Some((id, s)) if s >= threshold => {
                    let old = self.objects[id as usize].centroid;
                    self.unindex(id, old);
                    self.objects[id as usize].absorb(obs, merger);
                    let new = self.objects[id as usize].centroid;
                    self.index(id, new);
                    out.push(Association::Fused { object: id, similarity: s });
                }
                _ => {
                    let id = self.objects.len() as ObjectId;
                    self.insert(MapObject::from_observation(id, obs));
                    out.push(Association::Created { object: id, best_similarity: best.map(|b| b.1) });
                }
            }
        }
        out
    }

    /// Integrates one frame's observations using the weighted similarity.
    /// Caption statistics are taken over the current map captions plus the
    /// frame's captions.
    pub fn associate_and_integrate(
        &mut self,
        observations: &[ObjectObservation],
        cfg: &AssociationConfig,
        merger: &dyn CaptionMerger,
    ) -> Vec<Association> {
        let corpus = CaptionCorpus::new(
            self.objects
                .iter()
                .map(|o| o.caption())
                .chain(observations.iter().map(|o| o.caption.as_str())),
        );
        let weights = cfg.weights;
        self.integrate_with(observations, cfg.threshold, cfg.gating_radius, merger, |_, o, m| {
            overall_similarity(o, m, &weights, &corpus)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::caption::JaccardMerger;
    use approx::assert_abs_diff_eq;

    fn cube_points(x: f64) -> Vec<Point> {
        let mut pts = Vec::new();
        for i in 0..=2 {
            for j in 0..=2 {
                for k in 0..=2 {
                    pts.push(Point::new(x + 0.5 * i as f64, 0.5 * j as f64, 0.5 * k as f64));
                }
            }
        }
        pts
    }

    fn obs(x: f64, caption: &str, emb: Vec<f64>) -> ObjectObservation {
        ObjectObservation { points: cube_points(x), caption: caption.into(), embedding: emb }
    }

    #[test]
    fn weights_validate() {
        assert!(SimilarityWeights::new(0.4, 0.2, 0.4).is_ok());
        assert!(SimilarityWeights::new(0.5, 0.2, 0.4).is_err());
        assert!(SimilarityWeights::new(-0.1, 0.7, 0.4).is_err());
        let cfg = AssociationConfig { threshold: 1.0, ..Default::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn self_similarity_is_one() {
        let o = obs(0.0, "a red car", vec![0.6, 0.8]);
        let m = MapObject::from_observation(0, &o);
        let corpus = CaptionCorpus::new(["a red car"]);
        assert_eq!(overall_similarity(&o, &m, &SimilarityWeights::default(), &corpus), 1.0);
    }

    #[test]
    fn nothing_in_common_is_zero() {
        let o = obs(0.0, "a red car", vec![1.0, 0.0]);
        let m = MapObject::from_observation(0, &obs(5.0, "tall tree", vec![0.0, 1.0]));
        let corpus = CaptionCorpus::new(["a red car", "tall tree"]);
        assert_eq!(overall_similarity(&o, &m, &SimilarityWeights::default(), &corpus), 0.0);
    }

    #[test]
    fn weighted_combination() {
        let t = SimilarityTerms { geometric: 1.0 / 3.0, caption: 1.0, feature: std::f64::consts::FRAC_1_SQRT_2 };
        assert_abs_diff_eq!(t.combine(&SimilarityWeights::default()), 0.61617, epsilon = 1e-4);
        // Same thing through real geometry and features.
        let o = obs(0.0, "a red car", vec![1.0, 0.0]);
        let m = MapObject::from_observation(0, &obs(0.5, "a red car", vec![1.0, 1.0]));
        let corpus = CaptionCorpus::new(["a red car"]);
        let phi = overall_similarity(&o, &m, &SimilarityWeights::default(), &corpus);
        assert_abs_diff_eq!(phi, 0.4 / 3.0 + 0.2 + 0.4 * std::f64::consts::FRAC_1_SQRT_2, epsilon = 1e-12);
    }

    #[test]
    fn negative_feature_cosine_clamps() {
        let o = obs(0.0, "a", vec![1.0, 0.0]);
        let m = MapObject::from_observation(0, &obs(0.0, "a", vec![-1.0, 0.0]));
        let t = SimilarityTerms::compute(&o, &m, &CaptionCorpus::new(["a"]));
        assert_eq!(t.feature, 0.0);
    }

    #[test]
    fn fusion_examples() {
        let merger = JaccardMerger::default();
        let m = MapObject::new(0, cube_points(0.0), "car".into(), vec![1.0, 0.0], 1);
        let f = fuse(&obs(0.0, "car", vec![0.0, 1.0]), &m, &merger);
        assert_abs_diff_eq!(f.embedding()[0], std::f64::consts::FRAC_1_SQRT_2, epsilon = 1e-8);
        assert_abs_diff_eq!(f.embedding()[1], std::f64::consts::FRAC_1_SQRT_2, epsilon = 1e-8);
        assert_eq!(f.obs_count(), 2);

        let m3 = MapObject::new(0, cube_points(0.0), "car".into(), vec![1.0, 0.0], 3);
        let f3 = fuse(&obs(0.0, "car", vec![0.0, 1.0]), &m3, &merger);
        assert_abs_diff_eq!(f3.embedding()[0], 0.9487, epsilon = 1e-4);
        assert_abs_diff_eq!(f3.embedding()[1], 0.3162, epsilon = 1e-4);
    }

    #[test]
    fn fusion_concatenates_points_and_refreshes_caches() {
        let merger = JaccardMerger::default();
        let a = ObjectObservation {
            points: (0..100).map(|i| Point::new(i as f64 * 0.01, 0.0, 0.0)).collect(),
            caption: "a car".into(),
            embedding: vec![1.0, 0.0],
        };
        let b = ObjectObservation {
            points: (0..50).map(|i| Point::new(2.0, i as f64 * 0.01, 1.0)).collect(),
            caption: "a red car parked".into(),
            embedding: vec![1.0, 0.0],
        };
        let f = fuse(&b, &MapObject::from_observation(0, &a), &merger);
        assert_eq!(f.points().len(), 150);
        assert_eq!(f.aabb().max, Point::new(2.0, 0.49, 1.0));
        assert_eq!(f.caption(), "a red car parked");
    }

    #[test]
    fn empty_map_creates_objects() {
        let mut map = ObjectMap::new();
        // Identical caption and feature alone already score 0.2 + 0.4 = 0.6,
        // so the fixture varies the feature direction too.
        let frame: Vec<ObjectObservation> = (0..3)
            .map(|i| obs(10.0 * i as f64, &format!("thing {i}"), vec![(i as f64).cos(), (i as f64).sin()]))
            .collect();
        let out = map.associate_and_integrate(&frame, &AssociationConfig::default(), &JaccardMerger::default());
        assert_eq!(out.len(), 3);
        assert_eq!(map.len(), 3);
        assert_eq!(map.objects().iter().map(|o| o.id()).collect::<Vec<_>>(), vec![0, 1, 2]);
    }

    #[test]
    fn greedy_many_to_one() {
        let mut map = ObjectMap::new();
        map.insert(MapObject::from_observation(0, &obs(0.0, "a", vec![1.0, 0.0])));
        map.insert(MapObject::from_observation(1, &obs(3.0, "b", vec![0.0, 1.0])));
        let phi = [[0.9, 0.2], [0.8, 0.1]];
        let frame = vec![obs(0.0, "a", vec![1.0, 0.0]), obs(0.0, "a", vec![1.0, 0.0])];
        let out = map.integrate_with(&frame, 0.6, None, &JaccardMerger::default(), |k, _, m| {
            phi[k][m.id() as usize]
        });
        assert_eq!(
            out,
            vec![
                Association::Fused { object: 0, similarity: 0.9 },
                Association::Fused { object: 0, similarity: 0.8 }
            ]
        );
        assert_eq!(map.get(0).unwrap().obs_count(), 3);
        assert_eq!(map.len(), 2);
    }

    #[test]
    fn threshold_is_inclusive() {
        for (phi, fused) in [(0.59, false), (0.6, true)] {
            let mut map = ObjectMap::new();
            map.insert(MapObject::from_observation(0, &obs(0.0, "a", vec![1.0, 0.0])));
            let out = map.integrate_with(&[obs(0.0, "a", vec![1.0, 0.0])], 0.6, None, &JaccardMerger::default(), |_, _, _| phi);
            assert_eq!(matches!(out[0], Association::Fused { .. }), fused);
        }
    }

    #[test]
    fn gating_limits_candidates() {
        let mut map = ObjectMap::new();
        map.insert(MapObject::from_observation(0, &obs(0.0, "a", vec![1.0, 0.0])));
        map.insert(MapObject::from_observation(1, &obs(100.0, "a", vec![1.0, 0.0])));
        assert_eq!(map.objects_near(&Point::new(1.0, 0.0, 0.0), 30.0), vec![0]);
        assert_eq!(map.objects_near(&Point::new(50.0, 0.0, 0.0), 60.0), vec![0, 1]);
        let mut seen = Vec::new();
        map.integrate_with(&[obs(101.0, "a", vec![1.0, 0.0])], 0.6, Some(30.0), &JaccardMerger::default(), |_, _, m| {
            seen.push(m.id());
            0.0
        });
        assert_eq!(seen, vec![1]);
    }
}
