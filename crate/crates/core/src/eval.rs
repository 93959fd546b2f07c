//! Segmentation and retrieval metrics, plus the labeled-cloud file format.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use fnv::FnvHashMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::Point;

/// Label of points that belong to no class.
pub const UNLABELED: u16 = u16::MAX;

pub const LABELED_CLOUD_FORMAT: &str = "labeled-cloud/1";

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("ground truth has {gt} labels but prediction has {pred}")]
    LengthMismatch { gt: usize, pred: usize },
    #[error("k must be at least 1")]
    ZeroK,
    #[error("alignment radius must be positive")]
    Radius,
    #[error("label {label} is outside the class list of {classes} classes")]
    Label { label: u16, classes: usize },
    #[error("malformed labeled cloud: {0}")]
    Format(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, Serialize, Deserialize)]
struct CloudHeader {
    format: String,
    count: usize,
    classes: Vec<String>,
    #[serde(default)]
    colors: Vec<[u8; 3]>,
}

/// Points with one class label each.
///
/// On disk: a JSON header line `{"format", "count", "classes", "colors"}`
/// followed by `count` records of little-endian float32 `x, y, z` and a
/// `u16` class id ([`UNLABELED`] for none).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabeledCloud {
    pub classes: Vec<String>,
    pub colors: Vec<[u8; 3]>,
    pub points: Vec<Point>,
    pub labels: Vec<u16>,
}

impl LabeledCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Number of points per class, unlabeled excluded.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes.len()];
        for &l in &self.labels {
            if let Some(c) = counts.get_mut(l as usize) {
                *c += 1;
            }
        }
        counts
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = CloudHeader {
            format: LABELED_CLOUD_FORMAT.into(),
            count: self.points.len(),
            classes: self.classes.clone(),
            colors: self.colors.clone(),
        };
        let mut out = serde_json::to_vec(&header).expect("serializable");
        out.push(b'\n');
        for (p, &l) in self.points.iter().zip(&self.labels) {
            for v in [p.x as f32, p.y as f32, p.z as f32] {
                out.extend_from_slice(&v.to_le_bytes());
            }
            out.extend_from_slice(&l.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, EvalError> {
        let fail = |m: String| EvalError::Format(m);
        let split = bytes.iter().position(|&b| b == b'\n').ok_or_else(|| fail("missing header line".into()))?;
        let header: CloudHeader = serde_json::from_slice(&bytes[..split]).map_err(|e| fail(e.to_string()))?;
        if header.format != LABELED_CLOUD_FORMAT {
            return Err(fail(format!("expected format {LABELED_CLOUD_FORMAT}, found {}", header.format)));
        }
        let body = &bytes[split + 1..];
        if body.len() != header.count * 14 {
            return Err(fail(format!("header declares {} points but body holds {} bytes", header.count, body.len())));
        }
        let mut cloud = LabeledCloud { classes: header.classes, colors: header.colors, ..Default::default() };
        for rec in body.chunks_exact(14) {
            let f = |i: usize| f32::from_le_bytes(rec[i..i + 4].try_into().unwrap()) as f64;
            cloud.points.push(Point::new(f(0), f(4), f(8)));
            cloud.labels.push(u16::from_le_bytes([rec[12], rec[13]]));
        }
        cloud.validate()?;
        Ok(cloud)
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        if self.points.len() != self.labels.len() {
            return Err(EvalError::LengthMismatch { gt: self.points.len(), pred: self.labels.len() });
        }
        check_labels(&self.labels, self.classes.len())
    }

    pub fn write(&self, path: &Path) -> Result<(), EvalError> {
        fs::write(path, self.to_bytes()).map_err(|source| EvalError::Io { path: path.to_path_buf(), source })
    }

    pub fn read(path: &Path) -> Result<Self, EvalError> {
        let bytes = fs::read(path).map_err(|source| EvalError::Io { path: path.to_path_buf(), source })?;
        Self::from_bytes(&bytes)
    }
}

fn check_labels(labels: &[u16], classes: usize) -> Result<(), EvalError> {
    match labels.iter().find(|&&l| l != UNLABELED && l as usize >= classes) {
        Some(&label) => Err(EvalError::Label { label, classes }),
        None => Ok(()),
    }
}

/// Rows are ground truth, columns prediction. The last row and column hold
/// unlabeled points.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix { classes, counts: vec![0; (classes + 1) * (classes + 1)] }
    }

    pub fn from_labels(gt: &[u16], pred: &[u16], classes: usize) -> Result<Self, EvalError> {
        if gt.len() != pred.len() {
            return Err(EvalError::LengthMismatch { gt: gt.len(), pred: pred.len() });
        }
        check_labels(gt, classes)?;
        check_labels(pred, classes)?;
        let mut m = ConfusionMatrix::new(classes);
        for (&g, &p) in gt.iter().zip(pred) {
            m.add(g, p, 1);
        }
        Ok(m)
    }

    fn index(&self, label: u16) -> usize {
        if label == UNLABELED {
            self.classes
        } else {
            label as usize
        }
    }

    pub fn add(&mut self, gt: u16, pred: u16, n: u64) {
        let (r, c) = (self.index(gt), self.index(pred));
        self.counts[r * (self.classes + 1) + c] += n;
    }

    pub fn get(&self, gt: u16, pred: u16) -> u64 {
        self.counts[self.index(gt) * (self.classes + 1) + self.index(pred)]
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn tp(&self, c: u16) -> u64 {
        self.get(c, c)
    }

    /// Predicted `c` where the ground truth is anything else, unlabeled included.
    pub fn fp(&self, c: u16) -> u64 {
        self.column(c) - self.tp(c)
    }

    /// Ground truth `c` predicted as anything else, unlabeled included.
    pub fn fn_(&self, c: u16) -> u64 {
        self.row(c) - self.tp(c)
    }

    fn row(&self, c: u16) -> u64 {
        let r = self.index(c) * (self.classes + 1);
        self.counts[r..r + self.classes + 1].iter().sum()
    }

    fn column(&self, c: u16) -> u64 {
        let c = self.index(c);
        (0..=self.classes).map(|r| self.counts[r * (self.classes + 1) + c]).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub class: String,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    /// `None` when the class is absent from both ground truth and prediction.
    pub iou: Option<f64>,
    pub f1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SegmentationMetrics {
    pub per_class: Vec<ClassMetrics>,
    /// Mean IoU over classes with ground-truth support.
    pub mean_iou: f64,
    /// Mean IoU over classes present in ground truth or prediction.
    pub mean_iou_present: f64,
    /// `2ΣTP / (2ΣTP + ΣFP + ΣFN)` over all classes.
    pub micro_f1: f64,
    /// Mean of per-class F1 over classes with ground-truth support.
    pub macro_f1: f64,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    ratio(sum, n as f64)
}

impl SegmentationMetrics {
    pub fn from_confusion(m: &ConfusionMatrix, classes: &[String]) -> Self {
        let per_class: Vec<ClassMetrics> = classes
            .iter()
            .enumerate()
            .map(|(c, name)| {
                let c = c as u16;
                let (tp, fp, fn_) = (m.tp(c), m.fp(c), m.fn_(c));
                let present = tp + fp + fn_ > 0;
                let (t, p, n) = (tp as f64, fp as f64, fn_ as f64);
                ClassMetrics {
                    class: name.clone(),
                    tp,
                    fp,
                    fn_,
                    iou: present.then(|| t / (t + p + n)),
                    f1: present.then(|| 2.0 * t / (2.0 * t + p + n)),
                }
            })
            .collect();
        let supported = || per_class.iter().filter(|c| c.tp + c.fn_ > 0);
        let (tp, fp, fn_) = per_class
            .iter()
            .fold((0u64, 0u64, 0u64), |(a, b, c), m| (a + m.tp, b + m.fp, c + m.fn_));
        SegmentationMetrics {
            mean_iou: mean(supported().filter_map(|c| c.iou)),
            mean_iou_present: mean(per_class.iter().filter_map(|c| c.iou)),
            micro_f1: ratio(2.0 * tp as f64, (2 * tp + fp + fn_) as f64),
            macro_f1: mean(supported().filter_map(|c| c.f1)),
            per_class,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable")
    }

    /// Classes as columns, IoU and F1 as rows, averages last. Classes absent
    /// from both inputs print as `-`.
    pub fn to_table(&self) -> String {
        let cell = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
        let width = self.per_class.iter().map(|c| c.class.len()).max().unwrap_or(0).max(7);
        let mut out = format!("{:<8}", "metric");
        for c in &self.per_class {
            write!(out, " {:>width$}", c.class).unwrap();
        }
        writeln!(out, " {:>width$}", "average").unwrap();
        write!(out, "{:<8}", "IoU").unwrap();
        for c in &self.per_class {
            write!(out, " {:>width$}", cell(c.iou)).unwrap();
        }
        writeln!(out, " {:>width$}", cell(Some(self.mean_iou))).unwrap();
        write!(out, "{:<8}", "F1").unwrap();
        for c in &self.per_class {
            write!(out, " {:>width$}", cell(c.f1)).unwrap();
        }
        writeln!(out, " {:>width$}", cell(Some(self.micro_f1))).unwrap();
        writeln!(
            out,
            "mean IoU (present in either) {:.4}, macro F1 {:.4}",
            self.mean_iou_present, self.macro_f1
        )
        .unwrap();
        out
    }
}

/// Per-class IoU / F1 of point-aligned label arrays.
pub fn segmentation_metrics(gt: &[u16], pred: &[u16], classes: &[String]) -> Result<SegmentationMetrics, EvalError> {
    let m = ConfusionMatrix::from_labels(gt, pred, classes.len())?;
    Ok(SegmentationMetrics::from_confusion(&m, classes))
}

/// Fraction of queries whose first `k` ranked ids contain a relevant id. A
/// query with no relevant ids is a miss; no queries gives 0.
pub fn recall_at_k<T: Ord>(rankings: &[Vec<T>], relevant: &[BTreeSet<T>], k: usize) -> Result<f64, EvalError> {
    if k == 0 {
        return Err(EvalError::ZeroK);
    }
    if rankings.len() != relevant.len() {
        return Err(EvalError::LengthMismatch { gt: relevant.len(), pred: rankings.len() });
    }
    let hits = rankings
        .iter()
        .zip(relevant)
        .filter(|(ranked, rel)| ranked.iter().take(k).any(|id| rel.contains(id)))
        .count();
    Ok(ratio(hits as f64, rankings.len() as f64))
}

/// For each ground-truth point, the label of the nearest predicted point
/// within `radius` (lowest index on equal distance), else [`UNLABELED`].
pub fn point_alignment(gt: &[Point], pred: &[Point], pred_labels: &[u16], radius: f64) -> Result<Vec<u16>, EvalError> {
    if !(radius > 0.0) {
        return Err(EvalError::Radius);
    }
    if pred.len() != pred_labels.len() {
        return Err(EvalError::LengthMismatch { gt: pred.len(), pred: pred_labels.len() });
    }
    let key = |p: &Point| {
        (
            (p.x / radius).floor() as i64,
            (p.y / radius).floor() as i64,
            (p.z / radius).floor() as i64,
        )
    };
    let mut grid: FnvHashMap<(i64, i64, i64), Vec<usize>> = FnvHashMap::default();
    for (i, p) in pred.iter().enumerate() {
        grid.entry(key(p)).or_default().push(i);
    }
    let r2 = radius * radius;
    Ok(gt
        .iter()
        .map(|g| {
            let (x, y, z) = key(g);
            let mut best: Option<(f64, usize)> = None;
            for dx in -1..=1 {
                for dy in -1..=1 {
                    for dz in -1..=1 {
                        for &i in grid.get(&(x + dx, y + dy, z + dz)).into_iter().flatten() {
                            let d = (pred[i] - g).norm_squared();
                            if d <= r2 && best.is_none_or(|(bd, bi)| d < bd || (d == bd && i < bi)) {
                                best = Some((d, i));
                            }
                        }
                    }
                }
            }
            best.map_or(UNLABELED, |(_, i)| pred_labels[i])
        })
        .collect())
}

/// Aligns a predicted cloud to a ground-truth cloud and scores it. Classes are
/// matched by name; predicted classes unknown to the ground truth are appended
/// to the class list.
pub fn evaluate_clouds(gt: &LabeledCloud, pred: &LabeledCloud, radius: f64) -> Result<SegmentationMetrics, EvalError> {
    gt.validate()?;
    pred.validate()?;
    let mut classes = gt.classes.clone();
    let remap: Vec<u16> = pred
        .classes
        .iter()
        .map(|name| match classes.iter().position(|c| c == name) {
            Some(i) => i as u16,
            None => {
                classes.push(name.clone());
                (classes.len() - 1) as u16
            }
        })
        .collect();
    let pred_labels: Vec<u16> = pred
        .labels
        .iter()
        .map(|&l| if l == UNLABELED { UNLABELED } else { remap[l as usize] })
        .collect();
    let aligned = point_alignment(&gt.points, &pred.points, &pred_labels, radius)?;
    segmentation_metrics(&gt.labels, &aligned, &classes)
}
