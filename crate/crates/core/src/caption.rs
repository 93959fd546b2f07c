//! Caption text: tokenization, TF-IDF similarity and caption merging.

use std::collections::{BTreeMap, BTreeSet, HashMap};

/// Lowercases, strips punctuation and splits on whitespace.
///
/// Characters that are neither alphanumeric nor whitespace are removed (so
/// `"car's"` becomes `"cars"`).
pub fn tokenize(text: &str) -> Vec<String> {
    let cleaned: String = text
        .chars()
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .flat_map(char::to_lowercase)
        .collect();
    cleaned.split_whitespace().map(str::to_owned).collect()
}

/// Document frequencies over a set of captions.
#[derive(Debug, Clone, Default)]
pub struct CaptionCorpus {
    documents: usize,
    df: HashMap<String, usize>,
}

impl CaptionCorpus {
    pub fn new<'a>(captions: impl IntoIterator<Item = &'a str>) -> Self {
        let mut corpus = CaptionCorpus::default();
        for c in captions {
            corpus.add(c);
        }
        corpus
    }

    pub fn add(&mut self, caption: &str) {
        self.documents += 1;
        let unique: BTreeSet<String> = tokenize(caption).into_iter().collect();
        for t in unique {
            *self.df.entry(t).or_default() += 1;
        }
    }

    pub fn len(&self) -> usize {
        self.documents
    }

    pub fn is_empty(&self) -> bool {
        self.documents == 0
    }

    /// Smoothed inverse document frequency `ln((1 + N) / (1 + df)) + 1`.
    pub fn idf(&self, term: &str) -> f64 {
        let df = self.df.get(term).copied().unwrap_or(0) as f64;
        ((1.0 + self.documents as f64) / (1.0 + df)).ln() + 1.0
    }

    /// Raw-count TF times smoothed IDF, keyed by term.
    pub fn vectorize(&self, text: &str) -> BTreeMap<String, f64> {
        let mut tf: BTreeMap<String, f64> = BTreeMap::new();
        for t in tokenize(text) {
            *tf.entry(t).or_default() += 1.0;
        }
        for (term, w) in tf.iter_mut() {
            *w *= self.idf(term);
        }
        tf
    }
}

/// Cosine similarity of the TF-IDF vectors of two captions, in [0, 1].
pub fn caption_similarity(a: &str, b: &str, corpus: &CaptionCorpus) -> f64 {
    let (va, vb) = (corpus.vectorize(a), corpus.vectorize(b));
    let na: f64 = va.values().map(|w| w * w).sum();
    let nb: f64 = vb.values().map(|w| w * w).sum();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    let dot: f64 = va
        .iter()
        .filter_map(|(t, w)| vb.get(t).map(|x| w * x))
        .sum();
    if dot <= 0.0 {
        return 0.0;
    }
    (dot / (na * nb).sqrt()).min(1.0)
}

/// Jaccard index of the token sets of two captions.
pub fn token_jaccard(a: &str, b: &str) -> f64 {
    let sa: BTreeSet<String> = tokenize(a).into_iter().collect();
    let sb: BTreeSet<String> = tokenize(b).into_iter().collect();
    let union = sa.union(&sb).count();
    if union == 0 {
        return 1.0;
    }
    sa.intersection(&sb).count() as f64 / union as f64
}

/// Combines the caption of a new observation with the stored caption.
pub trait CaptionMerger: Send + Sync {
    fn merge(&self, new: &str, old: &str) -> String;
}

/// Keeps the longer caption and appends the shorter one after `"; "` when
/// their token sets overlap by less than `min_jaccard`. Equal lengths are
/// ordered lexicographically.
#[derive(Debug, Clone, Copy)]
pub struct JaccardMerger {
    pub min_jaccard: f64,
}

impl Default for JaccardMerger {
    fn default() -> Self {
        JaccardMerger { min_jaccard: 0.5 }
    }
}

impl CaptionMerger for JaccardMerger {
    fn merge(&self, new: &str, old: &str) -> String {
        if new == old {
            return new.to_owned();
        }
        let (long, short) = match new.chars().count().cmp(&old.chars().count()) {
            std::cmp::Ordering::Greater => (new, old),
            std::cmp::Ordering::Less => (old, new),
            std::cmp::Ordering::Equal => {
                if new <= old {
                    (new, old)
                } else {
                    (old, new)
                }
            }
        };
        if token_jaccard(new, old) < self.min_jaccard {
            format!("{long}; {short}")
        } else {
            long.to_owned()
        }
    }
}

pub fn merge_captions(new: &str, old: &str, merger: &dyn CaptionMerger) -> String {
    merger.merge(new, old)
}
