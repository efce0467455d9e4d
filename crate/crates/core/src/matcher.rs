//! 2D-to-3D correspondence search against a hybrid model: unique matches from
//! the full-point set via within-word nearest neighbour plus ratio test, and
//! multi-matches from the compressed set via word equality.

use crate::hybrid::HybridModel;
use crate::scene::QueryImage;
use crate::vocab::Vocabulary;
use nalgebra::Vector2;
use serde::Serialize;

/// A one-to-one match between a query feature and a full point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UniqueMatch {
    pub feature_index: usize,
    #[serde(skip)]
    pub pixel: Vector2<f64>,
    pub point_id: u32,
    pub distance_sq: u64,
    /// Second-nearest distance within the word; `None` for singleton words.
    pub runner_up_sq: Option<u64>,
}

/// A one-to-many match between a query feature and compressed points sharing
/// its visual word.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MultiMatch {
    pub feature_index: usize,
    #[serde(skip)]
    pub pixel: Vector2<f64>,
    pub word: u32,
    /// Ascending point ids, truncated to the per-feature cap.
    pub point_ids: Vec<u32>,
}

/// All correspondences of one query image.
#[derive(Debug, Clone, Default, Serialize)]
pub struct MatchSet {
    pub unique: Vec<UniqueMatch>,
    pub multi: Vec<MultiMatch>,
}

fn assign_words(query: &QueryImage, vocab: &Vocabulary) -> Vec<u32> {
    query
        .features
        .iter()
        .map(|f| vocab.assign(&f.descriptor))
        .collect()
}

/// Match query features against the full-point set.
///
/// Per feature: assign its word, rank the word's full points by integer
/// squared descriptor distance, and accept the nearest when
/// `d1 < ratio^2 * d2` (squared-domain ratio test). A word with exactly one
/// member is accepted unconditionally. If two features match the same point,
/// the smaller-distance one survives. Output is sorted by feature index.
pub fn match_unique(
    query: &QueryImage,
    model: &HybridModel,
    vocab: &Vocabulary,
    ratio: f64,
) -> Vec<UniqueMatch> {
    let words = assign_words(query, vocab);
    match_unique_with_words(query, model, &words, ratio)
}

fn match_unique_with_words(
    query: &QueryImage,
    model: &HybridModel,
    words: &[u32],
    ratio: f64,
) -> Vec<UniqueMatch> {
    let ratio_sq = ratio * ratio;
    // point id -> best match so far (smallest distance wins, then earliest feature)
    let mut best: std::collections::BTreeMap<u32, UniqueMatch> = std::collections::BTreeMap::new();

    for (feature_index, feature) in query.features.iter().enumerate() {
        let members = model.full_ids_in_word(words[feature_index]);
        if members.is_empty() {
            continue;
        }
        let candidate = if members.len() == 1 {
            let point = model.full_by_id(members[0]).expect("indexed id");
            UniqueMatch {
                feature_index,
                pixel: feature.pixel,
                point_id: point.id,
                distance_sq: feature.descriptor.distance_sq(&point.mean_descriptor),
                runner_up_sq: None,
            }
        } else {
            // Members are in ascending id order, so with strict comparisons
            // equal distances resolve to the lowest point id.
            let mut nearest = (u64::MAX, 0u32);
            let mut second = u64::MAX;
            for &id in members {
                let point = model.full_by_id(id).expect("indexed id");
                let d = feature.descriptor.distance_sq(&point.mean_descriptor);
                if d < nearest.0 {
                    second = nearest.0;
                    nearest = (d, id);
                } else if d < second {
                    second = d;
                }
            }
            if (nearest.0 as f64) < ratio_sq * (second as f64) {
                UniqueMatch {
                    feature_index,
                    pixel: feature.pixel,
                    point_id: nearest.1,
                    distance_sq: nearest.0,
                    runner_up_sq: Some(second),
                }
            } else {
                continue;
            }
        };

        match best.get(&candidate.point_id) {
            Some(existing) if existing.distance_sq <= candidate.distance_sq => {}
            _ => {
                best.insert(candidate.point_id, candidate);
            }
        }
    }

    let mut out: Vec<UniqueMatch> = best.into_values().collect();
    out.sort_by_key(|m| m.feature_index);
    out
}

/// Match query features against the compressed set: every compressed point
/// sharing the feature's word, truncated to `cap` lowest ids. Features whose
/// word holds no compressed points are omitted. Output is sorted by feature
/// index.
pub fn match_multi(
    query: &QueryImage,
    model: &HybridModel,
    vocab: &Vocabulary,
    cap: usize,
) -> Vec<MultiMatch> {
    let words = assign_words(query, vocab);
    match_multi_with_words(query, model, &words, cap)
}

fn match_multi_with_words(
    query: &QueryImage,
    model: &HybridModel,
    words: &[u32],
    cap: usize,
) -> Vec<MultiMatch> {
    let mut out = Vec::new();
    for (feature_index, feature) in query.features.iter().enumerate() {
        let members = model.compressed_ids_in_word(words[feature_index]);
        if members.is_empty() {
            continue;
        }
        let point_ids: Vec<u32> = members.iter().copied().take(cap).collect();
        out.push(MultiMatch {
            feature_index,
            pixel: feature.pixel,
            word: words[feature_index],
            point_ids,
        });
    }
    out
}

/// Run both match stages with a single word assignment pass.
pub fn match_query(
    query: &QueryImage,
    model: &HybridModel,
    vocab: &Vocabulary,
    ratio: f64,
    cap: usize,
) -> MatchSet {
    let words = assign_words(query, vocab);
    MatchSet {
        unique: match_unique_with_words(query, model, &words, ratio),
        multi: match_multi_with_words(query, model, &words, cap),
    }
}
