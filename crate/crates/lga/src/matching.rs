//! Distances between fused prototypes and their conversion to class
//! probabilities.
//!
//! The video-video route measures a phase-aligned bidirectional mean
//! Hausdorff distance ([`ab_mhm`]): within each phase, every query row is
//! charged the Euclidean distance to its nearest support row in the same
//! phase and vice versa, the phase totals are summed, and the result is
//! scaled by `1/T` for the query's frame count `T`. [`bi_mhm`] is the
//! unaligned baseline, computed over all rows with phase boundaries
//! ignored. Negated distances become class probabilities through a softmax.
//!
//! The video-text route scores each class by the summed inner products
//! between mean-pooled query phase rows and the class's per-phase text
//! embeddings. Both probability vectors can be blended with a weighted
//! geometric mean ([`combine`]) controlled by `alpha` (1 = video only,
//! 0 = text only).

use ndarray::ArrayView2;
use thiserror::Error;

use crate::fusion::Prototype;
use crate::text::TextAnatomy;

/// Errors from distance computation and score combination.
#[derive(Debug, Error)]
pub enum MatchError {
    #[error("query has {query} phases but support has {support}")]
    PhaseCountMismatch { query: usize, support: usize },
    #[error("query dim {query} does not match {what} dim {other}")]
    DimMismatch { query: usize, other: usize, what: String },
    #[error("frame count for normalization must be positive")]
    ZeroFrames,
    #[error("class list is empty")]
    NoClasses,
    #[error("class {class_id} has no support prototypes")]
    NoSupports { class_id: i64 },
    #[error("class {class_id} appears more than once")]
    DuplicateClass { class_id: i64 },
    #[error("score vectors disagree on class ids (position {position}: {left} vs {right})")]
    ClassIdMismatch { position: usize, left: i64, right: i64 },
    #[error("score vectors have different lengths ({left} vs {right})")]
    LengthMismatch { left: usize, right: usize },
    #[error("{what} must be finite, got {value}")]
    NonFinite { what: String, value: f64 },
    #[error("bad configuration: {reason}")]
    BadConfig { reason: String },
    #[error("combination is degenerate: every blended weight is zero")]
    DegenerateCombination,
}

/// Video-video distance choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    /// Phase-aligned bidirectional mean Hausdorff distance.
    AbMhm,
    /// Unaligned baseline over all rows.
    BiMhm,
}

impl Metric {
    /// Dispatches to [`ab_mhm`] or [`bi_mhm`].
    pub fn distance(
        &self,
        query: &Prototype,
        support: &Prototype,
        frames: usize,
    ) -> Result<f64, MatchError> {
        match self {
            Metric::AbMhm => ab_mhm(query, support, frames),
            Metric::BiMhm => bi_mhm(query, support, frames),
        }
    }
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Metric::AbMhm => "ab_mhm",
            Metric::BiMhm => "bi_mhm",
        })
    }
}

/// How the K per-support distances of a class collapse to one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KshotReduction {
    MeanDistance,
    MinDistance,
}

impl std::fmt::Display for KshotReduction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            KshotReduction::MeanDistance => "mean_distance",
            KshotReduction::MinDistance => "min_distance",
        })
    }
}

/// Which route produced a probability vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreSource {
    VideoVideo,
    VideoText,
    Combined,
}

/// Knobs shared by the scoring routes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchConfig {
    /// Geometric-mean weight of the video-video route, in `[0, 1]`.
    pub alpha: f64,
    /// Divisor applied to video-text inner products before the softmax.
    pub temperature_vt: f64,
    pub metric: Metric,
    pub kshot_reduction: KshotReduction,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            temperature_vt: 1.0,
            metric: Metric::AbMhm,
            kshot_reduction: KshotReduction::MeanDistance,
        }
    }
}

impl MatchConfig {
    pub fn validate(&self) -> Result<(), MatchError> {
        if !self.alpha.is_finite() || !(0.0..=1.0).contains(&self.alpha) {
            return Err(MatchError::BadConfig {
                reason: format!("alpha must lie in [0, 1], got {}", self.alpha),
            });
        }
        if !self.temperature_vt.is_finite() || self.temperature_vt <= 0.0 {
            return Err(MatchError::BadConfig {
                reason: format!("temperature must be positive, got {}", self.temperature_vt),
            });
        }
        Ok(())
    }
}

/// A probability distribution over candidate classes.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassScores {
    class_ids: Vec<i64>,
    probs: Vec<f64>,
    source: ScoreSource,
}

fn check_class_ids(class_ids: &[i64]) -> Result<(), MatchError> {
    if class_ids.is_empty() {
        return Err(MatchError::NoClasses);
    }
    let mut seen = std::collections::BTreeSet::new();
    for &id in class_ids {
        if !seen.insert(id) {
            return Err(MatchError::DuplicateClass { class_id: id });
        }
    }
    Ok(())
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|v| v / sum).collect()
}

impl ClassScores {
    /// Softmax over negated distances: the smallest distance gets the
    /// largest probability.
    pub fn from_distances(
        class_ids: Vec<i64>,
        distances: &[f64],
        source: ScoreSource,
    ) -> Result<Self, MatchError> {
        let logits: Vec<f64> = distances.iter().map(|&d| -d).collect();
        Self::from_logits(class_ids, &logits, source)
    }

    /// Softmax over raw logits.
    pub fn from_logits(
        class_ids: Vec<i64>,
        logits: &[f64],
        source: ScoreSource,
    ) -> Result<Self, MatchError> {
        check_class_ids(&class_ids)?;
        if class_ids.len() != logits.len() {
            return Err(MatchError::LengthMismatch { left: class_ids.len(), right: logits.len() });
        }
        if let Some(&bad) = logits.iter().find(|v| !v.is_finite()) {
            return Err(MatchError::NonFinite { what: "logit".into(), value: bad });
        }
        Ok(Self { class_ids, probs: softmax(logits), source })
    }

    fn from_probs(class_ids: Vec<i64>, probs: Vec<f64>, source: ScoreSource) -> Self {
        Self { class_ids, probs, source }
    }

    pub fn class_ids(&self) -> &[i64] {
        &self.class_ids
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn source(&self) -> ScoreSource {
        self.source
    }

    pub fn len(&self) -> usize {
        self.class_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.class_ids.is_empty()
    }

    pub fn prob_of(&self, class_id: i64) -> Option<f64> {
        self.class_ids.iter().position(|&id| id == class_id).map(|i| self.probs[i])
    }

    /// The highest-probability class; ties go to the earliest position.
    pub fn best(&self) -> (i64, f64) {
        let mut idx = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[idx] {
                idx = i;
            }
        }
        (self.class_ids[idx], self.probs[idx])
    }
}

/// Sum over `from` rows of the Euclidean distance to the nearest `to` row.
fn directed_min_distance_sum(from: ArrayView2<'_, f64>, to: ArrayView2<'_, f64>) -> f64 {
    let mut sum = 0.0;
    for a in from.rows() {
        let mut best = f64::INFINITY;
        for b in to.rows() {
            let mut d2 = 0.0;
            for (x, y) in a.iter().zip(b.iter()) {
                let diff = x - y;
                d2 += diff * diff;
            }
            if d2 < best {
                best = d2;
            }
        }
        sum += best.sqrt();
    }
    sum
}

fn check_pair(query: &Prototype, support: &Prototype, frames: usize) -> Result<(), MatchError> {
    if frames == 0 {
        return Err(MatchError::ZeroFrames);
    }
    if query.dim() != support.dim() {
        return Err(MatchError::DimMismatch {
            query: query.dim(),
            other: support.dim(),
            what: format!("support {}", support.video_id()),
        });
    }
    Ok(())
}

/// Phase-aligned bidirectional mean Hausdorff distance between two
/// prototypes, scaled by `1/frames` (the query's frame count).
pub fn ab_mhm(query: &Prototype, support: &Prototype, frames: usize) -> Result<f64, MatchError> {
    check_pair(query, support, frames)?;
    if query.phases() != support.phases() {
        return Err(MatchError::PhaseCountMismatch { query: query.phases(), support: support.phases() });
    }
    let mut total = 0.0;
    for k in 0..query.phases() {
        let q = query.phase_rows(k);
        let s = support.phase_rows(k);
        total += directed_min_distance_sum(q, s);
        total += directed_min_distance_sum(s, q);
    }
    Ok(total / frames as f64)
}

/// Unaligned bidirectional mean Hausdorff distance over all rows, scaled by
/// `1/frames`.
pub fn bi_mhm(query: &Prototype, support: &Prototype, frames: usize) -> Result<f64, MatchError> {
    check_pair(query, support, frames)?;
    let q = query.rows().view();
    let s = support.rows().view();
    let total = directed_min_distance_sum(q, s) + directed_min_distance_sum(s, q);
    Ok(total / frames as f64)
}

/// Collapses per-support distances of one class per the configured
/// reduction.
pub fn reduce_kshot(distances: &[f64], reduction: KshotReduction) -> f64 {
    match reduction {
        KshotReduction::MeanDistance => distances.iter().sum::<f64>() / distances.len() as f64,
        KshotReduction::MinDistance => distances.iter().copied().fold(f64::INFINITY, f64::min),
    }
}

/// Scores one query against per-class support prototypes: the per-support
/// distances collapse via `cfg.kshot_reduction`, and negated class
/// distances feed a softmax.
pub fn video_video_scores(
    query: &Prototype,
    class_supports: &[(i64, Vec<Prototype>)],
    cfg: &MatchConfig,
) -> Result<ClassScores, MatchError> {
    cfg.validate()?;
    if class_supports.is_empty() {
        return Err(MatchError::NoClasses);
    }
    let frames = query.source_frames();
    let mut class_ids = Vec::with_capacity(class_supports.len());
    let mut distances = Vec::with_capacity(class_supports.len());
    for (class_id, supports) in class_supports {
        if supports.is_empty() {
            return Err(MatchError::NoSupports { class_id: *class_id });
        }
        let per_support = supports
            .iter()
            .map(|s| cfg.metric.distance(query, s, frames))
            .collect::<Result<Vec<_>, _>>()?;
        class_ids.push(*class_id);
        distances.push(reduce_kshot(&per_support, cfg.kshot_reduction));
    }
    ClassScores::from_distances(class_ids, &distances, ScoreSource::VideoVideo)
}

/// Raw alignment between a query prototype and one class's text anatomy:
/// the sum over phases of the inner product between the mean-pooled query
/// phase rows and the phase's text embedding. No temperature applied.
pub fn text_match_score(query: &Prototype, text: &TextAnatomy) -> Result<f64, MatchError> {
    if text.phases() != query.phases() {
        return Err(MatchError::PhaseCountMismatch { query: query.phases(), support: text.phases() });
    }
    if text.dim() != query.dim() {
        return Err(MatchError::DimMismatch {
            query: query.dim(),
            other: text.dim(),
            what: format!("text for class {}", text.class_id()),
        });
    }
    let mut score = 0.0;
    for k in 0..query.phases() {
        let rows = query.phase_rows(k);
        let pooled = rows.mean_axis(ndarray::Axis(0)).expect("phase rows are non-empty");
        score += pooled.dot(&text.phase(k));
    }
    Ok(score)
}

/// Scores one query against per-class text anatomies via
/// [`text_match_score`] divided by `cfg.temperature_vt`, softmaxed.
pub fn video_text_scores(
    query: &Prototype,
    texts: &[&TextAnatomy],
    cfg: &MatchConfig,
) -> Result<ClassScores, MatchError> {
    cfg.validate()?;
    if texts.is_empty() {
        return Err(MatchError::NoClasses);
    }
    let mut class_ids = Vec::with_capacity(texts.len());
    let mut logits = Vec::with_capacity(texts.len());
    for text in texts {
        class_ids.push(text.class_id());
        logits.push(text_match_score(query, text)? / cfg.temperature_vt);
    }
    ClassScores::from_logits(class_ids, &logits, ScoreSource::VideoText)
}

/// Blends video-video and video-text probabilities with a weighted
/// geometric mean, `w_i = p_vv_i^alpha * p_vt_i^(1-alpha)`, renormalized.
///
/// The endpoints are exact: `alpha = 1` returns the video-video
/// probabilities unchanged and `alpha = 0` the video-text ones (under the
/// `0^0 := 1` convention the general formula agrees, but the endpoints are
/// special-cased so equality is bitwise). If every blended weight is zero —
/// possible when the two routes put their zeros on complementary classes —
/// a [`MatchError::DegenerateCombination`] error is returned.
pub fn combine(p_vv: &ClassScores, p_vt: &ClassScores, alpha: f64) -> Result<ClassScores, MatchError> {
    if !alpha.is_finite() || !(0.0..=1.0).contains(&alpha) {
        return Err(MatchError::BadConfig { reason: format!("alpha must lie in [0, 1], got {alpha}") });
    }
    if p_vv.len() != p_vt.len() {
        return Err(MatchError::LengthMismatch { left: p_vv.len(), right: p_vt.len() });
    }
    for (i, (&l, &r)) in p_vv.class_ids.iter().zip(&p_vt.class_ids).enumerate() {
        if l != r {
            return Err(MatchError::ClassIdMismatch { position: i, left: l, right: r });
        }
    }
    if alpha == 1.0 {
        return Ok(ClassScores::from_probs(
            p_vv.class_ids.clone(),
            p_vv.probs.clone(),
            ScoreSource::Combined,
        ));
    }
    if alpha == 0.0 {
        return Ok(ClassScores::from_probs(
            p_vt.class_ids.clone(),
            p_vt.probs.clone(),
            ScoreSource::Combined,
        ));
    }
    let weights: Vec<f64> = p_vv
        .probs
        .iter()
        .zip(&p_vt.probs)
        .map(|(&v, &t)| v.powf(alpha) * t.powf(1.0 - alpha))
        .collect();
    let sum: f64 = weights.iter().sum();
    if sum <= 0.0 || !sum.is_finite() {
        return Err(MatchError::DegenerateCombination);
    }
    let probs = weights.into_iter().map(|w| w / sum).collect();
    Ok(ClassScores::from_probs(p_vv.class_ids.clone(), probs, ScoreSource::Combined))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use proptest::prelude::*;

    fn proto(rows: Array2<f64>, phase_sizes: Vec<usize>, frames: usize) -> Prototype {
        Prototype::new(rows, phase_sizes, frames, "test", None).unwrap()
    }

    #[test]
    fn aligned_distance_matches_hand_computation() {
        // 1-D features, L=2: query phases {0} and {2}, support {0} and {3}.
        let query = proto(array![[0.0], [2.0]], vec![1, 1], 2);
        let support = proto(array![[0.0], [3.0]], vec![1, 1], 2);
        let d = ab_mhm(&query, &support, 2).unwrap();
        assert_eq!(d, 1.0);
    }

    #[test]
    fn unaligned_distance_matches_hand_computation() {
        let query = proto(array![[0.0], [2.0]], vec![2], 2);
        let support = proto(array![[0.0], [3.0]], vec![2], 2);
        assert_eq!(bi_mhm(&query, &support, 2).unwrap(), 1.0);
        // Phase boundaries are invisible to the unaligned metric.
        let query_split = proto(array![[0.0], [2.0]], vec![1, 1], 2);
        let support_split = proto(array![[0.0], [3.0]], vec![1, 1], 2);
        assert_eq!(bi_mhm(&query_split, &support_split, 2).unwrap(), 1.0);
    }

    #[test]
    fn identical_prototypes_are_at_distance_zero() {
        let p = proto(array![[0.5, -1.0], [2.0, 0.25], [1.0, 1.0]], vec![2, 1], 3);
        assert_eq!(ab_mhm(&p, &p, 3).unwrap(), 0.0);
        assert_eq!(bi_mhm(&p, &p, 3).unwrap(), 0.0);
    }

    #[test]
    fn single_phase_reduces_to_unaligned() {
        let query = proto(array![[0.1, 0.2], [1.5, -0.5], [0.0, 3.0]], vec![3], 3);
        let support = proto(array![[2.0, 0.0], [-1.0, 1.0]], vec![2], 3);
        let a = ab_mhm(&query, &support, 3).unwrap();
        let b = bi_mhm(&query, &support, 3).unwrap();
        assert!((a - b).abs() <= 1e-9);
    }

    #[test]
    fn mismatches_are_rejected() {
        let q = proto(array![[0.0], [1.0]], vec![1, 1], 2);
        let s = proto(array![[0.0]], vec![1], 1);
        assert!(matches!(
            ab_mhm(&q, &s, 2),
            Err(MatchError::PhaseCountMismatch { query: 2, support: 1 })
        ));
        let wide = proto(array![[0.0, 0.0]], vec![1], 1);
        assert!(matches!(bi_mhm(&q, &wide, 2), Err(MatchError::DimMismatch { .. })));
        assert!(matches!(ab_mhm(&q, &q, 0), Err(MatchError::ZeroFrames)));
    }

    #[test]
    fn softmax_of_negated_distances_matches_direct_evaluation() {
        let scores =
            ClassScores::from_distances(vec![10, 11, 12], &[0.0, 1.0, 2.0], ScoreSource::VideoVideo)
                .unwrap();
        let expected = [0.66524096, 0.24472847, 0.09003057];
        for (p, e) in scores.probs().iter().zip(expected) {
            assert!((p - e).abs() < 1e-8);
        }
        assert_eq!(scores.best().0, 10);
        let sum: f64 = scores.probs().iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn equal_distances_give_uniform_probabilities() {
        let scores =
            ClassScores::from_distances(vec![0, 1, 2], &[0.7, 0.7, 0.7], ScoreSource::VideoVideo)
                .unwrap();
        for &p in scores.probs() {
            assert!((p - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn shifting_all_distances_leaves_probabilities_unchanged() {
        let a = ClassScores::from_distances(vec![0, 1, 2], &[0.3, 1.4, 2.2], ScoreSource::VideoVideo)
            .unwrap();
        let b =
            ClassScores::from_distances(vec![0, 1, 2], &[100.3, 101.4, 102.2], ScoreSource::VideoVideo)
                .unwrap();
        for (x, y) in a.probs().iter().zip(b.probs()) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn score_constructors_validate_inputs() {
        assert!(matches!(
            ClassScores::from_logits(vec![], &[], ScoreSource::VideoText),
            Err(MatchError::NoClasses)
        ));
        assert!(matches!(
            ClassScores::from_logits(vec![1, 1], &[0.0, 0.0], ScoreSource::VideoText),
            Err(MatchError::DuplicateClass { class_id: 1 })
        ));
        assert!(matches!(
            ClassScores::from_logits(vec![1, 2], &[0.0], ScoreSource::VideoText),
            Err(MatchError::LengthMismatch { .. })
        ));
        assert!(matches!(
            ClassScores::from_logits(vec![1], &[f64::NAN], ScoreSource::VideoText),
            Err(MatchError::NonFinite { .. })
        ));
    }

    #[test]
    fn kshot_reductions_shape_class_scores() {
        let query = proto(array![[0.0]], vec![1], 1);
        let near_far = vec![proto(array![[1.0]], vec![1], 1), proto(array![[3.0]], vec![1], 1)];
        let middle = vec![proto(array![[2.0]], vec![1], 1)];
        // Distances with T=1: class 1 supports at 2 and 6, class 2 at 4.
        let classes = vec![(1i64, near_far), (2i64, middle)];

        let mean_cfg = MatchConfig::default();
        let mean_scores = video_video_scores(&query, &classes, &mean_cfg).unwrap();
        assert!((mean_scores.probs()[0] - 0.5).abs() < 1e-12);

        let min_cfg = MatchConfig { kshot_reduction: KshotReduction::MinDistance, ..MatchConfig::default() };
        let min_scores = video_video_scores(&query, &classes, &min_cfg).unwrap();
        assert_eq!(min_scores.best().0, 1);
        assert!(min_scores.prob_of(1).unwrap() > min_scores.prob_of(2).unwrap());
    }

    #[test]
    fn video_scores_reject_bad_class_lists() {
        let query = proto(array![[0.0]], vec![1], 1);
        assert!(matches!(
            video_video_scores(&query, &[], &MatchConfig::default()),
            Err(MatchError::NoClasses)
        ));
        let classes = vec![(1i64, vec![])];
        assert!(matches!(
            video_video_scores(&query, &classes, &MatchConfig::default()),
            Err(MatchError::NoSupports { class_id: 1 })
        ));
    }

    #[test]
    fn text_scores_match_direct_evaluation() {
        // Query pooled phases are e0, e1, e2 in a 6-dim space; class 7's
        // text rows coincide with them, class 8's are orthogonal.
        let mut query_rows = Array2::<f64>::zeros((3, 6));
        let mut text_a = Array2::<f64>::zeros((3, 6));
        let mut text_b = Array2::<f64>::zeros((3, 6));
        for k in 0..3 {
            query_rows[(k, k)] = 1.0;
            text_a[(k, k)] = 1.0;
            text_b[(k, k + 3)] = 1.0;
        }
        let query = proto(query_rows, vec![1, 1, 1], 3);
        let ta = TextAnatomy::new(7, "a", text_a, None).unwrap();
        let tb = TextAnatomy::new(8, "b", text_b, None).unwrap();
        assert_eq!(text_match_score(&query, &ta).unwrap(), 3.0);
        assert_eq!(text_match_score(&query, &tb).unwrap(), 0.0);

        let scores = video_text_scores(&query, &[&ta, &tb], &MatchConfig::default()).unwrap();
        assert_eq!(scores.class_ids(), &[7, 8]);
        assert!((scores.probs()[0] - 0.95257413).abs() < 1e-6);
        assert!((scores.probs()[1] - 0.04742587).abs() < 1e-6);
        assert_eq!(scores.source(), ScoreSource::VideoText);
    }

    #[test]
    fn identical_texts_split_probability_evenly() {
        let query = proto(array![[1.0, 0.0]], vec![1], 1);
        let rows = array![[0.3, 0.4]];
        let ta = TextAnatomy::new(0, "a", rows.clone(), None).unwrap();
        let tb = TextAnatomy::new(1, "b", rows, None).unwrap();
        let scores = video_text_scores(&query, &[&ta, &tb], &MatchConfig::default()).unwrap();
        assert!((scores.probs()[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn scaling_texts_preserves_the_text_argmax() {
        let query = proto(array![[0.6, -0.2], [0.1, 0.9]], vec![1, 1], 2);
        let base = [array![[0.5, 0.1], [0.2, 0.7]], array![[-0.3, 0.4], [0.9, -0.1]]];
        for c in [0.1, 1.0, 7.5] {
            let texts: Vec<TextAnatomy> = base
                .iter()
                .enumerate()
                .map(|(i, rows)| {
                    TextAnatomy::new(i as i64, format!("c{i}"), rows.mapv(|v| v * c), None).unwrap()
                })
                .collect();
            let refs: Vec<&TextAnatomy> = texts.iter().collect();
            let scores = video_text_scores(&query, &refs, &MatchConfig::default()).unwrap();
            assert_eq!(scores.best().0, 0, "argmax moved at scale {c}");
        }
    }

    #[test]
    fn temperature_flattens_text_probabilities() {
        let query = proto(array![[1.0, 0.0]], vec![1], 1);
        let ta = TextAnatomy::new(0, "a", array![[1.0, 0.0]], None).unwrap();
        let tb = TextAnatomy::new(1, "b", array![[0.0, 1.0]], None).unwrap();
        let sharp = video_text_scores(
            &query,
            &[&ta, &tb],
            &MatchConfig { temperature_vt: 0.1, ..MatchConfig::default() },
        )
        .unwrap();
        let flat = video_text_scores(
            &query,
            &[&ta, &tb],
            &MatchConfig { temperature_vt: 10.0, ..MatchConfig::default() },
        )
        .unwrap();
        assert!(sharp.probs()[0] > flat.probs()[0]);
        assert!(flat.probs()[0] > 0.5);
    }

    fn scores(probs: Vec<f64>, source: ScoreSource) -> ClassScores {
        ClassScores::from_probs(vec![0, 1], probs, source)
    }

    #[test]
    fn combination_endpoints_are_exact() {
        let vv = scores(vec![0.8, 0.2], ScoreSource::VideoVideo);
        let vt = scores(vec![0.3, 0.7], ScoreSource::VideoText);
        let at_one = combine(&vv, &vt, 1.0).unwrap();
        assert_eq!(at_one.probs(), vv.probs());
        assert_eq!(at_one.source(), ScoreSource::Combined);
        let at_zero = combine(&vv, &vt, 0.0).unwrap();
        assert_eq!(at_zero.probs(), vt.probs());
        // Exactness must survive zeros in the inactive factor.
        let vt_zero = scores(vec![0.0, 1.0], ScoreSource::VideoText);
        assert_eq!(combine(&vv, &vt_zero, 1.0).unwrap().probs(), vv.probs());
    }

    #[test]
    fn balanced_blend_of_mirrored_scores_is_uniform() {
        let vv = scores(vec![0.8, 0.2], ScoreSource::VideoVideo);
        let vt = scores(vec![0.2, 0.8], ScoreSource::VideoText);
        let blended = combine(&vv, &vt, 0.5).unwrap();
        assert!((blended.probs()[0] - 0.5).abs() < 1e-12);
        assert!((blended.probs()[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn combination_validates_inputs() {
        let vv = scores(vec![0.8, 0.2], ScoreSource::VideoVideo);
        let vt = ClassScores::from_probs(vec![0, 9], vec![0.3, 0.7], ScoreSource::VideoText);
        assert!(matches!(
            combine(&vv, &vt, 0.5),
            Err(MatchError::ClassIdMismatch { position: 1, left: 1, right: 9 })
        ));
        assert!(matches!(combine(&vv, &vv, 1.5), Err(MatchError::BadConfig { .. })));
        // Complementary zeros wipe out every blended weight.
        let left = scores(vec![1.0, 0.0], ScoreSource::VideoVideo);
        let right = scores(vec![0.0, 1.0], ScoreSource::VideoText);
        assert!(matches!(combine(&left, &right, 0.5), Err(MatchError::DegenerateCombination)));
    }

    #[test]
    fn best_breaks_ties_toward_the_earliest_class() {
        let s = ClassScores::from_probs(vec![4, 2, 9], vec![0.4, 0.4, 0.2], ScoreSource::Combined);
        assert_eq!(s.best(), (4, 0.4));
    }

    #[test]
    fn config_validation_rejects_bad_values() {
        assert!(MatchConfig::default().validate().is_ok());
        let bad_alpha = MatchConfig { alpha: 1.2, ..MatchConfig::default() };
        assert!(bad_alpha.validate().is_err());
        let bad_temp = MatchConfig { temperature_vt: 0.0, ..MatchConfig::default() };
        assert!(bad_temp.validate().is_err());
    }

    /// Random prototype pair sharing phase structure and dim.
    fn prototype_pair() -> impl Strategy<Value = (Prototype, Prototype)> {
        (1usize..=3, 1usize..=4)
            .prop_flat_map(|(phases, dim)| {
                let sizes = proptest::collection::vec(1usize..=3, phases);
                (sizes.clone(), sizes, Just(dim))
            })
            .prop_flat_map(|(sizes_a, sizes_b, dim)| {
                let rows_a: usize = sizes_a.iter().sum();
                let rows_b: usize = sizes_b.iter().sum();
                let vals_a = proptest::collection::vec(-5.0f64..5.0, rows_a * dim);
                let vals_b = proptest::collection::vec(-5.0f64..5.0, rows_b * dim);
                (Just(sizes_a), Just(sizes_b), Just(dim), vals_a, vals_b)
            })
            .prop_map(|(sizes_a, sizes_b, dim, vals_a, vals_b)| {
                let rows_a = vals_a.len() / dim;
                let rows_b = vals_b.len() / dim;
                let a = Prototype::new(
                    Array2::from_shape_vec((rows_a, dim), vals_a).unwrap(),
                    sizes_a,
                    rows_a,
                    "a",
                    None,
                )
                .unwrap();
                let b = Prototype::new(
                    Array2::from_shape_vec((rows_b, dim), vals_b).unwrap(),
                    sizes_b,
                    rows_b,
                    "b",
                    None,
                )
                .unwrap();
                (a, b)
            })
    }

    proptest! {
        #[test]
        fn aligned_distance_is_symmetric_nonnegative_and_zero_on_self((a, b) in prototype_pair()) {
            let t = a.rows().nrows().max(1);
            let ab = ab_mhm(&a, &b, t).unwrap();
            let ba = ab_mhm(&b, &a, t).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert!((ab - ba).abs() <= 1e-9);
            prop_assert_eq!(ab_mhm(&a, &a, t).unwrap(), 0.0);
        }

        #[test]
        fn class_probabilities_follow_distances(
            distances in proptest::collection::vec(0.0f64..10.0, 2..6)
        ) {
            let ids: Vec<i64> = (0..distances.len() as i64).collect();
            let s = ClassScores::from_distances(ids, &distances, ScoreSource::VideoVideo).unwrap();
            let sum: f64 = s.probs().iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-9);
            // argmax of probabilities is argmin of distances
            let best = s.best().0 as usize;
            let min = distances.iter().copied().fold(f64::INFINITY, f64::min);
            prop_assert!((distances[best] - min).abs() < 1e-12);
        }
    }
}
