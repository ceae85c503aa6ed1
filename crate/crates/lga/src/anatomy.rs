//! Temporal decomposition of frame features into ordered phases.
//!
//! A video arrives as a `T x C` matrix of per-frame embeddings. Everything
//! downstream works on a small number `L` of contiguous frame clusters
//! ("phases"), produced either by [`cluster_segment`] — greedy agglomerative
//! merging of the most cosine-similar *adjacent* clusters until `L` remain —
//! or by [`hard_segment`], a plain equal-width split. Both can then widen
//! each cluster with frames borrowed from its immediate neighbours so that
//! phase boundaries stay soft; borrowed frames appear in two clusters at
//! once.
//!
//! All similarity arithmetic runs in `f64` regardless of the `f32` storage
//! precision, and ties in the merge step resolve to the smallest pair index,
//! so segmentations are exactly reproducible.

use ndarray::{Array1, Array2};
use thiserror::Error;

/// Errors from frame validation and segmentation.
#[derive(Debug, Error)]
pub enum AnatomyError {
    /// A frame matrix with zero rows or zero columns.
    #[error("frame matrix for {video:?} must be non-empty, got {rows} x {cols}")]
    EmptyFrames { video: String, rows: usize, cols: usize },
    /// A NaN or infinite feature entry.
    #[error("non-finite feature entry at frame {row}, dim {col}")]
    NonFinite { row: usize, col: usize },
    /// Requested cluster count outside `1..=T`.
    #[error("cluster count {clusters} out of range for {frames} frames (need 1 <= L <= T)")]
    BadClusterCount { clusters: usize, frames: usize },
    /// The mean of an empty frame set is undefined.
    #[error("cannot take the mean of an empty frame set")]
    EmptyCluster,
    /// A frame index referred to a row the matrix does not have.
    #[error("frame index {index} out of range for {frames} frames")]
    FrameIndexOutOfRange { index: usize, frames: usize },
    /// A cluster averaged to the zero vector while cosine similarity was
    /// needed; the range names the offending frames.
    #[error("frames {start}..={end} average to a zero vector; cosine similarity is undefined")]
    DegenerateFeature { start: usize, end: usize },
    /// Cluster lists that do not form a valid ordered partition.
    #[error("invalid cluster layout: {reason}")]
    BadClusters { reason: String },
}

/// Per-frame embeddings for one video: a `T x C` matrix plus identity.
///
/// Construction validates shape and finiteness once so downstream stages can
/// rely on both. Storage stays `f32` (the on-disk precision); numeric code
/// widens to `f64` as it reads.
#[derive(Debug, Clone)]
pub struct FrameFeatures {
    frames: Array2<f32>,
    video_id: String,
    class_id: Option<i64>,
}

impl FrameFeatures {
    /// Wraps a `T x C` matrix, rejecting empty shapes and non-finite entries.
    pub fn new(
        video_id: impl Into<String>,
        class_id: Option<i64>,
        frames: Array2<f32>,
    ) -> Result<Self, AnatomyError> {
        let video_id = video_id.into();
        if frames.nrows() == 0 || frames.ncols() == 0 {
            return Err(AnatomyError::EmptyFrames {
                video: video_id,
                rows: frames.nrows(),
                cols: frames.ncols(),
            });
        }
        for ((row, col), &v) in frames.indexed_iter() {
            if !v.is_finite() {
                return Err(AnatomyError::NonFinite { row, col });
            }
        }
        Ok(Self { frames, video_id, class_id })
    }

    /// The `T x C` frame matrix.
    pub fn frames(&self) -> &Array2<f32> {
        &self.frames
    }

    /// Number of frames `T`.
    pub fn len(&self) -> usize {
        self.frames.nrows()
    }

    /// Always false: construction rejects empty matrices.
    pub fn is_empty(&self) -> bool {
        false
    }

    /// Embedding dimension `C`.
    pub fn dim(&self) -> usize {
        self.frames.ncols()
    }

    pub fn video_id(&self) -> &str {
        &self.video_id
    }

    pub fn class_id(&self) -> Option<i64> {
        self.class_id
    }
}

/// An ordered partition of the frame axis into `L` clusters, possibly
/// widened with `overlap` frames borrowed from each neighbour.
///
/// Cluster `k` holds ascending original frame indices. Without overlap the
/// clusters are disjoint contiguous ranges covering `0..T`; with overlap a
/// frame may appear in two adjacent clusters, and the first/last clusters
/// gain nothing on their outer side.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segmentation {
    clusters: Vec<Vec<usize>>,
    overlap: usize,
    source_len: usize,
    source_video: Option<String>,
}

impl Segmentation {
    /// Builds a segmentation from explicit clusters, validating that each is
    /// non-empty, sorted ascending, in range, and that cluster ranges appear
    /// in temporal order.
    pub fn from_clusters(
        clusters: Vec<Vec<usize>>,
        overlap: usize,
        source_len: usize,
        source_video: Option<String>,
    ) -> Result<Self, AnatomyError> {
        if clusters.is_empty() {
            return Err(AnatomyError::BadClusters { reason: "no clusters".into() });
        }
        let mut prev_first: Option<usize> = None;
        for cluster in &clusters {
            if cluster.is_empty() {
                return Err(AnatomyError::BadClusters { reason: "empty cluster".into() });
            }
            for window in cluster.windows(2) {
                if window[0] >= window[1] {
                    return Err(AnatomyError::BadClusters {
                        reason: format!("indices not strictly ascending: {window:?}"),
                    });
                }
            }
            let last = *cluster.last().expect("non-empty");
            if last >= source_len {
                return Err(AnatomyError::FrameIndexOutOfRange { index: last, frames: source_len });
            }
            if let Some(prev) = prev_first {
                if cluster[0] < prev {
                    return Err(AnatomyError::BadClusters {
                        reason: "clusters out of temporal order".into(),
                    });
                }
            }
            prev_first = Some(cluster[0]);
        }
        Ok(Self { clusters, overlap, source_len, source_video })
    }

    /// Number of clusters `L`.
    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    /// Always false: segmentations carry at least one cluster.
    pub fn is_empty(&self) -> bool {
        false
    }

    /// The ordered clusters of ascending frame indices.
    pub fn clusters(&self) -> &[Vec<usize>] {
        &self.clusters
    }

    /// Overlap width the segmentation was built with.
    pub fn overlap(&self) -> usize {
        self.overlap
    }

    /// Frame count `T` of the source video.
    pub fn source_len(&self) -> usize {
        self.source_len
    }

    /// Id of the video the segmentation was computed from, when known.
    pub fn source_video(&self) -> Option<&str> {
        self.source_video.as_deref()
    }

    /// Total row count including duplicated overlap frames.
    pub fn total_rows(&self) -> usize {
        self.clusters.iter().map(Vec::len).sum()
    }
}

/// Mean of the selected frame rows, accumulated in `f64`.
///
/// Errors on an empty index list or an out-of-range index.
pub fn mean_cluster_feature(
    features: &FrameFeatures,
    indices: &[usize],
) -> Result<Array1<f64>, AnatomyError> {
    if indices.is_empty() {
        return Err(AnatomyError::EmptyCluster);
    }
    let frames = features.frames();
    let mut sum = Array1::<f64>::zeros(frames.ncols());
    for &idx in indices {
        if idx >= frames.nrows() {
            return Err(AnatomyError::FrameIndexOutOfRange { index: idx, frames: frames.nrows() });
        }
        for (acc, &v) in sum.iter_mut().zip(frames.row(idx).iter()) {
            *acc += v as f64;
        }
    }
    let count = indices.len() as f64;
    sum.mapv_inplace(|v| v / count);
    Ok(sum)
}

/// Greedy agglomerative segmentation of the frame axis.
///
/// Starts from `T` singleton clusters and repeatedly merges the adjacent
/// pair whose cluster means are most cosine-similar until `clusters` remain;
/// ties pick the smallest pair index. Overlap is injected afterwards: each
/// cluster additionally takes the last `min(overlap, |left|)` indices of its
/// left neighbour and the first `min(overlap, |right|)` of its right
/// neighbour, neighbours meaning the clusters of the pre-overlap partition.
///
/// Errors if `clusters` is outside `1..=T` or if any cluster mean involved
/// in a similarity has zero norm (cosine undefined).
pub fn cluster_segment(
    features: &FrameFeatures,
    clusters: usize,
    overlap: usize,
) -> Result<Segmentation, AnatomyError> {
    let t = features.len();
    if clusters == 0 || clusters > t {
        return Err(AnatomyError::BadClusterCount { clusters, frames: t });
    }

    let mut parts: Vec<Vec<usize>> = (0..t).map(|i| vec![i]).collect();
    while parts.len() > clusters {
        let means = parts
            .iter()
            .map(|p| mean_cluster_feature(features, p))
            .collect::<Result<Vec<_>, _>>()?;
        let norms: Vec<f64> = means.iter().map(|m| m.dot(m).sqrt()).collect();
        for (part, &norm) in parts.iter().zip(&norms) {
            if norm == 0.0 {
                return Err(AnatomyError::DegenerateFeature {
                    start: part[0],
                    end: *part.last().expect("non-empty"),
                });
            }
        }

        let mut best_pair = 0usize;
        let mut best_sim = f64::NEG_INFINITY;
        for j in 0..parts.len() - 1 {
            let sim = means[j].dot(&means[j + 1]) / (norms[j] * norms[j + 1]);
            if sim > best_sim {
                best_sim = sim;
                best_pair = j;
            }
        }
        let right = parts.remove(best_pair + 1);
        parts[best_pair].extend(right);
    }

    Ok(Segmentation {
        clusters: inject_overlap(&parts, overlap),
        overlap,
        source_len: t,
        source_video: Some(features.video_id().to_string()),
    })
}

/// Equal-width segmentation: `T / L` frames per cluster, with the remainder
/// distributed one frame each to the earliest clusters, then the same
/// overlap injection as [`cluster_segment`].
pub fn hard_segment(
    frames: usize,
    clusters: usize,
    overlap: usize,
) -> Result<Segmentation, AnatomyError> {
    if frames == 0 || clusters == 0 || clusters > frames {
        return Err(AnatomyError::BadClusterCount { clusters, frames });
    }
    let base = frames / clusters;
    let remainder = frames % clusters;
    let mut parts = Vec::with_capacity(clusters);
    let mut next = 0usize;
    for k in 0..clusters {
        let size = base + usize::from(k < remainder);
        parts.push((next..next + size).collect::<Vec<_>>());
        next += size;
    }
    debug_assert_eq!(next, frames);
    Ok(Segmentation {
        clusters: inject_overlap(&parts, overlap),
        overlap,
        source_len: frames,
        source_video: None,
    })
}

/// Widens each cluster of a contiguous ordered partition with up to
/// `overlap` frames from each neighbour. Outer edges gain nothing.
fn inject_overlap(parts: &[Vec<usize>], overlap: usize) -> Vec<Vec<usize>> {
    if overlap == 0 {
        return parts.to_vec();
    }
    let mut out = Vec::with_capacity(parts.len());
    for (i, part) in parts.iter().enumerate() {
        let mut cluster = Vec::with_capacity(part.len() + 2 * overlap);
        if i > 0 {
            let left = &parts[i - 1];
            let take = overlap.min(left.len());
            cluster.extend_from_slice(&left[left.len() - take..]);
        }
        cluster.extend_from_slice(part);
        if i + 1 < parts.len() {
            let right = &parts[i + 1];
            let take = overlap.min(right.len());
            cluster.extend_from_slice(&right[..take]);
        }
        out.push(cluster);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn feats(rows: Array2<f32>) -> FrameFeatures {
        FrameFeatures::new("v0", None, rows).unwrap()
    }

    #[test]
    fn rejects_empty_and_non_finite_frames() {
        let err = FrameFeatures::new("v", None, Array2::<f32>::zeros((0, 3))).unwrap_err();
        assert!(matches!(err, AnatomyError::EmptyFrames { .. }));

        let err = FrameFeatures::new("v", None, array![[1.0f32, f32::NAN]]).unwrap_err();
        assert!(matches!(err, AnatomyError::NonFinite { row: 0, col: 1 }));
    }

    #[test]
    fn mean_of_two_rows() {
        let f = feats(array![[2.0, 0.0], [0.0, 2.0]]);
        let mean = mean_cluster_feature(&f, &[0, 1]).unwrap();
        assert_eq!(mean, array![1.0, 1.0]);
    }

    #[test]
    fn mean_of_three_rows_with_thirds() {
        let f = feats(array![[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]]);
        let mean = mean_cluster_feature(&f, &[0, 1, 2]).unwrap();
        assert!((mean[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((mean[1] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn mean_rejects_empty_and_out_of_range() {
        let f = feats(array![[1.0, 0.0]]);
        assert!(matches!(mean_cluster_feature(&f, &[]), Err(AnatomyError::EmptyCluster)));
        assert!(matches!(
            mean_cluster_feature(&f, &[3]),
            Err(AnatomyError::FrameIndexOutOfRange { index: 3, frames: 1 })
        ));
    }

    #[test]
    fn merges_identical_adjacent_rows_first() {
        let f = feats(array![[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]]);
        let seg = cluster_segment(&f, 2, 0).unwrap();
        assert_eq!(seg.clusters(), &[vec![0, 1], vec![2, 3]]);
        assert_eq!(seg.source_len(), 4);
        assert_eq!(seg.source_video(), Some("v0"));
    }

    #[test]
    fn overlap_widens_each_cluster_by_one() {
        let f = feats(array![[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]]);
        let seg = cluster_segment(&f, 2, 1).unwrap();
        assert_eq!(seg.clusters(), &[vec![0, 1, 2], vec![1, 2, 3]]);
        assert_eq!(seg.total_rows(), 6);
    }

    #[test]
    fn similarity_ties_merge_the_earliest_pair() {
        // Both pairs (0,1) and (2,3) have cosine similarity 1; the earlier
        // pair must merge first, which is visible when stopping at L = 3.
        let f = feats(array![[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]]);
        let seg = cluster_segment(&f, 3, 0).unwrap();
        assert_eq!(seg.clusters(), &[vec![0, 1], vec![2], vec![3]]);
    }

    #[test]
    fn one_cluster_and_t_clusters_are_the_trivial_partitions() {
        let f = feats(array![[1.0, 0.1], [0.9, 0.2], [0.2, 1.0]]);
        let all = cluster_segment(&f, 1, 0).unwrap();
        assert_eq!(all.clusters(), &[vec![0, 1, 2]]);
        let singletons = cluster_segment(&f, 3, 0).unwrap();
        assert_eq!(singletons.clusters(), &[vec![0], vec![1], vec![2]]);
    }

    #[test]
    fn cluster_count_out_of_range_errors() {
        let f = feats(array![[1.0, 0.0], [0.0, 1.0]]);
        assert!(matches!(
            cluster_segment(&f, 0, 0),
            Err(AnatomyError::BadClusterCount { clusters: 0, frames: 2 })
        ));
        assert!(matches!(
            cluster_segment(&f, 3, 0),
            Err(AnatomyError::BadClusterCount { clusters: 3, frames: 2 })
        ));
    }

    #[test]
    fn zero_norm_singleton_is_degenerate() {
        let f = feats(array![[0.0, 0.0], [1.0, 1.0]]);
        let err = cluster_segment(&f, 1, 0).unwrap_err();
        assert!(matches!(err, AnatomyError::DegenerateFeature { start: 0, end: 0 }));
    }

    #[test]
    fn cancelling_rows_become_degenerate_after_a_merge() {
        // (1,0) and (-1,0) merge late; once combined their mean is the zero
        // vector and the next round's cosine must fail, naming frames 0..=1.
        let f = feats(array![[1.0, 0.0], [-1.0, 0.0], [5.0, 0.0], [5.0, 0.0]]);
        let err = cluster_segment(&f, 1, 0).unwrap_err();
        assert!(matches!(err, AnatomyError::DegenerateFeature { start: 0, end: 1 }));
    }

    #[test]
    fn hard_segment_gives_earlier_clusters_the_remainder() {
        let seg = hard_segment(8, 3, 0).unwrap();
        assert_eq!(seg.clusters(), &[vec![0, 1, 2], vec![3, 4, 5], vec![6, 7]]);
        assert_eq!(seg.source_video(), None);
    }

    #[test]
    fn hard_segment_singletons_and_overlap() {
        let seg = hard_segment(5, 5, 0).unwrap();
        assert_eq!(seg.len(), 5);
        assert!(seg.clusters().iter().all(|c| c.len() == 1));

        let seg = hard_segment(6, 3, 2).unwrap();
        assert_eq!(
            seg.clusters(),
            &[vec![0, 1, 2, 3], vec![0, 1, 2, 3, 4, 5], vec![2, 3, 4, 5]]
        );
    }

    #[test]
    fn overlap_clamps_to_neighbour_size() {
        let seg = hard_segment(3, 3, 5).unwrap();
        assert_eq!(seg.clusters(), &[vec![0, 1], vec![0, 1, 2], vec![1, 2]]);
    }

    #[test]
    fn from_clusters_validates_layout() {
        assert!(Segmentation::from_clusters(vec![vec![0], vec![1]], 0, 2, None).is_ok());
        assert!(Segmentation::from_clusters(vec![], 0, 2, None).is_err());
        assert!(Segmentation::from_clusters(vec![vec![]], 0, 2, None).is_err());
        assert!(Segmentation::from_clusters(vec![vec![1, 0]], 0, 2, None).is_err());
        assert!(Segmentation::from_clusters(vec![vec![5]], 0, 2, None).is_err());
        assert!(Segmentation::from_clusters(vec![vec![1], vec![0]], 0, 2, None).is_err());
    }

    /// Strictly positive random frame matrices: no zero-norm means possible.
    fn positive_frames() -> impl Strategy<Value = Array2<f32>> {
        (1usize..=12, 1usize..=5).prop_flat_map(|(t, c)| {
            proptest::collection::vec(0.1f32..1.0, t * c)
                .prop_map(move |data| Array2::from_shape_vec((t, c), data).expect("shape"))
        })
    }

    proptest! {
        #[test]
        fn cluster_segment_without_overlap_is_a_contiguous_partition(
            frames in positive_frames(),
            l_frac in 0.0f64..1.0,
        ) {
            let t = frames.nrows();
            let l = 1 + ((t - 1) as f64 * l_frac).round() as usize;
            let f = FrameFeatures::new("p", None, frames).unwrap();
            let seg = cluster_segment(&f, l, 0).unwrap();
            prop_assert_eq!(seg.len(), l);
            let mut all: Vec<usize> = Vec::new();
            for cluster in seg.clusters() {
                prop_assert!(!cluster.is_empty());
                // Contiguous ascending runs.
                for w in cluster.windows(2) {
                    prop_assert_eq!(w[1], w[0] + 1);
                }
                all.extend_from_slice(cluster);
            }
            let expected: Vec<usize> = (0..t).collect();
            prop_assert_eq!(all, expected);
        }

        #[test]
        fn overlap_only_widens_clusters(
            frames in positive_frames(),
            l_frac in 0.0f64..1.0,
            overlap in 0usize..3,
        ) {
            let t = frames.nrows();
            let l = 1 + ((t - 1) as f64 * l_frac).round() as usize;
            let f = FrameFeatures::new("p", None, frames).unwrap();
            let base = cluster_segment(&f, l, 0).unwrap();
            let wide = cluster_segment(&f, l, overlap).unwrap();
            for (b, w) in base.clusters().iter().zip(wide.clusters()) {
                prop_assert!(b.iter().all(|i| w.contains(i)));
                prop_assert!(w.len() <= b.len() + 2 * overlap);
            }
        }
    }
}
