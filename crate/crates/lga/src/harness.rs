//! Episodic N-way K-shot evaluation over a [`FeatureStore`].
//!
//! An episode draws N classes, K support videos per class, and a handful of
//! query videos from one of the N classes. Every video runs through the full
//! pipeline — segmentation, text-guided fusion, phase-aligned matching — and
//! the query's predicted class is the probability argmax. [`evaluate`] runs
//! many such episodes (optionally in parallel) and aggregates accuracy with
//! a 95% confidence interval.
//!
//! Reproducibility contract: episode `i` of a run seeded `s` uses the seed
//! `episode_seed(s, i)` (a SplitMix64-style mix with documented constants),
//! and all sampling uses a counter-based ChaCha generator, so results are
//! identical across runs, platforms, episode execution orders, and thread
//! counts.

use std::collections::BTreeSet;
use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;
use thiserror::Error;

use crate::anatomy::{cluster_segment, hard_segment, AnatomyError, FrameFeatures, Segmentation};
use crate::fusion::{fuse, FusionError, FusionWeights, Prototype};
use crate::matching::{combine, text_match_score, ClassScores, MatchError, ScoreSource};
use crate::store::{FeatureStore, StoreError};
use crate::text::TextAnatomy;

/// Errors from episode sampling, pipeline execution, and synthesis.
#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid arguments: {reason}")]
    BadArgs { reason: String },
    #[error("need {needed} classes but the store has {available}")]
    InsufficientClasses { needed: usize, available: usize },
    #[error("class {class_id} needs {needed} videos but has {available}")]
    InsufficientVideos { class_id: i64, needed: usize, available: usize },
    #[error("video {video_id} is not in the store")]
    UnknownVideo { video_id: String },
    #[error("segmenting {video_id}: {source}")]
    Anatomy {
        video_id: String,
        #[source]
        source: AnatomyError,
    },
    #[error("fusing {video_id}: {source}")]
    Fusion {
        video_id: String,
        #[source]
        source: FusionError,
    },
    #[error(transparent)]
    Match(#[from] MatchError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("episode {index} (seed {seed:#018x}): {source}")]
    Episode {
        index: usize,
        seed: u64,
        #[source]
        source: Box<HarnessError>,
    },
}

/// How videos are split into phases before fusion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SegMethod {
    /// Greedy similarity-driven clustering of adjacent frames.
    Cluster,
    /// Uniform contiguous split.
    Hard,
}

impl std::fmt::Display for SegMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SegMethod::Cluster => "cluster",
            SegMethod::Hard => "hard",
        })
    }
}

/// Pipeline knobs shared by every episode of a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunSettings {
    pub seg_method: SegMethod,
    /// Phase count `L`.
    pub phases: usize,
    /// Overlap frames injected between adjacent phases.
    pub overlap: usize,
    pub match_config: crate::matching::MatchConfig,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self {
            seg_method: SegMethod::Cluster,
            phases: 3,
            overlap: 1,
            match_config: crate::matching::MatchConfig::default(),
        }
    }
}

/// One sampled N-way K-shot task.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Episode {
    support: Vec<(i64, Vec<String>)>,
    queries: Vec<(String, i64)>,
    seed: u64,
}

impl Episode {
    /// Assembles an episode, enforcing the structural invariants: support
    /// classes strictly ascending with equal shot counts, queries drawn
    /// from support classes, and no video serving as both support and
    /// query.
    pub fn new(
        support: Vec<(i64, Vec<String>)>,
        queries: Vec<(String, i64)>,
        seed: u64,
    ) -> Result<Self, HarnessError> {
        if support.is_empty() {
            return Err(HarnessError::BadArgs { reason: "episode needs at least one class".into() });
        }
        if queries.is_empty() {
            return Err(HarnessError::BadArgs { reason: "episode needs at least one query".into() });
        }
        let k = support[0].1.len();
        if k == 0 {
            return Err(HarnessError::BadArgs { reason: "episode needs at least one shot".into() });
        }
        let mut support_ids = BTreeSet::new();
        for window in support.windows(2) {
            if window[0].0 >= window[1].0 {
                return Err(HarnessError::BadArgs {
                    reason: "support classes must be strictly ascending".into(),
                });
            }
        }
        for (class_id, videos) in &support {
            if videos.len() != k {
                return Err(HarnessError::BadArgs {
                    reason: format!("class {class_id} has {} support videos, expected {k}", videos.len()),
                });
            }
            for id in videos {
                if !support_ids.insert(id.clone()) {
                    return Err(HarnessError::BadArgs {
                        reason: format!("video {id} appears twice in the support set"),
                    });
                }
            }
        }
        for (id, class_id) in &queries {
            if !support.iter().any(|(c, _)| c == class_id) {
                return Err(HarnessError::BadArgs {
                    reason: format!("query {id} labeled with class {class_id} outside the episode"),
                });
            }
            if support_ids.contains(id) {
                return Err(HarnessError::BadArgs {
                    reason: format!("video {id} is both support and query"),
                });
            }
        }
        Ok(Self { support, queries, seed })
    }

    /// Way count N.
    pub fn n(&self) -> usize {
        self.support.len()
    }

    /// Shot count K.
    pub fn k(&self) -> usize {
        self.support[0].1.len()
    }

    /// Per-class support video ids, classes ascending.
    pub fn support(&self) -> &[(i64, Vec<String>)] {
        &self.support
    }

    /// Query video ids with their true classes.
    pub fn queries(&self) -> &[(String, i64)] {
        &self.queries
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

/// Mixes a run seed and an episode index into the episode's private seed.
///
/// SplitMix64 finalizer over `run_seed + GOLDEN_GAMMA * (index + 1)`; the
/// constants are fixed so independent implementations reproduce identical
/// episode streams.
pub fn episode_seed(run_seed: u64, index: u64) -> u64 {
    let mut z = run_seed.wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(index.wrapping_add(1)));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// First `take` elements of a seeded partial Fisher-Yates pass over
/// `0..total`, in selection order.
fn choose_indices(rng: &mut ChaCha12Rng, total: usize, take: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..total).collect();
    for i in 0..take {
        let j = rng.random_range(i..total);
        idx.swap(i, j);
    }
    idx.truncate(take);
    idx
}

/// Samples one episode: `n` classes without replacement, `k +
/// queries_per_class` videos without replacement per chosen class (first
/// `k` are support), then one query class uniformly among the `n`, whose
/// remaining videos become the queries.
pub fn sample_episode(
    store: &FeatureStore,
    n: usize,
    k: usize,
    queries_per_class: usize,
    seed: u64,
) -> Result<Episode, HarnessError> {
    if n == 0 || k == 0 || queries_per_class == 0 {
        return Err(HarnessError::BadArgs {
            reason: "way, shot, and query counts must all be at least 1".into(),
        });
    }
    let class_ids = store.class_ids();
    if class_ids.len() < n {
        return Err(HarnessError::InsufficientClasses { needed: n, available: class_ids.len() });
    }
    let needed = k + queries_per_class;
    for &c in &class_ids {
        let have = store.class_videos(c).len();
        if have < needed {
            return Err(HarnessError::InsufficientVideos { class_id: c, needed, available: have });
        }
    }

    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut chosen: Vec<i64> =
        choose_indices(&mut rng, class_ids.len(), n).into_iter().map(|i| class_ids[i]).collect();
    chosen.sort_unstable();

    let mut support = Vec::with_capacity(n);
    let mut query_pool: Vec<Vec<String>> = Vec::with_capacity(n);
    for &c in &chosen {
        let vids = store.class_videos(c);
        let picked = choose_indices(&mut rng, vids.len(), needed);
        support.push((c, picked[..k].iter().map(|&i| vids[i].clone()).collect()));
        query_pool.push(picked[k..].iter().map(|&i| vids[i].clone()).collect());
    }
    let query_class = rng.random_range(0..n);
    let queries: Vec<(String, i64)> =
        query_pool[query_class].iter().map(|id| (id.clone(), chosen[query_class])).collect();
    Episode::new(support, queries, seed)
}

/// Full scoring record for one query of one episode.
#[derive(Debug, Clone)]
pub struct QueryOutcome {
    pub video_id: String,
    pub true_class: i64,
    pub predicted: i64,
    pub correct: bool,
    pub video_video: ClassScores,
    pub video_text: Option<ClassScores>,
    pub combined: ClassScores,
}

fn segment(features: &FrameFeatures, settings: &RunSettings) -> Result<Segmentation, AnatomyError> {
    match settings.seg_method {
        SegMethod::Cluster => cluster_segment(features, settings.phases, settings.overlap),
        SegMethod::Hard => hard_segment(features.len(), settings.phases, settings.overlap),
    }
}

fn lookup_video<'a>(store: &'a FeatureStore, id: &str) -> Result<&'a FrameFeatures, HarnessError> {
    store.video(id).ok_or_else(|| HarnessError::UnknownVideo { video_id: id.to_string() })
}

/// Runs the pipeline on one episode and scores every query.
///
/// Each video is segmented, then fused with the candidate class's text
/// anatomy; because the query is re-fused per candidate class, a query
/// identical to a support video reaches that class at distance exactly
/// zero. Classes whose text is absent (or whose phase count disagrees with
/// `settings.phases`, as happens mid-sweep) fall back to a zero text vector
/// for fusion, and the video-text route is used only when `alpha < 1` and
/// every class carries usable text.
pub fn run_episode(
    store: &FeatureStore,
    episode: &Episode,
    settings: &RunSettings,
    weights: &FusionWeights,
) -> Result<Vec<QueryOutcome>, HarnessError> {
    settings.match_config.validate()?;
    if settings.phases == 0 {
        return Err(HarnessError::BadArgs { reason: "phase count must be at least 1".into() });
    }
    let support_ids: BTreeSet<&str> =
        episode.support.iter().flat_map(|(_, v)| v.iter().map(String::as_str)).collect();
    if episode.queries.iter().any(|(id, _)| support_ids.contains(id.as_str())) {
        return Err(HarnessError::BadArgs { reason: "support and query videos overlap".into() });
    }

    let phases = settings.phases;
    let alpha = settings.match_config.alpha;
    let class_has_usable_text =
        |c: i64| store.text(c).is_some_and(|t| t.phases() == phases && t.dim() == store.dim());
    let use_text_route =
        alpha < 1.0 && episode.support.iter().all(|(c, _)| class_has_usable_text(*c));
    if alpha < 1.0 && !use_text_route {
        log::debug!(
            "video-text route disabled: not every episode class has {phases}-phase text anatomy"
        );
    }

    // Text used to guide fusion, per class: the real anatomy when its phase
    // count fits, otherwise zeros (which reduce fusion to pure visual
    // attention for that class).
    let fusion_texts: Vec<(i64, TextAnatomy)> = episode
        .support
        .iter()
        .map(|(c, _)| {
            let text = match store.text(*c) {
                Some(t) if t.phases() == phases && t.dim() == store.dim() => t.clone(),
                _ => TextAnatomy::zeros(
                    *c,
                    store.label(*c).filter(|l| !l.is_empty()).unwrap_or("unlabeled"),
                    phases,
                    store.dim(),
                ),
            };
            (*c, text)
        })
        .collect();

    let mut class_supports: Vec<(i64, Vec<Prototype>)> = Vec::with_capacity(episode.n());
    for ((class_id, video_ids), (_, text)) in episode.support.iter().zip(&fusion_texts) {
        let mut protos = Vec::with_capacity(video_ids.len());
        for id in video_ids {
            let features = lookup_video(store, id)?;
            let seg = segment(features, settings)
                .map_err(|e| HarnessError::Anatomy { video_id: id.clone(), source: e })?;
            let proto = fuse(features, &seg, text, weights)
                .map_err(|e| HarnessError::Fusion { video_id: id.clone(), source: e })?;
            protos.push(proto);
        }
        class_supports.push((*class_id, protos));
    }
    let class_ids: Vec<i64> = class_supports.iter().map(|(c, _)| *c).collect();

    let mut outcomes = Vec::with_capacity(episode.queries.len());
    for (query_id, true_class) in &episode.queries {
        let features = lookup_video(store, query_id)?;
        let seg = segment(features, settings)
            .map_err(|e| HarnessError::Anatomy { video_id: query_id.clone(), source: e })?;

        let mut distances = Vec::with_capacity(class_supports.len());
        let mut text_logits = Vec::with_capacity(class_supports.len());
        for ((class_id, protos), (_, text)) in class_supports.iter().zip(&fusion_texts) {
            let query_proto = fuse(features, &seg, text, weights)
                .map_err(|e| HarnessError::Fusion { video_id: query_id.clone(), source: e })?;
            let per_support = protos
                .iter()
                .map(|s| {
                    settings.match_config.metric.distance(
                        &query_proto,
                        s,
                        query_proto.source_frames(),
                    )
                })
                .collect::<Result<Vec<_>, _>>()?;
            distances
                .push(crate::matching::reduce_kshot(&per_support, settings.match_config.kshot_reduction));
            if use_text_route {
                let real = store.text(*class_id).expect("usability checked above");
                text_logits
                    .push(text_match_score(&query_proto, real)? / settings.match_config.temperature_vt);
            }
        }

        let video_video =
            ClassScores::from_distances(class_ids.clone(), &distances, ScoreSource::VideoVideo)?;
        let video_text = if use_text_route {
            Some(ClassScores::from_logits(class_ids.clone(), &text_logits, ScoreSource::VideoText)?)
        } else {
            None
        };
        let combined = match &video_text {
            Some(vt) => combine(&video_video, vt, alpha)?,
            // Without a text route the combined result IS the video route.
            None => combine(&video_video, &video_video, 1.0)?,
        };
        let predicted = combined.best().0;
        outcomes.push(QueryOutcome {
            video_id: query_id.clone(),
            true_class: *true_class,
            predicted,
            correct: predicted == *true_class,
            video_video,
            video_text,
            combined,
        });
    }
    Ok(outcomes)
}

/// Slim, serializable per-query result.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct QueryRecord {
    pub video_id: String,
    pub true_class: i64,
    pub predicted: i64,
    pub correct: bool,
    pub correct_video_video: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub correct_video_text: Option<bool>,
}

/// All query records of one episode.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EpisodeRecord {
    pub index: usize,
    pub seed: u64,
    pub queries: Vec<QueryRecord>,
}

/// Aggregate evaluation statistics.
#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub episodes: usize,
    pub queries: usize,
    pub accuracy: f64,
    /// Half-width of the normal-approximation 95% confidence interval,
    /// `1.96 * sqrt(p * (1 - p) / queries)`.
    pub ci95_halfwidth: f64,
    pub accuracy_video_video: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracy_video_text: Option<f64>,
    pub accuracy_combined: f64,
    pub wall_time_secs: f64,
    pub config: serde_json::Value,
}

/// Report plus the per-episode records behind it.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: EvalReport,
    pub records: Vec<EpisodeRecord>,
}

/// Parameters of one evaluation run.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub n: usize,
    pub k: usize,
    pub queries_per_class: usize,
    pub episodes: usize,
    pub seed: u64,
    pub settings: RunSettings,
    /// Worker threads; `None` uses the global pool.
    pub threads: Option<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            n: 5,
            k: 1,
            queries_per_class: 1,
            episodes: 10_000,
            seed: 0,
            settings: RunSettings::default(),
            threads: None,
        }
    }
}

fn config_snapshot(cfg: &EvalConfig) -> serde_json::Value {
    json!({
        "n": cfg.n,
        "k": cfg.k,
        "queries_per_class": cfg.queries_per_class,
        "episodes": cfg.episodes,
        "seed": cfg.seed,
        "seg_method": cfg.settings.seg_method.to_string(),
        "phases": cfg.settings.phases,
        "overlap": cfg.settings.overlap,
        "alpha": cfg.settings.match_config.alpha,
        "temperature_vt": cfg.settings.match_config.temperature_vt,
        "metric": cfg.settings.match_config.metric.to_string(),
        "kshot_reduction": cfg.settings.match_config.kshot_reduction.to_string(),
        "threads": cfg.threads,
    })
}

/// Runs `cfg.episodes` independent episodes and aggregates accuracy.
///
/// Episode `i` uses `episode_seed(cfg.seed, i)`; results are reduced in
/// episode order, so the outcome is identical whatever the thread count.
pub fn evaluate(
    store: &FeatureStore,
    weights: &FusionWeights,
    cfg: &EvalConfig,
) -> Result<Evaluation, HarnessError> {
    if cfg.episodes == 0 {
        return Err(HarnessError::BadArgs { reason: "episode count must be at least 1".into() });
    }
    cfg.settings.match_config.validate()?;
    let start = Instant::now();

    let one_episode = |index: usize| -> Result<EpisodeRecord, HarnessError> {
        let seed = episode_seed(cfg.seed, index as u64);
        let run = || -> Result<EpisodeRecord, HarnessError> {
            let episode = sample_episode(store, cfg.n, cfg.k, cfg.queries_per_class, seed)?;
            let outcomes = run_episode(store, &episode, &cfg.settings, weights)?;
            Ok(EpisodeRecord {
                index,
                seed,
                queries: outcomes
                    .into_iter()
                    .map(|o| QueryRecord {
                        correct_video_video: o.video_video.best().0 == o.true_class,
                        correct_video_text: o
                            .video_text
                            .as_ref()
                            .map(|vt| vt.best().0 == o.true_class),
                        video_id: o.video_id,
                        true_class: o.true_class,
                        predicted: o.predicted,
                        correct: o.correct,
                    })
                    .collect(),
            })
        };
        run().map_err(|e| HarnessError::Episode { index, seed, source: Box::new(e) })
    };

    let collect = || -> Result<Vec<EpisodeRecord>, HarnessError> {
        (0..cfg.episodes).into_par_iter().map(one_episode).collect()
    };
    let records: Vec<EpisodeRecord> = match cfg.threads {
        None => collect()?,
        Some(threads) => rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| HarnessError::BadArgs { reason: format!("cannot build thread pool: {e}") })?
            .install(collect)?,
    };

    let mut queries = 0usize;
    let mut correct = 0usize;
    let mut correct_vv = 0usize;
    let mut vt_seen = 0usize;
    let mut correct_vt = 0usize;
    for record in &records {
        for q in &record.queries {
            queries += 1;
            correct += q.correct as usize;
            correct_vv += q.correct_video_video as usize;
            if let Some(hit) = q.correct_video_text {
                vt_seen += 1;
                correct_vt += hit as usize;
            }
        }
    }
    let accuracy = correct as f64 / queries as f64;
    let ci95_halfwidth = 1.96 * (accuracy * (1.0 - accuracy) / queries as f64).sqrt();
    let report = EvalReport {
        episodes: cfg.episodes,
        queries,
        accuracy,
        ci95_halfwidth,
        accuracy_video_video: correct_vv as f64 / queries as f64,
        accuracy_video_text: (vt_seen > 0).then(|| correct_vt as f64 / vt_seen as f64),
        accuracy_combined: accuracy,
        wall_time_secs: start.elapsed().as_secs_f64(),
        config: config_snapshot(cfg),
    };
    Ok(Evaluation { report, records })
}

/// Parameters of the synthetic store generator.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub classes: usize,
    pub videos_per_class: usize,
    /// Frames per video `T`.
    pub frames: usize,
    /// Embedding dimension `C`.
    pub dim: usize,
    /// True phase count used to lay out each video.
    pub phases: usize,
    /// Standard deviation of the per-coordinate Gaussian noise.
    pub noise_sigma: f64,
    /// Scale of the phase mean vectors; inter-class separation grows with
    /// it.
    pub phase_separation: f64,
    pub seed: u64,
    /// When set, all classes share one pool of `phases` directions and
    /// differ only in their order (class `c` gets the `c`-th lexicographic
    /// permutation), so classes are separable only by temporal structure.
    pub shared_direction_pool: bool,
    /// Attach per-class text anatomy rows equal to the exact phase means.
    pub with_text: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            classes: 8,
            videos_per_class: 4,
            frames: 8,
            dim: 32,
            phases: 3,
            noise_sigma: 0.02,
            phase_separation: 1.0,
            seed: 0,
            shared_direction_pool: false,
            with_text: true,
        }
    }
}

fn factorial_at_least(n: usize, bound: usize) -> bool {
    let mut acc: u128 = 1;
    for i in 2..=n as u128 {
        acc = acc.saturating_mul(i);
        if acc >= bound as u128 {
            return true;
        }
    }
    acc >= bound as u128
}

impl SynthConfig {
    fn validate(&self) -> Result<(), HarnessError> {
        let positive = [
            (self.classes, "classes"),
            (self.videos_per_class, "videos_per_class"),
            (self.frames, "frames"),
            (self.dim, "dim"),
            (self.phases, "phases"),
        ];
        for (value, name) in positive {
            if value == 0 {
                return Err(HarnessError::BadArgs { reason: format!("{name} must be at least 1") });
            }
        }
        if self.dim < self.phases {
            return Err(HarnessError::BadArgs {
                reason: format!(
                    "dim {} cannot hold {} orthogonal phase directions",
                    self.dim, self.phases
                ),
            });
        }
        if self.frames < self.phases {
            return Err(HarnessError::BadArgs {
                reason: format!("{} frames cannot form {} phases", self.frames, self.phases),
            });
        }
        if !self.noise_sigma.is_finite() || self.noise_sigma < 0.0 {
            return Err(HarnessError::BadArgs { reason: "noise_sigma must be finite and >= 0".into() });
        }
        if !self.phase_separation.is_finite() || self.phase_separation < 0.0 {
            return Err(HarnessError::BadArgs {
                reason: "phase_separation must be finite and >= 0".into(),
            });
        }
        if self.shared_direction_pool && !factorial_at_least(self.phases, self.classes) {
            return Err(HarnessError::BadArgs {
                reason: format!(
                    "a shared pool of {} directions yields only {}! orderings, fewer than {} classes",
                    self.phases, self.phases, self.classes
                ),
            });
        }
        Ok(())
    }
}

/// The `index`-th permutation of `0..len` in lexicographic order.
fn nth_permutation(len: usize, mut index: usize) -> Vec<usize> {
    let mut factorials = vec![1usize; len.max(1)];
    for i in 1..len {
        factorials[i] = factorials[i - 1] * i;
    }
    let mut items: Vec<usize> = (0..len).collect();
    let mut out = Vec::with_capacity(len);
    for i in (0..len).rev() {
        let pos = index / factorials[i];
        index %= factorials[i];
        out.push(items.remove(pos));
    }
    out
}

fn phase_means(cfg: &SynthConfig, class: usize) -> Array2<f64> {
    let mut means = Array2::<f64>::zeros((cfg.phases, cfg.dim));
    if cfg.shared_direction_pool {
        let order = nth_permutation(cfg.phases, class);
        for (p, &direction) in order.iter().enumerate() {
            means[(p, direction)] = cfg.phase_separation;
        }
    } else {
        for p in 0..cfg.phases {
            means[(p, (class * cfg.phases + p) % cfg.dim)] = cfg.phase_separation;
        }
    }
    means
}

/// Phase sizes for one video: the even split with each interior boundary
/// independently nudged by -1, 0, or +1 frame (sizes stay >= 1).
fn jittered_phase_sizes(rng: &mut ChaCha12Rng, frames: usize, phases: usize) -> Vec<usize> {
    let base = hard_segment(frames, phases, 0).expect("validated upstream");
    let mut cuts: Vec<usize> = Vec::with_capacity(phases + 1);
    cuts.push(0);
    let mut acc = 0;
    for cluster in base.clusters() {
        acc += cluster.len();
        cuts.push(acc);
    }
    let original = cuts.clone();
    for i in 1..phases {
        let delta: i64 = rng.random_range(-1..=1);
        let lo = (original[i] - 1).max(cuts[i - 1] + 1);
        let hi = (original[i] + 1).min(frames - (phases - i));
        cuts[i] = ((original[i] as i64 + delta).clamp(lo as i64, hi as i64)) as usize;
    }
    (1..=phases).map(|i| cuts[i] - cuts[i - 1]).collect()
}

/// Builds a synthetic store: each class owns per-phase mean directions,
/// each video lays its frames on those means (with jittered phase
/// boundaries) plus Gaussian noise, and text anatomy rows equal the exact
/// phase means. Deterministic per seed.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<FeatureStore, HarnessError> {
    cfg.validate()?;
    let mut store = FeatureStore::new(cfg.dim)?;
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    let noise = if cfg.noise_sigma > 0.0 {
        Some(Normal::new(0.0, cfg.noise_sigma).expect("validated sigma"))
    } else {
        None
    };
    for class in 0..cfg.classes {
        let class_id = class as i64;
        let label = format!("action_{class}");
        store.add_class(class_id, &label)?;
        let means = phase_means(cfg, class);
        for video in 0..cfg.videos_per_class {
            let sizes = jittered_phase_sizes(&mut rng, cfg.frames, cfg.phases);
            let mut rows = Array2::<f32>::zeros((cfg.frames, cfg.dim));
            let mut frame = 0;
            for (p, &size) in sizes.iter().enumerate() {
                for _ in 0..size {
                    for c in 0..cfg.dim {
                        let mut value = means[(p, c)];
                        if let Some(normal) = &noise {
                            value += normal.sample(&mut rng);
                        }
                        rows[(frame, c)] = value as f32;
                    }
                    frame += 1;
                }
            }
            let features = FrameFeatures::new(format!("c{class}_v{video}"), Some(class_id), rows)
                .expect("synthetic frames are finite and non-empty");
            store.add_video(features)?;
        }
        if cfg.with_text {
            let text = TextAnatomy::new(class_id, &label, means, None)
                .expect("synthetic text rows are finite");
            store.set_text(text)?;
        }
    }
    Ok(store)
}

/// Returns a copy of the store with video class assignments permuted
/// uniformly at random (class sizes, labels, and text are preserved), which
/// destroys any label-feature correspondence. Evaluation on the result
/// should sit at chance level.
pub fn shuffle_labels(store: &FeatureStore, seed: u64) -> Result<FeatureStore, HarnessError> {
    let mut video_ids: Vec<String> = Vec::with_capacity(store.video_count());
    let mut assignments: Vec<i64> = Vec::with_capacity(store.video_count());
    for class_id in store.class_ids() {
        for id in store.class_videos(class_id) {
            video_ids.push(id.clone());
            assignments.push(class_id);
        }
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    assignments.shuffle(&mut rng);

    let mut shuffled = FeatureStore::new(store.dim())?;
    for class_id in store.class_ids() {
        shuffled.add_class(class_id, store.label(class_id).unwrap_or_default())?;
        if let Some(text) = store.text(class_id) {
            shuffled.set_text(text.clone())?;
        }
    }
    for (id, &new_class) in video_ids.iter().zip(&assignments) {
        let original = store.video(id).expect("id enumerated from the store");
        let features = FrameFeatures::new(id.clone(), Some(new_class), original.frames().clone())
            .expect("features were already validated");
        shuffled.add_video(features)?;
    }
    Ok(shuffled)
}
