//! Few-shot action matching over precomputed frame and text embeddings.
//!
//! The pipeline turns a video — stored as a `T x C` matrix of per-frame
//! embeddings — into a small set of temporally ordered *phases*, fuses each
//! phase with a per-phase text embedding through cross-attention, and scores
//! query videos against episodic support sets with a phase-aligned set
//! distance. The crate is organized along those stages:
//!
//! * [`anatomy`] — temporal decomposition of the frame axis into contiguous
//!   clusters (greedy agglomerative or equal-width), with optional overlap.
//! * [`text`] — per-phase text descriptions: prompt construction, response
//!   parsing, and a retrying client for chat-completion endpoints.
//! * [`fusion`] — multi-head cross-attention that injects text embeddings
//!   into the frame features of each phase, producing a [`fusion::Prototype`].
//! * [`matching`] — phase-aligned and global bidirectional mean Hausdorff
//!   distances, class posterior construction, and geometric-mean combination
//!   of the video-video and video-text branches.
//! * [`store`] — on-disk layout: feature blobs, the manifest, and loading of
//!   whole feature stores.
//! * [`harness`] — episodic sampling, end-to-end episode execution, seeded
//!   evaluation runs, and synthetic store generation.
//!
//! Everything downstream of ingestion is deterministic: all randomness flows
//! through explicit 64-bit seeds, and evaluation results are identical for
//! any worker-pool size.

pub mod anatomy;
pub mod fusion;
pub mod harness;
pub mod matching;
pub mod store;
pub mod text;

pub use anatomy::{
    cluster_segment, hard_segment, mean_cluster_feature, AnatomyError, FrameFeatures, Segmentation,
};
pub use fusion::{
    cross_attention, cross_attention_traced, default_hidden, fuse, fuse_traced, fuse_with_options,
    init_weights, AttentionTrace, FuseOptions, FusionError, FusionWeights, Prototype,
};
pub use harness::{
    episode_seed, evaluate, generate_synthetic, run_episode, sample_episode, shuffle_labels,
    Episode, EpisodeRecord, EvalConfig, EvalReport, Evaluation, HarnessError, QueryOutcome,
    QueryRecord, RunSettings, SegMethod, SynthConfig,
};
pub use matching::{
    ab_mhm, bi_mhm, combine, reduce_kshot, text_match_score, video_text_scores,
    video_video_scores, ClassScores, KshotReduction, MatchConfig, MatchError, Metric, ScoreSource,
};
pub use store::{
    load_store, read_feature_blob, save_store, write_feature_blob, FeatureStore, Manifest,
    ManifestClass, ManifestVideo, StoreError,
};
pub use text::{
    build_prompt, fetch_descriptions, parse_llm_response, AtomicDescriptions, LlmConfig,
    TextAnatomy, TextError,
};
