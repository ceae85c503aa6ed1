//! Text-guided cross-attention over phase-grouped frame features.
//!
//! For a video segmented into `L` phases, queries are the per-frame features
//! with the phase's text embedding added (`Q_i = t_i + f`, broadcast to
//! every frame row of phase `i`), while keys and values are the plain frame
//! features of all phases concatenated in segmentation order. A multi-head
//! scaled dot-product attention pass mixes them, and a two-layer
//! feed-forward block with a residual connection finishes each row:
//! `y = FFN(a) + a` where `a` is the attention output. There is no residual
//! from the queries and no layer normalization by default; both exist as
//! opt-in [`FuseOptions`] variants.
//!
//! All attention arithmetic runs in `f64`. Weights are held as `f64` too,
//! but every value is exactly representable in `f32` — the storage precision
//! of the weights file — so save/load round-trips are bit-exact.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{s, Array1, Array2, ArrayView2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use thiserror::Error;

use crate::anatomy::{FrameFeatures, Segmentation};
use crate::text::TextAnatomy;

/// Magic bytes opening a fusion weights file.
pub const WEIGHTS_MAGIC: [u8; 4] = *b"LGAW";
/// Current weights file format version.
pub const WEIGHTS_VERSION: u16 = 1;

/// Errors from fusion math, prototype construction, and weight I/O.
#[derive(Debug, Error)]
pub enum FusionError {
    #[error("{what} has dimension {got}, expected {expected}")]
    DimMismatch { what: String, expected: usize, got: usize },
    #[error("segmentation has {segmentation} phases but text anatomy has {text}")]
    PhaseCountMismatch { segmentation: usize, text: usize },
    #[error("segmentation was built for {segmentation} frames but the video has {frames}")]
    FrameCountMismatch { segmentation: usize, frames: usize },
    #[error("embedding dim {dim} is not divisible by head count {heads}")]
    HeadsMismatch { dim: usize, heads: usize },
    #[error("bad {what}: {reason}")]
    BadShape { what: String, reason: String },
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt weights file {path} at offset {offset}: {detail}")]
    Corrupt { path: PathBuf, offset: u64, detail: String },
    #[error("weights file {path} has unsupported version {found}")]
    UnsupportedVersion { path: PathBuf, found: u16 },
}

/// Parameters of the fusion block: four `C x C` projections and a
/// two-layer feed-forward net.
///
/// Held in `f64` for arithmetic, with the invariant that every entry is
/// exactly representable in `f32` (the on-disk precision), which
/// constructors enforce by routing all values through `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionWeights {
    dim: usize,
    heads: usize,
    hidden: usize,
    w_q: Array2<f64>,
    w_k: Array2<f64>,
    w_v: Array2<f64>,
    w_o: Array2<f64>,
    ffn1_w: Array2<f64>,
    ffn1_b: Array1<f64>,
    ffn2_w: Array2<f64>,
    ffn2_b: Array1<f64>,
}

/// The conventional feed-forward width for a given embedding dim.
pub fn default_hidden(dim: usize) -> usize {
    4 * dim
}

impl FusionWeights {
    /// Assembles weights from raw `f32` matrices. Projections are `C x C`,
    /// the feed-forward layers `C x H` / `H x C` with biases `H` / `C`, and
    /// matrices apply by right-multiplication of row vectors.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        heads: usize,
        w_q: Array2<f32>,
        w_k: Array2<f32>,
        w_v: Array2<f32>,
        w_o: Array2<f32>,
        ffn1_w: Array2<f32>,
        ffn1_b: Array1<f32>,
        ffn2_w: Array2<f32>,
        ffn2_b: Array1<f32>,
    ) -> Result<Self, FusionError> {
        let dim = w_q.nrows();
        let hidden = ffn1_w.ncols();
        if dim == 0 {
            return Err(FusionError::BadShape { what: "W_Q".into(), reason: "empty matrix".into() });
        }
        if hidden == 0 {
            return Err(FusionError::BadShape {
                what: "FFN".into(),
                reason: "hidden width must be at least 1".into(),
            });
        }
        if heads == 0 || dim % heads != 0 {
            return Err(FusionError::HeadsMismatch { dim, heads });
        }
        for (name, m) in [("W_Q", &w_q), ("W_K", &w_k), ("W_V", &w_v), ("W_O", &w_o)] {
            if m.nrows() != dim || m.ncols() != dim {
                return Err(FusionError::BadShape {
                    what: name.into(),
                    reason: format!("expected {dim} x {dim}, got {} x {}", m.nrows(), m.ncols()),
                });
            }
        }
        if ffn1_w.nrows() != dim {
            return Err(FusionError::BadShape {
                what: "FFN first layer".into(),
                reason: format!("expected {dim} input rows, got {}", ffn1_w.nrows()),
            });
        }
        if ffn1_b.len() != hidden || ffn2_w.nrows() != hidden || ffn2_w.ncols() != dim || ffn2_b.len() != dim
        {
            return Err(FusionError::BadShape {
                what: "FFN".into(),
                reason: "layer shapes are inconsistent".into(),
            });
        }
        let all_finite = w_q.iter()
            .chain(w_k.iter())
            .chain(w_v.iter())
            .chain(w_o.iter())
            .chain(ffn1_w.iter())
            .chain(ffn1_b.iter())
            .chain(ffn2_w.iter())
            .chain(ffn2_b.iter())
            .all(|v| v.is_finite());
        if !all_finite {
            return Err(FusionError::BadShape {
                what: "weights".into(),
                reason: "non-finite parameter".into(),
            });
        }
        let widen2 = |m: &Array2<f32>| m.mapv(|v| v as f64);
        let widen1 = |m: &Array1<f32>| m.mapv(|v| v as f64);
        Ok(Self {
            dim,
            heads,
            hidden,
            w_q: widen2(&w_q),
            w_k: widen2(&w_k),
            w_v: widen2(&w_v),
            w_o: widen2(&w_o),
            ffn1_w: widen2(&ffn1_w),
            ffn1_b: widen1(&ffn1_b),
            ffn2_w: widen2(&ffn2_w),
            ffn2_b: widen1(&ffn2_b),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    /// Per-head width `C / h`.
    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn w_q(&self) -> &Array2<f64> {
        &self.w_q
    }

    pub fn w_k(&self) -> &Array2<f64> {
        &self.w_k
    }

    pub fn w_v(&self) -> &Array2<f64> {
        &self.w_v
    }

    pub fn w_o(&self) -> &Array2<f64> {
        &self.w_o
    }

    /// Serializes to the binary weights format (magic, version, shape
    /// header, parameters as little-endian `f32` in a fixed order).
    pub fn save(&self, path: &Path) -> Result<(), FusionError> {
        let mut buf: Vec<u8> = Vec::new();
        buf.write_all(&WEIGHTS_MAGIC).expect("vec write");
        buf.write_u16::<LittleEndian>(WEIGHTS_VERSION).expect("vec write");
        buf.write_u32::<LittleEndian>(self.dim as u32).expect("vec write");
        buf.write_u32::<LittleEndian>(self.heads as u32).expect("vec write");
        buf.write_u32::<LittleEndian>(self.hidden as u32).expect("vec write");
        let matrices = [&self.w_q, &self.w_k, &self.w_v, &self.w_o, &self.ffn1_w];
        for m in matrices {
            for &v in m.iter() {
                buf.write_f32::<LittleEndian>(v as f32).expect("vec write");
            }
        }
        for &v in self.ffn1_b.iter() {
            buf.write_f32::<LittleEndian>(v as f32).expect("vec write");
        }
        for &v in self.ffn2_w.iter() {
            buf.write_f32::<LittleEndian>(v as f32).expect("vec write");
        }
        for &v in self.ffn2_b.iter() {
            buf.write_f32::<LittleEndian>(v as f32).expect("vec write");
        }
        std::fs::write(path, buf).map_err(|e| FusionError::Io { path: path.to_path_buf(), source: e })
    }

    /// Reads a weights file, validating magic, version, header sanity, and
    /// parameter finiteness; corruption errors carry the failing offset.
    pub fn load(path: &Path) -> Result<Self, FusionError> {
        let data =
            std::fs::read(path).map_err(|e| FusionError::Io { path: path.to_path_buf(), source: e })?;
        let corrupt = |offset: usize, detail: String| FusionError::Corrupt {
            path: path.to_path_buf(),
            offset: offset as u64,
            detail,
        };
        let mut cursor = std::io::Cursor::new(&data);
        let need = |cursor: &std::io::Cursor<&Vec<u8>>, n: usize, what: &str| {
            let pos = cursor.position() as usize;
            if pos + n > data.len() {
                Err(corrupt(pos, format!("unexpected end of file while reading {what}")))
            } else {
                Ok(())
            }
        };

        need(&cursor, 4, "magic")?;
        let mut magic = [0u8; 4];
        std::io::Read::read_exact(&mut cursor, &mut magic).expect("length checked");
        if magic != WEIGHTS_MAGIC {
            return Err(corrupt(0, format!("bad magic {magic:02x?}, expected {WEIGHTS_MAGIC:02x?}")));
        }
        need(&cursor, 2, "version")?;
        let version = cursor.read_u16::<LittleEndian>().expect("length checked");
        if version != WEIGHTS_VERSION {
            return Err(FusionError::UnsupportedVersion { path: path.to_path_buf(), found: version });
        }
        need(&cursor, 12, "shape header")?;
        let dim = cursor.read_u32::<LittleEndian>().expect("length checked") as usize;
        let heads = cursor.read_u32::<LittleEndian>().expect("length checked") as usize;
        let hidden = cursor.read_u32::<LittleEndian>().expect("length checked") as usize;
        if dim == 0 || hidden == 0 || heads == 0 || dim % heads != 0 {
            return Err(corrupt(6, format!("implausible shape dim={dim} heads={heads} hidden={hidden}")));
        }
        const MAX_SIDE: usize = 1 << 20;
        if dim > MAX_SIDE || hidden > MAX_SIDE {
            return Err(corrupt(6, format!("implausible shape dim={dim} hidden={hidden}")));
        }

        let mut read_block = |rows: usize, cols: usize, what: &str| -> Result<Array2<f32>, FusionError> {
            need(&cursor, rows * cols * 4, what)?;
            let mut flat = vec![0f32; rows * cols];
            cursor.read_f32_into::<LittleEndian>(&mut flat).expect("length checked");
            let start = cursor.position() as usize - rows * cols * 4;
            if let Some(bad) = flat.iter().position(|v| !v.is_finite()) {
                return Err(corrupt(start + bad * 4, format!("non-finite parameter in {what}")));
            }
            Ok(Array2::from_shape_vec((rows, cols), flat).expect("shape"))
        };

        let w_q = read_block(dim, dim, "W_Q")?;
        let w_k = read_block(dim, dim, "W_K")?;
        let w_v = read_block(dim, dim, "W_V")?;
        let w_o = read_block(dim, dim, "W_O")?;
        let ffn1_w = read_block(dim, hidden, "FFN first layer weight")?;
        let ffn1_b = read_block(1, hidden, "FFN first layer bias")?.row(0).to_owned();
        let ffn2_w = read_block(hidden, dim, "FFN second layer weight")?;
        let ffn2_b = read_block(1, dim, "FFN second layer bias")?.row(0).to_owned();

        let pos = cursor.position() as usize;
        if pos != data.len() {
            return Err(corrupt(pos, format!("{} trailing bytes", data.len() - pos)));
        }
        Self::from_parts(heads, w_q, w_k, w_v, w_o, ffn1_w, ffn1_b, ffn2_w, ffn2_b)
    }
}

/// Draws fresh fusion weights deterministically from a seed.
///
/// Projections and the first feed-forward layer are uniform in
/// `[-1/sqrt(C), 1/sqrt(C)]`; biases and the entire second feed-forward
/// layer start at zero, so a freshly initialized fuse pass reduces to pure
/// attention plus its residual. The same seed yields bit-identical weights
/// on every platform.
pub fn init_weights(dim: usize, heads: usize, hidden: usize, seed: u64) -> Result<FusionWeights, FusionError> {
    if dim == 0 {
        return Err(FusionError::BadShape { what: "dim".into(), reason: "must be at least 1".into() });
    }
    if hidden == 0 {
        return Err(FusionError::BadShape { what: "hidden".into(), reason: "must be at least 1".into() });
    }
    if heads == 0 || dim % heads != 0 {
        return Err(FusionError::HeadsMismatch { dim, heads });
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let bound = 1.0 / (dim as f64).sqrt();
    // Draw order is part of the determinism contract: W_Q, W_K, W_V, W_O,
    // then the FFN first-layer weight, all row-major.
    let mut draw = |rows: usize, cols: usize| -> Array2<f32> {
        let mut m = Array2::<f32>::zeros((rows, cols));
        for v in m.iter_mut() {
            *v = rng.random_range(-bound..bound) as f32;
        }
        m
    };
    let w_q = draw(dim, dim);
    let w_k = draw(dim, dim);
    let w_v = draw(dim, dim);
    let w_o = draw(dim, dim);
    let ffn1_w = draw(dim, hidden);
    FusionWeights::from_parts(
        heads,
        w_q,
        w_k,
        w_v,
        w_o,
        ffn1_w,
        Array1::zeros(hidden),
        Array2::zeros((hidden, dim)),
        Array1::zeros(dim),
    )
}

/// Optional deviations from the default formulation: a residual connection from
/// the raw queries into the attention output, and (non-learned) layer
/// normalization of the attention output before the feed-forward block.
/// Both default to off.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FuseOptions {
    pub query_residual: bool,
    pub layer_norm: bool,
}

/// Intermediate attention quantities, exposed for numerical inspection:
/// per-head pre-softmax logits, per-head attention rows, and the combined
/// attention output (after `W_O`, before the feed-forward block).
#[derive(Debug, Clone)]
pub struct AttentionTrace {
    pub head_logits: Vec<Array2<f64>>,
    pub head_attention: Vec<Array2<f64>>,
    pub attention_output: Array2<f64>,
}

fn softmax_rows_in_place(m: &mut Array2<f64>) {
    for mut row in m.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

fn attention_core(
    queries: &Array2<f64>,
    keys_values: &Array2<f64>,
    weights: &FusionWeights,
    collect_trace: bool,
) -> Result<(Array2<f64>, Option<AttentionTrace>), FusionError> {
    if queries.ncols() != weights.dim {
        return Err(FusionError::DimMismatch {
            what: "query rows".into(),
            expected: weights.dim,
            got: queries.ncols(),
        });
    }
    if keys_values.ncols() != weights.dim {
        return Err(FusionError::DimMismatch {
            what: "key/value rows".into(),
            expected: weights.dim,
            got: keys_values.ncols(),
        });
    }
    if queries.nrows() == 0 || keys_values.nrows() == 0 {
        return Err(FusionError::BadShape {
            what: "attention input".into(),
            reason: "needs at least one query and one key row".into(),
        });
    }

    let dk = weights.head_dim();
    let scale = 1.0 / (dk as f64).sqrt();
    let q_proj = queries.dot(&weights.w_q);
    let k_proj = keys_values.dot(&weights.w_k);
    let v_proj = keys_values.dot(&weights.w_v);

    let mut concat = Array2::<f64>::zeros((queries.nrows(), weights.dim));
    let mut head_logits = Vec::new();
    let mut head_attention = Vec::new();
    for h in 0..weights.heads {
        let cols = h * dk..(h + 1) * dk;
        let qh = q_proj.slice(s![.., cols.clone()]);
        let kh = k_proj.slice(s![.., cols.clone()]);
        let vh = v_proj.slice(s![.., cols.clone()]);
        let mut attn = qh.dot(&kh.t());
        attn.mapv_inplace(|v| v * scale);
        if collect_trace {
            head_logits.push(attn.clone());
        }
        softmax_rows_in_place(&mut attn);
        if collect_trace {
            head_attention.push(attn.clone());
        }
        concat.slice_mut(s![.., cols]).assign(&attn.dot(&vh));
    }
    let output = concat.dot(&weights.w_o);
    let trace = collect_trace.then(|| AttentionTrace {
        head_logits,
        head_attention,
        attention_output: output.clone(),
    });
    Ok((output, trace))
}

/// Multi-head scaled dot-product attention from `queries` onto
/// `keys_values` (keys and values are the same rows), including the output
/// projection but no feed-forward block.
pub fn cross_attention(
    queries: &Array2<f64>,
    keys_values: &Array2<f64>,
    weights: &FusionWeights,
) -> Result<Array2<f64>, FusionError> {
    attention_core(queries, keys_values, weights, false).map(|(out, _)| out)
}

/// [`cross_attention`] plus the per-head trace.
pub fn cross_attention_traced(
    queries: &Array2<f64>,
    keys_values: &Array2<f64>,
    weights: &FusionWeights,
) -> Result<(Array2<f64>, AttentionTrace), FusionError> {
    attention_core(queries, keys_values, weights, true)
        .map(|(out, trace)| (out, trace.expect("trace requested")))
}

/// Smooth GELU activation (tanh form).
fn gelu(x: f64) -> f64 {
    const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
    0.5 * x * (1.0 + (SQRT_2_OVER_PI * (x + 0.044715 * x * x * x)).tanh())
}

/// A fused video representation: one row per (phase, frame) pair in
/// segmentation order, plus the phase block sizes needed for phase-aligned
/// matching.
#[derive(Debug, Clone)]
pub struct Prototype {
    rows: Array2<f64>,
    phase_sizes: Vec<usize>,
    phase_offsets: Vec<usize>,
    source_frames: usize,
    video_id: String,
    class_id: Option<i64>,
}

impl Prototype {
    /// Builds a prototype from explicit rows and phase block sizes; sizes
    /// must be positive and sum to the row count, and rows must be finite.
    pub fn new(
        rows: Array2<f64>,
        phase_sizes: Vec<usize>,
        source_frames: usize,
        video_id: impl Into<String>,
        class_id: Option<i64>,
    ) -> Result<Self, FusionError> {
        if phase_sizes.is_empty() || phase_sizes.iter().any(|&s| s == 0) {
            return Err(FusionError::BadShape {
                what: "prototype phases".into(),
                reason: "phase sizes must be non-empty and positive".into(),
            });
        }
        let total: usize = phase_sizes.iter().sum();
        if total != rows.nrows() || rows.ncols() == 0 {
            return Err(FusionError::BadShape {
                what: "prototype rows".into(),
                reason: format!(
                    "phase sizes sum to {total} but the matrix is {} x {}",
                    rows.nrows(),
                    rows.ncols()
                ),
            });
        }
        if source_frames == 0 {
            return Err(FusionError::BadShape {
                what: "prototype".into(),
                reason: "source frame count must be at least 1".into(),
            });
        }
        if rows.iter().any(|v| !v.is_finite()) {
            return Err(FusionError::BadShape {
                what: "prototype rows".into(),
                reason: "non-finite entry".into(),
            });
        }
        let mut phase_offsets = Vec::with_capacity(phase_sizes.len() + 1);
        let mut acc = 0usize;
        phase_offsets.push(0);
        for &s in &phase_sizes {
            acc += s;
            phase_offsets.push(acc);
        }
        Ok(Self {
            rows,
            phase_sizes,
            phase_offsets,
            source_frames,
            video_id: video_id.into(),
            class_id,
        })
    }

    /// Phase count `L`.
    pub fn phases(&self) -> usize {
        self.phase_sizes.len()
    }

    /// Embedding dimension `C`.
    pub fn dim(&self) -> usize {
        self.rows.ncols()
    }

    /// All fused rows, phases concatenated in order.
    pub fn rows(&self) -> &Array2<f64> {
        &self.rows
    }

    pub fn phase_sizes(&self) -> &[usize] {
        &self.phase_sizes
    }

    /// The fused rows belonging to phase `k`.
    pub fn phase_rows(&self, k: usize) -> ArrayView2<'_, f64> {
        self.rows.slice(s![self.phase_offsets[k]..self.phase_offsets[k + 1], ..])
    }

    /// Frame count `T` of the source video (before any overlap duplication).
    pub fn source_frames(&self) -> usize {
        self.source_frames
    }

    pub fn video_id(&self) -> &str {
        &self.video_id
    }

    pub fn class_id(&self) -> Option<i64> {
        self.class_id
    }
}

fn build_query_and_kv(
    features: &FrameFeatures,
    seg: &Segmentation,
    text: &TextAnatomy,
    weights: &FusionWeights,
) -> Result<(Array2<f64>, Array2<f64>), FusionError> {
    if features.dim() != weights.dim {
        return Err(FusionError::DimMismatch {
            what: format!("frames of {}", features.video_id()),
            expected: weights.dim,
            got: features.dim(),
        });
    }
    if text.dim() != weights.dim {
        return Err(FusionError::DimMismatch {
            what: format!("text anatomy for class {}", text.class_id()),
            expected: weights.dim,
            got: text.dim(),
        });
    }
    if seg.source_len() != features.len() {
        return Err(FusionError::FrameCountMismatch {
            segmentation: seg.source_len(),
            frames: features.len(),
        });
    }
    if seg.len() != text.phases() {
        return Err(FusionError::PhaseCountMismatch { segmentation: seg.len(), text: text.phases() });
    }

    let total = seg.total_rows();
    let dim = weights.dim;
    let frames = features.frames();
    let mut queries = Array2::<f64>::zeros((total, dim));
    let mut keys_values = Array2::<f64>::zeros((total, dim));
    let mut row = 0usize;
    for (k, cluster) in seg.clusters().iter().enumerate() {
        let phase_text = text.phase(k);
        for &idx in cluster {
            let frame = frames.row(idx);
            for c in 0..dim {
                let f = frame[c] as f64;
                keys_values[(row, c)] = f;
                queries[(row, c)] = phase_text[c] + f;
            }
            row += 1;
        }
    }
    Ok((queries, keys_values))
}

fn fuse_impl(
    features: &FrameFeatures,
    seg: &Segmentation,
    text: &TextAnatomy,
    weights: &FusionWeights,
    options: FuseOptions,
    collect_trace: bool,
) -> Result<(Prototype, Option<AttentionTrace>), FusionError> {
    let (queries, keys_values) = build_query_and_kv(features, seg, text, weights)?;
    let (mut fused, trace) = attention_core(&queries, &keys_values, weights, collect_trace)?;

    if options.query_residual {
        fused += &queries;
    }
    if options.layer_norm {
        const EPS: f64 = 1e-6;
        for mut row in fused.rows_mut() {
            let n = row.len() as f64;
            let mean = row.sum() / n;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let denom = (var + EPS).sqrt();
            row.mapv_inplace(|v| (v - mean) / denom);
        }
    }

    // y = FFN(a) + a, applied rowwise to the attention output.
    let mut hidden = fused.dot(&weights.ffn1_w);
    for mut row in hidden.rows_mut() {
        row += &weights.ffn1_b;
        row.mapv_inplace(gelu);
    }
    let mut out = hidden.dot(&weights.ffn2_w);
    for mut row in out.rows_mut() {
        row += &weights.ffn2_b;
    }
    out += &fused;

    let phase_sizes: Vec<usize> = seg.clusters().iter().map(Vec::len).collect();
    let prototype = Prototype::new(
        out,
        phase_sizes,
        seg.source_len(),
        features.video_id(),
        features.class_id(),
    )?;
    Ok((prototype, trace))
}

/// Fuses a segmented video with per-phase text embeddings into a
/// [`Prototype`], using the default formulation (no query residual, no
/// normalization).
pub fn fuse(
    features: &FrameFeatures,
    seg: &Segmentation,
    text: &TextAnatomy,
    weights: &FusionWeights,
) -> Result<Prototype, FusionError> {
    fuse_impl(features, seg, text, weights, FuseOptions::default(), false).map(|(p, _)| p)
}

/// [`fuse`] with explicit [`FuseOptions`].
pub fn fuse_with_options(
    features: &FrameFeatures,
    seg: &Segmentation,
    text: &TextAnatomy,
    weights: &FusionWeights,
    options: FuseOptions,
) -> Result<Prototype, FusionError> {
    fuse_impl(features, seg, text, weights, options, false).map(|(p, _)| p)
}

/// [`fuse`] returning the attention trace alongside the prototype.
pub fn fuse_traced(
    features: &FrameFeatures,
    seg: &Segmentation,
    text: &TextAnatomy,
    weights: &FusionWeights,
    options: FuseOptions,
) -> Result<(Prototype, AttentionTrace), FusionError> {
    fuse_impl(features, seg, text, weights, options, true)
        .map(|(p, trace)| (p, trace.expect("trace requested")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::anatomy::hard_segment;
    use ndarray::array;

    fn identity_weights() -> FusionWeights {
        let eye = Array2::<f32>::eye(1);
        FusionWeights::from_parts(
            1,
            eye.clone(),
            eye.clone(),
            eye.clone(),
            eye,
            Array2::zeros((1, 1)),
            Array1::zeros(1),
            Array2::zeros((1, 1)),
            Array1::zeros(1),
        )
        .unwrap()
    }

    fn random_inputs(dim: usize, t: usize) -> (FrameFeatures, TextAnatomy) {
        use rand::Rng;
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let frames = Array2::from_shape_fn((t, dim), |_| rng.random_range(-1.0f32..1.0));
        let text = Array2::from_shape_fn((2, dim), |_| rng.random_range(-1.0f64..1.0));
        (
            FrameFeatures::new("v", Some(0), frames).unwrap(),
            TextAnatomy::new(0, "label", text, None).unwrap(),
        )
    }

    #[test]
    fn single_frame_with_identity_projections_passes_through() {
        let weights = identity_weights();
        let features = FrameFeatures::new("v", None, array![[2.0f32]]).unwrap();
        let seg = hard_segment(1, 1, 0).unwrap();
        let text = TextAnatomy::zeros(0, "t", 1, 1);
        let prototype = fuse(&features, &seg, &text, &weights).unwrap();
        assert_eq!(prototype.rows(), &array![[2.0f64]]);
        assert_eq!(prototype.phases(), 1);
        assert_eq!(prototype.source_frames(), 1);
    }

    #[test]
    fn attention_rows_are_stochastic() {
        let weights = init_weights(8, 2, 16, 3).unwrap();
        let (features, text) = random_inputs(8, 5);
        let seg = hard_segment(5, 2, 1).unwrap();
        let (_, trace) = fuse_traced(&features, &seg, &text, &weights, FuseOptions::default()).unwrap();
        assert_eq!(trace.head_attention.len(), 2);
        for head in &trace.head_attention {
            for row in head.rows() {
                assert!((row.sum() - 1.0).abs() < 1e-12);
                assert!(row.iter().all(|&v| v >= 0.0));
            }
        }
    }

    #[test]
    fn freshly_initialized_ffn_is_inert() {
        let weights = init_weights(8, 2, 16, 11).unwrap();
        let (features, text) = random_inputs(8, 4);
        let seg = hard_segment(4, 2, 0).unwrap();
        let (prototype, trace) =
            fuse_traced(&features, &seg, &text, &weights, FuseOptions::default()).unwrap();
        // The second FFN layer starts at zero, so fuse must equal the pure
        // attention output bit-for-bit.
        assert_eq!(prototype.rows(), &trace.attention_output);
    }

    #[test]
    fn scaling_the_query_projection_scales_logits() {
        let weights = init_weights(4, 2, 8, 5).unwrap();
        let doubled = FusionWeights::from_parts(
            2,
            weights.w_q().mapv(|v| (v * 2.0) as f32),
            weights.w_k().mapv(|v| v as f32),
            weights.w_v().mapv(|v| v as f32),
            weights.w_o().mapv(|v| v as f32),
            weights.ffn1_w.mapv(|v| v as f32),
            weights.ffn1_b.mapv(|v| v as f32),
            weights.ffn2_w.mapv(|v| v as f32),
            weights.ffn2_b.mapv(|v| v as f32),
        )
        .unwrap();
        let (features, text) = random_inputs(4, 3);
        let seg = hard_segment(3, 2, 0).unwrap();
        let (_, trace) = fuse_traced(&features, &seg, &text, &weights, FuseOptions::default()).unwrap();
        let (_, trace2) = fuse_traced(&features, &seg, &text, &doubled, FuseOptions::default()).unwrap();
        for (a, b) in trace.head_logits.iter().zip(&trace2.head_logits) {
            for (x, y) in a.iter().zip(b.iter()) {
                assert!((y - 2.0 * x).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn jointly_permuting_key_value_rows_changes_nothing() {
        let weights = init_weights(6, 3, 12, 9).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let queries = Array2::from_shape_fn((4, 6), |_| rng.random_range(-1.0..1.0));
        let keys = Array2::from_shape_fn((5, 6), |_| rng.random_range(-1.0..1.0));
        let permuted = {
            let order = [3usize, 0, 4, 1, 2];
            let mut m = Array2::zeros((5, 6));
            for (dst, &src) in order.iter().enumerate() {
                m.row_mut(dst).assign(&keys.row(src));
            }
            m
        };
        let a = cross_attention(&queries, &keys, &weights).unwrap();
        let b = cross_attention(&queries, &permuted, &weights).unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let a = init_weights(8, 4, 16, 42).unwrap();
        let b = init_weights(8, 4, 16, 42).unwrap();
        assert_eq!(a, b);
        let c = init_weights(8, 4, 16, 43).unwrap();
        assert_ne!(a, c);
        // Second FFN layer and all biases start at zero.
        assert!(a.ffn2_w.iter().all(|&v| v == 0.0));
        assert!(a.ffn1_b.iter().all(|&v| v == 0.0));
        // Projections stay within the documented bound.
        let bound = 1.0 / (8f64).sqrt();
        assert!(a.w_q().iter().all(|&v| v.abs() <= bound));
    }

    #[test]
    fn head_count_must_divide_dim() {
        assert!(matches!(
            init_weights(5, 2, 8, 0),
            Err(FusionError::HeadsMismatch { dim: 5, heads: 2 })
        ));
        assert!(matches!(init_weights(4, 0, 8, 0), Err(FusionError::HeadsMismatch { .. })));
    }

    #[test]
    fn shape_mismatches_are_rejected() {
        let weights = init_weights(4, 2, 8, 1).unwrap();
        let (features, text) = random_inputs(4, 3);
        // Segmentation built for a different frame count.
        let seg = hard_segment(5, 2, 0).unwrap();
        assert!(matches!(
            fuse(&features, &seg, &text, &weights),
            Err(FusionError::FrameCountMismatch { segmentation: 5, frames: 3 })
        ));
        // Phase count mismatch between segmentation and text.
        let seg = hard_segment(3, 3, 0).unwrap();
        assert!(matches!(
            fuse(&features, &seg, &text, &weights),
            Err(FusionError::PhaseCountMismatch { segmentation: 3, text: 2 })
        ));
        // Dim mismatch between frames and weights.
        let narrow = init_weights(2, 1, 4, 1).unwrap();
        let seg = hard_segment(3, 2, 0).unwrap();
        assert!(matches!(
            fuse(&features, &seg, &text, &narrow),
            Err(FusionError::DimMismatch { .. })
        ));
    }

    #[test]
    fn optional_residual_and_norm_change_the_output() {
        let weights = init_weights(6, 2, 12, 4).unwrap();
        let (features, text) = random_inputs(6, 4);
        let seg = hard_segment(4, 2, 0).unwrap();
        let plain = fuse(&features, &seg, &text, &weights).unwrap();
        let residual = fuse_with_options(
            &features,
            &seg,
            &text,
            &weights,
            FuseOptions { query_residual: true, layer_norm: false },
        )
        .unwrap();
        let normed = fuse_with_options(
            &features,
            &seg,
            &text,
            &weights,
            FuseOptions { query_residual: false, layer_norm: true },
        )
        .unwrap();
        assert_ne!(plain.rows(), residual.rows());
        assert_ne!(plain.rows(), normed.rows());
        assert!(residual.rows().iter().all(|v| v.is_finite()));
        assert!(normed.rows().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn weights_roundtrip_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let first = dir.path().join("w1.lgaw");
        let second = dir.path().join("w2.lgaw");
        let weights = init_weights(6, 3, 10, 77).unwrap();
        weights.save(&first).unwrap();
        let loaded = FusionWeights::load(&first).unwrap();
        assert_eq!(weights, loaded);
        loaded.save(&second).unwrap();
        assert_eq!(std::fs::read(&first).unwrap(), std::fs::read(&second).unwrap());
    }

    #[test]
    fn corrupt_weights_files_name_the_offset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.lgaw");
        let weights = init_weights(4, 2, 8, 0).unwrap();
        weights.save(&path).unwrap();

        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            FusionWeights::load(&path),
            Err(FusionError::Corrupt { offset: 0, .. })
        ));

        let good = {
            weights.save(&path).unwrap();
            std::fs::read(&path).unwrap()
        };
        std::fs::write(&path, &good[..good.len() - 3]).unwrap();
        match FusionWeights::load(&path) {
            Err(FusionError::Corrupt { offset, .. }) => assert!(offset > 0),
            other => panic!("expected corrupt error, got {other:?}"),
        }

        let mut versioned = good.clone();
        versioned[4] = 9;
        std::fs::write(&path, &versioned).unwrap();
        assert!(matches!(
            FusionWeights::load(&path),
            Err(FusionError::UnsupportedVersion { found: 9, .. })
        ));

        let mut trailing = good;
        trailing.push(0);
        std::fs::write(&path, &trailing).unwrap();
        match FusionWeights::load(&path) {
            Err(FusionError::Corrupt { detail, .. }) => assert!(detail.contains("trailing")),
            other => panic!("expected corrupt error, got {other:?}"),
        }
    }

    #[test]
    fn prototype_validates_its_parts() {
        let rows = Array2::<f64>::zeros((3, 2));
        assert!(Prototype::new(rows.clone(), vec![2, 1], 3, "v", None).is_ok());
        assert!(Prototype::new(rows.clone(), vec![2, 2], 3, "v", None).is_err());
        assert!(Prototype::new(rows.clone(), vec![3, 0], 3, "v", None).is_err());
        assert!(Prototype::new(rows.clone(), vec![], 3, "v", None).is_err());
        assert!(Prototype::new(rows, vec![3], 0, "v", None).is_err());
        let nan = array![[f64::NAN]];
        assert!(Prototype::new(nan, vec![1], 1, "v", None).is_err());
    }

    #[test]
    fn phase_rows_slice_in_segmentation_order() {
        let rows = array![[0.0], [1.0], [2.0], [3.0], [4.0]];
        let p = Prototype::new(rows, vec![2, 3], 5, "v", Some(1)).unwrap();
        assert_eq!(p.phase_rows(0).nrows(), 2);
        assert_eq!(p.phase_rows(1)[(0, 0)], 2.0);
        assert_eq!(p.phase_rows(1)[(2, 0)], 4.0);
    }
}
