//! The four networks: facial style encoder, body/face content encoders, and
//! the facial motion generator, plus the assembled model and checkpointing.

pub mod checkpoint;
pub mod config;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, NamedTensor, OptimizerStateData, TrainProgress};
pub use config::ModelConfig;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion::{BodyMotionSequence, FacialMotionSequence, FACE_DIMS};
use crate::nn::{
    ops, Conv1d, DecoderBlock, EncoderBlock, FftBlock, Graph, LayerNorm, Linear, ParamModule,
    RngState, Tensor, Var,
};

/// Whether style codes are soft simplex samples (training) or snapped to
/// one-hot (inference).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StyleMode {
    Soft,
    Hard,
}

impl std::str::FromStr for StyleMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<StyleMode> {
        match s {
            "soft" => Ok(StyleMode::Soft),
            "hard" => Ok(StyleMode::Hard),
            other => Err(Error::invalid(format!(
                "style mode must be `soft` or `hard`, got `{other}`"
            ))),
        }
    }
}

/// Flattened concatenation of D categorical K-vectors. Each contiguous
/// K-block is a simplex point (soft) or exactly one-hot (hard).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StyleEmbedding {
    d: usize,
    k: usize,
    values: Vec<f64>,
}

impl StyleEmbedding {
    pub fn new(d: usize, k: usize, values: Vec<f64>) -> Result<StyleEmbedding> {
        if values.len() != d * k {
            return Err(Error::shape(
                "StyleEmbedding::new",
                format!("expected {} values for D={d}, K={k}, got {}", d * k, values.len()),
            ));
        }
        for (block_idx, block) in values.chunks_exact(k).enumerate() {
            let mut sum = 0.0;
            for &v in block {
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::invalid(format!(
                        "style block {block_idx} has a negative or non-finite entry: {v}"
                    )));
                }
                sum += v;
            }
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::invalid(format!(
                    "style block {block_idx} sums to {sum}, expected 1"
                )));
            }
        }
        Ok(StyleEmbedding { d, k, values })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// True when every K-block is exactly one-hot.
    pub fn is_hard(&self) -> bool {
        self.values
            .chunks_exact(self.k)
            .all(|block| block.iter().filter(|&&v| v == 1.0).count() == 1
                && block.iter().filter(|&&v| v == 0.0).count() == self.k - 1)
    }

    /// [1, D*K] tensor for feeding the generator.
    pub fn to_tensor(&self) -> Tensor {
        Tensor {
            shape: vec![1, self.values.len()],
            data: self.values.clone(),
        }
    }
}

/// Facial style encoder: two temporal conv layers, a feed-forward transformer
/// block over time, temporal mean pooling into D*K logits, and D
/// Gumbel-Softmax draws.
#[derive(Debug, Clone)]
pub struct StyleEncoder {
    d: usize,
    k: usize,
    conv1: Conv1d,
    ln1: LayerNorm,
    conv2: Conv1d,
    ln2: LayerNorm,
    fft: FftBlock,
}

impl StyleEncoder {
    pub fn new(rng: &mut RngState, cfg: &ModelConfig) -> StyleEncoder {
        let h = cfg.style_hidden();
        StyleEncoder {
            d: cfg.style_d,
            k: cfg.style_k,
            conv1: Conv1d::new(rng, cfg.face_dim, h),
            ln1: LayerNorm::new(h, cfg.ln_eps),
            conv2: Conv1d::new(rng, h, h),
            ln2: LayerNorm::new(h, cfg.ln_eps),
            fft: FftBlock::new(rng, h, cfg.style_heads, h, cfg.ln_eps),
        }
    }

    /// Fresh Gumbel noise for one sample, [D, K].
    pub fn sample_noise(&self, rng: &mut RngState) -> Tensor {
        Tensor {
            shape: vec![self.d, self.k],
            data: (0..self.d * self.k).map(|_| rng.gumbel()).collect(),
        }
    }

    /// Pool the reference sequence into [D, K] categorical logits.
    pub fn logits(&self, g: &mut Graph, scope: &str, s: Var) -> Result<Var> {
        let t_len = g.shape_of(s)[0];
        if t_len == 0 {
            return Err(Error::invalid("style reference must have at least one frame"));
        }
        let h = self.conv1.forward(g, &format!("{scope}.conv1"), s)?;
        let h = g.relu(h);
        let h = self.ln1.forward(g, &format!("{scope}.ln1"), h)?;
        let h = self.conv2.forward(g, &format!("{scope}.conv2"), h)?;
        let h = g.relu(h);
        let h = self.ln2.forward(g, &format!("{scope}.ln2"), h)?;
        let pe = g.constant(ops::sinusoidal_pe(t_len, self.d * self.k)?);
        let h = g.add(h, pe)?;
        let h = self.fft.forward(g, &format!("{scope}.fft"), h)?;
        let pooled = g.mean_rows(h)?;
        g.reshape(pooled, &[self.d, self.k])
    }

    /// Full encode: returns the flattened [1, D*K] sample and [D, K] logits.
    pub fn forward(
        &self,
        g: &mut Graph,
        scope: &str,
        s: Var,
        tau: f64,
        rng: &mut RngState,
        hard: bool,
    ) -> Result<(Var, Var)> {
        let noise = self.sample_noise(rng);
        self.forward_with_noise(g, scope, s, tau, noise, hard)
    }

    /// Deterministic encode with caller-supplied Gumbel noise; used where two
    /// encodings must share the same draw.
    pub fn forward_with_noise(
        &self,
        g: &mut Graph,
        scope: &str,
        s: Var,
        tau: f64,
        noise: Tensor,
        hard: bool,
    ) -> Result<(Var, Var)> {
        let logits = self.logits(g, scope, s)?;
        let sample = ops::gumbel_softmax_with_noise(g, logits, tau, noise, hard)?;
        let emb = g.reshape(sample, &[1, self.d * self.k])?;
        Ok((emb, logits))
    }
}

impl ParamModule for StyleEncoder {
    fn visit<'a>(&'a self, scope: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        self.conv1.visit(&format!("{scope}.conv1"), f);
        self.ln1.visit(&format!("{scope}.ln1"), f);
        self.conv2.visit(&format!("{scope}.conv2"), f);
        self.ln2.visit(&format!("{scope}.ln2"), f);
        self.fft.visit(&format!("{scope}.fft"), f);
    }
    fn visit_mut(&mut self, scope: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.conv1.visit_mut(&format!("{scope}.conv1"), f);
        self.ln1.visit_mut(&format!("{scope}.ln1"), f);
        self.conv2.visit_mut(&format!("{scope}.conv2"), f);
        self.ln2.visit_mut(&format!("{scope}.ln2"), f);
        self.fft.visit_mut(&format!("{scope}.fft"), f);
    }
}

/// Content encoder: input projection, positional encoding, a stack of
/// transformer encoder blocks, an output linear, and per-frame L2
/// normalization. Body and face encoders share this structure and differ
/// only in input width.
#[derive(Debug, Clone)]
pub struct ContentEncoder {
    in_dim: usize,
    input: Linear,
    blocks: Vec<EncoderBlock>,
    output: Linear,
}

impl ContentEncoder {
    pub fn new(rng: &mut RngState, in_dim: usize, cfg: &ModelConfig) -> ContentEncoder {
        ContentEncoder {
            in_dim,
            input: Linear::new(rng, in_dim, cfg.embed_dim),
            blocks: (0..cfg.enc_layers)
                .map(|_| EncoderBlock::new(rng, cfg.embed_dim, cfg.enc_heads, cfg.enc_ff_dim, cfg.ln_eps))
                .collect(),
            output: Linear::new(rng, cfg.embed_dim, cfg.embed_dim),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn forward(&self, g: &mut Graph, scope: &str, x: Var) -> Result<Var> {
        let shape = g.shape_of(x).to_vec();
        if shape.len() != 2 || shape[1] != self.in_dim {
            return Err(Error::shape(
                "ContentEncoder::forward",
                format!("expected [T, {}], got {shape:?}", self.in_dim),
            ));
        }
        if shape[0] == 0 {
            return Err(Error::invalid("content input must have at least one frame"));
        }
        let mut h = self.input.forward(g, &format!("{scope}.input"), x)?;
        let width = g.shape_of(h)[1];
        let pe = g.constant(ops::sinusoidal_pe(shape[0], width)?);
        h = g.add(h, pe)?;
        for (i, block) in self.blocks.iter().enumerate() {
            h = block.forward(g, &format!("{scope}.block{i}"), h)?;
        }
        let out = self.output.forward(g, &format!("{scope}.output"), h)?;
        g.normalize_rows(out, 1e-12)
    }
}

impl ParamModule for ContentEncoder {
    fn visit<'a>(&'a self, scope: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        self.input.visit(&format!("{scope}.input"), f);
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit(&format!("{scope}.block{i}"), f);
        }
        self.output.visit(&format!("{scope}.output"), f);
    }
    fn visit_mut(&mut self, scope: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.input.visit_mut(&format!("{scope}.input"), f);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_mut(&format!("{scope}.block{i}"), f);
        }
        self.output.visit_mut(&format!("{scope}.output"), f);
    }
}

/// Facial motion generator: the style code is projected, broadcast along
/// time, concatenated with the per-frame content embedding, and decoded by a
/// transformer decoder that cross-attends to the content sequence; a linear
/// head emits 53 values per frame.
#[derive(Debug, Clone)]
pub struct Generator {
    style_proj: Linear,
    input: Linear,
    blocks: Vec<DecoderBlock>,
    output: Linear,
}

impl Generator {
    pub fn new(rng: &mut RngState, cfg: &ModelConfig) -> Generator {
        Generator {
            style_proj: Linear::new(rng, cfg.style_hidden(), cfg.style_proj_dim),
            input: Linear::new(rng, cfg.embed_dim + cfg.style_proj_dim, cfg.embed_dim),
            blocks: (0..cfg.dec_layers)
                .map(|_| DecoderBlock::new(rng, cfg.embed_dim, cfg.dec_heads, cfg.dec_ff_dim, cfg.ln_eps))
                .collect(),
            output: Linear::new(rng, cfg.embed_dim, FACE_DIMS),
        }
    }

    /// `content` is [T, embed]; `style` is [1, D*K]. Output is [T, 53].
    pub fn forward(&self, g: &mut Graph, scope: &str, content: Var, style: Var) -> Result<Var> {
        let t_len = g.shape_of(content)[0];
        let proj = self.style_proj.forward(g, &format!("{scope}.style_proj"), style)?;
        let broadcast = g.repeat_row(proj, t_len)?;
        self.decode(g, scope, content, broadcast)
    }

    /// Like [`Generator::forward`] but with one style code per frame
    /// (`styles` is [T, D*K]). A constant row sequence reproduces the
    /// broadcast path bitwise, since the projection is row-wise.
    pub fn forward_rows(&self, g: &mut Graph, scope: &str, content: Var, styles: Var) -> Result<Var> {
        let t_len = g.shape_of(content)[0];
        let s_len = g.shape_of(styles)[0];
        if t_len != s_len {
            return Err(Error::shape(
                "Generator::forward_rows",
                format!("content has {t_len} frames but styles have {s_len}"),
            ));
        }
        let proj = self.style_proj.forward(g, &format!("{scope}.style_proj"), styles)?;
        self.decode(g, scope, content, proj)
    }

    fn decode(&self, g: &mut Graph, scope: &str, content: Var, style_rows: Var) -> Result<Var> {
        let t_len = g.shape_of(content)[0];
        let joined = g.concat_cols(content, style_rows)?;
        let mut h = self.input.forward(g, &format!("{scope}.input"), joined)?;
        let width = g.shape_of(h)[1];
        let pe = g.constant(ops::sinusoidal_pe(t_len, width)?);
        h = g.add(h, pe)?;
        for (i, block) in self.blocks.iter().enumerate() {
            h = block.forward(g, &format!("{scope}.block{i}"), h, content)?;
        }
        self.output.forward(g, &format!("{scope}.output"), h)
    }
}

impl ParamModule for Generator {
    fn visit<'a>(&'a self, scope: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        self.style_proj.visit(&format!("{scope}.style_proj"), f);
        self.input.visit(&format!("{scope}.input"), f);
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit(&format!("{scope}.block{i}"), f);
        }
        self.output.visit(&format!("{scope}.output"), f);
    }
    fn visit_mut(&mut self, scope: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.style_proj.visit_mut(&format!("{scope}.style_proj"), f);
        self.input.visit_mut(&format!("{scope}.input"), f);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_mut(&format!("{scope}.block{i}"), f);
        }
        self.output.visit_mut(&format!("{scope}.output"), f);
    }
}

/// The assembled model. Parameter names are rooted at fixed scopes: `e_s`
/// (style encoder), `e_b` (body content), `e_f` (face content), `gen`.
#[derive(Debug, Clone)]
pub struct B2fModel {
    pub config: ModelConfig,
    pub style_enc: StyleEncoder,
    pub body_enc: ContentEncoder,
    pub face_enc: ContentEncoder,
    pub generator: Generator,
}

impl B2fModel {
    pub fn new(config: ModelConfig, rng: &mut RngState) -> Result<B2fModel> {
        config.validate()?;
        Ok(B2fModel {
            style_enc: StyleEncoder::new(rng, &config),
            body_enc: ContentEncoder::new(rng, config.body_dim, &config),
            face_enc: ContentEncoder::new(rng, config.face_dim, &config),
            generator: Generator::new(rng, &config),
            config,
        })
    }

    pub fn visit_params<'a>(&'a self, f: &mut dyn FnMut(String, &'a Tensor)) {
        self.style_enc.visit("e_s", f);
        self.body_enc.visit("e_b", f);
        self.face_enc.visit("e_f", f);
        self.generator.visit("gen", f);
    }

    pub fn visit_params_mut(&mut self, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.style_enc.visit_mut("e_s", f);
        self.body_enc.visit_mut("e_b", f);
        self.face_enc.visit_mut("e_f", f);
        self.generator.visit_mut("gen", f);
    }

    pub fn named_params(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        self.visit_params(&mut |name, t| out.push((name, t.clone())));
        out
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |_, t| n += t.numel());
        n
    }

    /// Graph-level style encode rooted at the model's scopes.
    pub fn style_forward(
        &self,
        g: &mut Graph,
        s: Var,
        tau: f64,
        rng: &mut RngState,
        hard: bool,
    ) -> Result<(Var, Var)> {
        self.style_enc.forward(g, "e_s", s, tau, rng, hard)
    }

    pub fn body_forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        self.body_enc.forward(g, "e_b", x)
    }

    pub fn face_forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        self.face_enc.forward(g, "e_f", x)
    }

    pub fn generate_on(&self, g: &mut Graph, content: Var, style: Var) -> Result<Var> {
        self.generator.forward(g, "gen", content, style)
    }

    /// Generator pass with one style row per frame ([T, D*K]).
    pub fn generate_rows_on(&self, g: &mut Graph, content: Var, styles: Var) -> Result<Var> {
        self.generator.forward_rows(g, "gen", content, styles)
    }

    /// Encode a style reference into an embedding plus the pooled logits.
    pub fn encode_style(
        &self,
        s: &FacialMotionSequence,
        mode: StyleMode,
        tau: f64,
        rng: &mut RngState,
    ) -> Result<(StyleEmbedding, Tensor)> {
        let mut g = Graph::inference();
        let sv = g.constant(s.to_tensor());
        let (emb, logits) =
            self.style_forward(&mut g, sv, tau, rng, mode == StyleMode::Hard)?;
        let emb = StyleEmbedding::new(
            self.config.style_d,
            self.config.style_k,
            g.value(emb).data.clone(),
        )?;
        Ok((emb, g.value(logits).clone()))
    }

    /// Per-frame unit-norm content embeddings, [T, embed].
    pub fn encode_content(&self, x: &Tensor, which: ContentKind) -> Result<Tensor> {
        let mut g = Graph::inference();
        let xv = g.constant(x.clone());
        let out = match which {
            ContentKind::Body => self.body_forward(&mut g, xv)?,
            ContentKind::Face => self.face_forward(&mut g, xv)?,
        };
        Ok(g.value(out).clone())
    }

    pub fn encode_body(&self, x: &BodyMotionSequence) -> Result<Tensor> {
        self.encode_content(&x.to_tensor(), ContentKind::Body)
    }

    pub fn encode_face(&self, x: &FacialMotionSequence) -> Result<Tensor> {
        self.encode_content(&x.to_tensor(), ContentKind::Face)
    }

    /// Decode facial motion from content embeddings under a style embedding.
    pub fn generate(
        &self,
        content: &Tensor,
        style: &StyleEmbedding,
        fps: f64,
    ) -> Result<FacialMotionSequence> {
        let mut g = Graph::inference();
        let c = g.constant(content.clone());
        let s = g.constant(style.to_tensor());
        let out = self.generate_on(&mut g, c, s)?;
        FacialMotionSequence::from_tensor(fps, g.value(out))
    }

    /// The whole pipeline: body -> content embeddings, style reference ->
    /// style code, then the generator.
    pub fn b2f_forward(
        &self,
        body: &BodyMotionSequence,
        style_ref: &FacialMotionSequence,
        mode: StyleMode,
        tau: f64,
        rng: &mut RngState,
    ) -> Result<(FacialMotionSequence, Tensor)> {
        let (style, logits) = self.encode_style(style_ref, mode, tau, rng)?;
        let content = self.encode_body(body)?;
        let out = self.generate(&content, &style, body.fps)?;
        Ok((out, logits))
    }
}

/// Selector for [`B2fModel::encode_content`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContentKind {
    Body,
    Face,
}
