use crate::error::Result;

use super::graph::{Graph, Var};
use super::ops;
use super::rng::RngState;
use super::tensor::Tensor;

/// Modules expose their parameters by name for checkpointing and for the
/// optimizer. `visit` and `visit_mut` must enumerate exactly the names the
/// module binds during `forward`, in a stable order.
pub trait ParamModule {
    fn visit<'a>(&'a self, scope: &str, f: &mut dyn FnMut(String, &'a Tensor));
    fn visit_mut(&mut self, scope: &str, f: &mut dyn FnMut(String, &mut Tensor));

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit("p", &mut |_, t| n += t.numel());
        n
    }
}

fn key(scope: &str, leaf: &str) -> String {
    format!("{scope}.{leaf}")
}

pub fn random_uniform(rng: &mut RngState, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor {
        shape: shape.to_vec(),
        data: (0..n).map(|_| rng.uniform_in(lo, hi)).collect(),
    }
}

fn xavier_uniform(rng: &mut RngState, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    random_uniform(rng, shape, -limit, limit)
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub w: Tensor, // [in, out]
    pub b: Tensor, // [out]
}

impl Linear {
    pub fn new(rng: &mut RngState, in_dim: usize, out_dim: usize) -> Linear {
        Linear {
            w: xavier_uniform(rng, &[in_dim, out_dim], in_dim, out_dim),
            b: Tensor::zeros(&[out_dim]),
        }
    }

    pub fn bind(&self, g: &mut Graph, scope: &str) -> Result<(Var, Var)> {
        Ok((g.param(&key(scope, "w"), &self.w)?, g.param(&key(scope, "b"), &self.b)?))
    }

    pub fn forward(&self, g: &mut Graph, scope: &str, x: Var) -> Result<Var> {
        let (w, b) = self.bind(g, scope)?;
        ops::linear(g, x, w, b)
    }
}

impl ParamModule for Linear {
    fn visit<'a>(&'a self, scope: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        f(key(scope, "w"), &self.w);
        f(key(scope, "b"), &self.b);
    }
    fn visit_mut(&mut self, scope: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        f(key(scope, "w"), &mut self.w);
        f(key(scope, "b"), &mut self.b);
    }
}

#[derive(Debug, Clone)]
pub struct Conv1d {
    pub k: Tensor, // [3, cin, cout]
    pub b: Tensor, // [cout]
}

impl Conv1d {
    pub fn new(rng: &mut RngState, cin: usize, cout: usize) -> Conv1d {
        Conv1d {
            k: xavier_uniform(rng, &[3, cin, cout], 3 * cin, 3 * cout),
            b: Tensor::zeros(&[cout]),
        }
    }

    pub fn forward(&self, g: &mut Graph, scope: &str, x: Var) -> Result<Var> {
        let k = g.param(&key(scope, "k"), &self.k)?;
        let b = g.param(&key(scope, "b"), &self.b)?;
        ops::conv1d_k3p1(g, x, k, b)
    }
}

impl ParamModule for Conv1d {
    fn visit<'a>(&'a self, scope: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        f(key(scope, "k"), &self.k);
        f(key(scope, "b"), &self.b);
    }
    fn visit_mut(&mut self, scope: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        f(key(scope, "k"), &mut self.k);
        f(key(scope, "b"), &mut self.b);
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new(dim: usize, eps: f64) -> LayerNorm {
        LayerNorm {
            gamma: Tensor::full(&[dim], 1.0),
            beta: Tensor::zeros(&[dim]),
            eps,
        }
    }

    pub fn forward(&self, g: &mut Graph, scope: &str, x: Var) -> Result<Var> {
        let gamma = g.param(&key(scope, "gamma"), &self.gamma)?;
        let beta = g.param(&key(scope, "beta"), &self.beta)?;
        ops::layer_norm(g, x, gamma, beta, self.eps)
    }
}

impl ParamModule for LayerNorm {
    fn visit<'a>(&'a self, scope: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        f(key(scope, "gamma"), &self.gamma);
        f(key(scope, "beta"), &self.beta);
    }
    fn visit_mut(&mut self, scope: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        f(key(scope, "gamma"), &mut self.gamma);
        f(key(scope, "beta"), &mut self.beta);
    }
}

/// Multi-head attention with learned q/k/v input projections and output
/// projection.
#[derive(Debug, Clone)]
pub struct Attention {
    pub heads: usize,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
}

impl Attention {
    pub fn new(rng: &mut RngState, dim: usize, heads: usize) -> Attention {
        Attention {
            heads,
            q: Linear::new(rng, dim, dim),
            k: Linear::new(rng, dim, dim),
            v: Linear::new(rng, dim, dim),
            o: Linear::new(rng, dim, dim),
        }
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        scope: &str,
        q_in: Var,
        k_in: Var,
        v_in: Var,
        mask: Option<Var>,
    ) -> Result<Var> {
        let q = self.q.forward(g, &key(scope, "q"), q_in)?;
        let k = self.k.forward(g, &key(scope, "k"), k_in)?;
        let v = self.v.forward(g, &key(scope, "v"), v_in)?;
        let (wo, bo) = self.o.bind(g, &key(scope, "o"))?;
        ops::multi_head_attention(g, q, k, v, wo, bo, self.heads, mask)
    }
}

impl ParamModule for Attention {
    fn visit<'a>(&'a self, scope: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        self.q.visit(&key(scope, "q"), f);
        self.k.visit(&key(scope, "k"), f);
        self.v.visit(&key(scope, "v"), f);
        self.o.visit(&key(scope, "o"), f);
    }
    fn visit_mut(&mut self, scope: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.q.visit_mut(&key(scope, "q"), f);
        self.k.visit_mut(&key(scope, "k"), f);
        self.v.visit_mut(&key(scope, "v"), f);
        self.o.visit_mut(&key(scope, "o"), f);
    }
}

/// Post-norm transformer encoder block:
/// x -> LN(x + SelfAttn(x)) -> LN(h + FF(h)) with a two-layer ReLU FF.
#[derive(Debug, Clone)]
pub struct EncoderBlock {
    pub attn: Attention,
    pub ln1: LayerNorm,
    pub ff1: Linear,
    pub ff2: Linear,
    pub ln2: LayerNorm,
}

impl EncoderBlock {
    pub fn new(rng: &mut RngState, dim: usize, heads: usize, ff_dim: usize, eps: f64) -> Self {
        EncoderBlock {
            attn: Attention::new(rng, dim, heads),
            ln1: LayerNorm::new(dim, eps),
            ff1: Linear::new(rng, dim, ff_dim),
            ff2: Linear::new(rng, ff_dim, dim),
            ln2: LayerNorm::new(dim, eps),
        }
    }

    pub fn forward(&self, g: &mut Graph, scope: &str, x: Var) -> Result<Var> {
        let a = self.attn.forward(g, &key(scope, "attn"), x, x, x, None)?;
        let r = g.add(x, a)?;
        let h = self.ln1.forward(g, &key(scope, "ln1"), r)?;
        let f1 = self.ff1.forward(g, &key(scope, "ff1"), h)?;
        let f1 = g.relu(f1);
        let f2 = self.ff2.forward(g, &key(scope, "ff2"), f1)?;
        let r2 = g.add(h, f2)?;
        self.ln2.forward(g, &key(scope, "ln2"), r2)
    }
}

impl ParamModule for EncoderBlock {
    fn visit<'a>(&'a self, scope: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        self.attn.visit(&key(scope, "attn"), f);
        self.ln1.visit(&key(scope, "ln1"), f);
        self.ff1.visit(&key(scope, "ff1"), f);
        self.ff2.visit(&key(scope, "ff2"), f);
        self.ln2.visit(&key(scope, "ln2"), f);
    }
    fn visit_mut(&mut self, scope: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.attn.visit_mut(&key(scope, "attn"), f);
        self.ln1.visit_mut(&key(scope, "ln1"), f);
        self.ff1.visit_mut(&key(scope, "ff1"), f);
        self.ff2.visit_mut(&key(scope, "ff2"), f);
        self.ln2.visit_mut(&key(scope, "ln2"), f);
    }
}

/// Post-norm transformer decoder block: self-attention, cross-attention over
/// the encoder memory, then the FF sublayer, each with residual + LN.
#[derive(Debug, Clone)]
pub struct DecoderBlock {
    pub self_attn: Attention,
    pub ln1: LayerNorm,
    pub cross_attn: Attention,
    pub ln2: LayerNorm,
    pub ff1: Linear,
    pub ff2: Linear,
    pub ln3: LayerNorm,
}

impl DecoderBlock {
    pub fn new(rng: &mut RngState, dim: usize, heads: usize, ff_dim: usize, eps: f64) -> Self {
        DecoderBlock {
            self_attn: Attention::new(rng, dim, heads),
            ln1: LayerNorm::new(dim, eps),
            cross_attn: Attention::new(rng, dim, heads),
            ln2: LayerNorm::new(dim, eps),
            ff1: Linear::new(rng, dim, ff_dim),
            ff2: Linear::new(rng, ff_dim, dim),
            ln3: LayerNorm::new(dim, eps),
        }
    }

    pub fn forward(&self, g: &mut Graph, scope: &str, x: Var, memory: Var) -> Result<Var> {
        let a = self.self_attn.forward(g, &key(scope, "self"), x, x, x, None)?;
        let r = g.add(x, a)?;
        let h = self.ln1.forward(g, &key(scope, "ln1"), r)?;
        let c = self
            .cross_attn
            .forward(g, &key(scope, "cross"), h, memory, memory, None)?;
        let r2 = g.add(h, c)?;
        let h2 = self.ln2.forward(g, &key(scope, "ln2"), r2)?;
        let f1 = self.ff1.forward(g, &key(scope, "ff1"), h2)?;
        let f1 = g.relu(f1);
        let f2 = self.ff2.forward(g, &key(scope, "ff2"), f1)?;
        let r3 = g.add(h2, f2)?;
        self.ln3.forward(g, &key(scope, "ln3"), r3)
    }
}

impl ParamModule for DecoderBlock {
    fn visit<'a>(&'a self, scope: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        self.self_attn.visit(&key(scope, "self"), f);
        self.ln1.visit(&key(scope, "ln1"), f);
        self.cross_attn.visit(&key(scope, "cross"), f);
        self.ln2.visit(&key(scope, "ln2"), f);
        self.ff1.visit(&key(scope, "ff1"), f);
        self.ff2.visit(&key(scope, "ff2"), f);
        self.ln3.visit(&key(scope, "ln3"), f);
    }
    fn visit_mut(&mut self, scope: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.self_attn.visit_mut(&key(scope, "self"), f);
        self.ln1.visit_mut(&key(scope, "ln1"), f);
        self.cross_attn.visit_mut(&key(scope, "cross"), f);
        self.ln2.visit_mut(&key(scope, "ln2"), f);
        self.ff1.visit_mut(&key(scope, "ff1"), f);
        self.ff2.visit_mut(&key(scope, "ff2"), f);
        self.ln3.visit_mut(&key(scope, "ln3"), f);
    }
}

/// Feed-forward transformer block with convolutional position-wise layers
/// instead of pure linears: self-attention sublayer, then two kernel-3
/// temporal convolutions with a ReLU between, residuals and layer norm after
/// each sublayer.
#[derive(Debug, Clone)]
pub struct FftBlock {
    pub attn: Attention,
    pub ln1: LayerNorm,
    pub conv1: Conv1d,
    pub conv2: Conv1d,
    pub ln2: LayerNorm,
}

impl FftBlock {
    pub fn new(rng: &mut RngState, dim: usize, heads: usize, conv_dim: usize, eps: f64) -> Self {
        FftBlock {
            attn: Attention::new(rng, dim, heads),
            ln1: LayerNorm::new(dim, eps),
            conv1: Conv1d::new(rng, dim, conv_dim),
            conv2: Conv1d::new(rng, conv_dim, dim),
            ln2: LayerNorm::new(dim, eps),
        }
    }

    pub fn forward(&self, g: &mut Graph, scope: &str, x: Var) -> Result<Var> {
        let a = self.attn.forward(g, &key(scope, "attn"), x, x, x, None)?;
        let r = g.add(x, a)?;
        let h = self.ln1.forward(g, &key(scope, "ln1"), r)?;
        let c1 = self.conv1.forward(g, &key(scope, "conv1"), h)?;
        let c1 = g.relu(c1);
        let c2 = self.conv2.forward(g, &key(scope, "conv2"), c1)?;
        let r2 = g.add(h, c2)?;
        self.ln2.forward(g, &key(scope, "ln2"), r2)
    }
}

impl ParamModule for FftBlock {
    fn visit<'a>(&'a self, scope: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        self.attn.visit(&key(scope, "attn"), f);
        self.ln1.visit(&key(scope, "ln1"), f);
        self.conv1.visit(&key(scope, "conv1"), f);
        self.conv2.visit(&key(scope, "conv2"), f);
        self.ln2.visit(&key(scope, "ln2"), f);
    }
    fn visit_mut(&mut self, scope: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.attn.visit_mut(&key(scope, "attn"), f);
        self.ln1.visit_mut(&key(scope, "ln1"), f);
        self.conv1.visit_mut(&key(scope, "conv1"), f);
        self.conv2.visit_mut(&key(scope, "conv2"), f);
        self.ln2.visit_mut(&key(scope, "ln2"), f);
    }
}
