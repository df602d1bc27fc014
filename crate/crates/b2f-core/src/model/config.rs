use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion::FACE_DIMS;

/// All widths and depths of the four networks. Defaults follow the reference
/// setup: 512-dim content embeddings from 8-layer/4-head encoders, a 4-layer
/// decoder, and a style code of D=12 categoricals over K=16 categories
/// sampled at tau=0.7 during training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Per-frame body feature width fed to the body content encoder.
    pub body_dim: usize,
    /// Per-frame facial width; fixed at 53 (50 expression + 3 jaw).
    pub face_dim: usize,
    /// Content embedding width shared by both content encoders.
    pub embed_dim: usize,
    pub enc_layers: usize,
    pub enc_heads: usize,
    pub enc_ff_dim: usize,
    pub dec_layers: usize,
    pub dec_heads: usize,
    pub dec_ff_dim: usize,
    /// Number of categorical style variables (D).
    pub style_d: usize,
    /// Categories per style variable (K); the style code is D*K long.
    pub style_k: usize,
    pub style_heads: usize,
    /// Width of the projected style vector broadcast to every frame.
    pub style_proj_dim: usize,
    pub tau_train: f64,
    pub ln_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            body_dim: 120,
            face_dim: FACE_DIMS,
            embed_dim: 512,
            enc_layers: 8,
            enc_heads: 4,
            enc_ff_dim: 1024,
            dec_layers: 4,
            dec_heads: 4,
            dec_ff_dim: 1024,
            style_d: 12,
            style_k: 16,
            style_heads: 4,
            style_proj_dim: 64,
            tau_train: 0.7,
            ln_eps: 1e-5,
        }
    }
}

impl ModelConfig {
    /// Hidden width of the style encoder: one slot per (variable, category).
    pub fn style_hidden(&self) -> usize {
        self.style_d * self.style_k
    }

    /// A small preset with the same shape constraints as the default, for
    /// desk-scale training runs and tests. The style code keeps D=12, K=16 so
    /// embeddings stay 192 long.
    pub fn reduced() -> Self {
        ModelConfig {
            embed_dim: 64,
            enc_layers: 2,
            enc_ff_dim: 128,
            dec_layers: 2,
            dec_ff_dim: 128,
            style_proj_dim: 32,
            ..ModelConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("body_dim", self.body_dim),
            ("face_dim", self.face_dim),
            ("embed_dim", self.embed_dim),
            ("enc_layers", self.enc_layers),
            ("enc_heads", self.enc_heads),
            ("enc_ff_dim", self.enc_ff_dim),
            ("dec_layers", self.dec_layers),
            ("dec_heads", self.dec_heads),
            ("dec_ff_dim", self.dec_ff_dim),
            ("style_d", self.style_d),
            ("style_k", self.style_k),
            ("style_heads", self.style_heads),
            ("style_proj_dim", self.style_proj_dim),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::invalid(format!("config: {name} must be positive")));
            }
        }
        if self.face_dim != FACE_DIMS {
            return Err(Error::invalid(format!(
                "config: face_dim must be {FACE_DIMS}, got {}",
                self.face_dim
            )));
        }
        if self.embed_dim % self.enc_heads != 0 {
            return Err(Error::invalid(format!(
                "config: embed_dim {} not divisible by enc_heads {}",
                self.embed_dim, self.enc_heads
            )));
        }
        if self.embed_dim % self.dec_heads != 0 {
            return Err(Error::invalid(format!(
                "config: embed_dim {} not divisible by dec_heads {}",
                self.embed_dim, self.dec_heads
            )));
        }
        if self.style_hidden() % self.style_heads != 0 {
            return Err(Error::invalid(format!(
                "config: style hidden width {} not divisible by style_heads {}",
                self.style_hidden(),
                self.style_heads
            )));
        }
        if self.embed_dim % 2 != 0 || self.style_hidden() % 2 != 0 {
            return Err(Error::invalid(
                "config: embed_dim and style hidden width must be even for sinusoidal encodings",
            ));
        }
        if !(self.tau_train > 0.0) || !self.tau_train.is_finite() {
            return Err(Error::invalid(format!(
                "config: tau_train must be positive and finite, got {}",
                self.tau_train
            )));
        }
        if !(self.ln_eps > 0.0) {
            return Err(Error::invalid(format!(
                "config: ln_eps must be positive, got {}",
                self.ln_eps
            )));
        }
        Ok(())
    }
}
