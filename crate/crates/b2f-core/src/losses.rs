//! The five-term training objective: reconstruction (with jaw up-weighting),
//! body/face content alignment, KL-to-uniform on the style categoricals,
//! self-consistency, and cross-batch consistency, plus the three-phase KL
//! weight schedule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::B2fModel;
use crate::motion::{TrainingBatch, EXPRESSION_DIMS, FACE_DIMS, JAW_DIMS};
use crate::nn::{Graph, RngState, Var};

/// Static loss weights. The KL weight is scheduled separately (see
/// [`KlSchedule`]); `lambda_jaw` lives inside the reconstruction term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda4: f64,
    pub lambda5: f64,
    pub lambda_jaw: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda1: 5.0,
            lambda2: 0.5,
            lambda4: 0.5,
            lambda5: 0.1,
            lambda_jaw: 1000.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda4", self.lambda4),
            ("lambda5", self.lambda5),
            ("lambda_jaw", self.lambda_jaw),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::invalid(format!(
                    "loss weight {name} must be finite and >= 0, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Warm up linearly to `max_value` over the first fraction of training, hold,
/// then decay linearly back to zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KlSchedule {
    pub max_value: f64,
    pub warmup: f64,
    pub hold: f64,
    pub decay: f64,
}

impl Default for KlSchedule {
    fn default() -> Self {
        KlSchedule {
            max_value: 0.3,
            warmup: 0.25,
            hold: 0.25,
            decay: 0.5,
        }
    }
}

impl KlSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.max_value >= 0.0) || !self.max_value.is_finite() {
            return Err(Error::invalid(format!(
                "kl schedule max_value must be finite and >= 0, got {}",
                self.max_value
            )));
        }
        for (name, v) in [("warmup", self.warmup), ("hold", self.hold), ("decay", self.decay)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::invalid(format!(
                    "kl schedule {name} must be finite and >= 0, got {v}"
                )));
            }
        }
        let sum = self.warmup + self.hold + self.decay;
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!(
                "kl schedule fractions must sum to 1, got {sum}"
            )));
        }
        Ok(())
    }
}

/// Scheduled KL weight at a training progress fraction in [0, 1].
/// Out-of-range fractions are clamped and a warning is written to stderr.
pub fn kl_weight(schedule: &KlSchedule, epoch_fraction: f64) -> f64 {
    let f = if !(0.0..=1.0).contains(&epoch_fraction) || epoch_fraction.is_nan() {
        let clamped = if epoch_fraction.is_nan() {
            0.0
        } else {
            epoch_fraction.clamp(0.0, 1.0)
        };
        eprintln!("warning: epoch fraction {epoch_fraction} outside [0,1], clamped to {clamped}");
        clamped
    } else {
        epoch_fraction
    };
    if f < schedule.warmup {
        if schedule.warmup == 0.0 {
            schedule.max_value
        } else {
            schedule.max_value * f / schedule.warmup
        }
    } else if f <= schedule.warmup + schedule.hold {
        schedule.max_value
    } else if schedule.decay == 0.0 {
        0.0
    } else {
        schedule.max_value * (1.0 - f) / schedule.decay
    }
}

/// MSE over the 50 expression dims plus `lambda_jaw` times the MSE over the
/// 3 jaw dims, each averaged over frames x dims.
pub fn recon_loss(g: &mut Graph, target: Var, output: Var, lambda_jaw: f64) -> Result<Var> {
    let ts = g.shape_of(target).to_vec();
    let os = g.shape_of(output).to_vec();
    if ts != os {
        return Err(Error::shape(
            "recon_loss",
            format!("target {ts:?} vs output {os:?}"),
        ));
    }
    if ts.len() != 2 || ts[1] != FACE_DIMS {
        return Err(Error::shape(
            "recon_loss",
            format!("expected [T, {FACE_DIMS}] facial frames, got {ts:?}"),
        ));
    }
    let diff = g.sub(output, target)?;
    let sq = g.square(diff);
    let expr = g.slice_cols(sq, 0, EXPRESSION_DIMS)?;
    let jaw = g.slice_cols(sq, EXPRESSION_DIMS, JAW_DIMS)?;
    let expr_mse = g.mean_all(expr)?;
    let jaw_mse = g.mean_all(jaw)?;
    let jaw_scaled = g.scale(jaw_mse, lambda_jaw);
    g.add(expr_mse, jaw_scaled)
}

/// Mean over frames of (1 - <body embedding, face embedding>); rows are
/// expected to be unit-norm (the content encoders guarantee this).
pub fn align_loss(g: &mut Graph, e_body: Var, e_face: Var) -> Result<Var> {
    let prod = g.mul(e_body, e_face)?;
    let dots = g.row_sums(prod)?;
    let mean_dot = g.mean_all(dots)?;
    let neg = g.scale(mean_dot, -1.0);
    Ok(g.add_const(neg, 1.0))
}

/// Mean over the D categorical variables of KL(softmax(logits_d) || Uniform),
/// natural log. Computed as sum_k q * ln(K * q), which is exactly zero at the
/// uniform distribution.
pub fn kl_loss(g: &mut Graph, logits: Var) -> Result<Var> {
    let shape = g.shape_of(logits).to_vec();
    if shape.len() != 2 {
        return Err(Error::shape(
            "kl_loss",
            format!("expected [D, K] logits, got {shape:?}"),
        ));
    }
    let k = shape[1];
    let q = g.softmax_rows(logits)?;
    let kq = g.scale(q, k as f64);
    let ln_kq = g.ln(kq);
    let terms = g.mul(q, ln_kq)?;
    let rows = g.row_sums(terms)?;
    g.mean_all(rows)
}

/// Mean over frames of the per-frame Euclidean distance between two [T, C]
/// embedding sequences.
fn mean_frame_l2(g: &mut Graph, a: Var, b: Var) -> Result<Var> {
    let diff = g.sub(a, b)?;
    let sq = g.square(diff);
    let sums = g.row_sums(sq)?;
    let norms = g.sqrt(sums);
    g.mean_all(norms)
}

/// Shared body of the two consistency losses: content term between
/// E_f(content_target) and E_f(o), plus style term between E_s(style_src) and
/// E_s(o) where both style encodings share one fresh Gumbel draw (so encoding
/// identical inputs is exactly zero).
fn consistency_terms(
    g: &mut Graph,
    model: &B2fModel,
    content_target: Var,
    style_src: Var,
    o: Var,
    tau: f64,
    rng: &mut RngState,
) -> Result<Var> {
    let ef_target = model.face_forward(g, content_target)?;
    let ef_o = model.face_forward(g, o)?;
    let content_term = mean_frame_l2(g, ef_target, ef_o)?;

    let noise = model.style_enc.sample_noise(rng);
    let (es_target, _) =
        model
            .style_enc
            .forward_with_noise(g, "e_s", style_src, tau, noise.clone(), false)?;
    let (es_o, _) = model
        .style_enc
        .forward_with_noise(g, "e_s", o, tau, noise, false)?;
    let style_term = mean_frame_l2(g, es_target, es_o)?;
    g.add(content_term, style_term)
}

/// Self-consistency: the output O_AA should re-encode to the same content as
/// F_A and the same style as S_A.
pub fn consistency_loss(
    g: &mut Graph,
    model: &B2fModel,
    f_a: Var,
    s_a: Var,
    o_aa: Var,
    tau: f64,
    rng: &mut RngState,
) -> Result<Var> {
    consistency_terms(g, model, f_a, s_a, o_aa, tau, rng)
}

/// Cross-batch consistency: O_AB (generated under the other batch's style
/// S_B) should re-encode to F_A's content and S_B's style.
pub fn cross_consistency_loss(
    g: &mut Graph,
    model: &B2fModel,
    f_a: Var,
    s_b: Var,
    o_ab: Var,
    tau: f64,
    rng: &mut RngState,
) -> Result<Var> {
    consistency_terms(g, model, f_a, s_b, o_ab, tau, rng)
}

/// Raw per-term batch means plus the weights that combined them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub recon: f64,
    pub align: f64,
    pub kl: f64,
    pub consistency: f64,
    pub cross: f64,
    pub kl_weight: f64,
    pub total: f64,
}

impl LossBreakdown {
    /// One structured log line per term: name, raw value, weighted value.
    pub fn log_lines(&self, weights: &LossWeights, epoch_fraction: f64) -> Vec<String> {
        let terms = [
            ("recon", self.recon, weights.lambda1),
            ("align", self.align, weights.lambda2),
            ("kl", self.kl, self.kl_weight),
            ("consistency", self.consistency, weights.lambda4),
            ("cross", self.cross, weights.lambda5),
        ];
        let mut lines: Vec<String> = terms
            .iter()
            .map(|(name, raw, w)| {
                format!(
                    "term={name} raw={raw:.6} weighted={:.6} epoch_fraction={epoch_fraction:.4}",
                    raw * w
                )
            })
            .collect();
        lines.push(format!(
            "term=total raw={:.6} weighted={:.6} epoch_fraction={epoch_fraction:.4}",
            self.total, self.total
        ));
        lines
    }
}

/// Weighted combination of the five raw terms.
pub fn weighted_total(
    recon: f64,
    align: f64,
    kl: f64,
    consistency: f64,
    cross: f64,
    weights: &LossWeights,
    kl_w: f64,
) -> f64 {
    weights.lambda1 * recon
        + weights.lambda2 * align
        + kl_w * kl
        + weights.lambda4 * consistency
        + weights.lambda5 * cross
}

/// The full objective over one batch, with styles for the cross term drawn
/// from `style_source` (the other batch of the dual-batch step). Per item the
/// graph runs: E_b, E_f on the target face, E_s on the item's own style
/// reference, the generator twice (own style, swapped style), then the
/// consistency re-encodings. Term values are averaged over items and combined
/// with the weights; the returned breakdown holds the raw batch means.
#[allow(clippy::too_many_arguments)]
pub fn total_loss(
    g: &mut Graph,
    model: &B2fModel,
    batch: &TrainingBatch,
    style_source: &TrainingBatch,
    weights: &LossWeights,
    schedule: &KlSchedule,
    epoch_fraction: f64,
    rng: &mut RngState,
) -> Result<(Var, LossBreakdown)> {
    weights.validate()?;
    schedule.validate()?;
    if batch.items.is_empty() {
        return Err(Error::invalid("total_loss: batch has no items"));
    }
    if batch.items.len() != style_source.items.len() {
        return Err(Error::invalid(format!(
            "total_loss: batch has {} items but style source has {}",
            batch.items.len(),
            style_source.items.len()
        )));
    }
    let tau = model.config.tau_train;
    let kl_w = kl_weight(schedule, epoch_fraction);

    let mut sums: Option<[Var; 5]> = None;
    for (item, style_item) in batch.items.iter().zip(&style_source.items) {
        let body = g.constant(item.body.to_tensor());
        let e_b = model.body_forward(g, body)?;
        let f_a = g.constant(item.face.to_tensor());
        let ef_target = model.face_forward(g, f_a)?;

        let s_a = g.constant(item.style_ref.to_tensor());
        let noise_a = model.style_enc.sample_noise(rng);
        let (es_a, logits_a) =
            model
                .style_enc
                .forward_with_noise(g, "e_s", s_a, tau, noise_a, false)?;
        let o_aa = model.generate_on(g, e_b, es_a)?;

        let s_b = g.constant(style_item.style_ref.to_tensor());
        let noise_b = model.style_enc.sample_noise(rng);
        let (es_b, _) = model
            .style_enc
            .forward_with_noise(g, "e_s", s_b, tau, noise_b, false)?;
        let o_ab = model.generate_on(g, e_b, es_b)?;

        let recon = recon_loss(g, f_a, o_aa, weights.lambda_jaw)?;
        let align = align_loss(g, e_b, ef_target)?;
        let kl = kl_loss(g, logits_a)?;

        // Self-consistency: re-encode O_AA against F_A's content and S_A's
        // style, sharing one fresh Gumbel draw across the two style passes.
        let ef_oaa = model.face_forward(g, o_aa)?;
        let content_consi = mean_frame_l2(g, ef_target, ef_oaa)?;
        let noise_c = model.style_enc.sample_noise(rng);
        let (es_sa, _) =
            model
                .style_enc
                .forward_with_noise(g, "e_s", s_a, tau, noise_c.clone(), false)?;
        let (es_oaa, _) = model
            .style_enc
            .forward_with_noise(g, "e_s", o_aa, tau, noise_c, false)?;
        let style_consi = mean_frame_l2(g, es_sa, es_oaa)?;
        let consi = g.add(content_consi, style_consi)?;

        // Cross-consistency: O_AB against F_A's content and S_B's style.
        let ef_oab = model.face_forward(g, o_ab)?;
        let content_cross = mean_frame_l2(g, ef_target, ef_oab)?;
        let noise_x = model.style_enc.sample_noise(rng);
        let (es_sb, _) =
            model
                .style_enc
                .forward_with_noise(g, "e_s", s_b, tau, noise_x.clone(), false)?;
        let (es_oab, _) = model
            .style_enc
            .forward_with_noise(g, "e_s", o_ab, tau, noise_x, false)?;
        let style_cross = mean_frame_l2(g, es_sb, es_oab)?;
        let cross = g.add(content_cross, style_cross)?;

        let item_terms = [recon, align, kl, consi, cross];
        sums = Some(match sums {
            None => item_terms,
            Some(acc) => {
                let mut next = acc;
                for (slot, term) in next.iter_mut().zip(item_terms) {
                    *slot = g.add(*slot, term)?;
                }
                next
            }
        });
    }
    let inv_n = 1.0 / batch.items.len() as f64;
    let sums = sums.expect("batch checked non-empty");
    let means: Vec<Var> = sums.iter().map(|&v| g.scale(v, inv_n)).collect();

    let term_weights = [
        weights.lambda1,
        weights.lambda2,
        kl_w,
        weights.lambda4,
        weights.lambda5,
    ];
    let mut total = None;
    for (&mean, &w) in means.iter().zip(&term_weights) {
        let weighted = g.scale(mean, w);
        total = Some(match total {
            None => weighted,
            Some(acc) => g.add(acc, weighted)?,
        });
    }
    let total = total.expect("five terms");

    let breakdown = LossBreakdown {
        recon: g.scalar_value(means[0])?,
        align: g.scalar_value(means[1])?,
        kl: g.scalar_value(means[2])?,
        consistency: g.scalar_value(means[3])?,
        cross: g.scalar_value(means[4])?,
        kl_weight: kl_w,
        total: g.scalar_value(total)?,
    };
    Ok((total, breakdown))
}
