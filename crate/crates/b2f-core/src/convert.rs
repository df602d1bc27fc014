//! FLAME-to-ARKit conversion: a parameter-blended mixture of experts mapping
//! 103-dim FLAME vectors (100 expression + 3 jaw) to 51 named ARKit
//! blendshape weights, with its own training loop. The converter owns its
//! parameters outright and is trained independently; nothing here touches
//! the motion model.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::NamedTensor;
use crate::motion::{ClipFile, ClipKind};
use crate::nn::layers::{Linear, ParamModule};
use crate::nn::{Graph, RngState, Tensor, Var};
use crate::trainer::{clip_gradients, AdamW, OptimizerState};

pub const FLAME_DIMS: usize = 103;
pub const FLAME_EXPR_DIMS: usize = 100;
pub const ARKIT_DIMS: usize = 51;
pub const EXPERT_COUNT: usize = 8;

/// Fixed channel order for ARKit weight vectors: eyes, jaw, mouth, brows,
/// cheeks, nose. Everything that reads or writes 51-dim weights uses this
/// packing; the names double as the `names:` header of arkit clip files.
pub const ARKIT_NAMES: [&str; ARKIT_DIMS] = [
    "EyeBlinkLeft",
    "EyeLookDownLeft",
    "EyeLookInLeft",
    "EyeLookOutLeft",
    "EyeLookUpLeft",
    "EyeSquintLeft",
    "EyeWideLeft",
    "EyeBlinkRight",
    "EyeLookDownRight",
    "EyeLookInRight",
    "EyeLookOutRight",
    "EyeLookUpRight",
    "EyeSquintRight",
    "EyeWideRight",
    "JawForward",
    "JawLeft",
    "JawRight",
    "JawOpen",
    "MouthClose",
    "MouthFunnel",
    "MouthPucker",
    "MouthLeft",
    "MouthRight",
    "MouthSmileLeft",
    "MouthSmileRight",
    "MouthFrownLeft",
    "MouthFrownRight",
    "MouthDimpleLeft",
    "MouthDimpleRight",
    "MouthStretchLeft",
    "MouthStretchRight",
    "MouthRollLower",
    "MouthRollUpper",
    "MouthShrugLower",
    "MouthShrugUpper",
    "MouthPressLeft",
    "MouthPressRight",
    "MouthLowerDownLeft",
    "MouthLowerDownRight",
    "MouthUpperUpLeft",
    "MouthUpperUpRight",
    "BrowDownLeft",
    "BrowDownRight",
    "BrowInnerUp",
    "BrowOuterUpLeft",
    "BrowOuterUpRight",
    "CheekPuff",
    "CheekSquintLeft",
    "CheekSquintRight",
    "NoseSneerLeft",
    "NoseSneerRight",
];

pub const MOUTH_CLOSE_INDEX: usize = 18;

/// Extra squared-error weight on the MouthClose channel during converter
/// training; lip closure is perceptually dominant and otherwise undertrained.
pub const MOUTH_CLOSE_WEIGHT: f64 = 500.0;

/// Resolve an ARKit channel name to its index in the fixed packing order.
pub fn arkit_index(name: &str) -> Option<usize> {
    ARKIT_NAMES.iter().position(|&n| n == name)
}

/// One 103-dim FLAME vector: dims 0..99 expression, 100..102 jaw pose.
#[derive(Debug, Clone, PartialEq)]
pub struct FlameParams103(Vec<f64>);

impl FlameParams103 {
    pub fn new(values: Vec<f64>) -> Result<FlameParams103> {
        if values.len() != FLAME_DIMS {
            return Err(Error::invalid(format!(
                "FLAME vector needs {FLAME_DIMS} dims, got {}",
                values.len()
            )));
        }
        Ok(FlameParams103(values))
    }

    pub fn zeros() -> FlameParams103 {
        FlameParams103(vec![0.0; FLAME_DIMS])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn expression(&self) -> &[f64] {
        &self.0[..FLAME_EXPR_DIMS]
    }

    pub fn jaw(&self) -> &[f64] {
        &self.0[FLAME_EXPR_DIMS..]
    }
}

/// One 51-dim ARKit weight vector in the [`ARKIT_NAMES`] packing order.
/// Weights are nominally in [0, 1] but regression output is not clamped.
#[derive(Debug, Clone, PartialEq)]
pub struct ArkitWeights51(Vec<f64>);

impl ArkitWeights51 {
    pub fn new(values: Vec<f64>) -> Result<ArkitWeights51> {
        if values.len() != ARKIT_DIMS {
            return Err(Error::invalid(format!(
                "ARKit vector needs {ARKIT_DIMS} dims, got {}",
                values.len()
            )));
        }
        Ok(ArkitWeights51(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        arkit_index(name).map(|i| self.0[i])
    }
}

/// Place a 53-dim generated face vector into FLAME space: dims 0..49 of the
/// output become expression dims 0..49, dims 50..52 become the jaw pose.
/// Expression dims 50..99 stay at the base's values (all zero by default,
/// since the generator only drives the first fifty).
pub fn assemble_flame103(b2f_out: &[f64], base: Option<&FlameParams103>) -> Result<FlameParams103> {
    if b2f_out.len() != 53 {
        return Err(Error::invalid(format!(
            "expected a 53-dim face vector, got {}",
            b2f_out.len()
        )));
    }
    let mut values = match base {
        Some(b) => b.0.clone(),
        None => vec![0.0; FLAME_DIMS],
    };
    values[..50].copy_from_slice(&b2f_out[..50]);
    values[FLAME_EXPR_DIMS..].copy_from_slice(&b2f_out[50..]);
    Ok(FlameParams103(values))
}

/// Inverse of the assembly: the 50 driven expression dims plus the jaw.
pub fn extract_face53(f: &FlameParams103) -> [f64; 53] {
    let mut out = [0.0; 53];
    out[..50].copy_from_slice(&f.0[..50]);
    out[50..].copy_from_slice(&f.0[FLAME_EXPR_DIMS..]);
    out
}

/// One expert: a 3-layer MLP, 103 -> 128 -> 128 -> 51, ReLU hidden.
#[derive(Debug, Clone)]
pub struct ExpertMlp {
    pub l1: Linear,
    pub l2: Linear,
    pub l3: Linear,
}

const EXPERT_HIDDEN: usize = 128;

impl ExpertMlp {
    fn new(rng: &mut RngState) -> ExpertMlp {
        ExpertMlp {
            l1: Linear::new(rng, FLAME_DIMS, EXPERT_HIDDEN),
            l2: Linear::new(rng, EXPERT_HIDDEN, EXPERT_HIDDEN),
            l3: Linear::new(rng, EXPERT_HIDDEN, ARKIT_DIMS),
        }
    }

    fn zeros() -> ExpertMlp {
        ExpertMlp {
            l1: Linear { w: Tensor::zeros(&[FLAME_DIMS, EXPERT_HIDDEN]), b: Tensor::zeros(&[EXPERT_HIDDEN]) },
            l2: Linear { w: Tensor::zeros(&[EXPERT_HIDDEN, EXPERT_HIDDEN]), b: Tensor::zeros(&[EXPERT_HIDDEN]) },
            l3: Linear { w: Tensor::zeros(&[EXPERT_HIDDEN, ARKIT_DIMS]), b: Tensor::zeros(&[ARKIT_DIMS]) },
        }
    }

    /// Run the MLP on one FLAME vector outside any graph.
    pub fn apply(&self, f: &FlameParams103) -> Vec<f64> {
        let h1 = relu_vec(matvec(&self.l1.w, &self.l1.b, f.as_slice()));
        let h2 = relu_vec(matvec(&self.l2.w, &self.l2.b, &h1));
        matvec(&self.l3.w, &self.l3.b, &h2)
    }
}

impl ParamModule for ExpertMlp {
    fn visit<'a>(&'a self, scope: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        self.l1.visit(&format!("{scope}.l1"), f);
        self.l2.visit(&format!("{scope}.l2"), f);
        self.l3.visit(&format!("{scope}.l3"), f);
    }
    fn visit_mut(&mut self, scope: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.l1.visit_mut(&format!("{scope}.l1"), f);
        self.l2.visit_mut(&format!("{scope}.l2"), f);
        self.l3.visit_mut(&format!("{scope}.l3"), f);
    }
}

/// The full converter: a shared input encoder (103 -> 64 -> 32), a gating
/// net (32 -> 128 -> 128 -> 8 logits, softmaxed), and eight experts whose
/// parameters are blended by the gate before the blended MLP runs.
#[derive(Debug, Clone)]
pub struct MoEConverterParams {
    pub enc1: Linear,
    pub enc2: Linear,
    pub gate1: Linear,
    pub gate2: Linear,
    pub gate3: Linear,
    pub experts: Vec<ExpertMlp>,
}

impl MoEConverterParams {
    pub fn new(rng: &mut RngState) -> MoEConverterParams {
        MoEConverterParams {
            enc1: Linear::new(rng, FLAME_DIMS, 64),
            enc2: Linear::new(rng, 64, 32),
            gate1: Linear::new(rng, 32, 128),
            gate2: Linear::new(rng, 128, 128),
            gate3: Linear::new(rng, 128, EXPERT_COUNT),
            experts: (0..EXPERT_COUNT).map(|_| ExpertMlp::new(rng)).collect(),
        }
    }

    fn zeros() -> MoEConverterParams {
        MoEConverterParams {
            enc1: Linear { w: Tensor::zeros(&[FLAME_DIMS, 64]), b: Tensor::zeros(&[64]) },
            enc2: Linear { w: Tensor::zeros(&[64, 32]), b: Tensor::zeros(&[32]) },
            gate1: Linear { w: Tensor::zeros(&[32, 128]), b: Tensor::zeros(&[128]) },
            gate2: Linear { w: Tensor::zeros(&[128, 128]), b: Tensor::zeros(&[128]) },
            gate3: Linear { w: Tensor::zeros(&[128, EXPERT_COUNT]), b: Tensor::zeros(&[EXPERT_COUNT]) },
            experts: (0..EXPERT_COUNT).map(|_| ExpertMlp::zeros()).collect(),
        }
    }

    pub fn visit_params<'a>(&'a self, f: &mut dyn FnMut(String, &'a Tensor)) {
        self.enc1.visit("enc1", f);
        self.enc2.visit("enc2", f);
        self.gate1.visit("gate1", f);
        self.gate2.visit("gate2", f);
        self.gate3.visit("gate3", f);
        for (i, e) in self.experts.iter().enumerate() {
            e.visit(&format!("expert{i}"), f);
        }
    }

    pub fn visit_params_mut(&mut self, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.enc1.visit_mut("enc1", f);
        self.enc2.visit_mut("enc2", f);
        self.gate1.visit_mut("gate1", f);
        self.gate2.visit_mut("gate2", f);
        self.gate3.visit_mut("gate3", f);
        for (i, e) in self.experts.iter_mut().enumerate() {
            e.visit_mut(&format!("expert{i}"), f);
        }
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
}

fn matvec(w: &Tensor, b: &Tensor, x: &[f64]) -> Vec<f64> {
    let (rows, cols) = (w.shape[0], w.shape[1]);
    debug_assert_eq!(rows, x.len());
    let mut out = b.data.clone();
    for (i, &xi) in x.iter().enumerate() {
        let row = &w.data[i * cols..(i + 1) * cols];
        for (o, &wij) in out.iter_mut().zip(row) {
            *o += xi * wij;
        }
    }
    out
}

fn relu_vec(mut v: Vec<f64>) -> Vec<f64> {
    for x in v.iter_mut() {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
    v
}

fn softmax_vec(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Gate weights for one input: softmax over the gating net's 8 logits.
/// Always a simplex vector (nonnegative, sums to one).
pub fn gate_weights(params: &MoEConverterParams, f: &FlameParams103) -> Vec<f64> {
    let h = relu_vec(matvec(&params.enc1.w, &params.enc1.b, f.as_slice()));
    let z = relu_vec(matvec(&params.enc2.w, &params.enc2.b, &h));
    let g1 = relu_vec(matvec(&params.gate1.w, &params.gate1.b, &z));
    let g2 = relu_vec(matvec(&params.gate2.w, &params.gate2.b, &g1));
    let logits = matvec(&params.gate3.w, &params.gate3.b, &g2);
    softmax_vec(&logits)
}

fn blend_tensors(gate: &[f64], parts: &[&Tensor]) -> Tensor {
    let shape = parts[0].shape.clone();
    let n = parts[0].data.len();
    let mut data = vec![0.0; n];
    // Zero-weight experts are skipped and the first live expert seeds the
    // accumulator, so a one-hot gate returns that expert's values verbatim.
    let mut seeded = false;
    for (t, &w) in parts.iter().zip(gate) {
        if w == 0.0 {
            continue;
        }
        if !seeded {
            for (d, &p) in data.iter_mut().zip(&t.data) {
                *d = w * p;
            }
            seeded = true;
        } else {
            for (d, &p) in data.iter_mut().zip(&t.data) {
                *d += w * p;
            }
        }
    }
    Tensor { shape, data }
}

fn check_simplex(gate: &[f64]) -> Result<()> {
    if gate.len() != EXPERT_COUNT {
        return Err(Error::invalid(format!(
            "gate vector needs {EXPERT_COUNT} weights, got {}",
            gate.len()
        )));
    }
    let mut sum = 0.0;
    for &w in gate {
        if !w.is_finite() || w < 0.0 {
            return Err(Error::invalid(format!("gate weight {w} is not in [0, 1]")));
        }
        sum += w;
    }
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("gate weights sum to {sum}, not 1")));
    }
    Ok(())
}

/// Blend the eight experts' parameters elementwise under simplex weights.
pub fn blend_experts(gate: &[f64], experts: &[ExpertMlp]) -> Result<ExpertMlp> {
    check_simplex(gate)?;
    if experts.len() != EXPERT_COUNT {
        return Err(Error::invalid(format!(
            "expected {EXPERT_COUNT} experts, got {}",
            experts.len()
        )));
    }
    let pick = |get: &dyn Fn(&ExpertMlp) -> &Tensor| {
        let parts: Vec<&Tensor> = experts.iter().map(get).collect();
        blend_tensors(gate, &parts)
    };
    Ok(ExpertMlp {
        l1: Linear { w: pick(&|e| &e.l1.w), b: pick(&|e| &e.l1.b) },
        l2: Linear { w: pick(&|e| &e.l2.w), b: pick(&|e| &e.l2.b) },
        l3: Linear { w: pick(&|e| &e.l3.w), b: pick(&|e| &e.l3.b) },
    })
}

/// Convert one FLAME vector to ARKit weights. Deterministic: gate, blend,
/// run the blended expert.
pub fn convert(params: &MoEConverterParams, f: &FlameParams103) -> Result<ArkitWeights51> {
    let gate = gate_weights(params, f);
    let blended = blend_experts(&gate, &params.experts)?;
    ArkitWeights51::new(blended.apply(f))
}

/// Convert a whole sequence, frame by frame.
pub fn convert_sequence(
    params: &MoEConverterParams,
    frames: &[FlameParams103],
) -> Result<Vec<ArkitWeights51>> {
    frames.iter().map(|f| convert(params, f)).collect()
}

/// Mean squared error over all 51 dims and all pairs, unweighted; the
/// held-out metric for converter training.
pub fn converter_mse(
    params: &MoEConverterParams,
    pairs: &[(FlameParams103, ArkitWeights51)],
) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::invalid("cannot evaluate on an empty pair set"));
    }
    let mut total = 0.0;
    for (f, y) in pairs {
        let pred = convert(params, f)?;
        total += pred
            .as_slice()
            .iter()
            .zip(y.as_slice())
            .map(|(p, t)| (p - t) * (p - t))
            .sum::<f64>()
            / ARKIT_DIMS as f64;
    }
    Ok(total / pairs.len() as f64)
}

// ---------------------------------------------------------------------------
// Training.

/// Squared error averaged over the 51 channels and the batch, with the
/// MouthClose channel's squared error scaled by 500 inside the mean.
/// `pred` and `target` are [n, 51].
pub fn weighted_arkit_mse(g: &mut Graph, pred: Var, target: Var) -> Result<Var> {
    let shape = g.shape_of(pred).to_vec();
    if shape.len() != 2 || shape[1] != ARKIT_DIMS || g.shape_of(target) != shape {
        return Err(Error::shape(
            "weighted_arkit_mse",
            format!(
                "expected matching [n, {ARKIT_DIMS}] tensors, got {:?} and {:?}",
                shape,
                g.shape_of(target)
            ),
        ));
    }
    let n = shape[0];
    let mut mask = vec![1.0; ARKIT_DIMS];
    mask[MOUTH_CLOSE_INDEX] = MOUTH_CLOSE_WEIGHT;
    let mask = g.constant(Tensor { shape: vec![1, ARKIT_DIMS], data: mask });
    let mask = g.repeat_row(mask, n)?;
    let diff = g.sub(pred, target)?;
    let sq = g.square(diff);
    let weighted = g.mul(sq, mask)?;
    let total = g.sum_all(weighted);
    Ok(g.scale(total, 1.0 / (n * ARKIT_DIMS) as f64))
}

/// Build the converter's forward pass over a batch inside `g` and return the
/// [n, 51] predictions. Parameters are bound by name, so gradients reach the
/// encoder, the gate, and every expert.
pub fn converter_forward_graph(
    params: &MoEConverterParams,
    g: &mut Graph,
    inputs: &[FlameParams103],
) -> Result<Var> {
    if inputs.is_empty() {
        return Err(Error::invalid("converter forward needs at least one input"));
    }
    let n = inputs.len();
    let x_data: Vec<f64> = inputs.iter().flat_map(|f| f.as_slice().iter().copied()).collect();
    let x = g.constant(Tensor { shape: vec![n, FLAME_DIMS], data: x_data });

    // Shared encoder and gating run on the whole batch.
    let h = params.enc1.forward(g, "enc1", x)?;
    let h = g.relu(h);
    let z = params.enc2.forward(g, "enc2", h)?;
    let z = g.relu(z);
    let g1 = params.gate1.forward(g, "gate1", z)?;
    let g1 = g.relu(g1);
    let g2 = params.gate2.forward(g, "gate2", g1)?;
    let g2 = g.relu(g2);
    let logits = params.gate3.forward(g, "gate3", g2)?;
    let gates = g.softmax_rows(logits)?;

    // Stack each expert layer as an [8, numel] matrix once; blending an
    // item's parameters is then a single [1,8] x [8,numel] product.
    let stack = |g: &mut Graph, vars: Vec<Var>| -> Result<Var> {
        let mut flat = Vec::with_capacity(vars.len());
        for v in vars {
            let len = g.value(v).data.len();
            flat.push(g.reshape(v, &[1, len])?);
        }
        let mut row = flat[0];
        for &v in &flat[1..] {
            row = g.concat_cols(row, v)?;
        }
        let cols = g.value(row).data.len() / EXPERT_COUNT;
        g.reshape(row, &[EXPERT_COUNT, cols])
    };
    let mut bound: Vec<(Var, Var, Var, Var, Var, Var)> = Vec::new();
    for (i, e) in params.experts.iter().enumerate() {
        let (w1, b1) = e.l1.bind(g, &format!("expert{i}.l1"))?;
        let (w2, b2) = e.l2.bind(g, &format!("expert{i}.l2"))?;
        let (w3, b3) = e.l3.bind(g, &format!("expert{i}.l3"))?;
        bound.push((w1, b1, w2, b2, w3, b3));
    }
    let s_w1 = stack(g, bound.iter().map(|b| b.0).collect())?;
    let s_b1 = stack(g, bound.iter().map(|b| b.1).collect())?;
    let s_w2 = stack(g, bound.iter().map(|b| b.2).collect())?;
    let s_b2 = stack(g, bound.iter().map(|b| b.3).collect())?;
    let s_w3 = stack(g, bound.iter().map(|b| b.4).collect())?;
    let s_b3 = stack(g, bound.iter().map(|b| b.5).collect())?;

    let mut rows: Option<Var> = None;
    for i in 0..n {
        let mut sel = vec![0.0; n];
        sel[i] = 1.0;
        let sel = g.constant(Tensor { shape: vec![1, n], data: sel });
        let w = g.matmul(sel, gates)?; // [1, 8]
        let xi = g.matmul(sel, x)?; // [1, 103]

        let w1 = g.matmul(w, s_w1)?;
        let w1 = g.reshape(w1, &[FLAME_DIMS, EXPERT_HIDDEN])?;
        let b1 = g.matmul(w, s_b1)?;
        let w2 = g.matmul(w, s_w2)?;
        let w2 = g.reshape(w2, &[EXPERT_HIDDEN, EXPERT_HIDDEN])?;
        let b2 = g.matmul(w, s_b2)?;
        let w3 = g.matmul(w, s_w3)?;
        let w3 = g.reshape(w3, &[EXPERT_HIDDEN, ARKIT_DIMS])?;
        let b3 = g.matmul(w, s_b3)?;

        let h = g.matmul(xi, w1)?;
        let h = g.add(h, b1)?;
        let h = g.relu(h);
        let h = g.matmul(h, w2)?;
        let h = g.add(h, b2)?;
        let h = g.relu(h);
        let y = g.matmul(h, w3)?;
        let y = g.add(y, b3)?; // [1, 51]

        rows = Some(match rows {
            None => y,
            Some(prev) => {
                let both = g.concat_cols(prev, y)?;
                both
            }
        });
    }
    let rows = rows.expect("n >= 1");
    g.reshape(rows, &[n, ARKIT_DIMS])
}

/// Loss over a batch of (FLAME, ARKit) pairs: forward plus the weighted MSE.
pub fn converter_loss_graph(
    params: &MoEConverterParams,
    g: &mut Graph,
    batch: &[(FlameParams103, ArkitWeights51)],
) -> Result<Var> {
    let inputs: Vec<FlameParams103> = batch.iter().map(|(f, _)| f.clone()).collect();
    let pred = converter_forward_graph(params, g, &inputs)?;
    let y_data: Vec<f64> = batch.iter().flat_map(|(_, y)| y.as_slice().iter().copied()).collect();
    let target = g.constant(Tensor { shape: vec![batch.len(), ARKIT_DIMS], data: y_data });
    weighted_arkit_mse(g, pred, target)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConverterTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub grad_clip: f64,
    pub seed: u64,
    /// Stop once an epoch's mean training loss drops below this; 0 disables.
    pub stop_at_loss: f64,
}

impl Default for ConverterTrainConfig {
    fn default() -> Self {
        ConverterTrainConfig {
            epochs: 200,
            batch_size: 32,
            learning_rate: 1e-3,
            weight_decay: 1e-5,
            grad_clip: 5.0,
            seed: 0,
            stop_at_loss: 0.0,
        }
    }
}

impl ConverterTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("converter training needs at least one epoch"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("converter batch size must be positive"));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::invalid(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.weight_decay < 0.0 || !self.weight_decay.is_finite() {
            return Err(Error::invalid(format!(
                "weight decay must be nonnegative, got {}",
                self.weight_decay
            )));
        }
        if self.grad_clip < 0.0 || !self.grad_clip.is_finite() {
            return Err(Error::invalid(format!(
                "gradient clip must be nonnegative, got {}",
                self.grad_clip
            )));
        }
        Ok(())
    }
}

/// Train a fresh converter on (FLAME, ARKit) pairs. `log` receives
/// (epoch, mean training loss) after every epoch. The run is fully
/// determined by the seed; a non-finite loss aborts with an error.
pub fn train_converter(
    pairs: &[(FlameParams103, ArkitWeights51)],
    cfg: &ConverterTrainConfig,
    log: &mut dyn FnMut(usize, f64),
) -> Result<MoEConverterParams> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(Error::invalid("converter training needs a nonempty dataset"));
    }
    let mut rng = RngState::new(cfg.seed);
    let mut params = MoEConverterParams::new(&mut rng);
    let adam = AdamW {
        learning_rate: cfg.learning_rate,
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
        weight_decay: cfg.weight_decay,
    };
    let mut state = OptimizerState::new();
    let steps_per_epoch = pairs.len().div_ceil(cfg.batch_size).max(1);
    for epoch in 0..cfg.epochs {
        let mut epoch_loss = 0.0;
        for _ in 0..steps_per_epoch {
            let batch: Vec<(FlameParams103, ArkitWeights51)> = (0..cfg.batch_size.min(pairs.len()))
                .map(|_| pairs[rng.int_in(0, pairs.len() - 1)].clone())
                .collect();
            let mut g = Graph::training();
            let loss = converter_loss_graph(&params, &mut g, &batch)?;
            let loss_val = g.scalar_value(loss)?;
            if !loss_val.is_finite() {
                return Err(Error::invalid(format!(
                    "converter training diverged: loss {loss_val} at epoch {epoch}"
                )));
            }
            g.backward(loss)?;
            let mut grads = g.param_grads();
            if grads.iter().any(|(_, g)| g.iter().any(|v| !v.is_finite())) {
                return Err(Error::invalid(format!(
                    "converter training diverged: non-finite gradient at epoch {epoch}"
                )));
            }
            clip_gradients(&mut grads, cfg.grad_clip);
            adam.apply_visit(&mut |f| params.visit_params_mut(f), &mut state, &grads)?;
            epoch_loss += loss_val;
        }
        let mean = epoch_loss / steps_per_epoch as f64;
        log(epoch + 1, mean);
        if cfg.stop_at_loss > 0.0 && mean < cfg.stop_at_loss {
            break;
        }
    }
    Ok(params)
}

// ---------------------------------------------------------------------------
// Converter checkpoint file (JSON, same NamedTensor layout as the model's).

pub const CONVERTER_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConverterCheckpoint {
    pub format_version: u32,
    pub params: Vec<NamedTensor>,
}

impl ConverterCheckpoint {
    pub fn from_params(params: &MoEConverterParams) -> ConverterCheckpoint {
        let mut named = Vec::new();
        params.visit_params(&mut |name, t| named.push(NamedTensor::from_tensor(name, t)));
        ConverterCheckpoint { format_version: CONVERTER_FORMAT_VERSION, params: named }
    }

    pub fn build_params(&self) -> Result<MoEConverterParams> {
        if self.format_version != CONVERTER_FORMAT_VERSION {
            return Err(Error::invalid(format!(
                "unsupported converter checkpoint version {}",
                self.format_version
            )));
        }
        let mut by_name = std::collections::HashMap::new();
        for nt in &self.params {
            if by_name.insert(nt.name.as_str(), nt).is_some() {
                return Err(Error::invalid(format!(
                    "converter checkpoint lists `{}` twice",
                    nt.name
                )));
            }
        }
        let mut params = MoEConverterParams::zeros();
        let mut err: Option<Error> = None;
        let mut seen = 0usize;
        params.visit_params_mut(&mut |name, t| {
            if err.is_some() {
                return;
            }
            match by_name.get(name.as_str()) {
                None => err = Some(Error::invalid(format!("checkpoint is missing `{name}`"))),
                Some(nt) => {
                    if nt.shape != t.shape {
                        err = Some(Error::invalid(format!(
                            "checkpoint shape {:?} for `{name}` does not match {:?}",
                            nt.shape, t.shape
                        )));
                        return;
                    }
                    t.data = nt.data.clone();
                    seen += 1;
                }
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
        if seen != self.params.len() {
            return Err(Error::invalid(format!(
                "checkpoint has {} parameters, converter expects {seen}",
                self.params.len()
            )));
        }
        Ok(params)
    }
}

pub fn save_converter(params: &MoEConverterParams, path: &Path) -> Result<()> {
    let ckpt = ConverterCheckpoint::from_params(params);
    let json = serde_json::to_string_pretty(&ckpt)
        .map_err(|e| Error::invalid(format!("converter checkpoint encode failed: {e}")))?;
    std::fs::write(path, json).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn load_converter(path: &Path) -> Result<MoEConverterParams> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    let ckpt: ConverterCheckpoint = serde_json::from_str(&text)
        .map_err(|e| Error::parse("converter checkpoint", 0, e.to_string()))?;
    ckpt.build_params()
}

// ---------------------------------------------------------------------------
// Synthetic pairs: a fixed random sparse linear map from FLAME space pushed
// through a saturation, enough signal to exercise and validate the trainer
// without capture data.

pub fn synthetic_converter_pairs(
    seed: u64,
    n: usize,
) -> Result<Vec<(FlameParams103, ArkitWeights51)>> {
    if n == 0 {
        return Err(Error::invalid("pair count must be positive"));
    }
    let mut rng = RngState::new(seed);
    // Each output channel reads four FLAME dims.
    let map: Vec<([usize; 4], [f64; 4], f64)> = (0..ARKIT_DIMS)
        .map(|_| {
            let idx = [
                rng.int_in(0, FLAME_DIMS - 1),
                rng.int_in(0, FLAME_DIMS - 1),
                rng.int_in(0, FLAME_DIMS - 1),
                rng.int_in(0, FLAME_DIMS - 1),
            ];
            let w = [
                rng.uniform_in(-0.5, 0.5),
                rng.uniform_in(-0.5, 0.5),
                rng.uniform_in(-0.5, 0.5),
                rng.uniform_in(-0.5, 0.5),
            ];
            (idx, w, rng.uniform_in(-0.2, 0.2))
        })
        .collect();
    let mut pairs = Vec::with_capacity(n);
    for _ in 0..n {
        let x: Vec<f64> = (0..FLAME_DIMS).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
        let y: Vec<f64> = map
            .iter()
            .map(|(idx, w, b)| {
                let z = b + idx.iter().zip(w).map(|(&i, &wi)| wi * x[i]).sum::<f64>();
                // Saturation keeps weights in (0, 1).
                0.5 + 0.5 * z / (1.0 + z.abs())
            })
            .collect();
        pairs.push((FlameParams103(x), ArkitWeights51(y)));
    }
    Ok(pairs)
}

// ---------------------------------------------------------------------------
// Clip-file integration.

/// FLAME rows to a clip file (kind flame, dims 103).
pub fn flame_clip_from_rows(rows: &[FlameParams103], fps: f64) -> ClipFile {
    ClipFile {
        kind: ClipKind::Flame,
        fps,
        dims: FLAME_DIMS,
        names: None,
        rows: rows.iter().map(|f| f.0.clone()).collect(),
    }
}

/// FLAME rows from a clip file. Accepts dims 103 directly; a 53-dim flame
/// clip (raw generator output) is assembled onto a zero base.
pub fn flame_rows_from_clip(clip: &ClipFile) -> Result<Vec<FlameParams103>> {
    if clip.kind != ClipKind::Flame {
        return Err(Error::invalid(format!(
            "expected a flame clip, got kind {}",
            clip.kind.as_str()
        )));
    }
    match clip.dims {
        FLAME_DIMS => clip.rows.iter().cloned().map(FlameParams103::new).collect(),
        53 => clip.rows.iter().map(|r| assemble_flame103(r, None)).collect(),
        d => Err(Error::invalid(format!(
            "flame clips carry 103 or 53 dims, got {d}"
        ))),
    }
}

/// ARKit rows to a clip file with the canonical channel names in the header.
pub fn arkit_clip_from_rows(rows: &[ArkitWeights51], fps: f64) -> ClipFile {
    ClipFile {
        kind: ClipKind::Arkit,
        fps,
        dims: ARKIT_DIMS,
        names: Some(ARKIT_NAMES.iter().map(|s| s.to_string()).collect()),
        rows: rows.iter().map(|a| a.0.clone()).collect(),
    }
}

/// ARKit rows from a clip file; a `names:` header, if present, must match
/// the canonical order exactly.
pub fn arkit_rows_from_clip(clip: &ClipFile) -> Result<Vec<ArkitWeights51>> {
    if clip.kind != ClipKind::Arkit {
        return Err(Error::invalid(format!(
            "expected an arkit clip, got kind {}",
            clip.kind.as_str()
        )));
    }
    if clip.dims != ARKIT_DIMS {
        return Err(Error::invalid(format!(
            "arkit clips carry {ARKIT_DIMS} dims, got {}",
            clip.dims
        )));
    }
    if let Some(names) = &clip.names {
        for (i, (have, want)) in names.iter().zip(ARKIT_NAMES).enumerate() {
            if have != want {
                return Err(Error::invalid(format!(
                    "arkit channel {i} is named `{have}`, expected `{want}`"
                )));
            }
        }
    }
    clip.rows.iter().cloned().map(ArkitWeights51::new).collect()
}
