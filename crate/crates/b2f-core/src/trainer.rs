//! Dual-batch training: a decoupled-weight-decay Adam optimizer, the
//! two-update train step, and the epoch loop with checkpointing and resume.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{kl_weight, total_loss, KlSchedule, LossBreakdown, LossWeights};
use crate::model::{
    load_checkpoint, save_checkpoint, B2fModel, Checkpoint, ModelConfig, NamedTensor,
    OptimizerStateData, TrainProgress,
};
use crate::motion::{sample_batch, segment_clips, BatchId, MotionClip, TrainingBatch};
use crate::nn::{Graph, RngState, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Epochs between checkpoints.
    pub checkpoint_interval: usize,
    /// Global gradient-norm clip; 0 disables clipping.
    pub grad_clip: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            learning_rate: 1e-4,
            weight_decay: 5e-5,
            epochs: 100,
            seed: 0,
            checkpoint_interval: 25,
            grad_clip: 5.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::invalid(format!(
                "batch_size must be at least 2 (the cross loss needs distinct segments), got {}",
                self.batch_size
            )));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::invalid(format!(
                "learning_rate must be positive and finite, got {}",
                self.learning_rate
            )));
        }
        if !(self.weight_decay >= 0.0) || !self.weight_decay.is_finite() {
            return Err(Error::invalid(format!(
                "weight_decay must be nonnegative and finite, got {}",
                self.weight_decay
            )));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if self.checkpoint_interval == 0 {
            return Err(Error::invalid("checkpoint_interval must be at least 1"));
        }
        if !(self.grad_clip >= 0.0) || !self.grad_clip.is_finite() {
            return Err(Error::invalid(format!(
                "grad_clip must be nonnegative and finite (0 disables), got {}",
                self.grad_clip
            )));
        }
        Ok(())
    }
}

/// One config file for a whole run: model widths plus training, loss, and
/// schedule settings. Any section may be omitted and defaults apply.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub weights: LossWeights,
    pub kl: KlSchedule,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.weights.validate()?;
        self.kl.validate()
    }

    pub fn from_toml_str(text: &str) -> Result<RunConfig> {
        let cfg: RunConfig = toml::from_str(text)
            .map_err(|e| Error::invalid(format!("config parse error: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self)
            .map_err(|e| Error::invalid(format!("config serialization failed: {e}")))
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text =
            fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        RunConfig::from_toml_str(&text)
    }
}

/// Adam with decoupled weight decay; beta and epsilon follow the common
/// defaults since only the learning rate and decay are prescribed.
#[derive(Debug, Clone, Copy)]
pub struct AdamW {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamW {
    pub fn from_config(cfg: &TrainConfig) -> AdamW {
        AdamW {
            learning_rate: cfg.learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: cfg.weight_decay,
        }
    }

    /// One moment-tracked update over every model parameter. `grads` must
    /// come from a graph that bound the full parameter set; parameters the
    /// loss did not touch carry zero gradients (they still decay).
    pub fn apply(
        &self,
        model: &mut B2fModel,
        state: &mut OptimizerState,
        grads: &[(String, Vec<f64>)],
    ) -> Result<()> {
        self.apply_visit(&mut |f| model.visit_params_mut(f), state, grads)
    }

    /// Same update over any parameter collection exposed through a visitor;
    /// lets other trainable networks share the optimizer.
    pub fn apply_visit(
        &self,
        visit: &mut dyn FnMut(&mut dyn FnMut(String, &mut Tensor)),
        state: &mut OptimizerState,
        grads: &[(String, Vec<f64>)],
    ) -> Result<()> {
        let by_name: HashMap<&str, &Vec<f64>> =
            grads.iter().map(|(n, g)| (n.as_str(), g)).collect();
        state.step += 1;
        let bc1 = 1.0 - self.beta1.powi(state.step as i32);
        let bc2 = 1.0 - self.beta2.powi(state.step as i32);
        let mut missing: Option<String> = None;
        let (m_map, v_map) = (&mut state.m, &mut state.v);
        visit(&mut |name, p| {
            let Some(g) = by_name.get(name.as_str()) else {
                missing.get_or_insert(name);
                return;
            };
            let m = m_map.entry(name.clone()).or_insert_with(|| vec![0.0; p.data.len()]);
            let v = v_map.entry(name).or_insert_with(|| vec![0.0; p.data.len()]);
            for i in 0..p.data.len() {
                let gi = g[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                let step = self.learning_rate * (m_hat / (v_hat.sqrt() + self.eps))
                    + self.learning_rate * self.weight_decay * p.data[i];
                p.data[i] -= step;
            }
        });
        match missing {
            Some(name) => Err(Error::invalid(format!(
                "optimizer saw no gradient entry for parameter `{name}`"
            ))),
            None => Ok(()),
        }
    }
}

/// First and second moment estimates plus the update counter. Moments are
/// keyed by parameter name so they survive checkpointing in a stable order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
}

impl OptimizerState {
    pub fn new() -> OptimizerState {
        OptimizerState::default()
    }

    pub fn to_data(&self) -> OptimizerStateData {
        let pack = |map: &BTreeMap<String, Vec<f64>>| {
            map.iter()
                .map(|(name, vals)| NamedTensor {
                    name: name.clone(),
                    shape: vec![vals.len()],
                    data: vals.clone(),
                })
                .collect()
        };
        OptimizerStateData {
            step: self.step,
            m: pack(&self.m),
            v: pack(&self.v),
        }
    }

    pub fn from_data(data: &OptimizerStateData) -> Result<OptimizerState> {
        let unpack = |tensors: &[NamedTensor], which: &str| -> Result<BTreeMap<String, Vec<f64>>> {
            let mut map = BTreeMap::new();
            for t in tensors {
                if map.insert(t.name.clone(), t.data.clone()).is_some() {
                    return Err(Error::invalid(format!(
                        "optimizer state has duplicate {which} entry `{}`",
                        t.name
                    )));
                }
            }
            Ok(map)
        };
        let m = unpack(&data.m, "first-moment")?;
        let v = unpack(&data.v, "second-moment")?;
        if m.len() != v.len() || m.keys().zip(v.keys()).any(|(a, b)| a != b) {
            return Err(Error::invalid(
                "optimizer first- and second-moment entries do not name the same parameters",
            ));
        }
        Ok(OptimizerState { step: data.step, m, v })
    }
}

/// Scale all gradients so their global Euclidean norm is at most `clip`.
/// `clip = 0` disables clipping. Returns the pre-clip norm.
pub fn clip_gradients(grads: &mut [(String, Vec<f64>)], clip: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|(_, g)| g.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if clip > 0.0 && norm > clip {
        let s = clip / norm;
        for (_, g) in grads.iter_mut() {
            for v in g.iter_mut() {
                *v *= s;
            }
        }
    }
    norm
}

/// What a train step did: both halves applied, or everything rolled back
/// because a loss or gradient went non-finite.
#[derive(Debug, Clone, PartialEq)]
pub enum StepOutcome {
    Applied {
        first: LossBreakdown,
        second: LossBreakdown,
    },
    Aborted {
        reason: String,
    },
}

enum UpdateFailure {
    NonFinite(String),
    Fatal(Error),
}

fn single_update(
    model: &mut B2fModel,
    opt: &AdamW,
    state: &mut OptimizerState,
    content_batch: &TrainingBatch,
    style_batch: &TrainingBatch,
    weights: &LossWeights,
    schedule: &KlSchedule,
    epoch_fraction: f64,
    grad_clip: f64,
    rng: &mut RngState,
) -> std::result::Result<LossBreakdown, UpdateFailure> {
    let mut g = Graph::training();
    let (loss, breakdown) = total_loss(
        &mut g,
        model,
        content_batch,
        style_batch,
        weights,
        schedule,
        epoch_fraction,
        rng,
    )
    .map_err(UpdateFailure::Fatal)?;
    if !breakdown.total.is_finite() {
        return Err(UpdateFailure::NonFinite(format!(
            "loss on batch {:?} is {}",
            content_batch.id, breakdown.total
        )));
    }
    g.backward(loss).map_err(UpdateFailure::Fatal)?;
    let mut grads = g.param_grads();
    if let Some((name, _)) = grads
        .iter()
        .find(|(_, g)| g.iter().any(|v| !v.is_finite()))
    {
        return Err(UpdateFailure::NonFinite(format!(
            "gradient of `{name}` is non-finite on batch {:?}",
            content_batch.id
        )));
    }
    clip_gradients(&mut grads, grad_clip);
    opt.apply(model, state, &grads).map_err(UpdateFailure::Fatal)?;
    Ok(breakdown)
}

/// One step of the dual-batch protocol: update on batch A with styles from B,
/// then update on batch B with styles from A. A non-finite loss or gradient
/// in either half aborts the whole step and restores parameters and optimizer
/// state to their pre-step values.
#[allow(clippy::too_many_arguments)]
pub fn train_step(
    model: &mut B2fModel,
    opt: &AdamW,
    state: &mut OptimizerState,
    batch_a: &TrainingBatch,
    batch_b: &TrainingBatch,
    weights: &LossWeights,
    schedule: &KlSchedule,
    epoch_fraction: f64,
    grad_clip: f64,
    rng: &mut RngState,
) -> Result<StepOutcome> {
    let saved_params = model.named_params();
    let saved_state = state.clone();
    let rollback = |model: &mut B2fModel, state: &mut OptimizerState| {
        let by_name: HashMap<&str, &crate::nn::Tensor> =
            saved_params.iter().map(|(n, t)| (n.as_str(), t)).collect();
        model.visit_params_mut(&mut |name, t| *t = (*by_name[name.as_str()]).clone());
        *state = saved_state.clone();
    };

    let halves = [(batch_a, batch_b), (batch_b, batch_a)];
    let mut breakdowns = Vec::with_capacity(2);
    for (content, styles) in halves {
        match single_update(
            model,
            opt,
            state,
            content,
            styles,
            weights,
            schedule,
            epoch_fraction,
            grad_clip,
            rng,
        ) {
            Ok(b) => breakdowns.push(b),
            Err(UpdateFailure::NonFinite(reason)) => {
                rollback(model, state);
                return Ok(StepOutcome::Aborted { reason });
            }
            Err(UpdateFailure::Fatal(e)) => return Err(e),
        }
    }
    let second = breakdowns.pop().expect("two halves");
    let first = breakdowns.pop().expect("two halves");
    Ok(StepOutcome::Applied { first, second })
}

/// Progress callbacks from the training loop.
#[derive(Debug, Clone)]
pub enum TrainEvent {
    Step {
        epoch: usize,
        step: usize,
        epoch_fraction: f64,
        first: LossBreakdown,
        second: LossBreakdown,
    },
    StepAborted {
        epoch: usize,
        step: usize,
        reason: String,
    },
    EpochDone {
        epoch: usize,
        kl_weight: f64,
    },
    CheckpointSaved {
        path: PathBuf,
    },
}

fn write_checkpoint(
    path: &Path,
    model: &B2fModel,
    state: &OptimizerState,
    rng: &RngState,
    progress: TrainProgress,
) -> Result<()> {
    let mut ckpt = Checkpoint::from_model(model);
    ckpt.optimizer = Some(state.to_data());
    ckpt.rng = Some(rng.snapshot());
    ckpt.progress = Some(progress);
    save_checkpoint(path, &ckpt)
}

/// Run the full training loop over a clip corpus. Sampling, Gumbel noise,
/// and initialization all come from one seeded stream, so a fixed config is
/// bitwise reproducible and `resume_from` continues a run exactly.
///
/// Steps per epoch is `ceil(segments / batch_size)` (at least 1); the KL
/// weight uses the fraction `epoch / total_epochs` at each epoch's start.
/// Returns the path of the final checkpoint.
pub fn train(
    config: &RunConfig,
    clips: &[MotionClip],
    out_dir: &Path,
    resume_from: Option<&Path>,
    log: &mut dyn FnMut(TrainEvent),
) -> Result<PathBuf> {
    config.validate()?;
    let segments = segment_clips(clips)?;
    if segments.is_empty() {
        return Err(Error::invalid(
            "corpus has no trainable segments (clips must have at least 180 frames)",
        ));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;

    let tc = &config.train;
    let (mut model, mut state, mut rng, start_epoch, mut global_step) = match resume_from {
        None => {
            let mut rng = RngState::new(tc.seed);
            let model = B2fModel::new(config.model.clone(), &mut rng)?;
            (model, OptimizerState::new(), rng, 0usize, 0u64)
        }
        Some(path) => {
            let ckpt = load_checkpoint(path)?;
            if ckpt.config != config.model {
                return Err(Error::invalid(
                    "checkpoint model config does not match the run config",
                ));
            }
            let model = ckpt.build_model()?;
            let state = OptimizerState::from_data(ckpt.optimizer.as_ref().ok_or_else(|| {
                Error::invalid("checkpoint has no optimizer state; cannot resume")
            })?)?;
            let rng = RngState::restore(ckpt.rng.ok_or_else(|| {
                Error::invalid("checkpoint has no rng state; cannot resume")
            })?);
            let progress = ckpt.progress.ok_or_else(|| {
                Error::invalid("checkpoint has no training progress; cannot resume")
            })?;
            if progress.total_epochs != tc.epochs {
                return Err(Error::invalid(format!(
                    "checkpoint was taken in a {}-epoch run, config says {}",
                    progress.total_epochs, tc.epochs
                )));
            }
            (model, state, rng, progress.epochs_completed, progress.global_step)
        }
    };

    let steps_per_epoch = segments.len().div_ceil(tc.batch_size).max(1);
    for epoch in start_epoch..tc.epochs {
        let epoch_fraction = epoch as f64 / tc.epochs as f64;
        for step in 0..steps_per_epoch {
            let batch_a = sample_batch(&segments, tc.batch_size, BatchId::A, &mut rng)?;
            let batch_b = sample_batch(&segments, tc.batch_size, BatchId::B, &mut rng)?;
            let outcome = train_step(
                &mut model,
                &AdamW::from_config(tc),
                &mut state,
                &batch_a,
                &batch_b,
                &config.weights,
                &config.kl,
                epoch_fraction,
                tc.grad_clip,
                &mut rng,
            )?;
            global_step += 1;
            match outcome {
                StepOutcome::Applied { first, second } => log(TrainEvent::Step {
                    epoch,
                    step,
                    epoch_fraction,
                    first,
                    second,
                }),
                StepOutcome::Aborted { reason } => {
                    log(TrainEvent::StepAborted { epoch, step, reason })
                }
            }
        }
        log(TrainEvent::EpochDone {
            epoch,
            kl_weight: kl_weight(&config.kl, epoch_fraction),
        });

        let done = epoch + 1;
        if done % tc.checkpoint_interval == 0 || done == tc.epochs {
            let path = out_dir.join(format!("ckpt-{done:04}.json"));
            write_checkpoint(
                &path,
                &model,
                &state,
                &rng,
                TrainProgress {
                    epochs_completed: done,
                    total_epochs: tc.epochs,
                    global_step,
                },
            )?;
            log(TrainEvent::CheckpointSaved { path });
        }
    }

    let final_path = out_dir.join("ckpt-final.json");
    write_checkpoint(
        &final_path,
        &model,
        &state,
        &rng,
        TrainProgress {
            epochs_completed: tc.epochs,
            total_epochs: tc.epochs,
            global_step,
        },
    )?;
    log(TrainEvent::CheckpointSaved { path: final_path.clone() });
    Ok(final_path)
}
