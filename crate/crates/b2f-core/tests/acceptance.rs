//! Release gate: ten go/no-go criteria, one test per criterion, each ending
//! in a `criterion NN (<name>): PASS` line (run with `--nocapture` to see
//! them; the harness result line carries the same verdict). Quantitative
//! checks run at reduced or micro widths, stated inline together with every
//! tolerance and budget. Nothing here may be loosened to make a run green:
//! a red criterion is a finding.

use std::path::PathBuf;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use b2f_core::convert::{
    blend_experts, converter_mse, gate_weights, load_converter, save_converter,
    synthetic_converter_pairs, train_converter, weighted_arkit_mse, ConverterTrainConfig,
    FlameParams103, MoEConverterParams, EXPERT_COUNT, FLAME_DIMS,
};
use b2f_core::error::Result;
use b2f_core::eval::{alignment_score, l2_error, labeled_gt_frames, std_dev_difference, train_style_probe};
use b2f_core::inference::{
    embed_style, generate_with_embedding, realtime_step, read_style, save_style, StyleFile,
};
use b2f_core::losses::{
    align_loss, kl_loss, kl_weight, recon_loss, total_loss, KlSchedule, LossWeights,
};
use b2f_core::model::{load_checkpoint, save_checkpoint, B2fModel, ModelConfig, StyleMode};
use b2f_core::motion::{
    generate_synthetic_corpus, read_clip, save_clip, BodyMotionSequence, FacialMotionSequence,
    MotionClip, SyntheticFactorRecord, EXPRESSION_DIMS, FACE_DIMS,
};
use b2f_core::nn::{grad_check, Graph, ParamSet, RngState, Tensor, Var};
use b2f_core::trainer::{train, RunConfig, TrainConfig};

fn pass(n: usize, name: &str, detail: &str) {
    println!("criterion {n:02} ({name}): PASS {detail}");
}

fn rand_tensor(rng: &mut RngState, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let numel = shape.iter().product();
    Tensor {
        shape: shape.to_vec(),
        data: (0..numel).map(|_| rng.uniform_in(lo, hi)).collect(),
    }
}

/// Values bounded away from zero, for kinked ops (relu) where central
/// differences straddle the non-smooth point.
fn rand_tensor_off_zero(rng: &mut RngState, shape: &[usize]) -> Tensor {
    let numel = shape.iter().product();
    Tensor {
        shape: shape.to_vec(),
        data: (0..numel)
            .map(|_| {
                let sign = if rng.uniform_in(0.0, 1.0) < 0.5 { -1.0 } else { 1.0 };
                sign * rng.uniform_in(0.2, 1.0)
            })
            .collect(),
    }
}

fn rand_body(rng: &mut RngState, t: usize, dims: usize) -> BodyMotionSequence {
    BodyMotionSequence::new(
        30.0,
        dims,
        (0..t)
            .map(|_| (0..dims).map(|_| rng.uniform_in(-1.0, 1.0)).collect())
            .collect(),
    )
    .unwrap()
}

fn rand_face(rng: &mut RngState, t: usize) -> FacialMotionSequence {
    FacialMotionSequence::new(
        30.0,
        (0..t)
            .map(|_| {
                let mut f = [0.0; FACE_DIMS];
                for v in f.iter_mut() {
                    *v = rng.uniform_in(-1.0, 1.0);
                }
                f
            })
            .collect(),
    )
    .unwrap()
}

fn micro_config() -> ModelConfig {
    ModelConfig {
        body_dim: 6,
        embed_dim: 8,
        enc_layers: 1,
        enc_heads: 2,
        enc_ff_dim: 12,
        dec_layers: 1,
        dec_heads: 2,
        dec_ff_dim: 12,
        style_d: 2,
        style_k: 4,
        style_heads: 2,
        style_proj_dim: 4,
        ..ModelConfig::default()
    }
}

// ---------------------------------------------------------------------------
// Criterion 1: gradient correctness.
// ---------------------------------------------------------------------------

/// Finite-difference check with the primitive tolerance; returns max rel err.
fn fd(
    name: &str,
    params: Vec<(String, Tensor)>,
    build: &mut dyn FnMut(&mut Graph, &ParamSet) -> Result<Var>,
) -> f64 {
    let report = grad_check(&params, 1e-5, build).unwrap();
    assert!(
        report.max_rel_err < 1e-4,
        "{name}: max rel err {} (worst element {:?})",
        report.max_rel_err,
        report.worst
    );
    report.max_rel_err
}

fn p(name: &str, t: Tensor) -> (String, Tensor) {
    (name.to_string(), t)
}

#[test]
fn criterion_01_gradient_correctness() {
    let start = Instant::now();
    let mut rng = RngState::new(401);
    let mut worst_primitive = 0.0f64;
    let mut checked = 0usize;
    macro_rules! op {
        ($name:expr, $params:expr, $build:expr) => {{
            worst_primitive = worst_primitive.max(fd($name, $params, &mut $build));
            checked += 1;
        }};
    }

    let x34 = rand_tensor(&mut rng, &[3, 4], -1.0, 1.0);
    let y34 = rand_tensor(&mut rng, &[3, 4], -1.0, 1.0);
    let w34 = rand_tensor(&mut rng, &[3, 4], -1.0, 1.0);

    op!("matmul", vec![p("a", x34.clone()), p("b", rand_tensor(&mut rng, &[4, 2], -1.0, 1.0))], |g: &mut Graph, ps: &ParamSet| {
        let a = ps.bind(g, "a")?;
        let b = ps.bind(g, "b")?;
        let m = g.matmul(a, b)?;
        let s = g.square(m);
        g.mean_all(s)
    });
    op!("matmul_nt", vec![p("a", x34.clone()), p("b", rand_tensor(&mut rng, &[2, 4], -1.0, 1.0))], |g: &mut Graph, ps: &ParamSet| {
        let a = ps.bind(g, "a")?;
        let b = ps.bind(g, "b")?;
        let m = g.matmul_nt(a, b)?;
        let s = g.square(m);
        g.mean_all(s)
    });
    op!("add", vec![p("a", x34.clone()), p("b", y34.clone())], |g: &mut Graph, ps: &ParamSet| {
        let a = ps.bind(g, "a")?;
        let b = ps.bind(g, "b")?;
        let m = g.add(a, b)?;
        let s = g.square(m);
        g.mean_all(s)
    });
    op!("sub", vec![p("a", x34.clone()), p("b", y34.clone())], |g: &mut Graph, ps: &ParamSet| {
        let a = ps.bind(g, "a")?;
        let b = ps.bind(g, "b")?;
        let m = g.sub(a, b)?;
        let s = g.square(m);
        g.mean_all(s)
    });
    op!("mul", vec![p("a", x34.clone()), p("b", y34.clone())], |g: &mut Graph, ps: &ParamSet| {
        let a = ps.bind(g, "a")?;
        let b = ps.bind(g, "b")?;
        let m = g.mul(a, b)?;
        let s = g.square(m);
        g.mean_all(s)
    });
    op!("scale", vec![p("a", x34.clone())], |g: &mut Graph, ps: &ParamSet| {
        let a = ps.bind(g, "a")?;
        let m = g.scale(a, 1.7);
        let s = g.square(m);
        g.mean_all(s)
    });
    op!("add_const", vec![p("a", x34.clone())], |g: &mut Graph, ps: &ParamSet| {
        let a = ps.bind(g, "a")?;
        let m = g.add_const(a, 0.3);
        let s = g.square(m);
        g.mean_all(s)
    });
    op!("add_row_bias", vec![p("a", x34.clone()), p("b", rand_tensor(&mut rng, &[4], -1.0, 1.0))], |g: &mut Graph, ps: &ParamSet| {
        let a = ps.bind(g, "a")?;
        let b = ps.bind(g, "b")?;
        let m = g.add_row_bias(a, b)?;
        let s = g.square(m);
        g.mean_all(s)
    });
    op!("relu", vec![p("a", rand_tensor_off_zero(&mut rng, &[3, 4]))], |g: &mut Graph, ps: &ParamSet| {
        let a = ps.bind(g, "a")?;
        let m = g.relu(a);
        let s = g.square(m);
        g.mean_all(s)
    });
    let wc = w34.clone();
    op!("softmax_rows", vec![p("a", x34.clone())], |g: &mut Graph, ps: &ParamSet| {
        let a = ps.bind(g, "a")?;
        let m = g.softmax_rows(a)?;
        let w = g.constant(wc.clone());
        let mixed = g.mul(m, w)?;
        let s = g.square(mixed);
        g.mean_all(s)
    });
    op!("layer_norm_rows", vec![
        p("a", x34.clone()),
        p("gamma", rand_tensor(&mut rng, &[4], 0.5, 1.5)),
        p("beta", rand_tensor(&mut rng, &[4], -0.5, 0.5)),
    ], |g: &mut Graph, ps: &ParamSet| {
        let a = ps.bind(g, "a")?;
        let gamma = ps.bind(g, "gamma")?;
        let beta = ps.bind(g, "beta")?;
        let m = g.layer_norm_rows(a, gamma, beta, 1e-5)?;
        let s = g.square(m);
        g.mean_all(s)
    });
    op!("mean_rows", vec![p("a", x34.clone())], |g: &mut Graph, ps: &ParamSet| {
        let a = ps.bind(g, "a")?;
        let m = g.mean_rows(a)?;
        let s = g.square(m);
        g.mean_all(s)
    });
    op!("row_sums", vec![p("a", x34.clone())], |g: &mut Graph, ps: &ParamSet| {
        let a = ps.bind(g, "a")?;
        let m = g.row_sums(a)?;
        let s = g.square(m);
        g.mean_all(s)
    });
    op!("mean_all", vec![p("a", x34.clone())], |g: &mut Graph, ps: &ParamSet| {
        let a = ps.bind(g, "a")?;
        let m = g.mean_all(a)?;
        Ok(g.square(m))
    });
    op!("sum_all", vec![p("a", x34.clone())], |g: &mut Graph, ps: &ParamSet| {
        let a = ps.bind(g, "a")?;
        let m = g.sum_all(a);
        Ok(g.square(m))
    });
    op!("ln", vec![p("a", rand_tensor(&mut rng, &[3, 4], 0.5, 2.0))], |g: &mut Graph, ps: &ParamSet| {
        let a = ps.bind(g, "a")?;
        let m = g.ln(a);
        let s = g.square(m);
        g.mean_all(s)
    });
    op!("square", vec![p("a", x34.clone())], |g: &mut Graph, ps: &ParamSet| {
        let a = ps.bind(g, "a")?;
        let m = g.square(a);
        g.mean_all(m)
    });
    op!("sqrt", vec![p("a", rand_tensor(&mut rng, &[3, 4], 0.5, 2.0))], |g: &mut Graph, ps: &ParamSet| {
        let a = ps.bind(g, "a")?;
        let m = g.sqrt(a);
        let s = g.square(m);
        g.mean_all(s)
    });
    op!("normalize_rows", vec![p("a", rand_tensor_off_zero(&mut rng, &[3, 4]))], |g: &mut Graph, ps: &ParamSet| {
        let a = ps.bind(g, "a")?;
        let m = g.normalize_rows(a, 1e-9)?;
        let w = g.constant(wc.clone());
        let mixed = g.mul(m, w)?;
        let s = g.square(mixed);
        g.mean_all(s)
    });
    op!("concat_cols", vec![p("a", rand_tensor(&mut rng, &[3, 2], -1.0, 1.0)), p("b", rand_tensor(&mut rng, &[3, 3], -1.0, 1.0))], |g: &mut Graph, ps: &ParamSet| {
        let a = ps.bind(g, "a")?;
        let b = ps.bind(g, "b")?;
        let m = g.concat_cols(a, b)?;
        let s = g.square(m);
        g.mean_all(s)
    });
    op!("slice_cols", vec![p("a", rand_tensor(&mut rng, &[3, 5], -1.0, 1.0))], |g: &mut Graph, ps: &ParamSet| {
        let a = ps.bind(g, "a")?;
        let m = g.slice_cols(a, 1, 3)?;
        let s = g.square(m);
        g.mean_all(s)
    });
    op!("conv1d_k3", vec![
        p("x", rand_tensor(&mut rng, &[5, 3], -1.0, 1.0)),
        p("k", rand_tensor(&mut rng, &[3, 3, 2], -1.0, 1.0)),
        p("b", rand_tensor(&mut rng, &[2], -0.5, 0.5)),
    ], |g: &mut Graph, ps: &ParamSet| {
        let x = ps.bind(g, "x")?;
        let k = ps.bind(g, "k")?;
        let b = ps.bind(g, "b")?;
        let m = g.conv1d_k3(x, k, b)?;
        let s = g.square(m);
        g.mean_all(s)
    });
    let w54 = rand_tensor(&mut rng, &[5, 4], -1.0, 1.0);
    op!("repeat_row", vec![p("a", rand_tensor(&mut rng, &[1, 4], -1.0, 1.0))], |g: &mut Graph, ps: &ParamSet| {
        let a = ps.bind(g, "a")?;
        let m = g.repeat_row(a, 5)?;
        let w = g.constant(w54.clone());
        let mixed = g.mul(m, w)?;
        let s = g.square(mixed);
        g.mean_all(s)
    });
    op!("mul_scalar", vec![p("a", x34.clone()), p("s", rand_tensor(&mut rng, &[1], 0.5, 1.5))], |g: &mut Graph, ps: &ParamSet| {
        let a = ps.bind(g, "a")?;
        let s = ps.bind(g, "s")?;
        let m = g.mul_scalar(a, s)?;
        let sq = g.square(m);
        g.mean_all(sq)
    });
    op!("cross_entropy_rows", vec![p("a", x34.clone())], |g: &mut Graph, ps: &ParamSet| {
        let a = ps.bind(g, "a")?;
        g.cross_entropy_rows(a, &[0, 2, 1])
    });
    op!("reshape", vec![p("a", rand_tensor(&mut rng, &[2, 6], -1.0, 1.0))], |g: &mut Graph, ps: &ParamSet| {
        let a = ps.bind(g, "a")?;
        let m = g.reshape(a, &[3, 4])?;
        let w = g.constant(wc.clone());
        let mixed = g.mul(m, w)?;
        let s = g.square(mixed);
        g.mean_all(s)
    });

    // The hard sampler routes gradients straight through by definition, so a
    // finite difference of its argmax forward (zero almost everywhere) is not
    // the reference; the reference is the same graph without the op. The two
    // parameter gradients must agree bit for bit.
    let logits = rand_tensor(&mut rng, &[2, 4], -1.0, 1.0);
    let mix = rand_tensor(&mut rng, &[2, 4], -1.0, 1.0);
    let grads_of = |use_hard: bool| -> Vec<f64> {
        let mut g = Graph::training();
        let l = g.param("logits", &logits).unwrap();
        let soft = g.softmax_rows(l).unwrap();
        let picked = if use_hard {
            g.straight_through_hard(soft).unwrap()
        } else {
            soft
        };
        let w = g.constant(mix.clone());
        let m = g.mul(picked, w).unwrap();
        let loss = g.sum_all(m);
        g.backward(loss).unwrap();
        g.param_grads().remove(0).1
    };
    let with_op = grads_of(true);
    let without_op = grads_of(false);
    assert_eq!(
        with_op.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        without_op.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        "straight_through_hard must pass gradients through unchanged"
    );
    checked += 1;

    // Composed objective at micro scale: T=8 windows, a 2-item batch, every
    // parameter of the model. The jaw weight is held at 1 for this check
    // only: at 1000 the loss sits near 1e3 and finite-difference roundoff
    // exceeds the relative-error floor on parameters whose true gradient is
    // exactly zero (attention key biases); the weighting itself is a scalar
    // scale verified by the criterion-3 hand case.
    let mut mrng = RngState::new(51);
    let cfg = ModelConfig {
        body_dim: 4,
        embed_dim: 6,
        enc_layers: 1,
        enc_heads: 1,
        enc_ff_dim: 8,
        dec_layers: 1,
        dec_heads: 1,
        dec_ff_dim: 8,
        style_d: 2,
        style_k: 2,
        style_heads: 1,
        style_proj_dim: 3,
        ..ModelConfig::default()
    };
    let model = B2fModel::new(cfg, &mut mrng).unwrap();
    let batch = micro_batch(&model, 3, 2, 8);
    let style_batch = micro_batch(&model, 4, 2, 8);
    let weights = LossWeights { lambda_jaw: 1.0, ..LossWeights::default() };
    let schedule = KlSchedule::default();
    let params = model.named_params();
    let template = model.clone();
    let report = grad_check(&params, 1e-4, &mut |g, ps| {
        let mut m = template.clone();
        m.visit_params_mut(&mut |name, t| *t = ps.get(&name).unwrap().clone());
        let (total, _) = total_loss(
            g,
            &m,
            &batch,
            &style_batch,
            &weights,
            &schedule,
            0.25,
            &mut RngState::new(99),
        )?;
        Ok(total)
    })
    .unwrap();
    assert!(
        report.max_rel_err < 1e-3,
        "composed objective: max rel err {} (worst {:?})",
        report.max_rel_err,
        report.worst
    );

    let elapsed = start.elapsed();
    assert!(
        elapsed < Duration::from_secs(120),
        "gradient checks took {elapsed:?}, budget is 2 minutes"
    );
    pass(
        1,
        "gradient correctness",
        &format!(
            "{checked} primitives max rel err {worst_primitive:.2e}; composed objective {:.2e} over {} elements; {elapsed:?}",
            report.max_rel_err, report.elements_checked
        ),
    );
}

use b2f_core::motion::{BatchId, BatchItem, TrainingBatch};

fn micro_batch(model: &B2fModel, seed: u64, n: usize, t: usize) -> TrainingBatch {
    let mut rng = RngState::new(seed);
    let dims = model.config.body_dim;
    let items = (0..n)
        .map(|i| {
            let body = rand_body(&mut rng, t, dims);
            let face = rand_face(&mut rng, t);
            let style_ref = rand_face(&mut rng, t);
            BatchItem {
                clip_id: format!("c{i}"),
                segment_start: 0,
                offset: 0,
                body,
                style_ref,
                face,
            }
        })
        .collect();
    TrainingBatch { id: BatchId::A, t_len: t, items }
}

// ---------------------------------------------------------------------------
// Criterion 2: latent invariants.
// ---------------------------------------------------------------------------

#[test]
fn criterion_02_latent_invariants() {
    let model = B2fModel::new(micro_config(), &mut RngState::new(7)).unwrap();
    let d = model.config.style_d;
    let k = model.config.style_k;
    for seed in 0..1000u64 {
        let face = rand_face(&mut RngState::new(seed.wrapping_mul(31).wrapping_add(5)), 6);
        let (soft, _) = model
            .encode_style(&face, StyleMode::Soft, 0.7, &mut RngState::new(seed))
            .unwrap();
        let (hard, _) = model
            .encode_style(&face, StyleMode::Hard, 0.7, &mut RngState::new(seed))
            .unwrap();
        for block in 0..d {
            let sb = &soft.values()[block * k..(block + 1) * k];
            let hb = &hard.values()[block * k..(block + 1) * k];
            let sum: f64 = sb.iter().sum();
            assert!(
                (sum - 1.0).abs() <= 1e-9,
                "seed {seed} block {block}: soft sum {sum}"
            );
            assert!(
                sb.iter().all(|&v| v >= 0.0),
                "seed {seed} block {block}: negative soft mass {sb:?}"
            );
            let ones = hb.iter().filter(|&&v| v == 1.0).count();
            let zeros = hb.iter().filter(|&&v| v == 0.0).count();
            assert!(
                ones == 1 && zeros == k - 1,
                "seed {seed} block {block}: hard block not exactly one-hot {hb:?}"
            );
            let soft_arg = sb
                .iter()
                .enumerate()
                .max_by(|(_, a), (_, b)| a.partial_cmp(b).unwrap())
                .map(|(i, _)| i)
                .unwrap();
            let hard_arg = hb.iter().position(|&v| v == 1.0).unwrap();
            assert_eq!(
                soft_arg, hard_arg,
                "seed {seed} block {block}: hard index diverges from soft argmax"
            );
        }
    }
    pass(2, "latent invariants", "1000 seeds x soft simplex / hard one-hot / argmax agreement");
}

// ---------------------------------------------------------------------------
// Criterion 3: loss identities.
// ---------------------------------------------------------------------------

#[test]
fn criterion_03_loss_identities() {
    let mut g = Graph::inference();

    // Uniform logits: every row constant. K is a power of two in both cases,
    // so softmax yields exactly 1/K and k*q is exactly 1.
    for (d, k, c) in [(2usize, 4usize, 0.0f64), (3, 16, 0.7)] {
        let logits = g.constant(Tensor {
            shape: vec![d, k],
            data: vec![c; d * k],
        });
        let kl = kl_loss(&mut g, logits).unwrap();
        assert_eq!(
            g.scalar_value(kl).unwrap(),
            0.0,
            "kl at uniform logits ({d}x{k}, fill {c}) must be exactly zero"
        );
    }

    // Identical unit-norm embeddings: alignment is exactly zero.
    let mut unit = Tensor::zeros(&[3, 4]);
    for i in 0..3 {
        unit.data[i * 4 + i] = 1.0;
    }
    let a = g.constant(unit.clone());
    let b = g.constant(unit);
    let align = align_loss(&mut g, a, b).unwrap();
    assert_eq!(g.scalar_value(align).unwrap(), 0.0);

    // Jaw up-weighting hand case: a 0.1 error on one jaw dim of one frame,
    // jaw weight 1000 -> 1000 * 0.1^2 / 3 = 3.333...
    let target = g.constant(Tensor::zeros(&[1, FACE_DIMS]));
    let mut jaw_off = Tensor::zeros(&[1, FACE_DIMS]);
    jaw_off.data[EXPRESSION_DIMS + 1] = 0.1;
    let out = g.constant(jaw_off);
    let recon = recon_loss(&mut g, target, out, 1000.0).unwrap();
    let expect = 1000.0 * 0.01 / 3.0;
    let got = g.scalar_value(recon).unwrap();
    assert!(
        (got - expect).abs() < 1e-9,
        "jaw hand case: got {got}, want {expect}"
    );

    // Warmup / hold / decay corners of the schedule.
    let schedule = KlSchedule::default();
    for (fraction, want) in [(0.0, 0.0), (0.25, 0.3), (0.5, 0.3), (1.0, 0.0)] {
        assert_eq!(
            kl_weight(&schedule, fraction),
            want,
            "kl weight at epoch fraction {fraction}"
        );
    }

    pass(3, "loss identities", "kl(uniform)=0, align(identical)=0, jaw 3.333 case, schedule corners");
}

// ---------------------------------------------------------------------------
// Criteria 4 and 5 share one trained model (the overfit fixture below).
// ---------------------------------------------------------------------------

const OVERFIT_CORPUS_SEED: u64 = 20;
const OVERFIT_CLIPS: usize = 8;
const OVERFIT_STYLES: usize = 4;
const OVERFIT_FRAMES: usize = 180;
const OVERFIT_EPOCHS: usize = 100;
const OVERFIT_TRAIN_SEED: u64 = 11;
const OVERFIT_LR: f64 = 1e-3;

struct OverfitFixture {
    clips: Vec<MotionClip>,
    records: Vec<SyntheticFactorRecord>,
    model: B2fModel,
    final_ckpt: PathBuf,
    resumed_ckpt: PathBuf,
    interval_ckpt: PathBuf,
    replayed_interval_ckpt: PathBuf,
    train_seconds: f64,
    _dir: &'static tempfile::TempDir,
}

fn overfit_config(epochs: usize) -> RunConfig {
    RunConfig {
        model: ModelConfig::reduced(),
        train: TrainConfig {
            batch_size: 4,
            learning_rate: OVERFIT_LR,
            weight_decay: 0.0,
            epochs,
            seed: OVERFIT_TRAIN_SEED,
            checkpoint_interval: OVERFIT_EPOCHS / 2,
            grad_clip: 5.0,
        },
        ..RunConfig::default()
    }
}

fn overfit() -> &'static OverfitFixture {
    static FX: OnceLock<OverfitFixture> = OnceLock::new();
    FX.get_or_init(|| {
        let dir: &'static tempfile::TempDir =
            Box::leak(Box::new(tempfile::tempdir().unwrap()));
        let (clips, records) = generate_synthetic_corpus(
            OVERFIT_CORPUS_SEED,
            OVERFIT_CLIPS,
            OVERFIT_STYLES,
            OVERFIT_FRAMES,
        )
        .unwrap();

        // Run A: the uninterrupted run, timed.
        let config = overfit_config(OVERFIT_EPOCHS);
        let start = Instant::now();
        let final_ckpt = train(&config, &clips, &dir.path().join("a"), None, &mut |_| {}).unwrap();
        let train_seconds = start.elapsed().as_secs_f64();

        // Run B: same seed, stopped at the halfway checkpoint; then resumed
        // to the full epoch count in a third directory.
        let half = overfit_config(OVERFIT_EPOCHS / 2);
        let half_ckpt = train(&half, &clips, &dir.path().join("b"), None, &mut |_| {}).unwrap();
        let resumed_ckpt = train(
            &config,
            &clips,
            &dir.path().join("c"),
            Some(&half_ckpt),
            &mut |_| {},
        )
        .unwrap();

        let model = load_checkpoint(&final_ckpt).unwrap().build_model().unwrap();
        OverfitFixture {
            clips,
            records,
            model,
            interval_ckpt: dir
                .path()
                .join("a")
                .join(format!("ckpt-{:04}.json", OVERFIT_EPOCHS / 2)),
            replayed_interval_ckpt: half_ckpt,
            final_ckpt,
            resumed_ckpt,
            train_seconds,
            _dir: dir,
        }
    })
}

#[test]
fn criterion_04_overfit_run() {
    let fx = overfit();
    assert!(
        fx.train_seconds < 600.0,
        "overfit run took {:.1}s, budget is 10 minutes",
        fx.train_seconds
    );

    // Reconstruction of the training clips, each under its own reference.
    let mut total = 0.0;
    for clip in &fx.clips {
        let out = b2f_core::inference::generate_offline(
            &fx.model,
            &clip.body,
            &clip.face,
            StyleMode::Hard,
            33,
        )
        .unwrap();
        total += l2_error(&out, &clip.face).unwrap();
    }
    let recon = total / fx.clips.len() as f64;
    assert!(
        recon < 0.05,
        "training-set reconstruction l2 {recon:.4} (want < 0.05)"
    );

    // Bitwise reproducibility: the halfway checkpoint of the replays match,
    // and resuming from it lands on the identical final checkpoint.
    let a_mid = std::fs::read(&fx.interval_ckpt).unwrap();
    let b_mid = std::fs::read(&fx.replayed_interval_ckpt).unwrap();
    assert!(a_mid == b_mid, "halfway checkpoints differ between replays");
    let a_final = std::fs::read(&fx.final_ckpt).unwrap();
    let c_final = std::fs::read(&fx.resumed_ckpt).unwrap();
    assert!(
        a_final == c_final,
        "resumed run's final checkpoint differs from the uninterrupted run"
    );

    pass(
        4,
        "overfit run",
        &format!(
            "recon l2 {recon:.4} over {} clips in {} epochs, {:.0}s; replay and resume byte-identical",
            fx.clips.len(),
            OVERFIT_EPOCHS,
            fx.train_seconds
        ),
    );
}

#[test]
fn criterion_05_disentanglement() {
    let fx = overfit();
    let n_styles = OVERFIT_STYLES;
    let frames = labeled_gt_frames(&fx.clips, &fx.records).unwrap();
    let probe = train_style_probe(&frames, n_styles, 17).unwrap();

    // Cross-generation: drive each clip's body with a reference clip of a
    // different style; the probe must recover the requested style.
    let style_of = |clip: &MotionClip| {
        fx.records
            .iter()
            .find(|r| r.clip_id == clip.id)
            .map(|r| r.style_id)
            .unwrap()
    };
    let mut generated = Vec::new();
    for (i, clip) in fx.clips.iter().enumerate() {
        let own = style_of(clip);
        let reference = (1..fx.clips.len())
            .map(|j| &fx.clips[(i + j) % fx.clips.len()])
            .find(|c| style_of(c) != own)
            .expect("corpus has multiple styles");
        let out = b2f_core::inference::generate_offline(
            &fx.model,
            &clip.body,
            &reference.face,
            StyleMode::Hard,
            33,
        )
        .unwrap();
        for f in out.frames() {
            generated.push((f.to_vec(), style_of(reference)));
        }
    }
    let accuracy = probe.accuracy(&generated).unwrap();
    assert!(
        accuracy >= 0.90,
        "cross-generation style probe accuracy {accuracy:.4} (want >= 0.90, chance {:.2})",
        1.0 / n_styles as f64
    );

    // Content alignment on pairs the model never saw.
    let (held_out, _) =
        generate_synthetic_corpus(OVERFIT_CORPUS_SEED + 1000, 4, n_styles, OVERFIT_FRAMES)
            .unwrap();
    let mut align_total = 0.0;
    for clip in &held_out {
        align_total += alignment_score(&fx.model, &clip.body, &clip.face).unwrap();
    }
    let alignment = align_total / held_out.len() as f64;
    assert!(
        alignment >= 0.9,
        "held-out content alignment {alignment:.4} (want >= 0.9)"
    );

    pass(
        5,
        "disentanglement",
        &format!("probe accuracy {accuracy:.4} (chance 0.25), held-out alignment {alignment:.4}"),
    );
}

// ---------------------------------------------------------------------------
// Criterion 6: streaming equivalence.
// ---------------------------------------------------------------------------

#[test]
fn criterion_06_streaming_equivalence() {
    let model = B2fModel::new(micro_config(), &mut RngState::new(19)).unwrap();
    let body = rand_body(&mut RngState::new(2), 300, model.config.body_dim);
    let style = embed_style(
        &model,
        &rand_face(&mut RngState::new(3), 8),
        StyleMode::Hard,
        &mut RngState::new(4),
    )
    .unwrap();

    let mut worst = 0.0f64;
    for t in 49..300 {
        let history: Vec<Vec<f64>> = (0..=t).map(|i| body.frame(i).to_vec()).collect();
        let stepped = realtime_step(&model, &history, &style, body.fps).unwrap();
        let window = body.slice(t + 1 - 50, 50).unwrap();
        let offline = generate_with_embedding(&model, &window, &style).unwrap();
        let last = offline.frame(offline.len() - 1);
        for d in 0..FACE_DIMS {
            let diff = (stepped[d] - last[d]).abs();
            worst = worst.max(diff);
            assert!(
                diff < 1e-9,
                "frame {t} dim {d}: stream {} vs offline {}",
                stepped[d],
                last[d]
            );
        }
    }
    pass(
        6,
        "streaming equivalence",
        &format!("251 steps, max |stream - offline| = {worst:.2e}"),
    );
}

// ---------------------------------------------------------------------------
// Criterion 7: long-sequence stability.
// ---------------------------------------------------------------------------

#[test]
fn criterion_07_long_sequence_stability() {
    // Single-head micro widths: full attention materializes [T,T] score
    // matrices, so 5000 frames already costs hundreds of megabytes per layer.
    let cfg = ModelConfig {
        body_dim: 4,
        embed_dim: 8,
        enc_layers: 1,
        enc_heads: 1,
        enc_ff_dim: 12,
        dec_layers: 1,
        dec_heads: 1,
        dec_ff_dim: 12,
        style_d: 2,
        style_k: 4,
        style_heads: 1,
        style_proj_dim: 4,
        ..ModelConfig::default()
    };
    let model = B2fModel::new(cfg, &mut RngState::new(23)).unwrap();
    let t_len = 5000usize;
    let rows: Vec<Vec<f64>> = (0..t_len)
        .map(|t| {
            let x = t as f64 / 30.0;
            vec![
                (0.7 * x).sin(),
                (1.3 * x).cos(),
                (0.23 * x).sin() * 0.5,
                (2.9 * x).cos() * 0.25,
            ]
        })
        .collect();
    let body = BodyMotionSequence::new(30.0, 4, rows).unwrap();
    let style = embed_style(
        &model,
        &rand_face(&mut RngState::new(6), 8),
        StyleMode::Hard,
        &mut RngState::new(7),
    )
    .unwrap();

    let out = generate_with_embedding(&model, &body, &style).unwrap();
    assert_eq!(out.len(), t_len);
    let mut max_expr = 0.0f64;
    for frame in out.frames() {
        for (d, v) in frame.iter().enumerate() {
            assert!(v.is_finite(), "non-finite output at dim {d}");
            if d < EXPRESSION_DIMS {
                max_expr = max_expr.max(v.abs());
            }
        }
    }
    assert!(
        max_expr < 50.0,
        "expression magnitude {max_expr} out of bounds"
    );
    pass(
        7,
        "long-sequence stability",
        &format!("5000 frames, all finite, max |expression| = {max_expr:.3}"),
    );
}

// ---------------------------------------------------------------------------
// Criterion 8: metric oracle equivalence.
// ---------------------------------------------------------------------------

fn l2_by_hand(p: &FacialMotionSequence, g: &FacialMotionSequence) -> f64 {
    let mut total = 0.0;
    for (a, b) in p.frames().iter().zip(g.frames()) {
        let mut s = 0.0;
        for d in 0..FACE_DIMS {
            s += (a[d] - b[d]) * (a[d] - b[d]);
        }
        total += s.sqrt();
    }
    total / p.len() as f64
}

fn std_diff_by_hand(p: &FacialMotionSequence, g: &FacialMotionSequence) -> f64 {
    let std_of = |seq: &FacialMotionSequence, d: usize| {
        let n = seq.len() as f64;
        let mean: f64 = seq.frames().iter().map(|f| f[d]).sum::<f64>() / n;
        let var: f64 = seq
            .frames()
            .iter()
            .map(|f| (f[d] - mean) * (f[d] - mean))
            .sum::<f64>()
            / n;
        var.sqrt()
    };
    (0..FACE_DIMS)
        .map(|d| (std_of(p, d) - std_of(g, d)).abs())
        .sum::<f64>()
        / FACE_DIMS as f64
}

#[test]
fn criterion_08_metric_oracle_equivalence() {
    let mut rng = RngState::new(88);
    let mut worst_l2 = 0.0f64;
    let mut worst_sdd = 0.0f64;
    for _ in 0..100 {
        let t = rng.int_in(3, 40);
        let p = rand_face(&mut rng, t);
        let g = rand_face(&mut rng, t);
        let dl = (l2_error(&p, &g).unwrap() - l2_by_hand(&p, &g)).abs();
        assert!(dl < 1e-12, "l2 disagreement {dl}");
        worst_l2 = worst_l2.max(dl);

        // The deviation metric also accepts different lengths.
        let t2 = rng.int_in(2, 40);
        let g2 = rand_face(&mut rng, t2);
        let ds = (std_dev_difference(&p, &g2).unwrap() - std_diff_by_hand(&p, &g2)).abs();
        assert!(ds < 1e-12, "std-dev disagreement {ds}");
        worst_sdd = worst_sdd.max(ds);
    }

    // Hand case: dim 0 alternates +-1 (population std exactly 1) against a
    // constant signal (std exactly 0); every other dim matches. The metric
    // must equal 1/53 bit for bit.
    let osc = FacialMotionSequence::new(
        30.0,
        (0..10)
            .map(|t| {
                let mut f = [0.0; FACE_DIMS];
                f[0] = if t % 2 == 0 { 1.0 } else { -1.0 };
                f
            })
            .collect(),
    )
    .unwrap();
    let flat = FacialMotionSequence::new(30.0, vec![[0.0; FACE_DIMS]; 10]).unwrap();
    let got = std_dev_difference(&osc, &flat).unwrap();
    assert_eq!(got, 1.0 / 53.0, "hand case must be exact");

    pass(
        8,
        "metric oracle equivalence",
        &format!("100 cases, worst l2 gap {worst_l2:.2e}, worst std gap {worst_sdd:.2e}; 1/53 exact"),
    );
}

// ---------------------------------------------------------------------------
// Criterion 9: converter.
// ---------------------------------------------------------------------------

const CONVERTER_PAIRS: usize = 1280;
const CONVERTER_HOLDOUT: usize = 256;
const CONVERTER_EPOCHS: usize = 60;

#[test]
fn criterion_09_converter() {
    // Gate simplex over 1000 random inputs.
    let params = MoEConverterParams::new(&mut RngState::new(41));
    let mut rng = RngState::new(42);
    for i in 0..1000 {
        let f = FlameParams103::new(
            (0..FLAME_DIMS).map(|_| rng.uniform_in(-2.0, 2.0)).collect(),
        )
        .unwrap();
        let gate = gate_weights(&params, &f);
        assert_eq!(gate.len(), EXPERT_COUNT);
        let sum: f64 = gate.iter().sum();
        assert!(
            (sum - 1.0).abs() <= 1e-9 && gate.iter().all(|&w| w >= 0.0),
            "input {i}: gate off the simplex (sum {sum})"
        );
    }

    // One-hot gate weights reproduce the selected expert bit for bit.
    let probe_input = FlameParams103::new(
        (0..FLAME_DIMS).map(|_| rng.uniform_in(-1.0, 1.0)).collect(),
    )
    .unwrap();
    for chosen in 0..EXPERT_COUNT {
        let mut gate = vec![0.0; EXPERT_COUNT];
        gate[chosen] = 1.0;
        let blended = blend_experts(&gate, &params.experts).unwrap();
        let direct = params.experts[chosen].apply(&probe_input);
        let via_blend = blended.apply(&probe_input);
        assert_eq!(
            direct.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            via_blend.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            "expert {chosen}: blended output drifts from the expert"
        );
    }

    // Synthetic map training to held-out MSE < 1e-3 inside 5 minutes.
    let start = Instant::now();
    let pairs = synthetic_converter_pairs(9, CONVERTER_PAIRS + CONVERTER_HOLDOUT).unwrap();
    let (train_pairs, holdout) = pairs.split_at(CONVERTER_PAIRS);
    let cfg = ConverterTrainConfig {
        epochs: CONVERTER_EPOCHS,
        seed: 9,
        ..ConverterTrainConfig::default()
    };
    let trained = train_converter(train_pairs, &cfg, &mut |_, _| {}).unwrap();
    let mse = converter_mse(&trained, holdout).unwrap();
    let elapsed = start.elapsed();
    assert!(
        elapsed < Duration::from_secs(300),
        "converter training took {elapsed:?}, budget is 5 minutes"
    );
    assert!(mse < 1e-3, "held-out mse {mse:.6} (want < 1e-3)");

    // MouthClose weighting hand case: a 0.1 error on the MouthClose channel
    // of one frame -> 500 * 0.01 / 51.
    let mut g = Graph::inference();
    let mut pred = Tensor::zeros(&[1, 51]);
    pred.data[b2f_core::convert::MOUTH_CLOSE_INDEX] = 0.1;
    let pv = g.constant(pred);
    let tv = g.constant(Tensor::zeros(&[1, 51]));
    let loss = weighted_arkit_mse(&mut g, pv, tv).unwrap();
    let got = g.scalar_value(loss).unwrap();
    let want = 500.0 * 0.01 / 51.0;
    assert!(
        (got - want).abs() < 1e-9,
        "MouthClose hand case: got {got}, want {want}"
    );

    pass(
        9,
        "converter",
        &format!("gate simplex x1000, one-hot bit-exact, held-out mse {mse:.2e} in {elapsed:?}"),
    );
}

// ---------------------------------------------------------------------------
// Criterion 10: format round-trips.
// ---------------------------------------------------------------------------

#[test]
fn criterion_10_format_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = RngState::new(77);

    // Motion clips, body and face kinds.
    let body = rand_body(&mut rng, 13, 9);
    let face = rand_face(&mut rng, 13);
    for (name, clip) in [
        ("roundtrip.body.clip", b2f_core::motion::body_to_clip(&body)),
        ("roundtrip.face.clip", b2f_core::motion::face_to_clip(&face)),
    ] {
        let first = dir.path().join(name);
        let second = dir.path().join(format!("again-{name}"));
        save_clip(&clip, &first).unwrap();
        let back = read_clip(&first).unwrap();
        save_clip(&back, &second).unwrap();
        assert_eq!(
            std::fs::read(&first).unwrap(),
            std::fs::read(&second).unwrap(),
            "{name} not byte-stable"
        );
    }

    // Style embeddings, soft and hard.
    let model = B2fModel::new(micro_config(), &mut RngState::new(3)).unwrap();
    let reference = rand_face(&mut rng, 6);
    for (label, mode) in [("soft", StyleMode::Soft), ("hard", StyleMode::Hard)] {
        let (embedding, _) = model
            .encode_style(&reference, mode, 0.7, &mut RngState::new(5))
            .unwrap();
        let file = StyleFile { mode, embedding };
        let first = dir.path().join(format!("{label}.style"));
        let second = dir.path().join(format!("again-{label}.style"));
        save_style(&file, &first).unwrap();
        let back = read_style(&first).unwrap();
        save_style(&back, &second).unwrap();
        assert_eq!(
            std::fs::read(&first).unwrap(),
            std::fs::read(&second).unwrap(),
            "{label} style file not byte-stable"
        );
    }

    // Model checkpoint: the overfit run's artifact reloaded and rewritten.
    let fx = overfit();
    let ckpt = load_checkpoint(&fx.final_ckpt).unwrap();
    let rewritten = dir.path().join("ckpt-rewritten.json");
    save_checkpoint(&rewritten, &ckpt).unwrap();
    assert_eq!(
        std::fs::read(&fx.final_ckpt).unwrap(),
        std::fs::read(&rewritten).unwrap(),
        "model checkpoint not byte-stable"
    );

    // Converter checkpoint.
    let conv = MoEConverterParams::new(&mut RngState::new(12));
    let c1 = dir.path().join("converter.json");
    let c2 = dir.path().join("again-converter.json");
    save_converter(&conv, &c1).unwrap();
    let back = load_converter(&c1).unwrap();
    save_converter(&back, &c2).unwrap();
    assert_eq!(
        std::fs::read(&c1).unwrap(),
        std::fs::read(&c2).unwrap(),
        "converter checkpoint not byte-stable"
    );

    pass(10, "format round-trips", "clips, style files, model and converter checkpoints byte-stable");
}
