//! `b2f`: one binary for the whole pipeline. Subcommands mirror the
//! pipeline stages: synth -> train -> generate/stream -> convert -> eval,
//! plus style-embedding utilities. Human-readable output goes to stderr;
//! data goes to the files named by flags. Exit code 0 means the operation
//! completed. File formats are documented in FORMATS.md.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use b2f_core::convert::{
    arkit_clip_from_rows, convert_sequence, converter_mse, flame_rows_from_clip, load_converter,
    save_converter, synthetic_converter_pairs, train_converter, ArkitWeights51,
    ConverterTrainConfig, FlameParams103,
};
use b2f_core::error::{Error, Result};
use b2f_core::eval::{
    l2_error, labeled_gt_frames, std_dev_difference, train_style_probe, ClipEval, EvalReport,
};
use b2f_core::inference::{
    embed_style, generate_offline, generate_with_embedding, generate_with_schedule,
    interpolate_styles, perturb_code, read_schedule, read_style, save_style, StreamingSession,
    StyleFile,
};
use b2f_core::model::{load_checkpoint, B2fModel, StyleMode};
use b2f_core::motion::{
    generate_synthetic_corpus, load_corpus, read_body, read_clip, read_face, save_clip,
    save_corpus, save_face, FacialMotionSequence, MotionClip, SyntheticFactorRecord,
};
use b2f_core::nn::RngState;
use b2f_core::trainer::{train, RunConfig, TrainEvent};

#[derive(Parser)]
#[command(
    name = "b2f",
    version,
    about = "Body-to-face motion generation pipeline",
    long_about = "Body-to-face motion generation: synthesize a corpus, train the model, \
generate or stream facial motion from body motion under a chosen style, convert FLAME \
output to ARKit blendshape weights, and evaluate. File formats are described in FORMATS.md."
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic body+face corpus with known style/content factors.
    Synth(SynthArgs),
    /// Train the model on a corpus directory.
    Train(TrainArgs),
    /// Generate a facial clip from a body clip (whole clip at once).
    Generate(GenerateArgs),
    /// Simulate streaming: feed body frames one by one, time each step.
    Stream(StreamArgs),
    /// Convert a FLAME clip to ARKit blendshape weights.
    Convert(ConvertArgs),
    /// Train the FLAME-to-ARKit converter.
    ConvertTrain(ConvertTrainArgs),
    /// Compare predicted facial clips against ground truth.
    Eval(EvalArgs),
    /// Train a style probe on a corpus and score cross-style generation.
    Probe(ProbeArgs),
    /// Style embedding utilities.
    #[command(subcommand)]
    Style(StyleCmd),
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Soft,
    Hard,
}

impl From<ModeArg> for StyleMode {
    fn from(m: ModeArg) -> StyleMode {
        match m {
            ModeArg::Soft => StyleMode::Soft,
            ModeArg::Hard => StyleMode::Hard,
        }
    }
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory for the corpus.
    #[arg(long)]
    out: PathBuf,
    /// Corpus seed; falls back to $B2F_SEED, then 0.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of clips.
    #[arg(long, default_value_t = 64)]
    clips: usize,
    /// Number of distinct styles (at least 2).
    #[arg(long, default_value_t = 4, value_parser = at_least_two_styles)]
    styles: usize,
    /// Frames per clip.
    #[arg(long, default_value_t = 240)]
    frames: usize,
}

#[derive(Args)]
struct TrainArgs {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Corpus directory produced by `synth` (or in the same layout).
    #[arg(long)]
    corpus: PathBuf,
    /// Directory for checkpoints.
    #[arg(long)]
    out: PathBuf,
    /// Resume from this checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args)]
#[group(id = "style_source", required = true, multiple = false)]
struct StyleSource {
    /// Facial clip to take the style from.
    #[arg(long)]
    style_ref: Option<PathBuf>,
    /// Style embedding file (see `style embed`).
    #[arg(long)]
    style: Option<PathBuf>,
    /// Style schedule file for transitions (generate only).
    #[arg(long)]
    schedule: Option<PathBuf>,
}

#[derive(Args)]
struct GenerateArgs {
    /// Model checkpoint.
    #[arg(long)]
    model: PathBuf,
    /// Body clip to drive generation.
    #[arg(long)]
    body: PathBuf,
    /// Output facial clip.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    style_source: StyleSource,
    /// Sampling mode when encoding a style reference.
    #[arg(long, value_enum, default_value_t = ModeArg::Hard)]
    mode: ModeArg,
    /// Style sampling seed; falls back to $B2F_SEED, then 0.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct StreamArgs {
    /// Model checkpoint.
    #[arg(long)]
    model: PathBuf,
    /// Body clip, fed frame by frame.
    #[arg(long)]
    body: PathBuf,
    /// Facial clip to take the style from.
    #[arg(long)]
    style_ref: PathBuf,
    /// Output facial clip (one frame per input frame).
    #[arg(long)]
    out: PathBuf,
    /// Sampling mode when encoding the style reference.
    #[arg(long, value_enum, default_value_t = ModeArg::Hard)]
    mode: ModeArg,
    /// Style sampling seed; falls back to $B2F_SEED, then 0.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct ConvertArgs {
    /// Converter checkpoint from `convert-train`.
    #[arg(long)]
    converter: PathBuf,
    /// Input FLAME clip (dims 103, or 53 to auto-assemble).
    #[arg(long = "in-flame")]
    in_flame: PathBuf,
    /// Output ARKit clip (dims 51 with channel names).
    #[arg(long = "out-arkit")]
    out_arkit: PathBuf,
}

#[derive(Args)]
#[group(id = "pair_source", required = true, multiple = false)]
struct PairSource {
    /// Directory of `<id>.flame.clip` / `<id>.arkit.clip` training pairs.
    #[arg(long)]
    pairs: Option<PathBuf>,
    /// Generate this many synthetic training pairs instead.
    #[arg(long)]
    synthetic: Option<usize>,
}

#[derive(Args)]
struct ConvertTrainArgs {
    #[command(flatten)]
    source: PairSource,
    /// Output converter checkpoint.
    #[arg(long)]
    out: PathBuf,
    /// Training seed; falls back to $B2F_SEED, then 0.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    learning_rate: f64,
    /// Stop early once the epoch mean loss falls below this (0 disables).
    #[arg(long, default_value_t = 0.0)]
    stop_at_loss: f64,
    /// Fraction of the pairs held out for the final MSE report.
    #[arg(long, default_value_t = 0.2)]
    holdout: f64,
}

#[derive(Args)]
struct EvalArgs {
    /// Predicted facial clip file, or a directory of `*.face.clip`.
    #[arg(long)]
    pred: PathBuf,
    /// Ground-truth facial clip file, or a directory of `*.face.clip`.
    #[arg(long)]
    gt: PathBuf,
    /// Also write the report as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct ProbeArgs {
    /// Model checkpoint.
    #[arg(long)]
    model: PathBuf,
    /// Corpus directory with a factors.json sidecar.
    #[arg(long)]
    corpus: PathBuf,
    /// Probe training / generation seed; falls back to $B2F_SEED, then 0.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum StyleCmd {
    /// Encode a style reference clip into an embedding file.
    Embed(StyleEmbedArgs),
    /// Convex blend of two embedding files.
    Interp(StyleInterpArgs),
    /// Re-roll n blocks of a hard embedding.
    Perturb(StylePerturbArgs),
    /// Report how many blocks differ between two embedding files.
    Diff(StyleDiffArgs),
}

#[derive(Args)]
struct StyleEmbedArgs {
    #[arg(long)]
    model: PathBuf,
    /// Facial clip to encode.
    #[arg(long)]
    style_ref: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = ModeArg::Hard)]
    mode: ModeArg,
    /// Sampling seed; falls back to $B2F_SEED, then 0.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct StyleInterpArgs {
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    /// Blend ratio in [0, 1]; 0 returns a, 1 returns b.
    #[arg(long)]
    alpha: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct StylePerturbArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// How many blocks to re-roll.
    #[arg(long)]
    n: usize,
    #[arg(long)]
    out: PathBuf,
    /// Perturbation seed; falls back to $B2F_SEED, then 0.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct StyleDiffArgs {
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Synth(a) => cmd_synth(a),
        Cmd::Train(a) => cmd_train(a),
        Cmd::Generate(a) => cmd_generate(a),
        Cmd::Stream(a) => cmd_stream(a),
        Cmd::Convert(a) => cmd_convert(a),
        Cmd::ConvertTrain(a) => cmd_convert_train(a),
        Cmd::Eval(a) => cmd_eval(a),
        Cmd::Probe(a) => cmd_probe(a),
        Cmd::Style(a) => match a {
            StyleCmd::Embed(a) => cmd_style_embed(a),
            StyleCmd::Interp(a) => cmd_style_interp(a),
            StyleCmd::Perturb(a) => cmd_style_perturb(a),
            StyleCmd::Diff(a) => cmd_style_diff(a),
        },
    }
}

fn at_least_two_styles(s: &str) -> std::result::Result<usize, String> {
    let v: usize = s
        .parse()
        .map_err(|_| String::from("expected an unsigned integer"))?;
    if v < 2 {
        Err(String::from(
            "style-conditioned generation needs at least 2 styles",
        ))
    } else {
        Ok(v)
    }
}

/// --seed flag, then $B2F_SEED, then 0.
fn resolve_seed(flag: Option<u64>) -> Result<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var("B2F_SEED") {
        Ok(v) => v.trim().parse().map_err(|_| {
            Error::invalid(format!("B2F_SEED must be an unsigned integer, got `{v}`"))
        }),
        Err(_) => Ok(0),
    }
}

fn load_model(path: &Path) -> Result<B2fModel> {
    let ckpt = load_checkpoint(path)?;
    let model = ckpt.build_model()?;
    eprintln!(
        "model: {} ({} parameters, embed {}, style {}x{})",
        path.display(),
        model.param_count(),
        model.config.embed_dim,
        model.config.style_d,
        model.config.style_k
    );
    Ok(model)
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let seed = resolve_seed(a.seed)?;
    eprintln!(
        "synth: seed={seed} clips={} styles={} frames={} out={}",
        a.clips,
        a.styles,
        a.frames,
        a.out.display()
    );
    let (clips, records) = generate_synthetic_corpus(seed, a.clips, a.styles, a.frames)?;
    save_corpus(&a.out, &clips, Some(&records))?;
    eprintln!("wrote {} clips to {}", clips.len(), a.out.display());
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let config = RunConfig::load(&a.config)?;
    eprintln!("train: corpus={} out={}", a.corpus.display(), a.out.display());
    eprintln!("resolved config (seed={}):", config.train.seed);
    for line in config.to_toml_string()?.lines() {
        eprintln!("  {line}");
    }
    let (clips, _) = load_corpus(&a.corpus)?;
    eprintln!("loaded {} clips", clips.len());

    let mut last_step: Option<(f64, b2f_core::losses::LossBreakdown)> = None;
    let weights = config.weights.clone();
    let final_path = train(
        &config,
        &clips,
        &a.out,
        a.resume.as_deref(),
        &mut |event| match event {
            TrainEvent::Step { epoch_fraction, second, .. } => {
                last_step = Some((epoch_fraction, second));
            }
            TrainEvent::StepAborted { epoch, step, reason } => {
                eprintln!("epoch {epoch} step {step}: update skipped ({reason})");
            }
            TrainEvent::EpochDone { epoch, kl_weight } => {
                let total = last_step.as_ref().map(|(_, b)| b.total).unwrap_or(f64::NAN);
                eprintln!("epoch={epoch} kl_weight={kl_weight:.6} last_total={total:.6}");
            }
            TrainEvent::CheckpointSaved { path } => {
                eprintln!("checkpoint: {}", path.display());
            }
        },
    )?;
    if let Some((frac, breakdown)) = &last_step {
        for line in breakdown.log_lines(&weights, *frac) {
            eprintln!("{line}");
        }
    }
    eprintln!("final checkpoint: {}", final_path.display());
    Ok(())
}

fn cmd_generate(a: GenerateArgs) -> Result<()> {
    let seed = resolve_seed(a.seed)?;
    let model = load_model(&a.model)?;
    let body = read_body(&a.body)?;
    eprintln!(
        "generate: seed={seed} body={} ({} frames)",
        a.body.display(),
        body.len()
    );
    let out = if let Some(schedule_path) = &a.style_source.schedule {
        let schedule = read_schedule(schedule_path)?;
        eprintln!(
            "schedule: {} ({} entries)",
            schedule_path.display(),
            schedule.entries().len()
        );
        generate_with_schedule(&model, &body, &schedule)?
    } else if let Some(style_path) = &a.style_source.style {
        let style = read_style(style_path)?;
        eprintln!("style embedding: {}", style_path.display());
        generate_with_embedding(&model, &body, &style.embedding)?
    } else {
        let ref_path = a.style_source.style_ref.as_ref().expect("clap group");
        let style_ref = read_face(ref_path)?;
        eprintln!(
            "style reference: {} ({} frames)",
            ref_path.display(),
            style_ref.len()
        );
        generate_offline(&model, &body, &style_ref, a.mode.into(), seed)?
    };
    save_face(&out, &a.out)?;
    eprintln!("wrote {} facial frames to {}", out.len(), a.out.display());
    Ok(())
}

fn cmd_stream(a: StreamArgs) -> Result<()> {
    let seed = resolve_seed(a.seed)?;
    let model = load_model(&a.model)?;
    let body = read_body(&a.body)?;
    let style_ref = read_face(&a.style_ref)?;
    eprintln!(
        "stream: seed={seed} body={} ({} frames)",
        a.body.display(),
        body.len()
    );
    let mut rng = RngState::new(seed);
    let style = embed_style(&model, &style_ref, a.mode.into(), &mut rng)?;
    let mut session = StreamingSession::new(&model, style, body.fps)?;
    let mut frames = Vec::with_capacity(body.len());
    let mut latencies_ms = Vec::with_capacity(body.len());
    for t in 0..body.len() {
        let start = Instant::now();
        let frame = session.push(body.frame(t))?;
        latencies_ms.push(start.elapsed().as_secs_f64() * 1e3);
        frames.push(frame);
    }
    let out = FacialMotionSequence::new(body.fps, frames)?;
    save_face(&out, &a.out)?;
    let mut sorted = latencies_ms.clone();
    sorted.sort_by(|x, y| x.partial_cmp(y).expect("finite latencies"));
    let pick = |q: f64| sorted[((sorted.len() - 1) as f64 * q).round() as usize];
    let mean: f64 = sorted.iter().sum::<f64>() / sorted.len() as f64;
    eprintln!(
        "latency_ms mean={mean:.3} p50={:.3} p95={:.3} max={:.3} frames={}",
        pick(0.5),
        pick(0.95),
        sorted.last().unwrap(),
        sorted.len()
    );
    eprintln!("wrote {} facial frames to {}", out.len(), a.out.display());
    Ok(())
}

fn cmd_convert(a: ConvertArgs) -> Result<()> {
    let params = load_converter(&a.converter)?;
    eprintln!("converter: {}", a.converter.display());
    let clip = read_clip(&a.in_flame)?;
    let frames = flame_rows_from_clip(&clip)?;
    eprintln!(
        "input: {} ({} frames, {} dims)",
        a.in_flame.display(),
        frames.len(),
        clip.dims
    );
    let weights = convert_sequence(&params, &frames)?;
    let out = arkit_clip_from_rows(&weights, clip.fps);
    save_clip(&out, &a.out_arkit)?;
    eprintln!(
        "wrote {} ARKit frames (51 channels) to {}",
        weights.len(),
        a.out_arkit.display()
    );
    Ok(())
}

fn read_pair_dir(dir: &Path) -> Result<Vec<(FlameParams103, ArkitWeights51)>> {
    let mut ids = Vec::new();
    let entries =
        std::fs::read_dir(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir.display().to_string(), e))?;
        let name = entry.file_name();
        let name = name.to_string_lossy();
        if let Some(id) = name.strip_suffix(".flame.clip") {
            ids.push(id.to_string());
        }
    }
    ids.sort();
    if ids.is_empty() {
        return Err(Error::invalid(format!(
            "no *.flame.clip files found in {}",
            dir.display()
        )));
    }
    let mut pairs = Vec::new();
    for id in &ids {
        let flame = read_clip(&dir.join(format!("{id}.flame.clip")))?;
        let arkit = read_clip(&dir.join(format!("{id}.arkit.clip")))?;
        let fr = flame_rows_from_clip(&flame)?;
        let ar = b2f_core::convert::arkit_rows_from_clip(&arkit)?;
        if fr.len() != ar.len() {
            return Err(Error::invalid(format!(
                "pair `{id}`: {} flame frames but {} arkit frames",
                fr.len(),
                ar.len()
            )));
        }
        pairs.extend(fr.into_iter().zip(ar));
    }
    Ok(pairs)
}

fn cmd_convert_train(a: ConvertTrainArgs) -> Result<()> {
    let seed = resolve_seed(a.seed)?;
    if !(0.0..1.0).contains(&a.holdout) {
        return Err(Error::invalid(format!(
            "holdout fraction must be in [0, 1), got {}",
            a.holdout
        )));
    }
    let pairs = match (&a.source.pairs, a.source.synthetic) {
        (Some(dir), None) => {
            eprintln!("convert-train: seed={seed} pairs={}", dir.display());
            read_pair_dir(dir)?
        }
        (None, Some(n)) => {
            eprintln!("convert-train: seed={seed} synthetic={n}");
            synthetic_converter_pairs(seed, n)?
        }
        _ => unreachable!("clap group enforces exactly one source"),
    };
    let held = ((pairs.len() as f64) * a.holdout).round() as usize;
    let (train_pairs, holdout_pairs) = pairs.split_at(pairs.len() - held);
    eprintln!(
        "{} training pairs, {} held out; epochs={} batch={} lr={}",
        train_pairs.len(),
        holdout_pairs.len(),
        a.epochs,
        a.batch_size,
        a.learning_rate
    );
    let cfg = ConverterTrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        learning_rate: a.learning_rate,
        seed,
        stop_at_loss: a.stop_at_loss,
        ..ConverterTrainConfig::default()
    };
    let params = train_converter(train_pairs, &cfg, &mut |epoch, loss| {
        if epoch % 10 == 0 || epoch == 1 {
            eprintln!("epoch={epoch} loss={loss:.6}");
        }
    })?;
    if !holdout_pairs.is_empty() {
        let mse = converter_mse(&params, holdout_pairs)?;
        eprintln!("held-out mse={mse:.6}");
    }
    save_converter(&params, &a.out)?;
    eprintln!("wrote converter to {}", a.out.display());
    Ok(())
}

fn collect_face_clips(path: &Path) -> Result<Vec<(String, FacialMotionSequence)>> {
    if path.is_dir() {
        let mut ids = Vec::new();
        let entries =
            std::fs::read_dir(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        for entry in entries {
            let entry = entry.map_err(|e| Error::io(path.display().to_string(), e))?;
            let name = entry.file_name();
            let name = name.to_string_lossy();
            if let Some(id) = name.strip_suffix(".face.clip") {
                ids.push(id.to_string());
            }
        }
        ids.sort();
        if ids.is_empty() {
            return Err(Error::invalid(format!(
                "no *.face.clip files found in {}",
                path.display()
            )));
        }
        ids.into_iter()
            .map(|id| {
                let seq = read_face(&path.join(format!("{id}.face.clip")))?;
                Ok((id, seq))
            })
            .collect()
    } else {
        let id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "clip".to_string());
        Ok(vec![(id, read_face(path)?)])
    }
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    eprintln!("eval: pred={} gt={}", a.pred.display(), a.gt.display());
    let pred = collect_face_clips(&a.pred)?;
    let gt = collect_face_clips(&a.gt)?;
    if pred.len() != gt.len() {
        return Err(Error::invalid(format!(
            "{} predicted clips but {} ground-truth clips",
            pred.len(),
            gt.len()
        )));
    }
    let mut clips = Vec::with_capacity(pred.len());
    for ((pid, p), (gid, g)) in pred.iter().zip(&gt) {
        if pred.len() > 1 && pid != gid {
            return Err(Error::invalid(format!(
                "clip ids do not match: `{pid}` vs `{gid}`"
            )));
        }
        clips.push(ClipEval {
            id: pid.clone(),
            frames: p.len(),
            l2_error: l2_error(p, g)?,
            std_dev_difference: std_dev_difference(p, g)?,
        });
    }
    let report = EvalReport::from_clips(clips)?;
    eprint!("{}", report.render_table());
    if let Some(json_path) = &a.json {
        std::fs::write(json_path, report.to_json()?)
            .map_err(|e| Error::io(json_path.display().to_string(), e))?;
        eprintln!("wrote report to {}", json_path.display());
    }
    Ok(())
}

/// For each clip, pick the first clip (cyclically) with a different style to
/// serve as the style reference.
fn cross_reference<'a>(
    clips: &'a [MotionClip],
    records: &[SyntheticFactorRecord],
) -> Result<Vec<(&'a MotionClip, &'a MotionClip, usize)>> {
    let style_of = |clip: &MotionClip| -> Result<usize> {
        records
            .iter()
            .find(|r| r.clip_id == clip.id)
            .map(|r| r.style_id)
            .ok_or_else(|| Error::invalid(format!("no factor record for clip `{}`", clip.id)))
    };
    let mut out = Vec::with_capacity(clips.len());
    for (i, clip) in clips.iter().enumerate() {
        let own = style_of(clip)?;
        let mut reference = None;
        for j in 1..clips.len() {
            let cand = &clips[(i + j) % clips.len()];
            if style_of(cand)? != own {
                reference = Some((cand, style_of(cand)?));
                break;
            }
        }
        let (r, style) = reference.ok_or_else(|| {
            Error::invalid("cross-style probing needs clips from at least two styles")
        })?;
        out.push((clip, r, style));
    }
    Ok(out)
}

fn cmd_probe(a: ProbeArgs) -> Result<()> {
    let seed = resolve_seed(a.seed)?;
    let model = load_model(&a.model)?;
    let (clips, records) = load_corpus(&a.corpus)?;
    let records = records.ok_or_else(|| {
        Error::invalid("probing needs the corpus's factors.json sidecar")
    })?;
    let n_styles = records.iter().map(|r| r.style_id).max().unwrap_or(0) + 1;
    eprintln!(
        "probe: seed={seed} clips={} styles={n_styles} corpus={}",
        clips.len(),
        a.corpus.display()
    );
    let gt_frames = labeled_gt_frames(&clips, &records)?;
    let probe = train_style_probe(&gt_frames, n_styles, seed)?;
    let gt_acc = probe.accuracy(&gt_frames)?;
    eprintln!("ground-truth frame accuracy: {gt_acc:.4}");

    let mut generated = Vec::new();
    for (clip, reference, requested) in cross_reference(&clips, &records)? {
        let out = generate_offline(&model, &clip.body, &reference.face, StyleMode::Hard, seed)?;
        for f in out.frames() {
            generated.push((f.to_vec(), requested));
        }
    }
    let acc = probe.accuracy(&generated)?;
    eprintln!(
        "cross-style probe accuracy: {acc:.4} (chance {:.4})",
        1.0 / n_styles as f64
    );
    Ok(())
}

fn cmd_style_embed(a: StyleEmbedArgs) -> Result<()> {
    let seed = resolve_seed(a.seed)?;
    let model = load_model(&a.model)?;
    let style_ref = read_face(&a.style_ref)?;
    eprintln!(
        "style embed: seed={seed} ref={} ({} frames)",
        a.style_ref.display(),
        style_ref.len()
    );
    let mode: StyleMode = a.mode.into();
    let mut rng = RngState::new(seed);
    let embedding = embed_style(&model, &style_ref, mode, &mut rng)?;
    save_style(&StyleFile { mode, embedding }, &a.out)?;
    eprintln!("wrote style embedding to {}", a.out.display());
    Ok(())
}

fn cmd_style_interp(a: StyleInterpArgs) -> Result<()> {
    let fa = read_style(&a.a)?;
    let fb = read_style(&a.b)?;
    eprintln!(
        "style interp: a={} b={} alpha={}",
        a.a.display(),
        a.b.display(),
        a.alpha
    );
    let blended = interpolate_styles(&fa.embedding, &fb.embedding, a.alpha)?;
    let mode = if blended.is_hard() { StyleMode::Hard } else { StyleMode::Soft };
    save_style(&StyleFile { mode, embedding: blended }, &a.out)?;
    eprintln!("wrote blended embedding to {}", a.out.display());
    Ok(())
}

fn cmd_style_perturb(a: StylePerturbArgs) -> Result<()> {
    let seed = resolve_seed(a.seed)?;
    let file = read_style(&a.input)?;
    eprintln!("style perturb: seed={seed} in={} n={}", a.input.display(), a.n);
    let mut rng = RngState::new(seed);
    let perturbed = perturb_code(&file.embedding, a.n, &mut rng)?;
    save_style(&StyleFile { mode: StyleMode::Hard, embedding: perturbed }, &a.out)?;
    eprintln!("wrote perturbed embedding to {}", a.out.display());
    Ok(())
}

fn cmd_style_diff(a: StyleDiffArgs) -> Result<()> {
    let fa = read_style(&a.a)?;
    let fb = read_style(&a.b)?;
    let (ea, eb) = (&fa.embedding, &fb.embedding);
    if ea.d() != eb.d() || ea.k() != eb.k() {
        return Err(Error::invalid(format!(
            "cannot diff a {}x{} embedding against a {}x{}",
            ea.d(),
            ea.k(),
            eb.d(),
            eb.k()
        )));
    }
    let k = ea.k();
    let argmax = |block: &[f64]| -> usize {
        block
            .iter()
            .enumerate()
            .max_by(|(_, x), (_, y)| x.partial_cmp(y).expect("finite embedding"))
            .map(|(i, _)| i)
            .expect("k >= 1")
    };
    let mut changed = 0usize;
    for (i, (ba, bb)) in ea
        .values()
        .chunks_exact(k)
        .zip(eb.values().chunks_exact(k))
        .enumerate()
    {
        let (ia, ib) = (argmax(ba), argmax(bb));
        if ia != ib {
            changed += 1;
            eprintln!("block {i}: {ia} -> {ib}");
        }
    }
    eprintln!("blocks_changed={changed} of {}", ea.d());
    Ok(())
}
