//! Quantitative evaluation: the two blendshape-space error metrics, a
//! deliberately weak linear style probe for checking that generated motion
//! carries the requested style, and the body/face embedding alignment score.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::B2fModel;
use crate::motion::{
    BodyMotionSequence, FacialMotionSequence, MotionClip, SyntheticFactorRecord, FACE_DIMS,
};
use crate::nn::layers::{Linear, ParamModule};
use crate::nn::{Graph, RngState, Tensor};
use crate::trainer::{AdamW, OptimizerState};

/// Mean over frames of the Euclidean norm of the 53-dim per-frame
/// difference between prediction and ground truth.
pub fn l2_error(pred: &FacialMotionSequence, gt: &FacialMotionSequence) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::invalid(format!(
            "l2_error needs equal lengths, got {} and {}",
            pred.len(),
            gt.len()
        )));
    }
    if pred.len() == 0 {
        return Err(Error::invalid("l2_error needs at least one frame"));
    }
    let total: f64 = pred
        .frames()
        .iter()
        .zip(gt.frames())
        .map(|(p, g)| {
            p.iter()
                .zip(g)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        })
        .sum();
    Ok(total / pred.len() as f64)
}

fn population_std(values: impl ExactSizeIterator<Item = f64> + Clone) -> f64 {
    let n = values.len() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    var.sqrt()
}

/// Mean over the 53 dims of the absolute difference between the two
/// sequences' temporal standard deviations (population convention, divisor
/// T). Each side's std is over its own time axis, so lengths may differ.
pub fn std_dev_difference(pred: &FacialMotionSequence, gt: &FacialMotionSequence) -> Result<f64> {
    if pred.len() < 2 || gt.len() < 2 {
        return Err(Error::invalid(format!(
            "std_dev_difference needs at least two frames on each side, got {} and {}",
            pred.len(),
            gt.len()
        )));
    }
    let mut total = 0.0;
    for d in 0..FACE_DIMS {
        let sp = population_std(pred.frames().iter().map(move |f| f[d]));
        let sg = population_std(gt.frames().iter().map(move |f| f[d]));
        total += (sp - sg).abs();
    }
    Ok(total / FACE_DIMS as f64)
}

/// Mean per-frame cosine between the body content embeddings of `body` and
/// the facial content embeddings of `face`. In [-1, 1]; 1 means the two
/// encoders agree frame for frame.
pub fn alignment_score(
    model: &B2fModel,
    body: &BodyMotionSequence,
    face: &FacialMotionSequence,
) -> Result<f64> {
    if body.len() != face.len() {
        return Err(Error::invalid(format!(
            "alignment_score needs a synchronized pair, got {} and {} frames",
            body.len(),
            face.len()
        )));
    }
    if body.len() == 0 {
        return Err(Error::invalid("alignment_score needs at least one frame"));
    }
    let eb = model.encode_body(body)?;
    let ef = model.encode_face(face)?;
    let cols = eb.shape[1];
    let mut total = 0.0;
    for t in 0..body.len() {
        let a = &eb.data[t * cols..(t + 1) * cols];
        let b = &ef.data[t * cols..(t + 1) * cols];
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        total += dot / (na * nb).max(1e-12);
    }
    Ok(total / body.len() as f64)
}

// ---------------------------------------------------------------------------
// Style probe.

/// A single linear layer from facial frames to style logits. Kept
/// deliberately weak so its accuracy reflects how plainly the frames carry
/// the style, not the probe's capacity.
#[derive(Debug, Clone)]
pub struct StyleProbe {
    pub lin: Linear,
    pub n_styles: usize,
}

impl StyleProbe {
    pub fn predict(&self, frame: &[f64]) -> Result<usize> {
        if frame.len() != FACE_DIMS {
            return Err(Error::invalid(format!(
                "probe input needs {FACE_DIMS} dims, got {}",
                frame.len()
            )));
        }
        let cols = self.n_styles;
        let mut logits = self.lin.b.data.clone();
        for (i, &x) in frame.iter().enumerate() {
            for (l, &w) in logits.iter_mut().zip(&self.lin.w.data[i * cols..(i + 1) * cols]) {
                *l += x * w;
            }
        }
        let best = logits
            .iter()
            .enumerate()
            .max_by(|(_, a), (_, b)| a.partial_cmp(b).expect("finite logits"))
            .map(|(i, _)| i)
            .expect("n_styles >= 2");
        Ok(best)
    }

    /// Fraction of frames whose predicted style matches the label.
    pub fn accuracy(&self, frames: &[(Vec<f64>, usize)]) -> Result<f64> {
        if frames.is_empty() {
            return Err(Error::invalid("accuracy needs at least one frame"));
        }
        let mut hits = 0usize;
        for (frame, label) in frames {
            if self.predict(frame)? == *label {
                hits += 1;
            }
        }
        Ok(hits as f64 / frames.len() as f64)
    }
}

/// Pair every ground-truth facial frame with its clip's style id.
pub fn labeled_gt_frames(
    clips: &[MotionClip],
    records: &[SyntheticFactorRecord],
) -> Result<Vec<(Vec<f64>, usize)>> {
    let mut frames = Vec::new();
    for clip in clips {
        let record = records
            .iter()
            .find(|r| r.clip_id == clip.id)
            .ok_or_else(|| {
                Error::invalid(format!("no factor record for clip `{}`", clip.id))
            })?;
        for f in clip.face.frames() {
            frames.push((f.to_vec(), record.style_id));
        }
    }
    Ok(frames)
}

/// Train the probe on labeled frames: full-batch cross entropy under a
/// fixed seed, enough steps to converge on linearly separable data.
pub fn train_style_probe(
    frames: &[(Vec<f64>, usize)],
    n_styles: usize,
    seed: u64,
) -> Result<StyleProbe> {
    if n_styles < 2 {
        return Err(Error::invalid(format!(
            "a style probe needs at least two styles, got {n_styles}"
        )));
    }
    if frames.is_empty() {
        return Err(Error::invalid("probe training needs at least one frame"));
    }
    let mut data = Vec::with_capacity(frames.len() * FACE_DIMS);
    let mut targets = Vec::with_capacity(frames.len());
    for (frame, label) in frames {
        if frame.len() != FACE_DIMS {
            return Err(Error::invalid(format!(
                "probe input needs {FACE_DIMS} dims, got {}",
                frame.len()
            )));
        }
        if *label >= n_styles {
            return Err(Error::invalid(format!(
                "style label {label} out of range for {n_styles} styles"
            )));
        }
        data.extend_from_slice(frame);
        targets.push(*label);
    }
    let x = Tensor { shape: vec![frames.len(), FACE_DIMS], data };

    let mut rng = RngState::new(seed);
    let mut probe = StyleProbe { lin: Linear::new(&mut rng, FACE_DIMS, n_styles), n_styles };
    let adam = AdamW {
        learning_rate: 0.05,
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
        weight_decay: 0.0,
    };
    let mut state = OptimizerState::new();
    for _ in 0..300 {
        let mut g = Graph::training();
        let xv = g.constant(x.clone());
        let logits = probe.lin.forward(&mut g, "probe", xv)?;
        let loss = g.cross_entropy_rows(logits, &targets)?;
        g.backward(loss)?;
        let grads = g.param_grads();
        adam.apply_visit(&mut |f| probe.lin.visit_mut("probe", f), &mut state, &grads)?;
    }
    Ok(probe)
}

// ---------------------------------------------------------------------------
// Reports.

/// Per-clip metric values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipEval {
    pub id: String,
    pub frames: usize,
    pub l2_error: f64,
    pub std_dev_difference: f64,
}

/// Everything one evaluation run produced. Aggregates are unweighted means
/// over clips, so a short clip counts as much as a long one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub clips: Vec<ClipEval>,
    pub clip_count: usize,
    pub frame_count: usize,
    pub mean_l2_error: f64,
    pub mean_std_dev_difference: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub style_probe_accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub alignment_score: Option<f64>,
}

impl EvalReport {
    pub fn from_clips(clips: Vec<ClipEval>) -> Result<EvalReport> {
        if clips.is_empty() {
            return Err(Error::invalid("a report needs at least one clip"));
        }
        let n = clips.len() as f64;
        let mean_l2 = clips.iter().map(|c| c.l2_error).sum::<f64>() / n;
        let mean_std = clips.iter().map(|c| c.std_dev_difference).sum::<f64>() / n;
        Ok(EvalReport {
            clip_count: clips.len(),
            frame_count: clips.iter().map(|c| c.frames).sum(),
            mean_l2_error: mean_l2,
            mean_std_dev_difference: mean_std,
            style_probe_accuracy: None,
            alignment_score: None,
            clips,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map_err(|e| Error::invalid(format!("report encode failed: {e}")))
    }

    pub fn from_json(text: &str) -> Result<EvalReport> {
        serde_json::from_str(text).map_err(|e| Error::parse("eval report", 0, e.to_string()))
    }

    /// Fixed-width table: one row per clip, then the aggregate row.
    pub fn render_table(&self) -> String {
        let id_width = self
            .clips
            .iter()
            .map(|c| c.id.len())
            .chain(["clip".len(), "mean".len()].into_iter())
            .max()
            .unwrap_or(4);
        let mut out = String::new();
        out.push_str(&format!(
            "{:<id_width$}  {:>8}  {:>12}  {:>12}\n",
            "clip", "frames", "l2_error", "std_dev_diff"
        ));
        for c in &self.clips {
            out.push_str(&format!(
                "{:<id_width$}  {:>8}  {:>12.6}  {:>12.6}\n",
                c.id, c.frames, c.l2_error, c.std_dev_difference
            ));
        }
        out.push_str(&format!(
            "{:<id_width$}  {:>8}  {:>12.6}  {:>12.6}\n",
            "mean", self.frame_count, self.mean_l2_error, self.mean_std_dev_difference
        ));
        if let Some(acc) = self.style_probe_accuracy {
            out.push_str(&format!("style probe accuracy: {acc:.4}\n"));
        }
        if let Some(a) = self.alignment_score {
            out.push_str(&format!("alignment score: {a:.4}\n"));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::motion::generate_synthetic_corpus;

    fn face_from_rows(rows: Vec<[f64; FACE_DIMS]>) -> FacialMotionSequence {
        FacialMotionSequence::new(30.0, rows).unwrap()
    }

    fn random_face(rng: &mut RngState, t: usize) -> FacialMotionSequence {
        face_from_rows(
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
    }

    #[test]
    fn l2_error_handles_the_hand_cases() {
        let mut rng = RngState::new(1);
        let a = random_face(&mut rng, 5);
        assert_eq!(l2_error(&a, &a).unwrap(), 0.0);

        let mut one = [0.0; FACE_DIMS];
        one[7] = 0.5;
        let pred = face_from_rows(vec![one]);
        let gt = face_from_rows(vec![[0.0; FACE_DIMS]]);
        assert_eq!(l2_error(&pred, &gt).unwrap(), 0.5);

        let b = random_face(&mut rng, 4);
        assert!(l2_error(&a, &b).is_err());
        let empty = face_from_rows(vec![]);
        assert!(l2_error(&empty, &empty).is_err());
    }

    #[test]
    fn l2_error_matches_a_brute_force_oracle() {
        let mut rng = RngState::new(9);
        for _ in 0..100 {
            let t = 2 + rng.int_in(0, 8);
            let pred = random_face(&mut rng, t);
            let gt = random_face(&mut rng, t);
            // Independent re-derivation, written as plainly as possible.
            let mut acc = 0.0;
            for i in 0..t {
                let mut sq = 0.0;
                for d in 0..FACE_DIMS {
                    let diff = pred.frame(i)[d] - gt.frame(i)[d];
                    sq += diff * diff;
                }
                acc += sq.sqrt();
            }
            let oracle = acc / t as f64;
            let got = l2_error(&pred, &gt).unwrap();
            assert!((got - oracle).abs() < 1e-12, "{got} vs {oracle}");
        }
    }

    #[test]
    fn std_dev_difference_handles_the_hand_cases() {
        let mut rng = RngState::new(2);
        let a = random_face(&mut rng, 6);
        assert_eq!(std_dev_difference(&a, &a).unwrap(), 0.0);

        // Constant sequences: both stds are zero regardless of the values.
        let c1 = face_from_rows(vec![[0.7; FACE_DIMS]; 4]);
        let c2 = face_from_rows(vec![[-2.0; FACE_DIMS]; 9]);
        assert_eq!(std_dev_difference(&c1, &c2).unwrap(), 0.0);

        // One gt dim oscillates +-1 (population std exactly 1); pred constant.
        let mut hi = [0.0; FACE_DIMS];
        let mut lo = [0.0; FACE_DIMS];
        hi[3] = 1.0;
        lo[3] = -1.0;
        let gt = face_from_rows(vec![hi, lo, hi, lo]);
        let pred = face_from_rows(vec![[0.0; FACE_DIMS]; 4]);
        let got = std_dev_difference(&pred, &gt).unwrap();
        assert!((got - 1.0 / 53.0).abs() < 1e-12);
        assert!((got - 0.01887).abs() < 1e-5);

        let single = face_from_rows(vec![[0.0; FACE_DIMS]]);
        assert!(std_dev_difference(&single, &gt).is_err());
        assert!(std_dev_difference(&gt, &single).is_err());
    }

    #[test]
    fn std_dev_difference_is_symmetric_and_matches_brute_force() {
        let mut rng = RngState::new(3);
        for _ in 0..100 {
            let tp = 2 + rng.int_in(0, 6);
            let tg = 2 + rng.int_in(0, 6);
            let pred = random_face(&mut rng, tp);
            let gt = random_face(&mut rng, tg);
            let got = std_dev_difference(&pred, &gt).unwrap();
            let swapped = std_dev_difference(&gt, &pred).unwrap();
            assert_eq!(got, swapped);
            assert!(got >= 0.0);

            // Brute force: explicit two-pass mean/variance per dimension.
            let std_of = |seq: &FacialMotionSequence, d: usize| {
                let n = seq.len() as f64;
                let mut mean = 0.0;
                for i in 0..seq.len() {
                    mean += seq.frame(i)[d];
                }
                mean /= n;
                let mut var = 0.0;
                for i in 0..seq.len() {
                    let dv = seq.frame(i)[d] - mean;
                    var += dv * dv;
                }
                (var / n).sqrt()
            };
            let mut acc = 0.0;
            for d in 0..FACE_DIMS {
                acc += (std_of(&pred, d) - std_of(&gt, d)).abs();
            }
            let oracle = acc / FACE_DIMS as f64;
            assert!((got - oracle).abs() < 1e-12, "{got} vs {oracle}");
        }
    }

    #[test]
    fn alignment_score_is_one_when_both_encoders_share_parameters() {
        // A model whose body encoder takes 53-dim input can have the face
        // encoder's parameters copied into it; then both embeddings of the
        // same frames coincide and every cosine is exactly 1.
        let cfg = ModelConfig {
            body_dim: FACE_DIMS,
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
        };
        let mut model = B2fModel::new(cfg, &mut RngState::new(4)).unwrap();
        model.body_enc = model.face_enc.clone();

        let mut rng = RngState::new(5);
        let face = random_face(&mut rng, 7);
        let body = BodyMotionSequence::new(
            30.0,
            FACE_DIMS,
            face.frames().iter().map(|f| f.to_vec()).collect(),
        )
        .unwrap();
        let score = alignment_score(&model, &body, &face).unwrap();
        assert!((score - 1.0).abs() < 1e-12, "score {score}");

        // Mismatched lengths are rejected; a random model stays in range.
        let short = random_face(&mut rng, 3);
        assert!(alignment_score(&model, &body, &short).is_err());
        let other = random_face(&mut rng, 7);
        let s = alignment_score(&model, &body, &other).unwrap();
        assert!((-1.0..=1.0).contains(&s));
    }

    #[test]
    fn probe_reaches_full_accuracy_on_the_synthetic_corpus() {
        let (clips, records) = generate_synthetic_corpus(11, 8, 4, 180).unwrap();
        let frames = labeled_gt_frames(&clips, &records).unwrap();
        let probe = train_style_probe(&frames, 4, 12).unwrap();
        let acc = probe.accuracy(&frames).unwrap();
        assert_eq!(acc, 1.0, "ground-truth frames must separate perfectly");
    }

    #[test]
    fn probe_is_at_chance_on_unstructured_frames() {
        let (clips, records) = generate_synthetic_corpus(13, 8, 4, 180).unwrap();
        let frames = labeled_gt_frames(&clips, &records).unwrap();
        let probe = train_style_probe(&frames, 4, 14).unwrap();

        let mut rng = RngState::new(15);
        let noise: Vec<(Vec<f64>, usize)> = (0..2000)
            .map(|i| {
                let frame: Vec<f64> =
                    (0..FACE_DIMS).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
                (frame, i % 4)
            })
            .collect();
        let acc = probe.accuracy(&noise).unwrap();
        assert!(
            (acc - 0.25).abs() < 0.1,
            "random frames should score near chance, got {acc}"
        );
    }

    #[test]
    fn probe_rejects_degenerate_setups() {
        let frames = vec![(vec![0.0; FACE_DIMS], 0), (vec![1.0; FACE_DIMS], 1)];
        assert!(train_style_probe(&frames, 1, 0).is_err());
        assert!(train_style_probe(&[], 2, 0).is_err());
        let bad_label = vec![(vec![0.0; FACE_DIMS], 5)];
        assert!(train_style_probe(&bad_label, 2, 0).is_err());
        let bad_width = vec![(vec![0.0; 10], 0)];
        assert!(train_style_probe(&bad_width, 2, 0).is_err());
    }

    #[test]
    fn report_aggregates_with_equal_clip_weight() {
        let clips = vec![
            ClipEval { id: "a".into(), frames: 10, l2_error: 1.0, std_dev_difference: 0.2 },
            ClipEval { id: "b".into(), frames: 1000, l2_error: 2.0, std_dev_difference: 0.4 },
        ];
        let report = EvalReport::from_clips(clips).unwrap();
        assert_eq!(report.clip_count, 2);
        assert_eq!(report.frame_count, 1010);
        assert!((report.mean_l2_error - 1.5).abs() < 1e-15);
        assert!((report.mean_std_dev_difference - 0.3).abs() < 1e-15);
        assert!(EvalReport::from_clips(vec![]).is_err());
    }

    #[test]
    fn report_round_trips_through_json_and_renders_a_table() {
        let mut report = EvalReport::from_clips(vec![ClipEval {
            id: "clip-000".into(),
            frames: 180,
            l2_error: 0.125,
            std_dev_difference: 0.0625,
        }])
        .unwrap();
        report.style_probe_accuracy = Some(0.9375);
        report.alignment_score = Some(0.875);
        let json = report.to_json().unwrap();
        let back = EvalReport::from_json(&json).unwrap();
        assert_eq!(back, report);

        let table = report.render_table();
        assert!(table.contains("clip-000"));
        assert!(table.contains("l2_error"));
        assert!(table.contains("mean"));
        assert!(table.contains("0.9375"));
        let header_cols = table.lines().next().unwrap().len();
        let first_row = table.lines().nth(1).unwrap().len();
        assert_eq!(header_cols, first_row, "columns must stay aligned");
    }
}
