use std::f64::consts::TAU;

use crate::error::{Error, Result};
use crate::nn::RngState;

use super::types::{
    BodyMotionSequence, ContentFactor, FacialMotionSequence, MotionClip, SyntheticFactorRecord,
    BODY_DIMS, DEFAULT_FPS, EXPRESSION_DIMS, FACE_DIMS, KEY_JOINTS,
};

/// First expression channel that carries style rather than content.
pub const STYLE_CHANNEL_START: usize = 38;
/// Number of expression channels reserved for style.
pub const STYLE_CHANNEL_COUNT: usize = 12;
/// Number of shared sinusoid factors driving body and facial content.
pub const CONTENT_FACTORS: usize = 6;

/// Frozen random mixing that maps the per-clip content factors onto body and
/// face channels, plus the per-style signatures. Built once per corpus from a
/// forked stream so clips can be regenerated independently of corpus size.
#[derive(Debug, Clone)]
pub struct MixingTables {
    n_styles: usize,
    /// Joint base offsets relative to the pelvis, a rough standing skeleton.
    joint_base: [[f64; 3]; 10],
    /// Position mixing weights: [joint][axis][factor].
    pos_weights: Vec<f64>,
    /// Rotation-angle mixing weights: [joint][{yaw, pitch}][factor].
    rot_weights: Vec<f64>,
    /// Face content mixing: amplitude and phase shift per (channel, factor).
    face_amp: Vec<f64>,
    face_phase: Vec<f64>,
    /// Jaw mixing, same layout over the three jaw channels.
    jaw_amp: Vec<f64>,
    jaw_phase: Vec<f64>,
    /// Per-style slow modulation: frequency in Hz and one phase per channel.
    style_freq: Vec<f64>,
    style_phase: Vec<f64>,
}

impl MixingTables {
    pub fn new(rng: &mut RngState, n_styles: usize) -> Result<Self> {
        if n_styles < 2 {
            return Err(Error::invalid(format!(
                "need at least 2 styles to carry a style signal, got {n_styles}"
            )));
        }
        let joints = KEY_JOINTS.len();
        let joint_base = [
            [0.0, 0.92, 0.0],    // pelvis
            [-0.1, 0.08, 0.0],   // left ankle
            [0.1, 0.08, 0.0],    // right ankle
            [-0.1, 0.02, 0.12],  // left foot
            [0.1, 0.02, 0.12],   // right foot
            [0.0, 1.60, 0.02],   // head
            [-0.35, 1.05, 0.0],  // left elbow
            [0.35, 1.05, 0.0],   // right elbow
            [-0.45, 0.85, 0.15], // left wrist
            [0.45, 0.85, 0.15],  // right wrist
        ];
        let mut draw = |n: usize, lo: f64, hi: f64| -> Vec<f64> {
            (0..n).map(|_| rng.uniform_in(lo, hi)).collect()
        };
        let pos_weights = draw(joints * 3 * CONTENT_FACTORS, -0.15, 0.15);
        let rot_weights = draw(joints * 2 * CONTENT_FACTORS, -0.4, 0.4);
        let content_channels = STYLE_CHANNEL_START;
        let face_amp = draw(content_channels * CONTENT_FACTORS, -0.5, 0.5);
        let face_phase = draw(content_channels * CONTENT_FACTORS, 0.0, TAU);
        let jaw_amp = draw(3 * CONTENT_FACTORS, -0.08, 0.08);
        let jaw_phase = draw(3 * CONTENT_FACTORS, 0.0, TAU);
        let style_freq = draw(n_styles, 0.05, 0.2);
        let style_phase = draw(n_styles * STYLE_CHANNEL_COUNT, 0.0, TAU);
        Ok(Self {
            n_styles,
            joint_base,
            pos_weights,
            rot_weights,
            face_amp,
            face_phase,
            jaw_amp,
            jaw_phase,
            style_freq,
            style_phase,
        })
    }

    /// Constant offset pattern of one style channel: +-0.8, signs taken from
    /// the bits of the style id so patterns are distinct by construction.
    fn style_offset(&self, style_id: usize, channel: usize) -> f64 {
        if (style_id >> (channel % STYLE_CHANNEL_COUNT)) & 1 == 1 {
            0.8
        } else {
            -0.8
        }
    }
}

fn factor_value(f: &ContentFactor, time: f64, extra_phase: f64) -> f64 {
    f.amplitude * (TAU * f.frequency * time + f.phase + extra_phase).sin()
}

fn factor_velocity(f: &ContentFactor, time: f64) -> f64 {
    f.amplitude * TAU * f.frequency * (TAU * f.frequency * time + f.phase).cos()
}

fn rot_y_then_x(yaw: f64, pitch: f64) -> [[f64; 3]; 3] {
    // Columns of RotY(yaw) * RotX(pitch).
    let (sy, cy) = yaw.sin_cos();
    let (sx, cx) = pitch.sin_cos();
    [
        [cy, 0.0, -sy],
        [sy * sx, cx, cy * sx],
        [sy * cx, -sx, cy * cx],
    ]
}

/// Deterministically renders one clip from its content factors and style id.
///
/// Body channels depend only on the content factors; the twelve style
/// expression channels depend only on the style id (constant offset plus a
/// slow sinusoidal modulation); the remaining face channels are fixed linear
/// mixes of the same sinusoids that drive the body. Velocity channels are the
/// analytic derivatives, so the 120-dim layout matches a character-frame
/// capture of the same trajectories.
pub fn synthesize_clip(
    tables: &MixingTables,
    clip_id: &str,
    factors: &[ContentFactor],
    style_id: usize,
    clip_len: usize,
    fps: f64,
) -> Result<MotionClip> {
    if factors.len() != CONTENT_FACTORS {
        return Err(Error::invalid(format!(
            "expected {CONTENT_FACTORS} content factors, got {}",
            factors.len()
        )));
    }
    if style_id >= tables.n_styles {
        return Err(Error::invalid(format!(
            "style id {style_id} out of range for {} styles",
            tables.n_styles
        )));
    }
    let joints = KEY_JOINTS.len();
    let mut body_frames = Vec::with_capacity(clip_len);
    let mut face_frames: Vec<[f64; FACE_DIMS]> = Vec::with_capacity(clip_len);
    for t in 0..clip_len {
        let time = t as f64 / fps;
        let c: Vec<f64> = factors.iter().map(|f| factor_value(f, time, 0.0)).collect();
        let cdot: Vec<f64> = factors.iter().map(|f| factor_velocity(f, time)).collect();

        let mut body = vec![0.0; BODY_DIMS];
        for j in 0..joints {
            let base = j * 12;
            for axis in 0..3 {
                let mut pos = tables.joint_base[j][axis];
                let mut vel = 0.0;
                for k in 0..CONTENT_FACTORS {
                    let w = tables.pos_weights[(j * 3 + axis) * CONTENT_FACTORS + k];
                    pos += w * c[k];
                    vel += w * cdot[k];
                }
                body[base + axis] = pos;
                body[base + 9 + axis] = vel;
            }
            let mut yaw = 0.0;
            let mut pitch = 0.0;
            for k in 0..CONTENT_FACTORS {
                yaw += tables.rot_weights[(j * 2) * CONTENT_FACTORS + k] * c[k];
                pitch += tables.rot_weights[(j * 2 + 1) * CONTENT_FACTORS + k] * c[k];
            }
            let r = rot_y_then_x(yaw, pitch);
            body[base + 3..base + 6].copy_from_slice(&r[0]);
            body[base + 6..base + 9].copy_from_slice(&r[1]);
        }
        body_frames.push(body);

        let mut face = [0.0; FACE_DIMS];
        for (d, slot) in face.iter_mut().enumerate().take(STYLE_CHANNEL_START) {
            let mut v = 0.0;
            for (k, f) in factors.iter().enumerate() {
                let idx = d * CONTENT_FACTORS + k;
                v += tables.face_amp[idx] * factor_value(f, time, tables.face_phase[idx]);
            }
            *slot = v;
        }
        for ch in 0..STYLE_CHANNEL_COUNT {
            let phase = tables.style_phase[style_id * STYLE_CHANNEL_COUNT + ch];
            face[STYLE_CHANNEL_START + ch] = tables.style_offset(style_id, ch)
                + 0.2 * (TAU * tables.style_freq[style_id] * time + phase).sin();
        }
        for d in 0..3 {
            let mut v = 0.0;
            for (k, f) in factors.iter().enumerate() {
                let idx = d * CONTENT_FACTORS + k;
                v += tables.jaw_amp[idx] * factor_value(f, time, tables.jaw_phase[idx]);
            }
            face[EXPRESSION_DIMS + d] = v;
        }
        face_frames.push(face);
    }
    MotionClip::new(
        clip_id.to_string(),
        BodyMotionSequence::new(fps, BODY_DIMS, body_frames)?,
        FacialMotionSequence::new(fps, face_frames)?,
    )
}

/// Generates a deterministic corpus: clip `i` gets factors from its own
/// forked stream (stable under changes to `n_clips`) and style `i % n_styles`.
pub fn generate_synthetic_corpus(
    seed: u64,
    n_clips: usize,
    n_styles: usize,
    clip_len: usize,
) -> Result<(Vec<MotionClip>, Vec<SyntheticFactorRecord>)> {
    if n_clips == 0 {
        return Err(Error::invalid("corpus needs at least one clip"));
    }
    if clip_len < super::types::SEGMENT_LEN {
        return Err(Error::invalid(format!(
            "clip_len {clip_len} is shorter than one {}-frame segment",
            super::types::SEGMENT_LEN
        )));
    }
    let mut master = RngState::new(seed);
    let mut table_rng = master.fork(0);
    let tables = MixingTables::new(&mut table_rng, n_styles)?;
    let mut clips = Vec::with_capacity(n_clips);
    let mut records = Vec::with_capacity(n_clips);
    for i in 0..n_clips {
        let mut rng = master.fork(i as u64 + 1);
        let factors: Vec<ContentFactor> = (0..CONTENT_FACTORS)
            .map(|_| ContentFactor {
                frequency: rng.uniform_in(0.4, 1.8),
                phase: rng.uniform_in(0.0, TAU),
                amplitude: rng.uniform_in(0.6, 1.4),
            })
            .collect();
        let style_id = i % n_styles;
        let clip_id = format!("clip_{i:04}");
        clips.push(synthesize_clip(
            &tables,
            &clip_id,
            &factors,
            style_id,
            clip_len,
            DEFAULT_FPS,
        )?);
        records.push(SyntheticFactorRecord {
            clip_id,
            style_id,
            content: factors,
        });
    }
    Ok((clips, records))
}
