use crate::error::{Error, Result};
use crate::nn::RngState;

use super::types::{
    BatchId, BatchItem, FacialMotionSequence, MotionClip, MotionSegment, TrainingBatch,
    EXPRESSION_DIMS, EXPRESSION_RANGE, SAMPLE_LEN_MAX, SAMPLE_LEN_MIN, SEGMENT_LEN,
    SEGMENT_STRIDE,
};

/// Cut every clip into 180-frame windows with stride 120 (60-frame overlap).
/// Window starts are 0, 120, 240, ... while a full window fits; clips shorter
/// than one window are dropped.
pub fn segment_clips(clips: &[MotionClip]) -> Result<Vec<MotionSegment>> {
    let mut segments = Vec::new();
    for clip in clips {
        if clip.body.len() != clip.face.len() {
            return Err(Error::invalid(format!(
                "clip `{}`: body has {} frames but face has {}",
                clip.id,
                clip.body.len(),
                clip.face.len()
            )));
        }
        if clip.len() < SEGMENT_LEN {
            continue;
        }
        let mut start = 0;
        while start + SEGMENT_LEN <= clip.len() {
            segments.push(MotionSegment::new(
                clip.id.clone(),
                start,
                clip.body.slice(start, SEGMENT_LEN)?,
                clip.face.slice(start, SEGMENT_LEN)?,
            )?);
            start += SEGMENT_STRIDE;
        }
    }
    Ok(segments)
}

/// Draw a training batch: one shared window length T ~ uniform [60, 90] for
/// the whole batch, then per item a segment (with replacement) and a start
/// offset ~ uniform [0, 180 - T]. Body, face, and style reference are cut
/// from the same segment at the same offset (U = T); the style reference is
/// the face cut itself.
pub fn sample_batch(
    segments: &[MotionSegment],
    n: usize,
    id: BatchId,
    rng: &mut RngState,
) -> Result<TrainingBatch> {
    if segments.is_empty() {
        return Err(Error::invalid("sample_batch: no segments to sample from"));
    }
    if n == 0 {
        return Err(Error::invalid("sample_batch: batch size must be positive"));
    }
    let t_len = rng.int_in(SAMPLE_LEN_MIN, SAMPLE_LEN_MAX);
    let mut items = Vec::with_capacity(n);
    for _ in 0..n {
        let seg = &segments[rng.int_in(0, segments.len() - 1)];
        let offset = rng.int_in(0, SEGMENT_LEN - t_len);
        let face = seg.face.slice(offset, t_len)?;
        items.push(BatchItem {
            clip_id: seg.clip_id.clone(),
            segment_start: seg.start,
            offset,
            body: seg.body.slice(offset, t_len)?,
            style_ref: face.clone(),
            face,
        });
    }
    Ok(TrainingBatch { id, t_len, items })
}

/// Clamp expression dims to [-5, 5]; jaw dims pass through.
pub fn clip_expressions(f: &FacialMotionSequence) -> FacialMotionSequence {
    let mut out = f.clone();
    for frame in out.frames_mut() {
        for v in frame.iter_mut().take(EXPRESSION_DIMS) {
            *v = v.clamp(-EXPRESSION_RANGE, EXPRESSION_RANGE);
        }
    }
    out
}
