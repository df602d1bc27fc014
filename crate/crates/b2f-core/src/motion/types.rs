use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Tensor;

pub const DEFAULT_FPS: f64 = 30.0;

/// Facial frames: 50 FLAME expression coefficients then 3 jaw pose values.
pub const EXPRESSION_DIMS: usize = 50;
pub const JAW_DIMS: usize = 3;
pub const FACE_DIMS: usize = EXPRESSION_DIMS + JAW_DIMS;

/// Expression coefficients are clamped to this range at ingestion.
pub const EXPRESSION_RANGE: f64 = 5.0;

/// Key joints of the body representation, in fixed order.
pub const KEY_JOINTS: [&str; 10] = [
    "pelvis",
    "left_ankle",
    "right_ankle",
    "left_foot",
    "right_foot",
    "head",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
];

/// Per joint: position (3) + continuous 6D rotation (6) + linear velocity (3).
pub const JOINT_DIMS: usize = 12;
pub const BODY_DIMS: usize = KEY_JOINTS.len() * JOINT_DIMS;

pub const SEGMENT_LEN: usize = 180;
pub const SEGMENT_STRIDE: usize = 120;

/// Training windows cut from segments are this long (inclusive bounds).
pub const SAMPLE_LEN_MIN: usize = 60;
pub const SAMPLE_LEN_MAX: usize = 90;

/// Body motion in the character frame, one flat feature row per frame. The
/// width is `dims` for every frame; the canonical layout is
/// [`BODY_DIMS`] = 120 (see [`BodyContentFrame`]) but file data with other
/// widths is representable so encoder input width can stay configurable.
#[derive(Debug, Clone, PartialEq)]
pub struct BodyMotionSequence {
    pub fps: f64,
    dims: usize,
    frames: Vec<Vec<f64>>,
}

impl BodyMotionSequence {
    pub fn new(fps: f64, dims: usize, frames: Vec<Vec<f64>>) -> Result<BodyMotionSequence> {
        if !(fps > 0.0) {
            return Err(Error::invalid(format!("fps must be positive, got {fps}")));
        }
        if dims == 0 {
            return Err(Error::invalid("body frame width must be positive"));
        }
        for (i, f) in frames.iter().enumerate() {
            if f.len() != dims {
                return Err(Error::shape(
                    "BodyMotionSequence::new",
                    format!("frame 0 has {dims} dims but frame {i} has {}", f.len()),
                ));
            }
        }
        Ok(BodyMotionSequence { fps, dims, frames })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn frame(&self, i: usize) -> &[f64] {
        &self.frames[i]
    }

    pub fn frames(&self) -> &[Vec<f64>] {
        &self.frames
    }

    pub fn slice(&self, start: usize, len: usize) -> Result<BodyMotionSequence> {
        if start + len > self.frames.len() {
            return Err(Error::invalid(format!(
                "slice {start}..{} out of range for {} frames",
                start + len,
                self.frames.len()
            )));
        }
        Ok(BodyMotionSequence {
            fps: self.fps,
            dims: self.dims,
            frames: self.frames[start..start + len].to_vec(),
        })
    }

    /// [T, dims] tensor view for feeding the encoders.
    pub fn to_tensor(&self) -> Tensor {
        let mut data = Vec::with_capacity(self.frames.len() * self.dims);
        for f in &self.frames {
            data.extend_from_slice(f);
        }
        Tensor {
            shape: vec![self.frames.len(), self.dims],
            data,
        }
    }
}

/// Facial motion: 53 values per frame (50 expression + 3 jaw).
#[derive(Debug, Clone, PartialEq)]
pub struct FacialMotionSequence {
    pub fps: f64,
    frames: Vec<[f64; FACE_DIMS]>,
}

impl FacialMotionSequence {
    pub fn new(fps: f64, frames: Vec<[f64; FACE_DIMS]>) -> Result<FacialMotionSequence> {
        if !(fps > 0.0) {
            return Err(Error::invalid(format!("fps must be positive, got {fps}")));
        }
        Ok(FacialMotionSequence { fps, frames })
    }

    pub fn from_rows(fps: f64, rows: &[Vec<f64>]) -> Result<FacialMotionSequence> {
        let mut frames = Vec::with_capacity(rows.len());
        for (i, r) in rows.iter().enumerate() {
            if r.len() != FACE_DIMS {
                return Err(Error::shape(
                    "FacialMotionSequence::from_rows",
                    format!("facial frames have {FACE_DIMS} dims but frame {i} has {}", r.len()),
                ));
            }
            let mut f = [0.0; FACE_DIMS];
            f.copy_from_slice(r);
            frames.push(f);
        }
        FacialMotionSequence::new(fps, frames)
    }

    /// Build from a [T, 53] tensor (generator output).
    pub fn from_tensor(fps: f64, t: &Tensor) -> Result<FacialMotionSequence> {
        let rows = t.expect_cols("FacialMotionSequence::from_tensor", FACE_DIMS)?;
        let mut frames = Vec::with_capacity(rows);
        for i in 0..rows {
            let mut f = [0.0; FACE_DIMS];
            f.copy_from_slice(t.row(i));
            frames.push(f);
        }
        FacialMotionSequence::new(fps, frames)
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frame(&self, i: usize) -> &[f64; FACE_DIMS] {
        &self.frames[i]
    }

    pub fn frames(&self) -> &[[f64; FACE_DIMS]] {
        &self.frames
    }

    pub fn frames_mut(&mut self) -> &mut [[f64; FACE_DIMS]] {
        &mut self.frames
    }

    pub fn slice(&self, start: usize, len: usize) -> Result<FacialMotionSequence> {
        if start + len > self.frames.len() {
            return Err(Error::invalid(format!(
                "slice {start}..{} out of range for {} frames",
                start + len,
                self.frames.len()
            )));
        }
        Ok(FacialMotionSequence {
            fps: self.fps,
            frames: self.frames[start..start + len].to_vec(),
        })
    }

    pub fn to_tensor(&self) -> Tensor {
        let mut data = Vec::with_capacity(self.frames.len() * FACE_DIMS);
        for f in &self.frames {
            data.extend_from_slice(f);
        }
        Tensor {
            shape: vec![self.frames.len(), FACE_DIMS],
            data,
        }
    }
}

/// One joint's state in the character frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointState {
    pub position: [f64; 3],
    /// First two columns of the joint's rotation matrix, column-major:
    /// [x0, x1, x2, y0, y1, y2].
    pub rotation6d: [f64; 6],
    pub velocity: [f64; 3],
}

/// Structured view of one canonical 120-dim body frame (10 key joints).
#[derive(Debug, Clone, PartialEq)]
pub struct BodyContentFrame {
    pub joints: [JointState; 10],
}

impl BodyContentFrame {
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(BODY_DIMS);
        for j in &self.joints {
            out.extend_from_slice(&j.position);
            out.extend_from_slice(&j.rotation6d);
            out.extend_from_slice(&j.velocity);
        }
        out
    }

    pub fn from_flat(row: &[f64]) -> Result<BodyContentFrame> {
        if row.len() != BODY_DIMS {
            return Err(Error::shape(
                "BodyContentFrame::from_flat",
                format!("expected {BODY_DIMS} values, got {}", row.len()),
            ));
        }
        let mut joints = [JointState {
            position: [0.0; 3],
            rotation6d: [0.0; 6],
            velocity: [0.0; 3],
        }; 10];
        for (j, js) in joints.iter_mut().enumerate() {
            let base = j * JOINT_DIMS;
            js.position.copy_from_slice(&row[base..base + 3]);
            js.rotation6d.copy_from_slice(&row[base + 3..base + 9]);
            js.velocity.copy_from_slice(&row[base + 9..base + 12]);
        }
        Ok(BodyContentFrame { joints })
    }
}

/// A synchronized body+face recording, the unit the corpus is stored in.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionClip {
    pub id: String,
    pub body: BodyMotionSequence,
    pub face: FacialMotionSequence,
}

impl MotionClip {
    pub fn new(id: String, body: BodyMotionSequence, face: FacialMotionSequence) -> Result<MotionClip> {
        if body.len() != face.len() {
            return Err(Error::invalid(format!(
                "clip `{id}`: body has {} frames but face has {}",
                body.len(),
                face.len()
            )));
        }
        if body.fps != face.fps {
            return Err(Error::invalid(format!(
                "clip `{id}`: body fps {} != face fps {}",
                body.fps, face.fps
            )));
        }
        Ok(MotionClip { id, body, face })
    }

    pub fn len(&self) -> usize {
        self.body.len()
    }

    pub fn is_empty(&self) -> bool {
        self.body.is_empty()
    }
}

/// A 180-frame synchronized training window cut from one clip.
#[derive(Debug, Clone)]
pub struct MotionSegment {
    pub clip_id: String,
    pub start: usize,
    pub body: BodyMotionSequence,
    pub face: FacialMotionSequence,
}

impl MotionSegment {
    pub fn new(
        clip_id: String,
        start: usize,
        body: BodyMotionSequence,
        face: FacialMotionSequence,
    ) -> Result<MotionSegment> {
        if body.len() != SEGMENT_LEN || face.len() != SEGMENT_LEN {
            return Err(Error::invalid(format!(
                "segment must be {SEGMENT_LEN} frames, got body {} / face {}",
                body.len(),
                face.len()
            )));
        }
        Ok(MotionSegment {
            clip_id,
            start,
            body,
            face,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BatchId {
    A,
    B,
}

impl std::fmt::Display for BatchId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BatchId::A => write!(f, "A"),
            BatchId::B => write!(f, "B"),
        }
    }
}

/// One training triple with provenance of the cut it came from.
#[derive(Debug, Clone)]
pub struct BatchItem {
    pub clip_id: String,
    pub segment_start: usize,
    pub offset: usize,
    pub body: BodyMotionSequence,
    pub face: FacialMotionSequence,
    /// Style reference; during training this is the same cut as `face`.
    pub style_ref: FacialMotionSequence,
}

#[derive(Debug, Clone)]
pub struct TrainingBatch {
    pub id: BatchId,
    pub t_len: usize,
    pub items: Vec<BatchItem>,
}

/// Ground-truth generation factors of one synthetic clip, stored alongside
/// the corpus so probes can be scored against known style/content.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContentFactor {
    pub frequency: f64,
    pub phase: f64,
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticFactorRecord {
    pub clip_id: String,
    pub style_id: usize,
    pub content: Vec<ContentFactor>,
}
