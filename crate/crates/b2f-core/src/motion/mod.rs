//! Motion data: sequence types, the on-disk clip format, character-frame
//! normalization, segmentation and batch sampling, and a synthetic corpus
//! generator for end-to-end runs without capture data.

pub mod charframe;
pub mod clipfile;
pub mod corpus;
pub mod segment;
pub mod synthetic;
pub mod types;

pub use charframe::{character_frame_sequence, to_character_frame, RawBodyFrame, RawBodySequence, RawJoint};
pub use clipfile::{
    body_from_clip, body_to_clip, face_from_clip, face_to_clip, parse_clip, read_body, read_clip,
    read_face, render_clip, save_body, save_clip, save_face, ClipFile, ClipKind,
};
pub use corpus::{load_corpus, save_corpus};
pub use segment::{clip_expressions, sample_batch, segment_clips};
pub use synthetic::{
    generate_synthetic_corpus, synthesize_clip, MixingTables, CONTENT_FACTORS,
    STYLE_CHANNEL_COUNT, STYLE_CHANNEL_START,
};
pub use types::{
    BatchId, BatchItem, BodyContentFrame, BodyMotionSequence, ContentFactor, FacialMotionSequence,
    JointState, MotionClip, MotionSegment, SyntheticFactorRecord, TrainingBatch, BODY_DIMS,
    DEFAULT_FPS, EXPRESSION_DIMS, EXPRESSION_RANGE, FACE_DIMS, JAW_DIMS, JOINT_DIMS, KEY_JOINTS,
    SAMPLE_LEN_MAX, SAMPLE_LEN_MIN, SEGMENT_LEN, SEGMENT_STRIDE,
};
