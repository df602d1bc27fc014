use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

use super::types::{BodyMotionSequence, FacialMotionSequence, FACE_DIMS};

/// Motion clip file: a line-based text format.
///
/// ```text
/// b2f-clip 1
/// kind: face
/// fps: 30
/// dims: 53
/// frames: 2
/// [0.5 -0.25 ... ]
/// [0 0 ... ]
/// ```
///
/// Header keys appear exactly once, in the order written above; `names:` is
/// an optional comma-separated channel name list (used by ARKit weight
/// clips) placed after `frames:`. Every value uses Rust's shortest
/// round-trip float formatting, so write -> read -> write is byte-identical.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipFile {
    pub kind: ClipKind,
    pub fps: f64,
    pub dims: usize,
    pub names: Option<Vec<String>>,
    pub rows: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClipKind {
    Body,
    Face,
    /// 103-dim FLAME parameter vectors (100 expression + 3 jaw).
    Flame,
    /// 51-dim ARKit blendshape weights.
    Arkit,
}

impl ClipKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ClipKind::Body => "body",
            ClipKind::Face => "face",
            ClipKind::Flame => "flame",
            ClipKind::Arkit => "arkit",
        }
    }

    fn from_str(s: &str) -> Option<ClipKind> {
        match s {
            "body" => Some(ClipKind::Body),
            "face" => Some(ClipKind::Face),
            "flame" => Some(ClipKind::Flame),
            "arkit" => Some(ClipKind::Arkit),
            _ => None,
        }
    }
}

const MAGIC: &str = "b2f-clip 1";
const WHAT: &str = "clip file";

pub fn parse_clip(text: &str) -> Result<ClipFile> {
    let mut lines = text.lines().enumerate();
    let (_, first) = lines
        .next()
        .ok_or_else(|| Error::parse(WHAT, 1, "empty file"))?;
    if first != MAGIC {
        return Err(Error::parse(
            WHAT,
            1,
            format!("expected header `{MAGIC}`, got `{first}`"),
        ));
    }

    let mut kind: Option<ClipKind> = None;
    let mut fps: Option<f64> = None;
    let mut dims: Option<usize> = None;
    let mut frame_count: Option<usize> = None;
    let mut names: Option<Vec<String>> = None;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut in_frames = false;

    for (idx, line) in lines {
        let lineno = idx + 1;
        if line.starts_with('[') {
            in_frames = true;
            let inner = line
                .strip_prefix('[')
                .and_then(|l| l.strip_suffix(']'))
                .ok_or_else(|| Error::parse(WHAT, lineno, "frame line must end with `]`"))?;
            let mut row = Vec::new();
            for tok in inner.split_ascii_whitespace() {
                let v: f64 = tok.parse().map_err(|_| {
                    Error::parse(WHAT, lineno, format!("bad number `{tok}`"))
                })?;
                if !v.is_finite() {
                    return Err(Error::parse(WHAT, lineno, format!("non-finite value `{tok}`")));
                }
                row.push(v);
            }
            let d = dims.ok_or_else(|| {
                Error::parse(WHAT, lineno, "frame data before `dims:` header")
            })?;
            if row.len() != d {
                return Err(Error::parse(
                    WHAT,
                    lineno,
                    format!("frame has {} values, header says dims: {d}", row.len()),
                ));
            }
            rows.push(row);
            continue;
        }
        if in_frames {
            return Err(Error::parse(
                WHAT,
                lineno,
                format!("unexpected line after frame data: `{line}`"),
            ));
        }
        let (k, v) = line
            .split_once(':')
            .ok_or_else(|| Error::parse(WHAT, lineno, format!("expected `key: value`, got `{line}`")))?;
        let v = v.trim_start_matches(' ');
        match k {
            "kind" => {
                if kind.is_some() {
                    return Err(Error::parse(WHAT, lineno, "duplicate `kind`"));
                }
                kind = Some(ClipKind::from_str(v).ok_or_else(|| {
                    Error::parse(WHAT, lineno, format!("unknown kind `{v}`"))
                })?);
            }
            "fps" => {
                if fps.is_some() {
                    return Err(Error::parse(WHAT, lineno, "duplicate `fps`"));
                }
                let f: f64 = v
                    .parse()
                    .map_err(|_| Error::parse(WHAT, lineno, format!("bad fps `{v}`")))?;
                if !(f > 0.0) || !f.is_finite() {
                    return Err(Error::parse(WHAT, lineno, format!("fps must be positive, got `{v}`")));
                }
                fps = Some(f);
            }
            "dims" => {
                if dims.is_some() {
                    return Err(Error::parse(WHAT, lineno, "duplicate `dims`"));
                }
                let d: usize = v
                    .parse()
                    .map_err(|_| Error::parse(WHAT, lineno, format!("bad dims `{v}`")))?;
                if d == 0 {
                    return Err(Error::parse(WHAT, lineno, "dims must be positive"));
                }
                dims = Some(d);
            }
            "frames" => {
                if frame_count.is_some() {
                    return Err(Error::parse(WHAT, lineno, "duplicate `frames`"));
                }
                frame_count = Some(
                    v.parse()
                        .map_err(|_| Error::parse(WHAT, lineno, format!("bad frame count `{v}`")))?,
                );
            }
            "names" => {
                if names.is_some() {
                    return Err(Error::parse(WHAT, lineno, "duplicate `names`"));
                }
                let list: Vec<String> = v.split(',').map(|s| s.to_string()).collect();
                for n in &list {
                    if n.is_empty() || !n.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                        return Err(Error::parse(
                            WHAT,
                            lineno,
                            format!("channel name `{n}` must be non-empty [A-Za-z0-9_]"),
                        ));
                    }
                }
                names = Some(list);
            }
            other => {
                return Err(Error::parse(WHAT, lineno, format!("unknown header key `{other}`")));
            }
        }
    }

    let kind = kind.ok_or_else(|| Error::parse(WHAT, 0, "missing `kind:` header"))?;
    let fps = fps.ok_or_else(|| Error::parse(WHAT, 0, "missing `fps:` header"))?;
    let dims = dims.ok_or_else(|| Error::parse(WHAT, 0, "missing `dims:` header"))?;
    let frame_count = frame_count.ok_or_else(|| Error::parse(WHAT, 0, "missing `frames:` header"))?;
    if rows.len() != frame_count {
        return Err(Error::parse(
            WHAT,
            0,
            format!("header says frames: {frame_count} but {} frame lines found", rows.len()),
        ));
    }
    if let Some(n) = &names {
        if n.len() != dims {
            return Err(Error::parse(
                WHAT,
                0,
                format!("{} names for {dims} dims", n.len()),
            ));
        }
    }
    Ok(ClipFile {
        kind,
        fps,
        dims,
        names,
        rows,
    })
}

pub fn render_clip(clip: &ClipFile) -> Result<String> {
    if let Some(n) = &clip.names {
        if n.len() != clip.dims {
            return Err(Error::invalid(format!(
                "clip has {} names for {} dims",
                n.len(),
                clip.dims
            )));
        }
        for name in n {
            if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                return Err(Error::invalid(format!(
                    "channel name `{name}` must be non-empty [A-Za-z0-9_]"
                )));
            }
        }
    }
    let mut out = String::new();
    let _ = writeln!(out, "{MAGIC}");
    let _ = writeln!(out, "kind: {}", clip.kind.as_str());
    let _ = writeln!(out, "fps: {}", clip.fps);
    let _ = writeln!(out, "dims: {}", clip.dims);
    let _ = writeln!(out, "frames: {}", clip.rows.len());
    if let Some(n) = &clip.names {
        let _ = writeln!(out, "names: {}", n.join(","));
    }
    for (i, row) in clip.rows.iter().enumerate() {
        if row.len() != clip.dims {
            return Err(Error::shape(
                "render_clip",
                format!("frame {i} has {} values, clip dims is {}", row.len(), clip.dims),
            ));
        }
        out.push('[');
        for (j, v) in row.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::invalid(format!("frame {i} value {j} is not finite")));
            }
            if j > 0 {
                out.push(' ');
            }
            let _ = write!(out, "{v}");
        }
        out.push_str("]\n");
    }
    Ok(out)
}

pub fn read_clip(path: &Path) -> Result<ClipFile> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    parse_clip(&text)
}

pub fn save_clip(clip: &ClipFile, path: &Path) -> Result<()> {
    let text = render_clip(clip)?;
    std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

// Typed conversions.

pub fn body_from_clip(clip: &ClipFile) -> Result<BodyMotionSequence> {
    if clip.kind != ClipKind::Body {
        return Err(Error::invalid(format!(
            "expected a body clip, got kind `{}`",
            clip.kind.as_str()
        )));
    }
    BodyMotionSequence::new(clip.fps, clip.dims, clip.rows.clone())
}

pub fn body_to_clip(seq: &BodyMotionSequence) -> ClipFile {
    ClipFile {
        kind: ClipKind::Body,
        fps: seq.fps,
        dims: seq.dims(),
        names: None,
        rows: seq.frames().to_vec(),
    }
}

pub fn face_from_clip(clip: &ClipFile) -> Result<FacialMotionSequence> {
    if clip.kind != ClipKind::Face {
        return Err(Error::invalid(format!(
            "expected a face clip, got kind `{}`",
            clip.kind.as_str()
        )));
    }
    if clip.dims != FACE_DIMS {
        return Err(Error::shape(
            "face_from_clip",
            format!("face clips have {FACE_DIMS} dims, file says {}", clip.dims),
        ));
    }
    FacialMotionSequence::from_rows(clip.fps, &clip.rows)
}

pub fn face_to_clip(seq: &FacialMotionSequence) -> ClipFile {
    ClipFile {
        kind: ClipKind::Face,
        fps: seq.fps,
        dims: FACE_DIMS,
        names: None,
        rows: seq.frames().iter().map(|f| f.to_vec()).collect(),
    }
}

pub fn read_body(path: &Path) -> Result<BodyMotionSequence> {
    body_from_clip(&read_clip(path)?)
}

pub fn read_face(path: &Path) -> Result<FacialMotionSequence> {
    face_from_clip(&read_clip(path)?)
}

pub fn save_body(seq: &BodyMotionSequence, path: &Path) -> Result<()> {
    save_clip(&body_to_clip(seq), path)
}

pub fn save_face(seq: &FacialMotionSequence, path: &Path) -> Result<()> {
    save_clip(&face_to_clip(seq), path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_clip() -> ClipFile {
        ClipFile {
            kind: ClipKind::Face,
            fps: 30.0,
            dims: 3,
            names: None,
            rows: vec![
                vec![0.5, -0.25, 1.0 / 3.0],
                vec![0.0, -0.0, 1e-17],
                vec![f64::MIN_POSITIVE, 12345.6789, -2.5],
            ],
        }
    }

    #[test]
    fn write_read_write_is_byte_identical() {
        let clip = sample_clip();
        let once = render_clip(&clip).unwrap();
        let parsed = parse_clip(&once).unwrap();
        let twice = render_clip(&parsed).unwrap();
        assert_eq!(once, twice);
        assert_eq!(parsed, clip);
    }

    #[test]
    fn names_round_trip() {
        let clip = ClipFile {
            kind: ClipKind::Arkit,
            fps: 60.0,
            dims: 2,
            names: Some(vec!["jawOpen".into(), "mouthClose".into()]),
            rows: vec![vec![0.1, 0.9]],
        };
        let text = render_clip(&clip).unwrap();
        assert_eq!(parse_clip(&text).unwrap(), clip);
    }

    #[test]
    fn parse_rejects_malformed_inputs() {
        let good = render_clip(&sample_clip()).unwrap();
        // Each mutation must fail with a parse error, never panic.
        let cases = [
            ("", "empty"),
            ("wrong-magic\n", "magic"),
            ("b2f-clip 1\nkind: face\nfps: 30\ndims: 3\nframes: 1\n[1 2]\n", "width"),
            ("b2f-clip 1\nkind: face\nfps: 30\ndims: 3\nframes: 2\n[1 2 3]\n", "count"),
            ("b2f-clip 1\nkind: nope\nfps: 30\ndims: 3\nframes: 0\n", "kind"),
            ("b2f-clip 1\nkind: face\nfps: -1\ndims: 3\nframes: 0\n", "fps"),
            ("b2f-clip 1\nkind: face\nfps: 30\ndims: 3\nframes: 1\n[1 2 nan]\n", "nan"),
            ("b2f-clip 1\nkind: face\nfps: 30\ndims: 3\nbogus: 1\nframes: 0\n", "key"),
            ("b2f-clip 1\nkind: face\nkind: face\nfps: 30\ndims: 3\nframes: 0\n", "dup"),
            ("b2f-clip 1\nkind: face\nfps: 30\ndims: 3\nframes: 1\n[1 2 3\n", "bracket"),
        ];
        for (text, label) in cases {
            assert!(parse_clip(text).is_err(), "case `{label}` should fail");
        }
        // Sanity: the unmutated document parses.
        assert!(parse_clip(&good).is_ok());
    }

    #[test]
    fn header_line_numbers_are_reported() {
        let err = parse_clip("b2f-clip 1\nkind: face\nfps: bad\n").unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
    }

    #[test]
    fn typed_readers_enforce_kind_and_width() {
        let body = ClipFile {
            kind: ClipKind::Body,
            fps: 30.0,
            dims: 4,
            names: None,
            rows: vec![vec![0.0; 4]],
        };
        assert!(face_from_clip(&body).is_err());
        assert!(body_from_clip(&body).is_ok());
        let mut face = body.clone();
        face.kind = ClipKind::Face;
        // 4 dims is not a valid face width.
        assert!(face_from_clip(&face).is_err());
    }
}
