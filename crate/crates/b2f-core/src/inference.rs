//! Generation-time entry points: whole-clip offline synthesis, 50-frame
//! sliding-window streaming, style interpolation and transition schedules,
//! discrete-code perturbation, and the style/schedule file formats.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{B2fModel, StyleEmbedding, StyleMode};
use crate::motion::{BodyMotionSequence, FacialMotionSequence, FACE_DIMS};
use crate::nn::{Graph, RngState, Tensor};

/// Style sampling temperature at inference: near-deterministic, so the soft
/// sample is numerically one-hot and hard mode only snaps ties.
pub const INFERENCE_TAU: f64 = 1e-6;

/// Body-history length for streaming generation, in frames.
pub const STREAM_WINDOW: usize = 50;

/// Encode a style reference at the inference temperature.
pub fn embed_style(
    model: &B2fModel,
    style_ref: &FacialMotionSequence,
    mode: StyleMode,
    rng: &mut RngState,
) -> Result<StyleEmbedding> {
    let (emb, _) = model.encode_style(style_ref, mode, INFERENCE_TAU, rng)?;
    Ok(emb)
}

/// Deterministic core: encode the body, decode under a fixed style embedding.
pub fn generate_with_embedding(
    model: &B2fModel,
    body: &BodyMotionSequence,
    style: &StyleEmbedding,
) -> Result<FacialMotionSequence> {
    if body.len() == 0 {
        return Err(Error::invalid("generation needs at least one body frame"));
    }
    check_style_dims(model, style.d(), style.k())?;
    let content = model.encode_body(body)?;
    model.generate(&content, style, body.fps)
}

/// Whole-clip generation from a body sequence and a style reference clip.
/// One forward pass over the full sequence, however long.
pub fn generate_offline(
    model: &B2fModel,
    body: &BodyMotionSequence,
    style_ref: &FacialMotionSequence,
    mode: StyleMode,
    seed: u64,
) -> Result<FacialMotionSequence> {
    let mut rng = RngState::new(seed);
    let style = embed_style(model, style_ref, mode, &mut rng)?;
    generate_with_embedding(model, body, &style)
}

fn check_style_dims(model: &B2fModel, d: usize, k: usize) -> Result<()> {
    if d != model.config.style_d || k != model.config.style_k {
        return Err(Error::shape(
            "style embedding",
            format!(
                "embedding is {d}x{k} but the model expects {}x{}",
                model.config.style_d, model.config.style_k
            ),
        ));
    }
    Ok(())
}

/// Pad a (possibly short) history to the full window by repeating its first
/// frame, then run the pipeline and keep only the last output frame.
pub fn realtime_step(
    model: &B2fModel,
    history: &[Vec<f64>],
    style: &StyleEmbedding,
    fps: f64,
) -> Result<[f64; FACE_DIMS]> {
    if history.is_empty() {
        return Err(Error::invalid("realtime_step needs at least one body frame"));
    }
    let recent = if history.len() > STREAM_WINDOW {
        &history[history.len() - STREAM_WINDOW..]
    } else {
        history
    };
    let mut window: Vec<Vec<f64>> = Vec::with_capacity(STREAM_WINDOW);
    for _ in recent.len()..STREAM_WINDOW {
        window.push(recent[0].clone());
    }
    window.extend(recent.iter().cloned());
    let seq = BodyMotionSequence::new(fps, window[0].len(), window)?;
    let out = generate_with_embedding(model, &seq, style)?;
    Ok(*out.frame(out.len() - 1))
}

/// Streaming driver: feed body frames one at a time, get one facial frame
/// back per step. Keeps the most recent 50 frames internally.
pub struct StreamingSession<'m> {
    model: &'m B2fModel,
    style: StyleEmbedding,
    fps: f64,
    window: Vec<Vec<f64>>,
}

impl<'m> StreamingSession<'m> {
    pub fn new(model: &'m B2fModel, style: StyleEmbedding, fps: f64) -> Result<Self> {
        check_style_dims(model, style.d(), style.k())?;
        if !(fps > 0.0) || !fps.is_finite() {
            return Err(Error::invalid(format!("fps must be positive, got {fps}")));
        }
        Ok(StreamingSession { model, style, fps, window: Vec::new() })
    }

    pub fn history_len(&self) -> usize {
        self.window.len()
    }

    /// Accept the next body frame and produce the current facial frame.
    pub fn push(&mut self, frame: &[f64]) -> Result<[f64; FACE_DIMS]> {
        if frame.len() != self.model.config.body_dim {
            return Err(Error::shape(
                "StreamingSession::push",
                format!(
                    "frame has {} dims, model expects {}",
                    frame.len(),
                    self.model.config.body_dim
                ),
            ));
        }
        if self.window.len() == STREAM_WINDOW {
            self.window.remove(0);
        }
        self.window.push(frame.to_vec());
        realtime_step(self.model, &self.window, &self.style, self.fps)
    }
}

/// Convex blend of two style embeddings; every K-block stays on the simplex.
pub fn interpolate_styles(
    e1: &StyleEmbedding,
    e2: &StyleEmbedding,
    alpha: f64,
) -> Result<StyleEmbedding> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid(format!(
            "interpolation ratio must be in [0, 1], got {alpha}"
        )));
    }
    if e1.d() != e2.d() || e1.k() != e2.k() {
        return Err(Error::shape(
            "interpolate_styles",
            format!(
                "cannot blend a {}x{} embedding with a {}x{}",
                e1.d(),
                e1.k(),
                e2.d(),
                e2.k()
            ),
        ));
    }
    let values = e1
        .values()
        .iter()
        .zip(e2.values())
        .map(|(a, b)| (1.0 - alpha) * a + alpha * b)
        .collect();
    StyleEmbedding::new(e1.d(), e1.k(), values)
}

/// Re-roll the active index in `n` of the D one-hot blocks, chosen uniformly
/// without replacement; each re-rolled block moves to a different index.
pub fn perturb_code(
    e: &StyleEmbedding,
    n: usize,
    rng: &mut RngState,
) -> Result<StyleEmbedding> {
    if !e.is_hard() {
        return Err(Error::invalid(
            "perturb_code operates on hard (one-hot) embeddings only",
        ));
    }
    let (d, k) = (e.d(), e.k());
    if n > d {
        return Err(Error::invalid(format!(
            "cannot perturb {n} blocks, the embedding has {d}"
        )));
    }
    if n > 0 && k < 2 {
        return Err(Error::invalid(
            "perturbation needs at least two categories per block",
        ));
    }
    // Partial Fisher-Yates picks the n blocks without replacement.
    let mut order: Vec<usize> = (0..d).collect();
    for i in 0..n {
        let j = rng.int_in(i, d - 1);
        order.swap(i, j);
    }
    let mut values = e.values().to_vec();
    for &b in &order[..n] {
        let block = &mut values[b * k..(b + 1) * k];
        let hot = block
            .iter()
            .position(|&v| v == 1.0)
            .expect("hard embedding has a hot entry per block");
        let mut target = rng.int_in(0, k - 2);
        if target >= hot {
            target += 1;
        }
        block[hot] = 0.0;
        block[target] = 1.0;
    }
    StyleEmbedding::new(d, k, values)
}

// ---------------------------------------------------------------------------
// Style embedding file format.
//
// ```text
// b2f-style 1
// d: 12
// k: 16
// mode: hard
// [0 1 0 ...]
// ```
//
// One bracketed value line with d*k numbers. `mode: hard` requires the
// values to be exactly one-hot per block.

#[derive(Debug, Clone, PartialEq)]
pub struct StyleFile {
    pub mode: StyleMode,
    pub embedding: StyleEmbedding,
}

const STYLE_MAGIC: &str = "b2f-style 1";
const STYLE_WHAT: &str = "style file";

pub fn render_style(file: &StyleFile) -> Result<String> {
    if file.mode == StyleMode::Hard && !file.embedding.is_hard() {
        return Err(Error::invalid(
            "style file is flagged hard but its blocks are not one-hot",
        ));
    }
    let mut out = String::new();
    let _ = writeln!(out, "{STYLE_MAGIC}");
    let _ = writeln!(out, "d: {}", file.embedding.d());
    let _ = writeln!(out, "k: {}", file.embedding.k());
    let mode = match file.mode {
        StyleMode::Soft => "soft",
        StyleMode::Hard => "hard",
    };
    let _ = writeln!(out, "mode: {mode}");
    out.push('[');
    for (i, v) in file.embedding.values().iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        let _ = write!(out, "{v}");
    }
    out.push_str("]\n");
    Ok(out)
}

fn parse_bracket_row(line: &str, lineno: usize, what: &'static str) -> Result<Vec<f64>> {
    let inner = line
        .strip_prefix('[')
        .and_then(|l| l.strip_suffix(']'))
        .ok_or_else(|| Error::parse(what, lineno, "value line must be `[...]`"))?;
    let mut row = Vec::new();
    for tok in inner.split_ascii_whitespace() {
        let v: f64 = tok
            .parse()
            .map_err(|_| Error::parse(what, lineno, format!("bad number `{tok}`")))?;
        if !v.is_finite() {
            return Err(Error::parse(what, lineno, format!("non-finite value `{tok}`")));
        }
        row.push(v);
    }
    Ok(row)
}

pub fn parse_style(text: &str) -> Result<StyleFile> {
    let mut lines = text.lines().enumerate();
    let (_, first) = lines
        .next()
        .ok_or_else(|| Error::parse(STYLE_WHAT, 1, "empty file"))?;
    if first != STYLE_MAGIC {
        return Err(Error::parse(
            STYLE_WHAT,
            1,
            format!("expected header `{STYLE_MAGIC}`, got `{first}`"),
        ));
    }
    let mut d: Option<usize> = None;
    let mut k: Option<usize> = None;
    let mut mode: Option<StyleMode> = None;
    let mut values: Option<Vec<f64>> = None;
    for (idx, line) in lines {
        let lineno = idx + 1;
        if line.starts_with('[') {
            if values.is_some() {
                return Err(Error::parse(STYLE_WHAT, lineno, "more than one value line"));
            }
            values = Some(parse_bracket_row(line, lineno, STYLE_WHAT)?);
            continue;
        }
        if values.is_some() {
            return Err(Error::parse(
                STYLE_WHAT,
                lineno,
                format!("unexpected line after values: `{line}`"),
            ));
        }
        let (key, v) = line.split_once(':').ok_or_else(|| {
            Error::parse(STYLE_WHAT, lineno, format!("expected `key: value`, got `{line}`"))
        })?;
        let v = v.trim_start_matches(' ');
        match key {
            "d" => {
                if d.is_some() {
                    return Err(Error::parse(STYLE_WHAT, lineno, "duplicate `d`"));
                }
                d = Some(parse_positive(v, lineno, STYLE_WHAT, "d")?);
            }
            "k" => {
                if k.is_some() {
                    return Err(Error::parse(STYLE_WHAT, lineno, "duplicate `k`"));
                }
                k = Some(parse_positive(v, lineno, STYLE_WHAT, "k")?);
            }
            "mode" => {
                if mode.is_some() {
                    return Err(Error::parse(STYLE_WHAT, lineno, "duplicate `mode`"));
                }
                mode = Some(v.parse().map_err(|_| {
                    Error::parse(STYLE_WHAT, lineno, format!("mode must be soft or hard, got `{v}`"))
                })?);
            }
            other => {
                return Err(Error::parse(
                    STYLE_WHAT,
                    lineno,
                    format!("unknown header key `{other}`"),
                ));
            }
        }
    }
    let d = d.ok_or_else(|| Error::parse(STYLE_WHAT, 0, "missing `d:` header"))?;
    let k = k.ok_or_else(|| Error::parse(STYLE_WHAT, 0, "missing `k:` header"))?;
    let mode = mode.ok_or_else(|| Error::parse(STYLE_WHAT, 0, "missing `mode:` header"))?;
    let values = values.ok_or_else(|| Error::parse(STYLE_WHAT, 0, "missing value line"))?;
    if values.len() != d * k {
        return Err(Error::parse(
            STYLE_WHAT,
            0,
            format!("expected {} values for d={d}, k={k}, got {}", d * k, values.len()),
        ));
    }
    let embedding = StyleEmbedding::new(d, k, values)?;
    if mode == StyleMode::Hard && !embedding.is_hard() {
        return Err(Error::invalid(
            "style file is flagged hard but its blocks are not one-hot",
        ));
    }
    Ok(StyleFile { mode, embedding })
}

fn parse_positive(v: &str, lineno: usize, what: &'static str, key: &str) -> Result<usize> {
    let n: usize = v
        .parse()
        .map_err(|_| Error::parse(what, lineno, format!("bad `{key}` value `{v}`")))?;
    if n == 0 {
        return Err(Error::parse(what, lineno, format!("`{key}` must be positive")));
    }
    Ok(n)
}

pub fn read_style(path: &Path) -> Result<StyleFile> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    parse_style(&text)
}

pub fn save_style(file: &StyleFile, path: &Path) -> Result<()> {
    let text = render_style(file)?;
    std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

// ---------------------------------------------------------------------------
// Style schedules: keyframed per-frame styles for transitions.

/// What a schedule keyframe applies from its frame onward: a fixed embedding
/// or a blend of two at a given ratio.
#[derive(Debug, Clone, PartialEq)]
pub enum StylePoint {
    Fixed(StyleEmbedding),
    Blend {
        a: StyleEmbedding,
        b: StyleEmbedding,
        alpha: f64,
    },
}

impl StylePoint {
    fn dims(&self) -> (usize, usize) {
        match self {
            StylePoint::Fixed(e) => (e.d(), e.k()),
            StylePoint::Blend { a, .. } => (a.d(), a.k()),
        }
    }

    fn resolve(&self) -> Result<StyleEmbedding> {
        match self {
            StylePoint::Fixed(e) => Ok(e.clone()),
            StylePoint::Blend { a, b, alpha } => interpolate_styles(a, b, *alpha),
        }
    }
}

/// Keyframes of (frame index, style point); each keyframe holds until the
/// next one. The first keyframe must sit at frame 0 so every frame of any
/// clip is covered.
#[derive(Debug, Clone, PartialEq)]
pub struct StyleSchedule {
    entries: Vec<(usize, StylePoint)>,
}

impl StyleSchedule {
    pub fn new(entries: Vec<(usize, StylePoint)>) -> Result<StyleSchedule> {
        let Some(first) = entries.first() else {
            return Err(Error::invalid("a style schedule needs at least one entry"));
        };
        if first.0 != 0 {
            return Err(Error::invalid(format!(
                "schedule must cover frame 0; first entry is at frame {}",
                first.0
            )));
        }
        let (d, k) = first.1.dims();
        for pair in entries.windows(2) {
            if pair[1].0 <= pair[0].0 {
                return Err(Error::invalid(format!(
                    "schedule frames must be strictly increasing ({} then {})",
                    pair[0].0, pair[1].0
                )));
            }
        }
        for (frame, point) in &entries {
            if point.dims() != (d, k) {
                return Err(Error::shape(
                    "StyleSchedule::new",
                    format!("entry at frame {frame} has mismatched embedding dims"),
                ));
            }
            if let StylePoint::Blend { a, b, alpha } = point {
                if !(0.0..=1.0).contains(alpha) {
                    return Err(Error::invalid(format!(
                        "blend ratio at frame {frame} must be in [0, 1], got {alpha}"
                    )));
                }
                if a.d() != b.d() || a.k() != b.k() {
                    return Err(Error::shape(
                        "StyleSchedule::new",
                        format!("blend at frame {frame} mixes embedding sizes"),
                    ));
                }
            }
        }
        Ok(StyleSchedule { entries })
    }

    pub fn entries(&self) -> &[(usize, StylePoint)] {
        &self.entries
    }

    pub fn dims(&self) -> (usize, usize) {
        self.entries[0].1.dims()
    }

    /// One resolved style row per frame, [t_len, D*K].
    pub fn style_rows(&self, t_len: usize) -> Result<Tensor> {
        let resolved: Vec<(usize, StyleEmbedding)> = self
            .entries
            .iter()
            .map(|(frame, point)| point.resolve().map(|e| (*frame, e)))
            .collect::<Result<_>>()?;
        let (d, k) = self.dims();
        let mut data = Vec::with_capacity(t_len * d * k);
        let mut active = 0usize;
        for t in 0..t_len {
            while active + 1 < resolved.len() && resolved[active + 1].0 <= t {
                active += 1;
            }
            data.extend_from_slice(resolved[active].1.values());
        }
        Ok(Tensor { shape: vec![t_len, d * k], data })
    }
}

/// Whole-clip generation with the style varying per frame according to a
/// schedule. A single-entry schedule reproduces [`generate_with_embedding`]
/// bitwise.
pub fn generate_with_schedule(
    model: &B2fModel,
    body: &BodyMotionSequence,
    schedule: &StyleSchedule,
) -> Result<FacialMotionSequence> {
    if body.len() == 0 {
        return Err(Error::invalid("generation needs at least one body frame"));
    }
    let (d, k) = schedule.dims();
    check_style_dims(model, d, k)?;
    let rows = schedule.style_rows(body.len())?;
    let content = model.encode_body(body)?;
    let mut g = Graph::inference();
    let c = g.constant(content);
    let s = g.constant(rows);
    let out = model.generate_rows_on(&mut g, c, s)?;
    FacialMotionSequence::from_tensor(body.fps, g.value(out))
}

// ---------------------------------------------------------------------------
// Schedule file format.
//
// ```text
// b2f-schedule 1
// d: 2
// k: 3
// entries: 2
// at 0 fixed [1 0 0 0 1 0]
// at 50 blend 0.5 [1 0 0 0 1 0] [0 1 0 0 0 1]
// ```

const SCHEDULE_MAGIC: &str = "b2f-schedule 1";
const SCHEDULE_WHAT: &str = "schedule file";

pub fn render_schedule(schedule: &StyleSchedule) -> Result<String> {
    let (d, k) = schedule.dims();
    let mut out = String::new();
    let _ = writeln!(out, "{SCHEDULE_MAGIC}");
    let _ = writeln!(out, "d: {d}");
    let _ = writeln!(out, "k: {k}");
    let _ = writeln!(out, "entries: {}", schedule.entries().len());
    let write_vals = |out: &mut String, e: &StyleEmbedding| {
        out.push('[');
        for (i, v) in e.values().iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            let _ = write!(out, "{v}");
        }
        out.push(']');
    };
    for (frame, point) in schedule.entries() {
        match point {
            StylePoint::Fixed(e) => {
                let _ = write!(out, "at {frame} fixed ");
                write_vals(&mut out, e);
            }
            StylePoint::Blend { a, b, alpha } => {
                let _ = write!(out, "at {frame} blend {alpha} ");
                write_vals(&mut out, a);
                out.push(' ');
                write_vals(&mut out, b);
            }
        }
        out.push('\n');
    }
    Ok(out)
}

/// Split one `[...]` group off the front of `s`, returning (values, rest).
fn take_bracket_group<'a>(
    s: &'a str,
    lineno: usize,
) -> Result<(Vec<f64>, &'a str)> {
    let s = s.trim_start();
    if !s.starts_with('[') {
        return Err(Error::parse(SCHEDULE_WHAT, lineno, "expected `[` to open a value group"));
    }
    let close = s
        .find(']')
        .ok_or_else(|| Error::parse(SCHEDULE_WHAT, lineno, "unclosed `[` group"))?;
    let vals = parse_bracket_row(&s[..=close], lineno, SCHEDULE_WHAT)?;
    Ok((vals, &s[close + 1..]))
}

pub fn parse_schedule(text: &str) -> Result<StyleSchedule> {
    let mut lines = text.lines().enumerate();
    let (_, first) = lines
        .next()
        .ok_or_else(|| Error::parse(SCHEDULE_WHAT, 1, "empty file"))?;
    if first != SCHEDULE_MAGIC {
        return Err(Error::parse(
            SCHEDULE_WHAT,
            1,
            format!("expected header `{SCHEDULE_MAGIC}`, got `{first}`"),
        ));
    }
    let mut d: Option<usize> = None;
    let mut k: Option<usize> = None;
    let mut count: Option<usize> = None;
    let mut entries: Vec<(usize, StylePoint)> = Vec::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        if let Some(rest) = line.strip_prefix("at ") {
            let (d, k) = match (d, k) {
                (Some(d), Some(k)) => (d, k),
                _ => {
                    return Err(Error::parse(
                        SCHEDULE_WHAT,
                        lineno,
                        "entry before `d:`/`k:` headers",
                    ))
                }
            };
            let (frame_tok, rest) = rest.split_once(' ').ok_or_else(|| {
                Error::parse(SCHEDULE_WHAT, lineno, "expected `at <frame> <kind> ...`")
            })?;
            let frame: usize = frame_tok.parse().map_err(|_| {
                Error::parse(SCHEDULE_WHAT, lineno, format!("bad frame index `{frame_tok}`"))
            })?;
            let point = if let Some(rest) = rest.strip_prefix("fixed ") {
                let (vals, tail) = take_bracket_group(rest, lineno)?;
                if !tail.trim().is_empty() {
                    return Err(Error::parse(
                        SCHEDULE_WHAT,
                        lineno,
                        format!("unexpected trailing text `{}`", tail.trim()),
                    ));
                }
                expect_len(&vals, d, k, lineno)?;
                StylePoint::Fixed(StyleEmbedding::new(d, k, vals)?)
            } else if let Some(rest) = rest.strip_prefix("blend ") {
                let (alpha_tok, rest) = rest.split_once(' ').ok_or_else(|| {
                    Error::parse(SCHEDULE_WHAT, lineno, "expected `blend <alpha> [..] [..]`")
                })?;
                let alpha: f64 = alpha_tok.parse().map_err(|_| {
                    Error::parse(SCHEDULE_WHAT, lineno, format!("bad blend ratio `{alpha_tok}`"))
                })?;
                let (a_vals, rest) = take_bracket_group(rest, lineno)?;
                let (b_vals, tail) = take_bracket_group(rest, lineno)?;
                if !tail.trim().is_empty() {
                    return Err(Error::parse(
                        SCHEDULE_WHAT,
                        lineno,
                        format!("unexpected trailing text `{}`", tail.trim()),
                    ));
                }
                expect_len(&a_vals, d, k, lineno)?;
                expect_len(&b_vals, d, k, lineno)?;
                if !(0.0..=1.0).contains(&alpha) {
                    return Err(Error::parse(
                        SCHEDULE_WHAT,
                        lineno,
                        format!("blend ratio must be in [0, 1], got {alpha}"),
                    ));
                }
                StylePoint::Blend {
                    a: StyleEmbedding::new(d, k, a_vals)?,
                    b: StyleEmbedding::new(d, k, b_vals)?,
                    alpha,
                }
            } else {
                return Err(Error::parse(
                    SCHEDULE_WHAT,
                    lineno,
                    format!("entry kind must be `fixed` or `blend`, got `{rest}`"),
                ));
            };
            entries.push((frame, point));
            continue;
        }
        if !entries.is_empty() {
            return Err(Error::parse(
                SCHEDULE_WHAT,
                lineno,
                format!("unexpected line after entries: `{line}`"),
            ));
        }
        let (key, v) = line.split_once(':').ok_or_else(|| {
            Error::parse(SCHEDULE_WHAT, lineno, format!("expected `key: value`, got `{line}`"))
        })?;
        let v = v.trim_start_matches(' ');
        match key {
            "d" => {
                if d.is_some() {
                    return Err(Error::parse(SCHEDULE_WHAT, lineno, "duplicate `d`"));
                }
                d = Some(parse_positive(v, lineno, SCHEDULE_WHAT, "d")?);
            }
            "k" => {
                if k.is_some() {
                    return Err(Error::parse(SCHEDULE_WHAT, lineno, "duplicate `k`"));
                }
                k = Some(parse_positive(v, lineno, SCHEDULE_WHAT, "k")?);
            }
            "entries" => {
                if count.is_some() {
                    return Err(Error::parse(SCHEDULE_WHAT, lineno, "duplicate `entries`"));
                }
                count = Some(v.parse().map_err(|_| {
                    Error::parse(SCHEDULE_WHAT, lineno, format!("bad entry count `{v}`"))
                })?);
            }
            other => {
                return Err(Error::parse(
                    SCHEDULE_WHAT,
                    lineno,
                    format!("unknown header key `{other}`"),
                ));
            }
        }
    }
    let count = count.ok_or_else(|| Error::parse(SCHEDULE_WHAT, 0, "missing `entries:` header"))?;
    if entries.len() != count {
        return Err(Error::parse(
            SCHEDULE_WHAT,
            0,
            format!("header says entries: {count} but {} found", entries.len()),
        ));
    }
    StyleSchedule::new(entries)
}

fn expect_len(vals: &[f64], d: usize, k: usize, lineno: usize) -> Result<()> {
    if vals.len() != d * k {
        return Err(Error::parse(
            SCHEDULE_WHAT,
            lineno,
            format!("expected {} values for d={d}, k={k}, got {}", d * k, vals.len()),
        ));
    }
    Ok(())
}

pub fn read_schedule(path: &Path) -> Result<StyleSchedule> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    parse_schedule(&text)
}

pub fn save_schedule(schedule: &StyleSchedule, path: &Path) -> Result<()> {
    let text = render_schedule(schedule)?;
    std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}
