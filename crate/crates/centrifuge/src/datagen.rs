//! Training and evaluation material: procedural moving-shape clips (a desk
//! scale stand-in for a real video corpus), pointwise blending, frozen and
//! solid-color clips, augmentation, and reproducible pair streams.

use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num::Scalar;
use crate::videoio::{self, ContainerFormat, VideoClip};

/// Frozen clips repeat one frame this many times unless told otherwise.
pub const DEFAULT_FROZEN_LEN: usize = 32;

/// The pure-color filter palette used by the color-constancy probe.
pub const SOLID_COLOR_PALETTE: [(&str, [f64; 3]); 8] = [
    ("black", [0.0, 0.0, 0.0]),
    ("white", [1.0, 1.0, 1.0]),
    ("green", [0.0, 1.0, 0.0]),
    ("red", [1.0, 0.0, 0.0]),
    ("yellow", [1.0, 1.0, 0.0]),
    ("blue", [0.0, 0.0, 1.0]),
    ("cyan", [0.0, 1.0, 1.0]),
    ("magenta", [1.0, 0.0, 1.0]),
];

/// Colors the labeled object can take; the color index is part of the class.
pub const OBJECT_PALETTE: [(&str, [f64; 3]); 3] = [
    ("red", [0.88, 0.12, 0.12]),
    ("green", [0.10, 0.82, 0.18]),
    ("blue", [0.16, 0.28, 0.92]),
];

/// Background palette for solid backgrounds. The four colors are chosen so
/// that every pairwise midpoint is distinct from every other (and from the
/// colors themselves): a blend's background then determines the source pair
/// unambiguously, which keeps the separation task well-posed.
const BACKGROUND_PALETTE: [[f64; 3]; 4] = [
    [0.10, 0.10, 0.12],
    [0.95, 0.90, 0.55],
    [0.80, 0.25, 0.35],
    [0.15, 0.60, 0.85],
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Circle,
    Rectangle,
    Triangle,
}

pub const SHAPE_KINDS: [ShapeKind; 3] = [ShapeKind::Circle, ShapeKind::Rectangle, ShapeKind::Triangle];

impl ShapeKind {
    pub fn name(self) -> &'static str {
        match self {
            ShapeKind::Circle => "circle",
            ShapeKind::Rectangle => "rectangle",
            ShapeKind::Triangle => "triangle",
        }
    }

    fn index(self) -> usize {
        match self {
            ShapeKind::Circle => 0,
            ShapeKind::Rectangle => 1,
            ShapeKind::Triangle => 2,
        }
    }
}

/// Class label of a clip: the (shape kind, palette color) of object 0. Nine
/// classes in total.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Label(pub u8);

pub const NUM_CLASSES: usize = SHAPE_KINDS.len() * OBJECT_PALETTE.len();

impl Label {
    pub fn of(kind: ShapeKind, color_idx: usize) -> Label {
        Label((kind.index() * OBJECT_PALETTE.len() + color_idx) as u8)
    }

    pub fn kind(self) -> ShapeKind {
        SHAPE_KINDS[self.0 as usize / OBJECT_PALETTE.len()]
    }

    pub fn color_idx(self) -> usize {
        self.0 as usize % OBJECT_PALETTE.len()
    }

    pub fn name(self) -> String {
        format!("{}-{}", self.kind().name(), OBJECT_PALETTE[self.color_idx()].0)
    }

    pub fn from_name(name: &str) -> Result<Label> {
        for k in 0..NUM_CLASSES {
            let label = Label(k as u8);
            if label.name() == name {
                return Ok(label);
            }
        }
        Err(Error::InvalidInput(format!("unknown label '{name}'")))
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub kind: ShapeKind,
    /// RGB in [0,1].
    pub color: [f64; 3],
    /// Diameter as a fraction of the short image side.
    pub size_frac: f64,
    /// Initial center, normalized to [0,1) of (x, y).
    pub position: (f64, f64),
    /// Pixels per frame (x, y); positions wrap around the frame.
    pub velocity: (f64, f64),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum Background {
    Solid { color: [f64; 3] },
    /// Low-frequency random color field, static over time.
    Noise { cells: usize },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SceneSpec {
    pub objects: Vec<ObjectSpec>,
    pub background: Background,
    /// The class of object 0.
    pub label: Label,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.objects.is_empty() {
            return Err(Error::InvalidConfig("scene needs at least one object".into()));
        }
        for (k, obj) in self.objects.iter().enumerate() {
            if !(obj.size_frac > 0.0) {
                return Err(Error::InvalidConfig(format!("object {k} has degenerate size {}", obj.size_frac)));
            }
            let finite = obj.position.0.is_finite()
                && obj.position.1.is_finite()
                && obj.velocity.0.is_finite()
                && obj.velocity.1.is_finite();
            if !finite {
                return Err(Error::InvalidConfig(format!("object {k} has non-finite position/velocity")));
            }
        }
        if self.objects[0].kind != self.label.kind() {
            return Err(Error::InvalidConfig("label does not match object 0 shape".into()));
        }
        Ok(())
    }
}

/// Wrapped (torus) offset from `c` to `p` in a domain of size `extent`.
#[inline]
fn torus_delta(p: f64, c: f64, extent: f64) -> f64 {
    let d = p - c;
    d - extent * (d / extent).round()
}

fn sdf(kind: ShapeKind, dx: f64, dy: f64, radius: f64) -> f64 {
    match kind {
        ShapeKind::Circle => (dx * dx + dy * dy).sqrt() - radius,
        ShapeKind::Rectangle => {
            let (hw, hh) = (radius * 1.15, radius * 0.70);
            (dx.abs() - hw).max(dy.abs() - hh)
        }
        ShapeKind::Triangle => {
            // Upward-pointing triangle (image y grows downward): vertices at
            // angle 90/210/330 degrees on the circumcircle.
            let v = [(0.0, -radius), (-0.866 * radius, 0.5 * radius), (0.866 * radius, 0.5 * radius)];
            let mut d = f64::NEG_INFINITY;
            for e in 0..3 {
                let (ax, ay) = v[e];
                let (bx, by) = v[(e + 1) % 3];
                let (ex, ey) = (bx - ax, by - ay);
                let len = (ex * ex + ey * ey).sqrt();
                // Signed distance to the edge line; negative inside.
                let cross = (dx - ax) * ey - (dy - ay) * ex;
                d = d.max(cross / len);
            }
            d
        }
    }
}

/// Render a clip from a scene description. Deterministic given
/// `(spec, seed)`; the seed only drives the noise background.
pub fn synth_clip<S: Scalar>(
    spec: &SceneSpec,
    t: usize,
    h: usize,
    w: usize,
    fps: f64,
    seed: u64,
) -> Result<(VideoClip<S>, Label)> {
    spec.validate()?;
    if t == 0 || h == 0 || w == 0 {
        return Err(Error::InvalidConfig(format!("degenerate clip geometry {t}x{h}x{w}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bg = render_background(&spec.background, h, w, &mut rng);
    let short = h.min(w) as f64;
    let mut data = vec![S::zero(); t * h * w * 3];
    for ti in 0..t {
        let frame = &mut data[ti * h * w * 3..(ti + 1) * h * w * 3];
        frame
            .iter_mut()
            .zip(bg.iter())
            .for_each(|(dst, &src)| *dst = S::from_f64(src));
        // Painter's order with object 0 on top, so the labeled object stays
        // visible.
        for obj in spec.objects.iter().rev() {
            let radius = obj.size_frac * short / 2.0;
            let cx = (obj.position.0 * w as f64 + obj.velocity.0 * ti as f64).rem_euclid(w as f64);
            let cy = (obj.position.1 * h as f64 + obj.velocity.1 * ti as f64).rem_euclid(h as f64);
            // Only touch pixels near the (wrapped) object.
            let reach = radius + 2.0;
            for y in 0..h {
                let dy = torus_delta(y as f64 + 0.5, cy, h as f64);
                if dy.abs() > reach {
                    continue;
                }
                for x in 0..w {
                    let dx = torus_delta(x as f64 + 0.5, cx, w as f64);
                    if dx.abs() > reach {
                        continue;
                    }
                    let coverage = (0.5 - sdf(obj.kind, dx, dy, radius)).clamp(0.0, 1.0);
                    if coverage > 0.0 {
                        let base = (y * w + x) * 3;
                        for ch in 0..3 {
                            let cur = frame[base + ch].as_f64();
                            frame[base + ch] = S::from_f64(cur + (obj.color[ch] - cur) * coverage);
                        }
                    }
                }
            }
        }
    }
    Ok((VideoClip::new_rgb(t, h, w, fps, data), spec.label))
}

fn render_background(bg: &Background, h: usize, w: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    match bg {
        Background::Solid { color } => {
            let mut out = vec![0.0; h * w * 3];
            for p in 0..h * w {
                out[p * 3..p * 3 + 3].copy_from_slice(color);
            }
            out
        }
        Background::Noise { cells } => {
            let cells = (*cells).max(2);
            let grid: Vec<f64> = (0..cells * cells * 3).map(|_| rng.random::<f64>()).collect();
            let mut out = vec![0.0; h * w * 3];
            for y in 0..h {
                for x in 0..w {
                    // Bilinear sample of the cell grid.
                    let gy = (y as f64 + 0.5) / h as f64 * (cells - 1) as f64;
                    let gx = (x as f64 + 0.5) / w as f64 * (cells - 1) as f64;
                    let (y0, x0) = (gy.floor() as usize, gx.floor() as usize);
                    let (y1, x1) = ((y0 + 1).min(cells - 1), (x0 + 1).min(cells - 1));
                    let (fy, fx) = (gy - y0 as f64, gx - x0 as f64);
                    for ch in 0..3 {
                        let g = |yy: usize, xx: usize| grid[(yy * cells + xx) * 3 + ch];
                        let top = g(y0, x0) * (1.0 - fx) + g(y0, x1) * fx;
                        let bot = g(y1, x0) * (1.0 - fx) + g(y1, x1) * fx;
                        out[(y * w + x) * 3 + ch] = top * (1.0 - fy) + bot * fy;
                    }
                }
            }
            out
        }
    }
}

/// Pointwise convex combination `(1-alpha) * v1 + alpha * v2`, computed as
/// `v1 + alpha * (v2 - v1)` so `alpha = 0` returns `v1` bit-exactly and
/// blending a clip with itself is the identity.
pub fn blend<S: Scalar>(v1: &VideoClip<S>, v2: &VideoClip<S>, alpha: S) -> Result<VideoClip<S>> {
    if v1.geometry() != v2.geometry() {
        return Err(Error::ShapeMismatch(format!("blend: {:?} vs {:?}", v1.geometry(), v2.geometry())));
    }
    if !(alpha >= S::zero() && alpha <= S::one()) {
        return Err(Error::InvalidInput(format!("alpha {alpha} outside [0,1]")));
    }
    let mut out = v1.clone();
    for (o, (&a, &b)) in out.data_mut().iter_mut().zip(v1.data().iter().zip(v2.data())) {
        *o = a + alpha * (b - a);
    }
    Ok(out)
}

/// Repeat one frame `t_out` times, removing all motion cues.
pub fn make_frozen<S: Scalar>(clip: &VideoClip<S>, frame_index: usize, t_out: usize) -> Result<VideoClip<S>> {
    if frame_index >= clip.t() {
        return Err(Error::InvalidInput(format!(
            "frame index {frame_index} out of range for clip with {} frames",
            clip.t()
        )));
    }
    let frame = clip.frame(frame_index);
    let mut data = Vec::with_capacity(t_out * frame.len());
    for _ in 0..t_out {
        data.extend_from_slice(frame);
    }
    Ok(VideoClip::new_rgb(t_out, clip.h(), clip.w(), clip.fps, data))
}

pub fn make_solid_color<S: Scalar>(rgb: [f64; 3], t: usize, h: usize, w: usize, fps: f64) -> VideoClip<S> {
    let mut data = vec![S::zero(); t * h * w * 3];
    for p in 0..t * h * w {
        for ch in 0..3 {
            data[p * 3 + ch] = S::from_f64(rgb[ch]);
        }
    }
    VideoClip::new_rgb(t, h, w, fps, data)
}

/// Intermediate spatial size of the resize step: the shortest side goes to
/// `ceil(1.15 * crop)` of the corresponding crop dimension, aspect preserved.
pub fn resize_plan(h: usize, w: usize, crop_h: usize, crop_w: usize) -> (usize, usize) {
    let (short, crop_short) = if h <= w { (h, crop_h) } else { (w, crop_w) };
    let target_short = (1.15 * crop_short as f64).ceil() as usize;
    let scale_num = target_short;
    // Ceil of other * target / short keeps both sides croppable.
    let other = if h <= w { w } else { h };
    let target_other = (other * scale_num).div_ceil(short);
    if h <= w {
        (target_short, target_other)
    } else {
        (target_other, target_short)
    }
}

fn resize_bilinear<S: Scalar>(clip: &VideoClip<S>, oh: usize, ow: usize) -> VideoClip<S> {
    if (oh, ow) == (clip.h(), clip.w()) {
        return clip.clone();
    }
    let (t, h, w) = (clip.t(), clip.h(), clip.w());
    let mut data = vec![S::zero(); t * oh * ow * 3];
    for ti in 0..t {
        let src = clip.frame(ti);
        for y in 0..oh {
            let sy = ((y as f64 + 0.5) * h as f64 / oh as f64 - 0.5).clamp(0.0, (h - 1) as f64);
            let y0 = sy.floor() as usize;
            let y1 = (y0 + 1).min(h - 1);
            let fy = sy - y0 as f64;
            for x in 0..ow {
                let sx = ((x as f64 + 0.5) * w as f64 / ow as f64 - 0.5).clamp(0.0, (w - 1) as f64);
                let x0 = sx.floor() as usize;
                let x1 = (x0 + 1).min(w - 1);
                let fx = sx - x0 as f64;
                let out_base = ((ti * oh + y) * ow + x) * 3;
                for ch in 0..3 {
                    let g = |yy: usize, xx: usize| src[(yy * w + xx) * 3 + ch].as_f64();
                    let top = g(y0, x0) * (1.0 - fx) + g(y0, x1) * fx;
                    let bot = g(y1, x0) * (1.0 - fx) + g(y1, x1) * fx;
                    data[out_base + ch] = S::from_f64(top * (1.0 - fy) + bot * fy);
                }
            }
        }
    }
    VideoClip::new_rgb(t, oh, ow, clip.fps, data)
}

/// Resize-then-random-crop-then-maybe-flip augmentation. Deterministic given
/// the seed.
pub fn augment<S: Scalar>(
    clip: &VideoClip<S>,
    crop_t: usize,
    crop_h: usize,
    crop_w: usize,
    seed: u64,
) -> Result<VideoClip<S>> {
    if clip.t() < crop_t {
        return Err(Error::InvalidInput(format!(
            "clip has {} frames, augmentation asks for {crop_t}",
            clip.t()
        )));
    }
    let (rh, rw) = resize_plan(clip.h(), clip.w(), crop_h, crop_w);
    let resized = resize_bilinear(clip, rh, rw);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t0 = rng.random_range(0..=clip.t() - crop_t);
    let y0 = rng.random_range(0..=rh - crop_h);
    let x0 = rng.random_range(0..=rw - crop_w);
    let flip = rng.random::<bool>();
    let mut data = vec![S::zero(); crop_t * crop_h * crop_w * 3];
    for ti in 0..crop_t {
        let src = resized.frame(t0 + ti);
        for y in 0..crop_h {
            for x in 0..crop_w {
                let sx = if flip { x0 + crop_w - 1 - x } else { x0 + x };
                let src_base = ((y0 + y) * rw + sx) * 3;
                let dst_base = ((ti * crop_h + y) * crop_w + x) * 3;
                data[dst_base..dst_base + 3].copy_from_slice(&src[src_base..src_base + 3]);
            }
        }
    }
    Ok(VideoClip::new_rgb(crop_t, crop_h, crop_w, clip.fps, data))
}

/// One training/eval sample: two prepared sources, the mixing coefficient,
/// and their blend. Labels are `None` for unlabeled sources (solid colors),
/// whose source index is `usize::MAX`.
#[derive(Clone, Debug)]
pub struct BlendedSample<S> {
    pub v1: VideoClip<S>,
    pub v2: VideoClip<S>,
    pub alpha: S,
    pub blended: VideoClip<S>,
    pub labels: (Option<Label>, Option<Label>),
    pub source_indices: (usize, usize),
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "lowercase", tag = "policy", content = "value")]
pub enum AlphaPolicy {
    Fixed(f64),
    Uniform(f64, f64),
}

impl Default for AlphaPolicy {
    fn default() -> Self {
        AlphaPolicy::Fixed(0.5)
    }
}

#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum PairMode {
    #[default]
    Normal,
    BothFrozen,
    OneFrozen,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PairStreamConfig {
    pub t: usize,
    pub h: usize,
    pub w: usize,
    #[serde(default)]
    pub alpha: AlphaPolicy,
    #[serde(default)]
    pub mode: PairMode,
    /// Fraction of samples whose second source is a pure palette color.
    #[serde(default)]
    pub solid_color_fraction: f64,
    /// Resize/crop/flip each source before blending. Requires corpus clips
    /// at least as large as the target geometry; with `false` the corpus
    /// geometry must match exactly.
    #[serde(default)]
    pub augment: bool,
}

/// Reproducible pair stream: every sample is a pure function of
/// `(corpus, config, seed, index)`, so the stream can be replayed or resumed
/// from any position.
pub struct PairSampler<'a, S> {
    corpus: &'a [(VideoClip<S>, Label)],
    cfg: PairStreamConfig,
    seed: u64,
}

pub fn make_pair_stream<'a, S: Scalar>(
    corpus: &'a [(VideoClip<S>, Label)],
    cfg: &PairStreamConfig,
    seed: u64,
) -> Result<PairSampler<'a, S>> {
    if corpus.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "pair stream needs at least 2 corpus clips, got {}",
            corpus.len()
        )));
    }
    if !(0.0..=1.0).contains(&cfg.solid_color_fraction) {
        return Err(Error::InvalidConfig("solid_color_fraction outside [0,1]".into()));
    }
    if let AlphaPolicy::Uniform(lo, hi) = cfg.alpha {
        if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
            return Err(Error::InvalidConfig(format!("bad alpha range [{lo},{hi}]")));
        }
    }
    for (k, (clip, _)) in corpus.iter().enumerate() {
        if cfg.augment {
            if clip.t() < cfg.t || clip.h() == 0 || clip.w() == 0 {
                return Err(Error::InvalidConfig(format!(
                    "corpus clip {k} ({}x{}x{}) too short for augmented {}x{}x{} stream",
                    clip.t(),
                    clip.h(),
                    clip.w(),
                    cfg.t,
                    cfg.h,
                    cfg.w
                )));
            }
        } else if clip.geometry() != (cfg.t, cfg.h, cfg.w) {
            return Err(Error::InvalidConfig(format!(
                "corpus clip {k} geometry {:?} != stream geometry {:?} (augment disabled)",
                clip.geometry(),
                (cfg.t, cfg.h, cfg.w)
            )));
        }
    }
    Ok(PairSampler { corpus, cfg: cfg.clone(), seed })
}

impl<'a, S: Scalar> PairSampler<'a, S> {
    pub fn config(&self) -> &PairStreamConfig {
        &self.cfg
    }

    pub fn sample(&self, index: u64) -> BlendedSample<S> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let i1 = rng.random_range(0..self.corpus.len());
        let mut i2 = rng.random_range(0..self.corpus.len());
        while i2 == i1 {
            i2 = rng.random_range(0..self.corpus.len());
        }
        let alpha = match self.cfg.alpha {
            AlphaPolicy::Fixed(a) => a,
            AlphaPolicy::Uniform(lo, hi) => rng.random_range(lo..=hi),
        };
        let solid = self.cfg.solid_color_fraction > 0.0
            && self.cfg.mode == PairMode::Normal
            && rng.random::<f64>() < self.cfg.solid_color_fraction;

        let v1 = self.prepare(i1, &mut rng);
        let (v2, label2, idx2) = if solid {
            let color = SOLID_COLOR_PALETTE[rng.random_range(0..SOLID_COLOR_PALETTE.len())].1;
            (make_solid_color(color, self.cfg.t, self.cfg.h, self.cfg.w, v1.fps), None, usize::MAX)
        } else {
            (self.prepare(i2, &mut rng), Some(self.corpus[i2].1), i2)
        };
        let (v1, v2) = match self.cfg.mode {
            PairMode::Normal => (v1, v2),
            PairMode::BothFrozen => {
                let f1 = rng.random_range(0..v1.t());
                let f2 = rng.random_range(0..v2.t());
                (
                    make_frozen(&v1, f1, self.cfg.t).expect("frozen index in range"),
                    make_frozen(&v2, f2, self.cfg.t).expect("frozen index in range"),
                )
            }
            PairMode::OneFrozen => {
                let f2 = rng.random_range(0..v2.t());
                (v1, make_frozen(&v2, f2, self.cfg.t).expect("frozen index in range"))
            }
        };
        let alpha_s = S::from_f64(alpha);
        let blended = blend(&v1, &v2, alpha_s).expect("stream sources share geometry");
        BlendedSample {
            labels: (Some(self.corpus[i1].1), label2),
            source_indices: (i1, idx2),
            v1,
            v2,
            alpha: alpha_s,
            blended,
        }
    }

    fn prepare(&self, idx: usize, rng: &mut ChaCha8Rng) -> VideoClip<S> {
        let clip = &self.corpus[idx].0;
        if self.cfg.augment {
            let sub = rng.random::<u64>();
            augment(clip, self.cfg.t, self.cfg.h, self.cfg.w, sub).expect("validated at construction")
        } else {
            clip.clone()
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = BlendedSample<S>> + '_ {
        (0u64..).map(move |i| self.sample(i))
    }
}

/// How the corpus generator picks backgrounds.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "lowercase", tag = "mode", content = "noise_fraction")]
pub enum BackgroundMode {
    Solid,
    Noise,
    Mix(f64),
}

impl Default for BackgroundMode {
    fn default() -> Self {
        BackgroundMode::Solid
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub num_clips: usize,
    pub t: usize,
    pub h: usize,
    pub w: usize,
    #[serde(default = "default_fps")]
    pub fps: f64,
    #[serde(default)]
    pub background: BackgroundMode,
    /// Extra unlabeled objects per scene, drawn uniformly from this range.
    #[serde(default = "default_distractors")]
    pub distractors: (usize, usize),
}

fn default_fps() -> f64 {
    12.0
}
fn default_distractors() -> (usize, usize) {
    (0, 1)
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_clips == 0 || self.t == 0 || self.h == 0 || self.w == 0 {
            return Err(Error::InvalidConfig("corpus config has zero-sized field".into()));
        }
        if self.distractors.0 > self.distractors.1 {
            return Err(Error::InvalidConfig("distractor range reversed".into()));
        }
        Ok(())
    }
}

/// Draw a random scene whose object 0 carries the given class.
pub fn random_scene(label: Label, cfg: &CorpusConfig, rng: &mut ChaCha8Rng) -> SceneSpec {
    let noise = match cfg.background {
        BackgroundMode::Solid => false,
        BackgroundMode::Noise => true,
        BackgroundMode::Mix(f) => rng.random::<f64>() < f,
    };
    let background = if noise {
        Background::Noise { cells: rng.random_range(3..=5) }
    } else {
        Background::Solid { color: BACKGROUND_PALETTE[rng.random_range(0..BACKGROUND_PALETTE.len())] }
    };
    let mut objects = vec![ObjectSpec {
        kind: label.kind(),
        color: OBJECT_PALETTE[label.color_idx()].1,
        size_frac: rng.random_range(0.28..0.48),
        position: (rng.random::<f64>(), rng.random::<f64>()),
        velocity: (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)),
    }];
    for _ in 0..rng.random_range(cfg.distractors.0..=cfg.distractors.1) {
        objects.push(ObjectSpec {
            kind: SHAPE_KINDS[rng.random_range(0..SHAPE_KINDS.len())],
            color: [rng.random_range(0.2..0.9), rng.random_range(0.2..0.9), rng.random_range(0.2..0.9)],
            size_frac: rng.random_range(0.15..0.30),
            position: (rng.random::<f64>(), rng.random::<f64>()),
            velocity: (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)),
        });
    }
    SceneSpec { objects, background, label }
}

/// Generate an in-memory corpus with round-robin class coverage.
pub fn gen_corpus<S: Scalar>(cfg: &CorpusConfig, seed: u64) -> Result<Vec<(VideoClip<S>, Label)>> {
    cfg.validate()?;
    let mut out = Vec::with_capacity(cfg.num_clips);
    for k in 0..cfg.num_clips {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (k as u64).wrapping_mul(0xA076_1D64_78BD_642F));
        let label = Label((k % NUM_CLASSES) as u8);
        let scene = random_scene(label, cfg, &mut rng);
        let clip_seed = rng.random::<u64>();
        out.push(synth_clip(&scene, cfg.t, cfg.h, cfg.w, cfg.fps, clip_seed)?);
    }
    Ok(out)
}

/// Load a materialized corpus directory (manifest.json + rawvid clips).
pub fn load_corpus<S: Scalar>(dir: &Path) -> Result<Vec<(VideoClip<S>, Label)>> {
    let entries = videoio::read_manifest(&dir.join("manifest.json"))?;
    let mut out = Vec::with_capacity(entries.len());
    for entry in &entries {
        let path = dir.join(&entry.clip_path);
        let clip = videoio::load_clip(&path, ContainerFormat::Rawvid)?;
        out.push((clip, Label::from_name(&entry.label)?));
    }
    Ok(out)
}
