//! Clip containers: the `rawvid` binary format and `framedir` PNG directories.
//!
//! Pixel values live in real [0,1]; 8-bit payloads are mapped through v/255 on
//! load and round(v*255) on save, so the PNG path quantizes while the float
//! rawvid path round-trips exactly.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num::Scalar;
use crate::tensor::Tensor;

pub const RAWVID_MAGIC: &[u8; 4] = b"RVID";
pub const RAWVID_VERSION: u32 = 1;

/// Dense T x H x W x C video, values in [0,1], C is 3 for anything the
/// pipeline produces (the field exists so validation can flag bad inputs).
#[derive(Clone, Debug, PartialEq)]
pub struct VideoClip<S> {
    data: Vec<S>,
    t: usize,
    h: usize,
    w: usize,
    c: usize,
    pub fps: f64,
}

impl<S: Scalar> VideoClip<S> {
    pub fn new(t: usize, h: usize, w: usize, c: usize, fps: f64, data: Vec<S>) -> Self {
        assert_eq!(data.len(), t * h * w * c, "clip data length mismatch");
        VideoClip { data, t, h, w, c, fps }
    }

    pub fn new_rgb(t: usize, h: usize, w: usize, fps: f64, data: Vec<S>) -> Self {
        Self::new(t, h, w, 3, fps, data)
    }

    pub fn zeros(t: usize, h: usize, w: usize, fps: f64) -> Self {
        Self::new_rgb(t, h, w, fps, vec![S::zero(); t * h * w * 3])
    }

    #[inline]
    pub fn t(&self) -> usize {
        self.t
    }
    #[inline]
    pub fn h(&self) -> usize {
        self.h
    }
    #[inline]
    pub fn w(&self) -> usize {
        self.w
    }
    #[inline]
    pub fn c(&self) -> usize {
        self.c
    }
    pub fn geometry(&self) -> (usize, usize, usize) {
        (self.t, self.h, self.w)
    }

    #[inline]
    pub fn data(&self) -> &[S] {
        &self.data
    }
    #[inline]
    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    #[inline]
    pub fn frame(&self, t: usize) -> &[S] {
        let len = self.h * self.w * self.c;
        &self.data[t * len..(t + 1) * len]
    }
    #[inline]
    pub fn frame_mut(&mut self, t: usize) -> &mut [S] {
        let len = self.h * self.w * self.c;
        &mut self.data[t * len..(t + 1) * len]
    }

    #[inline]
    pub fn at(&self, t: usize, y: usize, x: usize, ch: usize) -> S {
        self.data[((t * self.h + y) * self.w + x) * self.c + ch]
    }
    #[inline]
    pub fn at_mut(&mut self, t: usize, y: usize, x: usize, ch: usize) -> &mut S {
        &mut self.data[((t * self.h + y) * self.w + x) * self.c + ch]
    }

    /// Clamp every value into [0,1] (used before export of raw model output).
    pub fn clamped(&self) -> VideoClip<S> {
        let mut out = self.clone();
        for v in out.data.iter_mut() {
            *v = v.max(S::zero()).min(S::one());
        }
        out
    }

    pub fn to_tensor(&self) -> Tensor<S> {
        Tensor::from_vec([1, self.t, self.h, self.w, self.c], self.data.clone())
    }

    /// Stack clips of identical geometry into a batch tensor.
    pub fn batch(clips: &[&VideoClip<S>]) -> Tensor<S> {
        assert!(!clips.is_empty());
        let (t, h, w, c) = (clips[0].t, clips[0].h, clips[0].w, clips[0].c);
        let mut out = Tensor::zeros([clips.len(), t, h, w, c]);
        for (i, clip) in clips.iter().enumerate() {
            assert_eq!((clip.t, clip.h, clip.w, clip.c), (t, h, w, c), "batch geometry mismatch");
            out.sample_mut(i).copy_from_slice(&clip.data);
        }
        out
    }

    /// Convert the scalar type (lossy when narrowing).
    pub fn cast<T: Scalar>(&self) -> VideoClip<T> {
        VideoClip {
            data: self.data.iter().map(|v| T::from_f64(v.as_f64())).collect(),
            t: self.t,
            h: self.h,
            w: self.w,
            c: self.c,
            fps: self.fps,
        }
    }
}

/// Container format for loading.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContainerFormat {
    Rawvid,
    Framedir,
}

/// On-disk encoding for saving.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StorageFormat {
    RawvidU8,
    RawvidF32,
    Framedir,
}

impl StorageFormat {
    pub fn container(self) -> ContainerFormat {
        match self {
            StorageFormat::RawvidU8 | StorageFormat::RawvidF32 => ContainerFormat::Rawvid,
            StorageFormat::Framedir => ContainerFormat::Framedir,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct FramedirMeta {
    fps: f64,
    frames: usize,
    height: usize,
    width: usize,
}

pub fn load_clip<S: Scalar>(path: &Path, format: ContainerFormat) -> Result<VideoClip<S>> {
    let clip = match format {
        ContainerFormat::Rawvid => load_rawvid(path)?,
        ContainerFormat::Framedir => load_framedir(path)?,
    };
    let violations = validate_clip(&clip);
    if violations.is_empty() {
        Ok(clip)
    } else {
        Err(Error::format(path, format!("decoded clip invalid: {}", violations.join("; "))))
    }
}

/// Load with the container inferred from the path (directory => framedir).
pub fn load_clip_auto<S: Scalar>(path: &Path) -> Result<VideoClip<S>> {
    let fmt = if path.is_dir() { ContainerFormat::Framedir } else { ContainerFormat::Rawvid };
    load_clip(path, fmt)
}

pub fn save_clip<S: Scalar>(clip: &VideoClip<S>, path: &Path, format: StorageFormat) -> Result<()> {
    let violations = validate_clip(clip);
    if !violations.is_empty() {
        return Err(Error::InvalidClip(violations));
    }
    match format {
        StorageFormat::RawvidU8 => save_rawvid(clip, path, 0),
        StorageFormat::RawvidF32 => save_rawvid(clip, path, 1),
        StorageFormat::Framedir => save_framedir(clip, path),
    }
}

/// Empty iff every `VideoClip` invariant holds. Violations are messages, not
/// errors, so callers can report all of them at once.
pub fn validate_clip<S: Scalar>(clip: &VideoClip<S>) -> Vec<String> {
    let mut violations = Vec::new();
    if clip.t == 0 || clip.h == 0 || clip.w == 0 {
        violations.push(format!("degenerate geometry {}x{}x{}", clip.t, clip.h, clip.w));
    }
    if clip.c != 3 {
        violations.push(format!("channel count {} != 3", clip.c));
    }
    let mut bad = 0usize;
    let mut worst = S::zero();
    for &v in clip.data.iter() {
        if !(v >= S::zero() && v <= S::one()) {
            bad += 1;
            let excess = if v > S::one() { v - S::one() } else { S::zero() - v };
            if !excess.is_finite() || excess > worst {
                worst = excess;
            }
        }
    }
    if bad > 0 {
        violations.push(format!("{bad} values outside [0,1] (worst excess {worst})"));
    }
    violations
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn load_rawvid<S: Scalar>(path: &Path) -> Result<VideoClip<S>> {
    let bytes = read_file(path)?;
    if bytes.len() < 28 {
        return Err(Error::format(path, "truncated header"));
    }
    if &bytes[0..4] != RAWVID_MAGIC {
        return Err(Error::format(path, "bad magic (not a rawvid file)"));
    }
    let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let version = u32_at(4);
    if version != RAWVID_VERSION {
        return Err(Error::format(path, format!("unsupported version {version}")));
    }
    let (t, h, w, c) = (u32_at(8) as usize, u32_at(12) as usize, u32_at(16) as usize, u32_at(20) as usize);
    let dtype = u32_at(24);
    let numel = t
        .checked_mul(h)
        .and_then(|v| v.checked_mul(w))
        .and_then(|v| v.checked_mul(c))
        .ok_or_else(|| Error::format(path, "dimension overflow"))?;
    let payload = &bytes[28..];
    let data: Vec<S> = match dtype {
        0 => {
            if payload.len() != numel {
                return Err(Error::format(path, format!("payload {} bytes, expected {numel}", payload.len())));
            }
            let inv = S::from_f64(1.0 / 255.0);
            payload.iter().map(|&b| S::from_usize(b as usize) * inv).collect()
        }
        1 => {
            if payload.len() != numel * 4 {
                return Err(Error::format(path, format!("payload {} bytes, expected {}", payload.len(), numel * 4)));
            }
            payload.chunks_exact(4).map(|ch| S::from_f64(f32::read_le(ch) as f64)).collect()
        }
        other => return Err(Error::format(path, format!("unknown dtype {other}"))),
    };
    Ok(VideoClip::new(t, h, w, c, 0.0, data))
}

fn save_rawvid<S: Scalar>(clip: &VideoClip<S>, path: &Path, dtype: u32) -> Result<()> {
    let mut out = Vec::with_capacity(28 + clip.data.len() * 4);
    out.extend_from_slice(RAWVID_MAGIC);
    for v in [RAWVID_VERSION, clip.t as u32, clip.h as u32, clip.w as u32, clip.c as u32, dtype] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    match dtype {
        0 => out.extend(clip.data.iter().map(|&v| quantize_u8(v))),
        1 => {
            for &v in clip.data.iter() {
                (v.as_f64() as f32).write_le(&mut out);
            }
        }
        _ => unreachable!(),
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[inline]
fn quantize_u8<S: Scalar>(v: S) -> u8 {
    (v.as_f64().clamp(0.0, 1.0) * 255.0).round() as u8
}

fn frame_name(i: usize) -> String {
    format!("frame_{i:05}.png")
}

fn save_framedir<S: Scalar>(clip: &VideoClip<S>, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for t in 0..clip.t {
        let path = dir.join(frame_name(t));
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut enc = png::Encoder::new(BufWriter::new(file), clip.w as u32, clip.h as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc
            .write_header()
            .map_err(|e| Error::Png { path: path.clone(), reason: e.to_string() })?;
        let bytes: Vec<u8> = clip.frame(t).iter().map(|&v| quantize_u8(v)).collect();
        writer
            .write_image_data(&bytes)
            .map_err(|e| Error::Png { path: path.clone(), reason: e.to_string() })?;
    }
    let meta = FramedirMeta { fps: clip.fps, frames: clip.t, height: clip.h, width: clip.w };
    let meta_path = dir.join("meta.json");
    let json = serde_json::to_string_pretty(&meta)?;
    fs::write(&meta_path, json).map_err(|e| Error::io(&meta_path, e))
}

fn load_framedir<S: Scalar>(dir: &Path) -> Result<VideoClip<S>> {
    let meta_path = dir.join("meta.json");
    let meta_bytes = read_file(&meta_path)?;
    let meta: FramedirMeta =
        serde_json::from_slice(&meta_bytes).map_err(|e| Error::format(&meta_path, format!("bad meta.json: {e}")))?;
    if meta.frames == 0 {
        return Err(Error::format(&meta_path, "frames = 0"));
    }
    let mut data = Vec::with_capacity(meta.frames * meta.height * meta.width * 3);
    let inv = S::from_f64(1.0 / 255.0);
    for t in 0..meta.frames {
        let path = dir.join(frame_name(t));
        let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
        let decoder = png::Decoder::new(BufReader::new(file));
        let mut reader = decoder
            .read_info()
            .map_err(|e| Error::Png { path: path.clone(), reason: e.to_string() })?;
        let mut buf = vec![0u8; reader.output_buffer_size().unwrap_or(0)];
        let info = reader
            .next_frame(&mut buf)
            .map_err(|e| Error::Png { path: path.clone(), reason: e.to_string() })?;
        if info.color_type != png::ColorType::Rgb || info.bit_depth != png::BitDepth::Eight {
            return Err(Error::format(&path, format!("expected 8-bit RGB, got {:?}/{:?}", info.color_type, info.bit_depth)));
        }
        if info.width as usize != meta.width || info.height as usize != meta.height {
            return Err(Error::format(
                &path,
                format!("frame size {}x{} mismatches meta {}x{}", info.width, info.height, meta.width, meta.height),
            ));
        }
        data.extend(buf[..info.buffer_size()].iter().map(|&b| S::from_usize(b as usize) * inv));
    }
    Ok(VideoClip::new_rgb(meta.frames, meta.height, meta.width, meta.fps, data))
}

/// One corpus entry: a stored clip plus its class label name.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct ManifestEntry {
    pub clip_path: PathBuf,
    pub label: String,
}

/// Read a corpus manifest (JSON list of {clip_path, label}).
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let bytes = read_file(path)?;
    serde_json::from_slice(&bytes).map_err(|e| Error::format(path, format!("bad manifest: {e}")))
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let json = serde_json::to_string_pretty(entries)?;
    fs::write(path, json).map_err(|e| Error::io(path, e))
}

/// Write bytes atomically: temp file in the target directory, then rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// FNV-1a digest of a file or of every file under a directory; used for the
/// input digests in run manifests.
pub fn digest_path(path: &Path) -> Result<String> {
    fn fnv(bytes: &[u8], mut hash: u64) -> u64 {
        for &b in bytes {
            hash ^= b as u64;
            hash = hash.wrapping_mul(0x100000001b3);
        }
        hash
    }
    let mut hash = 0xcbf29ce484222325u64;
    if path.is_dir() {
        let mut names: Vec<PathBuf> = fs::read_dir(path)
            .map_err(|e| Error::io(path, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .collect();
        names.sort();
        for name in names {
            hash = fnv(name.file_name().unwrap_or_default().as_encoded_bytes(), hash);
            if name.is_file() {
                let mut f = File::open(&name).map_err(|e| Error::io(&name, e))?;
                let mut buf = [0u8; 8192];
                loop {
                    let n = f.read(&mut buf).map_err(|e| Error::io(&name, e))?;
                    if n == 0 {
                        break;
                    }
                    hash = fnv(&buf[..n], hash);
                }
            }
        }
    } else {
        hash = fnv(&read_file(path)?, hash);
    }
    Ok(format!("{hash:016x}"))
}
