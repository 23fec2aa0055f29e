//! Objective math: gradient-augmented L1 reconstruction loss, the
//! permutation-invariant assignment loss, diversity metric, the optional
//! consistency / diversity-penalty terms, and output-pair selection.
//!
//! All reductions are means, so values are comparable across resolutions.

use crate::model::LayerSet;
use crate::num::Scalar;
use crate::videoio::VideoClip;

/// Borrowed view of a T x H x W x C video. `cstride`/`coff` let a single
/// layer of a channel-packed [`LayerSet`] be viewed without copying: pixel
/// (t,y,x) starts at `((t*h+y)*w+x)*cstride + coff` and its `c` channels are
/// contiguous from there.
#[derive(Clone, Copy)]
pub struct VidRef<'a, S> {
    pub data: &'a [S],
    pub t: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub cstride: usize,
    pub coff: usize,
}

impl<'a, S: Scalar> VidRef<'a, S> {
    pub fn contiguous(data: &'a [S], t: usize, h: usize, w: usize, c: usize) -> Self {
        assert_eq!(data.len(), t * h * w * c);
        VidRef { data, t, h, w, c, cstride: c, coff: 0 }
    }

    #[inline]
    pub fn pixel_base(&self, t: usize, y: usize, x: usize) -> usize {
        ((t * self.h + y) * self.w + x) * self.cstride + self.coff
    }

    #[inline]
    pub fn at(&self, t: usize, y: usize, x: usize, ch: usize) -> S {
        self.data[self.pixel_base(t, y, x) + ch]
    }

    pub fn same_geometry(&self, other: &VidRef<S>) -> bool {
        (self.t, self.h, self.w, self.c) == (other.t, other.h, other.w, other.c)
    }
}

impl<'a, S: Scalar> From<&'a VideoClip<S>> for VidRef<'a, S> {
    fn from(clip: &'a VideoClip<S>) -> Self {
        VidRef::contiguous(clip.data(), clip.t(), clip.h(), clip.w(), clip.c())
    }
}

/// Which output layer reconstructs which source: layer `i` is matched to the
/// first source, layer `j` to the second. Indices are 0-based and distinct.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Assignment {
    pub i: usize,
    pub j: usize,
}

/// Per-sample loss breakdown. `total = l1 + l2`; the optional terms are
/// reported separately and never folded into `total`.
#[derive(Clone, Copy, Debug)]
pub struct LossReport<S> {
    pub total: S,
    pub assignment: Assignment,
    pub l1: S,
    pub l2: S,
    pub diversity: S,
    pub consistency: Option<S>,
    pub diversity_penalty: Option<S>,
}

impl<S: Scalar> LossReport<S> {
    pub fn to_json(&self) -> serde_json::Value {
        let mut map = serde_json::Map::new();
        map.insert("total".into(), self.total.as_f64().into());
        map.insert("i".into(), self.assignment.i.into());
        map.insert("j".into(), self.assignment.j.into());
        map.insert("l1".into(), self.l1.as_f64().into());
        map.insert("l2".into(), self.l2.as_f64().into());
        map.insert("diversity".into(), self.diversity.as_f64().into());
        if let Some(c) = self.consistency {
            map.insert("consistency".into(), c.as_f64().into());
        }
        if let Some(d) = self.diversity_penalty {
            map.insert("diversity_penalty".into(), d.as_f64().into());
        }
        serde_json::Value::Object(map)
    }
}

/// Forward-difference spatial gradient of one H x W x C frame, concatenated
/// as H x W x 2C (all `Gx` channels, then all `Gy`). The far row/column is
/// zero so the output keeps the input geometry.
pub fn spatial_gradient<S: Scalar>(frame: &[S], h: usize, w: usize, c: usize) -> Vec<S> {
    assert_eq!(frame.len(), h * w * c);
    let mut out = vec![S::zero(); h * w * 2 * c];
    for y in 0..h {
        for x in 0..w {
            let base = (y * w + x) * c;
            let obase = (y * w + x) * 2 * c;
            for ch in 0..c {
                if x + 1 < w {
                    out[obase + ch] = frame[base + c + ch] - frame[base + ch];
                }
                if y + 1 < h {
                    out[obase + c + ch] = frame[base + w * c + ch] - frame[base + ch];
                }
            }
        }
    }
    out
}

/// Reconstruction distance: mean absolute difference of values plus mean
/// absolute difference of spatial gradients, averaged as (1/2T) * sum over
/// frames of the two per-frame means.
pub fn recon_loss<S: Scalar>(u: VidRef<S>, v: VidRef<S>) -> S {
    assert!(u.same_geometry(&v), "recon_loss geometry mismatch");
    let (t, h, w, c) = (u.t, u.h, u.w, u.c);
    let m_abs = S::from_usize(h * w * c);
    let m_grad = S::from_usize(h * w * 2 * c);
    let mut acc = S::zero();
    for ti in 0..t {
        let mut abs_sum = S::zero();
        let mut grad_sum = S::zero();
        for y in 0..h {
            for x in 0..w {
                let ub = u.pixel_base(ti, y, x);
                let vb = v.pixel_base(ti, y, x);
                for ch in 0..c {
                    let d = u.data[ub + ch] - v.data[vb + ch];
                    abs_sum += d.abs();
                    if x + 1 < w {
                        let dr = u.data[ub + u.cstride + ch] - v.data[vb + v.cstride + ch];
                        grad_sum += (dr - d).abs();
                    }
                    if y + 1 < h {
                        let dd = u.data[ub + w * u.cstride + ch] - v.data[vb + w * v.cstride + ch];
                        grad_sum += (dd - d).abs();
                    }
                }
            }
        }
        acc += abs_sum / m_abs + grad_sum / m_grad;
    }
    acc / S::from_usize(2 * t)
}

#[inline]
fn sgn<S: Scalar>(v: S) -> S {
    if v > S::zero() {
        S::one()
    } else if v < S::zero() {
        -S::one()
    } else {
        S::zero()
    }
}

/// d recon_loss / d u, written into `grad` through `u`'s layout (so a layer
/// view scatters into its slot of the packed gradient buffer). The gradient
/// with respect to `v` is the negation. `scale` premultiplies everything.
pub fn recon_loss_grad_into<S: Scalar>(u: VidRef<S>, v: VidRef<S>, scale: S, grad: &mut [S]) {
    assert!(u.same_geometry(&v), "recon_loss_grad geometry mismatch");
    assert_eq!(grad.len(), u.data.len());
    let (t, h, w, c) = (u.t, u.h, u.w, u.c);
    let a = scale / (S::from_usize(2 * t) * S::from_usize(h * w * c));
    let g = scale / (S::from_usize(2 * t) * S::from_usize(h * w * 2 * c));
    // Per-frame sign maps of the forward differences, then each element
    // collects its own abs sign plus the two difference terms it enters.
    let mut sx = vec![S::zero(); h * w * c];
    let mut sy = vec![S::zero(); h * w * c];
    for ti in 0..t {
        for y in 0..h {
            for x in 0..w {
                let ub = u.pixel_base(ti, y, x);
                let vb = v.pixel_base(ti, y, x);
                let fb = (y * w + x) * c;
                for ch in 0..c {
                    let d = u.data[ub + ch] - v.data[vb + ch];
                    sx[fb + ch] = if x + 1 < w {
                        sgn((u.data[ub + u.cstride + ch] - v.data[vb + v.cstride + ch]) - d)
                    } else {
                        S::zero()
                    };
                    sy[fb + ch] = if y + 1 < h {
                        sgn((u.data[ub + w * u.cstride + ch] - v.data[vb + w * v.cstride + ch]) - d)
                    } else {
                        S::zero()
                    };
                }
            }
        }
        for y in 0..h {
            for x in 0..w {
                let ub = u.pixel_base(ti, y, x);
                let vb = v.pixel_base(ti, y, x);
                let fb = (y * w + x) * c;
                for ch in 0..c {
                    let d = u.data[ub + ch] - v.data[vb + ch];
                    let mut dv = a * sgn(d);
                    // x-differences: enters Gx[y][x-1] with +, Gx[y][x] with -.
                    if x > 0 {
                        dv += g * sx[fb - c + ch];
                    }
                    dv -= g * sx[fb + ch];
                    if y > 0 {
                        dv += g * sy[fb - w * c + ch];
                    }
                    dv -= g * sy[fb + ch];
                    grad[ub + ch] += dv;
                }
            }
        }
    }
}

/// Permutation-invariant loss: exhaustive minimum over ordered pairs (i,j),
/// i != j, of `recon(v1, O_i) + recon(v2, O_j)`; ties resolve to the lexico-
/// graphically smallest pair. Also reports the diversity metric.
pub fn pit_loss<S: Scalar>(v1: &VideoClip<S>, v2: &VideoClip<S>, layers: &LayerSet<S>) -> LossReport<S> {
    let (assignment, l1, l2) = pit_assignment(v1, v2, layers);
    LossReport {
        total: l1 + l2,
        assignment,
        l1,
        l2,
        diversity: diversity_score(layers),
        consistency: None,
        diversity_penalty: None,
    }
}

/// The assignment search alone (no diversity metric); this is the training
/// hot path.
pub fn pit_assignment<S: Scalar>(
    v1: &VideoClip<S>,
    v2: &VideoClip<S>,
    layers: &LayerSet<S>,
) -> (Assignment, S, S) {
    let n = layers.n_layers();
    assert!(n >= 2, "pit_loss needs at least two layers");
    let a: Vec<S> = (0..n).map(|i| recon_loss(v1.into(), layers.layer(i))).collect();
    let b: Vec<S> = (0..n).map(|j| recon_loss(v2.into(), layers.layer(j))).collect();
    let mut best = Assignment { i: 0, j: 1 };
    let mut best_total = S::infinity();
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let total = a[i] + b[j];
            if total < best_total {
                best_total = total;
                best = Assignment { i, j };
            }
        }
    }
    (best, a[best.i], b[best.j])
}

/// d pit_loss / d layers, nonzero only for the selected pair (the loss is
/// differentiable almost everywhere through the argmin). Scattered into a
/// T x H x W x 3n buffer matching the layer-set layout, scaled by `scale`.
pub fn pit_loss_grad_into<S: Scalar>(
    v1: &VideoClip<S>,
    v2: &VideoClip<S>,
    layers: &LayerSet<S>,
    assignment: Assignment,
    scale: S,
    grad: &mut [S],
) {
    assert_eq!(grad.len(), layers.data().len());
    let li = layers.layer(assignment.i);
    let lj = layers.layer(assignment.j);
    recon_loss_grad_into(li, v1.into(), scale, grad);
    recon_loss_grad_into(lj, v2.into(), scale, grad);
}

/// Minimum pairwise reconstruction distance among the output layers; high
/// values mean the hypotheses disagree (ambiguous separations).
pub fn diversity_score<S: Scalar>(layers: &LayerSet<S>) -> S {
    let n = layers.n_layers();
    assert!(n >= 2, "diversity_score needs at least two layers");
    let mut best = S::infinity();
    for i in 0..n {
        for j in (i + 1)..n {
            let d = recon_loss(layers.layer(i), layers.layer(j));
            if d < best {
                best = d;
            }
        }
    }
    best
}

/// Optional term: distance between the input and the alpha-weighted
/// recomposition of the matched pair.
pub fn consistency_loss<S: Scalar>(
    v: &VideoClip<S>,
    layers: &LayerSet<S>,
    assignment: Assignment,
    alpha: S,
) -> S {
    let (t, h, w) = (layers.t(), layers.h(), layers.w());
    let li = layers.layer(assignment.i);
    let lj = layers.layer(assignment.j);
    let mut recomposed = vec![S::zero(); t * h * w * 3];
    let one_m = S::one() - alpha;
    for ti in 0..t {
        for y in 0..h {
            for x in 0..w {
                let ib = li.pixel_base(ti, y, x);
                let jb = lj.pixel_base(ti, y, x);
                let ob = ((ti * h + y) * w + x) * 3;
                for ch in 0..3 {
                    recomposed[ob + ch] = one_m * li.data[ib + ch] + alpha * lj.data[jb + ch];
                }
            }
        }
    }
    recon_loss(VidRef::contiguous(&recomposed, t, h, w, 3), v.into())
}

/// Gradient of the consistency term with respect to the layer set.
pub fn consistency_loss_grad_into<S: Scalar>(
    v: &VideoClip<S>,
    layers: &LayerSet<S>,
    assignment: Assignment,
    alpha: S,
    scale: S,
    grad: &mut [S],
) {
    let (t, h, w) = (layers.t(), layers.h(), layers.w());
    let li = layers.layer(assignment.i);
    let lj = layers.layer(assignment.j);
    let one_m = S::one() - alpha;
    let mut recomposed = vec![S::zero(); t * h * w * 3];
    for ti in 0..t {
        for y in 0..h {
            for x in 0..w {
                let ib = li.pixel_base(ti, y, x);
                let jb = lj.pixel_base(ti, y, x);
                let ob = ((ti * h + y) * w + x) * 3;
                for ch in 0..3 {
                    recomposed[ob + ch] = one_m * li.data[ib + ch] + alpha * lj.data[jb + ch];
                }
            }
        }
    }
    let mut d_recomposed = vec![S::zero(); t * h * w * 3];
    recon_loss_grad_into(
        VidRef::contiguous(&recomposed, t, h, w, 3),
        v.into(),
        scale,
        &mut d_recomposed,
    );
    let cs = layers.n_layers() * 3;
    for p in 0..t * h * w {
        for ch in 0..3 {
            let g = d_recomposed[p * 3 + ch];
            grad[p * cs + assignment.i * 3 + ch] += one_m * g;
            grad[p * cs + assignment.j * 3 + ch] += alpha * g;
        }
    }
}

/// Optional term: negated distance between the matched layers (pushes them
/// apart when enabled).
pub fn diversity_penalty<S: Scalar>(layers: &LayerSet<S>, assignment: Assignment) -> S {
    -recon_loss(layers.layer(assignment.i), layers.layer(assignment.j))
}

/// Gradient of the diversity penalty with respect to the layer set.
pub fn diversity_penalty_grad_into<S: Scalar>(
    layers: &LayerSet<S>,
    assignment: Assignment,
    scale: S,
    grad: &mut [S],
) {
    let li = layers.layer(assignment.i);
    let lj = layers.layer(assignment.j);
    recon_loss_grad_into(li, lj, -scale, grad);
    recon_loss_grad_into(lj, li, -scale, grad);
}

/// Pick the two most distant outputs in plain pixel space (mean absolute
/// difference, no gradient term); ties resolve lexicographically.
pub fn select_two<S: Scalar>(layers: &LayerSet<S>) -> Assignment {
    let n = layers.n_layers();
    assert!(n >= 2, "select_two needs at least two layers");
    let mut best = Assignment { i: 0, j: 1 };
    let mut best_dist = S::neg_infinity();
    for i in 0..n {
        for j in (i + 1)..n {
            let (a, b) = (layers.layer(i), layers.layer(j));
            let mut sum = S::zero();
            for ti in 0..a.t {
                for y in 0..a.h {
                    for x in 0..a.w {
                        let ab = a.pixel_base(ti, y, x);
                        let bb = b.pixel_base(ti, y, x);
                        for ch in 0..3 {
                            sum += (a.data[ab + ch] - b.data[bb + ch]).abs();
                        }
                    }
                }
            }
            let dist = sum / S::from_usize(a.t * a.h * a.w * 3);
            if dist > best_dist {
                best_dist = dist;
                best = Assignment { i, j };
            }
        }
    }
    best
}
