//! Building blocks of the separation network: 3D convolution and its
//! transpose (implemented as the exact adjoint), batch normalization, and a
//! dense layer for the downstream classifier. Every block carries its own
//! gradients and caches whatever its backward pass needs.
//!
//! Convolutions use ceil-mode same padding: each output dimension is
//! `ceil(in/stride)`, with the deficit split low/high. The transposed
//! convolution maps back to an explicit target size, so encoder/decoder
//! geometry round-trips exactly at any input size.

use rayon::prelude::*;

use crate::num::{matmul, matmul_a_bt, matmul_at_b, Scalar};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub kernel: (usize, usize, usize),
    pub stride: (usize, usize, usize),
}

impl ConvGeom {
    pub fn unit(kernel: (usize, usize, usize)) -> Self {
        ConvGeom { kernel, stride: (1, 1, 1) }
    }

    fn out_dims(&self, t: usize, h: usize, w: usize) -> (usize, usize, usize) {
        (t.div_ceil(self.stride.0), h.div_ceil(self.stride.1), w.div_ceil(self.stride.2))
    }

    fn k_len(&self, cin: usize) -> usize {
        self.kernel.0 * self.kernel.1 * self.kernel.2 * cin
    }
}

/// Low-side padding for ceil-mode same convolution.
fn pad_lo(in_d: usize, out_d: usize, k: usize, s: usize) -> isize {
    let total = ((out_d - 1) * s + k).saturating_sub(in_d);
    (total / 2) as isize
}

/// Direct (no-im2col) convolution kernels. With channels last and the
/// narrow channel counts this network uses, streaming rank-1 updates beat
/// packing skinny matrices for GEMM by a wide margin.
///
/// Valid kernel-tap ranges are hoisted per output coordinate so the inner
/// loops run branch-free, and each output pixel accumulates in a small
/// scratch row that stays hot in L1.
fn tap_ranges(out_d: usize, k: usize, s: usize, pad: isize, in_d: usize) -> Vec<(usize, usize)> {
    (0..out_d)
        .map(|o| {
            let start = (o * s) as isize - pad;
            let lo = (-start).clamp(0, k as isize) as usize;
            let hi = (in_d as isize - start).clamp(0, k as isize) as usize;
            (lo, hi.max(lo))
        })
        .collect()
}

struct ConvPlan {
    ot: usize,
    oh: usize,
    ow: usize,
    kh: usize,
    kw: usize,
    st: usize,
    sh: usize,
    sw: usize,
    pt: isize,
    ph: isize,
    pw: isize,
    rt: Vec<(usize, usize)>,
    rh: Vec<(usize, usize)>,
    rw: Vec<(usize, usize)>,
}

impl ConvPlan {
    fn new(t: usize, h: usize, w: usize, geom: &ConvGeom) -> Self {
        let (ot, oh, ow) = geom.out_dims(t, h, w);
        let (kt, kh, kw) = geom.kernel;
        let (st, sh, sw) = geom.stride;
        let pt = pad_lo(t, ot, kt, st);
        let ph = pad_lo(h, oh, kh, sh);
        let pw = pad_lo(w, ow, kw, sw);
        ConvPlan {
            ot,
            oh,
            ow,
            kh,
            kw,
            st,
            sh,
            sw,
            pt,
            ph,
            pw,
            rt: tap_ranges(ot, kt, st, pt, t),
            rh: tap_ranges(oh, kh, sh, ph, h),
            rw: tap_ranges(ow, kw, sw, pw, w),
        }
    }
}

/// Const-width workers: with the channel count known at compile time the
/// per-pixel accumulator lives in registers and the inner loops vectorize.
macro_rules! dispatch_width {
    ($n:expr, $worker:ident, $fallback:expr, ($($a:expr),*)) => {
        match $n {
            2 => $worker::<S, 2>($($a),*),
            3 => $worker::<S, 3>($($a),*),
            4 => $worker::<S, 4>($($a),*),
            6 => $worker::<S, 6>($($a),*),
            8 => $worker::<S, 8>($($a),*),
            12 => $worker::<S, 12>($($a),*),
            16 => $worker::<S, 16>($($a),*),
            24 => $worker::<S, 24>($($a),*),
            32 => $worker::<S, 32>($($a),*),
            36 => $worker::<S, 36>($($a),*),
            48 => $worker::<S, 48>($($a),*),
            64 => $worker::<S, 64>($($a),*),
            96 => $worker::<S, 96>($($a),*),
            128 => $worker::<S, 128>($($a),*),
            _ => $fallback,
        }
    };
}

#[allow(clippy::too_many_arguments)]
fn conv_fwd_w<S: Scalar, const COUT: usize>(
    x: &[S],
    t: usize,
    h: usize,
    w: usize,
    cin: usize,
    wmat: &[S],
    b: &[S],
    geom: &ConvGeom,
    y: &mut [S],
) {
    let p = ConvPlan::new(t, h, w, geom);
    let bias: [S; COUT] = b.try_into().expect("bias width");
    let mut out = 0usize;
    for to in 0..p.ot {
        let t0 = (to * p.st) as isize - p.pt;
        for yo in 0..p.oh {
            let y0 = (yo * p.sh) as isize - p.ph;
            for xo in 0..p.ow {
                let x0 = (xo * p.sw) as isize - p.pw;
                let mut acc = bias;
                for dt in p.rt[to].0..p.rt[to].1 {
                    let ti = (t0 + dt as isize) as usize;
                    for dy in p.rh[yo].0..p.rh[yo].1 {
                        let yi = (y0 + dy as isize) as usize;
                        let row = (ti * h + yi) * w;
                        let tap_row = (dt * p.kh + dy) * p.kw;
                        for dx in p.rw[xo].0..p.rw[xo].1 {
                            let xi = (x0 + dx as isize) as usize;
                            let xrow = &x[(row + xi) * cin..][..cin];
                            let wtap = &wmat[(tap_row + dx) * cin * COUT..][..cin * COUT];
                            for (ci, &v) in xrow.iter().enumerate() {
                                let wrow = &wtap[ci * COUT..][..COUT];
                                for co in 0..COUT {
                                    acc[co] = acc[co] + v * wrow[co];
                                }
                            }
                        }
                    }
                }
                y[out..out + COUT].copy_from_slice(&acc);
                out += COUT;
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv_bwd_input_w<S: Scalar, const COUT: usize>(
    dy: &[S],
    t: usize,
    h: usize,
    w: usize,
    cin: usize,
    wmat: &[S],
    geom: &ConvGeom,
    dx: &mut [S],
) {
    let p = ConvPlan::new(t, h, w, geom);
    let mut out = 0usize;
    for to in 0..p.ot {
        let t0 = (to * p.st) as isize - p.pt;
        for yo in 0..p.oh {
            let y0 = (yo * p.sh) as isize - p.ph;
            for xo in 0..p.ow {
                let x0 = (xo * p.sw) as isize - p.pw;
                let dyrow: [S; COUT] = dy[out..out + COUT].try_into().expect("dy width");
                out += COUT;
                for dt in p.rt[to].0..p.rt[to].1 {
                    let ti = (t0 + dt as isize) as usize;
                    for dy_ in p.rh[yo].0..p.rh[yo].1 {
                        let yi = (y0 + dy_ as isize) as usize;
                        let row = (ti * h + yi) * w;
                        let tap_row = (dt * p.kh + dy_) * p.kw;
                        for dx_ in p.rw[xo].0..p.rw[xo].1 {
                            let xi = (x0 + dx_ as isize) as usize;
                            let dxrow = &mut dx[(row + xi) * cin..][..cin];
                            let wtap = &wmat[(tap_row + dx_) * cin * COUT..][..cin * COUT];
                            for (ci, a) in dxrow.iter_mut().enumerate() {
                                let wrow = &wtap[ci * COUT..][..COUT];
                                let mut s = S::zero();
                                for co in 0..COUT {
                                    s = s + dyrow[co] * wrow[co];
                                }
                                *a += s;
                            }
                        }
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv_bwd_weight_w<S: Scalar, const COUT: usize>(
    x: &[S],
    dy: &[S],
    t: usize,
    h: usize,
    w: usize,
    cin: usize,
    geom: &ConvGeom,
    gw: &mut [S],
) {
    let p = ConvPlan::new(t, h, w, geom);
    let mut out = 0usize;
    for to in 0..p.ot {
        let t0 = (to * p.st) as isize - p.pt;
        for yo in 0..p.oh {
            let y0 = (yo * p.sh) as isize - p.ph;
            for xo in 0..p.ow {
                let x0 = (xo * p.sw) as isize - p.pw;
                let dyrow: [S; COUT] = dy[out..out + COUT].try_into().expect("dy width");
                out += COUT;
                for dt in p.rt[to].0..p.rt[to].1 {
                    let ti = (t0 + dt as isize) as usize;
                    for dy_ in p.rh[yo].0..p.rh[yo].1 {
                        let yi = (y0 + dy_ as isize) as usize;
                        let row = (ti * h + yi) * w;
                        let tap_row = (dt * p.kh + dy_) * p.kw;
                        for dx_ in p.rw[xo].0..p.rw[xo].1 {
                            let xi = (x0 + dx_ as isize) as usize;
                            let xrow = &x[(row + xi) * cin..][..cin];
                            let gtap = &mut gw[(tap_row + dx_) * cin * COUT..][..cin * COUT];
                            for (ci, &v) in xrow.iter().enumerate() {
                                let grow = &mut gtap[ci * COUT..][..COUT];
                                for co in 0..COUT {
                                    grow[co] = grow[co] + v * dyrow[co];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// y[out, co] = bias[co] + sum over taps/ci of x[in, ci] * w[(tap*cin+ci), co]
#[allow(clippy::too_many_arguments)]
fn conv_fwd_direct<S: Scalar>(
    x: &[S],
    t: usize,
    h: usize,
    w: usize,
    cin: usize,
    wmat: &[S],
    b: &[S],
    cout: usize,
    geom: &ConvGeom,
    y: &mut [S],
) {
    dispatch_width!(cout, conv_fwd_w, conv_fwd_fallback(x, t, h, w, cin, wmat, b, cout, geom, y), (x, t, h, w, cin, wmat, b, geom, y))
}

#[allow(clippy::too_many_arguments)]
fn conv_fwd_fallback<S: Scalar>(
    x: &[S],
    t: usize,
    h: usize,
    w: usize,
    cin: usize,
    wmat: &[S],
    b: &[S],
    cout: usize,
    geom: &ConvGeom,
    y: &mut [S],
) {
    let p = ConvPlan::new(t, h, w, geom);
    let mut acc = vec![S::zero(); cout];
    let mut out = 0usize;
    for to in 0..p.ot {
        let t0 = (to * p.st) as isize - p.pt;
        for yo in 0..p.oh {
            let y0 = (yo * p.sh) as isize - p.ph;
            for xo in 0..p.ow {
                let x0 = (xo * p.sw) as isize - p.pw;
                acc.copy_from_slice(b);
                for dt in p.rt[to].0..p.rt[to].1 {
                    let ti = (t0 + dt as isize) as usize;
                    for dy in p.rh[yo].0..p.rh[yo].1 {
                        let yi = (y0 + dy as isize) as usize;
                        let row = (ti * h + yi) * w;
                        let tap_row = (dt * p.kh + dy) * p.kw;
                        for dx in p.rw[xo].0..p.rw[xo].1 {
                            let xi = (x0 + dx as isize) as usize;
                            let xrow = &x[(row + xi) * cin..][..cin];
                            let wtap = &wmat[(tap_row + dx) * cin * cout..][..cin * cout];
                            for (ci, &v) in xrow.iter().enumerate() {
                                let wrow = &wtap[ci * cout..][..cout];
                                for (a, &wv) in acc.iter_mut().zip(wrow) {
                                    *a += v * wv;
                                }
                            }
                        }
                    }
                }
                y[out..out + cout].copy_from_slice(&acc);
                out += cout;
            }
        }
    }
}

/// dx[in, ci] += sum over co of dy[out, co] * w[(tap*cin+ci), co]
#[allow(clippy::too_many_arguments)]
fn conv_bwd_input_direct<S: Scalar>(
    dy: &[S],
    t: usize,
    h: usize,
    w: usize,
    cin: usize,
    wmat: &[S],
    cout: usize,
    geom: &ConvGeom,
    dx: &mut [S],
) {
    dispatch_width!(cout, conv_bwd_input_w, conv_bwd_input_fallback(dy, t, h, w, cin, wmat, cout, geom, dx), (dy, t, h, w, cin, wmat, geom, dx))
}

#[allow(clippy::too_many_arguments)]
fn conv_bwd_input_fallback<S: Scalar>(
    dy: &[S],
    t: usize,
    h: usize,
    w: usize,
    cin: usize,
    wmat: &[S],
    cout: usize,
    geom: &ConvGeom,
    dx: &mut [S],
) {
    let p = ConvPlan::new(t, h, w, geom);
    let mut out = 0usize;
    for to in 0..p.ot {
        let t0 = (to * p.st) as isize - p.pt;
        for yo in 0..p.oh {
            let y0 = (yo * p.sh) as isize - p.ph;
            for xo in 0..p.ow {
                let x0 = (xo * p.sw) as isize - p.pw;
                let dyrow = &dy[out..out + cout];
                out += cout;
                for dt in p.rt[to].0..p.rt[to].1 {
                    let ti = (t0 + dt as isize) as usize;
                    for dy_ in p.rh[yo].0..p.rh[yo].1 {
                        let yi = (y0 + dy_ as isize) as usize;
                        let row = (ti * h + yi) * w;
                        let tap_row = (dt * p.kh + dy_) * p.kw;
                        for dx_ in p.rw[xo].0..p.rw[xo].1 {
                            let xi = (x0 + dx_ as isize) as usize;
                            let dxrow = &mut dx[(row + xi) * cin..][..cin];
                            let wtap = &wmat[(tap_row + dx_) * cin * cout..][..cin * cout];
                            for (ci, a) in dxrow.iter_mut().enumerate() {
                                let wrow = &wtap[ci * cout..][..cout];
                                let mut s = S::zero();
                                for (&g, &wv) in dyrow.iter().zip(wrow) {
                                    s += g * wv;
                                }
                                *a += s;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// gw[(tap*cin+ci), co] += x[in, ci] * dy[out, co]
#[allow(clippy::too_many_arguments)]
fn conv_bwd_weight_direct<S: Scalar>(
    x: &[S],
    dy: &[S],
    t: usize,
    h: usize,
    w: usize,
    cin: usize,
    cout: usize,
    geom: &ConvGeom,
    gw: &mut [S],
) {
    dispatch_width!(cout, conv_bwd_weight_w, conv_bwd_weight_fallback(x, dy, t, h, w, cin, cout, geom, gw), (x, dy, t, h, w, cin, geom, gw))
}

#[allow(clippy::too_many_arguments)]
fn conv_bwd_weight_fallback<S: Scalar>(
    x: &[S],
    dy: &[S],
    t: usize,
    h: usize,
    w: usize,
    cin: usize,
    cout: usize,
    geom: &ConvGeom,
    gw: &mut [S],
) {
    let p = ConvPlan::new(t, h, w, geom);
    let mut out = 0usize;
    for to in 0..p.ot {
        let t0 = (to * p.st) as isize - p.pt;
        for yo in 0..p.oh {
            let y0 = (yo * p.sh) as isize - p.ph;
            for xo in 0..p.ow {
                let x0 = (xo * p.sw) as isize - p.pw;
                let dyrow = &dy[out..out + cout];
                out += cout;
                for dt in p.rt[to].0..p.rt[to].1 {
                    let ti = (t0 + dt as isize) as usize;
                    for dy_ in p.rh[yo].0..p.rh[yo].1 {
                        let yi = (y0 + dy_ as isize) as usize;
                        let row = (ti * h + yi) * w;
                        let tap_row = (dt * p.kh + dy_) * p.kw;
                        for dx_ in p.rw[xo].0..p.rw[xo].1 {
                            let xi = (x0 + dx_ as isize) as usize;
                            let xrow = &x[(row + xi) * cin..][..cin];
                            let gtap = &mut gw[(tap_row + dx_) * cin * cout..][..cin * cout];
                            for (ci, &v) in xrow.iter().enumerate() {
                                let grow = &mut gtap[ci * cout..][..cout];
                                for (a, &g) in grow.iter_mut().zip(dyrow) {
                                    *a += v * g;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

fn bias_grad<S: Scalar>(dy: &[S], cout: usize, gb: &mut [S]) {
    for row in dy.chunks_exact(cout) {
        for (acc, &g) in gb.iter_mut().zip(row) {
            *acc += g;
        }
    }
}

fn he_normal<S: Scalar>(rng: &mut rand_chacha::ChaCha8Rng, fan_in: usize, len: usize) -> Vec<S> {
    use rand::Rng;
    let std = (2.0 / fan_in as f64).sqrt();
    (0..len)
        .map(|_| {
            let u1: f64 = rng.random::<f64>().max(1e-12);
            let u2: f64 = rng.random();
            let z = (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
            S::from_f64(z * std)
        })
        .collect()
}

/// 3D convolution, weight layout [K, cout] with K indexed by
/// ((dt*kh+dy)*kw+dx)*cin + ci.
pub struct Conv3d<S> {
    pub name: String,
    pub cin: usize,
    pub cout: usize,
    pub geom: ConvGeom,
    pub w: Vec<S>,
    pub b: Vec<S>,
    pub gw: Vec<S>,
    pub gb: Vec<S>,
    saved_input: Option<Tensor<S>>,
}

impl<S: Scalar> Conv3d<S> {
    pub fn new(name: &str, cin: usize, cout: usize, geom: ConvGeom, rng: &mut rand_chacha::ChaCha8Rng) -> Self {
        let k_len = geom.k_len(cin);
        Conv3d {
            name: name.to_string(),
            cin,
            cout,
            geom,
            w: he_normal(rng, k_len, k_len * cout),
            b: vec![S::zero(); cout],
            gw: vec![S::zero(); k_len * cout],
            gb: vec![S::zero(); cout],
            saved_input: None,
        }
    }

    pub fn out_dims(&self, t: usize, h: usize, w: usize) -> (usize, usize, usize) {
        self.geom.out_dims(t, h, w)
    }

    pub fn forward(&mut self, x: &Tensor<S>) -> Tensor<S> {
        assert_eq!(x.c(), self.cin, "{}: input channels", self.name);
        let (ot, oh, ow) = self.geom.out_dims(x.t(), x.h(), x.w());
        let mut y = Tensor::zeros([x.n(), ot, oh, ow, self.cout]);
        let p = ot * oh * ow;
        let in_len = x.sample_len();
        let (geom, cin, cout) = (self.geom, self.cin, self.cout);
        let (w, b) = (&self.w, &self.b);
        let (t, h, wd) = (x.t(), x.h(), x.w());
        y.data_mut()
            .par_chunks_mut(p * cout)
            .zip(x.data().par_chunks(in_len))
            .for_each(|(y_n, x_n)| {
                conv_fwd_direct(x_n, t, h, wd, cin, w, b, cout, &geom, y_n);
            });
        self.saved_input = Some(x.clone());
        y
    }

    pub fn backward(&mut self, dy: &Tensor<S>) -> Tensor<S> {
        let x = self.saved_input.take().expect("conv backward without forward");
        let (ot, oh, ow) = self.geom.out_dims(x.t(), x.h(), x.w());
        assert_eq!([dy.n(), dy.t(), dy.h(), dy.w(), dy.c()], [x.n(), ot, oh, ow, self.cout]);
        let k_len = self.geom.k_len(self.cin);
        let p = ot * oh * ow;
        let mut dx = Tensor::zeros(x.dims());
        let (geom, cin, cout) = (self.geom, self.cin, self.cout);
        let w = &self.w;
        let (t, h, wd) = (x.t(), x.h(), x.w());
        let in_len = x.sample_len();
        let partials: Vec<(Vec<S>, Vec<S>)> = dx
            .data_mut()
            .par_chunks_mut(in_len)
            .zip(x.data().par_chunks(in_len).zip(dy.data().par_chunks(p * cout)))
            .map(|(dx_n, (x_n, dy_n))| {
                conv_bwd_input_direct(dy_n, t, h, wd, cin, w, cout, &geom, dx_n);
                let mut dw = vec![S::zero(); k_len * cout];
                conv_bwd_weight_direct(x_n, dy_n, t, h, wd, cin, cout, &geom, &mut dw);
                let mut db = vec![S::zero(); cout];
                bias_grad(dy_n, cout, &mut db);
                (dw, db)
            })
            .collect();
        for (dw, db) in partials {
            for (acc, v) in self.gw.iter_mut().zip(dw) {
                *acc += v;
            }
            for (acc, v) in self.gb.iter_mut().zip(db) {
                *acc += v;
            }
        }
        dx
    }
}

/// Transposed 3D convolution, defined as the exact adjoint of a ceil-mode
/// convolution from the target (large) geometry down to the input geometry.
/// Weight layout [K, cin] with K indexed over the *output* channels:
/// ((dt*kh+dy)*kw+dx)*cout + co.
pub struct ConvTranspose3d<S> {
    pub name: String,
    pub cin: usize,
    pub cout: usize,
    pub geom: ConvGeom,
    pub w: Vec<S>,
    pub b: Vec<S>,
    pub gw: Vec<S>,
    pub gb: Vec<S>,
    saved_input: Option<Tensor<S>>,
    saved_target: (usize, usize, usize),
}

impl<S: Scalar> ConvTranspose3d<S> {
    pub fn new(name: &str, cin: usize, cout: usize, geom: ConvGeom, rng: &mut rand_chacha::ChaCha8Rng) -> Self {
        let k_len = geom.k_len(cout);
        let fan = geom.kernel.0 * geom.kernel.1 * geom.kernel.2 * cin;
        ConvTranspose3d {
            name: name.to_string(),
            cin,
            cout,
            geom,
            w: he_normal(rng, fan, k_len * cin),
            b: vec![S::zero(); cout],
            gw: vec![S::zero(); k_len * cin],
            gb: vec![S::zero(); cout],
            saved_input: None,
            saved_target: (0, 0, 0),
        }
    }

    /// Upsample to an explicit target geometry; `ceil(target/stride)` must
    /// equal the input geometry.
    pub fn forward(&mut self, x: &Tensor<S>, target: (usize, usize, usize)) -> Tensor<S> {
        assert_eq!(x.c(), self.cin, "{}: input channels", self.name);
        let (tt, th, tw) = target;
        assert_eq!(
            self.geom.out_dims(tt, th, tw),
            (x.t(), x.h(), x.w()),
            "{}: target {:?} incompatible with input {:?}",
            self.name,
            target,
            (x.t(), x.h(), x.w())
        );
        let p = x.t() * x.h() * x.w();
        let mut y = Tensor::zeros([x.n(), tt, th, tw, self.cout]);
        let (geom, cin, cout) = (self.geom, self.cin, self.cout);
        let (w, b) = (&self.w, &self.b);
        let out_len = tt * th * tw * cout;
        y.data_mut()
            .par_chunks_mut(out_len)
            .zip(x.data().par_chunks(p * cin))
            .for_each(|(y_n, x_n)| {
                // The adjoint of the conceptual big->small conv: scatter the
                // small input through the weights onto the big output.
                for row in y_n.chunks_exact_mut(cout) {
                    row.copy_from_slice(b);
                }
                conv_bwd_input_direct(x_n, tt, th, tw, cout, w, cin, &geom, y_n);
            });
        self.saved_input = Some(x.clone());
        self.saved_target = target;
        y
    }

    pub fn backward(&mut self, dy: &Tensor<S>) -> Tensor<S> {
        let x = self.saved_input.take().expect("tconv backward without forward");
        let (tt, th, tw) = self.saved_target;
        assert_eq!([dy.t(), dy.h(), dy.w(), dy.c()], [tt, th, tw, self.cout]);
        let p = x.t() * x.h() * x.w();
        let k_len = self.geom.k_len(self.cout);
        let mut dx = Tensor::zeros(x.dims());
        let (geom, cin, cout) = (self.geom, self.cin, self.cout);
        let w = &self.w;
        let out_len = tt * th * tw * cout;
        let zero_bias = vec![S::zero(); cin];
        let partials: Vec<(Vec<S>, Vec<S>)> = dx
            .data_mut()
            .par_chunks_mut(p * cin)
            .zip(x.data().par_chunks(p * cin).zip(dy.data().par_chunks(out_len)))
            .map(|(dx_n, (x_n, dy_n))| {
                // dx = the conceptual forward conv applied to dY; dW pairs
                // dY (big side) with x (small side).
                conv_fwd_direct(dy_n, tt, th, tw, cout, w, &zero_bias, cin, &geom, dx_n);
                let mut dw = vec![S::zero(); k_len * cin];
                conv_bwd_weight_direct(dy_n, x_n, tt, th, tw, cout, cin, &geom, &mut dw);
                let mut db = vec![S::zero(); cout];
                bias_grad(dy_n, cout, &mut db);
                (dw, db)
            })
            .collect();
        for (dw, db) in partials {
            for (acc, v) in self.gw.iter_mut().zip(dw) {
                *acc += v;
            }
            for (acc, v) in self.gb.iter_mut().zip(db) {
                *acc += v;
            }
        }
        dx
    }
}

/// Per-channel batch normalization over (N, T, H, W), with moving averages
/// for eval mode.
pub struct BatchNorm3d<S> {
    pub name: String,
    pub c: usize,
    pub gamma: Vec<S>,
    pub beta: Vec<S>,
    pub ggamma: Vec<S>,
    pub gbeta: Vec<S>,
    pub running_mean: Vec<S>,
    pub running_var: Vec<S>,
    pub eps: S,
    /// running <- decay * running + (1-decay) * batch
    pub decay: S,
    saved: Option<BnCache<S>>,
}

struct BnCache<S> {
    xhat: Tensor<S>,
    ivar: Vec<S>,
}

impl<S: Scalar> BatchNorm3d<S> {
    pub fn new(name: &str, c: usize) -> Self {
        BatchNorm3d {
            name: name.to_string(),
            c,
            gamma: vec![S::one(); c],
            beta: vec![S::zero(); c],
            ggamma: vec![S::zero(); c],
            gbeta: vec![S::zero(); c],
            running_mean: vec![S::zero(); c],
            running_var: vec![S::one(); c],
            eps: S::from_f64(1e-5),
            decay: S::from_f64(0.9),
            saved: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor<S>, train: bool) -> Tensor<S> {
        assert_eq!(x.c(), self.c, "{}: channels", self.name);
        let c = self.c;
        let m = x.numel() / c;
        let m_s = S::from_usize(m);
        let mut y = Tensor::zeros(x.dims());
        if train {
            let mut mean = vec![S::zero(); c];
            for px in x.data().chunks_exact(c) {
                for (acc, &v) in mean.iter_mut().zip(px.iter()) {
                    *acc += v;
                }
            }
            mean.iter_mut().for_each(|v| *v /= m_s);
            let mut var = vec![S::zero(); c];
            for px in x.data().chunks_exact(c) {
                for ((acc, &v), &mu) in var.iter_mut().zip(px.iter()).zip(mean.iter()) {
                    let d = v - mu;
                    *acc += d * d;
                }
            }
            var.iter_mut().for_each(|v| *v /= m_s);
            let ivar: Vec<S> = var.iter().map(|&v| S::one() / (v + self.eps).sqrt()).collect();
            let mut xhat = Tensor::zeros(x.dims());
            for (xp, (hp, yp)) in x
                .data()
                .chunks_exact(c)
                .zip(xhat.data_mut().chunks_exact_mut(c).zip(y.data_mut().chunks_exact_mut(c)))
            {
                for ch in 0..c {
                    let h = (xp[ch] - mean[ch]) * ivar[ch];
                    hp[ch] = h;
                    yp[ch] = self.gamma[ch] * h + self.beta[ch];
                }
            }
            let one_m = S::one() - self.decay;
            for ch in 0..c {
                self.running_mean[ch] = self.decay * self.running_mean[ch] + one_m * mean[ch];
                self.running_var[ch] = self.decay * self.running_var[ch] + one_m * var[ch];
            }
            self.saved = Some(BnCache { xhat, ivar });
        } else {
            let scale: Vec<S> = (0..c)
                .map(|ch| self.gamma[ch] / (self.running_var[ch] + self.eps).sqrt())
                .collect();
            for (xp, yp) in x.data().chunks_exact(c).zip(y.data_mut().chunks_exact_mut(c)) {
                for ch in 0..c {
                    yp[ch] = scale[ch] * (xp[ch] - self.running_mean[ch]) + self.beta[ch];
                }
            }
        }
        y
    }

    pub fn backward(&mut self, dy: &Tensor<S>) -> Tensor<S> {
        let BnCache { xhat, ivar } = self.saved.take().expect("bn backward without train forward");
        let c = self.c;
        let m = dy.numel() / c;
        let m_s = S::from_usize(m);
        let mut sum_dy = vec![S::zero(); c];
        let mut sum_dy_xhat = vec![S::zero(); c];
        for (dp, hp) in dy.data().chunks_exact(c).zip(xhat.data().chunks_exact(c)) {
            for ch in 0..c {
                sum_dy[ch] += dp[ch];
                sum_dy_xhat[ch] += dp[ch] * hp[ch];
            }
        }
        for ch in 0..c {
            self.gbeta[ch] += sum_dy[ch];
            self.ggamma[ch] += sum_dy_xhat[ch];
        }
        let mut dx = Tensor::zeros(dy.dims());
        for ((dp, hp), xp) in dy
            .data()
            .chunks_exact(c)
            .zip(xhat.data().chunks_exact(c))
            .zip(dx.data_mut().chunks_exact_mut(c))
        {
            for ch in 0..c {
                let g = self.gamma[ch] * ivar[ch] / m_s;
                xp[ch] = g * (m_s * dp[ch] - sum_dy[ch] - hp[ch] * sum_dy_xhat[ch]);
            }
        }
        dx
    }
}

/// Fully connected layer on flattened features, for the classifier head.
pub struct Dense<S> {
    pub name: String,
    pub din: usize,
    pub dout: usize,
    pub w: Vec<S>,
    pub b: Vec<S>,
    pub gw: Vec<S>,
    pub gb: Vec<S>,
    saved_input: Option<Vec<S>>,
    saved_n: usize,
}

impl<S: Scalar> Dense<S> {
    pub fn new(name: &str, din: usize, dout: usize, rng: &mut rand_chacha::ChaCha8Rng) -> Self {
        Dense {
            name: name.to_string(),
            din,
            dout,
            w: he_normal(rng, din, din * dout),
            b: vec![S::zero(); dout],
            gw: vec![S::zero(); din * dout],
            gb: vec![S::zero(); dout],
            saved_input: None,
            saved_n: 0,
        }
    }

    /// x: [n, din] flattened.
    pub fn forward(&mut self, x: &[S], n: usize) -> Vec<S> {
        assert_eq!(x.len(), n * self.din);
        let mut y = vec![S::zero(); n * self.dout];
        matmul(n, self.din, self.dout, x, &self.w, S::zero(), &mut y);
        for row in y.chunks_exact_mut(self.dout) {
            for (v, &b) in row.iter_mut().zip(self.b.iter()) {
                *v += b;
            }
        }
        self.saved_input = Some(x.to_vec());
        self.saved_n = n;
        y
    }

    pub fn backward(&mut self, dy: &[S]) -> Vec<S> {
        let x = self.saved_input.take().expect("dense backward without forward");
        let n = self.saved_n;
        assert_eq!(dy.len(), n * self.dout);
        let mut dx = vec![S::zero(); n * self.din];
        matmul_a_bt(n, self.dout, self.din, dy, &self.w, S::zero(), &mut dx);
        matmul_at_b(self.din, n, self.dout, &x, dy, S::one(), &mut self.gw);
        for row in dy.chunks_exact(self.dout) {
            for (acc, &v) in self.gb.iter_mut().zip(row.iter()) {
                *acc += v;
            }
        }
        dx
    }
}

/// Global average pool over (T, H, W), returning [n, c].
pub fn global_avg_pool<S: Scalar>(x: &Tensor<S>) -> Vec<S> {
    let c = x.c();
    let m = x.sample_len() / c;
    let m_s = S::from_usize(m);
    let mut out = vec![S::zero(); x.n() * c];
    for i in 0..x.n() {
        let sample = x.sample(i);
        let dst = &mut out[i * c..(i + 1) * c];
        for px in sample.chunks_exact(c) {
            for (acc, &v) in dst.iter_mut().zip(px.iter()) {
                *acc += v;
            }
        }
        dst.iter_mut().for_each(|v| *v /= m_s);
    }
    out
}

pub fn global_avg_pool_backward<S: Scalar>(dy: &[S], dims: [usize; 5]) -> Tensor<S> {
    let c = dims[4];
    let m = dims[1] * dims[2] * dims[3];
    let m_s = S::from_usize(m);
    let mut dx = Tensor::zeros(dims);
    for i in 0..dims[0] {
        let row = &dy[i * c..(i + 1) * c];
        for px in dx.sample_mut(i).chunks_exact_mut(c) {
            for (v, &g) in px.iter_mut().zip(row.iter()) {
                *v = g / m_s;
            }
        }
    }
    dx
}

/// Global max pool over (T, H, W): values [n, c] plus argmax positions for
/// the backward scatter.
pub fn global_max_pool<S: Scalar>(x: &Tensor<S>) -> (Vec<S>, Vec<usize>) {
    let c = x.c();
    let mut out = vec![S::neg_infinity(); x.n() * c];
    let mut arg = vec![0usize; x.n() * c];
    for i in 0..x.n() {
        let sample = x.sample(i);
        for (px, chunk) in sample.chunks_exact(c).enumerate() {
            for (ch, &v) in chunk.iter().enumerate() {
                if v > out[i * c + ch] {
                    out[i * c + ch] = v;
                    arg[i * c + ch] = px;
                }
            }
        }
    }
    (out, arg)
}

pub fn global_max_pool_backward<S: Scalar>(dy: &[S], arg: &[usize], dims: [usize; 5]) -> Tensor<S> {
    let c = dims[4];
    let mut dx = Tensor::zeros(dims);
    for i in 0..dims[0] {
        let sample = dx.sample_mut(i);
        for ch in 0..c {
            sample[arg[i * c + ch] * c + ch] += dy[i * c + ch];
        }
    }
    dx
}
