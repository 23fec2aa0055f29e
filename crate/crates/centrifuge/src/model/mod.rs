//! The separation network family: a strided 3D-conv encoder, a transposed
//! 3D-conv decoder with U-Net skip connections, an n-layer output head, and
//! an optional stacked corrector that refines the first prediction with an
//! additive residual.

pub mod checkpoint;
pub mod layers;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::VidRef;
use crate::num::Scalar;
use crate::tensor::Tensor;
use crate::videoio::VideoClip;
use layers::{BatchNorm3d, Conv3d, ConvGeom, ConvTranspose3d};

/// Smallest clip geometry the network accepts (t, h, w).
pub const MIN_INPUT: (usize, usize, usize) = (2, 8, 8);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderDepth {
    Shallow,
    Medium,
    Deep,
}

impl EncoderDepth {
    /// Convolutions per stage; each stage ends with a strided conv that
    /// doubles the channel count. Together with the stem this yields
    /// 7 / 12 / 17 convolution layers.
    pub fn stage_convs(self) -> &'static [usize] {
        match self {
            EncoderDepth::Shallow => &[3, 3],
            EncoderDepth::Medium => &[4, 4, 3],
            EncoderDepth::Deep => &[4, 4, 4, 4],
        }
    }

    pub fn conv_layer_count(self) -> usize {
        1 + self.stage_convs().iter().sum::<usize>()
    }

    pub fn name(self) -> &'static str {
        match self {
            EncoderDepth::Shallow => "shallow",
            EncoderDepth::Medium => "medium",
            EncoderDepth::Deep => "deep",
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Number of output video layers (n >= 2).
    pub n_layers: usize,
    pub encoder_depth: EncoderDepth,
    pub base_channels: usize,
    pub use_corrector: bool,
    /// Batch normalization on/off (encoder and decoder alike).
    pub norm: bool,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            n_layers: 4,
            encoder_depth: EncoderDepth::Shallow,
            base_channels: 4,
            use_corrector: false,
            norm: true,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_layers < 2 {
            return Err(Error::InvalidConfig(format!("n_layers {} < 2", self.n_layers)));
        }
        if self.base_channels == 0 {
            return Err(Error::InvalidConfig("base_channels must be >= 1".into()));
        }
        Ok(())
    }
}

/// The n output videos of the model, packed as T x H x W x 3n. Values are
/// raw network output (unconstrained); clamp only for display or export.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerSet<S> {
    data: Vec<S>,
    t: usize,
    h: usize,
    w: usize,
    n_layers: usize,
}

impl<S: Scalar> LayerSet<S> {
    pub fn new(t: usize, h: usize, w: usize, n_layers: usize, data: Vec<S>) -> Self {
        assert_eq!(data.len(), t * h * w * 3 * n_layers);
        LayerSet { data, t, h, w, n_layers }
    }

    /// Pack clips of identical geometry into one layer set.
    pub fn from_clips(clips: &[&VideoClip<S>]) -> Self {
        assert!(clips.len() >= 2);
        let (t, h, w) = clips[0].geometry();
        let n = clips.len();
        let mut data = vec![S::zero(); t * h * w * 3 * n];
        for (l, clip) in clips.iter().enumerate() {
            assert_eq!(clip.geometry(), (t, h, w));
            for p in 0..t * h * w {
                data[p * 3 * n + l * 3..p * 3 * n + l * 3 + 3]
                    .copy_from_slice(&clip.data()[p * 3..p * 3 + 3]);
            }
        }
        LayerSet { data, t, h, w, n_layers: n }
    }

    /// View of one sample of a [n, t, h, w, 3n] network output.
    pub fn from_tensor_sample(tensor: &Tensor<S>, sample: usize) -> Self {
        let n_layers = tensor.c() / 3;
        assert_eq!(tensor.c(), 3 * n_layers);
        LayerSet {
            data: tensor.sample(sample).to_vec(),
            t: tensor.t(),
            h: tensor.h(),
            w: tensor.w(),
            n_layers,
        }
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
    pub fn n_layers(&self) -> usize {
        self.n_layers
    }
    #[inline]
    pub fn data(&self) -> &[S] {
        &self.data
    }
    #[inline]
    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    /// Zero-copy view of layer `i`.
    pub fn layer(&self, i: usize) -> VidRef<'_, S> {
        assert!(i < self.n_layers);
        VidRef {
            data: &self.data,
            t: self.t,
            h: self.h,
            w: self.w,
            c: 3,
            cstride: 3 * self.n_layers,
            coff: 3 * i,
        }
    }

    /// Copy layer `i` out as a clip with raw (unclamped) values.
    pub fn layer_clip(&self, i: usize, fps: f64) -> VideoClip<S> {
        let view = self.layer(i);
        let mut data = Vec::with_capacity(self.t * self.h * self.w * 3);
        for t in 0..self.t {
            for y in 0..self.h {
                for x in 0..self.w {
                    let base = view.pixel_base(t, y, x);
                    data.extend_from_slice(&view.data[base..base + 3]);
                }
            }
        }
        VideoClip::new_rgb(self.t, self.h, self.w, fps, data)
    }

    pub fn to_tensor(&self) -> Tensor<S> {
        Tensor::from_vec([1, self.t, self.h, self.w, 3 * self.n_layers], self.data.clone())
    }

    /// Elementwise sum (used for the corrector residual).
    pub fn add(&self, other: &LayerSet<S>) -> LayerSet<S> {
        assert_eq!(
            (self.t, self.h, self.w, self.n_layers),
            (other.t, other.h, other.w, other.n_layers)
        );
        let mut out = self.clone();
        for (a, &b) in out.data.iter_mut().zip(other.data.iter()) {
            *a += b;
        }
        out
    }
}

/// Predictor output, corrector residual, and their sum.
#[derive(Clone, Debug)]
pub struct PredictorCorrectorOutput<S> {
    pub initial: LayerSet<S>,
    pub delta: LayerSet<S>,
    pub final_layers: LayerSet<S>,
}

struct ConvBlock<S> {
    conv: Conv3d<S>,
    bn: Option<BatchNorm3d<S>>,
    relu: bool,
    saved_act: Option<Tensor<S>>,
}

impl<S: Scalar> ConvBlock<S> {
    fn new(
        name: &str,
        cin: usize,
        cout: usize,
        geom: ConvGeom,
        norm: bool,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        ConvBlock {
            conv: Conv3d::new(name, cin, cout, geom, rng),
            bn: norm.then(|| BatchNorm3d::new(name, cout)),
            relu: true,
            saved_act: None,
        }
    }

    fn forward(&mut self, x: &Tensor<S>, train: bool) -> Tensor<S> {
        let mut y = self.conv.forward(x);
        if let Some(bn) = self.bn.as_mut() {
            y = bn.forward(&y, train);
        }
        if self.relu {
            y.data_mut().iter_mut().for_each(|v| {
                if *v < S::zero() {
                    *v = S::zero()
                }
            });
            self.saved_act = Some(y.clone());
        }
        y
    }

    fn backward(&mut self, dy: &Tensor<S>) -> Tensor<S> {
        let mut g = dy.clone();
        if self.relu {
            let act = self.saved_act.take().expect("block backward without forward");
            for (gv, &a) in g.data_mut().iter_mut().zip(act.data().iter()) {
                if a <= S::zero() {
                    *gv = S::zero();
                }
            }
        }
        if let Some(bn) = self.bn.as_mut() {
            g = bn.backward(&g);
        }
        self.conv.backward(&g)
    }
}

/// Strided 3D-conv encoder: a stem that halves every dimension, then one
/// stage per downsampling level. Each stage keeps its width until a final
/// strided conv that doubles channels and halves space (and time, in the two
/// deepest stages).
pub struct Encoder<S> {
    stem: ConvBlock<S>,
    stages: Vec<Vec<ConvBlock<S>>>,
}

impl<S: Scalar> Encoder<S> {
    pub fn build(prefix: &str, cin: usize, cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let stage_convs = cfg.encoder_depth.stage_convs();
        let d = stage_convs.len();
        let base = cfg.base_channels;
        let stem = ConvBlock::new(
            &format!("{prefix}.stem"),
            cin,
            base,
            ConvGeom { kernel: (3, 3, 3), stride: (2, 2, 2) },
            cfg.norm,
            rng,
        );
        let mut stages = Vec::with_capacity(d);
        for (s, &k) in stage_convs.iter().enumerate() {
            let ch = base << s;
            let tstride = if s + 2 >= d { 2 } else { 1 };
            let mut blocks = Vec::with_capacity(k);
            for b in 0..k {
                let last = b + 1 == k;
                let geom = if last {
                    ConvGeom { kernel: (3, 3, 3), stride: (tstride, 2, 2) }
                } else {
                    ConvGeom::unit((3, 3, 3))
                };
                let cout = if last { ch * 2 } else { ch };
                blocks.push(ConvBlock::new(&format!("{prefix}.s{s}.c{b}"), ch, cout, geom, cfg.norm, rng));
            }
            stages.push(blocks);
        }
        Encoder { stem, stages }
    }

    /// Channel count at each level (stem output first, bottleneck last).
    pub fn level_channels(cfg: &ModelConfig) -> Vec<usize> {
        let d = cfg.encoder_depth.stage_convs().len();
        (0..=d).map(|l| cfg.base_channels << l).collect()
    }

    /// Returns the feature maps at every level; `levels[0]` is the stem
    /// output, the last entry the bottleneck.
    pub fn forward(&mut self, x: &Tensor<S>, train: bool) -> Vec<Tensor<S>> {
        let mut levels = Vec::with_capacity(self.stages.len() + 1);
        let mut cur = self.stem.forward(x, train);
        levels.push(cur.clone());
        for stage in self.stages.iter_mut() {
            for block in stage.iter_mut() {
                cur = block.forward(&cur, train);
            }
            levels.push(cur.clone());
        }
        levels
    }

    /// Backward from per-level gradients (skip connections feed levels
    /// besides the bottleneck); returns the input gradient.
    pub fn backward(&mut self, mut dlevels: Vec<Tensor<S>>) -> Tensor<S> {
        assert_eq!(dlevels.len(), self.stages.len() + 1);
        let mut g = dlevels.pop().expect("bottleneck gradient");
        for (s, stage) in self.stages.iter_mut().enumerate().rev() {
            for block in stage.iter_mut().rev() {
                g = block.backward(&g);
            }
            g.add_assign(&dlevels[s]);
        }
        self.stem.backward(&g)
    }

    pub(crate) fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Vec<S>, &mut Vec<S>)) {
        visit_block_params(&mut self.stem, f);
        for stage in self.stages.iter_mut() {
            for block in stage.iter_mut() {
                visit_block_params(block, f);
            }
        }
    }

    pub(crate) fn visit_state(&mut self, f: &mut dyn FnMut(&str, &mut Vec<S>)) {
        visit_block_state(&mut self.stem, f);
        for stage in self.stages.iter_mut() {
            for block in stage.iter_mut() {
                visit_block_state(block, f);
            }
        }
    }
}

fn visit_block_params<S: Scalar>(
    block: &mut ConvBlock<S>,
    f: &mut dyn FnMut(&str, &mut Vec<S>, &mut Vec<S>),
) {
    let name = block.conv.name.clone();
    f(&format!("{name}.w"), &mut block.conv.w, &mut block.conv.gw);
    f(&format!("{name}.b"), &mut block.conv.b, &mut block.conv.gb);
    if let Some(bn) = block.bn.as_mut() {
        f(&format!("{name}.bn.gamma"), &mut bn.gamma, &mut bn.ggamma);
        f(&format!("{name}.bn.beta"), &mut bn.beta, &mut bn.gbeta);
    }
}

fn visit_block_state<S: Scalar>(block: &mut ConvBlock<S>, f: &mut dyn FnMut(&str, &mut Vec<S>)) {
    if let Some(bn) = block.bn.as_mut() {
        let name = bn.name.clone();
        f(&format!("{name}.bn.running_mean"), &mut bn.running_mean);
        f(&format!("{name}.bn.running_var"), &mut bn.running_var);
    }
}

struct UpBlock<S> {
    tconv: ConvTranspose3d<S>,
    bn: Option<BatchNorm3d<S>>,
    /// Channels of the decoder path entering this block (before the skip).
    cur_channels: usize,
    skip_channels: usize,
    saved_act: Option<Tensor<S>>,
}

impl<S: Scalar> UpBlock<S> {
    fn forward(
        &mut self,
        cur: Tensor<S>,
        skip: Option<&Tensor<S>>,
        target: (usize, usize, usize),
        train: bool,
    ) -> Tensor<S> {
        assert_eq!(cur.c(), self.cur_channels);
        let joined = match skip {
            Some(s) => {
                assert_eq!(s.c(), self.skip_channels);
                Tensor::concat_channels(&cur, s)
            }
            None => {
                assert_eq!(self.skip_channels, 0);
                cur
            }
        };
        let mut y = self.tconv.forward(&joined, target);
        if let Some(bn) = self.bn.as_mut() {
            y = bn.forward(&y, train);
        }
        y.data_mut().iter_mut().for_each(|v| {
            if *v < S::zero() {
                *v = S::zero()
            }
        });
        self.saved_act = Some(y.clone());
        y
    }

    fn backward(&mut self, dy: &Tensor<S>) -> (Tensor<S>, Option<Tensor<S>>) {
        let act = self.saved_act.take().expect("up-block backward without forward");
        let mut g = dy.clone();
        for (gv, &a) in g.data_mut().iter_mut().zip(act.data().iter()) {
            if a <= S::zero() {
                *gv = S::zero();
            }
        }
        if let Some(bn) = self.bn.as_mut() {
            g = bn.backward(&g);
        }
        let djoined = self.tconv.backward(&g);
        if self.skip_channels == 0 {
            (djoined, None)
        } else {
            let (dcur, dskip) = djoined.split_channels(self.cur_channels);
            (dcur, Some(dskip))
        }
    }
}

/// Transposed-conv decoder mirroring the encoder, one up-block per encoder
/// downsampling, each consuming the matching-resolution encoder features.
/// The tower input itself joins at full resolution before the head, closing
/// the U over the stem stride.
pub struct Decoder<S> {
    ups: Vec<UpBlock<S>>,
    head: Conv3d<S>,
    input_channels: usize,
}

impl<S: Scalar> Decoder<S> {
    fn build(prefix: &str, cin: usize, cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let level_ch = Encoder::<S>::level_channels(cfg);
        let d = level_ch.len() - 1;
        let base = cfg.base_channels;
        let mut ups = Vec::with_capacity(d + 1);
        for b in 0..=d {
            let lvl = d - b;
            let cur_channels = if b == 0 { level_ch[d] } else { level_ch[lvl] };
            let skip_channels = if b == 0 { 0 } else { level_ch[lvl] };
            let cout = if lvl == 0 { base } else { level_ch[lvl - 1] };
            // Mirror the encoder's temporal strides: stem and the two
            // deepest stages halve time.
            let tstride = if lvl == 0 || lvl + 2 > d { 2 } else { 1 };
            let tconv = ConvTranspose3d::new(
                &format!("{prefix}.up{b}"),
                cur_channels + skip_channels,
                cout,
                ConvGeom { kernel: (3, 3, 3), stride: (tstride, 2, 2) },
                rng,
            );
            ups.push(UpBlock {
                tconv,
                bn: cfg.norm.then(|| BatchNorm3d::new(&format!("{prefix}.up{b}"), cout)),
                cur_channels,
                skip_channels,
                saved_act: None,
            });
        }
        let mut head = Conv3d::new(
            &format!("{prefix}.head"),
            base + cin,
            3 * cfg.n_layers,
            ConvGeom::unit((1, 1, 1)),
            rng,
        );
        // Start predictions near the data range instead of around zero.
        head.b.iter_mut().for_each(|v| *v = S::from_f64(0.5));
        Decoder { ups, head, input_channels: cin }
    }

    fn forward(&mut self, levels: &[Tensor<S>], input: &Tensor<S>, train: bool) -> Tensor<S> {
        let d = levels.len() - 1;
        assert_eq!(self.ups.len(), d + 1);
        let mut cur = levels[d].clone();
        for (b, up) in self.ups.iter_mut().enumerate() {
            let lvl = d - b;
            let skip = if b == 0 { None } else { Some(&levels[lvl]) };
            let target = if lvl == 0 {
                (input.t(), input.h(), input.w())
            } else {
                let l = &levels[lvl - 1];
                (l.t(), l.h(), l.w())
            };
            cur = up.forward(cur, skip, target, train);
        }
        self.head.forward(&Tensor::concat_channels(&cur, input))
    }

    /// Returns the gradients for every encoder level plus the input skip.
    fn backward(&mut self, dy: &Tensor<S>) -> (Vec<Tensor<S>>, Tensor<S>) {
        let d = self.ups.len() - 1;
        let dhead = self.head.backward(dy);
        let (mut g, dinput) = dhead.split_channels(dhead.c() - self.input_channels);
        let mut dlevels: Vec<Option<Tensor<S>>> = (0..=d).map(|_| None).collect();
        for (b, up) in self.ups.iter_mut().enumerate().rev() {
            let lvl = d - b;
            let (dcur, dskip) = up.backward(&g);
            if let Some(ds) = dskip {
                dlevels[lvl] = Some(ds);
            }
            g = dcur;
        }
        match dlevels[d].take() {
            Some(mut t) => {
                t.add_assign(&g);
                dlevels[d] = Some(t);
            }
            None => dlevels[d] = Some(g),
        }
        let dlevels = dlevels
            .into_iter()
            .map(|t| t.expect("every level receives a gradient"))
            .collect();
        (dlevels, dinput)
    }

    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Vec<S>, &mut Vec<S>)) {
        for up in self.ups.iter_mut() {
            let name = up.tconv.name.clone();
            f(&format!("{name}.w"), &mut up.tconv.w, &mut up.tconv.gw);
            f(&format!("{name}.b"), &mut up.tconv.b, &mut up.tconv.gb);
            if let Some(bn) = up.bn.as_mut() {
                f(&format!("{name}.bn.gamma"), &mut bn.gamma, &mut bn.ggamma);
                f(&format!("{name}.bn.beta"), &mut bn.beta, &mut bn.gbeta);
            }
        }
        let name = self.head.name.clone();
        f(&format!("{name}.w"), &mut self.head.w, &mut self.head.gw);
        f(&format!("{name}.b"), &mut self.head.b, &mut self.head.gb);
    }

    fn visit_state(&mut self, f: &mut dyn FnMut(&str, &mut Vec<S>)) {
        for up in self.ups.iter_mut() {
            if let Some(bn) = up.bn.as_mut() {
                let name = bn.name.clone();
                f(&format!("{name}.bn.running_mean"), &mut bn.running_mean);
                f(&format!("{name}.bn.running_var"), &mut bn.running_var);
            }
        }
    }
}

/// One encoder-decoder tower.
pub struct Predictor<S> {
    pub(crate) enc: Encoder<S>,
    dec: Decoder<S>,
}

impl<S: Scalar> Predictor<S> {
    pub fn build(prefix: &str, cin: usize, cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        Predictor {
            enc: Encoder::build(prefix, cin, cfg, rng),
            dec: Decoder::build(prefix, cin, cfg, rng),
        }
    }

    pub fn forward(&mut self, x: &Tensor<S>, train: bool) -> Tensor<S> {
        let levels = self.enc.forward(x, train);
        self.dec.forward(&levels, x, train)
    }

    pub fn backward(&mut self, dy: &Tensor<S>) -> Tensor<S> {
        let (dlevels, dinput) = self.dec.backward(dy);
        let mut dx = self.enc.backward(dlevels);
        dx.add_assign(&dinput);
        dx
    }

    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Vec<S>, &mut Vec<S>)) {
        self.enc.visit_params(f);
        self.dec.visit_params(f);
    }

    fn visit_state(&mut self, f: &mut dyn FnMut(&str, &mut Vec<S>)) {
        self.enc.visit_state(f);
        self.dec.visit_state(f);
    }
}

/// Batch forward results; `final_layers = initial + delta` exactly.
pub struct BatchOutput<S> {
    pub initial: Tensor<S>,
    pub delta: Option<Tensor<S>>,
    pub final_layers: Tensor<S>,
}

pub struct SeparationModel<S> {
    pub config: ModelConfig,
    predictor: Predictor<S>,
    corrector: Option<Predictor<S>>,
    /// Training progress, persisted in checkpoints.
    pub step: u64,
}

/// Build a model with deterministic parameter initialization from
/// `config.seed`.
pub fn build_model<S: Scalar>(config: &ModelConfig) -> Result<SeparationModel<S>> {
    SeparationModel::build(config)
}

impl<S: Scalar> SeparationModel<S> {
    pub fn build(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let predictor = Predictor::build("predictor", 3, config, &mut rng);
        let corrector = config
            .use_corrector
            .then(|| Predictor::build("corrector", 3 * config.n_layers, config, &mut rng));
        Ok(SeparationModel { config: *config, predictor, corrector, step: 0 })
    }

    pub fn n_layers(&self) -> usize {
        self.config.n_layers
    }

    fn check_geometry(&self, t: usize, h: usize, w: usize) -> Result<()> {
        let (mt, mh, mw) = MIN_INPUT;
        if t < mt || h < mh || w < mw {
            return Err(Error::InvalidInput(format!(
                "clip {t}x{h}x{w} below the network minimum {mt}x{mh}x{mw}"
            )));
        }
        Ok(())
    }

    /// Batched forward over [n, t, h, w, 3] input.
    pub fn forward_batch(&mut self, x: &Tensor<S>, train: bool) -> BatchOutput<S> {
        let initial = self.predictor.forward(x, train);
        match self.corrector.as_mut() {
            Some(corr) => {
                let delta = corr.forward(&initial, train);
                let final_layers = initial.add(&delta);
                BatchOutput { initial, delta: Some(delta), final_layers }
            }
            None => BatchOutput { initial: initial.clone(), delta: None, final_layers: initial },
        }
    }

    /// Backprop from the gradient on the final layers; accumulates parameter
    /// gradients on every tower.
    pub fn backward_batch(&mut self, dfinal: &Tensor<S>) {
        match self.corrector.as_mut() {
            Some(corr) => {
                let mut dinitial = corr.backward(dfinal);
                dinitial.add_assign(dfinal);
                self.predictor.backward(&dinitial);
            }
            None => {
                self.predictor.backward(dfinal);
            }
        }
    }

    /// Predictor tower on a single clip, eval mode.
    pub fn predictor_forward(&mut self, clip: &VideoClip<S>) -> Result<LayerSet<S>> {
        self.check_geometry(clip.t(), clip.h(), clip.w())?;
        if clip.c() != 3 {
            return Err(Error::InvalidClip(vec![format!("channel count {} != 3", clip.c())]));
        }
        let y = self.predictor.forward(&clip.to_tensor(), false);
        Ok(LayerSet::from_tensor_sample(&y, 0))
    }

    /// Corrector tower on an initial guess, eval mode. Returns the residual.
    pub fn corrector_forward(&mut self, initial: &LayerSet<S>) -> Result<LayerSet<S>> {
        let corr = self
            .corrector
            .as_mut()
            .ok_or_else(|| Error::InvalidInput("model was built without a corrector".into()))?;
        if initial.n_layers() != self.config.n_layers {
            return Err(Error::ShapeMismatch(format!(
                "corrector expects {} layers, got {}",
                self.config.n_layers,
                initial.n_layers()
            )));
        }
        let y = corr.forward(&initial.to_tensor(), false);
        Ok(LayerSet::from_tensor_sample(&y, 0))
    }

    /// Full model on a single clip, eval mode. Without a corrector the delta
    /// is zero and the final output equals the initial prediction.
    pub fn forward(&mut self, clip: &VideoClip<S>) -> Result<PredictorCorrectorOutput<S>> {
        let initial = self.predictor_forward(clip)?;
        let delta = match self.corrector.as_mut() {
            Some(_) => self.corrector_forward(&initial)?,
            None => LayerSet::new(
                initial.t(),
                initial.h(),
                initial.w(),
                initial.n_layers(),
                vec![S::zero(); initial.data().len()],
            ),
        };
        let final_layers = initial.add(&delta);
        Ok(PredictorCorrectorOutput { initial, delta, final_layers })
    }

    /// Encoder feature maps of a clip (eval mode), one tensor per level.
    pub fn encoder_features(&mut self, clip: &VideoClip<S>) -> Result<Vec<Tensor<S>>> {
        self.check_geometry(clip.t(), clip.h(), clip.w())?;
        Ok(self.predictor.enc.forward(&clip.to_tensor(), false))
    }

    pub fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Vec<S>, &mut Vec<S>)) {
        self.predictor.visit_params(f);
        if let Some(corr) = self.corrector.as_mut() {
            corr.visit_params(f);
        }
    }

    pub fn visit_state(&mut self, f: &mut dyn FnMut(&str, &mut Vec<S>)) {
        self.predictor.visit_state(f);
        if let Some(corr) = self.corrector.as_mut() {
            corr.visit_state(f);
        }
    }

    pub fn zero_grads(&mut self) {
        self.visit_params(&mut |_, _, g| g.iter_mut().for_each(|v| *v = S::zero()));
    }

    pub fn param_count(&mut self) -> usize {
        let mut count = 0;
        self.visit_params(&mut |_, w, _| count += w.len());
        count
    }

    /// Parameters of the predictor tower alone.
    pub fn predictor_param_count(&mut self) -> usize {
        let mut count = 0;
        self.visit_params(&mut |name, w, _| {
            if name.starts_with("predictor.") {
                count += w.len();
            }
        });
        count
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;

    fn cfg(n: usize, depth: EncoderDepth, base: usize, corrector: bool) -> ModelConfig {
        ModelConfig {
            n_layers: n,
            encoder_depth: depth,
            base_channels: base,
            use_corrector: corrector,
            norm: true,
            seed: 7,
        }
    }

    fn random_clip(t: usize, h: usize, w: usize, seed: u64) -> VideoClip<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        VideoClip::new_rgb(t, h, w, 12.0, (0..t * h * w * 3).map(|_| rng.random::<f32>()).collect())
    }

    #[test]
    fn depth_conv_counts() {
        assert_eq!(EncoderDepth::Shallow.conv_layer_count(), 7);
        assert_eq!(EncoderDepth::Medium.conv_layer_count(), 12);
        assert_eq!(EncoderDepth::Deep.conv_layer_count(), 17);
    }

    #[test]
    fn init_is_deterministic() {
        let c = cfg(2, EncoderDepth::Shallow, 3, false);
        let mut a = SeparationModel::<f32>::build(&c).unwrap();
        let mut b = SeparationModel::<f32>::build(&c).unwrap();
        let mut wa = Vec::new();
        a.visit_params(&mut |_, w, _| wa.push(w.clone()));
        let mut wb = Vec::new();
        b.visit_params(&mut |_, w, _| wb.push(w.clone()));
        assert_eq!(wa, wb);
    }

    #[test]
    fn param_counts_increase_with_depth() {
        let shallow = SeparationModel::<f32>::build(&cfg(2, EncoderDepth::Shallow, 4, false))
            .unwrap()
            .param_count();
        let medium = SeparationModel::<f32>::build(&cfg(2, EncoderDepth::Medium, 4, false))
            .unwrap()
            .param_count();
        let deep = SeparationModel::<f32>::build(&cfg(2, EncoderDepth::Deep, 4, false))
            .unwrap()
            .param_count();
        assert!(shallow < medium && medium < deep, "{shallow} {medium} {deep}");
    }

    #[test]
    fn corrector_roughly_doubles_params() {
        let mut single = SeparationModel::<f32>::build(&cfg(4, EncoderDepth::Shallow, 4, false)).unwrap();
        let mut double = SeparationModel::<f32>::build(&cfg(4, EncoderDepth::Shallow, 4, true)).unwrap();
        let p = single.param_count();
        let d = double.param_count();
        assert_eq!(double.predictor_param_count(), p);
        // The corrector ingests 3n channels instead of 3, so it is near but
        // not exactly 2x.
        assert!(d > 2 * p - p / 10 && d < 2 * p + p / 2, "single {p}, with corrector {d}");
        assert_ne!(d, 2 * p);
    }

    #[test]
    fn output_shape_contract() {
        let mut model = SeparationModel::<f32>::build(&cfg(4, EncoderDepth::Shallow, 2, false)).unwrap();
        let out = model.forward(&random_clip(8, 32, 48, 1)).unwrap();
        assert_eq!(
            (out.final_layers.t(), out.final_layers.h(), out.final_layers.w(), out.final_layers.n_layers()),
            (8, 32, 48, 4)
        );
        // The reference geometry: 32x112x112 in, 32x112x112 x 4 layers out.
        let big = model.forward(&random_clip(32, 112, 112, 10)).unwrap();
        assert_eq!(
            (big.final_layers.t(), big.final_layers.h(), big.final_layers.w(), big.final_layers.n_layers()),
            (32, 112, 112, 4)
        );

        let mut model2 = SeparationModel::<f32>::build(&cfg(2, EncoderDepth::Medium, 2, false)).unwrap();
        let out2 = model2.forward(&random_clip(16, 64, 64, 2)).unwrap();
        assert_eq!((out2.final_layers.t(), out2.final_layers.h(), out2.final_layers.w()), (16, 64, 64));
        assert_eq!(out2.final_layers.n_layers(), 2);
    }

    #[test]
    fn fully_convolutional_across_sizes() {
        // Same weights run at a different geometry without rebuilding, and
        // doubling H and W doubles the output size.
        let mut model = SeparationModel::<f32>::build(&cfg(2, EncoderDepth::Shallow, 2, false)).unwrap();
        let a = model.forward(&random_clip(4, 16, 16, 3)).unwrap();
        let b = model.forward(&random_clip(6, 32, 32, 4)).unwrap();
        assert_eq!((a.final_layers.t(), a.final_layers.h(), a.final_layers.w()), (4, 16, 16));
        assert_eq!((b.final_layers.t(), b.final_layers.h(), b.final_layers.w()), (6, 32, 32));
        // Odd sizes survive the ceil-mode padding round trip.
        let c = model.forward(&random_clip(5, 19, 27, 5)).unwrap();
        assert_eq!((c.final_layers.t(), c.final_layers.h(), c.final_layers.w()), (5, 19, 27));
    }

    #[test]
    fn eval_mode_is_deterministic() {
        let mut model = SeparationModel::<f32>::build(&cfg(2, EncoderDepth::Shallow, 3, false)).unwrap();
        let clip = random_clip(4, 16, 16, 6);
        let a = model.forward(&clip).unwrap();
        let b = model.forward(&clip).unwrap();
        assert_eq!(a.final_layers.data(), b.final_layers.data());
    }

    #[test]
    fn too_small_clip_is_rejected() {
        let mut model = SeparationModel::<f32>::build(&cfg(2, EncoderDepth::Shallow, 2, false)).unwrap();
        assert!(model.forward(&random_clip(1, 4, 4, 7)).is_err());
    }

    #[test]
    fn corrector_contract() {
        let mut model = SeparationModel::<f32>::build(&cfg(2, EncoderDepth::Shallow, 2, true)).unwrap();
        let clip = random_clip(4, 16, 16, 8);
        let out = model.forward(&clip).unwrap();
        // final = initial + delta elementwise.
        for k in 0..out.final_layers.data().len() {
            let expect = out.initial.data()[k] + out.delta.data()[k];
            assert_eq!(out.final_layers.data()[k], expect);
        }
        // Shape preserved through the corrector.
        assert_eq!(out.delta.t(), 4);
        assert_eq!(out.delta.n_layers(), 2);

        // Zeroing the corrector head makes the delta vanish.
        model.visit_params(&mut |name, w, _| {
            if name.starts_with("corrector.") && name.contains("head") {
                w.iter_mut().for_each(|v| *v = 0.0);
            }
        });
        let out = model.forward(&clip).unwrap();
        assert!(out.delta.data().iter().all(|&v| v == 0.0));
        assert_eq!(out.final_layers.data(), out.initial.data());
    }

    #[test]
    fn no_corrector_final_equals_initial() {
        let mut model = SeparationModel::<f32>::build(&cfg(3, EncoderDepth::Shallow, 2, false)).unwrap();
        let out = model.forward(&random_clip(4, 16, 16, 9)).unwrap();
        assert!(out.delta.data().iter().all(|&v| v == 0.0));
        assert_eq!(out.final_layers.data(), out.initial.data());
        assert!(model.corrector_forward(&out.initial).is_err());
    }

    #[test]
    fn gradient_reaches_predictor_through_corrector() {
        let c = ModelConfig { seed: 11, ..cfg(2, EncoderDepth::Shallow, 2, true) };
        let mut model = SeparationModel::<f64>::build(&c).unwrap();
        let clip = random_clip(4, 16, 16, 10).cast::<f64>();
        let out = model.forward_batch(&clip.to_tensor(), true);
        let mut dfinal = Tensor::zeros(out.final_layers.dims());
        dfinal.data_mut().iter_mut().for_each(|v| *v = 1.0);
        model.backward_batch(&dfinal);
        let mut predictor_grad_norm = 0.0;
        model.visit_params(&mut |name, _, g| {
            if name.starts_with("predictor.") {
                predictor_grad_norm += g.iter().map(|v| v * v).sum::<f64>();
            }
        });
        assert!(predictor_grad_norm > 0.0, "corrector blocked the gradient");
    }

    #[test]
    fn layer_set_packing_roundtrip() {
        let a = random_clip(2, 4, 4, 20);
        let b = random_clip(2, 4, 4, 21);
        let set = LayerSet::from_clips(&[&a, &b]);
        assert_eq!(set.layer_clip(0, 12.0).data(), a.data());
        assert_eq!(set.layer_clip(1, 12.0).data(), b.data());
        // The zero-copy view agrees with the copied clip.
        let view = set.layer(1);
        assert_eq!(view.at(1, 2, 3, 0), b.at(1, 2, 3, 0));
    }
}
