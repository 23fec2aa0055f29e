//! Small 3D-conv classifier over the procedural shape classes, used by the
//! downstream-task experiment. Reuses the separation encoder plus global
//! average pooling and a linear head.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::datagen::{augment, Label, NUM_CLASSES};
use crate::error::Result;
use crate::model::layers::{
    global_avg_pool, global_avg_pool_backward, global_max_pool, global_max_pool_backward, Dense,
};
use crate::model::{Encoder, EncoderDepth, ModelConfig};
use crate::tensor::Tensor;
use crate::train::SgdMomentum;
use crate::videoio::VideoClip;

pub struct Classifier {
    enc: Encoder<f32>,
    head: Dense<f32>,
    saved_level_dims: Vec<[usize; 5]>,
    saved_argmax: Vec<usize>,
}

impl Classifier {
    pub fn build(base_channels: usize, seed: u64) -> Self {
        let cfg = ModelConfig {
            n_layers: 2,
            encoder_depth: EncoderDepth::Shallow,
            base_channels,
            use_corrector: false,
            norm: true,
            seed,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let enc = Encoder::build("classifier", 3, &cfg, &mut rng);
        let bottom_ch = *Encoder::<f32>::level_channels(&cfg).last().unwrap();
        // Average pooling carries global (background) statistics, max
        // pooling the object-selective peaks; the head sees both.
        let head = Dense::new("classifier.head", 2 * bottom_ch, NUM_CLASSES, &mut rng);
        Classifier { enc, head, saved_level_dims: Vec::new(), saved_argmax: Vec::new() }
    }

    /// Logits for a batch, [n, NUM_CLASSES].
    pub fn logits(&mut self, x: &Tensor<f32>, train: bool) -> Vec<f32> {
        let levels = self.enc.forward(x, train);
        self.saved_level_dims = levels.iter().map(|l| l.dims()).collect();
        let bottom = levels.last().unwrap();
        let avg = global_avg_pool(bottom);
        let (max, arg) = global_max_pool(bottom);
        self.saved_argmax = arg;
        let c = bottom.c();
        let mut pooled = Vec::with_capacity(2 * avg.len());
        for i in 0..x.n() {
            pooled.extend_from_slice(&avg[i * c..(i + 1) * c]);
            pooled.extend_from_slice(&max[i * c..(i + 1) * c]);
        }
        self.head.forward(&pooled, x.n())
    }

    fn backward(&mut self, dlogits: &[f32]) {
        let dpooled = self.head.backward(dlogits);
        let bottom_dims = *self.saved_level_dims.last().unwrap();
        let c = bottom_dims[4];
        let n = bottom_dims[0];
        let mut davg = vec![0.0f32; n * c];
        let mut dmax = vec![0.0f32; n * c];
        for i in 0..n {
            davg[i * c..(i + 1) * c].copy_from_slice(&dpooled[i * 2 * c..i * 2 * c + c]);
            dmax[i * c..(i + 1) * c].copy_from_slice(&dpooled[i * 2 * c + c..(i + 1) * 2 * c]);
        }
        let mut dbottom = global_avg_pool_backward(&davg, bottom_dims);
        dbottom.add_assign(&global_max_pool_backward(&dmax, &self.saved_argmax, bottom_dims));
        let mut dlevels: Vec<Tensor<f32>> = self
            .saved_level_dims
            .iter()
            .map(|&dims| Tensor::zeros(dims))
            .collect();
        *dlevels.last_mut().unwrap() = dbottom;
        let _ = self.enc.backward(dlevels);
    }

    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Vec<f32>, &mut Vec<f32>)) {
        self.enc.visit_params(f);
        f("classifier.head.w", &mut self.head.w, &mut self.head.gw);
        f("classifier.head.b", &mut self.head.b, &mut self.head.gb);
    }

    fn zero_grads(&mut self) {
        self.visit_params(&mut |_, _, g| g.iter_mut().for_each(|v| *v = 0.0));
    }

    /// Top-k class predictions for one clip (eval mode).
    pub fn predict_topk(&mut self, clip: &VideoClip<f32>, k: usize) -> Vec<Label> {
        let logits = self.logits(&clip.to_tensor(), false);
        let mut order: Vec<usize> = (0..NUM_CLASSES).collect();
        order.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]));
        order.into_iter().take(k).map(|c| Label(c as u8)).collect()
    }

    /// Top-1 accuracy over labeled clips (eval mode).
    pub fn accuracy(&mut self, clips: &[(VideoClip<f32>, Label)]) -> f64 {
        let correct = clips
            .iter()
            .filter(|(clip, label)| self.predict_topk(clip, 1)[0] == *label)
            .count();
        correct as f64 / clips.len().max(1) as f64
    }
}

/// Softmax cross-entropy: mean loss and d loss / d logits.
fn softmax_ce(logits: &[f32], targets: &[usize], classes: usize) -> (f64, Vec<f32>) {
    let n = targets.len();
    let mut dlogits = vec![0.0f32; logits.len()];
    let mut loss = 0.0f64;
    for (i, &target) in targets.iter().enumerate() {
        let row = &logits[i * classes..(i + 1) * classes];
        let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        let exps: Vec<f32> = row.iter().map(|&v| (v - max).exp()).collect();
        let sum: f32 = exps.iter().sum();
        loss += -((exps[target] / sum).max(1e-12) as f64).ln();
        let drow = &mut dlogits[i * classes..(i + 1) * classes];
        for c in 0..classes {
            let p = exps[c] / sum;
            drow[c] = (p - if c == target { 1.0 } else { 0.0 }) / n as f32;
        }
    }
    (loss / n as f64, dlogits)
}

#[derive(Clone, Copy, Debug)]
pub struct ClassifierConfig {
    pub base_channels: usize,
    pub steps: u64,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig { base_channels: 8, steps: 1200, batch_size: 8, lr: 0.02, seed: 0 }
    }
}

/// Train a classifier on clean labeled clips cropped to the given geometry.
pub fn train_classifier(
    corpus: &[(VideoClip<f32>, Label)],
    geometry: (usize, usize, usize),
    steps: u64,
    batch_size: usize,
    seed: u64,
) -> Result<Classifier> {
    train_classifier_with(corpus, geometry, &ClassifierConfig { steps, batch_size, seed, ..Default::default() })
}

pub fn train_classifier_with(
    corpus: &[(VideoClip<f32>, Label)],
    geometry: (usize, usize, usize),
    cfg: &ClassifierConfig,
) -> Result<Classifier> {
    let mut classifier = Classifier::build(cfg.base_channels, cfg.seed);
    let mut opt = SgdMomentum::<f32>::new(0.9, 0.0);
    let (t, h, w) = geometry;
    for step in 0..cfg.steps {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ step.wrapping_mul(0x2545_F491_4F6C_DD1D));
        let mut clips = Vec::with_capacity(cfg.batch_size);
        let mut targets = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size {
            let (clip, label) = &corpus[rng.random_range(0..corpus.len())];
            let prepared = if clip.geometry() == geometry {
                clip.clone()
            } else {
                augment(clip, t, h, w, rng.random())?
            };
            clips.push(prepared);
            targets.push(label.0 as usize);
        }
        let refs: Vec<&VideoClip<f32>> = clips.iter().collect();
        let x = VideoClip::batch(&refs);
        let logits = classifier.logits(&x, true);
        let (_, dlogits) = softmax_ce(&logits, &targets, NUM_CLASSES);
        classifier.zero_grads();
        classifier.backward(&dlogits);
        let lr = if step < cfg.steps * 2 / 3 { cfg.lr } else { cfg.lr / 5.0 };
        classifier.visit_params(&mut |name, w, g| opt.step_param(lr as f32, name, w, g));
    }
    Ok(classifier)
}
