//! Desk-scale reproduction of the experiment grid: baselines, layer-count /
//! depth ablations, the color-constancy and frozen-video probes, downstream
//! action scoring, and the feature-distance correlation analysis. Every
//! experiment is a pure function of (checkpoints, config, seeds) and emits a
//! machine-readable report.

pub mod classifier;
pub mod plots;

use std::path::Path;
use std::time::Instant;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::{
    blend, make_pair_stream, make_solid_color, Label, PairMode, PairSampler, PairStreamConfig,
    SOLID_COLOR_PALETTE,
};
use crate::error::{Error, Result};
use crate::losses::{pit_loss, select_two};
use crate::model::{LayerSet, ModelConfig, SeparationModel};
use crate::train::{train, validate, Separator, SgdMomentum, TrainConfig};
use crate::videoio::VideoClip;
use classifier::Classifier;

pub use classifier::train_classifier;

/// One scalar result within an experiment.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Condition {
    pub name: String,
    pub value: f64,
    #[serde(default, skip_serializing_if = "serde_json::Map::is_empty")]
    pub extra: serde_json::Map<String, serde_json::Value>,
}

impl Condition {
    pub fn new(name: impl Into<String>, value: f64) -> Self {
        Condition { name: name.into(), value, extra: serde_json::Map::new() }
    }

    pub fn with(mut self, key: &str, value: f64) -> Self {
        self.extra.insert(key.into(), value.into());
        self
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub experiment: String,
    pub conditions: Vec<Condition>,
    pub seeds: Vec<u64>,
    pub config_digest: String,
    pub runtime_secs: f64,
}

impl ExperimentReport {
    pub fn condition(&self, name: &str) -> Option<f64> {
        self.conditions.iter().find(|c| c.name == name).map(|c| c.value)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("condition,value\n");
        for c in &self.conditions {
            out.push_str(&format!("{},{}\n", c.name, c.value));
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

fn digest_of(value: &impl Serialize) -> String {
    let bytes = serde_json::to_vec(value).unwrap_or_default();
    let mut hash = 0xcbf29ce484222325u64;
    for b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    format!("{hash:016x}")
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    values[values.len() / 2]
}

/// Pearson correlation coefficient.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 3 {
        return Err(Error::InvalidInput(format!(
            "pearson needs two equal series of >= 3 samples, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (&a, &b) in x.iter().zip(y) {
        cov += (a - mx) * (b - my);
        vx += (a - mx) * (a - mx);
        vy += (b - my) * (b - my);
    }
    Ok(cov / (vx.sqrt() * vy.sqrt()).max(1e-300))
}

/// Everything the training-based experiments need: corpora, stream geometry,
/// the per-run training budget, the base model shape, and the seeds to
/// median over.
pub struct ExperimentContext<'a> {
    pub train_corpus: &'a [(VideoClip<f32>, Label)],
    pub val_corpus: &'a [(VideoClip<f32>, Label)],
    pub stream: PairStreamConfig,
    pub train_cfg: TrainConfig,
    pub model_cfg: ModelConfig,
    pub seeds: Vec<u64>,
}

impl<'a> ExperimentContext<'a> {
    fn digest(&self) -> String {
        digest_of(&(&self.stream, &self.train_cfg, &self.model_cfg, &self.seeds))
    }

    /// Train one model under this context's budget with overrides applied.
    pub fn train_one(
        &self,
        seed: u64,
        tweak: impl Fn(&mut ModelConfig),
        mode: PairMode,
    ) -> Result<(SeparationModel<f32>, f64)> {
        let mut model_cfg = self.model_cfg;
        model_cfg.seed = seed;
        tweak(&mut model_cfg);
        let mut train_cfg = self.train_cfg.clone();
        train_cfg.seeds = crate::train::Seeds::from_master(seed);
        train_cfg.pair_mode = mode;
        let mut stream = self.stream.clone();
        stream.mode = mode;
        let train_sampler = make_pair_stream(self.train_corpus, &stream, train_cfg.seeds.data)?;
        let val_sampler = make_pair_stream(self.val_corpus, &stream, train_cfg.seeds.val)?;
        let model = SeparationModel::<f32>::build(&model_cfg)?;
        let mut opt = SgdMomentum::new(train_cfg.momentum, train_cfg.weight_decay);
        let (model, log) = train(model, &mut opt, &train_sampler, &val_sampler, &train_cfg, None)?;
        let final_val = log.last_val_loss().ok_or_else(|| {
            Error::InvalidConfig("experiment training budget produced no validation loss".into())
        })?;
        Ok((model, final_val))
    }

    pub fn val_sampler(&self, mode: PairMode, seed: u64) -> Result<PairSampler<'a, f32>> {
        let mut stream = self.stream.clone();
        stream.mode = mode;
        make_pair_stream(self.val_corpus, &stream, seed)
    }
}

/// Mean loss of the trivial separator that answers the blended input for
/// both layers; analytically the mean pairwise source distance at alpha 0.5.
pub fn baseline_identity(sampler: &PairSampler<f32>, num_samples: usize) -> Result<f64> {
    if num_samples == 0 {
        return Err(Error::InvalidInput("empty stream".into()));
    }
    let mut total = 0.0;
    for i in 0..num_samples as u64 {
        let s = sampler.sample(i);
        let layers = LayerSet::from_clips(&[&s.blended, &s.blended]);
        total += pit_loss(&s.v1, &s.v2, &layers).total as f64;
    }
    Ok(total / num_samples as f64)
}

/// Validation loss of a freshly initialized (untrained) model.
pub fn baseline_untrained(
    model_cfg: &ModelConfig,
    sampler: &PairSampler<f32>,
    seed: u64,
    num_samples: usize,
) -> Result<f64> {
    let mut cfg = *model_cfg;
    cfg.seed = seed;
    let mut model = SeparationModel::<f32>::build(&cfg)?;
    Ok(validate(&mut model, sampler, num_samples)?.total as f64)
}

/// Both baselines as a report.
pub fn experiment_baselines(ctx: &ExperimentContext) -> Result<ExperimentReport> {
    let start = Instant::now();
    let sampler = ctx.val_sampler(PairMode::Normal, 7001)?;
    let n = ctx.train_cfg.val_samples;
    let identity = baseline_identity(&sampler, n)?;
    let mut untrained: Vec<f64> = Vec::new();
    for &seed in &ctx.seeds {
        untrained.push(baseline_untrained(&ctx.model_cfg, &sampler, seed, n)?);
    }
    Ok(ExperimentReport {
        experiment: "baselines".into(),
        conditions: vec![
            Condition::new("identity", identity),
            Condition::new("untrained", median(&mut untrained)),
        ],
        seeds: ctx.seeds.clone(),
        config_digest: ctx.digest(),
        runtime_secs: start.elapsed().as_secs_f64(),
    })
}

/// Table-2 analog: validation loss per output layer count (and optionally
/// with the corrector).
pub fn ablation_layer_count(
    ns: &[usize],
    with_corrector: &[bool],
    ctx: &ExperimentContext,
) -> Result<ExperimentReport> {
    let start = Instant::now();
    let mut conditions = Vec::new();
    for &corr in with_corrector {
        for &n in ns {
            let mut finals: Vec<f64> = Vec::new();
            for &seed in &ctx.seeds {
                let (_, val) = ctx.train_one(
                    seed,
                    |cfg| {
                        cfg.n_layers = n;
                        cfg.use_corrector = corr;
                    },
                    PairMode::Normal,
                )?;
                finals.push(val);
            }
            let name = format!("n{}{}", n, if corr { "-corrector" } else { "-predictor" });
            conditions.push(Condition::new(name, median(&mut finals)));
        }
    }
    Ok(ExperimentReport {
        experiment: "layer-count".into(),
        conditions,
        seeds: ctx.seeds.clone(),
        config_digest: ctx.digest(),
        runtime_secs: start.elapsed().as_secs_f64(),
    })
}

/// Table-6 analog: validation loss per encoder depth, plus parameter counts.
pub fn ablation_depth(
    depths: &[crate::model::EncoderDepth],
    ctx: &ExperimentContext,
) -> Result<ExperimentReport> {
    let start = Instant::now();
    let mut conditions = Vec::new();
    for &depth in depths {
        let mut finals: Vec<f64> = Vec::new();
        let mut params = 0usize;
        for &seed in &ctx.seeds {
            let (mut model, val) = ctx.train_one(seed, |cfg| cfg.encoder_depth = depth, PairMode::Normal)?;
            params = model.param_count();
            finals.push(val);
        }
        conditions.push(
            Condition::new(depth.name(), median(&mut finals)).with("param_count", params as f64),
        );
    }
    Ok(ExperimentReport {
        experiment: "depth".into(),
        conditions,
        seeds: ctx.seeds.clone(),
        config_digest: ctx.digest(),
        runtime_secs: start.elapsed().as_secs_f64(),
    })
}

/// Color-constancy probe: blend held-out clips with pure-color clips (a task
/// the model never trained on) and measure the separation loss per color.
/// Also emits the bar-plot image with the clip-pair loss as reference.
pub fn experiment_color(
    model: &mut SeparationModel<f32>,
    ctx: &ExperimentContext,
    colors: &[&str],
    num_per_color: usize,
    plot_path: Option<&Path>,
) -> Result<ExperimentReport> {
    let start = Instant::now();
    let (t, h, w) = (ctx.stream.t, ctx.stream.h, ctx.stream.w);
    let sampler = ctx.val_sampler(PairMode::Normal, 7002)?;
    // Gray reference bar: loss on ordinary clip pairs.
    let reference = validate(model, &sampler, num_per_color.max(8))?.total as f64;

    let mut conditions = Vec::new();
    let mut labels = Vec::new();
    let mut values = Vec::new();
    for &color_name in colors {
        let &(_, rgb) = SOLID_COLOR_PALETTE
            .iter()
            .find(|(name, _)| *name == color_name)
            .ok_or_else(|| Error::InvalidInput(format!("unknown color '{color_name}'")))?;
        let mut total = 0.0;
        let mut color_err = 0.0;
        for k in 0..num_per_color {
            let s = sampler.sample(k as u64);
            let clip = s.v1;
            let solid = make_solid_color(rgb, t, h, w, clip.fps);
            let blended = blend(&clip, &solid, 0.5)?;
            let layers = model.forward(&blended)?.final_layers;
            let report = pit_loss(&clip, &solid, &layers);
            total += report.total as f64;
            color_err += report.l2 as f64;
        }
        let mean = total / num_per_color as f64;
        conditions.push(
            Condition::new(color_name, mean).with("color_layer_error", color_err / num_per_color as f64),
        );
        labels.push(color_name.to_string());
        values.push(mean);
    }
    if let Some(path) = plot_path {
        plots::bar_chart(path, "UNMIX LOSS PER FILTER COLOR", &labels, &values, Some(("pairs", reference)))?;
    }
    conditions.push(Condition::new("clip-pair-reference", reference));
    Ok(ExperimentReport {
        experiment: "color".into(),
        conditions,
        seeds: vec![],
        config_digest: ctx.digest(),
        runtime_secs: start.elapsed().as_secs_f64(),
    })
}

const FROZEN_EVAL_MODES: [(PairMode, &str); 3] = [
    (PairMode::BothFrozen, "2-frozen"),
    (PairMode::Normal, "2-normal"),
    (PairMode::OneFrozen, "1-frozen-1-normal"),
];

/// Frozen/normal 2x3 matrix: train one model on frozen pairs and one on
/// normal pairs (per seed), evaluate both on {2 frozen, 2 normal, 1 frozen
/// 1 normal}, recording loss and diversity.
pub fn experiment_frozen(ctx: &ExperimentContext, plot_path: Option<&Path>) -> Result<ExperimentReport> {
    let start = Instant::now();
    let mut per_seed: Vec<ExperimentReport> = Vec::new();
    for &seed in &ctx.seeds {
        let (mut frozen, _) = ctx.train_one(seed, |_| {}, PairMode::BothFrozen)?;
        let (mut normal, _) = ctx.train_one(seed, |_| {}, PairMode::Normal)?;
        per_seed.push(experiment_frozen_eval(&mut frozen, &mut normal, ctx, None)?);
    }
    // Median every condition across seeds.
    let mut conditions = Vec::new();
    for (k, c) in per_seed[0].conditions.iter().enumerate() {
        let mut losses: Vec<f64> = per_seed.iter().map(|r| r.conditions[k].value).collect();
        let mut divs: Vec<f64> = per_seed
            .iter()
            .map(|r| r.conditions[k].extra.get("diversity").and_then(|v| v.as_f64()).unwrap_or(0.0))
            .collect();
        conditions
            .push(Condition::new(c.name.clone(), median(&mut losses)).with("diversity", median(&mut divs)));
    }
    if let Some(path) = plot_path {
        let matrix: Vec<Vec<f64>> = (0..2)
            .map(|r| (0..3).map(|c| conditions[r * 3 + c].value).collect())
            .collect();
        plots::matrix_table(
            path,
            "LOSS: TRAIN ROWS / TEST COLS",
            &["frozen".into(), "normal".into()],
            &["2 frozen".into(), "2 normal".into(), "1fr 1no".into()],
            &matrix,
        )?;
    }
    Ok(ExperimentReport {
        experiment: "frozen".into(),
        conditions,
        seeds: ctx.seeds.clone(),
        config_digest: ctx.digest(),
        runtime_secs: start.elapsed().as_secs_f64(),
    })
}

/// The evaluation half of the frozen experiment, for already-trained models
/// (what `experiments --which frozen` runs on checkpoints).
pub fn experiment_frozen_eval(
    frozen_model: &mut SeparationModel<f32>,
    normal_model: &mut SeparationModel<f32>,
    ctx: &ExperimentContext,
    plot_path: Option<&Path>,
) -> Result<ExperimentReport> {
    let start = Instant::now();
    let mut conditions = Vec::new();
    let mut matrix = vec![vec![0.0; FROZEN_EVAL_MODES.len()]; 2];
    let mut rows: Vec<(&str, &mut SeparationModel<f32>)> =
        vec![("frozen-trained", frozen_model), ("normal-trained", normal_model)];
    for (row, (train_name, model)) in rows.iter_mut().enumerate() {
        for (col, (eval_mode, eval_name)) in FROZEN_EVAL_MODES.iter().enumerate() {
            let sampler = ctx.val_sampler(*eval_mode, 7003)?;
            let report = validate(*model, &sampler, ctx.train_cfg.val_samples)?;
            matrix[row][col] = report.total as f64;
            conditions.push(
                Condition::new(format!("{train_name}/{eval_name}"), report.total as f64)
                    .with("diversity", report.diversity as f64),
            );
        }
    }
    if let Some(path) = plot_path {
        plots::matrix_table(
            path,
            "LOSS: TRAIN ROWS / TEST COLS",
            &["frozen".into(), "normal".into()],
            &["2 frozen".into(), "2 normal".into(), "1fr 1no".into()],
            &matrix,
        )?;
    }
    Ok(ExperimentReport {
        experiment: "frozen".into(),
        conditions,
        seeds: vec![],
        config_digest: ctx.digest(),
        runtime_secs: start.elapsed().as_secs_f64(),
    })
}

/// {1, 0.5, 0} credit for recovering both, one, or neither label, as a
/// multiset comparison.
pub fn downstream_score(pred: (Label, Label), truth: (Label, Label)) -> f64 {
    let mut remaining = vec![truth.0, truth.1];
    let mut matched = 0;
    for p in [pred.0, pred.1] {
        if let Some(pos) = remaining.iter().position(|&t| t == p) {
            remaining.remove(pos);
            matched += 1;
        }
    }
    matched as f64 / 2.0
}

/// Downstream action scoring: (a) top-2 on the mixed clip, (b) top-1 on each
/// of the two auto-selected separated layers, (c) top-1 on the originals.
pub fn experiment_downstream(
    separator: &mut SeparationModel<f32>,
    classifier: &mut Classifier,
    sampler: &PairSampler<f32>,
    num_samples: usize,
) -> Result<ExperimentReport> {
    let start = Instant::now();
    if num_samples == 0 {
        return Err(Error::InvalidInput("empty stream".into()));
    }
    let mut mixed = 0.0;
    let mut unmixed = 0.0;
    let mut original = 0.0;
    for i in 0..num_samples as u64 {
        let s = sampler.sample(i);
        let truth = (
            s.labels.0.ok_or_else(|| Error::InvalidInput("downstream needs labeled sources".into()))?,
            s.labels.1.ok_or_else(|| Error::InvalidInput("downstream needs labeled sources".into()))?,
        );
        let top2 = classifier.predict_topk(&s.blended, 2);
        mixed += downstream_score((top2[0], top2[1]), truth);

        let layers = separator.forward(&s.blended)?.final_layers;
        let pick = select_two(&layers);
        let a = layers.layer_clip(pick.i, s.blended.fps).clamped();
        let b = layers.layer_clip(pick.j, s.blended.fps).clamped();
        let pa = classifier.predict_topk(&a, 1)[0];
        let pb = classifier.predict_topk(&b, 1)[0];
        unmixed += downstream_score((pa, pb), truth);

        let p1 = classifier.predict_topk(&s.v1, 1)[0];
        let p2 = classifier.predict_topk(&s.v2, 1)[0];
        original += downstream_score((p1, p2), truth);
    }
    let n = num_samples as f64;
    Ok(ExperimentReport {
        experiment: "downstream".into(),
        conditions: vec![
            Condition::new("mixed", mixed / n),
            Condition::new("unmixed", unmixed / n),
            Condition::new("original", original / n),
        ],
        seeds: vec![],
        config_digest: format!("{num_samples}"),
        runtime_secs: start.elapsed().as_secs_f64(),
    })
}

/// Correlate per-pair unmixing loss with the distance between the sources in
/// the separator's own encoder features: early stage (stem) and deepest
/// stage, global-mean pooled.
pub fn experiment_correlation(
    model: &mut SeparationModel<f32>,
    sampler: &PairSampler<f32>,
    num_samples: usize,
) -> Result<(f64, f64)> {
    if num_samples < 3 {
        return Err(Error::InvalidInput("correlation needs at least 3 samples".into()));
    }
    let mut losses = Vec::with_capacity(num_samples);
    let mut d_low = Vec::with_capacity(num_samples);
    let mut d_high = Vec::with_capacity(num_samples);
    for i in 0..num_samples as u64 {
        let s = sampler.sample(i);
        let layers = model.separate(&s);
        losses.push(pit_loss(&s.v1, &s.v2, &layers).total as f64);
        let f1 = model.encoder_features(&s.v1)?;
        let f2 = model.encoder_features(&s.v2)?;
        let pool = |t: &crate::tensor::Tensor<f32>| -> Vec<f64> {
            let c = t.c();
            let m = (t.numel() / c) as f64;
            let mut out = vec![0.0f64; c];
            for px in t.data().chunks_exact(c) {
                for (acc, &v) in out.iter_mut().zip(px) {
                    *acc += v as f64;
                }
            }
            out.iter_mut().for_each(|v| *v /= m);
            out
        };
        let dist = |a: &[f64], b: &[f64]| -> f64 {
            a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
        };
        d_low.push(dist(&pool(&f1[0]), &pool(&f2[0])));
        d_high.push(dist(&pool(f1.last().unwrap()), &pool(f2.last().unwrap())));
    }
    Ok((pearson(&d_low, &losses)?, pearson(&d_high, &losses)?))
}

/// Same-class-pair probe: blends of two clips from the same class vs random
/// pairs.
pub fn experiment_same_class(
    model: &mut SeparationModel<f32>,
    ctx: &ExperimentContext,
    num_samples: usize,
) -> Result<ExperimentReport> {
    let start = Instant::now();
    let sampler = ctx.val_sampler(PairMode::Normal, 7004)?;
    let random_mean = validate(model, &sampler, num_samples)?.total as f64;

    // Same-class pairs drawn by hand (the stream API has no class filter).
    let mut by_class: std::collections::BTreeMap<Label, Vec<usize>> = Default::default();
    for (k, (_, label)) in ctx.val_corpus.iter().enumerate() {
        by_class.entry(*label).or_default().push(k);
    }
    let classes: Vec<&Vec<usize>> = by_class.values().filter(|v| v.len() >= 2).collect();
    if classes.is_empty() {
        return Err(Error::InvalidInput("no class with two or more clips".into()));
    }
    let (t, h, w) = (ctx.stream.t, ctx.stream.h, ctx.stream.w);
    let mut total = 0.0;
    for i in 0..num_samples as u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(0xC0FFEE ^ i.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let group = classes[rng.random_range(0..classes.len())];
        let i1 = group[rng.random_range(0..group.len())];
        let mut i2 = group[rng.random_range(0..group.len())];
        while i2 == i1 {
            i2 = group[rng.random_range(0..group.len())];
        }
        let prep = |idx: usize, rng: &mut ChaCha8Rng| -> Result<VideoClip<f32>> {
            let clip = &ctx.val_corpus[idx].0;
            if clip.geometry() == (t, h, w) {
                Ok(clip.clone())
            } else {
                crate::datagen::augment(clip, t, h, w, rng.random())
            }
        };
        let v1 = prep(i1, &mut rng)?;
        let v2 = prep(i2, &mut rng)?;
        let blended = blend(&v1, &v2, 0.5)?;
        let layers = model.forward(&blended)?.final_layers;
        total += pit_loss(&v1, &v2, &layers).total as f64;
    }
    let same_mean = total / num_samples as f64;
    Ok(ExperimentReport {
        experiment: "same-class".into(),
        conditions: vec![
            Condition::new("same-class-pairs", same_mean),
            Condition::new("random-pairs", random_mean),
        ],
        seeds: vec![],
        config_digest: ctx.digest(),
        runtime_secs: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::recon_loss;
    use crate::datagen::{gen_corpus, AlphaPolicy, BackgroundMode, CorpusConfig};
    use crate::model::EncoderDepth;
    use crate::train::Seeds;

    fn tiny_ctx(corpus: &[(VideoClip<f32>, Label)]) -> ExperimentContext<'_> {
        ExperimentContext {
            train_corpus: corpus,
            val_corpus: corpus,
            stream: PairStreamConfig {
                t: 6,
                h: 16,
                w: 16,
                alpha: AlphaPolicy::Fixed(0.5),
                mode: PairMode::Normal,
                solid_color_fraction: 0.0,
                augment: false,
            },
            train_cfg: TrainConfig {
                total_steps: 4,
                batch_size: 2,
                base_lr: 0.1,
                momentum: 0.9,
                weight_decay: 0.0,
                lr_milestones: vec![],
                clip_t: 6,
                clip_h: 16,
                clip_w: 16,
                alpha: AlphaPolicy::Fixed(0.5),
                pair_mode: PairMode::Normal,
                augment: false,
                seeds: Seeds::from_master(0),
                val_every: 0,
                val_samples: 6,
                checkpoint_every: 0,
                consistency_weight: 0.0,
                diversity_penalty_weight: 0.0,
            },
            model_cfg: ModelConfig {
                n_layers: 2,
                encoder_depth: EncoderDepth::Shallow,
                base_channels: 2,
                use_corrector: false,
                norm: true,
                seed: 0,
            },
            seeds: vec![0],
        }
    }

    fn tiny_corpus() -> Vec<(VideoClip<f32>, Label)> {
        gen_corpus(
            &CorpusConfig {
                num_clips: 18,
                t: 6,
                h: 16,
                w: 16,
                fps: 12.0,
                background: BackgroundMode::Solid,
                distractors: (0, 0),
            },
            5,
        )
        .unwrap()
    }

    #[test]
    fn identity_baseline_matches_mean_pair_distance() {
        let corpus = tiny_corpus();
        let ctx = tiny_ctx(&corpus);
        let sampler = ctx.val_sampler(PairMode::Normal, 1).unwrap();
        let n = 24;
        let via_pit = baseline_identity(&sampler, n).unwrap();
        let direct: f64 = (0..n as u64)
            .map(|i| {
                let s = sampler.sample(i);
                recon_loss::<f32>((&s.v1).into(), (&s.v2).into()) as f64
            })
            .sum::<f64>()
            / n as f64;
        assert!((via_pit - direct).abs() < 1e-6, "{via_pit} vs {direct}");
    }

    #[test]
    fn identity_baseline_zero_for_identical_pairs() {
        // Hand-built sample with v1 == v2.
        let corpus = tiny_corpus();
        let clip = corpus[0].0.clone();
        let layers = LayerSet::from_clips(&[&clip, &clip]);
        let report = pit_loss(&clip, &clip, &layers);
        assert_eq!(report.total, 0.0);
    }

    #[test]
    fn downstream_score_rule() {
        let (a, b, c, d) = (Label(0), Label(1), Label(2), Label(3));
        assert_eq!(downstream_score((a, b), (a, b)), 1.0);
        assert_eq!(downstream_score((b, a), (a, b)), 1.0);
        assert_eq!(downstream_score((a, c), (a, b)), 0.5);
        assert_eq!(downstream_score((c, d), (a, b)), 0.0);
        // Duplicates count with multiplicity.
        assert_eq!(downstream_score((a, a), (a, b)), 0.5);
        // Symmetric in both orders.
        assert_eq!(downstream_score((c, a), (b, a)), downstream_score((a, c), (a, b)));
    }

    #[test]
    fn pearson_sanity() {
        let x = vec![1.0, 2.0, 3.0, 4.0];
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        assert!((pearson(&x, &neg).unwrap() + 1.0).abs() < 1e-12);
        assert!(pearson(&x[..2], &x[..2]).is_err());
    }

    #[test]
    fn color_experiment_blend_construction() {
        // Blending with black at alpha 0.5 halves the clip.
        let corpus = tiny_corpus();
        let clip = &corpus[0].0;
        let solid = make_solid_color([0.0; 3], clip.t(), clip.h(), clip.w(), clip.fps);
        let blended = blend(clip, &solid, 0.5).unwrap();
        for (b, o) in blended.data().iter().zip(clip.data()) {
            assert!((b - o / 2.0).abs() < 1e-7);
        }
    }

    struct OracleSeparator;
    impl Separator<f32> for OracleSeparator {
        fn n_layers(&self) -> usize {
            2
        }
        fn separate(&mut self, s: &crate::datagen::BlendedSample<f32>) -> LayerSet<f32> {
            LayerSet::from_clips(&[&s.v1, &s.v2])
        }
    }

    #[test]
    fn oracle_separator_downstream_matches_original() {
        // With a perfect separator, condition (b) equals condition (c).
        let corpus = tiny_corpus();
        let ctx = tiny_ctx(&corpus);
        let sampler = ctx.val_sampler(PairMode::Normal, 3).unwrap();
        let mut classifier = train_classifier(&corpus, (6, 16, 16), 60, 4, 2).unwrap();
        let n = 12;
        let mut unmixed = 0.0;
        let mut original = 0.0;
        for i in 0..n as u64 {
            let s = sampler.sample(i);
            let truth = (s.labels.0.unwrap(), s.labels.1.unwrap());
            let layers = OracleSeparator.separate(&s);
            let pick = select_two(&layers);
            let pa = classifier.predict_topk(&layers.layer_clip(pick.i, 12.0).clamped(), 1)[0];
            let pb = classifier.predict_topk(&layers.layer_clip(pick.j, 12.0).clamped(), 1)[0];
            unmixed += downstream_score((pa, pb), truth);
            let p1 = classifier.predict_topk(&s.v1, 1)[0];
            let p2 = classifier.predict_topk(&s.v2, 1)[0];
            original += downstream_score((p1, p2), truth);
        }
        assert_eq!(unmixed, original);
    }

    #[test]
    fn experiment_plumbing_smoke() {
        // One tiny budget run through each training-based experiment.
        let corpus = tiny_corpus();
        let ctx = tiny_ctx(&corpus);
        let report = experiment_baselines(&ctx).unwrap();
        assert!(report.condition("identity").unwrap() > 0.0);
        assert!(report.condition("untrained").unwrap() > 0.0);

        let report = ablation_layer_count(&[2], &[false], &ctx).unwrap();
        assert!(report.condition("n2-predictor").is_some());

        let (mut model, _) = ctx.train_one(0, |_| {}, PairMode::Normal).unwrap();
        let sampler = ctx.val_sampler(PairMode::Normal, 11).unwrap();
        let (r_low, r_high) = experiment_correlation(&mut model, &sampler, 8).unwrap();
        assert!(r_low.abs() <= 1.0 && r_high.abs() <= 1.0);

        let report = experiment_color(&mut model, &ctx, &["black", "magenta"], 3, None).unwrap();
        assert!(report.condition("black").unwrap() >= 0.0);

        let report = experiment_same_class(&mut model, &ctx, 4).unwrap();
        assert!(report.condition("same-class-pairs").unwrap() >= 0.0);
    }
}
