//! Command-line surface: data generation, training, single-video separation,
//! the experiment grid, and report pretty-printing. Every run writes a
//! replayable manifest with its resolved configuration, seeds, and input
//! digests. Exit codes: 0 success, 1 internal error, 2 user/config error.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::datagen::{self, CorpusConfig, Label, PairStreamConfig};
use crate::error::{Error, Result};
use crate::evalsuite::{
    self, classifier::ClassifierConfig, experiment_correlation, experiment_downstream, Condition,
    ExperimentContext, ExperimentReport,
};
use crate::losses::{recon_loss, select_two, Assignment};
use crate::model::checkpoint::{load_checkpoint, save_checkpoint};
use crate::model::{EncoderDepth, ModelConfig, SeparationModel};
use crate::train::{self, Seeds, SgdMomentum, TrainConfig};
use crate::videoio::{self, load_clip_auto, save_clip, ManifestEntry, StorageFormat, VideoClip};

#[derive(Parser, Debug)]
#[command(name = "centrifuge", version, about = "Video layer separation trained on blended clips")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Materialize a procedural clip corpus (rawvid files + manifest.json).
    GenData {
        /// Corpus config JSON; defaults to the desk-scale corpus.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 100)]
        seed: u64,
    },
    /// Train a separation model.
    Train {
        /// Run config JSON ({model, train, data} sections, all optional).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Corpus directory (from gen-data); omit to generate into the cache.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Resume from a checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        steps: Option<u64>,
    },
    /// Separate a single video into layers.
    Separate {
        #[arg(long)]
        checkpoint: PathBuf,
        /// rawvid file or framedir directory.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// How many mutually-distant layers to select alongside the full set.
        #[arg(long, default_value_t = 2)]
        n_select: usize,
    },
    /// Run one or all of the evaluation experiments.
    Experiments {
        /// baselines | layer-count | depth | color | frozen | downstream |
        /// correlation | same-class | all
        #[arg(long)]
        which: String,
        /// Trained (normal) checkpoint, required by checkpoint-based
        /// experiments.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Frozen-trained checkpoint, required by the frozen experiment.
        #[arg(long)]
        frozen_checkpoint: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Pretty-print a report JSON.
    Report {
        #[arg(long)]
        path: PathBuf,
    },
}

#[derive(Serialize)]
struct RunManifest<'a> {
    command: String,
    argv: Vec<String>,
    resolved_config: serde_json::Value,
    seeds: serde_json::Value,
    input_digests: std::collections::BTreeMap<String, String>,
    outputs: Vec<String>,
    runtime_secs: f64,
    #[serde(skip)]
    _marker: std::marker::PhantomData<&'a ()>,
}

fn write_run_manifest(
    out_dir: &Path,
    command: &str,
    resolved_config: serde_json::Value,
    seeds: serde_json::Value,
    inputs: &[&Path],
    outputs: Vec<String>,
    started: Instant,
) -> Result<()> {
    let mut input_digests = std::collections::BTreeMap::new();
    for path in inputs {
        if path.exists() {
            input_digests.insert(path.display().to_string(), videoio::digest_path(path)?);
        }
    }
    let manifest = RunManifest {
        command: command.to_string(),
        argv: std::env::args().collect(),
        resolved_config,
        seeds,
        input_digests,
        outputs,
        runtime_secs: started.elapsed().as_secs_f64(),
        _marker: Default::default(),
    };
    let json = serde_json::to_vec_pretty(&manifest)?;
    videoio::write_atomic(&out_dir.join("run_manifest.json"), &json)
}

fn read_json_config<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
}

fn ensure_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Desk-scale corpus source for generated data: clips rendered slightly
/// larger than the training crop so augmentation has room.
fn default_gen(train: &TrainConfig) -> CorpusConfig {
    let scale = |v: usize| (v * 115).div_ceil(100);
    CorpusConfig {
        num_clips: 60,
        t: train.clip_t + 4,
        h: scale(train.clip_h),
        w: scale(train.clip_w),
        fps: 12.0,
        background: datagen::BackgroundMode::Solid,
        distractors: (0, 0),
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, Default)]
pub struct DataConfig {
    /// Existing corpus directory; when absent, clips are generated.
    #[serde(default)]
    pub corpus_dir: Option<PathBuf>,
    /// Generator settings for the train corpus (defaults follow the train
    /// geometry).
    #[serde(default)]
    pub gen: Option<CorpusConfig>,
    #[serde(default = "default_gen_seed")]
    pub gen_seed: u64,
    /// Held-out validation corpus is generated with this seed.
    #[serde(default = "default_val_seed")]
    pub val_gen_seed: u64,
    /// Fraction of training samples blended against a pure color.
    #[serde(default)]
    pub solid_color_fraction: f64,
}

fn default_gen_seed() -> u64 {
    100
}
fn default_val_seed() -> u64 {
    200
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainRunConfig {
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default = "TrainConfig::desk_default")]
    pub train: TrainConfig,
    #[serde(default)]
    pub data: DataConfig,
}

impl Default for TrainRunConfig {
    fn default() -> Self {
        TrainRunConfig {
            model: ModelConfig::default(),
            train: TrainConfig::desk_default(),
            data: DataConfig::default(),
        }
    }
}

fn stream_config(train: &TrainConfig, data: &DataConfig) -> PairStreamConfig {
    PairStreamConfig {
        t: train.clip_t,
        h: train.clip_h,
        w: train.clip_w,
        alpha: train.alpha,
        mode: train.pair_mode,
        solid_color_fraction: data.solid_color_fraction,
        augment: train.augment,
    }
}

/// Corpus cache root: $CENTRIFUGE_CACHE, or `.centrifuge-cache` in the
/// working directory.
fn cache_root() -> PathBuf {
    std::env::var_os("CENTRIFUGE_CACHE")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(".centrifuge-cache"))
}

fn corpus_digest(cfg: &CorpusConfig, seed: u64) -> String {
    let bytes = serde_json::to_vec(&(cfg, seed)).unwrap_or_default();
    let mut hash = 0xcbf29ce484222325u64;
    for b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    format!("{hash:016x}")
}

/// Materialize a corpus into `dir` as u8 rawvid clips plus manifest.json.
fn materialize_corpus(corpus: &[(VideoClip<f32>, Label)], dir: &Path) -> Result<Vec<ManifestEntry>> {
    ensure_dir(dir)?;
    let clips_dir = dir.join("clips");
    ensure_dir(&clips_dir)?;
    let mut entries = Vec::with_capacity(corpus.len());
    for (k, (clip, label)) in corpus.iter().enumerate() {
        let rel = PathBuf::from(format!("clips/clip_{k:05}.rvid"));
        save_clip(clip, &dir.join(&rel), StorageFormat::RawvidU8)?;
        entries.push(ManifestEntry { clip_path: rel, label: label.name() });
    }
    videoio::write_manifest(&dir.join("manifest.json"), &entries)?;
    Ok(entries)
}

/// Load a corpus directory, or generate one into the cache (keyed by config
/// digest) and load it back so training always runs off the on-disk format.
fn obtain_corpus(
    dir: Option<&Path>,
    gen: &CorpusConfig,
    seed: u64,
) -> Result<(Vec<(VideoClip<f32>, Label)>, PathBuf)> {
    if let Some(dir) = dir {
        if !dir.join("manifest.json").exists() {
            return Err(Error::InvalidInput(format!(
                "corpus directory {} has no manifest.json (run gen-data first)",
                dir.display()
            )));
        }
        return Ok((datagen::load_corpus(dir)?, dir.to_path_buf()));
    }
    let cache_dir = cache_root().join(corpus_digest(gen, seed));
    if !cache_dir.join("manifest.json").exists() {
        let corpus = datagen::gen_corpus::<f32>(gen, seed)?;
        materialize_corpus(&corpus, &cache_dir)?;
    }
    Ok((datagen::load_corpus(&cache_dir)?, cache_dir))
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { config, out, seed } => cmd_gen_data(config.as_deref(), &out, seed),
        Command::Train { config, data, out, resume, seed, steps } => {
            cmd_train(config.as_deref(), data.as_deref(), &out, resume.as_deref(), seed, steps)
        }
        Command::Separate { checkpoint, input, out, n_select } => {
            cmd_separate(&checkpoint, &input, &out, n_select)
        }
        Command::Experiments { which, checkpoint, frozen_checkpoint, config, out, seed } => cmd_experiments(
            &which,
            checkpoint.as_deref(),
            frozen_checkpoint.as_deref(),
            config.as_deref(),
            &out,
            seed,
        ),
        Command::Report { path } => cmd_report(&path),
    }
}

pub fn cmd_gen_data(config: Option<&Path>, out: &Path, seed: u64) -> Result<()> {
    let started = Instant::now();
    let cfg: CorpusConfig = match config {
        Some(path) => read_json_config(path)?,
        None => default_gen(&TrainConfig::desk_default()),
    };
    cfg.validate()?;
    let corpus = datagen::gen_corpus::<f32>(&cfg, seed)?;
    let entries = materialize_corpus(&corpus, out)?;
    println!("generated {} clips into {}", entries.len(), out.display());
    write_run_manifest(
        out,
        "gen-data",
        serde_json::to_value(&cfg)?,
        serde_json::json!({ "seed": seed }),
        &config.map(|c| vec![c]).unwrap_or_default(),
        entries.iter().map(|e| e.clip_path.display().to_string()).collect(),
        started,
    )
}

pub fn cmd_train(
    config: Option<&Path>,
    data: Option<&Path>,
    out: &Path,
    resume: Option<&Path>,
    seed: Option<u64>,
    steps: Option<u64>,
) -> Result<()> {
    let started = Instant::now();
    let mut run_cfg: TrainRunConfig = match config {
        Some(path) => read_json_config(path)?,
        None => TrainRunConfig::default(),
    };
    if let Some(seed) = seed {
        run_cfg.train.seeds = Seeds::from_master(seed);
        run_cfg.model.seed = seed;
    }
    if let Some(steps) = steps {
        run_cfg.train.total_steps = steps;
        run_cfg.train.lr_milestones.retain(|&(s, _)| s < steps);
    }
    run_cfg.train.validate()?;
    run_cfg.model.validate()?;
    ensure_dir(out)?;

    let gen = run_cfg.data.gen.clone().unwrap_or_else(|| default_gen(&run_cfg.train));
    let data_dir = data.or(run_cfg.data.corpus_dir.as_deref());
    let (train_corpus, corpus_path) = obtain_corpus(data_dir, &gen, run_cfg.data.gen_seed)?;
    // Validation corpus: held-out generation (or the same directory when an
    // explicit corpus was given, sampled with an independent stream seed).
    let val_corpus = match data_dir {
        Some(_) => None,
        None => Some(obtain_corpus(None, &gen, run_cfg.data.val_gen_seed)?.0),
    };
    let val_corpus_ref: &[(VideoClip<f32>, Label)] = val_corpus.as_deref().unwrap_or(&train_corpus);

    let stream = stream_config(&run_cfg.train, &run_cfg.data);
    let train_sampler = datagen::make_pair_stream(&train_corpus, &stream, run_cfg.train.seeds.data)?;
    let val_sampler = datagen::make_pair_stream(val_corpus_ref, &stream, run_cfg.train.seeds.val)?;

    let (mut model, mut optimizer) = match resume {
        Some(path) => {
            let (model, extra) = load_checkpoint::<f32>(path)?;
            let mut opt = SgdMomentum::new(run_cfg.train.momentum, run_cfg.train.weight_decay);
            opt.import(&extra);
            println!("resuming from {} at step {}", path.display(), model.step);
            (model, opt)
        }
        None => {
            let mut model_cfg = run_cfg.model;
            model_cfg.seed = run_cfg.train.seeds.init;
            (
                SeparationModel::<f32>::build(&model_cfg)?,
                SgdMomentum::new(run_cfg.train.momentum, run_cfg.train.weight_decay),
            )
        }
    };
    let param_count = model.param_count();
    println!(
        "model: n_layers {}, {} encoder, {} parameters",
        model.config.n_layers,
        model.config.encoder_depth.name(),
        param_count
    );

    let (mut model, log) = train::train(model, &mut optimizer, &train_sampler, &val_sampler, &run_cfg.train, Some(out))?;
    log.write(&out.join("train_log.csv"))?;
    let resolved = serde_json::to_value(&run_cfg)?;
    std::fs::write(out.join("resolved_config.json"), serde_json::to_vec_pretty(&resolved)?)
        .map_err(|e| Error::io(out.join("resolved_config.json"), e))?;
    save_checkpoint(&mut model, &optimizer.export(), &out.join("final.ckpt"))?;
    if let Some(val) = log.last_val_loss() {
        println!("final validation loss: {val:.6}");
    }
    write_run_manifest(
        out,
        "train",
        resolved,
        serde_json::to_value(run_cfg.train.seeds)?,
        &[&corpus_path],
        vec!["final.ckpt".into(), "train_log.csv".into(), "resolved_config.json".into()],
        started,
    )
}

/// Greedy farthest-point selection of `k` mutually distant layers, seeded by
/// the most distant pair.
fn select_k(layers: &crate::model::LayerSet<f32>, k: usize) -> Vec<usize> {
    let Assignment { i, j } = select_two(layers);
    let mut picked = vec![i, j];
    while picked.len() < k.min(layers.n_layers()) {
        let mut best = None;
        let mut best_dist = f64::NEG_INFINITY;
        for cand in 0..layers.n_layers() {
            if picked.contains(&cand) {
                continue;
            }
            let min_dist = picked
                .iter()
                .map(|&p| recon_loss::<f32>(layers.layer(cand), layers.layer(p)) as f64)
                .fold(f64::INFINITY, f64::min);
            if min_dist > best_dist {
                best_dist = min_dist;
                best = Some(cand);
            }
        }
        picked.push(best.expect("candidate exists"));
    }
    picked
}

pub fn cmd_separate(checkpoint: &Path, input: &Path, out: &Path, n_select: usize) -> Result<()> {
    let started = Instant::now();
    if n_select < 2 {
        return Err(Error::InvalidInput("--n-select must be at least 2".into()));
    }
    let (mut model, _) = load_checkpoint::<f32>(checkpoint)?;
    let clip: VideoClip<f32> = load_clip_auto(input)?;
    let t0 = Instant::now();
    let output = model.forward(&clip)?;
    let elapsed = t0.elapsed().as_secs_f64();
    println!(
        "separated {}x{}x{} clip into {} layers in {elapsed:.3} s",
        clip.t(),
        clip.h(),
        clip.w(),
        model.config.n_layers
    );
    ensure_dir(out)?;
    let mut outputs = Vec::new();
    for i in 0..output.final_layers.n_layers() {
        let name = format!("layer_{i}");
        let layer = output.final_layers.layer_clip(i, clip.fps).clamped();
        save_clip(&layer, &out.join(&name), StorageFormat::Framedir)?;
        outputs.push(name);
    }
    for (rank, &i) in select_k(&output.final_layers, n_select).iter().enumerate() {
        let name = format!("selected_{rank}");
        let layer = output.final_layers.layer_clip(i, clip.fps).clamped();
        save_clip(&layer, &out.join(&name), StorageFormat::Framedir)?;
        outputs.push(name);
    }
    write_run_manifest(
        out,
        "separate",
        serde_json::json!({ "checkpoint": checkpoint.display().to_string(), "n_select": n_select }),
        serde_json::json!({}),
        &[checkpoint, input],
        outputs,
        started,
    )?;
    println!("wrote layers to {}", out.display());
    Ok(())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentsRunConfig {
    #[serde(default = "default_experiment_model")]
    pub model: ModelConfig,
    #[serde(default = "default_experiment_budget")]
    pub budget: TrainConfig,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Evaluation samples per condition.
    #[serde(default = "default_samples")]
    pub samples: usize,
}

fn default_experiment_model() -> ModelConfig {
    ModelConfig { n_layers: 4, base_channels: 4, ..ModelConfig::default() }
}

fn default_experiment_budget() -> TrainConfig {
    TrainConfig {
        total_steps: 600,
        batch_size: 4,
        lr_milestones: vec![(250, 0.05), (375, 0.025), (500, 0.01)],
        clip_t: 8,
        clip_h: 32,
        clip_w: 32,
        val_every: 0,
        val_samples: 32,
        ..TrainConfig::desk_default()
    }
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2]
}
fn default_samples() -> usize {
    32
}

impl Default for ExperimentsRunConfig {
    fn default() -> Self {
        ExperimentsRunConfig {
            model: default_experiment_model(),
            budget: default_experiment_budget(),
            data: DataConfig::default(),
            seeds: default_seeds(),
            samples: default_samples(),
        }
    }
}

pub fn cmd_experiments(
    which: &str,
    checkpoint: Option<&Path>,
    frozen_checkpoint: Option<&Path>,
    config: Option<&Path>,
    out: &Path,
    seed: Option<u64>,
) -> Result<()> {
    let started = Instant::now();
    let mut cfg: ExperimentsRunConfig = match config {
        Some(path) => read_json_config(path)?,
        None => ExperimentsRunConfig::default(),
    };
    if let Some(seed) = seed {
        cfg.seeds = vec![seed];
    }
    cfg.budget.validate()?;
    ensure_dir(out)?;

    let gen = cfg.data.gen.clone().unwrap_or_else(|| default_gen(&cfg.budget));
    let (train_corpus, _) = obtain_corpus(cfg.data.corpus_dir.as_deref(), &gen, cfg.data.gen_seed)?;
    let (val_corpus, _) = obtain_corpus(None, &gen, cfg.data.val_gen_seed)?;
    let ctx = ExperimentContext {
        train_corpus: &train_corpus,
        val_corpus: &val_corpus,
        stream: stream_config(&cfg.budget, &cfg.data),
        train_cfg: cfg.budget.clone(),
        model_cfg: cfg.model,
        seeds: cfg.seeds.clone(),
    };

    let load_model = |path: Option<&Path>, what: &str| -> Result<SeparationModel<f32>> {
        let path = path.ok_or_else(|| {
            Error::InvalidInput(format!(
                "experiment '{which}' needs {what} (pass --{})",
                if what.contains("frozen") { "frozen-checkpoint" } else { "checkpoint" }
            ))
        })?;
        Ok(load_checkpoint::<f32>(path)?.0)
    };

    let all = which == "all";
    let names: Vec<&str> = if all {
        vec!["baselines", "layer-count", "depth", "color", "frozen", "downstream", "correlation", "same-class"]
    } else if which == "identity-baseline" {
        vec!["baselines"]
    } else {
        vec![which]
    };
    let mut index = Vec::new();
    for name in names {
        let report = match name {
            "baselines" => evalsuite::experiment_baselines(&ctx)?,
            "layer-count" => evalsuite::ablation_layer_count(&[2, 4], &[false, true], &ctx)?,
            "depth" => evalsuite::ablation_depth(
                &[EncoderDepth::Shallow, EncoderDepth::Medium, EncoderDepth::Deep],
                &ctx,
            )?,
            "color" => {
                let mut model = load_model(checkpoint, "a trained checkpoint")?;
                let colors: Vec<&str> = datagen::SOLID_COLOR_PALETTE.iter().map(|(n, _)| *n).collect();
                evalsuite::experiment_color(
                    &mut model,
                    &ctx,
                    &colors,
                    cfg.samples,
                    Some(&out.join("color_losses.png")),
                )?
            }
            "frozen" => {
                let mut frozen = load_model(frozen_checkpoint, "a frozen-trained checkpoint")?;
                let mut normal = load_model(checkpoint, "a trained checkpoint")?;
                evalsuite::experiment_frozen_eval(
                    &mut frozen,
                    &mut normal,
                    &ctx,
                    Some(&out.join("frozen_matrix.png")),
                )?
            }
            "downstream" => {
                let mut model = load_model(checkpoint, "a trained checkpoint")?;
                let geometry = (ctx.stream.t, ctx.stream.h, ctx.stream.w);
                let clf_cfg = ClassifierConfig { seed: cfg.seeds[0], ..Default::default() };
                let mut classifier =
                    evalsuite::classifier::train_classifier_with(&train_corpus, geometry, &clf_cfg)?;
                let sampler = ctx.val_sampler(datagen::PairMode::Normal, 7005)?;
                experiment_downstream(&mut model, &mut classifier, &sampler, cfg.samples)?
            }
            "correlation" => {
                let mut model = load_model(checkpoint, "a trained checkpoint")?;
                let sampler = ctx.val_sampler(datagen::PairMode::Normal, 7006)?;
                let n = cfg.samples.max(200);
                let (r_low, r_high) = experiment_correlation(&mut model, &sampler, n)?;
                ExperimentReport {
                    experiment: "correlation".into(),
                    conditions: vec![
                        Condition::new("r-low-level", r_low),
                        Condition::new("r-high-level", r_high),
                    ],
                    seeds: cfg.seeds.clone(),
                    config_digest: format!("{n}"),
                    runtime_secs: 0.0,
                }
            }
            "same-class" => {
                let mut model = load_model(checkpoint, "a trained checkpoint")?;
                evalsuite::experiment_same_class(&mut model, &ctx, cfg.samples)?
            }
            other => {
                return Err(Error::InvalidInput(format!(
                    "unknown experiment '{other}' (expected baselines, layer-count, depth, color, frozen, downstream, correlation, same-class, or all)"
                )))
            }
        };
        let json_path = out.join(format!("{name}.json"));
        report.write_json(&json_path)?;
        report.write_csv(&out.join(format!("{name}.csv")))?;
        println!("{name}:");
        for c in &report.conditions {
            println!("  {:<40} {:.6}", c.name, c.value);
        }
        index.push(serde_json::json!({ "experiment": name, "report": format!("{name}.json") }));
    }
    videoio::write_atomic(&out.join("index.json"), &serde_json::to_vec_pretty(&index)?)?;
    let mut inputs: Vec<&Path> = Vec::new();
    if let Some(c) = checkpoint {
        inputs.push(c);
    }
    if let Some(c) = frozen_checkpoint {
        inputs.push(c);
    }
    if let Some(c) = config {
        inputs.push(c);
    }
    write_run_manifest(
        out,
        "experiments",
        serde_json::to_value(&cfg)?,
        serde_json::to_value(&cfg.seeds)?,
        &inputs,
        index.iter().map(|v| v["report"].as_str().unwrap_or("").to_string()).collect(),
        started,
    )
}

pub fn cmd_report(path: &Path) -> Result<()> {
    let report: ExperimentReport = read_json_config(path)?;
    println!("experiment: {}", report.experiment);
    println!("seeds: {:?}", report.seeds);
    println!("config digest: {}", report.config_digest);
    println!("runtime: {:.1} s", report.runtime_secs);
    println!("{:<44} {:>12}", "condition", "value");
    for c in &report.conditions {
        println!("{:<44} {:>12.6}", c.name, c.value);
        for (k, v) in &c.extra {
            println!("    {k}: {v}");
        }
    }
    Ok(())
}
