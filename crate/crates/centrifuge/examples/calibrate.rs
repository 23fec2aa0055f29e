//! Desk-scale calibration probe: trains the toy config on one seed and
//! reports validation loss against the identity/untrained baselines.
use centrifuge::datagen::{self, AlphaPolicy, CorpusConfig, PairMode, PairStreamConfig};
use centrifuge::losses::recon_loss;
use centrifuge::model::{EncoderDepth, ModelConfig, SeparationModel};
use centrifuge::train::{train, validate, Seeds, SgdMomentum, TrainConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let base: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(4);
    let steps: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(3000);
    let seed: u64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(0);
    let n_layers: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(4);
    let corr: bool = args.get(5).map(|s| s == "corr").unwrap_or(false);

    let corpus_cfg = CorpusConfig {
        num_clips: 60,
        t: 20,
        h: 74,
        w: 74,
        fps: 12.0,
        background: datagen::BackgroundMode::Solid,
        distractors: (0, 0),
    };
    let train_corpus = datagen::gen_corpus::<f32>(&corpus_cfg, 100).unwrap();
    let val_corpus = datagen::gen_corpus::<f32>(&corpus_cfg, 200).unwrap();

    let stream = PairStreamConfig {
        t: 16,
        h: 64,
        w: 64,
        alpha: AlphaPolicy::Fixed(0.5),
        mode: PairMode::Normal,
        solid_color_fraction: 0.0,
        augment: true,
    };
    let cfg = TrainConfig {
        total_steps: steps,
        val_every: 250,
        val_samples: 32,
        seeds: Seeds::from_master(seed),
        lr_milestones: vec![
            (steps * 5 / 12, 0.05),
            (steps * 5 / 8, 0.025),
            (steps * 5 / 6, 0.01),
        ],
        ..TrainConfig::desk_default()
    };
    let model_cfg = ModelConfig {
        n_layers,
        encoder_depth: EncoderDepth::Shallow,
        base_channels: base,
        use_corrector: corr,
        norm: true,
        seed: cfg.seeds.init,
    };

    let train_sampler = datagen::make_pair_stream(&train_corpus, &stream, cfg.seeds.data).unwrap();
    let val_sampler = datagen::make_pair_stream(&val_corpus, &stream, cfg.seeds.val).unwrap();

    // Identity baseline: mean pair distance over the validation stream.
    let identity: f64 = (0..cfg.val_samples as u64)
        .map(|i| {
            let s = val_sampler.sample(i);
            recon_loss::<f32>((&s.v1).into(), (&s.v2).into()) as f64
        })
        .sum::<f64>()
        / cfg.val_samples as f64;

    let mut model = SeparationModel::<f32>::build(&model_cfg).unwrap();
    let untrained = validate(&mut model, &val_sampler, cfg.val_samples).unwrap().total as f64;
    println!("identity baseline: {identity:.4}");
    println!("untrained:         {untrained:.4}");
    println!("target (0.6x):     {:.4}", 0.6 * identity);

    let t0 = std::time::Instant::now();
    let mut opt = SgdMomentum::new(cfg.momentum, cfg.weight_decay);
    let (_, log) = train(model, &mut opt, &train_sampler, &val_sampler, &cfg, None).unwrap();
    for row in log.rows.iter().filter(|r| r.val_loss.is_some()) {
        println!("step {:5}  lr {:.3}  train {:.4}  val {:.4}", row.step, row.lr, row.train_loss, row.val_loss.unwrap());
    }
    let final_val = log.last_val_loss().unwrap();
    println!(
        "FINAL base={base} steps={steps} seed={seed} n={n_layers} corr={corr}: val {final_val:.4}  ratio {:.3}  ({:.1} min)",
        final_val / identity,
        t0.elapsed().as_secs_f64() / 60.0
    );
}
