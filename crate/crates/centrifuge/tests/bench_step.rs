//! Throwaway speed probe (ignored by default).
use centrifuge::datagen::{self, AlphaPolicy, CorpusConfig, PairMode, PairStreamConfig};
use centrifuge::losses::{pit_assignment, pit_loss_grad_into};
use centrifuge::model::{EncoderDepth, LayerSet, ModelConfig, SeparationModel};
use centrifuge::train::{Seeds, TrainConfig};
use centrifuge::videoio::VideoClip;

#[test]
#[ignore]
fn bench_phases() {
    let corpus_cfg = CorpusConfig { num_clips: 12, t: 20, h: 74, w: 74, fps: 12.0, background: datagen::BackgroundMode::Solid, distractors: (0, 1) };
    let corpus = datagen::gen_corpus::<f32>(&corpus_cfg, 1).unwrap();
    let stream = PairStreamConfig { t: 16, h: 64, w: 64, alpha: AlphaPolicy::Fixed(0.5), mode: PairMode::Normal, solid_color_fraction: 0.0, augment: true };
    let sampler = datagen::make_pair_stream(&corpus, &stream, 2).unwrap();
    let _cfg = TrainConfig { clip_t: 16, clip_h: 64, clip_w: 64, seeds: Seeds::from_master(0), ..TrainConfig::desk_default() };
    let model_cfg = ModelConfig { n_layers: 4, encoder_depth: EncoderDepth::Shallow, base_channels: 4, use_corrector: false, norm: true, seed: 0 };
    let mut model = SeparationModel::<f32>::build(&model_cfg).unwrap();

    let t0 = std::time::Instant::now();
    let batch: Vec<_> = (0..8u64).map(|i| sampler.sample(i)).collect();
    println!("sampling: {:.3} s", t0.elapsed().as_secs_f64());

    let blended: Vec<&VideoClip<f32>> = batch.iter().map(|s| &s.blended).collect();
    let x = VideoClip::batch(&blended);

    // Warmup
    let _ = model.forward_batch(&x, true);

    let iters = 5;
    let t0 = std::time::Instant::now();
    let mut out = model.forward_batch(&x, true);
    for _ in 1..iters {
        out = model.forward_batch(&x, true);
    }
    std::hint::black_box(&out);
    println!("forward: {:.3} s", t0.elapsed().as_secs_f64() / iters as f64);

    let t0 = std::time::Instant::now();
    for _ in 0..iters {
        let mut dfinal = centrifuge::tensor::Tensor::<f32>::zeros(out.final_layers.dims());
        use rayon::prelude::*;
        let sample_len = out.final_layers.sample_len();
        let fl = &out.final_layers;
        let _losses: Vec<f64> = dfinal.data_mut().par_chunks_mut(sample_len).enumerate().map(|(i, dslice)| {
            let s = &batch[i];
            let layers = LayerSet::from_tensor_sample(fl, i);
            let (assignment, l1, l2) = pit_assignment(&s.v1, &s.v2, &layers);
            pit_loss_grad_into(&s.v1, &s.v2, &layers, assignment, 0.125, dslice);
            (l1 + l2) as f64
        }).collect();
    }
    println!("loss+grad: {:.3} s", t0.elapsed().as_secs_f64() / iters as f64);

    let dfinal = centrifuge::tensor::Tensor::<f32>::zeros(out.final_layers.dims());
    let t0 = std::time::Instant::now();
    for _ in 0..iters {
        model.zero_grads();
        model.backward_batch(&dfinal);
        // re-forward to repopulate caches for the next backward
        out = model.forward_batch(&x, true);
    }
    std::hint::black_box(&out);
    let both = t0.elapsed().as_secs_f64() / iters as f64;
    println!("backward (incl re-forward): {:.3} s", both);
}

#[test]
#[ignore]
fn bench_training_step() {
    for (base, depth, corr) in [(4usize, EncoderDepth::Shallow, false), (6, EncoderDepth::Shallow, false), (8, EncoderDepth::Shallow, false), (4, EncoderDepth::Deep, false), (4, EncoderDepth::Shallow, true)] {
        let corpus_cfg = CorpusConfig { num_clips: 12, t: 20, h: 74, w: 74, fps: 12.0, background: datagen::BackgroundMode::Solid, distractors: (0, 1) };
        let corpus = datagen::gen_corpus::<f32>(&corpus_cfg, 1).unwrap();
        let stream = PairStreamConfig { t: 16, h: 64, w: 64, alpha: AlphaPolicy::Fixed(0.5), mode: PairMode::Normal, solid_color_fraction: 0.0, augment: true };
        let sampler = datagen::make_pair_stream(&corpus, &stream, 2).unwrap();
        let cfg = TrainConfig { clip_t: 16, clip_h: 64, clip_w: 64, seeds: Seeds::from_master(0), ..TrainConfig::desk_default() };
        let model_cfg = ModelConfig { n_layers: 4, encoder_depth: depth, base_channels: base, use_corrector: corr, norm: true, seed: 0 };
        let mut model = SeparationModel::<f32>::build(&model_cfg).unwrap();
        let batch: Vec<_> = (0..8u64).map(|i| sampler.sample(i)).collect();
        let _ = centrifuge::train::train_step_loss(&mut model, &batch, &cfg);
        let t0 = std::time::Instant::now();
        let iters = 5;
        for _ in 0..iters {
            let _ = centrifuge::train::train_step_loss(&mut model, &batch, &cfg);
        }
        let per = t0.elapsed().as_secs_f64() / iters as f64;
        println!("base={base} depth={:?} corr={corr}: {:.3} s/step -> 3000 steps = {:.1} min", depth, per, per * 3000.0 / 60.0);
    }
}
