//! Hyperparameter sweep for the synthetic end-to-end experiment: trains a
//! codebook model and an identical baseline on generated accented data and
//! reports accent-selection accuracy and token error rates.
//!
//!     cargo run -p acbk-core --release --example e2e_sweep

use std::collections::BTreeMap;

use acbk_core::codebook::AccentId;
use acbk_core::data::{gen_corpus, seven_bucket_split, GenConfig, Manifest, SplitRatios};
use acbk_core::decoding::{beam_search_b0, joint_beam_search, DecodeConfig, DecodeVariant};
use acbk_core::evaluate::{mapsswe_test, wer, MapssweResult};
use acbk_core::model::{train, ModelConfig, ModelParams, TrainConfig, TrainSample};
use acbk_core::rng::Rng;
use acbk_core::tensor::Tensor;

fn main() {
    let seeds = [20240811u64, 7u64, 99u64];
    for &(angle, bias, noise, epochs, beam) in &[
        (0.30f64, 0.10f64, 0.10f64, 50usize, 8usize),
        (0.80, 0.20, 0.10, 50, 8),
        (0.30, 0.20, 0.10, 50, 8),
        (0.80, 0.10, 0.10, 50, 8),
    ] {
        for &seed in &seeds {
            run_once(angle, bias, noise, epochs, beam, seed);
        }
    }
}

fn run_once(angle: f64, bias: f64, noise: f64, epochs: usize, beam: usize, seed: u64) {
    let t0 = std::time::Instant::now();
    let gen_cfg = GenConfig {
        seen_accents: vec!["alpha".into(), "beta".into()],
        unseen_accents: vec!["gamma".into()],
        speakers_per_accent: 14,
        num_utterances: 700,
        transcript_pool: 110,
        alphabet: "abcde".into(),
        min_transcript_len: 4,
        max_transcript_len: 4,
        feature_dim: 8,
        frames_per_token: 4,
        noise_scale: noise,
        unseen_extra_noise: 0.05,
        jitter_scale: 0.1,
        accent_bias_scale: bias,
        confusable_accents: true,
        accent_rotation_angle: angle,
    };
    let (generated, _) = gen_corpus(&gen_cfg, seed).unwrap();
    let manifest = Manifest::new(generated.iter().map(|g| g.utterance.clone()).collect()).unwrap();
    let seen = gen_cfg.seen_accents.clone();
    let ratios = SplitRatios([0.04, 0.04, 0.04, 0.04, 0.08, 0.16, 0.60]);
    let (assignment, _) =
        seven_bucket_split(&manifest, &seen, &ratios, &mut Rng::new(seed + 1)).unwrap();
    let (train_m, _dev, test_m) = assignment.partition(&manifest);

    let features: BTreeMap<&str, &Vec<f32>> = generated
        .iter()
        .map(|g| (g.utterance.utt_id.as_str(), &g.features))
        .collect();

    let model_cfg = |use_codebooks: bool| ModelConfig {
        input_dim: 8,
        model_dim: 16,
        num_encoder_layers: 2,
        num_decoder_layers: 1,
        num_heads: 4,
        ffn_hidden: 32,
        kernel_size: 3,
        alphabet: "abcde".into(),
        accent_names: seen.clone(),
        use_codebooks,
        codebook_entries: 4,
        codebook_layers: vec![0, 1],
        frozen_codebooks: false,
        ln_eps: 1e-5,
    };
    let train_cfg = TrainConfig {
        ctc_weight: 0.3,
        learning_rate: 1e-3,
        epochs,
        batch_size: 10,
        grad_clip_norm: 5.0,
        stochastic_depth_rate: 0.0,
        seed: seed + 2,
    };

    let make_samples = |model: &ModelParams<f32>, with_accent: bool| -> Vec<TrainSample<f32>> {
        train_m
            .utterances
            .iter()
            .map(|u| TrainSample {
                utt_id: u.utt_id.clone(),
                features: Tensor::from_vec(
                    &[u.duration_frames, 8],
                    features[u.utt_id.as_str()].clone(),
                ),
                accent: with_accent
                    .then(|| seen.iter().position(|a| *a == u.accent).map(AccentId))
                    .flatten(),
                target: model.vocab.encode(&u.transcript).unwrap(),
            })
            .collect()
    };

    let mut cb_model = ModelParams::<f32>::init(&model_cfg(true), &mut Rng::new(seed + 3)).unwrap();
    let cb_samples = make_samples(&cb_model, true);
    let cb_log = train(&mut cb_model, &cb_samples, &train_cfg).unwrap();
    let mut base_model =
        ModelParams::<f32>::init(&model_cfg(false), &mut Rng::new(seed + 3)).unwrap();
    let base_samples = make_samples(&base_model, false);
    let base_log = train(&mut base_model, &base_samples, &train_cfg).unwrap();

    let dc = |variant| DecodeConfig {
        beam_width: beam,
        max_len: 8,
        lm_weight: 0.0,
        variant,
        capture_stats: false,
    };
    let mut correct = 0usize;
    let mut n = 0usize;
    let (mut cb_err, mut base_err, mut ref_len) = (0usize, 0usize, 0usize);
    let mut cb_errors = Vec::new();
    let mut base_errors = Vec::new();
    for u in &test_m.utterances {
        if !seen.contains(&u.accent) {
            continue;
        }
        n += 1;
        let x = Tensor::<f32>::from_vec(&[u.duration_frames, 8], features[u.utt_id.as_str()].clone());
        let joint = joint_beam_search(&cb_model, &x, &dc(DecodeVariant::B3), None).unwrap();
        let best = &joint.hypotheses[0];
        if best.accent.map(|a| seen[a.0].clone()).as_deref() == Some(u.accent.as_str()) {
            correct += 1;
        }
        let text = |prefix: &[usize], m: &ModelParams<f32>| -> Vec<char> {
            m.vocab
                .decode(
                    &prefix[1..]
                        .iter()
                        .copied()
                        .filter(|&t| t != m.vocab.eos() && t != m.vocab.sos())
                        .collect::<Vec<_>>(),
                )
                .chars()
                .collect()
        };
        let r: Vec<char> = u.transcript.chars().collect();
        let cb = wer(&r, &text(&best.prefix, &cb_model));
        let b0 = beam_search_b0(&base_model, &x, &dc(DecodeVariant::B0), None, None).unwrap();
        let bs = wer(&r, &text(&b0.hypotheses[0].prefix, &base_model));
        cb_err += cb.errors();
        base_err += bs.errors();
        ref_len += r.len();
        cb_errors.push(cb.errors() as f64);
        base_errors.push(bs.errors() as f64);
    }
    let p = match mapsswe_test(&base_errors, &cb_errors).unwrap() {
        MapssweResult::Test { z, p, .. } => format!("z={z:.2} p={p:.2e}"),
        MapssweResult::Degenerate { reason, .. } => format!("degenerate: {reason}"),
    };
    println!(
        "angle={angle} bias={bias} noise={noise} epochs={epochs} seed={seed}: train={} test_seen={n} acc={correct}/{n} cbTER={:.3} baseTER={:.3} {} loss(cb {:.2}->{:.2}, base {:.2}->{:.2}) [{:.0?}]",
        train_m.utterances.len(),
        cb_err as f64 / ref_len as f64,
        base_err as f64 / ref_len as f64,
        p,
        cb_log.epoch_losses.first().unwrap(),
        cb_log.epoch_losses.last().unwrap(),
        base_log.epoch_losses.first().unwrap(),
        base_log.epoch_losses.last().unwrap(),
        t0.elapsed(),
    );
}
