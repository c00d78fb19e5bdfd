//! `acbk train`: fit a model on a manifest and write a checkpoint.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::Args;

use super::{prepare_out_dir, write_json};
use crate::config::{ExperimentConfig, RunManifest};
use crate::CliError;
use acbk_core::codebook::AccentId;
use acbk_core::data::{read_features, Manifest};
use acbk_core::model::{save_checkpoint, train, ModelParams, TrainSample};
use acbk_core::rng::Rng;
use acbk_core::tensor::Tensor;

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Training manifest (JSON-lines).
    #[arg(long)]
    pub manifest: PathBuf,
    /// Directory containing the feature files referenced by the manifest.
    #[arg(long)]
    pub data_dir: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Train the no-codebook baseline instead of the codebook model.
    #[arg(long)]
    pub baseline: bool,
    /// Seen accents in codebook order (comma-separated).
    #[arg(long, value_delimiter = ',')]
    pub seen: Option<Vec<String>>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub ctc_weight: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub force: bool,
}

/// Alphabet from config, or the sorted unique characters of the training
/// transcripts.
fn resolve_alphabet(config: &ExperimentConfig, manifest: &Manifest) -> String {
    if let Some(a) = &config.data.alphabet {
        return a.clone();
    }
    let mut chars: Vec<char> = manifest
        .utterances
        .iter()
        .flat_map(|u| u.transcript.chars())
        .collect();
    chars.sort_unstable();
    chars.dedup();
    chars.into_iter().collect()
}

pub fn load_samples(
    manifest: &Manifest,
    data_dir: &Path,
    model: &ModelParams<f32>,
) -> Result<Vec<TrainSample<f32>>, CliError> {
    manifest
        .utterances
        .iter()
        .map(|u| {
            let features: Tensor<f32> = read_features(&data_dir.join(&u.feature_path))?;
            let accent = if model.codebooks.is_some() {
                let idx = model
                    .config
                    .accent_names
                    .iter()
                    .position(|a| *a == u.accent)
                    .ok_or_else(|| {
                        CliError::Data(format!(
                            "utterance {}: accent {} is not a seen accent",
                            u.utt_id, u.accent
                        ))
                    })?;
                Some(AccentId(idx))
            } else {
                None
            };
            let target = model
                .vocab
                .encode(&u.transcript)
                .map_err(|e| CliError::Data(format!("utterance {}: {e}", u.utt_id)))?;
            Ok(TrainSample {
                utt_id: u.utt_id.clone(),
                features,
                accent,
                target,
            })
        })
        .collect()
}

pub fn run(args: TrainArgs) -> Result<(), CliError> {
    let started = Instant::now();
    let mut config = ExperimentConfig::load_or_default(args.config.as_deref())?;
    if args.seed.is_some() {
        config.seed = args.seed;
    }
    if args.epochs.is_some() {
        config.train.epochs = args.epochs;
    }
    if args.learning_rate.is_some() {
        config.train.learning_rate = args.learning_rate;
    }
    if args.ctc_weight.is_some() {
        config.train.ctc_weight = args.ctc_weight;
    }
    if args.batch_size.is_some() {
        config.train.batch_size = args.batch_size;
    }
    if args.seen.is_some() {
        config.data.seen_accents = args.seen.clone();
    }
    if args.baseline {
        config.model.use_codebooks = Some(false);
    }
    let seed = config.seed.unwrap_or(0);

    let manifest = Manifest::read_jsonl(&args.manifest)?;
    if manifest.utterances.is_empty() {
        return Err(CliError::Data("training manifest is empty".into()));
    }
    let first = &manifest.utterances[0];
    let probe: Tensor<f32> = read_features(&args.data_dir.join(&first.feature_path))?;
    let input_dim = probe.shape()[1];

    let alphabet = resolve_alphabet(&config, &manifest);
    let accent_names = config
        .data
        .seen_accents
        .clone()
        .unwrap_or_else(|| manifest.accents());
    let model_cfg = config
        .model
        .to_model_config(input_dim, &alphabet, accent_names);
    model_cfg.validate()?;

    prepare_out_dir(&args.out, args.force)?;
    let mut model = ModelParams::<f32>::init(&model_cfg, &mut Rng::new(seed))?;
    let samples = load_samples(&manifest, &args.data_dir, &model)?;
    let train_cfg = config.train.to_train_config(seed);
    let log = train(&mut model, &samples, &train_cfg)?;

    let ckpt_path = args.out.join("model.ckpt");
    save_checkpoint(&model, &ckpt_path)?;
    write_json(&args.out.join("train_log.json"), &log)?;
    let mut loss_csv = String::from("epoch,mean_loss\n");
    for (i, loss) in log.epoch_losses.iter().enumerate() {
        loss_csv.push_str(&format!("{i},{loss}\n"));
    }
    std::fs::write(args.out.join("loss.csv"), loss_csv)
        .map_err(|e| CliError::Data(e.to_string()))?;

    println!(
        "trained {} ({} params tensors, {} samples, {} epochs): loss {:.4} -> {:.4}",
        if model_cfg.use_codebooks {
            "codebook model"
        } else {
            "baseline model"
        },
        count_tensors(&model),
        samples.len(),
        train_cfg.epochs,
        log.epoch_losses.first().copied().unwrap_or(f64::NAN),
        log.epoch_losses.last().copied().unwrap_or(f64::NAN),
    );
    if log.skipped_infeasible > 0 {
        println!(
            "warning: skipped {} CTC-infeasible samples",
            log.skipped_infeasible
        );
    }
    println!("checkpoint: {}", ckpt_path.display());

    RunManifest {
        command: "train".into(),
        config_hash: config.content_hash(),
        seed,
        artifacts: vec![
            "model.ckpt".into(),
            "train_log.json".into(),
            "loss.csv".into(),
        ],
        elapsed_ms: started.elapsed().as_secs_f64() * 1e3,
    }
    .write(&args.out)
}

fn count_tensors(model: &ModelParams<f32>) -> usize {
    let mut n = 0;
    let mut scratch = model.clone();
    scratch.for_each_param(&mut |_, _| n += 1);
    n
}
