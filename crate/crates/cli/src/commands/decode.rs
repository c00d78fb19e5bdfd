//! `acbk decode`: run beam-search variants over a manifest and emit
//! JSON-lines decode records plus a relative timing report.

use std::path::PathBuf;
use std::time::Instant;

use clap::Args;
use rayon::prelude::*;
use serde::Serialize;

use super::{prepare_out_dir, write_json};
use crate::config::{ExperimentConfig, RunManifest};
use crate::CliError;
use acbk_core::codebook::AccentId;
use acbk_core::data::{read_features, Manifest};
use acbk_core::decoding::{
    decode_utterance, DecodeConfig, DecodeRecord, DecodeVariant, LmScorer,
};
use acbk_core::model::{load_checkpoint, ModelParams};
use acbk_core::tensor::Tensor;

#[derive(Args)]
pub struct DecodeArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub data_dir: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Variant to run: b0, b1, b2, b3, or fixed:<accent>. Repeatable; a
    /// relative timing table is printed when several are given.
    #[arg(long = "variant")]
    pub variants: Vec<String>,
    #[arg(long)]
    pub beam: Option<usize>,
    /// Maximum hypothesis length n_max (including <sos>).
    #[arg(long)]
    pub n_max: Option<usize>,
    #[arg(long)]
    pub lm_weight: Option<f64>,
    /// Manifest whose transcripts train the unigram fusion LM.
    #[arg(long)]
    pub lm_train_manifest: Option<PathBuf>,
    /// Capture per-step beam statistics into the decode records.
    #[arg(long)]
    pub trace: bool,
    /// Per-utterance decode parallelism.
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long)]
    pub force: bool,
}

/// Character-unigram language model estimated from transcripts; the
/// simplest useful scorer for the shallow-fusion hook.
pub struct UnigramLm {
    log_probs: Vec<f64>,
}

impl UnigramLm {
    pub fn from_manifest(manifest: &Manifest, model: &ModelParams<f32>) -> Result<Self, CliError> {
        let v = model.vocab.size();
        let mut counts = vec![1.0f64; v]; // add-one smoothing
        for u in &manifest.utterances {
            for id in model
                .vocab
                .encode(&u.transcript)
                .map_err(|e| CliError::Data(format!("lm manifest: {e}")))?
            {
                counts[id] += 1.0;
            }
            counts[model.vocab.eos()] += 1.0;
        }
        let total: f64 = counts.iter().sum();
        Ok(UnigramLm {
            log_probs: counts.iter().map(|c| (c / total).ln()).collect(),
        })
    }
}

impl LmScorer for UnigramLm {
    fn log_probs(&self, _prefix: &[usize]) -> Vec<f64> {
        self.log_probs.clone()
    }
}

fn parse_variant(s: &str, model: &ModelParams<f32>) -> Result<DecodeVariant, CliError> {
    match s {
        "b0" => Ok(DecodeVariant::B0),
        "b1" => Ok(DecodeVariant::B1),
        "b2" => Ok(DecodeVariant::B2),
        "b3" => Ok(DecodeVariant::B3),
        other => {
            if let Some(name) = other.strip_prefix("fixed:") {
                let idx = model
                    .config
                    .accent_names
                    .iter()
                    .position(|a| a == name)
                    .or_else(|| name.parse::<usize>().ok())
                    .ok_or_else(|| {
                        CliError::Config(format!("unknown accent {name:?} for fixed variant"))
                    })?;
                if idx >= model.config.num_accents() {
                    return Err(CliError::Config(format!(
                        "fixed accent index {idx} out of range"
                    )));
                }
                Ok(DecodeVariant::Fixed(AccentId(idx)))
            } else {
                Err(CliError::Config(format!(
                    "unknown variant {other:?} (expected b0|b1|b2|b3|fixed:<accent>)"
                )))
            }
        }
    }
}

#[derive(Serialize)]
struct TimingReport {
    per_variant_ms: Vec<(String, f64)>,
    relative: Vec<(String, f64)>,
    reference: String,
}

pub fn run(args: DecodeArgs) -> Result<(), CliError> {
    let started = Instant::now();
    let mut config = ExperimentConfig::load_or_default(args.config.as_deref())?;
    if args.beam.is_some() {
        config.decode.beam_width = args.beam;
    }
    if args.n_max.is_some() {
        config.decode.max_len = args.n_max;
    }
    if args.lm_weight.is_some() {
        config.decode.lm_weight = args.lm_weight;
    }
    if !args.variants.is_empty() {
        config.decode.variants = Some(args.variants.clone());
    }
    if args.trace {
        config.decode.trace = Some(true);
    }
    if args.jobs.is_some() {
        config.decode.jobs = args.jobs;
    }

    let model = load_checkpoint::<f32>(&args.checkpoint)?;
    let manifest = Manifest::read_jsonl(&args.manifest)?;
    let variant_names = config
        .decode
        .variants
        .clone()
        .unwrap_or_else(|| vec!["b3".to_string()]);
    let variants: Vec<(String, DecodeVariant)> = variant_names
        .iter()
        .map(|s| Ok((s.clone(), parse_variant(s, &model)?)))
        .collect::<Result<_, CliError>>()?;

    let lm: Option<UnigramLm> = match &args.lm_train_manifest {
        Some(path) => Some(UnigramLm::from_manifest(
            &Manifest::read_jsonl(path)?,
            &model,
        )?),
        None => None,
    };
    let lm_ref: Option<&dyn LmScorer> = lm.as_ref().map(|l| l as &dyn LmScorer);

    let decode_cfg = |variant| DecodeConfig {
        beam_width: config.decode.beam_width.unwrap_or(8),
        max_len: config.decode.max_len.unwrap_or(16),
        lm_weight: config.decode.lm_weight.unwrap_or(0.0),
        variant,
        capture_stats: config.decode.trace.unwrap_or(false),
    };

    prepare_out_dir(&args.out, args.force)?;
    let jobs = config.decode.jobs.unwrap_or(1).max(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::Config(format!("--jobs: {e}")))?;

    // Features loaded once, shared across variants.
    let features: Vec<(String, Tensor<f32>)> = manifest
        .utterances
        .iter()
        .map(|u| {
            Ok((
                u.utt_id.clone(),
                read_features::<f32>(&args.data_dir.join(&u.feature_path))?,
            ))
        })
        .collect::<Result<_, CliError>>()?;

    let mut timings: Vec<(String, f64)> = Vec::new();
    let mut artifacts = Vec::new();
    for (name, variant) in &variants {
        let cfg = decode_cfg(*variant);
        cfg.validate(model.config.num_accents())?;
        let t0 = Instant::now();
        let mut records: Vec<DecodeRecord> = pool.install(|| {
            features
                .par_iter()
                .map(|(utt_id, x)| {
                    let u0 = Instant::now();
                    let result = decode_utterance(&model, x, &cfg, lm_ref)?;
                    Ok(DecodeRecord::from_result(
                        utt_id,
                        *variant,
                        &result,
                        &model,
                        u0.elapsed().as_secs_f64() * 1e3,
                    ))
                })
                .collect::<Result<Vec<_>, acbk_core::decoding::DecodeError>>()
        })?;
        let elapsed_ms = t0.elapsed().as_secs_f64() * 1e3;
        // Order-stable output regardless of --jobs.
        records.sort_by(|a, b| a.utt_id.cmp(&b.utt_id));

        let file_name = format!("decodes_{}.jsonl", name.replace(':', "_"));
        let mut out = String::new();
        for r in &records {
            out.push_str(
                &serde_json::to_string(r).map_err(|e| CliError::Data(e.to_string()))?,
            );
            out.push('\n');
        }
        std::fs::write(args.out.join(&file_name), out)
            .map_err(|e| CliError::Data(e.to_string()))?;
        println!(
            "{name}: decoded {} utterances in {:.1} ms -> {file_name}",
            records.len(),
            elapsed_ms
        );
        timings.push((name.clone(), elapsed_ms));
        artifacts.push(file_name);
    }

    // Relative timing table (reference: b0 when present, else the fastest).
    let reference = timings
        .iter()
        .find(|(n, _)| n == "b0")
        .or_else(|| {
            timings
                .iter()
                .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
        })
        .map(|(n, t)| (n.clone(), *t))
        .unwrap_or(("none".into(), 1.0));
    let relative: Vec<(String, f64)> = timings
        .iter()
        .map(|(n, t)| (n.clone(), t / reference.1))
        .collect();
    if timings.len() > 1 {
        println!("relative inference time (reference {}):", reference.0);
        for (n, r) in &relative {
            println!("  {n:>10}: {r:.2}x");
        }
    }
    write_json(
        &args.out.join("timing.json"),
        &TimingReport {
            per_variant_ms: timings,
            relative,
            reference: reference.0,
        },
    )?;
    artifacts.push("timing.json".into());

    RunManifest {
        command: "decode".into(),
        config_hash: config.content_hash(),
        seed: config.seed.unwrap_or(0),
        artifacts,
        elapsed_ms: started.elapsed().as_secs_f64() * 1e3,
    }
    .write(&args.out)
}
