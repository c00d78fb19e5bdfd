//! `acbk split`: seven-bucket speaker/transcript-disjoint splitting.

use std::path::PathBuf;
use std::time::Instant;

use clap::Args;

use super::{prepare_out_dir, write_json};
use crate::config::{ExperimentConfig, RunManifest};
use crate::CliError;
use acbk_core::data::Manifest;
use acbk_core::rng::Rng;

#[derive(Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Input manifest (JSON-lines).
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output directory for train/dev/test manifests and the report.
    #[arg(long)]
    pub out: PathBuf,
    /// Seen accents (comma-separated); defaults to the config's data
    /// section.
    #[arg(long, value_delimiter = ',')]
    pub seen: Option<Vec<String>>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub force: bool,
}

pub fn run(args: SplitArgs) -> Result<(), CliError> {
    let started = Instant::now();
    let mut config = ExperimentConfig::load_or_default(args.config.as_deref())?;
    if args.seed.is_some() {
        config.seed = args.seed;
    }
    let seed = config.seed.unwrap_or(0);
    let seen = args
        .seen
        .clone()
        .or_else(|| config.data.seen_accents.clone())
        .unwrap_or_else(|| acbk_core::data::GenConfig::default().seen_accents);
    let ratios = config.split.to_ratios();

    let manifest = Manifest::read_jsonl(&args.manifest)?;
    prepare_out_dir(&args.out, args.force)?;

    let mut rng = Rng::new(seed);
    let (assignment, report) =
        acbk_core::data::seven_bucket_split(&manifest, &seen, &ratios, &mut rng)?;
    let (train, dev, test) = assignment.partition(&manifest);
    train.write_jsonl(&args.out.join("train.jsonl"))?;
    dev.write_jsonl(&args.out.join("dev.jsonl"))?;
    test.write_jsonl(&args.out.join("test.jsonl"))?;
    write_json(&args.out.join("assignment.json"), &assignment)?;
    write_json(&args.out.join("split_report.json"), &report)?;

    // Disjointness verification, printed for the record.
    let disjoint = acbk_core::data::speaker_disjoint(&manifest, &assignment);
    println!(
        "split {} utterances -> train {} / dev {} / test {}",
        manifest.utterances.len(),
        train.utterances.len(),
        dev.utterances.len(),
        test.utterances.len()
    );
    println!(
        "speaker disjointness: {}",
        if disjoint { "PASS" } else { "FAIL" }
    );
    println!("bucket transcripts (1..7): {:?}", report.bucket_transcripts);
    for note in &report.notes {
        println!("note: {note}");
    }
    if report.degenerate {
        println!("warning: degenerate split (see notes above)");
    }
    if !disjoint {
        return Err(CliError::Infeasible(
            "split is not speaker-disjoint".into(),
        ));
    }

    RunManifest {
        command: "split".into(),
        config_hash: config.content_hash(),
        seed,
        artifacts: vec![
            "train.jsonl".into(),
            "dev.jsonl".into(),
            "test.jsonl".into(),
            "assignment.json".into(),
            "split_report.json".into(),
        ],
        elapsed_ms: started.elapsed().as_secs_f64() * 1e3,
    }
    .write(&args.out)
}
