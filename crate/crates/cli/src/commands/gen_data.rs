//! `acbk gen-data`: synthesize an accented corpus.

use std::path::PathBuf;
use std::time::Instant;

use clap::Args;

use super::{prepare_out_dir, write_json};
use crate::config::{ExperimentConfig, RunManifest};
use crate::CliError;
use acbk_core::data::{gen_corpus, write_corpus};

#[derive(Args)]
pub struct GenDataArgs {
    /// Experiment config file (TOML); flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory for manifest.jsonl and features/.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overwrite a nonempty output directory.
    #[arg(long)]
    pub force: bool,
    #[arg(long)]
    pub num_utterances: Option<usize>,
    /// Comma-separated seen accent names.
    #[arg(long, value_delimiter = ',')]
    pub seen: Option<Vec<String>>,
    /// Comma-separated unseen accent names.
    #[arg(long, value_delimiter = ',')]
    pub unseen: Option<Vec<String>>,
    #[arg(long)]
    pub speakers_per_accent: Option<usize>,
}

pub fn run(args: GenDataArgs) -> Result<(), CliError> {
    let started = Instant::now();
    let mut config = ExperimentConfig::load_or_default(args.config.as_deref())?;
    if args.seed.is_some() {
        config.seed = args.seed;
    }
    if args.num_utterances.is_some() {
        config.data.num_utterances = args.num_utterances;
    }
    if args.seen.is_some() {
        config.data.seen_accents = args.seen.clone();
    }
    if args.unseen.is_some() {
        config.data.unseen_accents = args.unseen.clone();
    }
    if args.speakers_per_accent.is_some() {
        config.data.speakers_per_accent = args.speakers_per_accent;
    }
    let seed = config.seed.unwrap_or(0);
    let gen_cfg = config.data.to_gen_config();

    prepare_out_dir(&args.out, args.force)?;
    let (generated, profiles) = gen_corpus(&gen_cfg, seed)?;
    let manifest = write_corpus(&generated, gen_cfg.feature_dim, &args.out)?;
    write_json(&args.out.join("accent_profiles.json"), &profiles)?;
    write_json(&args.out.join("gen_config.json"), &gen_cfg)?;

    let mut per_accent: std::collections::BTreeMap<&str, usize> = Default::default();
    let mut frames = 0usize;
    for u in &manifest.utterances {
        *per_accent.entry(u.accent.as_str()).or_default() += 1;
        frames += u.duration_frames;
    }
    println!(
        "generated {} utterances ({} frames, {} accents) into {}",
        manifest.utterances.len(),
        frames,
        per_accent.len(),
        args.out.display()
    );
    for (accent, count) in &per_accent {
        let kind = if gen_cfg.seen_accents.iter().any(|a| a == accent) {
            "seen"
        } else {
            "unseen"
        };
        println!("  {accent:>12} ({kind}): {count} utterances");
    }

    RunManifest {
        command: "gen-data".into(),
        config_hash: config.content_hash(),
        seed,
        artifacts: vec![
            "manifest.jsonl".into(),
            "features/".into(),
            "accent_profiles.json".into(),
            "gen_config.json".into(),
        ],
        elapsed_ms: started.elapsed().as_secs_f64() * 1e3,
    }
    .write(&args.out)
}
