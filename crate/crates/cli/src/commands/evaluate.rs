//! `acbk evaluate`: WER tables, paired significance against a second
//! system, codebook-utilization heatmap, and beam-entropy aggregation.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::Args;

use super::{prepare_out_dir, write_json};
use crate::config::{ExperimentConfig, RunManifest};
use crate::CliError;
use acbk_core::data::Manifest;
use acbk_core::decoding::{BeamTrace, DecodeRecord, TraceStep};
use acbk_core::evaluate::{
    entropy_report, mapsswe_test, utilization_heatmap, wer, wer_breakdown, MapssweResult,
    ScoredUtterance, WerBreakdown,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum TokenMode {
    /// Each character is a token (synthetic corpora).
    Chars,
    /// Whitespace-separated words (real text).
    Words,
}

#[derive(Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Reference manifest with true transcripts and accents.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Decode records (JSON-lines) of the system under test.
    #[arg(long)]
    pub decodes: PathBuf,
    /// Decode records of a second system for the matched-pairs test.
    #[arg(long)]
    pub compare: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Seen accents, in codebook order, for the seen/unseen aggregates and
    /// heatmap columns.
    #[arg(long, value_delimiter = ',')]
    pub seen: Option<Vec<String>>,
    #[arg(long, value_enum, default_value = "chars")]
    pub token_mode: TokenMode,
    #[arg(long)]
    pub force: bool,
}

fn read_decodes(path: &Path) -> Result<Vec<DecodeRecord>, CliError> {
    let text =
        std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| CliError::Data(format!("{} line {}: {e}", path.display(), i + 1)))
        })
        .collect()
}

fn tokens_of(text: &str, mode: TokenMode) -> Vec<String> {
    match mode {
        TokenMode::Chars => text.chars().map(|c| c.to_string()).collect(),
        TokenMode::Words => text.split_whitespace().map(|w| w.to_string()).collect(),
    }
}

fn score_records(
    records: &[DecodeRecord],
    refs: &BTreeMap<&str, &acbk_core::data::Utterance>,
    mode: TokenMode,
) -> Result<Vec<ScoredUtterance>, CliError> {
    records
        .iter()
        .map(|r| {
            let utt = refs.get(r.utt_id.as_str()).ok_or_else(|| {
                CliError::Data(format!("decode record {} not in manifest", r.utt_id))
            })?;
            let reference = tokens_of(&utt.transcript, mode);
            let hypothesis = tokens_of(&r.best.text, mode);
            Ok(ScoredUtterance {
                utt_id: r.utt_id.clone(),
                accent: utt.accent.clone(),
                counts: wer(&reference, &hypothesis),
            })
        })
        .collect()
}

fn wer_csv(bd: &WerBreakdown) -> String {
    let mut out = String::from("group,substitutions,deletions,insertions,ref_len,utterances,wer\n");
    let mut row = |name: &str, g: &acbk_core::evaluate::GroupWer| {
        out.push_str(&format!(
            "{name},{},{},{},{},{},{:.6}\n",
            g.substitutions,
            g.deletions,
            g.insertions,
            g.ref_len,
            g.utterances,
            g.wer()
        ));
    };
    row("overall", &bd.overall);
    row("seen", &bd.seen);
    row("unseen", &bd.unseen);
    for (accent, g) in &bd.per_accent {
        row(accent, g);
    }
    out
}

pub fn run(args: EvaluateArgs) -> Result<(), CliError> {
    let started = Instant::now();
    let config = ExperimentConfig::load_or_default(args.config.as_deref())?;
    let manifest = Manifest::read_jsonl(&args.manifest)?;
    let records = read_decodes(&args.decodes)?;
    let refs: BTreeMap<&str, &acbk_core::data::Utterance> = manifest
        .utterances
        .iter()
        .map(|u| (u.utt_id.as_str(), u))
        .collect();

    prepare_out_dir(&args.out, args.force)?;

    // Seen accents: flag, config, or chosen accents observed in records.
    let seen: Vec<String> = args
        .seen
        .clone()
        .or_else(|| config.data.seen_accents.clone())
        .unwrap_or_else(|| {
            let mut names: Vec<String> = records
                .iter()
                .filter_map(|r| r.best.accent.clone())
                .collect();
            names.sort();
            names.dedup();
            names
        });

    let scored = score_records(&records, &refs, args.token_mode)?;
    let breakdown = wer_breakdown(&scored, &seen);
    write_json(&args.out.join("wer.json"), &breakdown)?;
    std::fs::write(args.out.join("wer.csv"), wer_csv(&breakdown))
        .map_err(|e| CliError::Data(e.to_string()))?;
    println!(
        "WER overall {:.2}% ({} utterances) | seen {:.2}% | unseen {:.2}%",
        100.0 * breakdown.overall.wer(),
        breakdown.overall.utterances,
        100.0 * breakdown.seen.wer(),
        100.0 * breakdown.unseen.wer()
    );
    let mut artifacts = vec!["wer.json".to_string(), "wer.csv".to_string()];

    // Codebook-utilization heatmap over records that carry a chosen accent.
    let chosen: Vec<(String, String)> = records
        .iter()
        .filter_map(|r| r.best.accent.clone().map(|a| (r.utt_id.clone(), a)))
        .collect();
    if !chosen.is_empty() && !seen.is_empty() {
        let truth: BTreeMap<String, String> = manifest
            .utterances
            .iter()
            .map(|u| (u.utt_id.clone(), u.accent.clone()))
            .collect();
        let matrix = utilization_heatmap(&chosen, &truth, &seen)?;
        std::fs::write(args.out.join("heatmap.csv"), matrix.to_csv())
            .map_err(|e| CliError::Data(e.to_string()))?;
        write_json(&args.out.join("heatmap.json"), &matrix)?;
        artifacts.push("heatmap.csv".into());
        artifacts.push("heatmap.json".into());
        let diagonal: usize = matrix
            .counts
            .iter()
            .filter_map(|(accent, row)| {
                seen.iter().position(|s| s == accent).map(|i| row[i])
            })
            .sum();
        let seen_total: usize = matrix
            .counts
            .iter()
            .filter(|(accent, _)| seen.contains(accent))
            .map(|(_, row)| row.iter().sum::<usize>())
            .sum();
        if seen_total > 0 {
            println!(
                "codebook utilization: {diagonal}/{seen_total} seen-accent utterances chose their own codebook"
            );
        }
    }

    // Beam-entropy aggregation over records that captured a trace.
    let traces: Vec<BeamTrace> = records
        .iter()
        .filter_map(|r| r.trace.as_ref())
        .map(|t| BeamTrace {
            steps: t
                .counts
                .iter()
                .zip(&t.entropy)
                .map(|(c, &e)| TraceStep {
                    counts: c.clone(),
                    entropy_bits: e,
                })
                .collect(),
        })
        .collect();
    if !traces.is_empty() {
        let report = entropy_report(&traces);
        std::fs::write(args.out.join("entropy.csv"), report.to_csv())
            .map_err(|e| CliError::Data(e.to_string()))?;
        let mut per_utt = String::from("utt_id,step,entropy_bits\n");
        for (r, series) in records
            .iter()
            .filter(|r| r.trace.is_some())
            .zip(&report.per_utterance)
        {
            for (step, bits) in series.iter().enumerate() {
                per_utt.push_str(&format!("{},{step},{bits}\n", r.utt_id));
            }
        }
        std::fs::write(args.out.join("entropy_per_utt.csv"), per_utt)
            .map_err(|e| CliError::Data(e.to_string()))?;
        println!(
            "entropy traces: {} utterances, {} padded, step-0 mean {:.3} bits",
            report.per_utterance.len(),
            report.padded_traces,
            report.mean_bits.first().copied().unwrap_or(0.0)
        );
        artifacts.push("entropy.csv".into());
        artifacts.push("entropy_per_utt.csv".into());
    }

    // Matched-pairs significance against a second system.
    if let Some(compare_path) = &args.compare {
        let other = read_decodes(compare_path)?;
        let other_scored = score_records(&other, &refs, args.token_mode)?;
        let other_by_id: BTreeMap<&str, &ScoredUtterance> = other_scored
            .iter()
            .map(|s| (s.utt_id.as_str(), s))
            .collect();
        let mut errors_a = Vec::new();
        let mut errors_b = Vec::new();
        for s in &scored {
            if let Some(o) = other_by_id.get(s.utt_id.as_str()) {
                errors_a.push(s.counts.errors() as f64);
                errors_b.push(o.counts.errors() as f64);
            }
        }
        let result = mapsswe_test(&errors_a, &errors_b)?;
        write_json(&args.out.join("significance.json"), &result)?;
        artifacts.push("significance.json".into());
        match &result {
            MapssweResult::Test { z, p, mean_diff, n } => println!(
                "matched-pairs vs {}: n={n}, mean error diff {mean_diff:+.3}, Z={z:.3}, two-sided p={p:.3e}",
                compare_path.display()
            ),
            MapssweResult::Degenerate { reason, identical } => println!(
                "matched-pairs vs {}: degenerate ({reason}{})",
                compare_path.display(),
                if *identical { ", systems identical" } else { "" }
            ),
        }
    }

    RunManifest {
        command: "evaluate".into(),
        config_hash: config.content_hash(),
        seed: config.seed.unwrap_or(0),
        artifacts,
        elapsed_ms: started.elapsed().as_secs_f64() * 1e3,
    }
    .write(&args.out)
}
