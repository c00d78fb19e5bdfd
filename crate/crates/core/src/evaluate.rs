//! Measurement layer: word error rate with full substitution/deletion/
//! insertion breakdowns, the matched-pairs significance test used to
//! compare two systems on the same utterances, the codebook-utilization
//! heatmap, and beam-entropy aggregation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::decoding::BeamTrace;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("utterance {0} missing from {1}")]
    MissingUtt(String, &'static str),
    #[error("paired series have different lengths: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("{0}")]
    Invalid(String),
}

/// Edit-distance alignment counts for one utterance.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditCounts {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    /// Reference length N.
    pub ref_len: usize,
}

impl EditCounts {
    pub fn errors(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }

    pub fn wer(&self) -> f64 {
        if self.ref_len == 0 {
            if self.errors() == 0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            self.errors() as f64 / self.ref_len as f64
        }
    }
}

/// Levenshtein alignment with unit costs. Ties prefer substitution over an
/// insertion-plus-deletion pair. An empty reference against a nonempty
/// hypothesis counts every token as an insertion (N = 0 flagged by the
/// caller via `ref_len`).
pub fn wer<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> EditCounts {
    let (n, m) = (reference.len(), hypothesis.len());
    // dist[i][j]: edits aligning ref[..i] with hyp[..j].
    let mut dist = vec![vec![0usize; m + 1]; n + 1];
    for (i, row) in dist.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=m {
        dist[0][j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub_cost = usize::from(reference[i - 1] != hypothesis[j - 1]);
            dist[i][j] = (dist[i - 1][j - 1] + sub_cost)
                .min(dist[i - 1][j] + 1)
                .min(dist[i][j - 1] + 1);
        }
    }
    // Backtrace, preferring the diagonal on ties.
    let (mut i, mut j) = (n, m);
    let mut counts = EditCounts {
        ref_len: n,
        ..EditCounts::default()
    };
    while i > 0 || j > 0 {
        if i > 0 && j > 0 {
            let sub_cost = usize::from(reference[i - 1] != hypothesis[j - 1]);
            if dist[i][j] == dist[i - 1][j - 1] + sub_cost {
                counts.substitutions += sub_cost;
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && dist[i][j] == dist[i - 1][j] + 1 {
            counts.deletions += 1;
            i -= 1;
        } else {
            counts.insertions += 1;
            j -= 1;
        }
    }
    counts
}

/// Per-utterance scoring input: true accent plus reference/hypothesis token
/// sequences.
#[derive(Clone, Debug)]
pub struct ScoredUtterance {
    pub utt_id: String,
    pub accent: String,
    pub counts: EditCounts,
}

/// Error-sum over length-sum aggregates, overall and per group.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct WerBreakdown {
    pub per_utterance: BTreeMap<String, EditCounts>,
    pub overall: GroupWer,
    pub per_accent: BTreeMap<String, GroupWer>,
    pub seen: GroupWer,
    pub unseen: GroupWer,
}

#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
pub struct GroupWer {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub ref_len: usize,
    pub utterances: usize,
}

impl GroupWer {
    fn absorb(&mut self, c: &EditCounts) {
        self.substitutions += c.substitutions;
        self.deletions += c.deletions;
        self.insertions += c.insertions;
        self.ref_len += c.ref_len;
        self.utterances += 1;
    }

    pub fn errors(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }

    /// Group WER = error sum over length sum, not mean of rates.
    pub fn wer(&self) -> f64 {
        if self.ref_len == 0 {
            0.0
        } else {
            self.errors() as f64 / self.ref_len as f64
        }
    }
}

/// Aggregates per-utterance counts into overall / per-accent / seen /
/// unseen groups.
pub fn wer_breakdown(utts: &[ScoredUtterance], seen_accents: &[String]) -> WerBreakdown {
    let mut out = WerBreakdown::default();
    for u in utts {
        out.per_utterance.insert(u.utt_id.clone(), u.counts);
        out.overall.absorb(&u.counts);
        out.per_accent
            .entry(u.accent.clone())
            .or_default()
            .absorb(&u.counts);
        if seen_accents.contains(&u.accent) {
            out.seen.absorb(&u.counts);
        } else {
            out.unseen.absorb(&u.counts);
        }
    }
    out
}

/// Outcome of the matched-pairs test.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum MapssweResult {
    /// Z statistic and two-sided p-value.
    Test { z: f64, p: f64, mean_diff: f64, n: usize },
    /// Fewer than two segments or zero variance.
    Degenerate { reason: String, identical: bool },
}

impl MapssweResult {
    pub fn significant(&self, alpha: f64) -> bool {
        matches!(self, MapssweResult::Test { p, .. } if *p < alpha)
    }
}

/// Matched-pairs test over per-utterance error counts of two systems on the
/// same utterances: Z = mean(diff) / (stddev(diff)/sqrt(n)) with the
/// two-sided p from the standard normal. Segments are whole utterances.
pub fn mapsswe_test(errors_a: &[f64], errors_b: &[f64]) -> Result<MapssweResult, EvalError> {
    if errors_a.len() != errors_b.len() {
        return Err(EvalError::LengthMismatch(errors_a.len(), errors_b.len()));
    }
    let n = errors_a.len();
    let diffs: Vec<f64> = errors_a.iter().zip(errors_b).map(|(a, b)| a - b).collect();
    if n < 2 {
        return Ok(MapssweResult::Degenerate {
            reason: format!("need at least 2 paired segments, got {n}"),
            identical: diffs.iter().all(|&d| d == 0.0),
        });
    }
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n as f64 - 1.0);
    if var == 0.0 {
        return Ok(MapssweResult::Degenerate {
            reason: "zero variance in paired differences".into(),
            identical: mean == 0.0,
        });
    }
    let z = mean / (var.sqrt() / (n as f64).sqrt());
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let p = 2.0 * (1.0 - normal.cdf(z.abs()));
    Ok(MapssweResult::Test {
        z,
        p,
        mean_diff: mean,
        n,
    })
}

/// Counts of which seen-accent codebook produced the best hypothesis, per
/// true test accent.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct UtilizationMatrix {
    /// Chosen-accent columns, in codebook order.
    pub seen_accents: Vec<String>,
    /// True accent -> counts per chosen accent.
    pub counts: BTreeMap<String, Vec<usize>>,
}

impl UtilizationMatrix {
    pub fn row_total(&self, accent: &str) -> usize {
        self.counts.get(accent).map(|r| r.iter().sum()).unwrap_or(0)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("true_accent");
        for a in &self.seen_accents {
            out.push(',');
            out.push_str(a);
        }
        out.push('\n');
        for (accent, row) in &self.counts {
            out.push_str(accent);
            for c in row {
                out.push(',');
                out.push_str(&c.to_string());
            }
            out.push('\n');
        }
        out
    }
}

/// Joins decode outputs (chosen accent of the best hypothesis) with the
/// true accent of each utterance.
pub fn utilization_heatmap(
    chosen: &[(String, String)], // (utt_id, chosen seen accent)
    accent_truth: &BTreeMap<String, String>,
    seen_accents: &[String],
) -> Result<UtilizationMatrix, EvalError> {
    let mut matrix = UtilizationMatrix {
        seen_accents: seen_accents.to_vec(),
        counts: BTreeMap::new(),
    };
    for (utt_id, chosen_accent) in chosen {
        let truth = accent_truth
            .get(utt_id)
            .ok_or_else(|| EvalError::MissingUtt(utt_id.clone(), "accent truth map"))?;
        let col = seen_accents
            .iter()
            .position(|a| a == chosen_accent)
            .ok_or_else(|| {
                EvalError::Invalid(format!("chosen accent {chosen_accent} is not a seen accent"))
            })?;
        let row = matrix
            .counts
            .entry(truth.clone())
            .or_insert_with(|| vec![0; seen_accents.len()]);
        row[col] += 1;
    }
    Ok(matrix)
}

/// Per-step mean beam entropy over a set of traces, plus the per-utterance
/// series. Shorter traces are padded with their final value and flagged.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct EntropyReport {
    pub mean_bits: Vec<f64>,
    pub per_utterance: Vec<Vec<f64>>,
    pub padded_traces: usize,
}

impl EntropyReport {
    /// Plot-ready CSV: step, mean entropy.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,mean_entropy_bits\n");
        for (i, e) in self.mean_bits.iter().enumerate() {
            out.push_str(&format!("{i},{e}\n"));
        }
        out
    }
}

pub fn entropy_report(traces: &[BeamTrace]) -> EntropyReport {
    let series: Vec<Vec<f64>> = traces
        .iter()
        .map(|t| t.steps.iter().map(|s| s.entropy_bits).collect())
        .collect();
    let max_len = series.iter().map(Vec::len).max().unwrap_or(0);
    let mut padded = 0;
    let mut mean = vec![0.0; max_len];
    for s in &series {
        if s.len() < max_len {
            padded += 1;
        }
        let last = s.last().copied().unwrap_or(0.0);
        for (i, slot) in mean.iter_mut().enumerate() {
            *slot += s.get(i).copied().unwrap_or(last);
        }
    }
    if !series.is_empty() {
        for slot in &mut mean {
            *slot /= series.len() as f64;
        }
    }
    EntropyReport {
        mean_bits: mean,
        per_utterance: series,
        padded_traces: padded,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoding::TraceStep;
    use crate::rng::Rng;

    fn toks(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    #[test]
    fn identical_sequences_have_zero_wer() {
        let c = wer(&toks("a b c"), &toks("a b c"));
        assert_eq!(c, EditCounts { substitutions: 0, deletions: 0, insertions: 0, ref_len: 3 });
        assert_eq!(c.wer(), 0.0);
    }

    #[test]
    fn single_substitution_is_forced() {
        let c = wer(&toks("a b c"), &toks("a x c"));
        assert_eq!(c.substitutions, 1);
        assert_eq!(c.deletions, 0);
        assert_eq!(c.insertions, 0);
        assert!((c.wer() - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn empty_reference_counts_insertions() {
        let c = wer(&toks(""), &toks("a b"));
        assert_eq!(c.ref_len, 0);
        assert_eq!(c.insertions, 2);
        assert!(c.wer().is_infinite());
    }

    #[test]
    fn deletions_and_insertions() {
        let c = wer(&toks("a b c d"), &toks("a c"));
        assert_eq!(c.errors(), 2);
        assert_eq!(c.deletions, 2);
        let c = wer(&toks("a c"), &toks("a b c d"));
        assert_eq!(c.insertions, 2);
    }

    /// Independent full-DP-table oracle with explicit backtrace over
    /// operation markers.
    fn wer_oracle(r: &[usize], h: &[usize]) -> (usize, usize, usize) {
        #[derive(Clone, Copy, PartialEq)]
        enum Op {
            Start,
            Match,
            Sub,
            Del,
            Ins,
        }
        let (n, m) = (r.len(), h.len());
        let mut cost = vec![vec![0usize; m + 1]; n + 1];
        let mut op = vec![vec![Op::Start; m + 1]; n + 1];
        for i in 1..=n {
            cost[i][0] = i;
            op[i][0] = Op::Del;
        }
        for j in 1..=m {
            cost[0][j] = j;
            op[0][j] = Op::Ins;
        }
        for i in 1..=n {
            for j in 1..=m {
                let same = r[i - 1] == h[j - 1];
                let diag = cost[i - 1][j - 1] + usize::from(!same);
                let del = cost[i - 1][j] + 1;
                let ins = cost[i][j - 1] + 1;
                // Tie preference: diagonal first.
                if diag <= del && diag <= ins {
                    cost[i][j] = diag;
                    op[i][j] = if same { Op::Match } else { Op::Sub };
                } else if del <= ins {
                    cost[i][j] = del;
                    op[i][j] = Op::Del;
                } else {
                    cost[i][j] = ins;
                    op[i][j] = Op::Ins;
                }
            }
        }
        let (mut i, mut j) = (n, m);
        let (mut s, mut d, mut ins) = (0, 0, 0);
        loop {
            match op[i][j] {
                Op::Start => break,
                Op::Match => {
                    i -= 1;
                    j -= 1;
                }
                Op::Sub => {
                    s += 1;
                    i -= 1;
                    j -= 1;
                }
                Op::Del => {
                    d += 1;
                    i -= 1;
                }
                Op::Ins => {
                    ins += 1;
                    j -= 1;
                }
            }
        }
        (s, d, ins)
    }

    #[test]
    fn matches_dp_oracle_on_random_pairs() {
        let mut rng = Rng::new(77);
        for _ in 0..300 {
            let n = rng.below(9);
            let m = rng.below(9);
            let r: Vec<usize> = (0..n).map(|_| rng.below(4)).collect();
            let h: Vec<usize> = (0..m).map(|_| rng.below(4)).collect();
            let got = wer(&r, &h);
            let (s, d, i) = wer_oracle(&r, &h);
            assert_eq!(
                (got.substitutions, got.deletions, got.insertions),
                (s, d, i),
                "ref {r:?} hyp {h:?}"
            );
        }
    }

    #[test]
    fn wer_is_relabeling_invariant() {
        let mut rng = Rng::new(78);
        for _ in 0..50 {
            let r: Vec<usize> = (0..rng.below(8)).map(|_| rng.below(4)).collect();
            let h: Vec<usize> = (0..rng.below(8)).map(|_| rng.below(4)).collect();
            // Relabel tokens through a fixed permutation.
            let perm = [2usize, 0, 3, 1];
            let rp: Vec<usize> = r.iter().map(|&t| perm[t]).collect();
            let hp: Vec<usize> = h.iter().map(|&t| perm[t]).collect();
            assert_eq!(wer(&r, &h), wer(&rp, &hp));
        }
    }

    #[test]
    fn edit_distance_triangle_inequality() {
        let mut rng = Rng::new(79);
        for _ in 0..50 {
            let a: Vec<usize> = (0..rng.below(7)).map(|_| rng.below(3)).collect();
            let b: Vec<usize> = (0..rng.below(7)).map(|_| rng.below(3)).collect();
            let c: Vec<usize> = (0..rng.below(7)).map(|_| rng.below(3)).collect();
            let ab = wer(&a, &b).errors();
            let bc = wer(&b, &c).errors();
            let ac = wer(&a, &c).errors();
            assert!(ac <= ab + bc);
            assert_eq!(wer(&a, &a).errors(), 0);
        }
    }

    #[test]
    fn group_wer_is_error_sum_over_length_sum() {
        let utts = vec![
            ScoredUtterance {
                utt_id: "u1".into(),
                accent: "north".into(),
                counts: wer(&toks("a b"), &toks("a x")),
            },
            ScoredUtterance {
                utt_id: "u2".into(),
                accent: "mystery".into(),
                counts: wer(&toks("a b c d"), &toks("a b c d")),
            },
        ];
        let bd = wer_breakdown(&utts, &["north".to_string()]);
        // Not the mean of rates (0.5 and 0.0 -> 0.25): 1 error over 6 tokens.
        assert!((bd.overall.wer() - 1.0 / 6.0).abs() < 1e-12);
        assert!((bd.seen.wer() - 0.5).abs() < 1e-12);
        assert_eq!(bd.unseen.errors(), 0);
        assert_eq!(bd.per_accent["north"].utterances, 1);
    }

    #[test]
    fn mapsswe_identical_series_is_degenerate() {
        let a = vec![1.0, 2.0, 0.0, 3.0];
        match mapsswe_test(&a, &a).unwrap() {
            MapssweResult::Degenerate { identical, .. } => assert!(identical),
            other => panic!("expected degenerate, got {other:?}"),
        }
    }

    #[test]
    fn mapsswe_symmetric_cancellation() {
        // diffs alternate +1, -1: Z = 0, p = 1.
        let a = vec![2.0, 1.0, 2.0, 1.0, 2.0, 1.0];
        let b = vec![1.0, 2.0, 1.0, 2.0, 1.0, 2.0];
        match mapsswe_test(&a, &b).unwrap() {
            MapssweResult::Test { z, p, .. } => {
                assert!(z.abs() < 1e-12);
                assert!((p - 1.0).abs() < 1e-12);
            }
            other => panic!("expected test result, got {other:?}"),
        }
    }

    #[test]
    fn mapsswe_matches_direct_formula_and_is_antisymmetric() {
        let mut rng = Rng::new(80);
        for _ in 0..50 {
            let n = 5 + rng.below(20);
            let a: Vec<f64> = (0..n).map(|_| rng.below(6) as f64).collect();
            let b: Vec<f64> = (0..n).map(|_| rng.below(6) as f64).collect();
            let diffs: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
            let mean = diffs.iter().sum::<f64>() / n as f64;
            let var =
                diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n as f64 - 1.0);
            let forward = mapsswe_test(&a, &b).unwrap();
            let backward = mapsswe_test(&b, &a).unwrap();
            match (forward, backward) {
                (
                    MapssweResult::Test { z: zf, p: pf, .. },
                    MapssweResult::Test { z: zb, p: pb, .. },
                ) => {
                    let want_z = mean / (var.sqrt() / (n as f64).sqrt());
                    assert!((zf - want_z).abs() < 1e-10);
                    assert!((zf + zb).abs() < 1e-10, "antisymmetry");
                    assert!((pf - pb).abs() < 1e-10);
                }
                (MapssweResult::Degenerate { .. }, MapssweResult::Degenerate { .. }) => {}
                other => panic!("mismatched outcomes {other:?}"),
            }
        }
    }

    #[test]
    fn mapsswe_short_series_is_degenerate() {
        assert!(matches!(
            mapsswe_test(&[1.0], &[2.0]).unwrap(),
            MapssweResult::Degenerate { .. }
        ));
        assert!(mapsswe_test(&[1.0], &[2.0, 3.0]).is_err());
    }

    #[test]
    fn heatmap_counts_and_row_sums() {
        let truth: BTreeMap<String, String> = [
            ("u1", "north"),
            ("u2", "north"),
            ("u3", "mystery"),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
        let chosen = vec![
            ("u1".to_string(), "north".to_string()),
            ("u2".to_string(), "south".to_string()),
            ("u3".to_string(), "north".to_string()),
        ];
        let seen = vec!["north".to_string(), "south".to_string()];
        let m = utilization_heatmap(&chosen, &truth, &seen).unwrap();
        assert_eq!(m.counts["north"], vec![1, 1]);
        assert_eq!(m.counts["mystery"], vec![1, 0]);
        assert_eq!(m.row_total("north"), 2);

        let missing = vec![("zz".to_string(), "north".to_string())];
        assert!(matches!(
            utilization_heatmap(&missing, &truth, &seen),
            Err(EvalError::MissingUtt(..))
        ));
    }

    #[test]
    fn heatmap_single_column_when_one_accent_dominates() {
        let truth: BTreeMap<String, String> = (0..5)
            .map(|i| (format!("u{i}"), "north".to_string()))
            .collect();
        let chosen: Vec<(String, String)> = (0..5)
            .map(|i| (format!("u{i}"), "south".to_string()))
            .collect();
        let seen = vec!["north".to_string(), "south".to_string()];
        let m = utilization_heatmap(&chosen, &truth, &seen).unwrap();
        assert_eq!(m.counts["north"], vec![0, 5]);
    }

    fn const_trace(bits: f64, len: usize) -> BeamTrace {
        BeamTrace {
            steps: (0..len)
                .map(|_| TraceStep {
                    counts: vec![1],
                    entropy_bits: bits,
                })
                .collect(),
        }
    }

    #[test]
    fn entropy_report_single_and_mean() {
        let single = entropy_report(&[const_trace(1.5, 4)]);
        assert_eq!(single.mean_bits, vec![1.5; 4]);
        assert_eq!(single.padded_traces, 0);

        let two = entropy_report(&[const_trace(0.0, 3), const_trace(2.0, 3)]);
        assert_eq!(two.mean_bits, vec![1.0; 3]);
    }

    #[test]
    fn entropy_report_pads_short_traces_with_final_value() {
        let long = const_trace(2.0, 4);
        let mut short = const_trace(0.5, 2);
        short.steps[1].entropy_bits = 1.0; // final value used for padding
        let rep = entropy_report(&[long, short]);
        assert_eq!(rep.padded_traces, 1);
        assert_eq!(rep.mean_bits, vec![1.25, 1.5, 1.5, 1.5]);
        let csv = rep.to_csv();
        assert!(csv.starts_with("step,mean_entropy_bits\n0,1.25\n"));
    }

    #[test]
    fn entropy_report_matches_direct_averaging() {
        let mut rng = Rng::new(81);
        let traces: Vec<BeamTrace> = (0..6)
            .map(|_| {
                BeamTrace {
                    steps: (0..5)
                        .map(|_| TraceStep {
                            counts: vec![1],
                            entropy_bits: rng.uniform() * 3.0,
                        })
                        .collect(),
                }
            })
            .collect();
        let rep = entropy_report(&traces);
        for step in 0..5 {
            let direct: f64 = traces
                .iter()
                .map(|t| t.steps[step].entropy_bits)
                .sum::<f64>()
                / 6.0;
            assert!((rep.mean_bits[step] - direct).abs() < 1e-12);
        }
    }
}
