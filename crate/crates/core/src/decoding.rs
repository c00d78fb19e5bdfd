//! Inference: beam-search decoding over the trained model.
//!
//! Four procedures share one beam loop:
//!
//! - `B0` — standard width-k beam search (baseline model, or a fixed accent
//!   on a codebook model).
//! - `B1` — M full-width searches, one per seen accent, best-of union
//!   (effective width M*k).
//! - `B2` — one search whose beam width is divided into per-accent quotas
//!   of floor(k/M), remainder to the lowest accent indices.
//! - `B3` — joint search: the beam is initialized with one zero-score
//!   `<sos>` entry per seen accent and every entry expands under its own
//!   accent while competing in a single top-k.
//!
//! Each step expands every unfinished entry with every vocabulary token,
//! carries finished entries forward unchanged, and prunes; the loop runs
//! exactly `n_max - 1` steps. Scores are attention-decoder log-probabilities
//! plus an optional external language-model term. Encoder outputs are
//! computed once per (utterance, accent) and cached.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codebook::AccentId;
use crate::model::{ModelError, ModelParams};
use crate::tensor::{no_grad, Element, Tensor};

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("decode config: {0}")]
    Config(String),
}

type Result<T> = std::result::Result<T, DecodeError>;

/// External language-model hook: shallow fusion adds
/// `lm_weight * log_probs` to the decoder scores.
pub trait LmScorer: Send + Sync {
    /// Log-probabilities over the full vocabulary for the token following
    /// `prefix` (token ids, starting with `<sos>`).
    fn log_probs(&self, prefix: &[usize]) -> Vec<f64>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DecodeVariant {
    B0,
    B1,
    B2,
    B3,
    /// Decode every utterance with one fixed seen accent.
    Fixed(AccentId),
}

impl std::fmt::Display for DecodeVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DecodeVariant::B0 => write!(f, "b0"),
            DecodeVariant::B1 => write!(f, "b1"),
            DecodeVariant::B2 => write!(f, "b2"),
            DecodeVariant::B3 => write!(f, "b3"),
            DecodeVariant::Fixed(a) => write!(f, "fixed:{}", a.0),
        }
    }
}

#[derive(Clone, Debug)]
pub struct DecodeConfig {
    pub beam_width: usize,
    /// n_max: maximum hypothesis length including `<sos>`.
    pub max_len: usize,
    pub lm_weight: f64,
    pub variant: DecodeVariant,
    pub capture_stats: bool,
}

impl DecodeConfig {
    pub fn validate(&self, num_accents: usize) -> Result<()> {
        if self.beam_width == 0 {
            return Err(DecodeError::Config("beam width must be >= 1".into()));
        }
        if self.max_len < 2 {
            return Err(DecodeError::Config("n_max must be >= 2".into()));
        }
        if self.lm_weight < 0.0 {
            return Err(DecodeError::Config("lm_weight must be >= 0".into()));
        }
        if matches!(self.variant, DecodeVariant::B2) && self.beam_width < num_accents {
            return Err(DecodeError::Config(format!(
                "B2 needs beam width >= {num_accents} (one slot per accent), got {}",
                self.beam_width
            )));
        }
        Ok(())
    }
}

/// One beam hypothesis: accumulated log-score, `<sos>`-prefixed tokens, and
/// the accent whose codebook scored it.
#[derive(Clone, Debug, PartialEq)]
pub struct BeamEntry {
    pub score: f64,
    pub prefix: Vec<usize>,
    pub accent: Option<AccentId>,
    pub finished: bool,
}

/// Per-step accent occupancy of the beam.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct TraceStep {
    /// Entries per accent index; sums to the beam size at that step.
    pub counts: Vec<usize>,
    /// Shannon entropy of counts/beam in bits.
    pub entropy_bits: f64,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq)]
pub struct BeamTrace {
    pub steps: Vec<TraceStep>,
}

#[derive(Clone, Debug)]
pub struct DecodeResult {
    /// All final beam entries (finished and remaining unfinished), ranked.
    pub hypotheses: Vec<BeamEntry>,
    pub trace: Option<BeamTrace>,
    /// Encoder forward passes spent on this utterance.
    pub encoder_passes: usize,
}

/// Per-utterance cache of encoder outputs, one per accent.
pub struct EncoderCache<'a, E: Element> {
    model: &'a ModelParams<E>,
    features: &'a Tensor<E>,
    entries: HashMap<Option<usize>, Tensor<E>>,
    passes: usize,
}

impl<'a, E: Element> EncoderCache<'a, E> {
    pub fn new(model: &'a ModelParams<E>, features: &'a Tensor<E>) -> Self {
        EncoderCache {
            model,
            features,
            entries: HashMap::new(),
            passes: 0,
        }
    }

    /// Encoder output under `accent`, computed on first use.
    pub fn encoded(&mut self, accent: Option<AccentId>) -> std::result::Result<Tensor<E>, ModelError> {
        let key = accent.map(|a| a.0);
        if let Some(t) = self.entries.get(&key) {
            return Ok(t.clone());
        }
        let enc = no_grad(|| self.model.encode(self.features, accent))?;
        self.passes += 1;
        self.entries.insert(key, enc.clone());
        Ok(enc)
    }

    pub fn passes(&self) -> usize {
        self.passes
    }
}

/// Extension log-scores for `prefix` under `accent`: decoder
/// log-probabilities over V, plus `lm_weight * lm.log_probs` when a
/// language model is hooked in.
pub fn score_a<E: Element>(
    cache: &mut EncoderCache<'_, E>,
    prefix: &[usize],
    accent: Option<AccentId>,
    lm: Option<&dyn LmScorer>,
    lm_weight: f64,
) -> Result<Vec<f64>> {
    let enc = cache.encoded(accent)?;
    let step = no_grad(|| cache.model.decoder_step(&enc, prefix))?;
    let mut scores: Vec<f64> = step.data().iter().map(|&x| x.to_f64()).collect();
    if let Some(lm) = lm {
        if lm_weight != 0.0 {
            let lm_scores = lm.log_probs(prefix);
            assert_eq!(lm_scores.len(), scores.len(), "LM vocabulary mismatch");
            for (s, l) in scores.iter_mut().zip(lm_scores) {
                *s += lm_weight * l;
            }
        }
    }
    Ok(scores)
}

/// Deterministic total order: score descending, then accent index
/// ascending, then prefix lexicographic.
fn rank_order(a: &BeamEntry, b: &BeamEntry) -> std::cmp::Ordering {
    b.score
        .partial_cmp(&a.score)
        .expect("scores are finite")
        .then_with(|| a.accent.cmp(&b.accent))
        .then_with(|| a.prefix.cmp(&b.prefix))
}

fn entropy_bits(counts: &[usize]) -> f64 {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let mut h = 0.0;
    for &c in counts {
        if c > 0 {
            let p = c as f64 / total as f64;
            h -= p * p.log2();
        }
    }
    h
}

fn trace_step(beam: &[BeamEntry], num_accents: usize) -> TraceStep {
    let mut counts = vec![0usize; num_accents.max(1)];
    for e in beam {
        counts[e.accent.map(|a| a.0).unwrap_or(0)] += 1;
    }
    let entropy = entropy_bits(&counts);
    TraceStep {
        counts,
        entropy_bits: entropy,
    }
}

/// The shared beam loop. `accents` gives the initial beam (one zero-score
/// `<sos>` entry per element); `quotas`, when present, prunes each accent
/// to its own slot count instead of a global top-k.
fn beam_loop<E: Element>(
    cache: &mut EncoderCache<'_, E>,
    accents: &[Option<AccentId>],
    quotas: Option<&[usize]>,
    cfg: &DecodeConfig,
    lm: Option<&dyn LmScorer>,
) -> Result<(Vec<BeamEntry>, BeamTrace)> {
    let vocab = cache.model.vocab.clone();
    let vocab_size = vocab.size();
    let eos = vocab.eos();
    let num_accents = cache.model.config.num_accents();

    let mut beam: Vec<BeamEntry> = accents
        .iter()
        .map(|&a| BeamEntry {
            score: 0.0,
            prefix: vec![vocab.sos()],
            accent: a,
            finished: false,
        })
        .collect();
    let mut trace = BeamTrace::default();
    trace.steps.push(trace_step(&beam, num_accents));

    for _ in 1..cfg.max_len {
        if beam.iter().all(|e| e.finished) {
            // An all-finished beam is a fixed point; further steps cannot
            // change it.
            trace.steps.push(trace_step(&beam, num_accents));
            continue;
        }
        let mut candidates: Vec<BeamEntry> = Vec::with_capacity(beam.len() * vocab_size);
        for entry in &beam {
            if entry.finished {
                candidates.push(entry.clone());
                continue;
            }
            let scores = score_a(cache, &entry.prefix, entry.accent, lm, cfg.lm_weight)?;
            for (v, &s) in scores.iter().enumerate() {
                let mut prefix = Vec::with_capacity(entry.prefix.len() + 1);
                prefix.extend_from_slice(&entry.prefix);
                prefix.push(v);
                candidates.push(BeamEntry {
                    score: entry.score + s,
                    prefix,
                    accent: entry.accent,
                    finished: v == eos,
                });
            }
        }
        beam = match quotas {
            None => {
                candidates.sort_by(rank_order);
                candidates.truncate(cfg.beam_width);
                candidates
            }
            Some(quotas) => {
                let mut pruned = Vec::with_capacity(cfg.beam_width);
                for (slot, &quota) in quotas.iter().enumerate() {
                    let mut group: Vec<BeamEntry> = candidates
                        .iter()
                        .filter(|e| e.accent.map(|a| a.0).unwrap_or(0) == slot)
                        .cloned()
                        .collect();
                    group.sort_by(rank_order);
                    group.truncate(quota);
                    pruned.extend(group);
                }
                pruned
            }
        };
        trace.steps.push(trace_step(&beam, num_accents));
    }
    beam.sort_by(rank_order);
    Ok((beam, trace))
}

fn accent_roster<E: Element>(model: &ModelParams<E>) -> Result<Vec<Option<AccentId>>> {
    match &model.codebooks {
        Some(cbs) => Ok((0..cbs.num_accents()).map(|i| Some(AccentId(i))).collect()),
        None => Err(DecodeError::Config(
            "model has no codebooks; multi-accent variants need a codebook model".into(),
        )),
    }
}

/// B3 (joint beam search): the beam starts with one entry per seen accent
/// and all accents compete in a single top-k.
pub fn joint_beam_search<E: Element>(
    model: &ModelParams<E>,
    features: &Tensor<E>,
    cfg: &DecodeConfig,
    lm: Option<&dyn LmScorer>,
) -> Result<DecodeResult> {
    let accents = accent_roster(model)?;
    cfg.validate(accents.len())?;
    let mut cache = EncoderCache::new(model, features);
    let (hyps, trace) = beam_loop(&mut cache, &accents, None, cfg, lm)?;
    Ok(DecodeResult {
        hypotheses: hyps,
        trace: cfg.capture_stats.then_some(trace),
        encoder_passes: cache.passes(),
    })
}

/// B0 (standard beam search). A baseline model decodes accent-free; a
/// codebook model requires a fixed accent.
pub fn beam_search_b0<E: Element>(
    model: &ModelParams<E>,
    features: &Tensor<E>,
    cfg: &DecodeConfig,
    fixed_accent: Option<AccentId>,
    lm: Option<&dyn LmScorer>,
) -> Result<DecodeResult> {
    let num_accents = model.config.num_accents();
    cfg.validate(num_accents)?;
    let accent = match (&model.codebooks, fixed_accent) {
        (Some(_), None) => {
            return Err(DecodeError::Config(
                "model has codebooks: B0 requires a fixed accent".into(),
            ))
        }
        (Some(cbs), Some(a)) if a.0 >= cbs.num_accents() => {
            return Err(DecodeError::Model(ModelError::InvalidAccent {
                index: a.0,
                extent: cbs.num_accents(),
            }))
        }
        (Some(_), Some(a)) => Some(a),
        (None, _) => None,
    };
    let mut cache = EncoderCache::new(model, features);
    let (hyps, trace) = beam_loop(&mut cache, &[accent], None, cfg, lm)?;
    Ok(DecodeResult {
        hypotheses: hyps,
        trace: cfg.capture_stats.then_some(trace),
        encoder_passes: cache.passes(),
    })
}

/// B1: M independent full-width searches, union ranked by score.
pub fn beam_search_b1<E: Element>(
    model: &ModelParams<E>,
    features: &Tensor<E>,
    cfg: &DecodeConfig,
    lm: Option<&dyn LmScorer>,
) -> Result<DecodeResult> {
    let accents = accent_roster(model)?;
    cfg.validate(accents.len())?;
    let mut cache = EncoderCache::new(model, features);
    let mut union: Vec<BeamEntry> = Vec::new();
    let mut merged: Vec<TraceStep> = Vec::new();
    for &a in &accents {
        let (hyps, trace) = beam_loop(&mut cache, &[a], None, cfg, lm)?;
        union.extend(hyps);
        if merged.is_empty() {
            merged = trace.steps;
        } else {
            for (acc, step) in merged.iter_mut().zip(trace.steps) {
                for (c, s) in acc.counts.iter_mut().zip(&step.counts) {
                    *c += s;
                }
                acc.entropy_bits = entropy_bits(&acc.counts);
            }
        }
    }
    union.sort_by(rank_order);
    Ok(DecodeResult {
        hypotheses: union,
        trace: cfg.capture_stats.then_some(BeamTrace { steps: merged }),
        encoder_passes: cache.passes(),
    })
}

/// Per-accent beam quotas for B2: floor(k/M) each, remainder to the lowest
/// accent indices.
pub fn b2_quotas(beam_width: usize, num_accents: usize) -> Vec<usize> {
    let base = beam_width / num_accents;
    let remainder = beam_width % num_accents;
    (0..num_accents)
        .map(|i| base + usize::from(i < remainder))
        .collect()
}

/// B2: one search with the beam width split into per-accent quotas.
pub fn beam_search_b2<E: Element>(
    model: &ModelParams<E>,
    features: &Tensor<E>,
    cfg: &DecodeConfig,
    lm: Option<&dyn LmScorer>,
) -> Result<DecodeResult> {
    let accents = accent_roster(model)?;
    let mut checked = cfg.clone();
    checked.variant = DecodeVariant::B2;
    checked.validate(accents.len())?;
    let quotas = b2_quotas(cfg.beam_width, accents.len());
    let mut cache = EncoderCache::new(model, features);
    let (hyps, trace) = beam_loop(&mut cache, &accents, Some(&quotas), cfg, lm)?;
    Ok(DecodeResult {
        hypotheses: hyps,
        trace: cfg.capture_stats.then_some(trace),
        encoder_passes: cache.passes(),
    })
}

/// Dispatches on `cfg.variant`.
pub fn decode_utterance<E: Element>(
    model: &ModelParams<E>,
    features: &Tensor<E>,
    cfg: &DecodeConfig,
    lm: Option<&dyn LmScorer>,
) -> Result<DecodeResult> {
    match cfg.variant {
        DecodeVariant::B0 => beam_search_b0(model, features, cfg, None, lm),
        DecodeVariant::B1 => beam_search_b1(model, features, cfg, lm),
        DecodeVariant::B2 => beam_search_b2(model, features, cfg, lm),
        DecodeVariant::B3 => joint_beam_search(model, features, cfg, lm),
        DecodeVariant::Fixed(a) => beam_search_b0(model, features, cfg, Some(a), lm),
    }
}

/// Serialized per-utterance decode output (JSON-lines).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DecodeRecord {
    pub utt_id: String,
    pub variant: String,
    pub best: HypRecord,
    pub nbest: Vec<HypRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace: Option<TraceRecord>,
    pub millis: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HypRecord {
    /// Surface tokens (no `<sos>`/`<eos>`).
    pub tokens: Vec<String>,
    pub text: String,
    pub score: f64,
    pub accent: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TraceRecord {
    pub counts: Vec<Vec<usize>>,
    pub entropy: Vec<f64>,
}

impl DecodeRecord {
    pub fn from_result<E: Element>(
        utt_id: &str,
        variant: DecodeVariant,
        result: &DecodeResult,
        model: &ModelParams<E>,
        millis: f64,
    ) -> Self {
        let hyp_record = |e: &BeamEntry| -> HypRecord {
            let inner: Vec<usize> = e.prefix[1..]
                .iter()
                .copied()
                .filter(|&t| t != model.vocab.eos() && t != model.vocab.sos())
                .collect();
            HypRecord {
                tokens: inner.iter().map(|&t| model.vocab.token_str(t)).collect(),
                text: model.vocab.decode(&inner),
                score: e.score,
                accent: e.accent.map(|a| {
                    model
                        .config
                        .accent_names
                        .get(a.0)
                        .cloned()
                        .unwrap_or_else(|| a.0.to_string())
                }),
            }
        };
        let best = result
            .hypotheses
            .first()
            .map(hyp_record)
            .unwrap_or(HypRecord {
                tokens: vec![],
                text: String::new(),
                score: f64::NEG_INFINITY,
                accent: None,
            });
        DecodeRecord {
            utt_id: utt_id.to_string(),
            variant: variant.to_string(),
            best,
            nbest: result.hypotheses.iter().map(hyp_record).collect(),
            trace: result.trace.as_ref().map(|t| TraceRecord {
                counts: t.steps.iter().map(|s| s.counts.clone()).collect(),
                entropy: t.steps.iter().map(|s| s.entropy_bits).collect(),
            }),
            millis,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::rng::Rng;

    fn tiny_model(use_codebooks: bool, accents: usize, seed: u64) -> ModelParams<f64> {
        let cfg = ModelConfig {
            input_dim: 3,
            model_dim: 4,
            num_encoder_layers: 1,
            num_decoder_layers: 1,
            num_heads: 2,
            ffn_hidden: 5,
            kernel_size: 3,
            alphabet: "ab".into(),
            accent_names: (0..accents).map(|i| format!("acc{i}")).collect(),
            use_codebooks,
            codebook_entries: 2,
            codebook_layers: vec![0],
            frozen_codebooks: false,
            ln_eps: 1e-5,
        };
        ModelParams::init(&cfg, &mut Rng::new(seed)).unwrap()
    }

    fn features(t: usize, dim: usize, seed: u64) -> Tensor<f64> {
        let mut rng = Rng::new(seed);
        Tensor::from_vec(&[t, dim], (0..t * dim).map(|_| rng.gaussian()).collect())
    }

    fn cfg(variant: DecodeVariant, k: usize, n_max: usize) -> DecodeConfig {
        DecodeConfig {
            beam_width: k,
            max_len: n_max,
            lm_weight: 0.0,
            variant,
            capture_stats: true,
        }
    }

    #[test]
    fn score_matches_decoder_step_without_lm() {
        let m = tiny_model(true, 2, 1);
        let x = features(3, 3, 2);
        let mut cache = EncoderCache::new(&m, &x);
        let prefix = [m.vocab.sos()];
        let scores = score_a(&mut cache, &prefix, Some(AccentId(0)), None, 0.0).unwrap();
        let enc = m.encode(&x, Some(AccentId(0))).unwrap();
        let step = m.decoder_step(&enc, &prefix).unwrap();
        for (s, d) in scores.iter().zip(step.data()) {
            assert_eq!(*s, *d);
        }
    }

    #[test]
    fn cache_is_transparent_and_counts_passes() {
        let m = tiny_model(true, 2, 3);
        let x = features(3, 3, 4);
        let prefix = [m.vocab.sos(), 0];

        let mut warm = EncoderCache::new(&m, &x);
        let first = score_a(&mut warm, &prefix, Some(AccentId(1)), None, 0.0).unwrap();
        let second = score_a(&mut warm, &prefix, Some(AccentId(1)), None, 0.0).unwrap();
        assert_eq!(first, second);
        assert_eq!(warm.passes(), 1);

        let mut cold = EncoderCache::new(&m, &x);
        let fresh = score_a(&mut cold, &prefix, Some(AccentId(1)), None, 0.0).unwrap();
        assert_eq!(first, fresh);
    }

    #[test]
    fn lm_hook_shifts_scores() {
        struct BiasLm(usize);
        impl LmScorer for BiasLm {
            fn log_probs(&self, _prefix: &[usize]) -> Vec<f64> {
                let mut v = vec![-2.0; self.0];
                v[0] = -0.1;
                v
            }
        }
        let m = tiny_model(true, 2, 5);
        let x = features(3, 3, 6);
        let lm = BiasLm(m.vocab.size());
        let mut cache = EncoderCache::new(&m, &x);
        let prefix = [m.vocab.sos()];
        let plain = score_a(&mut cache, &prefix, Some(AccentId(0)), None, 0.5).unwrap();
        let fused = score_a(&mut cache, &prefix, Some(AccentId(0)), Some(&lm), 0.5).unwrap();
        assert!((fused[0] - (plain[0] + 0.5 * -0.1)).abs() < 1e-12);
        assert!((fused[1] - (plain[1] + 0.5 * -2.0)).abs() < 1e-12);
    }

    #[test]
    fn b3_with_one_accent_equals_b0_bitwise() {
        let m = tiny_model(true, 1, 7);
        let x = features(4, 3, 8);
        let c = cfg(DecodeVariant::B3, 3, 4);
        let joint = joint_beam_search(&m, &x, &c, None).unwrap();
        let fixed = beam_search_b0(&m, &x, &c, Some(AccentId(0)), None).unwrap();
        assert_eq!(joint.hypotheses.len(), fixed.hypotheses.len());
        for (a, b) in joint.hypotheses.iter().zip(&fixed.hypotheses) {
            assert_eq!(a.prefix, b.prefix);
            assert_eq!(a.score.to_bits(), b.score.to_bits());
            assert_eq!(a.accent, b.accent);
        }
    }

    #[test]
    fn all_variants_agree_on_one_accent() {
        let m = tiny_model(true, 1, 17);
        let x = features(3, 3, 18);
        let k = 3;
        let b0 = beam_search_b0(&m, &x, &cfg(DecodeVariant::B0, k, 4), Some(AccentId(0)), None)
            .unwrap();
        let b1 = beam_search_b1(&m, &x, &cfg(DecodeVariant::B1, k, 4), None).unwrap();
        let b2 = beam_search_b2(&m, &x, &cfg(DecodeVariant::B2, k, 4), None).unwrap();
        let b3 = joint_beam_search(&m, &x, &cfg(DecodeVariant::B3, k, 4), None).unwrap();
        for other in [&b1, &b2, &b3] {
            assert_eq!(b0.hypotheses.len(), other.hypotheses.len());
            for (a, b) in b0.hypotheses.iter().zip(&other.hypotheses) {
                assert_eq!(a.prefix, b.prefix);
                assert!((a.score - b.score).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn beam_width_one_is_greedy() {
        let m = tiny_model(true, 2, 9);
        let x = features(3, 3, 10);
        let c = cfg(DecodeVariant::Fixed(AccentId(0)), 1, 5);
        let out = decode_utterance(&m, &x, &c, None).unwrap();
        assert_eq!(out.hypotheses.len(), 1);

        // Greedy chain: always extend with the argmax token.
        let mut cache = EncoderCache::new(&m, &x);
        let mut prefix = vec![m.vocab.sos()];
        let mut score = 0.0;
        for _ in 1..5 {
            if *prefix.last().unwrap() == m.vocab.eos() {
                break;
            }
            let scores = score_a(&mut cache, &prefix, Some(AccentId(0)), None, 0.0).unwrap();
            let (best_v, best_s) = scores
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap();
            prefix.push(best_v);
            score += best_s;
        }
        assert_eq!(out.hypotheses[0].prefix, prefix);
        assert!((out.hypotheses[0].score - score).abs() < 1e-9);
    }

    #[test]
    fn b0_on_codebook_model_requires_fixed_accent() {
        let m = tiny_model(true, 2, 11);
        let x = features(3, 3, 12);
        let c = cfg(DecodeVariant::B0, 2, 3);
        assert!(matches!(
            beam_search_b0(&m, &x, &c, None, None),
            Err(DecodeError::Config(_))
        ));
        // Baseline model decodes accent-free.
        let baseline = tiny_model(false, 0, 13);
        assert!(beam_search_b0(&baseline, &x, &c, None, None).is_ok());
    }

    #[test]
    fn b2_quota_rule() {
        assert_eq!(b2_quotas(5, 2), vec![3, 2]);
        assert_eq!(b2_quotas(6, 3), vec![2, 2, 2]);
        assert_eq!(b2_quotas(7, 3), vec![3, 2, 2]);
        let m = tiny_model(true, 2, 14);
        let x = features(3, 3, 15);
        assert!(matches!(
            beam_search_b2(&m, &x, &cfg(DecodeVariant::B2, 1, 3), None),
            Err(DecodeError::Config(_))
        ));
    }

    #[test]
    fn b2_decomposes_into_fixed_accent_searches() {
        let m = tiny_model(true, 2, 19);
        let x = features(4, 3, 20);
        let k = 5;
        let b2 = beam_search_b2(&m, &x, &cfg(DecodeVariant::B2, k, 4), None).unwrap();
        let quotas = b2_quotas(k, 2);
        let mut expected: Vec<BeamEntry> = Vec::new();
        for (a, &q) in quotas.iter().enumerate() {
            let fixed = beam_search_b0(
                &m,
                &x,
                &cfg(DecodeVariant::B0, q, 4),
                Some(AccentId(a)),
                None,
            )
            .unwrap();
            expected.extend(fixed.hypotheses);
        }
        expected.sort_by(rank_order);
        assert_eq!(b2.hypotheses.len(), expected.len());
        for (a, b) in b2.hypotheses.iter().zip(&expected) {
            assert_eq!(a.prefix, b.prefix);
            assert!((a.score - b.score).abs() < 1e-12);
            assert_eq!(a.accent, b.accent);
        }
    }

    #[test]
    fn b1_best_is_at_least_b3_best() {
        for seed in 0..5 {
            let m = tiny_model(true, 2, 100 + seed);
            let x = features(3, 3, 200 + seed);
            let k = 2;
            let b1 = beam_search_b1(&m, &x, &cfg(DecodeVariant::B1, k, 4), None).unwrap();
            let b3 = joint_beam_search(&m, &x, &cfg(DecodeVariant::B3, k, 4), None).unwrap();
            assert!(
                b1.hypotheses[0].score >= b3.hypotheses[0].score - 1e-12,
                "seed {seed}: B1 searched a superset"
            );
        }
    }

    #[test]
    fn initial_trace_entropy_is_log2_m() {
        let m = tiny_model(true, 2, 16);
        let x = features(3, 3, 17);
        let out = joint_beam_search(&m, &x, &cfg(DecodeVariant::B3, 4, 4), None).unwrap();
        let trace = out.trace.unwrap();
        assert_eq!(trace.steps[0].counts, vec![1, 1]);
        assert!((trace.steps[0].entropy_bits - 2.0f64.log2()).abs() < 1e-12);
        // Counts always sum to the live beam size.
        for step in &trace.steps {
            assert!(step.counts.iter().sum::<usize>() <= 4);
            assert!(step.counts.iter().sum::<usize>() >= 1);
        }
    }

    #[test]
    fn finished_entries_are_preserved_and_scores_recompute() {
        let m = tiny_model(true, 2, 21);
        let x = features(4, 3, 22);
        let out = joint_beam_search(&m, &x, &cfg(DecodeVariant::B3, 6, 5), None).unwrap();
        let mut cache = EncoderCache::new(&m, &x);
        for hyp in &out.hypotheses {
            // Teacher-forced recomputation of the prefix score.
            let mut total = 0.0;
            for i in 1..hyp.prefix.len() {
                let scores =
                    score_a(&mut cache, &hyp.prefix[..i], hyp.accent, None, 0.0).unwrap();
                total += scores[hyp.prefix[i]];
            }
            assert!(
                (total - hyp.score).abs() < 1e-5,
                "prefix {:?}: {} vs {}",
                hyp.prefix,
                total,
                hyp.score
            );
            let has_eos = hyp.prefix[1..].contains(&m.vocab.eos());
            assert_eq!(hyp.finished, *hyp.prefix.last().unwrap() == m.vocab.eos());
            if has_eos {
                assert!(hyp.finished, "eos only allowed at the end");
            }
        }
    }

    #[test]
    fn encoder_pass_counts_per_variant() {
        let m = tiny_model(true, 3, 23);
        let x = features(3, 3, 24);
        let k = 3;
        let b0 = beam_search_b0(&m, &x, &cfg(DecodeVariant::B0, k, 4), Some(AccentId(1)), None)
            .unwrap();
        assert_eq!(b0.encoder_passes, 1);
        let b3 = joint_beam_search(&m, &x, &cfg(DecodeVariant::B3, k, 4), None).unwrap();
        assert_eq!(b3.encoder_passes, 3);
        let b1 = beam_search_b1(&m, &x, &cfg(DecodeVariant::B1, k, 4), None).unwrap();
        assert_eq!(b1.encoder_passes, 3);
    }

    #[test]
    fn record_serialization_shape() {
        let m = tiny_model(true, 2, 25);
        let x = features(3, 3, 26);
        let c = cfg(DecodeVariant::B3, 3, 4);
        let res = joint_beam_search(&m, &x, &c, None).unwrap();
        let rec = DecodeRecord::from_result("utt1", DecodeVariant::B3, &res, &m, 1.25);
        let json = serde_json::to_string(&rec).unwrap();
        let back: DecodeRecord = serde_json::from_str(&json).unwrap();
        assert_eq!(back.utt_id, "utt1");
        assert_eq!(back.variant, "b3");
        assert!(back.trace.is_some());
        assert_eq!(back.nbest.len(), res.hypotheses.len());
    }
}
