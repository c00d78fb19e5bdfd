//! Shared test oracles: independent straight-line implementations used to
//! check the production code paths. Everything here is deliberately written
//! with plain loops over `f64` slices, separate from the tensor library.

#![allow(dead_code)]

use std::collections::HashMap;

use acbk_core::codebook::AccentId;
use acbk_core::decoding::{EncoderCache, LmScorer};
use acbk_core::model::{ModelConfig, ModelParams};
use acbk_core::rng::Rng;
use acbk_core::tensor::Tensor;

// ---------------------------------------------------------------------
// Parameter access
// ---------------------------------------------------------------------

pub fn param_map(params: &ModelParams<f64>) -> HashMap<String, (Vec<usize>, Vec<f64>)> {
    let mut out = HashMap::new();
    let mut scratch = params.clone();
    scratch.for_each_param(&mut |name, t| {
        out.insert(name, (t.shape().to_vec(), t.data().to_vec()));
    });
    out
}

pub fn grads_by_name(params: &ModelParams<f64>) -> HashMap<String, Vec<f64>> {
    let mut out = HashMap::new();
    let mut scratch = params.clone();
    scratch.for_each_param(&mut |name, t| {
        if let Some(g) = t.grad() {
            out.insert(name, g);
        }
    });
    out
}

pub fn zero_grads(params: &mut ModelParams<f64>) {
    params.for_each_param(&mut |_, t| t.zero_grad());
}

/// A copy of the model with one parameter coordinate shifted by `delta`.
pub fn perturbed(
    params: &ModelParams<f64>,
    name: &str,
    idx: usize,
    delta: f64,
) -> ModelParams<f64> {
    let mut p = params.clone();
    p.for_each_param(&mut |n, t| {
        if n == name {
            let mut data = t.data().to_vec();
            data[idx] += delta;
            *t = Tensor::parameter(t.shape(), data);
        }
    });
    p
}

// ---------------------------------------------------------------------
// Straight-line encoder oracle
// ---------------------------------------------------------------------

fn dense(x: &[f64], rows: usize, w: &(Vec<usize>, Vec<f64>), b: Option<&(Vec<usize>, Vec<f64>)>) -> Vec<f64> {
    let (din, dout) = (w.0[0], w.0[1]);
    let mut out = vec![0.0; rows * dout];
    for i in 0..rows {
        for j in 0..dout {
            let mut s = b.map(|bias| bias.1[j]).unwrap_or(0.0);
            for c in 0..din {
                s += x[i * din + c] * w.1[c * dout + j];
            }
            out[i * dout + j] = s;
        }
    }
    out
}

fn layer_norm_rows(x: &[f64], rows: usize, d: usize, gain: &[f64], bias: &[f64], eps: f64) -> Vec<f64> {
    let mut out = vec![0.0; rows * d];
    for r in 0..rows {
        let row = &x[r * d..(r + 1) * d];
        let mean: f64 = row.iter().sum::<f64>() / d as f64;
        let var: f64 = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let istd = 1.0 / (var + eps).sqrt();
        for c in 0..d {
            out[r * d + c] = gain[c] * (row[c] - mean) * istd + bias[c];
        }
    }
    out
}

fn add_rows(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

/// Full multi-head attention in explicit loops (no masking).
fn mha_oracle(
    q_in: &[f64],
    kv_in: &[f64],
    t_q: usize,
    t_k: usize,
    d: usize,
    heads: usize,
    p: &HashMap<String, (Vec<usize>, Vec<f64>)>,
    prefix: &str,
) -> Vec<f64> {
    let weight = |suffix: &str| &p[&format!("{prefix}.{suffix}")];
    let q = dense(q_in, t_q, weight("w_q"), None);
    let k = dense(kv_in, t_k, weight("w_k"), None);
    let v = dense(kv_in, t_k, weight("w_v"), None);
    let dk = d / heads;
    let mut concat = vec![0.0; t_q * d];
    for h in 0..heads {
        for i in 0..t_q {
            let mut scores = vec![0.0; t_k];
            for j in 0..t_k {
                let mut s = 0.0;
                for c in 0..dk {
                    s += q[i * d + h * dk + c] * k[j * d + h * dk + c];
                }
                scores[j] = s / (dk as f64).sqrt();
            }
            let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = scores.iter().map(|s| (s - m).exp()).sum();
            for c in 0..dk {
                let mut acc = 0.0;
                for j in 0..t_k {
                    acc += (scores[j] - m).exp() / z * v[j * d + h * dk + c];
                }
                concat[i * d + h * dk + c] = acc;
            }
        }
    }
    dense(&concat, t_q, weight("w_o"), None)
}

fn depthwise_oracle(x: &[f64], t: usize, d: usize, kernel: &[f64], k: usize, bias: &[f64]) -> Vec<f64> {
    let half = k / 2;
    let mut out = vec![0.0; t * d];
    for ti in 0..t {
        for c in 0..d {
            let mut s = bias[c];
            for j in 0..k {
                let src = ti as isize + j as isize - half as isize;
                if src >= 0 && (src as usize) < t {
                    s += x[src as usize * d + c] * kernel[j * d + c];
                }
            }
            out[ti * d + c] = s;
        }
    }
    out
}

/// Independent evaluation of the eight encoder-layer equations, stacked
/// over all layers, starting from the frontend projection.
pub fn encode_oracle(
    params: &ModelParams<f64>,
    x: &[f64],
    t: usize,
    accent: usize,
) -> Vec<f64> {
    let cfg = &params.config;
    let p = param_map(params);
    let d = cfg.model_dim;
    let eps = cfg.ln_eps;
    let heads = cfg.num_heads;

    let mut h = dense(x, t, &p["frontend.w"], Some(&p["frontend.b"]));

    // Shared codebook bank for the selected accent.
    let bank: Option<Vec<f64>> = p.get("codebooks.entries").map(|(shape, data)| {
        let (pp, dd) = (shape[1], shape[2]);
        data[accent * pp * dd..(accent + 1) * pp * dd].to_vec()
    });
    let bank_entries = cfg.codebook_entries;

    for l in 0..cfg.num_encoder_layers {
        let lp = |s: &str| format!("encoder.{l}.{s}");
        let norm = |x: &[f64], which: &str| {
            layer_norm_rows(
                x,
                t,
                d,
                &p[&lp(&format!("{which}.gain"))].1,
                &p[&lp(&format!("{which}.bias"))].1,
                eps,
            )
        };

        // H-hat = MultiHeadAttn_self(h, h, h); H = Norm_self(h + H-hat)
        let h_hat = mha_oracle(&h, &h, t, t, d, heads, &p, &lp("self_attn"));
        let h_norm = norm(&add_rows(&h, &h_hat), "norm_self");

        // C-hat = MultiHeadAttn_cb(H, c, c); C = Norm_cb(H + C-hat)
        let c = if cfg.layer_has_codebook(l) {
            let bank = bank.as_ref().expect("codebook model");
            let c_hat = mha_oracle(
                &h_norm,
                bank,
                t,
                bank_entries,
                d,
                1,
                &p,
                &lp("cb_attn"),
            );
            norm(&add_rows(&h_norm, &c_hat), "norm_cb")
        } else {
            h_norm
        };

        // J-hat = Convolution(C); J = Norm_conv(C + J-hat)
        let pw_in = dense(&c, t, &p[&lp("conv.pw_in")], Some(&p[&lp("conv.pw_in_bias")]));
        let dw = depthwise_oracle(
            &pw_in,
            t,
            d,
            &p[&lp("conv.depthwise")].1,
            cfg.kernel_size,
            &p[&lp("conv.depthwise_bias")].1,
        );
        let j_hat = dense(&dw, t, &p[&lp("conv.pw_out")], Some(&p[&lp("conv.pw_out_bias")]));
        let j = norm(&add_rows(&c, &j_hat), "norm_conv");

        // h-hat = Linear_pw(J); h = Norm_linear(J + h-hat)
        let mid = dense(&j, t, &p[&lp("ffn.w1")], Some(&p[&lp("ffn.b1")]));
        let mid: Vec<f64> = mid.iter().map(|&v| v.max(0.0)).collect();
        let ff = dense(&mid, t, &p[&lp("ffn.w2")], Some(&p[&lp("ffn.b2")]));
        h = norm(&add_rows(&j, &ff), "norm_linear");
    }
    h
}

// ---------------------------------------------------------------------
// CTC brute-force oracle
// ---------------------------------------------------------------------

fn log_softmax_rows(logits: &[f64], t: usize, w: usize) -> Vec<f64> {
    let mut out = vec![0.0; t * w];
    for r in 0..t {
        let row = &logits[r * w..(r + 1) * w];
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|x| (x - m).exp()).sum();
        for c in 0..w {
            out[r * w + c] = row[c] - m - z.ln();
        }
    }
    out
}

/// Sums the probability of every alignment path that collapses to
/// `target`; returns the negative log.
pub fn ctc_enumeration(logits: &[f64], t: usize, w: usize, target: &[usize], blank: usize) -> f64 {
    let lp = log_softmax_rows(logits, t, w);
    let mut total = 0.0f64;
    for mut code in 0..w.pow(t as u32) {
        let mut path = Vec::with_capacity(t);
        for _ in 0..t {
            path.push(code % w);
            code /= w;
        }
        let mut collapsed = Vec::new();
        let mut prev = usize::MAX;
        for &p in &path {
            if p != prev && p != blank {
                collapsed.push(p);
            }
            prev = p;
        }
        if collapsed == target {
            total += path
                .iter()
                .enumerate()
                .map(|(i, &p)| lp[i * w + p])
                .sum::<f64>()
                .exp();
        }
    }
    -total.ln()
}

// ---------------------------------------------------------------------
// Exhaustive beam-search oracle
// ---------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct OracleHyp {
    pub score: f64,
    pub prefix: Vec<usize>,
    pub accent: Option<AccentId>,
}

/// Same total order the decoder documents: score descending, accent index
/// ascending, prefix lexicographic.
pub fn oracle_order(a: &OracleHyp, b: &OracleHyp) -> std::cmp::Ordering {
    b.score
        .partial_cmp(&a.score)
        .unwrap()
        .then_with(|| a.accent.cmp(&b.accent))
        .then_with(|| a.prefix.cmp(&b.prefix))
}

/// Enumerates every hypothesis reachable by `n_max - 1` expansions under
/// the given accents: `<eos>` may appear only at the end, and hypotheses
/// without `<eos>` have exactly `n_max` tokens including `<sos>`.
pub fn exhaustive_hypotheses(
    model: &ModelParams<f64>,
    features: &Tensor<f64>,
    accents: &[Option<AccentId>],
    n_max: usize,
    lm: Option<&dyn LmScorer>,
    lm_weight: f64,
) -> Vec<OracleHyp> {
    let vocab_size = model.vocab.size();
    let eos = model.vocab.eos();
    let mut out = Vec::new();
    let mut cache = EncoderCache::new(model, features);
    for &accent in accents {
        let mut stack = vec![(vec![model.vocab.sos()], 0.0f64)];
        while let Some((prefix, score)) = stack.pop() {
            let done = *prefix.last().unwrap() == eos || prefix.len() == n_max;
            if done {
                out.push(OracleHyp {
                    score,
                    prefix,
                    accent,
                });
                continue;
            }
            let scores =
                acbk_core::decoding::score_a(&mut cache, &prefix, accent, lm, lm_weight).unwrap();
            for (v, &s) in scores.iter().enumerate().take(vocab_size) {
                let mut next = prefix.clone();
                next.push(v);
                stack.push((next, score + s));
            }
        }
    }
    out.sort_by(oracle_order);
    out
}

// ---------------------------------------------------------------------
// WER oracle: full DP table with explicit operation backtrace
// ---------------------------------------------------------------------

pub fn wer_oracle<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> (usize, usize, usize) {
    #[derive(Clone, Copy, PartialEq)]
    enum Op {
        Start,
        Keep,
        Sub,
        Del,
        Ins,
    }
    let (n, m) = (reference.len(), hypothesis.len());
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
            let same = reference[i - 1] == hypothesis[j - 1];
            let diag = cost[i - 1][j - 1] + usize::from(!same);
            let del = cost[i - 1][j] + 1;
            let ins = cost[i][j - 1] + 1;
            if diag <= del && diag <= ins {
                cost[i][j] = diag;
                op[i][j] = if same { Op::Keep } else { Op::Sub };
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
    let (mut subs, mut dels, mut inss) = (0, 0, 0);
    loop {
        match op[i][j] {
            Op::Start => break,
            Op::Keep => {
                i -= 1;
                j -= 1;
            }
            Op::Sub => {
                subs += 1;
                i -= 1;
                j -= 1;
            }
            Op::Del => {
                dels += 1;
                i -= 1;
            }
            Op::Ins => {
                inss += 1;
                j -= 1;
            }
        }
    }
    (subs, dels, inss)
}

// ---------------------------------------------------------------------
// Split invariants
// ---------------------------------------------------------------------

use acbk_core::data::{Manifest, Split, SplitAssignment};
use std::collections::{BTreeMap, BTreeSet};

/// True when every utterance is assigned and no speaker spans two splits.
pub fn split_is_speaker_disjoint(manifest: &Manifest, assignment: &SplitAssignment) -> bool {
    let mut per_speaker: BTreeMap<&str, BTreeSet<Split>> = BTreeMap::new();
    for u in &manifest.utterances {
        let Some(&s) = assignment.split.get(&u.utt_id) else {
            return false;
        };
        per_speaker.entry(u.speaker.as_str()).or_default().insert(s);
    }
    per_speaker.values().all(|set| set.len() == 1)
}

/// Counts bucket-label violations: a transcript's bucket must match the
/// exact combination of splits its utterances realize.
pub fn bucket_semantics_violations(manifest: &Manifest, assignment: &SplitAssignment) -> usize {
    let mut coverage: BTreeMap<&str, BTreeSet<Split>> = BTreeMap::new();
    for u in &manifest.utterances {
        coverage
            .entry(u.transcript.as_str())
            .or_default()
            .insert(assignment.split[&u.utt_id]);
    }
    let expected = |bucket: u8| -> BTreeSet<Split> {
        match bucket {
            1 => [Split::Train, Split::Dev, Split::Test].into(),
            2 => [Split::Train, Split::Test].into(),
            3 => [Split::Dev, Split::Test].into(),
            4 => [Split::Train, Split::Dev].into(),
            5 => [Split::Dev].into(),
            6 => [Split::Test].into(),
            7 => [Split::Train].into(),
            _ => BTreeSet::new(),
        }
    };
    manifest
        .utterances
        .iter()
        .filter(|u| {
            let bucket = assignment.bucket.get(&u.utt_id).copied().unwrap_or(0);
            coverage[u.transcript.as_str()] != expected(bucket)
        })
        .count()
}

// ---------------------------------------------------------------------
// Model factories
// ---------------------------------------------------------------------

pub fn small_config(
    use_codebooks: bool,
    accents: usize,
    alphabet: &str,
    model_dim: usize,
    layers: usize,
) -> ModelConfig {
    ModelConfig {
        input_dim: 3,
        model_dim,
        num_encoder_layers: layers,
        num_decoder_layers: 1,
        num_heads: if model_dim % 4 == 0 { 4 } else { 2 },
        ffn_hidden: model_dim * 2,
        kernel_size: 3,
        alphabet: alphabet.into(),
        accent_names: (0..accents).map(|i| format!("acc{i}")).collect(),
        use_codebooks,
        codebook_entries: 2,
        codebook_layers: (0..layers).collect(),
        frozen_codebooks: false,
        ln_eps: 1e-5,
    }
}

pub fn random_features(t: usize, dim: usize, seed: u64) -> Tensor<f64> {
    let mut rng = Rng::new(seed);
    Tensor::from_vec(&[t, dim], (0..t * dim).map(|_| rng.gaussian()).collect())
}
