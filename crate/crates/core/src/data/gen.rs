//! Synthetic accented-corpus generation.
//!
//! Every transcript maps to a canonical base feature sequence (a per-token
//! embedding plus deterministic positional jitter). A seen accent applies
//! its own well-conditioned linear transform and bias to the base sequence,
//! plus Gaussian noise. Unseen accents blend the outputs of two seen
//! profiles and add extra noise, so they resemble — but never equal — the
//! training accents. Speakers are partitioned per accent.
//!
//! Token embeddings are orthonormal, and with `confusable_accents` each
//! seen accent's transform first rotates token directions onto cyclically
//! shifted ones before applying its own random rotation. The same observed
//! frame then reads as different tokens under different accents, which is
//! what makes accent identity genuinely informative for recognition.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{write_features, DataError, Manifest, Utterance};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GenConfig {
    pub seen_accents: Vec<String>,
    pub unseen_accents: Vec<String>,
    pub speakers_per_accent: usize,
    pub num_utterances: usize,
    /// Size of the shared transcript pool; repeats across speakers and
    /// accents are what make transcript-overlap bucketing meaningful.
    pub transcript_pool: usize,
    pub alphabet: String,
    pub min_transcript_len: usize,
    pub max_transcript_len: usize,
    pub feature_dim: usize,
    pub frames_per_token: usize,
    /// Per-frame Gaussian noise added after the accent transform.
    pub noise_scale: f64,
    /// Additional noise for unseen-accent utterances.
    pub unseen_extra_noise: f64,
    /// Scale of the deterministic positional jitter in the base sequence.
    pub jitter_scale: f64,
    /// Scale of each accent's bias vector.
    pub accent_bias_scale: f64,
    /// Compose each seen accent's transform with a token-confusion rotation
    /// (accent i reads token t as token t+i); requires
    /// `feature_dim >= alphabet length`.
    pub confusable_accents: bool,
    /// Per-plane rotation-angle spread (radians) of each accent's own
    /// rotation in confusable mode. Small angles keep the accents' token
    /// clusters overlapping so accent identity is weak evidence per frame.
    pub accent_rotation_angle: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            seen_accents: vec!["alpha".into(), "beta".into()],
            unseen_accents: vec!["gamma".into()],
            speakers_per_accent: 8,
            num_utterances: 300,
            transcript_pool: 60,
            alphabet: "abcde".into(),
            min_transcript_len: 2,
            max_transcript_len: 8,
            feature_dim: 8,
            frames_per_token: 3,
            noise_scale: 0.1,
            unseen_extra_noise: 0.05,
            jitter_scale: 0.1,
            accent_bias_scale: 0.05,
            confusable_accents: true,
            accent_rotation_angle: 0.15,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.seen_accents.len() < 2 {
            return Err(DataError::Invalid(
                "need at least 2 seen accents for meaningful gating".into(),
            ));
        }
        let mut all: Vec<&String> = self.seen_accents.iter().chain(&self.unseen_accents).collect();
        all.sort();
        let before = all.len();
        all.dedup();
        if all.len() != before {
            return Err(DataError::Invalid("duplicate accent names".into()));
        }
        if self.alphabet.is_empty()
            || self.min_transcript_len == 0
            || self.min_transcript_len > self.max_transcript_len
            || self.feature_dim == 0
            || self.frames_per_token == 0
            || self.speakers_per_accent == 0
            || self.num_utterances == 0
            || self.transcript_pool == 0
        {
            return Err(DataError::Invalid("degenerate generation config".into()));
        }
        if self.confusable_accents && self.feature_dim < self.alphabet.chars().count() {
            return Err(DataError::Invalid(format!(
                "confusable accents need feature_dim >= alphabet length ({} < {})",
                self.feature_dim,
                self.alphabet.chars().count()
            )));
        }
        Ok(())
    }
}

/// Synthetic stand-in for acoustic accent effects: a well-conditioned
/// linear transform (orthogonal by construction) plus a bias, with
/// per-frame noise.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AccentProfile {
    pub name: String,
    /// Row-major `feature_dim x feature_dim`, product of Householder
    /// reflections (condition number 1).
    pub transform: Vec<f64>,
    pub bias: Vec<f64>,
    pub noise_scale: f64,
}

impl AccentProfile {
    fn init(
        name: &str,
        dim: usize,
        bias_scale: f64,
        noise_scale: f64,
        confusion: Option<(&[f64], f64)>,
        rng: &mut Rng,
    ) -> Self {
        // Orthogonal by construction, condition number 1. In confusable
        // mode the accent's own rotation uses small plane angles on top of
        // the token-confusion rotation; otherwise it is a product of random
        // Householder reflections.
        let transform = match confusion {
            Some((c, angle)) => matmul(&givens_product(dim, angle, rng), c, dim),
            None => {
                let mut q = identity(dim);
                for _ in 0..2 {
                    let v: Vec<f64> = (0..dim).map(|_| rng.gaussian()).collect();
                    q = matmul(&householder(&v), &q, dim);
                }
                q
            }
        };
        AccentProfile {
            name: name.to_string(),
            transform,
            bias: (0..dim).map(|_| rng.gaussian() * bias_scale).collect(),
            noise_scale,
        }
    }

    fn apply(&self, frame: &[f64]) -> Vec<f64> {
        let d = self.bias.len();
        let mut out = self.bias.clone();
        for r in 0..d {
            let row = &self.transform[r * d..(r + 1) * d];
            out[r] += row.iter().zip(frame).map(|(a, b)| a * b).sum::<f64>();
        }
        out
    }
}

fn identity(d: usize) -> Vec<f64> {
    let mut m = vec![0.0; d * d];
    for i in 0..d {
        m[i * d + i] = 1.0;
    }
    m
}

fn householder(v: &[f64]) -> Vec<f64> {
    let d = v.len();
    let norm_sq: f64 = v.iter().map(|x| x * x).sum();
    let mut m = identity(d);
    if norm_sq > 0.0 {
        for i in 0..d {
            for j in 0..d {
                m[i * d + j] -= 2.0 * v[i] * v[j] / norm_sq;
            }
        }
    }
    m
}

fn matmul(a: &[f64], b: &[f64], d: usize) -> Vec<f64> {
    let mut out = vec![0.0; d * d];
    for i in 0..d {
        for k in 0..d {
            let av = a[i * d + k];
            for j in 0..d {
                out[i * d + j] += av * b[k * d + j];
            }
        }
    }
    out
}

/// Product of `dim` random plane (Givens) rotations with angles drawn from
/// N(0, angle^2): orthogonal, and close to the identity for small angles.
fn givens_product(dim: usize, angle: f64, rng: &mut Rng) -> Vec<f64> {
    let mut q = identity(dim);
    for _ in 0..dim {
        let i = rng.below(dim);
        let mut j = rng.below(dim - 1);
        if j >= i {
            j += 1;
        }
        let theta = rng.gaussian() * angle;
        let (s, c) = theta.sin_cos();
        // Rotate rows i and j of q in place.
        for col in 0..dim {
            let qi = q[i * dim + col];
            let qj = q[j * dim + col];
            q[i * dim + col] = c * qi - s * qj;
            q[j * dim + col] = s * qi + c * qj;
        }
    }
    q
}

/// Random orthonormal basis of `dim` vectors (Gram-Schmidt on Gaussian
/// draws).
fn orthonormal_basis(dim: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(dim);
    while basis.len() < dim {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.gaussian()).collect();
        for b in &basis {
            let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            for (x, y) in v.iter_mut().zip(b) {
                *x -= dot * y;
            }
        }
        let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            for x in &mut v {
                *x /= norm;
            }
            basis.push(v);
        }
    }
    basis
}

/// Orthogonal map sending basis vector k to basis vector (k+shift) mod
/// n_tokens for k < n_tokens, identity on the rest of the basis.
fn confusion_rotation(basis: &[Vec<f64>], n_tokens: usize, shift: usize) -> Vec<f64> {
    let dim = basis.len();
    let mut c = vec![0.0; dim * dim];
    for (k, source) in basis.iter().enumerate() {
        let target = if k < n_tokens {
            &basis[(k + shift) % n_tokens]
        } else {
            source
        };
        for r in 0..dim {
            for col in 0..dim {
                c[r * dim + col] += target[r] * source[col];
            }
        }
    }
    c
}

/// An utterance with its features still in memory.
#[derive(Clone, Debug)]
pub struct GeneratedUtterance {
    pub utterance: Utterance,
    /// Row-major `[duration_frames, feature_dim]`.
    pub features: Vec<f32>,
}

/// How an utterance's features are produced from its accent.
enum AccentEffect {
    Seen(usize),
    /// Blend of two seen profiles plus extra noise.
    Unseen { a: usize, b: usize, lambda: f64 },
}

/// Deterministic base sequence for a transcript: token embedding plus
/// positional jitter. Same transcript, same base.
fn base_sequence(
    token_ids: &[usize],
    token_embeddings: &[Vec<f64>],
    cfg: &GenConfig,
) -> Vec<Vec<f64>> {
    let d = cfg.feature_dim;
    let mut frames = Vec::with_capacity(token_ids.len() * cfg.frames_per_token);
    let mut global = 0usize;
    for &tok in token_ids {
        for _ in 0..cfg.frames_per_token {
            let mut frame = token_embeddings[tok].clone();
            for (c, value) in frame.iter_mut().enumerate().take(d) {
                *value +=
                    cfg.jitter_scale * ((global as f64 + 1.0) * 0.7 + (c as f64 + 1.0) * 1.3).sin();
            }
            frames.push(frame);
            global += 1;
        }
    }
    frames
}

/// Generates the corpus in memory. Deterministic under `seed`: utterance
/// count per accent differs by at most one, speakers are disjoint across
/// accents, and features follow the per-accent transform model.
pub fn gen_corpus(cfg: &GenConfig, seed: u64) -> Result<(Vec<GeneratedUtterance>, Vec<AccentProfile>), DataError> {
    cfg.validate()?;
    let root = Rng::new(seed);
    let alphabet: Vec<char> = cfg.alphabet.chars().collect();
    let d = cfg.feature_dim;

    // Fixed per-token embeddings shared by the whole corpus. With
    // confusable accents they are rows of an orthonormal basis so a
    // rotation can map token directions exactly onto each other.
    let mut emb_rng = root.split("token-embeddings");
    let (token_embeddings, basis): (Vec<Vec<f64>>, Option<Vec<Vec<f64>>>) =
        if cfg.confusable_accents {
            let basis = orthonormal_basis(d, &mut emb_rng);
            (basis[..alphabet.len()].to_vec(), Some(basis))
        } else {
            (
                (0..alphabet.len())
                    .map(|_| (0..d).map(|_| emb_rng.gaussian()).collect())
                    .collect(),
                None,
            )
        };

    // Transcript pool (token-id sequences).
    let mut pool_rng = root.split("transcripts");
    let transcripts: Vec<Vec<usize>> = (0..cfg.transcript_pool)
        .map(|_| {
            let len = pool_rng.range_inclusive(cfg.min_transcript_len, cfg.max_transcript_len);
            (0..len).map(|_| pool_rng.below(alphabet.len())).collect()
        })
        .collect();

    // Seen-accent profiles; accent i confuses token t with token t+i.
    let mut prof_rng = root.split("profiles");
    let profiles: Vec<AccentProfile> = cfg
        .seen_accents
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let confusion = basis
                .as_ref()
                .map(|b| confusion_rotation(b, alphabet.len(), i % alphabet.len()));
            AccentProfile::init(
                name,
                d,
                cfg.accent_bias_scale,
                cfg.noise_scale,
                confusion
                    .as_deref()
                    .map(|c| (c, cfg.accent_rotation_angle)),
                &mut prof_rng,
            )
        })
        .collect();

    // Unseen accents: convex combinations of two distinct seen profiles.
    let mut unseen_rng = root.split("unseen");
    let all_accents: Vec<(String, AccentEffect)> = cfg
        .seen_accents
        .iter()
        .enumerate()
        .map(|(i, name)| (name.clone(), AccentEffect::Seen(i)))
        .chain(cfg.unseen_accents.iter().map(|name| {
            let a = unseen_rng.below(cfg.seen_accents.len());
            let mut b = unseen_rng.below(cfg.seen_accents.len() - 1);
            if b >= a {
                b += 1;
            }
            let lambda = 0.3 + 0.4 * unseen_rng.uniform();
            (name.clone(), AccentEffect::Unseen { a, b, lambda })
        }))
        .collect();

    let mut pick_rng = root.split("assignments");
    let noise_root = root.split("noise");
    let mut out = Vec::with_capacity(cfg.num_utterances);
    for i in 0..cfg.num_utterances {
        let (accent_name, effect) = &all_accents[i % all_accents.len()];
        let speaker_idx = pick_rng.below(cfg.speakers_per_accent);
        let speaker = format!("spk_{accent_name}_{speaker_idx}");
        let tr_idx = pick_rng.below(transcripts.len());
        let token_ids = &transcripts[tr_idx];
        let transcript: String = token_ids.iter().map(|&t| alphabet[t]).collect();

        let base = base_sequence(token_ids, &token_embeddings, cfg);
        let mut noise = noise_root.split_index(i as u64);
        let frames: Vec<Vec<f64>> = base
            .iter()
            .map(|frame| match effect {
                AccentEffect::Seen(p) => {
                    let mut f = profiles[*p].apply(frame);
                    for v in &mut f {
                        *v += cfg.noise_scale * noise.gaussian();
                    }
                    f
                }
                AccentEffect::Unseen { a, b, lambda } => {
                    let fa = profiles[*a].apply(frame);
                    let fb = profiles[*b].apply(frame);
                    fa.iter()
                        .zip(&fb)
                        .map(|(x, y)| {
                            lambda * x
                                + (1.0 - lambda) * y
                                + (cfg.noise_scale + cfg.unseen_extra_noise) * noise.gaussian()
                        })
                        .collect()
                }
            })
            .collect();

        let duration = frames.len();
        let features: Vec<f32> = frames.iter().flatten().map(|&v| v as f32).collect();
        let utt_id = format!("utt_{i:05}");
        out.push(GeneratedUtterance {
            utterance: Utterance {
                feature_path: format!("features/{utt_id}.afv"),
                utt_id,
                speaker,
                accent: accent_name.clone(),
                transcript,
                duration_frames: duration,
            },
            features,
        });
    }
    Ok((out, profiles))
}

/// Writes features and the manifest under `out_dir`; returns the manifest.
pub fn write_corpus(
    generated: &[GeneratedUtterance],
    feature_dim: usize,
    out_dir: &Path,
) -> Result<Manifest, DataError> {
    std::fs::create_dir_all(out_dir.join("features"))?;
    for g in generated {
        let t = g.features.len() / feature_dim;
        let tensor = Tensor::<f32>::from_vec(&[t, feature_dim], g.features.clone());
        write_features(&out_dir.join(&g.utterance.feature_path), &tensor)?;
    }
    let manifest = Manifest::new(generated.iter().map(|g| g.utterance.clone()).collect())?;
    manifest.write_jsonl(&out_dir.join("manifest.jsonl"))?;
    Ok(manifest)
}
