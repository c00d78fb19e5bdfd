//! Training loop: Adam over the joint CTC-attention objective with global
//! gradient-norm clipping, optional stochastic depth (whole encoder layers
//! skipped during training only), and deterministic seeded shuffling.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{ModelError, ModelParams};
use crate::codebook::AccentId;
use crate::rng::Rng;
use crate::tensor::{Element, Tensor};

type Result<T> = std::result::Result<T, ModelError>;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Joint weight w: loss = w * ctc + (1 - w) * attention.
    pub ctc_weight: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Global gradient-norm clip; 0 disables clipping.
    pub grad_clip_norm: f64,
    /// Probability of skipping a whole encoder layer per sample (training
    /// only).
    pub stochastic_depth_rate: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            ctc_weight: 0.3,
            learning_rate: 1e-3,
            epochs: 20,
            batch_size: 8,
            grad_clip_norm: 5.0,
            stochastic_depth_rate: 0.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.ctc_weight) {
            return Err(ModelError::Invalid(format!(
                "ctc_weight {} outside [0, 1]",
                self.ctc_weight
            )));
        }
        if !(0.0..1.0).contains(&self.stochastic_depth_rate) {
            return Err(ModelError::Invalid(format!(
                "stochastic_depth_rate {} outside [0, 1)",
                self.stochastic_depth_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(ModelError::Invalid("batch_size must be positive".into()));
        }
        Ok(())
    }
}

/// One training utterance: features, accent (None for baseline models), and
/// the token-id transcript.
#[derive(Clone, Debug)]
pub struct TrainSample<E: Element> {
    pub utt_id: String,
    pub features: Tensor<E>,
    pub accent: Option<AccentId>,
    pub target: Vec<usize>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct TrainLog {
    /// Mean per-sample joint loss per epoch.
    pub epoch_losses: Vec<f64>,
    /// CTC-infeasible samples skipped, totalled over all epochs.
    pub skipped_infeasible: usize,
}

/// Adam with bias correction. Moment buffers are keyed by parameter name
/// and kept in f64.
pub struct AdamOptimizer {
    pub learning_rate: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step_count: u64,
    m: HashMap<String, Vec<f64>>,
    v: HashMap<String, Vec<f64>>,
}

impl AdamOptimizer {
    pub fn new(learning_rate: f64) -> Self {
        AdamOptimizer {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step_count: 0,
            m: HashMap::new(),
            v: HashMap::new(),
        }
    }

    /// Applies one update from the gradients accumulated on the parameters,
    /// clipping the global gradient norm first. Frozen codebooks are left
    /// untouched. All gradient buffers are cleared afterwards.
    pub fn step<E: Element>(&mut self, params: &mut ModelParams<E>, clip_norm: f64) {
        let frozen = params
            .codebooks
            .as_ref()
            .map(|c| c.frozen)
            .unwrap_or(false);
        let is_frozen = |name: &str| frozen && name.starts_with("codebooks");

        let mut sq_norm = 0.0f64;
        params.for_each_param(&mut |name, t| {
            if is_frozen(&name) {
                return;
            }
            if let Some(g) = t.grad() {
                sq_norm += g.iter().map(|&x| x.to_f64() * x.to_f64()).sum::<f64>();
            }
        });
        let norm = sq_norm.sqrt();
        let clip_scale = if clip_norm > 0.0 && norm > clip_norm {
            clip_norm / norm
        } else {
            1.0
        };

        self.step_count += 1;
        let t_step = self.step_count;
        let (b1, b2, eps, lr) = (self.beta1, self.beta2, self.eps, self.learning_rate);
        let bc1 = 1.0 - b1.powi(t_step as i32);
        let bc2 = 1.0 - b2.powi(t_step as i32);
        let (m_state, v_state) = (&mut self.m, &mut self.v);

        params.for_each_param(&mut |name, t| {
            if is_frozen(&name) {
                t.zero_grad();
                return;
            }
            let grad = match t.grad() {
                Some(g) => g,
                None => {
                    return;
                }
            };
            let n = t.numel();
            let m = m_state.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
            let v = v_state.entry(name).or_insert_with(|| vec![0.0; n]);
            let mut new_data = Vec::with_capacity(n);
            for i in 0..n {
                let g = grad[i].to_f64() * clip_scale;
                m[i] = b1 * m[i] + (1.0 - b1) * g;
                v[i] = b2 * v[i] + (1.0 - b2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                let p = t.data()[i].to_f64() - lr * m_hat / (v_hat.sqrt() + eps);
                new_data.push(E::from_f64(p));
            }
            *t = Tensor::parameter(t.shape(), new_data);
        });
    }
}

/// Trains in place, returning the per-epoch loss log. Deterministic under
/// `config.seed`; CTC-infeasible samples are skipped and counted.
pub fn train<E: Element>(
    params: &mut ModelParams<E>,
    samples: &[TrainSample<E>],
    config: &TrainConfig,
) -> Result<TrainLog> {
    config.validate()?;
    if samples.is_empty() {
        return Err(ModelError::Invalid("no training samples".into()));
    }
    if let Some(cbs) = &params.codebooks {
        for s in samples {
            match s.accent {
                Some(a) if a.0 < cbs.num_accents() => {}
                Some(a) => {
                    return Err(ModelError::InvalidAccent {
                        index: a.0,
                        extent: cbs.num_accents(),
                    })
                }
                None => return Err(ModelError::AccentRequired),
            }
        }
    }

    let root = Rng::new(config.seed);
    let order_rng = root.split("order");
    let mut depth_rng = root.split("depth");
    let n_layers = params.config.num_encoder_layers;
    let mut opt = AdamOptimizer::new(config.learning_rate);
    let mut log = TrainLog::default();

    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order_rng.split_index(epoch as u64).shuffle(&mut order);

        let mut loss_sum = 0.0;
        let mut loss_count = 0usize;
        for batch in order.chunks(config.batch_size) {
            for &idx in batch {
                let sample = &samples[idx];
                let skips: Option<Vec<bool>> = (config.stochastic_depth_rate > 0.0).then(|| {
                    (0..n_layers)
                        .map(|_| depth_rng.uniform() < config.stochastic_depth_rate)
                        .collect()
                });
                let loss = match params.joint_loss_with_skips(
                    &sample.features,
                    sample.accent,
                    &sample.target,
                    config.ctc_weight,
                    skips.as_deref(),
                ) {
                    Ok(loss) => loss,
                    Err(ModelError::CtcInfeasible { .. }) => {
                        log.skipped_infeasible += 1;
                        continue;
                    }
                    Err(e) => return Err(e),
                };
                loss_sum += loss.item().to_f64();
                loss_count += 1;
                loss.scale(1.0 / batch.len() as f64).backward()?;
            }
            opt.step(params, config.grad_clip_norm);
        }
        log.epoch_losses
            .push(loss_sum / loss_count.max(1) as f64);
    }
    Ok(log)
}
