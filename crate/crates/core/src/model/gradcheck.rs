//! Finite-difference verification of the full network's backward pass.

use rand::rngs::ThreadRng;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ModelConfig, ModelInput, ModelParams, Recommender, PAD};
use crate::error::Result;
use crate::numeric::{grad_check, Matrix};
use crate::positional::SparseMask;
use crate::temporal::{build_relative_matrix, RelativeTemporalMatrix};

/// `n = 8, d = 4, d_ffn = 8, L = 2, vocab = 20`, no dropout.
pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        max_len: 8,
        hidden: 4,
        ffn_hidden: 8,
        layers: 2,
        vocab: 20,
        dropout: 0.0,
        negatives: 5,
        ..ModelConfig::default()
    }
}

/// Random parameters at a scale where every path carries signal (the
/// default initializer is too small for differences to be informative).
pub fn perturbed_model(cfg: ModelConfig, seed: u64) -> Result<Recommender> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = Recommender::new(cfg, &mut rng)?;
    model.params.for_each_mut(|name, m| {
        for v in m.as_mut_slice() {
            *v = if name.ends_with("alpha") || name.contains("norm") {
                rng.random_range(0.5..1.5)
            } else if name.ends_with("beta") {
                rng.random_range(0.3..0.9)
            } else {
                rng.random_range(-0.6..0.6)
            };
        }
    });
    model.params.item_emb.row_mut(PAD).fill(0.0);
    Ok(model)
}

/// One random training sequence for `cfg`: a real prefix of random length,
/// shifted targets, negatives and increasing timestamps.
pub struct GradCheckCase {
    pub items: Vec<usize>,
    pub targets: Vec<usize>,
    pub negatives: Vec<Vec<usize>>,
    pub temporal: RelativeTemporalMatrix,
}

impl GradCheckCase {
    pub fn random(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = cfg.max_len;
        let real = rng.random_range(2..=n);
        let mut seq: Vec<usize> = (0..=real).map(|_| rng.random_range(1..cfg.vocab)).collect();
        let mut targets = seq.split_off(1);
        seq.truncate(real);
        targets.truncate(real);
        seq.resize(n, PAD);
        targets.resize(n, PAD);
        let negatives = targets
            .iter()
            .map(|&t| {
                if t == PAD {
                    return Vec::new();
                }
                (0..cfg.negatives)
                    .map(|_| loop {
                        let v = rng.random_range(1..cfg.vocab);
                        if v != t {
                            break v;
                        }
                    })
                    .collect()
            })
            .collect();
        let mut t = 1_000_i64;
        let mut stamps = Vec::with_capacity(n);
        for i in 0..n {
            if i < real {
                t += rng.random_range(0..40);
            }
            stamps.push(t);
        }
        Ok(GradCheckCase {
            items: seq,
            targets,
            negatives,
            temporal: build_relative_matrix(&stamps)?,
        })
    }

    fn loss_and_grads(&self, model: &Recommender, masks: Option<&[SparseMask]>) -> Result<(f64, ModelParams)> {
        let mut grads = model.params.zeros_like();
        let input = ModelInput {
            items: &self.items,
            temporal: &self.temporal,
        };
        let (loss, _) = model.sequence_loss::<ThreadRng>(input, masks, &self.targets, &self.negatives, None, &mut grads)?;
        Ok((loss, grads))
    }
}

/// Largest relative error between the analytic gradient of the summed
/// sequence loss and central differences, over every parameter.
pub fn end_to_end_grad_check(model: &Recommender, case: &GradCheckCase, masks: Option<&[SparseMask]>) -> Result<f64> {
    let (_, grads) = case.loss_and_grads(model, masks)?;
    let point: Vec<Matrix> = model.params.tensors().into_iter().map(|(_, m)| m.clone()).collect();
    let analytic: Vec<Matrix> = grads.tensors().into_iter().map(|(_, m)| m.clone()).collect();
    let names = model.params.names();
    let name_refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let mut probe = model.clone();
    grad_check(
        |tensors| {
            for ((_, m), src) in probe.params.tensors_mut().into_iter().zip(tensors) {
                m.as_mut_slice().copy_from_slice(src.as_slice());
            }
            case.loss_and_grads(&probe, masks).map_or(f64::NAN, |(l, _)| l)
        },
        &point,
        &analytic,
        &name_refs,
        1e-5,
    )
}
