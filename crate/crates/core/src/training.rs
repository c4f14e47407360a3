//! AdamW optimization with uniform negative sampling, seeded per-step
//! randomness, per-epoch validation, checkpoints and early stopping.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{training_example, DatasetSplit, TrainExample};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalOptions};
use crate::model::{save_checkpoint, ModelConfig, ModelInput, ModelParams, Recommender, PAD};
use crate::numeric::Matrix;
use crate::positional::DEFAULT_STRIDE;
use crate::temporal::{build_relative_matrix, RelativeTemporalMatrix, DEFAULT_EPSILON};

/// Everything a run needs besides the data: network shape, optimizer,
/// loop and pruning settings. Serialized as one flat JSON object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub max_len: usize,
    pub hidden: usize,
    pub ffn_hidden: usize,
    pub layers: usize,
    pub dropout: f64,
    pub negatives: usize,
    pub gamma: f64,
    pub epsilon: f64,
    pub temporal_channel: bool,
    pub positional_channel: bool,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Epochs without validation NDCG@10 improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    pub threads: usize,
    pub stride: usize,
    pub tau: f64,
    /// Canonical dataset TSV.
    pub data: Option<PathBuf>,
    pub run_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let m = ModelConfig::default();
        RunConfig {
            max_len: m.max_len,
            hidden: m.hidden,
            ffn_hidden: m.ffn_hidden,
            layers: m.layers,
            dropout: m.dropout,
            negatives: m.negatives,
            gamma: m.gamma,
            epsilon: DEFAULT_EPSILON,
            temporal_channel: true,
            positional_channel: true,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            weight_decay: 0.01,
            batch_size: 128,
            epochs: 20,
            patience: 5,
            seed: 42,
            threads: 1,
            stride: DEFAULT_STRIDE,
            tau: 0.6,
            data: None,
            run_dir: None,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    pub fn model_config(&self, vocab: usize) -> ModelConfig {
        ModelConfig {
            max_len: self.max_len,
            hidden: self.hidden,
            ffn_hidden: self.ffn_hidden,
            layers: self.layers,
            vocab,
            dropout: self.dropout,
            negatives: self.negatives,
            gamma: self.gamma,
            epsilon: self.epsilon,
            temporal_channel: self.temporal_channel,
            positional_channel: self.positional_channel,
        }
    }

    pub fn optimizer(&self) -> AdamW {
        AdamW {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
            weight_decay: self.weight_decay,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model_config(2).validate()?;
        self.optimizer().validate()?;
        let fail = |m: String| Err(Error::Config(m));
        if self.batch_size == 0 {
            return fail("batch_size must be >= 1".into());
        }
        if self.epochs == 0 {
            return fail("epochs must be >= 1".into());
        }
        if self.threads == 0 {
            return fail("threads must be >= 1".into());
        }
        if self.stride == 0 {
            return fail("stride must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return fail(format!("tau must lie in [0, 1], got {}", self.tau));
        }
        Ok(())
    }
}

/// AdamW hyper-parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        RunConfig::default().optimizer()
    }
}

impl AdamW {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && self.lr.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.weight_decay >= 0.0
            && self.weight_decay.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid optimizer settings {self:?}")))
        }
    }
}

/// First and second moments shaped like the parameters, plus the step count.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub m: ModelParams,
    pub v: ModelParams,
    pub step: u64,
    /// Tensor names the optimizer leaves untouched.
    pub frozen: BTreeSet<String>,
}

impl OptimizerState {
    pub fn new(params: &ModelParams) -> Self {
        OptimizerState {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
            frozen: BTreeSet::new(),
        }
    }
}

/// One decoupled-weight-decay Adam update. The padding row of the item
/// embedding and every frozen tensor are left as they are.
pub fn adamw_step(params: &mut ModelParams, grads: &ModelParams, state: &mut OptimizerState, opt: &AdamW) -> Result<()> {
    for (name, g) in grads.tensors() {
        if !g.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite gradient in {name} at step {}",
                state.step + 1
            )));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - opt.beta1.powi(t);
    let bc2 = 1.0 - opt.beta2.powi(t);
    let grads = grads.tensors();
    let moments_m = state.m.tensors_mut();
    let moments_v = state.v.tensors_mut();
    for ((((name, p), (_, g)), (_, m)), (_, v)) in params.tensors_mut().into_iter().zip(grads).zip(moments_m).zip(moments_v)
    {
        if state.frozen.contains(&name) {
            continue;
        }
        let skip_rows = if name == crate::model::ITEM_EMB { p.cols() } else { 0 };
        update_tensor(p, g, m, v, opt, bc1, bc2, skip_rows);
    }
    if let Some(name) = params.first_non_finite() {
        return Err(Error::Numeric(format!("{name} became non-finite at step {}", state.step)));
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn update_tensor(p: &mut Matrix, g: &Matrix, m: &mut Matrix, v: &mut Matrix, opt: &AdamW, bc1: f64, bc2: f64, skip: usize) {
    let decay = 1.0 - opt.lr * opt.weight_decay;
    let p = &mut p.as_mut_slice()[skip..];
    let g = &g.as_slice()[skip..];
    let m = &mut m.as_mut_slice()[skip..];
    let v = &mut v.as_mut_slice()[skip..];
    for k in 0..p.len() {
        m[k] = opt.beta1 * m[k] + (1.0 - opt.beta1) * g[k];
        v[k] = opt.beta2 * v[k] + (1.0 - opt.beta2) * g[k] * g[k];
        let m_hat = m[k] / bc1;
        let v_hat = v[k] / bc2;
        p[k] = p[k] * decay - opt.lr * m_hat / (v_hat.sqrt() + opt.eps);
    }
}

/// `n` uniform draws over `1..vocab`, redrawing any that hit `exclude`.
pub fn sample_negatives<R: Rng + ?Sized>(vocab: usize, n: usize, exclude: usize, rng: &mut R) -> Result<Vec<usize>> {
    if vocab < 2 || vocab - 2 < n {
        return Err(Error::Config(format!(
            "vocab of {vocab} (with padding) cannot supply {n} negatives besides the target"
        )));
    }
    Ok((0..n)
        .map(|_| loop {
            let v = rng.random_range(1..vocab);
            if v != exclude {
                break v;
            }
        })
        .collect())
}

/// Stateless seed derivation so each (epoch, step, example) gets its own
/// stream regardless of scheduling.
pub fn derive_seed(seed: u64, parts: &[u64]) -> u64 {
    let mut h = seed ^ 0x9E37_79B9_7F4A_7C15;
    for &p in parts {
        h = splitmix(h ^ p.wrapping_mul(0xD6E8_FEB8_6659_FD93));
    }
    h
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A training example with its temporal matrix built once.
#[derive(Debug, Clone)]
pub struct PreparedExample {
    pub example: TrainExample,
    pub temporal: RelativeTemporalMatrix,
}

pub fn prepare_examples(split: &DatasetSplit, n: usize) -> Result<Vec<PreparedExample>> {
    split
        .train
        .iter()
        .filter_map(|s| training_example(s, n))
        .map(|example| {
            let temporal = build_relative_matrix(&example.timestamps)?;
            Ok(PreparedExample { example, temporal })
        })
        .collect()
}

fn example_gradients(model: &Recommender, ex: &PreparedExample, seed: u64, dropout: bool) -> Result<(ModelParams, f64, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let negatives = ex
        .example
        .targets
        .iter()
        .map(|&t| {
            if t == PAD {
                Ok(Vec::new())
            } else {
                sample_negatives(model.config.vocab, model.config.negatives, t, &mut rng)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let mut grads = model.params.zeros_like();
    let input = ModelInput {
        items: &ex.example.items,
        temporal: &ex.temporal,
    };
    let (loss, count) = model.sequence_loss(
        input,
        None,
        &ex.example.targets,
        &negatives,
        if dropout { Some(&mut rng) } else { None },
        &mut grads,
    )?;
    Ok((grads, loss, count))
}

/// Mean loss over every target position in `batch` and the matching
/// gradient. Example `i` draws its negatives and dropout masks from
/// `derive_seed(seed, [i])`; gradients are summed in batch order.
pub fn batch_gradients(
    model: &Recommender,
    batch: &[&PreparedExample],
    seed: u64,
    dropout: bool,
    parallel: bool,
) -> Result<(ModelParams, f64)> {
    let run = |(i, ex): (usize, &&PreparedExample)| example_gradients(model, ex, derive_seed(seed, &[i as u64]), dropout);
    let parts: Vec<(ModelParams, f64, usize)> = if parallel {
        batch.par_iter().enumerate().map(run).collect::<Result<_>>()?
    } else {
        batch.iter().enumerate().map(run).collect::<Result<_>>()?
    };
    let mut total = model.params.zeros_like();
    let (mut loss, mut count) = (0.0, 0);
    for (g, l, c) in &parts {
        total.add_assign(g);
        loss += l;
        count += c;
    }
    if count == 0 {
        return Ok((total, 0.0));
    }
    total.scale(1.0 / count as f64);
    Ok((total, loss / count as f64))
}

/// One row of `metrics.csv`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRow {
    pub epoch: usize,
    pub step: u64,
    pub loss: f64,
    pub hr10: f64,
    pub ndcg10: f64,
    pub mrr: f64,
    pub wall_ms: u128,
}

pub const METRICS_HEADER: &str = "epoch,step,loss,hr10,ndcg10,mrr,wall_ms";

impl MetricsRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.epoch, self.step, self.loss, self.hr10, self.ndcg10, self.mrr, self.wall_ms
        )
    }
}

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut out = format!("{METRICS_HEADER}\n");
    for r in rows {
        let _ = writeln!(out, "{}", r.csv_line());
    }
    out
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters after the last completed epoch.
    pub model: Recommender,
    pub rows: Vec<MetricsRow>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

/// Trains from scratch on `split.train`, validating on `split.valid` after
/// every epoch. With a run directory, writes `metrics.csv`,
/// `checkpoints/epoch_K` and `best_epoch.txt` as it goes.
pub fn train(
    split: &DatasetSplit,
    vocab: usize,
    cfg: &RunConfig,
    run_dir: Option<&Path>,
    mut on_epoch: impl FnMut(&MetricsRow),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let model_cfg = cfg.model_config(vocab);
    model_cfg.validate()?;
    let mut init_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[0]));
    let mut model = Recommender::new(model_cfg, &mut init_rng)?;
    model.params.quantize_f32();
    let examples = prepare_examples(split, cfg.max_len)?;
    if examples.is_empty() {
        return Err(Error::Data("no user has the two interactions a training example needs".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let parallel = cfg.threads > 1;
    let opt = cfg.optimizer();
    let mut state = OptimizerState::new(&model.params);
    let mut rows = Vec::new();
    let mut best: Option<(usize, f64)> = None;
    let mut stopped_early = false;
    let started = Instant::now();

    if let Some(dir) = run_dir {
        fs::create_dir_all(dir.join("checkpoints")).map_err(|e| Error::io(dir, e))?;
    }

    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..examples.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[1, epoch as u64])));
        let (mut loss_sum, mut batches) = (0.0, 0usize);
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&PreparedExample> = chunk.iter().map(|&i| &examples[i]).collect();
            let seed = derive_seed(cfg.seed, &[2, epoch as u64, b as u64]);
            let (grads, loss) = pool.install(|| batch_gradients(&model, &batch, seed, cfg.dropout > 0.0, parallel))?;
            adamw_step(&mut model.params, &grads, &mut state, &opt)?;
            loss_sum += loss;
            batches += 1;
        }
        model.params.quantize_f32();

        let eval = pool.install(|| {
            evaluate(
                &model,
                &split.valid,
                None,
                EvalOptions {
                    parallel,
                    ..EvalOptions::default()
                },
            )
        });
        let (hr10, ndcg10, mrr) = match eval {
            Ok(e) => {
                let m = e.metrics(10)?;
                (m.hr, m.ndcg, m.mrr)
            }
            Err(Error::Data(_)) if split.valid.is_empty() => (0.0, 0.0, 0.0),
            Err(e) => return Err(e),
        };
        let row = MetricsRow {
            epoch,
            step: state.step,
            loss: loss_sum / batches as f64,
            hr10,
            ndcg10,
            mrr,
            wall_ms: started.elapsed().as_millis(),
        };
        rows.push(row);
        on_epoch(&row);

        if let Some(dir) = run_dir {
            let mut meta = BTreeMap::new();
            meta.insert("epoch".to_string(), epoch.to_string());
            meta.insert("step".to_string(), state.step.to_string());
            meta.insert("seed".to_string(), cfg.seed.to_string());
            save_checkpoint(&dir.join("checkpoints").join(format!("epoch_{epoch}")), &model, &meta)?;
            let path = dir.join("metrics.csv");
            fs::write(&path, metrics_csv(&rows)).map_err(|e| Error::io(&path, e))?;
        }

        if best.is_none_or(|(_, b)| ndcg10 > b) {
            best = Some((epoch, ndcg10));
            if let Some(dir) = run_dir {
                let path = dir.join("best_epoch.txt");
                fs::write(&path, format!("epoch_{epoch}\n")).map_err(|e| Error::io(&path, e))?;
            }
        } else if best.is_some_and(|(e, _)| epoch - e >= cfg.patience) {
            stopped_early = epoch < cfg.epochs;
            break;
        }
    }
    Ok(TrainOutcome {
        model,
        rows,
        best_epoch: best.map_or(0, |(e, _)| e),
        stopped_early,
    })
}
