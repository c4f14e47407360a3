//! Embedding layer, stacked dual-channel blocks, dot-product prediction
//! layer and sampled softmax loss, each with an analytic backward pass.
//!
//! Per block, with `X` the `n × d` input:
//!
//! ```text
//! U, V = split(SiLU(RMSNorm(X) · W_uv))          U: n × 2d, V: n × d
//! I    = RMSNorm([A_ts · V | W_pos · V]) ⊙ U
//! O    = I · W_o + b + X
//! H    = (SiLU(O' · W1) ⊙ (O' · W2)) · W3 + O,   O' = RMSNorm(O)
//! ```
//!
//! `A_ts` is the exponential-power kernel over the sequence's relative
//! temporal matrix and `W_pos` the Toeplitz positional map, both causal.
//! Neither map is softmax-normalized.

mod checkpoint;
mod config;
mod gradcheck;
mod params;

use rand::Rng;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use config::ModelConfig;
pub use gradcheck::{end_to_end_grad_check, perturbed_model, tiny_config, GradCheckCase};
pub use params::{LayerParams, ModelParams, INIT_STD, ITEM_EMB, POS_EMB};

use crate::error::{Error, Result};
use crate::numeric::{
    dot, log_sum_exp, matmul, matmul_nt, matmul_tn, rmsnorm_rows, rmsnorm_rows_backward, silu, silu_grad,
    softmax_row, Matrix,
};
use crate::positional::{apply_sparse_mask, materialize, toeplitz_gradient, SparseMask};
use crate::temporal::{exp_power_attention, exp_power_gradients, RelativeTemporalMatrix};

/// The padding item id.
pub const PAD: usize = 0;

/// One length-`n` sequence: real items first, padding (`0`) after.
#[derive(Debug, Clone, Copy)]
pub struct ModelInput<'a> {
    pub items: &'a [usize],
    pub temporal: &'a RelativeTemporalMatrix,
}

/// Causal mixing maps of one block for one sequence.
#[derive(Debug, Clone)]
pub struct BlockMaps {
    pub a_ts: Matrix,
    pub w_pos: Matrix,
}

/// Inverted-dropout masks; `None` entries mean the layer ran without dropout.
struct Dropout<'r, R: Rng + ?Sized> {
    rate: f64,
    rng: &'r mut R,
}

impl<R: Rng + ?Sized> Dropout<'_, R> {
    fn mask(&mut self, rows: usize, cols: usize) -> Option<Matrix> {
        if self.rate == 0.0 {
            return None;
        }
        let keep = 1.0 - self.rate;
        let scale = 1.0 / keep;
        let mut m = Matrix::zeros(rows, cols);
        for v in m.as_mut_slice() {
            if self.rng.random::<f64>() < keep {
                *v = scale;
            }
        }
        Some(m)
    }
}

#[derive(Debug, Clone)]
pub struct BlockCache {
    x: Matrix,
    xn: Matrix,
    inv_attn: Vec<f64>,
    z: Matrix,
    u: Matrix,
    v: Matrix,
    c: Matrix,
    cn: Matrix,
    inv_mix: Vec<f64>,
    inter: Matrix,
    o: Matrix,
    on: Matrix,
    inv_ffn: Vec<f64>,
    z1: Matrix,
    z2: Matrix,
    ffn_hidden: Matrix,
    ffn_mask: Option<Matrix>,
}

#[derive(Debug, Clone)]
pub struct ForwardCache {
    emb_mask: Option<Matrix>,
    maps: Vec<BlockMaps>,
    blocks: Vec<BlockCache>,
}

/// Loss and gradients of one sampled softmax term.
#[derive(Debug, Clone)]
pub struct SampledLoss {
    pub loss: f64,
    pub d_hidden: Vec<f64>,
    /// `(item, gradient)` for the true item followed by each negative.
    pub item_grads: Vec<(usize, Vec<f64>)>,
}

/// `X⁰[i] = E[vᵢ] + P[i]` for real positions, zero rows for padding.
pub fn embed(items: &[usize], params: &ModelParams) -> Result<Matrix> {
    let n = params.pos_emb.rows();
    let d = params.pos_emb.cols();
    let vocab = params.item_emb.rows();
    if items.len() != n {
        return Err(Error::Shape {
            op: "embed",
            lhs: (items.len(), 1),
            rhs: (n, d),
        });
    }
    let mut x = Matrix::zeros(n, d);
    for (i, &item) in items.iter().enumerate() {
        if item >= vocab {
            return Err(Error::Data(format!("item id {item} outside vocabulary of {vocab}")));
        }
        if item == PAD {
            continue;
        }
        let (e, p) = (params.item_emb.row(item), params.pos_emb.row(i));
        for ((o, a), b) in x.row_mut(i).iter_mut().zip(e).zip(p) {
            *o = a + b;
        }
    }
    Ok(x)
}

/// Builds the causal temporal and positional maps of one block.
pub fn block_maps(
    cfg: &ModelConfig,
    layer: &LayerParams,
    temporal: &RelativeTemporalMatrix,
    mask: Option<&SparseMask>,
) -> Result<BlockMaps> {
    let n = temporal.n();
    let a_ts = if cfg.temporal_channel {
        let p = layer.temporal(cfg);
        p.validate()?;
        let mut a = exp_power_attention(temporal, &p);
        a.causal_mask_in_place();
        a
    } else {
        Matrix::zeros(n, n)
    };
    let w_pos = if cfg.positional_channel {
        let w = materialize(&layer.positional(), n)?;
        match mask {
            Some(m) => apply_sparse_mask(&w, m)?,
            None => w,
        }
    } else {
        Matrix::zeros(n, n)
    };
    Ok(BlockMaps { a_ts, w_pos })
}

fn check_causal(maps: &BlockMaps) -> Result<()> {
    for m in [&maps.a_ts, &maps.w_pos] {
        for i in 0..m.rows() {
            if m.row(i)[i + 1..].iter().any(|&v| v != 0.0) {
                return Err(Error::Numeric(format!("attention map is not causal at row {i}")));
            }
        }
    }
    Ok(())
}

/// One dual-channel block followed by its SwiGLU FFN.
pub fn block_forward(x: &Matrix, layer: &LayerParams, maps: &BlockMaps) -> Result<Matrix> {
    Ok(block_forward_cached::<rand::rngs::ThreadRng>(x, layer, maps, None)?.0)
}

fn block_forward_cached<R: Rng + ?Sized>(
    x: &Matrix,
    layer: &LayerParams,
    maps: &BlockMaps,
    dropout: Option<&mut Dropout<'_, R>>,
) -> Result<(Matrix, BlockCache)> {
    let d = x.cols();
    if layer.w_uv.shape() != (d, 3 * d) || maps.a_ts.shape() != (x.rows(), x.rows()) {
        return Err(Error::Shape {
            op: "block_forward",
            lhs: x.shape(),
            rhs: maps.a_ts.shape(),
        });
    }
    debug_assert!(check_causal(maps).is_ok());

    let (xn, inv_attn) = rmsnorm_rows(x, layer.norm_attn.as_slice())?;
    let z = matmul(&xn, &layer.w_uv)?;
    let s = z.map(silu);
    let u = s.slice_cols(0, 2 * d);
    let v = s.slice_cols(2 * d, 3 * d);

    let av = matmul(&maps.a_ts, &v)?;
    let pv = matmul(&maps.w_pos, &v)?;
    let c = av.hconcat(&pv)?;
    let (cn, inv_mix) = rmsnorm_rows(&c, layer.norm_mix.as_slice())?;
    let inter = cn.hadamard(&u)?;

    let mut o = matmul(&inter, &layer.w_o)?;
    for i in 0..o.rows() {
        for ((ov, &b), &xv) in o.row_mut(i).iter_mut().zip(layer.bias.as_slice()).zip(x.row(i)) {
            *ov += b + xv;
        }
    }

    let (on, inv_ffn) = rmsnorm_rows(&o, layer.norm_ffn.as_slice())?;
    let z1 = matmul(&on, &layer.w1)?;
    let z2 = matmul(&on, &layer.w2)?;
    let mut ffn_hidden = z1.map(silu).hadamard(&z2)?;
    let ffn_mask = match dropout {
        Some(dr) => dr.mask(ffn_hidden.rows(), ffn_hidden.cols()),
        None => None,
    };
    if let Some(m) = &ffn_mask {
        ffn_hidden = ffn_hidden.hadamard(m)?;
    }
    let mut h = matmul(&ffn_hidden, &layer.w3)?;
    h.add_assign(&o)?;

    let cache = BlockCache {
        x: x.clone(),
        xn,
        inv_attn,
        z,
        u,
        v,
        c,
        cn,
        inv_mix,
        inter,
        o,
        on,
        inv_ffn,
        z1,
        z2,
        ffn_hidden,
        ffn_mask,
    };
    Ok((h, cache))
}

/// Lower triangle (incl. diagonal) of `a · bᵀ`.
fn causal_outer(a: &Matrix, b: &Matrix) -> Matrix {
    let n = a.rows();
    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        let ar = a.row(i);
        let row = out.row_mut(i);
        for (j, r) in row.iter_mut().enumerate().take(i + 1) {
            *r = dot(ar, b.row(j));
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn block_backward(
    cfg: &ModelConfig,
    layer: &LayerParams,
    cache: &BlockCache,
    maps: &BlockMaps,
    temporal: &RelativeTemporalMatrix,
    mask: Option<&SparseMask>,
    d_h: &Matrix,
    grads: &mut LayerParams,
) -> Result<Matrix> {
    let d = cache.x.cols();

    // FFN and its residual.
    let mut d_o = d_h.clone();
    grads.w3.add_assign(&matmul_tn(&cache.ffn_hidden, d_h)?)?;
    let mut d_hidden = matmul_nt(d_h, &layer.w3)?;
    if let Some(m) = &cache.ffn_mask {
        d_hidden = d_hidden.hadamard(m)?;
    }
    let mut d_z1 = Matrix::zeros(cache.z1.rows(), cache.z1.cols());
    let mut d_z2 = Matrix::zeros(cache.z2.rows(), cache.z2.cols());
    for k in 0..d_hidden.as_slice().len() {
        let g = d_hidden.as_slice()[k];
        let a = cache.z1.as_slice()[k];
        d_z1.as_mut_slice()[k] = g * cache.z2.as_slice()[k] * silu_grad(a);
        d_z2.as_mut_slice()[k] = g * silu(a);
    }
    grads.w1.add_assign(&matmul_tn(&cache.on, &d_z1)?)?;
    grads.w2.add_assign(&matmul_tn(&cache.on, &d_z2)?)?;
    let mut d_on = matmul_nt(&d_z1, &layer.w1)?;
    d_on.add_assign(&matmul_nt(&d_z2, &layer.w2)?)?;
    let (d_o_norm, d_gain_ffn) = rmsnorm_rows_backward(&cache.o, layer.norm_ffn.as_slice(), &cache.inv_ffn, &d_on);
    d_o.add_assign(&d_o_norm)?;
    add_to(&mut grads.norm_ffn, &d_gain_ffn);

    // Output projection and attention residual.
    let mut d_x = d_o.clone();
    grads.w_o.add_assign(&matmul_tn(&cache.inter, &d_o)?)?;
    let mut d_bias = vec![0.0; d];
    for i in 0..d_o.rows() {
        for (b, g) in d_bias.iter_mut().zip(d_o.row(i)) {
            *b += g;
        }
    }
    add_to(&mut grads.bias, &d_bias);
    let d_inter = matmul_nt(&d_o, &layer.w_o)?;

    // Hadamard mix with U.
    let d_cn = d_inter.hadamard(&cache.u)?;
    let d_u = d_inter.hadamard(&cache.cn)?;
    let (d_c, d_gain_mix) = rmsnorm_rows_backward(&cache.c, layer.norm_mix.as_slice(), &cache.inv_mix, &d_cn);
    add_to(&mut grads.norm_mix, &d_gain_mix);
    let d_av = d_c.slice_cols(0, d);
    let d_pv = d_c.slice_cols(d, 2 * d);

    let mut d_v = matmul_tn(&maps.a_ts, &d_av)?;
    d_v.add_assign(&matmul_tn(&maps.w_pos, &d_pv)?)?;

    if cfg.temporal_channel {
        let d_a = causal_outer(&d_av, &cache.v);
        let (d_alpha, d_beta) = exp_power_gradients(temporal, &layer.temporal(cfg), &d_a)?;
        grads.alpha.as_mut_slice()[0] += d_alpha;
        grads.beta.as_mut_slice()[0] += d_beta;
    }
    if cfg.positional_channel {
        let mut d_w = causal_outer(&d_pv, &cache.v);
        if let Some(m) = mask {
            d_w = apply_sparse_mask(&d_w, m)?;
        }
        add_to(&mut grads.pos, &toeplitz_gradient(&d_w));
    }

    // SiLU projection into U and V.
    let d_s = d_u.hconcat(&d_v)?;
    let d_z = Matrix::new(
        d_s.rows(),
        d_s.cols(),
        d_s.as_slice().iter().zip(cache.z.as_slice()).map(|(g, &z)| g * silu_grad(z)).collect(),
    )?;
    grads.w_uv.add_assign(&matmul_tn(&cache.xn, &d_z)?)?;
    let d_xn = matmul_nt(&d_z, &layer.w_uv)?;
    let (d_x_norm, d_gain_attn) = rmsnorm_rows_backward(&cache.x, layer.norm_attn.as_slice(), &cache.inv_attn, &d_xn);
    d_x.add_assign(&d_x_norm)?;
    add_to(&mut grads.norm_attn, &d_gain_attn);
    Ok(d_x)
}

fn add_to(m: &mut Matrix, g: &[f64]) {
    for (a, b) in m.as_mut_slice().iter_mut().zip(g) {
        *a += b;
    }
}

/// `scores = x · Eᵀ` with the padding item pushed to `−∞`.
pub fn predict_scores(x: &[f64], item_emb: &Matrix) -> Vec<f64> {
    let mut scores: Vec<f64> = (0..item_emb.rows()).map(|v| dot(x, item_emb.row(v))).collect();
    scores[PAD] = f64::NEG_INFINITY;
    scores
}

/// Probability over all real items.
pub fn predict_probabilities(x: &[f64], item_emb: &Matrix) -> Vec<f64> {
    softmax_row(&predict_scores(x, item_emb))
}

/// Cross-entropy over `{x·e_true} ∪ {x·e_neg}` with gradients for `x` and
/// every involved embedding row.
pub fn sampled_softmax_loss(x: &[f64], true_item: usize, negatives: &[usize], item_emb: &Matrix) -> Result<SampledLoss> {
    if true_item == PAD || true_item >= item_emb.rows() {
        return Err(Error::Data(format!("invalid target item {true_item}")));
    }
    if let Some(&bad) = negatives.iter().find(|&&v| v == PAD || v >= item_emb.rows()) {
        return Err(Error::Data(format!("invalid negative item {bad}")));
    }
    if negatives.contains(&true_item) {
        return Err(Error::Data(format!("negatives contain the true item {true_item}")));
    }
    let ids: Vec<usize> = std::iter::once(true_item).chain(negatives.iter().copied()).collect();
    let logits: Vec<f64> = ids.iter().map(|&v| dot(x, item_emb.row(v))).collect();
    let loss = log_sum_exp(&logits) - logits[0];
    let mut probs = softmax_row(&logits);
    probs[0] -= 1.0;
    let mut d_hidden = vec![0.0; x.len()];
    let mut item_grads = Vec::with_capacity(ids.len());
    for (&v, &g) in ids.iter().zip(&probs) {
        for (dh, e) in d_hidden.iter_mut().zip(item_emb.row(v)) {
            *dh += g * e;
        }
        item_grads.push((v, x.iter().map(|xv| g * xv).collect()));
    }
    Ok(SampledLoss {
        loss,
        d_hidden,
        item_grads,
    })
}

/// Config plus parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Recommender {
    pub config: ModelConfig,
    pub params: ModelParams,
}

impl Recommender {
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let params = ModelParams::init(&config, rng);
        Ok(Recommender { config, params })
    }

    pub fn from_parts(config: ModelConfig, params: ModelParams) -> Result<Self> {
        config.validate()?;
        params.check_shapes(&config)?;
        Ok(Recommender { config, params })
    }

    fn check_input(&self, input: &ModelInput<'_>, masks: Option<&[SparseMask]>) -> Result<()> {
        let n = self.config.max_len;
        if input.items.len() != n || input.temporal.n() != n {
            return Err(Error::Shape {
                op: "forward",
                lhs: (input.items.len(), input.temporal.n()),
                rhs: (n, n),
            });
        }
        if let Some(m) = masks {
            if m.len() != self.config.layers {
                return Err(Error::Config(format!(
                    "{} masks supplied for {} layers",
                    m.len(),
                    self.config.layers
                )));
            }
        }
        Ok(())
    }

    /// Per-position final hidden states (`n × d`). Inference mode.
    pub fn forward(&self, input: ModelInput<'_>, masks: Option<&[SparseMask]>) -> Result<Matrix> {
        Ok(self.forward_impl::<rand::rngs::ThreadRng>(input, masks, None)?.0)
    }

    /// Forward pass that keeps everything the backward pass needs. Dropout
    /// is active when `rng` is given.
    pub fn forward_train<R: Rng + ?Sized>(
        &self,
        input: ModelInput<'_>,
        masks: Option<&[SparseMask]>,
        rng: Option<&mut R>,
    ) -> Result<(Matrix, ForwardCache)> {
        self.forward_impl(input, masks, rng)
    }

    fn forward_impl<R: Rng + ?Sized>(
        &self,
        input: ModelInput<'_>,
        masks: Option<&[SparseMask]>,
        rng: Option<&mut R>,
    ) -> Result<(Matrix, ForwardCache)> {
        self.check_input(&input, masks)?;
        let mut dropout = rng.map(|rng| Dropout {
            rate: self.config.dropout,
            rng,
        });
        let mut x = embed(input.items, &self.params)?;
        let emb_mask = match dropout.as_mut() {
            Some(dr) => dr.mask(x.rows(), x.cols()),
            None => None,
        };
        if let Some(m) = &emb_mask {
            x = x.hadamard(m)?;
        }
        let mut maps = Vec::with_capacity(self.config.layers);
        let mut blocks = Vec::with_capacity(self.config.layers);
        for (l, layer) in self.params.layers.iter().enumerate() {
            let m = block_maps(&self.config, layer, input.temporal, masks.map(|m| &m[l]))?;
            let (h, cache) = block_forward_cached(&x, layer, &m, dropout.as_mut())?;
            maps.push(m);
            blocks.push(cache);
            x = h;
        }
        Ok((
            x,
            ForwardCache {
                emb_mask,
                maps,
                blocks,
            },
        ))
    }

    /// Accumulates parameter gradients for upstream `d_hidden` (`n × d`).
    pub fn backward(
        &self,
        input: ModelInput<'_>,
        masks: Option<&[SparseMask]>,
        cache: &ForwardCache,
        d_hidden: &Matrix,
        grads: &mut ModelParams,
    ) -> Result<()> {
        let mut d_x = d_hidden.clone();
        for l in (0..self.config.layers).rev() {
            d_x = block_backward(
                &self.config,
                &self.params.layers[l],
                &cache.blocks[l],
                &cache.maps[l],
                input.temporal,
                masks.map(|m| &m[l]),
                &d_x,
                &mut grads.layers[l],
            )?;
        }
        if let Some(m) = &cache.emb_mask {
            d_x = d_x.hadamard(m)?;
        }
        for (i, &item) in input.items.iter().enumerate() {
            if item == PAD {
                continue;
            }
            let g = d_x.row(i).to_vec();
            for (a, b) in grads.item_emb.row_mut(item).iter_mut().zip(&g) {
                *a += b;
            }
            for (a, b) in grads.pos_emb.row_mut(i).iter_mut().zip(&g) {
                *a += b;
            }
        }
        Ok(())
    }

    /// Summed sampled-softmax loss over every position with a target
    /// (`targets[i] != 0`), accumulating gradients into `grads`.
    /// Returns `(loss_sum, target_count)`.
    pub fn sequence_loss<R: Rng + ?Sized>(
        &self,
        input: ModelInput<'_>,
        masks: Option<&[SparseMask]>,
        targets: &[usize],
        negatives: &[Vec<usize>],
        dropout_rng: Option<&mut R>,
        grads: &mut ModelParams,
    ) -> Result<(f64, usize)> {
        if targets.len() != input.items.len() || negatives.len() != targets.len() {
            return Err(Error::Shape {
                op: "sequence_loss",
                lhs: (targets.len(), negatives.len()),
                rhs: (input.items.len(), input.items.len()),
            });
        }
        let (hidden, cache) = self.forward_train(input, masks, dropout_rng)?;
        let mut d_hidden = Matrix::zeros(hidden.rows(), hidden.cols());
        let mut total = 0.0;
        let mut count = 0;
        for (i, &target) in targets.iter().enumerate() {
            if target == PAD {
                continue;
            }
            let term = sampled_softmax_loss(hidden.row(i), target, &negatives[i], &self.params.item_emb)?;
            total += term.loss;
            count += 1;
            for (a, b) in d_hidden.row_mut(i).iter_mut().zip(&term.d_hidden) {
                *a += b;
            }
            for (item, g) in term.item_grads {
                for (a, b) in grads.item_emb.row_mut(item).iter_mut().zip(&g) {
                    *a += b;
                }
            }
        }
        self.backward(input, masks, &cache, &d_hidden, grads)?;
        Ok((total, count))
    }

    /// Scores over the whole vocabulary for the last real position.
    pub fn score_next(&self, input: ModelInput<'_>, masks: Option<&[SparseMask]>) -> Result<Vec<f64>> {
        let last = input
            .items
            .iter()
            .rposition(|&v| v != PAD)
            .ok_or_else(|| Error::Data("cannot score an all-padding sequence".into()))?;
        let hidden = self.forward(input, masks)?;
        Ok(predict_scores(hidden.row(last), &self.params.item_emb))
    }

    /// Dense materialized positional map of each layer, as used for pruning.
    pub fn positional_maps(&self) -> Result<Vec<Matrix>> {
        self.params
            .layers
            .iter()
            .map(|l| materialize(&l.positional(), self.config.max_len))
            .collect()
    }
}
