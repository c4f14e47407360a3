use rand::Rng;

use crate::error::{Error, Result};
use crate::numeric::Matrix;
use crate::positional::ToeplitzPositionalWeights;
use crate::temporal::TemporalEncoderParams;

use super::config::ModelConfig;

/// Standard deviation of the normal initializer for weights and embeddings.
pub const INIT_STD: f64 = 0.02;

/// Learned tensors of one dual-channel block.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    /// `d × 3d` joint projection producing `U` (first `2d`) and `V`.
    pub w_uv: Matrix,
    /// `2d × d` output projection.
    pub w_o: Matrix,
    /// `1 × d`.
    pub bias: Matrix,
    /// RMSNorm gains: attention input (`d`), channel mix (`2d`), FFN input (`d`).
    pub norm_attn: Matrix,
    pub norm_mix: Matrix,
    pub norm_ffn: Matrix,
    /// `1 × 1` each.
    pub alpha: Matrix,
    pub beta: Matrix,
    /// `1 × n` per-offset positional weights.
    pub pos: Matrix,
    pub w1: Matrix,
    pub w2: Matrix,
    pub w3: Matrix,
}

impl LayerParams {
    fn init<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Self {
        let (d, f, n) = (cfg.hidden, cfg.ffn_hidden, cfg.max_len);
        LayerParams {
            w_uv: Matrix::random_normal(d, 3 * d, INIT_STD, rng),
            w_o: Matrix::random_normal(2 * d, d, INIT_STD, rng),
            bias: Matrix::zeros(1, d),
            norm_attn: Matrix::filled(1, d, 1.0),
            norm_mix: Matrix::filled(1, 2 * d, 1.0),
            norm_ffn: Matrix::filled(1, d, 1.0),
            alpha: Matrix::filled(1, 1, 1.0),
            beta: Matrix::filled(1, 1, 1.0),
            pos: Matrix::random_normal(1, n, INIT_STD, rng),
            w1: Matrix::random_normal(d, f, INIT_STD, rng),
            w2: Matrix::random_normal(d, f, INIT_STD, rng),
            w3: Matrix::random_normal(f, d, INIT_STD, rng),
        }
    }

    pub fn temporal(&self, cfg: &ModelConfig) -> TemporalEncoderParams {
        TemporalEncoderParams {
            alpha: self.alpha[(0, 0)],
            beta: self.beta[(0, 0)],
            gamma: cfg.gamma,
            epsilon: cfg.epsilon,
        }
    }

    pub fn positional(&self) -> ToeplitzPositionalWeights {
        ToeplitzPositionalWeights::new(self.pos.as_slice().to_vec())
    }

    fn tensors(&self) -> [(&'static str, &Matrix); 12] {
        [
            ("w_uv", &self.w_uv),
            ("w_o", &self.w_o),
            ("bias", &self.bias),
            ("norm_attn", &self.norm_attn),
            ("norm_mix", &self.norm_mix),
            ("norm_ffn", &self.norm_ffn),
            ("alpha", &self.alpha),
            ("beta", &self.beta),
            ("pos", &self.pos),
            ("w1", &self.w1),
            ("w2", &self.w2),
            ("w3", &self.w3),
        ]
    }

    fn tensors_mut(&mut self) -> [(&'static str, &mut Matrix); 12] {
        [
            ("w_uv", &mut self.w_uv),
            ("w_o", &mut self.w_o),
            ("bias", &mut self.bias),
            ("norm_attn", &mut self.norm_attn),
            ("norm_mix", &mut self.norm_mix),
            ("norm_ffn", &mut self.norm_ffn),
            ("alpha", &mut self.alpha),
            ("beta", &mut self.beta),
            ("pos", &mut self.pos),
            ("w1", &mut self.w1),
            ("w2", &mut self.w2),
            ("w3", &mut self.w3),
        ]
    }
}

/// Every learned tensor of the network. Gradients use the same layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// `vocab × d`; row 0 is the padding item and stays zero.
    pub item_emb: Matrix,
    /// `n × d` absolute positional embeddings.
    pub pos_emb: Matrix,
    pub layers: Vec<LayerParams>,
}

pub const ITEM_EMB: &str = "item_emb";
pub const POS_EMB: &str = "pos_emb";

impl ModelParams {
    pub fn init<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Self {
        let mut item_emb = Matrix::random_normal(cfg.vocab, cfg.hidden, INIT_STD, rng);
        item_emb.row_mut(0).fill(0.0);
        let pos_emb = Matrix::random_normal(cfg.max_len, cfg.hidden, INIT_STD, rng);
        let layers = (0..cfg.layers).map(|_| LayerParams::init(cfg, rng)).collect();
        ModelParams {
            item_emb,
            pos_emb,
            layers,
        }
    }

    /// All-zero tensors in the layout `cfg` describes.
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let (d, f, n) = (cfg.hidden, cfg.ffn_hidden, cfg.max_len);
        let layer = LayerParams {
            w_uv: Matrix::zeros(d, 3 * d),
            w_o: Matrix::zeros(2 * d, d),
            bias: Matrix::zeros(1, d),
            norm_attn: Matrix::zeros(1, d),
            norm_mix: Matrix::zeros(1, 2 * d),
            norm_ffn: Matrix::zeros(1, d),
            alpha: Matrix::zeros(1, 1),
            beta: Matrix::zeros(1, 1),
            pos: Matrix::zeros(1, n),
            w1: Matrix::zeros(d, f),
            w2: Matrix::zeros(d, f),
            w3: Matrix::zeros(f, d),
        };
        ModelParams {
            item_emb: Matrix::zeros(cfg.vocab, d),
            pos_emb: Matrix::zeros(n, d),
            layers: vec![layer; cfg.layers],
        }
    }

    /// Same shapes, all zeros.
    pub fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        out.for_each_mut(|_, m| m.as_mut_slice().fill(0.0));
        out
    }

    /// Tensors in canonical order with stable names such as `layers.1.w_uv`.
    pub fn tensors(&self) -> Vec<(String, &Matrix)> {
        let mut out = vec![(ITEM_EMB.to_string(), &self.item_emb), (POS_EMB.to_string(), &self.pos_emb)];
        for (l, layer) in self.layers.iter().enumerate() {
            out.extend(layer.tensors().into_iter().map(|(name, m)| (format!("layers.{l}.{name}"), m)));
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Matrix)> {
        let mut out = vec![
            (ITEM_EMB.to_string(), &mut self.item_emb),
            (POS_EMB.to_string(), &mut self.pos_emb),
        ];
        for (l, layer) in self.layers.iter_mut().enumerate() {
            out.extend(layer.tensors_mut().into_iter().map(|(name, m)| (format!("layers.{l}.{name}"), m)));
        }
        out
    }

    pub fn for_each(&self, mut f: impl FnMut(&str, &Matrix)) {
        for (name, m) in self.tensors() {
            f(&name, m);
        }
    }

    pub fn for_each_mut(&mut self, mut f: impl FnMut(&str, &mut Matrix)) {
        for (name, m) in self.tensors_mut() {
            f(&name, m);
        }
    }

    /// Pairs each tensor with the same-named tensor of `other`.
    pub fn zip_mut(&mut self, other: &ModelParams, mut f: impl FnMut(&str, &mut Matrix, &Matrix)) {
        for ((name, mine), (_, theirs)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            f(&name, mine, theirs);
        }
    }

    pub fn names(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.for_each(|name, _| out.push(name.to_string()));
        out
    }

    pub fn add_assign(&mut self, other: &ModelParams) {
        self.zip_mut(other, |_, a, b| {
            for (x, y) in a.as_mut_slice().iter_mut().zip(b.as_slice()) {
                *x += y;
            }
        });
    }

    pub fn scale(&mut self, k: f64) {
        self.for_each_mut(|_, m| m.as_mut_slice().iter_mut().for_each(|v| *v *= k));
    }

    /// First tensor holding a NaN or infinity, if any.
    pub fn first_non_finite(&self) -> Option<String> {
        let mut bad = None;
        self.for_each(|name, m| {
            if bad.is_none() && !m.is_finite() {
                bad = Some(name.to_string());
            }
        });
        bad
    }

    /// Rounds every value to the nearest `f32`, matching what a checkpoint
    /// can hold.
    pub fn quantize_f32(&mut self) {
        self.for_each_mut(|_, m| m.as_mut_slice().iter_mut().for_each(|v| *v = *v as f32 as f64));
    }

    pub fn check_shapes(&self, cfg: &ModelConfig) -> Result<()> {
        let reference = ModelParams::shapes(cfg);
        let mut actual = Vec::new();
        self.for_each(|name, m| actual.push((name.to_string(), m.shape())));
        if reference != actual {
            return Err(Error::Config(format!(
                "parameter layout does not match config (expected {} tensors, found {})",
                reference.len(),
                actual.len()
            )));
        }
        Ok(())
    }

    /// Expected `(name, shape)` list for a config.
    pub fn shapes(cfg: &ModelConfig) -> Vec<(String, (usize, usize))> {
        let (d, f, n) = (cfg.hidden, cfg.ffn_hidden, cfg.max_len);
        let mut out = vec![(ITEM_EMB.to_string(), (cfg.vocab, d)), (POS_EMB.to_string(), (n, d))];
        for l in 0..cfg.layers {
            for (name, shape) in [
                ("w_uv", (d, 3 * d)),
                ("w_o", (2 * d, d)),
                ("bias", (1, d)),
                ("norm_attn", (1, d)),
                ("norm_mix", (1, 2 * d)),
                ("norm_ffn", (1, d)),
                ("alpha", (1, 1)),
                ("beta", (1, 1)),
                ("pos", (1, n)),
                ("w1", (d, f)),
                ("w2", (d, f)),
                ("w3", (f, d)),
            ] {
                out.push((format!("layers.{l}.{name}"), shape));
            }
        }
        out
    }
}
