//! Trains a small model, derives diagonal block masks from its positional
//! maps at several pruning ratios and reports block savings next to the
//! test NDCG@10 that survives.
//!
//! ```text
//! cargo run --release --example prune_positional -- [stride]
//! ```

use decayrec::data::{split_leave_one_out, synth_generate, SynthConfig};
use decayrec::eval::{evaluate, EvalOptions};
use decayrec::positional::{flops_count, generate_sparse_mask, SparseMask};
use decayrec::training::{train, RunConfig};

fn main() -> decayrec::Result<()> {
    let stride: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(4);
    let synth = SynthConfig {
        users: 400,
        vocab: 80,
        ..SynthConfig::default()
    };
    let corpus = synth_generate(&synth)?;
    let split = split_leave_one_out(&corpus.dataset.sequences);
    let cfg = RunConfig {
        epochs: 10,
        max_len: 32,
        hidden: 24,
        ffn_hidden: 48,
        negatives: 40,
        ..RunConfig::default()
    };
    let model = train(&split, synth.vocab, &cfg, None, |_| {})?.model;
    let dense = evaluate(&model, &split.test, None, EvalOptions::default())?.metrics(10)?.ndcg;
    println!("dense ndcg10 {dense:.4}");
    println!("tau,layer,kept_blocks,dense_blocks,reduction_percent,ndcg10,retained");

    let maps = model.positional_maps()?;
    for tau in [0.2, 0.4, 0.6, 0.8] {
        let masks: Vec<SparseMask> = maps
            .iter()
            .map(|w| generate_sparse_mask(w, stride, tau))
            .collect::<decayrec::Result<_>>()?;
        let ndcg = evaluate(&model, &split.test, Some(&masks), EvalOptions::default())?.metrics(10)?.ndcg;
        for (l, mask) in masks.iter().enumerate() {
            let r = flops_count(cfg.max_len, stride, mask)?;
            println!(
                "{tau},{l},{},{},{:.2},{ndcg:.4},{:.3}",
                r.kept_blocks,
                r.dense_blocks,
                r.reduction_percent,
                ndcg / dense
            );
        }
    }
    Ok(())
}
