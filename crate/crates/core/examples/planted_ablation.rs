//! Trains the full model and the temporal-channel ablation on the planted
//! synthetic corpus and compares test HR@10.
//!
//! ```text
//! cargo run --release --example planted_ablation -- [users] [epochs] [threads]
//! ```

use std::time::Instant;

use decayrec::data::{split_leave_one_out, synth_generate, SynthConfig};
use decayrec::eval::{evaluate, EvalOptions};
use decayrec::training::{train, RunConfig};

fn main() -> decayrec::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let arg = |i: usize, default: usize| args.get(i).and_then(|s| s.parse().ok()).unwrap_or(default);
    let synth = SynthConfig {
        users: arg(0, 2000),
        ..SynthConfig::default()
    };
    let corpus = synth_generate(&synth)?;
    let split = split_leave_one_out(&corpus.dataset.sequences);
    let base = RunConfig {
        epochs: arg(1, 20),
        threads: arg(2, 1),
        ..RunConfig::default()
    };
    let chance = 10.0 / (synth.vocab - 1) as f64;
    for (name, temporal) in [("full", true), ("no-temporal", false)] {
        let cfg = RunConfig {
            temporal_channel: temporal,
            ..base.clone()
        };
        let started = Instant::now();
        let out = train(&split, synth.vocab, &cfg, None, |row| {
            println!(
                "{name} epoch {:>2} loss {:.4} valid hr10 {:.4} ndcg10 {:.4} ({} ms)",
                row.epoch, row.loss, row.hr10, row.ndcg10, row.wall_ms
            );
        })?;
        let test = evaluate(&out.model, &split.test, None, EvalOptions::default())?.metrics(10)?;
        let alphas: Vec<String> = out
            .model
            .params
            .layers
            .iter()
            .map(|l| format!("alpha {:.3} beta {:.3}", l.alpha[(0, 0)], l.beta[(0, 0)]))
            .collect();
        println!(
            "{name}: test hr10 {:.4} ndcg10 {:.4} mrr {:.4} ({:.1}x chance) in {:.1}s [{}]",
            test.hr,
            test.ndcg,
            test.mrr,
            test.hr / chance,
            started.elapsed().as_secs_f64(),
            alphas.join("; ")
        );
    }
    Ok(())
}
