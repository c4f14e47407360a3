//! Trains a small model on a synthetic corpus, then reports test metrics
//! overall and per history-length group.
//!
//! ```text
//! cargo run --release --example train_eval -- [epochs] [run_dir]
//! ```

use std::path::PathBuf;

use decayrec::data::{split_leave_one_out, synth_generate, SynthConfig};
use decayrec::eval::{evaluate, EvalOptions, DEFAULT_LENGTH_BOUNDARIES, REPORT_CUTOFFS};
use decayrec::training::{train, RunConfig};

fn main() -> decayrec::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let synth = SynthConfig {
        users: 400,
        vocab: 80,
        ..SynthConfig::default()
    };
    let corpus = synth_generate(&synth)?;
    let split = split_leave_one_out(&corpus.dataset.sequences);
    let cfg = RunConfig {
        epochs: args.first().and_then(|s| s.parse().ok()).unwrap_or(10),
        max_len: 30,
        hidden: 24,
        ffn_hidden: 48,
        negatives: 40,
        ..RunConfig::default()
    };
    let run_dir = args.get(1).map(PathBuf::from);
    let outcome = train(&split, synth.vocab, &cfg, run_dir.as_deref(), |row| {
        println!("epoch {:>2} loss {:.4} valid hr10 {:.4} ndcg10 {:.4}", row.epoch, row.loss, row.hr10, row.ndcg10);
    })?;
    println!("best epoch {}", outcome.best_epoch);

    let test = evaluate(&outcome.model, &split.test, None, EvalOptions::default())?;
    print!("{}", test.to_csv(&REPORT_CUTOFFS)?);
    print!("{}", test.groups_to_csv(&DEFAULT_LENGTH_BOUNDARIES, 10)?);
    Ok(())
}
