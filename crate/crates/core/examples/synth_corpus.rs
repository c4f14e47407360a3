//! Generates the planted synthetic corpus, writes it as a prepared
//! directory and checks the rule against the stored sequences.
//!
//! ```text
//! cargo run --release --example synth_corpus -- [out_dir] [users]
//! ```

use std::path::PathBuf;

use decayrec::data::{split_leave_one_out, synth_generate, Dataset, InteractionSequence, SynthConfig};

fn main() -> decayrec::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let out = PathBuf::from(args.first().map_or("synth-data", String::as_str));
    let cfg = SynthConfig {
        users: args.get(1).and_then(|s| s.parse().ok()).unwrap_or(500),
        ..SynthConfig::default()
    };
    let corpus = synth_generate(&cfg)?;
    corpus.dataset.save_dir(&out)?;
    let reloaded = Dataset::load_dir(&out)?;
    assert_eq!(reloaded.sequences, corpus.dataset.sequences);

    let (mut short, mut long, mut followed) = (0usize, 0usize, 0usize);
    for seq in &corpus.dataset.sequences {
        for k in 1..seq.items.len() {
            let history = InteractionSequence {
                user: seq.user,
                items: seq.items[..k].to_vec(),
                timestamps: seq.timestamps[..k].to_vec(),
            };
            if seq.timestamps[k] - seq.timestamps[k - 1] < corpus.rule.gap_threshold {
                short += 1;
            } else {
                long += 1;
            }
            followed += usize::from(corpus.rule.next_item(&history, seq.timestamps[k]) == seq.items[k]);
        }
    }
    let split = split_leave_one_out(&corpus.dataset.sequences);
    println!("wrote {} users to {}", corpus.dataset.sequences.len(), out.display());
    println!("transitions: {short} short-gap, {long} long-gap, {followed} follow the rule");
    println!(
        "split: {} train, {} valid, {} test cases",
        split.train.len(),
        split.valid.len(),
        split.test.len()
    );
    Ok(())
}
