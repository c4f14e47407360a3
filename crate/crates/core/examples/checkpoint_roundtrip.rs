//! Saves a freshly initialised model, loads it back and confirms the
//! tensors and next-item scores are bit-identical.
//!
//! ```text
//! cargo run --example checkpoint_roundtrip -- [dir]
//! ```

use std::collections::BTreeMap;
use std::path::PathBuf;

use decayrec::model::{load_checkpoint, save_checkpoint, ModelConfig, ModelInput, Recommender};
use decayrec::temporal::build_relative_matrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> decayrec::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "checkpoint-demo".into()));
    let cfg = ModelConfig {
        max_len: 8,
        hidden: 8,
        ffn_hidden: 16,
        vocab: 30,
        ..ModelConfig::default()
    };
    let mut model = Recommender::new(cfg, &mut ChaCha8Rng::seed_from_u64(5))?;
    model.params.quantize_f32();
    let meta = BTreeMap::from([("note".to_string(), "example".to_string())]);
    save_checkpoint(&dir, &model, &meta)?;
    let loaded = load_checkpoint(&dir)?;

    let items = [3, 7, 7, 12, 0, 0, 0, 0];
    let t = build_relative_matrix(&[0, 40, 90, 5_000, 5_000, 5_000, 5_000, 5_000])?;
    let input = ModelInput {
        items: &items,
        temporal: &t,
    };
    let before = model.score_next(input, None)?;
    let after = loaded.model.score_next(input, None)?;
    println!("tensors identical: {}", loaded.model.params == model.params);
    println!("scores identical: {}", before == after);
    println!("metadata: {:?}", loaded.meta);
    Ok(())
}
