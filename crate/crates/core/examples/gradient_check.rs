//! Compares analytic gradients of the full model against central finite
//! differences, with and without a positional mask.
//!
//! ```text
//! cargo run --release --example gradient_check -- [trials]
//! ```

use decayrec::model::{end_to_end_grad_check, perturbed_model, tiny_config, GradCheckCase};
use decayrec::positional::generate_sparse_mask;

fn main() -> decayrec::Result<()> {
    let trials: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(10);
    let cfg = tiny_config();
    let mut worst: f64 = 0.0;
    for seed in 0..trials {
        let model = perturbed_model(cfg.clone(), seed)?;
        let case = GradCheckCase::random(&cfg, seed + 1000)?;
        let dense = end_to_end_grad_check(&model, &case, None)?;
        let masks = model
            .positional_maps()?
            .iter()
            .map(|w| generate_sparse_mask(w, 2, 0.5))
            .collect::<decayrec::Result<Vec<_>>>()?;
        let sparse = end_to_end_grad_check(&model, &case, Some(&masks))?;
        println!("seed {seed}: dense {dense:.2e}, masked {sparse:.2e}");
        worst = worst.max(dense).max(sparse);
    }
    println!("worst relative error {worst:.2e}");
    Ok(())
}
