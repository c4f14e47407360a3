//! Times the f32 temporal encoders on random interval matrices and writes
//! the result rows as CSV.
//!
//! ```text
//! cargo run --release --example encoder_bench -- [n] [batch]
//! ```

use decayrec::bench::{bench_temporal_point, median_of, results_csv, Timing};

fn main() -> decayrec::Result<()> {
    let args: Vec<usize> = std::env::args().skip(1).filter_map(|s| s.parse().ok()).collect();
    let n = args.first().copied().unwrap_or(512);
    let batch = args.get(1).copied().unwrap_or(4);
    let rows = bench_temporal_point(n, batch, Timing::default(), false, 1)?;
    print!("{}", results_csv(&rows));
    if let (Some(exp), Some(bucket), Some(inverse)) = (
        median_of(&rows, "exp_power", n, batch),
        median_of(&rows, "bucket", n, batch),
        median_of(&rows, "inverse", n, batch),
    ) {
        println!("bucket/exp {:.2}x, exp/inverse {:.2}x", bucket / exp, exp / inverse);
    }
    Ok(())
}
