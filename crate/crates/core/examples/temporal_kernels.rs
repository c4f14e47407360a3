//! Prints the exponential-power kernel next to the bucket and inverse
//! baselines for a handful of intervals, and shows how `β` reshapes the
//! decay.
//!
//! ```text
//! cargo run --example temporal_kernels
//! ```

use decayrec::temporal::{
    bucket_attention_baseline, build_relative_matrix, exp_power_attention, interval_derivative,
    inverse_proportion_baseline, TemporalEncoderParams, DEFAULT_EPSILON, DEFAULT_INVERSE_OFFSET, DEFAULT_NUM_BUCKETS,
};

fn main() -> decayrec::Result<()> {
    let timestamps = [0, 30, 600, 3_600, 86_400, 7 * 86_400];
    let t = build_relative_matrix(&timestamps)?;
    let weights: Vec<f64> = (0..DEFAULT_NUM_BUCKETS).map(|b| 1.0 / (1.0 + b as f64)).collect();
    let bucket = bucket_attention_baseline(&t, DEFAULT_NUM_BUCKETS, &weights)?;
    let inverse = inverse_proportion_baseline(&t, 1.0, DEFAULT_INVERSE_OFFSET)?;

    let gamma = 0.999;
    let last = timestamps.len() - 1;
    println!("interval_s,beta0.3,beta0.5,beta1.0,bucket,inverse");
    let kernels: Vec<_> = [0.3, 0.5, 1.0]
        .iter()
        .map(|&beta| TemporalEncoderParams::new(1.0, beta, gamma, DEFAULT_EPSILON).map(|p| exp_power_attention(&t, &p)))
        .collect::<decayrec::Result<_>>()?;
    for j in 0..=last {
        println!(
            "{},{:.6},{:.6},{:.6},{:.6},{:.6}",
            t.values()[(last, j)],
            kernels[0][(last, j)],
            kernels[1][(last, j)],
            kernels[2][(last, j)],
            bucket[(last, j)],
            inverse[(last, j)]
        );
    }

    let p = TemporalEncoderParams::new(1.0, 0.5, gamma, DEFAULT_EPSILON)?;
    println!("slope at 1 min {:.3e}, at 1 day {:.3e}", interval_derivative(60.0, &p), interval_derivative(86_400.0, &p));
    Ok(())
}
