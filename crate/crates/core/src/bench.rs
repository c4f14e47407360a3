//! Latency harness: temporal encoders over batches of interval matrices,
//! the pre-conversion ablation, model forward/backward steps and dense
//! versus diagonal-sparse positional products.
//!
//! Every kernel is checked against its 64-bit reference in the same
//! process before it is timed.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::hint::black_box;
use std::time::Instant;

use rand::rngs::ThreadRng;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{
    end_to_end_grad_check, perturbed_model, tiny_config, GradCheckCase, ModelConfig, ModelInput, PAD,
};
use crate::numeric::Matrix;
use crate::positional::{
    apply_sparse_mask, flops_count, generate_sparse_mask, materialize, BlockSparsePlan, SparseMask,
    ToeplitzPositionalWeights,
};
use crate::temporal::{
    bucket_attention_baseline, bucket_index, exp_power_attention, inverse_proportion_baseline, RelativeTemporalMatrix,
    TemporalEncoderParams, BUCKET_UNIT_SECONDS, DEFAULT_INVERSE_OFFSET, DEFAULT_NUM_BUCKETS,
};

pub const MIN_WARMUPS: usize = 5;
pub const MIN_REPETITIONS: usize = 30;

/// Warmup and measured iteration counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Timing {
    pub warmups: usize,
    pub repetitions: usize,
}

impl Default for Timing {
    fn default() -> Self {
        Timing {
            warmups: MIN_WARMUPS,
            repetitions: MIN_REPETITIONS,
        }
    }
}

impl Timing {
    pub fn validate(&self) -> Result<()> {
        if self.warmups < MIN_WARMUPS || self.repetitions < MIN_REPETITIONS {
            return Err(Error::Config(format!(
                "timing needs >= {MIN_WARMUPS} warmups and >= {MIN_REPETITIONS} repetitions, got {} and {}",
                self.warmups, self.repetitions
            )));
        }
        Ok(())
    }
}

/// Median and 90th percentile of a set of durations in milliseconds.
pub fn summarize(samples: &[f64]) -> (f64, f64) {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let pick = |q: f64| {
        let pos = q * (s.len() - 1) as f64;
        let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
        s[lo] + (s[hi] - s[lo]) * (pos - lo as f64)
    };
    (pick(0.5), pick(0.9))
}

/// Runs `f` `warmups` times untimed, then `repetitions` timed runs.
pub fn measure(timing: Timing, mut f: impl FnMut()) -> (f64, f64) {
    for _ in 0..timing.warmups {
        f();
    }
    let samples: Vec<f64> = (0..timing.repetitions)
        .map(|_| {
            let start = Instant::now();
            f();
            start.elapsed().as_secs_f64() * 1e3
        })
        .collect();
    summarize(&samples)
}

/// One timed case.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchResult {
    pub case: String,
    pub n: usize,
    pub batch: usize,
    pub repetitions: usize,
    pub warmups: usize,
    pub median_ms: f64,
    pub p90_ms: f64,
    pub flops_reduction: Option<f64>,
}

pub const CSV_HEADER: &str = "case,n,batch,median_ms,p90_ms,flops_reduction";

pub fn results_csv(results: &[BenchResult]) -> String {
    let mut out = format!("{CSV_HEADER}\n");
    for r in results {
        let fr = r.flops_reduction.map_or(String::new(), |v| format!("{v:.4}"));
        let _ = writeln!(out, "{},{},{},{:.6},{:.6},{fr}", r.case, r.n, r.batch, r.median_ms, r.p90_ms);
    }
    out
}

pub fn parse_results_csv(text: &str) -> Result<Vec<BenchResult>> {
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    if header != CSV_HEADER {
        return Err(Error::Data(format!("bench CSV header must be {CSV_HEADER:?}, got {header:?}")));
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, line)| {
            let bad = || Error::Data(format!("bench CSV line {}: {line:?}", i + 2));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 {
                return Err(bad());
            }
            Ok(BenchResult {
                case: f[0].to_string(),
                n: f[1].parse().map_err(|_| bad())?,
                batch: f[2].parse().map_err(|_| bad())?,
                repetitions: 0,
                warmups: 0,
                median_ms: f[3].parse().map_err(|_| bad())?,
                p90_ms: f[4].parse().map_err(|_| bad())?,
                flops_reduction: if f[5].is_empty() {
                    None
                } else {
                    Some(f[5].parse().map_err(|_| bad())?)
                },
            })
        })
        .collect()
}

#[inline(always)]
fn exp2_fast(x: f32) -> f32 {
    let x = x.clamp(-126.0, 126.0);
    const ROUND: f32 = 12_582_912.0;
    let shifted = x + ROUND;
    let whole = shifted - ROUND;
    let f = x - whole;
    let exponent = shifted.to_bits().wrapping_sub(ROUND.to_bits()) as i32;
    let p = f.mul_add(0.000_154_035_3, 0.001_333_355_8);
    let p = f.mul_add(p, 0.009_618_129);
    let p = f.mul_add(p, 0.055_504_11);
    let p = f.mul_add(p, 0.240_226_5);
    let p = f.mul_add(p, std::f32::consts::LN_2);
    let p = f.mul_add(p, 1.0);
    f32::from_bits((exponent.wrapping_add(127) << 23) as u32) * p
}

#[inline(always)]
fn log2_fast(x: f32) -> f32 {
    let bits = x.to_bits();
    let exponent = ((bits >> 23) & 0xff) as i32 - 127;
    let m = f32::from_bits((bits & 0x007f_ffff) | 0x3f80_0000);
    let t = (m - 1.0) / (m + 1.0);
    let t2 = t * t;
    let p = t2.mul_add(0.320_583, 0.412_198_6);
    let p = t2.mul_add(p, 0.577_078);
    let p = t2.mul_add(p, 0.961_796_7);
    let p = t2.mul_add(p, 2.885_39);
    t.mul_add(p, exponent as f32)
}

/// `f32` parameters of the exponential-power kernel, pre-transformed for
/// base-2 evaluation.
#[derive(Debug, Clone, Copy)]
pub struct ExpPowerF32 {
    alpha: f32,
    beta: f32,
    log2_gamma: f32,
    epsilon: f32,
}

impl ExpPowerF32 {
    pub fn new(p: &TemporalEncoderParams) -> Self {
        ExpPowerF32 {
            alpha: p.alpha as f32,
            beta: p.beta as f32,
            log2_gamma: p.gamma.log2() as f32,
            epsilon: p.epsilon as f32,
        }
    }
}

#[inline(always)]
fn exp_power_one(x: f32, p: ExpPowerF32) -> f32 {
    p.alpha * exp2_fast(p.log2_gamma * exp2_fast(p.beta * log2_fast(x + p.epsilon)))
}

fn exp_power_scalar(t: &[f32], p: ExpPowerF32, out: &mut [f32]) {
    for (o, &x) in out.iter_mut().zip(t) {
        *o = exp_power_one(x, p);
    }
}

/// 16-lane version of [`exp_power_one`] with the same operation order, so
/// both paths produce identical bits.
#[cfg(target_arch = "x86_64")]
mod wide {
    use std::arch::x86_64::*;

    use super::{exp_power_one, ExpPowerF32};

    const ROUND: f32 = 12_582_912.0;

    #[inline]
    #[target_feature(enable = "avx512f")]
    fn exp2(x: __m512) -> __m512 {
        let x = _mm512_min_ps(_mm512_max_ps(x, _mm512_set1_ps(-126.0)), _mm512_set1_ps(126.0));
        let shifted = _mm512_add_ps(x, _mm512_set1_ps(ROUND));
        let whole = _mm512_sub_ps(shifted, _mm512_set1_ps(ROUND));
        let f = _mm512_sub_ps(x, whole);
        let exponent = _mm512_sub_epi32(_mm512_castps_si512(shifted), _mm512_set1_epi32(ROUND.to_bits() as i32));
        let mut q = _mm512_fmadd_ps(f, _mm512_set1_ps(0.000_154_035_3), _mm512_set1_ps(0.001_333_355_8));
        for c in [0.009_618_129, 0.055_504_11, 0.240_226_5, std::f32::consts::LN_2, 1.0] {
            q = _mm512_fmadd_ps(f, q, _mm512_set1_ps(c));
        }
        let scale = _mm512_castsi512_ps(_mm512_slli_epi32::<23>(_mm512_add_epi32(exponent, _mm512_set1_epi32(127))));
        _mm512_mul_ps(scale, q)
    }

    #[inline]
    #[target_feature(enable = "avx512f")]
    fn log2(x: __m512) -> __m512 {
        let bits = _mm512_castps_si512(x);
        let exponent = _mm512_sub_epi32(
            _mm512_and_si512(_mm512_srli_epi32::<23>(bits), _mm512_set1_epi32(0xff)),
            _mm512_set1_epi32(127),
        );
        let m = _mm512_castsi512_ps(_mm512_or_si512(
            _mm512_and_si512(bits, _mm512_set1_epi32(0x007f_ffff)),
            _mm512_set1_epi32(0x3f80_0000),
        ));
        let one = _mm512_set1_ps(1.0);
        let t = _mm512_div_ps(_mm512_sub_ps(m, one), _mm512_add_ps(m, one));
        let t2 = _mm512_mul_ps(t, t);
        let mut q = _mm512_fmadd_ps(t2, _mm512_set1_ps(0.320_583), _mm512_set1_ps(0.412_198_6));
        for c in [0.577_078, 0.961_796_7, 2.885_39] {
            q = _mm512_fmadd_ps(t2, q, _mm512_set1_ps(c));
        }
        _mm512_fmadd_ps(t, q, _mm512_cvtepi32_ps(exponent))
    }

    #[target_feature(enable = "avx512f")]
    fn exp_power(t: &[f32], p: ExpPowerF32, out: &mut [f32]) {
        let len = t.len().min(out.len());
        let (t, out) = (&t[..len], &mut out[..len]);
        let alpha = _mm512_set1_ps(p.alpha);
        let beta = _mm512_set1_ps(p.beta);
        let log2_gamma = _mm512_set1_ps(p.log2_gamma);
        let epsilon = _mm512_set1_ps(p.epsilon);
        let mut chunks = out.chunks_exact_mut(16);
        for (o, x) in (&mut chunks).zip(t.chunks_exact(16)) {
            let x: [f32; 16] = x.try_into().expect("16-lane chunk");
            // SAFETY: `__m512` and `[f32; 16]` have the same size and every
            // bit pattern is valid for both.
            let x: __m512 = unsafe { std::mem::transmute(x) };
            let inner = exp2(_mm512_mul_ps(beta, log2(_mm512_add_ps(x, epsilon))));
            let y = _mm512_mul_ps(alpha, exp2(_mm512_mul_ps(log2_gamma, inner)));
            o.copy_from_slice(&unsafe { std::mem::transmute::<__m512, [f32; 16]>(y) });
        }
        let done = len - chunks.into_remainder().len();
        for (o, &x) in out[done..].iter_mut().zip(&t[done..]) {
            *o = exp_power_one(x, p);
        }
    }

    pub fn run(t: &[f32], p: ExpPowerF32, out: &mut [f32]) -> bool {
        if !(is_x86_feature_detected!("avx512f") && is_x86_feature_detected!("fma")) {
            return false;
        }
        // SAFETY: the required CPU features were detected above.
        unsafe { exp_power(t, p, out) };
        true
    }
}

/// `out = α·γ^((t+ε)^β)` over a flat batch of interval matrices. Uses
/// 16-lane AVX-512 when the CPU has it.
pub fn exp_power_f32(t: &[f32], p: ExpPowerF32, out: &mut [f32]) {
    #[cfg(target_arch = "x86_64")]
    if wide::run(t, p, out) {
        return;
    }
    exp_power_scalar(t, p, out);
}

/// The same kernel fed integer intervals: each call first materializes an
/// `f32` copy, as happens when the interval matrix is kept as `i64`.
pub fn exp_power_from_i64(t: &[i64], p: ExpPowerF32, scratch: &mut Vec<f32>, out: &mut [f32]) {
    scratch.clear();
    scratch.extend(t.iter().map(|&x| x as f32));
    exp_power_f32(scratch, p, out);
}

/// Bucket lookup: a pass computing `min(B−1, ⌊log₂(1 + t/unit)⌋)` into an
/// index buffer, then a gather from the weight table.
pub fn bucket_lookup_f32(t: &[f32], weights: &[f32], index: &mut [u32], out: &mut [f32]) {
    const ROUND: f32 = 12_582_912.0;
    let last = (weights.len() - 1) as f32;
    let inv_unit = 1.0 / BUCKET_UNIT_SECONDS as f32;
    for (k, &x) in index.iter_mut().zip(t) {
        let l = log2_fast(1.0 + x * inv_unit);
        let r = (l + ROUND) - ROUND;
        let floor = if r > l { r - 1.0 } else { r };
        let floor = floor.clamp(0.0, last);
        *k = (floor + ROUND).to_bits().wrapping_sub(ROUND.to_bits());
    }
    for (o, &k) in out.iter_mut().zip(index.iter()) {
        *o = weights[k as usize];
    }
}

/// `out = a / (t + c)`.
pub fn inverse_f32(t: &[f32], a: f32, c: f32, out: &mut [f32]) {
    for (o, &x) in out.iter_mut().zip(t) {
        *o = a / (x + c);
    }
}

/// A batch of interval matrices in both storage types.
pub struct IntervalBatch {
    pub n: usize,
    pub batch: usize,
    pub as_f32: Vec<f32>,
    pub as_i64: Vec<i64>,
    pub matrices: Vec<RelativeTemporalMatrix>,
}

/// Random increasing timestamps with a mix of short and long gaps.
pub fn random_intervals(n: usize, batch: usize, seed: u64) -> Result<IntervalBatch> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut as_f32 = Vec::with_capacity(n * n * batch);
    let mut as_i64 = Vec::with_capacity(n * n * batch);
    let mut matrices = Vec::with_capacity(batch);
    for _ in 0..batch {
        let mut t = 0_i64;
        let stamps: Vec<i64> = (0..n)
            .map(|_| {
                t += if rng.random_bool(0.3) {
                    rng.random_range(3_600..864_000)
                } else {
                    rng.random_range(0..600)
                };
                t
            })
            .collect();
        for &ti in &stamps {
            for &tj in &stamps {
                let d = (ti - tj).abs();
                as_i64.push(d);
                as_f32.push(d as f32);
            }
        }
        matrices.push(crate::temporal::build_relative_matrix(&stamps)?);
    }
    Ok(IntervalBatch {
        n,
        batch,
        as_f32,
        as_i64,
        matrices,
    })
}

/// Largest allowed relative deviation of the fast kernels from the 64-bit
/// references.
pub const KERNEL_TOLERANCE: f64 = 1e-4;

fn bucket_weights() -> Vec<f32> {
    (0..DEFAULT_NUM_BUCKETS).map(|k| 1.0 / (1.0 + k as f32)).collect()
}

fn bench_params() -> TemporalEncoderParams {
    TemporalEncoderParams {
        alpha: 1.0,
        beta: 0.4,
        gamma: 0.8,
        epsilon: 1e-6,
    }
}

/// Compares every benchmarked encoder with its reference on `input`.
pub fn verify_encoders(input: &IntervalBatch) -> Result<()> {
    let p = bench_params();
    let fast = ExpPowerF32::new(&p);
    let weights = bucket_weights();
    let weights64: Vec<f64> = weights.iter().map(|&w| w as f64).collect();
    let nn = input.n * input.n;
    let mut out = vec![0f32; nn];
    let mut scratch = Vec::new();
    let mut index = vec![0u32; nn];
    for (b, t) in input.matrices.iter().enumerate() {
        let slice = &input.as_f32[b * nn..(b + 1) * nn];
        let check = |name: &str, got: &[f32], want: &Matrix, exact_bucket: bool| -> Result<()> {
            for (k, (&g, &w)) in got.iter().zip(want.as_slice()).enumerate() {
                if !g.is_finite() {
                    return Err(Error::Numeric(format!("{name}: non-finite output at {k}")));
                }
                let ok = if exact_bucket {
                    g as f64 == w || {
                        let x = slice[k] as f64 / BUCKET_UNIT_SECONDS;
                        let l = (1.0 + x).log2();
                        (l - l.round()).abs() < 1e-4
                    }
                } else {
                    (g as f64 - w).abs() <= KERNEL_TOLERANCE * w.abs().max(1e-30)
                };
                if !ok {
                    return Err(Error::Numeric(format!("{name}: entry {k} is {g}, reference {w}")));
                }
            }
            Ok(())
        };
        exp_power_f32(slice, fast, &mut out);
        let reference = exp_power_attention(t, &p);
        check("exp_power", &out, &reference, false)?;
        exp_power_from_i64(&input.as_i64[b * nn..(b + 1) * nn], fast, &mut scratch, &mut out);
        check("exp_power_i64", &out, &reference, false)?;
        bucket_lookup_f32(slice, &weights, &mut index, &mut out);
        check("bucket", &out, &bucket_attention_baseline(t, DEFAULT_NUM_BUCKETS, &weights64)?, true)?;
        for (k, &i) in index.iter().enumerate() {
            let want = bucket_index(slice[k] as f64, DEFAULT_NUM_BUCKETS);
            if i as usize != want && weights[i as usize] != weights[want] {
                return Err(Error::Numeric(format!("bucket index {i} != {want} at {k}")));
            }
        }
        inverse_f32(slice, 1.0, DEFAULT_INVERSE_OFFSET as f32, &mut out);
        check("inverse", &out, &inverse_proportion_baseline(t, 1.0, DEFAULT_INVERSE_OFFSET)?, false)?;
    }
    Ok(())
}

/// Names of the temporal encoder cases.
pub const ENCODER_CASES: [&str; 4] = ["exp_power", "exp_power_i64", "bucket", "inverse"];

/// Times each encoder on one `(n, batch)` point. Kernels run over the
/// whole batch buffer; with `parallel`, batch elements run on the rayon
/// pool.
pub fn bench_temporal_point(n: usize, batch: usize, timing: Timing, parallel: bool, seed: u64) -> Result<Vec<BenchResult>> {
    timing.validate()?;
    let input = random_intervals(n, batch, seed)?;
    verify_encoders(&input)?;
    let p = ExpPowerF32::new(&bench_params());
    let weights = bucket_weights();
    let nn = n * n;
    let total = nn * batch;
    let mut out = vec![0f32; total];
    let mut index = vec![0u32; total];
    let mut scratch = Vec::with_capacity(total);
    let suffix = if parallel { "_parallel" } else { "" };
    let mut results = Vec::new();
    for case in ENCODER_CASES {
        let (median_ms, p90_ms) = match (case, parallel) {
            ("exp_power", false) => measure(timing, || exp_power_f32(black_box(&input.as_f32), p, &mut out)),
            ("exp_power_i64", false) => measure(timing, || {
                exp_power_from_i64(black_box(&input.as_i64), p, &mut scratch, &mut out)
            }),
            ("bucket", false) => measure(timing, || {
                bucket_lookup_f32(black_box(&input.as_f32), &weights, &mut index, &mut out)
            }),
            ("inverse", false) => measure(timing, || inverse_f32(black_box(&input.as_f32), 1.0, 1.0, &mut out)),
            ("exp_power", true) => measure(timing, || {
                out.par_chunks_mut(nn)
                    .zip(input.as_f32.par_chunks(nn))
                    .for_each(|(o, t)| exp_power_f32(t, p, o))
            }),
            ("exp_power_i64", true) => measure(timing, || {
                out.par_chunks_mut(nn).zip(input.as_i64.par_chunks(nn)).for_each(|(o, t)| {
                    let mut s = Vec::with_capacity(nn);
                    exp_power_from_i64(t, p, &mut s, o)
                })
            }),
            ("bucket", true) => measure(timing, || {
                out.par_chunks_mut(nn)
                    .zip(index.par_chunks_mut(nn))
                    .zip(input.as_f32.par_chunks(nn))
                    .for_each(|((o, i), t)| bucket_lookup_f32(t, &weights, i, o))
            }),
            ("inverse", true) => measure(timing, || {
                out.par_chunks_mut(nn)
                    .zip(input.as_f32.par_chunks(nn))
                    .for_each(|(o, t)| inverse_f32(t, 1.0, 1.0, o))
            }),
            _ => unreachable!(),
        };
        black_box(&out);
        results.push(BenchResult {
            case: format!("{case}{suffix}"),
            n,
            batch,
            repetitions: timing.repetitions,
            warmups: timing.warmups,
            median_ms,
            p90_ms,
            flops_reduction: None,
        });
    }
    Ok(results)
}

/// Sequence-length sweep at a fixed batch plus a batch sweep at a fixed
/// length.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemporalGrid {
    pub lengths: Vec<usize>,
    pub length_batch: usize,
    pub batches: Vec<usize>,
    pub batch_length: usize,
}

impl Default for TemporalGrid {
    fn default() -> Self {
        TemporalGrid {
            lengths: vec![128, 256, 512, 1000],
            length_batch: 8,
            batches: vec![1, 2, 4, 8, 16],
            batch_length: 256,
        }
    }
}

pub fn bench_temporal(grid: &TemporalGrid, timing: Timing, parallel: bool, seed: u64) -> Result<Vec<BenchResult>> {
    let mut points: Vec<(usize, usize)> = grid.lengths.iter().map(|&n| (n, grid.length_batch)).collect();
    for &b in &grid.batches {
        if !points.contains(&(grid.batch_length, b)) {
            points.push((grid.batch_length, b));
        }
    }
    let mut out = Vec::new();
    for (n, b) in points {
        out.extend(bench_temporal_point(n, b, timing, parallel, seed)?);
    }
    Ok(out)
}

/// Random Toeplitz positional map and its mask at ratio `tau`.
pub fn positional_fixture(n: usize, stride: usize, tau: f64, seed: u64) -> Result<(Matrix, SparseMask)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let dense = materialize(&ToeplitzPositionalWeights::new(w), n)?;
    let mask = generate_sparse_mask(&dense, stride, tau)?;
    Ok((apply_sparse_mask(&dense, &mask)?, mask))
}

/// Dense versus mask-skipping positional mat-vec at one `(n, s, τ)`.
/// Both go through the same block loop; the dense plan keeps every
/// causal block. Block counts are checked against [`flops_count`] first.
pub fn bench_positional_matvec(n: usize, stride: usize, tau: f64, timing: Timing, seed: u64) -> Result<Vec<BenchResult>> {
    timing.validate()?;
    let (w, mask) = positional_fixture(n, stride, tau, seed)?;
    let dense_mask = SparseMask::empty(n, stride)?;
    let dense = BlockSparsePlan::new(&dense_mask);
    let sparse = BlockSparsePlan::new(&mask);
    let report = flops_count(n, stride, &mask)?;
    if sparse.block_count() != report.kept_blocks || dense.block_count() != report.dense_blocks {
        return Err(Error::Numeric(format!(
            "plan visits {}/{} blocks, FLOPs accounting predicts {}/{}",
            sparse.block_count(),
            dense.block_count(),
            report.kept_blocks,
            report.dense_blocks
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
    let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let (mut a, mut b) = (vec![0.0; n], vec![0.0; n]);
    dense.matvec(w.as_slice(), &x, &mut a);
    sparse.matvec(w.as_slice(), &x, &mut b);
    let diff = a.iter().zip(&b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
    if diff > 1e-9 {
        return Err(Error::Numeric(format!("sparse mat-vec deviates from dense by {diff}")));
    }
    let (dm, dp) = measure(timing, || dense.matvec(black_box(w.as_slice()), &x, &mut a));
    let (sm, sp) = measure(timing, || sparse.matvec(black_box(w.as_slice()), &x, &mut b));
    let row = |case: &str, median_ms, p90_ms, fr| BenchResult {
        case: case.to_string(),
        n,
        batch: 1,
        repetitions: timing.repetitions,
        warmups: timing.warmups,
        median_ms,
        p90_ms,
        flops_reduction: fr,
    };
    Ok(vec![
        row("pos_dense_matvec", dm, dp, Some(0.0)),
        row(&format!("pos_sparse_matvec_tau{tau:.2}"), sm, sp, Some(report.reduction_percent)),
    ])
}

/// Counted block reduction and sparse mat-vec latency across pruning ratios.
pub fn bench_sparsity_sweep(n: usize, stride: usize, taus: &[f64], timing: Timing, seed: u64) -> Result<Vec<BenchResult>> {
    let mut out = Vec::new();
    for (k, &tau) in taus.iter().enumerate() {
        let rows = bench_positional_matvec(n, stride, tau, timing, seed)?;
        if k == 0 {
            out.push(rows[0].clone());
        }
        out.push(rows[1].clone());
    }
    Ok(out)
}

/// Model shapes for step timing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepConfig {
    pub n: usize,
    pub hidden: usize,
    pub layers: usize,
}

/// Verifies the network's gradients on the tiny configuration; timing
/// model steps is refused if this fails.
pub fn verify_model() -> Result<f64> {
    let cfg = tiny_config();
    let model = perturbed_model(cfg.clone(), 1)?;
    let case = GradCheckCase::random(&cfg, 2)?;
    let err = end_to_end_grad_check(&model, &case, None)?;
    if err > 1e-4 {
        return Err(Error::Numeric(format!("model gradient check failed before timing: {err:.3e}")));
    }
    Ok(err)
}

/// Times forward and forward+backward for one full-length sequence, with
/// and without a τ-sparse positional mask.
pub fn bench_model_step(configs: &[StepConfig], stride: usize, tau: f64, timing: Timing, seed: u64) -> Result<Vec<BenchResult>> {
    timing.validate()?;
    verify_model()?;
    let mut out = Vec::new();
    for sc in configs {
        let cfg = ModelConfig {
            max_len: sc.n,
            hidden: sc.hidden,
            ffn_hidden: 2 * sc.hidden,
            layers: sc.layers,
            vocab: 1000,
            dropout: 0.0,
            negatives: 128,
            ..ModelConfig::default()
        };
        let model = perturbed_model(cfg.clone(), seed)?;
        let case = GradCheckCase::random(&cfg, seed)?;
        let mut items = case.items.clone();
        let mut targets = case.targets.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (i, t) in items.iter_mut().zip(targets.iter_mut()) {
            if *i == PAD {
                *i = rng.random_range(1..cfg.vocab);
            }
            if *t == PAD {
                *t = rng.random_range(1..cfg.vocab);
            }
        }
        let negatives: Vec<Vec<usize>> = targets
            .iter()
            .map(|&t| (0..cfg.negatives).map(|k| 1 + (t + k) % (cfg.vocab - 1)).filter(|&v| v != t).collect())
            .collect();
        let masks: Vec<SparseMask> = model
            .positional_maps()?
            .iter()
            .map(|w| generate_sparse_mask(w, stride, tau))
            .collect::<Result<_>>()?;
        let reduction = flops_count(sc.n, stride, &masks[0])?.reduction_percent;
        let input = ModelInput {
            items: &items,
            temporal: &case.temporal,
        };
        for (label, m, fr) in [("dense", None, None), ("sparse", Some(&masks[..]), Some(reduction))] {
            let (fm, fp) = measure(timing, || {
                black_box(model.forward(input, m).expect("verified forward"));
            });
            let mut grads = model.params.zeros_like();
            let (tm, tp) = measure(timing, || {
                black_box(
                    model
                        .sequence_loss::<ThreadRng>(input, m, &targets, &negatives, None, &mut grads)
                        .expect("verified backward"),
                );
            });
            for (case, median_ms, p90_ms) in [("forward", fm, fp), ("forward_backward", tm, tp)] {
                out.push(BenchResult {
                    case: format!("{case}_{label}_d{}_l{}", sc.hidden, sc.layers),
                    n: sc.n,
                    batch: 1,
                    repetitions: timing.repetitions,
                    warmups: timing.warmups,
                    median_ms,
                    p90_ms,
                    flops_reduction: fr,
                });
            }
        }
    }
    Ok(out)
}

/// Reshapes bench rows into plot series, keyed by file name:
/// `<case>_batch<B>.csv` (`n,median_ms,p90_ms`) for sequence-length curves,
/// `<case>_n<N>.csv` (`batch,median_ms,p90_ms`) for batch curves and
/// `flops_reduction.csv` for every row carrying a reduction. Series with a
/// single point are skipped.
pub fn plot_series(rows: &[BenchResult]) -> BTreeMap<String, String> {
    let mut by_len: BTreeMap<(String, usize), Vec<&BenchResult>> = BTreeMap::new();
    let mut by_batch: BTreeMap<(String, usize), Vec<&BenchResult>> = BTreeMap::new();
    for r in rows {
        by_len.entry((r.case.clone(), r.batch)).or_default().push(r);
        by_batch.entry((r.case.clone(), r.n)).or_default().push(r);
    }
    let mut files = BTreeMap::new();
    for ((case, batch), mut pts) in by_len {
        if pts.len() < 2 {
            continue;
        }
        pts.sort_by_key(|r| r.n);
        let mut s = String::from("n,median_ms,p90_ms\n");
        for r in pts {
            let _ = writeln!(s, "{},{:.6},{:.6}", r.n, r.median_ms, r.p90_ms);
        }
        files.insert(format!("{case}_batch{batch}.csv"), s);
    }
    for ((case, n), mut pts) in by_batch {
        if pts.len() < 2 {
            continue;
        }
        pts.sort_by_key(|r| r.batch);
        let mut s = String::from("batch,median_ms,p90_ms\n");
        for r in pts {
            let _ = writeln!(s, "{},{:.6},{:.6}", r.batch, r.median_ms, r.p90_ms);
        }
        files.insert(format!("{case}_n{n}.csv"), s);
    }
    let flops: Vec<&BenchResult> = rows.iter().filter(|r| r.flops_reduction.is_some()).collect();
    if !flops.is_empty() {
        let mut s = String::from("case,n,flops_reduction,median_ms\n");
        for r in flops {
            let _ = writeln!(
                s,
                "{},{},{:.4},{:.6}",
                r.case,
                r.n,
                r.flops_reduction.unwrap_or_default(),
                r.median_ms
            );
        }
        files.insert("flops_reduction.csv".to_string(), s);
    }
    files
}

/// Median latency of `case` at `(n, batch)`.
pub fn median_of(rows: &[BenchResult], case: &str, n: usize, batch: usize) -> Option<f64> {
    rows.iter()
        .find(|r| r.case == case && r.n == n && r.batch == batch)
        .map(|r| r.median_ms)
}
